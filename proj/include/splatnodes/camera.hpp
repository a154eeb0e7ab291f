#pragma once

// Pinhole camera model with world-to-camera extrinsics, plus the
// patch-level image observations (token, depth, foreground prior per
// patch center) consumed by node initialization.

#include "splatnodes/core.hpp"

#include <cmath>
#include <vector>

namespace splatnodes {

// x_cam = R x_world + T; pixels via (fx x/z + cx, fy y/z + cy).
struct Camera {
  double fx = 100.0;
  double fy = 100.0;
  double cx = 64.0;
  double cy = 64.0;
  int width = 128;
  int height = 128;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  void validate() const {
    if (!(fx > 0.0 && fy > 0.0))
      throw std::invalid_argument("camera focal lengths must be positive");
    if ((rotation * rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() >
            1e-9 ||
        std::abs(rotation.determinant() - 1.0) > 1e-9)
      throw std::invalid_argument("camera rotation must be orthonormal, det +1");
  }
};

// x = R^T pi^-1(u, d) - R^T T, with pi^-1(u, d) = d ((u-cx)/fx, (v-cy)/fy, 1).
inline Vec3 backproject(const Vec2& pixel, double depth, const Camera& cam) {
  if (!(depth > 0.0)) throw NonPositiveDepth("backproject: depth must be > 0");
  const Vec3 ray((pixel.x() - cam.cx) / cam.fx, (pixel.y() - cam.cy) / cam.fy, 1.0);
  return cam.rotation.transpose() * (depth * ray) -
         cam.rotation.transpose() * cam.translation;
}

struct Projection {
  Vec2 pixel = Vec2::Zero();
  double depth = 0.0;
};

inline Projection project(const Vec3& x, const Camera& cam) {
  const Vec3 pc = cam.rotation * x + cam.translation;
  if (pc.z() <= 1e-9) throw BehindCamera("project: point at or behind the camera");
  return {{cam.fx * pc.x() / pc.z() + cam.cx, cam.fy * pc.y() / pc.z() + cam.cy},
          pc.z()};
}

inline bool in_image(const Vec2& pixel, const Camera& cam) {
  return pixel.x() >= 0.0 && pixel.x() < cam.width && pixel.y() >= 0.0 &&
         pixel.y() < cam.height;
}

// Per-frame patch observations on a fixed grid. Index (row, col) maps to
// row * cols + col; the patch center pixel is ((col+0.5), (row+0.5)) *
// patch_size. depth <= 0 marks an invalid patch.
struct PatchGrid {
  int frame = 0;
  int cols = 0;
  int rows = 0;
  int patch_size = 16;
  std::vector<Eigen::VectorXd> tokens;
  std::vector<double> depths;
  std::vector<double> priors;

  Vec2 patch_center(int index) const {
    const int r = index / cols;
    const int c = index % cols;
    return {(c + 0.5) * patch_size, (r + 0.5) * patch_size};
  }

  int patch_count() const { return cols * rows; }

  void validate() const {
    const size_t n = static_cast<size_t>(patch_count());
    if (tokens.size() != n || depths.size() != n || priors.size() != n)
      throw std::invalid_argument("patch grid arrays must match cols*rows");
  }
};

}  // namespace splatnodes
