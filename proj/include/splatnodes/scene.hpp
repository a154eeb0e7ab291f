#pragma once

// Synthetic ground-truth scenes: objects with known rigid motion, sampled
// Gaussian primitives, patch-level tokens/depths/priors, 2D tracklets, and
// front-to-back alpha compositing.

#include "splatnodes/camera.hpp"
#include "splatnodes/core.hpp"
#include "splatnodes/deform_graph.hpp"
#include "splatnodes/rigid_math.hpp"
#include "splatnodes/scene_config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace splatnodes {

struct TrackletPoint {
  Vec2 pixel = Vec2::Zero();
  double depth = 0.0;
  bool visible = false;
};

// 2D point track with depth samples; `anchor` is the tracked point in the
// object's canonical frame, `object` its ground-truth owner.
struct Tracklet {
  int object = -1;
  Vec3 anchor = Vec3::Zero();
  std::vector<TrackletPoint> points;
};

struct ObjectTrack {
  std::string name;
  MotionType motion = MotionType::Static;
  bool dynamic = false;
  Vec3 center = Vec3::Zero();
  Vec3 half_extent = Vec3::Ones();
  std::vector<SE3Pose> poses;  // world pose per frame
};

struct SceneBundle {
  int frame_count = 0;
  int patch_size = 16;
  uint64_t seed = 0;
  int token_dim = 32;
  std::vector<Camera> cameras;        // per frame
  std::vector<ObjectTrack> objects;
  std::vector<Primitive> primitives;  // canonical (frame 0) configuration
  std::vector<int> primitive_object;
  std::vector<PatchGrid> patches;     // per candidate keyframe
  std::vector<Tracklet> tracklets;
  Vec3 bbox_min = Vec3::Zero();
  Vec3 bbox_max = Vec3::Zero();

  double frame_time(int frame) const {
    return frame_count > 1 ? static_cast<double>(frame) / (frame_count - 1) : 0.0;
  }

  double bbox_diagonal() const { return (bbox_max - bbox_min).norm(); }

  const SE3Pose& gt_pose(int primitive, int frame) const {
    return objects[primitive_object[primitive]].poses[frame];
  }

  void validate() const {
    if (frame_count < 2) throw InvalidConfig("bundle needs >= 2 frames");
    if (static_cast<int>(cameras.size()) != frame_count)
      throw InvalidConfig("bundle camera count != frame count");
    for (const auto& obj : objects)
      if (static_cast<int>(obj.poses.size()) != frame_count)
        throw InvalidConfig("object pose track length != frame count");
    if (primitive_object.size() != primitives.size())
      throw InvalidConfig("primitive object labels incomplete");
    for (int idx : primitive_object)
      if (idx < 0 || idx >= static_cast<int>(objects.size()))
        throw InvalidConfig("primitive object label out of range");
    for (const auto& t : tracklets) {
      if (static_cast<int>(t.points.size()) != frame_count)
        throw InvalidConfig("tracklet length != frame count");
      for (const auto& p : t.points)
        if (p.visible && !(p.depth > 0.0))
          throw InvalidConfig("visible tracklet point with non-positive depth");
    }
  }
};

// Front-to-back alpha compositing: C = sum_i c_i a_i prod_{j<i} (1 - a_j).
struct AlphaSample {
  Vec3 color = Vec3::Zero();
  double alpha = 0.0;
};

inline Vec3 composite_alpha(std::span<const AlphaSample> ordered) {
  Vec3 color = Vec3::Zero();
  double transmittance = 1.0;
  for (const auto& s : ordered) {
    color += s.color * (s.alpha * transmittance);
    transmittance *= (1.0 - s.alpha);
  }
  return color;
}

namespace detail {

inline SE3Pose object_pose(const ObjectConfig& cfg, int frame) {
  const double f = static_cast<double>(frame);
  switch (cfg.motion) {
    case MotionType::Static:
      return SE3Pose::identity();
    case MotionType::Translation:
      return {UnitQuaternion::identity(), cfg.velocity * f};
    case MotionType::Rotation: {
      const Vec3 axis = cfg.axis.normalized();
      const UnitQuaternion r = UnitQuaternion::from_axis_angle(axis * cfg.rate * f);
      return {r, cfg.center - r.rotate(cfg.center)};
    }
    case MotionType::Screw: {
      const Vec3 axis = cfg.axis.normalized();
      const UnitQuaternion r = UnitQuaternion::from_axis_angle(axis * cfg.rate * f);
      return {r, cfg.center - r.rotate(cfg.center) + axis * (cfg.pitch * cfg.rate * f)};
    }
  }
  return SE3Pose::identity();
}

// Per-frame surface speed scale used to mimic motion-induced token drift.
inline double motion_magnitude(const ObjectConfig& cfg) {
  switch (cfg.motion) {
    case MotionType::Static: return 0.0;
    case MotionType::Translation: return cfg.velocity.norm();
    case MotionType::Rotation: return std::abs(cfg.rate) * cfg.half_extent.norm();
    case MotionType::Screw:
      return std::abs(cfg.rate) * cfg.half_extent.norm() +
             std::abs(cfg.pitch * cfg.rate);
  }
  return 0.0;
}

inline Eigen::VectorXd random_unit_vector(int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v[i] = n(rng);
  return v / v.norm();
}

}  // namespace detail

// Evenly spread candidate keyframe indices over [0, frames-1].
inline std::vector<int> candidate_keyframes(int frames, int count) {
  std::vector<int> out;
  out.reserve(count);
  for (int k = 0; k < count; ++k) {
    const int f = count > 1
                      ? static_cast<int>(std::lround(k * double(frames - 1) / (count - 1)))
                      : 0;
    if (out.empty() || out.back() != f) out.push_back(f);
  }
  return out;
}

// Deterministic synthetic scene. All sampling flows from `seed` in a fixed
// order, so identical (config, seed) pairs produce identical bundles.
inline SceneBundle gen_scene(const SceneConfig& cfg, uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  SceneBundle bundle;
  bundle.frame_count = cfg.frames;
  bundle.patch_size = cfg.patch_size;
  bundle.seed = seed;
  bundle.token_dim = cfg.token_dim;

  Camera cam;
  cam.fx = cfg.fx;
  cam.fy = cfg.fy;
  cam.cx = cfg.cx;
  cam.cy = cfg.cy;
  cam.width = cfg.width;
  cam.height = cfg.height;
  cam.rotation = Mat3::Identity();
  cam.translation = -cfg.camera_position;
  cam.validate();
  bundle.cameras.assign(cfg.frames, cam);

  // Object tracks and ground-truth poses.
  for (const auto& ocfg : cfg.objects) {
    ObjectTrack track;
    track.name = ocfg.name;
    track.motion = ocfg.motion;
    track.dynamic = ocfg.motion != MotionType::Static;
    track.center = ocfg.center;
    track.half_extent = ocfg.half_extent;
    for (int f = 0; f < cfg.frames; ++f)
      track.poses.push_back(detail::object_pose(ocfg, f));
    bundle.objects.push_back(std::move(track));
  }

  // Canonical primitives, uniform inside each object's box.
  for (size_t o = 0; o < cfg.objects.size(); ++o) {
    const auto& ocfg = cfg.objects[o];
    for (int i = 0; i < ocfg.primitive_count; ++i) {
      Primitive prim;
      for (int d = 0; d < 3; ++d)
        prim.center[d] =
            ocfg.center[d] + (2.0 * unit(rng) - 1.0) * ocfg.half_extent[d];
      const UnitQuaternion q(gauss(rng), gauss(rng), gauss(rng), gauss(rng));
      Vec3 eig;
      for (int d = 0; d < 3; ++d) eig[d] = 1e-4 + 8e-4 * unit(rng);
      const Mat3 r = q.matrix();
      prim.covariance = r * eig.asDiagonal() * r.transpose();
      prim.opacity = 0.3 + 0.6 * unit(rng);
      prim.color = Vec3(unit(rng), unit(rng), unit(rng));
      bundle.primitives.push_back(prim);
      bundle.primitive_object.push_back(static_cast<int>(o));
    }
  }

  // Scene bounds: primitive centers swept over all frames.
  bundle.bbox_min = Vec3::Constant(std::numeric_limits<double>::max());
  bundle.bbox_max = Vec3::Constant(std::numeric_limits<double>::lowest());
  for (size_t p = 0; p < bundle.primitives.size(); ++p) {
    for (int f = 0; f < cfg.frames; ++f) {
      const Vec3 x = bundle.gt_pose(static_cast<int>(p), f)
                         .apply(bundle.primitives[p].center);
      bundle.bbox_min = bundle.bbox_min.cwiseMin(x);
      bundle.bbox_max = bundle.bbox_max.cwiseMax(x);
    }
  }

  // Per-object base tokens and token noise levels.
  std::vector<Eigen::VectorXd> base_tokens;
  std::vector<double> token_sigma;
  for (const auto& ocfg : cfg.objects) {
    base_tokens.push_back(detail::random_unit_vector(cfg.token_dim, rng));
    token_sigma.push_back(cfg.token_noise_static +
                          cfg.token_noise_motion * detail::motion_magnitude(ocfg));
  }

  // Patch observations at the candidate keyframes. Depth and ownership come
  // from the front-most projected primitive center inside each patch.
  const int cols = cfg.width / cfg.patch_size;
  const int rows = cfg.height / cfg.patch_size;
  for (int frame : candidate_keyframes(cfg.frames, cfg.candidate_keyframes)) {
    PatchGrid grid;
    grid.frame = frame;
    grid.cols = cols;
    grid.rows = rows;
    grid.patch_size = cfg.patch_size;
    const int count = cols * rows;
    grid.tokens.assign(count, Eigen::VectorXd::Zero(cfg.token_dim));
    grid.depths.assign(count, 0.0);
    grid.priors.assign(count, 0.0);
    std::vector<int> owner(count, -1);

    for (size_t p = 0; p < bundle.primitives.size(); ++p) {
      const Vec3 x =
          bundle.gt_pose(static_cast<int>(p), frame).apply(bundle.primitives[p].center);
      Projection proj;
      try {
        proj = project(x, cam);
      } catch (const BehindCamera&) {
        continue;
      }
      if (!in_image(proj.pixel, cam)) continue;
      const int c = static_cast<int>(proj.pixel.x()) / cfg.patch_size;
      const int r = static_cast<int>(proj.pixel.y()) / cfg.patch_size;
      if (c >= cols || r >= rows) continue;
      const int idx = r * cols + c;
      if (owner[idx] < 0 || proj.depth < grid.depths[idx]) {
        grid.depths[idx] = proj.depth;
        owner[idx] = bundle.primitive_object[p];
      }
    }

    for (int idx = 0; idx < count; ++idx) {
      if (owner[idx] < 0) continue;  // leave depth 0: invalid patch
      const int obj = owner[idx];
      Eigen::VectorXd token = base_tokens[obj];
      for (int d = 0; d < cfg.token_dim; ++d)
        token[d] += token_sigma[obj] * gauss(rng);
      grid.tokens[idx] = token / token.norm();
      const double base_prior =
          bundle.objects[obj].dynamic ? cfg.prior_dynamic : cfg.prior_static;
      grid.priors[idx] = std::clamp(base_prior + cfg.prior_noise * gauss(rng), 0.0, 1.0);
      if (cfg.noise_depth > 0.0)
        grid.depths[idx] = std::max(1e-6, grid.depths[idx] + cfg.noise_depth * gauss(rng));
    }
    bundle.patches.push_back(std::move(grid));
  }

  // Tracklets: anchors are sampled primitives (canonical centers) tracked
  // through the ground-truth motion and projected per frame.
  for (size_t o = 0; o < cfg.objects.size(); ++o) {
    std::vector<int> owned;
    for (size_t p = 0; p < bundle.primitives.size(); ++p)
      if (bundle.primitive_object[p] == static_cast<int>(o))
        owned.push_back(static_cast<int>(p));
    const int want = std::min<int>(cfg.tracklets_per_object,
                                   static_cast<int>(owned.size()));
    for (int k = 0; k < want; ++k) {
      // Deterministic stride through the owned list, jittered start.
      const int pick = owned[(k * owned.size()) / std::max(1, want)];
      Tracklet t;
      t.object = static_cast<int>(o);
      t.anchor = bundle.primitives[pick].center;
      for (int f = 0; f < cfg.frames; ++f) {
        TrackletPoint pt;
        const Vec3 x = bundle.objects[o].poses[f].apply(t.anchor);
        try {
          const Projection proj = project(x, cam);
          if (in_image(proj.pixel, cam)) {
            pt.visible = true;
            pt.pixel = proj.pixel;
            pt.depth = proj.depth;
            if (cfg.noise_tracklet_px > 0.0) {
              pt.pixel.x() += cfg.noise_tracklet_px * gauss(rng);
              pt.pixel.y() += cfg.noise_tracklet_px * gauss(rng);
            }
            if (cfg.noise_depth > 0.0)
              pt.depth = std::max(1e-6, pt.depth + cfg.noise_depth * gauss(rng));
          }
        } catch (const BehindCamera&) {
          // stays invisible
        }
        t.points.push_back(pt);
      }
      bundle.tracklets.push_back(std::move(t));
    }
  }

  bundle.validate();
  return bundle;
}

}  // namespace splatnodes
