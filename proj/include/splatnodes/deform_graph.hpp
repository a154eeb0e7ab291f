#pragma once

// Sparse deformation graph: control nodes with RBF influence radii,
// Gaussian-to-node binding, propagation of node motion to primitives via
// dual quaternion blending, and the pairwise-distance ARAP energy.

#include "splatnodes/core.hpp"
#include "splatnodes/rigid_math.hpp"
#include "splatnodes/spline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

namespace splatnodes {

// Control node: canonical center, RBF radius, and an SE(3) trajectory
// split into a position spline and per-keyframe rotations.
struct Node {
  Vec3 center = Vec3::Zero();
  double radius = 1.0;
  SplineTrajectory trajectory = SplineTrajectory::constant(Vec3::Zero());

  Node() = default;
  Node(const Vec3& c, double rho, SplineTrajectory traj)
      : center(c), radius(rho), trajectory(std::move(traj)) {
    if (!(radius > 0.0)) throw std::invalid_argument("node radius must be > 0");
  }
};

// Gaussian primitive, canonical space. Covariance must be symmetric
// positive definite; color is degree-0 spherical harmonics (plain RGB).
struct Primitive {
  Vec3 center = Vec3::Zero();
  Mat3 covariance = Mat3::Identity();
  double opacity = 0.5;
  Vec3 color = Vec3::Zero();

  void validate() const {
    if (!(opacity > 0.0 && opacity < 1.0))
      throw std::invalid_argument("primitive opacity must lie strictly in (0, 1)");
    if ((covariance - covariance.transpose()).cwiseAbs().maxCoeff() > 1e-12)
      throw std::invalid_argument("primitive covariance must be symmetric");
    Eigen::SelfAdjointEigenSolver<Mat3> eig(covariance);
    if (eig.eigenvalues().minCoeff() <= 1e-12)
      throw std::invalid_argument("primitive covariance must be positive definite");
  }
};

struct BindingEntry {
  int node = -1;
  double weight = 0.0;
};

// One row of K (node, weight) pairs per primitive; weights sum to 1.
class BindingTable {
 public:
  void add_row(std::vector<BindingEntry> row) {
    if (row.empty()) throw std::invalid_argument("binding row must be nonempty");
    double sum = 0.0;
    for (size_t i = 0; i < row.size(); ++i) {
      if (row[i].weight < 0.0) throw std::invalid_argument("binding weight < 0");
      for (size_t j = i + 1; j < row.size(); ++j)
        if (row[i].node == row[j].node)
          throw std::invalid_argument("duplicate node index in binding row");
      sum += row[i].weight;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("binding weights must sum to 1");
    rows_.push_back(std::move(row));
  }

  size_t size() const { return rows_.size(); }
  const std::vector<BindingEntry>& row(size_t i) const { return rows_.at(i); }

 private:
  std::vector<std::vector<BindingEntry>> rows_;
};

// Indices of the k nearest node centers by Euclidean distance; ties break
// toward the lower index.
inline std::vector<int> knn_nodes(const Vec3& point, std::span<const Node> nodes, int k) {
  if (k <= 0) throw std::invalid_argument("knn_nodes: k must be positive");
  if (static_cast<int>(nodes.size()) < k)
    throw InsufficientNodes("knn_nodes: fewer nodes than requested neighbors");
  std::vector<int> order(nodes.size());
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
    const double da = (nodes[a].center - point).squaredNorm();
    const double db = (nodes[b].center - point).squaredNorm();
    if (da != db) return da < db;
    return a < b;
  });
  order.resize(k);
  return order;
}

// Normalized RBF binding weights over a node neighborhood:
// w_i ~ exp(-|x - c_i|^2 / (2 rho_i^2)). If every kernel underflows, the
// nearest neighbor receives weight 1.
inline std::vector<double> bind_weights(const Vec3& point, std::span<const Node> nodes,
                                        std::span<const int> neighbor_indices) {
  if (neighbor_indices.empty())
    throw std::invalid_argument("bind_weights: empty neighborhood");
  std::vector<double> w(neighbor_indices.size());
  double sum = 0.0;
  for (size_t i = 0; i < neighbor_indices.size(); ++i) {
    const Node& n = nodes[neighbor_indices[i]];
    const double d2 = (point - n.center).squaredNorm();
    w[i] = std::exp(-d2 / (2.0 * n.radius * n.radius));
    sum += w[i];
  }
  if (sum <= 0.0) {
    // All kernels underflowed: fall back to the nearest node.
    size_t best = 0;
    double best_d2 = (point - nodes[neighbor_indices[0]].center).squaredNorm();
    for (size_t i = 1; i < neighbor_indices.size(); ++i) {
      const double d2 = (point - nodes[neighbor_indices[i]].center).squaredNorm();
      if (d2 < best_d2) {
        best_d2 = d2;
        best = i;
      }
    }
    std::fill(w.begin(), w.end(), 0.0);
    w[best] = 1.0;
    return w;
  }
  for (double& v : w) v /= sum;
  return w;
}

// Node pose at time t. The rotation acts about the node's canonical center:
// the translation is chosen so that center maps to the trajectory position.
inline SE3Pose node_se3_at(const Node& node, double t) {
  const UnitQuaternion r = node.trajectory.rotation_at(t);
  const Vec3 xi = node.trajectory.position_at(t);
  return {r, xi - r.rotate(node.center)};
}

// Blends the bound nodes' poses with DQB and applies the result:
// mu -> T mu, Sigma -> R Sigma R^T; opacity and color pass through.
inline Primitive deform_primitive(const Primitive& prim, std::span<const Node> nodes,
                                  std::span<const BindingEntry> binding, double t) {
  std::vector<BlendEntry> entries;
  entries.reserve(binding.size());
  for (const auto& b : binding)
    entries.push_back({b.weight, se3_to_dq(node_se3_at(nodes[b.node], t))});
  const SE3Pose pose = dqb_blend(entries);

  Primitive out = prim;
  out.center = pose.apply(prim.center);
  const Mat3 r = pose.rotation.matrix();
  out.covariance = r * prim.covariance * r.transpose();
  return out;
}

// Gradient container: one Vec3 per node per keyframe position.
using KeyframeGrad = std::vector<std::vector<Vec3>>;

inline KeyframeGrad zero_gradient(std::span<const Node> nodes) {
  KeyframeGrad g(nodes.size());
  for (size_t i = 0; i < nodes.size(); ++i)
    g[i].assign(nodes[i].trajectory.keyframe_count(), Vec3::Zero());
  return g;
}

struct ArapResult {
  double energy = 0.0;
  KeyframeGrad gradient;
};

// Pairwise distance-preservation energy between two times:
//   E = sum over neighbor pairs (|xi_i(ta) - xi_j(ta)| - |xi_i(tb) - xi_j(tb)|)^2
// with each unordered pair counted once. The gradient flows to every
// keyframe position through the Hermite position weights; coincident nodes
// contribute zero gradient on the degenerate side.
inline ArapResult arap_energy(std::span<const Node> nodes,
                              const std::vector<std::vector<int>>& neighbor_graph,
                              double t_a, double t_b) {
  if (neighbor_graph.size() != nodes.size())
    throw std::invalid_argument("arap_energy: neighbor graph size mismatch");

  ArapResult out;
  out.gradient = zero_gradient(nodes);

  std::vector<Vec3> pos_a(nodes.size()), pos_b(nodes.size());
  std::vector<std::vector<double>> w_a(nodes.size()), w_b(nodes.size());
  for (size_t i = 0; i < nodes.size(); ++i) {
    pos_a[i] = nodes[i].trajectory.position_at(t_a);
    pos_b[i] = nodes[i].trajectory.position_at(t_b);
    w_a[i] = position_weights(nodes[i].trajectory.times(), t_a);
    w_b[i] = position_weights(nodes[i].trajectory.times(), t_b);
  }

  auto scatter = [&](size_t node, std::span<const double> w, const Vec3& g) {
    for (size_t k = 0; k < w.size(); ++k)
      if (w[k] != 0.0) out.gradient[node][k] += w[k] * g;
  };

  for (size_t i = 0; i < nodes.size(); ++i) {
    for (int j : neighbor_graph[i]) {
      if (j < 0 || static_cast<size_t>(j) >= nodes.size())
        throw std::invalid_argument("arap_energy: neighbor index out of range");
      if (static_cast<size_t>(j) <= i) continue;  // count each pair once

      const Vec3 d_a = pos_a[i] - pos_a[j];
      const Vec3 d_b = pos_b[i] - pos_b[j];
      const double len_a = d_a.norm();
      const double len_b = d_b.norm();
      const double r = len_a - len_b;
      out.energy += r * r;

      const Vec3 u_a = len_a > 1e-12 ? Vec3(d_a / len_a) : Vec3::Zero();
      const Vec3 u_b = len_b > 1e-12 ? Vec3(d_b / len_b) : Vec3::Zero();
      scatter(i, w_a[i], 2.0 * r * u_a);
      scatter(j, w_a[j], -2.0 * r * u_a);
      scatter(i, w_b[i], -2.0 * r * u_b);
      scatter(j, w_b[j], 2.0 * r * u_b);
    }
  }
  return out;
}

// Symmetric k-nearest-neighbor graph over node centers. Edges longer than
// `max_edge` are dropped so that well-separated regions stay decoupled;
// by default the cutoff is three times the median nearest-neighbor
// distance. Isolated nodes simply contribute no pairwise terms.
inline std::vector<std::vector<int>> build_node_graph(std::span<const Node> nodes, int k,
                                                      double max_edge = -1.0) {
  const int kk = std::min<int>(k, static_cast<int>(nodes.size()) - 1);
  std::vector<std::vector<int>> graph(nodes.size());
  if (kk <= 0) return graph;

  if (max_edge <= 0.0) {
    std::vector<double> nn_dist(nodes.size());
    for (size_t i = 0; i < nodes.size(); ++i) {
      const auto nn = knn_nodes(nodes[i].center, nodes, 2);
      const int other = nn[0] == static_cast<int>(i) ? nn[1] : nn[0];
      nn_dist[i] = (nodes[other].center - nodes[i].center).norm();
    }
    std::nth_element(nn_dist.begin(), nn_dist.begin() + nn_dist.size() / 2,
                     nn_dist.end());
    max_edge = 3.0 * nn_dist[nn_dist.size() / 2];
  }

  for (size_t i = 0; i < nodes.size(); ++i) {
    auto nn = knn_nodes(nodes[i].center, nodes, kk + 1);
    for (int j : nn) {
      if (j == static_cast<int>(i)) continue;
      if (static_cast<int>(graph[i].size()) == kk) break;
      if ((nodes[j].center - nodes[i].center).norm() <= max_edge)
        graph[i].push_back(j);
    }
  }
  for (size_t i = 0; i < nodes.size(); ++i)
    for (int j : graph[i])
      if (std::find(graph[j].begin(), graph[j].end(), static_cast<int>(i)) ==
          graph[j].end())
        graph[j].push_back(static_cast<int>(i));
  for (auto& adj : graph) std::sort(adj.begin(), adj.end());
  return graph;
}

// RBF radius rule: distance to the 3rd-nearest other center (or the
// farthest available when fewer exist); `fallback` covers a lone center.
inline std::vector<double> node_radii(std::span<const Vec3> centers, double fallback) {
  std::vector<double> radii(centers.size(), fallback);
  if (centers.size() < 2) return radii;
  const size_t want = std::min<size_t>(3, centers.size() - 1);
  std::vector<double> d2(centers.size());
  for (size_t i = 0; i < centers.size(); ++i) {
    d2.clear();
    for (size_t j = 0; j < centers.size(); ++j)
      if (j != i) d2.push_back((centers[j] - centers[i]).squaredNorm());
    std::nth_element(d2.begin(), d2.begin() + (want - 1), d2.end());
    const double r = std::sqrt(d2[want - 1]);
    radii[i] = r > 1e-12 ? r : fallback;
  }
  return radii;
}

// K-nearest binding with RBF weights for every primitive.
inline BindingTable build_binding(std::span<const Primitive> primitives,
                                  std::span<const Node> nodes, int k) {
  BindingTable table;
  for (const auto& prim : primitives) {
    const auto neighbors = knn_nodes(prim.center, nodes, k);
    const auto weights = bind_weights(prim.center, nodes, neighbors);
    std::vector<BindingEntry> row(neighbors.size());
    for (size_t i = 0; i < neighbors.size(); ++i)
      row[i] = {neighbors[i], weights[i]};
    table.add_row(std::move(row));
  }
  return table;
}

}  // namespace splatnodes
