#pragma once

// Motion-adaptive node initialization: patch-to-node back-projection,
// token similarity, dynamic tendency scoring, adaptive compression ratios,
// and iterative voxelized bipartite soft matching.

#include "splatnodes/camera.hpp"
#include "splatnodes/core.hpp"
#include "splatnodes/deform_graph.hpp"
#include "splatnodes/spline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <tuple>
#include <vector>

namespace splatnodes {

// Back-projected patch carrying its semantic token and foreground prior.
struct CandidateNode {
  Vec3 position = Vec3::Zero();
  Eigen::VectorXd token;
  double prior = 0.0;       // foreground prior in [0, 1]
  int source_frame = 0;
  long merged_count = 1;
};

struct CompressionParams {
  double v_init = 0.05;     // initial voxel edge, meters
  double delta_v = 0.05;    // voxel enlargement step
  double r_min = 0.1;       // merge fraction for fully dynamic clusters
  double r_max = 0.9;       // merge fraction for fully static clusters
  double eta = 0.5;         // foreground penalty in the joint similarity
  double alpha_dyn = 2.0;   // prior gain in the tendency score
  double beta_dyn = 2.0;    // similarity gain in the tendency score
  int target_count = 1;
  int max_iterations = 32;

  void validate() const {
    if (!(v_init > 0.0) || !(delta_v >= 0.0))
      throw std::invalid_argument("voxel sizes must be positive");
    if (!(0.0 <= r_min && r_min <= r_max && r_max <= 1.0))
      throw std::invalid_argument("need 0 <= r_min <= r_max <= 1");
    if (eta < 0.0 || alpha_dyn < 0.0 || beta_dyn < 0.0)
      throw std::invalid_argument("eta/alpha/beta must be nonnegative");
    if (target_count < 1) throw std::invalid_argument("target_count must be >= 1");
    if (max_iterations < 1) throw std::invalid_argument("max_iterations must be >= 1");
  }
};

// One candidate per valid patch per keyframe, positioned by back-projecting
// the patch center. Patches with non-positive depth are skipped.
inline std::vector<CandidateNode> patch_to_nodes(std::span<const PatchGrid> frames,
                                                 std::span<const Camera> cameras) {
  std::vector<CandidateNode> out;
  for (const auto& grid : frames) {
    grid.validate();
    const Camera& cam = cameras[grid.frame];
    for (int p = 0; p < grid.patch_count(); ++p) {
      if (!(grid.depths[p] > 0.0)) continue;
      CandidateNode c;
      c.position = backproject(grid.patch_center(p), grid.depths[p], cam);
      c.token = grid.tokens[p];
      c.prior = grid.priors[p];
      c.source_frame = grid.frame;
      out.push_back(std::move(c));
    }
  }
  if (out.empty())
    throw EmptyCandidates("patch_to_nodes: no patch had a valid depth");
  return out;
}

// Joint similarity: cos(z_a, z_b) - eta * mean(prior_a, prior_b).
inline double token_similarity(const CandidateNode& a, const CandidateNode& b,
                               double eta) {
  return a.token.dot(b.token) - eta * 0.5 * (a.prior + b.prior);
}

struct MatchedPair {
  int a = -1;
  int b = -1;
  double similarity = 0.0;
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Dynamic tendency score: sigmoid(alpha * mean prior - beta * mean matched
// similarity). An empty match set counts as mean similarity 1 (fully static
// presumption).
inline double dyn_score(std::span<const CandidateNode> cluster,
                        std::span<const MatchedPair> matched, double alpha_dyn,
                        double beta_dyn) {
  if (cluster.empty()) throw std::invalid_argument("dyn_score: empty cluster");
  double mean_prior = 0.0;
  for (const auto& c : cluster) mean_prior += c.prior;
  mean_prior /= static_cast<double>(cluster.size());

  double mean_sim = 1.0;
  if (!matched.empty()) {
    mean_sim = 0.0;
    for (const auto& m : matched) mean_sim += m.similarity;
    mean_sim /= static_cast<double>(matched.size());
  }
  return sigmoid(alpha_dyn * mean_prior - beta_dyn * mean_sim);
}

// r%(C) = r_min + (1 - p_dyn) * (r_max - r_min).
inline double adaptive_ratio(double p_dyn, double r_min, double r_max) {
  if (r_min > r_max) throw std::invalid_argument("adaptive_ratio: r_min > r_max");
  return r_min + (1.0 - p_dyn) * (r_max - r_min);
}

namespace detail {

struct VoxelKey {
  int64_t x = 0, y = 0, z = 0;
  auto operator<=>(const VoxelKey&) const = default;
};

}  // namespace detail

// One bipartite soft-matching pass over a voxel grid anchored at the
// candidates' minimum corner. Within each voxel, candidates sorted by
// position split into A (even local index) and B (odd); each A-node
// connects to its most similar B-node, and the top round(r% * pairs)
// matches merge into their B representative (merged_count-weighted mean
// position/token, token renormalized, prior maxed, counts summed).
inline std::vector<CandidateNode> compress_step(std::span<const CandidateNode> candidates,
                                                double voxel_size,
                                                const CompressionParams& params) {
  if (!(voxel_size > 0.0))
    throw std::invalid_argument("compress_step: voxel_size must be > 0");
  if (candidates.empty()) return {};

  Vec3 corner = candidates.front().position;
  for (const auto& c : candidates) corner = corner.cwiseMin(c.position);

  // std::map keeps voxel iteration order deterministic.
  std::map<detail::VoxelKey, std::vector<int>> voxels;
  for (size_t i = 0; i < candidates.size(); ++i) {
    const Vec3 rel = (candidates[i].position - corner) / voxel_size;
    detail::VoxelKey key{static_cast<int64_t>(std::floor(rel.x())),
                         static_cast<int64_t>(std::floor(rel.y())),
                         static_cast<int64_t>(std::floor(rel.z()))};
    voxels[key].push_back(static_cast<int>(i));
  }

  std::vector<CandidateNode> out;
  out.reserve(candidates.size());
  for (auto& [key, members] : voxels) {
    if (members.size() == 1) {
      out.push_back(candidates[members[0]]);
      continue;
    }
    std::sort(members.begin(), members.end(), [&](int a, int b) {
      const Vec3& pa = candidates[a].position;
      const Vec3& pb = candidates[b].position;
      if (pa.x() != pb.x()) return pa.x() < pb.x();
      if (pa.y() != pb.y()) return pa.y() < pb.y();
      if (pa.z() != pb.z()) return pa.z() < pb.z();
      return a < b;
    });

    std::vector<int> set_a, set_b;
    for (size_t i = 0; i < members.size(); ++i)
      (i % 2 == 0 ? set_a : set_b).push_back(members[i]);

    std::vector<MatchedPair> pairs;
    pairs.reserve(set_a.size());
    for (int a : set_a) {
      int best = -1;
      double best_sim = 0.0;
      for (int b : set_b) {
        const double sim = token_similarity(candidates[a], candidates[b], params.eta);
        if (best < 0 || sim > best_sim) {
          best = b;
          best_sim = sim;
        }
      }
      if (best >= 0) pairs.push_back({a, best, best_sim});
    }

    std::vector<CandidateNode> cluster;
    cluster.reserve(members.size());
    for (int idx : members) cluster.push_back(candidates[idx]);
    const double p_dyn =
        dyn_score(cluster, pairs, params.alpha_dyn, params.beta_dyn);
    const double ratio = adaptive_ratio(p_dyn, params.r_min, params.r_max);
    const long merge_count = std::clamp<long>(
        std::lround(ratio * static_cast<double>(pairs.size())), 0,
        static_cast<long>(pairs.size()));

    std::stable_sort(pairs.begin(), pairs.end(),
                     [](const MatchedPair& x, const MatchedPair& y) {
                       return x.similarity > y.similarity;
                     });

    // Fold each merged A-node into its B representative. B-nodes are looked
    // up by original index so repeated merges into one B accumulate.
    std::map<int, CandidateNode> merged_b;
    std::vector<bool> consumed(candidates.size(), false);
    for (long m = 0; m < merge_count; ++m) {
      const MatchedPair& pair = pairs[m];
      CandidateNode& rep = merged_b.try_emplace(pair.b, candidates[pair.b]).first->second;
      const CandidateNode& src = candidates[pair.a];
      const double wa = static_cast<double>(src.merged_count);
      const double wb = static_cast<double>(rep.merged_count);
      rep.position = (wb * rep.position + wa * src.position) / (wa + wb);
      Eigen::VectorXd token = wb * rep.token + wa * src.token;
      const double norm = token.norm();
      rep.token = norm > 1e-12 ? Eigen::VectorXd(token / norm) : rep.token;
      rep.prior = std::max(rep.prior, src.prior);
      rep.merged_count += src.merged_count;
      consumed[pair.a] = true;
    }

    for (int idx : members) {
      if (consumed[idx]) continue;
      auto it = merged_b.find(idx);
      out.push_back(it != merged_b.end() ? it->second : candidates[idx]);
    }
  }
  return out;
}

struct CompressResult {
  std::vector<Node> nodes;
  std::vector<CandidateNode> survivors;
  int iterations = 0;
  bool reached_target = false;  // false signals TargetNotReached
  double final_voxel_size = 0.0;
};

// Repeats compress_step with voxel size v_init + k * delta_v until the
// candidate count drops to target_count or max_iterations passes run.
// Survivors become Nodes with the third-neighbor radius rule and a static
// trajectory pinned at their position.
inline CompressResult compress(std::vector<CandidateNode> candidates,
                               const CompressionParams& params) {
  params.validate();
  CompressResult result;
  double voxel = params.v_init;
  while (static_cast<int>(candidates.size()) > params.target_count &&
         result.iterations < params.max_iterations) {
    candidates = compress_step(candidates, voxel, params);
    ++result.iterations;
    voxel = params.v_init + result.iterations * params.delta_v;
  }
  result.reached_target =
      static_cast<int>(candidates.size()) <= params.target_count;
  result.final_voxel_size =
      params.v_init + std::max(0, result.iterations - 1) * params.delta_v;

  std::vector<Vec3> centers;
  centers.reserve(candidates.size());
  for (const auto& c : candidates) centers.push_back(c.position);
  const double fallback =
      result.final_voxel_size > 0.0 ? result.final_voxel_size : params.v_init;
  const auto radii = node_radii(centers, fallback);

  result.nodes.reserve(candidates.size());
  for (size_t i = 0; i < candidates.size(); ++i)
    result.nodes.emplace_back(centers[i], radii[i],
                              SplineTrajectory::constant(centers[i]));
  result.survivors = std::move(candidates);
  return result;
}

}  // namespace splatnodes
