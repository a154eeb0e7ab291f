#pragma once

// Pipeline glue between the modules: the node-set aggregate written to node
// files, tracklet-to-node anchoring, trajectory fitting from back-projected
// tracklets, and ground-truth evaluation metrics.

#include "splatnodes/camera.hpp"
#include "splatnodes/core.hpp"
#include "splatnodes/deform_graph.hpp"
#include "splatnodes/node_init.hpp"
#include "splatnodes/scene.hpp"
#include "splatnodes/spline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace splatnodes {

// Node set plus the per-node metadata the pipeline carries between stages.
// All trajectories share one keyframe time grid.
struct NodeSet {
  std::vector<double> keyframe_times = {0.0, 1.0};
  std::vector<Node> nodes;
  std::vector<int> source_frame;   // keyframe the node was back-projected from
  std::vector<long> merged_count;  // candidates folded into the node

  size_t size() const { return nodes.size(); }

  void validate() const {
    if (nodes.size() != source_frame.size() || nodes.size() != merged_count.size())
      throw InvalidConfig("node set metadata arrays out of sync");
    for (const auto& n : nodes)
      if (n.trajectory.times() != keyframe_times)
        throw InvalidConfig("node trajectory keyframes differ from the shared grid");
  }

  static NodeSet from_compression(const CompressResult& result) {
    NodeSet set;
    set.nodes = result.nodes;
    for (const auto& c : result.survivors) {
      set.source_frame.push_back(c.source_frame);
      set.merged_count.push_back(c.merged_count);
    }
    if (!set.nodes.empty()) set.keyframe_times = set.nodes.front().trajectory.times();
    return set;
  }
};

// Fraction of the scene bounding-box diagonal within which a node may claim
// a tracklet observed near it at its source frame.
inline constexpr double kDefaultAnchorFraction = 0.12;

struct AnchorAssignment {
  std::vector<int> tracklet_for_node;  // -1: none in range
  std::vector<int> node_for_tracklet;  // -1: unclaimed
};

// Back-projected world positions of one tracklet (invalid where unseen).
inline std::vector<std::optional<Vec3>> tracklet_world_points(
    const Tracklet& tracklet, const std::vector<Camera>& cameras) {
  std::vector<std::optional<Vec3>> out(tracklet.points.size());
  for (size_t f = 0; f < tracklet.points.size(); ++f) {
    const TrackletPoint& p = tracklet.points[f];
    if (p.visible) out[f] = backproject(p.pixel, p.depth, cameras[f]);
  }
  return out;
}

// Each node claims the tracklet nearest to its center at its source frame
// (within `anchor_radius`); each tracklet then anchors to the nearest node
// among its claimants. Tracklets that initialized no node stay unanchored
// so they cannot drag unrelated trajectories during refinement.
inline AnchorAssignment assign_tracklets(const SceneBundle& bundle,
                                         const NodeSet& set, double anchor_radius) {
  AnchorAssignment out;
  out.tracklet_for_node.assign(set.size(), -1);
  out.node_for_tracklet.assign(bundle.tracklets.size(), -1);

  std::vector<std::vector<std::optional<Vec3>>> world(bundle.tracklets.size());
  for (size_t t = 0; t < bundle.tracklets.size(); ++t)
    world[t] = tracklet_world_points(bundle.tracklets[t], bundle.cameras);

  std::vector<double> claim_dist(set.size(), std::numeric_limits<double>::max());
  for (size_t n = 0; n < set.size(); ++n) {
    const int frame = set.source_frame[n];
    if (frame < 0 || frame >= bundle.frame_count) continue;
    for (size_t t = 0; t < bundle.tracklets.size(); ++t) {
      if (!world[t][frame]) continue;
      const double d = (set.nodes[n].center - *world[t][frame]).norm();
      if (d <= anchor_radius && d < claim_dist[n]) {
        claim_dist[n] = d;
        out.tracklet_for_node[n] = static_cast<int>(t);
      }
    }
  }

  std::vector<double> best(bundle.tracklets.size(), std::numeric_limits<double>::max());
  for (size_t n = 0; n < set.size(); ++n) {
    const int t = out.tracklet_for_node[n];
    if (t < 0) continue;
    if (claim_dist[n] < best[t]) {
      best[t] = claim_dist[n];
      out.node_for_tracklet[t] = static_cast<int>(n);
    }
  }
  return out;
}

struct FitReport {
  AnchorAssignment assignment;
  std::vector<double> residuals;  // per node; 0 for static-kept nodes
  std::vector<int> static_nodes;  // nodes left static (no usable tracklet)
};

// Refits every node trajectory on a fresh uniform keyframe grid. Nodes with
// an anchored tracklet get a least-squares Hermite fit of its back-projected
// 3D track; the rest stay pinned at their canonical center. Rotations are
// initialized to identity and left to the optimizer.
//
// Fitted nodes are re-anchored: candidates back-projected from a later
// keyframe sit at that frame's position, so the canonical center moves to
// the fitted trajectory's start (restoring xi(0) = c_i) and source_frame
// becomes 0. Radii are then rebuilt from the re-anchored centers.
inline FitReport fit_nodes(const SceneBundle& bundle, NodeSet& set, int keyframes,
                           double anchor_radius) {
  const auto times = uniform_keyframes(keyframes);
  FitReport report;
  report.assignment = assign_tracklets(bundle, set, anchor_radius);
  report.residuals.assign(set.size(), 0.0);

  // Fitting demands at least one sample in every keyframe interval;
  // keyframes past a tracklet's visible span would otherwise be
  // unconstrained and extrapolate arbitrarily.
  auto covers_intervals = [&](const std::vector<TimedSample>& samples) {
    for (size_t k = 0; k + 1 < times.size(); ++k) {
      bool hit = false;
      for (const auto& s : samples)
        if (s.t >= times[k] - 1e-12 && s.t <= times[k + 1] + 1e-12) {
          hit = true;
          break;
        }
      if (!hit) return false;
    }
    return true;
  };

  for (size_t n = 0; n < set.size(); ++n) {
    const int t = report.assignment.tracklet_for_node[n];
    std::vector<TimedSample> samples;
    if (t >= 0) {
      const auto world = tracklet_world_points(bundle.tracklets[t], bundle.cameras);
      for (size_t f = 0; f < world.size(); ++f)
        if (world[f]) samples.push_back({bundle.frame_time(static_cast<int>(f)), *world[f]});
    }
    if (samples.size() < 2 || !covers_intervals(samples)) {
      set.nodes[n].trajectory = SplineTrajectory::from_positions(
          times, std::vector<Vec3>(times.size(), set.nodes[n].center));
      report.static_nodes.push_back(static_cast<int>(n));
      continue;
    }
    SplineFit fit = fit_spline(samples, times);
    report.residuals[n] = fit.residual;
    set.nodes[n].center = fit.trajectory.position_at(times.front());
    set.source_frame[n] = 0;
    set.nodes[n].trajectory = std::move(fit.trajectory);
  }
  set.keyframe_times = times;

  std::vector<Vec3> centers;
  centers.reserve(set.size());
  for (const auto& node : set.nodes) centers.push_back(node.center);
  double fallback = 1.0;
  if (!set.nodes.empty()) {
    std::vector<double> radii_sorted;
    for (const auto& node : set.nodes) radii_sorted.push_back(node.radius);
    std::nth_element(radii_sorted.begin(), radii_sorted.begin() + radii_sorted.size() / 2,
                     radii_sorted.end());
    fallback = radii_sorted[radii_sorted.size() / 2];
  }
  const auto radii = node_radii(centers, fallback);
  for (size_t n = 0; n < set.size(); ++n) set.nodes[n].radius = radii[n];
  return report;
}

struct MetricsReport {
  double deformed_rmse = 0.0;            // meters, primitives vs ground truth
  std::optional<double> node_rmse;       // meters, nodes vs anchor tracks
  std::optional<double> density_ratio;   // dynamic vs static survivor rate
  int node_count = 0;
  double bbox_diagonal = 0.0;
};

namespace detail {

// Distance from a world point to an object's box at a given frame.
inline double box_distance(const ObjectTrack& obj, int frame, const Vec3& x) {
  const Vec3 local = obj.poses[frame].inverse().apply(x);
  const Vec3 excess =
      ((local - obj.center).cwiseAbs() - obj.half_extent).cwiseMax(0.0);
  return excess.norm();
}

// Nearest object over all frames.
inline int classify_region(const SceneBundle& bundle, const Vec3& x) {
  int best = -1;
  double best_d = std::numeric_limits<double>::max();
  for (size_t o = 0; o < bundle.objects.size(); ++o) {
    for (int f = 0; f < bundle.frame_count; ++f) {
      const double d = box_distance(bundle.objects[o], f, x);
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(o);
      }
    }
  }
  return best;
}

template <typename Fn>
void parallel_for(size_t count, int threads, Fn&& fn) {
  if (threads <= 1 || count < 64) {
    for (size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  const size_t chunk = (count + threads - 1) / threads;
  for (int w = 0; w < threads; ++w) {
    const size_t begin = w * chunk;
    const size_t end = std::min(count, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] {
      for (size_t i = begin; i < end; ++i) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace detail

// Ground-truth evaluation:
//   (a) RMSE of deformed primitive centers against the true rigid motion,
//   (b) RMSE of anchored node trajectories against true anchor tracks,
//   (c) dynamic/static survivor density ratio, normalized per candidate,
//   (d) final node count.
inline MetricsReport eval_metrics(const SceneBundle& bundle, const NodeSet& set,
                                  const BindingTable& binding, int threads = 1,
                                  double anchor_radius = -1.0) {
  if (binding.size() != bundle.primitives.size())
    throw std::invalid_argument("eval_metrics: binding rows != primitive count");
  const double t0 = bundle.frame_time(0);
  const double t1 = bundle.frame_time(bundle.frame_count - 1);
  for (const auto& n : set.nodes)
    if (!n.trajectory.covers(t0, t1))
      throw SpanMismatch("node trajectory does not span the bundle time range");
  if (anchor_radius <= 0.0)
    anchor_radius = kDefaultAnchorFraction * bundle.bbox_diagonal();

  MetricsReport report;
  report.node_count = static_cast<int>(set.size());
  report.bbox_diagonal = bundle.bbox_diagonal();

  // (a) deformed primitive RMSE over all frames.
  std::vector<double> per_prim(bundle.primitives.size(), 0.0);
  detail::parallel_for(bundle.primitives.size(), threads, [&](size_t p) {
    double acc = 0.0;
    for (int f = 0; f < bundle.frame_count; ++f) {
      const Primitive deformed = deform_primitive(
          bundle.primitives[p], set.nodes, binding.row(p), bundle.frame_time(f));
      const Vec3 truth = bundle.gt_pose(static_cast<int>(p), f)
                             .apply(bundle.primitives[p].center);
      acc += (deformed.center - truth).squaredNorm();
    }
    per_prim[p] = acc;
  });
  double total = 0.0;
  for (double v : per_prim) total += v;
  const size_t samples = bundle.primitives.size() * bundle.frame_count;
  report.deformed_rmse = samples > 0 ? std::sqrt(total / samples) : 0.0;

  // (b) node trajectory RMSE at anchored tracklets.
  const AnchorAssignment assignment = assign_tracklets(bundle, set, anchor_radius);
  double node_err = 0.0;
  size_t node_samples = 0;
  for (size_t t = 0; t < bundle.tracklets.size(); ++t) {
    const int n = assignment.node_for_tracklet[t];
    if (n < 0) continue;
    const Tracklet& track = bundle.tracklets[t];
    for (int f = 0; f < bundle.frame_count; ++f) {
      if (!track.points[f].visible) continue;
      const Vec3 truth = bundle.objects[track.object].poses[f].apply(track.anchor);
      const Vec3 pos = set.nodes[n].trajectory.position_at(bundle.frame_time(f));
      node_err += (pos - truth).squaredNorm();
      ++node_samples;
    }
  }
  if (node_samples > 0) report.node_rmse = std::sqrt(node_err / node_samples);

  // (c) density ratio: survivors per candidate, dynamic over static.
  if (!bundle.patches.empty()) {
    const auto candidates = patch_to_nodes(bundle.patches, bundle.cameras);
    long cand_dyn = 0, cand_stat = 0;
    for (const auto& c : candidates) {
      const int obj = detail::classify_region(bundle, c.position);
      (obj >= 0 && bundle.objects[obj].dynamic ? cand_dyn : cand_stat) += 1;
    }
    long node_dyn = 0, node_stat = 0;
    for (const auto& n : set.nodes) {
      const int obj = detail::classify_region(bundle, n.center);
      (obj >= 0 && bundle.objects[obj].dynamic ? node_dyn : node_stat) += 1;
    }
    if (cand_dyn > 0 && cand_stat > 0 && node_stat > 0) {
      report.density_ratio = (static_cast<double>(node_dyn) / cand_dyn) /
                             (static_cast<double>(node_stat) / cand_stat);
    }
  }
  return report;
}

}  // namespace splatnodes
