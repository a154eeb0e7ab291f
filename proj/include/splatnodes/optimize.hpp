#pragma once

// Joint refinement of node keyframe positions (analytic gradient descent
// with backtracking) and keyframe rotations (finite-difference descent in a
// local axis-angle chart) on the tracking, depth, and ARAP terms.

#include "splatnodes/camera.hpp"
#include "splatnodes/core.hpp"
#include "splatnodes/deform_graph.hpp"
#include "splatnodes/pipeline.hpp"
#include "splatnodes/scene.hpp"

#include <cmath>
#include <ostream>
#include <string>
#include <vector>

namespace splatnodes {

struct LossWeights {
  double rgb = 0.0;    // out of scope, must stay 0
  double mask = 0.0;   // out of scope, must stay 0
  double depth = 0.1;
  double track = 1.0;
  double arap = 0.1;

  void validate() const {
    if (rgb != 0.0 || mask != 0.0)
      throw InvalidConfig(
          "lambda_rgb and lambda_mask must be 0: photometric terms are not modeled");
    if (depth < 0.0 || track < 0.0 || arap < 0.0)
      throw InvalidConfig("loss weights must be nonnegative");
  }
};

// Mutable optimization state. Only keyframe positions and rotations change
// across iterations; binding and primitives stay frozen.
struct OptimState {
  NodeSet node_set;
  BindingTable binding;
  std::vector<Primitive> primitives;
  int iteration = 0;
  std::vector<double> loss_history;
};

// Frozen observation data driving the losses.
struct OptimData {
  std::vector<Tracklet> tracklets;
  std::vector<Camera> cameras;      // per frame
  std::vector<double> frame_times;  // per frame
  std::vector<int> anchor_map;      // tracklet -> node index, -1 to skip
  std::vector<std::vector<int>> node_graph;
};

inline OptimData make_optim_data(const SceneBundle& bundle, const NodeSet& set,
                                 double anchor_radius = -1.0, int graph_k = 4) {
  if (anchor_radius <= 0.0)
    anchor_radius = kDefaultAnchorFraction * bundle.bbox_diagonal();
  OptimData data;
  data.tracklets = bundle.tracklets;
  data.cameras = bundle.cameras;
  for (int f = 0; f < bundle.frame_count; ++f)
    data.frame_times.push_back(bundle.frame_time(f));
  data.anchor_map = assign_tracklets(bundle, set, anchor_radius).node_for_tracklet;
  data.node_graph = build_node_graph(set.nodes, graph_k);
  return data;
}

struct LossValue {
  double value = 0.0;
  KeyframeGrad gradient;
};

namespace detail {

inline void check_spans(const OptimState& state, const OptimData& data) {
  if (data.frame_times.empty()) return;
  const double t0 = data.frame_times.front();
  const double t1 = data.frame_times.back();
  for (const auto& n : state.node_set.nodes)
    if (!n.trajectory.covers(t0, t1))
      throw SpanMismatch("node trajectory does not span the observed frames");
}

}  // namespace detail

// Squared pixel error between each anchored node's projected trajectory and
// its tracklet, summed over visible frames. The gradient flows through the
// pinhole Jacobian and the Hermite position weights.
inline LossValue track_loss(const OptimState& state, const OptimData& data) {
  detail::check_spans(state, data);
  LossValue out;
  out.gradient = zero_gradient(state.node_set.nodes);

  for (size_t t = 0; t < data.tracklets.size(); ++t) {
    const int n = data.anchor_map[t];
    if (n < 0) continue;
    const Node& node = state.node_set.nodes[n];
    const Tracklet& track = data.tracklets[t];
    for (size_t f = 0; f < track.points.size(); ++f) {
      if (!track.points[f].visible) continue;
      const Camera& cam = data.cameras[f];
      const double time = data.frame_times[f];
      const Vec3 xi = node.trajectory.position_at(time);
      const Vec3 pc = cam.rotation * xi + cam.translation;
      if (pc.z() <= 1e-9) continue;  // node wandered behind the camera
      const Vec2 predicted(cam.fx * pc.x() / pc.z() + cam.cx,
                           cam.fy * pc.y() / pc.z() + cam.cy);
      const Vec2 r = predicted - track.points[f].pixel;
      out.value += r.squaredNorm();

      Eigen::Matrix<double, 2, 3> jproj;
      const double inv_z = 1.0 / pc.z();
      jproj << cam.fx * inv_z, 0.0, -cam.fx * pc.x() * inv_z * inv_z, 0.0,
          cam.fy * inv_z, -cam.fy * pc.y() * inv_z * inv_z;
      const Vec3 g_xi = 2.0 * (jproj * cam.rotation).transpose() * r;

      const auto w = position_weights(node.trajectory.times(), time);
      for (size_t k = 0; k < w.size(); ++k)
        if (w[k] != 0.0) out.gradient[n][k] += w[k] * g_xi;
    }
  }
  return out;
}

// Squared camera-space depth error at the same anchors.
inline LossValue depth_loss(const OptimState& state, const OptimData& data) {
  detail::check_spans(state, data);
  LossValue out;
  out.gradient = zero_gradient(state.node_set.nodes);

  for (size_t t = 0; t < data.tracklets.size(); ++t) {
    const int n = data.anchor_map[t];
    if (n < 0) continue;
    const Node& node = state.node_set.nodes[n];
    const Tracklet& track = data.tracklets[t];
    for (size_t f = 0; f < track.points.size(); ++f) {
      if (!track.points[f].visible) continue;
      const Camera& cam = data.cameras[f];
      const double time = data.frame_times[f];
      const Vec3 xi = node.trajectory.position_at(time);
      const double z = (cam.rotation * xi + cam.translation).z();
      const double r = z - track.points[f].depth;
      out.value += r * r;

      const Vec3 g_xi = 2.0 * r * cam.rotation.row(2).transpose();
      const auto w = position_weights(node.trajectory.times(), time);
      for (size_t k = 0; k < w.size(); ++k)
        if (w[k] != 0.0) out.gradient[n][k] += w[k] * g_xi;
    }
  }
  return out;
}

struct LossBreakdown {
  double total = 0.0;
  double track = 0.0;
  double depth = 0.0;
  double arap = 0.0;
  KeyframeGrad gradient;
};

// L = lambda_track L_track + lambda_depth L_depth + lambda_arap L_arap,
// with L_arap summed over consecutive keyframe-time pairs. L_rgb and
// L_mask contribute exactly zero by construction.
inline LossBreakdown total_loss(const OptimState& state, const OptimData& data,
                                const LossWeights& weights) {
  weights.validate();
  LossBreakdown out;
  out.gradient = zero_gradient(state.node_set.nodes);

  auto accumulate = [&out](double lambda, const LossValue& term) {
    for (size_t n = 0; n < term.gradient.size(); ++n)
      for (size_t k = 0; k < term.gradient[n].size(); ++k)
        out.gradient[n][k] += lambda * term.gradient[n][k];
    return lambda * term.value;
  };

  if (weights.track != 0.0) {
    const LossValue term = track_loss(state, data);
    out.track = term.value;
    out.total += accumulate(weights.track, term);
  }
  if (weights.depth != 0.0) {
    const LossValue term = depth_loss(state, data);
    out.depth = term.value;
    out.total += accumulate(weights.depth, term);
  }
  if (weights.arap != 0.0) {
    const auto& times = state.node_set.keyframe_times;
    for (size_t k = 0; k + 1 < times.size(); ++k) {
      const ArapResult term =
          arap_energy(state.node_set.nodes, data.node_graph, times[k], times[k + 1]);
      out.arap += term.energy;
      out.total += accumulate(weights.arap, {term.energy, term.gradient});
    }
  }
  return out;
}

namespace detail {

inline std::vector<std::vector<Vec3>> snapshot_positions(const NodeSet& set) {
  std::vector<std::vector<Vec3>> out(set.nodes.size());
  for (size_t n = 0; n < set.nodes.size(); ++n)
    out[n] = set.nodes[n].trajectory.positions();
  return out;
}

inline void restore_positions(NodeSet& set, const std::vector<std::vector<Vec3>>& p) {
  for (size_t n = 0; n < set.nodes.size(); ++n)
    set.nodes[n].trajectory.set_positions(p[n]);
}

inline double grad_max_abs(const KeyframeGrad& g) {
  double m = 0.0;
  for (const auto& per_node : g)
    for (const Vec3& v : per_node) m = std::max(m, v.cwiseAbs().maxCoeff());
  return m;
}

}  // namespace detail

inline constexpr int kMaxBacktracks = 20;
inline constexpr double kRotationFdStep = 1e-5;
inline constexpr double kCurvatureProbeStep = 1e-4;
inline constexpr int kPrecondRefresh = 50;  // iterations between curvature probes

// Gradient descent with backtracking line search on keyframe positions,
// plus finite-difference descent on keyframe rotations in a local
// axis-angle chart. The loss never increases across an iteration. Writes a
// per-iteration loss log when `loss_log` is given.
//
// Descent runs in a Jacobi-preconditioned metric: the Hessian diagonal is
// probed by central differences every kPrecondRefresh iterations and the
// gradient is scaled by its inverse. Pixel^2 and meter^2 terms otherwise
// differ in curvature by ~1e3 and raw steepest descent stalls along the
// camera ray.
inline void refine(OptimState& state, const OptimData& data, const LossWeights& weights,
                   int iterations, double step_size, std::ostream* loss_log = nullptr) {
  if (!(step_size > 0.0)) throw std::invalid_argument("refine: step_size must be > 0");
  weights.validate();

  // The in-scope losses read keyframe positions only, so the rotation
  // chart gradient vanishes identically; once observed zero it stays zero.
  bool rotation_grad_zero = false;

  auto eval_total = [&]() { return total_loss(state, data, weights); };

  // Inverse Hessian diagonal, floored so that flat or locally concave
  // coordinates fall back to the most conservative scale seen.
  KeyframeGrad precond;
  auto build_preconditioner = [&](double base_loss) {
    precond = zero_gradient(state.node_set.nodes);
    double max_curvature = 0.0;
    const double h = kCurvatureProbeStep;
    for (size_t n = 0; n < state.node_set.nodes.size(); ++n) {
      const auto base = state.node_set.nodes[n].trajectory.positions();
      for (size_t k = 0; k < base.size(); ++k) {
        for (int d = 0; d < 3; ++d) {
          auto bump = [&](double eps) {
            auto positions = base;
            positions[k][d] += eps;
            state.node_set.nodes[n].trajectory.set_positions(positions);
            const double value = eval_total().total;
            state.node_set.nodes[n].trajectory.set_positions(base);
            return value;
          };
          const double curvature = (bump(h) - 2.0 * base_loss + bump(-h)) / (h * h);
          precond[n][k][d] = curvature;
          if (std::isfinite(curvature))
            max_curvature = std::max(max_curvature, curvature);
        }
      }
    }
    const double fallback = max_curvature > 0.0 ? max_curvature : 1.0;
    const double floor = 1e-8 * fallback;
    for (auto& per_node : precond)
      for (Vec3& c : per_node)
        for (int d = 0; d < 3; ++d) {
          const double curvature =
              std::isfinite(c[d]) && c[d] > floor ? c[d] : fallback;
          c[d] = 1.0 / curvature;
        }
  };

  for (int it = 0; it < iterations; ++it) {
    LossBreakdown current = eval_total();
    if (!std::isfinite(current.total))
      throw NonFiniteLoss("refine: loss became non-finite at iteration " +
                          std::to_string(state.iteration));

    if (loss_log) {
      *loss_log << "iter=" << state.iteration << " track=" << format_real(current.track)
                << " depth=" << format_real(current.depth)
                << " arap=" << format_real(current.arap)
                << " total=" << format_real(current.total) << "\n";
    }

    // Position update. The search backtracks by halving until the loss is
    // non-increasing; an immediately acceptable step is then greedily
    // doubled while that keeps helping.
    if (detail::grad_max_abs(current.gradient) > 0.0) {
      if (precond.empty() || it % kPrecondRefresh == 0)
        build_preconditioner(current.total);
      const auto base = detail::snapshot_positions(state.node_set);
      auto apply_step = [&](double step) {
        for (size_t n = 0; n < state.node_set.nodes.size(); ++n) {
          auto positions = base[n];
          for (size_t k = 0; k < positions.size(); ++k)
            positions[k] -=
                step * current.gradient[n][k].cwiseProduct(precond[n][k]);
          state.node_set.nodes[n].trajectory.set_positions(positions);
        }
        return eval_total();
      };

      double step = step_size;
      LossBreakdown trial = apply_step(step);
      if (std::isfinite(trial.total) && trial.total <= current.total) {
        for (int grow = 0; grow < kMaxBacktracks; ++grow) {
          const LossBreakdown wider = apply_step(step * 2.0);
          if (!std::isfinite(wider.total) || wider.total > trial.total) {
            trial = apply_step(step);  // reinstate the best step
            break;
          }
          step *= 2.0;
          trial = wider;
        }
        current = trial;
      } else {
        bool accepted = false;
        for (int half = 0; half < kMaxBacktracks; ++half) {
          step *= 0.5;
          trial = apply_step(step);
          if (std::isfinite(trial.total) && trial.total <= current.total) {
            accepted = true;
            current = trial;
            break;
          }
        }
        if (!accepted) detail::restore_positions(state.node_set, base);
      }
    }

    // Rotation update by central differences in a per-keyframe chart.
    if (!rotation_grad_zero) {
      double max_component = 0.0;
      std::vector<std::vector<Vec3>> rot_grad(state.node_set.nodes.size());
      for (size_t n = 0; n < state.node_set.nodes.size(); ++n) {
        const size_t keyframes = state.node_set.nodes[n].trajectory.keyframe_count();
        rot_grad[n].assign(keyframes, Vec3::Zero());
        for (size_t k = 0; k < keyframes; ++k) {
          const UnitQuaternion original =
              state.node_set.nodes[n].trajectory.rotations()[k];
          for (int axis = 0; axis < 3; ++axis) {
            Vec3 delta = Vec3::Zero();
            delta[axis] = kRotationFdStep;
            state.node_set.nodes[n].trajectory.set_rotation(
                k, quat_mul(original, UnitQuaternion::from_axis_angle(delta)));
            const double up = total_loss(state, data, weights).total;
            state.node_set.nodes[n].trajectory.set_rotation(
                k, quat_mul(original, UnitQuaternion::from_axis_angle(-delta)));
            const double down = total_loss(state, data, weights).total;
            state.node_set.nodes[n].trajectory.set_rotation(k, original);
            rot_grad[n][k][axis] = (up - down) / (2.0 * kRotationFdStep);
            max_component = std::max(max_component, std::abs(rot_grad[n][k][axis]));
          }
        }
      }
      if (max_component == 0.0) {
        rotation_grad_zero = true;
      } else {
        const auto original_rotations = [&] {
          std::vector<std::vector<UnitQuaternion>> rot(state.node_set.nodes.size());
          for (size_t n = 0; n < state.node_set.nodes.size(); ++n)
            rot[n] = state.node_set.nodes[n].trajectory.rotations();
          return rot;
        }();
        double step = step_size;
        bool accepted = false;
        for (int half = 0; half <= kMaxBacktracks; ++half) {
          for (size_t n = 0; n < state.node_set.nodes.size(); ++n)
            for (size_t k = 0; k < rot_grad[n].size(); ++k)
              state.node_set.nodes[n].trajectory.set_rotation(
                  k, quat_mul(original_rotations[n][k],
                              UnitQuaternion::from_axis_angle(
                                  Vec3(-step * rot_grad[n][k]))));
          const LossBreakdown trial = eval_total();
          if (std::isfinite(trial.total) && trial.total <= current.total) {
            accepted = true;
            current = trial;
            break;
          }
          step *= 0.5;
        }
        if (!accepted) {
          for (size_t n = 0; n < state.node_set.nodes.size(); ++n)
            for (size_t k = 0; k < original_rotations[n].size(); ++k)
              state.node_set.nodes[n].trajectory.set_rotation(
                  k, original_rotations[n][k]);
        }
      }
    }

    state.loss_history.push_back(current.total);
    ++state.iteration;
  }
}

}  // namespace splatnodes
