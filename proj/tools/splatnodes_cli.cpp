// splatnodes command-line front end.
//
// Chains scene generation -> node initialization -> spline fitting ->
// refinement -> evaluation through declared files only, so deleting any
// intermediate and re-running from the bundle reproduces identical output.
//
// Exit codes: 0 success, 2 configuration/input error, 3 compression target
// not reached (nodes still written), 4 numerical failure.

#include "splatnodes/bundle_io.hpp"
#include "splatnodes/node_init.hpp"
#include "splatnodes/optimize.hpp"
#include "splatnodes/pipeline.hpp"
#include "splatnodes/scene.hpp"
#include "splatnodes/scene_config.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace {

using namespace splatnodes;

constexpr const char* kVersion = "0.1.0";

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitTargetNotReached = 3;
constexpr int kExitNumerical = 4;

void add_run_config(CLI::App* cmd) {
  cmd->set_config("--run-config", "", "INI file with defaults for these flags");
  cmd->allow_config_extras(CLI::config_extras_mode::ignore_all);
}

int cmd_gen_scene(const std::string& config_path, std::optional<uint64_t> seed_flag,
                  const std::string& out_path) {
  SceneConfig config = load_scene_config(config_path);
  if (seed_flag) {
    config.seed = *seed_flag;
    config.has_seed = true;
  }
  if (!config.has_seed)
    throw InvalidConfig("no seed: set [scene] seed in the config or pass --seed");
  const SceneBundle bundle = gen_scene(config, config.seed);
  save_bundle(out_path, bundle);
  std::cout << "wrote " << out_path << ": " << bundle.primitives.size()
            << " primitives, " << bundle.objects.size() << " objects, "
            << bundle.tracklets.size() << " tracklets, " << bundle.patches.size()
            << " patch frames, seed " << bundle.seed << "\n";
  return kExitOk;
}

struct InitOptions {
  double v_init = 0.0;     // 0: derive from the bundle (1% of bbox diagonal)
  double delta_v = 0.0;    // 0: same as v_init
  double r_min = 0.1;
  double r_max = 0.9;
  double eta = 0.5;
  double alpha_dyn = 2.0;
  double beta_dyn = 2.0;
  int target = 0;          // 0: use target_fraction of the candidate count
  double target_fraction = 0.1;
  int max_iterations = 32;
};

int cmd_init_nodes(const std::string& bundle_path, const InitOptions& opt,
                   const std::string& out_path) {
  const SceneBundle bundle = load_bundle(bundle_path);
  const auto candidates = patch_to_nodes(bundle.patches, bundle.cameras);

  CompressionParams params;
  params.v_init = opt.v_init > 0.0 ? opt.v_init : 0.01 * bundle.bbox_diagonal();
  params.delta_v = opt.delta_v > 0.0 ? opt.delta_v : params.v_init;
  params.r_min = opt.r_min;
  params.r_max = opt.r_max;
  params.eta = opt.eta;
  params.alpha_dyn = opt.alpha_dyn;
  params.beta_dyn = opt.beta_dyn;
  params.max_iterations = opt.max_iterations;
  params.target_count =
      opt.target > 0
          ? opt.target
          : std::max(1, static_cast<int>(candidates.size() * opt.target_fraction));

  const CompressResult result = compress(candidates, params);
  NodeSet set = NodeSet::from_compression(result);
  save_nodes(out_path, set);

  std::cout << "candidates " << candidates.size() << ", iterations "
            << result.iterations << ", nodes " << set.size() << " (target "
            << params.target_count << ")\n";

  const BindingTable binding =
      build_binding(bundle.primitives, set.nodes,
                    std::min<int>(4, static_cast<int>(set.size())));
  const MetricsReport report = eval_metrics(bundle, set, binding);
  if (report.density_ratio)
    std::cout << "density ratio (dynamic/static per candidate): "
              << format_real(*report.density_ratio) << "\n";

  if (!result.reached_target) {
    std::cerr << "warning: target " << params.target_count << " not reached after "
              << result.iterations << " iterations (count " << set.size()
              << "); nodes written anyway\n";
    return kExitTargetNotReached;
  }
  return kExitOk;
}

int cmd_fit(const std::string& bundle_path, const std::string& nodes_path,
            int keyframes, double anchor_radius, const std::string& out_path) {
  const SceneBundle bundle = load_bundle(bundle_path);
  NodeSet set = load_nodes(nodes_path);
  if (anchor_radius <= 0.0)
    anchor_radius = kDefaultAnchorFraction * bundle.bbox_diagonal();

  const FitReport report = fit_nodes(bundle, set, keyframes, anchor_radius);
  save_nodes(out_path, set);

  double residual = 0.0;
  for (double r : report.residuals) residual += r;
  std::cout << "fitted " << set.size() - report.static_nodes.size() << " of "
            << set.size() << " nodes over " << keyframes
            << " keyframes, total residual " << residual << "\n";
  for (int n : report.static_nodes)
    std::cerr << "warning: node " << n
              << " has no tracklet in range; kept static\n";
  return kExitOk;
}

struct OptimizeOptions {
  int iterations = 40;
  double step = 1.0;
  double lambda_track = 1.0;
  double lambda_depth = 0.1;
  double lambda_arap = 0.1;
  double anchor_radius = 0.0;
  std::string loss_log;
};

int cmd_optimize(const std::string& bundle_path, const std::string& nodes_path,
                 const OptimizeOptions& opt, const std::string& out_path) {
  const SceneBundle bundle = load_bundle(bundle_path);
  NodeSet set = load_nodes(nodes_path);

  LossWeights weights;
  weights.track = opt.lambda_track;
  weights.depth = opt.lambda_depth;
  weights.arap = opt.lambda_arap;
  weights.validate();

  const double anchor_radius = opt.anchor_radius > 0.0
                                   ? opt.anchor_radius
                                   : kDefaultAnchorFraction * bundle.bbox_diagonal();
  OptimData data = make_optim_data(bundle, set, anchor_radius);

  OptimState state;
  state.node_set = std::move(set);
  state.primitives = bundle.primitives;
  state.binding =
      build_binding(bundle.primitives, state.node_set.nodes,
                    std::min<int>(4, static_cast<int>(state.node_set.size())));

  std::ofstream log_stream;
  std::ostream* log = nullptr;
  if (!opt.loss_log.empty()) {
    log_stream.open(opt.loss_log, std::ios::binary);
    if (!log_stream)
      throw InvalidConfig("cannot write loss log '" + opt.loss_log + "'");
    log = &log_stream;
  }

  refine(state, data, weights, opt.iterations, opt.step, log);
  save_nodes(out_path, state.node_set);

  std::cout << "optimized " << state.node_set.size() << " nodes for "
            << opt.iterations << " iterations";
  if (!state.loss_history.empty())
    std::cout << ", final loss " << state.loss_history.back();
  std::cout << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& bundle_path, const std::string& nodes_path,
             int knn, int threads, const std::string& out_path) {
  const SceneBundle bundle = load_bundle(bundle_path);
  const NodeSet set = load_nodes(nodes_path);
  const BindingTable binding = build_binding(
      bundle.primitives, set.nodes, std::min<int>(knn, static_cast<int>(set.size())));
  const MetricsReport report = eval_metrics(bundle, set, binding, threads);
  save_metrics(out_path, report);
  std::cout << metrics_to_json(report).dump(2) << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse-node deformation toolkit for dynamic Gaussian scenes"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("splatnodes ") + kVersion +
                                        " (file format " +
                                        splatnodes::format_version_string() + ")");

  // gen-scene
  std::string gen_config, gen_out = "bundle.txt";
  std::optional<uint64_t> gen_seed;
  auto* gen = app.add_subcommand("gen-scene", "Generate a synthetic scene bundle");
  gen->add_option("--config", gen_config, "scene config file")->required();
  gen->add_option("--seed", gen_seed, "RNG seed (overrides the config)");
  gen->add_option("--out", gen_out, "output bundle path");
  add_run_config(gen);

  // init-nodes
  std::string init_bundle, init_out = "nodes.txt";
  InitOptions init_opt;
  auto* init = app.add_subcommand("init-nodes",
                                  "Motion-adaptive node initialization from patches");
  init->add_option("--bundle", init_bundle, "input bundle")->required();
  init->add_option("--out", init_out, "output node file");
  init->add_option("--v-init", init_opt.v_init, "initial voxel size, meters");
  init->add_option("--delta-v", init_opt.delta_v, "voxel growth step, meters");
  init->add_option("--r-min", init_opt.r_min, "min merge fraction");
  init->add_option("--r-max", init_opt.r_max, "max merge fraction");
  init->add_option("--eta", init_opt.eta, "foreground penalty weight");
  init->add_option("--alpha-dyn", init_opt.alpha_dyn, "tendency prior gain");
  init->add_option("--beta-dyn", init_opt.beta_dyn, "tendency similarity gain");
  init->add_option("--target", init_opt.target, "absolute node target");
  init->add_option("--target-fraction", init_opt.target_fraction,
                   "target as a fraction of candidates");
  init->add_option("--max-iterations", init_opt.max_iterations,
                   "compression iteration budget");
  add_run_config(init);

  // fit
  std::string fit_bundle, fit_nodes_path, fit_out = "nodes_fit.txt";
  int fit_keyframes = 8;
  double fit_anchor_radius = 0.0;
  auto* fit = app.add_subcommand("fit", "Fit node splines to back-projected tracklets");
  fit->add_option("--bundle", fit_bundle, "input bundle")->required();
  fit->add_option("--nodes", fit_nodes_path, "input node file")->required();
  fit->add_option("--keyframes", fit_keyframes, "spline keyframe count")
      ->check(CLI::Range(2, 64));
  fit->add_option("--anchor-radius", fit_anchor_radius,
                  "tracklet claim radius, meters (default 8% of bbox diagonal)");
  fit->add_option("--out", fit_out, "output node file");
  add_run_config(fit);

  // optimize
  std::string opt_bundle, opt_nodes_path, opt_out = "nodes_opt.txt";
  OptimizeOptions opt_opt;
  auto* opt = app.add_subcommand("optimize", "Refine node trajectories");
  opt->add_option("--bundle", opt_bundle, "input bundle")->required();
  opt->add_option("--nodes", opt_nodes_path, "input node file")->required();
  opt->add_option("--iterations", opt_opt.iterations, "descent iterations")
      ->check(CLI::NonNegativeNumber);
  opt->add_option("--step", opt_opt.step, "initial line-search step");
  opt->add_option("--lambda-track", opt_opt.lambda_track, "tracking loss weight");
  opt->add_option("--lambda-depth", opt_opt.lambda_depth, "depth loss weight");
  opt->add_option("--lambda-arap", opt_opt.lambda_arap, "ARAP weight");
  opt->add_option("--anchor-radius", opt_opt.anchor_radius,
                  "tracklet claim radius, meters");
  opt->add_option("--loss-log", opt_opt.loss_log, "per-iteration loss log path");
  opt->add_option("--out", opt_out, "output node file");
  add_run_config(opt);

  // eval
  std::string eval_bundle, eval_nodes_path, eval_out = "metrics.json";
  int eval_knn = 4;
  int eval_threads = 1;
  auto* eval = app.add_subcommand("eval", "Evaluate nodes against ground truth");
  eval->add_option("--bundle", eval_bundle, "input bundle")->required();
  eval->add_option("--nodes", eval_nodes_path, "input node file")->required();
  eval->add_option("--knn", eval_knn, "binding neighborhood size");
  eval->add_option("--threads", eval_threads, "worker threads (default 1)");
  eval->add_option("--out", eval_out, "output metrics.json path");
  add_run_config(eval);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_scene(gen_config, gen_seed, gen_out);
    if (init->parsed()) return cmd_init_nodes(init_bundle, init_opt, init_out);
    if (fit->parsed())
      return cmd_fit(fit_bundle, fit_nodes_path, fit_keyframes, fit_anchor_radius,
                     fit_out);
    if (opt->parsed()) return cmd_optimize(opt_bundle, opt_nodes_path, opt_opt, opt_out);
    if (eval->parsed())
      return cmd_eval(eval_bundle, eval_nodes_path, eval_knn, eval_threads, eval_out);
  } catch (const splatnodes::InvalidConfig& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const splatnodes::NonFiniteLoss& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const splatnodes::RankDeficient& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const splatnodes::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
  return kExitOk;
}
