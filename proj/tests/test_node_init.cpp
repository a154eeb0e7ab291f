#include "splatnodes/node_init.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <random>

using namespace splatnodes;

namespace {

Eigen::VectorXd unit_token(std::initializer_list<double> values) {
  Eigen::VectorXd v(static_cast<int>(values.size()));
  int i = 0;
  for (double x : values) v[i++] = x;
  return v / v.norm();
}

Eigen::VectorXd noisy_token(const Eigen::VectorXd& base, double sigma,
                            std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, sigma);
  Eigen::VectorXd t = base;
  for (int i = 0; i < t.size(); ++i) t[i] += n(rng);
  return t / t.norm();
}

Eigen::VectorXd random_unit_token(int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::VectorXd t(dim);
  for (int i = 0; i < dim; ++i) t[i] = n(rng);
  return t / t.norm();
}

CandidateNode candidate(const Vec3& pos, Eigen::VectorXd token, double prior,
                        int frame = 0) {
  CandidateNode c;
  c.position = pos;
  c.token = std::move(token);
  c.prior = prior;
  c.source_frame = frame;
  return c;
}

long total_mass(std::span<const CandidateNode> cands) {
  long mass = 0;
  for (const auto& c : cands) mass += c.merged_count;
  return mass;
}

}  // namespace

TEST_CASE("token_similarity examples") {
  auto z = unit_token({1, 0, 0, 0});
  auto z_orth = unit_token({0, 1, 0, 0});

  CandidateNode a = candidate(Vec3::Zero(), z, 0.0);
  CandidateNode b = candidate(Vec3::Zero(), z, 0.0);
  CHECK(token_similarity(a, b, 0.0) == Catch::Approx(1.0).margin(1e-12));

  CandidateNode fg_a = candidate(Vec3::Zero(), z, 1.0);
  CandidateNode fg_b = candidate(Vec3::Zero(), z_orth, 1.0);
  CHECK(token_similarity(fg_a, fg_b, 0.5) == Catch::Approx(-0.5).margin(1e-12));

  CandidateNode self = candidate(Vec3::Zero(), z, 0.0);
  for (double eta : {0.0, 0.5, 2.0})
    CHECK(token_similarity(self, self, eta) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("dyn_score closed forms") {
  auto z = unit_token({1, 0, 0});
  std::vector<CandidateNode> cluster = {candidate(Vec3::Zero(), z, 0.0),
                                        candidate(Vec3::Zero(), z, 0.0)};
  std::vector<MatchedPair> sims_one = {{0, 1, 1.0}};
  CHECK(dyn_score(cluster, sims_one, 1.0, 1.0) ==
        Catch::Approx(1.0 / (1.0 + std::exp(1.0))).margin(1e-12));

  CHECK(dyn_score(cluster, sims_one, 0.0, 0.0) == Catch::Approx(0.5).margin(1e-15));

  std::vector<CandidateNode> fg = {candidate(Vec3::Zero(), z, 1.0),
                                   candidate(Vec3::Zero(), z, 1.0)};
  std::vector<MatchedPair> sims_neg = {{0, 1, -1.0}};
  CHECK(dyn_score(fg, sims_neg, 1.0, 1.0) ==
        Catch::Approx(1.0 / (1.0 + std::exp(-2.0))).margin(1e-12));

  // Empty match set presumes a fully static cluster (mean similarity 1).
  CHECK(dyn_score(cluster, {}, 1.0, 1.0) ==
        Catch::Approx(1.0 / (1.0 + std::exp(1.0))).margin(1e-12));
}

TEST_CASE("dyn_score monotonicity") {
  std::mt19937_64 rng(91);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_real_distribution<double> s(-1.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<CandidateNode> cluster;
    for (int i = 0; i < 4; ++i)
      cluster.push_back(candidate(Vec3::Zero(), random_unit_token(8, rng), u(rng)));
    std::vector<MatchedPair> pairs = {{0, 1, s(rng)}, {2, 3, s(rng)}};

    const double base = dyn_score(cluster, pairs, 2.0, 2.0);

    auto bumped_prior = cluster;
    for (auto& c : bumped_prior) c.prior = std::min(1.0, c.prior + 0.1);
    CHECK(dyn_score(bumped_prior, pairs, 2.0, 2.0) > base);

    auto bumped_sim = pairs;
    for (auto& p : bumped_sim) p.similarity += 0.1;
    CHECK(dyn_score(cluster, bumped_sim, 2.0, 2.0) < base);
  }
}

TEST_CASE("adaptive_ratio endpoints and midpoint") {
  CHECK(adaptive_ratio(1.0, 0.2, 0.8) == 0.2);
  CHECK(adaptive_ratio(0.0, 0.2, 0.8) == 0.8);
  CHECK(adaptive_ratio(0.5, 0.2, 0.8) == Catch::Approx(0.5).margin(1e-15));
  CHECK_THROWS_AS(adaptive_ratio(0.5, 0.9, 0.1), std::invalid_argument);
}

TEST_CASE("patch_to_nodes back-projects patch centers") {
  Camera cam;
  cam.fx = cam.fy = 100.0;
  cam.cx = cam.cy = 16.0;
  cam.width = cam.height = 32;

  PatchGrid grid;
  grid.frame = 0;
  grid.cols = grid.rows = 2;
  grid.patch_size = 16;
  grid.tokens.assign(4, unit_token({1, 0}));
  grid.depths.assign(4, 2.0);
  grid.priors.assign(4, 0.25);

  std::vector<Camera> cams = {cam};
  auto nodes = patch_to_nodes(std::vector<PatchGrid>{grid}, cams);
  REQUIRE(nodes.size() == 4);
  // First patch center is (8, 8): ray ((8-16)/100, (8-16)/100, 1) * 2.
  CHECK((nodes[0].position - Vec3(-0.16, -0.16, 2.0)).norm() < 1e-12);
  CHECK((nodes[3].position - Vec3(0.16, 0.16, 2.0)).norm() < 1e-12);
  CHECK(nodes[0].prior == 0.25);
  CHECK(nodes[0].source_frame == 0);

  SECTION("invalid depths are skipped; all-invalid throws") {
    PatchGrid bad = grid;
    bad.depths.assign(4, 0.0);
    CHECK_THROWS_AS(patch_to_nodes(std::vector<PatchGrid>{bad}, cams),
                    EmptyCandidates);

    PatchGrid partial = grid;
    partial.depths[1] = -1.0;
    auto kept = patch_to_nodes(std::vector<PatchGrid>{partial}, cams);
    CHECK(kept.size() == 3);
  }

  SECTION("three keyframes of an 8x8 grid give 192 candidates") {
    PatchGrid big;
    big.cols = big.rows = 8;
    big.patch_size = 4;
    big.tokens.assign(64, unit_token({1, 0}));
    big.depths.assign(64, 1.5);
    big.priors.assign(64, 0.0);
    std::vector<PatchGrid> frames;
    std::vector<Camera> cameras;
    for (int f = 0; f < 3; ++f) {
      big.frame = f;
      frames.push_back(big);
      cameras.push_back(cam);
    }
    CHECK(patch_to_nodes(frames, cameras).size() == 192);
  }
}

TEST_CASE("compress_step leaves singleton voxels untouched") {
  CompressionParams params;
  params.v_init = 0.5;
  auto z = unit_token({1, 0, 0});
  std::vector<CandidateNode> cands = {candidate(Vec3(0, 0, 0), z, 0.0),
                                      candidate(Vec3(10, 0, 0), z, 0.0),
                                      candidate(Vec3(0, 10, 0), z, 0.0)};
  auto out = compress_step(cands, 0.5, params);
  REQUIRE(out.size() == 3);
  for (size_t i = 0; i < out.size(); ++i) {
    CHECK(out[i].merged_count == 1);
  }
}

TEST_CASE("compress_step merges two identical static candidates") {
  CompressionParams params;
  params.r_max = 1.0;
  auto z = unit_token({0.5, 0.5, 0.5, 0.5});
  std::vector<CandidateNode> cands = {candidate(Vec3(0.1, 0.1, 0.1), z, 0.0),
                                      candidate(Vec3(0.1, 0.1, 0.1), z, 0.0)};
  auto out = compress_step(cands, 1.0, params);
  REQUIRE(out.size() == 1);
  CHECK(out[0].merged_count == 2);
  CHECK((out[0].position - Vec3(0.1, 0.1, 0.1)).norm() < 1e-12);
  CHECK(std::abs(out[0].token.norm() - 1.0) < 1e-9);
}

TEST_CASE("static clusters merge more than dynamic ones") {
  std::mt19937_64 rng(97);
  CompressionParams params;
  const auto base_static = random_unit_token(16, rng);
  const auto base_dynamic = random_unit_token(16, rng);

  std::vector<CandidateNode> statics, dynamics;
  std::uniform_real_distribution<double> jitter(-0.2, 0.2);
  for (int i = 0; i < 40; ++i) {
    statics.push_back(candidate(Vec3(jitter(rng), jitter(rng), jitter(rng)),
                                noisy_token(base_static, 0.01, rng), 0.02));
    dynamics.push_back(candidate(Vec3(jitter(rng), jitter(rng), jitter(rng)),
                                 noisy_token(base_dynamic, 0.35, rng), 0.95));
  }
  auto static_out = compress_step(statics, 1.0, params);
  auto dynamic_out = compress_step(dynamics, 1.0, params);
  const long static_merges = 40 - static_cast<long>(static_out.size());
  const long dynamic_merges = 40 - static_cast<long>(dynamic_out.size());
  CHECK(static_merges > dynamic_merges);
}

TEST_CASE("compress_step conserves merged_count mass and unit tokens") {
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> pos(-1.0, 1.0);
  std::uniform_real_distribution<double> prior(0.0, 1.0);
  std::vector<CandidateNode> cands;
  for (int i = 0; i < 200; ++i)
    cands.push_back(candidate(Vec3(pos(rng), pos(rng), pos(rng)),
                              random_unit_token(8, rng), prior(rng)));
  CompressionParams params;
  auto out = compress_step(cands, 0.7, params);
  CHECK(out.size() <= cands.size());
  CHECK(total_mass(out) == total_mass(cands));
  for (const auto& c : out) CHECK(std::abs(c.token.norm() - 1.0) < 1e-9);
}

TEST_CASE("compress_step is deterministic") {
  std::mt19937_64 rng(103);
  std::uniform_real_distribution<double> pos(-1.0, 1.0);
  std::vector<CandidateNode> cands;
  for (int i = 0; i < 100; ++i)
    cands.push_back(candidate(Vec3(pos(rng), pos(rng), pos(rng)),
                              random_unit_token(8, rng), 0.3));
  CompressionParams params;
  auto a = compress_step(cands, 0.6, params);
  auto b = compress_step(cands, 0.6, params);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].position == b[i].position);
    CHECK(a[i].token == b[i].token);
    CHECK(a[i].merged_count == b[i].merged_count);
  }
}

TEST_CASE("compress passthrough below target") {
  auto z = unit_token({1, 0});
  std::vector<CandidateNode> cands = {candidate(Vec3(0, 0, 0), z, 0.0),
                                      candidate(Vec3(1, 0, 0), z, 0.0)};
  CompressionParams params;
  params.target_count = 5;
  auto result = compress(cands, params);
  CHECK(result.iterations == 0);
  CHECK(result.reached_target);
  REQUIRE(result.nodes.size() == 2);
  CHECK((result.nodes[0].center - Vec3(0, 0, 0)).norm() == 0.0);
  // Static trajectory pinned at the candidate position.
  CHECK((result.nodes[1].trajectory.position_at(0.0) - Vec3(1, 0, 0)).norm() <
        1e-12);
  CHECK(result.nodes[0].radius > 0.0);
}

TEST_CASE("compress reduces a static object to the target") {
  std::mt19937_64 rng(107);
  std::uniform_real_distribution<double> pos(-0.5, 0.5);
  const auto base = random_unit_token(16, rng);
  std::vector<CandidateNode> cands;
  for (int i = 0; i < 1000; ++i)
    cands.push_back(candidate(Vec3(pos(rng), pos(rng), pos(rng)),
                              noisy_token(base, 0.01, rng), 0.02));

  CompressionParams params;
  params.v_init = 0.02;
  params.delta_v = 0.02;
  params.target_count = 100;
  auto result = compress(cands, params);
  CHECK(result.reached_target);
  CHECK(result.nodes.size() <= 100);
  CHECK(total_mass(result.survivors) == 1000);
  for (const auto& n : result.nodes) {
    CHECK(n.center.x() >= -0.5);
    CHECK(n.center.x() <= 0.5);
    CHECK(n.center.y() >= -0.5);
    CHECK(n.center.y() <= 0.5);
  }
}

TEST_CASE("compress reports an unreachable target") {
  auto z = unit_token({1, 0});
  std::vector<CandidateNode> cands;
  for (int i = 0; i < 50; ++i)
    cands.push_back(candidate(Vec3(i * 100.0, 0, 0), z, 0.0));
  CompressionParams params;
  params.v_init = 1e-4;
  params.delta_v = 1e-4;  // voxels never grow enough to group anything
  params.target_count = 1;
  params.max_iterations = 2;
  auto result = compress(cands, params);
  CHECK_FALSE(result.reached_target);
  CHECK(result.iterations == 2);
  CHECK(result.nodes.size() == 50);
}

TEST_CASE("dynamic regions keep proportionally more nodes") {
  std::mt19937_64 rng(109);
  std::uniform_real_distribution<double> jitter(-0.5, 0.5);
  const auto base_static = random_unit_token(16, rng);
  const auto base_dynamic = random_unit_token(16, rng);

  // Static slab around x=-3, dynamic cloud around x=+3, equal counts.
  std::vector<CandidateNode> cands;
  for (int i = 0; i < 300; ++i) {
    cands.push_back(candidate(Vec3(-3 + jitter(rng), jitter(rng), jitter(rng)),
                              noisy_token(base_static, 0.01, rng), 0.03));
    cands.push_back(candidate(Vec3(3 + jitter(rng), jitter(rng), jitter(rng)),
                              noisy_token(base_dynamic, 0.3, rng), 0.95));
  }
  CompressionParams params;
  params.v_init = 0.08;
  params.delta_v = 0.08;
  params.target_count = 60;  // 10% of 600
  auto result = compress(cands, params);
  long kept_static = 0, kept_dynamic = 0;
  for (const auto& c : result.survivors)
    (c.position.x() < 0 ? kept_static : kept_dynamic) += 1;
  INFO("static " << kept_static << " dynamic " << kept_dynamic);
  CHECK(kept_dynamic >= 3 * kept_static);
  CHECK(total_mass(result.survivors) == 600);
}
