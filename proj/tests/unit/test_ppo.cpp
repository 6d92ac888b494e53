#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "softreach/errors.hpp"
#include "softreach/ppo.hpp"

namespace softreach {
namespace {

const std::vector<double> kLow{0, 0, 0}, kHigh{13, 13, 13};

PolicyParams small_policy(PolicyKind kind, std::uint64_t seed) {
  Rng rng(seed);
  PolicyShape shape{kind, 5, -0.3, 1.0};
  const std::vector<double> offset{0, 0, 100, 0, 0, 100}, scale{10, 10, 10, 10, 10, 10};
  return make_policy(shape, offset, scale, kLow, kHigh, rng);
}

Observation random_obs(Rng& rng) {
  Observation o;
  for (std::size_t k = 0; k < 6; ++k) o[k] = (k % 3 == 2 ? 100.0 : 0.0) + 10 * rng.normal();
  return o;
}

// Rollout-shaped batch gathered with act_batch, so old log probs are those
// of `params` itself.
RolloutBatch collect(const PolicyParams& params, std::size_t N, std::size_t T, std::uint64_t seed) {
  Rng rng(seed);
  const bool rec = params.kind == PolicyKind::recurrent;
  const std::size_t n = params.n_valves();
  const std::size_t H = rec ? params.trunk.hidden_dim : 0;
  RolloutBatch b;
  b.n_envs = N;
  b.steps = T;
  b.n_valves = n;
  b.obs.resize(N * T);
  b.pre_squash.resize(N * T * n);
  b.log_prob.resize(N * T);
  b.values.resize(N * T);
  b.starts.assign(N * T, 0);
  b.advantages.resize(N * T);
  b.returns.resize(N * T);
  nn::LstmState hidden{nn::Batch(H, N), nn::Batch(H, N)};
  for (double& v : hidden.h.data) v = 0.2 * rng.normal();
  for (double& v : hidden.c.data) v = 0.2 * rng.normal();
  b.initial_hidden = hidden;
  std::vector<Rng> rngs;
  for (std::size_t e = 0; e < N; ++e) rngs.push_back(rng.split(e));
  std::vector<Observation> obs(N);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t e = 0; e < N; ++e) {
      obs[e] = random_obs(rng);
      if (t > 0 && rng.uniform() < 0.2) {
        b.starts[e * T + t] = 1;
        for (std::size_t k = 0; k < H; ++k) hidden.h(k, e) = hidden.c(k, e) = 0.0;
      }
    }
    auto ba = act_batch(params, obs, rec ? &hidden : nullptr, rngs, false);
    for (std::size_t e = 0; e < N; ++e) {
      const std::size_t s = e * T + t;
      b.obs[s] = obs[e];
      for (std::size_t k = 0; k < n; ++k) b.pre_squash[s * n + k] = ba.pre_squash[e * n + k];
      b.log_prob[s] = ba.log_prob[e];
      b.values[s] = ba.value[e];
      b.advantages[s] = rng.normal();
      b.returns[s] = rng.normal();
    }
    if (rec) hidden = ba.hidden;
  }
  return b;
}

std::vector<std::size_t> all_units(const PolicyParams& p, const RolloutBatch& b) {
  const std::size_t n = p.kind == PolicyKind::recurrent ? b.n_envs : b.n_envs * b.steps;
  std::vector<std::size_t> u(n);
  for (std::size_t i = 0; i < n; ++i) u[i] = i;
  return u;
}

TEST(Squash, BijectiveOnTheBox) {
  for (double u : {-5.0, -1.0, 0.0, 0.3, 2.0, 7.0}) {
    const double a = squash(u, 2.0, 9.0);
    EXPECT_GT(a, 2.0 - 1e-12);
    EXPECT_LT(a, 9.0 + 1e-12);
    EXPECT_NEAR(unsquash(a, 2.0, 9.0), u, 1e-9 * std::max(1.0, std::exp(2 * std::abs(u))));
  }
  EXPECT_DOUBLE_EQ(squash(0.0, 0.0, 13.0), 6.5);
}

TEST(Squash, LogProbMatchesChangeOfVariables) {
  const std::vector<double> mean{0.4, -1.0, 0.0}, log_std{-0.5, 0.2, 0.0};
  Rng rng(1);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> u(3);
    for (auto& v : u) v = 2 * rng.normal();
    double oracle = 0;
    for (std::size_t k = 0; k < 3; ++k) {
      const double sd = std::exp(log_std[k]);
      const double z = (u[k] - mean[k]) / sd;
      const double gauss = std::exp(-0.5 * z * z) / (sd * std::sqrt(2 * std::numbers::pi));
      const double jac = 0.5 * (kHigh[k] - kLow[k]) * (1 - std::tanh(u[k]) * std::tanh(u[k]));
      oracle += std::log(gauss / jac);
    }
    EXPECT_NEAR(squashed_log_prob(u, mean, log_std, kLow, kHigh), oracle, 1e-9);
  }
}

TEST(Squash, DensityIntegratesToOneOverTheBox) {
  const std::vector<double> mean{0.5}, log_std{-0.7}, low{1.0}, high{4.0};
  const int n = 200000;
  double total = 0;
  for (int i = 0; i < n; ++i) {
    const double a = 1.0 + 3.0 * (i + 0.5) / n;
    const std::vector<double> u{unsquash(a, 1.0, 4.0)};
    total += std::exp(squashed_log_prob(u, mean, log_std, low, high)) * 3.0 / n;
  }
  EXPECT_NEAR(total, 1.0, 1e-4);
}

TEST(Policy, DeterministicActionIsSquashedMean) {
  for (auto kind : {PolicyKind::feedforward, PolicyKind::recurrent}) {
    auto p = small_policy(kind, 2);
    Rng rng(3);
    const std::vector<Observation> obs{random_obs(rng)};
    std::vector<Rng> rngs{Rng(9)};
    const std::size_t H = kind == PolicyKind::recurrent ? p.trunk.hidden_dim : 0;
    nn::LstmState hidden{nn::Batch(H, 1), nn::Batch(H, 1)};
    const auto r = act_batch(p, obs, kind == PolicyKind::recurrent ? &hidden : nullptr, rngs, true);
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_EQ(r.pre_squash[k], r.mean[k]);
      EXPECT_DOUBLE_EQ(r.actions[k], squash(r.mean[k], 0, 13));
    }
    // no randomness consumed
    EXPECT_EQ(rngs[0].next_u64(), Rng(9).next_u64());
  }
}

TEST(Policy, ZeroActorGivesBoxMidpoint) {
  auto p = small_policy(PolicyKind::feedforward, 4);
  p.actor = nn::zeros_like(p.actor);
  Rng rng(0);
  const auto r = act(p, random_obs(rng), std::nullopt, rng, true);
  for (double a : r.action) EXPECT_DOUBLE_EQ(a, 6.5);
}

TEST(Policy, BatchedActMatchesSingle) {
  for (auto kind : {PolicyKind::feedforward, PolicyKind::recurrent}) {
    const auto p = small_policy(kind, 5);
    Rng rng(6);
    std::vector<Observation> obs;
    std::vector<Rng> rngs, single_rngs;
    for (std::size_t e = 0; e < 4; ++e) {
      obs.push_back(random_obs(rng));
      rngs.push_back(Rng(7).split(e));
      single_rngs.push_back(Rng(7).split(e));
    }
    const std::size_t H = kind == PolicyKind::recurrent ? p.trunk.hidden_dim : 0;
    nn::LstmState hidden{nn::Batch(H, 4), nn::Batch(H, 4)};
    const auto batch = act_batch(p, obs, kind == PolicyKind::recurrent ? &hidden : nullptr, rngs, false);
    for (std::size_t e = 0; e < 4; ++e) {
      const auto r = act(p, obs[e], std::nullopt, single_rngs[e], false);
      EXPECT_EQ(r.log_prob, batch.log_prob[e]);
      EXPECT_EQ(r.value, batch.value[e]);
      for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(r.action[k], batch.actions[e * 3 + k]);
    }
  }
}

TEST(Policy, JsonRoundTrip) {
  for (auto kind : {PolicyKind::feedforward, PolicyKind::recurrent}) {
    const auto p = small_policy(kind, 8);
    const auto back = policy_from_json(nlohmann::json::parse(to_json(p).dump()));
    EXPECT_EQ(back.kind, kind);
    EXPECT_EQ(back.log_std, p.log_std);
    EXPECT_EQ(back.actor.layers.back().w, p.actor.layers.back().w);
    EXPECT_EQ(back.trunk.w_recurrent, p.trunk.w_recurrent);
  }
  EXPECT_THROW(parse_policy_kind("cnn"), ConfigError);
}

// Direct sum over the discounted, done-truncated TD residuals.
std::vector<double> brute_gae(const std::vector<double>& r, const std::vector<double>& v,
                              const std::vector<std::uint8_t>& d, double g, double l) {
  const std::size_t T = r.size();
  std::vector<double> adv(T, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    double w = 1.0;
    for (std::size_t k = t; k < T; ++k) {
      const double boot = d[k] ? 0.0 : v[k + 1];
      adv[t] += w * (r[k] + g * boot - v[k]);
      if (d[k]) break;
      w *= g * l;
    }
  }
  return adv;
}

TEST(Gae, SingleStepIsTdResidual) {
  const auto g = compute_gae(std::vector<double>{1.5}, std::vector<double>{0.5, 2.0},
                             std::vector<std::uint8_t>{0}, 0.9, 0.95);
  EXPECT_DOUBLE_EQ(g.advantages[0], 1.5 + 0.9 * 2.0 - 0.5);
  EXPECT_DOUBLE_EQ(g.returns[0], 1.5 + 0.9 * 2.0);
  const auto done = compute_gae(std::vector<double>{1.5}, std::vector<double>{0.5, 2.0},
                                std::vector<std::uint8_t>{1}, 0.9, 0.95);
  EXPECT_DOUBLE_EQ(done.advantages[0], 1.0);
}

TEST(Gae, LambdaOneTelescopesToDiscountedReturn) {
  const std::vector<double> r{1, -2, 0.5, 3}, v{0.3, -0.1, 0.7, 1.1, 2.0};
  const auto g = compute_gae(r, v, std::vector<std::uint8_t>(4, 0), 0.9, 1.0);
  double ret = 2.0;
  for (std::size_t t = 4; t-- > 0;) {
    ret = r[t] + 0.9 * ret;
    EXPECT_NEAR(g.returns[t], ret, 1e-12);
  }
}

TEST(Gae, MatchesBruteForce) {
  Rng rng(10);
  for (std::size_t T = 1; T <= 16; ++T) {
    std::vector<double> r(T), v(T + 1);
    std::vector<std::uint8_t> d(T);
    for (auto& x : r) x = rng.normal();
    for (auto& x : v) x = rng.normal();
    for (auto& x : d) x = rng.uniform() < 0.25;
    const auto g = compute_gae(r, v, d, 0.97, 0.9);
    const auto brute = brute_gae(r, v, d, 0.97, 0.9);
    for (std::size_t t = 0; t < T; ++t) {
      EXPECT_NEAR(g.advantages[t], brute[t], 1e-12);
      EXPECT_NEAR(g.returns[t], brute[t] + v[t], 1e-12);
    }
  }
}

TEST(Surrogate, SingleTransitionClipping) {
  const std::vector<double> old_lp{0.0}, new_lp{std::log(1.5)};
  auto pos = clipped_surrogate(new_lp, old_lp, std::vector<double>{2.0}, 0.2);
  EXPECT_NEAR(pos.surrogate, 2.4, 1e-12);
  EXPECT_EQ(pos.d_log_prob[0], 0.0);
  EXPECT_EQ(pos.clip_fraction, 1.0);
  auto neg = clipped_surrogate(new_lp, old_lp, std::vector<double>{-2.0}, 0.2);
  EXPECT_NEAR(neg.surrogate, -3.0, 1e-12);
  EXPECT_NEAR(neg.d_log_prob[0], 3.0, 1e-12);
  const std::vector<double> same{0.0};
  auto flat = clipped_surrogate(same, same, std::vector<double>{0.7}, 0.2);
  EXPECT_DOUBLE_EQ(flat.surrogate, 0.7);
  EXPECT_DOUBLE_EQ(flat.approx_kl, 0.0);
  EXPECT_DOUBLE_EQ(flat.max_ratio_dev, 0.0);
}

TEST(PpoLoss, RatioIsOneOnCollectingPolicy) {
  for (auto kind : {PolicyKind::feedforward, PolicyKind::recurrent}) {
    const auto p = small_policy(kind, 11);
    const auto b = collect(p, 3, 6, 12);
    PpoConfig cfg;
    const auto l = ppo_loss(p, b, all_units(p, b), cfg);
    EXPECT_LT(l.terms.max_ratio_dev, 1e-12);
    EXPECT_NEAR(l.mean_advantage, 0.0, 1e-12);
    // with r = 1 and normalized advantages the surrogate averages to zero
    EXPECT_NEAR(l.terms.surrogate, 0.0, 1e-12);
  }
}

TEST(PpoLoss, ZeroAdvantageLeavesOnlyValueAndEntropy) {
  const auto p = small_policy(PolicyKind::feedforward, 13);
  auto b = collect(p, 2, 5, 14);
  std::fill(b.advantages.begin(), b.advantages.end(), 0.0);
  PpoConfig cfg;
  const auto l = ppo_loss(p, b, all_units(p, b), cfg);
  EXPECT_EQ(l.terms.surrogate, 0.0);
  EXPECT_NEAR(l.loss, cfg.value_coef * l.value_loss - cfg.entropy_coef * l.entropy, 1e-15);
  for (double g : l.grads.actor.layers[0].w) EXPECT_EQ(g, 0.0);
  const double ent = 3 * (-0.3 + 0.5 * std::log(2 * std::numbers::pi * std::numbers::e));
  EXPECT_NEAR(l.entropy, ent, 1e-12);
}

void check_loss_gradient(PolicyKind kind) {
  auto collector = small_policy(kind, 15);
  const auto b = collect(collector, 3, 5, 16);
  // evaluate slightly away from the collecting policy so ratios differ from 1
  auto p = collector;
  Rng jitter(17);
  p.for_each_tensor([&](nn::TensorRef t) {
    for (double& v : t.data) v += 0.02 * jitter.normal();
  });
  PpoConfig cfg;
  cfg.clip_eps = 0.5;
  const auto units = all_units(p, b);
  const auto l = ppo_loss(p, b, units, cfg);
  auto ps = nn::tensor_spans(p);
  const auto gs = nn::tensor_spans(l.grads);
  for (std::size_t t = 0; t < ps.size(); ++t) {
    for (std::size_t i = 0; i < ps[t].size(); i += 3) {
      const double saved = ps[t][i];
      ps[t][i] = saved + 1e-6;
      const double up = ppo_loss(p, b, units, cfg).loss;
      ps[t][i] = saved - 1e-6;
      const double down = ppo_loss(p, b, units, cfg).loss;
      ps[t][i] = saved;
      const double fd = (up - down) / 2e-6;
      ASSERT_NEAR(gs[t][i], fd, 1e-6 * std::max(1.0, std::abs(fd))) << t << " " << i;
    }
  }
}

TEST(PpoLoss, FeedforwardGradientMatchesFiniteDifference) {
  check_loss_gradient(PolicyKind::feedforward);
}

TEST(PpoLoss, RecurrentGradientMatchesFiniteDifference) {
  check_loss_gradient(PolicyKind::recurrent);
}

std::shared_ptr<const ForwardModel> toy_model() {
  auto m = std::make_shared<ForwardModel>();
  Rng rng(0);
  m->lstm = nn::make_lstm(3, 6, 3, rng);
  m->input_norm = {{6.5, 6.5, 6.5}, {3.0, 3.0, 3.0}};
  m->output_norm = {{0.0, 0.0, 100.0}, {10.0, 10.0, 5.0}};
  return m;
}

PpoConfig tiny_ppo(PolicyKind kind) {
  PpoConfig c;
  c.policy_kind = kind;
  c.total_updates = 3;
  c.n_envs = 3;
  c.rollout_length = 10;
  c.hidden = 6;
  c.seed = 21;
  return c;
}

TEST(Train, SeedDeterminism) {
  auto env = make_env_params(toy_model(), 13.0, Position{0, 0, 100});
  env.max_steps = 6;
  for (auto kind : {PolicyKind::feedforward, PolicyKind::recurrent}) {
    const auto a = train_policy(env, tiny_ppo(kind));
    const auto b = train_policy(env, tiny_ppo(kind));
    ASSERT_EQ(a.curve.points.size(), 3u);
    EXPECT_EQ(a.curve.returns(), b.curve.returns());
    EXPECT_EQ(a.params.log_std, b.params.log_std);
    EXPECT_LT(a.diagnostics.front().first_max_ratio_dev, 1e-12);
    auto cfg = tiny_ppo(kind);
    cfg.seed = 22;
    EXPECT_NE(train_policy(env, cfg).curve.returns(), a.curve.returns());
  }
}

TEST(Train, ZeroUpdatesReturnsInitialPolicy) {
  const auto env = make_env_params(toy_model(), 13.0, Position{0, 0, 100});
  auto cfg = tiny_ppo(PolicyKind::feedforward);
  cfg.total_updates = 0;
  const auto r = train_policy(env, cfg);
  EXPECT_TRUE(r.curve.points.empty());
  EXPECT_FALSE(r.converged);
  const auto again = train_policy(env, cfg);
  EXPECT_EQ(r.params.actor.layers[0].w, again.params.actor.layers[0].w);
  const auto eval = evaluate_policy(r.params, env, 4, 1);
  EXPECT_EQ(eval.episodes, 4u);
  EXPECT_LE(eval.mean_return, 0.0);
}

TEST(Train, ConfigJsonRoundTrip) {
  auto cfg = tiny_ppo(PolicyKind::recurrent);
  cfg.reward_scale = 0.25;
  const nlohmann::json j = cfg;
  EXPECT_EQ(j.get<PpoConfig>(), cfg);
  cfg.clip_eps = -1;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

}  // namespace
}  // namespace softreach
