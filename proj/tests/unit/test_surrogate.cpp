#include <gtest/gtest.h>

#include <cmath>

#include "softreach/dataset.hpp"
#include "softreach/errors.hpp"
#include "softreach/surrogate.hpp"

namespace softreach {
namespace {

SurrogateConfig noiseless() {
  SurrogateConfig c;
  c.sensor_noise_std = 0.0;
  return c;
}

TEST(Surrogate, EqualPressuresCancelPlanarMotion) {
  const auto cfg = noiseless();
  Rng rng(0);
  SurrogateState s{{0, 0, 0}};
  for (int i = 0; i < 3; ++i) s = surrogate_step(s, std::vector<double>{4, 4, 4}, cfg, rng).state;
  const auto pos = surrogate_position(s.q, cfg);
  EXPECT_NEAR(pos[0], 0.0, 1e-12);
  EXPECT_NEAR(pos[1], 0.0, 1e-12);
  EXPECT_NEAR(pos[2], cfg.z0 - 3 * cfg.compression_gain * s.q[0], 1e-12);
}

TEST(Surrogate, LagConvergesToHeldPressure) {
  const auto cfg = noiseless();
  Rng rng(0);
  SurrogateState s{{0, 0, 0}};
  const std::vector<double> p{1.0, 5.0, 2.5};
  const int steps = static_cast<int>(std::ceil(10 * cfg.tau / cfg.dt));
  for (int i = 0; i < steps; ++i) s = surrogate_step(s, p, cfg, rng).state;
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(s.q[j], p[j], 1e-3);
}

TEST(Surrogate, SingleStepHandValue) {
  SurrogateConfig cfg = noiseless();
  cfg.tau = 1.0;
  cfg.dt = 0.5;
  cfg.gain = 1.0;
  Rng rng(0);
  const auto out = surrogate_step(SurrogateState{{0, 0, 0}}, std::vector<double>{1, 0, 0}, cfg, rng);
  EXPECT_DOUBLE_EQ(out.state.q[0], 0.5);
  EXPECT_DOUBLE_EQ(out.state.q[1], 0.0);
  EXPECT_NEAR(out.position[0], 0.5, 1e-15);
  EXPECT_NEAR(out.position[1], 0.0, 1e-15);
}

TEST(Surrogate, NoiseIsSeededAndHasConfiguredSpread) {
  SurrogateConfig cfg;
  cfg.sensor_noise_std = 0.5;
  Rng a(4), b(4);
  const SurrogateState s{{1, 2, 3}};
  const std::vector<double> p{1, 2, 3};
  EXPECT_EQ(surrogate_step(s, p, cfg, a).position, surrogate_step(s, p, cfg, b).position);
  const auto clean = surrogate_position(s.q, cfg);
  double sq = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const auto pos = surrogate_step(s, p, cfg, a).position;
    sq += (pos[0] - clean[0]) * (pos[0] - clean[0]);
  }
  EXPECT_NEAR(std::sqrt(sq / n), 0.5, 0.02);
}

TEST(Surrogate, LipschitzOnPressureBox) {
  // position is linear in q; Frobenius norm bounds the operator norm
  const auto cfg = noiseless();
  const double L = std::sqrt(3 * cfg.gain * cfg.gain + 3 * cfg.compression_gain * cfg.compression_gain);
  Rng rng(2);
  for (int i = 0; i < 2000; ++i) {
    std::vector<double> q1(3), q2(3);
    for (int j = 0; j < 3; ++j) {
      q1[j] = 13 * rng.uniform();
      q2[j] = 13 * rng.uniform();
    }
    const auto a = surrogate_position(q1, cfg), b = surrogate_position(q2, cfg);
    double dp = 0, dq = 0;
    for (int k = 0; k < 3; ++k) {
      dp += (a[k] - b[k]) * (a[k] - b[k]);
      dq += (q1[k] - q2[k]) * (q1[k] - q2[k]);
    }
    ASSERT_LE(std::sqrt(dp), L * std::sqrt(dq) + 1e-9);
  }
}

TEST(Surrogate, SimulateRunIsReproducible) {
  PressureSequence seq;
  for (int i = 0; i < 50; ++i) seq.steps.push_back({1.0 + 0.1 * i, 2.0, 0.5});
  const auto a = simulate_run(seq, noiseless(), std::vector<double>{0, 0, 0});
  const auto b = simulate_run(seq, noiseless(), std::vector<double>{0, 0, 0});
  ASSERT_EQ(a.size(), 50u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.rows[i].pos, b.rows[i].pos);
    EXPECT_DOUBLE_EQ(a.rows[i].t, 0.5 * static_cast<double>(i));
  }
}

TEST(Surrogate, RejectsBadInput) {
  auto cfg = noiseless();
  Rng rng(0);
  const SurrogateState s{{0, 0, 0}};
  EXPECT_THROW(surrogate_step(s, std::vector<double>{1, NAN, 0}, cfg, rng), NumericError);
  EXPECT_THROW(surrogate_step(s, std::vector<double>{1, 0}, cfg, rng), ConfigError);
  cfg.tau = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

}  // namespace
}  // namespace softreach
