#include <benchmark/benchmark.h>

#include <memory>

#include "softreach/environment.hpp"
#include "softreach/exploration.hpp"
#include "softreach/neural.hpp"
#include "softreach/ppo.hpp"

namespace {

using namespace softreach;

nn::Sequence random_sequence(std::size_t T, std::size_t rows, std::size_t B, Rng& rng) {
  nn::Sequence s(T, rows, B);
  for (double& v : s.data) v = rng.normal();
  return s;
}

void BM_LstmStepBatch(benchmark::State& state) {
  const auto H = static_cast<std::size_t>(state.range(0));
  const auto B = static_cast<std::size_t>(state.range(1));
  Rng rng(0);
  const auto p = nn::make_lstm(3, H, 3, rng);
  std::vector<double> x(3 * B, 0.5), h(H * B), c(H * B), h2(H * B), c2(H * B), y(3 * B);
  for (auto _ : state) {
    nn::lstm_step_batch(p, B, x.data(), h.data(), c.data(), h2.data(), c2.data(), y.data(), nullptr);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(B));
}
BENCHMARK(BM_LstmStepBatch)->Args({32, 1})->Args({32, 16})->Args({64, 16});

void BM_LstmForwardBackward(benchmark::State& state) {
  const auto T = static_cast<std::size_t>(state.range(0));
  const auto H = static_cast<std::size_t>(state.range(1));
  const std::size_t B = 8;
  Rng rng(1);
  const auto p = nn::make_lstm(3, H, 3, rng);
  const auto x = random_sequence(T, 3, B, rng);
  const auto y = random_sequence(T, 3, B, rng);
  for (auto _ : state) {
    auto lg = nn::lstm_mse_loss(p, x, y);
    benchmark::DoNotOptimize(lg.loss);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(T * B));
}
BENCHMARK(BM_LstmForwardBackward)->Args({64, 32})->Args({512, 32})->Unit(benchmark::kMillisecond);

void BM_EnvStepBatch(benchmark::State& state) {
  const auto N = static_cast<std::size_t>(state.range(0));
  auto model = std::make_shared<ForwardModel>();
  Rng rng(2);
  model->lstm = nn::make_lstm(3, 32, 3, rng);
  model->input_norm = {{6.5, 6.5, 6.5}, {3, 3, 3}};
  model->output_norm = {{0, 0, 100}, {10, 10, 5}};
  const auto env = make_env_params(model, 13.0, Position{0, 0, 100});
  std::vector<EnvState> states;
  for (std::size_t e = 0; e < N; ++e) states.push_back(reset_episode(env, env_stream(0, e), 0).state);
  std::vector<double> actions(3 * N, 4.0);
  for (auto _ : state) {
    auto r = step_batch(states, actions, env);
    benchmark::DoNotOptimize(r.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(N));
}
BENCHMARK(BM_EnvStepBatch)->Arg(1)->Arg(16)->Arg(64);

void BM_Exploration(benchmark::State& state) {
  ExplorationConfig cfg;
  cfg.n_steps = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    auto seq = generate_sequence(cfg);
    benchmark::DoNotOptimize(seq.steps.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Exploration)->Arg(10000);

void BM_Gae(benchmark::State& state) {
  const auto T = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  std::vector<double> r(T), v(T + 1);
  std::vector<std::uint8_t> d(T);
  for (auto& x : r) x = rng.normal();
  for (auto& x : v) x = rng.normal();
  for (auto& x : d) x = rng.uniform() < 0.02;
  for (auto _ : state) {
    auto g = compute_gae(r, v, d, 0.99, 0.95);
    benchmark::DoNotOptimize(g.advantages.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(T));
}
BENCHMARK(BM_Gae)->Arg(128)->Arg(2048);

void BM_ActBatch(benchmark::State& state) {
  const auto kind = state.range(0) ? PolicyKind::recurrent : PolicyKind::feedforward;
  const std::size_t N = 16;
  Rng rng(4);
  const std::vector<double> offset{0, 0, 100, 0, 0, 100}, scale(6, 10.0), low(3, 0.0), high(3, 13.0);
  const auto p = make_policy(PolicyShape{kind, 64}, offset, scale, low, high, rng);
  std::vector<Observation> obs(N, Observation{1, 2, 100, 3, 4, 105});
  std::vector<Rng> rngs;
  for (std::size_t e = 0; e < N; ++e) rngs.push_back(Rng(5).split(e));
  const std::size_t H = kind == PolicyKind::recurrent ? 64 : 0;
  nn::LstmState hidden{nn::Batch(H, N), nn::Batch(H, N)};
  for (auto _ : state) {
    auto a = act_batch(p, obs, kind == PolicyKind::recurrent ? &hidden : nullptr, rngs, false);
    benchmark::DoNotOptimize(a.actions.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(N));
}
BENCHMARK(BM_ActBatch)->Arg(0)->Arg(1);

}  // namespace

BENCHMARK_MAIN();
