#include "softreach/presets.hpp"

namespace softreach::presets {

SurrogateConfig benchmark_surrogate() {
  SurrogateConfig c;
  c.gain = 8.0;
  c.compression_gain = 5.0;
  return c;
}

ExplorationConfig benchmark_exploration(std::size_t run_index, std::size_t n_steps,
                                        std::uint64_t seed) {
  static constexpr double kAlphas[] = {0.0, 0.5, 0.9};
  static constexpr double kBetas[] = {0.05, 0.1, 0.3, 0.6};
  ExplorationConfig c;
  c.alpha = kAlphas[run_index % 3];
  c.beta = kBetas[run_index % 4];
  c.noise_std = 3.0;
  c.n_steps = n_steps;
  c.seed = Rng(seed).split(run_index).next_u64();
  return c;
}

std::vector<Run> benchmark_runs(std::size_t n_runs, std::size_t n_steps, std::uint64_t seed) {
  std::vector<Run> runs;
  for (std::size_t i = 0; i < n_runs; ++i) {
    const auto ecfg = benchmark_exploration(i, n_steps, seed);
    auto scfg = benchmark_surrogate();
    scfg.seed = Rng(seed).split(1000 + i).next_u64();
    const std::vector<double> q0(ecfg.n_valves, ecfg.p_b);
    Run run = simulate_run(generate_sequence(ecfg), scfg, q0);
    run.id = "bench" + std::to_string(i);
    runs.push_back(std::move(run));
  }
  return runs;
}

DatasetConfig benchmark_dataset() {
  DatasetConfig c;
  c.window_length = 512;
  c.step = 1;
  c.split_fraction = 0.75;
  c.split_seed = 0;
  return c;
}

ForwardTrainConfig benchmark_forward_training(Ordering ordering, std::size_t steps) {
  ForwardTrainConfig c;
  c.hidden = 32;
  c.batch_size = 8;
  c.lr = 2e-3;
  c.steps = steps;
  c.val_every = 25;
  c.val_max_pairs = 64;
  c.ordering = ordering;
  c.seed = 0;
  return c;
}

EnvParams benchmark_env(std::shared_ptr<const ForwardModel> model) {
  Position pose{};
  for (std::size_t k = 0; k < 3; ++k) pose[k] = model->output_norm.mean[k];
  EnvParams p = make_env_params(std::move(model), 13.0, pose);
  p.perturbation = {10.0, 10.0, 10.0};
  p.max_steps = 64;
  p.success_radius = 1.0;
  return p;
}

PpoConfig benchmark_ppo(PolicyKind kind, std::uint64_t seed) {
  PpoConfig c;
  c.policy_kind = kind;
  c.seed = seed;
  c.total_updates = 500;
  c.n_envs = 16;
  c.rollout_length = 128;
  c.lr = 1e-3;
  c.reward_scale = 0.01;
  // one env sequence per minibatch
  if (kind == PolicyKind::recurrent) c.minibatches = c.n_envs;
  return c;
}

}  // namespace softreach::presets
