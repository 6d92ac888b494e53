#ifndef SOFTREACH_PRESETS_HPP_
#define SOFTREACH_PRESETS_HPP_

#include <cstddef>
#include <cstdint>
#include <memory>
#include <vector>

#include "softreach/dataset.hpp"
#include "softreach/environment.hpp"
#include "softreach/exploration.hpp"
#include "softreach/forward_model.hpp"
#include "softreach/ppo.hpp"
#include "softreach/surrogate.hpp"

// Pinned configurations for the desk-scale benchmark: a stiffer surrogate
// whose explored workspace comfortably contains 10 mm goal perturbations, a
// compact forward model, and PPO settings sized for one CPU core.
namespace softreach::presets {

SurrogateConfig benchmark_surrogate();

// Exploration settings for run i: alpha cycles over {0, 0.5, 0.9}, beta over
// {0.05, 0.1, 0.3, 0.6}, both derived from i and seed.
ExplorationConfig benchmark_exploration(std::size_t run_index, std::size_t n_steps,
                                        std::uint64_t seed);

// n_runs surrogate runs of n_steps each, started at the preload pressure.
std::vector<Run> benchmark_runs(std::size_t n_runs = 20, std::size_t n_steps = 600,
                                std::uint64_t seed = 0);

DatasetConfig benchmark_dataset();
ForwardTrainConfig benchmark_forward_training(Ordering ordering, std::size_t steps = 20000);

// Task centred on the mean training position with 10 mm perturbation.
EnvParams benchmark_env(std::shared_ptr<const ForwardModel> model);
PpoConfig benchmark_ppo(PolicyKind kind, std::uint64_t seed);

}  // namespace softreach::presets

#endif  // SOFTREACH_PRESETS_HPP_
