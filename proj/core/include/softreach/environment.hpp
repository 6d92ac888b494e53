#ifndef SOFTREACH_ENVIRONMENT_HPP_
#define SOFTREACH_ENVIRONMENT_HPP_

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "softreach/forward_model.hpp"
#include "softreach/rng.hpp"

namespace softreach {

// position (mm) followed by goal (mm)
using Observation = std::array<double, 6>;

// Goal-reaching task around a learned plant.
struct EnvParams {
  std::shared_ptr<const ForwardModel> model;
  Position initial_pose{};
  std::array<double, 3> perturbation{10.0, 10.0, 10.0};  // per-axis goal std, mm
  std::size_t max_steps = 64;
  double success_radius = 1.0;  // mm
  std::vector<double> action_low;   // kPa per valve
  std::vector<double> action_high;  // kPa per valve

  std::size_t n_valves() const { return action_low.size(); }
  void validate() const;
};

// Box [0, p_max] on every valve of the model.
EnvParams make_env_params(std::shared_ptr<const ForwardModel> model, double p_max,
                          const Position& initial_pose);

// Model output after holding a constant pressure for `steps` ticks from zero
// state; a natural rest pose for the task.
Position steady_state_position(const ForwardModel& model, std::span<const double> pressure,
                               std::size_t steps = 40);

// Environment config without the model: every other EnvParams field.
nlohmann::json env_config_json(const EnvParams& p);
void apply_env_config(const nlohmann::json& j, EnvParams& p);

struct EnvState {
  std::vector<double> h;
  std::vector<double> c;
  Position position{};
  Position goal{};
  std::size_t step_count = 0;
  // goal draws for episode k come from stream.split(k)
  Rng stream{0};
  std::uint64_t episode = 0;

  friend bool operator==(const EnvState&, const EnvState&) = default;
};

inline Observation observe(const EnvState& s) {
  return {s.position[0], s.position[1], s.position[2], s.goal[0], s.goal[1], s.goal[2]};
}

struct ResetResult {
  EnvState state;
  Observation obs;
};

// Zero hidden state, position at initial_pose, goal = initial_pose +
// perturbation * N(0, 1) per axis, drawing three normals from rng.
ResetResult reset(const EnvParams& params, Rng& rng);

// Fresh environment for episode `episode` of the stream (seed, env_index).
ResetResult reset_episode(const EnvParams& params, const Rng& stream, std::uint64_t episode);
Rng env_stream(std::uint64_t seed, std::size_t env_index);

struct StepResult {
  EnvState state;
  Observation obs;
  double reward = 0.0;
  bool done = false;
  double distance = 0.0;  // mm, after the step
};

// Clips the action into the box, advances the model one tick and scores the
// new position. Pure: the input state is not modified.
StepResult step(const EnvState& state, std::span<const double> action, const EnvParams& params);

// Steps N environments at once through one batched model evaluation;
// actions are N x n_valves row-major. Bit-identical to N calls of step().
std::vector<StepResult> step_batch(std::span<const EnvState> states,
                                   std::span<const double> actions, const EnvParams& params);

// Replaces a finished environment with the next episode of its stream.
ResetResult auto_reset(const EnvState& finished, const EnvParams& params);

struct Trajectories {
  std::size_t n_envs = 0;
  std::size_t steps = 0;
  std::size_t n_valves = 0;
  // [env][time] flattened as env * steps + t
  std::vector<Observation> obs;       // observation the action was chosen from
  std::vector<double> actions;        // clipped, n_valves per entry
  std::vector<double> rewards;
  std::vector<std::uint8_t> dones;
  std::vector<Position> goals;        // goal the reward was scored against
  std::vector<Position> positions;    // position after the step

  std::size_t at(std::size_t env, std::size_t t) const { return env * steps + t; }
};

using PolicyFn = std::function<std::vector<double>(std::size_t env, const Observation& obs)>;

enum class RolloutMode { batched, sequential, threaded };

// Runs every environment for T steps with auto-reset on done. states is
// updated in place. All modes produce identical output.
Trajectories batched_rollout(const EnvParams& params, std::vector<EnvState>& states,
                             const PolicyFn& policy, std::size_t T,
                             RolloutMode mode = RolloutMode::batched, std::size_t jobs = 1);

// CSV: env,step,p1,..,x,y,z,gx,gy,gz,reward,done
void write_trajectory_csv(std::ostream& out, const Trajectories& tr);

}  // namespace softreach

#endif  // SOFTREACH_ENVIRONMENT_HPP_
