#ifndef SOFTREACH_PPO_HPP_
#define SOFTREACH_PPO_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <type_traits>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "softreach/environment.hpp"
#include "softreach/neural.hpp"
#include "softreach/rng.hpp"

namespace softreach {

enum class PolicyKind { feedforward, recurrent };

std::string to_string(PolicyKind kind);
PolicyKind parse_policy_kind(const std::string& text);

// Actor-critic with a tanh-squashed Gaussian over the action box.
// Feedforward: separate actor and critic MLPs on the scaled observation.
// Recurrent: an LSTM trunk on the scaled observation feeding linear actor and
// critic heads.
struct PolicyParams {
  PolicyKind kind = PolicyKind::feedforward;
  nn::MlpParams actor;
  nn::MlpParams critic;
  nn::LstmParams trunk;         // recurrent only, no readout
  std::vector<double> log_std;  // per valve, pre-squash
  // fixed input scaling: (obs - offset) / scale
  std::vector<double> obs_offset;
  std::vector<double> obs_scale;
  std::vector<double> action_low;
  std::vector<double> action_high;

  std::size_t n_valves() const { return log_std.size(); }
  std::size_t obs_dim() const { return obs_offset.size(); }
  void validate() const;

  template <class F>
  void for_each_tensor(F&& f) {
    visit(*this, f);
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    visit(*this, f);
  }

 private:
  template <class Self, class F>
  static void visit(Self& self, F& f) {
    auto prefixed = [&f](const char* prefix) {
      return [&f, prefix](auto t) {
        t.name = std::string(prefix) + t.name;
        f(t);
      };
    };
    self.actor.for_each_tensor(prefixed("actor."));
    self.critic.for_each_tensor(prefixed("critic."));
    if (self.kind == PolicyKind::recurrent) self.trunk.for_each_tensor(prefixed("trunk."));
    using Ref = std::conditional_t<std::is_const_v<Self>, nn::ConstTensorRef, nn::TensorRef>;
    f(Ref{"log_std", self.log_std, self.log_std.size(), 1});
  }
};

struct PolicyShape {
  PolicyKind kind = PolicyKind::feedforward;
  std::size_t hidden = 64;
  double init_log_std = 0.0;
  double actor_output_scale = 0.01;
};

PolicyParams make_policy(const PolicyShape& shape, std::span<const double> obs_offset,
                         std::span<const double> obs_scale, std::span<const double> action_low,
                         std::span<const double> action_high, Rng& rng);

// Scaling centred on the initial pose with the goal perturbation as unit.
PolicyParams make_policy_for_env(const PolicyShape& shape, const EnvParams& env, Rng& rng);

nlohmann::json to_json(const PolicyParams& p);
PolicyParams policy_from_json(const nlohmann::json& j);

// low + (high - low) * (tanh(u) + 1) / 2
double squash(double u, double low, double high);
double unsquash(double a, double low, double high);

// Log density of the squashed action produced from pre-squash sample u:
// Gaussian log density of u plus the change-of-variables terms of the tanh
// and the affine map.
double squashed_log_prob(std::span<const double> u, std::span<const double> mean,
                         std::span<const double> log_std, std::span<const double> low,
                         std::span<const double> high);

struct ActResult {
  std::vector<double> action;  // kPa, inside the box
  std::vector<double> pre_squash;
  double log_prob = 0.0;
  double value = 0.0;
  std::optional<nn::LstmState> hidden;  // recurrent only
};

// deterministic: action = squash(mean), log_prob evaluated at u = mean
ActResult act(const PolicyParams& params, const Observation& obs,
              const std::optional<nn::LstmState>& hidden, Rng& rng, bool deterministic = false);

struct BatchAct {
  std::vector<double> actions;     // N x n_valves
  std::vector<double> pre_squash;  // N x n_valves
  std::vector<double> mean;        // N x n_valves
  std::vector<double> log_prob;    // N
  std::vector<double> value;       // N
  nn::LstmState hidden;            // recurrent only, batch N
};

// N observations at once; rngs[i] drives env i. hidden must have batch N for
// the recurrent policy. Column i equals act() on env i alone.
BatchAct act_batch(const PolicyParams& params, std::span<const Observation> obs,
                   const nn::LstmState* hidden, std::span<Rng> rngs, bool deterministic);

struct Gae {
  std::vector<double> advantages;
  std::vector<double> returns;
};

// values has one more entry than rewards (the bootstrap value). dones[t]
// marks the end of an episode at step t and cuts both the bootstrap and the
// advantage recursion.
Gae compute_gae(std::span<const double> rewards, std::span<const double> values,
                std::span<const std::uint8_t> dones, double gamma, double lambda);

struct PpoConfig {
  std::size_t total_updates = 500;
  std::size_t n_envs = 16;
  std::size_t rollout_length = 128;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_eps = 0.2;
  std::size_t epochs_per_update = 4;
  std::size_t minibatches = 4;
  double lr = 3e-4;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  double max_grad_norm = 0.5;
  std::uint64_t seed = 0;
  PolicyKind policy_kind = PolicyKind::feedforward;
  std::size_t hidden = 64;
  double init_log_std = 0.0;
  // multiplies rewards for the value and advantage targets only
  double reward_scale = 1.0;
  bool stop_on_convergence = true;
  std::size_t convergence_updates = 50;
  double ema_factor = 0.025;

  void validate() const;
  friend bool operator==(const PpoConfig&, const PpoConfig&) = default;
};

void to_json(nlohmann::json& j, const PpoConfig& cfg);
void from_json(const nlohmann::json& j, PpoConfig& cfg);

// On-policy data for one update, [env][time] flattened as env * T + t.
struct RolloutBatch {
  std::size_t n_envs = 0;
  std::size_t steps = 0;
  std::size_t n_valves = 0;
  std::vector<Observation> obs;
  std::vector<double> pre_squash;  // n_valves per entry
  std::vector<double> log_prob;
  std::vector<double> values;      // value of obs
  std::vector<double> advantages;
  std::vector<double> returns;
  // recurrent: episode-start flags and the trunk state entering t = 0
  std::vector<std::uint8_t> starts;
  nn::LstmState initial_hidden;
};

struct UpdateDiagnostics {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  // first minibatch of the first epoch, before any parameter change
  double first_max_ratio_dev = 0.0;
  double first_surrogate = 0.0;
  double first_mean_advantage = 0.0;
};

// Minibatch loss and gradient of the clipped objective, exposed for testing.
struct SurrogateTerms {
  double surrogate = 0.0;  // mean of min(rA, clip(r)A)
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  double max_ratio_dev = 0.0;
  // d(-surrogate)/d(new log prob) per sample
  std::vector<double> d_log_prob;
};

SurrogateTerms clipped_surrogate(std::span<const double> new_log_prob,
                                 std::span<const double> old_log_prob,
                                 std::span<const double> advantages, double clip_eps);

struct PpoLoss {
  double loss = 0.0;  // -surrogate + value_coef * value_loss - entropy_coef * entropy
  SurrogateTerms terms;
  double value_loss = 0.0;
  double entropy = 0.0;
  double mean_advantage = 0.0;  // after per-minibatch normalization
  PolicyParams grads;
};

// Loss and exact gradient on one minibatch. units are sample indices for the
// feedforward policy and environment indices (whole rollout sequences) for
// the recurrent one.
PpoLoss ppo_loss(const PolicyParams& params, const RolloutBatch& batch,
                 std::span<const std::size_t> units, const PpoConfig& cfg);

// Runs epochs_per_update passes of minibatch Adam over the batch.
UpdateDiagnostics ppo_update(PolicyParams& params, const RolloutBatch& batch,
                             const PpoConfig& cfg, nn::AdamState& adam, Rng& rng);

struct CurvePoint {
  std::size_t update = 0;
  double mean_return = 0.0;  // over episodes finished during the update's rollout
  double std_return = 0.0;
  std::size_t env_steps = 0;
  double mean_terminal_dist = 0.0;  // mm
  std::size_t episodes = 0;
};

struct TrainingCurve {
  std::uint64_t seed = 0;
  std::vector<CurvePoint> points;

  std::vector<double> returns() const;
  std::vector<double> terminal_distances() const;
};

// CSV: update,mean_return,std_return,env_steps,mean_terminal_dist_mm
void write_curve_csv(std::ostream& out, const TrainingCurve& curve);

struct PolicyTrainResult {
  PolicyParams params;
  TrainingCurve curve;
  std::vector<UpdateDiagnostics> diagnostics;
  bool converged = false;
  bool diverged = false;
  std::string failure;
};

using PolicyProgress = std::function<void(const CurvePoint&, const UpdateDiagnostics&)>;

PolicyTrainResult train_policy(const EnvParams& env, const PpoConfig& cfg,
                               const PolicyProgress& progress = {});

struct PolicyEval {
  double mean_terminal_dist = 0.0;  // mm
  double mean_return = 0.0;
  double success_rate = 0.0;
  std::size_t episodes = 0;
};

// One episode per environment stream, run until done.
PolicyEval evaluate_policy(const PolicyParams& params, const EnvParams& env,
                           std::size_t episodes, std::uint64_t seed, bool deterministic = true);

nlohmann::json to_json(const PolicyEval& e);

}  // namespace softreach

#endif  // SOFTREACH_PPO_HPP_
