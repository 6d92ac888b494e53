#include "softreach/environment.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <thread>

#include "softreach/csv.hpp"
#include "softreach/errors.hpp"

namespace softreach {

namespace {

constexpr std::uint64_t kEnvStreamTag = 0x656e76;  // "env"

void clip_into(std::span<const double> action, const EnvParams& p, double* out) {
  if (action.size() != p.n_valves()) throw ConfigError("action has wrong arity");
  for (std::size_t j = 0; j < action.size(); ++j) {
    if (!std::isfinite(action[j])) throw ConfigError("non-finite action");
    out[j] = std::clamp(action[j], p.action_low[j], p.action_high[j]);
  }
}

double distance(const Position& a, const Position& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

void finish(StepResult& r, const EnvParams& p) {
  r.distance = distance(r.state.goal, r.state.position);
  r.reward = -r.distance;
  r.state.step_count += 1;
  r.done = r.distance < p.success_radius || r.state.step_count >= p.max_steps;
  r.obs = observe(r.state);
}

}  // namespace

void EnvParams::validate() const {
  if (!model) throw ConfigError("environment: no model");
  if (max_steps < 1) throw ConfigError("environment: max_steps must be >= 1");
  if (!(success_radius > 0.0)) throw ConfigError("environment: success_radius must be > 0");
  if (action_low.size() != model->n_valves() || action_high.size() != model->n_valves()) {
    throw ConfigError("environment: action bounds do not match the model's valve count");
  }
  for (std::size_t j = 0; j < action_low.size(); ++j) {
    if (!(action_low[j] < action_high[j])) throw ConfigError("environment: action low >= high");
  }
  for (double v : perturbation) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("environment: invalid perturbation");
  }
  for (double v : initial_pose) {
    if (!std::isfinite(v)) throw ConfigError("environment: non-finite initial pose");
  }
}

EnvParams make_env_params(std::shared_ptr<const ForwardModel> model, double p_max,
                          const Position& initial_pose) {
  EnvParams p;
  const std::size_t n = model->n_valves();
  p.model = std::move(model);
  p.initial_pose = initial_pose;
  p.action_low.assign(n, 0.0);
  p.action_high.assign(n, p_max);
  p.validate();
  return p;
}

Position steady_state_position(const ForwardModel& model, std::span<const double> pressure,
                               std::size_t steps) {
  if (pressure.size() != model.n_valves() || steps == 0) {
    throw ConfigError("steady_state_position: bad pressure or step count");
  }
  std::vector<double> seq;
  for (std::size_t t = 0; t < steps; ++t) seq.insert(seq.end(), pressure.begin(), pressure.end());
  return rollout_model(model, seq).positions.back();
}

nlohmann::json env_config_json(const EnvParams& p) {
  return {{"initial_pose", p.initial_pose},
          {"perturbation", p.perturbation},
          {"max_steps", p.max_steps},
          {"success_radius", p.success_radius},
          {"action_low", p.action_low},
          {"action_high", p.action_high}};
}

void apply_env_config(const nlohmann::json& j, EnvParams& p) {
  if (j.contains("initial_pose")) p.initial_pose = j.at("initial_pose").get<Position>();
  if (j.contains("perturbation")) {
    p.perturbation = j.at("perturbation").get<std::array<double, 3>>();
  }
  p.max_steps = j.value("max_steps", p.max_steps);
  p.success_radius = j.value("success_radius", p.success_radius);
  if (j.contains("action_low")) p.action_low = j.at("action_low").get<std::vector<double>>();
  if (j.contains("action_high")) p.action_high = j.at("action_high").get<std::vector<double>>();
}

ResetResult reset(const EnvParams& params, Rng& rng) {
  ResetResult r;
  const std::size_t H = params.model->lstm.hidden_dim;
  r.state.h.assign(H, 0.0);
  r.state.c.assign(H, 0.0);
  r.state.position = params.initial_pose;
  for (std::size_t k = 0; k < 3; ++k) {
    r.state.goal[k] = params.initial_pose[k] + params.perturbation[k] * rng.normal();
  }
  r.state.step_count = 0;
  r.obs = observe(r.state);
  return r;
}

Rng env_stream(std::uint64_t seed, std::size_t env_index) {
  return Rng(seed).split(kEnvStreamTag).split(env_index);
}

ResetResult reset_episode(const EnvParams& params, const Rng& stream, std::uint64_t episode) {
  Rng rng = stream.split(episode);
  auto r = reset(params, rng);
  r.state.stream = stream;
  r.state.episode = episode;
  return r;
}

ResetResult auto_reset(const EnvState& finished, const EnvParams& params) {
  return reset_episode(params, finished.stream, finished.episode + 1);
}

StepResult step(const EnvState& state, std::span<const double> action, const EnvParams& params) {
  const auto& lstm = params.model->lstm;
  const std::size_t n = params.n_valves();
  if (state.h.size() != lstm.hidden_dim || state.c.size() != lstm.hidden_dim) {
    throw ConfigError("environment state does not match the model");
  }
  std::vector<double> x(n);
  clip_into(action, params, x.data());
  for (std::size_t j = 0; j < n; ++j) x[j] = params.model->input_norm.norm(x[j], j);

  StepResult r;
  r.state = state;
  double y[3];
  nn::lstm_step_batch(lstm, 1, x.data(), state.h.data(), state.c.data(), r.state.h.data(),
                      r.state.c.data(), y, nullptr);
  for (std::size_t k = 0; k < 3; ++k) r.state.position[k] = params.model->output_norm.denorm(y[k], k);
  finish(r, params);
  return r;
}

std::vector<StepResult> step_batch(std::span<const EnvState> states,
                                   std::span<const double> actions, const EnvParams& params) {
  const auto& lstm = params.model->lstm;
  const std::size_t N = states.size();
  const std::size_t n = params.n_valves();
  const std::size_t H = lstm.hidden_dim;
  if (actions.size() != N * n) throw ConfigError("step_batch: actions must be N x n_valves");

  std::vector<double> x(n * N), h(H * N), c(H * N), h2(H * N), c2(H * N), y(3 * N);
  std::vector<double> a(n);
  for (std::size_t b = 0; b < N; ++b) {
    const auto& s = states[b];
    if (s.h.size() != H || s.c.size() != H) {
      throw ConfigError("environment state does not match the model");
    }
    clip_into(actions.subspan(b * n, n), params, a.data());
    for (std::size_t j = 0; j < n; ++j) x[j * N + b] = params.model->input_norm.norm(a[j], j);
    for (std::size_t k = 0; k < H; ++k) {
      h[k * N + b] = s.h[k];
      c[k * N + b] = s.c[k];
    }
  }
  nn::lstm_step_batch(lstm, N, x.data(), h.data(), c.data(), h2.data(), c2.data(), y.data(),
                      nullptr);
  std::vector<StepResult> out(N);
  for (std::size_t b = 0; b < N; ++b) {
    auto& r = out[b];
    r.state = states[b];
    for (std::size_t k = 0; k < H; ++k) {
      r.state.h[k] = h2[k * N + b];
      r.state.c[k] = c2[k * N + b];
    }
    for (std::size_t k = 0; k < 3; ++k) {
      r.state.position[k] = params.model->output_norm.denorm(y[k * N + b], k);
    }
    finish(r, params);
  }
  return out;
}

namespace {

void record(Trajectories& tr, std::size_t env, std::size_t t, const Observation& obs,
            std::span<const double> action, const StepResult& r, const EnvParams& params) {
  const std::size_t i = tr.at(env, t);
  tr.obs[i] = obs;
  clip_into(action, params, tr.actions.data() + i * tr.n_valves);
  tr.rewards[i] = r.reward;
  tr.dones[i] = r.done ? 1 : 0;
  tr.goals[i] = r.state.goal;
  tr.positions[i] = r.state.position;
}

void run_env_sequential(const EnvParams& params, EnvState& state, std::size_t env,
                        const PolicyFn& policy, std::size_t T, Trajectories& tr) {
  for (std::size_t t = 0; t < T; ++t) {
    const Observation obs = observe(state);
    const auto action = policy(env, obs);
    auto r = step(state, action, params);
    record(tr, env, t, obs, action, r, params);
    state = r.done ? auto_reset(r.state, params).state : std::move(r.state);
  }
}

}  // namespace

Trajectories batched_rollout(const EnvParams& params, std::vector<EnvState>& states,
                             const PolicyFn& policy, std::size_t T, RolloutMode mode,
                             std::size_t jobs) {
  params.validate();
  const std::size_t N = states.size();
  if (N == 0) throw ConfigError("batched_rollout: need at least one environment");
  Trajectories tr;
  tr.n_envs = N;
  tr.steps = T;
  tr.n_valves = params.n_valves();
  tr.obs.resize(N * T);
  tr.actions.resize(N * T * tr.n_valves);
  tr.rewards.resize(N * T);
  tr.dones.resize(N * T);
  tr.goals.resize(N * T);
  tr.positions.resize(N * T);

  if (mode == RolloutMode::sequential) {
    for (std::size_t e = 0; e < N; ++e) run_env_sequential(params, states[e], e, policy, T, tr);
    return tr;
  }
  if (mode == RolloutMode::threaded) {
    const std::size_t workers = std::max<std::size_t>(1, std::min(jobs, N));
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t e = w; e < N; e += workers) {
          run_env_sequential(params, states[e], e, policy, T, tr);
        }
      });
    }
    for (auto& th : pool) th.join();
    return tr;
  }

  const std::size_t n = tr.n_valves;
  std::vector<Observation> obs(N);
  std::vector<double> actions(N * n);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t e = 0; e < N; ++e) {
      obs[e] = observe(states[e]);
      const auto a = policy(e, obs[e]);
      if (a.size() != n) throw ConfigError("policy returned an action of wrong arity");
      std::copy(a.begin(), a.end(), actions.begin() + static_cast<std::ptrdiff_t>(e * n));
    }
    auto results = step_batch(states, actions, params);
    for (std::size_t e = 0; e < N; ++e) {
      auto& r = results[e];
      record(tr, e, t, obs[e], std::span<const double>(actions).subspan(e * n, n), r, params);
      states[e] = r.done ? auto_reset(r.state, params).state : std::move(r.state);
    }
  }
  return tr;
}

void write_trajectory_csv(std::ostream& out, const Trajectories& tr) {
  std::vector<std::string> header{"env", "step"};
  for (std::size_t j = 0; j < tr.n_valves; ++j) header.push_back("p" + std::to_string(j + 1));
  for (const char* c : {"x", "y", "z", "gx", "gy", "gz", "reward", "done"}) header.emplace_back(c);
  csv::write_row(out, header);
  for (std::size_t e = 0; e < tr.n_envs; ++e) {
    for (std::size_t t = 0; t < tr.steps; ++t) {
      const std::size_t i = tr.at(e, t);
      std::vector<std::string> row{std::to_string(e), std::to_string(t)};
      for (std::size_t j = 0; j < tr.n_valves; ++j) {
        row.push_back(csv::format_number(tr.actions[i * tr.n_valves + j]));
      }
      for (double v : tr.positions[i]) row.push_back(csv::format_number(v));
      for (double v : tr.goals[i]) row.push_back(csv::format_number(v));
      row.push_back(csv::format_number(tr.rewards[i]));
      row.push_back(tr.dones[i] ? "1" : "0");
      csv::write_row(out, row);
    }
  }
}

}  // namespace softreach
