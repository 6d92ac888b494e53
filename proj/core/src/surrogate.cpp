#include "softreach/surrogate.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "softreach/dataset.hpp"
#include "softreach/errors.hpp"

namespace softreach {

void SurrogateConfig::validate() const {
  if (!std::isfinite(tau) || !std::isfinite(dt) || !std::isfinite(gain) ||
      !std::isfinite(z0) || !std::isfinite(compression_gain) ||
      !std::isfinite(sensor_noise_std)) {
    throw ConfigError("surrogate: non-finite parameter");
  }
  if (tau <= 0.0) throw ConfigError("surrogate: tau must be > 0");
  if (dt <= 0.0) throw ConfigError("surrogate: dt must be > 0");
  if (gain <= 0.0) throw ConfigError("surrogate: gain must be > 0");
  if (sensor_noise_std < 0.0) throw ConfigError("surrogate: sensor_noise_std must be >= 0");
}

void to_json(nlohmann::json& j, const SurrogateConfig& c) {
  j = {{"tau", c.tau},
       {"dt", c.dt},
       {"gain", c.gain},
       {"z0", c.z0},
       {"compression_gain", c.compression_gain},
       {"sensor_noise_std", c.sensor_noise_std},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SurrogateConfig& c) {
  c.tau = j.value("tau", c.tau);
  c.dt = j.value("dt", c.dt);
  c.gain = j.value("gain", c.gain);
  c.z0 = j.value("z0", c.z0);
  c.compression_gain = j.value("compression_gain", c.compression_gain);
  c.sensor_noise_std = j.value("sensor_noise_std", c.sensor_noise_std);
  c.seed = j.value("seed", c.seed);
}

Position surrogate_position(std::span<const double> q, const SurrogateConfig& cfg) {
  const double n = static_cast<double>(q.size());
  Position pos{0.0, 0.0, cfg.z0};
  for (std::size_t j = 0; j < q.size(); ++j) {
    const double theta = 2.0 * std::numbers::pi * static_cast<double>(j) / n;
    pos[0] += cfg.gain * q[j] * std::cos(theta);
    pos[1] += cfg.gain * q[j] * std::sin(theta);
    pos[2] -= cfg.compression_gain * q[j];
  }
  return pos;
}

SurrogateStep surrogate_step(const SurrogateState& state, std::span<const double> p,
                             const SurrogateConfig& cfg, Rng& rng) {
  if (p.size() != state.q.size()) {
    throw ConfigError("surrogate_step: expected " + std::to_string(state.q.size()) +
                      " pressures, got " + std::to_string(p.size()));
  }
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (!std::isfinite(p[j]) || !std::isfinite(state.q[j])) {
      throw NumericError("surrogate_step: non-finite input");
    }
    if (p[j] < 0.0) throw ConfigError("surrogate_step: negative pressure");
  }

  SurrogateStep out;
  out.state.q.resize(p.size());
  const double rate = cfg.dt / cfg.tau;
  for (std::size_t j = 0; j < p.size(); ++j) {
    out.state.q[j] = state.q[j] + (p[j] - state.q[j]) * rate;
  }
  out.position = surrogate_position(out.state.q, cfg);
  if (cfg.sensor_noise_std > 0.0) {
    for (double& x : out.position) x += rng.normal(0.0, cfg.sensor_noise_std);
  }
  return out;
}

Run simulate_run(const PressureSequence& seq, const SurrogateConfig& cfg,
                 std::span<const double> q0) {
  cfg.validate();
  Run run;
  SurrogateState state{std::vector<double>(q0.begin(), q0.end())};
  Rng rng(cfg.seed);
  run.rows.reserve(seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) {
    auto step = surrogate_step(state, seq.steps[i], cfg, rng);
    state = std::move(step.state);
    run.rows.push_back({static_cast<double>(i) * cfg.dt, seq.steps[i], step.position});
  }
  return run;
}

}  // namespace softreach
