#include "softreach/exploration.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <string>

#include "softreach/csv.hpp"
#include "softreach/errors.hpp"

namespace softreach {

void ExplorationConfig::validate() const {
  auto finite = [](double v) { return std::isfinite(v); };
  if (!finite(alpha) || !finite(beta) || !finite(p_max) || !finite(p_b) ||
      !finite(noise_std)) {
    throw ConfigError("exploration: non-finite parameter");
  }
  if (alpha < 0.0 || alpha > 1.0) throw ConfigError("exploration: alpha must lie in [0, 1]");
  if (beta <= 0.0) throw ConfigError("exploration: beta must be > 0");
  if (!(p_b > 0.0 && p_b < p_max)) {
    throw ConfigError("exploration: need 0 < p_b < p_max");
  }
  if (n_valves < 1) throw ConfigError("exploration: n_valves must be >= 1");
  if (n_steps < 1) throw ConfigError("exploration: n_steps must be >= 1");
  if (noise_std <= 0.0) throw ConfigError("exploration: noise_std must be > 0");
}

void to_json(nlohmann::json& j, const ExplorationConfig& c) {
  j = {{"alpha", c.alpha},       {"beta", c.beta},
       {"p_max", c.p_max},       {"p_b", c.p_b},
       {"n_valves", c.n_valves}, {"n_steps", c.n_steps},
       {"noise_std", c.noise_std}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ExplorationConfig& c) {
  c.alpha = j.value("alpha", c.alpha);
  c.beta = j.value("beta", c.beta);
  c.p_max = j.value("p_max", c.p_max);
  c.p_b = j.value("p_b", c.p_b);
  c.n_valves = j.value("n_valves", c.n_valves);
  c.n_steps = j.value("n_steps", c.n_steps);
  c.noise_std = j.value("noise_std", c.noise_std);
  c.seed = j.value("seed", c.seed);
}

ExploreTrace explore_step_traced(std::span<const double> prev,
                                 const ExplorationConfig& cfg, Rng& rng) {
  cfg.validate();
  if (prev.size() != cfg.n_valves) {
    throw ConfigError("explore_step: expected " + std::to_string(cfg.n_valves) +
                      " pressures, got " + std::to_string(prev.size()));
  }
  for (double p : prev) {
    if (!std::isfinite(p)) throw ConfigError("explore_step: non-finite pressure");
    if (p < 0.0) throw ConfigError("explore_step: negative pressure");
  }

  ExploreTrace trace;
  trace.starred.resize(cfg.n_valves);
  double total = 0.0;
  for (std::size_t j = 0; j < cfg.n_valves; ++j) {
    const double draw = rng.normal(cfg.p_b, cfg.noise_std);
    const double s = cfg.alpha * prev[j] + (1.0 - cfg.alpha) * draw;
    trace.starred[j] = std::max(s, kStarredFloor);
    total += trace.starred[j];
  }

  // budget share in (0, 1), spread over valves in proportion to starred values
  const double budget = cfg.p_max / (1.0 + std::exp(-cfg.beta * total));
  trace.next.resize(cfg.n_valves);
  for (std::size_t j = 0; j < cfg.n_valves; ++j) {
    trace.next[j] = budget * trace.starred[j] / total;
  }
  return trace;
}

Pressures explore_step(std::span<const double> prev, const ExplorationConfig& cfg,
                       Rng& rng) {
  return explore_step_traced(prev, cfg, rng).next;
}

PressureSequence generate_sequence(const ExplorationConfig& cfg) {
  cfg.validate();
  PressureSequence seq;
  seq.config = cfg;
  seq.steps.reserve(cfg.n_steps);
  Rng rng(cfg.seed);
  Pressures current(cfg.n_valves, cfg.p_b);
  for (std::size_t i = 0; i < cfg.n_steps; ++i) {
    current = explore_step(current, cfg, rng);
    seq.steps.push_back(current);
  }
  return seq;
}

void write_pressure_csv(std::ostream& out, const PressureSequence& seq) {
  std::vector<std::string> header{"step"};
  for (std::size_t j = 0; j < seq.n_valves(); ++j) {
    header.push_back("p" + std::to_string(j + 1) + "_kpa");
  }
  csv::write_row(out, header);
  for (std::size_t i = 0; i < seq.steps.size(); ++i) {
    std::vector<std::string> cells{std::to_string(i)};
    for (double p : seq.steps[i]) cells.push_back(csv::format_number(p));
    csv::write_row(out, cells);
  }
}

PressureSequence read_pressure_csv(std::istream& in, const std::string& source) {
  auto table = csv::read(in, {}, source);
  const auto& h = table.header;
  if (h.size() < 2 || h[0] != "step") {
    throw FormatError(source + ": expected header step,p1_kpa,...", 1);
  }
  for (std::size_t j = 1; j < h.size(); ++j) {
    if (h[j] != "p" + std::to_string(j) + "_kpa") {
      throw FormatError(source + ": unexpected column '" + h[j] + "'", 1);
    }
  }
  PressureSequence seq;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    Pressures p(row.begin() + 1, row.end());
    for (double v : p) {
      if (!std::isfinite(v) || v < 0.0) {
        throw FormatError(source + ": pressures must be finite and >= 0", table.lines[r]);
      }
    }
    seq.steps.push_back(std::move(p));
  }
  return seq;
}

}  // namespace softreach
