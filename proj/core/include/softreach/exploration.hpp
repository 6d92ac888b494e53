#ifndef SOFTREACH_EXPLORATION_HPP_
#define SOFTREACH_EXPLORATION_HPP_

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "softreach/rng.hpp"

namespace softreach {

// Per-valve pressures, kPa.
using Pressures = std::vector<double>;

// Lower clamp for starred values before normalization, kPa.
inline constexpr double kStarredFloor = 1e-6;

// Mean-reverting random walk in actuation space with a sigmoid budget on the
// total pressure.
struct ExplorationConfig {
  double alpha = 0.9;      // weight of the previous pressure, [0, 1]
  double beta = 0.1;       // sigmoid slope on the starred total, > 0
  double p_max = 13.0;     // total pressure budget, kPa
  double p_b = 2.0;        // preload pressure the draws revert to, kPa
  std::size_t n_valves = 3;
  std::size_t n_steps = 50;
  double noise_std = 1.0;  // std of the reversion draw, kPa
  std::uint64_t seed = 0;

  // Throws ConfigError on violated invariants or non-finite fields.
  void validate() const;

  friend bool operator==(const ExplorationConfig&, const ExplorationConfig&) = default;
};

void to_json(nlohmann::json& j, const ExplorationConfig& cfg);
void from_json(const nlohmann::json& j, ExplorationConfig& cfg);

struct PressureSequence {
  std::vector<Pressures> steps;
  // nullopt marks a policy-generated sequence
  std::optional<ExplorationConfig> config;

  std::size_t size() const { return steps.size(); }
  std::size_t n_valves() const { return steps.empty() ? 0 : steps.front().size(); }
};

// Intermediate values of one walk update, exposed for analysis.
struct ExploreTrace {
  Pressures starred;  // after clamping
  Pressures next;
};

ExploreTrace explore_step_traced(std::span<const double> prev,
                                 const ExplorationConfig& cfg, Rng& rng);

// One walk update. Draws n_valves normals from rng, in valve order.
Pressures explore_step(std::span<const double> prev, const ExplorationConfig& cfg,
                       Rng& rng);

// n_steps updates starting from the all-p_b preload vector (not emitted).
PressureSequence generate_sequence(const ExplorationConfig& cfg);

// CSV: step,p1_kpa,...,pN_kpa
void write_pressure_csv(std::ostream& out, const PressureSequence& seq);
PressureSequence read_pressure_csv(std::istream& in, const std::string& source = "csv");

}  // namespace softreach

#endif  // SOFTREACH_EXPLORATION_HPP_
