#ifndef SOFTREACH_SURROGATE_HPP_
#define SOFTREACH_SURROGATE_HPP_

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "softreach/exploration.hpp"
#include "softreach/rng.hpp"

namespace softreach {

// Cartesian tip position, mm.
using Position = std::array<double, 3>;

struct Run;

// Synthetic plant: first-order lag on each chamber pressure, chambers spaced
// evenly around the vertical axis, planar bending plus axial compression.
struct SurrogateConfig {
  double tau = 1.5;               // lag time constant, s
  double dt = 0.5;                // control period, s
  double gain = 1.2;              // planar bending, mm/kPa
  double z0 = 120.0;              // rest height, mm
  double compression_gain = 0.8;  // axial shortening, mm/kPa
  double sensor_noise_std = 0.1;  // mm
  std::uint64_t seed = 0;

  void validate() const;

  friend bool operator==(const SurrogateConfig&, const SurrogateConfig&) = default;
};

void to_json(nlohmann::json& j, const SurrogateConfig& cfg);
void from_json(const nlohmann::json& j, SurrogateConfig& cfg);

struct SurrogateState {
  std::vector<double> q;  // lagged chamber pressures, kPa
};

struct SurrogateStep {
  SurrogateState state;
  Position position;
};

SurrogateStep surrogate_step(const SurrogateState& state, std::span<const double> p,
                             const SurrogateConfig& cfg, Rng& rng);

// Noise-free position for lagged pressures q.
Position surrogate_position(std::span<const double> q, const SurrogateConfig& cfg);

// Drives the surrogate with seq from initial lagged pressures q0. Row i has
// t = i * dt, the pressure applied at that tick and the position it produced.
Run simulate_run(const PressureSequence& seq, const SurrogateConfig& cfg,
                 std::span<const double> q0);

}  // namespace softreach

#endif  // SOFTREACH_SURROGATE_HPP_
