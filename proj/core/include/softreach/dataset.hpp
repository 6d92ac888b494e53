#ifndef SOFTREACH_DATASET_HPP_
#define SOFTREACH_DATASET_HPP_

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "softreach/exploration.hpp"
#include "softreach/surrogate.hpp"

namespace softreach {

struct RunRow {
  double t = 0.0;  // s
  Pressures p;     // kPa
  Position pos{};  // mm
};

// Aligned pressure/position stream from one collection session.
struct Run {
  std::string id;
  std::vector<RunRow> rows;

  std::size_t size() const { return rows.size(); }
  std::size_t n_valves() const { return rows.empty() ? 0 : rows.front().p.size(); }
  // strictly increasing time, constant arity, finite values
  void validate() const;
};

struct PressureSample {
  double t = 0.0;
  Pressures p;
};

struct MocapSample {
  double t = 0.0;
  Position pos{};
};

// Attaches a pressure to every mocap row. Each pressure sample claims the
// mocap row nearest in time; unclaimed rows hold the most recent claimed
// pressure, and rows before the first claim take the first pressure.
Run align(std::span<const PressureSample> pressure_log,
          std::span<const MocapSample> mocap_log, std::string id = {});

// Run CSV: t_s,p1_kpa,..,x_mm,y_mm,z_mm
void write_run_csv(std::ostream& out, const Run& run);
Run read_run_csv(std::istream& in, const std::string& source = "csv");
Run read_run_file(const std::filesystem::path& path);

// Raw logs: t_s,p1_kpa,.. and t_s,x_mm,y_mm,z_mm
std::vector<PressureSample> read_pressure_log(std::istream& in,
                                              const std::string& source = "csv");
std::vector<MocapSample> read_mocap_log(std::istream& in,
                                        const std::string& source = "csv");

enum class Ordering { permuted, sequential };
enum class SplitMode { pair, run };

struct DatasetConfig {
  std::size_t window_length = 512;
  std::size_t step = 1;
  double split_fraction = 0.75;
  Ordering ordering = Ordering::permuted;
  SplitMode split_mode = SplitMode::pair;
  std::uint64_t split_seed = 0;

  void validate() const;

  friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

// Fixed-length input/target window; row-major, one row per time step.
struct SequencePair {
  std::size_t window_length = 0;
  std::size_t n_valves = 0;
  std::vector<double> inputs;   // window_length x n_valves, kPa
  std::vector<double> targets;  // window_length x 3, mm
  std::string source_run;
  std::size_t start_index = 0;

  double input(std::size_t t, std::size_t j) const { return inputs[t * n_valves + j]; }
  double target(std::size_t t, std::size_t k) const { return targets[t * 3 + k]; }
};

// floor((length - window) / step) + 1, or 0 when the run is too short.
std::size_t pair_count(std::size_t length, std::size_t window, std::size_t step);

std::vector<SequencePair> make_pairs(const Run& run, const DatasetConfig& cfg);
// Concatenation over runs in the given order; jobs > 1 builds runs
// concurrently with identical output.
std::vector<SequencePair> make_pairs(std::span<const Run> runs,
                                     const DatasetConfig& cfg, std::size_t jobs = 1);

// Indices into the pair list.
struct DatasetSplit {
  std::vector<std::size_t> train;  // epoch-0 order
  std::vector<std::size_t> test;   // source order
};

DatasetSplit split_and_order(std::span<const SequencePair> pairs,
                             const DatasetConfig& cfg);

// Visiting order of n training items for an epoch: identity when sequential,
// otherwise a shuffle seeded with seed + epoch.
std::vector<std::size_t> epoch_order(std::size_t n, Ordering ordering,
                                     std::uint64_t seed, std::size_t epoch);

std::string to_string(Ordering ordering);
std::string to_string(SplitMode mode);
Ordering parse_ordering(const std::string& text);
SplitMode parse_split_mode(const std::string& text);

void to_json(nlohmann::json& j, const DatasetConfig& cfg);
void from_json(const nlohmann::json& j, DatasetConfig& cfg);

// Dataset manifest: run files, config and the pair-level split assignment.
struct DatasetManifest {
  DatasetConfig config;
  std::vector<std::string> run_files;
  std::vector<std::string> run_ids;
  std::vector<std::size_t> run_lengths;
  // (run index, start index) per pair
  std::vector<std::array<std::size_t, 2>> train;
  std::vector<std::array<std::size_t, 2>> test;
};

DatasetManifest make_manifest(std::span<const Run> runs,
                              const std::vector<std::string>& run_files,
                              std::span<const SequencePair> pairs,
                              const DatasetSplit& split, const DatasetConfig& cfg);
nlohmann::json manifest_to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const nlohmann::json& j);

// Materialized train and test pairs for a manifest; run files resolve
// relative to base_dir. Train pairs come back in source order.
struct LoadedDataset {
  std::vector<Run> runs;
  std::vector<SequencePair> train;
  std::vector<SequencePair> test;
};
LoadedDataset load_dataset(const DatasetManifest& manifest,
                           const std::filesystem::path& base_dir);

}  // namespace softreach

#endif  // SOFTREACH_DATASET_HPP_
