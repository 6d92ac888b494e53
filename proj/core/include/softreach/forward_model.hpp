#ifndef SOFTREACH_FORWARD_MODEL_HPP_
#define SOFTREACH_FORWARD_MODEL_HPP_

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "softreach/dataset.hpp"
#include "softreach/neural.hpp"

namespace softreach {

// Per-channel affine normalization.
struct Normalizer {
  std::vector<double> mean;
  std::vector<double> std;

  std::size_t size() const { return mean.size(); }
  double norm(double x, std::size_t ch) const { return (x - mean[ch]) / std[ch]; }
  double denorm(double z, std::size_t ch) const { return z * std[ch] + mean[ch]; }
  void validate() const;
};

// Population statistics over rows of a row-major (n x width) buffer; channels
// with zero spread get std 1.
Normalizer fit_normalizer(std::span<const std::span<const double>> blocks, std::size_t width);

inline constexpr int kModelFormatVersion = 1;

// Learned plant: LSTM from normalized pressures to normalized positions.
struct ForwardModel {
  nn::LstmParams lstm;
  Normalizer input_norm;   // kPa
  Normalizer output_norm;  // mm
  std::size_t window_length = 0;
  nlohmann::json metadata = nlohmann::json::object();

  std::size_t n_valves() const { return lstm.input_dim; }
  void validate() const;
};

nlohmann::json to_json(const ForwardModel& model);
ForwardModel forward_model_from_json(const nlohmann::json& j);
void save_model(const ForwardModel& model, const std::filesystem::path& path);
ForwardModel load_model(const std::filesystem::path& path);

struct ForwardTrainConfig {
  std::size_t hidden = 64;
  std::size_t batch_size = 32;
  double lr = 3e-4;
  std::size_t steps = 200000;
  std::size_t val_every = 500;
  // validate on every k-th test pair when the test set is larger; 0 uses all
  std::size_t val_max_pairs = 0;
  double max_grad_norm = 1.0;
  Ordering ordering = Ordering::permuted;
  double ema_factor = 0.025;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const ForwardTrainConfig&, const ForwardTrainConfig&) = default;
};

void to_json(nlohmann::json& j, const ForwardTrainConfig& cfg);
void from_json(const nlohmann::json& j, ForwardTrainConfig& cfg);

struct TrainPoint {
  std::size_t step = 0;
  double train_loss = 0.0;  // NaN on rows without a gradient step
  double val_loss = 0.0;    // NaN between validation points
};

struct TrainReport {
  ForwardTrainConfig config;
  std::vector<TrainPoint> points;  // one per step index 0..steps
  double wall_seconds = 0.0;
  bool diverged = false;
  std::string failure;

  std::vector<double> train_losses() const;
  // validation losses at their logged steps, in order
  std::vector<double> val_losses() const;
  std::vector<std::size_t> val_steps() const;
  double final_smoothed_val() const;
  double final_smoothed_train() const;
};

// CSV: step,train_loss,val_loss (nan where absent)
void write_report_csv(std::ostream& out, const TrainReport& report);

struct TrainResult {
  ForwardModel model;
  TrainReport report;
};

using TrainProgress = std::function<void(const TrainPoint&)>;

// Mini-batch Adam on per-step MSE of normalized outputs. Normalization comes
// from the train set. Validation runs at step 0, every val_every steps and
// after the last step. A non-finite loss stops training and returns the last
// finite parameters with report.diverged set.
TrainResult train_forward(std::span<const SequencePair> train,
                          std::span<const SequencePair> test, const ForwardTrainConfig& cfg,
                          const TrainProgress& progress = {});

// Normalized MSE of the model over pairs (zero initial state per pair).
double normalized_loss(const ForwardModel& model, std::span<const SequencePair> pairs);

struct Rollout {
  std::vector<Position> positions;
  nn::LstmState state;  // batch 1
};

// Open-loop prediction for T x n_valves pressures (row-major), starting from
// state or zero.
Rollout rollout_model(const ForwardModel& model, std::span<const double> pressures,
                      const std::optional<nn::LstmState>& state = std::nullopt);

struct EvalSummary {
  std::array<double, 3> rmse_mm{};
  double rmse_total_mm = 0.0;
  double normalized_mse = 0.0;
  std::size_t n_pairs = 0;
};

EvalSummary evaluate(const ForwardModel& model, std::span<const SequencePair> pairs);

// Full-run open-loop RMSE against the recorded positions, mm.
EvalSummary evaluate_run(const ForwardModel& model, const Run& run);

nlohmann::json to_json(const EvalSummary& s);

}  // namespace softreach

#endif  // SOFTREACH_FORWARD_MODEL_HPP_
