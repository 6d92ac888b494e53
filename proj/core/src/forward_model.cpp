#include "softreach/forward_model.hpp"

#include <chrono>
#include <cmath>
#include <ostream>
#include <utility>

#include "softreach/csv.hpp"
#include "softreach/errors.hpp"
#include "softreach/manifest.hpp"
#include "softreach/stats.hpp"

namespace softreach {

namespace {

constexpr std::size_t kEvalBatch = 32;

// Pair data in normalized units, row-major per pair.
struct NormalizedPairs {
  std::size_t window = 0;
  std::size_t n_in = 0;
  std::vector<std::vector<double>> x;
  std::vector<std::vector<double>> y;
};

NormalizedPairs normalize_pairs(const ForwardModel& model, std::span<const SequencePair> pairs) {
  NormalizedPairs out;
  out.window = pairs.empty() ? 0 : pairs.front().window_length;
  out.n_in = model.n_valves();
  for (const auto& p : pairs) {
    if (p.window_length != out.window || p.n_valves != out.n_in) {
      throw ConfigError("pairs differ in shape from the model or each other");
    }
    std::vector<double> x(p.inputs.size()), y(p.targets.size());
    for (std::size_t t = 0; t < p.window_length; ++t) {
      for (std::size_t j = 0; j < out.n_in; ++j) {
        x[t * out.n_in + j] = model.input_norm.norm(p.input(t, j), j);
      }
      for (std::size_t k = 0; k < 3; ++k) y[t * 3 + k] = model.output_norm.norm(p.target(t, k), k);
    }
    out.x.push_back(std::move(x));
    out.y.push_back(std::move(y));
  }
  return out;
}

void fill_batch(const NormalizedPairs& data, std::span<const std::size_t> idx, nn::Sequence& x,
                nn::Sequence& y) {
  const std::size_t B = idx.size();
  x = nn::Sequence(data.window, data.n_in, B);
  y = nn::Sequence(data.window, 3, B);
  for (std::size_t b = 0; b < B; ++b) {
    const auto& xs = data.x[idx[b]];
    const auto& ys = data.y[idx[b]];
    for (std::size_t t = 0; t < data.window; ++t) {
      for (std::size_t j = 0; j < data.n_in; ++j) x(t, j, b) = xs[t * data.n_in + j];
      for (std::size_t k = 0; k < 3; ++k) y(t, k, b) = ys[t * 3 + k];
    }
  }
}

double batch_sq_error(const ForwardModel& model, const nn::Sequence& x, const nn::Sequence& y) {
  auto fwd = nn::lstm_forward(model.lstm, x, nn::zero_state(model.lstm, x.batch));
  double s = 0.0;
  for (std::size_t i = 0; i < y.data.size(); ++i) {
    const double r = fwd.outputs.data[i] - y.data[i];
    s += r * r;
  }
  return s;
}

double loss_on(const ForwardModel& model, const NormalizedPairs& data,
               std::span<const std::size_t> subset) {
  double s = 0.0;
  std::size_t n = 0;
  nn::Sequence x, y;
  for (std::size_t i = 0; i < subset.size(); i += kEvalBatch) {
    const auto chunk = subset.subspan(i, std::min(kEvalBatch, subset.size() - i));
    fill_batch(data, chunk, x, y);
    s += batch_sq_error(model, x, y);
    n += y.data.size();
  }
  return n ? s / static_cast<double>(n) : std::nan("");
}

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

nlohmann::json normalizer_json(const Normalizer& n) {
  return {{"mean", n.mean}, {"std", n.std}};
}

Normalizer normalizer_from_json(const nlohmann::json& j) {
  Normalizer n;
  n.mean = j.at("mean").get<std::vector<double>>();
  n.std = j.at("std").get<std::vector<double>>();
  n.validate();
  return n;
}

}  // namespace

void Normalizer::validate() const {
  if (mean.size() != std.size()) throw ConfigError("normalizer: mean/std size mismatch");
  for (std::size_t i = 0; i < std.size(); ++i) {
    if (!std::isfinite(mean[i]) || !(std[i] > 0.0) || !std::isfinite(std[i])) {
      throw ConfigError("normalizer: channel " + std::to_string(i) + " has invalid statistics");
    }
  }
}

Normalizer fit_normalizer(std::span<const std::span<const double>> blocks, std::size_t width) {
  Normalizer n;
  n.mean.assign(width, 0.0);
  n.std.assign(width, 0.0);
  std::size_t rows = 0;
  for (auto b : blocks) {
    if (b.size() % width != 0) throw ConfigError("fit_normalizer: ragged block");
    for (std::size_t i = 0; i < b.size(); ++i) n.mean[i % width] += b[i];
    rows += b.size() / width;
  }
  if (rows == 0) throw ConfigError("fit_normalizer: no data");
  for (double& m : n.mean) m /= static_cast<double>(rows);
  for (auto b : blocks) {
    for (std::size_t i = 0; i < b.size(); ++i) {
      const double d = b[i] - n.mean[i % width];
      n.std[i % width] += d * d;
    }
  }
  for (double& s : n.std) {
    s = std::sqrt(s / static_cast<double>(rows));
    if (!(s > 1e-12)) s = 1.0;
  }
  return n;
}

void ForwardModel::validate() const {
  lstm.validate();
  input_norm.validate();
  output_norm.validate();
  if (input_norm.size() != lstm.input_dim || output_norm.size() != lstm.output_dim ||
      lstm.output_dim != 3) {
    throw ConfigError("forward model: normalizer and network dimensions disagree");
  }
}

nlohmann::json to_json(const ForwardModel& m) {
  return {{"format", "softreach-model"},
          {"format_version", kModelFormatVersion},
          {"kind", "forward_model"},
          {"input_dim", m.lstm.input_dim},
          {"hidden_dim", m.lstm.hidden_dim},
          {"output_dim", m.lstm.output_dim},
          {"window_length", m.window_length},
          {"input_norm", normalizer_json(m.input_norm)},
          {"output_norm", normalizer_json(m.output_norm)},
          {"metadata", m.metadata},
          {"lstm", nn::to_json(m.lstm)}};
}

ForwardModel forward_model_from_json(const nlohmann::json& j) {
  if (j.value("kind", "") != "forward_model") throw FormatError("not a forward model", 0);
  if (j.value("format_version", 0) != kModelFormatVersion) {
    throw FormatError("unsupported model format version", 0);
  }
  ForwardModel m;
  m.lstm = nn::lstm_from_json(j.at("lstm"));
  m.input_norm = normalizer_from_json(j.at("input_norm"));
  m.output_norm = normalizer_from_json(j.at("output_norm"));
  m.window_length = j.at("window_length").get<std::size_t>();
  m.metadata = j.value("metadata", nlohmann::json::object());
  m.validate();
  return m;
}

void save_model(const ForwardModel& model, const std::filesystem::path& path) {
  write_json_file(path, to_json(model));
}

ForwardModel load_model(const std::filesystem::path& path) {
  try {
    return forward_model_from_json(read_json_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what(), 0);
  }
}

void ForwardTrainConfig::validate() const {
  if (hidden == 0) throw ConfigError("hidden size must be >= 1");
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be > 0");
  if (val_every == 0) throw ConfigError("val_every must be >= 1");
  if (!(max_grad_norm > 0.0)) throw ConfigError("max_grad_norm must be > 0");
  if (!(ema_factor > 0.0 && ema_factor <= 1.0)) throw ConfigError("ema factor must be in (0, 1]");
}

void to_json(nlohmann::json& j, const ForwardTrainConfig& c) {
  j = {{"hidden", c.hidden},
       {"batch_size", c.batch_size},
       {"lr", c.lr},
       {"steps", c.steps},
       {"val_every", c.val_every},
       {"val_max_pairs", c.val_max_pairs},
       {"max_grad_norm", c.max_grad_norm},
       {"ordering", to_string(c.ordering)},
       {"ema_factor", c.ema_factor},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ForwardTrainConfig& c) {
  ForwardTrainConfig d;
  c.hidden = j.value("hidden", d.hidden);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.lr = j.value("lr", d.lr);
  c.steps = j.value("steps", d.steps);
  c.val_every = j.value("val_every", d.val_every);
  c.val_max_pairs = j.value("val_max_pairs", d.val_max_pairs);
  c.max_grad_norm = j.value("max_grad_norm", d.max_grad_norm);
  c.ordering = parse_ordering(j.value("ordering", to_string(d.ordering)));
  c.ema_factor = j.value("ema_factor", d.ema_factor);
  c.seed = j.value("seed", d.seed);
}

std::vector<double> TrainReport::train_losses() const {
  std::vector<double> v;
  for (const auto& p : points) {
    if (std::isfinite(p.train_loss)) v.push_back(p.train_loss);
  }
  return v;
}

std::vector<double> TrainReport::val_losses() const {
  std::vector<double> v;
  for (const auto& p : points) {
    if (std::isfinite(p.val_loss)) v.push_back(p.val_loss);
  }
  return v;
}

std::vector<std::size_t> TrainReport::val_steps() const {
  std::vector<std::size_t> v;
  for (const auto& p : points) {
    if (std::isfinite(p.val_loss)) v.push_back(p.step);
  }
  return v;
}

double TrainReport::final_smoothed_val() const {
  const auto v = ema(val_losses(), config.ema_factor);
  return v.empty() ? std::nan("") : v.back();
}

double TrainReport::final_smoothed_train() const {
  const auto v = ema(train_losses(), config.ema_factor);
  return v.empty() ? std::nan("") : v.back();
}

void write_report_csv(std::ostream& out, const TrainReport& report) {
  csv::write_row(out, {"step", "train_loss", "val_loss"});
  for (const auto& p : report.points) {
    csv::write_row(out, {std::to_string(p.step), csv::format_number(p.train_loss),
                         csv::format_number(p.val_loss)});
  }
}

TrainResult train_forward(std::span<const SequencePair> train, std::span<const SequencePair> test,
                          const ForwardTrainConfig& cfg, const TrainProgress& progress) {
  cfg.validate();
  if (train.empty()) throw ConfigError("train_forward: empty train set");
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t n_in = train.front().n_valves;
  const std::size_t window = train.front().window_length;

  ForwardModel model;
  {
    std::vector<std::span<const double>> xs, ys;
    for (const auto& p : train) {
      xs.emplace_back(p.inputs);
      ys.emplace_back(p.targets);
    }
    model.input_norm = fit_normalizer(xs, n_in);
    model.output_norm = fit_normalizer(ys, 3);
  }
  Rng init_rng = Rng(cfg.seed).split(1);
  model.lstm = nn::make_lstm(n_in, cfg.hidden, 3, init_rng);
  model.window_length = window;
  nlohmann::json cfg_json = cfg;
  model.metadata = {{"train_config", cfg_json},
                    {"train_pairs", train.size()},
                    {"config_digest", hex64(fnv1a64(cfg_json.dump()))}};

  const auto train_data = normalize_pairs(model, train);
  const auto test_data = normalize_pairs(model, test);
  std::vector<std::size_t> val_subset;
  if (cfg.val_max_pairs > 0 && test.size() > cfg.val_max_pairs) {
    const std::size_t stride = (test.size() + cfg.val_max_pairs - 1) / cfg.val_max_pairs;
    for (std::size_t i = 0; i < test.size(); i += stride) val_subset.push_back(i);
  } else {
    val_subset = iota_indices(test.size());
  }

  TrainResult result;
  auto& report = result.report;
  report.config = cfg;
  report.points.resize(cfg.steps + 1);
  for (std::size_t s = 0; s <= cfg.steps; ++s) {
    report.points[s] = {s, std::nan(""), std::nan("")};
  }
  auto validate_at = [&](std::size_t s) {
    if (!val_subset.empty()) report.points[s].val_loss = loss_on(model, test_data, val_subset);
  };

  auto adam = nn::make_adam(model.lstm, nn::AdamConfig{.lr = cfg.lr});
  std::size_t epoch = 0;
  std::vector<std::size_t> order = epoch_order(train.size(), cfg.ordering, cfg.seed, epoch);
  std::size_t cursor = 0;
  nn::Sequence x, y;

  validate_at(0);
  if (progress && cfg.steps == 0) progress(report.points[0]);
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    if (cursor >= order.size()) {
      ++epoch;
      order = epoch_order(train.size(), cfg.ordering, cfg.seed, epoch);
      cursor = 0;
    }
    const std::size_t take = std::min(cfg.batch_size, order.size() - cursor);
    fill_batch(train_data, std::span(order).subspan(cursor, take), x, y);
    cursor += take;

    nn::LossAndGrad lg;
    try {
      lg = nn::lstm_mse_loss(model.lstm, x, y);
    } catch (const NumericError& e) {
      report.diverged = true;
      report.failure = std::string(e.what()) + " at gradient step " + std::to_string(s);
      report.points.resize(s + 1);
      break;
    }
    report.points[s].train_loss = lg.loss;
    auto g = nn::tensor_spans(lg.grads);
    nn::clip_global_norm(g, cfg.max_grad_norm);
    nn::LstmParams before = model.lstm;
    nn::adam_update(model.lstm, lg.grads, adam);
    if (!nn::all_finite(nn::tensor_spans(std::as_const(model.lstm)))) {
      model.lstm = std::move(before);
      report.diverged = true;
      report.failure = "non-finite parameters after gradient step " + std::to_string(s);
      report.points.resize(s + 1);
      break;
    }
    const std::size_t done = s + 1;
    if (done % cfg.val_every == 0 || done == cfg.steps) validate_at(done);
    if (progress) progress(report.points[s]);
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  result.model = std::move(model);
  return result;
}

double normalized_loss(const ForwardModel& model, std::span<const SequencePair> pairs) {
  const auto data = normalize_pairs(model, pairs);
  const auto idx = iota_indices(pairs.size());
  return loss_on(model, data, idx);
}

Rollout rollout_model(const ForwardModel& model, std::span<const double> pressures,
                      const std::optional<nn::LstmState>& state) {
  const std::size_t n_in = model.n_valves();
  if (pressures.size() % n_in != 0) throw ConfigError("rollout_model: ragged pressure input");
  const std::size_t T = pressures.size() / n_in;
  nn::LstmState init = state ? *state : nn::zero_state(model.lstm, 1);
  if (init.h.rows != model.lstm.hidden_dim || init.h.batch != 1) {
    throw ConfigError("rollout_model: state shape mismatch");
  }
  Rollout out;
  if (T == 0) {
    out.state = std::move(init);
    return out;
  }
  nn::Sequence x(T, n_in, 1);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t j = 0; j < n_in; ++j) {
      const double p = pressures[t * n_in + j];
      if (!std::isfinite(p)) throw NumericError("rollout_model: non-finite pressure", t);
      x(t, j, 0) = model.input_norm.norm(p, j);
    }
  }
  auto fwd = nn::lstm_forward(model.lstm, x, init);
  out.positions.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t k = 0; k < 3; ++k) {
      out.positions[t][k] = model.output_norm.denorm(fwd.outputs(t, k, 0), k);
    }
  }
  out.state = std::move(fwd.final_state);
  return out;
}

EvalSummary evaluate(const ForwardModel& model, std::span<const SequencePair> pairs) {
  if (pairs.empty()) throw ConfigError("evaluate: empty pair set");
  const auto data = normalize_pairs(model, pairs);
  EvalSummary s;
  s.n_pairs = pairs.size();
  std::array<double, 3> sq{};
  double norm_sq = 0.0;
  std::size_t n_steps = 0;
  const auto all = iota_indices(pairs.size());
  nn::Sequence x, y;
  for (std::size_t i = 0; i < all.size(); i += kEvalBatch) {
    const auto chunk = std::span(all).subspan(i, std::min(kEvalBatch, all.size() - i));
    fill_batch(data, chunk, x, y);
    auto fwd = nn::lstm_forward(model.lstm, x, nn::zero_state(model.lstm, x.batch));
    for (std::size_t t = 0; t < x.steps; ++t) {
      for (std::size_t k = 0; k < 3; ++k) {
        for (std::size_t b = 0; b < x.batch; ++b) {
          const double zr = fwd.outputs(t, k, b) - y(t, k, b);
          norm_sq += zr * zr;
          const double r = zr * model.output_norm.std[k];
          sq[k] += r * r;
        }
      }
    }
    n_steps += x.steps * x.batch;
  }
  double total = 0.0;
  for (std::size_t k = 0; k < 3; ++k) {
    s.rmse_mm[k] = std::sqrt(sq[k] / static_cast<double>(n_steps));
    total += sq[k];
  }
  s.rmse_total_mm = std::sqrt(total / static_cast<double>(3 * n_steps));
  s.normalized_mse = norm_sq / static_cast<double>(3 * n_steps);
  return s;
}

EvalSummary evaluate_run(const ForwardModel& model, const Run& run) {
  if (run.rows.empty()) throw ConfigError("evaluate_run: empty run");
  if (run.n_valves() != model.n_valves()) throw ConfigError("evaluate_run: valve count mismatch");
  std::vector<double> p;
  for (const auto& row : run.rows) p.insert(p.end(), row.p.begin(), row.p.end());
  const auto roll = rollout_model(model, p);
  EvalSummary s;
  s.n_pairs = 1;
  std::array<double, 3> sq{};
  double norm_sq = 0.0;
  for (std::size_t t = 0; t < run.rows.size(); ++t) {
    for (std::size_t k = 0; k < 3; ++k) {
      const double r = roll.positions[t][k] - run.rows[t].pos[k];
      sq[k] += r * r;
      const double zr = r / model.output_norm.std[k];
      norm_sq += zr * zr;
    }
  }
  const double n = static_cast<double>(run.rows.size());
  for (std::size_t k = 0; k < 3; ++k) s.rmse_mm[k] = std::sqrt(sq[k] / n);
  s.rmse_total_mm = std::sqrt((sq[0] + sq[1] + sq[2]) / (3 * n));
  s.normalized_mse = norm_sq / (3 * n);
  return s;
}

nlohmann::json to_json(const EvalSummary& s) {
  return {{"rmse_mm", s.rmse_mm},
          {"rmse_total_mm", s.rmse_total_mm},
          {"normalized_mse", s.normalized_mse},
          {"n_pairs", s.n_pairs}};
}

}  // namespace softreach
