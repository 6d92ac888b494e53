// End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
// the exit status is non-zero when any selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "softreach/cli/commands.hpp"
#include "softreach/csv.hpp"
#include "softreach/dataset.hpp"
#include "softreach/environment.hpp"
#include "softreach/errors.hpp"
#include "softreach/exploration.hpp"
#include "softreach/forward_model.hpp"
#include "softreach/manifest.hpp"
#include "softreach/neural.hpp"
#include "softreach/ppo.hpp"
#include "softreach/presets.hpp"
#include "softreach/stats.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace softreach;

namespace {

struct Options {
  fs::path work = "acceptance_work";
  std::size_t policy_seeds = 5;
  std::size_t band_seeds = 5;
  std::size_t forward_steps = 20000;
};

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
  }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ------------------------------------------------------------ exploration

Outcome exploration_safety(const Options&) {
  Timer timer;
  const double alphas[] = {0.0, 0.5, 0.9, 0.99};
  const double betas[] = {0.05, 0.1, 0.3, 0.6};
  std::size_t steps = 0, violations = 0;
  double max_total = 0.0, min_p = 1e300;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    ExplorationConfig cfg;
    cfg.p_max = 13.0;
    cfg.p_b = 2.0;
    cfg.n_valves = 3;
    cfg.n_steps = 10000;
    cfg.alpha = alphas[seed % 4];
    cfg.beta = betas[(seed / 4) % 4];
    cfg.seed = seed;
    for (const auto& p : generate_sequence(cfg).steps) {
      double total = 0.0;
      bool bad = false;
      for (double v : p) {
        total += v;
        min_p = std::min(min_p, v);
        if (!(v >= 0.0)) bad = true;
      }
      if (!(total < cfg.p_max)) bad = true;
      max_total = std::max(max_total, total);
      violations += bad;
      ++steps;
    }
  }
  const double t = timer.seconds();
  return {violations == 0 && steps == 1000000 && t < 10.0,
          fmt("steps=%zu violations=%zu max_sum=%.4f min_p=%.3g time=%.2fs (limit 10s)", steps,
              violations, max_total, min_p, t)};
}

Outcome exploration_smoothness(const Options&) {
  Timer timer;
  const double alphas[] = {0.0, 0.5, 0.9, 0.99};
  std::vector<double> mean_delta;
  for (double alpha : alphas) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      ExplorationConfig cfg;
      cfg.alpha = alpha;
      cfg.n_steps = 5000;
      cfg.seed = seed;  // same draws for every alpha
      const auto seq = generate_sequence(cfg);
      for (std::size_t i = 1; i < seq.size(); ++i)
        for (std::size_t j = 0; j < 3; ++j, ++n) sum += std::abs(seq.steps[i][j] - seq.steps[i - 1][j]);
    }
    mean_delta.push_back(sum / static_cast<double>(n));
  }
  bool decreasing = true;
  for (std::size_t i = 1; i < mean_delta.size(); ++i) decreasing &= mean_delta[i] < mean_delta[i - 1];
  const double t = timer.seconds();
  return {decreasing && t < 10.0,
          fmt("mean|dp| alpha0=%.4f alpha.5=%.4f alpha.9=%.4f alpha.99=%.4f time=%.2fs", mean_delta[0],
              mean_delta[1], mean_delta[2], mean_delta[3], t)};
}

// ------------------------------------------------------------ gradients

// ||analytic - numeric|| / max(||analytic||, ||numeric||) over all entries
template <class P>
double fd_relative_error(P params, const P& grads, const std::function<double(const P&)>& loss) {
  auto p_spans = nn::tensor_spans(params);
  auto g_spans = nn::tensor_spans(grads);
  const double eps = 1e-6;
  double diff = 0.0, na = 0.0, nn_ = 0.0;
  for (std::size_t t = 0; t < p_spans.size(); ++t) {
    for (std::size_t i = 0; i < p_spans[t].size(); ++i) {
      const double saved = p_spans[t][i];
      p_spans[t][i] = saved + eps;
      const double up = loss(params);
      p_spans[t][i] = saved - eps;
      const double down = loss(params);
      p_spans[t][i] = saved;
      const double fd = (up - down) / (2 * eps);
      diff += (g_spans[t][i] - fd) * (g_spans[t][i] - fd);
      na += g_spans[t][i] * g_spans[t][i];
      nn_ += fd * fd;
    }
  }
  const double denom = std::sqrt(std::max(na, nn_));
  return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

std::size_t dim(Rng& rng) { return 1 + rng.index(8); }

double lstm_instance(Rng& rng) {
  const std::size_t I = dim(rng), H = dim(rng), O = dim(rng), T = dim(rng), B = 1 + rng.index(3);
  const auto p = nn::make_lstm(I, H, O, rng);
  nn::Sequence x(T, I, B), y(T, O, B);
  for (double& v : x.data) v = rng.normal();
  for (double& v : y.data) v = rng.normal();
  const bool with_state = rng.uniform() < 0.5;
  nn::LstmState init = nn::zero_state(p, B);
  std::vector<std::uint8_t> starts;
  if (with_state) {
    for (double& v : init.h.data) v = 0.5 * rng.normal();
    for (double& v : init.c.data) v = 0.5 * rng.normal();
    starts.resize(T * B);
    for (auto& s : starts) s = rng.uniform() < 0.2;
  }
  auto loss = [&](const nn::LstmParams& q, nn::LstmParams* grads) {
    nn::LstmTape tape;
    auto fwd = nn::lstm_forward(q, x, init, starts, grads ? &tape : nullptr);
    double l = 0.0;
    nn::Sequence d(T, O, B);
    for (std::size_t i = 0; i < d.data.size(); ++i) {
      const double r = fwd.outputs.data[i] - y.data[i];
      l += r * r;
      d.data[i] = 2 * r;
    }
    if (grads) nn::lstm_backward(q, tape, d, nullptr, *grads);
    return l;
  };
  auto grads = nn::zeros_like(p);
  loss(p, &grads);
  return fd_relative_error<nn::LstmParams>(p, grads, [&](const nn::LstmParams& q) { return loss(q, nullptr); });
}

double mlp_instance(Rng& rng) {
  std::vector<std::size_t> dims{dim(rng)};
  const std::size_t depth = 1 + rng.index(3);
  for (std::size_t l = 0; l < depth; ++l) dims.push_back(dim(rng));
  const auto out_act = rng.uniform() < 0.5 ? nn::Activation::tanh : nn::Activation::identity;
  const auto p = nn::make_mlp(dims, nn::Activation::tanh, out_act, rng);
  const std::size_t B = 1 + rng.index(4);
  nn::Batch x(dims.front(), B), y(dims.back(), B);
  for (double& v : x.data) v = rng.normal();
  for (double& v : y.data) v = rng.normal();
  auto loss = [&](const nn::MlpParams& q, nn::MlpParams* grads) {
    nn::MlpTape tape;
    const auto out = nn::mlp_forward(q, x, grads ? &tape : nullptr);
    double l = 0.0;
    nn::Batch d(out.rows, B);
    for (std::size_t i = 0; i < d.data.size(); ++i) {
      const double r = out.data[i] - y.data[i];
      l += r * r;
      d.data[i] = 2 * r;
    }
    if (grads) nn::mlp_backward(q, tape, d, *grads);
    return l;
  };
  auto grads = nn::zeros_like(p);
  loss(p, &grads);
  return fd_relative_error<nn::MlpParams>(p, grads, [&](const nn::MlpParams& q) { return loss(q, nullptr); });
}

Outcome gradient_correctness(const Options&) {
  Timer timer;
  Rng rng(2024);
  double worst_lstm = 0.0, worst_mlp = 0.0;
  std::size_t failures = 0;
  for (std::size_t k = 0; k < 100; ++k) {
    const double e = lstm_instance(rng);
    worst_lstm = std::max(worst_lstm, e);
    failures += !(e < 1e-4);
  }
  for (std::size_t k = 0; k < 100; ++k) {
    const double e = mlp_instance(rng);
    worst_mlp = std::max(worst_mlp, e);
    failures += !(e < 1e-4);
  }
  const double t = timer.seconds();
  return {failures == 0 && t < 60.0,
          fmt("instances=200 failures=%zu worst_lstm=%.2e worst_mlp=%.2e (tol 1e-4) time=%.1fs", failures,
              worst_lstm, worst_mlp, t)};
}

// ------------------------------------------------------------ windows

Outcome window_combinatorics(const Options&) {
  Timer timer;
  Rng rng(77);
  std::size_t mismatches = 0;
  for (std::size_t k = 0; k < 500; ++k) {
    const std::size_t L = rng.index(2000), W = 1 + rng.index(600), step = 1 + rng.index(300);
    std::size_t brute = 0;
    for (std::size_t s = 0; s + W <= L; s += step) ++brute;
    mismatches += pair_count(L, W, step) != brute;
  }
  Run run;
  for (std::size_t i = 0; i < 912; ++i) run.rows.push_back({0.01 * static_cast<double>(i), {1, 2, 3}, {}});
  DatasetConfig cfg;
  cfg.window_length = 512;
  cfg.step = 200;
  const auto pairs = make_pairs(run, cfg);
  std::vector<std::size_t> starts;
  for (const auto& p : pairs) starts.push_back(p.start_index);
  const bool example = starts == std::vector<std::size_t>{0, 200, 400};
  const double t = timer.seconds();
  return {mismatches == 0 && example && t < 5.0,
          fmt("triples=500 mismatches=%zu L912/W512/step200 pairs=%zu starts_ok=%d time=%.2fs", mismatches,
              pairs.size(), example, t)};
}

// ------------------------------------------------------------ forward model

struct ForwardData {
  std::vector<SequencePair> train, test;
};

ForwardData benchmark_data() {
  const auto runs = presets::benchmark_runs(20, 600, 0);
  const auto cfg = presets::benchmark_dataset();
  const auto pairs = make_pairs(runs, cfg);
  const auto split = split_and_order(pairs, cfg);
  ForwardData d;
  for (auto i : split.train) d.train.push_back(pairs[i]);
  for (auto i : split.test) d.test.push_back(pairs[i]);
  return d;
}

fs::path model_path(const Options& o) { return o.work / "forward_permuted.json"; }
fs::path report_path(const Options& o) { return o.work / "forward_permuted_report.json"; }

TrainResult train_ordering(const ForwardData& d, Ordering ordering, std::size_t steps) {
  const auto cfg = presets::benchmark_forward_training(ordering, steps);
  return train_forward(d.train, d.test, cfg, [&](const TrainPoint& p) {
    if (p.step % 2000 == 0 && p.step > 0)
      std::fprintf(stderr, "  %s step %zu\n", to_string(ordering).c_str(), p.step);
  });
}

// The permuted-order model is shared by the held-out and policy checks; its
// training summary is kept next to it for the ordering comparison.
void prepare_model(const Options& o) {
  if (fs::exists(model_path(o)) && fs::exists(report_path(o))) return;
  const auto res = train_ordering(benchmark_data(), Ordering::permuted, o.forward_steps);
  fs::create_directories(o.work);
  save_model(res.model, model_path(o));
  write_json_file(report_path(o), {{"steps", o.forward_steps},
                                   {"final_smoothed_val", res.report.final_smoothed_val()},
                                   {"wall_seconds", res.report.wall_seconds},
                                   {"diverged", res.report.diverged}});
}

std::shared_ptr<const ForwardModel> fixture_model(const Options& o) {
  prepare_model(o);
  return std::make_shared<const ForwardModel>(load_model(model_path(o)));
}

Outcome forward_ordering(const Options& o) {
  prepare_model(o);
  const auto perm = read_json_file(report_path(o));
  if (perm.at("steps").get<std::size_t>() != o.forward_steps)
    throw ConfigError("model fixture was trained with a different step budget");
  Timer timer;
  const auto seq = train_ordering(benchmark_data(), Ordering::sequential, o.forward_steps);
  const double vp = perm.at("final_smoothed_val").get<double>(), vs = seq.report.final_smoothed_val();
  const double t = timer.seconds() + perm.at("wall_seconds").get<double>();
  const bool ok = !perm.at("diverged").get<bool>() && !seq.report.diverged && vp <= vs * 1.0 && t < 1800.0;
  return {ok, fmt("steps=%zu ema_val permuted=%.6f sequential=%.6f (permuted <= sequential) time=%.0fs "
                  "(limit 1800s)",
                  o.forward_steps, vp, vs, t)};
}

Outcome heldout_reconstruction(const Options& o) {
  const auto model = fixture_model(o);
  Timer timer;
  // run 20 is generated with the benchmark seed but never enters the dataset
  const auto heldout = presets::benchmark_runs(21, 600, 0).back();
  const auto ev = evaluate_run(*model, heldout);
  const double t = timer.seconds();
  return {ev.rmse_total_mm < 5.0 && t < 60.0,
          fmt("heldout_rmse=%.3fmm (x %.3f y %.3f z %.3f) limit 5mm time=%.2fs", ev.rmse_total_mm,
              ev.rmse_mm[0], ev.rmse_mm[1], ev.rmse_mm[2], t)};
}

// ------------------------------------------------------------ PPO oracles

std::vector<double> gae_oracle(const std::vector<double>& r, const std::vector<double>& v,
                               const std::vector<std::uint8_t>& d, double gamma, double lambda) {
  const std::size_t T = r.size();
  std::vector<double> adv(T, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    double coef = 1.0;
    for (std::size_t k = t; k < T; ++k) {
      const double delta = r[k] + gamma * v[k + 1] * (d[k] ? 0.0 : 1.0) - v[k];
      adv[t] += coef * delta;
      if (d[k]) break;
      coef *= gamma * lambda;
    }
  }
  return adv;
}

std::shared_ptr<const ForwardModel> toy_model(std::uint64_t seed) {
  Rng rng(seed);
  auto m = std::make_shared<ForwardModel>();
  m->lstm = nn::make_lstm(3, 8, 3, rng);
  m->input_norm = {{6.5, 6.5, 6.5}, {3, 3, 3}};
  m->output_norm = {{0, 0, 100}, {10, 10, 5}};
  return m;
}

Outcome ppo_oracles(const Options&) {
  Rng rng(99);
  double gae_err = 0.0, ret_err = 0.0;
  for (std::size_t k = 0; k < 300; ++k) {
    const std::size_t T = 1 + rng.index(64);
    std::vector<double> r(T), v(T + 1);
    std::vector<std::uint8_t> d(T);
    for (auto& x : r) x = rng.normal() * 5;
    for (auto& x : v) x = rng.normal() * 5;
    for (auto& x : d) x = rng.uniform() < 0.15;
    const double gamma = 0.9 + 0.1 * rng.uniform(), lambda = rng.uniform();
    const auto g = compute_gae(r, v, d, gamma, lambda);
    const auto oracle = gae_oracle(r, v, d, gamma, lambda);
    for (std::size_t t = 0; t < T; ++t) {
      gae_err = std::max(gae_err, std::abs(g.advantages[t] - oracle[t]));
      ret_err = std::max(ret_err, std::abs(g.returns[t] - (oracle[t] + v[t])));
    }
  }

  // (ratio, advantage, clip) -> hand-evaluated min(rA, clip(r)A)
  struct Case {
    double r, a, eps, expected;
  };
  const Case cases[] = {{1.2, 2.0, 0.2, 2.4},  {1.5, 2.0, 0.2, 2.4},   {0.5, 2.0, 0.2, 1.0},
                        {0.5, -3.0, 0.2, -2.4}, {1.5, -3.0, 0.2, -4.5}, {1.0, 7.0, 0.1, 7.0},
                        {0.9, -1.0, 0.3, -0.9}, {2.0, 0.0, 0.2, 0.0}};
  double scalar_err = 0.0;
  for (const auto& c : cases) {
    const std::vector<double> old_lp{-0.7}, adv{c.a};
    const std::vector<double> new_lp{-0.7 + std::log(c.r)};
    const auto terms = clipped_surrogate(new_lp, old_lp, adv, c.eps);
    scalar_err = std::max(scalar_err, std::abs(terms.surrogate - c.expected));
  }

  double ratio_dev = 0.0;
  for (auto kind : {PolicyKind::feedforward, PolicyKind::recurrent}) {
    auto env = make_env_params(toy_model(5), 13.0, Position{0, 0, 100});
    PpoConfig cfg;
    cfg.policy_kind = kind;
    cfg.hidden = 8;
    cfg.total_updates = 4;
    cfg.n_envs = 4;
    cfg.rollout_length = 32;
    cfg.seed = 3;
    const auto res = train_policy(env, cfg);
    for (const auto& d : res.diagnostics) ratio_dev = std::max(ratio_dev, d.first_max_ratio_dev);
  }
  const bool ok = gae_err < 1e-12 && ret_err < 1e-12 && scalar_err < 1e-12 && ratio_dev < 1e-6;
  return {ok, fmt("gae_max_err=%.2e returns_max_err=%.2e (tol 1e-12) surrogate_max_err=%.2e (tol 1e-12) "
                  "ratio_dev=%.2e (tol 1e-6)",
                  gae_err, ret_err, scalar_err, ratio_dev)};
}

// ------------------------------------------------------------ policies

// mean of the smoothed return over the last quartile minus the first
double quartile_gain(const TrainingCurve& curve, double factor) {
  const auto e = ema(curve.returns(), factor);
  const std::size_t q = std::max<std::size_t>(1, e.size() / 4);
  std::vector<double> first(e.begin(), e.begin() + static_cast<std::ptrdiff_t>(q));
  std::vector<double> last(e.end() - static_cast<std::ptrdiff_t>(q), e.end());
  return mean(last) - mean(first);
}

Outcome policy_convergence(const Options& o) {
  const auto model = fixture_model(o);
  const auto env = presets::benchmark_env(model);
  bool ok = true;
  std::string detail;
  for (auto kind : {PolicyKind::feedforward, PolicyKind::recurrent}) {
    Timer timer;
    std::vector<double> dists;
    std::size_t rising = 0;
    std::string per_seed;
    for (std::uint64_t seed = 0; seed < o.policy_seeds; ++seed) {
      const auto cfg = presets::benchmark_ppo(kind, seed);
      const auto res = train_policy(env, cfg);
      const auto ev = evaluate_policy(res.params, env, 256, 12345, true);
      const double gain = quartile_gain(res.curve, cfg.ema_factor);
      dists.push_back(ev.mean_terminal_dist);
      rising += !res.diverged && gain >= 0.0;
      per_seed += fmt(" %.2f", ev.mean_terminal_dist);
      std::fprintf(stderr, "  %s seed %llu updates %zu dist %.3f gain %.1f %.0fs\n", to_string(kind).c_str(),
                   static_cast<unsigned long long>(seed), res.curve.points.size(), ev.mean_terminal_dist, gain,
                   timer.seconds());
    }
    const double t = timer.seconds();
    const double d = mean(dists);
    const std::size_t need = o.policy_seeds - o.policy_seeds / 5;
    const bool kind_ok = d < 3.0 && rising >= need && t < 2700.0;
    ok &= kind_ok;
    detail += fmt("%s: mean_dist=%.3fmm (limit 3mm) per_seed=[%s ] rising=%zu/%zu (need %zu) time=%.0fs; ",
                  to_string(kind).c_str(), d, per_seed.c_str() + 1, rising, o.policy_seeds, need, t);
  }
  return {ok, detail};
}

Outcome multi_seed_band(const Options& o) {
  const auto model = fixture_model(o);
  Timer timer;
  const fs::path out = o.work / "band";
  fs::remove_all(out);
  auto ppo = presets::benchmark_ppo(PolicyKind::feedforward, 0);
  ppo.stop_on_convergence = false;
  json overrides = {{"model", model_path(o).string()}, {"ppo", ppo}, {"seeds", o.band_seeds},
                    {"eval_episodes", 64}};
  const auto cfg = cli::effective_config("train-policy", json::object(), overrides);
  cli::Context ctx;
  ctx.out = out;
  ctx.jobs = 1;
  cli::run_command("train-policy", cfg, ctx);

  const auto table = csv::read_file(out / "band.csv");
  std::size_t full_rows = 0;
  double first_std = std::nan(""), last_std = std::nan("");
  for (const auto& row : table.rows) {
    if (static_cast<std::size_t>(row.at(1)) != o.band_seeds) continue;
    ++full_rows;
    const double s = row.at(5);
    if (std::isnan(first_std)) first_std = s;
    last_std = s;
  }
  const auto eval = read_json_file(out / "eval.json");
  const std::size_t completed = eval.at("seeds").size();
  const double t = timer.seconds();
  const double limit = o.band_seeds <= 5 ? 7200.0 : 1e9;
  const bool ok = completed == o.band_seeds && full_rows == ppo.total_updates && last_std < first_std &&
                  t < limit;
  return {ok, fmt("seeds=%zu/%zu band_rows=%zu initial_std=%.2f final_std=%.2f time=%.0fs", completed,
                  o.band_seeds, full_rows, first_std, last_std, t)};
}

// ------------------------------------------------------------ determinism

Outcome determinism(const Options& o) {
  Timer timer;
  const fs::path root = o.work / "determinism";
  fs::remove_all(root);
  cli::Context ctx;
  ctx.seed = 11;
  ctx.jobs = 1;
  std::vector<fs::path> manifests;
  auto stage = [&](const std::string& cmd, const std::string& dir, const json& overrides) {
    ctx.out = root / dir;
    cli::run_command(cmd, cli::effective_config(cmd, json::object(), overrides), ctx);
    manifests.push_back(ctx.out / "manifest.json");
    return ctx.out;
  };
  const auto explore = stage("explore", "explore", {{"exploration", {{"n_steps", 300}}}});
  const auto collect = stage("collect", "collect", {{"pressures", (explore / "pressures.csv").string()}});
  const auto collect2 = stage("collect", "collect2",
                             {{"pressures", (explore / "pressures.csv").string()},
                              {"surrogate", {{"seed", 4}}}});
  const auto dataset = stage("build-dataset", "dataset",
                             {{"runs", {(collect / "run.csv").string(), (collect2 / "run.csv").string()}},
                              {"dataset", {{"window_length", 48}, {"step", 16}}}});
  const auto model = stage("train-model", "model",
                           {{"dataset", (dataset / "dataset.json").string()},
                            {"train", {{"hidden", 8}, {"batch_size", 4}, {"steps", 30}, {"val_every", 10}}}});
  const json small_ppo = {{"hidden", 8}, {"total_updates", 3}, {"n_envs", 4}, {"rollout_length", 32}};
  json small_recurrent = small_ppo;
  small_recurrent["policy_kind"] = "recurrent";
  const auto policy = stage("train-policy", "policy",
                            {{"model", (model / "model.json").string()}, {"ppo", small_ppo}, {"eval_episodes", 8}});
  stage("train-policy", "policy_multi",
        {{"model", (model / "model.json").string()},
         {"ppo", small_recurrent},
         {"seeds", 2},
         {"eval_episodes", 8}});
  stage("evaluate", "evaluate",
        {{"model", (model / "model.json").string()},
         {"dataset", (dataset / "dataset.json").string()},
         {"runs", {(collect / "run.csv").string()}},
         {"policy", (policy / "policy.json").string()},
         {"episodes", 8}});

  std::size_t identical = 0, outputs = 0;
  std::string failed;
  for (std::size_t i = 0; i < manifests.size(); ++i) {
    const auto report = cli::reproduce(manifests[i], root / ("rerun" + std::to_string(i)), 1);
    outputs += report.original.outputs.size();
    if (report.identical() && !report.original.outputs.empty()) {
      ++identical;
    } else {
      failed += " " + report.original.command;
    }
  }
  const double t = timer.seconds();
  return {identical == manifests.size(),
          fmt("stages=%zu identical=%zu outputs=%zu%s%s time=%.1fs", manifests.size(), identical, outputs,
              failed.empty() ? "" : " mismatched:", failed.c_str(), t)};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome(const Options&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"softreach acceptance checks"};
  Options o;
  std::vector<int> selected;
  bool prepare = false;
  app.add_flag("--prepare-model", prepare, "train the shared forward-model fixture and exit");
  app.add_option("--criteria", selected, "criterion ids (default: all)")->delimiter(',');
  app.add_option("--work", o.work, "scratch and fixture directory");
  app.add_option("--policy-seeds", o.policy_seeds, "seeds per policy kind");
  app.add_option("--band-seeds", o.band_seeds, "seeds for the multi-seed band");
  app.add_option("--forward-steps", o.forward_steps, "forward-model training steps");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> all = {
      {1, "exploration safety", exploration_safety},
      {2, "exploration smoothness", exploration_smoothness},
      {3, "gradient correctness", gradient_correctness},
      {4, "sliding-window combinatorics", window_combinatorics},
      {5, "forward-model ordering", forward_ordering},
      {6, "held-out run reconstruction", heldout_reconstruction},
      {7, "GAE/PPO oracle equivalence", ppo_oracles},
      {8, "policy convergence", policy_convergence},
      {9, "multi-seed band", multi_seed_band},
      {10, "determinism", determinism},
  };
  if (prepare) {
    try {
      prepare_model(o);
    } catch (const std::exception& e) {
      std::fprintf(stderr, "model fixture: %s\n", e.what());
      return 1;
    }
    std::printf("model fixture ready: %s\n", model_path(o).c_str());
    return 0;
  }

  const std::set<int> want(selected.begin(), selected.end());
  int failures = 0;
  for (const auto& c : all) {
    if (!want.empty() && !want.count(c.id)) continue;
    Outcome r;
    try {
      r = c.run(o);
    } catch (const std::exception& e) {
      r = {false, std::string("error: ") + e.what()};
    }
    failures += !r.pass;
    std::printf("[%s] %2d %s: %s\n", r.pass ? "PASS" : "FAIL", c.id, c.name, r.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
