#include "softreach/cli/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "softreach/csv.hpp"
#include "softreach/dataset.hpp"
#include "softreach/environment.hpp"
#include "softreach/errors.hpp"
#include "softreach/exploration.hpp"
#include "softreach/forward_model.hpp"
#include "softreach/ppo.hpp"
#include "softreach/presets.hpp"
#include "softreach/stats.hpp"
#include "softreach/surrogate.hpp"

namespace softreach::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class Recorder {
 public:
  Recorder(std::string command, json config, const Context& ctx)
      : ctx_(ctx) {
    manifest_.command = std::move(command);
    manifest_.config = std::move(config);
    manifest_.seed = ctx.seed;
    fs::create_directories(ctx.out);
  }

  void input(const std::string& path) { manifest_.inputs.push_back({path, hash_file(path)}); }

  fs::path output(const std::string& rel) const { return ctx_.out / rel; }

  void wrote(const std::string& rel) {
    manifest_.outputs.push_back({rel, hash_file(ctx_.out / rel)});
  }

  void write_text(const std::string& rel, const std::string& text) {
    fs::create_directories(output(rel).parent_path());
    write_text_file(output(rel), text);
    wrote(rel);
  }

  void write_json(const std::string& rel, const json& j) {
    fs::create_directories(output(rel).parent_path());
    write_json_file(output(rel), j);
    wrote(rel);
  }

  void log(const std::string& msg) const {
    if (ctx_.log) *ctx_.log << msg << '\n';
  }

  ArtifactManifest finish() {
    write_json_file(ctx_.out / "manifest.json", to_json(manifest_));
    return manifest_;
  }

 private:
  const Context& ctx_;
  ArtifactManifest manifest_;
};

std::string to_text(const auto& writer) {
  std::ostringstream os;
  writer(os);
  return os.str();
}

std::string required_path(const json& cfg, const char* key) {
  if (!cfg.contains(key) || !cfg.at(key).is_string() || cfg.at(key).get<std::string>().empty()) {
    throw ConfigError(std::string("missing required input '") + key + "'");
  }
  const auto p = cfg.at(key).get<std::string>();
  if (!fs::exists(p)) throw IoError("input file not found: " + p);
  return p;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ------------------------------------------------------------ explore

ArtifactManifest cmd_explore(const json& config, const Context& ctx) {
  auto cfg = config.at("exploration").get<ExplorationConfig>();
  cfg.seed = ctx.seed;
  cfg.validate();
  json effective = config;
  effective["exploration"] = cfg;
  Recorder rec("explore", effective, ctx);
  const auto seq = generate_sequence(cfg);
  rec.write_text("pressures.csv", to_text([&](std::ostream& os) { write_pressure_csv(os, seq); }));
  rec.log("explore: " + std::to_string(seq.size()) + " steps");
  return rec.finish();
}

// ------------------------------------------------------------ collect

ArtifactManifest cmd_collect(const json& config, const Context& ctx) {
  const auto mode = config.at("mode").get<std::string>();
  json effective = config;
  Run run;
  std::vector<std::string> inputs;
  if (mode == "surrogate") {
    auto scfg = config.at("surrogate").get<SurrogateConfig>();
    scfg.seed = ctx.seed;
    scfg.validate();
    effective["surrogate"] = scfg;
    const auto path = required_path(config, "pressures");
    inputs.push_back(path);
    std::ifstream in(path);
    const auto seq = read_pressure_csv(in, path);
    if (seq.size() == 0) throw ConfigError("collect: pressure file has no rows");
    std::vector<double> q0 = seq.steps.front();
    if (config.contains("q0") && !config.at("q0").is_null()) {
      q0 = config.at("q0").get<std::vector<double>>();
    }
    run = simulate_run(seq, scfg, q0);
  } else if (mode == "align") {
    const auto plog = required_path(config, "pressure_log");
    const auto mlog = required_path(config, "mocap_log");
    inputs = {plog, mlog};
    std::ifstream pin(plog), min(mlog);
    const auto p = read_pressure_log(pin, plog);
    const auto m = read_mocap_log(min, mlog);
    run = align(p, m);
  } else {
    throw ConfigError("collect: mode must be 'surrogate' or 'align', got '" + mode + "'");
  }
  Recorder rec("collect", effective, ctx);
  for (const auto& p : inputs) rec.input(p);
  rec.write_text("run.csv", to_text([&](std::ostream& os) { write_run_csv(os, run); }));
  rec.log("collect: " + std::to_string(run.size()) + " rows");
  return rec.finish();
}

// ------------------------------------------------------------ build-dataset

ArtifactManifest cmd_build_dataset(const json& config, const Context& ctx) {
  auto dcfg = config.at("dataset").get<DatasetConfig>();
  dcfg.split_seed = ctx.seed;
  dcfg.validate();
  json effective = config;
  effective["dataset"] = dcfg;
  const auto paths = config.at("runs").get<std::vector<std::string>>();
  if (paths.empty()) throw ConfigError("build-dataset: no runs given");
  Recorder rec("build-dataset", effective, ctx);
  std::vector<Run> runs;
  std::vector<std::string> files;
  for (std::size_t r = 0; r < paths.size(); ++r) {
    if (!fs::exists(paths[r])) throw IoError("input file not found: " + paths[r]);
    rec.input(paths[r]);
    auto run = read_run_file(paths[r]);
    char name[32];
    std::snprintf(name, sizeof name, "r%03zu", r);
    run.id = name;
    // runs are copied next to the manifest so the dataset is self-contained
    const std::string rel = std::string("runs/") + name + ".csv";
    rec.write_text(rel, to_text([&](std::ostream& os) { write_run_csv(os, run); }));
    files.push_back(rel);
    runs.push_back(std::move(run));
  }
  const auto pairs = make_pairs(runs, dcfg, ctx.jobs);
  const auto split = split_and_order(pairs, dcfg);
  rec.write_json("dataset.json", manifest_to_json(make_manifest(runs, files, pairs, split, dcfg)));
  rec.log("build-dataset: " + std::to_string(pairs.size()) + " pairs, " +
          std::to_string(split.train.size()) + " train / " + std::to_string(split.test.size()) +
          " test");
  return rec.finish();
}

// ------------------------------------------------------------ train-model

LoadedDataset load_dataset_file(const std::string& path, Recorder& rec) {
  rec.input(path);
  const auto m = manifest_from_json(read_json_file(path));
  const fs::path base = fs::path(path).parent_path();
  for (const auto& f : m.run_files) {
    const fs::path p = fs::path(f).is_relative() ? base / f : fs::path(f);
    rec.input(p.string());
  }
  return load_dataset(m, base);
}

ArtifactManifest cmd_train_model(const json& config, const Context& ctx) {
  auto tcfg = config.at("train").get<ForwardTrainConfig>();
  tcfg.seed = ctx.seed;
  tcfg.validate();
  json effective = config;
  effective["train"] = tcfg;
  const auto dataset_path = required_path(config, "dataset");
  Recorder rec("train-model", effective, ctx);
  const auto ds = load_dataset_file(dataset_path, rec);
  rec.log("train-model: " + std::to_string(ds.train.size()) + " train pairs, " +
          std::to_string(tcfg.steps) + " steps");
  std::size_t last_logged = 0;
  auto result = train_forward(ds.train, ds.test, tcfg, [&](const TrainPoint& p) {
    if (std::isfinite(p.val_loss) || p.step + 1 == tcfg.steps) {
      if (p.step >= last_logged + 1000 || p.step == 0) {
        last_logged = p.step;
        rec.log("  step " + std::to_string(p.step) + " val " + fmt("%.5f", p.val_loss));
      }
    }
  });
  rec.write_json("model.json", to_json(result.model));
  rec.write_text("train_report.csv",
                 to_text([&](std::ostream& os) { write_report_csv(os, result.report); }));
  json eval = {{"final_smoothed_val", result.report.final_smoothed_val()},
               {"final_smoothed_train", result.report.final_smoothed_train()},
               {"diverged", result.report.diverged},
               {"failure", result.report.failure}};
  if (!ds.test.empty()) eval["test"] = to_json(evaluate(result.model, ds.test));
  if (config.contains("heldout_runs")) {
    json runs = json::array();
    for (const auto& p : config.at("heldout_runs").get<std::vector<std::string>>()) {
      if (!fs::exists(p)) throw IoError("input file not found: " + p);
      rec.input(p);
      runs.push_back({{"path", p}, {"summary", to_json(evaluate_run(result.model, read_run_file(p)))}});
    }
    eval["heldout_runs"] = runs;
  }
  rec.write_json("eval.json", eval);
  if (result.report.diverged) {
    rec.finish();
    throw NumericError("train-model diverged: " + result.report.failure);
  }
  rec.log("train-model: final smoothed val " + fmt("%.5f", result.report.final_smoothed_val()));
  return rec.finish();
}

// ------------------------------------------------------------ environment

EnvParams env_from_config(std::shared_ptr<const ForwardModel> model, const json& env_cfg) {
  Position pose{};
  if (env_cfg.contains("initial_pose") && !env_cfg.at("initial_pose").is_null()) {
    pose = env_cfg.at("initial_pose").get<Position>();
  } else {
    for (std::size_t k = 0; k < 3; ++k) pose[k] = model->output_norm.mean[k];
  }
  const double p_max = env_cfg.value("p_max", 13.0);
  EnvParams env = make_env_params(std::move(model), p_max, pose);
  json rest = env_cfg;
  rest.erase("initial_pose");
  rest.erase("p_max");
  apply_env_config(rest, env);
  env.validate();
  return env;
}

std::shared_ptr<const ForwardModel> load_model_input(const json& config, Recorder& rec) {
  const auto path = required_path(config, "model");
  rec.input(path);
  return std::make_shared<const ForwardModel>(load_model(path));
}

// ------------------------------------------------------------ train-policy

struct SeedOutcome {
  PolicyTrainResult result;
  PolicyEval eval;
};

std::string band_csv(const std::vector<SeedOutcome>& outs, double ema_factor) {
  std::size_t len = 0;
  for (const auto& o : outs) len = std::max(len, o.result.curve.points.size());
  std::vector<std::vector<double>> smooth;
  for (const auto& o : outs) smooth.push_back(ema(o.result.curve.returns(), ema_factor));
  std::ostringstream os;
  csv::write_row(os, {"update", "seeds", "mean_return", "std_return", "ema_mean_return",
                      "ema_std_return"});
  for (std::size_t u = 0; u < len; ++u) {
    std::vector<double> raw, sm;
    for (std::size_t s = 0; s < outs.size(); ++s) {
      const auto& pts = outs[s].result.curve.points;
      if (u < pts.size()) {
        if (std::isfinite(pts[u].mean_return)) raw.push_back(pts[u].mean_return);
        if (std::isfinite(smooth[s][u])) sm.push_back(smooth[s][u]);
      }
    }
    csv::write_row(os, {std::to_string(u), std::to_string(raw.size()), csv::format_number(mean(raw)),
                        csv::format_number(stddev(raw)), csv::format_number(mean(sm)),
                        csv::format_number(stddev(sm))});
  }
  return os.str();
}

ArtifactManifest cmd_train_policy(const json& config, const Context& ctx) {
  auto pcfg = config.at("ppo").get<PpoConfig>();
  pcfg.seed = ctx.seed;
  pcfg.validate();
  json effective = config;
  effective["ppo"] = pcfg;
  const std::size_t n_seeds = config.value("seeds", std::size_t{1});
  const std::size_t episodes = config.value("eval_episodes", std::size_t{256});
  const std::uint64_t eval_seed = config.value("eval_seed", std::uint64_t{12345});
  if (n_seeds == 0) throw ConfigError("train-policy: seeds must be >= 1");
  Recorder rec("train-policy", effective, ctx);
  const auto env = env_from_config(load_model_input(config, rec), config.at("env"));

  std::vector<SeedOutcome> outs(n_seeds);
  std::vector<std::exception_ptr> errors(n_seeds);
  std::mutex log_mutex;
  auto run_seed = [&](std::size_t k) {
    try {
      PpoConfig c = pcfg;
      c.seed = ctx.seed + k;
      PolicyProgress progress;
      if (n_seeds == 1) {
        progress = [&](const CurvePoint& p, const UpdateDiagnostics&) {
          if (p.update % 50 == 0) {
            rec.log("  update " + std::to_string(p.update) + " return " +
                    fmt("%.1f", p.mean_return) + " dist " + fmt("%.2f", p.mean_terminal_dist));
          }
        };
      }
      outs[k].result = train_policy(env, c, progress);
      outs[k].eval = evaluate_policy(outs[k].result.params, env, episodes, eval_seed);
      std::lock_guard lock(log_mutex);
      rec.log("train-policy: seed " + std::to_string(c.seed) + " terminal distance " +
              fmt("%.3f", outs[k].eval.mean_terminal_dist) + " mm");
    } catch (...) {
      errors[k] = std::current_exception();
    }
  };
  const std::size_t workers = std::min(std::max<std::size_t>(ctx.jobs, 1), n_seeds);
  if (workers <= 1) {
    for (std::size_t k = 0; k < n_seeds; ++k) run_seed(k);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t k = w; k < n_seeds; k += workers) run_seed(k);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  json evals = json::array();
  for (std::size_t k = 0; k < n_seeds; ++k) {
    const auto& o = outs[k];
    const std::string dir = n_seeds == 1 ? "" : "seed_" + std::to_string(ctx.seed + k) + "/";
    rec.write_json(dir + "policy.json", to_json(o.result.params));
    rec.write_text(dir + "curve.csv",
                   to_text([&](std::ostream& os) { write_curve_csv(os, o.result.curve); }));
    json e = to_json(o.eval);
    e["seed"] = ctx.seed + k;
    e["converged"] = o.result.converged;
    e["updates"] = o.result.curve.points.size();
    evals.push_back(e);
  }
  if (n_seeds > 1) rec.write_text("band.csv", band_csv(outs, pcfg.ema_factor));
  rec.write_json("eval.json", n_seeds == 1 ? evals.front() : json{{"seeds", evals}});
  for (const auto& o : outs) {
    if (o.result.diverged) {
      rec.finish();
      throw NumericError("train-policy diverged: " + o.result.failure);
    }
  }
  return rec.finish();
}

// ------------------------------------------------------------ evaluate

ArtifactManifest cmd_evaluate(const json& config, const Context& ctx) {
  Recorder rec("evaluate", config, ctx);
  const auto model = load_model_input(config, rec);
  json eval = json::object();
  if (config.contains("dataset") && !config.at("dataset").is_null()) {
    const auto path = required_path(config, "dataset");
    const auto ds = load_dataset_file(path, rec);
    if (!ds.test.empty()) eval["test"] = to_json(evaluate(*model, ds.test));
    eval["train"] = to_json(evaluate(*model, ds.train));
  }
  if (config.contains("runs")) {
    json runs = json::array();
    for (const auto& p : config.at("runs").get<std::vector<std::string>>()) {
      if (!fs::exists(p)) throw IoError("input file not found: " + p);
      rec.input(p);
      runs.push_back({{"path", p}, {"summary", to_json(evaluate_run(*model, read_run_file(p)))}});
    }
    eval["runs"] = runs;
  }
  if (config.contains("policy") && !config.at("policy").is_null()) {
    const auto path = required_path(config, "policy");
    rec.input(path);
    const auto params = policy_from_json(read_json_file(path));
    const auto env = env_from_config(model, config.at("env"));
    const auto episodes = config.value("episodes", std::size_t{256});
    const bool det = config.value("deterministic", true);
    eval["policy"] = to_json(evaluate_policy(params, env, episodes, ctx.seed, det));
  }
  rec.write_json("eval.json", eval);
  return rec.finish();
}

json env_defaults() {
  return {{"p_max", 13.0},
          {"perturbation", {10.0, 10.0, 10.0}},
          {"max_steps", 64},
          {"success_radius", 1.0},
          {"initial_pose", nullptr}};
}

}  // namespace

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"explore",     "collect",      "build-dataset",
                                              "train-model", "train-policy", "evaluate"};
  return names;
}

json default_config(const std::string& command) {
  if (command == "explore") return {{"exploration", ExplorationConfig{}}};
  if (command == "collect") {
    return {{"mode", "surrogate"},
            {"pressures", ""},
            {"q0", nullptr},
            {"surrogate", SurrogateConfig{}},
            {"pressure_log", ""},
            {"mocap_log", ""}};
  }
  if (command == "build-dataset") {
    return {{"runs", json::array()}, {"dataset", DatasetConfig{}}};
  }
  if (command == "train-model") {
    return {{"dataset", ""}, {"train", ForwardTrainConfig{}}};
  }
  if (command == "train-policy") {
    return {{"model", ""},
            {"env", env_defaults()},
            {"ppo", PpoConfig{}},
            {"seeds", 1},
            {"eval_episodes", 256},
            {"eval_seed", 12345}};
  }
  if (command == "evaluate") {
    return {{"model", ""},       {"dataset", nullptr}, {"policy", nullptr},
            {"env", env_defaults()}, {"episodes", 256}, {"deterministic", true}};
  }
  throw ConfigError("unknown command '" + command + "'");
}

json effective_config(const std::string& command, const json& file, const json& overrides) {
  json cfg = default_config(command);
  if (!file.is_null()) {
    if (!file.is_object()) throw ConfigError("config file must hold a JSON object");
    cfg.merge_patch(file.contains(command) ? file.at(command) : file);
  }
  if (!overrides.is_null()) cfg.merge_patch(overrides);
  return cfg;
}

ArtifactManifest run_command(const std::string& command, const json& config, const Context& ctx) {
  try {
    if (command == "explore") return cmd_explore(config, ctx);
    if (command == "collect") return cmd_collect(config, ctx);
    if (command == "build-dataset") return cmd_build_dataset(config, ctx);
    if (command == "train-model") return cmd_train_model(config, ctx);
    if (command == "train-policy") return cmd_train_policy(config, ctx);
    if (command == "evaluate") return cmd_evaluate(config, ctx);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config for ") + command + ": " + e.what());
  }
  throw ConfigError("unknown command '" + command + "'");
}

ReproduceReport reproduce(const fs::path& manifest_path, const fs::path& out, std::size_t jobs,
                          std::ostream* log) {
  ReproduceReport report;
  report.original = artifact_manifest_from_json(read_json_file(manifest_path));
  for (const auto& in : report.original.inputs) {
    if (!fs::exists(in.path)) throw IoError("input file not found: " + in.path);
    if (hash_file(in.path) != in.fnv1a64) {
      throw IoError("input changed since the manifest was written: " + in.path);
    }
  }
  Context ctx;
  ctx.seed = report.original.seed;
  ctx.out = out;
  ctx.jobs = jobs;
  ctx.log = log;
  report.rerun = run_command(report.original.command, report.original.config, ctx);
  std::map<std::string, std::string> fresh;
  for (const auto& f : report.rerun.outputs) fresh[f.path] = f.fnv1a64;
  for (const auto& f : report.original.outputs) {
    auto it = fresh.find(f.path);
    if (it == fresh.end() || it->second != f.fnv1a64) report.mismatched.push_back(f.path);
  }
  if (report.rerun.outputs.size() != report.original.outputs.size()) {
    report.mismatched.push_back("<output set>");
  }
  return report;
}

int exit_code(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const IoError*>(&e)) return 2;
  if (dynamic_cast<const FormatError*>(&e)) return 2;
  return 1;
}

}  // namespace softreach::cli
