#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "softreach/cli/commands.hpp"
#include "softreach/errors.hpp"
#include "softreach/manifest.hpp"

namespace {

using nlohmann::json;

enum class Kind { number, integer, text, flag, text_list, number_list };

struct Binding {
  const CLI::App* app = nullptr;
  CLI::Option* option = nullptr;
  json::json_pointer pointer;
  Kind kind = Kind::number;
  std::vector<std::string> values;
};

class Bindings {
 public:
  void add(CLI::App* app, const std::string& flag, const std::string& pointer, Kind kind,
           const std::string& help) {
    auto& b = items_.emplace_back(std::make_unique<Binding>());
    b->app = app;
    b->pointer = json::json_pointer(pointer);
    b->kind = kind;
    if (kind == Kind::flag) {
      b->option = app->add_flag(flag, help);
    } else {
      b->option = app->add_option(flag, b->values, help);
      if (kind != Kind::text_list && kind != Kind::number_list) b->option->expected(1);
    }
  }

  json overrides(const CLI::App* app) const {
    json patch = json::object();
    for (const auto& b : items_) {
      if (b->option->count() == 0 || b->app != app) continue;
      patch[b->pointer] = value(*b);
    }
    return patch;
  }

 private:
  static json number(const std::string& s, bool integer) {
    try {
      std::size_t used = 0;
      if (integer) {
        const long long v = std::stoll(s, &used);
        if (used == s.size() && v >= 0) return v;
      } else {
        const double v = std::stod(s, &used);
        if (used == s.size()) return v;
      }
    } catch (const std::exception&) {
    }
    throw softreach::ConfigError("'" + s + "' is not a valid " +
                                 (integer ? "non-negative integer" : "number"));
  }

  static json value(const Binding& b) {
    switch (b.kind) {
      case Kind::number: return number(b.values.front(), false);
      case Kind::integer: return number(b.values.front(), true);
      case Kind::text: return b.values.front();
      case Kind::flag: return true;
      case Kind::text_list: return b.values;
      case Kind::number_list: {
        json a = json::array();
        for (const auto& v : b.values) a.push_back(number(v, false));
        return a;
      }
    }
    return nullptr;
  }

  std::vector<std::unique_ptr<Binding>> items_;
};

void add_env_flags(CLI::App* sub, Bindings& bind) {
  bind.add(sub, "--pmax", "/env/p_max", Kind::number, "valve pressure bound, kPa");
  bind.add(sub, "--perturbation", "/env/perturbation", Kind::number_list, "goal std per axis, mm");
  bind.add(sub, "--max-steps", "/env/max_steps", Kind::integer, "episode horizon");
  bind.add(sub, "--radius", "/env/success_radius", Kind::number, "success radius, mm");
  bind.add(sub, "--initial-pose", "/env/initial_pose", Kind::number_list, "rest pose x y z, mm");
}

}  // namespace

int main(int argc, char** argv) {
  namespace cli = softreach::cli;
  CLI::App app{"softreach: exploration, learned forward models and reaching policies"};
  app.require_subcommand(1);
  app.fallthrough();

  std::uint64_t seed = 0;
  std::string out = "out";
  std::string config_path;
  std::size_t jobs = 1;
  bool quiet = false;
  app.add_option("--seed", seed, "global seed")->capture_default_str();
  app.add_option("--out", out, "output directory")->capture_default_str();
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--jobs", jobs, "worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_flag("--quiet", quiet, "suppress progress output");

  Bindings bind;
  auto* explore = app.add_subcommand("explore", "generate a mean-reverting pressure sequence");
  bind.add(explore, "--alpha", "/exploration/alpha", Kind::number, "weight of the previous pressure");
  bind.add(explore, "--beta", "/exploration/beta", Kind::number, "sigmoid slope");
  bind.add(explore, "--pmax", "/exploration/p_max", Kind::number, "total pressure budget, kPa");
  bind.add(explore, "--pb", "/exploration/p_b", Kind::number, "preload pressure, kPa");
  bind.add(explore, "--valves", "/exploration/n_valves", Kind::integer, "number of valves");
  bind.add(explore, "--steps", "/exploration/n_steps", Kind::integer, "sequence length");
  bind.add(explore, "--noise", "/exploration/noise_std", Kind::number, "reversion draw std, kPa");

  auto* collect = app.add_subcommand("collect", "drive the surrogate or align two raw logs");
  bind.add(collect, "--mode", "/mode", Kind::text, "surrogate | align");
  bind.add(collect, "--pressures", "/pressures", Kind::text, "pressure sequence CSV");
  bind.add(collect, "--q0", "/q0", Kind::number_list, "initial lagged pressures, kPa");
  bind.add(collect, "--tau", "/surrogate/tau", Kind::number, "lag time constant, s");
  bind.add(collect, "--dt", "/surrogate/dt", Kind::number, "control period, s");
  bind.add(collect, "--gain", "/surrogate/gain", Kind::number, "bending gain, mm/kPa");
  bind.add(collect, "--compression", "/surrogate/compression_gain", Kind::number,
           "axial gain, mm/kPa");
  bind.add(collect, "--sensor-noise", "/surrogate/sensor_noise_std", Kind::number,
           "position noise std, mm");
  bind.add(collect, "--pressure-log", "/pressure_log", Kind::text, "raw pressure log CSV");
  bind.add(collect, "--mocap-log", "/mocap_log", Kind::text, "raw motion-capture log CSV");

  auto* build = app.add_subcommand("build-dataset", "cut runs into windowed sequence pairs");
  bind.add(build, "--runs", "/runs", Kind::text_list, "run CSV files");
  bind.add(build, "--window", "/dataset/window_length", Kind::integer, "window length");
  bind.add(build, "--step", "/dataset/step", Kind::integer, "window stride");
  bind.add(build, "--fraction", "/dataset/split_fraction", Kind::number, "train fraction");
  bind.add(build, "--split-mode", "/dataset/split_mode", Kind::text, "pair | run");
  bind.add(build, "--ordering", "/dataset/ordering", Kind::text, "permuted | sequential");

  auto* train_model = app.add_subcommand("train-model", "train the LSTM forward model");
  bind.add(train_model, "--dataset", "/dataset", Kind::text, "dataset.json");
  bind.add(train_model, "--hidden", "/train/hidden", Kind::integer, "LSTM width");
  bind.add(train_model, "--batch", "/train/batch_size", Kind::integer, "pairs per step");
  bind.add(train_model, "--lr", "/train/lr", Kind::number, "Adam learning rate");
  bind.add(train_model, "--steps", "/train/steps", Kind::integer, "gradient steps");
  bind.add(train_model, "--val-every", "/train/val_every", Kind::integer, "validation period");
  bind.add(train_model, "--val-max-pairs", "/train/val_max_pairs", Kind::integer,
           "validation subset size, 0 for all");
  bind.add(train_model, "--ordering", "/train/ordering", Kind::text, "permuted | sequential");
  bind.add(train_model, "--heldout-runs", "/heldout_runs", Kind::text_list,
           "run CSVs for full-run evaluation");

  auto* train_policy = app.add_subcommand("train-policy", "train a PPO reaching policy");
  bind.add(train_policy, "--model", "/model", Kind::text, "model.json");
  add_env_flags(train_policy, bind);
  bind.add(train_policy, "--kind", "/ppo/policy_kind", Kind::text, "feedforward | recurrent");
  bind.add(train_policy, "--updates", "/ppo/total_updates", Kind::integer, "PPO updates");
  bind.add(train_policy, "--envs", "/ppo/n_envs", Kind::integer, "parallel environments");
  bind.add(train_policy, "--rollout", "/ppo/rollout_length", Kind::integer, "steps per rollout");
  bind.add(train_policy, "--lr", "/ppo/lr", Kind::number, "Adam learning rate");
  bind.add(train_policy, "--gamma", "/ppo/gamma", Kind::number, "discount");
  bind.add(train_policy, "--lambda", "/ppo/gae_lambda", Kind::number, "GAE lambda");
  bind.add(train_policy, "--clip", "/ppo/clip_eps", Kind::number, "ratio clip");
  bind.add(train_policy, "--epochs", "/ppo/epochs_per_update", Kind::integer, "epochs per update");
  bind.add(train_policy, "--minibatches", "/ppo/minibatches", Kind::integer, "minibatches per epoch");
  bind.add(train_policy, "--entropy", "/ppo/entropy_coef", Kind::number, "entropy coefficient");
  bind.add(train_policy, "--hidden", "/ppo/hidden", Kind::integer, "network width");
  bind.add(train_policy, "--reward-scale", "/ppo/reward_scale", Kind::number,
           "reward multiplier for learning targets");
  bind.add(train_policy, "--seeds", "/seeds", Kind::integer, "independent seeds from --seed");
  bind.add(train_policy, "--eval-episodes", "/eval_episodes", Kind::integer, "evaluation episodes");

  auto* evaluate = app.add_subcommand("evaluate", "score a model and optionally a policy");
  bind.add(evaluate, "--model", "/model", Kind::text, "model.json");
  bind.add(evaluate, "--dataset", "/dataset", Kind::text, "dataset.json");
  bind.add(evaluate, "--runs", "/runs", Kind::text_list, "run CSVs for full-run evaluation");
  bind.add(evaluate, "--policy", "/policy", Kind::text, "policy.json");
  bind.add(evaluate, "--episodes", "/episodes", Kind::integer, "evaluation episodes");
  add_env_flags(evaluate, bind);

  auto* reproduce = app.add_subcommand("reproduce", "rerun a stage from its manifest");
  std::string manifest_path;
  reproduce->add_option("--manifest", manifest_path, "manifest.json")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  std::ostream* log = quiet ? nullptr : &std::cerr;
  try {
    if (reproduce->parsed()) {
      const auto report = cli::reproduce(manifest_path, out, jobs, log);
      for (const auto& p : report.mismatched) std::cerr << "differs: " << p << '\n';
      std::cout << (report.identical() ? "identical" : "different") << ": "
                << report.original.outputs.size() << " outputs\n";
      return report.identical() ? 0 : 1;
    }
    CLI::App* sub = app.get_subcommands().front();
    json file;
    if (!config_path.empty()) file = softreach::read_json_file(config_path);
    const auto config = cli::effective_config(sub->get_name(), file, bind.overrides(sub));
    cli::Context ctx{seed, out, jobs, log};
    cli::run_command(sub->get_name(), config, ctx);
    std::cout << (std::filesystem::path(out) / "manifest.json").string() << '\n';
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return cli::exit_code(e);
  }
}
