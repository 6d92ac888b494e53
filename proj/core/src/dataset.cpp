#include "softreach/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <thread>

#include "softreach/csv.hpp"
#include "softreach/errors.hpp"

namespace softreach {

namespace {

void check_sorted(const std::vector<double>& t, const char* what) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(t[i])) throw ConfigError(std::string(what) + ": non-finite timestamp");
    if (i > 0 && !(t[i] > t[i - 1])) {
      throw ConfigError(std::string(what) + ": timestamps must be strictly increasing (row " +
                        std::to_string(i) + ")");
    }
  }
}

std::vector<std::string> pressure_columns(std::size_t n) {
  std::vector<std::string> cols;
  for (std::size_t j = 0; j < n; ++j) cols.push_back("p" + std::to_string(j + 1) + "_kpa");
  return cols;
}

// number of leading pressure columns after t_s; throws if the header is off
std::size_t parse_pressure_header(const std::vector<std::string>& header,
                                  std::size_t trailing, const std::string& source) {
  if (header.size() < 2 + trailing || header[0] != "t_s") {
    throw FormatError(source + ": header must start with t_s,p1_kpa", 1);
  }
  const std::size_t n = header.size() - 1 - trailing;
  const auto want = pressure_columns(n);
  for (std::size_t j = 0; j < n; ++j) {
    if (header[1 + j] != want[j]) {
      throw FormatError(source + ": unexpected column '" + header[1 + j] + "'", 1);
    }
  }
  return n;
}

void check_position_header(const std::vector<std::string>& header, std::size_t offset,
                           const std::string& source) {
  static const std::vector<std::string> names{"x_mm", "y_mm", "z_mm"};
  for (std::size_t k = 0; k < 3; ++k) {
    if (header[offset + k] != names[k]) {
      throw FormatError(source + ": unexpected column '" + header[offset + k] + "'", 1);
    }
  }
}

void check_row_times(const csv::Table& table, const std::string& source) {
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    for (double v : table.rows[r]) {
      if (!std::isfinite(v)) throw FormatError(source + ": non-finite value", table.lines[r]);
    }
    if (r > 0 && !(table.rows[r][0] > table.rows[r - 1][0])) {
      throw FormatError(source + ": timestamps must be strictly increasing", table.lines[r]);
    }
  }
}

}  // namespace

void Run::validate() const {
  std::vector<double> t;
  t.reserve(rows.size());
  for (const auto& row : rows) {
    t.push_back(row.t);
    if (row.p.size() != n_valves()) throw ConfigError("run: pressure arity changes within run");
    for (double v : row.p) {
      if (!std::isfinite(v)) throw ConfigError("run: non-finite pressure");
    }
    for (double v : row.pos) {
      if (!std::isfinite(v)) throw ConfigError("run: non-finite position");
    }
  }
  check_sorted(t, "run");
}

Run align(std::span<const PressureSample> pressure_log,
          std::span<const MocapSample> mocap_log, std::string id) {
  if (pressure_log.empty()) throw ConfigError("align: empty pressure log");
  if (mocap_log.empty()) throw ConfigError("align: empty mocap log");
  std::vector<double> tp, tm;
  for (const auto& s : pressure_log) tp.push_back(s.t);
  for (const auto& s : mocap_log) tm.push_back(s.t);
  check_sorted(tp, "align: pressure log");
  check_sorted(tm, "align: mocap log");
  const std::size_t arity = pressure_log.front().p.size();
  for (const auto& s : pressure_log) {
    if (s.p.size() != arity) throw ConfigError("align: pressure arity changes within log");
  }

  // claimed[m] = index of the pressure sample that claimed mocap row m
  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::vector<std::size_t> claimed(tm.size(), kNone);
  for (std::size_t i = 0; i < tp.size(); ++i) {
    auto it = std::lower_bound(tm.begin(), tm.end(), tp[i]);
    std::size_t m = static_cast<std::size_t>(it - tm.begin());
    if (m == tm.size()) {
      m = tm.size() - 1;
    } else if (m > 0 && tp[i] - tm[m - 1] <= tm[m] - tp[i]) {
      --m;  // ties go to the earlier row
    }
    claimed[m] = i;  // later samples overwrite earlier claims
  }

  Run run;
  run.id = std::move(id);
  run.rows.reserve(tm.size());
  std::size_t held = 0;  // first pressure fills rows before any claim
  for (std::size_t m = 0; m < tm.size(); ++m) {
    if (claimed[m] != kNone) held = claimed[m];
    run.rows.push_back({tm[m], pressure_log[held].p, mocap_log[m].pos});
  }
  return run;
}

void write_run_csv(std::ostream& out, const Run& run) {
  std::vector<std::string> header{"t_s"};
  for (auto& c : pressure_columns(run.n_valves())) header.push_back(c);
  header.insert(header.end(), {"x_mm", "y_mm", "z_mm"});
  csv::write_row(out, header);
  for (const auto& row : run.rows) {
    std::vector<std::string> cells{csv::format_number(row.t)};
    for (double p : row.p) cells.push_back(csv::format_number(p));
    for (double x : row.pos) cells.push_back(csv::format_number(x));
    csv::write_row(out, cells);
  }
}

Run read_run_csv(std::istream& in, const std::string& source) {
  auto table = csv::read(in, {}, source);
  const std::size_t n = parse_pressure_header(table.header, 3, source);
  check_position_header(table.header, 1 + n, source);
  check_row_times(table, source);
  Run run;
  run.id = source;
  for (const auto& row : table.rows) {
    RunRow r;
    r.t = row[0];
    r.p.assign(row.begin() + 1, row.begin() + 1 + static_cast<std::ptrdiff_t>(n));
    for (std::size_t k = 0; k < 3; ++k) r.pos[k] = row[1 + n + k];
    run.rows.push_back(std::move(r));
  }
  return run;
}

Run read_run_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  auto run = read_run_csv(in, path.string());
  run.id = path.stem().string();
  return run;
}

std::vector<PressureSample> read_pressure_log(std::istream& in, const std::string& source) {
  auto table = csv::read(in, {}, source);
  parse_pressure_header(table.header, 0, source);
  check_row_times(table, source);
  std::vector<PressureSample> log;
  for (const auto& row : table.rows) {
    log.push_back({row[0], Pressures(row.begin() + 1, row.end())});
  }
  return log;
}

std::vector<MocapSample> read_mocap_log(std::istream& in, const std::string& source) {
  auto table = csv::read(in, {"t_s", "x_mm", "y_mm", "z_mm"}, source);
  check_row_times(table, source);
  std::vector<MocapSample> log;
  for (const auto& row : table.rows) log.push_back({row[0], {row[1], row[2], row[3]}});
  return log;
}

void DatasetConfig::validate() const {
  if (window_length < 2) throw ConfigError("dataset: window_length must be >= 2");
  if (step < 1) throw ConfigError("dataset: step must be >= 1");
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) {
    throw ConfigError("dataset: split_fraction must lie in (0, 1)");
  }
}

std::size_t pair_count(std::size_t length, std::size_t window, std::size_t step) {
  if (step == 0 || window == 0 || length < window) return 0;
  return (length - window) / step + 1;
}

std::vector<SequencePair> make_pairs(const Run& run, const DatasetConfig& cfg) {
  cfg.validate();
  if (run.size() < cfg.window_length) {
    throw ConfigError("make_pairs: run '" + run.id + "' has " + std::to_string(run.size()) +
                      " rows, shorter than window " + std::to_string(cfg.window_length));
  }
  const std::size_t n = pair_count(run.size(), cfg.window_length, cfg.step);
  const std::size_t nv = run.n_valves();
  std::vector<SequencePair> pairs(n);
  for (std::size_t k = 0; k < n; ++k) {
    auto& pair = pairs[k];
    pair.window_length = cfg.window_length;
    pair.n_valves = nv;
    pair.source_run = run.id;
    pair.start_index = k * cfg.step;
    pair.inputs.reserve(cfg.window_length * nv);
    pair.targets.reserve(cfg.window_length * 3);
    for (std::size_t t = 0; t < cfg.window_length; ++t) {
      const auto& row = run.rows[pair.start_index + t];
      pair.inputs.insert(pair.inputs.end(), row.p.begin(), row.p.end());
      pair.targets.insert(pair.targets.end(), row.pos.begin(), row.pos.end());
    }
  }
  return pairs;
}

std::vector<SequencePair> make_pairs(std::span<const Run> runs, const DatasetConfig& cfg,
                                     std::size_t jobs) {
  std::vector<std::vector<SequencePair>> per_run(runs.size());
  if (jobs <= 1 || runs.size() <= 1) {
    for (std::size_t r = 0; r < runs.size(); ++r) per_run[r] = make_pairs(runs[r], cfg);
  } else {
    std::vector<std::exception_ptr> errors(runs.size());
    std::vector<std::thread> workers;
    const std::size_t n_workers = std::min(jobs, runs.size());
    for (std::size_t w = 0; w < n_workers; ++w) {
      workers.emplace_back([&, w] {
        for (std::size_t r = w; r < runs.size(); r += n_workers) {
          try {
            per_run[r] = make_pairs(runs[r], cfg);
          } catch (...) {
            errors[r] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : workers) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  std::vector<SequencePair> all;
  for (auto& v : per_run) {
    std::move(v.begin(), v.end(), std::back_inserter(all));
  }
  return all;
}

DatasetSplit split_and_order(std::span<const SequencePair> pairs, const DatasetConfig& cfg) {
  cfg.validate();
  DatasetSplit split;
  const std::size_t n = pairs.size();
  if (n == 0) return split;
  Rng rng = Rng(cfg.split_seed).split(1);

  std::vector<char> in_train(n, 0);
  std::vector<std::string> run_ids;
  std::map<std::string, std::size_t> run_index;
  for (const auto& p : pairs) {
    if (run_index.emplace(p.source_run, run_ids.size()).second) run_ids.push_back(p.source_run);
  }

  if (cfg.split_mode == SplitMode::run && run_ids.size() >= 2) {
    const auto perm = permutation(run_ids.size(), rng);
    std::size_t n_runs = static_cast<std::size_t>(
        std::floor(cfg.split_fraction * static_cast<double>(run_ids.size())));
    n_runs = std::clamp<std::size_t>(n_runs, 1, run_ids.size() - 1);
    std::vector<char> run_in_train(run_ids.size(), 0);
    for (std::size_t k = 0; k < n_runs; ++k) run_in_train[perm[k]] = 1;
    for (std::size_t i = 0; i < n; ++i) {
      in_train[i] = run_in_train[run_index[pairs[i].source_run]];
    }
  } else {
    const auto perm = permutation(n, rng);
    const auto n_train =
        static_cast<std::size_t>(std::floor(cfg.split_fraction * static_cast<double>(n)));
    for (std::size_t k = 0; k < n_train; ++k) in_train[perm[k]] = 1;
  }

  std::vector<std::size_t> train;
  for (std::size_t i = 0; i < n; ++i) {
    (in_train[i] ? train : split.test).push_back(i);
  }
  const auto order = epoch_order(train.size(), cfg.ordering, cfg.split_seed, 0);
  split.train.reserve(train.size());
  for (std::size_t k : order) split.train.push_back(train[k]);
  return split;
}

std::vector<std::size_t> epoch_order(std::size_t n, Ordering ordering, std::uint64_t seed,
                                     std::size_t epoch) {
  if (ordering == Ordering::sequential) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    return order;
  }
  Rng rng(seed + epoch);
  return permutation(n, rng);
}

std::string to_string(Ordering ordering) {
  return ordering == Ordering::permuted ? "permuted" : "sequential";
}

std::string to_string(SplitMode mode) { return mode == SplitMode::pair ? "pair" : "run"; }

Ordering parse_ordering(const std::string& text) {
  if (text == "permuted") return Ordering::permuted;
  if (text == "sequential") return Ordering::sequential;
  throw ConfigError("unknown ordering '" + text + "' (permuted|sequential)");
}

SplitMode parse_split_mode(const std::string& text) {
  if (text == "pair") return SplitMode::pair;
  if (text == "run") return SplitMode::run;
  throw ConfigError("unknown split mode '" + text + "' (pair|run)");
}

void to_json(nlohmann::json& j, const DatasetConfig& cfg) {
  j = nlohmann::json{{"window_length", cfg.window_length},
                     {"step", cfg.step},
                     {"split_fraction", cfg.split_fraction},
                     {"ordering", to_string(cfg.ordering)},
                     {"split_mode", to_string(cfg.split_mode)},
                     {"split_seed", cfg.split_seed}};
}

void from_json(const nlohmann::json& j, DatasetConfig& cfg) {
  cfg.window_length = j.value("window_length", cfg.window_length);
  cfg.step = j.value("step", cfg.step);
  cfg.split_fraction = j.value("split_fraction", cfg.split_fraction);
  if (j.contains("ordering")) cfg.ordering = parse_ordering(j.at("ordering").get<std::string>());
  if (j.contains("split_mode")) {
    cfg.split_mode = parse_split_mode(j.at("split_mode").get<std::string>());
  }
  cfg.split_seed = j.value("split_seed", cfg.split_seed);
}

DatasetManifest make_manifest(std::span<const Run> runs,
                              const std::vector<std::string>& run_files,
                              std::span<const SequencePair> pairs,
                              const DatasetSplit& split, const DatasetConfig& cfg) {
  DatasetManifest m;
  m.config = cfg;
  m.run_files = run_files;
  std::map<std::string, std::size_t> index;
  for (std::size_t r = 0; r < runs.size(); ++r) {
    m.run_ids.push_back(runs[r].id);
    m.run_lengths.push_back(runs[r].size());
    index[runs[r].id] = r;
  }
  auto ref = [&](std::size_t i) {
    return std::array<std::size_t, 2>{index.at(pairs[i].source_run), pairs[i].start_index};
  };
  std::vector<std::size_t> train = split.train;
  std::sort(train.begin(), train.end());
  for (std::size_t i : train) m.train.push_back(ref(i));
  for (std::size_t i : split.test) m.test.push_back(ref(i));
  return m;
}

nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json runs = nlohmann::json::array();
  for (std::size_t r = 0; r < m.run_files.size(); ++r) {
    runs.push_back({{"file", m.run_files[r]}, {"id", m.run_ids[r]}, {"rows", m.run_lengths[r]}});
  }
  return {{"format", "softreach.dataset"},
          {"format_version", 1},
          {"config", m.config},
          {"runs", runs},
          {"split", {{"train", m.train}, {"test", m.test}}}};
}

DatasetManifest manifest_from_json(const nlohmann::json& j) {
  if (j.value("format", std::string()) != "softreach.dataset") {
    throw FormatError("not a dataset manifest", 0);
  }
  DatasetManifest m;
  m.config = j.at("config").get<DatasetConfig>();
  for (const auto& r : j.at("runs")) {
    m.run_files.push_back(r.at("file").get<std::string>());
    m.run_ids.push_back(r.at("id").get<std::string>());
    m.run_lengths.push_back(r.at("rows").get<std::size_t>());
  }
  m.train = j.at("split").at("train").get<std::vector<std::array<std::size_t, 2>>>();
  m.test = j.at("split").at("test").get<std::vector<std::array<std::size_t, 2>>>();
  return m;
}

LoadedDataset load_dataset(const DatasetManifest& m, const std::filesystem::path& base_dir) {
  LoadedDataset ds;
  for (std::size_t r = 0; r < m.run_files.size(); ++r) {
    std::filesystem::path p = m.run_files[r];
    if (p.is_relative()) p = base_dir / p;
    auto run = read_run_file(p);
    run.id = m.run_ids[r];
    if (run.size() != m.run_lengths[r]) {
      throw FormatError("run file " + p.string() + " changed since the manifest was written", 0);
    }
    ds.runs.push_back(std::move(run));
  }
  std::vector<std::vector<SequencePair>> per_run;
  for (const auto& run : ds.runs) per_run.push_back(make_pairs(run, m.config));
  auto fetch = [&](const std::array<std::size_t, 2>& ref) {
    const auto& pairs = per_run.at(ref[0]);
    const std::size_t k = ref[1] / m.config.step;
    if (k >= pairs.size() || pairs[k].start_index != ref[1]) {
      throw FormatError("manifest references a missing pair", 0);
    }
    return pairs[k];
  };
  for (const auto& ref : m.train) ds.train.push_back(fetch(ref));
  for (const auto& ref : m.test) ds.test.push_back(fetch(ref));
  return ds;
}

}  // namespace softreach
