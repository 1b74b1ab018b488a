// dbnet: train, evaluate, sweep and inspect dual-branch EEG classifiers.
//
// Exit codes: 0 success, 1 I/O or file-format failure, 2 validation failure.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <numeric>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dbnet/config.hpp"
#include "dbnet/data.hpp"
#include "dbnet/io.hpp"
#include "dbnet/train.hpp"
#include "dbnet/weights.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dbnet;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitIo = 1;
constexpr int kExitInvalid = 2;

/// Model and training settings after merging the config file, --set overrides
/// and the seed sources. Shape keys absent from both are taken from the data.
struct Settings {
  DbNetConfig model;
  TrainConfig train;
  std::set<std::string> model_keys;
};

json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return json(text);
  }
}

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("DBNET_SEED");
  if (s == nullptr || *s == '\0') return std::nullopt;
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used != std::string(s).size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("DBNET_SEED is an unsigned integer", std::string("got '") + s + "'");
  }
}

Settings load_settings(const std::string& config_path, const std::vector<std::string>& overrides,
                       std::optional<std::uint64_t> seed_flag) {
  json model_json = json::object(), train_json = json::object();
  if (!config_path.empty()) {
    json file;
    try {
      file = json::parse(read_file(config_path));
    } catch (const json::parse_error& e) {
      throw ConfigError("config file is valid JSON", e.what());
    }
    if (!file.is_object()) throw ConfigError("config file is a JSON object", config_path);
    for (const auto& [key, value] : file.items()) {
      if (key == "model") {
        model_json = value;
      } else if (key == "train") {
        train_json = value;
      } else {
        throw ConfigError("config file keys in {model, train}", "unknown key '" + key + "'");
      }
    }
  }
  const json model_keys = DbNetConfig{}, train_keys = TrainConfig{};
  for (const auto& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set takes key=value", "got '" + item + "'");
    const std::string key = item.substr(0, eq);
    const json value = parse_value(item.substr(eq + 1));
    if (model_keys.contains(key)) {
      model_json[key] = value;
    } else if (train_keys.contains(key)) {
      train_json[key] = value;
    } else {
      throw ConfigError("known config key", "unknown key '" + key + "'");
    }
  }

  Settings s;
  try {
    s.model = model_json.get<DbNetConfig>();
    s.train = train_json.get<TrainConfig>();
  } catch (const json::exception& e) {
    throw ConfigError("config values have the expected types", e.what());
  }
  for (const auto& [key, _] : model_json.items()) s.model_keys.insert(key);
  if (seed_flag) {
    s.train.seed = *seed_flag;
  } else if (!train_json.contains("seed")) {
    s.train.seed = env_seed().value_or(0);
  }
  return s;
}

/// Fills channels, samples and n_classes from the data unless set explicitly.
void adopt_data_shape(Settings& s, const TrialSet& data) {
  if (!s.model_keys.contains("channels")) s.model.channels = data.channels();
  if (!s.model_keys.contains("samples")) s.model.samples = data.samples();
  if (!s.model_keys.contains("n_classes")) s.model.n_classes = data.n_classes;
}

void require_match(const DbNetConfig& c, const TrialSet& data, const std::string& what) {
  if (data.channels() != c.channels || data.samples() != c.samples || data.n_classes != c.n_classes) {
    throw DataError(what + " is C=" + std::to_string(data.channels()) + ", T=" + std::to_string(data.samples()) +
                    ", n_classes=" + std::to_string(data.n_classes) + "; model expects C=" +
                    std::to_string(c.channels) + ", T=" + std::to_string(c.samples) +
                    ", n_classes=" + std::to_string(c.n_classes));
  }
}

struct Dataset {
  TrialSet set;
  std::string fingerprint;
};

Dataset load_dataset(const std::string& path) {
  const std::string bytes = read_file(path);
  return Dataset{decode_container(bytes), hex64(fnv1a64(bytes))};
}

std::string iso_time_utc(std::chrono::system_clock::time_point t) {
  const std::time_t tt = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Adds manifest_hash over everything except the volatile keys.
json finish_manifest(json manifest, const json& paths, std::chrono::system_clock::time_point started) {
  manifest["manifest_hash"] = hex64(fnv1a64(manifest.dump()));
  manifest["paths"] = paths;
  const auto finished = std::chrono::system_clock::now();
  manifest["wall_clock"] = {{"started", iso_time_utc(started)},
                            {"finished", iso_time_utc(finished)},
                            {"seconds", std::chrono::duration<double>(finished - started).count()}};
  return manifest;
}

void write_json(const fs::path& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

json report_json(const EvalReport& report, const Settings& s) {
  json j = report;
  j["config"] = {{"model", s.model}, {"train", s.train}};
  return j;
}

// train ---------------------------------------------------------------------

struct TrainArgs {
  std::string data, eval_data, config, out;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> rounds;
  std::size_t jobs = 1;
  bool verbose = false;
};

int cmd_train(const TrainArgs& a) {
  const auto started = std::chrono::system_clock::now();
  Settings s = load_settings(a.config, a.overrides, a.seed);
  if (a.rounds) s.train.rounds = *a.rounds;
  s.train.validate();
  const Dataset train_data = load_dataset(a.data);
  const Dataset eval_data = load_dataset(a.eval_data);
  adopt_data_shape(s, train_data.set);
  check_config(s.model);
  require_match(s.model, train_data.set, "training data");
  require_match(s.model, eval_data.set, "evaluation data");

  const Standardizer standardizer = fit_standardizer(train_data.set);
  const TrialSet train_set = apply_standardizer(standardizer, train_data.set);
  const TrialSet eval_set = apply_standardizer(standardizer, eval_data.set);

  std::mutex log_mutex;
  const EpochCallback progress = [&](std::size_t round, const EpochRecord& e) {
    if (!a.verbose) return;
    std::lock_guard lock(log_mutex);
    std::cerr << "round " << round << " epoch " << e.epoch << " train_loss " << e.train_loss << " eval_loss "
              << e.eval_loss << " eval_Pa " << e.eval_pa << '\n';
  };
  const TrainResult result = train(s.model, s.train, train_set, eval_set, progress, a.jobs);
  const RoundResult& best = result.best();

  DbNet<float> model(s.model, 0);
  restore(model.parameters(), best.weights);

  const fs::path out(a.out);
  ensure_dir(out);
  save_weights(model, out / "weights.dbnw", &standardizer);
  write_file_atomic(out / "history.csv", history_csv(result));
  write_file_atomic(out / "confusion.csv", confusion_csv(best.eval.confusion, eval_set.meta.class_names));

  json rounds = json::array();
  for (const auto& r : result.rounds) {
    rounds.push_back({{"round", r.round},
                      {"seed", r.seed},
                      {"best_epoch", r.best_epoch},
                      {"epochs_run", r.epochs_run},
                      {"P_a", r.eval.pa},
                      {"K", r.eval.kappa},
                      {"eval_loss", r.eval.loss}});
  }
  json report = report_json(best.eval, s);
  report["best_round"] = result.best_round;
  report["rounds"] = rounds;
  write_json(out / "report.json", report);

  json seeds = json::array();
  for (const auto& r : result.rounds) seeds.push_back(r.seed);
  json manifest{
      {"command", "train"},
      {"config", {{"model", s.model}, {"train", s.train}}},
      {"datasets",
       {{"train", {{"fnv1a64", train_data.fingerprint}, {"trials", train_data.set.size()}}},
        {"eval", {{"fnv1a64", eval_data.fingerprint}, {"trials", eval_data.set.size()}}}}},
      {"seeds", {{"base", s.train.seed}, {"rounds", seeds}}},
      {"outputs",
       {{"weights", "weights.dbnw"}, {"history", "history.csv"}, {"report", "report.json"},
        {"confusion", "confusion.csv"}}},
      {"metrics", {{"best_round", result.best_round}, {"P_a", best.eval.pa}, {"K", best.eval.kappa}}},
  };
  const json paths{{"data", fs::absolute(a.data).string()},
                   {"eval_data", fs::absolute(a.eval_data).string()},
                   {"out", fs::absolute(out).string()}};
  write_json(out / "manifest.json", finish_manifest(manifest, paths, started));

  std::cout << "best round " << result.best_round << ": eval P_a " << best.eval.pa << ", K " << best.eval.kappa
            << " (epoch " << best.best_epoch << " of " << best.epochs_run << ")\n";
  return kExitOk;
}

// eval ----------------------------------------------------------------------

struct EvalArgs {
  std::string data, weights, out;
};

int cmd_eval(const EvalArgs& a) {
  LoadedModel loaded = load_weights(a.weights);
  const Dataset data = load_dataset(a.data);
  require_match(loaded.model.config(), data.set, "data");
  const TrialSet set = loaded.standardizer ? apply_standardizer(*loaded.standardizer, data.set) : data.set;
  const EvalReport report = evaluate(loaded.model, set);

  const fs::path out(a.out);
  ensure_dir(out);
  json j = report;
  j["config"] = {{"model", loaded.model.config()}};
  j["data_fnv1a64"] = data.fingerprint;
  write_json(out / "report.json", j);
  write_file_atomic(out / "confusion.csv", confusion_csv(report.confusion, set.meta.class_names));
  std::cout << "P_a " << report.pa << ", K " << report.kappa << " over " << set.size() << " trials\n";
  return kExitOk;
}

// sweep ---------------------------------------------------------------------

struct SweepArgs {
  std::string data, eval_data, config, out, grid;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> rounds;
  std::size_t jobs = 1;
  bool dry_run = false;
};

struct GridPoint {
  std::size_t s, n, d, k;
};

/// "s=1;n=2,3;d=4;k=4" -> cartesian product in (s, n, d, k) order. Keys left
/// out keep the configured value.
std::vector<GridPoint> parse_grid(const std::string& text, const DbNetConfig& base) {
  std::map<std::string, std::vector<std::size_t>> axes{{"s", {base.window_stride}},
                                                      {"n", {base.window_count}},
                                                      {"d", {base.dcc_layers}},
                                                      {"k", {base.dcc_kernel}}};
  std::set<std::string> seen;
  std::stringstream spec(text);
  std::string part;
  while (std::getline(spec, part, ';')) {
    if (part.empty()) continue;
    const auto eq = part.find('=');
    const std::string key = part.substr(0, eq);
    if (eq == std::string::npos || !axes.contains(key)) {
      throw ConfigError("grid terms are s=, n=, d=, k= lists", "got '" + part + "'");
    }
    if (!seen.insert(key).second) throw ConfigError("each grid key appears once", "repeated '" + key + "'");
    std::vector<std::size_t> values;
    std::stringstream list(part.substr(eq + 1));
    std::string item;
    while (std::getline(list, item, ',')) {
      if (item.empty()) continue;
      try {
        std::size_t used = 0;
        const auto v = std::stoull(item, &used);
        if (used != item.size() || v == 0) throw std::invalid_argument(item);
        values.push_back(v);
      } catch (const std::exception&) {
        throw ConfigError("grid values are positive integers", "got '" + item + "' for " + key);
      }
    }
    if (values.empty()) throw ConfigError("grid axes are non-empty", "no values for " + key);
    axes[key] = values;
  }
  if (seen.empty()) throw ConfigError("grid is non-empty", "got '" + text + "'");
  std::vector<GridPoint> points;
  for (auto s : axes["s"])
    for (auto n : axes["n"])
      for (auto d : axes["d"])
        for (auto k : axes["k"]) points.push_back({s, n, d, k});
  return points;
}

int cmd_sweep(const SweepArgs& a) {
  const auto started = std::chrono::system_clock::now();
  Settings s = load_settings(a.config, a.overrides, a.seed);
  if (a.rounds) s.train.rounds = *a.rounds;
  s.train.validate();
  const std::vector<GridPoint> points = parse_grid(a.grid, s.model);
  const Dataset train_data = load_dataset(a.data);
  adopt_data_shape(s, train_data.set);
  require_match(s.model, train_data.set, "training data");

  std::optional<Dataset> eval_data;
  std::optional<Standardizer> standardizer;
  TrialSet train_set, eval_set;
  if (!a.dry_run) {
    if (a.eval_data.empty()) throw ConfigError("--eval-data is required unless --dry-run", "missing");
    eval_data = load_dataset(a.eval_data);
    require_match(s.model, eval_data->set, "evaluation data");
    standardizer = fit_standardizer(train_data.set);
    train_set = apply_standardizer(*standardizer, train_data.set);
    eval_set = apply_standardizer(*standardizer, eval_data->set);
  }

  struct Row {
    DbNetConfig config;
    std::string status;
    std::string detail;
    std::size_t receptive_field = 0;
    std::size_t l_hat = 0, l_tilde = 0;
    std::optional<EvalReport> report;
  };
  std::vector<Row> rows(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    Row& row = rows[i];
    row.config = s.model;
    row.config.window_stride = points[i].s;
    row.config.window_count = points[i].n;
    row.config.dcc_layers = points[i].d;
    row.config.dcc_kernel = points[i].k;
    row.receptive_field = receptive_field(row.config);
    try {
      const BranchDims dims = derive_dims(row.config);
      row.l_hat = dims.l_hat;
      row.l_tilde = dims.l_tilde;
      if (auto v = validate_hyperparams(row.config)) {
        row.status = "skipped";
        row.detail = v->message;
      } else {
        row.status = a.dry_run ? "valid" : "pending";
      }
    } catch (const ConfigError& e) {
      row.status = "skipped";
      row.detail = e.what();
    }
  }

  if (!a.dry_run) {
    std::mutex log_mutex;
    parallel_for(rows.size(), a.jobs, [&](std::size_t i) {
      Row& row = rows[i];
      if (row.status != "pending") return;
      const TrainResult result = train(row.config, s.train, train_set, eval_set);
      row.report = result.best().eval;
      row.status = "ok";
      std::lock_guard lock(log_mutex);
      std::cerr << "s=" << row.config.window_stride << " n=" << row.config.window_count
                << " d=" << row.config.dcc_layers << " k=" << row.config.dcc_kernel << ": P_a " << row.report->pa
                << '\n';
    });
  }

  std::ostringstream csv;
  csv.precision(9);
  csv << "s,n,d,k,status,P_a,K,R,l_hat,l_tilde,detail\n";
  json summary = json::array();
  for (const Row& row : rows) {
    const auto& c = row.config;
    csv << c.window_stride << ',' << c.window_count << ',' << c.dcc_layers << ',' << c.dcc_kernel << ','
        << row.status << ',';
    if (row.report) csv << row.report->pa << ',' << row.report->kappa;
    else csv << ',';
    csv << ',' << row.receptive_field << ',' << row.l_hat << ',' << row.l_tilde << ',' << csv_field(row.detail)
        << '\n';
    json entry{{"s", c.window_stride}, {"n", c.window_count}, {"d", c.dcc_layers}, {"k", c.dcc_kernel},
               {"status", row.status}};
    if (row.report) entry["P_a"] = row.report->pa;
    summary.push_back(entry);
  }

  const fs::path out(a.out);
  ensure_dir(out);
  write_file_atomic(out / "sweep.csv", csv.str());
  json datasets{{"train", {{"fnv1a64", train_data.fingerprint}, {"trials", train_data.set.size()}}}};
  if (eval_data) datasets["eval"] = {{"fnv1a64", eval_data->fingerprint}, {"trials", eval_data->set.size()}};
  json manifest{{"command", "sweep"},
                {"config", {{"model", s.model}, {"train", s.train}}},
                {"grid", a.grid},
                {"dry_run", a.dry_run},
                {"datasets", datasets},
                {"seeds", {{"base", s.train.seed}}},
                {"outputs", {{"sweep", "sweep.csv"}}},
                {"results", summary}};
  json paths{{"data", fs::absolute(a.data).string()}, {"out", fs::absolute(out).string()}};
  if (!a.eval_data.empty()) paths["eval_data"] = fs::absolute(a.eval_data).string();
  write_json(out / "manifest.json", finish_manifest(manifest, paths, started));

  std::size_t skipped = 0;
  for (const Row& row : rows) skipped += row.status == "skipped";
  std::cout << rows.size() << " grid points, " << skipped << " skipped\n";
  return kExitOk;
}

// synth ---------------------------------------------------------------------

struct SynthArgs {
  std::string out, eval_out;
  std::size_t classes = 2, per_class = 100, eval_per_class = 0, channels = 4, samples = 512;
  std::optional<std::uint64_t> seed;
  SynthOptions options;
};

int cmd_synth(const SynthArgs& a) {
  const std::uint64_t seed = a.seed ? *a.seed : env_seed().value_or(0);
  if (!a.eval_out.empty() && a.eval_per_class == 0) {
    throw ConfigError("--eval-per-class > 0 with --eval-out", "got 0");
  }
  const TrialSet all = synthesize(a.classes, a.per_class + a.eval_per_class, a.channels, a.samples, seed, a.options);
  std::vector<std::size_t> first(a.classes * a.per_class), rest(a.classes * a.eval_per_class);
  std::iota(first.begin(), first.end(), std::size_t{0});
  std::iota(rest.begin(), rest.end(), first.size());
  save_container(all.subset(first), a.out);
  if (!a.eval_out.empty()) save_container(all.subset(rest), a.eval_out);
  std::cout << "wrote " << first.size() << " trials to " << a.out;
  if (!a.eval_out.empty()) std::cout << " and " << rest.size() << " trials to " << a.eval_out;
  std::cout << '\n';
  return kExitOk;
}

// inspect -------------------------------------------------------------------

int cmd_inspect(const std::string& path) {
  const std::string bytes = read_file(path);
  json j;
  if (bytes.starts_with("EEGB")) {
    const TrialSet set = decode_container(bytes);
    j = {{"kind", "EEGB"},
         {"version", kContainerVersion},
         {"trials", set.size()},
         {"channels", set.channels()},
         {"samples", set.samples()},
         {"n_classes", set.n_classes},
         {"class_counts", set.class_counts()},
         {"sampling_rate", set.meta.sampling_rate},
         {"subject", set.meta.subject},
         {"class_names", set.meta.class_names},
         {"electrode_names", set.meta.electrode_names},
         {"fnv1a64", hex64(fnv1a64(bytes))}};
  } else if (bytes.starts_with("DBNW")) {
    LoadedModel loaded = decode_weights(bytes);
    const BranchDims& d = loaded.model.dims();
    std::size_t trainable = 0;
    json tensors = json::array();
    for (const auto& p : loaded.model.parameters()) {
      if (p.trainable) trainable += p.var.size();
      tensors.push_back({{"name", p.name}, {"shape", p.var.shape()}, {"trainable", p.trainable}});
    }
    j = {{"kind", "DBNW"},
         {"version", kWeightsVersion},
         {"model", loaded.model.config()},
         {"dims",
          {{"T_hat", d.t_hat}, {"T_tilde", d.t_tilde}, {"F_hat", d.f_hat}, {"F_tilde", d.f_tilde},
           {"windows", d.windows}, {"l_hat", d.l_hat}, {"l_tilde", d.l_tilde}, {"concat", d.concat_len}}},
         {"receptive_field", receptive_field(loaded.model.config())},
         {"trainable_parameters", trainable},
         {"standardizer", loaded.standardizer.has_value()},
         {"tensors", tensors}};
  } else {
    throw FormatError(FormatError::Kind::BadMagic, "bad magic: '" + path + "' is neither EEGB nor DBNW");
  }
  std::cout << j.dump(2) << '\n';
  return kExitOk;
}

template <typename F>
int guarded(F&& body) {
  try {
    return body();
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const FormatError& e) {
    std::cerr << "error: " << to_string(e.kind()) << ": " << e.what() << '\n';
    return kExitIo;
  } catch (const ConfigError& e) {
    std::cerr << "error: invalid configuration: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const std::invalid_argument& e) {  // DataError, ShapeError
    std::cerr << "error: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-branch EEG motor-imagery classifier"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train with early stopping over seeded rounds");
  train_cmd->add_option("--data", ta.data, "Training container (EEGB)")->required();
  train_cmd->add_option("--eval-data", ta.eval_data, "Evaluation container (EEGB)")->required();
  train_cmd->add_option("--config", ta.config, "JSON file with \"model\" and \"train\" objects");
  train_cmd->add_option("--set", ta.overrides, "Override a config key, key=value (repeatable)");
  train_cmd->add_option("--out", ta.out, "Output directory")->required();
  train_cmd->add_option("--seed", ta.seed, "Base seed (default: config, then DBNET_SEED, then 0)");
  train_cmd->add_option("--rounds", ta.rounds, "Independent training rounds");
  train_cmd->add_option("--jobs", ta.jobs, "Rounds trained concurrently")->check(CLI::PositiveNumber);
  train_cmd->add_flag("--verbose", ta.verbose, "Log every epoch to stderr");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate saved weights on a container");
  eval_cmd->add_option("--data", ea.data, "Container (EEGB)")->required();
  eval_cmd->add_option("--weights", ea.weights, "Weights file (DBNW)")->required();
  eval_cmd->add_option("--out", ea.out, "Output directory")->required();

  SweepArgs sa;
  auto* sweep_cmd = app.add_subcommand("sweep", "Train over a grid of window and dilated-conv settings");
  sweep_cmd->add_option("--data", sa.data, "Training container (EEGB)")->required();
  sweep_cmd->add_option("--eval-data", sa.eval_data, "Evaluation container (EEGB)");
  sweep_cmd->add_option("--grid", sa.grid, "e.g. \"s=1;n=2,3;d=2,3,4;k=3,4,5\"")->required();
  sweep_cmd->add_option("--config", sa.config, "JSON file with \"model\" and \"train\" objects");
  sweep_cmd->add_option("--set", sa.overrides, "Override a config key, key=value (repeatable)");
  sweep_cmd->add_option("--out", sa.out, "Output directory")->required();
  sweep_cmd->add_option("--seed", sa.seed, "Base seed");
  sweep_cmd->add_option("--rounds", sa.rounds, "Rounds per grid point");
  sweep_cmd->add_option("--jobs", sa.jobs, "Grid points trained concurrently")->check(CLI::PositiveNumber);
  sweep_cmd->add_flag("--dry-run", sa.dry_run, "Only validate grid points");

  SynthArgs ya;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic container");
  synth_cmd->add_option("--out", ya.out, "Output container")->required();
  synth_cmd->add_option("--eval-out", ya.eval_out, "Second container from the same generator");
  synth_cmd->add_option("--classes", ya.classes, "Number of classes");
  synth_cmd->add_option("--per-class", ya.per_class, "Trials per class in --out");
  synth_cmd->add_option("--eval-per-class", ya.eval_per_class, "Trials per class in --eval-out");
  synth_cmd->add_option("--channels", ya.channels, "Electrodes");
  synth_cmd->add_option("--samples", ya.samples, "Samples per trial");
  synth_cmd->add_option("--seed", ya.seed, "Generator seed (default: DBNET_SEED, then 0)");
  synth_cmd->add_option("--noise", ya.options.noise_std, "Noise standard deviation");
  synth_cmd->add_option("--fs", ya.options.sampling_rate, "Sampling rate in Hz");

  std::string inspect_path;
  auto* inspect_cmd = app.add_subcommand("inspect", "Describe an EEGB container or DBNW weights file");
  inspect_cmd->add_option("path", inspect_path, "File to inspect")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInvalid;
  }

  if (*train_cmd) return guarded([&] { return cmd_train(ta); });
  if (*eval_cmd) return guarded([&] { return cmd_eval(ea); });
  if (*sweep_cmd) return guarded([&] { return cmd_sweep(sa); });
  if (*synth_cmd) return guarded([&] { return cmd_synth(ya); });
  if (*inspect_cmd) return guarded([&] { return cmd_inspect(inspect_path); });
  return kExitInvalid;
}
