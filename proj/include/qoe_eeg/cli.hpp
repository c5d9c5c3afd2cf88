#pragma once

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "qoe_eeg/dataset.hpp"
#include "qoe_eeg/dsp.hpp"
#include "qoe_eeg/ingest.hpp"
#include "qoe_eeg/io.hpp"
#include "qoe_eeg/nn/checkpoint.hpp"
#include "qoe_eeg/report.hpp"
#include "qoe_eeg/train.hpp"

namespace qoe::cli {

inline constexpr std::string_view kModule = "cli";

namespace fs = std::filesystem;
using io::json;

enum Exit : int { kOk = 0, kDataFailure = 1, kConfigFailure = 2 };

inline int exit_code(ErrorCode c) {
  switch (c) {
    case ErrorCode::InvalidSpec:
    case ErrorCode::InvalidConfig:
    case ErrorCode::InvalidKind:
    case ErrorCode::EmptyAxis:
    case ErrorCode::InvalidBand:
    case ErrorCode::UnstableDesign:
      return kConfigFailure;
    default:
      return kDataFailure;
  }
}

// ---------------------------------------------------------------------------
// Logging: timestamped lines in <out>/run.log, errors echoed to stderr.

enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

inline LogLevel log_level_from_env() {
  const char* v = std::getenv("QOE_EEG_LOG");
  if (!v) return LogLevel::Info;
  const std::string s(v);
  if (s == "error") return LogLevel::Error;
  if (s == "debug") return LogLevel::Debug;
  return LogLevel::Info;
}

class Logger {
 public:
  Logger(std::ostream& out, std::ostream& err) : out_(out), err_(err), level_(log_level_from_env()) {}

  void open(const fs::path& dir) {
    fs::create_directories(dir);
    file_.open(dir / "run.log", std::ios::app);
  }

  void error(const std::string& m) { write(LogLevel::Error, m, true); }
  void info(const std::string& m) { write(LogLevel::Info, m, false); }
  void debug(const std::string& m) { write(LogLevel::Debug, m, false); }

  // Headline output for the user; also logged.
  void say(const std::string& m) {
    std::lock_guard lock(mutex_);
    out_ << m << "\n";
    if (file_) file_ << stamp() << " INFO " << m << "\n";
  }

 private:
  static std::string stamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
  }

  void write(LogLevel l, const std::string& m, bool to_stderr) {
    std::lock_guard lock(mutex_);
    if (to_stderr) err_ << m << "\n";
    if (l > level_) return;
    static constexpr const char* names[] = {"ERROR", "INFO", "DEBUG"};
    if (file_) file_ << stamp() << " " << names[static_cast<int>(l)] << " " << m << "\n";
  }

  std::ostream& out_;
  std::ostream& err_;
  LogLevel level_;
  std::ofstream file_;
  std::mutex mutex_;
};

// ---------------------------------------------------------------------------
// Options and run configuration

struct Common {
  std::string config;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
  bool force = false;
};

struct RunConfig {
  json j = json::object();
  fs::path base;  // config file, for resolving relative paths

  static RunConfig load(const std::string& path) {
    RunConfig rc;
    if (path.empty()) return rc;
    if (!fs::exists(path)) throw Error(kModule, ErrorCode::InvalidConfig, "config file " + path + " does not exist");
    try {
      rc.j = io::read_json(path, kModule);
    } catch (const Error& e) {
      throw Error(kModule, ErrorCode::InvalidConfig, e.what());
    }
    if (!rc.j.is_object()) throw Error(kModule, ErrorCode::InvalidConfig, path + ": top level must be an object");
    rc.base = path;
    return rc;
  }

  // A path field that must exist at command start.
  fs::path existing_path(const std::string& key) const {
    if (!j.contains(key)) throw Error(kModule, ErrorCode::InvalidConfig, "config is missing \"" + key + "\"");
    const fs::path p = base.empty() ? fs::path(j.at(key).get<std::string>()) : io::resolve(base, j.at(key).get<std::string>());
    if (!fs::exists(p)) throw Error(kModule, ErrorCode::InvalidConfig, key + " path " + p.string() + " does not exist");
    return p;
  }

  json section(const std::string& key) const { return j.contains(key) ? j.at(key) : json::object(); }
};

// Fails when any of `targets` already exists and --force is absent.
inline void guard_overwrite(const Common& c, const std::vector<fs::path>& targets) {
  if (c.force) return;
  for (const auto& t : targets)
    if (fs::exists(t))
      throw Error(kModule, ErrorCode::Io, t.string() + " exists; refusing to overwrite without --force");
}

template <typename T>
T parse_section(const json& j, const std::string& what, T base) {
  try {
    return T::from_json(j, base);
  } catch (const json::exception& e) {
    throw Error(kModule, ErrorCode::InvalidConfig, what + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// synth

struct SynthTier {
  std::array<int, kNumFactors> scores{};
  std::map<std::string, std::vector<ingest::Component>> components;
};

struct SynthPlan {
  ingest::SynthSpec base;
  double amplitude_jitter = 0.0;  // fractional, uniform in [-j, j] per component and recording
  std::vector<SynthTier> tiers;
};

inline std::map<std::string, std::vector<ingest::Component>> parse_components(const json& j) {
  std::map<std::string, std::vector<ingest::Component>> out;
  for (const auto& [label, arr] : j.items())
    for (const auto& c : arr) out[label].push_back({c.at("frequency").get<double>(), c.at("amplitude").get<double>()});
  return out;
}

/// Synthesis spec:
///   {duration, sample_rate, noise_std, seed, amplitude_jitter,
///    background: {channel: [{frequency, amplitude}]},
///    tiers: [{scores: {VC..SA: 1-9}, components: {...}}]}
/// Recording i uses tier i mod |tiers|.
inline SynthPlan parse_synth_plan(const json& j) {
  auto bad = [](const std::string& m) { return Error(kModule, ErrorCode::InvalidSpec, m); };
  SynthPlan p;
  try {
    p.base.duration = j.value("duration", 60.0);
    p.base.sample_rate = j.value("sample_rate", 250.0);
    p.base.noise_std = j.value("noise_std", 1.0);
    p.base.seed = j.value("seed", std::uint64_t{0});
    p.amplitude_jitter = j.value("amplitude_jitter", 0.0);
    if (j.contains("background")) p.base.components = parse_components(j.at("background"));
    if (!j.contains("tiers") || !j.at("tiers").is_array() || j.at("tiers").empty()) throw bad("spec needs a non-empty \"tiers\" array");
    for (const auto& t : j.at("tiers")) {
      SynthTier tier;
      for (QoEFactor f : kFactors) {
        const std::string key(to_string(f));
        const int s = t.at("scores").at(key).get<int>();
        if (s < 1 || s > 9) throw bad("tier score " + key + "=" + std::to_string(s) + " outside 1..9");
        tier.scores[static_cast<std::size_t>(f)] = s;
      }
      if (t.contains("components")) tier.components = parse_components(t.at("components"));
      p.tiers.push_back(std::move(tier));
    }
  } catch (const json::exception& e) {
    throw bad(e.what());
  }
  if (!(p.amplitude_jitter >= 0.0 && p.amplitude_jitter < 1.0)) throw bad("amplitude_jitter must be in [0, 1)");
  return p;
}

inline std::string pad(std::size_t v, int width = 3) {
  std::string s = std::to_string(v);
  return std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(s.size()))), '0') + s;
}

/// Spec for recording `i`: background plus the tier's components, each
/// amplitude jittered from its own stream, and a per-recording noise seed.
inline std::pair<ingest::SynthSpec, ingest::RatingRecord> synth_item(const SynthPlan& plan, std::size_t i) {
  const auto& tier = plan.tiers[i % plan.tiers.size()];
  ingest::SynthSpec s = plan.base;
  s.subject_id = "s" + pad(i / plan.tiers.size());
  s.video_id = "v" + pad(i % plan.tiers.size());
  s.seed = derive_seed(plan.base.seed, "synth-recording", i);
  for (const auto& [label, comps] : tier.components)
    s.components[label].insert(s.components[label].end(), comps.begin(), comps.end());
  CounterRng jitter(derive_seed(plan.base.seed, "synth-jitter", i));
  for (auto& [label, comps] : s.components)
    for (auto& c : comps) c.amplitude *= 1.0 + plan.amplitude_jitter * jitter.uniform(-1.0, 1.0);
  ingest::RatingRecord r{s.subject_id, s.video_id, tier.scores};
  return {std::move(s), r};
}

inline int cmd_synth(const Common& c, std::size_t count, Logger& log) {
  if (c.config.empty()) throw Error(kModule, ErrorCode::InvalidSpec, "synth needs --config <spec.json>");
  const RunConfig rc = RunConfig::load(c.config);
  SynthPlan plan = parse_synth_plan(rc.j);
  if (c.seed) plan.base.seed = *c.seed;
  if (count == 0) throw Error(kModule, ErrorCode::InvalidSpec, "count must be >= 1");

  std::vector<std::pair<ingest::SynthSpec, ingest::RatingRecord>> items;
  for (std::size_t i = 0; i < count; ++i) {
    items.push_back(synth_item(plan, i));
    ingest::validate(items.back().first);
  }
  const fs::path out(c.out);
  guard_overwrite(c, {out / "manifest.json"});
  log.open(out);

  std::vector<fs::path> written;
  try {
    json entries = json::array();
    for (const auto& [spec, rating] : items) {
      const std::string stem = spec.subject_id + "_" + spec.video_id;
      const fs::path rec_path = out / "recordings" / (stem + ".csv");
      const fs::path rat_path = out / "ratings" / (stem + ".json");
      written.push_back(rec_path);
      written.push_back(ingest::sidecar_path(rec_path));
      ingest::write_recording(rec_path, ingest::synth_recording(spec));
      written.push_back(rat_path);
      ingest::write_ratings(rat_path, rating);
      entries.push_back({{"recording", "recordings/" + stem + ".csv"}, {"ratings", "ratings/" + stem + ".json"}});
      log.debug("wrote " + rec_path.string());
    }
    written.push_back(out / "manifest.json");
    io::write_json(out / "manifest.json", {{"entries", entries}});
  } catch (...) {
    std::error_code ec;
    for (const auto& p : written) fs::remove(p, ec);
    throw;
  }
  log.say("synthesized " + std::to_string(count) + " recordings into " + out.string());
  return kOk;
}

// ---------------------------------------------------------------------------
// extract

inline int cmd_extract(const Common& c, Logger& log) {
  const RunConfig rc = RunConfig::load(c.config);
  const fs::path manifest = rc.existing_path("manifest");
  const json fj = rc.section("filter");
  const double low = fj.value("low_hz", 1.0), high = fj.value("high_hz", 47.0);
  const int order = fj.value("order", 4);
  const json pj = rc.section("plan");
  const std::string factor_name = rc.j.value("factor", std::string("VC"));
  const auto factor = parse_factor(factor_name);
  if (!factor) throw Error(kModule, ErrorCode::InvalidConfig, "unknown factor " + factor_name);

  const auto entries = ingest::read_manifest_entries(manifest);
  if (entries.empty()) throw Error(kModule, ErrorCode::Io, manifest.string() + ": no entries");
  const fs::path out(c.out);
  guard_overwrite(c, {out / "dataset.json", out / "features"});
  log.open(out);

  struct Outcome {
    std::string message;
    bool ok = false;
    std::optional<ErrorCode> config_error;
    std::string features_rel, ratings_rel;
  };
  std::vector<Outcome> outcomes(entries.size());
  train::parallel_for(entries.size(), c.jobs, [&](std::size_t i) {
    Outcome& o = outcomes[i];
    try {
      const auto rec = ingest::load_recording(entries[i].recording);
      const auto rating = ingest::load_ratings(entries[i].ratings);
      ingest::check_pair(rec, rating);
      dsp::WindowPlan plan = dsp::WindowPlan::for_rate(rec.sample_rate);
      plan.taper = dsp::parse_taper(pj.value("taper", std::string("hann")));
      plan.welch_subsegment = pj.value("welch_subsegment", plan.welch_subsegment);
      plan.welch_overlap = pj.value("welch_overlap", plan.welch_overlap);
      const auto filter = dsp::design_bandpass(low, high, order, rec.sample_rate);
      const auto ft = dsp::extract_features(dsp::preprocess(rec, filter), plan);
      const std::string stem = rec.subject_id + "_" + rec.video_id;
      dsp::write_features(out / "features" / (stem + ".csv"), ft, plan, filter);
      o.ok = true;
      o.features_rel = "features/" + stem + ".csv";
      o.ratings_rel = fs::relative(fs::absolute(entries[i].ratings), fs::absolute(out)).generic_string();
      o.message = rec.id() + ": T=" + std::to_string(ft.rows()) + " x " + std::to_string(ft.values.cols());
    } catch (const Error& e) {
      o.message = "entry " + std::to_string(i) + " (" + entries[i].recording.string() + "): " + e.what();
      if (exit_code(e.code()) == kConfigFailure) o.config_error = e.code();
    } catch (const std::exception& e) {
      o.message = "entry " + std::to_string(i) + " (" + entries[i].recording.string() + "): " + e.what();
    }
  });

  // A bad filter or plan fails every entry the same way; report it once as a config error.
  for (const auto& o : outcomes)
    if (o.config_error) throw Error(kModule, *o.config_error, o.message);

  std::vector<std::pair<std::string, std::string>> ok_entries;
  std::size_t failed = 0;
  for (const auto& o : outcomes) {
    if (o.ok) {
      log.say(o.message);
      ok_entries.emplace_back(o.features_rel, o.ratings_rel);
    } else {
      ++failed;
      log.error("extract: " + o.message);
    }
  }
  if (!ok_entries.empty()) {
    data::DatasetManifest dm;
    dm.factor = *factor;
    dm.seed = c.seed.value_or(rc.j.value("seed", std::uint64_t{0}));
    data::write_dataset_manifest(out / "dataset.json", dm, ok_entries);
  }
  log.say("extracted " + std::to_string(ok_entries.size()) + "/" + std::to_string(entries.size()) + " recordings");
  return failed ? kDataFailure : kOk;
}

// ---------------------------------------------------------------------------
// train / gridsearch / ablate

struct TrainingSetup {
  data::DatasetManifest manifest;
  std::vector<QoEFactor> factors;
  bool all_factors = false;
  nn::ModelConfig model;
  train::TrainConfig train;
  train::GridAxes grid;
  json raw;
};

inline TrainingSetup training_setup(const Common& c) {
  const RunConfig rc = RunConfig::load(c.config);
  TrainingSetup s;
  s.raw = rc.j;
  s.manifest = data::read_dataset_manifest(rc.existing_path("dataset"));
  const std::string f = rc.j.value("factor", std::string(to_string(s.manifest.factor)));
  if (f == "all") {
    s.all_factors = true;
    s.factors.assign(kFactors.begin(), kFactors.end());
  } else if (auto pf = parse_factor(f)) {
    s.factors = {*pf};
  } else {
    throw Error(kModule, ErrorCode::InvalidConfig, "unknown factor " + f);
  }
  try {
    s.model = nn::ModelConfig::from_json(rc.section("model"));
  } catch (const json::exception& e) {
    throw Error(kModule, ErrorCode::InvalidConfig, std::string("model: ") + e.what());
  }
  s.model.validate();
  s.train = parse_section(rc.section("train"), "train", train::TrainConfig::defaults_for(s.model.architecture));
  // Seed precedence: flag > top-level config > train section.
  s.train.seed = c.seed.value_or(rc.j.value("seed", s.train.seed));
  s.train.jobs = c.jobs;
  s.train.validate();
  s.grid = parse_section(rc.section("grid"), "grid", train::GridAxes{});
  return s;
}

inline fs::path factor_dir(const Common& c, const TrainingSetup& s, QoEFactor f) {
  return s.all_factors ? fs::path(c.out) / std::string(to_string(f)) : fs::path(c.out);
}

inline std::string headline(const train::EvalReport& r) {
  return "accuracy=" + io::format_fixed(r.accuracy, 4) + " macro_f1=" + io::format_fixed(r.macro_f1, 4) +
         " precision=" + io::format_fixed(r.macro_precision, 4) + " recall=" + io::format_fixed(r.macro_recall, 4);
}

/// Hold-out protocol: stratified split, normalizer fitted on the training
/// part, one model trained there and scored on the held-out part.
struct HoldOutRun {
  nn::TrainedModel model;
  train::History history;
  train::EvalReport test;
  double train_accuracy = 0.0;
  data::Split split;
};

inline HoldOutRun hold_out(const data::LabeledDataset& ds, const nn::ModelConfig& mc, const train::TrainConfig& tc) {
  HoldOutRun r;
  const auto labels = ds.labels();
  r.split = data::stratified_split(labels, tc.train_fraction, derive_seed(tc.seed, "split"));
  const auto normalized = data::with_normalization(ds, data::fit_normalizer(ds, r.split.train));
  auto [model, history] = train::train_model(normalized, mc, tc, r.split.train);
  r.model = std::move(model);
  r.history = std::move(history);
  r.test = train::evaluate(r.model, ds, r.split.test);
  r.train_accuracy = train::evaluate(r.model, ds, r.split.train).accuracy;
  return r;
}

inline void write_hold_out(const fs::path& dir, QoEFactor f, const HoldOutRun& r) {
  nn::save_checkpoint(dir / "checkpoint.bin", r.model);
  json ej = r.test.to_json();
  ej["factor"] = std::string(to_string(f));
  ej["architecture"] = nn::to_string(r.model.config.architecture);
  ej["train_accuracy"] = r.train_accuracy;
  ej["train_count"] = r.split.train.size();
  ej["test_count"] = r.split.test.size();
  io::write_json(dir / "eval.json", ej);
  std::string hist = "epoch,loss\n";
  for (std::size_t e = 0; e < r.history.epoch_loss.size(); ++e)
    hist += std::to_string(e) + "," + io::format_double(r.history.epoch_loss[e]) + "\n";
  io::write_atomic(dir / "history.csv", hist);
  io::write_atomic(dir / "confusion.csv", train::confusion_csv(r.test.confusion));
}

inline int cmd_train(const Common& c, Logger& log) {
  const TrainingSetup s = training_setup(c);
  for (QoEFactor f : s.factors) guard_overwrite(c, {factor_dir(c, s, f) / "eval.json", factor_dir(c, s, f) / "checkpoint.bin"});
  log.open(c.out);
  for (QoEFactor f : s.factors) {
    const auto ds = data::load_dataset(s.manifest, f);
    log.info("training " + nn::to_string(s.model.architecture) + " on " + std::string(to_string(f)) + " with " +
             std::to_string(ds.size()) + " examples");
    const auto run = hold_out(ds, s.model, s.train);
    write_hold_out(factor_dir(c, s, f), f, run);
    log.say(std::string(to_string(f)) + ": " + headline(run.test));
  }
  return kOk;
}

inline int cmd_gridsearch(const Common& c, Logger& log) {
  const TrainingSetup s = training_setup(c);
  if (s.all_factors) throw Error(kModule, ErrorCode::InvalidConfig, "gridsearch runs one factor at a time");
  const QoEFactor f = s.factors[0];
  const fs::path out(c.out);
  guard_overwrite(c, {out / "grid.json"});
  log.open(out);
  const auto ds = data::load_dataset(s.manifest, f);
  const auto labels = ds.labels();
  const auto split = data::stratified_split(labels, s.train.train_fraction, derive_seed(s.train.seed, "split"));
  const auto train_part = data::subset(ds, split.train);
  log.info("grid search over " + std::to_string(s.grid.cell_count()) + " cells");
  const auto grid = train::grid_search(train_part, s.grid, s.model, s.train);
  json gj = grid.to_json();
  gj["factor"] = std::string(to_string(f));
  gj["axes"] = s.grid.to_json();
  io::write_json(out / "grid.json", gj);
  const auto& best = grid.cells[grid.best_index];
  log.say("best cell " + std::to_string(grid.best_index) + ": units1=" + std::to_string(best.config.units1) +
          " units2=" + std::to_string(best.config.units2) + " dropout=" + io::format_double(best.config.dropout) +
          " l2=" + io::format_double(best.config.l2) + " mean_macro_f1=" + io::format_fixed(best.mean_f1, 4));
  if (s.raw.value("evaluate_best", true)) {
    const auto run = hold_out(ds, grid.best, s.train);
    write_hold_out(out, f, run);
    log.say(std::string(to_string(f)) + " (best, held out): " + headline(run.test));
  }
  return kOk;
}

inline int cmd_ablate(const Common& c, const std::string& kind_flag, Logger& log) {
  const TrainingSetup s = training_setup(c);
  if (s.all_factors) throw Error(kModule, ErrorCode::InvalidConfig, "ablate runs one factor at a time");
  const std::string kind_name = !kind_flag.empty() ? kind_flag : s.raw.value("ablation", json::object()).value("kind", std::string("band"));
  std::vector<train::AblationKind> kinds;
  if (kind_name == "both")
    kinds = {train::AblationKind::Band, train::AblationKind::Electrode};
  else
    kinds = {train::parse_ablation_kind(kind_name)};
  const fs::path out(c.out);
  auto dir_for = [&](train::AblationKind k) { return kinds.size() > 1 ? out / train::to_string(k) : out; };
  for (auto k : kinds) guard_overwrite(c, {dir_for(k) / "ablation.json"});
  log.open(out);
  const auto ds = data::load_dataset(s.manifest, s.factors[0]);
  for (auto k : kinds) {
    const auto report = train::ablate(ds, k, s.model, s.train);
    json aj = report.to_json();
    aj["factor"] = std::string(to_string(s.factors[0]));
    io::write_json(dir_for(k) / "ablation.json", aj);
    io::write_atomic(dir_for(k) / "ablation.csv", report.to_csv());
    log.say(train::to_string(k) + " ablation: baseline macro_f1=" + io::format_fixed(report.baseline_f1, 4));
    for (const auto& e : report.entries)
      log.say("  -" + e.removed + ": macro_f1=" + io::format_fixed(e.f1, 4) + " delta=" + io::format_fixed(e.delta, 4));
  }
  return kOk;
}

inline int cmd_report(const Common& c, const std::string& results, Logger& log) {
  const fs::path in = results.empty() ? fs::path(c.out) : fs::path(results);
  const fs::path out(c.out);
  guard_overwrite(c, {out / "metrics.svg", out / "ablation_band.svg", out / "ablation_electrode.svg"});
  const auto written = report::render(in, out);
  log.open(out);
  for (const auto& w : written) log.say("wrote " + (out / w).string());
  return kOk;
}

// ---------------------------------------------------------------------------
// Entry point

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"EEG QoE toolkit: synthesize, extract features, train, search, ablate, report"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "JSON run configuration");
    sub->add_option("--out", common.out, "output directory");
    sub->add_option("--seed", common.seed, "base seed (overrides config)");
    sub->add_option("--jobs", common.jobs, "maximum concurrent jobs")->check(CLI::PositiveNumber);
    sub->add_flag("--force", common.force, "overwrite existing outputs");
  };
  std::size_t count = 30;
  std::string kind, results;
  auto* synth = app.add_subcommand("synth", "write synthetic recordings, ratings and a manifest");
  add_common(synth);
  synth->add_option("--count", count, "number of recordings");
  auto* extract = app.add_subcommand("extract", "bandpass and extract (T,80) feature tensors");
  add_common(extract);
  auto* trn = app.add_subcommand("train", "train on a stratified split and evaluate the hold-out");
  add_common(trn);
  auto* grid = app.add_subcommand("gridsearch", "cross-validated grid search");
  add_common(grid);
  auto* abl = app.add_subcommand("ablate", "band or electrode ablation");
  add_common(abl);
  abl->add_option("--kind", kind, "band, electrode or both");
  auto* rep = app.add_subcommand("report", "render SVG charts and CSV tables");
  add_common(rep);
  rep->add_option("--results", results, "results directory (default: --out)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigFailure;
  }

  Logger log(out, err);
  try {
    if (*synth) return cmd_synth(common, count, log);
    if (*extract) return cmd_extract(common, log);
    if (*trn) return cmd_train(common, log);
    if (*grid) return cmd_gridsearch(common, log);
    if (*abl) return cmd_ablate(common, kind, log);
    if (*rep) return cmd_report(common, results, log);
  } catch (const Error& e) {
    log.error(e.what());
    return exit_code(e.code());
  } catch (const std::exception& e) {
    log.error(std::string("error: ") + e.what());
    return kDataFailure;
  }
  return kConfigFailure;
}

}  // namespace qoe::cli
