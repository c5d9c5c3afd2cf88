#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <mutex>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "qoe_eeg/dataset.hpp"
#include "qoe_eeg/dsp.hpp"
#include "qoe_eeg/nn/adam.hpp"
#include "qoe_eeg/nn/checkpoint.hpp"
#include "qoe_eeg/nn/model.hpp"

namespace qoe::train {

inline constexpr std::string_view kModule = "train";

using data::LabeledDataset;
using nn::ModelConfig;
using nn::TrainedModel;

/// Runs fn(0..n-1) on up to `jobs` threads. Each index writes only its own
/// result slot, so output is independent of scheduling. The first exception
/// is rethrown after all workers finish.
inline void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w)
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : workers) t.join();
  if (error) std::rethrow_exception(error);
}

struct TrainConfig {
  int epochs = 100;
  double lr = 1e-3;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  std::size_t folds = 10;
  double train_fraction = 0.8;
  std::size_t jobs = 1;

  // 150 epochs for the transformer, 100 otherwise.
  static TrainConfig defaults_for(nn::Architecture a) {
    TrainConfig c;
    if (a == nn::Architecture::Transformer) c.epochs = 150;
    return c;
  }

  void validate() const {
    if (epochs < 1) throw Error(kModule, ErrorCode::InvalidConfig, "epochs must be >= 1");
    if (folds < 2) throw Error(kModule, ErrorCode::InvalidConfig, "folds must be >= 2");
    if (batch_size < 1) throw Error(kModule, ErrorCode::InvalidConfig, "batch_size must be >= 1");
    if (!(lr > 0.0)) throw Error(kModule, ErrorCode::InvalidConfig, "lr must be > 0");
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
      throw Error(kModule, ErrorCode::InvalidConfig, "train_fraction must be in (0, 1)");
  }

  io::json to_json() const {
    return {{"epochs", epochs},       {"lr", lr},         {"batch_size", batch_size},
            {"seed", seed},           {"folds", folds},   {"train_fraction", train_fraction}};
  }

  static TrainConfig from_json(const io::json& j) { return from_json(j, TrainConfig()); }

  static TrainConfig from_json(const io::json& j, TrainConfig base) {
    base.epochs = j.value("epochs", base.epochs);
    base.lr = j.value("lr", base.lr);
    base.batch_size = j.value("batch_size", base.batch_size);
    base.seed = j.value("seed", base.seed);
    base.folds = j.value("folds", base.folds);
    base.train_fraction = j.value("train_fraction", base.train_fraction);
    return base;
  }
};

struct History {
  std::vector<double> epoch_loss;  // mean training loss per epoch
};

/// Splits shuffled indices into batches of `size`; a trailing batch of one
/// example is merged into the previous batch because batch normalization
/// over a single final state is undefined.
inline std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> order, std::size_t size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t at = 0; at < order.size(); at += size)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), at + size)));
  if (out.size() > 1 && out.back().size() == 1) {
    out[out.size() - 2].push_back(out.back()[0]);
    out.pop_back();
  }
  return out;
}

/// Fixed-epoch mini-batch Adam training on the listed examples. The dataset
/// must carry a normalization table (fitted on these indices); it is stored
/// with the model.
inline std::pair<TrainedModel, History> train_model(const LabeledDataset& ds, ModelConfig config,
                                                    const TrainConfig& tc, std::span<const std::size_t> train_indices) {
  tc.validate();
  if (train_indices.empty()) throw Error(kModule, ErrorCode::EmptyTrainSet, "no training examples");
  if (!ds.normalization) throw Error(kModule, ErrorCode::InvalidConfig, "dataset must be normalized before training");
  config.input_features = static_cast<int>(ds.width());

  TrainedModel model;
  model.config = config;
  model.seed = tc.seed;
  model.normalizer = ds.normalization;
  model.params = nn::build_model(config, tc.seed);

  std::vector<Matrix> inputs(ds.size());
  for (std::size_t i : train_indices) inputs.at(i) = ds.input(i);

  nn::AdamState adam = nn::AdamState::zeros(model.params);
  const nn::AdamOptions opt{tc.lr};
  History history;
  std::vector<std::size_t> order(train_indices.begin(), train_indices.end());
  long step = 0;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    CounterRng shuffle_rng(derive_seed(tc.seed, "epoch", static_cast<std::uint64_t>(epoch)));
    std::vector<std::size_t> perm = order;
    shuffle(std::span<std::size_t>(perm), shuffle_rng);
    double total = 0.0;
    for (const auto& batch_idx : make_batches(perm, tc.batch_size)) {
      std::vector<nn::Example> batch;
      for (std::size_t i : batch_idx) batch.push_back({&inputs[i], ds.examples[i].label});
      CounterRng dropout_rng(derive_seed(tc.seed, "dropout", static_cast<std::uint64_t>(step)));
      auto result = nn::backward(model.params, model.config, batch, dropout_rng);
      ++step;
      nn::adam_step(model.params, result.grads, adam, opt, step);
      nn::apply_bn_updates(model.params, result.bn_updates);
      total += result.loss * static_cast<double>(batch.size());
    }
    history.epoch_loss.push_back(total / static_cast<double>(order.size()));
  }
  return {std::move(model), std::move(history)};
}

// ---------------------------------------------------------------------------
// Evaluation

using Confusion = std::array<std::array<std::size_t, kNumClasses>, kNumClasses>;  // [true][predicted]

struct EvalReport {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  Confusion confusion{};
  std::array<double, kNumClasses> per_class_f1{};

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& row : confusion)
      for (auto v : row) n += v;
    return n;
  }

  bool operator==(const EvalReport&) const = default;

  io::json to_json() const {
    io::json cm = io::json::array();
    for (const auto& row : confusion) cm.push_back(row);
    return {{"accuracy", accuracy},
            {"macro_f1", macro_f1},
            {"macro_precision", macro_precision},
            {"macro_recall", macro_recall},
            {"per_class_f1", per_class_f1},
            {"confusion", cm},
            {"count", total()}};
  }

  static EvalReport from_json(const io::json& j) {
    EvalReport r;
    r.accuracy = j.at("accuracy").get<double>();
    r.macro_f1 = j.at("macro_f1").get<double>();
    r.macro_precision = j.at("macro_precision").get<double>();
    r.macro_recall = j.at("macro_recall").get<double>();
    r.per_class_f1 = j.at("per_class_f1").get<std::array<double, kNumClasses>>();
    for (std::size_t t = 0; t < kNumClasses; ++t)
      for (std::size_t p = 0; p < kNumClasses; ++p) r.confusion[t][p] = j.at("confusion").at(t).at(p).get<std::size_t>();
    return r;
  }
};

/// Metrics from a confusion matrix. Precision of a never-predicted class and
/// recall of an absent class are 0; every class counts in the macro mean.
inline EvalReport metrics_from_confusion(const Confusion& cm) {
  EvalReport r;
  r.confusion = cm;
  const std::size_t n = r.total();
  if (n == 0) throw Error(kModule, ErrorCode::EmptyEvalSet, "no evaluated examples");
  std::size_t correct = 0;
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    correct += cm[k][k];
    std::size_t truth = 0, predicted = 0;
    for (std::size_t j = 0; j < kNumClasses; ++j) {
      truth += cm[k][j];
      predicted += cm[j][k];
    }
    const double tp = static_cast<double>(cm[k][k]);
    const double precision = predicted ? tp / static_cast<double>(predicted) : 0.0;
    const double recall = truth ? tp / static_cast<double>(truth) : 0.0;
    const double f1 = (precision + recall) > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    r.per_class_f1[k] = f1;
    r.macro_precision += precision / static_cast<double>(kNumClasses);
    r.macro_recall += recall / static_cast<double>(kNumClasses);
    r.macro_f1 += f1 / static_cast<double>(kNumClasses);
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return r;
}

inline EvalReport metrics(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.size() != predicted.size()) throw Error(kModule, ErrorCode::ShapeMismatch, "truth/prediction length");
  if (truth.empty()) throw Error(kModule, ErrorCode::EmptyEvalSet, "no evaluated examples");
  Confusion cm{};
  for (std::size_t i = 0; i < truth.size(); ++i)
    ++cm.at(static_cast<std::size_t>(truth[i])).at(static_cast<std::size_t>(predicted[i]));
  return metrics_from_confusion(cm);
}

// Lowest class index wins exact ties.
inline int argmax(const Eigen::Ref<const Eigen::RowVectorXd>& logits) {
  int best = 0;
  for (int k = 1; k < logits.size(); ++k)
    if (logits(k) > logits(best)) best = k;
  return best;
}

inline std::vector<int> predict(const TrainedModel& model, const LabeledDataset& ds, std::span<const std::size_t> indices) {
  std::vector<Matrix> inputs;
  inputs.reserve(indices.size());
  for (std::size_t i : indices) {
    const Matrix& raw = ds.examples.at(i).tensor;
    inputs.push_back(model.normalizer ? model.normalizer->apply(raw) : raw);
  }
  std::vector<int> out;
  constexpr std::size_t kChunk = 64;
  for (std::size_t at = 0; at < inputs.size(); at += kChunk) {
    std::vector<const Matrix*> chunk;
    for (std::size_t i = at; i < std::min(inputs.size(), at + kChunk); ++i) chunk.push_back(&inputs[i]);
    const Matrix logits = nn::predict_logits(model.params, model.config, chunk);
    for (Eigen::Index r = 0; r < logits.rows(); ++r) out.push_back(argmax(logits.row(r)));
  }
  return out;
}

/// Inference-mode metrics over the listed examples. Raw tensors are
/// normalized with the model's own table.
inline EvalReport evaluate(const TrainedModel& model, const LabeledDataset& ds, std::span<const std::size_t> indices) {
  if (indices.empty()) throw Error(kModule, ErrorCode::EmptyEvalSet, "no examples to evaluate");
  const auto predicted = predict(model, ds, indices);
  std::vector<int> truth;
  for (std::size_t i : indices) truth.push_back(ds.examples.at(i).label);
  return metrics(truth, predicted);
}

inline std::string confusion_csv(const Confusion& cm) {
  std::string out = "true,pred_low,pred_middle,pred_high,norm_low,norm_middle,norm_high\n";
  const std::array<const char*, kNumClasses> names = {"low", "middle", "high"};
  for (std::size_t t = 0; t < kNumClasses; ++t) {
    std::size_t row_total = 0;
    for (auto v : cm[t]) row_total += v;
    out += names[t];
    for (auto v : cm[t]) out += "," + std::to_string(v);
    for (auto v : cm[t])
      out += "," + io::format_fixed(row_total ? static_cast<double>(v) / static_cast<double>(row_total) : 0.0, 4);
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cross-validation

struct CvResult {
  std::vector<EvalReport> folds;
  double mean_f1 = 0.0;
  double std_f1 = 0.0;  // population
  double mean_accuracy = 0.0;

  io::json to_json() const {
    io::json f = io::json::array();
    for (const auto& r : folds) f.push_back(r.to_json());
    return {{"folds", f}, {"mean_macro_f1", mean_f1}, {"std_macro_f1", std_f1}, {"mean_accuracy", mean_accuracy}};
  }
};

// Orders indices by (subject, video, index) so training sees the same
// sequence regardless of how the dataset itself is ordered.
inline void canonical_order(const LabeledDataset& ds, std::vector<std::size_t>& idx) {
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = ds.examples[a];
    const auto& y = ds.examples[b];
    return std::tie(x.subject_id, x.video_id, a) < std::tie(y.subject_id, y.video_id, b);
  });
}

inline data::FoldAssignment default_folds(const LabeledDataset& ds, const TrainConfig& tc) {
  const auto labels = ds.labels();
  return data::stratified_kfold(labels, tc.folds, derive_seed(tc.seed, "folds"));
}

/// Per fold: fit the normalizer on the remaining folds, train, evaluate on
/// the held-out fold. Fold f trains with seed derive_seed(seed, "fold", f).
inline CvResult cross_validate(const LabeledDataset& ds, const ModelConfig& config, const TrainConfig& tc,
                               std::optional<data::FoldAssignment> folds = std::nullopt) {
  tc.validate();
  if (ds.size() < tc.folds)
    throw Error(kModule, ErrorCode::TooFewExamples,
                std::to_string(ds.size()) + " examples cannot fill " + std::to_string(tc.folds) + " folds");
  const data::FoldAssignment fa = folds ? *folds : default_folds(ds, tc);
  if (fa.assignment.size() != ds.size()) throw Error(kModule, ErrorCode::ShapeMismatch, "fold assignment length");
  CvResult out;
  out.folds.resize(fa.k);
  parallel_for(fa.k, tc.jobs, [&](std::size_t f) {
    auto train_idx = fa.complement(f);
    auto test_idx = fa.members(f);
    canonical_order(ds, train_idx);
    canonical_order(ds, test_idx);
    if (test_idx.empty()) throw Error(kModule, ErrorCode::TooFewExamples, "fold " + std::to_string(f) + " is empty");
    const auto norm = data::fit_normalizer(ds, train_idx);
    const LabeledDataset fold_ds = data::with_normalization(ds, norm);
    TrainConfig fold_tc = tc;
    fold_tc.seed = derive_seed(tc.seed, "fold", f);
    const auto [model, history] = train_model(fold_ds, config, fold_tc, train_idx);
    out.folds[f] = evaluate(model, ds, test_idx);
  });
  double sum = 0.0, acc = 0.0;
  for (const auto& r : out.folds) {
    sum += r.macro_f1;
    acc += r.accuracy;
  }
  const auto k = static_cast<double>(out.folds.size());
  out.mean_f1 = sum / k;
  out.mean_accuracy = acc / k;
  double var = 0.0;
  for (const auto& r : out.folds) var += (r.macro_f1 - out.mean_f1) * (r.macro_f1 - out.mean_f1);
  out.std_f1 = std::sqrt(var / k);
  return out;
}

// ---------------------------------------------------------------------------
// Grid search

struct GridAxes {
  std::vector<int> units1 = {16, 32, 64, 128};
  std::vector<int> units2 = {16, 32, 64, 128};
  std::vector<double> dropout = {0.2, 0.4, 0.7};
  std::vector<double> l2 = {0.2, 0.4, 0.6};

  std::size_t cell_count() const { return units1.size() * units2.size() * dropout.size() * l2.size(); }

  io::json to_json() const { return {{"units1", units1}, {"units2", units2}, {"dropout", dropout}, {"l2", l2}}; }

  static GridAxes from_json(const io::json& j) { return from_json(j, GridAxes()); }

  static GridAxes from_json(const io::json& j, GridAxes base) {
    base.units1 = j.value("units1", base.units1);
    base.units2 = j.value("units2", base.units2);
    base.dropout = j.value("dropout", base.dropout);
    base.l2 = j.value("l2", base.l2);
    return base;
  }
};

/// Cartesian product in nesting order units1 > units2 > dropout > l2.
inline std::vector<ModelConfig> enumerate_grid(const GridAxes& axes, const ModelConfig& base) {
  if (axes.units1.empty() || axes.units2.empty() || axes.dropout.empty() || axes.l2.empty())
    throw Error(kModule, ErrorCode::EmptyAxis, "every grid axis needs at least one value");
  std::vector<ModelConfig> cells;
  for (int u1 : axes.units1)
    for (int u2 : axes.units2)
      for (double d : axes.dropout)
        for (double l : axes.l2) {
          ModelConfig c = base;
          c.units1 = u1;
          c.units2 = u2;
          c.dropout = d;
          c.l2 = l;
          cells.push_back(c);
        }
  return cells;
}

struct GridCell {
  ModelConfig config;
  double mean_f1 = 0.0;
  double std_f1 = 0.0;
  std::size_t parameter_count = 0;
  std::uint64_t seed = 0;
};

// Higher mean F1 first; then fewer parameters; then lexicographic config.
inline bool better_cell(const GridCell& a, const GridCell& b) {
  if (a.mean_f1 != b.mean_f1) return a.mean_f1 > b.mean_f1;
  if (a.parameter_count != b.parameter_count) return a.parameter_count < b.parameter_count;
  return a.config.key() < b.config.key();
}

struct GridResult {
  std::vector<GridCell> cells;  // enumeration order
  ModelConfig best;
  std::size_t best_index = 0;

  io::json to_json() const {
    auto cell_json = [](const GridCell& c) {
      return io::json{{"config", c.config.to_json()},
                      {"mean_macro_f1", c.mean_f1},
                      {"std_macro_f1", c.std_f1},
                      {"parameter_count", c.parameter_count},
                      {"seed", c.seed}};
    };
    io::json all = io::json::array(), ranked = io::json::array();
    for (const auto& c : cells) all.push_back(cell_json(c));
    std::vector<GridCell> sorted = cells;
    std::stable_sort(sorted.begin(), sorted.end(), better_cell);
    for (const auto& c : sorted) ranked.push_back(cell_json(c));
    return {{"cells", all}, {"ranked", ranked}, {"best", best.to_json()}, {"best_index", best_index}};
  }
};

/// Scores every cell of the grid by cross-validated mean macro-F1. All
/// cells share one fold assignment; cell i trains from
/// derive_seed(seed, "grid-cell", i).
inline GridResult grid_search(const LabeledDataset& ds, const GridAxes& axes, const ModelConfig& base,
                              const TrainConfig& tc) {
  tc.validate();
  const auto configs = enumerate_grid(axes, base);
  const auto folds = default_folds(ds, tc);
  GridResult out;
  out.cells.resize(configs.size());
  // Cells run in parallel; folds inside a cell stay sequential.
  TrainConfig inner = tc;
  inner.jobs = 1;
  parallel_for(configs.size(), tc.jobs, [&](std::size_t i) {
    TrainConfig cell_tc = inner;
    cell_tc.seed = derive_seed(tc.seed, "grid-cell", i);
    ModelConfig c = configs[i];
    c.input_features = static_cast<int>(ds.width());
    const auto cv = cross_validate(ds, c, cell_tc, folds);
    out.cells[i] = {c, cv.mean_f1, cv.std_f1, nn::build_model(c, 0).count(), cell_tc.seed};
  });
  out.best_index = 0;
  for (std::size_t i = 1; i < out.cells.size(); ++i)
    if (better_cell(out.cells[i], out.cells[out.best_index])) out.best_index = i;
  out.best = out.cells[out.best_index].config;
  return out;
}

// ---------------------------------------------------------------------------
// Ablation

enum class AblationKind { Band, Electrode };

inline AblationKind parse_ablation_kind(std::string_view s) {
  if (s == "band") return AblationKind::Band;
  if (s == "electrode") return AblationKind::Electrode;
  throw Error(kModule, ErrorCode::InvalidKind, "ablation kind must be band or electrode, got " + std::string(s));
}

inline std::string to_string(AblationKind k) { return k == AblationKind::Band ? "band" : "electrode"; }

/// Columns that survive removing band `unit` (16 dropped) or electrode
/// `unit` (10 dropped) from the 80-column layout.
inline std::vector<std::size_t> retained_columns(AblationKind kind, std::size_t unit) {
  std::vector<std::size_t> keep;
  for (std::size_t col = 0; col < kFeatureWidth; ++col) {
    const std::size_t e = col / (kNumBands * kNumKinds);
    const std::size_t b = (col / kNumKinds) % kNumBands;
    const bool removed = kind == AblationKind::Band ? b == unit : e == unit;
    if (!removed) keep.push_back(col);
  }
  return keep;
}

struct AblationEntry {
  std::string removed;
  double f1 = 0.0;
  double delta = 0.0;  // baseline - f1
};

struct AblationReport {
  AblationKind kind = AblationKind::Band;
  double baseline_f1 = 0.0;
  std::vector<AblationEntry> entries;

  io::json to_json() const {
    io::json e = io::json::array();
    for (const auto& x : entries) e.push_back({{"removed", x.removed}, {"f1", x.f1}, {"delta", x.delta}});
    return {{"kind", to_string(kind)}, {"baseline_f1", baseline_f1}, {"entries", e}};
  }

  std::string to_csv() const {
    std::string out = "removed,f1,delta\n";
    out += "none," + io::format_double(baseline_f1) + ",0\n";
    for (const auto& x : entries) out += x.removed + "," + io::format_double(x.f1) + "," + io::format_double(x.delta) + "\n";
    return out;
  }
};

// Reference macro-F1 drops (percentage points) for VC on recorded EEG.
// Not asserted; synthetic data will differ.
inline constexpr std::array<std::pair<std::string_view, double>, 5> kReferenceBandDrops = {
    {{"delta", 8.0}, {"theta", 14.0}, {"alpha", 13.0}, {"beta", 17.0}, {"gamma", 15.0}}};
inline constexpr std::array<std::pair<std::string_view, double>, 4> kReferenceElectrodeDrops = {
    {{"P3", 4.0}, {"P4", 6.0}, {"O1", 21.0}, {"O2", 16.0}}};

/// Leave-one-group-out importance: cross-validate on all 80 columns, then
/// again with each band (or electrode) removed, using the same folds and
/// training seeds throughout.
inline AblationReport ablate(const LabeledDataset& ds, AblationKind kind, const ModelConfig& config,
                             const TrainConfig& tc) {
  if (ds.width() != kFeatureWidth)
    throw Error(kModule, ErrorCode::ShapeMismatch, "ablation needs the full 80-column layout");
  if (config.architecture == nn::Architecture::ConvLstm)
    throw Error(kModule, ErrorCode::InvalidConfig, "convlstm needs the full electrode grid; ablate bilstm or transformer");
  const auto folds = default_folds(ds, tc);
  AblationReport report;
  report.kind = kind;
  report.baseline_f1 = cross_validate(ds, config, tc, folds).mean_f1;
  const std::size_t units = kind == AblationKind::Band ? kNumBands : kNumElectrodes;
  const auto bands = dsp::canonical_bands();
  for (std::size_t u = 0; u < units; ++u) {
    const auto cols = retained_columns(kind, u);
    const auto reduced = data::select_columns(ds, cols);
    ModelConfig c = config;
    c.input_features = static_cast<int>(cols.size());
    const double f1 = cross_validate(reduced, c, tc, folds).mean_f1;
    const std::string name = kind == AblationKind::Band ? bands[u].name : std::string(kElectrodes[u]);
    report.entries.push_back({name, f1, report.baseline_f1 - f1});
  }
  return report;
}

}  // namespace qoe::train
