#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "qoe_eeg/dsp.hpp"
#include "qoe_eeg/error.hpp"
#include "qoe_eeg/ingest.hpp"
#include "qoe_eeg/io.hpp"
#include "qoe_eeg/rng.hpp"
#include "qoe_eeg/types.hpp"

namespace qoe::data {

inline constexpr std::string_view kModule = "dataset";

/// 9-point score to {0 low, 1 middle, 2 high} with equal-width bins.
inline int bin_rating(int score) {
  if (score < 1 || score > 9)
    throw Error(kModule, ErrorCode::OutOfRange, "score " + std::to_string(score) + " outside [1,9]");
  return (score - 1) / 3;
}

struct LabeledExample {
  Matrix tensor;  // T x F
  int label = 0;
  std::string subject_id;
  std::string video_id;
};

// Per-column z-score table.
struct Normalizer {
  std::vector<double> mean;
  std::vector<double> std;

  std::size_t width() const { return mean.size(); }

  Matrix apply(const Matrix& x) const {
    if (static_cast<std::size_t>(x.cols()) != mean.size())
      throw Error(kModule, ErrorCode::ShapeMismatch,
                  "normalizer width " + std::to_string(mean.size()) + " vs tensor width " + std::to_string(x.cols()));
    Matrix out(x.rows(), x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const auto k = static_cast<std::size_t>(c);
      out.col(c) = (x.col(c).array() - mean[k]) / std[k];
    }
    return out;
  }

  io::json to_json() const { return {{"mean", mean}, {"std", std}}; }

  static Normalizer from_json(const io::json& j) {
    Normalizer n;
    n.mean = j.at("mean").get<std::vector<double>>();
    n.std = j.at("std").get<std::vector<double>>();
    if (n.mean.size() != n.std.size()) throw Error(kModule, ErrorCode::ShapeMismatch, "normalizer mean/std length");
    return n;
  }

  bool operator==(const Normalizer&) const = default;
};

/// Raw feature tensors plus an optional normalization table. Tensors are
/// never rewritten in place; `input(i)` applies the table on the fly.
struct LabeledDataset {
  QoEFactor factor = QoEFactor::VC;
  std::vector<LabeledExample> examples;
  std::optional<Normalizer> normalization;

  std::size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }
  std::size_t width() const { return examples.empty() ? 0 : static_cast<std::size_t>(examples[0].tensor.cols()); }
  std::size_t steps() const { return examples.empty() ? 0 : static_cast<std::size_t>(examples[0].tensor.rows()); }

  std::vector<int> labels() const {
    std::vector<int> out;
    out.reserve(examples.size());
    for (const auto& e : examples) out.push_back(e.label);
    return out;
  }

  Matrix input(std::size_t i) const {
    return normalization ? normalization->apply(examples[i].tensor) : examples[i].tensor;
  }
};

inline LabeledDataset assemble(const std::vector<std::pair<dsp::FeatureTensor, ingest::RatingRecord>>& pairs,
                               QoEFactor factor) {
  LabeledDataset ds;
  ds.factor = factor;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& [ft, rating] = pairs[i];
    if (ft.values.cols() != static_cast<Eigen::Index>(kFeatureWidth))
      throw Error(kModule, ErrorCode::ShapeMismatch,
                  "pair " + std::to_string(i) + ": width " + std::to_string(ft.values.cols()) + ", expected 80");
    if (i > 0 && ft.values.rows() != pairs[0].first.values.rows())
      throw Error(kModule, ErrorCode::ShapeMismatch,
                  "pair " + std::to_string(i) + ": T=" + std::to_string(ft.values.rows()) +
                      " but pair 0 has T=" + std::to_string(pairs[0].first.values.rows()));
    const int score = rating.score(factor);
    if (score == 0)
      throw Error(kModule, ErrorCode::MissingFactor,
                  "pair " + std::to_string(i) + ": no score for " + std::string(to_string(factor)));
    if (!ft.values.allFinite())
      throw Error(kModule, ErrorCode::ShapeMismatch, "pair " + std::to_string(i) + ": non-finite features");
    ds.examples.push_back({ft.values, bin_rating(score), ft.subject_id, ft.video_id});
  }
  return ds;
}

inline constexpr double kStdFloor = 1e-8;

/// Population mean/std per column over every (example, window) cell of the
/// training examples. Only the listed examples are read.
inline Normalizer fit_normalizer(const LabeledDataset& ds, std::span<const std::size_t> train_indices) {
  if (train_indices.empty()) throw Error(kModule, ErrorCode::EmptyTrainSet, "no training examples to fit on");
  const std::size_t width = ds.width();
  std::vector<double> sum(width, 0.0);
  std::size_t count = 0;
  for (std::size_t i : train_indices) {
    const Matrix& x = ds.examples.at(i).tensor;
    for (Eigen::Index c = 0; c < x.cols(); ++c) sum[static_cast<std::size_t>(c)] += x.col(c).sum();
    count += static_cast<std::size_t>(x.rows());
  }
  Normalizer n;
  n.mean.resize(width);
  n.std.resize(width);
  for (std::size_t c = 0; c < width; ++c) n.mean[c] = sum[c] / static_cast<double>(count);
  std::vector<double> sq(width, 0.0);
  for (std::size_t i : train_indices) {
    const Matrix& x = ds.examples[i].tensor;
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      sq[static_cast<std::size_t>(c)] += (x.col(c).array() - n.mean[static_cast<std::size_t>(c)]).square().sum();
  }
  for (std::size_t c = 0; c < width; ++c) n.std[c] = std::max(std::sqrt(sq[c] / static_cast<double>(count)), kStdFloor);
  return n;
}

inline LabeledDataset with_normalization(LabeledDataset ds, Normalizer n) {
  ds.normalization = std::move(n);
  return ds;
}

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

inline std::array<std::vector<std::size_t>, kNumClasses> by_class(std::span<const int> labels) {
  std::array<std::vector<std::size_t>, kNumClasses> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= static_cast<int>(kNumClasses))
      throw Error(kModule, ErrorCode::OutOfRange, "label " + std::to_string(labels[i]) + " outside {0,1,2}");
    out[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  return out;
}

/// Per class, round(fraction * count) shuffled members go to train, with
/// exact halves rounded toward train. Both index lists come back sorted.
inline Split stratified_split(std::span<const int> labels, double train_fraction, std::uint64_t seed) {
  auto groups = by_class(labels);
  for (std::size_t c = 0; c < kNumClasses; ++c)
    if (groups[c].empty())
      throw Error(kModule, ErrorCode::EmptyClass, "class " + std::to_string(c) + " has no examples");
  Split split;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    CounterRng rng(derive_seed(seed, "split-class", c));
    auto& g = groups[c];
    shuffle(std::span<std::size_t>(g), rng);
    const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(g.size()) + 0.5));
    for (std::size_t k = 0; k < g.size(); ++k) (k < n_train ? split.train : split.test).push_back(g[k]);
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

struct FoldAssignment {
  std::size_t k = 0;
  std::vector<std::size_t> assignment;  // example index -> fold

  std::vector<std::size_t> members(std::size_t fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignment.size(); ++i)
      if (assignment[i] == fold) out.push_back(i);
    return out;
  }

  std::vector<std::size_t> complement(std::size_t fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignment.size(); ++i)
      if (assignment[i] != fold) out.push_back(i);
    return out;
  }

  io::json to_json() const { return {{"k", k}, {"assignment", assignment}}; }

  static FoldAssignment from_json(const io::json& j) {
    FoldAssignment f;
    f.k = j.at("k").get<std::size_t>();
    f.assignment = j.at("assignment").get<std::vector<std::size_t>>();
    for (auto a : f.assignment)
      if (a >= f.k) throw Error(kModule, ErrorCode::OutOfRange, "fold index out of range");
    return f;
  }
};

/// Per class: shuffle, then deal round-robin across folds. The dealing
/// offset carries over from one class to the next so fold sizes stay
/// balanced as well.
inline FoldAssignment stratified_kfold(std::span<const int> labels, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw Error(kModule, ErrorCode::TooFewExamples, "k must be at least 2");
  if (labels.size() < k)
    throw Error(kModule, ErrorCode::TooFewExamples,
                std::to_string(labels.size()) + " examples cannot fill " + std::to_string(k) + " folds");
  auto groups = by_class(labels);
  FoldAssignment f;
  f.k = k;
  f.assignment.assign(labels.size(), 0);
  std::size_t next = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    CounterRng rng(derive_seed(seed, "fold-class", c));
    auto& g = groups[c];
    shuffle(std::span<std::size_t>(g), rng);
    for (std::size_t idx : g) {
      f.assignment[idx] = next;
      next = (next + 1) % k;
    }
  }
  return f;
}

/// Keeps only the listed columns of every tensor. Any normalization table is
/// sliced alongside.
inline LabeledDataset select_columns(const LabeledDataset& ds, std::span<const std::size_t> columns) {
  LabeledDataset out;
  out.factor = ds.factor;
  for (const auto& e : ds.examples) {
    LabeledExample x = e;
    x.tensor.resize(e.tensor.rows(), static_cast<Eigen::Index>(columns.size()));
    for (std::size_t j = 0; j < columns.size(); ++j) x.tensor.col(static_cast<Eigen::Index>(j)) = e.tensor.col(static_cast<Eigen::Index>(columns[j]));
    out.examples.push_back(std::move(x));
  }
  if (ds.normalization) {
    Normalizer n;
    for (std::size_t c : columns) {
      n.mean.push_back(ds.normalization->mean[c]);
      n.std.push_back(ds.normalization->std[c]);
    }
    out.normalization = std::move(n);
  }
  return out;
}

inline LabeledDataset subset(const LabeledDataset& ds, std::span<const std::size_t> indices) {
  LabeledDataset out;
  out.factor = ds.factor;
  out.normalization = ds.normalization;
  for (std::size_t i : indices) out.examples.push_back(ds.examples.at(i));
  return out;
}

struct DatasetManifest {
  QoEFactor factor = QoEFactor::VC;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::filesystem::path, std::filesystem::path>> entries;  // (features, ratings)
};

inline DatasetManifest read_dataset_manifest(const std::filesystem::path& path) {
  const auto j = io::read_json(path, kModule);
  DatasetManifest m;
  try {
    const auto f = parse_factor(j.at("factor").get<std::string>());
    if (!f) throw Error(kModule, ErrorCode::MissingFactor, "unknown factor " + j.at("factor").get<std::string>());
    m.factor = *f;
    m.seed = j.value("seed", std::uint64_t{0});
    for (const auto& e : j.at("entries"))
      m.entries.emplace_back(io::resolve(path, e.at("features").get<std::string>()),
                             io::resolve(path, e.at("ratings").get<std::string>()));
  } catch (const io::json::exception& e) {
    throw Error(kModule, ErrorCode::MissingFactor, path.string() + ": " + e.what());
  }
  return m;
}

inline void write_dataset_manifest(const std::filesystem::path& path, const DatasetManifest& m,
                                   const std::vector<std::pair<std::string, std::string>>& relative_entries) {
  io::json entries = io::json::array();
  for (const auto& [f, r] : relative_entries) entries.push_back({{"features", f}, {"ratings", r}});
  io::write_json(path, {{"factor", std::string(to_string(m.factor))}, {"entries", entries}, {"seed", m.seed}});
}

/// Loads every (features, ratings) pair of a dataset manifest and labels it
/// with `factor`.
inline LabeledDataset load_dataset(const DatasetManifest& m, QoEFactor factor) {
  std::vector<std::pair<dsp::FeatureTensor, ingest::RatingRecord>> pairs;
  for (const auto& [features, ratings] : m.entries) {
    auto ft = dsp::load_features(features);
    auto r = ingest::load_ratings(ratings);
    if (ft.subject_id != r.subject_id || ft.video_id != r.video_id)
      throw Error(kModule, ErrorCode::ShapeMismatch, "features " + ft.id() + " paired with rating " + r.id());
    pairs.emplace_back(std::move(ft), std::move(r));
  }
  return assemble(pairs, factor);
}

}  // namespace qoe::data
