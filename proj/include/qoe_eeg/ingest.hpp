#pragma once

#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "qoe_eeg/error.hpp"
#include "qoe_eeg/io.hpp"
#include "qoe_eeg/rng.hpp"
#include "qoe_eeg/types.hpp"

namespace qoe::ingest {

namespace fs = std::filesystem;
using io::json;

inline constexpr std::string_view kModule = "ingest";

struct RawRecording {
  std::string subject_id;
  std::string video_id;
  double sample_rate = 250.0;
  std::vector<std::string> channels;
  Matrix samples;  // channels x samples, microvolts

  std::size_t num_samples() const { return static_cast<std::size_t>(samples.cols()); }
  std::string id() const { return subject_id + "/" + video_id; }
};

struct RatingRecord {
  std::string subject_id;
  std::string video_id;
  std::array<int, kNumFactors> scores{};

  int score(QoEFactor f) const { return scores[static_cast<std::size_t>(f)]; }
  std::string id() const { return subject_id + "/" + video_id; }
};

struct Component {
  double frequency = 0.0;  // Hz
  double amplitude = 0.0;  // microvolts
};

struct SynthSpec {
  double duration = 60.0;
  double sample_rate = 250.0;
  std::map<std::string, std::vector<Component>> components;  // keyed by channel label
  double noise_std = 0.0;
  std::uint64_t seed = 0;
  std::string subject_id = "synth";
  std::string video_id = "v00";
};

inline fs::path sidecar_path(const fs::path& csv) {
  fs::path p = csv;
  p.replace_extension(".meta.json");
  return p;
}

inline void validate_samples(const RawRecording& rec) {
  if (rec.sample_rate <= 0.0 || !std::isfinite(rec.sample_rate))
    throw Error(kModule, ErrorCode::BadMetadata, "sample_rate must be positive");
  const double min_len = 3.0 * rec.sample_rate;
  if (static_cast<double>(rec.num_samples()) < min_len)
    throw Error(kModule, ErrorCode::TooShort,
                rec.id() + ": " + std::to_string(rec.num_samples()) + " samples, need at least " +
                    io::format_double(min_len));
  if (!rec.samples.allFinite()) throw Error(kModule, ErrorCode::MalformedRow, rec.id() + ": non-finite sample");
}

/// Reads a raw EEG CSV plus its `.meta.json` sidecar. Columns are matched by
/// label and reordered to the canonical electrode order; unknown columns are
/// dropped. Samples before `stimulus_start_sample` (the pre-stimulus
/// baseline) are trimmed.
inline RawRecording load_recording(const fs::path& path) {
  const fs::path meta_path = sidecar_path(path);
  if (!fs::exists(meta_path))
    throw Error(kModule, ErrorCode::BadMetadata, "missing sidecar " + meta_path.string());
  json meta;
  try {
    meta = io::read_json(meta_path, kModule);
  } catch (const Error& e) {
    throw Error(kModule, ErrorCode::BadMetadata, e.what());
  }

  RawRecording rec;
  std::size_t stimulus_start = 0;
  try {
    rec.subject_id = meta.at("subject_id").get<std::string>();
    rec.video_id = meta.at("video_id").get<std::string>();
    rec.sample_rate = meta.at("sample_rate_hz").get<double>();
    if (meta.contains("stimulus_start_sample")) {
      const auto start = meta.at("stimulus_start_sample").get<long long>();
      if (start < 0) throw Error(kModule, ErrorCode::BadMetadata, "stimulus_start_sample < 0");
      stimulus_start = static_cast<std::size_t>(start);
    }
  } catch (const json::exception& e) {
    throw Error(kModule, ErrorCode::BadMetadata, meta_path.string() + ": " + e.what());
  }
  if (!(rec.sample_rate > 0.0))
    throw Error(kModule, ErrorCode::BadMetadata, meta_path.string() + ": sample_rate_hz must be > 0");

  const std::string text = io::read_text(path, kModule);
  const auto rows = io::lines(text);
  if (rows.empty()) throw Error(kModule, ErrorCode::MalformedRow, path.string() + ": empty file");

  const auto header = io::split(rows[0], ',');
  std::array<std::optional<std::size_t>, kNumElectrodes> column_of{};
  for (std::size_t col = 1; col < header.size(); ++col) {
    std::string_view label = header[col];
    while (!label.empty() && label.front() == ' ') label.remove_prefix(1);
    while (!label.empty() && label.back() == ' ') label.remove_suffix(1);
    if (auto e = electrode_index(label)) column_of[*e] = col;
  }
  for (std::size_t e = 0; e < kNumElectrodes; ++e)
    if (!column_of[e])
      throw Error(kModule, ErrorCode::MissingChannel,
                  path.string() + ": channel " + std::string(kElectrodes[e]) + " absent");

  const std::size_t total = rows.size() - 1;
  if (stimulus_start > total)
    throw Error(kModule, ErrorCode::BadMetadata, "stimulus_start_sample beyond end of recording");
  rec.channels.assign(kElectrodes.begin(), kElectrodes.end());
  rec.samples.resize(kNumElectrodes, static_cast<Eigen::Index>(total - stimulus_start));
  for (std::size_t r = 0; r < total; ++r) {
    const auto fields = io::split(rows[r + 1], ',');
    if (fields.size() != header.size())
      throw Error(kModule, ErrorCode::MalformedRow,
                  path.string() + ": row " + std::to_string(r + 2) + " has " + std::to_string(fields.size()) +
                      " fields, header has " + std::to_string(header.size()));
    if (r < stimulus_start) continue;
    for (std::size_t e = 0; e < kNumElectrodes; ++e) {
      const auto v = io::parse_double(fields[*column_of[e]]);
      if (!v || !std::isfinite(*v))
        throw Error(kModule, ErrorCode::MalformedRow,
                    path.string() + ": row " + std::to_string(r + 2) + " column " + std::string(kElectrodes[e]) +
                        " is not a finite number");
      rec.samples(static_cast<Eigen::Index>(e), static_cast<Eigen::Index>(r - stimulus_start)) = *v;
    }
  }
  validate_samples(rec);
  return rec;
}

/// Writes the CSV (6 decimals) and its sidecar. Inverse of load_recording up
/// to that precision.
inline void write_recording(const fs::path& path, const RawRecording& rec, std::size_t stimulus_start = 0) {
  std::string out = "time";
  for (const auto& ch : rec.channels) out += "," + ch;
  out += "\n";
  out.reserve(out.size() + static_cast<std::size_t>(rec.samples.cols()) * (rec.channels.size() + 1) * 12);
  for (Eigen::Index i = 0; i < rec.samples.cols(); ++i) {
    out += io::format_fixed(static_cast<double>(i) / rec.sample_rate, 6);
    for (Eigen::Index c = 0; c < rec.samples.rows(); ++c) {
      out += ',';
      out += io::format_fixed(rec.samples(c, i), 6);
    }
    out += '\n';
  }
  io::write_atomic(path, out);
  json meta = {{"subject_id", rec.subject_id},
               {"video_id", rec.video_id},
               {"sample_rate_hz", rec.sample_rate},
               {"stimulus_start_sample", stimulus_start}};
  io::write_json(sidecar_path(path), meta);
}

inline RatingRecord ratings_from_json(const json& j, const std::string& where) {
  RatingRecord r;
  try {
    r.subject_id = j.at("subject_id").get<std::string>();
    r.video_id = j.at("video_id").get<std::string>();
    const json& scores = j.at("scores");
    for (QoEFactor f : kFactors) {
      const std::string name(to_string(f));
      if (!scores.contains(name))
        throw Error(kModule, ErrorCode::InvalidRating, where + ": factor " + name + " missing");
      const json& v = scores.at(name);
      if (!v.is_number_integer())
        throw Error(kModule, ErrorCode::InvalidRating, where + ": factor " + name + " is not an integer");
      const int s = v.get<int>();
      if (s < 1 || s > 9)
        throw Error(kModule, ErrorCode::InvalidRating,
                    where + ": factor " + name + " score " + std::to_string(s) + " outside [1,9]");
      r.scores[static_cast<std::size_t>(f)] = s;
    }
  } catch (const json::exception& e) {
    throw Error(kModule, ErrorCode::InvalidRating, where + ": " + e.what());
  }
  return r;
}

inline json ratings_to_json(const RatingRecord& r) {
  json scores = json::object();
  for (QoEFactor f : kFactors) scores[std::string(to_string(f))] = r.score(f);
  return {{"subject_id", r.subject_id}, {"video_id", r.video_id}, {"scores", scores}};
}

inline RatingRecord load_ratings(const fs::path& path) {
  return ratings_from_json(io::read_json(path, kModule), path.string());
}

inline void write_ratings(const fs::path& path, const RatingRecord& r) { io::write_json(path, ratings_to_json(r)); }

struct ManifestEntry {
  fs::path recording;
  fs::path ratings;
};

inline std::vector<ManifestEntry> read_manifest_entries(const fs::path& path) {
  const json j = io::read_json(path, kModule);
  std::vector<ManifestEntry> entries;
  try {
    for (const auto& e : j.at("entries"))
      entries.push_back({io::resolve(path, e.at("recording").get<std::string>()),
                         io::resolve(path, e.at("ratings").get<std::string>())});
  } catch (const json::exception& e) {
    throw Error(kModule, ErrorCode::BadMetadata, path.string() + ": " + e.what());
  }
  return entries;
}

inline void check_pair(const RawRecording& rec, const RatingRecord& r) {
  if (rec.subject_id != r.subject_id || rec.video_id != r.video_id)
    throw Error(kModule, ErrorCode::PairMismatch, "recording " + rec.id() + " paired with rating " + r.id());
}

/// Loads every (recording, rating) pair of a manifest in order. Failures are
/// rethrown with the same code, prefixed by the entry index.
inline std::vector<std::pair<RawRecording, RatingRecord>> load_manifest(const fs::path& path) {
  std::vector<std::pair<RawRecording, RatingRecord>> out;
  const auto entries = read_manifest_entries(path);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    try {
      RawRecording rec = load_recording(entries[i].recording);
      RatingRecord rating = load_ratings(entries[i].ratings);
      check_pair(rec, rating);
      out.emplace_back(std::move(rec), std::move(rating));
    } catch (const Error& e) {
      throw Error(kModule, e.code(), "entry " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

inline void validate(const SynthSpec& spec) {
  if (!(spec.sample_rate > 0.0)) throw Error(kModule, ErrorCode::InvalidSpec, "sample_rate must be > 0");
  if (!(spec.duration > 3.0)) throw Error(kModule, ErrorCode::InvalidSpec, "duration must exceed 3 s");
  if (!(spec.noise_std >= 0.0)) throw Error(kModule, ErrorCode::InvalidSpec, "noise_std must be >= 0");
  const double nyquist = spec.sample_rate / 2.0;
  for (const auto& [label, comps] : spec.components) {
    if (!electrode_index(label)) throw Error(kModule, ErrorCode::InvalidSpec, "unknown channel " + label);
    for (const auto& c : comps) {
      if (!(c.frequency > 0.0 && c.frequency < nyquist))
        throw Error(kModule, ErrorCode::InvalidSpec,
                    "component " + io::format_double(c.frequency) + " Hz on " + label +
                        " violates Nyquist: must lie in (0, " + io::format_double(nyquist) + ") Hz");
      if (!std::isfinite(c.amplitude)) throw Error(kModule, ErrorCode::InvalidSpec, "non-finite amplitude");
    }
  }
}

/// Sum of sines plus Gaussian noise per channel. Each channel draws its noise
/// from its own counter stream keyed by (seed, channel index).
inline RawRecording synth_recording(const SynthSpec& spec) {
  validate(spec);
  RawRecording rec;
  rec.subject_id = spec.subject_id;
  rec.video_id = spec.video_id;
  rec.sample_rate = spec.sample_rate;
  rec.channels.assign(kElectrodes.begin(), kElectrodes.end());
  const auto n = static_cast<Eigen::Index>(std::llround(spec.duration * spec.sample_rate));
  rec.samples = Matrix::Zero(static_cast<Eigen::Index>(kNumElectrodes), n);
  for (std::size_t c = 0; c < kNumElectrodes; ++c) {
    auto row = rec.samples.row(static_cast<Eigen::Index>(c));
    if (auto it = spec.components.find(std::string(kElectrodes[c])); it != spec.components.end()) {
      for (const auto& comp : it->second) {
        const double w = 2.0 * std::numbers::pi * comp.frequency / spec.sample_rate;
        for (Eigen::Index i = 0; i < n; ++i) row(i) += comp.amplitude * std::sin(w * static_cast<double>(i));
      }
    }
    if (spec.noise_std > 0.0) {
      CounterRng rng(derive_seed(spec.seed, "synth-channel", c));
      for (Eigen::Index i = 0; i < n; ++i) row(i) += spec.noise_std * rng.normal();
    }
  }
  return rec;
}

}  // namespace qoe::ingest
