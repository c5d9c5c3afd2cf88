#pragma once

#include <unistd.h>

#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "qoe_eeg/qoe_eeg.hpp"

namespace qoe::test {

namespace fs = std::filesystem;

// Fresh directory under the system temp root, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = fs::temp_directory_path() / ("qoe_eeg_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

inline std::string slurp(const fs::path& p) { return io::read_text(p); }

// Tier amplitudes (uV) of the 10 Hz component that decides the class.
inline constexpr std::array<double, 3> kAlphaTiers = {1.0, 3.0, 6.0};

/// In-memory alpha-driven dataset: example i has class i mod 3, a 10 Hz
/// component on every channel with the class's tier amplitude (jittered
/// +/-15 %), nuisance sines outside alpha with jittered amplitude, and unit
/// white noise. Features come from the full filter + Welch pipeline.
inline data::LabeledDataset alpha_dataset(std::size_t n, double seconds, std::uint64_t seed) {
  const auto filter = dsp::design_bandpass(1.0, 47.0, 4, 250.0);
  const auto plan = dsp::WindowPlan::for_rate(250.0);
  const std::array<std::pair<const char*, double>, 8> nuisance = {
      {{"Fp1", 2.0}, {"Fp2", 3.0}, {"T3", 6.0}, {"T4", 20.0}, {"P3", 5.0}, {"P4", 18.0}, {"O1", 35.0}, {"O2", 2.0}}};
  std::vector<std::pair<dsp::FeatureTensor, ingest::RatingRecord>> pairs;
  for (std::size_t i = 0; i < n; ++i) {
    const int cls = static_cast<int>(i % 3);
    CounterRng jitter(derive_seed(seed, "test-jitter", i));
    ingest::SynthSpec s;
    s.duration = seconds;
    s.noise_std = 1.0;
    s.seed = derive_seed(seed, "test-recording", i);
    s.subject_id = "s" + std::to_string(1000 + i / 3);
    s.video_id = "v" + std::to_string(cls);
    for (const auto& [ch, f] : nuisance) {
      s.components[ch].push_back({f, 3.0 * (1.0 + 0.5 * jitter.uniform(-1.0, 1.0))});
      s.components[ch].push_back({10.0, kAlphaTiers[static_cast<std::size_t>(cls)] * (1.0 + 0.15 * jitter.uniform(-1.0, 1.0))});
    }
    const auto rec = dsp::preprocess(ingest::synth_recording(s), filter);
    ingest::RatingRecord r{s.subject_id, s.video_id, {}};
    r.scores.fill(2 + 3 * cls);
    pairs.emplace_back(dsp::extract_features(rec, plan), r);
  }
  return data::assemble(pairs, QoEFactor::VC);
}

inline std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

}  // namespace qoe::test

namespace fs = std::filesystem;
