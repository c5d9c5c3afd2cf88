#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include <Eigen/Core>

namespace qoe {

// Row-major so that one row (a channel, or a time step) is contiguous.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline constexpr std::size_t kNumElectrodes = 8;
inline constexpr std::size_t kNumBands = 5;
inline constexpr std::size_t kNumKinds = 2;
inline constexpr std::size_t kFeatureWidth = kNumElectrodes * kNumBands * kNumKinds;
inline constexpr std::size_t kNumClasses = 3;

// Canonical electrode order; ingestion reorders every recording to it.
inline constexpr std::array<std::string_view, kNumElectrodes> kElectrodes = {
    "Fp1", "Fp2", "T3", "T4", "P3", "P4", "O1", "O2"};

inline std::optional<std::size_t> electrode_index(std::string_view label) {
  for (std::size_t i = 0; i < kElectrodes.size(); ++i)
    if (kElectrodes[i] == label) return i;
  return std::nullopt;
}

enum class QoEFactor { VC = 0, VQ = 1, AC = 2, IL = 3, SA = 4 };

inline constexpr std::size_t kNumFactors = 5;
inline constexpr std::array<QoEFactor, kNumFactors> kFactors = {
    QoEFactor::VC, QoEFactor::VQ, QoEFactor::AC, QoEFactor::IL, QoEFactor::SA};

constexpr std::string_view to_string(QoEFactor f) {
  constexpr std::array<std::string_view, kNumFactors> names = {"VC", "VQ", "AC", "IL", "SA"};
  return names[static_cast<std::size_t>(f)];
}

inline std::optional<QoEFactor> parse_factor(std::string_view s) {
  for (QoEFactor f : kFactors)
    if (to_string(f) == s) return f;
  return std::nullopt;
}

}  // namespace qoe
