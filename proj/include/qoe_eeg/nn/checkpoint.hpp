#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <optional>
#include <string>

#include "qoe_eeg/dataset.hpp"
#include "qoe_eeg/io.hpp"
#include "qoe_eeg/nn/model.hpp"

namespace qoe::nn {

struct TrainedModel {
  ModelConfig config;
  Params params;
  std::optional<data::Normalizer> normalizer;
  std::uint64_t seed = 0;
};

// File layout:
//   8 bytes   magic "QOECKPT1"
//   8 bytes   header length N, little-endian u64
//   N bytes   JSON header {architecture, config, seed, parameters:[{name, shape, offset, trainable, regularized}],
//                          payload_len, normalization?}
//   8*M bytes parameter values, little-endian f64, concatenated in manifest order (offsets count values)
inline constexpr char kCheckpointMagic[8] = {'Q', 'O', 'E', 'C', 'K', 'P', 'T', '1'};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_u64(const std::string& in, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

}  // namespace detail

inline std::string serialize(const TrainedModel& m) {
  io::json manifest = io::json::array();
  std::uint64_t offset = 0;
  for (const auto& p : m.params.items) {
    manifest.push_back({{"name", p.name},
                        {"shape", {p.value.rows(), p.value.cols()}},
                        {"offset", offset},
                        {"trainable", p.trainable},
                        {"regularized", p.regularized}});
    offset += static_cast<std::uint64_t>(p.value.size());
  }
  io::json header = {{"architecture", to_string(m.config.architecture)},
                     {"config", m.config.to_json()},
                     {"seed", m.seed},
                     {"parameters", manifest},
                     {"payload_len", offset}};
  if (m.normalizer) header["normalization"] = m.normalizer->to_json();
  const std::string text = header.dump();

  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put_u64(out, text.size());
  out += text;
  out.reserve(out.size() + offset * 8);
  for (const auto& p : m.params.items)
    for (Eigen::Index i = 0; i < p.value.size(); ++i) detail::put_u64(out, std::bit_cast<std::uint64_t>(p.value.data()[i]));
  return out;
}

inline TrainedModel deserialize(const std::string& bytes) {
  auto fail = [](const std::string& m) { throw Error(kModule, ErrorCode::BadCheckpoint, m); };
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) fail("bad magic");
  const std::uint64_t header_len = detail::get_u64(bytes, 8);
  if (header_len > bytes.size() - 16) fail("header length exceeds file");
  io::json header;
  try {
    header = io::json::parse(bytes.substr(16, header_len));
  } catch (const io::json::exception& e) {
    fail(std::string("header: ") + e.what());
  }
  TrainedModel m;
  std::size_t payload_at = 16 + header_len;
  try {
    m.config = ModelConfig::from_json(header.at("config"));
    m.seed = header.at("seed").get<std::uint64_t>();
    const auto payload_len = header.at("payload_len").get<std::uint64_t>();
    if (bytes.size() - payload_at != payload_len * 8)
      fail("payload holds " + std::to_string((bytes.size() - payload_at) / 8) + " values, header declares " +
           std::to_string(payload_len));
    for (const auto& e : header.at("parameters")) {
      Param p;
      p.name = e.at("name").get<std::string>();
      const auto rows = e.at("shape").at(0).get<Eigen::Index>();
      const auto cols = e.at("shape").at(1).get<Eigen::Index>();
      const auto offset = e.at("offset").get<std::uint64_t>();
      p.trainable = e.at("trainable").get<bool>();
      p.regularized = e.at("regularized").get<bool>();
      if (offset + static_cast<std::uint64_t>(rows * cols) > payload_len) fail("parameter " + p.name + " overruns payload");
      p.value.resize(rows, cols);
      for (Eigen::Index i = 0; i < rows * cols; ++i)
        p.value.data()[i] = std::bit_cast<double>(detail::get_u64(bytes, payload_at + 8 * (offset + static_cast<std::uint64_t>(i))));
      m.params.items.push_back(std::move(p));
    }
    if (header.contains("normalization")) m.normalizer = data::Normalizer::from_json(header["normalization"]);
  } catch (const io::json::exception& e) {
    fail(e.what());
  }
  // Shapes must agree with a fresh build of the same config.
  const Params reference = build_model(m.config, 0);
  if (reference.items.size() != m.params.items.size()) fail("parameter count does not match config");
  for (std::size_t i = 0; i < reference.items.size(); ++i) {
    const auto& a = reference.items[i].value;
    const auto& b = m.params.items[i].value;
    if (reference.items[i].name != m.params.items[i].name || a.rows() != b.rows() || a.cols() != b.cols())
      fail("parameter " + m.params.items[i].name + " does not match config");
  }
  return m;
}

inline void save_checkpoint(const std::filesystem::path& path, const TrainedModel& m) {
  io::write_atomic(path, serialize(m));
}

inline TrainedModel load_checkpoint(const std::filesystem::path& path) {
  return deserialize(io::read_text(path, kModule));
}

}  // namespace qoe::nn
