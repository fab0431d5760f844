#pragma once

// Checkpoint container and its binary file format:
//   "NMTCKPT1" | version u32 | tensor count u32 | sha256(config.canonical())
//   per tensor: name length u32 | name | rank u32 | dims u64... | float32 data
// All integers little-endian. Parameters are stored as "param/<name>", Adam
// moments as "adam_m/<name>" and "adam_v/<name>", scalars under "meta/".

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mlnmt/model.hpp"

namespace mlnmt {

using ConfigHash = std::array<std::uint8_t, 32>;

ConfigHash config_hash(const ModelConfig& config);

struct AdamState {
  std::vector<Tensor<float>> m;
  std::vector<Tensor<float>> v;
  std::uint64_t step = 0;

  static AdamState zeros_like(const ModelParams& params);
  bool empty() const { return m.empty(); }
};

struct Checkpoint {
  ModelParams params;
  AdamState adam;
  std::size_t epoch = 0;
  double dev_loss = 0.0;
  std::optional<double> dev_bleu;

  ConfigHash hash() const { return config_hash(params.config); }
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(const Checkpoint& ckpt, std::ostream& out);
// When `expected` is given, a file for a different architecture is rejected
// with a message naming the differing fields.
Checkpoint read_checkpoint(std::istream& in, const ModelConfig* expected = nullptr);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path, const ModelConfig* expected = nullptr);

std::string serialize_checkpoint(const Checkpoint& ckpt);

}  // namespace mlnmt
