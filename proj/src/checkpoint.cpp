#include "mlnmt/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#include <openssl/evp.h>

#include "mlnmt/util.hpp"

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace mlnmt {

namespace {

constexpr char kMagic[8] = {'N', 'M', 'T', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint64_t kMaxDim = std::uint64_t(1) << 40;

template <typename U>
void put(std::ostream& out, U v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U get(std::istream& in, const char* what) {
  U v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(U))) {
    throw Error(std::string("checkpoint truncated while reading ") + what);
  }
  return v;
}

// Counters are split into 24-bit halves so each is exact as float32.
Tensor<float> pack_u64(std::uint64_t v) {
  return Tensor<float>::from_values({2}, {static_cast<float>(v & 0xFFFFFF),
                                          static_cast<float>(v >> 24)});
}

std::uint64_t unpack_u64(const Tensor<float>& t) {
  if (t.size() != 2) throw Error("checkpoint: malformed counter tensor");
  return static_cast<std::uint64_t>(t[0]) | (static_cast<std::uint64_t>(t[1]) << 24);
}

Tensor<float> pack_config(const ModelConfig& c) {
  return Tensor<float>::from_values(
      {9}, {static_cast<float>(c.num_layers), static_cast<float>(c.d_model),
            static_cast<float>(c.num_heads), static_cast<float>(c.d_ff),
            static_cast<float>(c.source_vocab_size), static_cast<float>(c.target_vocab_size),
            c.attn_scale == AttentionScale::inv_sqrt_d ? 0.0f : 1.0f,
            static_cast<float>(c.max_len), static_cast<float>(c.dropout)});
}

ModelConfig unpack_config(const Tensor<float>& t) {
  if (t.size() != 9) throw Error("checkpoint: malformed meta/config");
  ModelConfig c;
  c.num_layers = static_cast<std::size_t>(t[0]);
  c.d_model = static_cast<std::size_t>(t[1]);
  c.num_heads = static_cast<std::size_t>(t[2]);
  c.d_ff = static_cast<std::size_t>(t[3]);
  c.source_vocab_size = static_cast<std::size_t>(t[4]);
  c.target_vocab_size = static_cast<std::size_t>(t[5]);
  c.attn_scale = t[6] == 0.0f ? AttentionScale::inv_sqrt_d : AttentionScale::inv_d;
  c.max_len = static_cast<std::size_t>(t[7]);
  c.dropout = static_cast<double>(t[8]);
  return c;
}

std::string config_diff(const ModelConfig& file, const ModelConfig& want) {
  std::ostringstream out;
  auto field = [&](const char* name, auto a, auto b) {
    if (a != b) out << ' ' << name << " (file " << a << ", expected " << b << ')';
  };
  field("layers", file.num_layers, want.num_layers);
  field("d_model", file.d_model, want.d_model);
  field("heads", file.num_heads, want.num_heads);
  field("d_ff", file.d_ff, want.d_ff);
  field("src_vocab", file.source_vocab_size, want.source_vocab_size);
  field("tgt_vocab", file.target_vocab_size, want.target_vocab_size);
  field("attn_scale", to_string(file.attn_scale), to_string(want.attn_scale));
  field("max_len", file.max_len, want.max_len);
  return out.str();
}

void write_tensor(std::ostream& out, const std::string& name, const Tensor<float>& t) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.dims()) put<std::uint64_t>(out, d);
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(float)));
}

}  // namespace

ConfigHash config_hash(const ModelConfig& config) {
  const std::string text = config.canonical();
  ConfigHash hash{};
  unsigned int len = 0;
  if (EVP_Digest(text.data(), text.size(), hash.data(), &len, EVP_sha256(), nullptr) != 1 ||
      len != hash.size()) {
    throw Error("config_hash: SHA-256 failed");
  }
  return hash;
}

AdamState AdamState::zeros_like(const ModelParams& params) {
  AdamState s;
  for (const auto* t : params.tensors()) {
    s.m.emplace_back(t->dims());
    s.v.emplace_back(t->dims());
  }
  return s;
}

void write_checkpoint(const Checkpoint& ckpt, std::ostream& out) {
  const auto names = ckpt.params.names();
  const auto tensors = ckpt.params.tensors();
  const bool with_adam = !ckpt.adam.empty();
  if (with_adam && (ckpt.adam.m.size() != tensors.size() || ckpt.adam.v.size() != tensors.size())) {
    throw Error("write_checkpoint: optimizer state does not match parameters");
  }
  std::vector<std::pair<std::string, Tensor<float>>> meta;
  meta.emplace_back("meta/config", pack_config(ckpt.params.config));
  meta.emplace_back("meta/epoch", pack_u64(ckpt.epoch));
  meta.emplace_back("meta/step", pack_u64(ckpt.adam.step));
  meta.emplace_back("meta/dev_loss", Tensor<float>::scalar(static_cast<float>(ckpt.dev_loss)));
  meta.emplace_back("meta/dev_bleu",
                    Tensor<float>::scalar(ckpt.dev_bleu ? static_cast<float>(*ckpt.dev_bleu)
                                                        : std::numeric_limits<float>::quiet_NaN()));

  const std::size_t count = meta.size() + tensors.size() * (with_adam ? 3 : 1);
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(count));
  const auto hash = ckpt.hash();
  out.write(reinterpret_cast<const char*>(hash.data()), hash.size());
  for (const auto& [name, t] : meta) write_tensor(out, name, t);
  for (std::size_t i = 0; i < tensors.size(); ++i) write_tensor(out, "param/" + names[i], *tensors[i]);
  if (with_adam) {
    for (std::size_t i = 0; i < tensors.size(); ++i) write_tensor(out, "adam_m/" + names[i], ckpt.adam.m[i]);
    for (std::size_t i = 0; i < tensors.size(); ++i) write_tensor(out, "adam_v/" + names[i], ckpt.adam.v[i]);
  }
  if (!out) throw Error("write_checkpoint: stream error");
}

Checkpoint read_checkpoint(std::istream& in, const ModelConfig* expected) {
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic))) throw Error("checkpoint truncated: missing magic");
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw Error("not a checkpoint: bad magic");
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw Error("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                std::to_string(kCheckpointVersion) + ")");
  }
  const auto count = get<std::uint32_t>(in, "tensor count");
  ConfigHash stored{};
  if (!in.read(reinterpret_cast<char*>(stored.data()), stored.size())) {
    throw Error("checkpoint truncated while reading config hash");
  }

  std::map<std::string, Tensor<float>> table;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = get<std::uint32_t>(in, "name length");
    if (name_len > 4096) throw Error("checkpoint: implausible tensor name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw Error("checkpoint truncated while reading name");
    const auto rank = get<std::uint32_t>(in, "rank");
    if (rank < 1 || rank > 2) throw Error("checkpoint: tensor '" + name + "' has unsupported rank");
    std::vector<std::size_t> dims;
    std::uint64_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      const auto d = get<std::uint64_t>(in, "dims");
      if (d > kMaxDim) throw Error("checkpoint: implausible dimension in '" + name + "'");
      dims.push_back(static_cast<std::size_t>(d));
      n *= d;
    }
    if (n > kMaxDim) throw Error("checkpoint: implausible size for '" + name + "'");
    Tensor<float> t(dims);
    if (!in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(n * sizeof(float)))) {
      throw Error("checkpoint truncated while reading data of '" + name + "'");
    }
    if (!table.emplace(name, std::move(t)).second) {
      throw Error("checkpoint: duplicate tensor '" + name + "'");
    }
  }

  auto take = [&table](const std::string& name) -> Tensor<float>& {
    auto it = table.find(name);
    if (it == table.end()) throw Error("checkpoint: missing tensor '" + name + "'");
    return it->second;
  };

  const ModelConfig config = unpack_config(take("meta/config"));
  if (config_hash(config) != stored) throw Error("checkpoint: config hash does not match header");
  if (expected && config.canonical() != expected->canonical()) {
    throw Error("checkpoint was saved for a different model configuration:" +
                config_diff(config, *expected));
  }

  Checkpoint ckpt;
  ckpt.params = ModelParams::zeros(config);
  const auto names = ckpt.params.names();
  auto tensors = ckpt.params.tensors();
  auto fill = [&](const std::string& name, Tensor<float>& dst) {
    Tensor<float>& src = take(name);
    if (!src.same_shape(dst)) {
      throw Error("checkpoint: tensor '" + name + "' has shape " + src.shape_string() +
                  ", expected " + dst.shape_string());
    }
    dst = std::move(src);
  };
  for (std::size_t i = 0; i < tensors.size(); ++i) fill("param/" + names[i], *tensors[i]);
  if (table.count("adam_m/" + names.front())) {
    ckpt.adam = AdamState::zeros_like(ckpt.params);
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      fill("adam_m/" + names[i], ckpt.adam.m[i]);
      fill("adam_v/" + names[i], ckpt.adam.v[i]);
    }
  }
  ckpt.epoch = static_cast<std::size_t>(unpack_u64(take("meta/epoch")));
  ckpt.adam.step = unpack_u64(take("meta/step"));
  ckpt.dev_loss = take("meta/dev_loss")[0];
  const float bleu = take("meta/dev_bleu")[0];
  if (!std::isnan(bleu)) ckpt.dev_bleu = bleu;
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  write_checkpoint(ckpt, out);
  out.close();
  if (!out) throw Error("write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path, const ModelConfig* expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "' for reading");
  try {
    return read_checkpoint(in, expected);
  } catch (const Error& e) {
    throw Error(path + ": " + e.what());
  }
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::ostringstream out(std::ios::binary);
  write_checkpoint(ckpt, out);
  return out.str();
}

}  // namespace mlnmt
