#include "mlnmt/model.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace mlnmt {

std::string to_string(AttentionScale s) {
  return s == AttentionScale::inv_sqrt_d ? "inv_sqrt_d" : "inv_d";
}

AttentionScale parse_attention_scale(const std::string& s) {
  if (s == "inv_sqrt_d") return AttentionScale::inv_sqrt_d;
  if (s == "inv_d") return AttentionScale::inv_d;
  throw Error("unknown attention scale '" + s + "' (expected inv_sqrt_d or inv_d)");
}

void ModelConfig::validate() const {
  if (num_layers == 0 || d_model == 0 || num_heads == 0 || d_ff == 0 || max_len == 0) {
    throw Error("ModelConfig: sizes must be positive");
  }
  if (d_model % num_heads != 0) {
    throw Error("ModelConfig: d_model " + std::to_string(d_model) + " not divisible by " +
                std::to_string(num_heads) + " heads");
  }
  if (source_vocab_size <= kNumSpecials || target_vocab_size <= kNumSpecials) {
    throw Error("ModelConfig: vocabularies must contain more than the special tokens");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw Error("ModelConfig: dropout must be in [0,1)");
}

double ModelConfig::attention_scale() const {
  const double dh = static_cast<double>(head_dim());
  return attn_scale == AttentionScale::inv_sqrt_d ? 1.0 / std::sqrt(dh) : 1.0 / dh;
}

std::string ModelConfig::canonical() const {
  std::ostringstream out;
  out << "layers=" << num_layers << ";d_model=" << d_model << ";heads=" << num_heads
      << ";d_ff=" << d_ff << ";src_vocab=" << source_vocab_size
      << ";tgt_vocab=" << target_vocab_size << ";attn_scale=" << to_string(attn_scale)
      << ";max_len=" << max_len;
  return out.str();
}

// ---------------------------------------------------------------------------
// Parameters

template <typename T>
ModelParamsT<T> ModelParamsT<T>::zeros(const ModelConfig& config) {
  config.validate();
  const std::size_t d = config.d_model, f = config.d_ff;
  auto attn = [d] {
    AttentionWeights<Tensor<T>> a;
    a.wq = Tensor<T>::matrix(d, d);
    a.bq = Tensor<T>::vector(d);
    a.wk = Tensor<T>::matrix(d, d);
    a.wv = Tensor<T>::matrix(d, d);
    a.bv = Tensor<T>::vector(d);
    a.wo = Tensor<T>::matrix(d, d);
    a.bo = Tensor<T>::vector(d);
    return a;
  };
  auto norm = [d] { return NormWeights<Tensor<T>>{Tensor<T>::vector(d, T(1)), Tensor<T>::vector(d)}; };
  auto ffn = [d, f] {
    return FeedForwardWeights<Tensor<T>>{Tensor<T>::matrix(d, f), Tensor<T>::vector(f),
                                         Tensor<T>::matrix(f, d), Tensor<T>::vector(d)};
  };
  ModelParamsT p;
  p.config = config;
  p.weights.source_embedding = Tensor<T>::matrix(config.source_vocab_size, d);
  p.weights.target_embedding = Tensor<T>::matrix(config.target_vocab_size, d);
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    p.weights.encoder.push_back({attn(), norm(), ffn(), norm()});
    p.weights.decoder.push_back({attn(), norm(), attn(), norm(), ffn(), norm()});
  }
  p.weights.output_w = Tensor<T>::matrix(d, config.target_vocab_size);
  p.weights.output_b = Tensor<T>::vector(config.target_vocab_size);
  return p;
}

template <typename T>
ModelParamsT<T> ModelParamsT<T>::init(const ModelConfig& config, std::uint64_t seed) {
  ModelParamsT p = zeros(config);
  Rng rng(seed, 0x696e6974ULL);
  const double bound = 1.0 / std::sqrt(static_cast<double>(config.d_model));
  visit_weights(p.weights, [&](const std::string&, Tensor<T>& t) {
    if (t.rank() != 2) return;  // biases and norms keep their defaults
    for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  });
  return p;
}

template <typename T>
std::vector<Tensor<T>*> ModelParamsT<T>::tensors() {
  std::vector<Tensor<T>*> out;
  visit_weights(weights, [&](const std::string&, Tensor<T>& t) { out.push_back(&t); });
  return out;
}

template <typename T>
std::vector<const Tensor<T>*> ModelParamsT<T>::tensors() const {
  std::vector<const Tensor<T>*> out;
  visit_weights(weights, [&](const std::string&, const Tensor<T>& t) { out.push_back(&t); });
  return out;
}

template <typename T>
std::vector<std::string> ModelParamsT<T>::names() const {
  std::vector<std::string> out;
  visit_weights(weights, [&](const std::string& n, const Tensor<T>&) { out.push_back(n); });
  return out;
}

template <typename T>
std::size_t ModelParamsT<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto* t : tensors()) n += t->size();
  return n;
}

template <typename T>
bool ModelParamsT<T>::all_finite() const {
  for (const auto* t : tensors()) {
    if (!t->all_finite()) return false;
  }
  return true;
}

template <typename T>
TransformerWeights<Var<T>> bind(Tape<T>& tape, const ModelParamsT<T>& params, bool requires_grad) {
  TransformerWeights<Var<T>> w;
  w.encoder.resize(params.weights.encoder.size());
  w.decoder.resize(params.weights.decoder.size());
  std::vector<Var<T>*> slots;
  visit_weights(w, [&](const std::string&, Var<T>& v) { slots.push_back(&v); });
  std::size_t i = 0;
  visit_weights(params.weights, [&](const std::string&, const Tensor<T>& t) {
    *slots[i++] = tape.leaf(t, requires_grad);
  });
  return w;
}

template <typename T>
std::vector<Tensor<T>> collect_grads(const TransformerWeights<Var<T>>& weights) {
  std::vector<Tensor<T>> out;
  visit_weights(weights, [&](const std::string&, const Var<T>& v) { out.push_back(v.grad()); });
  return out;
}

// ---------------------------------------------------------------------------
// Forward pass

template <typename T>
Tensor<T> positional_encoding(std::size_t length, std::size_t d_model) {
  Tensor<T> pe = Tensor<T>::matrix(length, d_model);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < d_model; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d_model));
      pe(pos, i) = static_cast<T>(std::sin(static_cast<double>(pos) * freq));
      if (i + 1 < d_model) pe(pos, i + 1) = static_cast<T>(std::cos(static_cast<double>(pos) * freq));
    }
  }
  return pe;
}

namespace {

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  return add_row(matmul(x, w), b);
}

template <typename T>
Var<T> multi_head(Var<T> query_in, Var<T> key_in, const AttentionWeights<Var<T>>& a,
                  const AttentionLayout& layout) {
  Var<T> q = linear(query_in, a.wq, a.bq);
  Var<T> k = matmul(key_in, a.wk);
  Var<T> v = linear(key_in, a.wv, a.bv);
  return linear(attention(q, k, v, layout), a.wo, a.bo);
}

template <typename T>
Var<T> feed_forward(Var<T> x, const FeedForwardWeights<Var<T>>& f) {
  return linear(relu(linear(x, f.w1, f.b1)), f.w2, f.b2);
}

template <typename T>
Var<T> drop(Var<T> x, const ForwardContext<T>& ctx) {
  if (ctx.dropout <= 0.0) return x;
  if (!ctx.rng) throw Error("forward: dropout requested without a generator");
  return dropout(x, ctx.dropout, *ctx.rng);
}

template <typename T>
Var<T> embed(Var<T> table, std::span<const int> ids, std::size_t batch, std::size_t len,
             const ModelConfig& config, const std::vector<bool>* shift_rows_mask,
             std::span<const T> shift_mean) {
  Var<T> x = gather_rows(table, ids);
  if (shift_rows_mask) x = shift_rows(x, *shift_rows_mask, shift_mean);
  x = scale(x, std::sqrt(static_cast<double>(config.d_model)));
  const Tensor<T> pe = positional_encoding<T>(len, config.d_model);
  Tensor<T> tiled = Tensor<T>::matrix(batch * len, config.d_model);
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy(pe.data(), pe.data() + pe.size(), tiled.data() + b * pe.size());
  }
  return add(x, table.tape().constant(std::move(tiled)));
}

}  // namespace

template <typename T>
Var<T> encode(const TransformerWeights<Var<T>>& w, const ModelConfig& config,
              std::span<const int> source, std::size_t batch, std::size_t len,
              const std::vector<std::size_t>& lengths, const ForwardContext<T>& ctx) {
  if (source.size() != batch * len) throw Error("encode: source ids do not match batch layout");
  if (len > config.max_len) {
    throw Error("encode: length " + std::to_string(len) + " exceeds max_len " +
                std::to_string(config.max_len));
  }
  std::vector<bool> rows;
  if (ctx.shift && ctx.shift->is_rare) {
    rows.resize(source.size());
    for (std::size_t i = 0; i < source.size(); ++i) {
      const auto id = static_cast<std::size_t>(source[i]);
      rows[i] = id < ctx.shift->is_rare->size() && (*ctx.shift->is_rare)[id];
    }
  }
  Var<T> x = embed(w.source_embedding, source, batch, len, config,
                   rows.empty() ? nullptr : &rows,
                   ctx.shift ? ctx.shift->mean : std::span<const T>{});
  x = drop(x, ctx);
  AttentionLayout layout{batch, len, len, config.num_heads, lengths, false, config.attention_scale()};
  for (const auto& layer : w.encoder) {
    Var<T> h = layer_norm(add(x, drop(multi_head(x, x, layer.self_attn, layout), ctx)),
                          layer.norm1.gain, layer.norm1.bias);
    x = layer_norm(add(h, drop(feed_forward(h, layer.ffn), ctx)), layer.norm2.gain,
                   layer.norm2.bias);
  }
  return x;
}

template <typename T>
Var<T> decode(const TransformerWeights<Var<T>>& w, const ModelConfig& config, Var<T> memory,
              std::size_t memory_len, const std::vector<std::size_t>& memory_lengths,
              std::span<const int> target_in, std::size_t batch, std::size_t target_len,
              const ForwardContext<T>& ctx) {
  if (target_in.size() != batch * target_len) {
    throw Error("decode: target ids do not match batch layout");
  }
  if (target_len > config.max_len) {
    throw Error("decode: length " + std::to_string(target_len) + " exceeds max_len " +
                std::to_string(config.max_len));
  }
  Var<T> y = embed(w.target_embedding, target_in, batch, target_len, config, nullptr,
                   std::span<const T>{});
  y = drop(y, ctx);
  const double s = config.attention_scale();
  AttentionLayout self_layout{batch, target_len, target_len, config.num_heads, {}, true, s};
  AttentionLayout cross_layout{batch, target_len, memory_len, config.num_heads, memory_lengths,
                               false, s};
  for (const auto& layer : w.decoder) {
    Var<T> h1 = layer_norm(add(y, drop(multi_head(y, y, layer.self_attn, self_layout), ctx)),
                           layer.norm1.gain, layer.norm1.bias);
    Var<T> h2 =
        layer_norm(add(h1, drop(multi_head(h1, memory, layer.cross_attn, cross_layout), ctx)),
                   layer.norm2.gain, layer.norm2.bias);
    y = layer_norm(add(h2, drop(feed_forward(h2, layer.ffn), ctx)), layer.norm3.gain,
                   layer.norm3.bias);
  }
  return linear(y, w.output_w, w.output_b);
}

template <typename T>
Var<T> batch_logits(const TransformerWeights<Var<T>>& w, const ModelConfig& config,
                    const Batch& batch, const ForwardContext<T>& ctx) {
  Var<T> memory = encode(w, config, batch.source, batch.size, batch.source_len,
                         batch.source_lengths, ctx);
  return decode(w, config, memory, batch.source_len, batch.source_lengths, batch.target_in,
                batch.size, batch.target_len, ctx);
}

template <typename T>
Var<T> batch_loss(const TransformerWeights<Var<T>>& w, const ModelConfig& config,
                  const Batch& batch, double smoothing, const ForwardContext<T>& ctx,
                  LossStats* stats) {
  return cross_entropy(batch_logits(w, config, batch, ctx), batch.target_out, kPad, smoothing,
                       stats);
}

template <typename T>
std::vector<double> sentence_nll(const ModelParamsT<T>& params, const Batch& batch) {
  Tape<T> tape(false);
  auto w = bind(tape, params, false);
  Var<T> logits = batch_logits(w, params.config, batch);
  const auto& lv = logits.value();
  std::vector<double> out(batch.size, 0.0);
  for (std::size_t b = 0; b < batch.size; ++b) {
    for (std::size_t t = 0; t < batch.target_len; ++t) {
      const int y = batch.target_out[b * batch.target_len + t];
      if (y == kPad) continue;
      const auto lp = log_softmax_row<T>(lv.row(b * batch.target_len + t));
      out[b] -= lp[static_cast<std::size_t>(y)];
    }
  }
  return out;
}

template <typename T>
Tensor<T> encode(const std::vector<int>& source_ids, const ModelParamsT<T>& params) {
  if (source_ids.empty()) throw Error("encode: empty source");
  Tape<T> tape(false);
  auto w = bind(tape, params, false);
  return encode(w, params.config, source_ids, 1, source_ids.size(), {source_ids.size()}).value();
}

template <typename T>
Tensor<T> forward(const std::vector<int>& source_ids, const std::vector<int>& target_ids,
                  const ModelParamsT<T>& params) {
  if (source_ids.empty()) throw Error("forward: empty source");
  if (target_ids.empty() || target_ids.front() != kBos) {
    throw Error("forward: target must start with BOS");
  }
  Tape<T> tape(false);
  auto w = bind(tape, params, false);
  Var<T> memory = encode(w, params.config, source_ids, 1, source_ids.size(), {source_ids.size()});
  return decode(w, params.config, memory, source_ids.size(), {source_ids.size()}, target_ids, 1,
                target_ids.size())
      .value();
}

template <typename T>
Var<T> self_attention(Var<T> q, Var<T> k, Var<T> v, AttentionScale scale_mode,
                      const std::vector<std::vector<bool>>& mask) {
  const double d = static_cast<double>(q.value().cols());
  const double s = scale_mode == AttentionScale::inv_sqrt_d ? 1.0 / std::sqrt(d) : 1.0 / d;
  Var<T> scores = scale(matmul_nt(q, k), s);
  if (!mask.empty()) {
    const auto& sv = scores.value();
    if (mask.size() != sv.rows()) throw Error("self_attention: mask rows do not match queries");
    Tensor<T> m(sv.dims());
    for (std::size_t i = 0; i < sv.rows(); ++i) {
      if (mask[i].size() != sv.cols()) throw Error("self_attention: mask columns do not match keys");
      for (std::size_t j = 0; j < sv.cols(); ++j) {
        if (mask[i][j]) m(i, j) = -std::numeric_limits<T>::infinity();
      }
    }
    scores = add(scores, q.tape().constant(std::move(m)));
  }
  return matmul(softmax_rows(scores), v);
}

#define MLNMT_INSTANTIATE(T)                                                                     \
  template struct ModelParamsT<T>;                                                               \
  template TransformerWeights<Var<T>> bind(Tape<T>&, const ModelParamsT<T>&, bool);              \
  template std::vector<Tensor<T>> collect_grads(const TransformerWeights<Var<T>>&);              \
  template Tensor<T> positional_encoding<T>(std::size_t, std::size_t);                           \
  template Var<T> encode(const TransformerWeights<Var<T>>&, const ModelConfig&,                  \
                         std::span<const int>, std::size_t, std::size_t,                         \
                         const std::vector<std::size_t>&, const ForwardContext<T>&);            \
  template Var<T> decode(const TransformerWeights<Var<T>>&, const ModelConfig&, Var<T>,          \
                         std::size_t, const std::vector<std::size_t>&, std::span<const int>,     \
                         std::size_t, std::size_t, const ForwardContext<T>&);                    \
  template Var<T> batch_logits(const TransformerWeights<Var<T>>&, const ModelConfig&,            \
                               const Batch&, const ForwardContext<T>&);                          \
  template Var<T> batch_loss(const TransformerWeights<Var<T>>&, const ModelConfig&, const Batch&, \
                             double, const ForwardContext<T>&, LossStats*);                      \
  template std::vector<double> sentence_nll(const ModelParamsT<T>&, const Batch&);               \
  template Tensor<T> encode(const std::vector<int>&, const ModelParamsT<T>&);                    \
  template Tensor<T> forward(const std::vector<int>&, const std::vector<int>&,                   \
                             const ModelParamsT<T>&);                                            \
  template Var<T> self_attention(Var<T>, Var<T>, Var<T>, AttentionScale,                         \
                                 const std::vector<std::vector<bool>>&);

MLNMT_INSTANTIATE(float)
MLNMT_INSTANTIATE(double)

#undef MLNMT_INSTANTIATE

}  // namespace mlnmt
