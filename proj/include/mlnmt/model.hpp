#pragma once

// Transformer encoder-decoder. Weights are held in structs templated on the
// payload type so the same layout serves stored tensors (Tensor<T>) and
// tape handles (Var<T>).

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mlnmt/corpus.hpp"
#include "mlnmt/tensor.hpp"

namespace mlnmt {

enum class AttentionScale { inv_sqrt_d, inv_d };

std::string to_string(AttentionScale s);
AttentionScale parse_attention_scale(const std::string& s);

struct ModelConfig {
  std::size_t num_layers = 4;
  std::size_t d_model = 512;
  std::size_t num_heads = 8;
  std::size_t d_ff = 2048;
  std::size_t source_vocab_size = 0;
  std::size_t target_vocab_size = 0;
  AttentionScale attn_scale = AttentionScale::inv_sqrt_d;
  double dropout = 0.1;
  std::size_t max_len = 256;

  void validate() const;
  std::size_t head_dim() const { return d_model / num_heads; }
  // 1/sqrt(d_head) or, in the literal mode, 1/d_head.
  double attention_scale() const;
  // Architecture fields only; dropout does not change tensor shapes.
  std::string canonical() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename P>
struct AttentionWeights {
  P wq, bq, wk, wv, bv, wo, bo;
};

template <typename P>
struct FeedForwardWeights {
  P w1, b1, w2, b2;
};

template <typename P>
struct NormWeights {
  P gain, bias;
};

template <typename P>
struct EncoderLayerWeights {
  AttentionWeights<P> self_attn;
  NormWeights<P> norm1;
  FeedForwardWeights<P> ffn;
  NormWeights<P> norm2;
};

template <typename P>
struct DecoderLayerWeights {
  AttentionWeights<P> self_attn;
  NormWeights<P> norm1;
  AttentionWeights<P> cross_attn;
  NormWeights<P> norm2;
  FeedForwardWeights<P> ffn;
  NormWeights<P> norm3;
};

template <typename P>
struct TransformerWeights {
  P source_embedding;  // [source_vocab x d_model]
  P target_embedding;  // [target_vocab x d_model]
  std::vector<EncoderLayerWeights<P>> encoder;
  std::vector<DecoderLayerWeights<P>> decoder;
  P output_w;  // [d_model x target_vocab]
  P output_b;  // [target_vocab]
};

namespace detail {

template <class A, class F>
void visit_attention(A& a, const std::string& p, F& f) {
  f(p + "wq", a.wq);
  f(p + "bq", a.bq);
  f(p + "wk", a.wk);
  f(p + "wv", a.wv);
  f(p + "bv", a.bv);
  f(p + "wo", a.wo);
  f(p + "bo", a.bo);
}

template <class N, class F>
void visit_norm(N& n, const std::string& p, F& f) {
  f(p + "gain", n.gain);
  f(p + "bias", n.bias);
}

template <class W, class F>
void visit_ffn(W& w, const std::string& p, F& f) {
  f(p + "w1", w.w1);
  f(p + "b1", w.b1);
  f(p + "w2", w.w2);
  f(p + "b2", w.b2);
}

}  // namespace detail

// Calls f(name, member) for every tensor in a fixed order. Works on const and
// non-const weights of any payload type.
template <class W, class F>
void visit_weights(W& w, F&& f) {
  f(std::string("src_embed"), w.source_embedding);
  f(std::string("tgt_embed"), w.target_embedding);
  for (std::size_t l = 0; l < w.encoder.size(); ++l) {
    const std::string p = "enc." + std::to_string(l) + ".";
    detail::visit_attention(w.encoder[l].self_attn, p + "self_attn.", f);
    detail::visit_norm(w.encoder[l].norm1, p + "norm1.", f);
    detail::visit_ffn(w.encoder[l].ffn, p + "ffn.", f);
    detail::visit_norm(w.encoder[l].norm2, p + "norm2.", f);
  }
  for (std::size_t l = 0; l < w.decoder.size(); ++l) {
    const std::string p = "dec." + std::to_string(l) + ".";
    detail::visit_attention(w.decoder[l].self_attn, p + "self_attn.", f);
    detail::visit_norm(w.decoder[l].norm1, p + "norm1.", f);
    detail::visit_attention(w.decoder[l].cross_attn, p + "cross_attn.", f);
    detail::visit_norm(w.decoder[l].norm2, p + "norm2.", f);
    detail::visit_ffn(w.decoder[l].ffn, p + "ffn.", f);
    detail::visit_norm(w.decoder[l].norm3, p + "norm3.", f);
  }
  f(std::string("out.w"), w.output_w);
  f(std::string("out.b"), w.output_b);
}

template <typename T>
struct ModelParamsT {
  ModelConfig config;
  TransformerWeights<Tensor<T>> weights;

  // Shapes for `config` with every tensor zero-filled and layer-norm gains 1.
  static ModelParamsT zeros(const ModelConfig& config);
  // Weight matrices uniform in [-1/sqrt(d_model), 1/sqrt(d_model)]; biases 0;
  // norm gains 1.
  static ModelParamsT init(const ModelConfig& config, std::uint64_t seed);

  std::vector<Tensor<T>*> tensors();
  std::vector<const Tensor<T>*> tensors() const;
  std::vector<std::string> names() const;
  std::size_t parameter_count() const;
  bool all_finite() const;

  template <typename U>
  ModelParamsT<U> cast() const {
    ModelParamsT<U> out = ModelParamsT<U>::zeros(config);
    auto dst = out.tensors();
    auto src = tensors();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = src[i]->template cast<U>();
    return out;
  }
};

using ModelParams = ModelParamsT<float>;

// Rare-token embedding transform applied at source lookup.
template <typename T>
struct EmbeddingShift {
  const std::vector<bool>* is_rare = nullptr;  // indexed by source id
  std::span<const T> mean;
};

template <typename T>
struct ForwardContext {
  double dropout = 0.0;
  Rng* rng = nullptr;
  const EmbeddingShift<T>* shift = nullptr;
};

template <typename T>
TransformerWeights<Var<T>> bind(Tape<T>& tape, const ModelParamsT<T>& params, bool requires_grad);

template <typename T>
std::vector<Tensor<T>> collect_grads(const TransformerWeights<Var<T>>& weights);

// Sinusoidal table, rows = positions.
template <typename T>
Tensor<T> positional_encoding(std::size_t length, std::size_t d_model);

// Encoder over `batch` row-stacked sources of padded width `len`.
template <typename T>
Var<T> encode(const TransformerWeights<Var<T>>& w, const ModelConfig& config,
              std::span<const int> source, std::size_t batch, std::size_t len,
              const std::vector<std::size_t>& lengths, const ForwardContext<T>& ctx = {});

// Decoder logits [batch * target_len x target_vocab]. `memory` holds encoder
// states for the same batch layout with padded width memory_len.
template <typename T>
Var<T> decode(const TransformerWeights<Var<T>>& w, const ModelConfig& config, Var<T> memory,
              std::size_t memory_len, const std::vector<std::size_t>& memory_lengths,
              std::span<const int> target_in, std::size_t batch, std::size_t target_len,
              const ForwardContext<T>& ctx = {});

template <typename T>
Var<T> batch_logits(const TransformerWeights<Var<T>>& w, const ModelConfig& config,
                    const Batch& batch, const ForwardContext<T>& ctx = {});

// Token-mean NLL of the batch targets (label smoothing optional).
template <typename T>
Var<T> batch_loss(const TransformerWeights<Var<T>>& w, const ModelConfig& config,
                  const Batch& batch, double smoothing, const ForwardContext<T>& ctx = {},
                  LossStats* stats = nullptr);

// Per-sentence summed NLL (unsmoothed, no dropout), in batch row order.
template <typename T>
std::vector<double> sentence_nll(const ModelParamsT<T>& params, const Batch& batch);

// Single-sentence conveniences (no dropout, no gradients).
template <typename T>
Tensor<T> encode(const std::vector<int>& source_ids, const ModelParamsT<T>& params);
// target_ids must start with BOS; returns [target_len x target_vocab].
template <typename T>
Tensor<T> forward(const std::vector<int>& source_ids, const std::vector<int>& target_ids,
                  const ModelParamsT<T>& params);

// Single-head scaled dot-product attention built from primitive ops:
// softmax(Q K^T * s + mask) V with s = 1/sqrt(d) or 1/d, d = Q's width.
// mask[i][j] true blocks query i from key j.
template <typename T>
Var<T> self_attention(Var<T> q, Var<T> k, Var<T> v, AttentionScale scale_mode,
                      const std::vector<std::vector<bool>>& mask = {});

}  // namespace mlnmt
