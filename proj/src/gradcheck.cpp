#include "mlnmt/gradcheck.hpp"

#include "mlnmt/corpus.hpp"
#include "mlnmt/util.hpp"

namespace mlnmt {

template <typename T>
TransformerWeights<Var<T>> unflatten(const ModelConfig& config, std::span<const Var<T>> vars) {
  TransformerWeights<Var<T>> w;
  w.encoder.resize(config.num_layers);
  w.decoder.resize(config.num_layers);
  std::size_t i = 0;
  visit_weights(w, [&](const std::string& name, Var<T>& slot) {
    if (i >= vars.size()) throw Error("unflatten: too few variables at '" + name + "'");
    slot = vars[i++];
  });
  if (i != vars.size()) throw Error("unflatten: too many variables");
  return w;
}

template TransformerWeights<Var<float>> unflatten(const ModelConfig&, std::span<const Var<float>>);
template TransformerWeights<Var<double>> unflatten(const ModelConfig&, std::span<const Var<double>>);

GradCheckResult model_grad_check(const ModelGradCheckOptions& o) {
  ModelConfig config;
  config.num_layers = o.layers;
  config.d_model = o.d_model;
  config.num_heads = o.heads;
  config.d_ff = o.d_ff;
  config.source_vocab_size = o.vocab;
  config.target_vocab_size = o.vocab;
  config.dropout = 0.0;
  config.max_len = 32;
  auto params = ModelParamsT<double>::init(config, o.seed);
  // Move gains and biases off their initial values so every term is generic.
  Rng rng(o.seed, 0x6763);
  for (auto* t : params.tensors()) {
    for (auto& v : t->values()) v += rng.uniform(-0.1, 0.1);
  }

  MultilingualCorpus corpus;
  corpus.pair_names = {"gc"};
  for (std::size_t s = 0; s < o.sentences; ++s) {
    SentencePair p;
    const std::size_t src_len = 2 + (s * 2) % 5, tgt_len = 1 + (s * 3) % 4;
    for (std::size_t k = 0; k < src_len; ++k) {
      p.source.push_back(kNumSpecials + static_cast<int>(rng.below(o.vocab - kNumSpecials)));
    }
    for (std::size_t k = 0; k < tgt_len; ++k) {
      p.target.push_back(kNumSpecials + static_cast<int>(rng.below(o.vocab - kNumSpecials)));
    }
    corpus.pairs.push_back(std::move(p));
  }
  corpus.pair_sizes = {corpus.pairs.size()};
  std::vector<std::size_t> all(corpus.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const Batch batch = make_batch(corpus, all);

  std::vector<Tensor<double>> flat;
  for (const auto* t : params.tensors()) flat.push_back(*t);
  ScalarFunction<double> f = [&](Tape<double>&, std::span<const Var<double>> vars) {
    const auto w = unflatten<double>(config, vars);
    return batch_loss(w, config, batch, 0.0);
  };
  return grad_check(f, flat, o.eps, o.coordinates, o.seed);
}

}  // namespace mlnmt
