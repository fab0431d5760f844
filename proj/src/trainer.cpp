#include "mlnmt/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include <spdlog/spdlog.h>

namespace mlnmt {

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::baseline: return "baseline";
    case TrainMode::multilingual: return "multilingual";
    case TrainMode::finetune_plain: return "finetune_plain";
    case TrainMode::finetune_similarity: return "finetune_similarity";
    case TrainMode::finetune_shift: return "finetune_shift";
    case TrainMode::pseudo_mix: return "pseudo_mix";
  }
  return "?";
}

TrainMode parse_train_mode(const std::string& name) {
  for (auto m : {TrainMode::baseline, TrainMode::multilingual, TrainMode::finetune_plain,
                 TrainMode::finetune_similarity, TrainMode::finetune_shift, TrainMode::pseudo_mix}) {
    if (to_string(m) == name) return m;
  }
  throw Error("unknown training mode '" + name + "'");
}

bool is_finetune(TrainMode mode) {
  return mode == TrainMode::finetune_plain || mode == TrainMode::finetune_similarity ||
         mode == TrainMode::finetune_shift;
}

void TrainConfig::validate() const {
  if (epochs == 0) throw Error("TrainConfig: epochs must be positive");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw Error("TrainConfig: lr must be positive");
  // Zero is allowed here so a fine-tune run can be frozen.
  if (!(finetune_lr >= 0.0) || !std::isfinite(finetune_lr)) {
    throw Error("TrainConfig: finetune_lr must be non-negative");
  }
  if (batch_size == 0) throw Error("TrainConfig: batch_size must be positive");
  if (keep_best == 0) throw Error("TrainConfig: keep_best must be at least 1");
  if (max_len == 0) throw Error("TrainConfig: max_len must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw Error("TrainConfig: Adam betas must be in [0,1)");
  }
  if (!(adam.eps > 0.0)) throw Error("TrainConfig: Adam eps must be positive");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) {
    throw Error("TrainConfig: label_smoothing must be in [0,1)");
  }
}

double scheduled_lr(double lr, std::uint64_t step, std::size_t warmup, std::size_t d_model) {
  const double s = static_cast<double>(std::max<std::uint64_t>(step, 1));
  double factor = 1.0 / std::sqrt(s);
  if (warmup > 0) factor = std::min(factor, s * std::pow(static_cast<double>(warmup), -1.5));
  return lr * factor / std::sqrt(static_cast<double>(d_model));
}

void adam_step(std::span<Tensor<float>* const> params, std::span<const Tensor<float>> grads,
               AdamState& state, double lr_t, const AdamConfig& config) {
  if (params.size() != grads.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw Error("adam_step: parameter, gradient and moment counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(grads[i]) || !params[i]->same_shape(state.m[i]) ||
        !params[i]->same_shape(state.v[i])) {
      throw Error("adam_step: shape mismatch at tensor " + std::to_string(i) + ": " +
                  params[i]->shape_string() + " vs " + grads[i].shape_string());
    }
    if (!grads[i].all_finite()) {
      throw Error("adam_step: non-finite gradient in tensor " + std::to_string(i));
    }
  }
  ++state.step;
  const double b1 = config.beta1, b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    float* p = params[i]->data();
    float* m = state.m[i].data();
    float* v = state.v[i].data();
    const float* g = grads[i].data();
    for (std::size_t j = 0, n = grads[i].size(); j < n; ++j) {
      const double gj = g[j];
      const double mj = b1 * m[j] + (1.0 - b1) * gj;
      const double vj = b2 * v[j] + (1.0 - b2) * gj * gj;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      p[j] = static_cast<float>(p[j] - lr_t * (mj / c1) / (std::sqrt(vj / c2) + config.eps));
    }
  }
}

template <typename T>
double corpus_loss(const ModelParamsT<T>& params, const MultilingualCorpus& corpus,
                   std::size_t batch_size) {
  if (corpus.size() == 0) throw Error("corpus_loss: empty corpus");
  double total = 0.0;
  for (const auto& batch : make_ordered_batches(corpus, batch_size)) {
    for (double nll : sentence_nll(params, batch)) total += nll;
  }
  return total / static_cast<double>(corpus.size());
}

template double corpus_loss(const ModelParamsT<float>&, const MultilingualCorpus&, std::size_t);
template double corpus_loss(const ModelParamsT<double>&, const MultilingualCorpus&, std::size_t);

namespace {

MultilingualCorpus length_filtered(const MultilingualCorpus& corpus, std::size_t limit,
                                   std::size_t& skipped) {
  MultilingualCorpus out;
  out.pair_names = corpus.pair_names;
  out.pair_sizes.assign(corpus.pair_sizes.size(), 0);
  out.target_lang = corpus.target_lang;
  for (const auto& p : corpus.pairs) {
    if (p.source.size() > limit || p.target.size() + 1 > limit) {
      ++skipped;
      continue;
    }
    out.pairs.push_back(p);
    if (static_cast<std::size_t>(p.tag) < out.pair_sizes.size()) ++out.pair_sizes[p.tag];
  }
  return out;
}

bool checkpoint_before(const Checkpoint& a, const Checkpoint& b) {
  if (a.dev_loss != b.dev_loss) return a.dev_loss < b.dev_loss;
  return a.epoch < b.epoch;
}

std::string checkpoint_file(const std::string& dir, std::size_t epoch) {
  char name[32];
  std::snprintf(name, sizeof(name), "epoch_%03zu.ckpt", epoch);
  return (std::filesystem::path(dir) / name).string();
}

}  // namespace

TrainResult train(const MultilingualCorpus& train_corpus, const MultilingualCorpus& dev_corpus,
                  const ModelConfig& model_config, const TrainConfig& config,
                  const Checkpoint* start, const RareTokenSetup* rare, std::ostream* log) {
  config.validate();
  model_config.validate();
  const bool similarity = config.mode == TrainMode::finetune_similarity;
  const bool shift = config.mode == TrainMode::finetune_shift;
  if (is_finetune(config.mode) && !start) {
    throw Error("train: mode " + to_string(config.mode) + " needs a starting checkpoint");
  }
  if ((similarity || shift) && (!rare || rare->anchors.empty())) {
    throw Error("train: mode " + to_string(config.mode) + " needs anchor and rare-token sets");
  }

  TrainResult result;
  const std::size_t limit = std::min(config.max_len, model_config.max_len);
  const MultilingualCorpus corpus = length_filtered(train_corpus, limit, result.skipped);
  std::size_t dev_skipped = 0;
  const MultilingualCorpus dev = length_filtered(dev_corpus, limit, dev_skipped);
  if (corpus.size() == 0) throw Error("train: no training pairs within max_len " + std::to_string(limit));
  if (dev.size() == 0) throw Error("train: no dev pairs within max_len " + std::to_string(limit));
  if (result.skipped > 0) {
    spdlog::warn("skipped {} training pairs longer than {} tokens", result.skipped, limit);
  }
  if (dev_skipped > 0) spdlog::warn("skipped {} dev pairs longer than {} tokens", dev_skipped, limit);

  ModelParams params;
  AdamState adam;
  std::size_t epoch0 = 0;
  if (start) {
    if (start->params.config.canonical() != model_config.canonical()) {
      throw Error("train: starting checkpoint has configuration " +
                  start->params.config.canonical() + ", expected " + model_config.canonical());
    }
    params = start->params;
    adam = start->adam.empty() ? AdamState::zeros_like(params) : start->adam;
    epoch0 = start->epoch;
  } else {
    params = ModelParams::init(model_config, config.seed);
    adam = AdamState::zeros_like(params);
  }
  params.config = model_config;

  if (!config.checkpoint_dir.empty()) std::filesystem::create_directories(config.checkpoint_dir);

  Rng dropout_rng(config.seed, 0x64726f70);
  Rng replace_rng(config.seed, 0x7265706c);
  std::vector<bool> rare_flags;
  if (shift) rare_flags = raretoken::rare_mask(rare->rare, model_config.source_vocab_size);

  const auto t0 = std::chrono::steady_clock::now();
  std::deque<double> recent;
  for (std::size_t e = 1; e <= config.epochs; ++e) {
    const std::size_t epoch = epoch0 + e;
    EpochRecord rec;
    rec.epoch = epoch;

    raretoken::SimilarityTable table;
    std::vector<float> mean;
    EmbeddingShift<float> shift_hook;
    if (similarity || shift) {
      auto refreshed = raretoken::refresh(epoch, params.weights.source_embedding, rare->anchors,
                                          rare->rare, shift ? raretoken::Mode::shift
                                                            : raretoken::Mode::similarity,
                                          rare->band);
      if (similarity) {
        table = std::get<raretoken::SimilarityTable>(std::move(refreshed));
        spdlog::info("epoch {}: {} of {} rare tokens have replacement candidates", epoch,
                     table.replaceable_count(), rare->rare.size());
        if (table.zero_norm_count > 0) {
          spdlog::warn("epoch {}: {} zero-norm embedding pairs scored with cosine 0", epoch,
                       table.zero_norm_count);
        }
        if (!rare->dump_path.empty()) {
          std::ofstream dump(rare->dump_path + "." + std::to_string(epoch));
          raretoken::dump_table(table, dump);
        }
      } else {
        const auto& m = std::get<raretoken::AnchorMean>(refreshed).mean;
        mean.assign(m.begin(), m.end());
        shift_hook.is_rare = &rare_flags;
        shift_hook.mean = mean;
      }
    }

    double nll_sum = 0.0;
    std::size_t tokens = 0;
    const auto batches = make_batches(corpus, config.batch_size, config.seed, epoch);
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const Batch* batch = &batches[bi];
      Batch replaced;
      if (similarity) {
        replaced = raretoken::replace_rare_in_batch(*batch, table, replace_rng);
        for (std::size_t i = 0; i < replaced.source.size(); ++i) {
          rec.replaced += replaced.source[i] != batch->source[i];
        }
        batch = &replaced;
      }
      Tape<float> tape(true);
      auto w = bind(tape, params, true);
      ForwardContext<float> ctx{model_config.dropout, &dropout_rng, shift ? &shift_hook : nullptr};
      LossStats stats;
      Var<float> loss = batch_loss(w, model_config, *batch, config.label_smoothing, ctx, &stats);
      const double lv = loss.value()[0];
      recent.push_back(lv);
      if (recent.size() > 10) recent.pop_front();
      if (!std::isfinite(lv)) {
        std::ostringstream msg;
        msg << "non-finite training loss at epoch " << epoch << ", batch " << bi << " (sentences";
        for (auto idx : batch->indices) msg << ' ' << idx;
        msg << "); recent losses:";
        for (double r : recent) msg << ' ' << r;
        throw Error(msg.str());
      }
      nll_sum += stats.nll_sum;
      tokens += stats.count;
      tape.backward(loss);
      const auto grads = collect_grads(w);
      const double lr_t = scheduled_lr(config.base_lr(), adam.step + 1, config.warmup_steps,
                                       model_config.d_model);
      adam_step(params.tensors(), grads, adam, lr_t, config.adam);
    }

    rec.train_loss = nll_sum / static_cast<double>(std::max<std::size_t>(tokens, 1));
    rec.dev_loss = corpus_loss(params, dev);
    rec.elapsed_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(rec);
    if (log) {
      *log << rec.epoch << '\t' << rec.train_loss << '\t' << rec.dev_loss << '\t' << rec.elapsed_s
           << '\n';
      log->flush();
    }
    spdlog::info("epoch {} train {:.4f} dev {:.4f}", rec.epoch, rec.train_loss, rec.dev_loss);

    Checkpoint ckpt{params, adam, epoch, rec.dev_loss, std::nullopt};
    if (!config.checkpoint_dir.empty()) save_checkpoint(ckpt, checkpoint_file(config.checkpoint_dir, epoch));
    auto pos = std::upper_bound(result.best.begin(), result.best.end(), ckpt, checkpoint_before);
    if (static_cast<std::size_t>(pos - result.best.begin()) < config.keep_best) {
      result.best.insert(pos, ckpt);
      if (result.best.size() > config.keep_best) result.best.pop_back();
    }
    result.last = std::move(ckpt);
  }
  return result;
}

std::vector<Checkpoint> select_best(std::span<const Checkpoint> checkpoints, std::size_t k) {
  if (checkpoints.empty()) throw Error("select_best: no checkpoints");
  if (k == 0) throw Error("select_best: k must be at least 1");
  if (k > checkpoints.size()) {
    spdlog::warn("select_best: asked for {} checkpoints but only {} exist", k, checkpoints.size());
  }
  std::vector<Checkpoint> sorted(checkpoints.begin(), checkpoints.end());
  std::stable_sort(sorted.begin(), sorted.end(), checkpoint_before);
  if (sorted.size() > k) sorted.resize(k);
  return sorted;
}

ModelParams average_checkpoints(std::span<const Checkpoint> checkpoints) {
  if (checkpoints.empty()) throw Error("average_checkpoints: no checkpoints");
  const ModelConfig& config = checkpoints.front().params.config;
  std::vector<std::vector<double>> acc;
  for (const auto* t : checkpoints.front().params.tensors()) acc.emplace_back(t->size(), 0.0);
  for (std::size_t c = 0; c < checkpoints.size(); ++c) {
    const auto& p = checkpoints[c].params;
    if (p.config.canonical() != config.canonical()) {
      throw Error("average_checkpoints: checkpoint " + std::to_string(c) +
                  " has a different configuration");
    }
    const auto tensors = p.tensors();
    const auto ref = checkpoints.front().params.tensors();
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      if (!tensors[i]->same_shape(*ref[i])) {
        throw Error("average_checkpoints: shape mismatch in tensor " + std::to_string(i));
      }
      const float* d = tensors[i]->data();
      for (std::size_t j = 0; j < acc[i].size(); ++j) acc[i][j] += d[j];
    }
  }
  ModelParams out = ModelParams::zeros(config);
  out.config = config;
  const auto dst = out.tensors();
  const double n = static_cast<double>(checkpoints.size());
  for (std::size_t i = 0; i < dst.size(); ++i) {
    float* d = dst[i]->data();
    for (std::size_t j = 0; j < acc[i].size(); ++j) d[j] = static_cast<float>(acc[i][j] / n);
  }
  return out;
}

}  // namespace mlnmt
