#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mlnmt/checkpoint.hpp"
#include "mlnmt/corpus.hpp"
#include "mlnmt/model.hpp"
#include "mlnmt/raretoken.hpp"

namespace mlnmt {

enum class TrainMode {
  baseline,
  multilingual,
  finetune_plain,
  finetune_similarity,
  finetune_shift,
  pseudo_mix,
};

std::string to_string(TrainMode mode);
TrainMode parse_train_mode(const std::string& name);
bool is_finetune(TrainMode mode);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
};

struct TrainConfig {
  std::size_t epochs = 70;
  double lr = 1.0;           // schedule multiplier for training from scratch
  double finetune_lr = 0.5;  // multiplier used by the finetune_* modes
  std::size_t batch_size = 128;
  std::uint64_t seed = 1;
  TrainMode mode = TrainMode::multilingual;
  std::size_t max_len = 256;
  AdamConfig adam;
  std::size_t warmup_steps = 4000;
  std::size_t keep_best = 5;
  double label_smoothing = 0.1;
  std::string checkpoint_dir;  // empty: keep checkpoints in memory only

  void validate() const;
  double base_lr() const { return is_finetune(mode) ? finetune_lr : lr; }
};

// lr * min(step^-0.5, step * warmup^-1.5) * d_model^-0.5, step counted from 1.
// warmup == 0 drops the warmup branch.
double scheduled_lr(double lr, std::uint64_t step, std::size_t warmup, std::size_t d_model);

// One bias-corrected Adam update. Increments state.step first.
void adam_step(std::span<Tensor<float>* const> params, std::span<const Tensor<float>> grads,
               AdamState& state, double lr_t, const AdamConfig& config);

// Mean over sentences of the summed sentence NLL, dropout off.
template <typename T>
double corpus_loss(const ModelParamsT<T>& params, const MultilingualCorpus& corpus,
                   std::size_t batch_size = 32);

struct RareTokenSetup {
  std::vector<int> anchors;  // A u B, ascending
  std::vector<int> rare;     // ascending
  raretoken::ScoreBand band;
  std::string dump_path;  // optional per-epoch similarity table dump (suffix .<epoch>)
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // token-mean NLL, unsmoothed
  double dev_loss = 0.0;
  double elapsed_s = 0.0;
  std::size_t replaced = 0;  // source positions rewritten by similarity replacement
};

struct TrainResult {
  std::vector<Checkpoint> best;  // up to keep_best, ascending dev loss (ties: earlier epoch)
  Checkpoint last;
  std::vector<EpochRecord> history;
  std::size_t skipped = 0;  // training pairs over max_len
};

// Trains from `start` (required for the finetune_* modes) or from a fresh
// initialisation seeded by config.seed. `log` receives one line per epoch:
// "epoch<TAB>train_loss<TAB>dev_loss<TAB>elapsed_s".
TrainResult train(const MultilingualCorpus& train_corpus, const MultilingualCorpus& dev_corpus,
                  const ModelConfig& model_config, const TrainConfig& config,
                  const Checkpoint* start = nullptr, const RareTokenSetup* rare = nullptr,
                  std::ostream* log = nullptr);

std::vector<Checkpoint> select_best(std::span<const Checkpoint> checkpoints, std::size_t k);

ModelParams average_checkpoints(std::span<const Checkpoint> checkpoints);

}  // namespace mlnmt
