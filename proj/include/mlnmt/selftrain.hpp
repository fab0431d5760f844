#pragma once

// Self-learning: forward-translate source-side monolingual text with a
// trained model, mix the synthetic pairs with real bitext, train on the mix,
// then fine-tune on real data only.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mlnmt/corpus.hpp"
#include "mlnmt/decoder.hpp"
#include "mlnmt/trainer.hpp"

namespace mlnmt {

struct PseudoResult {
  ParallelCorpus corpus;  // origin = pseudo
  std::size_t dropped = 0;
  std::size_t outliers = 0;  // kept pairs with an extreme length ratio
};

// `mono` holds encoded source sentences. Empty outputs are dropped.
PseudoResult generate_pseudo(std::span<const std::vector<int>> mono, const ModelParams& params,
                             const DecodeConfig& config, const std::string& name,
                             const std::string& source_lang, const std::string& target_lang);

// Real pairs first, then for every pseudo language pair the first `cap`
// pairs in file order. Pseudo pairs inherit the tag of the real pair with the
// same name; unknown names become new pairs.
MultilingualCorpus mix_corpora(const MultilingualCorpus& real, const MultilingualCorpus& pseudo,
                               std::size_t cap);

struct ProvenanceCounts {
  std::size_t real = 0;
  std::size_t pseudo = 0;
};

ProvenanceCounts count_provenance(const MultilingualCorpus& corpus);
// "real" / "pseudo" per pair, line-aligned with the corpus.
std::vector<std::string> provenance_lines(const MultilingualCorpus& corpus);

struct StagedCheckpoint {
  int stage = 1;
  Checkpoint checkpoint;
};

struct TwoStageResult {
  TrainResult stage1;
  TrainResult stage2;
  std::vector<StagedCheckpoint> history;  // best of each stage, tagged
  double stage1_dev_loss = 0.0;           // best real-dev loss per stage
  double stage2_dev_loss = 0.0;
};

// Stage 1 trains on `mixed`; stage 2 continues from the stage-1 best
// checkpoint on `real`. Both stages are evaluated on the real dev set.
TwoStageResult two_stage_schedule(const MultilingualCorpus& mixed, const MultilingualCorpus& real,
                                  const MultilingualCorpus& real_dev,
                                  const ModelConfig& model_config, const TrainConfig& stage1,
                                  const TrainConfig& stage2);

}  // namespace mlnmt
