#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mlnmt/checkpoint.hpp"
#include "mlnmt/corpus.hpp"
#include "mlnmt/decoder.hpp"

namespace mlnmt {

struct BleuReport {
  double bleu = 0.0;  // percentage
  std::array<double, 4> precisions{};
  std::array<std::size_t, 4> matches{};
  std::array<std::size_t, 4> totals{};
  double brevity_penalty = 1.0;
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;

  double ratio() const;
  // BLEU = 77.88, 100.0/100.0/100.0/100.0 (BP=0.779, ratio=0.800, hyp_len=4, ref_len=5)
  std::string summary() const;
};

// Corpus BLEU over whitespace-tokenized lines, no smoothing.
BleuReport bleu(std::span<const textpipe::Tokens> candidates,
                std::span<const textpipe::Tokens> references, bool lowercase = false);
BleuReport bleu_lines(std::span<const std::string> candidates,
                      std::span<const std::string> references, bool lowercase = false);

enum class Protocol { average_scores, average_weights };

std::string to_string(Protocol p);
Protocol parse_protocol(const std::string& name);

// Turns decoded ids into the text that is scored (BPE removed).
struct TestSet {
  std::vector<std::vector<int>> sources;
  std::vector<textpipe::Tokens> references;  // BPE-undone
  const Vocab* target_vocab = nullptr;
};

std::vector<textpipe::Tokens> decode_to_tokens(const ModelParams& params, const TestSet& test,
                                               const DecodeConfig& config);

struct ProtocolResult {
  double bleu = 0.0;
  std::vector<double> per_checkpoint;  // filled for average_scores
};

ProtocolResult score_protocol(std::span<const Checkpoint> checkpoints, const TestSet& test,
                              Protocol protocol, const DecodeConfig& config);

}  // namespace mlnmt
