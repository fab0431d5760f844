#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "mlnmt/model.hpp"

namespace mlnmt {

enum class LengthPenalty {
  gnmt,    // ((5 + n) / 6)^alpha
  simple,  // n^alpha
};

double length_penalty(std::size_t n, double alpha, LengthPenalty kind = LengthPenalty::gnmt);

struct Hypothesis {
  std::vector<int> tokens;  // BOS first; EOS last when finished
  double log_prob = 0.0;
  bool finished = false;
  double score = 0.0;  // log_prob / lp(generated length)

  std::size_t generated() const { return tokens.empty() ? 0 : tokens.size() - 1; }
  // Generated tokens without BOS and EOS.
  std::vector<int> output() const;
};

struct DecodeConfig {
  std::size_t beam = 10;
  double alpha = 0.8;
  std::size_t max_len = 0;  // 0: min(2 * source length + 10, model max_len)
  LengthPenalty penalty = LengthPenalty::gnmt;
};

// Next-token log-probabilities for a set of equal-length prefixes of one
// source sentence. The encoder runs once; bound weights are reused.
class StepScorer {
 public:
  StepScorer(const ModelParams& params, std::span<const int> source_ids);
  ~StepScorer();
  StepScorer(const StepScorer&) = delete;
  StepScorer& operator=(const StepScorer&) = delete;

  // Each prefix starts with BOS; all must share one length.
  std::vector<std::vector<double>> next_log_probs(const std::vector<std::vector<int>>& prefixes);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Token ids a decoder may emit: everything except PAD and BOS.
bool emittable(int id);

std::size_t resolve_max_len(const DecodeConfig& config, std::size_t source_len,
                            const ModelConfig& model);

Hypothesis greedy_decode(std::span<const int> source_ids, const ModelParams& params,
                         std::size_t max_len);

// Finished hypotheses are set aside and compete with the surviving beams only
// at the end; candidates are ordered by (log_prob desc, token asc, parent asc),
// final ranking by (score desc, tokens asc). When max_len is reached the
// unfinished beams are ranked with n = max_len.
Hypothesis beam_search(std::span<const int> source_ids, const ModelParams& params,
                       const DecodeConfig& config);

// Greedy when beam == 1, otherwise beam search.
std::vector<Hypothesis> translate(std::span<const std::vector<int>> sources,
                                  const ModelParams& params, const DecodeConfig& config);

// Sum of per-step log-probabilities of `tokens` (BOS-prefixed) under the
// full forward pass.
double rescore(std::span<const int> source_ids, std::span<const int> tokens,
               const ModelParams& params);

}  // namespace mlnmt
