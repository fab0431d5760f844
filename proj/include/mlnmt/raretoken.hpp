#pragma once

// Rare source-token interventions used during fine-tuning:
//   * similarity replacement: each epoch, score every rare token against every
//     anchor token (A u B) by  ||e_i - e_j|| * exp(cos(e_i, e_j))  and keep the
//     anchors whose score falls in a closed band; each batch, rare occurrences
//     on the source side are swapped for a uniformly drawn candidate.
//   * embedding shift: each epoch, average the anchor embeddings; during the
//     forward pass a rare token's embedding e is looked up as e + (e - mean).
// Neither is applied at decoding time.

#include <cstddef>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "mlnmt/corpus.hpp"
#include "mlnmt/tensor.hpp"
#include "mlnmt/util.hpp"

namespace mlnmt::raretoken {

struct ScoreBand {
  double low = 2.4;
  double high = 2.72;

  bool contains(double score) const { return score >= low && score <= high; }
};

struct SimilarityDiagnostics {
  std::size_t zero_norm = 0;  // pairs where a zero vector forced cosine to 0
};

template <typename T>
double similarity_score(std::span<const T> a, std::span<const T> b,
                        SimilarityDiagnostics* diag = nullptr);

struct Candidate {
  int id = 0;
  double score = 0.0;

  friend bool operator==(const Candidate&, const Candidate&) = default;
};

struct SimilarityTable {
  // Every rare id is a key; an empty list means the token is never replaced.
  std::map<int, std::vector<Candidate>> candidates;
  ScoreBand band;
  std::size_t epoch_built = 0;
  std::size_t zero_norm_count = 0;

  const std::vector<Candidate>* find(int id) const;
  std::size_t replaceable_count() const;
};

template <typename T>
SimilarityTable build_similarity_table(std::span<const int> rare_ids, std::span<const int> anchor_ids,
                                       const Tensor<T>& source_embedding, ScoreBand band,
                                       std::size_t epoch = 0);

// Returns a copy of `batch` where every source occurrence of a rare id with
// candidates holds a uniformly drawn candidate. Draws run in row order, then
// position order; targets are untouched.
Batch replace_rare_in_batch(const Batch& batch, const SimilarityTable& table, Rng& rng);

struct AnchorMean {
  std::vector<double> mean;
  std::size_t epoch_built = 0;
  std::size_t anchor_count = 0;
};

template <typename T>
AnchorMean compute_anchor_mean(std::span<const int> anchor_ids, const Tensor<T>& source_embedding,
                               std::size_t epoch = 0);

// e + (e - mean)
template <typename T>
std::vector<T> shifted_embedding(std::span<const T> e, std::span<const T> mean);

enum class Mode { similarity, shift };

std::string to_string(Mode mode);
Mode parse_mode(const std::string& name);

using Refreshed = std::variant<SimilarityTable, AnchorMean>;

// Rebuilds the per-epoch structure for `mode` from the current embeddings.
template <typename T>
Refreshed refresh(std::size_t epoch, const Tensor<T>& source_embedding,
                  std::span<const int> anchor_ids, std::span<const int> rare_ids, Mode mode,
                  ScoreBand band = {});

// "rare_token<TAB>candidate<TAB>score" per candidate, ascending rare id.
void dump_table(const SimilarityTable& table, std::ostream& out, const Vocab* vocab = nullptr);

// Source-vocabulary flags for the forward-pass shift.
std::vector<bool> rare_mask(std::span<const int> rare_ids, std::size_t vocab_size);

}  // namespace mlnmt::raretoken
