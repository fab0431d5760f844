#include "mlnmt/raretoken.hpp"

#include <cmath>
#include <ostream>

namespace mlnmt::raretoken {

template <typename T>
double similarity_score(std::span<const T> a, std::span<const T> b, SimilarityDiagnostics* diag) {
  if (a.size() != b.size()) {
    throw Error("similarity_score: dimension mismatch " + std::to_string(a.size()) + " vs " +
                std::to_string(b.size()));
  }
  double dist2 = 0, dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i], y = b[i];
    dist2 += (x - y) * (x - y);
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  double cosine = 0.0;
  if (na > 0.0 && nb > 0.0) {
    cosine = dot / (std::sqrt(na) * std::sqrt(nb));
  } else if (diag) {
    ++diag->zero_norm;
  }
  return std::sqrt(dist2) * std::exp(cosine);
}

const std::vector<Candidate>* SimilarityTable::find(int id) const {
  auto it = candidates.find(id);
  return it == candidates.end() ? nullptr : &it->second;
}

std::size_t SimilarityTable::replaceable_count() const {
  std::size_t n = 0;
  for (const auto& [id, list] : candidates) n += list.empty() ? 0 : 1;
  return n;
}

namespace {

template <typename T>
std::span<const T> embedding_row(const Tensor<T>& table, int id) {
  if (id < 0 || static_cast<std::size_t>(id) >= table.rows()) {
    throw Error("embedding id " + std::to_string(id) + " out of range " + table.shape_string());
  }
  return table.row(static_cast<std::size_t>(id));
}

}  // namespace

template <typename T>
SimilarityTable build_similarity_table(std::span<const int> rare_ids, std::span<const int> anchor_ids,
                                       const Tensor<T>& source_embedding, ScoreBand band,
                                       std::size_t epoch) {
  if (anchor_ids.empty()) throw Error("build_similarity_table: empty anchor set");
  if (!(band.low < band.high)) throw Error("build_similarity_table: band low must be below high");
  SimilarityTable table;
  table.band = band;
  table.epoch_built = epoch;
  SimilarityDiagnostics diag;
  for (int rare : rare_ids) {
    const auto e_i = embedding_row(source_embedding, rare);
    auto& list = table.candidates[rare];
    for (int anchor : anchor_ids) {
      const double s = similarity_score<T>(e_i, embedding_row(source_embedding, anchor), &diag);
      if (band.contains(s)) list.push_back({anchor, s});
    }
  }
  table.zero_norm_count = diag.zero_norm;
  return table;
}

Batch replace_rare_in_batch(const Batch& batch, const SimilarityTable& table, Rng& rng) {
  Batch out = batch;
  for (std::size_t r = 0; r < out.size; ++r) {
    for (std::size_t t = 0; t < out.source_lengths[r]; ++t) {
      int& id = out.source[r * out.source_len + t];
      const auto* list = table.find(id);
      if (!list || list->empty()) continue;
      id = (*list)[rng.below(list->size())].id;
    }
  }
  return out;
}

template <typename T>
AnchorMean compute_anchor_mean(std::span<const int> anchor_ids, const Tensor<T>& source_embedding,
                               std::size_t epoch) {
  if (anchor_ids.empty()) throw Error("compute_anchor_mean: empty anchor set");
  AnchorMean m;
  m.mean.assign(source_embedding.cols(), 0.0);
  for (int id : anchor_ids) {
    const auto row = embedding_row(source_embedding, id);
    for (std::size_t c = 0; c < row.size(); ++c) m.mean[c] += row[c];
  }
  for (auto& v : m.mean) v /= static_cast<double>(anchor_ids.size());
  m.epoch_built = epoch;
  m.anchor_count = anchor_ids.size();
  return m;
}

template <typename T>
std::vector<T> shifted_embedding(std::span<const T> e, std::span<const T> mean) {
  if (e.size() != mean.size()) {
    throw Error("shifted_embedding: dimension mismatch " + std::to_string(e.size()) + " vs " +
                std::to_string(mean.size()));
  }
  std::vector<T> out(e.size());
  for (std::size_t i = 0; i < e.size(); ++i) out[i] = e[i] + (e[i] - mean[i]);
  return out;
}

std::string to_string(Mode mode) { return mode == Mode::similarity ? "similarity" : "shift"; }

Mode parse_mode(const std::string& name) {
  if (name == "similarity") return Mode::similarity;
  if (name == "shift") return Mode::shift;
  throw Error("unknown rare-token mode '" + name + "' (expected similarity or shift)");
}

template <typename T>
Refreshed refresh(std::size_t epoch, const Tensor<T>& source_embedding,
                  std::span<const int> anchor_ids, std::span<const int> rare_ids, Mode mode,
                  ScoreBand band) {
  switch (mode) {
    case Mode::similarity:
      return build_similarity_table(rare_ids, anchor_ids, source_embedding, band, epoch);
    case Mode::shift:
      return compute_anchor_mean(anchor_ids, source_embedding, epoch);
  }
  throw Error("refresh: unknown mode");
}

void dump_table(const SimilarityTable& table, std::ostream& out, const Vocab* vocab) {
  auto name = [vocab](int id) { return vocab ? vocab->token(id) : std::to_string(id); };
  for (const auto& [rare, list] : table.candidates) {
    for (const auto& c : list) out << name(rare) << '\t' << name(c.id) << '\t' << c.score << '\n';
  }
}

std::vector<bool> rare_mask(std::span<const int> rare_ids, std::size_t vocab_size) {
  std::vector<bool> mask(vocab_size, false);
  for (int id : rare_ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
      throw Error("rare_mask: id " + std::to_string(id) + " out of range");
    }
    mask[static_cast<std::size_t>(id)] = true;
  }
  return mask;
}

#define MLNMT_INSTANTIATE(T)                                                                   \
  template double similarity_score(std::span<const T>, std::span<const T>,                     \
                                   SimilarityDiagnostics*);                                    \
  template SimilarityTable build_similarity_table(std::span<const int>, std::span<const int>,  \
                                                  const Tensor<T>&, ScoreBand, std::size_t);   \
  template AnchorMean compute_anchor_mean(std::span<const int>, const Tensor<T>&, std::size_t); \
  template std::vector<T> shifted_embedding(std::span<const T>, std::span<const T>);           \
  template Refreshed refresh(std::size_t, const Tensor<T>&, std::span<const int>,              \
                             std::span<const int>, Mode, ScoreBand);

MLNMT_INSTANTIATE(float)
MLNMT_INSTANTIATE(double)

#undef MLNMT_INSTANTIATE

}  // namespace mlnmt::raretoken
