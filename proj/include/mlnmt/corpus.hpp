#pragma once

// Vocabularies, anchor sets, rare-token identification, multilingual corpus
// assembly and deterministic batching.

#include <cstdint>
#include <iosfwd>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mlnmt/textpipe.hpp"

namespace mlnmt {

inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;
inline constexpr int kNumSpecials = 4;

class Vocab {
 public:
  Vocab();

  // Tokens in rank order (most frequent first), with their counts.
  static Vocab from_ranked(std::vector<std::pair<std::string, std::int64_t>> ranked);

  std::size_t size() const { return token_of_.size(); }
  int id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(int id) const;
  std::int64_t count(int id) const { return counts_.at(static_cast<std::size_t>(id)); }
  static bool is_special(int id) { return id >= 0 && id < kNumSpecials; }

  std::vector<int> encode(std::span<const std::string> tokens) const;
  // Stops at the first EOS; drops PAD and BOS.
  textpipe::Tokens decode(std::span<const int> ids) const;

  void save(std::ostream& out) const;
  static Vocab load(std::istream& in);

  friend bool operator==(const Vocab& a, const Vocab& b) {
    return a.token_of_ == b.token_of_ && a.counts_ == b.counts_;
  }

 private:
  std::unordered_map<std::string, int> id_of_;
  std::vector<std::string> token_of_;
  std::vector<std::int64_t> counts_;
};

// Keeps the `cap` most frequent tokens across all corpora (ties broken by
// ascending token), after the four special ids.
Vocab build_vocab(std::span<const std::vector<textpipe::Tokens>> corpora, std::size_t cap);

struct AnchorSets {
  std::set<int> english;     // every in-vocabulary token seen in the English source
  std::set<int> french_top;  // the k most frequent French source tokens
  std::size_t k = 0;

  std::set<int> all() const;
  bool contains(int id) const { return english.count(id) || french_top.count(id); }
};

AnchorSets build_anchor_sets(std::span<const textpipe::Tokens> english,
                             std::span<const textpipe::Tokens> french, const Vocab& vocab,
                             std::size_t k);

// Non-special vocabulary ids outside both anchor sets, ascending.
std::vector<int> rare_tokens(const Vocab& vocab, const AnchorSets& anchors);

enum class Provenance { real, pseudo };

struct SentencePair {
  int tag = 0;  // index of the language pair
  std::vector<int> source;
  std::vector<int> target;  // without BOS/EOS
  Provenance origin = Provenance::real;
};

struct ParallelCorpus {
  std::string name;
  std::string source_lang;
  std::string target_lang;
  std::vector<SentencePair> pairs;
};

struct MultilingualCorpus {
  std::vector<SentencePair> pairs;
  std::vector<std::string> pair_names;
  std::vector<std::size_t> pair_sizes;  // K_m
  std::string target_lang;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
  // Sentences belonging to a single language pair tag.
  MultilingualCorpus subset(int tag) const;
};

MultilingualCorpus concat_multilingual(std::span<const ParallelCorpus> corpora);

struct Batch {
  std::size_t size = 0;
  std::size_t source_len = 0;  // padded width of `source`
  std::size_t target_len = 0;  // padded width of `target_in` / `target_out`
  std::vector<int> source;      // size x source_len
  std::vector<int> target_in;   // BOS y_1 .. y_m, PAD-filled
  std::vector<int> target_out;  // y_1 .. y_m EOS, PAD-filled
  std::vector<std::size_t> source_lengths;
  std::vector<std::size_t> target_lengths;  // m + 1
  std::vector<int> tags;
  std::vector<std::size_t> indices;  // positions in the originating corpus
};

Batch make_batch(const MultilingualCorpus& corpus, std::span<const std::size_t> indices);

// Shuffles with a generator seeded by (seed, epoch) and cuts consecutive
// batches of batch_size; the last one may be smaller.
std::vector<Batch> make_batches(const MultilingualCorpus& corpus, std::size_t batch_size,
                                std::uint64_t seed, std::uint64_t epoch);

// Corpus order, no shuffling.
std::vector<Batch> make_ordered_batches(const MultilingualCorpus& corpus, std::size_t batch_size);

// Plain text helpers: one sentence per line.
std::vector<std::string> read_lines(const std::string& path);
void write_lines(const std::string& path, std::span<const std::string> lines);
std::vector<textpipe::Tokens> split_lines(std::span<const std::string> lines);

}  // namespace mlnmt
