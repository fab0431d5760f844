#pragma once

// Rule-based tokenization, truecasing and byte-pair encoding.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace mlnmt::textpipe {

using Tokens = std::vector<std::string>;

// Splits on whitespace and detaches . , ! ? ; : " ( ) [ ] into their own tokens.
// Apostrophes and hyphens stay inside words.
Tokens tokenize(std::string_view line);

// Joins tokens, re-attaching punctuation the way tokenize detached it.
std::string detokenize(std::span<const std::string> tokens);

std::string to_lower(std::string_view text);

// Splits a UTF-8 string into code point substrings. Invalid bytes become
// single-byte pieces.
std::vector<std::string> utf8_chars(std::string_view text);

struct CasingEntry {
  std::string surface;
  std::int64_t count = 0;
};

struct TruecaseModel {
  // lowercased word -> most frequent non-sentence-initial surface form
  std::map<std::string, CasingEntry> casing;

  const CasingEntry* find(std::string_view lower) const;
};

TruecaseModel truecase_learn(std::span<const Tokens> corpus);
Tokens truecase_apply(Tokens tokens, const TruecaseModel& model);

void save_truecase(const TruecaseModel& model, std::ostream& out);
TruecaseModel load_truecase(std::istream& in);

inline constexpr std::string_view kEndOfWord = "</w>";
inline constexpr std::string_view kContinuation = "@@";

struct BpeCodes {
  using Merge = std::pair<std::string, std::string>;
  // Rank order: merges[0] was learned first.
  std::vector<Merge> merges;

  std::size_t num_merges() const { return merges.size(); }
};

// Greedy pair merging over count-weighted words; each word is its characters
// followed by a separate end-of-word symbol. Ties go to the lexicographically
// smallest (left, right).
BpeCodes bpe_learn(const std::map<std::string, std::int64_t>& word_counts,
                   std::size_t num_merges);

// Applies merges by rank and caches per-word segmentations.
class BpeApplier {
 public:
  explicit BpeApplier(BpeCodes codes);

  Tokens apply(std::string_view word);
  Tokens apply_sentence(std::span<const std::string> words);
  const BpeCodes& codes() const { return codes_; }

 private:
  Tokens segment(std::string_view word) const;

  BpeCodes codes_;
  std::map<BpeCodes::Merge, std::size_t> rank_;
  std::unordered_map<std::string, Tokens> cache_;
};

Tokens bpe_apply(std::string_view word, const BpeCodes& codes);

// Inverse of BPE application over a sentence. A trailing piece that still
// carries the continuation marker is emitted as-is and flags `dangling`.
Tokens bpe_undo(std::span<const std::string> subwords, bool* dangling = nullptr);

void save_codes(const BpeCodes& codes, std::ostream& out);
BpeCodes load_codes(std::istream& in);

}  // namespace mlnmt::textpipe
