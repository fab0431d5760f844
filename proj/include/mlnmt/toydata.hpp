#pragma once

// Synthetic corpora for smoke tests and the toy pipeline.
//
// The multilingual task has one concept lexicon. Every source language spells
// a concept as <stem><suffix>, where most stems are shared across languages
// and the suffix marks the language; the target spells it with an unrelated
// word. Sentences are monotone word-for-word translations, capitalised and
// ending in a period so the full text pipeline gets exercised.

#include <cstdint>
#include <string>
#include <vector>

namespace mlnmt::toy {

struct Split {
  std::vector<std::string> source;
  std::vector<std::string> target;
};

struct LanguagePair {
  std::string name;         // e.g. "l1-tg"
  std::string source_lang;  // e.g. "l1"
  Split train, dev, test;
  std::vector<std::string> mono;  // source-side monolingual text
};

struct Corpus {
  std::vector<LanguagePair> pairs;
  std::string target_lang = "tg";
};

struct Options {
  std::size_t concepts = 24;
  std::size_t languages = 2;
  double shared_stems = 0.75;  // fraction of concepts whose stem every language shares
  std::size_t min_words = 3;
  std::size_t max_words = 6;
  std::size_t train = 150;
  std::size_t dev = 40;
  std::size_t test = 40;
  std::size_t mono = 60;
  std::uint64_t seed = 7;
};

Corpus make_corpus(const Options& options);

// Copy/transliteration task: "a3 a0 a7" -> "A3 A0 A7" over `symbols` symbols,
// lengths in [min_len, max_len].
Split make_copy_corpus(std::size_t sentences, std::size_t symbols, std::size_t min_len,
                       std::size_t max_len, std::uint64_t seed);

// Writes <dir>/<pair>.{train,dev,test}.{src,tgt} and <dir>/<pair>.mono.src.
void write_corpus(const Corpus& corpus, const std::string& dir);

}  // namespace mlnmt::toy
