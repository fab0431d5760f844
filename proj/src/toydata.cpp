#include "mlnmt/toydata.hpp"

#include <filesystem>
#include <set>

#include "mlnmt/corpus.hpp"
#include "mlnmt/util.hpp"

namespace mlnmt::toy {

namespace {

const char* const kOnsets[] = {"k", "l", "m", "n", "p", "r", "s", "t", "v", "d", "g", "b"};
const char* const kVowels[] = {"a", "e", "i", "o", "u"};
const char* const kSuffixes[] = {"ra", "vu", "sel", "kim", "dor", "pax"};

std::string syllables(Rng& rng, std::size_t n) {
  std::string w;
  for (std::size_t i = 0; i < n; ++i) {
    w += kOnsets[rng.below(std::size(kOnsets))];
    w += kVowels[rng.below(std::size(kVowels))];
  }
  return w;
}

// Draws distinct words of `n` syllables.
std::vector<std::string> distinct_words(Rng& rng, std::size_t count, std::size_t n,
                                        std::set<std::string>& used) {
  std::vector<std::string> out;
  while (out.size() < count) {
    std::string w = syllables(rng, n);
    if (used.insert(w).second) out.push_back(std::move(w));
  }
  return out;
}

std::string sentence(const std::vector<std::string>& words) {
  std::string s;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) s += ' ';
    s += words[i];
  }
  if (!s.empty()) s[0] = static_cast<char>(s[0] - 'a' + 'A');
  return s + ".";
}

}  // namespace

Corpus make_corpus(const Options& o) {
  if (o.concepts == 0 || o.languages == 0 || o.min_words == 0 || o.min_words > o.max_words) {
    throw Error("toy::make_corpus: invalid options");
  }
  if (o.languages > std::size(kSuffixes)) throw Error("toy::make_corpus: too many languages");
  Rng rng(o.seed, 0x746f79);
  std::set<std::string> used;
  const auto target_words = distinct_words(rng, o.concepts, 3, used);
  const auto shared = distinct_words(rng, o.concepts, 2, used);
  // vocab[l][c]: surface word of concept c in language l
  std::vector<std::vector<std::string>> vocab(o.languages);
  for (std::size_t l = 0; l < o.languages; ++l) {
    for (std::size_t c = 0; c < o.concepts; ++c) {
      const bool own = l > 0 && rng.uniform() >= o.shared_stems;
      const std::string stem = own ? distinct_words(rng, 1, 2, used).front() : shared[c];
      vocab[l].push_back(stem + kSuffixes[l]);
    }
  }

  Corpus corpus;
  for (std::size_t l = 0; l < o.languages; ++l) {
    LanguagePair pair;
    pair.source_lang = "l" + std::to_string(l + 1);
    pair.name = pair.source_lang + "-" + corpus.target_lang;
    Rng srng(o.seed, 0x100 + l);
    auto draw = [&](Split& split, std::size_t n) {
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t len = o.min_words + srng.below(o.max_words - o.min_words + 1);
        std::vector<std::string> src, tgt;
        for (std::size_t k = 0; k < len; ++k) {
          const std::size_t c = srng.below(o.concepts);
          src.push_back(vocab[l][c]);
          tgt.push_back(target_words[c]);
        }
        split.source.push_back(sentence(src));
        split.target.push_back(sentence(tgt));
      }
    };
    draw(pair.train, o.train);
    draw(pair.dev, o.dev);
    draw(pair.test, o.test);
    Split mono;
    draw(mono, o.mono);
    pair.mono = std::move(mono.source);
    corpus.pairs.push_back(std::move(pair));
  }
  return corpus;
}

Split make_copy_corpus(std::size_t sentences, std::size_t symbols, std::size_t min_len,
                       std::size_t max_len, std::uint64_t seed) {
  if (symbols == 0 || min_len == 0 || min_len > max_len) {
    throw Error("toy::make_copy_corpus: invalid options");
  }
  Rng rng(seed, 0x636f7079);
  Split out;
  for (std::size_t i = 0; i < sentences; ++i) {
    const std::size_t len = min_len + rng.below(max_len - min_len + 1);
    std::string src, tgt;
    for (std::size_t k = 0; k < len; ++k) {
      const std::string sym = std::to_string(rng.below(symbols));
      if (k) {
        src += ' ';
        tgt += ' ';
      }
      src += "a" + sym;
      tgt += "A" + sym;
    }
    out.source.push_back(std::move(src));
    out.target.push_back(std::move(tgt));
  }
  return out;
}

void write_corpus(const Corpus& corpus, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path root(dir);
  for (const auto& p : corpus.pairs) {
    auto put = [&](const std::string& split, const Split& s) {
      write_lines((root / (p.name + "." + split + ".src")).string(), s.source);
      write_lines((root / (p.name + "." + split + ".tgt")).string(), s.target);
    };
    put("train", p.train);
    put("dev", p.dev);
    put("test", p.test);
    write_lines((root / (p.name + ".mono.src")).string(), p.mono);
  }
}

}  // namespace mlnmt::toy
