#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <sstream>

#include "mlnmt/corpus.hpp"
#include "mlnmt/util.hpp"

using namespace mlnmt;
using textpipe::Tokens;

namespace {

std::vector<Tokens> repeat(const std::vector<std::pair<std::string, int>>& counts) {
  std::vector<Tokens> lines(1);
  for (const auto& [t, n] : counts) {
    for (int i = 0; i < n; ++i) lines[0].push_back(t);
  }
  return lines;
}

ParallelCorpus toy_pair(const std::string& name, std::size_t n, int offset,
                        const std::string& tgt = "vi") {
  ParallelCorpus c{name, name.substr(0, 2), tgt, {}};
  for (std::size_t i = 0; i < n; ++i) {
    SentencePair p;
    p.source.assign(1 + i % 3, kNumSpecials + offset + static_cast<int>(i));
    p.target.assign(1 + i % 2, kNumSpecials + static_cast<int>(i));
    c.pairs.push_back(p);
  }
  return c;
}

}  // namespace

TEST_CASE("build_vocab ranks by count") {
  const std::vector<std::vector<Tokens>> corpora = {repeat({{"a", 5}, {"b", 3}, {"c", 1}})};
  const auto v = build_vocab(corpora, 2);
  CHECK(v.size() == kNumSpecials + 2);
  CHECK(v.contains("a"));
  CHECK(v.contains("b"));
  CHECK_FALSE(v.contains("c"));
  CHECK(v.id("a") == kNumSpecials);
  CHECK(v.id("c") == kUnk);
  CHECK(build_vocab(corpora, 100).size() == kNumSpecials + 3);
  CHECK_THROWS_AS(build_vocab(std::vector<std::vector<Tokens>>{}, 5), Error);
}

TEST_CASE("build_vocab ties are lexicographic and mixed across corpora") {
  const std::vector<std::vector<Tokens>> corpora = {repeat({{"q", 2}, {"m", 1}}),
                                                    repeat({{"d", 2}, {"m", 1}})};
  const auto v = build_vocab(corpora, 2);
  CHECK(v.token(kNumSpecials) == "d");
  CHECK(v.token(kNumSpecials + 1) == "m");  // 2 total, beats q on the tie
  CHECK(v.count(kNumSpecials + 1) == 2);
}

TEST_CASE("vocab bijection and file round trip") {
  const auto v = build_vocab(std::vector<std::vector<Tokens>>{repeat({{"x", 4}, {"y", 2}, {"zé", 1}})}, 10);
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(v.id(v.token(static_cast<int>(i))) == static_cast<int>(i));
  std::stringstream ss;
  v.save(ss);
  CHECK(Vocab::load(ss) == v);
  std::vector<int> ids = {kNumSpecials, kNumSpecials + 2, kNumSpecials + 1};
  CHECK(v.encode(v.decode(ids)) == ids);
  CHECK(v.decode(std::vector<int>{kBos, kNumSpecials, kEos, kNumSpecials + 1}) == Tokens{"x"});
  CHECK_THROWS_AS(v.token(99), Error);
}

TEST_CASE("anchor sets") {
  const std::vector<Tokens> en = {{"x", "y"}};
  const std::vector<Tokens> fr = {{"y", "y", "y", "y", "y", "y", "y", "y", "y", "z", "z", "z", "z", "z", "w"}};
  std::vector<std::vector<Tokens>> both = {en, fr};
  const auto v = build_vocab(both, 100);
  const auto a = build_anchor_sets(en, fr, v, 2);
  CHECK(a.english == std::set<int>{v.id("x"), v.id("y")});
  CHECK(a.french_top == std::set<int>{v.id("y"), v.id("z")});
  CHECK(a.k == 2);
  CHECK(rare_tokens(v, a) == std::vector<int>{v.id("w")});

  const auto big = build_anchor_sets(en, fr, v, 50);
  CHECK(big.french_top.size() == 3);
  CHECK(rare_tokens(v, big).empty());
  CHECK_THROWS_AS(build_anchor_sets(en, fr, v, 0), Error);
}

TEST_CASE("rare french subword outside top-k and absent from english") {
  const std::vector<Tokens> en = {{"the", "tree", "is", "green"}, {"the", "sky"}};
  const std::vector<Tokens> fr = {{"l'", "arbre@@", "s", "est", "vert"},
                                  {"le", "ci@@", "el", "est", "bleu"},
                                  {"le", "vert", "est", "vert"}};
  std::vector<std::vector<Tokens>> both = {en, fr};
  const auto v = build_vocab(both, 100);
  const auto a = build_anchor_sets(en, fr, v, 3);
  const auto rare = rare_tokens(v, a);
  CHECK(std::binary_search(rare.begin(), rare.end(), v.id("arbre@@")));
  CHECK_FALSE(std::binary_search(rare.begin(), rare.end(), v.id("est")));
  CHECK_FALSE(std::binary_search(rare.begin(), rare.end(), v.id("the")));
}

TEST_CASE("rare tokens partition the vocabulary") {
  Rng rng(2);
  std::vector<Tokens> en(20), fr(20);
  for (auto& l : en) for (int i = 0; i < 5; ++i) l.push_back("e" + std::to_string(rng.below(30)));
  for (auto& l : fr) for (int i = 0; i < 5; ++i) l.push_back("f" + std::to_string(rng.below(60)));
  std::vector<std::vector<Tokens>> both = {en, fr};
  const auto v = build_vocab(both, 1000);
  const auto a = build_anchor_sets(en, fr, v, 10);
  CHECK(a.french_top.size() == 10);
  const auto rare = rare_tokens(v, a);
  std::set<int> all = a.all();
  for (int r : rare) CHECK_FALSE(all.count(r));
  for (int r : rare) all.insert(r);
  for (int s = 0; s < kNumSpecials; ++s) all.insert(s);
  CHECK(all.size() == v.size());
}

TEST_CASE("concat_multilingual") {
  const std::vector<ParallelCorpus> two = {toy_pair("en-vi", 3, 0), toy_pair("fr-vi", 4, 10)};
  const auto c = concat_multilingual(two);
  CHECK(c.size() == 7);
  CHECK(c.pair_sizes == std::vector<std::size_t>{3, 4});
  CHECK(c.pair_names == std::vector<std::string>{"en-vi", "fr-vi"});
  for (std::size_t i = 0; i < 7; ++i) CHECK(c.pairs[i].tag == (i < 3 ? 0 : 1));
  CHECK(c.subset(1).size() == 4);
  // No extra token is added.
  CHECK(c.pairs[0].source == two[0].pairs[0].source);

  const std::vector<ParallelCorpus> one = {toy_pair("en-vi", 5, 0)};
  const auto single = concat_multilingual(one);
  for (std::size_t i = 0; i < 5; ++i) CHECK(single.pairs[i].source == one[0].pairs[i].source);

  const std::vector<ParallelCorpus> bad = {toy_pair("en-vi", 3, 0), toy_pair("fr-de", 3, 0, "de")};
  CHECK_THROWS_AS(concat_multilingual(bad), Error);
}

TEST_CASE("make_batches sizes, determinism and padding") {
  const std::vector<ParallelCorpus> p = {toy_pair("en-vi", 5, 0)};
  const auto c = concat_multilingual(p);
  const auto b = make_batches(c, 2, 1, 0);
  REQUIRE(b.size() == 3);
  CHECK(b[0].size == 2);
  CHECK(b[1].size == 2);
  CHECK(b[2].size == 1);
  const auto again = make_batches(c, 2, 1, 0);
  for (std::size_t i = 0; i < b.size(); ++i) CHECK(b[i].indices == again[i].indices);
  CHECK_THROWS_AS(make_batches(c, 0, 1, 0), Error);

  const std::vector<ParallelCorpus> big = {toy_pair("en-vi", 37, 0), toy_pair("fr-vi", 20, 40)};
  const auto cc = concat_multilingual(big);
  for (std::uint64_t epoch = 0; epoch < 3; ++epoch) {
    std::vector<std::size_t> seen;
    for (const auto& batch : make_batches(cc, 8, 4, epoch)) {
      seen.insert(seen.end(), batch.indices.begin(), batch.indices.end());
      for (std::size_t r = 0; r < batch.size; ++r) {
        const auto& sp = cc.pairs[batch.indices[r]];
        CHECK(batch.source_lengths[r] == sp.source.size());
        CHECK(batch.target_lengths[r] == sp.target.size() + 1);
        CHECK(batch.tags[r] == sp.tag);
        for (std::size_t j = 0; j < batch.source_len; ++j) {
          const int id = batch.source[r * batch.source_len + j];
          CHECK((j < sp.source.size()) == (id != kPad));
        }
        CHECK(batch.target_in[r * batch.target_len] == kBos);
        CHECK(batch.target_out[r * batch.target_len + sp.target.size()] == kEos);
        for (std::size_t j = sp.target.size() + 1; j < batch.target_len; ++j) {
          CHECK(batch.target_out[r * batch.target_len + j] == kPad);
          CHECK(batch.target_in[r * batch.target_len + j] == kPad);
        }
      }
    }
    CHECK(seen.size() == cc.size());
    std::sort(seen.begin(), seen.end());
    std::vector<std::size_t> expect(cc.size());
    std::iota(expect.begin(), expect.end(), 0);
    CHECK(seen == expect);
  }
  CHECK(make_batches(cc, 8, 4, 0)[0].indices != make_batches(cc, 8, 4, 1)[0].indices);
}
