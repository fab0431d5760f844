#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mlnmt/eval.hpp"
#include "mlnmt/trainer.hpp"

using namespace mlnmt;
using textpipe::Tokens;

namespace {

// Clipped n-gram matching by direct counting over token windows.
double reference_bleu(const std::vector<Tokens>& cands, const std::vector<Tokens>& refs) {
  double match[4] = {}, total[4] = {};
  double c = 0, r = 0;
  auto occurrences = [](const Tokens& t, std::size_t at, std::size_t n, const Tokens& in) {
    std::size_t k = 0;
    for (std::size_t j = 0; j + n <= in.size(); ++j) {
      if (std::equal(t.begin() + at, t.begin() + at + n, in.begin() + j)) ++k;
    }
    return k;
  };
  for (std::size_t l = 0; l < cands.size(); ++l) {
    const auto& x = cands[l];
    c += x.size();
    r += refs[l].size();
    for (std::size_t n = 1; n <= 4; ++n) {
      for (std::size_t i = 0; i + n <= x.size(); ++i) {
        total[n - 1] += 1;
        // Count a window once, at its first occurrence.
        bool first = true;
        for (std::size_t j = 0; j < i; ++j) {
          if (std::equal(x.begin() + i, x.begin() + i + n, x.begin() + j)) first = false;
        }
        if (first) match[n - 1] += std::min(occurrences(x, i, n, x), occurrences(x, i, n, refs[l]));
      }
    }
  }
  double logp = 0;
  for (int n = 0; n < 4; ++n) {
    if (match[n] == 0) return 0.0;
    logp += std::log(match[n] / total[n]) / 4;
  }
  const double bp = c >= r ? 1.0 : std::exp(1 - r / c);
  return 100 * bp * std::exp(logp);
}

Tokens random_line(Rng& rng, std::size_t lo, std::size_t hi) {
  static const Tokens words = {"a", "b", "c", "d", "e", "the", "cat"};
  Tokens t(lo + rng.below(hi - lo + 1));
  for (auto& w : t) w = words[rng.below(words.size())];
  return t;
}

}  // namespace

TEST_CASE("bleu examples") {
  const std::vector<std::string> same = {"a b c d e f", "the cat sat on the mat"};
  CHECK(bleu_lines(same, same).bleu == doctest::Approx(100.0));
  const std::vector<std::string> x = {"a b c d"}, y = {"e f g h"};
  CHECK(bleu_lines(x, y).bleu == 0.0);

  const std::vector<std::string> cand = {"a b c d"}, ref = {"a b c d e"};
  const auto r = bleu_lines(cand, ref);
  CHECK(std::abs(r.bleu - 77.88) <= 0.01);
  CHECK(r.summary() == "BLEU = 77.88, 100.0/100.0/100.0/100.0 (BP=0.779, ratio=0.800, hyp_len=4, ref_len=5)");

  // No 4-gram in the candidate, unsmoothed.
  const std::vector<std::string> short_c = {"the cat sat"}, short_r = {"the cat sat on the mat"};
  CHECK(bleu_lines(short_c, short_r).bleu == 0.0);

  const std::vector<std::string> empty = {""}, one = {"a"};
  CHECK(bleu_lines(empty, one).bleu == 0.0);
  const std::vector<std::string> two = {"a", "b"};
  CHECK_THROWS_AS(bleu_lines(one, two), Error);
}

TEST_CASE("bleu lowercase option") {
  const std::vector<std::string> a = {"The Cat sat on it"}, b = {"the cat sat on it"};
  CHECK(bleu_lines(a, b).bleu < 100.0);
  CHECK(bleu_lines(a, b, true).bleu == doctest::Approx(100.0));
}

TEST_CASE("bleu agrees with a window-counting oracle") {
  Rng rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Tokens> c, r;
    const std::size_t lines = 1 + rng.below(4);
    for (std::size_t l = 0; l < lines; ++l) {
      c.push_back(random_line(rng, 3, 10));
      r.push_back(random_line(rng, 3, 10));
    }
    CHECK(std::abs(bleu(c, r).bleu - reference_bleu(c, r)) < 1e-9);
  }
}

TEST_CASE("bleu is invariant to joint line order") {
  Rng rng(19);
  std::vector<Tokens> c, r;
  for (int l = 0; l < 12; ++l) {
    r.push_back(random_line(rng, 4, 9));
    auto h = r.back();
    h[rng.below(h.size())] = "zz";
    c.push_back(h);
  }
  const double base = bleu(c, r).bleu;
  CHECK(base > 0.0);
  std::vector<std::size_t> order(c.size());
  std::iota(order.begin(), order.end(), 0);
  for (int k = 0; k < 5; ++k) {
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
    std::vector<Tokens> pc, pr;
    for (auto i : order) pc.push_back(c[i]), pr.push_back(r[i]);
    CHECK(bleu(pc, pr).bleu == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("brevity penalty grows with candidate length") {
  const std::vector<Tokens> ref = {{"a", "b", "c", "d", "e", "f", "g", "h"}};
  double prev = -1;
  for (std::size_t n = 1; n <= 12; ++n) {
    Tokens c;
    for (std::size_t i = 0; i < n; ++i) c.push_back("x");
    const std::vector<Tokens> cand = {c};
    const double bp = bleu(cand, ref).brevity_penalty;
    CHECK(bp >= prev);
    CHECK(bp <= 1.0);
    if (n >= 8) CHECK(bp == 1.0);
    prev = bp;
  }
}

TEST_CASE("protocols") {
  CHECK(parse_protocol("average_scores") == Protocol::average_scores);
  CHECK(parse_protocol(to_string(Protocol::average_weights)) == Protocol::average_weights);
  CHECK_THROWS_AS(parse_protocol("mean"), Error);

  ModelConfig c;
  c.num_layers = 1;
  c.d_model = 8;
  c.num_heads = 2;
  c.d_ff = 16;
  c.source_vocab_size = 10;
  c.target_vocab_size = 8;
  c.max_len = 12;
  std::vector<std::pair<std::string, std::int64_t>> ranked = {{"x@@", 5}, {"y", 4}, {"z", 3}, {"w", 2}};
  const Vocab vocab = Vocab::from_ranked(ranked);
  REQUIRE(vocab.size() == 8);
  TestSet test;
  test.sources = {{4, 5}, {6, 7, 8}, {9}};
  test.references = {{"xy", "z"}, {"w"}, {"z", "z"}};
  test.target_vocab = &vocab;

  std::vector<Checkpoint> ck;
  for (std::uint64_t s = 1; s <= 3; ++s) {
    Checkpoint k;
    k.params = ModelParams::init(c, s);
    Rng rng(s, 3);
    for (auto& v : k.params.weights.output_b.values()) v = static_cast<float>(rng.uniform(-3, 3));
    ck.push_back(k);
  }
  DecodeConfig d;
  d.beam = 2;
  d.max_len = 5;
  const auto scores = score_protocol(ck, test, Protocol::average_scores, d);
  REQUIRE(scores.per_checkpoint.size() == 3);
  double sum = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double b = bleu(decode_to_tokens(ck[i].params, test, d), test.references).bleu;
    CHECK(scores.per_checkpoint[i] == b);
    sum += b;
  }
  CHECK(scores.bleu == doctest::Approx(sum / 3));
  const auto weights = score_protocol(ck, test, Protocol::average_weights, d);
  CHECK(weights.per_checkpoint.empty());
  CHECK(weights.bleu == bleu(decode_to_tokens(average_checkpoints(ck), test, d), test.references).bleu);
  CHECK_THROWS_AS(score_protocol(std::vector<Checkpoint>{}, test, Protocol::average_scores, d), Error);
}
