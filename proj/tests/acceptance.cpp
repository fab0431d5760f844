// End-to-end acceptance run: one line per criterion, non-zero exit on any
// failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "mlnmt/checkpoint.hpp"
#include "mlnmt/cli.hpp"
#include "mlnmt/decoder.hpp"
#include "mlnmt/eval.hpp"
#include "mlnmt/gradcheck.hpp"
#include "mlnmt/pipeline.hpp"
#include "mlnmt/raretoken.hpp"
#include "mlnmt/selftrain.hpp"
#include "mlnmt/toydata.hpp"
#include "mlnmt/trainer.hpp"
#include "oracles.hpp"

using namespace mlnmt;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Toy multilingual data run through the text pipeline and encoded.
struct ToyData {
  toy::Corpus raw;
  TextModels text;
  Vocab source_vocab, target_vocab;
  std::vector<ParallelCorpus> train, dev;
  std::vector<std::vector<std::vector<int>>> mono;  // per language
};

ToyData prepare_toy(std::size_t merges = 120, std::size_t vocab_cap = 400) {
  ToyData d;
  toy::Options o;
  d.raw = toy::make_corpus(o);
  std::vector<std::string> src, tgt;
  for (const auto& p : d.raw.pairs) {
    src.insert(src.end(), p.train.source.begin(), p.train.source.end());
    tgt.insert(tgt.end(), p.train.target.begin(), p.train.target.end());
  }
  d.text = learn_text_models(src, tgt, merges);
  TextPreparer prep(d.text);
  std::vector<std::vector<textpipe::Tokens>> src_tok, tgt_tok;
  struct Prepared {
    std::vector<textpipe::Tokens> ts, tt, ds, dt, mono;
  };
  std::vector<Prepared> per;
  for (const auto& p : d.raw.pairs) {
    Prepared x;
    x.ts = prep.prepare(p.train.source, Side::source);
    x.tt = prep.prepare(p.train.target, Side::target);
    x.ds = prep.prepare(p.dev.source, Side::source);
    x.dt = prep.prepare(p.dev.target, Side::target);
    x.mono = prep.prepare(p.mono, Side::source);
    src_tok.push_back(x.ts);
    tgt_tok.push_back(x.tt);
    per.push_back(std::move(x));
  }
  d.source_vocab = build_vocab(src_tok, vocab_cap);
  d.target_vocab = build_vocab(tgt_tok, vocab_cap);
  for (std::size_t i = 0; i < per.size(); ++i) {
    const auto& p = d.raw.pairs[i];
    d.train.push_back(encode_pair(p.name, p.source_lang, d.raw.target_lang, per[i].ts, per[i].tt,
                                  d.source_vocab, d.target_vocab));
    d.dev.push_back(encode_pair(p.name, p.source_lang, d.raw.target_lang, per[i].ds, per[i].dt,
                                d.source_vocab, d.target_vocab));
    std::vector<std::vector<int>> m;
    for (const auto& line : per[i].mono) m.push_back(d.source_vocab.encode(line));
    d.mono.push_back(std::move(m));
  }
  return d;
}

ModelConfig toy_model(const ToyData& d, std::size_t layers = 2, std::size_t dim = 32) {
  ModelConfig c;
  c.num_layers = layers;
  c.d_model = dim;
  c.num_heads = 4;
  c.d_ff = 2 * dim;
  c.dropout = 0.1;
  c.max_len = 64;
  c.source_vocab_size = d.source_vocab.size();
  c.target_vocab_size = d.target_vocab.size();
  return c;
}

TrainConfig toy_train(std::size_t epochs, std::uint64_t seed) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 16;
  t.warmup_steps = 100;
  t.keep_best = 3;
  t.seed = seed;
  return t;
}

MultilingualCorpus one(const ParallelCorpus& p) { return concat_multilingual(std::span(&p, 1)); }

// 1
Outcome gradients() {
  const auto t0 = Clock::now();
  ModelGradCheckOptions o;  // 2 layers, d_model 16, 2 heads, 3 sentences, 500 coordinates
  const auto r = model_grad_check(o);
  const double s = seconds_since(t0);
  return {r.max_rel_error < 1e-4 && r.coordinates >= 500 && s < 120,
          fmt("max relative error %.3g over %zu coordinates, %.1f s", r.max_rel_error, r.coordinates, s)};
}

// 2
Outcome objective(const ToyData& d) {
  const auto c = toy_model(d);
  const auto p = ModelParams::init(c, 11);
  const auto both = concat_multilingual(d.train);
  const double joint = corpus_loss(p, both);
  double weighted = 0;
  for (const auto& pair : d.train) weighted += static_cast<double>(pair.pairs.size()) * corpus_loss(p, one(pair));
  weighted /= static_cast<double>(both.size());
  const double gap = std::abs(joint - weighted);
  return {gap < 1e-6, fmt("joint %.9f vs weighted %.9f (gap %.2g)", joint, weighted, gap)};
}

// 3
Outcome similarity_suite() {
  using raretoken::similarity_score;
  std::vector<std::string> bad;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) bad.push_back(what);
  };
  const std::vector<double> ex = {1, 0}, ey = {0, 1}, nx = {-1, 0};
  expect(similarity_score<double>(ex, ex) == 0.0, "self score");
  expect(std::abs(similarity_score<double>(ex, ey) - std::sqrt(2.0)) <= 1e-6, "orthogonal");
  expect(std::abs(similarity_score<double>(ex, nx) - 2.0 / std::exp(1.0)) <= 1e-6, "antipodal");
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> a(8), b(8);
    for (auto& v : a) v = rng.uniform(-2, 2);
    for (auto& v : b) v = rng.uniform(-2, 2);
    const double c = rng.uniform(0.1, 10);
    std::vector<double> ca = a, cb = b;
    for (auto& v : ca) v *= c;
    for (auto& v : cb) v *= c;
    expect(std::abs(similarity_score<double>(ca, cb) - c * similarity_score<double>(a, b)) <= 1e-6,
           "homogeneity");
    expect(similarity_score<double>(a, a) == 0.0, "self score (random)");
  }
  std::size_t mismatches = 0, out_of_band = 0, kept = 0;
  for (int trial = 0; trial < 20; ++trial) {
    Tensor<float> emb({25, 4});
    for (auto& v : emb.values()) v = static_cast<float>(rng.uniform(-1.6, 1.6));
    std::vector<int> rare = {0, 1, 2, 3, 4}, anchors(20);
    std::iota(anchors.begin(), anchors.end(), 5);
    const raretoken::ScoreBand band;
    const auto t = raretoken::build_similarity_table<float>(rare, anchors, emb, band);
    for (int r : rare) {
      std::vector<int> want;
      for (int a : anchors) {
        const double s = oracle::similarity(emb.row(r), emb.row(a));
        if (s >= band.low && s <= band.high) want.push_back(a);
      }
      std::vector<int> got;
      for (const auto& cand : *t.find(r)) {
        got.push_back(cand.id);
        out_of_band += !band.contains(cand.score);
      }
      kept += got.size();
      mismatches += got != want;
    }
  }
  if (mismatches) bad.push_back(fmt("%zu table rows differ from the oracle", mismatches));
  if (out_of_band) bad.push_back(fmt("%zu kept scores outside the band", out_of_band));
  std::string detail = bad.empty() ? fmt("examples, homogeneity, 20 tables of 5x20 (%zu kept, all in [2.4, 2.72])", kept)
                                   : bad.front();
  return {bad.empty(), detail};
}

// 4
Outcome shift_suite() {
  Rng rng(4);
  bool exact = true;
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    std::vector<float> e(16), zero(16, 0.0f), twice(16);
    for (auto& v : e) v = static_cast<float>(rng.uniform(-3, 3));
    for (std::size_t k = 0; k < 16; ++k) twice[k] = 2 * e[k];
    exact &= raretoken::shifted_embedding<float>(e, e) == e;
    exact &= raretoken::shifted_embedding<float>(e, zero) == twice;
  }
  Tensor<float> emb({100, 32});
  for (auto& v : emb.values()) v = static_cast<float>(rng.uniform(-3, 3));
  std::vector<int> ids(100);
  std::iota(ids.begin(), ids.end(), 0);
  const auto m = raretoken::compute_anchor_mean<float>(ids, emb);
  for (std::size_t c = 0; c < 32; ++c) {
    long double s = 0;
    for (int id : ids) s += emb(id, c);
    const double want = static_cast<double>(s / 100);
    worst = std::max(worst, std::abs(m.mean[c] - want) / std::max(std::abs(want), 1e-12));
  }
  return {exact && worst <= 1e-6,
          fmt("shifted(e,e)=e and shifted(e,0)=2e %s; mean relative error %.2g over 100 vectors",
              exact ? "exact" : "NOT exact", worst)};
}

// 5
Outcome replacement(const ToyData& d) {
  const auto c = toy_model(d);
  const auto p = ModelParams::init(c, 5);
  std::vector<textpipe::Tokens> l1, l2;
  for (const auto& pr : d.train[0].pairs) {
    l1.emplace_back();
    for (int id : pr.source) l1.back().push_back(d.source_vocab.token(id));
  }
  for (const auto& pr : d.train[1].pairs) {
    l2.emplace_back();
    for (int id : pr.source) l2.back().push_back(d.source_vocab.token(id));
  }
  // Few anchors from the second side, so that it leaves rare tokens behind.
  const auto anchors = build_anchor_sets(std::span(l1).first(40), l2, d.source_vocab, 5);
  const auto rare = rare_tokens(d.source_vocab, anchors);
  const auto all = anchors.all();
  const std::vector<int> anchor_ids(all.begin(), all.end());
  std::vector<double> scores;
  for (int r : rare)
    for (int a : anchor_ids) scores.push_back(oracle::similarity(p.weights.source_embedding.row(r),
                                                                 p.weights.source_embedding.row(a)));
  std::sort(scores.begin(), scores.end());
  const raretoken::ScoreBand band{scores[scores.size() / 4], scores[scores.size() / 2]};
  const auto table = raretoken::build_similarity_table<float>(rare, anchor_ids, p.weights.source_embedding, band);
  const auto corpus = concat_multilingual(d.train);
  std::size_t leftover = 0, touched_anchor = 0, changed = 0, diverged = 0;
  for (std::uint64_t e = 1; e <= 3; ++e) {
    Rng r1(99, e), r2(99, e);
    for (const auto& b : make_batches(corpus, 16, 1, e)) {
      const auto o1 = raretoken::replace_rare_in_batch(b, table, r1);
      const auto o2 = raretoken::replace_rare_in_batch(b, table, r2);
      diverged += o1.source != o2.source;
      for (std::size_t i = 0; i < b.source.size(); ++i) {
        const auto* list = table.find(o1.source[i]);
        leftover += list && !list->empty();
        touched_anchor += anchors.contains(b.source[i]) && o1.source[i] != b.source[i];
        changed += o1.source[i] != b.source[i];
      }
    }
  }
  return {leftover == 0 && touched_anchor == 0 && diverged == 0 && changed > 0,
          fmt("%zu rare ids (%zu replaceable), %zu positions replaced, %zu left, %zu anchors touched, "
              "%zu batches irreproducible",
              rare.size(), table.replaceable_count(), changed, leftover, touched_anchor, diverged)};
}

// 6
Outcome overfit() {
  const auto t0 = Clock::now();
  const auto split = toy::make_copy_corpus(200, 20, 3, 8, 6);
  const auto src = split_lines(split.source), tgt = split_lines(split.target);
  const Vocab sv = build_vocab(std::span(&src, 1), 100), tv = build_vocab(std::span(&tgt, 1), 100);
  const auto pair = encode_pair("copy", "lo", "up", src, tgt, sv, tv);
  const auto corpus = one(pair);
  ModelConfig c;
  c.num_layers = 2;
  c.d_model = 64;
  c.num_heads = 4;
  c.d_ff = 128;
  c.dropout = 0.0;
  c.max_len = 32;
  c.source_vocab_size = sv.size();
  c.target_vocab_size = tv.size();
  TrainConfig t;
  t.epochs = 10;
  t.batch_size = 20;
  t.warmup_steps = 200;
  t.label_smoothing = 0.0;
  t.keep_best = 1;
  t.seed = 6;
  Checkpoint state;
  double loss = INFINITY, exact = 0;
  std::size_t epochs = 0;
  while (epochs < 300) {
    const auto r = train(corpus, corpus, c, t, epochs ? &state : nullptr);
    state = r.last;
    epochs = state.epoch;
    loss = r.history.back().train_loss;
    if (loss >= 0.1) continue;
    std::size_t hits = 0;
    for (const auto& sp : pair.pairs) {
      hits += greedy_decode(sp.source, state.params, sp.source.size() + 5).output() == sp.target;
    }
    exact = static_cast<double>(hits) / static_cast<double>(pair.pairs.size());
    if (exact >= 0.95) break;
  }
  const double s = seconds_since(t0);
  return {loss < 0.1 && exact >= 0.95 && epochs <= 300 && s < 900,
          fmt("train loss %.4f, greedy exact match %.1f%% after %zu epochs, %.0f s", loss, 100 * exact,
              epochs, s)};
}

// 7
Outcome multilingual_gain(const ToyData& d) {
  const auto t0 = Clock::now();
  const auto c = toy_model(d);
  const std::size_t epochs = 30;
  std::vector<double> multi[2], bi[2];
  const auto both = concat_multilingual(d.train);
  const auto both_dev = concat_multilingual(d.dev);
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto m = train(both, both_dev, c, toy_train(epochs, seed));
    for (int k = 0; k < 2; ++k) {
      multi[k].push_back(corpus_loss(m.best.front().params, one(d.dev[k])));
      const auto b = train(one(d.train[k]), one(d.dev[k]), c, toy_train(epochs, seed));
      bi[k].push_back(b.best.front().dev_loss);
    }
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  const double m1 = median(multi[0]), m2 = median(multi[1]), b1 = median(bi[0]), b2 = median(bi[1]);
  const double s = seconds_since(t0);
  return {m1 <= b1 && m2 <= b2 && s < 1800,
          fmt("median dev loss l1: multilingual %.3f vs bilingual %.3f; l2: %.3f vs %.3f; %.0f s", m1, b1,
              m2, b2, s)};
}

// 8
Outcome bpe_oracle() {
  Rng rng(8);
  std::size_t lists = 0, bad_lists = 0, bad_trips = 0;
  for (int trial = 0; trial < 8; ++trial) {
    std::map<std::string, std::int64_t> counts;
    const auto chars = textpipe::utf8_chars(trial % 2 ? "abcdef" : "abéç");
    for (int i = 0; i < 60; ++i) {
      std::string w;
      for (std::size_t k = 0, n = 1 + rng.below(8); k < n; ++k) w += chars[rng.below(chars.size())];
      counts[w] += 1 + static_cast<std::int64_t>(rng.below(6));
    }
    const std::size_t merges = 20 + 20 * trial;
    ++lists;
    bad_lists += textpipe::bpe_learn(counts, merges).merges != oracle::bpe_merges(counts, merges);
  }
  std::map<std::string, std::int64_t> counts;
  const std::string alphabet = "abcdefgh";
  auto word = [&](std::size_t lo, std::size_t hi, const std::string& a) {
    std::string w;
    for (std::size_t k = 0, n = lo + rng.below(hi - lo + 1); k < n; ++k) w += a[rng.below(a.size())];
    return w;
  };
  for (int i = 0; i < 500; ++i) ++counts[word(1, 8, alphabet)];
  textpipe::BpeApplier applier(textpipe::bpe_learn(counts, 150));
  for (int i = 0; i < 10000; ++i) {
    const auto w = word(1, 12, alphabet + "xyz");
    const auto undone = textpipe::bpe_undo(applier.apply(w));
    bad_trips += undone.size() != 1 || undone[0] != w;
  }
  return {bad_lists == 0 && bad_trips == 0,
          fmt("%zu/%zu merge lists equal the oracle; %d/10000 round trips exact", lists - bad_lists, lists,
              10000 - static_cast<int>(bad_trips))};
}

// 9
Outcome bleu_oracle() {
  const std::vector<std::string> same = {"the cat sat on the mat today"}, disjoint = {"w x y z"};
  const std::vector<std::string> cand = {"a b c d"}, ref = {"a b c d e"};
  const double b_same = bleu_lines(same, same).bleu, b_dis = bleu_lines(disjoint, same).bleu;
  const auto bp = bleu_lines(cand, ref);
  const std::string want = "BLEU = 77.88, 100.0/100.0/100.0/100.0 (BP=0.779, ratio=0.800, hyp_len=4, ref_len=5)";
  const bool ok = fmt("%.2f", b_same) == "100.00" && b_dis == 0.0 && std::abs(bp.bleu - 77.88) <= 0.01 &&
                  bp.summary() == want;
  return {ok, fmt("identical %.2f, disjoint %.2f, brevity case \"%s\"", b_same, b_dis, bp.summary().c_str())};
}

// 10
Outcome beam_checks() {
  ModelConfig c;
  c.num_layers = 1;
  c.d_model = 8;
  c.num_heads = 2;
  c.d_ff = 16;
  c.source_vocab_size = 9;
  c.target_vocab_size = 6;  // emittable: EOS, UNK and two words
  c.max_len = 16;
  c.dropout = 0.0;
  auto model = [&](std::uint64_t seed) {
    auto p = ModelParams::init(c, seed);
    Rng rng(seed, 1);
    for (auto& v : p.weights.output_w.values()) v = static_cast<float>(rng.uniform(-2, 2));
    for (auto& v : p.weights.output_b.values()) v = static_cast<float>(rng.uniform(-1, 1));
    return p;
  };
  Rng rng(10);
  auto source = [&] {
    std::vector<int> s(1 + rng.below(5));
    for (auto& id : s) id = kNumSpecials + static_cast<int>(rng.below(5));
    return s;
  };
  std::size_t greedy_same = 0;
  for (int i = 0; i < 100; ++i) {
    const auto p = model(1000 + i);
    const auto s = source();
    DecodeConfig d;
    d.beam = 1;
    d.max_len = 1 + rng.below(8);
    const std::vector<std::vector<int>> one_src = {s};
    greedy_same += translate(one_src, p, d).front().tokens == greedy_decode(s, p, d.max_len).tokens;
  }
  std::size_t exact2 = 0, exact3 = 0, exact3_b4 = 0, cases = 0;
  for (int i = 0; i < 25; ++i) {
    const auto p = model(2000 + i);
    const auto s = source();
    for (double alpha : {0.0, 0.8}) {
      ++cases;
      DecodeConfig d;
      d.alpha = alpha;
      d.beam = 4;
      d.max_len = 2;
      exact2 += beam_search(s, p, d).tokens == oracle::best_output(s, p, {kEos, kUnk, 4, 5}, 2, alpha).tokens;
      const auto want3 = oracle::best_output(s, p, {kEos, kUnk, 4, 5}, 3, alpha).tokens;
      d.max_len = 3;
      exact3_b4 += beam_search(s, p, d).tokens == want3;
      d.beam = 16;
      exact3 += beam_search(s, p, d).tokens == want3;
    }
  }
  return {greedy_same == 100 && exact2 == cases && exact3 == cases,
          fmt("beam 1 = greedy on %zu/100; exhaustive match: beam 4 len 2 %zu/%zu, beam 16 len 3 %zu/%zu "
              "(beam 4 len 3, not guaranteed: %zu/%zu)",
              greedy_same, exact2, cases, exact3, cases, exact3_b4, cases)};
}

// 11
int cli(std::vector<std::string> args) {
  args.insert(args.begin(), {"nmt", "--log-level", "warn", "--config",
                             std::string(MLNMT_SOURCE_DIR) + "/configs/toy.cfg"});
  std::ostringstream sink;
  auto* old_err = std::cerr.rdbuf(sink.rdbuf());
  auto* old_out = std::cout.rdbuf(sink.rdbuf());
  const int code = cli::run(args);
  std::cerr.rdbuf(old_err);
  std::cout.rdbuf(old_out);
  if (code != 0) std::cerr << sink.str();
  return code;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct PipelineRun {
  bool ok = true;
  std::string checkpoint, translation;
  std::string bleu_line;
};

PipelineRun run_pipeline(const fs::path& dir) {
  PipelineRun out;
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string D = dir.string();
  auto step = [&](std::vector<std::string> a) {
    if (out.ok && cli(std::move(a)) != 0) out.ok = false;
  };
  step({"toy-data", "--out", D + "/raw"});
  const std::vector<std::string> pairs = {"l1-tg", "l2-tg"};
  std::vector<std::string> learn = {"preprocess", "--step", "learn", "--model", D + "/text"};
  for (const auto& p : pairs) {
    learn.insert(learn.end(), {"--source", D + "/raw/" + p + ".train.src", "--target", D + "/raw/" + p + ".train.tgt"});
  }
  step(learn);
  for (const auto& p : pairs) {
    for (const char* split : {"train", "dev", "test"}) {
      for (const char* side : {"src", "tgt"}) {
        const std::string base = p + "." + split + "." + side;
        step({"preprocess", "--step", "apply", "--model", D + "/text", "--side", side, "--input",
              D + "/raw/" + base, "--output", D + "/" + base});
      }
    }
  }
  step({"vocab", "--input", D + "/l1-tg.train.src", "--input", D + "/l2-tg.train.src", "--out", D + "/src.vocab"});
  step({"vocab", "--input", D + "/l1-tg.train.tgt", "--input", D + "/l2-tg.train.tgt", "--out", D + "/tgt.vocab"});
  std::vector<std::string> tr = {"train", "--src-vocab", D + "/src.vocab", "--tgt-vocab", D + "/tgt.vocab",
                                 "--out-dir", D + "/ckpt", "--epochs", "3"};
  for (const auto& p : pairs) {
    tr.insert(tr.end(), {"--pair", p + "=" + D + "/" + p + ".train.src," + D + "/" + p + ".train.tgt," + D +
                                       "/" + p + ".dev.src," + D + "/" + p + ".dev.tgt"});
  }
  step(tr);
  step({"translate", "--ckpt", D + "/ckpt/epoch_003.ckpt", "--src-vocab", D + "/src.vocab", "--tgt-vocab",
        D + "/tgt.vocab", "--input", D + "/l1-tg.test.src", "--output", D + "/hyp.txt"});
  if (out.ok) {
    std::ostringstream sink;
    auto* old = std::cout.rdbuf(sink.rdbuf());
    auto* old_err = std::cerr.rdbuf(sink.rdbuf());
    const int code = cli::run(std::vector<std::string>{"nmt", "--log-level", "off", "bleu", D + "/l1-tg.test.tgt",
                                                       "--hyp", D + "/hyp.txt"});
    std::cout.rdbuf(old);
    std::cerr.rdbuf(old_err);
    const auto text = sink.str();
    const auto at = text.find("BLEU = ");
    out.ok = code == 0 && at != std::string::npos;
    if (at != std::string::npos) out.bleu_line = text.substr(at, text.find('\n', at) - at);
  }
  for (int e = 1; e <= 3; ++e) out.checkpoint += slurp(dir / "ckpt" / fmt("epoch_%03d.ckpt", e));
  out.translation = slurp(dir / "hyp.txt");
  return out;
}

Outcome determinism() {
  const auto base = fs::temp_directory_path() / "mlnmt_acceptance";
  const auto a = run_pipeline(base / "run_a"), b = run_pipeline(base / "run_b");
  const bool same_ckpt = !a.checkpoint.empty() && a.checkpoint == b.checkpoint;
  const bool same_hyp = !a.translation.empty() && a.translation == b.translation;
  fs::remove_all(base);
  return {a.ok && b.ok && same_ckpt && same_hyp,
          fmt("pipelines %s; checkpoints %s (%zu bytes); translations %s; %s", a.ok && b.ok ? "ran" : "FAILED",
              same_ckpt ? "identical" : "differ", a.checkpoint.size(), same_hyp ? "identical" : "differ",
              a.bleu_line.c_str())};
}

// 12
Outcome self_training(const ToyData& d) {
  const auto c = toy_model(d);
  const auto real = concat_multilingual(d.train);
  const auto dev = concat_multilingual(d.dev);
  const auto base = train(real, dev, c, toy_train(20, 1));
  DecodeConfig dc;
  dc.beam = 4;
  std::vector<ParallelCorpus> pseudo_pairs;
  std::size_t lines = 0, accounted = 0;
  for (std::size_t k = 0; k < d.train.size(); ++k) {
    auto r = generate_pseudo(d.mono[k], base.best.front().params, dc, d.train[k].name,
                             d.train[k].source_lang, d.raw.target_lang);
    lines += d.mono[k].size();
    accounted += r.corpus.pairs.size() + r.dropped;
    pseudo_pairs.push_back(std::move(r.corpus));
  }
  const auto pseudo = concat_multilingual(pseudo_pairs);
  const std::size_t cap = 40;
  const auto mixed = mix_corpora(real, pseudo, cap);
  bool cap_ok = true;
  std::size_t expect_pseudo = 0;
  for (std::size_t k = 0; k < pseudo_pairs.size(); ++k) {
    const std::size_t want = std::min(cap, pseudo_pairs[k].pairs.size());
    expect_pseudo += want;
    std::size_t got = 0;
    for (const auto& p : mixed.pairs) got += p.origin == Provenance::pseudo && p.tag == static_cast<int>(k);
    cap_ok &= got == want;
  }
  const auto counts = count_provenance(mixed);
  const auto tags = provenance_lines(mixed);
  const bool reconcile = counts.real == real.size() && counts.pseudo == expect_pseudo &&
                         counts.real + counts.pseudo == mixed.size() && tags.size() == mixed.size() &&
                         lines == accounted;
  auto s1 = toy_train(20, 2);
  s1.mode = TrainMode::pseudo_mix;
  auto s2 = toy_train(10, 2);
  s2.mode = TrainMode::finetune_plain;
  const auto r = two_stage_schedule(mixed, real, dev, c, s1, s2);
  const bool improved = r.stage2_dev_loss <= r.stage1_dev_loss;
  return {cap_ok && reconcile && improved,
          fmt("mixed %zu real + %zu pseudo (cap %zu %s), provenance %s; real-dev loss stage 1 %.4f, stage 2 %.4f",
              counts.real, counts.pseudo, cap, cap_ok ? "honoured" : "VIOLATED", reconcile ? "reconciles" : "MISMATCH",
              r.stage1_dev_loss, r.stage2_dev_loss)};
}

}  // namespace

int main() {
  auto logger = spdlog::stderr_logger_st("acceptance");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::err);

  const ToyData toy_data = prepare_toy();
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient check", gradients},
      {"multilingual objective identity", [&] { return objective(toy_data); }},
      {"similarity score suite", similarity_suite},
      {"embedding shift suite", shift_suite},
      {"replacement contract", [&] { return replacement(toy_data); }},
      {"overfit copy task", overfit},
      {"toy multilingual gain", [&] { return multilingual_gain(toy_data); }},
      {"bpe oracle", bpe_oracle},
      {"bleu oracle", bleu_oracle},
      {"beam search", beam_checks},
      {"pipeline determinism", determinism},
      {"self-training pipeline", [&] { return self_training(toy_data); }},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << i + 1 << ' ' << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
