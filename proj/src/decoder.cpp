#include "mlnmt/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

namespace mlnmt {

double length_penalty(std::size_t n, double alpha, LengthPenalty kind) {
  const double len = static_cast<double>(n);
  return kind == LengthPenalty::gnmt ? std::pow((5.0 + len) / 6.0, alpha) : std::pow(len, alpha);
}

std::vector<int> Hypothesis::output() const {
  std::vector<int> out;
  for (std::size_t i = 1; i < tokens.size(); ++i) {
    if (tokens[i] == kEos) break;
    out.push_back(tokens[i]);
  }
  return out;
}

bool emittable(int id) { return id != kPad && id != kBos; }

struct StepScorer::Impl {
  const ModelParams& params;
  Tape<float> tape{false};
  TransformerWeights<Var<float>> w;
  Tensor<float> memory;
  std::size_t source_len = 0;
  std::size_t mark = 0;

  Impl(const ModelParams& p, std::span<const int> source) : params(p), source_len(source.size()) {
    w = bind(tape, params, false);
    memory = encode(w, params.config, source, 1, source.size(), {source.size()}).value();
    mark = tape.size();
  }
};

StepScorer::StepScorer(const ModelParams& params, std::span<const int> source_ids) {
  if (source_ids.empty()) throw Error("decode: empty source sentence");
  impl_ = std::make_unique<Impl>(params, source_ids);
}

StepScorer::~StepScorer() = default;

std::vector<std::vector<double>> StepScorer::next_log_probs(
    const std::vector<std::vector<int>>& prefixes) {
  if (prefixes.empty()) return {};
  const std::size_t b = prefixes.size(), t = prefixes.front().size();
  std::vector<int> ids;
  ids.reserve(b * t);
  for (const auto& p : prefixes) {
    if (p.size() != t || p.empty() || p.front() != kBos) {
      throw Error("StepScorer: prefixes must be BOS-first and of equal length");
    }
    ids.insert(ids.end(), p.begin(), p.end());
  }
  auto& im = *impl_;
  const std::size_t s = im.source_len, d = im.memory.cols();
  Tensor<float> tiled = Tensor<float>::matrix(b * s, d);
  for (std::size_t r = 0; r < b; ++r) {
    std::copy(im.memory.data(), im.memory.data() + s * d, tiled.data() + r * s * d);
  }
  Var<float> mem = im.tape.constant(std::move(tiled));
  Var<float> logits = decode(im.w, im.params.config, mem, s, std::vector<std::size_t>(b, s), ids,
                             b, t);
  std::vector<std::vector<double>> out;
  out.reserve(b);
  for (std::size_t r = 0; r < b; ++r) {
    out.push_back(log_softmax_row<float>(logits.value().row(r * t + t - 1)));
  }
  im.tape.truncate(im.mark);
  return out;
}

std::size_t resolve_max_len(const DecodeConfig& config, std::size_t source_len,
                            const ModelConfig& model) {
  if (config.max_len > 0) return std::min(config.max_len, model.max_len);
  return std::min(2 * source_len + 10, model.max_len);
}

Hypothesis greedy_decode(std::span<const int> source_ids, const ModelParams& params,
                         std::size_t max_len) {
  if (source_ids.empty()) throw Error("greedy_decode: empty source sentence");
  max_len = std::min(max_len, params.config.max_len);
  Hypothesis h;
  h.tokens = {kBos};
  if (max_len == 0) return h;
  StepScorer scorer(params, source_ids);
  for (std::size_t step = 0; step < max_len; ++step) {
    const auto lp = scorer.next_log_probs({h.tokens}).front();
    int best = -1;
    for (int v = 0; v < static_cast<int>(lp.size()); ++v) {
      if (emittable(v) && (best < 0 || lp[v] > lp[best])) best = v;
    }
    h.tokens.push_back(best);
    h.log_prob += lp[best];
    if (best == kEos) {
      h.finished = true;
      break;
    }
  }
  return h;
}

namespace {

struct Partial {
  std::vector<int> tokens;
  double log_prob;
};

bool better_final(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.tokens < b.tokens;
}

}  // namespace

Hypothesis beam_search(std::span<const int> source_ids, const ModelParams& params,
                       const DecodeConfig& config) {
  if (source_ids.empty()) throw Error("beam_search: empty source sentence");
  if (config.beam == 0) throw Error("beam_search: beam must be at least 1");
  if (!(config.alpha >= 0.0)) throw Error("beam_search: alpha must be non-negative");
  const std::size_t max_len = resolve_max_len(config, source_ids.size(), params.config);

  auto finish = [&](std::vector<int> tokens, double lp, bool done) {
    Hypothesis h;
    h.tokens = std::move(tokens);
    h.log_prob = lp;
    h.finished = done;
    const std::size_t n = h.generated();
    h.score = n == 0 ? lp : lp / length_penalty(n, config.alpha, config.penalty);
    return h;
  };

  if (max_len == 0) return finish({kBos}, 0.0, false);

  StepScorer scorer(params, source_ids);
  std::vector<Partial> live{{{kBos}, 0.0}};
  std::vector<Hypothesis> pool;
  for (std::size_t step = 0; step < max_len && !live.empty(); ++step) {
    std::vector<std::vector<int>> prefixes;
    prefixes.reserve(live.size());
    for (const auto& p : live) prefixes.push_back(p.tokens);
    const auto lps = scorer.next_log_probs(prefixes);

    // (log_prob, token, parent)
    std::vector<std::tuple<double, int, std::size_t>> cand;
    for (std::size_t p = 0; p < live.size(); ++p) {
      for (int v = 0; v < static_cast<int>(lps[p].size()); ++v) {
        if (emittable(v)) cand.emplace_back(live[p].log_prob + lps[p][v], v, p);
      }
    }
    const std::size_t keep = std::min(config.beam, cand.size());
    std::partial_sort(cand.begin(), cand.begin() + keep, cand.end(), [](const auto& a, const auto& b) {
      if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
      if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
      return std::get<2>(a) < std::get<2>(b);
    });
    std::vector<Partial> next;
    for (std::size_t i = 0; i < keep; ++i) {
      const auto& [lp, v, p] = cand[i];
      std::vector<int> tokens = live[p].tokens;
      tokens.push_back(v);
      if (v == kEos) {
        pool.push_back(finish(std::move(tokens), lp, true));
      } else {
        next.push_back({std::move(tokens), lp});
      }
    }
    live = std::move(next);
  }
  for (auto& p : live) pool.push_back(finish(std::move(p.tokens), p.log_prob, false));
  return *std::min_element(pool.begin(), pool.end(), better_final);
}

std::vector<Hypothesis> translate(std::span<const std::vector<int>> sources,
                                  const ModelParams& params, const DecodeConfig& config) {
  std::vector<Hypothesis> out;
  out.reserve(sources.size());
  for (const auto& src : sources) {
    if (config.beam == 1) {
      out.push_back(greedy_decode(src, params, resolve_max_len(config, src.size(), params.config)));
    } else {
      out.push_back(beam_search(src, params, config));
    }
  }
  return out;
}

double rescore(std::span<const int> source_ids, std::span<const int> tokens,
               const ModelParams& params) {
  if (tokens.empty() || tokens.front() != kBos) throw Error("rescore: tokens must start with BOS");
  if (tokens.size() == 1) return 0.0;
  const std::vector<int> src(source_ids.begin(), source_ids.end());
  const std::vector<int> prefix(tokens.begin(), tokens.end() - 1);
  const Tensor<float> logits = forward(src, prefix, params);
  double total = 0.0;
  for (std::size_t t = 0; t + 1 < tokens.size(); ++t) {
    total += log_softmax_row<float>(logits.row(t))[static_cast<std::size_t>(tokens[t + 1])];
  }
  return total;
}

}  // namespace mlnmt
