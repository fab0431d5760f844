#include "mlnmt/eval.hpp"

#include <cmath>
#include <cstdio>
#include <map>

#include "mlnmt/textpipe.hpp"
#include "mlnmt/trainer.hpp"

namespace mlnmt {

double BleuReport::ratio() const {
  return reference_length == 0 ? 0.0
                               : static_cast<double>(candidate_length) /
                                     static_cast<double>(reference_length);
}

std::string BleuReport::summary() const {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "BLEU = %.2f, %.1f/%.1f/%.1f/%.1f (BP=%.3f, ratio=%.3f, hyp_len=%zu, ref_len=%zu)",
                bleu, 100.0 * precisions[0], 100.0 * precisions[1], 100.0 * precisions[2],
                100.0 * precisions[3], brevity_penalty, ratio(), candidate_length,
                reference_length);
  return buf;
}

namespace {

using Gram = std::vector<std::string>;

std::map<Gram, std::size_t> ngram_counts(const textpipe::Tokens& toks, std::size_t n) {
  std::map<Gram, std::size_t> counts;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    ++counts[Gram(toks.begin() + static_cast<std::ptrdiff_t>(i),
                  toks.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

}  // namespace

BleuReport bleu(std::span<const textpipe::Tokens> candidates,
                std::span<const textpipe::Tokens> references, bool lowercase) {
  if (candidates.size() != references.size()) {
    throw Error("bleu: " + std::to_string(candidates.size()) + " candidate lines but " +
                std::to_string(references.size()) + " reference lines");
  }
  BleuReport r;
  for (std::size_t line = 0; line < candidates.size(); ++line) {
    textpipe::Tokens cand = candidates[line], ref = references[line];
    if (lowercase) {
      for (auto& t : cand) t = textpipe::to_lower(t);
      for (auto& t : ref) t = textpipe::to_lower(t);
    }
    r.candidate_length += cand.size();
    r.reference_length += ref.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto cc = ngram_counts(cand, n);
      const auto rc = ngram_counts(ref, n);
      for (const auto& [gram, count] : cc) {
        auto it = rc.find(gram);
        if (it != rc.end()) r.matches[n - 1] += std::min(count, it->second);
      }
      r.totals[n - 1] += cand.size() >= n ? cand.size() - n + 1 : 0;
    }
  }
  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t n = 0; n < 4; ++n) {
    r.precisions[n] = r.totals[n] == 0 ? 0.0
                                       : static_cast<double>(r.matches[n]) /
                                             static_cast<double>(r.totals[n]);
    if (r.precisions[n] == 0.0) {
      zero = true;
    } else {
      log_sum += 0.25 * std::log(r.precisions[n]);
    }
  }
  if (r.candidate_length == 0) {
    r.brevity_penalty = 0.0;
  } else if (r.candidate_length < r.reference_length) {
    r.brevity_penalty = std::exp(1.0 - static_cast<double>(r.reference_length) /
                                           static_cast<double>(r.candidate_length));
  }
  r.bleu = zero ? 0.0 : 100.0 * r.brevity_penalty * std::exp(log_sum);
  return r;
}

BleuReport bleu_lines(std::span<const std::string> candidates,
                      std::span<const std::string> references, bool lowercase) {
  const auto c = split_lines(candidates);
  const auto r = split_lines(references);
  return bleu(c, r, lowercase);
}

std::string to_string(Protocol p) {
  return p == Protocol::average_scores ? "average_scores" : "average_weights";
}

Protocol parse_protocol(const std::string& name) {
  if (name == "average_scores") return Protocol::average_scores;
  if (name == "average_weights") return Protocol::average_weights;
  throw Error("unknown protocol '" + name + "' (expected average_scores or average_weights)");
}

std::vector<textpipe::Tokens> decode_to_tokens(const ModelParams& params, const TestSet& test,
                                               const DecodeConfig& config) {
  if (!test.target_vocab) throw Error("decode_to_tokens: test set has no target vocabulary");
  std::vector<textpipe::Tokens> out;
  out.reserve(test.sources.size());
  for (const auto& h : translate(test.sources, params, config)) {
    const auto subwords = test.target_vocab->decode(h.output());
    out.push_back(textpipe::bpe_undo(subwords));
  }
  return out;
}

ProtocolResult score_protocol(std::span<const Checkpoint> checkpoints, const TestSet& test,
                              Protocol protocol, const DecodeConfig& config) {
  if (checkpoints.empty()) throw Error("score_protocol: no checkpoints");
  ProtocolResult result;
  if (protocol == Protocol::average_scores) {
    double sum = 0.0;
    for (const auto& c : checkpoints) {
      const double b = bleu(decode_to_tokens(c.params, test, config), test.references).bleu;
      result.per_checkpoint.push_back(b);
      sum += b;
    }
    result.bleu = sum / static_cast<double>(checkpoints.size());
  } else {
    const ModelParams avg = average_checkpoints(checkpoints);
    result.bleu = bleu(decode_to_tokens(avg, test, config), test.references).bleu;
  }
  return result;
}

}  // namespace mlnmt
