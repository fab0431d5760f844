#include "mlnmt/selftrain.hpp"

#include <algorithm>
#include <map>

#include <spdlog/spdlog.h>

namespace mlnmt {

PseudoResult generate_pseudo(std::span<const std::vector<int>> mono, const ModelParams& params,
                             const DecodeConfig& config, const std::string& name,
                             const std::string& source_lang, const std::string& target_lang) {
  PseudoResult r;
  r.corpus.name = name;
  r.corpus.source_lang = source_lang;
  r.corpus.target_lang = target_lang;
  for (const auto& src : mono) {
    if (src.empty()) {
      ++r.dropped;
      continue;
    }
    const Hypothesis h = config.beam == 1
                             ? greedy_decode(src, params, resolve_max_len(config, src.size(), params.config))
                             : beam_search(src, params, config);
    auto out = h.output();
    if (out.empty()) {
      ++r.dropped;
      continue;
    }
    const double ratio = static_cast<double>(out.size()) / static_cast<double>(src.size());
    if (ratio < 1.0 / 3.0 || ratio > 3.0) ++r.outliers;
    SentencePair p;
    p.source = src;
    p.target = std::move(out);
    p.origin = Provenance::pseudo;
    r.corpus.pairs.push_back(std::move(p));
  }
  if (!mono.empty()) {
    const double bad = static_cast<double>(r.dropped + r.outliers) / static_cast<double>(mono.size());
    if (bad > 0.5) {
      spdlog::warn("pseudo generation for '{}': {} of {} outputs empty or length outliers", name,
                   r.dropped + r.outliers, mono.size());
    }
  }
  spdlog::info("pseudo generation for '{}': kept {}, dropped {}", name, r.corpus.pairs.size(),
               r.dropped);
  return r;
}

MultilingualCorpus mix_corpora(const MultilingualCorpus& real, const MultilingualCorpus& pseudo,
                               std::size_t cap) {
  if (!pseudo.pairs.empty() && !real.pairs.empty() && pseudo.target_lang != real.target_lang) {
    throw Error("mix_corpora: real data targets '" + real.target_lang + "' but pseudo data targets '" +
                pseudo.target_lang + "'");
  }
  MultilingualCorpus out = real;
  for (auto& p : out.pairs) p.origin = Provenance::real;
  std::map<std::string, int> tag_of;
  for (std::size_t i = 0; i < out.pair_names.size(); ++i) tag_of[out.pair_names[i]] = static_cast<int>(i);
  std::vector<std::size_t> taken(pseudo.pair_names.size(), 0);
  for (const auto& p : pseudo.pairs) {
    const auto ptag = static_cast<std::size_t>(p.tag);
    if (ptag >= pseudo.pair_names.size()) throw Error("mix_corpora: pseudo pair has an invalid tag");
    if (taken[ptag] >= cap) continue;
    ++taken[ptag];
    const std::string& name = pseudo.pair_names[ptag];
    auto it = tag_of.find(name);
    if (it == tag_of.end()) {
      it = tag_of.emplace(name, static_cast<int>(out.pair_names.size())).first;
      out.pair_names.push_back(name);
      out.pair_sizes.push_back(0);
    }
    SentencePair copy = p;
    copy.tag = it->second;
    copy.origin = Provenance::pseudo;
    ++out.pair_sizes[static_cast<std::size_t>(copy.tag)];
    out.pairs.push_back(std::move(copy));
  }
  if (out.target_lang.empty()) out.target_lang = pseudo.target_lang;
  return out;
}

ProvenanceCounts count_provenance(const MultilingualCorpus& corpus) {
  ProvenanceCounts c;
  for (const auto& p : corpus.pairs) (p.origin == Provenance::real ? c.real : c.pseudo)++;
  return c;
}

std::vector<std::string> provenance_lines(const MultilingualCorpus& corpus) {
  std::vector<std::string> out;
  out.reserve(corpus.pairs.size());
  for (const auto& p : corpus.pairs) out.emplace_back(p.origin == Provenance::real ? "real" : "pseudo");
  return out;
}

TwoStageResult two_stage_schedule(const MultilingualCorpus& mixed, const MultilingualCorpus& real,
                                  const MultilingualCorpus& real_dev,
                                  const ModelConfig& model_config, const TrainConfig& stage1,
                                  const TrainConfig& stage2) {
  TwoStageResult r;
  r.stage1 = train(mixed, real_dev, model_config, stage1);
  const Checkpoint& start = r.stage1.best.front();
  r.stage2 = train(real, real_dev, model_config, stage2, &start);
  r.stage1_dev_loss = r.stage1.best.front().dev_loss;
  r.stage2_dev_loss = r.stage2.best.front().dev_loss;
  for (const auto& c : r.stage1.best) r.history.push_back({1, c});
  for (const auto& c : r.stage2.best) r.history.push_back({2, c});
  return r;
}

}  // namespace mlnmt
