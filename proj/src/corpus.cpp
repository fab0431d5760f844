#include "mlnmt/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "mlnmt/util.hpp"

namespace mlnmt {

namespace {

const char* const kSpecialTokens[kNumSpecials] = {"<pad>", "<s>", "</s>", "<unk>"};

std::vector<std::pair<std::string, std::int64_t>> rank_counts(
    const std::map<std::string, std::int64_t>& counts) {
  std::vector<std::pair<std::string, std::int64_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  return ranked;
}

}  // namespace

// ---------------------------------------------------------------------------
// Vocab

Vocab::Vocab() {
  for (int i = 0; i < kNumSpecials; ++i) {
    token_of_.emplace_back(kSpecialTokens[i]);
    counts_.push_back(0);
    id_of_.emplace(kSpecialTokens[i], i);
  }
}

Vocab Vocab::from_ranked(std::vector<std::pair<std::string, std::int64_t>> ranked) {
  Vocab v;
  for (auto& [token, count] : ranked) {
    if (v.id_of_.count(token)) throw Error("Vocab: duplicate token '" + token + "'");
    v.id_of_.emplace(token, static_cast<int>(v.token_of_.size()));
    v.token_of_.push_back(std::move(token));
    v.counts_.push_back(count);
  }
  return v;
}

int Vocab::id(std::string_view token) const {
  auto it = id_of_.find(std::string(token));
  return it == id_of_.end() ? kUnk : it->second;
}

bool Vocab::contains(std::string_view token) const { return id_of_.count(std::string(token)) > 0; }

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= token_of_.size()) {
    throw Error("Vocab: id " + std::to_string(id) + " out of range " + std::to_string(size()));
  }
  return token_of_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::encode(std::span<const std::string> tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

textpipe::Tokens Vocab::decode(std::span<const int> ids) const {
  textpipe::Tokens out;
  for (int id : ids) {
    if (id == kEos) break;
    if (id == kPad || id == kBos) continue;
    out.push_back(token(id));
  }
  return out;
}

void Vocab::save(std::ostream& out) const {
  for (std::size_t i = kNumSpecials; i < token_of_.size(); ++i) {
    out << token_of_[i] << '\t' << counts_[i] << '\n';
  }
}

Vocab Vocab::load(std::istream& in) {
  std::vector<std::pair<std::string, std::int64_t>> ranked;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw Error("vocab line " + std::to_string(lineno) + ": expected 'token<TAB>count'");
    }
    std::int64_t count = 0;
    try {
      count = std::stoll(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw Error("vocab line " + std::to_string(lineno) + ": bad count");
    }
    ranked.emplace_back(line.substr(0, tab), count);
  }
  return from_ranked(std::move(ranked));
}

Vocab build_vocab(std::span<const std::vector<textpipe::Tokens>> corpora, std::size_t cap) {
  std::map<std::string, std::int64_t> counts;
  std::size_t lines = 0;
  for (const auto& corpus : corpora) {
    for (const auto& line : corpus) {
      ++lines;
      for (const auto& tok : line) ++counts[tok];
    }
  }
  if (lines == 0) throw Error("build_vocab: empty corpora");
  for (const char* special : kSpecialTokens) counts.erase(special);
  auto ranked = rank_counts(counts);
  if (ranked.size() > cap) ranked.resize(cap);
  return Vocab::from_ranked(std::move(ranked));
}

// ---------------------------------------------------------------------------
// Anchors and rare tokens

std::set<int> AnchorSets::all() const {
  std::set<int> out = english;
  out.insert(french_top.begin(), french_top.end());
  return out;
}

AnchorSets build_anchor_sets(std::span<const textpipe::Tokens> english,
                             std::span<const textpipe::Tokens> french, const Vocab& vocab,
                             std::size_t k) {
  if (k == 0) throw Error("build_anchor_sets: k must be positive");
  AnchorSets anchors;
  anchors.k = k;
  for (const auto& line : english) {
    for (const auto& tok : line) {
      if (vocab.contains(tok)) {
        const int id = vocab.id(tok);
        if (!Vocab::is_special(id)) anchors.english.insert(id);
      }
    }
  }
  std::map<std::string, std::int64_t> french_counts;
  for (const auto& line : french) {
    for (const auto& tok : line) {
      if (vocab.contains(tok) && !Vocab::is_special(vocab.id(tok))) ++french_counts[tok];
    }
  }
  auto ranked = rank_counts(french_counts);
  for (std::size_t i = 0; i < ranked.size() && i < k; ++i) {
    anchors.french_top.insert(vocab.id(ranked[i].first));
  }
  return anchors;
}

std::vector<int> rare_tokens(const Vocab& vocab, const AnchorSets& anchors) {
  std::vector<int> rare;
  for (int id = kNumSpecials; id < static_cast<int>(vocab.size()); ++id) {
    if (!anchors.contains(id)) rare.push_back(id);
  }
  return rare;
}

// ---------------------------------------------------------------------------
// Corpora and batches

MultilingualCorpus MultilingualCorpus::subset(int tag) const {
  MultilingualCorpus out;
  out.pair_names = pair_names;
  out.pair_sizes.assign(pair_sizes.size(), 0);
  out.target_lang = target_lang;
  for (const auto& p : pairs) {
    if (p.tag != tag) continue;
    out.pairs.push_back(p);
    ++out.pair_sizes.at(static_cast<std::size_t>(tag));
  }
  return out;
}

MultilingualCorpus concat_multilingual(std::span<const ParallelCorpus> corpora) {
  MultilingualCorpus out;
  for (std::size_t m = 0; m < corpora.size(); ++m) {
    const auto& c = corpora[m];
    if (m == 0) {
      out.target_lang = c.target_lang;
    } else if (c.target_lang != out.target_lang) {
      throw Error("concat_multilingual: pair '" + c.name + "' targets '" + c.target_lang +
                  "' but the corpus targets '" + out.target_lang + "'");
    }
    out.pair_names.push_back(c.name);
    out.pair_sizes.push_back(c.pairs.size());
    for (const auto& p : c.pairs) {
      if (p.source.empty() || p.target.empty()) {
        throw Error("concat_multilingual: empty sentence in pair '" + c.name + "'");
      }
      SentencePair copy = p;
      copy.tag = static_cast<int>(m);
      out.pairs.push_back(std::move(copy));
    }
  }
  return out;
}

Batch make_batch(const MultilingualCorpus& corpus, std::span<const std::size_t> indices) {
  Batch b;
  b.size = indices.size();
  for (std::size_t idx : indices) {
    const auto& p = corpus.pairs.at(idx);
    b.source_len = std::max(b.source_len, p.source.size());
    b.target_len = std::max(b.target_len, p.target.size() + 1);
  }
  b.source.assign(b.size * b.source_len, kPad);
  b.target_in.assign(b.size * b.target_len, kPad);
  b.target_out.assign(b.size * b.target_len, kPad);
  for (std::size_t r = 0; r < b.size; ++r) {
    const auto& p = corpus.pairs[indices[r]];
    std::copy(p.source.begin(), p.source.end(), b.source.begin() + r * b.source_len);
    int* in = b.target_in.data() + r * b.target_len;
    int* out = b.target_out.data() + r * b.target_len;
    in[0] = kBos;
    for (std::size_t t = 0; t < p.target.size(); ++t) {
      in[t + 1] = p.target[t];
      out[t] = p.target[t];
    }
    out[p.target.size()] = kEos;
    b.source_lengths.push_back(p.source.size());
    b.target_lengths.push_back(p.target.size() + 1);
    b.tags.push_back(p.tag);
    b.indices.push_back(indices[r]);
  }
  return b;
}

namespace {

std::vector<Batch> cut(const MultilingualCorpus& corpus, const std::vector<std::size_t>& order,
                       std::size_t batch_size) {
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, order.size() - start);
    batches.push_back(make_batch(corpus, std::span(order).subspan(start, n)));
  }
  return batches;
}

}  // namespace

std::vector<Batch> make_batches(const MultilingualCorpus& corpus, std::size_t batch_size,
                                std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size == 0) throw Error("make_batches: batch_size must be positive");
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed, epoch);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng.below(i)]);
  }
  return cut(corpus, order, batch_size);
}

std::vector<Batch> make_ordered_batches(const MultilingualCorpus& corpus, std::size_t batch_size) {
  if (batch_size == 0) throw Error("make_ordered_batches: batch_size must be positive");
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  return cut(corpus, order, batch_size);
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "' for reading");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

void write_lines(const std::string& path, std::span<const std::string> lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  for (const auto& l : lines) out << l << '\n';
  if (!out) throw Error("write failed for '" + path + "'");
}

std::vector<textpipe::Tokens> split_lines(std::span<const std::string> lines) {
  std::vector<textpipe::Tokens> out;
  out.reserve(lines.size());
  for (const auto& l : lines) {
    textpipe::Tokens toks;
    std::istringstream in(l);
    std::string t;
    while (in >> t) toks.push_back(std::move(t));
    out.push_back(std::move(toks));
  }
  return out;
}

}  // namespace mlnmt
