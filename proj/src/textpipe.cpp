#include "mlnmt/textpipe.hpp"

#include <algorithm>
#include <clocale>
#include <cwctype>
#include <istream>
#include <locale.h>
#include <ostream>
#include <set>
#include <sstream>
#include <tuple>

#include <spdlog/spdlog.h>

#include "mlnmt/util.hpp"

namespace mlnmt::textpipe {

namespace {

bool is_split_punct(char c) {
  switch (c) {
    case '.':
    case ',':
    case '!':
    case '?':
    case ';':
    case ':':
    case '"':
    case '(':
    case ')':
    case '[':
    case ']':
      return true;
    default:
      return false;
  }
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' || c == '\v'; }

// Decodes one code point starting at text[i] and advances i by its byte
// length. An invalid sequence consumes one byte (len = 1) and yields that byte.
char32_t decode_utf8(std::string_view text, std::size_t& i, std::size_t& len) {
  const auto b0 = static_cast<unsigned char>(text[i]);
  std::size_t need = 0;
  char32_t cp = b0;
  if ((b0 & 0xE0) == 0xC0) {
    need = 1;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    need = 2;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    need = 3;
    cp = b0 & 0x07;
  } else if (b0 >= 0x80) {
    len = 1;
    ++i;
    return b0;
  }
  for (std::size_t k = 1; k <= need; ++k) {
    const auto b = i + k < text.size() ? static_cast<unsigned char>(text[i + k]) : 0;
    if ((b & 0xC0) != 0x80) {
      len = 1;
      ++i;
      return b0;
    }
    cp = (cp << 6) | (b & 0x3F);
  }
  len = need + 1;
  i += len;
  return cp;
}

void encode_utf8(char32_t cp, std::string& out) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

locale_t utf8_locale() {
  static locale_t loc = [] {
    locale_t l = newlocale(LC_CTYPE_MASK, "C.UTF-8", static_cast<locale_t>(0));
    if (!l) l = newlocale(LC_CTYPE_MASK, "C.utf8", static_cast<locale_t>(0));
    return l;
  }();
  return loc;
}

}  // namespace

Tokens tokenize(std::string_view line) {
  Tokens out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) {
      out.push_back(std::move(current));
      current.clear();
    }
  };
  for (char c : line) {
    if (is_space(c)) {
      flush();
    } else if (is_split_punct(c)) {
      flush();
      out.emplace_back(1, c);
    } else {
      current.push_back(c);
    }
  }
  flush();
  return out;
}

std::string detokenize(std::span<const std::string> tokens) {
  std::string out;
  bool attach_next = true;  // no space before the first token
  bool quote_open = false;
  for (const auto& tok : tokens) {
    bool attach_prev = false;
    bool opens = false;
    if (tok.size() == 1) {
      const char c = tok[0];
      if (c == '.' || c == ',' || c == '!' || c == '?' || c == ';' || c == ':' || c == ')' ||
          c == ']') {
        attach_prev = true;
      } else if (c == '(' || c == '[') {
        opens = true;
      } else if (c == '"') {
        if (quote_open) {
          attach_prev = true;
        } else {
          opens = true;
        }
        quote_open = !quote_open;
      }
    }
    if (!attach_next && !attach_prev) out.push_back(' ');
    out += tok;
    attach_next = opens;
  }
  return out;
}

std::string to_lower(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  const locale_t loc = utf8_locale();
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t len = 0;
    const std::size_t start = i;
    const char32_t cp = decode_utf8(text, i, len);
    if (len == 1 && static_cast<unsigned char>(text[start]) >= 0x80) {
      out.push_back(text[start]);  // invalid byte: pass through
      continue;
    }
    char32_t lower = cp;
    if (cp < 0x80) {
      if (cp >= 'A' && cp <= 'Z') lower = cp + ('a' - 'A');
    } else if (loc) {
      lower = static_cast<char32_t>(towlower_l(static_cast<wint_t>(cp), loc));
    }
    encode_utf8(lower, out);
  }
  return out;
}

std::vector<std::string> utf8_chars(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const std::size_t start = i;
    std::size_t len = 0;
    decode_utf8(text, i, len);
    out.emplace_back(text.substr(start, len));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Truecasing

const CasingEntry* TruecaseModel::find(std::string_view lower) const {
  auto it = casing.find(std::string(lower));
  return it == casing.end() ? nullptr : &it->second;
}

TruecaseModel truecase_learn(std::span<const Tokens> corpus) {
  if (corpus.empty()) throw Error("truecase_learn: empty corpus");
  std::map<std::string, std::map<std::string, std::int64_t>> counts;
  for (const auto& line : corpus) {
    for (std::size_t i = 1; i < line.size(); ++i) {
      ++counts[to_lower(line[i])][line[i]];
    }
  }
  TruecaseModel model;
  for (const auto& [lower, forms] : counts) {
    // std::map iterates surfaces in ascending order, so strict > keeps the
    // lexicographically smallest among equally frequent forms.
    const std::pair<const std::string, std::int64_t>* best = nullptr;
    for (const auto& entry : forms) {
      if (!best || entry.second > best->second) best = &entry;
    }
    model.casing[lower] = CasingEntry{best->first, best->second};
  }
  return model;
}

Tokens truecase_apply(Tokens tokens, const TruecaseModel& model) {
  if (tokens.empty()) return tokens;
  if (const auto* entry = model.find(to_lower(tokens.front()))) tokens.front() = entry->surface;
  return tokens;
}

void save_truecase(const TruecaseModel& model, std::ostream& out) {
  for (const auto& [lower, entry] : model.casing) out << entry.surface << ' ' << entry.count << '\n';
}

TruecaseModel load_truecase(std::istream& in) {
  TruecaseModel model;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto sp = line.rfind(' ');
    if (sp == std::string::npos || sp == 0) {
      throw Error("truecase model line " + std::to_string(lineno) + ": expected 'surface count'");
    }
    CasingEntry entry{line.substr(0, sp), 0};
    try {
      entry.count = std::stoll(line.substr(sp + 1));
    } catch (const std::exception&) {
      throw Error("truecase model line " + std::to_string(lineno) + ": bad count");
    }
    if (entry.count <= 0) throw Error("truecase model line " + std::to_string(lineno) + ": count must be positive");
    model.casing[to_lower(entry.surface)] = std::move(entry);
  }
  return model;
}

// ---------------------------------------------------------------------------
// BPE learning

namespace {

using Merge = BpeCodes::Merge;

struct PairOrder {
  bool operator()(const std::pair<std::int64_t, Merge>& a,
                  const std::pair<std::int64_t, Merge>& b) const {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  }
};

class PairStats {
 public:
  void add(const Merge& pair, std::int64_t delta, std::size_t word) {
    auto& count = counts_[pair];
    if (count > 0) queue_.erase({count, pair});
    count += delta;
    if (count > 0) {
      queue_.insert({count, pair});
    }
    if (delta > 0) where_[pair].insert(word);
  }

  bool empty() const { return queue_.empty(); }
  const Merge& best() const { return queue_.begin()->second; }

  std::set<std::size_t> take_words(const Merge& pair) {
    auto it = where_.find(pair);
    if (it == where_.end()) return {};
    std::set<std::size_t> words = std::move(it->second);
    where_.erase(it);
    return words;
  }

 private:
  std::map<Merge, std::int64_t> counts_;
  std::set<std::pair<std::int64_t, Merge>, PairOrder> queue_;
  std::map<Merge, std::set<std::size_t>> where_;
};

std::vector<std::string> merge_symbols(const std::vector<std::string>& symbols, const Merge& m) {
  std::vector<std::string> out;
  out.reserve(symbols.size());
  for (std::size_t i = 0; i < symbols.size();) {
    if (i + 1 < symbols.size() && symbols[i] == m.first && symbols[i + 1] == m.second) {
      out.push_back(m.first + m.second);
      i += 2;
    } else {
      out.push_back(symbols[i]);
      ++i;
    }
  }
  return out;
}

std::vector<std::string> initial_symbols(std::string_view word) {
  auto symbols = utf8_chars(word);
  symbols.emplace_back(kEndOfWord);
  return symbols;
}

}  // namespace

BpeCodes bpe_learn(const std::map<std::string, std::int64_t>& word_counts,
                   std::size_t num_merges) {
  if (word_counts.empty()) throw Error("bpe_learn: empty word counts");
  std::vector<std::vector<std::string>> words;
  std::vector<std::int64_t> freqs;
  for (const auto& [word, count] : word_counts) {
    if (word.empty() || count <= 0) continue;
    words.push_back(initial_symbols(word));
    freqs.push_back(count);
  }
  if (words.empty()) throw Error("bpe_learn: no non-empty words with positive count");

  PairStats stats;
  auto account = [&](std::size_t w, std::int64_t sign) {
    const auto& s = words[w];
    for (std::size_t i = 0; i + 1 < s.size(); ++i) stats.add({s[i], s[i + 1]}, sign * freqs[w], w);
  };
  for (std::size_t w = 0; w < words.size(); ++w) account(w, +1);

  BpeCodes codes;
  while (codes.merges.size() < num_merges && !stats.empty()) {
    const Merge best = stats.best();
    codes.merges.push_back(best);
    for (std::size_t w : stats.take_words(best)) {
      account(w, -1);
      words[w] = merge_symbols(words[w], best);
      account(w, +1);
    }
  }
  return codes;
}

// ---------------------------------------------------------------------------
// BPE application

BpeApplier::BpeApplier(BpeCodes codes) : codes_(std::move(codes)) {
  for (std::size_t r = 0; r < codes_.merges.size(); ++r) rank_.emplace(codes_.merges[r], r);
}

Tokens BpeApplier::segment(std::string_view word) const {
  if (word.empty()) return {};
  auto symbols = initial_symbols(word);
  for (;;) {
    std::size_t best_rank = rank_.size();
    const Merge* best = nullptr;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto it = rank_.find({symbols[i], symbols[i + 1]});
      if (it != rank_.end() && it->second < best_rank) {
        best_rank = it->second;
        best = &it->first;
      }
    }
    if (!best) break;
    symbols = merge_symbols(symbols, *best);
  }
  auto& last = symbols.back();
  if (last == kEndOfWord) {
    symbols.pop_back();
  } else {
    last.resize(last.size() - kEndOfWord.size());
  }
  for (std::size_t i = 0; i + 1 < symbols.size(); ++i) symbols[i] += kContinuation;
  return symbols;
}

Tokens BpeApplier::apply(std::string_view word) {
  auto it = cache_.find(std::string(word));
  if (it != cache_.end()) return it->second;
  Tokens pieces = segment(word);
  cache_.emplace(std::string(word), pieces);
  return pieces;
}

Tokens BpeApplier::apply_sentence(std::span<const std::string> words) {
  Tokens out;
  for (const auto& w : words) {
    auto pieces = apply(w);
    out.insert(out.end(), pieces.begin(), pieces.end());
  }
  return out;
}

Tokens bpe_apply(std::string_view word, const BpeCodes& codes) {
  return BpeApplier(codes).apply(word);
}

Tokens bpe_undo(std::span<const std::string> subwords, bool* dangling) {
  Tokens out;
  std::string pending;
  bool open = false;
  for (const auto& piece : subwords) {
    const bool continues = piece.size() >= kContinuation.size() &&
                           piece.compare(piece.size() - kContinuation.size(),
                                         kContinuation.size(), kContinuation) == 0;
    if (continues) {
      pending.append(piece, 0, piece.size() - kContinuation.size());
      open = true;
    } else {
      pending += piece;
      out.push_back(std::move(pending));
      pending.clear();
      open = false;
    }
  }
  if (open) {
    spdlog::warn("bpe_undo: sentence ends with a continuation marker; keeping it");
    out.push_back(pending + std::string(kContinuation));
  }
  if (dangling) *dangling = open;
  return out;
}

void save_codes(const BpeCodes& codes, std::ostream& out) {
  out << "#version: 0.1\n";
  for (const auto& [left, right] : codes.merges) out << left << ' ' << right << '\n';
}

BpeCodes load_codes(std::istream& in) {
  BpeCodes codes;
  std::set<Merge> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 && !line.empty() && line[0] == '#') continue;
    if (line.empty()) continue;
    const auto sp = line.find(' ');
    if (sp == std::string::npos || sp == 0 || sp + 1 == line.size() ||
        line.find(' ', sp + 1) != std::string::npos) {
      throw Error("BPE codes line " + std::to_string(lineno) + ": expected 'LEFT RIGHT'");
    }
    Merge m{line.substr(0, sp), line.substr(sp + 1)};
    if (!seen.insert(m).second) {
      throw Error("BPE codes line " + std::to_string(lineno) + ": duplicate merge '" + line + "'");
    }
    codes.merges.push_back(std::move(m));
  }
  return codes;
}

}  // namespace mlnmt::textpipe
