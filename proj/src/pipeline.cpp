#include "mlnmt/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <map>

#include "mlnmt/util.hpp"

namespace mlnmt {

namespace {

std::vector<textpipe::Tokens> tokenize_all(std::span<const std::string> lines) {
  std::vector<textpipe::Tokens> out;
  out.reserve(lines.size());
  for (const auto& l : lines) out.push_back(textpipe::tokenize(l));
  return out;
}

void count_words(const std::vector<textpipe::Tokens>& lines, const textpipe::TruecaseModel& tc,
                 std::map<std::string, std::int64_t>& counts) {
  for (const auto& line : lines) {
    for (const auto& w : textpipe::truecase_apply(line, tc)) ++counts[w];
  }
}

std::ifstream open_in(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot open '" + p.string() + "' for reading");
  return in;
}

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot open '" + p.string() + "' for writing");
  return out;
}

}  // namespace

TextModels learn_text_models(std::span<const std::string> source_lines,
                             std::span<const std::string> target_lines, std::size_t merges) {
  const auto src = tokenize_all(source_lines);
  const auto tgt = tokenize_all(target_lines);
  TextModels m;
  m.source_truecase = textpipe::truecase_learn(src);
  m.target_truecase = textpipe::truecase_learn(tgt);
  std::map<std::string, std::int64_t> counts;
  count_words(src, m.source_truecase, counts);
  m.codes = textpipe::bpe_learn(counts, merges);
  return m;
}

void save_text_models(const TextModels& models, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path root(dir);
  auto s = open_out(root / "truecase.src");
  textpipe::save_truecase(models.source_truecase, s);
  auto t = open_out(root / "truecase.tgt");
  textpipe::save_truecase(models.target_truecase, t);
  auto c = open_out(root / "bpe.codes");
  textpipe::save_codes(models.codes, c);
}

TextModels load_text_models(const std::string& dir) {
  const std::filesystem::path root(dir);
  TextModels m;
  auto s = open_in(root / "truecase.src");
  m.source_truecase = textpipe::load_truecase(s);
  auto t = open_in(root / "truecase.tgt");
  m.target_truecase = textpipe::load_truecase(t);
  auto c = open_in(root / "bpe.codes");
  m.codes = textpipe::load_codes(c);
  return m;
}

TextPreparer::TextPreparer(const TextModels& models) : models_(models), bpe_(models.codes) {}

textpipe::Tokens TextPreparer::prepare(std::string_view line, Side side) {
  if (side == Side::target) {
    return textpipe::truecase_apply(textpipe::tokenize(line), models_.target_truecase);
  }
  return bpe_.apply_sentence(textpipe::truecase_apply(textpipe::tokenize(line), models_.source_truecase));
}

std::vector<textpipe::Tokens> TextPreparer::prepare(std::span<const std::string> lines, Side side) {
  std::vector<textpipe::Tokens> out;
  out.reserve(lines.size());
  for (const auto& l : lines) out.push_back(prepare(l, side));
  return out;
}

std::string postprocess(std::span<const std::string> subwords) {
  return textpipe::detokenize(textpipe::bpe_undo(subwords));
}

std::string join_tokens(std::span<const std::string> tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s += ' ';
    s += tokens[i];
  }
  return s;
}

ParallelCorpus encode_pair(const std::string& name, const std::string& source_lang,
                           const std::string& target_lang,
                           std::span<const textpipe::Tokens> source,
                           std::span<const textpipe::Tokens> target, const Vocab& source_vocab,
                           const Vocab& target_vocab) {
  if (source.size() != target.size()) {
    throw Error("pair '" + name + "': " + std::to_string(source.size()) + " source lines but " +
                std::to_string(target.size()) + " target lines");
  }
  ParallelCorpus c;
  c.name = name;
  c.source_lang = source_lang;
  c.target_lang = target_lang;
  for (std::size_t i = 0; i < source.size(); ++i) {
    SentencePair p;
    p.source = source_vocab.encode(source[i]);
    p.target = target_vocab.encode(target[i]);
    c.pairs.push_back(std::move(p));
  }
  return c;
}

}  // namespace mlnmt
