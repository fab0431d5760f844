#pragma once

// Text preparation shared by the CLI and the end-to-end tests:
// tokenize -> truecase -> BPE on the way in, BPE undo -> detokenize on the
// way out. BPE codes are learned jointly over all source languages; the
// target side is only tokenized and truecased.

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mlnmt/corpus.hpp"
#include "mlnmt/textpipe.hpp"

namespace mlnmt {

struct TextModels {
  textpipe::TruecaseModel source_truecase;
  textpipe::TruecaseModel target_truecase;
  textpipe::BpeCodes codes;
};

TextModels learn_text_models(std::span<const std::string> source_lines,
                             std::span<const std::string> target_lines, std::size_t merges);

// Files: truecase.src, truecase.tgt, bpe.codes
void save_text_models(const TextModels& models, const std::string& dir);
TextModels load_text_models(const std::string& dir);

enum class Side { source, target };

class TextPreparer {
 public:
  explicit TextPreparer(const TextModels& models);

  textpipe::Tokens prepare(std::string_view line, Side side);
  std::vector<textpipe::Tokens> prepare(std::span<const std::string> lines, Side side);

 private:
  const TextModels& models_;
  textpipe::BpeApplier bpe_;
};

// BPE undo followed by detokenization.
std::string postprocess(std::span<const std::string> subwords);

std::string join_tokens(std::span<const std::string> tokens);

// Builds a corpus of one language pair from already prepared token lines.
ParallelCorpus encode_pair(const std::string& name, const std::string& source_lang,
                           const std::string& target_lang,
                           std::span<const textpipe::Tokens> source,
                           std::span<const textpipe::Tokens> target, const Vocab& source_vocab,
                           const Vocab& target_vocab);

}  // namespace mlnmt
