#pragma once

// INI-style configuration: [section] headers, key = value lines, '#' or ';'
// comments. Unknown sections or keys are rejected so typos surface early.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>

#include "mlnmt/decoder.hpp"
#include "mlnmt/model.hpp"
#include "mlnmt/raretoken.hpp"
#include "mlnmt/trainer.hpp"

namespace mlnmt {

using IniData = std::map<std::string, std::map<std::string, std::string>>;

IniData parse_ini(std::istream& in, const std::string& origin = "<config>");
IniData load_ini(const std::string& path);

struct ResolvedConfig {
  ModelConfig model;     // vocabulary sizes are filled in from the vocab files
  std::size_t vocab = 50000;
  std::size_t bpe_merges = 30000;
  TrainConfig train;
  std::size_t ft_epochs = 15;
  std::size_t k_anchor = 15000;
  raretoken::ScoreBand band;
  DecodeConfig decode;

  // Applies every key of `ini`; throws on unknown keys or bad values.
  void apply(const IniData& ini);
  // Single "section.key=value" override.
  void apply_override(const std::string& assignment);
  // Every field, INI formatted.
  void print(std::ostream& out) const;
};

}  // namespace mlnmt
