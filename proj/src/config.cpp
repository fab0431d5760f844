#include "mlnmt/config.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "mlnmt/util.hpp"

namespace mlnmt {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw Error(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw Error(key + ": expected a number, got '" + v + "'");
  }
}

}  // namespace

IniData parse_ini(std::istream& in, const std::string& origin) {
  IniData data;
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']') throw Error(where + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw Error(where + ": empty section name");
      data[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(where + ": expected key = value");
    if (section.empty()) throw Error(where + ": key outside of any section");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw Error(where + ": empty key");
    data[section][key] = trim(line.substr(eq + 1));
  }
  return data;
}

IniData load_ini(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config '" + path + "'");
  return parse_ini(in, path);
}

void ResolvedConfig::apply(const IniData& ini) {
  for (const auto& [section, entries] : ini) {
    for (const auto& [key, value] : entries) {
      const std::string name = section + "." + key;
      if (section == "model") {
        if (key == "layers") model.num_layers = to_size(name, value);
        else if (key == "d_model") model.d_model = to_size(name, value);
        else if (key == "heads") model.num_heads = to_size(name, value);
        else if (key == "d_ff") model.d_ff = to_size(name, value);
        else if (key == "dropout") model.dropout = to_double(name, value);
        else if (key == "attn_scale") model.attn_scale = parse_attention_scale(value);
        else if (key == "max_len") model.max_len = to_size(name, value);
        else if (key == "vocab") vocab = to_size(name, value);
        else if (key == "bpe_merges") bpe_merges = to_size(name, value);
        else throw Error("unknown config key '" + name + "'");
      } else if (section == "train") {
        if (key == "epochs") train.epochs = to_size(name, value);
        else if (key == "ft_epochs") ft_epochs = to_size(name, value);
        else if (key == "lr") train.lr = to_double(name, value);
        else if (key == "finetune_lr") train.finetune_lr = to_double(name, value);
        else if (key == "batch") train.batch_size = to_size(name, value);
        else if (key == "seed") train.seed = to_size(name, value);
        else if (key == "mode") train.mode = parse_train_mode(value);
        else if (key == "max_len") train.max_len = to_size(name, value);
        else if (key == "warmup") train.warmup_steps = to_size(name, value);
        else if (key == "keep_best") train.keep_best = to_size(name, value);
        else if (key == "beta1") train.adam.beta1 = to_double(name, value);
        else if (key == "beta2") train.adam.beta2 = to_double(name, value);
        else if (key == "eps") train.adam.eps = to_double(name, value);
        else if (key == "label_smoothing") train.label_smoothing = to_double(name, value);
        else throw Error("unknown config key '" + name + "'");
      } else if (section == "raretoken") {
        if (key == "k_anchor") {
          k_anchor = to_size(name, value);
        } else if (key == "band") {
          const auto colon = value.find(':');
          if (colon == std::string::npos) throw Error(name + ": expected low:high");
          const double low = to_double(name, trim(value.substr(0, colon)));
          const double high = to_double(name, trim(value.substr(colon + 1)));
          if (!(low < high)) throw Error(name + ": low must be below high");
          band = {low, high};
        } else {
          throw Error("unknown config key '" + name + "'");
        }
      } else if (section == "decode") {
        if (key == "beam") decode.beam = to_size(name, value);
        else if (key == "alpha") decode.alpha = to_double(name, value);
        else if (key == "max_len") decode.max_len = to_size(name, value);
        else if (key == "length_penalty") {
          if (value == "gnmt") decode.penalty = LengthPenalty::gnmt;
          else if (value == "simple") decode.penalty = LengthPenalty::simple;
          else throw Error(name + ": expected gnmt or simple");
        } else {
          throw Error("unknown config key '" + name + "'");
        }
      } else {
        throw Error("unknown config section '" + section + "'");
      }
    }
  }
}

void ResolvedConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    throw Error("override '" + assignment + "' is not of the form section.key=value");
  }
  IniData one;
  one[trim(assignment.substr(0, dot))][trim(assignment.substr(dot + 1, eq - dot - 1))] =
      trim(assignment.substr(eq + 1));
  apply(one);
}

void ResolvedConfig::print(std::ostream& out) const {
  std::ostringstream s;
  s.precision(12);
  s << "[model]\n"
    << "layers = " << model.num_layers << "\n"
    << "d_model = " << model.d_model << "\n"
    << "heads = " << model.num_heads << "\n"
    << "d_ff = " << model.d_ff << "\n"
    << "dropout = " << model.dropout << "\n"
    << "attn_scale = " << to_string(model.attn_scale) << "\n"
    << "max_len = " << model.max_len << "\n"
    << "vocab = " << vocab << "\n"
    << "bpe_merges = " << bpe_merges << "\n"
    << "[train]\n"
    << "epochs = " << train.epochs << "\n"
    << "ft_epochs = " << ft_epochs << "\n"
    << "lr = " << train.lr << "\n"
    << "finetune_lr = " << train.finetune_lr << "\n"
    << "batch = " << train.batch_size << "\n"
    << "seed = " << train.seed << "\n"
    << "mode = " << to_string(train.mode) << "\n"
    << "max_len = " << train.max_len << "\n"
    << "warmup = " << train.warmup_steps << "\n"
    << "keep_best = " << train.keep_best << "\n"
    << "beta1 = " << train.adam.beta1 << "\n"
    << "beta2 = " << train.adam.beta2 << "\n"
    << "eps = " << train.adam.eps << "\n"
    << "label_smoothing = " << train.label_smoothing << "\n"
    << "[raretoken]\n"
    << "k_anchor = " << k_anchor << "\n"
    << "band = " << band.low << ":" << band.high << "\n"
    << "[decode]\n"
    << "beam = " << decode.beam << "\n"
    << "alpha = " << decode.alpha << "\n"
    << "max_len = " << decode.max_len << "\n"
    << "length_penalty = " << (decode.penalty == LengthPenalty::gnmt ? "gnmt" : "simple") << "\n";
  out << s.str();
}

}  // namespace mlnmt
