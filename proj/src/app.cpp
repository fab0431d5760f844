#include "mlnmt/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "mlnmt/checkpoint.hpp"
#include "mlnmt/config.hpp"
#include "mlnmt/corpus.hpp"
#include "mlnmt/decoder.hpp"
#include "mlnmt/eval.hpp"
#include "mlnmt/gradcheck.hpp"
#include "mlnmt/pipeline.hpp"
#include "mlnmt/selftrain.hpp"
#include "mlnmt/textpipe.hpp"
#include "mlnmt/toydata.hpp"
#include "mlnmt/trainer.hpp"

namespace fs = std::filesystem;

namespace mlnmt::cli {

namespace {

struct Global {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  std::string log_level = "info";
};

// Defaults < config file < NMT_SEED < command-line flags.
ResolvedConfig resolve(const Global& g) {
  ResolvedConfig cfg;
  if (!g.config.empty()) cfg.apply(load_ini(g.config));
  if (const char* env = std::getenv("NMT_SEED"); env && *env) cfg.apply_override(std::string("train.seed=") + env);
  for (const auto& s : g.sets) cfg.apply_override(s);
  if (g.seed) cfg.train.seed = *g.seed;
  return cfg;
}

std::vector<std::string> read_input(const std::string& path) {
  if (!path.empty() && path != "-") return read_lines(path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(std::cin, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

void write_output(const std::string& path, const std::vector<std::string>& lines) {
  if (!path.empty() && path != "-") {
    write_lines(path, lines);
    return;
  }
  for (const auto& l : lines) std::cout << l << '\n';
  std::cout.flush();
}

Vocab load_vocab(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open vocabulary '" + path + "'");
  return Vocab::load(in);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  return out;
}

struct PairSpec {
  std::string name;
  std::vector<std::string> files;
};

PairSpec parse_pair(const std::string& spec, std::size_t files) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw CLI::ValidationError("pair", "'" + spec + "' should look like NAME=FILE,...");
  }
  PairSpec p{spec.substr(0, eq), split(spec.substr(eq + 1), ',')};
  if (p.files.size() != files) {
    throw CLI::ValidationError("pair", "'" + spec + "' needs " + std::to_string(files) + " files");
  }
  return p;
}

std::string source_lang_of(const std::string& pair_name) {
  const auto dash = pair_name.find('-');
  return dash == std::string::npos ? pair_name : pair_name.substr(0, dash);
}

ParallelCorpus load_pair(const std::string& name, const std::string& src, const std::string& tgt,
                         const std::string& target_lang, const Vocab& sv, const Vocab& tv) {
  const auto s = split_lines(read_lines(src));
  const auto t = split_lines(read_lines(tgt));
  return encode_pair(name, source_lang_of(name), target_lang, s, t, sv, tv);
}

struct Data {
  MultilingualCorpus train;
  MultilingualCorpus dev;
};

Data load_data(const std::vector<std::string>& specs, const std::string& target_lang,
               const Vocab& sv, const Vocab& tv) {
  std::vector<ParallelCorpus> train, dev;
  for (const auto& spec : specs) {
    const auto p = parse_pair(spec, 4);
    train.push_back(load_pair(p.name, p.files[0], p.files[1], target_lang, sv, tv));
    dev.push_back(load_pair(p.name, p.files[2], p.files[3], target_lang, sv, tv));
  }
  return {concat_multilingual(train), concat_multilingual(dev)};
}

ModelConfig model_config(const ResolvedConfig& cfg, const Vocab& sv, const Vocab& tv) {
  ModelConfig m = cfg.model;
  m.source_vocab_size = sv.size();
  m.target_vocab_size = tv.size();
  m.validate();
  return m;
}

std::vector<std::vector<int>> encode_lines(const std::vector<std::string>& lines, const Vocab& v) {
  std::vector<std::vector<int>> out;
  for (const auto& toks : split_lines(lines)) out.push_back(v.encode(toks));
  return out;
}

// Decodes sentences across `threads` workers; output order follows input.
std::vector<Hypothesis> decode_all(const std::vector<std::vector<int>>& sources,
                                   const ModelParams& params, const DecodeConfig& dc,
                                   std::size_t threads) {
  std::vector<Hypothesis> out(sources.size());
  auto work = [&](std::size_t first, std::size_t stride) {
    for (std::size_t i = first; i < sources.size(); i += stride) {
      if (sources[i].empty()) continue;
      out[i] = translate(std::span(&sources[i], 1), params, dc).front();
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, sources.size()));
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
    for (auto& th : pool) th.join();
  }
  for (std::size_t i = 0; i < sources.size(); ++i) {
    if (sources[i].empty()) spdlog::warn("line {}: empty source, emitting an empty translation", i + 1);
  }
  return out;
}

std::string render(const Hypothesis& h, const Vocab& tv, bool subwords, bool detok) {
  const auto pieces = tv.decode(h.output());
  if (subwords) return join_tokens(pieces);
  const auto words = textpipe::bpe_undo(pieces);
  return detok ? textpipe::detokenize(words) : join_tokens(words);
}

void print_config(const ResolvedConfig& cfg, const std::string& command) {
  std::ostringstream s;
  s << "# resolved configuration for '" << command << "'\n";
  cfg.print(s);
  std::cerr << s.str();
  std::cerr.flush();
}

void setup_logging(const std::string& level) {
  auto logger = spdlog::get("nmt");
  if (!logger) logger = spdlog::stderr_logger_st("nmt");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::from_str(level));
}

}  // namespace

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

int run(int argc, const char* const* argv) {
  CLI::App app{"Many-to-one multilingual neural machine translation"};
  app.require_subcommand(1);
  app.fallthrough();
  Global g;
  app.add_option("--config", g.config, "INI config file with [model] [train] [raretoken] [decode]")
      ->check(CLI::ExistingFile);
  app.add_option("--set", g.sets, "Override one config value: section.key=value");
  app.add_option("--seed", g.seed, "Random seed (overrides config and NMT_SEED)");
  app.add_option("--threads", g.threads, "Decoding worker threads")->check(CLI::PositiveNumber);
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error, off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

  // toy-data
  auto* toy = app.add_subcommand("toy-data", "Write the synthetic multilingual corpus");
  std::string toy_out;
  toy::Options toy_opts;
  toy->add_option("--out", toy_out, "Output directory")->required();
  toy->add_option("--train", toy_opts.train, "Training pairs per language pair");
  toy->add_option("--dev", toy_opts.dev, "Dev pairs per language pair");
  toy->add_option("--test", toy_opts.test, "Test pairs per language pair");
  toy->add_option("--mono", toy_opts.mono, "Monolingual source lines per language");

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "Tokenize, truecase and apply or learn BPE");
  std::string pre_step, pre_in, pre_out, pre_model, pre_side = "src", pre_file;
  std::vector<std::string> pre_sources, pre_targets;
  pre->add_option("--step", pre_step, "Processing step")
      ->required()
      ->check(CLI::IsMember({"learn", "apply", "tokenize", "detokenize", "truecase-learn",
                             "truecase", "bpe-learn", "bpe-apply", "bpe-undo"}));
  pre->add_option("--input", pre_in, "Input file (default stdin)");
  pre->add_option("--output", pre_out, "Output file (default stdout)");
  pre->add_option("--model", pre_model, "Text model directory (learn, apply)");
  pre->add_option("--side", pre_side, "src or tgt (apply)")->check(CLI::IsMember({"src", "tgt"}));
  pre->add_option("--file", pre_file, "Truecase model or BPE codes file (single steps)");
  pre->add_option("--source", pre_sources, "Source training files (learn)");
  pre->add_option("--target", pre_targets, "Target training files (learn)");

  // vocab
  auto* voc = app.add_subcommand("vocab", "Build a vocabulary from tokenized files");
  std::vector<std::string> voc_in;
  std::string voc_out;
  std::optional<std::size_t> voc_cap;
  voc->add_option("--input", voc_in, "Tokenized files")->required();
  voc->add_option("--out", voc_out, "Vocabulary file")->required();
  voc->add_option("--cap", voc_cap, "Maximum size excluding specials (default model.vocab)");

  // train / finetune share data options
  struct TrainArgs {
    std::vector<std::string> pairs;
    std::string src_vocab, tgt_vocab, out_dir, target_lang = "tg", mode;
    std::optional<std::size_t> epochs;
  };
  TrainArgs ta, fa;
  auto add_train_args = [](CLI::App* sub, TrainArgs& a) {
    sub->add_option("--pair", a.pairs, "NAME=TRAIN_SRC,TRAIN_TGT,DEV_SRC,DEV_TGT (repeatable)")
        ->required();
    sub->add_option("--src-vocab", a.src_vocab, "Source vocabulary")->required();
    sub->add_option("--tgt-vocab", a.tgt_vocab, "Target vocabulary")->required();
    sub->add_option("--out-dir", a.out_dir, "Checkpoint directory")->required();
    sub->add_option("--target-lang", a.target_lang, "Target language code");
    sub->add_option("--epochs", a.epochs, "Epochs (overrides config)");
  };
  auto* tr = app.add_subcommand("train", "Train from scratch");
  add_train_args(tr, ta);
  tr->add_option("--mode", ta.mode, "baseline, multilingual or pseudo_mix")
      ->check(CLI::IsMember({"baseline", "multilingual", "pseudo_mix"}));

  auto* ft = app.add_subcommand("finetune", "Continue training from a checkpoint");
  add_train_args(ft, fa);
  std::string ft_init, ft_dump;
  std::vector<std::string> ft_anchor_a, ft_anchor_b;
  fa.mode = "plain";
  ft->add_option("--mode", fa.mode, "plain, similarity or shift")
      ->check(CLI::IsMember({"plain", "similarity", "shift"}));
  ft->add_option("--init", ft_init, "Starting checkpoint")->required()->check(CLI::ExistingFile);
  ft->add_option("--anchor-a", ft_anchor_a, "Source files whose every token is an anchor");
  ft->add_option("--anchor-b", ft_anchor_b, "Source files whose top-k tokens are anchors");
  ft->add_option("--dump-table", ft_dump, "Write the similarity table per epoch to PATH.<epoch>");

  // translate
  auto* trn = app.add_subcommand("translate", "Decode prepared source text");
  std::string trn_ckpt, trn_sv, trn_tv, trn_in, trn_out, trn_ref;
  std::optional<std::size_t> trn_beam, trn_max;
  std::optional<double> trn_alpha;
  bool trn_subwords = false, trn_detok = false, trn_sweep = false;
  trn->add_option("--ckpt", trn_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  trn->add_option("--src-vocab", trn_sv, "Source vocabulary")->required();
  trn->add_option("--tgt-vocab", trn_tv, "Target vocabulary")->required();
  trn->add_option("--input", trn_in, "Prepared source file (default stdin)");
  trn->add_option("--output", trn_out, "Output file (default stdout)");
  trn->add_option("--beam", trn_beam, "Beam size (1 = greedy)")->check(CLI::PositiveNumber);
  trn->add_option("--alpha", trn_alpha, "Length penalty exponent");
  trn->add_option("--max-len", trn_max, "Maximum output length");
  trn->add_flag("--subwords", trn_subwords, "Keep BPE segmentation in the output");
  trn->add_flag("--detokenize", trn_detok, "Detokenize the output");
  trn->add_flag("--alpha-sweep", trn_sweep, "Report BLEU for alpha 0.2, 0.4, 0.8 and 1.0");
  trn->add_option("--ref", trn_ref, "Tokenized reference (with --alpha-sweep)");

  // score
  auto* sc = app.add_subcommand("score", "BLEU of checkpoints under the five-best protocols");
  std::vector<std::string> sc_ckpts;
  std::string sc_sv, sc_tv, sc_in, sc_ref, sc_protocol = "both";
  sc->add_option("--ckpt", sc_ckpts, "Checkpoints")->required();
  sc->add_option("--src-vocab", sc_sv, "Source vocabulary")->required();
  sc->add_option("--tgt-vocab", sc_tv, "Target vocabulary")->required();
  sc->add_option("--input", sc_in, "Prepared source file")->required();
  sc->add_option("--ref", sc_ref, "Tokenized reference")->required();
  sc->add_option("--protocol", sc_protocol, "average_scores, average_weights or both")
      ->check(CLI::IsMember({"average_scores", "average_weights", "both"}));

  // bleu
  auto* bl = app.add_subcommand("bleu", "Corpus BLEU of stdin against a reference file");
  std::string bl_ref, bl_hyp;
  bool bl_lower = false;
  bl->add_option("reference", bl_ref, "Reference file")->required();
  bl->add_option("--hyp", bl_hyp, "Hypothesis file (default stdin)");
  bl->add_flag("--lowercase", bl_lower, "Case-insensitive comparison");

  // pseudo-gen
  auto* pg = app.add_subcommand("pseudo-gen", "Forward-translate monolingual source text");
  std::string pg_ckpt, pg_sv, pg_tv, pg_in, pg_prefix;
  pg->add_option("--ckpt", pg_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  pg->add_option("--src-vocab", pg_sv, "Source vocabulary")->required();
  pg->add_option("--tgt-vocab", pg_tv, "Target vocabulary")->required();
  pg->add_option("--input", pg_in, "Prepared monolingual source")->required();
  pg->add_option("--out-prefix", pg_prefix, "Writes PREFIX.src, PREFIX.tgt, PREFIX.meta")->required();

  // mix
  auto* mx = app.add_subcommand("mix", "Mix pseudo and real bitext");
  std::vector<std::string> mx_real, mx_pseudo;
  std::size_t mx_cap = 0;
  std::string mx_prefix;
  mx->add_option("--real", mx_real, "NAME=SRC,TGT (repeatable)")->required();
  mx->add_option("--pseudo", mx_pseudo, "NAME=SRC,TGT (repeatable)");
  mx->add_option("--cap", mx_cap, "Pseudo pairs kept per language pair")->required();
  mx->add_option("--out-prefix", mx_prefix, "Writes PREFIX.NAME.{src,tgt,meta}")->required();

  // avg-ckpt
  auto* av = app.add_subcommand("avg-ckpt", "Average checkpoint parameters");
  std::vector<std::string> av_in;
  std::string av_out;
  av->add_option("checkpoints", av_in, "Checkpoints")->required();
  av->add_option("--out", av_out, "Output checkpoint")->required();

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of model gradients");
  ModelGradCheckOptions gc_opts;
  double gc_tol = 1e-4;
  gc->add_option("--layers", gc_opts.layers);
  gc->add_option("--d-model", gc_opts.d_model);
  gc->add_option("--heads", gc_opts.heads);
  gc->add_option("--coords", gc_opts.coordinates);
  gc->add_option("--eps", gc_opts.eps);
  gc->add_option("--tolerance", gc_tol);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    setup_logging(g.log_level);
    ResolvedConfig cfg = resolve(g);
    const std::string command = app.get_subcommands().front()->get_name();

    if (*tr) {
      cfg.train.mode = ta.mode.empty() ? (ta.pairs.size() > 1 ? TrainMode::multilingual : TrainMode::baseline)
                                       : parse_train_mode(ta.mode);
      if (ta.epochs) cfg.train.epochs = *ta.epochs;
    }
    if (*ft) {
      cfg.train.mode = parse_train_mode("finetune_" + fa.mode);
      cfg.train.epochs = fa.epochs ? *fa.epochs : cfg.ft_epochs;
    }
    if (*trn) {
      if (trn_beam) cfg.decode.beam = *trn_beam;
      if (trn_alpha) cfg.decode.alpha = *trn_alpha;
      if (trn_max) cfg.decode.max_len = *trn_max;
    }
    print_config(cfg, command);

    if (*toy) {
      toy_opts.seed = cfg.train.seed;
      toy::write_corpus(toy::make_corpus(toy_opts), toy_out);
      return 0;
    }

    if (*pre) {
      if (pre_step == "learn") {
        if (pre_sources.empty() || pre_targets.empty() || pre_model.empty()) {
          throw CLI::ValidationError("--step learn", "needs --source, --target and --model");
        }
        std::vector<std::string> src, tgt;
        for (const auto& f : pre_sources) {
          auto l = read_lines(f);
          src.insert(src.end(), l.begin(), l.end());
        }
        for (const auto& f : pre_targets) {
          auto l = read_lines(f);
          tgt.insert(tgt.end(), l.begin(), l.end());
        }
        save_text_models(learn_text_models(src, tgt, cfg.bpe_merges), pre_model);
        return 0;
      }
      const auto lines = read_input(pre_in);
      std::vector<std::string> out;
      if (pre_step == "apply") {
        if (pre_model.empty()) throw CLI::ValidationError("--step apply", "needs --model");
        const TextModels models = load_text_models(pre_model);
        TextPreparer prep(models);
        const Side side = pre_side == "src" ? Side::source : Side::target;
        for (const auto& l : lines) out.push_back(join_tokens(prep.prepare(l, side)));
      } else if (pre_step == "tokenize") {
        for (const auto& l : lines) out.push_back(join_tokens(textpipe::tokenize(l)));
      } else if (pre_step == "detokenize") {
        for (const auto& t : split_lines(lines)) out.push_back(textpipe::detokenize(t));
      } else if (pre_step == "truecase-learn") {
        if (pre_file.empty()) throw CLI::ValidationError("--step truecase-learn", "needs --file");
        std::ofstream f(pre_file);
        if (!f) throw Error("cannot open '" + pre_file + "' for writing");
        textpipe::save_truecase(textpipe::truecase_learn(split_lines(lines)), f);
        return 0;
      } else if (pre_step == "truecase") {
        if (pre_file.empty()) throw CLI::ValidationError("--step truecase", "needs --file");
        std::ifstream f(pre_file);
        if (!f) throw Error("cannot open '" + pre_file + "'");
        const auto model = textpipe::load_truecase(f);
        for (auto& t : split_lines(lines)) out.push_back(join_tokens(textpipe::truecase_apply(std::move(t), model)));
      } else if (pre_step == "bpe-learn") {
        if (pre_file.empty()) throw CLI::ValidationError("--step bpe-learn", "needs --file");
        std::map<std::string, std::int64_t> counts;
        for (const auto& t : split_lines(lines)) {
          for (const auto& w : t) ++counts[w];
        }
        std::ofstream f(pre_file);
        if (!f) throw Error("cannot open '" + pre_file + "' for writing");
        textpipe::save_codes(textpipe::bpe_learn(counts, cfg.bpe_merges), f);
        return 0;
      } else if (pre_step == "bpe-apply") {
        if (pre_file.empty()) throw CLI::ValidationError("--step bpe-apply", "needs --file");
        std::ifstream f(pre_file);
        if (!f) throw Error("cannot open '" + pre_file + "'");
        textpipe::BpeApplier bpe(textpipe::load_codes(f));
        for (const auto& t : split_lines(lines)) out.push_back(join_tokens(bpe.apply_sentence(t)));
      } else {
        for (const auto& t : split_lines(lines)) out.push_back(join_tokens(textpipe::bpe_undo(t)));
      }
      write_output(pre_out, out);
      return 0;
    }

    if (*voc) {
      std::vector<std::vector<textpipe::Tokens>> corpora;
      for (const auto& f : voc_in) corpora.push_back(split_lines(read_lines(f)));
      const Vocab v = build_vocab(corpora, voc_cap ? *voc_cap : cfg.vocab);
      std::ofstream out(voc_out);
      if (!out) throw Error("cannot open '" + voc_out + "' for writing");
      v.save(out);
      spdlog::info("vocabulary of {} entries written to {}", v.size(), voc_out);
      return 0;
    }

    if (*tr || *ft) {
      TrainArgs& a = *tr ? ta : fa;
      const Vocab sv = load_vocab(a.src_vocab), tv = load_vocab(a.tgt_vocab);
      const ModelConfig mc = model_config(cfg, sv, tv);
      const Data data = load_data(a.pairs, a.target_lang, sv, tv);
      TrainConfig tc = cfg.train;
      tc.checkpoint_dir = a.out_dir;
      fs::create_directories(a.out_dir);
      std::ofstream log(fs::path(a.out_dir) / "train.log");
      std::optional<Checkpoint> start;
      RareTokenSetup rare;
      if (*ft) {
        start = load_checkpoint(ft_init, &mc);
        if (fa.mode != "plain") {
          if (ft_anchor_a.empty() && ft_anchor_b.empty()) {
            throw CLI::ValidationError("--mode " + fa.mode, "needs --anchor-a and/or --anchor-b");
          }
          std::vector<textpipe::Tokens> a_lines, b_lines;
          for (const auto& f : ft_anchor_a) {
            auto l = split_lines(read_lines(f));
            a_lines.insert(a_lines.end(), l.begin(), l.end());
          }
          for (const auto& f : ft_anchor_b) {
            auto l = split_lines(read_lines(f));
            b_lines.insert(b_lines.end(), l.begin(), l.end());
          }
          const AnchorSets anchors = build_anchor_sets(a_lines, b_lines, sv, cfg.k_anchor);
          const auto all = anchors.all();
          rare.anchors.assign(all.begin(), all.end());
          rare.rare = rare_tokens(sv, anchors);
          rare.band = cfg.band;
          rare.dump_path = ft_dump;
          spdlog::info("{} anchor tokens, {} rare tokens", rare.anchors.size(), rare.rare.size());
        }
      }
      const TrainResult r = train(data.train, data.dev, mc, tc, start ? &*start : nullptr,
                                  rare.anchors.empty() ? nullptr : &rare, &log);
      std::ofstream best(fs::path(a.out_dir) / "best.txt");
      char name[32];
      for (const auto& c : r.best) {
        std::snprintf(name, sizeof(name), "epoch_%03zu.ckpt", c.epoch);
        best << name << '\t' << c.dev_loss << '\n';
      }
      std::cout << "trained " << r.history.size() << " epochs; best dev loss "
                << r.best.front().dev_loss << " at epoch " << r.best.front().epoch << '\n';
      return 0;
    }

    if (*trn) {
      const Vocab sv = load_vocab(trn_sv), tv = load_vocab(trn_tv);
      const ModelConfig mc = model_config(cfg, sv, tv);
      const Checkpoint ckpt = load_checkpoint(trn_ckpt, &mc);
      const auto sources = encode_lines(read_input(trn_in), sv);
      if (trn_sweep) {
        if (trn_ref.empty()) throw CLI::ValidationError("--alpha-sweep", "needs --ref");
        const auto refs = split_lines(read_lines(trn_ref));
        for (double alpha : {0.2, 0.4, 0.8, 1.0}) {
          DecodeConfig dc = cfg.decode;
          dc.alpha = alpha;
          std::vector<textpipe::Tokens> hyps;
          for (const auto& h : decode_all(sources, ckpt.params, dc, g.threads)) {
            hyps.push_back(textpipe::bpe_undo(tv.decode(h.output())));
          }
          std::cout << "alpha=" << alpha << '\t' << bleu(hyps, refs).summary() << '\n';
        }
        return 0;
      }
      std::vector<std::string> out;
      for (const auto& h : decode_all(sources, ckpt.params, cfg.decode, g.threads)) {
        out.push_back(render(h, tv, trn_subwords, trn_detok));
      }
      write_output(trn_out, out);
      return 0;
    }

    if (*sc) {
      const Vocab sv = load_vocab(sc_sv), tv = load_vocab(sc_tv);
      const ModelConfig mc = model_config(cfg, sv, tv);
      std::vector<Checkpoint> ckpts;
      for (const auto& p : sc_ckpts) ckpts.push_back(load_checkpoint(p, &mc));
      TestSet test;
      test.sources = encode_lines(read_lines(sc_in), sv);
      test.references = split_lines(read_lines(sc_ref));
      test.target_vocab = &tv;
      if (sc_protocol != "average_weights") {
        const auto r = score_protocol(ckpts, test, Protocol::average_scores, cfg.decode);
        for (std::size_t i = 0; i < r.per_checkpoint.size(); ++i) {
          std::cout << sc_ckpts[i] << '\t' << r.per_checkpoint[i] << '\n';
        }
        std::cout << "average_scores\t" << r.bleu << '\n';
      }
      if (sc_protocol != "average_scores") {
        const auto r = score_protocol(ckpts, test, Protocol::average_weights, cfg.decode);
        std::cout << "average_weights\t" << r.bleu << '\n';
      }
      return 0;
    }

    if (*bl) {
      const auto refs = read_lines(bl_ref);
      const auto hyps = read_input(bl_hyp);
      std::cout << bleu_lines(hyps, refs, bl_lower).summary() << '\n';
      return 0;
    }

    if (*pg) {
      const Vocab sv = load_vocab(pg_sv), tv = load_vocab(pg_tv);
      const ModelConfig mc = model_config(cfg, sv, tv);
      const Checkpoint ckpt = load_checkpoint(pg_ckpt, &mc);
      const auto lines = read_lines(pg_in);
      const auto sources = encode_lines(lines, sv);
      const auto hyps = decode_all(sources, ckpt.params, cfg.decode, g.threads);
      std::vector<std::string> src_out, tgt_out, meta;
      std::size_t dropped = 0;
      for (std::size_t i = 0; i < hyps.size(); ++i) {
        const auto pieces = tv.decode(hyps[i].output());
        if (sources[i].empty() || pieces.empty()) {
          ++dropped;
          continue;
        }
        src_out.push_back(lines[i]);
        tgt_out.push_back(join_tokens(pieces));
        meta.emplace_back("pseudo");
      }
      write_lines(pg_prefix + ".src", src_out);
      write_lines(pg_prefix + ".tgt", tgt_out);
      write_lines(pg_prefix + ".meta", meta);
      if (!lines.empty() && 2 * dropped > lines.size()) {
        spdlog::warn("{} of {} pseudo outputs were empty", dropped, lines.size());
      }
      std::cout << "kept " << src_out.size() << " dropped " << dropped << '\n';
      return 0;
    }

    if (*mx) {
      // Sentences are carried as line indices so the text survives untouched.
      std::vector<std::string> src_text, tgt_text;
      auto gather = [&](const std::vector<std::string>& specs, Provenance origin) {
        std::vector<ParallelCorpus> corpora;
        for (const auto& spec : specs) {
          const auto p = parse_pair(spec, 2);
          const auto s = read_lines(p.files[0]);
          const auto t = read_lines(p.files[1]);
          if (s.size() != t.size()) throw Error("pair '" + p.name + "' has misaligned files");
          ParallelCorpus c;
          c.name = p.name;
          c.target_lang = "tg";
          for (std::size_t i = 0; i < s.size(); ++i) {
            const int id = static_cast<int>(src_text.size());
            src_text.push_back(s[i]);
            tgt_text.push_back(t[i]);
            c.pairs.push_back({0, {id}, {id}, origin});
          }
          corpora.push_back(std::move(c));
        }
        return concat_multilingual(corpora);
      };
      const auto real = gather(mx_real, Provenance::real);
      const auto pseudo = gather(mx_pseudo, Provenance::pseudo);
      const auto mixed = mix_corpora(real, pseudo, mx_cap);
      for (std::size_t tag = 0; tag < mixed.pair_names.size(); ++tag) {
        std::vector<std::string> s, t, m;
        for (const auto& p : mixed.pairs) {
          if (p.tag != static_cast<int>(tag)) continue;
          s.push_back(src_text[p.source[0]]);
          t.push_back(tgt_text[p.target[0]]);
          m.emplace_back(p.origin == Provenance::real ? "real" : "pseudo");
        }
        const std::string base = mx_prefix + "." + mixed.pair_names[tag];
        write_lines(base + ".src", s);
        write_lines(base + ".tgt", t);
        write_lines(base + ".meta", m);
      }
      const auto counts = count_provenance(mixed);
      std::cout << "real " << counts.real << " pseudo " << counts.pseudo << " total "
                << mixed.size() << '\n';
      return 0;
    }

    if (*av) {
      std::vector<Checkpoint> ckpts;
      for (const auto& p : av_in) {
        ckpts.push_back(ckpts.empty() ? load_checkpoint(p) : load_checkpoint(p, &ckpts.front().params.config));
      }
      Checkpoint out;
      out.params = average_checkpoints(ckpts);
      double dev = 0.0;
      for (const auto& c : ckpts) dev += c.dev_loss;
      out.dev_loss = dev / static_cast<double>(ckpts.size());
      save_checkpoint(out, av_out);
      return 0;
    }

    if (*gc) {
      gc_opts.seed = cfg.train.seed;
      const auto r = model_grad_check(gc_opts);
      std::cout << "max_rel_error=" << r.max_rel_error << " coordinates=" << r.coordinates
                << " tolerance=" << gc_tol << '\n';
      return r.max_rel_error < gc_tol ? 0 : 2;
    }
    return 1;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace mlnmt::cli
