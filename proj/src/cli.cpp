#include "translico/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "translico/ablation.hpp"
#include "translico/corpus.hpp"
#include "translico/errors.hpp"
#include "translico/eval.hpp"
#include "translico/romanizer.hpp"
#include "translico/synthetic.hpp"
#include "translico/trainer.hpp"
#include "translico/vocab.hpp"

namespace translico {

namespace {

namespace fs = std::filesystem;

struct Globals {
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
};

std::uint64_t seed_or(const Globals& g, std::uint64_t fallback) { return g.seed.value_or(fallback); }

Romanizer make_romanizer(const std::string& rules_path, bool keep_case, const std::string& fallback) {
  RomanizeOptions opts;
  opts.keep_case = keep_case;
  opts.fallback = fallback == "escape" ? Fallback::Escape : Fallback::Drop;
  RuleSet rules = rules_path.empty() ? RuleSet::builtin() : load_rule_tables(rules_path);
  return Romanizer(std::move(rules), ScriptRangeTable::builtin(), opts);
}

void write_text(const std::string& path, const std::string& content, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << content;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f << content;
}

void write_json(const std::string& path, const nlohmann::json& j, std::ostream& out) {
  write_text(path, j.dump(2) + "\n", out);
}

std::vector<SentencePair> require_pairs(const std::string& path) {
  auto pairs = read_corpus(path);
  for (const auto& p : pairs) {
    if (!p.translit) throw FormatError(path + ": record " + p.id + " has no translit; run build-corpus first");
  }
  return pairs;
}

std::string version_text() {
  std::ostringstream s;
  s << "translico " << kVersion << "\n"
    << "corpus-jsonl 1\n"
    << "vocab-json 1\n"
    << "checkpoint translico-train/1\n"
    << "train-config 1\n"
    << "metrics-csv 1 (" << kMetricsHeader << ")\n"
    << "retrieval-report translico-retrieval/1\n"
    << "centroids-csv 1 (script_a,script_b,raw_cosine,display)\n"
    << "pca-csv 1 (sentence_id,script,pc1,pc2)\n"
    << "geometry-json translico-geometry/1\n"
    << "ablation-report translico-ablation/1\n";
  return s.str();
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Transliteration-contrastive training toolkit", "translico"};
  app.require_subcommand(0, 1);
  Globals g;
  bool show_version = false;
  app.add_flag("--version", show_version, "Print the version and output schema versions");
  app.add_option("--seed", g.seed, "Master seed; overrides config seeds");
  app.add_option("--threads", g.threads, "Worker threads for embedding (default 1)")->check(CLI::PositiveNumber);
  app.fallthrough();

  // romanize
  auto* rom = app.add_subcommand("romanize", "Romanize text line by line");
  std::string rom_in = "-", rom_out = "-", rom_rules, rom_fallback = "drop";
  bool rom_keep_case = false;
  rom->add_option("--input", rom_in, "Input text file ('-' for stdin)");
  rom->add_option("--output", rom_out, "Output file ('-' for stdout)");
  rom->add_option("--rules", rom_rules, "Rule table file (default: built-in tables)");
  rom->add_flag("--keep-case", rom_keep_case, "Preserve letter case");
  rom->add_option("--fallback", rom_fallback, "Unmatched codepoints: drop or escape")
      ->check(CLI::IsMember({"drop", "escape"}));

  // build-corpus
  auto* bc = app.add_subcommand("build-corpus", "Sample sentences and attach Latin transliterations");
  std::string bc_in, bc_out, bc_rules;
  double bc_fraction = 1.0;
  bool bc_no_latin = false, bc_declared = false;
  bc->add_option("--input", bc_in, "Sentence JSONL")->required();
  bc->add_option("--output", bc_out, "Pair JSONL")->required();
  bc->add_option("--fraction", bc_fraction, "Fraction sampled per (lang, script) stream")
      ->check(CLI::Range(0.0, 1.0));
  bc->add_option("--rules", bc_rules, "Rule table file");
  bc->add_flag("--no-latin", bc_no_latin, "Drop Latin-script sentences");
  bc->add_flag("--keep-declared-script", bc_declared, "Keep the script field from the input");

  // train-vocab
  auto* tv = app.add_subcommand("train-vocab", "Learn a byte-level BPE vocabulary");
  std::string tv_pairs, tv_out;
  std::size_t tv_size = 1024;
  tv->add_option("--pairs", tv_pairs, "Pair JSONL")->required();
  tv->add_option("--size", tv_size, "Target vocabulary size")->capture_default_str();
  tv->add_option("--out", tv_out, "Vocabulary JSON")->required();

  // train
  auto* tr = app.add_subcommand("train", "Train an encoder");
  std::string tr_config, tr_corpus, tr_out, tr_vocab, tr_resume;
  bool tr_clean = false;
  tr->add_option("--config", tr_config, "Train config JSON")->required();
  tr->add_option("--corpus", tr_corpus, "Pair JSONL")->required();
  tr->add_option("--out", tr_out, "Output directory")->required();
  tr->add_option("--vocab", tr_vocab, "Vocabulary JSON (default: learn one into <out>/vocab.json)");
  tr->add_option("--resume", tr_resume, "Checkpoint to resume from");
  tr->add_flag("--tcm-clean-forward", tr_clean, "Pool TCM representations from a separate unmasked pass");

  // ablate
  auto* ab = app.add_subcommand("ablate", "Run the six-cell ablation grid");
  std::string ab_config, ab_corpus, ab_out, ab_vocab, ab_eval;
  std::size_t ab_k = 10;
  ab->add_option("--config", ab_config, "Base train config JSON")->required();
  ab->add_option("--corpus", ab_corpus, "Pair JSONL")->required();
  ab->add_option("--out", ab_out, "Output directory")->required();
  ab->add_option("--vocab", ab_vocab, "Vocabulary JSON");
  ab->add_option("--eval-pairs", ab_eval, "Evaluation pair JSONL (default: the training corpus)");
  ab->add_option("--k", ab_k, "Retrieval cutoff")->capture_default_str()->check(CLI::PositiveNumber);

  // eval-retrieval
  auto* er = app.add_subcommand("eval-retrieval", "Cross-script top-k retrieval");
  std::string er_model, er_vocab, er_pairs, er_out = "-", er_rules;
  std::size_t er_k = 10, er_max = 500;
  int er_layer = -1;
  bool er_translit = false;
  er->add_option("--model", er_model, "Model checkpoint")->required();
  er->add_option("--vocab", er_vocab, "Vocabulary JSON")->required();
  er->add_option("--pairs", er_pairs, "Pair JSONL")->required();
  er->add_option("--k", er_k, "Retrieval cutoff")->capture_default_str()->check(CLI::PositiveNumber);
  er->add_option("--layer", er_layer, "Pooling layer (default: the model's)");
  er->add_option("--max-per-group", er_max, "Queries per script group, 0 for all")->capture_default_str();
  er->add_flag("--transliterate", er_translit, "Romanize queries before encoding");
  er->add_option("--rules", er_rules, "Rule table file for --transliterate");
  er->add_option("--out", er_out, "Report JSON ('-' for stdout)");

  // analyze-scripts
  auto* an = app.add_subcommand("analyze-scripts", "Script centroids, PCA and alignment/uniformity");
  std::string an_model, an_vocab, an_pairs, an_out = "analysis";
  int an_layer = -1;
  std::size_t an_max = 500;
  bool an_raw = false;
  an->add_option("--model", an_model, "Model checkpoint")->required();
  an->add_option("--vocab", an_vocab, "Vocabulary JSON")->required();
  an->add_option("--pairs", an_pairs, "Pair JSONL")->required();
  an->add_option("--layer", an_layer, "Pooling layer (default: the model's)");
  an->add_option("--out", an_out, "Output directory")->capture_default_str();
  an->add_option("--max-per-script", an_max, "Sentences per script, 0 for all")->capture_default_str();
  an->add_flag("--centroid-raw", an_raw, "Average unnormalized sentence vectors");

  // gen-synth
  auto* gs = app.add_subcommand("gen-synth", "Generate a synthetic cipher corpus");
  SyntheticSpec spec;
  std::string gs_out = "-";
  std::vector<std::string> gs_scripts = {"ToyA", "Latn"};
  gs->add_option("--out", gs_out, "Output JSONL ('-' for stdout)");
  gs->add_option("--count", spec.count, "Sentences")->capture_default_str();
  gs->add_option("--lexicon", spec.lexicon_size, "Lexicon size")->capture_default_str();
  gs->add_option("--min-words", spec.min_words, "Shortest sentence")->capture_default_str();
  gs->add_option("--max-words", spec.max_words, "Longest sentence")->capture_default_str();
  gs->add_option("--scripts", gs_scripts, "Scripts to emit (ToyA, ToyB, Latn)")->delimiter(',');

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const auto parsed = app.get_subcommands();
    err << (parsed.empty() ? app.help() : parsed.front()->help());
    return 2;
  }

  if (show_version) {
    out << version_text();
    return 0;
  }
  if (app.get_subcommands().empty()) {
    err << "error: a subcommand is required\n\n" << app.help();
    return 2;
  }
  CLI::App* sub = app.get_subcommands().front();

  try {
    if (sub == rom) {
      const Romanizer romanizer = make_romanizer(rom_rules, rom_keep_case, rom_fallback);
      std::ifstream file;
      std::istream* in = &std::cin;
      if (rom_in != "-") {
        file.open(rom_in, std::ios::binary);
        if (!file) throw IoError("cannot open " + rom_in);
        in = &file;
      }
      std::ostringstream buf;
      std::string line;
      RomanizeStats stats;
      while (std::getline(*in, line)) buf << romanizer.romanize(line, &stats) << '\n';
      write_text(rom_out, buf.str(), out);
      if (stats.unmatched > 0) err << "romanize: " << stats.unmatched << " unmatched codepoints\n";
    } else if (sub == bc) {
      if (!(bc_fraction > 0.0)) throw ConfigError("--fraction must be in (0, 1]");
      auto sentences = read_corpus(bc_in);
      if (bc_fraction < 1.0) sentences = sample_fraction(sentences, bc_fraction, seed_or(g, 0));
      const Romanizer romanizer = make_romanizer(bc_rules, false, "drop");
      BuildPairsStats stats;
      const auto pairs = build_pairs(sentences, romanizer, {!bc_no_latin, bc_declared}, &stats);
      write_corpus(bc_out, pairs);
      err << "build-corpus: " << pairs.size() << " pairs, " << stats.empty_skipped << " empty skipped, "
          << stats.latin_excluded << " Latin excluded, " << stats.unmatched_codepoints << " unmatched codepoints\n";
    } else if (sub == tv) {
      const Vocab vocab = train_vocab(require_pairs(tv_pairs), tv_size, seed_or(g, 0));
      vocab.save(tv_out);
      err << "train-vocab: " << vocab.size() << " tokens\n";
    } else if (sub == tr) {
      TrainConfig cfg = TrainConfig::load(tr_config);
      if (g.seed) cfg.seed = *g.seed;
      if (tr_clean) cfg.tcm_clean_forward = true;
      cfg.validate();
      const auto pairs = require_pairs(tr_corpus);
      fs::create_directories(tr_out);
      Vocab vocab;
      if (tr_vocab.empty()) {
        vocab = train_vocab(pairs, cfg.vocab_size, cfg.seed);
        vocab.save(fs::path(tr_out) / "vocab.json");
      } else {
        vocab = Vocab::load(tr_vocab);
      }
      TrainOptions opts;
      if (!tr_resume.empty()) opts.resume_from = tr_resume;
      opts.log = &err;
      const TrainReport report = train(cfg, pairs, vocab, tr_out, opts);
      err << "train: " << report.records.size() << " steps in " << report.wall_seconds << " s, model "
          << report.final_checkpoint.string() << '\n';
    } else if (sub == ab) {
      TrainConfig cfg = TrainConfig::load(ab_config);
      if (g.seed) cfg.seed = *g.seed;
      cfg.validate();
      const auto pairs = require_pairs(ab_corpus);
      const auto eval_pairs = ab_eval.empty() ? pairs : require_pairs(ab_eval);
      fs::create_directories(ab_out);
      Vocab vocab;
      if (ab_vocab.empty()) {
        vocab = train_vocab(pairs, cfg.vocab_size, cfg.seed);
        vocab.save(fs::path(ab_out) / "vocab.json");
      } else {
        vocab = Vocab::load(ab_vocab);
      }
      AblationOptions opts;
      opts.retrieval.k = ab_k;
      opts.retrieval.embed.threads = g.threads;
      opts.analysis.embed.threads = g.threads;
      opts.log = &err;
      const AblationReport report = run_ablation_grid(cfg, pairs, eval_pairs, vocab, ab_out, opts);
      const auto failed = std::count_if(report.cells.begin(), report.cells.end(), [](const auto& c) { return !c.ok; });
      err << "ablate: report at " << (fs::path(ab_out) / "ablation.json").string() << '\n';
      if (failed > 0) {
        err << "ablate: " << failed << " cell(s) failed\n";
        return 1;
      }
    } else if (sub == er) {
      const Encoder<float> model = load_encoder(er_model);
      const Vocab vocab = Vocab::load(er_vocab);
      const auto pairs = require_pairs(er_pairs);
      RetrievalOptions opts;
      opts.k = er_k;
      opts.max_per_group = er_max;
      opts.embed.pool_layer = er_layer;
      opts.embed.threads = g.threads;
      std::optional<Romanizer> romanizer;
      if (er_translit) {
        romanizer.emplace(make_romanizer(er_rules, false, "drop"));
        opts.transliterate = &*romanizer;
      }
      write_json(er_out, evaluate_retrieval(model, vocab, pairs, opts).to_json(), out);
    } else if (sub == an) {
      const Encoder<float> model = load_encoder(an_model);
      const Vocab vocab = Vocab::load(an_vocab);
      const auto pairs = require_pairs(an_pairs);
      AnalysisOptions opts;
      opts.embed.pool_layer = an_layer;
      opts.embed.threads = g.threads;
      opts.centroid_raw = an_raw;
      opts.max_per_script = an_max;
      const ScriptAnalysis analysis = analyze_scripts(model, vocab, pairs, opts);
      write_analysis(analysis, an_out);
      if (analysis.pca.rank_deficient) err << "analyze-scripts: warning: PCA covariance is rank deficient\n";
    } else if (sub == gs) {
      spec.seed = seed_or(g, 0);
      spec.scripts.clear();
      for (const auto& s : gs_scripts) {
        const auto tag = parse_script_tag(s);
        if (!tag) throw ConfigError("unknown script '" + s + "'");
        spec.scripts.push_back(*tag);
      }
      std::ostringstream buf;
      for (const auto& r : gen_synthetic(spec)) buf << to_jsonl_line(r) << '\n';
      write_text(gs_out, buf.str(), out);
    }
  } catch (const std::exception& e) {
    err << sub->get_name() << ": " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace translico
