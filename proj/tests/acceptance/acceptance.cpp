// Prints one PASS/FAIL line per acceptance criterion and exits non-zero if
// any criterion fails. `acceptance 2 5` runs a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "../oracles.hpp"
#include "../test_util.hpp"
#include "translico/ablation.hpp"
#include "translico/errors.hpp"
#include "translico/eval.hpp"
#include "translico/objectives.hpp"
#include "translico/optim.hpp"
#include "translico/synthetic.hpp"
#include "translico/trainer.hpp"
#include "translico/unicode.hpp"

using namespace translico;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
  void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

std::string num(double v, int digits = 6) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Tensor<double> rows_tensor(const oracle::Rows& r) {
  std::vector<double> v;
  for (const auto& row : r) v.insert(v.end(), row.begin(), row.end());
  return Tensor<double>::from({r.size(), r.front().size()}, v);
}

Matrix rows_matrix(const oracle::Rows& r) {
  Matrix m(r.size(), r.front().size());
  for (std::size_t i = 0; i < r.size(); ++i)
    for (std::size_t j = 0; j < r[i].size(); ++j) m(i, j) = r[i][j];
  return m;
}

oracle::Rows random_rows(std::mt19937_64& gen, std::size_t n, std::size_t d) {
  std::normal_distribution<double> nd;
  oracle::Rows r(n, std::vector<double>(d));
  for (auto& row : r)
    for (auto& x : row) x = nd(gen);
  return r;
}

std::vector<std::size_t> halves(std::size_t n) {
  std::vector<std::size_t> p(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    p[i] = i + n;
    p[i + n] = i;
  }
  return p;
}

TokenSequence token_seq(std::mt19937_64& gen, std::size_t content, std::size_t len, TokenId vocab) {
  TokenSequence s;
  s.ids.push_back(Vocab::kCls);
  s.roles.push_back(Role::Cls);
  for (std::size_t i = 0; i < content; ++i) {
    s.ids.push_back(static_cast<TokenId>(Vocab::kNumSpecials + gen() % (vocab - Vocab::kNumSpecials)));
    s.roles.push_back(Role::Content);
  }
  s.ids.push_back(Vocab::kSep);
  s.roles.push_back(Role::Sep);
  while (s.size() < len) {
    s.ids.push_back(Vocab::kPad);
    s.roles.push_back(Role::Pad);
  }
  return s;
}

Outcome gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  TrainConfig cfg;
  cfg.model.d_model = 16;
  cfg.model.n_layers = 2;
  cfg.model.n_heads = 2;
  cfg.model.d_ff = 32;
  cfg.model.vocab_size = 50;
  cfg.model.max_len = 16;
  cfg.model.pool_layer = ModelConfig::default_pool_layer(2);
  cfg.weights = {1, 1, 1};
  cfg.batch_pairs = 2;
  cfg.mask_rate = 0.3;

  std::mt19937_64 gen(21);
  std::vector<EncodedPair> pool;
  for (std::size_t i = 0; i < 2; ++i) pool.push_back({token_seq(gen, 5 + i, 12, 50), token_seq(gen, 7 - i, 12, 50)});
  Rng rng(4);
  const TrainingBatch batch = make_batch(pool, cfg, 50, rng);
  Encoder<double> enc(cfg.model, 9);
  auto f = [&] { return batch_losses(enc, batch, pool, cfg).total; };
  const GradCheckResult r = finite_diff_check(f, enc.params().tensors(), 1e-4);
  const double secs = seconds_since(t0);
  o.note("max rel error " + num(r.max_rel_error, 3) + " over " + std::to_string(r.checked) + " entries (worst " +
         enc.params().names()[r.param_index] + "[" + std::to_string(r.element) + "] analytic " + num(r.analytic, 8) +
         " numeric " + num(r.numeric, 8) + "), " + num(secs, 3) + " s");
  o.require(r.max_rel_error <= 1e-4, "relative error above 1e-4");
  o.require(secs <= 60.0, "runtime above 60 s");
  return o;
}

Outcome tcm_closed_forms() {
  Outcome o;
  const double n1 = tcm_loss(Tensor<double>::from({2, 3}, {0.3, -1, 2, 1, 1, 0.5}), halves(1), 1.0).item();
  o.note("N=1 " + num(n1, 3));
  o.require(std::abs(n1) <= 1e-12, "N=1 loss not 0");
  const auto same = Tensor<double>::from({4, 2}, {0.6, 0.8, 0.6, 0.8, 0.6, 0.8, 0.6, 0.8});
  const double ident = tcm_loss(same, halves(2), 1.0).item();
  o.note("identical |diff| " + num(std::abs(ident - std::log(3.0)), 3));
  o.require(std::abs(ident - std::log(3.0)) <= 1e-9, "identical representations not ln 3");
  std::mt19937_64 gen(6);
  const auto r = random_rows(gen, 8, 6);
  const double hot = tcm_loss(rows_tensor(r), halves(4), 1e6).item();
  o.note("tau=1e6 |diff| " + num(std::abs(hot - std::log(7.0)), 3));
  o.require(std::abs(hot - std::log(7.0)) <= 1e-3, "tau limit not ln(2N-1)");
  return o;
}

Outcome oracle_equivalence() {
  Outcome o;
  std::mt19937_64 gen(1234);
  double worst_tcm = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 1 + gen() % 8, d = 1 + gen() % 32;
    const auto r = random_rows(gen, 2 * n, d);
    std::vector<std::size_t> order(2 * n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), gen);
    std::vector<std::size_t> pair_of(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
      pair_of[order[2 * i]] = order[2 * i + 1];
      pair_of[order[2 * i + 1]] = order[2 * i];
    }
    const double tau = 0.05 + 2.0 * std::uniform_real_distribution<double>()(gen);
    worst_tcm = std::max(worst_tcm, std::abs(tcm_loss(rows_tensor(r), pair_of, tau).item() -
                                             oracle::tcm_loss(r, pair_of, tau)));
  }
  o.note("tcm max diff " + num(worst_tcm, 3));
  o.require(worst_tcm <= 1e-10, "tcm_loss differs from the oracle");

  std::size_t retrieval_mismatch = 0;
  for (int t = 0; t < 100; ++t) {
    auto q = random_rows(gen, 20, 8);
    auto c = random_rows(gen, 20, 8);
    if (t % 4 == 0) c[17] = c[3];  // exact ties
    std::vector<std::size_t> gold(20);
    for (auto& g : gold) g = gen() % 20;
    const std::size_t k = 1 + gen() % 20;
    if (retrieval_topk(rows_matrix(q), rows_matrix(c), gold, k).accuracy != oracle::retrieval_accuracy(q, c, gold, k)) {
      ++retrieval_mismatch;
    }
  }
  o.note("retrieval mismatches " + std::to_string(retrieval_mismatch) + "/100");
  o.require(retrieval_mismatch == 0, "retrieval_topk differs from the full-sort oracle");

  double worst_geo = 0.0;
  for (int t = 0; t < 20; ++t) {
    const auto h = random_rows(gen, 24, 1 + gen() % 16);
    std::vector<std::string> tags(24);
    for (auto& s : tags) s = std::string(1, static_cast<char>('A' + gen() % 4));
    tags[0] = "A";
    tags[1] = "B";
    for (bool norm : {true, false}) {
      const auto m = script_centroids(rows_matrix(h), tags, norm);
      const auto want = oracle::centroid_cosines(h, tags, norm);
      for (std::size_t a = 0; a < want.size(); ++a)
        for (std::size_t b = 0; b < want.size(); ++b)
          worst_geo = std::max(worst_geo, std::abs(m.raw(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) -
                                                   want[a][b]));
    }
    const auto pair_of = halves(12);
    const auto g = alignment_uniformity(rows_matrix(h), pair_of);
    worst_geo = std::max(worst_geo, std::abs(g.alignment - oracle::alignment(h, pair_of)));
    worst_geo = std::max(worst_geo, std::abs(g.uniformity - oracle::uniformity(h)));
  }
  o.note("geometry max diff " + num(worst_geo, 3));
  o.require(worst_geo <= 1e-10, "centroid or alignment/uniformity differs from the oracle");
  return o;
}

Outcome mlm_closed_forms() {
  Outcome o;
  const std::vector<TokenId> label = {17};
  const double uniform = mlm_loss(Tensor<double>::from({1, 50}, std::vector<double>(50, 0.25)), label).item();
  o.note("uniform |diff| " + num(std::abs(uniform - std::log(50.0)), 3));
  o.require(std::abs(uniform - std::log(50.0)) <= 1e-9, "uniform logits not ln V");
  std::vector<double> sat(50, 0.0);
  sat[17] = 40.0;
  const double saturated = mlm_loss(Tensor<double>::from({1, 50}, sat), label).item();
  o.note("saturated " + num(saturated, 3));
  o.require(saturated <= 1e-9, "saturated logits above 1e-9");
  return o;
}

Outcome romanizer_properties() {
  Outcome o;
  const Romanizer rom;
  std::mt19937_64 gen(77);
  std::size_t not_idempotent = 0;
  for (int i = 0; i < 1000; ++i) {
    std::string s(gen() % 64, ' ');
    for (auto& c : s) c = static_cast<char>(32 + gen() % 95);
    const std::string lowered = rom.romanize(s);
    if (rom.romanize(lowered) != lowered) ++not_idempotent;
  }
  o.require(not_idempotent == 0, std::to_string(not_idempotent) + " ASCII strings not idempotent");
  o.require(rom.romanize("salón") == "salon", "salón -> " + rom.romanize("salón"));

  std::size_t non_ascii = 0;
  for (int i = 0; i < 1000; ++i) {
    std::string s;
    const std::size_t len = gen() % 32;
    for (std::size_t j = 0; j < len; ++j) {
      char32_t cp = static_cast<char32_t>(gen() % 0x3000);
      if (cp >= 0xD800 && cp < 0xE000) cp = 'x';
      unicode::append_utf8(s, cp);
    }
    const auto in = unicode::decode_utf8(s);
    for (char32_t cp : unicode::decode_utf8(rom.romanize(s))) {
      const bool preserved_space = unicode::is_whitespace(cp) && in.find(cp) != std::u32string::npos;
      if (cp >= 0x80 && !preserved_space) ++non_ascii;
    }
  }
  o.require(non_ascii == 0, std::to_string(non_ascii) + " non-ASCII output codepoints");

  const std::pair<const char*, const char*> diacritics[] = {
      {"Ångström", "angstrom"}, {"crème brûlée", "creme brulee"}, {"naïve façade", "naive facade"}, {"μπαίνω", "baino"}};
  for (const auto& [in, want] : diacritics) {
    const auto got = rom.romanize(in);
    o.require(got == want, std::string(in) + " -> " + got);
  }
  std::size_t tone_marks = 0;
  for (const auto& [tag, table] : RuleSet::builtin().tables())
    for (const auto& rule : table.rules())
      for (unsigned char c : rule.replacement)
        if (c >= 0x80 || (c >= '0' && c <= '9')) ++tone_marks;
  o.require(tone_marks == 0, "shipped tables emit tone marks or digits");
  o.note("1000 ASCII strings idempotent, 1000 random strings ASCII-closed, salón -> " + rom.romanize("salón"));
  return o;
}

TrainConfig experiment_config() {
  TrainConfig c;
  c.model.d_model = 64;
  c.model.n_layers = 4;
  c.model.n_heads = 4;
  c.model.d_ff = 256;
  c.model.max_len = 64;
  c.model.pool_layer = ModelConfig::default_pool_layer(4);
  c.steps = 2000;
  c.batch_pairs = 16;
  c.adam.lr = 1e-3;
  c.checkpoint_every = 2000;
  c.vocab_size = 1024;
  c.seed = 0;
  return c;
}

Outcome directional_reproduction(const std::filesystem::path& work) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  SyntheticSpec spec;
  spec.lexicon_size = 200;
  spec.count = 2500;
  spec.scripts = {ScriptTag::ToyA, ScriptTag::Latn};
  const auto all = build_pairs(gen_synthetic(spec), Romanizer());
  // The first 2000 sentences (both scripts) train; the last 500 are held out.
  const std::vector<SentencePair> train_pairs(all.begin(), all.begin() + 4000);
  const std::vector<SentencePair> held_out(all.begin() + 4000, all.end());

  const TrainConfig base = experiment_config();
  const Vocab vocab = train_vocab(train_pairs, base.vocab_size, base.seed);

  struct Result {
    double accuracy = 0, centroid = 0, alignment = 0, tcm_first = 0, tcm_last = 0;
  };
  auto run = [&](const LossWeights& w, const std::string& name) {
    TrainConfig cfg = base;
    cfg.weights = w;
    const auto report = train(cfg, train_pairs, vocab, work / name);
    const Encoder<float> model = load_encoder(report.final_checkpoint);
    RetrievalOptions ro;
    ro.k = 10;
    const auto retrieval = evaluate_retrieval(model, vocab, held_out, ro);
    AnalysisOptions ao;
    const auto analysis = analyze_scripts(model, vocab, held_out, ao);
    return Result{retrieval.accuracy, analysis.centroids.raw_between("ToyA", "Latn"), analysis.geometry.alignment,
                  report.records.front().loss_tcm, report.records.back().loss_tcm};
  };
  const Result full = run({1, 1, 1}, "mlm-tcm");
  const Result mlm = run({1, 1, 0}, "mlm-only");
  const double secs = seconds_since(t0);

  o.note("top-10 " + num(100 * full.accuracy, 4) + " vs " + num(100 * mlm.accuracy, 4));
  o.note("centroid cos " + num(full.centroid, 4) + " vs " + num(mlm.centroid, 4));
  o.note("alignment " + num(full.alignment, 4) + " vs " + num(mlm.alignment, 4));
  o.note("tcm " + num(full.tcm_first, 4) + " -> " + num(full.tcm_last, 4));
  o.note(num(secs, 4) + " s");
  o.require(full.accuracy - mlm.accuracy >= 0.10, "retrieval gain below 10 points");
  o.require(full.centroid > mlm.centroid, "centroid cosine not higher");
  o.require(full.alignment < mlm.alignment, "alignment not lower");
  o.require(secs <= 900.0, "runtime above 15 min");
  return o;
}

TrainConfig small_config() {
  TrainConfig c;
  c.model.d_model = 32;
  c.model.n_layers = 2;
  c.model.n_heads = 2;
  c.model.d_ff = 64;
  c.model.max_len = 48;
  c.model.pool_layer = 1;
  c.batch_pairs = 8;
  c.steps = 20;
  c.checkpoint_every = 10;
  c.adam.lr = 1e-3;
  c.seed = 5;
  return c;
}

std::vector<SentencePair> small_corpus(std::size_t count) {
  SyntheticSpec spec;
  spec.lexicon_size = 60;
  spec.count = count;
  spec.scripts = {ScriptTag::ToyA, ScriptTag::Latn};
  return build_pairs(gen_synthetic(spec), Romanizer());
}

Outcome ablation_structure(const std::filesystem::path& work) {
  Outcome o;
  const auto pairs = small_corpus(120);
  const std::vector<SentencePair> train_pairs(pairs.begin(), pairs.begin() + 200);
  const std::vector<SentencePair> eval(pairs.begin() + 200, pairs.end());
  const TrainConfig base = small_config();
  const Vocab vocab = train_vocab(train_pairs, 400, 0);
  const auto report = run_ablation_grid(base, train_pairs, eval, vocab, work);

  const std::vector<std::string> want = {"full +Latn", "w/o TCM +Latn", "w/o MLM +Latn",
                                         "full -Latn", "w/o TCM -Latn", "w/o MLM -Latn"};
  std::vector<std::string> got;
  for (const auto& c : report.cells) got.push_back(c.label());
  o.require(got == want, "cell labels differ");
  for (const auto& c : report.cells) {
    o.require(c.ok, c.label() + " failed: " + c.error);
    o.require(c.retrieval.has_value() && !c.retrieval->groups.empty(), c.label() + " lacks retrieval metrics");
    o.require(c.centroids.has_value() && c.centroids->raw.rows() >= 2, c.label() + " lacks centroids");
    o.require(c.geometry.has_value() && std::isfinite(c.geometry->alignment) && std::isfinite(c.geometry->uniformity),
              c.label() + " lacks geometry");
    if (c.variant == "w/o MLM") {
      o.require(c.mlm_only_max_delta == 0.0, c.label() + " moved MLM-only parameters by " + num(c.mlm_only_max_delta));
      o.note(c.label() + " MLM-only delta " + num(c.mlm_only_max_delta));
    } else {
      o.require(c.mlm_only_max_delta > 0.0, c.label() + " did not update MLM-only parameters");
    }
  }
  o.require(std::filesystem::exists(work / "ablation.json"), "ablation.json missing");
  o.note(std::to_string(report.cells.size()) + " cells");
  return o;
}

Outcome determinism(const std::filesystem::path& work) {
  Outcome o;
  const auto pairs = small_corpus(100);
  const TrainConfig cfg = small_config();
  const Vocab vocab = train_vocab(pairs, 400, 0);
  train(cfg, pairs, vocab, work / "a");
  train(cfg, pairs, vocab, work / "b");
  const auto csv_a = slurp(work / "a" / "metrics.csv");
  o.require(!csv_a.empty() && csv_a == slurp(work / "b" / "metrics.csv"), "metrics.csv differs across runs");

  // Resume at step 10 and run the 10 remaining steps.
  train(cfg, pairs, vocab, work / "c", {.resume_from = work / "a" / "checkpoints" / "step-10.ckpt"});
  const auto csv_c = slurp(work / "c" / "metrics.csv");
  std::istringstream lines_a(csv_a);
  std::string line;
  std::vector<std::string> tail;
  for (int i = 0; std::getline(lines_a, line); ++i)
    if (i > 10) tail.push_back(line);
  std::istringstream lines_c(csv_c);
  std::vector<std::string> resumed;
  while (std::getline(lines_c, line)) resumed.push_back(line);
  o.require(tail.size() == 10 && resumed == tail, "resumed loss rows differ");
  o.require(slurp(work / "a" / "model.ckpt") == slurp(work / "c" / "model.ckpt"), "resumed parameters differ");
  o.note("2 runs identical, resumed steps 11-20 identical (" + std::to_string(resumed.size()) + " rows)");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  TempDir work("acceptance");

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradient_correctness},
      {"TCM closed forms", tcm_closed_forms},
      {"oracle equivalence", oracle_equivalence},
      {"MLM closed forms", mlm_closed_forms},
      {"romanizer properties", romanizer_properties},
      {"directional reproduction", [&] { return directional_reproduction(work / "c6"); }},
      {"ablation grid structure", [&] { return ablation_structure(work / "c7"); }},
      {"determinism and checkpointing", [&] { return determinism(work / "c8"); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome r;
    try {
      r = criteria[i].second();
    } catch (const std::exception& e) {
      r.pass = false;
      r.note(std::string("exception: ") + e.what());
    }
    if (!r.pass) ++failed;
    std::cout << (r.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << criteria[i].first << "): " << r.detail
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
