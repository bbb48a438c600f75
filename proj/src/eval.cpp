#include "translico/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <thread>

#include <Eigen/Eigenvalues>

#include "translico/errors.hpp"
#include "translico/objectives.hpp"

namespace translico {

using nlohmann::json;

namespace {

void embed_range(const Encoder<float>& model, const Vocab& vocab, std::span<const std::string> sentences,
                 std::span<const std::string> ids, int layer, std::size_t batch_size, std::size_t first,
                 std::size_t last, Matrix& out) {
  NoGradGuard no_grad;
  const auto max_len = static_cast<std::size_t>(model.config().max_len);
  const auto d = static_cast<std::size_t>(model.config().d_model);
  for (std::size_t start = first; start < last; start += batch_size) {
    const std::size_t end = std::min(last, start + batch_size);
    std::vector<TokenSequence> batch;
    batch.reserve(end - start);
    for (std::size_t i = start; i < end; ++i) {
      batch.push_back(vocab.encode(sentences[i], max_len));
      if (batch.back().content_length() == 0) {
        const std::string name = ids.empty() ? "#" + std::to_string(i) : ids[i];
        throw EmptyPool("sentence " + name + " has no content tokens");
      }
    }
    batch = trim_padding(batch);
    const Tensor<float> pooled = model.mean_pool(model.forward(batch), batch, layer);
    const auto values = pooled.values();
    for (std::size_t r = 0; r < end - start; ++r) {
      for (std::size_t c = 0; c < d; ++c) out(static_cast<Eigen::Index>(start + r), static_cast<Eigen::Index>(c)) = values[r * d + c];
    }
  }
}

Matrix normalized_rows(const Matrix& m, const char* what) {
  Matrix out = m;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double n = m.row(i).norm();
    if (!(n > 0.0)) throw DegenerateNorm(std::string(what) + ": row " + std::to_string(i) + " has zero norm");
    out.row(i) /= n;
  }
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

Matrix embed_sentences(const Encoder<float>& model, const Vocab& vocab, std::span<const std::string> sentences,
                       const EmbedOptions& options, std::span<const std::string> ids) {
  if (!ids.empty() && ids.size() != sentences.size()) throw ShapeMismatch("one id per sentence required");
  const int layer = options.pool_layer < 0 ? model.config().pool_layer : options.pool_layer;
  const std::size_t batch_size = std::max<std::size_t>(1, options.batch_size);
  Matrix out(static_cast<Eigen::Index>(sentences.size()), model.config().d_model);
  const std::size_t n = sentences.size();
  const std::size_t batches = (n + batch_size - 1) / batch_size;
  const std::size_t workers = std::min(std::max<std::size_t>(1, options.threads), std::max<std::size_t>(1, batches));
  if (workers == 1) {
    embed_range(model, vocab, sentences, ids, layer, batch_size, 0, n, out);
    return out;
  }
  // Whole batches per worker, so every sentence sees the same padding as in
  // the single-threaded run.
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  const std::size_t per = (batches + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t first = std::min(n, w * per * batch_size);
    const std::size_t last = std::min(n, (w + 1) * per * batch_size);
    pool.emplace_back([&, w, first, last] {
      try {
        embed_range(model, vocab, sentences, ids, layer, batch_size, first, last, out);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

Matrix cosine_matrix(const Matrix& queries, const Matrix& candidates) {
  if (queries.cols() != candidates.cols()) throw ShapeMismatch("query and candidate dimensions differ");
  const Matrix q = normalized_rows(queries, "queries");
  const Matrix c = normalized_rows(candidates, "candidates");
  // Pairwise dots rather than a blocked GEMM: identical candidates must score
  // identically wherever they sit.
  Matrix out(q.rows(), c.rows());
  for (Eigen::Index i = 0; i < q.rows(); ++i)
    for (Eigen::Index j = 0; j < c.rows(); ++j) out(i, j) = q.row(i).dot(c.row(j));
  return out;
}

TopkResult retrieval_topk(const Matrix& queries, const Matrix& candidates, std::span<const std::size_t> gold,
                          std::size_t k) {
  if (gold.size() != static_cast<std::size_t>(queries.rows())) throw ShapeMismatch("one gold index per query required");
  const auto nc = static_cast<std::size_t>(candidates.rows());
  if (k == 0 || k > nc) throw ConfigError("k must be in [1, number of candidates]");
  for (auto g : gold)
    if (g >= nc) throw ShapeMismatch("gold index out of range");
  const Matrix sims = cosine_matrix(queries, candidates);

  TopkResult r;
  r.hit.resize(gold.size());
  r.gold_rank.resize(gold.size());
  std::size_t correct = 0;
  for (std::size_t q = 0; q < gold.size(); ++q) {
    const auto row = sims.row(static_cast<Eigen::Index>(q));
    const double target = row(static_cast<Eigen::Index>(gold[q]));
    // Rank of the gold candidate under (score desc, index asc).
    std::size_t rank = 0;
    for (std::size_t c = 0; c < nc; ++c) {
      const double s = row(static_cast<Eigen::Index>(c));
      if (s > target || (s == target && c < gold[q])) ++rank;
    }
    r.gold_rank[q] = rank;
    r.hit[q] = rank < k;
    correct += r.hit[q];
  }
  r.accuracy = gold.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(gold.size());
  return r;
}

json RetrievalReport::to_json() const {
  json g = json::array();
  for (const auto& grp : groups) {
    g.push_back({{"group", grp.name},
                 {"queries", grp.queries},
                 {"candidates", grp.candidates},
                 {"k", grp.k},
                 {"correct", grp.correct},
                 {"accuracy", grp.accuracy}});
  }
  return {{"schema", "translico-retrieval/1"},
          {"k", k},
          {"pool_layer", pool_layer},
          {"transliterated", transliterated},
          {"queries", queries},
          {"accuracy", accuracy},
          {"groups", g}};
}

double ScriptCentroidMatrix::raw_between(const std::string& a, const std::string& b) const {
  const auto ia = std::find(scripts.begin(), scripts.end(), a);
  const auto ib = std::find(scripts.begin(), scripts.end(), b);
  if (ia == scripts.end() || ib == scripts.end()) throw ConfigError("script not present in centroid matrix");
  return raw(ia - scripts.begin(), ib - scripts.begin());
}

ScriptCentroidMatrix script_centroids(const Matrix& reps, std::span<const std::string> tags, bool normalize_rows) {
  if (tags.size() != static_cast<std::size_t>(reps.rows())) throw ShapeMismatch("one script tag per row required");
  std::map<std::string, std::vector<Eigen::Index>> groups;
  for (std::size_t i = 0; i < tags.size(); ++i) groups[tags[i]].push_back(static_cast<Eigen::Index>(i));
  if (groups.size() < 2) throw InsufficientGroups("centroid analysis needs at least two scripts");

  const Matrix rows = normalize_rows ? normalized_rows(reps, "script_centroids") : reps;
  ScriptCentroidMatrix m;
  const auto g = static_cast<Eigen::Index>(groups.size());
  Matrix centroids = Matrix::Zero(g, reps.cols());
  Eigen::Index gi = 0;
  for (const auto& [tag, members] : groups) {
    m.scripts.push_back(tag);
    m.counts.push_back(members.size());
    for (auto r : members) centroids.row(gi) += rows.row(r);
    centroids.row(gi) /= static_cast<double>(members.size());
    ++gi;
  }
  const Matrix unit = normalized_rows(centroids, "script centroid");
  m.raw = unit * unit.transpose();
  for (Eigen::Index i = 0; i < g; ++i) {
    m.raw(i, i) = 1.0;
    for (Eigen::Index j = 0; j < i; ++j) m.raw(i, j) = m.raw(j, i);
  }

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (Eigen::Index i = 0; i < g; ++i)
    for (Eigen::Index j = 0; j < g; ++j)
      if (i != j) {
        lo = std::min(lo, m.raw(i, j));
        hi = std::max(hi, m.raw(i, j));
      }
  m.display = Matrix::Ones(g, g);
  if (hi > lo) {
    for (Eigen::Index i = 0; i < g; ++i)
      for (Eigen::Index j = 0; j < g; ++j)
        if (i != j) m.display(i, j) = (m.raw(i, j) - lo) / (hi - lo);
  }
  return m;
}

AlignmentUniformity alignment_uniformity(const Matrix& reps, std::span<const std::size_t> pair_of) {
  const auto n = static_cast<std::size_t>(reps.rows());
  if (n < 2) throw ShapeMismatch("alignment/uniformity needs at least two representations");
  if (pair_of.size() != n) throw ShapeMismatch("pair map size does not match representation count");
  validate_pair_map(pair_of);
  const Matrix h = normalized_rows(reps, "alignment_uniformity");

  AlignmentUniformity r;
  double align = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (pair_of[i] < i) continue;
    align += (h.row(static_cast<Eigen::Index>(i)) - h.row(static_cast<Eigen::Index>(pair_of[i]))).squaredNorm();
    ++pairs;
  }
  r.alignment = align / static_cast<double>(pairs);

  double kernel = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      kernel += std::exp(-2.0 * (h.row(static_cast<Eigen::Index>(i)) - h.row(static_cast<Eigen::Index>(j))).squaredNorm());
  r.uniformity = std::log(kernel / (static_cast<double>(n) * static_cast<double>(n - 1) / 2.0));
  return r;
}

PcaResult pca_project(const Matrix& reps) {
  if (reps.rows() < 3 || reps.cols() < 2) throw ConfigError("PCA needs at least 3 rows and 2 columns");
  const Matrix centered = reps.rowwise() - reps.colwise().mean();
  const Matrix cov = centered.transpose() * centered / static_cast<double>(reps.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Matrix> solver(cov);
  if (solver.info() != Eigen::Success) throw ConfigError("covariance eigendecomposition failed");

  PcaResult r;
  r.coords = Matrix::Zero(reps.rows(), 2);
  const auto d = cov.rows();
  const double scale = std::max(1.0, cov.trace());
  for (int c = 0; c < 2; ++c) {
    // Eigenvalues come in ascending order.
    const Eigen::Index idx = d - 1 - c;
    const double lambda = solver.eigenvalues()(idx);
    if (!(lambda > 1e-12 * scale)) {
      r.rank_deficient = true;
      continue;
    }
    Eigen::VectorXd v = solver.eigenvectors().col(idx);
    for (Eigen::Index i = 0; i < d; ++i) {
      if (std::abs(v(i)) > 1e-12) {
        if (v(i) < 0) v = -v;
        break;
      }
    }
    r.eigenvalues[c] = lambda;
    r.coords.col(c) = centered * v;
  }
  return r;
}

RetrievalReport evaluate_retrieval(const Encoder<float>& model, const Vocab& vocab,
                                   const std::vector<SentencePair>& pairs, const RetrievalOptions& options) {
  if (options.k == 0) throw ConfigError("k must be >= 1");
  std::map<std::string, std::vector<const SentencePair*>> groups;
  for (const auto& p : pairs) {
    if (p.script == ScriptTag::Latn) continue;
    if (!p.translit) throw FormatError("pair " + p.id + " has no translit");
    auto& g = groups[std::string(to_string(p.script))];
    if (options.max_per_group == 0 || g.size() < options.max_per_group) g.push_back(&p);
  }
  if (groups.empty()) throw InsufficientData("no non-Latin pairs to evaluate");

  RetrievalReport report;
  report.k = options.k;
  report.pool_layer = options.embed.pool_layer < 0 ? model.config().pool_layer : options.embed.pool_layer;
  report.transliterated = options.transliterate != nullptr;
  std::size_t correct = 0;
  for (const auto& [name, members] : groups) {
    std::vector<std::string> queries, candidates, ids;
    for (const auto* p : members) {
      queries.push_back(options.transliterate ? options.transliterate->romanize(p->text) : p->text);
      candidates.push_back(*p->translit);
      ids.push_back(p->id);
    }
    const Matrix q = embed_sentences(model, vocab, queries, options.embed, ids);
    const Matrix c = embed_sentences(model, vocab, candidates, options.embed, ids);
    std::vector<std::size_t> gold(members.size());
    for (std::size_t i = 0; i < gold.size(); ++i) gold[i] = i;
    RetrievalGroup grp;
    grp.name = name;
    grp.queries = grp.candidates = members.size();
    grp.k = std::min(options.k, members.size());
    const TopkResult r = retrieval_topk(q, c, gold, grp.k);
    grp.accuracy = r.accuracy;
    grp.correct = static_cast<std::size_t>(std::count(r.hit.begin(), r.hit.end(), 1));
    correct += grp.correct;
    report.queries += grp.queries;
    report.groups.push_back(grp);
  }
  report.accuracy = static_cast<double>(correct) / static_cast<double>(report.queries);
  return report;
}

RetrievalReport evaluate_transliterated(const Encoder<float>& model, const Vocab& vocab,
                                        const std::vector<SentencePair>& pairs, const Romanizer& romanizer,
                                        RetrievalOptions options) {
  options.transliterate = &romanizer;
  return evaluate_retrieval(model, vocab, pairs, options);
}

ScriptAnalysis analyze_scripts(const Encoder<float>& model, const Vocab& vocab, const std::vector<SentencePair>& pairs,
                               const AnalysisOptions& options) {
  ScriptAnalysis a;
  a.layer = options.embed.pool_layer < 0 ? model.config().pool_layer : options.embed.pool_layer;
  std::map<std::string, std::size_t> per_script;
  std::vector<std::string> texts;
  std::vector<std::string> pair_texts, pair_trans, pair_ids;
  for (const auto& p : pairs) {
    const std::string script(to_string(p.script));
    auto& count = per_script[script];
    if (options.max_per_script != 0 && count >= options.max_per_script) continue;
    ++count;
    texts.push_back(p.text);
    a.sentence_ids.push_back(p.id);
    a.sentence_scripts.push_back(script);
    if (p.script != ScriptTag::Latn && p.translit) {
      pair_texts.push_back(p.text);
      pair_trans.push_back(*p.translit);
      pair_ids.push_back(p.id);
    }
  }
  const Matrix reps = embed_sentences(model, vocab, texts, options.embed, a.sentence_ids);
  a.centroids = script_centroids(reps, a.sentence_scripts, !options.centroid_raw);
  a.pca = pca_project(reps);

  // Originals first, then their transliterations in the same order.
  const std::size_t m = pair_texts.size();
  if (m >= 1) {
    std::vector<std::string> both = pair_texts;
    std::vector<std::string> both_ids = pair_ids;
    for (std::size_t i = 0; i < m; ++i) {
      both.push_back(pair_trans[i]);
      both_ids.push_back(pair_ids[i] + "#translit");
    }
    const Matrix pr = embed_sentences(model, vocab, both, options.embed, both_ids);
    std::vector<std::size_t> pair_of(2 * m);
    for (std::size_t i = 0; i < m; ++i) {
      pair_of[i] = i + m;
      pair_of[i + m] = i;
    }
    a.geometry = alignment_uniformity(pr, pair_of);
    a.aligned_pairs = m;
  }
  return a;
}

void write_analysis(const ScriptAnalysis& a, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream f(dir / name);
    if (!f) throw IoError("cannot write " + (dir / name).string());
    return f;
  };
  {
    auto f = open("centroids.csv");
    f << "script_a,script_b,raw_cosine,display\n";
    const auto& c = a.centroids;
    for (std::size_t i = 0; i < c.scripts.size(); ++i)
      for (std::size_t j = 0; j < c.scripts.size(); ++j) {
        const auto ii = static_cast<Eigen::Index>(i), jj = static_cast<Eigen::Index>(j);
        f << c.scripts[i] << ',' << c.scripts[j] << ',' << fmt(c.raw(ii, jj)) << ',' << fmt(c.display(ii, jj)) << '\n';
      }
  }
  {
    auto f = open("pca.csv");
    f << "sentence_id,script,pc1,pc2\n";
    for (std::size_t i = 0; i < a.sentence_ids.size(); ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      f << a.sentence_ids[i] << ',' << a.sentence_scripts[i] << ',' << fmt(a.pca.coords(ii, 0)) << ','
        << fmt(a.pca.coords(ii, 1)) << '\n';
    }
  }
  {
    auto f = open("alignment.json");
    json j = {{"schema", "translico-geometry/1"},
              {"layer", a.layer},
              {"pairs", a.aligned_pairs},
              {"alignment", a.aligned_pairs ? json(a.geometry.alignment) : json(nullptr)},
              {"uniformity", a.aligned_pairs ? json(a.geometry.uniformity) : json(nullptr)},
              {"pca_rank_deficient", a.pca.rank_deficient}};
    f << j.dump(2) << '\n';
  }
}

}  // namespace translico
