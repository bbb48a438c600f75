#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "translico/corpus.hpp"
#include "translico/encoder.hpp"
#include "translico/romanizer.hpp"
#include "translico/vocab.hpp"

namespace translico {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct EmbedOptions {
  int pool_layer = -1;  // -1: the model's configured pool layer
  std::size_t batch_size = 32;
  std::size_t threads = 1;
};

// One pooled vector per sentence (rows follow the input order). ids, when
// given, name the sentence in EmptyPool messages.
Matrix embed_sentences(const Encoder<float>& model, const Vocab& vocab, std::span<const std::string> sentences,
                       const EmbedOptions& options = {}, std::span<const std::string> ids = {});

// Cosine similarity of every query row against every candidate row. Throws
// DegenerateNorm for a zero row.
Matrix cosine_matrix(const Matrix& queries, const Matrix& candidates);

struct TopkResult {
  std::vector<std::uint8_t> hit;
  // 0-based position of the gold candidate in each query's ranking.
  std::vector<std::size_t> gold_rank;
  double accuracy = 0.0;
};

// Ranks candidates by cosine similarity (descending, ties by lower candidate
// index) and scores a query as correct when gold[q] is among the first k.
// Throws ShapeMismatch, ConfigError (k == 0 or k > candidates), DegenerateNorm.
TopkResult retrieval_topk(const Matrix& queries, const Matrix& candidates, std::span<const std::size_t> gold,
                          std::size_t k);

struct RetrievalGroup {
  std::string name;
  std::size_t queries = 0;
  std::size_t candidates = 0;
  std::size_t k = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
};

struct RetrievalReport {
  std::size_t k = 0;
  int pool_layer = 0;
  bool transliterated = false;
  std::vector<RetrievalGroup> groups;
  // Micro average over all queries of all groups.
  double accuracy = 0.0;
  std::size_t queries = 0;

  nlohmann::json to_json() const;
};

struct ScriptCentroidMatrix {
  std::vector<std::string> scripts;
  std::vector<std::size_t> counts;
  Matrix raw;
  // Off-diagonal raw entries min-max scaled to [0, 1]; diagonal 1.
  Matrix display;

  double raw_between(const std::string& a, const std::string& b) const;
};

// Groups rows by tag (groups ordered by tag name). Centroids average the
// l2-normalized rows unless normalize_rows is false. Throws
// InsufficientGroups for fewer than two tags, DegenerateNorm.
ScriptCentroidMatrix script_centroids(const Matrix& reps, std::span<const std::string> tags,
                                      bool normalize_rows = true);

struct AlignmentUniformity {
  double alignment = 0.0;
  double uniformity = 0.0;
};

// alignment: mean ||h_i - h_pair(i)||^2 over pairs; uniformity: log of the
// mean exp(-2 ||h_i - h_j||^2) over i < j; rows are l2-normalized first.
AlignmentUniformity alignment_uniformity(const Matrix& reps, std::span<const std::size_t> pair_of);

struct PcaResult {
  Matrix coords;  // n x 2
  double eigenvalues[2] = {0.0, 0.0};
  // Fewer than two positive eigenvalues; missing components are zero.
  bool rank_deficient = false;
};

// Centered projection onto the two leading covariance eigenvectors, each
// signed so its first non-negligible component is positive. Throws
// ConfigError for fewer than 3 rows or 2 columns.
PcaResult pca_project(const Matrix& reps);

struct RetrievalOptions {
  std::size_t k = 10;
  // Queries per script group; 0 keeps all.
  std::size_t max_per_group = 500;
  EmbedOptions embed;
  // Romanize queries before encoding (common-script evaluation).
  const Romanizer* transliterate = nullptr;
};

// Cross-script retrieval on pairs: within each non-Latin script group,
// sentence i (original script) must retrieve its own transliteration among
// the group's transliterations. k is clamped to the group size.
RetrievalReport evaluate_retrieval(const Encoder<float>& model, const Vocab& vocab,
                                   const std::vector<SentencePair>& pairs, const RetrievalOptions& options);

// evaluate_retrieval with every query romanized first.
RetrievalReport evaluate_transliterated(const Encoder<float>& model, const Vocab& vocab,
                                        const std::vector<SentencePair>& pairs, const Romanizer& romanizer,
                                        RetrievalOptions options);

struct ScriptAnalysis {
  ScriptCentroidMatrix centroids;
  PcaResult pca;
  std::vector<std::string> sentence_ids;
  std::vector<std::string> sentence_scripts;
  // Over (text, translit) of the non-Latin pairs.
  AlignmentUniformity geometry;
  std::size_t aligned_pairs = 0;
  int layer = 0;
};

struct AnalysisOptions {
  EmbedOptions embed;
  bool centroid_raw = false;
  // Sentences per script; 0 keeps all.
  std::size_t max_per_script = 500;
};

// Centroids and PCA over the original-script texts grouped by script, and
// alignment/uniformity over the non-Latin (text, translit) pairs.
ScriptAnalysis analyze_scripts(const Encoder<float>& model, const Vocab& vocab, const std::vector<SentencePair>& pairs,
                               const AnalysisOptions& options);

// centroids.csv, pca.csv and alignment.json inside dir.
void write_analysis(const ScriptAnalysis& analysis, const std::filesystem::path& dir);

}  // namespace translico
