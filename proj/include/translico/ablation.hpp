#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "translico/eval.hpp"
#include "translico/trainer.hpp"

namespace translico {

struct AblationCell {
  std::string variant;  // "full", "w/o TCM" or "w/o MLM"
  std::string latin;    // "+Latn" or "-Latn"
  LossWeights weights;
  bool include_latin = true;

  bool ok = false;
  std::string error;
  StepRecord last;
  std::optional<RetrievalReport> retrieval;
  std::optional<ScriptCentroidMatrix> centroids;
  std::optional<AlignmentUniformity> geometry;
  // Largest absolute change of any parameter used only by the MLM path.
  double mlm_only_max_delta = 0.0;

  std::string label() const { return variant + " " + latin; }
  nlohmann::json to_json() const;
};

struct AblationReport {
  std::vector<AblationCell> cells;
  nlohmann::json to_json() const;
};

// The six weight/Latin combinations, in report order.
std::vector<AblationCell> ablation_cells(const TrainConfig& base);

struct AblationOptions {
  RetrievalOptions retrieval;
  AnalysisOptions analysis;
  std::ostream* log = nullptr;
};

// Trains every cell into out_dir/<n>-<slug>/ and evaluates it on eval_pairs.
// A failing cell records its error and the remaining cells still run.
AblationReport run_ablation_grid(const TrainConfig& base, const std::vector<SentencePair>& train_pairs,
                                 const std::vector<SentencePair>& eval_pairs, const Vocab& vocab,
                                 const std::filesystem::path& out_dir, const AblationOptions& options = {});

}  // namespace translico
