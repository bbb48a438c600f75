#include "translico/ablation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include "translico/errors.hpp"

namespace translico {

using nlohmann::json;

namespace {

json centroid_json(const ScriptCentroidMatrix& m) {
  json raw = json::array(), display = json::array();
  for (Eigen::Index i = 0; i < m.raw.rows(); ++i) {
    json r = json::array(), d = json::array();
    for (Eigen::Index j = 0; j < m.raw.cols(); ++j) {
      r.push_back(m.raw(i, j));
      d.push_back(m.display(i, j));
    }
    raw.push_back(r);
    display.push_back(d);
  }
  return {{"scripts", m.scripts}, {"raw", raw}, {"display", display}};
}

std::string slug(const AblationCell& c) {
  std::string s = c.variant + (c.include_latin ? "-latn" : "-nolatn");
  std::string out;
  for (char ch : s) {
    if (std::isalnum(static_cast<unsigned char>(ch))) out.push_back(static_cast<char>(std::tolower(ch)));
    else if (!out.empty() && out.back() != '-') out.push_back('-');
  }
  return out;
}

}  // namespace

json AblationCell::to_json() const {
  json j = {{"label", label()},
            {"variant", variant},
            {"latin", latin},
            {"weights", {{"mlm", weights.mlm}, {"mlm_trans", weights.mlm_trans}, {"tcm", weights.tcm}}},
            {"include_latin", include_latin},
            {"status", ok ? "ok" : "error"}};
  if (!ok) {
    j["error"] = error;
    return j;
  }
  j["final_step"] = {{"step", last.step},
                     {"loss_mlm_orig", last.loss_mlm},
                     {"loss_mlm_trans", last.loss_mlm_trans},
                     {"loss_tcm", last.loss_tcm},
                     {"loss_total", last.loss_total}};
  if (retrieval) j["retrieval"] = retrieval->to_json();
  if (centroids) j["centroids"] = centroid_json(*centroids);
  if (geometry) j["geometry"] = {{"alignment", geometry->alignment}, {"uniformity", geometry->uniformity}};
  j["mlm_only_max_delta"] = mlm_only_max_delta;
  return j;
}

json AblationReport::to_json() const {
  json cells_json = json::array();
  for (const auto& c : cells) cells_json.push_back(c.to_json());
  return {{"schema", "translico-ablation/1"}, {"cells", cells_json}};
}

std::vector<AblationCell> ablation_cells(const TrainConfig& base) {
  struct Variant {
    const char* name;
    LossWeights weights;
  };
  const Variant variants[] = {
      {"full", base.weights},
      {"w/o TCM", {base.weights.mlm, base.weights.mlm_trans, 0.0}},
      {"w/o MLM", {0.0, 0.0, base.weights.tcm}},
  };
  std::vector<AblationCell> cells;
  for (bool latin : {true, false}) {
    for (const auto& v : variants) {
      AblationCell c;
      c.variant = v.name;
      c.latin = latin ? "+Latn" : "-Latn";
      c.weights = v.weights;
      c.include_latin = latin;
      cells.push_back(std::move(c));
    }
  }
  return cells;
}

AblationReport run_ablation_grid(const TrainConfig& base, const std::vector<SentencePair>& train_pairs,
                                 const std::vector<SentencePair>& eval_pairs, const Vocab& vocab,
                                 const std::filesystem::path& out_dir, const AblationOptions& options) {
  AblationReport report;
  report.cells = ablation_cells(base);
  std::size_t index = 0;
  for (auto& cell : report.cells) {
    const auto dir = out_dir / (std::to_string(++index) + "-" + slug(cell));
    if (options.log) *options.log << "ablation cell " << cell.label() << " -> " << dir.string() << '\n';
    try {
      TrainConfig cfg = base;
      cfg.weights = cell.weights;
      cfg.include_latin = cell.include_latin;
      cfg.model.vocab_size = static_cast<int>(vocab.size());
      const Encoder<float> initial(cfg.model, cfg.seed);

      const TrainReport tr = train(cfg, train_pairs, vocab, dir);
      cell.last = tr.records.back();
      const Encoder<float> model = load_encoder(tr.final_checkpoint);

      for (const auto& name : model.mlm_only_parameter_names()) {
        const auto before = initial.params().get(name).values();
        const auto after = model.params().get(name).values();
        for (std::size_t i = 0; i < before.size(); ++i) {
          cell.mlm_only_max_delta =
              std::max(cell.mlm_only_max_delta, std::abs(static_cast<double>(after[i]) - before[i]));
        }
      }

      cell.retrieval = evaluate_retrieval(model, vocab, eval_pairs, options.retrieval);
      const ScriptAnalysis analysis = analyze_scripts(model, vocab, eval_pairs, options.analysis);
      write_analysis(analysis, dir / "analysis");
      cell.centroids = analysis.centroids;
      if (analysis.aligned_pairs > 0) cell.geometry = analysis.geometry;
      cell.ok = true;
    } catch (const std::exception& e) {
      cell.ok = false;
      cell.error = e.what();
      if (options.log) *options.log << "ablation cell " << cell.label() << " failed: " << e.what() << '\n';
    }
  }
  std::filesystem::create_directories(out_dir);
  std::ofstream f(out_dir / "ablation.json");
  if (!f) throw IoError("cannot write " + (out_dir / "ablation.json").string());
  f << report.to_json().dump(2) << '\n';
  return report;
}

}  // namespace translico
