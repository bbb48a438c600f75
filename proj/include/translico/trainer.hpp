#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "translico/corpus.hpp"
#include "translico/encoder.hpp"
#include "translico/objectives.hpp"
#include "translico/optim.hpp"
#include "translico/vocab.hpp"

namespace translico {

struct TrainConfig {
  LossWeights weights;
  double tau = 1.0;
  double mask_rate = 0.15;
  Corruption corruption = Corruption::PureMask;
  std::size_t batch_pairs = 16;
  std::size_t steps = 2000;
  AdamConfig adam;  // lr 3e-4, (0.9, 0.999), eps 1e-6
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 2000;
  bool include_latin = true;
  bool tcm_clean_forward = false;
  ModelConfig model;
  // Target size when the trainer has to learn its own vocabulary.
  std::size_t vocab_size = 1024;
  // Plateau rule on the total loss; 0 disables it.
  std::size_t early_stop_patience = 0;

  // Throws ConfigError.
  void validate() const;
  nlohmann::json to_json() const;
  // Missing fields keep their defaults; unknown fields are rejected.
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig load(const std::filesystem::path& path);

  // Continued-pretraining settings of the reference setup (lr 1e-5,
  // checkpoints every 2000 steps); the default lr of 3e-4 suits training a
  // small model from scratch.
  static TrainConfig finetune_preset();
};

struct StepRecord {
  std::size_t step = 0;
  double loss_mlm = 0.0;
  double loss_mlm_trans = 0.0;
  double loss_tcm = 0.0;
  double loss_total = 0.0;
};

struct TrainReport {
  std::vector<StepRecord> records;
  double wall_seconds = 0.0;
  std::filesystem::path final_checkpoint;
  bool early_stopped = false;
};

inline constexpr const char* kMetricsHeader = "step,loss_mlm_orig,loss_mlm_trans,loss_tcm,loss_total";
std::string format_metrics_row(const StepRecord& r);

struct EncodedPair {
  TokenSequence orig;
  TokenSequence trans;
};

std::vector<EncodedPair> encode_pairs(const std::vector<SentencePair>& pairs, const Vocab& vocab, std::size_t max_len);

// Items 0..N-1 are the original-script sequences and N..2N-1 their
// transliterations; pair_of links i <-> i + N.
struct TrainingBatch {
  std::vector<MaskedSequence> orig;
  std::vector<MaskedSequence> trans;
  std::vector<std::size_t> pair_of;
  std::vector<std::size_t> source_index;
};

// Draws N distinct pairs uniformly and masks both members of each pair
// independently. Throws StreamExhausted if the pool holds fewer than N pairs.
TrainingBatch make_batch(std::span<const EncodedPair> pool, const TrainConfig& config, std::size_t vocab_size,
                         Rng& rng);

template <typename T>
struct BatchLosses {
  Tensor<T> mlm;
  Tensor<T> mlm_trans;
  Tensor<T> tcm;
  Tensor<T> total;
};

// The three objectives of one batch and their weighted sum. pool is only read
// when config.tcm_clean_forward is set.
template <typename T>
BatchLosses<T> batch_losses(const Encoder<T>& encoder, const TrainingBatch& batch, std::span<const EncodedPair> pool,
                            const TrainConfig& config);

class Trainer {
 public:
  // Pairs are filtered by config.include_latin and must carry translits.
  Trainer(TrainConfig config, const Vocab& vocab, const std::vector<SentencePair>& pairs);

  // One optimization step; its batch is a pure function of (seed, step).
  // Throws NonFinite without touching the parameters.
  StepRecord step();

  std::size_t steps_done() const { return step_; }
  const TrainConfig& config() const { return config_; }
  Encoder<float>& encoder() { return encoder_; }
  const Encoder<float>& encoder() const { return encoder_; }
  const AdamState<float>& adam_state() const { return adam_; }
  std::size_t pool_size() const { return pool_.size(); }

  // Parameters, Adam moments and the step counter.
  void save(const std::filesystem::path& path) const;
  void restore(const std::filesystem::path& path);

 private:
  TrainConfig config_;
  std::size_t vocab_size_;
  std::vector<EncodedPair> pool_;
  Encoder<float> encoder_;
  AdamState<float> adam_;
  std::size_t step_ = 0;
};

struct TrainOptions {
  std::optional<std::filesystem::path> resume_from;
  // Progress lines (every log_every steps); nullptr for silence.
  std::ostream* log = nullptr;
  std::size_t log_every = 100;
};

// Runs the configured number of steps, appending a metrics row per step to
// out_dir/metrics.csv and writing out_dir/checkpoints/step-<n>.ckpt every
// checkpoint_every steps plus out_dir/model.ckpt at the end. Also writes
// out_dir/config.json. On NonFinite the previous checkpoints stay in place.
TrainReport train(const TrainConfig& config, const std::vector<SentencePair>& pairs, const Vocab& vocab,
                  const std::filesystem::path& out_dir, const TrainOptions& options = {});

// Model config stored in a checkpoint written by the trainer.
ModelConfig checkpoint_model_config(const Checkpoint& ckpt);
Encoder<float> load_encoder(const std::filesystem::path& checkpoint_path);

}  // namespace translico
