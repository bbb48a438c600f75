#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "translico/checkpoint.hpp"
#include "translico/tensor.hpp"
#include "translico/vocab.hpp"

namespace translico {

struct ModelConfig {
  // The 12-layer reference model pools layer 8; at other depths the same
  // two-thirds position is used.
  static constexpr int kReferenceLayers = 12;
  static constexpr int kReferencePoolLayer = 8;

  int n_layers = 4;
  int n_heads = 4;
  int d_model = 64;
  int d_ff = 256;
  int vocab_size = 0;
  int max_len = 64;
  int pool_layer = 3;

  // ceil(2 * n_layers / 3)
  static int default_pool_layer(int n_layers) { return (2 * n_layers + 2) / 3; }

  // Throws ConfigError.
  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// Hidden states of a padded batch, packed row-wise: hidden[l] is
// (batch * seq_len) x d_model and rows b*seq_len .. b*seq_len+seq_len-1 belong
// to sequence b. hidden[0] is the embedding output, hidden[l] the output of
// transformer layer l.
template <typename T>
struct EncoderOutput {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::vector<Tensor<T>> hidden;
};

// Ordered, named parameter tensors.
template <typename T>
class ParameterSet {
 public:
  Tensor<T>& add(std::string name, Tensor<T> tensor);
  // Throws ConfigError if absent.
  const Tensor<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::size_t size() const { return tensors_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  std::vector<Tensor<T>>& tensors() { return tensors_; }
  const std::vector<Tensor<T>>& tensors() const { return tensors_; }
  void zero_grad();

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> tensors_;
};

// Pre-LN bidirectional transformer encoder with learned absolute positions
// and an MLM head tied to the token embedding.
template <typename T>
class Encoder {
 public:
  // Random initialization from the "init" sub-stream of seed.
  Encoder(const ModelConfig& config, std::uint64_t seed);
  // Takes ownership of existing parameter tensors (no copy).
  Encoder(const ModelConfig& config, ParameterSet<T> params);

  const ModelConfig& config() const { return config_; }
  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }

  // Independent copy of the parameters in precision U.
  template <typename U>
  Encoder<U> cast() const;

  // Batch must be uniformly padded. Throws ShapeMismatch, IdOutOfRange.
  EncoderOutput<T> forward(std::span<const TokenSequence> batch) const;

  // Mean over content and [mask] positions of hidden[layer] -> batch x d_model.
  // Throws EmptyPool, ConfigError for a bad layer.
  Tensor<T> mean_pool(const EncoderOutput<T>& out, std::span<const TokenSequence> batch, int layer) const;

  // Vocabulary scores for every position of the last layer:
  // (batch * seq_len) x vocab_size.
  Tensor<T> mlm_logits(const EncoderOutput<T>& out) const;
  // Scores for selected packed rows of the last layer only.
  Tensor<T> mlm_logits_at(const EncoderOutput<T>& out, std::span<const std::size_t> rows) const;
  // Head applied to arbitrary hidden rows (n x d_model).
  Tensor<T> mlm_head(const Tensor<T>& hidden) const;

  // Parameters used only by the MLM head and by layers above pool_layer.
  std::vector<std::string> mlm_only_parameter_names() const;

 private:
  struct Layer {
    Tensor<T> ln1_g, ln1_b, wq, bq, wk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
  };
  void bind();

  ModelConfig config_;
  ParameterSet<T> params_;
  Tensor<T> tok_, pos_, head_ln_g_, head_ln_b_, head_bias_;
  std::vector<Layer> layers_;
};

// Packs a float encoder's parameters under their canonical names.
NamedTensors to_named_tensors(const Encoder<float>& encoder);
// Rebuilds an encoder from checkpoint tensors (names as produced by
// to_named_tensors). Throws ConfigError for missing or mis-shaped tensors.
Encoder<float> encoder_from_checkpoint(const Checkpoint& ckpt, const ModelConfig& config);

// Right-trims a batch to the longest non-pad length it contains.
std::vector<TokenSequence> trim_padding(std::span<const TokenSequence> batch);

}  // namespace translico
