#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "translico/rng.hpp"
#include "translico/tensor.hpp"
#include "translico/vocab.hpp"

namespace translico {

inline constexpr TokenId kIgnoreLabel = -1;

enum class Corruption { PureMask, Bert801010 };

std::string_view to_string(Corruption c);
// "pure-mask" or "bert-80-10-10"; throws ConfigError otherwise.
Corruption parse_corruption(std::string_view name);

// A corrupted sequence with its MLM targets. labels[i] holds the original id
// at the masked positions and kIgnoreLabel elsewhere.
struct MaskedSequence {
  TokenSequence input;
  std::vector<TokenId> labels;
  std::vector<std::size_t> mask_positions;
};

// Selects floor(mask_rate * content_length) content positions (at least one)
// uniformly without replacement. pure-mask replaces each with [mask];
// bert-80-10-10 uses [mask] / a random non-special token / the original token
// with probabilities 0.8 / 0.1 / 0.1 (vocab_size is needed for that mode).
// Throws NoContent, ConfigError.
MaskedSequence apply_masking(const TokenSequence& seq, double mask_rate, Rng& rng,
                             Corruption corruption = Corruption::PureMask, std::size_t vocab_size = 0);

// Number of positions apply_masking selects for a given content length.
std::size_t mask_count(std::size_t content_length, double mask_rate);

// Mean negative log-likelihood of labels over rows whose label is not
// kIgnoreLabel; logits has one row per label. Throws EmptyMaskSet.
template <typename T>
Tensor<T> mlm_loss(const Tensor<T>& logits, std::span<const TokenId> labels);

// InfoNCE over 2N representations: each row i is an anchor whose positive is
// pair_of[i] and whose negatives are the other 2N - 2 rows; similarity is
// cosine / tau. Returns the mean over all 2N anchors. Throws ShapeMismatch if
// pair_of is not a fixed-point-free involution or the row count is odd,
// ConfigError if tau <= 0, DegenerateNorm for a zero representation.
template <typename T>
Tensor<T> tcm_loss(const Tensor<T>& reps, std::span<const std::size_t> pair_of, double tau);

// Checks the pair map invariants; throws ShapeMismatch.
void validate_pair_map(std::span<const std::size_t> pair_of);

struct LossWeights {
  double mlm = 1.0;        // original-script MLM
  double mlm_trans = 1.0;  // transliteration MLM
  double tcm = 1.0;        // transliteration contrastive term

  // Throws ConfigError unless all are >= 0 and at least one is > 0.
  void validate() const;
};

// Weighted sum of the three terms. A term with weight 0 is left out of the
// graph entirely (it may be an undefined Tensor), so it contributes exactly
// zero gradient. Throws NonFinite if any defined term is not finite.
template <typename T>
Tensor<T> combined_loss(const Tensor<T>& l_mlm, const Tensor<T>& l_mlm_trans, const Tensor<T>& l_tcm,
                        const LossWeights& weights);

}  // namespace translico
