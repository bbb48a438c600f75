#include "translico/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "translico/errors.hpp"

namespace translico {

std::string_view to_string(Corruption c) {
  return c == Corruption::PureMask ? "pure-mask" : "bert-80-10-10";
}

Corruption parse_corruption(std::string_view name) {
  if (name == "pure-mask") return Corruption::PureMask;
  if (name == "bert-80-10-10") return Corruption::Bert801010;
  throw ConfigError("unknown corruption strategy '" + std::string(name) + "'");
}

std::size_t mask_count(std::size_t content_length, double mask_rate) {
  if (content_length == 0) return 0;
  // The slack keeps products like 0.15 * 20 from landing just below an integer.
  const auto k = static_cast<std::size_t>(std::floor(mask_rate * static_cast<double>(content_length) + 1e-9));
  return std::clamp<std::size_t>(k, 1, content_length);
}

MaskedSequence apply_masking(const TokenSequence& seq, double mask_rate, Rng& rng, Corruption corruption,
                             std::size_t vocab_size) {
  if (!(mask_rate > 0.0 && mask_rate < 1.0)) throw ConfigError("mask_rate must be in (0, 1)");
  std::vector<std::size_t> content;
  for (std::size_t i = 0; i < seq.roles.size(); ++i)
    if (seq.roles[i] == Role::Content) content.push_back(i);
  if (content.empty()) throw NoContent("sequence has no content tokens to mask");
  if (corruption == Corruption::Bert801010 && vocab_size <= static_cast<std::size_t>(Vocab::kNumSpecials)) {
    throw ConfigError("bert-80-10-10 corruption needs the vocabulary size");
  }

  MaskedSequence out;
  out.input = seq;
  out.labels.assign(seq.size(), kIgnoreLabel);
  const auto picks = rng.sample_without_replacement(content.size(), mask_count(content.size(), mask_rate));
  for (auto p : picks) out.mask_positions.push_back(content[p]);
  std::sort(out.mask_positions.begin(), out.mask_positions.end());
  for (auto pos : out.mask_positions) {
    out.labels[pos] = seq.ids[pos];
    if (corruption == Corruption::PureMask) {
      out.input.ids[pos] = Vocab::kMask;
      out.input.roles[pos] = Role::Mask;
      continue;
    }
    const double u = rng.uniform01();
    if (u < 0.8) {
      out.input.ids[pos] = Vocab::kMask;
      out.input.roles[pos] = Role::Mask;
    } else if (u < 0.9) {
      const auto span = vocab_size - static_cast<std::size_t>(Vocab::kNumSpecials);
      out.input.ids[pos] = Vocab::kNumSpecials + static_cast<TokenId>(rng.uniform_index(span));
    }
  }
  return out;
}

template <typename T>
Tensor<T> mlm_loss(const Tensor<T>& logits, std::span<const TokenId> labels) {
  if (logits.rows() != labels.size()) throw ShapeMismatch("mlm_loss: one logits row per label required");
  if (std::none_of(labels.begin(), labels.end(), [](TokenId l) { return l != kIgnoreLabel; })) {
    throw EmptyMaskSet("mlm_loss: no masked positions");
  }
  return cross_entropy(logits, labels);
}

void validate_pair_map(std::span<const std::size_t> pair_of) {
  if (pair_of.size() % 2 != 0) throw ShapeMismatch("contrastive batch needs an even number of items");
  for (std::size_t i = 0; i < pair_of.size(); ++i) {
    const auto j = pair_of[i];
    if (j >= pair_of.size() || j == i || pair_of[j] != i) {
      throw ShapeMismatch("pair map is not a fixed-point-free involution at index " + std::to_string(i));
    }
  }
}

template <typename T>
Tensor<T> tcm_loss(const Tensor<T>& reps, std::span<const std::size_t> pair_of, double tau) {
  if (!(tau > 0.0)) throw ConfigError("temperature must be positive");
  const auto n = reps.rows();
  if (pair_of.size() != n) throw ShapeMismatch("pair map size does not match representation count");
  validate_pair_map(pair_of);

  const Tensor<T> sims = scale(cosine_similarity_matrix(reps, reps), static_cast<T>(1.0 / tau));
  // Anchors never contrast against themselves.
  std::vector<T> self_mask(n * n, T(0));
  for (std::size_t i = 0; i < n; ++i) self_mask[i * n + i] = -std::numeric_limits<T>::infinity();
  std::vector<std::int32_t> targets(pair_of.begin(), pair_of.end());
  return cross_entropy(add_constant<T>(sims, self_mask), targets);
}

void LossWeights::validate() const {
  if (mlm < 0 || mlm_trans < 0 || tcm < 0) throw ConfigError("loss weights must be non-negative");
  if (mlm == 0 && mlm_trans == 0 && tcm == 0) throw ConfigError("at least one loss weight must be positive");
}

template <typename T>
Tensor<T> combined_loss(const Tensor<T>& l_mlm, const Tensor<T>& l_mlm_trans, const Tensor<T>& l_tcm,
                        const LossWeights& weights) {
  weights.validate();
  const std::pair<const Tensor<T>*, double> terms[] = {{&l_mlm, weights.mlm}, {&l_mlm_trans, weights.mlm_trans},
                                                       {&l_tcm, weights.tcm}};
  Tensor<T> total;
  for (const auto& [term, w] : terms) {
    if (term->defined() && !std::isfinite(static_cast<double>(term->item()))) {
      throw NonFinite("loss term is not finite");
    }
    if (w == 0.0) continue;
    if (!term->defined()) throw ShapeMismatch("loss term with positive weight is missing");
    const Tensor<T> scaled = scale(*term, static_cast<T>(w));
    total = total.defined() ? add(total, scaled) : scaled;
  }
  return total;
}

template Tensor<float> mlm_loss<float>(const Tensor<float>&, std::span<const TokenId>);
template Tensor<double> mlm_loss<double>(const Tensor<double>&, std::span<const TokenId>);
template Tensor<float> tcm_loss<float>(const Tensor<float>&, std::span<const std::size_t>, double);
template Tensor<double> tcm_loss<double>(const Tensor<double>&, std::span<const std::size_t>, double);
template Tensor<float> combined_loss<float>(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                            const LossWeights&);
template Tensor<double> combined_loss<double>(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                                              const LossWeights&);

}  // namespace translico
