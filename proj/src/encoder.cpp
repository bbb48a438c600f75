#include "translico/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "translico/errors.hpp"
#include "translico/rng.hpp"

namespace translico {

using nlohmann::json;

namespace {

enum class Init { Normal, Zeros, Ones };

struct ParamSpec {
  std::string name;
  Shape shape;
  Init init;
};

// Variance 1/fan_in; an embedding row counts d_model as its fan-in.
double init_std(const ParamSpec& spec) {
  const bool embedding = spec.name.rfind("embed.", 0) == 0;
  return 1.0 / std::sqrt(static_cast<double>(embedding ? spec.shape[1] : spec.shape[0]));
}

std::vector<ParamSpec> parameter_specs(const ModelConfig& c) {
  const auto d = static_cast<std::size_t>(c.d_model);
  const auto ff = static_cast<std::size_t>(c.d_ff);
  std::vector<ParamSpec> specs = {
      {"embed.tok", {static_cast<std::size_t>(c.vocab_size), d}, Init::Normal},
      {"embed.pos", {static_cast<std::size_t>(c.max_len), d}, Init::Normal},
  };
  for (int i = 0; i < c.n_layers; ++i) {
    const std::string p = "layer." + std::to_string(i) + ".";
    specs.push_back({p + "ln1.gamma", {d}, Init::Ones});
    specs.push_back({p + "ln1.beta", {d}, Init::Zeros});
    for (const char* w : {"q", "k", "v", "o"}) {
      specs.push_back({p + "attn." + w, {d, d}, Init::Normal});
      // Keys carry no bias.
      if (std::string_view(w) != "k") specs.push_back({p + "attn." + w + ".bias", {d}, Init::Zeros});
    }
    specs.push_back({p + "ln2.gamma", {d}, Init::Ones});
    specs.push_back({p + "ln2.beta", {d}, Init::Zeros});
    specs.push_back({p + "ffn.in", {d, ff}, Init::Normal});
    specs.push_back({p + "ffn.in.bias", {ff}, Init::Zeros});
    specs.push_back({p + "ffn.out", {ff, d}, Init::Normal});
    specs.push_back({p + "ffn.out.bias", {d}, Init::Zeros});
  }
  specs.push_back({"mlm.ln.gamma", {d}, Init::Ones});
  specs.push_back({"mlm.ln.beta", {d}, Init::Zeros});
  specs.push_back({"mlm.bias", {static_cast<std::size_t>(c.vocab_size)}, Init::Zeros});
  return specs;
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("model config: " + what); };
  if (n_layers < 0) fail("n_layers must be >= 0");
  if (n_heads < 1) fail("n_heads must be >= 1");
  if (d_model < 1 || d_model % n_heads != 0) fail("d_model must be a positive multiple of n_heads");
  if (d_ff < 1) fail("d_ff must be >= 1");
  if (vocab_size < Vocab::kNumSpecials) fail("vocab_size must cover the special tokens");
  if (max_len < 2) fail("max_len must be >= 2");
  const int lo = n_layers == 0 ? 0 : 1;
  if (pool_layer < lo || pool_layer > n_layers) {
    fail("pool_layer " + std::to_string(pool_layer) + " outside [" + std::to_string(lo) + ", " +
         std::to_string(n_layers) + "]");
  }
}

json ModelConfig::to_json() const {
  return {{"n_layers", n_layers}, {"n_heads", n_heads},       {"d_model", d_model},
          {"d_ff", d_ff},         {"vocab_size", vocab_size}, {"max_len", max_len},
          {"pool_layer", pool_layer}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  bool pool_given = false;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "n_layers") c.n_layers = value.get<int>();
      else if (key == "n_heads") c.n_heads = value.get<int>();
      else if (key == "d_model") c.d_model = value.get<int>();
      else if (key == "d_ff") c.d_ff = value.get<int>();
      else if (key == "vocab_size") c.vocab_size = value.get<int>();
      else if (key == "max_len") c.max_len = value.get<int>();
      else if (key == "pool_layer") c.pool_layer = value.get<int>(), pool_given = true;
      else throw ConfigError("unknown model config field '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  if (!pool_given) c.pool_layer = default_pool_layer(c.n_layers);
  return c;
}

template <typename T>
Tensor<T>& ParameterSet<T>::add(std::string name, Tensor<T> tensor) {
  if (contains(name)) throw ConfigError("duplicate parameter " + name);
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(tensor));
  return tensors_.back();
}

template <typename T>
bool ParameterSet<T>::contains(const std::string& name) const {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

template <typename T>
const Tensor<T>& ParameterSet<T>::get(const std::string& name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw ConfigError("missing parameter " + name);
  return tensors_[static_cast<std::size_t>(it - names_.begin())];
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& t : tensors_) t.zero_grad();
}

template <typename T>
Encoder<T>::Encoder(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng = Rng::stream(seed, "init");
  for (const auto& spec : parameter_specs(config_)) {
    std::vector<T> values(shape_numel(spec.shape), T(0));
    if (spec.init == Init::Ones) std::fill(values.begin(), values.end(), T(1));
    if (spec.init == Init::Normal) {
      const double std = init_std(spec);
      for (auto& v : values) v = static_cast<T>(rng.normal(0.0, std));
    }
    params_.add(spec.name, Tensor<T>::from(spec.shape, std::move(values), true));
  }
  bind();
}

template <typename T>
Encoder<T>::Encoder(const ModelConfig& config, ParameterSet<T> params) : config_(config), params_(std::move(params)) {
  config_.validate();
  for (const auto& spec : parameter_specs(config_)) {
    const auto& t = params_.get(spec.name);
    if (t.shape() != spec.shape) {
      throw ConfigError("parameter " + spec.name + " has shape " + shape_string(t.shape()) + ", expected " +
                        shape_string(spec.shape));
    }
  }
  bind();
}

template <typename T>
void Encoder<T>::bind() {
  tok_ = params_.get("embed.tok");
  pos_ = params_.get("embed.pos");
  head_ln_g_ = params_.get("mlm.ln.gamma");
  head_ln_b_ = params_.get("mlm.ln.beta");
  head_bias_ = params_.get("mlm.bias");
  layers_.clear();
  for (int i = 0; i < config_.n_layers; ++i) {
    const std::string p = "layer." + std::to_string(i) + ".";
    auto g = [&](const std::string& n) { return params_.get(p + n); };
    layers_.push_back({g("ln1.gamma"), g("ln1.beta"), g("attn.q"), g("attn.q.bias"), g("attn.k"),
                       g("attn.v"), g("attn.v.bias"), g("attn.o"), g("attn.o.bias"), g("ln2.gamma"), g("ln2.beta"),
                       g("ffn.in"), g("ffn.in.bias"), g("ffn.out"), g("ffn.out.bias")});
  }
}

template <typename T>
template <typename U>
Encoder<U> Encoder<T>::cast() const {
  ParameterSet<U> out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& t = params_.tensors()[i];
    out.add(params_.names()[i], cast_leaf<U>(t, t.requires_grad()));
  }
  return Encoder<U>(config_, std::move(out));
}

template <typename T>
EncoderOutput<T> Encoder<T>::forward(std::span<const TokenSequence> batch) const {
  if (batch.empty()) throw ShapeMismatch("forward on an empty batch");
  const std::size_t L = batch.front().size();
  for (const auto& s : batch) {
    if (s.size() != L || s.roles.size() != L) throw ShapeMismatch("batch is not uniformly padded");
  }
  if (L > static_cast<std::size_t>(config_.max_len)) {
    throw ShapeMismatch("sequence length " + std::to_string(L) + " exceeds max_len " + std::to_string(config_.max_len));
  }
  const std::size_t B = batch.size();
  std::vector<std::int32_t> ids, positions;
  std::vector<std::uint8_t> valid;
  ids.reserve(B * L);
  positions.reserve(B * L);
  valid.reserve(B * L);
  for (const auto& s : batch) {
    for (std::size_t i = 0; i < L; ++i) {
      ids.push_back(s.ids[i]);
      positions.push_back(static_cast<std::int32_t>(i));
      valid.push_back(s.roles[i] != Role::Pad ? 1 : 0);
    }
  }

  EncoderOutput<T> out;
  out.batch = B;
  out.seq_len = L;
  Tensor<T> x = add(embed_lookup(tok_, ids), embed_lookup(pos_, positions));
  out.hidden.push_back(x);
  const auto heads = static_cast<std::size_t>(config_.n_heads);
  for (const auto& layer : layers_) {
    const Tensor<T> h = layer_norm(x, layer.ln1_g, layer.ln1_b);
    const Tensor<T> q = add_bias(matmul(h, layer.wq), layer.bq);
    const Tensor<T> k = matmul(h, layer.wk);
    const Tensor<T> v = add_bias(matmul(h, layer.wv), layer.bv);
    const Tensor<T> attn = masked_self_attention(q, k, v, B, L, heads, valid);
    x = add(x, add_bias(matmul(attn, layer.wo), layer.bo));
    const Tensor<T> h2 = layer_norm(x, layer.ln2_g, layer.ln2_b);
    const Tensor<T> ff = add_bias(matmul(gelu(add_bias(matmul(h2, layer.w1), layer.b1)), layer.w2), layer.b2);
    x = add(x, ff);
    out.hidden.push_back(x);
  }
  return out;
}

template <typename T>
Tensor<T> Encoder<T>::mean_pool(const EncoderOutput<T>& out, std::span<const TokenSequence> batch, int layer) const {
  if (layer < 0 || static_cast<std::size_t>(layer) >= out.hidden.size()) {
    throw ConfigError("pool layer " + std::to_string(layer) + " out of range");
  }
  if (batch.size() != out.batch) throw ShapeMismatch("pool batch does not match encoder output");
  std::vector<std::vector<std::size_t>> groups(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    for (std::size_t i = 0; i < out.seq_len; ++i) {
      const Role r = batch[b].roles[i];
      if (r == Role::Content || r == Role::Mask) groups[b].push_back(b * out.seq_len + i);
    }
    if (groups[b].empty()) throw EmptyPool("sequence " + std::to_string(b) + " has no content or [mask] tokens");
  }
  return segment_mean_rows(out.hidden[static_cast<std::size_t>(layer)], groups);
}

template <typename T>
Tensor<T> Encoder<T>::mlm_head(const Tensor<T>& hidden) const {
  return add_bias(matmul_nt(layer_norm(hidden, head_ln_g_, head_ln_b_), tok_), head_bias_);
}

template <typename T>
Tensor<T> Encoder<T>::mlm_logits(const EncoderOutput<T>& out) const {
  return mlm_head(out.hidden.back());
}

template <typename T>
Tensor<T> Encoder<T>::mlm_logits_at(const EncoderOutput<T>& out, std::span<const std::size_t> rows) const {
  return mlm_head(gather_rows(out.hidden.back(), rows));
}

template <typename T>
std::vector<std::string> Encoder<T>::mlm_only_parameter_names() const {
  std::vector<std::string> names = {"mlm.ln.gamma", "mlm.ln.beta", "mlm.bias"};
  for (int i = config_.pool_layer; i < config_.n_layers; ++i) {
    const std::string p = "layer." + std::to_string(i) + ".";
    for (const auto& n : params_.names()) {
      if (n.rfind(p, 0) == 0) names.push_back(n);
    }
  }
  return names;
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template class Encoder<float>;
template class Encoder<double>;
template Encoder<double> Encoder<float>::cast<double>() const;
template Encoder<float> Encoder<double>::cast<float>() const;
template Encoder<float> Encoder<float>::cast<float>() const;

NamedTensors to_named_tensors(const Encoder<float>& encoder) {
  NamedTensors out;
  const auto& p = encoder.params();
  for (std::size_t i = 0; i < p.size(); ++i) out.emplace_back(p.names()[i], p.tensors()[i]);
  return out;
}

Encoder<float> encoder_from_checkpoint(const Checkpoint& ckpt, const ModelConfig& config) {
  ParameterSet<float> params;
  for (const auto& spec : parameter_specs(config)) {
    const auto* t = ckpt.find(spec.name);
    if (t == nullptr) throw ConfigError("checkpoint lacks parameter " + spec.name);
    params.add(spec.name, cast_leaf<float>(*t, true));
  }
  return Encoder<float>(config, std::move(params));
}

std::vector<TokenSequence> trim_padding(std::span<const TokenSequence> batch) {
  std::size_t longest = 0;
  for (const auto& s : batch) {
    std::size_t last = 0;
    for (std::size_t i = 0; i < s.roles.size(); ++i)
      if (s.roles[i] != Role::Pad) last = i + 1;
    longest = std::max(longest, last);
  }
  std::vector<TokenSequence> out(batch.begin(), batch.end());
  for (auto& s : out) {
    s.ids.resize(longest, Vocab::kPad);
    s.roles.resize(longest, Role::Pad);
  }
  return out;
}

}  // namespace translico
