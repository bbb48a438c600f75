#include "translico/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "translico/errors.hpp"

namespace translico {

using nlohmann::json;

namespace {

constexpr const char* kCheckpointFormat = "translico-train/1";

template <typename V>
void read_field(const json& j, const char* key, V& out) {
  out = j.get<V>();
  (void)key;
}

}  // namespace

void TrainConfig::validate() const {
  weights.validate();
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  if (!(mask_rate > 0.0 && mask_rate < 1.0)) throw ConfigError("mask_rate must be in (0, 1)");
  if (batch_pairs < 1) throw ConfigError("batch_pairs must be >= 1");
  if (steps < 1) throw ConfigError("steps must be >= 1");
  if (!(adam.lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw ConfigError("Adam betas must be in [0, 1)");
  }
  if (!(adam.eps > 0.0)) throw ConfigError("eps_adam must be positive");
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
}

json TrainConfig::to_json() const {
  json model_json = model.to_json();
  model_json.erase("vocab_size");
  return {{"weights", {{"mlm", weights.mlm}, {"mlm_trans", weights.mlm_trans}, {"tcm", weights.tcm}}},
          {"tau", tau},
          {"mask_rate", mask_rate},
          {"corruption", std::string(to_string(corruption))},
          {"batch_pairs", batch_pairs},
          {"steps", steps},
          {"lr", adam.lr},
          {"beta1", adam.beta1},
          {"beta2", adam.beta2},
          {"eps_adam", adam.eps},
          {"seed", seed},
          {"checkpoint_every", checkpoint_every},
          {"include_latin", include_latin},
          {"tcm_clean_forward", tcm_clean_forward},
          {"model", model_json},
          {"vocab_size", vocab_size},
          {"early_stop_patience", early_stop_patience}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  TrainConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "weights") {
        for (const auto& [wk, wv] : value.items()) {
          if (wk == "mlm") c.weights.mlm = wv.get<double>();
          else if (wk == "mlm_trans") c.weights.mlm_trans = wv.get<double>();
          else if (wk == "tcm") c.weights.tcm = wv.get<double>();
          else throw ConfigError("unknown weights field '" + wk + "'");
        }
      } else if (key == "tau") read_field(value, "tau", c.tau);
      else if (key == "mask_rate") read_field(value, "mask_rate", c.mask_rate);
      else if (key == "corruption") c.corruption = parse_corruption(value.get<std::string>());
      else if (key == "batch_pairs") read_field(value, "batch_pairs", c.batch_pairs);
      else if (key == "steps") read_field(value, "steps", c.steps);
      else if (key == "lr") read_field(value, "lr", c.adam.lr);
      else if (key == "beta1") read_field(value, "beta1", c.adam.beta1);
      else if (key == "beta2") read_field(value, "beta2", c.adam.beta2);
      else if (key == "eps_adam") read_field(value, "eps_adam", c.adam.eps);
      else if (key == "seed") read_field(value, "seed", c.seed);
      else if (key == "checkpoint_every") read_field(value, "checkpoint_every", c.checkpoint_every);
      else if (key == "include_latin") read_field(value, "include_latin", c.include_latin);
      else if (key == "tcm_clean_forward") read_field(value, "tcm_clean_forward", c.tcm_clean_forward);
      else if (key == "model") c.model = ModelConfig::from_json(value);
      else if (key == "vocab_size") read_field(value, "vocab_size", c.vocab_size);
      else if (key == "early_stop_patience") read_field(value, "early_stop_patience", c.early_stop_patience);
      else throw ConfigError("unknown train config field '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

TrainConfig TrainConfig::finetune_preset() {
  TrainConfig c;
  c.adam.lr = 1e-5;
  c.adam.beta1 = 0.9;
  c.adam.beta2 = 0.999;
  c.adam.eps = 1e-6;
  c.checkpoint_every = 2000;
  c.mask_rate = 0.15;
  c.tau = 1.0;
  return c;
}

std::string format_metrics_row(const StepRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g", r.step, r.loss_mlm, r.loss_mlm_trans, r.loss_tcm,
                r.loss_total);
  return buf;
}

std::vector<EncodedPair> encode_pairs(const std::vector<SentencePair>& pairs, const Vocab& vocab,
                                      std::size_t max_len) {
  std::vector<EncodedPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    if (!p.translit) throw FormatError("pair " + p.id + " has no translit; run build-corpus first");
    out.push_back({vocab.encode(p.text, max_len), vocab.encode(*p.translit, max_len)});
  }
  return out;
}

TrainingBatch make_batch(std::span<const EncodedPair> pool, const TrainConfig& config, std::size_t vocab_size,
                         Rng& rng) {
  const std::size_t n = config.batch_pairs;
  if (pool.size() < n) {
    throw StreamExhausted("need " + std::to_string(n) + " pairs per batch, pool has " + std::to_string(pool.size()));
  }
  TrainingBatch batch;
  batch.source_index = rng.sample_without_replacement(pool.size(), n);
  for (auto idx : batch.source_index) {
    batch.orig.push_back(apply_masking(pool[idx].orig, config.mask_rate, rng, config.corruption, vocab_size));
    batch.trans.push_back(apply_masking(pool[idx].trans, config.mask_rate, rng, config.corruption, vocab_size));
  }
  batch.pair_of.resize(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    batch.pair_of[i] = i + n;
    batch.pair_of[i + n] = i;
  }
  return batch;
}

template <typename T>
BatchLosses<T> batch_losses(const Encoder<T>& encoder, const TrainingBatch& batch, std::span<const EncodedPair> pool,
                            const TrainConfig& config) {
  const std::size_t n = batch.orig.size();

  std::vector<TokenSequence> seqs;
  seqs.reserve(2 * n);
  for (const auto& m : batch.orig) seqs.push_back(m.input);
  for (const auto& m : batch.trans) seqs.push_back(m.input);
  seqs = trim_padding(seqs);
  const std::size_t L = seqs.front().size();

  const EncoderOutput<T> out = encoder.forward(seqs);

  auto masked_rows = [&](const std::vector<MaskedSequence>& part, std::size_t first_item) {
    std::pair<std::vector<std::size_t>, std::vector<TokenId>> r;
    for (std::size_t b = 0; b < part.size(); ++b) {
      for (auto pos : part[b].mask_positions) {
        r.first.push_back((first_item + b) * L + pos);
        r.second.push_back(part[b].labels[pos]);
      }
    }
    return r;
  };
  const auto [rows_o, labels_o] = masked_rows(batch.orig, 0);
  const auto [rows_t, labels_t] = masked_rows(batch.trans, n);
  const Tensor<T> l_mlm = mlm_loss(encoder.mlm_logits_at(out, rows_o), labels_o);
  const Tensor<T> l_trans = mlm_loss(encoder.mlm_logits_at(out, rows_t), labels_t);

  Tensor<T> reps;
  if (config.tcm_clean_forward) {
    std::vector<TokenSequence> clean;
    for (auto idx : batch.source_index) clean.push_back(pool[idx].orig);
    for (auto idx : batch.source_index) clean.push_back(pool[idx].trans);
    clean = trim_padding(clean);
    reps = encoder.mean_pool(encoder.forward(clean), clean, config.model.pool_layer);
  } else {
    reps = encoder.mean_pool(out, seqs, config.model.pool_layer);
  }
  const Tensor<T> l_tcm = tcm_loss(reps, batch.pair_of, config.tau);
  return {l_mlm, l_trans, l_tcm, combined_loss(l_mlm, l_trans, l_tcm, config.weights)};
}

template BatchLosses<float> batch_losses<float>(const Encoder<float>&, const TrainingBatch&, std::span<const EncodedPair>,
                                                const TrainConfig&);
template BatchLosses<double> batch_losses<double>(const Encoder<double>&, const TrainingBatch&,
                                                  std::span<const EncodedPair>, const TrainConfig&);

namespace {

ModelConfig resolve_model(ModelConfig m, const Vocab& vocab) {
  m.vocab_size = static_cast<int>(vocab.size());
  return m;
}

std::vector<EncodedPair> build_pool(const TrainConfig& config, const Vocab& vocab,
                                    const std::vector<SentencePair>& pairs) {
  std::vector<SentencePair> kept;
  for (const auto& p : pairs) {
    if (!config.include_latin && p.script == ScriptTag::Latn) continue;
    kept.push_back(p);
  }
  auto encoded = encode_pairs(kept, vocab, static_cast<std::size_t>(config.model.max_len));
  // Both members must have something to mask.
  std::erase_if(encoded, [](const EncodedPair& e) { return e.orig.content_length() == 0 || e.trans.content_length() == 0; });
  return encoded;
}

}  // namespace

Trainer::Trainer(TrainConfig config, const Vocab& vocab, const std::vector<SentencePair>& pairs)
    : config_(std::move(config)),
      vocab_size_(vocab.size()),
      pool_(build_pool(config_, vocab, pairs)),
      encoder_((config_.model = resolve_model(config_.model, vocab), config_.model), config_.seed) {
  config_.validate();
  if (pool_.size() < config_.batch_pairs) {
    throw StreamExhausted("training pool has " + std::to_string(pool_.size()) + " usable pairs, batch needs " +
                          std::to_string(config_.batch_pairs));
  }
}

StepRecord Trainer::step() {
  Rng rng = Rng::stream(config_.seed, "batch", step_);
  const TrainingBatch batch = make_batch(pool_, config_, vocab_size_, rng);
  const BatchLosses<float> losses = batch_losses(encoder_, batch, pool_, config_);
  const Tensor<float>& total = losses.total;
  if (!std::isfinite(total.item())) throw NonFinite("total loss is not finite at step " + std::to_string(step_ + 1));

  encoder_.params().zero_grad();
  backward(total);
  adam_step<float>(encoder_.params().tensors(), adam_, config_.adam);
  ++step_;
  return {step_, losses.mlm.item(), losses.mlm_trans.item(), losses.tcm.item(), total.item()};
}

void Trainer::save(const std::filesystem::path& path) const {
  NamedTensors tensors = to_named_tensors(encoder_);
  const auto& names = encoder_.params().names();
  if (!adam_.m.empty()) {
    for (std::size_t i = 0; i < names.size(); ++i) {
      const auto& shape = encoder_.params().tensors()[i].shape();
      tensors.emplace_back("adam.m." + names[i], Tensor<float>::from(shape, adam_.m[i]));
      tensors.emplace_back("adam.v." + names[i], Tensor<float>::from(shape, adam_.v[i]));
    }
  }
  json meta = {{"format", kCheckpointFormat},
               {"step", step_},
               {"adam_t", adam_.t},
               {"model_config", config_.model.to_json()},
               {"train_config", config_.to_json()}};
  save_checkpoint(path, tensors, meta);
}

void Trainer::restore(const std::filesystem::path& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  const ModelConfig stored = checkpoint_model_config(ckpt);
  if (stored.to_json() != config_.model.to_json()) {
    throw ConfigError("checkpoint model config does not match the training config");
  }
  auto& params = encoder_.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto* t = ckpt.find(params.names()[i]);
    if (t == nullptr || t->shape() != params.tensors()[i].shape()) {
      throw ConfigError("checkpoint lacks a matching tensor for " + params.names()[i]);
    }
    std::copy(t->values().begin(), t->values().end(), params.tensors()[i].mutable_values().begin());
  }
  adam_ = AdamState<float>{};
  adam_.t = ckpt.metadata.value("adam_t", std::int64_t{0});
  if (adam_.t > 0) {
    for (const auto& name : params.names()) {
      const auto* m = ckpt.find("adam.m." + name);
      const auto* v = ckpt.find("adam.v." + name);
      if (m == nullptr || v == nullptr) throw ConfigError("checkpoint lacks Adam state for " + name);
      adam_.m.emplace_back(m->values().begin(), m->values().end());
      adam_.v.emplace_back(v->values().begin(), v->values().end());
    }
  }
  step_ = ckpt.metadata.value("step", std::size_t{0});
}

ModelConfig checkpoint_model_config(const Checkpoint& ckpt) {
  if (!ckpt.metadata.contains("model_config")) throw ConfigError("checkpoint has no model_config metadata");
  return ModelConfig::from_json(ckpt.metadata.at("model_config"));
}

Encoder<float> load_encoder(const std::filesystem::path& checkpoint_path) {
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  return encoder_from_checkpoint(ckpt, checkpoint_model_config(ckpt));
}

TrainReport train(const TrainConfig& config, const std::vector<SentencePair>& pairs, const Vocab& vocab,
                  const std::filesystem::path& out_dir, const TrainOptions& options) {
  namespace fs = std::filesystem;
  const auto started = std::chrono::steady_clock::now();
  Trainer trainer(config, vocab, pairs);
  fs::create_directories(out_dir / "checkpoints");
  {
    std::ofstream cfg(out_dir / "config.json");
    if (!cfg) throw IoError("cannot write " + (out_dir / "config.json").string());
    cfg << trainer.config().to_json().dump(2) << '\n';
  }

  const fs::path metrics_path = out_dir / "metrics.csv";
  std::ofstream metrics;
  if (options.resume_from) {
    trainer.restore(*options.resume_from);
    metrics.open(metrics_path, std::ios::app);
  } else {
    metrics.open(metrics_path, std::ios::trunc);
    metrics << kMetricsHeader << '\n';
  }
  if (!metrics) throw IoError("cannot write " + metrics_path.string());

  TrainReport report;
  double best = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  const auto& cfg = trainer.config();
  fs::path last_checkpoint;
  while (trainer.steps_done() < cfg.steps) {
    StepRecord rec;
    try {
      rec = trainer.step();
    } catch (const NonFinite& e) {
      throw NonFinite(std::string(e.what()) + (last_checkpoint.empty() ? std::string("; no checkpoint written yet")
                                                                       : "; last good checkpoint: " + last_checkpoint.string()));
    }
    report.records.push_back(rec);
    metrics << format_metrics_row(rec) << '\n';
    metrics.flush();
    if (options.log != nullptr && (rec.step % options.log_every == 0 || rec.step == 1)) {
      *options.log << "step " << rec.step << " mlm " << rec.loss_mlm << " mlm_trans " << rec.loss_mlm_trans
                   << " tcm " << rec.loss_tcm << " total " << rec.loss_total << '\n';
    }
    if (rec.step % cfg.checkpoint_every == 0) {
      last_checkpoint = out_dir / "checkpoints" / ("step-" + std::to_string(rec.step) + ".ckpt");
      trainer.save(last_checkpoint);
    }
    if (cfg.early_stop_patience > 0) {
      if (rec.loss_total < best) {
        best = rec.loss_total;
        since_best = 0;
      } else if (++since_best >= cfg.early_stop_patience) {
        report.early_stopped = true;
        break;
      }
    }
  }
  report.final_checkpoint = out_dir / "model.ckpt";
  trainer.save(report.final_checkpoint);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

}  // namespace translico
