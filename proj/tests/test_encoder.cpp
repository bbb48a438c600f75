#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "translico/encoder.hpp"
#include "translico/errors.hpp"
#include "translico/objectives.hpp"

using namespace translico;

namespace {

ModelConfig tiny(int layers = 2) {
  ModelConfig c;
  c.n_layers = layers;
  c.n_heads = 2;
  c.d_model = 8;
  c.d_ff = 16;
  c.vocab_size = 30;
  c.max_len = 64;
  c.pool_layer = ModelConfig::default_pool_layer(layers);
  return c;
}

TokenSequence seq(std::vector<TokenId> content, std::size_t len) {
  TokenSequence s;
  s.ids.push_back(Vocab::kCls);
  s.roles.push_back(Role::Cls);
  for (auto id : content) {
    s.ids.push_back(id);
    s.roles.push_back(id == Vocab::kMask ? Role::Mask : Role::Content);
  }
  s.ids.push_back(Vocab::kSep);
  s.roles.push_back(Role::Sep);
  while (s.ids.size() < len) {
    s.ids.push_back(Vocab::kPad);
    s.roles.push_back(Role::Pad);
  }
  return s;
}

}  // namespace

TEST_CASE("model config defaults and validation") {
  const ModelConfig d;
  CHECK(d.n_layers == 4);
  CHECK(d.pool_layer == 3);
  CHECK(ModelConfig::default_pool_layer(4) == 3);
  CHECK(ModelConfig::default_pool_layer(ModelConfig::kReferenceLayers) == ModelConfig::kReferencePoolLayer);
  CHECK(ModelConfig::default_pool_layer(2) == 2);
  auto bad = tiny();
  bad.n_heads = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = tiny();
  bad.pool_layer = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(ModelConfig::from_json({{"n_layers", 2}, {"dropout", 0.1}}), ConfigError);
  const auto parsed = ModelConfig::from_json({{"n_layers", 6}, {"vocab_size", 40}});
  CHECK(parsed.pool_layer == 4);
  CHECK(ModelConfig::from_json(tiny().to_json()).to_json() == tiny().to_json());
}

TEST_CASE("forward shapes and degenerate depth") {
  const Encoder<float> enc(tiny(), 3);
  const std::vector<TokenSequence> batch = {seq({5, 6, 7}, 6), seq({8}, 6)};
  const auto out = enc.forward(batch);
  CHECK(out.hidden.size() == 3);
  for (const auto& h : out.hidden) CHECK(h.shape() == Shape{12, 8});
  CHECK(enc.mlm_logits(out).shape() == Shape{12, 30});

  auto zero_cfg = tiny(0);
  const Encoder<float> flat(zero_cfg, 3);
  CHECK(flat.forward(batch).hidden.size() == 1);

  std::vector<TokenSequence> ragged = {seq({5}, 4), seq({5}, 5)};
  CHECK_THROWS_AS(enc.forward(ragged), ShapeMismatch);
  std::vector<TokenSequence> bad_id = {seq({99}, 4)};
  CHECK_THROWS_AS(enc.forward(bad_id), IdOutOfRange);
  std::vector<TokenSequence> too_long = {seq({5}, 65)};
  CHECK_THROWS_AS(enc.forward(too_long), ShapeMismatch);
}

TEST_CASE("identical sequences give identical rows") {
  const Encoder<float> enc(tiny(), 4);
  const std::vector<TokenSequence> batch = {seq({5, 9, 11}, 7), seq({5, 9, 11}, 7)};
  const auto out = enc.forward(batch);
  const auto& last = out.hidden.back();
  // GEMM blocking may differ between row positions, so allow rounding.
  for (std::size_t i = 0; i < 7 * 8; ++i) CHECK(std::abs(last.values()[i] - last.values()[7 * 8 + i]) <= 1e-6);
}

TEST_CASE("pooled representation does not depend on padding length") {
  const Encoder<float> enc(tiny(3), 5);
  const std::vector<TokenSequence> a = {seq({5, 9, 11, 4, 13}, 32)};
  const std::vector<TokenSequence> b = {seq({5, 9, 11, 4, 13}, 64)};
  const auto pa = enc.mean_pool(enc.forward(a), a, 2);
  const auto pb = enc.mean_pool(enc.forward(b), b, 2);
  for (std::size_t i = 0; i < 8; ++i) CHECK(std::abs(pa.values()[i] - pb.values()[i]) <= 1e-5);
}

TEST_CASE("mean_pool averages content and mask rows only") {
  const Encoder<float> enc(tiny(0), 1);
  EncoderOutput<float> out;
  out.batch = 1;
  out.seq_len = 5;
  // Rows: [cls] [content] [mask] [sep] [pad], d_model = 8; only the first two columns vary.
  std::vector<float> v(5 * 8, 0.0f);
  const float rows[5][2] = {{50, 50}, {1, 0}, {3, 0}, {-7, 7}, {99, 99}};
  for (int r = 0; r < 5; ++r) {
    v[r * 8] = rows[r][0];
    v[r * 8 + 1] = rows[r][1];
  }
  out.hidden.push_back(Tensor<float>::from({5, 8}, v));
  TokenSequence s;
  s.ids = {Vocab::kCls, 9, Vocab::kMask, Vocab::kSep, Vocab::kPad};
  s.roles = {Role::Cls, Role::Content, Role::Mask, Role::Sep, Role::Pad};
  const std::vector<TokenSequence> batch = {s};
  const auto p = enc.mean_pool(out, batch, 0);
  CHECK(p.values()[0] == 2.0f);
  CHECK(p.values()[1] == 0.0f);

  const std::vector<TokenSequence> empty = {seq({}, 4)};
  CHECK_THROWS_AS(enc.mean_pool(enc.forward(empty), empty, 0), EmptyPool);
  CHECK_THROWS_AS(enc.mean_pool(out, batch, 1), ConfigError);
}

TEST_CASE("MLM head is tied to the embedding") {
  Encoder<double> enc = Encoder<float>(tiny(0), 2).cast<double>();
  const Tensor<double> zero = Tensor<double>::zeros({1, 8});
  const auto zero_logits = enc.mlm_head(zero);
  for (double x : zero_logits.values()) CHECK(x == 0.0);

  const Tensor<double> h = Tensor<double>::from({1, 8}, {1, -1, 2, 0, 0.5, -2, 1, 0});
  // Align row 7 of the embedding with the normalized hidden state, then grow it.
  const auto ln = layer_norm(h, enc.params().get("mlm.ln.gamma"), enc.params().get("mlm.ln.beta"));
  auto tok = enc.params().get("embed.tok");
  auto tv = tok.mutable_values();
  for (std::size_t c = 0; c < 8; ++c) tv[7 * 8 + c] = ln.values()[c] * 0.1;
  const double before = enc.mlm_head(h).values()[7];
  for (std::size_t c = 0; c < 8; ++c) tv[7 * 8 + c] *= 2.0;
  const double after = enc.mlm_head(h).values()[7];
  CHECK(before > 0.0);
  CHECK(after > before);
}

TEST_CASE("pool layer choice never changes MLM logits") {
  auto c1 = tiny(3);
  c1.pool_layer = 1;
  auto c2 = tiny(3);
  c2.pool_layer = 3;
  const Encoder<float> e1(c1, 9), e2(c2, 9);
  const std::vector<TokenSequence> batch = {seq({5, Vocab::kMask, 7, 8}, 8)};
  const auto l1 = e1.mlm_logits(e1.forward(batch));
  const auto l2 = e2.mlm_logits(e2.forward(batch));
  for (std::size_t i = 0; i < l1.numel(); ++i) CHECK(l1.values()[i] == l2.values()[i]);
}

TEST_CASE("every parameter receives gradient from the combined loss") {
  auto cfg = tiny(3);
  cfg.max_len = 8;
  Encoder<double> enc = Encoder<float>(cfg, 13).cast<double>();
  const std::vector<TokenSequence> batch = {seq({5, Vocab::kMask, 7, 8, 9, 10}, 8), seq({11, 12, Vocab::kMask, 14, 15, 16}, 8),
                                            seq({Vocab::kMask, 18, 19, 20, 21, 22}, 8), seq({23, 24, 25, 26, 27, Vocab::kMask}, 8)};
  const auto out = enc.forward(batch);
  const std::size_t rows[] = {2, 8 + 3, 16 + 1, 24 + 6};
  const TokenId labels[] = {6, 13, 17, 28};
  const auto mlm = mlm_loss(enc.mlm_logits_at(out, rows), labels);
  const std::size_t pair_of[] = {2, 3, 0, 1};
  const auto tcm = tcm_loss(enc.mean_pool(out, batch, cfg.pool_layer), pair_of, 1.0);
  backward(add(mlm, tcm));
  for (std::size_t i = 0; i < enc.params().size(); ++i) {
    const auto& t = enc.params().tensors()[i];
    bool any = false;
    for (double g : t.grad()) any = any || g != 0.0;
    CHECK_MESSAGE(any, enc.params().names()[i]);
  }
}

TEST_CASE("parameter names and checkpoint round trip") {
  const Encoder<float> enc(tiny(), 21);
  const auto& names = enc.params().names();
  for (const char* n : {"embed.tok", "embed.pos", "layer.0.attn.q", "layer.1.ffn.out.bias", "mlm.bias"}) {
    CHECK(std::find(names.begin(), names.end(), n) != names.end());
  }
  const auto mlm_only = enc.mlm_only_parameter_names();
  CHECK(std::find(mlm_only.begin(), mlm_only.end(), "mlm.bias") != mlm_only.end());
  CHECK(std::find(mlm_only.begin(), mlm_only.end(), "embed.tok") == mlm_only.end());

  TempDir dir("enc");
  save_checkpoint(dir / "e.ckpt", to_named_tensors(enc), {{"model_config", enc.config().to_json()}});
  const Encoder<float> back = encoder_from_checkpoint(load_checkpoint(dir / "e.ckpt"), enc.config());
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto a = enc.params().tensors()[i].values();
    const auto b = back.params().get(names[i]).values();
    CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
  }
  auto other = tiny();
  other.d_model = 16;
  CHECK_THROWS_AS(encoder_from_checkpoint(load_checkpoint(dir / "e.ckpt"), other), ConfigError);
}

TEST_CASE("initialization is a function of the seed") {
  const Encoder<float> a(tiny(), 1), b(tiny(), 1), c(tiny(), 2);
  const auto va = a.params().get("layer.0.attn.q").values();
  const auto vb = b.params().get("layer.0.attn.q").values();
  const auto vc = c.params().get("layer.0.attn.q").values();
  CHECK(std::equal(va.begin(), va.end(), vb.begin()));
  CHECK_FALSE(std::equal(va.begin(), va.end(), vc.begin()));
}
