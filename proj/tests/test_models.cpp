#include <doctest.h>

#include <cmath>
#include <numeric>

#include "capkit/errors.hpp"
#include "capkit/gradcheck.hpp"
#include "capkit/model.hpp"
#include "capkit/rng.hpp"

using namespace capkit;

namespace {

ArchConfig tiny_arch(DecoderKind dec, AdapterKind ad, std::size_t e = 8, std::size_t layers = 1,
                     std::size_t heads = 2, std::size_t vocab = 9) {
  ArchConfig cfg;
  cfg.decoder = dec;
  cfg.adapter = ad;
  cfg.embed_size = e;
  cfg.num_layers = layers;
  cfg.num_heads = heads;
  cfg.ffn_size = 2 * e;
  cfg.vocab_size = vocab;
  cfg.max_len = 12;
  cfg.dropout = 0.0;
  switch (ad) {
    case AdapterKind::Single:
      cfg.feature_dim_a = 5;
      break;
    case AdapterKind::Detection:
      cfg.max_boxes = 3;
      cfg.num_classes = 4;
      break;
    case AdapterKind::Stacked:
      cfg.feature_dim_a = 5;
      cfg.feature_dim_b = 4;
      break;
  }
  return cfg;
}

Tensor<double> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = scale * (rng.uniform_real() * 2.0 - 1.0);
  return Tensor<double>::from(std::move(shape), std::move(v));
}

Tensor<double> random_boxes(std::size_t n, std::size_t classes, Rng& rng) {
  std::vector<double> v;
  for (std::size_t b = 0; b < n; ++b) {
    for (int k = 0; k < 4; ++k) v.push_back(rng.uniform_real());
    const std::size_t cls = rng.uniform_index(classes);
    for (std::size_t c = 0; c < classes; ++c) v.push_back(c == cls ? 1.0 : 0.0);
  }
  return Tensor<double>::from({n, 4 + classes}, std::move(v));
}

std::vector<Tensor<double>> random_streams(const ArchConfig& cfg, Rng& rng,
                                           std::size_t rows_a = 2) {
  switch (cfg.adapter) {
    case AdapterKind::Single:
      return {random_tensor({rows_a, cfg.feature_dim_a}, rng)};
    case AdapterKind::Detection:
      return {random_boxes(cfg.max_boxes - 1, cfg.num_classes, rng)};
    case AdapterKind::Stacked:
      return {random_tensor({rows_a, cfg.feature_dim_a}, rng),
              random_tensor({1, cfg.feature_dim_b}, rng)};
  }
  return {};
}

// --- independent plain-loop forward passes used as oracles ---

std::vector<double> vec(const Tensor<double>& t) { return t.values(); }

void oracle_layer_norm(std::vector<double>& x, std::size_t rows, std::size_t cols,
                       const std::vector<double>& gain, const std::vector<double>& bias) {
  for (std::size_t i = 0; i < rows; ++i) {
    double mean = 0;
    for (std::size_t j = 0; j < cols; ++j) mean += x[i * cols + j];
    mean /= static_cast<double>(cols);
    double var = 0;
    for (std::size_t j = 0; j < cols; ++j) {
      var += (x[i * cols + j] - mean) * (x[i * cols + j] - mean);
    }
    var /= static_cast<double>(cols);
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    for (std::size_t j = 0; j < cols; ++j) {
      x[i * cols + j] = (x[i * cols + j] - mean) * inv * gain[j] + bias[j];
    }
  }
}

std::vector<double> oracle_matvecs(const std::vector<double>& x, std::size_t rows,
                                   std::size_t in, const std::vector<double>& w, std::size_t out,
                                   const std::vector<double>& b) {
  std::vector<double> y(rows * out, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t o = 0; o < out; ++o) {
      double acc = b.empty() ? 0.0 : b[o];
      for (std::size_t k = 0; k < in; ++k) acc += x[i * in + k] * w[k * out + o];
      y[i * out + o] = acc;
    }
  }
  return y;
}

std::vector<double> oracle_attention(const std::vector<double>& q_in, std::size_t tq,
                                     const std::vector<double>& kv_in, std::size_t tk,
                                     std::size_t e, const Params<double>& p,
                                     const std::string& prefix, bool causal) {
  const auto q = oracle_matvecs(q_in, tq, e, vec(p.at(prefix + "wq.weight")), e,
                                vec(p.at(prefix + "wq.bias")));
  const auto k = oracle_matvecs(kv_in, tk, e, vec(p.at(prefix + "wk.weight")), e,
                                vec(p.at(prefix + "wk.bias")));
  const auto v = oracle_matvecs(kv_in, tk, e, vec(p.at(prefix + "wv.weight")), e,
                                vec(p.at(prefix + "wv.bias")));
  std::vector<double> ctx(tq * e, 0.0);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(e));  // one head
  for (std::size_t i = 0; i < tq; ++i) {
    std::vector<double> scores(tk);
    for (std::size_t j = 0; j < tk; ++j) {
      double dot = 0;
      for (std::size_t d = 0; d < e; ++d) dot += q[i * e + d] * k[j * e + d];
      scores[j] = dot * inv_sqrt + (causal && j > i ? -1e9 : 0.0);
    }
    double mx = scores[0];
    for (const double s : scores) mx = std::max(mx, s);
    double denom = 0;
    for (double& s : scores) {
      s = std::exp(s - mx);
      denom += s;
    }
    for (std::size_t j = 0; j < tk; ++j) {
      for (std::size_t d = 0; d < e; ++d) ctx[i * e + d] += scores[j] / denom * v[j * e + d];
    }
  }
  return oracle_matvecs(ctx, tq, e, vec(p.at(prefix + "wo.weight")), e,
                        vec(p.at(prefix + "wo.bias")));
}

// single layer, single head, written straight from the definition
std::vector<double> oracle_transformer(const ArchConfig& cfg, const Params<double>& p,
                                       const std::vector<int>& prefix,
                                       const std::vector<double>& enc, std::size_t enc_rows) {
  const std::size_t t = prefix.size(), e = cfg.embed_size;
  std::vector<double> x(t * e);
  const auto& embed = vec(p.at("embed.weight"));
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t d = 0; d < e; ++d) {
      const double expnt = static_cast<double>(2 * (d / 2)) / static_cast<double>(e);
      const double angle = static_cast<double>(i) / std::pow(10000.0, expnt);
      x[i * e + d] = embed[static_cast<std::size_t>(prefix[i]) * e + d] +
                     (d % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  auto residual = [&](const std::vector<double>& branch, const std::string& norm) {
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += branch[i];
    oracle_layer_norm(x, t, e, vec(p.at(norm + ".gain")), vec(p.at(norm + ".bias")));
  };
  residual(oracle_attention(x, t, x, t, e, p, "layers.0.self_attn.", true), "layers.0.self_norm");
  residual(oracle_attention(x, t, enc, enc_rows, e, p, "layers.0.cross_attn.", false),
           "layers.0.cross_norm");
  auto h = oracle_matvecs(x, t, e, vec(p.at("layers.0.ffn.w1.weight")), cfg.ffn(),
                          vec(p.at("layers.0.ffn.w1.bias")));
  for (double& v : h) v = std::max(0.0, v);
  residual(oracle_matvecs(h, t, cfg.ffn(), vec(p.at("layers.0.ffn.w2.weight")), e,
                          vec(p.at("layers.0.ffn.w2.bias"))),
           "layers.0.ffn_norm");
  return oracle_matvecs(x, t, e, vec(p.at("head.weight")), cfg.vocab_size,
                        vec(p.at("head.bias")));
}

}  // namespace

TEST_CASE("init_params is seed-deterministic with manifest shapes") {
  const ArchConfig cfg = tiny_arch(DecoderKind::Transformer, AdapterKind::Single);
  const auto a = init_params<double>(cfg, 99);
  const auto b = init_params<double>(cfg, 99);
  const auto c = init_params<double>(cfg, 100);
  const auto manifest = param_manifest(cfg);
  CHECK(a.order.size() == manifest.size());
  bool any_differs = false;
  for (const auto& spec : manifest) {
    CHECK(a.at(spec.name).shape() == spec.shape);
    CHECK(a.at(spec.name).values() == b.at(spec.name).values());
    if (a.at(spec.name).values() != c.at(spec.name).values()) any_differs = true;
  }
  CHECK(any_differs);
}

TEST_CASE("init stddev matches uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))") {
  ArchConfig cfg = tiny_arch(DecoderKind::Transformer, AdapterKind::Single, 256, 1, 4, 600);
  cfg.feature_dim_a = 512;
  const auto params = init_params<double>(cfg, 7);
  const auto& w = params.at("adapter.proj.weight").values();  // fan_in 512
  double mean = std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(w.size());
  double var = 0;
  for (const double v : w) var += (v - mean) * (v - mean);
  var /= static_cast<double>(w.size());
  const double expected_std = 1.0 / std::sqrt(3.0 * 512.0);
  CHECK(std::sqrt(var) == doctest::Approx(expected_std).epsilon(0.10));
}

TEST_CASE("lstm forget bias starts at one, other biases at zero") {
  const ArchConfig cfg = tiny_arch(DecoderKind::Lstm, AdapterKind::Single);
  const auto params = init_params<double>(cfg, 3);
  const auto& bias = params.at("lstm.0.bias").values();
  const std::size_t e = cfg.embed_size;
  for (std::size_t i = 0; i < 4 * e; ++i) {
    CHECK(bias[i] == (i >= e && i < 2 * e ? 1.0 : 0.0));
  }
}

TEST_CASE("adapter_single projects per row") {
  const auto zero_feat = Tensor<double>::zeros({3, 4});
  const auto w = Tensor<double>::from({4, 4}, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
  const auto b0 = Tensor<double>::zeros({4});
  for (const double v : adapter_single(zero_feat, w, b0).values()) CHECK(v == 0.0);

  Rng rng(1);
  const auto feat = random_tensor({2, 4}, rng);
  CHECK(adapter_single(feat, w, b0).values() == feat.values());  // identity weights
  CHECK_THROWS_AS(adapter_single(random_tensor({2, 3}, rng), w, b0), ValidationError);
}

TEST_CASE("adapter_detection flattens padded boxes through one affine layer") {
  const std::size_t max_boxes = 3, classes = 2, row = 4 + classes;
  Rng rng(2);
  const auto w = random_tensor({max_boxes * row, 5}, rng);
  const auto b = random_tensor({5}, rng);

  // zero boxes: all-pad flatten, bias-only token
  const auto none = Tensor<double>::zeros({0, row});
  const auto bias_only = adapter_detection(none, max_boxes, classes, w, b);
  for (std::size_t o = 0; o < 5; ++o) {
    CHECK(bias_only.values()[o] == b.values()[o]);
  }

  const auto boxes = random_boxes(2, classes, rng);
  const auto out = adapter_detection(boxes, max_boxes, classes, w, b);
  REQUIRE(out.shape() == Shape{1, 5});

  // brute-force flatten + matmul
  std::vector<double> flat(max_boxes * row, 0.0);
  std::copy(boxes.values().begin(), boxes.values().end(), flat.begin());
  for (std::size_t o = 0; o < 5; ++o) {
    double acc = b.values()[o];
    for (std::size_t k = 0; k < flat.size(); ++k) acc += flat[k] * w.values()[k * 5 + o];
    CHECK(out.values()[o] == doctest::Approx(acc).epsilon(1e-12));
  }

  CHECK_THROWS_AS(adapter_detection(random_boxes(4, classes, rng), max_boxes, classes, w, b),
                  ValidationError);
  auto bad = boxes.detached();
  bad.values()[4] = 0.5;  // breaks one-hot
  bad.values()[5] = 0.5;
  CHECK_THROWS_AS(adapter_detection(bad, max_boxes, classes, w, b), ValidationError);
}

TEST_CASE("adapter_stacked concatenates stream projections a-first") {
  Rng rng(3);
  const auto fa = random_tensor({2, 4}, rng);
  const auto fb = random_tensor({3, 6}, rng);
  const auto wa = random_tensor({4, 5}, rng);
  const auto ba = random_tensor({5}, rng);
  const auto wb = random_tensor({6, 5}, rng);
  const auto bb = random_tensor({5}, rng);
  const auto out = adapter_stacked(fa, fb, wa, ba, wb, bb);
  REQUIRE(out.shape() == Shape{5, 5});
  const auto a_only = adapter_single(fa, wa, ba);
  for (std::size_t i = 0; i < a_only.size(); ++i) {
    CHECK(out.values()[i] == a_only.values()[i]);
  }
  const auto b_only = adapter_single(fb, wb, bb);
  for (std::size_t i = 0; i < b_only.size(); ++i) {
    CHECK(out.values()[2 * 5 + i] == b_only.values()[i]);
  }
}

TEST_CASE("attention with a single key returns the projected value row") {
  const std::size_t e = 6;
  Rng rng(4);
  AttnParams<double> p;
  p.wq = random_tensor({e, e}, rng);
  p.bq = random_tensor({e}, rng);
  p.wk = random_tensor({e, e}, rng);
  p.bk = random_tensor({e}, rng);
  p.wv = random_tensor({e, e}, rng);
  p.bv = random_tensor({e}, rng);
  p.wo = random_tensor({e, e}, rng);
  p.bo = random_tensor({e}, rng);
  const auto q = random_tensor({3, e}, rng);
  const auto kv = random_tensor({1, e}, rng);
  const auto out = multi_head_attention<double>(q, kv, kv, nullptr, p, 2);
  const auto expected = add_bias(matmul(add_bias(matmul(kv, p.wv), p.bv), p.wo), p.bo);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t d = 0; d < e; ++d) {
      CHECK(out.values()[i * e + d] == doctest::Approx(expected.values()[d]).epsilon(1e-12));
    }
  }
}

TEST_CASE("attention with uniform logits averages the value rows") {
  const std::size_t e = 4;
  AttnParams<double> p;
  const auto eye = Tensor<double>::from({e, e}, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
  p.wq = Tensor<double>::zeros({e, e});  // all scores zero -> uniform weights
  p.bq = Tensor<double>::zeros({e});
  p.wk = eye;
  p.bk = Tensor<double>::zeros({e});
  p.wv = eye;
  p.bv = Tensor<double>::zeros({e});
  p.wo = eye;
  p.bo = Tensor<double>::zeros({e});
  Rng rng(5);
  const auto q = random_tensor({2, e}, rng);
  const auto kv = random_tensor({5, e}, rng);
  const auto out = multi_head_attention<double>(q, kv, kv, nullptr, p, 1);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t d = 0; d < e; ++d) {
      double mean = 0;
      for (std::size_t j = 0; j < 5; ++j) mean += kv.values()[j * e + d];
      mean /= 5.0;
      CHECK(out.values()[i * e + d] == doctest::Approx(mean).epsilon(1e-12));
    }
  }
}

TEST_CASE("lstm cell closed forms") {
  const std::size_t e = 4;
  const auto zeros_w = Tensor<double>::zeros({e, 4 * e});
  const auto zeros_b = Tensor<double>::zeros({4 * e});
  Rng rng(6);
  const auto x = random_tensor({1, e}, rng);
  const auto h = random_tensor({1, e}, rng);
  const auto c = random_tensor({1, e}, rng);

  // zero weights and bias: i=f=o=sigmoid(0)=0.5, g=tanh(0)=0
  auto [h2, c2] = lstm_cell_step(x, h, c, zeros_w, zeros_w, zeros_b);
  for (std::size_t d = 0; d < e; ++d) {
    CHECK(c2.values()[d] == doctest::Approx(0.5 * c.values()[d]).epsilon(1e-12));
    CHECK(h2.values()[d] ==
          doctest::Approx(0.5 * std::tanh(0.5 * c.values()[d])).epsilon(1e-12));
  }

  // saturated forget gate: c' ~= c + i (.) g
  std::vector<double> bias_sat(4 * e, 0.0);
  for (std::size_t d = e; d < 2 * e; ++d) bias_sat[d] = 20.0;
  const auto w_ih = random_tensor({e, 4 * e}, rng, 0.3);
  const auto w_hh = random_tensor({e, 4 * e}, rng, 0.3);
  auto [h3, c3] =
      lstm_cell_step(x, h, c, w_ih, w_hh, Tensor<double>::from({4 * e}, bias_sat));
  const auto gates = add_bias(add(matmul(x, w_ih), matmul(h, w_hh)),
                              Tensor<double>::from({4 * e}, bias_sat));
  for (std::size_t d = 0; d < e; ++d) {
    const double i_g = 1.0 / (1.0 + std::exp(-gates.values()[d]));
    const double g_g = std::tanh(gates.values()[2 * e + d]);
    CHECK(c3.values()[d] == doctest::Approx(c.values()[d] + i_g * g_g).epsilon(1e-6));
  }
}

TEST_CASE("transformer forward shape and causal invariance") {
  const ArchConfig cfg = tiny_arch(DecoderKind::Transformer, AdapterKind::Single, 8, 2, 2, 9);
  const Captioner<double> model(cfg, init_params<double>(cfg, 17));
  Rng rng(7);
  const auto streams = random_streams(cfg, rng);
  NoGradGuard ng;
  const auto enc = model.encode(streams);
  std::vector<int> prefix = {1, 4, 5, 6, 7};
  const auto logits = model.forward(prefix, enc);
  REQUIRE(logits.shape() == Shape{5, 9});

  // perturbing positions > t leaves row t bit-identical
  for (std::size_t t = 0; t + 1 < prefix.size(); ++t) {
    auto perturbed = prefix;
    for (std::size_t j = t + 1; j < prefix.size(); ++j) perturbed[j] = 8 - perturbed[j] % 4;
    const auto logits2 = model.forward(perturbed, enc);
    for (std::size_t j = 0; j <= t; ++j) {
      for (std::size_t v = 0; v < 9; ++v) {
        CHECK(logits.values()[j * 9 + v] == logits2.values()[j * 9 + v]);
      }
    }
  }
  CHECK_THROWS_AS(model.forward({}, enc), ValidationError);
}

TEST_CASE("transformer forward matches an independent plain-loop oracle") {
  ArchConfig cfg = tiny_arch(DecoderKind::Transformer, AdapterKind::Single, 6, 1, 1, 5);
  cfg.ffn_size = 10;
  const auto params = init_params<double>(cfg, 23);
  const Captioner<double> model(cfg, params);
  Rng rng(8);
  const auto feats = random_tensor({2, cfg.feature_dim_a}, rng);
  NoGradGuard ng;
  const auto enc = model.encode({feats});
  const std::vector<int> prefix = {1, 4};
  const auto logits = model.forward(prefix, enc);
  const auto expected =
      oracle_transformer(cfg, params, prefix, enc.values(), enc.shape()[0]);
  REQUIRE(logits.size() == expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) {
    CHECK(logits.values()[i] == doctest::Approx(expected[i]).epsilon(1e-9));
  }
}

TEST_CASE("lstm forward matches a plain-loop recurrence and is causally ordered") {
  const ArchConfig cfg = tiny_arch(DecoderKind::Lstm, AdapterKind::Single, 5, 1, 2, 7);
  const auto params = init_params<double>(cfg, 31);
  const Captioner<double> model(cfg, params);
  Rng rng(9);
  const auto feats = random_tensor({1, cfg.feature_dim_a}, rng);
  NoGradGuard ng;
  const auto enc = model.encode({feats});
  const std::vector<int> prefix = {1, 4};
  const auto logits = model.forward(prefix, enc);
  REQUIRE(logits.shape() == Shape{2, 7});

  // independent recurrence: feature step, then two token steps
  const std::size_t e = cfg.embed_size;
  const auto& w_ih = params.at("lstm.0.w_ih").values();
  const auto& w_hh = params.at("lstm.0.w_hh").values();
  const auto& bias = params.at("lstm.0.bias").values();
  const auto& embed = params.at("embed.weight").values();
  std::vector<double> h(e, 0.0), c(e, 0.0);
  auto step = [&](const std::vector<double>& input) {
    std::vector<double> gates(4 * e);
    for (std::size_t o = 0; o < 4 * e; ++o) {
      double acc = bias[o];
      for (std::size_t k = 0; k < e; ++k) {
        acc += input[k] * w_ih[k * 4 * e + o] + h[k] * w_hh[k * 4 * e + o];
      }
      gates[o] = acc;
    }
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    for (std::size_t d = 0; d < e; ++d) {
      const double i_g = sig(gates[d]);
      const double f_g = sig(gates[e + d]);
      const double g_g = std::tanh(gates[2 * e + d]);
      const double o_g = sig(gates[3 * e + d]);
      c[d] = f_g * c[d] + i_g * g_g;
      h[d] = o_g * std::tanh(c[d]);
    }
  };
  step(enc.values());
  std::vector<double> expected;
  for (const int tok : prefix) {
    std::vector<double> emb(embed.begin() + tok * e, embed.begin() + (tok + 1) * e);
    step(emb);
    const auto& hw = params.at("head.weight").values();
    const auto& hb = params.at("head.bias").values();
    for (std::size_t v = 0; v < 7; ++v) {
      double acc = hb[v];
      for (std::size_t k = 0; k < e; ++k) acc += h[k] * hw[k * 7 + v];
      expected.push_back(acc);
    }
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    CHECK(logits.values()[i] == doctest::Approx(expected[i]).epsilon(1e-9));
  }

  // changing prefix token j affects only logits rows >= j
  std::vector<int> prefix2 = {1, 4, 5, 6};
  const auto base = model.forward(prefix2, enc);
  auto changed = prefix2;
  changed[2] = 3;
  const auto after = model.forward(changed, enc);
  for (std::size_t v = 0; v < 7; ++v) {
    CHECK(base.values()[0 * 7 + v] == after.values()[0 * 7 + v]);
    CHECK(base.values()[1 * 7 + v] == after.values()[1 * 7 + v]);
  }
}

TEST_CASE("lstm incremental stepping equals the full forward bit-exactly") {
  const ArchConfig cfg = tiny_arch(DecoderKind::Lstm, AdapterKind::Single, 8, 2, 2, 9);
  const Captioner<double> model(cfg, init_params<double>(cfg, 41));
  Rng rng(10);
  NoGradGuard ng;
  const auto enc = model.encode({random_tensor({1, cfg.feature_dim_a}, rng)});
  const std::vector<int> prefix = {1, 5, 3, 7, 2};
  const auto full = model.forward(prefix, enc);
  auto state = model.lstm_begin(enc);
  for (std::size_t t = 0; t < prefix.size(); ++t) {
    const auto row = model.lstm_step_logits(state, prefix[t]);
    for (std::size_t v = 0; v < cfg.vocab_size; ++v) {
      CHECK(row[v] == full.values()[t * cfg.vocab_size + v]);
    }
  }
}

TEST_CASE("next_token_logits equals the last row of the full forward") {
  for (const DecoderKind kind : {DecoderKind::Transformer, DecoderKind::Lstm}) {
    const ArchConfig cfg = tiny_arch(kind, AdapterKind::Single);
    const Captioner<double> model(cfg, init_params<double>(cfg, 53));
    Rng rng(11);
    NoGradGuard ng;
    const auto enc = model.encode(
        {random_tensor({kind == DecoderKind::Lstm ? 1u : 2u, cfg.feature_dim_a}, rng)});
    const std::vector<int> prefix = {1, 6, 4};
    const auto full = model.forward(prefix, enc);
    const auto last = model.next_token_logits(prefix, enc);
    for (std::size_t v = 0; v < cfg.vocab_size; ++v) {
      CHECK(last[v] == static_cast<double>(full.values()[2 * cfg.vocab_size + v]));
    }
    CHECK(model.next_token_logits(prefix, enc) == last);  // deterministic
  }
}

TEST_CASE("encoder token row permutation leaves decoder outputs unchanged") {
  const ArchConfig cfg = tiny_arch(DecoderKind::Transformer, AdapterKind::Single);
  const Captioner<double> model(cfg, init_params<double>(cfg, 61));
  Rng rng(12);
  NoGradGuard ng;
  const auto feats = random_tensor({4, cfg.feature_dim_a}, rng);
  const auto enc = model.encode({feats});
  // permute encoder rows (no positions are added to encoder tokens)
  std::vector<double> permuted(enc.size());
  const std::size_t e = cfg.embed_size;
  const std::vector<std::size_t> perm = {2, 0, 3, 1};
  for (std::size_t r = 0; r < 4; ++r) {
    std::copy_n(enc.values().data() + perm[r] * e, e, permuted.data() + r * e);
  }
  const auto enc2 = Tensor<double>::from({4, e}, std::move(permuted));
  const std::vector<int> prefix = {1, 4, 5};
  const auto a = model.forward(prefix, enc);
  const auto b = model.forward(prefix, enc2);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.values()[i] == doctest::Approx(b.values()[i]).epsilon(1e-9));
  }
}

TEST_CASE("stacked adapter with attention forced onto stream b equals single-b") {
  ArchConfig stacked_cfg = tiny_arch(DecoderKind::Transformer, AdapterKind::Stacked);
  const auto stacked_params = init_params<double>(stacked_cfg, 71);
  const Captioner<double> stacked(stacked_cfg, stacked_params);

  // single-stream model on stream b sharing every decoder parameter
  ArchConfig single_cfg = stacked_cfg;
  single_cfg.adapter = AdapterKind::Single;
  single_cfg.feature_dim_a = stacked_cfg.feature_dim_b;
  Params<double> single_params;
  for (const auto& spec : param_manifest(single_cfg)) {
    if (spec.name == "adapter.proj.weight") {
      single_params.add(spec.name, stacked_params.at("adapter.b.weight"));
    } else if (spec.name == "adapter.proj.bias") {
      single_params.add(spec.name, stacked_params.at("adapter.b.bias"));
    } else {
      single_params.add(spec.name, stacked_params.at(spec.name));
    }
  }
  const Captioner<double> single(single_cfg, std::move(single_params));

  Rng rng(13);
  NoGradGuard ng;
  const auto fa = random_tensor({2, stacked_cfg.feature_dim_a}, rng);
  const auto fb = random_tensor({3, stacked_cfg.feature_dim_b}, rng);
  const auto enc_stacked = stacked.encode({fa, fb});
  const auto enc_single = single.encode({fb});
  REQUIRE(enc_stacked.shape() == Shape{5, stacked_cfg.embed_size});

  const std::vector<int> prefix = {1, 4, 6};
  // additive cross mask shutting off the a-stream rows entirely
  std::vector<double> mask(prefix.size() * 5, 0.0);
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    for (std::size_t j = 0; j < 2; ++j) mask[i * 5 + j] = -1e9;
  }
  const auto cross_mask = Tensor<double>::from({prefix.size(), 5}, std::move(mask));
  const auto masked = stacked.forward(prefix, enc_stacked, nullptr, &cross_mask);
  const auto reference = single.forward(prefix, enc_single);
  for (std::size_t i = 0; i < masked.size(); ++i) {
    CHECK(masked.values()[i] == reference.values()[i]);  // bit-exact
  }
}

TEST_CASE("every parameter receives gradient on a generic batch") {
  struct Case {
    DecoderKind dec;
    AdapterKind ad;
  };
  for (const Case c : {Case{DecoderKind::Lstm, AdapterKind::Single},
                       Case{DecoderKind::Transformer, AdapterKind::Single},
                       Case{DecoderKind::Transformer, AdapterKind::Detection},
                       Case{DecoderKind::Transformer, AdapterKind::Stacked}}) {
    const ArchConfig cfg = tiny_arch(c.dec, c.ad);
    Captioner<double> model(cfg, init_params<double>(cfg, 83));
    Rng rng(14);
    const auto streams = random_streams(cfg, rng, c.dec == DecoderKind::Lstm ? 1 : 2);
    const std::vector<int> inputs = {1, 4, 5, 6, 7, 8};
    const std::vector<int> targets = {4, 5, 6, 7, 8, 2};
    const auto enc = model.encode(streams);
    auto loss = cross_entropy_loss(model.forward(inputs, enc), targets, 0);
    loss.backward();
    for (const auto& name : model.params().order) {
      const auto& p = model.params().at(name);
      REQUIRE_MESSAGE(p.has_grad(), name);
      double max_abs = 0;
      for (const double g : p.grad()) max_abs = std::max(max_abs, std::fabs(g));
      CHECK_MESSAGE(max_abs > 0.0, name);
    }
  }
}
