#include "capkit/model.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "capkit/errors.hpp"
#include "capkit/json_writer.hpp"

namespace capkit {

std::string to_string(DecoderKind k) {
  return k == DecoderKind::Lstm ? "lstm" : "transformer";
}

std::string to_string(AdapterKind k) {
  switch (k) {
    case AdapterKind::Single: return "single";
    case AdapterKind::Detection: return "detection";
    case AdapterKind::Stacked: return "stacked";
  }
  return "single";
}

DecoderKind decoder_kind_from_string(const std::string& s) {
  if (s == "lstm") return DecoderKind::Lstm;
  if (s == "transformer") return DecoderKind::Transformer;
  throw ValidationError("unknown decoder kind '" + s + "'");
}

AdapterKind adapter_kind_from_string(const std::string& s) {
  if (s == "single") return AdapterKind::Single;
  if (s == "detection") return AdapterKind::Detection;
  if (s == "stacked") return AdapterKind::Stacked;
  throw ValidationError("unknown adapter kind '" + s + "'");
}

void ArchConfig::validate() const {
  if (vocab_size < 4) {
    throw ValidationError("arch: vocab_size must include the 4 specials");
  }
  if (embed_size == 0 || num_layers == 0 || max_len < 2) {
    throw ValidationError("arch: embed_size/num_layers must be positive, max_len >= 2");
  }
  if (decoder == DecoderKind::Transformer && embed_size % heads() != 0) {
    throw ValidationError("arch: embed_size " + std::to_string(embed_size) +
                          " not divisible by num_heads " + std::to_string(heads()));
  }
  if (dropout < 0.0 || dropout >= 1.0) {
    throw ValidationError("arch: dropout must be in [0, 1)");
  }
  switch (adapter) {
    case AdapterKind::Single:
      if (feature_dim_a == 0) throw ValidationError("arch: single adapter needs feature_dim_a");
      break;
    case AdapterKind::Detection:
      if (num_classes == 0 || max_boxes == 0) {
        throw ValidationError("arch: detection adapter needs num_classes and max_boxes");
      }
      break;
    case AdapterKind::Stacked:
      if (feature_dim_a == 0 || feature_dim_b == 0) {
        throw ValidationError("arch: stacked adapter needs feature_dim_a and feature_dim_b");
      }
      break;
  }
  if (decoder == DecoderKind::Lstm && adapter != AdapterKind::Single) {
    throw ValidationError("arch: the lstm decoder pairs with the single adapter only");
  }
}

std::string ArchConfig::to_json() const {
  JsonWriter w;
  w.begin_object();
  w.key("decoder").value(to_string(decoder));
  w.key("adapter").value(to_string(adapter));
  w.key("embed_size").value(embed_size);
  w.key("num_layers").value(num_layers);
  w.key("num_heads").value(heads());
  w.key("ffn_size").value(ffn());
  w.key("vocab_size").value(vocab_size);
  w.key("max_len").value(max_len);
  w.key("dropout").value(dropout);
  w.key("feature_dim_a").value(feature_dim_a);
  w.key("feature_dim_b").value(feature_dim_b);
  w.key("max_boxes").value(max_boxes);
  w.key("num_classes").value(num_classes);
  w.end_object();
  return w.str();
}

ArchConfig ArchConfig::from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("arch config: invalid JSON: ") + e.what());
  }
  ArchConfig cfg;
  cfg.decoder = decoder_kind_from_string(j.at("decoder").get<std::string>());
  cfg.adapter = adapter_kind_from_string(j.at("adapter").get<std::string>());
  cfg.embed_size = j.at("embed_size").get<std::size_t>();
  cfg.num_layers = j.at("num_layers").get<std::size_t>();
  cfg.num_heads = j.value("num_heads", std::size_t{0});
  cfg.ffn_size = j.value("ffn_size", std::size_t{0});
  cfg.vocab_size = j.at("vocab_size").get<std::size_t>();
  cfg.max_len = j.at("max_len").get<std::size_t>();
  cfg.dropout = j.value("dropout", 0.1);
  cfg.feature_dim_a = j.value("feature_dim_a", std::size_t{0});
  cfg.feature_dim_b = j.value("feature_dim_b", std::size_t{0});
  cfg.max_boxes = j.value("max_boxes", std::size_t{16});
  cfg.num_classes = j.value("num_classes", std::size_t{0});
  cfg.validate();
  return cfg;
}

std::vector<ParamSpec> param_manifest(const ArchConfig& cfg) {
  cfg.validate();
  using Init = ParamSpec::Init;
  std::vector<ParamSpec> specs;
  const std::size_t e = cfg.embed_size;
  const std::size_t v = cfg.vocab_size;

  switch (cfg.adapter) {
    case AdapterKind::Single:
      specs.push_back({"adapter.proj.weight", {cfg.feature_dim_a, e}, Init::UniformFanIn});
      specs.push_back({"adapter.proj.bias", {e}, Init::Zeros});
      break;
    case AdapterKind::Detection:
      specs.push_back(
          {"adapter.det.weight", {cfg.max_boxes * cfg.detection_row_dim(), e}, Init::UniformFanIn});
      specs.push_back({"adapter.det.bias", {e}, Init::Zeros});
      break;
    case AdapterKind::Stacked:
      specs.push_back({"adapter.a.weight", {cfg.feature_dim_a, e}, Init::UniformFanIn});
      specs.push_back({"adapter.a.bias", {e}, Init::Zeros});
      specs.push_back({"adapter.b.weight", {cfg.feature_dim_b, e}, Init::UniformFanIn});
      specs.push_back({"adapter.b.bias", {e}, Init::Zeros});
      break;
  }

  specs.push_back({"embed.weight", {v, e}, Init::UniformFanIn});

  if (cfg.decoder == DecoderKind::Transformer) {
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
      const std::string base = "layers." + std::to_string(l) + ".";
      for (const char* attn : {"self_attn.", "cross_attn."}) {
        for (const char* proj : {"wq", "wk", "wv", "wo"}) {
          specs.push_back({base + attn + proj + ".weight", {e, e}, Init::UniformFanIn});
          specs.push_back({base + attn + proj + ".bias", {e}, Init::Zeros});
        }
      }
      specs.push_back({base + "self_norm.gain", {e}, Init::Ones});
      specs.push_back({base + "self_norm.bias", {e}, Init::Zeros});
      specs.push_back({base + "cross_norm.gain", {e}, Init::Ones});
      specs.push_back({base + "cross_norm.bias", {e}, Init::Zeros});
      specs.push_back({base + "ffn.w1.weight", {e, cfg.ffn()}, Init::UniformFanIn});
      specs.push_back({base + "ffn.w1.bias", {cfg.ffn()}, Init::Zeros});
      specs.push_back({base + "ffn.w2.weight", {cfg.ffn(), e}, Init::UniformFanIn});
      specs.push_back({base + "ffn.w2.bias", {e}, Init::Zeros});
      specs.push_back({base + "ffn_norm.gain", {e}, Init::Ones});
      specs.push_back({base + "ffn_norm.bias", {e}, Init::Zeros});
    }
  } else {
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
      const std::string base = "lstm." + std::to_string(l) + ".";
      specs.push_back({base + "w_ih", {e, 4 * e}, Init::UniformFanIn});
      specs.push_back({base + "w_hh", {e, 4 * e}, Init::UniformFanIn});
      specs.push_back({base + "bias", {4 * e}, Init::LstmBias});
    }
  }

  specs.push_back({"head.weight", {e, v}, Init::UniformFanIn});
  specs.push_back({"head.bias", {v}, Init::Zeros});
  return specs;
}

template <typename T>
Params<T> init_params(const ArchConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  Params<T> params;
  for (const auto& spec : param_manifest(cfg)) {
    std::vector<T> data(shape_numel(spec.shape), T(0));
    switch (spec.init) {
      case ParamSpec::Init::UniformFanIn: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(spec.shape[0]));
        for (auto& x : data) x = static_cast<T>(rng.uniform_range(-bound, bound));
        break;
      }
      case ParamSpec::Init::Zeros:
        break;
      case ParamSpec::Init::Ones:
        std::fill(data.begin(), data.end(), T(1));
        break;
      case ParamSpec::Init::LstmBias: {
        // gate layout i,f,g,o: forget slice starts at one quarter
        const std::size_t quarter = spec.shape[0] / 4;
        for (std::size_t i = quarter; i < 2 * quarter; ++i) data[i] = T(1);
        break;
      }
    }
    params.add(spec.name, Tensor<T>::from(spec.shape, std::move(data), true));
  }
  return params;
}

template <typename T>
AttnParams<T> attn_params(const Params<T>& params, const std::string& prefix) {
  AttnParams<T> p;
  p.wq = params.at(prefix + "wq.weight");
  p.bq = params.at(prefix + "wq.bias");
  p.wk = params.at(prefix + "wk.weight");
  p.bk = params.at(prefix + "wk.bias");
  p.wv = params.at(prefix + "wv.weight");
  p.bv = params.at(prefix + "wv.bias");
  p.wo = params.at(prefix + "wo.weight");
  p.bo = params.at(prefix + "wo.bias");
  return p;
}

template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               const Tensor<T>* mask, const AttnParams<T>& p,
                               std::size_t heads, double dropout_rate, Rng* rng) {
  const std::size_t e = q.cols();
  if (heads == 0 || e % heads != 0) {
    throw ValidationError("attention: embed size not divisible by head count");
  }
  if (k.shape() != v.shape() || k.cols() != e) {
    throw ValidationError("attention: k/v shape mismatch");
  }
  if (mask && (mask->rows() != q.rows() || mask->cols() != k.rows())) {
    throw ValidationError("attention: mask must be [T_q x T_k]");
  }
  const std::size_t head_dim = e / heads;
  const T inv_sqrt = T(1) / static_cast<T>(std::sqrt(static_cast<double>(head_dim)));

  const Tensor<T> qp = add_bias(matmul(q, p.wq), p.bq);
  const Tensor<T> kp = add_bias(matmul(k, p.wk), p.bk);
  const Tensor<T> vp = add_bias(matmul(v, p.wv), p.bv);

  std::vector<Tensor<T>> head_outputs;
  head_outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t c0 = h * head_dim, c1 = (h + 1) * head_dim;
    const Tensor<T> qh = slice_cols(qp, c0, c1);
    const Tensor<T> kh = slice_cols(kp, c0, c1);
    const Tensor<T> vh = slice_cols(vp, c0, c1);
    Tensor<T> scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    if (mask) scores = add(scores, *mask);
    Tensor<T> weights = softmax(scores, -1);
    if (rng && dropout_rate > 0.0) weights = dropout(weights, dropout_rate, *rng);
    head_outputs.push_back(matmul(weights, vh));
  }
  const Tensor<T> merged = heads == 1 ? head_outputs[0] : concat_cols(head_outputs);
  return add_bias(matmul(merged, p.wo), p.bo);
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> lstm_cell_step(const Tensor<T>& x, const Tensor<T>& h,
                                               const Tensor<T>& c, const Tensor<T>& w_ih,
                                               const Tensor<T>& w_hh, const Tensor<T>& bias) {
  const std::size_t e = h.cols();
  const Tensor<T> gates = add_bias(add(matmul(x, w_ih), matmul(h, w_hh)), bias);
  const Tensor<T> i_gate = sigmoid(slice_cols(gates, 0, e));
  const Tensor<T> f_gate = sigmoid(slice_cols(gates, e, 2 * e));
  const Tensor<T> g_gate = tanh(slice_cols(gates, 2 * e, 3 * e));
  const Tensor<T> o_gate = sigmoid(slice_cols(gates, 3 * e, 4 * e));
  const Tensor<T> c_next = add(hadamard(f_gate, c), hadamard(i_gate, g_gate));
  const Tensor<T> h_next = hadamard(o_gate, tanh(c_next));
  return {h_next, c_next};
}

template <typename T>
Tensor<T> adapter_single(const Tensor<T>& features, const Tensor<T>& weight,
                         const Tensor<T>& bias) {
  if (features.rank() != 2 || features.shape()[1] != weight.shape()[0]) {
    throw ValidationError("adapter_single: features " + shape_str(features.shape()) +
                          " do not match projection " + shape_str(weight.shape()));
  }
  return add_bias(matmul(features, weight), bias);
}

template <typename T>
Tensor<T> adapter_detection(const Tensor<T>& boxes, std::size_t max_boxes,
                            std::size_t num_classes, const Tensor<T>& weight,
                            const Tensor<T>& bias) {
  const std::size_t row_dim = 4 + num_classes;
  if (boxes.rank() != 2 || boxes.shape()[1] != row_dim) {
    throw ValidationError("adapter_detection: each box row must be [x,y,w,h | one-hot(" +
                          std::to_string(num_classes) + ")]");
  }
  if (boxes.shape()[0] > max_boxes) {
    throw ValidationError("adapter_detection: " + std::to_string(boxes.shape()[0]) +
                          " boxes exceed max_boxes " + std::to_string(max_boxes));
  }
  for (std::size_t b = 0; b < boxes.shape()[0]; ++b) {
    const T* row = boxes.values().data() + b * row_dim;
    T sum = 0;
    bool binary = true;
    for (std::size_t j = 4; j < row_dim; ++j) {
      binary = binary && (row[j] == T(0) || row[j] == T(1));
      sum += row[j];
    }
    if (!binary || sum != T(1)) {
      throw ValidationError("adapter_detection: box " + std::to_string(b) +
                            " class row is not one-hot");
    }
  }
  // zero-pad to max_boxes, flatten to one row
  std::vector<T> flat(max_boxes * row_dim, T(0));
  std::copy(boxes.values().begin(), boxes.values().end(), flat.begin());
  const Tensor<T> flattened = Tensor<T>::from({1, max_boxes * row_dim}, std::move(flat));
  return add_bias(matmul(flattened, weight), bias);
}

template <typename T>
Tensor<T> adapter_stacked(const Tensor<T>& features_a, const Tensor<T>& features_b,
                          const Tensor<T>& weight_a, const Tensor<T>& bias_a,
                          const Tensor<T>& weight_b, const Tensor<T>& bias_b) {
  const Tensor<T> a = adapter_single(features_a, weight_a, bias_a);
  const Tensor<T> b = adapter_single(features_b, weight_b, bias_b);
  return concat_rows<T>({a, b});
}

template <typename T>
Tensor<T> sinusoidal_positions(std::size_t max_len, std::size_t dim) {
  std::vector<T> table(max_len * dim);
  for (std::size_t pos = 0; pos < max_len; ++pos) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double exponent = static_cast<double>(2 * (i / 2)) / static_cast<double>(dim);
      const double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
      table[pos * dim + i] = static_cast<T>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return Tensor<T>::from({max_len, dim}, std::move(table));
}

template <typename T>
Captioner<T>::Captioner(ArchConfig cfg, Params<T> params)
    : cfg_(std::move(cfg)), params_(std::move(params)) {
  cfg_.validate();
  for (const auto& spec : param_manifest(cfg_)) {
    const auto& t = params_.at(spec.name);
    if (t.shape() != spec.shape) {
      throw ValidationError("param '" + spec.name + "' has shape " + shape_str(t.shape()) +
                            ", manifest requires " + shape_str(spec.shape));
    }
  }
  if (cfg_.decoder == DecoderKind::Transformer) {
    positions_ = sinusoidal_positions<T>(cfg_.max_len, cfg_.embed_size);
  }
}

template <typename T>
Tensor<T> Captioner<T>::encode(const std::vector<Tensor<T>>& streams) const {
  switch (cfg_.adapter) {
    case AdapterKind::Single:
      if (streams.size() != 1) throw ValidationError("encode: single adapter takes one stream");
      return adapter_single(streams[0], params_.at("adapter.proj.weight"),
                            params_.at("adapter.proj.bias"));
    case AdapterKind::Detection:
      if (streams.size() != 1) throw ValidationError("encode: detection adapter takes one stream");
      return adapter_detection(streams[0], cfg_.max_boxes, cfg_.num_classes,
                               params_.at("adapter.det.weight"), params_.at("adapter.det.bias"));
    case AdapterKind::Stacked:
      if (streams.size() != 2) throw ValidationError("encode: stacked adapter takes two streams");
      return adapter_stacked(streams[0], streams[1], params_.at("adapter.a.weight"),
                             params_.at("adapter.a.bias"), params_.at("adapter.b.weight"),
                             params_.at("adapter.b.bias"));
  }
  throw ValidationError("encode: unknown adapter");
}

template <typename T>
Tensor<T> Captioner<T>::forward(const std::vector<int>& prefix, const Tensor<T>& enc,
                                Rng* dropout_rng, const Tensor<T>* cross_mask) const {
  if (prefix.empty()) {
    throw ValidationError("forward: empty prefix");
  }
  if (prefix.size() > cfg_.max_len) {
    throw ValidationError("forward: prefix longer than max_len");
  }
  if (enc.rank() != 2 || enc.shape()[0] < 1 || enc.shape()[1] != cfg_.embed_size) {
    throw ValidationError("forward: encoder tokens must be [>=1 x embed_size]");
  }
  return cfg_.decoder == DecoderKind::Transformer
             ? transformer_forward(prefix, enc, dropout_rng, cross_mask)
             : lstm_forward(prefix, enc);
}

template <typename T>
Tensor<T> Captioner<T>::transformer_forward(const std::vector<int>& prefix,
                                            const Tensor<T>& enc, Rng* rng,
                                            const Tensor<T>* cross_mask) const {
  const std::size_t t_len = prefix.size();
  Tensor<T> x = add(embedding_lookup(params_.at("embed.weight"), prefix),
                    slice_rows(positions_, 0, t_len));
  if (rng && cfg_.dropout > 0.0) x = dropout(x, cfg_.dropout, *rng);
  const Tensor<T> self_mask = causal_mask<T>(t_len, t_len);
  for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
    const std::string base = "layers." + std::to_string(l) + ".";
    const Tensor<T> sa =
        multi_head_attention(x, x, x, &self_mask, attn_params(params_, base + "self_attn."),
                             cfg_.heads(), cfg_.dropout, rng);
    x = layer_norm(add(x, sa), params_.at(base + "self_norm.gain"),
                   params_.at(base + "self_norm.bias"));
    const Tensor<T> ca =
        multi_head_attention(x, enc, enc, cross_mask,
                             attn_params(params_, base + "cross_attn."), cfg_.heads(),
                             cfg_.dropout, rng);
    x = layer_norm(add(x, ca), params_.at(base + "cross_norm.gain"),
                   params_.at(base + "cross_norm.bias"));
    const Tensor<T> ff = add_bias(
        matmul(relu(add_bias(matmul(x, params_.at(base + "ffn.w1.weight")),
                             params_.at(base + "ffn.w1.bias"))),
               params_.at(base + "ffn.w2.weight")),
        params_.at(base + "ffn.w2.bias"));
    x = layer_norm(add(x, ff), params_.at(base + "ffn_norm.gain"),
                   params_.at(base + "ffn_norm.bias"));
  }
  return add_bias(matmul(x, params_.at("head.weight")), params_.at("head.bias"));
}

template <typename T>
void Captioner<T>::lstm_advance(std::vector<Tensor<T>>& h, std::vector<Tensor<T>>& c,
                                const Tensor<T>& input) const {
  Tensor<T> layer_input = input;
  for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
    const std::string base = "lstm." + std::to_string(l) + ".";
    auto [h_next, c_next] =
        lstm_cell_step(layer_input, h[l], c[l], params_.at(base + "w_ih"),
                       params_.at(base + "w_hh"), params_.at(base + "bias"));
    h[l] = h_next;
    c[l] = c_next;
    layer_input = h_next;
  }
}

template <typename T>
Tensor<T> Captioner<T>::lstm_forward(const std::vector<int>& prefix, const Tensor<T>& enc) const {
  if (enc.shape()[0] != 1) {
    throw ValidationError("lstm decoder expects a single encoder token, got " +
                          shape_str(enc.shape()));
  }
  std::vector<Tensor<T>> h(cfg_.num_layers), c(cfg_.num_layers);
  for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
    h[l] = Tensor<T>::zeros({1, cfg_.embed_size});
    c[l] = Tensor<T>::zeros({1, cfg_.embed_size});
  }
  lstm_advance(h, c, enc);  // step 0: the projected image feature, no logits
  const Tensor<T> emb = embedding_lookup(params_.at("embed.weight"), prefix);
  std::vector<Tensor<T>> outputs;
  outputs.reserve(prefix.size());
  for (std::size_t t = 0; t < prefix.size(); ++t) {
    lstm_advance(h, c, slice_rows(emb, t, t + 1));
    outputs.push_back(h[cfg_.num_layers - 1]);
  }
  const Tensor<T> hidden = outputs.size() == 1 ? outputs[0] : concat_rows(outputs);
  return add_bias(matmul(hidden, params_.at("head.weight")), params_.at("head.bias"));
}

template <typename T>
std::vector<double> Captioner<T>::next_token_logits(const std::vector<int>& prefix,
                                                    const Tensor<T>& enc) const {
  NoGradGuard ng;
  const Tensor<T> logits = forward(prefix, enc);
  const std::size_t v = cfg_.vocab_size;
  const T* last = logits.values().data() + (prefix.size() - 1) * v;
  std::vector<double> out(v);
  for (std::size_t j = 0; j < v; ++j) out[j] = static_cast<double>(last[j]);
  return out;
}

template <typename T>
typename Captioner<T>::LstmState Captioner<T>::lstm_begin(const Tensor<T>& enc) const {
  if (cfg_.decoder != DecoderKind::Lstm) {
    throw ValidationError("lstm_begin: not an lstm decoder");
  }
  NoGradGuard ng;
  LstmState state;
  state.h.resize(cfg_.num_layers);
  state.c.resize(cfg_.num_layers);
  for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
    state.h[l] = Tensor<T>::zeros({1, cfg_.embed_size});
    state.c[l] = Tensor<T>::zeros({1, cfg_.embed_size});
  }
  lstm_advance(state.h, state.c, enc);
  return state;
}

template <typename T>
std::vector<double> Captioner<T>::lstm_step_logits(LstmState& state, int token) const {
  NoGradGuard ng;
  const Tensor<T> emb = embedding_lookup(params_.at("embed.weight"), {token});
  lstm_advance(state.h, state.c, emb);
  const Tensor<T> logits = add_bias(matmul(state.h[cfg_.num_layers - 1],
                                           params_.at("head.weight")),
                                    params_.at("head.bias"));
  std::vector<double> out(cfg_.vocab_size);
  for (std::size_t j = 0; j < cfg_.vocab_size; ++j) {
    out[j] = static_cast<double>(logits.values()[j]);
  }
  return out;
}

// ---- explicit instantiations ----

template struct Params<float>;
template struct Params<double>;
template Params<float> init_params<float>(const ArchConfig&, std::uint64_t);
template Params<double> init_params<double>(const ArchConfig&, std::uint64_t);
template struct AttnParams<float>;
template struct AttnParams<double>;
template AttnParams<float> attn_params<float>(const Params<float>&, const std::string&);
template AttnParams<double> attn_params<double>(const Params<double>&, const std::string&);
template Tensor<float> multi_head_attention<float>(const Tensor<float>&, const Tensor<float>&,
                                                   const Tensor<float>&, const Tensor<float>*,
                                                   const AttnParams<float>&, std::size_t, double,
                                                   Rng*);
template Tensor<double> multi_head_attention<double>(const Tensor<double>&, const Tensor<double>&,
                                                     const Tensor<double>&, const Tensor<double>*,
                                                     const AttnParams<double>&, std::size_t,
                                                     double, Rng*);
template std::pair<Tensor<float>, Tensor<float>> lstm_cell_step<float>(
    const Tensor<float>&, const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
    const Tensor<float>&, const Tensor<float>&);
template std::pair<Tensor<double>, Tensor<double>> lstm_cell_step<double>(
    const Tensor<double>&, const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
    const Tensor<double>&, const Tensor<double>&);
template Tensor<float> adapter_single<float>(const Tensor<float>&, const Tensor<float>&,
                                             const Tensor<float>&);
template Tensor<double> adapter_single<double>(const Tensor<double>&, const Tensor<double>&,
                                               const Tensor<double>&);
template Tensor<float> adapter_detection<float>(const Tensor<float>&, std::size_t, std::size_t,
                                                const Tensor<float>&, const Tensor<float>&);
template Tensor<double> adapter_detection<double>(const Tensor<double>&, std::size_t, std::size_t,
                                                  const Tensor<double>&, const Tensor<double>&);
template Tensor<float> adapter_stacked<float>(const Tensor<float>&, const Tensor<float>&,
                                              const Tensor<float>&, const Tensor<float>&,
                                              const Tensor<float>&, const Tensor<float>&);
template Tensor<double> adapter_stacked<double>(const Tensor<double>&, const Tensor<double>&,
                                                const Tensor<double>&, const Tensor<double>&,
                                                const Tensor<double>&, const Tensor<double>&);
template Tensor<float> sinusoidal_positions<float>(std::size_t, std::size_t);
template Tensor<double> sinusoidal_positions<double>(std::size_t, std::size_t);
template class Captioner<float>;
template class Captioner<double>;

}  // namespace capkit
