#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "capkit/rng.hpp"
#include "capkit/tensor.hpp"

namespace capkit {

enum class DecoderKind { Lstm, Transformer };
enum class AdapterKind { Single, Detection, Stacked };

std::string to_string(DecoderKind k);
std::string to_string(AdapterKind k);
DecoderKind decoder_kind_from_string(const std::string& s);
AdapterKind adapter_kind_from_string(const std::string& s);

// One captioner variant = feature adapter x decoder. The LSTM decoder's
// hidden size equals embed_size; the transformer FFN defaults to 4x.
struct ArchConfig {
  DecoderKind decoder = DecoderKind::Transformer;
  AdapterKind adapter = AdapterKind::Single;
  std::size_t embed_size = 256;
  std::size_t num_layers = 1;
  std::size_t num_heads = 0;  // 0 -> 8 for embed >= 512, else 4
  std::size_t ffn_size = 0;   // 0 -> 4 * embed_size
  std::size_t vocab_size = 0;
  std::size_t max_len = 30;
  double dropout = 0.1;
  std::size_t feature_dim_a = 0;  // single / stacked stream a
  std::size_t feature_dim_b = 0;  // stacked stream b
  std::size_t max_boxes = 16;     // detection
  std::size_t num_classes = 0;    // detection one-hot width

  std::size_t heads() const { return num_heads ? num_heads : (embed_size >= 512 ? 8 : 4); }
  std::size_t ffn() const { return ffn_size ? ffn_size : 4 * embed_size; }
  std::size_t detection_row_dim() const { return 4 + num_classes; }

  void validate() const;
  std::string to_json() const;
  static ArchConfig from_json_text(const std::string& text);
};

// Named parameter tensors in manifest order. Iteration order is part of the
// checkpoint format, so insertion order is preserved.
template <typename T>
struct Params {
  std::vector<std::string> order;
  std::unordered_map<std::string, Tensor<T>> by_name;

  void add(std::string name, Tensor<T> t) {
    if (by_name.count(name)) {
      throw ValidationError("params: duplicate name '" + name + "'");
    }
    order.push_back(name);
    by_name.emplace(std::move(name), std::move(t));
  }

  Tensor<T>& at(const std::string& name) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw ValidationError("params: unknown name '" + name + "'");
    return it->second;
  }
  const Tensor<T>& at(const std::string& name) const {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw ValidationError("params: unknown name '" + name + "'");
    return it->second;
  }

  std::vector<std::pair<std::string, Tensor<T>>> named() const {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    out.reserve(order.size());
    for (const auto& n : order) out.emplace_back(n, by_name.at(n));
    return out;
  }

  void zero_grads() {
    for (const auto& n : order) by_name.at(n).zero_grad();
  }
};

struct ParamSpec {
  enum class Init { UniformFanIn, Zeros, Ones, LstmBias };
  std::string name;
  Shape shape;
  Init init = Init::UniformFanIn;
};

// The full parameter list for an architecture, in checkpoint order.
std::vector<ParamSpec> param_manifest(const ArchConfig& cfg);

// uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) with fan_in = first dimension for
// weight matrices; zeros for biases; ones for layer-norm gains; LSTM combined
// bias zeros with the forget slice at +1. Fully determined by the seed.
template <typename T>
Params<T> init_params(const ArchConfig& cfg, std::uint64_t seed);

// Attention projection handles gathered from a Params by name prefix.
template <typename T>
struct AttnParams {
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
};

template <typename T>
AttnParams<T> attn_params(const Params<T>& params, const std::string& prefix);

// Scaled dot-product attention with `heads` heads. `mask` (additive,
// [T_q x T_k]) may be null. Dropout on attention weights only when rng is
// non-null.
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               const Tensor<T>* mask, const AttnParams<T>& p,
                               std::size_t heads, double dropout_rate = 0.0,
                               Rng* rng = nullptr);

// Standard LSTM cell on row vectors ([1 x e]); combined gate layout i,f,g,o.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> lstm_cell_step(const Tensor<T>& x, const Tensor<T>& h,
                                               const Tensor<T>& c, const Tensor<T>& w_ih,
                                               const Tensor<T>& w_hh, const Tensor<T>& bias);

// Feature adapters. Inputs are plain value tensors; gradients flow only into
// the adapter parameters.
template <typename T>
Tensor<T> adapter_single(const Tensor<T>& features, const Tensor<T>& weight,
                         const Tensor<T>& bias);

template <typename T>
Tensor<T> adapter_detection(const Tensor<T>& boxes, std::size_t max_boxes,
                            std::size_t num_classes, const Tensor<T>& weight,
                            const Tensor<T>& bias);

template <typename T>
Tensor<T> adapter_stacked(const Tensor<T>& features_a, const Tensor<T>& features_b,
                          const Tensor<T>& weight_a, const Tensor<T>& bias_a,
                          const Tensor<T>& weight_b, const Tensor<T>& bias_b);

// Sinusoidal position table, [max_len x dim].
template <typename T>
Tensor<T> sinusoidal_positions(std::size_t max_len, std::size_t dim);

template <typename T>
class Captioner {
 public:
  Captioner(ArchConfig cfg, Params<T> params);

  const ArchConfig& config() const { return cfg_; }
  Params<T>& params() { return params_; }
  const Params<T>& params() const { return params_; }

  // Adapter application: one stream for single/detection, two for stacked.
  Tensor<T> encode(const std::vector<Tensor<T>>& streams) const;

  // Teacher-forced forward over a token prefix: logits [T x V]. Dropout only
  // when rng is non-null. cross_mask (additive, [T x num_enc_tokens]) is
  // applied to the cross-attention of every layer when present.
  Tensor<T> forward(const std::vector<int>& prefix, const Tensor<T>& enc,
                    Rng* dropout_rng = nullptr, const Tensor<T>* cross_mask = nullptr) const;

  // Last row of forward(), values only; runs under NoGradGuard.
  std::vector<double> next_token_logits(const std::vector<int>& prefix,
                                        const Tensor<T>& enc) const;

  // Incremental LSTM decoding state. begin() consumes the image feature
  // step; step() consumes one token and returns the logits row.
  struct LstmState {
    std::vector<Tensor<T>> h, c;
  };
  LstmState lstm_begin(const Tensor<T>& enc) const;
  std::vector<double> lstm_step_logits(LstmState& state, int token) const;

 private:
  Tensor<T> transformer_forward(const std::vector<int>& prefix, const Tensor<T>& enc,
                                Rng* rng, const Tensor<T>* cross_mask) const;
  Tensor<T> lstm_forward(const std::vector<int>& prefix, const Tensor<T>& enc) const;
  void lstm_advance(std::vector<Tensor<T>>& h, std::vector<Tensor<T>>& c,
                    const Tensor<T>& input) const;

  ArchConfig cfg_;
  Params<T> params_;
  Tensor<T> positions_;  // constant [max_len x e]
};

}  // namespace capkit
