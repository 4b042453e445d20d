#ifndef NCM_MODEL_H_
#define NCM_MODEL_H_

// A single recurrent network that reads the context one token at a time,
// then an end-of-sequence marker, then emits the reply one token at a time.
// The same LSTM stack is used for reading and for emitting.
//
// Per layer and step, with gates stacked in (i, f, g, o) order:
//   a  = W_x x + W_h h + b
//   i  = sigmoid(a_i)   f = sigmoid(a_f)   g = tanh(a_g)   o = sigmoid(a_o)
//   c' = f * c + i * g
//   h' = o * tanh(c')
// The top hidden state is optionally projected by a linear map (no
// activation) before the output softmax layer.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ncm/math.h"
#include "ncm/text.h"

namespace ncm {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t embedding_size = 0;
  std::size_t hidden_size = 0;
  std::size_t num_layers = 1;
  std::size_t projection_size = 0;  // 0 disables the projection
  std::uint64_t seed = 1;
  bool reverse_input = false;  // feed the context right-to-left

  void validate() const;
  std::size_t layer_input_size(std::size_t layer) const {
    return layer == 0 ? embedding_size : hidden_size;
  }
  // Width of the vector fed to the output layer.
  std::size_t output_input_size() const {
    return projection_size > 0 ? projection_size : hidden_size;
  }

  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct LayerParams {
  Matrix<T> w_x;  // 4H x in
  Matrix<T> w_h;  // 4H x H
  Matrix<T> b;    // 4H x 1

  bool operator==(const LayerParams&) const = default;
};

inline constexpr float kInitRange = 0.08f;
inline constexpr float kForgetBiasInit = 1.0f;

// Model parameters. Gradients use the same type.
template <typename T>
struct Params {
  Matrix<T> embedding;  // V x E
  std::vector<LayerParams<T>> layers;
  Matrix<T> projection;  // P x H, empty when disabled
  Matrix<T> output_w;    // V x (P or H)
  Matrix<T> output_b;    // V x 1

  // All tensors shaped for config and set to zero.
  static Params zeros(const ModelConfig& config);
  // Uniform [-0.08, 0.08) from Rng(config.seed), tensors filled in
  // for_each order; LSTM biases start at zero except the forget slice (1.0)
  // and the output bias starts at zero.
  static Params initialize(const ModelConfig& config);

  // Visits every tensor with a stable name, in a fixed order:
  // embedding, lstm.<l>.{w_x,w_h,b}, projection (if any), output.w, output.b.
  template <typename F>
  void for_each(F&& f) {
    visit(*this, f);
  }
  template <typename F>
  void for_each(F&& f) const {
    visit(*this, f);
  }

  std::size_t parameter_count() const;
  void set_zero();
  // True when every tensor has the shape config implies.
  bool matches(const ModelConfig& config) const;

  template <typename U>
  Params<U> cast() const;

  bool operator==(const Params&) const = default;

 private:
  template <typename Self, typename F>
  static void visit(Self& self, F& f) {
    f(std::string("embedding"), self.embedding);
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      const std::string prefix = "lstm." + std::to_string(l) + ".";
      f(prefix + "w_x", self.layers[l].w_x);
      f(prefix + "w_h", self.layers[l].w_h);
      f(prefix + "b", self.layers[l].b);
    }
    if (!self.projection.empty()) f(std::string("projection"), self.projection);
    f(std::string("output.w"), self.output_w);
    f(std::string("output.b"), self.output_b);
  }
};

template <typename T>
struct SequenceState {
  std::vector<Vector<T>> h;  // per layer
  std::vector<Vector<T>> c;

  static SequenceState zeros(const ModelConfig& config);
  const Vector<T>& top() const { return h.back(); }

  bool operator==(const SequenceState&) const = default;
};

// Everything the backward pass needs from one cell evaluation.
template <typename T>
struct CellCache {
  Vector<T> x;
  Vector<T> h_prev;
  Vector<T> c_prev;
  Vector<T> preactivation;  // 4H
  Vector<T> gates;          // 4H, activated
  Vector<T> c;
  Vector<T> tanh_c;
  Vector<T> h;
};

template <typename T>
CellCache<T> lstm_cell(std::span<const T> x, std::span<const T> h, std::span<const T> c,
                       const LayerParams<T>& params);

template <typename T>
struct ForwardTrace {
  ModelConfig config;
  std::vector<TokenId> inputs;                  // token fed at each step
  std::vector<std::vector<CellCache<T>>> cells;  // [step][layer]
  std::size_t first_output_step = 0;            // the step that consumed eos
  std::vector<TokenId> targets;                 // reply tokens then eos
  std::vector<Vector<T>> projected;             // projection output per target
  std::vector<Vector<T>> logits;                // per target
  T loss{0};                                    // mean cross-entropy per target

  std::size_t steps() const { return inputs.size(); }
};

// Teacher-forced pass over context, eos, reply. Logits are produced at the
// eos step and at every reply step; targets are the reply followed by eos.
template <typename T>
ForwardTrace<T> forward_pair(const TrainingPair& pair, const Params<T>& params,
                             const ModelConfig& config);

// grads += loss_scale * d(trace.loss)/d(params), full backpropagation
// through time.
template <typename T>
void accumulate_gradients(const ForwardTrace<T>& trace, const Params<T>& params,
                          const ModelConfig& config, Params<T>& grads, T loss_scale = T{1});

template <typename T>
Params<T> backward_pair(const ForwardTrace<T>& trace, const Params<T>& params,
                        const ModelConfig& config);

// Advances state by one input token.
template <typename T>
void step_token(TokenId token, SequenceState<T>& state, const Params<T>& params,
                const ModelConfig& config);

// State after consuming the context (reversed if configured) and eos.
template <typename T>
SequenceState<T> encode_context(std::span<const TokenId> context, const Params<T>& params,
                                const ModelConfig& config);

template <typename T>
Vector<T> thought_vector(std::span<const TokenId> context, const Params<T>& params,
                         const ModelConfig& config);

template <typename T>
Vector<T> output_logits(const SequenceState<T>& state, const Params<T>& params,
                        const ModelConfig& config);

template <typename T>
Vector<T> predict_distribution(const SequenceState<T>& state, const Params<T>& params,
                               const ModelConfig& config);

template <typename T>
Vector<T> predict_log_distribution(const SequenceState<T>& state, const Params<T>& params,
                                   const ModelConfig& config);

}  // namespace ncm

#endif  // NCM_MODEL_H_
