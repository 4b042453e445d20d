#include "ncm/model.h"

#include <algorithm>
#include <cmath>

#include "ncm/error.h"

namespace ncm {

namespace {

template <typename U, typename T>
Matrix<U> convert(const Matrix<T>& m) {
  Matrix<U> out(m.rows(), m.cols());
  auto src = m.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<U>(src[i]);
  return out;
}

bool is_bias(const std::string& name) {
  return name == "output.b" || (name.size() > 2 && name.compare(name.size() - 2, 2, ".b") == 0);
}

void check_ids(std::span<const TokenId> ids, std::size_t vocab_size, const char* what) {
  for (TokenId id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size)
      throw IndexError(std::string(what) + ": token id " + std::to_string(id) +
                       " outside vocabulary of " + std::to_string(vocab_size));
}

template <typename T>
void add_into(std::span<T> dst, std::span<const T> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T>
Vector<T> project(const Vector<T>& h_top, const Params<T>& params, const ModelConfig& config) {
  if (config.projection_size == 0) return h_top;
  return matvec<T>(params.projection, h_top);
}

template <typename T>
Vector<T> logits_from(const Vector<T>& z, const Params<T>& params) {
  Vector<T> logits(params.output_b.values().begin(), params.output_b.values().end());
  matvec_accumulate<T>(params.output_w, z, logits);
  return logits;
}

// Backward through one cell. dh/dc are gradients w.r.t. the cell's outputs;
// writes gradients w.r.t. its inputs and accumulates parameter gradients.
template <typename T>
void cell_backward(const CellCache<T>& cache, const LayerParams<T>& params,
                   std::span<const T> dh, std::span<const T> dc_next, LayerParams<T>& grads,
                   Vector<T>& dx, Vector<T>& dh_prev, Vector<T>& dc_prev) {
  const std::size_t H = cache.h.size();
  Vector<T> da(4 * H);
  dc_prev.assign(H, T{0});
  for (std::size_t j = 0; j < H; ++j) {
    const T i = cache.gates[j];
    const T f = cache.gates[H + j];
    const T g = cache.gates[2 * H + j];
    const T o = cache.gates[3 * H + j];
    const T tc = cache.tanh_c[j];
    const T dc = dc_next[j] + dh[j] * o * (T{1} - tc * tc);
    da[j] = dc * g * i * (T{1} - i);
    da[H + j] = dc * cache.c_prev[j] * f * (T{1} - f);
    da[2 * H + j] = dc * i * (T{1} - g * g);
    da[3 * H + j] = dh[j] * tc * o * (T{1} - o);
    dc_prev[j] = dc * f;
  }
  outer_accumulate<T>(grads.w_x, da, cache.x);
  outer_accumulate<T>(grads.w_h, da, cache.h_prev);
  add_into<T>(grads.b.values(), da);
  dx.assign(cache.x.size(), T{0});
  dh_prev.assign(H, T{0});
  matvec_transposed_accumulate<T>(params.w_x, da, dx);
  matvec_transposed_accumulate<T>(params.w_h, da, dh_prev);
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < special::kCount + 1)
    throw ConfigError("model: vocab_size must be at least " + std::to_string(special::kCount + 1));
  if (embedding_size == 0) throw ConfigError("model: embedding_size must be positive");
  if (hidden_size == 0) throw ConfigError("model: hidden_size must be positive");
  if (num_layers == 0) throw ConfigError("model: num_layers must be positive");
}

// ---------------------------------------------------------------------------
// Params

template <typename T>
Params<T> Params<T>::zeros(const ModelConfig& config) {
  config.validate();
  const std::size_t H = config.hidden_size;
  Params p;
  p.embedding = Matrix<T>(config.vocab_size, config.embedding_size);
  for (std::size_t l = 0; l < config.num_layers; ++l)
    p.layers.push_back({Matrix<T>(4 * H, config.layer_input_size(l)), Matrix<T>(4 * H, H),
                        Matrix<T>(4 * H, 1)});
  if (config.projection_size > 0) p.projection = Matrix<T>(config.projection_size, H);
  p.output_w = Matrix<T>(config.vocab_size, config.output_input_size());
  p.output_b = Matrix<T>(config.vocab_size, 1);
  return p;
}

template <typename T>
Params<T> Params<T>::initialize(const ModelConfig& config) {
  Params p = zeros(config);
  Rng rng(config.seed);
  const T range = static_cast<T>(kInitRange);
  p.for_each([&](const std::string& name, Matrix<T>& m) {
    if (!is_bias(name)) fill_uniform<T>(m, -range, range, rng);
  });
  const std::size_t H = config.hidden_size;
  for (auto& layer : p.layers)
    for (std::size_t j = H; j < 2 * H; ++j) layer.b(j, 0) = static_cast<T>(kForgetBiasInit);
  return p;
}

template <typename T>
std::size_t Params<T>::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Matrix<T>& m) { n += m.size(); });
  return n;
}

template <typename T>
void Params<T>::set_zero() {
  for_each([](const std::string&, Matrix<T>& m) { m.fill(T{0}); });
}

template <typename T>
bool Params<T>::matches(const ModelConfig& config) const {
  const std::size_t H = config.hidden_size;
  auto shaped = [](const Matrix<T>& m, std::size_t r, std::size_t c) {
    return m.rows() == r && m.cols() == c;
  };
  if (!shaped(embedding, config.vocab_size, config.embedding_size)) return false;
  if (layers.size() != config.num_layers) return false;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (!shaped(layers[l].w_x, 4 * H, config.layer_input_size(l))) return false;
    if (!shaped(layers[l].w_h, 4 * H, H) || !shaped(layers[l].b, 4 * H, 1)) return false;
  }
  if (config.projection_size > 0 ? !shaped(projection, config.projection_size, H)
                                 : !projection.empty())
    return false;
  return shaped(output_w, config.vocab_size, config.output_input_size()) &&
         shaped(output_b, config.vocab_size, 1);
}

template <typename T>
template <typename U>
Params<U> Params<T>::cast() const {
  Params<U> out;
  out.embedding = convert<U>(embedding);
  for (const auto& l : layers) out.layers.push_back({convert<U>(l.w_x), convert<U>(l.w_h), convert<U>(l.b)});
  out.projection = convert<U>(projection);
  out.output_w = convert<U>(output_w);
  out.output_b = convert<U>(output_b);
  return out;
}

template <typename T>
SequenceState<T> SequenceState<T>::zeros(const ModelConfig& config) {
  SequenceState s;
  s.h.assign(config.num_layers, Vector<T>(config.hidden_size, T{0}));
  s.c.assign(config.num_layers, Vector<T>(config.hidden_size, T{0}));
  return s;
}

// ---------------------------------------------------------------------------
// Forward

template <typename T>
CellCache<T> lstm_cell(std::span<const T> x, std::span<const T> h, std::span<const T> c,
                       const LayerParams<T>& params) {
  const std::size_t H = params.w_h.cols();
  if (params.w_x.cols() != x.size() || h.size() != H || c.size() != H ||
      params.w_x.rows() != 4 * H || params.w_h.rows() != 4 * H || params.b.rows() != 4 * H)
    throw ShapeError("lstm_cell: x [" + std::to_string(x.size()) + "], h [" +
                     std::to_string(h.size()) + "], c [" + std::to_string(c.size()) +
                     "] against W_x " + params.w_x.shape_string() + ", W_h " +
                     params.w_h.shape_string() + ", b " + params.b.shape_string());
  CellCache<T> cache;
  cache.x.assign(x.begin(), x.end());
  cache.h_prev.assign(h.begin(), h.end());
  cache.c_prev.assign(c.begin(), c.end());
  cache.preactivation.assign(params.b.values().begin(), params.b.values().end());
  matvec_accumulate<T>(params.w_x, x, cache.preactivation);
  matvec_accumulate<T>(params.w_h, h, cache.preactivation);

  cache.gates.resize(4 * H);
  cache.c.resize(H);
  cache.tanh_c.resize(H);
  cache.h.resize(H);
  const auto& a = cache.preactivation;
  for (std::size_t j = 0; j < H; ++j) {
    const T i = sigmoid(a[j]);
    const T f = sigmoid(a[H + j]);
    const T g = std::tanh(a[2 * H + j]);
    const T o = sigmoid(a[3 * H + j]);
    cache.gates[j] = i;
    cache.gates[H + j] = f;
    cache.gates[2 * H + j] = g;
    cache.gates[3 * H + j] = o;
    cache.c[j] = f * c[j] + i * g;
    cache.tanh_c[j] = std::tanh(cache.c[j]);
    cache.h[j] = o * cache.tanh_c[j];
  }
  return cache;
}

template <typename T>
ForwardTrace<T> forward_pair(const TrainingPair& pair, const Params<T>& params,
                             const ModelConfig& config) {
  if (pair.context.empty() || pair.reply.empty())
    throw DataError("forward_pair: empty context or reply (doc '" + pair.source_doc + "')");
  check_ids(pair.context, config.vocab_size, "forward_pair");
  check_ids(pair.reply, config.vocab_size, "forward_pair");
  if (!params.matches(config)) throw ShapeError("forward_pair: params do not match config");

  ForwardTrace<T> trace;
  trace.config = config;
  trace.inputs = pair.context;
  if (config.reverse_input) std::reverse(trace.inputs.begin(), trace.inputs.end());
  trace.first_output_step = trace.inputs.size();
  trace.inputs.push_back(special::kEos);
  trace.inputs.insert(trace.inputs.end(), pair.reply.begin(), pair.reply.end());
  trace.targets = pair.reply;
  trace.targets.push_back(special::kEos);

  auto state = SequenceState<T>::zeros(config);
  trace.cells.reserve(trace.inputs.size());
  T total{0};
  for (std::size_t t = 0; t < trace.inputs.size(); ++t) {
    auto x = params.embedding.row(static_cast<std::size_t>(trace.inputs[t]));
    std::vector<CellCache<T>> layer_caches;
    layer_caches.reserve(config.num_layers);
    for (std::size_t l = 0; l < config.num_layers; ++l) {
      std::span<const T> in = l == 0 ? x : std::span<const T>(layer_caches.back().h);
      layer_caches.push_back(lstm_cell<T>(in, state.h[l], state.c[l], params.layers[l]));
      state.h[l] = layer_caches.back().h;
      state.c[l] = layer_caches.back().c;
    }
    trace.cells.push_back(std::move(layer_caches));
    if (t >= trace.first_output_step) {
      const std::size_t k = t - trace.first_output_step;
      Vector<T> z = project(state.top(), params, config);
      Vector<T> logits = logits_from(z, params);
      total += cross_entropy<T>(logits, static_cast<std::size_t>(trace.targets[k]));
      trace.projected.push_back(std::move(z));
      trace.logits.push_back(std::move(logits));
    }
  }
  trace.loss = total / static_cast<T>(trace.targets.size());
  return trace;
}

// ---------------------------------------------------------------------------
// Backward

template <typename T>
void accumulate_gradients(const ForwardTrace<T>& trace, const Params<T>& params,
                          const ModelConfig& config, Params<T>& grads, T loss_scale) {
  if (!(trace.config == config) || trace.cells.size() != trace.inputs.size() ||
      trace.logits.size() != trace.targets.size())
    throw ShapeError("backward_pair: trace was not produced for this model configuration");
  if (!params.matches(config) || !grads.matches(config))
    throw ShapeError("backward_pair: params or gradient buffers do not match config");

  const std::size_t H = config.hidden_size;
  const std::size_t L = config.num_layers;
  const T scale = loss_scale / static_cast<T>(trace.targets.size());

  std::vector<Vector<T>> dh_next(L, Vector<T>(H, T{0}));
  std::vector<Vector<T>> dc_next(L, Vector<T>(H, T{0}));
  Vector<T> dx, dh_prev, dc_prev;

  for (std::size_t t = trace.steps(); t-- > 0;) {
    const auto& step = trace.cells[t];
    Vector<T> dh_top = dh_next[L - 1];
    if (t >= trace.first_output_step) {
      const std::size_t k = t - trace.first_output_step;
      Vector<T> dlogits =
          cross_entropy_grad<T>(trace.logits[k], static_cast<std::size_t>(trace.targets[k]));
      for (T& v : dlogits) v *= scale;
      add_into<T>(grads.output_b.values(), dlogits);
      outer_accumulate<T>(grads.output_w, dlogits, trace.projected[k]);
      Vector<T> dz(config.output_input_size(), T{0});
      matvec_transposed_accumulate<T>(params.output_w, dlogits, dz);
      if (config.projection_size > 0) {
        outer_accumulate<T>(grads.projection, dz, step[L - 1].h);
        matvec_transposed_accumulate<T>(params.projection, dz, dh_top);
      } else {
        add_into<T>(dh_top, dz);
      }
    }

    Vector<T> dx_above;
    for (std::size_t l = L; l-- > 0;) {
      Vector<T> dh = l == L - 1 ? dh_top : dh_next[l];
      if (l != L - 1) add_into<T>(dh, dx_above);
      cell_backward<T>(step[l], params.layers[l], dh, dc_next[l], grads.layers[l], dx, dh_prev,
                       dc_prev);
      dh_next[l] = dh_prev;
      dc_next[l] = dc_prev;
      dx_above = dx;
    }
    add_into<T>(grads.embedding.row(static_cast<std::size_t>(trace.inputs[t])), dx_above);
  }
}

template <typename T>
Params<T> backward_pair(const ForwardTrace<T>& trace, const Params<T>& params,
                        const ModelConfig& config) {
  Params<T> grads = Params<T>::zeros(config);
  accumulate_gradients(trace, params, config, grads);
  return grads;
}

// ---------------------------------------------------------------------------
// Inference helpers

template <typename T>
void step_token(TokenId token, SequenceState<T>& state, const Params<T>& params,
                const ModelConfig& config) {
  if (token < 0 || static_cast<std::size_t>(token) >= config.vocab_size)
    throw IndexError("step_token: token id " + std::to_string(token) + " outside vocabulary");
  Vector<T> x(params.embedding.row(static_cast<std::size_t>(token)).begin(),
              params.embedding.row(static_cast<std::size_t>(token)).end());
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    auto cache = lstm_cell<T>(x, state.h[l], state.c[l], params.layers[l]);
    state.h[l] = cache.h;
    state.c[l] = std::move(cache.c);
    x = std::move(cache.h);
  }
}

template <typename T>
SequenceState<T> encode_context(std::span<const TokenId> context, const Params<T>& params,
                                const ModelConfig& config) {
  if (context.empty()) throw DataError("encode_context: empty context");
  auto state = SequenceState<T>::zeros(config);
  if (config.reverse_input) {
    for (std::size_t i = context.size(); i-- > 0;) step_token(context[i], state, params, config);
  } else {
    for (TokenId id : context) step_token(id, state, params, config);
  }
  step_token(special::kEos, state, params, config);
  return state;
}

template <typename T>
Vector<T> thought_vector(std::span<const TokenId> context, const Params<T>& params,
                         const ModelConfig& config) {
  return encode_context(context, params, config).top();
}

template <typename T>
Vector<T> output_logits(const SequenceState<T>& state, const Params<T>& params,
                        const ModelConfig& config) {
  if (state.h.size() != config.num_layers || state.top().size() != config.hidden_size)
    throw ShapeError("output_logits: state does not match config");
  return logits_from(project(state.top(), params, config), params);
}

template <typename T>
Vector<T> predict_distribution(const SequenceState<T>& state, const Params<T>& params,
                               const ModelConfig& config) {
  return softmax<T>(output_logits(state, params, config));
}

template <typename T>
Vector<T> predict_log_distribution(const SequenceState<T>& state, const Params<T>& params,
                                   const ModelConfig& config) {
  return log_softmax<T>(output_logits(state, params, config));
}

#define NCM_INSTANTIATE(T)                                                                     \
  template struct Params<T>;                                                                   \
  template struct SequenceState<T>;                                                            \
  template Params<float> Params<T>::cast<float>() const;                                       \
  template Params<double> Params<T>::cast<double>() const;                                     \
  template CellCache<T> lstm_cell<T>(std::span<const T>, std::span<const T>,                   \
                                     std::span<const T>, const LayerParams<T>&);               \
  template ForwardTrace<T> forward_pair<T>(const TrainingPair&, const Params<T>&,              \
                                           const ModelConfig&);                                \
  template void accumulate_gradients<T>(const ForwardTrace<T>&, const Params<T>&,              \
                                        const ModelConfig&, Params<T>&, T);                    \
  template Params<T> backward_pair<T>(const ForwardTrace<T>&, const Params<T>&,                \
                                      const ModelConfig&);                                     \
  template void step_token<T>(TokenId, SequenceState<T>&, const Params<T>&,                    \
                              const ModelConfig&);                                             \
  template SequenceState<T> encode_context<T>(std::span<const TokenId>, const Params<T>&,      \
                                              const ModelConfig&);                             \
  template Vector<T> thought_vector<T>(std::span<const TokenId>, const Params<T>&,             \
                                       const ModelConfig&);                                    \
  template Vector<T> output_logits<T>(const SequenceState<T>&, const Params<T>&,               \
                                      const ModelConfig&);                                     \
  template Vector<T> predict_distribution<T>(const SequenceState<T>&, const Params<T>&,        \
                                             const ModelConfig&);                              \
  template Vector<T> predict_log_distribution<T>(const SequenceState<T>&, const Params<T>&,    \
                                                 const ModelConfig&);

NCM_INSTANTIATE(float)
NCM_INSTANTIATE(double)

#undef NCM_INSTANTIATE

}  // namespace ncm
