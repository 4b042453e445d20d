#include "ncm/train.h"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "ncm/error.h"
#include "parallel.h"

namespace ncm {

namespace {

template <typename T>
std::vector<std::pair<std::string, Matrix<T>*>> tensors_of(Params<T>& p) {
  std::vector<std::pair<std::string, Matrix<T>*>> out;
  p.for_each([&](const std::string& name, Matrix<T>& m) { out.emplace_back(name, &m); });
  return out;
}

template <typename T>
std::vector<std::pair<std::string, const Matrix<T>*>> tensors_of(const Params<T>& p) {
  std::vector<std::pair<std::string, const Matrix<T>*>> out;
  p.for_each([&](const std::string& name, const Matrix<T>& m) { out.emplace_back(name, &m); });
  return out;
}

// Pairs tensors of two parameter sets by position, rejecting shape mismatch.
template <typename T, typename F>
void zip(Params<T>& target, const Params<T>& source, const char* op, F&& fn) {
  auto dst = tensors_of(target);
  auto src = tensors_of(source);
  if (dst.size() != src.size())
    throw ShapeError(std::string(op) + ": tensor count " + std::to_string(dst.size()) + " vs " +
                     std::to_string(src.size()));
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (!dst[i].second->same_shape(*src[i].second))
      throw ShapeError(std::string(op) + ": tensor '" + dst[i].first + "' " +
                       dst[i].second->shape_string() + " vs " + src[i].second->shape_string());
    fn(*dst[i].second, *src[i].second);
  }
}

template <typename T>
void add_params(Params<T>& into, const Params<T>& from) {
  zip(into, from, "add", [](Matrix<T>& a, const Matrix<T>& b) {
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < av.size(); ++i) av[i] += bv[i];
  });
}

}  // namespace

std::string to_string(OptimizerKind kind) {
  return kind == OptimizerKind::kSgd ? "sgd" : "adagrad";
}

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adagrad") return OptimizerKind::kAdagrad;
  throw ConfigError("unknown optimizer '" + std::string(name) + "' (expected sgd or adagrad)");
}

TrainSchedule TrainSchedule::defaults(OptimizerKind kind) {
  TrainSchedule s;
  s.optimizer = kind;
  s.learning_rate = kind == OptimizerKind::kSgd ? 0.5 : 0.1;
  return s;
}

void TrainSchedule::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("schedule: learning_rate must be positive");
  if (!(clip_threshold > 0.0)) throw ConfigError("schedule: clip_threshold must be positive");
  if (epochs < 1) throw ConfigError("schedule: epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("schedule: batch_size must be at least 1");
}

bool EpochRecord::same_numbers(const EpochRecord& o) const {
  return epoch == o.epoch && train_loss == o.train_loss && valid_loss == o.valid_loss &&
         valid_perplexity == o.valid_perplexity && learning_rate == o.learning_rate;
}

std::string format_epoch_line(const EpochRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu\t%.6f\t%.6f\t%.6f\t%.6g\t%.3f", r.epoch, r.train_loss,
                r.valid_loss, r.valid_perplexity, r.learning_rate, r.elapsed_seconds);
  return buf;
}

template <typename T>
double global_norm(const Params<T>& grads) {
  double sum = 0.0;
  grads.for_each([&](const std::string&, const Matrix<T>& m) {
    for (T x : m.values()) sum += static_cast<double>(x) * static_cast<double>(x);
  });
  return std::sqrt(sum);
}

template <typename T>
double clip_global_norm(Params<T>& grads, double threshold) {
  if (!(threshold > 0.0)) throw ConfigError("clip_global_norm: threshold must be positive");
  grads.for_each([](const std::string& name, const Matrix<T>& m) {
    if (!all_finite<T>(m.values()))
      throw NumericError("non-finite gradient in tensor '" + name + "'");
  });
  const double norm = global_norm(grads);
  if (norm > threshold) {
    const T scale = static_cast<T>(threshold / norm);
    grads.for_each([&](const std::string&, Matrix<T>& m) {
      for (T& x : m.values()) x *= scale;
    });
  }
  return norm;
}

template <typename T>
void sgd_step(Params<T>& params, const Params<T>& grads, double learning_rate) {
  const T lr = static_cast<T>(learning_rate);
  zip(params, grads, "sgd_step", [&](Matrix<T>& p, const Matrix<T>& g) {
    auto pv = p.values();
    auto gv = g.values();
    for (std::size_t i = 0; i < pv.size(); ++i) pv[i] -= lr * gv[i];
  });
}

template <typename T>
void adagrad_step(Params<T>& params, const Params<T>& grads, AdagradState<T>& state,
                  double learning_rate) {
  const T lr = static_cast<T>(learning_rate);
  const T eps = state.epsilon;
  // Shape check against both the gradient and the accumulators first so a
  // mismatch never leaves a half-updated model.
  zip(state.accumulators, grads, "adagrad_step", [](Matrix<T>&, const Matrix<T>&) {});
  zip(params, grads, "adagrad_step", [](Matrix<T>&, const Matrix<T>&) {});

  auto acc = tensors_of(state.accumulators);
  auto par = tensors_of(params);
  auto grd = tensors_of(grads);
  for (std::size_t t = 0; t < acc.size(); ++t) {
    auto av = acc[t].second->values();
    auto pv = par[t].second->values();
    auto gv = grd[t].second->values();
    for (std::size_t i = 0; i < av.size(); ++i) {
      const T g = gv[i];
      av[i] += g * g;
      if (g != T{0}) pv[i] -= lr * g / (std::sqrt(av[i]) + eps);
    }
  }
}

template <typename T>
double mean_token_loss(const Params<T>& params, const ModelConfig& config,
                       std::span<const TrainingPair> pairs, std::size_t threads) {
  if (pairs.empty()) throw DataError("mean_token_loss: no pairs");
  std::vector<double> losses(pairs.size());
  internal::parallel_for(pairs.size(), threads, [&](std::size_t i) {
    losses[i] = static_cast<double>(forward_pair(pairs[i], params, config).loss);
  });
  double total = 0.0;
  std::size_t tokens = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const std::size_t n = pairs[i].reply.size() + 1;
    total += losses[i] * static_cast<double>(n);
    tokens += n;
  }
  return total / static_cast<double>(tokens);
}

template <typename T>
TrainResult<T> train(const ModelConfig& config, Params<T> initial,
                     std::span<const TrainingPair> train_pairs,
                     std::span<const TrainingPair> valid_pairs, const TrainSchedule& schedule,
                     const EpochCallback& on_epoch) {
  config.validate();
  schedule.validate();
  if (train_pairs.empty()) throw DataError("train: no training pairs");
  if (valid_pairs.empty()) throw DataError("train: no validation pairs");
  if (!initial.matches(config)) throw ShapeError("train: initial params do not match config");

  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();

  TrainResult<T> result;
  Params<T> params = std::move(initial);
  result.optimizer = AdagradState<T>::zeros(config);
  result.params = params;

  std::vector<std::size_t> order(train_pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(schedule.shuffle_seed);

  const std::size_t batch = std::min(schedule.batch_size, train_pairs.size());
  std::vector<Params<T>> buffers(batch, Params<T>::zeros(config));
  std::vector<T> losses(batch);
  Params<T> grads = Params<T>::zeros(config);

  double lr = schedule.learning_rate;
  double best = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;

  for (std::size_t epoch = 1; epoch <= schedule.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    std::size_t tokens = 0;

    for (std::size_t b = 0; b < order.size(); b += batch) {
      const std::size_t m = std::min(batch, order.size() - b);
      internal::parallel_for(m, schedule.threads, [&](std::size_t j) {
        const auto& pair = train_pairs[order[b + j]];
        buffers[j].set_zero();
        auto trace = forward_pair(pair, params, config);
        losses[j] = trace.loss;
        if (std::isfinite(trace.loss)) accumulate_gradients(trace, params, config, buffers[j]);
      });
      grads.set_zero();
      for (std::size_t j = 0; j < m; ++j) {
        if (!std::isfinite(losses[j]))
          throw NumericError("non-finite loss at training pair index " +
                             std::to_string(order[b + j]) + " (epoch " + std::to_string(epoch) + ")");
        const std::size_t n = train_pairs[order[b + j]].reply.size() + 1;
        loss_sum += static_cast<double>(losses[j]) * static_cast<double>(n);
        tokens += n;
        add_params(grads, buffers[j]);
      }
      clip_global_norm(grads, schedule.clip_threshold);
      if (schedule.optimizer == OptimizerKind::kSgd)
        sgd_step(params, grads, lr);
      else
        adagrad_step(params, grads, result.optimizer, lr);
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(tokens);
    record.valid_loss = mean_token_loss(params, config, valid_pairs, schedule.threads);
    if (!std::isfinite(record.valid_loss))
      throw NumericError("non-finite validation loss after epoch " + std::to_string(epoch));
    record.valid_perplexity = std::exp(record.valid_loss);
    record.learning_rate = lr;
    record.elapsed_seconds = std::chrono::duration<double>(Clock::now() - start).count();

    if (record.valid_loss < best) {
      best = record.valid_loss;
      result.params = params;
      result.best_epoch = epoch;
      stale = 0;
    } else {
      ++stale;
      if (schedule.lr_halving) lr *= 0.5;
    }
    result.history.push_back(record);
    if (on_epoch) on_epoch(record);
    if (schedule.patience > 0 && stale >= schedule.patience) break;
  }
  return result;
}

#define NCM_INSTANTIATE(T)                                                                   \
  template double global_norm<T>(const Params<T>&);                                          \
  template double clip_global_norm<T>(Params<T>&, double);                                   \
  template void sgd_step<T>(Params<T>&, const Params<T>&, double);                           \
  template void adagrad_step<T>(Params<T>&, const Params<T>&, AdagradState<T>&, double);     \
  template double mean_token_loss<T>(const Params<T>&, const ModelConfig&,                   \
                                     std::span<const TrainingPair>, std::size_t);            \
  template TrainResult<T> train<T>(const ModelConfig&, Params<T>,                            \
                                   std::span<const TrainingPair>,                            \
                                   std::span<const TrainingPair>, const TrainSchedule&,      \
                                   const EpochCallback&);

NCM_INSTANTIATE(float)
NCM_INSTANTIATE(double)

#undef NCM_INSTANTIATE

}  // namespace ncm
