#ifndef NCM_TRAIN_H_
#define NCM_TRAIN_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ncm/model.h"

namespace ncm {

enum class OptimizerKind { kSgd, kAdagrad };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view name);

struct TrainSchedule {
  OptimizerKind optimizer = OptimizerKind::kAdagrad;
  double learning_rate = 0.1;
  double clip_threshold = 5.0;
  std::size_t epochs = 10;
  std::size_t batch_size = 1;
  std::uint64_t shuffle_seed = 1;
  bool lr_halving = false;
  // Stop after this many consecutive epochs without validation improvement;
  // 0 runs every epoch.
  std::size_t patience = 3;
  // Worker threads for per-pair forward/backward inside a batch. The result
  // does not depend on this value.
  std::size_t threads = 1;

  // Defaults per optimizer: sgd lr 0.5, adagrad lr 0.1.
  static TrainSchedule defaults(OptimizerKind kind);
  void validate() const;

  bool operator==(const TrainSchedule&) const = default;
};

template <typename T>
struct AdagradState {
  Params<T> accumulators;
  T epsilon = static_cast<T>(1e-8);

  static AdagradState zeros(const ModelConfig& config) { return {Params<T>::zeros(config)}; }
  bool operator==(const AdagradState&) const = default;
};

// Rescales every gradient by threshold / norm when the global L2 norm
// exceeds threshold. Returns the norm before clipping. Throws NumericError
// naming the first tensor holding a non-finite entry.
template <typename T>
double clip_global_norm(Params<T>& grads, double threshold);

template <typename T>
double global_norm(const Params<T>& grads);

// p -= lr * g
template <typename T>
void sgd_step(Params<T>& params, const Params<T>& grads, double learning_rate);

// acc += g^2; p -= lr * g / (sqrt(acc) + eps)
template <typename T>
void adagrad_step(Params<T>& params, const Params<T>& grads, AdagradState<T>& state,
                  double learning_rate);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // token-weighted mean over the epoch, pre-update
  double valid_loss = 0.0;
  double valid_perplexity = 0.0;
  double learning_rate = 0.0;
  double elapsed_seconds = 0.0;

  // Equality ignores wall time.
  bool same_numbers(const EpochRecord& other) const;
};

using TrainHistory = std::vector<EpochRecord>;

// Tab-separated: epoch, train loss, valid loss, valid perplexity, lr, seconds.
std::string format_epoch_line(const EpochRecord& record);

template <typename T>
struct TrainResult {
  Params<T> params;  // parameters from the best validation epoch
  AdagradState<T> optimizer;
  TrainHistory history;
  std::size_t best_epoch = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Per epoch: seeded shuffle, batches of summed per-pair gradients, clip,
// optimizer step; then validation loss. Keeps the best-validation params.
template <typename T>
TrainResult<T> train(const ModelConfig& config, Params<T> initial,
                     std::span<const TrainingPair> train_pairs,
                     std::span<const TrainingPair> valid_pairs, const TrainSchedule& schedule,
                     const EpochCallback& on_epoch = {});

// Token-weighted mean loss: sum(loss_i * targets_i) / sum(targets_i).
template <typename T>
double mean_token_loss(const Params<T>& params, const ModelConfig& config,
                       std::span<const TrainingPair> pairs, std::size_t threads = 1);

}  // namespace ncm

#endif  // NCM_TRAIN_H_
