#ifndef NCM_MATH_H_
#define NCM_MATH_H_

// Dense linear algebra and numerically stable primitives shared by the
// network, the decoders and the training loop. Everything is templated on
// the scalar type: float for training and inference, double for gradient
// verification. Explicit instantiations exist for exactly those two.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace ncm {

template <typename T>
using Vector = std::vector<T>;

// Row-major dense matrix. A default-constructed matrix is 0x0 and marks an
// absent tensor (e.g. a disabled projection layer).
template <typename T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{0})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  T operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }
  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  std::string shape_string() const;

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

enum class Activation { kSigmoid, kTanh };

template <typename T>
T sigmoid(T x);

// out = m * v
template <typename T>
Vector<T> matvec(const Matrix<T>& m, std::span<const T> v);

// out += m * v
template <typename T>
void matvec_accumulate(const Matrix<T>& m, std::span<const T> v, std::span<T> out);

// out += transpose(m) * v
template <typename T>
void matvec_transposed_accumulate(const Matrix<T>& m, std::span<const T> v, std::span<T> out);

// m += a * transpose(b)
template <typename T>
void outer_accumulate(Matrix<T>& m, std::span<const T> a, std::span<const T> b);

template <typename T>
Vector<T> elementwise(std::span<const T> v, Activation f);

template <typename T>
T log_sum_exp(std::span<const T> logits);

template <typename T>
Vector<T> softmax(std::span<const T> logits);

template <typename T>
Vector<T> log_softmax(std::span<const T> logits);

// -log softmax(logits)[target], evaluated through log-sum-exp.
template <typename T>
T cross_entropy(std::span<const T> logits, std::size_t target);

// d cross_entropy / d logits = softmax(logits) - onehot(target).
template <typename T>
Vector<T> cross_entropy_grad(std::span<const T> logits, std::size_t target);

template <typename T>
bool all_finite(std::span<const T> values);

// Deterministic random source. The engine is std::mt19937_64, whose output
// sequence is fixed by the C++ standard; conversion to floating point and
// bounded integers is done here rather than through <random> distributions,
// whose algorithms are implementation-defined. Results are therefore
// bit-identical across compilers and platforms for a given seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // Uniform in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  // Uniform integer in [0, n), unbiased (rejection sampling). n > 0.
  std::uint64_t below(std::uint64_t n);

  template <typename T>
  T uniform(T lo, T hi);

  template <typename It>
  void shuffle(It first, It last) {
    auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      auto j = below(i);
      std::swap(first[i - 1], first[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

// Entries i.i.d. uniform in [lo, hi), filled row-major from Rng(seed).
template <typename T>
Matrix<T> seeded_uniform(std::size_t rows, std::size_t cols, T lo, T hi, std::uint64_t seed);

// Fills m row-major from an existing generator.
template <typename T>
void fill_uniform(Matrix<T>& m, T lo, T hi, Rng& rng);

}  // namespace ncm

#endif  // NCM_MATH_H_
