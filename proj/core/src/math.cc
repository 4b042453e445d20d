#include "ncm/math.h"

#include <cmath>
#include <limits>

#include "ncm/error.h"

namespace ncm {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

std::string vec_shape(std::size_t n) { return "[" + std::to_string(n) + "]"; }

}  // namespace

template <typename T>
std::string Matrix<T>::shape_string() const {
  return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
}

template <typename T>
T sigmoid(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  T e = std::exp(x);
  return e / (T{1} + e);
}

template <typename T>
Vector<T> matvec(const Matrix<T>& m, std::span<const T> v) {
  Vector<T> out(m.rows(), T{0});
  matvec_accumulate<T>(m, v, out);
  return out;
}

template <typename T>
void matvec_accumulate(const Matrix<T>& m, std::span<const T> v, std::span<T> out) {
  require(v.size() == m.cols() && out.size() == m.rows(),
          "matvec: matrix " + m.shape_string() + " vs vector " + vec_shape(v.size()) +
              " into " + vec_shape(out.size()));
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto row = m.row(i);
    T acc{0};
    for (std::size_t j = 0; j < row.size(); ++j) acc += row[j] * v[j];
    out[i] += acc;
  }
}

template <typename T>
void matvec_transposed_accumulate(const Matrix<T>& m, std::span<const T> v, std::span<T> out) {
  require(v.size() == m.rows() && out.size() == m.cols(),
          "matvec^T: matrix " + m.shape_string() + " vs vector " + vec_shape(v.size()) +
              " into " + vec_shape(out.size()));
  for (std::size_t i = 0; i < m.rows(); ++i) {
    T vi = v[i];
    if (vi == T{0}) continue;
    auto row = m.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) out[j] += row[j] * vi;
  }
}

template <typename T>
void outer_accumulate(Matrix<T>& m, std::span<const T> a, std::span<const T> b) {
  require(a.size() == m.rows() && b.size() == m.cols(),
          "outer: matrix " + m.shape_string() + " vs " + vec_shape(a.size()) + " x " +
              vec_shape(b.size()));
  for (std::size_t i = 0; i < m.rows(); ++i) {
    T ai = a[i];
    if (ai == T{0}) continue;
    auto row = m.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += ai * b[j];
  }
}

template <typename T>
Vector<T> elementwise(std::span<const T> v, Activation f) {
  Vector<T> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    out[i] = f == Activation::kSigmoid ? sigmoid(v[i]) : std::tanh(v[i]);
  return out;
}

template <typename T>
T log_sum_exp(std::span<const T> logits) {
  require(!logits.empty(), "log_sum_exp: empty logits");
  T max = logits[0];
  for (T x : logits) max = std::max(max, x);
  // Accumulate in double so long float vectors still normalize to ~1e-7.
  double sum = 0.0;
  for (T x : logits) sum += static_cast<double>(std::exp(x - max));
  return max + static_cast<T>(std::log(sum));
}

template <typename T>
Vector<T> softmax(std::span<const T> logits) {
  require(!logits.empty(), "softmax: empty logits");
  T max = logits[0];
  for (T x : logits) max = std::max(max, x);
  Vector<T> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - max);
    sum += static_cast<double>(out[i]);
  }
  for (T& p : out) p = static_cast<T>(static_cast<double>(p) / sum);
  return out;
}

template <typename T>
Vector<T> log_softmax(std::span<const T> logits) {
  T lse = log_sum_exp(logits);
  Vector<T> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

template <typename T>
T cross_entropy(std::span<const T> logits, std::size_t target) {
  if (target >= logits.size())
    throw IndexError("cross_entropy: target " + std::to_string(target) + " outside " +
                     std::to_string(logits.size()) + " logits");
  T loss = log_sum_exp(logits) - logits[target];
  // Rounding can produce a tiny negative value for a near-certain target.
  return loss < T{0} ? T{0} : loss;
}

template <typename T>
Vector<T> cross_entropy_grad(std::span<const T> logits, std::size_t target) {
  if (target >= logits.size())
    throw IndexError("cross_entropy_grad: target " + std::to_string(target) + " outside " +
                     std::to_string(logits.size()) + " logits");
  Vector<T> grad = softmax(logits);
  grad[target] -= T{1};
  return grad;
}

template <typename T>
bool all_finite(std::span<const T> values) {
  for (T x : values)
    if (!std::isfinite(x)) return false;
  return true;
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw ConfigError("Rng::below: n must be positive");
  // Largest multiple of n that fits; reject the tail to avoid modulo bias.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = next();
  } while (x >= limit);
  return x % n;
}

template <typename T>
T Rng::uniform(T lo, T hi) {
  double u = uniform01();
  T x = static_cast<T>(static_cast<double>(lo) + (static_cast<double>(hi) - lo) * u);
  // Narrowing to T can round up onto hi.
  if (!(x < hi)) x = std::nextafter(hi, lo);
  if (x < lo) x = lo;
  return x;
}

template <typename T>
void fill_uniform(Matrix<T>& m, T lo, T hi, Rng& rng) {
  if (!(lo < hi)) throw ConfigError("fill_uniform: requires lo < hi");
  for (T& x : m.values()) x = rng.uniform<T>(lo, hi);
}

template <typename T>
Matrix<T> seeded_uniform(std::size_t rows, std::size_t cols, T lo, T hi, std::uint64_t seed) {
  Matrix<T> m(rows, cols);
  Rng rng(seed);
  fill_uniform(m, lo, hi, rng);
  return m;
}

#define NCM_INSTANTIATE(T)                                                                   \
  template class Matrix<T>;                                                                  \
  template T sigmoid<T>(T);                                                                  \
  template Vector<T> matvec<T>(const Matrix<T>&, std::span<const T>);                        \
  template void matvec_accumulate<T>(const Matrix<T>&, std::span<const T>, std::span<T>);    \
  template void matvec_transposed_accumulate<T>(const Matrix<T>&, std::span<const T>,        \
                                                std::span<T>);                               \
  template void outer_accumulate<T>(Matrix<T>&, std::span<const T>, std::span<const T>);     \
  template Vector<T> elementwise<T>(std::span<const T>, Activation);                         \
  template T log_sum_exp<T>(std::span<const T>);                                             \
  template Vector<T> softmax<T>(std::span<const T>);                                         \
  template Vector<T> log_softmax<T>(std::span<const T>);                                     \
  template T cross_entropy<T>(std::span<const T>, std::size_t);                              \
  template Vector<T> cross_entropy_grad<T>(std::span<const T>, std::size_t);                 \
  template bool all_finite<T>(std::span<const T>);                                           \
  template T Rng::uniform<T>(T, T);                                                          \
  template void fill_uniform<T>(Matrix<T>&, T, T, Rng&);                                     \
  template Matrix<T> seeded_uniform<T>(std::size_t, std::size_t, T, T, std::uint64_t);

NCM_INSTANTIATE(float)
NCM_INSTANTIATE(double)

#undef NCM_INSTANTIATE

}  // namespace ncm
