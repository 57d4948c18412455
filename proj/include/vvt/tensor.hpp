#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vvt {

[[noreturn]] inline void fail(const std::string& msg) {
  throw std::invalid_argument(msg);
}

#define VVT_CHECK(cond, msg)      \
  do {                            \
    if (!(cond)) ::vvt::fail(msg); \
  } while (0)

/// Dense row-major tensor of rank 1..4. All shapes are explicit; there is no
/// broadcasting. Ops that need views slice rows, which are contiguous.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
    int64_t n = 1;
    for (int64_t d : shape_) {
      VVT_CHECK(d >= 0, "tensor dimension must be non-negative");
      n *= d;
    }
    data_.assign(static_cast<size_t>(n), T(0));
  }

  Tensor(std::initializer_list<int64_t> shape)
      : Tensor(std::vector<int64_t>(shape)) {}

  int rank() const { return static_cast<int>(shape_.size()); }
  const std::vector<int64_t>& shape() const { return shape_; }

  int64_t dim(int i) const {
    VVT_CHECK(i >= 0 && i < rank(), "dim index out of range");
    return shape_[static_cast<size_t>(i)];
  }

  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  std::span<T> flat() { return {data_.data(), data_.size()}; }
  std::span<const T> flat() const { return {data_.data(), data_.size()}; }

  T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  T& operator()(int64_t i, int64_t j) {
    return data_[static_cast<size_t>(i * shape_[1] + j)];
  }
  const T& operator()(int64_t i, int64_t j) const {
    return data_[static_cast<size_t>(i * shape_[1] + j)];
  }
  T& operator()(int64_t i, int64_t j, int64_t k) {
    return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }
  const T& operator()(int64_t i, int64_t j, int64_t k) const {
    return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }
  T& operator()(int64_t i, int64_t j, int64_t k, int64_t l) {
    return data_[static_cast<size_t>(
        ((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
  }
  const T& operator()(int64_t i, int64_t j, int64_t k, int64_t l) const {
    return data_[static_cast<size_t>(
        ((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
  }

  // Contiguous row pointer for rank-2 tensors.
  T* row(int64_t r) { return data_.data() + r * shape_[1]; }
  const T* row(int64_t r) const { return data_.data() + r * shape_[1]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void reshape(std::vector<int64_t> shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    VVT_CHECK(n == numel(), "reshape changes element count");
    shape_ = std::move(shape);
  }

 private:
  std::vector<int64_t> shape_;
  std::vector<T> data_;
};

template <typename T>
std::string shape_string(const Tensor<T>& t) {
  std::string s = "(";
  for (int i = 0; i < t.rank(); ++i) {
    if (i) s += ",";
    s += std::to_string(t.dim(i));
  }
  return s + ")";
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (T v : t.flat())
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Matrix products on rank-2 tensors. Accumulation over the contracted axis is
// sequential, which pins the reduction order for reproducibility.
// ---------------------------------------------------------------------------

namespace detail {

// c (+)= a * b, row-major, a: (m,k), b: (k,n).
template <typename T>
void gemm(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n,
          bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T(0));
  for (int64_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T(0)) continue;
      const T* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

/// C (+)= A·B with A (m,k) and B (k,n).
template <typename T>
void matmul(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& c,
            bool accumulate = false) {
  VVT_CHECK(a.rank() == 2 && b.rank() == 2 && c.rank() == 2,
            "matmul expects rank-2 tensors");
  VVT_CHECK(a.dim(1) == b.dim(0) && c.dim(0) == a.dim(0) &&
                c.dim(1) == b.dim(1),
            "matmul shape mismatch " + shape_string(a) + "*" + shape_string(b) +
                "->" + shape_string(c));
  detail::gemm(a.data(), b.data(), c.data(), a.dim(0), a.dim(1), b.dim(1),
               accumulate);
}

/// C (+)= Aᵀ·B with A (n,m) and B (n,k); accumulates sequentially over rows.
template <typename T>
void matmul_at_b(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& c,
                 bool accumulate = false) {
  VVT_CHECK(a.rank() == 2 && b.rank() == 2 && c.rank() == 2,
            "matmul_at_b expects rank-2 tensors");
  VVT_CHECK(a.dim(0) == b.dim(0) && c.dim(0) == a.dim(1) &&
                c.dim(1) == b.dim(1),
            "matmul_at_b shape mismatch");
  const int64_t n = a.dim(0), m = a.dim(1), k = b.dim(1);
  if (!accumulate) c.fill(T(0));
  for (int64_t r = 0; r < n; ++r) {
    const T* arow = a.row(r);
    const T* brow = b.row(r);
    for (int64_t i = 0; i < m; ++i) {
      const T av = arow[i];
      if (av == T(0)) continue;
      T* crow = c.row(i);
      for (int64_t j = 0; j < k; ++j) crow[j] += av * brow[j];
    }
  }
}

/// C (+)= A·Bᵀ with A (m,k) and B (n,k).
template <typename T>
void matmul_a_bt(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& c,
                 bool accumulate = false) {
  VVT_CHECK(a.rank() == 2 && b.rank() == 2 && c.rank() == 2,
            "matmul_a_bt expects rank-2 tensors");
  VVT_CHECK(a.dim(1) == b.dim(1) && c.dim(0) == a.dim(0) &&
                c.dim(1) == b.dim(0),
            "matmul_a_bt shape mismatch");
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  for (int64_t i = 0; i < m; ++i) {
    const T* arow = a.row(i);
    T* crow = c.row(i);
    for (int64_t j = 0; j < n; ++j) {
      const T* brow = b.row(j);
      T acc = accumulate ? crow[j] : T(0);
      for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] = acc;
    }
  }
}

/// Columns [c0, c1) of a rank-2 tensor as a new contiguous tensor.
template <typename T>
Tensor<T> slice_columns(const Tensor<T>& x, int64_t c0, int64_t c1) {
  VVT_CHECK(x.rank() == 2 && c0 >= 0 && c0 <= c1 && c1 <= x.dim(1),
            "slice_columns out of range");
  Tensor<T> out({x.dim(0), c1 - c0});
  for (int64_t r = 0; r < x.dim(0); ++r)
    std::copy(x.row(r) + c0, x.row(r) + c1, out.row(r));
  return out;
}

/// Writes (or accumulates) src into columns [c0, c0+src.cols) of dst.
template <typename T>
void place_columns(const Tensor<T>& src, Tensor<T>& dst, int64_t c0,
                   bool accumulate = false) {
  VVT_CHECK(src.rank() == 2 && dst.rank() == 2 && src.dim(0) == dst.dim(0) &&
                c0 + src.dim(1) <= dst.dim(1),
            "place_columns out of range");
  for (int64_t r = 0; r < src.dim(0); ++r) {
    const T* s = src.row(r);
    T* d = dst.row(r) + c0;
    for (int64_t c = 0; c < src.dim(1); ++c)
      d[c] = accumulate ? d[c] + s[c] : s[c];
  }
}

// ---------------------------------------------------------------------------
// Random numbers. One engine, explicitly seeded; every consumer draws from an
// engine it owns or is handed, so runs are reproducible per seed.
// ---------------------------------------------------------------------------

class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  double normal(double mean = 0.0, double sigma = 1.0) {
    return std::normal_distribution<double>(mean, sigma)(gen_);
  }

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(gen_);
  }

  // Uniform integer in [0, n).
  int64_t integer(int64_t n) {
    return std::uniform_int_distribution<int64_t>(0, n - 1)(gen_);
  }

  // Truncated normal: resample outside [mean - 2 sigma, mean + 2 sigma].
  double trunc_normal(double mean, double sigma) {
    for (;;) {
      double v = normal(mean, sigma);
      if (std::abs(v - mean) <= 2.0 * sigma) return v;
    }
  }

  template <typename It>
  void shuffle(It first, It last) {
    std::shuffle(first, last, gen_);
  }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

template <typename T>
void fill_normal(Tensor<T>& t, Rng& rng, double mean = 0.0,
                 double sigma = 1.0) {
  for (T& v : t.flat()) v = static_cast<T>(rng.normal(mean, sigma));
}

template <typename T>
void fill_trunc_normal(Tensor<T>& t, Rng& rng, double mean = 0.0,
                       double sigma = 0.02) {
  for (T& v : t.flat()) v = static_cast<T>(rng.trunc_normal(mean, sigma));
}

template <typename T>
void fill_uniform(Tensor<T>& t, Rng& rng, double lo, double hi) {
  for (T& v : t.flat()) v = static_cast<T>(rng.uniform(lo, hi));
}

}  // namespace vvt
