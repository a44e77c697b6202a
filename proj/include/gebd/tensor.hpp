#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace gebd {

// Validation failures (bad configs, malformed files) vs. failures at run time
// (non-finite activations, I/O). The CLI maps these to exit codes 2 and 3.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

class PipelineError : public std::runtime_error {
 public:
  explicit PipelineError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace nn {

// Dense row-major tensor. Shapes are small, data can be large; everything is
// a value type so model state can be copied, checkpointed and compared
// directly.
template <class T>
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<T> v;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)), v(count(shape), T(0)) {}
  Tensor(std::vector<int64_t> s, T fill) : shape(std::move(s)), v(count(shape), fill) {}

  static int64_t count(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (int64_t d : s) {
      if (d < 0) throw ValidationError("tensor: negative dimension");
      n *= d;
    }
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(v.size()); }
  int64_t dim(int i) const { return shape.at(static_cast<size_t>(i)); }
  int rank() const { return static_cast<int>(shape.size()); }
  T* data() { return v.data(); }
  const T* data() const { return v.data(); }
  T& operator[](int64_t i) { return v[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return v[static_cast<size_t>(i)]; }

  void zero() { std::fill(v.begin(), v.end(), T(0)); }

  void reshape(std::vector<int64_t> s) {
    if (count(s) != numel()) throw ValidationError("tensor: reshape changes element count");
    shape = std::move(s);
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (const T& x : v)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }
};

template <class T>
void fill_normal(Tensor<T>& t, std::mt19937& rng, double stddev, double mean = 0.0) {
  std::normal_distribution<double> d(mean, stddev);
  for (auto& x : t.v) x = static_cast<T>(d(rng));
}

template <class T>
void fill_uniform(Tensor<T>& t, std::mt19937& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& x : t.v) x = static_cast<T>(d(rng));
}

// Named reference to a parameter and its gradient buffer. Modules expose
// their state through these for the optimizer, checkpointing and the
// finite-difference checks.
template <class T>
struct ParamRef {
  std::string name;
  Tensor<T>* w = nullptr;
  Tensor<T>* g = nullptr;
};

template <class T>
using ParamList = std::vector<ParamRef<T>>;

inline std::string join_name(const std::string& prefix, const std::string& leaf) {
  return prefix.empty() ? leaf : prefix + "." + leaf;
}

}  // namespace nn
}  // namespace gebd
