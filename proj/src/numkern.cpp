#include "yoto/numkern.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <sstream>

#include "yoto/error.hpp"

namespace yoto {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1u << 15;

std::size_t product(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

void validate_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > 2) {
    throw Error(ErrorKind::dimension, "tensor rank must be 1 or 2, got shape " + shape_string(shape));
  }
  for (std::size_t e : shape) {
    if (e == 0) throw Error(ErrorKind::dimension, "tensor extents must be positive, got " + shape_string(shape));
  }
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw Error(ErrorKind::dimension, std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorKind::dimension,
                std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

void require_finite(const Tensor& t, const char* op) {
  if (!all_finite(t)) throw Error(ErrorKind::numeric, std::string(op) + ": produced a non-finite value");
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(product(shape_), 0.0f);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  validate_shape(shape_);
  if (data_.size() != product(shape_)) {
    throw Error(ErrorKind::dimension, "data length " + std::to_string(data_.size()) + " does not match shape " +
                                          shape_string(shape_));
  }
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         (a.size() == 0 || std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(float)) == 0);
}

bool all_finite(const Tensor& t) {
  for (float v : t.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(seed ^ splitmix64(stream + 0x632BE59BD9B4E019ull));
}

SeededRng::SeededRng(std::uint64_t seed) : seed_(seed) {
  std::uint64_t x = seed;
  for (auto& s : s_) {
    x += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    s = z ^ (z >> 31);
  }
}

std::uint64_t SeededRng::next_u64() {
  auto rotl = [](std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); };
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double SeededRng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t SeededRng::below(std::uint64_t n) {
  if (n == 0) throw Error(ErrorKind::argument, "SeededRng::below requires n > 0");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

double SeededRng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

namespace kern {

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.cols() != b.rows()) {
    throw Error(ErrorKind::dimension,
                "matmul: inner dimensions differ " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor c = Tensor::matrix(m, n);
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  float* pc = c.data().data();
  const long long rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static) if (m * n * k >= kParallelWork)
  for (long long i = 0; i < rows; ++i) {
    float* crow = pc + i * n;
    const float* arow = pa + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const float av = arow[p];
      const float* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  require_finite(c, "matmul");
  return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_tn");
  require_rank2(b, "matmul_tn");
  if (a.rows() != b.rows()) {
    throw Error(ErrorKind::dimension,
                "matmul_tn: row counts differ " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  Tensor c = Tensor::matrix(m, n);
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  float* pc = c.data().data();
  const long long rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static) if (m * n * k >= kParallelWork)
  for (long long i = 0; i < rows; ++i) {
    float* crow = pc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const float av = pa[p * m + i];
      if (av == 0.0f) continue;
      const float* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  require_finite(c, "matmul_tn");
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  if (a.cols() != b.cols()) {
    throw Error(ErrorKind::dimension,
                "matmul_nt: column counts differ " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  // Same ascending-k sum as a dot product, but laid out so the inner loop
  // runs over contiguous output columns.
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  const Tensor bt = transpose(b);
  Tensor c = Tensor::matrix(m, n);
  const float* pa = a.data().data();
  const float* pb = bt.data().data();
  float* pc = c.data().data();
  const long long rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static) if (m * n * k >= kParallelWork)
  for (long long i = 0; i < rows; ++i) {
    float* crow = pc + i * n;
    const float* arow = pa + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const float av = arow[p];
      const float* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  require_finite(c, "matmul_nt");
  return c;
}

Tensor softmax_rows(const Tensor& a) {
  Tensor out(a.shape());
  const std::size_t n = a.cols();
  const long long rows = static_cast<long long>(a.rows());
#pragma omp parallel for schedule(static) if (a.size() >= kParallelWork)
  for (long long r = 0; r < rows; ++r) {
    const float* in = a.data().data() + r * n;
    float* o = out.data().data() + r * n;
    float mx = in[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, in[j]);
    float sum = 0.0f;
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    const float inv = 1.0f / sum;
    for (std::size_t j = 0; j < n; ++j) o[j] *= inv;
  }
  return out;
}

LayerNormResult layer_norm_ex(const Tensor& a, const Tensor& gain, const Tensor& bias, float eps) {
  if (!(eps > 0.0f)) throw Error(ErrorKind::argument, "layer_norm: eps must be positive");
  const std::size_t n = a.cols();
  if (gain.size() != n || bias.size() != n) {
    throw Error(ErrorKind::dimension, "layer_norm: gain/bias " + shape_string(gain.shape()) + "/" +
                                          shape_string(bias.shape()) + " do not match input " +
                                          shape_string(a.shape()));
  }
  LayerNormResult res{Tensor(a.shape()), Tensor(a.shape()), std::vector<float>(a.rows())};
  const long long rows = static_cast<long long>(a.rows());
#pragma omp parallel for schedule(static) if (a.size() >= kParallelWork)
  for (long long r = 0; r < rows; ++r) {
    const float* x = a.data().data() + r * n;
    float* xh = res.normalized.data().data() + r * n;
    float* y = res.out.data().data() + r * n;
    float mean = 0.0f;
    for (std::size_t j = 0; j < n; ++j) mean += x[j];
    mean /= static_cast<float>(n);
    float var = 0.0f;
    for (std::size_t j = 0; j < n; ++j) {
      const float d = x[j] - mean;
      var += d * d;
    }
    var /= static_cast<float>(n);
    const float rstd = 1.0f / std::sqrt(var + eps);
    res.rstd[r] = rstd;
    for (std::size_t j = 0; j < n; ++j) {
      xh[j] = (x[j] - mean) * rstd;
      y[j] = xh[j] * gain[j] + bias[j];
    }
  }
  require_finite(res.out, "layer_norm");
  return res;
}

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, float eps) {
  return layer_norm_ex(a, gain, bias, eps).out;
}

namespace {

template <typename F>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, F f) {
  require_same_shape(a, b, name);
  Tensor out(a.shape());
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  float* po = out.data().data();
  const long long n = static_cast<long long>(a.size());
#pragma omp parallel for schedule(static) if (a.size() >= kParallelWork)
  for (long long i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
  require_finite(out, name);
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "add", [](float x, float y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "sub", [](float x, float y) { return x - y; });
}

Tensor scale(float alpha, const Tensor& a) {
  Tensor out(a.shape());
  // 0 * x would give -0 for negative x; zero scaling is defined as exact +0.
  if (alpha == 0.0f) return out;
  const float* pa = a.data().data();
  float* po = out.data().data();
  const long long n = static_cast<long long>(a.size());
#pragma omp parallel for schedule(static) if (a.size() >= kParallelWork)
  for (long long i = 0; i < n; ++i) po[i] = alpha * pa[i];
  require_finite(out, "scale");
  return out;
}

Tensor relu(const Tensor& a) {
  Tensor out(a.shape());
  const float* pa = a.data().data();
  float* po = out.data().data();
  const long long n = static_cast<long long>(a.size());
#pragma omp parallel for schedule(static) if (a.size() >= kParallelWork)
  for (long long i = 0; i < n; ++i) po[i] = pa[i] > 0.0f ? pa[i] : 0.0f;
  return out;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() == 1) return Tensor(Shape{a.size(), 1}, std::vector<float>(a.data().begin(), a.data().end()));
  Tensor out = Tensor::matrix(a.cols(), a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < a.cols(); ++c) out(c, r) = a(r, c);
  }
  return out;
}

Tensor row_mean(const Tensor& a) {
  Tensor out = Tensor::vector(a.rows());
  const std::size_t n = a.cols();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    float s = 0.0f;
    for (float v : a.row(r)) s += v;
    out[r] = s / static_cast<float>(n);
  }
  return out;
}

void add_row_bias(Tensor& a, const Tensor& bias) {
  if (bias.size() != a.cols()) {
    throw Error(ErrorKind::dimension,
                "add_row_bias: bias " + shape_string(bias.shape()) + " vs input " + shape_string(a.shape()));
  }
  const std::size_t n = a.cols();
  const long long rows = static_cast<long long>(a.rows());
  float* pa = a.data().data();
  const float* pb = bias.data().data();
#pragma omp parallel for schedule(static) if (a.size() >= kParallelWork)
  for (long long r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < n; ++j) pa[r * n + j] += pb[j];
  }
}

Tensor col_sum(const Tensor& a) {
  Tensor out = Tensor::vector(a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const auto row = a.row(r);
    for (std::size_t j = 0; j < row.size(); ++j) out[j] += row[j];
  }
  return out;
}

void add_inplace(Tensor& acc, const Tensor& b) {
  require_same_shape(acc, b, "add_inplace");
  float* pa = acc.data().data();
  const float* pb = b.data().data();
  const long long n = static_cast<long long>(acc.size());
#pragma omp parallel for schedule(static) if (acc.size() >= kParallelWork)
  for (long long i = 0; i < n; ++i) pa[i] += pb[i];
}

Tensor rng_normal(SeededRng& rng, const Shape& shape, float stddev) {
  if (!(stddev >= 0.0f)) throw Error(ErrorKind::argument, "rng_normal: stddev must be >= 0");
  Tensor out(shape);
  // Draws are consumed even for stddev == 0 so the stream position does not
  // depend on the value of stddev.
  for (float& v : out.data()) {
    const double z = rng.normal();
    v = stddev == 0.0f ? 0.0f : static_cast<float>(z * stddev);
  }
  return out;
}

}  // namespace kern
}  // namespace yoto
