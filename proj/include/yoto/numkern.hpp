#pragma once

// Dense rank-1/rank-2 float tensors, seeded randomness and the kernels every
// model computation is built from.
//
// Kernels are OpenMP-parallel over independent output rows/elements. Every
// reduction runs in a fixed ascending index order inside one thread, so the
// results are bit-identical to the serial reference kernels in
// numkern_ref.hpp regardless of the thread count.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace yoto {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  // Zero-filled tensor of the given shape (rank 1 or 2, positive extents).
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor matrix(std::size_t rows, std::size_t cols) { return Tensor(Shape{rows, cols}); }
  static Tensor vector(std::size_t n) { return Tensor(Shape{n}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  // Rank-1 tensors behave as a single row.
  std::size_t rows() const noexcept { return rank() == 2 ? shape_[0] : 1; }
  std::size_t cols() const noexcept { return rank() == 2 ? shape_[1] : (rank() == 1 ? shape_[0] : 0); }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  std::vector<float>& storage() noexcept { return data_; }

  float& operator[](std::size_t i) noexcept { return data_[i]; }
  float operator[](std::size_t i) const noexcept { return data_[i]; }
  float& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
  float operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

  std::span<float> row(std::size_t r) noexcept { return std::span<float>(data_).subspan(r * cols(), cols()); }
  std::span<const float> row(std::size_t r) const noexcept {
    return std::span<const float>(data_).subspan(r * cols(), cols());
  }

 private:
  Shape shape_;
  std::vector<float> data_;
};

// Same shape and identical bit patterns.
bool bitwise_equal(const Tensor& a, const Tensor& b);
bool all_finite(const Tensor& t);

// xoshiro256** seeded through splitmix64; normals via the Box-Muller
// transform. Never uses the platform's std:: distributions.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  // Uniform integer in [0, n), rejection sampled. n must be > 0.
  std::uint64_t below(std::uint64_t n);
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);
// Deterministic sub-seed for an independent stream (e.g. one per epoch).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

namespace kern {

Tensor matmul(const Tensor& a, const Tensor& b);
// a^T * b and a * b^T; each output keeps the ascending-k summation order.
Tensor matmul_tn(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);

Tensor softmax_rows(const Tensor& a);

struct LayerNormResult {
  Tensor out;
  Tensor normalized;       // (x - mean) * rstd, before the affine step
  std::vector<float> rstd; // one per row
};
Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, float eps);
LayerNormResult layer_norm_ex(const Tensor& a, const Tensor& gain, const Tensor& bias, float eps);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(float alpha, const Tensor& a);
Tensor relu(const Tensor& a);
Tensor transpose(const Tensor& a);
// Mean of each row; result is rank 1 with rows() entries.
Tensor row_mean(const Tensor& a);
// Adds a rank-1 bias of length cols() to every row, in place.
void add_row_bias(Tensor& a, const Tensor& bias);
// Column sums in ascending row order, rank 1.
Tensor col_sum(const Tensor& a);
void add_inplace(Tensor& acc, const Tensor& b);

Tensor rng_normal(SeededRng& rng, const Shape& shape, float stddev);

}  // namespace kern
}  // namespace yoto
