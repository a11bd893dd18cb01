#include "yoto/numkern_ref.hpp"

#include <algorithm>
#include <cmath>

#include "yoto/error.hpp"

namespace yoto::kern::ref {

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw Error(ErrorKind::dimension, "ref::matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Tensor c = Tensor::matrix(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      float acc = 0.0f;
      for (std::size_t p = 0; p < a.cols(); ++p) acc += a(i, p) * b(p, j);
      c(i, j) = acc;
    }
  }
  return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.rows() != b.rows()) {
    throw Error(ErrorKind::dimension, "ref::matmul_tn: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  Tensor c = Tensor::matrix(a.cols(), b.cols());
  for (std::size_t i = 0; i < a.cols(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      float acc = 0.0f;
      for (std::size_t p = 0; p < a.rows(); ++p) acc += a(p, i) * b(p, j);
      c(i, j) = acc;
    }
  }
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols()) {
    throw Error(ErrorKind::dimension, "ref::matmul_nt: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  Tensor c = Tensor::matrix(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      float acc = 0.0f;
      for (std::size_t p = 0; p < a.cols(); ++p) acc += a(i, p) * b(j, p);
      c(i, j) = acc;
    }
  }
  return c;
}

Tensor softmax_rows(const Tensor& a) {
  Tensor out(a.shape());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    float mx = a.row(r)[0];
    for (float v : a.row(r)) mx = std::max(mx, v);
    float sum = 0.0f;
    for (std::size_t j = 0; j < a.cols(); ++j) {
      out(r, j) = std::exp(a.row(r)[j] - mx);
      sum += out(r, j);
    }
    const float inv = 1.0f / sum;
    for (std::size_t j = 0; j < a.cols(); ++j) out.row(r)[j] *= inv;
  }
  return out;
}

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, float eps) {
  Tensor out(a.shape());
  const std::size_t n = a.cols();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const auto x = a.row(r);
    float mean = 0.0f;
    for (float v : x) mean += v;
    mean /= static_cast<float>(n);
    float var = 0.0f;
    for (float v : x) var += (v - mean) * (v - mean);
    var /= static_cast<float>(n);
    const float rstd = 1.0f / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) out.row(r)[j] = ((x[j] - mean) * rstd) * gain[j] + bias[j];
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw Error(ErrorKind::dimension, "ref::add: shape mismatch");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

Tensor relu(const Tensor& a) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] > 0.0f ? a[i] : 0.0f;
  return out;
}

}  // namespace yoto::kern::ref
