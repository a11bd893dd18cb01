#pragma once

// Serial reference kernels: the textbook loop nests, single-threaded, with the
// same per-element summation order as the parallel kernels. Tests compare the
// two bit-for-bit; bench_kernels times them against each other.

#include "yoto/numkern.hpp"

namespace yoto::kern::ref {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_tn(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor softmax_rows(const Tensor& a);
Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, float eps);
Tensor add(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& a);

}  // namespace yoto::kern::ref
