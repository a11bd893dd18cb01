#pragma once

// Vul-Vectors: per-tensor encoder deltas between a fine-tuned checkpoint and
// the pretrained base it came from, and the algebra over them.
//
//   tau_i      = theta_i - theta_pre               (compute_vulvector)
//   tau_a + tau_b, sum_i tau_i                     (vv_add, vv_sum)
//   tau_merged = lambda * sum_i tau_i              (vv_scale, applied once)
//   theta      = theta_pre + tau_merged            (apply)
//
// Classification heads never take part in the arithmetic: a merged model gets
// a bank of heads copied verbatim from their donor checkpoints.

#include <optional>
#include <string>
#include <vector>

#include "yoto/checkpoint.hpp"

namespace yoto {

struct VulVector {
  ModelConfig config;
  NamedParams entries;  // exactly the encoder.* schema of the base
  std::string base_fingerprint;
  std::string lineage;

  void validate() const;
};

struct MergeSpec {
  std::vector<const VulVector*> sources;
  float lambda = 1.0f;

  void validate() const;
};

// A head to attach to a merged encoder: `head_id` is taken from `donor`.
struct HeadSource {
  const Checkpoint* donor = nullptr;
  std::string head_id;
};

struct MergeOptions {
  // When false the embedding tables keep the base values (ablation switch).
  bool merge_embeddings = true;
};

VulVector compute_vulvector(const Checkpoint& finetuned, const Checkpoint& base);
VulVector vv_add(const VulVector& a, const VulVector& b);
// Left-to-right fold in the given order.
VulVector vv_sum(const std::vector<VulVector>& vectors);
VulVector vv_scale(const VulVector& v, float lambda);
VulVector vv_zero_like(const VulVector& v);
Checkpoint apply(const Checkpoint& base, const VulVector& v, const std::vector<HeadSource>& heads,
                 const MergeOptions& options = {});
// lambda * sum(sources), then apply.
Checkpoint merge(const Checkpoint& base, const MergeSpec& spec, const std::vector<HeadSource>& heads,
                 const MergeOptions& options = {});

// Encoder tensors averaged across checkpoints: summed in input order, then
// divided by the count. Works without a shared base.
Checkpoint param_mean(const std::vector<const Checkpoint*>& checkpoints, const std::vector<HeadSource>& heads);

// The double closest to a float's shortest decimal form, so a lambda of
// 0.4f is recorded as 0.4 in reports and metadata.
double decimal_lambda(float lambda);

// Containers with role "vulvector".
Checkpoint to_container(const VulVector& v);
VulVector from_container(const Checkpoint& c);

}  // namespace yoto
