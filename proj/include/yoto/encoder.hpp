#pragma once

// A small post-norm transformer encoder with a bank of named classification
// heads, plus its exact hand-derived backward pass.
//
// Parameter names (dot-separated, shapes in [in x out] orientation):
//   encoder.tok_emb                 vocab_size x d_model
//   encoder.pos_emb                 max_len x d_model
//   encoder.block<i>.attn.{wq,wk,wv,wo}   d_model x d_model
//   encoder.block<i>.attn.{bq,bk,bv,bo}   d_model
//   encoder.block<i>.ln1.{gain,bias}      d_model
//   encoder.block<i>.ffn.w1               d_model x d_ff
//   encoder.block<i>.ffn.b1               d_ff
//   encoder.block<i>.ffn.w2               d_ff x d_model
//   encoder.block<i>.ffn.b2               d_model
//   encoder.block<i>.ln2.{gain,bias}      d_model
//   head.<id>.w                     d_model x n_classes
//   head.<id>.b                     n_classes
//
// Each block: h = LN1(x + MHA(x)); out = LN2(h + W2 relu(W1 h + b1) + b2).
// Pad keys are excluded from attention and pad positions from the mean pool.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "yoto/numkern.hpp"

namespace yoto {

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 64;
  int n_heads = 4;
  int n_layers = 2;
  int d_ff = 128;
  int max_len = 128;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

using NamedParams = std::map<std::string, Tensor>;

inline constexpr float kLayerNormEps = 1e-5f;
inline constexpr float kInitStd = 0.02f;
inline constexpr std::int32_t kPadId = 0;

// Expected encoder tensor shapes for a config, in lexicographic name order.
std::map<std::string, Shape> encoder_schema(const ModelConfig& config);
std::map<std::string, Shape> head_schema(const ModelConfig& config, const std::string& head_id, int n_classes);
// Throws shape errors unless params hold exactly the encoder schema plus any
// number of well-formed heads.
void validate_params(const NamedParams& params, const ModelConfig& config);
void validate_head_id(const std::string& head_id);

std::string head_prefix(const std::string& head_id);
bool is_encoder_name(const std::string& name);
std::vector<std::string> head_ids(const NamedParams& params);
int head_classes(const NamedParams& params, const std::string& head_id);
std::size_t parameter_count(const NamedParams& params);

NamedParams init_params(const ModelConfig& config, const std::map<std::string, int>& n_classes_per_head,
                        SeededRng& rng);
// Adds a freshly initialised head; name error if it already exists.
void add_head(NamedParams& params, const ModelConfig& config, const std::string& head_id, int n_classes,
              SeededRng& rng);
NamedParams zeros_like(const NamedParams& params);

// Right-padded token matrix: row b holds lengths[b] real tokens then pads.
struct Batch {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::int32_t> ids;
  std::vector<std::size_t> lengths;

  std::int32_t at(std::size_t r, std::size_t c) const { return ids[r * cols + c]; }
  bool is_pad(std::size_t r, std::size_t c) const { return c >= lengths[r]; }
};

// Pads to the longest sequence. Every sequence needs at least one token.
Batch make_batch(const std::vector<std::vector<std::int32_t>>& sequences);

struct LayerCache {
  Tensor input;
  Tensor q, k, v;
  std::vector<float> attn;  // [row][head][query][key], zero on pad keys
  Tensor context;
  Tensor ln1_normalized;
  std::vector<float> ln1_rstd;
  Tensor hidden1;  // LN1 output
  Tensor ffn_pre;  // before relu
  Tensor ffn_act;
  Tensor ln2_normalized;
  std::vector<float> ln2_rstd;
};

struct EncoderCache {
  ModelConfig config;
  Batch batch;
  std::vector<LayerCache> layers;
  Tensor output;  // (rows*cols) x d_model
};

struct ForwardCache {
  EncoderCache encoder;
  std::string head_id;
  Tensor pooled;  // rows x d_model
  Tensor logits;
};

struct ForwardResult {
  Tensor logits;
  ForwardCache cache;
};

EncoderCache encode(const NamedParams& params, const ModelConfig& config, const Batch& batch);
// Accumulates encoder gradients for dL/d(output) into grads (which must hold
// the encoder names, e.g. from zeros_like).
void encode_backward(const NamedParams& params, const EncoderCache& cache, const Tensor& grad_output,
                     NamedParams& grads);

ForwardResult forward(const NamedParams& params, const ModelConfig& config, const Batch& batch,
                      const std::string& head_id);
NamedParams backward(const NamedParams& params, const ModelConfig& config, const ForwardCache& cache,
                     const Tensor& grad_logits);

// Argmax per row, ties to the lower class id.
std::vector<int> argmax_rows(const Tensor& logits);
std::vector<int> predict(const NamedParams& params, const ModelConfig& config, const Batch& batch,
                         const std::string& head_id);

}  // namespace yoto
