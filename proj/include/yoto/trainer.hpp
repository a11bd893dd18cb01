#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "yoto/checkpoint.hpp"
#include "yoto/corpus.hpp"
#include "yoto/encoder.hpp"

namespace yoto {

// Desk-scale defaults. The encoder rate is well above what a full-size
// pretrained encoder would use; the structure (Adam, two rates, 5x weight on
// vulnerable classes, batch 16) is what matters.
struct TrainHyper {
  int epochs = 30;
  int batch_size = 16;
  float lr_encoder = 1e-4f;
  float lr_head = 1e-2f;
  float vul_class_weight = 5.0f;
  std::uint64_t seed = 42;

  void validate() const;
};

// Pretraining defaults: masked-token objective over the whole mix.
TrainHyper default_pretrain_hyper();

struct AdamState {
  NamedParams m;
  NamedParams v;
  std::int64_t step = 0;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

// (name prefix, learning rate); the longest matching prefix wins.
using LrMap = std::vector<std::pair<std::string, float>>;
LrMap default_lr_map(const TrainHyper& hyper);

struct LossResult {
  float loss = 0.0f;
  Tensor grad_logits;
};

// loss = sum_i w[t_i] * -log softmax(logits_i)[t_i] / sum_i w[t_i]
LossResult weighted_cross_entropy(const Tensor& logits, std::span<const int> targets,
                                  std::span<const float> class_weights);
std::vector<float> class_weights_for(std::size_t n_classes, float vul_class_weight);

void adam_step(AdamState& state, NamedParams& params, const NamedParams& grads, const LrMap& lr_map);

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double train_acc = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochLog> log;
  // Pretraining only: the vocabulary-projection head, kept out of the
  // checkpoint but available for measuring masked-token accuracy.
  NamedParams mlm_head;
};

void write_training_log(const std::vector<EpochLog>& log, const std::string& path);

struct EncodedDataset {
  std::vector<std::vector<std::int32_t>> sequences;
  std::vector<int> targets;
};
EncodedDataset encode_dataset(const Vocab& vocab, const Dataset& dataset, std::size_t max_len);

inline constexpr double kMaskRate = 0.15;
inline constexpr const char* kMlmHead = "mlm";

// Builds the vocabulary (capped at config.vocab_size; the config shrinks to
// the real vocabulary size) and trains the encoder on masked-token prediction.
TrainResult pretrain(const std::vector<Dataset>& corpus, ModelConfig config, const TrainHyper& hyper);
double masked_token_accuracy(const Checkpoint& pretrained, const NamedParams& mlm_head, const Dataset& heldout,
                             std::uint64_t seed);

TrainResult finetune(const Checkpoint& base, const Dataset& train, const std::string& head_id,
                     const TrainHyper& hyper);
TrainResult joint_train(const Checkpoint& base, const std::vector<Dataset>& parts, const std::string& head_id,
                        const TrainHyper& hyper);

}  // namespace yoto
