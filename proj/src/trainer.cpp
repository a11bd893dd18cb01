#include "yoto/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "yoto/error.hpp"

namespace yoto {

namespace {

constexpr std::uint64_t kInitStream = 0;

// Seed for epoch e's shuffle (and masking): derive_seed(hyper.seed, e + 1).
std::uint64_t epoch_seed(std::uint64_t seed, int epoch) { return derive_seed(seed, static_cast<std::uint64_t>(epoch) + 1); }

std::vector<std::size_t> epoch_order(std::size_t n, SeededRng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  return order;
}

std::string short_fp(const std::string& fp) { return fp.substr(0, 12); }

// Masks ~15% of each sequence (at least one token) with kMaskId; returns the
// masked sequences and, per sequence, the masked positions with originals.
struct MaskedBatch {
  std::vector<std::vector<std::int32_t>> sequences;
  std::vector<std::pair<std::size_t, std::size_t>> positions;  // (row, col)
  std::vector<int> originals;
};

MaskedBatch mask_sequences(const std::vector<const std::vector<std::int32_t>*>& seqs, SeededRng& rng) {
  MaskedBatch mb;
  for (std::size_t r = 0; r < seqs.size(); ++r) {
    std::vector<std::int32_t> s = *seqs[r];
    std::vector<std::size_t> picked;
    for (std::size_t c = 0; c < s.size(); ++c) {
      if (rng.uniform() < kMaskRate) picked.push_back(c);
    }
    if (picked.empty()) picked.push_back(static_cast<std::size_t>(rng.below(s.size())));
    for (std::size_t c : picked) {
      mb.positions.emplace_back(r, c);
      mb.originals.push_back(s[c]);
      s[c] = kMaskId;
    }
    mb.sequences.push_back(std::move(s));
  }
  return mb;
}

struct MlmStep {
  float loss = 0.0f;
  std::size_t correct = 0;
  std::size_t total = 0;
  NamedParams grads;
};

MlmStep mlm_step(const NamedParams& params, const ModelConfig& config, const MaskedBatch& mb, bool want_grads) {
  const Batch batch = make_batch(mb.sequences);
  EncoderCache enc = encode(params, config, batch);
  const auto d = static_cast<std::size_t>(config.d_model);
  const std::size_t m = mb.positions.size();
  Tensor rows = Tensor::matrix(m, d);
  for (std::size_t i = 0; i < m; ++i) {
    const auto [r, c] = mb.positions[i];
    const auto src = enc.output.row(r * batch.cols + c);
    std::copy(src.begin(), src.end(), rows.row(i).begin());
  }
  const std::string hp = head_prefix(kMlmHead);
  Tensor logits = kern::matmul(rows, params.at(hp + "w"));
  kern::add_row_bias(logits, params.at(hp + "b"));
  const std::vector<float> weights(static_cast<std::size_t>(config.vocab_size), 1.0f);
  LossResult lr = weighted_cross_entropy(logits, mb.originals, weights);

  MlmStep out;
  out.loss = lr.loss;
  out.total = m;
  const auto pred = argmax_rows(logits);
  for (std::size_t i = 0; i < m; ++i) out.correct += pred[i] == mb.originals[i] ? 1 : 0;
  if (!want_grads) return out;

  out.grads = zeros_like(params);
  kern::add_inplace(out.grads.at(hp + "w"), kern::matmul_tn(rows, lr.grad_logits));
  kern::add_inplace(out.grads.at(hp + "b"), kern::col_sum(lr.grad_logits));
  const Tensor d_rows = kern::matmul_nt(lr.grad_logits, params.at(hp + "w"));
  Tensor d_out = Tensor::matrix(batch.rows * batch.cols, d);
  for (std::size_t i = 0; i < m; ++i) {
    const auto [r, c] = mb.positions[i];
    auto dst = d_out.row(r * batch.cols + c);
    const auto src = d_rows.row(i);
    for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
  }
  encode_backward(params, enc, d_out, out.grads);
  return out;
}

// Shared supervised loop; mutates params in place.
std::vector<EpochLog> train_classifier(NamedParams& params, const ModelConfig& config, const EncodedDataset& data,
                                       const std::string& head_id, std::size_t n_classes, const TrainHyper& hyper) {
  const auto weights = class_weights_for(n_classes, hyper.vul_class_weight);
  const LrMap lr_map = default_lr_map(hyper);
  AdamState adam;
  std::vector<EpochLog> log;
  const std::size_t n = data.sequences.size();
  const auto bs = static_cast<std::size_t>(hyper.batch_size);
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    SeededRng rng(epoch_seed(hyper.seed, epoch));
    const auto order = epoch_order(n, rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t end = std::min(n, start + bs);
      std::vector<std::vector<std::int32_t>> seqs;
      std::vector<int> targets;
      for (std::size_t i = start; i < end; ++i) {
        seqs.push_back(data.sequences[order[i]]);
        targets.push_back(data.targets[order[i]]);
      }
      const Batch batch = make_batch(seqs);
      ForwardResult fr = forward(params, config, batch, head_id);
      const auto pred = argmax_rows(fr.logits);
      for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == targets[i] ? 1 : 0;
      LossResult lr = weighted_cross_entropy(fr.logits, targets, weights);
      loss_sum += static_cast<double>(lr.loss) * static_cast<double>(end - start);
      const NamedParams grads = backward(params, config, fr.cache, lr.grad_logits);
      adam_step(adam, params, grads, lr_map);
    }
    log.push_back({epoch + 1, loss_sum / static_cast<double>(n), static_cast<double>(correct) / static_cast<double>(n)});
  }
  return log;
}

}  // namespace

void TrainHyper::validate() const {
  if (epochs < 0 || batch_size < 1 || !(lr_encoder > 0.0f) || !(lr_head > 0.0f) || !(vul_class_weight > 0.0f)) {
    throw Error(ErrorKind::config, "training hyperparameters must be positive (epochs may be 0)");
  }
}

TrainHyper default_pretrain_hyper() {
  TrainHyper h;
  h.epochs = 4;
  h.batch_size = 16;
  h.lr_encoder = 1e-3f;
  h.lr_head = 1e-3f;
  h.vul_class_weight = 1.0f;
  return h;
}

LrMap default_lr_map(const TrainHyper& hyper) { return {{"encoder.", hyper.lr_encoder}, {"head.", hyper.lr_head}}; }

std::vector<float> class_weights_for(std::size_t n_classes, float vul_class_weight) {
  std::vector<float> w(n_classes, vul_class_weight);
  if (!w.empty()) w[0] = 1.0f;
  return w;
}

LossResult weighted_cross_entropy(const Tensor& logits, std::span<const int> targets,
                                  std::span<const float> class_weights) {
  const std::size_t b = logits.rows(), c = logits.cols();
  if (targets.size() != b) throw Error(ErrorKind::argument, "weighted_cross_entropy: target count != batch rows");
  if (class_weights.size() != c) throw Error(ErrorKind::argument, "weighted_cross_entropy: weight count != classes");
  for (float w : class_weights) {
    if (!(w > 0.0f)) throw Error(ErrorKind::argument, "weighted_cross_entropy: class weights must be > 0");
  }
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= c) {
      throw Error(ErrorKind::index, "target " + std::to_string(t) + " outside " + std::to_string(c) + " classes");
    }
  }
  const Tensor probs = kern::softmax_rows(logits);
  float total_w = 0.0f;
  for (int t : targets) total_w += class_weights[static_cast<std::size_t>(t)];
  LossResult out{0.0f, Tensor(logits.shape())};
  for (std::size_t i = 0; i < b; ++i) {
    const auto t = static_cast<std::size_t>(targets[i]);
    const float w = class_weights[t];
    const auto row = logits.row(i);
    float mx = row[0];
    for (float v : row) mx = std::max(mx, v);
    float sum = 0.0f;
    for (float v : row) sum += std::exp(v - mx);
    const float nll = -(row[t] - mx - std::log(sum));
    out.loss += w * nll;
    for (std::size_t j = 0; j < c; ++j) {
      out.grad_logits(i, j) = w * (probs(i, j) - (j == t ? 1.0f : 0.0f)) / total_w;
    }
  }
  out.loss /= total_w;
  return out;
}

void adam_step(AdamState& state, NamedParams& params, const NamedParams& grads, const LrMap& lr_map) {
  // Resolve every rate before touching anything so a bad map leaves params intact.
  std::vector<float> rates;
  for (const auto& [name, p] : params) {
    std::size_t best_len = 0;
    float rate = 0.0f;
    bool found = false;
    for (const auto& [prefix, lr] : lr_map) {
      if (name.rfind(prefix, 0) == 0 && (!found || prefix.size() > best_len)) {
        best_len = prefix.size();
        rate = lr;
        found = true;
      }
    }
    if (!found) throw Error(ErrorKind::config, "no learning rate covers parameter '" + name + "'");
    auto g = grads.find(name);
    if (g == grads.end() || g->second.shape() != p.shape()) {
      throw Error(ErrorKind::dimension, "gradient for '" + name + "' missing or misshapen");
    }
    rates.push_back(rate);
  }

  ++state.step;
  const double bc1 = 1.0 - std::pow(static_cast<double>(state.beta1), static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(static_cast<double>(state.beta2), static_cast<double>(state.step));
  std::size_t k = 0;
  for (auto& [name, p] : params) {
    const float lr = rates[k++];
    const Tensor& g = grads.at(name);
    auto [mit, m_new] = state.m.try_emplace(name, p.shape());
    auto [vit, v_new] = state.v.try_emplace(name, p.shape());
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    const auto step_size = static_cast<float>(lr / bc1);
    const auto inv_bc2 = static_cast<float>(1.0 / bc2);
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0f - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0f - state.beta2) * g[i] * g[i];
      p[i] -= step_size * m[i] / (std::sqrt(v[i] * inv_bc2) + state.eps);
    }
  }
}

void write_training_log(const std::vector<EpochLog>& log, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write training log '" + path + "'");
  out << "epoch,loss,train_acc\n";
  char buf[96];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f\n", e.epoch, e.loss, e.train_acc);
    out << buf;
  }
  if (!out) throw Error(ErrorKind::io, "write failed for '" + path + "'");
}

EncodedDataset encode_dataset(const Vocab& vocab, const Dataset& dataset, std::size_t max_len) {
  EncodedDataset out;
  for (const auto& r : dataset.records) {
    out.sequences.push_back(tokenize(vocab, r.func, max_len));
    out.targets.push_back(r.target);
  }
  return out;
}

TrainResult pretrain(const std::vector<Dataset>& corpus, ModelConfig config, const TrainHyper& hyper) {
  hyper.validate();
  std::size_t n_records = 0;
  for (const auto& d : corpus) n_records += d.records.size();
  if (n_records == 0) throw Error(ErrorKind::precondition, "pretraining corpus is empty");
  const Vocab vocab = build_vocab(corpus, static_cast<std::size_t>(config.vocab_size));
  if (vocab.size() <= static_cast<std::size_t>(kFirstTokenId)) {
    throw Error(ErrorKind::config, "vocabulary too small for masked-token pretraining");
  }
  config.vocab_size = static_cast<int>(vocab.size());
  config.validate();

  SeededRng init_rng(derive_seed(hyper.seed, kInitStream));
  NamedParams params = init_params(config, {{kMlmHead, config.vocab_size}}, init_rng);

  std::vector<std::vector<std::int32_t>> seqs;
  for (const auto& d : corpus) {
    for (auto& s : encode_dataset(vocab, d, static_cast<std::size_t>(config.max_len)).sequences) seqs.push_back(std::move(s));
  }

  const LrMap lr_map = default_lr_map(hyper);
  AdamState adam;
  std::vector<EpochLog> log;
  const auto bs = static_cast<std::size_t>(hyper.batch_size);
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    SeededRng rng(epoch_seed(hyper.seed, epoch));
    const auto order = epoch_order(seqs.size(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0, total = 0;
    for (std::size_t start = 0; start < seqs.size(); start += bs) {
      std::vector<const std::vector<std::int32_t>*> chunk;
      for (std::size_t i = start; i < std::min(seqs.size(), start + bs); ++i) chunk.push_back(&seqs[order[i]]);
      const MaskedBatch mb = mask_sequences(chunk, rng);
      MlmStep step = mlm_step(params, config, mb, true);
      loss_sum += static_cast<double>(step.loss) * static_cast<double>(step.total);
      correct += step.correct;
      total += step.total;
      adam_step(adam, params, step.grads, lr_map);
    }
    log.push_back({epoch + 1, loss_sum / static_cast<double>(total), static_cast<double>(correct) / static_cast<double>(total)});
  }

  TrainResult out;
  for (auto it = params.begin(); it != params.end();) {
    if (it->first.rfind(head_prefix(kMlmHead), 0) == 0) {
      out.mlm_head.emplace(it->first, std::move(it->second));
      it = params.erase(it);
    } else {
      ++it;
    }
  }
  out.checkpoint.config = config;
  out.checkpoint.params = std::move(params);
  out.checkpoint.meta.role = Role::pretrained;
  out.checkpoint.meta.seed = hyper.seed;
  out.checkpoint.meta.vocab = vocab.tokens();
  out.checkpoint.meta.lineage = "pretrain(mlm, epochs=" + std::to_string(hyper.epochs) + ", records=" +
                                std::to_string(n_records) + ")";
  out.log = std::move(log);
  out.checkpoint.validate();
  return out;
}

double masked_token_accuracy(const Checkpoint& pretrained, const NamedParams& mlm_head, const Dataset& heldout,
                             std::uint64_t seed) {
  NamedParams params = pretrained.encoder_params();
  for (const auto& [name, t] : mlm_head) params.emplace(name, t);
  const Vocab vocab(pretrained.meta.vocab);
  const auto enc = encode_dataset(vocab, heldout, static_cast<std::size_t>(pretrained.config.max_len));
  SeededRng rng(seed);
  std::size_t correct = 0, total = 0;
  for (std::size_t start = 0; start < enc.sequences.size(); start += 32) {
    std::vector<const std::vector<std::int32_t>*> chunk;
    for (std::size_t i = start; i < std::min(enc.sequences.size(), start + 32); ++i) chunk.push_back(&enc.sequences[i]);
    const MlmStep step = mlm_step(params, pretrained.config, mask_sequences(chunk, rng), false);
    correct += step.correct;
    total += step.total;
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

TrainResult finetune(const Checkpoint& base, const Dataset& train, const std::string& head_id,
                     const TrainHyper& hyper) {
  hyper.validate();
  if (base.meta.role != Role::pretrained && base.meta.role != Role::merged) {
    throw Error(ErrorKind::precondition, "fine-tuning needs a pretrained or merged base, got " + to_string(base.meta.role));
  }
  train.validate();
  if (train.n_classes() < 2) throw Error(ErrorKind::precondition, "fine-tuning needs a dataset with >= 2 classes");
  if (train.records.empty()) throw Error(ErrorKind::precondition, "fine-tuning dataset is empty");
  validate_head_id(head_id);
  if (base.params.contains(head_prefix(head_id) + "w")) {
    throw Error(ErrorKind::name, "base already has a head named '" + head_id + "'");
  }

  NamedParams params = base.params;
  SeededRng init_rng(derive_seed(hyper.seed, kInitStream));
  add_head(params, base.config, head_id, static_cast<int>(train.n_classes()), init_rng);
  const Vocab vocab(base.meta.vocab);
  const auto data = encode_dataset(vocab, train, static_cast<std::size_t>(base.config.max_len));
  auto log = train_classifier(params, base.config, data, head_id, train.n_classes(), hyper);

  TrainResult out;
  const std::string base_fp = fingerprint(base.params);
  out.checkpoint.config = base.config;
  out.checkpoint.params = std::move(params);
  out.checkpoint.meta.role = Role::finetuned;
  out.checkpoint.meta.base_fingerprint = base_fp;
  out.checkpoint.meta.seed = hyper.seed;
  out.checkpoint.meta.vocab = base.meta.vocab;
  out.checkpoint.meta.lineage = "finetune(head=" + head_id + ", data=" + train.provenance + ", base=" + short_fp(base_fp) +
                                ", epochs=" + std::to_string(hyper.epochs) + ")";
  out.log = std::move(log);
  return out;
}

TrainResult joint_train(const Checkpoint& base, const std::vector<Dataset>& parts, const std::string& head_id,
                        const TrainHyper& hyper) {
  return finetune(base, concat_datasets(parts), head_id, hyper);
}

}  // namespace yoto
