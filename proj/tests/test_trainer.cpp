#include <cmath>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "support.hpp"
#include "yoto/trainer.hpp"

using namespace yoto;
using test_support::error_kind_of;

namespace {

ModelConfig small_config() {
  return {.vocab_size = 96, .d_model = 16, .n_heads = 2, .n_layers = 1, .d_ff = 32, .max_len = 64};
}

Dataset pattern(const std::string& id, int pos, int neg, std::uint64_t seed) {
  CorpusSpec spec;
  spec.seed = seed;
  spec.patterns = {{id, {pos, neg}}};
  Dataset d = generate_corpus(spec).at(id);
  d.role = SplitRole::train;
  return d;
}

TrainHyper quick_hyper(int epochs) {
  TrainHyper h;
  h.epochs = epochs;
  h.lr_encoder = 1e-3f;
  h.lr_head = 1e-2f;
  h.seed = 5;
  return h;
}

const Checkpoint& small_base() {
  static const Checkpoint base = [] {
    TrainHyper h = default_pretrain_hyper();
    h.epochs = 1;
    h.seed = 3;
    return pretrain({pattern("cwe190", 30, 30, 1), pattern("cwe617", 30, 30, 2)}, small_config(), h).checkpoint;
  }();
  return base;
}

}  // namespace

TEST_CASE("uniform logits give ln 2") {
  const Tensor z(Shape{4, 2});
  const std::vector<int> t = {0, 1, 1, 0};
  const auto w = class_weights_for(2, 5.0f);
  const LossResult r = weighted_cross_entropy(z, t, w);
  CHECK(r.loss == doctest::Approx(std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("vulnerable rows carry five times the gradient") {
  // One safe and one vulnerable row with identical (zero) logits.
  const Tensor z(Shape{2, 2});
  const std::vector<int> t = {0, 1};
  const auto w = class_weights_for(2, 5.0f);
  CHECK(w == std::vector<float>{1.0f, 5.0f});
  const LossResult r = weighted_cross_entropy(z, t, w);
  const double safe = std::fabs(r.grad_logits(0, 0)) + std::fabs(r.grad_logits(0, 1));
  const double vul = std::fabs(r.grad_logits(1, 0)) + std::fabs(r.grad_logits(1, 1));
  CHECK(vul / safe == doctest::Approx(5.0).epsilon(1e-6));
  // Closed form: (softmax - onehot) * w_i / sum w.
  CHECK(r.grad_logits(1, 1) == doctest::Approx(-0.5 * 5.0 / 6.0).epsilon(1e-6));
  CHECK(r.grad_logits(0, 0) == doctest::Approx(-0.5 * 1.0 / 6.0).epsilon(1e-6));
}

TEST_CASE("weighted cross entropy against a direct oracle") {
  const Tensor z(Shape{3, 3}, {2.0f, -1.0f, 0.5f, 0.0f, 3.0f, -2.0f, 1.0f, 1.0f, 1.0f});
  const std::vector<int> t = {2, 1, 0};
  const std::vector<float> w = {1.0f, 5.0f, 5.0f};
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < 3; ++k) s += std::exp(static_cast<double>(z(i, k)));
    const double wi = w[static_cast<std::size_t>(t[i])];
    num += wi * -(z(i, static_cast<std::size_t>(t[i])) - std::log(s));
    den += wi;
  }
  CHECK(weighted_cross_entropy(z, t, w).loss == doctest::Approx(num / den).epsilon(1e-6));
  const std::vector<int> bad = {0, 3, 0};
  CHECK(error_kind_of([&] { weighted_cross_entropy(z, bad, w); }) == ErrorKind::index);
  CHECK(error_kind_of([&] { weighted_cross_entropy(z, t, std::vector<float>{1, 1}); }) == ErrorKind::argument);
}

TEST_CASE("adam first step matches the closed form") {
  NamedParams p = {{"encoder.x", Tensor(Shape{3}, {1.0f, 2.0f, 3.0f})}, {"head.h.w", Tensor(Shape{1}, {0.0f})}};
  const NamedParams g = {{"encoder.x", Tensor(Shape{3}, {0.5f, -2.0f, 0.0f})}, {"head.h.w", Tensor(Shape{1}, {4.0f})}};
  AdamState s;
  adam_step(s, p, g, {{"encoder.", 0.1f}, {"head.", 0.01f}});
  // Step one: m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps).
  CHECK(p.at("encoder.x")[0] == doctest::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-6));
  CHECK(p.at("encoder.x")[1] == doctest::Approx(2.0 + 0.1).epsilon(1e-6));
  CHECK(p.at("encoder.x")[2] == 3.0f);
  CHECK(p.at("head.h.w")[0] == doctest::Approx(-0.01).epsilon(1e-5));

  // Step two with the same gradient, tracked in double.
  adam_step(s, p, g, {{"encoder.", 0.1f}, {"head.", 0.01f}});
  const double m = 0.9 * 0.1 * 0.5 + 0.1 * 0.5, v = 0.999 * 0.001 * 0.25 + 0.001 * 0.25;
  const double m_hat = m / (1 - 0.81), v_hat = v / (1 - 0.999 * 0.999);
  CHECK(p.at("encoder.x")[0] == doctest::Approx(1.0 - 0.1 - 0.1 * m_hat / (std::sqrt(v_hat) + 1e-8)).epsilon(1e-5));

  NamedParams q = p;
  CHECK(error_kind_of([&] { adam_step(s, q, g, {{"encoder.", 0.1f}}); }) == ErrorKind::config);
  CHECK(params_bitwise_equal(q, p));
  CHECK(error_kind_of([&] { adam_step(s, q, {}, {{"", 0.1f}}); }) == ErrorKind::dimension);
}

TEST_CASE("the longest matching prefix sets the rate") {
  NamedParams p = {{"encoder.a", Tensor(Shape{1}, {0.0f})}};
  AdamState s;
  adam_step(s, p, {{"encoder.a", Tensor(Shape{1}, {1.0f})}}, {{"", 1.0f}, {"encoder.", 0.5f}});
  CHECK(p.at("encoder.a")[0] == doctest::Approx(-0.5).epsilon(1e-6));
}

TEST_CASE("hyperparameter validation") {
  TrainHyper h;
  CHECK_NOTHROW(h.validate());
  h.epochs = 0;
  CHECK_NOTHROW(h.validate());
  h.batch_size = 0;
  CHECK(error_kind_of([&] { h.validate(); }) == ErrorKind::config);
  TrainHyper d;
  CHECK(d.epochs == 30);
  CHECK(d.batch_size == 16);
  CHECK(d.lr_encoder == 1e-4f);
  CHECK(d.lr_head == 1e-2f);
  CHECK(d.vul_class_weight == 5.0f);
}

TEST_CASE("pretraining builds the vocabulary and drops the mlm head") {
  const Checkpoint& base = small_base();
  CHECK(base.meta.role == Role::pretrained);
  CHECK(base.config.vocab_size == static_cast<int>(base.meta.vocab.size()));
  CHECK(base.config.vocab_size <= 96);
  CHECK(base.meta.vocab[2] == "<mask>");
  CHECK(head_ids(base.params).empty());
  CHECK(error_kind_of([] { pretrain({}, small_config(), default_pretrain_hyper()); }) == ErrorKind::precondition);
}

TEST_CASE("zero epochs leaves the encoder untouched") {
  const Checkpoint& base = small_base();
  const TrainResult r = finetune(base, pattern("cwe190", 5, 5, 9), "h", quick_hyper(0));
  CHECK(params_bitwise_equal(r.checkpoint.encoder_params(), base.encoder_params()));
  CHECK(r.log.empty());
  CHECK(r.checkpoint.meta.role == Role::finetuned);
  CHECK(r.checkpoint.meta.base_fingerprint == fingerprint(base.params));
  CHECK(head_classes(r.checkpoint.params, "h") == 2);
}

TEST_CASE("finetuning is deterministic and learns the signature") {
  const Checkpoint& base = small_base();
  const Dataset train = pattern("cwe190", 40, 40, 11);
  const TrainResult a = finetune(base, train, "h", quick_hyper(25));
  const TrainResult b = finetune(base, train, "h", quick_hyper(25));
  CHECK(params_bitwise_equal(a.checkpoint.params, b.checkpoint.params));
  REQUIRE(a.log.size() == 25);
  CHECK(a.log.back().loss < a.log.front().loss);
  CHECK(a.log.back().train_acc >= 0.95);

  TrainHyper other = quick_hyper(25);
  other.seed = 6;
  CHECK_FALSE(params_bitwise_equal(finetune(base, train, "h", other).checkpoint.params, a.checkpoint.params));

  test_support::TempDir dir("trainer");
  write_training_log(a.log, dir.file("log.csv"));
  std::ifstream f(dir.file("log.csv"));
  std::stringstream ss;
  ss << f.rdbuf();
  CHECK(ss.str().rfind("epoch,loss,train_acc\n", 0) == 0);
}

TEST_CASE("finetune preconditions") {
  const Checkpoint& base = small_base();
  const Dataset train = pattern("cwe190", 4, 4, 1);
  Checkpoint ft = finetune(base, train, "h", quick_hyper(0)).checkpoint;
  CHECK(error_kind_of([&] { finetune(ft, train, "g", quick_hyper(0)); }) == ErrorKind::precondition);
  Checkpoint with_head = base;
  SeededRng rng(1);
  add_head(with_head.params, base.config, "h", 2, rng);
  CHECK(error_kind_of([&] { finetune(with_head, train, "h", quick_hyper(0)); }) == ErrorKind::name);
  Dataset empty;
  empty.class_names = {"none", "CWE-190"};
  CHECK(error_kind_of([&] { finetune(base, empty, "h", quick_hyper(0)); }) == ErrorKind::precondition);
}

TEST_CASE("joint training covers the concatenated label space") {
  const Checkpoint& base = small_base();
  const TrainResult r =
      joint_train(base, {pattern("cwe190", 6, 6, 1), pattern("cwe617", 6, 6, 2)}, "joint", quick_hyper(1));
  CHECK(head_classes(r.checkpoint.params, "joint") == 3);
}
