#include <algorithm>
#include <cmath>
#include <cstring>

#include "doctest.h"
#include "support.hpp"
#include "yoto/vulvector.hpp"

using namespace yoto;
using test_support::error_kind_of;
using test_support::random_base;
using test_support::tiny_config;

namespace {

// A stand-in for a fine-tuned descendant: encoder nudged, one fresh head.
Checkpoint descendant(const Checkpoint& base, std::uint64_t seed, const std::string& head, float scale = 0.05f) {
  Checkpoint c = base;
  SeededRng rng(seed);
  for (auto& [name, t] : c.params) {
    if (!is_encoder_name(name)) continue;
    for (float& v : t.data()) v += scale * static_cast<float>(rng.normal());
  }
  add_head(c.params, c.config, head, 2, rng);
  c.meta.role = Role::finetuned;
  c.meta.base_fingerprint = fingerprint(base.params);
  return c;
}

bool bits_equal(float a, float b) { return std::memcmp(&a, &b, sizeof a) == 0; }

double max_rel_dev(const NamedParams& a, const NamedParams& b) {
  double worst = 0.0;
  for (const auto& [name, t] : a) {
    const Tensor& u = b.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double den = std::max({std::fabs(static_cast<double>(t[i])), std::fabs(static_cast<double>(u[i])), 1e-30});
      worst = std::max(worst, std::fabs(static_cast<double>(t[i]) - u[i]) / den);
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("vul-vector is the per-tensor encoder delta") {
  const Checkpoint base = random_base(tiny_config(), 1);
  const Checkpoint ft = descendant(base, 2, "a");
  const VulVector v = compute_vulvector(ft, base);
  CHECK(v.base_fingerprint == fingerprint(base.params));
  CHECK(v.entries.size() == encoder_schema(base.config).size());
  for (const auto& [name, t] : v.entries) {
    CHECK(name.starts_with("encoder."));
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(bits_equal(t[i], ft.params.at(name)[i] - base.params.at(name)[i]));
  }
}

TEST_CASE("lineage is enforced") {
  const Checkpoint base = random_base(tiny_config(), 1);
  const Checkpoint other = random_base(tiny_config(), 9);
  const Checkpoint ft = descendant(base, 2, "a");
  const Checkpoint stranger = descendant(other, 3, "b");
  CHECK(error_kind_of([&] { compute_vulvector(ft, other); }) == ErrorKind::lineage);
  const VulVector va = compute_vulvector(ft, base);
  const VulVector vb = compute_vulvector(stranger, other);
  CHECK(error_kind_of([&] { vv_add(va, vb); }) == ErrorKind::lineage);
  CHECK(error_kind_of([&] { vv_sum({va, vb}); }) == ErrorKind::lineage);
  CHECK(error_kind_of([&] { apply(other, va, {}); }) == ErrorKind::lineage);
  CHECK(error_kind_of([] { vv_sum({}); }) == ErrorKind::argument);
}

TEST_CASE("addition commutes bitwise") {
  const Checkpoint base = random_base(tiny_config(), 4);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const VulVector a = compute_vulvector(descendant(base, 100 + s, "a"), base);
    const VulVector b = compute_vulvector(descendant(base, 200 + s, "b", 3.0f), base);
    CHECK(params_bitwise_equal(vv_add(a, b).entries, vv_add(b, a).entries));
  }
}

TEST_CASE("addition is associative within 1e-6") {
  const Checkpoint base = random_base(tiny_config(), 5);
  const VulVector a = compute_vulvector(descendant(base, 1, "a", 0.1f), base);
  const VulVector b = compute_vulvector(descendant(base, 2, "b", 0.1f), base);
  const VulVector c = compute_vulvector(descendant(base, 3, "c", 0.1f), base);
  const VulVector left = vv_add(vv_add(a, b), c);
  const VulVector right = vv_add(a, vv_add(b, c));
  // Deviation is measured against the operands' magnitude |a|+|b|+|c|; the
  // rounding bound is 2 * 2^-24 of that, whatever the sum cancels to.
  double worst = 0.0;
  for (const auto& [name, l] : left.entries) {
    const Tensor& r = right.entries.at(name);
    for (std::size_t i = 0; i < l.size(); ++i) {
      const double scale = std::fabs(a.entries.at(name)[i]) + std::fabs(b.entries.at(name)[i]) +
                           std::fabs(c.entries.at(name)[i]);
      if (scale > 0.0) worst = std::max(worst, std::fabs(static_cast<double>(l[i]) - r[i]) / scale);
    }
  }
  CHECK(worst <= 1e-6);
  // Fold order is input order.
  CHECK(params_bitwise_equal(vv_sum({a, b, c}).entries, left.entries));
}

TEST_CASE("scaling laws") {
  const Checkpoint base = random_base(tiny_config(), 6);
  const VulVector a = compute_vulvector(descendant(base, 1, "a"), base);
  const VulVector zero = vv_scale(a, 0.0f);
  for (const auto& [_, t] : zero.entries)
    for (float x : t.data()) CHECK(bits_equal(x, 0.0f));
  CHECK(params_bitwise_equal(vv_zero_like(a).entries, zero.entries));
  CHECK(params_bitwise_equal(vv_add(a, zero).entries, a.entries));
  CHECK(params_bitwise_equal(vv_scale(a, 1.0f).entries, a.entries));
  const VulVector two = vv_scale(a, 2.0f);
  CHECK(params_bitwise_equal(two.entries, vv_add(a, a).entries));
}

TEST_CASE("applying the zero vector returns the base encoder") {
  const Checkpoint base = random_base(tiny_config(), 7);
  const Checkpoint ft = descendant(base, 1, "a");
  const Checkpoint m = apply(base, vv_scale(compute_vulvector(ft, base), 0.0f), {{&ft, "a"}});
  CHECK(params_bitwise_equal(m.encoder_params(), base.encoder_params()));
  CHECK(fingerprint(m.params) == fingerprint(base.params));
  CHECK(m.meta.role == Role::merged);
}

TEST_CASE("apply of a descendant's own vector reproduces it") {
  for (std::uint64_t s = 1; s <= 5; ++s) {
    const Checkpoint base = random_base(tiny_config(), s);
    const Checkpoint ft = descendant(base, s + 10, "a");
    const Checkpoint back = apply(base, compute_vulvector(ft, base), {{&ft, "a"}});
    CHECK(max_rel_dev(back.encoder_params(), ft.encoder_params()) <= 1e-6);
  }
}

TEST_CASE("heads travel verbatim and are never merged") {
  const Checkpoint base = random_base(tiny_config(), 8);
  const Checkpoint fa = descendant(base, 1, "a");
  const Checkpoint fb = descendant(base, 2, "b");
  MergeSpec spec;
  const VulVector va = compute_vulvector(fa, base), vb = compute_vulvector(fb, base);
  spec.sources = {&va, &vb};
  spec.lambda = 0.3f;
  const Checkpoint m = merge(base, spec, {{&fa, "a"}, {&fb, "b"}});
  CHECK(bitwise_equal(m.params.at("head.a.w"), fa.params.at("head.a.w")));
  CHECK(bitwise_equal(m.params.at("head.b.b"), fb.params.at("head.b.b")));
  CHECK(m.meta.lambda == doctest::Approx(0.3));
  // lambda * (a + b) + base, element by element.
  const auto& name = "encoder.block0.ffn.w1";
  const Tensor& got = m.params.at(name);
  for (std::size_t i = 0; i < got.size(); ++i) {
    const float want = base.params.at(name)[i] + 0.3f * (va.entries.at(name)[i] + vb.entries.at(name)[i]);
    CHECK(bits_equal(got[i], want));
  }
  CHECK(error_kind_of([&] { apply(base, va, {{&fa, "a"}, {&fa, "a"}}); }) == ErrorKind::name);
  CHECK(error_kind_of([&] { apply(base, va, {{&fa, "zz"}}); }) == ErrorKind::missing_head);
  MergeSpec empty;
  CHECK(error_kind_of([&] { merge(base, empty, {}); }) == ErrorKind::argument);
}

TEST_CASE("embeddings can be held at the base") {
  const Checkpoint base = random_base(tiny_config(), 9);
  const Checkpoint ft = descendant(base, 1, "a");
  const Checkpoint m = apply(base, compute_vulvector(ft, base), {}, {.merge_embeddings = false});
  CHECK(bitwise_equal(m.params.at("encoder.tok_emb"), base.params.at("encoder.tok_emb")));
  CHECK(bitwise_equal(m.params.at("encoder.pos_emb"), base.params.at("encoder.pos_emb")));
  CHECK_FALSE(bitwise_equal(m.params.at("encoder.block0.attn.wq"), base.params.at("encoder.block0.attn.wq")));
}

TEST_CASE("param_mean averages encoders without a shared base") {
  const Checkpoint b1 = random_base(tiny_config(), 10);
  const Checkpoint b2 = random_base(tiny_config(), 11);
  const Checkpoint fa = descendant(b1, 1, "a");
  const Checkpoint fb = descendant(b2, 2, "b");
  const Checkpoint m = param_mean({&fa, &fb}, {{&fa, "a"}, {&fb, "b"}});
  const auto& name = "encoder.tok_emb";
  for (std::size_t i = 0; i < m.params.at(name).size(); ++i) {
    const float want = (fa.params.at(name)[i] + fb.params.at(name)[i]) / 2.0f;
    CHECK(bits_equal(m.params.at(name)[i], want));
  }
  CHECK(error_kind_of([&] { param_mean({&fa}, {}); }) == ErrorKind::argument);
}

TEST_CASE("two-way merge at one half equals the parameter mean") {
  const Checkpoint base = random_base(tiny_config(), 12);
  const Checkpoint fa = descendant(base, 1, "a");
  const Checkpoint fb = descendant(base, 2, "b");
  const VulVector va = compute_vulvector(fa, base), vb = compute_vulvector(fb, base);
  MergeSpec spec{{&va, &vb}, 0.5f};
  const Checkpoint m = merge(base, spec, {});
  const Checkpoint pm = param_mean({&fa, &fb}, {});
  // Equal up to rounding; compared in absolute terms since cancellation
  // makes relative error meaningless for near-zero entries.
  for (const auto& [name, t] : m.encoder_params()) {
    const Tensor& u = pm.params.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(std::fabs(t[i] - u[i]) <= 1e-6f);
  }
}

TEST_CASE("vulvector containers roundtrip") {
  const Checkpoint base = random_base(tiny_config(), 13);
  const VulVector v = compute_vulvector(descendant(base, 1, "a"), base);
  const Checkpoint c = to_container(v);
  CHECK(c.meta.role == Role::vulvector);
  const VulVector back = from_container(decode_checkpoint(encode_checkpoint(c)));
  CHECK(params_bitwise_equal(back.entries, v.entries));
  CHECK(back.base_fingerprint == v.base_fingerprint);
  CHECK(error_kind_of([&] { from_container(base); }) == ErrorKind::format);
}
