#include "yoto/vulvector.hpp"

#include <charconv>
#include <iomanip>
#include <sstream>

#include "yoto/error.hpp"

namespace yoto {

namespace {

void require_same_base(const VulVector& a, const VulVector& b, const char* op) {
  if (a.base_fingerprint != b.base_fingerprint) {
    throw Error(ErrorKind::lineage, std::string(op) + ": vectors come from different bases (" +
                                        a.base_fingerprint.substr(0, 12) + " vs " + b.base_fingerprint.substr(0, 12) + ")");
  }
  if (!(a.config == b.config)) throw Error(ErrorKind::shape, std::string(op) + ": vectors have different model configs");
}

std::string format_lambda(double lambda) {
  std::ostringstream os;
  os << std::setprecision(9) << lambda;
  return os.str();
}

void attach_heads(Checkpoint& out, const std::vector<HeadSource>& heads) {
  for (const auto& h : heads) {
    if (!h.donor) throw Error(ErrorKind::argument, "head source '" + h.head_id + "' has no donor checkpoint");
    if (!(h.donor->config == out.config)) {
      throw Error(ErrorKind::shape, "head donor for '" + h.head_id + "' uses a different model config");
    }
    for (const auto& [name, t] : h.donor->head_params(h.head_id)) {
      if (!out.params.emplace(name, t).second) {
        throw Error(ErrorKind::name, "duplicate head '" + h.head_id + "' in head bank");
      }
    }
  }
}

template <typename F>
VulVector map_entries(const VulVector& v, F f) {
  VulVector out{v.config, {}, v.base_fingerprint, v.lineage};
  for (const auto& [name, t] : v.entries) out.entries.emplace(name, f(t));
  return out;
}

}  // namespace

void VulVector::validate() const {
  if (base_fingerprint.empty()) throw Error(ErrorKind::invariant, "vul-vector without a base fingerprint");
  const auto schema = encoder_schema(config);
  if (schema.size() != entries.size()) throw Error(ErrorKind::shape, "vul-vector does not cover the encoder schema");
  for (const auto& [name, shape] : schema) {
    auto it = entries.find(name);
    if (it == entries.end() || it->second.shape() != shape) {
      throw Error(ErrorKind::shape, "vul-vector entry '" + name + "' missing or misshapen");
    }
  }
}

void MergeSpec::validate() const {
  if (sources.empty()) throw Error(ErrorKind::argument, "merge needs at least one vul-vector");
  for (const auto* s : sources) {
    if (!s) throw Error(ErrorKind::argument, "null vul-vector in merge spec");
    require_same_base(*sources.front(), *s, "merge");
  }
}

VulVector compute_vulvector(const Checkpoint& finetuned, const Checkpoint& base) {
  const std::string base_fp = fingerprint(base.params);
  if (!finetuned.meta.base_fingerprint || *finetuned.meta.base_fingerprint != base_fp) {
    throw Error(ErrorKind::lineage, "fine-tuned checkpoint was not derived from this base (expected " +
                                        base_fp.substr(0, 12) + ")");
  }
  if (!(finetuned.config == base.config)) throw Error(ErrorKind::shape, "fine-tuned and base configs differ");
  VulVector v{base.config, {}, base_fp, "diff(" + finetuned.meta.lineage + ")"};
  for (const auto& [name, shape] : encoder_schema(base.config)) {
    auto ft = finetuned.params.find(name);
    auto b = base.params.find(name);
    if (ft == finetuned.params.end() || b == base.params.end() || ft->second.shape() != shape ||
        b->second.shape() != shape) {
      throw Error(ErrorKind::shape, "encoder tensor '" + name + "' missing or misshapen");
    }
    v.entries.emplace(name, kern::sub(ft->second, b->second));
  }
  return v;
}

VulVector vv_add(const VulVector& a, const VulVector& b) {
  require_same_base(a, b, "vv_add");
  if (a.entries.size() != b.entries.size()) throw Error(ErrorKind::shape, "vv_add: entry sets differ");
  VulVector out{a.config, {}, a.base_fingerprint, "(" + a.lineage + " + " + b.lineage + ")"};
  for (const auto& [name, t] : a.entries) {
    auto it = b.entries.find(name);
    if (it == b.entries.end()) throw Error(ErrorKind::shape, "vv_add: '" + name + "' missing from right operand");
    out.entries.emplace(name, kern::add(t, it->second));
  }
  return out;
}

VulVector vv_sum(const std::vector<VulVector>& vectors) {
  if (vectors.empty()) throw Error(ErrorKind::argument, "vv_sum of no vectors");
  VulVector acc = vectors.front();
  for (std::size_t i = 1; i < vectors.size(); ++i) acc = vv_add(acc, vectors[i]);
  return acc;
}

VulVector vv_scale(const VulVector& v, float lambda) {
  VulVector out = map_entries(v, [&](const Tensor& t) { return kern::scale(lambda, t); });
  out.lineage = format_lambda(lambda) + "*" + v.lineage;
  return out;
}

VulVector vv_zero_like(const VulVector& v) {
  VulVector out = map_entries(v, [](const Tensor& t) { return Tensor(t.shape()); });
  out.lineage = "zero";
  return out;
}

Checkpoint apply(const Checkpoint& base, const VulVector& v, const std::vector<HeadSource>& heads,
                 const MergeOptions& options) {
  const std::string base_fp = fingerprint(base.params);
  if (v.base_fingerprint != base_fp) {
    throw Error(ErrorKind::lineage, "vul-vector base " + v.base_fingerprint.substr(0, 12) + " does not match " +
                                        base_fp.substr(0, 12));
  }
  if (!(v.config == base.config)) throw Error(ErrorKind::shape, "vul-vector config differs from base");
  v.validate();
  Checkpoint out;
  out.config = base.config;
  for (const auto& [name, t] : v.entries) {
    const Tensor& b = base.params.at(name);
    const bool embedding = name == "encoder.tok_emb" || name == "encoder.pos_emb";
    out.params.emplace(name, !options.merge_embeddings && embedding ? b : kern::add(b, t));
  }
  attach_heads(out, heads);
  out.meta.role = Role::merged;
  out.meta.base_fingerprint = base_fp;
  out.meta.seed = base.meta.seed;
  out.meta.vocab = base.meta.vocab;
  out.meta.lineage = "apply(" + v.lineage + ")";
  out.validate();
  return out;
}

Checkpoint merge(const Checkpoint& base, const MergeSpec& spec, const std::vector<HeadSource>& heads,
                 const MergeOptions& options) {
  spec.validate();
  std::vector<VulVector> vs;
  for (const auto* s : spec.sources) vs.push_back(*s);
  Checkpoint out = apply(base, vv_scale(vv_sum(vs), spec.lambda), heads, options);
  out.meta.lambda = decimal_lambda(spec.lambda);
  return out;
}

Checkpoint param_mean(const std::vector<const Checkpoint*>& checkpoints, const std::vector<HeadSource>& heads) {
  if (checkpoints.size() < 2) throw Error(ErrorKind::argument, "param_mean needs at least two checkpoints");
  const Checkpoint& first = *checkpoints.front();
  for (const auto* c : checkpoints) {
    if (!(c->config == first.config)) throw Error(ErrorKind::shape, "param_mean: encoder schemas differ");
  }
  Checkpoint out;
  out.config = first.config;
  const auto count = static_cast<float>(checkpoints.size());
  std::string lineage = "mean(";
  for (const auto& [name, shape] : encoder_schema(first.config)) {
    Tensor acc(shape);
    for (const auto* c : checkpoints) {
      auto it = c->params.find(name);
      if (it == c->params.end() || it->second.shape() != shape) {
        throw Error(ErrorKind::shape, "param_mean: tensor '" + name + "' missing or misshapen");
      }
      kern::add_inplace(acc, it->second);
    }
    for (float& x : acc.data()) x /= count;
    out.params.emplace(name, std::move(acc));
  }
  for (std::size_t i = 0; i < checkpoints.size(); ++i) lineage += (i ? "," : "") + checkpoints[i]->meta.lineage;
  attach_heads(out, heads);
  out.meta.role = Role::merged;
  // The mean has no single base; it records the first input's origin.
  out.meta.base_fingerprint = first.meta.base_fingerprint.value_or(fingerprint(first.params));
  out.meta.seed = first.meta.seed;
  out.meta.vocab = first.meta.vocab;
  out.meta.lineage = lineage + ")";
  out.validate();
  return out;
}

Checkpoint to_container(const VulVector& v) {
  v.validate();
  Checkpoint c;
  c.config = v.config;
  c.params = v.entries;
  c.meta.role = Role::vulvector;
  c.meta.base_fingerprint = v.base_fingerprint;
  c.meta.lineage = v.lineage;
  return c;
}

VulVector from_container(const Checkpoint& c) {
  if (c.meta.role != Role::vulvector) {
    throw Error(ErrorKind::format, "expected a vulvector container, got role " + to_string(c.meta.role));
  }
  VulVector v{c.config, c.params, c.meta.base_fingerprint.value_or(""), c.meta.lineage};
  v.validate();
  return v;
}

double decimal_lambda(float lambda) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, lambda);
  double out = 0.0;
  std::from_chars(buf, res.ptr, out);
  return out;
}

}  // namespace yoto
