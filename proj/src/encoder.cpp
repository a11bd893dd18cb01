#include "yoto/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "yoto/error.hpp"

namespace yoto {

namespace {

const Tensor& param(const NamedParams& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw Error(ErrorKind::consistency, "missing parameter '" + name + "'");
  return it->second;
}

Tensor& grad_slot(NamedParams& grads, const std::string& name) {
  auto it = grads.find(name);
  if (it == grads.end()) throw Error(ErrorKind::consistency, "gradient map lacks '" + name + "'");
  return it->second;
}

std::string block_name(int layer) { return "encoder.block" + std::to_string(layer) + "."; }

const Shape& shape_of(const NamedParams& params, const std::string& name) { return param(params, name).shape(); }

// Row-wise layer norm backward. dy is overwritten with dx.
void layer_norm_backward(Tensor& dy, const Tensor& normalized, const std::vector<float>& rstd, const Tensor& gain,
                         Tensor& dgain, Tensor& dbias) {
  const std::size_t n = dy.cols();
  std::vector<float> dxhat(n);
  for (std::size_t r = 0; r < dy.rows(); ++r) {
    auto g = dy.row(r);
    const auto xh = normalized.row(r);
    float mean1 = 0.0f, mean2 = 0.0f;
    for (std::size_t j = 0; j < n; ++j) {
      dgain[j] += g[j] * xh[j];
      dbias[j] += g[j];
      dxhat[j] = g[j] * gain[j];
      mean1 += dxhat[j];
      mean2 += dxhat[j] * xh[j];
    }
    mean1 /= static_cast<float>(n);
    mean2 /= static_cast<float>(n);
    for (std::size_t j = 0; j < n; ++j) g[j] = rstd[r] * (dxhat[j] - mean1 - xh[j] * mean2);
  }
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = kern::matmul(x, w);
  kern::add_row_bias(y, b);
  return y;
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < 1 || d_model < 1 || n_heads < 1 || n_layers < 1 || d_ff < 1 || max_len < 1) {
    throw Error(ErrorKind::config, "model config fields must all be >= 1");
  }
  if (d_model % n_heads != 0) {
    throw Error(ErrorKind::config, "d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" +
                                       std::to_string(n_heads) + ")");
  }
}

std::map<std::string, Shape> encoder_schema(const ModelConfig& config) {
  config.validate();
  const auto d = static_cast<std::size_t>(config.d_model);
  const auto ff = static_cast<std::size_t>(config.d_ff);
  std::map<std::string, Shape> s;
  s["encoder.tok_emb"] = {static_cast<std::size_t>(config.vocab_size), d};
  s["encoder.pos_emb"] = {static_cast<std::size_t>(config.max_len), d};
  for (int l = 0; l < config.n_layers; ++l) {
    const std::string p = block_name(l);
    for (const char* w : {"wq", "wk", "wv", "wo"}) s[p + "attn." + w] = {d, d};
    for (const char* b : {"bq", "bk", "bv", "bo"}) s[p + "attn." + b] = {d};
    s[p + "ln1.gain"] = {d};
    s[p + "ln1.bias"] = {d};
    s[p + "ffn.w1"] = {d, ff};
    s[p + "ffn.b1"] = {ff};
    s[p + "ffn.w2"] = {ff, d};
    s[p + "ffn.b2"] = {d};
    s[p + "ln2.gain"] = {d};
    s[p + "ln2.bias"] = {d};
  }
  return s;
}

void validate_head_id(const std::string& head_id) {
  if (head_id.empty() || !std::all_of(head_id.begin(), head_id.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
      })) {
    throw Error(ErrorKind::name, "head id '" + head_id + "' must be non-empty [A-Za-z0-9_-]");
  }
}

std::string head_prefix(const std::string& head_id) { return "head." + head_id + "."; }

bool is_encoder_name(const std::string& name) { return name.rfind("encoder.", 0) == 0; }

std::map<std::string, Shape> head_schema(const ModelConfig& config, const std::string& head_id, int n_classes) {
  validate_head_id(head_id);
  if (n_classes < 1) throw Error(ErrorKind::config, "head '" + head_id + "' needs at least one class");
  const auto c = static_cast<std::size_t>(n_classes);
  return {{head_prefix(head_id) + "b", {c}}, {head_prefix(head_id) + "w", {static_cast<std::size_t>(config.d_model), c}}};
}

std::vector<std::string> head_ids(const NamedParams& params) {
  std::set<std::string> ids;
  for (const auto& [name, t] : params) {
    if (name.rfind("head.", 0) != 0) continue;
    const auto dot = name.find('.', 5);
    if (dot != std::string::npos) ids.insert(name.substr(5, dot - 5));
  }
  return {ids.begin(), ids.end()};
}

int head_classes(const NamedParams& params, const std::string& head_id) {
  auto it = params.find(head_prefix(head_id) + "b");
  if (it == params.end()) throw Error(ErrorKind::missing_head, "no head '" + head_id + "' in parameters");
  return static_cast<int>(it->second.size());
}

void validate_params(const NamedParams& params, const ModelConfig& config) {
  const auto schema = encoder_schema(config);
  for (const auto& [name, shape] : schema) {
    auto it = params.find(name);
    if (it == params.end()) throw Error(ErrorKind::shape, "missing encoder tensor '" + name + "'");
    if (it->second.shape() != shape) {
      throw Error(ErrorKind::shape, "tensor '" + name + "' has shape " + shape_string(it->second.shape()) +
                                        ", schema requires " + shape_string(shape));
    }
  }
  std::size_t expected = schema.size();
  for (const auto& id : head_ids(params)) {
    auto b = params.find(head_prefix(id) + "b");
    if (b == params.end() || b->second.rank() != 1) {
      throw Error(ErrorKind::shape, "head '" + id + "' lacks a rank-1 bias");
    }
    for (const auto& [name, shape] : head_schema(config, id, static_cast<int>(b->second.size()))) {
      auto it = params.find(name);
      if (it == params.end() || it->second.shape() != shape) {
        throw Error(ErrorKind::shape, "head tensor '" + name + "' missing or misshapen");
      }
      ++expected;
    }
  }
  if (expected != params.size()) {
    for (const auto& [name, t] : params) {
      const bool known = schema.contains(name) || (name.rfind("head.", 0) == 0 && (name.ends_with(".w") || name.ends_with(".b")) &&
                                                  std::count(name.begin(), name.end(), '.') == 2);
      if (!known) throw Error(ErrorKind::shape, "unexpected tensor '" + name + "'");
    }
    throw Error(ErrorKind::shape, "parameter map holds tensors outside the schema");
  }
}

std::size_t parameter_count(const NamedParams& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.size();
  return n;
}

NamedParams init_params(const ModelConfig& config, const std::map<std::string, int>& n_classes_per_head,
                        SeededRng& rng) {
  NamedParams params;
  for (const auto& [name, shape] : encoder_schema(config)) {
    const bool is_gain = name.ends_with(".gain");
    const bool is_weight = shape.size() == 2;
    if (is_weight) {
      params.emplace(name, kern::rng_normal(rng, shape, kInitStd));
    } else {
      Tensor t(shape);
      if (is_gain) std::fill(t.data().begin(), t.data().end(), 1.0f);
      params.emplace(name, std::move(t));
    }
  }
  for (const auto& [id, n] : n_classes_per_head) add_head(params, config, id, n, rng);
  return params;
}

void add_head(NamedParams& params, const ModelConfig& config, const std::string& head_id, int n_classes,
              SeededRng& rng) {
  for (const auto& [name, shape] : head_schema(config, head_id, n_classes)) {
    if (params.contains(name)) throw Error(ErrorKind::name, "head '" + head_id + "' already exists");
  }
  for (const auto& [name, shape] : head_schema(config, head_id, n_classes)) {
    params.emplace(name, shape.size() == 2 ? kern::rng_normal(rng, shape, kInitStd) : Tensor(shape));
  }
}

NamedParams zeros_like(const NamedParams& params) {
  NamedParams z;
  for (const auto& [name, t] : params) z.emplace(name, Tensor(t.shape()));
  return z;
}

Batch make_batch(const std::vector<std::vector<std::int32_t>>& sequences) {
  if (sequences.empty()) throw Error(ErrorKind::argument, "make_batch: empty batch");
  Batch b;
  b.rows = sequences.size();
  for (const auto& s : sequences) {
    if (s.empty()) throw Error(ErrorKind::argument, "make_batch: sequences need at least one token");
    b.cols = std::max(b.cols, s.size());
  }
  b.ids.assign(b.rows * b.cols, kPadId);
  for (std::size_t r = 0; r < b.rows; ++r) {
    std::copy(sequences[r].begin(), sequences[r].end(), b.ids.begin() + static_cast<std::ptrdiff_t>(r * b.cols));
    b.lengths.push_back(sequences[r].size());
  }
  return b;
}

EncoderCache encode(const NamedParams& params, const ModelConfig& config, const Batch& batch) {
  config.validate();
  if (batch.cols > static_cast<std::size_t>(config.max_len)) {
    throw Error(ErrorKind::length, "sequence length " + std::to_string(batch.cols) + " exceeds max_len " +
                                       std::to_string(config.max_len));
  }
  const auto d = static_cast<std::size_t>(config.d_model);
  const auto n_heads = static_cast<std::size_t>(config.n_heads);
  const std::size_t dh = d / n_heads;
  const std::size_t rows = batch.rows, T = batch.cols, n_tok = rows * T;
  const float score_scale = 1.0f / std::sqrt(static_cast<float>(dh));

  EncoderCache cache;
  cache.config = config;
  cache.batch = batch;

  const Tensor& tok = param(params, "encoder.tok_emb");
  const Tensor& pos = param(params, "encoder.pos_emb");
  Tensor x = Tensor::matrix(n_tok, d);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t t = 0; t < T; ++t) {
      const std::int32_t id = batch.at(r, t);
      if (id < 0 || id >= config.vocab_size) {
        throw Error(ErrorKind::index, "token id " + std::to_string(id) + " outside vocab of " +
                                          std::to_string(config.vocab_size));
      }
      auto out = x.row(r * T + t);
      const auto te = tok.row(static_cast<std::size_t>(id));
      const auto pe = pos.row(t);
      for (std::size_t j = 0; j < d; ++j) out[j] = te[j] + pe[j];
    }
  }

  for (int l = 0; l < config.n_layers; ++l) {
    const std::string p = block_name(l);
    LayerCache lc;
    lc.input = x;
    lc.q = linear(x, param(params, p + "attn.wq"), param(params, p + "attn.bq"));
    lc.k = linear(x, param(params, p + "attn.wk"), param(params, p + "attn.bk"));
    lc.v = linear(x, param(params, p + "attn.wv"), param(params, p + "attn.bv"));
    lc.attn.assign(rows * n_heads * T * T, 0.0f);
    lc.context = Tensor::matrix(n_tok, d);

    const long long pairs = static_cast<long long>(rows * n_heads);
#pragma omp parallel for schedule(static)
    for (long long bh = 0; bh < pairs; ++bh) {
      const std::size_t r = static_cast<std::size_t>(bh) / n_heads;
      const std::size_t h = static_cast<std::size_t>(bh) % n_heads;
      const std::size_t len = batch.lengths[r];
      const std::size_t off = h * dh;
      std::vector<float> scores(len);
      for (std::size_t i = 0; i < T; ++i) {
        const float* qi = lc.q.data().data() + (r * T + i) * d + off;
        float mx = 0.0f;
        for (std::size_t j = 0; j < len; ++j) {
          const float* kj = lc.k.data().data() + (r * T + j) * d + off;
          float s = 0.0f;
          for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          scores[j] = s * score_scale;
          mx = j == 0 ? scores[j] : std::max(mx, scores[j]);
        }
        float sum = 0.0f;
        for (std::size_t j = 0; j < len; ++j) {
          scores[j] = std::exp(scores[j] - mx);
          sum += scores[j];
        }
        float* arow = lc.attn.data() + ((r * n_heads + h) * T + i) * T;
        const float inv = 1.0f / sum;
        for (std::size_t j = 0; j < len; ++j) arow[j] = scores[j] * inv;
        float* ci = lc.context.data().data() + (r * T + i) * d + off;
        for (std::size_t j = 0; j < len; ++j) {
          const float* vj = lc.v.data().data() + (r * T + j) * d + off;
          for (std::size_t c = 0; c < dh; ++c) ci[c] += arow[j] * vj[c];
        }
      }
    }

    Tensor attn_out = linear(lc.context, param(params, p + "attn.wo"), param(params, p + "attn.bo"));
    auto ln1 = kern::layer_norm_ex(kern::add(x, attn_out), param(params, p + "ln1.gain"),
                                   param(params, p + "ln1.bias"), kLayerNormEps);
    lc.hidden1 = std::move(ln1.out);
    lc.ln1_normalized = std::move(ln1.normalized);
    lc.ln1_rstd = std::move(ln1.rstd);

    lc.ffn_pre = linear(lc.hidden1, param(params, p + "ffn.w1"), param(params, p + "ffn.b1"));
    lc.ffn_act = kern::relu(lc.ffn_pre);
    Tensor ffn_out = linear(lc.ffn_act, param(params, p + "ffn.w2"), param(params, p + "ffn.b2"));
    auto ln2 = kern::layer_norm_ex(kern::add(lc.hidden1, ffn_out), param(params, p + "ln2.gain"),
                                   param(params, p + "ln2.bias"), kLayerNormEps);
    x = std::move(ln2.out);
    lc.ln2_normalized = std::move(ln2.normalized);
    lc.ln2_rstd = std::move(ln2.rstd);
    cache.layers.push_back(std::move(lc));
  }
  cache.output = std::move(x);
  return cache;
}

void encode_backward(const NamedParams& params, const EncoderCache& cache, const Tensor& grad_output,
                     NamedParams& grads) {
  const ModelConfig& config = cache.config;
  const Batch& batch = cache.batch;
  const auto d = static_cast<std::size_t>(config.d_model);
  const auto n_heads = static_cast<std::size_t>(config.n_heads);
  const std::size_t dh = d / n_heads;
  const std::size_t rows = batch.rows, T = batch.cols, n_tok = rows * T;
  const float score_scale = 1.0f / std::sqrt(static_cast<float>(dh));
  if (grad_output.rows() != n_tok || grad_output.cols() != d || cache.layers.size() != static_cast<std::size_t>(config.n_layers)) {
    throw Error(ErrorKind::consistency, "encoder gradient does not match the cached forward pass");
  }

  Tensor dx = grad_output;
  for (int l = config.n_layers - 1; l >= 0; --l) {
    const std::string p = block_name(l);
    const LayerCache& lc = cache.layers[static_cast<std::size_t>(l)];

    // LN2 -> residual (hidden1 + ffn)
    layer_norm_backward(dx, lc.ln2_normalized, lc.ln2_rstd, param(params, p + "ln2.gain"),
                        grad_slot(grads, p + "ln2.gain"), grad_slot(grads, p + "ln2.bias"));
    Tensor d_hidden1 = dx;
    kern::add_inplace(grad_slot(grads, p + "ffn.w2"), kern::matmul_tn(lc.ffn_act, dx));
    kern::add_inplace(grad_slot(grads, p + "ffn.b2"), kern::col_sum(dx));
    Tensor d_act = kern::matmul_nt(dx, param(params, p + "ffn.w2"));
    for (std::size_t i = 0; i < d_act.size(); ++i) {
      if (!(lc.ffn_pre[i] > 0.0f)) d_act[i] = 0.0f;
    }
    kern::add_inplace(grad_slot(grads, p + "ffn.w1"), kern::matmul_tn(lc.hidden1, d_act));
    kern::add_inplace(grad_slot(grads, p + "ffn.b1"), kern::col_sum(d_act));
    kern::add_inplace(d_hidden1, kern::matmul_nt(d_act, param(params, p + "ffn.w1")));

    // LN1 -> residual (input + attention)
    layer_norm_backward(d_hidden1, lc.ln1_normalized, lc.ln1_rstd, param(params, p + "ln1.gain"),
                        grad_slot(grads, p + "ln1.gain"), grad_slot(grads, p + "ln1.bias"));
    Tensor d_input = d_hidden1;
    kern::add_inplace(grad_slot(grads, p + "attn.wo"), kern::matmul_tn(lc.context, d_hidden1));
    kern::add_inplace(grad_slot(grads, p + "attn.bo"), kern::col_sum(d_hidden1));
    Tensor d_ctx = kern::matmul_nt(d_hidden1, param(params, p + "attn.wo"));

    Tensor dq = Tensor::matrix(n_tok, d), dk = Tensor::matrix(n_tok, d), dv = Tensor::matrix(n_tok, d);
    const long long pairs = static_cast<long long>(rows * n_heads);
#pragma omp parallel for schedule(static)
    for (long long bh = 0; bh < pairs; ++bh) {
      const std::size_t r = static_cast<std::size_t>(bh) / n_heads;
      const std::size_t h = static_cast<std::size_t>(bh) % n_heads;
      const std::size_t len = batch.lengths[r];
      const std::size_t off = h * dh;
      std::vector<float> d_attn(len), d_score(len);
      for (std::size_t i = 0; i < T; ++i) {
        const float* arow = lc.attn.data() + ((r * n_heads + h) * T + i) * T;
        const float* gci = d_ctx.data().data() + (r * T + i) * d + off;
        float dot = 0.0f;
        for (std::size_t j = 0; j < len; ++j) {
          const float* vj = lc.v.data().data() + (r * T + j) * d + off;
          float s = 0.0f;
          for (std::size_t c = 0; c < dh; ++c) s += gci[c] * vj[c];
          d_attn[j] = s;
          dot += s * arow[j];
          float* dvj = dv.data().data() + (r * T + j) * d + off;
          for (std::size_t c = 0; c < dh; ++c) dvj[c] += arow[j] * gci[c];
        }
        const float* qi = lc.q.data().data() + (r * T + i) * d + off;
        float* dqi = dq.data().data() + (r * T + i) * d + off;
        for (std::size_t j = 0; j < len; ++j) {
          d_score[j] = arow[j] * (d_attn[j] - dot) * score_scale;
          const float* kj = lc.k.data().data() + (r * T + j) * d + off;
          float* dkj = dk.data().data() + (r * T + j) * d + off;
          for (std::size_t c = 0; c < dh; ++c) {
            dqi[c] += d_score[j] * kj[c];
            dkj[c] += d_score[j] * qi[c];
          }
        }
      }
    }

    const std::pair<const Tensor*, const char*> projections[] = {{&dq, "q"}, {&dk, "k"}, {&dv, "v"}};
    for (const auto& [dproj, tag] : projections) {
      const std::string w = p + "attn.w" + tag;
      const std::string b = p + "attn.b" + tag;
      kern::add_inplace(grad_slot(grads, w), kern::matmul_tn(lc.input, *dproj));
      kern::add_inplace(grad_slot(grads, b), kern::col_sum(*dproj));
      kern::add_inplace(d_input, kern::matmul_nt(*dproj, param(params, w)));
    }
    dx = std::move(d_input);
  }

  Tensor& dtok = grad_slot(grads, "encoder.tok_emb");
  Tensor& dpos = grad_slot(grads, "encoder.pos_emb");
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t t = 0; t < batch.lengths[r]; ++t) {
      const auto g = dx.row(r * T + t);
      auto te = dtok.row(static_cast<std::size_t>(batch.at(r, t)));
      auto pe = dpos.row(t);
      for (std::size_t j = 0; j < d; ++j) {
        te[j] += g[j];
        pe[j] += g[j];
      }
    }
  }
}

ForwardResult forward(const NamedParams& params, const ModelConfig& config, const Batch& batch,
                      const std::string& head_id) {
  const std::string hp = head_prefix(head_id);
  if (!params.contains(hp + "w") || !params.contains(hp + "b")) {
    throw Error(ErrorKind::missing_head, "no head '" + head_id + "' in parameters");
  }
  ForwardCache cache;
  cache.encoder = encode(params, config, batch);
  cache.head_id = head_id;
  const auto d = static_cast<std::size_t>(config.d_model);
  const std::size_t T = batch.cols;
  cache.pooled = Tensor::matrix(batch.rows, d);
  for (std::size_t r = 0; r < batch.rows; ++r) {
    auto out = cache.pooled.row(r);
    for (std::size_t t = 0; t < batch.lengths[r]; ++t) {
      const auto h = cache.encoder.output.row(r * T + t);
      for (std::size_t j = 0; j < d; ++j) out[j] += h[j];
    }
    const float inv = 1.0f / static_cast<float>(batch.lengths[r]);
    for (float& v : out) v *= inv;
  }
  cache.logits = linear(cache.pooled, param(params, hp + "w"), param(params, hp + "b"));
  Tensor logits = cache.logits;
  return {std::move(logits), std::move(cache)};
}

NamedParams backward(const NamedParams& params, const ModelConfig& config, const ForwardCache& cache,
                     const Tensor& grad_logits) {
  if (!(cache.encoder.config == config)) throw Error(ErrorKind::consistency, "cache was produced under another config");
  const std::string hp = head_prefix(cache.head_id);
  if (!params.contains(hp + "w")) {
    throw Error(ErrorKind::consistency, "cache refers to head '" + cache.head_id + "' absent from params");
  }
  if (grad_logits.shape() != cache.logits.shape() || shape_of(params, hp + "w")[1] != cache.logits.cols()) {
    throw Error(ErrorKind::consistency, "grad_logits shape " + shape_string(grad_logits.shape()) +
                                            " does not match cached logits " + shape_string(cache.logits.shape()));
  }
  NamedParams grads = zeros_like(params);
  kern::add_inplace(grads.at(hp + "w"), kern::matmul_tn(cache.pooled, grad_logits));
  kern::add_inplace(grads.at(hp + "b"), kern::col_sum(grad_logits));
  Tensor d_pooled = kern::matmul_nt(grad_logits, param(params, hp + "w"));

  const Batch& batch = cache.encoder.batch;
  const auto d = static_cast<std::size_t>(config.d_model);
  const std::size_t T = batch.cols;
  Tensor d_out = Tensor::matrix(batch.rows * T, d);
  for (std::size_t r = 0; r < batch.rows; ++r) {
    const float inv = 1.0f / static_cast<float>(batch.lengths[r]);
    const auto g = d_pooled.row(r);
    for (std::size_t t = 0; t < batch.lengths[r]; ++t) {
      auto o = d_out.row(r * T + t);
      for (std::size_t j = 0; j < d; ++j) o[j] = g[j] * inv;
    }
  }
  encode_backward(params, cache.encoder, d_out, grads);
  return grads;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto row = logits.row(r);
    std::size_t best = 0;
    for (std::size_t j = 1; j < row.size(); ++j) {
      if (row[j] > row[best]) best = j;
    }
    out[r] = static_cast<int>(best);
  }
  return out;
}

std::vector<int> predict(const NamedParams& params, const ModelConfig& config, const Batch& batch,
                         const std::string& head_id) {
  return argmax_rows(forward(params, config, batch, head_id).logits);
}

}  // namespace yoto
