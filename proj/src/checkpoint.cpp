#include "yoto/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "json.hpp"
#include "yoto/error.hpp"

namespace yoto {

using nlohmann::json;

namespace {

constexpr char kMagic[5] = {'Y', 'O', 'T', 'O', '1'};
constexpr std::size_t kPrefix = 5 + 4 + 8;

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) {
      throw Error(ErrorKind::io, "SHA-256 initialisation failed");
    }
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx_, data, n); }
  std::vector<unsigned char> finish() {
    std::vector<unsigned char> out(EVP_MAX_MD_SIZE);
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_, out.data(), &len);
    out.resize(len);
    return out;
  }

 private:
  EVP_MD_CTX* ctx_;
};

std::string hex(const std::vector<unsigned char>& bytes) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  for (unsigned char b : bytes) {
    s += digits[b >> 4];
    s += digits[b & 15];
  }
  return s;
}

void put_le(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out += static_cast<char>((v >> (8 * i)) & 0xFF);
}

std::uint64_t get_le(const std::string& in, std::size_t at, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

void append_floats_le(std::string& out, const Tensor& t) {
  for (float f : t.data()) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof bits);
    put_le(out, bits, 4);
  }
}

std::uint64_t checksum(const std::string& header, const std::string& payload) {
  Sha256 h;
  h.update(header.data(), header.size());
  h.update(payload.data(), payload.size());
  const auto d = h.finish();
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(d[static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

json config_to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model}, {"n_heads", c.n_heads},
          {"n_layers", c.n_layers},     {"d_ff", c.d_ff},       {"max_len", c.max_len}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.max_len = j.at("max_len").get<int>();
  return c;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

std::string to_string(Role role) {
  switch (role) {
    case Role::pretrained: return "pretrained";
    case Role::finetuned: return "finetuned";
    case Role::merged: return "merged";
    case Role::vulvector: return "vulvector";
  }
  return "pretrained";
}

Role parse_role(const std::string& text) {
  if (text == "pretrained") return Role::pretrained;
  if (text == "finetuned") return Role::finetuned;
  if (text == "merged") return Role::merged;
  if (text == "vulvector") return Role::vulvector;
  throw Error(ErrorKind::format, "unknown checkpoint role '" + text + "'");
}

void Checkpoint::validate() const {
  if (meta.role == Role::pretrained && meta.base_fingerprint) {
    throw Error(ErrorKind::invariant, "pretrained checkpoints must not carry a base fingerprint");
  }
  if (meta.role != Role::pretrained && (!meta.base_fingerprint || meta.base_fingerprint->empty())) {
    throw Error(ErrorKind::invariant, to_string(meta.role) + " checkpoints require a base fingerprint");
  }
  validate_params(params, config);
  if (meta.role == Role::vulvector && !head_ids(params).empty()) {
    throw Error(ErrorKind::invariant, "vulvector containers hold encoder tensors only");
  }
}

NamedParams Checkpoint::encoder_params() const {
  NamedParams out;
  for (const auto& [name, t] : params) {
    if (is_encoder_name(name)) out.emplace(name, t);
  }
  return out;
}

NamedParams Checkpoint::head_params(const std::string& head_id) const {
  NamedParams out;
  const std::string prefix = head_prefix(head_id);
  for (const auto& [name, t] : params) {
    if (name.rfind(prefix, 0) == 0) out.emplace(name, t);
  }
  if (out.empty()) throw Error(ErrorKind::missing_head, "checkpoint has no head '" + head_id + "'");
  return out;
}

std::string sha256_hex(const std::string& bytes) {
  Sha256 h;
  h.update(bytes.data(), bytes.size());
  return hex(h.finish());
}

std::string fingerprint(const NamedParams& params) {
  Sha256 h;
  std::string buf;
  for (const auto& [name, t] : params) {  // std::map: lexicographic
    if (!is_encoder_name(name)) continue;
    buf.clear();
    buf += name;
    buf += '\0';
    append_floats_le(buf, t);
    h.update(buf.data(), buf.size());
  }
  return hex(h.finish());
}

std::string encode_checkpoint(const Checkpoint& checkpoint) {
  checkpoint.validate();
  json index = json::object();
  std::string payload;
  for (const auto& [name, t] : checkpoint.params) {
    const std::uint64_t offset = payload.size();
    append_floats_le(payload, t);
    index[name] = {{"shape", t.shape()}, {"offset", offset}, {"length", payload.size() - offset}};
  }
  const auto& m = checkpoint.meta;
  json meta = {{"role", to_string(m.role)},
               {"base_fingerprint", m.base_fingerprint ? json(*m.base_fingerprint) : json(nullptr)},
               {"lineage", m.lineage},
               {"lambda", m.lambda ? json(*m.lambda) : json(nullptr)},
               {"seed", m.seed},
               {"fingerprint", fingerprint(checkpoint.params)},
               {"vocab", m.vocab}};
  json header_json = {{"config", config_to_json(checkpoint.config)}, {"metadata", meta}, {"tensors", index}};
  const std::string header = header_json.dump();

  std::string out(kMagic, sizeof kMagic);
  put_le(out, kContainerVersion, 4);
  put_le(out, header.size(), 8);
  out += header;
  out += payload;
  put_le(out, checksum(header, payload), 8);
  return out;
}

namespace {

std::optional<std::uint64_t> declared_payload_size(const std::string& header) {
  try {
    const json h = json::parse(header);
    std::uint64_t total = 0;
    for (const auto& [_, entry] : h.at("tensors").items()) total += entry.at("length").get<std::uint64_t>();
    return total;
  } catch (const json::exception&) {
    return std::nullopt;
  }
}

}  // namespace

Checkpoint decode_checkpoint(const std::string& bytes, const std::string& source) {
  if (bytes.size() < kPrefix) throw Error(ErrorKind::integrity, source + ": truncated container prefix");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) throw Error(ErrorKind::format, source + ": bad magic");
  const auto version = static_cast<std::uint32_t>(get_le(bytes, 5, 4));
  if (version != kContainerVersion) {
    throw Error(ErrorKind::format, source + ": unsupported container version " + std::to_string(version));
  }
  const std::uint64_t header_len = get_le(bytes, 9, 8);
  if (header_len > bytes.size() || bytes.size() - kPrefix < header_len + 8) {
    throw Error(ErrorKind::integrity, source + ": truncated container");
  }
  const std::string header = bytes.substr(kPrefix, header_len);
  const std::size_t payload_len = bytes.size() - kPrefix - header_len - 8;
  // A short payload is truncation, not corruption, when the header still
  // says how long it should be.
  const auto declared = declared_payload_size(header);
  if (declared && *declared > payload_len) {
    throw Error(ErrorKind::integrity, source + ": truncated payload");
  }
  const std::string payload = bytes.substr(kPrefix + header_len, payload_len);
  if (get_le(bytes, bytes.size() - 8, 8) != checksum(header, payload)) {
    throw Error(ErrorKind::corruption, source + ": checksum mismatch");
  }

  Checkpoint ck;
  try {
    const json h = json::parse(header);
    ck.config = config_from_json(h.at("config"));
    const json& m = h.at("metadata");
    ck.meta.role = parse_role(m.at("role").get<std::string>());
    if (!m.at("base_fingerprint").is_null()) ck.meta.base_fingerprint = m.at("base_fingerprint").get<std::string>();
    ck.meta.lineage = m.at("lineage").get<std::string>();
    if (!m.at("lambda").is_null()) ck.meta.lambda = m.at("lambda").get<double>();
    ck.meta.seed = m.at("seed").get<std::uint64_t>();
    ck.meta.vocab = m.at("vocab").get<std::vector<std::string>>();
    std::uint64_t expected_offset = 0;
    for (const auto& [name, entry] : h.at("tensors").items()) {
      const Shape shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const auto length = entry.at("length").get<std::uint64_t>();
      Tensor t(shape);
      if (offset != expected_offset || length != t.size() * 4 || offset + length > payload.size()) {
        throw Error(ErrorKind::format, source + ": tensor index entry '" + name + "' inconsistent with payload");
      }
      for (std::size_t i = 0; i < t.size(); ++i) {
        const auto bits = static_cast<std::uint32_t>(get_le(payload, offset + 4 * i, 4));
        std::memcpy(&t[i], &bits, sizeof bits);
      }
      expected_offset += length;
      ck.params.emplace(name, std::move(t));
    }
    if (expected_offset != payload.size()) throw Error(ErrorKind::format, source + ": payload has trailing bytes");
    ck.validate();
    if (m.at("fingerprint").get<std::string>() != fingerprint(ck.params)) {
      throw Error(ErrorKind::corruption, source + ": stored fingerprint does not match parameters");
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, source + ": malformed header: " + e.what());
  }
  return ck;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
  const std::string bytes = encode_checkpoint(checkpoint);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot write '" + tmp + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::io, "write failed for '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorKind::io, "cannot rename '" + tmp + "' to '" + path + "': " + ec.message());
}

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path), path); }

std::vector<TensorIndexEntry> read_tensor_index(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open '" + path + "'");
  std::string prefix(kPrefix, '\0');
  if (!in.read(prefix.data(), static_cast<std::streamsize>(kPrefix))) {
    throw Error(ErrorKind::integrity, path + ": truncated container prefix");
  }
  if (std::memcmp(prefix.data(), kMagic, sizeof kMagic) != 0) throw Error(ErrorKind::format, path + ": bad magic");
  const std::uint64_t header_len = get_le(prefix, 9, 8);
  std::string header(header_len, '\0');
  if (!in.read(header.data(), static_cast<std::streamsize>(header_len))) {
    throw Error(ErrorKind::integrity, path + ": truncated header");
  }
  std::vector<TensorIndexEntry> out;
  try {
    const json h = json::parse(header);
    for (const auto& [name, entry] : h.at("tensors").items()) {
      out.push_back({name, entry.at("shape").get<Shape>(), entry.at("offset").get<std::uint64_t>(),
                     entry.at("length").get<std::uint64_t>()});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, path + ": malformed header: " + e.what());
  }
  return out;
}

std::string file_digest(const std::string& path) { return sha256_hex(read_file(path)); }

bool params_bitwise_equal(const NamedParams& a, const NamedParams& b) {
  if (a.size() != b.size()) return false;
  for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib) {
    if (ia->first != ib->first || !bitwise_equal(ia->second, ib->second)) return false;
  }
  return true;
}

}  // namespace yoto
