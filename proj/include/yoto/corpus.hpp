#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace yoto {

struct FuncRecord {
  std::string func;
  int target = 0;   // 0 = no vulnerability
  std::string cwe;  // empty iff target == 0

  friend bool operator==(const FuncRecord&, const FuncRecord&) = default;
};

// Which partition a dataset is. Evaluation code that must not see test data
// checks this tag.
enum class SplitRole { whole, train, val, test };
std::string to_string(SplitRole role);
SplitRole parse_split_role(const std::string& text);

struct Dataset {
  std::vector<FuncRecord> records;
  std::vector<std::string> class_names{"none"};
  std::string provenance;
  SplitRole role = SplitRole::whole;

  std::size_t n_classes() const { return class_names.size(); }
  std::vector<int> targets() const;
  // Throws invariant errors on any record/class-name inconsistency.
  void validate() const;
};

inline constexpr const char* kDatasetSchema = "yoto-dataset/1";

Dataset load_jsonl(const std::string& path);
void save_jsonl(const Dataset& dataset, const std::string& path);
Dataset parse_jsonl(const std::string& text, const std::string& source = "<memory>");
std::string to_jsonl(const Dataset& dataset);

// Class 0 stays "none"; vulnerability classes are renumbered 1..K in part
// order. A CWE label appearing in two parts is a conflict error.
Dataset concat_datasets(const std::vector<Dataset>& parts);
// Maps a dataset into a wider label space by CWE name; every class of
// `dataset` must exist in `class_names`.
Dataset relabel(const Dataset& dataset, const std::vector<std::string>& class_names);

// ---- synthetic corpus ------------------------------------------------------

struct PatternCounts {
  int positives = 0;
  int negatives = 0;
};

struct CorpusSpec {
  std::map<std::string, PatternCounts> patterns;  // pattern id -> counts
  std::uint64_t seed = 42;
  // Fraction of positives whose body actually carries the signature; the
  // rest are label noise.
  double signature_rate = 1.0;
};

struct PatternInfo {
  std::string id;
  std::string cwe;
  std::string description;
};

// Built-in families, one token-level signature idiom each.
const std::vector<PatternInfo>& pattern_catalog();
// Imbalanced per-CWE class ratios at roughly a tenth of a real corpus.
CorpusSpec imbalanced_scaled_spec(std::uint64_t seed);
std::map<std::string, Dataset> generate_corpus(const CorpusSpec& spec);

// ---- tokenizer -------------------------------------------------------------

inline constexpr std::int32_t kUnknownId = 1;
inline constexpr std::int32_t kMaskId = 2;
inline constexpr std::int32_t kFirstTokenId = 3;

class Vocab {
 public:
  Vocab();
  explicit Vocab(std::vector<std::string> tokens_by_id);

  std::size_t size() const { return tokens_.size(); }
  std::int32_t id(const std::string& token) const;
  const std::string& token(std::int32_t id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> index_;
};

std::vector<std::string> split_tokens(const std::string& func);
// Most frequent tokens first, ties broken lexicographically, capped so the
// whole vocabulary (reserved ids included) has at most max_size entries.
Vocab build_vocab(const std::vector<Dataset>& datasets, std::size_t max_size);
// Truncated to max_len; an empty snippet becomes a single unknown token.
std::vector<std::int32_t> tokenize(const Vocab& vocab, const std::string& func, std::size_t max_len);

// ---- splitting -------------------------------------------------------------

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct SplitResult {
  Dataset train;
  Dataset val;
  Dataset test;
  std::vector<std::string> warnings;
};

// Stratified, seeded partition. Classes with fewer than three records are
// pooled and split unstratified, with a warning.
SplitResult split(const Dataset& dataset, const SplitRatios& ratios, std::uint64_t seed);

}  // namespace yoto
