#pragma once

#include <filesystem>
#include <string>

#include <unistd.h>

#include "yoto/checkpoint.hpp"
#include "yoto/corpus.hpp"
#include "yoto/encoder.hpp"
#include "yoto/error.hpp"
#include "yoto/numkern.hpp"

namespace test_support {

// Scratch directory removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("yoto_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline yoto::Tensor random_tensor(const yoto::Shape& shape, std::uint64_t seed, float stddev = 1.0f) {
  yoto::SeededRng rng(seed);
  return yoto::kern::rng_normal(rng, shape, stddev);
}

inline yoto::ModelConfig tiny_config(int vocab = 20) {
  return {.vocab_size = vocab, .d_model = 8, .n_heads = 2, .n_layers = 1, .d_ff = 16, .max_len = 12};
}

// A pretrained-role checkpoint with random weights and a vocabulary that
// covers the synthetic corpus' most common tokens.
inline yoto::Checkpoint random_base(const yoto::ModelConfig& config, std::uint64_t seed) {
  yoto::SeededRng rng(seed);
  yoto::Checkpoint c;
  c.config = config;
  c.params = yoto::init_params(config, {}, rng);
  c.meta.role = yoto::Role::pretrained;
  c.meta.seed = seed;
  std::vector<std::string> vocab = {"<pad>", "<unk>", "<mask>"};
  for (int i = 3; i < config.vocab_size; ++i) vocab.push_back("t" + std::to_string(i));
  c.meta.vocab = vocab;
  return c;
}

template <typename F>
yoto::ErrorKind error_kind_of(F&& f) {
  try {
    f();
  } catch (const yoto::Error& e) {
    return e.kind();
  }
  throw std::runtime_error("expected a yoto::Error");
}

}  // namespace test_support
