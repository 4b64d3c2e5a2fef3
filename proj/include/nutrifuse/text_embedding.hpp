#pragma once

#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "nutrifuse/tensor.hpp"

namespace nf {

class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual int64_t dim() const = 0;
  virtual std::string name() const = 0;
  virtual Tensor encode(const std::string& canonical) = 0;  // (E,)
};

// deterministic pseudo-random unit vectors; lets the full suite run offline
class HashStubEncoder : public TextEncoder {
 public:
  explicit HashStubEncoder(int64_t dim = 512, uint64_t seed = 0x7e57e4c0de);
  int64_t dim() const override { return dim_; }
  std::string name() const override;
  Tensor encode(const std::string& canonical) override;

 private:
  int64_t dim_;
  uint64_t seed_;
};

// adapter over a table of precomputed embeddings exported from a real
// pretrained text encoder; throws EncoderUnavailableError on unknown terms
class TableEncoder : public TextEncoder {
 public:
  explicit TableEncoder(const std::string& table_path);
  int64_t dim() const override { return dim_; }
  std::string name() const override;
  Tensor encode(const std::string& canonical) override;

 private:
  int64_t dim_ = 0;
  std::string path_;
  std::unordered_map<std::string, Tensor> table_;
};

// binary on-disk table of (string, E doubles); also the TableEncoder format
class EmbeddingCache {
 public:
  EmbeddingCache(std::string path, int64_t dim);  // loads existing entries

  std::optional<Tensor> get(const std::string& key) const;
  void put(const std::string& key, const Tensor& value);  // appends to disk
  int64_t dim() const { return dim_; }
  size_t size() const;

  static void write_table(const std::string& path, int64_t dim,
                          const std::vector<std::pair<std::string, Tensor>>& entries);

 private:
  std::string path_;
  int64_t dim_;
  mutable std::mutex mu_;
  std::unordered_map<std::string, Tensor> mem_;
};

Tensor embed_ingredient(const std::string& name, TextEncoder& encoder,
                        EmbeddingCache* cache = nullptr);

Tensor aggregate_ingredients(const std::vector<std::string>& ingredients, TextEncoder& encoder,
                             EmbeddingCache* cache = nullptr, bool l2_normalize_terms = false);

struct ProjectorParams {
  Tensor weight;  // (C, E)
  Tensor bias;    // (C,)
};

// max(0, W t + b)
Tensor project_ingredient_feature(const Tensor& t, const ProjectorParams& params);

}  // namespace nf
