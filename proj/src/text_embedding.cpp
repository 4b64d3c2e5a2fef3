#include "nutrifuse/text_embedding.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "nutrifuse/errors.hpp"
#include "nutrifuse/rng.hpp"

namespace nf {

namespace {

constexpr char kTableMagic[4] = {'N', 'F', 'E', 'C'};
constexpr uint32_t kTableVersion = 1;

void write_table_header(std::ostream& os, int64_t dim) {
  os.write(kTableMagic, 4);
  const uint32_t version = kTableVersion;
  os.write(reinterpret_cast<const char*>(&version), sizeof(version));
  const uint32_t d = static_cast<uint32_t>(dim);
  os.write(reinterpret_cast<const char*>(&d), sizeof(d));
}

// returns dimension, or nullopt when the file does not exist
std::optional<int64_t> read_table(const std::string& path,
                                  std::unordered_map<std::string, Tensor>& out) {
  std::ifstream is(path, std::ios::binary);
  if (!is) return std::nullopt;
  char magic[4];
  is.read(magic, 4);
  uint32_t version = 0, dim = 0;
  is.read(reinterpret_cast<char*>(&version), sizeof(version));
  is.read(reinterpret_cast<char*>(&dim), sizeof(dim));
  if (!is || std::memcmp(magic, kTableMagic, 4) != 0 || version != kTableVersion || dim == 0)
    throw IoError("not an embedding table: " + path);
  for (;;) {
    uint32_t len = 0;
    is.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (is.eof()) break;
    if (!is) throw IoError("truncated embedding table: " + path);
    std::string key(len, '\0');
    is.read(key.data(), len);
    Tensor v({static_cast<int64_t>(dim)});
    is.read(reinterpret_cast<char*>(v.data()), sizeof(double) * dim);
    if (!is) throw IoError("truncated embedding table: " + path);
    out[key] = std::move(v);
  }
  return static_cast<int64_t>(dim);
}

void append_entry(std::ostream& os, const std::string& key, const Tensor& value) {
  const uint32_t len = static_cast<uint32_t>(key.size());
  os.write(reinterpret_cast<const char*>(&len), sizeof(len));
  os.write(key.data(), len);
  os.write(reinterpret_cast<const char*>(value.data()),
           sizeof(double) * static_cast<size_t>(value.numel()));
}

}  // namespace

HashStubEncoder::HashStubEncoder(int64_t dim, uint64_t seed) : dim_(dim), seed_(seed) {
  if (dim <= 0) throw ConfigError("encoder dimension must be positive");
}

std::string HashStubEncoder::name() const {
  return "hash_stub_d" + std::to_string(dim_);
}

Tensor HashStubEncoder::encode(const std::string& canonical) {
  if (canonical.empty()) throw PreconditionError("cannot embed an empty ingredient name");
  Rng rng = Rng::from_parts(seed_, fnv1a64(canonical));
  Tensor v({dim_});
  double norm_sq = 0.0;
  for (int64_t i = 0; i < dim_; ++i) {
    v[i] = rng.normal();
    norm_sq += v[i] * v[i];
  }
  const double inv = 1.0 / std::sqrt(norm_sq);
  for (int64_t i = 0; i < dim_; ++i) v[i] *= inv;
  return v;
}

TableEncoder::TableEncoder(const std::string& table_path) : path_(table_path) {
  auto dim = read_table(table_path, table_);
  if (!dim)
    throw EncoderUnavailableError("embedding table not found: " + table_path +
                                  " (export one from a pretrained text encoder)");
  dim_ = *dim;
}

std::string TableEncoder::name() const {
  return "table:" + std::filesystem::path(path_).filename().string();
}

Tensor TableEncoder::encode(const std::string& canonical) {
  if (canonical.empty()) throw PreconditionError("cannot embed an empty ingredient name");
  auto it = table_.find(canonical);
  if (it == table_.end())
    throw EncoderUnavailableError("no embedding for '" + canonical + "' in " + path_);
  return it->second;
}

EmbeddingCache::EmbeddingCache(std::string path, int64_t dim) : path_(std::move(path)), dim_(dim) {
  if (dim <= 0) throw ConfigError("cache dimension must be positive");
  auto file_dim = read_table(path_, mem_);
  if (file_dim && *file_dim != dim_)
    throw ConfigMismatchError("embedding cache " + path_ + " has dimension " +
                              std::to_string(*file_dim) + ", encoder expects " +
                              std::to_string(dim_));
  if (!file_dim) {
    std::ofstream os(path_, std::ios::binary);
    if (!os) throw IoError("cannot create embedding cache: " + path_);
    write_table_header(os, dim_);
  }
}

std::optional<Tensor> EmbeddingCache::get(const std::string& key) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = mem_.find(key);
  if (it == mem_.end()) return std::nullopt;
  return it->second;
}

void EmbeddingCache::put(const std::string& key, const Tensor& value) {
  if (value.numel() != dim_) throw ShapeMismatchError("cache entry dimension mismatch");
  std::lock_guard<std::mutex> lock(mu_);
  if (mem_.count(key)) return;
  mem_[key] = value;
  std::ofstream os(path_, std::ios::binary | std::ios::app);
  if (!os) throw IoError("cannot append to embedding cache: " + path_);
  append_entry(os, key, value);
  if (!os) throw IoError("failed writing embedding cache: " + path_);
}

size_t EmbeddingCache::size() const {
  std::lock_guard<std::mutex> lock(mu_);
  return mem_.size();
}

void EmbeddingCache::write_table(const std::string& path, int64_t dim,
                                 const std::vector<std::pair<std::string, Tensor>>& entries) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write embedding table: " + path);
  write_table_header(os, dim);
  for (const auto& [key, value] : entries) {
    if (value.numel() != dim) throw ShapeMismatchError("table entry dimension mismatch");
    append_entry(os, key, value);
  }
  if (!os) throw IoError("failed writing embedding table: " + path);
}

Tensor embed_ingredient(const std::string& name, TextEncoder& encoder, EmbeddingCache* cache) {
  if (name.empty()) throw PreconditionError("cannot embed an empty ingredient name");
  if (cache) {
    if (auto hit = cache->get(name)) return *hit;
  }
  Tensor v = encoder.encode(name);
  if (v.numel() != encoder.dim()) throw ShapeMismatchError("encoder returned wrong dimension");
  if (!v.all_finite()) throw ShapeMismatchError("encoder returned non-finite embedding");
  if (cache) cache->put(name, v);
  return v;
}

Tensor aggregate_ingredients(const std::vector<std::string>& ingredients, TextEncoder& encoder,
                             EmbeddingCache* cache, bool l2_normalize_terms) {
  if (ingredients.empty()) throw EmptyIngredientListError("cannot aggregate zero ingredients");
  Tensor sum({encoder.dim()});
  for (const std::string& ing : ingredients) {
    Tensor v = embed_ingredient(ing, encoder, cache);
    if (l2_normalize_terms) {
      double norm_sq = 0.0;
      for (int64_t i = 0; i < v.numel(); ++i) norm_sq += v[i] * v[i];
      if (norm_sq > 0.0) {
        const double inv = 1.0 / std::sqrt(norm_sq);
        for (int64_t i = 0; i < v.numel(); ++i) v[i] *= inv;
      }
    }
    for (int64_t i = 0; i < sum.numel(); ++i) sum[i] += v[i];
  }
  const double inv = 1.0 / static_cast<double>(ingredients.size());
  for (int64_t i = 0; i < sum.numel(); ++i) sum[i] *= inv;
  return sum;
}

Tensor project_ingredient_feature(const Tensor& t, const ProjectorParams& params) {
  if (params.weight.ndim() != 2 || t.ndim() != 1 || params.bias.ndim() != 1)
    throw ShapeMismatchError("projector expects matrix weight and vector inputs");
  const int64_t c = params.weight.size(0), e = params.weight.size(1);
  if (t.size(0) != e || params.bias.size(0) != c)
    throw ShapeMismatchError("projector shapes inconsistent: W " + params.weight.shape_str() +
                             " b " + params.bias.shape_str() + " t " + t.shape_str());
  Tensor out({c});
  for (int64_t i = 0; i < c; ++i) {
    double acc = params.bias[i];
    const double* row = params.weight.data() + i * e;
    for (int64_t j = 0; j < e; ++j) acc += row[j] * t[j];
    out[i] = acc > 0.0 ? acc : 0.0;
  }
  return out;
}

}  // namespace nf
