#pragma once

#include <vector>

#include "nutrifuse/data_model.hpp"
#include "nutrifuse/image.hpp"

namespace nf {

// uniform access to samples and their decoded images, so training and
// evaluation run identically on disk-backed manifests and in-memory fixtures
class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual size_t size() const = 0;
  virtual const Sample& sample(size_t i) const = 0;
  virtual Image image(size_t i) const = 0;
};

class ManifestSource : public SampleSource {
 public:
  explicit ManifestSource(DatasetManifest manifest);
  size_t size() const override { return manifest_.samples.size(); }
  const Sample& sample(size_t i) const override;
  Image image(size_t i) const override;
  const DatasetManifest& manifest() const { return manifest_; }

 private:
  DatasetManifest manifest_;
};

class InMemorySource : public SampleSource {
 public:
  InMemorySource() = default;
  InMemorySource(std::vector<Sample> samples, std::vector<Image> images);
  void add(Sample sample, Image image);
  size_t size() const override { return samples_.size(); }
  const Sample& sample(size_t i) const override;
  Image image(size_t i) const override;

 private:
  std::vector<Sample> samples_;
  std::vector<Image> images_;
};

}  // namespace nf
