#include "nutrifuse/sample_source.hpp"

#include <utility>

#include "nutrifuse/errors.hpp"

namespace nf {

ManifestSource::ManifestSource(DatasetManifest manifest) : manifest_(std::move(manifest)) {
  manifest_.validate();
}

const Sample& ManifestSource::sample(size_t i) const {
  if (i >= manifest_.samples.size()) throw IndexError("sample index out of range");
  return manifest_.samples[i];
}

Image ManifestSource::image(size_t i) const {
  return load_image(manifest_.resolve_image(sample(i)));
}

InMemorySource::InMemorySource(std::vector<Sample> samples, std::vector<Image> images)
    : samples_(std::move(samples)), images_(std::move(images)) {
  if (samples_.size() != images_.size())
    throw LengthMismatchError("sample/image count mismatch");
}

void InMemorySource::add(Sample sample, Image image) {
  samples_.push_back(std::move(sample));
  images_.push_back(std::move(image));
}

const Sample& InMemorySource::sample(size_t i) const {
  if (i >= samples_.size()) throw IndexError("sample index out of range");
  return samples_[i];
}

Image InMemorySource::image(size_t i) const {
  if (i >= images_.size()) throw IndexError("sample index out of range");
  return images_[i];
}

}  // namespace nf
