#pragma once

#include <cstdint>
#include <string>

namespace nf {

// tiny_cnn is a desk-scale backbone for tests and examples; the other four
// are the full-size architectures
enum class BackboneKind { resnet50, resnet101, inception_v3, vit_base16, tiny_cnn };

const char* to_string(BackboneKind k);
BackboneKind backbone_from_string(const std::string& s);

struct FusionConfig {
  BackboneKind backbone = BackboneKind::resnet50;
  std::string injection_site;  // resnet: block1..block4; inception: post_maxpool2,
                               // mixed6e_with_aux, mixed6e_no_aux, post_mixed7c;
                               // vit: extra_token; tiny: block1, block2
  int input_resolution = 224;
  bool fuse_auxiliary = false;  // inception only; must match the _with_aux site
  int64_t embed_dim = 512;      // E of the configured text encoder
  bool l2_normalize_terms = false;

  static FusionConfig defaults(BackboneKind k, int64_t embed_dim = 512);
  static int default_resolution(BackboneKind k);
  static const char* default_site(BackboneKind k);

  void validate() const;
  int64_t injection_dim() const;  // C (or D) at the configured site
};

}  // namespace nf
