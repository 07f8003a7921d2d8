#pragma once

#include <string>

#include "gliclass/encoder.hpp"

namespace gliclass {

enum class Variant { uni, bi, fused_bi, enc_dec };
enum class Pooling { first, mean, attention };

Variant variant_from_string(const std::string& s);
std::string to_string(Variant v);
Pooling pooling_from_string(const std::string& s);
std::string to_string(Pooling p);

struct ScorerConfig {
  enum class Kind { dot, mlp };
  Kind kind = Kind::dot;
  double temperature = 1.0;  // dot scorer only
  int mlp_hidden = 32;

  void validate() const {
    if (kind == Kind::dot && temperature <= 0.0) {
      throw ConfigError("scorer: temperature must be positive");
    }
    if (kind == Kind::mlp && mlp_hidden <= 0) {
      throw ConfigError("scorer: mlp_hidden must be positive");
    }
  }
};

ScorerConfig::Kind scorer_kind_from_string(const std::string& s);
std::string to_string(ScorerConfig::Kind k);

struct ModelConfig {
  Variant variant = Variant::uni;
  EncoderConfig encoder;
  int n_decoder_layers = 1;  // enc_dec variant
  Pooling pooling = Pooling::first;
  ScorerConfig scorer;
  bool layer_reweighting = false;
  int max_len = 1024;

  void validate() const {
    encoder.validate();
    scorer.validate();
    if (max_len <= 0 || max_len > encoder.max_seq_len) {
      throw ConfigError("model: max_len must be in [1, max_seq_len]");
    }
    if (variant == Variant::enc_dec && n_decoder_layers < 0) {
      throw ConfigError("model: n_decoder_layers must be >= 0");
    }
  }
};

}  // namespace gliclass
