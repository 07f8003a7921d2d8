#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "gliclass/assembly.hpp"
#include "gliclass/config.hpp"
#include "gliclass/heads.hpp"
#include "gliclass/params.hpp"

namespace gliclass {

struct Model {
  ModelConfig config;
  Vocab vocab;
  ParamStore params;
  LoraSpec lora;  // inactive unless adapters were applied

  WeightResolver resolver() const {
    return WeightResolver{&params, lora.active() ? &lora : nullptr};
  }

  ForwardResult forward(const std::vector<std::string>& texts,
                        const std::vector<std::vector<std::string>>& labels) const {
    return forward_variant(config, resolver(), vocab, texts, labels);
  }
};

// Fresh model with all parameter groups the variant needs (plus the value
// head, so any checkpoint can enter PPO training).
Model init_model(const ModelConfig& cfg, const Vocab& vocab, uint64_t seed);

// Deep copy: parameter storage is duplicated, not shared.
Model clone_model(const Model& m);

// Probabilities (sigmoid of logits) for a single text against candidate labels.
std::vector<double> predict_probs(const Model& m, const std::string& text,
                                  const std::vector<std::string>& labels);

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Binary checkpoint container: "GLCF" magic, version, JSON descriptor
// (config, vocab, lora, tensor table), then raw float64 little-endian blobs.
// Round trips are bit-exact.
void save_checkpoint(const Model& m, const std::string& path);
Model load_checkpoint(const std::string& path);

// Writes numbered checkpoints and keeps only the newest `keep` files.
class CheckpointManager {
 public:
  CheckpointManager(std::string dir, int keep);
  std::string save(const Model& m, int64_t step);
  const std::vector<std::string>& kept() const { return kept_; }

 private:
  std::string dir_;
  int keep_;
  std::vector<std::string> kept_;
};

}  // namespace gliclass
