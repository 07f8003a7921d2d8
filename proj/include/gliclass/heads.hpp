#pragma once

#include <string>
#include <utility>
#include <vector>

#include "gliclass/assembly.hpp"
#include "gliclass/config.hpp"
#include "gliclass/params.hpp"

namespace gliclass {

// Logit sentinel for invalid class slots; sigmoid() underflows to exact 0.
constexpr double kInvalidLogit = -1e30;

// Pools hidden states over the per-example text span. Fully masked spans
// yield zero vectors (they contribute nothing downstream).
Tensor pool_text(const Tensor& h, const std::vector<std::pair<int, int>>& spans,
                 const IntMat& attn_mask, Pooling strategy, const WeightResolver& w,
                 const std::string& query_name = "head.pool.query");

struct ClassFeatures {
  Tensor features;  // [B,C,D], zero rows for absent labels
  IntMat valid;     // [B,C]
};

// Row k = hidden state at the k-th LABEL marker.
ClassFeatures extract_class_features(
    const Tensor& h, const std::vector<std::vector<std::pair<int, int>>>& class_positions,
    int c_max = -1);

// Eq-1-style dot scorer (t.c / tau) or a small MLP over [t; c]. Invalid
// classes receive kInvalidLogit.
Tensor score(const Tensor& text, const Tensor& classes, const IntMat& valid,
             const ScorerConfig& cfg, const WeightResolver& w);

// Squeeze-excitation over the per-layer states: Z[b,k] = mean_L(squeeze(U_k)),
// S = sigmoid(W2 relu(W1 Z^T))^T, output = proj(sum_k S[:,k] * U_k).
Tensor reweight_layers(const std::vector<Tensor>& layer_states, const WeightResolver& w,
                       const std::string& prefix = "head.reweight");

// Per-token self-identification loss over the row-normalized similarity
// matrix; masked tokens are excluded from the mean (columns stay).
Tensor token_contrastive_loss(const Tensor& embeddings, const IntMat& token_mask);

void init_head_params(ParamStore& store, const ModelConfig& cfg, Rng& rng);

struct ForwardResult {
  Tensor logits;             // [B,C]
  IntMat class_valid;        // [B,C]
  Tensor pooled_text;        // [B,D]
  Tensor used_hidden;        // hidden the heads consumed
  EncoderOutput enc;         // text (or joint) encoder output
  AssembledInput assembled;  // joint assembly for uni/fused, text-only otherwise
};

ForwardResult forward_variant(const ModelConfig& cfg, const WeightResolver& w, const Vocab& vocab,
                              const std::vector<std::string>& texts,
                              const std::vector<std::vector<std::string>>& labels);

// One embedding per label string from the class encoder (mean-pooled final
// hidden state). Used by the bi and fused variants.
Tensor encode_label(const ModelConfig& cfg, const WeightResolver& w, const Vocab& vocab,
                    const std::string& label);

// Fused forward with externally supplied per-example label embeddings
// ([B,C,D], rows beyond the example's label count ignored). Passing the text
// embedder's own <<LABEL>> row for every slot reproduces the uni forward.
ForwardResult fused_forward_with_embeddings(const ModelConfig& cfg, const WeightResolver& w,
                                            const Vocab& vocab,
                                            const std::vector<std::string>& texts,
                                            const std::vector<std::vector<std::string>>& labels,
                                            const Tensor& label_embeddings);

}  // namespace gliclass
