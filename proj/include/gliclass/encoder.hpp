#pragma once

#include <string>
#include <vector>

#include "gliclass/params.hpp"
#include "gliclass/tensor.hpp"

namespace gliclass {

struct EncoderConfig {
  int vocab_size = 0;
  int d_model = 64;
  int n_heads = 2;
  int n_layers = 2;
  int d_ff = 128;
  int max_seq_len = 1024;
  double dropout_rate = 0.0;  // fixed 0 at this scale; kept for config parity

  void validate() const;
};

struct EncoderOutput {
  Tensor final_hidden;               // [B,L,D]
  std::vector<Tensor> layer_states;  // n_layers entries; last == final_hidden
  IntMat attn_mask;                  // carried for cross-attention masking
};

// Deterministic sinusoidal table [L,D]: pe[p,2i]=sin(p/10000^(2i/D)),
// pe[p,2i+1]=cos(p/10000^(2i/D)).
Tensor positional_encoding(int l, int d);

// Declares all parameters of a pre-LN transformer encoder under `prefix.`
// (weights std 0.02, gains 1, biases 0).
void init_encoder_params(ParamStore& store, const EncoderConfig& cfg, const std::string& prefix,
                         Rng& rng);
// Decoder blocks add a cross-attention sublayer; token embeddings are shared
// with the text encoder ("encoder.tok_emb.weight").
void init_decoder_params(ParamStore& store, const EncoderConfig& cfg, int n_dec_layers,
                         const std::string& prefix, Rng& rng);

// Runs the encoder stack on precomputed token embeddings (positional encoding
// is added here). Entry point for the fused bi-encoder, which overwrites
// LABEL-marker rows of the embedding sequence before encoding.
EncoderOutput encode_from_embeddings(const EncoderConfig& cfg, const WeightResolver& w,
                                     const std::string& prefix, const Tensor& emb,
                                     const IntMat& attn_mask);

EncoderOutput encode(const EncoderConfig& cfg, const WeightResolver& w, const std::string& prefix,
                     const IntMat& token_ids, const IntMat& attn_mask);

// Decodes class-query tokens against encoded text memory. With zero decoder
// layers the output is exactly the class-query embeddings.
Tensor decode_with_cross_attention(const EncoderConfig& cfg, int n_dec_layers,
                                   const WeightResolver& w, const std::string& prefix,
                                   const IntMat& class_ids, const IntMat& class_mask,
                                   const EncoderOutput& enc_out);

}  // namespace gliclass
