#include "gliclass/encoder.hpp"

#include <cmath>

namespace gliclass {

namespace {

constexpr double kMaskPenalty = -1e9;  // exp underflows to exact 0 in float64

// Additive attention mask [B,Lq,Lk]: 0 where the key is valid, -1e9 otherwise.
Tensor additive_mask(const IntMat& key_mask, int lq) {
  const int b = key_mask.rows;
  const int lk = key_mask.cols;
  Tensor m = Tensor::zeros({b, lq, lk});
  auto& v = m.values();
  for (int bi = 0; bi < b; ++bi) {
    for (int j = 0; j < lk; ++j) {
      if (key_mask.at(bi, j) == 0) {
        for (int i = 0; i < lq; ++i) {
          v[(static_cast<int64_t>(bi) * lq + i) * lk + j] = kMaskPenalty;
        }
      }
    }
  }
  return m;
}

// Multi-head scaled dot-product attention with additive key mask.
Tensor attention(const Tensor& xq, const Tensor& xkv, const Tensor& mask_add,
                 const WeightResolver& w, const std::string& p, int n_heads) {
  const int d = xq.dim(-1);
  const int dh = d / n_heads;
  Tensor q = add_bias(matmul(xq, w(p + ".q.weight")), w(p + ".q.bias"));
  Tensor k = add_bias(matmul(xkv, w(p + ".k.weight")), w(p + ".k.bias"));
  Tensor v = add_bias(matmul(xkv, w(p + ".v.weight")), w(p + ".v.bias"));
  std::vector<Tensor> ctx;
  ctx.reserve(n_heads);
  for (int h = 0; h < n_heads; ++h) {
    Tensor qh = slice_last(q, h * dh, dh);
    Tensor kh = slice_last(k, h * dh, dh);
    Tensor vh = slice_last(v, h * dh, dh);
    Tensor scores = mul_scalar(matmul(qh, transpose_last2(kh)), 1.0 / std::sqrt(dh));
    Tensor att = softmax(add(scores, mask_add));
    ctx.push_back(matmul(att, vh));
  }
  return add_bias(matmul(concat_last(ctx), w(p + ".o.weight")), w(p + ".o.bias"));
}

Tensor ffn(const Tensor& x, const WeightResolver& w, const std::string& p) {
  Tensor h = gelu(add_bias(matmul(x, w(p + ".fc1.weight")), w(p + ".fc1.bias")));
  return add_bias(matmul(h, w(p + ".fc2.weight")), w(p + ".fc2.bias"));
}

Tensor ln(const Tensor& x, const WeightResolver& w, const std::string& p) {
  return layer_norm(x, w(p + ".gain"), w(p + ".bias"));
}

void init_attention(ParamStore& s, const std::string& p, int d, Rng& rng) {
  for (const char* m : {"q", "k", "v", "o"}) {
    s.declare(p + "." + m + ".weight", {d, d}, rng, 0.02);
    s.declare(p + "." + m + ".bias", {d}, rng, 0.0);
  }
}

void init_ln(ParamStore& s, const std::string& p, int d) {
  s.declare_full(p + ".gain", {d}, 1.0);
  s.declare_full(p + ".bias", {d}, 0.0);
}

void init_ffn(ParamStore& s, const std::string& p, int d, int f, Rng& rng) {
  s.declare(p + ".fc1.weight", {d, f}, rng, 0.02);
  s.declare(p + ".fc1.bias", {f}, rng, 0.0);
  s.declare(p + ".fc2.weight", {f, d}, rng, 0.02);
  s.declare(p + ".fc2.bias", {d}, rng, 0.0);
}

void check_ids(const IntMat& ids, int vocab_size) {
  for (int id : ids.v) {
    if (id < 0 || id >= vocab_size) {
      throw DataError("token id " + std::to_string(id) + " out of vocab range");
    }
  }
}

void check_mask(const IntMat& mask) {
  for (int m : mask.v) {
    if (m != 0 && m != 1) throw ContractError("attention mask must be 0/1");
  }
}

}  // namespace

void EncoderConfig::validate() const {
  if (vocab_size <= 0) throw ConfigError("encoder: vocab_size must be positive");
  if (d_model <= 0 || n_heads <= 0 || n_layers <= 0 || d_ff <= 0) {
    throw ConfigError("encoder: dimensions must be positive");
  }
  if (d_model % n_heads != 0) throw ConfigError("encoder: d_model must be divisible by n_heads");
  if (max_seq_len <= 0) throw ConfigError("encoder: max_seq_len must be positive");
}

Tensor positional_encoding(int l, int d) {
  Tensor pe = Tensor::zeros({l, d});
  auto& v = pe.values();
  for (int pos = 0; pos < l; ++pos) {
    for (int i = 0; 2 * i < d; ++i) {
      const double angle = pos / std::pow(10000.0, (2.0 * i) / d);
      v[static_cast<int64_t>(pos) * d + 2 * i] = std::sin(angle);
      if (2 * i + 1 < d) v[static_cast<int64_t>(pos) * d + 2 * i + 1] = std::cos(angle);
    }
  }
  return pe;
}

void init_encoder_params(ParamStore& store, const EncoderConfig& cfg, const std::string& prefix,
                         Rng& rng) {
  cfg.validate();
  store.declare(prefix + ".tok_emb.weight", {cfg.vocab_size, cfg.d_model}, rng, 0.02);
  for (int k = 0; k < cfg.n_layers; ++k) {
    const std::string p = prefix + ".layers." + std::to_string(k);
    init_ln(store, p + ".ln1", cfg.d_model);
    init_attention(store, p + ".attn", cfg.d_model, rng);
    init_ln(store, p + ".ln2", cfg.d_model);
    init_ffn(store, p + ".ffn", cfg.d_model, cfg.d_ff, rng);
  }
  init_ln(store, prefix + ".final_ln", cfg.d_model);
}

void init_decoder_params(ParamStore& store, const EncoderConfig& cfg, int n_dec_layers,
                         const std::string& prefix, Rng& rng) {
  for (int k = 0; k < n_dec_layers; ++k) {
    const std::string p = prefix + ".layers." + std::to_string(k);
    init_ln(store, p + ".ln1", cfg.d_model);
    init_attention(store, p + ".attn", cfg.d_model, rng);
    init_ln(store, p + ".ln_cross", cfg.d_model);
    init_attention(store, p + ".cross", cfg.d_model, rng);
    init_ln(store, p + ".ln2", cfg.d_model);
    init_ffn(store, p + ".ffn", cfg.d_model, cfg.d_ff, rng);
  }
  if (n_dec_layers > 0) init_ln(store, prefix + ".final_ln", cfg.d_model);
}

EncoderOutput encode_from_embeddings(const EncoderConfig& cfg, const WeightResolver& w,
                                     const std::string& prefix, const Tensor& emb,
                                     const IntMat& attn_mask) {
  const int b = emb.dim(0);
  const int l = emb.dim(1);
  if (l > cfg.max_seq_len) {
    throw DataError("sequence length " + std::to_string(l) + " exceeds max_seq_len " +
                    std::to_string(cfg.max_seq_len));
  }
  check_mask(attn_mask);
  if (attn_mask.rows != b || attn_mask.cols != l) {
    throw ShapeError("encode: mask shape mismatch");
  }

  Tensor pe = positional_encoding(l, cfg.d_model);
  Tensor pe_b = Tensor::zeros({b, l, cfg.d_model});
  for (int bi = 0; bi < b; ++bi) {
    std::copy(pe.values().begin(), pe.values().end(),
              pe_b.values().begin() + static_cast<int64_t>(bi) * l * cfg.d_model);
  }
  // sqrt(D) embedding scale keeps token content from being drowned by the
  // unit-amplitude sinusoidal table at this init scale
  Tensor h = add(mul_scalar(emb, std::sqrt(static_cast<double>(cfg.d_model))), pe_b);
  Tensor mask_add = additive_mask(attn_mask, l);

  EncoderOutput out;
  out.attn_mask = attn_mask;
  for (int k = 0; k < cfg.n_layers; ++k) {
    const std::string p = prefix + ".layers." + std::to_string(k);
    Tensor h1 = ln(h, w, p + ".ln1");
    h = add(h, attention(h1, h1, mask_add, w, p + ".attn", cfg.n_heads));
    h = add(h, ffn(ln(h, w, p + ".ln2"), w, p + ".ffn"));
    if (k < cfg.n_layers - 1) out.layer_states.push_back(h);
  }
  out.final_hidden = ln(h, w, prefix + ".final_ln");
  out.layer_states.push_back(out.final_hidden);
  return out;
}

EncoderOutput encode(const EncoderConfig& cfg, const WeightResolver& w, const std::string& prefix,
                     const IntMat& token_ids, const IntMat& attn_mask) {
  check_ids(token_ids, cfg.vocab_size);
  Tensor emb = embedding_lookup(w(prefix + ".tok_emb.weight"), token_ids);
  return encode_from_embeddings(cfg, w, prefix, emb, attn_mask);
}

Tensor decode_with_cross_attention(const EncoderConfig& cfg, int n_dec_layers,
                                   const WeightResolver& w, const std::string& prefix,
                                   const IntMat& class_ids, const IntMat& class_mask,
                                   const EncoderOutput& enc_out) {
  if (!enc_out.final_hidden.defined() || enc_out.final_hidden.dim(0) != class_ids.rows) {
    throw ContractError("decode: encoder output batch mismatch");
  }
  check_ids(class_ids, cfg.vocab_size);
  check_mask(class_mask);
  const int b = class_ids.rows;
  const int lc = class_ids.cols;
  if (lc == 0) return Tensor::zeros({b, 0, cfg.d_model});

  Tensor h = embedding_lookup(w("encoder.tok_emb.weight"), class_ids);
  if (n_dec_layers == 0) return h;

  Tensor self_mask = additive_mask(class_mask, lc);
  Tensor cross_mask = additive_mask(enc_out.attn_mask, lc);
  for (int k = 0; k < n_dec_layers; ++k) {
    const std::string p = prefix + ".layers." + std::to_string(k);
    Tensor h1 = ln(h, w, p + ".ln1");
    h = add(h, attention(h1, h1, self_mask, w, p + ".attn", cfg.n_heads));
    h = add(h, attention(ln(h, w, p + ".ln_cross"), enc_out.final_hidden, cross_mask, w,
                         p + ".cross", cfg.n_heads));
    h = add(h, ffn(ln(h, w, p + ".ln2"), w, p + ".ffn"));
  }
  return ln(h, w, prefix + ".final_ln");
}

}  // namespace gliclass
