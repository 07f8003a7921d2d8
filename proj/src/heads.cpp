#include "gliclass/heads.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace gliclass {

namespace {

constexpr double kSpanMaskPenalty = -1e9;

IntMat span_mask(const std::vector<std::pair<int, int>>& spans, const IntMat& attn_mask) {
  IntMat m(attn_mask.rows, attn_mask.cols, 0);
  for (int b = 0; b < attn_mask.rows; ++b) {
    const auto& [start, end] = spans[b];
    if (start >= end) throw ContractError("pool_text: empty text span");
    if (start < 0 || end > attn_mask.cols) throw ContractError("pool_text: span out of range");
    for (int j = start; j < end; ++j) m.at(b, j) = attn_mask.at(b, j);
  }
  return m;
}

Tensor to_tensor(const IntMat& m) {
  Tensor t = Tensor::zeros({m.rows, m.cols});
  for (size_t i = 0; i < m.v.size(); ++i) t.values()[i] = m.v[i];
  return t;
}

// 1 where the example has at least one pooled token, else 0.
Tensor validity_scale(const IntMat& m) {
  Tensor s = Tensor::zeros({m.rows});
  for (int b = 0; b < m.rows; ++b) {
    int n = 0;
    for (int j = 0; j < m.cols; ++j) n += m.at(b, j);
    s.values()[b] = n > 0 ? 1.0 : 0.0;
  }
  return s;
}

}  // namespace

Tensor pool_text(const Tensor& h, const std::vector<std::pair<int, int>>& spans,
                 const IntMat& attn_mask, Pooling strategy, const WeightResolver& w,
                 const std::string& query_name) {
  if (h.ndim() != 3) throw ShapeError("pool_text: expected [B,L,D]");
  const int b = h.dim(0);
  const int d = h.dim(2);
  if (static_cast<int>(spans.size()) != b) throw ContractError("pool_text: span count mismatch");
  IntMat sm = span_mask(spans, attn_mask);

  switch (strategy) {
    case Pooling::first: {
      std::vector<std::vector<int>> firsts(b);
      Tensor valid = Tensor::zeros({b});
      for (int bi = 0; bi < b; ++bi) {
        firsts[bi] = {spans[bi].first};
        valid.values()[bi] = sm.at(bi, spans[bi].first);
      }
      Tensor g = reshape(gather_positions(h, firsts, 1), {b, d});
      return scale_per_example(g, valid);
    }
    case Pooling::mean: {
      Tensor x = mul_rows(h, to_tensor(sm));
      Tensor s = sum_axis(x, 1);  // [B,D]
      Tensor inv = Tensor::zeros({b});
      for (int bi = 0; bi < b; ++bi) {
        int n = 0;
        for (int j = 0; j < sm.cols; ++j) n += sm.at(bi, j);
        inv.values()[bi] = n > 0 ? 1.0 / n : 0.0;
      }
      return scale_per_example(s, inv);
    }
    case Pooling::attention: {
      Tensor q = w(query_name);  // [D,1]
      Tensor scores = reshape(matmul(h, q), {b, attn_mask.cols});
      scores = mul_scalar(scores, 1.0 / std::sqrt(static_cast<double>(d)));
      scores = select_where(sm, scores, kSpanMaskPenalty);
      Tensor att = softmax(scores, -1);
      Tensor pooled = sum_axis(mul_rows(h, att), 1);
      return scale_per_example(pooled, validity_scale(sm));
    }
  }
  throw ContractError("pool_text: unknown strategy");
}

ClassFeatures extract_class_features(
    const Tensor& h, const std::vector<std::vector<std::pair<int, int>>>& class_positions,
    int c_max) {
  const int b = h.dim(0);
  if (static_cast<int>(class_positions.size()) != b) {
    throw ContractError("extract_class_features: batch mismatch");
  }
  int c = c_max;
  if (c < 0) {
    c = 0;
    for (const auto& ps : class_positions) c = std::max(c, static_cast<int>(ps.size()));
  }
  std::vector<std::vector<int>> positions(b);
  ClassFeatures out;
  out.valid = IntMat(b, c, 0);
  for (int bi = 0; bi < b; ++bi) {
    for (size_t i = 0; i < class_positions[bi].size(); ++i) {
      positions[bi].push_back(class_positions[bi][i].second);
      out.valid.at(bi, static_cast<int>(i)) = 1;
    }
  }
  out.features = gather_positions(h, positions, c);
  return out;
}

Tensor score(const Tensor& text, const Tensor& classes, const IntMat& valid,
             const ScorerConfig& cfg, const WeightResolver& w) {
  cfg.validate();
  const int b = classes.dim(0);
  const int c = classes.dim(1);
  if (valid.rows != b || valid.cols != c) throw ShapeError("score: validity mask mismatch");
  Tensor s;
  if (cfg.kind == ScorerConfig::Kind::dot) {
    s = mul_scalar(batched_dot(text, classes), 1.0 / cfg.temperature);
  } else {
    Tensor tc = concat_last({expand_to_classes(text, c), classes});
    Tensor hidden = relu(add_bias(matmul(tc, w("head.scorer.fc1.weight")),
                                  w("head.scorer.fc1.bias")));
    Tensor o = add_bias(matmul(hidden, w("head.scorer.fc2.weight")), w("head.scorer.fc2.bias"));
    s = reshape(o, {b, c});
  }
  return select_where(valid, s, kInvalidLogit);
}

Tensor reweight_layers(const std::vector<Tensor>& layer_states, const WeightResolver& w,
                       const std::string& prefix) {
  if (layer_states.empty()) throw ContractError("reweight_layers: no states");
  const Shape& shape = layer_states[0].shape();
  for (const Tensor& u : layer_states) {
    if (u.shape() != shape) throw ShapeError("reweight_layers: state shapes differ");
  }
  const int b = shape[0];
  const int k = static_cast<int>(layer_states.size());

  Tensor squeeze = w(prefix + ".squeeze.weight");  // [D,1]
  std::vector<Tensor> zs;
  zs.reserve(k);
  for (const Tensor& u : layer_states) {
    zs.push_back(reshape(mean_axis(matmul(u, squeeze), 1), {b, 1}));
  }
  Tensor z = concat_last(zs);  // [B,K]
  Tensor mid = relu(matmul(z, w(prefix + ".excite.w1.weight")));
  Tensor s = sigmoid(matmul(mid, w(prefix + ".excite.w2.weight")));  // [B,K]

  Tensor acc;
  for (int i = 0; i < k; ++i) {
    Tensor si = reshape(slice_last(s, i, 1), {b});
    Tensor term = scale_per_example(layer_states[i], si);
    acc = i == 0 ? term : add(acc, term);
  }
  return add_bias(matmul(acc, w(prefix + ".proj.weight")), w(prefix + ".proj.bias"));
}

Tensor token_contrastive_loss(const Tensor& embeddings, const IntMat& token_mask) {
  if (embeddings.ndim() != 3) throw ShapeError("token_contrastive_loss: expected [B,L,D]");
  const int b = embeddings.dim(0);
  const int l = embeddings.dim(1);
  if (token_mask.rows != b || token_mask.cols != l) {
    throw ShapeError("token_contrastive_loss: mask mismatch");
  }
  int total = 0;
  for (int m : token_mask.v) {
    if (m != 0 && m != 1) throw ContractError("token_contrastive_loss: mask must be 0/1");
    total += m;
  }
  if (total == 0) throw ContractError("token_contrastive_loss: no valid tokens");

  Tensor e = l2_normalize(embeddings, -1);
  Tensor sim = matmul(e, transpose_last2(e));  // [B,L,L]
  Tensor diag = take_diagonal(log_softmax(sim, -1));
  Tensor picked = mul(diag, to_tensor(token_mask));
  return mul_scalar(sum(picked), -1.0 / total);
}

void init_head_params(ParamStore& store, const ModelConfig& cfg, Rng& rng) {
  const int d = cfg.encoder.d_model;
  if (cfg.pooling == Pooling::attention) {
    store.declare("head.pool.query", {d, 1}, rng, 0.02);
  }
  if (cfg.scorer.kind == ScorerConfig::Kind::mlp) {
    store.declare("head.scorer.fc1.weight", {2 * d, cfg.scorer.mlp_hidden}, rng, 0.02);
    store.declare("head.scorer.fc1.bias", {cfg.scorer.mlp_hidden}, rng, 0.0);
    store.declare("head.scorer.fc2.weight", {cfg.scorer.mlp_hidden, 1}, rng, 0.02);
    store.declare("head.scorer.fc2.bias", {1}, rng, 0.0);
  }
  if (cfg.layer_reweighting) {
    const int k = cfg.encoder.n_layers;
    const int k2 = (k + 1) / 2;  // W1 rows; rounds up for odd K
    store.declare("head.reweight.squeeze.weight", {d, 1}, rng, 0.02);
    store.declare("head.reweight.excite.w1.weight", {k, k2}, rng, 0.02);
    store.declare("head.reweight.excite.w2.weight", {k2, k}, rng, 0.02);
    store.declare("head.reweight.proj.weight", {d, d}, rng, 0.02);
    store.declare("head.reweight.proj.bias", {d}, rng, 0.0);
  }
}

namespace {

// Text-only assembly: plain token sequence, full-width text span.
AssembledInput assemble_text(const Vocab& vocab, const std::string& text, int max_len) {
  std::vector<int> ids = tokenize(vocab, text);
  if (ids.empty()) throw DataError("assemble: text has no tokens");
  if (static_cast<int>(ids.size()) > max_len) ids.resize(max_len);
  AssembledInput out;
  const int l = static_cast<int>(ids.size());
  out.token_ids = IntMat(1, l);
  out.attn_mask = IntMat(1, l, 1);
  for (int j = 0; j < l; ++j) out.token_ids.at(0, j) = ids[j];
  out.class_positions.emplace_back();
  out.text_span.emplace_back(0, l);
  out.labels_per_example.push_back(0);
  return out;
}

// Label-block-only sequence for the encoder-decoder variant:
// [LABEL l1-tokens LABEL l2-tokens ...]
AssembledInput assemble_label_block(const Vocab& vocab,
                                    const std::vector<std::string>& labels, int max_len) {
  AssembledInput joint = assemble(vocab, "placeholder", labels, max_len + 2);
  AssembledInput out;
  const int l = joint.text_span[0].first - 1;  // strip SEP and text
  out.token_ids = IntMat(1, l);
  out.attn_mask = IntMat(1, l, 1);
  for (int j = 0; j < l; ++j) out.token_ids.at(0, j) = joint.token_ids.at(0, j);
  out.class_positions = joint.class_positions;
  out.text_span.emplace_back(0, 0);
  out.labels_per_example = joint.labels_per_example;
  return out;
}

void require_params(const ParamStore& store, const std::string& name, const char* what) {
  if (!store.has(name)) {
    throw ConfigError(std::string("forward: missing parameters for ") + what);
  }
}

// Per-example [B,C,D] matrix of class-encoder label embeddings; encodes each
// unique label once per call.
Tensor label_embedding_matrix(const ModelConfig& cfg, const WeightResolver& w, const Vocab& vocab,
                              const std::vector<std::vector<std::string>>& labels, int c_max) {
  const int d = cfg.encoder.d_model;
  std::map<std::string, Tensor> cache;
  std::vector<Tensor> rows;
  Tensor zero = Tensor::zeros({d});
  for (const auto& set : labels) {
    std::vector<Tensor> slots;
    for (const std::string& lab : set) {
      auto it = cache.find(lab);
      if (it == cache.end()) {
        it = cache.emplace(lab, encode_label(cfg, w, vocab, lab)).first;
      }
      slots.push_back(it->second);
    }
    for (int i = static_cast<int>(set.size()); i < c_max; ++i) slots.push_back(zero);
    rows.push_back(stack0(slots));  // [C,D]
  }
  return stack0(rows);  // [B,C,D]
}

struct JointParts {
  AssembledInput assembled;
  EncoderOutput enc;
};

ForwardResult finish_joint(const ModelConfig& cfg, const WeightResolver& w, JointParts parts) {
  ForwardResult r;
  r.assembled = std::move(parts.assembled);
  r.enc = std::move(parts.enc);
  r.used_hidden = cfg.layer_reweighting ? reweight_layers(r.enc.layer_states, w)
                                        : r.enc.final_hidden;
  ClassFeatures cf = extract_class_features(r.used_hidden, r.assembled.class_positions);
  r.class_valid = cf.valid;
  r.pooled_text = pool_text(r.used_hidden, r.assembled.text_span, r.assembled.attn_mask,
                            cfg.pooling, w);
  r.logits = score(r.pooled_text, cf.features, cf.valid, cfg.scorer, w);
  return r;
}

AssembledInput assemble_joint(const ModelConfig& cfg, const Vocab& vocab,
                              const std::vector<std::string>& texts,
                              const std::vector<std::vector<std::string>>& labels) {
  std::vector<AssembledInput> parts;
  for (size_t i = 0; i < texts.size(); ++i) {
    parts.push_back(assemble(vocab, texts[i], labels[i], cfg.max_len));
  }
  return batch(parts);
}

ForwardResult forward_uni(const ModelConfig& cfg, const WeightResolver& w, const Vocab& vocab,
                          const std::vector<std::string>& texts,
                          const std::vector<std::vector<std::string>>& labels) {
  JointParts parts;
  parts.assembled = assemble_joint(cfg, vocab, texts, labels);
  parts.enc = encode(cfg.encoder, w, "encoder", parts.assembled.token_ids,
                     parts.assembled.attn_mask);
  return finish_joint(cfg, w, std::move(parts));
}

ForwardResult forward_fused(const ModelConfig& cfg, const WeightResolver& w, const Vocab& vocab,
                            const std::vector<std::string>& texts,
                            const std::vector<std::vector<std::string>>& labels,
                            const Tensor* pinned) {
  if (!pinned) {
    require_params(*w.store, "class_encoder.tok_emb.weight", "fused_bi variant (class encoder)");
  }
  AssembledInput assembled = assemble_joint(cfg, vocab, texts, labels);
  const int b = assembled.batch_size();
  const int l = assembled.length();

  Tensor emb = embedding_lookup(w("encoder.tok_emb.weight"), assembled.token_ids);
  Tensor class_emb = pinned ? *pinned
                            : label_embedding_matrix(cfg, w, vocab, labels,
                                                     assembled.max_labels());
  // zero the marker rows, then write the class-encoder embeddings there
  IntMat keep(b, l, 1);
  auto positions = assembled.label_positions();
  for (int bi = 0; bi < b; ++bi) {
    for (int pos : positions[bi]) keep.at(bi, pos) = 0;
  }
  Tensor fused = add(mul_rows(emb, to_tensor(keep)), scatter_positions(class_emb, positions, l));

  JointParts parts;
  parts.assembled = std::move(assembled);
  parts.enc = encode_from_embeddings(cfg.encoder, w, "encoder", fused, parts.assembled.attn_mask);
  return finish_joint(cfg, w, std::move(parts));
}

ForwardResult forward_bi(const ModelConfig& cfg, const WeightResolver& w, const Vocab& vocab,
                         const std::vector<std::string>& texts,
                         const std::vector<std::vector<std::string>>& labels) {
  require_params(*w.store, "class_encoder.tok_emb.weight", "bi variant (class encoder)");
  std::vector<AssembledInput> parts;
  for (const std::string& t : texts) parts.push_back(assemble_text(vocab, t, cfg.max_len));

  ForwardResult r;
  r.assembled = batch(parts);
  r.enc = encode(cfg.encoder, w, "encoder", r.assembled.token_ids, r.assembled.attn_mask);
  r.used_hidden = cfg.layer_reweighting ? reweight_layers(r.enc.layer_states, w)
                                        : r.enc.final_hidden;
  r.pooled_text = pool_text(r.used_hidden, r.assembled.text_span, r.assembled.attn_mask,
                            cfg.pooling, w);

  int c_max = 0;
  for (const auto& set : labels) c_max = std::max(c_max, static_cast<int>(set.size()));
  if (c_max == 0) throw ConfigError("forward: at least one candidate label required");
  Tensor classes = label_embedding_matrix(cfg, w, vocab, labels, c_max);
  r.class_valid = IntMat(static_cast<int>(labels.size()), c_max, 0);
  for (size_t bi = 0; bi < labels.size(); ++bi) {
    for (size_t i = 0; i < labels[bi].size(); ++i) {
      r.class_valid.at(static_cast<int>(bi), static_cast<int>(i)) = 1;
    }
  }
  r.logits = score(r.pooled_text, classes, r.class_valid, cfg.scorer, w);
  return r;
}

ForwardResult forward_enc_dec(const ModelConfig& cfg, const WeightResolver& w, const Vocab& vocab,
                              const std::vector<std::string>& texts,
                              const std::vector<std::vector<std::string>>& labels) {
  if (cfg.n_decoder_layers > 0) {
    require_params(*w.store, "decoder.layers.0.cross.q.weight", "enc_dec variant (decoder)");
  }
  std::vector<AssembledInput> tparts;
  std::vector<AssembledInput> cparts;
  for (size_t i = 0; i < texts.size(); ++i) {
    tparts.push_back(assemble_text(vocab, texts[i], cfg.max_len));
    cparts.push_back(assemble_label_block(vocab, labels[i], cfg.max_len));
  }
  ForwardResult r;
  r.assembled = batch(tparts);
  AssembledInput cls = batch(cparts);
  r.enc = encode(cfg.encoder, w, "encoder", r.assembled.token_ids, r.assembled.attn_mask);
  Tensor hc = decode_with_cross_attention(cfg.encoder, cfg.n_decoder_layers, w, "decoder",
                                          cls.token_ids, cls.attn_mask, r.enc);
  ClassFeatures cf = extract_class_features(hc, cls.class_positions);
  r.used_hidden = cfg.layer_reweighting ? reweight_layers(r.enc.layer_states, w)
                                        : r.enc.final_hidden;
  r.pooled_text = pool_text(r.used_hidden, r.assembled.text_span, r.assembled.attn_mask,
                            cfg.pooling, w);
  r.class_valid = cf.valid;
  r.logits = score(r.pooled_text, cf.features, cf.valid, cfg.scorer, w);
  return r;
}

}  // namespace

Tensor encode_label(const ModelConfig& cfg, const WeightResolver& w, const Vocab& vocab,
                    const std::string& label) {
  std::vector<int> ids = tokenize(vocab, label);
  if (ids.empty()) throw ConfigError("encode_label: empty label string");
  if (static_cast<int>(ids.size()) > cfg.encoder.max_seq_len) {
    ids.resize(cfg.encoder.max_seq_len);
  }
  IntMat m(1, static_cast<int>(ids.size()));
  for (size_t j = 0; j < ids.size(); ++j) m.at(0, j) = ids[j];
  EncoderOutput out = encode(cfg.encoder, w, "class_encoder", m, IntMat(1, m.cols, 1));
  return reshape(mean_axis(out.final_hidden, 1), {cfg.encoder.d_model});
}

ForwardResult fused_forward_with_embeddings(const ModelConfig& cfg, const WeightResolver& w,
                                            const Vocab& vocab,
                                            const std::vector<std::string>& texts,
                                            const std::vector<std::vector<std::string>>& labels,
                                            const Tensor& label_embeddings) {
  return forward_fused(cfg, w, vocab, texts, labels, &label_embeddings);
}

ForwardResult forward_variant(const ModelConfig& cfg, const WeightResolver& w, const Vocab& vocab,
                              const std::vector<std::string>& texts,
                              const std::vector<std::vector<std::string>>& labels) {
  if (texts.empty() || texts.size() != labels.size()) {
    throw ContractError("forward: texts/labels size mismatch");
  }
  switch (cfg.variant) {
    case Variant::uni:
      return forward_uni(cfg, w, vocab, texts, labels);
    case Variant::bi:
      return forward_bi(cfg, w, vocab, texts, labels);
    case Variant::fused_bi:
      return forward_fused(cfg, w, vocab, texts, labels, nullptr);
    case Variant::enc_dec:
      return forward_enc_dec(cfg, w, vocab, texts, labels);
  }
  throw ConfigError("forward: unknown variant");
}

Variant variant_from_string(const std::string& s) {
  if (s == "uni") return Variant::uni;
  if (s == "bi") return Variant::bi;
  if (s == "fused_bi") return Variant::fused_bi;
  if (s == "enc_dec") return Variant::enc_dec;
  throw ConfigError("unknown variant: " + s);
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::uni: return "uni";
    case Variant::bi: return "bi";
    case Variant::fused_bi: return "fused_bi";
    case Variant::enc_dec: return "enc_dec";
  }
  return "uni";
}

Pooling pooling_from_string(const std::string& s) {
  if (s == "first") return Pooling::first;
  if (s == "mean") return Pooling::mean;
  if (s == "attention") return Pooling::attention;
  throw ConfigError("unknown pooling strategy: " + s);
}

std::string to_string(Pooling p) {
  switch (p) {
    case Pooling::first: return "first";
    case Pooling::mean: return "mean";
    case Pooling::attention: return "attention";
  }
  return "first";
}

ScorerConfig::Kind scorer_kind_from_string(const std::string& s) {
  if (s == "dot") return ScorerConfig::Kind::dot;
  if (s == "mlp") return ScorerConfig::Kind::mlp;
  throw ConfigError("unknown scorer kind: " + s);
}

std::string to_string(ScorerConfig::Kind k) {
  return k == ScorerConfig::Kind::dot ? "dot" : "mlp";
}

}  // namespace gliclass
