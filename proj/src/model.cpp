#include "gliclass/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <utility>

namespace gliclass {

namespace {

constexpr char kMagic[4] = {'G', 'L', 'C', 'F'};
constexpr uint32_t kVersion = 1;

int value_hidden(int d_model) { return std::max(1, d_model / 2); }

}  // namespace

Model init_model(const ModelConfig& cfg, const Vocab& vocab, uint64_t seed) {
  cfg.validate();
  if (vocab.size() > cfg.encoder.vocab_size) {
    throw ConfigError("model: vocabulary larger than encoder vocab_size");
  }
  Model m;
  m.config = cfg;
  m.vocab = vocab;
  Rng rng(seed);
  init_encoder_params(m.params, cfg.encoder, "encoder", rng);
  if (cfg.variant == Variant::bi || cfg.variant == Variant::fused_bi) {
    init_encoder_params(m.params, cfg.encoder, "class_encoder", rng);
  }
  if (cfg.variant == Variant::enc_dec) {
    init_decoder_params(m.params, cfg.encoder, cfg.n_decoder_layers, "decoder", rng);
  }
  init_head_params(m.params, cfg, rng);

  const int d = cfg.encoder.d_model;
  const int h = value_hidden(d);
  m.params.declare("value.fc1.weight", {d, h}, rng, 0.02);
  m.params.declare("value.fc1.bias", {h}, rng, 0.0);
  m.params.declare("value.fc2.weight", {h, 1}, rng, 0.02);
  m.params.declare("value.fc2.bias", {1}, rng, 0.0);
  return m;
}

Model clone_model(const Model& m) {
  Model out;
  out.config = m.config;
  out.vocab = m.vocab;
  out.lora = m.lora;
  for (const std::string& name : m.params.names()) {
    out.params.add(name, m.params.get(name).clone());
  }
  return out;
}

std::vector<double> predict_probs(const Model& m, const std::string& text,
                                  const std::vector<std::string>& labels) {
  ForwardResult r = m.forward({text}, {labels});
  const double* row = r.logits.values().data();
  std::vector<double> probs(labels.size());
  for (size_t c = 0; c < labels.size(); ++c) {
    const double s = row[c];
    probs[c] = s >= 0.0 ? 1.0 / (1.0 + std::exp(-s)) : std::exp(s) / (1.0 + std::exp(s));
  }
  return probs;
}

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["variant"] = to_string(cfg.variant);
  j["pooling"] = to_string(cfg.pooling);
  j["scorer"] = {{"kind", to_string(cfg.scorer.kind)},
                 {"temperature", cfg.scorer.temperature},
                 {"mlp_hidden", cfg.scorer.mlp_hidden}};
  j["encoder"] = {{"vocab_size", cfg.encoder.vocab_size}, {"d_model", cfg.encoder.d_model},
                  {"n_heads", cfg.encoder.n_heads},       {"n_layers", cfg.encoder.n_layers},
                  {"d_ff", cfg.encoder.d_ff},             {"max_seq_len", cfg.encoder.max_seq_len},
                  {"dropout_rate", cfg.encoder.dropout_rate}};
  j["n_decoder_layers"] = cfg.n_decoder_layers;
  j["layer_reweighting"] = cfg.layer_reweighting;
  j["max_len"] = cfg.max_len;
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  try {
    if (j.contains("variant")) cfg.variant = variant_from_string(j.at("variant").get<std::string>());
    if (j.contains("pooling")) cfg.pooling = pooling_from_string(j.at("pooling").get<std::string>());
    if (j.contains("scorer")) {
      const auto& s = j.at("scorer");
      if (s.contains("kind")) cfg.scorer.kind = scorer_kind_from_string(s.at("kind").get<std::string>());
      if (s.contains("temperature")) cfg.scorer.temperature = s.at("temperature").get<double>();
      if (s.contains("mlp_hidden")) cfg.scorer.mlp_hidden = s.at("mlp_hidden").get<int>();
    }
    if (j.contains("encoder")) {
      const auto& e = j.at("encoder");
      if (e.contains("vocab_size")) cfg.encoder.vocab_size = e.at("vocab_size").get<int>();
      if (e.contains("d_model")) cfg.encoder.d_model = e.at("d_model").get<int>();
      if (e.contains("n_heads")) cfg.encoder.n_heads = e.at("n_heads").get<int>();
      if (e.contains("n_layers")) cfg.encoder.n_layers = e.at("n_layers").get<int>();
      if (e.contains("d_ff")) cfg.encoder.d_ff = e.at("d_ff").get<int>();
      if (e.contains("max_seq_len")) cfg.encoder.max_seq_len = e.at("max_seq_len").get<int>();
      if (e.contains("dropout_rate")) cfg.encoder.dropout_rate = e.at("dropout_rate").get<double>();
    }
    if (j.contains("n_decoder_layers")) cfg.n_decoder_layers = j.at("n_decoder_layers").get<int>();
    if (j.contains("layer_reweighting")) cfg.layer_reweighting = j.at("layer_reweighting").get<bool>();
    if (j.contains("max_len")) cfg.max_len = j.at("max_len").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad model config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

void save_checkpoint(const Model& m, const std::string& path) {
  nlohmann::json header;
  header["config"] = model_config_to_json(m.config);
  header["vocab"] = m.vocab.id_to_token;
  header["lora"] = {{"r", m.lora.r}, {"alpha", m.lora.alpha}, {"targets", m.lora.targets}};
  nlohmann::json table = nlohmann::json::array();
  for (const std::string& name : m.params.names()) {
    const Tensor& t = m.params.get(name);
    table.push_back({{"name", name}, {"shape", t.shape()}, {"grad", t.requires_grad()}});
  }
  header["tensors"] = std::move(table);
  const std::string hs = header.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open checkpoint for writing: " + path);
  f.write(kMagic, 4);
  uint32_t version = kVersion;
  f.write(reinterpret_cast<const char*>(&version), sizeof version);
  uint64_t hlen = hs.size();
  f.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const std::string& name : m.params.names()) {
    const Tensor& t = m.params.get(name);
    f.write(reinterpret_cast<const char*>(t.values().data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  f.flush();
  if (!f) throw DataError("failed writing checkpoint: " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError("not a checkpoint file: " + path);
  }
  uint32_t version = 0;
  f.read(reinterpret_cast<char*>(&version), sizeof version);
  if (!f || version != kVersion) throw DataError("unsupported checkpoint version");
  uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
  if (!f) throw DataError("truncated checkpoint header: " + path);
  std::string hs(hlen, '\0');
  f.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!f) throw DataError("truncated checkpoint header: " + path);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hs);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad checkpoint header: ") + e.what());
  }

  Model m;
  try {
    m.config = model_config_from_json(header.at("config"));
    m.vocab = Vocab::from_id_list(header.at("vocab").get<std::vector<std::string>>());
    const auto& l = header.at("lora");
    m.lora.r = l.at("r").get<int>();
    m.lora.alpha = l.at("alpha").get<double>();
    m.lora.targets = l.at("targets").get<std::vector<std::string>>();
    for (const auto& entry : header.at("tensors")) {
      const std::string name = entry.at("name").get<std::string>();
      Shape shape = entry.at("shape").get<Shape>();
      const bool grad = entry.at("grad").get<bool>();
      Tensor t = Tensor::zeros(std::move(shape), grad);
      f.read(reinterpret_cast<char*>(t.values().data()),
             static_cast<std::streamsize>(t.numel() * sizeof(double)));
      if (!f) throw DataError("truncated checkpoint tensor data: " + name);
      m.params.add(name, std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad checkpoint header: ") + e.what());
  }
  return m;
}

CheckpointManager::CheckpointManager(std::string dir, int keep)
    : dir_(std::move(dir)), keep_(keep) {
  if (keep_ < 1) throw ConfigError("checkpoint manager: keep must be >= 1");
  std::filesystem::create_directories(dir_);
}

std::string CheckpointManager::save(const Model& m, int64_t step) {
  char name[64];
  std::snprintf(name, sizeof name, "checkpoint_%09lld.glcf", static_cast<long long>(step));
  const std::string path = (std::filesystem::path(dir_) / name).string();
  save_checkpoint(m, path);
  kept_.push_back(path);
  while (kept_.size() > static_cast<size_t>(keep_)) {
    std::filesystem::remove(kept_.front());
    kept_.erase(kept_.begin());
  }
  return path;
}

}  // namespace gliclass
