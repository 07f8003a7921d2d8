// Python bindings for the core operations: model lifecycle, prediction,
// supervised / RL training, synthetic data, metrics and the benchmark.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "gliclass/data.hpp"
#include "gliclass/model.hpp"
#include "gliclass/training.hpp"

namespace py = pybind11;
using namespace gliclass;

namespace {

LabeledExample example_from_dict(const py::dict& d) {
  LabeledExample ex;
  ex.text = d["text"].cast<std::string>();
  ex.all_labels = d["all_labels"].cast<std::vector<std::string>>();
  ex.true_labels = d["true_labels"].cast<std::vector<std::string>>();
  ex.validate();
  return ex;
}

py::dict example_to_dict(const LabeledExample& ex) {
  py::dict d;
  d["text"] = ex.text;
  d["all_labels"] = ex.all_labels;
  d["true_labels"] = ex.true_labels;
  return d;
}

std::vector<LabeledExample> examples_from_list(const py::list& items) {
  std::vector<LabeledExample> out;
  out.reserve(items.size());
  for (const auto& item : items) out.push_back(example_from_dict(item.cast<py::dict>()));
  return out;
}

py::list examples_to_list(const std::vector<LabeledExample>& examples) {
  py::list out;
  for (const LabeledExample& ex : examples) out.append(example_to_dict(ex));
  return out;
}

py::dict metrics_to_dict(const MetricsReport& rep) {
  py::dict d;
  d["macro_f1"] = rep.macro_f1;
  d["micro_f1"] = rep.micro_f1;
  d["accuracy"] = rep.accuracy;
  d["n_examples"] = rep.n_examples;
  py::dict per_label;
  for (const LabelStats& s : rep.per_label) {
    py::dict l;
    l["precision"] = s.precision;
    l["recall"] = s.recall;
    l["f1"] = s.f1;
    l["support"] = s.support;
    per_label[py::str(s.label)] = l;
  }
  d["per_label"] = per_label;
  return d;
}

GenSpec spec_from_kwargs(int total_texts, int n_themes, int max_positives, int min_negatives,
                         int max_negatives, int theme_offset,
                         const std::vector<int>& bucket_edges) {
  GenSpec spec;
  spec.total_texts = total_texts;
  spec.n_themes = n_themes;
  spec.max_positives = max_positives;
  spec.min_negatives = min_negatives;
  spec.max_negatives = max_negatives;
  spec.theme_offset = theme_offset;
  if (!bucket_edges.empty()) spec.bucket_edges = bucket_edges;
  return spec;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Label-conditioned sequence classification core";

  py::register_exception<ConfigError>(m, "ConfigError");
  py::register_exception<DataError>(m, "DataError");
  py::register_exception<NumericError>(m, "NumericError");
  py::register_exception<ContractError>(m, "ContractError");

  py::class_<Model>(m, "Model")
      .def_static(
          "init",
          [](const std::string& config_json, const std::vector<std::string>& documents,
             uint64_t seed) {
            nlohmann::json j = nlohmann::json::parse(config_json);
            Vocab vocab = Vocab::build(documents);
            if (!j.contains("encoder")) j["encoder"] = nlohmann::json::object();
            if (!j["encoder"].contains("vocab_size")) j["encoder"]["vocab_size"] = vocab.size();
            ModelConfig cfg = model_config_from_json(j);
            if (cfg.encoder.vocab_size < vocab.size()) cfg.encoder.vocab_size = vocab.size();
            return init_model(cfg, vocab, seed);
          },
          py::arg("config_json"), py::arg("documents"), py::arg("seed") = 0,
          "Fresh model; the vocabulary is built from `documents`.")
      .def_static("load", &load_checkpoint, py::arg("path"))
      .def("save", [](const Model& self, const std::string& path) { save_checkpoint(self, path); },
           py::arg("path"))
      .def("clone", [](const Model& self) { return clone_model(self); })
      .def(
          "predict",
          [](const Model& self, const std::string& text, const std::vector<std::string>& labels) {
            return predict_probs(self, text, labels);
          },
          py::arg("text"), py::arg("labels"),
          "Per-label probabilities for one text, aligned with `labels`.")
      .def("config_json",
           [](const Model& self) { return model_config_to_json(self.config).dump(); })
      .def_property_readonly("vocab_size", [](const Model& self) { return self.vocab.size(); })
      .def_property_readonly("n_params", [](const Model& self) {
        int64_t n = 0;
        for (const std::string& name : self.params.names()) {
          n += self.params.get(name).numel();
        }
        return n;
      });

  m.def(
      "generate",
      [](int total_texts, int n_themes, int max_positives, int min_negatives, int max_negatives,
         int theme_offset, const std::vector<int>& bucket_edges, uint64_t seed) {
        return examples_to_list(generate_synthetic(
            spec_from_kwargs(total_texts, n_themes, max_positives, min_negatives, max_negatives,
                             theme_offset, bucket_edges),
            seed));
      },
      py::arg("total_texts") = 2000, py::arg("n_themes") = 8, py::arg("max_positives") = 3,
      py::arg("min_negatives") = 1, py::arg("max_negatives") = 5, py::arg("theme_offset") = 0,
      py::arg("bucket_edges") = std::vector<int>{}, py::arg("seed") = 0,
      "Synthetic keyword-theme corpus; every text appears twice with fresh negatives.");

  m.def("theme_names", [] { return theme_names(); });

  m.def(
      "load_dataset", [](const std::string& path) { return examples_to_list(load_dataset(path)); },
      py::arg("path"));
  m.def(
      "save_dataset",
      [](const std::string& path, const py::list& examples) {
        save_dataset(path, examples_from_list(examples));
      },
      py::arg("path"), py::arg("examples"));

  m.def(
      "evaluate",
      [](const Model& model, const py::list& examples, double threshold) {
        return metrics_to_dict(evaluate(model, examples_from_list(examples), threshold));
      },
      py::arg("model"), py::arg("examples"), py::arg("threshold") = 0.5);

  m.def(
      "train_supervised",
      [](Model& model, const py::list& examples, int steps, int batch_size, double encoder_lr,
         double head_lr, double focal_alpha, double focal_gamma, double contrastive_weight,
         uint64_t seed) {
        TrainConfig cfg;
        cfg.max_steps = steps;
        cfg.batch_size = batch_size;
        cfg.optim.encoder_lr = encoder_lr;
        cfg.optim.head_lr = head_lr;
        cfg.focal_alpha = focal_alpha;
        cfg.focal_gamma = focal_gamma;
        cfg.contrastive_weight = contrastive_weight;
        cfg.seed = seed;
        TrainReport rep = train_supervised(model, examples_from_list(examples), cfg);
        py::dict d;
        d["losses"] = rep.losses;
        d["test_macro_f1"] = rep.test_macro_f1;
        return d;
      },
      py::arg("model"), py::arg("examples"), py::arg("steps") = 200, py::arg("batch_size") = 8,
      py::arg("encoder_lr") = 1e-5, py::arg("head_lr") = 3e-5, py::arg("focal_alpha") = -1.0,
      py::arg("focal_gamma") = -1.0, py::arg("contrastive_weight") = 0.0, py::arg("seed") = 0,
      "Supervised training on a 90/10 split; returns per-step losses and held-out macro-F1.");

  m.def(
      "train_ppo",
      [](Model& model, const py::list& examples, int steps, int batch_size, double encoder_lr,
         double head_lr, double clip_eps, int rl_iters, double beta_kl, double beta_ent,
         double focal_alpha, double focal_gamma, double label_smoothing,
         const std::map<std::string, double>& rewards, uint64_t seed) {
        PPOConfig pc;
        pc.clip_eps = clip_eps;
        pc.rl_iters = rl_iters;
        pc.beta_kl = beta_kl;
        pc.beta_ent = beta_ent;
        pc.focal_alpha = focal_alpha;
        pc.focal_gamma = focal_gamma;
        pc.label_smoothing = label_smoothing;
        RewardConfig rc;
        if (!rewards.empty()) {
          rc.components.clear();
          for (const auto& [name, weight] : rewards) {
            rc.components.emplace_back(reward_component_from_string(name), weight);
          }
        }
        TrainConfig cfg;
        cfg.max_steps = steps;
        cfg.batch_size = batch_size;
        cfg.optim.encoder_lr = encoder_lr;
        cfg.optim.head_lr = head_lr;
        cfg.seed = seed;
        PPOTrainReport rep = train_ppo(model, examples_from_list(examples), pc, rc, cfg);
        std::vector<double> rewards_per_step;
        rewards_per_step.reserve(rep.steps.size());
        for (const PPOStepMetrics& s : rep.steps) rewards_per_step.push_back(s.mean_reward);
        py::dict d;
        d["mean_reward_first"] = rep.mean_reward_first;
        d["mean_reward_last"] = rep.mean_reward_last;
        d["rewards"] = rewards_per_step;
        return d;
      },
      py::arg("model"), py::arg("examples"), py::arg("steps") = 100, py::arg("batch_size") = 8,
      py::arg("encoder_lr") = 1e-5, py::arg("head_lr") = 3e-5, py::arg("clip_eps") = 0.2,
      py::arg("rl_iters") = 3, py::arg("beta_kl") = -1.0, py::arg("beta_ent") = -1.0,
      py::arg("focal_alpha") = -1.0, py::arg("focal_gamma") = -1.0,
      py::arg("label_smoothing") = -1.0,
      py::arg("rewards") = std::map<std::string, double>{}, py::arg("seed") = 0,
      "Clipped-surrogate RL training; negative coefficients disable their terms.");

  m.def(
      "apply_lora",
      [](Model& model, int r, double alpha, const std::vector<std::string>& target_patterns,
         uint64_t seed) {
        LoraRunConfig cfg;
        cfg.r = r;
        cfg.alpha = alpha;
        cfg.target_patterns = target_patterns;
        return apply_lora(model, cfg, seed);
      },
      py::arg("model"), py::arg("r") = 8, py::arg("alpha") = 16.0,
      py::arg("target_patterns") = std::vector<std::string>{"attn.", "ffn."},
      py::arg("seed") = 0);
  m.def("merge_lora", [](Model& model) { return merge_lora(model); }, py::arg("model"));

  m.def(
      "benchmark",
      [](const Model& model, const std::string& name, const std::vector<int>& label_counts,
         const std::vector<int>& token_lengths, int repeats, bool pairwise) {
        BenchConfig cfg;
        if (!label_counts.empty()) cfg.label_counts = label_counts;
        if (!token_lengths.empty()) cfg.token_lengths = token_lengths;
        cfg.repeats = repeats;
        cfg.pairwise_baseline = pairwise;
        py::list out;
        for (const BenchRow& r : run_benchmark({{name, &model}}, cfg)) {
          py::dict d;
          d["model"] = r.model;
          d["labels"] = r.labels;
          d["tokens"] = r.tokens;
          d["examples_per_second"] = r.examples_per_second;
          d["failed"] = r.failed;
          out.append(d);
        }
        return out;
      },
      py::arg("model"), py::arg("name") = "model", py::arg("label_counts") = std::vector<int>{},
      py::arg("token_lengths") = std::vector<int>{}, py::arg("repeats") = 10,
      py::arg("pairwise") = true,
      "Single-thread throughput rows; `<name>-pairwise` rows run one forward per label.");
}
