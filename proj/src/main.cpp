#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "gliclass/data.hpp"
#include "gliclass/model.hpp"
#include "gliclass/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gliclass;

namespace {

json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  try {
    json j;
    f >> j;
    return j;
  } catch (const json::exception& e) {
    throw ConfigError("bad config file " + path + ": " + e.what());
  }
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (!j.is_object() || !j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config field '") + key + "': " + e.what());
  }
}

json section(const json& j, const char* name) {
  return j.is_object() && j.contains(name) ? j.at(name) : json::object();
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  // trim surrounding spaces
  for (auto& t : out) {
    size_t a = t.find_first_not_of(' ');
    size_t b = t.find_last_not_of(' ');
    t = a == std::string::npos ? "" : t.substr(a, b - a + 1);
  }
  return out;
}

std::vector<int> parse_int_list(const std::string& s, const char* what) {
  std::vector<int> out;
  for (const std::string& t : split_csv(s)) {
    try {
      size_t used = 0;
      const int v = std::stoi(t, &used);
      if (used != t.size()) throw std::invalid_argument(t);
      out.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError(std::string("bad ") + what + " entry: '" + t + "'");
    }
  }
  return out;
}

void require_path(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string("missing ") + what + " path");
  if (!fs::exists(path)) throw ConfigError(std::string(what) + " path does not exist: " + path);
}

OptimizerConfig optimizer_from(const json& cfg) {
  OptimizerConfig oc;
  const json o = section(cfg, "optimizer");
  read_field(o, "encoder_lr", oc.encoder_lr);
  read_field(o, "head_lr", oc.head_lr);
  read_field(o, "weight_decay", oc.weight_decay);
  read_field(o, "beta1", oc.beta1);
  read_field(o, "beta2", oc.beta2);
  read_field(o, "eps", oc.eps);
  return oc;
}

TrainConfig train_config_from(const json& cfg) {
  TrainConfig tc;
  tc.optim = optimizer_from(cfg);
  const json t = section(cfg, "train");
  read_field(t, "batch_size", tc.batch_size);
  read_field(t, "max_steps", tc.max_steps);
  read_field(t, "checkpoint_every", tc.checkpoint_every);
  read_field(t, "keep_checkpoints", tc.keep_checkpoints);
  read_field(t, "focal_alpha", tc.focal_alpha);
  read_field(t, "focal_gamma", tc.focal_gamma);
  read_field(t, "contrastive_weight", tc.contrastive_weight);
  read_field(t, "shuffle_labels", tc.shuffle_labels);
  read_field(t, "log_every", tc.log_every);
  read_field(cfg, "seed", tc.seed);
  return tc;
}

PPOConfig ppo_config_from(const json& cfg) {
  PPOConfig pc;
  const json p = section(cfg, "ppo");
  read_field(p, "clip_eps", pc.clip_eps);
  read_field(p, "rl_iters", pc.rl_iters);
  read_field(p, "beta_ent", pc.beta_ent);
  read_field(p, "beta_kl", pc.beta_kl);
  read_field(p, "focal_alpha", pc.focal_alpha);
  read_field(p, "focal_gamma", pc.focal_gamma);
  read_field(p, "label_smoothing", pc.label_smoothing);
  read_field(p, "stochastic_sampling", pc.stochastic_sampling);
  read_field(p, "normalize_advantages", pc.normalize_advantages);
  return pc;
}

RewardConfig reward_config_from(const json& cfg) {
  RewardConfig rc;
  const json r = section(cfg, "reward");
  if (r.contains("components")) {
    rc.components.clear();
    for (const auto& [name, weight] : r.at("components").items()) {
      rc.components.emplace_back(reward_component_from_string(name), weight.get<double>());
    }
  }
  return rc;
}

LoraRunConfig lora_config_from(const json& cfg) {
  LoraRunConfig lc;
  const json l = section(cfg, "lora");
  read_field(l, "r", lc.r);
  read_field(l, "alpha", lc.alpha);
  read_field(l, "target_patterns", lc.target_patterns);
  read_field(l, "focal_alpha", lc.focal_alpha);
  return lc;
}

GenSpec gen_spec_from(const json& cfg) {
  GenSpec gs;
  read_field(cfg, "bucket_edges", gs.bucket_edges);
  read_field(cfg, "total_texts", gs.total_texts);
  read_field(cfg, "n_themes", gs.n_themes);
  read_field(cfg, "max_positives", gs.max_positives);
  read_field(cfg, "min_negatives", gs.min_negatives);
  read_field(cfg, "max_negatives", gs.max_negatives);
  read_field(cfg, "theme_offset", gs.theme_offset);
  return gs;
}

// ---------------------------------------------------------------------------
// train

struct TrainOpts {
  std::string config_path;
  std::string stage = "supervised";
  std::string data_path;
  std::string out_dir;
  std::string init_checkpoint;
  std::optional<int> steps, batch_size, checkpoint_every, keep, log_every;
  std::optional<uint64_t> seed;
  std::optional<double> encoder_lr, head_lr, focal_alpha, focal_gamma, contrastive_weight;
  std::optional<int> rl_iters;
  std::optional<double> clip_eps, beta_kl, beta_ent, label_smoothing;
  std::optional<int> lora_r;
  std::optional<double> lora_alpha;
  std::string lora_targets;
};

Model build_or_load_model(const json& cfg, const std::string& init_checkpoint,
                          const std::vector<LabeledExample>& data, uint64_t seed) {
  if (!init_checkpoint.empty()) {
    require_path(init_checkpoint, "init checkpoint");
    return load_checkpoint(init_checkpoint);
  }
  Vocab vocab = vocab_from_dataset(data);
  json mj = section(cfg, "model");
  if (!mj.contains("encoder")) mj["encoder"] = json::object();
  if (!mj["encoder"].contains("vocab_size")) mj["encoder"]["vocab_size"] = vocab.size();
  ModelConfig mc = model_config_from_json(mj);
  if (mc.encoder.vocab_size < vocab.size()) mc.encoder.vocab_size = vocab.size();
  return init_model(mc, vocab, seed);
}

int run_train(const TrainOpts& o) {
  const json cfg = o.config_path.empty() ? json::object() : read_json_file(o.config_path);
  const json paths = section(cfg, "paths");

  std::string data_path = o.data_path;
  if (data_path.empty()) read_field(paths, "dataset", data_path);
  require_path(data_path, "dataset");
  const std::vector<LabeledExample> data = load_dataset(data_path);

  std::string out_dir = o.out_dir;
  if (out_dir.empty()) read_field(paths, "out_dir", out_dir);
  if (out_dir.empty()) out_dir = "runs";
  fs::create_directories(out_dir);

  std::string init = o.init_checkpoint;
  if (init.empty()) read_field(paths, "init_checkpoint", init);

  TrainConfig tc = train_config_from(cfg);
  if (o.seed) tc.seed = *o.seed;
  if (o.steps) tc.max_steps = *o.steps;
  if (o.batch_size) tc.batch_size = *o.batch_size;
  if (o.checkpoint_every) tc.checkpoint_every = *o.checkpoint_every;
  if (o.keep) tc.keep_checkpoints = *o.keep;
  if (o.log_every) tc.log_every = *o.log_every;
  if (o.encoder_lr) tc.optim.encoder_lr = *o.encoder_lr;
  if (o.head_lr) tc.optim.head_lr = *o.head_lr;
  if (o.focal_alpha) tc.focal_alpha = *o.focal_alpha;
  if (o.focal_gamma) tc.focal_gamma = *o.focal_gamma;
  if (o.contrastive_weight) tc.contrastive_weight = *o.contrastive_weight;
  tc.checkpoint_dir = out_dir;
  tc.validate();

  Model m = build_or_load_model(cfg, init, data, tc.seed);

  if (o.stage == "supervised") {
    TrainReport rep = train_supervised(m, data, tc, true, &std::cout);
    if (rep.test_macro_f1 >= 0.0) {
      std::cout << "final test macro_f1 " << rep.test_macro_f1 << "\n";
    }
  } else if (o.stage == "ppo") {
    PPOConfig pc = ppo_config_from(cfg);
    if (o.rl_iters) pc.rl_iters = *o.rl_iters;
    if (o.clip_eps) pc.clip_eps = *o.clip_eps;
    if (o.beta_kl) pc.beta_kl = *o.beta_kl;
    if (o.beta_ent) pc.beta_ent = *o.beta_ent;
    if (o.label_smoothing) pc.label_smoothing = *o.label_smoothing;
    PPOTrainReport rep = train_ppo(m, data, pc, reward_config_from(cfg), tc, &std::cout);
    std::cout << "mean reward first " << rep.mean_reward_first << " last "
              << rep.mean_reward_last << "\n";
  } else if (o.stage == "lora") {
    LoraRunConfig lc = lora_config_from(cfg);
    if (o.lora_r) lc.r = *o.lora_r;
    if (o.lora_alpha) lc.alpha = *o.lora_alpha;
    if (!o.lora_targets.empty()) lc.target_patterns = split_csv(o.lora_targets);
    const int n = apply_lora(m, lc, tc.seed);
    std::cout << "adapted " << n << " weight matrices (r=" << lc.r << ")\n";
    if (lc.focal_alpha >= 0.0) tc.focal_alpha = lc.focal_alpha;
    TrainReport rep = train_supervised(m, data, tc, true, &std::cout);
    merge_lora(m);
    if (rep.test_macro_f1 >= 0.0) {
      std::cout << "final test macro_f1 " << rep.test_macro_f1 << "\n";
    }
  } else {
    throw ConfigError("unknown stage: " + o.stage);
  }

  const std::string final_path = (fs::path(out_dir) / "checkpoint_final.glcf").string();
  save_checkpoint(m, final_path);
  std::cout << "saved " << final_path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// predict

struct PredictOpts {
  std::string checkpoint;
  std::string text;
  std::string labels;
  std::optional<double> threshold;
  std::optional<int> top_k;
};

int run_predict(const PredictOpts& o) {
  require_path(o.checkpoint, "checkpoint");
  std::vector<std::string> labels = split_csv(o.labels);
  labels.erase(std::remove(labels.begin(), labels.end(), ""), labels.end());
  if (labels.empty()) throw ConfigError("at least one label is required");
  std::set<std::string> uniq(labels.begin(), labels.end());
  if (uniq.size() != labels.size()) throw ConfigError("duplicate labels in input");
  if (o.threshold && o.top_k) throw ConfigError("pass either --threshold or --top-k, not both");

  Model m = load_checkpoint(o.checkpoint);
  std::vector<double> probs = predict_probs(m, o.text, labels);

  std::vector<size_t> order(labels.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return probs[a] > probs[b]; });

  size_t keep = order.size();
  if (o.top_k) keep = std::min<size_t>(keep, static_cast<size_t>(std::max(0, *o.top_k)));

  nlohmann::ordered_json out = nlohmann::ordered_json::object();
  for (size_t i = 0; i < keep; ++i) {
    if (o.threshold && probs[order[i]] < *o.threshold) continue;
    out[labels[order[i]]] = probs[order[i]];
  }
  std::cout << out.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOpts {
  std::string checkpoint;
  std::string data_path;
  int few_shot_k = 0;
  uint64_t seed = 0;
  double threshold = 0.5;
  int ft_steps = 100;
  int ft_batch = 8;
  double encoder_lr = 1e-5;
  double head_lr = 3e-5;
};

int run_eval(const EvalOpts& o) {
  require_path(o.checkpoint, "checkpoint");
  require_path(o.data_path, "dataset");
  Model m = load_checkpoint(o.checkpoint);
  const std::vector<LabeledExample> data = load_dataset(o.data_path);

  MetricsReport rep;
  if (o.few_shot_k == 0) {
    rep = evaluate(m, data, o.threshold);
  } else {
    FewShotSplit fs = few_shot_split(data, o.few_shot_k, o.seed);
    Model tuned = clone_model(m);
    TrainConfig tc;
    tc.batch_size = std::min<int>(o.ft_batch, static_cast<int>(fs.support.size()));
    tc.optim.encoder_lr = o.encoder_lr;
    tc.optim.head_lr = o.head_lr;
    AdamW opt(tuned.params, tc.optim);
    Rng rng(o.seed + 1);
    std::vector<int> order(fs.support.size());
    std::iota(order.begin(), order.end(), 0);
    size_t pos = order.size();
    for (int step = 0; step < o.ft_steps; ++step) {
      std::vector<int> idx;
      for (int i = 0; i < tc.batch_size; ++i) {
        if (pos == order.size()) {
          for (size_t s = order.size(); s > 1; --s) {
            std::swap(order[s - 1], order[rng.below(s)]);
          }
          pos = 0;
        }
        idx.push_back(order[pos++]);
      }
      supervised_step(tuned, make_batch(fs.support, idx, true, rng), tc, opt);
    }
    rep = evaluate(tuned, fs.query, o.threshold);
  }
  std::cout << rep.to_text();
  return 0;
}

// ---------------------------------------------------------------------------
// bench

struct BenchOpts {
  std::vector<std::string> models;
  std::string labels = "1,2,4,8,16,32,64,128";
  std::string tokens = "64,256,512";
  int repeats = 10;
  bool no_pairwise = false;
  std::string out;
};

int run_bench(const BenchOpts& o) {
  BenchConfig cfg;
  cfg.label_counts = parse_int_list(o.labels, "label count");
  cfg.token_lengths = parse_int_list(o.tokens, "token length");
  cfg.repeats = o.repeats;
  cfg.pairwise_baseline = !o.no_pairwise;

  std::vector<std::pair<std::string, Model>> loaded;
  std::vector<BenchRow> rows;
  for (const std::string& arg : o.models) {
    std::string name, path;
    const size_t eq = arg.find('=');
    if (eq != std::string::npos) {
      name = arg.substr(0, eq);
      path = arg.substr(eq + 1);
    } else {
      path = arg;
      name = fs::path(arg).stem().string();
    }
    try {
      Model m = load_checkpoint(path);
      loaded.emplace_back(name, std::move(m));
    } catch (const std::exception& e) {
      std::cerr << "cannot load " << path << ": " << e.what() << "\n";
      rows.push_back(BenchRow{name, 0, 0, std::numeric_limits<double>::quiet_NaN(), true});
    }
  }
  if (loaded.empty()) throw DataError("no benchmarkable model could be loaded");

  std::vector<std::pair<std::string, const Model*>> refs;
  for (const auto& [name, m] : loaded) refs.emplace_back(name, &m);
  for (const BenchRow& r : run_benchmark(refs, cfg)) rows.push_back(r);

  std::printf("%-28s %8s %8s %18s\n", "model", "labels", "tokens", "examples_per_sec");
  for (const BenchRow& r : rows) {
    std::printf("%-28s %8d %8d %18.2f%s\n", r.model.c_str(), r.labels, r.tokens,
                r.examples_per_second, r.failed ? "  FAILED" : "");
  }
  if (!o.out.empty()) {
    std::ofstream f(o.out, std::ios::trunc);
    if (!f) throw DataError("cannot write csv: " + o.out);
    f << bench_csv(rows);
    std::cout << "wrote " << o.out << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// gen-data

struct GenOpts {
  std::string spec_path;
  std::string out;
  std::string vocab_out;
  uint64_t seed = 0;
  std::optional<int> total_texts, n_themes, theme_offset, max_positives, min_negatives,
      max_negatives;
  std::string buckets;
};

int run_gen_data(const GenOpts& o) {
  GenSpec gs =
      o.spec_path.empty() ? GenSpec{} : gen_spec_from(read_json_file(o.spec_path));
  if (o.total_texts) gs.total_texts = *o.total_texts;
  if (o.n_themes) gs.n_themes = *o.n_themes;
  if (o.theme_offset) gs.theme_offset = *o.theme_offset;
  if (o.max_positives) gs.max_positives = *o.max_positives;
  if (o.min_negatives) gs.min_negatives = *o.min_negatives;
  if (o.max_negatives) gs.max_negatives = *o.max_negatives;
  if (!o.buckets.empty()) gs.bucket_edges = parse_int_list(o.buckets, "bucket edge");

  const std::vector<LabeledExample> data = generate_synthetic(gs, o.seed);
  save_dataset(o.out, data);
  std::cout << "wrote " << data.size() << " examples to " << o.out << "\n";
  if (!o.vocab_out.empty()) {
    vocab_from_dataset(data).save(o.vocab_out);
    std::cout << "wrote vocabulary to " << o.vocab_out << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"label-conditioned multi-label sequence classifier"};
  app.require_subcommand(1);
  int rc = 0;

  TrainOpts t;
  CLI::App* train = app.add_subcommand("train", "run one training stage");
  train->add_option("--config", t.config_path, "JSON run config")->envname("GLICLASS_CONFIG");
  train->add_option("--stage", t.stage, "supervised|ppo|lora")
      ->check(CLI::IsMember({"supervised", "ppo", "lora"}));
  train->add_option("--data", t.data_path, "JSONL dataset");
  train->add_option("--out-dir", t.out_dir, "checkpoint directory");
  train->add_option("--init", t.init_checkpoint, "starting checkpoint");
  train->add_option("--steps", t.steps);
  train->add_option("--batch-size", t.batch_size);
  train->add_option("--checkpoint-every", t.checkpoint_every);
  train->add_option("--keep", t.keep, "checkpoints retained");
  train->add_option("--log-every", t.log_every);
  train->add_option("--seed", t.seed);
  train->add_option("--encoder-lr", t.encoder_lr);
  train->add_option("--head-lr", t.head_lr);
  train->add_option("--focal-alpha", t.focal_alpha);
  train->add_option("--focal-gamma", t.focal_gamma);
  train->add_option("--contrastive-weight", t.contrastive_weight);
  train->add_option("--rl-iters", t.rl_iters);
  train->add_option("--clip-eps", t.clip_eps);
  train->add_option("--beta-kl", t.beta_kl);
  train->add_option("--beta-ent", t.beta_ent);
  train->add_option("--label-smoothing", t.label_smoothing);
  train->add_option("--lora-r", t.lora_r);
  train->add_option("--lora-alpha", t.lora_alpha);
  train->add_option("--lora-targets", t.lora_targets, "comma-separated name patterns");
  train->callback([&] { rc = run_train(t); });

  PredictOpts p;
  CLI::App* predict = app.add_subcommand("predict", "score labels for one text");
  predict->add_option("--checkpoint", p.checkpoint)->required();
  predict->add_option("--text", p.text)->required();
  predict->add_option("--labels", p.labels, "comma-separated candidate labels")->required();
  predict->add_option("--threshold", p.threshold, "emit only labels at or above");
  predict->add_option("--top-k", p.top_k, "emit only the k best labels");
  predict->callback([&] { rc = run_predict(p); });

  EvalOpts e;
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval->add_option("--checkpoint", e.checkpoint)->required();
  eval->add_option("--data", e.data_path)->required();
  eval->add_option("--few-shot-k", e.few_shot_k, "fine-tune a copy on k examples per label");
  eval->add_option("--seed", e.seed);
  eval->add_option("--threshold", e.threshold);
  eval->add_option("--ft-steps", e.ft_steps);
  eval->add_option("--ft-batch", e.ft_batch);
  eval->add_option("--encoder-lr", e.encoder_lr);
  eval->add_option("--head-lr", e.head_lr);
  eval->callback([&] { rc = run_eval(e); });

  BenchOpts b;
  CLI::App* bench = app.add_subcommand("bench", "throughput benchmark");
  bench->add_option("models", b.models, "checkpoints ([name=]path)")->required();
  bench->add_option("--labels", b.labels, "comma-separated label counts");
  bench->add_option("--tokens", b.tokens, "comma-separated text lengths");
  bench->add_option("--repeats", b.repeats);
  bench->add_flag("--no-pairwise", b.no_pairwise, "skip the per-pair baseline");
  bench->add_option("--out", b.out, "CSV output path");
  bench->callback([&] { rc = run_bench(b); });

  GenOpts g;
  CLI::App* gen = app.add_subcommand("gen-data", "write a synthetic corpus");
  gen->add_option("--spec", g.spec_path, "JSON generation spec");
  gen->add_option("--out", g.out, "JSONL output path")->required();
  gen->add_option("--vocab-out", g.vocab_out, "also write the word list");
  gen->add_option("--seed", g.seed);
  gen->add_option("--total-texts", g.total_texts);
  gen->add_option("--themes", g.n_themes);
  gen->add_option("--theme-offset", g.theme_offset);
  gen->add_option("--max-positives", g.max_positives);
  gen->add_option("--min-negatives", g.min_negatives);
  gen->add_option("--max-negatives", g.max_negatives);
  gen->add_option("--buckets", g.buckets, "comma-separated length bucket edges");
  gen->callback([&] { rc = run_gen_data(g); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return 2;
  } catch (const ContractError& err) {
    std::cerr << "validation error: " << err.what() << "\n";
    return 2;
  } catch (const NumericError& err) {
    std::cerr << "numeric error: " << err.what() << "\n";
    return 3;
  } catch (const DataError& err) {
    std::cerr << "data error: " << err.what() << "\n";
    return 4;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  }
  return rc;
}
