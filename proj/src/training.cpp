#include "gliclass/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <optional>
#include <ostream>

namespace gliclass {

namespace {

template <typename T>
void seeded_shuffle(std::vector<T>& v, Rng& rng) {
  for (size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[rng.below(static_cast<uint64_t>(i))]);
  }
}

Tensor to_tensor(const IntMat& m) {
  Tensor t = Tensor::zeros({m.rows, m.cols});
  for (size_t i = 0; i < m.v.size(); ++i) t.values()[i] = m.v[i];
  return t;
}

Tensor one_minus(const Tensor& x) { return add_scalar(mul_scalar(x, -1.0), 1.0); }

int count_valid(const IntMat& m) {
  int n = 0;
  for (int x : m.v) n += x != 0;
  return n;
}

double masked_mean(const Tensor& x, const IntMat& valid) {
  double acc = 0.0;
  int n = 0;
  for (size_t i = 0; i < x.values().size(); ++i) {
    if (valid.v[i]) {
      acc += x.values()[i];
      n += 1;
    }
  }
  return n > 0 ? acc / n : 0.0;
}

}  // namespace

void PPOConfig::validate() const {
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw ConfigError("ppo: clip epsilon must be in (0,1)");
  if (rl_iters < 1) throw ConfigError("ppo: rl_iters must be >= 1");
  if (label_smoothing >= 1.0) throw ConfigError("ppo: label smoothing must be < 1");
}

void RewardConfig::validate() const {
  if (components.empty()) throw ConfigError("reward: at least one component required");
  for (const auto& [c, w] : components) {
    (void)c;
    if (!std::isfinite(w)) throw ConfigError("reward: weights must be finite");
  }
}

RewardComponent reward_component_from_string(const std::string& s) {
  if (s == "per_label_correct") return RewardComponent::per_label_correct;
  if (s == "example_micro_f1") return RewardComponent::example_micro_f1;
  throw ConfigError("unknown reward component: " + s);
}

std::string to_string(RewardComponent c) {
  switch (c) {
    case RewardComponent::per_label_correct: return "per_label_correct";
    case RewardComponent::example_micro_f1: return "example_micro_f1";
  }
  return "per_label_correct";
}

void OptimizerConfig::validate() const {
  if (encoder_lr <= 0.0 || head_lr <= 0.0) throw ConfigError("optim: learning rates must be > 0");
  if (weight_decay < 0.0) throw ConfigError("optim: weight decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("optim: betas must be in [0,1)");
  }
  if (eps <= 0.0) throw ConfigError("optim: eps must be > 0");
}

bool AdamW::is_encoder_param(const std::string& name) {
  return name.rfind("encoder.", 0) == 0 || name.rfind("class_encoder.", 0) == 0 ||
         name.rfind("decoder.", 0) == 0;
}

bool AdamW::is_decay_excluded(const std::string& name) {
  auto ends_with = [&](const char* suffix) {
    const size_t n = std::strlen(suffix);
    return name.size() >= n && name.compare(name.size() - n, n, suffix) == 0;
  };
  return ends_with(".gain") || ends_with(".bias");
}

AdamW::AdamW(ParamStore& store, OptimizerConfig cfg, std::function<bool(const std::string&)> select)
    : store_(&store), cfg_(cfg) {
  cfg_.validate();
  for (const std::string& name : store.names()) {
    if (select && !select(name)) continue;
    const size_t n = static_cast<size_t>(store.get(name).numel());
    slots_.push_back(Slot{name, std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)});
  }
}

void AdamW::step() {
  t_ += 1;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (Slot& s : slots_) {
    const Tensor& p = store_->get(s.name);
    if (!p.requires_grad() || !p.has_grad()) continue;
    const std::vector<double>& g = p.grad();
    const double lr = is_encoder_param(s.name) ? cfg_.encoder_lr : cfg_.head_lr;
    const double wd = is_decay_excluded(s.name) ? 0.0 : cfg_.weight_decay;
    std::vector<double>& x = p.values();
    for (size_t i = 0; i < x.size(); ++i) {
      s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g[i];
      s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mh = s.m[i] / bc1;
      const double vh = s.v[i] / bc2;
      x[i] -= lr * (mh / (std::sqrt(vh) + cfg_.eps) + wd * x[i]);
    }
  }
}

Tensor focal_bce_loss(const Tensor& logits, const Tensor& targets, const IntMat& mask,
                      double alpha, double gamma) {
  if (logits.shape() != targets.shape()) throw ShapeError("focal: logit/target shape mismatch");
  if (logits.ndim() != 2 || logits.dim(0) != mask.rows || logits.dim(1) != mask.cols) {
    throw ShapeError("focal: mask shape mismatch");
  }
  for (size_t i = 0; i < targets.values().size(); ++i) {
    const double t = targets.values()[i];
    if (mask.v[i] && t != 0.0 && t != 1.0) throw ContractError("focal: targets must be 0/1");
  }
  const int n_valid = count_valid(mask);
  if (n_valid == 0) throw ContractError("focal: no valid label slots");

  Tensor s = select_where(mask, logits, 0.0);
  Tensor t = select_where(mask, targets, 0.0);
  Tensor loss = bce_with_logits(s, t);
  if (gamma > 0.0) {
    Tensor p = sigmoid(s);
    Tensor p_t = add(mul(p, t), mul(one_minus(p), one_minus(t)));
    loss = mul(loss, power(one_minus(p_t), gamma));
  }
  if (alpha >= 0.0) {
    Tensor alpha_t = add(mul_scalar(t, alpha), mul_scalar(one_minus(t), 1.0 - alpha));
    loss = mul(loss, alpha_t);
  }
  return mul_scalar(sum(select_where(mask, loss, 0.0)), 1.0 / n_valid);
}

Tensor ppo_loss(const Tensor& new_probs, const RolloutBatch& rollout, const PPOConfig& cfg) {
  cfg.validate();
  const int n = new_probs.dim(0);
  const int c = new_probs.dim(1);
  if (rollout.old_probs.shape() != new_probs.shape() ||
      rollout.advantages.shape() != new_probs.shape() || rollout.actions.rows != n ||
      rollout.actions.cols != c || rollout.label_valid.rows != n ||
      rollout.label_valid.cols != c) {
    throw ShapeError("ppo_loss: rollout shape mismatch");
  }
  const int n_valid = count_valid(rollout.label_valid);
  if (n_valid == 0) throw ContractError("ppo_loss: no valid label slots");

  // smoothed action targets and old-policy action probabilities (constants)
  Tensor a_t = Tensor::zeros({n, c});
  Tensor old_pi = Tensor::zeros({n, c});
  const bool smooth = cfg.label_smoothing >= 0.0;
  for (int i = 0; i < n * c; ++i) {
    double a = rollout.actions.v[i];
    if (a != 0.0 && a != 1.0) throw ContractError("ppo_loss: actions must be 0/1");
    if (smooth) a = (1.0 - cfg.label_smoothing) * a + 0.5 * cfg.label_smoothing;
    a_t.values()[i] = a;
    const double p_old = rollout.label_valid.v[i] ? rollout.old_probs.values()[i] : 0.5;
    const double pi = a * p_old + (1.0 - a) * (1.0 - p_old);
    if (rollout.label_valid.v[i] && pi <= 0.0) {
      throw ContractError("ppo_loss: old action probability is zero");
    }
    old_pi.values()[i] = pi;
  }

  Tensor p = select_where(rollout.label_valid, new_probs, 0.5);
  Tensor pi_new = add(mul(a_t, p), mul(one_minus(a_t), one_minus(p)));
  Tensor ratio = div(pi_new, old_pi);
  Tensor clipped = clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
  Tensor surr = minimum(mul(ratio, rollout.advantages), mul(clipped, rollout.advantages));

  if (cfg.focal_gamma > 0.0) surr = mul(surr, power(one_minus(pi_new), cfg.focal_gamma));
  if (cfg.focal_alpha >= 0.0) {
    Tensor alpha_t =
        add(mul_scalar(a_t, cfg.focal_alpha), mul_scalar(one_minus(a_t), 1.0 - cfg.focal_alpha));
    surr = mul(surr, alpha_t);
  }
  return mul_scalar(sum(select_where(rollout.label_valid, surr, 0.0)), -1.0 / n_valid);
}

Tensor value_loss(const Tensor& v_pred, const Tensor& returns) {
  if (v_pred.shape() != returns.shape()) throw ShapeError("value_loss: shape mismatch");
  Tensor d = sub(v_pred, returns);
  return mean(mul(d, d));
}

Tensor kl_penalty(const Tensor& ref_probs, const Tensor& new_probs, double beta,
                  const IntMat* valid) {
  if (beta < 0.0) return Tensor::zeros({1});
  if (ref_probs.shape() != new_probs.shape()) throw ShapeError("kl_penalty: shape mismatch");
  IntMat all(ref_probs.dim(0), ref_probs.dim(1), 1);
  const IntMat& mask = valid ? *valid : all;
  const int n_valid = count_valid(mask);
  if (n_valid == 0) throw ContractError("kl_penalty: no valid label slots");

  Tensor pr = Tensor::zeros(ref_probs.shape());  // clipped reference, constant
  Tensor ln_pr = Tensor::zeros(ref_probs.shape());
  Tensor ln_1mpr = Tensor::zeros(ref_probs.shape());
  for (size_t i = 0; i < pr.values().size(); ++i) {
    double v = mask.v[i] ? ref_probs.values()[i] : 0.5;
    v = std::min(1.0 - 1e-12, std::max(1e-12, v));
    pr.values()[i] = v;
    ln_pr.values()[i] = std::log(v);
    ln_1mpr.values()[i] = std::log(1.0 - v);
  }
  Tensor q = select_where(mask, new_probs, 0.5);
  Tensor term = add(mul(pr, sub(ln_pr, vlog(q))),
                    mul(one_minus(pr), sub(ln_1mpr, vlog(one_minus(q)))));
  return mul_scalar(sum(select_where(mask, term, 0.0)), beta / n_valid);
}

Tensor entropy_bonus(const Tensor& new_probs, double beta, const IntMat* valid) {
  if (beta < 0.0) return Tensor::zeros({1});
  IntMat all(new_probs.dim(0), new_probs.dim(1), 1);
  const IntMat& mask = valid ? *valid : all;
  const int n_valid = count_valid(mask);
  if (n_valid == 0) throw ContractError("entropy_bonus: no valid label slots");
  Tensor q = select_where(mask, new_probs, 0.5);
  Tensor h = mul_scalar(add(mul(q, vlog(q)), mul(one_minus(q), vlog(one_minus(q)))), -1.0);
  return mul_scalar(sum(select_where(mask, h, 0.0)), beta / n_valid);
}

IntMat sample_actions(const Tensor& probs, bool stochastic, Rng& rng) {
  if (probs.ndim() != 2) throw ShapeError("sample_actions: expected [N,C]");
  IntMat actions(probs.dim(0), probs.dim(1), 0);
  for (size_t i = 0; i < probs.values().size(); ++i) {
    const double p = probs.values()[i];
    if (!(p >= 0.0 && p <= 1.0)) throw ContractError("sample_actions: probs must be in [0,1]");
    actions.v[i] = stochastic ? (rng.bernoulli(p) ? 1 : 0) : (p > 0.5 ? 1 : 0);
  }
  return actions;
}

Tensor compute_rewards(const IntMat& actions, const IntMat& targets, const IntMat& valid,
                       const RewardConfig& cfg) {
  cfg.validate();
  if (actions.rows != targets.rows || actions.cols != targets.cols ||
      actions.rows != valid.rows || actions.cols != valid.cols) {
    throw ShapeError("compute_rewards: shape mismatch");
  }
  Tensor r = Tensor::zeros({actions.rows, actions.cols});
  for (const auto& [component, weight] : cfg.components) {
    switch (component) {
      case RewardComponent::per_label_correct:
        for (int i = 0; i < actions.rows * actions.cols; ++i) {
          if (valid.v[i] && actions.v[i] == targets.v[i]) r.values()[i] += weight;
        }
        break;
      case RewardComponent::example_micro_f1:
        for (int b = 0; b < actions.rows; ++b) {
          int tp = 0, fp = 0, fn = 0;
          for (int j = 0; j < actions.cols; ++j) {
            if (!valid.at(b, j)) continue;
            const bool a = actions.at(b, j) != 0;
            const bool t = targets.at(b, j) != 0;
            tp += a && t;
            fp += a && !t;
            fn += !a && t;
          }
          const double f1 = 2 * tp + fp + fn > 0 ? 2.0 * tp / (2.0 * tp + fp + fn) : 1.0;
          for (int j = 0; j < actions.cols; ++j) {
            if (valid.at(b, j)) r.values()[b * actions.cols + j] += weight * f1;
          }
        }
        break;
    }
  }
  return r;
}

RolloutBatch make_rollout(const Tensor& probs, const IntMat& actions, const Tensor& rewards,
                          const Tensor& values, const IntMat& valid, bool normalize_advantages) {
  const int n = probs.dim(0);
  const int c = probs.dim(1);
  if (values.ndim() != 1 || values.dim(0) != n) throw ShapeError("make_rollout: values must be [N]");
  RolloutBatch rb;
  rb.actions = actions;
  rb.old_probs = probs.detach();
  rb.rewards = rewards.detach();
  rb.values = values.detach();
  rb.label_valid = valid;
  rb.advantages = Tensor::zeros({n, c});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < c; ++j) {
      rb.advantages.values()[i * c + j] =
          rewards.values()[i * c + j] - values.values()[i];
    }
  }
  if (normalize_advantages) {
    double m = 0.0;
    int k = 0;
    for (int i = 0; i < n * c; ++i) {
      if (valid.v[i]) {
        m += rb.advantages.values()[i];
        k += 1;
      }
    }
    if (k > 0) {
      m /= k;
      double var = 0.0;
      for (int i = 0; i < n * c; ++i) {
        if (valid.v[i]) {
          const double d = rb.advantages.values()[i] - m;
          var += d * d;
        }
      }
      const double sd = std::sqrt(var / k) + 1e-8;
      for (int i = 0; i < n * c; ++i) {
        if (valid.v[i]) rb.advantages.values()[i] = (rb.advantages.values()[i] - m) / sd;
      }
    }
  }
  return rb;
}

Tensor value_forward(const WeightResolver& w, const Tensor& pooled) {
  Tensor h = relu(add_bias(matmul(pooled, w("value.fc1.weight")), w("value.fc1.bias")));
  Tensor v = add_bias(matmul(h, w("value.fc2.weight")), w("value.fc2.bias"));
  return reshape(v, {pooled.dim(0)});
}

TrainBatch make_batch(const std::vector<LabeledExample>& data, const std::vector<int>& idx,
                      bool shuffle_labels, Rng& rng) {
  TrainBatch b;
  int c_max = 0;
  for (int i : idx) {
    b.texts.push_back(data[i].text);
    std::vector<std::string> labels = data[i].all_labels;
    if (shuffle_labels) seeded_shuffle(labels, rng);
    c_max = std::max(c_max, static_cast<int>(labels.size()));
    b.label_sets.push_back(std::move(labels));
  }
  b.targets = IntMat(static_cast<int>(idx.size()), c_max, 0);
  for (size_t bi = 0; bi < idx.size(); ++bi) {
    const auto& truth = data[idx[bi]].true_labels;
    for (size_t j = 0; j < b.label_sets[bi].size(); ++j) {
      const std::string& l = b.label_sets[bi][j];
      if (std::find(truth.begin(), truth.end(), l) != truth.end()) {
        b.targets.at(static_cast<int>(bi), static_cast<int>(j)) = 1;
      }
    }
  }
  return b;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (max_steps < 1) throw ConfigError("train: max_steps must be >= 1");
  if (checkpoint_every < 0) throw ConfigError("train: checkpoint_every must be >= 0");
  if (keep_checkpoints < 1) throw ConfigError("train: keep_checkpoints must be >= 1");
  if (contrastive_weight < 0.0) throw ConfigError("train: contrastive_weight must be >= 0");
  optim.validate();
}

double supervised_step(Model& m, const TrainBatch& batch, const TrainConfig& cfg, AdamW& opt) {
  Tape tape;
  double out;
  {
    TapeScope scope(tape);
    ForwardResult fwd = m.forward(batch.texts, batch.label_sets);
    Tensor targets = to_tensor(batch.targets);
    Tensor loss =
        focal_bce_loss(fwd.logits, targets, fwd.class_valid, cfg.focal_alpha, cfg.focal_gamma);
    if (cfg.contrastive_weight > 0.0) {
      Tensor aux = token_contrastive_loss(fwd.used_hidden, fwd.assembled.attn_mask);
      loss = add(loss, mul_scalar(aux, cfg.contrastive_weight));
    }
    tape.backward(loss);
    out = loss.item();
  }
  opt.step();
  m.params.zero_grads();
  return out;
}

namespace {

class BatchCycler {
 public:
  BatchCycler(size_t n, Rng& rng) : order_(n), rng_(&rng) {
    std::iota(order_.begin(), order_.end(), 0);
    seeded_shuffle(order_, *rng_);
  }

  std::vector<int> next(int batch_size) {
    std::vector<int> idx;
    idx.reserve(batch_size);
    for (int i = 0; i < batch_size; ++i) {
      if (pos_ == order_.size()) {
        seeded_shuffle(order_, *rng_);
        pos_ = 0;
      }
      idx.push_back(order_[pos_++]);
    }
    return idx;
  }

 private:
  std::vector<int> order_;
  Rng* rng_;
  size_t pos_ = 0;
};

}  // namespace

TrainReport train_supervised(Model& m, const std::vector<LabeledExample>& dataset,
                             const TrainConfig& cfg, bool evaluate_at_end, std::ostream* log) {
  cfg.validate();
  if (dataset.empty()) throw ConfigError("train: empty dataset");
  DatasetSplit split = shuffle_split_90_10(dataset, cfg.seed);
  if (split.train.empty()) throw ConfigError("train: empty training split");

  Rng rng(cfg.seed + 1);
  BatchCycler cycler(split.train.size(), rng);
  AdamW opt(m.params, cfg.optim);
  std::optional<CheckpointManager> mgr;
  if (!cfg.checkpoint_dir.empty() && cfg.checkpoint_every > 0) {
    mgr.emplace(cfg.checkpoint_dir, cfg.keep_checkpoints);
  }

  TrainReport report;
  for (int step = 1; step <= cfg.max_steps; ++step) {
    TrainBatch batch = make_batch(split.train, cycler.next(cfg.batch_size),
                                  cfg.shuffle_labels, rng);
    const double loss = supervised_step(m, batch, cfg, opt);
    report.losses.push_back(loss);
    report.steps = step;
    if (log && cfg.log_every > 0 && (step % cfg.log_every == 0 || step == 1)) {
      (*log) << "step " << step << " loss " << loss << "\n";
    }
    if (mgr && step % cfg.checkpoint_every == 0) {
      report.checkpoints.push_back(mgr->save(m, step));
    }
  }
  if (evaluate_at_end && !split.test.empty()) {
    report.test_macro_f1 = evaluate(m, split.test).macro_f1;
    if (log) (*log) << "test macro_f1 " << report.test_macro_f1 << "\n";
  }
  return report;
}

PPOStepMetrics ppo_step(Model& policy, const Model* ref_policy, const TrainBatch& batch,
                        const PPOConfig& cfg, const RewardConfig& reward_cfg, AdamW& policy_opt,
                        AdamW& value_opt, Rng& rng) {
  cfg.validate();
  reward_cfg.validate();
  PPOStepMetrics met;

  // rollout with the current policy (no tape, all constants)
  ForwardResult fwd = policy.forward(batch.texts, batch.label_sets);
  Tensor probs = sigmoid(fwd.logits);
  IntMat actions = sample_actions(probs, cfg.stochastic_sampling, rng);
  Tensor rewards = compute_rewards(actions, batch.targets, fwd.class_valid, reward_cfg);
  Tensor values = value_forward(policy.resolver(), fwd.pooled_text);
  RolloutBatch rollout = make_rollout(probs, actions, rewards, values, fwd.class_valid,
                                      cfg.normalize_advantages);

  const int n = rollout.advantages.dim(0);
  const int c = rollout.advantages.dim(1);
  Tensor value_targets = Tensor::zeros({n});  // per-example mean reward
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    int k = 0;
    for (int j = 0; j < c; ++j) {
      if (rollout.label_valid.at(i, j)) {
        acc += rewards.values()[i * c + j];
        k += 1;
      }
    }
    value_targets.values()[i] = k > 0 ? acc / k : 0.0;
  }

  Tensor ref_probs;
  if (cfg.beta_kl >= 0.0 && ref_policy) {
    ref_probs = sigmoid(ref_policy->forward(batch.texts, batch.label_sets).logits);
  }

  met.mean_reward = masked_mean(rewards, rollout.label_valid);
  met.mean_advantage = masked_mean(rollout.advantages, rollout.label_valid);
  for (const auto& [component, weight] : reward_cfg.components) {
    RewardConfig single;
    single.components = {{component, weight}};
    Tensor rc = compute_rewards(actions, batch.targets, fwd.class_valid, single);
    met.reward_components[to_string(component)] = masked_mean(rc, rollout.label_valid);
  }

  for (int it = 0; it < cfg.rl_iters; ++it) {
    try {
      Tape tape;
      TapeScope scope(tape);
      ForwardResult f = policy.forward(batch.texts, batch.label_sets);
      Tensor new_probs = sigmoid(f.logits);
      Tensor l_ppo = ppo_loss(new_probs, rollout, cfg);
      Tensor v_pred = value_forward(policy.resolver(), fwd.pooled_text);
      Tensor l_value = value_loss(v_pred, value_targets);
      Tensor total = add(l_ppo, l_value);
      if (cfg.beta_kl >= 0.0 && ref_probs.defined()) {
        total = add(total, kl_penalty(ref_probs, new_probs, cfg.beta_kl, &rollout.label_valid));
      }
      if (cfg.beta_ent >= 0.0) {
        total = add(total, entropy_bonus(new_probs, cfg.beta_ent, &rollout.label_valid));
      }
      tape.backward(total);
      met.total_loss = total.item();
      met.policy_loss = l_ppo.item();
      met.value_loss = l_value.item();
    } catch (const NumericError&) {
      policy.params.zero_grads();
      met.skipped = true;
      return met;
    }
    policy_opt.step();
    value_opt.step();
    policy.params.zero_grads();
  }
  return met;
}

PPOTrainReport train_ppo(Model& m, const std::vector<LabeledExample>& dataset,
                         const PPOConfig& ppo, const RewardConfig& rewards,
                         const TrainConfig& cfg, std::ostream* log) {
  ppo.validate();
  rewards.validate();
  cfg.validate();
  if (dataset.empty()) throw ConfigError("train: empty dataset");
  DatasetSplit split = shuffle_split_90_10(dataset, cfg.seed);
  if (split.train.empty()) throw ConfigError("train: empty training split");

  std::optional<Model> ref;
  if (ppo.beta_kl >= 0.0) ref.emplace(clone_model(m));

  AdamW policy_opt(m.params, cfg.optim,
                   [](const std::string& n) { return n.rfind("value.", 0) != 0; });
  AdamW value_opt(m.params, cfg.optim,
                  [](const std::string& n) { return n.rfind("value.", 0) == 0; });

  Rng rng(cfg.seed + 2);
  BatchCycler cycler(split.train.size(), rng);
  std::optional<CheckpointManager> mgr;
  if (!cfg.checkpoint_dir.empty() && cfg.checkpoint_every > 0) {
    mgr.emplace(cfg.checkpoint_dir, cfg.keep_checkpoints);
  }

  PPOTrainReport report;
  for (int step = 1; step <= cfg.max_steps; ++step) {
    TrainBatch batch = make_batch(split.train, cycler.next(cfg.batch_size),
                                  cfg.shuffle_labels, rng);
    PPOStepMetrics met = ppo_step(m, ref ? &*ref : nullptr, batch, ppo, rewards,
                                  policy_opt, value_opt, rng);
    report.steps.push_back(met);
    if (log && cfg.log_every > 0 && (step % cfg.log_every == 0 || step == 1)) {
      (*log) << "step " << step << " total " << met.total_loss << " reward " << met.mean_reward
             << " advantage " << met.mean_advantage << (met.skipped ? " (skipped)" : "") << "\n";
    }
    if (mgr && step % cfg.checkpoint_every == 0) {
      report.checkpoints.push_back(mgr->save(m, step));
    }
  }

  const size_t window = std::max<size_t>(1, report.steps.size() / 10);
  double first = 0.0, last = 0.0;
  for (size_t i = 0; i < window; ++i) first += report.steps[i].mean_reward;
  for (size_t i = report.steps.size() - window; i < report.steps.size(); ++i) {
    last += report.steps[i].mean_reward;
  }
  report.mean_reward_first = first / window;
  report.mean_reward_last = last / window;
  return report;
}

void LoraRunConfig::validate() const {
  if (r < 1) throw ConfigError("lora: rank must be >= 1");
  if (!std::isfinite(alpha)) throw ConfigError("lora: alpha must be finite");
  if (target_patterns.empty()) throw ConfigError("lora: no target patterns");
}

int apply_lora(Model& m, const LoraRunConfig& cfg, uint64_t seed) {
  cfg.validate();
  if (m.lora.active()) throw ConfigError("lora: adapters already applied");

  std::vector<std::string> targets;
  for (const std::string& name : m.params.names()) {
    if (name.find(".lora_") != std::string::npos) continue;
    if (m.params.get(name).ndim() != 2) continue;
    for (const std::string& pat : cfg.target_patterns) {
      if (name.find(pat) != std::string::npos) {
        targets.push_back(name);
        break;
      }
    }
  }
  if (targets.empty()) throw ConfigError("lora: no parameter matches the target patterns");

  Rng rng(seed);
  for (const std::string& name : m.params.names()) m.params.get(name).set_requires_grad(false);
  for (const std::string& name : targets) {
    const Shape& s = m.params.get(name).shape();
    m.params.declare(name + ".lora_a", {s[0], cfg.r}, rng, 0.02);
    m.params.declare(name + ".lora_b", {cfg.r, s[1]}, rng, 0.0);
  }
  m.lora.r = cfg.r;
  m.lora.alpha = cfg.alpha;
  m.lora.targets = targets;
  return static_cast<int>(targets.size());
}

int merge_lora(Model& m) {
  if (!m.lora.active()) return 0;
  const double scale = m.lora.scale();
  const std::vector<std::string> targets = m.lora.targets;
  for (const std::string& name : targets) {
    Tensor& w = m.params.get(name);
    const Tensor& a = m.params.get(name + ".lora_a");
    const Tensor& b = m.params.get(name + ".lora_b");
    const int in = w.dim(0), out = w.dim(1), r = a.dim(1);
    for (int i = 0; i < in; ++i) {
      for (int k = 0; k < r; ++k) {
        const double av = a.values()[i * r + k] * scale;
        for (int j = 0; j < out; ++j) {
          w.values()[i * out + j] += av * b.values()[k * out + j];
        }
      }
    }
    m.params.remove(name + ".lora_a");
    m.params.remove(name + ".lora_b");
  }
  for (const std::string& name : m.params.names()) m.params.get(name).set_requires_grad(true);
  m.lora = LoraSpec{};
  return static_cast<int>(targets.size());
}

}  // namespace gliclass
