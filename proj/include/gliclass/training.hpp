#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "gliclass/data.hpp"
#include "gliclass/model.hpp"

namespace gliclass {

// Negative coefficients disable the component they control.
struct PPOConfig {
  double clip_eps = 0.2;
  int rl_iters = 3;
  double beta_ent = -1.0;
  double beta_kl = -1.0;
  double focal_alpha = -1.0;
  double focal_gamma = -1.0;
  double label_smoothing = -1.0;
  bool stochastic_sampling = true;
  bool normalize_advantages = false;

  void validate() const;
};

struct RolloutBatch {
  IntMat actions;      // [N,C]
  Tensor old_probs;    // [N,C] policy probabilities at rollout
  Tensor rewards;      // [N,C]
  Tensor values;       // [N] value-head output at rollout
  Tensor advantages;   // [N,C] = R - V
  IntMat label_valid;  // [N,C]
};

enum class RewardComponent { per_label_correct, example_micro_f1 };

struct RewardConfig {
  std::vector<std::pair<RewardComponent, double>> components = {
      {RewardComponent::per_label_correct, 1.0}};

  void validate() const;
};

RewardComponent reward_component_from_string(const std::string& s);
std::string to_string(RewardComponent c);

struct OptimizerConfig {
  double encoder_lr = 1e-5;  // encoder / class_encoder / decoder parameters
  double head_lr = 3e-5;     // everything else
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

// AdamW with decoupled weight decay. Learning rate is picked per parameter by
// prefix; names ending in ".gain" or ".bias" are excluded from decay. Frozen
// parameters (requires_grad false) are skipped.
class AdamW {
 public:
  AdamW(ParamStore& store, OptimizerConfig cfg,
        std::function<bool(const std::string&)> select = nullptr);

  void step();
  int64_t steps_taken() const { return t_; }

  static bool is_encoder_param(const std::string& name);
  static bool is_decay_excluded(const std::string& name);

 private:
  ParamStore* store_;
  OptimizerConfig cfg_;
  struct Slot {
    std::string name;
    std::vector<double> m, v;
  };
  std::vector<Slot> slots_;
  int64_t t_ = 0;
};

// ---- losses ----

// Standard binary focal loss on logits, masked mean over valid slots.
// alpha < 0 drops the class-balance factor, gamma <= 0 drops the modulating
// factor; both disabled reduces to plain BCE.
Tensor focal_bce_loss(const Tensor& logits, const Tensor& targets, const IntMat& mask,
                      double alpha, double gamma);

// Clipped-surrogate policy loss. pi(a) = a*p + (1-a)*(1-p) with optionally
// smoothed actions; ratio against old_probs; focal modifier
// alpha_t * (1 - pi_new(a))^gamma applied when enabled.
Tensor ppo_loss(const Tensor& new_probs, const RolloutBatch& rollout, const PPOConfig& cfg);

Tensor value_loss(const Tensor& v_pred, const Tensor& returns);

// beta * mean Bernoulli KL(ref || new) over valid slots; 0 when beta < 0.
Tensor kl_penalty(const Tensor& ref_probs, const Tensor& new_probs, double beta,
                  const IntMat* valid = nullptr);

// beta * mean Bernoulli entropy; 0 when beta < 0.
Tensor entropy_bonus(const Tensor& new_probs, double beta, const IntMat* valid = nullptr);

IntMat sample_actions(const Tensor& probs, bool stochastic, Rng& rng);

// Weighted reward components per (example,label); invalid slots get 0.
Tensor compute_rewards(const IntMat& actions, const IntMat& targets, const IntMat& valid,
                       const RewardConfig& cfg);

RolloutBatch make_rollout(const Tensor& probs, const IntMat& actions, const Tensor& rewards,
                          const Tensor& values, const IntMat& valid, bool normalize_advantages);

// Value head (D -> D/2 -> 1) over pooled text features.
Tensor value_forward(const WeightResolver& w, const Tensor& pooled);

// ---- batches ----

struct TrainBatch {
  std::vector<std::string> texts;
  std::vector<std::vector<std::string>> label_sets;
  IntMat targets;  // [B,Cmax], aligned with label_sets
};

TrainBatch make_batch(const std::vector<LabeledExample>& data, const std::vector<int>& idx,
                      bool shuffle_labels, Rng& rng);

// ---- supervised training ----

struct TrainConfig {
  int batch_size = 8;
  int max_steps = 1000;
  int checkpoint_every = 1000;
  int keep_checkpoints = 3;
  uint64_t seed = 0;
  double focal_alpha = -1.0;
  double focal_gamma = -1.0;
  double contrastive_weight = 0.0;  // token self-identification auxiliary
  bool shuffle_labels = true;
  OptimizerConfig optim;
  std::string checkpoint_dir;  // empty disables checkpointing
  int log_every = 100;

  void validate() const;
};

double supervised_step(Model& m, const TrainBatch& batch, const TrainConfig& cfg, AdamW& opt);

struct TrainReport {
  int steps = 0;
  std::vector<double> losses;          // one per step
  std::vector<std::string> checkpoints;
  double test_macro_f1 = -1.0;         // filled when evaluate_at_end
};

// Shuffles, splits 90/10, iterates seeded batches for max_steps, checkpoints
// periodically (keeping the newest `keep_checkpoints`), evaluates the held-out
// split at the end when requested.
TrainReport train_supervised(Model& m, const std::vector<LabeledExample>& dataset,
                             const TrainConfig& cfg, bool evaluate_at_end = true,
                             std::ostream* log = nullptr);

// ---- PPO training ----

struct PPOStepMetrics {
  double total_loss = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double mean_reward = 0.0;
  double mean_advantage = 0.0;
  std::map<std::string, double> reward_components;
  bool skipped = false;
};

PPOStepMetrics ppo_step(Model& policy, const Model* ref_policy, const TrainBatch& batch,
                        const PPOConfig& cfg, const RewardConfig& reward_cfg, AdamW& policy_opt,
                        AdamW& value_opt, Rng& rng);

struct PPOTrainReport {
  std::vector<PPOStepMetrics> steps;
  std::vector<std::string> checkpoints;
  double mean_reward_first = 0.0;  // mean over the first 10% of steps
  double mean_reward_last = 0.0;   // mean over the last 10% of steps
};

PPOTrainReport train_ppo(Model& m, const std::vector<LabeledExample>& dataset,
                         const PPOConfig& ppo, const RewardConfig& rewards,
                         const TrainConfig& cfg, std::ostream* log = nullptr);

// ---- LoRA ----

struct LoraRunConfig {
  int r = 8;
  double alpha = 16.0;
  std::vector<std::string> target_patterns;  // substring match on 2-D weights
  double focal_alpha = -1.0;                 // supervised focal alpha for the stage

  void validate() const;
};

// Attaches zero-initialized low-rank adapters to every 2-D parameter whose
// name contains a target pattern, freezing all base parameters. Returns the
// number of adapted weights.
int apply_lora(Model& m, const LoraRunConfig& cfg, uint64_t seed);

// Folds adapters into the base weights, removes them, and unfreezes.
int merge_lora(Model& m);

}  // namespace gliclass
