#pragma once

#include <string>
#include <utility>
#include <vector>

#include "gliclass/model.hpp"

namespace gliclass {

struct LabeledExample {
  std::string text;
  std::vector<std::string> all_labels;   // candidate set, duplicate-free
  std::vector<std::string> true_labels;  // subset of all_labels

  void validate() const;  // DataError on violated invariants
};

// JSON-lines: one object per line with fields text / all_labels / true_labels.
std::vector<LabeledExample> load_dataset(const std::string& path);
void save_dataset(const std::string& path, const std::vector<LabeledExample>& examples);

struct DatasetSplit {
  std::vector<LabeledExample> train;
  std::vector<LabeledExample> test;
};

// Seeded shuffle, then exactly floor(n/10) examples held out for test.
DatasetSplit shuffle_split_90_10(std::vector<LabeledExample> examples, uint64_t seed);

// Synthetic corpus: texts are keyword bags drawn from disjoint theme
// vocabularies, so true labels are separable by construction. Texts are
// spread equally over word-count buckets, and every text appears twice with
// independently drawn candidate-label counts.
struct GenSpec {
  std::vector<int> bucket_edges = {0,   4,   8,   16,  24,  32,  48,  64,
                                   96,  128, 192, 256, 384, 512, 768, 1024};
  int total_texts = 2000;  // before duplication; spread equally over buckets
  int n_themes = 8;        // drawn from the built-in inventory
  int max_positives = 3;   // themes per text (>=1)
  int min_negatives = 1;   // extra candidate labels per example
  int max_negatives = 5;
  int theme_offset = 0;    // rotate the inventory (held-out-theme tasks)

  void validate() const;
};

const std::vector<std::string>& theme_names();
const std::vector<std::vector<std::string>>& theme_keywords();

std::vector<LabeledExample> generate_synthetic(const GenSpec& spec, uint64_t seed);

// Vocabulary covering every text and candidate label in the dataset.
Vocab vocab_from_dataset(const std::vector<LabeledExample>& examples);

struct LabelStats {
  std::string label;
  int tp = 0, fp = 0, fn = 0;
  int support = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

struct MetricsReport {
  std::vector<LabelStats> per_label;
  double macro_f1 = 0.0;  // mean F1 over labels with support
  double micro_f1 = 0.0;
  double accuracy = 0.0;  // exact-match ratio over examples
  int n_examples = 0;

  std::string to_text() const;
};

// Pure confusion-matrix arithmetic; `pred[i]` and `gold[i]` are subsets of
// `candidates[i]`.
MetricsReport compute_metrics(const std::vector<std::vector<std::string>>& gold,
                              const std::vector<std::vector<std::string>>& pred,
                              const std::vector<std::vector<std::string>>& candidates);

MetricsReport evaluate(const Model& m, const std::vector<LabeledExample>& examples,
                       double threshold = 0.5);

struct FewShotSplit {
  std::vector<LabeledExample> support;
  std::vector<LabeledExample> query;
};

// Exactly k support examples per label, disjoint from the query set.
FewShotSplit few_shot_split(const std::vector<LabeledExample>& examples, int k, uint64_t seed);

struct BenchConfig {
  std::vector<int> label_counts = {1, 2, 4, 8, 16, 32, 64, 128};
  std::vector<int> token_lengths = {64, 256, 512};
  int repeats = 10;
  bool pairwise_baseline = true;  // same encoder applied per (text,label) pair

  void validate() const;
};

struct BenchRow {
  std::string model;
  int labels = 0;
  int tokens = 0;
  double examples_per_second = 0.0;  // NaN on failure
  bool failed = false;
};

std::vector<BenchRow> run_benchmark(
    const std::vector<std::pair<std::string, const Model*>>& models, const BenchConfig& cfg);

std::string bench_csv(const std::vector<BenchRow>& rows);

}  // namespace gliclass
