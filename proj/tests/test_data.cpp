#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "doctest.h"

#include "gliclass/data.hpp"
#include "gliclass/model.hpp"

using namespace gliclass;

namespace {

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

Model tiny_model_for(const std::vector<LabeledExample>& data) {
  std::vector<std::string> texts;
  for (const auto& ex : data) {
    texts.push_back(ex.text);
    for (const auto& l : ex.all_labels) texts.push_back(l);
  }
  ModelConfig cfg;
  cfg.encoder.d_model = 8;
  cfg.encoder.n_heads = 2;
  cfg.encoder.n_layers = 1;
  cfg.encoder.d_ff = 16;
  cfg.encoder.max_seq_len = 64;
  cfg.max_len = 48;
  Vocab vocab = Vocab::build(texts);
  cfg.encoder.vocab_size = static_cast<int>(vocab.size());
  return init_model(cfg, vocab, 3);
}

}  // namespace

TEST_CASE("labeled example invariants") {
  LabeledExample ok{"some text", {"a", "b"}, {"a"}};
  CHECK_NOTHROW(ok.validate());

  LabeledExample no_text{"", {"a"}, {"a"}};
  CHECK_THROWS_AS(no_text.validate(), DataError);
  LabeledExample no_labels{"t", {}, {}};
  CHECK_THROWS_AS(no_labels.validate(), DataError);
  LabeledExample dup{"t", {"a", "a"}, {"a"}};
  CHECK_THROWS_AS(dup.validate(), DataError);
  LabeledExample stray{"t", {"a"}, {"b"}};
  CHECK_THROWS_AS(stray.validate(), DataError);
}

TEST_CASE("dataset files round trip") {
  Rng rng(99);
  std::vector<LabeledExample> data;
  const std::vector<std::string> pool = {"red",  "green", "blue",  "cyan",
                                         "pink", "amber", "umber", "jade"};
  for (int i = 0; i < 100; ++i) {
    LabeledExample ex;
    ex.text = "text with \"quotes\" and unicode \xc3\xa9 number " + std::to_string(i);
    std::vector<std::string> labels = pool;
    for (size_t s = labels.size(); s > 1; --s) {
      std::swap(labels[s - 1], labels[rng.below(s)]);
    }
    const int n_all = 2 + static_cast<int>(rng.below(4));
    labels.resize(n_all);
    ex.all_labels = labels;
    const int n_true = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(n_all)));
    ex.true_labels.assign(labels.begin(), labels.begin() + n_true);
    data.push_back(ex);
  }

  const auto path = temp_file("gliclass_roundtrip.jsonl");
  save_dataset(path.string(), data);
  std::vector<LabeledExample> back = load_dataset(path.string());
  REQUIRE(back.size() == data.size());
  for (size_t i = 0; i < data.size(); ++i) {
    CHECK(back[i].text == data[i].text);
    CHECK(back[i].all_labels == data[i].all_labels);
    CHECK(back[i].true_labels == data[i].true_labels);
  }
  std::filesystem::remove(path);
}

TEST_CASE("dataset loader reports the offending line") {
  const auto path = temp_file("gliclass_badline.jsonl");
  {
    std::ofstream out(path);
    out << R"({"text":"ok","all_labels":["a"],"true_labels":["a"]})" << "\n";
    out << "\n";  // blank lines are skipped
    out << "this is not json\n";
  }
  try {
    load_dataset(path.string());
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  {
    std::ofstream out(path);
    out << R"({"text":"ok","all_labels":["a"],"true_labels":["a"]})" << "\n";
    out << R"({"text":"bad","all_labels":["a"],"true_labels":["b"]})" << "\n";
  }
  try {
    load_dataset(path.string());
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS_AS(load_dataset("/nonexistent/gliclass.jsonl"), DataError);
  std::filesystem::remove(path);
}

TEST_CASE("theme inventory is disjoint") {
  const auto& names = theme_names();
  const auto& keywords = theme_keywords();
  REQUIRE(names.size() == 16);
  REQUIRE(keywords.size() == names.size());

  std::unordered_set<std::string> seen(names.begin(), names.end());
  CHECK(seen.size() == names.size());
  for (const auto& kw : keywords) {
    CHECK(!kw.empty());
    for (const auto& w : kw) {
      CHECK(seen.insert(w).second);  // unique across every theme and name
    }
  }
}

TEST_CASE("synthetic generation") {
  GenSpec spec;
  spec.total_texts = 32;  // two per default bucket
  spec.n_themes = 4;
  auto data = generate_synthetic(spec, 123);

  SUBCASE("size, validity and duplication") {
    REQUIRE(data.size() == 64);
    for (const auto& ex : data) ex.validate();
    bool some_candidate_diff = false;
    for (size_t i = 0; i < data.size(); i += 2) {
      CHECK(data[i].text == data[i + 1].text);
      CHECK(data[i].true_labels == data[i + 1].true_labels);
      some_candidate_diff |= data[i].all_labels != data[i + 1].all_labels;
    }
    CHECK(some_candidate_diff);
  }

  SUBCASE("word counts follow the length buckets") {
    const auto& e = spec.bucket_edges;
    size_t idx = 0;
    for (size_t b = 0; b < e.size(); ++b) {
      const int count = spec.total_texts / static_cast<int>(e.size()) +
                        (static_cast<int>(b) < spec.total_texts % static_cast<int>(e.size()));
      const int lo = b + 1 < e.size() ? std::max(1, e[b]) : e[b];
      const int hi = b + 1 < e.size() ? e[b + 1] - 1 : e[b];
      for (int t = 0; t < count; ++t, idx += 2) {
        const int wc = static_cast<int>(split_words(data[idx].text).size());
        CHECK(wc >= lo);
        CHECK(wc <= hi);
      }
    }
    CHECK(idx == data.size());
    // the final bucket is pinned to the last edge
    CHECK(split_words(data.back().text).size() == 1024);
  }

  SUBCASE("texts are separable from their keywords alone") {
    std::unordered_map<std::string, std::string> owner;  // keyword -> theme name
    for (size_t t = 0; t < theme_names().size(); ++t) {
      for (const auto& w : theme_keywords()[t]) owner[w] = theme_names()[t];
    }
    std::vector<std::vector<std::string>> gold, pred, cands;
    for (const auto& ex : data) {
      std::set<std::string> hit;
      for (const auto& w : split_words(ex.text)) {
        auto it = owner.find(w);
        if (it != owner.end()) hit.insert(it->second);
      }
      std::vector<std::string> p;
      for (const auto& l : ex.all_labels) {
        if (hit.count(l)) p.push_back(l);
      }
      gold.push_back(ex.true_labels);
      pred.push_back(p);
      cands.push_back(ex.all_labels);
    }
    MetricsReport rep = compute_metrics(gold, pred, cands);
    CHECK(rep.macro_f1 >= 0.95);
    CHECK(rep.micro_f1 >= 0.95);
  }

  SUBCASE("generation is seed-deterministic") {
    auto again = generate_synthetic(spec, 123);
    REQUIRE(again.size() == data.size());
    bool same = true;
    for (size_t i = 0; i < data.size(); ++i) {
      same &= again[i].text == data[i].text && again[i].all_labels == data[i].all_labels &&
              again[i].true_labels == data[i].true_labels;
    }
    CHECK(same);
    auto other = generate_synthetic(spec, 124);
    bool identical = true;
    for (size_t i = 0; i < data.size(); ++i) identical &= other[i].text == data[i].text;
    CHECK(!identical);
  }

  SUBCASE("theme offset rotates the inventory") {
    GenSpec shifted = spec;
    shifted.theme_offset = 14;
    shifted.total_texts = 16;
    auto rotated = generate_synthetic(shifted, 5);
    std::set<std::string> allowed = {theme_names()[14], theme_names()[15], theme_names()[0],
                                     theme_names()[1]};
    for (const auto& ex : rotated) {
      for (const auto& l : ex.all_labels) CHECK(allowed.count(l) == 1);
    }
  }

  SUBCASE("bad specs are rejected") {
    GenSpec bad = spec;
    bad.bucket_edges = {4, 4, 8};
    CHECK_THROWS_AS(generate_synthetic(bad, 1), ConfigError);
    bad = spec;
    bad.total_texts = 3;
    CHECK_THROWS_AS(generate_synthetic(bad, 1), ConfigError);
    bad = spec;
    bad.n_themes = 17;
    CHECK_THROWS_AS(generate_synthetic(bad, 1), ConfigError);
    bad = spec;
    bad.max_positives = 0;
    CHECK_THROWS_AS(generate_synthetic(bad, 1), ConfigError);
    bad = spec;
    bad.min_negatives = 3;
    bad.max_negatives = 2;
    CHECK_THROWS_AS(generate_synthetic(bad, 1), ConfigError);
  }
}

TEST_CASE("classification metrics match a hand-built confusion table") {
  std::vector<std::vector<std::string>> gold = {{"a"}, {"b"}, {"a", "b"}};
  std::vector<std::vector<std::string>> pred = {{"a"}, {"a"}, {"b"}};
  std::vector<std::vector<std::string>> cands = {{"a", "b", "c"}, {"a", "b", "c"}, {"a", "b", "c"}};

  MetricsReport rep = compute_metrics(gold, pred, cands);
  REQUIRE(rep.per_label.size() == 3);
  auto find = [&](const std::string& l) {
    for (const auto& s : rep.per_label) {
      if (s.label == l) return s;
    }
    FAIL("missing label");
    return LabelStats{};
  };
  const LabelStats a = find("a");
  CHECK(a.tp == 1);
  CHECK(a.fp == 1);
  CHECK(a.fn == 1);
  CHECK(a.support == 2);
  CHECK(a.precision == doctest::Approx(0.5));
  CHECK(a.recall == doctest::Approx(0.5));
  CHECK(a.f1 == doctest::Approx(0.5));
  const LabelStats b = find("b");
  CHECK(b.tp == 1);
  CHECK(b.fp == 0);
  CHECK(b.fn == 1);
  CHECK(b.f1 == doctest::Approx(2.0 / 3.0));
  const LabelStats c = find("c");
  CHECK(c.support == 0);  // never gold: excluded from the macro average

  CHECK(rep.macro_f1 == doctest::Approx((0.5 + 2.0 / 3.0) / 2.0));
  CHECK(rep.micro_f1 == doctest::Approx(4.0 / 7.0));
  CHECK(rep.accuracy == doctest::Approx(1.0 / 3.0));
  CHECK(rep.n_examples == 3);

  const std::string text = rep.to_text();
  CHECK(text.find("macro_f1") != std::string::npos);
  CHECK(text.find('a') != std::string::npos);

  SUBCASE("micro f1 equals exact-match accuracy for single-label predictions") {
    std::vector<std::vector<std::string>> g = {{"a"}, {"b"}, {"c"}, {"a"}};
    std::vector<std::vector<std::string>> p = {{"a"}, {"c"}, {"c"}, {"b"}};
    std::vector<std::vector<std::string>> cs(4, {"a", "b", "c"});
    MetricsReport r = compute_metrics(g, p, cs);
    CHECK(r.micro_f1 == doctest::Approx(r.accuracy));
    CHECK(r.accuracy == doctest::Approx(0.5));
  }

  SUBCASE("size mismatches are rejected") {
    CHECK_THROWS_AS(compute_metrics(gold, pred, {{"a"}}), ContractError);
  }
}

TEST_CASE("model evaluation produces a coherent report") {
  GenSpec spec;
  spec.bucket_edges = {0, 4, 8};
  spec.total_texts = 9;
  spec.n_themes = 2;
  spec.max_positives = 1;
  spec.max_negatives = 1;
  auto data = generate_synthetic(spec, 8);
  Model m = tiny_model_for(data);

  MetricsReport rep = evaluate(m, data);
  CHECK(rep.n_examples == static_cast<int>(data.size()));
  CHECK(rep.macro_f1 >= 0.0);
  CHECK(rep.macro_f1 <= 1.0);
  CHECK(rep.accuracy >= 0.0);
  CHECK(rep.accuracy <= 1.0);
}

TEST_CASE("train/test split") {
  GenSpec spec;
  spec.bucket_edges = {0, 4};
  spec.total_texts = 23;
  spec.n_themes = 2;
  spec.max_positives = 1;
  spec.max_negatives = 1;
  auto data = generate_synthetic(spec, 2);  // 46 examples

  DatasetSplit split = shuffle_split_90_10(data, 42);
  CHECK(split.test.size() == 4);  // floor(46/10)
  CHECK(split.train.size() == 42);

  std::multiset<std::string> all, got;
  for (const auto& ex : data) all.insert(ex.text + "|" + ex.all_labels[0]);
  for (const auto& ex : split.train) got.insert(ex.text + "|" + ex.all_labels[0]);
  for (const auto& ex : split.test) got.insert(ex.text + "|" + ex.all_labels[0]);
  CHECK(all == got);

  DatasetSplit again = shuffle_split_90_10(data, 42);
  CHECK(again.test.size() == split.test.size());
  bool same = true;
  for (size_t i = 0; i < split.test.size(); ++i) same &= again.test[i].text == split.test[i].text;
  CHECK(same);
}

TEST_CASE("few-shot splits") {
  // 3 labels, 6 unique single-label examples each
  std::vector<LabeledExample> data;
  const std::vector<std::string> labels = {"x", "y", "z"};
  for (int i = 0; i < 18; ++i) {
    const std::string l = labels[i % 3];
    std::vector<std::string> cands = labels;
    data.push_back({l + " text " + std::to_string(i), cands, {l}});
  }

  SUBCASE("k examples per label land in the support set") {
    FewShotSplit fs = few_shot_split(data, 2, 7);
    CHECK(fs.support.size() == 6);
    CHECK(fs.query.size() == 12);
    std::unordered_map<std::string, int> per_label;
    for (const auto& ex : fs.support) per_label[ex.true_labels[0]] += 1;
    for (const auto& l : labels) CHECK(per_label[l] == 2);

    std::set<std::string> support_texts, query_texts;
    for (const auto& ex : fs.support) support_texts.insert(ex.text);
    for (const auto& ex : fs.query) query_texts.insert(ex.text);
    CHECK(support_texts.size() == 6);
    for (const auto& t : support_texts) CHECK(query_texts.count(t) == 0);
  }

  SUBCASE("k = 0 sends everything to the query set") {
    FewShotSplit fs = few_shot_split(data, 0, 7);
    CHECK(fs.support.empty());
    CHECK(fs.query.size() == data.size());
  }

  SUBCASE("shortage of examples is an error") {
    CHECK_THROWS_AS(few_shot_split(data, 6, 7), DataError);
    CHECK_THROWS_AS(few_shot_split(data, -1, 7), ConfigError);
  }

  SUBCASE("the split is seed-deterministic") {
    FewShotSplit a = few_shot_split(data, 2, 7);
    FewShotSplit b = few_shot_split(data, 2, 7);
    bool same = a.support.size() == b.support.size();
    for (size_t i = 0; same && i < a.support.size(); ++i) {
      same = a.support[i].text == b.support[i].text;
    }
    CHECK(same);
  }
}

TEST_CASE("throughput benchmark") {
  GenSpec spec;
  spec.bucket_edges = {0, 4};
  spec.total_texts = 4;
  spec.n_themes = 2;
  spec.max_positives = 1;
  spec.max_negatives = 1;
  auto data = generate_synthetic(spec, 3);
  Model m = tiny_model_for(data);

  BenchConfig cfg;
  cfg.label_counts = {1, 2};
  cfg.token_lengths = {4, 8};
  cfg.repeats = 1;

  SUBCASE("row grid and csv") {
    auto rows = run_benchmark({{"tiny", &m}}, cfg);
    REQUIRE(rows.size() == 8);  // 2x2 joint + 2x2 pairwise
    int joint = 0, pairwise = 0;
    for (const auto& r : rows) {
      if (r.model == "tiny") joint += 1;
      if (r.model == "tiny-pairwise") pairwise += 1;
      CHECK(!r.failed);
      CHECK(std::isfinite(r.examples_per_second));
      CHECK(r.examples_per_second > 0.0);
    }
    CHECK(joint == 4);
    CHECK(pairwise == 4);

    const std::string csv = bench_csv(rows);
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    CHECK(line == "model,labels,tokens,examples_per_second");
    int n = 0;
    while (std::getline(in, line)) {
      if (!line.empty()) n += 1;
    }
    CHECK(n == 8);
  }

  SUBCASE("oversized requests yield a failure row, not a crash") {
    BenchConfig big = cfg;
    big.token_lengths = {4096};
    big.label_counts = {1};
    auto rows = run_benchmark({{"tiny", &m}}, big);
    REQUIRE(!rows.empty());
    CHECK(rows[0].failed);
    CHECK(std::isnan(rows[0].examples_per_second));
    const std::string csv = bench_csv(rows);
    CHECK(csv.find("nan") != std::string::npos);
  }

  SUBCASE("bad configurations are rejected") {
    BenchConfig bad = cfg;
    bad.repeats = 0;
    CHECK_THROWS_AS(run_benchmark({{"tiny", &m}}, bad), ConfigError);
    bad = cfg;
    bad.label_counts.clear();
    CHECK_THROWS_AS(run_benchmark({{"tiny", &m}}, bad), ConfigError);
  }
}
