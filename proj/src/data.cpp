#include "gliclass/data.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

namespace gliclass {

void LabeledExample::validate() const {
  if (text.empty()) throw DataError("example: empty text");
  if (all_labels.empty()) throw DataError("example: empty candidate label set");
  std::set<std::string> all(all_labels.begin(), all_labels.end());
  if (all.size() != all_labels.size()) throw DataError("example: duplicate candidate labels");
  std::set<std::string> truth(true_labels.begin(), true_labels.end());
  if (truth.size() != true_labels.size()) throw DataError("example: duplicate true labels");
  for (const std::string& t : true_labels) {
    if (!all.count(t)) throw DataError("example: true label '" + t + "' not a candidate");
  }
}

std::vector<LabeledExample> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset: " + path);
  std::vector<LabeledExample> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    lineno += 1;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    LabeledExample ex;
    try {
      nlohmann::json j = nlohmann::json::parse(line);
      ex.text = j.at("text").get<std::string>();
      ex.all_labels = j.at("all_labels").get<std::vector<std::string>>();
      ex.true_labels = j.at("true_labels").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError("dataset " + path + " line " + std::to_string(lineno) + ": " + e.what());
    }
    try {
      ex.validate();
    } catch (const DataError& e) {
      throw DataError("dataset " + path + " line " + std::to_string(lineno) + ": " + e.what());
    }
    out.push_back(std::move(ex));
  }
  return out;
}

void save_dataset(const std::string& path, const std::vector<LabeledExample>& examples) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write dataset: " + path);
  for (const LabeledExample& ex : examples) {
    nlohmann::json j;
    j["text"] = ex.text;
    j["all_labels"] = ex.all_labels;
    j["true_labels"] = ex.true_labels;
    out << j.dump() << '\n';
  }
  if (!out) throw DataError("failed writing dataset: " + path);
}

namespace {

template <typename T>
void seeded_shuffle(std::vector<T>& v, Rng& rng) {
  for (size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[rng.below(static_cast<uint64_t>(i))]);
  }
}

}  // namespace

DatasetSplit shuffle_split_90_10(std::vector<LabeledExample> examples, uint64_t seed) {
  Rng rng(seed);
  seeded_shuffle(examples, rng);
  const size_t n_test = examples.size() / 10;
  DatasetSplit out;
  out.test.assign(examples.end() - n_test, examples.end());
  out.train.assign(examples.begin(), examples.end() - n_test);
  return out;
}

namespace {

const std::vector<std::string> kThemeNames = {
    "astronomy", "cooking",     "football", "medicine", "music",  "gardening",
    "finance",   "aviation",    "ocean",    "chess",    "weather", "programming",
    "painting",  "geology",     "coffee",   "trains"};

const std::vector<std::vector<std::string>> kThemeKeywords = {
    {"telescope", "nebula", "galaxy", "comet", "orbit", "asteroid", "supernova", "quasar",
     "eclipse", "lunar", "meteor", "constellation", "pulsar", "cosmos", "starlight", "planet",
     "astronomer", "observatory", "celestial", "redshift"},
    {"recipe", "oven", "simmer", "saute", "whisk", "marinade", "garlic", "flour", "butter",
     "skillet", "seasoning", "broth", "knead", "bake", "chef", "cuisine", "spice", "grill",
     "stew", "dough"},
    {"goalkeeper", "midfield", "penalty", "striker", "offside", "stadium", "referee", "corner",
     "dribble", "tackle", "league", "fixture", "crossbar", "winger", "kickoff", "defender",
     "transfer", "header", "touchline", "derby"},
    {"diagnosis", "physician", "symptom", "antibiotic", "vaccine", "surgery", "patient",
     "clinic", "prescription", "therapy", "anatomy", "infection", "dosage", "pathology",
     "nurse", "immune", "chronic", "remission", "cardiology", "triage"},
    {"melody", "harmony", "chord", "tempo", "orchestra", "violin", "concerto", "rhythm",
     "sonata", "composer", "guitar", "percussion", "soprano", "acoustic", "ensemble",
     "refrain", "octave", "ballad", "symphony", "tuning"},
    {"compost", "seedling", "pruning", "mulch", "perennial", "trellis", "fertilizer", "bloom",
     "weeding", "greenhouse", "shrub", "topsoil", "germinate", "hedge", "watering", "orchard",
     "lawn", "transplant", "pollinator", "flowerbed"},
    {"dividend", "portfolio", "equity", "bond", "inflation", "liquidity", "arbitrage", "audit",
     "ledger", "interest", "mortgage", "broker", "asset", "yield", "currency", "invoice",
     "budget", "credit", "taxation", "treasury"},
    {"runway", "cockpit", "altitude", "fuselage", "turbine", "pilot", "airspace", "hangar",
     "takeoff", "landing", "aileron", "airliner", "throttle", "radar", "turbulence",
     "propeller", "jetliner", "airport", "glider", "autopilot"},
    {"reef", "tide", "plankton", "seaweed", "dolphin", "whale", "lagoon", "seabed", "coral",
     "kelp", "trench", "buoy", "sonar", "shoreline", "saltwater", "seafloor", "abyss",
     "driftwood", "estuary", "mollusk"},
    {"gambit", "checkmate", "endgame", "bishop", "knight", "rook", "pawn", "castling",
     "stalemate", "zugzwang", "grandmaster", "blitz", "sacrifice", "tactic", "queenside",
     "kingside", "blunder", "notation", "tournament", "midgame"},
    {"forecast", "drizzle", "thunderstorm", "humidity", "barometer", "cyclone", "hail", "fog",
     "blizzard", "breeze", "downpour", "frost", "monsoon", "overcast", "lightning", "gust",
     "sleet", "heatwave", "rainfall", "meteorology"},
    {"compiler", "debugger", "syntax", "variable", "algorithm", "iterator", "recursion",
     "bytecode", "refactor", "repository", "kernel", "pointer", "closure", "thread", "parser",
     "linker", "codebase", "snippet", "bugfix", "stacktrace"},
    {"canvas", "palette", "watercolor", "brushstroke", "easel", "fresco", "portrait",
     "impasto", "acrylic", "pigment", "mural", "sketch", "gallery", "varnish", "gouache",
     "charcoal", "vignette", "texture", "framing", "exhibition"},
    {"sediment", "magma", "tectonic", "mineral", "erosion", "basalt", "fossil", "stratum",
     "quartz", "seismic", "volcano", "limestone", "crust", "fault", "glacier", "granite",
     "bedrock", "aquifer", "canyon", "epoch"},
    {"espresso", "latte", "roastery", "arabica", "barista", "brewing", "grinder", "cappuccino",
     "caffeine", "crema", "decaf", "filter", "mocha", "portafilter", "robusta", "tamper",
     "macchiato", "bean", "aroma", "percolator"},
    {"locomotive", "caboose", "railcar", "conductor", "freight", "railyard", "timetable",
     "platform", "junction", "viaduct", "gauge", "steam", "diesel", "carriage", "tramway",
     "railway", "sleeper", "crossing", "ballast", "station"}};

}  // namespace

const std::vector<std::string>& theme_names() { return kThemeNames; }
const std::vector<std::vector<std::string>>& theme_keywords() { return kThemeKeywords; }

void GenSpec::validate() const {
  if (bucket_edges.size() < 2) throw ConfigError("gen: need at least two bucket edges");
  for (size_t i = 1; i < bucket_edges.size(); ++i) {
    if (bucket_edges[i] <= bucket_edges[i - 1]) {
      throw ConfigError("gen: bucket edges must be strictly increasing");
    }
  }
  if (bucket_edges[0] < 0) throw ConfigError("gen: bucket edges must be non-negative");
  if (total_texts < static_cast<int>(bucket_edges.size())) {
    throw ConfigError("gen: total_texts smaller than bucket count");
  }
  if (n_themes < 1 || n_themes > static_cast<int>(kThemeNames.size())) {
    throw ConfigError("gen: n_themes out of range");
  }
  if (max_positives < 1 || max_positives > n_themes) {
    throw ConfigError("gen: max_positives must be in [1, n_themes]");
  }
  if (min_negatives < 0 || max_negatives < min_negatives) {
    throw ConfigError("gen: negative-label range invalid");
  }
  if (theme_offset < 0 || theme_offset >= static_cast<int>(kThemeNames.size())) {
    throw ConfigError("gen: theme_offset out of range");
  }
}

std::vector<LabeledExample> generate_synthetic(const GenSpec& spec, uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  const int n_total_themes = static_cast<int>(kThemeNames.size());
  std::vector<int> themes(spec.n_themes);
  for (int i = 0; i < spec.n_themes; ++i) themes[i] = (spec.theme_offset + i) % n_total_themes;

  // bucket i < n-1 covers [max(1, edge_i), edge_{i+1} - 1]; the final bucket
  // is exactly the last edge
  const int n_buckets = static_cast<int>(spec.bucket_edges.size());
  std::vector<LabeledExample> out;
  out.reserve(2 * static_cast<size_t>(spec.total_texts));
  for (int b = 0; b < n_buckets; ++b) {
    int count = spec.total_texts / n_buckets + (b < spec.total_texts % n_buckets ? 1 : 0);
    const int lo = b + 1 < n_buckets ? std::max(1, spec.bucket_edges[b]) : spec.bucket_edges[b];
    const int hi = b + 1 < n_buckets ? spec.bucket_edges[b + 1] - 1 : spec.bucket_edges[b];
    for (int t = 0; t < count; ++t) {
      const int wc = lo + static_cast<int>(rng.below(static_cast<uint64_t>(hi - lo + 1)));
      const int pos_cap = std::min({spec.max_positives, wc, spec.n_themes});
      const int n_pos = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(pos_cap)));

      std::vector<int> order = themes;
      seeded_shuffle(order, rng);
      std::vector<int> pos(order.begin(), order.begin() + n_pos);
      std::vector<int> rest(order.begin() + n_pos, order.end());

      std::vector<std::string> words;
      words.reserve(wc);
      for (int p : pos) {
        const auto& kw = kThemeKeywords[p];
        words.push_back(kw[rng.below(kw.size())]);
      }
      for (int i = n_pos; i < wc; ++i) {
        const auto& kw = kThemeKeywords[pos[rng.below(pos.size())]];
        words.push_back(kw[rng.below(kw.size())]);
      }
      seeded_shuffle(words, rng);
      std::string text;
      for (size_t i = 0; i < words.size(); ++i) {
        if (i) text += ' ';
        text += words[i];
      }

      std::vector<std::string> truth;
      for (int p : pos) truth.push_back(kThemeNames[p]);

      // each text appears twice with an independently drawn candidate set
      for (int dup = 0; dup < 2; ++dup) {
        const int neg_span = spec.max_negatives - spec.min_negatives + 1;
        int n_neg = spec.min_negatives + static_cast<int>(rng.below(neg_span));
        n_neg = std::min<int>(n_neg, static_cast<int>(rest.size()));
        std::vector<int> negs = rest;
        seeded_shuffle(negs, rng);
        negs.resize(n_neg);

        LabeledExample ex;
        ex.text = text;
        ex.true_labels = truth;
        ex.all_labels = truth;
        for (int ni : negs) ex.all_labels.push_back(kThemeNames[ni]);
        seeded_shuffle(ex.all_labels, rng);
        out.push_back(std::move(ex));
      }
    }
  }
  return out;
}

Vocab vocab_from_dataset(const std::vector<LabeledExample>& examples) {
  std::vector<std::string> docs;
  docs.reserve(examples.size() * 2);
  for (const LabeledExample& ex : examples) {
    docs.push_back(ex.text);
    for (const std::string& l : ex.all_labels) docs.push_back(l);
  }
  return Vocab::build(docs);
}

MetricsReport compute_metrics(const std::vector<std::vector<std::string>>& gold,
                              const std::vector<std::vector<std::string>>& pred,
                              const std::vector<std::vector<std::string>>& candidates) {
  if (gold.size() != pred.size() || gold.size() != candidates.size()) {
    throw ContractError("compute_metrics: size mismatch");
  }
  MetricsReport rep;
  rep.n_examples = static_cast<int>(gold.size());
  std::unordered_map<std::string, size_t> index;
  auto stats_for = [&](const std::string& label) -> LabelStats& {
    auto it = index.find(label);
    if (it == index.end()) {
      it = index.emplace(label, rep.per_label.size()).first;
      rep.per_label.push_back(LabelStats{label, 0, 0, 0, 0, 0.0, 0.0, 0.0});
    }
    return rep.per_label[it->second];
  };

  int exact = 0;
  for (size_t i = 0; i < gold.size(); ++i) {
    std::unordered_set<std::string> g(gold[i].begin(), gold[i].end());
    std::unordered_set<std::string> p(pred[i].begin(), pred[i].end());
    if (g == p) exact += 1;
    for (const std::string& c : candidates[i]) {
      LabelStats& s = stats_for(c);
      const bool in_g = g.count(c) > 0;
      const bool in_p = p.count(c) > 0;
      if (in_g) s.support += 1;
      if (in_g && in_p) s.tp += 1;
      if (!in_g && in_p) s.fp += 1;
      if (in_g && !in_p) s.fn += 1;
    }
  }

  long tp_sum = 0, fp_sum = 0, fn_sum = 0;
  double macro_acc = 0.0;
  int macro_n = 0;
  for (LabelStats& s : rep.per_label) {
    s.precision = s.tp + s.fp > 0 ? static_cast<double>(s.tp) / (s.tp + s.fp) : 0.0;
    s.recall = s.tp + s.fn > 0 ? static_cast<double>(s.tp) / (s.tp + s.fn) : 0.0;
    s.f1 = s.precision + s.recall > 0.0
               ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
               : 0.0;
    tp_sum += s.tp;
    fp_sum += s.fp;
    fn_sum += s.fn;
    if (s.support > 0) {
      macro_acc += s.f1;
      macro_n += 1;
    }
  }
  rep.macro_f1 = macro_n > 0 ? macro_acc / macro_n : 0.0;
  rep.micro_f1 = 2 * tp_sum + fp_sum + fn_sum > 0
                     ? 2.0 * tp_sum / (2.0 * tp_sum + fp_sum + fn_sum)
                     : 0.0;
  rep.accuracy = rep.n_examples > 0 ? static_cast<double>(exact) / rep.n_examples : 0.0;
  return rep;
}

std::string MetricsReport::to_text() const {
  std::ostringstream os;
  os << "label                     precision    recall        f1   support\n";
  char buf[160];
  for (const LabelStats& s : per_label) {
    std::snprintf(buf, sizeof buf, "%-24s %9.4f %9.4f %9.4f %9d\n", s.label.c_str(), s.precision,
                  s.recall, s.f1, s.support);
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "macro_f1 %.6f\nmicro_f1 %.6f\naccuracy %.6f\nexamples %d\n",
                macro_f1, micro_f1, accuracy, n_examples);
  os << buf;
  return os.str();
}

MetricsReport evaluate(const Model& m, const std::vector<LabeledExample>& examples,
                       double threshold) {
  std::vector<std::vector<std::string>> gold, pred, candidates;
  gold.reserve(examples.size());
  const size_t chunk = 16;
  for (size_t start = 0; start < examples.size(); start += chunk) {
    const size_t end = std::min(examples.size(), start + chunk);
    std::vector<std::string> texts;
    std::vector<std::vector<std::string>> labels;
    for (size_t i = start; i < end; ++i) {
      texts.push_back(examples[i].text);
      labels.push_back(examples[i].all_labels);
    }
    ForwardResult r = m.forward(texts, labels);
    const int c_max = r.class_valid.cols;
    for (size_t i = start; i < end; ++i) {
      const int bi = static_cast<int>(i - start);
      std::vector<std::string> p;
      for (size_t j = 0; j < examples[i].all_labels.size(); ++j) {
        const double logit = r.logits.values()[bi * c_max + j];
        const double prob = 1.0 / (1.0 + std::exp(-logit));
        if (prob > threshold) p.push_back(examples[i].all_labels[j]);
      }
      gold.push_back(examples[i].true_labels);
      pred.push_back(std::move(p));
      candidates.push_back(examples[i].all_labels);
    }
  }
  return compute_metrics(gold, pred, candidates);
}

FewShotSplit few_shot_split(const std::vector<LabeledExample>& examples, int k, uint64_t seed) {
  if (k < 0) throw ConfigError("few_shot_split: k must be >= 0");
  FewShotSplit out;
  if (k == 0) {
    out.query = examples;
    return out;
  }
  std::unordered_map<std::string, int> need;
  std::unordered_map<std::string, int> have;
  for (const LabeledExample& ex : examples) {
    for (const std::string& l : ex.true_labels) {
      need[l] = k;
      have[l] += 1;
    }
  }
  for (const auto& [label, n] : have) {
    if (n < k + 1) {
      throw DataError("few_shot_split: label '" + label + "' has " + std::to_string(n) +
                      " examples, needs " + std::to_string(k + 1));
    }
  }

  std::vector<int> order(examples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  Rng rng(seed);
  seeded_shuffle(order, rng);

  for (int idx : order) {
    const LabeledExample& ex = examples[idx];
    bool take = !ex.true_labels.empty();
    for (const std::string& l : ex.true_labels) {
      if (need[l] <= 0) take = false;
    }
    if (take) {
      for (const std::string& l : ex.true_labels) need[l] -= 1;
      out.support.push_back(ex);
    } else {
      out.query.push_back(ex);
    }
  }
  for (const auto& [label, n] : need) {
    if (n > 0) {
      throw DataError("few_shot_split: could not assemble " + std::to_string(k) +
                      " support examples for label '" + label + "'");
    }
  }
  return out;
}

void BenchConfig::validate() const {
  if (label_counts.empty() || token_lengths.empty()) {
    throw ConfigError("bench: empty label or token grid");
  }
  for (int l : label_counts) {
    if (l < 1) throw ConfigError("bench: label counts must be positive");
  }
  for (int t : token_lengths) {
    if (t < 1) throw ConfigError("bench: token lengths must be positive");
  }
  if (repeats < 1) throw ConfigError("bench: repeats must be >= 1");
}

namespace {

// distinct single-token label strings and a text of exactly `tokens` words,
// built from the model's own vocabulary
std::vector<std::string> bench_labels(const Vocab& vocab, int count) {
  std::vector<std::string> out;
  const int first = Vocab::kNumReserved;
  for (int i = 0; i < count; ++i) {
    const int id = first + i;
    if (id < vocab.size()) {
      out.push_back(vocab.id_to_token[id]);
    } else {
      out.push_back("label" + std::to_string(i));
    }
  }
  return out;
}

std::string bench_text(const Vocab& vocab, int tokens, int label_count) {
  // skip the words used as labels so label/text content stays distinct
  const int first = Vocab::kNumReserved + label_count;
  std::string text;
  for (int i = 0; i < tokens; ++i) {
    const int id = first + i % std::max(1, vocab.size() - first);
    if (i) text += ' ';
    text += id < vocab.size() ? vocab.id_to_token[id] : "word";
  }
  return text;
}

double time_seconds(const std::function<void()>& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double>(t1 - t0).count();
}

}  // namespace

std::vector<BenchRow> run_benchmark(
    const std::vector<std::pair<std::string, const Model*>>& models, const BenchConfig& cfg) {
  cfg.validate();
  if (models.empty()) throw ConfigError("bench: no models");
  std::vector<BenchRow> rows;
  for (const auto& [name, model] : models) {
    for (int tokens : cfg.token_lengths) {
      for (int labels : cfg.label_counts) {
        const std::vector<std::string> labs = bench_labels(model->vocab, labels);
        const std::string text = bench_text(model->vocab, tokens, labels);

        BenchRow joint{name, labels, tokens, 0.0, false};
        try {
          ForwardResult warm = model->forward({text}, {labs});
          const auto [s, e] = warm.assembled.text_span[0];
          if (model->config.variant != Variant::bi && e - s < tokens) {
            throw DataError("bench: text truncated by label block");
          }
          const double secs = time_seconds([&] {
            for (int r = 0; r < cfg.repeats; ++r) model->forward({text}, {labs});
          });
          joint.examples_per_second = cfg.repeats / secs;
        } catch (const std::exception&) {
          joint.examples_per_second = std::numeric_limits<double>::quiet_NaN();
          joint.failed = true;
        }
        rows.push_back(joint);

        if (!cfg.pairwise_baseline) continue;
        BenchRow pair{name + "-pairwise", labels, tokens, 0.0, false};
        try {
          for (const std::string& l : labs) {  // warmup, same honesty check
            ForwardResult warm = model->forward({text}, {{l}});
            const auto [s, e] = warm.assembled.text_span[0];
            if (model->config.variant != Variant::bi && e - s < tokens) {
              throw DataError("bench: text truncated by label block");
            }
          }
          const double secs = time_seconds([&] {
            for (int r = 0; r < cfg.repeats; ++r) {
              for (const std::string& l : labs) model->forward({text}, {{l}});
            }
          });
          pair.examples_per_second = cfg.repeats / secs;
        } catch (const std::exception&) {
          pair.examples_per_second = std::numeric_limits<double>::quiet_NaN();
          pair.failed = true;
        }
        rows.push_back(pair);
      }
    }
  }
  return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << "model,labels,tokens,examples_per_second\n";
  for (const BenchRow& r : rows) {
    os << r.model << ',' << r.labels << ',' << r.tokens << ',';
    if (r.failed) {
      os << "nan";
    } else {
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.6g", r.examples_per_second);
      os << buf;
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace gliclass
