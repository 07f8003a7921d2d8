#include "gliclass/assembly.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

namespace gliclass {

namespace {

const std::vector<std::string>& reserved_names() {
  static const std::vector<std::string> names = {"<pad>", "<unk>", "<sep>", "<<label>>"};
  return names;
}

}  // namespace

std::vector<std::string> split_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&]() {
    if (!word.empty()) {
      out.push_back(word);
      word.clear();
    }
  };
  for (unsigned char ch : text) {
    if (std::isalnum(ch)) {
      word.push_back(static_cast<char>(std::tolower(ch)));
    } else if (std::isspace(ch)) {
      flush();
    } else {
      flush();
      out.push_back(std::string(1, static_cast<char>(ch)));
    }
  }
  flush();
  return out;
}

Vocab Vocab::from_tokens(const std::vector<std::string>& tokens) {
  Vocab v;
  v.id_to_token = reserved_names();
  std::set<std::string> uniq(tokens.begin(), tokens.end());
  for (const std::string& r : reserved_names()) uniq.erase(r);
  for (const std::string& t : uniq) v.id_to_token.push_back(t);
  for (size_t i = 0; i < v.id_to_token.size(); ++i) {
    v.token_to_id[v.id_to_token[i]] = static_cast<int>(i);
  }
  return v;
}

Vocab Vocab::build(const std::vector<std::string>& documents) {
  std::vector<std::string> toks;
  for (const std::string& doc : documents) {
    for (std::string& t : split_tokens(doc)) toks.push_back(std::move(t));
  }
  return from_tokens(toks);
}

Vocab Vocab::from_id_list(std::vector<std::string> tokens) {
  Vocab v;
  v.id_to_token = std::move(tokens);
  if (v.id_to_token.size() < kNumReserved) {
    throw DataError("vocab missing reserved tokens");
  }
  for (int i = 0; i < kNumReserved; ++i) {
    if (v.id_to_token[i] != reserved_names()[i]) {
      throw DataError("vocab reserved ids corrupted");
    }
  }
  for (size_t i = 0; i < v.id_to_token.size(); ++i) {
    v.token_to_id[v.id_to_token[i]] = static_cast<int>(i);
  }
  return v;
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocab file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  try {
    return from_id_list(std::move(lines));
  } catch (const DataError& e) {
    throw DataError(std::string(e.what()) + ": " + path);
  }
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write vocab file: " + path);
  for (const std::string& t : id_to_token) out << t << "\n";
}

int Vocab::id(const std::string& token) const {
  auto it = token_to_id.find(token);
  return it == token_to_id.end() ? kUnk : it->second;
}

std::vector<int> tokenize(const Vocab& vocab, const std::string& text) {
  std::vector<int> ids;
  for (const std::string& t : split_tokens(text)) ids.push_back(vocab.id(t));
  return ids;
}

std::string detokenize(const Vocab& vocab, const std::vector<int>& ids) {
  std::string out;
  for (int id : ids) {
    if (id < 0 || id >= vocab.size()) throw ContractError("detokenize: id out of range");
    if (!out.empty()) out.push_back(' ');
    out += vocab.id_to_token[id];
  }
  return out;
}

std::vector<std::vector<int>> AssembledInput::label_positions() const {
  std::vector<std::vector<int>> out(class_positions.size());
  for (size_t b = 0; b < class_positions.size(); ++b) {
    for (const auto& [idx, pos] : class_positions[b]) {
      (void)idx;
      out[b].push_back(pos);
    }
  }
  return out;
}

int AssembledInput::max_labels() const {
  int c = 0;
  for (int n : labels_per_example) c = std::max(c, n);
  return c;
}

AssembledInput assemble(const Vocab& vocab, const std::string& text,
                        const std::vector<std::string>& labels, int max_len) {
  if (labels.empty()) throw ConfigError("assemble: at least one candidate label required");
  std::set<std::string> seen;
  std::vector<int> ids;
  std::vector<std::pair<int, int>> positions;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (!seen.insert(labels[i]).second) {
      throw ConfigError("assemble: duplicate candidate label '" + labels[i] + "'");
    }
    std::vector<int> ltoks = tokenize(vocab, labels[i]);
    if (ltoks.empty()) throw ConfigError("assemble: empty label string");
    positions.emplace_back(static_cast<int>(i), static_cast<int>(ids.size()));
    ids.push_back(Vocab::kLabel);
    ids.insert(ids.end(), ltoks.begin(), ltoks.end());
  }
  ids.push_back(Vocab::kSep);
  const int text_start = static_cast<int>(ids.size());
  // The label block plus separator must leave room for at least one text token.
  if (text_start + 1 > max_len) {
    throw DataError("label overflow: " + std::to_string(labels.size()) +
                    " labels occupy " + std::to_string(text_start) +
                    " tokens, max_len is " + std::to_string(max_len));
  }
  std::vector<int> ttoks = tokenize(vocab, text);
  if (ttoks.empty()) throw DataError("assemble: text has no tokens");
  const int room = max_len - text_start;
  if (static_cast<int>(ttoks.size()) > room) ttoks.resize(room);
  ids.insert(ids.end(), ttoks.begin(), ttoks.end());

  AssembledInput out;
  const int l = static_cast<int>(ids.size());
  out.token_ids = IntMat(1, l, Vocab::kPad);
  out.attn_mask = IntMat(1, l, 1);
  for (int j = 0; j < l; ++j) out.token_ids.at(0, j) = ids[j];
  out.class_positions.push_back(std::move(positions));
  out.text_span.emplace_back(text_start, text_start + static_cast<int>(ttoks.size()));
  out.labels_per_example.push_back(static_cast<int>(labels.size()));
  return out;
}

AssembledInput batch(const std::vector<AssembledInput>& examples) {
  if (examples.empty()) throw ContractError("batch: empty example list");
  int rows = 0;
  int max_l = 0;
  for (const AssembledInput& e : examples) {
    rows += e.batch_size();
    max_l = std::max(max_l, e.length());
  }
  AssembledInput out;
  out.token_ids = IntMat(rows, max_l, Vocab::kPad);
  out.attn_mask = IntMat(rows, max_l, 0);
  int r = 0;
  for (const AssembledInput& e : examples) {
    for (int b = 0; b < e.batch_size(); ++b, ++r) {
      for (int j = 0; j < e.length(); ++j) {
        out.token_ids.at(r, j) = e.token_ids.at(b, j);
        out.attn_mask.at(r, j) = e.attn_mask.at(b, j);
      }
      out.class_positions.push_back(e.class_positions[b]);
      out.text_span.push_back(e.text_span[b]);
      out.labels_per_example.push_back(e.labels_per_example[b]);
    }
  }
  return out;
}

}  // namespace gliclass
