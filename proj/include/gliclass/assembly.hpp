#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gliclass/error.hpp"
#include "gliclass/tensor.hpp"

namespace gliclass {

// Lowercased word/punctuation split: alphanumeric runs are words, any other
// non-space character is its own token.
std::vector<std::string> split_tokens(const std::string& text);

// Toy word-level vocabulary. Ids 0..3 are reserved and stable across
// save/load; regular tokens follow in sorted order.
struct Vocab {
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kSep = 2;
  static constexpr int kLabel = 3;  // the <<LABEL>> marker
  static constexpr int kNumReserved = 4;

  std::vector<std::string> id_to_token;
  std::unordered_map<std::string, int> token_to_id;

  static Vocab from_tokens(const std::vector<std::string>& tokens);
  static Vocab build(const std::vector<std::string>& documents);
  static Vocab from_id_list(std::vector<std::string> tokens);
  static Vocab load(const std::string& path);
  void save(const std::string& path) const;

  int id(const std::string& token) const;  // kUnk for out-of-vocab
  int size() const { return static_cast<int>(id_to_token.size()); }
};

std::vector<int> tokenize(const Vocab& vocab, const std::string& text);
std::string detokenize(const Vocab& vocab, const std::vector<int>& ids);

// Joint label+text layout:
//   [LABEL l1-tokens ... LABEL lC-tokens SEP text-tokens PAD...]
// Truncation removes text tokens from the right, never label tokens.
struct AssembledInput {
  IntMat token_ids;  // [B,L]
  IntMat attn_mask;  // [B,L], 1 = real token
  // Per example: (label_index, position of its LABEL marker), positions
  // strictly increasing, label_index == list index.
  std::vector<std::vector<std::pair<int, int>>> class_positions;
  std::vector<std::pair<int, int>> text_span;  // [start, end) per example
  std::vector<int> labels_per_example;

  int batch_size() const { return token_ids.rows; }
  int length() const { return token_ids.cols; }
  // Marker positions only, per example (feed for gather_positions).
  std::vector<std::vector<int>> label_positions() const;
  int max_labels() const;
};

AssembledInput assemble(const Vocab& vocab, const std::string& text,
                        const std::vector<std::string>& labels, int max_len);

// Pads a list of assembled inputs to the batch max length (dynamic padding).
AssembledInput batch(const std::vector<AssembledInput>& examples);

}  // namespace gliclass
