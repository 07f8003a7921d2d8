#include <cstdio>
#include <string>
#include <vector>

#include "doctest.h"
#include "gliclass/assembly.hpp"

using namespace gliclass;

TEST_CASE("split and tokenize") {
  CHECK(split_tokens("").empty());
  CHECK(split_tokens("Hello, world") == std::vector<std::string>{"hello", ",", "world"});
  CHECK(split_tokens("a  b\tc\nd") == std::vector<std::string>{"a", "b", "c", "d"});
  CHECK(split_tokens("x1-y2") == std::vector<std::string>{"x1", "-", "y2"});

  Vocab v = Vocab::build({"Hello, world", "the cat"});
  CHECK(tokenize(v, "").empty());
  std::vector<int> ids = tokenize(v, "Hello, world");
  CHECK(ids == std::vector<int>{v.id("hello"), v.id(","), v.id("world")});
  CHECK(v.id("zebra") == Vocab::kUnk);

  // round trip for in-vocab ids
  std::vector<int> in = {v.id("the"), v.id("cat"), v.id(",")};
  CHECK(tokenize(v, detokenize(v, in)) == in);
}

TEST_CASE("vocab reserved ids and save/load") {
  Vocab v = Vocab::build({"zoo apple mango"});
  CHECK(v.id_to_token[Vocab::kPad] == "<pad>");
  CHECK(v.id_to_token[Vocab::kUnk] == "<unk>");
  CHECK(v.id_to_token[Vocab::kSep] == "<sep>");
  CHECK(v.id_to_token[Vocab::kLabel] == "<<label>>");
  // regular tokens sorted after the reserved block
  CHECK(v.id("apple") == 4);
  CHECK(v.id("mango") == 5);
  CHECK(v.id("zoo") == 6);

  const std::string path = "test_vocab.txt";
  v.save(path);
  Vocab w = Vocab::load(path);
  CHECK(w.id_to_token == v.id_to_token);
  CHECK(w.id("mango") == v.id("mango"));
  std::remove(path.c_str());
}

TEST_CASE("assemble layout") {
  Vocab v = Vocab::build({"hi there big wide world", "a b c"});
  SUBCASE("single label") {
    AssembledInput x = assemble(v, "hi", {"a"}, 16);
    REQUIRE(x.class_positions.size() == 1);
    CHECK(x.class_positions[0] == std::vector<std::pair<int, int>>{{0, 0}});
    // layout: LABEL a SEP hi
    CHECK(x.token_ids.at(0, 0) == Vocab::kLabel);
    CHECK(x.token_ids.at(0, 1) == v.id("a"));
    CHECK(x.token_ids.at(0, 2) == Vocab::kSep);
    CHECK(x.token_ids.at(0, 3) == v.id("hi"));
    CHECK(x.text_span[0] == std::pair<int, int>{3, 4});
    CHECK(x.labels_per_example[0] == 1);
  }
  SUBCASE("three labels, strictly increasing marker positions") {
    AssembledInput x = assemble(v, "hi", {"a", "b", "c"}, 32);
    REQUIRE(x.class_positions[0].size() == 3);
    int prev = -1;
    for (size_t i = 0; i < 3; ++i) {
      CHECK(x.class_positions[0][i].first == static_cast<int>(i));
      CHECK(x.class_positions[0][i].second > prev);
      prev = x.class_positions[0][i].second;
      CHECK(x.token_ids.at(0, x.class_positions[0][i].second) == Vocab::kLabel);
    }
    // text span disjoint from label block
    CHECK(x.text_span[0].first > x.class_positions[0][2].second);
  }
  SUBCASE("long text truncated from the right, labels intact") {
    std::string text;
    for (int i = 0; i < 2000; ++i) text += "world ";
    AssembledInput x = assemble(v, text, {"a", "b"}, 1024);
    CHECK(x.length() == 1024);
    CHECK(x.labels_per_example[0] == 2);
    CHECK(x.token_ids.at(0, 0) == Vocab::kLabel);
    CHECK(x.text_span[0].second == 1024);
    // every position is real (mask 1) pre-batching
    int msum = 0;
    for (int j = 0; j < x.length(); ++j) msum += x.attn_mask.at(0, j);
    CHECK(msum == 1024);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(assemble(v, "hi", {}, 32), ConfigError);
    CHECK_THROWS_AS(assemble(v, "hi", {"a", "a"}, 32), ConfigError);
    CHECK_THROWS_AS(assemble(v, "hi", {"  "}, 32), ConfigError);
    CHECK_THROWS_AS(assemble(v, "", {"a"}, 32), DataError);
    // 4 labels need 8 slots + sep + 1 text = 10 > 9 -> overflow
    CHECK_THROWS_AS(assemble(v, "hi", {"a", "b", "c", "big"}, 9), DataError);
  }
}

TEST_CASE("batching with dynamic padding") {
  Vocab v = Vocab::build({"one two three four five six seven"});
  AssembledInput a = assemble(v, "one two", {"six"}, 64);         // len 5
  AssembledInput b = assemble(v, "one two three four", {"six", "seven"}, 64);  // len 9
  CHECK(a.length() == 5);
  CHECK(b.length() == 9);

  SUBCASE("single example unchanged except batch dim") {
    AssembledInput x = batch({a});
    CHECK(x.batch_size() == 1);
    CHECK(x.length() == 5);
    CHECK(x.token_ids.v == a.token_ids.v);
  }
  SUBCASE("pads to batch max, masks mark padding") {
    AssembledInput x = batch({a, b});
    CHECK(x.batch_size() == 2);
    CHECK(x.length() == 9);
    int m0 = 0, m1 = 0;
    for (int j = 0; j < 9; ++j) {
      m0 += x.attn_mask.at(0, j);
      m1 += x.attn_mask.at(1, j);
    }
    CHECK(m0 == 5);
    CHECK(m1 == 9);
    for (int j = 5; j < 9; ++j) CHECK(x.token_ids.at(0, j) == Vocab::kPad);
    // ragged label counts preserved
    CHECK(x.labels_per_example == std::vector<int>{1, 2});
    CHECK(x.max_labels() == 2);
    CHECK(x.label_positions()[1].size() == 2);
  }
}
