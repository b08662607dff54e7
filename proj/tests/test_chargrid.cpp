#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <set>

#include "formlink/chargrid.hpp"
#include "formlink/rng.hpp"

using namespace formlink;

namespace {

FormDocument doc_with_words(std::vector<WordBox> words, int w = 200, int h = 100) {
  FormDocument doc;
  doc.page_width = w;
  doc.page_height = h;
  Entity e;
  e.id = 0;
  e.label = Label::other;
  e.words = std::move(words);
  e.box = e.words.empty() ? Box{} : e.words[0].box;
  for (const auto& wd : e.words) {
    e.box.x1 = std::min(e.box.x1, wd.box.x1);
    e.box.y1 = std::min(e.box.y1, wd.box.y1);
    e.box.x2 = std::max(e.box.x2, wd.box.x2);
    e.box.y2 = std::max(e.box.y2, wd.box.y2);
  }
  doc.entities.push_back(std::move(e));
  return doc;
}

}  // namespace

TEST_CASE("vocabulary keeps the most frequent characters") {
  FormDocument doc = doc_with_words({{"AAAB", {0, 0, 40, 10}}});
  CharVocab v = build_vocab({doc}, 1);
  REQUIRE(v.size() == 1);
  CHECK(v.chars[0] == 'A');
  CHECK(v.index_of('A') == 1);
  CHECK(v.index_of('B') == 0);
}

TEST_CASE("frequency ties break by ascending code point") {
  FormDocument doc = doc_with_words({{"ABAB", {0, 0, 40, 10}}});
  CharVocab v = build_vocab({doc}, 2);
  REQUIRE(v.size() == 2);
  CHECK(v.chars[0] == 'A');
  CHECK(v.chars[1] == 'B');
}

TEST_CASE("vocabulary counting folds case to uppercase") {
  FormDocument doc = doc_with_words({{"aAbB", {0, 0, 40, 10}}});
  CharVocab v = build_vocab({doc}, 4);
  CHECK(v.size() == 2);
  CHECK(v.index_of('A') == 1);
}

TEST_CASE("a corpus with many distinct characters is capped at n") {
  std::string text;
  for (char c = '0'; c <= 'z'; ++c) text += c;
  FormDocument doc = doc_with_words({{text, {0, 0, 100, 10}}});
  CharVocab v = build_vocab({doc}, 90);
  CHECK(v.size() == std::min<int>(90, [&] {
          std::set<unsigned char> distinct;
          for (unsigned char c : text) distinct.insert(c >= 'a' && c <= 'z' ? c - 32 : c);
          return static_cast<int>(distinct.size());
        }()));
}

TEST_CASE("a corpus with no characters is an error") {
  FormDocument doc;
  doc.page_width = doc.page_height = 10;
  CHECK_THROWS_AS(build_vocab({doc}, 5), std::invalid_argument);
}

TEST_CASE("rasterize splits a word into equal horizontal slots") {
  // one word "AB" of height 8 at target 2 -> scale 4, box covers cells (0,0)-(3,1)
  FormDocument doc = doc_with_words({{"AB", {0, 0, 16, 8}}}, 16, 8);
  CharVocab v = build_vocab({doc}, 2);
  CharGrid g = rasterize(doc, v, 2.0);
  REQUIRE(g.width == 4);
  REQUIRE(g.height == 2);
  int a = v.index_of('A'), b = v.index_of('B');
  for (int y = 0; y < 2; ++y) {
    CHECK(g.at(y, 0) == a);
    CHECK(g.at(y, 1) == a);
    CHECK(g.at(y, 2) == b);
    CHECK(g.at(y, 3) == b);
  }
}

TEST_CASE("median height picks the sorted middle and sets the scale") {
  FormDocument doc = doc_with_words({{"A", {0, 0, 10, 10}},
                                     {"B", {0, 20, 10, 32}},
                                     {"C", {0, 40, 10, 60}}},
                                    100, 100);
  CHECK(median_word_height(doc) == doctest::Approx(12.0));
  CharVocab v = build_vocab({doc}, 3);
  CharGrid g = rasterize(doc, v, 3.0);
  CHECK(g.scale == doctest::Approx(4.0));
  // brute-force rescale check: word heights divided by the scale have median 3
  std::vector<double> rescaled = {10 / g.scale, 12 / g.scale, 20 / g.scale};
  std::sort(rescaled.begin(), rescaled.end());
  CHECK(rescaled[1] == doctest::Approx(3.0));
  CHECK(g.width == 25);
  CHECK(g.height == 25);
}

TEST_CASE("out-of-vocabulary characters rasterize to background") {
  FormDocument doc = doc_with_words({{"xyz", {0, 0, 12, 4}}}, 12, 4);
  FormDocument vocab_doc = doc_with_words({{"A", {0, 0, 4, 4}}}, 4, 4);
  CharVocab v = build_vocab({vocab_doc}, 1);
  CharGrid g = rasterize(doc, v, 4.0);
  for (auto c : g.cells) CHECK(c == 0);
}

TEST_CASE("rasterization never produces an index outside the vocabulary") {
  Rng rng(42);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<WordBox> words;
    int n = rng.uniform_int(1, 6);
    for (int i = 0; i < n; ++i) {
      std::string text;
      int len = rng.uniform_int(1, 8);
      for (int j = 0; j < len; ++j)
        text += static_cast<char>(rng.uniform_int(32, 126));
      int x = rng.uniform_int(0, 150), y = rng.uniform_int(0, 80);
      words.push_back({text, {x, y, x + rng.uniform_int(4, 40), y + rng.uniform_int(4, 16)}});
    }
    FormDocument doc = doc_with_words(words);
    CharVocab v = build_vocab({doc}, 10);
    CharGrid g = rasterize(doc, v, 3.0);
    for (auto c : g.cells) CHECK(c <= static_cast<uint16_t>(v.size()));
  }
}

TEST_CASE("one_hot is a partition of unity with background in channel 0") {
  FormDocument doc = doc_with_words({{"AB", {0, 0, 16, 8}}}, 32, 16);
  CharVocab v = build_vocab({doc}, 2);
  CharGrid g = rasterize(doc, v, 4.0);
  auto oh = one_hot<float>(g);
  REQUIRE(oh.shape == std::vector<int>{3, g.height, g.width});
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x) {
      float sum = 0;
      for (int c = 0; c <= 2; ++c) sum += oh.at(c, y, x);
      CHECK(sum == 1.0f);
      CHECK(oh.at(g.at(y, x), y, x) == 1.0f);
    }

  CharGrid empty = g;
  std::fill(empty.cells.begin(), empty.cells.end(), 0);
  auto oh0 = one_hot<float>(empty);
  for (int64_t i = 0; i < oh0.numel(); ++i)
    CHECK(oh0.data[static_cast<size_t>(i)] == (i < empty.height * empty.width ? 1.0f : 0.0f));
}

TEST_CASE("identity augmentation is a no-op") {
  FormDocument doc = doc_with_words({{"HELLO", {10, 10, 60, 22}}});
  AugmentConfig cfg;
  cfg.seed = 5;
  FormDocument out = augment(doc, cfg);
  CHECK(out == doc);
}

TEST_CASE("augmentation is deterministic given the seed") {
  FormDocument doc = doc_with_words({{"HELLO", {10, 10, 60, 22}}, {"WORLD", {10, 40, 60, 52}}});
  AugmentConfig cfg;
  cfg.p_char_replace = 0.3;
  cfg.replacement_chars = "ABC";
  cfg.max_shift = 2;
  cfg.max_rotate_deg = 3;
  cfg.max_pad = 2;
  cfg.seed = 99;
  CHECK(augment(doc, cfg) == augment(doc, cfg));
  cfg.seed = 100;
  CHECK(augment(doc, cfg) == augment(doc, cfg));
}

TEST_CASE("character replacement matches an independent replay of the draws") {
  FormDocument doc = doc_with_words({{"AAAA", {0, 0, 40, 10}}});
  AugmentConfig cfg;
  cfg.p_char_replace = 1.0;
  cfg.replacement_chars = "AB";
  cfg.seed = 123;
  FormDocument out = augment(doc, cfg);

  // replay the documented stream: one uniform() per character, then one
  // uniform_int over the replacement alphabet when it fires
  Rng replay(Rng::mix(cfg.seed, 0x617567ULL));
  std::string expected;
  for (int i = 0; i < 4; ++i) {
    double u = replay.uniform();
    REQUIRE(u < 1.0);
    expected += cfg.replacement_chars[static_cast<size_t>(replay.uniform_int(0, 1))];
  }
  CHECK(out.entities[0].words[0].text == expected);
}

TEST_CASE("augmentation preserves entity count, label multiset, and links") {
  FormDocument doc;
  doc.page_width = 300;
  doc.page_height = 200;
  for (int i = 0; i < 6; ++i) {
    Entity e;
    e.id = i;
    e.label = static_cast<Label>(i % 4);
    int x = 20 + 40 * (i % 3), y = 20 + 50 * (i / 3);
    e.box = {x, y, x + 30, y + 12};
    e.words = {{"WORD", e.box}};
    doc.entities.push_back(e);
  }
  doc.links = {{1, 2}, {5, 2}};
  AugmentConfig cfg;
  cfg.p_char_replace = 0.5;
  cfg.replacement_chars = "XYZ";
  cfg.max_shift = 2;
  cfg.max_rotate_deg = 5;
  cfg.max_shear = 0.05;
  cfg.scale_lo = 0.9;
  cfg.scale_hi = 1.1;
  cfg.max_pad = 3;
  for (uint64_t seed = 0; seed < 8; ++seed) {
    cfg.seed = seed;
    FormDocument out = augment(doc, cfg);
    REQUIRE(out.entities.size() == doc.entities.size());
    std::multiset<Label> la, lb;
    for (const auto& e : doc.entities) la.insert(e.label);
    for (const auto& e : out.entities) lb.insert(e.label);
    CHECK(la == lb);
    CHECK(out.links == doc.links);
  }
}

TEST_CASE("a transform that pushes everything off the page is an error") {
  FormDocument doc = doc_with_words({{"A", {0, 0, 4, 4}}}, 10, 10);
  AugmentConfig cfg;
  cfg.scale_lo = cfg.scale_hi = 100.0;  // blows every box far past the page
  cfg.seed = 1;
  CHECK_THROWS_AS(augment(doc, cfg), std::runtime_error);
}

TEST_CASE("char-grid binary round trip") {
  CharGrid g;
  g.height = 3;
  g.width = 5;
  g.n_char = 7;
  g.scale = 4.0;
  g.cells = {0, 1, 2, 3, 4, 5, 6, 7, 0, 1, 2, 3, 4, 5, 6};
  auto bytes = grid_to_bytes(g);
  CHECK(bytes[0] == 'C');
  CHECK(bytes[1] == 'G');
  CHECK(bytes[2] == 'R');
  CHECK(bytes[3] == 'D');
  CharGrid back = grid_from_bytes(bytes);
  CHECK(back.height == g.height);
  CHECK(back.width == g.width);
  CHECK(back.n_char == g.n_char);
  CHECK(back.cells == g.cells);
}
