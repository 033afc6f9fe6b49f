#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "mbch/iwv.hpp"

using namespace mbch;
using mbch::test::TempDir;
using mbch::test::read_file;
using mbch::test::write_file;

TEST_CASE("word vectors parse the headered text layout") {
  TempDir dir;
  auto path = dir.path() / "vecs.txt";
  write_file(path, "2 3\ngood 0.1 0.2 0.3\nbad -0.1 -0.2 -0.3\n");
  WordVectorTable table = load_word_vectors(path, 7);
  CHECK(table.dim == 3);
  CHECK(table.entries.size() == 2);
  CHECK(table.contains("good"));
  CHECK(table.lookup("good") == std::vector<double>{0.1, 0.2, 0.3});
  CHECK(table.lookup("bad")[2] == -0.3);
}

TEST_CASE("word vectors work without the count header") {
  TempDir dir;
  auto path = dir.path() / "vecs.txt";
  write_file(path, "good 1 2\nbad 3 4\n");
  WordVectorTable table = load_word_vectors(path);
  CHECK(table.dim == 2);
  CHECK(table.entries.size() == 2);
}

TEST_CASE("duplicate words keep the first vector") {
  TempDir dir;
  auto path = dir.path() / "vecs.txt";
  write_file(path, "good 1 2\ngood 9 9\n");
  WordVectorTable table = load_word_vectors(path);
  CHECK(table.entries.size() == 1);
  CHECK(table.duplicates_skipped == 1);
  CHECK(table.lookup("good") == std::vector<double>{1.0, 2.0});
}

TEST_CASE("malformed word-vector lines raise ParseError") {
  TempDir dir;
  auto path = dir.path() / "vecs.txt";
  write_file(path, "good 1 2\nbad 3\n");
  CHECK_THROWS_AS(load_word_vectors(path), ParseError);
  write_file(path, "good 1 oops\n");
  CHECK_THROWS_AS(load_word_vectors(path), ParseError);
  write_file(path, "");
  CHECK_THROWS_AS(load_word_vectors(path), ParseError);
}

TEST_CASE("OOV lookups are deterministic and bounded") {
  TempDir dir;
  auto path = dir.path() / "vecs.txt";
  write_file(path, "good 1 2 3 4\n");
  WordVectorTable table = load_word_vectors(path, 42);

  auto a = table.lookup("zyzzyva");
  auto b = table.lookup("zyzzyva");
  CHECK(a == b);
  CHECK(a.size() == 4);
  for (double v : a) {
    CHECK(v >= -0.25);
    CHECK(v <= 0.25);
  }
  // Different word, almost surely a different draw.
  CHECK(table.lookup("qwerty") != a);

  // A different seed re-rolls the whole OOV space.
  WordVectorTable other = load_word_vectors(path, 43);
  CHECK(other.lookup("zyzzyva") != a);
}

TEST_CASE("lexicon parses tab-separated scores and tracks the range") {
  TempDir dir;
  auto path = dir.path() / "lex.txt";
  write_file(path, "good\t1.9\nbad\t-2.5\n");
  Lexicon lex = load_lexicon(path, "toy");
  CHECK(lex.name == "toy");
  CHECK(lex.size() == 2);
  CHECK(lex.observed_min == -2.5);
  CHECK(lex.observed_max == 1.9);
}

TEST_CASE("lexicon skips n-grams and ignores trailing fields") {
  TempDir dir;
  auto path = dir.path() / "lex.txt";
  write_file(path, "good\t1.0\nnot good\t-1.0\nfine\t0.5\t12\t0\n");
  Lexicon lex = load_lexicon(path, "toy");
  CHECK(lex.size() == 2);
  CHECK(lex.contains("good"));
  CHECK(lex.contains("fine"));
  CHECK_FALSE(lex.contains("not good"));
}

TEST_CASE("normalized_score maps the observed range onto [-1, 1]") {
  TempDir dir;
  auto path = dir.path() / "lex.txt";
  write_file(path, "best\t5.0\nworst\t-4.999\nmeh\t0\n");
  Lexicon lex = load_lexicon(path, "toy");
  CHECK(normalized_score(lex, "best") == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(normalized_score(lex, "worst") == doctest::Approx(-1.0).epsilon(1e-15));
  // Raw 0 sits just off center because the range is asymmetric.
  CHECK(std::abs(normalized_score(lex, "meh") - (-0.00010001000100001711)) <
        1e-15);
  CHECK(normalized_score(lex, "absent") == 0.0);
}

TEST_CASE("a one-entry lexicon normalizes to zero") {
  TempDir dir;
  auto path = dir.path() / "lex.txt";
  write_file(path, "only\t3.25\n");
  Lexicon lex = load_lexicon(path, "toy");
  CHECK(normalized_score(lex, "only") == 0.0);
}

TEST_CASE("a lexicon set holds exactly seven members") {
  std::vector<Lexicon> six(6);
  CHECK_THROWS_AS(LexiconSet{six}, ConfigError);
  std::vector<Lexicon> seven(7);
  for (std::size_t i = 0; i < 7; ++i) seven[i].name = "lex" + std::to_string(i);
  LexiconSet set(seven);
  CHECK(set.lexicons().size() == 7);
  CHECK(set.names()[3] == "lex3");
}

TEST_CASE("the Penn Treebank tagset has 37 slots including the fallback") {
  PosTagset tags = PosTagset::penn_treebank();
  CHECK(tags.dim() == 37);
  CHECK(std::count(tags.tags().begin(), tags.tags().end(), kFallbackTag) == 1);
  CHECK(tags.index_of("NN") < 37);
  CHECK(tags.index_of("JJ") != tags.index_of("NN"));
  // Unknown tags collapse onto the fallback slot.
  CHECK(tags.index_of("NOT_A_TAG") == tags.index_of(kFallbackTag));
}

TEST_CASE("from_tags appends the fallback only when missing") {
  PosTagset a = PosTagset::from_tags({"AA", "BB"});
  CHECK(a.dim() == 3);
  CHECK(a.tags().back() == kFallbackTag);
  PosTagset b = PosTagset::from_tags({"AA", "X", "BB"});
  CHECK(b.dim() == 3);
  CHECK_THROWS_AS(PosTagset::from_tags({"AA", "AA"}), ConfigError);
}

TEST_CASE("pos_vector is one-hot at the tag index") {
  PosTagset tags = PosTagset::penn_treebank();
  auto v = pos_vector(tags, "NN");
  CHECK(v.size() == 37);
  CHECK(std::count(v.begin(), v.end(), 1.0) == 1);
  CHECK(std::count(v.begin(), v.end(), 0.0) == 36);
  CHECK(v[tags.index_of("NN")] == 1.0);
}

namespace {

IwvTable make_table(TempDir& dir, bool with_lexicons) {
  write_file(dir.path() / "vecs.txt", "good 0.5 0.5 0.5\nbad -0.5 -0.5 -0.5\n");
  IwvTable table;
  table.words = load_word_vectors(dir.path() / "vecs.txt", 5);
  if (with_lexicons) {
    std::vector<Lexicon> lexes;
    for (std::size_t i = 0; i < kLexiconSlots; ++i) {
      auto p = dir.path() / ("lex" + std::to_string(i) + ".txt");
      write_file(p, "good\t2.0\nbad\t-2.0\n");
      lexes.push_back(load_lexicon(p, "lex" + std::to_string(i)));
    }
    table.lexicons = LexiconSet(std::move(lexes));
  }
  return table;
}

}  // namespace

TEST_CASE("full-scale dimensions add up to 344") {
  // 300-d pretrained vectors + 37 tags + 7 lexicon slots.
  IwvTable table;
  table.words.dim = 300;
  CHECK(table.dim() == 344);
}

TEST_CASE("composed vectors follow the word|pos|lexicon layout") {
  TempDir dir;
  IwvTable table = make_table(dir, true);
  CHECK(table.dim() == 3 + 37 + 7);

  auto v = compose_iwv("good", "JJ", table);
  REQUIRE(v.size() == 47);
  CHECK(v[0] == 0.5);
  CHECK(v[1] == 0.5);
  CHECK(v[2] == 0.5);
  CHECK(v[3 + table.tagset.index_of("JJ")] == 1.0);
  // "good" is the max of every toy lexicon, so all seven scores are +1.
  for (std::size_t i = 40; i < 47; ++i) CHECK(v[i] == doctest::Approx(1.0));
}

TEST_CASE("lexicon coordinates always land in [-1, 1]") {
  TempDir dir;
  IwvTable table = make_table(dir, true);
  for (const std::string& w : {"good", "bad", "nowhere"}) {
    auto v = compose_iwv(w, "NN", table);
    for (std::size_t i = 40; i < 47; ++i) {
      CHECK(v[i] >= -1.0);
      CHECK(v[i] <= 1.0);
    }
  }
}

TEST_CASE("without lexicons the trailing seven coordinates are zero") {
  TempDir dir;
  IwvTable table = make_table(dir, false);
  auto v = compose_iwv("good", "NN", table);
  REQUIRE(v.size() == 47);
  for (std::size_t i = 40; i < 47; ++i) CHECK(v[i] == 0.0);
}

TEST_CASE("an out-of-lexicon OOV word still fills word and pos parts") {
  TempDir dir;
  IwvTable table = make_table(dir, true);
  auto v = compose_iwv("zyzzyva", "NN", table);
  // Word part comes from the seeded OOV draw, so it is almost surely nonzero.
  bool word_nonzero = v[0] != 0.0 || v[1] != 0.0 || v[2] != 0.0;
  CHECK(word_nonzero);
  // Absent from every lexicon: exactly seven trailing zeros.
  for (std::size_t i = 40; i < 47; ++i) CHECK(v[i] == 0.0);
}

TEST_CASE("the pad token composes to the zero vector") {
  TempDir dir;
  IwvTable table = make_table(dir, true);
  auto v = compose_iwv(kPadToken, "NN", table);
  for (double x : v) CHECK(x == 0.0);
}

TEST_CASE("embed_sentence stacks composed rows") {
  TempDir dir;
  IwvTable table = make_table(dir, true);
  std::vector<std::string> tokens{"good", "bad", kPadToken};
  std::vector<std::string> tags{"JJ", "JJ", "X"};
  Tensor m = embed_sentence(tokens, tags, table);
  REQUIRE(m.rows() == 3);
  REQUIRE(m.cols() == 47);
  auto row0 = compose_iwv("good", "JJ", table);
  for (std::size_t c = 0; c < 47; ++c) CHECK(m.at(0, c) == row0[c]);
  for (std::size_t c = 0; c < 47; ++c) CHECK(m.at(2, c) == 0.0);

  CHECK_THROWS_AS(embed_sentence({}, {}, table), ContractError);
  std::vector<std::string> short_tags{"JJ"};
  CHECK_THROWS_AS(embed_sentence(tokens, short_tags, table), DimensionError);
}

TEST_CASE("the IWV cache is byte-stable and self-describing") {
  TempDir dir;
  IwvTable table = make_table(dir, true);
  std::vector<std::pair<std::string, std::string>> vocab{
      {"bad", "JJ"}, {"good", "JJ"}};

  auto p1 = dir.path() / "cache1.txt";
  auto p2 = dir.path() / "cache2.txt";
  write_iwv_cache(p1, table, vocab);
  write_iwv_cache(p2, table, vocab);
  std::string text = read_file(p1);
  CHECK(text == read_file(p2));
  CHECK(text.find("#lexicon-order:") != std::string::npos);
  CHECK(text.find("#tagset:") != std::string::npos);
  CHECK(text.find("good_JJ ") != std::string::npos);
  CHECK(text.find("2 47") != std::string::npos);
}
