#include <doctest.h>

#include <random>

#include "egpg/corpus.hpp"
#include "egpg/error.hpp"
#include "test_util.hpp"

using namespace egpg;

TEST_CASE("tokenize splits on whitespace and lowercases") {
  CHECK(tokenize("what is love ?").tokens() == std::vector<std::string>{"what", "is", "love", "?"});
  CHECK(tokenize("How Do I").tokens() == std::vector<std::string>{"how", "do", "i"});
  CHECK(tokenize("  a\t b  ").tokens() == std::vector<std::string>{"a", "b"});
  CHECK_THROWS_AS(tokenize(""), EmptyInputError);
  CHECK_THROWS_AS(tokenize("   "), EmptyInputError);
}

TEST_CASE("sentences reject empty tokens") {
  CHECK_THROWS_AS(Sentence::from_tokens({}), EmptyInputError);
  CHECK_THROWS_AS(Sentence::from_tokens({"a", ""}), InputError);
}

TEST_CASE("truncate keeps a prefix") {
  std::vector<std::string> words;
  for (int i = 0; i < 20; ++i) words.push_back("w" + std::to_string(i));
  auto s = Sentence::from_tokens(words);
  auto t = truncate(s, 15);
  REQUIRE(t.size() == 15);
  CHECK(t[14] == "w14");
  auto short_s = tokenize("a b c");
  CHECK(truncate(short_s, 15) == short_s);
  CHECK(truncate(s, 1).tokens() == std::vector<std::string>{"w0"});
  CHECK_THROWS(truncate(s, 0));
}

TEST_CASE("vocabulary ordering and min_freq") {
  std::vector<Sentence> corpus{Sentence::from_tokens({"a", "b"}), Sentence::from_tokens({"a"})};
  auto v1 = build_vocabulary(corpus, 1);
  CHECK(v1.size() == 6);
  CHECK(v1.id("a") == 4);
  CHECK(v1.id("b") == 5);
  auto v2 = build_vocabulary(corpus, 2);
  CHECK(v2.size() == 5);
  CHECK(v2.id("b") == Vocabulary::kUnk);
  CHECK_THROWS_AS(build_vocabulary(std::vector<Sentence>{}, 1), EmptyInputError);

  // Ties by lexicographic order; specials are distinct and first.
  std::vector<Sentence> ties{Sentence::from_tokens({"zeta", "alpha", "mid", "mid"})};
  auto v3 = build_vocabulary(ties);
  CHECK(v3.tokens() == std::vector<std::string>{"<pad>", "<sos>", "<eos>", "<unk>", "mid", "alpha", "zeta"});
  CHECK(build_vocabulary(ties).hash() == v3.hash());
  CHECK(v3.hash() != v1.hash());
}

TEST_CASE("encode and decode round trip") {
  std::vector<Sentence> corpus{tokenize("the cat sat on the mat"), tokenize("a dog ran")};
  auto v = build_vocabulary(corpus);
  for (const auto& s : corpus) CHECK(decode(encode(s, v), v) == s.tokens());
  auto ids = encode(tokenize("the unicorn"), v, true);
  REQUIRE(ids.size() == 3);
  CHECK(ids[1] == Vocabulary::kUnk);
  CHECK(ids.back() == Vocabulary::kEos);
  CHECK(decode(ids, v) == std::vector<std::string>{"the", "<unk>"});
  const IdSequence with_pad{Vocabulary::kSos, v.id("cat"), Vocabulary::kEos, v.id("dog")};
  CHECK(decode(with_pad, v) == std::vector<std::string>{"cat"});

  // Property: random in-vocabulary sentences survive the round trip.
  std::mt19937_64 rng(3);
  const auto& toks = v.tokens();
  std::uniform_int_distribution<std::size_t> pick(Vocabulary::kNumSpecials, toks.size() - 1), len(1, 15);
  for (int k = 0; k < 200; ++k) {
    std::vector<std::string> w;
    for (std::size_t i = 0, n = len(rng); i < n; ++i) w.push_back(toks[pick(rng)]);
    auto s = Sentence::from_tokens(w);
    CHECK(decode(encode(s, v, true), v) == s.tokens());
  }
}

TEST_CASE("vocabulary round-trips through its token list") {
  auto v = build_vocabulary(std::vector<Sentence>{tokenize("x y z y")});
  auto w = Vocabulary::from_tokens(v.tokens());
  CHECK(w == v);
  CHECK(w.hash() == v.hash());
  CHECK_THROWS(Vocabulary::from_tokens({"a", "b"}));
}

TEST_CASE("load_triples handles TSV, JSONL, skipping and strict mode") {
  TempDir dir;
  auto tsv = dir.write("a.tsv", "a b\tc d\te f\nA B C\tD\tE\nx\ty\tz\n");
  auto r = load_triples(tsv, format_for_path(tsv));
  REQUIRE(r.triples.size() == 3);
  CHECK(r.triples[1].source.tokens() == std::vector<std::string>{"a", "b", "c"});
  CHECK(r.skipped == 0);

  auto empty_ex = dir.write("b.tsv", "a\tb\tc\nd\te\t \n");
  r = load_triples(empty_ex, RecordFormat::kTsv);
  CHECK(r.triples.size() == 1);
  CHECK(r.skipped == 1);

  auto jsonl = dir.write("c.jsonl",
                         "{\"source\":\"a b\",\"target\":\"c\",\"exemplar\":\"d\"}\n"
                         "not json\n"
                         "{\"source\":\"e\",\"target\":\"f\",\"exemplar\":\"g\"}\n");
  r = load_triples(jsonl, format_for_path(jsonl));
  CHECK(r.triples.size() == 2);
  CHECK(r.skipped == 1);
  LoadOptions strict;
  strict.strict = true;
  try {
    load_triples(jsonl, RecordFormat::kJsonl, strict);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }

  std::string long_line;
  for (int i = 0; i < 20; ++i) long_line += "w" + std::to_string(i) + " ";
  auto longer = dir.write("d.tsv", long_line + "\tshort\tthird\n");
  LoadOptions opts;
  opts.max_len = 15;
  r = load_triples(longer, RecordFormat::kTsv, opts);
  REQUIRE(r.triples.size() == 1);
  CHECK(r.triples[0].source.size() == 15);

  CHECK_THROWS_AS(load_triples(dir / "missing.tsv", RecordFormat::kTsv), InputError);
}

TEST_CASE("pairs load without exemplars; triples write back as JSONL") {
  TempDir dir;
  auto p = dir.write("p.jsonl", "{\"source\":\"a b\",\"target\":\"c d\"}\n");
  auto pairs = load_pairs(p, RecordFormat::kJsonl);
  REQUIRE(pairs.size() == 1);
  CHECK(pairs[0].target.text() == "c d");

  std::vector<Triple> t{{tokenize("a b"), tokenize("c"), tokenize("d e")}};
  write_triples_jsonl(dir / "out.jsonl", t);
  auto back = load_triples(dir / "out.jsonl", RecordFormat::kJsonl);
  REQUIRE(back.triples.size() == 1);
  CHECK(back.triples[0].exemplar.text() == "d e");
}

TEST_CASE("pretrained embeddings copy known rows and initialize the rest") {
  TempDir dir;
  auto v = build_vocabulary(std::vector<Sentence>{tokenize("cat dog")});
  auto file = dir.write("e.txt", "cat 0.5 -1.25 3\nunrelated 1 2 3\n");
  std::mt19937_64 rng(1);
  auto e = load_pretrained_embeddings(file, v, 3, rng);
  REQUIRE(e.matrix.rows() == static_cast<Eigen::Index>(v.size()));
  const auto cat = v.id("cat");
  CHECK(e.matrix(cat, 0) == 0.5);
  CHECK(e.matrix(cat, 1) == -1.25);
  CHECK(e.matrix(cat, 2) == 3.0);
  CHECK(e.covered == 1);
  const auto dog = v.id("dog");
  for (int c = 0; c < 3; ++c) {
    CHECK(e.matrix(dog, c) > -0.1);
    CHECK(e.matrix(dog, c) < 0.1);
  }
  CHECK_THROWS_AS(load_pretrained_embeddings(file, v, 300, rng), DimensionError);
}
