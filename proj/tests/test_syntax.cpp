#include <doctest.h>

#include <random>
#include <sstream>

#include "egpg/error.hpp"
#include "egpg/synthetic.hpp"
#include "egpg/syntax.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace egpg;

namespace {

TagSequence tags(std::initializer_list<const char*> t) {
  TagSequence s;
  for (auto x : t) s.tags.emplace_back(x);
  return s;
}

TagSequence random_tags(std::mt19937_64& rng, std::size_t max_len, std::size_t alphabet) {
  static const char* kTags[] = {"DT", "NN", "VB", "JJ", "IN", "PRP"};
  std::uniform_int_distribution<std::size_t> len(0, max_len), sym(0, alphabet - 1);
  TagSequence s;
  for (std::size_t i = 0, n = len(rng); i < n; ++i) s.tags.emplace_back(kTags[sym(rng)]);
  return s;
}

}  // namespace

TEST_CASE("edit distance fixtures") {
  CHECK(edit_distance(tags({"DT", "NN"}), tags({"DT", "NN"})) == 0);
  CHECK(edit_distance(tags({"DT", "NN"}), TagSequence{}) == 2);
  CHECK(edit_distance(tags({"NN", "VB", "DT"}), tags({"NN", "DT"})) == 1);
  CHECK(edit_distance(TagSequence{}, TagSequence{}) == 0);
}

TEST_CASE("edit distance matches the recursive oracle on random pairs") {
  std::mt19937_64 rng(11);
  for (int k = 0; k < 300; ++k) {
    auto a = random_tags(rng, 6, 3), b = random_tags(rng, 6, 3);
    CHECK(edit_distance(a, b) == oracle::edit_distance(a.tags, b.tags));
  }
}

TEST_CASE("edit distance is a metric") {
  std::mt19937_64 rng(5);
  for (int k = 0; k < 500; ++k) {
    auto a = random_tags(rng, 10, 4), b = random_tags(rng, 10, 4), c = random_tags(rng, 10, 4);
    const auto ab = edit_distance(a, b);
    CHECK(ab == edit_distance(b, a));
    CHECK((ab == 0) == (a == b));
    CHECK(edit_distance(a, c) <= ab + edit_distance(b, c));
    const auto diff = a.size() > b.size() ? a.size() - b.size() : b.size() - a.size();
    CHECK(ab >= diff);
    CHECK(ab <= std::max(a.size(), b.size()));
  }
}

TEST_CASE("bundled perceptron tagger") {
  const auto& t = PerceptronTagger::bundled();
  CHECK(pos_tag(tokenize("the dog runs"), &t) == tags({"DT", "NN", "VBZ"}));
  CHECK(pos_tag(tokenize("dog"), &t).size() == 1);
  auto s = tokenize("where can i find a cheap lamp in paris ?");
  CHECK(pos_tag(s, &t) == pos_tag(s, &t));
  CHECK(pos_tag(s, &t).size() == s.size());
  CHECK_THROWS_AS(pos_tag(s, nullptr), TaggerUnavailableError);
}

TEST_CASE("bundled tagger is accurate on held-out synthetic sentences") {
  const auto& t = PerceptronTagger::bundled();
  std::size_t right = 0, total = 0;
  for (const auto& ts : synth::tagger_corpus(500, 424242)) {
    auto got = t.tag(ts.sentence);
    for (std::size_t i = 0; i < got.size(); ++i) right += got.tags[i] == ts.tags.tags[i];
    total += got.size();
  }
  CHECK(static_cast<double>(right) / static_cast<double>(total) > 0.98);
}

TEST_CASE("perceptron train, save and load reproduce the same tagging") {
  std::vector<PerceptronTagger::TaggedSentence> data;
  for (const auto& ts : synth::tagger_corpus(400, 1)) data.push_back({ts.sentence.tokens(), ts.tags.tags});
  PerceptronTagger a;
  a.train(data, 3, 9);
  std::stringstream buf;
  a.save(buf);
  auto b = PerceptronTagger::load(buf);
  for (const auto& ts : synth::tagger_corpus(50, 77)) CHECK(a.tag(ts.sentence) == b.tag(ts.sentence));

  PerceptronTagger empty;
  CHECK_THROWS_AS(empty.tag(tokenize("a b")), TaggerUnavailableError);
  std::stringstream junk("not a model");
  CHECK_THROWS_AS(PerceptronTagger::load(junk), InputError);
}

TEST_CASE("sidecar taggers look up precomputed tags") {
  TempDir dir;
  std::vector<Sentence> sents{tokenize("the dog runs"), tokenize("a cat")};
  auto file = dir.write("tags.txt", "DT NN VBZ\nDT NN\n");
  auto side = SidecarTagger::from_file(sents, file);
  CHECK(side.tag(sents[0]) == tags({"DT", "NN", "VBZ"}));
  CHECK(side.tag(sents[1]) == tags({"DT", "NN"}));
  CHECK_THROWS_AS(side.tag(tokenize("unknown sentence")), TaggerUnavailableError);

  auto short_file = dir.write("short.txt", "DT\nDT NN\n");
  CHECK_THROWS_AS(SidecarTagger::from_file(sents, short_file), InputError);

  std::vector<SentencePair> pairs{{tokenize("x y"), tokenize("z")}};
  auto pf = dir.write("pairs.tags", "NN VB\tNN\n");
  auto ps = SidecarTagger::from_pair_file(pairs, pf);
  CHECK(ps.tag(tokenize("x y")) == tags({"NN", "VB"}));
  CHECK(ps.tag(tokenize("z")) == tags({"NN"}));
}

TEST_CASE("parse_tags splits on whitespace") {
  CHECK(parse_tags(" DT  NN\tVBZ ") == tags({"DT", "NN", "VBZ"}));
  CHECK(parse_tags("").size() == 0);
}

TEST_CASE("synthetic pairs carry aligned gold tags") {
  auto pairs = synth::paraphrase_pairs(50, 3);
  REQUIRE(pairs.size() == 50);
  for (const auto& p : pairs) {
    CHECK(p.source_tags.size() == p.pair.source.size());
    CHECK(p.target_tags.size() == p.pair.target.size());
    CHECK(p.source_style != p.target_style);
  }
  CHECK(synth::paraphrase_pairs(5, 3)[0].pair.source == pairs[0].pair.source);
}
