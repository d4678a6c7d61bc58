#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "egpg/error.hpp"
#include "egpg/evaluation.hpp"
#include "egpg/synthetic.hpp"
#include "oracles.hpp"

using namespace egpg;

namespace {

Tokens toks(const std::string& s) { return s.empty() ? Tokens{} : tokenize(s).tokens(); }

std::vector<Tokens> random_corpus(std::mt19937_64& rng, std::size_t n, std::size_t min_len) {
  static const char* kWords[] = {"the", "cat", "runs", "running", "a", "dog", "sat", "on"};
  std::uniform_int_distribution<std::size_t> len(min_len, 8), w(0, 7);
  std::vector<Tokens> out(n);
  for (auto& s : out) {
    for (std::size_t i = 0, l = len(rng); i < l; ++i) s.emplace_back(kWords[w(rng)]);
  }
  return out;
}

ModelConfig tiny(std::size_t vocab) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.embedding_dim = 8;
  c.content_dim = 8;
  c.style_dim = 8;
  c.style_layers = 1;
  c.style_heads = 2;
  c.style_ff_dim = 16;
  return c;
}

}  // namespace

TEST_CASE("bleu fixtures") {
  std::vector<Tokens> c{toks("the cat sat")}, r{toks("the cat sat down")};
  CHECK(bleu(c, r) == doctest::Approx(71.65).epsilon(1e-4));
  CHECK(std::abs(bleu(c, r) - 100.0 * std::exp(1.0 - 4.0 / 3.0)) < 1e-9);
  CHECK(bleu(r, r) == doctest::Approx(100.0));
  CHECK(bleu(std::vector<Tokens>{toks("x y z w")}, r) < 1e-3);
  CHECK(bleu(std::vector<Tokens>{Tokens{}}, r) == 0.0);
  CHECK_THROWS_AS(bleu(std::vector<Tokens>{}, std::vector<Tokens>{}), EmptyInputError);
  CHECK_THROWS_AS(bleu(c, std::vector<Tokens>{r[0], r[0]}), InputError);
}

TEST_CASE("rouge fixtures") {
  std::vector<Tokens> c{toks("a b c")}, r{toks("a c")};
  auto s = rouge(c, r);
  CHECK(s.rouge1 == doctest::Approx(0.8));
  CHECK(s.rougeL == doctest::Approx(0.8));
  CHECK(s.rouge2 == 0.0);
  auto same = rouge(c, c);
  CHECK(same.rouge1 == 1.0);
  CHECK(same.rouge2 == 1.0);
  CHECK(same.rougeL == 1.0);
  auto none = rouge(c, std::vector<Tokens>{toks("x y")});
  CHECK(none.rouge1 == 0.0);
  CHECK(none.rouge2 == 0.0);
  CHECK(none.rougeL == 0.0);
}

TEST_CASE("meteor fixtures") {
  CHECK(meteor_sentence(toks("a b c"), toks("a b c")) == doctest::Approx(1.0 - 0.5 / 27.0));
  CHECK(meteor_sentence(toks("a b c"), toks("a b c")) == doctest::Approx(0.9815).epsilon(1e-4));
  CHECK(meteor_sentence(toks("a b"), toks("c d")) == 0.0);
  CHECK(meteor_sentence(toks("he runs"), toks("he running")) == doctest::Approx(1.0 - 0.5 / 8.0));
  CHECK(meteor_sentence(Tokens{}, toks("a")) == 0.0);
}

TEST_CASE("porter stemmer") {
  const std::vector<std::pair<std::string, std::string>> cases{
      {"caresses", "caress"}, {"ponies", "poni"},     {"ties", "ti"},          {"cats", "cat"},
      {"feed", "feed"},       {"agreed", "agre"},     {"plastered", "plaster"}, {"motoring", "motor"},
      {"sing", "sing"},       {"conflated", "conflat"}, {"troubled", "troubl"}, {"sized", "size"},
      {"hopping", "hop"},     {"tanned", "tan"},      {"falling", "fall"},      {"hissing", "hiss"},
      {"fizzed", "fizz"},     {"failing", "fail"},    {"filing", "file"},       {"happy", "happi"},
      {"sky", "sky"},         {"generalizations", "gener"}, {"oscillators", "oscil"}, {"running", "run"},
      {"runs", "run"},        {"adjustable", "adjust"}, {"adoption", "adopt"}, {"controlling", "control"},
      {"rolling", "roll"},    {"electrical", "electr"}, {"hopeful", "hope"},  {"goodness", "good"},
      {"formality", "formal"}, {"relational", "relat"}, {"a", "a"},           {"is", "is"}};
  for (const auto& [w, s] : cases) {
    INFO(w);
    CHECK(porter_stem(w) == s);
  }
}

TEST_CASE("metrics match slow references on random corpora") {
  std::mt19937_64 rng(17);
  for (int k = 0; k < 100; ++k) {
    const std::size_t n = 1 + rng() % 6;
    auto c = random_corpus(rng, n, 0);
    auto r = random_corpus(rng, n, 1);
    CHECK(std::abs(bleu(c, r) - oracle::bleu(c, r)) < 1e-9);
    auto a = rouge(c, r), b = oracle::rouge(c, r);
    CHECK(std::abs(a.rouge1 - b.rouge1) < 1e-9);
    CHECK(std::abs(a.rouge2 - b.rouge2) < 1e-9);
    CHECK(std::abs(a.rougeL - b.rougeL) < 1e-9);
    CHECK(std::abs(meteor_simplified(c, r) - oracle::meteor(c, r)) < 1e-9);

    // Corpus order does not matter.
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), 0);
    std::shuffle(p.begin(), p.end(), rng);
    std::vector<Tokens> pc, pr;
    for (auto i : p) {
      pc.push_back(c[i]);
      pr.push_back(r[i]);
    }
    CHECK(bleu(pc, pr) == doctest::Approx(bleu(c, r)).epsilon(1e-12));
    CHECK(rouge(pc, pr).rougeL == doctest::Approx(a.rougeL).epsilon(1e-12));
  }
}

TEST_CASE("ed metrics") {
  std::vector<TagSequence> gen{parse_tags("DT NN"), parse_tags("VB")};
  std::vector<TagSequence> ex{parse_tags("DT NN VB"), parse_tags("NN")};
  std::vector<TagSequence> ref{parse_tags("NN"), parse_tags("VB")};
  auto e = ed_metrics(gen, ex, ref);
  CHECK(e.ed_e == 1.0);
  CHECK(e.ed_r == 0.5);
  auto z = ed_metrics(gen, gen, gen);
  CHECK(z.ed_e == 0.0);
  CHECK(z.ed_r == 0.0);

  const auto& tagger = PerceptronTagger::bundled();
  std::vector<Sentence> sents{tokenize("the dog runs"), tokenize("where is the cat ?")};
  std::vector<Tokens> words{sents[0].tokens(), sents[1].tokens()};
  auto t = ed_metrics(words, sents, sents, tagger);
  CHECK(t.ed_e == 0.0);
  CHECK(t.ed_r == 0.0);
  std::vector<Tokens> empty(2);
  CHECK(ed_metrics(empty, sents, sents, tagger).ed_e == 4.0);
}

TEST_CASE("content matching accuracy fixtures") {
  Matrix eye = Matrix::Identity(4, 4);
  CHECK(content_matching_accuracy(eye, eye) == 1.0);

  Matrix a(2, 2), b(2, 2);
  a << 1, 0, 0, 1;
  b << 0, 1, 1, 0;
  CHECK(content_matching_accuracy(a, b) == 0.0);

  Matrix s(3, 3);
  s << .9, .1, 0, .2, .1, .7, 0, 0, .5;
  CHECK(content_matching_accuracy(s, Matrix::Identity(3, 3)) == 2.0 / 3.0);
  CHECK(similarity_matrix(s, Matrix::Identity(3, 3)) == s);
  auto d = cma_detail(s, Matrix::Identity(3, 3));
  CHECK(d.best == std::vector<std::size_t>{0, 2, 2});
  CHECK(d.margin[1] == doctest::Approx(-0.6));

  // Ties go to the lowest column.
  Matrix tie = Matrix::Ones(2, 2);
  CHECK(cma_detail(tie, Matrix::Identity(2, 2)).best == std::vector<std::size_t>{0, 0});

  CHECK_THROWS_AS(content_matching_accuracy(Matrix(2, 3), Matrix(2, 2)), InputError);
}

TEST_CASE("blockwise content matching equals the full matrix bitwise") {
  std::mt19937_64 rng(23);
  Matrix a = oracle::random_matrix(500, 32, rng), b = oracle::random_matrix(500, 32, rng);
  auto full = cma_detail(a, b, 500);
  for (std::size_t block : {1, 7, 64, 256, 499, 1000}) {
    auto part = cma_detail(a, b, block);
    CHECK(part.accuracy == full.accuracy);
    CHECK(part.best == full.best);
    CHECK(part.margin == full.margin);
  }
  Matrix s = similarity_matrix(a, b);
  for (Eigen::Index i = 0; i < 500; i += 37) {
    Eigen::Index j = 0;
    s.row(i).maxCoeff(&j);
    CHECK(full.best[static_cast<std::size_t>(i)] == static_cast<std::size_t>(j));
  }

  // Positive row scaling of A never moves a row's argmax.
  Matrix scaled = a;
  for (Eigen::Index i = 0; i < 500; ++i) scaled.row(i) *= std::ldexp(1.0, static_cast<int>(i % 9) - 4);
  CHECK(cma_detail(scaled, b).best == full.best);

  // Distinct normalized rows match themselves.
  Matrix n = a;
  n.rowwise().normalize();
  CHECK(content_matching_accuracy(n, n) == 1.0);
}

TEST_CASE("style retrieval") {
  std::vector<Sentence> pool{tokenize("where is the cat ?"), tokenize("how can i help ?"),
                             tokenize("the dog runs fast"), tokenize("how can i help ?")};
  auto vocab = build_vocabulary(pool);
  ModelState m(tiny(vocab.size()), 3);
  auto r = style_retrieval(pool[2], pool, m, vocab, 10);
  REQUIRE(r.size() == 4);
  CHECK(r[0] == 2);
  auto pos1 = std::find(r.begin(), r.end(), 1) - r.begin();
  auto pos3 = std::find(r.begin(), r.end(), 3) - r.begin();
  CHECK(pos3 == pos1 + 1);
  CHECK(style_retrieval(pool[0], pool, m, vocab, 2).size() == 2);
  CHECK(style_retrieval(pool[1], pool, m, vocab, 1)[0] == 1);
}

TEST_CASE("reports from an oracle stub and from empty generations") {
  std::vector<Triple> test;
  for (const auto& p : synth::paraphrase_pairs(10, 4)) test.push_back({p.pair.source, p.pair.target, p.pair.target});
  std::vector<Tokens> copy;
  for (const auto& t : test) copy.push_back(t.target.tokens());
  const auto& tagger = PerceptronTagger::bundled();
  auto best = compute_report(copy, test, tagger);
  CHECK(best.bleu == doctest::Approx(100.0));
  CHECK(best.rouge1 == 1.0);
  CHECK(best.rouge2 == 1.0);
  CHECK(best.rougeL == 1.0);
  CHECK(best.ed_r == 0.0);
  CHECK(best.ed_e == 0.0);
  CHECK_NOTHROW(best.validate());

  std::vector<Tokens> empty(test.size());
  auto worst = compute_report(empty, test, tagger);
  CHECK(worst.bleu == 0.0);
  CHECK(worst.rouge1 == 0.0);
  CHECK(worst.rouge2 == 0.0);
  CHECK(worst.rougeL == 0.0);
  CHECK(worst.meteor == 0.0);

  auto bad = best;
  bad.bleu = 101;
  CHECK_THROWS(bad.validate());
  bad = best;
  bad.cma = -0.1;
  CHECK_THROWS(bad.validate());
  CHECK(best.to_json()["count"] == 10);
  CHECK(EvalReport::csv_header().find("bleu") != std::string::npos);
}

TEST_CASE("evaluate_run on a toy model") {
  std::vector<Triple> test;
  std::uint64_t k = 0;
  for (const auto& p : synth::paraphrase_pairs(10, 5)) {
    test.push_back({p.pair.source, p.pair.target, synth::render(p.target_style, ++k).sentence});
  }
  std::vector<Sentence> all;
  for (const auto& t : test) all.insert(all.end(), {t.source, t.target, t.exemplar});
  auto vocab = build_vocabulary(all);
  ModelState m(tiny(vocab.size()), 9);
  const auto& tagger = PerceptronTagger::bundled();
  EvalOptions o;
  o.batch_size = 3;
  auto a = evaluate_run(m, vocab, test, tagger, o);
  CHECK_NOTHROW(a.report.validate());
  REQUIRE(a.report.cma);
  CHECK(a.report.count == 10);
  CHECK(a.generations.size() == 10);
  o.workers = 3;
  auto b = evaluate_run(m, vocab, test, tagger, o);
  CHECK(b.generations == a.generations);
  CHECK(b.report.to_json() == a.report.to_json());
  CHECK_THROWS_AS(evaluate_run(m, vocab, std::vector<Triple>{}, tagger), EmptyInputError);

  auto [src, tgt] = content_features(m, vocab, test);
  CHECK(src.rows() == 10);
  CHECK(*a.report.cma == content_matching_accuracy(src, tgt));
  for (Eigen::Index i = 0; i < src.rows(); ++i) CHECK(src.row(i).norm() == doctest::Approx(1.0));
}
