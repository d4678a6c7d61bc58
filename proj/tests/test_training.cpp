#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "egpg/error.hpp"
#include "egpg/synthetic.hpp"
#include "egpg/training.hpp"
#include "test_util.hpp"

using namespace egpg;

namespace {

std::vector<Triple> toy_triples(std::size_t n, std::uint64_t seed) {
  std::vector<Triple> out;
  std::uint64_t k = seed * 1000;
  for (const auto& p : synth::paraphrase_pairs(n, seed)) {
    out.push_back({p.pair.source, p.pair.target, synth::render(p.target_style, ++k).sentence});
  }
  return out;
}

TrainConfig toy_config() {
  TrainConfig c;
  c.batch_size = 4;
  c.epochs = 2;
  c.learning_rate = 1e-3;
  c.seed = 3;
  c.model.embedding_dim = 8;
  c.model.content_dim = 8;
  c.model.style_dim = 8;
  c.model.style_layers = 1;
  c.model.style_heads = 2;
  c.model.style_ff_dim = 16;
  return c;
}

struct Fixture {
  std::vector<Triple> triples = toy_triples(12, 1);
  TrainConfig cfg = toy_config();
  Vocabulary vocab;
  std::vector<EncodedTriple> data;

  Fixture() {
    std::vector<Sentence> all;
    for (const auto& t : triples) all.insert(all.end(), {t.source, t.target, t.exemplar});
    vocab = build_vocabulary(all);
    cfg.model.vocab_size = vocab.size();
    data = encode_triples(triples, vocab, cfg.model.max_len);
  }
};

std::vector<Matrix> values(const ModelState& m) {
  std::vector<Matrix> v;
  m.for_each_parameter([&](const std::string&, const Parameter& p) { v.push_back(p.value); });
  return v;
}

}  // namespace

TEST_CASE("make_batches partitions and is deterministic") {
  Fixture f;
  std::span<const EncodedTriple> ten(f.data.data(), 10);
  auto b = make_batches(ten, 4, 7, true);
  REQUIRE(b.size() == 3);
  CHECK(b[0].size() == 4);
  CHECK(b[1].size() == 4);
  CHECK(b[2].size() == 2);
  std::vector<std::size_t> seen;
  for (const auto& x : b) seen.insert(seen.end(), x.indices.begin(), x.indices.end());
  std::sort(seen.begin(), seen.end());
  for (std::size_t i = 0; i < 10; ++i) CHECK(seen[i] == i);

  auto again = make_batches(ten, 4, 7, true);
  for (std::size_t i = 0; i < b.size(); ++i) CHECK(again[i].indices == b[i].indices);
  auto plain = make_batches(ten, 4, 7, false);
  CHECK(plain[0].indices == std::vector<std::size_t>{0, 1, 2, 3});
}

TEST_CASE("padding is masked out of the decoder loss") {
  Fixture f;
  std::vector<std::size_t> idx{0, 1, 2};
  auto b = make_batch(f.data, idx);
  const std::size_t B = b.size(), T = b.decoder_target.cols;
  REQUIRE(b.gold.size() == B * T);
  for (std::size_t i = 0; i < B; ++i) {
    const std::size_t len = f.data[idx[i]].target.size() + 1;
    CHECK(b.decoder_target.lengths[i] == len);
    CHECK(b.decoder_target.at(i, len - 1) == Vocabulary::kEos);
    double total = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      const double w = b.weight[t * B + i];
      if (t < len) {
        CHECK(w == doctest::Approx(1.0 / static_cast<double>(len)));
        CHECK(b.gold[t * B + i] == b.decoder_target.at(i, t));
      } else {
        CHECK(w == 0.0);
      }
      total += w;
    }
    CHECK(total == doctest::Approx(1.0));
  }
}

TEST_CASE("one step decreases the loss on its batch") {
  Fixture f;
  ModelState m(f.cfg.model, f.cfg.seed);
  Adam opt(m, f.cfg.learning_rate);
  auto b = make_batch(f.data, std::vector<std::size_t>{0, 1, 2, 3});
  const auto before = evaluate_losses(b, m, f.cfg);
  const auto step = train_step(b, m, opt, f.cfg);
  CHECK(step.total == doctest::Approx(before.total).epsilon(1e-12));
  CHECK(step.total == doctest::Approx(step.nll + 0.1 * step.ccl + 0.1 * step.scl).epsilon(1e-12));
  CHECK(evaluate_losses(b, m, f.cfg).total < before.total);
  CHECK(opt.steps() == 1);
}

TEST_CASE("zero lambdas train plain seq2seq") {
  Fixture f;
  f.cfg.lambda_ccl = f.cfg.lambda_scl = 0.0;
  ModelState a(f.cfg.model, 5);
  Adam opt(a, f.cfg.learning_rate);
  auto b = make_batch(f.data, std::vector<std::size_t>{0, 1, 2, 3});
  auto l = train_step(b, a, opt, f.cfg);
  CHECK(l.ccl > 0.0);
  CHECK(l.scl > 0.0);
  CHECK(l.total == l.nll);

  // Contrastive terms leave the decoder-only path untouched: the output
  // projection update equals the one with contrastive weights on.
  f.cfg.clip_norm = 1e12;
  TrainConfig on = f.cfg;
  on.lambda_ccl = on.lambda_scl = 0.1;
  ModelState c(f.cfg.model, 5), d(f.cfg.model, 5);
  Adam oc(c, on.learning_rate), od(d, on.learning_rate);
  train_step(b, c, oc, on);
  train_step(b, d, od, f.cfg);
  CHECK(c.output.value == d.output.value);
  CHECK(c.content.w_ih.value != d.content.w_ih.value);
  CHECK(c.style_pool.w.value != d.style_pool.w.value);
}

TEST_CASE("a 50-step run stays finite and mostly improves") {
  Fixture f;
  f.cfg.learning_rate = 3e-3;
  ModelState m(f.cfg.model, 1);
  Adam opt(m, f.cfg.learning_rate);
  auto batches = make_batches(f.data, 4, 1, false);
  std::vector<double> per_epoch;
  for (int step = 0; step < 50; ++step) {
    auto l = train_step(batches[static_cast<std::size_t>(step) % batches.size()], m, opt, f.cfg);
    CHECK(std::isfinite(l.grad_norm));
    CHECK(std::isfinite(l.total));
  }
  double first = 0, last = 0;
  ModelState fresh(f.cfg.model, 1);
  for (const auto& b : batches) {
    first += evaluate_losses(b, fresh, f.cfg).total;
    last += evaluate_losses(b, m, f.cfg).total;
  }
  CHECK(last < first);
}

TEST_CASE("teacher forcing below one still trains") {
  Fixture f;
  f.cfg.teacher_forcing_rate = 0.5;
  ModelState m(f.cfg.model, 1);
  Adam opt(m, f.cfg.learning_rate);
  auto b = make_batch(f.data, std::vector<std::size_t>{0, 1, 2, 3});
  auto l = train_step(b, m, opt, f.cfg);
  CHECK(std::isfinite(l.total));
}

TEST_CASE("non-finite losses abort the step") {
  Fixture f;
  ModelState m(f.cfg.model, 1);
  m.output.value(0, 0) = std::nan("");
  Adam opt(m, f.cfg.learning_rate);
  auto b = make_batch(f.data, std::vector<std::size_t>{0, 1});
  CHECK_THROWS_AS(train_step(b, m, opt, f.cfg), NonFiniteLossError);
}

TEST_CASE("config json applies defaults and rejects unknown keys") {
  TrainConfig c = nlohmann::json::parse(R"({"epochs": 3, "model": {"style_dim": 16}})").get<TrainConfig>();
  CHECK(c.epochs == 3);
  CHECK(c.model.style_dim == 16);
  CHECK(c.batch_size == 32);
  CHECK(c.learning_rate == 1e-4);
  CHECK(c.lambda_ccl == 0.1);
  CHECK(c.temperature == 0.5);
  CHECK(c.model.content_dim == 512);
  CHECK_THROWS_AS(nlohmann::json::parse(R"({"epoch": 3})").get<TrainConfig>(), InputError);
  CHECK_THROWS_AS(nlohmann::json::parse(R"({"model": {"width": 3}})").get<TrainConfig>(), InputError);

  nlohmann::json j = toy_config();
  CHECK(j.get<TrainConfig>().model.style_ff_dim == 16);

  TrainConfig bad = toy_config();
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), InputError);
  bad = toy_config();
  bad.teacher_forcing_rate = 1.5;
  CHECK_THROWS_AS(bad.validate(), InputError);
}

TEST_CASE("ablations zero the matching weights") {
  TrainConfig c;
  apply_ablation(c, parse_ablation("no-ccl"));
  CHECK(c.lambda_ccl == 0.0);
  CHECK(c.lambda_scl == 0.1);
  c = TrainConfig{};
  apply_ablation(c, parse_ablation("no-both"));
  CHECK(c.weights().ccl == 0.0);
  CHECK(c.weights().scl == 0.0);
  CHECK(ablation_name(Ablation::kNoScl) == "no-scl");
  CHECK_THROWS_AS(parse_ablation("none"), InputError);
}

TEST_CASE("checkpoints round-trip bitwise") {
  Fixture f;
  TempDir dir;
  ModelState m(f.cfg.model, 4);
  Adam opt(m, f.cfg.learning_rate);
  train_step(make_batch(f.data, std::vector<std::size_t>{0, 1}), m, opt, f.cfg);
  TrainingProgress progress;
  progress.epochs_done = 1;
  progress.step = 1;
  progress.best_bleu = 12.5;
  progress.optimizer = opt;
  auto path = dir.path() / "m.ckpt";
  save_checkpoint(path, m, f.vocab, f.cfg, &progress);

  auto c = load_checkpoint(path, f.vocab);
  CHECK(values(c.model) == values(m));
  CHECK(c.vocab == f.vocab);
  CHECK(c.config.model.style_ff_dim == f.cfg.model.style_ff_dim);
  REQUIRE(c.progress);
  CHECK(c.progress->step == 1);
  CHECK(c.progress->best_bleu == 12.5);
  CHECK(c.progress->optimizer.steps() == 1);
  CHECK(c.progress->optimizer.first_moments() == opt.first_moments());
  CHECK(c.progress->optimizer.second_moments() == opt.second_moments());

  IdSequence x{4, 5, 6}, z{7, 8};
  auto gen = [&](const ModelState& s) { return generate(encode_content(x, s), encode_style(z, s), s); };
  CHECK(gen(c.model) == gen(m));

  auto other = f.vocab.tokens();
  std::swap(other[4], other[5]);
  CHECK_THROWS_AS(load_checkpoint(path, Vocabulary::from_tokens(other)), CheckpointError);

  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto corrupt = [&](std::string b, const char* name) {
    auto p = dir.write(name, b);
    CHECK_THROWS_AS(load_checkpoint(p), CheckpointError);
  };
  corrupt(bytes.substr(0, bytes.size() - 8), "short.ckpt");
  corrupt(bytes + "x", "long.ckpt");
  corrupt("NOTACKPT" + bytes.substr(8), "magic.ckpt");
  CHECK_THROWS_AS(load_checkpoint(dir.path() / "missing.ckpt"), CheckpointError);
}

TEST_CASE("fit logs every epoch, saves checkpoints and is reproducible") {
  Fixture f;
  TempDir dir;
  FitOptions o;
  o.out_dir = dir.path() / "run";
  auto a = fit(f.triples, {}, f.cfg, o);
  auto b = fit(f.triples, {}, f.cfg);
  CHECK(values(a.model) == values(b.model));
  CHECK(a.progress.step == 6);
  CHECK(a.log.events("epoch").size() == 2);
  CHECK(a.log.events("step").size() == 6);
  REQUIRE(a.log.events("config").size() == 1);
  CHECK(a.log.events("config")[0]["config"]["lambda_ccl"] == 0.1);
  auto strip = [](std::vector<nlohmann::json> v) {
    for (auto& r : v) r.erase("seconds");
    return v;
  };
  CHECK(strip(a.log.events("step")) == strip(b.log.events("step")));
  CHECK(strip(a.log.events("epoch")) == strip(b.log.events("epoch")));

  CHECK(std::filesystem::exists(*o.out_dir / "last.ckpt"));
  CHECK(std::filesystem::exists(*o.out_dir / "best.ckpt"));
  auto disk = RunLog::from_jsonl(*o.out_dir / "runlog.jsonl");
  CHECK(disk.records().size() == a.log.records().size());
  CHECK(load_checkpoint(*o.out_dir / "last.ckpt").progress->epochs_done == 2);
}

TEST_CASE("an interrupted run resumes to the same state") {
  Fixture f;
  f.cfg.epochs = 3;
  TempDir dir;
  auto full = fit(f.triples, {}, f.cfg);

  FitOptions o;
  o.out_dir = dir.path() / "run";
  o.stop_after = 1;
  auto part = fit(f.triples, {}, f.cfg, o);
  CHECK(part.progress.epochs_done == 1);
  FitOptions r;
  r.out_dir = o.out_dir;
  r.resume = *o.out_dir / "last.ckpt";
  TrainConfig cfg = f.cfg;
  cfg.learning_rate = 0.5;  // ignored on resume
  auto rest = fit(f.triples, {}, cfg, r);
  CHECK(rest.progress.epochs_done == 3);
  CHECK(rest.progress.step == full.progress.step);
  CHECK(values(rest.model) == values(full.model));
  CHECK(rest.log.events("config")[0]["config"]["learning_rate"] == f.cfg.learning_rate);
  CHECK(rest.log.events("config")[0]["resumed_at_epoch"] == 1);
  CHECK(RunLog::from_jsonl(*o.out_dir / "runlog.jsonl").events("epoch").size() == 3);
}

TEST_CASE("teacher-forced stats") {
  Fixture f;
  ModelState m(f.cfg.model, 2);
  auto s = teacher_forced_stats(f.data, m);
  CHECK(s.token_accuracy >= 0.0);
  CHECK(s.token_accuracy <= 1.0);
  CHECK(s.mean_nll > 0.0);
}
