// egpg: prepare -> train -> generate -> evaluate -> diagnose.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "egpg/corpus.hpp"
#include "egpg/error.hpp"
#include "egpg/evaluation.hpp"
#include "egpg/exemplar_search.hpp"
#include "egpg/model.hpp"
#include "egpg/syntax.hpp"
#include "egpg/training.hpp"
#include "egpg/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitInternal = 1;

// Every flag can also come from EGPG_<FLAG>, e.g. --batch-size from EGPG_BATCH_SIZE.
template <typename T>
CLI::Option* flag(CLI::App* app, const std::string& name, T& target, const std::string& help) {
  std::string env = "EGPG_";
  for (char c : name.substr(2)) env += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return app->add_option(name, target, help)->envname(env);
}

void require_file(const std::string& path, const char* what) {
  if (!fs::exists(path)) throw egpg::InputError(std::string(what) + " not found: " + path);
}

std::unique_ptr<egpg::Tagger> perceptron_from(const std::string& path) {
  if (path.empty()) return std::make_unique<egpg::PerceptronTagger>(egpg::PerceptronTagger::bundled());
  require_file(path, "tagger model");
  return std::make_unique<egpg::PerceptronTagger>(egpg::PerceptronTagger::load(fs::path(path)));
}

std::vector<egpg::Triple> read_triples(const std::string& path, std::size_t max_len) {
  require_file(path, "triple file");
  egpg::LoadOptions opts;
  opts.max_len = max_len;
  auto loaded = egpg::load_triples(path, egpg::format_for_path(path), opts);
  if (loaded.triples.empty()) throw egpg::EmptyInputError("no usable triples in " + path);
  return std::move(loaded.triples);
}

std::string variant_of(const egpg::TrainConfig& cfg) {
  if (cfg.lambda_ccl == 0.0 && cfg.lambda_scl == 0.0) return "no-both";
  if (cfg.lambda_ccl == 0.0) return "no-ccl";
  if (cfg.lambda_scl == 0.0) return "no-scl";
  return "full";
}

// ---------------------------------------------------------------------------

struct PrepareArgs {
  std::string pairs, tags, out, stats, tagger;
  std::size_t workers = 1, max_len = egpg::kDefaultMaxLen;
  std::uint64_t seed = 0;
  bool strict = false;
};

int run_prepare(const PrepareArgs& a) {
  require_file(a.pairs, "pairs file");
  egpg::LoadOptions opts;
  opts.max_len = a.max_len;
  opts.strict = a.strict;
  std::size_t skipped = 0;
  auto pairs = egpg::load_pairs(a.pairs, egpg::format_for_path(a.pairs), opts, &skipped);
  if (pairs.empty()) throw egpg::EmptyInputError("no usable pairs in " + a.pairs);
  std::vector<egpg::Sentence> pool;
  for (const auto& p : pairs) pool.push_back(p.source);

  std::unique_ptr<egpg::Tagger> tagger;
  if (!a.tags.empty()) {
    require_file(a.tags, "tag file");
    tagger = std::make_unique<egpg::SidecarTagger>(egpg::SidecarTagger::from_pair_file(pairs, a.tags));
  } else {
    tagger = perceptron_from(a.tagger);
  }
  egpg::MiningOptions mopts;
  mopts.workers = a.workers;
  auto result = egpg::mine_corpus(pairs, pool, *tagger, mopts);
  egpg::write_triples_jsonl(a.out, result.triples);

  json stats = {{"pairs", pairs.size()},          {"skipped_records", skipped},
                {"triples", result.triples.size()}, {"dropped", result.dropped},
                {"mean_distance", result.mean_distance()}, {"tagger", tagger->name()},
                {"max_len", a.max_len}};
  const std::string stats_path = a.stats.empty() ? a.out + ".stats.json" : a.stats;
  std::ofstream(stats_path) << stats.dump(2) << '\n';
  std::cout << stats.dump() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data, valid, config, out, ablation = "full", resume, embeddings;
  std::size_t workers = 1;
  std::optional<std::size_t> epochs, batch_size, max_len, embedding_dim, content_dim, style_dim, style_layers,
      style_heads, style_ff_dim, decoder_dim, valid_limit, min_freq, stop_after;
  std::optional<double> lr, lambda_ccl, lambda_scl, temperature, teacher_forcing, clip_norm;
  std::optional<std::uint64_t> seed;
  std::optional<bool> normalize;
  bool quiet_steps = false;
};

int run_train(const TrainArgs& a) {
  egpg::TrainConfig cfg;
  if (!a.config.empty()) {
    require_file(a.config, "config file");
    json j;
    try {
      j = json::parse(egpg::read_text_file(a.config));
    } catch (const json::exception& e) {
      throw egpg::ParseError(a.config, 0, e.what());
    }
    cfg = j.get<egpg::TrainConfig>();
  }
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.batch_size) cfg.batch_size = *a.batch_size;
  if (a.max_len) cfg.model.max_len = *a.max_len;
  if (a.embedding_dim) cfg.model.embedding_dim = *a.embedding_dim;
  if (a.content_dim) cfg.model.content_dim = *a.content_dim;
  if (a.style_dim) cfg.model.style_dim = *a.style_dim;
  if (a.style_layers) cfg.model.style_layers = *a.style_layers;
  if (a.style_heads) cfg.model.style_heads = *a.style_heads;
  if (a.style_ff_dim) cfg.model.style_ff_dim = *a.style_ff_dim;
  if (a.decoder_dim) cfg.model.decoder_dim = *a.decoder_dim;
  if (a.valid_limit) cfg.valid_limit = *a.valid_limit;
  if (a.min_freq) cfg.min_freq = *a.min_freq;
  if (a.lr) cfg.learning_rate = *a.lr;
  if (a.lambda_ccl) cfg.lambda_ccl = *a.lambda_ccl;
  if (a.lambda_scl) cfg.lambda_scl = *a.lambda_scl;
  if (a.temperature) cfg.temperature = *a.temperature;
  if (a.teacher_forcing) cfg.teacher_forcing_rate = *a.teacher_forcing;
  if (a.clip_norm) cfg.clip_norm = *a.clip_norm;
  if (a.seed) cfg.seed = *a.seed;
  if (a.normalize) cfg.model.normalize_features = *a.normalize;
  if (!a.embeddings.empty()) {
    require_file(a.embeddings, "embedding file");
    cfg.embeddings = a.embeddings;
  }
  egpg::apply_ablation(cfg, egpg::parse_ablation(a.ablation));
  cfg.validate();

  auto train = read_triples(a.data, cfg.model.max_len);
  std::vector<egpg::Triple> valid;
  if (!a.valid.empty()) valid = read_triples(a.valid, cfg.model.max_len);
  else egpg::log_info("no --valid file; validating on the training triples");

  egpg::FitOptions opts;
  opts.out_dir = fs::path(a.out);
  opts.workers = a.workers;
  opts.log_steps = !a.quiet_steps;
  opts.stop_after = a.stop_after;
  if (!a.resume.empty()) {
    require_file(a.resume, "checkpoint");
    opts.resume = fs::path(a.resume);
  }
  auto result = egpg::fit(train, valid, cfg, opts);
  const fs::path last = fs::path(a.out) / "last.ckpt", best = fs::path(a.out) / "best.ckpt";
  json summary = {{"out", a.out},
                  {"ablation", a.ablation},
                  {"epochs_done", result.progress.epochs_done},
                  {"steps", result.progress.step},
                  {"best_bleu", result.progress.best_bleu},
                  {"best_epoch", result.progress.best_epoch},
                  {"last_checkpoint", last.string()},
                  {"last_hash", egpg::file_digest(last)},
                  {"best_checkpoint", best.string()},
                  {"best_hash", fs::exists(best) ? egpg::file_digest(best) : ""}};
  std::cout << summary.dump() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct GenerateArgs {
  std::string ckpt, vocab;
  std::vector<std::string> sources, exemplars;
  std::string exemplar_file;
  std::optional<std::size_t> max_len;
  std::size_t beam = 1;
};

egpg::Checkpoint open_checkpoint(const std::string& path, const std::string& vocab_file) {
  require_file(path, "checkpoint");
  if (vocab_file.empty()) return egpg::load_checkpoint(path);
  require_file(vocab_file, "vocabulary file");
  std::vector<std::string> tokens;
  std::istringstream in(egpg::read_text_file(vocab_file));
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) tokens.push_back(line);
  }
  return egpg::load_checkpoint(path, egpg::Vocabulary::from_tokens(std::move(tokens)));
}

egpg::Sentence prepare_input(const std::string& text, std::size_t max_len, const char* what) {
  auto s = egpg::tokenize(text);
  if (s.size() > max_len) {
    egpg::log_warning(std::string(what) + " has " + std::to_string(s.size()) + " tokens; truncated to " +
                      std::to_string(max_len));
    s = egpg::truncate(s, max_len);
  }
  return s;
}

int run_generate(const GenerateArgs& a) {
  auto ck = open_checkpoint(a.ckpt, a.vocab);
  const auto& m = ck.model;
  const std::size_t enc_len = m.config().max_len;
  const std::size_t out_len = a.max_len.value_or(enc_len);
  if (out_len == 0) throw egpg::InputError("--max-len must be >= 1");
  std::vector<std::string> exemplars = a.exemplars;
  if (!a.exemplar_file.empty()) {
    require_file(a.exemplar_file, "exemplar file");
    std::istringstream in(egpg::read_text_file(a.exemplar_file));
    for (std::string line; std::getline(in, line);) {
      if (!egpg::trim(line).empty()) exemplars.push_back(line);
    }
  }
  if (a.sources.empty() || exemplars.empty()) throw egpg::InputError("need at least one --source and one --exemplar");
  if (a.sources.size() != 1 && a.sources.size() != exemplars.size()) {
    throw egpg::InputError("give one source, or as many sources as exemplars");
  }
  const std::size_t n = exemplars.size();
  for (std::size_t i = 0; i < n; ++i) {
    auto src = prepare_input(a.sources.size() == 1 ? a.sources[0] : a.sources[i], enc_len, "source");
    auto ex = prepare_input(exemplars[i], enc_len, "exemplar");
    auto c = egpg::encode_content(egpg::encode(src, ck.vocab), m);
    auto s = egpg::encode_style(egpg::encode(ex, ck.vocab), m);
    auto ids = egpg::generate(c, s, m, {out_len, a.beam});
    std::cout << egpg::join(egpg::decode(ids, ck.vocab), " ") << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct EvaluateArgs {
  std::string ckpt, test, out, vocab, tagger;
  std::size_t workers = 1;
  std::optional<std::size_t> max_len;
};

int run_evaluate(const EvaluateArgs& a) {
  auto ck = open_checkpoint(a.ckpt, a.vocab);
  auto test = read_triples(a.test, ck.model.config().max_len);
  auto tagger = perceptron_from(a.tagger);
  egpg::EvalOptions opts;
  opts.workers = a.workers;
  opts.max_len = a.max_len.value_or(ck.model.config().max_len);
  auto run = egpg::evaluate_run(ck.model, ck.vocab, test, *tagger, opts);
  run.report.metadata["checkpoint"] = a.ckpt;
  run.report.metadata["checkpoint_hash"] = egpg::file_digest(a.ckpt);
  run.report.metadata["variant"] = variant_of(ck.config);
  run.report.validate();

  fs::create_directories(a.out);
  const fs::path json_path = fs::path(a.out) / "report.json";
  const fs::path csv_path = fs::path(a.out) / "report.csv";
  const fs::path gen_path = fs::path(a.out) / "generations.txt";
  std::ofstream(json_path) << run.report.to_json().dump(2) << '\n';
  std::ofstream(csv_path) << egpg::EvalReport::csv_header() << '\n' << run.report.csv_row() << '\n';
  {
    std::ofstream g(gen_path);
    for (const auto& t : run.generations) g << egpg::join(t, " ") << '\n';
  }
  std::cout << json_path.string() << '\n' << csv_path.string() << '\n' << gen_path.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct DiagnoseArgs {
  std::string ckpt, test, mode = "cma", out, variant, vocab;
  std::size_t top_k = 5, worst = 10, queries = 5, block = egpg::kDefaultCmaBlock;
};

int run_diagnose(const DiagnoseArgs& a) {
  auto ck = open_checkpoint(a.ckpt, a.vocab);
  auto test = read_triples(a.test, ck.model.config().max_len);
  if (a.mode == "cma") {
    auto [src, tgt] = egpg::content_features(ck.model, ck.vocab, test);
    auto d = egpg::cma_detail(src, tgt, a.block);
    std::vector<std::size_t> order(d.margin.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return d.margin[x] < d.margin[y]; });
    order.resize(std::min(a.worst, order.size()));
    std::cout << "cma " << d.accuracy << '\n';
    std::cout << "worst_rows";
    for (std::size_t i : order) std::cout << ' ' << i;
    std::cout << '\n';
    const std::string variant = a.variant.empty() ? variant_of(ck.config) : a.variant;
    const std::string csv = a.out.empty() ? "cma.csv" : a.out;
    const bool fresh = !fs::exists(csv) || fs::file_size(csv) == 0;
    std::ofstream out(csv, std::ios::app);
    if (fresh) out << "model_variant,cma\n";
    out << variant << ',' << d.accuracy << '\n';
    return 0;
  }
  if (a.mode == "style-retrieval") {
    std::vector<egpg::Sentence> pool;
    for (const auto& t : test) pool.push_back(t.target);
    const std::size_t q = std::min(a.queries, pool.size());
    std::ostringstream text;
    for (std::size_t i = 0; i < q; ++i) {
      auto ranked = egpg::style_retrieval(pool[i], pool, ck.model, ck.vocab, a.top_k);
      for (std::size_t r = 0; r < ranked.size(); ++r) {
        text << i << '\t' << r + 1 << '\t' << ranked[r] << '\t' << pool[ranked[r]].text() << '\n';
      }
    }
    std::cout << text.str();
    if (!a.out.empty()) std::ofstream(a.out) << "query\trank\tpool_index\tsentence\n" << text.str();
    return 0;
  }
  throw egpg::InputError("unknown --mode '" + a.mode + "' (expected cma or style-retrieval)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Exemplar-guided paraphrase generation with contrastive representation learning"};
  app.require_subcommand(1);

  PrepareArgs pa;
  auto* prepare = app.add_subcommand("prepare", "Mine exemplars for a paraphrase pair corpus");
  flag(prepare, "--pairs", pa.pairs, "Pair file (JSONL source/target or TSV)")->required();
  flag(prepare, "--tags", pa.tags, "Tag sidecar: one 'source tags<TAB>target tags' line per pair");
  flag(prepare, "--tagger", pa.tagger, "Perceptron tagger model (default: bundled)");
  flag(prepare, "--out", pa.out, "Output triple JSONL")->required();
  flag(prepare, "--stats", pa.stats, "Stats JSON (default: <out>.stats.json)");
  flag(prepare, "--workers", pa.workers, "Worker threads")->check(CLI::PositiveNumber);
  flag(prepare, "--seed", pa.seed, "Random seed (mining is deterministic)");
  flag(prepare, "--max-len", pa.max_len, "Truncate sentences to this many tokens")->check(CLI::PositiveNumber);
  prepare->add_flag("--strict", pa.strict, "Fail on malformed records instead of skipping them");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a model");
  flag(train, "--data", ta.data, "Training triples")->required();
  flag(train, "--valid", ta.valid, "Validation triples (default: training triples)");
  flag(train, "--config", ta.config, "JSON config file");
  flag(train, "--out", ta.out, "Output directory")->required();
  flag(train, "--ablation", ta.ablation, "full | no-ccl | no-scl | no-both")
      ->check(CLI::IsMember({"full", "no-ccl", "no-scl", "no-both"}));
  flag(train, "--resume", ta.resume, "Resume from a last.ckpt");
  flag(train, "--embeddings", ta.embeddings, "Pretrained embeddings (token v1 ... vd)");
  flag(train, "--workers", ta.workers, "Worker threads for validation decoding")->check(CLI::PositiveNumber);
  flag(train, "--epochs", ta.epochs, "Epochs");
  flag(train, "--batch-size", ta.batch_size, "Batch size");
  flag(train, "--lr", ta.lr, "Adam learning rate");
  flag(train, "--lambda-ccl", ta.lambda_ccl, "Content contrastive weight");
  flag(train, "--lambda-scl", ta.lambda_scl, "Style contrastive weight");
  flag(train, "--temperature", ta.temperature, "Contrastive temperature");
  flag(train, "--teacher-forcing", ta.teacher_forcing, "Teacher forcing rate");
  flag(train, "--clip-norm", ta.clip_norm, "Global gradient norm clip");
  flag(train, "--seed", ta.seed, "Random seed");
  flag(train, "--max-len", ta.max_len, "Maximum sentence length");
  flag(train, "--embedding-dim", ta.embedding_dim, "Word embedding size");
  flag(train, "--content-dim", ta.content_dim, "Content feature size");
  flag(train, "--style-dim", ta.style_dim, "Style feature size");
  flag(train, "--style-layers", ta.style_layers, "Style encoder layers");
  flag(train, "--style-heads", ta.style_heads, "Style encoder attention heads");
  flag(train, "--style-ff-dim", ta.style_ff_dim, "Style encoder feed-forward size");
  flag(train, "--decoder-dim", ta.decoder_dim, "Decoder size (0 = content + style)");
  flag(train, "--normalize-features", ta.normalize, "L2-normalize compared features (true/false)");
  flag(train, "--valid-limit", ta.valid_limit, "Validation items decoded per epoch (0 = all)");
  flag(train, "--min-freq", ta.min_freq, "Minimum token count for the vocabulary");
  flag(train, "--stop-after", ta.stop_after, "Stop after this many epochs in this invocation");
  train->add_flag("--quiet-steps", ta.quiet_steps, "Omit per-step records from the run log");

  GenerateArgs ga;
  auto* generate = app.add_subcommand("generate", "Generate paraphrases");
  flag(generate, "--ckpt", ga.ckpt, "Checkpoint")->required();
  flag(generate, "--source", ga.sources, "Source sentence(s)")->required();
  flag(generate, "--exemplar", ga.exemplars, "Exemplar sentence(s)");
  flag(generate, "--exemplar-file", ga.exemplar_file, "File with one exemplar per line");
  flag(generate, "--max-len", ga.max_len, "Maximum generated length");
  flag(generate, "--beam", ga.beam, "Beam width (1 = greedy)")->check(CLI::PositiveNumber);
  flag(generate, "--vocab", ga.vocab, "Expected vocabulary (one token per line)");

  EvaluateArgs ea;
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint on test triples");
  flag(evaluate, "--ckpt", ea.ckpt, "Checkpoint")->required();
  flag(evaluate, "--test", ea.test, "Test triples")->required();
  flag(evaluate, "--out", ea.out, "Output directory")->required();
  flag(evaluate, "--tagger", ea.tagger, "Perceptron tagger model (default: bundled)");
  flag(evaluate, "--workers", ea.workers, "Worker threads")->check(CLI::PositiveNumber);
  flag(evaluate, "--max-len", ea.max_len, "Maximum generated length");
  flag(evaluate, "--vocab", ea.vocab, "Expected vocabulary (one token per line)");

  DiagnoseArgs da;
  auto* diagnose = app.add_subcommand("diagnose", "CMA and style-retrieval diagnostics");
  flag(diagnose, "--ckpt", da.ckpt, "Checkpoint")->required();
  flag(diagnose, "--test", da.test, "Test triples")->required();
  flag(diagnose, "--mode", da.mode, "cma | style-retrieval")->check(CLI::IsMember({"cma", "style-retrieval"}));
  flag(diagnose, "--top-k", da.top_k, "Neighbours per query")->check(CLI::PositiveNumber);
  flag(diagnose, "--queries", da.queries, "Number of queries (first test targets)");
  flag(diagnose, "--worst", da.worst, "Worst-matched rows to list");
  flag(diagnose, "--block", da.block, "CMA row block size")->check(CLI::PositiveNumber);
  flag(diagnose, "--variant", da.variant, "Variant name for the CSV row");
  flag(diagnose, "--out", da.out, "CSV to append (cma) or write (style-retrieval)");
  flag(diagnose, "--vocab", da.vocab, "Expected vocabulary (one token per line)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInput;
  }

  try {
    if (*prepare) return run_prepare(pa);
    if (*train) return run_train(ta);
    if (*generate) return run_generate(ga);
    if (*evaluate) return run_evaluate(ea);
    if (*diagnose) return run_diagnose(da);
  } catch (const egpg::InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const egpg::NonFiniteLossError& e) {
    std::cerr << "error: training aborted: " << e.what() << '\n';
    return kExitInternal;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitInternal;
}
