#include "egpg/training.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "egpg/error.hpp"
#include "egpg/evaluation.hpp"
#include "egpg/util.hpp"

namespace egpg {

using nn::Graph;
using nn::Var;

// ---------------------------------------------------------------------------
// Configuration

void TrainConfig::validate() const {
  auto fail = [](const std::string& why) { throw InputError("invalid train config: " + why); };
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (epochs < 1) fail("epochs must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be positive");
  if (!(lambda_ccl >= 0.0) || !(lambda_scl >= 0.0) || !std::isfinite(lambda_ccl) || !std::isfinite(lambda_scl)) {
    fail("loss weights must be finite and >= 0");
  }
  if (!(temperature > 0.0) || !std::isfinite(temperature)) fail("temperature must be positive");
  if (!(teacher_forcing_rate >= 0.0 && teacher_forcing_rate <= 1.0)) fail("teacher_forcing_rate must be in [0, 1]");
  if (!(clip_norm > 0.0)) fail("clip_norm must be positive");
  if (model.max_len == 0) fail("max_len must be >= 1");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"batch_size", c.batch_size},
                     {"epochs", c.epochs},
                     {"learning_rate", c.learning_rate},
                     {"lambda_ccl", c.lambda_ccl},
                     {"lambda_scl", c.lambda_scl},
                     {"temperature", c.temperature},
                     {"teacher_forcing_rate", c.teacher_forcing_rate},
                     {"batch_mean", c.batch_mean},
                     {"clip_norm", c.clip_norm},
                     {"seed", c.seed},
                     {"min_freq", c.min_freq},
                     {"embeddings", c.embeddings},
                     {"valid_limit", c.valid_limit},
                     {"model", c.model}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  static const std::set<std::string> known = {"batch_size", "epochs",     "learning_rate", "lambda_ccl",
                                              "lambda_scl", "temperature", "teacher_forcing_rate",
                                              "batch_mean", "clip_norm",  "seed",          "min_freq",
                                              "embeddings", "valid_limit", "model"};
  static const std::set<std::string> model_keys = {"vocab_size",   "embedding_dim", "content_dim", "style_dim",
                                                   "style_layers", "style_heads",   "style_ff_dim", "max_len",
                                                   "decoder_dim",  "normalize_features"};
  if (!j.is_object()) throw InputError("train config must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw InputError("unknown train config key '" + k + "'");
  }
  if (j.contains("model")) {
    for (const auto& [k, v] : j.at("model").items()) {
      if (!model_keys.count(k)) throw InputError("unknown model config key '" + k + "'");
    }
  }
  try {
    TrainConfig d;
    c.batch_size = j.value("batch_size", d.batch_size);
    c.epochs = j.value("epochs", d.epochs);
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.lambda_ccl = j.value("lambda_ccl", d.lambda_ccl);
    c.lambda_scl = j.value("lambda_scl", d.lambda_scl);
    c.temperature = j.value("temperature", d.temperature);
    c.teacher_forcing_rate = j.value("teacher_forcing_rate", d.teacher_forcing_rate);
    c.batch_mean = j.value("batch_mean", d.batch_mean);
    c.clip_norm = j.value("clip_norm", d.clip_norm);
    c.seed = j.value("seed", d.seed);
    c.min_freq = j.value("min_freq", d.min_freq);
    c.embeddings = j.value("embeddings", d.embeddings);
    c.valid_limit = j.value("valid_limit", d.valid_limit);
    c.model = j.contains("model") ? j.at("model").get<ModelConfig>() : d.model;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("train config: ") + e.what());
  }
}

Ablation parse_ablation(std::string_view name) {
  if (name == "full") return Ablation::kFull;
  if (name == "no-ccl") return Ablation::kNoCcl;
  if (name == "no-scl") return Ablation::kNoScl;
  if (name == "no-both") return Ablation::kNoBoth;
  throw InputError("unknown ablation '" + std::string(name) + "' (expected full, no-ccl, no-scl or no-both)");
}

std::string ablation_name(Ablation a) {
  switch (a) {
    case Ablation::kFull: return "full";
    case Ablation::kNoCcl: return "no-ccl";
    case Ablation::kNoScl: return "no-scl";
    case Ablation::kNoBoth: return "no-both";
  }
  return "full";
}

void apply_ablation(TrainConfig& cfg, Ablation a) {
  if (a == Ablation::kNoCcl || a == Ablation::kNoBoth) cfg.lambda_ccl = 0.0;
  if (a == Ablation::kNoScl || a == Ablation::kNoBoth) cfg.lambda_scl = 0.0;
}

// ---------------------------------------------------------------------------
// Batches

std::vector<EncodedTriple> encode_triples(std::span<const Triple> triples, const Vocabulary& vocab,
                                          std::size_t max_len) {
  std::vector<EncodedTriple> out;
  out.reserve(triples.size());
  for (const auto& t : triples) {
    out.push_back({encode(truncate(t.source, max_len), vocab), encode(truncate(t.target, max_len), vocab),
                   encode(truncate(t.exemplar, max_len), vocab)});
  }
  return out;
}

Batch make_batch(std::span<const EncodedTriple> data, std::span<const std::size_t> indices) {
  Batch b;
  b.indices.assign(indices.begin(), indices.end());
  std::vector<IdSequence> src, tgt, ex, dec;
  for (std::size_t i : indices) {
    src.push_back(data[i].source);
    tgt.push_back(data[i].target);
    ex.push_back(data[i].exemplar);
    IdSequence d = data[i].target;
    d.push_back(Vocabulary::kEos);
    dec.push_back(std::move(d));
  }
  b.source = pad_batch(src);
  b.target = pad_batch(tgt);
  b.exemplar = pad_batch(ex);
  b.decoder_target = pad_batch(dec);
  const std::size_t B = b.decoder_target.rows, T = b.decoder_target.cols;
  b.gold.resize(B * T);
  b.weight.resize(B * T);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t r = 0; r < B; ++r) {
      const std::size_t len = b.decoder_target.lengths[r];
      b.gold[t * B + r] = b.decoder_target.at(r, t);
      b.weight[t * B + r] = t < len ? 1.0 / static_cast<double>(len) : 0.0;
    }
  }
  return b;
}

std::vector<Batch> make_batches(std::span<const EncodedTriple> data, std::size_t n, std::uint64_t seed, bool shuffle) {
  if (n == 0) throw InputError("batch size must be >= 1");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  if (shuffle) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = order.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(order[i - 1], order[pick(rng)]);
    }
  }
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += n) {
    const std::size_t count = std::min(n, order.size() - start);
    batches.push_back(make_batch(data, std::span<const std::size_t>(order.data() + start, count)));
  }
  return batches;
}

// ---------------------------------------------------------------------------
// Loss graph

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Decoder with scheduled sampling: each step feeds the gold previous token
// with probability `rate`, otherwise the model's own argmax.
Var decode_sampled(Graph& g, const ModelState& m, Var h0, const Batch& batch, double rate, std::uint64_t seed) {
  const PaddedBatch& tgt = batch.decoder_target;
  const std::size_t B = tgt.rows, T = tgt.cols;
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution gold(rate);
  Var emb = g.param(m.embedding), w_ih = g.param(m.decoder.w_ih), b_ih = g.param(m.decoder.b_ih);
  Var w_hh = g.param(m.decoder.w_hh), b_hh = g.param(m.decoder.b_hh), out = g.param(m.output);
  std::vector<Var> steps;
  std::vector<std::size_t> inputs(B, static_cast<std::size_t>(Vocabulary::kSos));
  Var h = h0;
  for (std::size_t t = 0; t < T; ++t) {
    Var x = g.add_row(g.matmul(g.gather_rows(emb, inputs), w_ih), b_ih);
    h = g.gru_cell(x, h, w_hh, b_hh);
    Var logits = g.matmul(h, out);
    steps.push_back(logits);
    const Matrix& lv = g.value(logits);
    for (std::size_t r = 0; r < B; ++r) {
      if (gold(rng)) {
        inputs[r] = static_cast<std::size_t>(tgt.at(r, t));
      } else {
        Eigen::Index best = 0;
        lv.row(static_cast<Eigen::Index>(r)).maxCoeff(&best);
        inputs[r] = static_cast<std::size_t>(best);
      }
    }
  }
  return g.concat_rows(steps);
}

struct Forward {
  Var total;
  StepLosses losses;
};

Forward forward_losses(Graph& g, const Batch& batch, const ModelState& m, const TrainConfig& cfg,
                       std::uint64_t sample_seed) {
  Var c_x = forward::content(g, m, batch.source);
  Var c_y = forward::content(g, m, batch.target);
  Var s_z = forward::style(g, m, batch.exemplar);
  Var s_y = forward::style(g, m, batch.target);
  Var h0 = forward::initial_state(g, m, c_x, s_z);
  Var logits = cfg.teacher_forcing_rate >= 1.0
                   ? forward::decode_logits(g, m, h0, batch.decoder_target)
                   : decode_sampled(g, m, h0, batch, cfg.teacher_forcing_rate, sample_seed);

  Forward f;
  auto nll = weighted_nll_from_logits(g.value(logits), batch.gold, batch.weight);
  f.losses.nll = nll.value;
  const Var nll_in[] = {logits};
  f.total = g.custom_scalar(nll_in, nll.value, {std::move(nll.grad)});

  const auto copts = cfg.contrastive();
  auto ccl = infonce_bidirectional_with_grad(g.value(c_x), g.value(c_y), copts);
  auto scl = infonce_bidirectional_with_grad(g.value(s_y), g.value(s_z), copts);
  f.losses.ccl = ccl.value;
  f.losses.scl = scl.value;
  if (cfg.lambda_ccl != 0.0) {
    const Var in[] = {c_x, c_y};
    f.total = g.add(f.total, g.scale(g.custom_scalar(in, ccl.value, {std::move(ccl.grad_a), std::move(ccl.grad_b)}),
                                     cfg.lambda_ccl));
  }
  if (cfg.lambda_scl != 0.0) {
    const Var in[] = {s_y, s_z};
    f.total = g.add(f.total, g.scale(g.custom_scalar(in, scl.value, {std::move(scl.grad_a), std::move(scl.grad_b)}),
                                     cfg.lambda_scl));
  }
  f.losses.total = total_loss(f.losses.nll, f.losses.ccl, f.losses.scl, cfg.weights());
  return f;
}

void require_finite(const StepLosses& l, std::uint64_t step) {
  if (std::isfinite(l.nll) && std::isfinite(l.ccl) && std::isfinite(l.scl) && std::isfinite(l.total) &&
      std::isfinite(l.grad_norm)) {
    return;
  }
  std::ostringstream msg;
  msg << "non-finite loss at step " << step << ": nll=" << l.nll << " ccl=" << l.ccl << " scl=" << l.scl
      << " total=" << l.total << " grad_norm=" << l.grad_norm;
  throw NonFiniteLossError(msg.str());
}

}  // namespace

StepLosses evaluate_losses(const Batch& batch, const ModelState& m, const TrainConfig& cfg) {
  Graph g(false);
  return forward_losses(g, batch, m, cfg, cfg.seed).losses;
}

// ---------------------------------------------------------------------------
// Optimizer

Adam::Adam(const ModelState& m, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m.for_each_parameter([&](const std::string&, const Parameter& p) {
    m_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    v_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
  });
}

void Adam::step(ModelState& m) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  std::size_t i = 0;
  m.for_each_parameter([&](const std::string&, Parameter& p) {
    Matrix& mm = m_[i];
    Matrix& vv = v_[i];
    ++i;
    if (p.grad.size() != p.value.size()) return;
    mm = beta1_ * mm + (1.0 - beta1_) * p.grad;
    vv = beta2_ * vv + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= lr_ * (mm.array() / c1) / ((vv.array() / c2).sqrt() + eps_);
  });
}

nlohmann::json Adam::header() const {
  return {{"lr", lr_}, {"beta1", beta1_}, {"beta2", beta2_}, {"eps", eps_}, {"step", t_}};
}

void Adam::restore(const nlohmann::json& h, std::vector<Matrix> m, std::vector<Matrix> v) {
  lr_ = h.at("lr").get<double>();
  beta1_ = h.at("beta1").get<double>();
  beta2_ = h.at("beta2").get<double>();
  eps_ = h.at("eps").get<double>();
  t_ = h.at("step").get<std::uint64_t>();
  m_ = std::move(m);
  v_ = std::move(v);
}

StepLosses train_step(const Batch& batch, ModelState& m, Adam& opt, const TrainConfig& cfg) {
  m.zero_grad();
  Graph g(true);
  auto f = forward_losses(g, batch, m, cfg, mix(cfg.seed, opt.steps()));
  require_finite(f.losses, opt.steps());
  g.backward(f.total);
  double sq = 0.0;
  m.for_each_parameter([&](const std::string&, const Parameter& p) { sq += p.grad.squaredNorm(); });
  f.losses.grad_norm = std::sqrt(sq);
  require_finite(f.losses, opt.steps());
  if (f.losses.grad_norm > cfg.clip_norm) {
    const double k = cfg.clip_norm / f.losses.grad_norm;
    m.for_each_parameter([&](const std::string&, Parameter& p) { p.grad *= k; });
  }
  opt.step(m);
  return f.losses;
}

TeacherForcedStats teacher_forced_stats(std::span<const EncodedTriple> data, const ModelState& m,
                                        std::size_t batch_size) {
  if (data.empty()) throw EmptyInputError("no data for teacher-forced evaluation");
  double correct = 0, tokens = 0, nll = 0;
  for (const auto& batch : make_batches(data, std::max<std::size_t>(1, batch_size), 0, false)) {
    Graph g(false);
    Var h0 = forward::initial_state(g, m, forward::content(g, m, batch.source), forward::style(g, m, batch.exemplar));
    const Matrix& logits = g.value(forward::decode_logits(g, m, h0, batch.decoder_target));
    nll += weighted_nll_from_logits(logits, batch.gold, batch.weight).value;
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      if (batch.weight[static_cast<std::size_t>(r)] == 0.0) continue;
      Eigen::Index best = 0;
      for (Eigen::Index c = 1; c < logits.cols(); ++c) {
        if (logits(r, c) > logits(r, best)) best = c;
      }
      tokens += 1;
      if (best == batch.gold[static_cast<std::size_t>(r)]) correct += 1;
    }
  }
  return {correct / tokens, nll / static_cast<double>(data.size())};
}

// ---------------------------------------------------------------------------
// Run log

void RunLog::append(nlohmann::json record) {
  if (sink_) {
    std::ofstream out(*sink_, std::ios::app);
    out << record.dump() << '\n';
  }
  records_.push_back(std::move(record));
}

std::vector<nlohmann::json> RunLog::events(std::string_view kind) const {
  std::vector<nlohmann::json> out;
  for (const auto& r : records_) {
    if (r.value("event", "") == kind) out.push_back(r);
  }
  return out;
}

std::string RunLog::to_jsonl() const {
  std::string s;
  for (const auto& r : records_) s += r.dump() + "\n";
  return s;
}

RunLog RunLog::from_jsonl(const std::filesystem::path& path) {
  RunLog log;
  std::istringstream in(read_text_file(path));
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    try {
      log.records_.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string(), n, e.what());
    }
  }
  return log;
}

void RunLog::attach(const std::filesystem::path& path, bool append) {
  if (!append) std::ofstream(path, std::ios::trunc);
  sink_ = path;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'E', 'G', 'P', 'G', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;
static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw CheckpointError("truncated checkpoint " + path.string());
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelState& m, const Vocabulary& vocab,
                     const TrainConfig& cfg, const TrainingProgress* progress) {
  nlohmann::json header;
  header["model"] = m.config();
  header["train"] = cfg;
  header["vocab_hash"] = vocab.hash();
  header["vocab"] = vocab.tokens();
  std::vector<const Matrix*> data;
  nlohmann::json tensors = nlohmann::json::array();
  m.for_each_parameter([&](const std::string& name, const Parameter& p) {
    tensors.push_back({{"name", name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}});
    data.push_back(&p.value);
  });
  if (progress) {
    header["progress"] = {{"epochs_done", progress->epochs_done},
                          {"step", progress->step},
                          {"best_bleu", progress->best_bleu},
                          {"best_epoch", progress->best_epoch},
                          {"optimizer", progress->optimizer.header()}};
    std::size_t i = 0;
    m.for_each_parameter([&](const std::string& name, const Parameter&) {
      const Matrix& mm = progress->optimizer.first_moments().at(i);
      const Matrix& vv = progress->optimizer.second_moments().at(i);
      ++i;
      tensors.push_back({{"name", "adam.m." + name}, {"rows", mm.rows()}, {"cols", mm.cols()}});
      data.push_back(&mm);
      tensors.push_back({{"name", "adam.v." + name}, {"rows", vv.rows()}, {"cols", vv.cols()}});
      data.push_back(&vv);
    });
  }
  header["tensors"] = tensors;
  const std::string text = header.dump();

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kVersion);
    put<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const Matrix* t : data) {
      out.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(double)));
    }
    if (!out) throw Error("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[sizeof kMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw CheckpointError(path.string() + " is not a checkpoint");
  }
  if (const auto v = get<std::uint32_t>(in, path); v != kVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(v));
  }
  const auto len = get<std::uint64_t>(in, path);
  if (len > (1ULL << 32)) throw CheckpointError("corrupt checkpoint header in " + path.string());
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw CheckpointError("truncated checkpoint " + path.string());

  Checkpoint ck;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
    ck.vocab = Vocabulary::from_tokens(header.at("vocab").get<std::vector<std::string>>());
    ck.config = header.at("train").get<TrainConfig>();
    ck.config.model = header.at("model").get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }
  if (ck.vocab.hash() != header.at("vocab_hash").get<std::string>()) {
    throw CheckpointError("vocabulary hash mismatch inside " + path.string());
  }
  if (ck.config.model.vocab_size != ck.vocab.size()) {
    throw CheckpointError("checkpoint vocabulary size differs from its model config");
  }
  ck.config.model.validate();
  ck.model = ModelState(ck.config.model, 0);

  const auto& tensors = header.at("tensors");
  std::size_t k = 0;
  auto read_into = [&](const std::string& name, Matrix& dst) {
    if (k >= tensors.size()) throw CheckpointError("checkpoint is missing tensor " + name);
    const auto& t = tensors[k++];
    const auto rows = t.at("rows").get<Eigen::Index>(), cols = t.at("cols").get<Eigen::Index>();
    if (t.at("name").get<std::string>() != name || rows != dst.rows() || cols != dst.cols()) {
      throw CheckpointError("shape mismatch for tensor " + name + ": checkpoint has " + t.at("name").get<std::string>() +
                            " " + std::to_string(rows) + "x" + std::to_string(cols) + ", model expects " +
                            std::to_string(dst.rows()) + "x" + std::to_string(dst.cols()));
    }
    if (!in.read(reinterpret_cast<char*>(dst.data()), static_cast<std::streamsize>(dst.size() * sizeof(double)))) {
      throw CheckpointError("truncated checkpoint " + path.string());
    }
  };
  ck.model.for_each_parameter([&](const std::string& name, Parameter& p) { read_into(name, p.value); });
  if (header.contains("progress")) {
    const auto& pj = header.at("progress");
    TrainingProgress pr;
    pr.epochs_done = pj.at("epochs_done").get<std::size_t>();
    pr.step = pj.at("step").get<std::uint64_t>();
    pr.best_bleu = pj.at("best_bleu").get<double>();
    pr.best_epoch = pj.at("best_epoch").get<std::size_t>();
    std::vector<Matrix> mm, vv;
    ck.model.for_each_parameter([&](const std::string& name, const Parameter& p) {
      mm.emplace_back(p.value.rows(), p.value.cols());
      vv.emplace_back(p.value.rows(), p.value.cols());
      read_into("adam.m." + name, mm.back());
      read_into("adam.v." + name, vv.back());
    });
    pr.optimizer.restore(pj.at("optimizer"), std::move(mm), std::move(vv));
    ck.progress = std::move(pr);
  }
  if (k != tensors.size() || in.peek() != std::char_traits<char>::eof()) {
    throw CheckpointError("unexpected trailing data in checkpoint " + path.string());
  }
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const Vocabulary& vocab) {
  auto ck = load_checkpoint(path);
  if (ck.vocab.hash() != vocab.hash()) {
    throw CheckpointError("vocabulary hash mismatch: checkpoint " + ck.vocab.hash() + ", given " + vocab.hash());
  }
  return ck;
}

// ---------------------------------------------------------------------------
// Fit

namespace {

std::vector<Sentence> all_sentences(std::span<const Triple> triples, std::size_t max_len) {
  std::vector<Sentence> out;
  out.reserve(triples.size() * 3);
  for (const auto& t : triples) {
    out.push_back(truncate(t.source, max_len));
    out.push_back(truncate(t.target, max_len));
    out.push_back(truncate(t.exemplar, max_len));
  }
  return out;
}

}  // namespace

FitResult fit(std::span<const Triple> train, std::span<const Triple> valid, const TrainConfig& config,
              const FitOptions& options) {
  if (train.empty()) throw EmptyInputError("training set is empty");
  TrainConfig cfg = config;
  FitResult r;
  std::optional<Checkpoint> resumed;
  if (options.resume) {
    resumed = load_checkpoint(*options.resume);
    if (!resumed->progress) throw CheckpointError(options.resume->string() + " holds no training progress");
    const std::size_t epochs = cfg.epochs;
    cfg = resumed->config;
    cfg.epochs = epochs;
    r.vocab = resumed->vocab;
    r.model = std::move(resumed->model);
    r.progress = std::move(*resumed->progress);
  } else {
    auto sentences = all_sentences(train, cfg.model.max_len);
    r.vocab = build_vocabulary(sentences, cfg.min_freq);
    cfg.model.vocab_size = r.vocab.size();
    cfg.validate();
    cfg.model.validate();
    r.model = ModelState(cfg.model, cfg.seed);
    if (!cfg.embeddings.empty()) {
      std::mt19937_64 rng(mix(cfg.seed, 0xe));
      auto pre = load_pretrained_embeddings(cfg.embeddings, r.vocab, cfg.model.embedding_dim, rng);
      r.model.embedding.value = pre.matrix;
      log_info("pretrained embeddings cover " + std::to_string(pre.covered) + " of " + std::to_string(r.vocab.size()) +
               " tokens");
    }
    r.progress.optimizer = Adam(r.model, cfg.learning_rate);
  }
  cfg.validate();

  std::optional<std::filesystem::path> last_path, best_path;
  if (options.out_dir) {
    std::filesystem::create_directories(*options.out_dir);
    last_path = *options.out_dir / "last.ckpt";
    best_path = *options.out_dir / "best.ckpt";
    r.log.attach(*options.out_dir / "runlog.jsonl", resumed.has_value());
    std::ofstream vocab_out(*options.out_dir / "vocab.txt", std::ios::trunc);
    for (const auto& t : r.vocab.tokens()) vocab_out << t << '\n';
  }
  r.best = r.model;
  if (resumed && best_path && std::filesystem::exists(*best_path)) r.best = load_checkpoint(*best_path).model;

  const auto train_enc = encode_triples(train, r.vocab, cfg.model.max_len);
  std::vector<Triple> valid_items(valid.begin(), valid.end());
  if (valid_items.empty()) valid_items.assign(train.begin(), train.end());
  if (cfg.valid_limit > 0 && valid_items.size() > cfg.valid_limit) valid_items.resize(cfg.valid_limit);
  const auto valid_enc = encode_triples(valid_items, r.vocab, cfg.model.max_len);

  nlohmann::json cfg_json = cfg;
  r.log.append({{"event", "config"},
                {"config", cfg_json},
                {"vocab_size", r.vocab.size()},
                {"vocab_hash", r.vocab.hash()},
                {"parameters", r.model.parameter_count()},
                {"train_size", train.size()},
                {"valid_size", valid_items.size()},
                {"resumed_at_epoch", r.progress.epochs_done},
                {"contrastive_normalization", cfg.model.normalize_features}});

  EvalOptions eval_opts;
  eval_opts.max_len = cfg.model.max_len;
  eval_opts.workers = options.workers;
  std::size_t ran = 0;
  for (std::size_t epoch = r.progress.epochs_done; epoch < cfg.epochs; ++epoch) {
    if (options.stop_after && ran >= *options.stop_after) break;
    const auto t0 = std::chrono::steady_clock::now();
    double loss_sum = 0.0;
    auto batches = make_batches(train_enc, cfg.batch_size, mix(cfg.seed, epoch), true);
    for (const auto& batch : batches) {
      auto l = train_step(batch, r.model, r.progress.optimizer, cfg);
      ++r.progress.step;
      loss_sum += l.total;
      if (options.log_steps) {
        r.log.append({{"event", "step"},
                      {"epoch", epoch + 1},
                      {"step", r.progress.step},
                      {"nll", l.nll},
                      {"ccl", l.ccl},
                      {"scl", l.scl},
                      {"total", l.total},
                      {"grad_norm", l.grad_norm}});
      }
    }
    const auto generations = generate_for(r.model, r.vocab, valid_items, eval_opts);
    std::vector<Tokens> refs;
    for (const auto& t : valid_items) refs.push_back(truncate(t.target, cfg.model.max_len).tokens());
    const double valid_bleu = bleu(generations, refs);
    const auto tf = teacher_forced_stats(valid_enc, r.model);
    r.progress.epochs_done = epoch + 1;
    const bool improved = valid_bleu > r.progress.best_bleu;
    if (improved) {
      r.progress.best_bleu = valid_bleu;
      r.progress.best_epoch = epoch + 1;
      r.best = r.model;
    }
    if (best_path && improved) save_checkpoint(*best_path, r.model, r.vocab, cfg);
    if (last_path) save_checkpoint(*last_path, r.model, r.vocab, cfg, &r.progress);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.log.append({{"event", "epoch"},
                  {"epoch", epoch + 1},
                  {"step", r.progress.step},
                  {"train_loss_mean", loss_sum / static_cast<double>(batches.size())},
                  {"valid_bleu", valid_bleu},
                  {"valid_token_accuracy", tf.token_accuracy},
                  {"valid_nll", tf.mean_nll},
                  {"best_bleu", r.progress.best_bleu},
                  {"seconds", seconds}});
    log_info("epoch " + std::to_string(epoch + 1) + "/" + std::to_string(cfg.epochs) + " loss " +
             std::to_string(loss_sum / static_cast<double>(batches.size())) + " valid BLEU " +
             std::to_string(valid_bleu));
    ++ran;
  }
  return r;
}

}  // namespace egpg
