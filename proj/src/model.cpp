#include "egpg/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "egpg/error.hpp"
#include "egpg/losses.hpp"

namespace egpg {

using nn::Graph;
using nn::Var;

void ModelConfig::validate() const {
  auto fail = [](const std::string& why) { throw InputError("invalid model config: " + why); };
  if (vocab_size <= Vocabulary::kNumSpecials) fail("vocab_size must exceed the special symbols");
  if (embedding_dim == 0 || content_dim == 0 || style_dim == 0) fail("dimensions must be positive");
  if (style_heads == 0 || style_dim % style_heads != 0) fail("style_dim must be divisible by style_heads");
  if (style_ff_dim == 0) fail("style_ff_dim must be positive");
  if (max_len == 0) fail("max_len must be >= 1");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"vocab_size", c.vocab_size},     {"embedding_dim", c.embedding_dim},
                     {"content_dim", c.content_dim},   {"style_dim", c.style_dim},
                     {"style_layers", c.style_layers}, {"style_heads", c.style_heads},
                     {"style_ff_dim", c.style_ff_dim}, {"max_len", c.max_len},
                     {"decoder_dim", c.decoder_dim},   {"normalize_features", c.normalize_features}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.embedding_dim = j.value("embedding_dim", d.embedding_dim);
  c.content_dim = j.value("content_dim", d.content_dim);
  c.style_dim = j.value("style_dim", d.style_dim);
  c.style_layers = j.value("style_layers", d.style_layers);
  c.style_heads = j.value("style_heads", d.style_heads);
  c.style_ff_dim = j.value("style_ff_dim", d.style_ff_dim);
  c.max_len = j.value("max_len", d.max_len);
  c.decoder_dim = j.value("decoder_dim", d.decoder_dim);
  c.normalize_features = j.value("normalize_features", d.normalize_features);
}

namespace {

using Rng = std::mt19937_64;

Matrix uniform(Eigen::Index r, Eigen::Index c, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Matrix normal(Eigen::Index r, Eigen::Index c, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Parameter make(Matrix m) { return Parameter{std::move(m), Matrix()}; }

GruWeights init_gru(std::size_t in, std::size_t hidden, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  const auto i = static_cast<Eigen::Index>(in), h = static_cast<Eigen::Index>(hidden);
  GruWeights g;
  g.w_ih = make(uniform(i, 3 * h, bound, rng));
  g.b_ih = make(uniform(1, 3 * h, bound, rng));
  g.w_hh = make(uniform(h, 3 * h, bound, rng));
  g.b_hh = make(uniform(1, 3 * h, bound, rng));
  return g;
}

Linear init_dense(std::size_t in, std::size_t out, Rng& rng) {
  const auto i = static_cast<Eigen::Index>(in), o = static_cast<Eigen::Index>(out);
  return Linear{make(normal(i, o, 0.02, rng)), make(Matrix::Zero(1, o))};
}

Parameter ones(std::size_t n) { return make(Matrix::Ones(1, static_cast<Eigen::Index>(n))); }
Parameter zeros(std::size_t n) { return make(Matrix::Zero(1, static_cast<Eigen::Index>(n))); }

}  // namespace

ModelState::ModelState(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const auto& c = config_;
  const auto V = static_cast<Eigen::Index>(c.vocab_size);
  embedding = make(uniform(V, static_cast<Eigen::Index>(c.embedding_dim), 0.1, rng));
  content = init_gru(c.embedding_dim, c.content_dim, rng);
  style_input = init_dense(c.embedding_dim, c.style_dim, rng);
  style_position = make(normal(static_cast<Eigen::Index>(c.max_len + 1), static_cast<Eigen::Index>(c.style_dim), 0.02, rng));
  style_norm_gamma = ones(c.style_dim);
  style_norm_beta = zeros(c.style_dim);
  style_layers.resize(c.style_layers);
  for (auto& l : style_layers) {
    l.query = init_dense(c.style_dim, c.style_dim, rng);
    l.key = init_dense(c.style_dim, c.style_dim, rng);
    l.value = init_dense(c.style_dim, c.style_dim, rng);
    l.attn_out = init_dense(c.style_dim, c.style_dim, rng);
    l.norm1_gamma = ones(c.style_dim);
    l.norm1_beta = zeros(c.style_dim);
    l.ff_in = init_dense(c.style_dim, c.style_ff_dim, rng);
    l.ff_out = init_dense(c.style_ff_dim, c.style_dim, rng);
    l.norm2_gamma = ones(c.style_dim);
    l.norm2_beta = zeros(c.style_dim);
  }
  style_pool = init_dense(c.style_dim, c.style_dim, rng);
  const std::size_t joint = c.content_dim + c.style_dim;
  if (c.decoder_dim != 0) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(joint));
    bridge = Linear{make(uniform(static_cast<Eigen::Index>(joint), static_cast<Eigen::Index>(c.decoder_dim), bound, rng)),
                    make(uniform(1, static_cast<Eigen::Index>(c.decoder_dim), bound, rng))};
  }
  const std::size_t hidden = c.decoder_hidden();
  decoder = init_gru(c.embedding_dim, hidden, rng);
  output = make(uniform(static_cast<Eigen::Index>(hidden), V, 1.0 / std::sqrt(static_cast<double>(hidden)), rng));
}

std::size_t ModelState::parameter_count() const {
  std::size_t n = 0;
  for_each_parameter([&](const std::string&, const Parameter& p) { n += static_cast<std::size_t>(p.value.size()); });
  return n;
}

void ModelState::zero_grad() {
  for_each_parameter([](const std::string&, Parameter& p) { p.zero_grad(); });
}

PaddedBatch pad_batch(std::span<const IdSequence> sequences) {
  PaddedBatch b;
  b.rows = sequences.size();
  for (const auto& s : sequences) b.cols = std::max(b.cols, s.size());
  b.ids.assign(b.rows * b.cols, Vocabulary::kPad);
  b.lengths.resize(b.rows);
  for (std::size_t r = 0; r < b.rows; ++r) {
    b.lengths[r] = sequences[r].size();
    std::copy(sequences[r].begin(), sequences[r].end(), b.ids.begin() + static_cast<std::ptrdiff_t>(r * b.cols));
  }
  return b;
}

namespace forward {
namespace {

Var dense(Graph& g, Var x, const Linear& l) { return g.add_row(g.matmul(x, g.param(l.w)), g.param(l.b)); }

void check_ids(const PaddedBatch& batch, const ModelState& m) {
  if (batch.rows == 0) throw EmptyInputError("empty batch");
  for (TokenId id : batch.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= m.config().vocab_size) {
      throw InputError("token id " + std::to_string(id) + " outside the model vocabulary");
    }
  }
  for (std::size_t len : batch.lengths) {
    if (len == 0) throw EmptyInputError("cannot encode an empty sequence");
  }
}

// Input projections for every time step at once, rows ordered t * B + b.
Var project_inputs(Graph& g, const ModelState& m, const GruWeights& w, const std::vector<std::size_t>& time_major) {
  Var emb = g.gather_rows(g.param(m.embedding), time_major);
  return g.add_row(g.matmul(emb, g.param(w.w_ih)), g.param(w.b_ih));
}

}  // namespace

Var content(Graph& g, const ModelState& m, const PaddedBatch& batch) {
  check_ids(batch, m);
  const std::size_t B = batch.rows, T = batch.cols;
  std::vector<std::size_t> time_major(B * T);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t b = 0; b < B; ++b) time_major[t * B + b] = static_cast<std::size_t>(batch.at(b, t));
  }
  Var xp = project_inputs(g, m, m.content, time_major);
  Var w_hh = g.param(m.content.w_hh);
  Var b_hh = g.param(m.content.b_hh);
  Var h = g.constant(Matrix::Zero(static_cast<Eigen::Index>(B), static_cast<Eigen::Index>(m.config().content_dim)));
  std::vector<bool> keep(B);
  for (std::size_t t = 0; t < T; ++t) {
    Var next = g.gru_cell(g.slice_rows(xp, t * B, B), h, w_hh, b_hh);
    bool all = true;
    for (std::size_t b = 0; b < B; ++b) {
      keep[b] = t < batch.lengths[b];
      all = all && keep[b];
    }
    // Padding steps carry the last real state forward.
    h = all ? next : g.select_rows(next, h, keep);
  }
  return h;
}

Var style(Graph& g, const ModelState& m, const PaddedBatch& batch) {
  check_ids(batch, m);
  const auto& cfg = m.config();
  if (batch.cols > cfg.max_len) {
    throw InputError("sequence of length " + std::to_string(batch.cols) + " exceeds max_len " +
                     std::to_string(cfg.max_len));
  }
  // SOS is prepended and acts as the pooling position.
  const std::size_t B = batch.rows, S = batch.cols + 1;
  std::vector<std::size_t> tokens(B * S), positions(B * S), pool_rows(B);
  std::vector<bool> key_mask(B * S);
  for (std::size_t b = 0; b < B; ++b) {
    pool_rows[b] = b * S;
    for (std::size_t p = 0; p < S; ++p) {
      tokens[b * S + p] = p == 0 ? static_cast<std::size_t>(Vocabulary::kSos) : static_cast<std::size_t>(batch.at(b, p - 1));
      positions[b * S + p] = p;
      key_mask[b * S + p] = p <= batch.lengths[b];
    }
  }
  Var x = dense(g, g.gather_rows(g.param(m.embedding), tokens), m.style_input);
  x = g.add(x, g.gather_rows(g.param(m.style_position), positions));
  x = g.layer_norm(x, g.param(m.style_norm_gamma), g.param(m.style_norm_beta));
  for (const auto& layer : m.style_layers) {
    Var q = dense(g, x, layer.query);
    Var k = dense(g, x, layer.key);
    Var v = dense(g, x, layer.value);
    Var att = dense(g, g.attention(q, k, v, B, S, cfg.style_heads, key_mask), layer.attn_out);
    x = g.layer_norm(g.add(x, att), g.param(layer.norm1_gamma), g.param(layer.norm1_beta));
    Var ff = dense(g, g.gelu(dense(g, x, layer.ff_in)), layer.ff_out);
    x = g.layer_norm(g.add(x, ff), g.param(layer.norm2_gamma), g.param(layer.norm2_beta));
  }
  return g.tanh(dense(g, g.gather_rows(x, pool_rows), m.style_pool));
}

Var initial_state(Graph& g, const ModelState& m, Var c, Var s) {
  const auto& cfg = m.config();
  if (static_cast<std::size_t>(g.value(c).cols()) != cfg.content_dim ||
      static_cast<std::size_t>(g.value(s).cols()) != cfg.style_dim || g.value(c).rows() != g.value(s).rows()) {
    throw DimensionError("feature dimensions do not match the model (content " + std::to_string(cfg.content_dim) +
                         ", style " + std::to_string(cfg.style_dim) + ")");
  }
  Var joint = g.concat_cols(c, s);
  return cfg.decoder_dim == 0 ? joint : dense(g, joint, m.bridge);
}

Var decode_logits(Graph& g, const ModelState& m, Var h0, const PaddedBatch& target) {
  if (target.rows == 0 || target.cols == 0) throw EmptyInputError("empty decoder target");
  const std::size_t B = target.rows, T = target.cols;
  std::vector<std::size_t> inputs(B * T);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t b = 0; b < B; ++b) {
      TokenId prev = t == 0 ? Vocabulary::kSos : target.at(b, t - 1);
      // PAD after EOS feeds PAD; those steps carry no loss.
      inputs[t * B + b] = static_cast<std::size_t>(prev);
    }
  }
  Var xp = project_inputs(g, m, m.decoder, inputs);
  Var w_hh = g.param(m.decoder.w_hh);
  Var b_hh = g.param(m.decoder.b_hh);
  std::vector<Var> states;
  states.reserve(T);
  Var h = h0;
  for (std::size_t t = 0; t < T; ++t) {
    h = g.gru_cell(g.slice_rows(xp, t * B, B), h, w_hh, b_hh);
    states.push_back(h);
  }
  return g.matmul(g.concat_rows(states), g.param(m.output));
}

}  // namespace forward

namespace {

IdSequence checked(std::span<const TokenId> ids) {
  if (ids.empty()) throw EmptyInputError("cannot encode an empty sequence");
  return IdSequence(ids.begin(), ids.end());
}

}  // namespace

ContentFeature encode_content(std::span<const TokenId> ids, const ModelState& m) {
  IdSequence seq = checked(ids);
  return ContentFeature{encode_content_batch(std::span<const IdSequence>(&seq, 1), m).row(0)};
}

StyleFeature encode_style(std::span<const TokenId> ids, const ModelState& m) {
  IdSequence seq = checked(ids);
  return StyleFeature{encode_style_batch(std::span<const IdSequence>(&seq, 1), m).row(0)};
}

Matrix encode_content_batch(std::span<const IdSequence> seqs, const ModelState& m) {
  Graph g(false);
  return g.value(forward::content(g, m, pad_batch(seqs)));
}

Matrix encode_style_batch(std::span<const IdSequence> seqs, const ModelState& m) {
  Graph g(false);
  return g.value(forward::style(g, m, pad_batch(seqs)));
}

RowVector decoder_initial_state(const ContentFeature& c, const StyleFeature& s, const ModelState& m) {
  Graph g(false);
  Var h0 = forward::initial_state(g, m, g.constant(c.vector), g.constant(s.vector));
  return g.value(h0).row(0);
}

Matrix decode_teacher_forced(const ContentFeature& c, const StyleFeature& s, std::span<const TokenId> target,
                             const ModelState& m) {
  if (target.empty() || target.back() != Vocabulary::kEos) {
    throw InputError("teacher-forced target must end with EOS");
  }
  Graph g(false);
  Var h0 = forward::initial_state(g, m, g.constant(c.vector), g.constant(s.vector));
  IdSequence seq(target.begin(), target.end());
  Var logits = forward::decode_logits(g, m, h0, pad_batch(std::span<const IdSequence>(&seq, 1)));
  return softmax_rows(g.value(logits));
}

namespace {

// Single-step decoder for inference, B rows at a time.
class Stepper {
 public:
  Stepper(const ModelState& m, Matrix h) : m_(m), h_(std::move(h)) {}

  const Matrix& state() const { return h_; }
  void set_state(Matrix h) { h_ = std::move(h); }

  // Feeds `inputs` (one id per row) and returns logits for the next token.
  Matrix step(const std::vector<TokenId>& inputs) {
    Graph g(false);
    std::vector<std::size_t> rows(inputs.begin(), inputs.end());
    Var xp = g.add_row(g.matmul(g.gather_rows(g.param(m_.embedding), rows), g.param(m_.decoder.w_ih)),
                       g.param(m_.decoder.b_ih));
    Var h = g.gru_cell(xp, g.constant(h_), g.param(m_.decoder.w_hh), g.param(m_.decoder.b_hh));
    h_ = g.value(h);
    return h_ * m_.output.value;
  }

 private:
  const ModelState& m_;
  Matrix h_;
};

TokenId argmax(const Eigen::Ref<const RowVector>& row) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < row.size(); ++i) {
    if (row(i) > row(best)) best = i;
  }
  return static_cast<TokenId>(best);
}

Matrix initial_rows(const Matrix& c, const Matrix& s, const ModelState& m) {
  Graph g(false);
  return g.value(forward::initial_state(g, m, g.constant(c), g.constant(s)));
}

struct Hypothesis {
  IdSequence tokens;
  double score = 0.0;
  Matrix state;
};

IdSequence beam_search(const Matrix& h0, const ModelState& m, std::size_t max_len, std::size_t width) {
  std::vector<Hypothesis> beam{Hypothesis{{}, 0.0, h0}};
  std::vector<Hypothesis> finished;
  for (std::size_t t = 0; t < max_len && !beam.empty(); ++t) {
    std::vector<Hypothesis> next;
    for (const auto& hyp : beam) {
      Stepper st(m, hyp.state);
      Matrix logits = st.step({hyp.tokens.empty() ? Vocabulary::kSos : hyp.tokens.back()});
      RowVector row = logits.row(0);
      const double mx = row.maxCoeff();
      const double lse = mx + std::log((row.array() - mx).exp().sum());
      std::vector<Eigen::Index> order(static_cast<std::size_t>(row.size()));
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Eigen::Index>(i);
      const std::size_t keep = std::min(width, order.size());
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                        [&](Eigen::Index a, Eigen::Index b) { return row(a) > row(b) || (row(a) == row(b) && a < b); });
      for (std::size_t k = 0; k < keep; ++k) {
        Hypothesis h{hyp.tokens, hyp.score + row(order[k]) - lse, st.state()};
        const auto id = static_cast<TokenId>(order[k]);
        if (id == Vocabulary::kEos) {
          finished.push_back(std::move(h));
        } else {
          h.tokens.push_back(id);
          next.push_back(std::move(h));
        }
      }
    }
    std::stable_sort(next.begin(), next.end(), [](const Hypothesis& a, const Hypothesis& b) { return a.score > b.score; });
    if (next.size() > width) next.resize(width);
    beam = std::move(next);
    // Stop once no open hypothesis can beat the best finished one.
    if (!finished.empty() && !beam.empty()) {
      double best_done = finished.front().score;
      for (const auto& f : finished) best_done = std::max(best_done, f.score);
      if (beam.front().score <= best_done) break;
    }
  }
  for (auto& h : beam) finished.push_back(std::move(h));
  const Hypothesis* best = &finished.front();
  for (const auto& h : finished) {
    if (h.score > best->score) best = &h;
  }
  return best->tokens;
}

}  // namespace

IdSequence generate(const ContentFeature& c, const StyleFeature& s, const ModelState& m, const GenerateOptions& options) {
  if (options.beam_width == 0) throw InputError("beam width must be at least 1");
  if (options.beam_width == 1) {
    Matrix cm = c.vector, sm = s.vector;
    return generate_batch(cm, sm, m, options.max_len).front();
  }
  return beam_search(initial_rows(c.vector, s.vector, m), m, options.max_len, options.beam_width);
}

std::vector<IdSequence> generate_batch(const Matrix& c, const Matrix& s, const ModelState& m, std::size_t max_len) {
  const auto B = static_cast<std::size_t>(c.rows());
  std::vector<IdSequence> out(B);
  if (B == 0) return out;
  Stepper st(m, initial_rows(c, s, m));
  std::vector<TokenId> inputs(B, Vocabulary::kSos);
  std::vector<bool> done(B, false);
  std::size_t open = B;
  for (std::size_t t = 0; t < max_len && open > 0; ++t) {
    Matrix logits = st.step(inputs);
    for (std::size_t b = 0; b < B; ++b) {
      if (done[b]) continue;
      TokenId id = argmax(logits.row(static_cast<Eigen::Index>(b)));
      if (id == Vocabulary::kEos) {
        done[b] = true;
        --open;
      } else {
        out[b].push_back(id);
      }
      inputs[b] = id;
    }
  }
  return out;
}

Matrix greedy_step_distributions(const ContentFeature& c, const StyleFeature& s, const ModelState& m,
                                 std::size_t max_len) {
  Stepper st(m, initial_rows(c.vector, s.vector, m));
  std::vector<RowVector> rows;
  TokenId input = Vocabulary::kSos;
  for (std::size_t t = 0; t < max_len; ++t) {
    Matrix p = softmax_rows(st.step({input}));
    rows.push_back(p.row(0));
    input = argmax(p.row(0));
    if (input == Vocabulary::kEos) break;
  }
  Matrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(m.config().vocab_size));
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = rows[i];
  return out;
}

}  // namespace egpg
