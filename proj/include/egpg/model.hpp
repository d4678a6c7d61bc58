#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "egpg/autograd.hpp"
#include "egpg/corpus.hpp"

namespace egpg {

using nn::Matrix;
using nn::Parameter;
using nn::RowVector;

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t embedding_dim = 300;
  std::size_t content_dim = 512;    // GRU content encoder hidden size
  std::size_t style_dim = 768;      // transformer width == style feature size
  std::size_t style_layers = 4;
  std::size_t style_heads = 8;
  std::size_t style_ff_dim = 3072;
  std::size_t max_len = kDefaultMaxLen;
  // 0 keeps the decoder at content_dim + style_dim with h0 = [c ; s]. Any
  // other value adds a linear map from [c ; s] to a decoder of that size.
  std::size_t decoder_dim = 0;
  // Whether features are L2-normalized wherever they are compared.
  bool normalize_features = true;

  std::size_t decoder_hidden() const { return decoder_dim == 0 ? content_dim + style_dim : decoder_dim; }
  void validate() const;  // throws InputError
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct Linear {
  Parameter w;  // in x out
  Parameter b;  // 1 x out
};

struct GruWeights {
  Parameter w_ih;  // in x 3H, gates (r, z, n)
  Parameter b_ih;
  Parameter w_hh;  // H x 3H
  Parameter b_hh;
};

struct StyleLayer {
  Linear query, key, value, attn_out;
  Parameter norm1_gamma, norm1_beta;
  Linear ff_in, ff_out;
  Parameter norm2_gamma, norm2_beta;
};

// Every trainable tensor of the content encoder, style encoder, decoder,
// shared word embeddings and output projection.
class ModelState {
 public:
  ModelState() = default;
  // Random initialization, deterministic in `seed`.
  ModelState(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }

  // Visits (name, parameter) in a fixed order.
  template <typename F>
  void for_each_parameter(F&& f) {
    visit(*this, f);
  }
  template <typename F>
  void for_each_parameter(F&& f) const {
    visit(*this, f);
  }

  std::size_t parameter_count() const;
  void zero_grad();

  Parameter embedding;      // |V| x d_emb
  GruWeights content;
  Linear style_input;       // d_emb -> style_dim
  Parameter style_position; // (max_len + 1) x style_dim
  Parameter style_norm_gamma, style_norm_beta;
  std::vector<StyleLayer> style_layers;
  Linear style_pool;
  Linear bridge;            // only when decoder_dim != 0
  GruWeights decoder;
  Parameter output;         // decoder_hidden x |V|

 private:
  template <typename Self, typename F>
  static void visit(Self& self, F& f);

  ModelConfig config_;
};

template <typename Self, typename F>
void ModelState::visit(Self& self, F& f) {
  auto linear = [&](const std::string& name, auto& l) {
    f(name + ".w", l.w);
    f(name + ".b", l.b);
  };
  auto gru = [&](const std::string& name, auto& g) {
    f(name + ".w_ih", g.w_ih);
    f(name + ".b_ih", g.b_ih);
    f(name + ".w_hh", g.w_hh);
    f(name + ".b_hh", g.b_hh);
  };
  f(std::string("embedding"), self.embedding);
  gru("content", self.content);
  linear("style.input", self.style_input);
  f(std::string("style.position"), self.style_position);
  f(std::string("style.norm.gamma"), self.style_norm_gamma);
  f(std::string("style.norm.beta"), self.style_norm_beta);
  for (std::size_t i = 0; i < self.style_layers.size(); ++i) {
    auto& l = self.style_layers[i];
    const std::string p = "style.layer" + std::to_string(i);
    linear(p + ".query", l.query);
    linear(p + ".key", l.key);
    linear(p + ".value", l.value);
    linear(p + ".attn_out", l.attn_out);
    f(p + ".norm1.gamma", l.norm1_gamma);
    f(p + ".norm1.beta", l.norm1_beta);
    linear(p + ".ff_in", l.ff_in);
    linear(p + ".ff_out", l.ff_out);
    f(p + ".norm2.gamma", l.norm2_gamma);
    f(p + ".norm2.beta", l.norm2_beta);
  }
  linear("style.pool", self.style_pool);
  if (self.config_.decoder_dim != 0) linear("bridge", self.bridge);
  gru("decoder", self.decoder);
  f(std::string("output"), self.output);
}

// Right-padded batch of id sequences, stored batch-major.
struct PaddedBatch {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<TokenId> ids;          // rows * cols, PAD beyond each length
  std::vector<std::size_t> lengths;

  TokenId at(std::size_t r, std::size_t c) const { return ids[r * cols + c]; }
};

PaddedBatch pad_batch(std::span<const IdSequence> sequences);

// Differentiable forward pieces used by training. All take a Graph so the
// same code runs with and without gradient recording.
namespace forward {

// B x content_dim: GRU state at each sequence's last real token.
nn::Var content(nn::Graph& g, const ModelState& m, const PaddedBatch& batch);

// B x style_dim: tanh-pooled output at the prepended SOS position.
nn::Var style(nn::Graph& g, const ModelState& m, const PaddedBatch& batch);

// B x decoder_hidden initial decoder state from content and style features.
nn::Var initial_state(nn::Graph& g, const ModelState& m, nn::Var c, nn::Var s);

// Teacher-forced decoder. `target` rows end with EOS (then PAD). Returns
// logits of shape (T * B) x |V|, time-major: row t * B + b predicts
// target(b, t) from inputs SOS, target(b, 0..t-1).
nn::Var decode_logits(nn::Graph& g, const ModelState& m, nn::Var h0, const PaddedBatch& target);

}  // namespace forward

struct ContentFeature {
  RowVector vector;
};

struct StyleFeature {
  RowVector vector;
};

ContentFeature encode_content(std::span<const TokenId> ids, const ModelState& m);
StyleFeature encode_style(std::span<const TokenId> ids, const ModelState& m);

// One row per sequence.
Matrix encode_content_batch(std::span<const IdSequence> seqs, const ModelState& m);
Matrix encode_style_batch(std::span<const IdSequence> seqs, const ModelState& m);

// h0 = [c ; s] (or its bridge projection when decoder_dim != 0).
RowVector decoder_initial_state(const ContentFeature& c, const StyleFeature& s, const ModelState& m);

// Row t is p_t = softmax(W h_t). target must end with EOS.
Matrix decode_teacher_forced(const ContentFeature& c, const StyleFeature& s, std::span<const TokenId> target,
                             const ModelState& m);

struct GenerateOptions {
  std::size_t max_len = kDefaultMaxLen;
  std::size_t beam_width = 1;  // 1 = greedy
};

// Greedy argmax decoding from SOS (lowest id wins ties) until EOS or
// max_len tokens; EOS is not returned. beam_width > 1 runs beam search.
IdSequence generate(const ContentFeature& c, const StyleFeature& s, const ModelState& m,
                    const GenerateOptions& options = {});

// Greedy decoding for many (c, s) rows at once.
std::vector<IdSequence> generate_batch(const Matrix& c, const Matrix& s, const ModelState& m, std::size_t max_len);

// Distributions seen while greedily decoding, one row per emitted step
// (including the step that produced EOS, if any).
Matrix greedy_step_distributions(const ContentFeature& c, const StyleFeature& s, const ModelState& m,
                                 std::size_t max_len);

}  // namespace egpg
