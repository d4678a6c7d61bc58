#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "egpg/corpus.hpp"
#include "egpg/losses.hpp"
#include "egpg/model.hpp"

namespace egpg {

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t epochs = 30;
  double learning_rate = 1e-4;
  double lambda_ccl = 0.1;
  double lambda_scl = 0.1;
  double temperature = 0.5;
  double teacher_forcing_rate = 1.0;
  bool batch_mean = false;
  double clip_norm = 5.0;
  std::uint64_t seed = 0;
  std::size_t min_freq = 1;
  std::string embeddings;  // optional "token v1 .. vd" file
  // Validation items decoded per epoch for model selection (0 = all).
  std::size_t valid_limit = 0;
  ModelConfig model;

  // Throws InputError.
  void validate() const;
  LossWeights weights() const { return {lambda_ccl, lambda_scl}; }
  ContrastiveOptions contrastive() const { return {temperature, model.normalize_features, batch_mean}; }
};

void to_json(nlohmann::json& j, const TrainConfig& c);
// Missing keys keep their defaults; unknown keys throw InputError.
void from_json(const nlohmann::json& j, TrainConfig& c);

// Named ablations of the two contrastive terms.
enum class Ablation { kFull, kNoCcl, kNoScl, kNoBoth };
Ablation parse_ablation(std::string_view name);
std::string ablation_name(Ablation a);
void apply_ablation(TrainConfig& cfg, Ablation a);

struct EncodedTriple {
  IdSequence source;    // no EOS
  IdSequence target;    // no EOS
  IdSequence exemplar;  // no EOS
};

std::vector<EncodedTriple> encode_triples(std::span<const Triple> triples, const Vocabulary& vocab,
                                          std::size_t max_len);

struct Batch {
  std::vector<std::size_t> indices;  // into the dataset
  PaddedBatch source, target, exemplar;
  PaddedBatch decoder_target;  // target + EOS
  // Time-major gold ids for the decoder and their loss weights: 1/|Y_i + EOS|
  // on real positions, 0 on PAD.
  std::vector<TokenId> gold;
  std::vector<double> weight;
  std::size_t size() const { return indices.size(); }
};

Batch make_batch(std::span<const EncodedTriple> data, std::span<const std::size_t> indices);

// Consecutive batches of n (the last may be short). With shuffle the order
// is a permutation drawn from `seed`.
std::vector<Batch> make_batches(std::span<const EncodedTriple> data, std::size_t n, std::uint64_t seed, bool shuffle);

struct StepLosses {
  double nll = 0.0;  // batch sum of per-sentence NLL
  double ccl = 0.0;
  double scl = 0.0;
  double total = 0.0;
  double grad_norm = 0.0;  // before clipping
};

// Loss terms for one batch without updating anything.
StepLosses evaluate_losses(const Batch& batch, const ModelState& m, const TrainConfig& cfg);

class Adam {
 public:
  Adam() = default;
  Adam(const ModelState& m, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(ModelState& m);
  std::uint64_t steps() const noexcept { return t_; }

  nlohmann::json header() const;
  const std::vector<Matrix>& first_moments() const { return m_; }
  const std::vector<Matrix>& second_moments() const { return v_; }
  void restore(const nlohmann::json& header, std::vector<Matrix> m, std::vector<Matrix> v);

 private:
  double lr_ = 1e-4, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::uint64_t t_ = 0;
  std::vector<Matrix> m_, v_;
};

// Forward, backward, global-norm clipping and one Adam update on total
// loss. Throws NonFiniteLossError when a loss or the gradient is not finite.
StepLosses train_step(const Batch& batch, ModelState& m, Adam& opt, const TrainConfig& cfg);

struct TeacherForcedStats {
  double token_accuracy = 0.0;  // over target tokens including EOS
  double mean_nll = 0.0;        // mean per-sentence NLL
};

TeacherForcedStats teacher_forced_stats(std::span<const EncodedTriple> data, const ModelState& m,
                                        std::size_t batch_size = 64);

class RunLog {
 public:
  void append(nlohmann::json record);
  const std::vector<nlohmann::json>& records() const noexcept { return records_; }
  std::vector<nlohmann::json> events(std::string_view kind) const;
  std::string to_jsonl() const;
  static RunLog from_jsonl(const std::filesystem::path& path);
  // Streams every appended record to `path` as well.
  void attach(const std::filesystem::path& path, bool append);

 private:
  std::vector<nlohmann::json> records_;
  std::optional<std::filesystem::path> sink_;
};

struct TrainingProgress {
  std::size_t epochs_done = 0;
  std::uint64_t step = 0;
  double best_bleu = -1.0;
  std::size_t best_epoch = 0;
  Adam optimizer;
};

struct Checkpoint {
  ModelState model;
  Vocabulary vocab;
  TrainConfig config;
  std::optional<TrainingProgress> progress;
};

void save_checkpoint(const std::filesystem::path& path, const ModelState& m, const Vocabulary& vocab,
                     const TrainConfig& cfg, const TrainingProgress* progress = nullptr);
// Throws CheckpointError on corruption or shape mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path);
// As above, additionally requiring the stored vocabulary hash to equal vocab.hash().
Checkpoint load_checkpoint(const std::filesystem::path& path, const Vocabulary& vocab);

struct FitOptions {
  // Writes last.ckpt, best.ckpt and runlog.jsonl here when set.
  std::optional<std::filesystem::path> out_dir;
  // Continue from this checkpoint's progress.
  std::optional<std::filesystem::path> resume;
  // Stop after this many epochs in this call (simulated interruption).
  std::optional<std::size_t> stop_after;
  bool log_steps = true;
  std::size_t workers = 1;
};

struct FitResult {
  ModelState model;  // state after the last epoch
  ModelState best;   // highest validation BLEU
  Vocabulary vocab;
  RunLog log;
  TrainingProgress progress;
};

// Builds the vocabulary from `train` (unless resuming), initializes the
// model from cfg.seed and runs cfg.epochs epochs, validating on `valid`.
FitResult fit(std::span<const Triple> train, std::span<const Triple> valid, const TrainConfig& cfg,
              const FitOptions& options = {});

}  // namespace egpg
