#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "dbias/biasing.hpp"
#include "dbias/corpus.hpp"
#include "dbias/losses.hpp"
#include "dbias/model.hpp"
#include "dbias/rare_words.hpp"
#include "dbias/text_injection.hpp"

namespace dbias {

enum class TrainMode {
  kScratch,         // speech only, from scratch
  kScratchUstr,     // speech + unspoken text, from scratch
  kFinetuneBias,    // biasing module on a pre-trained transducer, group LR
  kFinetuneFrozen,  // as above with every base group frozen
};
std::string to_string(TrainMode m);
TrainMode parse_train_mode(std::string_view s);

enum class OptimizerKind { kSgd, kAdam };

struct OptimizerGroups {
  double lr_biasing = 1e-2;
  double lr_base = 1e-2;
  std::set<ParamGroup> frozen;
  int64_t steps = 0;
  double clip_norm = 5.0;  // <= 0 disables clipping
  OptimizerKind kind = OptimizerKind::kSgd;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int warmup_steps = 0;
  std::map<const Parameter*, std::pair<Matrix, Matrix>> moments;

  /// Effective learning rate of `group` at the current step (0 if frozen).
  double lr(ParamGroup group) const;
};

struct GradEntry {
  ParamGroup group;
  Parameter* param;
  Matrix grad;
};

struct UpdateStats {
  double grad_norm = 0.0;
  bool clipped = false;
};

/// Clips the global norm of the non-frozen gradients, applies one update per
/// parameter and increments the step count. Frozen parameters are untouched.
UpdateStats optimizer_step(OptimizerGroups& groups, std::span<GradEntry> grads);

struct AugmentConfig {
  bool enabled = true;
  int n_time_masks = 1;
  int max_time_width = 4;
  int n_feature_masks = 1;
  int max_feature_width = 2;
};

struct TrainRecipe {
  TrainMode mode = TrainMode::kScratch;
  int epochs = 10;
  int batch_speech = 8;  // B1
  int batch_text = 8;    // B2
  int max_extra = 20;    // training bias-list distractors
  int rare_common_k = 60;
  uint64_t seed = 1;
  AugmentConfig augment;
  double bpe_dropout = 0.1;
  double paired_swap_p = 0.15;
  TextFeatureConfig text;
  double ilmt_weight = kIlmtWeight;
  double we_scale = kWordEncoderAuxScale;
  bool biasing = false;  // scratch modes: train with a biasing module
  BiasingConfig biasing_config;
  ModelConfig model;
  OptimizerGroups optimizer;
  int max_symbols_per_frame = 5;

  /// Throws ConfigError on inconsistent settings.
  void validate() const;
};

TrainRecipe recipe_from_json(std::string_view text);
std::string recipe_to_json(const TrainRecipe& recipe);
TrainRecipe load_recipe(const std::filesystem::path& path);

/// Batch words in rare2k (deduplicated) plus up to max_extra distractors from
/// rare2k's observed words outside the batch; order shuffled.
std::vector<std::string> sample_training_bias_list(std::span<const std::vector<std::string>> batch_transcripts,
                                                   const RareWordSet& rare2k, int max_extra, Rng& rng);

Matrix spec_augment(const Matrix& features, int n_time_masks, int max_time_width,
                    int n_feature_masks, int max_feature_width, Rng& rng);

struct StepResult {
  LossBreakdown losses;  // per-item means; we_* are per-step
  int64_t target_tokens = 0;
  double transducer_sum = 0.0;
  size_t bias_list_size = 0;
  UpdateStats update;
};

struct TrainContext {
  const SubwordVocab& vocab;
  const PhonemeLexicon& lexicon;
};

struct StepLoss {
  Var total;             // scalar to differentiate
  LossBreakdown losses;  // per-item means
  int64_t target_tokens = 0;
  double transducer_sum = 0.0;
};

/// Combined loss of one batch built on `tape`, without any update. Throws
/// Error naming the item when a loss is not finite.
StepLoss training_loss(Tape& tape, const ModelParams& params, std::span<const TrainItem> speech,
                       std::span<const TrainItem> text, std::span<const BiasEntry> bias, const TrainRecipe& recipe,
                       const TrainContext& ctx, Rng& rng);

/// One forward/backward/update over speech and text items with a shared bias
/// list. Throws Error naming the item when a loss is not finite.
StepResult train_step(ModelParams& params, std::span<const TrainItem> speech,
                      std::span<const TrainItem> text, std::span<const BiasEntry> bias,
                      OptimizerGroups& groups, const TrainRecipe& recipe, const TrainContext& ctx,
                      Rng& rng);

struct FitData {
  const std::vector<Utterance>& speech;
  const std::vector<std::vector<std::string>>* text = nullptr;
  const SubwordVocab& vocab;
  const PhonemeLexicon& lexicon;
  const RareWordSet& rare;
};

struct FitResult {
  ModelParams params;
  std::vector<std::string> log;  // JSON lines, one per step
  std::vector<double> epoch_total;
  std::vector<double> epoch_transducer_per_token;
};

using EpochCallback = std::function<void(int epoch, const FitResult&)>;

/// Scratch modes initialize from the recipe; fine-tune modes require `init`
/// and attach a fresh biasing module when it has none.
FitResult fit(const TrainRecipe& recipe, const FitData& data, std::optional<ModelParams> init = std::nullopt,
              const EpochCallback& on_epoch = {});

/// Model config sized for a vocabulary and lexicon.
ModelConfig sized_model_config(ModelConfig base, const SubwordVocab& vocab, const PhonemeLexicon& lexicon);

}  // namespace dbias
