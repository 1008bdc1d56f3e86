#include "dbias/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "json_io.hpp"

namespace dbias {

using nlohmann::json;

std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::kScratch: return "scratch";
    case TrainMode::kScratchUstr: return "scratch-ustr";
    case TrainMode::kFinetuneBias: return "finetune-bias";
    case TrainMode::kFinetuneFrozen: return "finetune-frozen";
  }
  return "?";
}

TrainMode parse_train_mode(std::string_view s) {
  for (TrainMode m : {TrainMode::kScratch, TrainMode::kScratchUstr, TrainMode::kFinetuneBias,
                      TrainMode::kFinetuneFrozen}) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("unknown training mode '" + std::string(s) + "'");
}

double OptimizerGroups::lr(ParamGroup group) const {
  if (frozen.contains(group)) return 0.0;
  double base = group == ParamGroup::kBiasing ? lr_biasing : lr_base;
  if (warmup_steps > 0) {
    base *= std::min(1.0, static_cast<double>(steps + 1) / static_cast<double>(warmup_steps));
  }
  return base;
}

UpdateStats optimizer_step(OptimizerGroups& groups, std::span<GradEntry> grads) {
  UpdateStats stats;
  double sq = 0.0;
  for (const auto& e : grads) {
    if (!groups.frozen.contains(e.group)) sq += e.grad.squaredNorm();
  }
  stats.grad_norm = std::sqrt(sq);
  double factor = 1.0;
  if (groups.clip_norm > 0 && stats.grad_norm > groups.clip_norm) {
    factor = groups.clip_norm / stats.grad_norm;
    stats.clipped = true;
  }
  for (auto& e : grads) {
    const double lr = groups.lr(e.group);
    if (lr == 0.0) continue;
    if (e.grad.rows() != e.param->value.rows() || e.grad.cols() != e.param->value.cols()) {
      throw ConfigError("gradient shape does not match its parameter");
    }
    if (groups.kind == OptimizerKind::kSgd) {
      if (stats.clipped) {
        e.param->value -= lr * (factor * e.grad);
      } else {
        e.param->value -= lr * e.grad;
      }
      continue;
    }
    auto [it, fresh] = groups.moments.try_emplace(e.param);
    auto& [m, v] = it->second;
    if (fresh) {
      m = Matrix::Zero(e.grad.rows(), e.grad.cols());
      v = Matrix::Zero(e.grad.rows(), e.grad.cols());
    }
    const Matrix g = factor * e.grad;
    m = groups.beta1 * m + (1.0 - groups.beta1) * g;
    v = groups.beta2 * v + (1.0 - groups.beta2) * g.cwiseProduct(g);
    const double t = static_cast<double>(groups.steps + 1);
    const double c1 = 1.0 - std::pow(groups.beta1, t);
    const double c2 = 1.0 - std::pow(groups.beta2, t);
    e.param->value.array() -=
        lr * (m.array() / c1) / ((v.array() / c2).sqrt() + groups.epsilon);
  }
  ++groups.steps;
  return stats;
}

void TrainRecipe::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_speech < 1) throw ConfigError("batch_speech must be >= 1");
  if (batch_text < 0) throw ConfigError("batch_text must be >= 0");
  if (max_extra < 0) throw ConfigError("max_extra must be >= 0");
  if (rare_common_k < 0) throw ConfigError("rare_common_k must be >= 0");
  if (bpe_dropout < 0 || bpe_dropout >= 1) throw ConfigError("bpe_dropout must be in [0, 1)");
  if (paired_swap_p < 0 || paired_swap_p > 1) throw ConfigError("paired_swap_p must be in [0, 1]");
  if (text.mask_p < 0 || text.mask_p > 1) throw ConfigError("text mask_p must be in [0, 1]");
  if (optimizer.lr_biasing < 0 || optimizer.lr_base < 0) throw ConfigError("learning rates must be >= 0");
  if (augment.n_time_masks < 0 || augment.n_feature_masks < 0 || augment.max_time_width < 0 ||
      augment.max_feature_width < 0) {
    throw ConfigError("augmentation counts and widths must be >= 0");
  }
  if (mode == TrainMode::kScratchUstr && batch_text < 1) {
    throw ConfigError("scratch-ustr needs batch_text >= 1");
  }
  model.validate();
}

namespace {

json model_to_json(const ModelConfig& m) {
  return json{{"d_audio_in", m.d_audio_in},       {"d_text_in", m.d_text_in},
              {"d_hidden", m.d_hidden},           {"d_word_embed", m.d_word_embed},
              {"shared_layers", m.shared_layers}, {"predictor_layers", m.predictor_layers},
              {"heads", m.heads},                 {"vocab_size", m.vocab_size},
              {"lookahead_frames", m.lookahead_frames},
              {"conv_channels", m.conv_channels}, {"ff_dim", m.ff_dim},
              {"predictor_embed", m.predictor_embed}, {"joint_dim", m.joint_dim}};
}

ModelConfig model_from_json(const json& j, ModelConfig m) {
  reject_unknown(j, {"d_audio_in", "d_text_in", "d_hidden", "d_word_embed", "shared_layers",
                     "predictor_layers", "heads", "vocab_size", "lookahead_frames", "conv_channels",
                     "ff_dim", "predictor_embed", "joint_dim"},
                 "model");
  read(j, "d_audio_in", m.d_audio_in);
  read(j, "d_text_in", m.d_text_in);
  read(j, "d_hidden", m.d_hidden);
  read(j, "d_word_embed", m.d_word_embed);
  read(j, "shared_layers", m.shared_layers);
  read(j, "predictor_layers", m.predictor_layers);
  read(j, "heads", m.heads);
  read(j, "vocab_size", m.vocab_size);
  read(j, "lookahead_frames", m.lookahead_frames);
  read(j, "conv_channels", m.conv_channels);
  read(j, "ff_dim", m.ff_dim);
  read(j, "predictor_embed", m.predictor_embed);
  read(j, "joint_dim", m.joint_dim);
  if (j.contains("shared_layers") && !j.contains("lookahead_frames")) {
    m.lookahead_frames.assign(static_cast<size_t>(std::max(0, m.shared_layers)), 1);
  }
  return m;
}

}  // namespace

nlohmann::json biasing_config_to_json(const BiasingConfig& b) {
  return json{{"variant", to_string(b.variant)},
              {"word_encoder", to_string(b.kind)},
              {"heads", b.heads},
              {"attention_dim", b.attention_dim},
              {"word_dim", b.word_dim}};
}

BiasingConfig biasing_config_from_json(const json& j, BiasingConfig b) {
  reject_unknown(j, {"variant", "word_encoder", "heads", "attention_dim", "word_dim"}, "biasing");
  if (j.contains("variant")) b.variant = parse_bias_variant(j.at("variant").get<std::string>());
  if (j.contains("word_encoder")) b.kind = parse_word_encoder_kind(j.at("word_encoder").get<std::string>());
  read(j, "heads", b.heads);
  read(j, "attention_dim", b.attention_dim);
  read(j, "word_dim", b.word_dim);
  return b;
}

json model_config_to_json(const ModelConfig& m) { return model_to_json(m); }
ModelConfig model_config_from_json(const json& j, ModelConfig base) { return model_from_json(j, base); }

TrainRecipe recipe_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError("recipe is not valid JSON: " + std::string(e.what()));
  }
  reject_unknown(j, {"mode", "epochs", "batch_speech", "batch_text", "max_extra", "rare_common_k",
                     "seed", "augment", "bpe_dropout", "paired_swap_p", "text_mask_p",
                     "text_repeat", "ilmt_weight", "we_scale", "biasing", "biasing_config", "model",
                     "optimizer", "max_symbols_per_frame"},
                 "recipe");
  TrainRecipe r;
  try {
    if (j.contains("mode")) r.mode = parse_train_mode(j.at("mode").get<std::string>());
    read(j, "epochs", r.epochs);
    read(j, "batch_speech", r.batch_speech);
    read(j, "batch_text", r.batch_text);
    read(j, "max_extra", r.max_extra);
    read(j, "rare_common_k", r.rare_common_k);
    read(j, "seed", r.seed);
    if (j.contains("augment")) {
      const json& a = j.at("augment");
      reject_unknown(a, {"enabled", "n_time_masks", "max_time_width", "n_feature_masks", "max_feature_width"},
                     "augment");
      read(a, "enabled", r.augment.enabled);
      read(a, "n_time_masks", r.augment.n_time_masks);
      read(a, "max_time_width", r.augment.max_time_width);
      read(a, "n_feature_masks", r.augment.n_feature_masks);
      read(a, "max_feature_width", r.augment.max_feature_width);
    }
    read(j, "bpe_dropout", r.bpe_dropout);
    read(j, "paired_swap_p", r.paired_swap_p);
    read(j, "text_mask_p", r.text.mask_p);
    if (j.contains("text_repeat")) {
      const auto rep = j.at("text_repeat").get<std::vector<int>>();
      if (rep.size() == 1) {
        r.text.repeat = RepeatPolicy::fixed_count(rep[0]);
      } else if (rep.size() == 2) {
        r.text.repeat = RepeatPolicy::uniform(rep[0], rep[1]);
      } else {
        throw ConfigError("text_repeat must be [n] or [lo, hi]");
      }
    }
    read(j, "ilmt_weight", r.ilmt_weight);
    read(j, "we_scale", r.we_scale);
    read(j, "biasing", r.biasing);
    if (j.contains("biasing_config")) r.biasing_config = biasing_config_from_json(j.at("biasing_config"), r.biasing_config);
    if (j.contains("model")) r.model = model_from_json(j.at("model"), r.model);
    if (j.contains("optimizer")) {
      const json& o = j.at("optimizer");
      reject_unknown(o, {"kind", "lr_biasing", "lr_base", "clip_norm", "frozen", "beta1", "beta2",
                         "epsilon", "warmup_steps"},
                     "optimizer");
      if (o.contains("kind")) {
        const auto k = o.at("kind").get<std::string>();
        if (k == "sgd") {
          r.optimizer.kind = OptimizerKind::kSgd;
        } else if (k == "adam") {
          r.optimizer.kind = OptimizerKind::kAdam;
        } else {
          throw ConfigError("unknown optimizer '" + k + "'");
        }
      }
      read(o, "lr_biasing", r.optimizer.lr_biasing);
      read(o, "lr_base", r.optimizer.lr_base);
      read(o, "clip_norm", r.optimizer.clip_norm);
      read(o, "beta1", r.optimizer.beta1);
      read(o, "beta2", r.optimizer.beta2);
      read(o, "epsilon", r.optimizer.epsilon);
      read(o, "warmup_steps", r.optimizer.warmup_steps);
      if (o.contains("frozen")) {
        for (const auto& g : o.at("frozen").get<std::vector<std::string>>()) {
          r.optimizer.frozen.insert(parse_param_group(g));
        }
      }
    }
    read(j, "max_symbols_per_frame", r.max_symbols_per_frame);
  } catch (const json::exception& e) {
    throw ConfigError("recipe: " + std::string(e.what()));
  }
  r.validate();
  return r;
}

std::string recipe_to_json(const TrainRecipe& r) {
  std::vector<std::string> frozen;
  for (ParamGroup g : r.optimizer.frozen) frozen.emplace_back(to_string(g));
  const json repeat = r.text.repeat.fixed ? json::array({r.text.repeat.count})
                                          : json::array({r.text.repeat.min_count, r.text.repeat.max_count});
  json j{{"mode", to_string(r.mode)},
         {"epochs", r.epochs},
         {"batch_speech", r.batch_speech},
         {"batch_text", r.batch_text},
         {"max_extra", r.max_extra},
         {"rare_common_k", r.rare_common_k},
         {"seed", r.seed},
         {"augment",
          {{"enabled", r.augment.enabled},
           {"n_time_masks", r.augment.n_time_masks},
           {"max_time_width", r.augment.max_time_width},
           {"n_feature_masks", r.augment.n_feature_masks},
           {"max_feature_width", r.augment.max_feature_width}}},
         {"bpe_dropout", r.bpe_dropout},
         {"paired_swap_p", r.paired_swap_p},
         {"text_mask_p", r.text.mask_p},
         {"text_repeat", repeat},
         {"ilmt_weight", r.ilmt_weight},
         {"we_scale", r.we_scale},
         {"biasing", r.biasing},
         {"biasing_config", biasing_config_to_json(r.biasing_config)},
         {"model", model_to_json(r.model)},
         {"optimizer",
          {{"kind", r.optimizer.kind == OptimizerKind::kSgd ? "sgd" : "adam"},
           {"lr_biasing", r.optimizer.lr_biasing},
           {"lr_base", r.optimizer.lr_base},
           {"clip_norm", r.optimizer.clip_norm},
           {"frozen", frozen},
           {"beta1", r.optimizer.beta1},
           {"beta2", r.optimizer.beta2},
           {"epsilon", r.optimizer.epsilon},
           {"warmup_steps", r.optimizer.warmup_steps}}},
         {"max_symbols_per_frame", r.max_symbols_per_frame}};
  return j.dump(2);
}

TrainRecipe load_recipe(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot read recipe " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return recipe_from_json(ss.str());
}

std::vector<std::string> sample_training_bias_list(std::span<const std::vector<std::string>> batch_transcripts,
                                                   const RareWordSet& rare2k, int max_extra, Rng& rng) {
  std::vector<std::string> out;
  std::unordered_set<std::string> in_batch;
  for (const auto& t : batch_transcripts) {
    for (const auto& raw : t) {
      std::string w = normalize_word(raw);
      if (w.empty() || !in_batch.insert(w).second) continue;
      if (rare2k.contains(w)) out.push_back(w);
    }
  }
  std::vector<std::string> pool;
  for (const auto& w : rare2k.words()) {
    if (!in_batch.contains(w)) pool.push_back(w);
  }
  const size_t take = std::min(pool.size(), static_cast<size_t>(std::max(0, max_extra)));
  for (size_t i = 0; i < take; ++i) {
    const size_t j = i + static_cast<size_t>(uniform_int(rng, 0, static_cast<int64_t>(pool.size() - i - 1)));
    std::swap(pool[i], pool[j]);
    out.push_back(pool[i]);
  }
  shuffle(out.begin(), out.end(), rng);
  return out;
}

Matrix spec_augment(const Matrix& features, int n_time_masks, int max_time_width,
                    int n_feature_masks, int max_feature_width, Rng& rng) {
  const Index T = features.rows(), D = features.cols();
  if (max_time_width > T || max_feature_width > D) {
    throw ConfigError("spec_augment mask width exceeds the feature dimensions");
  }
  Matrix out = features;
  for (int i = 0; i < n_time_masks; ++i) {
    const auto w = uniform_int(rng, 0, max_time_width);
    const auto start = uniform_int(rng, 0, T - w);
    out.middleRows(start, w).setZero();
  }
  for (int i = 0; i < n_feature_masks; ++i) {
    const auto w = uniform_int(rng, 0, max_feature_width);
    const auto start = uniform_int(rng, 0, D - w);
    out.middleCols(start, w).setZero();
  }
  return out;
}

StepLoss training_loss(Tape& tape, const ModelParams& params, std::span<const TrainItem> speech,
                       std::span<const TrainItem> text, std::span<const BiasEntry> bias, const TrainRecipe& recipe,
                       const TrainContext& ctx, Rng& rng) {
  if (speech.empty() && text.empty()) throw InputError("train_step needs at least one item");
  StepLoss res;
  const bool biased = params.biasing.has_value();
  Var E;
  if (biased) E = encode_bias_words(tape, bias, *params.biasing);

  std::vector<std::string> ids;
  auto encode = [&](std::span<const TrainItem> items) {
    std::vector<EncodedItem> out;
    for (const auto& it : items) {
      Var states = it.is_text ? text_encode(tape, it.features, params).states
                              : audio_encode(tape, it.features, params).states;
      std::vector<int> target = ctx.vocab.encode_words(it.words, recipe.bpe_dropout, &rng);
      if (target.empty()) throw InputError("item " + it.id + " has an empty transcript");
      out.push_back({states, std::move(target), it.origin});
      ids.push_back(it.id);
    }
    return out;
  };
  const std::vector<EncodedItem> enc_speech = encode(speech);
  const std::vector<EncodedItem> enc_text = encode(text);
  const MixedBatch batch = batch_concat(enc_speech, enc_text);

  auto check = [&](double v, const char* what, size_t b) {
    if (!std::isfinite(v)) {
      throw Error(std::string("non-finite ") + what + " loss on item " + ids[b] + " (origin " +
                  to_string(batch.origins[b]) + ", frames " + std::to_string(batch.valid_lengths[b]) +
                  ", labels " + std::to_string(batch.target_lengths[b]) + ")");
    }
  };

  std::vector<Var> item_losses;
  LossBreakdown sums;
  for (size_t b = 0; b < batch.size(); ++b) {
    Var enc = batch.states(b);
    const std::span<const int> target = batch.target(b);
    std::vector<int> inputs{kStartToken};
    inputs.insert(inputs.end(), target.begin(), target.end());
    PredictorStream pred = predictor_forward(tape, inputs, params);
    Var h;
    if (biased) {
      JointFn jf = [&](Var e, Var p) { return joint(tape, e, p, params); };
      h = apply_biasing(tape, *params.biasing, enc, pred, jf, E).joint;
    } else {
      h = joint(tape, enc, pred.hidden, params);
    }
    Var trans = transducer_loss(output_distribution(tape, h, params), static_cast<int>(enc.rows()), target);
    bool feasible = true;
    Var ctc = ctc_loss(ctc_log_probs(tape, enc, params), target, &feasible);
    Var aed = aed_loss(tape, enc, target, params);
    Var ilmt = ilmt_loss(tape, slice_rows(pred.hidden, 0, static_cast<Index>(target.size())), target, params);
    check(trans.scalar(), "transducer", b);
    check(ctc.scalar(), "ctc", b);
    check(aed.scalar(), "aed", b);
    check(ilmt.scalar(), "ilmt", b);
    sums.transducer += trans.scalar();
    sums.ctc += ctc.scalar();
    sums.aed += aed.scalar();
    sums.ilmt += ilmt.scalar();
    if (!feasible) ++sums.ctc_infeasible;
    res.target_tokens += static_cast<int64_t>(target.size());
    item_losses.push_back(add(add(trans, ctc), add(aed, scale(ilmt, recipe.ilmt_weight))));
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  Var total = scale(sum(concat_rows(item_losses)), inv);
  res.transducer_sum = sums.transducer;
  LossBreakdown parts{sums.transducer * inv, sums.ctc * inv, sums.aed * inv, sums.ilmt * inv, 0.0, 0.0, 0.0,
                      sums.ctc_infeasible};
  if (biased && params.biasing->config.kind == WordEncoderKind::kLearnable && !bias.empty()) {
    auto [we_text, we_phone] = learnable_we_aux_losses(tape, E, bias, *params.biasing);
    parts.we_text = we_text.scalar();
    parts.we_phone = we_phone.scalar();
    total = add(total, scale(add(we_text, we_phone), recipe.we_scale));
  }
  res.losses = combined_loss(parts, recipe.ilmt_weight, recipe.we_scale);
  if (!std::isfinite(total.scalar())) throw Error("non-finite total loss");
  res.total = total;
  return res;
}

StepResult train_step(ModelParams& params, std::span<const TrainItem> speech,
                      std::span<const TrainItem> text, std::span<const BiasEntry> bias,
                      OptimizerGroups& groups, const TrainRecipe& recipe, const TrainContext& ctx,
                      Rng& rng) {
  Tape tape;
  StepLoss loss = training_loss(tape, params, speech, text, bias, recipe, ctx, rng);
  StepResult res;
  res.losses = loss.losses;
  res.target_tokens = loss.target_tokens;
  res.transducer_sum = loss.transducer_sum;
  res.bias_list_size = bias.size();
  tape.backward(loss.total);
  std::vector<GradEntry> grads;
  params.visit([&](ParamGroup g, const std::string&, Parameter& p) {
    if (tape.used(p)) grads.push_back({g, &p, tape.grad(p)});
  });
  res.update = optimizer_step(groups, grads);
  return res;
}

ModelConfig sized_model_config(ModelConfig base, const SubwordVocab& vocab, const PhonemeLexicon& lexicon) {
  base.vocab_size = vocab.num_labels();
  base.d_text_in = text_feature_dim(lexicon);
  return base;
}

FitResult fit(const TrainRecipe& recipe, const FitData& data, std::optional<ModelParams> init,
              const EpochCallback& on_epoch) {
  recipe.validate();
  const bool scratch = recipe.mode == TrainMode::kScratch || recipe.mode == TrainMode::kScratchUstr;
  if (!scratch && !init) throw ConfigError(to_string(recipe.mode) + " needs a pre-trained checkpoint");
  const bool ustr = recipe.mode == TrainMode::kScratchUstr;
  if (ustr && (!data.text || data.text->empty())) throw ConfigError("scratch-ustr needs a text corpus");
  if (data.speech.empty()) throw InputError("no training utterances");

  Rng rng(recipe.seed);
  FitResult res;
  if (scratch) {
    res.params = ModelParams::init(recipe.model, rng);
    if (recipe.biasing) res.params.attach_biasing(recipe.biasing_config, data.lexicon.num_phonemes(), rng);
  } else {
    res.params = std::move(*init);
    if (!res.params.biasing) res.params.attach_biasing(recipe.biasing_config, data.lexicon.num_phonemes(), rng);
  }
  ModelParams& params = res.params;
  if (params.config.vocab_size != data.vocab.num_labels()) {
    throw ConfigError("model vocab_size " + std::to_string(params.config.vocab_size) +
                      " does not match the subword vocabulary (" + std::to_string(data.vocab.num_labels()) + ")");
  }

  OptimizerGroups groups = recipe.optimizer;
  groups.moments.clear();
  if (recipe.mode == TrainMode::kFinetuneFrozen) {
    for (ParamGroup g : kAllParamGroups) {
      if (g != ParamGroup::kBiasing) groups.frozen.insert(g);
    }
  }
  const TrainContext ctx{data.vocab, data.lexicon};

  std::vector<size_t> order(data.speech.size());
  std::vector<size_t> text_order(ustr ? data.text->size() : 0);
  for (size_t i = 0; i < text_order.size(); ++i) text_order[i] = i;
  size_t text_cursor = text_order.size();
  int64_t step = 0;
  for (int epoch = 1; epoch <= recipe.epochs; ++epoch) {
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle(order.begin(), order.end(), rng);
    double total_sum = 0.0, trans_sum = 0.0;
    int64_t tokens = 0, steps = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(recipe.batch_speech)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(recipe.batch_speech));
      std::vector<TrainItem> speech;
      for (size_t k = start; k < end; ++k) {
        const Utterance& u = data.speech[order[k]];
        const auto& a = recipe.augment;
        Matrix f = a.enabled ? spec_augment(u.features, a.n_time_masks,
                                            std::min<int>(a.max_time_width, static_cast<int>(u.features.rows())),
                                            a.n_feature_masks,
                                            std::min<int>(a.max_feature_width, static_cast<int>(u.features.cols())), rng)
                             : u.features;
        speech.push_back({u.id, std::move(f), false, u.words, Origin::kSpeech});
      }
      std::vector<TrainItem> text;
      if (ustr) {
        speech = paired_text_swap(speech, recipe.paired_swap_p, recipe.text, data.lexicon, data.vocab, rng);
        for (int k = 0; k < recipe.batch_text; ++k) {
          if (text_cursor == text_order.size()) {
            shuffle(text_order.begin(), text_order.end(), rng);
            text_cursor = 0;
          }
          const size_t ti = text_order[text_cursor++];
          const auto& words = (*data.text)[ti];
          UnspokenTextExample ex = make_text_features(words, data.lexicon, data.vocab, recipe.text.mask_p,
                                                      recipe.text.repeat, rng);
          text.push_back({"text-" + std::to_string(ti), std::move(ex.features), true, words, Origin::kText});
        }
      }

      std::vector<BiasEntry> bias;
      if (params.biasing) {
        std::vector<std::vector<std::string>> refs;
        for (const auto* group : {&speech, &text}) {
          for (const auto& it : *group) refs.push_back(it.words);
        }
        const auto words = sample_training_bias_list(refs, data.rare, recipe.max_extra, rng);
        const std::unordered_set<std::string> listed(words.begin(), words.end());
        for (const auto& r : refs) {
          for (const auto& w : r) {
            if (data.rare.contains(w) && !listed.contains(normalize_word(w))) {
              throw Error("bias list misses batch rare word '" + w + "'");
            }
          }
        }
        bias = make_bias_entries(words, data.vocab, data.lexicon);
      }

      const double lr_b = groups.lr(ParamGroup::kBiasing);
      const double lr_c = groups.lr(ParamGroup::kSharedEncoder);
      StepResult sr = train_step(params, speech, text, bias, groups, recipe, ctx, rng);
      ++step;
      ++steps;
      total_sum += sr.losses.total;
      trans_sum += sr.transducer_sum;
      tokens += sr.target_tokens;
      const auto& l = sr.losses;
      json line{{"step", step},
                {"epoch", epoch},
                {"transducer", l.transducer},
                {"ctc", l.ctc},
                {"aed", l.aed},
                {"ilmt", l.ilmt},
                {"we_text", l.we_text},
                {"we_phone", l.we_phone},
                {"total", l.total},
                {"ctc_infeasible", l.ctc_infeasible},
                {"transducer_per_token", sr.transducer_sum / static_cast<double>(std::max<int64_t>(1, sr.target_tokens))},
                {"grad_norm", sr.update.grad_norm},
                {"lr_biasing", lr_b},
                {"lr_base", lr_c},
                {"bias_list_size", sr.bias_list_size},
                {"speech_items", speech.size()},
                {"swapped_items", std::count_if(speech.begin(), speech.end(),
                                                [](const TrainItem& it) { return it.origin == Origin::kSwapped; })},
                {"text_items", text.size()}};
      res.log.push_back(line.dump());
    }
    res.epoch_total.push_back(total_sum / static_cast<double>(std::max<int64_t>(1, steps)));
    res.epoch_transducer_per_token.push_back(trans_sum / static_cast<double>(std::max<int64_t>(1, tokens)));
    if (on_epoch) on_epoch(epoch, res);
  }
  return res;
}

}  // namespace dbias
