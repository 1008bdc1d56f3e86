#include "dbias/biasing.hpp"

#include <fstream>
#include <set>

namespace dbias {

std::string to_string(BiasVariant v) {
  switch (v) {
    case BiasVariant::kPredictor: return "predictor";
    case BiasVariant::kEncoder: return "encoder";
    case BiasVariant::kEncPre: return "enc-pre";
    case BiasVariant::kJointer: return "jointer";
  }
  return "?";
}

std::string to_string(WordEncoderKind k) {
  switch (k) {
    case WordEncoderKind::kTextual: return "textual";
    case WordEncoderKind::kTexPho: return "tex-pho";
    case WordEncoderKind::kLearnable: return "learnable";
  }
  return "?";
}

BiasVariant parse_bias_variant(std::string_view s) {
  if (s == "predictor") return BiasVariant::kPredictor;
  if (s == "encoder") return BiasVariant::kEncoder;
  if (s == "enc-pre") return BiasVariant::kEncPre;
  if (s == "jointer") return BiasVariant::kJointer;
  throw ConfigError("unknown biasing variant '" + std::string(s) + "'");
}

WordEncoderKind parse_word_encoder_kind(std::string_view s) {
  if (s == "textual") return WordEncoderKind::kTextual;
  if (s == "tex-pho") return WordEncoderKind::kTexPho;
  if (s == "learnable") return WordEncoderKind::kLearnable;
  throw ConfigError("unknown word encoder '" + std::string(s) + "'");
}

BiasEntry make_bias_entry(const std::string& surface, const SubwordVocab& vocab,
                          const PhonemeLexicon& lexicon, std::optional<std::vector<int>> phonemes) {
  BiasEntry e;
  e.surface = surface;
  const auto words = normalize_text(surface);
  if (words.empty()) throw InputError("empty bias entry");
  e.subword_ids = vocab.encode_words(words);
  e.phoneme_ids = phonemes ? std::move(*phonemes) : lexicon.g2p_words(words);
  return e;
}

std::vector<BiasEntry> make_bias_entries(std::span<const std::string> surfaces,
                                         const SubwordVocab& vocab, const PhonemeLexicon& lexicon) {
  std::vector<BiasEntry> out;
  out.reserve(surfaces.size());
  for (const auto& s : surfaces) out.push_back(make_bias_entry(s, vocab, lexicon));
  return out;
}

std::vector<BiasEntry> load_bias_list(const std::filesystem::path& path, const SubwordVocab& vocab,
                                      const PhonemeLexicon& lexicon) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open bias list " + path.string());
  std::vector<BiasEntry> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      out.push_back(make_bias_entry(line, vocab, lexicon));
    } else {
      out.push_back(make_bias_entry(line.substr(0, tab), vocab, lexicon,
                                    lexicon.parse_symbols(std::string_view(line).substr(tab + 1))));
    }
  }
  return out;
}

void BiasingLayerParams::visit(const ParamVisitor& f, const std::string& prefix) {
  attention.visit(f, prefix + ".attention");
  projection.visit(f, prefix + ".projection");
}

namespace {

BiasingLayerParams make_layer(int query_dim, int out_dim, BiasSite site, const BiasingConfig& c, Rng& rng) {
  BiasingLayerParams l;
  l.attention = MultiHeadAttention::init(query_dim, c.word_dim, c.attention_dim, c.heads, rng);
  l.projection = Linear::zeros(c.attention_dim, out_dim);
  l.site = site;
  return l;
}

}  // namespace

BiasingParams BiasingParams::init(const BiasingConfig& config, const BiasingHostDims& dims, Rng& rng) {
  if (config.word_dim < 1 || config.attention_dim < 1) throw ConfigError("biasing dims must be >= 1");
  BiasingParams p;
  p.config = config;
  const int M = config.word_dim;
  auto& we = p.word_encoder;
  we.subword_embedding.value = init_uniform(dims.num_subwords, M, M, rng);
  we.subword_lstm = LstmLayer::init(M, M, rng);
  if (config.kind == WordEncoderKind::kTexPho) {
    we.phoneme_embedding.value = init_uniform(dims.num_phonemes, M, M, rng);
    we.phoneme_lstm = LstmLayer::init(M, M, rng);
    we.fuse = Linear::init(2 * M, M, rng);
  }
  if (config.kind == WordEncoderKind::kLearnable) {
    we.no_bias_row.value = init_uniform(1, M, M, rng);
    const int heads = M % 2 == 0 ? 2 : 1;
    we.text_decoder = SequenceDecoder::init(dims.num_subwords, M, M, heads, rng);
    we.phone_decoder = SequenceDecoder::init(dims.num_phonemes, M, M, heads, rng);
  }
  switch (config.variant) {
    case BiasVariant::kPredictor:
      p.predictor_layer = make_layer(dims.predictor_embed + dims.predictor_dim, dims.predictor_dim,
                                     BiasSite::kPredictor, config, rng);
      break;
    case BiasVariant::kEncoder:
      p.encoder_layer = make_layer(dims.encoder_dim, dims.encoder_dim, BiasSite::kEncoder, config, rng);
      break;
    case BiasVariant::kEncPre:
      p.encoder_layer = make_layer(dims.encoder_dim, dims.encoder_dim, BiasSite::kEncoder, config, rng);
      p.predictor_layer = make_layer(dims.predictor_embed + dims.predictor_dim, dims.predictor_dim,
                                     BiasSite::kPredictor, config, rng);
      break;
    case BiasVariant::kJointer:
      p.jointer_layer = make_layer(dims.joint_dim, dims.joint_dim, BiasSite::kJointer, config, rng);
      break;
  }
  return p;
}

void BiasingParams::visit(const ParamVisitor& f, const std::string& prefix) {
  auto& we = word_encoder;
  const std::string w = prefix + ".word_encoder";
  f(w + ".subword_embedding", we.subword_embedding);
  we.subword_lstm.visit(f, w + ".subword_lstm");
  if (config.kind == WordEncoderKind::kTexPho) {
    f(w + ".phoneme_embedding", we.phoneme_embedding);
    we.phoneme_lstm.visit(f, w + ".phoneme_lstm");
    we.fuse.visit(f, w + ".fuse");
  }
  if (config.kind == WordEncoderKind::kLearnable) {
    f(w + ".no_bias_row", we.no_bias_row);
    we.text_decoder.visit(f, w + ".text_decoder");
    we.phone_decoder.visit(f, w + ".phone_decoder");
  }
  if (encoder_layer) encoder_layer->visit(f, prefix + ".encoder_layer");
  if (predictor_layer) predictor_layer->visit(f, prefix + ".predictor_layer");
  if (jointer_layer) jointer_layer->visit(f, prefix + ".jointer_layer");
}

namespace {

/// Final hidden state of an LSTM reading each sequence last symbol first,
/// batched over sequences. Sequences shorter than the longest keep their
/// last state; an empty sequence yields the zero initial state.
Var run_word_lstm(Tape& tape, const Parameter& embedding, const LstmLayer& lstm,
                  const std::vector<const std::vector<int>*>& seqs) {
  const Index n = static_cast<Index>(seqs.size());
  const Index H = lstm.hidden_dim();
  size_t max_len = 0;
  for (const auto* s : seqs) max_len = std::max(max_len, s->size());
  Var h = tape.constant(Matrix::Zero(n, H));
  Var c = tape.constant(Matrix::Zero(n, H));
  Var table = tape.param(embedding);
  for (size_t step = 0; step < max_len; ++step) {
    std::vector<int> ids(static_cast<size_t>(n), 0);
    std::vector<bool> active(static_cast<size_t>(n), false);
    bool all = true;
    for (Index i = 0; i < n; ++i) {
      const auto& s = *seqs[static_cast<size_t>(i)];
      if (step < s.size()) {
        ids[static_cast<size_t>(i)] = s[s.size() - 1 - step];
        active[static_cast<size_t>(i)] = true;
      } else {
        all = false;
      }
    }
    auto [h2, c2] = lstm.step(tape, gather_rows(table, ids), h, c);
    if (all) {
      h = h2;
      c = c2;
    } else {
      h = select_rows(active, h2, h);
      c = select_rows(active, c2, c);
    }
  }
  return h;
}

void check_distinct(std::span<const BiasEntry> entries) {
  std::set<std::string> seen;
  for (const auto& e : entries) {
    if (!seen.insert(e.surface).second) {
      throw InputError("duplicate bias entry '" + e.surface + "'");
    }
  }
}

}  // namespace

Var encode_bias_words(Tape& tape, std::span<const BiasEntry> entries, const BiasingParams& params) {
  check_distinct(entries);
  const auto& we = params.word_encoder;
  static const std::vector<int> kEmpty;
  std::vector<const std::vector<int>*> subwords;
  std::vector<const std::vector<int>*> phonemes;
  const bool learnable = params.config.kind == WordEncoderKind::kLearnable;
  if (!learnable) {
    subwords.push_back(&kEmpty);
    phonemes.push_back(&kEmpty);
  }
  for (const auto& e : entries) {
    subwords.push_back(&e.subword_ids);
    phonemes.push_back(&e.phoneme_ids);
  }
  if (learnable) {
    Var row0 = tape.param(we.no_bias_row);
    if (entries.empty()) return row0;
    const Var parts[] = {row0, run_word_lstm(tape, we.subword_embedding, we.subword_lstm, subwords)};
    return concat_rows(parts);
  }
  Var text = run_word_lstm(tape, we.subword_embedding, we.subword_lstm, subwords);
  if (params.config.kind == WordEncoderKind::kTextual) return text;
  Var phone = run_word_lstm(tape, we.phoneme_embedding, we.phoneme_lstm, phonemes);
  return we.fuse(tape, concat_cols(text, phone));
}

Matrix compute_bias_embeddings(std::span<const BiasEntry> entries, const BiasingParams& params) {
  Tape tape(false);
  return encode_bias_words(tape, entries, params).value();
}

Var bias_attend(Tape& tape, Var query, Var embeddings, const BiasingLayerParams& layer,
                AttentionCounter* counter) {
  if (embeddings.rows() < 1) throw InputError("bias embeddings need the no-bias row");
  if (counter) {
    switch (layer.site) {
      case BiasSite::kEncoder: counter->encoder += query.rows(); break;
      case BiasSite::kPredictor: counter->predictor += query.rows(); break;
      case BiasSite::kJointer: counter->jointer += query.rows(); break;
    }
  }
  return layer.projection(tape, layer.attention(tape, query, embeddings));
}

BiasedStreams apply_biasing(Tape& tape, const BiasingParams& params, Var h_enc,
                            const PredictorStream& pred, const JointFn& joint, Var embeddings,
                            AttentionCounter* counter) {
  const BiasVariant v = params.config.variant;
  BiasedStreams out{h_enc, pred.hidden, Var()};
  const bool enc = v == BiasVariant::kEncoder || v == BiasVariant::kEncPre;
  const bool prd = v == BiasVariant::kPredictor || v == BiasVariant::kEncPre;
  if (enc) {
    if (!params.encoder_layer) throw ConfigError(to_string(v) + " biasing needs an encoder layer");
    out.enc = add(h_enc, bias_attend(tape, h_enc, embeddings, *params.encoder_layer, counter));
  }
  if (prd) {
    if (!params.predictor_layer) throw ConfigError(to_string(v) + " biasing needs a predictor layer");
    Var query = concat_cols(pred.embed, pred.hidden);
    out.pred = add(pred.hidden, bias_attend(tape, query, embeddings, *params.predictor_layer, counter));
  }
  out.joint = joint(out.enc, out.pred);
  if (v == BiasVariant::kJointer) {
    if (!params.jointer_layer) throw ConfigError("jointer biasing needs a jointer layer");
    out.joint = add(out.joint, bias_attend(tape, out.joint, embeddings, *params.jointer_layer, counter));
  }
  return out;
}

std::pair<Var, Var> learnable_we_aux_losses(Tape& tape, Var embeddings,
                                            std::span<const BiasEntry> entries,
                                            const BiasingParams& params) {
  if (params.config.kind != WordEncoderKind::kLearnable) {
    throw ConfigError("auxiliary word-encoder losses need the learnable word encoder");
  }
  const auto& we = params.word_encoder;
  if (entries.empty()) {
    return {tape.constant(Matrix::Zero(1, 1)), tape.constant(Matrix::Zero(1, 1))};
  }
  std::vector<Var> text_terms, phone_terms;
  for (size_t k = 0; k < entries.size(); ++k) {
    const auto& e = entries[k];
    if (e.subword_ids.empty() || e.phoneme_ids.empty()) {
      throw InputError("bias entry '" + e.surface + "' has an empty target sequence");
    }
    Var memory = slice_rows(embeddings, static_cast<Index>(k) + 1, 1);
    text_terms.push_back(nll(we.text_decoder.log_probs(tape, e.subword_ids, memory), e.subword_ids));
    phone_terms.push_back(nll(we.phone_decoder.log_probs(tape, e.phoneme_ids, memory), e.phoneme_ids));
  }
  const double inv = 1.0 / static_cast<double>(entries.size());
  return {scale(sum(concat_rows(text_terms)), inv), scale(sum(concat_rows(phone_terms)), inv)};
}

}  // namespace dbias
