#pragma once

#include <string>
#include <vector>

#include "dbias/selfcheck.hpp"

namespace dbias::testing {

using dbias::brute_force_ctc_logp;
using dbias::brute_force_edit_distance;
using dbias::brute_force_transducer_logp;
using dbias::check_gradients;
using dbias::GradCheck;
using dbias::random_lattice;
using dbias::random_log_probs;
using dbias::tiny_lexicon;
using dbias::tiny_vocab;

inline ModelConfig tiny_config(int vocab_size = 5, int text_dim = 4) { return tiny_model_config(vocab_size, text_dim); }

std::vector<std::string> split_words(const std::string& s);

}  // namespace dbias::testing
