#pragma once

#include <cstdint>
#include <filesystem>

#include "dbias/model.hpp"

namespace dbias {

struct Checkpoint {
  ModelParams params;
  uint64_t vocab_hash = 0;
  uint64_t lexicon_hash = 0;
  int num_phonemes = 0;
};

/// Magic line, JSON header (configs, hashes, tensor index) and a payload of
/// row-major little-endian float32 tensors.
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, uint64_t vocab_hash,
                     uint64_t lexicon_hash, int num_phonemes);
/// Throws InputError on a malformed file or a tensor that does not fit the
/// stored configuration.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Parameters rounded through float32, as a save/load round trip would give.
ModelParams round_to_float(const ModelParams& params);

}  // namespace dbias
