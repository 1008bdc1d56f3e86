#include "dbias/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "json_io.hpp"

namespace dbias {

namespace {

using nlohmann::json;

constexpr char kMagic[] = "DBIASCKPT1\n";

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, uint64_t vocab_hash,
                     uint64_t lexicon_hash, int num_phonemes) {
  if (params.biasing && params.biasing->word_encoder.phoneme_embedding.value.rows() > 0 &&
      params.biasing->word_encoder.phoneme_embedding.value.rows() != num_phonemes) {
    throw ConfigError("num_phonemes does not match the attached biasing module");
  }
  json tensors = json::array();
  std::vector<float> payload;
  const_cast<ModelParams&>(params).visit([&](ParamGroup g, const std::string& name, Parameter& p) {
    tensors.push_back({{"group", to_string(g)},
                       {"name", name},
                       {"shape", {p.value.rows(), p.value.cols()}},
                       {"offset", payload.size()}});
    for (Index i = 0; i < p.value.size(); ++i) payload.push_back(static_cast<float>(p.value.data()[i]));
  });
  json header{{"config", model_config_to_json(params.config)},
              {"vocab_hash", vocab_hash},
              {"lexicon_hash", lexicon_hash},
              {"num_phonemes", num_phonemes},
              {"tensors", tensors}};
  if (params.biasing) header["biasing"] = biasing_config_to_json(params.biasing->config);
  const std::string h = header.dump();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot write checkpoint " + path.string());
  os << kMagic << h.size() << '\n' << h;
  os.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!os) throw InputError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot read checkpoint " + path.string());
  std::string magic(sizeof kMagic - 1, '\0');
  is.read(magic.data(), static_cast<std::streamsize>(magic.size()));
  if (magic != kMagic) throw InputError(path.string() + " is not a checkpoint");
  size_t header_size = 0;
  is >> header_size;
  is.get();
  std::string h(header_size, '\0');
  is.read(h.data(), static_cast<std::streamsize>(header_size));
  if (!is) throw InputError("truncated checkpoint header in " + path.string());

  Checkpoint ck;
  json header;
  try {
    header = json::parse(h);
    ck.vocab_hash = header.at("vocab_hash");
    ck.lexicon_hash = header.at("lexicon_hash");
    ck.num_phonemes = header.at("num_phonemes");
    Rng rng(0);
    ck.params = ModelParams::init(model_config_from_json(header.at("config")), rng);
    if (header.contains("biasing")) {
      ck.params.attach_biasing(biasing_config_from_json(header.at("biasing")), ck.num_phonemes, rng);
    }
  } catch (const json::exception& e) {
    throw InputError("bad checkpoint header: " + std::string(e.what()));
  }
  std::vector<float> payload;
  {
    std::vector<char> rest((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (rest.size() % sizeof(float) != 0) throw InputError("checkpoint payload has a partial value");
    payload.resize(rest.size() / sizeof(float));
    std::memcpy(payload.data(), rest.data(), rest.size());
  }
  std::map<std::string, json> index;
  for (const auto& t : header.at("tensors")) index[t.at("name").get<std::string>()] = t;
  size_t filled = 0;
  ck.params.visit([&](ParamGroup g, const std::string& name, Parameter& p) {
    auto it = index.find(name);
    if (it == index.end()) throw InputError("checkpoint lacks tensor " + name);
    const json& t = it->second;
    if (t.at("group").get<std::string>() != to_string(g)) throw InputError("tensor " + name + " has the wrong group");
    const Index rows = t.at("shape")[0], cols = t.at("shape")[1];
    if (rows != p.value.rows() || cols != p.value.cols()) {
      throw InputError("tensor " + name + " has shape " + std::to_string(rows) + "x" + std::to_string(cols) +
                       ", expected " + std::to_string(p.value.rows()) + "x" + std::to_string(p.value.cols()));
    }
    const size_t off = t.at("offset");
    if (off + static_cast<size_t>(p.value.size()) > payload.size()) throw InputError("tensor " + name + " is truncated");
    for (Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = payload[off + static_cast<size_t>(i)];
    ++filled;
  });
  if (filled != index.size()) throw InputError("checkpoint has tensors the configuration does not use");
  return ck;
}

ModelParams round_to_float(const ModelParams& params) {
  ModelParams out = params;
  out.visit([](ParamGroup, const std::string&, Parameter& p) { p.value = p.value.cast<float>().cast<double>(); });
  return out;
}

}  // namespace dbias
