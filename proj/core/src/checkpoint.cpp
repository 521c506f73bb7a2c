#include "jointseq/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <vector>

#include "jointseq/error.hpp"

namespace jointseq {
namespace {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written as native little-endian doubles");

json hyper_to_json(const ModelHyper& h) {
  return json{{"d_model", h.d_model},       {"n_heads", h.n_heads}, {"n_enc", h.n_enc},
              {"n_dec", h.n_dec},           {"d_ff", h.d_ff},       {"vocab_size", h.vocab_size},
              {"max_length", h.max_length}, {"rel_clip", h.rel_clip}, {"dropout", h.dropout}};
}

ModelHyper hyper_from_json(const json& j) {
  ModelHyper h;
  h.d_model = j.at("d_model").get<std::size_t>();
  h.n_heads = j.at("n_heads").get<std::size_t>();
  h.n_enc = j.at("n_enc").get<std::size_t>();
  h.n_dec = j.at("n_dec").get<std::size_t>();
  h.d_ff = j.at("d_ff").get<std::size_t>();
  h.vocab_size = j.at("vocab_size").get<std::size_t>();
  h.max_length = j.at("max_length").get<std::size_t>();
  h.rel_clip = j.at("rel_clip").get<int>();
  h.dropout = j.at("dropout").get<double>();
  return h;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const UnifiedVocab& vocab, const CheckpointMeta& meta) {
  json manifest;
  manifest["format"] = 1;
  manifest["hyper"] = hyper_to_json(params.hyper());
  manifest["vocab"] = json{{"n_control", vocab.n_control()},
                           {"n_text", vocab.n_text()},
                           {"n_loc", vocab.n_loc()},
                           {"text_base", vocab.text_base()},
                           {"loc_base", vocab.loc_base()},
                           {"total_size", vocab.total_size()}};
  manifest["step"] = meta.step;
  manifest["seed"] = meta.seed;
  manifest["extra"] = json::parse(meta.extra.empty() ? "{}" : meta.extra);
  json entries = json::array();
  for (std::size_t s = 0; s < params.size(); ++s) {
    entries.push_back(json{{"name", params.name(s)}, {"shape", params.tensor(s).shape()}});
  }
  manifest["params"] = entries;
  const std::string text = manifest.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out.write(kCheckpointMagic, 8);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : params.tensors()) {
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!out) throw Error(ErrorCode::kIoError, "short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw Error(ErrorCode::kIoError, path.string() + " is not a checkpoint");
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1u << 26)) throw Error(ErrorCode::kIoError, "bad manifest length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw Error(ErrorCode::kIoError, "truncated manifest");

  json manifest;
  try {
    manifest = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kManifestMismatch, std::string("manifest parse: ") + e.what());
  }
  try {
    const ModelHyper hyper = hyper_from_json(manifest.at("hyper"));
    UnifiedVocab vocab(manifest.at("vocab").at("n_loc").get<int>());
    if (vocab.total_size() != manifest.at("vocab").at("total_size").get<int>() ||
        vocab.n_control() != manifest.at("vocab").at("n_control").get<int>()) {
      throw Error(ErrorCode::kManifestMismatch, "vocabulary layout differs from this build");
    }
    ModelParams params(hyper);
    const json& entries = manifest.at("params");
    if (entries.size() != params.size()) {
      throw Error(ErrorCode::kManifestMismatch, "parameter count differs");
    }
    for (std::size_t s = 0; s < params.size(); ++s) {
      const auto name = entries[s].at("name").get<std::string>();
      const auto shape = entries[s].at("shape").get<std::vector<std::size_t>>();
      if (name != params.name(s) || shape != params.tensor(s).shape()) {
        throw Error(ErrorCode::kManifestMismatch, "parameter " + std::to_string(s) + " is " +
                                                      name + ", expected " + params.name(s));
      }
      Tensor& t = params.mutable_tensor(s);
      in.read(reinterpret_cast<char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
      if (!in) throw Error(ErrorCode::kIoError, "truncated payload at " + name);
    }
    CheckpointMeta meta;
    meta.step = manifest.at("step").get<std::uint64_t>();
    meta.seed = manifest.at("seed").get<std::uint64_t>();
    meta.extra = manifest.value("extra", json::object()).dump();
    return Checkpoint{std::move(params), vocab, meta};
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kManifestMismatch, e.what());
  }
}

}  // namespace jointseq
