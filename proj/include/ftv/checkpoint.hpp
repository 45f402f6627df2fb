#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "ftv/config.hpp"
#include "ftv/nn.hpp"
#include "ftv/tensor.hpp"

namespace ftv {

// Checkpoint archive: 8-byte magic, little-endian u64 header length, a JSON
// header (format version, step, run-config snapshot, tensor index), then the
// raw float64 payload. All parameter and optimizer arrays are keyed by
// module path.
inline constexpr char kCheckpointMagic[8] = {'F', 'T', 'V', 'C',
                                             'K', 'P', 'T', '1'};

struct Checkpoint {
  RunConfig config;
  AttributeVocab vocab;
  std::size_t step = 0;
  std::map<std::string, Tensor> tensors;
};

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  Json header;
  header["format"] = 1;
  header["step"] = ckpt.step;
  header["config"] = to_json(ckpt.config);
  header["vocab"] = {{"gender", ckpt.vocab.gender}, {"race", ckpt.vocab.race}};
  Json index = Json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    index.push_back({{"name", name},
                     {"rows", t.rows()},
                     {"cols", t.cols()},
                     {"offset", offset}});
    offset += t.size() * sizeof(Real);
  }
  header["tensors"] = index;
  const std::string header_text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write(kCheckpointMagic, 8);
  const std::uint64_t hlen = header_text.size();
  out.write(reinterpret_cast<const char*>(&hlen), 8);
  out.write(header_text.data(), static_cast<std::streamsize>(hlen));
  for (const auto& [name, t] : ckpt.tensors)
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(Real)));
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (in.gcount() != 8 || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw IoError("not an FTV checkpoint: " + path);
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), 8);
  std::string header_text(hlen, '\0');
  in.read(header_text.data(), static_cast<std::streamsize>(hlen));
  if (static_cast<std::uint64_t>(in.gcount()) != hlen)
    throw IoError("truncated checkpoint header: " + path);
  Json header;
  try {
    header = Json::parse(header_text);
  } catch (const Json::exception& e) {
    throw IoError("corrupt checkpoint header: " + std::string(e.what()));
  }
  require(header.at("format").get<int>() == 1,
          "unsupported checkpoint format version");

  Checkpoint ckpt;
  ckpt.step = header.at("step").get<std::size_t>();
  ckpt.config = parse_run_config(header.at("config"));
  ckpt.vocab.gender =
      header.at("vocab").at("gender").get<std::vector<std::string>>();
  ckpt.vocab.race = header.at("vocab").at("race").get<std::vector<std::string>>();
  const std::streampos payload_start = in.tellg();
  for (const auto& entry : header.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const std::size_t rows = entry.at("rows").get<std::size_t>();
    const std::size_t cols = entry.at("cols").get<std::size_t>();
    const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
    Tensor t(rows, cols);
    in.seekg(payload_start + static_cast<std::streamoff>(offset));
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(Real)));
    if (static_cast<std::size_t>(in.gcount()) != t.size() * sizeof(Real))
      throw IoError("truncated checkpoint payload at tensor " + name);
    ckpt.tensors.emplace(name, std::move(t));
  }
  return ckpt;
}

// Copies model parameters into a checkpoint tensor map under their store names.
inline void collect_parameters(const ParamStore& params, Checkpoint& ckpt) {
  for (const auto& [name, v] : params.items()) ckpt.tensors[name] = v.value();
}

// Restores parameters by name; every store entry must be present with the
// right shape, and stray model tensors in the archive are rejected.
inline void restore_parameters(const Checkpoint& ckpt, ParamStore& params) {
  std::size_t matched = 0;
  for (auto& [name, v] : params.items()) {
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end())
      throw IoError("checkpoint missing parameter: " + name);
    require_dim(it->second.rows() == v.value().rows() &&
                    it->second.cols() == v.value().cols(),
                "checkpoint shape mismatch for " + name);
    v.mutable_value() = it->second;
    ++matched;
  }
  std::size_t model_tensors = 0;
  for (const auto& [name, t] : ckpt.tensors)
    if (name.rfind("optim.", 0) != 0) ++model_tensors;
  require(matched == model_tensors,
          "checkpoint contains tensors unknown to this model configuration");
}

}  // namespace ftv
