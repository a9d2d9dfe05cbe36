/* Copyright 2026 The ATRank Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

#include "atrank/error.hpp"
#include "atrank/train.hpp"

namespace atrank {

using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor* value;
};

std::vector<NamedTensor> ordered_tensors(AtrankModel& model) {
  std::vector<NamedTensor> out;
  for (Parameter* p : model.dense_parameters()) out.push_back({p->name, &p->value});
  for (EmbeddingTable* t : model.registry().tables()) out.push_back({t->name(), &t->value()});
  return out;
}

void put_f32(std::string& buf, double v) {
  const std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double get_f32(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return static_cast<double>(std::bit_cast<float>(bits));
}

json schema_json(const GroupSchema& s) {
  json feats = json::array();
  for (const auto& f : s.features)
    feats.push_back({{"name", f.name}, {"handle", f.handle}, {"width", f.width}});
  return {{"name", s.name},
          {"features", feats},
          {"action_handle", s.action_handle},
          {"time_handle", s.time_handle},
          {"base_unit_seconds", s.time.base_unit_seconds},
          {"max_bucket", s.time.max_bucket}};
}

GroupSchema schema_from(const json& j) {
  GroupSchema s;
  s.name = j.at("name").get<std::string>();
  for (const auto& f : j.at("features"))
    s.features.push_back({f.at("name").get<std::string>(), f.at("handle").get<std::string>(),
                          f.at("width").get<std::size_t>()});
  s.action_handle = j.at("action_handle").get<std::string>();
  s.time_handle = j.at("time_handle").get<std::string>();
  s.time.base_unit_seconds = j.at("base_unit_seconds").get<double>();
  s.time.max_bucket = j.at("max_bucket").get<std::size_t>();
  return s;
}

}  // namespace

void save_checkpoint(AtrankModel& model, const TrainConfig& config,
                     const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "vocab", ec);
  if (ec) throw DataError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());

  // The live model becomes exactly what the payload stores.
  model.round_to_float32();

  json manifest;
  manifest["format_version"] = kFormatVersion;
  manifest["config"] = config.to_key_values();
  manifest["schemas"] = json::array();
  for (const auto& s : model.registry().schemas()) manifest["schemas"].push_back(schema_json(s));
  manifest["payload"] = "params.bin";
  manifest["params"] = json::array();

  std::string payload;
  for (const auto& [name, t] : ordered_tensors(model)) {
    manifest["params"].push_back({{"name", name},
                                  {"shape", t->shape()},
                                  {"offset", payload.size()},
                                  {"count", t->size()}});
    for (double v : t->data()) put_f32(payload, v);
  }
  std::ofstream(dir / "params.bin", std::ios::binary).write(payload.data(),
                                                            static_cast<std::streamsize>(payload.size()));
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
  for (const auto& [handle, v] : model.registry().vocabularies())
    v.save(dir / "vocab" / (handle + ".txt"));
  if (!fs::exists(dir / "manifest.json")) throw DataError("failed to write checkpoint " + dir.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream min(dir / "manifest.json");
  if (!min) throw DataError("not a checkpoint (missing " + (dir / "manifest.json").string() + ")");
  json manifest;
  try {
    manifest = json::parse(min);
  } catch (const json::exception& e) {
    throw DataError("manifest.json: " + std::string(e.what()));
  }

  try {
    if (manifest.at("format_version").get<int>() != kFormatVersion)
      throw DataError("unsupported checkpoint format version");
    TrainConfig config =
        TrainConfig::from_key_values(manifest.at("config").get<std::map<std::string, std::string>>());
    std::vector<GroupSchema> schemas;
    for (const auto& s : manifest.at("schemas")) schemas.push_back(schema_from(s));
    VocabularySet vocabs;
    for (const auto& s : schemas) {
      vocabs[s.action_handle] = Vocabulary::load(dir / "vocab" / (s.action_handle + ".txt"));
      for (const auto& f : s.features)
        if (!vocabs.count(f.handle)) vocabs[f.handle] = Vocabulary::load(dir / "vocab" / (f.handle + ".txt"));
    }
    AtrankModel model(EmbeddingRegistry(std::move(schemas), std::move(vocabs)), config.model_dims());

    std::ifstream pin(dir / manifest.value("payload", std::string("params.bin")), std::ios::binary);
    if (!pin) throw DataError("checkpoint payload missing");
    const std::string payload((std::istreambuf_iterator<char>(pin)), std::istreambuf_iterator<char>());

    auto tensors = ordered_tensors(model);
    const auto& params = manifest.at("params");
    if (params.size() != tensors.size())
      throw DataError("checkpoint holds " + std::to_string(params.size()) + " tensors, model needs " +
                      std::to_string(tensors.size()));
    std::size_t expected_offset = 0;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      const auto& p = params[i];
      const auto& [name, t] = tensors[i];
      if (p.at("name").get<std::string>() != name)
        throw DataError("checkpoint tensor " + std::to_string(i) + " is '" +
                        p.at("name").get<std::string>() + "', expected '" + name + "'");
      const Shape shape = p.at("shape").get<Shape>();
      const std::size_t count = p.at("count").get<std::size_t>();
      const std::size_t offset = p.at("offset").get<std::size_t>();
      if (shape != t->shape() || count != t->size() || shape_size(shape) != count)
        throw DataError("checkpoint tensor '" + name + "' has shape " + shape_to_string(shape) +
                        ", expected " + shape_to_string(t->shape()));
      if (offset != expected_offset || offset + 4 * count > payload.size())
        throw DataError("checkpoint tensor '" + name + "' has a bad payload offset");
      const auto* bytes = reinterpret_cast<const unsigned char*>(payload.data()) + offset;
      for (std::size_t k = 0; k < count; ++k) t->data()[k] = get_f32(bytes + 4 * k);
      expected_offset += 4 * count;
    }
    if (expected_offset != payload.size()) throw DataError("checkpoint payload has trailing bytes");
    return LoadedCheckpoint{std::move(config), std::move(model)};
  } catch (const json::exception& e) {
    throw DataError("manifest.json: " + std::string(e.what()));
  }
}

}  // namespace atrank
