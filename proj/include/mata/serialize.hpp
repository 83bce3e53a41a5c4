// Copyright 2026  The mata-fusion Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "mata/error.hpp"
#include "mata/layers.hpp"
#include "mata/models.hpp"
#include "mata/ot.hpp"

namespace mata {

using Json = nlohmann::ordered_json;

namespace ot {

inline void to_json(Json& j, const SinkhornConfig& c) {
  j = Json{{"epsilon", c.epsilon},
           {"maxIterations", c.max_iterations},
           {"tolerance", c.tolerance},
           {"logDomain", c.log_domain}};
}

inline void from_json(const Json& j, SinkhornConfig& c) {
  try {
    c = SinkhornConfig{};
    c.epsilon = j.value("epsilon", c.epsilon);
    c.max_iterations = j.value("maxIterations", c.max_iterations);
    c.tolerance = j.value("tolerance", c.tolerance);
    c.log_domain = j.value("logDomain", c.log_domain);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("sinkhorn config: ") + e.what());
  }
}

}  // namespace ot

inline void to_json(Json& j, const ModelSpec& s) {
  j = Json{{"variant", variant_name(s.variant)}, {"dim1", s.dim1}};
  if (is_fusion(s.variant)) j["dim2"] = s.dim2;
  j["numClasses"] = s.num_classes;
  if (uses_transport(s.variant)) j["sinkhorn"] = s.sinkhorn;
  j["dropoutRate"] = s.dropout_rate;
  j["seed"] = s.seed;
}

inline void from_json(const Json& j, ModelSpec& s) {
  try {
    s = ModelSpec{};
    s.variant = parse_variant(j.at("variant").get<std::string>());
    s.dim1 = j.at("dim1").get<std::size_t>();
    if (is_fusion(s.variant)) s.dim2 = j.at("dim2").get<std::size_t>();
    s.num_classes = j.at("numClasses").get<std::size_t>();
    if (j.contains("sinkhorn")) s.sinkhorn = j.at("sinkhorn").get<ot::SinkhornConfig>();
    s.dropout_rate = j.value("dropoutRate", s.dropout_rate);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model spec: ") + e.what());
  }
}

namespace nn {

inline Json layer_json(const std::string& name, const LayerSpec& spec) {
  Json j{{"name", name}};
  std::visit(
      [&j](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, Conv1DSpec>) {
          j["type"] = "conv1d";
          j["filters"] = s.filters;
          j["kernel_size"] = s.kernel_size;
          j["padding"] = "same";
        } else if constexpr (std::is_same_v<S, MaxPool1DSpec>) {
          j["type"] = "maxpool1d";
          j["window"] = s.window;
        } else if constexpr (std::is_same_v<S, DenseSpec>) {
          j["type"] = "dense";
          j["units"] = s.units;
          j["activation"] = s.activation == Activation::ReLU ? "relu" : "none";
        } else if constexpr (std::is_same_v<S, DropoutSpec>) {
          j["type"] = "dropout";
          j["rate"] = s.rate;
        } else {
          j["type"] = "multi_head_attention";
          j["heads"] = s.heads;
          j["model_dim"] = s.model_dim;
        }
      },
      spec);
  return j;
}

}  // namespace nn

/// Checkpoint file:
///   "MCK1" | header length (u64 LE) | UTF-8 JSON header |
///   float32 LE payload, parameters in declaration order, row-major.
/// The header records the model spec, seed, layer specs and every
/// parameter's name and shape.
namespace checkpoint {

inline constexpr char magic[4] = {'M', 'C', 'K', '1'};

namespace detail {

inline void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw FormatError("checkpoint: truncated header length");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace detail

template <typename T>
void write(const std::string& path, Model<T>& model) {
  Json header;
  header["spec"] = model.spec();
  header["seed"] = model.spec().seed;
  Json layers = Json::array();
  for (const auto& [name, spec] : model.layer_specs()) layers.push_back(nn::layer_json(name, spec));
  header["layers"] = layers;
  Json params = Json::array();
  for (auto* p : model.parameters()) params.push_back(Json{{"name", p->name}, {"shape", p->value.shape()}});
  header["parameters"] = params;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("checkpoint: cannot write " + path);
  out.write(magic, 4);
  detail::put_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (auto* p : model.parameters())
    for (T v : p->value.values()) {
      const std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                            static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
      out.write(reinterpret_cast<const char*>(b), 4);
    }
  if (!out) throw FormatError("checkpoint: write failed for " + path);
}

/// Rebuilds the model described by the header and loads its parameters.
template <typename T>
Model<T> read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("checkpoint: cannot open " + path);
  char m[4];
  if (!in.read(m, 4) || std::memcmp(m, magic, 4) != 0) throw FormatError("checkpoint: bad magic in " + path);
  const std::uint64_t len = detail::get_u64(in);
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw FormatError("checkpoint: truncated header");
  Json header;
  try {
    header = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad header: ") + e.what());
  }
  Model<T> model(header.at("spec").get<ModelSpec>());
  auto params = model.parameters();
  const Json& listed = header.at("parameters");
  if (listed.size() != params.size()) throw FormatError("checkpoint: parameter list does not match model");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (listed[k].at("name").get<std::string>() != params[k]->name ||
        listed[k].at("shape").get<Shape>() != params[k]->value.shape())
      throw FormatError("checkpoint: parameter " + params[k]->name + " does not match model");
    for (T& v : params[k]->value.values()) {
      unsigned char b[4];
      if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError("checkpoint: truncated payload");
      const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
                                 static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
      v = static_cast<T>(std::bit_cast<float>(bits));
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("checkpoint: trailing bytes in " + path);
  return model;
}

}  // namespace checkpoint
}  // namespace mata
