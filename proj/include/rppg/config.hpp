// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>

#include <string>
#include <type_traits>
#include <vector>

#include "rppg/error.hpp"
#include "rppg/pipeline.hpp"
#include "rppg/synthgen.hpp"

namespace rppg::cfg {

using nlohmann::json;

/// Reads keys of one JSON object and rejects any key it was never asked for.
/// Type errors and unknown keys raise InvalidConfig naming the dotted path.
class StrictObject {
 public:
  StrictObject(const json& j, std::string path);

  template <typename T>
  void get(const char* key, T& out);
  /// Child object, or nullptr when absent.
  const json* child(const char* key);
  std::string path_of(const char* key) const { return path_.empty() ? key : path_ + "." + key; }
  void finish() const;

 private:
  const json& j_;
  std::string path_;
  std::vector<std::string> seen_;
};

json to_json(const synth::SynthConfig& c);
json to_json(const nn::EncoderConfig& c);
json to_json(const nn::DecoderConfig& c);
json to_json(const pipe::ModelConfig& c);
json to_json(const pipe::TrainConfig& c);
json to_json(const pipe::ClipOptions& c);
json to_json(const pipe::BenchmarkConfig& c);

/// Each reader starts from `base` and overrides the keys present in `j`.
synth::SynthConfig synth_from_json(const json& j, synth::SynthConfig base = {}, const std::string& path = "synth");
pipe::ModelConfig model_from_json(const json& j, pipe::ModelConfig base, const std::string& path = "model");
pipe::TrainConfig train_from_json(const json& j, pipe::TrainConfig base, const std::string& path);
pipe::ClipOptions clips_from_json(const json& j, pipe::ClipOptions base = {}, const std::string& path = "clips");
pipe::BenchmarkConfig benchmark_from_json(const json& j, pipe::BenchmarkConfig base = {},
                                          const std::string& path = "benchmark");

stmap::Variant parse_variant_or_throw(const std::string& name, const std::string& path);

template <typename T>
void StrictObject::get(const char* key, T& out) {
  seen_.emplace_back(key);
  const auto it = j_.find(key);
  if (it == j_.end()) return;
  if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
    if (!it->is_number_unsigned() && !(it->is_number_integer() && it->template get<std::int64_t>() >= 0)) {
      fail(ErrorCode::InvalidConfig, path_of(key) + ": expected a non-negative integer");
    }
  }
  try {
    out = it->template get<T>();
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidConfig, path_of(key) + ": " + e.what());
  }
}

}  // namespace rppg::cfg
