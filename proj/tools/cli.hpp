// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>

#include <iosfwd>
#include <string>
#include <vector>

#include "rppg/pipeline.hpp"

namespace rppg::cli {

using nlohmann::json;

/// Everything a command reads from --config. Unknown keys are rejected.
struct RunConfig {
  std::string profile = "paper";  // "paper" or "desk"
  pipe::BenchmarkConfig benchmark;
  pipe::ClipOptions clips;
  pipe::ModelConfig model = pipe::ModelConfig::base();
  pipe::TrainConfig pretrain = pipe::TrainConfig::defaults(pipe::Stage::Pretrain);
  pipe::TrainConfig finetune = pipe::TrainConfig::defaults(pipe::Stage::Finetune);
  pipe::TrainConfig probe = pipe::TrainConfig::defaults(pipe::Stage::Probe);

  std::string protocol = "intra";
  std::size_t folds = 5;
  double labeled_fraction = 0.1;
  bool video_mean = false;
  std::string axis = "mask_ratio";
  std::vector<std::string> values;

  std::string train_dir;
  std::string test_dir;
  std::string checkpoint;
  std::string init = "partial";  // random | partial | checkpoint
  std::string out_dir = "out";
  std::size_t jobs = 1;
  bool resume = false;
};

/// Profile defaults first, then every other key on top.
RunConfig parse_run_config(const json& j);
json to_json(const RunConfig& c);

/// Exit status for an error: 2 configuration, 3 data, 4 numeric.
int exit_code_for(ErrorCode code);

/// Full command line, argv[0] included. Returns the process exit status.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rppg::cli
