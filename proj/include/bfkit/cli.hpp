// Copyright 2026 The bfkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bfkit/bf.hpp"
#include "bfkit/client.hpp"
#include "bfkit/trace.hpp"
#include "json.hpp"

namespace bfkit::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitPartial = 1,
  kExitConfig = 2,
  kExitEndpoint = 3,
  kExitEstimation = 4,
};

// Maps a library exception onto the process exit code scheme.
int exit_code_for(const std::exception& error);

struct SamplingConfig {
  int samples = 50;
  int max_tokens = 256;
  bool send_seed = true;
};

struct ResampleConfig {
  std::vector<int> positions{25, 200};
  int samples = 10;
  bool constrained = true;
  int max_rejections = 16;
  int max_tokens = 256;
};

// Parsed run configuration. See README.md for the JSON schema. Unknown keys
// anywhere in the document are rejected.
struct RunConfig {
  std::optional<client::EndpointConfig> endpoint;
  std::optional<client::EndpointConfig> aligned_endpoint;
  DecodingParams decoding;
  SamplingConfig sampling;
  std::map<std::string, std::vector<std::string>> factor_domains;
  Estimator estimator = Estimator::kEntropy;
  std::uint64_t seed = 0;
  std::string output_dir = ".";
  std::string created_at;
  client::NudgeOptions nudge;
  ResampleConfig resample;
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

// Reads the process environment.
std::optional<std::string> process_env(const std::string& name);

// Throws ConfigError. `env` supplies BFKIT_API_KEY and BFKIT_ALIGNED_API_KEY,
// which override the api_key of the corresponding endpoint.
RunConfig parse_run_config(const nlohmann::json& document, const EnvLookup& env = process_env);
RunConfig load_run_config(const std::string& path, const EnvLookup& env = process_env);

// Runs one subcommand. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace bfkit::cli
