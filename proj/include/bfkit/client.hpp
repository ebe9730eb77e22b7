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

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bfkit/trace.hpp"
#include "json.hpp"

namespace bfkit::client {

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds backoff_base{200};
};

enum class TokenIdMode {
  kHash,            // ids are stable_token_id(token text)
  kTokenIdPrefix,   // tokens arrive as "token_id:<n>"
};

struct EndpointConfig {
  std::string base_url;  // scheme://host[:port][/prefix]
  std::string model_name;
  std::optional<std::string> api_key;
  int top_logprobs_k = 5;
  int max_parallel = 4;
  std::chrono::milliseconds timeout{60000};
  RetryPolicy retry;
  // Whether the server reports logprobs after temperature scaling.
  bool logprobs_post_temperature = false;
  // Whether the server honors logit_bias keyed by our token ids.
  bool supports_logit_bias = false;
  TokenIdMode token_ids = TokenIdMode::kHash;
  // Client-side prompt transform; "{prompt}" is replaced by the raw prompt.
  std::string prompt_template = "{prompt}";
};

struct CompletionRequest {
  std::string prompt;
  int max_tokens = 16;
  double temperature = 1.0;
  double top_p = 1.0;
  int n = 1;
  int logprobs = 5;
  std::optional<std::int64_t> seed;
  std::map<std::int64_t, double> logit_bias;

  nlohmann::ordered_json to_json(const std::string& model) const;
};

// One choice of an OpenAI-style completions response.
struct CompletionChoice {
  std::string text;
  std::string finish_reason;
  std::vector<std::string> tokens;
  std::vector<std::optional<double>> token_logprobs;
  // Alternatives per token in server order.
  std::vector<std::vector<std::pair<std::string, double>>> top_logprobs;
};

// Parses the "choices" array. Throws CapabilityError when per-token
// logprobs are missing.
std::vector<CompletionChoice> parse_completion_response(const nlohmann::ordered_json& body);

struct CallDiagnostics {
  int attempts = 0;
};

// Blocking client for POST {base_url}/v1/completions with retries. Not
// thread-safe; use one instance per worker.
class CompletionsClient {
 public:
  explicit CompletionsClient(EndpointConfig config);
  ~CompletionsClient();
  CompletionsClient(const CompletionsClient&) = delete;
  CompletionsClient& operator=(const CompletionsClient&) = delete;

  std::vector<CompletionChoice> complete(const CompletionRequest& request,
                                         CallDiagnostics* diagnostics = nullptr);

  const EndpointConfig& config() const { return config_; }

 private:
  struct Impl;
  EndpointConfig config_;
  std::unique_ptr<Impl> impl_;
};

std::int64_t token_id_for(const std::string& token, TokenIdMode mode);

// Converts one choice into trace steps starting at `first_position`. The
// chosen token is merged into the candidates when the server left it out of
// the top-k alternatives.
std::vector<TokenStep> steps_from_choice(const CompletionChoice& choice,
                                         const EndpointConfig& config, int first_position);

FinishReason finish_reason_from_api(const std::string& reason);

// Concatenated text of the chosen tokens of steps [0, count).
std::string detokenize(const SequenceTrace& trace, std::size_t count);

// ---------------------------------------------------------------------------
// Sampling

struct SampleError {
  int sample_index = 0;
  int attempts = 0;
  std::string message;
};

struct SampleResult {
  std::vector<SequenceTrace> traces;  // successful samples, by sample_index
  std::vector<SampleError> errors;
  std::vector<int> attempts;  // per sample_index
};

struct SeedPolicy {
  std::int64_t base_seed = 0;
  bool send_seed = true;  // sample i uses base_seed + i
};

// Draws M independent completions with at most max_parallel requests in
// flight. Transport failures are recorded per sample; a server that does not
// return logprobs raises CapabilityError.
SampleResult sample_completions(const EndpointConfig& endpoint, const PromptCase& prompt,
                                const DecodingParams& params, int m, int max_tokens,
                                const SeedPolicy& seeds = {});

// ---------------------------------------------------------------------------
// Mid-generation resampling

struct ForkOptions {
  bool constrained = true;  // first token must differ from the original
  int max_rejections = 16;
  int max_tokens = 256;     // continuation budget after the forced token
};

struct ForkResult {
  int sample_index = 0;
  std::optional<SequenceTrace> trace;
  bool forced_fork_failed = false;
  int attempts = 0;
  std::string error;
};

// Continues `original` from its first `fork_position` tokens M times. Each
// continuation starts at position fork_position + 1.
std::vector<ForkResult> resample_from_position(const EndpointConfig& endpoint,
                                               const PromptCase& prompt,
                                               const SequenceTrace& original, int fork_position,
                                               const DecodingParams& params, int m,
                                               const ForkOptions& options = {});

// ---------------------------------------------------------------------------
// Nudging

struct NudgeEvent {
  int position = 0;
  double base_top1_prob = 0.0;
  std::string injected_text;
  int injected_token_count = 0;
};

struct NudgeReport {
  SequenceTrace trace;  // merged; each step carries extra {"source": "base" or "aligned"}
  std::vector<NudgeEvent> events;
  int base_tokens = 0;
  int injected_tokens = 0;
  double nudging_ratio = 0.0;

  nlohmann::ordered_json to_json() const;
};

struct NudgeOptions {
  double gamma = 0.4;  // top-1 probability below which the aligned model speaks
  int max_tokens = 256;
  int max_word_tokens = 8;
};

NudgeReport nudging_generate(const EndpointConfig& base, const EndpointConfig& aligned,
                             const PromptCase& prompt, const DecodingParams& params,
                             const NudgeOptions& options = {});

}  // namespace bfkit::client
