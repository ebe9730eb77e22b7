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
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace bfkit {

// Unknown JSON members are kept here, in input order, and written back after
// the known members so a read/write cycle reproduces the input bytes.
using ExtraFields = nlohmann::ordered_json;

struct CandidateLogprob {
  std::int64_t token_id = 0;
  std::string token_text;
  // Natural log of the model probability before truncation.
  double logprob_raw = 0.0;
  ExtraFields extra = ExtraFields::object();

  bool operator==(const CandidateLogprob&) const = default;
};

struct DecodingParams {
  double temperature = 1.0;
  double nucleus_p = 1.0;
  std::int64_t seed = 0;
  ExtraFields extra = ExtraFields::object();

  bool operator==(const DecodingParams&) const = default;
};

struct TokenStep {
  int position = 1;  // 1-based output index
  std::int64_t chosen_token_id = 0;
  // Descending by logprob_raw, ties by ascending token_id.
  std::vector<CandidateLogprob> candidates;
  bool temperature_applied = false;
  // Sum of exp(logprob_raw) over the candidates.
  double coverage_mass = 1.0;
  // Producer-recorded log-probability of the chosen token under the sampling
  // distribution. Only consulted when the chosen token is not among the
  // candidates.
  std::optional<double> chosen_logprob;
  ExtraFields extra = ExtraFields::object();

  bool operator==(const TokenStep&) const = default;

  const CandidateLogprob* find_candidate(std::int64_t token_id) const;
};

enum class FinishReason { kStopToken, kLengthLimit, kError };

const char* to_string(FinishReason reason);
FinishReason finish_reason_from_string(const std::string& text);

struct SequenceTrace {
  std::string prompt_id;
  int sample_index = 0;
  // Position of the first step. 1 for ordinary traces; forked continuations
  // start right after their fork point.
  int first_position = 1;
  std::vector<TokenStep> steps;
  FinishReason finish_reason = FinishReason::kStopToken;
  DecodingParams decoding;
  ExtraFields extra = ExtraFields::object();

  bool operator==(const SequenceTrace&) const = default;
};

struct PromptCase {
  std::string prompt_id;
  std::string prompt_text;
  int complexity = 0;
  std::map<std::string, std::string> factors;
  std::optional<std::string> gold_answer;
  std::string task;

  bool operator==(const PromptCase&) const = default;
};

struct RunManifest {
  std::string model_name;
  std::optional<std::string> endpoint;
  int sample_count = 1;
  DecodingParams decoding;
  std::map<std::string, std::vector<std::string>> factor_domains;
  std::string created_at;
  ExtraFields extra = ExtraFields::object();

  bool operator==(const RunManifest&) const = default;
};

struct Violation {
  int position = 0;  // 0 for trace-level rules
  std::string rule;
  std::string detail;

  bool operator==(const Violation&) const = default;
};

// Checks every structural invariant of a trace. Never throws.
std::vector<Violation> validate_trace(const SequenceTrace& trace);

std::vector<Violation> validate_manifest(const RunManifest& manifest);

// Sorts candidates into canonical order (logprob descending, id ascending).
void sort_candidates(std::vector<CandidateLogprob>& candidates);

double coverage_of(std::span<const CandidateLogprob> candidates);

// Stable 53-bit id for a token string, used when an endpoint reports token
// text but not token ids.
std::int64_t stable_token_id(std::string_view text);

struct TraceFile {
  RunManifest manifest;
  std::vector<SequenceTrace> traces;

  bool operator==(const TraceFile&) const = default;
};

// Writes the manifest line followed by one line per trace. Throws
// ValidationError naming the prompt id and position of the first violation.
void write_traces(std::ostream& out, const RunManifest& manifest,
                  std::span<const SequenceTrace> traces);

// Reads trace JSONL. Throws ParseError for malformed lines and
// ValidationError for invariant violations, both carrying the line number.
TraceFile read_traces(std::istream& in);

TraceFile read_traces_file(const std::string& path);
void write_traces_file(const std::string& path, const RunManifest& manifest,
                       std::span<const SequenceTrace> traces);

// JSON conversions, shared with the client and CLI layers.
nlohmann::ordered_json to_json(const DecodingParams& params);
DecodingParams decoding_from_json(const nlohmann::ordered_json& j);
nlohmann::ordered_json to_json(const SequenceTrace& trace);
SequenceTrace trace_from_json(const nlohmann::ordered_json& j);
nlohmann::ordered_json to_json(const RunManifest& manifest);
RunManifest manifest_from_json(const nlohmann::ordered_json& j);

nlohmann::ordered_json to_json(const PromptCase& prompt);
PromptCase prompt_from_json(const nlohmann::ordered_json& j);

// Prompt files are JSONL, one PromptCase object per line.
std::vector<PromptCase> read_prompts(std::istream& in);
std::vector<PromptCase> read_prompts_file(const std::string& path);
void write_prompts(std::ostream& out, std::span<const PromptCase> prompts);

}  // namespace bfkit
