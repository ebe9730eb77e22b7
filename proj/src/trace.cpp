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

#include "bfkit/trace.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include "bfkit/error.hpp"

namespace bfkit {

using json = nlohmann::ordered_json;

namespace {

constexpr double kCoverageSlack = 1e-6;

// Moves every member of `j` not listed in `known` into a fresh object.
json collect_extra(const json& j, std::initializer_list<std::string_view> known) {
  json extra = json::object();
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
      extra[it.key()] = it.value();
    }
  }
  return extra;
}

void append_extra(json& j, const json& extra) {
  for (auto it = extra.begin(); it != extra.end(); ++it) {
    if (!j.contains(it.key())) j[it.key()] = it.value();
  }
}

const json& require(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) {
    throw ParseError(std::string("missing field \"") + key + "\"", 0);
  }
  return *it;
}

json to_json(const CandidateLogprob& c) {
  json j;
  j["token_id"] = c.token_id;
  j["token_text"] = c.token_text;
  j["logprob_raw"] = c.logprob_raw;
  append_extra(j, c.extra);
  return j;
}

CandidateLogprob candidate_from_json(const json& j) {
  CandidateLogprob c;
  c.token_id = require(j, "token_id").get<std::int64_t>();
  c.token_text = require(j, "token_text").get<std::string>();
  c.logprob_raw = require(j, "logprob_raw").get<double>();
  c.extra = collect_extra(j, {"token_id", "token_text", "logprob_raw"});
  return c;
}

json to_json(const TokenStep& s) {
  json j;
  j["position"] = s.position;
  j["chosen_token_id"] = s.chosen_token_id;
  j["temperature_applied"] = s.temperature_applied;
  j["coverage_mass"] = s.coverage_mass;
  if (s.chosen_logprob) j["chosen_logprob"] = *s.chosen_logprob;
  json candidates = json::array();
  for (const auto& c : s.candidates) candidates.push_back(to_json(c));
  j["candidates"] = std::move(candidates);
  append_extra(j, s.extra);
  return j;
}

TokenStep step_from_json(const json& j) {
  TokenStep s;
  s.position = require(j, "position").get<int>();
  s.chosen_token_id = require(j, "chosen_token_id").get<std::int64_t>();
  s.temperature_applied = require(j, "temperature_applied").get<bool>();
  s.coverage_mass = require(j, "coverage_mass").get<double>();
  if (auto it = j.find("chosen_logprob"); it != j.end() && !it->is_null()) {
    s.chosen_logprob = it->get<double>();
  }
  for (const auto& c : require(j, "candidates")) {
    s.candidates.push_back(candidate_from_json(c));
  }
  s.extra = collect_extra(j, {"position", "chosen_token_id", "temperature_applied",
                              "coverage_mass", "chosen_logprob", "candidates"});
  return s;
}

std::string format_violation(const std::string& prompt_id, const Violation& v) {
  std::ostringstream os;
  os << "prompt_id=" << prompt_id << " position=" << v.position << ": " << v.rule;
  if (!v.detail.empty()) os << " (" << v.detail << ")";
  return os.str();
}

void check_decoding(const DecodingParams& d, int position, std::vector<Violation>& out) {
  if (!(d.temperature > 0.0) || !std::isfinite(d.temperature)) {
    out.push_back({position, "temperature-positive", "temperature must be > 0"});
  }
  if (!(d.nucleus_p > 0.0 && d.nucleus_p <= 1.0)) {
    out.push_back({position, "nucleus-p-range", "nucleus_p must be in (0, 1]"});
  }
}

}  // namespace

const CandidateLogprob* TokenStep::find_candidate(std::int64_t token_id) const {
  for (const auto& c : candidates) {
    if (c.token_id == token_id) return &c;
  }
  return nullptr;
}

const char* to_string(FinishReason reason) {
  switch (reason) {
    case FinishReason::kStopToken:
      return "stop_token";
    case FinishReason::kLengthLimit:
      return "length_limit";
    case FinishReason::kError:
      return "error";
  }
  return "error";
}

FinishReason finish_reason_from_string(const std::string& text) {
  if (text == "stop_token") return FinishReason::kStopToken;
  if (text == "length_limit") return FinishReason::kLengthLimit;
  if (text == "error") return FinishReason::kError;
  throw ParseError("unknown finish_reason \"" + text + "\"", 0);
}

void sort_candidates(std::vector<CandidateLogprob>& candidates) {
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const CandidateLogprob& a, const CandidateLogprob& b) {
                     if (a.logprob_raw != b.logprob_raw) return a.logprob_raw > b.logprob_raw;
                     return a.token_id < b.token_id;
                   });
}

double coverage_of(std::span<const CandidateLogprob> candidates) {
  double mass = 0.0;
  for (const auto& c : candidates) mass += std::exp(c.logprob_raw);
  return mass;
}

std::int64_t stable_token_id(std::string_view text) {
  // FNV-1a, truncated so the id survives any JSON number implementation.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return static_cast<std::int64_t>(h & ((1ULL << 53) - 1));
}

std::vector<Violation> validate_trace(const SequenceTrace& trace) {
  std::vector<Violation> out;
  if (trace.sample_index < 0) {
    out.push_back({0, "sample-index-nonnegative", ""});
  }
  if (trace.first_position < 1) {
    out.push_back({0, "first-position-positive", ""});
  }
  check_decoding(trace.decoding, 0, out);

  for (std::size_t i = 0; i < trace.steps.size(); ++i) {
    const TokenStep& step = trace.steps[i];
    const int expected = trace.first_position + static_cast<int>(i);
    const int pos = step.position;
    if (pos != expected) {
      out.push_back({pos, "positions-contiguous",
                     "expected position " + std::to_string(expected)});
    }
    if (step.candidates.empty()) {
      out.push_back({pos, "candidates-nonempty", ""});
    }
    std::set<std::int64_t> seen;
    for (std::size_t k = 0; k < step.candidates.size(); ++k) {
      const auto& c = step.candidates[k];
      if (!(c.logprob_raw <= 0.0) || std::isnan(c.logprob_raw)) {
        out.push_back({pos, "logprob-nonpositive", "logprob must be <= 0"});
      }
      if (c.token_id < 0) {
        out.push_back({pos, "token-id-nonnegative", ""});
      }
      if (!seen.insert(c.token_id).second) {
        out.push_back({pos, "token-ids-distinct",
                       "duplicate token_id " + std::to_string(c.token_id)});
      }
      if (k > 0) {
        const auto& prev = step.candidates[k - 1];
        const bool ordered =
            prev.logprob_raw > c.logprob_raw ||
            (prev.logprob_raw == c.logprob_raw && prev.token_id < c.token_id);
        if (!ordered) {
          out.push_back({pos, "candidates-descending", ""});
        }
      }
    }
    if (!(step.coverage_mass > 0.0 && step.coverage_mass <= 1.0 + kCoverageSlack)) {
      out.push_back({pos, "coverage-mass-range", "coverage_mass must be in (0, 1]"});
    }
    if (step.chosen_logprob && !(*step.chosen_logprob <= 0.0)) {
      out.push_back({pos, "chosen-logprob-nonpositive", "logprob must be <= 0"});
    }
  }
  return out;
}

std::vector<Violation> validate_manifest(const RunManifest& manifest) {
  std::vector<Violation> out;
  if (manifest.sample_count < 1) {
    out.push_back({0, "sample-count-positive", "sample_count_M must be >= 1"});
  }
  check_decoding(manifest.decoding, 0, out);
  return out;
}

// ---------------------------------------------------------------------------
// JSON conversions

json to_json(const DecodingParams& d) {
  json j;
  j["temperature"] = d.temperature;
  j["nucleus_p"] = d.nucleus_p;
  j["seed"] = d.seed;
  append_extra(j, d.extra);
  return j;
}

DecodingParams decoding_from_json(const json& j) {
  DecodingParams d;
  d.temperature = require(j, "temperature").get<double>();
  d.nucleus_p = require(j, "nucleus_p").get<double>();
  d.seed = require(j, "seed").get<std::int64_t>();
  d.extra = collect_extra(j, {"temperature", "nucleus_p", "seed"});
  return d;
}

json to_json(const SequenceTrace& t) {
  json j;
  j["kind"] = "trace";
  j["prompt_id"] = t.prompt_id;
  j["sample_index"] = t.sample_index;
  j["finish_reason"] = to_string(t.finish_reason);
  if (t.first_position != 1) j["first_position"] = t.first_position;
  j["decoding"] = to_json(t.decoding);
  json steps = json::array();
  for (const auto& s : t.steps) steps.push_back(to_json(s));
  j["steps"] = std::move(steps);
  append_extra(j, t.extra);
  return j;
}

SequenceTrace trace_from_json(const json& j) {
  SequenceTrace t;
  t.prompt_id = require(j, "prompt_id").get<std::string>();
  t.sample_index = require(j, "sample_index").get<int>();
  t.finish_reason = finish_reason_from_string(require(j, "finish_reason").get<std::string>());
  if (auto it = j.find("first_position"); it != j.end()) t.first_position = it->get<int>();
  t.decoding = decoding_from_json(require(j, "decoding"));
  for (const auto& s : require(j, "steps")) t.steps.push_back(step_from_json(s));
  t.extra = collect_extra(j, {"kind", "prompt_id", "sample_index", "finish_reason",
                              "first_position", "decoding", "steps"});
  return t;
}

json to_json(const RunManifest& m) {
  json j;
  j["kind"] = "manifest";
  j["model_name"] = m.model_name;
  if (m.endpoint) j["endpoint"] = *m.endpoint;
  j["sample_count_M"] = m.sample_count;
  j["decoding"] = to_json(m.decoding);
  json domains = json::object();
  for (const auto& [name, levels] : m.factor_domains) domains[name] = levels;
  j["factor_domains"] = std::move(domains);
  j["created_at"] = m.created_at;
  append_extra(j, m.extra);
  return j;
}

RunManifest manifest_from_json(const json& j) {
  RunManifest m;
  m.model_name = require(j, "model_name").get<std::string>();
  if (auto it = j.find("endpoint"); it != j.end() && !it->is_null()) {
    m.endpoint = it->get<std::string>();
  }
  m.sample_count = require(j, "sample_count_M").get<int>();
  m.decoding = decoding_from_json(require(j, "decoding"));
  if (auto it = j.find("factor_domains"); it != j.end()) {
    for (auto f = it->begin(); f != it->end(); ++f) {
      m.factor_domains[f.key()] = f.value().get<std::vector<std::string>>();
    }
  }
  m.created_at = require(j, "created_at").get<std::string>();
  m.extra = collect_extra(j, {"kind", "model_name", "endpoint", "sample_count_M",
                              "decoding", "factor_domains", "created_at"});
  return m;
}

json to_json(const PromptCase& p) {
  json j;
  j["prompt_id"] = p.prompt_id;
  j["prompt_text"] = p.prompt_text;
  j["task"] = p.task;
  j["complexity_C"] = p.complexity;
  json factors = json::object();
  for (const auto& [k, v] : p.factors) factors[k] = v;
  j["factors"] = std::move(factors);
  if (p.gold_answer) j["gold_answer"] = *p.gold_answer;
  return j;
}

PromptCase prompt_from_json(const json& j) {
  PromptCase p;
  p.prompt_id = require(j, "prompt_id").get<std::string>();
  if (auto it = j.find("prompt_text"); it != j.end()) p.prompt_text = it->get<std::string>();
  if (auto it = j.find("task"); it != j.end()) p.task = it->get<std::string>();
  if (auto it = j.find("complexity_C"); it != j.end()) p.complexity = it->get<int>();
  if (auto it = j.find("factors"); it != j.end()) {
    for (auto f = it->begin(); f != it->end(); ++f) {
      // Numeric levels such as G=3 are accepted and kept as text.
      p.factors[f.key()] = f.value().is_string() ? f.value().get<std::string>()
                                                 : f.value().dump();
    }
  }
  if (auto it = j.find("gold_answer"); it != j.end() && !it->is_null()) {
    p.gold_answer = it->get<std::string>();
  }
  return p;
}

// ---------------------------------------------------------------------------
// JSONL I/O

void write_traces(std::ostream& out, const RunManifest& manifest,
                  std::span<const SequenceTrace> traces) {
  if (auto v = validate_manifest(manifest); !v.empty()) {
    throw ValidationError("manifest: " + v.front().rule + " (" + v.front().detail + ")");
  }
  for (const auto& trace : traces) {
    auto violations = validate_trace(trace);
    if (trace.sample_index >= manifest.sample_count) {
      violations.push_back({0, "sample-index-range",
                            "sample_index must be < sample_count_M"});
    }
    if (!violations.empty()) {
      throw ValidationError(format_violation(trace.prompt_id, violations.front()));
    }
  }
  out << to_json(manifest).dump() << '\n';
  for (const auto& trace : traces) out << to_json(trace).dump() << '\n';
  if (!out) throw Error("trace sink write failed");
}

TraceFile read_traces(std::istream& in) {
  TraceFile file;
  bool have_manifest = false;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), line_no);
    }
    try {
      if (!j.is_object()) throw ParseError("expected a JSON object", 0);
      const std::string kind = require(j, "kind").get<std::string>();
      if (!have_manifest) {
        if (kind != "manifest") throw ParseError("missing manifest", 0);
        file.manifest = manifest_from_json(j);
        if (auto v = validate_manifest(file.manifest); !v.empty()) {
          throw ValidationError("line " + std::to_string(line_no) + ": " + v.front().rule);
        }
        have_manifest = true;
        continue;
      }
      if (kind != "trace") throw ParseError("unexpected kind \"" + kind + "\"", 0);
      SequenceTrace trace = trace_from_json(j);
      auto violations = validate_trace(trace);
      if (trace.sample_index >= file.manifest.sample_count) {
        violations.push_back({0, "sample-index-range", "sample_index must be < sample_count_M"});
      }
      if (!violations.empty()) {
        throw ValidationError("line " + std::to_string(line_no) + ": " +
                              format_violation(trace.prompt_id, violations.front()));
      }
      file.traces.push_back(std::move(trace));
    } catch (const ParseError& e) {
      if (e.line() != 0) throw;
      throw ParseError(e.what(), line_no);
    } catch (const json::exception& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  if (!have_manifest) throw ParseError("missing manifest", line_no == 0 ? 1 : line_no);
  return file;
}

TraceFile read_traces_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return read_traces(in);
}

void write_traces_file(const std::string& path, const RunManifest& manifest,
                       std::span<const SequenceTrace> traces) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  write_traces(out, manifest, traces);
}

std::vector<PromptCase> read_prompts(std::istream& in) {
  std::vector<PromptCase> prompts;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      prompts.push_back(prompt_from_json(json::parse(line)));
    } catch (const ParseError& e) {
      throw ParseError(e.what(), line_no);
    } catch (const json::exception& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return prompts;
}

std::vector<PromptCase> read_prompts_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return read_prompts(in);
}

void write_prompts(std::ostream& out, std::span<const PromptCase> prompts) {
  for (const auto& p : prompts) out << to_json(p).dump() << '\n';
}

}  // namespace bfkit
