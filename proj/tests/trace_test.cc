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

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "bfkit/error.hpp"

namespace bfkit {
namespace {

RunManifest SmallManifest() {
  RunManifest m;
  m.model_name = "toy";
  m.sample_count = 2;
  m.decoding.nucleus_p = 0.9;
  m.factor_domains["AT"] = {"base", "instruct"};
  m.created_at = "2026-01-01T00:00:00Z";
  return m;
}

TokenStep Step(int position, std::int64_t chosen, std::vector<double> probs) {
  TokenStep s;
  s.position = position;
  s.chosen_token_id = chosen;
  double mass = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    s.candidates.push_back({static_cast<std::int64_t>(i), "t" + std::to_string(i),
                            std::log(probs[i]), ExtraFields::object()});
    mass += probs[i];
  }
  s.coverage_mass = mass;
  return s;
}

SequenceTrace TwoStepTrace() {
  SequenceTrace t;
  t.prompt_id = "p1";
  t.sample_index = 1;
  t.finish_reason = FinishReason::kLengthLimit;
  t.decoding.nucleus_p = 0.9;
  t.steps.push_back(Step(1, 0, {0.5, 0.3, 0.15, 0.05}));
  t.steps.push_back(Step(2, 1, {0.9, 0.1}));
  return t;
}

std::vector<std::string> Lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

bool HasRule(const std::vector<Violation>& v, const std::string& rule) {
  for (const auto& x : v) {
    if (x.rule == rule) return true;
  }
  return false;
}

TEST(WriteTraces, EmptyListWritesManifestOnly) {
  std::ostringstream out;
  write_traces(out, SmallManifest(), {});
  const auto lines = Lines(out.str());
  ASSERT_EQ(lines.size(), 1u);
  EXPECT_NE(lines[0].find("\"kind\":\"manifest\""), std::string::npos);
}

TEST(WriteTraces, OneTraceIsTwoLines) {
  std::ostringstream out;
  const std::vector<SequenceTrace> traces{TwoStepTrace()};
  write_traces(out, SmallManifest(), traces);
  EXPECT_EQ(Lines(out.str()).size(), 2u);
}

TEST(WriteTraces, NonContiguousPositionsNamePosition) {
  auto t = TwoStepTrace();
  t.steps[1].position = 3;
  std::ostringstream out;
  const std::vector<SequenceTrace> traces{t};
  try {
    write_traces(out, SmallManifest(), traces);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("p1"), std::string::npos) << what;
    EXPECT_NE(what.find("position=3"), std::string::npos) << what;
  }
}

TEST(WriteTraces, SampleIndexMustBeBelowManifestCount) {
  auto t = TwoStepTrace();
  t.sample_index = 2;
  std::ostringstream out;
  const std::vector<SequenceTrace> traces{t};
  EXPECT_THROW(write_traces(out, SmallManifest(), traces), ValidationError);
}

TEST(ReadTraces, RoundTripIsStructuralIdentity) {
  std::ostringstream out;
  const std::vector<SequenceTrace> traces{TwoStepTrace()};
  write_traces(out, SmallManifest(), traces);
  std::istringstream in(out.str());
  const TraceFile file = read_traces(in);
  EXPECT_EQ(file.manifest, SmallManifest());
  ASSERT_EQ(file.traces.size(), 1u);
  EXPECT_EQ(file.traces[0], traces[0]);
}

TEST(ReadTraces, UnknownFieldsSurviveByteForByte) {
  const std::string text =
      R"({"kind":"manifest","model_name":"m","sample_count_M":1,"decoding":{"temperature":1.0,"nucleus_p":1.0,"seed":0},"factor_domains":{},"created_at":"","run_tag":"x7"})"
      "\n"
      R"({"kind":"trace","prompt_id":"a","sample_index":0,"finish_reason":"stop_token","decoding":{"temperature":1.0,"nucleus_p":1.0,"seed":3,"sampler":"v2"},"steps":[{"position":1,"chosen_token_id":4,"temperature_applied":false,"coverage_mass":1.0,"candidates":[{"token_id":4,"token_text":"x","logprob_raw":0.0,"bytes":[120]}],"note":"n"}],"score":0.25})"
      "\n";
  std::istringstream in(text);
  const TraceFile file = read_traces(in);
  std::ostringstream out;
  write_traces(out, file.manifest, file.traces);
  EXPECT_EQ(out.str(), text);
}

TEST(ReadTraces, PositiveLogprobIsRejected) {
  const std::string text =
      R"({"kind":"manifest","model_name":"m","sample_count_M":1,"decoding":{"temperature":1.0,"nucleus_p":1.0,"seed":0},"factor_domains":{},"created_at":""})"
      "\n"
      R"({"kind":"trace","prompt_id":"a","sample_index":0,"finish_reason":"stop_token","decoding":{"temperature":1.0,"nucleus_p":1.0,"seed":0},"steps":[{"position":1,"chosen_token_id":0,"temperature_applied":false,"coverage_mass":1.0,"candidates":[{"token_id":0,"token_text":"x","logprob_raw":0.5}]}]})"
      "\n";
  std::istringstream in(text);
  try {
    read_traces(in);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("logprob must be <= 0"), std::string::npos) << what;
    EXPECT_NE(what.find("line 2"), std::string::npos) << what;
  }
}

TEST(ReadTraces, TruncatedFinalLineReportsLineNumber) {
  std::ostringstream out;
  const std::vector<SequenceTrace> traces{TwoStepTrace(), TwoStepTrace()};
  write_traces(out, SmallManifest(), traces);
  std::string text = out.str();
  text.resize(text.size() - 20);
  std::istringstream in(text);
  try {
    read_traces(in);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(ReadTraces, MissingManifestIsAnError) {
  std::ostringstream out;
  const std::vector<SequenceTrace> traces{TwoStepTrace()};
  write_traces(out, SmallManifest(), traces);
  const auto lines = Lines(out.str());
  std::istringstream in(lines[1] + "\n");
  EXPECT_THROW(read_traces(in), ParseError);
}

TEST(ValidateTrace, ValidTraceHasNoViolations) {
  EXPECT_TRUE(validate_trace(TwoStepTrace()).empty());
}

TEST(ValidateTrace, UnsortedCandidates) {
  auto t = TwoStepTrace();
  std::swap(t.steps[0].candidates[0], t.steps[0].candidates[1]);
  const auto v = validate_trace(t);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].rule, "candidates-descending");
  EXPECT_EQ(v[0].position, 1);
}

TEST(ValidateTrace, CoverageAboveOne) {
  auto t = TwoStepTrace();
  t.steps[1].coverage_mass = 1.2;
  const auto v = validate_trace(t);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].rule, "coverage-mass-range");
  EXPECT_EQ(v[0].position, 2);
}

TEST(ValidateTrace, TiesOrderedByTokenId) {
  auto t = TwoStepTrace();
  t.steps[1] = Step(2, 0, {0.5, 0.5});
  EXPECT_TRUE(validate_trace(t).empty());
  std::swap(t.steps[1].candidates[0], t.steps[1].candidates[1]);
  EXPECT_TRUE(HasRule(validate_trace(t), "candidates-descending"));
}

// Every single-field mutation out of range is caught.
TEST(ValidateTrace, SingleFieldMutationsAreDetected) {
  const std::vector<std::pair<std::string, std::function<void(SequenceTrace&)>>> cases{
      {"sample-index-nonnegative", [](SequenceTrace& t) { t.sample_index = -1; }},
      {"temperature-positive", [](SequenceTrace& t) { t.decoding.temperature = 0.0; }},
      {"nucleus-p-range", [](SequenceTrace& t) { t.decoding.nucleus_p = 1.5; }},
      {"nucleus-p-range", [](SequenceTrace& t) { t.decoding.nucleus_p = 0.0; }},
      {"positions-contiguous", [](SequenceTrace& t) { t.steps[0].position = 2; }},
      {"candidates-nonempty", [](SequenceTrace& t) { t.steps[0].candidates.clear(); }},
      {"logprob-nonpositive", [](SequenceTrace& t) { t.steps[1].candidates[1].logprob_raw = 0.1; }},
      {"token-id-nonnegative", [](SequenceTrace& t) { t.steps[1].candidates[1].token_id = -5; }},
      {"token-ids-distinct", [](SequenceTrace& t) { t.steps[0].candidates[1].token_id = 0; }},
      {"coverage-mass-range", [](SequenceTrace& t) { t.steps[0].coverage_mass = 0.0; }},
      {"chosen-logprob-nonpositive", [](SequenceTrace& t) { t.steps[0].chosen_logprob = 0.3; }},
  };
  for (const auto& [rule, mutate] : cases) {
    auto t = TwoStepTrace();
    mutate(t);
    EXPECT_TRUE(HasRule(validate_trace(t), rule)) << rule;
  }
}

TEST(ValidateManifest, SampleCountPositive) {
  auto m = SmallManifest();
  m.sample_count = 0;
  EXPECT_FALSE(validate_manifest(m).empty());
}

TEST(Prompts, RoundTrip) {
  PromptCase p;
  p.prompt_id = "q1";
  p.prompt_text = "Write a story.";
  p.complexity = 3;
  p.factors = {{"AT", "base"}, {"S", "large"}};
  p.gold_answer = "42";
  p.task = "story";
  std::ostringstream out;
  const std::vector<PromptCase> prompts{p};
  write_prompts(out, prompts);
  std::istringstream in(out.str());
  const auto back = read_prompts(in);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0], p);
}

TEST(StableTokenId, DeterministicAndNonnegative) {
  EXPECT_EQ(stable_token_id("hello"), stable_token_id("hello"));
  EXPECT_NE(stable_token_id("hello"), stable_token_id("hellp"));
  EXPECT_GE(stable_token_id(""), 0);
  EXPECT_LT(stable_token_id("anything"), std::int64_t{1} << 53);
}

}  // namespace
}  // namespace bfkit
