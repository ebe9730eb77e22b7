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

#include "bfkit/cli.hpp"

#include <gtest/gtest.h>
#include <stdlib.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "bfkit/report.hpp"
#include "bfkit/trace.hpp"
#include "mock_server.hpp"

namespace bfkit::cli {
namespace {

namespace fs = std::filesystem;
using testing::MockServer;
using Dist = std::vector<std::pair<std::string, double>>;

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / "bfkit_cli_test" / info->name();
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    unsetenv("BFKIT_API_KEY");
  }

  std::string Path(const std::string& name) const { return (dir_ / name).string(); }

  std::string Write(const std::string& name, const std::string& contents) const {
    std::ofstream(Path(name)) << contents;
    return Path(name);
  }

  static std::string Read(const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  static Result Run(std::vector<std::string> args) {
    std::ostringstream out, err;
    Result r;
    r.code = run(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
  }

  std::string Config(const std::string& base_url, const std::string& extra = "") const {
    return Write("config.json", R"({"endpoint":{"base_url":")" + base_url +
                                    R"(","model_name":"toy","timeout_ms":2000,)"
                                    R"("retry":{"max_attempts":2,"backoff_base_ms":1}},)"
                                    R"("sampling":{"samples":3,"max_tokens":6},)"
                                    R"("output_dir":")" + dir_.string() + "\"" + extra + "}");
  }

  std::string Prompts() const {
    return Write("prompts.jsonl",
                 R"({"prompt_id":"q1","prompt_text":"Q1:","task":"t"})" "\n"
                 R"({"prompt_id":"q2","prompt_text":"Q2:","task":"t"})" "\n");
  }

  fs::path dir_;
};

double BfColumn(const std::string& csv_text, std::size_t row) {
  std::istringstream in(csv_text);
  const auto table = report::read_csv(in);
  return std::stod(table.rows.at(row).at(table.column("bf")));
}

TEST_F(CliTest, SynthThenBfRecoversTheDie) {
  const auto traces = Path("die.jsonl");
  ASSERT_EQ(Run({"synth", "--process", "uniform:6", "-N", "400", "-M", "50", "--seed", "7",
                 "--prompt-id", "die", "--out", traces})
                .code,
            0);
  const auto nll = Run({"bf", "--traces", traces, "--estimator", "nll"});
  ASSERT_EQ(nll.code, 0) << nll.err;
  EXPECT_NEAR(BfColumn(nll.out, 0), 6.0, 0.2);
  const auto ent = Run({"bf", "--traces", traces});
  ASSERT_EQ(ent.code, 0) << ent.err;
  EXPECT_NEAR(BfColumn(ent.out, 0), 6.0, 1e-9);
  EXPECT_EQ(ent.out.substr(0, ent.out.find('\n')),
            "prompt_id,task,estimator,bf,n_sequences,mean_len,coverage");
}

TEST_F(CliTest, GroupByFactorGivesOneRowPerLevel) {
  const auto cases = Write("cases.json", R"([
    {"prompt_id":"a1","task":"t","factors":{"A":"base"},"process":{"kind":"iid","uniform":4}},
    {"prompt_id":"a2","task":"t","factors":{"A":"base"},"process":{"kind":"iid","uniform":4}},
    {"prompt_id":"b1","task":"t","factors":{"A":"instruct"},"process":{"kind":"iid","uniform":2}},
    {"prompt_id":"b2","task":"t","factors":{"A":"instruct"},"process":{"kind":"iid","uniform":2}}
  ])");
  const auto traces = Path("t.jsonl");
  const auto prompts = Path("p.jsonl");
  ASSERT_EQ(Run({"synth", "--cases", cases, "-N", "20", "-M", "4", "--out", traces,
                 "--prompts-out", prompts})
                .code,
            0);
  const auto r = Run({"bf", "--traces", traces, "--prompts", prompts, "--group-by", "A"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream in(r.out);
  const auto table = report::read_csv(in);
  ASSERT_EQ(table.rows.size(), 2u);
  EXPECT_EQ(table.rows[0][table.column("A")], "base");
  EXPECT_EQ(table.rows[0][table.column("prompt_id")], "*");
  EXPECT_NEAR(BfColumn(r.out, 0), 4.0, 1e-9);
  EXPECT_NEAR(BfColumn(r.out, 1), 2.0, 1e-9);
}

std::string DegradedTraces() {
  RunManifest m;
  m.model_name = "hand";
  m.decoding.nucleus_p = 0.5;
  SequenceTrace t;
  t.prompt_id = "p";
  t.decoding.nucleus_p = 0.5;
  TokenStep s;
  s.position = 1;
  s.chosen_token_id = 2;  // outside the 0.5 nucleus
  s.candidates = {{1, "a", std::log(0.7), ExtraFields::object()},
                  {2, "b", std::log(0.3), ExtraFields::object()}};
  t.steps.push_back(s);
  std::ostringstream out;
  write_traces(out, m, std::vector<SequenceTrace>{t});
  return out.str();
}

TEST_F(CliTest, NllDegradedExitsFourWithCounts) {
  const auto traces = Write("bad.jsonl", DegradedTraces());
  const auto r = Run({"bf", "--traces", traces, "--estimator", "nll"});
  EXPECT_EQ(r.code, 4);
  EXPECT_NE(r.err.find("degraded_steps=1 total_steps=1 traces=1"), std::string::npos) << r.err;
}

TEST_F(CliTest, TrajectoryHeaderAndNoPlot) {
  const auto traces = Path("t.jsonl");
  Run({"synth", "-N", "12", "-M", "3", "--out", traces});
  const auto out = Path("traj.csv");
  const auto r = Run({"trajectory", "--traces", traces, "--out", out, "--no-plot"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto text = Read(out);
  EXPECT_EQ(text.substr(0, text.find('\n')), "# window=5 alpha=0.1 estimator=entropy");
  EXPECT_NE(text.find("all,1,6,6,15\n"), std::string::npos) << text;
  EXPECT_NE(text.find("all,11,6,6,6\n"), std::string::npos) << text;
  EXPECT_FALSE(fs::exists(Path("traj.svg")));

  ASSERT_EQ(Run({"trajectory", "--traces", traces, "--out", out}).code, 0);
  EXPECT_TRUE(fs::exists(Path("traj.svg")));
}

TEST_F(CliTest, TrajectoryBadParametersExitTwo) {
  const auto traces = Path("t.jsonl");
  Run({"synth", "-N", "5", "-M", "1", "--out", traces});
  EXPECT_EQ(Run({"trajectory", "--traces", traces, "--window", "0"}).code, 2);
  EXPECT_EQ(Run({"trajectory", "--traces", traces, "--alpha", "1.5"}).code, 2);
}

TEST_F(CliTest, ParetoRanksFactors) {
  const auto table = Write("bf.csv",
                           "prompt_id,task,A,S,estimator,bf,n_sequences,mean_len,coverage\n"
                           "p1,t,base,small,entropy,4,1,1,1\n"
                           "p2,t,instruct,small,entropy,2,1,1,1\n"
                           "p3,t,base,large,entropy,8,1,1,1\n"
                           "p4,t,instruct,large,entropy,6,1,1,1\n");
  const auto r = Run({"pareto", "--table", table, "--no-plot"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "factor,impact_raw,impact_normalized\nS,4,0.666666666667\nA,2,0.333333333333\n");
}

TEST_F(CliTest, MajorityDeterministicWithHeader) {
  const auto votes = Write("votes.json", R"([{"id":"1","gold":"4","answers":["4","4","4"]},
                                            {"id":"2","gold":"7","answers":["1","2","1"]}])");
  const auto a = Run({"majority", "--votes", votes, "--seed", "3"});
  const auto b = Run({"majority", "--votes", votes, "--seed", "3"});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(a.out,
            "# trials=100 samples_per_trial=64 seed=3\nK,mean_acc,std\n1,0.5,0\n3,0.5,0\n"
            "8,0.5,0\n16,0.5,0\n");
}

TEST_F(CliTest, MajorityCsvVotesWithExtraction) {
  const auto votes = Write("votes.csv",
                           "id,gold,answer\n1,4,answer: 4\n1,4,answer: 5\n1,4,answer: 4\n");
  const auto r = Run({"majority", "--votes", votes, "--ks", "3", "--trials", "5",
                      "--extract", "answer: (\\d+)"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("\n3,"), std::string::npos);
}

TEST_F(CliTest, AepVerifyRejectsBadEpsilon) {
  EXPECT_EQ(Run({"aep-verify", "--epsilon", "0"}).code, 2);
  EXPECT_EQ(Run({"aep-verify", "--epsilon", "-1"}).code, 2);
  const auto r = Run({"aep-verify", "--checkpoints", "10,20", "-M", "50", "--no-plot"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("\"checkpoints\""), std::string::npos);
}

TEST_F(CliTest, MinkDefaultsToTwentyPercent) {
  const auto traces = Path("t.jsonl");
  Run({"synth", "-N", "10", "-M", "2", "--out", traces});
  const auto r = Run({"mink", "--traces", traces});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.substr(0, r.out.find('\n')), "# k=20");
  EXPECT_NE(r.out.find("\nsynthetic,1,"), std::string::npos) << r.out;
}

TEST_F(CliTest, DiversityOverText) {
  const auto input = Write("texts.txt", "a b a b\n");
  const auto r = Run({"diversity", "--input", input, "-n", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "n,distinct_n\n1,0.5\n");
}

TEST_F(CliTest, CorrelateFlagsDegenerateCells) {
  const auto input = Write("m.csv",
                           "task,model,bf,acc\n"
                           "t,m,1,2\nt,m,2,4\nt,m,3,6\n"
                           "u,m,1,1\nu,m,1,2\nu,m,1,3\n");
  const auto r = Run({"correlate", "--input", input, "--no-plot"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out,
            "task,model,metric_pair,signed_r2,spearman\nt,m,bf:acc,1,1\nu,m,bf:acc,nan,nan\n");
  EXPECT_NE(r.err.find("warning"), std::string::npos);
}

TEST_F(CliTest, UnknownSubcommandOrFlagExitsTwo) {
  EXPECT_EQ(Run({"frobnicate"}).code, 2);
  EXPECT_EQ(Run({"bf", "--traces", "x", "--bogus"}).code, 2);
  EXPECT_EQ(Run({"--help"}).code, 0);
}

TEST_F(CliTest, ConfigUnknownKeyExitsTwo) {
  const auto cfg = Write("config.json", R"({"endpoint":{"base_url":"http://x","model_name":"m"},"smaple":{}})");
  const auto r = Run({"sample", "--config", cfg, "--prompts", Prompts()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("smaple"), std::string::npos) << r.err;
}

TEST_F(CliTest, MissingApiKeyExitsTwo) {
  const auto cfg = Write("config.json",
                         R"({"endpoint":{"base_url":"http://x","model_name":"m","require_api_key":true}})");
  EXPECT_EQ(Run({"sample", "--config", cfg, "--prompts", Prompts()}).code, 2);
}

TEST(ConfigEnv, ApiKeyFromEnvironment) {
  const auto j = nlohmann::ordered_json::parse(
      R"({"endpoint":{"base_url":"http://x","model_name":"m","require_api_key":true}})");
  const auto cfg = parse_run_config(j, [](const std::string& name) -> std::optional<std::string> {
    if (name == "BFKIT_API_KEY") return "secret";
    return std::nullopt;
  });
  ASSERT_TRUE(cfg.endpoint.has_value());
  EXPECT_EQ(cfg.endpoint->api_key, "secret");
}

TEST(ConfigEnv, DocumentedExampleParses) {
  const auto j = nlohmann::ordered_json::parse(R"(
{
  "endpoint": {
    "base_url": "http://localhost:8000",
    "model_name": "base-8b",
    "api_key": null,
    "require_api_key": false,
    "top_logprobs_k": 5,
    "max_parallel": 4,
    "timeout_ms": 60000,
    "retry": {"max_attempts": 3, "backoff_base_ms": 200},
    "logprobs_post_temperature": false,
    "supports_logit_bias": false,
    "token_ids": "hash",
    "prompt_template": "{prompt}"
  },
  "decoding": {"temperature": 1.0, "nucleus_p": 0.9, "seed": 0},
  "sampling": {"samples": 50, "max_tokens": 256, "send_seed": true},
  "factor_domains": {"AT": ["base", "aligned"]},
  "estimator": "entropy",
  "seed": 0,
  "output_dir": ".",
  "created_at": "",
  "nudge": {"gamma": 0.4, "max_tokens": 256, "max_word_tokens": 8},
  "resample": {"positions": [25, 200], "samples": 10, "constrained": true,
               "max_rejections": 16, "max_tokens": 256}
}
)");
  const auto cfg = parse_run_config(j, [](const std::string&) { return std::nullopt; });
  ASSERT_TRUE(cfg.endpoint.has_value());
  EXPECT_FALSE(cfg.endpoint->api_key.has_value());
  EXPECT_EQ(cfg.decoding.nucleus_p, 0.9);
  EXPECT_EQ(cfg.resample.positions, (std::vector<int>{25, 200}));
  EXPECT_EQ(cfg.nudge.gamma, 0.4);
}

TEST_F(CliTest, UnreachableEndpointExitsThree) {
  const auto r = Run({"sample", "--config", Config("http://127.0.0.1:1"), "--prompts", Prompts()});
  EXPECT_EQ(r.code, 3);
  EXPECT_TRUE(fs::exists(Path("traces.jsonl.errors.json")));
}

testing::Handler Letters() {
  return MockServer::toy([](const std::string&, int) { return Dist{{"a", 0.6}, {"b", 0.4}}; });
}

TEST_F(CliTest, SampleWritesTracesFromMock) {
  MockServer server(Letters());
  const auto r = Run({"sample", "--config", Config(server.base_url()), "--prompts", Prompts()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "traces=6 mean_len=6 coverage=1 errors=0\n");
  std::ifstream in(Path("traces.jsonl"));
  const auto file = read_traces(in);
  EXPECT_EQ(file.traces.size(), 6u);
  EXPECT_EQ(file.manifest.model_name, "toy");
  EXPECT_EQ(file.manifest.sample_count, 3);
}

TEST_F(CliTest, PartialFailureExitsOne) {
  MockServer server(Letters());
  server.fail_first(2);  // both attempts of the first request
  const auto cfg = Write("serial.json",
                         R"({"endpoint":{"base_url":")" + server.base_url() +
                             R"(","model_name":"toy","max_parallel":1,)"
                             R"("retry":{"max_attempts":2,"backoff_base_ms":1}},)"
                             R"("sampling":{"samples":3,"max_tokens":4},)"
                             R"("output_dir":")" + dir_.string() + R"("})");
  const auto p = Run({"sample", "--config", cfg, "--prompts", Prompts()});
  EXPECT_EQ(p.code, 1) << p.err;
  EXPECT_NE(p.out.find("traces=5 "), std::string::npos) << p.out;
  EXPECT_NE(p.out.find("errors=1"), std::string::npos);
}

TEST_F(CliTest, ResampleAtTwoPositions) {
  MockServer server(Letters());
  const auto cfg = Write("config.json",
                         R"({"endpoint":{"base_url":")" + server.base_url() +
                             R"(","model_name":"toy"},)"
                             R"("sampling":{"samples":1,"max_tokens":210},)"
                             R"("resample":{"samples":2,"max_tokens":3},)"
                             R"("output_dir":")" + dir_.string() + R"("})");
  const auto prompts = Prompts();
  ASSERT_EQ(Run({"sample", "--config", cfg, "--prompts", prompts, "-M", "1"}).code, 0);
  const auto csv = Path("forks.csv");
  const auto r = Run({"resample", "--config", cfg, "--prompts", prompts, "--traces",
                      Path("traces.jsonl"), "--positions", "25,200", "--csv", csv, "--no-plot"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(Read(csv),
            "fork_position,n_parents,n_forks,n_forced_fork_failed,n_errors,accuracy\n"
            "25,2,4,0,0,nan\n200,2,4,0,0,nan\n");
  std::ifstream in(Path("forks.jsonl"));
  const auto forks = read_traces(in).traces;
  ASSERT_EQ(forks.size(), 8u);
  EXPECT_EQ(forks[0].first_position, 26);
  EXPECT_EQ(forks[4].first_position, 201);
}

TEST_F(CliTest, NudgeWritesReportLines) {
  MockServer base(MockServer::toy([](const std::string&, int) {
    return Dist{{"x", 0.35}, {"y", 0.35}, {"z", 0.3}};
  }));
  MockServer aligned(MockServer::toy([](const std::string&, int step) {
    return Dist{{step == 0 ? "w" : " v", 1.0}};
  }));
  const auto cfg = Write("config.json",
                         R"({"endpoint":{"base_url":")" + base.base_url() +
                             R"(","model_name":"base"},"aligned_endpoint":{"base_url":")" +
                             aligned.base_url() + R"(","model_name":"chat"},)"
                             R"("nudge":{"max_tokens":4}})");
  const auto out = Path("nudge.jsonl");
  const auto r = Run({"nudge", "--config", cfg, "--prompts", Prompts(), "--out", out});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream lines(Read(out));
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["nudging_ratio"], 1.0);
    EXPECT_EQ(j["injected_tokens"], 4);
    ++n;
  }
  EXPECT_EQ(n, 2);
  EXPECT_TRUE(fs::exists(Path("nudge.svg")));
}

}  // namespace
}  // namespace bfkit::cli
