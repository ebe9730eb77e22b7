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

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <regex>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "bfkit/analysis.hpp"
#include "bfkit/error.hpp"
#include "bfkit/report.hpp"
#include "bfkit/synth.hpp"

namespace bfkit::cli {

namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;
using report::format_number;

// ---------------------------------------------------------------------------
// Run configuration

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const bool known = std::any_of(allowed.begin(), allowed.end(),
                                   [&](const char* k) { return it.key() == k; });
    if (!known) throw ConfigError(where + ": unknown key '" + it.key() + "'");
  }
}

template <class T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

template <class T>
T get_required(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError(where + ": missing required key '" + key + "'");
  return get_or<T>(j, key, T{}, where);
}

client::EndpointConfig parse_endpoint(const json& j, const std::string& where,
                                      const std::optional<std::string>& env_key,
                                      const std::string& env_name) {
  check_keys(j,
             {"base_url", "model_name", "api_key", "require_api_key", "top_logprobs_k",
              "max_parallel", "timeout_ms", "retry", "logprobs_post_temperature",
              "supports_logit_bias", "token_ids", "prompt_template"},
             where);
  client::EndpointConfig c;
  c.base_url = get_required<std::string>(j, "base_url", where);
  c.model_name = get_required<std::string>(j, "model_name", where);
  if (j.contains("api_key") && !j["api_key"].is_null()) {
    c.api_key = get_or<std::string>(j, "api_key", "", where);
  }
  if (env_key && !env_key->empty()) c.api_key = env_key;
  if (get_or(j, "require_api_key", false, where) && (!c.api_key || c.api_key->empty())) {
    throw ConfigError(where + ": api key required but not set (api_key or " + env_name + ")");
  }
  c.top_logprobs_k = get_or(j, "top_logprobs_k", c.top_logprobs_k, where);
  c.max_parallel = get_or(j, "max_parallel", c.max_parallel, where);
  const auto timeout_ms = get_or<std::int64_t>(j, "timeout_ms", c.timeout.count(), where);
  c.timeout = std::chrono::milliseconds(timeout_ms);
  if (j.contains("retry")) {
    const json& r = j.at("retry");
    check_keys(r, {"max_attempts", "backoff_base_ms"}, where + ".retry");
    c.retry.max_attempts = get_or(r, "max_attempts", c.retry.max_attempts, where + ".retry");
    c.retry.backoff_base = std::chrono::milliseconds(get_or<std::int64_t>(
        r, "backoff_base_ms", c.retry.backoff_base.count(), where + ".retry"));
  }
  c.logprobs_post_temperature =
      get_or(j, "logprobs_post_temperature", c.logprobs_post_temperature, where);
  c.supports_logit_bias = get_or(j, "supports_logit_bias", c.supports_logit_bias, where);
  const auto ids = get_or<std::string>(j, "token_ids", "hash", where);
  if (ids == "hash") {
    c.token_ids = client::TokenIdMode::kHash;
  } else if (ids == "token_id_prefix") {
    c.token_ids = client::TokenIdMode::kTokenIdPrefix;
  } else {
    throw ConfigError(where + ".token_ids: expected \"hash\" or \"token_id_prefix\"");
  }
  c.prompt_template = get_or(j, "prompt_template", c.prompt_template, where);

  if (c.base_url.rfind("http://", 0) != 0 && c.base_url.rfind("https://", 0) != 0) {
    throw ConfigError(where + ".base_url: expected an http:// or https:// URL");
  }
  if (c.model_name.empty()) throw ConfigError(where + ".model_name: must not be empty");
  if (c.top_logprobs_k < 1) throw ConfigError(where + ".top_logprobs_k: must be >= 1");
  if (c.max_parallel < 1) throw ConfigError(where + ".max_parallel: must be >= 1");
  if (timeout_ms <= 0) throw ConfigError(where + ".timeout_ms: must be > 0");
  if (c.retry.max_attempts < 1) throw ConfigError(where + ".retry.max_attempts: must be >= 1");
  if (c.retry.backoff_base.count() < 0) {
    throw ConfigError(where + ".retry.backoff_base_ms: must be >= 0");
  }
  if (c.prompt_template.find("{prompt}") == std::string::npos) {
    throw ConfigError(where + ".prompt_template: must contain {prompt}");
  }
  return c;
}

// ---------------------------------------------------------------------------
// Shared helpers

void emit(const std::string& path, const std::string& contents, std::ostream& out) {
  if (path.empty()) {
    out << contents;
  } else {
    report::write_text_file(path, contents);
  }
}

std::string with_extension(const std::string& path, const std::string& ext) {
  return std::filesystem::path(path).replace_extension(ext).string();
}

// SVG path: explicit flag wins; otherwise derived from the CSV path; none when
// the CSV goes to stdout.
std::string plot_path(bool no_plot, const std::string& svg, const std::string& out) {
  if (no_plot) return {};
  if (!svg.empty()) return svg;
  if (!out.empty()) return with_extension(out, ".svg");
  return {};
}

std::string csv_line(const std::vector<std::string>& fields) {
  std::ostringstream os;
  report::write_csv_row(os, fields);
  return os.str();
}

std::vector<SequenceTrace> load_traces(const std::vector<std::string>& paths,
                                       RunManifest* manifest = nullptr) {
  std::vector<SequenceTrace> all;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    TraceFile file = read_traces_file(paths[i]);
    if (i == 0 && manifest != nullptr) *manifest = file.manifest;
    for (auto& t : file.traces) all.push_back(std::move(t));
  }
  return all;
}

std::map<std::string, PromptCase> load_prompts(const std::vector<std::string>& paths) {
  std::map<std::string, PromptCase> prompts;
  for (const auto& path : paths) {
    for (auto& p : read_prompts_file(path)) {
      const std::string id = p.prompt_id;
      if (!prompts.emplace(id, std::move(p)).second) {
        throw ValidationError("duplicate prompt_id " + id + " in " + path);
      }
    }
  }
  return prompts;
}

std::vector<PromptCase> load_prompt_list(const std::vector<std::string>& paths) {
  std::vector<PromptCase> prompts;
  for (const auto& path : paths) {
    for (auto& p : read_prompts_file(path)) prompts.push_back(std::move(p));
  }
  return prompts;
}

// Factor levels of a prompt. A positive complexity_C shows up as factor "C"
// unless the prompt already names one.
std::map<std::string, std::string> factors_of(const PromptCase& prompt) {
  auto factors = prompt.factors;
  if (prompt.complexity > 0 && factors.count("C") == 0) {
    factors["C"] = std::to_string(prompt.complexity);
  }
  return factors;
}

PromptCase prompt_for(const std::map<std::string, PromptCase>& prompts, const std::string& id) {
  auto it = prompts.find(id);
  if (it != prompts.end()) return it->second;
  PromptCase p;
  p.prompt_id = id;
  return p;
}

std::map<std::string, std::vector<SequenceTrace>> by_prompt(std::vector<SequenceTrace> traces) {
  std::map<std::string, std::vector<SequenceTrace>> groups;
  for (auto& t : traces) groups[t.prompt_id].push_back(std::move(t));
  for (auto& [id, group] : groups) {
    std::stable_sort(group.begin(), group.end(), [](const auto& a, const auto& b) {
      return a.sample_index < b.sample_index;
    });
  }
  return groups;
}

DecodingParams shared_decoding(std::span<const SequenceTrace> traces, const std::string& label) {
  if (traces.empty()) throw EstimationError(label + ": no traces");
  DecodingParams params = traces.front().decoding;
  for (const auto& t : traces) {
    if (t.decoding.temperature != params.temperature ||
        t.decoding.nucleus_p != params.nucleus_p) {
      throw ValidationError(label + ": traces use different decoding parameters");
    }
  }
  return params;
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string s;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i > 0) s += sep;
    s += parts[i];
  }
  return s;
}

double parse_double(const std::string& text, const std::string& what, std::size_t line) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) {
    throw ParseError(what + ": not a number: '" + text + "'", line);
  }
  return v;
}

SyntheticProcess load_process(const std::string& source) {
  if (source.rfind("uniform:", 0) == 0) {
    const std::string k = source.substr(8);
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(k, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != k.size()) throw ConfigError("bad process description: " + source);
    return SyntheticProcess::uniform(v);
  }
  ojson j;
  try {
    if (!source.empty() && source.front() == '{') {
      j = ojson::parse(source);
    } else {
      std::ifstream in(source);
      if (!in) throw ConfigError("cannot open process file " + source);
      j = ojson::parse(in);
    }
  } catch (const ojson::parse_error& e) {
    throw ConfigError("process description is not valid JSON: " + std::string(e.what()));
  }
  return SyntheticProcess::from_json(j);
}

std::function<std::string(const std::string&)> make_extractor(const std::string& pattern) {
  if (pattern.empty()) return [](const std::string& s) { return s; };
  std::regex re;
  try {
    re = std::regex(pattern);
  } catch (const std::regex_error& e) {
    throw ConfigError("bad --extract pattern: " + std::string(e.what()));
  }
  return [re](const std::string& s) -> std::string {
    std::smatch m;
    if (!std::regex_search(s, m, re)) return "";
    return m.size() > 1 && m[1].matched ? m[1].str() : m[0].str();
  };
}

RunManifest make_manifest(const RunConfig& config, const client::EndpointConfig& endpoint,
                          int sample_count) {
  RunManifest m;
  m.model_name = endpoint.model_name;
  m.endpoint = endpoint.base_url;
  m.sample_count = std::max(1, sample_count);
  m.decoding = config.decoding;
  m.factor_domains = config.factor_domains;
  m.created_at = config.created_at;
  return m;
}

const client::EndpointConfig& require_endpoint(const std::optional<client::EndpointConfig>& e,
                                               const char* key) {
  if (!e) throw ConfigError(std::string("config: '") + key + "' is required for this command");
  return *e;
}

ojson errors_json(const std::vector<ojson>& errors) {
  ojson doc = ojson::object();
  doc["errors"] = ojson::array();
  for (const auto& e : errors) doc["errors"].push_back(e);
  return doc;
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::string process = "uniform:6";
  int length = 400;
  int samples = 50;
  std::uint64_t seed = 0;
  std::string prompt_id = "synthetic";
  std::string task = "synthetic";
  std::vector<std::string> factors;
  std::string cases;
  std::string out;
  std::string prompts_out;
};

struct SynthCase {
  PromptCase prompt;
  std::string process;
  ojson process_json;
  int length = 0;
  int samples = 0;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  std::vector<SynthCase> cases;
  if (a.cases.empty()) {
    SynthCase c;
    c.prompt.prompt_id = a.prompt_id;
    c.prompt.task = a.task;
    for (const auto& kv : a.factors) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos || eq == 0) throw ConfigError("--factor expects KEY=VALUE");
      c.prompt.factors[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    c.process = a.process;
    c.length = a.length;
    c.samples = a.samples;
    cases.push_back(std::move(c));
  } else {
    std::ifstream in(a.cases);
    if (!in) throw ConfigError("cannot open " + a.cases);
    ojson doc;
    try {
      doc = ojson::parse(in);
    } catch (const ojson::parse_error& e) {
      throw ConfigError(a.cases + ": " + e.what());
    }
    if (!doc.is_array() || doc.empty()) throw ConfigError(a.cases + ": expected a JSON array");
    for (std::size_t i = 0; i < doc.size(); ++i) {
      const json j = doc[i];
      const std::string where = "cases[" + std::to_string(i) + "]";
      check_keys(j,
                 {"prompt_id", "prompt_text", "task", "complexity_C", "factors", "process",
                  "length", "samples"},
                 where);
      SynthCase c;
      c.prompt.prompt_id = get_required<std::string>(j, "prompt_id", where);
      c.prompt.prompt_text = get_or<std::string>(j, "prompt_text", "", where);
      c.prompt.task = get_or<std::string>(j, "task", a.task, where);
      c.prompt.complexity = get_or(j, "complexity_C", 0, where);
      c.prompt.factors =
          get_or<std::map<std::string, std::string>>(j, "factors", {}, where);
      if (doc[i].contains("process")) {
        c.process_json = doc[i]["process"];
      } else {
        c.process = a.process;
      }
      c.length = get_or(j, "length", a.length, where);
      c.samples = get_or(j, "samples", a.samples, where);
      cases.push_back(std::move(c));
    }
  }

  RunManifest manifest;
  manifest.model_name = "synthetic";
  manifest.decoding.seed = static_cast<std::int64_t>(a.seed);
  std::vector<SequenceTrace> traces;
  std::vector<PromptCase> prompts;
  std::map<std::string, std::set<std::string>> domains;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto& c = cases[i];
    const SyntheticProcess process =
        c.process_json.is_null() ? load_process(c.process) : SyntheticProcess::from_json(c.process_json);
    auto batch = sample_traces(process, c.length, c.samples, a.seed + i, c.prompt.prompt_id);
    manifest.sample_count = std::max(manifest.sample_count, c.samples);
    for (auto& t : batch) traces.push_back(std::move(t));
    for (const auto& [k, v] : c.prompt.factors) domains[k].insert(v);
    prompts.push_back(c.prompt);
  }
  for (const auto& [k, levels] : domains) {
    manifest.factor_domains[k] = std::vector<std::string>(levels.begin(), levels.end());
  }

  std::ostringstream os;
  write_traces(os, manifest, traces);
  emit(a.out, os.str(), out);
  if (!a.prompts_out.empty()) {
    std::ostringstream ps;
    write_prompts(ps, prompts);
    report::write_text_file(a.prompts_out, ps.str());
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// sample

struct SampleArgs {
  std::string config;
  std::vector<std::string> prompts;
  std::string out;
  int samples = -1;
};

int cmd_sample(const SampleArgs& a, std::ostream& out, std::ostream& err) {
  const RunConfig config = load_run_config(a.config);
  const auto& endpoint = require_endpoint(config.endpoint, "endpoint");
  const int m = a.samples >= 0 ? a.samples : config.sampling.samples;
  const std::string path =
      a.out.empty() ? (std::filesystem::path(config.output_dir) / "traces.jsonl").string() : a.out;
  const auto prompts = load_prompt_list(a.prompts);

  std::vector<SequenceTrace> traces;
  std::vector<ojson> errors;
  client::SeedPolicy seeds{config.decoding.seed, config.sampling.send_seed};
  for (const auto& prompt : prompts) {
    auto result = client::sample_completions(endpoint, prompt, config.decoding, m,
                                             config.sampling.max_tokens, seeds);
    for (auto& t : result.traces) traces.push_back(std::move(t));
    for (const auto& e : result.errors) {
      ojson row = ojson::object();
      row["prompt_id"] = prompt.prompt_id;
      row["sample_index"] = e.sample_index;
      row["attempts"] = e.attempts;
      row["message"] = e.message;
      errors.push_back(std::move(row));
    }
  }

  std::ostringstream os;
  write_traces(os, make_manifest(config, endpoint, m), traces);
  report::write_text_file(path, os.str());

  double total_len = 0.0;
  double coverage = 0.0;
  std::size_t steps = 0;
  for (const auto& t : traces) {
    total_len += static_cast<double>(t.steps.size());
    for (const auto& s : t.steps) coverage += s.coverage_mass;
    steps += t.steps.size();
  }
  out << "traces=" << traces.size() << " mean_len="
      << format_number(traces.empty() ? 0.0 : total_len / static_cast<double>(traces.size()))
      << " coverage=" << format_number(steps == 0 ? 0.0 : coverage / static_cast<double>(steps))
      << " errors=" << errors.size() << "\n";

  if (errors.empty()) return kExitOk;
  const std::string error_path = path + ".errors.json";
  report::write_text_file(error_path, errors_json(errors).dump(2) + "\n");
  err << "error: " << errors.size() << " sample(s) failed; see " << error_path << "\n";
  return traces.empty() ? kExitEndpoint : kExitPartial;
}

// ---------------------------------------------------------------------------
// bf

struct BfArgs {
  std::vector<std::string> traces;
  std::vector<std::string> prompts;
  std::string estimator = "entropy";
  std::vector<std::string> group_by;
  bool exclude_degraded = false;
  std::string out;
  std::string json_out;
};

struct Instance {
  PromptCase prompt;
  BfEstimate estimate;
};

void report_degraded(const std::map<std::string, std::vector<SequenceTrace>>& groups,
                     std::ostream& err) {
  int degraded = 0;
  int total = 0;
  int traces = 0;
  for (const auto& [id, group] : groups) {
    const DecodingParams params = shared_decoding(group, id);
    degraded += count_degraded_steps(group, params);
    for (const auto& t : group) total += static_cast<int>(t.steps.size());
    traces += static_cast<int>(group.size());
  }
  err << "degraded_steps=" << degraded << " total_steps=" << total << " traces=" << traces
      << "\n";
}

int cmd_bf(const BfArgs& a, std::ostream& out, std::ostream& err) {
  const Estimator estimator = estimator_from_string(a.estimator);
  const auto prompts = load_prompts(a.prompts);
  const auto groups = by_prompt(load_traces(a.traces));
  for (const auto& g : a.group_by) {
    if (g == "prompt_id") throw ConfigError("--group-by prompt_id is the default row layout");
  }

  BfOptions options;
  options.on_degraded =
      a.exclude_degraded ? DegradedPolicy::kExcludeTrace : DegradedPolicy::kThrow;
  std::vector<Instance> instances;
  for (const auto& [id, group] : groups) {
    try {
      instances.push_back(
          {prompt_for(prompts, id), estimate_bf(estimator, group, shared_decoding(group, id), options)});
    } catch (const EstimationError& e) {
      if (estimator == Estimator::kNll && !a.exclude_degraded) {
        err << "error: " << e.what() << "\n";
        report_degraded(groups, err);
        return kExitEstimation;
      }
      err << "warning: skipping " << id << ": " << e.what() << "\n";
    }
  }
  if (instances.empty()) {
    err << "error: no instance has a usable trace\n";
    report_degraded(groups, err);
    return kExitEstimation;
  }

  std::vector<std::string> header{"prompt_id", "task"};
  std::vector<std::vector<std::string>> rows;
  if (a.group_by.empty()) {
    std::set<std::string> factor_names;
    for (const auto& inst : instances) {
      for (const auto& [k, v] : factors_of(inst.prompt)) factor_names.insert(k);
    }
    header.insert(header.end(), factor_names.begin(), factor_names.end());
    for (const auto& inst : instances) {
      const auto factors = factors_of(inst.prompt);
      std::vector<std::string> row{inst.prompt.prompt_id, inst.prompt.task};
      for (const auto& f : factor_names) {
        auto it = factors.find(f);
        row.push_back(it == factors.end() ? "" : it->second);
      }
      row.push_back(to_string(estimator));
      row.push_back(format_number(inst.estimate.value));
      row.push_back(std::to_string(inst.estimate.n_sequences));
      row.push_back(format_number(inst.estimate.mean_seq_length));
      row.push_back(format_number(inst.estimate.coverage_summary));
      rows.push_back(std::move(row));
    }
  } else {
    const bool by_task =
        std::find(a.group_by.begin(), a.group_by.end(), "task") != a.group_by.end();
    std::vector<std::string> factor_keys;
    for (const auto& g : a.group_by) {
      if (g != "task") factor_keys.push_back(g);
    }
    header.insert(header.end(), factor_keys.begin(), factor_keys.end());
    std::map<std::vector<std::string>, std::vector<const Instance*>> grouped;
    for (const auto& inst : instances) {
      const auto factors = factors_of(inst.prompt);
      std::vector<std::string> key;
      if (by_task) key.push_back(inst.prompt.task);
      for (const auto& f : factor_keys) {
        auto it = factors.find(f);
        key.push_back(it == factors.end() ? "" : it->second);
      }
      grouped[key].push_back(&inst);
    }
    for (const auto& [key, members] : grouped) {
      std::vector<std::pair<PromptCase, BfEstimate>> pairs;
      std::set<std::string> tasks;
      double n = 0.0, len = 0.0, cov = 0.0;
      for (const auto* inst : members) {
        pairs.emplace_back(inst->prompt, inst->estimate);
        tasks.insert(inst->prompt.task);
        const double w = inst->estimate.n_sequences;
        n += w;
        len += w * inst->estimate.mean_seq_length;
        cov += w * inst->estimate.coverage_summary;
      }
      std::vector<std::string> row{"*", by_task ? key.front()
                                                : join({tasks.begin(), tasks.end()}, "|")};
      row.insert(row.end(), key.begin() + (by_task ? 1 : 0), key.end());
      row.push_back(to_string(estimator));
      row.push_back(format_number(bf_task(pairs)));
      row.push_back(format_number(n));
      row.push_back(format_number(n > 0 ? len / n : 0.0));
      row.push_back(format_number(n > 0 ? cov / n : 0.0));
      rows.push_back(std::move(row));
    }
  }
  for (const char* col : {"estimator", "bf", "n_sequences", "mean_len", "coverage"}) {
    header.push_back(col);
  }

  std::string csv = csv_line(header);
  for (const auto& row : rows) csv += csv_line(row);
  emit(a.out, csv, out);

  if (!a.json_out.empty()) {
    ojson doc = ojson::array();
    for (const auto& row : rows) {
      ojson obj = ojson::object();
      for (std::size_t i = 0; i < header.size(); ++i) {
        const std::string& h = header[i];
        if (h == "bf" || h == "mean_len" || h == "coverage" || h == "n_sequences") {
          obj[h] = std::stod(row[i]);
        } else {
          obj[h] = row[i];
        }
      }
      doc.push_back(std::move(obj));
    }
    report::write_text_file(a.json_out, doc.dump(2) + "\n");
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// trajectory

struct TrajectoryArgs {
  std::vector<std::string> traces;
  std::vector<std::string> prompts;
  int window = 5;
  double alpha = 0.1;
  std::string estimator = "entropy";
  std::string group_by = "all";
  std::string out;
  std::string svg;
  bool no_plot = false;
};

int cmd_trajectory(const TrajectoryArgs& a, std::ostream& out) {
  if (a.window < 1) throw ParameterError("--window must be >= 1");
  if (!(a.alpha > 0.0 && a.alpha <= 1.0)) throw ParameterError("--alpha must be in (0, 1]");
  const Estimator estimator = estimator_from_string(a.estimator);
  const auto prompts = load_prompts(a.prompts);

  std::map<std::string, std::vector<SequenceTrace>> groups;
  for (auto& t : load_traces(a.traces)) {
    std::string key;
    if (a.group_by == "all") {
      key = "all";
    } else if (a.group_by == "prompt_id") {
      key = t.prompt_id;
    } else if (a.group_by == "task") {
      key = prompt_for(prompts, t.prompt_id).task;
    } else {
      const auto factors = factors_of(prompt_for(prompts, t.prompt_id));
      auto it = factors.find(a.group_by);
      key = it == factors.end() ? "" : it->second;
    }
    groups[key].push_back(std::move(t));
  }

  std::string csv = "# window=" + std::to_string(a.window) + " alpha=" + format_number(a.alpha) +
                    " estimator=" + to_string(estimator) + "\n";
  csv += "group,window_start,bf_raw,bf_ema,n_steps\n";
  std::vector<report::Series> series;
  for (auto& [key, group] : groups) {
    std::stable_sort(group.begin(), group.end(), [](const auto& x, const auto& y) {
      return std::tie(x.prompt_id, x.sample_index) < std::tie(y.prompt_id, y.sample_index);
    });
    const auto points =
        bf_trajectory(group, shared_decoding(group, key), a.window, estimator, a.alpha);
    report::Series raw{key + " raw", {}, {}, false};
    report::Series smooth{key + " ema", {}, {}, true};
    for (const auto& p : points) {
      csv += csv_line({key, std::to_string(p.window_start), format_number(p.bf_raw),
                       format_number(p.bf_ema), std::to_string(p.n_steps)});
      raw.x.push_back(p.window_start);
      raw.y.push_back(p.bf_raw);
      smooth.x.push_back(p.window_start);
      smooth.y.push_back(p.bf_ema);
    }
    series.push_back(std::move(raw));
    series.push_back(std::move(smooth));
  }
  emit(a.out, csv, out);
  const std::string svg = plot_path(a.no_plot, a.svg, a.out);
  if (!svg.empty()) {
    report::write_text_file(svg, report::line_chart("BF trajectory", "output position", "BF",
                                                    series));
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// pareto

struct ParetoArgs {
  std::string table;
  std::vector<std::string> factors;
  bool matched = false;
  std::string out;
  std::string svg;
  bool no_plot = false;
};

int cmd_pareto(const ParetoArgs& a, std::ostream& out) {
  const report::CsvTable csv = report::read_csv_file(a.table);
  const int bf_col = csv.column("bf");
  if (bf_col < 0) throw ConfigError(a.table + ": missing 'bf' column");

  std::vector<std::string> factors = a.factors;
  if (factors.empty()) {
    const int task = csv.column("task");
    const int est = csv.column("estimator");
    if (task >= 0 && est > task) {
      factors.assign(csv.header.begin() + task + 1, csv.header.begin() + est);
    } else {
      static const std::set<std::string> known{"prompt_id", "task",     "estimator", "bf",
                                               "n_sequences", "mean_len", "coverage"};
      for (const auto& h : csv.header) {
        if (known.count(h) == 0) factors.push_back(h);
      }
    }
  }
  if (factors.empty()) throw ConfigError(a.table + ": no factor columns");

  FactorTable table;
  std::map<std::string, std::set<std::string>> domains;
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    FactorRow row;
    row.bf = parse_double(csv.rows[r][bf_col], "bf", r + 2);
    for (const auto& f : factors) {
      const int col = csv.column(f);
      if (col < 0) throw ConfigError(a.table + ": no column named '" + f + "'");
      row.levels[f] = csv.rows[r][col];
      domains[f].insert(csv.rows[r][col]);
    }
    table.rows.push_back(std::move(row));
  }
  for (const auto& [f, levels] : domains) {
    table.factor_domains[f] = std::vector<std::string>(levels.begin(), levels.end());
  }

  const ParetoReport rep =
      pareto_impacts(table, a.matched ? ParetoMode::kMatched : ParetoMode::kMarginal);
  std::vector<std::pair<std::string, double>> order;
  for (const auto& f : factors) order.emplace_back(f, rep.raw_impacts.at(f));
  std::stable_sort(order.begin(), order.end(),
                   [](const auto& x, const auto& y) { return x.second > y.second; });

  std::string text = "factor,impact_raw,impact_normalized\n";
  std::vector<std::pair<std::string, double>> bars;
  for (const auto& [f, raw] : order) {
    auto it = rep.normalized.find(f);
    const double norm = it == rep.normalized.end() ? 0.0 : it->second;
    text += csv_line({f, format_number(raw), format_number(norm)});
    bars.emplace_back(f, norm);
  }
  emit(a.out, text, out);
  const std::string svg = plot_path(a.no_plot, a.svg, a.out);
  if (!svg.empty()) {
    report::write_text_file(svg, report::bar_chart("Pareto impact on BF", "normalized impact",
                                                   bars));
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// majority

struct MajorityArgs {
  std::string votes;
  std::vector<int> ks{1, 3, 8, 16};
  int trials = 100;
  int samples_per_trial = 64;
  std::uint64_t seed = 0;
  std::string extract;
  std::string out;
};

std::vector<VoteInstance> load_votes(const std::string& path) {
  std::vector<VoteInstance> pool;
  if (std::filesystem::path(path).extension() == ".csv") {
    const auto csv = report::read_csv_file(path);
    const int id = csv.column("id");
    const int gold = csv.column("gold");
    const int answer = csv.column("answer");
    if (id < 0 || gold < 0 || answer < 0) {
      throw ConfigError(path + ": vote CSV needs columns id, gold, answer");
    }
    std::map<std::string, std::size_t> index;
    for (const auto& row : csv.rows) {
      auto [it, fresh] = index.emplace(row[id], pool.size());
      if (fresh) pool.push_back({row[id], row[gold], {}});
      if (pool[it->second].gold != row[gold]) {
        throw ValidationError(path + ": instance " + row[id] + " has conflicting gold answers");
      }
      pool[it->second].answers.push_back(row[answer]);
    }
    return pool;
  }
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": " + e.what(), 0);
  }
  if (doc.is_object() && doc.contains("instances")) doc = doc["instances"];
  if (!doc.is_array()) throw ConfigError(path + ": expected an array of vote instances");
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const std::string where = path + "[" + std::to_string(i) + "]";
    check_keys(doc[i], {"id", "gold", "answers"}, where);
    VoteInstance v;
    v.id = get_required<std::string>(doc[i], "id", where);
    v.gold = get_required<std::string>(doc[i], "gold", where);
    v.answers = get_required<std::vector<std::string>>(doc[i], "answers", where);
    pool.push_back(std::move(v));
  }
  return pool;
}

int cmd_majority(const MajorityArgs& a, std::ostream& out) {
  auto pool = load_votes(a.votes);
  const auto extract = make_extractor(a.extract);
  if (!a.extract.empty()) {
    for (auto& inst : pool) {
      for (auto& ans : inst.answers) ans = extract(ans);
    }
  }
  const auto stats = majority_at_k_std(pool, a.ks, a.trials, a.samples_per_trial, a.seed);
  std::string text = "# trials=" + std::to_string(a.trials) +
                     " samples_per_trial=" + std::to_string(a.samples_per_trial) +
                     " seed=" + std::to_string(a.seed) + "\n";
  text += "K,mean_acc,std\n";
  for (int k : a.ks) {
    const auto& s = stats.at(k);
    text += csv_line({std::to_string(k), format_number(s.mean_accuracy), format_number(s.std)});
  }
  emit(a.out, text, out);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// aep-verify

struct AepArgs {
  std::string process = "uniform:6";
  std::vector<int> checkpoints{50, 100, 200, 400};
  int samples = 500;
  double epsilon = 0.1;
  std::uint64_t seed = 0;
  std::string out;
  std::string svg;
  bool no_plot = false;
};

int cmd_aep_verify(const AepArgs& a, std::ostream& out) {
  if (!(a.epsilon > 0.0) || !std::isfinite(a.epsilon)) {
    throw ParameterError("--epsilon must be a positive number");
  }
  const SyntheticProcess process = load_process(a.process);
  const AepReport rep = aep_verify(process, a.checkpoints, a.samples, a.epsilon, a.seed);
  emit(a.out, rep.to_json().dump(2) + "\n", out);

  const std::string svg = plot_path(a.no_plot, a.svg, a.out);
  if (!svg.empty()) {
    report::Series s{"std of NLL/N", {}, {}, false};
    for (const auto& c : rep.checkpoints) {
      s.x.push_back(c.length);
      s.y.push_back(std::sqrt(c.var_logp) / c.length);
    }
    report::write_text_file(svg, report::line_chart("Length-averaged NLL dispersion",
                                                    "sequence length N", "std", {&s, 1}));
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// nudge

struct NudgeArgs {
  std::string config;
  std::vector<std::string> prompts;
  std::string out;
  std::string svg;
  bool no_plot = false;
  std::optional<double> gamma;
  std::optional<int> max_tokens;
};

int cmd_nudge(const NudgeArgs& a, std::ostream& out, std::ostream& err) {
  const RunConfig config = load_run_config(a.config);
  const auto& base = require_endpoint(config.endpoint, "endpoint");
  const auto& aligned = require_endpoint(config.aligned_endpoint, "aligned_endpoint");
  client::NudgeOptions options = config.nudge;
  if (a.gamma) options.gamma = *a.gamma;
  if (a.max_tokens) options.max_tokens = *a.max_tokens;

  std::string lines;
  std::vector<double> ratios;
  std::vector<ojson> errors;
  for (const auto& prompt : load_prompt_list(a.prompts)) {
    try {
      const auto rep = client::nudging_generate(base, aligned, prompt, config.decoding, options);
      ojson line = ojson::object();
      line["prompt_id"] = prompt.prompt_id;
      const ojson body = rep.to_json();
      for (const auto& [k, v] : body.items()) line[k] = v;
      lines += line.dump() + "\n";
      ratios.push_back(rep.nudging_ratio);
    } catch (const EndpointError& e) {
      ojson row = ojson::object();
      row["prompt_id"] = prompt.prompt_id;
      row["message"] = e.what();
      errors.push_back(std::move(row));
    }
  }
  emit(a.out, lines, out);
  const std::string svg = plot_path(a.no_plot, a.svg, a.out);
  if (!svg.empty()) {
    report::write_text_file(svg, report::histogram("Nudging ratio", "injected / total tokens",
                                                   ratios, 10, 0.0, 1.0));
  }
  if (errors.empty()) return kExitOk;
  const std::string error_path = (a.out.empty() ? std::string("nudge") : a.out) + ".errors.json";
  report::write_text_file(error_path, errors_json(errors).dump(2) + "\n");
  err << "error: " << errors.size() << " prompt(s) failed; see " << error_path << "\n";
  return ratios.empty() ? kExitEndpoint : kExitPartial;
}

// ---------------------------------------------------------------------------
// resample

struct ResampleArgs {
  std::string config;
  std::vector<std::string> prompts;
  std::vector<std::string> traces;
  std::vector<int> positions;
  int samples = -1;
  bool unconstrained = false;
  std::string extract;
  std::string out;
  std::string csv;
  std::string svg;
  bool no_plot = false;
};

int cmd_resample(const ResampleArgs& a, std::ostream& out, std::ostream& err) {
  const RunConfig config = load_run_config(a.config);
  const auto& endpoint = require_endpoint(config.endpoint, "endpoint");
  const auto prompts = load_prompts(a.prompts);
  auto originals = load_traces(a.traces);
  std::stable_sort(originals.begin(), originals.end(), [](const auto& x, const auto& y) {
    return std::tie(x.prompt_id, x.sample_index) < std::tie(y.prompt_id, y.sample_index);
  });
  const std::vector<int> positions = a.positions.empty() ? config.resample.positions : a.positions;
  const int m = a.samples >= 0 ? a.samples : config.resample.samples;
  client::ForkOptions options;
  options.constrained = config.resample.constrained && !a.unconstrained;
  options.max_rejections = config.resample.max_rejections;
  options.max_tokens = config.resample.max_tokens;
  const auto extract = make_extractor(a.extract);

  std::vector<SequenceTrace> forks;
  std::vector<ojson> errors;
  std::string summary = "fork_position,n_parents,n_forks,n_forced_fork_failed,n_errors,accuracy\n";
  std::vector<std::pair<std::string, double>> bars;
  bool any_accuracy = false;
  for (int pos : positions) {
    int parents = 0, ok = 0, forced = 0, failed = 0, evaluated = 0, correct = 0;
    for (const auto& original : originals) {
      if (pos < 1 || pos >= static_cast<int>(original.steps.size())) continue;
      auto it = prompts.find(original.prompt_id);
      if (it == prompts.end()) {
        throw ConfigError("no prompt record for prompt_id " + original.prompt_id);
      }
      ++parents;
      const auto results = client::resample_from_position(endpoint, it->second, original, pos,
                                                          original.decoding, m, options);
      for (const auto& r : results) {
        if (r.forced_fork_failed) {
          ++forced;
        } else if (!r.trace) {
          ++failed;
          ojson row = ojson::object();
          row["prompt_id"] = original.prompt_id;
          row["parent_sample_index"] = original.sample_index;
          row["fork_position"] = pos;
          row["sample_index"] = r.sample_index;
          row["message"] = r.error;
          errors.push_back(std::move(row));
        } else {
          ++ok;
          if (!a.extract.empty() && it->second.gold_answer) {
            const std::string text = client::detokenize(original, pos) +
                                     client::detokenize(*r.trace, r.trace->steps.size());
            ++evaluated;
            if (extract(text) == *it->second.gold_answer) ++correct;
          }
          forks.push_back(*r.trace);
        }
      }
    }
    const double accuracy = evaluated > 0 ? static_cast<double>(correct) / evaluated : NAN;
    any_accuracy = any_accuracy || evaluated > 0;
    summary += csv_line({std::to_string(pos), std::to_string(parents), std::to_string(ok),
                         std::to_string(forced), std::to_string(failed), format_number(accuracy)});
    const int requested = ok + forced + failed;
    bars.emplace_back("pos " + std::to_string(pos),
                      evaluated > 0 ? accuracy
                                    : (requested > 0 ? static_cast<double>(ok) / requested : 0.0));
  }

  const std::string path = a.out.empty()
                               ? (std::filesystem::path(config.output_dir) / "forks.jsonl").string()
                               : a.out;
  std::ostringstream os;
  write_traces(os, make_manifest(config, endpoint, m), forks);
  report::write_text_file(path, os.str());
  emit(a.csv, summary, out);
  const std::string svg = plot_path(a.no_plot, a.svg, a.csv.empty() ? path : a.csv);
  if (!svg.empty()) {
    report::write_text_file(
        svg, report::bar_chart(any_accuracy ? "Resample accuracy" : "Resample fork success",
                               any_accuracy ? "accuracy" : "share of forks", bars));
  }
  if (errors.empty()) return kExitOk;
  const std::string error_path = path + ".errors.json";
  report::write_text_file(error_path, errors_json(errors).dump(2) + "\n");
  err << "error: " << errors.size() << " fork(s) failed; see " << error_path << "\n";
  return forks.empty() ? kExitEndpoint : kExitPartial;
}

// ---------------------------------------------------------------------------
// diversity, mink, correlate

struct DiversityArgs {
  std::string input;
  std::vector<std::string> traces;
  std::vector<int> ns{1, 2};
  std::string out;
};

int cmd_diversity(const DiversityArgs& a, std::ostream& out) {
  if (a.input.empty() == a.traces.empty()) {
    throw ConfigError("diversity: give exactly one of --input or --traces");
  }
  std::vector<std::vector<std::string>> texts;
  if (!a.input.empty()) {
    std::ifstream in(a.input);
    if (!in) throw ConfigError("cannot open " + a.input);
    std::string line;
    while (std::getline(in, line)) {
      std::istringstream words(line);
      std::vector<std::string> tokens;
      for (std::string w; words >> w;) tokens.push_back(w);
      if (!tokens.empty()) texts.push_back(std::move(tokens));
    }
  } else {
    for (const auto& t : load_traces(a.traces)) {
      std::vector<std::string> tokens;
      for (const auto& s : t.steps) {
        const auto* c = s.find_candidate(s.chosen_token_id);
        tokens.push_back(c != nullptr ? c->token_text : std::to_string(s.chosen_token_id));
      }
      texts.push_back(std::move(tokens));
    }
  }
  std::string text = "n,distinct_n\n";
  for (int n : a.ns) text += csv_line({std::to_string(n), format_number(distinct_n(texts, n))});
  emit(a.out, text, out);
  return kExitOk;
}

struct MinkArgs {
  std::vector<std::string> traces;
  double k = 20.0;
  std::string out;
};

int cmd_mink(const MinkArgs& a, std::ostream& out, std::ostream& err) {
  auto traces = load_traces(a.traces);
  std::stable_sort(traces.begin(), traces.end(), [](const auto& x, const auto& y) {
    return std::tie(x.prompt_id, x.sample_index) < std::tie(y.prompt_id, y.sample_index);
  });
  std::string text = "# k=" + format_number(a.k) + "\n";
  text += "prompt_id,sample_index,min_k_percent,n_tokens\n";
  for (const auto& t : traces) {
    std::vector<double> logprobs;
    for (const auto& s : t.steps) {
      if (const auto* c = s.find_candidate(s.chosen_token_id)) {
        logprobs.push_back(c->logprob_raw);
      } else if (s.chosen_logprob) {
        logprobs.push_back(*s.chosen_logprob);
      }
    }
    if (logprobs.empty()) {
      err << "warning: " << t.prompt_id << "#" << t.sample_index << " has no token logprobs\n";
      continue;
    }
    text += csv_line({t.prompt_id, std::to_string(t.sample_index),
                      format_number(min_k_percent(logprobs, a.k)),
                      std::to_string(logprobs.size())});
  }
  emit(a.out, text, out);
  return kExitOk;
}

struct CorrelateArgs {
  std::string input;
  std::vector<std::string> pairs;
  std::string out;
  std::string svg;
  bool no_plot = false;
};

int cmd_correlate(const CorrelateArgs& a, std::ostream& out, std::ostream& err) {
  const auto csv = report::read_csv_file(a.input);
  const int task_col = csv.column("task");
  const int model_col = csv.column("model");
  if (task_col < 0 || model_col < 0) throw ConfigError(a.input + ": needs task and model columns");
  std::vector<std::string> metrics;
  for (const auto& h : csv.header) {
    if (h != "task" && h != "model") metrics.push_back(h);
  }

  std::vector<std::pair<std::string, std::string>> pairs;
  if (a.pairs.empty()) {
    for (std::size_t i = 0; i < metrics.size(); ++i) {
      for (std::size_t j = i + 1; j < metrics.size(); ++j) pairs.emplace_back(metrics[i], metrics[j]);
    }
  } else {
    for (const auto& p : a.pairs) {
      const auto colon = p.find(':');
      if (colon == std::string::npos) throw ConfigError("--pairs expects X:Y, got " + p);
      pairs.emplace_back(p.substr(0, colon), p.substr(colon + 1));
      for (const auto& name : {pairs.back().first, pairs.back().second}) {
        if (csv.column(name) < 0) throw ConfigError(a.input + ": no column named '" + name + "'");
      }
    }
  }
  if (pairs.empty()) throw ConfigError(a.input + ": need at least two metric columns");

  std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> groups;
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    groups[{csv.rows[r][task_col], csv.rows[r][model_col]}].push_back(r);
  }

  std::string text = "task,model,metric_pair,signed_r2,spearman\n";
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
  for (const auto& [x, y] : pairs) col_labels.push_back(x + ":" + y);
  std::vector<std::vector<double>> cells;
  for (const auto& [key, rows] : groups) {
    row_labels.push_back(key.first + "/" + key.second);
    cells.emplace_back();
    for (const auto& [x, y] : pairs) {
      std::vector<double> xs, ys;
      for (std::size_t r : rows) {
        xs.push_back(parse_double(csv.rows[r][csv.column(x)], x, r + 2));
        ys.push_back(parse_double(csv.rows[r][csv.column(y)], y, r + 2));
      }
      double r2 = NAN, rho = NAN;
      try {
        r2 = signed_r2(xs, ys);
      } catch (const Error& e) {
        err << "warning: " << key.first << "/" << key.second << " " << x << ":" << y
            << " signed_r2: " << e.what() << "\n";
      }
      try {
        rho = spearman(xs, ys);
      } catch (const Error& e) {
        err << "warning: " << key.first << "/" << key.second << " " << x << ":" << y
            << " spearman: " << e.what() << "\n";
      }
      text += csv_line({key.first, key.second, x + ":" + y, format_number(r2), format_number(rho)});
      cells.back().push_back(rho);
    }
  }
  emit(a.out, text, out);
  const std::string svg = plot_path(a.no_plot, a.svg, a.out);
  if (!svg.empty()) {
    report::write_text_file(svg, report::heatmap("Spearman correlation", row_labels, col_labels,
                                                 cells));
  }
  return kExitOk;
}

}  // namespace

// ---------------------------------------------------------------------------

int exit_code_for(const std::exception& error) {
  if (dynamic_cast<const EndpointError*>(&error) != nullptr ||
      dynamic_cast<const CapabilityError*>(&error) != nullptr) {
    return kExitEndpoint;
  }
  if (dynamic_cast<const EstimationError*>(&error) != nullptr) return kExitEstimation;
  if (dynamic_cast<const Error*>(&error) != nullptr ||
      dynamic_cast<const nlohmann::json::exception*>(&error) != nullptr ||
      dynamic_cast<const std::regex_error*>(&error) != nullptr) {
    return kExitConfig;
  }
  return kExitPartial;
}

std::optional<std::string> process_env(const std::string& name) {
  if (const char* v = std::getenv(name.c_str())) return std::string(v);
  return std::nullopt;
}

RunConfig parse_run_config(const nlohmann::json& j, const EnvLookup& env) {
  const std::string where = "config";
  check_keys(j,
             {"endpoint", "aligned_endpoint", "decoding", "sampling", "factor_domains",
              "estimator", "seed", "output_dir", "created_at", "nudge", "resample"},
             where);
  RunConfig c;
  if (j.contains("endpoint")) {
    c.endpoint = parse_endpoint(j.at("endpoint"), "config.endpoint", env("BFKIT_API_KEY"),
                                "BFKIT_API_KEY");
  }
  if (j.contains("aligned_endpoint")) {
    c.aligned_endpoint = parse_endpoint(j.at("aligned_endpoint"), "config.aligned_endpoint",
                                        env("BFKIT_ALIGNED_API_KEY"), "BFKIT_ALIGNED_API_KEY");
  }
  if (j.contains("decoding")) {
    const json& d = j.at("decoding");
    check_keys(d, {"temperature", "nucleus_p", "seed"}, "config.decoding");
    c.decoding.temperature = get_or(d, "temperature", 1.0, "config.decoding");
    c.decoding.nucleus_p = get_or(d, "nucleus_p", 1.0, "config.decoding");
    c.decoding.seed = get_or<std::int64_t>(d, "seed", 0, "config.decoding");
    if (!(c.decoding.temperature > 0.0)) throw ConfigError("config.decoding.temperature: must be > 0");
    if (!(c.decoding.nucleus_p > 0.0 && c.decoding.nucleus_p <= 1.0)) {
      throw ConfigError("config.decoding.nucleus_p: must be in (0, 1]");
    }
  }
  if (j.contains("sampling")) {
    const json& s = j.at("sampling");
    check_keys(s, {"samples", "max_tokens", "send_seed"}, "config.sampling");
    c.sampling.samples = get_or(s, "samples", c.sampling.samples, "config.sampling");
    c.sampling.max_tokens = get_or(s, "max_tokens", c.sampling.max_tokens, "config.sampling");
    c.sampling.send_seed = get_or(s, "send_seed", c.sampling.send_seed, "config.sampling");
    if (c.sampling.samples < 0) throw ConfigError("config.sampling.samples: must be >= 0");
    if (c.sampling.max_tokens < 1) throw ConfigError("config.sampling.max_tokens: must be >= 1");
  }
  c.factor_domains = get_or<std::map<std::string, std::vector<std::string>>>(
      j, "factor_domains", {}, where);
  try {
    c.estimator = estimator_from_string(get_or<std::string>(j, "estimator", "entropy", where));
  } catch (const Error& e) {
    throw ConfigError("config.estimator: " + std::string(e.what()));
  }
  c.seed = get_or<std::uint64_t>(j, "seed", 0, where);
  c.output_dir = get_or<std::string>(j, "output_dir", ".", where);
  c.created_at = get_or<std::string>(j, "created_at", "", where);
  if (j.contains("nudge")) {
    const json& n = j.at("nudge");
    check_keys(n, {"gamma", "max_tokens", "max_word_tokens"}, "config.nudge");
    c.nudge.gamma = get_or(n, "gamma", c.nudge.gamma, "config.nudge");
    c.nudge.max_tokens = get_or(n, "max_tokens", c.nudge.max_tokens, "config.nudge");
    c.nudge.max_word_tokens = get_or(n, "max_word_tokens", c.nudge.max_word_tokens, "config.nudge");
    if (!(c.nudge.gamma > 0.0 && c.nudge.gamma < 1.0)) {
      throw ConfigError("config.nudge.gamma: must be in (0, 1)");
    }
    if (c.nudge.max_tokens < 1 || c.nudge.max_word_tokens < 1) {
      throw ConfigError("config.nudge: token limits must be >= 1");
    }
  }
  if (j.contains("resample")) {
    const json& r = j.at("resample");
    const std::string rw = "config.resample";
    check_keys(r, {"positions", "samples", "constrained", "max_rejections", "max_tokens"}, rw);
    c.resample.positions = get_or(r, "positions", c.resample.positions, rw);
    c.resample.samples = get_or(r, "samples", c.resample.samples, rw);
    c.resample.constrained = get_or(r, "constrained", c.resample.constrained, rw);
    c.resample.max_rejections = get_or(r, "max_rejections", c.resample.max_rejections, rw);
    c.resample.max_tokens = get_or(r, "max_tokens", c.resample.max_tokens, rw);
    for (int p : c.resample.positions) {
      if (p < 1) throw ConfigError(rw + ".positions: must be >= 1");
    }
    if (c.resample.samples < 0 || c.resample.max_rejections < 1 || c.resample.max_tokens < 1) {
      throw ConfigError(rw + ": counts out of range");
    }
  }
  return c;
}

RunConfig load_run_config(const std::string& path, const EnvLookup& env) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return parse_run_config(doc, env);
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Branching factor toolkit", "bfkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");
  std::vector<std::pair<CLI::App*, std::function<int()>>> commands;
  const auto estimators = CLI::IsMember({"entropy", "nll"});

  SynthArgs synth;
  {
    auto* c = app.add_subcommand("synth", "Sample oracle traces from a synthetic process");
    c->add_option("--process", synth.process, "uniform:K, inline JSON or a JSON file");
    c->add_option("--length,-N", synth.length, "tokens per trace");
    c->add_option("--samples,-M", synth.samples, "traces per case");
    c->add_option("--seed", synth.seed);
    c->add_option("--prompt-id", synth.prompt_id);
    c->add_option("--task", synth.task);
    c->add_option("--factor", synth.factors, "KEY=VALUE, repeatable");
    c->add_option("--cases", synth.cases, "JSON array of cases");
    c->add_option("--out,-o", synth.out, "trace JSONL (stdout if omitted)");
    c->add_option("--prompts-out", synth.prompts_out, "prompt JSONL");
    commands.emplace_back(c, [&] { return cmd_synth(synth, out); });
  }
  SampleArgs sample;
  {
    auto* c = app.add_subcommand("sample", "Sample traces from a completions endpoint");
    c->add_option("--config", sample.config)->required();
    c->add_option("--prompts", sample.prompts)->required();
    c->add_option("--out,-o", sample.out);
    c->add_option("--samples,-M", sample.samples, "override sampling.samples");
    commands.emplace_back(c, [&] { return cmd_sample(sample, out, err); });
  }
  BfArgs bf;
  {
    auto* c = app.add_subcommand("bf", "Per-instance and grouped BF report");
    c->add_option("--traces", bf.traces)->required();
    c->add_option("--prompts", bf.prompts);
    c->add_option("--estimator", bf.estimator)->check(estimators);
    c->add_option("--group-by", bf.group_by)->delimiter(',');
    c->add_flag("--exclude-degraded", bf.exclude_degraded);
    c->add_option("--out,-o", bf.out);
    c->add_option("--json", bf.json_out);
    commands.emplace_back(c, [&] { return cmd_bf(bf, out, err); });
  }
  TrajectoryArgs traj;
  {
    auto* c = app.add_subcommand("trajectory", "Windowed BF over output position");
    c->add_option("--traces", traj.traces)->required();
    c->add_option("--prompts", traj.prompts);
    c->add_option("--window", traj.window);
    c->add_option("--alpha", traj.alpha);
    c->add_option("--estimator", traj.estimator)->check(estimators);
    c->add_option("--group-by", traj.group_by, "all, prompt_id, task or a factor name");
    c->add_option("--out,-o", traj.out);
    c->add_option("--svg", traj.svg);
    c->add_flag("--no-plot", traj.no_plot);
    commands.emplace_back(c, [&] { return cmd_trajectory(traj, out); });
  }
  ParetoArgs pareto;
  {
    auto* c = app.add_subcommand("pareto", "Factor impact on BF");
    c->add_option("--table", pareto.table)->required();
    c->add_option("--factors", pareto.factors)->delimiter(',');
    c->add_flag("--matched", pareto.matched, "compare levels within matched settings");
    c->add_option("--out,-o", pareto.out);
    c->add_option("--svg", pareto.svg);
    c->add_flag("--no-plot", pareto.no_plot);
    commands.emplace_back(c, [&] { return cmd_pareto(pareto, out); });
  }
  MajorityArgs maj;
  {
    auto* c = app.add_subcommand("majority", "Majority@K bootstrap accuracy and std");
    c->add_option("--votes", maj.votes)->required();
    c->add_option("--ks", maj.ks)->delimiter(',');
    c->add_option("--trials", maj.trials);
    c->add_option("--samples-per-trial", maj.samples_per_trial);
    c->add_option("--seed", maj.seed);
    c->add_option("--extract", maj.extract, "regex; group 1 (or the match) is the answer");
    c->add_option("--out,-o", maj.out);
    commands.emplace_back(c, [&] { return cmd_majority(maj, out); });
  }
  AepArgs aep;
  {
    auto* c = app.add_subcommand("aep-verify", "Check NLL concentration on a synthetic process");
    c->add_option("--process", aep.process);
    c->add_option("--checkpoints", aep.checkpoints)->delimiter(',');
    c->add_option("--samples,-M", aep.samples);
    c->add_option("--epsilon", aep.epsilon);
    c->add_option("--seed", aep.seed);
    c->add_option("--out,-o", aep.out);
    c->add_option("--svg", aep.svg);
    c->add_flag("--no-plot", aep.no_plot);
    commands.emplace_back(c, [&] { return cmd_aep_verify(aep, out); });
  }
  NudgeArgs nudge;
  {
    auto* c = app.add_subcommand("nudge", "Base drafts, aligned model injects words");
    c->add_option("--config", nudge.config)->required();
    c->add_option("--prompts", nudge.prompts)->required();
    c->add_option("--gamma", nudge.gamma);
    c->add_option("--max-tokens", nudge.max_tokens);
    c->add_option("--out,-o", nudge.out);
    c->add_option("--svg", nudge.svg);
    c->add_flag("--no-plot", nudge.no_plot);
    commands.emplace_back(c, [&] { return cmd_nudge(nudge, out, err); });
  }
  ResampleArgs resample;
  {
    auto* c = app.add_subcommand("resample", "Fork continuations at fixed output positions");
    c->add_option("--config", resample.config)->required();
    c->add_option("--prompts", resample.prompts)->required();
    c->add_option("--traces", resample.traces)->required();
    c->add_option("--positions", resample.positions)->delimiter(',');
    c->add_option("--samples,-M", resample.samples);
    c->add_flag("--unconstrained", resample.unconstrained);
    c->add_option("--extract", resample.extract);
    c->add_option("--out,-o", resample.out, "forked trace JSONL");
    c->add_option("--csv", resample.csv, "per-position summary");
    c->add_option("--svg", resample.svg);
    c->add_flag("--no-plot", resample.no_plot);
    commands.emplace_back(c, [&] { return cmd_resample(resample, out, err); });
  }
  DiversityArgs div;
  {
    auto* c = app.add_subcommand("diversity", "Distinct-n over texts or traces");
    c->add_option("--input", div.input, "one text per line");
    c->add_option("--traces", div.traces);
    c->add_option("-n", div.ns)->delimiter(',');
    c->add_option("--out,-o", div.out);
    commands.emplace_back(c, [&] { return cmd_diversity(div, out); });
  }
  MinkArgs mink;
  {
    auto* c = app.add_subcommand("mink", "Min-K% token log-likelihood per trace");
    c->add_option("--traces", mink.traces)->required();
    c->add_option("-k,--k", mink.k);
    c->add_option("--out,-o", mink.out);
    commands.emplace_back(c, [&] { return cmd_mink(mink, out, err); });
  }
  CorrelateArgs corr;
  {
    auto* c = app.add_subcommand("correlate", "Signed R2 and Spearman between metric columns");
    c->add_option("--input", corr.input)->required();
    c->add_option("--pairs", corr.pairs)->delimiter(',');
    c->add_option("--out,-o", corr.out);
    c->add_option("--svg", corr.svg);
    c->add_flag("--no-plot", corr.no_plot);
    commands.emplace_back(c, [&] { return cmd_correlate(corr, out, err); });
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  for (const auto& [sub, action] : commands) {
    if (!sub->parsed()) continue;
    try {
      return action();
    } catch (const std::exception& e) {
      err << "error: " << e.what() << "\n";
      return exit_code_for(e);
    }
  }
  return kExitConfig;
}

}  // namespace bfkit::cli
