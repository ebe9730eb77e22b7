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

#include "bfkit/client.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <random>
#include <thread>

#include "bfkit/decoding.hpp"
#include "bfkit/error.hpp"
#include "httplib.h"

namespace bfkit::client {

using json = nlohmann::ordered_json;

namespace {

struct ParsedUrl {
  std::string origin;  // scheme://host:port
  std::string prefix;  // path prefix without trailing slash
};

ParsedUrl parse_base_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw ParameterError("base_url must include a scheme: " + url);
  }
  const auto path_start = url.find('/', scheme_end + 3);
  ParsedUrl parsed;
  parsed.origin = url.substr(0, path_start);
  if (path_start != std::string::npos) parsed.prefix = url.substr(path_start);
  while (!parsed.prefix.empty() && parsed.prefix.back() == '/') parsed.prefix.pop_back();
  return parsed;
}

std::string apply_template(const std::string& tmpl, const std::string& prompt) {
  std::string out = tmpl;
  const std::string key = "{prompt}";
  const auto pos = out.find(key);
  if (pos == std::string::npos) return out + prompt;
  out.replace(pos, key.size(), prompt);
  return out;
}

bool retryable_status(int status) { return status == 429 || status >= 500; }

bool starts_word(const std::string& token) {
  if (token.empty()) return false;
  const unsigned char c = static_cast<unsigned char>(token[0]);
  if (c == ' ' || c == '\t' || c == '\n' || c == '\r') return true;
  // SentencePiece "▁" and byte-level BPE "Ġ" word markers.
  return token.rfind("\xE2\x96\x81", 0) == 0 || token.rfind("\xC4\xA0", 0) == 0;
}

// Runs task(i, client) for i in [0, m) on at most max_parallel workers, each
// owning its own client. The first CapabilityError is rethrown after all
// workers finish; tasks handle every other error themselves.
template <typename Task>
void run_bounded(const EndpointConfig& endpoint, int m, Task task) {
  if (m <= 0) return;
  const int workers = std::clamp(endpoint.max_parallel, 1, m);
  std::atomic<int> next{0};
  std::exception_ptr fatal;
  std::mutex fatal_mutex;
  auto worker = [&] {
    CompletionsClient client(endpoint);
    for (int i = next++; i < m; i = next++) {
      try {
        task(i, client);
      } catch (...) {
        std::lock_guard<std::mutex> lock(fatal_mutex);
        if (!fatal) fatal = std::current_exception();
        next = m;  // stop handing out work
      }
    }
  };
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (int w = 0; w < workers; ++w) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  if (fatal) std::rethrow_exception(fatal);
}

CompletionChoice first_choice(std::vector<CompletionChoice> choices) {
  if (choices.empty()) throw EndpointError("completions response has no choices");
  return std::move(choices.front());
}

CompletionChoice head(const CompletionChoice& choice, std::size_t count) {
  CompletionChoice out = choice;
  out.tokens.resize(std::min(count, out.tokens.size()));
  out.token_logprobs.resize(out.tokens.size());
  out.top_logprobs.resize(out.tokens.size());
  out.text.clear();
  for (const auto& t : out.tokens) out.text += t;
  return out;
}

void tag_source(std::vector<TokenStep>& steps, const char* source) {
  for (auto& s : steps) s.extra["source"] = source;
}

}  // namespace

// ---------------------------------------------------------------------------
// Wire format

json CompletionRequest::to_json(const std::string& model) const {
  json j;
  j["model"] = model;
  j["prompt"] = prompt;
  j["max_tokens"] = max_tokens;
  j["temperature"] = temperature;
  j["top_p"] = top_p;
  j["n"] = n;
  j["logprobs"] = logprobs;
  if (seed) j["seed"] = *seed;
  if (!logit_bias.empty()) {
    json bias = json::object();
    for (const auto& [id, b] : logit_bias) bias[std::to_string(id)] = b;
    j["logit_bias"] = std::move(bias);
  }
  return j;
}

std::vector<CompletionChoice> parse_completion_response(const json& body) {
  if (!body.is_object() || !body.contains("choices") || !body["choices"].is_array()) {
    throw EndpointError("completions response lacks a choices array");
  }
  std::vector<CompletionChoice> out;
  for (const auto& c : body["choices"]) {
    CompletionChoice choice;
    if (auto it = c.find("text"); it != c.end() && it->is_string()) choice.text = *it;
    if (auto it = c.find("finish_reason"); it != c.end() && it->is_string()) {
      choice.finish_reason = *it;
    }
    auto lp = c.find("logprobs");
    if (lp == c.end() || !lp->is_object() || !lp->contains("tokens") ||
        !lp->contains("top_logprobs") || !(*lp)["top_logprobs"].is_array()) {
      throw CapabilityError("server did not return per-token top logprobs");
    }
    for (const auto& t : (*lp)["tokens"]) choice.tokens.push_back(t.get<std::string>());
    if (auto it = lp->find("token_logprobs"); it != lp->end() && it->is_array()) {
      for (const auto& v : *it) {
        choice.token_logprobs.push_back(v.is_number() ? std::optional<double>(v.get<double>())
                                                      : std::nullopt);
      }
    }
    choice.token_logprobs.resize(choice.tokens.size());
    for (const auto& entry : (*lp)["top_logprobs"]) {
      std::vector<std::pair<std::string, double>> alts;
      if (entry.is_object()) {
        for (auto it = entry.begin(); it != entry.end(); ++it) {
          alts.emplace_back(it.key(), it.value().get<double>());
        }
      }
      choice.top_logprobs.push_back(std::move(alts));
    }
    if (choice.top_logprobs.size() != choice.tokens.size()) {
      throw CapabilityError("top_logprobs length does not match tokens");
    }
    out.push_back(std::move(choice));
  }
  return out;
}

struct CompletionsClient::Impl {
  explicit Impl(const EndpointConfig& config)
      : url(parse_base_url(config.base_url)), http(url.origin) {
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config.timeout - secs);
    http.set_connection_timeout(secs.count(), usecs.count());
    http.set_read_timeout(secs.count(), usecs.count());
    http.set_tcp_nodelay(true);
    http.set_write_timeout(secs.count(), usecs.count());
    http.set_keep_alive(true);
  }

  ParsedUrl url;
  httplib::Client http;
  std::minstd_rand jitter{12345};
};

CompletionsClient::CompletionsClient(EndpointConfig config)
    : config_(std::move(config)), impl_(std::make_unique<Impl>(config_)) {}

CompletionsClient::~CompletionsClient() = default;

std::vector<CompletionChoice> CompletionsClient::complete(const CompletionRequest& request,
                                                          CallDiagnostics* diagnostics) {
  const std::string path = impl_->url.prefix + "/v1/completions";
  const std::string body = request.to_json(config_.model_name).dump();
  httplib::Headers headers;
  if (config_.api_key) headers.emplace("Authorization", "Bearer " + *config_.api_key);

  const int max_attempts = std::max(1, config_.retry.max_attempts);
  std::string last_error;
  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    if (diagnostics) diagnostics->attempts = attempt;
    if (attempt > 1) {
      // Exponential backoff with full jitter.
      const auto cap = config_.retry.backoff_base.count() * (1LL << std::min(attempt - 2, 20));
      std::uniform_int_distribution<long long> dist(0, std::max<long long>(cap, 0));
      std::this_thread::sleep_for(std::chrono::milliseconds(dist(impl_->jitter)));
    }
    auto res = impl_->http.Post(path, headers, body, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 200) {
      json parsed;
      try {
        parsed = json::parse(res->body);
      } catch (const json::exception& e) {
        last_error = std::string("malformed response body: ") + e.what();
        continue;
      }
      return parse_completion_response(parsed);
    }
    last_error = "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200);
    if (!retryable_status(res->status)) {
      if (res->body.find("logprob") != std::string::npos) throw CapabilityError(last_error);
      throw EndpointError(last_error);
    }
  }
  throw EndpointError(last_error + " (after " + std::to_string(max_attempts) + " attempts)");
}

std::int64_t token_id_for(const std::string& token, TokenIdMode mode) {
  if (mode == TokenIdMode::kTokenIdPrefix && token.rfind("token_id:", 0) == 0) {
    try {
      return std::stoll(token.substr(9));
    } catch (const std::exception&) {
      throw ParseError("bad token id \"" + token + "\"", 0);
    }
  }
  return stable_token_id(token);
}

FinishReason finish_reason_from_api(const std::string& reason) {
  return reason == "length" ? FinishReason::kLengthLimit : FinishReason::kStopToken;
}

std::vector<TokenStep> steps_from_choice(const CompletionChoice& choice,
                                         const EndpointConfig& config, int first_position) {
  std::vector<TokenStep> steps;
  steps.reserve(choice.tokens.size());
  for (std::size_t t = 0; t < choice.tokens.size(); ++t) {
    TokenStep step;
    step.position = first_position + static_cast<int>(t);
    step.chosen_token_id = token_id_for(choice.tokens[t], config.token_ids);
    step.temperature_applied = config.logprobs_post_temperature;
    for (const auto& [text, lp] : choice.top_logprobs[t]) {
      const auto id = token_id_for(text, config.token_ids);
      if (step.find_candidate(id) != nullptr) continue;
      step.candidates.push_back({id, text, std::min(0.0, lp), ExtraFields::object()});
    }
    if (step.find_candidate(step.chosen_token_id) == nullptr && choice.token_logprobs[t]) {
      step.candidates.push_back({step.chosen_token_id, choice.tokens[t],
                                 std::min(0.0, *choice.token_logprobs[t]),
                                 ExtraFields::object()});
    }
    sort_candidates(step.candidates);
    const double coverage = coverage_of(step.candidates);
    step.coverage_mass = coverage > 0.0 ? std::min(1.0, coverage) : 1e-300;
    steps.push_back(std::move(step));
  }
  return steps;
}

std::string detokenize(const SequenceTrace& trace, std::size_t count) {
  std::string text;
  for (std::size_t i = 0; i < count && i < trace.steps.size(); ++i) {
    const auto& step = trace.steps[i];
    const auto* chosen = step.find_candidate(step.chosen_token_id);
    if (chosen == nullptr) {
      throw ValidationError("cannot detokenize position " + std::to_string(step.position) +
                            ": chosen token text not recorded");
    }
    text += chosen->token_text;
  }
  return text;
}

// ---------------------------------------------------------------------------
// Sampling

SampleResult sample_completions(const EndpointConfig& endpoint, const PromptCase& prompt,
                                const DecodingParams& params, int m, int max_tokens,
                                const SeedPolicy& seeds) {
  SampleResult result;
  if (m <= 0) return result;

  std::vector<std::optional<SequenceTrace>> slots(m);
  std::vector<std::optional<SampleError>> failures(m);
  result.attempts.assign(m, 0);
  const std::string text = apply_template(endpoint.prompt_template, prompt.prompt_text);

  run_bounded(endpoint, m, [&](int i, CompletionsClient& client) {
    CompletionRequest req;
    req.prompt = text;
    req.max_tokens = max_tokens;
    req.temperature = params.temperature;
    req.top_p = params.nucleus_p;
    req.logprobs = endpoint.top_logprobs_k;
    if (seeds.send_seed) req.seed = seeds.base_seed + i;
    CallDiagnostics diag;
    try {
      const auto choice = first_choice(client.complete(req, &diag));
      SequenceTrace trace;
      trace.prompt_id = prompt.prompt_id;
      trace.sample_index = i;
      trace.decoding = params;
      trace.finish_reason = finish_reason_from_api(choice.finish_reason);
      trace.steps = steps_from_choice(choice, endpoint, 1);
      slots[i] = std::move(trace);
    } catch (const CapabilityError&) {
      throw;
    } catch (const Error& e) {
      failures[i] = SampleError{i, diag.attempts, e.what()};
    }
    result.attempts[i] = diag.attempts;
  });

  for (int i = 0; i < m; ++i) {
    if (slots[i]) result.traces.push_back(std::move(*slots[i]));
    if (failures[i]) result.errors.push_back(std::move(*failures[i]));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Resampling

std::vector<ForkResult> resample_from_position(const EndpointConfig& endpoint,
                                               const PromptCase& prompt,
                                               const SequenceTrace& original, int fork_position,
                                               const DecodingParams& params, int m,
                                               const ForkOptions& options) {
  const int length = static_cast<int>(original.steps.size());
  if (fork_position < 1 || fork_position >= length) {
    throw ParameterError("fork position " + std::to_string(fork_position) +
                         " out of range [1, " + std::to_string(length) + ")");
  }
  std::vector<ForkResult> results(std::max(m, 0));
  for (int i = 0; i < m; ++i) results[i].sample_index = i;
  if (m <= 0) return results;

  const std::string prefix =
      apply_template(endpoint.prompt_template, prompt.prompt_text) +
      detokenize(original, static_cast<std::size_t>(fork_position));
  const TokenStep& next_step = original.steps[fork_position];
  const std::int64_t original_next = next_step.chosen_token_id;

  if (options.constrained) {
    const auto r = step_pipeline(next_step, params);
    const bool has_alternative =
        std::any_of(r.dist.support.begin(), r.dist.support.end(),
                    [&](const TokenProb& t) { return t.token_id != original_next; });
    if (!has_alternative) {
      for (auto& res : results) res.forced_fork_failed = true;
      return results;
    }
  }

  auto make_request = [&](const std::string& text, int max_tokens, std::int64_t seed) {
    CompletionRequest req;
    req.prompt = text;
    req.max_tokens = max_tokens;
    req.temperature = params.temperature;
    req.top_p = params.nucleus_p;
    req.logprobs = endpoint.top_logprobs_k;
    req.seed = seed;
    return req;
  };

  run_bounded(endpoint, m, [&](int i, CompletionsClient& client) {
    ForkResult& res = results[i];
    SequenceTrace trace;
    trace.prompt_id = original.prompt_id;
    trace.sample_index = i;
    trace.first_position = fork_position + 1;
    trace.decoding = params;
    trace.extra["fork_position"] = fork_position;
    trace.extra["parent_sample_index"] = original.sample_index;
    const std::int64_t seed = params.seed + i;
    try {
      CallDiagnostics diag;
      if (!options.constrained) {
        const auto choice = first_choice(client.complete(
            make_request(prefix, options.max_tokens, seed), &diag));
        res.attempts = diag.attempts;
        trace.steps = steps_from_choice(choice, endpoint, fork_position + 1);
        trace.finish_reason = finish_reason_from_api(choice.finish_reason);
        res.trace = std::move(trace);
        return;
      }

      std::optional<CompletionChoice> forced;
      for (int attempt = 0; attempt < options.max_rejections && !forced; ++attempt) {
        auto req = make_request(prefix, 1, seed + static_cast<std::int64_t>(attempt) * m);
        if (endpoint.supports_logit_bias) req.logit_bias[original_next] = -100.0;
        auto choice = first_choice(client.complete(req, &diag));
        ++res.attempts;
        if (choice.tokens.empty()) continue;
        if (token_id_for(choice.tokens.front(), endpoint.token_ids) == original_next) continue;
        forced = head(choice, 1);
      }
      if (!forced) {
        res.forced_fork_failed = true;
        return;
      }
      trace.steps = steps_from_choice(*forced, endpoint, fork_position + 1);
      trace.finish_reason = FinishReason::kLengthLimit;
      if (options.max_tokens > 1) {
        const auto rest = first_choice(client.complete(
            make_request(prefix + forced->tokens.front(), options.max_tokens - 1, seed), &diag));
        ++res.attempts;
        auto more = steps_from_choice(rest, endpoint, fork_position + 2);
        trace.steps.insert(trace.steps.end(), std::make_move_iterator(more.begin()),
                           std::make_move_iterator(more.end()));
        trace.finish_reason = finish_reason_from_api(rest.finish_reason);
      }
      res.trace = std::move(trace);
    } catch (const CapabilityError&) {
      throw;
    } catch (const Error& e) {
      res.error = e.what();
    }
  });
  return results;
}

// ---------------------------------------------------------------------------
// Nudging

json NudgeReport::to_json() const {
  json j;
  j["prompt_id"] = trace.prompt_id;
  j["total_tokens"] = base_tokens + injected_tokens;
  j["base_tokens"] = base_tokens;
  j["injected_tokens"] = injected_tokens;
  j["nudging_ratio"] = nudging_ratio;
  json evs = json::array();
  for (const auto& e : events) {
    json ev;
    ev["position"] = e.position;
    ev["base_top1_prob"] = e.base_top1_prob;
    ev["injected_text"] = e.injected_text;
    ev["injected_token_count"] = e.injected_token_count;
    evs.push_back(std::move(ev));
  }
  j["events"] = std::move(evs);
  return j;
}

NudgeReport nudging_generate(const EndpointConfig& base, const EndpointConfig& aligned,
                             const PromptCase& prompt, const DecodingParams& params,
                             const NudgeOptions& options) {
  if (!(options.gamma > 0.0 && options.gamma < 1.0)) {
    throw ParameterError("nudging threshold gamma must be in (0, 1)");
  }
  if (options.max_word_tokens < 1) throw ParameterError("max_word_tokens must be >= 1");

  CompletionsClient base_client(base);
  CompletionsClient aligned_client(aligned);
  const std::string base_prompt = apply_template(base.prompt_template, prompt.prompt_text);
  const std::string aligned_prompt = apply_template(aligned.prompt_template, prompt.prompt_text);

  NudgeReport report;
  SequenceTrace& trace = report.trace;
  trace.prompt_id = prompt.prompt_id;
  trace.decoding = params;
  trace.finish_reason = FinishReason::kLengthLimit;

  std::string generated;
  int position = 1;
  auto request = [&](const std::string& text, int max_tokens, const EndpointConfig& cfg) {
    CompletionRequest req;
    req.prompt = text + generated;
    req.max_tokens = max_tokens;
    req.temperature = params.temperature;
    req.top_p = params.nucleus_p;
    req.logprobs = cfg.top_logprobs_k;
    req.seed = params.seed + position;
    return req;
  };

  while (position <= options.max_tokens) {
    const auto draft = first_choice(base_client.complete(request(base_prompt, 1, base)));
    if (draft.tokens.empty()) {
      trace.finish_reason = FinishReason::kStopToken;
      break;
    }
    double top1_lp = -std::numeric_limits<double>::infinity();
    for (const auto& [text, lp] : draft.top_logprobs.front()) top1_lp = std::max(top1_lp, lp);
    if (draft.token_logprobs.front()) top1_lp = std::max(top1_lp, *draft.token_logprobs.front());
    const double top1 = std::exp(std::min(0.0, top1_lp));

    if (top1 >= options.gamma) {
      auto steps = steps_from_choice(head(draft, 1), base, position);
      tag_source(steps, "base");
      trace.steps.push_back(std::move(steps.front()));
      generated += draft.tokens.front();
      ++position;
      ++report.base_tokens;
      if (draft.finish_reason == "stop") {
        trace.finish_reason = FinishReason::kStopToken;
        break;
      }
      continue;
    }

    const int budget = std::min(options.max_word_tokens, options.max_tokens - position + 1);
    const auto word = first_choice(aligned_client.complete(request(aligned_prompt, budget, aligned)));
    if (word.tokens.empty()) {
      trace.finish_reason = FinishReason::kStopToken;
      break;
    }
    std::size_t take = 1;
    while (take < word.tokens.size() && !starts_word(word.tokens[take])) ++take;
    const auto injected = head(word, take);
    auto steps = steps_from_choice(injected, aligned, position);
    tag_source(steps, "aligned");
    report.events.push_back({position, top1, injected.text, static_cast<int>(take)});
    for (auto& s : steps) trace.steps.push_back(std::move(s));
    generated += injected.text;
    position += static_cast<int>(take);
    report.injected_tokens += static_cast<int>(take);
    if (take == word.tokens.size() && word.finish_reason == "stop") {
      trace.finish_reason = FinishReason::kStopToken;
      break;
    }
  }

  const int total = report.base_tokens + report.injected_tokens;
  report.nudging_ratio = total == 0 ? 0.0 : static_cast<double>(report.injected_tokens) / total;
  return report;
}

}  // namespace bfkit::client
