#pragma once

// Black-box text generators: the only access the harness has to a model is
// "prompt in, greedy continuation out".

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <memory>
#include <numeric>
#include <optional>
#include <semaphore>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <variant>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "memtrace/sample.hpp"
#include "memtrace/tokenization.hpp"
#include "memtrace/util.hpp"

namespace memtrace {

enum class GeneratorKind { kRemoteEndpoint, kMockMemoriser };

inline std::string_view to_string(GeneratorKind k) {
  return k == GeneratorKind::kRemoteEndpoint ? "remote_endpoint" : "mock_memoriser";
}

inline GeneratorKind parse_generator_kind(std::string_view s) {
  if (s == "remote_endpoint") return GeneratorKind::kRemoteEndpoint;
  if (s == "mock_memoriser") return GeneratorKind::kMockMemoriser;
  throw ConfigError("unknown generator kind '" + std::string(s) + "'");
}

struct GeneratorRef {
  std::string name;
  GeneratorKind kind = GeneratorKind::kMockMemoriser;
  std::optional<std::int64_t> parameter_count_millions;
  std::string tokenizer_name;

  void validate() const {
    if (name.empty()) throw ConfigError("generator name must not be empty");
    if (parameter_count_millions && *parameter_count_millions <= 0) {
      throw ConfigError("generator '" + name + "': parameter count must be positive");
    }
  }
};

inline nlohmann::json to_json(const GeneratorRef& g) {
  nlohmann::json j = {{"name", g.name}, {"kind", std::string(to_string(g.kind))}, {"tokenizer", g.tokenizer_name}};
  j["parameter_count_millions"] =
      g.parameter_count_millions ? nlohmann::json(*g.parameter_count_millions) : nlohmann::json(nullptr);
  return j;
}

inline GeneratorRef generator_ref_from_json(const nlohmann::json& j) {
  GeneratorRef g;
  g.name = j.at("name").get<std::string>();
  g.kind = parse_generator_kind(j.value("kind", std::string("mock_memoriser")));
  g.tokenizer_name = j.value("tokenizer", std::string());
  if (j.contains("parameter_count_millions") && !j["parameter_count_millions"].is_null()) {
    g.parameter_count_millions = j["parameter_count_millions"].get<std::int64_t>();
  }
  g.validate();
  return g;
}

/// Greedy decoding is the only mode, so it is not a field.
struct CompletionRequest {
  std::string prompt_text;
  std::size_t max_new_tokens = 0;
};

class ContextLengthError : public EndpointError {
 public:
  using EndpointError::EndpointError;
};

class MalformedResponseError : public EndpointError {
 public:
  using EndpointError::EndpointError;
};

class Generator {
 public:
  virtual ~Generator() = default;

  virtual const GeneratorRef& ref() const = 0;
  // Prompt plus generation budget the generator accepts, in its own tokens.
  virtual std::optional<std::size_t> context_limit() const { return std::nullopt; }
  // Request parameters as sent, for run manifests.
  virtual nlohmann::json describe() const = 0;

  std::string complete(const CompletionRequest& req) {
    if (req.prompt_text.empty()) throw std::invalid_argument("completion prompt must not be empty");
    if (req.max_new_tokens == 0) throw std::invalid_argument("max_new_tokens must be positive");
    return do_complete(req);
  }

 protected:
  virtual std::string do_complete(const CompletionRequest& req) = 0;
};

inline std::string complete(Generator& gen, const CompletionRequest& req) { return gen.complete(req); }

namespace detail {

inline std::string truncate_tokens(const TokenizerPtr& tok, std::string text, std::size_t max_tokens) {
  if (!tok) return text;
  auto ids = tok->encode_ids(text);
  if (ids.size() <= max_tokens) return text;
  ids.resize(max_tokens);
  return tok->decode(ids);
}

}  // namespace detail

/// Deterministic lookup "model": a prompt whose last m bytes equal a stored
/// context continues with the stored suffix; anything else yields a constant
/// fallback token, which can never reproduce real text.
class MockMemoriser : public Generator {
 public:
  static constexpr std::string_view kDefaultFallback = "\xe2\x96\x91";  // U+2591

  MockMemoriser(GeneratorRef ref, std::size_t match_length, TokenizerPtr tokenizer = nullptr,
                std::string fallback_token = std::string(kDefaultFallback))
      : ref_(std::move(ref)),
        match_length_(match_length),
        tokenizer_(std::move(tokenizer)),
        fallback_token_(std::move(fallback_token)) {
    if (match_length_ == 0) throw ConfigError("mock match length must be positive");
    if (fallback_token_.empty()) throw ConfigError("mock fallback token must not be empty");
  }

  const GeneratorRef& ref() const override { return ref_; }
  std::size_t match_length() const { return match_length_; }
  const std::string& fallback_token() const { return fallback_token_; }
  const std::unordered_map<std::string, std::string>& memory() const { return memory_; }

  /// Throws if `context` is not exactly match_length bytes, or if it is
  /// already stored with a different continuation.
  void remember(std::string context, std::string continuation) {
    if (context.size() != match_length_) {
      throw ConfigError("mock memory key must be exactly " + std::to_string(match_length_) + " bytes");
    }
    auto [it, inserted] = memory_.emplace(std::move(context), continuation);
    if (!inserted && it->second != continuation) {
      throw DataError("mock memory: conflicting continuations for one context");
    }
  }

  nlohmann::json describe() const override {
    return {{"decoding", "greedy"},
            {"match_length", match_length_},
            {"memory_size", memory_.size()},
            {"fallback_token", fallback_token_}};
  }

 protected:
  std::string do_complete(const CompletionRequest& req) override {
    if (req.prompt_text.size() >= match_length_) {
      auto it = memory_.find(req.prompt_text.substr(req.prompt_text.size() - match_length_));
      if (it != memory_.end()) return detail::truncate_tokens(tokenizer_, it->second, req.max_new_tokens);
    }
    std::string out;
    out.reserve(fallback_token_.size() * req.max_new_tokens);
    for (std::size_t i = 0; i < req.max_new_tokens; ++i) out += fallback_token_;
    return out;
  }

 private:
  GeneratorRef ref_;
  std::size_t match_length_;
  TokenizerPtr tokenizer_;
  std::string fallback_token_;
  std::unordered_map<std::string, std::string> memory_;
};

/// Indices of the samples a mock of the given capacity memorises: the first
/// `capacity` entries of a seeded permutation, so equal seeds give nested
/// selections across capacities.
inline std::vector<std::size_t> mock_selection(std::size_t pool_size, std::size_t capacity, std::uint64_t seed) {
  if (capacity > pool_size) {
    throw ConfigError("mock capacity " + std::to_string(capacity) + " exceeds " + std::to_string(pool_size) +
                      " training samples");
  }
  std::vector<std::size_t> order(pool_size);
  std::iota(order.begin(), order.end(), 0);
  seeded_shuffle(order, seed);
  order.resize(capacity);
  return order;
}

/// Memorises `capacity` of the training samples: key = last m bytes of
/// pre_prefix + prefix, continuation = suffix.
inline std::unique_ptr<MockMemoriser> build_mock(std::span<const CandidateSample> training_samples,
                                                 std::size_t capacity, std::size_t match_length,
                                                 std::uint64_t seed, GeneratorRef ref,
                                                 TokenizerPtr tokenizer = nullptr,
                                                 std::string fallback_token =
                                                     std::string(MockMemoriser::kDefaultFallback)) {
  auto mock = std::make_unique<MockMemoriser>(std::move(ref), match_length, std::move(tokenizer),
                                              std::move(fallback_token));
  for (auto idx : mock_selection(training_samples.size(), capacity, seed)) {
    const auto& s = training_samples[idx];
    const auto context = s.probe_prompt();
    if (context.size() < match_length) {
      throw ConfigError("sample " + s.id + " context is shorter than the mock match length");
    }
    mock->remember(context.substr(context.size() - match_length), s.suffix.text);
  }
  return mock;
}

struct RemoteConfig {
  std::string url;
  std::string response_field = "choices[0].text";
  // Name of the environment variable holding a bearer token; empty for none.
  std::string auth_env;
  std::size_t max_in_flight = 4;
  std::size_t retries = 3;
  std::chrono::milliseconds backoff{500};
  std::chrono::seconds timeout{120};
  std::optional<std::size_t> context_limit;
};

namespace detail {

using FieldStep = std::variant<std::string, std::size_t>;

/// Parses "choices[0].text" style paths.
inline std::vector<FieldStep> parse_field_path(const std::string& path) {
  std::vector<FieldStep> steps;
  std::size_t i = 0;
  std::string key;
  auto flush = [&] {
    if (!key.empty()) steps.emplace_back(std::exchange(key, {}));
  };
  while (i < path.size()) {
    const char c = path[i];
    if (c == '.') {
      flush();
      ++i;
    } else if (c == '[') {
      flush();
      const auto close = path.find(']', i);
      if (close == std::string::npos || close == i + 1) throw ConfigError("bad response field path: " + path);
      const auto digits = path.substr(i + 1, close - i - 1);
      if (digits.find_first_not_of("0123456789") != std::string::npos) {
        throw ConfigError("bad response field path: " + path);
      }
      steps.emplace_back(static_cast<std::size_t>(std::stoull(digits)));
      i = close + 1;
    } else {
      key += c;
      ++i;
    }
  }
  flush();
  if (steps.empty()) throw ConfigError("empty response field path");
  return steps;
}

inline const nlohmann::json* walk(const nlohmann::json& root, const std::vector<FieldStep>& steps) {
  const nlohmann::json* cur = &root;
  for (const auto& step : steps) {
    if (const auto* key = std::get_if<std::string>(&step)) {
      if (!cur->is_object() || !cur->contains(*key)) return nullptr;
      cur = &(*cur)[*key];
    } else {
      const auto idx = std::get<std::size_t>(step);
      if (!cur->is_array() || idx >= cur->size()) return nullptr;
      cur = &(*cur)[idx];
    }
  }
  return cur;
}

inline bool mentions_context_limit(std::string body) {
  std::transform(body.begin(), body.end(), body.begin(), [](unsigned char c) { return std::tolower(c); });
  return body.find("context") != std::string::npos || body.find("maximum") != std::string::npos ||
         body.find("too long") != std::string::npos;
}

}  // namespace detail

/// Completion endpoint client. POSTs {"prompt", "max_tokens", "temperature": 0}
/// and reads the generated text from a configurable field path.
class RemoteGenerator : public Generator {
 public:
  RemoteGenerator(GeneratorRef ref, RemoteConfig config, TokenizerPtr tokenizer = nullptr)
      : ref_(std::move(ref)),
        config_(std::move(config)),
        tokenizer_(std::move(tokenizer)),
        field_path_(detail::parse_field_path(config_.response_field)),
        in_flight_(static_cast<std::ptrdiff_t>(std::max<std::size_t>(1, config_.max_in_flight))) {
    const auto scheme_end = config_.url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("endpoint url needs a scheme: " + config_.url);
    const auto path_start = config_.url.find('/', scheme_end + 3);
    origin_ = config_.url.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/" : config_.url.substr(path_start);
    if (!config_.auth_env.empty()) {
      const char* token = std::getenv(config_.auth_env.c_str());
      if (!token) throw ConfigError("auth environment variable " + config_.auth_env + " is not set");
      bearer_ = token;
    }
  }

  const GeneratorRef& ref() const override { return ref_; }
  std::optional<std::size_t> context_limit() const override { return config_.context_limit; }
  const RemoteConfig& config() const { return config_; }

  nlohmann::json describe() const override {
    return {{"url", config_.url},
            {"body", {{"prompt", "<prompt>"}, {"max_tokens", "<max_new_tokens>"}, {"temperature", 0}}},
            {"response_field", config_.response_field},
            {"max_in_flight", config_.max_in_flight},
            {"retries", config_.retries}};
  }

 protected:
  std::string do_complete(const CompletionRequest& req) override {
    in_flight_.acquire();
    struct Release {
      std::counting_semaphore<>& sem;
      ~Release() { sem.release(); }
    } release{in_flight_};

    const nlohmann::json body = {
        {"prompt", req.prompt_text}, {"max_tokens", req.max_new_tokens}, {"temperature", 0}};
    const auto payload = dump_json(body);
    std::string last_error;
    for (std::size_t attempt = 0; attempt <= config_.retries; ++attempt) {
      if (attempt > 0) std::this_thread::sleep_for(config_.backoff * (1LL << (attempt - 1)));
      httplib::Client client(origin_);
      client.set_connection_timeout(config_.timeout);
      client.set_read_timeout(config_.timeout);
      client.set_write_timeout(config_.timeout);
      httplib::Headers headers;
      if (!bearer_.empty()) headers.emplace("Authorization", "Bearer " + bearer_);
      auto res = client.Post(path_, headers, payload, "application/json");
      if (!res) {
        last_error = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      const int status = res->status;
      if (status == 429 || status >= 500) {
        last_error = "HTTP " + std::to_string(status);
        continue;
      }
      if ((status == 400 || status == 413 || status == 422) && detail::mentions_context_limit(res->body)) {
        throw ContextLengthError(ref_.name + ": context length rejected (HTTP " + std::to_string(status) + ")");
      }
      if (status < 200 || status >= 300) {
        throw EndpointError(ref_.name + ": HTTP " + std::to_string(status) + ": " + res->body.substr(0, 200));
      }
      return extract(res->body, req.max_new_tokens);
    }
    throw EndpointError(ref_.name + ": endpoint unreachable after " + std::to_string(config_.retries + 1) +
                        " attempts (" + last_error + ")");
  }

 private:
  std::string extract(const std::string& body, std::size_t max_new_tokens) const {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception&) {
      throw MalformedResponseError(ref_.name + ": response is not JSON");
    }
    const auto* field = detail::walk(j, field_path_);
    if (!field || !field->is_string()) {
      throw MalformedResponseError(ref_.name + ": response has no string at " + config_.response_field);
    }
    return detail::truncate_tokens(tokenizer_, field->get<std::string>(), max_new_tokens);
  }

  GeneratorRef ref_;
  RemoteConfig config_;
  TokenizerPtr tokenizer_;
  std::vector<detail::FieldStep> field_path_;
  std::string origin_;
  std::string path_;
  std::string bearer_;
  std::counting_semaphore<> in_flight_;
};

}  // namespace memtrace
