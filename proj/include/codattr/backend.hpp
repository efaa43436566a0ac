#pragma once

// Uniform chat-completion contract plus the bookkeeping around it: a
// content-addressed response cache, an append-only query log, and cost
// accounting against a pricing table.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "codattr/prompts.hpp"
#include "codattr/util.hpp"

namespace codattr {

struct ChatRequest {
  std::string model;
  double temperature = 0.0;  // deterministic decoding by default
  double top_p = 1.0;
  std::string system_text;  // empty = no system message
  std::string user_text;
  std::size_t max_output_tokens = kReservedOutputTokens;
};

struct ChatResponse {
  std::string text;
  std::size_t prompt_tokens = 0;
  std::size_t output_tokens = 0;
  std::int64_t latency_ms = 0;
  bool from_cache = false;
  int retry_count = 0;
};

// The key covers exactly the request fields that select a response; it is
// independent of the response and of output-size limits.
inline std::uint64_t request_cache_hash(const ChatRequest& r) {
  char num[64];
  std::uint64_t h = fnv1a64_field(r.model, kFnvOffset);
  std::snprintf(num, sizeof(num), "%.6g", r.temperature);
  h = fnv1a64_field(num, h);
  std::snprintf(num, sizeof(num), "%.6g", r.top_p);
  h = fnv1a64_field(num, h);
  h = fnv1a64_field(r.system_text, h);
  h = fnv1a64_field(r.user_text, h);
  return h;
}

inline std::string request_cache_key(const ChatRequest& r) { return hex16(request_cache_hash(r)); }

struct QueryRecord {
  std::string cache_key;
  ChatRequest request;
  ChatResponse response;
  std::string timestamp;  // ISO-8601 UTC; informational only
  double cost_usd = 0.0;
};

inline void to_json(nlohmann::json& j, const ChatRequest& r) {
  j = {{"model", r.model},
       {"temperature", r.temperature},
       {"top_p", r.top_p},
       {"system_text", r.system_text},
       {"user_text", r.user_text},
       {"max_output_tokens", r.max_output_tokens}};
}

inline void from_json(const nlohmann::json& j, ChatRequest& r) {
  j.at("model").get_to(r.model);
  j.at("temperature").get_to(r.temperature);
  j.at("top_p").get_to(r.top_p);
  j.at("system_text").get_to(r.system_text);
  j.at("user_text").get_to(r.user_text);
  j.at("max_output_tokens").get_to(r.max_output_tokens);
}

inline void to_json(nlohmann::json& j, const ChatResponse& r) {
  j = {{"text", r.text},
       {"prompt_tokens", r.prompt_tokens},
       {"output_tokens", r.output_tokens},
       {"latency_ms", r.latency_ms},
       {"retry_count", r.retry_count}};
}

inline void from_json(const nlohmann::json& j, ChatResponse& r) {
  j.at("text").get_to(r.text);
  j.at("prompt_tokens").get_to(r.prompt_tokens);
  j.at("output_tokens").get_to(r.output_tokens);
  j.at("latency_ms").get_to(r.latency_ms);
  r.retry_count = j.value("retry_count", 0);
  r.from_cache = false;
}

inline void to_json(nlohmann::json& j, const QueryRecord& r) {
  j = {{"cache_key", r.cache_key},
       {"timestamp", r.timestamp},
       {"cost_usd", r.cost_usd},
       {"request", r.request},
       {"response", r.response}};
}

inline void from_json(const nlohmann::json& j, QueryRecord& r) {
  j.at("cache_key").get_to(r.cache_key);
  j.at("timestamp").get_to(r.timestamp);
  j.at("cost_usd").get_to(r.cost_usd);
  j.at("request").get_to(r.request);
  j.at("response").get_to(r.response);
}

// ---------------------------------------------------------------------------
// Backend interface
// ---------------------------------------------------------------------------

class Backend {
 public:
  virtual ~Backend() = default;
  virtual ChatResponse complete(const ChatRequest& request) = 0;
  virtual std::string name() const = 0;
};

// ---------------------------------------------------------------------------
// Pricing
// ---------------------------------------------------------------------------

struct ModelPricing {
  double input_per_1k = 0.0;
  double output_per_1k = 0.0;
};

class PricingTable {
 public:
  PricingTable() = default;

  void set(const std::string& model, ModelPricing p) { prices_[model] = p; }

  std::optional<ModelPricing> find(const std::string& model) const {
    auto it = prices_.find(model);
    if (it == prices_.end()) return std::nullopt;
    return it->second;
  }

  double cost_for(const std::string& model, std::size_t prompt_tokens,
                  std::size_t output_tokens) const {
    auto p = find(model);
    if (!p) throw ConfigError("pricing table has no entry for model \"" + model + "\"");
    return static_cast<double>(prompt_tokens) / 1000.0 * p->input_per_1k +
           static_cast<double>(output_tokens) / 1000.0 * p->output_per_1k;
  }

  bool empty() const { return prices_.empty(); }

  // JSON: {"model": {"input_per_1k": x, "output_per_1k": y}, ...}
  static PricingTable from_json_file(const std::filesystem::path& path) {
    PricingTable t;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_file(path));
    } catch (const std::exception& e) {
      throw ConfigError("pricing table unreadable: " + path.string() + ": " + e.what());
    }
    for (const auto& [model, row] : j.items()) {
      ModelPricing p;
      p.input_per_1k = row.at("input_per_1k").get<double>();
      p.output_per_1k = row.at("output_per_1k").get<double>();
      t.set(model, p);
    }
    return t;
  }

 private:
  std::map<std::string, ModelPricing> prices_;
};

// ---------------------------------------------------------------------------
// Query log (append-only JSONL)
// ---------------------------------------------------------------------------

class QueryLog {
 public:
  explicit QueryLog(std::filesystem::path path) : path_(std::move(path)) {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  }

  void append(const QueryRecord& record) {
    std::lock_guard<std::mutex> lock(mutex_);
    std::ofstream out(path_, std::ios::binary | std::ios::app);
    if (!out) throw std::runtime_error("cannot append to query log: " + path_.string());
    out << nlohmann::json(record).dump() << '\n';
  }

  const std::filesystem::path& path() const { return path_; }

  static std::vector<QueryRecord> read_all(const std::filesystem::path& path) {
    std::vector<QueryRecord> records;
    if (!std::filesystem::exists(path)) return records;
    std::ifstream in(path, std::ios::binary);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (trim(line).empty()) continue;
      try {
        records.push_back(nlohmann::json::parse(line).get<QueryRecord>());
      } catch (const std::exception& e) {
        throw std::runtime_error("query log " + path.string() + " line " +
                                 std::to_string(line_no) + ": " + e.what());
      }
    }
    return records;
  }

 private:
  std::filesystem::path path_;
  std::mutex mutex_;
};

// ---------------------------------------------------------------------------
// Caching client
// ---------------------------------------------------------------------------

// Wraps a transport backend with a content-addressed file cache and the
// query log. Cache hits never touch the network, cost nothing, and are not
// re-logged; every miss appends exactly one record. Thread-safe; an optional
// call budget turns the (max_calls+1)-th fresh completion into
// BackendUnavailable, which is how paid runs are fenced and how tests
// interrupt a run mid-flight.
class CachingClient {
 public:
  CachingClient(Backend& backend, std::filesystem::path cache_dir, QueryLog* log = nullptr,
                const PricingTable* pricing = nullptr, std::uint64_t max_calls = 0)
      : backend_(backend),
        cache_dir_(std::move(cache_dir)),
        log_(log),
        pricing_(pricing),
        max_calls_(max_calls) {
    std::filesystem::create_directories(cache_dir_);
  }

  ChatResponse complete(const ChatRequest& request) {
    const std::string key = request_cache_key(request);
    const std::filesystem::path file = cache_dir_ / (key + ".json");

    {
      std::lock_guard<std::mutex> lock(cache_mutex_);
      if (std::filesystem::exists(file)) {
        QueryRecord record = nlohmann::json::parse(read_file(file)).get<QueryRecord>();
        ChatResponse response = record.response;
        response.from_cache = true;
        return response;
      }
    }

    if (max_calls_ > 0) {
      const std::uint64_t used = calls_.fetch_add(1) + 1;
      if (used > max_calls_)
        throw CallBudgetExhausted("backend call budget of " + std::to_string(max_calls_) +
                                  " calls exhausted");
    } else {
      calls_.fetch_add(1);
    }

    const auto started = std::chrono::steady_clock::now();
    ChatResponse response = backend_.complete(request);
    response.from_cache = false;
    if (response.latency_ms == 0) {
      response.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                std::chrono::steady_clock::now() - started)
                                .count();
    }

    QueryRecord record;
    record.cache_key = key;
    record.request = request;
    record.response = response;
    record.timestamp = iso8601_utc(std::chrono::system_clock::now());
    if (pricing_ && !pricing_->empty()) {
      record.cost_usd =
          pricing_->cost_for(request.model, response.prompt_tokens, response.output_tokens);
    }

    {
      std::lock_guard<std::mutex> lock(cache_mutex_);
      if (log_) log_->append(record);
      write_file(file, nlohmann::json(record).dump(2) + "\n");
    }
    return response;
  }

  // Fresh (non-cache) completions attempted so far.
  std::uint64_t backend_calls() const { return calls_.load(); }

  const std::filesystem::path& cache_dir() const { return cache_dir_; }

 private:
  Backend& backend_;
  std::filesystem::path cache_dir_;
  QueryLog* log_;
  const PricingTable* pricing_;
  std::uint64_t max_calls_;
  std::atomic<std::uint64_t> calls_{0};
  std::mutex cache_mutex_;
};

// ---------------------------------------------------------------------------
// Cost accounting
// ---------------------------------------------------------------------------

struct CostLine {
  std::string model;
  std::size_t requests = 0;
  std::size_t prompt_tokens = 0;
  std::size_t output_tokens = 0;
  double cost_usd = 0.0;
};

struct CostSummary {
  std::vector<CostLine> by_model;  // sorted by model name
  std::size_t requests = 0;
  std::size_t prompt_tokens = 0;
  std::size_t output_tokens = 0;
  double cost_usd = 0.0;
};

inline CostSummary cost_of(const std::vector<QueryRecord>& records, const PricingTable& pricing) {
  std::map<std::string, CostLine> lines;
  for (const auto& r : records) {
    CostLine& line = lines[r.request.model];
    line.model = r.request.model;
    line.requests += 1;
    line.prompt_tokens += r.response.prompt_tokens;
    line.output_tokens += r.response.output_tokens;
    line.cost_usd +=
        pricing.cost_for(r.request.model, r.response.prompt_tokens, r.response.output_tokens);
  }
  CostSummary summary;
  for (auto& [_, line] : lines) {
    summary.requests += line.requests;
    summary.prompt_tokens += line.prompt_tokens;
    summary.output_tokens += line.output_tokens;
    summary.cost_usd += line.cost_usd;
    summary.by_model.push_back(std::move(line));
  }
  return summary;
}

inline void to_json(nlohmann::json& j, const CostLine& l) {
  j = {{"model", l.model},
       {"requests", l.requests},
       {"prompt_tokens", l.prompt_tokens},
       {"output_tokens", l.output_tokens},
       {"cost_usd", l.cost_usd}};
}

inline void to_json(nlohmann::json& j, const CostSummary& s) {
  j = {{"by_model", s.by_model},
       {"requests", s.requests},
       {"prompt_tokens", s.prompt_tokens},
       {"output_tokens", s.output_tokens},
       {"cost_usd", s.cost_usd}};
}

}  // namespace codattr
