#pragma once

// Deterministic offline backend. It re-parses the structured prompts this
// tool renders, fingerprints every embedded code block, and answers from
// feature distances: verification compares exp(-d) against a threshold,
// attribution and tournament pick the candidate with the highest likelihood.
// A seeded error rate can corrupt any decision, keyed per request so
// concurrency and replay order never change an outcome.

#include <array>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "codattr/backend.hpp"
#include "codattr/style.hpp"
#include "codattr/util.hpp"

namespace codattr {

struct StyleOracleConfig {
  double epsilon = 0.0;          // probability of a deliberately wrong answer
  std::uint64_t seed = 0;        // noise seed; mixed with each request's cache hash
  double verify_threshold = 0.5; // likelihood at or above which a pair is "same"
  bool force_unsure = false;     // always answer "unsure" (failure-mode probe)
};

namespace detail {

struct ParsedBlock {
  std::string marker;  // nearest non-blank line above the fence
  std::string code;
};

// Extract every ``` fenced block together with its marker line.
inline std::vector<ParsedBlock> parse_blocks(std::string_view text) {
  std::vector<ParsedBlock> blocks;
  const auto lines = split_lines(text);
  std::string last_nonblank;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (trim(lines[i]) == "```") {
      ParsedBlock b;
      b.marker = last_nonblank;
      std::string code;
      std::size_t j = i + 1;
      for (; j < lines.size() && trim(lines[j]) != "```"; ++j) {
        code += lines[j];
        code += '\n';
      }
      if (j >= lines.size()) throw ProtocolError("unterminated code fence in prompt");
      b.code = std::move(code);
      blocks.push_back(std::move(b));
      i = j;
      last_nonblank.clear();
    } else if (!trim(lines[i]).empty()) {
      last_nonblank = std::string(trim(lines[i]));
    }
  }
  return blocks;
}

// "Author 12, reference 3:" -> 12
inline std::optional<std::size_t> marker_label(std::string_view marker) {
  if (marker.rfind("Author ", 0) != 0) return std::nullopt;
  std::size_t value = 0;
  std::size_t i = 7;
  bool any = false;
  for (; i < marker.size() && marker[i] >= '0' && marker[i] <= '9'; ++i) {
    value = value * 10 + static_cast<std::size_t>(marker[i] - '0');
    any = true;
  }
  if (!any || value == 0) return std::nullopt;
  if (marker.find(", reference ", i) != i) return std::nullopt;
  return value;
}

}  // namespace detail

class StyleOracleBackend final : public Backend {
 public:
  explicit StyleOracleBackend(StyleOracleConfig config = {}) : config_(config) {}

  std::string name() const override { return "mock-style-oracle"; }

  ChatResponse complete(const ChatRequest& request) override {
    const std::string text = decide(request);
    ChatResponse response;
    response.text = text;
    response.prompt_tokens =
        estimate_tokens(request.user_text) + estimate_tokens(request.system_text);
    response.output_tokens = estimate_tokens(text);
    return response;
  }

  const StyleOracleConfig& config() const { return config_; }

 private:
  enum class PromptKind { Verify, Attribute, Tournament };

  static PromptKind classify(std::string_view prompt) {
    if (prompt.find(kVerifyInstruction) != std::string_view::npos) return PromptKind::Verify;
    if (prompt.find(kTournamentInstruction) != std::string_view::npos)
      return PromptKind::Tournament;
    if (prompt.find(kAttributeInstruction) != std::string_view::npos)
      return PromptKind::Attribute;
    throw ProtocolError("prompt carries no recognizable answer instruction");
  }

  StyleFeatureVector features_of(const std::string& code) {
    const std::uint64_t key = fnv1a64(code);
    {
      std::lock_guard<std::mutex> lock(mutex_);
      auto it = feature_cache_.find(key);
      if (it != feature_cache_.end()) return it->second;
    }
    CodeSample sample;
    sample.author = "prompt";
    sample.task = "prompt";
    sample.language = Language::cpp();  // fixed fingerprint table for all prompts
    sample.text = code;
    sample.loc = count_physical_lines(code);
    StyleFeatureVector f = extract_features(sample);
    std::lock_guard<std::mutex> lock(mutex_);
    feature_cache_.emplace(key, f);
    return f;
  }

  std::string decide(const ChatRequest& request) {
    const PromptKind kind = classify(request.user_text);
    const auto blocks = detail::parse_blocks(request.user_text);
    DetRng noise(config_.seed ^ request_cache_hash(request) ^ 0x6f7261636c65ULL);

    if (kind == PromptKind::Verify) {
      if (blocks.size() != 2)
        throw ProtocolError("verification prompt must embed exactly two code blocks, found " +
                            std::to_string(blocks.size()));
      if (config_.force_unsure) return answer_line("unsure");

      const auto left = features_of(blocks[0].code);
      const auto right = features_of(blocks[1].code);
      const auto& scales = default_feature_scales();
      FeatureStats st;
      st.mean = left.flat();
      st.scale = scales;
      const double likelihood = std::exp(-euclidean(normalize(left, st), normalize(right, st)));
      bool same = likelihood >= config_.verify_threshold;
      if (config_.epsilon > 0 && noise.unit() < config_.epsilon) same = !same;
      return answer_line(same ? "yes" : "no");
    }

    // Attribution / tournament: group reference blocks by label, find the
    // query block, z-score over all references, then argmax of exp(-d).
    std::map<std::size_t, std::vector<StyleFeatureVector>> refs;
    std::optional<StyleFeatureVector> query;
    for (const auto& b : blocks) {
      if (auto label = detail::marker_label(b.marker)) {
        refs[*label].push_back(features_of(b.code));
      } else if (b.marker == "Query code:") {
        query = features_of(b.code);
      } else {
        throw ProtocolError("unrecognized code block marker: \"" + b.marker + "\"");
      }
    }
    if (refs.empty()) throw ProtocolError("prompt embeds no labeled reference blocks");
    if (!query) throw ProtocolError("prompt embeds no query block");
    if (config_.force_unsure) return answer_line("unsure");

    std::vector<StyleFeatureVector> all_refs;
    for (const auto& [_, fs] : refs)
      for (const auto& f : fs) all_refs.push_back(f);
    const FeatureStats st = feature_stats(all_refs);

    const auto zq = normalize(*query, st);
    std::size_t best_label = 0;
    double best_likelihood = -1.0;
    for (const auto& [label, fs] : refs) {
      std::array<double, kFeatureCount> centroid{};
      for (const auto& f : fs) {
        const auto z = normalize(f, st);
        for (std::size_t k = 0; k < kFeatureCount; ++k) centroid[k] += z[k];
      }
      for (double& c : centroid) c /= static_cast<double>(fs.size());
      const double likelihood = std::exp(-euclidean(zq, centroid));
      if (likelihood > best_likelihood) {
        best_likelihood = likelihood;
        best_label = label;
      }
    }

    if (config_.epsilon > 0 && noise.unit() < config_.epsilon) {
      // Uniformly random wrong answer. Tournaments must name a candidate;
      // attribution may also wrongly claim "none".
      std::vector<std::string> wrong;
      for (const auto& [label, _] : refs) {
        if (label != best_label) wrong.push_back(author_label(label));
      }
      if (kind == PromptKind::Attribute) wrong.push_back("none");
      if (!wrong.empty()) return answer_line(wrong[noise.below(wrong.size())]);
    }
    return answer_line(author_label(best_label));
  }

  static std::string answer_line(const std::string& token) {
    return "Compared layout, lexical, and syntactic fingerprints of the provided samples.\n"
           "ANSWER: " +
           token + "\n";
  }

  StyleOracleConfig config_;
  std::mutex mutex_;
  std::map<std::uint64_t, StyleFeatureVector> feature_cache_;
};

}  // namespace codattr
