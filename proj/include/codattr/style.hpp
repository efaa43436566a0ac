#pragma once

// Tokenizer-free stylometric fingerprints: layout ratios, indentation,
// identifier shape, and per-keyword relative frequencies. These drive the
// deterministic mock oracle; they are a fingerprint, not a ground-truth
// style model.

#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "codattr/corpus.hpp"
#include "codattr/util.hpp"

namespace codattr {

inline constexpr std::size_t kKeywordSlots = 32;
inline constexpr std::size_t kFeatureCount = 6 + kKeywordSlots;
inline constexpr int kTabColumns = 4;

// Fixed per-language keyword lists, one of kKeywordSlots entries each.
// data/keywords_<lang>.txt ships the same lists for auditing.
inline const std::array<const char*, kKeywordSlots>& keyword_table(const Language& lang) {
  static const std::array<const char*, kKeywordSlots> cpp = {
      "if",        "else",     "for",       "while",   "return",  "int",      "double",
      "float",     "char",     "bool",      "void",    "const",   "static",   "class",
      "struct",    "template", "typename",  "namespace", "using", "new",      "delete",
      "public",    "private",  "protected", "virtual", "switch",  "case",     "break",
      "continue",  "auto",     "sizeof",    "this"};
  static const std::array<const char*, kKeywordSlots> java = {
      "if",        "else",    "for",        "while",     "return", "int",       "double",
      "float",     "char",    "boolean",    "void",      "final",  "static",    "class",
      "interface", "extends", "implements", "package",   "import", "new",       "try",
      "public",    "private", "protected",  "abstract",  "switch", "throw",     "break",
      "continue",  "long",    "throws",     "this"};
  return lang.kind == LanguageKind::Java ? java : cpp;
}

struct StyleFeatureVector {
  double mean_line_length = 0.0;
  double indent_unit = 0.0;           // modal positive leading-whitespace width
  double brace_same_line_ratio = 0.0;
  double blank_line_ratio = 0.0;
  double comment_ratio = 0.0;
  double mean_identifier_length = 0.0;
  std::array<double, kKeywordSlots> keyword_freqs{};  // sums to <= 1

  std::array<double, kFeatureCount> flat() const {
    std::array<double, kFeatureCount> v{};
    v[0] = mean_line_length;
    v[1] = indent_unit;
    v[2] = brace_same_line_ratio;
    v[3] = blank_line_ratio;
    v[4] = comment_ratio;
    v[5] = mean_identifier_length;
    for (std::size_t i = 0; i < kKeywordSlots; ++i) v[6 + i] = keyword_freqs[i];
    return v;
  }
};

namespace detail {

inline bool ident_start(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_';
}
inline bool ident_char(char c) { return ident_start(c) || (c >= '0' && c <= '9'); }

}  // namespace detail

inline StyleFeatureVector extract_features(const CodeSample& sample) {
  StyleFeatureVector f;
  const auto lines = split_lines(sample.text);
  if (lines.empty()) return f;

  std::size_t blank = 0, comment = 0;
  std::size_t brace_lines = 0, brace_shared = 0;
  std::size_t length_sum = 0;
  std::map<int, std::size_t> indent_hist;

  for (auto raw : lines) {
    std::string_view line = raw;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    length_sum += line.size();

    const std::string_view body = trim(line);
    if (body.empty()) {
      ++blank;
      continue;
    }
    int indent = 0;
    for (char c : line) {
      if (c == ' ') {
        ++indent;
      } else if (c == '\t') {
        indent += kTabColumns;
      } else {
        break;
      }
    }
    if (indent > 0) ++indent_hist[indent];

    if (body.substr(0, 2) == "//" || body.substr(0, 2) == "/*" || body.front() == '*') ++comment;
    if (body.find('{') != std::string_view::npos) {
      ++brace_lines;
      if (body != "{") ++brace_shared;
    }
  }

  const double n_lines = static_cast<double>(lines.size());
  f.mean_line_length = static_cast<double>(length_sum) / n_lines;
  f.blank_line_ratio = static_cast<double>(blank) / n_lines;
  f.comment_ratio = static_cast<double>(comment) / n_lines;
  f.brace_same_line_ratio =
      brace_lines == 0 ? 0.0 : static_cast<double>(brace_shared) / static_cast<double>(brace_lines);

  // Mode of positive indent widths; ties resolve to the smaller width.
  std::size_t best_count = 0;
  int best_width = 0;
  for (const auto& [width, count] : indent_hist) {
    if (count > best_count) {
      best_count = count;
      best_width = width;
    }
  }
  f.indent_unit = best_width;

  // Identifier scan; keywords are counted separately and excluded from the
  // identifier-length statistic.
  const auto& keywords = keyword_table(sample.language);
  std::map<std::string_view, std::size_t> kw_slot;
  for (std::size_t i = 0; i < keywords.size(); ++i) kw_slot[keywords[i]] = i;

  std::size_t tokens = 0, ident_len_sum = 0, ident_count = 0;
  std::array<std::size_t, kKeywordSlots> kw_counts{};
  const std::string& text = sample.text;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!detail::ident_start(text[i])) {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    while (j < text.size() && detail::ident_char(text[j])) ++j;
    const std::string_view tok(text.data() + i, j - i);
    ++tokens;
    auto it = kw_slot.find(tok);
    if (it != kw_slot.end()) {
      ++kw_counts[it->second];
    } else {
      ident_len_sum += tok.size();
      ++ident_count;
    }
    i = j;
  }
  if (ident_count > 0)
    f.mean_identifier_length = static_cast<double>(ident_len_sum) / static_cast<double>(ident_count);
  if (tokens > 0) {
    for (std::size_t s = 0; s < kKeywordSlots; ++s)
      f.keyword_freqs[s] = static_cast<double>(kw_counts[s]) / static_cast<double>(tokens);
  }
  return f;
}

// ---------------------------------------------------------------------------
// Normalization and likelihood
// ---------------------------------------------------------------------------

// Per-feature scales used when a z-score is degenerate (fewer than two
// reference samples, or zero variance on a feature). Chosen so one "unit"
// of difference is a noticeable stylistic step.
inline const std::array<double, kFeatureCount>& default_feature_scales() {
  static const std::array<double, kFeatureCount> scales = [] {
    std::array<double, kFeatureCount> s{};
    s[0] = 10.0;  // mean line length
    s[1] = 2.0;   // indent unit
    s[2] = 0.2;   // brace placement ratio
    s[3] = 0.2;   // blank line ratio
    s[4] = 0.2;   // comment ratio
    s[5] = 2.0;   // mean identifier length
    for (std::size_t i = 6; i < kFeatureCount; ++i) s[i] = 0.02;
    return s;
  }();
  return scales;
}

struct FeatureStats {
  std::array<double, kFeatureCount> mean{};
  std::array<double, kFeatureCount> scale{};
};

// Population mean/std over the given vectors; degenerate features fall back
// to the default scale so constant features neither explode nor vanish.
inline FeatureStats feature_stats(std::span<const StyleFeatureVector> vectors) {
  FeatureStats st;
  st.scale = default_feature_scales();
  if (vectors.empty()) return st;

  std::vector<std::array<double, kFeatureCount>> flats;
  flats.reserve(vectors.size());
  for (const auto& v : vectors) flats.push_back(v.flat());

  const double n = static_cast<double>(flats.size());
  for (std::size_t k = 0; k < kFeatureCount; ++k) {
    double sum = 0;
    for (const auto& v : flats) sum += v[k];
    st.mean[k] = sum / n;
  }
  if (flats.size() < 2) return st;
  for (std::size_t k = 0; k < kFeatureCount; ++k) {
    double sq = 0;
    for (const auto& v : flats) {
      const double d = v[k] - st.mean[k];
      sq += d * d;
    }
    const double sd = std::sqrt(sq / n);
    if (sd > 1e-12) st.scale[k] = sd;
  }
  return st;
}

inline std::array<double, kFeatureCount> normalize(const StyleFeatureVector& v,
                                                   const FeatureStats& st) {
  auto flat = v.flat();
  for (std::size_t k = 0; k < kFeatureCount; ++k) flat[k] = (flat[k] - st.mean[k]) / st.scale[k];
  return flat;
}

inline double euclidean(const std::array<double, kFeatureCount>& a,
                        const std::array<double, kFeatureCount>& b) {
  double sq = 0;
  for (std::size_t k = 0; k < kFeatureCount; ++k) {
    const double d = a[k] - b[k];
    sq += d * d;
  }
  return std::sqrt(sq);
}

// exp(-distance) between the query and the centroid of the author's
// normalized references; in (0, 1], and 1 exactly when the query's features
// coincide with the centroid.
inline double oracle_likelihood(const std::vector<CodeSample>& author_refs,
                                const CodeSample& query) {
  if (author_refs.empty()) throw std::invalid_argument("oracle_likelihood: no references");
  std::vector<StyleFeatureVector> ref_features;
  ref_features.reserve(author_refs.size());
  for (const auto& r : author_refs) ref_features.push_back(extract_features(r));

  const FeatureStats st = feature_stats(ref_features);
  std::array<double, kFeatureCount> centroid{};
  for (const auto& rf : ref_features) {
    const auto z = normalize(rf, st);
    for (std::size_t k = 0; k < kFeatureCount; ++k) centroid[k] += z[k];
  }
  for (double& c : centroid) c /= static_cast<double>(ref_features.size());

  return std::exp(-euclidean(normalize(extract_features(query), st), centroid));
}

}  // namespace codattr
