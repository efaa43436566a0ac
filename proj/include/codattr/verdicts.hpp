#pragma once

// Total parsers from raw model output to typed decisions. A structured
// "ANSWER:" line wins over whole-text keyword heuristics; anything
// ambiguous is Indeterminate, never an error.

#include <optional>
#include <string>
#include <string_view>

#include "codattr/corpus.hpp"
#include "codattr/prompts.hpp"
#include "codattr/util.hpp"

namespace codattr {

enum class VerificationAnswer { Same, Different, Indeterminate };

inline std::string to_string(VerificationAnswer v) {
  switch (v) {
    case VerificationAnswer::Same: return "same";
    case VerificationAnswer::Different: return "different";
    case VerificationAnswer::Indeterminate: return "indeterminate";
  }
  return "indeterminate";
}

struct Verdict {
  VerificationAnswer value = VerificationAnswer::Indeterminate;
  std::string raw_text;
  int answer_lines_seen = 0;  // >1 means the model restated its answer
};

enum class AttributionKind { Chosen, NoneOfThem, Indeterminate };

struct AttributionVerdict {
  AttributionKind kind = AttributionKind::Indeterminate;
  AuthorId author;  // set when kind == Chosen; always from the label map
  std::string raw_text;
  int answer_lines_seen = 0;

  std::string value_string() const {
    switch (kind) {
      case AttributionKind::Chosen: return author;
      case AttributionKind::NoneOfThem: return "none";
      case AttributionKind::Indeterminate: return "indeterminate";
    }
    return "indeterminate";
  }
};

namespace detail {

// Last "ANSWER: <token>" line wins; matching is case-insensitive and
// whitespace-tolerant. Returns the token lowercased and stripped of
// trailing punctuation.
inline std::optional<std::string> last_answer_token(std::string_view text, int& lines_seen) {
  std::optional<std::string> token;
  lines_seen = 0;
  for (auto line : split_lines(text)) {
    const std::string lowered = to_lower(trim(line));
    if (lowered.rfind("answer", 0) != 0) continue;
    std::string_view rest = std::string_view(lowered).substr(6);
    rest = trim(rest);
    if (rest.empty() || rest.front() != ':') continue;
    rest.remove_prefix(1);
    rest = trim(rest);
    std::string tok(rest);
    while (!tok.empty() && (tok.back() == '.' || tok.back() == '!' || tok.back() == ',' ||
                            tok.back() == '"' || tok.back() == '\''))
      tok.pop_back();
    ++lines_seen;
    token = trim(tok);
  }
  return token;
}

inline bool contains_word(std::string_view haystack, std::string_view word) {
  std::size_t pos = 0;
  auto is_word_char = [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
  };
  while ((pos = haystack.find(word, pos)) != std::string_view::npos) {
    const bool left_ok = pos == 0 || !is_word_char(haystack[pos - 1]);
    const std::size_t end = pos + word.size();
    const bool right_ok = end >= haystack.size() || !is_word_char(haystack[end]);
    if (left_ok && right_ok) return true;
    pos += 1;
  }
  return false;
}

inline bool is_unsure_token(std::string_view tok) {
  return tok == "unsure" || tok == "not sure" || tok == "uncertain" || tok == "unknown";
}

// "Author 3", "author 3", or a bare "3".
inline std::optional<std::size_t> parse_label_number(std::string_view tok) {
  std::string_view rest = tok;
  if (rest.rfind("author", 0) == 0) {
    rest.remove_prefix(6);
    rest = trim(rest);
  }
  if (rest.empty()) return std::nullopt;
  std::size_t value = 0;
  for (char c : rest) {
    if (c < '0' || c > '9') return std::nullopt;
    value = value * 10 + static_cast<std::size_t>(c - '0');
  }
  return value;
}

}  // namespace detail

inline Verdict parse_verification(std::string_view text) {
  Verdict v;
  v.raw_text = std::string(text);

  if (auto token = detail::last_answer_token(text, v.answer_lines_seen)) {
    if (*token == "yes") {
      v.value = VerificationAnswer::Same;
    } else if (*token == "no") {
      v.value = VerificationAnswer::Different;
    } else {
      v.value = VerificationAnswer::Indeterminate;
    }
    return v;
  }

  // No structured line; fall back to whole-text keyword rules.
  const std::string lowered = to_lower(text);
  const bool says_same =
      detail::contains_word(lowered, "yes") || lowered.find("same author") != std::string::npos;
  const bool says_diff =
      detail::contains_word(lowered, "no") || lowered.find("different author") != std::string::npos;
  if (says_same && !says_diff) {
    v.value = VerificationAnswer::Same;
  } else if (says_diff && !says_same) {
    v.value = VerificationAnswer::Different;
  } else {
    v.value = VerificationAnswer::Indeterminate;
  }
  return v;
}

inline AttributionVerdict parse_attribution(std::string_view text, const LabelMap& labels) {
  if (labels.size() == 0) throw std::invalid_argument("parse_attribution: empty label map");
  AttributionVerdict v;
  v.raw_text = std::string(text);

  auto token = detail::last_answer_token(text, v.answer_lines_seen);
  if (!token) return v;  // no structured line: Indeterminate

  if (*token == "none" || *token == "none of them") {
    v.kind = AttributionKind::NoneOfThem;
    return v;
  }
  if (detail::is_unsure_token(*token)) return v;

  if (auto number = detail::parse_label_number(*token)) {
    if (auto author = labels.author_for(*number)) {
      v.kind = AttributionKind::Chosen;
      v.author = *author;
    }
  }
  return v;
}

}  // namespace codattr
