#pragma once

// Prompt ladder (P1 simple, P2 detailed, P3 complex) for verification,
// attribution, and tournament queries. Rendering is pure: the same template,
// case, and seed always produce byte-identical text.

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "codattr/corpus.hpp"
#include "codattr/util.hpp"

namespace codattr {

enum class TemplateTier { P1, P2, P3 };
enum class TaskKind { Verify, Attribute, Tournament };

inline std::string to_string(TemplateTier t) {
  switch (t) {
    case TemplateTier::P1: return "P1";
    case TemplateTier::P2: return "P2";
    case TemplateTier::P3: return "P3";
  }
  return "P1";
}

inline TemplateTier tier_from_string(std::string_view s) {
  const std::string v = to_lower(trim(s));
  if (v == "p1") return TemplateTier::P1;
  if (v == "p2") return TemplateTier::P2;
  if (v == "p3") return TemplateTier::P3;
  throw ConfigError("unknown template tier: " + std::string(s));
}

inline std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::Verify: return "verify";
    case TaskKind::Attribute: return "attribute";
    case TaskKind::Tournament: return "tournament";
  }
  return "verify";
}

// ---------------------------------------------------------------------------
// Templates
// ---------------------------------------------------------------------------

struct PromptTemplate {
  TemplateTier id = TemplateTier::P1;
  TaskKind task_kind = TaskKind::Verify;
  std::string body;              // text with {placeholder} slots
  std::string feature_guidance;  // empty for P1
};

// Cautionary paragraph for adversarial-aware runs. Overridable via
// <templates>/adversarial_note.txt.
inline constexpr std::string_view kAdversarialNote =
    "Note that some code samples might have been modified using evasion or hiding techniques "
    "to alter their stylistic features. Be mindful of these potential modifications and focus "
    "on underlying patterns and author-specific traits that remain consistent despite such "
    "alterations.";

inline constexpr std::string_view kGuidanceP2 =
    "Base your judgment on three families of stylistic evidence: layout features such as "
    "indentation, spacing, and brace placement; lexical features such as identifier naming, "
    "literals, and comments; and syntactic features such as control-flow constructs and "
    "declaration patterns.";

inline constexpr std::string_view kGuidanceP3 =
    "Analyze the full range of stylistic and structural characteristics, including: commenting "
    "style and density; indentation patterns and whitespace habits; brace and line-break "
    "placement; identifier naming conventions and typical name length; preference for particular "
    "language constructs; the frequency of specific functions or libraries used; code "
    "organization and declaration order; and any other recurring author-specific habits. Weigh "
    "consistent habits more heavily than content-specific choices.";

inline constexpr std::string_view kVerifyBody =
    "Determine whether the following two code samples were written by the same author.\n"
    "\n"
    "{adversarial_note}\n"
    "\n"
    "{feature_guidance}\n"
    "\n"
    "Code sample 1:\n"
    "{code_1}\n"
    "\n"
    "Code sample 2:\n"
    "{code_2}\n";

inline constexpr std::string_view kAttributeBody =
    "Identify the author of the following code snippet from among these candidates: "
    "{candidate_list}. Reference code samples for each candidate author are provided below. "
    "Decide which candidate wrote the query code, or whether none of them did.\n"
    "\n"
    "{adversarial_note}\n"
    "\n"
    "{feature_guidance}\n"
    "\n"
    "{references}"
    "Query code:\n"
    "{query_code}\n";

inline constexpr std::string_view kTournamentBody =
    "Identify which of these candidate authors most likely wrote the query code snippet: "
    "{candidate_list}. Reference code samples for each candidate author are provided below. "
    "Choose the single most similar candidate.\n"
    "\n"
    "{adversarial_note}\n"
    "\n"
    "{feature_guidance}\n"
    "\n"
    "{references}"
    "Query code:\n"
    "{query_code}\n";

// Constrained answer formats, appended to every prompt so parsing has a
// declared contract.
inline constexpr std::string_view kVerifyInstruction =
    "State your conclusion on the final line in exactly this format:\n"
    "ANSWER: yes|no|unsure";

inline constexpr std::string_view kAttributeInstruction =
    "State your conclusion on the final line in exactly this format:\n"
    "ANSWER: <candidate label>   (for example \"ANSWER: Author 2\")\n"
    "Write \"ANSWER: none\" if no candidate matches, or \"ANSWER: unsure\" if you cannot decide.";

inline constexpr std::string_view kTournamentInstruction =
    "You must name exactly one candidate. State your conclusion on the final line in exactly "
    "this format:\n"
    "ANSWER: <candidate label>   (for example \"ANSWER: Author 2\")";

inline constexpr std::string_view kFormatReminder =
    "Reminder: reply with exactly one final line of the form \"ANSWER: Author N\", naming one "
    "of the listed candidates.";

inline PromptTemplate default_template(TaskKind kind, TemplateTier tier) {
  PromptTemplate t;
  t.id = tier;
  t.task_kind = kind;
  switch (kind) {
    case TaskKind::Verify: t.body = kVerifyBody; break;
    case TaskKind::Attribute: t.body = kAttributeBody; break;
    case TaskKind::Tournament: t.body = kTournamentBody; break;
  }
  switch (tier) {
    case TemplateTier::P1: break;
    case TemplateTier::P2: t.feature_guidance = kGuidanceP2; break;
    case TemplateTier::P3: t.feature_guidance = kGuidanceP3; break;
  }
  return t;
}

namespace detail {

inline void require_placeholders(const PromptTemplate& t) {
  auto need = [&](std::string_view name) {
    if (t.body.find(name) == std::string::npos)
      throw TemplateError("template " + to_string(t.task_kind) + "_" + to_string(t.id) +
                          " is missing required placeholder " + std::string(name));
  };
  if (t.task_kind == TaskKind::Verify) {
    need("{code_1}");
    need("{code_2}");
  } else {
    need("{references}");
    need("{query_code}");
  }
}

}  // namespace detail

// Loads <dir>/<task_kind>_<tier-lowercase>.txt; file content becomes the body.
inline PromptTemplate load_template_file(const std::filesystem::path& dir, TaskKind kind,
                                         TemplateTier tier) {
  const std::string file = to_string(kind) + "_" + to_lower(to_string(tier)) + ".txt";
  PromptTemplate t;
  t.id = tier;
  t.task_kind = kind;
  try {
    t.body = read_file(dir / file);
  } catch (const std::exception& e) {
    throw TemplateError(e.what());
  }
  detail::require_placeholders(t);
  return t;
}

// Returns the override file when the directory provides one, otherwise the
// built-in default.
inline PromptTemplate resolve_template(const std::optional<std::filesystem::path>& dir,
                                       TaskKind kind, TemplateTier tier) {
  if (dir) {
    const std::string file = to_string(kind) + "_" + to_lower(to_string(tier)) + ".txt";
    if (std::filesystem::exists(*dir / file)) return load_template_file(*dir, kind, tier);
  }
  return default_template(kind, tier);
}

inline std::string resolve_adversarial_note(const std::optional<std::filesystem::path>& dir) {
  if (dir && std::filesystem::exists(*dir / "adversarial_note.txt")) {
    std::string text = read_file(*dir / "adversarial_note.txt");
    while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
    return text;
  }
  return std::string(kAdversarialNote);
}

// ---------------------------------------------------------------------------
// Token estimation and budgets
// ---------------------------------------------------------------------------

inline constexpr std::size_t kReservedOutputTokens = 256;

// ceil(bytes / 4): conservative, deterministic, tokenizer-free. Models with
// denser tokenizers can override the divisor per config.
inline std::size_t estimate_tokens(std::string_view text, std::size_t bytes_per_token = 4) {
  if (bytes_per_token == 0) throw ConfigError("bytes_per_token must be positive");
  return (text.size() + bytes_per_token - 1) / bytes_per_token;
}

struct RenderedPrompt {
  std::string text;
  std::size_t token_estimate = 0;
  std::uint64_t case_fingerprint = 0;
};

struct BudgetCheck {
  bool ok = true;
  std::size_t token_estimate = 0;
  std::size_t reserved_output = 0;
  std::size_t limit = 0;

  std::string detail() const {
    return "token estimate " + std::to_string(token_estimate) + " + reserved output " +
           std::to_string(reserved_output) + (ok ? " fits limit " : " exceeds limit ") +
           std::to_string(limit);
  }
};

// Re-estimate for a model whose tokenizer density differs from the default.
inline RenderedPrompt with_token_scale(RenderedPrompt p, std::size_t bytes_per_token) {
  p.token_estimate = estimate_tokens(p.text, bytes_per_token);
  return p;
}

// Never dispatches; only measures.
inline BudgetCheck check_budget(const RenderedPrompt& p, std::size_t limit,
                                std::size_t reserved_output = kReservedOutputTokens) {
  if (limit == 0) throw ConfigError("token limit must be positive");
  BudgetCheck b;
  b.token_estimate = p.token_estimate;
  b.reserved_output = reserved_output;
  b.limit = limit;
  b.ok = p.token_estimate + reserved_output <= limit;
  return b;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

// Label used inside prompts for the i-th presented candidate (1-based).
inline std::string author_label(std::size_t index) { return "Author " + std::to_string(index); }

// Bijection between presented labels and author ids for one prompt.
struct LabelMap {
  std::vector<AuthorId> by_index;  // label "Author i" -> by_index[i-1]

  std::size_t size() const { return by_index.size(); }

  std::optional<AuthorId> author_for(std::size_t label_number) const {
    if (label_number == 0 || label_number > by_index.size()) return std::nullopt;
    return by_index[label_number - 1];
  }

  std::optional<std::size_t> label_for(const AuthorId& a) const {
    for (std::size_t i = 0; i < by_index.size(); ++i)
      if (by_index[i] == a) return i + 1;
    return std::nullopt;
  }
};

struct RenderedAttribution {
  RenderedPrompt prompt;
  LabelMap labels;
};

namespace detail {

// Sample text goes between the fences byte-for-byte; a newline is added
// before the closing fence only when the text does not end with one.
inline std::string fenced(std::string_view code) {
  std::string out = "```\n";
  out += code;
  if (code.empty() || code.back() != '\n') out += '\n';
  out += "```";
  return out;
}

// Paragraph slots vanish together with their trailing blank line when the
// substituted value is empty.
inline void substitute_paragraph(std::string& text, std::string_view name, std::string_view value) {
  const std::string slot_with_break = std::string(name) + "\n\n";
  if (value.empty()) {
    replace_all(text, slot_with_break, "");
    replace_all(text, name, "");
  } else {
    replace_all(text, name, value);
  }
}

inline std::string finish(std::string text, std::string_view instruction) {
  while (!text.empty() && text.back() == '\n') text.pop_back();
  text += "\n\n";
  text += instruction;
  text += '\n';
  return text;
}

inline RenderedPrompt rendered(std::string text, std::uint64_t fingerprint) {
  RenderedPrompt p;
  p.token_estimate = estimate_tokens(text);
  p.text = std::move(text);
  p.case_fingerprint = fingerprint;
  return p;
}

}  // namespace detail

inline RenderedPrompt render_verification(const PromptTemplate& t, const VerificationCase& c,
                                          bool adversarial_aware,
                                          std::string_view note = kAdversarialNote) {
  if (t.task_kind != TaskKind::Verify)
    throw TemplateError("render_verification needs a verify template, got " +
                        to_string(t.task_kind));
  detail::require_placeholders(t);

  std::string text = t.body;
  detail::substitute_paragraph(text, "{adversarial_note}", adversarial_aware ? note : "");
  detail::substitute_paragraph(text, "{feature_guidance}", t.feature_guidance);
  replace_all(text, "{code_1}", detail::fenced(c.left.text));
  replace_all(text, "{code_2}", detail::fenced(c.right.text));

  std::uint64_t fp = fnv1a64_field(to_string(t.id), kFnvOffset);
  fp = fnv1a64_field(c.left.text, fp);
  fp = fnv1a64_field(c.right.text, fp);
  fp = fnv1a64_field(adversarial_aware ? "adv" : "plain", fp);
  return detail::rendered(detail::finish(std::move(text), kVerifyInstruction), fp);
}

namespace detail {

struct ReferenceView {
  const AuthorId* author;
  std::vector<const CodeSample*> shots;
};

inline RenderedAttribution render_candidates(const PromptTemplate& t,
                                             std::vector<ReferenceView> candidates,
                                             const CodeSample& query, std::uint64_t shuffle_seed,
                                             bool adversarial_aware, std::string_view note,
                                             std::string_view instruction) {
  // Presentation order is a seeded shuffle keyed by the case content, so the
  // same case renders identically across runs.
  std::uint64_t fp = fnv1a64_field(to_string(t.id), kFnvOffset);
  fp = fnv1a64_field(query.text, fp);
  for (const auto& cand : candidates) {
    fp = fnv1a64_field(*cand.author, fp);
    for (const auto* s : cand.shots) fp = fnv1a64_field(s->text, fp);
  }
  DetRng rng(shuffle_seed ^ fp);
  rng.shuffle(candidates);

  LabelMap labels;
  std::string candidate_list;
  std::string references;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    labels.by_index.push_back(*candidates[i].author);
    if (i > 0) candidate_list += ", ";
    candidate_list += author_label(i + 1);
    for (std::size_t j = 0; j < candidates[i].shots.size(); ++j) {
      references += author_label(i + 1) + ", reference " + std::to_string(j + 1) + ":\n";
      references += fenced(candidates[i].shots[j]->text);
      references += "\n\n";
    }
  }

  std::string text = t.body;
  substitute_paragraph(text, "{adversarial_note}", adversarial_aware ? note : "");
  substitute_paragraph(text, "{feature_guidance}", t.feature_guidance);
  replace_all(text, "{candidate_list}", candidate_list);
  replace_all(text, "{references}", references);
  replace_all(text, "{query_code}", fenced(query.text));

  RenderedAttribution out;
  out.prompt = rendered(finish(std::move(text), instruction), fp);
  out.labels = std::move(labels);
  return out;
}

}  // namespace detail

inline RenderedAttribution render_attribution(const PromptTemplate& t, const AttributionCase& c,
                                              std::uint64_t shuffle_seed,
                                              bool adversarial_aware = false,
                                              std::string_view note = kAdversarialNote) {
  if (t.task_kind != TaskKind::Attribute)
    throw TemplateError("render_attribution needs an attribute template, got " +
                        to_string(t.task_kind));
  if (c.references.empty()) throw TemplateError("attribution case has no references");
  detail::require_placeholders(t);

  std::vector<detail::ReferenceView> candidates;
  candidates.reserve(c.references.size());
  for (const auto& [author, shots] : c.references) {
    detail::ReferenceView v{&author, {}};
    for (const auto& s : shots) v.shots.push_back(&s);
    candidates.push_back(std::move(v));
  }
  return detail::render_candidates(t, std::move(candidates), c.query, shuffle_seed,
                                   adversarial_aware, note, kAttributeInstruction);
}

// Subset entries are (author, references); subset must not exceed max_subset.
inline RenderedAttribution render_tournament(
    const PromptTemplate& t,
    const std::vector<std::pair<AuthorId, std::vector<const CodeSample*>>>& subset,
    const CodeSample& query, std::size_t max_subset, std::uint64_t shuffle_seed) {
  if (t.task_kind != TaskKind::Tournament)
    throw TemplateError("render_tournament needs a tournament template, got " +
                        to_string(t.task_kind));
  if (subset.empty()) throw TemplateError("tournament subset is empty");
  if (subset.size() > max_subset)
    throw TemplateError("tournament subset of " + std::to_string(subset.size()) +
                        " exceeds configured maximum " + std::to_string(max_subset));
  detail::require_placeholders(t);

  std::vector<detail::ReferenceView> candidates;
  candidates.reserve(subset.size());
  for (const auto& [author, shots] : subset) candidates.push_back({&author, shots});
  return detail::render_candidates(t, std::move(candidates), query, shuffle_seed,
                                   /*adversarial_aware=*/false, kAdversarialNote,
                                   kTournamentInstruction);
}

// All placeholder names the renderer knows; used by tests and template lint.
inline const std::vector<std::string>& known_placeholders() {
  static const std::vector<std::string> names = {
      "{code_1}",        "{code_2}",          "{references}", "{query_code}",
      "{candidate_list}", "{adversarial_note}", "{feature_guidance}"};
  return names;
}

}  // namespace codattr
