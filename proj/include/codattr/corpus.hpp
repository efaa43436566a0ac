#pragma once

// Author-labeled source corpora: loading from disk, LoC/language filtering,
// and sampling of verification / attribution / adversarial test cases.

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "codattr/util.hpp"

namespace codattr {

using AuthorId = std::string;

// ---------------------------------------------------------------------------
// Language
// ---------------------------------------------------------------------------

enum class LanguageKind { Cpp, Java, Other };

struct Language {
  LanguageKind kind = LanguageKind::Other;
  std::string name;  // set for Other

  static Language cpp() { return {LanguageKind::Cpp, {}}; }
  static Language java() { return {LanguageKind::Java, {}}; }
  static Language other(std::string n) { return {LanguageKind::Other, std::move(n)}; }

  bool operator==(const Language& rhs) const {
    return kind == rhs.kind && (kind != LanguageKind::Other || name == rhs.name);
  }
};

inline std::string to_string(const Language& l) {
  switch (l.kind) {
    case LanguageKind::Cpp: return "cpp";
    case LanguageKind::Java: return "java";
    case LanguageKind::Other: return l.name.empty() ? "other" : l.name;
  }
  return "other";
}

inline Language language_from_string(std::string_view s) {
  const std::string v = to_lower(trim(s));
  if (v == "cpp" || v == "c++" || v == "cxx") return Language::cpp();
  if (v == "java") return Language::java();
  return Language::other(v);
}

inline Language language_from_extension(const std::filesystem::path& p) {
  const std::string ext = to_lower(p.extension().string());
  if (ext == ".cpp" || ext == ".cc" || ext == ".cxx" || ext == ".c" || ext == ".h" ||
      ext == ".hpp" || ext == ".hh")
    return Language::cpp();
  if (ext == ".java") return Language::java();
  return Language::other(ext.empty() ? "unknown" : ext.substr(1));
}

// ---------------------------------------------------------------------------
// Samples and corpus
// ---------------------------------------------------------------------------

// Physical newline-delimited lines, blanks included.
inline std::size_t count_physical_lines(std::string_view text) {
  if (text.empty()) return 0;
  std::size_t lines = 0;
  for (char c : text)
    if (c == '\n') ++lines;
  if (text.back() != '\n') ++lines;
  return lines;
}

struct CodeSample {
  AuthorId author;
  std::string task;      // problem/file identifier; file stem for directory layouts
  Language language;
  std::string text;
  std::size_t loc = 0;   // == count_physical_lines(text)
  std::string source_path;  // corpus-relative origin, for pairing manifests

  std::string id() const { return author + "/" + task; }
};

inline CodeSample make_sample(AuthorId author, std::string task, Language language,
                              std::string text, std::string source_path = {}) {
  if (text.empty()) throw CorpusError("sample text is empty: " + author + "/" + task);
  if (author.empty()) throw CorpusError("sample has empty author id: " + task);
  CodeSample s;
  s.author = std::move(author);
  s.task = std::move(task);
  s.language = std::move(language);
  s.loc = count_physical_lines(text);
  s.text = std::move(text);
  s.source_path = std::move(source_path);
  return s;
}

class Corpus {
 public:
  Corpus() = default;

  static Corpus from_samples(std::vector<CodeSample> samples) {
    if (samples.empty()) throw CorpusError("EmptyCorpus: no samples");
    Corpus c;
    c.samples_ = std::move(samples);
    for (std::size_t i = 0; i < c.samples_.size(); ++i) {
      c.index_[c.samples_[i].author].push_back(i);
    }
    return c;
  }

  const std::vector<CodeSample>& samples() const { return samples_; }
  std::size_t size() const { return samples_.size(); }

  // Partition of sample indices by author.
  const std::map<AuthorId, std::vector<std::size_t>>& index() const { return index_; }

  const std::vector<std::size_t>& samples_of(const AuthorId& a) const {
    auto it = index_.find(a);
    if (it == index_.end()) throw CorpusError("unknown author: " + a);
    return it->second;
  }

  bool has_author(const AuthorId& a) const { return index_.count(a) != 0; }

  std::vector<AuthorId> authors() const {
    std::vector<AuthorId> out;
    out.reserve(index_.size());
    for (const auto& [a, _] : index_) out.push_back(a);
    return out;
  }

 private:
  std::vector<CodeSample> samples_;
  std::map<AuthorId, std::vector<std::size_t>> index_;
};

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

enum class CorpusLayout { AuthorDirs, ManifestFile };

struct SkippedFile {
  std::string path;
  std::string reason;
};

struct LoadOutcome {
  Corpus corpus;
  std::vector<SkippedFile> skipped;
};

namespace detail {

inline bool file_readable_text(const std::filesystem::path& p, std::string& out,
                               std::string& reason) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(p, ec)) {
    reason = "missing or not a regular file";
    return false;
  }
  try {
    out = read_file(p);
  } catch (const std::exception& e) {
    reason = e.what();
    return false;
  }
  if (out.empty()) {
    reason = "empty file";
    return false;
  }
  if (!is_valid_utf8(out)) {
    reason = "not valid UTF-8";
    return false;
  }
  return true;
}

}  // namespace detail

// AuthorDirs layout: <root>/<author_id>/<files>. ManifestFile layout: `root`
// is a JSON array of {author, task, path, language} rows, paths relative to
// the manifest's directory. Unreadable and non-UTF-8 files are skipped and
// reported. Samples are ordered lexicographically by (author, path).
inline LoadOutcome load_corpus(const std::filesystem::path& root, CorpusLayout layout) {
  namespace fs = std::filesystem;
  LoadOutcome out;
  std::vector<CodeSample> samples;

  if (layout == CorpusLayout::AuthorDirs) {
    std::error_code ec;
    if (!fs::is_directory(root, ec)) throw CorpusError("corpus root missing: " + root.string());
    std::vector<fs::path> author_dirs;
    for (const auto& entry : fs::directory_iterator(root)) {
      if (entry.is_directory()) author_dirs.push_back(entry.path());
    }
    std::sort(author_dirs.begin(), author_dirs.end());
    for (const auto& dir : author_dirs) {
      const std::string author = dir.filename().string();
      std::vector<fs::path> files;
      for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file()) files.push_back(entry.path());
      }
      std::sort(files.begin(), files.end());
      for (const auto& f : files) {
        std::string text, reason;
        if (!detail::file_readable_text(f, text, reason)) {
          out.skipped.push_back({f.string(), reason});
          continue;
        }
        samples.push_back(make_sample(author, f.stem().string(), language_from_extension(f),
                                      std::move(text),
                                      fs::relative(f, root, ec).generic_string()));
      }
    }
  } else {
    std::string manifest_text, reason;
    if (!detail::file_readable_text(root, manifest_text, reason))
      throw CorpusError("manifest unreadable: " + root.string() + " (" + reason + ")");
    nlohmann::json rows;
    try {
      rows = nlohmann::json::parse(manifest_text);
    } catch (const nlohmann::json::exception& e) {
      throw CorpusError("manifest parse error: " + root.string() + ": " + e.what());
    }
    if (!rows.is_array()) throw CorpusError("manifest must be a JSON array: " + root.string());
    const fs::path base = root.parent_path();
    for (const auto& row : rows) {
      std::string rel;
      try {
        rel = row.at("path").get<std::string>();
        const fs::path p = base / rel;
        std::string text;
        if (!detail::file_readable_text(p, text, reason)) {
          out.skipped.push_back({rel, reason});
          continue;
        }
        samples.push_back(make_sample(row.at("author").get<std::string>(),
                                      row.at("task").get<std::string>(),
                                      language_from_string(row.at("language").get<std::string>()),
                                      std::move(text), rel));
      } catch (const nlohmann::json::exception& e) {
        throw CorpusError("manifest row invalid in " + root.string() + ": " + e.what());
      }
    }
  }

  std::sort(samples.begin(), samples.end(), [](const CodeSample& a, const CodeSample& b) {
    if (a.author != b.author) return a.author < b.author;
    return a.source_path < b.source_path;
  });
  if (samples.empty())
    throw CorpusError("EmptyCorpus: no readable samples under " + root.string());
  out.corpus = Corpus::from_samples(std::move(samples));
  return out;
}

// ---------------------------------------------------------------------------
// Filtering
// ---------------------------------------------------------------------------

inline constexpr std::size_t kNoLocLimit = static_cast<std::size_t>(-1);

struct FilterCriteria {
  std::size_t min_loc = 0;
  std::size_t max_loc = kNoLocLimit;
  std::size_t min_files_per_author = 1;
  Language language;
};

// Keeps samples with min_loc <= loc <= max_loc and a matching language, then
// drops authors whose retained count falls below min_files_per_author.
// Relative order is preserved. Applying the same filter twice is a no-op.
inline Corpus filter_corpus(const Corpus& c, const FilterCriteria& f) {
  if (f.min_loc > f.max_loc) throw ConfigError("filter: min_loc > max_loc");
  if (f.min_files_per_author == 0) throw ConfigError("filter: min_files_per_author must be positive");

  std::map<AuthorId, std::size_t> per_author;
  std::vector<const CodeSample*> kept;
  for (const auto& s : c.samples()) {
    if (s.loc < f.min_loc || s.loc > f.max_loc) continue;
    if (!(s.language == f.language)) continue;
    kept.push_back(&s);
    ++per_author[s.author];
  }
  std::vector<CodeSample> retained;
  for (const CodeSample* s : kept) {
    if (per_author[s->author] >= f.min_files_per_author) retained.push_back(*s);
  }
  if (retained.empty()) throw CorpusError("EmptyCorpus: filter removed every sample");
  return Corpus::from_samples(std::move(retained));
}

// ---------------------------------------------------------------------------
// Verification cases
// ---------------------------------------------------------------------------

enum class PairExpected { Same, Different };

struct VerificationCase {
  CodeSample left;
  CodeSample right;
  PairExpected expected = PairExpected::Same;  // Same <=> left.author == right.author
};

namespace detail {

// Distinct cross-task pairs available per category, for precise errors.
inline std::size_t count_same_author_pairs(const Corpus& c) {
  std::size_t total = 0;
  for (const auto& [author, idxs] : c.index()) {
    std::map<std::string, std::size_t> per_task;
    for (std::size_t i : idxs) ++per_task[c.samples()[i].task];
    const std::size_t n = idxs.size();
    std::size_t same_task = 0;
    for (const auto& [_, m] : per_task) same_task += m * (m - 1) / 2;
    total += n * (n - 1) / 2 - same_task;
  }
  return total;
}

inline std::size_t count_diff_author_pairs(const Corpus& c) {
  const std::size_t n = c.size();
  std::size_t same_author_sq = 0;
  for (const auto& [_, idxs] : c.index()) same_author_sq += idxs.size() * idxs.size();
  const std::size_t cross_author = (n * n - same_author_sq) / 2;

  std::map<std::string, std::size_t> task_total;
  std::map<std::pair<std::string, AuthorId>, std::size_t> task_author;
  for (const auto& s : c.samples()) {
    ++task_total[s.task];
    ++task_author[{s.task, s.author}];
  }
  std::size_t cross_author_same_task = 0;
  for (const auto& [task, m] : task_total) {
    std::size_t within = 0;
    for (const auto& [key, cnt] : task_author) {
      if (key.first == task) within += cnt * cnt;
    }
    cross_author_same_task += (m * m - within) / 2;
  }
  return cross_author - cross_author_same_task;
}

}  // namespace detail

// Exactly n_same same-author and n_diff different-author pairs, each pair
// drawn from different tasks, without repeating a pair. Deterministic in
// (corpus, parameters, seed).
inline std::vector<VerificationCase> sample_verification_cases(const Corpus& c,
                                                               std::size_t n_same,
                                                               std::size_t n_diff,
                                                               std::uint64_t seed) {
  DetRng rng(fnv1a64_field("verification-cases", seed));
  const auto& samples = c.samples();
  std::vector<AuthorId> authors = c.authors();

  std::set<std::pair<std::size_t, std::size_t>> used;  // unordered (min,max) sample indices
  std::vector<VerificationCase> cases;
  cases.reserve(n_same + n_diff);

  auto try_take = [&](std::size_t li, std::size_t ri, PairExpected expected) {
    if (li == ri) return false;
    const std::pair<std::size_t, std::size_t> key{std::min(li, ri), std::max(li, ri)};
    if (used.count(key)) return false;
    const CodeSample& l = samples[li];
    const CodeSample& r = samples[ri];
    if (l.task == r.task) return false;
    const bool same = l.author == r.author;
    if (same != (expected == PairExpected::Same)) return false;
    used.insert(key);
    cases.push_back({l, r, expected});
    return true;
  };

  auto fill = [&](std::size_t want, PairExpected expected, std::string_view what,
                  std::size_t available) {
    if (want == 0) return;
    if (available < want)
      throw CorpusError("InsufficientData: requested " + std::to_string(want) + " " +
                        std::string(what) + " pairs but corpus offers only " +
                        std::to_string(available));
    std::size_t made = 0;
    std::size_t attempts = 0;
    const std::size_t budget = 1000 + 500 * want;
    while (made < want && attempts < budget) {
      ++attempts;
      std::size_t li, ri;
      if (expected == PairExpected::Same) {
        const AuthorId& a = authors[rng.below(authors.size())];
        const auto& idxs = c.samples_of(a);
        if (idxs.size() < 2) continue;
        li = idxs[rng.below(idxs.size())];
        ri = idxs[rng.below(idxs.size())];
      } else {
        li = rng.below(samples.size());
        ri = rng.below(samples.size());
      }
      if (try_take(li, ri, expected)) ++made;
    }
    if (made < want) {
      // Rejection sampling stalled; finish by deterministic enumeration of
      // the remaining pairs in shuffled order.
      std::vector<std::pair<std::size_t, std::size_t>> all;
      for (std::size_t i = 0; i < samples.size(); ++i) {
        for (std::size_t j = i + 1; j < samples.size(); ++j) {
          const bool same = samples[i].author == samples[j].author;
          if (same != (expected == PairExpected::Same)) continue;
          if (samples[i].task == samples[j].task) continue;
          if (used.count({i, j})) continue;
          all.emplace_back(i, j);
        }
      }
      rng.shuffle(all);
      for (const auto& [i, j] : all) {
        if (made >= want) break;
        if (try_take(i, j, expected)) ++made;
      }
      if (made < want)
        throw CorpusError("InsufficientData: requested " + std::to_string(want) + " " +
                          std::string(what) + " pairs but corpus offers only " +
                          std::to_string(available));
    }
  };

  fill(n_same, PairExpected::Same, "same-author", detail::count_same_author_pairs(c));
  fill(n_diff, PairExpected::Different, "different-author", detail::count_diff_author_pairs(c));
  return cases;
}

// ---------------------------------------------------------------------------
// Attribution cases
// ---------------------------------------------------------------------------

struct AttributionCase {
  // Candidate authors in deterministic (sorted) order; presentation order is
  // shuffled at prompt-render time.
  std::vector<std::pair<AuthorId, std::vector<CodeSample>>> references;
  CodeSample query;
  std::optional<AuthorId> expected;  // nullopt = none of the candidates

  std::size_t shots() const { return references.empty() ? 0 : references.front().second.size(); }
};

// n_in in-distribution and n_out out-of-distribution cases with k candidate
// authors and n reference samples each; the query is always from a task
// unseen among its author's references.
inline std::vector<AttributionCase> sample_attribution_cases(const Corpus& c, std::size_t k,
                                                             std::size_t n, std::size_t n_in,
                                                             std::size_t n_out,
                                                             std::uint64_t seed) {
  if (k == 0 || n == 0) throw ConfigError("attribution sampling: k and n must be positive");
  DetRng rng(fnv1a64_field("attribution-cases", seed));
  const auto& samples = c.samples();

  // Authors able to contribute n references.
  std::vector<AuthorId> ref_authors;
  // Per author: query candidates q such that >= n own samples have task != q.task.
  std::map<AuthorId, std::vector<std::size_t>> query_pool;
  for (const auto& [author, idxs] : c.index()) {
    if (idxs.size() >= n) ref_authors.push_back(author);
    if (idxs.size() < n + 1) continue;
    for (std::size_t qi : idxs) {
      std::size_t other_task = 0;
      for (std::size_t ri : idxs)
        if (samples[ri].task != samples[qi].task) ++other_task;
      if (other_task >= n) query_pool[author].push_back(qi);
    }
  }
  std::vector<AuthorId> in_query_authors;
  for (const auto& [a, pool] : query_pool)
    if (!pool.empty()) in_query_authors.push_back(a);

  if (n_in > 0 && in_query_authors.empty())
    throw CorpusError("InsufficientData: no author has " + std::to_string(n + 1) +
                      " samples spanning more than one task");
  if (ref_authors.size() < k)
    throw CorpusError("InsufficientData: need " + std::to_string(k) + " candidate authors with >= " +
                      std::to_string(n) + " samples, corpus has " +
                      std::to_string(ref_authors.size()));
  if (n_out > 0 && ref_authors.size() < k + 1)
    throw CorpusError("InsufficientData: out-of-distribution cases need " + std::to_string(k + 1) +
                      " eligible authors (k candidates plus an outside query author), corpus has " +
                      std::to_string(ref_authors.size()));

  auto pick_refs = [&](const AuthorId& author, const std::string& avoid_task,
                       bool enforce_avoid) -> std::vector<CodeSample> {
    std::vector<std::size_t> eligible;
    for (std::size_t i : c.samples_of(author)) {
      if (enforce_avoid && samples[i].task == avoid_task) continue;
      eligible.push_back(i);
    }
    std::vector<CodeSample> refs;
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t pick = rng.below(eligible.size());
      refs.push_back(samples[eligible[pick]]);
      eligible.erase(eligible.begin() + static_cast<std::ptrdiff_t>(pick));
    }
    return refs;
  };

  auto pick_distinct_authors = [&](std::size_t count, const AuthorId* exclude) {
    std::vector<AuthorId> pool;
    for (const auto& a : ref_authors)
      if (!exclude || a != *exclude) pool.push_back(a);
    rng.shuffle(pool);
    pool.resize(count);
    std::sort(pool.begin(), pool.end());
    return pool;
  };

  std::vector<AttributionCase> cases;
  cases.reserve(n_in + n_out);

  for (std::size_t ci = 0; ci < n_in; ++ci) {
    const AuthorId& qa = in_query_authors[rng.below(in_query_authors.size())];
    const auto& pool = query_pool[qa];
    const CodeSample& query = samples[pool[rng.below(pool.size())]];

    AttributionCase ac;
    ac.query = query;
    ac.expected = qa;
    std::vector<AuthorId> candidates = pick_distinct_authors(k - 1, &qa);
    candidates.push_back(qa);
    std::sort(candidates.begin(), candidates.end());
    for (const auto& a : candidates) {
      const bool is_query_author = (a == qa);
      ac.references.emplace_back(a, pick_refs(a, query.task, is_query_author));
    }
    cases.push_back(std::move(ac));
  }

  for (std::size_t ci = 0; ci < n_out; ++ci) {
    const AuthorId& qa = ref_authors[rng.below(ref_authors.size())];
    const auto& idxs = c.samples_of(qa);
    const CodeSample& query = samples[idxs[rng.below(idxs.size())]];

    AttributionCase ac;
    ac.query = query;
    ac.expected = std::nullopt;
    for (const auto& a : pick_distinct_authors(k, &qa)) {
      ac.references.emplace_back(a, pick_refs(a, query.task, false));
    }
    cases.push_back(std::move(ac));
  }
  return cases;
}

// ---------------------------------------------------------------------------
// Adversarial pairing
// ---------------------------------------------------------------------------

enum class AttackSetting { Evasion, Imitation };

struct PairingRow {
  std::string transformed_path;  // source_path of a sample in the transformed corpus
  AuthorId source_author;        // who actually wrote the transformed code
  AuthorId imitated_author;      // whose style the transformation targets
  AttackSetting setting = AttackSetting::Evasion;
};

inline std::vector<PairingRow> load_pairing_manifest(const std::filesystem::path& path) {
  nlohmann::json rows;
  try {
    rows = nlohmann::json::parse(read_file(path));
  } catch (const std::exception& e) {
    throw CorpusError("pairing manifest unreadable: " + path.string() + ": " + e.what());
  }
  if (!rows.is_array()) throw CorpusError("pairing manifest must be a JSON array");
  std::vector<PairingRow> out;
  for (const auto& row : rows) {
    PairingRow r;
    try {
      r.transformed_path = row.at("transformed_path").get<std::string>();
      r.source_author = row.at("source_author").get<std::string>();
      r.imitated_author = row.at("imitated_author").get<std::string>();
      const std::string s = row.at("setting").get<std::string>();
      if (s == "evasion") {
        r.setting = AttackSetting::Evasion;
      } else if (s == "imitation") {
        r.setting = AttackSetting::Imitation;
      } else {
        throw CorpusError("pairing row has unknown setting \"" + s + "\"");
      }
    } catch (const nlohmann::json::exception& e) {
      throw CorpusError("pairing row invalid: " + std::string(e.what()));
    }
    out.push_back(std::move(r));
  }
  return out;
}

// Evasion rows pair an untouched sample by the source author with the
// transformed file (expected Same: both are really the source author's
// work). Imitation rows pair an untouched sample by the imitated author
// with the transformed file (expected Different). The untouched side is
// always drawn from a different task than the transformed file.
inline std::vector<VerificationCase> build_adversarial_cases(const Corpus& originals,
                                                             const Corpus& transformed,
                                                             const std::vector<PairingRow>& pairing) {
  std::map<std::string, std::size_t> by_path;
  for (std::size_t i = 0; i < transformed.samples().size(); ++i)
    by_path[transformed.samples()[i].source_path] = i;

  std::vector<VerificationCase> cases;
  cases.reserve(pairing.size());
  for (std::size_t row_idx = 0; row_idx < pairing.size(); ++row_idx) {
    const PairingRow& row = pairing[row_idx];
    auto row_name = [&] {
      return "pairing row " + std::to_string(row_idx) + " (" + row.transformed_path + ")";
    };
    auto it = by_path.find(row.transformed_path);
    if (it == by_path.end())
      throw CorpusError(row_name() + ": transformed sample not found");
    const CodeSample& right = transformed.samples()[it->second];

    const bool evasion = row.setting == AttackSetting::Evasion;
    const AuthorId& left_author = evasion ? row.source_author : row.imitated_author;
    if (!originals.has_author(left_author))
      throw CorpusError(row_name() + ": author \"" + left_author + "\" not in originals corpus");

    const CodeSample* left = nullptr;
    for (std::size_t i : originals.samples_of(left_author)) {
      if (originals.samples()[i].task != right.task) {
        left = &originals.samples()[i];
        break;
      }
    }
    if (!left)
      throw CorpusError(row_name() + ": author \"" + left_author +
                        "\" has no original sample from a different task");
    cases.push_back({*left, right, evasion ? PairExpected::Same : PairExpected::Different});
  }
  return cases;
}

}  // namespace codattr
