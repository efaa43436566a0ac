#pragma once

// Elimination attribution over large author pools: the pool is shuffled
// once, split into balanced subsets, one attribution query selects each
// subset's winner, and the winners recurse until a single author remains.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "codattr/backend.hpp"
#include "codattr/corpus.hpp"
#include "codattr/metrics.hpp"
#include "codattr/prompts.hpp"
#include "codattr/verdicts.hpp"

namespace codattr {

struct TournamentConfig {
  std::size_t subset_size = 12;
  std::size_t shots_per_author = 1;
  TemplateTier tier = TemplateTier::P1;
  std::uint64_t seed = 0;
  std::size_t token_limit = 16000;
  std::size_t reserved_output_tokens = kReservedOutputTokens;
  std::size_t bytes_per_token = 4;
  std::size_t max_in_flight = 1;  // subset concurrency within one round
};

// Author -> reference samples, fixed once per run.
using ReferenceSet = std::map<AuthorId, std::vector<CodeSample>>;

struct SubsetOutcome {
  std::size_t round = 0;  // 0-based elimination round
  std::vector<AuthorId> members;
  AuthorId winner;
  std::vector<std::string> record_keys;  // cache keys of the queries issued
  bool bye = false;                      // singleton subset, no query
  bool forced_win = false;               // both parses indeterminate
};

struct TournamentResult {
  std::string query_id;
  AuthorId query_author;
  std::vector<std::vector<AuthorId>> rounds;  // survivor sets; rounds[0] = shuffled pool
  AuthorId winner;
  std::vector<SubsetOutcome> subset_log;

  std::size_t queries_issued() const {
    std::size_t n = 0;
    for (const auto& s : subset_log) n += s.record_keys.size();
    return n;
  }

  std::size_t forced_wins() const {
    std::size_t n = 0;
    for (const auto& s : subset_log)
      if (s.forced_win) ++n;
    return n;
  }
};

// Balanced contiguous split: ceil(n/size) groups whose sizes differ by at
// most one, preserving pool order.
inline std::vector<std::vector<AuthorId>> partition(const std::vector<AuthorId>& pool,
                                                    std::size_t subset_size) {
  if (pool.empty()) throw std::invalid_argument("partition: empty pool");
  if (subset_size < 2) throw std::invalid_argument("partition: subset size must be >= 2");
  const std::size_t n = pool.size();
  const std::size_t groups = (n + subset_size - 1) / subset_size;
  const std::size_t base = n / groups;
  const std::size_t extra = n % groups;  // first `extra` groups get one more

  std::vector<std::vector<AuthorId>> subsets;
  subsets.reserve(groups);
  std::size_t at = 0;
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t len = base + (g < extra ? 1 : 0);
    subsets.emplace_back(pool.begin() + static_cast<std::ptrdiff_t>(at),
                         pool.begin() + static_cast<std::ptrdiff_t>(at + len));
    at += len;
  }
  return subsets;
}

// Survivor-set sizes a pool of n produces, without running anything.
inline std::vector<std::size_t> survivor_counts(std::size_t pool_size, std::size_t subset_size) {
  std::vector<std::size_t> counts{pool_size};
  while (counts.back() > 1) {
    counts.push_back((counts.back() + subset_size - 1) / subset_size);
  }
  return counts;
}

// One subset query. Singletons win a bye without touching the backend. An
// indeterminate reply is retried once with a format reminder appended; if
// still indeterminate, the first author in subset order wins by decree and
// the outcome is flagged.
inline SubsetOutcome run_subset(const CodeSample& query, const std::vector<AuthorId>& subset,
                                const ReferenceSet& refs, const TournamentConfig& cfg,
                                CachingClient& client, const PromptTemplate& tmpl,
                                const std::string& model, std::size_t round,
                                std::uint64_t shuffle_seed) {
  SubsetOutcome outcome;
  outcome.round = round;
  outcome.members = subset;
  if (subset.empty()) throw std::invalid_argument("run_subset: empty subset");
  if (subset.size() == 1) {
    outcome.winner = subset.front();
    outcome.bye = true;
    return outcome;
  }

  std::vector<std::pair<AuthorId, std::vector<const CodeSample*>>> views;
  views.reserve(subset.size());
  for (const auto& author : subset) {
    auto it = refs.find(author);
    if (it == refs.end() || it->second.size() < cfg.shots_per_author)
      throw CorpusError("tournament: author \"" + author + "\" lacks " +
                        std::to_string(cfg.shots_per_author) + " reference samples");
    std::vector<const CodeSample*> shots;
    for (std::size_t i = 0; i < cfg.shots_per_author; ++i) shots.push_back(&it->second[i]);
    views.emplace_back(author, std::move(shots));
  }

  const RenderedAttribution rendered =
      render_tournament(tmpl, views, query, cfg.subset_size, shuffle_seed);
  const BudgetCheck budget = check_budget(with_token_scale(rendered.prompt, cfg.bytes_per_token),
                                          cfg.token_limit, cfg.reserved_output_tokens);
  if (!budget.ok)
    throw ConfigError("tournament subset prompt over budget: " + budget.detail());

  ChatRequest request;
  request.model = model;
  request.user_text = rendered.prompt.text;
  request.max_output_tokens = cfg.reserved_output_tokens;

  ChatResponse response = client.complete(request);
  outcome.record_keys.push_back(request_cache_key(request));
  AttributionVerdict verdict = parse_attribution(response.text, rendered.labels);

  if (verdict.kind != AttributionKind::Chosen) {
    ChatRequest retry = request;
    retry.user_text += "\n";
    retry.user_text += kFormatReminder;
    retry.user_text += "\n";
    response = client.complete(retry);
    outcome.record_keys.push_back(request_cache_key(retry));
    verdict = parse_attribution(response.text, rendered.labels);
  }

  if (verdict.kind == AttributionKind::Chosen) {
    outcome.winner = verdict.author;
  } else {
    outcome.winner = subset.front();
    outcome.forced_win = true;
  }
  return outcome;
}

// Full elimination run for one query. The pool is shuffled once with a seed
// derived from (cfg.seed, query identity); survivors keep their relative
// order afterwards, so replays are byte-identical.
inline TournamentResult run_tournament(const CodeSample& query, const std::vector<AuthorId>& pool,
                                       const ReferenceSet& refs, const TournamentConfig& cfg,
                                       CachingClient& client, const PromptTemplate& tmpl,
                                       const std::string& model) {
  if (pool.empty()) throw std::invalid_argument("run_tournament: empty pool");
  if (cfg.subset_size < 2) throw ConfigError("tournament subset_size must be >= 2");

  TournamentResult result;
  result.query_id = query.id();
  result.query_author = query.author;

  std::vector<AuthorId> survivors = pool;
  const std::uint64_t query_salt = fnv1a64_field(query.id(), cfg.seed);
  DetRng(query_salt).shuffle(survivors);
  result.rounds.push_back(survivors);

  std::size_t round = 0;
  while (survivors.size() > 1) {
    const auto subsets = partition(survivors, cfg.subset_size);
    auto outcomes = parallel_map_indexed<SubsetOutcome>(
        subsets.size(), cfg.max_in_flight, [&](std::size_t si) {
          const std::uint64_t shuffle_seed =
              fnv1a64_field(std::to_string(round) + ":" + std::to_string(si), query_salt);
          return run_subset(query, subsets[si], refs, cfg, client, tmpl, model, round,
                            shuffle_seed);
        });

    std::vector<AuthorId> winners;
    winners.reserve(subsets.size());
    for (auto& o : outcomes) {
      result.subset_log.push_back(std::move(*o));
      winners.push_back(result.subset_log.back().winner);
    }
    survivors = std::move(winners);
    result.rounds.push_back(survivors);
    ++round;
  }
  result.winner = survivors.front();
  return result;
}

// Largest round index whose survivor set still contains the true author.
inline std::size_t survival_round(const TournamentResult& result, const AuthorId& true_author) {
  bool in_pool = false;
  for (const auto& a : result.rounds.front())
    if (a == true_author) in_pool = true;
  if (!in_pool)
    throw std::invalid_argument("survival_round: author \"" + true_author +
                                "\" was not in the starting pool");
  std::size_t last = 0;
  for (std::size_t i = 1; i < result.rounds.size(); ++i) {
    bool present = false;
    for (const auto& a : result.rounds[i])
      if (a == true_author) present = true;
    if (!present) break;
    last = i;
  }
  return last;
}

inline double round_accuracy(const std::vector<TournamentResult>& results,
                             const std::vector<AuthorId>& truths, std::size_t round) {
  if (results.size() != truths.size())
    throw std::invalid_argument("round_accuracy: results/truths size mismatch");
  std::vector<std::size_t> survival;
  survival.reserve(results.size());
  for (std::size_t i = 0; i < results.size(); ++i)
    survival.push_back(survival_round(results[i], truths[i]));
  return round_accuracy(survival, round);
}

// ---------------------------------------------------------------------------
// Persistence (one JSON file per query)
// ---------------------------------------------------------------------------

inline void to_json(nlohmann::json& j, const SubsetOutcome& o) {
  j = {{"round", o.round},         {"members", o.members},
       {"winner", o.winner},       {"record_keys", o.record_keys},
       {"bye", o.bye},             {"forced_win", o.forced_win}};
}

inline void from_json(const nlohmann::json& j, SubsetOutcome& o) {
  j.at("round").get_to(o.round);
  j.at("members").get_to(o.members);
  j.at("winner").get_to(o.winner);
  j.at("record_keys").get_to(o.record_keys);
  j.at("bye").get_to(o.bye);
  j.at("forced_win").get_to(o.forced_win);
}

inline void to_json(nlohmann::json& j, const TournamentResult& r) {
  j = {{"query_id", r.query_id},
       {"query_author", r.query_author},
       {"rounds", r.rounds},
       {"winner", r.winner},
       {"subset_log", r.subset_log}};
}

inline void from_json(const nlohmann::json& j, TournamentResult& r) {
  j.at("query_id").get_to(r.query_id);
  j.at("query_author").get_to(r.query_author);
  j.at("rounds").get_to(r.rounds);
  j.at("winner").get_to(r.winner);
  j.at("subset_log").get_to(r.subset_log);
}

}  // namespace codattr
