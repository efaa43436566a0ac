#pragma once

// Experiment runner: loads a TOML config, samples cases, dispatches prompts
// through a caching client, scores the verdicts, and writes a deterministic
// report tree under <output_dir>/<experiment-id>/.
//
// With the mock backend, report.json / cases.csv / summary.csv are a pure
// function of (corpus, config); anything wall-clock-dependent goes to
// run_meta.json, which is excluded from that guarantee.

#include <array>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "codattr/backend.hpp"
#include "codattr/corpus.hpp"
#include "codattr/http_backend.hpp"
#include "codattr/metrics.hpp"
#include "codattr/mock_backend.hpp"
#include "codattr/prompts.hpp"
#include "codattr/toml_lite.hpp"
#include "codattr/tournament.hpp"
#include "codattr/verdicts.hpp"

namespace codattr {

enum class ExperimentKind { Verification, Attribution, Tournament, Robustness };

inline std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::Verification: return "verification";
    case ExperimentKind::Attribution: return "attribution";
    case ExperimentKind::Tournament: return "tournament";
    case ExperimentKind::Robustness: return "robustness";
  }
  return "verification";
}

enum class BackendKind { Mock, Http };

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::Verification;
  std::string id;
  std::filesystem::path output_dir = "out";
  std::uint64_t seed = 0;

  // corpus
  std::filesystem::path corpus_root;
  CorpusLayout layout = CorpusLayout::AuthorDirs;
  FilterCriteria filter;

  // prompts
  TemplateTier tier = TemplateTier::P1;
  std::optional<std::filesystem::path> template_dir;
  bool adversarial_aware = false;
  std::size_t reserved_output_tokens = kReservedOutputTokens;

  // backend
  BackendKind backend = BackendKind::Mock;
  std::string model = "mock-style-oracle";
  std::string api = "openai";
  std::string base_url;
  double temperature = 0.0;
  double top_p = 1.0;
  std::size_t token_limit = 16000;
  std::size_t bytes_per_token = 4;
  std::size_t max_in_flight = 4;
  double epsilon = 0.0;
  std::uint64_t mock_seed = 0;
  double verify_threshold = 0.5;
  bool force_unsure = false;

  // verification
  std::size_t n_same = 100;
  std::size_t n_diff = 100;

  // attribution
  std::size_t k = 3;
  std::size_t n_shots = 1;
  std::size_t n_in = 100;
  std::size_t n_out = 100;

  // tournament
  std::size_t subset_size = 12;
  std::size_t tournament_shots = 1;
  std::size_t n_queries = 300;

  // robustness
  std::filesystem::path transformed_root;
  CorpusLayout transformed_layout = CorpusLayout::ManifestFile;
  std::filesystem::path pairing_manifest;

  std::optional<std::filesystem::path> pricing_file;

  std::string raw_toml;  // echoed verbatim into the report
};

namespace detail {

inline CorpusLayout layout_from_string(const std::string& s) {
  const std::string v = to_lower(s);
  if (v == "author_dirs" || v == "authordirs") return CorpusLayout::AuthorDirs;
  if (v == "manifest" || v == "manifest_file") return CorpusLayout::ManifestFile;
  throw ConfigError("unknown corpus layout \"" + s + "\"");
}

inline std::filesystem::path resolve_rel(const std::filesystem::path& base,
                                         const std::filesystem::path& p) {
  return p.is_absolute() ? p : base / p;
}

inline std::size_t positive_size(std::int64_t v, const std::string& what) {
  if (v <= 0) throw ConfigError(what + " must be positive, got " + std::to_string(v));
  return static_cast<std::size_t>(v);
}

inline std::size_t nonneg_size(std::int64_t v, const std::string& what) {
  if (v < 0) throw ConfigError(what + " must be non-negative, got " + std::to_string(v));
  return static_cast<std::size_t>(v);
}

}  // namespace detail

inline ExperimentKind experiment_kind_from_string(const std::string& s) {
  const std::string v = to_lower(s);
  if (v == "verification" || v == "verify") return ExperimentKind::Verification;
  if (v == "attribution" || v == "attribute") return ExperimentKind::Attribution;
  if (v == "tournament") return ExperimentKind::Tournament;
  if (v == "robustness") return ExperimentKind::Robustness;
  throw ConfigError("unknown experiment kind \"" + s + "\"");
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  const TomlLite toml = TomlLite::parse_file(path);
  const std::filesystem::path base = path.has_parent_path()
                                         ? path.parent_path()
                                         : std::filesystem::path(".");
  ExperimentConfig cfg;
  cfg.raw_toml = toml.raw();

  cfg.kind = experiment_kind_from_string(toml.get_string("experiment", "kind"));
  cfg.id = toml.get_string("experiment", "id");
  if (cfg.id.empty() || cfg.id.find_first_not_of(
                            "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789._-") !=
                            std::string::npos)
    throw ConfigError("experiment.id must be a non-empty [A-Za-z0-9._-]+ name");
  cfg.output_dir = detail::resolve_rel(base, toml.get_string_or("experiment", "output_dir", "out"));
  if (!toml.has("experiment", "seed"))
    throw ConfigError("experiment.seed is required; seeds are always explicit");
  cfg.seed = static_cast<std::uint64_t>(toml.get_int("experiment", "seed"));

  cfg.corpus_root = detail::resolve_rel(base, toml.get_string("corpus", "root"));
  cfg.layout = detail::layout_from_string(toml.get_string_or("corpus", "layout", "author_dirs"));
  cfg.filter.language = language_from_string(toml.get_string_or("corpus", "language", "cpp"));
  cfg.filter.min_loc = detail::nonneg_size(toml.get_int_or("corpus", "min_loc", 0), "corpus.min_loc");
  cfg.filter.max_loc = toml.has("corpus", "max_loc")
                           ? detail::positive_size(toml.get_int("corpus", "max_loc"), "corpus.max_loc")
                           : kNoLocLimit;
  cfg.filter.min_files_per_author = detail::positive_size(
      toml.get_int_or("corpus", "min_files_per_author", 1), "corpus.min_files_per_author");

  cfg.tier = tier_from_string(toml.get_string_or("prompts", "tier", "P1"));
  if (toml.has("prompts", "template_dir"))
    cfg.template_dir = detail::resolve_rel(base, toml.get_string("prompts", "template_dir"));
  cfg.adversarial_aware = toml.get_bool_or("prompts", "adversarial_aware", false);
  cfg.reserved_output_tokens = detail::positive_size(
      toml.get_int_or("prompts", "reserved_output_tokens",
                      static_cast<std::int64_t>(kReservedOutputTokens)),
      "prompts.reserved_output_tokens");

  const std::string backend_kind = to_lower(toml.get_string_or("backend", "kind", "mock"));
  if (backend_kind == "mock") {
    cfg.backend = BackendKind::Mock;
  } else if (backend_kind == "http") {
    cfg.backend = BackendKind::Http;
  } else {
    throw ConfigError("backend.kind must be mock or http, got \"" + backend_kind + "\"");
  }
  cfg.model = toml.get_string_or("backend", "model", "mock-style-oracle");
  cfg.api = toml.get_string_or("backend", "api", "openai");
  cfg.base_url = toml.get_string_or("backend", "base_url", "");
  cfg.temperature = toml.get_double_or("backend", "temperature", 0.0);
  cfg.top_p = toml.get_double_or("backend", "top_p", 1.0);
  if (cfg.temperature < 0) throw ConfigError("backend.temperature must be >= 0");
  if (cfg.top_p <= 0 || cfg.top_p > 1) throw ConfigError("backend.top_p must be in (0, 1]");
  cfg.token_limit =
      detail::positive_size(toml.get_int_or("backend", "token_limit", 16000), "backend.token_limit");
  cfg.bytes_per_token = detail::positive_size(toml.get_int_or("backend", "bytes_per_token", 4),
                                              "backend.bytes_per_token");
  cfg.max_in_flight =
      detail::positive_size(toml.get_int_or("backend", "max_in_flight", 4), "backend.max_in_flight");
  cfg.epsilon = toml.get_double_or("backend", "epsilon", 0.0);
  if (cfg.epsilon < 0 || cfg.epsilon > 1) throw ConfigError("backend.epsilon must be in [0, 1]");
  cfg.mock_seed = static_cast<std::uint64_t>(
      toml.get_int_or("backend", "mock_seed", static_cast<std::int64_t>(cfg.seed)));
  cfg.verify_threshold = toml.get_double_or("backend", "verify_threshold", 0.5);
  cfg.force_unsure = toml.get_bool_or("backend", "force_unsure", false);

  cfg.n_same = detail::nonneg_size(toml.get_int_or("verification", "n_same", 100), "n_same");
  cfg.n_diff = detail::nonneg_size(toml.get_int_or("verification", "n_diff", 100), "n_diff");

  cfg.k = detail::positive_size(toml.get_int_or("attribution", "k", 3), "attribution.k");
  cfg.n_shots =
      detail::positive_size(toml.get_int_or("attribution", "n_shots", 1), "attribution.n_shots");
  cfg.n_in = detail::nonneg_size(toml.get_int_or("attribution", "n_in", 100), "attribution.n_in");
  cfg.n_out = detail::nonneg_size(toml.get_int_or("attribution", "n_out", 100), "attribution.n_out");

  cfg.subset_size = detail::positive_size(toml.get_int_or("tournament", "subset_size", 12),
                                          "tournament.subset_size");
  if (cfg.subset_size < 2) throw ConfigError("tournament.subset_size must be >= 2");
  cfg.tournament_shots = detail::positive_size(
      toml.get_int_or("tournament", "shots_per_author", 1), "tournament.shots_per_author");
  cfg.n_queries =
      detail::positive_size(toml.get_int_or("tournament", "n_queries", 300), "tournament.n_queries");

  if (cfg.kind == ExperimentKind::Robustness) {
    cfg.transformed_root =
        detail::resolve_rel(base, toml.get_string("robustness", "transformed_root"));
    cfg.transformed_layout = detail::layout_from_string(
        toml.get_string_or("robustness", "transformed_layout", "manifest"));
    cfg.pairing_manifest =
        detail::resolve_rel(base, toml.get_string("robustness", "pairing_manifest"));
  }
  if (toml.has("pricing", "file"))
    cfg.pricing_file = detail::resolve_rel(base, toml.get_string("pricing", "file"));

  if (cfg.backend == BackendKind::Http && cfg.base_url.empty())
    throw ConfigError("backend.base_url is required for the http backend");
  return cfg;
}

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

struct RunOptions {
  bool resume = false;
  std::optional<BackendKind> backend_override;
};

struct RunResult {
  nlohmann::json report;
  std::filesystem::path out_dir;
  bool incomplete = false;
  std::string failure;  // set when incomplete
  std::uint64_t backend_calls = 0;
};

namespace detail {

inline std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline std::string sanitize_filename(const std::string& name) {
  std::string out;
  for (char c : name) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '.' || c == '_' || c == '-';
    out += ok ? c : '_';
  }
  return out;
}

inline std::optional<std::string> get_env(const char* name) {
  const char* v = std::getenv(name);
  if (!v || !*v) return std::nullopt;
  return std::string(v);
}

struct CaseRow {
  std::string id;
  std::string kind;
  std::string expected;
  std::string verdict;
  bool correct = false;
  std::string annotation;
};

inline nlohmann::json matrix_json(const ConfusionMatrix& m) {
  return {{"tp", m.tp}, {"fn", m.fn}, {"tn", m.tn}, {"fp", m.fp}};
}

inline nlohmann::json score_json(const ConfusionMatrix& m) {
  nlohmann::json j;
  j["matrix"] = matrix_json(m);
  if (auto acc = accuracy(m)) {
    j["accuracy"] = *acc;
    j["accuracy_pct"] = format_accuracy_pct(*acc);
  }
  j["mcc"] = mcc(m);
  j["mcc_2dp"] = format_mcc(mcc(m));
  return j;
}

inline std::string case_id(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%04zu", prefix, i + 1);
  return buf;
}

}  // namespace detail

class ExperimentRunner {
 public:
  ExperimentRunner(ExperimentConfig cfg, RunOptions options = {})
      : cfg_(std::move(cfg)), options_(options) {
    if (options_.backend_override) cfg_.backend = *options_.backend_override;
  }

  RunResult run() {
    const auto started = std::chrono::steady_clock::now();
    out_dir_ = cfg_.output_dir / cfg_.id;
    std::filesystem::create_directories(out_dir_);

    if (cfg_.pricing_file) {
      pricing_ = PricingTable::from_json_file(*cfg_.pricing_file);
      // Fail now, not after the paid run started.
      pricing_->cost_for(cfg_.model, 0, 0);
    }
    log_ = std::make_unique<QueryLog>(out_dir_ / "queries.jsonl");

    std::filesystem::path cache_dir = out_dir_ / "cache";
    if (auto env = detail::get_env("CODATTR_CACHE_DIR"))
      cache_dir = std::filesystem::path(*env) / cfg_.id;
    std::uint64_t max_calls = 0;
    if (auto env = detail::get_env("CODATTR_MAX_BACKEND_CALLS")) max_calls = std::stoull(*env);

    backend_ = make_backend();
    client_ = std::make_unique<CachingClient>(*backend_, cache_dir, log_.get(),
                                              pricing_ ? &*pricing_ : nullptr, max_calls);

    RunResult result;
    result.out_dir = out_dir_;
    try {
      switch (cfg_.kind) {
        case ExperimentKind::Verification: result.report = run_verification(); break;
        case ExperimentKind::Attribution: result.report = run_attribution(); break;
        case ExperimentKind::Tournament: result.report = run_tournament_experiment(); break;
        case ExperimentKind::Robustness: result.report = run_robustness(); break;
      }
    } catch (const BackendUnavailable& e) {
      result.incomplete = true;
      result.failure = e.what();
      result.report = partial_report_;
      result.report["incomplete"] = true;
      result.report["failure"] = e.what();
      write_file(out_dir_ / "report.json", result.report.dump(2) + "\n");
    } catch (const RequestRejected& e) {
      result.incomplete = true;
      result.failure = e.what();
      result.report = partial_report_;
      result.report["incomplete"] = true;
      result.report["failure"] = e.what();
      write_file(out_dir_ / "report.json", result.report.dump(2) + "\n");
    }

    result.backend_calls = client_->backend_calls();
    const auto wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                             std::chrono::steady_clock::now() - started)
                             .count();
    nlohmann::json meta = {{"wall_clock_ms", wall_ms},
                           {"backend_calls", result.backend_calls},
                           {"incomplete", result.incomplete}};
    write_file(out_dir_ / "run_meta.json", meta.dump(2) + "\n");
    return result;
  }

 private:
  std::unique_ptr<Backend> make_backend() {
    if (cfg_.backend == BackendKind::Mock) {
      StyleOracleConfig oracle;
      oracle.epsilon = cfg_.epsilon;
      oracle.seed = cfg_.mock_seed;
      oracle.verify_threshold = cfg_.verify_threshold;
      oracle.force_unsure = cfg_.force_unsure;
      return std::make_unique<StyleOracleBackend>(oracle);
    }
    HttpBackendConfig http;
    http.api = http_api_from_string(cfg_.api);
    http.base_url = cfg_.base_url;
    http.jitter_seed = cfg_.seed;
    if (auto key = detail::get_env(http.api == HttpApi::OpenAi ? "CODATTR_OPENAI_KEY"
                                                               : "CODATTR_GEMINI_KEY"))
      http.api_key = *key;
    return std::make_unique<HttpChatBackend>(http);
  }

  ChatRequest make_request(const std::string& prompt_text) const {
    ChatRequest r;
    r.model = cfg_.model;
    r.temperature = cfg_.temperature;
    r.top_p = cfg_.top_p;
    r.user_text = prompt_text;
    r.max_output_tokens = cfg_.reserved_output_tokens;
    return r;
  }

  Corpus load_filtered_corpus() {
    const LoadOutcome outcome = load_corpus(cfg_.corpus_root, cfg_.layout);
    load_skipped_ = outcome.skipped.size();
    return filter_corpus(outcome.corpus, cfg_.filter);
  }

  nlohmann::json base_report() const {
    nlohmann::json j;
    j["experiment"] = {{"id", cfg_.id}, {"kind", to_string(cfg_.kind)}, {"model", cfg_.model}};
    j["config_echo"] = cfg_.raw_toml;
    j["incomplete"] = false;
    j["corpus_load_skipped"] = load_skipped_;
    return j;
  }

  nlohmann::json cost_report(std::size_t unit_divisor = 0) const {
    nlohmann::json j;
    const auto records = QueryLog::read_all(log_->path());
    if (pricing_) {
      const CostSummary summary = cost_of(records, *pricing_);
      j = summary;
      if (unit_divisor > 0)
        j["unit_cost_usd"] = summary.cost_usd / static_cast<double>(unit_divisor);
    } else {
      j = {{"requests", records.size()}, {"cost_usd", nullptr}, {"note", "no pricing table configured"}};
    }
    return j;
  }

  void write_cases_csv(const std::string& header,
                       const std::vector<std::vector<std::string>>& rows) const {
    std::string csv = header + "\n";
    for (const auto& row : rows) {
      for (std::size_t i = 0; i < row.size(); ++i) {
        if (i > 0) csv += ',';
        csv += detail::csv_escape(row[i]);
      }
      csv += '\n';
    }
    write_file(out_dir_ / "cases.csv", csv);
  }

  void write_summary_csv(const std::vector<std::array<std::string, 9>>& rows) const {
    std::string csv = "experiment,model,template,tp,fn,tn,fp,accuracy,mcc\n";
    for (const auto& row : rows) {
      for (std::size_t i = 0; i < row.size(); ++i) {
        if (i > 0) csv += ',';
        csv += detail::csv_escape(row[i]);
      }
      csv += '\n';
    }
    write_file(out_dir_ / "summary.csv", csv);
  }

  std::array<std::string, 9> summary_row(const std::string& experiment,
                                         const std::string& template_name,
                                         const ConfusionMatrix& m) const {
    const auto acc = accuracy(m);
    return {experiment,
            cfg_.model,
            template_name,
            std::to_string(m.tp),
            std::to_string(m.fn),
            std::to_string(m.tn),
            std::to_string(m.fp),
            acc ? format_accuracy_pct(*acc) : "",
            format_mcc(mcc(m))};
  }

  std::string template_name(bool aware) const {
    return to_string(cfg_.tier) + (aware ? "+adv" : "");
  }

  // ---- verification --------------------------------------------------------

  struct VerificationOutcome {
    detail::CaseRow row;
    int parse_warnings = 0;
    bool budget_rejected = false;
    bool transport_failed = false;
    bool protocol_error = false;
  };

  VerificationOutcome dispatch_verification(const VerificationCase& vc, const std::string& id,
                                            const PromptTemplate& tmpl, bool aware,
                                            const std::string& note) {
    VerificationOutcome out;
    out.row.id = id;
    out.row.kind = vc.expected == PairExpected::Same ? "same" : "different";
    out.row.expected = out.row.kind;

    const RenderedPrompt prompt = render_verification(tmpl, vc, aware, note);
    const BudgetCheck budget = check_budget(with_token_scale(prompt, cfg_.bytes_per_token),
                                            cfg_.token_limit, cfg_.reserved_output_tokens);

    Verdict verdict;
    if (!budget.ok) {
      out.budget_rejected = true;
      out.row.annotation = "budget_rejected: " + budget.detail();
    } else {
      try {
        const ChatResponse response = client_->complete(make_request(prompt.text));
        verdict = parse_verification(response.text);
        if (verdict.answer_lines_seen > 1) out.parse_warnings = verdict.answer_lines_seen - 1;
      } catch (const CallBudgetExhausted&) {
        throw;  // fatal: stops the run, partial report is written
      } catch (const RequestRejected&) {
        throw;  // fatal: the endpoint will keep rejecting
      } catch (const BackendUnavailable& e) {
        out.transport_failed = true;
        out.row.annotation = std::string("transport_failed: ") + e.what();
      } catch (const ProtocolError& e) {
        out.protocol_error = true;
        out.row.annotation = std::string("protocol_error: ") + e.what();
      }
    }
    out.row.verdict = to_string(verdict.value);
    out.row.correct = (vc.expected == PairExpected::Same &&
                       verdict.value == VerificationAnswer::Same) ||
                      (vc.expected == PairExpected::Different &&
                       verdict.value == VerificationAnswer::Different);
    return out;
  }

  struct VerificationPass {
    ConfusionMatrix matrix;
    std::vector<detail::CaseRow> rows;
    std::size_t parse_warnings = 0;
    std::size_t budget_rejected = 0;
    std::size_t transport_failed = 0;
    std::size_t protocol_errors = 0;
    std::size_t completed = 0;
  };

  VerificationPass verification_pass(const std::vector<VerificationCase>& cases,
                                     const PromptTemplate& tmpl, bool aware,
                                     const std::string& note, const char* id_prefix) {
    std::vector<std::optional<VerificationOutcome>> outcomes(cases.size());
    std::exception_ptr fatal;
    try {
      parallel_for_indexed(cases.size(), cfg_.max_in_flight, [&](std::size_t i) {
        outcomes[i] =
            dispatch_verification(cases[i], detail::case_id(id_prefix, i), tmpl, aware, note);
      });
    } catch (...) {
      fatal = std::current_exception();
    }

    VerificationPass pass;
    for (const auto& o : outcomes) {
      if (!o) continue;
      ++pass.completed;
      Verdict v;
      if (o->row.verdict == "same") {
        v.value = VerificationAnswer::Same;
      } else if (o->row.verdict == "different") {
        v.value = VerificationAnswer::Different;
      } else {
        v.value = VerificationAnswer::Indeterminate;
      }
      const PairExpected expected =
          o->row.expected == "same" ? PairExpected::Same : PairExpected::Different;
      record_verification(pass.matrix, expected, v);
      pass.rows.push_back(o->row);
      pass.parse_warnings += static_cast<std::size_t>(o->parse_warnings);
      pass.budget_rejected += o->budget_rejected ? 1 : 0;
      pass.transport_failed += o->transport_failed ? 1 : 0;
      pass.protocol_errors += o->protocol_error ? 1 : 0;
    }
    if (fatal) {
      pending_pass_ = std::move(pass);
      std::rethrow_exception(fatal);
    }
    return pass;
  }

  static std::vector<std::vector<std::string>> rows_to_csv(const std::vector<detail::CaseRow>& rows,
                                                           const std::string& pass_label = "") {
    std::vector<std::vector<std::string>> out;
    for (const auto& r : rows) {
      std::vector<std::string> fields;
      fields.push_back(r.id);
      if (!pass_label.empty()) fields.push_back(pass_label);
      fields.push_back(r.kind);
      fields.push_back(r.expected);
      fields.push_back(r.verdict);
      fields.push_back(r.correct ? "1" : "0");
      fields.push_back(r.annotation);
      out.push_back(std::move(fields));
    }
    return out;
  }

  nlohmann::json run_verification() {
    const Corpus corpus = load_filtered_corpus();
    const auto cases = sample_verification_cases(corpus, cfg_.n_same, cfg_.n_diff, cfg_.seed);
    const PromptTemplate tmpl = resolve_template(cfg_.template_dir, TaskKind::Verify, cfg_.tier);
    const std::string note = resolve_adversarial_note(cfg_.template_dir);

    partial_report_ = base_report();
    partial_report_["case_count"] = cases.size();

    VerificationPass pass;
    try {
      pass = verification_pass(cases, tmpl, cfg_.adversarial_aware, note, "v");
    } catch (...) {
      fill_verification_report(partial_report_, pending_pass_, cases.size());
      throw;
    }

    nlohmann::json report = partial_report_;
    fill_verification_report(report, pass, cases.size());
    write_cases_csv("case_id,kind,expected,verdict,correct,annotation", rows_to_csv(pass.rows));
    write_summary_csv({summary_row(cfg_.id, template_name(cfg_.adversarial_aware), pass.matrix)});
    write_file(out_dir_ / "report.json", report.dump(2) + "\n");
    return report;
  }

  void fill_verification_report(nlohmann::json& report, const VerificationPass& pass,
                                std::size_t case_count) {
    report.update(detail::score_json(pass.matrix));
    report["cases_completed"] = pass.completed;
    report["case_count"] = case_count;
    report["counters"] = {{"parse_warnings", pass.parse_warnings},
                          {"budget_rejected", pass.budget_rejected},
                          {"transport_failed", pass.transport_failed},
                          {"protocol_errors", pass.protocol_errors}};
    report["cost"] = cost_report();
  }

  // ---- attribution ----------------------------------------------------------

  nlohmann::json run_attribution() {
    const Corpus corpus = load_filtered_corpus();
    const auto cases =
        sample_attribution_cases(corpus, cfg_.k, cfg_.n_shots, cfg_.n_in, cfg_.n_out, cfg_.seed);
    const PromptTemplate tmpl = resolve_template(cfg_.template_dir, TaskKind::Attribute, cfg_.tier);
    const std::string note = resolve_adversarial_note(cfg_.template_dir);

    partial_report_ = base_report();
    partial_report_["case_count"] = cases.size();

    struct Outcome {
      detail::CaseRow row;
      bool in_distribution = false;
      AttributionKind kind = AttributionKind::Indeterminate;
      AuthorId chosen;
      int parse_warnings = 0;
      bool budget_rejected = false;
      bool transport_failed = false;
      bool protocol_error = false;
    };

    std::vector<std::optional<Outcome>> outcomes(cases.size());
    std::exception_ptr fatal;
    try {
      parallel_for_indexed(cases.size(), cfg_.max_in_flight, [&](std::size_t i) {
        const AttributionCase& ac = cases[i];
        Outcome out;
        out.in_distribution = ac.expected.has_value();
        out.row.id = detail::case_id("a", i);
        out.row.kind = out.in_distribution ? "in_distribution" : "out_of_distribution";
        out.row.expected = ac.expected ? *ac.expected : "none";

        const RenderedAttribution rendered =
            render_attribution(tmpl, ac, cfg_.seed, cfg_.adversarial_aware, note);
        const BudgetCheck budget =
            check_budget(with_token_scale(rendered.prompt, cfg_.bytes_per_token),
                         cfg_.token_limit, cfg_.reserved_output_tokens);
        AttributionVerdict verdict;
        if (!budget.ok) {
          out.budget_rejected = true;
          out.row.annotation = "budget_rejected: " + budget.detail();
        } else {
          try {
            const ChatResponse response = client_->complete(make_request(rendered.prompt.text));
            verdict = parse_attribution(response.text, rendered.labels);
            if (verdict.answer_lines_seen > 1) out.parse_warnings = verdict.answer_lines_seen - 1;
          } catch (const CallBudgetExhausted&) {
            throw;
          } catch (const RequestRejected&) {
            throw;
          } catch (const BackendUnavailable& e) {
            out.transport_failed = true;
            out.row.annotation = std::string("transport_failed: ") + e.what();
          } catch (const ProtocolError& e) {
            out.protocol_error = true;
            out.row.annotation = std::string("protocol_error: ") + e.what();
          }
        }
        out.kind = verdict.kind;
        out.chosen = verdict.author;
        out.row.verdict = verdict.value_string();
        out.row.correct = out.in_distribution
                              ? (verdict.kind == AttributionKind::Chosen &&
                                 verdict.author == *ac.expected)
                              : verdict.kind == AttributionKind::NoneOfThem;
        outcomes[i] = std::move(out);
      });
    } catch (...) {
      fatal = std::current_exception();
    }

    ConfusionMatrix total, in_dist, out_dist;
    std::vector<detail::CaseRow> rows;
    std::size_t parse_warnings = 0, budget_rejected = 0, transport_failed = 0, protocol_errors = 0;
    std::size_t completed = 0;
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
      const auto& o = outcomes[i];
      if (!o) continue;
      ++completed;
      AttributionVerdict v;
      v.kind = o->kind;
      v.author = o->chosen;
      record_attribution(total, cases[i], v);
      record_attribution(o->in_distribution ? in_dist : out_dist, cases[i], v);
      rows.push_back(o->row);
      parse_warnings += static_cast<std::size_t>(o->parse_warnings);
      budget_rejected += o->budget_rejected ? 1 : 0;
      transport_failed += o->transport_failed ? 1 : 0;
      protocol_errors += o->protocol_error ? 1 : 0;
    }

    nlohmann::json& report = partial_report_;
    report.update(detail::score_json(total));
    report["breakdown"] = {{"in_distribution", detail::score_json(in_dist)},
                           {"out_of_distribution", detail::score_json(out_dist)}};
    report["cases_completed"] = completed;
    report["counters"] = {{"parse_warnings", parse_warnings},
                          {"budget_rejected", budget_rejected},
                          {"transport_failed", transport_failed},
                          {"protocol_errors", protocol_errors}};
    report["params"] = {{"k", cfg_.k}, {"n_shots", cfg_.n_shots}};
    report["cost"] = cost_report();
    if (fatal) std::rethrow_exception(fatal);

    write_cases_csv("case_id,kind,expected,verdict,correct,annotation", rows_to_csv(rows));
    write_summary_csv({summary_row(cfg_.id, template_name(cfg_.adversarial_aware), total),
                       summary_row(cfg_.id + ".in", template_name(cfg_.adversarial_aware), in_dist),
                       summary_row(cfg_.id + ".out", template_name(cfg_.adversarial_aware),
                                   out_dist)});
    write_file(out_dir_ / "report.json", report.dump(2) + "\n");
    return report;
  }

  // ---- tournament -----------------------------------------------------------

  nlohmann::json run_tournament_experiment() {
    const Corpus corpus = load_filtered_corpus();
    TournamentConfig tcfg;
    tcfg.subset_size = cfg_.subset_size;
    tcfg.shots_per_author = cfg_.tournament_shots;
    tcfg.tier = cfg_.tier;
    tcfg.seed = cfg_.seed;
    tcfg.token_limit = cfg_.token_limit;
    tcfg.reserved_output_tokens = cfg_.reserved_output_tokens;
    tcfg.bytes_per_token = cfg_.bytes_per_token;
    tcfg.max_in_flight = 1;  // queries run in parallel instead

    // Pool: every author able to field the references plus an unseen query.
    std::vector<AuthorId> pool;
    for (const auto& [author, idxs] : corpus.index()) {
      if (idxs.size() >= tcfg.shots_per_author + 1) pool.push_back(author);
    }
    if (pool.size() < 2)
      throw CorpusError("InsufficientData: tournament needs >= 2 authors with " +
                        std::to_string(tcfg.shots_per_author + 1) + " samples each, found " +
                        std::to_string(pool.size()));

    // References are fixed once per run.
    ReferenceSet refs;
    DetRng ref_rng(fnv1a64_field("tournament-refs", cfg_.seed));
    for (const auto& author : pool) {
      std::vector<std::size_t> idxs = corpus.samples_of(author);
      for (std::size_t s = 0; s < tcfg.shots_per_author; ++s) {
        const std::size_t pick = ref_rng.below(idxs.size());
        refs[author].push_back(corpus.samples()[idxs[pick]]);
        idxs.erase(idxs.begin() + static_cast<std::ptrdiff_t>(pick));
      }
    }

    // Queries: unseen samples (not a reference, task differs from every
    // reference task of the author), no sample queried twice.
    DetRng query_rng(fnv1a64_field("tournament-queries", cfg_.seed));
    std::vector<const CodeSample*> queries;
    std::set<std::string> used_sample_ids;
    std::size_t attempts = 0;
    const std::size_t attempt_budget = 1000 + 500 * cfg_.n_queries;
    while (queries.size() < cfg_.n_queries && attempts < attempt_budget) {
      ++attempts;
      const AuthorId& author = pool[query_rng.below(pool.size())];
      const auto& idxs = corpus.samples_of(author);
      const CodeSample& sample = corpus.samples()[idxs[query_rng.below(idxs.size())]];
      if (used_sample_ids.count(sample.id())) continue;
      bool clashes = false;
      for (const auto& ref : refs[author]) {
        if (ref.task == sample.task) clashes = true;
      }
      if (clashes) continue;
      used_sample_ids.insert(sample.id());
      queries.push_back(&sample);
    }
    if (queries.size() < cfg_.n_queries)
      throw CorpusError("InsufficientData: only " + std::to_string(queries.size()) + " of " +
                        std::to_string(cfg_.n_queries) +
                        " tournament queries have an unseen-task sample available");

    const PromptTemplate tmpl = resolve_template(cfg_.template_dir, TaskKind::Tournament, cfg_.tier);
    const std::filesystem::path tdir = out_dir_ / "tournament";
    std::filesystem::create_directories(tdir);

    partial_report_ = base_report();
    partial_report_["case_count"] = queries.size();
    partial_report_["pool_size"] = pool.size();
    partial_report_["survivor_counts"] = survivor_counts(pool.size(), tcfg.subset_size);

    std::vector<std::optional<TournamentResult>> results(queries.size());
    std::mutex io_mutex;
    std::exception_ptr fatal;
    try {
      parallel_for_indexed(queries.size(), cfg_.max_in_flight, [&](std::size_t i) {
        const CodeSample& query = *queries[i];
        const std::filesystem::path file =
            tdir / (detail::case_id("q", i) + "_" + detail::sanitize_filename(query.id()) +
                    ".json");
        if (options_.resume && std::filesystem::exists(file)) {
          TournamentResult saved =
              nlohmann::json::parse(read_file(file)).get<TournamentResult>();
          if (saved.query_id == query.id()) {
            results[i] = std::move(saved);
            return;
          }
        }
        TournamentResult r =
            run_tournament(query, pool, refs, tcfg, *client_, tmpl, cfg_.model);
        {
          std::lock_guard<std::mutex> lock(io_mutex);
          write_file(file, nlohmann::json(r).dump(2) + "\n");
        }
        results[i] = std::move(r);
      });
    } catch (...) {
      fatal = std::current_exception();
    }

    std::vector<std::vector<std::string>> csv_rows;
    std::vector<std::size_t> survival;
    std::size_t completed = 0, correct = 0, forced = 0, queries_issued = 0;
    for (std::size_t i = 0; i < results.size(); ++i) {
      if (!results[i]) continue;
      ++completed;
      const TournamentResult& r = *results[i];
      const std::size_t s = survival_round(r, r.query_author);
      survival.push_back(s);
      const bool top1 = r.winner == r.query_author;
      if (top1) ++correct;
      forced += r.forced_wins();
      queries_issued += r.queries_issued();
      csv_rows.push_back({r.query_id, r.query_author, std::to_string(s), r.winner,
                          top1 ? "1" : "0"});
    }

    nlohmann::json& report = partial_report_;
    report["cases_completed"] = completed;
    const auto counts = survivor_counts(pool.size(), tcfg.subset_size);
    nlohmann::json round_acc = nlohmann::json::array();
    if (!survival.empty()) {
      for (std::size_t round = 1; round < counts.size(); ++round)
        round_acc.push_back(round_accuracy(survival, round));
    }
    report["round_accuracy"] = round_acc;
    if (completed > 0)
      report["top1_accuracy"] = static_cast<double>(correct) / static_cast<double>(completed);
    report["counters"] = {{"forced_wins", forced}, {"subset_queries", queries_issued}};
    report["cost"] = cost_report(completed);
    if (fatal) {
      // Keep what finished; rows for completed queries are still written.
      write_cases_csv("query_id,true_author,survival_round,winner,correct", csv_rows);
      std::rethrow_exception(fatal);
    }

    ConfusionMatrix top1_matrix;
    top1_matrix.tp = correct;
    top1_matrix.fn = completed - correct;
    write_cases_csv("query_id,true_author,survival_round,winner,correct", csv_rows);
    write_summary_csv({summary_row(cfg_.id, template_name(false), top1_matrix)});
    write_file(out_dir_ / "report.json", report.dump(2) + "\n");
    return report;
  }

  // ---- robustness -----------------------------------------------------------

  nlohmann::json run_robustness() {
    const LoadOutcome originals = load_corpus(cfg_.corpus_root, cfg_.layout);
    load_skipped_ = originals.skipped.size();
    const Corpus filtered = filter_corpus(originals.corpus, cfg_.filter);
    const LoadOutcome transformed = load_corpus(cfg_.transformed_root, cfg_.transformed_layout);
    const auto pairing = load_pairing_manifest(cfg_.pairing_manifest);
    const auto cases = build_adversarial_cases(filtered, transformed.corpus, pairing);

    std::size_t evasion = 0;
    for (const auto& c : cases)
      if (c.expected == PairExpected::Same) ++evasion;

    const PromptTemplate tmpl = resolve_template(cfg_.template_dir, TaskKind::Verify, cfg_.tier);
    const std::string note = resolve_adversarial_note(cfg_.template_dir);

    partial_report_ = base_report();
    partial_report_["case_count"] = cases.size();
    partial_report_["evasion_cases"] = evasion;
    partial_report_["imitation_cases"] = cases.size() - evasion;

    VerificationPass naive, aware;
    try {
      naive = verification_pass(cases, tmpl, false, note, "n");
      partial_report_["naive"] = detail::score_json(naive.matrix);
      aware = verification_pass(cases, tmpl, true, note, "w");
    } catch (...) {
      partial_report_["cost"] = cost_report();
      throw;
    }

    nlohmann::json& report = partial_report_;
    report["naive"] = detail::score_json(naive.matrix);
    report["adversarial_aware"] = detail::score_json(aware.matrix);
    report["cases_completed"] = naive.completed + aware.completed;
    report["counters"] = {
        {"parse_warnings", naive.parse_warnings + aware.parse_warnings},
        {"budget_rejected", naive.budget_rejected + aware.budget_rejected},
        {"transport_failed", naive.transport_failed + aware.transport_failed},
        {"protocol_errors", naive.protocol_errors + aware.protocol_errors}};
    report["cost"] = cost_report();

    auto csv_rows = rows_to_csv(naive.rows, "naive");
    for (auto& row : rows_to_csv(aware.rows, "aware")) csv_rows.push_back(std::move(row));
    write_cases_csv("case_id,pass,kind,expected,verdict,correct,annotation", csv_rows);
    write_summary_csv({summary_row(cfg_.id + ".naive", template_name(false), naive.matrix),
                       summary_row(cfg_.id + ".aware", template_name(true), aware.matrix)});
    write_file(out_dir_ / "report.json", report.dump(2) + "\n");
    return report;
  }

  ExperimentConfig cfg_;
  RunOptions options_;
  std::filesystem::path out_dir_;
  std::unique_ptr<Backend> backend_;
  std::unique_ptr<QueryLog> log_;
  std::unique_ptr<CachingClient> client_;
  std::optional<PricingTable> pricing_;
  nlohmann::json partial_report_;
  VerificationPass pending_pass_;
  std::size_t load_skipped_ = 0;
};

// ---------------------------------------------------------------------------
// Cost report across experiments
// ---------------------------------------------------------------------------

struct CostReportEntry {
  std::string experiment;
  CostSummary summary;
};

inline std::vector<CostReportEntry> cost_report_for(
    const std::vector<std::pair<std::string, std::filesystem::path>>& logs,
    const PricingTable& pricing) {
  std::vector<CostReportEntry> entries;
  for (const auto& [name, path] : logs) {
    CostReportEntry e;
    e.experiment = name;
    e.summary = cost_of(QueryLog::read_all(path), pricing);
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace codattr
