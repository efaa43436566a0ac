// codattr: code authorship verification, attribution, tournament, and
// robustness runs driven by TOML experiment configs.
//
// Exit codes: 0 success, 2 config error, 3 corpus error, 4 backend
// exhaustion (a partial report has been written).

#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "codattr/harness.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string backend_override;
  bool resume = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "experiment config (TOML)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--backend", args.backend_override, "override backend selection")
      ->check(CLI::IsMember({"mock", "http"}));
  cmd->add_flag("--resume", args.resume, "reuse per-query results already on disk");
}

int run_experiment(const CommonArgs& args, codattr::ExperimentKind expected_kind) {
  codattr::ExperimentConfig cfg = codattr::load_config(args.config_path);
  if (cfg.kind != expected_kind)
    throw codattr::ConfigError("config declares kind \"" + codattr::to_string(cfg.kind) +
                               "\" but the \"" + codattr::to_string(expected_kind) +
                               "\" subcommand was invoked");
  codattr::RunOptions options;
  options.resume = args.resume;
  if (args.backend_override == "mock") options.backend_override = codattr::BackendKind::Mock;
  if (args.backend_override == "http") options.backend_override = codattr::BackendKind::Http;

  codattr::ExperimentRunner runner(std::move(cfg), options);
  const codattr::RunResult result = runner.run();

  std::printf("report: %s\n", (result.out_dir / "report.json").string().c_str());
  std::printf("backend calls: %llu\n", static_cast<unsigned long long>(result.backend_calls));
  if (result.incomplete) {
    std::fprintf(stderr, "run incomplete: %s\n", result.failure.c_str());
    return 4;
  }
  return 0;
}

int run_cost_report(const CommonArgs& args) {
  codattr::ExperimentConfig cfg = codattr::load_config(args.config_path);
  if (!cfg.pricing_file)
    throw codattr::ConfigError("cost report needs [pricing] file in the config");
  const auto pricing = codattr::PricingTable::from_json_file(*cfg.pricing_file);
  const auto log_path = cfg.output_dir / cfg.id / "queries.jsonl";
  const auto entries = codattr::cost_report_for({{cfg.id, log_path}}, pricing);

  nlohmann::json out = nlohmann::json::array();
  for (const auto& e : entries) {
    nlohmann::json j = e.summary;
    j["experiment"] = e.experiment;
    out.push_back(j);
    std::printf("%s: %zu requests, %zu prompt tokens, %zu output tokens, $%.4f\n",
                e.experiment.c_str(), e.summary.requests, e.summary.prompt_tokens,
                e.summary.output_tokens, e.summary.cost_usd);
    for (const auto& line : e.summary.by_model) {
      std::printf("  %s: %zu requests, $%.4f\n", line.model.c_str(), line.requests,
                  line.cost_usd);
    }
  }
  codattr::write_file(cfg.output_dir / cfg.id / "cost_summary.json", out.dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LLM-driven source-code authorship attribution harness"};
  app.require_subcommand(1);

  CommonArgs verify_args, attribute_args, tournament_args, robustness_args, report_args;
  auto* verify = app.add_subcommand("verify", "zero-shot pairwise authorship verification");
  add_common(verify, verify_args);
  auto* attribute = app.add_subcommand("attribute", "few-shot authorship attribution");
  add_common(attribute, attribute_args);
  auto* tournament = app.add_subcommand("tournament", "large-pool elimination attribution");
  add_common(tournament, tournament_args);
  auto* robustness = app.add_subcommand("robustness", "verification against transformed code");
  add_common(robustness, robustness_args);
  auto* report = app.add_subcommand("report", "cost summary from an experiment's query log");
  add_common(report, report_args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (verify->parsed()) return run_experiment(verify_args, codattr::ExperimentKind::Verification);
    if (attribute->parsed())
      return run_experiment(attribute_args, codattr::ExperimentKind::Attribution);
    if (tournament->parsed())
      return run_experiment(tournament_args, codattr::ExperimentKind::Tournament);
    if (robustness->parsed())
      return run_experiment(robustness_args, codattr::ExperimentKind::Robustness);
    if (report->parsed()) return run_cost_report(report_args);
  } catch (const codattr::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const codattr::TemplateError& e) {
    std::fprintf(stderr, "template error: %s\n", e.what());
    return 2;
  } catch (const codattr::CorpusError& e) {
    std::fprintf(stderr, "corpus error: %s\n", e.what());
    return 3;
  } catch (const codattr::BackendUnavailable& e) {
    std::fprintf(stderr, "backend unavailable: %s\n", e.what());
    return 4;
  } catch (const codattr::RequestRejected& e) {
    std::fprintf(stderr, "request rejected: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
