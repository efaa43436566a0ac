#include <catch2/catch_amalgamated.hpp>

#include "codattr/backend.hpp"
#include "codattr/mock_backend.hpp"
#include "codattr/verdicts.hpp"
#include "synth_corpus.hpp"

using namespace codattr;
using Catch::Approx;

namespace {

ChatRequest request_for(const std::string& prompt, const std::string& model = "mock-style-oracle") {
  ChatRequest r;
  r.model = model;
  r.user_text = prompt;
  return r;
}

RenderedPrompt verify_prompt(std::size_t left_author, std::size_t right_author) {
  VerificationCase vc;
  vc.left = synth::make_sample(left_author, 0);
  vc.right = synth::make_sample(right_author, 1);
  vc.expected = left_author == right_author ? PairExpected::Same : PairExpected::Different;
  return render_verification(default_template(TaskKind::Verify, TemplateTier::P1), vc, false);
}

RenderedAttribution tournament_prompt(const std::vector<std::size_t>& authors,
                                      std::size_t query_author, std::uint64_t seed) {
  static std::vector<std::vector<CodeSample>> storage;
  storage.clear();
  storage.resize(authors.size());
  std::vector<std::pair<AuthorId, std::vector<const CodeSample*>>> subset;
  for (std::size_t i = 0; i < authors.size(); ++i) {
    storage[i].push_back(synth::make_sample(authors[i], 1));
    subset.emplace_back(synth::author_name(authors[i]),
                        std::vector<const CodeSample*>{&storage[i][0]});
  }
  const CodeSample query = synth::make_sample(query_author, 0);
  return render_tournament(default_template(TaskKind::Tournament, TemplateTier::P1), subset, query,
                           authors.size(), seed);
}

}  // namespace

TEST_CASE("cache keys depend on request content only") {
  ChatRequest a = request_for("hello", "m1");
  ChatRequest b = a;
  CHECK(request_cache_key(a) == request_cache_key(b));

  b.max_output_tokens = 9999;  // not part of the key
  CHECK(request_cache_key(a) == request_cache_key(b));

  b = a;
  b.user_text = "hello!";
  CHECK(request_cache_key(a) != request_cache_key(b));
  b = a;
  b.model = "m2";
  CHECK(request_cache_key(a) != request_cache_key(b));
  b = a;
  b.temperature = 0.5;
  CHECK(request_cache_key(a) != request_cache_key(b));
  b = a;
  b.system_text = "sys";
  CHECK(request_cache_key(a) != request_cache_key(b));
}

TEST_CASE("caching client: hit semantics and log completeness") {
  synth::TempDir tmp("cache");
  StyleOracleBackend backend;
  QueryLog log(tmp.path() / "queries.jsonl");
  CachingClient client(backend, tmp.path() / "cache", &log);

  const auto prompt = verify_prompt(1, 1);
  const auto first = client.complete(request_for(prompt.text));
  CHECK(!first.from_cache);
  CHECK(client.backend_calls() == 1);

  const auto second = client.complete(request_for(prompt.text));
  CHECK(second.from_cache);
  CHECK(second.text == first.text);
  CHECK(client.backend_calls() == 1);  // replays never invoke the backend

  const auto records = QueryLog::read_all(log.path());
  REQUIRE(records.size() == 1);  // exactly one record per non-cache completion
  CHECK(records[0].cache_key == request_cache_key(request_for(prompt.text)));
  CHECK(records[0].response.text == first.text);

  SECTION("a fresh client over the same cache directory still hits") {
    CachingClient reclient(backend, tmp.path() / "cache", &log);
    const auto replay = reclient.complete(request_for(prompt.text));
    CHECK(replay.from_cache);
    CHECK(replay.text == first.text);
    CHECK(reclient.backend_calls() == 0);
  }
}

TEST_CASE("mock oracle is deterministic across independent instances") {
  // Two separately constructed stacks (fresh caches) must agree bytewise.
  StyleOracleConfig cfg;
  cfg.seed = 77;
  cfg.epsilon = 0.3;
  StyleOracleBackend one(cfg), two(cfg);
  for (std::size_t q = 0; q < 10; ++q) {
    const auto prompt = tournament_prompt({0, 1, 2, 3, 4}, q % 5, q);
    CHECK(one.complete(request_for(prompt.prompt.text)).text ==
          two.complete(request_for(prompt.prompt.text)).text);
  }
}

TEST_CASE("mock oracle answers verification from the style threshold") {
  StyleOracleBackend backend;

  const auto same = verify_prompt(7, 7);
  const auto same_verdict = parse_verification(backend.complete(request_for(same.text)).text);
  CHECK(same_verdict.value == VerificationAnswer::Same);

  const auto diff = verify_prompt(7, 21);
  const auto diff_verdict = parse_verification(backend.complete(request_for(diff.text)).text);
  CHECK(diff_verdict.value == VerificationAnswer::Different);
}

TEST_CASE("mock oracle attribution picks the closest author and round-trips the parser") {
  StyleOracleBackend backend;
  const auto rendered = tournament_prompt({3, 9, 15, 21}, 15, 5);
  const auto response = backend.complete(request_for(rendered.prompt.text));
  const auto verdict = parse_attribution(response.text, rendered.labels);
  REQUIRE(verdict.kind == AttributionKind::Chosen);
  CHECK(verdict.author == synth::author_name(15));

  SECTION("every decision kind round-trips through its emitted text") {
    // unsure
    StyleOracleConfig unsure_cfg;
    unsure_cfg.force_unsure = true;
    StyleOracleBackend unsure(unsure_cfg);
    CHECK(parse_attribution(unsure.complete(request_for(rendered.prompt.text)).text,
                            rendered.labels)
              .kind == AttributionKind::Indeterminate);
    CHECK(parse_verification(unsure.complete(request_for(verify_prompt(1, 1).text)).text).value ==
          VerificationAnswer::Indeterminate);
    // yes / no already covered above; chosen covered above.
  }
}

TEST_CASE("mock oracle epsilon noise") {
  SECTION("epsilon 1 on a two-candidate prompt always picks the wrong label") {
    StyleOracleConfig cfg;
    cfg.epsilon = 1.0;
    cfg.seed = 5;
    StyleOracleBackend backend(cfg);
    for (std::uint64_t s = 0; s < 20; ++s) {
      const auto rendered = tournament_prompt({2, 30}, 2, s);
      const auto verdict =
          parse_attribution(backend.complete(request_for(rendered.prompt.text)).text,
                            rendered.labels);
      REQUIRE(verdict.kind == AttributionKind::Chosen);
      CHECK(verdict.author == synth::author_name(30));
    }
  }

  SECTION("epsilon 0.2 over 10000 distinct queries lands within a percent") {
    StyleOracleConfig cfg;
    cfg.epsilon = 0.2;
    cfg.seed = 1234;
    StyleOracleBackend backend(cfg);
    // Vary the query task id through the fingerprint by regenerating prompts
    // with different shuffle seeds; each yields a distinct cache key.
    std::size_t wrong = 0;
    const std::size_t trials = 10000;
    for (std::size_t s = 0; s < trials; ++s) {
      const auto rendered = tournament_prompt({4, 10, 16}, 4, s);
      ChatRequest r = request_for(rendered.prompt.text);
      r.system_text = "trial " + std::to_string(s);  // force distinct cache keys
      const auto verdict = parse_attribution(backend.complete(r).text, rendered.labels);
      REQUIRE(verdict.kind == AttributionKind::Chosen);
      if (verdict.author != synth::author_name(4)) ++wrong;
    }
    const double rate = static_cast<double>(wrong) / static_cast<double>(trials);
    CHECK(rate == Approx(0.2).margin(0.01));
  }
}

TEST_CASE("epsilon noise on attribution prompts can claim none, and always parses") {
  StyleOracleConfig cfg;
  cfg.epsilon = 1.0;
  cfg.seed = 31;
  StyleOracleBackend backend(cfg);

  AttributionCase ac;
  for (std::size_t a : {6u, 20u}) {
    ac.references.emplace_back(synth::author_name(a),
                               std::vector<CodeSample>{synth::make_sample(a, 1)});
  }
  ac.query = synth::make_sample(6, 0);
  const auto tmpl = default_template(TaskKind::Attribute, TemplateTier::P1);

  bool saw_none = false, saw_wrong_label = false;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const auto rendered = render_attribution(tmpl, ac, seed);
    const auto verdict =
        parse_attribution(backend.complete(request_for(rendered.prompt.text)).text,
                          rendered.labels);
    if (verdict.kind == AttributionKind::NoneOfThem) saw_none = true;
    if (verdict.kind == AttributionKind::Chosen) {
      CHECK(verdict.author == synth::author_name(20));  // never the right one
      saw_wrong_label = true;
    }
    CHECK(verdict.kind != AttributionKind::Indeterminate);
  }
  CHECK(saw_none);
  CHECK(saw_wrong_label);
}

TEST_CASE("mock oracle rejects unparseable prompts") {
  StyleOracleBackend backend;
  CHECK_THROWS_AS(backend.complete(request_for("what is the meaning of life?")), ProtocolError);

  // Right instruction but no fenced blocks.
  std::string no_blocks = "judge these\n\n";
  no_blocks += kVerifyInstruction;
  CHECK_THROWS_AS(backend.complete(request_for(no_blocks)), ProtocolError);
}

TEST_CASE("call budget exhaustion interrupts fresh completions but not cache hits") {
  synth::TempDir tmp("budget");
  StyleOracleBackend backend;
  CachingClient client(backend, tmp.path() / "cache", nullptr, nullptr, /*max_calls=*/2);

  const auto p1 = verify_prompt(1, 2);
  const auto p2 = verify_prompt(3, 4);
  const auto p3 = verify_prompt(5, 6);
  client.complete(request_for(p1.text));
  client.complete(request_for(p2.text));
  CHECK_THROWS_AS(client.complete(request_for(p3.text)), CallBudgetExhausted);
  // Replays of completed work still succeed.
  CHECK(client.complete(request_for(p1.text)).from_cache);
}

TEST_CASE("cost accounting") {
  PricingTable pricing;
  pricing.set("m", {0.005, 0.015});

  SECTION("zero records cost zero") {
    const auto summary = cost_of({}, pricing);
    CHECK(summary.cost_usd == 0.0);
    CHECK(summary.requests == 0);
  }

  SECTION("two records at 1000 in / 100 out cost exactly $0.013") {
    QueryRecord r;
    r.request.model = "m";
    r.response.prompt_tokens = 1000;
    r.response.output_tokens = 100;
    const auto summary = cost_of({r, r}, pricing);
    CHECK(summary.cost_usd == Approx(0.013).margin(1e-9));
    CHECK(summary.requests == 2);
    REQUIRE(summary.by_model.size() == 1);
    CHECK(summary.by_model[0].model == "m");
    CHECK(summary.by_model[0].prompt_tokens == 2000);
  }

  SECTION("unknown model is named in the error") {
    QueryRecord r;
    r.request.model = "mystery";
    try {
      cost_of({r}, pricing);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("mystery") != std::string::npos);
    }
  }

  SECTION("pricing table loads from JSON") {
    synth::TempDir tmp("pricing");
    write_file(tmp.path() / "p.json",
               R"({"m": {"input_per_1k": 0.005, "output_per_1k": 0.015}})");
    const auto table = PricingTable::from_json_file(tmp.path() / "p.json");
    CHECK(table.cost_for("m", 1000, 100) == Approx(0.0065).margin(1e-12));
  }
}

TEST_CASE("query records round-trip through the JSONL log") {
  synth::TempDir tmp("log");
  QueryLog log(tmp.path() / "q.jsonl");
  QueryRecord r;
  r.cache_key = "abc123";
  r.request = request_for("prompt text with\nnewlines");
  r.response.text = "ANSWER: yes";
  r.response.prompt_tokens = 7;
  r.response.output_tokens = 3;
  r.timestamp = "2025-01-01T00:00:00Z";
  r.cost_usd = 0.25;
  log.append(r);
  log.append(r);

  const auto records = QueryLog::read_all(log.path());
  REQUIRE(records.size() == 2);
  CHECK(records[1].cache_key == "abc123");
  CHECK(records[1].request.user_text == r.request.user_text);
  CHECK(records[1].response.text == "ANSWER: yes");
  CHECK(records[1].cost_usd == 0.25);
}
