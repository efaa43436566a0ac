#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <set>

#include <nlohmann/json.hpp>

#include "codattr/corpus.hpp"
#include "synth_corpus.hpp"

using namespace codattr;
namespace fs = std::filesystem;

TEST_CASE("physical line counting") {
  CHECK(count_physical_lines("") == 0);
  CHECK(count_physical_lines("a") == 1);
  CHECK(count_physical_lines("a\n") == 1);
  CHECK(count_physical_lines("a\nb") == 2);
  CHECK(count_physical_lines("a\n\nb\n") == 3);  // blanks count
}

TEST_CASE("load_corpus from author directories") {
  synth::TempDir tmp("load");
  for (int a = 0; a < 2; ++a) {
    for (int t = 0; t < 3; ++t) {
      write_file(tmp.path() / ("auth" + std::to_string(a)) / ("t" + std::to_string(t) + ".cpp"),
                 "int x;\nint y;\n");
    }
  }

  const LoadOutcome out = load_corpus(tmp.path(), CorpusLayout::AuthorDirs);
  CHECK(out.corpus.size() == 6);
  CHECK(out.corpus.index().size() == 2);
  CHECK(out.skipped.empty());

  SECTION("ordering is lexicographic by author then path") {
    const auto& s = out.corpus.samples();
    CHECK(s.front().author == "auth0");
    CHECK(s.front().task == "t0");
    CHECK(s.back().author == "auth1");
    CHECK(s.back().task == "t2");
  }

  SECTION("loc and language are derived") {
    CHECK(out.corpus.samples().front().loc == 2);
    CHECK(out.corpus.samples().front().language == Language::cpp());
  }

  SECTION("partition property") {
    std::size_t indexed = 0;
    std::set<std::size_t> seen;
    for (const auto& [author, idxs] : out.corpus.index()) {
      indexed += idxs.size();
      for (std::size_t i : idxs) {
        CHECK(out.corpus.samples()[i].author == author);
        CHECK(seen.insert(i).second);  // no sample in two entries
      }
    }
    CHECK(indexed == out.corpus.size());
  }
}

TEST_CASE("load_corpus rejects an empty directory") {
  synth::TempDir tmp("empty");
  CHECK_THROWS_AS(load_corpus(tmp.path(), CorpusLayout::AuthorDirs), CorpusError);
}

TEST_CASE("load_corpus skips non-UTF-8 files with a report") {
  synth::TempDir tmp("utf8");
  write_file(tmp.path() / "a" / "good.cpp", "int x;\n");
  write_file(tmp.path() / "a" / "bad.cpp", std::string("int \xff\xfe;\n"));

  const LoadOutcome out = load_corpus(tmp.path(), CorpusLayout::AuthorDirs);
  CHECK(out.corpus.size() == 1);
  REQUIRE(out.skipped.size() == 1);
  CHECK(out.skipped[0].reason == "not valid UTF-8");
}

TEST_CASE("manifest layout resolves rows and reports missing files") {
  synth::TempDir tmp("manifest");
  write_file(tmp.path() / "code" / "one.cpp", "int a;\n");
  nlohmann::json manifest = nlohmann::json::array(
      {{{"author", "alice"}, {"task", "p1"}, {"path", "code/one.cpp"}, {"language", "cpp"}},
       {{"author", "bob"}, {"task", "p2"}, {"path", "code/missing.cpp"}, {"language", "cpp"}}});
  write_file(tmp.path() / "manifest.json", manifest.dump());

  const LoadOutcome out = load_corpus(tmp.path() / "manifest.json", CorpusLayout::ManifestFile);
  CHECK(out.corpus.size() == 1);
  CHECK(out.corpus.samples()[0].author == "alice");
  CHECK(out.corpus.samples()[0].task == "p1");
  REQUIRE(out.skipped.size() == 1);
  CHECK(out.skipped[0].path == "code/missing.cpp");
}

TEST_CASE("filter_corpus applies loc bounds, language, and per-author minimum") {
  std::vector<CodeSample> samples;
  auto file_of = [](std::size_t lines) {
    std::string text;
    for (std::size_t i = 0; i < lines; ++i) text += "int v" + std::to_string(i) + ";\n";
    return text;
  };
  // Author X: 9 files in range; author Y: 7 in range.
  for (int t = 0; t < 9; ++t)
    samples.push_back(make_sample("x", "t" + std::to_string(t), Language::cpp(), file_of(40)));
  for (int t = 0; t < 7; ++t)
    samples.push_back(make_sample("y", "t" + std::to_string(t), Language::cpp(), file_of(40)));
  const Corpus c = Corpus::from_samples(samples);

  SECTION("author below the file minimum is dropped entirely") {
    const Corpus f = filter_corpus(c, {17, 300, 8, Language::cpp()});
    CHECK(f.index().size() == 1);
    CHECK(f.has_author("x"));
    CHECK(f.size() == 9);
  }

  SECTION("no-op criteria keep everything") {
    const Corpus f = filter_corpus(c, {0, kNoLocLimit, 1, Language::cpp()});
    CHECK(f.size() == c.size());
  }

  SECTION("loc bounds are inclusive; 16 and 301 fall outside 17..300") {
    std::vector<CodeSample> boundary = samples;
    boundary.push_back(make_sample("x", "short", Language::cpp(), file_of(16)));
    boundary.push_back(make_sample("x", "long", Language::cpp(), file_of(301)));
    boundary.push_back(make_sample("x", "lo", Language::cpp(), file_of(17)));
    boundary.push_back(make_sample("x", "hi", Language::cpp(), file_of(300)));
    const Corpus f = filter_corpus(Corpus::from_samples(boundary), {17, 300, 1, Language::cpp()});
    std::set<std::string> tasks;
    for (const auto& s : f.samples())
      if (s.author == "x") tasks.insert(s.task);
    CHECK(tasks.count("short") == 0);
    CHECK(tasks.count("long") == 0);
    CHECK(tasks.count("lo") == 1);
    CHECK(tasks.count("hi") == 1);
  }

  SECTION("language mismatch is excluded") {
    std::vector<CodeSample> mixed = samples;
    mixed.push_back(make_sample("x", "j", Language::java(), file_of(40)));
    const Corpus f = filter_corpus(Corpus::from_samples(mixed), {0, kNoLocLimit, 1, Language::cpp()});
    for (const auto& s : f.samples()) CHECK(s.language == Language::cpp());
  }

  SECTION("filtering twice is idempotent and output is a subset") {
    const FilterCriteria crit{17, 300, 8, Language::cpp()};
    const Corpus once = filter_corpus(c, crit);
    const Corpus twice = filter_corpus(once, crit);
    CHECK(once.size() == twice.size());
    std::set<std::string> input_ids;
    for (const auto& s : c.samples()) input_ids.insert(s.id());
    for (const auto& s : once.samples()) CHECK(input_ids.count(s.id()) == 1);
  }

  SECTION("everything filtered away is an error") {
    CHECK_THROWS_AS(filter_corpus(c, {1000, 2000, 1, Language::cpp()}), CorpusError);
  }
}

TEST_CASE("verification case sampling") {
  const Corpus c = synth::make_corpus(20, 6);

  SECTION("requested counts are exact and labels are sound") {
    const auto cases = sample_verification_cases(c, 30, 30, 7);
    REQUIRE(cases.size() == 60);
    std::size_t same = 0;
    for (const auto& vc : cases) {
      CHECK(vc.left.task != vc.right.task);
      const bool is_same = vc.left.author == vc.right.author;
      CHECK(is_same == (vc.expected == PairExpected::Same));
      if (is_same) ++same;
    }
    CHECK(same == 30);
  }

  SECTION("no duplicate pairs") {
    const auto cases = sample_verification_cases(c, 40, 40, 11);
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& vc : cases) {
      const std::string a = vc.left.id(), b = vc.right.id();
      const std::pair<std::string, std::string> key = a < b ? std::make_pair(a, b) : std::make_pair(b, a);
      CHECK(seen.insert(key).second);
    }
  }

  SECTION("zero requests produce an empty list") {
    CHECK(sample_verification_cases(c, 0, 0, 1).empty());
  }

  SECTION("deterministic in the seed") {
    const auto a = sample_verification_cases(c, 20, 20, 42);
    const auto b = sample_verification_cases(c, 20, 20, 42);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].left.id() == b[i].left.id());
      CHECK(a[i].right.id() == b[i].right.id());
    }
    const auto other = sample_verification_cases(c, 20, 20, 43);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i].left.id() != other[i].left.id() || a[i].right.id() != other[i].right.id())
        any_diff = true;
    CHECK(any_diff);
  }

  SECTION("insufficient corpus names the binding constraint") {
    const Corpus tiny = synth::make_corpus(2, 2);
    try {
      sample_verification_cases(tiny, 500, 0, 1);
      FAIL("expected InsufficientData");
    } catch (const CorpusError& e) {
      CHECK(std::string(e.what()).find("same-author") != std::string::npos);
      CHECK(std::string(e.what()).find("500") != std::string::npos);
    }
  }

  SECTION("exhaustive demand equal to availability succeeds") {
    // 2 authors x 3 tasks: 3 cross-task pairs per author.
    const Corpus tiny = synth::make_corpus(2, 3);
    const auto cases = sample_verification_cases(tiny, 6, 0, 3);
    CHECK(cases.size() == 6);
  }
}

TEST_CASE("attribution case sampling") {
  const Corpus c = synth::make_corpus(12, 5);

  SECTION("shape: k candidates with n shots each") {
    const auto cases = sample_attribution_cases(c, 3, 2, 10, 10, 5);
    REQUIRE(cases.size() == 20);
    for (const auto& ac : cases) {
      CHECK(ac.references.size() == 3);
      for (const auto& [author, shots] : ac.references) CHECK(shots.size() == 2);
    }
  }

  SECTION("in-distribution expectation lies in the candidate set, out never does") {
    const auto cases = sample_attribution_cases(c, 4, 1, 25, 25, 9);
    for (std::size_t i = 0; i < cases.size(); ++i) {
      const auto& ac = cases[i];
      std::set<AuthorId> candidates;
      for (const auto& [author, _] : ac.references) candidates.insert(author);
      CHECK(candidates.size() == 4);
      if (i < 25) {
        REQUIRE(ac.expected.has_value());
        CHECK(candidates.count(*ac.expected) == 1);
        CHECK(*ac.expected == ac.query.author);
      } else {
        CHECK(!ac.expected.has_value());
        CHECK(candidates.count(ac.query.author) == 0);
      }
    }
  }

  SECTION("query task is unseen among its author's references") {
    const auto cases = sample_attribution_cases(c, 3, 2, 40, 0, 13);
    for (const auto& ac : cases) {
      for (const auto& [author, shots] : ac.references) {
        if (author != ac.query.author) continue;
        for (const auto& s : shots) CHECK(s.task != ac.query.task);
      }
    }
  }

  SECTION("k equal to the author count leaves no out-of-distribution author") {
    CHECK_THROWS_AS(sample_attribution_cases(c, 12, 1, 0, 5, 1), CorpusError);
  }

  SECTION("generator property over 1000 cases") {
    const auto cases = sample_attribution_cases(c, 5, 1, 1000, 0, 21);
    std::size_t checked = 0;
    for (const auto& ac : cases) {
      std::set<AuthorId> candidates;
      std::size_t shots = ac.references.front().second.size();
      for (const auto& [author, refs] : ac.references) {
        candidates.insert(author);
        CHECK(refs.size() == shots);  // uniform shot counts
      }
      REQUIRE(ac.expected.has_value());
      CHECK(candidates.count(*ac.expected) == 1);
      ++checked;
    }
    CHECK(checked == 1000);
  }

  SECTION("deterministic in the seed") {
    const auto a = sample_attribution_cases(c, 3, 1, 20, 20, 77);
    const auto b = sample_attribution_cases(c, 3, 1, 20, 20, 77);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].query.id() == b[i].query.id());
      REQUIRE(a[i].references.size() == b[i].references.size());
      for (std::size_t j = 0; j < a[i].references.size(); ++j)
        CHECK(a[i].references[j].first == b[i].references[j].first);
    }
  }
}

TEST_CASE("adversarial pairing") {
  // Originals: authors A and B with two tasks each. Transformed corpus holds
  // modified files under distinct paths.
  std::vector<CodeSample> orig;
  orig.push_back(make_sample("A", "t1", Language::cpp(), "int a1;\n", "A/t1.cpp"));
  orig.push_back(make_sample("A", "t2", Language::cpp(), "int a2;\n", "A/t2.cpp"));
  orig.push_back(make_sample("B", "t1", Language::cpp(), "int b1;\n", "B/t1.cpp"));
  orig.push_back(make_sample("B", "t2", Language::cpp(), "int b2;\n", "B/t2.cpp"));
  const Corpus originals = Corpus::from_samples(orig);

  std::vector<CodeSample> trans;
  trans.push_back(make_sample("A", "t2", Language::cpp(), "int a2x;\n", "evade/a_t2.cpp"));
  trans.push_back(make_sample("B", "t2", Language::cpp(), "int b2x;\n", "imitate/b_t2.cpp"));
  const Corpus transformed = Corpus::from_samples(trans);

  SECTION("evasion pairs expect Same and keep the source author on the left") {
    std::vector<PairingRow> rows = {{"evade/a_t2.cpp", "A", "B", AttackSetting::Evasion}};
    const auto cases = build_adversarial_cases(originals, transformed, rows);
    REQUIRE(cases.size() == 1);
    CHECK(cases[0].expected == PairExpected::Same);
    CHECK(cases[0].left.author == "A");  // source author of the transformed file
    CHECK(cases[0].left.task != cases[0].right.task);
    CHECK(cases[0].right.text == "int a2x;\n");
  }

  SECTION("imitation pairs expect Different with the imitated author on the left") {
    std::vector<PairingRow> rows = {{"imitate/b_t2.cpp", "B", "A", AttackSetting::Imitation}};
    const auto cases = build_adversarial_cases(originals, transformed, rows);
    REQUIRE(cases.size() == 1);
    CHECK(cases[0].expected == PairExpected::Different);
    CHECK(cases[0].left.author == "A");
  }

  SECTION("mixed manifest keeps counts") {
    std::vector<PairingRow> rows = {{"evade/a_t2.cpp", "A", "B", AttackSetting::Evasion},
                                    {"imitate/b_t2.cpp", "B", "A", AttackSetting::Imitation}};
    const auto cases = build_adversarial_cases(originals, transformed, rows);
    CHECK(cases.size() == 2);
    std::size_t same = 0;
    for (const auto& vc : cases)
      if (vc.expected == PairExpected::Same) ++same;
    CHECK(same == 1);
  }

  SECTION("empty pairing yields an empty list") {
    CHECK(build_adversarial_cases(originals, transformed, {}).empty());
  }

  SECTION("dangling row is named in the error") {
    std::vector<PairingRow> rows = {{"nowhere.cpp", "A", "B", AttackSetting::Evasion}};
    try {
      build_adversarial_cases(originals, transformed, rows);
      FAIL("expected CorpusError");
    } catch (const CorpusError& e) {
      CHECK(std::string(e.what()).find("nowhere.cpp") != std::string::npos);
    }
  }

  SECTION("pairing manifest loads from JSON") {
    synth::TempDir tmp("pairing");
    nlohmann::json rows = nlohmann::json::array({{{"transformed_path", "evade/a_t2.cpp"},
                                                  {"source_author", "A"},
                                                  {"imitated_author", "B"},
                                                  {"setting", "evasion"}}});
    write_file(tmp.path() / "pairs.json", rows.dump());
    const auto loaded = load_pairing_manifest(tmp.path() / "pairs.json");
    REQUIRE(loaded.size() == 1);
    CHECK(loaded[0].setting == AttackSetting::Evasion);
    CHECK(loaded[0].source_author == "A");
  }
}
