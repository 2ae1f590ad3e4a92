#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "mcqa/dataset.hpp"
#include "mcqa/error.hpp"
#include "mcqa/rng.hpp"

using namespace mcqa;

namespace {

McqItem make_item(std::string id, std::size_t k, std::size_t correct, std::optional<std::string> context = {}) {
  McqItem item;
  item.id = std::move(id);
  item.dataset = "toy";
  item.context = std::move(context);
  item.question = "What do plants need to grow?";
  for (std::size_t i = 0; i < k; ++i) item.options.push_back("option " + std::to_string(i));
  item.correct_index = correct;
  return item;
}

std::string record(const std::string& id, const std::string& options, int correct) {
  return R"({"id":")" + id + R"(","dataset":"toy","context":null,"question":"q?","options":)" + options +
         R"(,"correct_index":)" + std::to_string(correct) + "}";
}

}  // namespace

TEST_CASE("SplitMix64 matches the reference stream") {
  SplitMix64 rng(0);
  CHECK(rng.next() == 0xe220a8397b1dcdafULL);
  CHECK(rng.next() == 0x6e789e6aa1b965f4ULL);
  CHECK(rng.next() == 0x06c45d188009454fULL);
}

TEST_CASE("parse_dataset accepts valid records in file order") {
  const std::string text = record("a", R"(["x","y","z"])", 1) + "\n\n" + record("b", R"(["p","q"])", 0) + "\n";
  const auto items = parse_dataset(text);
  REQUIRE(items.size() == 2);
  CHECK(items[0].id == "a");
  CHECK(items[0].correct_index == 1);
  CHECK_FALSE(items[0].context.has_value());
  CHECK(items[1].options == std::vector<std::string>{"p", "q"});
}

TEST_CASE("parse_dataset rejects invalid records with line numbers") {
  SUBCASE("index out of range") {
    const auto text = record("a", R"(["x","y"])", 0) + "\n" + record("b", R"(["x","y"])", 2);
    CHECK_THROWS_WITH_AS(parse_dataset(text), doctest::Contains("<memory>:2: correct_index 2 index out of range"),
                         Error);
  }
  SUBCASE("fewer than two options") { CHECK_THROWS_AS(parse_dataset(record("a", R"(["x"])", 0)), Error); }
  SUBCASE("duplicate id") {
    const auto text = record("a", R"(["x","y"])", 0) + "\n" + record("a", R"(["u","v"])", 0);
    CHECK_THROWS_WITH(parse_dataset(text), doctest::Contains("duplicate id"));
  }
  SUBCASE("options equal after whitespace normalization") {
    CHECK_THROWS_WITH(parse_dataset(record("a", R"(["the  cat"," the cat "])", 0)),
                      doctest::Contains("duplicate option"));
  }
  SUBCASE("malformed json") {
    CHECK_THROWS_WITH(parse_dataset("{\"id\": \"a\", "), doctest::Contains("<memory>:1: malformed record"));
  }
  SUBCASE("wrong dataset for schema") {
    CHECK_THROWS_WITH(parse_dataset(record("a", R"(["x","y"])", 0), "qasc"), doctest::Contains("expected \"qasc\""));
  }
}

TEST_CASE("known schemas enforce their option counts") {
  CHECK(find_dataset_info("qasc")->options == 8);
  CHECK(find_dataset_info("qasc")->evaluated_size == 926);
  CHECK(find_dataset_info("cqa")->options == 5);
  CHECK(find_dataset_info("cqa")->evaluated_size == 1221);
  const std::string five = R"({"id":"1","question":"q","options":["a","b","c","d","e"],"correct_index":4})";
  CHECK(parse_dataset(five, "cqa").front().dataset == "cqa");
  CHECK_THROWS_WITH(parse_dataset(five, "qasc"), doctest::Contains("8 options per question"));
}

TEST_CASE("stored text stays verbatim") {
  const auto items = parse_dataset(record("a", R"(["  spaced  out ","y"])", 0));
  CHECK(items[0].options[0] == "  spaced  out ");
}

TEST_CASE("write then load round-trips arbitrary valid items") {
  SplitMix64 rng(11);
  const auto dir = std::filesystem::temp_directory_path() / "mcqa_dataset_roundtrip";
  std::filesystem::create_directories(dir);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<McqItem> items;
    const auto count = 1 + rng.below(6);
    for (std::uint64_t i = 0; i < count; ++i) {
      const auto k = 2 + rng.below(25);
      auto item = make_item("t" + std::to_string(trial) + "_" + std::to_string(i), k, rng.below(k),
                            rng.below(2) ? std::optional<std::string>("A passage.\nWith \"quotes\" and ünïcode.")
                                         : std::nullopt);
      items.push_back(std::move(item));
    }
    const auto path = dir / "items.jsonl";
    write_dataset(items, path);
    CHECK(load_dataset(path) == items);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("subsample golden values from the reference generator") {
  std::vector<McqItem> five;
  for (const char* id : {"a", "b", "c", "d", "e"}) five.push_back(make_item(id, 2, 0));
  const auto picked = subsample(five, 2, 7);
  REQUIRE(picked.size() == 2);
  CHECK(picked[0].id == "b");
  CHECK(picked[1].id == "e");

  std::vector<McqItem> ten;
  for (int i = 0; i < 10; ++i) ten.push_back(make_item("q" + std::to_string(i), 2, 0));
  std::vector<std::string> ids;
  for (const auto& item : subsample(ten, 4, 42)) ids.push_back(item.id);
  CHECK(ids == std::vector<std::string>{"q0", "q5", "q8", "q9"});
}

TEST_CASE("subsample is deterministic and a full sample keeps every item") {
  std::vector<McqItem> pool;
  for (int i = 0; i < 50; ++i) pool.push_back(make_item("p" + std::to_string(i), 4, 1));
  CHECK(subsample(pool, 17, 42) == subsample(pool, 17, 42));
  CHECK(subsample(pool, 17, 42) != subsample(pool, 17, 43));
  CHECK(subsample(pool, pool.size(), 99) == pool);
  CHECK_THROWS_AS(subsample(pool, 51, 1), Error);
}

TEST_CASE("render injects options verbatim and elides an absent context") {
  const auto tmpl = PromptTemplate::default_qa();
  const auto item = make_item("x", 3, 2);
  const auto r = render(item, tmpl);
  CHECK(r.prompt ==
        "Answer the following question in a few words.\n"
        "Question: What do plants need to grow?\n"
        "Answer: ");
  CHECK(r.candidates == item.options);
  CHECK(render(item, tmpl).prompt == r.prompt);

  const auto with_ctx = render(make_item("y", 3, 0, "Plants use sunlight."), tmpl);
  CHECK(with_ctx.prompt ==
        "Answer the following question in a few words.\n"
        "Passage: Plants use sunlight.\n"
        "Question: What do plants need to grow?\n"
        "Answer: ");
}

TEST_CASE("empty context renders like a template without the context line") {
  const PromptTemplate with("with", "Intro\nContext: {{context}}\nQ: {{question}}\nA: {{option}}\n");
  const PromptTemplate without("without", "Intro\nQ: {{question}}\nA: {{option}}\n");
  const auto item = make_item("z", 2, 0);
  CHECK(render(item, with).prompt == render(item, without).prompt);
  CHECK(render(item, with).postamble == "\n");
}

TEST_CASE("context text containing placeholders is not re-expanded") {
  const PromptTemplate t("t", "{{context}}\n{{question}} {{option}}");
  auto item = make_item("c", 2, 0, "see {{question}}");
  item.question = "Q";
  CHECK(render(item, t).prompt == "see {{question}}\nQ ");
}

TEST_CASE("template validation") {
  CHECK_THROWS_WITH(PromptTemplate("bad", "{{question}} {{answer}} {{option}}"),
                    doctest::Contains("unresolved placeholder {{answer}}"));
  CHECK_THROWS_AS(PromptTemplate("bad", "{{question}}"), Error);
  CHECK_THROWS_AS(PromptTemplate("bad", "{{option}} {{question}}"), Error);
  CHECK_THROWS_AS(PromptTemplate::builtin("nope"), Error);
}
