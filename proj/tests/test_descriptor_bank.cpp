#include <doctest.h>

#include <algorithm>
#include <random>

#include "oodcal/descriptor_bank.hpp"
#include "oodcal/errors.hpp"

using namespace oodcal;

TEST_CASE("render_descriptor_text") {
  CHECK(render_descriptor_text("goldfish", "bright orange color") ==
        "goldfish which has bright orange color");
  CHECK(render_descriptor_text("hen", "a beak") == "hen which has a beak");
  CHECK(render_descriptor_text("x", "y") == "x which has y");
  CHECK_THROWS_AS(render_descriptor_text("", "y"), EmptyInputError);
  CHECK_THROWS_AS(render_descriptor_text("x", ""), EmptyInputError);
}

TEST_CASE("render is injective per class") {
  const std::vector<std::string> ds = {"a", "a b", "b", "ab", " a", "which has a"};
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (std::size_t j = 0; j < ds.size(); ++j)
      CHECK((render_descriptor_text("c", ds[i]) == render_descriptor_text("c", ds[j])) == (i == j));
}

TEST_CASE("descriptor sets clean and dedup") {
  DescriptorSet s("cat", 0, {"- fur", "  whiskers ", "fur", "- whiskers"});
  CHECK(s.descriptors() == std::vector<std::string>{"fur", "whiskers"});
  CHECK(s.texts(TextForm::rendered) ==
        std::vector<std::string>{"cat which has fur", "cat which has whiskers"});
  CHECK(s.texts(TextForm::raw) == std::vector<std::string>{"fur", "whiskers"});
  CHECK_THROWS_AS(DescriptorSet("cat", 0, {}), EmptyInputError);
  CHECK_THROWS_AS(DescriptorSet("cat", 0, {"fur", "-  "}), EmptyInputError);
  CHECK_THROWS_AS(DescriptorSet("", 0, {"fur"}), EmptyInputError);
}

TEST_CASE("bank invariants") {
  DescriptorBank bank(2);
  bank.add_class("cat", {{"fur"}, {"whiskers"}});
  CHECK_THROWS_AS(bank.add_class("cat", {{"fur"}, {"tail"}}), DuplicateIdError);
  CHECK_THROWS_AS(bank.add_class("dog", {{"fur"}}), ParameterError);
  CHECK_THROWS_AS(bank.add_class("", {{"a"}, {"b"}}), EmptyInputError);
  CHECK_THROWS_AS(DescriptorBank(0), ParameterError);
  CHECK_THROWS_AS(bank.sets("dog"), ParameterError);
  CHECK(bank.sets("cat")[1].sample_index() == 1);
}

TEST_CASE("required_texts examples") {
  DescriptorBank bank(1);
  bank.add_class("cat", {{"fur"}});
  CHECK(required_texts(bank, {"cat"}, {}) == std::vector<std::string>{"cat", "cat which has fur"});
  CHECK(required_texts(bank, {"cat"}, {"mirror"}) ==
        std::vector<std::string>{"cat", "cat which has fur", "mirror"});

  DescriptorBank two(2);
  two.add_class("cat", {{"fur", "tail"}, {"fur"}});
  const auto texts = required_texts(two, {"cat"}, {});
  CHECK(std::count(texts.begin(), texts.end(), "cat which has fur") == 1);
  CHECK(texts.size() == 3);

  CHECK(required_texts(bank, {"cat"}, {}, TextForm::raw) ==
        std::vector<std::string>{"cat", "cat which has fur", "fur"});
}

TEST_CASE("required_texts is stable under input permutation") {
  DescriptorBank bank(2);
  bank.add_class("b", {{"x", "y"}, {"z"}});
  bank.add_class("a", {{"y"}, {"w", "x"}});
  std::vector<std::string> classes = {"a", "b"};
  std::vector<std::string> objects = {"chair", "sink", "mirror", "chair"};
  const auto ref = required_texts(bank, classes, objects);
  CHECK(std::is_sorted(ref.begin(), ref.end()));
  std::mt19937 rng(3);
  for (int i = 0; i < 20; ++i) {
    std::shuffle(classes.begin(), classes.end(), rng);
    std::shuffle(objects.begin(), objects.end(), rng);
    CHECK(required_texts(bank, classes, objects) == ref);
  }
}

TEST_CASE("parse_llm_output examples") {
  CHECK(parse_llm_output("bright orange color\n- a flowing tail") ==
        std::vector<std::string>{"bright orange color", "a flowing tail"});
  CHECK(parse_llm_output("- a\n\n- b\n") == std::vector<std::string>{"a", "b"});
  CHECK(parse_llm_output("* a\r\n  -  b  ") == std::vector<std::string>{"a", "b"});
  CHECK_THROWS_AS(parse_llm_output("   "), EmptyGenerationError);
  CHECK_THROWS_AS(parse_llm_output("-\n- \n*"), EmptyGenerationError);
}

TEST_CASE("parse then re-serialize is idempotent") {
  const std::vector<std::string> raws = {
      "bright orange color\n- a flowing tail", "- a\n\n- b\n", "  one\n*two\n-three\n\n",
      "single", "- x y z\n- x y z"};
  for (const auto& raw : raws) {
    const auto first = parse_llm_output(raw);
    std::string joined;
    for (std::size_t i = 0; i < first.size(); ++i) joined += (i ? "\n- " : "") + first[i];
    CHECK(parse_llm_output(joined) == first);
  }
}

TEST_CASE("bank json round trip") {
  DescriptorBank bank(2);
  bank.add_class("cat", {{"fur", "tail"}, {"whiskers"}});
  bank.add_class("dog", {{"snout"}, {"- paws", "paws"}});
  const auto j = bank_to_json(bank);
  CHECK(j["classes"]["dog"][1] == nlohmann::json::array({"paws"}));
  const auto back = bank_from_json(j);
  CHECK(bank_to_json(back) == j);

  auto bad = j;
  bad["n"] = 3;
  CHECK_THROWS_AS(bank_from_json(bad), ParseError);
  bad = j;
  bad["version"] = 2;
  CHECK_THROWS_AS(bank_from_json(bad), ParseError);
}
