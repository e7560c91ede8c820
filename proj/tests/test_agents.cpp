#include <catch2/catch_amalgamated.hpp>

#include "card/agents.hpp"

using namespace card;

TEST_CASE("profile text states role, base model, and tools") {
    AgentProfile critic{"critic", "Critic", "sim-core", {}};
    CHECK(verbalize_profile(critic) == "Role: Critic. Base model: sim-core. No tools available.");

    AgentProfile searcher{"searcher", "Searcher", "sim-core", {"web-search", "calculator"}};
    CHECK(verbalize_profile(searcher) ==
          "Role: Searcher. Base model: sim-core. Tools: web-search, calculator.");
}

TEST_CASE("profile text ignores the agent id") {
    AgentProfile a{"alpha", "Critic", "sim-core", {}};
    AgentProfile b{"beta", "Critic", "sim-core", {}};
    CHECK(verbalize_profile(a) == verbalize_profile(b));
}

TEST_CASE("condition text renders merged features in name order with fixed precision") {
    ConditionSet conditions;
    conditions.global = {{"tool_quality", 0.7}, {"model_quality", 0.35}};
    conditions.per_agent["searcher"] = {{"region", std::string("eu")}};

    CHECK(verbalize_condition("searcher", conditions) ==
          "Conditions: model_quality=0.3500; region=eu; tool_quality=0.7000.");
    // Agents without per-agent entries fall back to the global block.
    CHECK(verbalize_condition("critic", conditions) ==
          "Conditions: model_quality=0.3500; tool_quality=0.7000.");
}

TEST_CASE("per-agent features shadow global features of the same name") {
    ConditionSet conditions;
    conditions.global = {{"model_quality", 0.35}};
    conditions.per_agent["expert"] = {{"model_quality", 0.9}};

    auto merged = conditions.merged_for("expert");
    REQUIRE(merged.size() == 1);
    CHECK(merged[0].scalar() == 0.9);

    auto fallback = conditions.merged_for("other");
    REQUIRE(fallback.size() == 1);
    CHECK(fallback[0].scalar() == 0.35);
}

TEST_CASE("later duplicate features within one list win") {
    ConditionSet conditions;
    conditions.global = {{"x", 1.0}, {"x", 2.0}};
    auto merged = conditions.merged_for("anyone");
    REQUIRE(merged.size() == 1);
    CHECK(merged[0].scalar() == 2.0);
}

TEST_CASE("unknown agent with an empty global block is rejected") {
    ConditionSet empty;
    CHECK_THROWS_AS(empty.merged_for("ghost"), UnknownAgent);

    ConditionSet with_global;
    with_global.global = {{"model_quality", 0.5}};
    CHECK_NOTHROW(with_global.merged_for("ghost"));
}

TEST_CASE("find prefers per-agent features and reports absences as null") {
    ConditionSet conditions;
    conditions.global = {{"model_quality", 0.35}, {"tool_quality", 0.7}};
    conditions.per_agent["expert"] = {{"model_quality", 0.9}};

    const ConditionFeature* f = conditions.find("expert", "model_quality");
    REQUIRE(f != nullptr);
    CHECK(f->scalar() == 0.9);

    f = conditions.find("critic", "model_quality");
    REQUIRE(f != nullptr);
    CHECK(f->scalar() == 0.35);

    CHECK(conditions.find("critic", "missing") == nullptr);
}

TEST_CASE("scalar features format with four decimals") {
    ConditionSet conditions;
    conditions.global = {{"price", 2.0}};
    CHECK(verbalize_condition("a", conditions) == "Conditions: price=2.0000.");

    conditions.global = {{"price", 0.123456}};
    CHECK(verbalize_condition("a", conditions) == "Conditions: price=0.1235.");
}

TEST_CASE("categorical and scalar features expose their kind") {
    ConditionFeature scalar{"q", 0.5};
    CHECK(scalar.is_scalar());
    CHECK(scalar.scalar() == 0.5);

    ConditionFeature label{"region", std::string("eu")};
    CHECK_FALSE(label.is_scalar());
    CHECK(label.label() == "eu");
}
