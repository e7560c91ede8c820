#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <sstream>
#include <string>

#include "card/manifest.hpp"

using namespace card;

namespace {
Manifest parse_text(const std::string& text) {
    std::istringstream in(text);
    return parse_manifest(in);
}

// Catch the error and return its (line, column) for position assertions.
std::pair<int, int> syntax_position(const std::string& text) {
    try {
        parse_text(text);
    } catch (const SyntaxError& e) {
        return {e.line, e.column};
    }
    FAIL("expected a SyntaxError");
    return {-1, -1};
}
}  // namespace

TEST_CASE("the bundled weak-model manifest parses completely") {
    std::ifstream in(std::string(CARD_DATA_DIR) + "/manifest_weak_model.txt");
    REQUIRE(in.good());
    Manifest m = parse_manifest(in);

    REQUIRE(m.roster.size() == 5);
    CHECK(m.roster[0].id == "expert");
    CHECK(m.roster[0].role == "Knowlegable Expert");
    CHECK(m.roster[0].base_model == "sim-core");
    CHECK(m.roster[0].plugins.empty());
    CHECK(m.roster[1].id == "searcher");
    REQUIRE(m.roster[1].plugins.size() == 1);
    CHECK(m.roster[1].plugins[0] == "web-search");
    CHECK(m.roster[4].id == "critic");

    REQUIRE(m.conditions.global.size() == 4);
    CHECK(m.conditions.global[0].name == "model_quality");
    CHECK(m.conditions.global[0].scalar() == 0.35);
    CHECK(m.conditions.global[3].name == "output_price");
    CHECK(m.conditions.global[3].scalar() == 4.4);
    CHECK(m.conditions.per_agent.empty());

    CHECK(m.cost.tokens_per_message == 512.0);
    CHECK(m.cost.per_agent_in_price.empty());
    CHECK(m.cost.per_agent_out_price.empty());
}

TEST_CASE("quoted values become labels and bare values become scalars") {
    Manifest m = parse_text(
        "[agents]\n"
        "a role=\"R\" base=\"b\"\n"
        "[conditions]\n"
        "* speed=0.5 tier=\"premium\"\n"
        "a note=\"7\"\n");
    REQUIRE(m.conditions.global.size() == 2);
    CHECK(m.conditions.global[0].is_scalar());
    CHECK(m.conditions.global[0].scalar() == 0.5);
    CHECK_FALSE(m.conditions.global[1].is_scalar());
    CHECK(m.conditions.global[1].label() == "premium");
    // Quoting forces a label even when the text would parse as a number.
    REQUIRE(m.conditions.per_agent.count("a") == 1);
    CHECK(m.conditions.per_agent.at("a")[0].label() == "7");
}

TEST_CASE("syntax errors carry the exact line and column") {
    SECTION("bare value that is not a decimal") {
        auto [line, col] = syntax_position(
            "[agents]\n"
            "a role=\"R\" base=\"b\"\n"
            "[conditions]\n"
            "* quality=high\n");
        CHECK(line == 4);
        CHECK(col == 3);
    }
    SECTION("unknown section") {
        auto [line, col] = syntax_position("[wheels]\n");
        CHECK(line == 1);
        CHECK(col == 1);
    }
    SECTION("content before any section") {
        auto [line, col] = syntax_position("a role=\"R\" base=\"b\"\n");
        CHECK(line == 1);
        CHECK(col == 1);
    }
    SECTION("duplicate agent id") {
        auto [line, col] = syntax_position(
            "[agents]\n"
            "a role=\"R\" base=\"b\"\n"
            "a role=\"S\" base=\"b\"\n");
        CHECK(line == 3);
        CHECK(col >= 2);
    }
    SECTION("agent without a role") {
        CHECK_THROWS_WITH(parse_text("[agents]\na base=\"b\"\n"),
                          Catch::Matchers::ContainsSubstring("lacks role"));
    }
    SECTION("agent without a base model") {
        CHECK_THROWS_WITH(parse_text("[agents]\na role=\"R\"\n"),
                          Catch::Matchers::ContainsSubstring("lacks base"));
    }
    SECTION("unterminated quote") {
        auto [line, col] = syntax_position("[agents]\na role=\"R base=\"b\"\n");
        CHECK(line == 2);
        CHECK(col >= 8);
    }
    SECTION("trailing text after a section header") {
        auto [line, col] = syntax_position("[agents] junk\n");
        CHECK(line == 1);
        CHECK(col >= 10);
    }
    SECTION("unknown agent attribute") {
        auto [line, col] = syntax_position("[agents]\na role=\"R\" base=\"b\" color=\"red\"\n");
        CHECK(line == 2);
        CHECK(col >= 20);
    }
    SECTION("condition line without features") {
        CHECK_THROWS_AS(parse_text("[agents]\na role=\"R\" base=\"b\"\n[conditions]\na\n"),
                        SyntaxError);
    }
    SECTION("non-numeric price") {
        CHECK_THROWS_AS(
            parse_text("[agents]\na role=\"R\" base=\"b\"\n[cost]\na in=cheap out=2\n"),
            SyntaxError);
    }
    SECTION("price line missing a side") {
        CHECK_THROWS_AS(parse_text("[agents]\na role=\"R\" base=\"b\"\n[cost]\na in=1\n"),
                        SyntaxError);
    }
    SECTION("manifest without agents") {
        CHECK_THROWS_AS(parse_text("[conditions]\n* x=1\n"), SyntaxError);
    }
}

TEST_CASE("references to unknown agents are rejected after parsing") {
    CHECK_THROWS_AS(parse_text("[agents]\na role=\"R\" base=\"b\"\n[conditions]\nghost x=1\n"),
                    UnknownAgent);
    CHECK_THROWS_AS(parse_text("[agents]\na role=\"R\" base=\"b\"\n[cost]\nghost in=1 out=2\n"),
                    UnknownAgent);
}

TEST_CASE("explicit prices are indexed by roster order, not file order") {
    Manifest m = parse_text(
        "[agents]\n"
        "first role=\"R\" base=\"b\"\n"
        "second role=\"R\" base=\"b\"\n"
        "[cost]\n"
        "second in=20 out=40\n"
        "first in=1 out=2\n");
    REQUIRE(m.cost.per_agent_in_price.size() == 2);
    CHECK(m.cost.per_agent_in_price[0] == 1.0);
    CHECK(m.cost.per_agent_in_price[1] == 20.0);
    CHECK(m.cost.per_agent_out_price[0] == 2.0);
    CHECK(m.cost.per_agent_out_price[1] == 40.0);
}

TEST_CASE("partial price coverage is rejected") {
    CHECK_THROWS_AS(parse_text("[agents]\n"
                               "first role=\"R\" base=\"b\"\n"
                               "second role=\"R\" base=\"b\"\n"
                               "[cost]\n"
                               "first in=1 out=2\n"),
                    ValidationError);
}

TEST_CASE("duplicate price lines are rejected") {
    CHECK_THROWS_AS(parse_text("[agents]\n"
                               "first role=\"R\" base=\"b\"\n"
                               "second role=\"R\" base=\"b\"\n"
                               "[cost]\n"
                               "first in=1 out=2\n"
                               "first in=3 out=4\n"),
                    SyntaxError);
}

TEST_CASE("comments and blank lines are ignored everywhere") {
    Manifest m = parse_text(
        "# leading comment\n"
        "\n"
        "[agents]  # section comment\n"
        "a role=\"R\" base=\"b\"  # trailing comment\n"
        "\n"
        "[cost]\n"
        "tokens_per_message=100  # small messages\n");
    CHECK(m.roster.size() == 1);
    CHECK(m.cost.tokens_per_message == 100.0);
}

TEST_CASE("serialize and reparse preserves the manifest") {
    Manifest m = parse_text(
        "[agents]\n"
        "a role=\"Analyst\" base=\"core\" plugins=\"x,y\"\n"
        "b role=\"Builder\" base=\"core\"\n"
        "[conditions]\n"
        "* model_quality=0.35 tier=\"basic\"\n"
        "b model_quality=0.9\n"
        "[cost]\n"
        "tokens_per_message=256\n"
        "a in=1.5 out=3\n"
        "b in=2 out=4\n");

    std::ostringstream out;
    serialize_manifest(m, out);
    Manifest again = parse_text(out.str());

    REQUIRE(again.roster.size() == 2);
    CHECK(again.roster[0].plugins == m.roster[0].plugins);
    REQUIRE(again.conditions.global.size() == 2);
    CHECK(again.conditions.global[0].scalar() == 0.35);
    CHECK(again.conditions.global[1].label() == "basic");
    CHECK(again.conditions.per_agent.at("b")[0].scalar() == 0.9);
    CHECK(again.cost.tokens_per_message == 256.0);
    CHECK(again.cost.per_agent_in_price == m.cost.per_agent_in_price);
    CHECK(again.cost.per_agent_out_price == m.cost.per_agent_out_price);

    // Serializing the reparsed manifest is byte-stable.
    std::ostringstream out2;
    serialize_manifest(again, out2);
    CHECK(out.str() == out2.str());
}
