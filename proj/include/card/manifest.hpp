#pragma once

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "card/agents.hpp"
#include "card/errors.hpp"
#include "card/training.hpp"

namespace card {

// A complete run configuration: who the agents are, the conditions they run
// under, and the communication cost model.
//
// File grammar (line-oriented, '#' starts a comment):
//
//   [agents]
//   <id> role="..." base="..." [plugins="a,b"]
//
//   [conditions]
//   *    key=value key2="label" ...     # global features
//   <id> key=value ...                  # per-agent overrides
//
//   [cost]
//   tokens_per_message=512
//   <id> in=<price> out=<price>         # optional explicit prices
//
// Bare values must parse as decimals and become scalar features; quoted
// values become categorical labels.
struct Manifest {
    Roster roster;
    ConditionSet conditions;
    CostModel cost;
};

namespace detail {

struct LineCursor {
    const std::string& text;
    int lineno;
    std::size_t pos = 0;

    void skip_spaces() {
        while (pos < text.size() && (text[pos] == ' ' || text[pos] == '\t')) ++pos;
    }
    bool done() {
        skip_spaces();
        return pos >= text.size();
    }
    int column() const { return static_cast<int>(pos) + 1; }

    // A bare word: everything up to whitespace or '='.
    std::string word() {
        skip_spaces();
        std::size_t start = pos;
        while (pos < text.size() && !std::isspace(static_cast<unsigned char>(text[pos])) &&
               text[pos] != '=')
            ++pos;
        if (pos == start) throw SyntaxError(lineno, column(), "expected a word");
        return text.substr(start, pos - start);
    }

    // key=value or key="value"; returns (key, raw value, was_quoted).
    std::tuple<std::string, std::string, bool> key_value() {
        std::string key = word();
        skip_spaces();
        if (pos >= text.size() || text[pos] != '=')
            throw SyntaxError(lineno, column(), "expected '=' after '" + key + "'");
        ++pos;
        if (pos < text.size() && text[pos] == '"') {
            ++pos;
            std::size_t start = pos;
            while (pos < text.size() && text[pos] != '"') ++pos;
            if (pos >= text.size())
                throw SyntaxError(lineno, column(), "unterminated quoted value for '" + key + "'");
            std::string value = text.substr(start, pos - start);
            ++pos;  // closing quote
            return {key, value, true};
        }
        std::size_t start = pos;
        while (pos < text.size() && !std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
        if (pos == start)
            throw SyntaxError(lineno, column(), "missing value for '" + key + "'");
        return {key, text.substr(start, pos - start), false};
    }
};

inline bool parse_decimal(const std::string& raw, double& out) {
    char* end = nullptr;
    out = std::strtod(raw.c_str(), &end);
    return end != raw.c_str() && end != nullptr && *end == '\0';
}

inline std::vector<std::string> split_csv(const std::string& raw) {
    std::vector<std::string> parts;
    std::string current;
    for (char c : raw) {
        if (c == ',') {
            if (!current.empty()) parts.push_back(std::move(current));
            current.clear();
        } else if (c != ' ') {
            current.push_back(c);
        }
    }
    if (!current.empty()) parts.push_back(std::move(current));
    return parts;
}

}  // namespace detail

inline Manifest parse_manifest(std::istream& in) {
    Manifest m;
    enum class Section { none, agents, conditions, cost } section = Section::none;
    std::set<std::string> agent_ids;
    std::vector<std::pair<int, std::string>> deferred_agent_refs;  // (line, id)
    struct PriceLine {
        int lineno;
        std::string id;
        double in_price, out_price;
    };
    std::vector<PriceLine> price_lines;
    std::string line;
    int lineno = 0;

    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        detail::LineCursor cur{line, lineno};
        if (cur.done()) continue;

        if (line[cur.pos] == '[') {
            std::size_t close = line.find(']', cur.pos);
            if (close == std::string::npos)
                throw SyntaxError(lineno, cur.column(), "unterminated section header");
            std::string name = line.substr(cur.pos + 1, close - cur.pos - 1);
            if (name == "agents") section = Section::agents;
            else if (name == "conditions") section = Section::conditions;
            else if (name == "cost") section = Section::cost;
            else throw SyntaxError(lineno, cur.column(), "unknown section [" + name + "]");
            cur.pos = close + 1;
            if (!cur.done())
                throw SyntaxError(lineno, cur.column(), "trailing text after section header");
            continue;
        }

        switch (section) {
            case Section::none:
                throw SyntaxError(lineno, cur.column(), "content before any section header");

            case Section::agents: {
                AgentProfile agent;
                agent.id = cur.word();
                if (!agent_ids.insert(agent.id).second)
                    throw SyntaxError(lineno, cur.column(), "duplicate agent id '" + agent.id + "'");
                while (!cur.done()) {
                    int col = cur.column();
                    auto [key, value, quoted] = cur.key_value();
                    (void)quoted;
                    if (key == "role") agent.role = value;
                    else if (key == "base") agent.base_model = value;
                    else if (key == "plugins") agent.plugins = detail::split_csv(value);
                    else throw SyntaxError(lineno, col, "unknown agent attribute '" + key + "'");
                }
                if (agent.role.empty())
                    throw SyntaxError(lineno, 1, "agent '" + agent.id + "' lacks role=\"...\"");
                if (agent.base_model.empty())
                    throw SyntaxError(lineno, 1, "agent '" + agent.id + "' lacks base=\"...\"");
                m.roster.push_back(std::move(agent));
                break;
            }

            case Section::conditions: {
                std::string target = cur.word();
                if (target != "*") deferred_agent_refs.emplace_back(lineno, target);
                std::vector<ConditionFeature>& sink =
                    target == "*" ? m.conditions.global : m.conditions.per_agent[target];
                if (cur.done())
                    throw SyntaxError(lineno, cur.column(), "condition line holds no features");
                while (!cur.done()) {
                    int col = cur.column();
                    auto [key, value, quoted] = cur.key_value();
                    ConditionFeature f;
                    f.name = key;
                    if (quoted) {
                        f.value = value;
                    } else {
                        double v;
                        if (!detail::parse_decimal(value, v))
                            throw SyntaxError(lineno, col,
                                              "bare value '" + value +
                                                  "' is not a decimal; quote it for a label");
                        f.value = v;
                    }
                    sink.push_back(std::move(f));
                }
                break;
            }

            case Section::cost: {
                std::string head = cur.word();
                if (head == "tokens_per_message") {
                    cur.skip_spaces();
                    if (cur.pos >= line.size() || line[cur.pos] != '=')
                        throw SyntaxError(lineno, cur.column(), "expected '='");
                    ++cur.pos;
                    std::string value = cur.word();
                    double v;
                    if (!detail::parse_decimal(value, v))
                        throw SyntaxError(lineno, cur.column(), "tokens_per_message must be numeric");
                    m.cost.tokens_per_message = v;
                } else {
                    deferred_agent_refs.emplace_back(lineno, head);
                    double in_price = -1.0, out_price = -1.0;
                    while (!cur.done()) {
                        int col = cur.column();
                        auto [key, value, quoted] = cur.key_value();
                        (void)quoted;
                        double v;
                        if (!detail::parse_decimal(value, v))
                            throw SyntaxError(lineno, col, "price must be numeric");
                        if (key == "in") in_price = v;
                        else if (key == "out") out_price = v;
                        else throw SyntaxError(lineno, col, "unknown cost attribute '" + key + "'");
                    }
                    if (in_price < 0.0 || out_price < 0.0)
                        throw SyntaxError(lineno, 1, "cost line needs in=<price> out=<price>");
                    price_lines.push_back({lineno, head, in_price, out_price});
                }
                break;
            }
        }
    }

    if (m.roster.empty()) throw SyntaxError(lineno, 1, "manifest defines no agents");

    // Roster coverage: every agent referenced by [conditions] or [cost] must
    // exist.
    for (const auto& [refline, id] : deferred_agent_refs) {
        if (!agent_ids.count(id))
            throw UnknownAgent(id + " (line " + std::to_string(refline) + ")");
    }
    // Explicit prices must cover the whole roster or be absent entirely, and
    // the cost vectors are indexed by roster order, not file order.
    if (!price_lines.empty()) {
        if (price_lines.size() != m.roster.size())
            throw ValidationError("[cost] price lines must cover every agent or none");
        m.cost.per_agent_in_price.assign(m.roster.size(), -1.0);
        m.cost.per_agent_out_price.assign(m.roster.size(), -1.0);
        for (const auto& pl : price_lines) {
            for (std::size_t i = 0; i < m.roster.size(); ++i) {
                if (m.roster[i].id != pl.id) continue;
                if (m.cost.per_agent_in_price[i] >= 0.0)
                    throw SyntaxError(pl.lineno, 1, "duplicate [cost] line for '" + pl.id + "'");
                m.cost.per_agent_in_price[i] = pl.in_price;
                m.cost.per_agent_out_price[i] = pl.out_price;
            }
        }
    }
    m.cost.validate();
    return m;
}

namespace detail {
inline std::string format_feature_value(const ConditionFeature& f) {
    if (!f.is_scalar()) return '"' + f.label() + '"';
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.12g", f.scalar());
    return buf;
}
}  // namespace detail

inline void serialize_manifest(const Manifest& m, std::ostream& out) {
    out << "[agents]\n";
    for (const auto& agent : m.roster) {
        out << agent.id << " role=\"" << agent.role << "\" base=\"" << agent.base_model << '"';
        if (!agent.plugins.empty()) {
            out << " plugins=\"";
            for (std::size_t i = 0; i < agent.plugins.size(); ++i)
                out << (i ? "," : "") << agent.plugins[i];
            out << '"';
        }
        out << '\n';
    }
    out << "\n[conditions]\n";
    auto write_features = [&](const std::string& head, const std::vector<ConditionFeature>& fs) {
        if (fs.empty()) return;
        out << head;
        for (const auto& f : fs) out << ' ' << f.name << '=' << detail::format_feature_value(f);
        out << '\n';
    };
    write_features("*", m.conditions.global);
    for (const auto& [id, fs] : m.conditions.per_agent) write_features(id, fs);
    out << "\n[cost]\n";
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.12g", m.cost.tokens_per_message);
    out << "tokens_per_message=" << buf << '\n';
    if (!m.cost.per_agent_in_price.empty()) {
        for (std::size_t i = 0; i < m.roster.size(); ++i) {
            char in_buf[48], out_buf[48];
            std::snprintf(in_buf, sizeof(in_buf), "%.12g", m.cost.per_agent_in_price[i]);
            std::snprintf(out_buf, sizeof(out_buf), "%.12g", m.cost.per_agent_out_price[i]);
            out << m.roster[i].id << " in=" << in_buf << " out=" << out_buf << '\n';
        }
    }
}

}  // namespace card
