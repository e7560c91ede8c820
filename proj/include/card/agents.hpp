#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "card/errors.hpp"

namespace card {

// Static attributes of one agent: who it is and what it can call.
struct AgentProfile {
    std::string id;
    std::string role;
    std::string base_model;
    std::vector<std::string> plugins;
};

using Roster = std::vector<AgentProfile>;

// A single runtime feature. Scalars are dimensionless or currency per million
// tokens (declared by the feature name); categorical values are free strings.
struct ConditionFeature {
    std::string name;
    std::variant<std::string, double> value;

    bool is_scalar() const { return std::holds_alternative<double>(value); }
    double scalar() const { return std::get<double>(value); }
    const std::string& label() const { return std::get<std::string>(value); }
};

// Runtime environment features: a global list applying to every agent plus
// per-agent lists that shadow global entries of the same name.
struct ConditionSet {
    std::vector<ConditionFeature> global;
    std::map<std::string, std::vector<ConditionFeature>> per_agent;

    // Merged view for one agent, sorted by feature name. Per-agent features
    // strictly shadow global ones; within one list, later entries win.
    std::vector<ConditionFeature> merged_for(const std::string& agent_id) const {
        auto it = per_agent.find(agent_id);
        if (it == per_agent.end() && global.empty()) throw UnknownAgent(agent_id);
        std::map<std::string, ConditionFeature> by_name;
        for (const auto& f : global) by_name[f.name] = f;
        if (it != per_agent.end())
            for (const auto& f : it->second) by_name[f.name] = f;
        std::vector<ConditionFeature> merged;
        merged.reserve(by_name.size());
        for (auto& [name, f] : by_name) merged.push_back(f);
        return merged;
    }

    // Convenience lookup on the merged view; returns nullptr when absent.
    const ConditionFeature* find(const std::string& agent_id, const std::string& name) const {
        auto it = per_agent.find(agent_id);
        if (it != per_agent.end())
            for (const auto& f : it->second)
                if (f.name == name) return &f;
        for (const auto& f : global)
            if (f.name == name) return &f;
        return nullptr;
    }
};

struct Query {
    std::string id;
    std::string text;
    std::string ground_truth;  // empty = unknown; consumed only by evaluators
};

namespace detail {
inline std::string format_scalar(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}
}  // namespace detail

// Render one profile as deterministic text. Wording is frozen so embeddings
// are reproducible; the agent id deliberately stays out (two agents with
// identical role/model/tools should embed identically).
inline std::string verbalize_profile(const AgentProfile& profile) {
    std::string text = "Role: " + profile.role + ". Base model: " + profile.base_model + ".";
    if (profile.plugins.empty()) {
        text += " No tools available.";
    } else {
        text += " Tools:";
        for (std::size_t i = 0; i < profile.plugins.size(); ++i)
            text += (i == 0 ? " " : ", ") + profile.plugins[i];
        text += ".";
    }
    return text;
}

// Render the merged condition view for one agent, features in name order,
// scalars at fixed 4-decimal precision.
inline std::string verbalize_condition(const std::string& agent_id, const ConditionSet& conditions) {
    std::string text = "Conditions:";
    bool first = true;
    for (const auto& f : conditions.merged_for(agent_id)) {
        text += (first ? " " : "; ") + f.name + "=";
        text += f.is_scalar() ? detail::format_scalar(f.scalar()) : f.label();
        first = false;
    }
    text += ".";
    return text;
}

}  // namespace card
