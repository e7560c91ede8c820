#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "card/agents.hpp"
#include "card/errors.hpp"
#include "card/hash.hpp"
#include "card/runtime.hpp"

namespace card {

// Stochastic responder: answers correctly with probability
// clamp(difficulty * (base_quality + tool_bonus + help_bonus * #helpers)),
// capped at 0.98, otherwise emits a uniformly random wrong letter.
struct ResponderSpec {
    double base_quality = 0.5;
    double tool_bonus = 0.0;
    double help_bonus = 0.15;

    void validate() const {
        if (base_quality < 0.0 || base_quality > 1.0)
            throw ValidationError("base_quality must lie in [0,1]");
        if (tool_bonus < 0.0 || tool_bonus > 0.5)
            throw ValidationError("tool_bonus must lie in [0,0.5]");
        if (help_bonus < 0.0) throw ValidationError("help_bonus must be >= 0");
    }
};

struct SimTask {
    Query query;          // ground_truth holds the correct letter
    std::string answer;   // one of the answer alphabet
    double difficulty = 1.0;

    void validate() const {
        if (difficulty < 0.0 || difficulty > 1.0)
            throw ValidationError("difficulty must lie in [0,1]");
    }
};

inline const std::array<std::string, 4>& answer_alphabet() {
    static const std::array<std::string, 4> alphabet{"A", "B", "C", "D"};
    return alphabet;
}

inline constexpr double kCorrectnessCap = 0.98;

inline double correctness_probability(const ResponderSpec& spec, double difficulty,
                                      int correct_upstream) {
    double p = difficulty * (spec.base_quality + spec.tool_bonus +
                             spec.help_bonus * static_cast<double>(correct_upstream));
    if (p < 0.0) p = 0.0;
    if (p > kCorrectnessCap) p = kCorrectnessCap;
    return p;
}

// Builds the deterministic stochastic executor for one task. Randomness is a
// pure function of (seed, task id, agent, round), so identical inputs replay
// identical episodes regardless of execution order elsewhere.
inline AgentExecutor sim_executor(std::vector<ResponderSpec> specs, SimTask task,
                                  std::uint64_t seed) {
    for (const auto& s : specs) s.validate();
    task.validate();
    std::uint64_t task_key = fnv1a64(task.query.id, seed);
    return [specs = std::move(specs), task = std::move(task), task_key](
               int agent, int round, const RoundPrompts&, const std::vector<Message>& upstream) {
        if (agent < 0 || agent >= static_cast<int>(specs.size()))
            throw IndexOutOfRange("sim executor: agent " + std::to_string(agent));
        std::string truth = normalize_answer(task.answer);
        std::set<int> helpers;
        for (const auto& m : upstream)
            if (normalize_answer(m.content) == truth) helpers.insert(m.from);
        double p = correctness_probability(specs[static_cast<std::size_t>(agent)], task.difficulty,
                                           static_cast<int>(helpers.size()));
        CounterRng rng(combine_keys(task_key, combine_keys(static_cast<std::uint64_t>(agent),
                                                           static_cast<std::uint64_t>(round))));
        if (rng.next_unit() < p) return task.answer;
        // Uniform over the three wrong letters.
        const auto& alphabet = answer_alphabet();
        std::vector<std::string> wrong;
        for (const auto& letter : alphabet)
            if (normalize_answer(letter) != truth) wrong.push_back(letter);
        auto pick = static_cast<std::size_t>(rng.next_unit() * static_cast<double>(wrong.size()));
        if (pick >= wrong.size()) pick = wrong.size() - 1;
        return wrong[pick];
    };
}

// 1 if the aggregated answer matches the task's answer after normalization.
inline double sim_utility(const std::string& aggregated_answer, const SimTask& task) {
    return normalize_answer(aggregated_answer) == normalize_answer(task.answer) ? 1.0 : 0.0;
}

// ---------------------------------------------------------------------------
// Scenario construction.
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& scenario_names() {
    static const std::vector<std::string> names{"weak-model", "strong-model", "weak-tool",
                                                "strong-tool", "mixed"};
    return names;
}

// Fixed five-agent roster; the Searcher is the only tool-bearing role.
inline Roster sim_roster() {
    return {
        {"expert", "Knowlegable Expert", "sim-core", {}},
        {"searcher", "Searcher", "sim-core", {"web-search"}},
        {"philosopher", "Philosopher", "sim-core", {}},
        {"mathematician", "Mathematician", "sim-core", {}},
        {"critic", "Critic", "sim-core", {}},
    };
}

namespace detail {
// Prices scale with model quality so that cost pressure concentrates on
// strong-model conditions: in = 2 + 65 * max(0, mq - 0.35), out = 2.2 * in
// (currency per million tokens).
inline ConditionSet scenario_conditions(double model_quality, double tool_quality) {
    double in_price = 2.0 + 65.0 * std::max(0.0, model_quality - 0.35);
    double out_price = 2.2 * in_price;
    ConditionSet conditions;
    conditions.global = {
        {"model_quality", model_quality},
        {"tool_quality", tool_quality},
        {"input_price", in_price},
        {"output_price", out_price},
    };
    return conditions;
}

inline ConditionSet conditions_for_family(int family) {
    switch (family & 3) {
        case 0: return scenario_conditions(0.35, 0.7);  // weak-model
        case 1: return scenario_conditions(0.85, 0.7);  // strong-model
        case 2: return scenario_conditions(0.60, 0.2);  // weak-tool
        default: return scenario_conditions(0.60, 0.9);  // strong-tool
    }
}
}  // namespace detail

inline constexpr int kSimTaskCount = 64;

// Fixed bank of 64 multiple-choice tasks; answers cycle through the alphabet.
inline std::vector<SimTask> sim_task_bank() {
    std::vector<SimTask> tasks;
    tasks.reserve(kSimTaskCount);
    for (int i = 0; i < kSimTaskCount; ++i) {
        char id[16];
        std::snprintf(id, sizeof(id), "task-%02d", i);
        const std::string& answer = answer_alphabet()[static_cast<std::size_t>(i % 4)];
        SimTask task;
        task.query.id = id;
        task.query.text = "Question " + std::to_string(i) + ": choose the correct option.";
        task.query.ground_truth = answer;
        task.answer = answer;
        task.difficulty = 1.0;
        tasks.push_back(std::move(task));
    }
    return tasks;
}

// The environment configuration set: a roster plus (query, conditions) pairs
// over the fixed task bank.
struct ConfigSet {
    Roster roster;
    std::vector<std::pair<Query, ConditionSet>> pairs;
};

// Deterministic scenario realization. Homogeneous scenarios repeat one
// condition set across all 64 tasks; "mixed" cycles through the four
// families so at least two distinct quality values are present.
inline ConfigSet make_config_set(const std::string& scenario) {
    int family = -1;
    if (scenario == "weak-model") family = 0;
    else if (scenario == "strong-model") family = 1;
    else if (scenario == "weak-tool") family = 2;
    else if (scenario == "strong-tool") family = 3;
    else if (scenario != "mixed")
        throw ValidationError("unknown scenario: " + scenario);

    ConfigSet set;
    set.roster = sim_roster();
    std::vector<SimTask> tasks = sim_task_bank();
    for (int i = 0; i < kSimTaskCount; ++i) {
        const ConditionSet conditions =
            detail::conditions_for_family(family >= 0 ? family : i % 4);
        set.pairs.emplace_back(tasks[static_cast<std::size_t>(i)].query, conditions);
    }
    return set;
}

// Maps conditions + roster to per-agent responder specs. Tool-bearing agents
// (nonempty plugin list) get the bonus when their tool_quality exceeds 0.5.
inline std::vector<ResponderSpec> responder_specs(const Roster& roster,
                                                  const ConditionSet& conditions,
                                                  double help_bonus = 0.15) {
    std::vector<ResponderSpec> specs;
    specs.reserve(roster.size());
    for (const auto& agent : roster) {
        ResponderSpec spec;
        spec.help_bonus = help_bonus;
        if (const ConditionFeature* f = conditions.find(agent.id, "model_quality");
            f && f->is_scalar())
            spec.base_quality = f->scalar();
        if (const ConditionFeature* f = conditions.find(agent.id, "tool_quality");
            f && f->is_scalar() && f->scalar() > 0.5 && !agent.plugins.empty())
            spec.tool_bonus = 0.3;
        spec.validate();
        specs.push_back(spec);
    }
    return specs;
}

// Task lookup for utility scoring: the query carries the truth and the bank's
// difficulty is uniform, so the task is rebuilt from the query alone.
inline SimTask task_from_query(const Query& query) {
    SimTask task;
    task.query = query;
    task.answer = query.ground_truth;
    task.difficulty = 1.0;
    if (task.answer.empty())
        throw ValidationError("query '" + query.id + "' carries no ground truth");
    return task;
}

// Runs one simulated episode over the topology and scores the aggregated
// answer; see UtilityFn in runtime.hpp.
inline UtilityFn make_sim_utility(Roster roster, int k_rounds, AggregationMode mode) {
    return [roster = std::move(roster), k_rounds, mode](
               const Query& query, const ConditionSet& conditions, const CommTopology& topology,
               std::uint64_t episode_seed) {
        SimTask task = task_from_query(query);
        AgentExecutor executor = sim_executor(responder_specs(roster, conditions), task, episode_seed);
        Transcript transcript = run_and_aggregate(topology, query, executor, k_rounds, mode);
        return sim_utility(transcript.final_answer, task);
    };
}

}  // namespace card
