#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "card/agents.hpp"
#include "card/errors.hpp"
#include "card/graph.hpp"
#include "card/hash.hpp"

namespace card {

struct Message {
    int round = 0;  // 1-based
    int from = 0;
    std::string content;
};

struct RoundPrompts {
    std::string system;
    std::string user;  // always contains the query text
};

// Pluggable agent behavior: (agent index, round, prompts, in-neighbor
// messages of this round) -> response text. Must terminate and must not
// mutate the topology.
using AgentExecutor =
    std::function<std::string(int agent, int round, const RoundPrompts&, const std::vector<Message>&)>;

struct Transcript {
    std::vector<std::vector<Message>> per_round;  // K lists of N messages
    std::string final_answer;                     // filled by run_and_aggregate
};

// Raised when an executor throws; carries whatever had been produced so far.
struct ExecutorFailure : std::runtime_error {
    int agent;
    int round;
    Transcript partial;

    ExecutorFailure(int agent_, int round_, Transcript partial_, const std::string& cause)
        : std::runtime_error("executor failed for agent " + std::to_string(agent_) + " at round " +
                             std::to_string(round_) + ": " + cause),
          agent(agent_), round(round_), partial(std::move(partial_)) {}
};

enum class AggregationMode { vote, select_last, concat_summary };

inline const char* to_string(AggregationMode m) {
    switch (m) {
        case AggregationMode::vote: return "vote";
        case AggregationMode::select_last: return "select-last";
        case AggregationMode::concat_summary: return "concat-summary";
    }
    return "?";
}

inline AggregationMode aggregation_from_string(const std::string& s) {
    if (s == "vote") return AggregationMode::vote;
    if (s == "select-last") return AggregationMode::select_last;
    if (s == "concat-summary") return AggregationMode::concat_summary;
    throw ValidationError("unknown aggregation mode: " + s);
}

// Trim + lowercase; shared by voting and the simulated utility oracle.
inline std::string normalize_answer(const std::string& raw) {
    std::size_t begin = 0, end = raw.size();
    while (begin < end && std::isspace(static_cast<unsigned char>(raw[begin]))) ++begin;
    while (end > begin && std::isspace(static_cast<unsigned char>(raw[end - 1]))) --end;
    std::string out = raw.substr(begin, end - begin);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

inline RoundPrompts build_prompts(int agent, int round, const Query& query,
                                  const std::vector<Message>& upstream) {
    RoundPrompts prompts;
    prompts.system = "You are agent " + std::to_string(agent) +
                     " in a cooperative multi-agent team. Round " + std::to_string(round) + ".";
    prompts.user = "Task: " + query.text;
    for (const auto& m : upstream)
        prompts.user += "\n[from agent " + std::to_string(m.from) + "] " + m.content;
    return prompts;
}

// K rounds of propagation. Within a round, agents run in schedule order, so
// every in-neighbor's round-t response exists before its consumers run; each
// agent sees exactly its in-neighbors' messages of the current round.
inline Transcript run_rounds(const CommTopology& topology, const Query& query,
                             const AgentExecutor& executor, int k) {
    if (k < 1) throw ValidationError("k rounds must be >= 1");
    Transcript transcript;
    for (int t = 1; t <= k; ++t) {
        std::vector<Message> round(static_cast<std::size_t>(topology.n));
        std::vector<bool> produced(static_cast<std::size_t>(topology.n), false);
        for (int agent : topology.schedule) {
            std::vector<Message> upstream;
            for (int i : topology.in_neighbors(agent)) {
                // Guaranteed by the schedule invariant; guards executor bugs.
                if (!produced[static_cast<std::size_t>(i)])
                    throw CycleDetected("schedule violated edge (" + std::to_string(i) + " -> " +
                                        std::to_string(agent) + ")");
                upstream.push_back(round[static_cast<std::size_t>(i)]);
            }
            RoundPrompts prompts = build_prompts(agent, t, query, upstream);
            std::string response;
            try {
                response = executor(agent, t, prompts, upstream);
            } catch (const std::exception& e) {
                transcript.per_round.push_back(round);  // keep the partial round
                throw ExecutorFailure(agent, t, std::move(transcript), e.what());
            }
            round[static_cast<std::size_t>(agent)] = Message{t, agent, std::move(response)};
            produced[static_cast<std::size_t>(agent)] = true;
        }
        transcript.per_round.push_back(std::move(round));
    }
    return transcript;
}

// Reduce the final round to one answer. `responses` is indexed by agent.
inline std::string aggregate(const std::vector<std::string>& responses, AggregationMode mode,
                             const std::vector<int>& schedule) {
    if (responses.empty()) throw EmptyResponses();
    switch (mode) {
        case AggregationMode::vote: {
            std::map<std::string, int> counts;
            for (const auto& r : responses) ++counts[normalize_answer(r)];
            // Highest count wins; ties go to the lexicographically smallest
            // normalized answer (std::map iterates in that order).
            std::string winner;
            int best = -1;
            for (const auto& [answer, count] : counts)
                if (count > best) winner = answer, best = count;
            // Return the first original spelling of the winning answer.
            for (const auto& r : responses)
                if (normalize_answer(r) == winner) return r;
            return winner;
        }
        case AggregationMode::select_last: {
            if (schedule.size() != responses.size())
                throw ShapeMismatch("schedule size must equal response count");
            return responses[static_cast<std::size_t>(schedule.back())];
        }
        case AggregationMode::concat_summary: {
            // Summarization stub: deterministic schedule-order concatenation.
            std::vector<int> order = schedule;
            if (order.empty())
                for (std::size_t i = 0; i < responses.size(); ++i)
                    order.push_back(static_cast<int>(i));
            std::string joined;
            for (std::size_t i = 0; i < order.size(); ++i) {
                if (i) joined += " | ";
                joined += responses[static_cast<std::size_t>(order[i])];
            }
            return joined;
        }
    }
    throw ValidationError("unreachable aggregation mode");
}

inline std::vector<std::string> final_round_responses(const Transcript& transcript) {
    if (transcript.per_round.empty()) throw EmptyResponses();
    std::vector<std::string> responses;
    for (const auto& m : transcript.per_round.back()) responses.push_back(m.content);
    return responses;
}

inline Transcript run_and_aggregate(const CommTopology& topology, const Query& query,
                                    const AgentExecutor& executor, int k, AggregationMode mode) {
    Transcript transcript = run_rounds(topology, query, executor, k);
    transcript.final_answer = aggregate(final_round_responses(transcript), mode, topology.schedule);
    return transcript;
}

// A utility provider: runs one episode over the topology under the given
// conditions and scores the final answer in [0,1]. Implemented by the
// simulated environment; an external-LLM adapter can supply its own.
using UtilityFn = std::function<double(const Query&, const ConditionSet&, const CommTopology&,
                                       std::uint64_t episode_seed)>;

// Structured text log, one record per (round, agent) in execution order,
// stable field order. Prompts are pure functions of the transcript, so they
// are rebuilt here and logged as digests to keep records diffable.
inline void export_transcript(const Transcript& transcript, const CommTopology& topology,
                              const Query& query, std::ostream& out) {
    out << "transcript query=" << query.id << " rounds=" << transcript.per_round.size() << '\n';
    char digest[32];
    for (std::size_t t = 0; t < transcript.per_round.size(); ++t) {
        const auto& round = transcript.per_round[t];
        for (int agent : topology.schedule) {
            if (agent >= static_cast<int>(round.size())) continue;
            const Message& m = round[static_cast<std::size_t>(agent)];
            std::vector<Message> upstream;
            for (int i : topology.in_neighbors(agent))
                upstream.push_back(round[static_cast<std::size_t>(i)]);
            RoundPrompts prompts = build_prompts(agent, static_cast<int>(t + 1), query, upstream);
            std::snprintf(digest, sizeof(digest), "%016llx",
                          static_cast<unsigned long long>(
                              fnv1a64(prompts.system + '\x1f' + prompts.user)));
            out << "round=" << (t + 1) << " agent=" << agent << " prompt_digest=" << digest
                << " response=" << m.content << '\n';
        }
    }
    if (!transcript.final_answer.empty()) out << "final_answer=" << transcript.final_answer << '\n';
}

}  // namespace card
