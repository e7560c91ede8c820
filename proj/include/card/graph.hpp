#pragma once

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <queue>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "card/errors.hpp"

namespace card {

enum class AnchorKind { chain, star, fully_connected };

inline const char* to_string(AnchorKind k) {
    switch (k) {
        case AnchorKind::chain: return "chain";
        case AnchorKind::star: return "star";
        case AnchorKind::fully_connected: return "fully-connected";
    }
    return "?";
}

inline AnchorKind anchor_kind_from_string(const std::string& s) {
    if (s == "chain") return AnchorKind::chain;
    if (s == "star") return AnchorKind::star;
    if (s == "fully-connected" || s == "full") return AnchorKind::fully_connected;
    throw ValidationError("unknown anchor kind: " + s);
}

// A structural prior over which the encoders propagate before any edges are
// learned.
struct AnchorTopology {
    AnchorKind kind = AnchorKind::fully_connected;
    int n = 0;

    void validate() const {
        if (n < 1) throw ValidationError("anchor needs n >= 1");
    }
};

// N x N link probabilities with a masked (always zero) diagonal.
struct EdgeProbMatrix {
    int n = 0;
    Eigen::MatrixXd s;

    EdgeProbMatrix() = default;
    EdgeProbMatrix(int n_, Eigen::MatrixXd s_) : n(n_), s(std::move(s_)) { validate(); }

    void validate() const {
        if (s.rows() != n || s.cols() != n)
            throw ShapeMismatch("edge probability matrix must be n x n");
        for (int i = 0; i < n; ++i) {
            if (s(i, i) != 0.0)
                throw ValidationError("diagonal entries must be exactly 0 (masked)");
            for (int j = 0; j < n; ++j)
                if (!(s(i, j) >= 0.0 && s(i, j) <= 1.0))
                    throw ValidationError("edge probabilities must lie in [0,1]");
        }
    }
};

struct Edge {
    int from = 0;
    int to = 0;
    double prob = 0.0;

    friend bool operator==(const Edge& a, const Edge& b) {
        return a.from == b.from && a.to == b.to && a.prob == b.prob;
    }
};

inline EdgeProbMatrix anchor_adjacency(const AnchorTopology& anchor) {
    anchor.validate();
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(anchor.n, anchor.n);
    switch (anchor.kind) {
        case AnchorKind::chain:
            for (int i = 0; i + 1 < anchor.n; ++i) a(i, i + 1) = 1.0;
            break;
        case AnchorKind::star:
            for (int j = 1; j < anchor.n; ++j) a(0, j) = 1.0;
            break;
        case AnchorKind::fully_connected:
            a.setOnes();
            a.diagonal().setZero();
            break;
    }
    return EdgeProbMatrix(anchor.n, std::move(a));
}

// Strict cut: keep (i,j) iff s[i][j] > tau. Entries equal to tau drop.
inline std::vector<Edge> threshold(const EdgeProbMatrix& s, double tau) {
    if (!(tau > 0.0 && tau < 1.0)) throw InvalidThreshold(tau);
    std::vector<Edge> edges;
    for (int i = 0; i < s.n; ++i)
        for (int j = 0; j < s.n; ++j)
            if (i != j && s.s(i, j) > tau) edges.push_back({i, j, s.s(i, j)});
    return edges;
}

namespace detail {
// Deterministic cycle finder: DFS from the smallest vertex, neighbors in
// ascending order; returns the edges of the first cycle found, or empty.
inline std::vector<Edge> find_cycle(const std::vector<Edge>& edges, int n) {
    std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
    std::map<std::pair<int, int>, double> prob;
    for (const auto& e : edges) {
        adj[static_cast<std::size_t>(e.from)].push_back(e.to);
        prob[{e.from, e.to}] = e.prob;
    }
    for (auto& nbrs : adj) std::sort(nbrs.begin(), nbrs.end());

    std::vector<int> color(static_cast<std::size_t>(n), 0);  // 0 new, 1 on stack, 2 done
    std::vector<int> stack;
    std::vector<Edge> cycle;

    std::function<bool(int)> dfs = [&](int u) {
        color[static_cast<std::size_t>(u)] = 1;
        stack.push_back(u);
        for (int v : adj[static_cast<std::size_t>(u)]) {
            if (color[static_cast<std::size_t>(v)] == 1) {
                auto it = std::find(stack.begin(), stack.end(), v);
                for (auto p = it; p != stack.end(); ++p) {
                    int a = *p;
                    int b = (p + 1 != stack.end()) ? *(p + 1) : v;
                    cycle.push_back({a, b, prob.at({a, b})});
                }
                return true;
            }
            if (color[static_cast<std::size_t>(v)] == 0 && dfs(v)) return true;
        }
        stack.pop_back();
        color[static_cast<std::size_t>(u)] = 2;
        return false;
    };

    for (int s = 0; s < n; ++s)
        if (color[static_cast<std::size_t>(s)] == 0 && dfs(s)) return cycle;
    return {};
}

inline int max_vertex(const std::vector<Edge>& edges) {
    int n = 0;
    for (const auto& e : edges) n = std::max({n, e.from + 1, e.to + 1});
    return n;
}
}  // namespace detail

// Acyclicity repair: repeatedly locate a cycle and drop its least-probable
// edge (ties: smallest (from,to) pair). Deterministic; returns a subset of
// the input.
inline std::vector<Edge> break_cycles(std::vector<Edge> edges) {
    for (const auto& e : edges)
        if (e.from == e.to) throw ValidationError("self-loop in edge set");
    int n = detail::max_vertex(edges);
    for (;;) {
        std::vector<Edge> cycle = detail::find_cycle(edges, n);
        if (cycle.empty()) break;
        const Edge* victim = &cycle.front();
        for (const auto& e : cycle) {
            if (e.prob < victim->prob ||
                (e.prob == victim->prob &&
                 std::pair(e.from, e.to) < std::pair(victim->from, victim->to)))
                victim = &e;
        }
        Edge removed = *victim;
        edges.erase(std::remove_if(edges.begin(), edges.end(),
                                   [&](const Edge& e) {
                                       return e.from == removed.from && e.to == removed.to;
                                   }),
                    edges.end());
    }
    return edges;
}

// Kahn's algorithm with a min-index frontier, so the returned permutation is
// the unique lexicographically-smallest topological order.
inline std::vector<int> schedule(const std::vector<Edge>& edges, int n) {
    std::vector<int> indegree(static_cast<std::size_t>(n), 0);
    std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
    for (const auto& e : edges) {
        if (e.from < 0 || e.from >= n || e.to < 0 || e.to >= n)
            throw IndexOutOfRange("edge endpoint outside [0,n)");
        ++indegree[static_cast<std::size_t>(e.to)];
        adj[static_cast<std::size_t>(e.from)].push_back(e.to);
    }
    std::priority_queue<int, std::vector<int>, std::greater<int>> frontier;
    for (int v = 0; v < n; ++v)
        if (indegree[static_cast<std::size_t>(v)] == 0) frontier.push(v);
    std::vector<int> order;
    order.reserve(static_cast<std::size_t>(n));
    while (!frontier.empty()) {
        int u = frontier.top();
        frontier.pop();
        order.push_back(u);
        for (int v : adj[static_cast<std::size_t>(u)])
            if (--indegree[static_cast<std::size_t>(v)] == 0) frontier.push(v);
    }
    if (static_cast<int>(order.size()) != n)
        throw CycleDetected("edge set contains a cycle; cannot schedule");
    return order;
}

// The executable communication graph: acyclic edges plus a schedule that puts
// every producer before its consumers.
struct CommTopology {
    int n = 0;
    std::vector<Edge> edges;
    std::vector<int> schedule;

    static CommTopology build(int n, std::vector<Edge> acyclic_edges) {
        CommTopology t;
        t.n = n;
        t.edges = std::move(acyclic_edges);
        std::sort(t.edges.begin(), t.edges.end(), [](const Edge& a, const Edge& b) {
            return std::pair(a.from, a.to) < std::pair(b.from, b.to);
        });
        t.schedule = card::schedule(t.edges, n);
        return t;
    }

    std::vector<int> in_neighbors(int j) const {
        if (j < 0 || j >= n) throw IndexOutOfRange("agent index " + std::to_string(j));
        std::vector<int> ins;
        for (const auto& e : edges)
            if (e.to == j) ins.push_back(e.from);
        return ins;
    }
};

// ---------------------------------------------------------------------------
// Matrix text formats.
//
// Grid format: row/column labels (spaces rendered as underscores), 2-decimal
// probabilities, the literal "Masked" on the diagonal. Machine format: plain
// row-major decimals with 0.00 on the diagonal, no labels.
// ---------------------------------------------------------------------------

namespace detail {
inline std::string underscored(std::string s) {
    for (char& c : s)
        if (c == ' ') c = '_';
    return s;
}

inline std::string format_prob(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}
}  // namespace detail

inline void write_matrix_grid(const EdgeProbMatrix& m, const std::vector<std::string>& labels,
                              std::ostream& out) {
    if (static_cast<int>(labels.size()) != m.n)
        throw ShapeMismatch("label count must equal matrix size");
    std::vector<std::string> names;
    std::size_t width = 6;  // fits "Masked"
    for (const auto& l : labels) {
        names.push_back(detail::underscored(l));
        width = std::max(width, names.back().size());
    }
    auto pad = [&](const std::string& s, std::size_t w) {
        return s + std::string(w > s.size() ? w - s.size() : 0, ' ');
    };
    // Every column must hold its label and any cell ("Masked" is 6 chars).
    auto col_width = [&](std::size_t j) { return std::max(names[j].size(), std::size_t{6}) + 2; };
    out << pad("", width + 2);
    for (std::size_t j = 0; j < names.size(); ++j) out << pad(names[j], col_width(j));
    out << '\n';
    for (int i = 0; i < m.n; ++i) {
        out << pad(names[static_cast<std::size_t>(i)], width + 2);
        for (int j = 0; j < m.n; ++j) {
            std::string cell =
                (i == j) ? "Masked" : detail::format_prob(m.s(i, j));
            out << pad(cell, col_width(static_cast<std::size_t>(j)));
        }
        out << '\n';
    }
}

inline void write_matrix_machine(const EdgeProbMatrix& m, std::ostream& out) {
    char buf[32];
    for (int i = 0; i < m.n; ++i) {
        for (int j = 0; j < m.n; ++j) {
            std::snprintf(buf, sizeof(buf), "%.6f", i == j ? 0.0 : m.s(i, j));
            out << (j ? " " : "") << buf;
        }
        out << '\n';
    }
}

struct ParsedMatrix {
    EdgeProbMatrix matrix;
    std::vector<std::string> labels;  // empty when the file had none
};

// Reads either format: '#' comments and blank lines are skipped, an optional
// header row of labels is recognized, each data row may carry a leading
// label, and "Masked" parses as 0.
inline ParsedMatrix parse_matrix(std::istream& in) {
    std::vector<std::vector<std::string>> rows;
    std::string line;
    int lineno = 0;
    std::vector<int> linenos;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::vector<std::string> tokens;
        std::string tok;
        while (ls >> tok) tokens.push_back(tok);
        if (tokens.empty()) continue;
        rows.push_back(std::move(tokens));
        linenos.push_back(lineno);
    }
    if (rows.empty()) throw SyntaxError(lineno, 1, "matrix file holds no data");

    auto numeric_or_masked = [](const std::string& t, double& out_v) {
        if (t == "Masked" || t == "masked") {
            out_v = 0.0;
            return true;
        }
        char* end = nullptr;
        out_v = std::strtod(t.c_str(), &end);
        return end != nullptr && *end == '\0' && end != t.c_str();
    };

    ParsedMatrix result;
    std::size_t start = 0;
    double ignored;
    bool header = std::all_of(rows[0].begin(), rows[0].end(), [&](const std::string& t) {
        double v;
        return !numeric_or_masked(t, v);
    });
    (void)ignored;
    if (header) {
        result.labels = rows[0];
        start = 1;
        if (rows.size() == 1) throw SyntaxError(linenos[0], 1, "header without data rows");
    }

    std::vector<std::vector<double>> values;
    for (std::size_t r = start; r < rows.size(); ++r) {
        std::vector<std::string> toks = rows[r];
        double v;
        if (!toks.empty() && !numeric_or_masked(toks[0], v)) {
            if (!header) result.labels.push_back(toks[0]);
            toks.erase(toks.begin());
        }
        std::vector<double> row;
        for (std::size_t c = 0; c < toks.size(); ++c) {
            if (!numeric_or_masked(toks[c], v))
                throw SyntaxError(linenos[r], static_cast<int>(c + 1),
                                  "expected a probability, got '" + toks[c] + "'");
            row.push_back(v);
        }
        if (row.empty()) throw SyntaxError(linenos[r], 1, "row holds no values");
        values.push_back(std::move(row));
    }

    int n = static_cast<int>(values.size());
    Eigen::MatrixXd m(n, n);
    for (int i = 0; i < n; ++i) {
        if (static_cast<int>(values[static_cast<std::size_t>(i)].size()) != n)
            throw SyntaxError(linenos[start + static_cast<std::size_t>(i)], 1,
                              "matrix is not square");
        for (int j = 0; j < n; ++j) m(i, j) = values[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
    if (!result.labels.empty() && static_cast<int>(result.labels.size()) != n)
        throw SyntaxError(linenos[0], 1, "label count does not match matrix size");
    result.matrix = EdgeProbMatrix(n, std::move(m));
    return result;
}

}  // namespace card
