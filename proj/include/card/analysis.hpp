#pragma once

#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>

#include "card/agents.hpp"
#include "card/errors.hpp"
#include "card/generator.hpp"
#include "card/graph.hpp"

namespace card {

// ---------------------------------------------------------------------------
// Topology statistics.
// ---------------------------------------------------------------------------

struct TopologyStats {
    double mean_offdiag = 0.0;   // mean of the n(n-1) off-diagonal entries
    double density_at_tau = 0.0; // fraction of off-diagonal entries > tau
    EdgeProbMatrix per_edge;
};

inline TopologyStats stats(const EdgeProbMatrix& s, double tau) {
    if (!(tau > 0.0 && tau < 1.0)) throw InvalidThreshold(tau);
    TopologyStats st;
    st.per_edge = s;
    if (s.n < 2) return st;
    double sum = 0.0;
    int above = 0;
    for (int i = 0; i < s.n; ++i)
        for (int j = 0; j < s.n; ++j) {
            if (i == j) continue;
            sum += s.s(i, j);
            if (s.s(i, j) > tau) ++above;
        }
    double pairs = static_cast<double>(s.n) * (s.n - 1);
    st.mean_offdiag = sum / pairs;
    st.density_at_tau = static_cast<double>(above) / pairs;
    return st;
}

// ---------------------------------------------------------------------------
// Pearson correlation between matrices.
// ---------------------------------------------------------------------------

// Which entries of the two matrices form the paired sample.
//   off_diagonal:     all ordered pairs i != j (the library's default contract).
//   full_matrix:      every entry including the zero diagonal.
//   upper_no_first:   unordered upper-triangle pairs restricted to rows and
//                     columns >= 1, i.e. i < j with both in {1..n-1}. Use this
//                     when agent 0 is a fixed coordinator whose always-on row
//                     and column would otherwise dominate the comparison.
enum class PairSelection { off_diagonal, full_matrix, upper_no_first };

inline const char* to_string(PairSelection s) {
    switch (s) {
        case PairSelection::off_diagonal: return "off-diagonal";
        case PairSelection::full_matrix: return "full-matrix";
        case PairSelection::upper_no_first: return "upper-no-first";
    }
    return "?";
}

struct PearsonResult {
    double r = 0.0;
    double p = 1.0;  // two-sided, from the t distribution
    int pairs = 0;   // sample size; degrees of freedom = pairs - 2
};

namespace detail {
inline std::vector<std::pair<int, int>> selected_pairs(int n, PairSelection sel) {
    std::vector<std::pair<int, int>> idx;
    switch (sel) {
        case PairSelection::off_diagonal:
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j)
                    if (i != j) idx.emplace_back(i, j);
            break;
        case PairSelection::full_matrix:
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) idx.emplace_back(i, j);
            break;
        case PairSelection::upper_no_first:
            for (int i = 1; i < n; ++i)
                for (int j = i + 1; j < n; ++j) idx.emplace_back(i, j);
            break;
    }
    return idx;
}
}  // namespace detail

inline PearsonResult pearson(const EdgeProbMatrix& a, const EdgeProbMatrix& b,
                             PairSelection sel = PairSelection::off_diagonal) {
    if (a.n != b.n) throw ShapeMismatch("matrices must share n");
    std::vector<std::pair<int, int>> idx = detail::selected_pairs(a.n, sel);
    if (idx.size() < 3) throw ValidationError("need at least 3 paired entries");

    double n = static_cast<double>(idx.size());
    double mean_a = 0.0, mean_b = 0.0;
    for (auto [i, j] : idx) {
        mean_a += a.s(i, j);
        mean_b += b.s(i, j);
    }
    mean_a /= n;
    mean_b /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (auto [i, j] : idx) {
        double da = a.s(i, j) - mean_a;
        double db = b.s(i, j) - mean_b;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa == 0.0 || sbb == 0.0)
        throw DegenerateVariance("constant matrix entries: correlation undefined");

    PearsonResult result;
    result.pairs = static_cast<int>(idx.size());
    result.r = sab / std::sqrt(saa * sbb);
    // Floating error can push |r| infinitesimally past 1.
    if (result.r > 1.0) result.r = 1.0;
    if (result.r < -1.0) result.r = -1.0;
    double df = n - 2.0;
    double one_minus_r2 = 1.0 - result.r * result.r;
    if (one_minus_r2 <= 0.0) {
        result.p = 0.0;
    } else {
        double t = result.r * std::sqrt(df / one_minus_r2);
        boost::math::students_t dist(df);
        result.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
    }
    return result;
}

// Qualitative labels used by the comparison report.
inline const char* strength_label(double r) {
    double a = std::abs(r);
    if (a < 0.4) return "Weak";
    if (a < 0.7) return "Moderate";
    if (a < 0.9) return "Strong";
    return "Very strong";
}

inline const char* significance_label(double p) {
    if (p < 0.05) return "Yes";
    if (p < 0.1) return "Marginal";
    return "No";
}

// ---------------------------------------------------------------------------
// Runtime adaptation: one forward pass with refreshed condition embeddings.
// No parameter ever changes; calling twice with equal inputs gives equal
// topologies.
// ---------------------------------------------------------------------------

inline CommTopology adapt(const GeneratorParams& params, const Roster& roster,
                          const ConditionSet& new_conditions, const Query& query,
                          const AnchorTopology& anchor, double tau) {
    return generate(roster, new_conditions, query, anchor, params, tau).topology;
}

// ---------------------------------------------------------------------------
// Comparison report over a set of named matrices: per-matrix statistics plus
// all pairwise correlations.
// ---------------------------------------------------------------------------

struct NamedMatrix {
    std::string name;
    EdgeProbMatrix matrix;
};

inline void write_report_text(const std::vector<NamedMatrix>& matrices, double tau,
                              PairSelection sel, std::ostream& out) {
    if (matrices.size() < 2) throw ValidationError("report needs at least 2 matrices");
    char buf[160];
    out << "Per-matrix statistics (tau = " << tau << ")\n";
    for (const auto& nm : matrices) {
        TopologyStats st = stats(nm.matrix, tau);
        std::snprintf(buf, sizeof(buf), "  %-24s mean_offdiag=%.4f density=%.4f\n",
                      nm.name.c_str(), st.mean_offdiag, st.density_at_tau);
        out << buf;
    }
    out << "\nPairwise correlation (" << to_string(sel) << " entries)\n";
    std::snprintf(buf, sizeof(buf), "  %-28s %8s %8s  %-12s %s\n", "Comparison", "r", "p",
                  "Strength", "Sig.");
    out << buf;
    for (std::size_t i = 0; i < matrices.size(); ++i)
        for (std::size_t j = i + 1; j < matrices.size(); ++j) {
            PearsonResult pr = pearson(matrices[i].matrix, matrices[j].matrix, sel);
            std::string comparison = matrices[i].name + " vs " + matrices[j].name;
            std::snprintf(buf, sizeof(buf), "  %-28s %8.4f %8.4f  %-12s %s\n", comparison.c_str(),
                          pr.r, pr.p, strength_label(pr.r), significance_label(pr.p));
            out << buf;
        }
}

// Machine-readable twin: two CSV blocks separated by a blank line.
inline void write_report_machine(const std::vector<NamedMatrix>& matrices, double tau,
                                 PairSelection sel, std::ostream& out) {
    if (matrices.size() < 2) throw ValidationError("report needs at least 2 matrices");
    char buf[200];
    out << "matrix,mean_offdiag,density_at_tau\n";
    for (const auto& nm : matrices) {
        TopologyStats st = stats(nm.matrix, tau);
        std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f\n", nm.name.c_str(), st.mean_offdiag,
                      st.density_at_tau);
        out << buf;
    }
    out << "\na,b,selection,pairs,r,p,strength,significant\n";
    for (std::size_t i = 0; i < matrices.size(); ++i)
        for (std::size_t j = i + 1; j < matrices.size(); ++j) {
            PearsonResult pr = pearson(matrices[i].matrix, matrices[j].matrix, sel);
            std::snprintf(buf, sizeof(buf), "%s,%s,%s,%d,%.6f,%.6g,%s,%s\n",
                          matrices[i].name.c_str(), matrices[j].name.c_str(), to_string(sel),
                          pr.pairs, pr.r, pr.p, strength_label(pr.r), significance_label(pr.p));
            out << buf;
        }
}

}  // namespace card
