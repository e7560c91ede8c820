#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <ostream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "card/agents.hpp"
#include "card/embedding.hpp"
#include "card/errors.hpp"
#include "card/generator.hpp"
#include "card/graph.hpp"
#include "card/hash.hpp"
#include "card/runtime.hpp"

namespace card {

// Token-level communication prices. Empty price vectors mean "resolve from
// the condition features" (input_price / output_price, currency per million
// tokens).
struct CostModel {
    std::vector<double> per_agent_in_price;
    std::vector<double> per_agent_out_price;
    double tokens_per_message = 512.0;

    void validate() const {
        if (tokens_per_message <= 0.0) throw ValidationError("tokens_per_message must be > 0");
        for (double p : per_agent_in_price)
            if (p < 0.0) throw ValidationError("prices must be >= 0");
        for (double p : per_agent_out_price)
            if (p < 0.0) throw ValidationError("prices must be >= 0");
    }
};

// Cost[i][j] = (out_price(i) + in_price(j)) * L / 1e6, diagonal 0. Prices in
// the cost model take precedence; otherwise they come from the agents'
// price features.
inline Eigen::MatrixXd edge_cost_matrix(const Roster& roster, const ConditionSet& conditions,
                                        const CostModel& cm) {
    cm.validate();
    int n = static_cast<int>(roster.size());
    std::vector<double> in_price(roster.size()), out_price(roster.size());
    bool from_cm = !cm.per_agent_in_price.empty() || !cm.per_agent_out_price.empty();
    if (from_cm) {
        if (static_cast<int>(cm.per_agent_in_price.size()) != n ||
            static_cast<int>(cm.per_agent_out_price.size()) != n)
            throw ShapeMismatch("cost model price vectors must cover the roster");
        in_price = cm.per_agent_in_price;
        out_price = cm.per_agent_out_price;
    } else {
        for (int i = 0; i < n; ++i) {
            const auto& id = roster[static_cast<std::size_t>(i)].id;
            const ConditionFeature* fin = conditions.find(id, "input_price");
            if (!fin || !fin->is_scalar()) throw MissingPriceFeature(id, "input_price");
            const ConditionFeature* fout = conditions.find(id, "output_price");
            if (!fout || !fout->is_scalar()) throw MissingPriceFeature(id, "output_price");
            in_price[static_cast<std::size_t>(i)] = fin->scalar();
            out_price[static_cast<std::size_t>(i)] = fout->scalar();
        }
    }
    Eigen::MatrixXd cost = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (i != j)
                cost(i, j) = (out_price[static_cast<std::size_t>(i)] +
                              in_price[static_cast<std::size_t>(j)]) *
                             cm.tokens_per_message / 1e6;
    return cost;
}

// Expected communication expense of the probabilistic graph:
// sum over i != j of Cost[i][j] * s[i][j]. Gradient w.r.t. s is Cost itself.
inline double soft_cost(const EdgeProbMatrix& s, const Eigen::MatrixXd& cost) {
    if (cost.rows() != s.n || cost.cols() != s.n)
        throw ShapeMismatch("cost matrix shape must match the probability matrix");
    return (s.s.array() * cost.array()).sum();
}

// One Bernoulli draw per ordered pair (row-major order), before cycle repair.
struct SampledGraph {
    std::vector<Edge> edges;
    Eigen::MatrixXd included;  // 0/1 off-diagonal indicator
    double log_prob = 0.0;
};

inline constexpr double kProbClamp = 1e-6;

inline double clamp_prob(double p) {
    if (p < kProbClamp) return kProbClamp;
    if (p > 1.0 - kProbClamp) return 1.0 - kProbClamp;
    return p;
}

inline SampledGraph sample_graph(const EdgeProbMatrix& s, std::mt19937_64& rng) {
    SampledGraph sample;
    sample.included = Eigen::MatrixXd::Zero(s.n, s.n);
    for (int i = 0; i < s.n; ++i)
        for (int j = 0; j < s.n; ++j) {
            if (i == j) continue;
            double p = s.s(i, j);
            bool on = unit_double(rng()) < p;
            if (on) {
                sample.edges.push_back({i, j, p});
                sample.included(i, j) = 1.0;
            }
            // Clamped only inside the log so exact 0/1 probabilities still
            // sample correctly.
            sample.log_prob += std::log(on ? clamp_prob(p) : 1.0 - clamp_prob(p));
        }
    return sample;
}

// d logprob / d s[i][j] for one Bernoulli outcome, clamped near saturation.
inline Eigen::MatrixXd score_function_grad(const EdgeProbMatrix& s, const Eigen::MatrixXd& included) {
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(s.n, s.n);
    for (int i = 0; i < s.n; ++i)
        for (int j = 0; j < s.n; ++j) {
            if (i == j) continue;
            double p = clamp_prob(s.s(i, j));
            d(i, j) = (included(i, j) - p) / (p * (1.0 - p));
        }
    return d;
}

// ---------------------------------------------------------------------------
// Differentiable forward/backward through S.
// ---------------------------------------------------------------------------

struct ForwardCache {
    Eigen::MatrixXd a_hat;
    Eigen::MatrixXd x_p, x_c;          // N x d_in inputs
    Eigen::MatrixXd pre1_p, h1_p, pre2_p, h_p;
    Eigen::MatrixXd pre1_c, h1_c, pre2_c, h_c;
    Eigen::VectorXd q, pre_q, h_q;
    Eigen::MatrixXd z;                 // (N*N) x (5*d_lat), row i*N+j
    Eigen::MatrixXd dec_pre, dec_hid;  // (N*N) x d_dec
    EdgeProbMatrix s;
};

struct Gradients {
    Eigen::MatrixXd enc_p_w1, enc_p_w2, enc_c_w1, enc_c_w2, w_q, dec_w1;
    Eigen::VectorXd dec_b1, dec_w2;
    double dec_b2 = 0.0;

    static Gradients zeros_like(const GeneratorParams& p) {
        Gradients g;
        g.enc_p_w1 = Eigen::MatrixXd::Zero(p.enc_p.w1.rows(), p.enc_p.w1.cols());
        g.enc_p_w2 = Eigen::MatrixXd::Zero(p.enc_p.w2.rows(), p.enc_p.w2.cols());
        g.enc_c_w1 = Eigen::MatrixXd::Zero(p.enc_c.w1.rows(), p.enc_c.w1.cols());
        g.enc_c_w2 = Eigen::MatrixXd::Zero(p.enc_c.w2.rows(), p.enc_c.w2.cols());
        g.w_q = Eigen::MatrixXd::Zero(p.w_q.rows(), p.w_q.cols());
        g.dec_w1 = Eigen::MatrixXd::Zero(p.dec.w1.rows(), p.dec.w1.cols());
        g.dec_b1 = Eigen::VectorXd::Zero(p.dec.b1.size());
        g.dec_w2 = Eigen::VectorXd::Zero(p.dec.w2.size());
        g.dec_b2 = 0.0;
        return g;
    }

    void accumulate(const Gradients& o) {
        enc_p_w1 += o.enc_p_w1;
        enc_p_w2 += o.enc_p_w2;
        enc_c_w1 += o.enc_c_w1;
        enc_c_w2 += o.enc_c_w2;
        w_q += o.w_q;
        dec_w1 += o.dec_w1;
        dec_b1 += o.dec_b1;
        dec_w2 += o.dec_w2;
        dec_b2 += o.dec_b2;
    }

    void scale(double a) {
        enc_p_w1 *= a;
        enc_p_w2 *= a;
        enc_c_w1 *= a;
        enc_c_w2 *= a;
        w_q *= a;
        dec_w1 *= a;
        dec_b1 *= a;
        dec_w2 *= a;
        dec_b2 *= a;
    }

    // Name of the first non-finite tensor, or nullptr when all are finite.
    const char* first_non_finite() const {
        if (!enc_p_w1.allFinite()) return "enc_p.w1";
        if (!enc_p_w2.allFinite()) return "enc_p.w2";
        if (!enc_c_w1.allFinite()) return "enc_c.w1";
        if (!enc_c_w2.allFinite()) return "enc_c.w2";
        if (!w_q.allFinite()) return "w_q";
        if (!dec_w1.allFinite()) return "dec.w1";
        if (!dec_b1.allFinite()) return "dec.b1";
        if (!dec_w2.allFinite()) return "dec.w2";
        if (!std::isfinite(dec_b2)) return "dec.b2";
        return nullptr;
    }
};

inline void apply_update(GeneratorParams& p, const Gradients& g, double lr) {
    p.enc_p.w1 -= lr * g.enc_p_w1;
    p.enc_p.w2 -= lr * g.enc_p_w2;
    p.enc_c.w1 -= lr * g.enc_c_w1;
    p.enc_c.w2 -= lr * g.enc_c_w2;
    p.w_q -= lr * g.w_q;
    p.dec.w1 -= lr * g.dec_w1;
    p.dec.b1 -= lr * g.dec_b1;
    p.dec.w2 -= lr * g.dec_w2;
    p.dec.b2 -= lr * g.dec_b2;
}

// Forward pass retaining every intermediate needed for backprop.
inline ForwardCache forward_s(const GeneratorParams& params, const Eigen::MatrixXd& x_p,
                              const Eigen::MatrixXd& x_c, const Eigen::VectorXd& q,
                              const AnchorTopology& anchor) {
    params.validate();
    if (x_p.rows() != anchor.n || x_c.rows() != anchor.n)
        throw ShapeMismatch("embedding row count must equal anchor.n");
    ForwardCache c;
    c.a_hat = anchor_operator(anchor);
    c.x_p = x_p;
    c.x_c = x_c;
    c.pre1_p = c.a_hat * x_p * params.enc_p.w1;
    c.h1_p = c.pre1_p.cwiseMax(0.0);
    c.pre2_p = c.a_hat * c.h1_p * params.enc_p.w2;
    c.h_p = c.pre2_p.cwiseMax(0.0);
    c.pre1_c = c.a_hat * x_c * params.enc_c.w1;
    c.h1_c = c.pre1_c.cwiseMax(0.0);
    c.pre2_c = c.a_hat * c.h1_c * params.enc_c.w2;
    c.h_c = c.pre2_c.cwiseMax(0.0);
    c.q = q;
    c.pre_q = params.w_q.transpose() * q;
    c.h_q = c.pre_q.cwiseMax(0.0);

    int n = anchor.n;
    Eigen::Index d_lat = params.dims.d_lat;
    c.z = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n) * n, 5 * d_lat);
    c.dec_pre = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n) * n, params.dims.d_dec);
    c.dec_hid = c.dec_pre;
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            Eigen::Index k = static_cast<Eigen::Index>(i) * n + j;
            c.z.block(k, 0 * d_lat, 1, d_lat) = c.h_p.row(i);
            c.z.block(k, 1 * d_lat, 1, d_lat) = c.h_c.row(i);
            c.z.block(k, 2 * d_lat, 1, d_lat) = c.h_p.row(j);
            c.z.block(k, 3 * d_lat, 1, d_lat) = c.h_c.row(j);
            c.z.block(k, 4 * d_lat, 1, d_lat) = c.h_q.transpose();
            Eigen::VectorXd pre = params.dec.w1.transpose() * c.z.row(k).transpose() + params.dec.b1;
            Eigen::VectorXd hid = pre.cwiseMax(0.0);
            c.dec_pre.row(k) = pre.transpose();
            c.dec_hid.row(k) = hid.transpose();
            s(i, j) = sigmoid(params.dec.w2.dot(hid) + params.dec.b2);
        }
    c.s = EdgeProbMatrix(n, std::move(s));
    return c;
}

// Backpropagate a loss gradient w.r.t. S through decoder, encoders, and the
// query projection.
inline Gradients backward_s(const GeneratorParams& params, const ForwardCache& c,
                            const Eigen::MatrixXd& d_s) {
    int n = c.s.n;
    if (d_s.rows() != n || d_s.cols() != n) throw ShapeMismatch("d_s shape");
    Eigen::Index d_lat = params.dims.d_lat;
    Gradients g = Gradients::zeros_like(params);
    Eigen::MatrixXd d_hp = Eigen::MatrixXd::Zero(n, d_lat);
    Eigen::MatrixXd d_hc = Eigen::MatrixXd::Zero(n, d_lat);
    Eigen::VectorXd d_hq = Eigen::VectorXd::Zero(d_lat);

    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (i == j || d_s(i, j) == 0.0) continue;
            Eigen::Index k = static_cast<Eigen::Index>(i) * n + j;
            double sij = c.s.s(i, j);
            double d_r = d_s(i, j) * sij * (1.0 - sij);
            Eigen::VectorXd hid = c.dec_hid.row(k).transpose();
            g.dec_w2 += d_r * hid;
            g.dec_b2 += d_r;
            Eigen::VectorXd d_hid = d_r * params.dec.w2;
            Eigen::VectorXd d_pre =
                d_hid.cwiseProduct((c.dec_pre.row(k).transpose().array() > 0.0).cast<double>().matrix());
            g.dec_w1 += c.z.row(k).transpose() * d_pre.transpose();
            g.dec_b1 += d_pre;
            Eigen::VectorXd d_z = params.dec.w1 * d_pre;
            d_hp.row(i) += d_z.segment(0 * d_lat, d_lat).transpose();
            d_hc.row(i) += d_z.segment(1 * d_lat, d_lat).transpose();
            d_hp.row(j) += d_z.segment(2 * d_lat, d_lat).transpose();
            d_hc.row(j) += d_z.segment(3 * d_lat, d_lat).transpose();
            d_hq += d_z.segment(4 * d_lat, d_lat);
        }

    Eigen::VectorXd d_pre_q =
        d_hq.cwiseProduct((c.pre_q.array() > 0.0).cast<double>().matrix());
    g.w_q = c.q * d_pre_q.transpose();

    auto channel = [&](const Eigen::MatrixXd& d_h, const Eigen::MatrixXd& pre1,
                       const Eigen::MatrixXd& h1, const Eigen::MatrixXd& pre2,
                       const Eigen::MatrixXd& x, const ChannelWeights& w, Eigen::MatrixXd& g_w1,
                       Eigen::MatrixXd& g_w2) {
        Eigen::MatrixXd d_pre2 =
            d_h.cwiseProduct((pre2.array() > 0.0).cast<double>().matrix());
        g_w2 = (c.a_hat * h1).transpose() * d_pre2;
        Eigen::MatrixXd d_h1 = c.a_hat.transpose() * d_pre2 * w.w2.transpose();
        Eigen::MatrixXd d_pre1 =
            d_h1.cwiseProduct((pre1.array() > 0.0).cast<double>().matrix());
        g_w1 = (c.a_hat * x).transpose() * d_pre1;
    };
    channel(d_hp, c.pre1_p, c.h1_p, c.pre2_p, c.x_p, params.enc_p, g.enc_p_w1, g.enc_p_w2);
    channel(d_hc, c.pre1_c, c.h1_c, c.pre2_c, c.x_c, params.enc_c, g.enc_c_w1, g.enc_c_w2);
    return g;
}

// ---------------------------------------------------------------------------
// Exact enumeration of the score-function estimator (small n only): averages
// (u(E) - baseline) * dlogprob(E) over all 2^(n(n-1)) outcomes, weighted by
// their probabilities. Also returns E[u].
// ---------------------------------------------------------------------------

struct ExactEstimate {
    Eigen::MatrixXd d_s;
    double expected_utility = 0.0;
};

inline ExactEstimate exact_score_gradient(const EdgeProbMatrix& s,
                                          const std::function<double(const Eigen::MatrixXd&)>& utility,
                                          double baseline) {
    std::vector<std::pair<int, int>> slots;
    for (int i = 0; i < s.n; ++i)
        for (int j = 0; j < s.n; ++j)
            if (i != j) slots.emplace_back(i, j);
    if (slots.size() > 20)
        throw ValidationError("exact enumeration limited to n(n-1) <= 20 edge slots");

    ExactEstimate out;
    out.d_s = Eigen::MatrixXd::Zero(s.n, s.n);
    const std::uint64_t total = 1ULL << slots.size();
    Eigen::MatrixXd included(s.n, s.n);
    for (std::uint64_t mask = 0; mask < total; ++mask) {
        included.setZero();
        double prob = 1.0;
        for (std::size_t b = 0; b < slots.size(); ++b) {
            auto [i, j] = slots[b];
            bool on = (mask >> b) & 1ULL;
            if (on) included(i, j) = 1.0;
            prob *= on ? s.s(i, j) : 1.0 - s.s(i, j);
        }
        if (prob == 0.0) continue;
        double u = utility(included);
        out.expected_utility += prob * u;
        out.d_s += prob * (u - baseline) * score_function_grad(s, included);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training loop.
// ---------------------------------------------------------------------------

struct TrainConfig {
    double beta = 0.2;
    double lr = 0.3;
    int samples_per_step = 4;        // M
    double baseline_decay = 0.9;
    int steps = 300;
    double tau = 0.5;
    int k_rounds = 1;
    std::uint64_t seed = 0;
    int batch_size = 8;              // pairs per train_step
    int episodes_per_sample = 2;     // utility draws averaged per sampled graph
    AnchorKind anchor = AnchorKind::fully_connected;
    AggregationMode aggregation = AggregationMode::select_last;
    bool exhaustive_samples = false; // replace the M draws by exact enumeration

    void validate() const {
        if (beta < 0.0) throw ValidationError("beta must be >= 0");
        if (lr <= 0.0) throw ValidationError("lr must be > 0");
        if (samples_per_step < 1) throw ValidationError("samples_per_step must be >= 1");
        if (baseline_decay < 0.0 || baseline_decay >= 1.0)
            throw ValidationError("baseline_decay must lie in [0,1)");
        if (steps < 0) throw ValidationError("steps must be >= 0");
        if (!(tau > 0.0 && tau < 1.0)) throw InvalidThreshold(tau);
        if (k_rounds < 1) throw ValidationError("k_rounds must be >= 1");
        if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
        if (episodes_per_sample < 1) throw ValidationError("episodes_per_sample must be >= 1");
    }
};

struct EpisodeBatch {
    std::vector<std::pair<Query, ConditionSet>> pairs;
};

struct StepMetrics {
    int step = 0;
    double loss = 0.0;
    double mean_utility = 0.0;
    double soft_cost = 0.0;
    double baseline = 0.0;
};

// Mutable training state threaded through train_step calls: the graph
// sampler, the running baseline, and embedding caches.
struct TrainState {
    std::mt19937_64 rng;
    double baseline = 0.0;
    bool baseline_warm = false;
    int step = 0;
    std::uint64_t episode_counter = 0;
    std::map<std::string, Embedding> embedding_cache;

    explicit TrainState(std::uint64_t seed) : rng(seed) {}
};

namespace detail {
inline const Embedding& embed_cached(const std::string& text, const EmbedderSpec& spec,
                                     std::map<std::string, Embedding>& cache) {
    auto it = cache.find(text);
    if (it != cache.end()) return it->second;
    return cache.emplace(text, embed(text, spec)).first->second;
}

struct PairInputs {
    Eigen::MatrixXd x_p, x_c;
    Eigen::VectorXd q;
};

inline PairInputs embed_pair(const Roster& roster, const ConditionSet& conditions,
                             const Query& query, const EmbedderSpec& spec,
                             std::map<std::string, Embedding>& cache) {
    PairInputs in;
    int n = static_cast<int>(roster.size());
    in.x_p.resize(n, spec.dimension);
    in.x_c.resize(n, spec.dimension);
    for (int i = 0; i < n; ++i) {
        const auto& agent = roster[static_cast<std::size_t>(i)];
        in.x_p.row(i) = embed_cached(verbalize_profile(agent), spec, cache).transpose();
        in.x_c.row(i) = embed_cached(verbalize_condition(agent.id, conditions), spec, cache).transpose();
    }
    in.q = embed_cached(query.text, spec, cache);
    return in;
}
}  // namespace detail

// One optimization step over a batch of (query, conditions) pairs: sample M
// graphs per pair, score utilities, form the score-function gradient with a
// running-baseline advantage plus the analytic cost gradient, and apply a
// single batch-mean gradient-descent update.
inline StepMetrics train_step(GeneratorParams& params, const Roster& roster,
                              const EpisodeBatch& batch, const UtilityFn& env,
                              const TrainConfig& cfg, const CostModel& cm, TrainState& state) {
    cfg.validate();
    if (batch.pairs.empty()) throw ValidationError("episode batch is empty");
    AnchorTopology anchor{cfg.anchor, static_cast<int>(roster.size())};
    Gradients total = Gradients::zeros_like(params);
    double sum_utility = 0.0, sum_cost = 0.0;

    for (const auto& [query, conditions] : batch.pairs) {
        detail::PairInputs in =
            detail::embed_pair(roster, conditions, query, params.embedder, state.embedding_cache);
        ForwardCache cache = forward_s(params, in.x_p, in.x_c, in.q, anchor);
        Eigen::MatrixXd cost = edge_cost_matrix(roster, conditions, cm);

        Eigen::MatrixXd d_s;
        double pair_mean_u = 0.0;
        if (cfg.exhaustive_samples) {
            auto utility_of = [&](const Eigen::MatrixXd& included) {
                std::vector<Edge> edges;
                for (int i = 0; i < cache.s.n; ++i)
                    for (int j = 0; j < cache.s.n; ++j)
                        if (i != j && included(i, j) > 0.5) edges.push_back({i, j, cache.s.s(i, j)});
                CommTopology topo = CommTopology::build(cache.s.n, break_cycles(std::move(edges)));
                double u = 0.0;
                for (int e = 0; e < cfg.episodes_per_sample; ++e)
                    u += env(query, conditions, topo,
                             combine_keys(cfg.seed, 0x9000 + static_cast<std::uint64_t>(e)));
                return u / cfg.episodes_per_sample;
            };
            if (!state.baseline_warm) {
                // Warm-start from the expected utility itself.
                state.baseline = exact_score_gradient(cache.s, utility_of, 0.0).expected_utility;
                state.baseline_warm = true;
            }
            ExactEstimate exact = exact_score_gradient(cache.s, utility_of, state.baseline);
            d_s = -exact.d_s;
            pair_mean_u = exact.expected_utility;
        } else {
            std::vector<Eigen::MatrixXd> outcomes;
            std::vector<double> utilities;
            outcomes.reserve(static_cast<std::size_t>(cfg.samples_per_step));
            for (int m = 0; m < cfg.samples_per_step; ++m) {
                SampledGraph sample = sample_graph(cache.s, state.rng);
                CommTopology topo =
                    CommTopology::build(cache.s.n, break_cycles(std::move(sample.edges)));
                double u = 0.0;
                for (int e = 0; e < cfg.episodes_per_sample; ++e)
                    u += env(query, conditions, topo,
                             combine_keys(cfg.seed, ++state.episode_counter));
                u /= cfg.episodes_per_sample;
                outcomes.push_back(std::move(sample.included));
                utilities.push_back(u);
            }
            double mean_u = 0.0;
            for (double u : utilities) mean_u += u;
            mean_u /= static_cast<double>(utilities.size());
            if (!state.baseline_warm) {
                state.baseline = mean_u;
                state.baseline_warm = true;
            }
            d_s = Eigen::MatrixXd::Zero(cache.s.n, cache.s.n);
            for (std::size_t m = 0; m < outcomes.size(); ++m) {
                double advantage = utilities[m] - state.baseline;
                d_s += (-advantage / static_cast<double>(outcomes.size())) *
                       score_function_grad(cache.s, outcomes[m]);
            }
            pair_mean_u = mean_u;
        }
        d_s += cfg.beta * cost;
        state.baseline =
            cfg.baseline_decay * state.baseline + (1.0 - cfg.baseline_decay) * pair_mean_u;

        total.accumulate(backward_s(params, cache, d_s));
        sum_utility += pair_mean_u;
        sum_cost += soft_cost(cache.s, cost);
    }

    double inv = 1.0 / static_cast<double>(batch.pairs.size());
    total.scale(inv);
    if (const char* bad = total.first_non_finite())
        throw NonFiniteGradient("non-finite gradient in tensor " + std::string(bad) + " at step " +
                                std::to_string(state.step));
    apply_update(params, total, cfg.lr);

    StepMetrics metrics;
    metrics.step = state.step++;
    metrics.mean_utility = sum_utility * inv;
    metrics.soft_cost = sum_cost * inv;
    metrics.loss = -metrics.mean_utility + cfg.beta * metrics.soft_cost;
    metrics.baseline = state.baseline;
    return metrics;
}

using TrainHistory = std::vector<StepMetrics>;

namespace detail {
// Hand-rolled Fisher-Yates: std::shuffle's draw sequence is
// implementation-defined, which would break bit-identical histories.
inline void deterministic_shuffle(std::vector<std::size_t>& order, std::mt19937_64& rng) {
    for (std::size_t i = order.size(); i > 1; --i) {
        auto k = static_cast<std::size_t>(unit_double(rng()) * static_cast<double>(i));
        if (k >= i) k = i - 1;
        std::swap(order[i - 1], order[k]);
    }
}
}  // namespace detail

// Full loop: cycles through the configuration set in reshuffled epochs,
// feeding batch_size pairs to each train_step. Deterministic given cfg.seed.
inline TrainHistory train(GeneratorParams& params, const Roster& roster,
                          const std::vector<std::pair<Query, ConditionSet>>& config_set,
                          const UtilityFn& env, const TrainConfig& cfg, const CostModel& cm) {
    cfg.validate();
    if (config_set.empty()) throw ValidationError("configuration set is empty");
    TrainState state(cfg.seed);
    std::vector<std::size_t> order(config_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::size_t cursor = 0;
    TrainHistory history;
    history.reserve(static_cast<std::size_t>(cfg.steps));
    for (int step = 0; step < cfg.steps; ++step) {
        EpisodeBatch batch;
        for (int b = 0; b < cfg.batch_size; ++b) {
            if (cursor == 0) detail::deterministic_shuffle(order, state.rng);
            batch.pairs.push_back(config_set[order[cursor]]);
            cursor = (cursor + 1) % order.size();
        }
        history.push_back(train_step(params, roster, batch, env, cfg, cm, state));
    }
    return history;
}

inline void write_metrics_csv(const TrainHistory& history, std::ostream& out) {
    out << "step,loss,mean_utility,soft_cost,baseline\n";
    char buf[160];
    for (const auto& m : history) {
        std::snprintf(buf, sizeof(buf), "%d,%.12g,%.12g,%.12g,%.12g\n", m.step, m.loss,
                      m.mean_utility, m.soft_cost, m.baseline);
        out << buf;
    }
}

// Shared evaluation harness: thresholded topology per pair, `reps` episodes
// each, every episode seed a pure function of (eval_seed, pair, rep).
inline double evaluate_mean_utility(const GeneratorParams& params, const Roster& roster,
                                    const std::vector<std::pair<Query, ConditionSet>>& config_set,
                                    const UtilityFn& env, double tau, AnchorKind anchor_kind,
                                    int reps, std::uint64_t eval_seed) {
    if (config_set.empty()) throw ValidationError("configuration set is empty");
    if (reps < 1) throw ValidationError("reps must be >= 1");
    AnchorTopology anchor{anchor_kind, static_cast<int>(roster.size())};
    double total = 0.0;
    for (std::size_t p = 0; p < config_set.size(); ++p) {
        const auto& [query, conditions] = config_set[p];
        GenerationResult gen = generate(roster, conditions, query, anchor, params, tau);
        double u = 0.0;
        for (int r = 0; r < reps; ++r)
            u += env(query, conditions, gen.topology,
                     combine_keys(eval_seed, (static_cast<std::uint64_t>(p) << 20) +
                                                 static_cast<std::uint64_t>(r)));
        total += u / reps;
    }
    return total / static_cast<double>(config_set.size());
}

}  // namespace card
