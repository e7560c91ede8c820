#pragma once

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "card/agents.hpp"
#include "card/embedding.hpp"
#include "card/errors.hpp"
#include "card/graph.hpp"

namespace card {

struct GeneratorDims {
    int d_in = 64;
    int d_hid = 32;
    int d_lat = 16;
    int d_dec = 32;

    void validate() const {
        if (d_in < 1 || d_hid < 1 || d_lat < 1 || d_dec < 1)
            throw ValidationError("generator dimensions must be positive");
    }
};

// One encoder channel: two propagation layers (d_in x d_hid, d_hid x d_lat).
struct ChannelWeights {
    Eigen::MatrixXd w1;
    Eigen::MatrixXd w2;
};

// Pairwise scorer: hidden layer over the concatenated latents plus a linear
// output squashed by a sigmoid.
struct DecoderWeights {
    Eigen::MatrixXd w1;  // (5 * d_lat) x d_dec
    Eigen::VectorXd b1;  // d_dec
    Eigen::VectorXd w2;  // d_dec
    double b2 = 0.0;
};

struct GeneratorParams {
    GeneratorDims dims;
    EmbedderSpec embedder;
    std::uint64_t init_seed = 0;
    ChannelWeights enc_p;
    ChannelWeights enc_c;
    Eigen::MatrixXd w_q;  // d_in x d_lat
    DecoderWeights dec;

    void validate() const {
        dims.validate();
        auto check = [](bool ok, const char* what) {
            if (!ok) throw ShapeMismatch(what);
        };
        check(enc_p.w1.rows() == dims.d_in && enc_p.w1.cols() == dims.d_hid, "enc_p.w1 shape");
        check(enc_p.w2.rows() == dims.d_hid && enc_p.w2.cols() == dims.d_lat, "enc_p.w2 shape");
        check(enc_c.w1.rows() == dims.d_in && enc_c.w1.cols() == dims.d_hid, "enc_c.w1 shape");
        check(enc_c.w2.rows() == dims.d_hid && enc_c.w2.cols() == dims.d_lat, "enc_c.w2 shape");
        check(w_q.rows() == dims.d_in && w_q.cols() == dims.d_lat, "w_q shape");
        check(dec.w1.rows() == 5 * dims.d_lat && dec.w1.cols() == dims.d_dec, "dec.w1 shape");
        check(dec.b1.size() == dims.d_dec, "dec.b1 shape");
        check(dec.w2.size() == dims.d_dec, "dec.w2 shape");
    }
};

// Latent agent states after encoding, plus the projected query.
struct LatentStates {
    Eigen::MatrixXd h_p;  // N x d_lat
    Eigen::MatrixXd h_c;  // N x d_lat
    Eigen::VectorXd h_q;  // d_lat
};

namespace detail {
// Uniform draw in [-r, r] from explicit 53-bit mantissa conversion, keeping
// initialization identical across standard libraries.
inline double uniform_pm(std::mt19937_64& rng, double r) {
    return (unit_double(rng()) * 2.0 - 1.0) * r;
}

inline void glorot_fill(Eigen::MatrixXd& m, std::mt19937_64& rng) {
    double r = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = uniform_pm(rng, r);
}
}  // namespace detail

// Fresh parameters: Glorot-uniform weights in a fixed tensor order, zero
// biases. Fully determined by (dims, seed, embedder spec).
inline GeneratorParams init_params(const GeneratorDims& dims, std::uint64_t seed,
                                   const EmbedderSpec& embedder = {}) {
    dims.validate();
    embedder.validate();
    GeneratorParams p;
    p.dims = dims;
    p.embedder = embedder;
    p.init_seed = seed;
    std::mt19937_64 rng(seed);
    p.enc_p.w1.resize(dims.d_in, dims.d_hid);
    p.enc_p.w2.resize(dims.d_hid, dims.d_lat);
    p.enc_c.w1.resize(dims.d_in, dims.d_hid);
    p.enc_c.w2.resize(dims.d_hid, dims.d_lat);
    p.w_q.resize(dims.d_in, dims.d_lat);
    p.dec.w1.resize(5 * dims.d_lat, dims.d_dec);
    p.dec.b1 = Eigen::VectorXd::Zero(dims.d_dec);
    p.dec.w2.resize(dims.d_dec);
    detail::glorot_fill(p.enc_p.w1, rng);
    detail::glorot_fill(p.enc_p.w2, rng);
    detail::glorot_fill(p.enc_c.w1, rng);
    detail::glorot_fill(p.enc_c.w2, rng);
    detail::glorot_fill(p.w_q, rng);
    detail::glorot_fill(p.dec.w1, rng);
    {
        Eigen::MatrixXd w2m(dims.d_dec, 1);
        detail::glorot_fill(w2m, rng);
        p.dec.w2 = w2m.col(0);
    }
    p.dec.b2 = 0.0;
    return p;
}

// Normalized propagation operator over the symmetrized anchor with
// self-loops: A_hat = D^{-1}(A_sym + I).
inline Eigen::MatrixXd anchor_operator(const AnchorTopology& anchor) {
    EdgeProbMatrix a = anchor_adjacency(anchor);
    Eigen::MatrixXd sym = a.s.cwiseMax(a.s.transpose());
    sym += Eigen::MatrixXd::Identity(anchor.n, anchor.n);
    Eigen::VectorXd degree = sym.rowwise().sum();
    return degree.cwiseInverse().asDiagonal() * sym;
}

inline Eigen::MatrixXd relu(Eigen::MatrixXd m) { return m.cwiseMax(0.0); }

// Two rounds of mean-neighborhood aggregation with relu nonlinearities:
// H = relu(A_hat * relu(A_hat * X * W1) * W2).
inline Eigen::MatrixXd encode(const Eigen::MatrixXd& x, const AnchorTopology& anchor,
                              const ChannelWeights& w) {
    if (x.rows() != anchor.n) throw ShapeMismatch("embedding row count must equal anchor.n");
    if (x.cols() != w.w1.rows() || w.w1.cols() != w.w2.rows())
        throw ShapeMismatch("encoder weight shapes do not chain");
    Eigen::MatrixXd a_hat = anchor_operator(anchor);
    return relu(a_hat * relu(a_hat * x * w.w1) * w.w2);
}

inline Eigen::VectorXd project_query(const Eigen::VectorXd& q_embedding,
                                     const GeneratorParams& params) {
    if (q_embedding.size() != params.w_q.rows())
        throw ShapeMismatch("query embedding dimension must equal d_in");
    return (params.w_q.transpose() * q_embedding).cwiseMax(0.0);
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Pairwise edge scores: for each ordered pair i != j, a small MLP over
// concat(h_p[i], h_c[i], h_p[j], h_c[j], h_q). Diagonal forced to zero.
inline EdgeProbMatrix decode_edges(const LatentStates& lat, const DecoderWeights& dec) {
    int n = static_cast<int>(lat.h_p.rows());
    Eigen::Index d_lat = lat.h_p.cols();
    if (lat.h_c.rows() != n || lat.h_c.cols() != d_lat || lat.h_q.size() != d_lat)
        throw ShapeMismatch("latent state shapes disagree");
    if (dec.w1.rows() != 5 * d_lat) throw ShapeMismatch("decoder input width is not 5 * d_lat");
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd z(5 * d_lat);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            z << lat.h_p.row(i).transpose(), lat.h_c.row(i).transpose(),
                lat.h_p.row(j).transpose(), lat.h_c.row(j).transpose(), lat.h_q;
            Eigen::VectorXd hidden = ((dec.w1.transpose() * z) + dec.b1).cwiseMax(0.0);
            s(i, j) = sigmoid(dec.w2.dot(hidden) + dec.b2);
        }
    }
    return EdgeProbMatrix(n, std::move(s));
}

struct GenerationResult {
    EdgeProbMatrix s;
    CommTopology topology;
};

inline std::vector<std::string> profile_texts(const Roster& roster) {
    std::vector<std::string> texts;
    texts.reserve(roster.size());
    for (const auto& p : roster) texts.push_back(verbalize_profile(p));
    return texts;
}

inline std::vector<std::string> condition_texts(const Roster& roster, const ConditionSet& conditions) {
    std::vector<std::string> texts;
    texts.reserve(roster.size());
    for (const auto& p : roster) texts.push_back(verbalize_condition(p.id, conditions));
    return texts;
}

// Full pipeline: verbalize -> embed -> encode both channels -> project query
// -> decode -> threshold -> repair -> schedule.
inline GenerationResult generate(const Roster& roster, const ConditionSet& conditions,
                                 const Query& query, const AnchorTopology& anchor,
                                 const GeneratorParams& params, double tau) {
    if (roster.empty()) throw ValidationError("roster is empty");
    if (anchor.n != static_cast<int>(roster.size()))
        throw ShapeMismatch("anchor.n must equal roster size");
    params.validate();
    Eigen::MatrixXd x_p = batch_embed(profile_texts(roster), params.embedder);
    Eigen::MatrixXd x_c = batch_embed(condition_texts(roster, conditions), params.embedder);
    LatentStates lat;
    lat.h_p = encode(x_p, anchor, params.enc_p);
    lat.h_c = encode(x_c, anchor, params.enc_c);
    lat.h_q = project_query(embed(query.text, params.embedder), params);
    EdgeProbMatrix s = decode_edges(lat, params.dec);
    std::vector<Edge> kept = break_cycles(threshold(s, tau));
    GenerationResult result{std::move(s), CommTopology::build(anchor.n, std::move(kept))};
    return result;
}

// ---------------------------------------------------------------------------
// Checkpoint format: versioned line-oriented text; tensor entries in C
// hexfloat so save/load round-trips bit-exactly.
// ---------------------------------------------------------------------------

namespace detail {
inline void write_tensor(std::ostream& out, const char* name, const Eigen::MatrixXd& m) {
    out << "tensor " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
    char buf[40];
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            std::snprintf(buf, sizeof(buf), "%a", m(i, j));
            out << (j ? " " : "") << buf;
        }
        out << '\n';
    }
}

inline Eigen::MatrixXd read_tensor(std::istream& in, const std::string& expected_name) {
    std::string keyword, name;
    Eigen::Index rows = 0, cols = 0;
    if (!(in >> keyword >> name >> rows >> cols) || keyword != "tensor" || name != expected_name)
        throw ParseError("checkpoint: expected tensor '" + expected_name + "'");
    if (rows < 1 || cols < 1) throw ParseError("checkpoint: bad tensor shape for " + name);
    Eigen::MatrixXd m(rows, cols);
    std::string tok;
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) {
            if (!(in >> tok)) throw ParseError("checkpoint: tensor " + name + " truncated");
            char* end = nullptr;
            m(i, j) = std::strtod(tok.c_str(), &end);
            if (end == tok.c_str() || *end != '\0')
                throw ParseError("checkpoint: bad value in tensor " + name);
        }
    return m;
}
}  // namespace detail

inline void save_checkpoint(const GeneratorParams& params, std::ostream& out) {
    params.validate();
    out << "card-checkpoint v1\n";
    out << "embedder "
        << (params.embedder.kind == EmbedderSpec::Kind::feature_hash ? "feature-hash" : "external")
        << ' ' << params.embedder.dimension << ' ' << params.embedder.seed << '\n';
    out << "dims " << params.dims.d_in << ' ' << params.dims.d_hid << ' ' << params.dims.d_lat
        << ' ' << params.dims.d_dec << '\n';
    out << "seed " << params.init_seed << '\n';
    detail::write_tensor(out, "enc_p.w1", params.enc_p.w1);
    detail::write_tensor(out, "enc_p.w2", params.enc_p.w2);
    detail::write_tensor(out, "enc_c.w1", params.enc_c.w1);
    detail::write_tensor(out, "enc_c.w2", params.enc_c.w2);
    detail::write_tensor(out, "w_q", params.w_q);
    detail::write_tensor(out, "dec.w1", params.dec.w1);
    detail::write_tensor(out, "dec.b1", params.dec.b1);
    detail::write_tensor(out, "dec.w2", params.dec.w2);
    Eigen::MatrixXd b2(1, 1);
    b2(0, 0) = params.dec.b2;
    detail::write_tensor(out, "dec.b2", b2);
    out << "end\n";
}

inline GeneratorParams load_checkpoint(std::istream& in) {
    std::string magic, version;
    if (!(in >> magic >> version) || magic != "card-checkpoint" || version != "v1")
        throw ParseError("not a card-checkpoint v1 file");
    GeneratorParams p;
    std::string keyword, kind;
    if (!(in >> keyword >> kind >> p.embedder.dimension >> p.embedder.seed) || keyword != "embedder")
        throw ParseError("checkpoint: missing embedder line");
    if (kind == "feature-hash")
        p.embedder.kind = EmbedderSpec::Kind::feature_hash;
    else if (kind == "external")
        p.embedder.kind = EmbedderSpec::Kind::external;
    else
        throw ParseError("checkpoint: unknown embedder kind '" + kind + "'");
    if (!(in >> keyword >> p.dims.d_in >> p.dims.d_hid >> p.dims.d_lat >> p.dims.d_dec) ||
        keyword != "dims")
        throw ParseError("checkpoint: missing dims line");
    if (!(in >> keyword >> p.init_seed) || keyword != "seed")
        throw ParseError("checkpoint: missing seed line");
    p.enc_p.w1 = detail::read_tensor(in, "enc_p.w1");
    p.enc_p.w2 = detail::read_tensor(in, "enc_p.w2");
    p.enc_c.w1 = detail::read_tensor(in, "enc_c.w1");
    p.enc_c.w2 = detail::read_tensor(in, "enc_c.w2");
    p.w_q = detail::read_tensor(in, "w_q");
    p.dec.w1 = detail::read_tensor(in, "dec.w1");
    p.dec.b1 = detail::read_tensor(in, "dec.b1").col(0);
    p.dec.w2 = detail::read_tensor(in, "dec.w2").col(0);
    p.dec.b2 = detail::read_tensor(in, "dec.b2")(0, 0);
    if (!(in >> keyword) || keyword != "end") throw ParseError("checkpoint: missing end marker");
    p.validate();
    return p;
}

}  // namespace card
