#pragma once

#include <cctype>
#include <cmath>
#include <functional>
#include <istream>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "card/errors.hpp"
#include "card/hash.hpp"

namespace card {

using Embedding = Eigen::VectorXd;

struct EmbedderSpec {
    enum class Kind { feature_hash, external };

    Kind kind = Kind::feature_hash;
    int dimension = 64;
    std::uint64_t seed = 1234;

    void validate() const {
        if (dimension < 8)
            throw ValidationError("embedding dimension must be >= 8, got " + std::to_string(dimension));
    }
};

// Adapter for an external embedding provider: text in, one vector out.
using ExternalEmbedder = std::function<std::vector<double>(const std::string&)>;

namespace detail {
inline ExternalEmbedder& external_embedder_slot() {
    static ExternalEmbedder adapter;
    return adapter;
}

inline std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> tokens;
    std::string current;
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            current.push_back(static_cast<char>(std::tolower(c)));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}
}  // namespace detail

// Register (or clear, by passing an empty function) the process-wide external
// embedder adapter. Not thread-safe against concurrent embeds; register once
// at startup.
inline void set_external_embedder(ExternalEmbedder adapter) {
    detail::external_embedder_slot() = std::move(adapter);
}

// Wrap a newline-delimited byte-stream protocol as an adapter: one request
// line out, d space-separated decimals back.
inline ExternalEmbedder line_protocol_embedder(std::istream& in, std::ostream& out, int dimension) {
    return [&in, &out, dimension](const std::string& text) {
        out << text << '\n';
        out.flush();
        std::vector<double> values(static_cast<std::size_t>(dimension));
        for (double& v : values)
            if (!(in >> v)) throw ParseError("external embedder response truncated");
        in.ignore(std::numeric_limits<std::streamsize>::max(), '\n');
        return values;
    };
}

// Deterministic sign-hash n-gram embedding: lowercase, split on
// non-alphanumerics, pool word unigrams and bigrams into d buckets with a
// sign hash, then L2-normalize. Empty or all-delimiter text maps to the zero
// vector.
inline Embedding embed(const std::string& text, const EmbedderSpec& spec) {
    spec.validate();
    if (spec.kind == EmbedderSpec::Kind::external) {
        const auto& adapter = detail::external_embedder_slot();
        if (!adapter) throw ExternalEmbedderUnavailable();
        std::vector<double> values = adapter(text);
        if (static_cast<int>(values.size()) != spec.dimension)
            throw ShapeMismatch("external embedder returned " + std::to_string(values.size()) +
                                " values, expected " + std::to_string(spec.dimension));
        Embedding v = Eigen::Map<const Eigen::VectorXd>(values.data(), spec.dimension);
        double norm = v.norm();
        if (!v.allFinite()) throw ValidationError("external embedder returned non-finite values");
        return norm > 0 ? Embedding(v / norm) : v;
    }

    Embedding v = Embedding::Zero(spec.dimension);
    auto accumulate = [&](const std::string& feature) {
        std::uint64_t h = fnv1a64(feature, spec.seed);
        double sign = (h >> 63) ? -1.0 : 1.0;
        v[static_cast<Eigen::Index>(h % static_cast<std::uint64_t>(spec.dimension))] += sign;
    };
    std::vector<std::string> tokens = detail::tokenize(text);
    for (const auto& t : tokens) accumulate(t);
    for (std::size_t i = 0; i + 1 < tokens.size(); ++i) accumulate(tokens[i] + "_" + tokens[i + 1]);
    double norm = v.norm();
    if (norm > 0) v /= norm;
    return v;
}

// Row i of the result is embed(texts[i]); stacking agent texts yields the
// encoder inputs X_p / X_c.
inline Eigen::MatrixXd batch_embed(const std::vector<std::string>& texts, const EmbedderSpec& spec) {
    if (texts.empty()) throw ValidationError("batch_embed requires a nonempty text list");
    Eigen::MatrixXd rows(static_cast<Eigen::Index>(texts.size()), spec.dimension);
    for (std::size_t i = 0; i < texts.size(); ++i)
        rows.row(static_cast<Eigen::Index>(i)) = embed(texts[i], spec).transpose();
    return rows;
}

}  // namespace card
