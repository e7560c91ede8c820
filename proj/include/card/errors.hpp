#pragma once

#include <stdexcept>
#include <string>

namespace card {

// Error taxonomy mirrored by the CLI exit codes: parse failures exit 2,
// validation failures exit 3, numeric failures exit 4.
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct UnknownAgent : ValidationError {
    explicit UnknownAgent(const std::string& agent_id)
        : ValidationError("unknown agent id: " + agent_id) {}
};

struct ExternalEmbedderUnavailable : ValidationError {
    ExternalEmbedderUnavailable()
        : ValidationError("embedder kind is 'external' but no adapter is registered") {}
};

struct ShapeMismatch : ValidationError {
    using ValidationError::ValidationError;
};

struct InvalidThreshold : ValidationError {
    explicit InvalidThreshold(double tau)
        : ValidationError("threshold must lie strictly inside (0,1), got " + std::to_string(tau)) {}
};

struct CycleDetected : ValidationError {
    using ValidationError::ValidationError;
};

struct IndexOutOfRange : ValidationError {
    using ValidationError::ValidationError;
};

struct MissingPriceFeature : ValidationError {
    explicit MissingPriceFeature(const std::string& agent_id, const std::string& feature)
        : ValidationError("agent '" + agent_id + "' lacks required price feature '" + feature + "'") {}
};

struct EmptyResponses : ValidationError {
    EmptyResponses() : ValidationError("cannot aggregate an empty response list") {}
};

struct DegenerateVariance : ValidationError {
    using ValidationError::ValidationError;
};

struct NonFiniteGradient : NumericError {
    using NumericError::NumericError;
};

// Parse error with source position, used by manifest/matrix/checkpoint readers.
struct SyntaxError : ParseError {
    int line;
    int column;
    SyntaxError(int line_, int column_, const std::string& what_)
        : ParseError("line " + std::to_string(line_) + ", column " + std::to_string(column_) +
                     ": " + what_),
          line(line_), column(column_) {}
};

}  // namespace card
