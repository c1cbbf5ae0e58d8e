#pragma once

#include <stdexcept>
#include <string>

namespace tcformer {

// Thrown on malformed user input: bad shapes, bad config values, unparsable files.
class InvalidInputError : public std::runtime_error {
public:
    explicit InvalidInputError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when a required file (checkpoint, config, points file) does not exist.
class MissingArtifactError : public std::runtime_error {
public:
    explicit MissingArtifactError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown on numeric failure: divergence during training, failed gradient check.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Internal invariant violations (these indicate bugs, not bad input).
class InternalError : public std::logic_error {
public:
    explicit InternalError(const std::string& msg) : std::logic_error(msg) {}
};

inline void check_input(bool cond, const std::string& msg) {
    if (!cond) throw InvalidInputError(msg);
}

inline void check_internal(bool cond, const std::string& msg) {
    if (!cond) throw InternalError(msg);
}

}  // namespace tcformer
