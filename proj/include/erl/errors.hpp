#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace erl {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Rejection-sampling cap exceeded while generating an instance.
class GenerationError : public Error {
public:
    GenerationError(const std::string& what, std::uint64_t seed)
        : Error(what + " (seed " + std::to_string(seed) + ")"), seed_(seed) {}
    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
};

class IoError : public Error {
public:
    using Error::Error;
};

// Remote backend could not be reached within the retry budget. Episodes
// aborted by this error are discarded, never scored.
class TransportError : public Error {
public:
    using Error::Error;
};

// Remote backend answered with something that is not a valid completion.
class ProtocolError : public Error {
public:
    using Error::Error;
};

// Invalid run configuration, with one message per offending field.
class ConfigError : public Error {
public:
    explicit ConfigError(std::vector<std::string> field_errors)
        : Error(join(field_errors)), fields_(std::move(field_errors)) {}
    const std::vector<std::string>& field_errors() const { return fields_; }

private:
    static std::string join(const std::vector<std::string>& errs) {
        std::string out = "invalid configuration:";
        for (const auto& e : errs) out += "\n  - " + e;
        return out;
    }
    std::vector<std::string> fields_;
};

}  // namespace erl
