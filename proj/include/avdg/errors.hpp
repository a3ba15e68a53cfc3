#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace avdg {

// Violated precondition on a call (shape mismatch, bad length, negative weight).
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Invalid user-supplied configuration. The message lists every problem found.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t line)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

// Serialized input does not fit the model's max_len.
class TruncationError : public std::runtime_error {
public:
    TruncationError(const std::string& what, std::string stream)
        : std::runtime_error(what), stream_(std::move(stream)) {}

    const std::string& stream() const { return stream_; }

private:
    std::string stream_;
};

class DivergenceError : public std::runtime_error {
public:
    DivergenceError(std::size_t epoch, std::size_t batch)
        : std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch)),
          epoch_(epoch),
          batch_(batch) {}

    std::size_t epoch() const { return epoch_; }
    std::size_t batch() const { return batch_; }

private:
    std::size_t epoch_;
    std::size_t batch_;
};

// Reported when a check that should be deterministic is not (e.g. grad_check's f).
class DiagnosticError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class UndefinedMetricError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A pipeline stage failed or could not start. Artifacts of stages that
// completed earlier are left in place.
class StageError : public std::runtime_error {
public:
    StageError(std::string stage, const std::string& what)
        : std::runtime_error("stage " + stage + ": " + what), stage_(std::move(stage)) {}

    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

}  // namespace avdg
