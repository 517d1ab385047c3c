#pragma once

#include <stdexcept>
#include <string>

namespace advlab {

// Base for all library errors. Subtypes exist so callers can distinguish
// bad user input from corrupted artifacts and diverged optimizations.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(msg) {}
};

struct IntegrityError : Error {
    explicit IntegrityError(const std::string& msg) : Error(msg) {}
};

// Thrown when a training loss goes non-finite. Carries the step index of the
// last finite state so the caller can recover the snapshot it kept.
struct DivergenceError : Error {
    int last_good_step;
    DivergenceError(const std::string& msg, int step) : Error(msg), last_good_step(step) {}
};

}  // namespace advlab
