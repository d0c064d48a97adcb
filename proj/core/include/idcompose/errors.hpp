#pragma once

#include <stdexcept>
#include <string>

namespace idc {

// Base class for everything thrown by this library.
class error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Tensor/extent mismatches. Messages name both shapes involved.
class shape_error : public error {
public:
    using error::error;
};

// Invalid wiring: missing global block, owner/mask misalignment, unknown
// config keys, absent backend members.
class config_error : public error {
public:
    using error::error;
};

// Bad data: non-finite values, invalid boxes, benchmark samples that break
// their schema invariants.
class validation_error : public error {
public:
    using error::error;
};

// A pluggable backend or external client failed. Carries enough context to
// tell which stage of which step on which identity went wrong.
class adapter_error : public error {
public:
    adapter_error(const std::string& stage, const std::string& message,
                  int step_index = -1, int identity_index = -1)
        : error(format(stage, message, step_index, identity_index)),
          stage_(stage),
          step_index_(step_index),
          identity_index_(identity_index) {}

    const std::string& stage() const { return stage_; }
    int step_index() const { return step_index_; }
    int identity_index() const { return identity_index_; }

private:
    static std::string format(const std::string& stage, const std::string& message,
                              int step, int identity) {
        std::string out = "adapter failure [stage=" + stage;
        if (step >= 0)
            out += " step=" + std::to_string(step);
        if (identity >= 0)
            out += " identity=" + std::to_string(identity);
        out += "]: " + message;
        return out;
    }

    std::string stage_;
    int step_index_;
    int identity_index_;
};

}  // namespace idc
