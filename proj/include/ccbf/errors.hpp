#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <string>
#include <utility>

namespace ccbf {

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Mass matrix failed the positive-definiteness check at a queried configuration.
struct SingularMassError : Error {
    using Error::Error;
};

/// Safety filter asked to act (margin < 0) while the barrier input direction is
/// numerically zero. Signals that the offline regularity check was violated at
/// this state; the controller fails loudly instead of emitting a huge command.
struct DegenerateFilterError : Error {
    explicit DegenerateFilterError(std::string msg, Eigen::VectorXd x)
        : Error(std::move(msg)), state(std::move(x)) {}
    Eigen::VectorXd state;
};

/// Grid is empty, malformed, or selects no admissible points.
struct EmptyGridError : Error {
    using Error::Error;
};

/// Gain tuning requires a positive rest margin on the whole search region.
struct NonpositiveRestMarginError : Error {
    explicit NonpositiveRestMarginError(std::string msg, Eigen::VectorXd q_arg, double margin)
        : Error(std::move(msg)), q(std::move(q_arg)), rest_margin(margin) {}
    Eigen::VectorXd q;
    double rest_margin;
};

/// Level-set search found no passing level, including the lower endpoint.
struct NonePassingError : Error {
    using Error::Error;
};

/// Scenario configuration is unreadable or internally inconsistent.
struct ConfigError : Error {
    using Error::Error;
};

}  // namespace ccbf
