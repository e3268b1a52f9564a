#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace umlab {

// Rows are instances, so row-major keeps each instance contiguous.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// Invalid sizes, infeasible configurations, shape mismatches.
class ParameterError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed UMLV1 / CKPTV1 / config / report input. Carries the 1-based
/// line number when one is known (0 otherwise).
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, std::size_t line = 0)
        : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what),
          line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

/// A labeled sampling request the data cannot satisfy.
class SamplingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Work is split into
/// contiguous blocks; callers write into per-index slots and reduce in index
/// order afterwards, so results never depend on the worker count.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

/// Formats a double with 9 significant digits, the precision of every text
/// format in this project.
std::string format_g9(double v);

}  // namespace umlab
