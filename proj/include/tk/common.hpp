// Shared aliases, error types and small numeric helpers.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace tk {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;
template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// Malformed or inconsistent input data (files, ids, shapes).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad invocation: unknown keys, out-of-range settings.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Failure inside training (non-finite loss and similar).
class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

/// Fills `m` with draws from U[-limit, limit] in row-major order.
template <class T>
void fill_uniform(Mat<T>& m, double limit, Rng& rng) {
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng));
}

/// Glorot-style range sqrt(6 / (fan_in + fan_out)).
inline double fan_limit(Eigen::Index fan_in, Eigen::Index fan_out) {
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

/// The one place the final score is composed from its two heads, so that a
/// breakdown can be checked against the scorer exactly.
inline double combine_score(double beta, double s_log, double gamma, double s_len) {
    return s_log * beta + s_len * gamma;
}

}  // namespace tk
