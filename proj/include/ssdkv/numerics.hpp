#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ssdkv/errors.hpp"

namespace ssdkv {

/// Dense row-major matrix of doubles. Immutable by convention after fill.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data; // rows * cols, row-major

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    const double* row(std::size_t r) const { return data.data() + r * cols; }
    double* row(std::size_t r) { return data.data() + r * cols; }
};

/// Seeded PRNG: xoshiro256** (Blackman & Vigna), state initialized from the
/// seed via splitmix64. Frozen algorithm; identical seed gives an identical
/// stream on every platform. Never replaced by platform randomness.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();
    /// Uniform double in [0, 1), 53 mantissa bits.
    double next_double();
    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi);
    /// Uniform integer in [0, n), n >= 1.
    std::uint64_t next_below(std::uint64_t n);

private:
    std::uint64_t s_[4];
};

/// c = a * b, summation strictly left-to-right over the inner index for each
/// output element. Throws shape_error on inner-dimension mismatch.
Matrix matmul(const Matrix& a, const Matrix& b);

/// out[k] = sum_j x[j] * w[j,k], same per-element summation order as matmul.
/// Hot path for the model's row-vector projections; out must have w.cols slots.
void row_times_matrix(std::span<const double> x, const Matrix& w, std::span<double> out);

/// Numerically stable softmax (max subtraction). Throws shape_error on empty input.
std::vector<double> softmax_row(std::span<const double> v);

/// In-place variant over a raw buffer.
void softmax_inplace(std::span<double> v);

} // namespace ssdkv
