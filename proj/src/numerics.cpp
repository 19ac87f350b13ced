#include "ssdkv/numerics.hpp"

#include <cmath>

namespace ssdkv {

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}

} // namespace

Rng::Rng(std::uint64_t seed) {
    // splitmix64 expansion guards against low-entropy seeds (including 0).
    std::uint64_t sm = seed;
    for (auto& s : s_) s = splitmix64(sm);
}

std::uint64_t Rng::next_u64() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double Rng::next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
}

std::uint64_t Rng::next_below(std::uint64_t n) {
    // Rejection sampling, bias-free.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do {
        v = next_u64();
    } while (v >= limit);
    return v % n;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) {
        throw shape_error("matmul: " + std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                          " * " + std::to_string(b.rows) + "x" + std::to_string(b.cols));
    }
    Matrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        row_times_matrix(std::span<const double>(a.row(i), a.cols), b,
                         std::span<double>(c.row(i), c.cols));
    }
    return c;
}

void row_times_matrix(std::span<const double> x, const Matrix& w, std::span<double> out) {
    if (x.size() != w.rows || out.size() != w.cols) {
        throw shape_error("row_times_matrix: x=" + std::to_string(x.size()) + " w=" +
                          std::to_string(w.rows) + "x" + std::to_string(w.cols));
    }
    const std::size_t n = w.cols;
    for (std::size_t k = 0; k < n; ++k) out[k] = 0.0;
    // j outer keeps the accumulation over j left-to-right for every output
    // element while the inner loops run over contiguous weight rows. Four
    // rows per pass amortize the out[] traffic; the parenthesization keeps
    // the j-ascending addition order, so results are bitwise identical to
    // the one-row-at-a-time loop.
    std::size_t j = 0;
    for (; j + 4 <= w.rows; j += 4) {
        const double x0 = x[j], x1 = x[j + 1], x2 = x[j + 2], x3 = x[j + 3];
        const double* w0 = w.row(j);
        const double* w1 = w.row(j + 1);
        const double* w2 = w.row(j + 2);
        const double* w3 = w.row(j + 3);
        for (std::size_t k = 0; k < n; ++k)
            out[k] = (((out[k] + x0 * w0[k]) + x1 * w1[k]) + x2 * w2[k]) + x3 * w3[k];
    }
    for (; j < w.rows; ++j) {
        const double xj = x[j];
        const double* wr = w.row(j);
        for (std::size_t k = 0; k < n; ++k) out[k] += xj * wr[k];
    }
}

std::vector<double> softmax_row(std::span<const double> v) {
    if (v.empty()) throw shape_error("softmax_row: empty input");
    std::vector<double> out(v.begin(), v.end());
    softmax_inplace(out);
    return out;
}

void softmax_inplace(std::span<double> v) {
    if (v.empty()) throw shape_error("softmax: empty input");
    double mx = v[0];
    for (double x : v)
        if (x > mx) mx = x;
    double sum = 0.0;
    for (double& x : v) {
        x = std::exp(x - mx);
        sum += x;
    }
    const double inv = 1.0 / sum;
    for (double& x : v) x *= inv;
}

} // namespace ssdkv
