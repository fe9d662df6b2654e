#include "pdrop/numkernel.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "pdrop/errors.hpp"

namespace pdrop::num {

namespace {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

std::string shape_str(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : m_rows(rows), m_cols(cols), m_data(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : m_rows(rows), m_cols(cols), m_data(std::move(data)) {
    if (m_data.size() != rows * cols) {
        throw ShapeError("matrix data length " + std::to_string(m_data.size()) + " does not match " +
                         std::to_string(rows) + "x" + std::to_string(cols));
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        m(i, i) = 1.0;
    }
    return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) {
            throw ShapeError("ragged rows in Matrix::from_rows");
        }
        data.insert(data.end(), row.begin(), row.end());
    }
    return Matrix(r, c, std::move(data));
}

Matrix Matrix::select_rows(std::span<const std::size_t> indices) const {
    Matrix out(indices.size(), m_cols);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= m_rows) {
            throw BoundsError("row index " + std::to_string(indices[i]) + " out of range");
        }
        std::copy_n(m_data.begin() + static_cast<std::ptrdiff_t>(indices[i] * m_cols), m_cols,
                    out.m_data.begin() + static_cast<std::ptrdiff_t>(i * m_cols));
    }
    return out;
}

std::uint64_t splitmix64(std::uint64_t x) noexcept {
    std::uint64_t z = x + kGolden;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Rng Rng::substream(std::uint64_t seed, std::uint64_t stream) noexcept {
    return Rng(splitmix64(seed ^ splitmix64(stream + kGolden)));
}

std::uint64_t Rng::next_u64() noexcept {
    return splitmix64(m_seed + kGolden * m_counter++);
}

double Rng::uniform() noexcept {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
}

std::uint64_t Rng::below(std::uint64_t n) noexcept {
    // Rejection removes modulo bias.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = next_u64();
    while (x >= limit) {
        x = next_u64();
    }
    return x % n;
}

double Rng::normal() noexcept {
    if (m_has_spare) {
        m_has_spare = false;
        return m_spare;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    m_spare = radius * std::sin(angle);
    m_has_spare = true;
    return radius * std::cos(angle);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: " + shape_str(a) + " times " + shape_str(b));
    }
    Matrix out(a.rows(), b.cols());
    const std::size_t inner = a.cols();
    const std::size_t n = b.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double* out_row = out.row(i).data();
        const double* a_row = a.row(i).data();
        for (std::size_t k = 0; k < inner; ++k) {
            const double s = a_row[k];
            const double* b_row = b.row(k).data();
            for (std::size_t j = 0; j < n; ++j) {
                out_row[j] += s * b_row[j];
            }
        }
    }
    return out;
}

Matrix transpose(const Matrix& a) {
    Matrix out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            out(j, i) = a(i, j);
        }
    }
    return out;
}

void softmax_inplace(std::span<double> row) noexcept {
    if (row.empty()) {
        return;
    }
    const double max = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double& x : row) {
        x = std::exp(x - max);
        sum += x;
    }
    for (double& x : row) {
        x /= sum;
    }
}

Matrix softmax_rows(const Matrix& a) {
    Matrix out = a;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        softmax_inplace(out.row(r));
    }
    return out;
}

std::vector<double> rmsnorm(std::span<const double> v, std::span<const double> gain, double eps) {
    if (v.size() != gain.size()) {
        throw ShapeError("rmsnorm: vector length " + std::to_string(v.size()) + " vs gain length " +
                         std::to_string(gain.size()));
    }
    std::vector<double> out(v.size());
    if (v.empty()) {
        return out;
    }
    double sum_sq = 0.0;
    for (double x : v) {
        sum_sq += x * x;
    }
    const double denom = std::sqrt(sum_sq / static_cast<double>(v.size()) + eps);
    if (denom == 0.0) {
        // Only reachable with v == 0 and eps == 0.
        return out;
    }
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = v[i] * gain[i] / denom;
    }
    return out;
}

void rope_rotate_inplace(std::span<double> x, std::size_t position, double theta_base) {
    if (x.size() % 2 != 0) {
        throw ConfigError("rope_rotate: head_dim must be even, got " + std::to_string(x.size()));
    }
    if (position == 0) {
        return;
    }
    const double dim = static_cast<double>(x.size());
    const double pos = static_cast<double>(position);
    for (std::size_t i = 0; i < x.size() / 2; ++i) {
        const double freq = std::pow(theta_base, -2.0 * static_cast<double>(i) / dim);
        const double angle = pos * freq;
        const double c = std::cos(angle);
        const double s = std::sin(angle);
        const double x0 = x[2 * i];
        const double x1 = x[2 * i + 1];
        x[2 * i] = x0 * c - x1 * s;
        x[2 * i + 1] = x0 * s + x1 * c;
    }
}

std::vector<double> rope_rotate(std::span<const double> x, std::size_t position, double theta_base) {
    std::vector<double> out(x.begin(), x.end());
    rope_rotate_inplace(out, position, theta_base);
    return out;
}

std::vector<std::size_t> arg_topk(std::span<const double> scores, std::size_t k) {
    if (k > scores.size()) {
        throw BoundsError("arg_topk: k=" + std::to_string(k) + " exceeds length " + std::to_string(scores.size()));
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) {
                          if (scores[a] != scores[b]) {
                              return scores[a] > scores[b];
                          }
                          return a < b;
                      });
    order.resize(k);
    std::sort(order.begin(), order.end());
    return order;
}

Matrix gaussian_init(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
    if (!(stddev > 0.0)) {
        throw ConfigError("gaussian_init: stddev must be positive");
    }
    Matrix out(rows, cols);
    for (double& x : out.data()) {
        x = stddev * rng.normal();
    }
    return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw ShapeError("dot: length " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sum += a[i] * b[i];
    }
    return sum;
}

double silu(double x) noexcept {
    return x / (1.0 + std::exp(-x));
}

}  // namespace pdrop::num
