#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

namespace pdrop::num {

/// Dense row-major matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    /// Throws ShapeError if data.size() != rows * cols.
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix identity(std::size_t n);
    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

    std::size_t rows() const noexcept { return m_rows; }
    std::size_t cols() const noexcept { return m_cols; }
    std::size_t size() const noexcept { return m_data.size(); }
    bool empty() const noexcept { return m_data.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return m_data[r * m_cols + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return m_data[r * m_cols + c]; }

    std::span<double> row(std::size_t r) noexcept { return {m_data.data() + r * m_cols, m_cols}; }
    std::span<const double> row(std::size_t r) const noexcept { return {m_data.data() + r * m_cols, m_cols}; }

    std::span<double> data() noexcept { return m_data; }
    std::span<const double> data() const noexcept { return m_data; }

    /// New matrix holding the listed rows, in the given order.
    Matrix select_rows(std::span<const std::size_t> indices) const;

    bool operator==(const Matrix&) const = default;

private:
    std::size_t m_rows = 0;
    std::size_t m_cols = 0;
    std::vector<double> m_data;
};

/// Counter-based generator: splitmix64 output over a Weyl counter, so the
/// stream depends only on the seed and is identical on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) noexcept : m_seed(seed) {}

    /// Independent substream keyed by (seed, stream).
    static Rng substream(std::uint64_t seed, std::uint64_t stream) noexcept;

    std::uint64_t next_u64() noexcept;
    /// Uniform on (0, 1]; never returns 0 so log() is safe.
    double uniform() noexcept;
    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n) noexcept;
    /// Standard normal via Box-Muller; the second variate of each pair is cached.
    double normal() noexcept;

    std::uint64_t seed() const noexcept { return m_seed; }
    std::uint64_t counter() const noexcept { return m_counter; }

private:
    std::uint64_t m_seed;
    std::uint64_t m_counter = 0;
    bool m_has_spare = false;
    double m_spare = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

/// Max-subtracted softmax of a single row, in place.
void softmax_inplace(std::span<double> row) noexcept;
Matrix softmax_rows(const Matrix& a);

std::vector<double> rmsnorm(std::span<const double> v, std::span<const double> gain, double eps);

/// Rotates pairs (x[2i], x[2i+1]) by position / theta_base^(2i / head_dim).
std::vector<double> rope_rotate(std::span<const double> x, std::size_t position, double theta_base);
void rope_rotate_inplace(std::span<double> x, std::size_t position, double theta_base);

/// Indices of the k largest scores in ascending index order. Equal scores
/// prefer the lower index. Throws BoundsError if k > scores.size().
std::vector<std::size_t> arg_topk(std::span<const double> scores, std::size_t k);

Matrix gaussian_init(Rng& rng, std::size_t rows, std::size_t cols, double stddev);

double dot(std::span<const double> a, std::span<const double> b);
double silu(double x) noexcept;

}  // namespace pdrop::num
