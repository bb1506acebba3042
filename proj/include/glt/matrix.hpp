#pragma once

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "glt/errors.hpp"

namespace glt {

using Vector = std::vector<double>;

// Dense row-major matrix of doubles. All heavy numeric kernels in this
// project run on this one type; reductions are sequential so repeated runs
// are bit-identical.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    Vector row_copy(std::size_t r) const {
        return Vector(data.begin() + static_cast<std::ptrdiff_t>(r * cols),
                      data.begin() + static_cast<std::ptrdiff_t>((r + 1) * cols));
    }

    void set_row(std::size_t r, std::span<const double> values) {
        for (std::size_t c = 0; c < cols; ++c) at(r, c) = values[c];
    }

    bool same_shape(const Matrix& other) const { return rows == other.rows && cols == other.cols; }
};

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline constexpr double kZeroNormThreshold = 1e-30;

// Returns a copy with every row scaled to unit Euclidean norm.
inline Matrix l2_normalize_rows(const Matrix& m) {
    Matrix out = m;
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double n = norm2(m.row(r));
        if (n < kZeroNormThreshold) throw ZeroRowError(r);
        for (std::size_t c = 0; c < m.cols; ++c) out.at(r, c) = m.at(r, c) / n;
    }
    return out;
}

inline double cosine_sim(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeMismatchError("cosine_sim: length mismatch");
    const double na = norm2(a);
    const double nb = norm2(b);
    if (na < kZeroNormThreshold || nb < kZeroNormThreshold) throw ZeroVectorError();
    return dot(a, b) / (na * nb);
}

// softmax(l / tau) with max-subtraction
inline Vector softmax_temp(std::span<const double> logits, double tau) {
    if (!(tau > 0.0)) throw NonPositiveTemperatureError();
    Vector out(logits.size());
    double max_l = -std::numeric_limits<double>::infinity();
    for (double v : logits) max_l = std::max(max_l, v);
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp((logits[i] - max_l) / tau);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

inline Vector softmax_temp(const Vector& logits, double tau) {
    return softmax_temp(std::span<const double>(logits), tau);
}

// C = A * B, inner loop in fixed ascending-k order
inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) throw ShapeMismatchError("matmul: inner dimensions differ");
    Matrix c(a.rows, b.cols, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = a.at(i, k);
            if (aik == 0.0) continue;
            const double* brow = b.data.data() + k * b.cols;
            double* crow = c.data.data() + i * b.cols;
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

inline Matrix transpose(const Matrix& m) {
    Matrix t(m.cols, m.rows);
    for (std::size_t r = 0; r < m.rows; ++r)
        for (std::size_t c = 0; c < m.cols; ++c) t.at(c, r) = m.at(r, c);
    return t;
}

inline bool all_finite(const Matrix& m) {
    for (double v : m.data)
        if (!std::isfinite(v)) return false;
    return true;
}

// ---- CSV text format: one row per line, comma separated, no header ----

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void write_matrix_csv(const Matrix& m, std::ostream& os) {
    for (std::size_t r = 0; r < m.rows; ++r) {
        for (std::size_t c = 0; c < m.cols; ++c) {
            if (c) os << ',';
            os << format_double(m.at(r, c));
        }
        os << '\n';
    }
}

inline void write_matrix_csv(const Matrix& m, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for writing: " + path);
    write_matrix_csv(m, os);
}

inline double parse_double_token(const std::string& token, std::size_t line_number) {
    double value = 0.0;
    const char* first = token.data();
    const char* last = token.data() + token.size();
    while (first < last && (*first == ' ' || *first == '\t')) ++first;
    while (last > first && (*(last - 1) == ' ' || *(last - 1) == '\t' || *(last - 1) == '\r')) --last;
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last)
        throw ParseError(line_number, "bad number '" + token + "'");
    return value;
}

inline Matrix read_matrix_csv(std::istream& is) {
    Matrix m;
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(is, line)) {
        ++line_number;
        if (line.empty() || line == "\r") continue;
        std::vector<double> row;
        std::size_t start = 0;
        while (start <= line.size()) {
            std::size_t comma = line.find(',', start);
            if (comma == std::string::npos) comma = line.size();
            row.push_back(parse_double_token(line.substr(start, comma - start), line_number));
            start = comma + 1;
        }
        if (m.cols == 0) {
            m.cols = row.size();
        } else if (row.size() != m.cols) {
            throw ParseError(line_number, "expected " + std::to_string(m.cols) + " columns, got " +
                                              std::to_string(row.size()));
        }
        m.data.insert(m.data.end(), row.begin(), row.end());
        ++m.rows;
    }
    return m;
}

inline Matrix read_matrix_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open: " + path);
    return read_matrix_csv(is);
}

}  // namespace glt
