#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <vector>

#include "caliber/errors.hpp"
#include "caliber/rng.hpp"

namespace caliber {

// Dense row-major matrix of 64-bit floats. Vectors are 1xN or Nx1 matrices.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;  // row-major, rows*cols entries

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}
    Matrix(int r, int c, std::vector<double> v) : rows(r), cols(c), data(std::move(v)) {
        if (data.size() != static_cast<std::size_t>(r) * c)
            throw DimensionError("matrix data length does not match rows*cols");
    }

    static Matrix zeros(int r, int c) { return Matrix(r, c); }

    static Matrix filled(int r, int c, double v) {
        Matrix m(r, c);
        for (double& x : m.data) x = v;
        return m;
    }

    static Matrix identity(int n) {
        Matrix m(n, n);
        for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
        return m;
    }

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rs) {
        Matrix m(static_cast<int>(rs.size()), rs.size() ? static_cast<int>(rs.begin()->size()) : 0);
        int r = 0;
        for (const auto& row : rs) {
            if (static_cast<int>(row.size()) != m.cols)
                throw DimensionError("ragged initializer rows");
            int c = 0;
            for (double v : row) m.at(r, c++) = v;
            ++r;
        }
        return m;
    }

    static Matrix randn(int r, int c, Rng& rng, double std_dev = 1.0) {
        Matrix m(r, c);
        for (double& x : m.data) x = std_dev * rng.next_normal();
        return m;
    }

    double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

    int size() const { return rows * cols; }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) throw DimensionError("matmul: inner dimensions differ");
    Matrix out(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = &a.data[static_cast<std::size_t>(i) * a.cols];
        double* orow = &out.data[static_cast<std::size_t>(i) * out.cols];
        for (int k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            const double* brow = &b.data[static_cast<std::size_t>(k) * b.cols];
            for (int j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

inline Matrix transpose(const Matrix& a) {
    Matrix out(a.cols, a.rows);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j) out.at(j, i) = a.at(i, j);
    return out;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw DimensionError("add: shape mismatch");
    Matrix out = a;
    for (int i = 0; i < out.size(); ++i) out.data[i] += b.data[i];
    return out;
}

inline Matrix scale(const Matrix& a, double c) {
    Matrix out = a;
    for (double& v : out.data) v *= c;
    return out;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw DimensionError("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (int i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a.data[i] - b.data[i]));
    return m;
}

}  // namespace caliber
