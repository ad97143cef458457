#include "adalora/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "adalora/errors.hpp"

namespace adalora {

Matrix::Matrix(int rows, int cols)
    : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, 0.0) {
    if (rows <= 0 || cols <= 0) {
        throw DimensionError("matrix dimensions must be positive, got " + shape_str());
    }
}

Matrix::Matrix(int rows, int cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (rows <= 0 || cols <= 0) {
        throw DimensionError("matrix dimensions must be positive, got " + shape_str());
    }
    if (data_.size() != static_cast<std::size_t>(rows) * cols) {
        throw DimensionError("data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str());
    }
}

Matrix Matrix::full(int rows, int cols, double value) {
    Matrix m(rows, cols);
    std::fill(m.data_.begin(), m.data_.end(), value);
    return m;
}

Matrix Matrix::identity(int n) {
    Matrix m(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

std::string Matrix::shape_str() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (!a.same_shape(b)) {
        throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() +
                             " vs " + b.shape_str());
    }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: inner dimensions differ, " + a.shape_str() +
                             " vs " + b.shape_str());
    }
    Matrix c(a.rows(), b.cols());
    const int m = a.rows(), k = a.cols(), n = b.cols();
    for (int i = 0; i < m; ++i) {
        const double* arow = a.data() + static_cast<std::size_t>(i) * k;
        double* crow = c.data() + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double aip = arow[p];
            if (aip == 0.0) continue;
            const double* brow = b.data() + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
    return c;
}

Matrix transpose(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

Matrix add(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "add");
    Matrix c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.at(i) += b.at(i);
    return c;
}

Matrix sub(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "sub");
    Matrix c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.at(i) -= b.at(i);
    return c;
}

Matrix scale(const Matrix& a, double c) {
    Matrix r = a;
    for (std::size_t i = 0; i < r.size(); ++i) r.at(i) *= c;
    return r;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "hadamard");
    Matrix c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.at(i) *= b.at(i);
    return c;
}

Matrix colsum(const Matrix& a) {
    Matrix s(1, a.cols());
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) s(0, j) += a(i, j);
    return s;
}

double frobenius_sq(const Matrix& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.at(i) * a.at(i);
    return s;
}

double sum(const Matrix& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.at(i);
    return s;
}

double max_abs(const Matrix& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s = std::max(s, std::fabs(a.at(i)));
    return s;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "max_abs_diff");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s = std::max(s, std::fabs(a.at(i) - b.at(i)));
    return s;
}

bool all_finite(const Matrix& a) {
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!std::isfinite(a.at(i))) return false;
    return true;
}

bool bitwise_equal(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) return false;
    return std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

} // namespace adalora
