#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace adalora {

/// Dense row-major matrix of 64-bit reals. The single numeric carrier of the
/// library; all model weights, activations and gradients are Matrix values.
class Matrix {
public:
    Matrix() = default;
    Matrix(int rows, int cols);  // zero-initialized
    Matrix(int rows, int cols, std::vector<double> data);

    static Matrix full(int rows, int cols, double value);
    static Matrix identity(int n);

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(int i, int j) { return data_[static_cast<std::size_t>(i) * cols_ + j]; }
    double operator()(int i, int j) const { return data_[static_cast<std::size_t>(i) * cols_ + j]; }
    double& at(std::size_t k) { return data_[k]; }
    double at(std::size_t k) const { return data_[k]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    const std::vector<double>& values() const { return data_; }

    bool same_shape(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }
    std::string shape_str() const;

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double c);
Matrix hadamard(const Matrix& a, const Matrix& b);

/// Column sums as a 1 x cols row vector.
Matrix colsum(const Matrix& a);
double frobenius_sq(const Matrix& a);
double sum(const Matrix& a);
double max_abs(const Matrix& a);
double max_abs_diff(const Matrix& a, const Matrix& b);
bool all_finite(const Matrix& a);
bool bitwise_equal(const Matrix& a, const Matrix& b);

/// Throws DimensionError with a message naming both shapes.
void require_same_shape(const Matrix& a, const Matrix& b, const char* op);

} // namespace adalora
