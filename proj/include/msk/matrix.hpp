#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace msk {

// Dense row-major matrix of doubles. Entries are required to be finite;
// constructors taking data validate this once so downstream code can assume it.
class DenseMatrix {
public:
    DenseMatrix() = default;

    DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {
        if (!std::isfinite(fill)) {
            throw std::invalid_argument("DenseMatrix: non-finite fill value");
        }
    }

    DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_) {
            throw std::invalid_argument("DenseMatrix: data size " + std::to_string(data_.size()) +
                                        " does not match " + std::to_string(rows_) + "x" +
                                        std::to_string(cols_));
        }
        for (double v : data_) {
            if (!std::isfinite(v)) {
                throw std::invalid_argument("DenseMatrix: non-finite entry");
            }
        }
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool same_shape(const DenseMatrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// Channel-major 3D tensor: index (k, i, j) = channel, row, col.
class DenseTensor3 {
public:
    DenseTensor3() = default;

    DenseTensor3(std::size_t channels, std::size_t rows, std::size_t cols, double fill = 0.0)
        : channels_(channels), rows_(rows), cols_(cols), data_(channels * rows * cols, fill) {
        if (!std::isfinite(fill)) {
            throw std::invalid_argument("DenseTensor3: non-finite fill value");
        }
    }

    std::size_t channels() const { return channels_; }
    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t k, std::size_t i, std::size_t j) {
        return data_[(k * rows_ + i) * cols_ + j];
    }
    double operator()(std::size_t k, std::size_t i, std::size_t j) const {
        return data_[(k * rows_ + i) * cols_ + j];
    }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    // View of channel k as a matrix copy.
    DenseMatrix channel(std::size_t k) const {
        DenseMatrix m(rows_, cols_);
        const double* src = data_.data() + k * rows_ * cols_;
        std::copy(src, src + rows_ * cols_, m.data().begin());
        return m;
    }

private:
    std::size_t channels_ = 0;
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline double dot(const DenseMatrix& a, const DenseMatrix& b) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument("dot: shape mismatch");
    }
    double s = 0.0;
    for (std::size_t idx = 0; idx < a.size(); ++idx) {
        s += a.data()[idx] * b.data()[idx];
    }
    return s;
}

}  // namespace msk
