#include "idcompose/array.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>

#include "idcompose/errors.hpp"

namespace idc {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) {
        if (e == 0)
            throw shape_error("array shape extents must be positive");
        n *= e;
    }
    return n;
}

std::string shape_to_string(const std::vector<std::size_t>& shape) {
    std::string out = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i)
            out += "x";
        out += std::to_string(shape[i]);
    }
    out += ")";
    return out;
}

}  // namespace

RealArray::RealArray(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_product(shape_) != data_.size())
        throw shape_error("array shape " + shape_to_string(shape_) + " does not match element count " +
                          std::to_string(data_.size()));
    check_finite("construction");
}

RealArray RealArray::zeros(std::vector<std::size_t> shape) {
    std::size_t n = shape_product(shape);
    return RealArray(std::move(shape), std::vector<double>(n, 0.0));
}

RealArray RealArray::full(std::vector<std::size_t> shape, double value) {
    std::size_t n = shape_product(shape);
    return RealArray(std::move(shape), std::vector<double>(n, value));
}

std::size_t RealArray::extent(std::size_t dim) const {
    if (dim >= shape_.size())
        throw shape_error("dimension " + std::to_string(dim) + " out of range for shape " + shape_string());
    return shape_[dim];
}

std::string RealArray::shape_string() const {
    return shape_to_string(shape_);
}

double RealArray::at(std::size_t r, std::size_t c) const {
    return data_[r * cols() + c];
}

double& RealArray::at(std::size_t r, std::size_t c) {
    return data_[r * cols() + c];
}

double RealArray::at(std::size_t c, std::size_t h, std::size_t w) const {
    return data_[(c * extent(1) + h) * extent(2) + w];
}

double& RealArray::at(std::size_t c, std::size_t h, std::size_t w) {
    return data_[(c * extent(1) + h) * extent(2) + w];
}

RealArray RealArray::reshape(std::vector<std::size_t> shape) const {
    if (shape_product(shape) != data_.size())
        throw shape_error("cannot reshape " + shape_string() + " to " + shape_to_string(shape));
    return RealArray(std::move(shape), data_);
}

RealArray RealArray::matmul(const RealArray& rhs) const {
    if (rank() != 2 || rhs.rank() != 2)
        throw shape_error("matmul expects 2D operands, got " + shape_string() + " and " + rhs.shape_string());
    if (cols() != rhs.rows())
        throw shape_error("matmul inner dimensions differ: " + shape_string() + " vs " + rhs.shape_string());
    const std::size_t n = rows(), k = cols(), m = rhs.cols();
    RealArray out = RealArray::zeros({n, m});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double a = at(i, p);
            if (a == 0.0)
                continue;
            for (std::size_t j = 0; j < m; ++j)
                out.at(i, j) += a * rhs.at(p, j);
        }
    }
    return out;
}

RealArray RealArray::transposed() const {
    if (rank() != 2)
        throw shape_error("transpose expects a 2D array, got " + shape_string());
    RealArray out = RealArray::zeros({cols(), rows()});
    for (std::size_t r = 0; r < rows(); ++r)
        for (std::size_t c = 0; c < cols(); ++c)
            out.at(c, r) = at(r, c);
    return out;
}

RealArray RealArray::row_block(std::size_t begin, std::size_t count) const {
    if (rank() != 2)
        throw shape_error("row_block expects a 2D array, got " + shape_string());
    if (begin + count > rows())
        throw shape_error("row_block [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                          ") out of range for " + shape_string());
    std::vector<double> data(data_.begin() + static_cast<std::ptrdiff_t>(begin * cols()),
                             data_.begin() + static_cast<std::ptrdiff_t>((begin + count) * cols()));
    return RealArray({count, cols()}, std::move(data));
}

RealArray RealArray::col_block(std::size_t begin, std::size_t count) const {
    if (rank() != 2)
        throw shape_error("col_block expects a 2D array, got " + shape_string());
    if (begin + count > cols())
        throw shape_error("col_block [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                          ") out of range for " + shape_string());
    RealArray out = RealArray::zeros({rows(), count});
    for (std::size_t r = 0; r < rows(); ++r)
        for (std::size_t c = 0; c < count; ++c)
            out.at(r, c) = at(r, begin + c);
    return out;
}

RealArray RealArray::vconcat(std::span<const RealArray> parts) {
    if (parts.empty())
        throw shape_error("vconcat of zero parts");
    const std::size_t cols = parts.front().cols();
    std::size_t rows = 0;
    for (const RealArray& p : parts) {
        if (p.rank() != 2 || p.cols() != cols)
            throw shape_error("vconcat column mismatch: " + parts.front().shape_string() + " vs " +
                              p.shape_string());
        rows += p.rows();
    }
    std::vector<double> data;
    data.reserve(rows * cols);
    for (const RealArray& p : parts)
        data.insert(data.end(), p.data().begin(), p.data().end());
    return RealArray({rows, cols}, std::move(data));
}

RealArray RealArray::hconcat(std::span<const RealArray> parts) {
    if (parts.empty())
        throw shape_error("hconcat of zero parts");
    const std::size_t rows = parts.front().rows();
    std::size_t cols = 0;
    for (const RealArray& p : parts) {
        if (p.rank() != 2 || p.rows() != rows)
            throw shape_error("hconcat row mismatch: " + parts.front().shape_string() + " vs " +
                              p.shape_string());
        cols += p.cols();
    }
    RealArray out = RealArray::zeros({rows, cols});
    for (std::size_t r = 0; r < rows; ++r) {
        std::size_t c0 = 0;
        for (const RealArray& p : parts) {
            for (std::size_t c = 0; c < p.cols(); ++c)
                out.at(r, c0 + c) = p.at(r, c);
            c0 += p.cols();
        }
    }
    return out;
}

RealArray& RealArray::operator+=(const RealArray& rhs) {
    if (!same_shape(rhs))
        throw shape_error("elementwise add shape mismatch: " + shape_string() + " vs " + rhs.shape_string());
    for (std::size_t i = 0; i < data_.size(); ++i)
        data_[i] += rhs.data_[i];
    return *this;
}

RealArray& RealArray::operator-=(const RealArray& rhs) {
    if (!same_shape(rhs))
        throw shape_error("elementwise sub shape mismatch: " + shape_string() + " vs " + rhs.shape_string());
    for (std::size_t i = 0; i < data_.size(); ++i)
        data_[i] -= rhs.data_[i];
    return *this;
}

RealArray& RealArray::operator*=(double s) {
    for (double& v : data_)
        v *= s;
    return *this;
}

bool RealArray::bitwise_equal(const RealArray& other) const {
    if (!same_shape(other))
        return false;
    for (std::size_t i = 0; i < data_.size(); ++i) {
        std::uint64_t a, b;
        static_assert(sizeof(double) == sizeof(std::uint64_t));
        std::memcpy(&a, &data_[i], sizeof(a));
        std::memcpy(&b, &other.data_[i], sizeof(b));
        if (a != b)
            return false;
    }
    return true;
}

void RealArray::check_finite(const char* context) const {
    for (std::size_t i = 0; i < data_.size(); ++i)
        if (!std::isfinite(data_[i]))
            throw validation_error(std::string("non-finite value at flat index ") + std::to_string(i) + " during " +
                                   context);
}

double max_abs_diff(const RealArray& a, const RealArray& b) {
    if (!a.same_shape(b))
        throw shape_error("max_abs_diff shape mismatch: " + a.shape_string() + " vs " + b.shape_string());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

double max_abs(const RealArray& a) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a[i]));
    return m;
}

}  // namespace idc
