#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace idc {

// Dense real-valued array with an explicit shape. Carrier for latents,
// embeddings, masks and similarity matrices. Every element is checked finite
// at construction; shape product must equal the element count.
class RealArray {
public:
    RealArray() = default;
    RealArray(std::vector<std::size_t> shape, std::vector<double> data);

    static RealArray zeros(std::vector<std::size_t> shape);
    static RealArray full(std::vector<std::size_t> shape, double value);

    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t extent(std::size_t dim) const;
    const std::vector<std::size_t>& shape() const { return shape_; }
    std::string shape_string() const;

    bool empty() const { return data_.empty(); }

    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }

    // 2D accessors (rows x cols)
    std::size_t rows() const { return extent(0); }
    std::size_t cols() const { return extent(1); }
    double at(std::size_t r, std::size_t c) const;
    double& at(std::size_t r, std::size_t c);

    // 3D accessors (channels x height x width)
    double at(std::size_t c, std::size_t h, std::size_t w) const;
    double& at(std::size_t c, std::size_t h, std::size_t w);

    std::span<const double> data() const { return data_; }
    std::span<double> data() { return data_; }

    RealArray reshape(std::vector<std::size_t> shape) const;
    RealArray matmul(const RealArray& rhs) const;  // 2D only
    RealArray transposed() const;                  // 2D only

    // Row-wise slice of a 2D array: rows [begin, begin+count).
    RealArray row_block(std::size_t begin, std::size_t count) const;
    // Column-wise slice of a 2D array: cols [begin, begin+count).
    RealArray col_block(std::size_t begin, std::size_t count) const;

    static RealArray vconcat(std::span<const RealArray> parts);  // stack rows
    static RealArray hconcat(std::span<const RealArray> parts);  // stack cols

    RealArray& operator+=(const RealArray& rhs);
    RealArray& operator-=(const RealArray& rhs);
    RealArray& operator*=(double s);
    friend RealArray operator+(RealArray a, const RealArray& b) { return a += b; }
    friend RealArray operator-(RealArray a, const RealArray& b) { return a -= b; }
    friend RealArray operator*(RealArray a, double s) { return a *= s; }
    friend RealArray operator*(double s, RealArray a) { return a *= s; }

    bool same_shape(const RealArray& other) const { return shape_ == other.shape_; }
    bool bitwise_equal(const RealArray& other) const;

    // Throws validation_error if any element is NaN/Inf.
    void check_finite(const char* context) const;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

double max_abs_diff(const RealArray& a, const RealArray& b);
double max_abs(const RealArray& a);

}  // namespace idc
