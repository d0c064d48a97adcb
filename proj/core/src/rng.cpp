#include "idcompose/rng.hpp"

#include <cmath>
#include <numbers>

#include "idcompose/errors.hpp"

namespace idc {

std::size_t SeededRng::uniform_index(std::size_t n) {
    if (n == 0)
        throw validation_error("uniform_index over an empty range");
    // Rejection sampling keeps the distribution exact for any n.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do {
        v = engine_();
    } while (v >= limit);
    return static_cast<std::size_t>(v % n);
}

double SeededRng::gaussian() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0)
        u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

RealArray SeededRng::gaussian_array(std::vector<std::size_t> shape) {
    RealArray out = RealArray::zeros(std::move(shape));
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = gaussian();
    return out;
}

RealArray SeededRng::uniform_array(std::vector<std::size_t> shape) {
    RealArray out = RealArray::zeros(std::move(shape));
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = uniform();
    return out;
}

}  // namespace idc
