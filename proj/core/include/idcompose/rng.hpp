#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "idcompose/array.hpp"

namespace idc {

// Deterministic random source. All request-level randomness (initial latent,
// per-step repaint noise, benchmark assignment) flows through one of these so
// a fixed seed reproduces a run bit for bit.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    std::size_t uniform_index(std::size_t n);  // [0, n)

    // Standard normal via Box-Muller. Pairs are consumed in order, so the
    // stream is reproducible independent of the standard library.
    double gaussian();

    RealArray gaussian_array(std::vector<std::size_t> shape);
    RealArray uniform_array(std::vector<std::size_t> shape);  // entries in [0, 1)

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace idc
