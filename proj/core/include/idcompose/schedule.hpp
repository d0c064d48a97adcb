#pragma once

#include <vector>

#include "idcompose/array.hpp"

namespace idc {

// Deterministic (eta = 0) DDIM schedule over S steps. alpha_bars holds S+1
// values indexed by timestep: 1 = abar_0 > abar_1 > ... > abar_S > 0.
class DDIMSchedule {
public:
    DDIMSchedule(std::vector<double> alpha_bars, std::vector<int> timestep_indices);

    // abar_t interpolated linearly from 1 down to alpha_final over `steps`.
    static DDIMSchedule linear(int steps, double alpha_final);

    int steps() const { return static_cast<int>(alpha_bars_.size()) - 1; }
    double alpha_bar(int t) const;
    const std::vector<int>& timestep_indices() const { return timestep_indices_; }

private:
    std::vector<double> alpha_bars_;
    std::vector<int> timestep_indices_;
};

struct LatentState {
    RealArray latent;  // (C x H_lat x W_lat)
    int timestep_index = 0;
};

enum class StepDirection { kDenoise, kInvert };

// q-sample: sqrt(abar_t) x0 + sqrt(1 - abar_t) noise. At t = 0 this returns
// x0 bit-for-bit (the noise term is skipped when its coefficient is 0), which
// repaint's background-conservation contract relies on.
RealArray forward_noise(const RealArray& x0, int t, const RealArray& noise, const DDIMSchedule& s);

// One deterministic DDIM update. DENOISE maps t -> t-1; INVERT mirrors the
// same algebra to map t -> t+1, so DENOISE after INVERT with identical eps is
// an exact inverse.
LatentState ddim_step(const LatentState& state, const RealArray& eps, const DDIMSchedule& s,
                      StepDirection direction);

}  // namespace idc
