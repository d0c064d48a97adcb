#include "idcompose/schedule.hpp"

#include <cmath>
#include <string>

#include "idcompose/errors.hpp"

namespace idc {

DDIMSchedule::DDIMSchedule(std::vector<double> alpha_bars, std::vector<int> timestep_indices)
    : alpha_bars_(std::move(alpha_bars)), timestep_indices_(std::move(timestep_indices)) {
    if (alpha_bars_.size() < 2)
        throw config_error("schedule needs at least one step");
    if (alpha_bars_.front() != 1.0)
        throw config_error("schedule must anchor alpha_bar[0] = 1");
    for (std::size_t i = 1; i < alpha_bars_.size(); ++i) {
        if (!(alpha_bars_[i] > 0.0) || !(alpha_bars_[i] < alpha_bars_[i - 1]))
            throw config_error("alpha_bars must be strictly decreasing and positive; violated at index " +
                               std::to_string(i));
    }
    if (timestep_indices_.size() != alpha_bars_.size())
        throw config_error("timestep index list must cover every schedule entry");
}

DDIMSchedule DDIMSchedule::linear(int steps, double alpha_final) {
    if (steps < 1)
        throw config_error("schedule needs at least one step");
    if (!(alpha_final > 0.0) || !(alpha_final < 1.0))
        throw config_error("alpha_final must lie in (0, 1)");
    std::vector<double> bars(static_cast<std::size_t>(steps) + 1);
    std::vector<int> idx(bars.size());
    for (int t = 0; t <= steps; ++t) {
        bars[static_cast<std::size_t>(t)] =
            1.0 + (alpha_final - 1.0) * static_cast<double>(t) / static_cast<double>(steps);
        idx[static_cast<std::size_t>(t)] = t;
    }
    return DDIMSchedule(std::move(bars), std::move(idx));
}

double DDIMSchedule::alpha_bar(int t) const {
    if (t < 0 || t >= static_cast<int>(alpha_bars_.size()))
        throw validation_error("timestep " + std::to_string(t) + " outside schedule range [0, " +
                               std::to_string(alpha_bars_.size() - 1) + "]");
    return alpha_bars_[static_cast<std::size_t>(t)];
}

RealArray forward_noise(const RealArray& x0, int t, const RealArray& noise, const DDIMSchedule& s) {
    if (!x0.same_shape(noise))
        throw shape_error("forward_noise: x0 " + x0.shape_string() + " and noise " +
                          noise.shape_string() + " differ");
    const double abar = s.alpha_bar(t);
    const double a = std::sqrt(abar);
    const double b = std::sqrt(1.0 - abar);
    RealArray out = RealArray::zeros(x0.shape());
    for (std::size_t i = 0; i < x0.size(); ++i)
        out[i] = (b == 0.0) ? a * x0[i] : a * x0[i] + b * noise[i];
    return out;
}

LatentState ddim_step(const LatentState& state, const RealArray& eps, const DDIMSchedule& s,
                      StepDirection direction) {
    if (!state.latent.same_shape(eps))
        throw shape_error("ddim_step: latent " + state.latent.shape_string() + " and eps " +
                          eps.shape_string() + " differ");
    const int t = state.timestep_index;
    const int t_next = direction == StepDirection::kDenoise ? t - 1 : t + 1;
    if (t_next < 0 || t_next > s.steps() || t < 0 || t > s.steps())
        throw validation_error("ddim_step: step " + std::to_string(t) + " -> " + std::to_string(t_next) +
                               " leaves the schedule [0, " + std::to_string(s.steps()) + "]");

    const double abar_t = s.alpha_bar(t);
    const double abar_n = s.alpha_bar(t_next);
    const double sq_t = std::sqrt(abar_t), sq_n = std::sqrt(abar_n);
    const double sig_t = std::sqrt(1.0 - abar_t), sig_n = std::sqrt(1.0 - abar_n);

    RealArray next = RealArray::zeros(state.latent.shape());
    for (std::size_t i = 0; i < next.size(); ++i) {
        const double x0_hat = (state.latent[i] - sig_t * eps[i]) / sq_t;
        next[i] = sq_n * x0_hat + sig_n * eps[i];
    }
    next.check_finite("ddim_step");
    return LatentState{std::move(next), t_next};
}

}  // namespace idc
