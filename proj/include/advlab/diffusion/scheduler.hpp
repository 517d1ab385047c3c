#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "advlab/core/error.hpp"

namespace advlab {
namespace diffusion {

// Fixed noise schedule plus the deterministic sampler algebra. alpha_bar is
// indexed 0..T with alpha_bar[0] = 1 and strictly decreasing entries, so the
// closed-form update z_to = a * z_from + b * eps_hat is finite for every span.
struct SchedulerConfig {
    int t_train = 100;
    int k_infer = 4;
    bool deterministic_sampler = true;
    std::vector<double> alpha_bar;  // size t_train + 1

    static SchedulerConfig cosine(int t_train = 100, int k_infer = 4) {
        SchedulerConfig s;
        s.t_train = t_train;
        s.k_infer = k_infer;
        s.alpha_bar.resize(static_cast<size_t>(t_train) + 1);
        const double off = 0.008;
        auto f = [&](double t) {
            double v = std::cos((t / t_train + off) / (1.0 + off) * 1.5707963267948966);
            return v * v;
        };
        const double f0 = f(0.0);
        s.alpha_bar[0] = 1.0;
        for (int t = 1; t <= t_train; ++t)
            s.alpha_bar[static_cast<size_t>(t)] = std::max(f(static_cast<double>(t)) / f0, 1e-5);
        // enforce strict decrease after the floor clamp
        for (int t = 1; t <= t_train; ++t)
            s.alpha_bar[static_cast<size_t>(t)] =
                std::min(s.alpha_bar[static_cast<size_t>(t)], s.alpha_bar[static_cast<size_t>(t) - 1] - 1e-9);
        s.validate();
        return s;
    }

    void validate() const {
        if (t_train < 1) throw ConfigError("scheduler: t_train must be >= 1");
        if (k_infer < 1 || k_infer > t_train) throw ConfigError("scheduler: need 1 <= k_infer <= t_train");
        if (static_cast<int>(alpha_bar.size()) != t_train + 1)
            throw ConfigError("scheduler: alpha_bar must have t_train + 1 entries");
        if (alpha_bar[0] != 1.0) throw ConfigError("scheduler: alpha_bar[0] must be 1");
        for (int t = 1; t <= t_train; ++t) {
            const double a = alpha_bar[static_cast<size_t>(t)];
            if (!(a > 0.0 && a < alpha_bar[static_cast<size_t>(t) - 1]))
                throw ConfigError("scheduler: alpha_bar must be strictly decreasing and positive");
        }
    }

    double abar(int t) const {
        if (t < 0 || t > t_train) throw Error("scheduler: timestep out of range");
        return alpha_bar[static_cast<size_t>(t)];
    }

    // coefficients of the deterministic update from t_from down to t_to:
    //   z_to = a * z_from + b * eps_hat(z_from, t_from)
    std::pair<double, double> span_coeffs(int t_from, int t_to) const {
        if (t_from <= t_to || t_from < 1 || t_from > t_train || t_to < 0)
            throw Error("scheduler: invalid span " + std::to_string(t_from) + "->" + std::to_string(t_to));
        const double af = abar(t_from), at = abar(t_to);
        const double a = std::sqrt(at / af);
        const double b = std::sqrt(1.0 - at) - a * std::sqrt(1.0 - af);
        return {a, b};
    }

    // K+1 strictly decreasing nodes from t_train down to t_stop
    std::vector<int> time_grid(int t_stop) const {
        if (t_stop < 1 || t_stop > t_train) throw Error("scheduler: t_stop out of range");
        std::vector<int> grid;
        grid.push_back(t_train);
        for (int k = 1; k <= k_infer; ++k) {
            int t = static_cast<int>(std::llround(
                t_train + (static_cast<double>(t_stop) - t_train) * static_cast<double>(k) / k_infer));
            if (t >= grid.back()) t = grid.back() - 1;
            if (t < t_stop) t = t_stop;
            if (t < grid.back()) grid.push_back(t);
        }
        if (grid.back() != t_stop) grid.push_back(t_stop);
        return grid;
    }
};

}  // namespace diffusion
}  // namespace advlab
