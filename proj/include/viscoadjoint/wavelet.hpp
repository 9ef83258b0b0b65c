#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace viscoadjoint::wave2d {

/// Source pulse with three vanishing derivatives at t = 0:
///   w(t) = (t/t0)^3 exp(1.5 (1 - (t/t0)^2)) sin(2 pi f0 t),   t0 = 1/f0.
struct Wavelet {
    double f0 = 1.0;
    double t0 = 1.0;

    explicit Wavelet(double f0_ = 1.0) : f0(f0_), t0(1.0 / f0_) {}

    double operator()(double t) const {
        if (t <= 0.0) return 0.0;
        const double x = t / t0;
        return x * x * x * std::exp(1.5 * (1.0 - x * x)) * std::sin(2.0 * std::numbers::pi * f0 * t);
    }
};

/// Sampled wavelet on the step grid; rejects undersampled configurations.
inline std::vector<double> make_wavelet(double f0, double dt, int nt) {
    if (f0 * dt > 0.1) throw std::invalid_argument("make_wavelet: undersampled (f0*dt > 0.1)");
    Wavelet w(f0);
    std::vector<double> s(static_cast<std::size_t>(nt) + 1);
    for (int k = 0; k <= nt; ++k) s[static_cast<std::size_t>(k)] = w(k * dt);
    return s;
}

}  // namespace viscoadjoint::wave2d
