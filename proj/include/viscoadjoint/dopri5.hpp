#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

namespace viscoadjoint::ode {

using Eigen::VectorXd;
using Rhs = std::function<VectorXd(double, const VectorXd&)>;

/// Dense-output coefficients of one accepted step.
struct DenseStep {
    double t0 = 0.0, h = 0.0;
    VectorXd r1, r2, r3, r4, r5;
};

/// Adaptive trajectory with a 5th-order continuous extension.
class Trajectory {
public:
    const std::vector<double>& times() const { return times_; }
    const std::vector<VectorXd>& states() const { return states_; }
    double horizon() const { return T_; }
    double tolerance() const { return tol_; }

    VectorXd eval(double t) const {
        if (steps_.empty()) throw std::logic_error("Trajectory::eval on empty trajectory");
        t = std::clamp(t, 0.0, T_);
        std::size_t lo = 0, hi = steps_.size() - 1;
        while (lo < hi) {
            const std::size_t mid = (lo + hi + 1) / 2;
            if (steps_[mid].t0 <= t) lo = mid; else hi = mid - 1;
        }
        const DenseStep& s = steps_[lo];
        const double th = std::clamp((t - s.t0) / s.h, 0.0, 1.0);
        const double th1 = 1.0 - th;
        return s.r1 + th * (s.r2 + th1 * (s.r3 + th * (s.r4 + th1 * s.r5)));
    }

    friend Trajectory integrate(const Rhs&, VectorXd, double, double, double);

private:
    std::vector<double> times_;
    std::vector<VectorXd> states_;
    std::vector<DenseStep> steps_;
    double T_ = 0.0, tol_ = 0.0;
};

/// Dormand-Prince 5(4) with PI-free step control and Hairer's dense output.
inline Trajectory integrate(const Rhs& rhs, VectorXd y0, double T, double rtol, double atol) {
    static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
    static constexpr double a21 = 1.0 / 5;
    static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
    static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                            a54 = -212.0 / 729;
    static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                            a64 = 49.0 / 176, a65 = -5103.0 / 18656;
    static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                            b5 = -2187.0 / 6784, b6 = 11.0 / 84;
    static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                            e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
    static constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                            d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                            d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;

    Trajectory out;
    out.T_ = T;
    out.tol_ = rtol;
    double t = 0.0;
    VectorXd y = std::move(y0);
    out.times_.push_back(0.0);
    out.states_.push_back(y);

    VectorXd k1 = rhs(0.0, y);
    double h = std::min(T / 50.0, 1e-2 * (1.0 + y.norm()) / std::max(k1.norm(), 1e-8));
    h = std::clamp(h, 1e-8 * T, T);

    const auto n = y.size();
    while (t < T) {
        h = std::min(h, T - t);
        if (h < 1e-14 * T) throw std::runtime_error("dopri5: step size underflow");

        VectorXd k2 = rhs(t + c2 * h, y + h * (a21 * k1));
        VectorXd k3 = rhs(t + c3 * h, y + h * (a31 * k1 + a32 * k2));
        VectorXd k4 = rhs(t + c4 * h, y + h * (a41 * k1 + a42 * k2 + a43 * k3));
        VectorXd k5 = rhs(t + c5 * h, y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
        VectorXd k6 = rhs(t + h, y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
        VectorXd ynew = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
        VectorXd k7 = rhs(t + h, ynew);

        VectorXd err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
        double norm2 = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double sc = atol + rtol * std::max(std::abs(y[i]), std::abs(ynew[i]));
            const double q = err[i] / sc;
            norm2 += q * q;
        }
        const double enorm = std::sqrt(norm2 / static_cast<double>(std::max<Eigen::Index>(n, 1)));

        if (enorm <= 1.0) {
            DenseStep s;
            s.t0 = t;
            s.h = h;
            s.r1 = y;
            s.r2 = ynew - y;
            s.r3 = h * k1 - s.r2;
            s.r4 = s.r2 - h * k7 - s.r3;
            s.r5 = h * (d1 * k1 + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6 + d7 * k7);
            out.steps_.push_back(std::move(s));

            t += h;
            y.swap(ynew);
            k1.swap(k7);
            out.times_.push_back(t);
            out.states_.push_back(y);
        }
        const double fac = std::clamp(0.9 * std::pow(std::max(enorm, 1e-10), -0.2), 0.2, 5.0);
        h *= fac;
    }
    return out;
}

}  // namespace viscoadjoint::ode
