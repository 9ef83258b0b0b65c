#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>
#include <vector>

#include "viscoadjoint/dopri5.hpp"

namespace viscoadjoint::oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using ode::Trajectory;

using TimeSignal = std::function<VectorXd(double)>;

/// Dense finite-dimensional instance of  B u' + A u + B Q u = f.
struct OracleSystem {
    int n = 0;
    MatrixXd B, A, Q;
    double T = 1.0;
    TimeSignal f;
    bool f_vanishing_to_second_order = false;  // tag: f(0)=f'(0)=f''(0)=0

    Eigen::LLT<MatrixXd> Bllt;

    void factorize() { Bllt.compute(B); }
    VectorXd Binv(const VectorXd& x) const { return Bllt.solve(x); }

    OracleSystem with_B(MatrixXd Bnew) const {
        OracleSystem s = *this;
        s.B = std::move(Bnew);
        s.factorize();
        return s;
    }
};

/// Default W^{3,1}-class source shape with three vanishing derivatives at 0.
inline double smooth_shape(double t) { return t * t * t * std::exp(-t); }

/// B = beta- I + (beta+ - beta-) M^T M / lambda_max, A = S - S^T, Q dense.
inline OracleSystem make_random_system(int n, double beta_lo, double beta_hi, double T,
                                       unsigned seed, double q_scale = 0.4) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    MatrixXd M(n, n), S(n, n), Q(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            M(i, j) = g(rng);
            S(i, j) = g(rng);
            Q(i, j) = q_scale * g(rng);
        }
    MatrixXd B0 = M.transpose() * M;
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(B0);
    OracleSystem sys;
    sys.n = n;
    sys.B = beta_lo * MatrixXd::Identity(n, n) + (beta_hi - beta_lo) / es.eigenvalues().maxCoeff() * B0;
    sys.A = S - S.transpose();
    sys.Q = Q;
    sys.T = T;
    VectorXd c(n);
    for (int i = 0; i < n; ++i) c[i] = g(rng);
    c.normalize();
    sys.f = [c](double t) { return VectorXd(smooth_shape(t) * c); };
    sys.f_vanishing_to_second_order = true;
    sys.factorize();
    return sys;
}

/// Monotonicity check: min eigenvalue of (A+A^T)/2 >= -1e-12.
inline bool monotone(const OracleSystem& sys) {
    MatrixXd H = 0.5 * (sys.A + sys.A.transpose());
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(H);
    return es.eigenvalues().minCoeff() >= -1e-12;
}

// ---------------------------------------------------------------------------
// Solvers.  u' inside right-hand sides is always evaluated via the ODE,
// never by differencing trajectories.
// ---------------------------------------------------------------------------

inline Trajectory solve_forward(const OracleSystem& sys, const VectorXd& u0, double tol) {
    auto rhs = [&sys](double t, const VectorXd& u) {
        return VectorXd(sys.Binv(sys.f(t) - sys.A * u) - sys.Q * u);
    };
    return ode::integrate(rhs, u0, sys.T, tol, tol);
}

/// u' + Q u along a forward trajectory, from the ODE right-hand side.
inline VectorXd forward_updqu(const OracleSystem& sys, const Trajectory& base, double t) {
    return sys.Binv(sys.f(t) - sys.A * base.eval(t));
}

inline Trajectory solve_first_derivative(const OracleSystem& sys, const MatrixXd& H,
                                         const Trajectory& base, double tol) {
    auto rhs = [&](double t, const VectorXd& u) {
        return VectorXd(sys.Binv(-H * forward_updqu(sys, base, t) - sys.A * u) - sys.Q * u);
    };
    return ode::integrate(rhs, VectorXd::Zero(sys.n), sys.T, tol, tol);
}

/// Adjoint state of  B w' - A* w - Q* B w = g, w(T)=0, via the time-reversal
/// substitution w~(s) = w(T-s).
struct AdjointState {
    Trajectory reversed;  // trajectory of w~(s)
    double T = 0.0;
    VectorXd eval(double t) const { return reversed.eval(T - t); }
};

inline AdjointState solve_adjoint(const OracleSystem& sys, const TimeSignal& g, double tol) {
    auto rhs = [&](double s, const VectorXd& w) {
        return VectorXd(sys.Binv(-g(sys.T - s) - sys.A.transpose() * w -
                                 sys.Q.transpose() * (sys.B * w)));
    };
    return {ode::integrate(rhs, VectorXd::Zero(sys.n), sys.T, tol, tol), sys.T};
}

/// Numeric smoothness tags |f(0)|, |f'(0)|, |f''(0)| via one-sided 4th-order
/// stencils, relative to the source magnitude over [0,T].
inline bool source_vanishes_to_second_order(const OracleSystem& sys, double tol = 1e-12) {
    const double h = sys.T / 20000.0;
    auto fv = [&](int k) { return sys.f(k * h); };
    double scale = 1e-300;
    for (int k = 0; k <= 64; ++k) scale = std::max(scale, sys.f(sys.T * k / 64.0).norm());
    const VectorXd f0 = fv(0);
    const VectorXd d1 = (-25.0 * fv(0) + 48.0 * fv(1) - 36.0 * fv(2) + 16.0 * fv(3) - 3.0 * fv(4)) / (12.0 * h);
    const VectorXd d2 = (45.0 * fv(0) - 154.0 * fv(1) + 214.0 * fv(2) - 156.0 * fv(3) + 61.0 * fv(4) -
                         10.0 * fv(5)) / (12.0 * h * h);
    return f0.norm() <= tol * scale && d1.norm() <= tol * scale && d2.norm() <= tol * scale;
}

inline Trajectory solve_second_derivative(const OracleSystem& sys, const MatrixXd& H1,
                                          const MatrixXd& H2, const Trajectory& base,
                                          const Trajectory& u1, const Trajectory& u2, double tol) {
    if (!sys.f_vanishing_to_second_order || !source_vanishes_to_second_order(sys)) {
        throw std::invalid_argument("solve_second_derivative: source must vanish to second order at t=0");
    }
    auto ui_updqu = [&](const MatrixXd& H, const Trajectory& ui, double t) {
        return VectorXd(sys.Binv(-H * forward_updqu(sys, base, t) - sys.A * ui.eval(t)));
    };
    auto rhs = [&](double t, const VectorXd& u) {
        return VectorXd(sys.Binv(-H1 * ui_updqu(H2, u2, t) - H2 * ui_updqu(H1, u1, t) - sys.A * u) -
                        sys.Q * u);
    };
    return ode::integrate(rhs, VectorXd::Zero(sys.n), sys.T, tol, tol);
}

// ---------------------------------------------------------------------------
// Quadrature and norms: composite Simpson on a uniform grid of >= 401 points.
// ---------------------------------------------------------------------------

inline double simpson(double T, int npts, const std::function<double(double)>& f) {
    if (npts < 3) throw std::invalid_argument("simpson: need at least 3 points");
    if (npts % 2 == 0) ++npts;
    const double h = T / (npts - 1);
    double s = f(0.0) + f(T);
    for (int i = 1; i < npts - 1; ++i) s += f(i * h) * (i % 2 ? 4.0 : 2.0);
    return s * h / 3.0;
}

inline double sup_norm(const Trajectory& u, int npts = 801) {
    double m = 0.0;
    for (int i = 0; i < npts; ++i) m = std::max(m, u.eval(u.horizon() * i / (npts - 1)).norm());
    return m;
}

inline double l2_norm(const Trajectory& u, int npts = 801) {
    const double q = simpson(u.horizon(), npts, [&](double t) { return u.eval(t).squaredNorm(); });
    return std::sqrt(std::max(q, 0.0));
}

/// integral of <H (u'+Qu), w> dt -- the F'(B)* g representation.
inline double first_adjoint_pairing(const OracleSystem& sys, const MatrixXd& H,
                                    const Trajectory& base, const AdjointState& w, int npts = 801) {
    return simpson(sys.T, npts, [&](double t) {
        return (H * forward_updqu(sys, base, t)).dot(w.eval(t));
    });
}

/// integral of <H1 (u2'+Qu2) + H2 (u1'+Qu1), w> dt with w = adjoint(g):
/// equals <F''(B)[H1,H2], g> in L^2.
inline double second_adjoint_pairing(const OracleSystem& sys, const MatrixXd& H1,
                                     const MatrixXd& H2, const TimeSignal& g, double tol,
                                     int npts = 801) {
    Trajectory base = solve_forward(sys, VectorXd::Zero(sys.n), tol);
    Trajectory u1 = solve_first_derivative(sys, H1, base, tol);
    Trajectory u2 = solve_first_derivative(sys, H2, base, tol);
    AdjointState w = solve_adjoint(sys, g, tol);
    auto ui_updqu = [&](const MatrixXd& H, const Trajectory& ui, double t) {
        return VectorXd(sys.Binv(-H * forward_updqu(sys, base, t) - sys.A * ui.eval(t)));
    };
    return simpson(sys.T, npts, [&](double t) {
        return (H1 * ui_updqu(H2, u2, t) + H2 * ui_updqu(H1, u1, t)).dot(w.eval(t));
    });
}

/// L^2([0,T]) pairing of two trajectories.
inline double trajectory_pairing(const Trajectory& a, const TimeSignal& g, int npts = 801) {
    return simpson(a.horizon(), npts, [&](double t) { return a.eval(t).dot(g(t)); });
}

// ---------------------------------------------------------------------------
// Scans.
// ---------------------------------------------------------------------------

struct LipschitzRow {
    double s = 0.0;
    double ratio = 0.0;
};

/// r(s) = ||F''(B+s dB)[H1,H2] - F''(B)[H1,H2]||_C / (s ||dB||).
inline std::vector<LipschitzRow> lipschitz_scan(const OracleSystem& sys, const MatrixXd& H1,
                                                const MatrixXd& H2, const MatrixXd& dB,
                                                const std::vector<double>& scales, double tol) {
    auto second = [&](const OracleSystem& s) {
        Trajectory base = solve_forward(s, VectorXd::Zero(s.n), tol);
        Trajectory u1 = solve_first_derivative(s, H1, base, tol);
        Trajectory u2 = solve_first_derivative(s, H2, base, tol);
        return solve_second_derivative(s, H1, H2, base, u1, u2, tol);
    };
    Trajectory ref = second(sys);
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(dB);
    const double dB_norm = es.eigenvalues().cwiseAbs().maxCoeff();

    std::vector<LipschitzRow> rows;
    for (double s : scales) {
        Trajectory per = second(sys.with_B(sys.B + s * dB));
        double diff = 0.0;
        const int npts = 801;
        for (int i = 0; i < npts; ++i) {
            const double t = sys.T * i / (npts - 1);
            diff = std::max(diff, (per.eval(t) - ref.eval(t)).norm());
        }
        rows.push_back({s, diff / (s * dB_norm)});
    }
    return rows;
}

/// Residuals ||F(B+E_k) - F(B)||_{L^2} for a family of perturbations.
inline std::vector<double> illposed_probe(const OracleSystem& sys, const std::vector<MatrixXd>& Eks,
                                          double tol) {
    Trajectory ref = solve_forward(sys, VectorXd::Zero(sys.n), tol);
    std::vector<double> res;
    for (const MatrixXd& E : Eks) {
        Trajectory per = solve_forward(sys.with_B(sys.B + E), VectorXd::Zero(sys.n), tol);
        const double q = simpson(sys.T, 801, [&](double t) {
            return (per.eval(t) - ref.eval(t)).squaredNorm();
        });
        res.push_back(std::sqrt(std::max(q, 0.0)));
    }
    return res;
}

}  // namespace viscoadjoint::oracle
