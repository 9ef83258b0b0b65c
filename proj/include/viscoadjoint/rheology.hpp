#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "viscoadjoint/symtensor.hpp"

namespace viscoadjoint::rheology {

/// The two-parameter isotropic map  C(m,p)M = 2m M + (p-2m) tr(M) I
/// acting on symmetric dim x dim matrices.
struct IsotropicMap {
    double m = 0.0;
    double p = 0.0;
    int dim = 3;
};

/// Eigenvalue of C(m,p) on the trace axis: C(m,p)I = T I.
/// T = 3p-4m in 3D, 2(p-m) in 2D; also the coercivity partner of 2m.
inline double trace_eigenvalue(double m, double p, int dim) {
    return dim == 3 ? 3.0 * p - 4.0 * m : 2.0 * (p - m);
}
inline double trace_eigenvalue(const IsotropicMap& c) { return trace_eigenvalue(c.m, c.p, c.dim); }

inline SymTensor apply_isotropic_map(const IsotropicMap& c, const SymTensor& M) {
    if (M.dim() != c.dim) throw std::invalid_argument("apply_isotropic_map: dimension mismatch");
    SymTensor r = M;
    r *= 2.0 * c.m;
    const double t = (c.p - 2.0 * c.m) * M.trace();
    for (int i = 0; i < c.dim; ++i) r[i] += t;
    return r;
}

/// Dense entry point; rejects non-symmetric input (1e-12 relative).
inline SymTensor from_dense(int dim, const double* M) {
    double scale = 0.0;
    for (int i = 0; i < dim * dim; ++i) scale = std::max(scale, std::abs(M[i]));
    SymTensor t(dim);
    for (int i = 0; i < dim; ++i)
        for (int j = i; j < dim; ++j) {
            const double a = M[i * dim + j], b = M[j * dim + i];
            if (std::abs(a - b) > 1e-12 * std::max(scale, 1e-300)) {
                throw std::invalid_argument("from_dense: matrix is not symmetric");
            }
            t.set(i, j, 0.5 * (a + b));
        }
    return t;
}

/// C(m,p)^{-1}, eq. form C~(m,p).  3D: C(1/(4m),(p-m)/(m(3p-4m))).
/// 2D: C~(m,p)M = M/(2m) + (2m-p)/(4m(p-m)) tr(M) I, i.e. C(1/(4m), p/(4m(p-m))).
inline IsotropicMap invert_isotropic_map(const IsotropicMap& c) {
    const double T = trace_eigenvalue(c);
    if (std::abs(c.m) < 1e-300 || std::abs(T) < 1e-14 * std::max(std::abs(c.m), std::abs(c.p))) {
        throw std::domain_error("invert_isotropic_map: singular isotropic map");
    }
    IsotropicMap inv;
    inv.dim = c.dim;
    inv.m = 1.0 / (4.0 * c.m);
    if (c.dim == 3) {
        inv.p = (c.p - c.m) / (c.m * T);
    } else {
        inv.p = c.p / (4.0 * c.m * (c.p - c.m));
    }
    return inv;
}

/// Composition C(a)∘C(b) is again isotropic (closure): deviatoric and trace
/// eigenvalues multiply.
inline IsotropicMap compose(const IsotropicMap& a, const IsotropicMap& b) {
    if (a.dim != b.dim) throw std::invalid_argument("compose: dimension mismatch");
    IsotropicMap c;
    c.dim = a.dim;
    c.m = 2.0 * a.m * b.m;
    const double T = trace_eigenvalue(a) * trace_eigenvalue(b);
    c.p = (a.dim == 3) ? (T + 4.0 * c.m) / 3.0 : 0.5 * T + c.m;
    return c;
}

/// Coercivity bounds: spectrum of C(m,p) on symmetric matrices is {2m, T}.
inline std::pair<double, double> eigen_bounds(const IsotropicMap& c) {
    const double a = 2.0 * c.m, b = trace_eigenvalue(c);
    return {std::min(a, b), std::max(a, b)};
}

/// d/dt C~(m+t m^, p+t p^) = -C~ C(m^,p^) C~.
inline SymTensor apply_Cinv_derivative(double m, double p, int dim, double mh, double ph,
                                       const SymTensor& M) {
    const IsotropicMap ct = invert_isotropic_map({m, p, dim});
    return -1.0 * apply_isotropic_map(ct, apply_isotropic_map({mh, ph, dim}, apply_isotropic_map(ct, M)));
}

/// Second derivative of C~: C~ C(d1) C~ C(d2) C~ + C~ C(d2) C~ C(d1) C~.
inline SymTensor apply_Cinv_second(double m, double p, int dim, double m1, double p1, double m2,
                                   double p2, const SymTensor& M) {
    const IsotropicMap ct = invert_isotropic_map({m, p, dim});
    const IsotropicMap c1{m1, p1, dim}, c2{m2, p2, dim};
    auto chain = [&](const IsotropicMap& a, const IsotropicMap& b) {
        return apply_isotropic_map(
            ct, apply_isotropic_map(a, apply_isotropic_map(ct, apply_isotropic_map(b, apply_isotropic_map(ct, M)))));
    };
    return chain(c1, c2) + chain(c2, c1);
}

// ---------------------------------------------------------------------------
// Pairing helpers.  For admissible (m,p) and any symmetric E, phi:
//   C(a,b)E : C~(m,p)phi = (a/m) E:phi + q_t(a,b;m,p) trE trphi
//   [C~ C(a1,b1) E] : [C(a2,b2) C~ phi]
//       = (a1 a2/m^2) E:phi + W(a1,b1,a2,b2;m,p) trE trphi
// with q_t = (b m - a p)/(m T) and W as below; Wa, Wb are dW/da2, dW/db2.
// ---------------------------------------------------------------------------

inline double pair_qt(double a, double b, double m, double p, int dim) {
    return (b * m - a * p) / (m * trace_eigenvalue(m, p, dim));
}

inline double pair_W(double a1, double b1, double a2, double b2, double m, double p, int dim) {
    const double T = trace_eigenvalue(m, p, dim);
    const double g1 = b1 * m - a1 * p, g2 = b2 * m - a2 * p;
    return ((a1 * g2 + a2 * g1) * T + dim * g1 * g2) / (m * m * T * T);
}

inline double pair_Wa(double a1, double b1, double m, double p, int dim) {
    const double T = trace_eigenvalue(m, p, dim);
    const double g1 = b1 * m - a1 * p;
    return ((b1 * m - 2.0 * a1 * p) * T - dim * p * g1) / (m * m * T * T);
}

inline double pair_Wb(double a1, double b1, double m, double p, int dim) {
    const double T = trace_eigenvalue(m, p, dim);
    const double g1 = b1 * m - a1 * p;
    return (a1 * T + dim * g1) / (m * T * T);
}

// ---------------------------------------------------------------------------
// GSLS relaxation and the five-parameter material point.
// ---------------------------------------------------------------------------

/// Stress relaxation times and the attenuation sum alpha at center frequency.
struct RelaxationSpec {
    int L = 1;
    std::array<double, 5> tau_sigma{};
    double omega0 = 1.0;
    double alpha = 0.0;  // cached by make_relaxation
};

inline double compute_alpha(int L, const double* tau_sigma, double omega0) {
    if (L < 1 || L > 5) throw std::invalid_argument("compute_alpha: L must be in [1,5]");
    if (omega0 <= 0.0) throw std::invalid_argument("compute_alpha: omega0 must be positive");
    double a = 0.0;
    for (int l = 0; l < L; ++l) {
        if (tau_sigma[l] <= 0.0) throw std::invalid_argument("compute_alpha: tau_sigma must be positive");
        const double x = omega0 * omega0 * tau_sigma[l] * tau_sigma[l];
        a += x / (1.0 + x);
    }
    return a;
}

inline RelaxationSpec make_relaxation(int L, std::array<double, 5> tau_sigma, double omega0) {
    RelaxationSpec r;
    r.L = L;
    r.tau_sigma = tau_sigma;
    r.omega0 = omega0;
    r.alpha = compute_alpha(L, tau_sigma.data(), omega0);
    return r;
}

/// One material point (rho, vS, tauS, vP, tauP).
struct ParameterPoint {
    double rho = 1.0, vS = 1.0, tauS = 1.0, vP = 3.0, tauP = 1.0;
};

/// A perturbation direction, same five slots.
struct ParameterDir {
    double rho = 0.0, vS = 0.0, tauS = 0.0, vP = 0.0, tauP = 0.0;
};

/// Box bounds for the five parameters plus the induced modulus box.
struct ParameterBounds {
    double rho_min = 0, rho_max = 0;
    double vS_min = 0, vS_max = 0;
    double tauS_min = 0, tauS_max = 0;
    double vP_min = 0, vP_max = 0;
    double tauP_min = 0, tauP_max = 0;

    double mu_min(double alpha) const { return rho_min * vS_min * vS_min / (1.0 + tauS_max * alpha); }
    double mu_max(double alpha) const { return rho_max * vS_max * vS_max / (1.0 + tauS_min * alpha); }
    double pi_min(double alpha) const { return rho_min * vP_min * vP_min / (1.0 + tauP_max * alpha); }
    double pi_max(double alpha) const { return rho_max * vP_max * vP_max / (1.0 + tauP_min * alpha); }

    double m_lo(double alpha) const { return mu_min(alpha) * std::min(1.0, tauS_min); }
    double m_hi(double alpha) const { return mu_max(alpha) * std::max(1.0, tauS_max); }
    double p_lo(double alpha) const { return pi_min(alpha) * std::min(1.0, tauP_min); }
    double p_hi(double alpha) const { return pi_max(alpha) * std::max(1.0, tauP_max); }

    /// D(C) condition on the induced box: 3 p_lo > 4 m_hi (3D), p_lo > m_hi (2D).
    bool box_admissible(double alpha, int dim) const {
        return dim == 3 ? 3.0 * p_lo(alpha) > 4.0 * m_hi(alpha) : p_lo(alpha) > m_hi(alpha);
    }
};

/// Relaxed moduli (V_p2) and their density-scaled versions.
struct Moduli {
    double mu0 = 0.0, pi0 = 0.0;  // relaxed moduli
    double mu = 0.0, pi = 0.0;    // mu0/rho, pi0/rho
};

inline Moduli moduli_from_params(const ParameterPoint& pt, double alpha) {
    if (pt.rho <= 0.0 || pt.vS <= 0.0 || pt.vP <= 0.0)
        throw std::invalid_argument("moduli_from_params: parameters must be positive");
    Moduli m;
    m.mu = pt.vS * pt.vS / (1.0 + pt.tauS * alpha);
    m.pi = pt.vP * pt.vP / (1.0 + pt.tauP * alpha);
    m.mu0 = pt.rho * m.mu;
    m.pi0 = pt.rho * m.pi;
    return m;
}

/// First-order linearization coefficients of the moduli maps:
///   mu_tilde = d mu,  pi_tilde = d pi,  mu_hat = d(tauS mu),  pi_hat = d(tauP pi).
struct PerturbationCoeffs {
    double mu_tilde = 0.0, pi_tilde = 0.0, mu_hat = 0.0, pi_hat = 0.0;
};

inline PerturbationCoeffs perturbation_coeffs(const ParameterPoint& pt, double alpha,
                                              const ParameterDir& d) {
    const double dS = 1.0 + pt.tauS * alpha, dP = 1.0 + pt.tauP * alpha;
    PerturbationCoeffs c;
    c.mu_tilde = 2.0 * pt.vS / dS * d.vS - alpha * pt.vS * pt.vS / (dS * dS) * d.tauS;
    c.pi_tilde = 2.0 * pt.vP / dP * d.vP - alpha * pt.vP * pt.vP / (dP * dP) * d.tauP;
    c.mu_hat = 2.0 * pt.tauS * pt.vS / dS * d.vS + pt.vS * pt.vS / (dS * dS) * d.tauS;
    c.pi_hat = 2.0 * pt.tauP * pt.vP / dP * d.vP + pt.vP * pt.vP / (dP * dP) * d.tauP;
    return c;
}

/// Same coefficients written through mu, pi; must agree with the primitive
/// forms to machine precision.
inline PerturbationCoeffs perturbation_coeffs_moduli(const ParameterPoint& pt, double alpha,
                                                     const ParameterDir& d) {
    const Moduli m = moduli_from_params(pt, alpha);
    const double dS = 1.0 + pt.tauS * alpha, dP = 1.0 + pt.tauP * alpha;
    PerturbationCoeffs c;
    c.mu_tilde = 2.0 * m.mu / pt.vS * d.vS - alpha * m.mu / dS * d.tauS;
    c.pi_tilde = 2.0 * m.pi / pt.vP * d.vP - alpha * m.pi / dP * d.tauP;
    c.mu_hat = 2.0 * pt.tauS * m.mu / pt.vS * d.vS + m.mu / dS * d.tauS;
    c.pi_hat = 2.0 * pt.tauP * m.pi / pt.vP * d.vP + m.pi / dP * d.tauP;
    return c;
}

/// Second directional derivatives of the four modulus maps in directions
/// (d1,d2): mu'' = D^2 mu [d1,d2], msu'' = D^2(tauS mu), etc.
struct CurvatureCoeffs {
    double mu_pp = 0.0, pi_pp = 0.0;    // D^2 mu, D^2 pi
    double msu_pp = 0.0, psu_pp = 0.0;  // D^2 (tauS mu), D^2 (tauP pi)
};

inline CurvatureCoeffs curvature_coeffs(const ParameterPoint& pt, double alpha,
                                        const ParameterDir& d1, const ParameterDir& d2) {
    const double dS = 1.0 + pt.tauS * alpha, dP = 1.0 + pt.tauP * alpha;
    CurvatureCoeffs c;
    c.mu_pp = 2.0 * d1.vS * d2.vS / dS
              - 2.0 * alpha * pt.vS * (d1.vS * d2.tauS + d2.vS * d1.tauS) / (dS * dS)
              + 2.0 * alpha * alpha * pt.vS * pt.vS * d1.tauS * d2.tauS / (dS * dS * dS);
    c.pi_pp = 2.0 * d1.vP * d2.vP / dP
              - 2.0 * alpha * pt.vP * (d1.vP * d2.tauP + d2.vP * d1.tauP) / (dP * dP)
              + 2.0 * alpha * alpha * pt.vP * pt.vP * d1.tauP * d2.tauP / (dP * dP * dP);
    c.msu_pp = 2.0 * pt.tauS * d1.vS * d2.vS / dS
               + 2.0 * pt.vS * (d1.vS * d2.tauS + d2.vS * d1.tauS) / (dS * dS)
               - 2.0 * alpha * pt.vS * pt.vS * d1.tauS * d2.tauS / (dS * dS * dS);
    c.psu_pp = 2.0 * pt.tauP * d1.vP * d2.vP / dP
               + 2.0 * pt.vP * (d1.vP * d2.tauP + d2.vP * d1.tauP) / (dP * dP)
               - 2.0 * alpha * pt.vP * pt.vP * d1.tauP * d2.tauP / (dP * dP * dP);
    return c;
}

// ---------------------------------------------------------------------------
// Single-cell state algebra: the operators B, B^{-1}, Q, V', V'' applied to
// one grid cell (velocity vector + 1+L symmetric tensors).
// ---------------------------------------------------------------------------

struct StateCell {
    int dim = 3;
    int L = 1;
    std::array<double, 3> v{};
    std::vector<SymTensor> psi;  // psi[0..L]

    StateCell() = default;
    StateCell(int dim_, int L_) : dim(dim_), L(L_), psi(static_cast<std::size_t>(L_) + 1, SymTensor(dim_)) {}

    double dot(const StateCell& o) const {
        double s = 0.0;
        for (int i = 0; i < dim; ++i) s += v[static_cast<std::size_t>(i)] * o.v[static_cast<std::size_t>(i)];
        for (std::size_t l = 0; l < psi.size(); ++l) s += psi[l].dot(o.psi[l]);
        return s;
    }
    double norm() const { return std::sqrt(dot(*this)); }

    StateCell& axpy(double a, const StateCell& o) {
        for (int i = 0; i < dim; ++i) v[static_cast<std::size_t>(i)] += a * o.v[static_cast<std::size_t>(i)];
        for (std::size_t l = 0; l < psi.size(); ++l) psi[l] += a * o.psi[l];
        return *this;
    }
};

/// B: velocity scaled by rho, tensor blocks by C~(mu0,pi0) / C~(tauS mu0, tauP pi0).
inline StateCell apply_B_point(const Moduli& mod, double tauS, double tauP, double rho,
                               const StateCell& w) {
    const int dim = w.dim;
    const IsotropicMap c0 = invert_isotropic_map({mod.mu0, mod.pi0, dim});
    const IsotropicMap cl = invert_isotropic_map({tauS * mod.mu0, tauP * mod.pi0, dim});
    StateCell r = w;
    for (int i = 0; i < dim; ++i) r.v[static_cast<std::size_t>(i)] *= rho;
    r.psi[0] = apply_isotropic_map(c0, w.psi[0]);
    for (int l = 1; l <= w.L; ++l) r.psi[static_cast<std::size_t>(l)] = apply_isotropic_map(cl, w.psi[static_cast<std::size_t>(l)]);
    return r;
}

/// B^{-1}: velocity divided by rho, tensor blocks by C(mu0,pi0) / C(tauS mu0, tauP pi0).
inline StateCell apply_Binv_point(const Moduli& mod, double tauS, double tauP, double rho,
                                  const StateCell& w) {
    const int dim = w.dim;
    StateCell r = w;
    for (int i = 0; i < dim; ++i) r.v[static_cast<std::size_t>(i)] /= rho;
    r.psi[0] = apply_isotropic_map({mod.mu0, mod.pi0, dim}, w.psi[0]);
    const IsotropicMap cl{tauS * mod.mu0, tauP * mod.pi0, dim};
    for (int l = 1; l <= w.L; ++l) r.psi[static_cast<std::size_t>(l)] = apply_isotropic_map(cl, w.psi[static_cast<std::size_t>(l)]);
    return r;
}

/// Q: memory blocks scaled by 1/tau_sigma_l, velocity and psi_0 zero.
inline StateCell apply_Q_point(const RelaxationSpec& relax, const StateCell& w) {
    StateCell r(w.dim, w.L);
    for (int l = 1; l <= w.L; ++l)
        r.psi[static_cast<std::size_t>(l)] = (1.0 / relax.tau_sigma[static_cast<std::size_t>(l - 1)]) * w.psi[static_cast<std::size_t>(l)];
    return r;
}

/// V'(p)phat applied to a cell.
inline StateCell apply_V_prime_point(const ParameterPoint& pt, double alpha, const ParameterDir& d,
                                     const StateCell& w) {
    const int dim = w.dim;
    const Moduli mod = moduli_from_params(pt, alpha);
    const PerturbationCoeffs pc = perturbation_coeffs(pt, alpha, d);
    const double r2 = d.rho / (pt.rho * pt.rho);
    StateCell r(dim, w.L);
    for (int i = 0; i < dim; ++i) r.v[static_cast<std::size_t>(i)] = d.rho * w.v[static_cast<std::size_t>(i)];

    const IsotropicMap ct0 = invert_isotropic_map({mod.mu, mod.pi, dim});
    r.psi[0] = -r2 * apply_isotropic_map(ct0, w.psi[0])
               + (1.0 / pt.rho) * apply_Cinv_derivative(mod.mu, mod.pi, dim, pc.mu_tilde, pc.pi_tilde, w.psi[0]);
    const double ms = pt.tauS * mod.mu, ps = pt.tauP * mod.pi;
    const IsotropicMap ctl = invert_isotropic_map({ms, ps, dim});
    for (int l = 1; l <= w.L; ++l) {
        const SymTensor& x = w.psi[static_cast<std::size_t>(l)];
        r.psi[static_cast<std::size_t>(l)] = -r2 * apply_isotropic_map(ctl, x)
                                             + (1.0 / pt.rho) * apply_Cinv_derivative(ms, ps, dim, pc.mu_hat, pc.pi_hat, x);
    }
    return r;
}

/// V''(p)[d1,d2] applied to a cell (zero velocity block).
inline StateCell apply_V_second_point(const ParameterPoint& pt, double alpha, const ParameterDir& d1,
                                      const ParameterDir& d2, const StateCell& w) {
    const int dim = w.dim;
    const Moduli mod = moduli_from_params(pt, alpha);
    const PerturbationCoeffs c1 = perturbation_coeffs(pt, alpha, d1);
    const PerturbationCoeffs c2 = perturbation_coeffs(pt, alpha, d2);
    const CurvatureCoeffs cc = curvature_coeffs(pt, alpha, d1, d2);
    const double rho = pt.rho;
    StateCell r(dim, w.L);

    auto block = [&](double m, double p, double a1, double b1, double a2, double b2, double cpp_m,
                     double cpp_p, const SymTensor& x) {
        const IsotropicMap ct = invert_isotropic_map({m, p, dim});
        auto Ct = [&](const SymTensor& y) { return apply_isotropic_map(ct, y); };
        auto C1 = [&](const SymTensor& y) { return apply_isotropic_map({a1, b1, dim}, y); };
        auto C2 = [&](const SymTensor& y) { return apply_isotropic_map({a2, b2, dim}, y); };
        SymTensor out = (2.0 * d1.rho * d2.rho / (rho * rho * rho)) * Ct(x);
        out += (d1.rho / (rho * rho)) * Ct(C2(Ct(x)));
        out += (d2.rho / (rho * rho)) * Ct(C1(Ct(x)));
        out += (1.0 / rho) * (Ct(C1(Ct(C2(Ct(x))))) + Ct(C2(Ct(C1(Ct(x))))));
        out -= (1.0 / rho) * Ct(apply_isotropic_map({cpp_m, cpp_p, dim}, Ct(x)));
        return out;
    };

    r.psi[0] = block(mod.mu, mod.pi, c1.mu_tilde, c1.pi_tilde, c2.mu_tilde, c2.pi_tilde, cc.mu_pp,
                     cc.pi_pp, w.psi[0]);
    const double ms = pt.tauS * mod.mu, ps = pt.tauP * mod.pi;
    for (int l = 1; l <= w.L; ++l) {
        r.psi[static_cast<std::size_t>(l)] = block(ms, ps, c1.mu_hat, c1.pi_hat, c2.mu_hat, c2.pi_hat,
                                                   cc.msu_pp, cc.psu_pp, w.psi[static_cast<std::size_t>(l)]);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Admissibility reporting.
// ---------------------------------------------------------------------------

struct AdmissibilityReport {
    std::array<bool, 5> in_box{};       // rho, vS, tauS, vP, tauP within bounds
    bool induced_in_DC = false;         // (mu0,pi0) and (tauS mu0, tauP pi0) in the modulus box
    double composite_lhs = 0.0;         // left side of the wave-speed inequality
    double composite_rhs = 0.0;         // vP_min^2 / vS_max^2
    bool composite_ok = false;          // strict inequality holds
    bool admissible = false;
};

inline AdmissibilityReport check_parameter_domain(const ParameterPoint& pt,
                                                  const ParameterBounds& b, double alpha,
                                                  int dim) {
    AdmissibilityReport r;
    r.in_box[0] = pt.rho >= b.rho_min && pt.rho <= b.rho_max;
    r.in_box[1] = pt.vS >= b.vS_min && pt.vS <= b.vS_max;
    r.in_box[2] = pt.tauS >= b.tauS_min && pt.tauS <= b.tauS_max;
    r.in_box[3] = pt.vP >= b.vP_min && pt.vP <= b.vP_max;
    r.in_box[4] = pt.tauP >= b.tauP_min && pt.tauP <= b.tauP_max;

    const Moduli m = moduli_from_params(pt, alpha);
    const double mlo = b.m_lo(alpha), mhi = b.m_hi(alpha);
    const double plo = b.p_lo(alpha), phi = b.p_hi(alpha);
    auto in_mod_box = [&](double mm, double pp) {
        return mm >= mlo && mm <= mhi && pp >= plo && pp <= phi;
    };
    r.induced_in_DC = b.box_admissible(alpha, dim) && in_mod_box(m.mu0, m.pi0) &&
                      in_mod_box(pt.tauS * m.mu0, pt.tauP * m.pi0);

    const double factor = dim == 3 ? 4.0 / 3.0 : 1.0;
    r.composite_lhs = factor * (b.rho_max / b.rho_min) *
                      ((1.0 + b.tauP_max * alpha) / (1.0 + b.tauS_min * alpha)) *
                      (std::max(1.0, b.tauS_max) / std::min(1.0, b.tauP_min));
    r.composite_rhs = (b.vP_min * b.vP_min) / (b.vS_max * b.vS_max);
    r.composite_ok = r.composite_lhs < r.composite_rhs;

    r.admissible = r.in_box[0] && r.in_box[1] && r.in_box[2] && r.in_box[3] && r.in_box[4] &&
                   r.induced_in_DC && r.composite_ok;
    return r;
}

}  // namespace viscoadjoint::rheology
