#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "viscoadjoint/wave2d.hpp"

namespace viscoadjoint::fwi {

using rheology::pair_qt;
using rheology::pair_Wa;
using rheology::pair_Wb;
using rheology::trace_eigenvalue;
using wave2d::AdjointData;
using wave2d::DiscreteOperators;
using wave2d::Grid2D;
using wave2d::ParameterDirField;
using wave2d::ParameterField;
using wave2d::PointSource;
using wave2d::RecordedWavefield;
using wave2d::ReceiverSet;
using wave2d::StateLayout;

// ---------------------------------------------------------------------------
// Pointwise adjoint integrands.  Every gradient row is a combination of the
// local invariants below; the combinations were checked symbolically against
// the direct pairings with V' and V''.
// ---------------------------------------------------------------------------

/// Pointwise inputs of the coefficient tables.
struct PointData {
    double rho = 1.0, vS = 1.0, tauS = 1.0, vP = 1.0, tauP = 1.0;
    double alpha = 0.0, mu = 0.0, pi = 0.0;
    // direction-dependent entries (Gamma/Upsilon tables)
    double rho_hat = 0.0, mu_t = 0.0, pi_t = 0.0, mu_h = 0.0, pi_h = 0.0;
};

inline PointData point_data(const rheology::ParameterPoint& pt, double alpha) {
    const rheology::Moduli m = rheology::moduli_from_params(pt, alpha);
    PointData q;
    q.rho = pt.rho;
    q.vS = pt.vS;
    q.tauS = pt.tauS;
    q.vP = pt.vP;
    q.tauP = pt.tauP;
    q.alpha = alpha;
    q.mu = m.mu;
    q.pi = m.pi;
    return q;
}

inline PointData point_data(const rheology::ParameterPoint& pt, double alpha,
                            const rheology::ParameterDir& d) {
    PointData q = point_data(pt, alpha);
    const rheology::PerturbationCoeffs c = rheology::perturbation_coeffs(pt, alpha, d);
    q.rho_hat = d.rho;
    q.mu_t = c.mu_tilde;
    q.pi_t = c.pi_tilde;
    q.mu_h = c.mu_hat;
    q.pi_h = c.pi_hat;
    return q;
}

/// Local invariants of the base/adjoint fields at one point and time:
/// F0 = eps(v):phi_0, FS = eps(v):Sigma, t0 = tr phi_0, tS = tr Sigma,
/// d = div v, aw = dt v . w (velocity pairing).
struct SigmaFields {
    double F0 = 0, FS = 0, t0 = 0, tS = 0, d = 0, aw = 0;
};

/// Additional invariants of the linearized field: G0 = eps(v1):phi_0,
/// GS = eps(v1):Sigma, d1 = div v1, a1w = dt v1 . w.
struct GammaFields {
    SigmaFields base;
    double G0 = 0, GS = 0, d1 = 0, a1w = 0;
};

inline void check_regular(double mu, double pi, double tauS, double tauP, int dim) {
    const double d0 = trace_eigenvalue(mu, pi, dim);
    const double d1 = trace_eigenvalue(tauS * mu, tauP * pi, dim);
    const double scale = std::max(std::abs(pi), std::abs(tauP * pi));
    if (d0 < 1e-6 * scale || d1 < 1e-6 * scale)
        throw std::domain_error("fwi: singular trace denominator (3pi-4mu or pi-mu too small)");
}

/// First-order adjoint integrand rows (rho, vS, tauS, vP, tauP order):
/// the integrand of Phi'(p)* g at one point and time.
inline std::array<double, 5> sigma_rows(const PointData& q, int dim, const SigmaFields& f) {
    const double D0 = trace_eigenvalue(q.mu, q.pi, dim);
    const double D1 = trace_eigenvalue(q.tauS * q.mu, q.tauP * q.pi, dim);
    const double trSv = f.t0 / D0 + q.tauP * f.tS / D1;
    const double trS1 = -q.alpha * f.t0 / D0 + q.tauP * f.tS / (q.tauS * D1);
    const double eS2 = q.alpha * f.F0 - f.FS / q.tauS;
    const double trSP = q.alpha * f.t0 / D0 - f.tS / D1;
    std::array<double, 5> r{};
    r[0] = f.aw - (f.F0 + f.FS) / q.rho;
    r[1] = (2.0 / q.vS) * (-(f.F0 + f.FS) + q.pi * trSv * f.d);
    r[2] = (eS2 + q.pi * trS1 * f.d) / (1.0 + q.alpha * q.tauS);
    r[3] = -(2.0 * q.pi / q.vP) * trSv * f.d;
    r[4] = q.pi / (1.0 + q.alpha * q.tauP) * trSP * f.d;
    return r;
}

/// Integrand rows of [F''(V)[V'p^,V' .]* g]'s second part (the Gamma terms,
/// paired against the direction that is being reconstructed).
inline std::array<double, 5> gamma_rows(const PointData& q, int dim, const GammaFields& f) {
    const double m0 = q.mu, p0 = q.pi, m1 = q.tauS * q.mu, p1 = q.tauP * q.pi;
    const double D0 = trace_eigenvalue(m0, p0, dim), D1 = trace_eigenvalue(m1, p1, dim);
    const double rr = q.rho_hat / q.rho;
    const SigmaFields& b = f.base;

    const double c_rho = f.a1w - (f.G0 + f.GS) / q.rho - rr / q.rho * (b.F0 + b.FS) -
                         ((q.mu_t / m0) * b.F0 + pair_qt(q.mu_t, q.pi_t, m0, p0, dim) * b.d * b.t0) / q.rho -
                         ((q.mu_h / m1) * b.FS + pair_qt(q.mu_h, q.pi_h, m1, p1, dim) * b.d * b.tS) / q.rho;
    const double c_mut = -(1.0 / m0) * f.G0 + (p0 / (m0 * D0)) * f.d1 * b.t0 -
                         rr * ((1.0 / m0) * b.F0 - (p0 / (m0 * D0)) * b.d * b.t0) -
                         (q.mu_t / (m0 * m0)) * b.F0 - pair_Wa(q.mu_t, q.pi_t, m0, p0, dim) * b.d * b.t0;
    const double c_pit = -(1.0 / D0) * f.d1 * b.t0 - rr * (1.0 / D0) * b.d * b.t0 -
                         pair_Wb(q.mu_t, q.pi_t, m0, p0, dim) * b.d * b.t0;
    const double c_muh = -(1.0 / m1) * f.GS + (p1 / (m1 * D1)) * f.d1 * b.tS -
                         rr * ((1.0 / m1) * b.FS - (p1 / (m1 * D1)) * b.d * b.tS) -
                         (q.mu_h / (m1 * m1)) * b.FS - pair_Wa(q.mu_h, q.pi_h, m1, p1, dim) * b.d * b.tS;
    const double c_pih = -(1.0 / D1) * f.d1 * b.tS - rr * (1.0 / D1) * b.d * b.tS -
                         pair_Wb(q.mu_h, q.pi_h, m1, p1, dim) * b.d * b.tS;

    std::array<double, 5> r{};
    r[0] = c_rho;
    r[1] = (2.0 / q.vS) * (m0 * c_mut + m1 * c_muh);
    r[2] = (-q.alpha * m0 * c_mut + m0 * c_muh) / (1.0 + q.alpha * q.tauS);
    r[3] = (2.0 / q.vP) * (p0 * c_pit + p1 * c_pih);
    r[4] = (-q.alpha * p0 * c_pit + p0 * c_pih) / (1.0 + q.alpha * q.tauP);
    return r;
}

/// Integrand rows of [F'(V)V''(p)[p^, .]]* g (the Upsilon terms).
inline std::array<double, 5> upsilon_rows(const PointData& q, int dim, const SigmaFields& b) {
    const double m0 = q.mu, p0 = q.pi, m1 = q.tauS * q.mu, p1 = q.tauP * q.pi;
    const double D0 = trace_eigenvalue(m0, p0, dim), D1 = trace_eigenvalue(m1, p1, dim);
    const double rr = q.rho_hat / q.rho;
    // curvature shorthands of the modulus maps
    const double r1 = (q.mu_h - q.tauS * q.mu_t) / (1.0 + q.tauS * q.alpha);
    const double s1 = (q.pi_h - q.tauP * q.pi_t) / (1.0 + q.tauP * q.alpha);
    const double cS = q.mu_t - q.alpha * r1;
    const double cP = q.pi_t - q.alpha * s1;

    const double u_rho = 2.0 * rr / q.rho * (b.F0 + b.FS) +
                         ((q.mu_t / m0) * b.F0 + pair_qt(q.mu_t, q.pi_t, m0, p0, dim) * b.d * b.t0) / q.rho +
                         ((q.mu_h / m1) * b.FS + pair_qt(q.mu_h, q.pi_h, m1, p1, dim) * b.d * b.tS) / q.rho;
    const double u_mut = rr * ((1.0 / m0) * b.F0 - (p0 / (m0 * D0)) * b.d * b.t0) +
                         2.0 * (q.mu_t / (m0 * m0)) * b.F0 +
                         2.0 * pair_Wa(q.mu_t, q.pi_t, m0, p0, dim) * b.d * b.t0;
    const double u_pit = rr * (1.0 / D0) * b.d * b.t0 + 2.0 * pair_Wb(q.mu_t, q.pi_t, m0, p0, dim) * b.d * b.t0;
    const double u_muh = rr * ((1.0 / m1) * b.FS - (p1 / (m1 * D1)) * b.d * b.tS) +
                         2.0 * (q.mu_h / (m1 * m1)) * b.FS +
                         2.0 * pair_Wa(q.mu_h, q.pi_h, m1, p1, dim) * b.d * b.tS;
    const double u_pih = rr * (1.0 / D1) * b.d * b.tS + 2.0 * pair_Wb(q.mu_h, q.pi_h, m1, p1, dim) * b.d * b.tS;

    // mu''-corrections: contribution of a direction with D^2 mu = mpp on the
    // unrelaxed block and D^2(tauS mu) = Mpp on the memory blocks
    auto mucorr = [&](double mpp, double Mpp) {
        return -((mpp / m0) * b.F0 + pair_qt(mpp, 0.0, m0, p0, dim) * b.d * b.t0) -
               ((Mpp / m1) * b.FS + pair_qt(Mpp, 0.0, m1, p1, dim) * b.d * b.tS);
    };
    auto picorr = [&](double ppp, double Ppp) {
        return -(pair_qt(0.0, ppp, m0, p0, dim) * b.d * b.t0 +
                 pair_qt(0.0, Ppp, m1, p1, dim) * b.d * b.tS);
    };

    std::array<double, 5> r{};
    r[0] = u_rho;
    r[1] = (2.0 / q.vS) * (m0 * u_mut + m1 * u_muh) + mucorr(cS, q.mu_h + r1) / q.vS;
    r[2] = (-q.alpha * m0 * u_mut + m0 * u_muh) / (1.0 + q.alpha * q.tauS) +
           mucorr(-q.alpha * cS, cS) / (1.0 + q.tauS * q.alpha);
    r[3] = (2.0 / q.vP) * (p0 * u_pit + p1 * u_pih) + picorr(cP, q.pi_h + s1) / q.vP;
    r[4] = (-q.alpha * p0 * u_pit + p0 * u_pih) / (1.0 + q.alpha * q.tauP) +
           picorr(-q.alpha * cP, cP) / (1.0 + q.tauP * q.alpha);
    return r;
}

// ---------------------------------------------------------------------------
// Named quantity tables.  Each quantity is c_phi * phi_0 + c_sig * Sigma; the
// values are extracted from the certified row assemblies above, so the tables
// and the rows can never drift apart.
// ---------------------------------------------------------------------------

struct QuantityPair {
    double c_phi = 0.0, c_sig = 0.0;
};

struct SigmaQuantities {
    QuantityPair v, tS1, tS2, tP;
};

struct GammaQuantities {
    QuantityPair rho1, rho2;     // pair eps(v) / trace in the rho row
    QuantityPair lin_tS;         // pairs eps(v1) in the tauS row
    QuantityPair vS1, vS2;       // trace terms, div v1 / div v
    QuantityPair tS0, tS1, tS2;  // eps(v) term and the two trace terms
    QuantityPair vP1, vP2;
    QuantityPair tP1, tP2;
};

struct UpsilonQuantities {
    QuantityPair rho1, rho2;
    QuantityPair vS1, vS2;
    QuantityPair tS1, tS2;
    QuantityPair vP, tP;
};

/// 2D closed-form shorthands as printed in the source tables.
struct K2D {
    double K_mu = 0.0, K_mu_tau = 0.0, K_pi = 0.0, K_pi_tau = 0.0;
    double K_S_phi = 0.0, K_S_sig = 0.0, K_P_phi = 0.0, K_P_sig = 0.0;
};

inline SigmaQuantities assemble_sigma(const PointData& q, int dim) {
    check_regular(q.mu, q.pi, q.tauS, q.tauP, dim);
    const double D0 = trace_eigenvalue(q.mu, q.pi, dim);
    const double D1 = trace_eigenvalue(q.tauS * q.mu, q.tauP * q.pi, dim);
    SigmaQuantities s;
    s.v = {1.0 / D0, q.tauP / D1};
    s.tS1 = {-q.alpha / D0, q.tauP / (q.tauS * D1)};
    s.tS2 = {q.alpha, -1.0 / q.tauS};
    s.tP = {q.alpha / D0, -1.0 / D1};
    return s;
}

inline GammaQuantities assemble_gamma(const PointData& q, int dim) {
    check_regular(q.mu, q.pi, q.tauS, q.tauP, dim);
    GammaQuantities g;
    // probe the row assembly: the quantity coefficients are the responses of
    // the rows to unit invariants
    auto probe = [&](auto set_field) {
        GammaFields f;
        set_field(f);
        return gamma_rows(q, dim, f);
    };
    const double preS = 2.0 / q.vS, preTS = 1.0 / (1.0 + q.alpha * q.tauS);
    const double preP = 2.0 * q.pi / q.vP, preTP = q.pi / (1.0 + q.alpha * q.tauP);

    auto rF0 = probe([](GammaFields& f) { f.base.F0 = 1.0; });
    auto rFS = probe([](GammaFields& f) { f.base.FS = 1.0; });
    auto rT0 = probe([](GammaFields& f) { f.base.d = 1.0; f.base.t0 = 1.0; });
    auto rTS = probe([](GammaFields& f) { f.base.d = 1.0; f.base.tS = 1.0; });
    auto rG0 = probe([](GammaFields& f) { f.G0 = 1.0; });
    auto rGS = probe([](GammaFields& f) { f.GS = 1.0; });
    auto rD10 = probe([](GammaFields& f) { f.d1 = 1.0; f.base.t0 = 1.0; });
    auto rD1S = probe([](GammaFields& f) { f.d1 = 1.0; f.base.tS = 1.0; });

    // rho row: a1w - (1/rho)[eps(v1):(phi0+Sig) + eps(v):Gamma^rho_1 + tr(Gamma^rho_2) d]
    g.rho1 = {-q.rho * rF0[0], -q.rho * rFS[0]};
    g.rho2 = {-q.rho * rT0[0], -q.rho * rTS[0]};
    // vS row: (2/vS)[ -eps(v1):(phi0+Sig) - eps(v):Gamma^rho_1
    //                 + tr(Gamma^v_{S,1}) d1 + tr(Gamma^v_{S,2}) d ]
    g.vS1 = {rD10[1] / preS, rD1S[1] / preS};
    g.vS2 = {rT0[1] / preS, rTS[1] / preS};
    // tauS row: (1/(1+a tS))[ eps(v1):lin_tS - eps(v):Gamma^tau_{S,0}
    //                         + tr(Gamma^tau_{S,1}) d1 + tr(Gamma^tau_{S,2}) d ]
    g.lin_tS = {rG0[2] / preTS, rGS[2] / preTS};
    g.tS0 = {-rF0[2] / preTS, -rFS[2] / preTS};
    g.tS1 = {rD10[2] / preTS, rD1S[2] / preTS};
    g.tS2 = {rT0[2] / preTS, rTS[2] / preTS};
    // vP row: -(2 pi/vP)[ tr(Gamma^v_{P,1}) d1 + tr(Gamma^v_{P,2}) d ]
    g.vP1 = {-rD10[3] / preP, -rD1S[3] / preP};
    g.vP2 = {-rT0[3] / preP, -rTS[3] / preP};
    // tauP row: (pi/(1+a tP))[ tr(Gamma^tau_{P,1}) d1 - tr(Gamma^tau_{P,2}) d ]
    g.tP1 = {rD10[4] / preTP, rD1S[4] / preTP};
    g.tP2 = {-rT0[4] / preTP, -rTS[4] / preTP};
    return g;
}

inline UpsilonQuantities assemble_upsilon(const PointData& q, int dim) {
    check_regular(q.mu, q.pi, q.tauS, q.tauP, dim);
    UpsilonQuantities u;
    auto probe = [&](auto set_field) {
        SigmaFields f;
        set_field(f);
        return upsilon_rows(q, dim, f);
    };
    const double preS = 2.0 / q.vS, preTS = 1.0 / (1.0 + q.alpha * q.tauS);
    const double preP = 2.0 * q.pi / q.vP, preTP = q.pi / (1.0 + q.alpha * q.tauP);
    auto rF0 = probe([](SigmaFields& f) { f.F0 = 1.0; });
    auto rFS = probe([](SigmaFields& f) { f.FS = 1.0; });
    auto rT0 = probe([](SigmaFields& f) { f.d = 1.0; f.t0 = 1.0; });
    auto rTS = probe([](SigmaFields& f) { f.d = 1.0; f.tS = 1.0; });
    // rows: (1/rho)[eps:U^rho_1 + tr(U^rho_2) d]; (2/vS)[eps:U^v_{S,1} + tr(U^v_{S,2}) d];
    // (1/(1+a tS))[eps:U^tau_{S,1} + tr(U^tau_{S,2}) d]; (2 pi/vP) tr(U^v_P) d;
    // (pi/(1+a tP)) tr(U^tau_P) d.
    u.rho1 = {q.rho * rF0[0], q.rho * rFS[0]};
    u.rho2 = {q.rho * rT0[0], q.rho * rTS[0]};
    u.vS1 = {rF0[1] / preS, rFS[1] / preS};
    u.vS2 = {rT0[1] / preS, rTS[1] / preS};
    u.tS1 = {rF0[2] / preTS, rFS[2] / preTS};
    u.tS2 = {rT0[2] / preTS, rTS[2] / preTS};
    u.vP = {rT0[3] / preP, rTS[3] / preP};
    u.tP = {rT0[4] / preTP, rTS[4] / preTP};
    return u;
}

/// The 2D K shorthands of the printed tables (pure definitions).
inline K2D assemble_k2d(const PointData& q) {
    K2D k;
    const double mu = q.mu, pi = q.pi, tS = q.tauS, tP = q.tauP;
    const double dS = pi - mu, dT = tP * pi - tS * mu;
    k.K_mu = (2.0 * pi * mu * q.mu_t - q.mu_t * pi * pi - q.pi_t * mu * mu) / (2.0 * mu * dS * dS);
    k.K_mu_tau = (2.0 * tP * pi * tS * mu * q.mu_h - q.mu_h * tP * tP * pi * pi -
                  q.pi_h * tS * tS * mu * mu) / (2.0 * tS * mu * dT * dT);
    k.K_pi = (q.pi_t - q.mu_t) / (2.0 * dS * dS);
    k.K_pi_tau = (q.pi_h - q.mu_h) / (2.0 * dT * dT);
    k.K_S_phi = (2.0 * pi * mu * q.mu_t - q.mu_t * pi * pi - q.pi_t * mu * mu) / (mu * dS * dS) -
                q.rho_hat / q.rho * pi / (2.0 * dS);
    k.K_S_sig = (2.0 * tP * pi * tS * mu * q.mu_h - q.mu_h * tP * tP * pi * pi -
                 q.pi_h * tS * tS * mu * mu) / (tS * mu * dT * dT) -
                q.rho_hat / q.rho * tP * pi / (2.0 * dT);
    k.K_P_phi = q.rho_hat / q.rho / (2.0 * dS) + (q.pi_t - q.mu_t) / (dS * dS);
    k.K_P_sig = q.rho_hat / q.rho / (2.0 * dT) + (q.pi_h - q.mu_h) / (dT * dT);
    return k;
}

// ---------------------------------------------------------------------------
// Field-level operators.
// ---------------------------------------------------------------------------

/// Five scalar gradient grids; values are densities, pairings against
/// direction fields carry the h^2 cell weight.
struct GradientField {
    Grid2D grid;
    std::vector<double> rho, vS, tauS, vP, tauP;

    GradientField() = default;
    explicit GradientField(const Grid2D& g)
        : grid(g),
          rho(static_cast<std::size_t>(g.nc()), 0.0),
          vS(static_cast<std::size_t>(g.nc()), 0.0),
          tauS(static_cast<std::size_t>(g.nc()), 0.0),
          vP(static_cast<std::size_t>(g.nc()), 0.0),
          tauP(static_cast<std::size_t>(g.nc()), 0.0) {}

    std::vector<double>& component(int k) {
        switch (k) {
            case 0: return rho;
            case 1: return vS;
            case 2: return tauS;
            case 3: return vP;
            default: return k == 4 ? tauP : throw std::out_of_range("GradientField::component");
        }
    }
    const std::vector<double>& component(int k) const {
        return const_cast<GradientField*>(this)->component(k);
    }

    GradientField& operator+=(const GradientField& o) {
        for (int k = 0; k < 5; ++k) {
            auto& a = component(k);
            const auto& b = o.component(k);
            for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
        }
        return *this;
    }
};

/// h^2-weighted pairing approximating the integral over D.
inline double pair_gradient(const GradientField& gf, const ParameterDirField& d) {
    double s = 0.0;
    for (int k = 0; k < 5; ++k) {
        const auto& a = gf.component(k);
        const auto& b = d.component(k);
        for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    }
    return s * gf.grid.h * gf.grid.h;
}

/// Interior-point margin: every cell at least eps_int of the box width away
/// from the bounds (required before derivative calls).
inline bool interior_point(const ParameterField& f, double eps_int = 0.01) {
    const auto& b = f.bounds;
    auto inside = [&](const std::vector<double>& c, double lo, double hi) {
        const double m = eps_int * (hi - lo);
        for (double v : c)
            if (v < lo + m || v > hi - m) return false;
        return true;
    };
    return inside(f.rho, b.rho_min, b.rho_max) && inside(f.vS, b.vS_min, b.vS_max) &&
           inside(f.tauS, b.tauS_min, b.tauS_max) && inside(f.vP, b.vP_min, b.vP_max) &&
           inside(f.tauP, b.tauP_min, b.tauP_max);
}

// ---------------------------------------------------------------------------
// Center collocation of the staggered fields.
// ---------------------------------------------------------------------------

namespace detail {

/// Average the four surrounding node values to cell centers.
inline void nodes_to_centers(const Grid2D& g, const double* nodes, double* centers) {
    for (int i = 0; i < g.nx; ++i)
        for (int j = 0; j < g.nz; ++j) {
            double s = 0.0;
            int n = 0;
            for (int di = 0; di <= 1; ++di)
                for (int dj = 0; dj <= 1; ++dj) {
                    const int ni = i + di, nj = j + dj;
                    if (nj >= g.node_j0()) {
                        s += nodes[g.in(ni, nj)];
                        ++n;
                    }
                }
            centers[g.ic(i, j)] = s / n;
        }
}

/// Velocity product collocation: sum over both components of the cell-center
/// averages of a . b at the velocity sites.
inline void velocity_dot_centers(const Grid2D& g, const StateLayout& lay, const double* a,
                                 const double* b, double* centers) {
    for (int i = 0; i < g.nx; ++i)
        for (int j = 0; j < g.nz; ++j) {
            double s = 0.0;
            if (i >= 1) s += 0.5 * a[lay.vx0() + g.ivx(i, j)] * b[lay.vx0() + g.ivx(i, j)];
            if (i + 1 <= g.nx - 1)
                s += 0.5 * a[lay.vx0() + g.ivx(i + 1, j)] * b[lay.vx0() + g.ivx(i + 1, j)];
            if (j >= g.vz_j0()) s += 0.5 * a[lay.vz0() + g.ivz(i, j)] * b[lay.vz0() + g.ivz(i, j)];
            if (j + 1 <= g.nz - 1)
                s += 0.5 * a[lay.vz0() + g.ivz(i, j + 1)] * b[lay.vz0() + g.ivz(i, j + 1)];
            centers[g.ic(i, j)] = s;
        }
}

/// Tensor data of one recorded state: phi_0 and the memory sum; normal
/// components at centers, shear kept on nodes so that Frobenius products are
/// formed nodewise and only the products are averaged to centers.
struct CenterTensors {
    std::vector<double> p0xx, p0zz, sgxx, sgzz;  // centers
    std::vector<double> p0xz_n, sgxz_n;          // nodes

    explicit CenterTensors(const Grid2D& g)
        : p0xx(static_cast<std::size_t>(g.nc())), p0zz(static_cast<std::size_t>(g.nc())),
          sgxx(static_cast<std::size_t>(g.nc())), sgzz(static_cast<std::size_t>(g.nc())),
          p0xz_n(static_cast<std::size_t>(g.nn())), sgxz_n(static_cast<std::size_t>(g.nn())) {}

    void load(const DiscreteOperators& ops, const std::vector<double>& state) {
        const Grid2D& g = ops.grid;
        const StateLayout& lay = ops.lay;
        std::copy_n(state.data() + lay.sxx0(0), g.nc(), p0xx.data());
        std::copy_n(state.data() + lay.szz0(0), g.nc(), p0zz.data());
        std::copy_n(state.data() + lay.sxz0(0), g.nn(), p0xz_n.data());
        std::fill(sgxx.begin(), sgxx.end(), 0.0);
        std::fill(sgzz.begin(), sgzz.end(), 0.0);
        std::fill(sgxz_n.begin(), sgxz_n.end(), 0.0);
        for (int l = 1; l <= ops.L(); ++l) {
            const double* xx = state.data() + lay.sxx0(l);
            const double* zz = state.data() + lay.szz0(l);
            const double* xz = state.data() + lay.sxz0(l);
            for (int k = 0; k < g.nc(); ++k) {
                sgxx[static_cast<std::size_t>(k)] += xx[k];
                sgzz[static_cast<std::size_t>(k)] += zz[k];
            }
            for (int k = 0; k < g.nn(); ++k) sgxz_n[static_cast<std::size_t>(k)] += xz[k];
        }
    }
};

/// Strain of a recorded state (normal parts at centers, shear on nodes) plus
/// dt v . w products averaged to centers.
struct CenterStrain {
    std::vector<double> exx, ezz;  // centers
    std::vector<double> exz_n;     // nodes
    std::vector<double> aw;        // centers

    explicit CenterStrain(const Grid2D& g)
        : exx(static_cast<std::size_t>(g.nc())), ezz(static_cast<std::size_t>(g.nc())),
          exz_n(static_cast<std::size_t>(g.nn())), aw(static_cast<std::size_t>(g.nc())) {}

    /// eps(v) of `state`, and dtv . wvel at centers where dtv is the velocity
    /// block of the state's forward right-hand side.
    void load(const DiscreteOperators& ops, const std::vector<double>& state,
              const PointSource* src, int halfk, const std::vector<double>& wstate,
              wave2d::StepWorkspace& ws, std::vector<double>& epsbuf, std::vector<double>& rhsbuf) {
        const Grid2D& g = ops.grid;
        ops.eps.apply(state.data(), epsbuf.data());
        std::copy_n(epsbuf.data(), g.nc(), exx.data());
        std::copy_n(epsbuf.data() + g.nc(), g.nc(), ezz.data());
        std::copy_n(epsbuf.data() + 2 * g.nc(), g.nn(), exz_n.data());
        wave2d::forward_rhs(ops, state, src, halfk, ws, rhsbuf);
        velocity_dot_centers(g, ops.lay, rhsbuf.data(), wstate.data(), aw.data());
    }
};

/// Mean of the nodewise product a*b over the cell's corner nodes.
inline double corner_product_mean(const Grid2D& g, const double* a, const double* b, int i, int j) {
    double s = 0.0;
    int n = 0;
    for (int di = 0; di <= 1; ++di)
        for (int dj = 0; dj <= 1; ++dj) {
            const int nj = j + dj;
            if (nj < g.node_j0()) continue;
            const int idx = g.in(i + di, nj);
            s += a[idx] * b[idx];
            ++n;
        }
    return s / n;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// The forward operator and its derivative/adjoint suite.
// ---------------------------------------------------------------------------

/// Full waveform forward operator: delegates to the wave solver.
inline RecordedWavefield phi(const DiscreteOperators& ops, const PointSource& src, double dt,
                             int nt, const wave2d::RunOptions& opts = {}) {
    return wave2d::run_forward(ops, src, dt, nt, opts);
}

/// First derivative application.
inline RecordedWavefield phi_prime(const DiscreteOperators& ops, const ParameterDirField& d,
                                   const RecordedWavefield& base, const PointSource* src,
                                   double dt, int nt) {
    if (!interior_point(ops.field))
        throw std::domain_error("phi_prime: field violates the interior-point margin");
    return wave2d::run_linearized(ops, d, base, src, dt, nt);
}

/// Second derivative application; returns u'' = cross + vpart.
inline std::pair<RecordedWavefield, RecordedWavefield> phi_second(
    const DiscreteOperators& ops, const ParameterDirField& d1, const ParameterDirField& d2,
    const RecordedWavefield& base, const RecordedWavefield& lin1, const RecordedWavefield& lin2,
    const PointSource* src, double dt, int nt) {
    if (!interior_point(ops.field))
        throw std::domain_error("phi_second: field violates the interior-point margin");
    return wave2d::run_second_linearized(ops, d1, d2, base, lin1, lin2, src, dt, nt);
}

/// First-order adjoint: assembles the five time-integrated gradient rows from
/// the forward field and the adjoint state of the data g.
inline GradientField phi_prime_adjoint(const DiscreteOperators& ops, const AdjointData& g,
                                       const RecordedWavefield& base, const PointSource* src,
                                       double dt, int nt) {
    const Grid2D& gr = ops.grid;
    for (int k = 0; k < gr.nc(); ++k) {
        const auto pt = ops.field.at(k);
        const auto m = rheology::moduli_from_params(pt, ops.relax.alpha);
        check_regular(m.mu, m.pi, pt.tauS, pt.tauP, 2);
    }
    RecordedWavefield w = wave2d::run_adjoint_continuous(ops, g, dt, nt);

    GradientField out(gr);
    // per-cell quantity tables (base-dependent only)
    std::vector<SigmaQuantities> sq(static_cast<std::size_t>(gr.nc()));
    std::vector<PointData> pd(static_cast<std::size_t>(gr.nc()));
    for (int k = 0; k < gr.nc(); ++k) {
        pd[static_cast<std::size_t>(k)] = point_data(ops.field.at(k), ops.relax.alpha);
        sq[static_cast<std::size_t>(k)] = assemble_sigma(pd[static_cast<std::size_t>(k)], 2);
    }

    wave2d::StepWorkspace ws(ops.lay);
    std::vector<double> epsbuf(static_cast<std::size_t>(gr.ntensor()));
    std::vector<double> rhsbuf(static_cast<std::size_t>(ops.lay.size()));
    detail::CenterTensors ct(gr);
    detail::CenterStrain cs(gr);

    for (int n = 0; n <= nt; ++n) {
        const double wt = wave2d::trapz_weight(n, nt, dt);
        ct.load(ops, w.at(n));
        cs.load(ops, base.at(n), src, 2 * n, w.at(n), ws, epsbuf, rhsbuf);
        for (int i = 0; i < gr.nx; ++i)
        for (int j = 0; j < gr.nz; ++j) {
            const int k = gr.ic(i, j);
            const auto kk = static_cast<std::size_t>(k);
            SigmaFields f;
            f.F0 = cs.exx[kk] * ct.p0xx[kk] + cs.ezz[kk] * ct.p0zz[kk] +
                   2.0 * detail::corner_product_mean(gr, cs.exz_n.data(), ct.p0xz_n.data(), i, j);
            f.FS = cs.exx[kk] * ct.sgxx[kk] + cs.ezz[kk] * ct.sgzz[kk] +
                   2.0 * detail::corner_product_mean(gr, cs.exz_n.data(), ct.sgxz_n.data(), i, j);
            f.t0 = ct.p0xx[kk] + ct.p0zz[kk];
            f.tS = ct.sgxx[kk] + ct.sgzz[kk];
            f.d = cs.exx[kk] + cs.ezz[kk];
            f.aw = cs.aw[kk];
            const auto r = sigma_rows(pd[kk], 2, f);
            out.rho[kk] += wt * r[0];
            out.vS[kk] += wt * r[1];
            out.tauS[kk] += wt * r[2];
            out.vP[kk] += wt * r[3];
            out.tauP[kk] += wt * r[4];
        }
    }
    return out;
}

/// Receiver-sampled misfit data: turns residual series (per step, per
/// receiver component) into the adjoint data g with g_{-1} = R^T res / h^2.
inline AdjointData adjoint_data_from_residuals(const DiscreteOperators& ops, const ReceiverSet& rec,
                                               const std::vector<double>& residuals, int nt) {
    AdjointData g;
    g.nt = nt;
    const int nc = rec.ncomp();
    g.vel.assign(static_cast<std::size_t>(nt) + 1,
                 std::vector<double>(static_cast<std::size_t>(ops.grid.nvel()), 0.0));
    const double ih2 = 1.0 / (ops.grid.h * ops.grid.h);
    std::vector<double> scaled(static_cast<std::size_t>(nc));
    for (int n = 0; n <= nt; ++n) {
        for (int c = 0; c < nc; ++c)
            scaled[static_cast<std::size_t>(c)] = ih2 * residuals[static_cast<std::size_t>(n) * nc + c];
        wave2d::inject_receivers(ops.grid, ops.lay, rec, scaled.data(), g.vel[static_cast<std::size_t>(n)]);
    }
    return g;
}

/// V'(p)p^ applied per step to the adjoint right-hand-side combination
/// w' - Q w = B^{-1}(g - A w); builds the data of the second adjoint state.
inline AdjointData second_adjoint_data(const DiscreteOperators& ops, const ParameterDirField& d,
                                       const AdjointData& g, const RecordedWavefield& w, double dt,
                                       int nt) {
    (void)dt;
    const Grid2D& gr = ops.grid;
    const StateLayout& lay = ops.lay;
    const std::size_t N = static_cast<std::size_t>(lay.size());

    // per-site V' coefficient maps: stress blocks are single isotropic maps
    const double alpha = ops.relax.alpha;
    std::vector<double> v0m(static_cast<std::size_t>(gr.nc())), v0p(v0m), vlm(v0m), vlp(v0m);
    for (int k = 0; k < gr.nc(); ++k) {
        const auto pt = ops.mat.center_pt[static_cast<std::size_t>(k)];
        const auto dd = d.at(k);
        const auto mod = rheology::moduli_from_params(pt, alpha);
        const auto pc = rheology::perturbation_coeffs(pt, alpha, dd);
        auto vmap = [&](double m, double p, double a, double b, double& om, double& op) {
            const auto ct = rheology::invert_isotropic_map({m, p, 2});
            const auto cd = rheology::compose(rheology::compose(ct, {a, b, 2}), ct);
            om = -dd.rho / (pt.rho * pt.rho) * ct.m - cd.m / pt.rho;
            op = -dd.rho / (pt.rho * pt.rho) * ct.p - cd.p / pt.rho;
        };
        vmap(mod.mu, mod.pi, pc.mu_tilde, pc.pi_tilde, v0m[static_cast<std::size_t>(k)], v0p[static_cast<std::size_t>(k)]);
        vmap(pt.tauS * mod.mu, pt.tauP * mod.pi, pc.mu_hat, pc.pi_hat, vlm[static_cast<std::size_t>(k)], vlp[static_cast<std::size_t>(k)]);
    }
    wave2d::SiteInterp si{gr};
    std::vector<double> n0c(static_cast<std::size_t>(gr.nn())), nlc(n0c);
    for (int i = 0; i <= gr.nx; ++i)
        for (int j = gr.node_j0(); j <= gr.nz; ++j) {
            const int k = gr.in(i, j);
            const auto pt = ops.mat.node_pt[static_cast<std::size_t>(k)];
            rheology::ParameterDir dd{si.at_node(d.rho, i, j), si.at_node(d.vS, i, j),
                                      si.at_node(d.tauS, i, j), si.at_node(d.vP, i, j),
                                      si.at_node(d.tauP, i, j)};
            const auto mod = rheology::moduli_from_params(pt, alpha);
            const auto pc = rheology::perturbation_coeffs(pt, alpha, dd);
            // shear eigenvalue of the V' stress blocks:
            // -(rho^/rho^2) / (2m) - coeff / (2 m^2 rho)
            const double m0 = mod.mu, m1 = pt.tauS * mod.mu;
            n0c[static_cast<std::size_t>(k)] =
                -dd.rho / (pt.rho * pt.rho) / (2.0 * m0) - pc.mu_tilde / (2.0 * m0 * m0 * pt.rho);
            nlc[static_cast<std::size_t>(k)] =
                -dd.rho / (pt.rho * pt.rho) / (2.0 * m1) - pc.mu_hat / (2.0 * m1 * m1 * pt.rho);
        }
    std::vector<double> rrvx(static_cast<std::size_t>(gr.nvx())), rrvz(static_cast<std::size_t>(gr.nvz()));
    for (int i = 1; i <= gr.nx - 1; ++i)
        for (int j = 0; j < gr.nz; ++j)
            rrvx[static_cast<std::size_t>(gr.ivx(i, j))] = si.at_vx(d.rho, i, j);
    for (int i = 0; i < gr.nx; ++i)
        for (int j = gr.vz_j0(); j <= gr.nz - 1; ++j)
            rrvz[static_cast<std::size_t>(gr.ivz(i, j))] = si.at_vz(d.rho, i, j);

    AdjointData gz;
    gz.nt = nt;
    gz.vel.assign(static_cast<std::size_t>(nt) + 1,
                  std::vector<double>(static_cast<std::size_t>(gr.nvel()), 0.0));
    gz.tensors.assign(static_cast<std::size_t>(nt) + 1,
                      std::vector<double>(static_cast<std::size_t>((ops.L() + 1) * gr.ntensor()), 0.0));

    wave2d::StepWorkspace ws(ops.lay);
    std::vector<double> gbuf(N), rhsw(N);
    for (int n = 0; n <= nt; ++n) {
        // w' - Q w = B^{-1}(g_n - A w_n)
        wave2d::detail::eval_adjoint_data(ops, g, 2 * n, gbuf);
        ops.apply_A(w.at(n), ws.ta, ws.tsum);
        for (std::size_t k = 0; k < N; ++k) ws.ta[k] = gbuf[k] - ws.ta[k];
        ops.apply_Binv(ws.ta, rhsw);
        // g_z = -V'(p)p^ (w' - Q w)
        auto& gv = gz.vel[static_cast<std::size_t>(n)];
        for (int k = 0; k < gr.nvx(); ++k)
            gv[static_cast<std::size_t>(k)] = -rrvx[static_cast<std::size_t>(k)] * rhsw[static_cast<std::size_t>(k)];
        for (int k = 0; k < gr.nvz(); ++k)
            gv[static_cast<std::size_t>(lay.vz0() + k)] =
                -rrvz[static_cast<std::size_t>(k)] * rhsw[static_cast<std::size_t>(lay.vz0() + k)];
        auto& gt = gz.tensors[static_cast<std::size_t>(n)];
        for (int l = 0; l <= ops.L(); ++l) {
            const auto& mm = (l == 0) ? v0m : vlm;
            const auto& pp = (l == 0) ? v0p : vlp;
            const auto& nn = (l == 0) ? n0c : nlc;
            const double* xx = rhsw.data() + lay.sxx0(l);
            const double* zz = rhsw.data() + lay.szz0(l);
            const double* xz = rhsw.data() + lay.sxz0(l);
            double* oxx = gt.data() + (lay.sxx0(l) - lay.block0(0));
            double* ozz = gt.data() + (lay.szz0(l) - lay.block0(0));
            double* oxz = gt.data() + (lay.sxz0(l) - lay.block0(0));
            for (int k = 0; k < gr.nc(); ++k) {
                const double t = (pp[static_cast<std::size_t>(k)] - 2.0 * mm[static_cast<std::size_t>(k)]) * (xx[k] + zz[k]);
                oxx[k] = -(2.0 * mm[static_cast<std::size_t>(k)] * xx[k] + t);
                ozz[k] = -(2.0 * mm[static_cast<std::size_t>(k)] * zz[k] + t);
            }
            for (int k = 0; k < gr.nn(); ++k) oxz[k] = -nn[static_cast<std::size_t>(k)] * xz[k];
        }
    }
    return gz;
}

/// The three assembled parts of the second-order adjoint: p1 pairs the
/// second adjoint state z (Sigma-type rows), p2 pairs the linearized field
/// against w (Gamma rows), upsilon carries the V'' part.
struct SecondAdjointParts {
    GradientField p1, p2, upsilon;

    GradientField total() const {
        GradientField t = p1;
        t += p2;
        t += upsilon;
        return t;
    }
};

/// Second-order adjoint: four solves (forward base given, adjoint w, the
/// linearized field u1, the second adjoint z) plus the three integrand parts.
inline SecondAdjointParts phi_second_adjoint_parts(const DiscreteOperators& ops,
                                                   const ParameterDirField& d, const AdjointData& g,
                                                   const RecordedWavefield& base,
                                                   const PointSource* src, double dt, int nt) {
    if (!interior_point(ops.field))
        throw std::domain_error("phi_second_adjoint: field violates the interior-point margin");
    const Grid2D& gr = ops.grid;

    RecordedWavefield w = wave2d::run_adjoint_continuous(ops, g, dt, nt);
    RecordedWavefield u1 = wave2d::run_linearized(ops, d, base, src, dt, nt);
    AdjointData gz = second_adjoint_data(ops, d, g, w, dt, nt);
    RecordedWavefield z = wave2d::run_adjoint_continuous(ops, gz, dt, nt);

    // per-cell tables
    std::vector<PointData> pd0(static_cast<std::size_t>(gr.nc()));
    std::vector<PointData> pdd(static_cast<std::size_t>(gr.nc()));
    for (int k = 0; k < gr.nc(); ++k) {
        pd0[static_cast<std::size_t>(k)] = point_data(ops.field.at(k), ops.relax.alpha);
        pdd[static_cast<std::size_t>(k)] = point_data(ops.field.at(k), ops.relax.alpha, d.at(k));
        check_regular(pd0[static_cast<std::size_t>(k)].mu, pd0[static_cast<std::size_t>(k)].pi,
                      pd0[static_cast<std::size_t>(k)].tauS, pd0[static_cast<std::size_t>(k)].tauP, 2);
    }

    const wave2d::LinCoeffs lc = wave2d::make_lin_coeffs(ops, d);
    wave2d::StepWorkspace ws(ops.lay);
    std::vector<double> epsbuf(static_cast<std::size_t>(gr.ntensor()));
    std::vector<double> rhsbuf(static_cast<std::size_t>(ops.lay.size()));
    detail::CenterTensors ctw(gr), ctz(gr);
    detail::CenterStrain csb(gr), cs1(gr);
    std::vector<double> a1w(static_cast<std::size_t>(gr.nc()));

    SecondAdjointParts out{GradientField(gr), GradientField(gr), GradientField(gr)};
    for (int n = 0; n <= nt; ++n) {
        const double wt = wave2d::trapz_weight(n, nt, dt);
        ctw.load(ops, w.at(n));
        ctz.load(ops, z.at(n));
        csb.load(ops, base.at(n), src, 2 * n, z.at(n), ws, epsbuf, rhsbuf);  // aw vs z
        // dt v1 = velocity block of the linearized right-hand side
        {
            ops.apply_A(u1.at(n), ws.ta, ws.tsum);
            ops.apply_Binv(ws.ta, rhsbuf);
            ops.apply_Q(u1.at(n), ws.tq);
            for (std::size_t k = 0; k < rhsbuf.size(); ++k) rhsbuf[k] = -rhsbuf[k] - ws.tq[k];
            // add the linearized source terms to the velocity block
            wave2d::forward_rhs(ops, base.at(n), src, 2 * n, ws, ws.bsrc);
            for (int k = 0; k < gr.nvx(); ++k)
                rhsbuf[static_cast<std::size_t>(k)] -=
                    lc.rr_vx[static_cast<std::size_t>(k)] * ws.bsrc[static_cast<std::size_t>(k)];
            for (int k = 0; k < gr.nvz(); ++k)
                rhsbuf[static_cast<std::size_t>(ops.lay.vz0() + k)] -=
                    lc.rr_vz[static_cast<std::size_t>(k)] * ws.bsrc[static_cast<std::size_t>(ops.lay.vz0() + k)];
            detail::velocity_dot_centers(gr, ops.lay, rhsbuf.data(), w.at(n).data(), a1w.data());
            // eps(v1)
            ops.eps.apply(u1.at(n).data(), epsbuf.data());
            std::copy_n(epsbuf.data(), gr.nc(), cs1.exx.data());
            std::copy_n(epsbuf.data() + gr.nc(), gr.nc(), cs1.ezz.data());
            std::copy_n(epsbuf.data() + 2 * gr.nc(), gr.nn(), cs1.exz_n.data());
        }
        // base strain against w for the Gamma/Upsilon parts
        detail::CenterStrain& csw = csb;  // strain identical; aw recomputed below

        for (int i = 0; i < gr.nx; ++i)
        for (int j = 0; j < gr.nz; ++j) {
            const int k = gr.ic(i, j);
            const auto kk = static_cast<std::size_t>(k);
            // p1*: Sigma rows in the z-fields
            SigmaFields fz;
            fz.F0 = csb.exx[kk] * ctz.p0xx[kk] + csb.ezz[kk] * ctz.p0zz[kk] +
                    2.0 * detail::corner_product_mean(gr, csb.exz_n.data(), ctz.p0xz_n.data(), i, j);
            fz.FS = csb.exx[kk] * ctz.sgxx[kk] + csb.ezz[kk] * ctz.sgzz[kk] +
                    2.0 * detail::corner_product_mean(gr, csb.exz_n.data(), ctz.sgxz_n.data(), i, j);
            fz.t0 = ctz.p0xx[kk] + ctz.p0zz[kk];
            fz.tS = ctz.sgxx[kk] + ctz.sgzz[kk];
            fz.d = csb.exx[kk] + csb.ezz[kk];
            fz.aw = csb.aw[kk];
            const auto rz = sigma_rows(pd0[kk], 2, fz);

            // Gamma part: base and u1 against w
            GammaFields fg;
            fg.base.F0 = csw.exx[kk] * ctw.p0xx[kk] + csw.ezz[kk] * ctw.p0zz[kk] +
                         2.0 * detail::corner_product_mean(gr, csw.exz_n.data(), ctw.p0xz_n.data(), i, j);
            fg.base.FS = csw.exx[kk] * ctw.sgxx[kk] + csw.ezz[kk] * ctw.sgzz[kk] +
                         2.0 * detail::corner_product_mean(gr, csw.exz_n.data(), ctw.sgxz_n.data(), i, j);
            fg.base.t0 = ctw.p0xx[kk] + ctw.p0zz[kk];
            fg.base.tS = ctw.sgxx[kk] + ctw.sgzz[kk];
            fg.base.d = csw.exx[kk] + csw.ezz[kk];
            fg.G0 = cs1.exx[kk] * ctw.p0xx[kk] + cs1.ezz[kk] * ctw.p0zz[kk] +
                    2.0 * detail::corner_product_mean(gr, cs1.exz_n.data(), ctw.p0xz_n.data(), i, j);
            fg.GS = cs1.exx[kk] * ctw.sgxx[kk] + cs1.ezz[kk] * ctw.sgzz[kk] +
                    2.0 * detail::corner_product_mean(gr, cs1.exz_n.data(), ctw.sgxz_n.data(), i, j);
            fg.d1 = cs1.exx[kk] + cs1.ezz[kk];
            fg.a1w = a1w[kk];
            const auto rg = gamma_rows(pdd[kk], 2, fg);

            // Upsilon part: base against w
            const auto ru = upsilon_rows(pdd[kk], 2, fg.base);

            for (int c = 0; c < 5; ++c) {
                out.p1.component(c)[kk] += wt * rz[static_cast<std::size_t>(c)];
                out.p2.component(c)[kk] += wt * rg[static_cast<std::size_t>(c)];
                out.upsilon.component(c)[kk] += wt * ru[static_cast<std::size_t>(c)];
            }
        }
    }
    return out;
}

inline GradientField phi_second_adjoint(const DiscreteOperators& ops, const ParameterDirField& d,
                                        const AdjointData& g, const RecordedWavefield& base,
                                        const PointSource* src, double dt, int nt) {
    return phi_second_adjoint_parts(ops, d, g, base, src, dt, nt).total();
}

}  // namespace viscoadjoint::fwi
