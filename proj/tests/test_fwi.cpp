#include <catch2/catch_amalgamated.hpp>

#include <numbers>
#include <random>

#include "viscoadjoint/fwi.hpp"

using namespace viscoadjoint;
using namespace viscoadjoint::fwi;
using namespace viscoadjoint::wave2d;

namespace {

rheology::ParameterBounds test_bounds() {
    rheology::ParameterBounds b;
    b.rho_min = 0.8;
    b.rho_max = 1.2;
    b.vS_min = 0.9;
    b.vS_max = 1.1;
    b.tauS_min = 0.8;
    b.tauS_max = 1.2;
    b.vP_min = 2.7;
    b.vP_max = 3.3;
    b.tauP_min = 0.8;
    b.tauP_max = 1.2;
    return b;
}

rheology::RelaxationSpec test_relax(int L = 1) {
    return rheology::make_relaxation(L, {1.0, 0.7, 1.3, 0, 0}, 1.0);
}

ParameterDirField smooth_direction(const Grid2D& g, unsigned seed, double amp = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 2.0 * std::numbers::pi);
    std::uniform_int_distribution<int> mode(1, 3);
    ParameterDirField d(g);
    const rheology::ParameterBounds b = test_bounds();
    const double widths[5] = {b.rho_max - b.rho_min, b.vS_max - b.vS_min, b.tauS_max - b.tauS_min,
                              b.vP_max - b.vP_min, b.tauP_max - b.tauP_min};
    for (int k = 0; k < 5; ++k) {
        const double ph1 = u(rng), ph2 = u(rng);
        const int mx = mode(rng), mz = mode(rng);
        auto& c = d.component(k);
        for (int i = 0; i < g.nx; ++i)
            for (int j = 0; j < g.nz; ++j) {
                const double x = (i + 0.5) / g.nx, z = (j + 0.5) / g.nz;
                c[static_cast<std::size_t>(g.ic(i, j))] =
                    amp * widths[k] * std::sin(2.0 * std::numbers::pi * mx * x + ph1) *
                    std::sin(2.0 * std::numbers::pi * mz * z + ph2);
            }
    }
    return d;
}

struct Setup {
    Grid2D g;
    ParameterField field;
    rheology::RelaxationSpec relax;
    DiscreteOperators ops;
    PointSource src;
    double dt;
    int nt;
};

Setup make_setup(int n, double T, double f0 = 6.0, int L = 1) {
    Setup s{Grid2D(n, n, 1.0 / n), ParameterField{}, test_relax(L), DiscreteOperators{},
            PointSource{}, 0.0, 0};
    s.field = constant_field(s.g, {1.0, 1.0, 1.0, 3.0, 1.0}, test_bounds());
    s.ops = build_operators(s.g, s.field, s.relax);
    s.nt = static_cast<int>(std::ceil(T / (0.85 * s.ops.cfl_dt)));
    s.dt = T / s.nt;
    s.src = make_point_source(s.g, s.ops.lay, n / 2, n / 2, Component::vz, f0, s.dt);
    return s;
}

/// Smooth velocity-only adjoint data.
AdjointData smooth_data(const Setup& s, unsigned seed, bool with_tensors = false) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 2.0 * std::numbers::pi);
    const double p1 = u(rng), p2 = u(rng), p3 = u(rng);
    AdjointData g;
    g.nt = s.nt;
    g.vel.assign(static_cast<std::size_t>(s.nt) + 1,
                 std::vector<double>(static_cast<std::size_t>(s.g.nvel()), 0.0));
    for (int n = 0; n <= s.nt; ++n) {
        const double t = n * s.dt;
        auto& v = g.vel[static_cast<std::size_t>(n)];
        for (int i = 1; i <= s.g.nx - 1; ++i)
            for (int j = 0; j < s.g.nz; ++j) {
                const double x = static_cast<double>(i) / s.g.nx, z = (j + 0.5) / s.g.nz;
                v[static_cast<std::size_t>(s.g.ivx(i, j))] =
                    std::sin(2.0 * std::numbers::pi * (x + 1.5 * t) + p1) * std::cos(std::numbers::pi * z + p2);
            }
        for (int i = 0; i < s.g.nx; ++i)
            for (int j = 1; j <= s.g.nz - 1; ++j) {
                const double x = (i + 0.5) / s.g.nx, z = static_cast<double>(j) / s.g.nz;
                v[static_cast<std::size_t>(s.g.nvx() + s.g.ivz(i, j))] =
                    std::cos(2.0 * std::numbers::pi * (z - t) + p3) * std::sin(std::numbers::pi * x);
            }
    }
    if (with_tensors) {
        g.tensors.assign(static_cast<std::size_t>(s.nt) + 1,
                         std::vector<double>(static_cast<std::size_t>((s.ops.L() + 1) * s.g.ntensor()), 0.0));
        for (int n = 0; n <= s.nt; ++n) {
            const double t = n * s.dt;
            auto& tv = g.tensors[static_cast<std::size_t>(n)];
            for (int l = 0; l <= s.ops.L(); ++l)
                for (int i = 0; i < s.g.nx; ++i)
                    for (int j = 0; j < s.g.nz; ++j) {
                        const double x = (i + 0.5) / s.g.nx, z = (j + 0.5) / s.g.nz;
                        tv[static_cast<std::size_t>(l * s.g.ntensor() + s.g.ic(i, j))] =
                            std::sin(2.0 * std::numbers::pi * (x + z) + 0.7 * l + t);
                    }
        }
    }
    return g;
}

/// Space-time pairing of a recorded field against adjoint data.
double pair_field_data(const Setup& s, const RecordedWavefield& u, const AdjointData& g) {
    const Grid2D& gr = s.g;
    const StateLayout& lay = s.ops.lay;
    const double h2 = gr.h * gr.h;
    double total = 0.0;
    for (int n = 0; n <= s.nt; ++n) {
        const double wt = trapz_weight(n, s.nt, s.dt);
        const auto& st = u.at(n);
        double acc = 0.0;
        if (!g.vel.empty()) {
            const auto& v = g.vel[static_cast<std::size_t>(n)];
            for (int k = 0; k < gr.nvel(); ++k) acc += st[static_cast<std::size_t>(k)] * v[static_cast<std::size_t>(k)];
        }
        if (!g.tensors.empty()) {
            const auto& tv = g.tensors[static_cast<std::size_t>(n)];
            for (int l = 0; l <= s.ops.L(); ++l) {
                const int b0 = lay.block0(l), t0 = l * gr.ntensor();
                for (int k = 0; k < 2 * gr.nc(); ++k)
                    acc += st[static_cast<std::size_t>(b0 + k)] * tv[static_cast<std::size_t>(t0 + k)];
                for (int k = 0; k < gr.nn(); ++k)
                    acc += 2.0 * st[static_cast<std::size_t>(b0 + 2 * gr.nc() + k)] *
                           tv[static_cast<std::size_t>(t0 + 2 * gr.nc() + k)];
            }
        }
        total += wt * h2 * acc;
    }
    return total;
}

double field_st_norm(const Setup& s, const RecordedWavefield& u) {
    double t = 0.0;
    for (int n = 0; n <= s.nt; ++n)
        t += trapz_weight(n, s.nt, s.dt) * state_dot(s.ops.lay, u.at(n), u.at(n));
    return std::sqrt(t);
}

double data_st_norm(const Setup& s, const AdjointData& g) {
    const Grid2D& gr = s.g;
    const double h2 = gr.h * gr.h;
    double t = 0.0;
    for (int n = 0; n <= s.nt; ++n) {
        double acc = 0.0;
        if (!g.vel.empty())
            for (double v : g.vel[static_cast<std::size_t>(n)]) acc += v * v;
        if (!g.tensors.empty()) {
            const auto& tv = g.tensors[static_cast<std::size_t>(n)];
            for (int l = 0; l <= s.ops.L(); ++l) {
                const int t0 = l * gr.ntensor();
                for (int k = 0; k < 2 * gr.nc(); ++k)
                    acc += tv[static_cast<std::size_t>(t0 + k)] * tv[static_cast<std::size_t>(t0 + k)];
                for (int k = 0; k < gr.nn(); ++k)
                    acc += 2.0 * tv[static_cast<std::size_t>(t0 + 2 * gr.nc() + k)] *
                           tv[static_cast<std::size_t>(t0 + 2 * gr.nc() + k)];
            }
        }
        t += trapz_weight(n, s.nt, s.dt) * h2 * acc;
    }
    return std::sqrt(t);
}

}  // namespace

TEST_CASE("pointwise integrand certification against the operator pairings") {
    std::mt19937_64 rng(71);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double alpha = 0.5;
    const int L = 2;

    for (int dim : {2, 3}) {
        for (int trial = 0; trial < 40; ++trial) {
            rheology::ParameterPoint pt{1.0 + 0.2 * u(rng), 1.0 + 0.1 * u(rng), 1.0 + 0.2 * u(rng),
                                        3.0 + 0.3 * u(rng), 1.0 + 0.2 * u(rng)};
            rheology::ParameterDir d1{0.3 * u(rng), 0.2 * u(rng), 0.2 * u(rng), 0.3 * u(rng), 0.2 * u(rng)};
            rheology::ParameterDir d2{0.3 * u(rng), 0.2 * u(rng), 0.2 * u(rng), 0.3 * u(rng), 0.2 * u(rng)};
            const rheology::Moduli mod = rheology::moduli_from_params(pt, alpha);
            const auto lc1 = rheology::perturbation_coeffs(pt, alpha, d1);

            SymTensor E = SymTensor::random(dim, rng), E1 = SymTensor::random(dim, rng);
            rheology::StateCell upq(dim, L), u1pq(dim, L), w(dim, L);
            for (int i = 0; i < dim; ++i) {
                upq.v[static_cast<std::size_t>(i)] = u(rng);
                u1pq.v[static_cast<std::size_t>(i)] = u(rng);
                w.v[static_cast<std::size_t>(i)] = u(rng);
            }
            // u' + Q u blocks: rho C(mu,pi) E on block 0, rho C(tS mu, tP pi) E on memory blocks
            upq.psi[0] = rheology::apply_isotropic_map({mod.mu0, mod.pi0, dim}, E);
            for (int l = 1; l <= L; ++l)
                upq.psi[static_cast<std::size_t>(l)] =
                    rheology::apply_isotropic_map({pt.tauS * mod.mu0, pt.tauP * mod.pi0, dim}, E);
            // u1' + Q u1 blocks add the direction-1 sources
            const double a01 = d1.rho * mod.mu + pt.rho * lc1.mu_tilde;
            const double b01 = d1.rho * mod.pi + pt.rho * lc1.pi_tilde;
            const double al1 = d1.rho * pt.tauS * mod.mu + pt.rho * lc1.mu_hat;
            const double bl1 = d1.rho * pt.tauP * mod.pi + pt.rho * lc1.pi_hat;
            u1pq.psi[0] = rheology::apply_isotropic_map({mod.mu0, mod.pi0, dim}, E1) +
                          rheology::apply_isotropic_map({a01, b01, dim}, E);
            for (int l = 1; l <= L; ++l)
                u1pq.psi[static_cast<std::size_t>(l)] =
                    rheology::apply_isotropic_map({pt.tauS * mod.mu0, pt.tauP * mod.pi0, dim}, E1) +
                    rheology::apply_isotropic_map({al1, bl1, dim}, E);
            for (int l = 0; l <= L; ++l) w.psi[static_cast<std::size_t>(l)] = SymTensor::random(dim, rng);

            SymTensor Sig(dim);
            for (int l = 1; l <= L; ++l) Sig += w.psi[static_cast<std::size_t>(l)];
            SigmaFields fb;
            fb.F0 = E.dot(w.psi[0]);
            fb.FS = E.dot(Sig);
            fb.t0 = w.psi[0].trace();
            fb.tS = Sig.trace();
            fb.d = E.trace();
            double aw = 0.0, a1w = 0.0;
            for (int i = 0; i < dim; ++i) {
                aw += upq.v[static_cast<std::size_t>(i)] * w.v[static_cast<std::size_t>(i)];
                a1w += u1pq.v[static_cast<std::size_t>(i)] * w.v[static_cast<std::size_t>(i)];
            }
            fb.aw = aw;

            const double dir2[5] = {d2.rho, d2.vS, d2.tauS, d2.vP, d2.tauP};

            // Sigma rows vs <V'(p)d2 (u'+Qu), w>
            {
                const double direct = rheology::apply_V_prime_point(pt, alpha, d2, upq).dot(w);
                const auto rows = sigma_rows(point_data(pt, alpha), dim, fb);
                double asm_val = 0.0;
                for (int k = 0; k < 5; ++k) asm_val += rows[static_cast<std::size_t>(k)] * dir2[k];
                CHECK(std::abs(direct - asm_val) <= 1e-12 * std::max(std::abs(direct), 1e-12));
            }
            // Gamma rows vs <V'(p)d2 (u1'+Qu1), w>
            {
                const double direct = rheology::apply_V_prime_point(pt, alpha, d2, u1pq).dot(w);
                GammaFields fg;
                fg.base = fb;
                fg.G0 = E1.dot(w.psi[0]);
                fg.GS = E1.dot(Sig);
                fg.d1 = E1.trace();
                fg.a1w = a1w;
                const auto rows = gamma_rows(point_data(pt, alpha, d1), dim, fg);
                double asm_val = 0.0;
                for (int k = 0; k < 5; ++k) asm_val += rows[static_cast<std::size_t>(k)] * dir2[k];
                CHECK(std::abs(direct - asm_val) <= 1e-12 * std::max(std::abs(direct), 1e-12));
            }
            // Upsilon rows vs <V''(p)[d1,d2] (u'+Qu), w>
            {
                const double direct = rheology::apply_V_second_point(pt, alpha, d1, d2, upq).dot(w);
                const auto rows = upsilon_rows(point_data(pt, alpha, d1), dim, fb);
                double asm_val = 0.0;
                for (int k = 0; k < 5; ++k) asm_val += rows[static_cast<std::size_t>(k)] * dir2[k];
                CHECK(std::abs(direct - asm_val) <= 1e-12 * std::max(std::abs(direct), 1e-12));
            }
        }
    }
}

TEST_CASE("quantity tables") {
    PointData q;
    q.rho = 1.0;
    q.vS = 1.0;
    q.tauS = 1.0;
    q.vP = std::sqrt(4.5);  // mu=1, pi=3 at alpha=0.5, tau=1
    q.alpha = 0.5;
    q.mu = 1.0;
    q.pi = 3.0;

    SECTION("2D Sigma^tau_P at mu=1, pi=3, tau=1") {
        SigmaQuantities s = assemble_sigma(q, 2);
        CHECK(s.tP.c_phi == Catch::Approx(q.alpha / 4.0).epsilon(1e-14));
        CHECK(s.tP.c_sig == Catch::Approx(-0.25).epsilon(1e-14));
    }
    SECTION("Sigma^v trace coefficient per dimension") {
        CHECK(assemble_sigma(q, 3).v.c_phi == Catch::Approx(0.2).epsilon(1e-14));
        CHECK(assemble_sigma(q, 2).v.c_phi == Catch::Approx(0.25).epsilon(1e-14));
        // dim-2 branch denominator is 2(pi - mu)
        CHECK(assemble_sigma(q, 2).v.c_phi == Catch::Approx(1.0 / (2.0 * (q.pi - q.mu))).epsilon(1e-14));
    }
    SECTION("K_pi vanishes when pi~ = mu~") {
        PointData qq = q;
        qq.mu_t = 0.37;
        qq.pi_t = 0.37;
        CHECK(assemble_k2d(qq).K_pi == 0.0);
    }
    SECTION("singular guard") {
        PointData bad = q;
        bad.pi = bad.mu * (1.0 + 1e-9);
        CHECK_THROWS_AS(assemble_sigma(bad, 2), std::domain_error);
    }
    SECTION("gamma rho-row reduction for a pure density direction at rho=1") {
        // Gamma^rho_1 reduces to phi0 + Sigma (mu~ = mu^ = 0), Gamma^rho_2 to 0
        PointData qd = q;
        qd.rho_hat = 1.0;
        GammaQuantities gq = assemble_gamma(qd, 3);
        CHECK(gq.rho1.c_phi == Catch::Approx(1.0).epsilon(1e-14));
        CHECK(gq.rho1.c_sig == Catch::Approx(1.0).epsilon(1e-14));
        CHECK(std::abs(gq.rho2.c_phi) < 1e-15);
        CHECK(std::abs(gq.rho2.c_sig) < 1e-15);
    }
}

TEST_CASE("phi delegates to the forward solver") {
    Setup s = make_setup(16, 0.15);
    RecordedWavefield a = phi(s.ops, s.src, s.dt, s.nt);
    RecordedWavefield b = run_forward(s.ops, s.src, s.dt, s.nt);
    bool same = true;
    for (int n = 0; n <= s.nt && same; ++n) same = (a.at(n) == b.at(n));
    CHECK(same);
}

TEST_CASE("density scaling leaves first arrivals unchanged") {
    Setup s = make_setup(32, 0.25, 8.0);
    ReceiverSet rec;
    rec.cells = {{26, 16}};
    RunOptions opts;
    std::vector<double> seis1, seis2;
    opts.receivers = &rec;
    opts.seismogram = &seis1;
    opts.record = false;
    run_forward(s.ops, s.src, s.dt, s.nt, opts);

    ParameterField f2 = s.field;
    rheology::ParameterBounds b2 = test_bounds();
    b2.rho_min = 1.6;
    b2.rho_max = 2.4;
    f2.bounds = b2;
    for (auto& r : f2.rho) r *= 2.0;
    DiscreteOperators ops2 = build_operators(s.g, f2, s.relax);
    opts.seismogram = &seis2;
    run_forward(ops2, s.src, s.dt, s.nt, opts);

    auto first_arrival = [&](const std::vector<double>& seis, int comp) {
        double m = 0.0;
        for (int n = 0; n <= s.nt; ++n) m = std::max(m, std::abs(seis[static_cast<std::size_t>(2 * n + comp)]));
        for (int n = 0; n <= s.nt; ++n)
            if (std::abs(seis[static_cast<std::size_t>(2 * n + comp)]) > 0.05 * m) return n;
        return s.nt;
    };
    CHECK(std::abs(first_arrival(seis1, 1) - first_arrival(seis2, 1)) <= 1);
}

TEST_CASE("first-order duality") {
    SECTION("gap small at fixed resolution, general data") {
        Setup s = make_setup(32, 0.3);
        RecordedWavefield base = phi(s.ops, s.src, s.dt, s.nt);
        ParameterDirField d = smooth_direction(s.g, 5);
        AdjointData g = smooth_data(s, 17, true);

        RecordedWavefield lin = phi_prime(s.ops, d, base, &s.src, s.dt, s.nt);
        GradientField grad = phi_prime_adjoint(s.ops, g, base, &s.src, s.dt, s.nt);
        const double lhs = pair_field_data(s, lin, g);
        const double rhs = pair_gradient(grad, d);
        const double gap = std::abs(lhs - rhs) / (field_st_norm(s, lin) * data_st_norm(s, g));
        CHECK(gap <= 3e-3);
    }

    SECTION("gap decreases with observed order >= 1") {
        std::vector<double> gaps;
        std::vector<int> res = {24, 36, 54};
        for (int n : res) {
            Setup s = make_setup(n, 0.3, 3.5);
            RecordedWavefield base = phi(s.ops, s.src, s.dt, s.nt);
            ParameterDirField d = smooth_direction(s.g, 5);
            AdjointData g = smooth_data(s, 17, false);
            RecordedWavefield lin = phi_prime(s.ops, d, base, &s.src, s.dt, s.nt);
            GradientField grad = phi_prime_adjoint(s.ops, g, base, &s.src, s.dt, s.nt);
            const double lhs = pair_field_data(s, lin, g);
            const double rhs = pair_gradient(grad, d);
            gaps.push_back(std::abs(lhs - rhs) / (field_st_norm(s, lin) * data_st_norm(s, g)));
        }
        CHECK(gaps[1] < gaps[0]);
        CHECK(gaps[2] < gaps[1]);
        const double order = std::log(gaps[0] / gaps[2]) / std::log(54.0 / 24.0);
        CHECK(order >= 1.0);
    }

    SECTION("zero data gives zero gradient") {
        Setup s = make_setup(16, 0.1);
        RecordedWavefield base = phi(s.ops, s.src, s.dt, s.nt);
        AdjointData g;
        g.nt = s.nt;
        g.vel.assign(static_cast<std::size_t>(s.nt) + 1,
                     std::vector<double>(static_cast<std::size_t>(s.g.nvel()), 0.0));
        GradientField grad = phi_prime_adjoint(s.ops, g, base, &s.src, s.dt, s.nt);
        double m = 0.0;
        for (int k = 0; k < 5; ++k)
            for (double v : grad.component(k)) m = std::max(m, std::abs(v));
        CHECK(m == 0.0);
    }
}

TEST_CASE("second-order duality and split consistency") {
    Setup s = make_setup(24, 0.25, 4.0);
    RecordedWavefield base = phi(s.ops, s.src, s.dt, s.nt);
    ParameterDirField d1 = smooth_direction(s.g, 31);
    ParameterDirField d2 = smooth_direction(s.g, 32);
    AdjointData g = smooth_data(s, 33, false);

    RecordedWavefield lin1 = phi_prime(s.ops, d1, base, &s.src, s.dt, s.nt);
    RecordedWavefield lin2 = phi_prime(s.ops, d2, base, &s.src, s.dt, s.nt);
    auto [cross, vpart] = phi_second(s.ops, d1, d2, base, lin1, lin2, &s.src, s.dt, s.nt);
    SecondAdjointParts parts = phi_second_adjoint_parts(s.ops, d1, g, base, &s.src, s.dt, s.nt);

    const double lhs_cross = pair_field_data(s, cross, g);
    const double lhs_v = pair_field_data(s, vpart, g);
    GradientField p12 = parts.p1;
    p12 += parts.p2;
    const double rhs_cross = pair_gradient(p12, d2);
    const double rhs_v = pair_gradient(parts.upsilon, d2);

    const double scale = (field_st_norm(s, cross) + field_st_norm(s, vpart)) * data_st_norm(s, g);
    CHECK(std::abs(lhs_cross - rhs_cross) / scale <= 1e-2);
    CHECK(std::abs(lhs_v - rhs_v) / scale <= 1e-2);
    CHECK(std::abs((lhs_cross + lhs_v) - (rhs_cross + rhs_v)) / scale <= 1e-2);

    SECTION("duality gap decreases with order >= 1") {
        std::vector<double> gaps;
        std::vector<int> res = {20, 30, 45};
        for (int n : res) {
            Setup sn = make_setup(n, 0.25, 3.0);
            RecordedWavefield b2 = phi(sn.ops, sn.src, sn.dt, sn.nt);
            ParameterDirField e1 = smooth_direction(sn.g, 31);
            ParameterDirField e2 = smooth_direction(sn.g, 32);
            AdjointData gg = smooth_data(sn, 33, false);
            RecordedWavefield l1 = phi_prime(sn.ops, e1, b2, &sn.src, sn.dt, sn.nt);
            RecordedWavefield l2 = phi_prime(sn.ops, e2, b2, &sn.src, sn.dt, sn.nt);
            auto [cr, vp] = phi_second(sn.ops, e1, e2, b2, l1, l2, &sn.src, sn.dt, sn.nt);
            GradientField tot = phi_second_adjoint(sn.ops, e1, gg, b2, &sn.src, sn.dt, sn.nt);
            const double lhs = pair_field_data(sn, cr, gg) + pair_field_data(sn, vp, gg);
            const double rhs = pair_gradient(tot, e2);
            const double sc = (field_st_norm(sn, cr) + field_st_norm(sn, vp)) * data_st_norm(sn, gg);
            gaps.push_back(std::abs(lhs - rhs) / sc);
        }
        CHECK(gaps[2] < gaps[0]);
        const double order = std::log(gaps[0] / gaps[2]) / std::log(45.0 / 20.0);
        CHECK(order >= 1.0);
    }

    SECTION("zero data gives zero") {
        AdjointData gz;
        gz.nt = s.nt;
        gz.vel.assign(static_cast<std::size_t>(s.nt) + 1,
                      std::vector<double>(static_cast<std::size_t>(s.g.nvel()), 0.0));
        GradientField grad = phi_second_adjoint(s.ops, d1, gz, base, &s.src, s.dt, s.nt);
        double m = 0.0;
        for (int k = 0; k < 5; ++k)
            for (double v : grad.component(k)) m = std::max(m, std::abs(v));
        CHECK(m == 0.0);
    }
}

TEST_CASE("misfit gradient matches finite differences") {
    Setup s = make_setup(32, 0.3, 4.0);
    ReceiverSet rec;
    rec.cells = {{8, 8}, {24, 8}, {8, 24}, {24, 24}, {16, 8}};

    // observed data from a perturbed model
    ParameterDirField dtrue = smooth_direction(s.g, 91);
    ParameterField ftrue = perturbed(s.field, dtrue, 0.02);
    std::vector<double> dobs;
    {
        DiscreteOperators opst = build_operators(s.g, ftrue, s.relax);
        RunOptions o;
        o.receivers = &rec;
        o.seismogram = &dobs;
        o.record = false;
        run_forward(opst, s.src, s.dt, s.nt, o);
    }

    auto misfit = [&](const ParameterField& f) {
        DiscreteOperators ops = build_operators(s.g, f, s.relax);
        std::vector<double> seis;
        RunOptions o;
        o.receivers = &rec;
        o.seismogram = &seis;
        o.record = false;
        run_forward(ops, s.src, s.dt, s.nt, o);
        double J = 0.0;
        const int nc = rec.ncomp();
        for (int n = 0; n <= s.nt; ++n) {
            const double wt = trapz_weight(n, s.nt, s.dt);
            for (int c = 0; c < nc; ++c) {
                const double r = seis[static_cast<std::size_t>(n * nc + c)] - dobs[static_cast<std::size_t>(n * nc + c)];
                J += 0.5 * wt * r * r;
            }
        }
        return J;
    };

    // gradient at the base model
    std::vector<double> seis;
    RunOptions o;
    o.receivers = &rec;
    o.seismogram = &seis;
    RecordedWavefield base = run_forward(s.ops, s.src, s.dt, s.nt, o);
    std::vector<double> res(seis.size());
    for (std::size_t k = 0; k < res.size(); ++k) res[k] = seis[k] - dobs[k];
    AdjointData g = adjoint_data_from_residuals(s.ops, rec, res, s.nt);
    GradientField grad = phi_prime_adjoint(s.ops, g, base, &s.src, s.dt, s.nt);

    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 3; ++trial) {
        ParameterDirField d = smooth_direction(s.g, 200 + trial);
        const double got = pair_gradient(grad, d);
        const double h = 1e-3;
        const double fd = (misfit(perturbed(s.field, d, h)) - misfit(perturbed(s.field, d, -h))) / (2.0 * h);
        CHECK(std::abs(got - fd) <= 5e-3 * std::max(std::abs(fd), 1e-12));
    }
}
