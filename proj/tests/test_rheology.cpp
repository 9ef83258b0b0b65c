#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <random>

#include "viscoadjoint/rheology.hpp"

using namespace viscoadjoint;
using namespace viscoadjoint::rheology;

namespace {

double rel_err(double got, double want) {
    return std::abs(got - want) / std::max(std::abs(want), 1e-300);
}

double rel_err(const SymTensor& got, const SymTensor& want) {
    return (got - want).norm() / std::max(want.norm(), 1e-300);
}

double rel_err_cell(const StateCell& got, const StateCell& want) {
    StateCell d = got;
    d.axpy(-1.0, want);
    return d.norm() / std::max(want.norm(), 1e-300);
}

/// Random (m,p) in the invertibility region for the given dimension.
IsotropicMap random_admissible(int dim, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    IsotropicMap c;
    c.dim = dim;
    c.m = 0.5 + 1.5 * u(rng);
    c.p = (dim == 3 ? 4.0 * c.m / 3.0 : c.m) + 0.3 + 2.0 * u(rng);
    return c;
}

/// Dense matrix of C(m,p) on the weighted symmetric-component basis.
Eigen::MatrixXd map_matrix(const IsotropicMap& c) {
    const int n = c.dim * (c.dim + 1) / 2;
    Eigen::MatrixXd A(n, n);
    for (int j = 0; j < n; ++j) {
        SymTensor e(c.dim);
        e[j] = 1.0;
        SymTensor y = apply_isotropic_map(c, e);
        for (int i = 0; i < n; ++i) A(i, j) = y[i];
    }
    return A;
}

ParameterPoint test_point() { return {1.1, 1.0, 0.9, 3.1, 1.1}; }

StateCell random_cell(int dim, int L, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    StateCell c(dim, L);
    for (int i = 0; i < dim; ++i) c.v[static_cast<std::size_t>(i)] = u(rng);
    for (int l = 0; l <= L; ++l) c.psi[static_cast<std::size_t>(l)] = SymTensor::random(dim, rng);
    return c;
}

StateCell fd_B(const ParameterPoint& pt, double alpha, const ParameterDir& d, const StateCell& w,
               double h) {
    auto at = [&](double s) {
        ParameterPoint q{pt.rho + s * d.rho, pt.vS + s * d.vS, pt.tauS + s * d.tauS,
                         pt.vP + s * d.vP, pt.tauP + s * d.tauP};
        Moduli m = moduli_from_params(q, alpha);
        return apply_B_point(m, q.tauS, q.tauP, q.rho, w);
    };
    StateCell r = at(h);
    r.axpy(-1.0, at(-h));
    StateCell out(w.dim, w.L);
    out.axpy(1.0 / (2.0 * h), r);
    return out;
}

StateCell fd_Vprime(const ParameterPoint& pt, double alpha, const ParameterDir& dfix,
                    const ParameterDir& dmove, const StateCell& w, double h) {
    auto at = [&](double s) {
        ParameterPoint q{pt.rho + s * dmove.rho, pt.vS + s * dmove.vS, pt.tauS + s * dmove.tauS,
                         pt.vP + s * dmove.vP, pt.tauP + s * dmove.tauP};
        return apply_V_prime_point(q, alpha, dfix, w);
    };
    StateCell r = at(h);
    r.axpy(-1.0, at(-h));
    StateCell out(w.dim, w.L);
    out.axpy(1.0 / (2.0 * h), r);
    return out;
}

}  // namespace

TEST_CASE("isotropic map action") {
    SymTensor I3 = SymTensor::identity(3);
    SymTensor y = apply_isotropic_map({1.0, 3.0, 3}, I3);
    CHECK(rel_err(y, 5.0 * I3) < 1e-15);

    SymTensor z(3);
    CHECK(apply_isotropic_map({0.7, 2.9, 3}, z).norm() == 0.0);

    SymTensor d(3);
    d.set(0, 0, 1.0);
    SymTensor w = apply_isotropic_map({0.5, 2.0, 3}, d);
    CHECK(rel_err(w.at(0, 0), 2.0) < 1e-15);
    CHECK(rel_err(w.at(1, 1), 1.0) < 1e-15);
    CHECK(rel_err(w.at(2, 2), 1.0) < 1e-15);
    CHECK(std::abs(w.at(0, 1)) == 0.0);

    double bad[9] = {1, 2, 0, 2.1, 1, 0, 0, 0, 1};
    CHECK_THROWS_AS(from_dense(3, bad), std::invalid_argument);

    SymTensor m2(2);
    CHECK_THROWS_AS(apply_isotropic_map({1.0, 3.0, 3}, m2), std::invalid_argument);
}

TEST_CASE("isotropic map inverse") {
    IsotropicMap inv = invert_isotropic_map({1.0, 3.0, 3});
    CHECK(rel_err(inv.m, 0.25) < 1e-15);
    CHECK(rel_err(inv.p, 0.4) < 1e-15);

    std::mt19937_64 rng(101);
    for (int t = 0; t < 10; ++t) {
        SymTensor M = SymTensor::random(3, rng);
        SymTensor back = apply_isotropic_map(inv, apply_isotropic_map({1.0, 3.0, 3}, M));
        CHECK(rel_err(back, M) < 1e-13);
    }

    // C~(m,p) I = I / (3p-4m), brute-force composition with C I = (3p-4m) I
    for (int t = 0; t < 10; ++t) {
        IsotropicMap c = random_admissible(3, rng);
        SymTensor I3 = SymTensor::identity(3);
        SymTensor lhs = apply_isotropic_map(invert_isotropic_map(c), I3);
        CHECK(rel_err(lhs, (1.0 / (3.0 * c.p - 4.0 * c.m)) * I3) < 1e-13);
    }

    // 2D closed form at (1,3): C~M = 0.5 M - 0.125 tr(M) I
    IsotropicMap inv2 = invert_isotropic_map({1.0, 3.0, 2});
    for (int t = 0; t < 10; ++t) {
        SymTensor M = SymTensor::random(2, rng);
        SymTensor want = 0.5 * M;
        const double c = -0.125 * M.trace();
        want[0] += c;
        want[1] += c;
        CHECK(rel_err(apply_isotropic_map(inv2, M), want) < 1e-14);
        SymTensor back = apply_isotropic_map(inv2, apply_isotropic_map({1.0, 3.0, 2}, M));
        CHECK(rel_err(back, M) < 1e-13);
    }

    CHECK_THROWS_AS(invert_isotropic_map({1.0, 4.0 / 3.0, 3}), std::domain_error);
    CHECK_THROWS_AS(invert_isotropic_map({1.0, 1.0, 2}), std::domain_error);
}

TEST_CASE("round trips both dims, random points") {
    std::mt19937_64 rng(7);
    for (int dim : {2, 3}) {
        for (int t = 0; t < 200; ++t) {
            IsotropicMap c = random_admissible(dim, rng);
            IsotropicMap ci = invert_isotropic_map(c);
            SymTensor M = SymTensor::random(dim, rng);
            CHECK(rel_err(apply_isotropic_map(ci, apply_isotropic_map(c, M)), M) < 1e-13);
            CHECK(rel_err(apply_isotropic_map(c, apply_isotropic_map(ci, M)), M) < 1e-13);
        }
    }
}

TEST_CASE("self-adjointness of C") {
    std::mt19937_64 rng(11);
    for (int t = 0; t < 1000; ++t) {
        const int dim = (t % 2) ? 2 : 3;
        IsotropicMap c = random_admissible(dim, rng);
        SymTensor M = SymTensor::random(dim, rng), N = SymTensor::random(dim, rng);
        const double a = apply_isotropic_map(c, M).dot(N);
        const double b = M.dot(apply_isotropic_map(c, N));
        CHECK(std::abs(a - b) <= 1e-13 * std::max({std::abs(a), std::abs(b), 1.0}));
    }
}

TEST_CASE("eigen bounds and coercivity") {
    auto [lo, hi] = eigen_bounds({1.0, 3.0, 3});
    CHECK(lo == 2.0);
    CHECK(hi == 5.0);

    // independent oracle: eigen-decompose the 6x6 matrix on the weighted basis
    Eigen::MatrixXd A = map_matrix({1.0, 3.0, 3});
    CHECK((A - A.transpose()).norm() < 1e-14);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
    CHECK(rel_err(es.eigenvalues().minCoeff(), 2.0) < 1e-13);
    CHECK(rel_err(es.eigenvalues().maxCoeff(), 5.0) < 1e-13);

    // I is the trace eigenvector; deviatoric M gives 2m
    SymTensor I3 = SymTensor::identity(3);
    CHECK(rel_err(apply_isotropic_map({1.0, 3.0, 3}, I3).dot(I3) / I3.dot(I3), 5.0) < 1e-15);
    SymTensor dev(3);
    dev.set(0, 0, 1.0);
    dev.set(1, 1, -1.0);
    dev.set(0, 2, 0.4);
    CHECK(rel_err(apply_isotropic_map({1.0, 3.0, 3}, dev).dot(dev) / dev.dot(dev), 2.0) < 1e-14);

    std::mt19937_64 rng(13);
    for (int dim : {2, 3}) {
        for (int t = 0; t < 1000; ++t) {
            IsotropicMap c = random_admissible(dim, rng);
            auto [l, h] = eigen_bounds(c);
            SymTensor M = SymTensor::random(dim, rng);
            const double q = apply_isotropic_map(c, M).dot(M) / M.dot(M);
            CHECK(q >= l - 1e-12 * h);
            CHECK(q <= h + 1e-12 * h);
        }
    }
}

TEST_CASE("closure under composition") {
    std::mt19937_64 rng(17);
    for (int dim : {2, 3}) {
        for (int t = 0; t < 50; ++t) {
            IsotropicMap a = random_admissible(dim, rng);
            IsotropicMap b = random_admissible(dim, rng);
            IsotropicMap c = compose(a, b);
            SymTensor M = SymTensor::random(dim, rng);
            SymTensor want = apply_isotropic_map(a, apply_isotropic_map(b, M));
            CHECK(rel_err(apply_isotropic_map(c, M), want) < 1e-14);
        }
    }
}

TEST_CASE("derivative of the inverse map") {
    SymTensor I3 = SymTensor::identity(3);
    // d/dm [1/(3p-4m)] = 4/(3p-4m)^2 = 4/25 at (1,3)
    SymTensor got = apply_Cinv_derivative(1.0, 3.0, 3, 1.0, 0.0, I3);
    CHECK(rel_err(got, 0.16 * I3) < 1e-13);

    CHECK(apply_Cinv_derivative(1.0, 3.0, 3, 0.0, 0.0, I3).norm() == 0.0);

    std::mt19937_64 rng(19);
    for (int dim : {2, 3}) {
        for (int t = 0; t < 100; ++t) {
            IsotropicMap c = random_admissible(dim, rng);
            std::uniform_real_distribution<double> u(-1.0, 1.0);
            const double mh = u(rng), ph = u(rng);
            SymTensor M = SymTensor::random(dim, rng);
            const double h = 1e-4;
            SymTensor fd =
                (1.0 / (2.0 * h)) *
                (apply_isotropic_map(invert_isotropic_map({c.m + h * mh, c.p + h * ph, dim}), M) -
                 apply_isotropic_map(invert_isotropic_map({c.m - h * mh, c.p - h * ph, dim}), M));
            SymTensor an = apply_Cinv_derivative(c.m, c.p, dim, mh, ph, M);
            CHECK(rel_err(an, fd) < 1e-6);
        }
    }

    // remainder order: halving h divides the FD error by 4.0 +- 0.3
    IsotropicMap c{1.3, 3.7, 3};
    SymTensor M = SymTensor::random(3, rng);
    auto fd_err = [&](double h) {
        SymTensor fd =
            (1.0 / (2.0 * h)) *
            (apply_isotropic_map(invert_isotropic_map({c.m + h, c.p + 0.5 * h, 3}), M) -
             apply_isotropic_map(invert_isotropic_map({c.m - h, c.p - 0.5 * h, 3}), M));
        return (fd - apply_Cinv_derivative(c.m, c.p, 3, 1.0, 0.5, M)).norm();
    };
    const double r = fd_err(2e-3) / fd_err(1e-3);
    CHECK(r > 3.7);
    CHECK(r < 4.3);
}

TEST_CASE("second derivative of the inverse map") {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int dim : {2, 3}) {
        for (int t = 0; t < 100; ++t) {
            IsotropicMap c = random_admissible(dim, rng);
            const double m1 = 0.3 * u(rng), p1 = 0.3 * u(rng), m2 = 0.3 * u(rng), p2 = 0.3 * u(rng);
            SymTensor M = SymTensor::random(dim, rng);

            SymTensor ab = apply_Cinv_second(c.m, c.p, dim, m1, p1, m2, p2, M);
            SymTensor ba = apply_Cinv_second(c.m, c.p, dim, m2, p2, m1, p1, M);
            CHECK(rel_err(ab, ba) < 1e-15);

            const double h = 1e-3;
            SymTensor fd = (1.0 / (2.0 * h)) *
                           (apply_Cinv_derivative(c.m + h * m1, c.p + h * p1, dim, m2, p2, M) -
                            apply_Cinv_derivative(c.m - h * m1, c.p - h * p1, dim, m2, p2, M));
            CHECK(rel_err(ab, fd) < 1e-5);
        }
    }
    SymTensor M = SymTensor::random(3, rng);
    CHECK(apply_Cinv_second(1.0, 3.0, 3, 0.0, 0.0, 1.0, 1.0, M).norm() == 0.0);
}

TEST_CASE("attenuation sum") {
    double tau1[1] = {1.0};
    CHECK(rel_err(compute_alpha(1, tau1, 1.0), 0.5) < 1e-15);
    double tau2[2] = {1.0, 1.0};
    CHECK(rel_err(compute_alpha(2, tau2, 1.0), 1.0) < 1e-15);
    double tau10[1] = {10.0};
    CHECK(rel_err(compute_alpha(1, tau10, 1.0), 100.0 / 101.0) < 1e-15);

    double bad[1] = {-1.0};
    CHECK_THROWS_AS(compute_alpha(1, bad, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(compute_alpha(1, tau1, 0.0), std::invalid_argument);

    RelaxationSpec r = make_relaxation(2, {0.5, 2.0, 0, 0, 0}, 1.5);
    CHECK(r.alpha > 0.0);
    CHECK(r.alpha < 2.0);
}

TEST_CASE("moduli from parameters") {
    ParameterPoint a{1.0, 1.0, 0.5, 3.0, 0.0};
    CHECK(rel_err(moduli_from_params(a, 0.5).pi0, 9.0) < 1e-15);

    ParameterPoint b{2.0, 1.0, 0.5, 3.0, 0.2};
    CHECK(rel_err(moduli_from_params(b, 0.5).pi0, 18.0 / 1.1) < 1e-14);

    std::mt19937_64 rng(29);
    std::uniform_real_distribution<double> u(0.1, 2.0);
    for (int t = 0; t < 100; ++t) {
        ParameterPoint p{u(rng), u(rng), u(rng), u(rng) + 2.0, u(rng)};
        const double alpha = 0.5 * u(rng);
        Moduli m = moduli_from_params(p, alpha);
        CHECK(rel_err(p.vP * p.vP, (m.pi0 / p.rho) * (1.0 + p.tauP * alpha)) <= 1e-14);
        CHECK(rel_err(p.vS * p.vS, (m.mu0 / p.rho) * (1.0 + p.tauS * alpha)) <= 1e-14);
    }
}

TEST_CASE("perturbation coefficients") {
    ParameterPoint pt = test_point();
    const double alpha = 0.5;

    PerturbationCoeffs z = perturbation_coeffs(pt, alpha, {});
    CHECK(z.mu_tilde == 0.0);
    CHECK(z.pi_tilde == 0.0);
    CHECK(z.mu_hat == 0.0);
    CHECK(z.pi_hat == 0.0);

    PerturbationCoeffs rho_only = perturbation_coeffs(pt, alpha, {1.0, 0, 0, 0, 0});
    CHECK(rho_only.mu_tilde == 0.0);
    CHECK(rho_only.pi_hat == 0.0);

    ParameterPoint q{1.0, 2.0, 1.0, 3.0, 1.0};
    PerturbationCoeffs c = perturbation_coeffs(q, 0.5, {0, 1.0, 0, 0, 0});
    CHECK(rel_err(c.mu_tilde, 4.0 / 1.5) < 1e-15);
    CHECK(rel_err(c.mu_hat, 4.0 / 1.5) < 1e-15);

    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int t = 0; t < 200; ++t) {
        ParameterDir d{u(rng), u(rng), u(rng), u(rng), u(rng)};
        PerturbationCoeffs a = perturbation_coeffs(pt, alpha, d);
        PerturbationCoeffs b = perturbation_coeffs_moduli(pt, alpha, d);
        CHECK(rel_err(a.mu_tilde, b.mu_tilde) <= 1e-14);
        CHECK(rel_err(a.pi_tilde, b.pi_tilde) <= 1e-14);
        CHECK(rel_err(a.mu_hat, b.mu_hat) <= 1e-14);
        CHECK(rel_err(a.pi_hat, b.pi_hat) <= 1e-14);
    }
}

TEST_CASE("parameter domain report") {
    ParameterBounds b;
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
    const double alpha = 0.5;

    ParameterPoint mid{1.0, 1.0, 1.0, 3.0, 1.0};
    AdmissibilityReport r3 = check_parameter_domain(mid, b, alpha, 3);
    CHECK(r3.admissible);
    AdmissibilityReport r2 = check_parameter_domain(mid, b, alpha, 2);
    CHECK(r2.admissible);

    // point bounds rho=1, vS=1, vP=3, tauS=tauP=1: left side 4/3 < 9
    ParameterBounds pb;
    pb.rho_min = pb.rho_max = 1.0;
    pb.vS_min = pb.vS_max = 1.0;
    pb.tauS_min = pb.tauS_max = 1.0;
    pb.vP_min = pb.vP_max = 3.0;
    pb.tauP_min = pb.tauP_max = 1.0;
    AdmissibilityReport rp = check_parameter_domain({1.0, 1.0, 1.0, 3.0, 1.0}, pb, alpha, 3);
    CHECK(rel_err(rp.composite_lhs, 4.0 / 3.0) < 1e-15);
    CHECK(rel_err(rp.composite_rhs, 9.0) < 1e-15);
    CHECK(rp.admissible);

    // boundary case: vS_max chosen so the two sides coincide -> inadmissible
    ParameterBounds eq = pb;
    eq.vS_max = eq.vP_min / std::sqrt(4.0 / 3.0);
    eq.vS_min = 0.5;
    AdmissibilityReport re = check_parameter_domain({1.0, 1.0, 1.0, 3.0, 1.0}, eq, alpha, 3);
    CHECK(!re.composite_ok);
    CHECK(!re.admissible);

    ParameterPoint out = mid;
    out.vP = 10.0;
    CHECK(!check_parameter_domain(out, b, alpha, 3).in_box[3]);
}

TEST_CASE("B point action") {
    std::mt19937_64 rng(37);
    ParameterPoint pt = test_point();
    const double alpha = 0.5;
    Moduli mod = moduli_from_params(pt, alpha);
    RelaxationSpec relax = make_relaxation(2, {0.7, 1.3, 0, 0, 0}, 1.0);

    for (int dim : {2, 3}) {
        StateCell w = random_cell(dim, 2, rng);
        StateCell only_v = w;
        for (int l = 0; l <= 2; ++l) only_v.psi[static_cast<std::size_t>(l)] = SymTensor(dim);
        StateCell bv = apply_B_point(mod, pt.tauS, pt.tauP, pt.rho, only_v);
        for (int i = 0; i < dim; ++i)
            CHECK(rel_err(bv.v[static_cast<std::size_t>(i)], pt.rho * only_v.v[static_cast<std::size_t>(i)]) < 1e-15);
        for (int l = 0; l <= 2; ++l) CHECK(bv.psi[static_cast<std::size_t>(l)].norm() == 0.0);

        // commutation B Q = Q B
        StateCell bq = apply_B_point(mod, pt.tauS, pt.tauP, pt.rho, apply_Q_point(relax, w));
        StateCell qb = apply_Q_point(relax, apply_B_point(mod, pt.tauS, pt.tauP, pt.rho, w));
        CHECK(rel_err_cell(bq, qb) <= 1e-14);

        // B^{-1} B = id
        StateCell round = apply_Binv_point(mod, pt.tauS, pt.tauP, pt.rho,
                                           apply_B_point(mod, pt.tauS, pt.tauP, pt.rho, w));
        CHECK(rel_err_cell(round, w) <= 1e-13);
    }
}

TEST_CASE("V prime point matches finite differences") {
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    ParameterPoint pt = test_point();
    const double alpha = 0.5;

    for (int dim : {2, 3}) {
        StateCell w = random_cell(dim, 1, rng);
        CHECK(apply_V_prime_point(pt, alpha, {}, w).norm() == 0.0);

        for (int t = 0; t < 25; ++t) {
            ParameterDir d{0.3 * u(rng), 0.2 * u(rng), 0.2 * u(rng), 0.3 * u(rng), 0.2 * u(rng)};
            StateCell got = apply_V_prime_point(pt, alpha, d, w);
            StateCell fd = fd_B(pt, alpha, d, w, 1e-4);
            CHECK(rel_err_cell(got, fd) < 1e-6);
        }

        // pure density direction: stress blocks equal -(1/rho^2) C~ psi
        ParameterDir drho{1.0, 0, 0, 0, 0};
        StateCell got = apply_V_prime_point(pt, alpha, drho, w);
        Moduli mod = moduli_from_params(pt, alpha);
        IsotropicMap c0 = invert_isotropic_map({mod.mu, mod.pi, dim});
        SymTensor want = (-1.0 / (pt.rho * pt.rho)) * apply_isotropic_map(c0, w.psi[0]);
        CHECK(rel_err(got.psi[0], want) < 1e-14);
    }
}

TEST_CASE("V second point: symmetry, bilinearity, finite differences") {
    std::mt19937_64 rng(43);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    ParameterPoint pt = test_point();
    const double alpha = 0.5;

    for (int dim : {2, 3}) {
        StateCell w = random_cell(dim, 1, rng);
        ParameterDir zero{};
        ParameterDir d1{0.2 * u(rng), 0.3 * u(rng), 0.2 * u(rng), 0.3 * u(rng), 0.2 * u(rng)};
        CHECK(apply_V_second_point(pt, alpha, zero, d1, w).norm() == 0.0);
        CHECK(apply_V_second_point(pt, alpha, d1, zero, w).norm() == 0.0);

        for (int t = 0; t < 25; ++t) {
            ParameterDir a{0.1 * u(rng), 0.1 * u(rng), 0.1 * u(rng), 0.1 * u(rng), 0.1 * u(rng)};
            ParameterDir b{0.1 * u(rng), 0.1 * u(rng), 0.1 * u(rng), 0.1 * u(rng), 0.1 * u(rng)};
            StateCell ab = apply_V_second_point(pt, alpha, a, b, w);
            StateCell ba = apply_V_second_point(pt, alpha, b, a, w);
            CHECK(rel_err_cell(ab, ba) < 1e-13);
            for (int i = 0; i < dim; ++i) CHECK(ab.v[static_cast<std::size_t>(i)] == 0.0);

            StateCell fd = fd_Vprime(pt, alpha, b, a, w, 1e-3);
            CHECK(rel_err_cell(ab, fd) < 1e-5);
        }
    }
}
