#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "viscoadjoint/grid2d.hpp"
#include "viscoadjoint/rheology.hpp"

namespace viscoadjoint::wave2d {

/// Compressed sparse rows; rows are applied as gathers.
struct Csr {
    int rows = 0, cols = 0;
    std::vector<int> rowptr, col;
    std::vector<double> val;

    void apply(const double* x, double* y) const {
        for (int r = 0; r < rows; ++r) {
            double s = 0.0;
            for (int k = rowptr[static_cast<std::size_t>(r)]; k < rowptr[static_cast<std::size_t>(r) + 1]; ++k)
                s += val[static_cast<std::size_t>(k)] * x[col[static_cast<std::size_t>(k)]];
            y[r] = s;
        }
    }
};

struct Triplet {
    int r, c;
    double v;
};

inline Csr csr_from_triplets(int rows, int cols, const std::vector<Triplet>& ts) {
    Csr m;
    m.rows = rows;
    m.cols = cols;
    m.rowptr.assign(static_cast<std::size_t>(rows) + 1, 0);
    for (const auto& t : ts) ++m.rowptr[static_cast<std::size_t>(t.r) + 1];
    for (int r = 0; r < rows; ++r) m.rowptr[static_cast<std::size_t>(r) + 1] += m.rowptr[static_cast<std::size_t>(r)];
    m.col.resize(ts.size());
    m.val.resize(ts.size());
    std::vector<int> fill(m.rowptr.begin(), m.rowptr.end() - 1);
    for (const auto& t : ts) {
        const int k = fill[static_cast<std::size_t>(t.r)]++;
        m.col[static_cast<std::size_t>(k)] = t.c;
        m.val[static_cast<std::size_t>(k)] = t.v;
    }
    return m;
}

/// Material coefficients sampled at every DOF site.  The five raw parameters
/// are interpolated linearly to each site first; all pointwise material
/// formulas are then evaluated at the site, which keeps the discrete
/// parameter-to-operator map exactly differentiable.
struct MaterialData {
    // velocity sites
    std::vector<double> rho_vx, rho_vz;
    // cell centers: C-parameters of B^{-1} blocks and of B blocks
    std::vector<double> c0_m, c0_p, cl_m, cl_p;  // (mu0,pi0), (tauS mu0, tauP pi0)
    std::vector<double> b0_m, b0_p, bl_m, bl_p;  // inverse-map parameters
    // nodes: 2m scalars for the shear component
    std::vector<double> n0_2m, nl_2m, n0_inv2m, nl_inv2m;
    // raw parameters interpolated to sites (needed by linearizations)
    std::vector<rheology::ParameterPoint> node_pt;
    std::vector<rheology::ParameterPoint> center_pt;
};

/// Linear interpolation of a cell field to the staggered sites.
struct SiteInterp {
    const Grid2D& g;

    double at_vx(const std::vector<double>& c, int i, int j) const {  // i in 1..nx-1
        return 0.5 * (c[static_cast<std::size_t>(g.ic(i - 1, j))] + c[static_cast<std::size_t>(g.ic(i, j))]);
    }
    double at_vz(const std::vector<double>& c, int i, int j) const {  // j in vz_j0..nz-1
        if (j == 0) return c[static_cast<std::size_t>(g.ic(i, 0))];
        return 0.5 * (c[static_cast<std::size_t>(g.ic(i, j - 1))] + c[static_cast<std::size_t>(g.ic(i, j))]);
    }
    double at_node(const std::vector<double>& c, int i, int j) const {  // i in 0..nx, j in 0..nz
        double s = 0.0;
        int n = 0;
        for (int di = -1; di <= 0; ++di)
            for (int dj = -1; dj <= 0; ++dj) {
                const int ci = i + di, cj = j + dj;
                if (ci >= 0 && ci < g.nx && cj >= 0 && cj < g.nz) {
                    s += c[static_cast<std::size_t>(g.ic(ci, cj))];
                    ++n;
                }
            }
        return s / n;
    }
};

struct CflError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Assembled discrete operators for one parameter field.
struct DiscreteOperators {
    Grid2D grid;
    StateLayout lay;
    rheology::RelaxationSpec relax;
    MaterialData mat;
    Csr eps;  // velocity -> tensor (single field)
    Csr div;  // tensor -> velocity, exact negative adjoint under the X-weights
    double cfl_dt = 0.0;
    ParameterField field;  // kept for the derivative machinery

    int L() const { return relax.L; }

    // --- pointwise block applications -------------------------------------
    void apply_C_center(const std::vector<double>& m, const std::vector<double>& p, const double* xx,
                        const double* zz, double* oxx, double* ozz) const {
        const int n = grid.nc();
        for (int k = 0; k < n; ++k) {
            const double t = (p[static_cast<std::size_t>(k)] - 2.0 * m[static_cast<std::size_t>(k)]) *
                             (xx[k] + zz[k]);
            oxx[k] = 2.0 * m[static_cast<std::size_t>(k)] * xx[k] + t;
            ozz[k] = 2.0 * m[static_cast<std::size_t>(k)] * zz[k] + t;
        }
    }
    void scale_nodes(const std::vector<double>& c, const double* x, double* y) const {
        const int n = grid.nn();
        for (int k = 0; k < n; ++k) y[k] = c[static_cast<std::size_t>(k)] * x[k];
    }

    /// B^{-1}: velocity / rho, tensor blocks through C(mu0,pi0) etc.
    void apply_Binv(const std::vector<double>& x, std::vector<double>& y) const {
        const Grid2D& g = grid;
        for (int k = 0; k < g.nvx(); ++k)
            y[static_cast<std::size_t>(k)] = x[static_cast<std::size_t>(k)] / mat.rho_vx[static_cast<std::size_t>(k)];
        for (int k = 0; k < g.nvz(); ++k)
            y[static_cast<std::size_t>(lay.vz0() + k)] =
                x[static_cast<std::size_t>(lay.vz0() + k)] / mat.rho_vz[static_cast<std::size_t>(k)];
        for (int l = 0; l <= L(); ++l) {
            const auto& m = (l == 0) ? mat.c0_m : mat.cl_m;
            const auto& p = (l == 0) ? mat.c0_p : mat.cl_p;
            apply_C_center(m, p, &x[static_cast<std::size_t>(lay.sxx0(l))], &x[static_cast<std::size_t>(lay.szz0(l))],
                           &y[static_cast<std::size_t>(lay.sxx0(l))], &y[static_cast<std::size_t>(lay.szz0(l))]);
            scale_nodes((l == 0) ? mat.n0_2m : mat.nl_2m, &x[static_cast<std::size_t>(lay.sxz0(l))],
                        &y[static_cast<std::size_t>(lay.sxz0(l))]);
        }
    }

    /// B: velocity * rho, tensor blocks through the inverse maps.
    void apply_B(const std::vector<double>& x, std::vector<double>& y) const {
        const Grid2D& g = grid;
        for (int k = 0; k < g.nvx(); ++k)
            y[static_cast<std::size_t>(k)] = x[static_cast<std::size_t>(k)] * mat.rho_vx[static_cast<std::size_t>(k)];
        for (int k = 0; k < g.nvz(); ++k)
            y[static_cast<std::size_t>(lay.vz0() + k)] =
                x[static_cast<std::size_t>(lay.vz0() + k)] * mat.rho_vz[static_cast<std::size_t>(k)];
        for (int l = 0; l <= L(); ++l) {
            const auto& m = (l == 0) ? mat.b0_m : mat.bl_m;
            const auto& p = (l == 0) ? mat.b0_p : mat.bl_p;
            apply_C_center(m, p, &x[static_cast<std::size_t>(lay.sxx0(l))], &x[static_cast<std::size_t>(lay.szz0(l))],
                           &y[static_cast<std::size_t>(lay.sxx0(l))], &y[static_cast<std::size_t>(lay.szz0(l))]);
            scale_nodes((l == 0) ? mat.n0_inv2m : mat.nl_inv2m, &x[static_cast<std::size_t>(lay.sxz0(l))],
                        &y[static_cast<std::size_t>(lay.sxz0(l))]);
        }
    }

    /// Q: memory blocks scaled by 1/tau_sigma_l.
    void apply_Q(const std::vector<double>& x, std::vector<double>& y) const {
        std::fill(y.begin(), y.begin() + lay.block0(1), 0.0);
        for (int l = 1; l <= L(); ++l) {
            const double q = 1.0 / relax.tau_sigma[static_cast<std::size_t>(l - 1)];
            const int b = lay.block0(l);
            for (int k = 0; k < grid.ntensor(); ++k)
                y[static_cast<std::size_t>(b + k)] = q * x[static_cast<std::size_t>(b + k)];
        }
    }

    /// A w = -( div(sum psi_l) ; eps(w) ; ... ; eps(w) ).
    void apply_A(const std::vector<double>& x, std::vector<double>& y,
                 std::vector<double>& tsum) const {
        const int nt = grid.ntensor();
        for (int k = 0; k < nt; ++k) {
            double s = 0.0;
            for (int l = 0; l <= L(); ++l) s += x[static_cast<std::size_t>(lay.block0(l) + k)];
            tsum[static_cast<std::size_t>(k)] = s;
        }
        div.apply(tsum.data(), y.data());
        for (int k = 0; k < grid.nvel(); ++k) y[static_cast<std::size_t>(k)] = -y[static_cast<std::size_t>(k)];
        eps.apply(x.data(), &y[static_cast<std::size_t>(lay.block0(0))]);
        const int b0 = lay.block0(0);
        for (int k = 0; k < nt; ++k) y[static_cast<std::size_t>(b0 + k)] = -y[static_cast<std::size_t>(b0 + k)];
        for (int l = 1; l <= L(); ++l)
            std::copy(y.begin() + b0, y.begin() + b0 + nt, y.begin() + lay.block0(l));
    }
};

/// Strain stencils; the divergence is the exact negative adjoint of the
/// strain under the grid inner products.
inline std::vector<Triplet> strain_triplets(const Grid2D& g) {
    std::vector<Triplet> ts;
    const double ih = 1.0 / g.h;
    const int vx0 = 0, vz0 = g.nvx();

    // eps_xx rows
    for (int i = 0; i < g.nx; ++i)
        for (int j = 0; j < g.nz; ++j) {
            const int r = g.ic(i, j);
            if (i + 1 <= g.nx - 1) ts.push_back({r, vx0 + g.ivx(i + 1, j), ih});
            if (i >= 1) ts.push_back({r, vx0 + g.ivx(i, j), -ih});
        }
    // eps_zz rows
    for (int i = 0; i < g.nx; ++i)
        for (int j = 0; j < g.nz; ++j) {
            const int r = g.nc() + g.ic(i, j);
            if (j + 1 <= g.nz - 1) ts.push_back({r, vz0 + g.ivz(i, j + 1), ih});
            if (j >= g.vz_j0()) ts.push_back({r, vz0 + g.ivz(i, j), -ih});
        }
    // eps_xz rows at nodes; tangential Dirichlet velocities mirror across the
    // boundary so v = 0 holds on the wall itself
    for (int i = 0; i <= g.nx; ++i)
        for (int j = g.node_j0(); j <= g.nz; ++j) {
            const int r = 2 * g.nc() + g.in(i, j);
            if (i >= 1 && i <= g.nx - 1) {
                double cu = 0.5 * ih, cl = -0.5 * ih;
                if (j == 0) cu = ih;           // mirrored lower partner
                if (j == g.nz) cl = -ih;       // mirrored upper partner
                if (j <= g.nz - 1) ts.push_back({r, vx0 + g.ivx(i, j), cu});
                if (j >= 1) ts.push_back({r, vx0 + g.ivx(i, j - 1), cl});
            }
            if (j >= g.vz_j0() && j <= g.nz - 1) {
                double cr = 0.5 * ih, cl2 = -0.5 * ih;
                if (i == 0) cr = ih;
                if (i == g.nx) cl2 = -ih;
                if (i <= g.nx - 1) ts.push_back({r, vz0 + g.ivz(i, j), cr});
                if (i >= 1) ts.push_back({r, vz0 + g.ivz(i - 1, j), cl2});
            }
        }
    return ts;
}

inline MaterialData make_material(const Grid2D& g, const ParameterField& f, double alpha) {
    MaterialData m;
    SiteInterp si{g};
    m.rho_vx.resize(static_cast<std::size_t>(g.nvx()));
    for (int i = 1; i <= g.nx - 1; ++i)
        for (int j = 0; j < g.nz; ++j) m.rho_vx[static_cast<std::size_t>(g.ivx(i, j))] = si.at_vx(f.rho, i, j);
    m.rho_vz.resize(static_cast<std::size_t>(g.nvz()));
    for (int i = 0; i < g.nx; ++i)
        for (int j = g.vz_j0(); j <= g.nz - 1; ++j)
            m.rho_vz[static_cast<std::size_t>(g.ivz(i, j))] = si.at_vz(f.rho, i, j);

    const int nc = g.nc();
    m.c0_m.resize(static_cast<std::size_t>(nc));
    m.c0_p.resize(static_cast<std::size_t>(nc));
    m.cl_m.resize(static_cast<std::size_t>(nc));
    m.cl_p.resize(static_cast<std::size_t>(nc));
    m.b0_m.resize(static_cast<std::size_t>(nc));
    m.b0_p.resize(static_cast<std::size_t>(nc));
    m.bl_m.resize(static_cast<std::size_t>(nc));
    m.bl_p.resize(static_cast<std::size_t>(nc));
    m.center_pt.resize(static_cast<std::size_t>(nc));
    for (int k = 0; k < nc; ++k) {
        const rheology::ParameterPoint pt = f.at(k);
        m.center_pt[static_cast<std::size_t>(k)] = pt;
        const rheology::Moduli mod = rheology::moduli_from_params(pt, alpha);
        m.c0_m[static_cast<std::size_t>(k)] = mod.mu0;
        m.c0_p[static_cast<std::size_t>(k)] = mod.pi0;
        m.cl_m[static_cast<std::size_t>(k)] = pt.tauS * mod.mu0;
        m.cl_p[static_cast<std::size_t>(k)] = pt.tauP * mod.pi0;
        const auto b0 = rheology::invert_isotropic_map({mod.mu0, mod.pi0, 2});
        const auto bl = rheology::invert_isotropic_map({pt.tauS * mod.mu0, pt.tauP * mod.pi0, 2});
        m.b0_m[static_cast<std::size_t>(k)] = b0.m;
        m.b0_p[static_cast<std::size_t>(k)] = b0.p;
        m.bl_m[static_cast<std::size_t>(k)] = bl.m;
        m.bl_p[static_cast<std::size_t>(k)] = bl.p;
    }

    const int nn = g.nn();
    m.node_pt.resize(static_cast<std::size_t>(nn));
    m.n0_2m.resize(static_cast<std::size_t>(nn));
    m.nl_2m.resize(static_cast<std::size_t>(nn));
    m.n0_inv2m.resize(static_cast<std::size_t>(nn));
    m.nl_inv2m.resize(static_cast<std::size_t>(nn));
    for (int i = 0; i <= g.nx; ++i)
        for (int j = g.node_j0(); j <= g.nz; ++j) {
            const int k = g.in(i, j);
            rheology::ParameterPoint pt{si.at_node(f.rho, i, j), si.at_node(f.vS, i, j),
                                        si.at_node(f.tauS, i, j), si.at_node(f.vP, i, j),
                                        si.at_node(f.tauP, i, j)};
            m.node_pt[static_cast<std::size_t>(k)] = pt;
            const rheology::Moduli mod = rheology::moduli_from_params(pt, alpha);
            m.n0_2m[static_cast<std::size_t>(k)] = 2.0 * mod.mu0;
            m.nl_2m[static_cast<std::size_t>(k)] = 2.0 * pt.tauS * mod.mu0;
            m.n0_inv2m[static_cast<std::size_t>(k)] = 1.0 / (2.0 * mod.mu0);
            m.nl_inv2m[static_cast<std::size_t>(k)] = 1.0 / (2.0 * pt.tauS * mod.mu0);
        }
    return m;
}

inline DiscreteOperators build_operators(const Grid2D& g, const ParameterField& f,
                                         const rheology::RelaxationSpec& relax) {
    if (f.grid.nx != g.nx || f.grid.nz != g.nz)
        throw std::invalid_argument("build_operators: field/grid mismatch");
    double vPmax = 0.0;
    for (int k = 0; k < g.nc(); ++k) {
        const auto rep = rheology::check_parameter_domain(f.at(k), f.bounds, relax.alpha, 2);
        if (!rep.admissible)
            throw std::invalid_argument("build_operators: parameter field not admissible at cell " +
                                        std::to_string(k));
        vPmax = std::max(vPmax, f.vP[static_cast<std::size_t>(k)]);
    }

    DiscreteOperators ops;
    ops.grid = g;
    ops.lay = StateLayout(g, relax.L);
    ops.relax = relax;
    ops.field = f;
    ops.mat = make_material(g, f, relax.alpha);

    const auto ts = strain_triplets(g);
    ops.eps = csr_from_triplets(g.ntensor(), g.nvel(), ts);
    // exact negative adjoint: Div = -Eps^T with the Frobenius factor 2 on the
    // shear rows (the h^2 weights cancel between the two inner products)
    std::vector<Triplet> dts;
    dts.reserve(ts.size());
    for (const auto& t : ts) {
        const double w = (t.r >= 2 * g.nc()) ? 2.0 : 1.0;
        dts.push_back({t.c, t.r, -w * t.v});
    }
    ops.div = csr_from_triplets(g.nvel(), g.ntensor(), dts);

    ops.cfl_dt = 0.4 * g.h / vPmax;
    return ops;
}

}  // namespace viscoadjoint::wave2d
