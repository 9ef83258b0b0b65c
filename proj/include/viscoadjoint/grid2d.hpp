#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "viscoadjoint/rheology.hpp"

namespace viscoadjoint::wave2d {

enum class Boundary { dirichlet, traction_free };

/// Uniform cell grid on [0, nx h] x [0, nz h].  Velocities live on edges,
/// normal stresses at cell centers, shear stress at nodes (staggered
/// arrangement).  Only the top side may be traction-free.
struct Grid2D {
    int nx = 0, nz = 0;
    double h = 0.0;
    Boundary top = Boundary::dirichlet;  // z = 0 side

    Grid2D() = default;
    Grid2D(int nx_, int nz_, double h_, Boundary top_ = Boundary::dirichlet)
        : nx(nx_), nz(nz_), h(h_), top(top_) {
        if (nx < 8 || nz < 8) throw std::invalid_argument("Grid2D: nx, nz must be >= 8");
        if (h <= 0.0) throw std::invalid_argument("Grid2D: h must be positive");
    }

    bool top_free() const { return top == Boundary::traction_free; }

    // vx DOFs at (i, j+1/2), i = 1..nx-1, j = 0..nz-1
    int nvx() const { return (nx - 1) * nz; }
    int ivx(int i, int j) const { return (i - 1) * nz + j; }

    // vz DOFs at (i+1/2, j), j = j0..nz-1 with j0 = 0 on a free top else 1
    int vz_j0() const { return top_free() ? 0 : 1; }
    int nvz() const { return nx * (nz - vz_j0()); }
    int ivz(int i, int j) const { return i * (nz - vz_j0()) + (j - vz_j0()); }

    // cell centers (i+1/2, j+1/2), i = 0..nx-1, j = 0..nz-1
    int nc() const { return nx * nz; }
    int ic(int i, int j) const { return i * nz + j; }

    // nodes (i, j), i = 0..nx, j = n0..nz with n0 = 1 on a free top else 0
    int node_j0() const { return top_free() ? 1 : 0; }
    int nn() const { return (nx + 1) * (nz + 1 - node_j0()); }
    int in(int i, int j) const { return i * (nz + 1 - node_j0()) + (j - node_j0()); }

    int nvel() const { return nvx() + nvz(); }
    int ntensor() const { return 2 * nc() + nn(); }
};

/// Flat state vector layout: [vx | vz | block_0 | ... | block_L], each tensor
/// block as [sxx | szz | sxz].
struct StateLayout {
    Grid2D g;
    int L = 1;

    StateLayout() = default;
    StateLayout(const Grid2D& g_, int L_) : g(g_), L(L_) {}

    int vx0() const { return 0; }
    int vz0() const { return g.nvx(); }
    int block0(int l) const { return g.nvel() + l * g.ntensor(); }
    int sxx0(int l) const { return block0(l); }
    int szz0(int l) const { return block0(l) + g.nc(); }
    int sxz0(int l) const { return block0(l) + 2 * g.nc(); }
    int size() const { return g.nvel() + (L + 1) * g.ntensor(); }
};

/// X-inner-product weights: h^2 per DOF, doubled on the shear component so
/// tensor pairings are Frobenius.
inline double state_dot(const StateLayout& lay, const std::vector<double>& a,
                        const std::vector<double>& b) {
    const Grid2D& g = lay.g;
    const double h2 = g.h * g.h;
    double sv = 0.0;
    for (int k = 0; k < g.nvel(); ++k) sv += a[static_cast<std::size_t>(k)] * b[static_cast<std::size_t>(k)];
    double st = 0.0;
    for (int l = 0; l <= lay.L; ++l) {
        const int c0 = lay.sxx0(l);
        for (int k = 0; k < 2 * g.nc(); ++k)
            st += a[static_cast<std::size_t>(c0 + k)] * b[static_cast<std::size_t>(c0 + k)];
        const int n0 = lay.sxz0(l);
        for (int k = 0; k < g.nn(); ++k)
            st += 2.0 * a[static_cast<std::size_t>(n0 + k)] * b[static_cast<std::size_t>(n0 + k)];
    }
    return h2 * (sv + st);
}

inline double state_norm(const StateLayout& lay, const std::vector<double>& a) {
    return std::sqrt(state_dot(lay, a, a));
}

/// Five spatial parameter grids on cell centers plus their box bounds.
struct ParameterField {
    Grid2D grid;
    std::vector<double> rho, vS, tauS, vP, tauP;
    rheology::ParameterBounds bounds;

    ParameterField() = default;
    explicit ParameterField(const Grid2D& g)
        : grid(g),
          rho(static_cast<std::size_t>(g.nc()), 0.0),
          vS(static_cast<std::size_t>(g.nc()), 0.0),
          tauS(static_cast<std::size_t>(g.nc()), 0.0),
          vP(static_cast<std::size_t>(g.nc()), 0.0),
          tauP(static_cast<std::size_t>(g.nc()), 0.0) {}

    rheology::ParameterPoint at(int cell) const {
        const auto k = static_cast<std::size_t>(cell);
        return {rho[k], vS[k], tauS[k], vP[k], tauP[k]};
    }

    std::vector<double>& component(int k) {
        switch (k) {
            case 0: return rho;
            case 1: return vS;
            case 2: return tauS;
            case 3: return vP;
            default: return k == 4 ? tauP : throw std::out_of_range("ParameterField::component");
        }
    }
    const std::vector<double>& component(int k) const {
        return const_cast<ParameterField*>(this)->component(k);
    }
};

/// Constant field at the given point.
inline ParameterField constant_field(const Grid2D& g, const rheology::ParameterPoint& pt,
                                     const rheology::ParameterBounds& bounds) {
    ParameterField f(g);
    std::fill(f.rho.begin(), f.rho.end(), pt.rho);
    std::fill(f.vS.begin(), f.vS.end(), pt.vS);
    std::fill(f.tauS.begin(), f.tauS.end(), pt.tauS);
    std::fill(f.vP.begin(), f.vP.end(), pt.vP);
    std::fill(f.tauP.begin(), f.tauP.end(), pt.tauP);
    f.bounds = bounds;
    return f;
}

/// A parameter-space direction: five cell grids.
struct ParameterDirField {
    Grid2D grid;
    std::vector<double> rho, vS, tauS, vP, tauP;

    ParameterDirField() = default;
    explicit ParameterDirField(const Grid2D& g)
        : grid(g),
          rho(static_cast<std::size_t>(g.nc()), 0.0),
          vS(static_cast<std::size_t>(g.nc()), 0.0),
          tauS(static_cast<std::size_t>(g.nc()), 0.0),
          vP(static_cast<std::size_t>(g.nc()), 0.0),
          tauP(static_cast<std::size_t>(g.nc()), 0.0) {}

    rheology::ParameterDir at(int cell) const {
        const auto k = static_cast<std::size_t>(cell);
        return {rho[k], vS[k], tauS[k], vP[k], tauP[k]};
    }

    std::vector<double>& component(int k) {
        switch (k) {
            case 0: return rho;
            case 1: return vS;
            case 2: return tauS;
            case 3: return vP;
            default: return k == 4 ? tauP : throw std::out_of_range("ParameterDirField::component");
        }
    }
    const std::vector<double>& component(int k) const {
        return const_cast<ParameterDirField*>(this)->component(k);
    }
};

inline ParameterField perturbed(const ParameterField& f, const ParameterDirField& d, double h) {
    ParameterField out = f;
    for (std::size_t k = 0; k < f.rho.size(); ++k) {
        out.rho[k] += h * d.rho[k];
        out.vS[k] += h * d.vS[k];
        out.tauS[k] += h * d.tauS[k];
        out.vP[k] += h * d.vP[k];
        out.tauP[k] += h * d.tauP[k];
    }
    return out;
}

}  // namespace viscoadjoint::wave2d
