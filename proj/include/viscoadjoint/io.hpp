#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "viscoadjoint/fwi.hpp"

namespace viscoadjoint::io {

using fwi::GradientField;
using wave2d::Grid2D;
using wave2d::ParameterField;
using wave2d::RecordedWavefield;

/// VAF1 raw snapshot container: little-endian doubles, row-major with z
/// fastest, preceded by the header
///   magic "VAF1" | u32 nx | u32 nz | u32 ncomp | u32 nt | f64 h | f64 dt.
struct Vaf1 {
    std::uint32_t nx = 0, nz = 0, ncomp = 0, nt = 0;
    double h = 0.0, dt = 0.0;
    std::vector<double> data;  // nt * ncomp * nx * nz, z fastest

    std::size_t frame(std::uint32_t t, std::uint32_t c) const {
        return (static_cast<std::size_t>(t) * ncomp + c) * nx * nz;
    }
};

inline void write_vaf1(const std::string& path, const Vaf1& v) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_vaf1: cannot open " + path);
    f.write("VAF1", 4);
    auto w32 = [&](std::uint32_t x) { f.write(reinterpret_cast<const char*>(&x), 4); };
    auto w64 = [&](double x) { f.write(reinterpret_cast<const char*>(&x), 8); };
    w32(v.nx);
    w32(v.nz);
    w32(v.ncomp);
    w32(v.nt);
    w64(v.h);
    w64(v.dt);
    f.write(reinterpret_cast<const char*>(v.data.data()),
            static_cast<std::streamsize>(v.data.size() * sizeof(double)));
    if (!f) throw std::runtime_error("write_vaf1: write failed for " + path);
}

inline Vaf1 read_vaf1(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_vaf1: cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "VAF1", 4) != 0)
        throw std::runtime_error("read_vaf1: bad magic in " + path);
    Vaf1 v;
    auto r32 = [&](std::uint32_t& x) { f.read(reinterpret_cast<char*>(&x), 4); };
    auto r64 = [&](double& x) { f.read(reinterpret_cast<char*>(&x), 8); };
    r32(v.nx);
    r32(v.nz);
    r32(v.ncomp);
    r32(v.nt);
    r64(v.h);
    r64(v.dt);
    const std::size_t n = static_cast<std::size_t>(v.nx) * v.nz * v.ncomp * v.nt;
    v.data.resize(n);
    f.read(reinterpret_cast<char*>(v.data.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!f) throw std::runtime_error("read_vaf1: truncated file " + path);
    return v;
}

/// Parameter fields are stored with ncomp = 5 (rho, vS, tauS, vP, tauP).
inline void write_parameter_field(const std::string& path, const ParameterField& pf) {
    Vaf1 v;
    v.nx = static_cast<std::uint32_t>(pf.grid.nx);
    v.nz = static_cast<std::uint32_t>(pf.grid.nz);
    v.ncomp = 5;
    v.nt = 1;
    v.h = pf.grid.h;
    v.dt = 0.0;
    v.data.reserve(static_cast<std::size_t>(5) * pf.grid.nc());
    for (int k = 0; k < 5; ++k) {
        const auto& c = pf.component(k);
        v.data.insert(v.data.end(), c.begin(), c.end());
    }
    write_vaf1(path, v);
}

inline ParameterField read_parameter_field(const std::string& path,
                                           const rheology::ParameterBounds& bounds,
                                           wave2d::Boundary top = wave2d::Boundary::dirichlet) {
    Vaf1 v = read_vaf1(path);
    if (v.ncomp != 5 || v.nt != 1)
        throw std::runtime_error("read_parameter_field: expected a 5-component single-frame file");
    Grid2D g(static_cast<int>(v.nx), static_cast<int>(v.nz), v.h, top);
    ParameterField pf(g);
    pf.bounds = bounds;
    for (int k = 0; k < 5; ++k) {
        auto& c = pf.component(k);
        std::copy_n(v.data.begin() + v.frame(0, static_cast<std::uint32_t>(k)), g.nc(), c.begin());
    }
    return pf;
}

inline void write_gradient_field(const std::string& path, const GradientField& gf) {
    Vaf1 v;
    v.nx = static_cast<std::uint32_t>(gf.grid.nx);
    v.nz = static_cast<std::uint32_t>(gf.grid.nz);
    v.ncomp = 5;
    v.nt = 1;
    v.h = gf.grid.h;
    v.dt = 0.0;
    for (int k = 0; k < 5; ++k) {
        const auto& c = gf.component(k);
        v.data.insert(v.data.end(), c.begin(), c.end());
    }
    write_vaf1(path, v);
}

/// Wavefield snapshots collocated to cell centers: components are
/// (vx, vz, then per memory block sxx, szz, sxz).
inline Vaf1 collocate_wavefield(const wave2d::DiscreteOperators& ops, const RecordedWavefield& rec,
                                int stride) {
    const Grid2D& g = ops.grid;
    const wave2d::StateLayout& lay = ops.lay;
    Vaf1 v;
    v.nx = static_cast<std::uint32_t>(g.nx);
    v.nz = static_cast<std::uint32_t>(g.nz);
    v.ncomp = static_cast<std::uint32_t>(2 + 3 * (ops.L() + 1));
    v.nt = static_cast<std::uint32_t>(rec.nt / stride + 1);
    v.h = g.h;
    v.dt = rec.dt * stride;
    v.data.assign(static_cast<std::size_t>(v.nt) * v.ncomp * g.nc(), 0.0);

    std::vector<double> buf(static_cast<std::size_t>(g.nc()));
    std::uint32_t frame = 0;
    for (int n = 0; n <= rec.nt; n += stride, ++frame) {
        const auto& u = rec.at(n);
        std::uint32_t c = 0;
        // vx, vz center averages
        for (int i = 0; i < g.nx; ++i)
            for (int j = 0; j < g.nz; ++j) {
                double vx = 0.0;
                if (i >= 1) vx += 0.5 * u[static_cast<std::size_t>(lay.vx0() + g.ivx(i, j))];
                if (i + 1 <= g.nx - 1) vx += 0.5 * u[static_cast<std::size_t>(lay.vx0() + g.ivx(i + 1, j))];
                v.data[v.frame(frame, 0) + static_cast<std::size_t>(g.ic(i, j))] = vx;
                double vz = 0.0;
                if (j >= g.vz_j0()) vz += 0.5 * u[static_cast<std::size_t>(lay.vz0() + g.ivz(i, j))];
                if (j + 1 <= g.nz - 1) vz += 0.5 * u[static_cast<std::size_t>(lay.vz0() + g.ivz(i, j + 1))];
                v.data[v.frame(frame, 1) + static_cast<std::size_t>(g.ic(i, j))] = vz;
            }
        c = 2;
        for (int l = 0; l <= ops.L(); ++l) {
            std::copy_n(u.data() + lay.sxx0(l), g.nc(), v.data.begin() + static_cast<std::ptrdiff_t>(v.frame(frame, c++)));
            std::copy_n(u.data() + lay.szz0(l), g.nc(), v.data.begin() + static_cast<std::ptrdiff_t>(v.frame(frame, c++)));
            // shear averaged from nodes
            for (int i = 0; i < g.nx; ++i)
                for (int j = 0; j < g.nz; ++j) {
                    double s = 0.0;
                    int cnt = 0;
                    for (int di = 0; di <= 1; ++di)
                        for (int dj = 0; dj <= 1; ++dj) {
                            if (j + dj < g.node_j0()) continue;
                            s += u[static_cast<std::size_t>(lay.sxz0(l) + g.in(i + di, j + dj))];
                            ++cnt;
                        }
                    buf[static_cast<std::size_t>(g.ic(i, j))] = s / cnt;
                }
            std::copy(buf.begin(), buf.end(), v.data.begin() + static_cast<std::ptrdiff_t>(v.frame(frame, c++)));
        }
    }
    return v;
}

inline std::string fmt17(double x) {
    std::ostringstream os;
    os << std::setprecision(17) << x;
    return os.str();
}

/// Seismogram CSV: header `t,comp0,comp1,...`, one row per step.
inline void write_seismogram_csv(const std::string& path, const std::vector<double>& seis,
                                 int ncomp, int nt, double dt) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_seismogram_csv: cannot open " + path);
    f << "t";
    for (int c = 0; c < ncomp; ++c) f << ",comp" << c;
    f << "\n";
    for (int n = 0; n <= nt; ++n) {
        f << fmt17(n * dt);
        for (int c = 0; c < ncomp; ++c) f << "," << fmt17(seis[static_cast<std::size_t>(n) * ncomp + c]);
        f << "\n";
    }
}

/// Generic CSV table (reports, scans, trajectories).
inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<double>>& rows) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_csv: cannot open " + path);
    for (std::size_t k = 0; k < header.size(); ++k) f << (k ? "," : "") << header[k];
    f << "\n";
    for (const auto& r : rows) {
        for (std::size_t k = 0; k < r.size(); ++k) f << (k ? "," : "") << fmt17(r[k]);
        f << "\n";
    }
}

}  // namespace viscoadjoint::io
