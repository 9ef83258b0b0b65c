#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "viscoadjoint/operators2d.hpp"
#include "viscoadjoint/wavelet.hpp"

namespace viscoadjoint::wave2d {

/// Full state stored at every time step.
struct RecordedWavefield {
    StateLayout lay;
    double dt = 0.0;
    int nt = 0;
    std::vector<std::vector<double>> states;  // nt+1 entries

    const std::vector<double>& at(int n) const { return states[static_cast<std::size_t>(n)]; }
};

enum class Component { vx, vz };

/// Point source mollified with a normalized 3x3 discrete Gaussian, injected
/// as a grid density (weights carry 1/h^2).
struct PointSource {
    std::vector<std::pair<int, double>> slots;  // state index, spatial weight
    Wavelet wavelet;
    double dt = 0.0;

    double amplitude(int halfk) const { return wavelet(0.5 * halfk * dt); }
};

inline PointSource make_point_source(const Grid2D& g, const StateLayout& lay, int ci, int cj,
                                     Component comp, double f0, double dt) {
    PointSource s;
    s.wavelet = Wavelet(f0);
    s.dt = dt;
    const double w1d[3] = {0.25, 0.5, 0.25};
    double total = 0.0;
    std::vector<std::pair<int, double>> raw;
    for (int di = -1; di <= 1; ++di)
        for (int dj = -1; dj <= 1; ++dj) {
            const int i = ci + di, j = cj + dj;
            const double w = w1d[di + 1] * w1d[dj + 1];
            if (comp == Component::vx) {
                if (i >= 1 && i <= g.nx - 1 && j >= 0 && j <= g.nz - 1) {
                    raw.push_back({lay.vx0() + g.ivx(i, j), w});
                    total += w;
                }
            } else {
                if (i >= 0 && i <= g.nx - 1 && j >= g.vz_j0() && j <= g.nz - 1) {
                    raw.push_back({lay.vz0() + g.ivz(i, j), w});
                    total += w;
                }
            }
        }
    if (raw.empty()) throw std::invalid_argument("make_point_source: location outside the grid");
    const double h2 = g.h * g.h;
    for (auto& [slot, w] : raw) s.slots.push_back({slot, w / (total * h2)});
    return s;
}

/// Receiver sampling: both velocity components, cell-center interpolated and
/// mollified over a 3x3 cell footprint (same kernel as the source).
struct ReceiverSet {
    std::vector<std::pair<int, int>> cells;
    int ncomp() const { return 2 * static_cast<int>(cells.size()); }
};

namespace detail {

template <class Fn>
void receiver_stencil(const Grid2D& g, int ci, int cj, Fn&& fn) {
    static constexpr double w1d[3] = {0.25, 0.5, 0.25};
    for (int di = -1; di <= 1; ++di)
        for (int dj = -1; dj <= 1; ++dj) {
            const int i = ci + di, j = cj + dj;
            if (i < 0 || i >= g.nx || j < 0 || j >= g.nz) continue;
            fn(i, j, w1d[di + 1] * w1d[dj + 1]);
        }
}

}  // namespace detail

inline void sample_receivers(const Grid2D& g, const StateLayout& lay, const ReceiverSet& rec,
                             const std::vector<double>& u, double* out) {
    int c = 0;
    for (auto [ci, cj] : rec.cells) {
        double vx = 0.0, vz = 0.0;
        detail::receiver_stencil(g, ci, cj, [&](int i, int j, double w) {
            if (i >= 1) vx += 0.5 * w * u[static_cast<std::size_t>(lay.vx0() + g.ivx(i, j))];
            if (i + 1 <= g.nx - 1) vx += 0.5 * w * u[static_cast<std::size_t>(lay.vx0() + g.ivx(i + 1, j))];
            if (j >= g.vz_j0()) vz += 0.5 * w * u[static_cast<std::size_t>(lay.vz0() + g.ivz(i, j))];
            if (j + 1 <= g.nz - 1) vz += 0.5 * w * u[static_cast<std::size_t>(lay.vz0() + g.ivz(i, j + 1))];
        });
        out[c++] = vx;
        out[c++] = vz;
    }
}

/// Exact transpose of sample_receivers: scatter residual values into a
/// velocity field.
inline void inject_receivers(const Grid2D& g, const StateLayout& lay, const ReceiverSet& rec,
                             const double* res, std::vector<double>& u) {
    int c = 0;
    for (auto [ci, cj] : rec.cells) {
        const double rx = res[c++], rz = res[c++];
        detail::receiver_stencil(g, ci, cj, [&](int i, int j, double w) {
            if (i >= 1) u[static_cast<std::size_t>(lay.vx0() + g.ivx(i, j))] += 0.5 * w * rx;
            if (i + 1 <= g.nx - 1) u[static_cast<std::size_t>(lay.vx0() + g.ivx(i + 1, j))] += 0.5 * w * rx;
            if (j >= g.vz_j0()) u[static_cast<std::size_t>(lay.vz0() + g.ivz(i, j))] += 0.5 * w * rz;
            if (j + 1 <= g.nz - 1) u[static_cast<std::size_t>(lay.vz0() + g.ivz(i, j + 1))] += 0.5 * w * rz;
        });
    }
}

// ---------------------------------------------------------------------------
// RK4 stepping.  The semi-discrete system is u' = L u + (source terms) with
// L = -B^{-1}A - Q; L is autonomous and linear, so the X-adjoint of the step
// map is the same stage algorithm run with L* = A B^{-1} - Q.
// ---------------------------------------------------------------------------

struct StepWorkspace {
    std::vector<double> k1, k2, k3, k4, yt, ta, tq, tsum, bsrc;
    explicit StepWorkspace(const StateLayout& lay)
        : k1(static_cast<std::size_t>(lay.size())),
          k2(static_cast<std::size_t>(lay.size())),
          k3(static_cast<std::size_t>(lay.size())),
          k4(static_cast<std::size_t>(lay.size())),
          yt(static_cast<std::size_t>(lay.size())),
          ta(static_cast<std::size_t>(lay.size())),
          tq(static_cast<std::size_t>(lay.size())),
          tsum(static_cast<std::size_t>(lay.g.ntensor())),
          bsrc(static_cast<std::size_t>(lay.size())) {}
};

inline void apply_L(const DiscreteOperators& ops, const std::vector<double>& x,
                    std::vector<double>& out, StepWorkspace& ws) {
    ops.apply_A(x, ws.ta, ws.tsum);
    ops.apply_Binv(ws.ta, out);
    ops.apply_Q(x, ws.tq);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = -out[k] - ws.tq[k];
}

inline void apply_Lstar(const DiscreteOperators& ops, const std::vector<double>& x,
                        std::vector<double>& out, StepWorkspace& ws) {
    ops.apply_Binv(x, ws.tq);
    ops.apply_A(ws.tq, out, ws.tsum);
    ops.apply_Q(x, ws.tq);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] -= ws.tq[k];
}

/// Stage s of step n reads the source at half-index 2n + stage_half[s].
inline constexpr int stage_half[4] = {0, 1, 1, 2};

/// One forward RK4 step; `add` injects the stage source (already in ODE
/// right-hand-side form) into the stage vector, indexed by stage 0..3.
template <class AddSrc>
void rk4_step(const DiscreteOperators& ops, StepWorkspace& ws, std::vector<double>& u, double dt,
              AddSrc&& add) {
    const std::size_t N = u.size();
    apply_L(ops, u, ws.k1, ws);
    add(0, ws.k1);
    for (std::size_t k = 0; k < N; ++k) ws.yt[k] = u[k] + 0.5 * dt * ws.k1[k];
    apply_L(ops, ws.yt, ws.k2, ws);
    add(1, ws.k2);
    for (std::size_t k = 0; k < N; ++k) ws.yt[k] = u[k] + 0.5 * dt * ws.k2[k];
    apply_L(ops, ws.yt, ws.k3, ws);
    add(2, ws.k3);
    for (std::size_t k = 0; k < N; ++k) ws.yt[k] = u[k] + dt * ws.k3[k];
    apply_L(ops, ws.yt, ws.k4, ws);
    add(3, ws.k4);
    for (std::size_t k = 0; k < N; ++k)
        u[k] += dt / 6.0 * (ws.k1[k] + 2.0 * ws.k2[k] + 2.0 * ws.k3[k] + ws.k4[k]);
}

/// X-adjoint of one step: lam <- R* lam, accumulating the source transposes
/// B^{-1} dk per stage.
template <class AddGrad>
void rk4_step_adjoint(const DiscreteOperators& ops, StepWorkspace& ws, std::vector<double>& lam,
                      double dt, AddGrad&& addg) {
    const std::size_t N = lam.size();
    // dk weights of u_{n+1} = u + dt/6 (k1 + 2k2 + 2k3 + k4)
    for (std::size_t k = 0; k < N; ++k) {
        ws.k1[k] = dt / 6.0 * lam[k];
        ws.k2[k] = dt / 3.0 * lam[k];
        ws.k3[k] = dt / 3.0 * lam[k];
        ws.k4[k] = dt / 6.0 * lam[k];
    }
    // k4 = L(u + dt k3) + src(stage 3)
    apply_Lstar(ops, ws.k4, ws.yt, ws);
    ops.apply_Binv(ws.k4, ws.bsrc);
    addg(3, ws.bsrc);
    for (std::size_t k = 0; k < N; ++k) {
        lam[k] += ws.yt[k];
        ws.k3[k] += dt * ws.yt[k];
    }
    // k3 = L(u + dt/2 k2) + src(stage 2)
    apply_Lstar(ops, ws.k3, ws.yt, ws);
    ops.apply_Binv(ws.k3, ws.bsrc);
    addg(2, ws.bsrc);
    for (std::size_t k = 0; k < N; ++k) {
        lam[k] += ws.yt[k];
        ws.k2[k] += 0.5 * dt * ws.yt[k];
    }
    // k2 = L(u + dt/2 k1) + src(stage 1)
    apply_Lstar(ops, ws.k2, ws.yt, ws);
    ops.apply_Binv(ws.k2, ws.bsrc);
    addg(1, ws.bsrc);
    for (std::size_t k = 0; k < N; ++k) {
        lam[k] += ws.yt[k];
        ws.k1[k] += 0.5 * dt * ws.yt[k];
    }
    // k1 = L(u) + src(stage 0)
    apply_Lstar(ops, ws.k1, ws.yt, ws);
    ops.apply_Binv(ws.k1, ws.bsrc);
    addg(0, ws.bsrc);
    for (std::size_t k = 0; k < N; ++k) lam[k] += ws.yt[k];
}

// ---------------------------------------------------------------------------
// Forward runs.
// ---------------------------------------------------------------------------

struct RunOptions {
    bool record = true;
    const ReceiverSet* receivers = nullptr;
    std::vector<double>* seismogram = nullptr;  // (nt+1) * ncomp, row per step
    std::vector<double>* energy = nullptr;      // <B u, u> per step
};

namespace detail {

inline void check_stability(const StateLayout& lay, const std::vector<double>& u, double& base) {
    double m = 0.0;
    for (double v : u) m = std::max(m, std::abs(v));
    if (base > 0.0 && (m > 1e6 * base || !std::isfinite(m)))
        throw CflError("run_forward: instability detected (norm growth > 1e6x)");
    base = std::max(base, m);
    (void)lay;
}

inline void record_step(const DiscreteOperators& ops, const RunOptions& opts,
                        RecordedWavefield* rec, const std::vector<double>& u, int n,
                        StepWorkspace& ws) {
    if (rec) rec->states[static_cast<std::size_t>(n)] = u;
    if (opts.receivers && opts.seismogram) {
        const int nc = opts.receivers->ncomp();
        sample_receivers(ops.grid, ops.lay, *opts.receivers, u,
                         opts.seismogram->data() + static_cast<std::size_t>(n) * nc);
    }
    if (opts.energy) {
        ops.apply_B(u, ws.ta);
        (*opts.energy)[static_cast<std::size_t>(n)] = state_dot(ops.lay, ws.ta, u);
    }
}

}  // namespace detail

/// Integrates u' = B^{-1}(f - A u) - Q u from u(0) = 0 for a point source.
inline RecordedWavefield run_forward(const DiscreteOperators& ops, const PointSource& src,
                                     double dt, int nt, const RunOptions& opts = {}) {
    if (dt > ops.cfl_dt * (1.0 + 1e-12))
        throw CflError("run_forward: dt exceeds the CFL recommendation");
    StepWorkspace ws(ops.lay);
    RecordedWavefield rec;
    RecordedWavefield* recp = nullptr;
    if (opts.record) {
        rec.lay = ops.lay;
        rec.dt = dt;
        rec.nt = nt;
        rec.states.resize(static_cast<std::size_t>(nt) + 1);
        recp = &rec;
    }
    if (opts.seismogram && opts.receivers)
        opts.seismogram->assign(static_cast<std::size_t>(nt + 1) * opts.receivers->ncomp(), 0.0);
    if (opts.energy) opts.energy->assign(static_cast<std::size_t>(nt) + 1, 0.0);

    std::vector<double> u(static_cast<std::size_t>(ops.lay.size()), 0.0);
    detail::record_step(ops, opts, recp, u, 0, ws);
    double base = 0.0;
    // growth checks start once the source ramp has peaked
    const int n_check0 = static_cast<int>(std::ceil(1.5 * src.wavelet.t0 / dt));
    int step_n = 0;
    auto add = [&](int stage, std::vector<double>& kvec) {
        const double a = src.amplitude(2 * step_n + stage_half[stage]);
        if (a == 0.0) return;
        for (auto [slot, w] : src.slots) {
            const double rho = (slot < ops.lay.vz0()) ? ops.mat.rho_vx[static_cast<std::size_t>(slot)]
                                                      : ops.mat.rho_vz[static_cast<std::size_t>(slot - ops.lay.vz0())];
            kvec[static_cast<std::size_t>(slot)] += a * w / rho;
        }
    };
    for (int n = 0; n < nt; ++n) {
        step_n = n;
        rk4_step(ops, ws, u, dt, add);
        detail::record_step(ops, opts, recp, u, n + 1, ws);
        if (n >= n_check0 && n % 16 == 0) detail::check_stability(ops.lay, u, base);
    }
    if (nt >= n_check0) detail::check_stability(ops.lay, u, base);
    return rec;
}

/// General-source forward run: f given as full states at half-step resolution
/// (2 nt + 1 samples).  This is the linear response map whose exact transpose
/// is run_adjoint_discrete.
inline RecordedWavefield run_forward_series(const DiscreteOperators& ops,
                                            const std::vector<std::vector<double>>& fhalf,
                                            double dt, int nt) {
    if (static_cast<int>(fhalf.size()) != 2 * nt + 1)
        throw std::invalid_argument("run_forward_series: need 2*nt+1 source samples");
    StepWorkspace ws(ops.lay);
    RecordedWavefield rec;
    rec.lay = ops.lay;
    rec.dt = dt;
    rec.nt = nt;
    rec.states.resize(static_cast<std::size_t>(nt) + 1);
    std::vector<double> u(static_cast<std::size_t>(ops.lay.size()), 0.0);
    rec.states[0] = u;
    int step_n = 0;
    auto add = [&](int stage, std::vector<double>& kvec) {
        ops.apply_Binv(fhalf[static_cast<std::size_t>(2 * step_n + stage_half[stage])], ws.bsrc);
        for (std::size_t k = 0; k < kvec.size(); ++k) kvec[k] += ws.bsrc[k];
    };
    for (int n = 0; n < nt; ++n) {
        step_n = n;
        rk4_step(ops, ws, u, dt, add);
        rec.states[static_cast<std::size_t>(n + 1)] = u;
    }
    return rec;
}

/// Trapezoidal weight of step n on an nt-step grid.
inline double trapz_weight(int n, int nt, double dt) {
    return (n == 0 || n == nt) ? 0.5 * dt : dt;
}

/// Space-time pairing  sum_n w_n <a_n, b_n>_X  with trapezoidal weights.
inline double spacetime_dot(const StateLayout& lay, const RecordedWavefield& a,
                            const RecordedWavefield& b) {
    double s = 0.0;
    for (int n = 0; n <= a.nt; ++n)
        s += trapz_weight(n, a.nt, a.dt) * state_dot(lay, a.at(n), b.at(n));
    return s;
}

/// Exact transpose of run_forward_series with respect to the trapezoidal
/// space-time pairing: returns fgrad with
///   sum_n w_n <u_n(f), g_n>_X = sum_k <f_k, fgrad_k>_X  (plain half-slot sum).
inline std::vector<std::vector<double>> run_adjoint_discrete(
    const DiscreteOperators& ops, const std::vector<std::vector<double>>& g, double dt, int nt) {
    if (static_cast<int>(g.size()) != nt + 1)
        throw std::invalid_argument("run_adjoint_discrete: need nt+1 data samples");
    StepWorkspace ws(ops.lay);
    const std::size_t N = static_cast<std::size_t>(ops.lay.size());
    std::vector<std::vector<double>> fgrad(static_cast<std::size_t>(2 * nt) + 1,
                                           std::vector<double>(N, 0.0));
    std::vector<double> lam(N, 0.0);
    for (std::size_t k = 0; k < N; ++k) lam[k] = trapz_weight(nt, nt, dt) * g[static_cast<std::size_t>(nt)][k];
    int step_n = 0;
    auto addg = [&](int stage, const std::vector<double>& v) {
        auto& dst = fgrad[static_cast<std::size_t>(2 * step_n + stage_half[stage])];
        for (std::size_t k = 0; k < N; ++k) dst[k] += v[k];
    };
    for (int n = nt - 1; n >= 0; --n) {
        step_n = n;
        rk4_step_adjoint(ops, ws, lam, dt, addg);
        const double w = trapz_weight(n, nt, dt);
        for (std::size_t k = 0; k < N; ++k) lam[k] += w * g[static_cast<std::size_t>(n)][k];
    }
    return fgrad;
}

// ---------------------------------------------------------------------------
// Continuous-formula adjoint run.
// ---------------------------------------------------------------------------

/// Adjoint data g = (g_{-1}, g_0, ..., g_L) sampled on the run's time grid.
/// Either block may be absent (treated as zero).
struct AdjointData {
    int nt = 0;
    std::vector<std::vector<double>> vel;      // nt+1 x nvel, or empty
    std::vector<std::vector<double>> tensors;  // nt+1 x (L+1)*ntensor, or empty

    bool empty() const { return vel.empty() && tensors.empty(); }
};

namespace detail {

/// Fill a full-state buffer with g at half-index k (averaging odd indices).
inline void eval_adjoint_data(const DiscreteOperators& ops, const AdjointData& g, int halfk,
                              std::vector<double>& out) {
    std::fill(out.begin(), out.end(), 0.0);
    const int nvel = ops.grid.nvel();
    const int ntens = (ops.L() + 1) * ops.grid.ntensor();
    auto add_from = [&](int n, double w) {
        if (!g.vel.empty()) {
            const auto& v = g.vel[static_cast<std::size_t>(n)];
            for (int k = 0; k < nvel; ++k) out[static_cast<std::size_t>(k)] += w * v[static_cast<std::size_t>(k)];
        }
        if (!g.tensors.empty()) {
            const auto& t = g.tensors[static_cast<std::size_t>(n)];
            const int b0 = ops.lay.block0(0);
            for (int k = 0; k < ntens; ++k)
                out[static_cast<std::size_t>(b0 + k)] += w * t[static_cast<std::size_t>(k)];
        }
    };
    if (halfk % 2 == 0) {
        add_from(halfk / 2, 1.0);
    } else {
        add_from(halfk / 2, 0.5);
        add_from(halfk / 2 + 1, 0.5);
    }
}

}  // namespace detail

/// Integrates the adjoint system B w' - A* w - Q* B w = g backward from
/// w(T) = 0 via the substitution w~(s) = w(T-s); returns w chronologically.
inline RecordedWavefield run_adjoint_continuous(const DiscreteOperators& ops, const AdjointData& g,
                                                double dt, int nt) {
    if (g.nt != nt) throw std::invalid_argument("run_adjoint_continuous: data grid mismatch");
    StepWorkspace ws(ops.lay);
    const std::size_t N = static_cast<std::size_t>(ops.lay.size());
    RecordedWavefield rec;
    rec.lay = ops.lay;
    rec.dt = dt;
    rec.nt = nt;
    rec.states.assign(static_cast<std::size_t>(nt) + 1, std::vector<double>());
    std::vector<double> w(N, 0.0), gbuf(N);
    rec.states[static_cast<std::size_t>(nt)] = w;  // w(T) = 0
    // substitution: w~' = -B^{-1}(g~ - A w~) - Q w~ with g~(s) = g(T-s)
    auto Lrev = [&](const std::vector<double>& x, std::vector<double>& out) {
        ops.apply_A(x, ws.ta, ws.tsum);
        ops.apply_Binv(ws.ta, out);
        ops.apply_Q(x, ws.tq);
        for (std::size_t k = 0; k < N; ++k) out[k] -= ws.tq[k];
    };
    auto addsrc = [&](int halfk, std::vector<double>& kvec) {
        detail::eval_adjoint_data(ops, g, 2 * nt - halfk, gbuf);
        ops.apply_Binv(gbuf, ws.bsrc);
        for (std::size_t k = 0; k < N; ++k) kvec[k] -= ws.bsrc[k];
    };
    for (int n = 0; n < nt; ++n) {
        Lrev(w, ws.k1);
        addsrc(2 * n, ws.k1);
        for (std::size_t k = 0; k < N; ++k) ws.yt[k] = w[k] + 0.5 * dt * ws.k1[k];
        Lrev(ws.yt, ws.k2);
        addsrc(2 * n + 1, ws.k2);
        for (std::size_t k = 0; k < N; ++k) ws.yt[k] = w[k] + 0.5 * dt * ws.k2[k];
        Lrev(ws.yt, ws.k3);
        addsrc(2 * n + 1, ws.k3);
        for (std::size_t k = 0; k < N; ++k) ws.yt[k] = w[k] + dt * ws.k3[k];
        Lrev(ws.yt, ws.k4);
        addsrc(2 * n + 2, ws.k4);
        for (std::size_t k = 0; k < N; ++k)
            w[k] += dt / 6.0 * (ws.k1[k] + 2.0 * ws.k2[k] + 2.0 * ws.k3[k] + ws.k4[k]);
        rec.states[static_cast<std::size_t>(nt - 1 - n)] = w;
    }
    return rec;
}

// ---------------------------------------------------------------------------
// Linearized runs.
// ---------------------------------------------------------------------------

/// Per-site coefficient fields of the linearized stress sources:
///   sigma_0 row gains C(rho^ mu + rho mu~, rho^ pi + rho pi~) eps(v), etc.
struct LinCoeffs {
    std::vector<double> a0, b0, al, bl;  // centers
    std::vector<double> n0, nl;          // nodes, 2m scalars
    std::vector<double> rr_vx, rr_vz;    // rho^ / rho at velocity sites
};

inline LinCoeffs make_lin_coeffs(const DiscreteOperators& ops, const ParameterDirField& d) {
    const Grid2D& g = ops.grid;
    const double alpha = ops.relax.alpha;
    LinCoeffs c;
    const int nc = g.nc();
    c.a0.resize(static_cast<std::size_t>(nc));
    c.b0.resize(static_cast<std::size_t>(nc));
    c.al.resize(static_cast<std::size_t>(nc));
    c.bl.resize(static_cast<std::size_t>(nc));
    for (int k = 0; k < nc; ++k) {
        const rheology::ParameterPoint pt = ops.mat.center_pt[static_cast<std::size_t>(k)];
        const rheology::ParameterDir dd = d.at(k);
        const rheology::Moduli mod = rheology::moduli_from_params(pt, alpha);
        const rheology::PerturbationCoeffs pc = rheology::perturbation_coeffs(pt, alpha, dd);
        c.a0[static_cast<std::size_t>(k)] = dd.rho * mod.mu + pt.rho * pc.mu_tilde;
        c.b0[static_cast<std::size_t>(k)] = dd.rho * mod.pi + pt.rho * pc.pi_tilde;
        c.al[static_cast<std::size_t>(k)] = dd.rho * pt.tauS * mod.mu + pt.rho * pc.mu_hat;
        c.bl[static_cast<std::size_t>(k)] = dd.rho * pt.tauP * mod.pi + pt.rho * pc.pi_hat;
    }
    SiteInterp si{g};
    c.n0.resize(static_cast<std::size_t>(g.nn()));
    c.nl.resize(static_cast<std::size_t>(g.nn()));
    for (int i = 0; i <= g.nx; ++i)
        for (int j = g.node_j0(); j <= g.nz; ++j) {
            const int k = g.in(i, j);
            const rheology::ParameterPoint pt = ops.mat.node_pt[static_cast<std::size_t>(k)];
            rheology::ParameterDir dd{si.at_node(d.rho, i, j), si.at_node(d.vS, i, j),
                                      si.at_node(d.tauS, i, j), si.at_node(d.vP, i, j),
                                      si.at_node(d.tauP, i, j)};
            const rheology::Moduli mod = rheology::moduli_from_params(pt, alpha);
            const rheology::PerturbationCoeffs pc = rheology::perturbation_coeffs(pt, alpha, dd);
            c.n0[static_cast<std::size_t>(k)] = 2.0 * (dd.rho * mod.mu + pt.rho * pc.mu_tilde);
            c.nl[static_cast<std::size_t>(k)] = 2.0 * (dd.rho * pt.tauS * mod.mu + pt.rho * pc.mu_hat);
        }
    c.rr_vx.resize(static_cast<std::size_t>(g.nvx()));
    for (int i = 1; i <= g.nx - 1; ++i)
        for (int j = 0; j < g.nz; ++j) {
            const int k = g.ivx(i, j);
            c.rr_vx[static_cast<std::size_t>(k)] = si.at_vx(d.rho, i, j) / ops.mat.rho_vx[static_cast<std::size_t>(k)];
        }
    c.rr_vz.resize(static_cast<std::size_t>(g.nvz()));
    for (int i = 0; i < g.nx; ++i)
        for (int j = g.vz_j0(); j <= g.nz - 1; ++j) {
            const int k = g.ivz(i, j);
            c.rr_vz[static_cast<std::size_t>(k)] = si.at_vz(d.rho, i, j) / ops.mat.rho_vz[static_cast<std::size_t>(k)];
        }
    return c;
}

/// Forward-system right-hand side u' = B^{-1}(f - A u) - Q u evaluated on a
/// given state; the point source may be null.
inline void forward_rhs(const DiscreteOperators& ops, const std::vector<double>& u,
                        const PointSource* src, int halfk, StepWorkspace& ws,
                        std::vector<double>& du) {
    ops.apply_A(u, ws.ta, ws.tsum);
    if (src) {
        const double a = src->amplitude(halfk);
        for (auto [slot, w] : src->slots) ws.ta[static_cast<std::size_t>(slot)] -= a * w;
    }
    ops.apply_Binv(ws.ta, du);
    ops.apply_Q(u, ws.tq);
    for (std::size_t k = 0; k < du.size(); ++k) du[k] = -du[k] - ws.tq[k];
}

/// Per-stage quantities feeding derivative sources: eps of the stage velocity
/// and the velocity block of the stage right-hand side.  Evaluating sources on
/// the stage vectors of the step map makes the linearized runs the exact
/// derivatives of the discrete forward map.
struct StageQuants {
    std::array<std::vector<double>, 4> epsv;
    std::array<std::vector<double>, 4> dtv;

    StageQuants() = default;
    explicit StageQuants(const StateLayout& lay) {
        for (auto& v : epsv) v.resize(static_cast<std::size_t>(lay.g.ntensor()));
        for (auto& v : dtv) v.resize(static_cast<std::size_t>(lay.g.nvel()));
    }
};

/// RK4 step that also records per-stage (epsv, dtv) of the advanced system.
template <class AddSrc>
void rk4_step_quants(const DiscreteOperators& ops, StepWorkspace& ws, std::vector<double>& u,
                     double dt, AddSrc&& add, StageQuants& q) {
    const std::size_t N = u.size();
    auto grab = [&](int stage, const std::vector<double>& y, const std::vector<double>& k) {
        ops.eps.apply(y.data(), q.epsv[static_cast<std::size_t>(stage)].data());
        std::copy(k.begin(), k.begin() + ops.grid.nvel(), q.dtv[static_cast<std::size_t>(stage)].begin());
    };
    apply_L(ops, u, ws.k1, ws);
    add(0, ws.k1);
    grab(0, u, ws.k1);
    for (std::size_t k = 0; k < N; ++k) ws.yt[k] = u[k] + 0.5 * dt * ws.k1[k];
    apply_L(ops, ws.yt, ws.k2, ws);
    add(1, ws.k2);
    grab(1, ws.yt, ws.k2);
    for (std::size_t k = 0; k < N; ++k) ws.yt[k] = u[k] + 0.5 * dt * ws.k2[k];
    apply_L(ops, ws.yt, ws.k3, ws);
    add(2, ws.k3);
    grab(2, ws.yt, ws.k3);
    for (std::size_t k = 0; k < N; ++k) ws.yt[k] = u[k] + dt * ws.k3[k];
    apply_L(ops, ws.yt, ws.k4, ws);
    add(3, ws.k4);
    grab(3, ws.yt, ws.k4);
    for (std::size_t k = 0; k < N; ++k)
        u[k] += dt / 6.0 * (ws.k1[k] + 2.0 * ws.k2[k] + 2.0 * ws.k3[k] + ws.k4[k]);
}

namespace detail {

/// Add the grouped linearized stress/velocity sources built from (epsv, dtv).
inline void add_lin_source(const DiscreteOperators& ops, const LinCoeffs& c,
                           const std::vector<double>& epsv, const std::vector<double>& dtv,
                           std::vector<double>& kvec, double sign = 1.0) {
    const Grid2D& g = ops.grid;
    const StateLayout& lay = ops.lay;
    for (int k = 0; k < g.nvx(); ++k)
        kvec[static_cast<std::size_t>(k)] -= sign * c.rr_vx[static_cast<std::size_t>(k)] * dtv[static_cast<std::size_t>(k)];
    for (int k = 0; k < g.nvz(); ++k)
        kvec[static_cast<std::size_t>(lay.vz0() + k)] -=
            sign * c.rr_vz[static_cast<std::size_t>(k)] * dtv[static_cast<std::size_t>(lay.vz0() + k)];
    const double* exx = epsv.data();
    const double* ezz = epsv.data() + g.nc();
    const double* exz = epsv.data() + 2 * g.nc();
    for (int l = 0; l <= ops.L(); ++l) {
        const auto& a = (l == 0) ? c.a0 : c.al;
        const auto& b = (l == 0) ? c.b0 : c.bl;
        const auto& nn = (l == 0) ? c.n0 : c.nl;
        double* oxx = kvec.data() + lay.sxx0(l);
        double* ozz = kvec.data() + lay.szz0(l);
        double* oxz = kvec.data() + lay.sxz0(l);
        for (int k = 0; k < g.nc(); ++k) {
            const double t = (b[static_cast<std::size_t>(k)] - 2.0 * a[static_cast<std::size_t>(k)]) * (exx[k] + ezz[k]);
            oxx[k] += sign * (2.0 * a[static_cast<std::size_t>(k)] * exx[k] + t);
            ozz[k] += sign * (2.0 * a[static_cast<std::size_t>(k)] * ezz[k] + t);
        }
        for (int k = 0; k < g.nn(); ++k) oxz[k] += sign * nn[static_cast<std::size_t>(k)] * exz[k];
    }
}

}  // namespace detail

namespace detail {

inline void add_point_source(const DiscreteOperators& ops, const PointSource* src, int halfk,
                             std::vector<double>& kvec) {
    if (!src) return;
    const double a = src->amplitude(halfk);
    if (a == 0.0) return;
    for (auto [slot, w] : src->slots) {
        const double rho = (slot < ops.lay.vz0())
                               ? ops.mat.rho_vx[static_cast<std::size_t>(slot)]
                               : ops.mat.rho_vz[static_cast<std::size_t>(slot - ops.lay.vz0())];
        kvec[static_cast<std::size_t>(slot)] += a * w / rho;
    }
}

}  // namespace detail

/// Linearized forward map: integrates the first-derivative system driven by
/// the recorded base field (stage-consistent sources).
inline RecordedWavefield run_linearized(const DiscreteOperators& ops, const ParameterDirField& d,
                                        const RecordedWavefield& base, const PointSource* src,
                                        double dt, int nt) {
    if (base.nt != nt || std::abs(base.dt - dt) > 1e-15)
        throw std::invalid_argument("run_linearized: base grid/dt mismatch");
    const LinCoeffs lc = make_lin_coeffs(ops, d);
    StepWorkspace ws(ops.lay), wsb(ops.lay);
    StageQuants qb(ops.lay);
    RecordedWavefield rec;
    rec.lay = ops.lay;
    rec.dt = dt;
    rec.nt = nt;
    rec.states.resize(static_cast<std::size_t>(nt) + 1);
    const std::size_t N = static_cast<std::size_t>(ops.lay.size());
    std::vector<double> u(N, 0.0), ub(N);
    rec.states[0] = u;
    int step_n = 0;
    auto addb = [&](int stage, std::vector<double>& kvec) {
        detail::add_point_source(ops, src, 2 * step_n + stage_half[stage], kvec);
    };
    auto addl = [&](int stage, std::vector<double>& kvec) {
        detail::add_lin_source(ops, lc, qb.epsv[static_cast<std::size_t>(stage)],
                               qb.dtv[static_cast<std::size_t>(stage)], kvec);
    };
    for (int n = 0; n < nt; ++n) {
        step_n = n;
        ub = base.at(n);
        rk4_step_quants(ops, wsb, ub, dt, addb, qb);
        rk4_step(ops, ws, u, dt, addl);
        rec.states[static_cast<std::size_t>(n + 1)] = u;
    }
    return rec;
}

/// Per-center / per-node coefficients of the second-derivative stress sources,
/// one isotropic map per site for each block type.  `v` carries the V''-part
/// map M; `cross` carries the eps(v)-sourced map of the cross-term system,
/// E = M + rho1^ C(mu~2,pi~2) + rho2^ C(mu~1,pi~1) + rho C(mu'',pi'').
struct SecondCoeffs {
    std::vector<double> m0, p0, ml, pl;      // centers, V'' part
    std::vector<double> n0, nl;              // nodes (2m scalars), V'' part
    std::vector<double> cm0, cp0, cml, cpl;  // centers, cross part
    std::vector<double> cn0, cnl;            // nodes, cross part
};

inline SecondCoeffs make_second_coeffs(const DiscreteOperators& ops, const ParameterDirField& d1,
                                       const ParameterDirField& d2) {
    const Grid2D& g = ops.grid;
    const double alpha = ops.relax.alpha;
    SecondCoeffs sc;
    auto fill = [&](const rheology::ParameterPoint& pt, const rheology::ParameterDir& a,
                    const rheology::ParameterDir& b, double* out) {
        const rheology::Moduli mod = rheology::moduli_from_params(pt, alpha);
        const auto c1 = rheology::perturbation_coeffs(pt, alpha, a);
        const auto c2 = rheology::perturbation_coeffs(pt, alpha, b);
        const auto cc = rheology::curvature_coeffs(pt, alpha, a, b);
        const double rho = pt.rho;
        // M = 2 (r1 r2 / rho) C(m,p) + r1 C(a2,b2) + r2 C(a1,b1)
        //     - rho C(m'',p'') + rho [C1 Ct C2 + C2 Ct C1]
        auto combine = [&](double m, double p, double a1, double b1, double a2, double b2,
                           double cm, double cp, double& om, double& op, double& em, double& ep) {
            const rheology::IsotropicMap ct = rheology::invert_isotropic_map({m, p, 2});
            const auto s12 = rheology::compose(rheology::compose({a1, b1, 2}, ct), {a2, b2, 2});
            const auto s21 = rheology::compose(rheology::compose({a2, b2, 2}, ct), {a1, b1, 2});
            om = 2.0 * a.rho * b.rho / rho * m + a.rho * a2 + b.rho * a1 - rho * cm +
                 rho * (s12.m + s21.m);
            op = 2.0 * a.rho * b.rho / rho * p + a.rho * b2 + b.rho * b1 - rho * cp +
                 rho * (s12.p + s21.p);
            em = om + a.rho * a2 + b.rho * a1 + rho * cm;
            ep = op + a.rho * b2 + b.rho * b1 + rho * cp;
        };
        combine(mod.mu, mod.pi, c1.mu_tilde, c1.pi_tilde, c2.mu_tilde, c2.pi_tilde, cc.mu_pp,
                cc.pi_pp, out[0], out[1], out[4], out[5]);
        combine(pt.tauS * mod.mu, pt.tauP * mod.pi, c1.mu_hat, c1.pi_hat, c2.mu_hat, c2.pi_hat,
                cc.msu_pp, cc.psu_pp, out[2], out[3], out[6], out[7]);
    };
    const int nc = g.nc();
    for (auto* v : {&sc.m0, &sc.p0, &sc.ml, &sc.pl, &sc.cm0, &sc.cp0, &sc.cml, &sc.cpl})
        v->resize(static_cast<std::size_t>(nc));
    for (int k = 0; k < nc; ++k) {
        double out[8];
        fill(ops.mat.center_pt[static_cast<std::size_t>(k)], d1.at(k), d2.at(k), out);
        const auto kk = static_cast<std::size_t>(k);
        sc.m0[kk] = out[0];
        sc.p0[kk] = out[1];
        sc.ml[kk] = out[2];
        sc.pl[kk] = out[3];
        sc.cm0[kk] = out[4];
        sc.cp0[kk] = out[5];
        sc.cml[kk] = out[6];
        sc.cpl[kk] = out[7];
    }
    SiteInterp si{g};
    for (auto* v : {&sc.n0, &sc.nl, &sc.cn0, &sc.cnl}) v->resize(static_cast<std::size_t>(g.nn()));
    for (int i = 0; i <= g.nx; ++i)
        for (int j = g.node_j0(); j <= g.nz; ++j) {
            const int k = g.in(i, j);
            rheology::ParameterDir a{si.at_node(d1.rho, i, j), si.at_node(d1.vS, i, j),
                                     si.at_node(d1.tauS, i, j), si.at_node(d1.vP, i, j),
                                     si.at_node(d1.tauP, i, j)};
            rheology::ParameterDir b{si.at_node(d2.rho, i, j), si.at_node(d2.vS, i, j),
                                     si.at_node(d2.tauS, i, j), si.at_node(d2.vP, i, j),
                                     si.at_node(d2.tauP, i, j)};
            double out[8];
            fill(ops.mat.node_pt[static_cast<std::size_t>(k)], a, b, out);
            const auto kk = static_cast<std::size_t>(k);
            sc.n0[kk] = 2.0 * out[0];
            sc.nl[kk] = 2.0 * out[2];
            sc.cn0[kk] = 2.0 * out[4];
            sc.cnl[kk] = 2.0 * out[6];
        }
    return sc;
}

namespace detail {

/// Add sign * [per-site isotropic map] eps into the tensor blocks of kvec.
inline void add_tensor_source(const DiscreteOperators& ops, const std::vector<double>& m0,
                              const std::vector<double>& p0, const std::vector<double>& ml,
                              const std::vector<double>& pl, const std::vector<double>& n0,
                              const std::vector<double>& nl, const std::vector<double>& epsv,
                              std::vector<double>& kvec, double sign) {
    const Grid2D& g = ops.grid;
    const double* exx = epsv.data();
    const double* ezz = epsv.data() + g.nc();
    const double* exz = epsv.data() + 2 * g.nc();
    for (int l = 0; l <= ops.L(); ++l) {
        const auto& m = (l == 0) ? m0 : ml;
        const auto& p = (l == 0) ? p0 : pl;
        const auto& nn = (l == 0) ? n0 : nl;
        double* oxx = kvec.data() + ops.lay.sxx0(l);
        double* ozz = kvec.data() + ops.lay.szz0(l);
        double* oxz = kvec.data() + ops.lay.sxz0(l);
        for (int k = 0; k < g.nc(); ++k) {
            const double t = (p[static_cast<std::size_t>(k)] - 2.0 * m[static_cast<std::size_t>(k)]) * (exx[k] + ezz[k]);
            oxx[k] += sign * (2.0 * m[static_cast<std::size_t>(k)] * exx[k] + t);
            ozz[k] += sign * (2.0 * m[static_cast<std::size_t>(k)] * ezz[k] + t);
        }
        for (int k = 0; k < g.nn(); ++k) oxz[k] += sign * nn[static_cast<std::size_t>(k)] * exz[k];
    }
}

}  // namespace detail

/// Second-derivative application: returns (cross-term field, V''-term field);
/// the full second derivative is their sum.  All sources are evaluated on the
/// stage vectors of the step map.
inline std::pair<RecordedWavefield, RecordedWavefield> run_second_linearized(
    const DiscreteOperators& ops, const ParameterDirField& d1, const ParameterDirField& d2,
    const RecordedWavefield& base, const RecordedWavefield& lin1, const RecordedWavefield& lin2,
    const PointSource* src, double dt, int nt) {
    if (lin1.nt != nt || lin2.nt != nt || base.nt != nt)
        throw std::invalid_argument("run_second_linearized: mismatched inputs");
    const LinCoeffs lc1 = make_lin_coeffs(ops, d1);
    const LinCoeffs lc2 = make_lin_coeffs(ops, d2);
    const SecondCoeffs sc = make_second_coeffs(ops, d1, d2);

    StepWorkspace wsb(ops.lay), ws1(ops.lay), ws2(ops.lay), wsc(ops.lay), wsv(ops.lay);
    StageQuants qb(ops.lay), q1(ops.lay), q2(ops.lay);
    const std::size_t N = static_cast<std::size_t>(ops.lay.size());

    RecordedWavefield cross, vpart;
    for (RecordedWavefield* r : {&cross, &vpart}) {
        r->lay = ops.lay;
        r->dt = dt;
        r->nt = nt;
        r->states.resize(static_cast<std::size_t>(nt) + 1);
    }
    std::vector<double> ub(N), u1(N), u2(N), uc(N, 0.0), uv(N, 0.0);
    cross.states[0] = uc;
    vpart.states[0] = uv;

    int step_n = 0;
    auto addb = [&](int stage, std::vector<double>& kvec) {
        detail::add_point_source(ops, src, 2 * step_n + stage_half[stage], kvec);
    };
    auto addl1 = [&](int stage, std::vector<double>& kvec) {
        detail::add_lin_source(ops, lc1, qb.epsv[static_cast<std::size_t>(stage)],
                               qb.dtv[static_cast<std::size_t>(stage)], kvec);
    };
    auto addl2 = [&](int stage, std::vector<double>& kvec) {
        detail::add_lin_source(ops, lc2, qb.epsv[static_cast<std::size_t>(stage)],
                               qb.dtv[static_cast<std::size_t>(stage)], kvec);
    };
    auto addc = [&](int stage, std::vector<double>& kvec) {
        const auto st = static_cast<std::size_t>(stage);
        detail::add_lin_source(ops, lc1, q2.epsv[st], q2.dtv[st], kvec);
        detail::add_lin_source(ops, lc2, q1.epsv[st], q1.dtv[st], kvec);
        detail::add_tensor_source(ops, sc.cm0, sc.cp0, sc.cml, sc.cpl, sc.cn0, sc.cnl,
                                  qb.epsv[st], kvec, 1.0);
    };
    auto addv = [&](int stage, std::vector<double>& kvec) {
        detail::add_tensor_source(ops, sc.m0, sc.p0, sc.ml, sc.pl, sc.n0, sc.nl,
                                  qb.epsv[static_cast<std::size_t>(stage)], kvec, -1.0);
    };
    for (int n = 0; n < nt; ++n) {
        step_n = n;
        ub = base.at(n);
        rk4_step_quants(ops, wsb, ub, dt, addb, qb);
        u1 = lin1.at(n);
        rk4_step_quants(ops, ws1, u1, dt, addl1, q1);
        u2 = lin2.at(n);
        rk4_step_quants(ops, ws2, u2, dt, addl2, q2);
        rk4_step(ops, wsc, uc, dt, addc);
        rk4_step(ops, wsv, uv, dt, addv);
        cross.states[static_cast<std::size_t>(n + 1)] = uc;
        vpart.states[static_cast<std::size_t>(n + 1)] = uv;
    }
    return {std::move(cross), std::move(vpart)};
}

}  // namespace viscoadjoint::wave2d
