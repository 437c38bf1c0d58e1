#pragma once

// Stochastic dynamic programming on the discretized station model, in two
// flavors: SDPO quantizes the braking marginals per step (stagewise
// independence), SDPA augments the state with the last braking value and
// drives it with quantized log-AR(1) innovations. Both store value tables
// over the grid; the online policies re-solve the one-step problem at the
// exact state using the appropriate noise view.
//
// The inductions exploit the model structure: the SOC successor depends
// only on (soc node, battery level), the PM10 successor only on (pm10 node,
// vent mode, step), and the braking atom enters the import cost alone. Each
// stage therefore reduces to a handful of interpolated planes plus one
// dense argmin sweep, which keeps full-horizon runs in seconds.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <stdexcept>
#include <vector>

#include "grid.hpp"
#include "model.hpp"
#include "parallel.hpp"
#include "scenarios.hpp"

namespace metroems {

namespace detail {

/// SOC transition stencil for one control: bracket and feasibility per soc
/// node. Feasibility uses a 1e-9 absolute slack so controls that land
/// exactly on a bound are kept.
struct SocStencil {
    std::vector<int> k;        // lower bracket index per soc node
    std::vector<double> theta; // interpolation weight per soc node
    int i_lo = 0, i_hi = -1;   // inclusive feasible node range (empty if i_hi < i_lo)
};

inline SocStencil make_soc_stencil(const StationModel& m, const Axis& soc, double battery_kw) {
    SocStencil st;
    const int n = soc.size();
    st.k.resize(n);
    st.theta.resize(n);
    const double lo = m.battery.soc_min_kwh - soc_bound_slack_kwh;
    const double hi = m.battery.soc_max_kwh + soc_bound_slack_kwh;
    st.i_lo = n;
    st.i_hi = -1;
    for (int i = 0; i < n; ++i) {
        const double s_next = step_soc(m.battery, m.grid, soc.nodes[i], battery_kw);
        const auto b = soc.bracket(s_next);
        st.k[i] = b.i;
        st.theta[i] = b.theta;
        if (s_next >= lo && s_next <= hi) {
            st.i_lo = std::min(st.i_lo, i);
            st.i_hi = std::max(st.i_hi, i);
        }
    }
    return st;
}

/// Per-step PM10 successor data for one vent mode: next concentration and
/// its bracket per pm10 node.
struct Pm10Step {
    std::vector<double> c_next;
    std::vector<int> jk;
    std::vector<double> theta;
};

inline Pm10Step make_pm10_step(const StationModel& m, const Axis& pm10, VentMode v,
                               const NoiseVector& w_next) {
    Pm10Step ps;
    const int n = pm10.size();
    ps.c_next.resize(n);
    ps.jk.resize(n);
    ps.theta.resize(n);
    const double p_v = m.vent_power(v);
    for (int j = 0; j < n; ++j) {
        ps.c_next[j] = step_pm10(m.air, m.grid, pm10.nodes[j], p_v, w_next);
        const auto b = pm10.bracket(ps.c_next[j]);
        ps.jk[j] = b.i;
        ps.theta[j] = b.theta;
    }
    return ps;
}

/// values[j][i] -> out[j][i]: interpolate the pm10 coordinate through one
/// step, leaving soc untouched.
inline void pm10_interp_plane(const Pm10Step& ps, const double* values, int n_soc, int n_pm10,
                              double* out) {
    for (int j = 0; j < n_pm10; ++j) {
        const int jk = ps.jk[j];
        const double th = ps.theta[j];
        const double* lo = values + static_cast<size_t>(jk) * n_soc;
        const double* hi = values + static_cast<size_t>(std::min(jk + 1, n_pm10 - 1)) * n_soc;
        double* row = out + static_cast<size_t>(j) * n_soc;
        if (th == 0.0) {
            std::copy(lo, lo + n_soc, row);
        } else {
            const double om = 1.0 - th;
            for (int i = 0; i < n_soc; ++i) row[i] = om * lo[i] + th * hi[i];
        }
    }
}

/// Expected positive-part import cost for one control against a set of
/// braking atoms: tariff * sum_k q_k max(base - b_k, 0).
inline double expected_import_cost(double tariff, double base, const double* atoms,
                                   const double* weights, int K) {
    double acc = 0.0;
    for (int k = 0; k < K; ++k) acc += weights[k] * std::max(base - atoms[k], 0.0);
    return tariff * acc;
}

/// Dense argmin sweep writing V_t over one [pm10][soc] plane. Controls are
/// visited in canonical mesh order with strict improvement, so exact ties
/// resolve to the lower-effort control.
inline void argmin_sweep(const StationModel& m, const ControlMesh& mesh,
                         const std::vector<SocStencil>& stencils,
                         const Pm10Step pm10_steps[2], const std::vector<double>& exp_import,
                         const double* const g_planes[2], int n_soc, int n_pm10, double* v_out) {
    const size_t cells = static_cast<size_t>(n_soc) * n_pm10;
    std::fill(v_out, v_out + cells, std::numeric_limits<double>::infinity());
    for (int ui = 0; ui < mesh.size(); ++ui) {
        const Control& u = mesh.controls[ui];
        const int vent = static_cast<int>(u.vent);
        const SocStencil& st = stencils[ui];
        if (st.i_hi < st.i_lo) continue;
        const Pm10Step& ps = pm10_steps[vent];
        const double* g = g_planes[vent];
        const double base_cost = exp_import[ui];
        for (int j = 0; j < n_pm10; ++j) {
            const double stage = base_cost + m.econ.lambda_comfort * ps.c_next[j];
            const double* grow = g + static_cast<size_t>(j) * n_soc;
            double* vrow = v_out + static_cast<size_t>(j) * n_soc;
            for (int i = st.i_lo; i <= st.i_hi; ++i) {
                const int k = st.k[i];
                const double th = st.theta[i];
                const double cont =
                    th == 0.0 ? grow[k] : (1.0 - th) * grow[k] + th * grow[std::min(k + 1, n_soc - 1)];
                const double cand = stage + cont;
                if (cand < vrow[i]) vrow[i] = cand;
            }
        }
    }
    for (size_t c = 0; c < cells; ++c)
        if (!(v_out[c] < std::numeric_limits<double>::infinity()))
            throw std::runtime_error("backward induction: state with no feasible control");
}

} // namespace detail

// ---------------------------------------------------------------------------
// Offline phase

/// Backward induction under stagewise-independent quantized braking
/// marginals. Returns V_t on the state grid for t = 0..T.
inline ValueTable backward_induction_sdpo(const StationModel& m,
                                          const DeterministicProfiles& profiles,
                                          const StateGrid& grid, const ControlMesh& mesh,
                                          const std::vector<DiscreteDist>& marginals,
                                          std::uint64_t model_hash = 0) {
    m.validate();
    grid.validate();
    const int T = m.grid.horizon_steps;
    profiles.validate(T);
    if (static_cast<int>(marginals.size()) != T + 1)
        throw std::invalid_argument("backward_induction_sdpo: need marginals indexed 0..T");

    ValueTable V = ValueTable::zeros(grid, Axis{{0.0}}, T, model_hash);
    const int ns = grid.soc.size(), nc = grid.pm10.size();

    std::vector<detail::SocStencil> stencils;
    stencils.reserve(mesh.size());
    for (const Control& u : mesh.controls)
        stencils.push_back(detail::make_soc_stencil(m, grid.soc, u.battery_kw));

    std::vector<double> g_low(grid.size()), g_high(grid.size());
    std::vector<double> exp_import(mesh.size());
    for (int t = T - 1; t >= 0; --t) {
        // Stage t consumes the step-(t+1) noise and is billed at p_{t+1},
        // which tariff[] stores at index t.
        const NoiseVector w_det = profiles.noise_at(t + 1, 0.0);
        const detail::Pm10Step pm10_steps[2] = {
            detail::make_pm10_step(m, grid.pm10, VentMode::low, w_det),
            detail::make_pm10_step(m, grid.pm10, VentMode::high, w_det)};
        detail::pm10_interp_plane(pm10_steps[0], V.plane(t + 1), ns, nc, g_low.data());
        detail::pm10_interp_plane(pm10_steps[1], V.plane(t + 1), ns, nc, g_high.data());
        const DiscreteDist& mu = marginals[t + 1];
        if (mu.size() == 0)
            throw std::invalid_argument("backward_induction_sdpo: empty marginal at step " +
                                        std::to_string(t + 1));
        for (int ui = 0; ui < mesh.size(); ++ui) {
            const Control& u = mesh.controls[ui];
            const double base = w_det.demand_kw + m.vent_power(u.vent) + u.battery_kw;
            exp_import[ui] = detail::expected_import_cost(
                m.econ.tariff_eur_per_kw[t], base, mu.atoms.data(), mu.weights.data(), mu.size());
        }
        const double* g_planes[2] = {g_low.data(), g_high.data()};
        detail::argmin_sweep(m, mesh, stencils, pm10_steps, exp_import, g_planes, ns, nc,
                             V.plane(t));
    }
    return V;
}

/// Backward induction on the noise-augmented state (x, w): w is the braking
/// seen over the previous step, propagated by the fitted log-AR(1) recursion
/// with quantized per-step innovations. Returns V_t over grid x noise_axis.
inline ValueTable backward_induction_sdpa(const StationModel& m,
                                          const DeterministicProfiles& profiles,
                                          const StateGrid& grid, const ControlMesh& mesh,
                                          const Axis& noise_axis, double ar_a, double eps_log,
                                          const std::vector<DiscreteDist>& residual_atoms,
                                          ThreadPool* pool = nullptr,
                                          std::uint64_t model_hash = 0) {
    m.validate();
    grid.validate();
    noise_axis.validate();
    const int T = m.grid.horizon_steps;
    profiles.validate(T);
    if (static_cast<int>(residual_atoms.size()) != T + 1)
        throw std::invalid_argument("backward_induction_sdpa: need atom sets indexed 0..T");

    NoiseModel ar;
    ar.a = ar_a;
    ar.eps_log = eps_log;

    ValueTable V = ValueTable::zeros(grid, noise_axis, T, model_hash);
    const int ns = grid.soc.size(), nc = grid.pm10.size(), nw = noise_axis.size();
    const size_t plane_cells = static_cast<size_t>(grid.size());

    std::vector<detail::SocStencil> stencils;
    stencils.reserve(mesh.size());
    for (const Control& u : mesh.controls)
        stencils.push_back(detail::make_soc_stencil(m, grid.soc, u.battery_kw));

    // Per-l scratch: expected next-stage value plane and its pm10 interps.
    struct Scratch {
        std::vector<double> evw, g_low, g_high, exp_import;
    };
    const int workers = pool ? pool->threads() : 1;
    std::vector<Scratch> scratch(workers);
    for (auto& s : scratch) {
        s.evw.resize(plane_cells);
        s.g_low.resize(plane_cells);
        s.g_high.resize(plane_cells);
        s.exp_import.resize(mesh.size());
    }
    for (int t = T - 1; t >= 0; --t) {
        const NoiseVector w_det = profiles.noise_at(t + 1, 0.0);
        const detail::Pm10Step pm10_steps[2] = {
            detail::make_pm10_step(m, grid.pm10, VentMode::low, w_det),
            detail::make_pm10_step(m, grid.pm10, VentMode::high, w_det)};
        const DiscreteDist& z = residual_atoms[t + 1];
        const int Kz = z.size();
        if (Kz < 1 || Kz > 64)
            throw std::invalid_argument("backward_induction_sdpa: atom count out of range at step " +
                                        std::to_string(t + 1));
        const double* v_next = V.plane(t + 1);
        double* v_here = V.plane(t);

        auto do_level = [&](long l, int slot) {
            Scratch& sc = scratch[slot];
            // Successor braking atoms for this memory level.
            double w_atoms[64];
            for (int k = 0; k < Kz; ++k)
                w_atoms[k] = ar.propagate(noise_axis.nodes[l], z.atoms[k]);
            // Expected next value plane over the successor-noise coordinate.
            std::fill(sc.evw.begin(), sc.evw.end(), 0.0);
            for (int k = 0; k < Kz; ++k) {
                const auto bw = noise_axis.bracket(w_atoms[k]);
                const double q = z.weights[k];
                const double* plo = v_next + static_cast<size_t>(bw.i) * plane_cells;
                const double* phi =
                    v_next + static_cast<size_t>(std::min(bw.i + 1, nw - 1)) * plane_cells;
                const double wlo = q * (1.0 - bw.theta), whi = q * bw.theta;
                if (whi == 0.0) {
                    for (size_t c = 0; c < plane_cells; ++c) sc.evw[c] += wlo * plo[c];
                } else {
                    for (size_t c = 0; c < plane_cells; ++c)
                        sc.evw[c] += wlo * plo[c] + whi * phi[c];
                }
            }
            detail::pm10_interp_plane(pm10_steps[0], sc.evw.data(), ns, nc, sc.g_low.data());
            detail::pm10_interp_plane(pm10_steps[1], sc.evw.data(), ns, nc, sc.g_high.data());
            for (int ui = 0; ui < mesh.size(); ++ui) {
                const Control& u = mesh.controls[ui];
                const double base = w_det.demand_kw + m.vent_power(u.vent) + u.battery_kw;
                sc.exp_import[ui] = detail::expected_import_cost(
                    m.econ.tariff_eur_per_kw[t], base, w_atoms, z.weights.data(), Kz);
            }
            const double* g_planes[2] = {sc.g_low.data(), sc.g_high.data()};
            detail::argmin_sweep(m, mesh, stencils, pm10_steps, sc.exp_import, g_planes, ns, nc,
                                 v_here + static_cast<size_t>(l) * plane_cells);
        };
        if (pool)
            pool->parallel_for_slots(nw, do_level);
        else
            for (long l = 0; l < nw; ++l) do_level(l, 0);
    }
    return V;
}

// ---------------------------------------------------------------------------
// Online noise views

/// Where a policy's one-step braking distribution comes from: either the
/// offline per-step marginals, or the conditional distribution implied by
/// the fitted recursion and its quantized innovations.
class ConditionalSource {
public:
    static ConditionalSource from_marginals(std::vector<DiscreteDist> marginals) {
        ConditionalSource s;
        s.kind_ = Kind::marginal;
        s.table_ = std::move(marginals);
        return s;
    }

    static ConditionalSource from_log_ar1(double a, double eps_log,
                                          std::vector<DiscreteDist> residual_atoms) {
        ConditionalSource s;
        s.kind_ = Kind::log_ar1;
        s.ar_.a = a;
        s.ar_.eps_log = eps_log;
        s.table_ = std::move(residual_atoms);
        return s;
    }

    /// Full conditional view: per query, push the stored residual pool of
    /// step t through the recursion and re-quantize to K_online atoms.
    static ConditionalSource from_model(NoiseModel model, int k_online, std::uint64_t seed) {
        if (k_online < 1)
            throw std::invalid_argument("ConditionalSource: k_online must be >= 1");
        ConditionalSource s;
        s.kind_ = Kind::pool;
        s.ar_ = std::move(model);
        s.k_online_ = k_online;
        s.seed_ = seed;
        return s;
    }

    bool conditional() const { return kind_ != Kind::marginal; }
    int horizon_steps() const {
        return kind_ == Kind::pool ? ar_.horizon_steps()
                                   : static_cast<int>(table_.size()) - 1;
    }

    /// Braking atoms for step t (1..T) given the previously observed value.
    DiscreteDist at(int t, double b_prev) const {
        if (t < 1 || t > horizon_steps())
            throw std::invalid_argument("ConditionalSource: step outside 1..T");
        if (kind_ == Kind::pool)
            return conditional_distribution(ar_, t, b_prev, k_online_, seed_);
        if (kind_ == Kind::marginal) return table_[t];
        DiscreteDist d = table_[t];
        for (double& atom : d.atoms) atom = ar_.propagate(b_prev, atom);
        return d;
    }

private:
    enum class Kind { marginal, log_ar1, pool };
    Kind kind_ = Kind::marginal;
    NoiseModel ar_; // log_ar1: only a / eps_log; pool: full model with residuals
    std::vector<DiscreteDist> table_;
    int k_online_ = 0;
    std::uint64_t seed_ = 0;
};

// ---------------------------------------------------------------------------
// Policies

namespace detail {

inline bool soc_feasible(const StationModel& m, double soc_next) {
    return soc_next >= m.battery.soc_min_kwh - soc_bound_slack_kwh &&
           soc_next <= m.battery.soc_max_kwh + soc_bound_slack_kwh;
}

} // namespace detail

/// Online SDPO policy: at (t, x, w) it quantizes the one-step braking view
/// (conditional when a recursion is available, the offline marginals
/// otherwise) and minimizes expected stage cost plus the stored V_{t+1} at
/// the exact successor state.
class SdpoPolicy final : public Policy {
public:
    SdpoPolicy(StationModel model, DeterministicProfiles profiles, ControlMesh mesh,
               std::shared_ptr<const ValueTable> table, ConditionalSource source)
        : model_(std::move(model)),
          profiles_(std::move(profiles)),
          mesh_(std::move(mesh)),
          table_(std::move(table)),
          source_(std::move(source)) {
        if (table_->augmented())
            throw std::invalid_argument("SdpoPolicy: expected an unaugmented value table");
        if (table_->horizon_steps != model_.grid.horizon_steps)
            throw std::invalid_argument("SdpoPolicy: table horizon mismatch");
        if (source_.horizon_steps() != model_.grid.horizon_steps)
            throw std::invalid_argument("SdpoPolicy: noise source horizon mismatch");
    }

    Control decide(int t, const State& x, const NoiseVector& w) override {
        const DiscreteDist mu = source_.at(t + 1, w.braking_kw);
        const double tariff = model_.econ.tariff_eur_per_kw[t];
        double best = std::numeric_limits<double>::infinity();
        const Control* best_u = nullptr;
        double c_next[2];
        const NoiseVector wd = profiles_.noise_at(t + 1, 0.0);
        for (int v = 0; v < 2; ++v)
            c_next[v] = step_pm10(model_.air, model_.grid, x.pm10_ugm3,
                                  model_.vent_power(static_cast<VentMode>(v)), wd);
        for (const Control& u : mesh_.controls) {
            const double s_next = step_soc(model_.battery, model_.grid, x.soc_kwh, u.battery_kw);
            if (!detail::soc_feasible(model_, s_next)) continue;
            const int v = static_cast<int>(u.vent);
            const double base = wd.demand_kw + model_.vent_power(u.vent) + u.battery_kw;
            const double q =
                detail::expected_import_cost(tariff, base, mu.atoms.data(), mu.weights.data(),
                                             mu.size()) +
                model_.econ.lambda_comfort * c_next[v] +
                table_->interpolate(t + 1, State{s_next, c_next[v]});
            if (q < best) {
                best = q;
                best_u = &u;
            }
        }
        if (!best_u) throw std::runtime_error("SdpoPolicy: no feasible control");
        return *best_u;
    }

    std::unique_ptr<Policy> clone() const override { return std::make_unique<SdpoPolicy>(*this); }
    std::string name() const override { return "sdpo"; }

private:
    StationModel model_;
    DeterministicProfiles profiles_;
    ControlMesh mesh_;
    std::shared_ptr<const ValueTable> table_;
    ConditionalSource source_;
};

/// Online SDPA policy: propagates the observed braking through the fitted
/// recursion with quantized innovations and minimizes against the augmented
/// table, interpolating state and memory coordinates at their exact values.
class SdpaPolicy final : public Policy {
public:
    SdpaPolicy(StationModel model, DeterministicProfiles profiles, ControlMesh mesh,
               std::shared_ptr<const ValueTable> table, double ar_a, double eps_log,
               std::vector<DiscreteDist> residual_atoms)
        : model_(std::move(model)),
          profiles_(std::move(profiles)),
          mesh_(std::move(mesh)),
          table_(std::move(table)),
          atoms_(std::move(residual_atoms)) {
        ar_.a = ar_a;
        ar_.eps_log = eps_log;
        if (!table_->augmented())
            throw std::invalid_argument("SdpaPolicy: expected an augmented value table");
        if (table_->horizon_steps != model_.grid.horizon_steps)
            throw std::invalid_argument("SdpaPolicy: table horizon mismatch");
        if (static_cast<int>(atoms_.size()) != model_.grid.horizon_steps + 1)
            throw std::invalid_argument("SdpaPolicy: need atom sets indexed 0..T");
    }

    Control decide(int t, const State& x, const NoiseVector& w) override {
        const DiscreteDist& z = atoms_[t + 1];
        const int K = z.size();
        w_next_.resize(K);
        for (int k = 0; k < K; ++k) w_next_[k] = ar_.propagate(w.braking_kw, z.atoms[k]);

        const double tariff = model_.econ.tariff_eur_per_kw[t];
        double c_next[2];
        const NoiseVector wd = profiles_.noise_at(t + 1, 0.0);
        for (int v = 0; v < 2; ++v)
            c_next[v] = step_pm10(model_.air, model_.grid, x.pm10_ugm3,
                                  model_.vent_power(static_cast<VentMode>(v)), wd);
        double best = std::numeric_limits<double>::infinity();
        const Control* best_u = nullptr;
        for (const Control& u : mesh_.controls) {
            const double s_next = step_soc(model_.battery, model_.grid, x.soc_kwh, u.battery_kw);
            if (!detail::soc_feasible(model_, s_next)) continue;
            const int v = static_cast<int>(u.vent);
            const double base = wd.demand_kw + model_.vent_power(u.vent) + u.battery_kw;
            double q = model_.econ.lambda_comfort * c_next[v];
            const State x_next{s_next, c_next[v]};
            for (int k = 0; k < K; ++k) {
                q += z.weights[k] * (tariff * std::max(base - w_next_[k], 0.0) +
                                     table_->interpolate(t + 1, x_next, w_next_[k]));
            }
            if (q < best) {
                best = q;
                best_u = &u;
            }
        }
        if (!best_u) throw std::runtime_error("SdpaPolicy: no feasible control");
        return *best_u;
    }

    std::unique_ptr<Policy> clone() const override { return std::make_unique<SdpaPolicy>(*this); }
    std::string name() const override { return "sdpa"; }

private:
    StationModel model_;
    DeterministicProfiles profiles_;
    ControlMesh mesh_;
    std::shared_ptr<const ValueTable> table_;
    NoiseModel ar_;
    std::vector<DiscreteDist> atoms_;
    std::vector<double> w_next_;
};

inline std::unique_ptr<Policy> sdpo_policy(const StationModel& m,
                                           const DeterministicProfiles& profiles,
                                           const ControlMesh& mesh,
                                           std::shared_ptr<const ValueTable> table,
                                           ConditionalSource source) {
    return std::make_unique<SdpoPolicy>(m, profiles, mesh, std::move(table), std::move(source));
}

inline std::unique_ptr<Policy> sdpa_policy(const StationModel& m,
                                           const DeterministicProfiles& profiles,
                                           const ControlMesh& mesh,
                                           std::shared_ptr<const ValueTable> table, double ar_a,
                                           double eps_log,
                                           std::vector<DiscreteDist> residual_atoms) {
    return std::make_unique<SdpaPolicy>(m, profiles, mesh, std::move(table), ar_a, eps_log,
                                        std::move(residual_atoms));
}

} // namespace metroems
