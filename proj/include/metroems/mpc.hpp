#pragma once

#include <algorithm>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "grid.hpp"
#include "model.hpp"
#include "scenarios.hpp"
#include "sdp.hpp"

namespace metroems {

// ---------------------------------------------------------------------------
// Rolling-horizon controller: certainty-equivalent reoptimization against a
// point braking forecast, solved by deterministic dynamic programming on the
// shared state grid.

enum class MpcSolver { deterministic_dp, external_milp };

inline std::string to_string(MpcSolver s) {
    return s == MpcSolver::deterministic_dp ? "deterministic-dp" : "external-milp";
}

struct MpcConfig {
    int reopt_every = 1;  // reoptimize every this many steps
    int lookahead = 60;   // window length, truncated near the horizon end
    MpcSolver solver = MpcSolver::deterministic_dp;
    bool bias_correction = true;  // forecast in natural units, not log units

    void validate() const {
        if (reopt_every < 1) throw std::invalid_argument("MpcConfig: reopt_every must be >= 1");
        if (lookahead < reopt_every)
            throw std::invalid_argument("MpcConfig: lookahead must be >= reopt_every");
    }
};

/// Open-loop plan for a deterministic window problem. states[] is the replay
/// from the exact (unclamped) start state, so cost is the value actually
/// obtained by following controls[] under the forecast, not a grid
/// interpolation of V_0.
struct DeterministicPlan {
    std::vector<Control> controls;  // h entries, stages t0..t0+h-1
    std::vector<State> states;      // h+1 entries
    double cost = 0.0;
    bool clamped_start = false;
};

/// Solve the h-step deterministic problem starting at stage t0 from x0 with
/// point braking forecast b̂ for steps t0+1..t0+h. Backward induction runs on
/// the grid; the returned plan is a forward replay from the exact x0 with
/// continuations interpolated from the window value planes. Control
/// enumeration order and tie-breaking match the stochastic inductions.
inline DeterministicPlan solve_deterministic(const StationModel& m,
                                             const DeterministicProfiles& profiles,
                                             const StateGrid& grid, const ControlMesh& mesh,
                                             int t0, const State& x0,
                                             const std::vector<double>& braking_forecast, int h) {
    const int T = m.grid.horizon_steps;
    if (t0 < 0 || t0 >= T) throw std::invalid_argument("solve_deterministic: t0 out of range");
    if (h < 1 || t0 + h > T)
        throw std::invalid_argument("solve_deterministic: window must satisfy 1 <= h <= T - t0");
    if (static_cast<int>(braking_forecast.size()) != h)
        throw std::invalid_argument("solve_deterministic: forecast length must equal h");
    profiles.validate(T);

    const int ns = grid.soc.size();
    const int nc = grid.pm10.size();
    const size_t cells = static_cast<size_t>(ns) * nc;

    std::vector<detail::SocStencil> stencils;
    stencils.reserve(mesh.controls.size());
    for (const Control& u : mesh.controls)
        stencils.push_back(detail::make_soc_stencil(m, grid.soc, u.battery_kw));

    // V[r] for r = 0..h, window-relative; V[h] = 0 (the continuation beyond
    // the window is ignored by construction).
    std::vector<std::vector<double>> V(static_cast<size_t>(h) + 1,
                                       std::vector<double>(cells, 0.0));
    std::vector<double> g_low(cells), g_high(cells), exp_import(mesh.controls.size());
    const double weight_one = 1.0;

    for (int r = h - 1; r >= 0; --r) {
        const int s = t0 + r;
        const NoiseVector wd = profiles.noise_at(s + 1, 0.0);
        const double tariff = m.econ.tariff_eur_per_kw[s];
        const double bhat = braking_forecast[r];
        const detail::Pm10Step pm10_steps[2] = {
            detail::make_pm10_step(m, grid.pm10, VentMode::low, wd),
            detail::make_pm10_step(m, grid.pm10, VentMode::high, wd)};
        detail::pm10_interp_plane(pm10_steps[0], V[r + 1].data(), ns, nc, g_low.data());
        detail::pm10_interp_plane(pm10_steps[1], V[r + 1].data(), ns, nc, g_high.data());
        const double* g_planes[2] = {g_low.data(), g_high.data()};
        for (size_t ui = 0; ui < mesh.controls.size(); ++ui) {
            const Control& u = mesh.controls[ui];
            const double base = wd.demand_kw + m.vent_power(u.vent) + u.battery_kw;
            exp_import[ui] = detail::expected_import_cost(tariff, base, &bhat, &weight_one, 1);
        }
        detail::argmin_sweep(m, mesh, stencils, pm10_steps, exp_import, g_planes, ns, nc,
                             V[r].data());
    }

    DeterministicPlan plan;
    plan.controls.reserve(h);
    plan.states.reserve(static_cast<size_t>(h) + 1);

    State x = x0;
    if (x.soc_kwh < grid.soc.nodes.front() || x.soc_kwh > grid.soc.nodes.back() ||
        x.pm10_ugm3 < grid.pm10.nodes.front() || x.pm10_ugm3 > grid.pm10.nodes.back()) {
        plan.clamped_start = true;
        x.soc_kwh = std::clamp(x.soc_kwh, grid.soc.nodes.front(), grid.soc.nodes.back());
        x.pm10_ugm3 = std::clamp(x.pm10_ugm3, grid.pm10.nodes.front(), grid.pm10.nodes.back());
    }
    plan.states.push_back(x);

    for (int r = 0; r < h; ++r) {
        const int s = t0 + r;
        const NoiseVector w_next = profiles.noise_at(s + 1, braking_forecast[r]);
        const double tariff = m.econ.tariff_eur_per_kw[s];
        double c_next[2];
        for (int v = 0; v < 2; ++v)
            c_next[v] = step_pm10(m.air, m.grid, x.pm10_ugm3,
                                  m.vent_power(static_cast<VentMode>(v)), w_next);
        double best = std::numeric_limits<double>::infinity();
        const Control* best_u = nullptr;
        for (const Control& u : mesh.controls) {
            const double s_next = step_soc(m.battery, m.grid, x.soc_kwh, u.battery_kw);
            if (!detail::soc_feasible(m, s_next)) continue;
            const int v = static_cast<int>(u.vent);
            const double base = w_next.demand_kw + m.vent_power(u.vent) + u.battery_kw;
            const double q = tariff * std::max(base - braking_forecast[r], 0.0) +
                             m.econ.lambda_comfort * c_next[v] +
                             grid.interpolate(V[r + 1].data(), State{s_next, c_next[v]});
            if (q < best) {
                best = q;
                best_u = &u;
            }
        }
        if (!best_u) throw std::runtime_error("solve_deterministic: no feasible control in replay");
        const State x1 = dynamics(m, s, x, *best_u, w_next);
        plan.cost += stage_cost(m, s, x, *best_u, w_next, x1);
        plan.controls.push_back(*best_u);
        plan.states.push_back(x1);
        x = x1;
    }
    return plan;
}

/// Point braking forecast: b̂ for steps first_step..first_step+n-1, given the
/// braking observed at first_step-1.
using ForecastFn = std::function<std::vector<double>(int first_step, double b_observed, int n)>;

/// Certainty-equivalent rolling-horizon controller. A fresh window problem is
/// solved at t = 0 and then every reopt_every steps; between reoptimizations
/// the cached open-loop plan is served. Because braking never enters the
/// state dynamics, the cached plan's states track the closed-loop states
/// exactly and the cache can never go stale within a scenario.
class MpcController final : public Policy {
public:
    MpcController(StationModel model, DeterministicProfiles profiles, StateGrid grid,
                  ControlMesh mesh, MpcConfig cfg, ForecastFn forecast)
        : model_(std::move(model)),
          profiles_(std::move(profiles)),
          grid_(std::move(grid)),
          mesh_(std::move(mesh)),
          cfg_(cfg),
          forecast_(std::move(forecast)) {
        cfg_.validate();
        if (cfg_.solver == MpcSolver::external_milp)
            throw std::invalid_argument(
                "MpcController: external-milp solver is not available in this build; "
                "use deterministic-dp (export-milp emits the window model for external runs)");
        if (!forecast_) throw std::invalid_argument("MpcController: forecast function is empty");
    }

    Control decide(int t, const State& x, const NoiseVector& w) override {
        const int T = model_.grid.horizon_steps;
        if (t < 0 || t >= T) throw std::invalid_argument("MpcController: stage out of range");
        const bool stale = plan_start_ < 0 || t < plan_start_ ||
                           t - plan_start_ >= cfg_.reopt_every ||
                           t - plan_start_ >= static_cast<int>(plan_.controls.size());
        if (stale) {
            const int h = std::min(cfg_.lookahead, T - t);
            const std::vector<double> bhat = forecast_(t + 1, w.braking_kw, h);
            plan_ = solve_deterministic(model_, profiles_, grid_, mesh_, t, x, bhat, h);
            plan_start_ = t;
            ++reoptimizations_;
            if (plan_.clamped_start) ++clamp_warnings_;
        }
        return plan_.controls[static_cast<size_t>(t - plan_start_)];
    }

    std::unique_ptr<Policy> clone() const override { return std::make_unique<MpcController>(*this); }
    std::string name() const override { return "mpc"; }
    void reset() override {
        plan_start_ = -1;
        plan_ = DeterministicPlan{};
    }

    long reoptimizations() const { return reoptimizations_; }
    long clamp_warnings() const { return clamp_warnings_; }

private:
    StationModel model_;
    DeterministicProfiles profiles_;
    StateGrid grid_;
    ControlMesh mesh_;
    MpcConfig cfg_;
    ForecastFn forecast_;
    DeterministicPlan plan_;
    int plan_start_ = -1;
    long reoptimizations_ = 0;
    long clamp_warnings_ = 0;
};

/// Controller with a custom forecast (tests use a perfect forecaster here).
inline std::unique_ptr<Policy> mpc_controller(const StationModel& m,
                                              const DeterministicProfiles& profiles,
                                              const StateGrid& grid, const ControlMesh& mesh,
                                              const MpcConfig& cfg, ForecastFn forecast) {
    return std::make_unique<MpcController>(m, profiles, grid, mesh, cfg, std::move(forecast));
}

/// Controller forecasting through a fitted braking recursion.
inline std::unique_ptr<Policy> mpc_controller(const StationModel& m,
                                              const DeterministicProfiles& profiles,
                                              const StateGrid& grid, const ControlMesh& mesh,
                                              const MpcConfig& cfg, const NoiseModel& noise) {
    const bool bias = cfg.bias_correction;
    ForecastFn fn = [noise, bias](int first_step, double b_observed, int n) {
        return forecast_braking(noise, first_step, b_observed, n, bias);
    };
    return mpc_controller(m, profiles, grid, mesh, cfg, std::move(fn));
}

}  // namespace metroems
