#pragma once

// Physical model of the station microgrid: battery storage, two-mode
// ventilation, PM10 air quality, grid import and stage costs. Everything in
// here is immutable value data and pure functions; controllers and
// simulators are built on top.

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace metroems {

// ---------------------------------------------------------------------------
// Parameter blocks

struct TimeGrid {
    double delta_hours = 1.0 / 30.0; // 2 minutes
    int horizon_steps = 720;         // one day
    double day_length_hours = 24.0;

    void validate() const {
        if (horizon_steps < 1) throw std::invalid_argument("TimeGrid: horizon_steps must be >= 1");
        if (delta_hours <= 0) throw std::invalid_argument("TimeGrid: delta_hours must be positive");
        if (std::abs(horizon_steps * delta_hours - day_length_hours) > 1e-9)
            throw std::invalid_argument("TimeGrid: horizon_steps * delta_hours must equal day_length_hours");
    }
};

struct BatteryParams {
    double rho_c = 0.95;       // charge efficiency
    double rho_d = 0.95;       // discharge efficiency
    double capacity_kwh = 100.0;
    double soc_min_kwh = 30.0;
    double soc_max_kwh = 90.0;
    double power_min_kw = -100.0; // discharge bound (negative)
    double power_max_kw = 100.0;  // charge bound

    void validate() const {
        if (!(rho_c > 0 && rho_c <= 1) || !(rho_d > 0 && rho_d <= 1))
            throw std::invalid_argument("BatteryParams: efficiencies must be in (0,1]");
        if (!(0 <= soc_min_kwh && soc_min_kwh < soc_max_kwh && soc_max_kwh <= capacity_kwh))
            throw std::invalid_argument("BatteryParams: need 0 <= soc_min < soc_max <= capacity");
        if (!(power_min_kw < 0 && 0 < power_max_kw))
            throw std::invalid_argument("BatteryParams: need power_min < 0 < power_max");
    }
};

struct AirParams {
    double alpha = 3.8;     // particle generation per (trains/h)^2, ug*h/m3
    double delta_dep = 0.2; // deposition rate, 1/h
    double beta = 0.02;     // train contribution to natural ventilation, per train/h
    double rho_v = 3600.0;  // ventilation efficiency, m3/kWh
    double volume_m3 = 21600.0;

    void validate() const {
        if (alpha < 0 || delta_dep < 0 || beta < 0 || rho_v < 0)
            throw std::invalid_argument("AirParams: rates must be nonnegative");
        if (volume_m3 <= 0) throw std::invalid_argument("AirParams: volume must be positive");
    }
};

struct VentilationModes {
    double power_low_kw = 20.0;
    double power_high_kw = 60.0; // sized so rho_v*power_high/3600 = 60 m3/s by default

    void validate() const {
        if (!(0 <= power_low_kw && power_low_kw < power_high_kw))
            throw std::invalid_argument("VentilationModes: need 0 <= power_low < power_high");
    }
};

struct EconomicParams {
    // tariff[t] is the price applied to the import settled at step t+1,
    // stored as EUR per kW over one step (i.e. EUR/kWh price times delta).
    std::vector<double> tariff_eur_per_kw;
    double lambda_comfort = 0.0; // EUR*m3/ug

    void validate(int horizon_steps) const {
        if (static_cast<int>(tariff_eur_per_kw.size()) != horizon_steps)
            throw std::invalid_argument("EconomicParams: tariff must have one entry per step");
        for (double p : tariff_eur_per_kw)
            if (p < 0) throw std::invalid_argument("EconomicParams: prices must be nonnegative");
        if (lambda_comfort < 0) throw std::invalid_argument("EconomicParams: lambda must be nonnegative");
    }
};

// ---------------------------------------------------------------------------
// State, control, noise

struct State {
    double soc_kwh = 0.0;
    double pm10_ugm3 = 0.0;
};

enum class VentMode { low = 0, high = 1 };

struct Control {
    double battery_kw = 0.0;
    VentMode vent = VentMode::low;
};

struct NoiseVector {
    double demand_kw = 0.0;
    double braking_kw = 0.0;
    double trains_per_hour = 0.0;
    double outdoor_pm10 = 0.0;
};

struct StationModel {
    TimeGrid grid;
    BatteryParams battery;
    AirParams air;
    VentilationModes vent;
    EconomicParams econ;

    double vent_power(VentMode m) const {
        return m == VentMode::low ? vent.power_low_kw : vent.power_high_kw;
    }

    /// Station airflow in m3/s for a ventilation electrical power in kW.
    double airflow_m3s(double vent_power_kw) const {
        return air.rho_v * vent_power_kw / 3600.0;
    }

    void validate() const {
        grid.validate();
        battery.validate();
        air.validate();
        vent.validate();
        econ.validate(grid.horizon_steps);
    }
};

// ---------------------------------------------------------------------------
// Dynamics and costs

/// One Euler step of the state of charge. No clamping: feasibility is the
/// controllers' job, so infeasible controls surface as out-of-bound SOC.
inline double step_soc(const BatteryParams& p, const TimeGrid& g, double soc_kwh, double u_b_kw) {
    const double charge = std::max(u_b_kw, 0.0);
    const double discharge = std::min(u_b_kw, 0.0);
    return soc_kwh + g.delta_hours * (p.rho_c * charge + discharge / p.rho_d);
}

/// Explicit-Euler stability of the PM10 step: delta*(total removal rate) <= 1.
inline bool pm10_step_stable(const AirParams& a, const TimeGrid& g, double vent_power_kw,
                             double trains_per_hour) {
    const double rate = a.delta_dep + (a.rho_v / a.volume_m3) * vent_power_kw +
                        a.beta * trains_per_hour;
    return g.delta_hours * rate <= 1.0;
}

/// One Euler step of the PM10 concentration, floored at zero. Stability is
/// not silently fixed here; query pm10_step_stable to report violations.
inline double step_pm10(const AirParams& a, const TimeGrid& g, double c, double vent_power_kw,
                        const NoiseVector& w_next) {
    const double n = w_next.trains_per_hour;
    const double exchange = (a.rho_v / a.volume_m3) * vent_power_kw + a.beta * n;
    const double c_next = c - g.delta_hours * a.delta_dep * c +
                          g.delta_hours * a.alpha * n * n +
                          g.delta_hours * exchange * (w_next.outdoor_pm10 - c);
    return std::max(c_next, 0.0);
}

/// Discrete-time dynamics x_{t+1} = f_t(x_t, u_t, w_{t+1}). Pure: identical
/// inputs give bit-identical outputs, and no feasibility clamping happens.
inline State dynamics(const StationModel& m, int /*t*/, const State& x, const Control& u,
                      const NoiseVector& w_next) {
    return State{step_soc(m.battery, m.grid, x.soc_kwh, u.battery_kw),
                 step_pm10(m.air, m.grid, x.pm10_ugm3, m.vent_power(u.vent), w_next)};
}

/// Power drawn from the national grid at the end of the step. Negative
/// values are braking surplus that is wasted.
inline double import_power(const StationModel& m, const Control& u, const NoiseVector& w_next) {
    return w_next.demand_kw + m.vent_power(u.vent) + u.battery_kw - w_next.braking_kw;
}

/// Instantaneous cost: imports priced only when positive, plus the comfort
/// price on the next concentration.
inline double stage_cost(const StationModel& m, int t, const State& /*x*/, const Control& u,
                         const NoiseVector& w_next, const State& x_next) {
    const double imp = import_power(m, u, w_next);
    return m.econ.tariff_eur_per_kw[t] * std::max(imp, 0.0) +
           m.econ.lambda_comfort * x_next.pm10_ugm3;
}

/// Absolute slack on the SOC bounds, shared by every feasibility check so
/// offline solvers, online policies and the simulator agree about controls
/// that land on a bound up to rounding.
inline constexpr double soc_bound_slack_kwh = 1e-9;

/// Joint state/control admissibility: control bounds, two-mode ventilation,
/// and SOC bounds (within the shared slack) after the battery step.
inline bool admissible(const StationModel& m, const State& x, const Control& u) {
    if (u.battery_kw < m.battery.power_min_kw || u.battery_kw > m.battery.power_max_kw)
        return false;
    if (u.vent != VentMode::low && u.vent != VentMode::high) return false;
    const double soc_next = step_soc(m.battery, m.grid, x.soc_kwh, u.battery_kw);
    return soc_next >= m.battery.soc_min_kwh - soc_bound_slack_kwh &&
           soc_next <= m.battery.soc_max_kwh + soc_bound_slack_kwh;
}

/// Final cost K. Identically zero: the end-of-day state of charge is free.
inline double final_cost(const State& /*x*/) { return 0.0; }

// ---------------------------------------------------------------------------
// Policy contract

/// A state strategy: the decision at t may depend only on (t, x_t, w_t).
/// decide() is non-const because some controllers keep a reoptimization
/// cache; simulation gives each thread its own clone and calls reset() at
/// the start of every scenario.
class Policy {
public:
    virtual ~Policy() = default;
    virtual Control decide(int t, const State& x, const NoiseVector& w) = 0;
    virtual std::unique_ptr<Policy> clone() const = 0;
    virtual std::string name() const = 0;
    virtual void reset() {}
};

/// Current management: no battery, ventilation always on high. Simulated
/// with braking recovery disabled (see SimulateOptions).
class ReferencePolicy final : public Policy {
public:
    Control decide(int, const State&, const NoiseVector&) override {
        return Control{0.0, VentMode::high};
    }
    std::unique_ptr<Policy> clone() const override {
        return std::make_unique<ReferencePolicy>(*this);
    }
    std::string name() const override { return "reference"; }
};

inline std::unique_ptr<Policy> reference_policy(const StationModel&) {
    return std::make_unique<ReferencePolicy>();
}

} // namespace metroems
