#pragma once

// Continuous-time view of the station dynamics. The discrete model is the
// explicit Euler scheme of an ODE with inputs held constant over each step;
// this module integrates that ODE both with fixed-step Euler (which must
// reproduce the discrete dynamics exactly at one substep per interval) and
// with an adaptive embedded Runge-Kutta 5(4) pair, to quantify the
// discretization error of the chosen step length.

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "model.hpp"

namespace metroems {

/// Piecewise-constant inputs: controls[t] and noises[t] are active on the
/// interval [t*delta, (t+1)*delta). noises[t] holds the step-(t+1) noise
/// vector, matching the discrete convention x_{t+1} = f(x_t, u_t, w_{t+1}).
struct ContinuousInputs {
    std::vector<Control> controls;
    std::vector<NoiseVector> noises;

    int steps() const { return static_cast<int>(controls.size()); }

    void validate() const {
        if (controls.size() != noises.size())
            throw std::invalid_argument("ContinuousInputs: controls and noises must align");
        if (controls.empty()) throw std::invalid_argument("ContinuousInputs: empty");
    }
};

namespace detail {

/// Right-hand side of the state ODE on one interval. Affine in the state:
/// soc' is constant, pm10' = (alpha n^2 + k c_o) - (delta_dep + k) pm10.
struct IntervalRhs {
    double soc_rate;   // kWh per hour
    double pm10_gain;  // ug/m3 per hour at c = 0
    double pm10_decay; // 1/h

    static IntervalRhs make(const StationModel& m, const Control& u, const NoiseVector& w) {
        const double charge = std::max(u.battery_kw, 0.0);
        const double discharge = std::min(u.battery_kw, 0.0);
        const double soc_rate = m.battery.rho_c * charge + discharge / m.battery.rho_d;
        const double n = w.trains_per_hour;
        const double k = (m.air.rho_v / m.air.volume_m3) * m.vent_power(u.vent) + m.air.beta * n;
        return IntervalRhs{soc_rate, m.air.alpha * n * n + k * w.outdoor_pm10,
                           m.air.delta_dep + k};
    }

    State eval(const State& x) const {
        return State{soc_rate, pm10_gain - pm10_decay * x.pm10_ugm3};
    }

    /// Exact solution after tau hours: the oracle for the adaptive scheme.
    State exact(const State& x0, double tau) const {
        State x;
        x.soc_kwh = x0.soc_kwh + soc_rate * tau;
        if (pm10_decay == 0.0) {
            x.pm10_ugm3 = x0.pm10_ugm3 + pm10_gain * tau;
        } else {
            const double c_star = pm10_gain / pm10_decay;
            x.pm10_ugm3 = c_star + (x0.pm10_ugm3 - c_star) * std::exp(-pm10_decay * tau);
        }
        return x;
    }
};

} // namespace detail

struct IntegrationStats {
    long rhs_evaluations = 0;
    long accepted_steps = 0;
    long rejected_steps = 0;
};

struct Trajectory {
    std::vector<State> states; // states[t] at interval boundaries, size steps+1
    IntegrationStats stats;
};

/// Fixed-step explicit Euler with `substeps` equal substeps per interval.
/// With substeps = 1 this is the discrete dynamics verbatim -- bit for bit,
/// because each substep applies step_soc/step_pm10 with a scaled time step
/// -- including the PM10 floor applied at every substep.
inline Trajectory integrate_euler(const StationModel& m, const State& x0,
                                  const ContinuousInputs& in, int substeps = 1) {
    in.validate();
    if (substeps < 1) throw std::invalid_argument("integrate_euler: substeps must be >= 1");
    Trajectory traj;
    traj.states.reserve(in.steps() + 1);
    traj.states.push_back(x0);
    State x = x0;
    TimeGrid sub = m.grid;
    sub.delta_hours = m.grid.delta_hours / substeps;
    for (int t = 0; t < in.steps(); ++t) {
        const Control& u = in.controls[t];
        const NoiseVector& w = in.noises[t];
        const double vent_power = m.vent_power(u.vent);
        for (int s = 0; s < substeps; ++s) {
            x.soc_kwh = step_soc(m.battery, sub, x.soc_kwh, u.battery_kw);
            x.pm10_ugm3 = step_pm10(m.air, sub, x.pm10_ugm3, vent_power, w);
            traj.stats.rhs_evaluations++;
        }
        traj.stats.accepted_steps += substeps;
        traj.states.push_back(x);
    }
    return traj;
}

/// Adaptive Dormand-Prince 5(4) pair, restarted at every interval boundary
/// because the inputs jump there. Error control is per-component with mixed
/// absolute/relative tolerance; the 5th-order solution propagates.
inline Trajectory integrate_adaptive(const StationModel& m, const State& x0,
                                     const ContinuousInputs& in, double rtol = 1e-8,
                                     double atol = 1e-10) {
    in.validate();
    if (!(rtol > 0) || !(atol > 0))
        throw std::invalid_argument("integrate_adaptive: tolerances must be positive");

    // Butcher tableau (Dormand & Prince 1980), FSAL.
    static constexpr double a21 = 1.0 / 5;
    static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
    static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187,
                            a53 = 64448.0 / 6561, a54 = -212.0 / 729;
    static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                            a64 = 49.0 / 176, a65 = -5103.0 / 18656;
    static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                            b5 = -2187.0 / 6784, b6 = 11.0 / 84;
    static constexpr double e1 = 35.0 / 384 - 5179.0 / 57600, e3 = 500.0 / 1113 - 7571.0 / 16695,
                            e4 = 125.0 / 192 - 393.0 / 640,
                            e5 = -2187.0 / 6784 + 92097.0 / 339200,
                            e6 = 11.0 / 84 - 187.0 / 2100, e7 = -1.0 / 40;

    Trajectory traj;
    traj.states.reserve(in.steps() + 1);
    traj.states.push_back(x0);
    State x = x0;

    const auto axpy = [](const State& x0_, double h, const State& d) {
        return State{x0_.soc_kwh + h * d.soc_kwh, x0_.pm10_ugm3 + h * d.pm10_ugm3};
    };

    for (int t = 0; t < in.steps(); ++t) {
        const auto rhs = detail::IntervalRhs::make(m, in.controls[t], in.noises[t]);
        double remaining = m.grid.delta_hours;
        double h = m.grid.delta_hours;
        State k1 = rhs.eval(x);
        traj.stats.rhs_evaluations++;
        const double h_min = m.grid.delta_hours * 1e-12;
        while (remaining > 0.0) {
            h = std::min(h, remaining);
            const State k2 = rhs.eval(axpy(x, h * a21, k1));
            const State k3 = rhs.eval(State{
                x.soc_kwh + h * (a31 * k1.soc_kwh + a32 * k2.soc_kwh),
                x.pm10_ugm3 + h * (a31 * k1.pm10_ugm3 + a32 * k2.pm10_ugm3)});
            const State k4 = rhs.eval(State{
                x.soc_kwh + h * (a41 * k1.soc_kwh + a42 * k2.soc_kwh + a43 * k3.soc_kwh),
                x.pm10_ugm3 + h * (a41 * k1.pm10_ugm3 + a42 * k2.pm10_ugm3 + a43 * k3.pm10_ugm3)});
            const State k5 = rhs.eval(State{
                x.soc_kwh + h * (a51 * k1.soc_kwh + a52 * k2.soc_kwh + a53 * k3.soc_kwh +
                                 a54 * k4.soc_kwh),
                x.pm10_ugm3 + h * (a51 * k1.pm10_ugm3 + a52 * k2.pm10_ugm3 + a53 * k3.pm10_ugm3 +
                                   a54 * k4.pm10_ugm3)});
            const State k6 = rhs.eval(State{
                x.soc_kwh + h * (a61 * k1.soc_kwh + a62 * k2.soc_kwh + a63 * k3.soc_kwh +
                                 a64 * k4.soc_kwh + a65 * k5.soc_kwh),
                x.pm10_ugm3 + h * (a61 * k1.pm10_ugm3 + a62 * k2.pm10_ugm3 + a63 * k3.pm10_ugm3 +
                                   a64 * k4.pm10_ugm3 + a65 * k5.pm10_ugm3)});
            const State x5{
                x.soc_kwh + h * (b1 * k1.soc_kwh + b3 * k3.soc_kwh + b4 * k4.soc_kwh +
                                 b5 * k5.soc_kwh + b6 * k6.soc_kwh),
                x.pm10_ugm3 + h * (b1 * k1.pm10_ugm3 + b3 * k3.pm10_ugm3 + b4 * k4.pm10_ugm3 +
                                   b5 * k5.pm10_ugm3 + b6 * k6.pm10_ugm3)};
            const State k7 = rhs.eval(x5);
            traj.stats.rhs_evaluations += 6;

            const double err_soc =
                h * (e1 * k1.soc_kwh + e3 * k3.soc_kwh + e4 * k4.soc_kwh + e5 * k5.soc_kwh +
                     e6 * k6.soc_kwh + e7 * k7.soc_kwh);
            const double err_pm =
                h * (e1 * k1.pm10_ugm3 + e3 * k3.pm10_ugm3 + e4 * k4.pm10_ugm3 +
                     e5 * k5.pm10_ugm3 + e6 * k6.pm10_ugm3 + e7 * k7.pm10_ugm3);
            const double sc_soc = atol + rtol * std::max(std::abs(x.soc_kwh), std::abs(x5.soc_kwh));
            const double sc_pm =
                atol + rtol * std::max(std::abs(x.pm10_ugm3), std::abs(x5.pm10_ugm3));
            const double err =
                std::max(std::abs(err_soc) / sc_soc, std::abs(err_pm) / sc_pm);

            if (err <= 1.0 || h <= h_min) {
                remaining -= h;
                x = x5;
                k1 = k7; // FSAL
                traj.stats.accepted_steps++;
            } else {
                traj.stats.rejected_steps++;
            }
            const double factor =
                err > 0.0 ? std::clamp(0.9 * std::pow(err, -0.2), 0.2, 5.0) : 5.0;
            h = std::max(h * factor, h_min);
        }
        x.pm10_ugm3 = std::max(x.pm10_ugm3, 0.0);
        traj.states.push_back(x);
    }
    return traj;
}

/// Per-interval closed-form reference (the interval ODE is affine). Used to
/// validate the adaptive scheme and to measure the Euler discretization gap.
inline Trajectory integrate_exact(const StationModel& m, const State& x0,
                                  const ContinuousInputs& in) {
    in.validate();
    Trajectory traj;
    traj.states.reserve(in.steps() + 1);
    traj.states.push_back(x0);
    State x = x0;
    for (int t = 0; t < in.steps(); ++t) {
        const auto rhs = detail::IntervalRhs::make(m, in.controls[t], in.noises[t]);
        x = rhs.exact(x, m.grid.delta_hours);
        x.pm10_ugm3 = std::max(x.pm10_ugm3, 0.0);
        traj.states.push_back(x);
    }
    return traj;
}

/// Relative-difference report between two trajectories sampled at the same
/// interval boundaries. Denominator: max(|reference|, 1e-9).
struct IntegrationReport {
    double max_rel_err_soc = 0.0;
    double max_rel_err_pm10 = 0.0;
    int argmax_step_soc = 0;
    int argmax_step_pm10 = 0;
    double mean_rel_err_soc = 0.0;
    double mean_rel_err_pm10 = 0.0;
    double std_rel_err_soc = 0.0;  // population standard deviation
    double std_rel_err_pm10 = 0.0;

    double max_rel_err() const { return std::max(max_rel_err_soc, max_rel_err_pm10); }
    double mean_rel_err() const { return std::max(mean_rel_err_soc, mean_rel_err_pm10); }
};

inline IntegrationReport compare_trajectories(const Trajectory& test, const Trajectory& reference) {
    if (test.states.size() != reference.states.size())
        throw std::invalid_argument("compare_trajectories: length mismatch");
    IntegrationReport rep;
    const size_t n = test.states.size();
    double sum_s = 0.0, sum2_s = 0.0, sum_c = 0.0, sum2_c = 0.0;
    for (size_t t = 0; t < n; ++t) {
        const double ds = std::abs(test.states[t].soc_kwh - reference.states[t].soc_kwh) /
                          std::max(std::abs(reference.states[t].soc_kwh), 1e-9);
        const double dc = std::abs(test.states[t].pm10_ugm3 - reference.states[t].pm10_ugm3) /
                          std::max(std::abs(reference.states[t].pm10_ugm3), 1e-9);
        sum_s += ds;
        sum2_s += ds * ds;
        sum_c += dc;
        sum2_c += dc * dc;
        if (ds > rep.max_rel_err_soc) {
            rep.max_rel_err_soc = ds;
            rep.argmax_step_soc = static_cast<int>(t);
        }
        if (dc > rep.max_rel_err_pm10) {
            rep.max_rel_err_pm10 = dc;
            rep.argmax_step_pm10 = static_cast<int>(t);
        }
    }
    rep.mean_rel_err_soc = sum_s / static_cast<double>(n);
    rep.mean_rel_err_pm10 = sum_c / static_cast<double>(n);
    rep.std_rel_err_soc = std::sqrt(
        std::max(sum2_s / static_cast<double>(n) - rep.mean_rel_err_soc * rep.mean_rel_err_soc,
                 0.0));
    rep.std_rel_err_pm10 = std::sqrt(
        std::max(sum2_c / static_cast<double>(n) - rep.mean_rel_err_pm10 * rep.mean_rel_err_pm10,
                 0.0));
    return rep;
}

} // namespace metroems
