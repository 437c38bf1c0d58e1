#pragma once

// Independent reference implementations the tests compare the library
// against. Everything here favors the most literal possible code: linear
// scans, nested loops, no stencils, no shared planes. The physics primitives
// (step_soc / step_pm10) are reused on purpose -- they are pinned by direct
// hand-computed cases elsewhere, and the oracles target the solver
// machinery built on top of them.

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include <metroems/config.hpp>
#include <metroems/grid.hpp>
#include <metroems/model.hpp>
#include <metroems/scenarios.hpp>

namespace oracle {

/// Small experiment used across the suites: a 48-step "day" (96 minutes) so
/// hourly profiles map to two steps each and everything solves instantly.
inline metroems::ExperimentConfig tiny_config() {
    metroems::ExperimentConfig c = metroems::ExperimentConfig::desk();
    c.time.horizon_steps = 48;
    c.time.day_length_hours = c.time.horizon_steps * c.time.delta_hours;
    c.optimization_count = 40;
    c.assessment_count = 60;
    c.grid.n_soc = 9;
    c.grid.n_pm10 = 9;
    c.grid.n_noise = 7;
    c.grid.n_battery_levels = 5;
    c.grid.k_marginal = 4;
    c.grid.k_residual = 4;
    c.grid.k_online = 5;
    c.mpc.reopt_every = 4;
    c.mpc.lookahead = 12;
    c.validate();
    return c;
}

/// Clamped linear bracket by linear scan.
inline double interp1(const std::vector<double>& nodes, const std::vector<double>& vals,
                      double x) {
    const int n = static_cast<int>(nodes.size());
    if (n == 1) return vals[0];
    if (x <= nodes.front()) return vals.front();
    if (x >= nodes.back()) return vals.back();
    int i = 0;
    while (i + 2 < n && nodes[i + 1] <= x) ++i;
    const double th = (x - nodes[i]) / (nodes[i + 1] - nodes[i]);
    return (1.0 - th) * vals[i] + th * vals[i + 1];
}

/// Value table produced by the naive recursions: v[t][l][j][i] with l the
/// noise level (size 1 when not augmented).
struct NaiveTable {
    int ns = 0, nc = 0, nw = 1, horizon = 0;
    std::vector<double> v;

    double at(int t, int l, int j, int i) const {
        return v[((static_cast<size_t>(t) * nw + l) * nc + j) * ns + i];
    }
    double& at(int t, int l, int j, int i) {
        return v[((static_cast<size_t>(t) * nw + l) * nc + j) * ns + i];
    }

    /// Clamped bilinear interpolation on stage t, level l.
    double interp(int t, int l, const metroems::StateGrid& g, double soc, double pm10) const {
        auto clamp_axis = [](const std::vector<double>& nodes, double x, int& i, double& th) {
            const int n = static_cast<int>(nodes.size());
            if (n == 1) {
                i = 0;
                th = 0.0;
                return;
            }
            if (x <= nodes.front()) {
                i = 0;
                th = 0.0;
                return;
            }
            if (x >= nodes.back()) {
                i = n - 2;
                th = 1.0;
                return;
            }
            i = 0;
            while (i + 2 < n && nodes[i + 1] <= x) ++i;
            th = (x - nodes[i]) / (nodes[i + 1] - nodes[i]);
        };
        int is = 0, jc = 0;
        double ts = 0.0, tc = 0.0;
        clamp_axis(g.soc.nodes, soc, is, ts);
        clamp_axis(g.pm10.nodes, pm10, jc, tc);
        const int is1 = g.soc.size() == 1 ? is : is + 1;
        const int jc1 = g.pm10.size() == 1 ? jc : jc + 1;
        const double lo = (1.0 - ts) * at(t, l, jc, is) + ts * at(t, l, jc, is1);
        const double hi = (1.0 - ts) * at(t, l, jc1, is) + ts * at(t, l, jc1, is1);
        return (1.0 - tc) * lo + tc * hi;
    }
};

/// Literal SDPO backward induction: every node, every control, every atom.
inline NaiveTable naive_sdpo(const metroems::StationModel& m,
                             const metroems::DeterministicProfiles& profiles,
                             const metroems::StateGrid& grid, const metroems::ControlMesh& mesh,
                             const std::vector<metroems::DiscreteDist>& marginals) {
    using namespace metroems;
    const int T = m.grid.horizon_steps;
    NaiveTable table;
    table.ns = grid.soc.size();
    table.nc = grid.pm10.size();
    table.nw = 1;
    table.horizon = T;
    table.v.assign(static_cast<size_t>(T + 1) * table.ns * table.nc, 0.0);

    for (int t = T - 1; t >= 0; --t) {
        const NoiseVector wd = profiles.noise_at(t + 1, 0.0);
        const DiscreteDist& mu = marginals[t + 1];
        for (int j = 0; j < table.nc; ++j) {
            for (int i = 0; i < table.ns; ++i) {
                double best = std::numeric_limits<double>::infinity();
                for (const Control& u : mesh.controls) {
                    const double s_next =
                        step_soc(m.battery, m.grid, grid.soc.nodes[i], u.battery_kw);
                    if (s_next < m.battery.soc_min_kwh - soc_bound_slack_kwh ||
                        s_next > m.battery.soc_max_kwh + soc_bound_slack_kwh)
                        continue;
                    const double c_next = step_pm10(m.air, m.grid, grid.pm10.nodes[j],
                                                    m.vent_power(u.vent), wd);
                    double exp_pos = 0.0;
                    const double base = wd.demand_kw + m.vent_power(u.vent) + u.battery_kw;
                    for (int k = 0; k < mu.size(); ++k)
                        exp_pos += mu.weights[k] * std::max(base - mu.atoms[k], 0.0);
                    const double q = m.econ.tariff_eur_per_kw[t] * exp_pos +
                                     m.econ.lambda_comfort * c_next +
                                     table.interp(t + 1, 0, grid, s_next, c_next);
                    if (q < best) best = q;
                }
                if (!(best < std::numeric_limits<double>::infinity()))
                    throw std::runtime_error("naive_sdpo: dead-end state");
                table.at(t, 0, j, i) = best;
            }
        }
    }
    return table;
}

/// Literal augmented induction over (soc, pm10, w): the memory coordinate is
/// pushed through the recursion written out longhand.
inline NaiveTable naive_sdpa(const metroems::StationModel& m,
                             const metroems::DeterministicProfiles& profiles,
                             const metroems::StateGrid& grid, const metroems::ControlMesh& mesh,
                             const metroems::Axis& noise_axis, double ar_a, double eps_log,
                             const std::vector<metroems::DiscreteDist>& residual_atoms) {
    using namespace metroems;
    const int T = m.grid.horizon_steps;
    NaiveTable table;
    table.ns = grid.soc.size();
    table.nc = grid.pm10.size();
    table.nw = noise_axis.size();
    table.horizon = T;
    table.v.assign(static_cast<size_t>(T + 1) * table.ns * table.nc * table.nw, 0.0);

    auto propagate = [&](double b_prev, double z) {
        return std::max(std::exp(ar_a * std::log(std::max(b_prev, 0.0) + eps_log) + z) - eps_log,
                        0.0);
    };
    auto interp_w = [&](int t, double soc, double pm10, double w) {
        std::vector<double> per_level(table.nw);
        for (int l = 0; l < table.nw; ++l) per_level[l] = table.interp(t, l, grid, soc, pm10);
        return interp1(noise_axis.nodes, per_level, w);
    };

    for (int t = T - 1; t >= 0; --t) {
        const NoiseVector wd = profiles.noise_at(t + 1, 0.0);
        const DiscreteDist& z = residual_atoms[t + 1];
        for (int l = 0; l < table.nw; ++l) {
            for (int j = 0; j < table.nc; ++j) {
                for (int i = 0; i < table.ns; ++i) {
                    double best = std::numeric_limits<double>::infinity();
                    for (const Control& u : mesh.controls) {
                        const double s_next =
                            step_soc(m.battery, m.grid, grid.soc.nodes[i], u.battery_kw);
                        if (s_next < m.battery.soc_min_kwh - soc_bound_slack_kwh ||
                            s_next > m.battery.soc_max_kwh + soc_bound_slack_kwh)
                            continue;
                        const double c_next = step_pm10(m.air, m.grid, grid.pm10.nodes[j],
                                                        m.vent_power(u.vent), wd);
                        const double base = wd.demand_kw + m.vent_power(u.vent) + u.battery_kw;
                        double q = m.econ.lambda_comfort * c_next;
                        for (int k = 0; k < z.size(); ++k) {
                            const double w_next = propagate(noise_axis.nodes[l], z.atoms[k]);
                            q += z.weights[k] *
                                 (m.econ.tariff_eur_per_kw[t] * std::max(base - w_next, 0.0) +
                                  interp_w(t + 1, s_next, c_next, w_next));
                        }
                        if (q < best) best = q;
                    }
                    if (!(best < std::numeric_limits<double>::infinity()))
                        throw std::runtime_error("naive_sdpa: dead-end state");
                    table.at(t, l, j, i) = best;
                }
            }
        }
    }
    return table;
}

/// Closed-form solution of the affine interval dynamics used by the
/// continuous-time integrators, for constant inputs over [0, h]:
///   ds/dt = r_s,  dc/dt = g - r_c c.
struct AffineState {
    double soc, pm10;
};

inline AffineState affine_exact(double soc0, double pm10_0, double soc_rate, double gain,
                                double decay, double h) {
    AffineState out;
    out.soc = soc0 + soc_rate * h;
    if (decay <= 0.0) {
        out.pm10 = pm10_0 + gain * h;
    } else {
        const double cstar = gain / decay;
        out.pm10 = cstar + (pm10_0 - cstar) * std::exp(-decay * h);
    }
    return out;
}

}  // namespace oracle
