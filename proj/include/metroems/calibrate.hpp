#pragma once

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "assess.hpp"
#include "config.hpp"
#include "parallel.hpp"
#include "scenarios.hpp"
#include "sdp.hpp"

namespace metroems {

// ---------------------------------------------------------------------------
// Calibration: anchors the synthetic station to its published reference
// figures. The reference day (ventilation high, battery idle, recovery
// absent) is deterministic given the profiles, so consumption, bill and the
// PM10 path can be targeted directly; the comfort weight needs closed-loop
// simulation on the sealed optimization scenarios.

struct CalibrationTargets {
    double energy_kwh = 2160.0;  // reference daily consumption
    double bill_eur = 161.0;     // reference daily energy cost
    double mean_pm10 = 108.0;    // reference mean concentration
    double max_pm10 = 182.0;     // reference peak concentration
};

struct ReferenceDay {
    double energy_kwh = 0.0;
    double bill_eur = 0.0;
    double mean_pm10 = 0.0;
    double max_pm10 = 0.0;
};

/// Deterministic reference day for the current configuration: ventilation
/// always high, battery idle, no braking recovery.
inline ReferenceDay reference_day(const ExperimentConfig& cfg) {
    const StationModel m = build_model(cfg);
    const DeterministicProfiles profiles = build_profiles(cfg);
    const auto policy = reference_policy(m);
    SimulateOptions opts;
    opts.recover_braking = false;
    const std::vector<double> no_braking(static_cast<size_t>(cfg.time.horizon_steps) + 1, 0.0);
    const SimulationTrace tr = simulate(m, profiles, no_braking, *policy, default_x0(cfg), opts);
    return {tr.energy_import_kwh, tr.bill_eur, tr.mean_pm10, tr.max_pm10};
}

/// Pin demand_scale, tariff.scale and (alpha, beta) so the reference day
/// reproduces the targets, then size the PM10 grid at twice the reference
/// peak. Throws when the targets are unreachable.
inline ExperimentConfig calibrate_reference(ExperimentConfig cfg, const CalibrationTargets& tg,
                                            int* air_iterations = nullptr) {
    cfg.validate();
    const int T = cfg.time.horizon_steps;

    // Consumption is linear in demand_scale: energy = scale * E_d + P_high * day.
    {
        cfg.profiles.demand_scale = 1.0;
        const DeterministicProfiles p = build_profiles(cfg);
        double e_d = 0.0;
        for (int t = 1; t <= T; ++t) e_d += p.demand_kw[t] * cfg.time.delta_hours;
        const double vent_kwh = cfg.vent.power_high_kw * cfg.time.day_length_hours;
        if (!(e_d > 0))
            throw std::runtime_error("calibrate: demand profile carries no energy");
        if (!(tg.energy_kwh > vent_kwh))
            throw std::runtime_error(
                "calibrate: energy target is below the high-ventilation floor");
        cfg.profiles.demand_scale = (tg.energy_kwh - vent_kwh) / e_d;
    }

    // The bill is linear in the tariff scale (reference imports never go
    // negative: no battery, no recovery).
    {
        cfg.tariff.scale = 1.0;
        const double bill_unit = reference_day(cfg).bill_eur;
        if (!(bill_unit > 0)) throw std::runtime_error("calibrate: reference bill is zero");
        cfg.tariff.scale = tg.bill_eur / bill_unit;
    }

    // Damped Newton on (alpha, beta) targeting (mean, max) of the reference
    // PM10 path; finite-difference Jacobian, beta projected to >= 0.
    {
        auto residual = [&](double alpha, double beta) {
            ExperimentConfig probe = cfg;
            probe.air.alpha = alpha;
            probe.air.beta = beta;
            const ReferenceDay d = reference_day(probe);
            return std::pair<double, double>{d.mean_pm10 - tg.mean_pm10,
                                             d.max_pm10 - tg.max_pm10};
        };
        double alpha = cfg.air.alpha, beta = cfg.air.beta;
        auto [r1, r2] = residual(alpha, beta);
        double norm = std::hypot(r1 / tg.mean_pm10, r2 / tg.max_pm10);
        int iter = 0;
        const int max_iter = 60;
        for (; iter < max_iter && norm > 1e-10; ++iter) {
            const double ha = std::max(1e-6, 1e-6 * std::fabs(alpha));
            const double hb = std::max(1e-7, 1e-6 * std::fabs(beta));
            const auto [ra1, ra2] = residual(alpha + ha, beta);
            const auto [rb1, rb2] = residual(alpha, beta + hb);
            const double j11 = (ra1 - r1) / ha, j12 = (rb1 - r1) / hb;
            const double j21 = (ra2 - r2) / ha, j22 = (rb2 - r2) / hb;
            const double det = j11 * j22 - j12 * j21;
            if (std::fabs(det) < 1e-14)
                throw std::runtime_error("calibrate: singular air-quality Jacobian");
            const double da = (-r1 * j22 + r2 * j12) / det;
            const double db = (-r2 * j11 + r1 * j21) / det;
            double step = 1.0;
            for (int k = 0; k < 25; ++k, step *= 0.5) {
                const double a_try = std::max(alpha + step * da, 1e-9);
                const double b_try = std::max(beta + step * db, 0.0);
                const auto [t1, t2] = residual(a_try, b_try);
                const double n_try = std::hypot(t1 / tg.mean_pm10, t2 / tg.max_pm10);
                if (n_try < norm) {
                    alpha = a_try;
                    beta = b_try;
                    r1 = t1;
                    r2 = t2;
                    norm = n_try;
                    break;
                }
                if (k == 24)
                    throw std::runtime_error("calibrate: air-quality line search stalled");
            }
        }
        if (norm > 1e-8)
            throw std::runtime_error("calibrate: air-quality parameters did not converge");
        cfg.air.alpha = alpha;
        cfg.air.beta = beta;
        if (air_iterations) *air_iterations = iter;
    }

    cfg.grid.pm10_grid_max = 2.0 * reference_day(cfg).max_pm10;
    cfg.validate();
    return cfg;
}

// ---------------------------------------------------------------------------
// Comfort-weight scan

struct LambdaScanPoint {
    double lambda = 0.0;
    double mean_pm10 = 0.0;  // across optimization scenarios
    double mean_bill = 0.0;
    bool feasible = false;  // mean PM10 at or below the reference mean
};

struct LambdaScan {
    std::vector<LambdaScanPoint> points;  // ascending lambda
    double selected = 0.0;                // smallest feasible lambda
};

/// Evaluate every candidate comfort weight by running the full SDPO pipeline
/// (marginal quantization, induction, conditional online policy) on the
/// optimization scenarios, then pick the smallest weight whose mean PM10
/// does not exceed the reference mean. Uses optimization data only, so the
/// assessment set stays sealed.
inline LambdaScan calibrate_lambda(ExperimentConfig cfg, const ScenarioSet& optimization_set,
                                   ThreadPool* pool = nullptr) {
    optimization_set.require_role(ScenarioRole::optimization, "calibrate_lambda");
    if (optimization_set.horizon_steps != cfg.time.horizon_steps)
        throw std::invalid_argument("calibrate_lambda: scenario horizon mismatch");

    const double ref_mean_pm10 = reference_day(cfg).mean_pm10;
    const DeterministicProfiles profiles = build_profiles(cfg);
    const StateGrid grid = build_state_grid(cfg);
    const ControlMesh mesh = build_control_mesh(cfg);
    const State x0 = default_x0(cfg);
    const NoiseModel noise = fit_log_ar1(optimization_set, cfg.eps_log);
    const std::vector<DiscreteDist> marginals =
        quantize_marginals(optimization_set, cfg.grid.k_marginal, cfg.optimization_seed);

    std::vector<double> lambdas = cfg.lambda_scan;
    std::sort(lambdas.begin(), lambdas.end());
    lambdas.erase(std::unique(lambdas.begin(), lambdas.end()), lambdas.end());

    LambdaScan scan;
    const int n = optimization_set.count();
    for (double lambda : lambdas) {
        cfg.lambda_comfort = lambda;
        const StationModel m = build_model(cfg);
        auto table = std::make_shared<const ValueTable>(
            backward_induction_sdpo(m, profiles, grid, mesh, marginals, config_hash(cfg)));
        const auto policy =
            sdpo_policy(m, profiles, mesh, table,
                        ConditionalSource::from_model(noise, cfg.grid.k_online,
                                                      cfg.optimization_seed));

        std::vector<double> pm10(n), bill(n);
        const int workers = pool ? pool->threads() : 1;
        std::vector<std::unique_ptr<Policy>> clones(workers);
        for (auto& c : clones) c = policy->clone();
        auto run_one = [&](long i, int slot) {
            const SimulationTrace tr =
                simulate(m, profiles, optimization_set.braking_kw[i], *clones[slot], x0);
            pm10[i] = tr.mean_pm10;
            bill[i] = tr.bill_eur;
        };
        if (pool)
            pool->parallel_for_slots(n, run_one);
        else
            for (long i = 0; i < n; ++i) run_one(i, 0);

        LambdaScanPoint pt;
        pt.lambda = lambda;
        pt.mean_pm10 = stats(pm10).mean;
        pt.mean_bill = stats(bill).mean;
        pt.feasible = pt.mean_pm10 <= ref_mean_pm10;
        scan.points.push_back(pt);
    }

    for (const LambdaScanPoint& pt : scan.points)
        if (pt.feasible) {
            scan.selected = pt.lambda;
            return scan;
        }
    throw std::runtime_error(
        "calibrate: no lambda in the scan keeps mean PM10 at or below the reference");
}

struct CalibrationResult {
    ExperimentConfig config;  // fully calibrated, lambda included
    ReferenceDay reference;   // achieved reference figures
    CalibrationTargets targets;
    int air_iterations = 0;
    LambdaScan lambda;
};

/// Full calibration: reference anchors first, then the comfort-weight scan
/// on freshly generated optimization scenarios.
inline CalibrationResult calibrate(ExperimentConfig cfg, const CalibrationTargets& tg = {},
                                   ThreadPool* pool = nullptr) {
    CalibrationResult out;
    out.targets = tg;
    cfg = calibrate_reference(std::move(cfg), tg, &out.air_iterations);
    const DeterministicProfiles profiles = build_profiles(cfg);
    const ScenarioSet opt =
        generate_braking(build_generator(cfg), profiles.trains_per_hour, cfg.time.delta_hours,
                         cfg.optimization_count, cfg.optimization_seed,
                         ScenarioRole::optimization);
    out.lambda = calibrate_lambda(cfg, opt, pool);
    cfg.lambda_comfort = out.lambda.selected;
    out.reference = reference_day(cfg);
    out.config = std::move(cfg);
    return out;
}

}  // namespace metroems
