#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "model.hpp"
#include "parallel.hpp"
#include "scenarios.hpp"

namespace metroems {

// ---------------------------------------------------------------------------
// Closed-loop simulation

struct SimulateOptions {
    // false models the station without the recovery system: braking never
    // offsets the import. The reference case runs with this disabled.
    bool recover_braking = true;
    bool check_admissible = true;
};

struct SimulationTrace {
    std::vector<State> states;       // 0..T
    std::vector<Control> controls;   // 0..T-1
    std::vector<double> import_kw;   // signed effective import per step
    std::vector<double> stage_costs; // EUR per step
    double total_cost = 0.0;         // EUR, sum of stage costs plus final cost
    double bill_eur = 0.0;           // energy charges only: sum of tariff x (import)^+
    double energy_import_kwh = 0.0;  // sum of positive imports times delta
    double wasted_kwh = 0.0;         // sum of negative imports (surplus) times delta
    double net_energy_kwh = 0.0;     // signed import energy; surplus counts negative
    double mean_pm10 = 0.0;          // over states 1..T
    double max_pm10 = 0.0;           // over states 0..T
};

/// Run one scenario under the decision-hazard information structure: the
/// policy decides at t from (t, x_t, w_t) and the transition then consumes
/// w_{t+1}; the policy never sees w_{t+1}.
inline SimulationTrace simulate(const StationModel& m, const DeterministicProfiles& profiles,
                                const std::vector<double>& braking, Policy& policy,
                                const State& x0, const SimulateOptions& opts = {}) {
    const int T = m.grid.horizon_steps;
    profiles.validate(T);
    if (static_cast<int>(braking.size()) != T + 1)
        throw std::invalid_argument("simulate: braking path must have T+1 entries");

    SimulationTrace tr;
    tr.states.reserve(static_cast<size_t>(T) + 1);
    tr.controls.reserve(T);
    tr.import_kw.reserve(T);
    tr.stage_costs.reserve(T);

    policy.reset();
    State x = x0;
    tr.states.push_back(x);
    tr.max_pm10 = x.pm10_ugm3;
    double pm_sum = 0.0;

    for (int t = 0; t < T; ++t) {
        const NoiseVector w_obs = profiles.noise_at(t, braking[t]);
        const Control u = policy.decide(t, x, w_obs);
        if (opts.check_admissible && !admissible(m, x, u))
            throw std::runtime_error("simulate: policy " + policy.name() +
                                     " returned an inadmissible control at step " +
                                     std::to_string(t));
        const NoiseVector w_next = profiles.noise_at(t + 1, braking[t + 1]);
        const NoiseVector w_cost =
            opts.recover_braking ? w_next : profiles.noise_at(t + 1, 0.0);
        const State x1 = dynamics(m, t, x, u, w_next);
        const double imp = import_power(m, u, w_cost);
        const double cost = stage_cost(m, t, x, u, w_cost, x1);

        tr.controls.push_back(u);
        tr.import_kw.push_back(imp);
        tr.stage_costs.push_back(cost);
        tr.total_cost += cost;
        tr.bill_eur += m.econ.tariff_eur_per_kw[t] * std::max(imp, 0.0);
        tr.energy_import_kwh += std::max(imp, 0.0) * m.grid.delta_hours;
        tr.wasted_kwh += std::max(-imp, 0.0) * m.grid.delta_hours;
        tr.net_energy_kwh += imp * m.grid.delta_hours;
        pm_sum += x1.pm10_ugm3;
        tr.max_pm10 = std::max(tr.max_pm10, x1.pm10_ugm3);
        tr.states.push_back(x1);
        x = x1;
    }
    tr.total_cost += final_cost(x);
    tr.mean_pm10 = pm_sum / T;
    return tr;
}

// ---------------------------------------------------------------------------
// Monte Carlo assessment

struct Stats {
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation (n-1)
    double sem = 0.0;
};

inline Stats stats(const std::vector<double>& v) {
    Stats s;
    const size_t n = v.size();
    if (n == 0) return s;
    double acc = 0.0;
    for (double x : v) acc += x;
    s.mean = acc / static_cast<double>(n);
    if (n > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - s.mean) * (x - s.mean);
        s.stddev = std::sqrt(ss / static_cast<double>(n - 1));
        s.sem = s.stddev / std::sqrt(static_cast<double>(n));
    }
    return s;
}

struct McResult {
    std::string policy_name;
    std::uint64_t scenario_hash = 0;
    int count = 0;
    bool recover_braking = true;
    // one entry per scenario, in scenario order; cost is the optimized
    // objective (bill + comfort), bill the energy charges alone
    std::vector<double> cost, bill, mean_pm10, max_pm10, energy_kwh, wasted_kwh, net_energy_kwh;
};

/// Simulate the policy on every scenario of an assessment set. Each
/// participant thread owns a policy clone; results land in per-scenario
/// slots, so the outcome is bit-identical for any thread count.
inline McResult monte_carlo(const StationModel& m, const DeterministicProfiles& profiles,
                            const ScenarioSet& set, const Policy& policy, const State& x0,
                            const SimulateOptions& opts = {}, ThreadPool* pool = nullptr) {
    set.require_role(ScenarioRole::assessment, "monte_carlo");
    const int n = set.count();
    McResult r;
    r.policy_name = policy.name();
    r.scenario_hash = set.data_hash();
    r.count = n;
    r.recover_braking = opts.recover_braking;
    r.cost.resize(n);
    r.bill.resize(n);
    r.mean_pm10.resize(n);
    r.max_pm10.resize(n);
    r.energy_kwh.resize(n);
    r.wasted_kwh.resize(n);
    r.net_energy_kwh.resize(n);

    const int workers = pool ? pool->threads() : 1;
    std::vector<std::unique_ptr<Policy>> clones(workers);
    for (auto& c : clones) c = policy.clone();

    auto run_one = [&](long i, int slot) {
        const SimulationTrace tr =
            simulate(m, profiles, set.braking_kw[i], *clones[slot], x0, opts);
        r.cost[i] = tr.total_cost;
        r.bill[i] = tr.bill_eur;
        r.mean_pm10[i] = tr.mean_pm10;
        r.max_pm10[i] = tr.max_pm10;
        r.energy_kwh[i] = tr.energy_import_kwh;
        r.wasted_kwh[i] = tr.wasted_kwh;
        r.net_energy_kwh[i] = tr.net_energy_kwh;
    };
    if (pool)
        pool->parallel_for_slots(n, run_one);
    else
        for (long i = 0; i < n; ++i) run_one(i, 0);
    return r;
}

// ---------------------------------------------------------------------------
// Pairwise comparison and summary vs the reference case

struct Histogram {
    std::vector<double> edges;  // bins + 1 entries
    std::vector<long> counts;   // bins entries, masses sum to the sample size
};

inline Histogram histogram(const std::vector<double>& v, int bins) {
    if (bins < 1) throw std::invalid_argument("histogram: need at least one bin");
    Histogram h;
    h.edges.resize(static_cast<size_t>(bins) + 1);
    h.counts.assign(bins, 0);
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (double x : v) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    if (v.empty()) lo = hi = 0.0;
    if (!(hi > lo)) {  // degenerate sample: widen symmetrically
        lo -= 0.5;
        hi += 0.5;
    }
    for (int b = 0; b <= bins; ++b)
        h.edges[b] = lo + (hi - lo) * static_cast<double>(b) / bins;
    for (double x : v) {
        int b = static_cast<int>((x - lo) / (hi - lo) * bins);
        b = std::clamp(b, 0, bins - 1);
        ++h.counts[b];
    }
    return h;
}

struct GapReport {
    std::string name_a, name_b;
    std::vector<double> gap;  // (billA - billB) / max(|billB|, 1e-6), per scenario
    int wins_a = 0;           // scenarios where A's bill is strictly lower
    int wins_b = 0;
    int ties = 0;  // exactly equal bills
    Histogram hist;
};

/// Pairwise money comparison on the shared scenario set: relative gap of the
/// energy bills plus win/tie counts.
inline GapReport compare(const McResult& a, const McResult& b, int bins = 40) {
    if (a.scenario_hash != b.scenario_hash || a.count != b.count)
        throw std::invalid_argument("compare: results come from different scenario sets");
    GapReport g;
    g.name_a = a.policy_name;
    g.name_b = b.policy_name;
    g.gap.resize(a.count);
    for (int i = 0; i < a.count; ++i) {
        g.gap[i] = (a.bill[i] - b.bill[i]) / std::max(std::fabs(b.bill[i]), 1e-6);
        if (a.bill[i] < b.bill[i])
            ++g.wins_a;
        else if (b.bill[i] < a.bill[i])
            ++g.wins_b;
        else
            ++g.ties;
    }
    g.hist = histogram(g.gap, bins);
    return g;
}

/// Per-policy summary against the reference case, Table-style: savings are
/// policy minus reference on the same scenario, so negative numbers are
/// improvements.
struct PolicySummary {
    std::string name;
    Stats cost;                    // EUR, optimized objective (bill + comfort)
    Stats bill;                    // EUR, energy charges only
    Stats savings_eur;             // bill - reference bill (money savings)
    Stats pm10;                    // per-scenario mean PM10
    Stats energy_kwh;              // energy drawn from the grid
    Stats energy_savings_kwh;      // drawn energy - reference drawn energy
    Stats net_energy_savings_kwh;  // same with surplus counted negative
};

struct AssessmentReport {
    std::uint64_t scenario_hash = 0;
    int count = 0;
    std::string reference_name;
    Stats reference_cost;
    Stats reference_bill;
    Stats reference_pm10;
    Stats reference_energy_kwh;
    std::vector<PolicySummary> policies;
};

inline AssessmentReport assess(const std::vector<McResult>& optimized,
                               const McResult& reference) {
    AssessmentReport rep;
    rep.scenario_hash = reference.scenario_hash;
    rep.count = reference.count;
    rep.reference_name = reference.policy_name;
    rep.reference_cost = stats(reference.cost);
    rep.reference_bill = stats(reference.bill);
    rep.reference_pm10 = stats(reference.mean_pm10);
    rep.reference_energy_kwh = stats(reference.energy_kwh);
    for (const McResult& r : optimized) {
        if (r.scenario_hash != reference.scenario_hash || r.count != reference.count)
            throw std::invalid_argument("assess: results come from different scenario sets");
        PolicySummary ps;
        ps.name = r.policy_name;
        ps.cost = stats(r.cost);
        ps.bill = stats(r.bill);
        ps.pm10 = stats(r.mean_pm10);
        ps.energy_kwh = stats(r.energy_kwh);
        std::vector<double> d(r.count);
        for (int i = 0; i < r.count; ++i) d[i] = r.bill[i] - reference.bill[i];
        ps.savings_eur = stats(d);
        for (int i = 0; i < r.count; ++i) d[i] = r.energy_kwh[i] - reference.energy_kwh[i];
        ps.energy_savings_kwh = stats(d);
        for (int i = 0; i < r.count; ++i)
            d[i] = r.net_energy_kwh[i] - reference.net_energy_kwh[i];
        ps.net_energy_savings_kwh = stats(d);
        rep.policies.push_back(std::move(ps));
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Artifacts

namespace detail {

inline void write_g17(std::ofstream& out, double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << buf;
}

}  // namespace detail

/// Per-scenario results CSV. With a reference result the savings column is
/// included; pass nullptr to omit it.
inline void write_scenario_csv(const McResult& r, const McResult* reference,
                               const std::string& path) {
    if (reference &&
        (reference->scenario_hash != r.scenario_hash || reference->count != r.count))
        throw std::invalid_argument("write_scenario_csv: reference set mismatch");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_scenario_csv: cannot open " + path);
    out << "scenario,cost_eur,bill_eur";
    if (reference) out << ",savings_eur";
    out << ",mean_pm10_ugm3,max_pm10_ugm3,energy_kwh,wasted_kwh,net_energy_kwh\n";
    for (int i = 0; i < r.count; ++i) {
        out << i << ',';
        detail::write_g17(out, r.cost[i]);
        out << ',';
        detail::write_g17(out, r.bill[i]);
        if (reference) {
            out << ',';
            detail::write_g17(out, r.bill[i] - reference->bill[i]);
        }
        out << ',';
        detail::write_g17(out, r.mean_pm10[i]);
        out << ',';
        detail::write_g17(out, r.max_pm10[i]);
        out << ',';
        detail::write_g17(out, r.energy_kwh[i]);
        out << ',';
        detail::write_g17(out, r.wasted_kwh[i]);
        out << ',';
        detail::write_g17(out, r.net_energy_kwh[i]);
        out << '\n';
    }
    if (!out) throw std::runtime_error("write_scenario_csv: write failed for " + path);
}

/// Histogram CSV: one row per bin with its edges and mass.
inline void write_histogram_csv(const Histogram& h, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_histogram_csv: cannot open " + path);
    out << "bin_lo,bin_hi,count\n";
    for (size_t b = 0; b < h.counts.size(); ++b) {
        detail::write_g17(out, h.edges[b]);
        out << ',';
        detail::write_g17(out, h.edges[b + 1]);
        out << ',' << h.counts[b] << '\n';
    }
    if (!out) throw std::runtime_error("write_histogram_csv: write failed for " + path);
}

// ---------------------------------------------------------------------------
// Timing

struct Stopwatch {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

struct OnlineTiming {
    double mean_ms = 0.0;
    double max_ms = 0.0;
    long decisions = 0;
};

/// Policy wrapper that times every decide() call on the wrapped instance.
class TimedPolicy final : public Policy {
public:
    explicit TimedPolicy(std::unique_ptr<Policy> inner) : inner_(std::move(inner)) {
        if (!inner_) throw std::invalid_argument("TimedPolicy: null policy");
    }

    Control decide(int t, const State& x, const NoiseVector& w) override {
        const Stopwatch sw;
        const Control u = inner_->decide(t, x, w);
        const double ms = sw.seconds() * 1e3;
        sum_ms_ += ms;
        max_ms_ = std::max(max_ms_, ms);
        ++decisions_;
        return u;
    }

    std::unique_ptr<Policy> clone() const override {
        return std::make_unique<TimedPolicy>(inner_->clone());
    }
    std::string name() const override { return inner_->name(); }
    void reset() override { inner_->reset(); }

    OnlineTiming timing() const {
        OnlineTiming t;
        t.decisions = decisions_;
        t.max_ms = max_ms_;
        t.mean_ms = decisions_ > 0 ? sum_ms_ / static_cast<double>(decisions_) : 0.0;
        return t;
    }

private:
    std::unique_ptr<Policy> inner_;
    double sum_ms_ = 0.0;
    double max_ms_ = 0.0;
    long decisions_ = 0;
};

/// Mean/max per-decision latency over the first n_scenarios scenarios of the
/// set, measured serially on a fresh clone.
inline OnlineTiming time_online(const StationModel& m, const DeterministicProfiles& profiles,
                                const ScenarioSet& set, int n_scenarios, const Policy& policy,
                                const State& x0, const SimulateOptions& opts = {}) {
    TimedPolicy timed(policy.clone());
    const int n = std::min(n_scenarios, set.count());
    for (int i = 0; i < n; ++i) simulate(m, profiles, set.braking_kw[i], timed, x0, opts);
    return timed.timing();
}

}  // namespace metroems
