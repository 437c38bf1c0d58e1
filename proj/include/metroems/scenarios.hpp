#pragma once

// Exogenous data handling. Demand, train frequency and outdoor PM10 follow
// deterministic daily profiles; the braking-recovery power is stochastic.
// All exogenous series use noise indexing: entries 0..T, where entry t is
// the value observed at time t (entry t+1 drives the transition from t, and
// entry 0 is the pre-opening observation — braking there is zero since no
// trains have run). Scenario sets are generated once per role (optimization
// vs assessment) from disjoint seeded streams, and every downstream
// consumer checks the role so assessment data can never leak into fitting
// or calibration.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "model.hpp"
#include "rng.hpp"

namespace metroems {

// ---------------------------------------------------------------------------
// Deterministic profiles

/// Per-step deterministic exogenous series, length T+1 (noise indexing).
struct DeterministicProfiles {
    std::vector<double> demand_kw;
    std::vector<double> trains_per_hour;
    std::vector<double> outdoor_pm10;

    void validate(int horizon_steps) const {
        const auto n = static_cast<size_t>(horizon_steps) + 1;
        if (demand_kw.size() != n || trains_per_hour.size() != n || outdoor_pm10.size() != n)
            throw std::invalid_argument("DeterministicProfiles: series must have T+1 entries");
        for (size_t t = 0; t < n; ++t)
            if (demand_kw[t] < 0 || trains_per_hour[t] < 0 || outdoor_pm10[t] < 0)
                throw std::invalid_argument("DeterministicProfiles: values must be nonnegative");
    }

    NoiseVector noise_at(int t, double braking_kw) const {
        return NoiseVector{demand_kw[t], braking_kw, trains_per_hour[t], outdoor_pm10[t]};
    }

    /// Expand 24 hourly values into the T+1 noise-indexed series: entry t
    /// (t >= 1) covers the interval ending at t, entry 0 repeats hour 0.
    static std::vector<double> expand_hourly(const std::vector<double>& hourly,
                                             int steps_per_hour) {
        if (hourly.size() != 24) throw std::invalid_argument("expand_hourly: need 24 values");
        if (steps_per_hour < 1) throw std::invalid_argument("expand_hourly: steps_per_hour >= 1");
        std::vector<double> out;
        out.reserve(1 + 24 * steps_per_hour);
        out.push_back(hourly[0]);
        for (double v : hourly)
            for (int s = 0; s < steps_per_hour; ++s) out.push_back(v);
        return out;
    }
};

// ---------------------------------------------------------------------------
// Braking scenario generation

/// Braking recovery process: each train arrival triggers, with per-step
/// probability, a lognormal recovery pulse averaged over the step. A slowly
/// varying lognormal intensity factor (log-AR(1), mean one) modulates both
/// how often pulses fire and how large they are, so consecutive steps are
/// positively correlated, the way bursts of heavy or light trains are in
/// traffic data.
struct BrakingGenerator {
    std::vector<double> pulse_probability; // length T+1; entry 0 unused
    double pulse_log_mean = std::log(100.0); // log kW averaged over a step
    double pulse_log_sd = 0.5;
    double intensity_ar_a = 0.9;      // per-step log-intensity autocorrelation
    double intensity_ar_sigma = 0.25; // innovation sd of the log-intensity

    void validate(int horizon_steps) const {
        if (static_cast<int>(pulse_probability.size()) != horizon_steps + 1)
            throw std::invalid_argument("BrakingGenerator: pulse_probability must have T+1 entries");
        for (double q : pulse_probability)
            if (q < 0 || q > 1) throw std::invalid_argument("BrakingGenerator: probabilities in [0,1]");
        if (pulse_log_sd < 0 || intensity_ar_sigma < 0)
            throw std::invalid_argument("BrakingGenerator: sds must be nonnegative");
        if (!(intensity_ar_a > -1 && intensity_ar_a < 1))
            throw std::invalid_argument("BrakingGenerator: |intensity_ar_a| must be < 1");
    }
};

/// Deterministic train arrival counts from the frequency profile: a train
/// arrives whenever the cumulative expected count crosses an integer, so
/// the schedule is reproducible and consistent with n_t. Entry 0 is zero
/// (nothing arrives before the day starts).
inline std::vector<int> arrival_schedule(const std::vector<double>& trains_per_hour,
                                         double delta_hours) {
    std::vector<int> arrivals(trains_per_hour.size(), 0);
    double cum = 0.0;
    long prev_floor = 0;
    for (size_t t = 1; t < trains_per_hour.size(); ++t) {
        cum += trains_per_hour[t] * delta_hours;
        const long f = static_cast<long>(std::floor(cum + 1e-9));
        arrivals[t] = static_cast<int>(f - prev_floor);
        prev_floor = f;
    }
    return arrivals;
}

enum class ScenarioRole { optimization, assessment };

inline const char* to_string(ScenarioRole r) {
    return r == ScenarioRole::optimization ? "optimization" : "assessment";
}

inline std::uint64_t role_domain(ScenarioRole r) {
    return r == ScenarioRole::optimization ? rng_domain::optimization_scenarios
                                           : rng_domain::assessment_scenarios;
}

/// A set of braking sample paths (each length T+1, entry 0 = 0) with its
/// provenance. The role tag seals the split: fitting/quantization/
/// calibration accept only optimization sets, the Monte Carlo assessment
/// only assessment sets.
struct ScenarioSet {
    ScenarioRole role = ScenarioRole::optimization;
    std::uint64_t seed = 0;
    int horizon_steps = 0;                       // T
    std::vector<std::vector<double>> braking_kw; // [scenario][0..T]

    int count() const { return static_cast<int>(braking_kw.size()); }

    double max_braking() const {
        double m = 0.0;
        for (const auto& path : braking_kw)
            for (double b : path) m = std::max(m, b);
        return m;
    }

    void require_role(ScenarioRole expected, const char* consumer) const {
        if (role != expected)
            throw std::logic_error(std::string(consumer) + ": requires the " +
                                   to_string(expected) + " scenario set, got " + to_string(role));
    }

    std::uint64_t data_hash() const {
        std::uint64_t h = 1469598103934665603ull; // FNV-1a over raw doubles
        for (const auto& path : braking_kw) {
            const auto* b = reinterpret_cast<const unsigned char*>(path.data());
            for (size_t i = 0; i < path.size() * sizeof(double); ++i) {
                h ^= b[i];
                h *= 1099511628211ull;
            }
        }
        return h;
    }

    /// First n scenarios as a new set with the same role (for reduced-size
    /// reproducibility checks).
    ScenarioSet take(int n) const {
        if (n < 1 || n > count()) throw std::invalid_argument("ScenarioSet::take: bad count");
        ScenarioSet out;
        out.role = role;
        out.seed = seed;
        out.horizon_steps = horizon_steps;
        out.braking_kw.assign(braking_kw.begin(), braking_kw.begin() + n);
        return out;
    }

    // -- persistence: long-format CSV plus a JSON manifest --------------------

    void save(const std::string& prefix, const DeterministicProfiles& profiles) const {
        profiles.validate(horizon_steps);
        std::ofstream csv(prefix + ".csv", std::ios::trunc);
        if (!csv) throw std::runtime_error("ScenarioSet: cannot write " + prefix + ".csv");
        csv.precision(17);
        csv << "scenario,t,d_kw,b_kw,n_per_h,c_o_ugm3\n";
        for (int s = 0; s < count(); ++s)
            for (int t = 0; t <= horizon_steps; ++t)
                csv << s << ',' << t << ',' << profiles.demand_kw[t] << ','
                    << braking_kw[s][t] << ',' << profiles.trains_per_hour[t] << ','
                    << profiles.outdoor_pm10[t] << '\n';
        if (!csv) throw std::runtime_error("ScenarioSet: short write " + prefix + ".csv");
        csv.close();
        nlohmann::json manifest{{"role", to_string(role)},
                                {"seed", seed},
                                {"count", count()},
                                {"horizon_steps", horizon_steps},
                                {"data_hash", data_hash()}};
        std::ofstream mf(prefix + ".manifest.json", std::ios::trunc);
        if (!mf) throw std::runtime_error("ScenarioSet: cannot write manifest for " + prefix);
        mf << manifest.dump(2) << "\n";
    }

    static ScenarioSet load(const std::string& prefix) {
        std::ifstream mf(prefix + ".manifest.json");
        if (!mf) throw std::runtime_error("ScenarioSet: missing manifest for " + prefix);
        nlohmann::json manifest;
        mf >> manifest;
        ScenarioSet set;
        const std::string role = manifest.at("role").get<std::string>();
        if (role == "optimization")
            set.role = ScenarioRole::optimization;
        else if (role == "assessment")
            set.role = ScenarioRole::assessment;
        else
            throw std::runtime_error("ScenarioSet: unknown role " + role);
        set.seed = manifest.at("seed").get<std::uint64_t>();
        set.horizon_steps = manifest.at("horizon_steps").get<int>();
        const int count = manifest.at("count").get<int>();
        set.braking_kw.assign(count, std::vector<double>(set.horizon_steps + 1, 0.0));
        std::ifstream csv(prefix + ".csv");
        if (!csv) throw std::runtime_error("ScenarioSet: missing data for " + prefix);
        std::string line;
        std::getline(csv, line); // header
        long rows = 0;
        while (std::getline(csv, line)) {
            if (line.empty()) continue;
            std::istringstream ss(line);
            std::string tok;
            std::getline(ss, tok, ',');
            const int s = std::stoi(tok);
            std::getline(ss, tok, ',');
            const int t = std::stoi(tok);
            std::getline(ss, tok, ','); // d
            std::getline(ss, tok, ',');
            if (s < 0 || s >= count || t < 0 || t > set.horizon_steps)
                throw std::runtime_error("ScenarioSet: row out of range in " + prefix);
            set.braking_kw[s][t] = std::stod(tok);
            ++rows;
        }
        if (rows != static_cast<long>(count) * (set.horizon_steps + 1))
            throw std::runtime_error("ScenarioSet: row count mismatch in " + prefix);
        if (set.data_hash() != manifest.at("data_hash").get<std::uint64_t>())
            throw std::runtime_error("ScenarioSet: data hash mismatch in " + prefix);
        return set;
    }
};

/// Draw one braking path (length T+1, entry 0 ends up zero because nothing
/// arrives before the day). A braking ramp does not respect step boundaries,
/// so each pulse is split between the step the train arrives in and the next
/// one; the shared energy is what makes consecutive steps positively
/// correlated even where arrivals alternate. Stream ownership stays with the
/// caller so the generator itself is plain data.
inline std::vector<double> draw_braking_path(const BrakingGenerator& gen,
                                             const std::vector<int>& arrivals,
                                             RngStream& stream) {
    const int n = static_cast<int>(arrivals.size());
    std::vector<double> path(n, 0.0);
    const double stationary_var = gen.intensity_ar_sigma * gen.intensity_ar_sigma /
                                  (1.0 - gen.intensity_ar_a * gen.intensity_ar_a);
    double log_intensity = stream.normal(0.0, std::sqrt(stationary_var));
    for (int t = 1; t < n; ++t) {
        log_intensity = gen.intensity_ar_a * log_intensity +
                        stream.normal(0.0, gen.intensity_ar_sigma);
        const double intensity = std::exp(log_intensity - 0.5 * stationary_var);
        const double fire = std::min(1.0, gen.pulse_probability[t] * intensity);
        for (int j = 0; j < arrivals[t]; ++j)
            if (stream.bernoulli(fire)) {
                const double pulse =
                    intensity * stream.lognormal(gen.pulse_log_mean, gen.pulse_log_sd);
                const double keep = stream.uniform(0.5, 1.0);
                path[t] += keep * pulse;
                if (t + 1 < n) path[t + 1] += (1.0 - keep) * pulse;
            }
    }
    return path;
}

/// Generate a scenario set. Each scenario index gets its own stream keyed by
/// (seed, role, index), so sets are reproducible, order-independent, and the
/// two roles are statistically disjoint.
inline ScenarioSet generate_braking(const BrakingGenerator& gen,
                                    const std::vector<double>& trains_per_hour,
                                    double delta_hours, int count, std::uint64_t seed,
                                    ScenarioRole role) {
    const int T = static_cast<int>(trains_per_hour.size()) - 1;
    gen.validate(T);
    if (count < 1) throw std::invalid_argument("generate_braking: count must be >= 1");
    const std::vector<int> arrivals = arrival_schedule(trains_per_hour, delta_hours);
    ScenarioSet set;
    set.role = role;
    set.seed = seed;
    set.horizon_steps = T;
    set.braking_kw.resize(count);
    for (int s = 0; s < count; ++s) {
        RngStream stream(seed, role_domain(role), static_cast<std::uint64_t>(s));
        set.braking_kw[s] = draw_braking_path(gen, arrivals, stream);
    }
    return set;
}

// ---------------------------------------------------------------------------
// Noise model: log-AR(1) with per-step residual pools

inline double propagate_log_ar1(double a, double eps_log, double b_prev, double z) {
    const double y = std::log(std::max(b_prev, 0.0) + eps_log);
    return std::max(std::exp(a * y + z) - eps_log, 0.0);
}

/// Fitted braking-noise model: y_t = log(b_t + eps_log) follows
/// y_t = a y_{t-1} + z_t with per-step residual pools for t = 1..T
/// (residuals[0] stays empty). The inverse transform floors at zero, so
/// propagated paths stay physical.
struct NoiseModel {
    double a = 0.0;
    double eps_log = 0.1;
    std::vector<std::vector<double>> residuals; // index 0..T; [0] empty
    double max_braking_kw = 0.0;
    bool degenerate = false;

    int horizon_steps() const { return static_cast<int>(residuals.size()) - 1; }

    double to_log(double b) const { return std::log(std::max(b, 0.0) + eps_log); }
    double from_log(double y) const { return std::max(std::exp(y) - eps_log, 0.0); }

    /// One step of the recursion: the braking that follows b_prev when the
    /// innovation is z.
    double propagate(double b_prev, double z) const {
        return propagate_log_ar1(a, eps_log, b_prev, z);
    }
};

/// Persist a fitted model as prefix.json (parameters) plus prefix.bin (the
/// per-step residual pools, which the online conditional view needs whole).
inline void save_noise_model(const NoiseModel& m, const std::string& prefix) {
    nlohmann::json j{{"a", m.a},
                     {"eps_log", m.eps_log},
                     {"max_braking_kw", m.max_braking_kw},
                     {"degenerate", m.degenerate},
                     {"horizon_steps", m.horizon_steps()}};
    std::ofstream jf(prefix + ".json", std::ios::trunc);
    if (!jf) throw std::runtime_error("save_noise_model: cannot write " + prefix + ".json");
    jf << j.dump(2) << "\n";
    std::ofstream bin(prefix + ".bin", std::ios::binary | std::ios::trunc);
    if (!bin) throw std::runtime_error("save_noise_model: cannot write " + prefix + ".bin");
    static constexpr char magic[8] = {'M', 'E', 'M', 'S', 'N', 'M', '0', '1'};
    bin.write(magic, 8);
    const std::int64_t steps = m.horizon_steps();
    bin.write(reinterpret_cast<const char*>(&steps), sizeof steps);
    for (const auto& pool : m.residuals) {
        const std::int64_t count = static_cast<std::int64_t>(pool.size());
        bin.write(reinterpret_cast<const char*>(&count), sizeof count);
        bin.write(reinterpret_cast<const char*>(pool.data()),
                  static_cast<std::streamsize>(pool.size() * sizeof(double)));
    }
    if (!bin) throw std::runtime_error("save_noise_model: short write to " + prefix + ".bin");
}

inline NoiseModel load_noise_model(const std::string& prefix) {
    std::ifstream jf(prefix + ".json");
    if (!jf) throw std::runtime_error("load_noise_model: missing " + prefix + ".json");
    nlohmann::json j;
    jf >> j;
    NoiseModel m;
    m.a = j.at("a").get<double>();
    m.eps_log = j.at("eps_log").get<double>();
    m.max_braking_kw = j.at("max_braking_kw").get<double>();
    m.degenerate = j.at("degenerate").get<bool>();
    const std::int64_t T = j.at("horizon_steps").get<std::int64_t>();
    std::ifstream bin(prefix + ".bin", std::ios::binary);
    if (!bin) throw std::runtime_error("load_noise_model: missing " + prefix + ".bin");
    static constexpr char magic[8] = {'M', 'E', 'M', 'S', 'N', 'M', '0', '1'};
    char got[8];
    bin.read(got, 8);
    if (!bin || !std::equal(got, got + 8, magic))
        throw std::runtime_error("load_noise_model: bad magic in " + prefix + ".bin");
    std::int64_t steps = 0;
    bin.read(reinterpret_cast<char*>(&steps), sizeof steps);
    if (!bin || steps != T)
        throw std::runtime_error("load_noise_model: horizon mismatch in " + prefix + ".bin");
    m.residuals.resize(static_cast<size_t>(steps) + 1);
    for (auto& pool : m.residuals) {
        std::int64_t count = 0;
        bin.read(reinterpret_cast<char*>(&count), sizeof count);
        if (!bin || count < 0)
            throw std::runtime_error("load_noise_model: truncated " + prefix + ".bin");
        pool.resize(static_cast<size_t>(count));
        bin.read(reinterpret_cast<char*>(pool.data()),
                 static_cast<std::streamsize>(pool.size() * sizeof(double)));
        if (!bin) throw std::runtime_error("load_noise_model: truncated " + prefix + ".bin");
    }
    return m;
}

/// Pooled least-squares fit of the log-AR(1) slope over all consecutive
/// pairs of all scenarios (intercepts are absorbed by the per-step residual
/// pools, so the slope is estimated with means removed). Optimization-role
/// data only.
inline NoiseModel fit_log_ar1(const ScenarioSet& set, double eps_log = 0.1) {
    set.require_role(ScenarioRole::optimization, "fit_log_ar1");
    if (set.count() < 2) throw std::invalid_argument("fit_log_ar1: need at least 2 scenarios");
    const int T = set.horizon_steps;
    if (T < 1) throw std::invalid_argument("fit_log_ar1: need at least 1 step");

    NoiseModel model;
    model.eps_log = eps_log;
    model.max_braking_kw = set.max_braking();

    // Slope over pooled (y_t, y_{t+1}) pairs, t = 0..T-1.
    double sum0 = 0.0, sum1 = 0.0;
    long n_pairs = 0;
    for (const auto& path : set.braking_kw)
        for (int t = 0; t < T; ++t) {
            sum0 += model.to_log(path[t]);
            sum1 += model.to_log(path[t + 1]);
            ++n_pairs;
        }
    const double m0 = sum0 / n_pairs, m1 = sum1 / n_pairs;
    double sxx = 0.0, sxy = 0.0;
    for (const auto& path : set.braking_kw)
        for (int t = 0; t < T; ++t) {
            const double d0 = model.to_log(path[t]) - m0;
            const double d1 = model.to_log(path[t + 1]) - m1;
            sxx += d0 * d0;
            sxy += d0 * d1;
        }
    model.residuals.assign(T + 1, {});
    if (sxx <= 0.0) {
        model.degenerate = true;
        model.a = 1.0;
        for (int t = 1; t <= T; ++t) model.residuals[t].assign(set.count(), 0.0);
        return model;
    }
    model.a = sxy / sxx;
    for (int t = 1; t <= T; ++t) model.residuals[t].resize(set.count());
    for (int s = 0; s < set.count(); ++s) {
        const auto& path = set.braking_kw[s];
        for (int t = 1; t <= T; ++t)
            model.residuals[t][s] = model.to_log(path[t]) - model.a * model.to_log(path[t - 1]);
    }
    return model;
}

/// Point forecast of b_s for s = first_step..first_step+n_steps-1, started
/// from the last observed value. Each step applies the fitted recursion
/// with that step's residual summary; with bias_correction the summary is
/// log E[exp(z)] (unbiased for the lognormal factor), otherwise E[z] (a
/// median-type forecast).
inline std::vector<double> forecast_braking(const NoiseModel& model, int first_step,
                                            double b_observed, int n_steps,
                                            bool bias_correction = true) {
    if (first_step < 1 || first_step + n_steps - 1 > model.horizon_steps())
        throw std::invalid_argument("forecast_braking: window outside 1..T");
    std::vector<double> out;
    out.reserve(n_steps);
    double b = b_observed;
    for (int k = 0; k < n_steps; ++k) {
        const auto& pool = model.residuals[first_step + k];
        if (pool.empty()) throw std::logic_error("forecast_braking: no residuals stored");
        double term;
        if (bias_correction) {
            double acc = 0.0;
            for (double z : pool) acc += std::exp(z);
            term = std::log(acc / pool.size());
        } else {
            term = std::accumulate(pool.begin(), pool.end(), 0.0) / pool.size();
        }
        b = model.propagate(b, term);
        out.push_back(b);
    }
    return out;
}

/// Forecast as full noise vectors: braking from the fitted model, the rest
/// copied from the deterministic profiles.
inline std::vector<NoiseVector> forecast(const NoiseModel& model,
                                         const DeterministicProfiles& profiles, int first_step,
                                         const NoiseVector& w_observed, int n_steps,
                                         bool bias_correction = true) {
    const std::vector<double> b =
        forecast_braking(model, first_step, w_observed.braking_kw, n_steps, bias_correction);
    std::vector<NoiseVector> out(n_steps);
    for (int k = 0; k < n_steps; ++k) out[k] = profiles.noise_at(first_step + k, b[k]);
    return out;
}

// ---------------------------------------------------------------------------
// 1-D k-means quantization

/// Discrete distribution on the real line; atoms sorted ascending.
struct DiscreteDist {
    std::vector<double> atoms;
    std::vector<double> weights;

    int size() const { return static_cast<int>(atoms.size()); }

    double mean() const {
        double m = 0.0;
        for (int k = 0; k < size(); ++k) m += weights[k] * atoms[k];
        return m;
    }
};

inline void to_json(nlohmann::json& j, const DiscreteDist& d) {
    j = {{"atoms", d.atoms}, {"weights", d.weights}};
}

inline void from_json(const nlohmann::json& j, DiscreteDist& d) {
    j.at("atoms").get_to(d.atoms);
    j.at("weights").get_to(d.weights);
}

struct KmeansResult {
    DiscreteDist dist;
    bool reduced = false; // true when K exceeded the number of distinct values
    int iterations = 0;
};

/// Lloyd's algorithm with k-means++ seeding on sorted data. Deterministic
/// given the stream. Assignment ties go to the left center; empty clusters
/// steal the point farthest from its center.
inline KmeansResult kmeans_1d(std::vector<double> values, int K, RngStream& stream,
                              int max_iterations = 100) {
    if (values.empty()) throw std::invalid_argument("kmeans_1d: empty input");
    if (K < 1) throw std::invalid_argument("kmeans_1d: K must be >= 1");
    std::sort(values.begin(), values.end());
    const int n = static_cast<int>(values.size());

    int distinct = 1;
    for (int i = 1; i < n; ++i)
        if (values[i] != values[i - 1]) ++distinct;
    KmeansResult result;
    if (K > distinct) {
        K = distinct;
        result.reduced = true;
    }

    // k-means++ seeding; d2 tracks the running min distance to the chosen
    // centers, refreshed against the newest center only.
    std::vector<double> centers;
    centers.reserve(K);
    centers.push_back(values[stream.pick(static_cast<std::uint64_t>(n))]);
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    while (static_cast<int>(centers.size()) < K) {
        const double c_new = centers.back();
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], (values[i] - c_new) * (values[i] - c_new));
            total += d2[i];
        }
        int chosen = 0;
        if (total > 0.0) {
            const double target = stream.uniform() * total;
            double acc = 0.0;
            chosen = n - 1;
            for (int i = 0; i < n; ++i) {
                acc += d2[i];
                if (acc >= target && d2[i] > 0.0) {
                    chosen = i;
                    break;
                }
            }
        } else {
            chosen = static_cast<int>(stream.pick(static_cast<std::uint64_t>(n)));
        }
        centers.push_back(values[chosen]);
    }
    std::sort(centers.begin(), centers.end());
    centers.erase(std::unique(centers.begin(), centers.end()), centers.end());
    // Refill duplicate seeds (possible when seeding picks equal values) with
    // distinct data values not yet used as centers.
    for (int i = 0; static_cast<int>(centers.size()) < K && i < n; ++i)
        if (!std::binary_search(centers.begin(), centers.end(), values[i]))
            centers.insert(std::upper_bound(centers.begin(), centers.end(), values[i]),
                           values[i]);
    K = static_cast<int>(centers.size());

    // Lloyd iterations. On sorted data and sorted centers the assignment is
    // monotone, so one left-to-right sweep places every point.
    std::vector<int> assign(n, -1), counts(K, 0);
    std::vector<double> sums(K, 0.0);
    for (int iter = 0; iter < max_iterations; ++iter) {
        bool changed = false;
        for (int i = 0, c = 0; i < n; ++i) {
            while (c + 1 < K && (values[i] - centers[c + 1]) * (values[i] - centers[c + 1]) <
                                    (values[i] - centers[c]) * (values[i] - centers[c]))
                ++c;
            if (assign[i] != c) {
                assign[i] = c;
                changed = true;
            }
        }
        result.iterations = iter + 1;
        if (!changed) break;
        std::fill(counts.begin(), counts.end(), 0);
        std::fill(sums.begin(), sums.end(), 0.0);
        for (int i = 0; i < n; ++i) {
            counts[assign[i]]++;
            sums[assign[i]] += values[i];
        }
        for (int c = 0; c < K; ++c) {
            if (counts[c] == 0) {
                int far = 0;
                double best = -1.0;
                for (int i = 0; i < n; ++i) {
                    const double d = std::abs(values[i] - centers[assign[i]]);
                    if (d > best && counts[assign[i]] > 1) {
                        best = d;
                        far = i;
                    }
                }
                counts[assign[far]]--;
                sums[assign[far]] -= values[far];
                assign[far] = c;
                counts[c] = 1;
                sums[c] = values[far];
            }
            centers[c] = sums[c] / counts[c];
        }
        std::sort(centers.begin(), centers.end());
    }

    // Final assignment pass for weights.
    std::fill(counts.begin(), counts.end(), 0);
    for (int i = 0, c = 0; i < n; ++i) {
        while (c + 1 < K && (values[i] - centers[c + 1]) * (values[i] - centers[c + 1]) <
                                (values[i] - centers[c]) * (values[i] - centers[c]))
            ++c;
        counts[c]++;
    }
    result.dist.atoms = centers;
    result.dist.weights.resize(K);
    for (int c = 0; c < K; ++c)
        result.dist.weights[c] = static_cast<double>(counts[c]) / n;
    return result;
}

// ---------------------------------------------------------------------------
// Quantized noise views

/// Stagewise-independent offline marginals: one K-point quantization of the
/// braking values per step t = 1..T (entry 0 unused, kept for alignment).
/// Optimization-role data only.
inline std::vector<DiscreteDist> quantize_marginals(const ScenarioSet& set, int K,
                                                    std::uint64_t seed) {
    set.require_role(ScenarioRole::optimization, "quantize_marginals");
    if (K < 1 || K > set.count())
        throw std::invalid_argument("quantize_marginals: need 1 <= K <= count");
    std::vector<DiscreteDist> out(set.horizon_steps + 1);
    for (int t = 1; t <= set.horizon_steps; ++t) {
        std::vector<double> values(set.count());
        for (int s = 0; s < set.count(); ++s) values[s] = set.braking_kw[s][t];
        RngStream stream(seed, rng_domain::kmeans, static_cast<std::uint64_t>(t));
        out[t] = kmeans_1d(std::move(values), K, stream).dist;
    }
    return out;
}

/// Per-step quantization of the fitted residual pools (t = 1..T), for
/// augmented-state induction and fast conditional lookups.
inline std::vector<DiscreteDist> quantize_residuals(const NoiseModel& model, int K,
                                                    std::uint64_t seed) {
    std::vector<DiscreteDist> out(model.horizon_steps() + 1);
    for (int t = 1; t <= model.horizon_steps(); ++t) {
        RngStream stream(seed, rng_domain::kmeans,
                         0x5a00000000ull + static_cast<std::uint64_t>(t));
        out[t] = kmeans_1d(model.residuals[t], K, stream).dist;
    }
    return out;
}

/// Conditional distribution of the step-t braking given the previous value:
/// push every fitted residual of step t through the recursion, then
/// re-quantize to K_online atoms. Deterministic: the k-means stream depends
/// only on (seed, t), so repeated queries agree across threads.
inline DiscreteDist conditional_distribution(const NoiseModel& model, int t, double b_prev,
                                             int K_online, std::uint64_t seed) {
    if (t < 1 || t > model.horizon_steps())
        throw std::invalid_argument("conditional_distribution: step outside 1..T");
    if (model.residuals[t].empty())
        throw std::invalid_argument("conditional_distribution: no residuals stored for step");
    if (b_prev < 0) throw std::invalid_argument("conditional_distribution: b_prev must be >= 0");
    std::vector<double> pushed(model.residuals[t].size());
    for (size_t s = 0; s < pushed.size(); ++s)
        pushed[s] = model.propagate(b_prev, model.residuals[t][s]);
    RngStream stream(seed, rng_domain::kmeans,
                     0xc000000000ull + static_cast<std::uint64_t>(t));
    return kmeans_1d(std::move(pushed), K_online, stream).dist;
}

} // namespace metroems
