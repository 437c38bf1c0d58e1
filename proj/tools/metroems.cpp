// Pipeline driver: every experiment stage is a subcommand reading one JSON
// config; stages hand data to each other only through files in the output
// directory, each stamped with the config hash so mixed-configuration runs
// fail loudly instead of silently blending artifacts.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <metroems/assess.hpp>
#include <metroems/calibrate.hpp>
#include <metroems/config.hpp>
#include <metroems/integrator.hpp>
#include <metroems/milp.hpp>
#include <metroems/model.hpp>
#include <metroems/mpc.hpp>
#include <metroems/parallel.hpp>
#include <metroems/scenarios.hpp>
#include <metroems/sdp.hpp>

namespace me = metroems;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

struct Ctx {
    me::ExperimentConfig cfg;
    std::unique_ptr<me::ThreadPool> pool;  // null = serial

    me::ThreadPool* pool_ptr() const { return pool.get(); }
    std::string art(const std::string& name) const { return cfg.output_dir + "/" + name; }
};

void write_json_file(const json& j, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << j.dump(2) << "\n";
    if (!out) throw std::runtime_error("short write to " + path);
}

json read_json_file(const std::string& path, const std::string& hint) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("missing " + path + (hint.empty() ? "" : "; " + hint));
    json j;
    in >> j;
    return j;
}

void write_manifest(const Ctx& c, const std::string& stage, json extra = json::object()) {
    json m{{"stage", stage},
           {"version", kVersion},
           {"config_hash", hash_hex(me::config_hash(c.cfg))},
           {"optimization_seed", c.cfg.optimization_seed},
           {"assessment_seed", c.cfg.assessment_seed},
           {"optimization_count", c.cfg.optimization_count},
           {"assessment_count", c.cfg.assessment_count}};
    for (auto& [k, v] : extra.items()) m[k] = v;
    write_json_file(m, c.art("manifest_" + stage + ".json"));
}

/// Load a prior stage's manifest and insist it was produced under the
/// configuration now in effect.
json require_stage(const Ctx& c, const std::string& stage) {
    const std::string path = c.art("manifest_" + stage + ".json");
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("missing artifacts for stage '" + stage + "': run `metroems " +
                                 stage + "` first");
    json m;
    in >> m;
    const std::string want = hash_hex(me::config_hash(c.cfg));
    const std::string got = m.at("config_hash").get<std::string>();
    if (got != want)
        throw std::runtime_error("stage '" + stage +
                                 "' artifacts were produced under a different configuration "
                                 "(hash " +
                                 got + ", current " + want + "); rerun that stage");
    return m;
}

json stats_json(const me::Stats& s) {
    return json{{"mean", s.mean}, {"stddev", s.stddev}, {"sem", s.sem}};
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ','))
        if (!tok.empty()) out.push_back(tok);
    return out;
}

std::shared_ptr<const me::ValueTable> load_table(const Ctx& c, const std::string& file,
                                                 const std::string& stage) {
    auto table = std::make_shared<me::ValueTable>(me::ValueTable::load(c.art(file)));
    if (table->model_hash != me::config_hash(c.cfg))
        throw std::runtime_error(file +
                                 " was built under a different configuration; rerun `metroems " +
                                 stage + "`");
    return table;
}

std::unique_ptr<me::Policy> make_policy(const Ctx& c, const std::string& name,
                                        const me::StationModel& m,
                                        const me::DeterministicProfiles& profiles) {
    if (name == "reference") return me::reference_policy(m);
    const me::StateGrid grid = me::build_state_grid(c.cfg);
    const me::ControlMesh mesh = me::build_control_mesh(c.cfg);
    if (name == "mpc") {
        require_stage(c, "fit-noise");
        const me::NoiseModel noise = me::load_noise_model(c.art("noise_model"));
        return me::mpc_controller(m, profiles, grid, mesh, c.cfg.mpc, noise);
    }
    if (name == "sdpo") {
        require_stage(c, "offline-sdpo");
        require_stage(c, "fit-noise");
        auto table = load_table(c, "vtable_sdpo.bin", "offline-sdpo");
        const me::NoiseModel noise = me::load_noise_model(c.art("noise_model"));
        return me::sdpo_policy(m, profiles, mesh, std::move(table),
                               me::ConditionalSource::from_model(noise, c.cfg.grid.k_online,
                                                                 c.cfg.optimization_seed));
    }
    if (name == "sdpa") {
        require_stage(c, "offline-sdpa");
        require_stage(c, "fit-noise");
        auto table = load_table(c, "vtable_sdpa.bin", "offline-sdpa");
        const me::NoiseModel noise = me::load_noise_model(c.art("noise_model"));
        const json aj = read_json_file(c.art("residual_atoms.json"), "rerun `metroems offline-sdpa`");
        auto atoms = aj.at("atoms").get<std::vector<me::DiscreteDist>>();
        return me::sdpa_policy(m, profiles, mesh, std::move(table), noise.a, noise.eps_log,
                               std::move(atoms));
    }
    throw std::runtime_error("unknown policy '" + name +
                             "' (expected reference, sdpo, sdpa or mpc)");
}

// ---------------------------------------------------------------------------
// Stages

int cmd_gen_scenarios(const Ctx& c) {
    const auto profiles = me::build_profiles(c.cfg);
    const auto gen = me::build_generator(c.cfg);
    const auto opt = me::generate_braking(gen, profiles.trains_per_hour, c.cfg.time.delta_hours,
                                          c.cfg.optimization_count, c.cfg.optimization_seed,
                                          me::ScenarioRole::optimization);
    const auto asmt = me::generate_braking(gen, profiles.trains_per_hour, c.cfg.time.delta_hours,
                                           c.cfg.assessment_count, c.cfg.assessment_seed,
                                           me::ScenarioRole::assessment);
    opt.save(c.art("scenarios_optimization"), profiles);
    asmt.save(c.art("scenarios_assessment"), profiles);
    write_manifest(c, "gen-scenarios",
                   {{"optimization_hash", hash_hex(opt.data_hash())},
                    {"assessment_hash", hash_hex(asmt.data_hash())}});
    std::printf("wrote %s.csv (%d scenarios, hash %s)\n",
                c.art("scenarios_optimization").c_str(), opt.count(),
                hash_hex(opt.data_hash()).c_str());
    std::printf("wrote %s.csv (%d scenarios, hash %s)\n", c.art("scenarios_assessment").c_str(),
                asmt.count(), hash_hex(asmt.data_hash()).c_str());
    return 0;
}

int cmd_fit_noise(const Ctx& c) {
    require_stage(c, "gen-scenarios");
    const auto set = me::ScenarioSet::load(c.art("scenarios_optimization"));
    const me::NoiseModel noise = me::fit_log_ar1(set, c.cfg.eps_log);
    me::save_noise_model(noise, c.art("noise_model"));
    write_manifest(c, "fit-noise",
                   {{"a", noise.a},
                    {"max_braking_kw", noise.max_braking_kw},
                    {"degenerate", noise.degenerate},
                    {"scenario_hash", hash_hex(set.data_hash())}});
    std::printf("fitted log-AR(1): a = %.6f, max braking %.2f kW%s\n", noise.a,
                noise.max_braking_kw, noise.degenerate ? " (degenerate)" : "");
    std::printf("wrote %s.json / .bin\n", c.art("noise_model").c_str());
    return 0;
}

int cmd_calibrate(const Ctx& c) {
    me::Stopwatch sw;
    const me::CalibrationResult result = me::calibrate(c.cfg, {}, c.pool_ptr());
    me::save_config(result.config, c.art("calibrated_config.json"));
    json points = json::array();
    for (const auto& p : result.lambda.points)
        points.push_back({{"lambda", p.lambda},
                          {"mean_pm10", p.mean_pm10},
                          {"mean_bill_eur", p.mean_bill},
                          {"feasible", p.feasible}});
    write_json_file(
        json{{"targets",
              {{"energy_kwh", result.targets.energy_kwh},
               {"bill_eur", result.targets.bill_eur},
               {"mean_pm10", result.targets.mean_pm10},
               {"max_pm10", result.targets.max_pm10}}},
             {"achieved",
              {{"energy_kwh", result.reference.energy_kwh},
               {"bill_eur", result.reference.bill_eur},
               {"mean_pm10", result.reference.mean_pm10},
               {"max_pm10", result.reference.max_pm10}}},
             {"demand_scale", result.config.profiles.demand_scale},
             {"tariff_scale", result.config.tariff.scale},
             {"alpha", result.config.air.alpha},
             {"beta", result.config.air.beta},
             {"air_iterations", result.air_iterations},
             {"pm10_grid_max", result.config.grid.pm10_grid_max},
             {"lambda_selected", result.lambda.selected},
             {"lambda_scan", points}},
        c.art("calibration_report.json"));
    write_manifest(c, "calibrate", {{"lambda_selected", result.lambda.selected}});
    std::printf("calibrated in %.1f s: demand_scale %.6f, tariff_scale %.6f, alpha %.6f, "
                "beta %.6f, lambda %.6g\n",
                sw.seconds(), result.config.profiles.demand_scale, result.config.tariff.scale,
                result.config.air.alpha, result.config.air.beta, result.lambda.selected);
    std::printf("reference day: %.1f kWh, %.2f eur, PM10 mean %.1f max %.1f\n",
                result.reference.energy_kwh, result.reference.bill_eur,
                result.reference.mean_pm10, result.reference.max_pm10);
    std::printf("wrote %s\n", c.art("calibrated_config.json").c_str());
    return 0;
}

int cmd_offline_sdpo(const Ctx& c) {
    require_stage(c, "gen-scenarios");
    const auto set = me::ScenarioSet::load(c.art("scenarios_optimization"));
    const auto m = me::build_model(c.cfg);
    const auto profiles = me::build_profiles(c.cfg);
    const auto grid = me::build_state_grid(c.cfg);
    const auto mesh = me::build_control_mesh(c.cfg);
    const auto marginals =
        me::quantize_marginals(set, c.cfg.grid.k_marginal, c.cfg.optimization_seed);
    me::Stopwatch sw;
    const me::ValueTable table = me::backward_induction_sdpo(m, profiles, grid, mesh, marginals,
                                                             me::config_hash(c.cfg));
    const double offline_s = sw.seconds();
    table.save(c.art("vtable_sdpo.bin"));
    write_json_file(json{{"marginals", marginals}}, c.art("marginals.json"));
    const double v0 = table.interpolate(0, me::default_x0(c.cfg));
    write_manifest(c, "offline-sdpo", {{"v0", v0}});
    std::printf("offline induction: %.2f s, V0(x0) = %.4f eur\n", offline_s, v0);
    std::printf("wrote %s\n", c.art("vtable_sdpo.bin").c_str());
    return 0;
}

int cmd_offline_sdpa(const Ctx& c) {
    require_stage(c, "fit-noise");
    const me::NoiseModel noise = me::load_noise_model(c.art("noise_model"));
    const auto m = me::build_model(c.cfg);
    const auto profiles = me::build_profiles(c.cfg);
    const auto grid = me::build_state_grid(c.cfg);
    const auto mesh = me::build_control_mesh(c.cfg);
    const auto atoms = me::quantize_residuals(noise, c.cfg.grid.k_residual,
                                              c.cfg.optimization_seed);
    const me::Axis noise_axis = me::build_noise_axis(c.cfg, noise.max_braking_kw);
    me::Stopwatch sw;
    const me::ValueTable table =
        me::backward_induction_sdpa(m, profiles, grid, mesh, noise_axis, noise.a, noise.eps_log,
                                    atoms, c.pool_ptr(), me::config_hash(c.cfg));
    const double offline_s = sw.seconds();
    table.save(c.art("vtable_sdpa.bin"));
    write_json_file(json{{"atoms", atoms}}, c.art("residual_atoms.json"));
    const double v0 = table.interpolate(0, me::default_x0(c.cfg), 0.0);
    write_manifest(c, "offline-sdpa", {{"v0", v0}});
    std::printf("offline induction (augmented): %.2f s, V0(x0, w0=0) = %.4f eur\n", offline_s,
                v0);
    std::printf("wrote %s\n", c.art("vtable_sdpa.bin").c_str());
    return 0;
}

int cmd_simulate(const Ctx& c, const std::string& policy_name, const std::string& which,
                 int index) {
    require_stage(c, "gen-scenarios");
    if (which != "optimization" && which != "assessment")
        throw std::runtime_error("--set must be optimization or assessment");
    const auto set = me::ScenarioSet::load(c.art("scenarios_" + which));
    if (index < 0 || index >= set.count())
        throw std::runtime_error("--scenario out of range (set has " +
                                 std::to_string(set.count()) + " scenarios)");
    const auto m = me::build_model(c.cfg);
    const auto profiles = me::build_profiles(c.cfg);
    auto policy = make_policy(c, policy_name, m, profiles);
    me::SimulateOptions opts;
    opts.recover_braking = policy_name != "reference";
    const me::SimulationTrace tr =
        me::simulate(m, profiles, set.braking_kw[index], *policy, me::default_x0(c.cfg), opts);

    const std::string path =
        c.art("trace_" + policy_name + "_" + which + "_" + std::to_string(index) + ".csv");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.precision(17);
    out << "t,soc_kwh,pm10_ugm3,battery_kw,vent,import_kw,stage_cost_eur\n";
    for (int t = 0; t < static_cast<int>(tr.controls.size()); ++t)
        out << t << ',' << tr.states[t].soc_kwh << ',' << tr.states[t].pm10_ugm3 << ','
            << tr.controls[t].battery_kw << ','
            << (tr.controls[t].vent == me::VentMode::high ? "high" : "low") << ','
            << tr.import_kw[t] << ',' << tr.stage_costs[t] << '\n';
    if (!out) throw std::runtime_error("short write to " + path);
    write_manifest(c, "simulate",
                   {{"policy", policy_name}, {"set", which}, {"scenario", index}});
    std::printf("%s on %s scenario %d: cost %.4f eur (bill %.4f), energy %.2f kWh, "
                "PM10 mean %.2f max %.2f\n",
                policy_name.c_str(), which.c_str(), index, tr.total_cost, tr.bill_eur,
                tr.energy_import_kwh, tr.mean_pm10, tr.max_pm10);
    std::printf("wrote %s\n", path.c_str());
    return 0;
}

int cmd_assess(const Ctx& c, const std::string& policies_csv, int timing_scenarios) {
    require_stage(c, "gen-scenarios");
    const std::vector<std::string> names = split_csv(policies_csv);
    if (names.empty()) throw std::runtime_error("--policies must name at least one policy");
    const auto set = me::ScenarioSet::load(c.art("scenarios_assessment"));
    const auto m = me::build_model(c.cfg);
    const auto profiles = me::build_profiles(c.cfg);
    const me::State x0 = me::default_x0(c.cfg);

    me::SimulateOptions ref_opts;
    ref_opts.recover_braking = false;
    const auto ref_policy = me::reference_policy(m);
    const me::McResult ref = me::monte_carlo(m, profiles, set, *ref_policy, x0, ref_opts,
                                             c.pool_ptr());
    me::write_scenario_csv(ref, nullptr, c.art("assess_reference.csv"));

    std::vector<me::McResult> results;
    json timing = json::object();
    for (const std::string& name : names) {
        auto policy = make_policy(c, name, m, profiles);
        me::Stopwatch sw;
        me::McResult r = me::monte_carlo(m, profiles, set, *policy, x0, {}, c.pool_ptr());
        const double wall = sw.seconds();
        me::write_scenario_csv(r, &ref, c.art("assess_" + name + ".csv"));
        const me::OnlineTiming ot = me::time_online(
            m, profiles, set, std::min(timing_scenarios, set.count()), *policy, x0, {});
        std::printf("%s: %d scenarios in %.1f s; online decide mean %.3f ms max %.3f ms\n",
                    name.c_str(), r.count, wall, ot.mean_ms, ot.max_ms);
        timing[name] = {{"mean_ms", ot.mean_ms}, {"max_ms", ot.max_ms}};
        results.push_back(std::move(r));
    }

    const me::AssessmentReport rep = me::assess(results, ref);
    json pj = json::array();
    for (const auto& p : rep.policies)
        pj.push_back({{"name", p.name},
                      {"cost_eur", stats_json(p.cost)},
                      {"bill_eur", stats_json(p.bill)},
                      {"savings_eur", stats_json(p.savings_eur)},
                      {"mean_pm10", stats_json(p.pm10)},
                      {"energy_kwh", stats_json(p.energy_kwh)},
                      {"energy_savings_kwh", stats_json(p.energy_savings_kwh)},
                      {"net_energy_savings_kwh", stats_json(p.net_energy_savings_kwh)}});
    write_json_file(json{{"scenario_hash", hash_hex(rep.scenario_hash)},
                         {"count", rep.count},
                         {"reference",
                          {{"name", rep.reference_name},
                           {"cost_eur", stats_json(rep.reference_cost)},
                           {"bill_eur", stats_json(rep.reference_bill)},
                           {"mean_pm10", stats_json(rep.reference_pm10)},
                           {"energy_kwh", stats_json(rep.reference_energy_kwh)}}},
                         {"policies", pj}},
                    c.art("assess_summary.json"));
    json names_json = json::array();
    for (const auto& n : names) names_json.push_back(n);
    write_manifest(c, "assess", {{"policies", names_json},
                                 {"scenario_hash", hash_hex(ref.scenario_hash)},
                                 {"online_timing_ms", timing}});
    for (const auto& p : rep.policies)
        std::printf("%-9s bill %8.2f eur  savings %8.2f +- %.2f  PM10 %7.2f  "
                    "energy savings %9.1f kWh\n",
                    p.name.c_str(), p.bill.mean, p.savings_eur.mean, p.savings_eur.stddev,
                    p.pm10.mean, p.energy_savings_kwh.mean);
    std::printf("wrote %s\n", c.art("assess_summary.json").c_str());
    return 0;
}

me::McResult read_assess_csv(const Ctx& c, const std::string& name, std::uint64_t hash,
                             int count) {
    const std::string path = c.art("assess_" + name + ".csv");
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("missing " + path + "; run `metroems assess --policies " +
                                 name + "` first");
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty file " + path);
    const std::vector<std::string> header = split_csv(line);
    int cost_col = -1, bill_col = -1;
    for (size_t i = 0; i < header.size(); ++i) {
        if (header[i] == "cost_eur") cost_col = static_cast<int>(i);
        if (header[i] == "bill_eur") bill_col = static_cast<int>(i);
    }
    if (cost_col < 0 || bill_col < 0)
        throw std::runtime_error("unexpected header in " + path);
    me::McResult r;
    r.policy_name = name;
    r.scenario_hash = hash;
    r.count = count;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const std::vector<std::string> tok = split_csv(line);
        r.cost.push_back(std::stod(tok.at(cost_col)));
        r.bill.push_back(std::stod(tok.at(bill_col)));
    }
    if (static_cast<int>(r.cost.size()) != count)
        throw std::runtime_error("row count mismatch in " + path);
    return r;
}

int cmd_compare(const Ctx& c, const std::string& name_a, const std::string& name_b) {
    const json m = require_stage(c, "assess");
    const int count = m.at("assessment_count").get<int>();
    const std::uint64_t hash =
        std::stoull(m.at("scenario_hash").get<std::string>(), nullptr, 16);
    const me::McResult a = read_assess_csv(c, name_a, hash, count);
    const me::McResult b = read_assess_csv(c, name_b, hash, count);
    const me::GapReport g = me::compare(a, b);
    const std::string stem = "gap_" + name_a + "_vs_" + name_b;
    me::write_histogram_csv(g.hist, c.art(stem + ".csv"));
    write_json_file(json{{"a", g.name_a},
                         {"b", g.name_b},
                         {"count", count},
                         {"wins_a", g.wins_a},
                         {"wins_b", g.wins_b},
                         {"ties", g.ties},
                         {"mean_gap", me::stats(g.gap).mean}},
                    c.art(stem + ".json"));
    std::printf("%s vs %s: %d / %d / %d (wins/ties/losses), mean gap %.4f%%\n", name_a.c_str(),
                name_b.c_str(), g.wins_a, g.ties, g.wins_b, 100.0 * me::stats(g.gap).mean);
    std::printf("wrote %s.csv / .json\n", c.art(stem).c_str());
    return 0;
}

int cmd_export_milp(const Ctx& c, int t0, int steps, double soc, double pm10, double b0,
                    const std::string& forecast_mode, double big_m) {
    const auto m = me::build_model(c.cfg);
    const auto profiles = me::build_profiles(c.cfg);
    const int T = c.cfg.time.horizon_steps;
    if (t0 < 0 || t0 >= T) throw std::runtime_error("--t0 out of range");
    const int h = steps > 0 ? steps : std::min(c.cfg.mpc.lookahead, T - t0);
    me::State x0 = me::default_x0(c.cfg);
    if (!std::isnan(soc)) x0.soc_kwh = soc;
    if (!std::isnan(pm10)) x0.pm10_ugm3 = pm10;

    std::vector<double> forecast(h, 0.0);
    if (forecast_mode == "model") {
        require_stage(c, "fit-noise");
        const me::NoiseModel noise = me::load_noise_model(c.art("noise_model"));
        forecast = me::forecast_braking(noise, t0 + 1, b0, h, c.cfg.mpc.bias_correction);
    } else if (forecast_mode != "zero") {
        throw std::runtime_error("--forecast must be zero or model");
    }
    const double cap = big_m > 0 ? big_m : c.cfg.grid.pm10_grid_max;
    const me::MilpArtifact art = me::build_milp(m, profiles, t0, x0, forecast, h, cap);
    me::export_mps(art, c.art("milp_window.mps"));
    const me::MpsSummary s = me::parse_mps(c.art("milp_window.mps"));
    write_json_file(json{{"name", s.name},
                         {"objsense", s.objsense},
                         {"t0", t0},
                         {"horizon", h},
                         {"big_m", cap},
                         {"forecast", forecast_mode},
                         {"n_rows", s.n_rows},
                         {"n_cols", s.n_cols},
                         {"n_integer", s.n_integer},
                         {"n_rhs_entries", s.n_rhs_entries},
                         {"n_bound_entries", s.n_bound_entries}},
                    c.art("milp_window.json"));
    write_manifest(c, "export-milp", {{"t0", t0}, {"horizon", h}});
    std::printf("window [%d, %d): %d columns (%d binary), %d rows\n", t0, t0 + h, s.n_cols,
                s.n_integer, s.n_rows);
    std::printf("wrote %s\n", c.art("milp_window.mps").c_str());
    return 0;
}

int cmd_validate_discretization(const Ctx& c) {
    // The step-size check is a property of the model's time step against the
    // physical time constants, so it integrates the 24 hourly profiles paced
    // in real time (one profile hour per wall hour) regardless of how the
    // experiment horizon compresses the day.
    const auto m = me::build_model(c.cfg);
    const int sph = std::max(1, static_cast<int>(std::llround(1.0 / m.grid.delta_hours)));
    const int T = 24 * sph;
    me::DeterministicProfiles day;
    day.demand_kw = me::DeterministicProfiles::expand_hourly(c.cfg.profiles.demand_kw_hourly, sph);
    day.trains_per_hour =
        me::DeterministicProfiles::expand_hourly(c.cfg.profiles.trains_per_hour_hourly, sph);
    day.outdoor_pm10 =
        me::DeterministicProfiles::expand_hourly(c.cfg.profiles.outdoor_pm10_hourly, sph);
    me::ContinuousInputs in;
    in.controls.assign(T, me::Control{0.0, me::VentMode::high});
    in.noises.reserve(T);
    for (int t = 0; t < T; ++t) in.noises.push_back(day.noise_at(t + 1, 0.0));
    const me::State x0 = me::default_x0(c.cfg);

    me::Stopwatch sw;
    const me::Trajectory adaptive = me::integrate_adaptive(m, x0, in);
    const me::Trajectory euler1 = me::integrate_euler(m, x0, in, 1);
    const me::Trajectory euler2 = me::integrate_euler(m, x0, in, 2);
    const me::IntegrationReport r1 = me::compare_trajectories(euler1, adaptive);
    const me::IntegrationReport r2 = me::compare_trajectories(euler2, adaptive);
    const double ratio =
        r2.mean_rel_err_pm10 > 0 ? r1.mean_rel_err_pm10 / r2.mean_rel_err_pm10
                                 : std::numeric_limits<double>::infinity();
    const bool pass = r1.mean_rel_err() <= 0.01 && ratio >= 1.8;
    write_json_file(json{{"mean_rel_err_pm10", r1.mean_rel_err_pm10},
                         {"std_rel_err_pm10", r1.std_rel_err_pm10},
                         {"max_rel_err_pm10", r1.max_rel_err_pm10},
                         {"mean_rel_err_soc", r1.mean_rel_err_soc},
                         {"halving_ratio", ratio},
                         {"adaptive_rhs_evaluations", adaptive.stats.rhs_evaluations},
                         {"adaptive_accepted_steps", adaptive.stats.accepted_steps},
                         {"adaptive_rejected_steps", adaptive.stats.rejected_steps},
                         {"pass", pass}},
                    c.art("discretization.json"));
    write_manifest(c, "validate-discretization", {{"pass", pass}});
    std::printf("Euler vs adaptive: mean rel err %.4f%% (std %.4f%%, max %.4f%%), "
                "halving ratio %.2f [%s] in %.2f s\n",
                100 * r1.mean_rel_err_pm10, 100 * r1.std_rel_err_pm10,
                100 * r1.max_rel_err_pm10, ratio, pass ? "ok" : "FAIL", sw.seconds());
    return pass ? 0 : 1;
}

int cmd_report(const Ctx& c) {
    require_stage(c, "assess");
    const json s = read_json_file(c.art("assess_summary.json"), "run `metroems assess` first");
    std::ostringstream out;
    out << "Assessment over " << s.at("count").get<int>() << " scenarios (hash "
        << s.at("scenario_hash").get<std::string>() << ")\n\n";
    char line[256];
    std::snprintf(line, sizeof line, "%-10s %14s %18s %14s %20s %20s\n", "policy",
                  "bill (eur)", "savings (eur)", "PM10 (ug/m3)", "energy sav. (kWh)",
                  "net energy (kWh)");
    out << line;
    const json& ref = s.at("reference");
    std::snprintf(line, sizeof line, "%-10s %14.2f %18s %14.2f %20s %20s\n", "reference",
                  ref.at("bill_eur").at("mean").get<double>(), "-",
                  ref.at("mean_pm10").at("mean").get<double>(), "-", "-");
    out << line;
    for (const json& p : s.at("policies")) {
        std::snprintf(line, sizeof line,
                      "%-10s %14.2f %9.2f +- %5.2f %14.2f %12.1f +- %5.1f %13.1f +- %5.1f\n",
                      p.at("name").get<std::string>().c_str(),
                      p.at("bill_eur").at("mean").get<double>(),
                      p.at("savings_eur").at("mean").get<double>(),
                      p.at("savings_eur").at("stddev").get<double>(),
                      p.at("mean_pm10").at("mean").get<double>(),
                      p.at("energy_savings_kwh").at("mean").get<double>(),
                      p.at("energy_savings_kwh").at("stddev").get<double>(),
                      p.at("net_energy_savings_kwh").at("mean").get<double>(),
                      p.at("net_energy_savings_kwh").at("stddev").get<double>());
        out << line;
    }
    bool any_gap = false;
    for (const auto& entry : std::filesystem::directory_iterator(c.cfg.output_dir)) {
        const std::string fn = entry.path().filename().string();
        if (fn.rfind("gap_", 0) != 0 || entry.path().extension() != ".json") continue;
        const json g = read_json_file(entry.path().string(), "");
        if (!any_gap) {
            out << "\nPairwise bill comparisons (wins/ties/losses):\n";
            any_gap = true;
        }
        std::snprintf(line, sizeof line, "  %s vs %s: %d / %d / %d, mean gap %.4f%%\n",
                      g.at("a").get<std::string>().c_str(),
                      g.at("b").get<std::string>().c_str(), g.at("wins_a").get<int>(),
                      g.at("ties").get<int>(), g.at("wins_b").get<int>(),
                      100.0 * g.at("mean_gap").get<double>());
        out << line;
    }
    const std::string text = out.str();
    std::fputs(text.c_str(), stdout);
    std::ofstream f(c.art("report.txt"), std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + c.art("report.txt"));
    f << text;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Subway-station microgrid energy-management pipeline"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    std::string config_path = "configs/desk.json";
    std::string scale = "desk";
    std::string output_override;
    std::uint64_t seed = 0;
    int threads = 1;
    app.add_option("--config", config_path, "Experiment config JSON")
        ->capture_default_str();
    app.add_option("--scale", scale, "Scenario counts: desk or paper")
        ->capture_default_str();
    auto* seed_opt = app.add_option(
        "--seed", seed, "Override the seeds (optimization = seed, assessment = seed + 1000003)");
    app.add_option("--threads", threads, "Worker threads")->capture_default_str();
    app.add_option("--output", output_override, "Override the config's output directory");

    auto* sub_gen = app.add_subcommand("gen-scenarios",
                                       "Generate sealed optimization/assessment scenario sets");
    auto* sub_fit = app.add_subcommand("fit-noise", "Fit the braking log-AR(1) noise model");
    auto* sub_cal = app.add_subcommand(
        "calibrate", "Match the reference-case anchors and scan the comfort weight");
    auto* sub_sdpo = app.add_subcommand("offline-sdpo", "Backward induction, marginal noise");
    auto* sub_sdpa = app.add_subcommand("offline-sdpa", "Backward induction, augmented state");

    auto* sub_sim = app.add_subcommand("simulate", "Trace one policy on one scenario");
    std::string sim_policy = "sdpo", sim_set = "assessment";
    int sim_scenario = 0;
    sub_sim->add_option("--policy", sim_policy, "reference, sdpo, sdpa or mpc")
        ->capture_default_str();
    sub_sim->add_option("--set", sim_set, "optimization or assessment")->capture_default_str();
    sub_sim->add_option("--scenario", sim_scenario, "Scenario index")->capture_default_str();

    auto* sub_assess =
        app.add_subcommand("assess", "Monte Carlo assessment vs the reference case");
    std::string assess_policies = "sdpo,sdpa,mpc";
    int timing_scenarios = 3;
    sub_assess->add_option("--policies", assess_policies, "Comma-separated policy list")
        ->capture_default_str();
    sub_assess
        ->add_option("--timing-scenarios", timing_scenarios,
                     "Scenarios used for the online-latency measurement")
        ->capture_default_str();

    auto* sub_cmp = app.add_subcommand("compare", "Pairwise gap distribution and win counts");
    std::string cmp_a = "sdpa", cmp_b = "mpc";
    sub_cmp->add_option("--a", cmp_a, "First policy")->capture_default_str();
    sub_cmp->add_option("--b", cmp_b, "Second policy")->capture_default_str();

    auto* sub_milp = app.add_subcommand("export-milp",
                                        "Write one MPC window as a fixed-format MPS model");
    int milp_t0 = 0, milp_steps = 0;
    double milp_soc = std::numeric_limits<double>::quiet_NaN();
    double milp_pm10 = std::numeric_limits<double>::quiet_NaN();
    double milp_b0 = 0.0, milp_big_m = 0.0;
    std::string milp_forecast = "zero";
    sub_milp->add_option("--t0", milp_t0, "Window start step")->capture_default_str();
    sub_milp->add_option("--steps", milp_steps, "Window length (0 = MPC lookahead)")
        ->capture_default_str();
    sub_milp->add_option("--soc", milp_soc, "Start SOC (default: config x0)");
    sub_milp->add_option("--pm10", milp_pm10, "Start PM10 (default: config x0)");
    sub_milp->add_option("--b0", milp_b0, "Observed braking at t0 (model forecast only)")
        ->capture_default_str();
    sub_milp->add_option("--forecast", milp_forecast, "zero or model")->capture_default_str();
    sub_milp->add_option("--big-m", milp_big_m, "PM10 cap (0 = config grid max)")
        ->capture_default_str();

    auto* sub_disc = app.add_subcommand("validate-discretization",
                                        "Euler vs adaptive integration error report");
    auto* sub_rep = app.add_subcommand("report", "Print the Table-style assessment summary");

    for (auto* sub : app.get_subcommands({})) sub->fallthrough();
    CLI11_PARSE(app, argc, argv);

    try {
        Ctx c;
        c.cfg = me::load_config(config_path);
        c.cfg.apply_scale(scale);
        if (seed_opt->count() > 0) {
            c.cfg.optimization_seed = seed;
            c.cfg.assessment_seed = seed + 1000003;
        }
        if (!output_override.empty()) c.cfg.output_dir = output_override;
        c.cfg.validate();
        if (threads < 1) throw std::runtime_error("--threads must be >= 1");
        if (threads > 1) c.pool = std::make_unique<me::ThreadPool>(threads);
        std::filesystem::create_directories(c.cfg.output_dir);

        if (sub_gen->parsed()) return cmd_gen_scenarios(c);
        if (sub_fit->parsed()) return cmd_fit_noise(c);
        if (sub_cal->parsed()) return cmd_calibrate(c);
        if (sub_sdpo->parsed()) return cmd_offline_sdpo(c);
        if (sub_sdpa->parsed()) return cmd_offline_sdpa(c);
        if (sub_sim->parsed()) return cmd_simulate(c, sim_policy, sim_set, sim_scenario);
        if (sub_assess->parsed()) return cmd_assess(c, assess_policies, timing_scenarios);
        if (sub_cmp->parsed()) return cmd_compare(c, cmp_a, cmp_b);
        if (sub_milp->parsed())
            return cmd_export_milp(c, milp_t0, milp_steps, milp_soc, milp_pm10, milp_b0,
                                   milp_forecast, milp_big_m);
        if (sub_disc->parsed()) return cmd_validate_discretization(c);
        if (sub_rep->parsed()) return cmd_report(c);
        throw std::runtime_error("no subcommand dispatched");
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
