#include <catch2/catch_amalgamated.hpp>

#include <memory>
#include <vector>

#include <metroems/assess.hpp>
#include <metroems/config.hpp>
#include <metroems/mpc.hpp>
#include <metroems/scenarios.hpp>
#include <metroems/sdp.hpp>

#include "oracles.hpp"

using namespace metroems;

namespace {

struct MpcRig {
    ExperimentConfig cfg = oracle::tiny_config();
    StationModel m;
    DeterministicProfiles profiles;
    StateGrid grid;
    ControlMesh mesh;
    State x0;

    MpcRig()
        : m(build_model(cfg)),
          profiles(build_profiles(cfg)),
          grid(build_state_grid(cfg)),
          mesh(build_control_mesh(cfg)),
          x0(default_x0(cfg)) {}

    int T() const { return m.grid.horizon_steps; }

    ForecastFn zeros() const {
        return [](int, double, int n) { return std::vector<double>(n, 0.0); };
    }
};

}  // namespace

TEST_CASE("mpc configuration validation") {
    MpcConfig cfg;
    cfg.reopt_every = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.reopt_every = 8;
    cfg.lookahead = 4;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.lookahead = 8;
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("external MILP solver is declared unavailable") {
    const MpcRig rig;
    MpcConfig cfg;
    cfg.solver = MpcSolver::external_milp;
    CHECK_THROWS_WITH(
        mpc_controller(rig.m, rig.profiles, rig.grid, rig.mesh, cfg, rig.zeros()),
        Catch::Matchers::ContainsSubstring("external-milp solver is not available"));
    CHECK(to_string(MpcSolver::external_milp) == "external-milp");
    CHECK(to_string(MpcSolver::deterministic_dp) == "deterministic-dp");

    CHECK_THROWS_AS(mpc_controller(rig.m, rig.profiles, rig.grid, rig.mesh, MpcConfig{},
                                   ForecastFn{}),
                    std::invalid_argument);
}

TEST_CASE("deterministic window solver validates its window") {
    const MpcRig rig;
    const std::vector<double> bhat(4, 0.0);
    CHECK_THROWS_AS(
        solve_deterministic(rig.m, rig.profiles, rig.grid, rig.mesh, -1, rig.x0, bhat, 4),
        std::invalid_argument);
    CHECK_THROWS_AS(
        solve_deterministic(rig.m, rig.profiles, rig.grid, rig.mesh, rig.T(), rig.x0, bhat, 4),
        std::invalid_argument);
    CHECK_THROWS_AS(
        solve_deterministic(rig.m, rig.profiles, rig.grid, rig.mesh, rig.T() - 2, rig.x0, bhat, 4),
        std::invalid_argument);
    CHECK_THROWS_AS(
        solve_deterministic(rig.m, rig.profiles, rig.grid, rig.mesh, 0, rig.x0, bhat, 5),
        std::invalid_argument);
}

TEST_CASE("deterministic plan replays its own dynamics and cost") {
    const MpcRig rig;
    const int t0 = 6, h = 12;
    std::vector<double> bhat(h);
    for (int r = 0; r < h; ++r) bhat[r] = 30.0 + 5.0 * r;

    const DeterministicPlan plan =
        solve_deterministic(rig.m, rig.profiles, rig.grid, rig.mesh, t0, rig.x0, bhat, h);
    REQUIRE(static_cast<int>(plan.controls.size()) == h);
    REQUIRE(static_cast<int>(plan.states.size()) == h + 1);
    CHECK_FALSE(plan.clamped_start);
    CHECK(plan.states[0].soc_kwh == rig.x0.soc_kwh);
    CHECK(plan.states[0].pm10_ugm3 == rig.x0.pm10_ugm3);

    double cost = 0.0;
    State x = plan.states[0];
    for (int r = 0; r < h; ++r) {
        const int s = t0 + r;
        const NoiseVector w = rig.profiles.noise_at(s + 1, bhat[r]);
        CHECK(admissible(rig.m, x, plan.controls[r]));
        const State x1 = dynamics(rig.m, s, x, plan.controls[r], w);
        CHECK(plan.states[r + 1].soc_kwh == x1.soc_kwh);
        CHECK(plan.states[r + 1].pm10_ugm3 == x1.pm10_ugm3);
        cost += stage_cost(rig.m, s, x, plan.controls[r], w, x1);
        x = x1;
    }
    CHECK(plan.cost == Catch::Approx(cost).epsilon(1e-13));
}

TEST_CASE("out-of-grid start states are clamped and flagged") {
    const MpcRig rig;
    const std::vector<double> bhat(3, 0.0);
    const DeterministicPlan plan = solve_deterministic(
        rig.m, rig.profiles, rig.grid, rig.mesh, 0, State{10.0, 1e4}, bhat, 3);
    CHECK(plan.clamped_start);
    CHECK(plan.states[0].soc_kwh == rig.grid.soc.nodes.front());
    CHECK(plan.states[0].pm10_ugm3 == rig.grid.pm10.nodes.back());
}

TEST_CASE("rolling mpc with full lookahead reproduces the one-shot plan") {
    const MpcRig rig;
    MpcConfig cfg;
    cfg.reopt_every = 1;
    cfg.lookahead = rig.T();

    auto mpc = mpc_controller(rig.m, rig.profiles, rig.grid, rig.mesh, cfg, rig.zeros());
    CHECK(mpc->name() == "mpc");

    const std::vector<double> no_braking(static_cast<size_t>(rig.T()) + 1, 0.0);
    SimulateOptions opts;
    opts.recover_braking = false;
    const SimulationTrace closed = simulate(rig.m, rig.profiles, no_braking, *mpc, rig.x0, opts);

    const DeterministicPlan open = solve_deterministic(
        rig.m, rig.profiles, rig.grid, rig.mesh, 0, rig.x0,
        std::vector<double>(static_cast<size_t>(rig.T()), 0.0), rig.T());

    REQUIRE(closed.controls.size() == open.controls.size());
    for (size_t t = 0; t < open.controls.size(); ++t) {
        CHECK(closed.controls[t].battery_kw == open.controls[t].battery_kw);
        CHECK(closed.controls[t].vent == open.controls[t].vent);
    }
    CHECK(closed.total_cost == Catch::Approx(open.cost).epsilon(1e-12));
}

TEST_CASE("perfect-forecast mpc attains the deterministic optimum on a noisy day") {
    const MpcRig rig;
    const ScenarioSet one = generate_braking(build_generator(rig.cfg), rig.profiles.trains_per_hour,
                                             rig.cfg.time.delta_hours, 1,
                                             rig.cfg.assessment_seed, ScenarioRole::assessment);
    const std::vector<double>& path = one.braking_kw[0];

    ForecastFn perfect = [&path](int first_step, double, int n) {
        return std::vector<double>(path.begin() + first_step, path.begin() + first_step + n);
    };
    MpcConfig cfg;
    cfg.reopt_every = 1;
    cfg.lookahead = rig.T();
    auto mpc = mpc_controller(rig.m, rig.profiles, rig.grid, rig.mesh, cfg, perfect);

    const SimulationTrace closed = simulate(rig.m, rig.profiles, path, *mpc, rig.x0);

    const DeterministicPlan open = solve_deterministic(
        rig.m, rig.profiles, rig.grid, rig.mesh, 0, rig.x0,
        std::vector<double>(path.begin() + 1, path.end()), rig.T());
    REQUIRE(closed.controls.size() == open.controls.size());
    for (size_t t = 0; t < open.controls.size(); ++t) {
        CHECK(closed.controls[t].battery_kw == open.controls[t].battery_kw);
        CHECK(closed.controls[t].vent == open.controls[t].vent);
    }
    CHECK(closed.total_cost == Catch::Approx(open.cost).epsilon(1e-12));
}

TEST_CASE("zero-noise mpc agrees with the degenerate stochastic induction") {
    const MpcRig rig;

    // deterministic DP expressed as SDPO with a single zero atom per step
    std::vector<DiscreteDist> zero_atoms(static_cast<size_t>(rig.T()) + 1);
    for (int t = 1; t <= rig.T(); ++t) zero_atoms[t] = DiscreteDist{{0.0}, {1.0}};
    auto table = std::make_shared<ValueTable>(backward_induction_sdpo(
        rig.m, rig.profiles, rig.grid, rig.mesh, zero_atoms));
    auto dp = sdpo_policy(rig.m, rig.profiles, rig.mesh, table,
                          ConditionalSource::from_marginals(zero_atoms));

    MpcConfig cfg;
    cfg.reopt_every = 1;
    cfg.lookahead = rig.T();
    auto mpc = mpc_controller(rig.m, rig.profiles, rig.grid, rig.mesh, cfg, rig.zeros());

    const std::vector<double> no_braking(static_cast<size_t>(rig.T()) + 1, 0.0);
    SimulateOptions opts;
    opts.recover_braking = false;
    const SimulationTrace a = simulate(rig.m, rig.profiles, no_braking, *mpc, rig.x0, opts);
    const SimulationTrace b = simulate(rig.m, rig.profiles, no_braking, *dp, rig.x0, opts);

    REQUIRE(a.controls.size() == b.controls.size());
    for (size_t t = 0; t < a.controls.size(); ++t) {
        CHECK(a.controls[t].battery_kw == b.controls[t].battery_kw);
        CHECK(a.controls[t].vent == b.controls[t].vent);
    }
    CHECK(std::abs(a.total_cost - b.total_cost) < 1e-9);
}

TEST_CASE("reoptimization cadence and cache reuse") {
    const MpcRig rig;
    MpcConfig cfg;
    cfg.reopt_every = 5;
    cfg.lookahead = 10;
    MpcController mpc(rig.m, rig.profiles, rig.grid, rig.mesh, cfg, rig.zeros());

    State x = rig.x0;
    for (int t = 0; t < rig.T(); ++t) {
        const NoiseVector w = rig.profiles.noise_at(t, 0.0);
        const Control u = mpc.decide(t, x, w);
        x = dynamics(rig.m, t, x, u, rig.profiles.noise_at(t + 1, 0.0));
    }
    CHECK(mpc.reoptimizations() == 10);  // t = 0, 5, ..., 45
    CHECK(mpc.clamp_warnings() == 0);

    // reset drops the cache, so the next decide re-solves
    mpc.reset();
    mpc.decide(0, rig.x0, rig.profiles.noise_at(0, 0.0));
    CHECK(mpc.reoptimizations() == 11);

    CHECK_THROWS_AS(mpc.decide(rig.T(), rig.x0, NoiseVector{}), std::invalid_argument);
    CHECK_THROWS_AS(mpc.decide(-1, rig.x0, NoiseVector{}), std::invalid_argument);
}

TEST_CASE("model-based forecaster matches forecast_braking inside mpc") {
    const MpcRig rig;
    const ScenarioSet opt = generate_braking(build_generator(rig.cfg), rig.profiles.trains_per_hour,
                                             rig.cfg.time.delta_hours, rig.cfg.optimization_count,
                                             rig.cfg.optimization_seed, ScenarioRole::optimization);
    const NoiseModel noise = fit_log_ar1(opt, rig.cfg.eps_log);

    MpcConfig cfg = rig.cfg.mpc;  // reopt 4, lookahead 12
    auto from_model = mpc_controller(rig.m, rig.profiles, rig.grid, rig.mesh, cfg, noise);
    ForecastFn fn = [&noise](int first, double b, int n) {
        return forecast_braking(noise, first, b, n, true);
    };
    auto from_fn = mpc_controller(rig.m, rig.profiles, rig.grid, rig.mesh, cfg, fn);

    const ScenarioSet day = generate_braking(build_generator(rig.cfg), rig.profiles.trains_per_hour,
                                             rig.cfg.time.delta_hours, 1, rig.cfg.assessment_seed,
                                             ScenarioRole::assessment);
    const SimulationTrace a = simulate(rig.m, rig.profiles, day.braking_kw[0], *from_model, rig.x0);
    const SimulationTrace b = simulate(rig.m, rig.profiles, day.braking_kw[0], *from_fn, rig.x0);
    CHECK(a.total_cost == b.total_cost);
    for (size_t t = 0; t < a.controls.size(); ++t)
        CHECK(a.controls[t].battery_kw == b.controls[t].battery_kw);
}
