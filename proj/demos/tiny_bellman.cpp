// Smallest end-to-end dynamic program: shrink the day to 24 two-minute
// steps and a coarse grid, run the offline induction, then check the
// predicted value V0(x0) against a Monte Carlo rollout of the induced
// policy. Shows the offline/online split on a problem that runs in well
// under a second.

#include <cstdio>
#include <memory>

#include <metroems/assess.hpp>
#include <metroems/config.hpp>
#include <metroems/scenarios.hpp>
#include <metroems/sdp.hpp>

namespace me = metroems;

int main() {
    me::ExperimentConfig cfg = me::ExperimentConfig::desk();
    cfg.time.horizon_steps = 24;  // one step per profile hour
    cfg.time.day_length_hours = cfg.time.horizon_steps * cfg.time.delta_hours;
    cfg.optimization_count = 200;
    cfg.assessment_count = 200;
    cfg.grid.n_soc = 7;
    cfg.grid.n_pm10 = 7;
    cfg.grid.n_noise = 7;
    cfg.grid.n_battery_levels = 5;
    cfg.grid.k_marginal = 3;
    cfg.grid.k_residual = 3;
    cfg.grid.k_online = 6;
    cfg.validate();

    const me::StationModel m = me::build_model(cfg);
    const me::DeterministicProfiles profiles = me::build_profiles(cfg);
    const me::StateGrid grid = me::build_state_grid(cfg);
    const me::ControlMesh mesh = me::build_control_mesh(cfg);
    const auto gen = me::build_generator(cfg);

    const me::ScenarioSet fitting =
        me::generate_braking(gen, profiles.trains_per_hour, cfg.time.delta_hours,
                             cfg.optimization_count, cfg.optimization_seed,
                             me::ScenarioRole::optimization);
    const me::ScenarioSet fresh =
        me::generate_braking(gen, profiles.trains_per_hour, cfg.time.delta_hours,
                             cfg.assessment_count, cfg.assessment_seed,
                             me::ScenarioRole::assessment);

    const auto marginals = me::quantize_marginals(fitting, cfg.grid.k_marginal,
                                                  cfg.optimization_seed);
    me::Stopwatch sw;
    const me::ValueTable table =
        me::backward_induction_sdpo(m, profiles, grid, mesh, marginals);
    std::printf("offline induction over %d steps x %dx%d states: %.3f s\n",
                cfg.time.horizon_steps, cfg.grid.n_soc, cfg.grid.n_pm10, sw.seconds());

    const me::State x0 = me::default_x0(cfg);
    const double v0 = table.interpolate(0, x0);
    std::printf("predicted value V0(x0) = %.4f eur\n", v0);

    auto shared = std::make_shared<const me::ValueTable>(table);
    auto policy = me::sdpo_policy(m, profiles, mesh, shared,
                                  me::ConditionalSource::from_marginals(marginals));
    const me::McResult mc = me::monte_carlo(m, profiles, fresh, *policy, x0);
    const me::Stats s = me::stats(mc.cost);
    std::printf("realized mean cost over %d fresh scenarios = %.4f +- %.4f eur\n", mc.count,
                s.mean, 2 * s.sem);
    std::printf("gap = %.2f%% of V0\n", 100.0 * (s.mean - v0) / v0);
    return 0;
}
