// Simulates one day of station operation twice: under the reference
// management (ventilation always high, no battery, no recovery) and under a
// hand-written heuristic that rides the timetable. Shows how to plug a
// custom Policy into the simulator.

#include <cstdio>
#include <memory>

#include <metroems/assess.hpp>
#include <metroems/config.hpp>
#include <metroems/model.hpp>
#include <metroems/scenarios.hpp>

namespace me = metroems;

namespace {

// Ventilate hard only while trains are frequent; charge the battery before
// the morning rush and spend it across the two demand peaks.
class TimetablePolicy final : public me::Policy {
public:
    explicit TimetablePolicy(const me::StationModel& m) : m_(m) {}

    me::Control decide(int t, const me::State& x, const me::NoiseVector& w) override {
        const double hour = t * m_.grid.delta_hours;
        me::Control u;
        u.vent = w.trains_per_hour >= 14.0 ? me::VentMode::high : me::VentMode::low;
        const bool peak = (hour >= 7 && hour < 10) || (hour >= 17 && hour < 20);
        double target = peak ? -40.0 : (hour < 6 ? 30.0 : 0.0);
        // stay inside the SOC corridor
        for (;;) {
            const double soc_next = me::step_soc(m_.battery, m_.grid, x.soc_kwh, target);
            if (soc_next >= m_.battery.soc_min_kwh && soc_next <= m_.battery.soc_max_kwh) break;
            target *= 0.5;
            if (std::abs(target) < 1e-6) {
                target = 0.0;
                break;
            }
        }
        u.battery_kw = target;
        return u;
    }
    std::unique_ptr<me::Policy> clone() const override {
        return std::make_unique<TimetablePolicy>(*this);
    }
    std::string name() const override { return "timetable"; }

private:
    me::StationModel m_;
};

void print_totals(const char* label, const me::SimulationTrace& tr) {
    std::printf("%-10s cost %7.2f eur (bill %7.2f)  energy %8.1f kWh  wasted %7.1f kWh  "
                "PM10 mean %6.1f max %6.1f\n",
                label, tr.total_cost, tr.bill_eur, tr.energy_import_kwh, tr.wasted_kwh,
                tr.mean_pm10, tr.max_pm10);
}

}  // namespace

int main() {
    const me::ExperimentConfig cfg = me::ExperimentConfig::desk();
    const me::StationModel m = me::build_model(cfg);
    const me::DeterministicProfiles profiles = me::build_profiles(cfg);

    // one braking day
    const me::ScenarioSet day =
        me::generate_braking(me::build_generator(cfg), profiles.trains_per_hour,
                             cfg.time.delta_hours, 1, cfg.assessment_seed,
                             me::ScenarioRole::assessment);
    const me::State x0 = me::default_x0(cfg);

    me::SimulateOptions ref_opts;
    ref_opts.recover_braking = false;
    auto reference = me::reference_policy(m);
    const me::SimulationTrace ref = me::simulate(m, profiles, day.braking_kw[0], *reference, x0,
                                                 ref_opts);

    TimetablePolicy heuristic(m);
    const me::SimulationTrace heur = me::simulate(m, profiles, day.braking_kw[0], heuristic, x0);

    std::printf("hour  trains  demand_kw  braking_kw  ref_pm10  heur_pm10  heur_batt_kw\n");
    const int sph = cfg.steps_per_hour();
    for (int h = 0; h < 24; ++h) {
        const int t = h * sph;
        std::printf("%4d  %6.0f  %9.1f  %10.1f  %8.1f  %9.1f  %12.1f\n", h,
                    profiles.trains_per_hour[t + 1], profiles.demand_kw[t + 1],
                    day.braking_kw[0][t + 1], ref.states[t].pm10_ugm3,
                    heur.states[t].pm10_ugm3, heur.controls[t].battery_kw);
    }
    std::printf("\n");
    print_totals("reference", ref);
    print_totals("timetable", heur);
    std::printf("\nheuristic saves %.2f eur on this day; an optimized policy should do better.\n",
                ref.bill_eur - heur.bill_eur);
    return 0;
}
