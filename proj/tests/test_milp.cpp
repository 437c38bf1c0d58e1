#include <catch2/catch_amalgamated.hpp>

#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <metroems/config.hpp>
#include <metroems/milp.hpp>
#include <metroems/mpc.hpp>

#include "oracles.hpp"

using namespace metroems;

namespace {

struct MilpRig {
    ExperimentConfig cfg = oracle::tiny_config();
    StationModel m;
    DeterministicProfiles profiles;
    StateGrid grid;
    ControlMesh mesh;
    double big_m = 2000.0;

    MilpRig()
        : m(build_model(cfg)),
          profiles(build_profiles(cfg)),
          grid(build_state_grid(cfg)),
          mesh(build_control_mesh(cfg)) {}

    int T() const { return m.grid.horizon_steps; }
};

}  // namespace

TEST_CASE("window milp validation") {
    const MilpRig rig;
    const State x0 = default_x0(rig.cfg);
    const std::vector<double> bhat(4, 0.0);
    CHECK_THROWS_AS(build_milp(rig.m, rig.profiles, -1, x0, bhat, 4, rig.big_m),
                    std::invalid_argument);
    CHECK_THROWS_AS(build_milp(rig.m, rig.profiles, rig.T(), x0, bhat, 4, rig.big_m),
                    std::invalid_argument);
    CHECK_THROWS_AS(build_milp(rig.m, rig.profiles, rig.T() - 2, x0, bhat, 4, rig.big_m),
                    std::invalid_argument);
    CHECK_THROWS_AS(build_milp(rig.m, rig.profiles, 0, x0, bhat, 3, rig.big_m),
                    std::invalid_argument);
    CHECK_THROWS_AS(build_milp(rig.m, rig.profiles, 0, x0, bhat, 4, 0.0),
                    std::invalid_argument);
    CHECK_THROWS_AS(
        build_milp(rig.m, rig.profiles, 0, State{x0.soc_kwh, rig.big_m + 1.0}, bhat, 4, rig.big_m),
        std::invalid_argument);
}

TEST_CASE("column and row layout of the window milp") {
    const MilpRig rig;
    const State x0 = default_x0(rig.cfg);
    const int t0 = 5, h = 3;
    const std::vector<double> bhat(h, 20.0);
    const MilpArtifact art = build_milp(rig.m, rig.profiles, t0, x0, bhat, h, rig.big_m);

    CHECK(art.name == "MEMSWIN");
    CHECK(art.t0 == t0);
    CHECK(art.horizon == h);
    REQUIRE(art.cols.size() == 7u * h);
    REQUIRE(art.rows.size() == 6u * h);

    CHECK(art.column("UV0000") == 0);
    CHECK(art.column("UV0001") == 7);
    CHECK(art.column("R0002") == 20);
    CHECK_THROWS_AS(art.column("ZZ0000"), std::invalid_argument);

    for (int r = 0; r < h; ++r) {
        const MilpColumn& uv = art.cols[7 * r + 0];
        CHECK(uv.integer);
        CHECK(uv.lb == 0.0);
        CHECK(uv.ub == 1.0);
        const MilpColumn& bp = art.cols[7 * r + 1];
        CHECK(bp.lb == 0.0);
        CHECK(bp.ub == rig.m.battery.power_max_kw);
        const MilpColumn& bm = art.cols[7 * r + 2];
        CHECK(bm.lb == rig.m.battery.power_min_kw);
        CHECK(bm.ub == 0.0);
        const MilpColumn& s = art.cols[7 * r + 3];
        CHECK(s.lb == rig.m.battery.soc_min_kwh);
        CHECK(s.ub == rig.m.battery.soc_max_kwh);
        const MilpColumn& c = art.cols[7 * r + 4];
        CHECK(c.ub == rig.big_m);
        CHECK(c.obj == rig.m.econ.lambda_comfort);
        const MilpColumn& imp = art.cols[7 * r + 6];
        CHECK(imp.obj == rig.m.econ.tariff_eur_per_kw[t0 + r]);
        CHECK(imp.ub == std::numeric_limits<double>::infinity());

        const char senses[6] = {'E', 'E', 'L', 'L', 'G', 'G'};
        const char* stems[6] = {"SOC", "PM", "AUB", "ACB", "ALB", "IMP"};
        for (int k = 0; k < 6; ++k) {
            const MilpRow& row = art.rows[6 * r + k];
            CHECK(row.sense == senses[k]);
            CHECK(row.name == stems[k] + std::string(r == 0 ? "0000" : r == 1 ? "0001" : "0002"));
        }
    }
}

TEST_CASE("window dp solutions are feasible points of the milp") {
    const MilpRig rig;
    std::mt19937 gen(20240817);
    std::uniform_real_distribution<double> usoc(rig.m.battery.soc_min_kwh,
                                                rig.m.battery.soc_max_kwh);
    std::uniform_real_distribution<double> upm(0.0, 0.8 * rig.grid.pm10.nodes.back());
    std::uniform_real_distribution<double> ubrake(0.0, 200.0);

    for (int inst = 0; inst < 24; ++inst) {
        std::uniform_int_distribution<int> ut0(0, rig.T() - 2);
        const int t0 = ut0(gen);
        std::uniform_int_distribution<int> uh(1, std::min(8, rig.T() - t0));
        const int h = uh(gen);
        const State x0{usoc(gen), upm(gen)};
        std::vector<double> bhat(h);
        for (double& b : bhat) b = ubrake(gen);

        const DeterministicPlan plan =
            solve_deterministic(rig.m, rig.profiles, rig.grid, rig.mesh, t0, x0, bhat, h);
        const MilpArtifact art = build_milp(rig.m, rig.profiles, t0, x0, bhat, h, rig.big_m);
        const std::vector<double> x =
            milp_assignment(art, rig.m, rig.profiles, x0, bhat, plan.controls);

        const MilpEval ev = art.evaluate(x);
        INFO("instance " << inst << " t0=" << t0 << " h=" << h);
        CHECK(ev.max_violation <= 1e-6);
        CHECK(ev.objective == Catch::Approx(plan.cost).epsilon(1e-9));

        for (int r = 0; r < h; ++r) {
            const size_t b = static_cast<size_t>(r) * 7;
            CHECK(x[b + 1] * x[b + 2] == 0.0);  // u+ and u- never both active
            const double c_start = r == 0 ? x0.pm10_ugm3 : x[b - 7 + 4];
            CHECK(x[b + 5] == x[b + 0] * c_start);  // a is the literal product
        }
    }
}

TEST_CASE("milp evaluation detects tampered assignments") {
    const MilpRig rig;
    const State x0 = default_x0(rig.cfg);
    const int t0 = 2, h = 4;
    const std::vector<double> bhat = {10.0, 40.0, 0.0, 150.0};
    const DeterministicPlan plan =
        solve_deterministic(rig.m, rig.profiles, rig.grid, rig.mesh, t0, x0, bhat, h);
    const MilpArtifact art = build_milp(rig.m, rig.profiles, t0, x0, bhat, h, rig.big_m);
    const std::vector<double> base =
        milp_assignment(art, rig.m, rig.profiles, x0, bhat, plan.controls);
    REQUIRE(art.evaluate(base).max_violation <= 1e-6);

    auto x = base;
    x[art.column("A0001")] += 0.5;  // breaks ACB (uv=1) or AUB (uv=0)
    CHECK(art.evaluate(x).max_violation >= 0.4);

    x = base;
    x[art.column("R0000")] -= 0.25;  // breaks IMP or the lower bound
    CHECK(art.evaluate(x).max_violation >= 0.2);

    x = base;
    x[art.column("UV0002")] = 0.5;  // fractional binary
    CHECK(art.evaluate(x).max_violation >= 0.4);

    x = base;
    x[art.column("BP0000")] += 1.0;  // an overlapping split loses round-trip energy
    x[art.column("BM0000")] -= 1.0;
    CHECK(art.evaluate(x).max_violation >= 1e-3);

    CHECK_THROWS_AS(art.evaluate(std::vector<double>(art.cols.size() - 1, 0.0)),
                    std::invalid_argument);
    CHECK_THROWS_AS(
        milp_assignment(art, rig.m, rig.profiles, x0, bhat, std::vector<Control>(h - 1)),
        std::invalid_argument);
}

TEST_CASE("mps export round-trips through the reader") {
    const MilpRig rig;
    const State x0 = default_x0(rig.cfg);
    const int h = 5;
    const std::vector<double> bhat = {0.0, 30.0, 80.0, 0.0, 12.0};
    const MilpArtifact art = build_milp(rig.m, rig.profiles, 7, x0, bhat, h, rig.big_m);

    std::stringstream out;
    export_mps(art, out);
    const std::string text = out.str();
    const MpsSummary sum = parse_mps(out);

    CHECK(sum.name == "MEMSWIN");
    CHECK(sum.objsense == "MIN");
    CHECK(sum.n_objective_rows == 1);
    CHECK(sum.n_rows == static_cast<int>(art.rows.size()));
    CHECK(sum.n_cols == static_cast<int>(art.cols.size()));
    CHECK(sum.n_integer == h);
    CHECK(sum.has_endata);

    int rhs_expected = 0;
    for (const MilpRow& r : art.rows)
        if (r.rhs != 0.0) ++rhs_expected;
    CHECK(sum.n_rhs_entries == rhs_expected);

    int bounds_expected = 0;
    for (const MilpColumn& c : art.cols) {
        if (c.integer && c.lb == 0.0 && c.ub == 1.0) {
            ++bounds_expected;
            continue;
        }
        if (c.lb != 0.0) ++bounds_expected;
        if (c.ub < std::numeric_limits<double>::infinity()) ++bounds_expected;
    }
    CHECK(sum.n_bound_entries == bounds_expected);

    // fixed-format field positions: name field at column 5, row field at 15
    CHECK(text.find("\n N  COST\n") != std::string::npos);
    const size_t col_line = text.find("    UV0000    ");
    REQUIRE(col_line != std::string::npos);
    const std::string bv_line = " BV BND" + std::string(7, ' ') + "UV0000";
    CHECK(text.find(bv_line) != std::string::npos);
}

TEST_CASE("mps writer rejects names that break the fixed format") {
    MilpArtifact art;
    art.cols.push_back({"TOOLONG99", 0.0, 1.0, 0.0, false});
    std::stringstream out;
    CHECK_THROWS_WITH(export_mps(art, out), Catch::Matchers::ContainsSubstring("name too long"));

    MilpArtifact art2;
    art2.cols.push_back({"X", 0.0, 1.0, 0.0, false});
    art2.rows.push_back({"WAYTOOLONG", 'E', 0.0, {{0, 1.0}}});
    CHECK_THROWS_WITH(export_mps(art2, out), Catch::Matchers::ContainsSubstring("name too long"));
}

TEST_CASE("mps reader rejects malformed input") {
    const MilpRig rig;
    const MilpArtifact art =
        build_milp(rig.m, rig.profiles, 0, default_x0(rig.cfg), {0.0, 0.0}, 2, rig.big_m);
    std::stringstream out;
    export_mps(art, out);
    std::string text = out.str();

    const std::string truncated = text.substr(0, text.find("ENDATA"));
    std::stringstream bad(truncated);
    CHECK_THROWS_WITH(parse_mps(bad), Catch::Matchers::ContainsSubstring("ENDATA"));

    std::stringstream rows_bad("NAME X\nROWS\n E\nENDATA\n");
    CHECK_THROWS_WITH(parse_mps(rows_bad), Catch::Matchers::ContainsSubstring("bad ROWS line"));
}
