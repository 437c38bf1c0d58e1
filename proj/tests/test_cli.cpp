#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include <json.hpp>
#include <metroems/config.hpp>

#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace metroems;
using nlohmann::json;

namespace {

std::string cli_path() {
#ifdef METROEMS_CLI_PATH
    return METROEMS_CLI_PATH;
#else
    const char* p = std::getenv("METROEMS_CLI_PATH");
    REQUIRE(p != nullptr);
    return p;
#endif
}

struct CliResult {
    int code = -1;
    std::string output;
};

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct CliRig {
    fs::path dir;
    fs::path cfg_path;
    ExperimentConfig cfg;
    int log_counter = 0;

    explicit CliRig(const std::string& name) {
        dir = fs::temp_directory_path() / ("metroems_cli_" + name);
        fs::remove_all(dir);
        fs::create_directories(dir);
        cfg = oracle::tiny_config();
        cfg.output_dir = (dir / "out").string();
        cfg_path = dir / "config.json";
        save_config(cfg, cfg_path.string());
    }
    ~CliRig() {
        std::error_code ec;
        fs::remove_all(dir, ec);
    }

    fs::path art(const std::string& n) const { return dir / "out" / n; }

    CliResult run(const std::string& args) {
        const fs::path log = dir / ("log_" + std::to_string(log_counter++) + ".txt");
        const std::string cmd = cli_path() + " --config \"" + cfg_path.string() + "\" " + args +
                                " > \"" + log.string() + "\" 2>&1";
        const int status = std::system(cmd.c_str());
        CliResult r;
        if (WIFEXITED(status)) r.code = WEXITSTATUS(status);
        r.output = read_file(log);
        return r;
    }
};

}  // namespace

TEST_CASE("assessment before generation fails loudly") {
    CliRig rig("missing");
    const CliResult r = rig.run("assess --policies sdpo");
    CHECK(r.code != 0);
    CHECK(r.output.find("missing artifacts for stage 'gen-scenarios'") != std::string::npos);
}

TEST_CASE("full pipeline on the bundled stages") {
    CliRig rig("pipeline");

    CliResult r = rig.run("gen-scenarios");
    REQUIRE(r.code == 0);
    REQUIRE(fs::exists(rig.art("scenarios_optimization.csv")));
    REQUIRE(fs::exists(rig.art("scenarios_assessment.csv")));
    const std::string opt_bytes = read_file(rig.art("scenarios_optimization.csv"));
    const std::string asmt_bytes = read_file(rig.art("scenarios_assessment.csv"));

    // regeneration under the same seeds is byte-identical
    r = rig.run("gen-scenarios");
    REQUIRE(r.code == 0);
    CHECK(read_file(rig.art("scenarios_optimization.csv")) == opt_bytes);
    CHECK(read_file(rig.art("scenarios_assessment.csv")) == asmt_bytes);

    r = rig.run("fit-noise");
    REQUIRE(r.code == 0);
    CHECK(fs::exists(rig.art("noise_model.json")));
    CHECK(fs::exists(rig.art("noise_model.bin")));
    CHECK(r.output.find("fitted log-AR(1)") != std::string::npos);

    r = rig.run("offline-sdpo");
    REQUIRE(r.code == 0);
    CHECK(fs::exists(rig.art("vtable_sdpo.bin")));
    CHECK(fs::exists(rig.art("marginals.json")));

    r = rig.run("offline-sdpa");
    REQUIRE(r.code == 0);
    CHECK(fs::exists(rig.art("vtable_sdpa.bin")));
    CHECK(fs::exists(rig.art("residual_atoms.json")));

    r = rig.run("simulate --policy sdpo --set assessment --scenario 0");
    REQUIRE(r.code == 0);
    const std::string trace = read_file(rig.art("trace_sdpo_assessment_0.csv"));
    CHECK(trace.rfind("t,soc_kwh,pm10_ugm3,battery_kw,vent,import_kw,stage_cost_eur\n", 0) == 0);

    r = rig.run("assess --policies sdpo,sdpa,mpc --timing-scenarios 1");
    REQUIRE(r.code == 0);
    CHECK(fs::exists(rig.art("assess_reference.csv")));
    CHECK(fs::exists(rig.art("assess_sdpo.csv")));
    CHECK(fs::exists(rig.art("assess_sdpa.csv")));
    CHECK(fs::exists(rig.art("assess_mpc.csv")));
    const json summary = json::parse(read_file(rig.art("assess_summary.json")));
    CHECK(summary.at("count").get<int>() == rig.cfg.assessment_count);
    CHECK(summary.at("policies").size() == 3);

    r = rig.run("compare --a sdpo --b mpc");
    REQUIRE(r.code == 0);
    const json gap = json::parse(read_file(rig.art("gap_sdpo_vs_mpc.json")));
    CHECK(gap.at("wins_a").get<int>() + gap.at("wins_b").get<int>() + gap.at("ties").get<int>() ==
          rig.cfg.assessment_count);
    CHECK(fs::exists(rig.art("gap_sdpo_vs_mpc.csv")));

    r = rig.run("export-milp --t0 3 --steps 6");
    REQUIRE(r.code == 0);
    const json milp = json::parse(read_file(rig.art("milp_window.json")));
    CHECK(milp.at("n_cols").get<int>() == 42);
    CHECK(milp.at("n_integer").get<int>() == 6);
    CHECK(milp.at("n_rows").get<int>() == 36);
    CHECK(read_file(rig.art("milp_window.mps")).find("ENDATA") != std::string::npos);

    r = rig.run("validate-discretization");
    REQUIRE(r.code == 0);
    const json disc = json::parse(read_file(rig.art("discretization.json")));
    CHECK(disc.at("pass").get<bool>());

    r = rig.run("report");
    REQUIRE(r.code == 0);
    CHECK(fs::exists(rig.art("report.txt")));
    CHECK(r.output.find("Assessment over") != std::string::npos);
    CHECK(r.output.find("Pairwise bill comparisons") != std::string::npos);

    // bad arguments against the finished pipeline
    r = rig.run("simulate --policy bogus");
    CHECK(r.code != 0);
    CHECK(r.output.find("unknown policy") != std::string::npos);
    r = rig.run("simulate --set somewhere");
    CHECK(r.code != 0);
    CHECK(r.output.find("--set must be optimization or assessment") != std::string::npos);
    r = rig.run("simulate --scenario 99999");
    CHECK(r.code != 0);
    CHECK(r.output.find("out of range") != std::string::npos);
}

TEST_CASE("configuration drift invalidates downstream stages") {
    CliRig rig("drift");
    REQUIRE(rig.run("gen-scenarios").code == 0);

    json j = json::parse(read_file(rig.cfg_path));
    j["lambda_comfort"] = j["lambda_comfort"].get<double>() * 2.0;
    std::ofstream(rig.cfg_path) << j.dump(2);

    const CliResult r = rig.run("fit-noise");
    CHECK(r.code != 0);
    CHECK(r.output.find("different configuration") != std::string::npos);
}

TEST_CASE("seed override rekeys both scenario sets") {
    CliRig rig("seeds");
    REQUIRE(rig.run("--seed 777 gen-scenarios").code == 0);
    const json m1 = json::parse(read_file(rig.art("manifest_gen-scenarios.json")));
    CHECK(m1.at("optimization_seed").get<std::uint64_t>() == 777);
    CHECK(m1.at("assessment_seed").get<std::uint64_t>() == 777 + 1000003);

    REQUIRE(rig.run("--seed 888 gen-scenarios").code == 0);
    const json m2 = json::parse(read_file(rig.art("manifest_gen-scenarios.json")));
    CHECK(m2.at("optimization_hash") != m1.at("optimization_hash"));
    CHECK(m2.at("assessment_hash") != m1.at("assessment_hash"));
}

TEST_CASE("worker threads do not change any artifact") {
    CliRig rig("threads");
    REQUIRE(rig.run("gen-scenarios").code == 0);
    REQUIRE(rig.run("fit-noise").code == 0);
    REQUIRE(rig.run("offline-sdpo").code == 0);
    REQUIRE(rig.run("offline-sdpa").code == 0);
    REQUIRE(rig.run("assess --policies sdpo,sdpa --timing-scenarios 1").code == 0);

    const std::string vtable = read_file(rig.art("vtable_sdpa.bin"));
    const std::string ref_csv = read_file(rig.art("assess_reference.csv"));
    const std::string sdpo_csv = read_file(rig.art("assess_sdpo.csv"));
    const std::string sdpa_csv = read_file(rig.art("assess_sdpa.csv"));
    const std::string summary = read_file(rig.art("assess_summary.json"));

    REQUIRE(rig.run("--threads 3 offline-sdpa").code == 0);
    REQUIRE(rig.run("--threads 3 assess --policies sdpo,sdpa --timing-scenarios 1").code == 0);

    CHECK(read_file(rig.art("vtable_sdpa.bin")) == vtable);
    CHECK(read_file(rig.art("assess_reference.csv")) == ref_csv);
    CHECK(read_file(rig.art("assess_sdpo.csv")) == sdpo_csv);
    CHECK(read_file(rig.art("assess_sdpa.csv")) == sdpa_csv);
    CHECK(read_file(rig.art("assess_summary.json")) == summary);
}

TEST_CASE("unknown subcommands are rejected") {
    CliRig rig("badsub");
    CHECK(rig.run("frobnicate").code != 0);
    CHECK(rig.run("").code != 0);  // a subcommand is required
}
