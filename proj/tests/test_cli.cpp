#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mcrr/forcing.hpp"
#include "support.hpp"

// End-to-end runs of the installed binary. Cases build on each other in file
// order: ingest first, then training, then the consumers of trained runs.

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Env {
    fs::path root;     // scratch directory for this process
    fs::path out;      // artifact tree the subcommands share
    fs::path forcing;  // canonical synthetic input
    fs::path log;      // stdout+stderr of the last invocation
};

Env& env() {
    static Env e = [] {
        Env v;
        v.root = fs::temp_directory_path() /
                 ("mcrr_cli_" + std::to_string(static_cast<long>(::getpid())));
        fs::remove_all(v.root);
        fs::create_directories(v.root);
        v.out = v.root / "out";
        v.forcing = v.root / "forcing.csv";
        v.log = v.root / "cli.log";
        std::ofstream f(v.forcing);
        f << testsup::series_to_csv(testsup::synthetic_series(1990, 4, 21));
        return v;
    }();
    return e;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int run_cli(const std::string& args, const std::string& env_prefix = "") {
    const std::string cmd = env_prefix + std::string(MCRR_CLI_PATH) + " " + args + " > " +
                            env().log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    REQUIRE(status != -1);
    return WEXITSTATUS(status);
}

std::string last_log() { return read_file(env().log); }

std::size_t line_count(const fs::path& p) {
    std::ifstream in(p);
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) ++n;
    return n;
}

json load_json(const fs::path& p) { return json::parse(read_file(p)); }

std::string out_flag() { return "-o " + env().out.string() + " "; }

}  // namespace

TEST_CASE("version and usage") {
    CHECK(run_cli("--version") == 0);
    CHECK(last_log().find("mcrr 0.1.0") != std::string::npos);

    CHECK(run_cli("") != 0);  // a subcommand is required
    CHECK(run_cli("--help") == 0);
    const std::string help = last_log();
    for (const char* sub : {"ingest", "train", "evaluate", "simulate", "report"})
        CHECK(help.find(sub) != std::string::npos);
}

TEST_CASE("ingest writes deterministic mask artifacts") {
    REQUIRE(run_cli(out_flag() + "ingest --forcing " + env().forcing.string()) == 0);

    const fs::path dir = env().out / "ingest";
    for (const char* f : {"forcing.csv", "mask.csv", "summary.json"})
        CHECK(fs::exists(dir / f));

    const json summary = load_json(dir / "summary.json");
    CHECK(summary.at("n_steps").get<int>() == 2556);  // 1461 native + 3x365 spin-up
    CHECK(summary.at("config_hash").get<std::string>().size() == 16);
    const auto counts = summary.at("flow_groups").at("counts").get<std::vector<int>>();
    int total = 0;
    for (int c : counts) total += c;
    CHECK(counts.size() == 5);
    CHECK(total == 1461);
    CHECK(summary.at("flow_groups").at("thresholds").get<std::vector<double>>().size() == 4);

    const std::string mask = read_file(dir / "mask.csv");
    CHECK(mask.rfind("# mcrr 0.1.0 config ", 0) == 0);
    CHECK(mask.find("date,subset,flow_group") != std::string::npos);
    CHECK(mask.find("Spinup") != std::string::npos);

    // Identical invocation, byte-identical artifacts.
    const std::string forcing_before = read_file(dir / "forcing.csv");
    REQUIRE(run_cli(out_flag() + "ingest --forcing " + env().forcing.string()) == 0);
    CHECK(read_file(dir / "mask.csv") == mask);
    CHECK(read_file(dir / "forcing.csv") == forcing_before);
}

TEST_CASE("ingest rejects unusable input with status 2") {
    const fs::path bad = env().root / "bad.csv";
    {
        std::ofstream f(bad);
        f << "date,precip_mm,pet_mm,q_mm\n1989-10-01,oops,1.0,2.0\n";
    }
    CHECK(run_cli(out_flag() + "ingest --forcing " + bad.string()) == 2);
    CHECK(last_log().find("bad.csv:2") != std::string::npos);

    const fs::path short_years = env().root / "short.csv";
    {
        std::ofstream f(short_years);
        f << testsup::series_to_csv(testsup::synthetic_series(1990, 3, 4));
    }
    CHECK(run_cli(out_flag() + "ingest --forcing " + short_years.string()) == 2);

    CHECK(run_cli(out_flag() + "ingest --forcing " + (env().root / "absent.csv").string()) == 1);
}

TEST_CASE("train writes run, seed, and selection artifacts") {
    REQUIRE(run_cli(out_flag() + "train --arch MA1 --epochs 15 --seeds 3") == 0);

    const fs::path dir = env().out / "runs" / "MA1";
    for (const char* f : {"run.json", "selected.json", "seed_01.json", "seed_02.json",
                          "seed_03.json"})
        CHECK(fs::exists(dir / f));
    CHECK(fs::exists(env().out / "preliminary" / "MA1.json"));

    const json sel = load_json(dir / "selected.json");
    CHECK(sel.at("model").get<std::string>() == "MA1");
    CHECK(sel.at("seeds_total").get<int>() == 3);
    CHECK(sel.at("seeds_ok").get<int>() == 3);
    CHECK(sel.at("inherited_slots").get<int>() == 0);
    CHECK(sel.at("fresh_slots").get<int>() == 7);
    CHECK(sel.at("parents").empty());
    CHECK(sel.at("config_hash").get<std::string>().size() == 16);
    CHECK(sel.at("tool_version").get<std::string>() == "0.1.0");
    const int seed = sel.at("selected_seed").get<int>();
    CHECK(seed >= 1);
    CHECK(seed <= 3);

    const json run = load_json(dir / "run.json");
    CHECK(run.at("model").get<std::string>() == "MA1");
    CHECK(run.at("runs").size() == 3);
    CHECK(run.at("config").at("epochs").get<int>() == 15);
    CHECK(run.at("config_hash") == sel.at("config_hash"));
}

TEST_CASE("training without ingest artifacts fails") {
    const fs::path fresh = env().root / "empty_out";
    CHECK(run_cli("-o " + fresh.string() + " train --arch MA1 --epochs 2 --seeds 1") == 1);
    CHECK(last_log().find("ingest") != std::string::npos);
}

TEST_CASE("train records lineage provenance") {
    REQUIRE(run_cli(out_flag() + "train --arch MA2 --parent MA1 --epochs 8 --seeds 2") == 0);
    const json sel = load_json(env().out / "runs" / "MA2" / "selected.json");
    CHECK(sel.at("inherited_slots").get<int>() == 7);
    CHECK(sel.at("fresh_slots").get<int>() == 3);
    CHECK(sel.at("parents").get<std::vector<std::string>>() ==
          std::vector<std::string>{"MA1"});

    CHECK(run_cli(out_flag() + "train --arch MA4 --parent MA2 --epochs 4 --seeds 1") == 0);
    const json sel4 = load_json(env().out / "runs" / "MA4" / "selected.json");
    CHECK(sel4.at("inherited_slots").get<int>() == 10);
    CHECK(sel4.at("fresh_slots").get<int>() == 4);

    CHECK(run_cli(out_flag() + "train --arch MA2 --parent NOPE --epochs 2 --seeds 1") == 1);
}

TEST_CASE("repeat training reproduces the selected parameters") {
    REQUIRE(run_cli(out_flag() + "train --arch MA1 --label MA1b --epochs 15 --seeds 3") == 0);
    const json a = load_json(env().out / "runs" / "MA1" / "run.json");
    const json b = load_json(env().out / "runs" / "MA1b" / "run.json");
    const int sa = a.at("selected").get<int>();
    const int sb = b.at("selected").get<int>();
    CHECK(sa == sb);
    CHECK(a.at("runs")[sa].at("params_final") == b.at("runs")[sb].at("params_final"));
}

TEST_CASE("evaluate writes reports and hydrograph exports") {
    REQUIRE(run_cli(out_flag() + "evaluate --run MA1") == 0);

    const fs::path dir = env().out / "eval" / "MA1";
    for (const char* f :
         {"report.json", "report.txt", "annual.csv", "trace.csv",
          "hydrograph_driest_linear.csv", "hydrograph_driest_log10.csv",
          "hydrograph_median_linear.csv", "hydrograph_median_log10.csv",
          "hydrograph_wettest_linear.csv", "hydrograph_wettest_log10.csv"})
        CHECK(fs::exists(dir / f));

    const json rep = load_json(dir / "report.json");
    CHECK(rep.at("model").get<std::string>() == "MA1");
    CHECK(rep.at("subsets")[0].at("name").get<std::string>() == "All");
    CHECK(rep.at("annual").size() == 4);
    CHECK(rep.at("config_hash").get<std::string>().size() == 16);
    CHECK(rep.at("annual_kge_ss_percentiles").contains("p50"));
    CHECK(rep.at("flow_groups").size() == 15);  // 3 subsets x 5 groups

    // Linear and log exports cover the same timesteps.
    CHECK(line_count(dir / "hydrograph_median_linear.csv") ==
          line_count(dir / "hydrograph_median_log10.csv"));
    CHECK(line_count(dir / "annual.csv") >= 5);  // meta + header + 4 years

    const std::string text = read_file(dir / "report.txt");
    CHECK(text.find("subset scores") != std::string::npos);
    CHECK(text.find("Train/G1") != std::string::npos);

    CHECK(run_cli(out_flag() + "evaluate --run NOPE") == 1);
}

TEST_CASE("simulate exports the full trace") {
    REQUIRE(run_cli(out_flag() + "simulate --run MA1") == 0);

    const fs::path dir = env().out / "sim" / "MA1";
    REQUIRE(fs::exists(dir / "trace.csv"));
    REQUIRE(fs::exists(dir / "summary.json"));

    std::ifstream in(dir / "trace.csv");
    std::string meta, header;
    std::getline(in, meta);
    std::getline(in, header);
    CHECK(meta.rfind("# mcrr 0.1.0", 0) == 0);
    CHECK(header.rfind("date,", 0) == 0);
    CHECK(header.find(",streamflow") != std::string::npos);
    CHECK(header.find("soil.state_before") != std::string::npos);
    CHECK(line_count(dir / "trace.csv") == 2556 + 2);

    const json summary = load_json(dir / "summary.json");
    CHECK(std::abs(summary.at("mass_balance").at("residual").get<double>()) < 1e-6);
    CHECK(summary.at("config_hash").get<std::string>().size() == 16);
}

TEST_CASE("report summarizes every trained run") {
    REQUIRE(run_cli(out_flag() + "report") == 0);
    const std::string table = read_file(env().out / "report" / "summary.txt");
    for (const char* label : {"MA1", "MA2", "MA4", "MA1b"})
        CHECK(table.find(label) != std::string::npos);

    const json rows = load_json(env().out / "report" / "summary.json");
    REQUIRE(rows.at("models").is_array());
    CHECK(rows.at("models").size() >= 4);
    bool found = false;
    for (const auto& row : rows.at("models")) {
        if (row.at("model") == "MA2") {
            found = true;
            CHECK(row.at("inherited_slots").get<int>() == 7);
        }
    }
    CHECK(found);
}

TEST_CASE("config file and environment select the output root") {
    const fs::path cfg_out = env().root / "cfg_out";
    const fs::path cfg = env().root / "run.cfg";
    {
        std::ofstream f(cfg);
        f << "output-dir=" << cfg_out.string() << "\n"
          << "[ingest]\n"
          << "forcing=" << env().forcing.string() << "\n"
          << "flow-groups=3\n";
    }
    REQUIRE(run_cli("--config " + cfg.string() + " ingest") == 0);
    const json summary = load_json(cfg_out / "ingest" / "summary.json");
    CHECK(summary.at("flow_groups").at("n_groups").get<int>() == 3);

    // A flag overrides the file.
    REQUIRE(run_cli("--config " + cfg.string() + " ingest --flow-groups 4") == 0);
    const json again = load_json(cfg_out / "ingest" / "summary.json");
    CHECK(again.at("flow_groups").at("n_groups").get<int>() == 4);

    const fs::path env_out = env().root / "env_out";
    REQUIRE(run_cli("ingest --forcing " + env().forcing.string(),
                    "MCRR_OUTPUT_ROOT=" + env_out.string() + " ") == 0);
    CHECK(fs::exists(env_out / "ingest" / "summary.json"));
}

TEST_CASE("campaign trains the lineage-ordered manifest") {
    const fs::path croot = env().root / "campaign_out";
    REQUIRE(run_cli("-o " + croot.string() + " ingest --forcing " +
                    env().forcing.string()) == 0);
    REQUIRE(run_cli("-o " + croot.string() + " train --campaign --epochs 2 --seeds 1") == 0);

    const json manifest = load_json(croot / "campaign_manifest.json");
    REQUIRE(manifest.at("entries").size() == 20);

    std::size_t run_dirs = 0;
    for (const auto& e : fs::directory_iterator(croot / "runs")) {
        if (e.is_directory()) ++run_dirs;
    }
    CHECK(run_dirs == 20);
    for (const char* label : {"MA1", "MA6", "MA1BP1", "MA6BP2", "MA5MR", "MA5-const"})
        CHECK(fs::exists(croot / "runs" / label / "run.json"));

    // MA5 inherits every slot from its three parents.
    const json sel5 = load_json(croot / "runs" / "MA5" / "selected.json");
    CHECK(sel5.at("inherited_slots").get<int>() == 18);
    CHECK(sel5.at("fresh_slots").get<int>() == 0);
    CHECK(sel5.at("parents").get<std::vector<std::string>>() ==
          std::vector<std::string>{"MA2", "MA3", "MA4"});

    REQUIRE(run_cli("-o " + croot.string() + " report") == 0);
    CHECK(read_file(croot / "report" / "summary.txt").find("MA5MR") != std::string::npos);
}
