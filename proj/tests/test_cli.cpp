#include "stva/digest.hpp"

#include "support.hpp"

#include <doctest.h>

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <fstream>
#include <map>
#include <string>
#include <sys/wait.h>

using namespace stva;
using json = nlohmann::json;

namespace {

std::string cli_path() {
    const char* env = std::getenv("STVA_CLI");
    REQUIRE_MESSAGE(env != nullptr, "STVA_CLI must point at the stva binary (ctest sets it)");
    return env;
}

struct RunResult {
    int exit_code = -1;
    std::string output;
};

RunResult run_cli(const std::string& args, const test::TempDir& scratch) {
    const std::string log = scratch.file("last_run.log");
    const std::string cmd = cli_path() + " " + args + " >" + log + " 2>&1";
    const int status = std::system(cmd.c_str());
    RunResult res;
    res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    res.output = test::read_file(log);
    return res;
}

// Output digests keyed by filename, from a run manifest.
std::map<std::string, std::string> output_digests(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    REQUIRE(in.good());
    const json manifest = json::parse(in);
    std::map<std::string, std::string> by_name;
    for (const auto& [path, digest] : manifest.at("outputs").items()) {
        const auto slash = path.find_last_of('/');
        by_name[path.substr(slash + 1)] = digest.get<std::string>();
    }
    return by_name;
}

const std::string kFitFlags =
    " --eta 5 --lambda1 0.01 --backtracking --step-size 1e-4 --tol 1e-12";

} // namespace

TEST_CASE("cli: synth -> fit -> evaluate smoke pipeline") {
    test::TempDir dir;
    auto synth = run_cli("synth --counties 8 --weeks 40 --seed 7 --eta 5 --out " + dir.file("synth"),
                         dir);
    REQUIRE_MESSAGE(synth.exit_code == 0, synth.output);

    auto fit = run_cli("fit --panel " + dir.file("synth/panel") + kFitFlags + " --max-iters 1500 --out " +
                           dir.file("fit"),
                       dir);
    REQUIRE_MESSAGE(fit.exit_code == 0, fit.output);

    // Fixed-small-step mode: the recorded objective never increases.
    auto fixed = run_cli("fit --panel " + dir.file("synth/panel") +
                             " --eta 5 --lambda1 0.01 --step-size 1e-7 --max-iters 300 --tol 0"
                             " --out " +
                             dir.file("fit_fixed"),
                         dir);
    REQUIRE_MESSAGE(fixed.exit_code == 0, fixed.output);
    {
        std::ifstream in(dir.file("fit_fixed/report.json"));
        const json report = json::parse(in);
        const auto& trace = report.at("loss_trace");
        REQUIRE(trace.size() > 10);
        for (std::size_t i = 1; i < trace.size(); ++i)
            CHECK(trace[i][1].get<double>() <= trace[i - 1][1].get<double>());
    }

    auto eval = run_cli("evaluate --panel " + dir.file("synth/panel") + " --mode in-sample" +
                            kFitFlags + " --max-iters 1500 --out " + dir.file("eval"),
                        dir);
    REQUIRE_MESSAGE(eval.exit_code == 0, eval.output);
    CHECK(test::read_file(dir.file("eval/predictions.csv"))
              .rfind("fips,week_start,target,predicted,observed,mode", 0) == 0);
}

TEST_CASE("cli: one-week-ahead run starts at the requested date") {
    test::TempDir dir;
    auto synth = run_cli(
        "synth --counties 5 --weeks 36 --seed 11 --eta 5 --out " + dir.file("synth"), dir);
    REQUIRE_MESSAGE(synth.exit_code == 0, synth.output);

    // Week 30 of the default window starts 2020-10-11.
    auto eval = run_cli("evaluate --panel " + dir.file("synth/panel") +
                            " --mode one-week-ahead --start 2020-10-11" + kFitFlags +
                            " --max-iters 400 --out " + dir.file("eval"),
                        dir);
    REQUIRE_MESSAGE(eval.exit_code == 0, eval.output);

    const std::string csv = test::read_file(dir.file("eval/predictions.csv"));
    std::istringstream lines(csv);
    std::string line;
    std::getline(lines, line); // header
    std::string earliest = "9999-99-99";
    while (std::getline(lines, line)) {
        const auto a = line.find(',');
        const auto b = line.find(',', a + 1);
        earliest = std::min(earliest, line.substr(a + 1, b - a - 1));
    }
    CHECK(earliest == "2020-10-11");
}

TEST_CASE("cli: ablate emits the four-row comparison table") {
    test::TempDir dir;
    auto synth = run_cli("synth --counties 6 --weeks 30 --seed 13 --eta 5 --noise 0.4 --out " +
                             dir.file("synth"),
                         dir);
    REQUIRE_MESSAGE(synth.exit_code == 0, synth.output);
    auto ablate = run_cli("ablate --panel " + dir.file("synth/panel") +
                              " --kinds full,no_spatial,no_census,no_mobility" + kFitFlags +
                              " --max-iters 500 --out " + dir.file("ablate"),
                          dir);
    REQUIRE_MESSAGE(ablate.exit_code == 0, ablate.output);

    const std::string csv = test::read_file(dir.file("ablate/ablation.csv"));
    CHECK(csv.rfind("model,mae,pct_mae_increase\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
    CHECK(csv.find("full,") != std::string::npos);
    CHECK(csv.find("no_mobility,") != std::string::npos);
    CHECK(csv.find('%') != std::string::npos);
}

TEST_CASE("cli: cv reports the selected cell") {
    test::TempDir dir;
    auto synth = run_cli("synth --counties 5 --weeks 30 --seed 17 --eta 5 --noise 1.0 --out " +
                             dir.file("synth"),
                         dir);
    REQUIRE_MESSAGE(synth.exit_code == 0, synth.output);
    auto cv = run_cli("cv --panel " + dir.file("synth/panel") +
                          " --lambda1-grid 0.01,10 --lambda2-grid 0.1" + kFitFlags +
                          " --max-iters 300 --out " + dir.file("cv"),
                      dir);
    REQUIRE_MESSAGE(cv.exit_code == 0, cv.output);
    CHECK(cv.output.find("best lambda1") != std::string::npos);
    const std::string csv = test::read_file(dir.file("cv/cv.csv"));
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3); // header + 2 cells
}

TEST_CASE("cli: coef exports tables and geojson for a focus county") {
    test::TempDir dir;
    auto synth = run_cli(
        "synth --counties 5 --weeks 30 --seed 19 --eta 5 --hubs 1 --out " + dir.file("synth"), dir);
    REQUIRE_MESSAGE(synth.exit_code == 0, synth.output);
    auto fit = run_cli("fit --panel " + dir.file("synth/panel") + kFitFlags + " --max-iters 1500 --out " +
                           dir.file("fit"),
                       dir);
    REQUIRE_MESSAGE(fit.exit_code == 0, fit.output);
    auto coef = run_cli("coef --panel " + dir.file("synth/panel") + " --params " +
                            dir.file("fit/params.stva") +
                            " --focus 00001 --matrix A --lag 1 --significance --out " +
                            dir.file("coef"),
                        dir);
    REQUIRE_MESSAGE(coef.exit_code == 0, coef.output);

    auto predict = run_cli("predict --panel " + dir.file("synth/panel") + " --params " +
                               dir.file("fit/params.stva") + " --out " + dir.file("predict"),
                           dir);
    REQUIRE_MESSAGE(predict.exit_code == 0, predict.output);
    CHECK(test::read_file(dir.file("predict/predictions.csv")).find(",in_sample") !=
          std::string::npos);
    CHECK(test::read_file(dir.file("coef/coefficients.csv"))
              .rfind("matrix,lag,row_fips,col_fips,estimate,t_value,p_value", 0) == 0);
    CHECK(test::read_file(dir.file("coef/export_00001_A1.geojson")).find("FeatureCollection") !=
          std::string::npos);
    CHECK(test::read_file(dir.file("coef/covariate_coefficients.csv"))
              .rfind("coefficient,covariate,lag,estimate,t_value,p_value", 0) == 0);
}

TEST_CASE("cli: ingest builds a panel from raw csvs and honors a config file") {
    test::TempDir dir;
    std::string epi = "date,county,state,fips,cases,deaths\n";
    std::string mob = "date,fips,retail_and_recreation,grocery_and_pharmacy,parks,"
                      "transit_stations,workplaces,residential\n";
    const Date start = *parse_date("2020-03-15");
    for (int d = 0; d < 28; ++d) {
        const std::string iso = format_date(add_days(start, d));
        for (int c = 1; c <= 3; ++c) {
            epi += iso + ",X,GA,0000" + std::to_string(c) + "," + std::to_string(10 * d + c) +
                   "," + std::to_string(d) + "\n";
            mob += iso + ",0000" + std::to_string(c) + ",-5," + std::to_string(c) +
                   ",0.5,-1,2,4\n";
        }
    }
    test::write_file(dir.file("epi.csv"), epi);
    test::write_file(dir.file("mob.csv"), mob);
    test::write_file(dir.file("census.csv"), "fips,total_population,pct_65_over\n"
                                             "00001,1000,0.1\n00002,2000,0.2\n00003,3000,0.3\n");
    // A quoted name with a comma must survive the panel-bundle round trip.
    test::write_file(dir.file("counties.csv"), "fips,name,state,lat,lon,is_hub\n"
                                               "00001,A,GA,33.0,-84.0,1\n"
                                               "00002,\"Big, Bend\",GA,33.5,-84.5,0\n"
                                               "00003,C,TX,31.0,-97.0,0\n");
    test::write_file(dir.file("adjacency.csv"), "fips_a,fips_b\n00001,00002\n");

    const std::string raw = " --counties-csv " + dir.file("counties.csv") + " --adjacency-csv " +
                            dir.file("adjacency.csv") + " --epi-csv " + dir.file("epi.csv") +
                            " --mobility-csv " + dir.file("mob.csv") + " --census-csv " +
                            dir.file("census.csv");
    auto ingest = run_cli("ingest" + raw + " --start 2020-03-15 --weeks 4 --out " +
                              dir.file("ingested"),
                          dir);
    REQUIRE_MESSAGE(ingest.exit_code == 0, ingest.output);
    CHECK(test::read_file(dir.file("ingested/panel/manifest.json")).find("stva-panel-v1") !=
          std::string::npos);

    // A Monday start is rejected.
    auto monday = run_cli("ingest" + raw + " --start 2020-03-16 --weeks 4 --out " +
                              dir.file("bad"),
                          dir);
    CHECK(monday.exit_code == 1);
    CHECK(monday.output.find("Sunday") != std::string::npos);

    // Config file keys are read and command-line flags override them.
    test::write_file(dir.file("run.cfg"), "p = 1\n"
                                          "eta = 5\n"
                                          "lambda1 = 0.01\n"
                                          "step_size = 1e-4\n"
                                          "max_iters = 40\n"
                                          "backtracking = true\n");
    auto fit = run_cli("fit --panel " + dir.file("ingested/panel") + " --config " +
                           dir.file("run.cfg") + " --max-iters 25 --out " + dir.file("fit"),
                       dir);
    REQUIRE_MESSAGE(fit.exit_code == 0, fit.output);
    {
        std::ifstream in(dir.file("fit/manifest.json"));
        const json manifest = json::parse(in);
        CHECK(manifest.at("config").at("p").get<int>() == 1);            // from file
        CHECK(manifest.at("config").at("eta").get<double>() == 5.0);     // from file
        CHECK(manifest.at("config").at("max_iters").get<int>() == 25);   // flag wins
        CHECK(manifest.at("config").at("backtracking").get<bool>());
    }
}

TEST_CASE("cli: evaluate merges benchmark overlays") {
    test::TempDir dir;
    auto synth = run_cli(
        "synth --counties 6 --weeks 30 --seed 29 --eta 5 --noise 0.3 --out " + dir.file("synth"),
        dir);
    REQUIRE_MESSAGE(synth.exit_code == 0, synth.output);

    // States in synthetic graphs group five counties: AA then AB.
    test::write_file(dir.file("bench.csv"), "state,week,predicted_deaths\n"
                                            "AA,2020-04-19,3.5\n"
                                            "AA,2020-04-26,4.0\n");
    auto eval = run_cli("evaluate --panel " + dir.file("synth/panel") + " --mode in-sample" +
                            kFitFlags + " --max-iters 400 --benchmark demo=" +
                            dir.file("bench.csv") + " --out " + dir.file("eval"),
                        dir);
    REQUIRE_MESSAGE(eval.exit_code == 0, eval.output);
    CHECK(test::read_file(dir.file("eval/benchmark_demo_mae.csv"))
              .rfind("state,week_start,mae\n", 0) == 0);
    CHECK(test::read_file(dir.file("eval/mae_summary.json")).find("benchmark_overall_mae") !=
          std::string::npos);
}

TEST_CASE("cli: bad invocations exit 1 with a message") {
    test::TempDir dir;
    auto unknown = run_cli("fit --no-such-flag", dir);
    CHECK(unknown.exit_code == 1);
    CHECK_FALSE(unknown.output.empty());

    auto missing = run_cli("fit --panel " + dir.file("nowhere") + " --out " + dir.file("out"), dir);
    CHECK(missing.exit_code == 1);
    CHECK(missing.output.find("error") != std::string::npos);

    auto no_sub = run_cli("", dir);
    CHECK(no_sub.exit_code == 1);
}

TEST_CASE("cli: identical seeds give identical output digests") {
    test::TempDir dir;
    for (const char* tag : {"a", "b"}) {
        const std::string base = dir.file(tag);
        auto synth = run_cli("synth --counties 6 --weeks 30 --seed 23 --eta 5 --noise 0.3 --out " +
                                 base + "/synth",
                             dir);
        REQUIRE_MESSAGE(synth.exit_code == 0, synth.output);
        auto fit = run_cli("fit --panel " + base + "/synth/panel" + kFitFlags + " --max-iters 1500 --out " + base +
                               "/fit",
                           dir);
        REQUIRE_MESSAGE(fit.exit_code == 0, fit.output);
        auto eval = run_cli("evaluate --panel " + base + "/synth/panel --mode in-sample" +
                                kFitFlags + " --max-iters 1500 --out " + base + "/eval",
                            dir);
        REQUIRE_MESSAGE(eval.exit_code == 0, eval.output);
    }
    for (const char* stage : {"synth", "fit", "eval"}) {
        const auto a = output_digests(dir.file(std::string("a/") + stage + "/manifest.json"));
        const auto b = output_digests(dir.file(std::string("b/") + stage + "/manifest.json"));
        CHECK(a == b);
        CHECK_FALSE(a.empty());
    }
}
