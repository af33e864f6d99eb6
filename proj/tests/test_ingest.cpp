#include "stva/errors.hpp"
#include "stva/panel.hpp"
#include "stva/synth.hpp"

#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

using namespace stva;
using test::make_graph;
using test::TempDir;
using test::write_file;

namespace {

WeekRange weeks_of(int n) {
    WeekRange w;
    w.n_weeks = n;
    return w; // default start 2020-03-15
}

std::string epi_header() { return "date,county,state,fips,cases,deaths\n"; }

std::string epi_row(const Date& d, const std::string& fips, long long cases, long long deaths) {
    std::ostringstream os;
    os << format_date(d) << ",X,GA," << fips << ',' << cases << ',' << deaths << '\n';
    return os.str();
}

// Independent re-aggregation: per county walk observations in date order,
// difference, clamp, bucket by the week of the later observation.
struct EpiOracleRow {
    long day = 0; // offset from window start
    long long cases = 0, deaths = 0;
};
std::pair<std::vector<long long>, std::vector<long long>>
epi_oracle(std::vector<EpiOracleRow> rows, int n_weeks) {
    std::sort(rows.begin(), rows.end(),
              [](const EpiOracleRow& a, const EpiOracleRow& b) { return a.day < b.day; });
    std::vector<long long> weekly_cases(static_cast<std::size_t>(n_weeks), 0);
    std::vector<long long> weekly_deaths(static_cast<std::size_t>(n_weeks), 0);
    bool have_prev = false;
    long long prev_c = 0, prev_d = 0;
    for (const auto& row : rows) {
        if (have_prev && row.day >= 0 && row.day < 7L * n_weeks) {
            weekly_cases[static_cast<std::size_t>(row.day / 7)] += std::max(0LL, row.cases - prev_c);
            weekly_deaths[static_cast<std::size_t>(row.day / 7)] += std::max(0LL, row.deaths - prev_d);
        }
        prev_c = row.cases;
        prev_d = row.deaths;
        have_prev = true;
    }
    return {weekly_cases, weekly_deaths};
}

std::string mobility_header() {
    return "date,fips,retail_and_recreation,grocery_and_pharmacy,parks,transit_stations,"
           "workplaces,residential\n";
}

} // namespace

TEST_CASE("weeks: default window starts on a Sunday and maps dates") {
    WeekRange w;
    CHECK(is_sunday(w.start));
    CHECK(w.n_weeks == 49);
    CHECK(format_date(w.week_start(0)) == "2020-03-15");
    CHECK(format_date(w.week_start(30)) == "2020-10-11");
    CHECK(w.week_of(*parse_date("2020-03-15")) == 0);
    CHECK(w.week_of(*parse_date("2020-03-21")) == 0);
    CHECK(w.week_of(*parse_date("2020-03-22")) == 1);
    CHECK_FALSE(w.week_of(*parse_date("2020-03-14")).has_value());
}

TEST_CASE("epi: one week of cumulative counts yields last-minus-first") {
    const auto graph = make_graph(1);
    const WeekRange weeks = weeks_of(1);
    std::string csv = epi_header();
    const long long cum[7] = {0, 1, 3, 6, 10, 15, 21};
    for (int d = 0; d < 7; ++d) csv += epi_row(add_days(weeks.start, d), "00001", cum[d], 0);
    TempDir dir;
    write_file(dir.file("epi.csv"), csv);
    IngestReport report;
    auto [cases, deaths] = load_epi(dir.file("epi.csv"), graph, weeks, report);
    CHECK(cases(0, 0) == 21.0);
    CHECK(deaths(0, 0) == 0.0);
    CHECK(report.negative_diffs_clamped == 0);
}

TEST_CASE("epi: reporting corrections are clamped, not subtracted") {
    const auto graph = make_graph(1);
    const WeekRange weeks = weeks_of(1);
    std::string csv = epi_header();
    const long long cum[3] = {5, 4, 6};
    for (int d = 0; d < 3; ++d) csv += epi_row(add_days(weeks.start, d), "00001", cum[d], cum[d]);
    TempDir dir;
    write_file(dir.file("epi.csv"), csv);
    IngestReport report;
    auto [cases, deaths] = load_epi(dir.file("epi.csv"), graph, weeks, report);
    CHECK(cases(0, 0) == 2.0);
    CHECK(deaths(0, 0) == 2.0);
    CHECK(report.negative_diffs_clamped == 2);
}

TEST_CASE("epi: baseline before the window counts, gaps carry forward") {
    const auto graph = make_graph(1);
    const WeekRange weeks = weeks_of(2);
    std::string csv = epi_header();
    csv += epi_row(add_days(weeks.start, -3), "00001", 10, 1); // pre-window baseline
    csv += epi_row(add_days(weeks.start, 2), "00001", 14, 1);  // +4 cases in week 0
    csv += epi_row(add_days(weeks.start, 9), "00001", 20, 3);  // +6, +2 in week 1
    TempDir dir;
    write_file(dir.file("epi.csv"), csv);
    IngestReport report;
    auto [cases, deaths] = load_epi(dir.file("epi.csv"), graph, weeks, report);
    CHECK(cases(0, 0) == 4.0);
    CHECK(cases(1, 0) == 6.0);
    CHECK(deaths(0, 0) == 0.0);
    CHECK(deaths(1, 0) == 2.0);
}

TEST_CASE("epi: random files match the re-aggregation oracle and conserve totals") {
    std::mt19937_64 rng(99);
    const auto graph = make_graph(2);
    const WeekRange weeks = weeks_of(2);

    for (int trial = 0; trial < 20; ++trial) {
        std::string csv = epi_header();
        std::vector<EpiOracleRow> oracle_rows[2];
        for (int c = 0; c < 2; ++c) {
            long long cum_c = 0, cum_d = 0;
            for (int d = 0; d < 14; ++d) {
                if (rng() % 4 == 0) continue; // missing day
                cum_c += static_cast<long long>(rng() % 7) - 1; // occasional correction
                cum_d += static_cast<long long>(rng() % 3) - 1;
                cum_c = std::max(cum_c, 0LL);
                cum_d = std::max(cum_d, 0LL);
                const std::string fips = c == 0 ? "00001" : "00002";
                csv += epi_row(add_days(weeks.start, d), fips, cum_c, cum_d);
                oracle_rows[c].push_back({d, cum_c, cum_d});
            }
        }
        TempDir dir;
        write_file(dir.file("epi.csv"), csv);
        IngestReport report;
        auto [cases, deaths] = load_epi(dir.file("epi.csv"), graph, weeks, report);

        for (int c = 0; c < 2; ++c) {
            auto [wc, wd] = epi_oracle(oracle_rows[c], 2);
            long long total_c = 0, total_d = 0;
            for (int w = 0; w < 2; ++w) {
                CHECK(cases(w, c) == static_cast<double>(wc[static_cast<std::size_t>(w)]));
                CHECK(deaths(w, c) == static_cast<double>(wd[static_cast<std::size_t>(w)]));
                total_c += wc[static_cast<std::size_t>(w)];
                total_d += wd[static_cast<std::size_t>(w)];
            }
            // Aggregation conservation: weekly sums equal the clamped total.
            CHECK(static_cast<long long>(cases.col(c).sum()) == total_c);
            CHECK(static_cast<long long>(deaths.col(c).sum()) == total_d);
        }
    }
}

TEST_CASE("epi: unknown FIPS tallied, absent counties zero-filled") {
    const auto graph = make_graph(2);
    const WeekRange weeks = weeks_of(1);
    std::string csv = epi_header();
    csv += epi_row(weeks.start, "00001", 5, 0);
    csv += epi_row(weeks.start, "99999", 7, 0);
    csv += epi_row(weeks.start, "99999", 9, 1);
    TempDir dir;
    write_file(dir.file("epi.csv"), csv);
    IngestReport report;
    auto [cases, deaths] = load_epi(dir.file("epi.csv"), graph, weeks, report);
    CHECK(report.unknown_fips_rows == 2);
    REQUIRE(report.zero_filled_counties.size() == 1);
    CHECK(report.zero_filled_counties[0] == "00002");
    CHECK(cases.col(1).sum() == 0.0);
    CHECK(deaths.col(1).sum() == 0.0);
}

TEST_CASE("mobility: weekly mean of available values, blanks ignored") {
    const auto graph = make_graph(1);
    const WeekRange weeks = weeks_of(1);
    std::string csv = mobility_header();
    const char* vals[7] = {"-10", "-20", "", "-30", "", "", ""};
    for (int d = 0; d < 7; ++d) {
        csv += format_date(add_days(weeks.start, d)) + ",00001," + vals[d] + ",1,1,1,1,1\n";
    }
    TempDir dir;
    write_file(dir.file("mob.csv"), csv);
    IngestReport report;
    std::vector<Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>> imputed;
    auto mobility = load_mobility(dir.file("mob.csv"), graph, weeks, imputed, report);
    CHECK(mobility[0](0, 0) == doctest::Approx(-20.0));
    CHECK(imputed[0](0, 0) == 0);
    CHECK(report.imputed_mobility_cells == 0);
}

TEST_CASE("mobility: an empty week is imputed at the baseline and flagged") {
    const auto graph = make_graph(1);
    const WeekRange weeks = weeks_of(1);
    std::string csv = mobility_header();
    for (int d = 0; d < 7; ++d)
        csv += format_date(add_days(weeks.start, d)) + ",00001,,1,1,1,1,1\n";
    TempDir dir;
    write_file(dir.file("mob.csv"), csv);
    IngestReport report;
    std::vector<Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>> imputed;
    auto mobility = load_mobility(dir.file("mob.csv"), graph, weeks, imputed, report);
    CHECK(mobility[0](0, 0) == 0.0);
    CHECK(imputed[0](0, 0) == 1);
    CHECK(report.imputed_mobility_cells == 1);
}

TEST_CASE("mobility: a missing category column is a schema error") {
    const auto graph = make_graph(1);
    TempDir dir;
    write_file(dir.file("mob.csv"),
               "date,fips,retail_and_recreation,grocery_and_pharmacy,parks,transit_stations,"
               "workplaces\n2020-03-15,00001,1,1,1,1,1\n");
    IngestReport report;
    std::vector<Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>> imputed;
    CHECK_THROWS_AS(
        static_cast<void>(load_mobility(dir.file("mob.csv"), graph, weeks_of(1), imputed, report)),
        ValidationError);
}

TEST_CASE("mobility: three-county file matches hand-computed means") {
    const auto graph = make_graph(3);
    const WeekRange weeks = weeks_of(2);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> uni(-50.0, 50.0);

    double sums[6][2][3] = {};
    int counts[6][2][3] = {};
    std::string csv = mobility_header();
    for (int d = 0; d < 14; ++d) {
        for (int c = 0; c < 3; ++c) {
            std::ostringstream row;
            row << format_date(add_days(weeks.start, d)) << ",0000" << (c + 1);
            for (int k = 0; k < 6; ++k) {
                row << ',';
                if (rng() % 3 == 0) continue; // blank
                const double v = std::round(uni(rng));
                row << v;
                sums[k][d / 7][c] += v;
                counts[k][d / 7][c]++;
            }
            csv += row.str() + "\n";
        }
    }
    TempDir dir;
    write_file(dir.file("mob.csv"), csv);
    IngestReport report;
    std::vector<Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>> imputed;
    auto mobility = load_mobility(dir.file("mob.csv"), graph, weeks, imputed, report);
    for (int k = 0; k < 6; ++k) {
        for (int w = 0; w < 2; ++w) {
            for (int c = 0; c < 3; ++c) {
                const double expect = counts[k][w][c] ? sums[k][w][c] / counts[k][w][c] : 0.0;
                CHECK(mobility[static_cast<std::size_t>(k)](w, c) == doctest::Approx(expect));
            }
        }
    }
}

TEST_CASE("census: pass-through by FIPS, validation, full coverage") {
    const auto graph = make_graph(3);
    TempDir dir;
    write_file(dir.file("census.csv"), "fips,total_population,pct_65_over\n"
                                       "00002,50000,0.2\n"
                                       "00001,1063937,0.11\n"
                                       "00003,1,1\n");
    const auto demo = load_census(dir.file("census.csv"), graph);
    CHECK(demo(0, 0) == 1063937.0);
    CHECK(demo(0, 1) == 0.11);
    CHECK(demo(1, 0) == 50000.0);

    write_file(dir.file("bad_pct.csv"), "fips,total_population,pct_65_over\n00001,100,11\n");
    CHECK_THROWS_WITH_AS(static_cast<void>(load_census(dir.file("bad_pct.csv"), graph)),
                         doctest::Contains("out of [0,1]"), ValidationError);

    write_file(dir.file("neg.csv"), "fips,total_population,pct_65_over\n00001,-5,0.5\n");
    CHECK_THROWS_AS(static_cast<void>(load_census(dir.file("neg.csv"), graph)), ValidationError);

    write_file(dir.file("partial.csv"), "fips,total_population,pct_65_over\n00001,100,0.5\n");
    CHECK_THROWS_WITH_AS(static_cast<void>(load_census(dir.file("partial.csv"), graph)),
                         doctest::Contains("00002"), ValidationError);
}

TEST_CASE("standardize: degenerate, two-point and random columns") {
    auto panel = test::make_panel(4, 6, 2, 2);
    panel.standardized = false;
    panel.mobility[0].setConstant(7.5); // degenerate
    for (int t = 0; t < 6; ++t)
        for (int i = 0; i < 4; ++i) panel.mobility[1](t, i) = ((t * 4 + i) % 2 == 0) ? -1.0 : 1.0;
    std::mt19937_64 rng(17);
    std::normal_distribution<double> gauss(3.0, 2.5);
    for (int i = 0; i < 4; ++i) {
        panel.demographics(i, 0) = gauss(rng);
        panel.demographics(i, 1) = 42.0; // degenerate
    }
    panel.cases.setConstant(9.0);

    standardize(panel);

    CHECK(panel.mobility[0].cwiseAbs().maxCoeff() == 0.0);
    CHECK(panel.stats.mobility_degenerate[0] == 1);
    CHECK(panel.stats.demo_degenerate[1] == 1);

    for (int t = 0; t < 6; ++t)
        for (int i = 0; i < 4; ++i)
            CHECK(std::abs(panel.mobility[1](t, i)) == doctest::Approx(1.0).epsilon(1e-12));

    const double mean = panel.demographics.col(0).mean();
    const double sd = std::sqrt(panel.demographics.col(0).array().square().mean() - mean * mean);
    CHECK(std::abs(mean) < 1e-10);
    CHECK(std::abs(sd - 1.0) < 1e-10);

    CHECK(panel.cases(0, 0) == 9.0); // counts untouched

    // Idempotence: a second pass moves nothing beyond rounding.
    auto before = panel.mobility[1];
    auto demo_before = panel.demographics;
    standardize(panel);
    CHECK((panel.mobility[1] - before).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((panel.demographics - demo_before).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("epi: integerized synthetic weekly counts round-trip through ingestion") {
    SynthSpec spec;
    spec.n_counties = 4;
    spec.n_weeks = 6;
    spec.noise_scale = 0.5;
    spec.seed = 123;
    auto inst = generate(spec);
    const WeekRange weeks = weeks_of(6);

    // Integerize the synthetic weekly counts, then realize them as a
    // cumulative daily file: a zero row before the window and one cumulative
    // observation in each week.
    Eigen::MatrixXd weekly_cases(6, 4), weekly_deaths(6, 4);
    for (int t = 0; t < 6; ++t) {
        for (int c = 0; c < 4; ++c) {
            weekly_cases(t, c) = std::floor(std::abs(inst.panel.cases(t, c)));
            weekly_deaths(t, c) = std::floor(std::abs(inst.panel.deaths(t, c)));
        }
    }
    std::string csv = epi_header();
    for (int c = 0; c < 4; ++c) {
        const std::string fips = inst.panel.fips[static_cast<std::size_t>(c)];
        csv += epi_row(add_days(weeks.start, -1), fips, 0, 0);
        long long cum_c = 0, cum_d = 0;
        for (int t = 0; t < 6; ++t) {
            cum_c += static_cast<long long>(weekly_cases(t, c));
            cum_d += static_cast<long long>(weekly_deaths(t, c));
            csv += epi_row(add_days(weeks.start, 7 * t + 3), fips, cum_c, cum_d);
        }
    }
    test::TempDir dir;
    test::write_file(dir.file("epi.csv"), csv);
    IngestReport report;
    auto [cases, deaths] = load_epi(dir.file("epi.csv"), inst.graph, weeks, report);
    CHECK((cases - weekly_cases).cwiseAbs().maxCoeff() == 0.0);
    CHECK((deaths - weekly_deaths).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("panel: assembly aligns on the graph order and serializes deterministically") {
    const auto graph = make_graph(3, {{0, 1}});
    const WeekRange weeks = weeks_of(2);
    TempDir dir;

    std::string epi = epi_header();
    for (int d = 0; d < 14; ++d) {
        epi += epi_row(add_days(weeks.start, d), "00001", 2 * d, d);
        epi += epi_row(add_days(weeks.start, d), "00002", 3 * d, d / 2);
        epi += epi_row(add_days(weeks.start, d), "00003", d, 0);
    }
    write_file(dir.file("epi.csv"), epi);
    std::string mob = mobility_header();
    for (int d = 0; d < 14; ++d)
        for (int c = 1; c <= 3; ++c)
            mob += format_date(add_days(weeks.start, d)) + ",0000" + std::to_string(c) +
                   ",-5,3,0.5,-1,2,4.5\n";
    write_file(dir.file("mob.csv"), mob);
    write_file(dir.file("census.csv"), "fips,total_population,pct_65_over\n"
                                       "00001,1000,0.1\n00002,2000,0.2\n00003,3000,0.3\n");

    IngestReport report;
    const auto panel = assemble_panel(dir.file("epi.csv"), dir.file("mob.csv"),
                                      dir.file("census.csv"), graph, weeks, report);
    CHECK(panel.fips == std::vector<std::string>{"00001", "00002", "00003"});
    CHECK(panel.standardized);
    CHECK(panel.n_mobility() == 6);
    CHECK(panel.n_demographics() == 2);
    // Identical mobility everywhere: all six categories are degenerate.
    CHECK(report.degenerate_covariates.size() == 6);

    save_panel(panel, dir.file("bundle_a"));
    save_panel(panel, dir.file("bundle_b"));
    for (const char* name : {"manifest.json", "cases.csv", "deaths.csv", "demographics.csv"}) {
        CHECK(test::read_file(dir.file("bundle_a/") + name) ==
              test::read_file(dir.file("bundle_b/") + name));
    }

    const auto loaded = load_panel(dir.file("bundle_a"));
    CHECK(loaded.fips == panel.fips);
    CHECK((loaded.cases - panel.cases).cwiseAbs().maxCoeff() == 0.0);
    CHECK((loaded.deaths - panel.deaths).cwiseAbs().maxCoeff() == 0.0);
    CHECK((loaded.demographics - panel.demographics).cwiseAbs().maxCoeff() == 0.0);
    save_panel(loaded, dir.file("bundle_c"));
    CHECK(test::read_file(dir.file("bundle_a/cases.csv")) ==
          test::read_file(dir.file("bundle_c/cases.csv")));
}
