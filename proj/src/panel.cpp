#include "stva/panel.hpp"

#include "stva/csv.hpp"
#include "stva/errors.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

namespace stva {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::optional<double> parse_double(const std::string& s) {
    if (s.empty()) return std::nullopt;
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

std::optional<long long> parse_count(const std::string& s) {
    if (s.empty()) return std::nullopt;
    char* end = nullptr;
    long long v = std::strtoll(s.c_str(), &end, 10);
    if (end != s.c_str() + s.size()) return std::nullopt;
    return v;
}

} // namespace

std::optional<int> WeekRange::week_of(const Date& d) const {
    long days = days_between(start, d);
    if (days < 0 || days >= 7L * n_weeks) return std::nullopt;
    return static_cast<int>(days / 7);
}

Eigen::VectorXd ObservationPanel::observation(int t) const {
    const int n = n_counties();
    Eigen::VectorXd x(2 * n);
    x.head(n) = cases.row(t).transpose();
    x.tail(n) = deaths.row(t).transpose();
    return x;
}

std::string IngestReport::summary() const {
    std::ostringstream os;
    os << "ingest: " << unknown_fips_rows << " unknown-FIPS rows skipped, " << malformed_rows
       << " malformed rows skipped, " << duplicate_rows << " duplicate rows overwritten, "
       << negative_diffs_clamped << " negative daily diffs clamped, "
       << zero_filled_counties.size() << " counties zero-filled, " << imputed_mobility_cells
       << " mobility cells imputed";
    if (!degenerate_covariates.empty()) {
        os << "; degenerate covariates:";
        for (const auto& name : degenerate_covariates) os << ' ' << name;
    }
    return os.str();
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd>
load_epi(const std::string& csv_path, const CountyGraph& graph, const WeekRange& weeks,
         IngestReport& report) {
    CsvTable table = read_csv(csv_path);
    const int c_date = table.column("date");
    const int c_fips = table.column("fips");
    const int c_cases = table.column("cases");
    const int c_deaths = table.column("deaths");
    if (c_date < 0 || c_fips < 0 || c_cases < 0 || c_deaths < 0)
        throw ValidationError("epi csv: need columns date,fips,cases,deaths");

    const int n = graph.size();
    const int total_days = 7 * weeks.n_weeks;

    // Per county: observed cumulative counts by day offset, plus the latest
    // observation before the window (the differencing baseline).
    struct Series {
        std::map<int, std::pair<long long, long long>> by_day;
        std::optional<std::pair<long long, long long>> baseline;
        long baseline_day = std::numeric_limits<long>::min();
        bool seen = false;
    };
    std::vector<Series> series(static_cast<std::size_t>(n));

    for (const auto& row : table.rows) {
        if (static_cast<int>(row.size()) <= std::max({c_date, c_fips, c_cases, c_deaths})) {
            report.malformed_rows++;
            continue;
        }
        auto date = parse_date(row[static_cast<std::size_t>(c_date)]);
        auto cases = parse_count(row[static_cast<std::size_t>(c_cases)]);
        auto deaths = parse_count(row[static_cast<std::size_t>(c_deaths)]);
        if (!date || !cases || !deaths || *cases < 0 || *deaths < 0) {
            report.malformed_rows++;
            continue;
        }
        int idx = graph.index_of(row[static_cast<std::size_t>(c_fips)]);
        if (idx < 0) {
            report.unknown_fips_rows++;
            continue;
        }
        Series& s = series[static_cast<std::size_t>(idx)];
        s.seen = true;
        long day = days_between(weeks.start, *date);
        if (day < 0) {
            if (day > s.baseline_day) {
                s.baseline_day = day;
                s.baseline = {*cases, *deaths};
            }
        } else if (day < total_days) {
            auto [it, inserted] = s.by_day.emplace(static_cast<int>(day),
                                                   std::make_pair(*cases, *deaths));
            if (!inserted) {
                it->second = {*cases, *deaths};
                report.duplicate_rows++;
            }
        }
        // Rows past the window end are ignored.
    }

    Eigen::MatrixXd out_cases = Eigen::MatrixXd::Zero(weeks.n_weeks, n);
    Eigen::MatrixXd out_deaths = Eigen::MatrixXd::Zero(weeks.n_weeks, n);

    for (int i = 0; i < n; ++i) {
        const Series& s = series[static_cast<std::size_t>(i)];
        if (!s.seen) {
            report.zero_filled_counties.push_back(graph.county(i).fips);
            continue;
        }
        // Difference consecutive cumulative observations (carrying forward
        // through missing days), clamp corrections to zero, sum by week. The
        // first observation acts as the baseline level when nothing precedes
        // the window: its own level is prior history, not incidence.
        std::optional<std::pair<long long, long long>> prev = s.baseline;
        for (const auto& [day, cum] : s.by_day) {
            long long dc = 0, dd = 0;
            if (prev) {
                dc = cum.first - prev->first;
                dd = cum.second - prev->second;
                if (dc < 0) {
                    report.negative_diffs_clamped++;
                    dc = 0;
                }
                if (dd < 0) {
                    report.negative_diffs_clamped++;
                    dd = 0;
                }
            }
            prev = cum;
            const int w = day / 7;
            out_cases(w, i) += static_cast<double>(dc);
            out_deaths(w, i) += static_cast<double>(dd);
        }
    }
    return {std::move(out_cases), std::move(out_deaths)};
}

std::vector<Eigen::MatrixXd>
load_mobility(const std::string& csv_path, const CountyGraph& graph, const WeekRange& weeks,
              std::vector<Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>>& imputed,
              IngestReport& report) {
    CsvTable table = read_csv(csv_path);
    const int c_date = table.column("date");
    const int c_fips = table.column("fips");
    if (c_date < 0 || c_fips < 0) throw ValidationError("mobility csv: need columns date,fips");

    const int K = static_cast<int>(kMobilityCategories.size());
    std::vector<int> cat_col(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) {
        cat_col[static_cast<std::size_t>(k)] = table.column(kMobilityCategories[static_cast<std::size_t>(k)]);
        if (cat_col[static_cast<std::size_t>(k)] < 0)
            throw ValidationError(std::string("mobility csv: missing category column ") +
                                  kMobilityCategories[static_cast<std::size_t>(k)]);
    }

    const int n = graph.size();
    const int T = weeks.n_weeks;
    std::vector<Eigen::MatrixXd> sum(static_cast<std::size_t>(K), Eigen::MatrixXd::Zero(T, n));
    std::vector<Eigen::MatrixXd> cnt(static_cast<std::size_t>(K), Eigen::MatrixXd::Zero(T, n));

    for (const auto& row : table.rows) {
        if (row.size() < table.header.size()) {
            report.malformed_rows++;
            continue;
        }
        auto date = parse_date(row[static_cast<std::size_t>(c_date)]);
        if (!date) {
            report.malformed_rows++;
            continue;
        }
        auto week = weeks.week_of(*date);
        if (!week) continue;
        int idx = graph.index_of(row[static_cast<std::size_t>(c_fips)]);
        if (idx < 0) {
            report.unknown_fips_rows++;
            continue;
        }
        for (int k = 0; k < K; ++k) {
            const std::string& field = row[static_cast<std::size_t>(cat_col[static_cast<std::size_t>(k)])];
            if (field.empty()) continue; // blank: no daily value
            auto v = parse_double(field);
            if (!v) {
                report.malformed_rows++;
                continue;
            }
            sum[static_cast<std::size_t>(k)](*week, idx) += *v;
            cnt[static_cast<std::size_t>(k)](*week, idx) += 1.0;
        }
    }

    std::vector<Eigen::MatrixXd> mobility(static_cast<std::size_t>(K), Eigen::MatrixXd::Zero(T, n));
    imputed.assign(static_cast<std::size_t>(K),
                   Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>::Zero(T, n));
    for (int k = 0; k < K; ++k) {
        for (int t = 0; t < T; ++t) {
            for (int i = 0; i < n; ++i) {
                const double c = cnt[static_cast<std::size_t>(k)](t, i);
                if (c > 0.0) {
                    mobility[static_cast<std::size_t>(k)](t, i) =
                        sum[static_cast<std::size_t>(k)](t, i) / c;
                } else {
                    // No daily values this week: percent change from baseline,
                    // so the baseline level 0 is the imputation.
                    mobility[static_cast<std::size_t>(k)](t, i) = 0.0;
                    imputed[static_cast<std::size_t>(k)](t, i) = 1;
                    report.imputed_mobility_cells++;
                }
            }
        }
    }
    return mobility;
}

Eigen::MatrixXd load_census(const std::string& csv_path, const CountyGraph& graph) {
    CsvTable table = read_csv(csv_path);
    if (table.header != std::vector<std::string>{"fips", "total_population", "pct_65_over"})
        throw ValidationError("census csv header mismatch, want fips,total_population,pct_65_over");

    const int n = graph.size();
    Eigen::MatrixXd demo = Eigen::MatrixXd::Zero(n, 2);
    std::vector<std::uint8_t> have(static_cast<std::size_t>(n), 0);

    for (const auto& row : table.rows) {
        if (row.size() != 3) throw ValidationError("census csv: bad field count");
        int idx = graph.index_of(row[0]);
        if (idx < 0) continue; // counties outside the graph are irrelevant
        auto pop = parse_double(row[1]);
        auto pct = parse_double(row[2]);
        if (!pop || !pct)
            throw ValidationError("census csv: unparsable values for FIPS " + row[0]);
        if (*pop < 0.0)
            throw ValidationError("census csv: negative population for FIPS " + row[0]);
        if (*pct < 0.0 || *pct > 1.0)
            throw ValidationError("census csv: pct_65_over out of [0,1] for FIPS " + row[0] +
                                  " (got " + row[2] + ")");
        demo(idx, 0) = *pop;
        demo(idx, 1) = *pct;
        have[static_cast<std::size_t>(idx)] = 1;
    }

    std::string missing;
    for (int i = 0; i < n; ++i) {
        if (!have[static_cast<std::size_t>(i)]) {
            if (!missing.empty()) missing += ", ";
            missing += graph.county(i).fips;
        }
    }
    if (!missing.empty())
        throw ValidationError("census csv: missing counties: " + missing);
    return demo;
}

namespace {

// Population moments; the {-1,+1} column must standardize to itself.
std::pair<double, double> mean_std(const double* data, std::ptrdiff_t count) {
    double mean = 0.0;
    for (std::ptrdiff_t i = 0; i < count; ++i) mean += data[i];
    mean /= static_cast<double>(count);
    double var = 0.0;
    for (std::ptrdiff_t i = 0; i < count; ++i) {
        const double d = data[i] - mean;
        var += d * d;
    }
    var /= static_cast<double>(count);
    return {mean, std::sqrt(var)};
}

bool degenerate_std(double sd, double mean) {
    return sd <= 1e-15 * (1.0 + std::abs(mean));
}

} // namespace

void standardize(ObservationPanel& panel) {
    const bool first = !panel.standardized;
    const int K = panel.n_mobility();
    const int L = panel.n_demographics();
    if (first) {
        panel.stats.mobility_mean.assign(static_cast<std::size_t>(K), 0.0);
        panel.stats.mobility_std.assign(static_cast<std::size_t>(K), 1.0);
        panel.stats.mobility_degenerate.assign(static_cast<std::size_t>(K), 0);
        panel.stats.demo_mean.assign(static_cast<std::size_t>(L), 0.0);
        panel.stats.demo_std.assign(static_cast<std::size_t>(L), 1.0);
        panel.stats.demo_degenerate.assign(static_cast<std::size_t>(L), 0);
    }

    for (int k = 0; k < K; ++k) {
        Eigen::MatrixXd& m = panel.mobility[static_cast<std::size_t>(k)];
        auto [mean, sd] = mean_std(m.data(), m.size());
        if (degenerate_std(sd, mean)) {
            m.setZero();
            if (first) {
                panel.stats.mobility_degenerate[static_cast<std::size_t>(k)] = 1;
                panel.stats.mobility_mean[static_cast<std::size_t>(k)] = mean;
                panel.stats.mobility_std[static_cast<std::size_t>(k)] = 0.0;
            }
            continue;
        }
        m.array() = (m.array() - mean) / sd;
        if (first) {
            panel.stats.mobility_mean[static_cast<std::size_t>(k)] = mean;
            panel.stats.mobility_std[static_cast<std::size_t>(k)] = sd;
        }
    }

    for (int l = 0; l < L; ++l) {
        Eigen::VectorXd col = panel.demographics.col(l);
        auto [mean, sd] = mean_std(col.data(), col.size());
        if (degenerate_std(sd, mean)) {
            panel.demographics.col(l).setZero();
            if (first) {
                panel.stats.demo_degenerate[static_cast<std::size_t>(l)] = 1;
                panel.stats.demo_mean[static_cast<std::size_t>(l)] = mean;
                panel.stats.demo_std[static_cast<std::size_t>(l)] = 0.0;
            }
            continue;
        }
        panel.demographics.col(l) = (col.array() - mean) / sd;
        if (first) {
            panel.stats.demo_mean[static_cast<std::size_t>(l)] = mean;
            panel.stats.demo_std[static_cast<std::size_t>(l)] = sd;
        }
    }
    panel.standardized = true;
}

ObservationPanel assemble_panel(const std::string& epi_csv, const std::string& mobility_csv,
                                const std::string& census_csv, const CountyGraph& graph,
                                const WeekRange& weeks, IngestReport& report) {
    ObservationPanel panel;
    panel.weeks = weeks;
    panel.fips.reserve(static_cast<std::size_t>(graph.size()));
    for (const County& c : graph.counties()) panel.fips.push_back(c.fips);

    std::tie(panel.cases, panel.deaths) = load_epi(epi_csv, graph, weeks, report);
    panel.mobility = load_mobility(mobility_csv, graph, weeks, panel.mobility_imputed, report);
    panel.mobility_names.assign(kMobilityCategories.begin(), kMobilityCategories.end());
    panel.demographics = load_census(census_csv, graph);
    panel.demographic_names = {"total_population", "pct_65_over"};

    standardize(panel);
    for (std::size_t k = 0; k < panel.stats.mobility_degenerate.size(); ++k) {
        if (panel.stats.mobility_degenerate[k])
            report.degenerate_covariates.push_back(panel.mobility_names[k]);
    }
    for (std::size_t l = 0; l < panel.stats.demo_degenerate.size(); ++l) {
        if (panel.stats.demo_degenerate[l])
            report.degenerate_covariates.push_back(panel.demographic_names[l]);
    }
    return panel;
}

namespace {

void write_matrix_csv(const Eigen::MatrixXd& m, const ObservationPanel& panel,
                      const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path);
    out << "week_start";
    for (const auto& f : panel.fips) out << ',' << f;
    out << '\n';
    for (int t = 0; t < panel.n_weeks(); ++t) {
        out << format_date(panel.weeks.week_start(t));
        for (int i = 0; i < panel.n_counties(); ++i) out << ',' << fmt_double(m(t, i));
        out << '\n';
    }
}

Eigen::MatrixXd read_matrix_csv(const std::string& path, const ObservationPanel& panel) {
    CsvTable table = read_csv(path);
    const int n = panel.n_counties();
    const int T = panel.n_weeks();
    if (static_cast<int>(table.header.size()) != n + 1 || static_cast<int>(table.rows.size()) != T)
        throw ValidationError("panel bundle matrix has wrong shape: " + path);
    Eigen::MatrixXd m(T, n);
    for (int t = 0; t < T; ++t) {
        for (int i = 0; i < n; ++i) {
            auto v = parse_double(table.rows[static_cast<std::size_t>(t)][static_cast<std::size_t>(i) + 1]);
            if (!v) throw ValidationError("panel bundle: unparsable value in " + path);
            m(t, i) = *v;
        }
    }
    return m;
}

} // namespace

void save_panel(const ObservationPanel& panel, const std::string& dir) {
    fs::create_directories(dir);

    json manifest;
    manifest["format"] = "stva-panel-v1";
    manifest["n_counties"] = panel.n_counties();
    manifest["n_weeks"] = panel.n_weeks();
    manifest["n_mobility"] = panel.n_mobility();
    manifest["n_demographics"] = panel.n_demographics();
    manifest["week_start"] = format_date(panel.weeks.start);
    {
        std::vector<std::string> week_starts;
        week_starts.reserve(static_cast<std::size_t>(panel.n_weeks()));
        for (int t = 0; t < panel.n_weeks(); ++t)
            week_starts.push_back(format_date(panel.weeks.week_start(t)));
        manifest["week_starts"] = week_starts;
    }
    manifest["fips"] = panel.fips;
    manifest["mobility_names"] = panel.mobility_names;
    manifest["demographic_names"] = panel.demographic_names;
    manifest["standardized"] = panel.standardized;
    manifest["stats"] = {
        {"mobility_mean", panel.stats.mobility_mean},
        {"mobility_std", panel.stats.mobility_std},
        {"mobility_degenerate", panel.stats.mobility_degenerate},
        {"demo_mean", panel.stats.demo_mean},
        {"demo_std", panel.stats.demo_std},
        {"demo_degenerate", panel.stats.demo_degenerate},
    };

    write_matrix_csv(panel.cases, panel, dir + "/cases.csv");
    write_matrix_csv(panel.deaths, panel, dir + "/deaths.csv");
    for (int k = 0; k < panel.n_mobility(); ++k) {
        write_matrix_csv(panel.mobility[static_cast<std::size_t>(k)], panel,
                         dir + "/mobility_" + panel.mobility_names[static_cast<std::size_t>(k)] + ".csv");
        Eigen::MatrixXd mask =
            panel.mobility_imputed[static_cast<std::size_t>(k)].cast<double>();
        write_matrix_csv(mask, panel,
                         dir + "/imputed_" + panel.mobility_names[static_cast<std::size_t>(k)] + ".csv");
    }
    {
        std::ofstream out(dir + "/demographics.csv", std::ios::binary);
        if (!out) throw ValidationError("cannot write demographics.csv");
        out << "fips";
        for (const auto& name : panel.demographic_names) out << ',' << name;
        out << '\n';
        for (int i = 0; i < panel.n_counties(); ++i) {
            out << panel.fips[static_cast<std::size_t>(i)];
            for (int l = 0; l < panel.n_demographics(); ++l)
                out << ',' << fmt_double(panel.demographics(i, l));
            out << '\n';
        }
    }
    std::ofstream mout(dir + "/manifest.json", std::ios::binary);
    if (!mout) throw ValidationError("cannot write panel manifest");
    mout << manifest.dump(2) << '\n';
}

ObservationPanel load_panel(const std::string& dir) {
    std::ifstream min(dir + "/manifest.json");
    if (!min) throw ValidationError("cannot open panel manifest in " + dir);
    json manifest = json::parse(min);
    if (manifest.value("format", std::string()) != "stva-panel-v1")
        throw ValidationError("not a panel bundle: " + dir);

    ObservationPanel panel;
    auto start = parse_date(manifest.at("week_start").get<std::string>());
    if (!start) throw ValidationError("panel manifest: bad week_start");
    panel.weeks.start = *start;
    panel.weeks.n_weeks = manifest.at("n_weeks").get<int>();
    panel.fips = manifest.at("fips").get<std::vector<std::string>>();
    panel.mobility_names = manifest.at("mobility_names").get<std::vector<std::string>>();
    panel.demographic_names = manifest.at("demographic_names").get<std::vector<std::string>>();
    panel.standardized = manifest.at("standardized").get<bool>();
    const auto& st = manifest.at("stats");
    panel.stats.mobility_mean = st.at("mobility_mean").get<std::vector<double>>();
    panel.stats.mobility_std = st.at("mobility_std").get<std::vector<double>>();
    panel.stats.mobility_degenerate = st.at("mobility_degenerate").get<std::vector<std::uint8_t>>();
    panel.stats.demo_mean = st.at("demo_mean").get<std::vector<double>>();
    panel.stats.demo_std = st.at("demo_std").get<std::vector<double>>();
    panel.stats.demo_degenerate = st.at("demo_degenerate").get<std::vector<std::uint8_t>>();

    if (static_cast<int>(panel.fips.size()) != manifest.at("n_counties").get<int>())
        throw ValidationError("panel manifest: fips count mismatch");

    panel.cases = read_matrix_csv(dir + "/cases.csv", panel);
    panel.deaths = read_matrix_csv(dir + "/deaths.csv", panel);
    const int K = manifest.at("n_mobility").get<int>();
    for (int k = 0; k < K; ++k) {
        const std::string& name = panel.mobility_names[static_cast<std::size_t>(k)];
        panel.mobility.push_back(read_matrix_csv(dir + "/mobility_" + name + ".csv", panel));
        Eigen::MatrixXd mask = read_matrix_csv(dir + "/imputed_" + name + ".csv", panel);
        panel.mobility_imputed.push_back(mask.cast<std::uint8_t>());
    }

    const int L = manifest.at("n_demographics").get<int>();
    CsvTable demo = read_csv(dir + "/demographics.csv");
    if (static_cast<int>(demo.rows.size()) != panel.n_counties())
        throw ValidationError("panel bundle: demographics row count mismatch");
    panel.demographics.resize(panel.n_counties(), L);
    for (int i = 0; i < panel.n_counties(); ++i) {
        const auto& row = demo.rows[static_cast<std::size_t>(i)];
        if (row[0] != panel.fips[static_cast<std::size_t>(i)])
            throw ValidationError("panel bundle: demographics order mismatch");
        for (int l = 0; l < L; ++l) {
            auto v = parse_double(row[static_cast<std::size_t>(l) + 1]);
            if (!v) throw ValidationError("panel bundle: unparsable demographics value");
            panel.demographics(i, l) = *v;
        }
    }
    return panel;
}

} // namespace stva
