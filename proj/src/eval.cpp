#include "stva/eval.hpp"

#include "stva/csv.hpp"
#include "stva/errors.hpp"

#include <nlohmann/json.hpp>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <thread>

namespace stva {

using json = nlohmann::ordered_json;

namespace {

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

Target parse_target(const std::string& s) {
    if (s == "cases") return Target::cases;
    if (s == "deaths") return Target::deaths;
    throw ValidationError("unknown target: " + s + " (want cases or deaths)");
}

std::string to_string(Target t) { return t == Target::cases ? "cases" : "deaths"; }

std::string to_string(PredictionSet::Mode m) {
    return m == PredictionSet::Mode::in_sample ? "in_sample" : "one_week_ahead";
}

LagMatrix parse_lag_matrix(const std::string& s) {
    if (s == "B") return LagMatrix::cases_on_cases;
    if (s == "H") return LagMatrix::deaths_on_cases;
    if (s == "A") return LagMatrix::deaths_on_deaths;
    throw ValidationError("unknown lag matrix: " + s + " (want A, B or H)");
}

std::string to_string(LagMatrix m) {
    switch (m) {
        case LagMatrix::cases_on_cases: return "B";
        case LagMatrix::deaths_on_cases: return "H";
        case LagMatrix::deaths_on_deaths: return "A";
    }
    return "?";
}

double PredictionSet::predicted(Target t, int week, int county, bool clamped) const {
    const double v = t == Target::cases ? pred_cases(week, county) : pred_deaths(week, county);
    return clamped ? std::max(0.0, v) : v;
}

double PredictionSet::observed(Target t, int week, int county) const {
    return t == Target::cases ? true_cases(week, county) : true_deaths(week, county);
}

bool ScopeFilter::admits_state(const std::string& st) const {
    if (states.empty()) return true;
    return std::find(states.begin(), states.end(), st) != states.end();
}

namespace {

PredictionSet make_prediction_set(const ObservationPanel& panel, const CountyGraph& graph,
                                  const FitConfig& cfg, PredictionSet::Mode mode) {
    PredictionSet ps;
    ps.mode = mode;
    ps.fips = panel.fips;
    ps.states.reserve(static_cast<std::size_t>(graph.size()));
    for (const County& c : graph.counties()) ps.states.push_back(c.state);
    ps.weeks = panel.weeks;
    const int T = panel.n_weeks();
    const int n = panel.n_counties();
    ps.pred_cases = Eigen::MatrixXd::Zero(T, n);
    ps.pred_deaths = Eigen::MatrixXd::Zero(T, n);
    ps.true_cases = panel.cases;
    ps.true_deaths = panel.deaths;
    ps.valid_week.assign(static_cast<std::size_t>(T), 0);
    ps.trained_weeks_end.assign(static_cast<std::size_t>(T), 0);
    ps.clamp = cfg.clamp_output;
    return ps;
}

void assert_hygiene(const PredictionSet& pred) {
    if (pred.mode != PredictionSet::Mode::one_week_ahead) return;
    for (int t = 0; t < static_cast<int>(pred.valid_week.size()); ++t) {
        if (pred.valid_week[static_cast<std::size_t>(t)] &&
            pred.trained_weeks_end[static_cast<std::size_t>(t)] > t) {
            throw NumericalError("out-of-sample hygiene violated for week " + std::to_string(t));
        }
    }
}

} // namespace

PredictionSet in_sample(const ModelParams& params, const ObservationPanel& panel,
                        const CountyGraph& graph, const FitConfig& cfg) {
    PredictionSet ps = make_prediction_set(panel, graph, cfg, PredictionSet::Mode::in_sample);
    const int n = panel.n_counties();
    for (int t = params.p(); t < panel.n_weeks(); ++t) {
        const Eigen::VectorXd pred = forward(params, panel, t);
        ps.pred_cases.row(t) = pred.head(n).transpose();
        ps.pred_deaths.row(t) = pred.tail(n).transpose();
        ps.valid_week[static_cast<std::size_t>(t)] = 1;
        ps.trained_weeks_end[static_cast<std::size_t>(t)] = panel.n_weeks();
    }
    return ps;
}

std::pair<PredictionSet, std::vector<FitReport>>
rolling_predict(const ObservationPanel& panel, const CountyGraph& graph,
                const SpatialCovariance& cov, const FitConfig& cfg, const RollingOptions& opts) {
    const int T = panel.n_weeks();
    const int p = cfg.p;
    const int first_admissible = p + opts.min_train_weeks;
    const int start = opts.start_week < 0 ? first_admissible : opts.start_week;
    if (start < first_admissible)
        throw ValidationError("rolling_predict: start week " + std::to_string(start) +
                              " leaves fewer than " + std::to_string(opts.min_train_weeks) +
                              " training weeks");
    if (start >= T) throw ValidationError("rolling_predict: start week beyond the panel");

    PredictionSet ps = make_prediction_set(panel, graph, cfg, PredictionSet::Mode::one_week_ahead);
    const int n = panel.n_counties();
    const int n_targets = T - start;
    std::vector<std::optional<FitReport>> reports(static_cast<std::size_t>(n_targets));
    std::vector<std::string> failures(static_cast<std::size_t>(n_targets));

    // Refits for distinct target weeks are independent.
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    const int threads = std::min(thread_budget(), n_targets);
    auto work = [&] {
        for (int idx = next.fetch_add(1); idx < n_targets; idx = next.fetch_add(1)) {
            const int t = start + idx;
            std::vector<int> train;
            for (int w = p; w < t; ++w) train.push_back(w);
            try {
                auto [fitted, report] = fit(panel, graph, cov, cfg, opts.ablation, train);
                if (report.diverged) {
                    failures[static_cast<std::size_t>(idx)] =
                        "week " + format_date(panel.weeks.week_start(t)) + ": " + report.diagnostic;
                    continue;
                }
                const Eigen::VectorXd pred = forward(fitted, panel, t);
                ps.pred_cases.row(t) = pred.head(n).transpose();
                ps.pred_deaths.row(t) = pred.tail(n).transpose();
                ps.valid_week[static_cast<std::size_t>(t)] = 1;
                ps.trained_weeks_end[static_cast<std::size_t>(t)] = t;
                reports[static_cast<std::size_t>(idx)] = std::move(report);
            } catch (const std::exception& e) {
                failures[static_cast<std::size_t>(idx)] =
                    "week " + format_date(panel.weeks.week_start(t)) + ": " + e.what();
            }
        }
    };
    if (threads <= 1) {
        work();
    } else {
        for (int w = 0; w < threads; ++w) pool.emplace_back(work);
        for (auto& th : pool) th.join();
    }

    std::vector<FitReport> kept;
    for (int idx = 0; idx < n_targets; ++idx) {
        if (reports[static_cast<std::size_t>(idx)])
            kept.push_back(std::move(*reports[static_cast<std::size_t>(idx)]));
        if (!failures[static_cast<std::size_t>(idx)].empty())
            ps.failed_weeks.push_back(failures[static_cast<std::size_t>(idx)]);
    }
    assert_hygiene(ps);
    return {std::move(ps), std::move(kept)};
}

MaeReport mae(const PredictionSet& pred, Target target, const ScopeFilter& scope,
              std::optional<bool> clamp_override) {
    assert_hygiene(pred);
    const bool clamped = clamp_override.value_or(pred.clamp);
    const int T = static_cast<int>(pred.valid_week.size());
    const int n = static_cast<int>(pred.fips.size());

    std::map<std::pair<std::string, int>, std::pair<double, long>> acc; // sum, count
    double total = 0.0;
    long cells = 0;

    for (int t = 0; t < T; ++t) {
        if (!pred.valid_week[static_cast<std::size_t>(t)]) continue;
        const Date ws = pred.weeks.week_start(t);
        if (scope.week_from && days_between(*scope.week_from, ws) < 0) continue;
        if (scope.week_to && days_between(ws, *scope.week_to) < 0) continue;
        for (int i = 0; i < n; ++i) {
            const std::string& st = pred.states[static_cast<std::size_t>(i)];
            if (!scope.admits_state(st)) continue;
            const double err =
                std::abs(pred.observed(target, t, i) - pred.predicted(target, t, i, clamped));
            auto& cell = acc[{st, t}];
            cell.first += err;
            cell.second += 1;
            total += err;
            ++cells;
        }
    }
    if (cells == 0) throw ValidationError("mae: empty scope");

    MaeReport report;
    report.target = target;
    report.clamped = clamped;
    report.cells = cells;
    report.overall = total / static_cast<double>(cells);

    std::map<std::string, std::pair<double, long>> by_state;
    std::map<int, std::pair<double, long>> by_week;
    for (const auto& [key, cell] : acc) {
        const double m = cell.first / static_cast<double>(cell.second);
        report.per_state_week[key] = m;
        auto& s = by_state[key.first];
        s.first += m;
        s.second += 1;
        auto& w = by_week[key.second];
        w.first += m;
        w.second += 1;
    }
    for (const auto& [st, sum] : by_state)
        report.per_state[st] = sum.first / static_cast<double>(sum.second);
    for (const auto& [wk, sum] : by_week)
        report.per_week[wk] = sum.first / static_cast<double>(sum.second);
    return report;
}

std::vector<AblationRow> ablation_table(const std::map<AblationKind, MaeReport>& reports) {
    auto full_it = reports.find(AblationKind::full);
    if (full_it == reports.end())
        throw ValidationError("ablation_table: full-model report is required");
    const double mae_full = full_it->second.overall;

    std::vector<AblationRow> rows;
    for (AblationKind kind : {AblationKind::full, AblationKind::no_spatial, AblationKind::no_census,
                              AblationKind::no_mobility}) {
        auto it = reports.find(kind);
        if (it == reports.end()) continue;
        AblationRow row;
        row.kind = kind;
        row.mae = it->second.overall;
        if (kind != AblationKind::full && row.mae != 0.0)
            row.pct_increase = (row.mae - mae_full) / row.mae * 100.0;
        rows.push_back(row);
    }
    return rows;
}

MaeReport benchmark_mae(const ObservationPanel& panel, const CountyGraph& graph,
                        const std::string& csv_path) {
    CsvTable table = read_csv(csv_path);
    if (table.header != std::vector<std::string>{"state", "week", "predicted_deaths"})
        throw ValidationError("benchmark csv header mismatch, want state,week,predicted_deaths");

    std::map<std::string, std::vector<int>> state_members;
    for (int i = 0; i < graph.size(); ++i) state_members[graph.county(i).state].push_back(i);

    MaeReport report;
    report.target = Target::deaths;
    report.clamped = false;
    double total = 0.0;

    std::map<std::string, std::pair<double, long>> by_state;
    std::map<int, std::pair<double, long>> by_week;
    for (const auto& row : table.rows) {
        if (row.size() != 3) throw ValidationError("benchmark csv: bad field count");
        auto date = parse_date(row[1]);
        if (!date) throw ValidationError("benchmark csv: bad week date " + row[1]);
        auto week = panel.weeks.week_of(*date);
        if (!week) continue;
        auto members = state_members.find(row[0]);
        if (members == state_members.end()) continue;
        char* end = nullptr;
        const double predicted = std::strtod(row[2].c_str(), &end);
        if (end != row[2].c_str() + row[2].size())
            throw ValidationError("benchmark csv: bad prediction " + row[2]);

        double observed = 0.0;
        for (int i : members->second) observed += panel.deaths(*week, i);
        const double err = std::abs(observed - predicted);
        if (!report.per_state_week.emplace(std::make_pair(row[0], *week), err).second)
            throw ValidationError("benchmark csv: duplicate row for " + row[0] + " " + row[1]);
        auto& s = by_state[row[0]];
        s.first += err;
        s.second += 1;
        auto& w = by_week[*week];
        w.first += err;
        w.second += 1;
        total += err;
        report.cells += 1;
    }
    if (report.cells == 0) throw ValidationError("benchmark csv: no rows matched the panel");
    report.overall = total / static_cast<double>(report.cells);
    for (const auto& [st, sum] : by_state)
        report.per_state[st] = sum.first / static_cast<double>(sum.second);
    for (const auto& [wk, sum] : by_week)
        report.per_week[wk] = sum.first / static_cast<double>(sum.second);
    return report;
}

std::vector<ExportRow> coefficient_export(const ModelParams& params, const CountyGraph& graph,
                                          int focus, LagMatrix matrix, int tau) {
    if (focus < 0 || focus >= graph.size())
        throw ValidationError("coefficient_export: focus county out of range");
    if (tau < 1 || tau > params.p()) throw ValidationError("coefficient_export: lag out of range");

    std::span<const double> values = matrix == LagMatrix::cases_on_cases
                                         ? params.cases_on_cases(tau)
                                         : matrix == LagMatrix::deaths_on_cases
                                               ? params.deaths_on_cases(tau)
                                               : params.deaths_on_deaths(tau);
    std::vector<ExportRow> rows;
    for (int i = 0; i < graph.size(); ++i) {
        const std::ptrdiff_t idx = params.pattern().index_of(i, focus);
        if (idx < 0) continue; // off-pattern: no correlation to report
        rows.push_back({graph.county(i).fips, i, values[static_cast<std::size_t>(idx)]});
    }
    return rows;
}

void write_export_csv(const std::vector<ExportRow>& rows, const CountyGraph& graph, int focus,
                      LagMatrix matrix, int tau, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path);
    out << "matrix,lag,row_fips,col_fips,estimate,t_value,p_value\n";
    for (const ExportRow& row : rows) {
        out << to_string(matrix) << ',' << tau << ',' << row.row_fips << ','
            << graph.county(focus).fips << ',' << fmt_double(row.value) << ",,\n";
    }
}

void write_export_geojson(const std::vector<ExportRow>& rows, const CountyGraph& graph,
                          const std::string& path) {
    json features = json::array();
    for (const ExportRow& row : rows) {
        const County& c = graph.county(row.row_index);
        json feature;
        feature["type"] = "Feature";
        feature["properties"] = {{"fips", c.fips}, {"name", c.name}, {"state", c.state},
                                 {"value", row.value}};
        feature["geometry"] = {{"type", "Point"}, {"coordinates", {c.lon, c.lat}}};
        features.push_back(std::move(feature));
    }
    json fc;
    fc["type"] = "FeatureCollection";
    fc["features"] = std::move(features);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path);
    out << fc.dump(2) << '\n';
}

namespace {

double normal_two_sided_p(double t) {
    const double p = std::erfc(std::abs(t) / std::sqrt(2.0));
    return std::max(p, std::numeric_limits<double>::denorm_min());
}

// SEs for one OLS block: G = X'X over the weeks, sigma2 from the full-model
// residuals with df = n_obs - q. Rank deficiency flags the whole block.
struct BlockResult {
    std::vector<std::optional<double>> se;
    bool flagged = false;
};

BlockResult block_standard_errors(const Eigen::MatrixXd& gram, double rss, long n_obs) {
    const Eigen::Index q = gram.rows();
    BlockResult res;
    res.se.assign(static_cast<std::size_t>(q), std::nullopt);
    const long df = n_obs - static_cast<long>(q);
    if (df <= 0) {
        res.flagged = true;
        return res;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
    if (eig.info() != Eigen::Success) {
        res.flagged = true;
        return res;
    }
    const double max_ev = eig.eigenvalues().maxCoeff();
    if (max_ev <= 0.0 || eig.eigenvalues().minCoeff() <= 1e-12 * max_ev) {
        res.flagged = true;
        return res;
    }
    const double sigma2 = rss / static_cast<double>(df);
    const Eigen::MatrixXd& v = eig.eigenvectors();
    for (Eigen::Index j = 0; j < q; ++j) {
        double inv_jj = 0.0;
        for (Eigen::Index k = 0; k < q; ++k)
            inv_jj += v(j, k) * v(j, k) / eig.eigenvalues()(k);
        res.se[static_cast<std::size_t>(j)] = std::sqrt(sigma2 * inv_jj);
    }
    return res;
}

CoefficientStat make_stat(double estimate, const std::optional<double>& se, bool flagged) {
    CoefficientStat stat;
    stat.estimate = estimate;
    stat.flagged = flagged || !se;
    if (se && *se > 0.0) {
        stat.se = se;
        stat.t_value = estimate / *se;
        stat.p_value = normal_two_sided_p(*stat.t_value);
    }
    return stat;
}

} // namespace

SignificanceReport significance(const ModelParams& params, const ObservationPanel& panel,
                                const SpatialCovariance& cov, const FitConfig& cfg) {
    // The exponential kernel has a constant diagonal, so per-block whitening
    // (and the delta block weights) rescale estimates and errors together and
    // cancel out of every t-value.
    (void)cov;
    (void)cfg;
    const int n = panel.n_counties();
    const int p = params.p();
    const int K = params.n_mobility();
    const int L = params.n_demographics();
    const std::vector<int> weeks = usable_weeks(panel, p);
    const long n_weeks = static_cast<long>(weeks.size());
    if (n_weeks == 0) throw ValidationError("significance: panel has no usable weeks");

    // Full-model residuals, one pass.
    Eigen::MatrixXd res_cases(n_weeks, n), res_deaths(n_weeks, n);
    for (long wi = 0; wi < n_weeks; ++wi) {
        const int t = weeks[static_cast<std::size_t>(wi)];
        const Eigen::VectorXd pred = forward(params, panel, t);
        res_cases.row(wi) = panel.cases.row(t) - pred.head(n).transpose();
        res_deaths.row(wi) = panel.deaths.row(t) - pred.tail(n).transpose();
    }

    SignificanceReport report;
    report.spatial.resize(static_cast<std::size_t>(p));
    for (int tau = 1; tau <= p; ++tau) {
        for (auto& fam : report.spatial[static_cast<std::size_t>(tau - 1)])
            fam.resize(params.pattern().nnz());
    }

    const SparsityPattern& pat = params.pattern();

    // Case equation of county i: regressors are the lagged cases of the
    // pattern row, coefficients the B row.
    for (int i = 0; i < n; ++i) {
        const auto row = pat.row_cols(i);
        const std::size_t base = pat.row_begin(i);
        const Eigen::Index q = static_cast<Eigen::Index>(row.size()) * p;

        Eigen::MatrixXd design(n_weeks, q);
        for (long wi = 0; wi < n_weeks; ++wi) {
            const int t = weeks[static_cast<std::size_t>(wi)];
            Eigen::Index c = 0;
            for (int tau = 1; tau <= p; ++tau)
                for (int j : row) design(wi, c++) = panel.cases(t - tau, j);
        }
        const double rss = res_cases.col(i).squaredNorm();
        const BlockResult blk =
            block_standard_errors(design.transpose() * design, rss, n_weeks);

        Eigen::Index c = 0;
        for (int tau = 1; tau <= p; ++tau) {
            auto values = params.cases_on_cases(tau);
            for (std::size_t e = 0; e < row.size(); ++e, ++c) {
                report.spatial[static_cast<std::size_t>(tau - 1)][0][base + e] = make_stat(
                    values[base + e], blk.se[static_cast<std::size_t>(c)], blk.flagged);
            }
        }
    }

    // Death equation of county i: lagged cases (H row) then lagged deaths (A row).
    for (int i = 0; i < n; ++i) {
        const auto row = pat.row_cols(i);
        const std::size_t base = pat.row_begin(i);
        const Eigen::Index q = 2 * static_cast<Eigen::Index>(row.size()) * p;

        Eigen::MatrixXd design(n_weeks, q);
        for (long wi = 0; wi < n_weeks; ++wi) {
            const int t = weeks[static_cast<std::size_t>(wi)];
            Eigen::Index c = 0;
            for (int tau = 1; tau <= p; ++tau)
                for (int j : row) design(wi, c++) = panel.cases(t - tau, j);
            for (int tau = 1; tau <= p; ++tau)
                for (int j : row) design(wi, c++) = panel.deaths(t - tau, j);
        }
        const double rss = res_deaths.col(i).squaredNorm();
        const BlockResult blk =
            block_standard_errors(design.transpose() * design, rss, n_weeks);

        Eigen::Index c = 0;
        for (int tau = 1; tau <= p; ++tau) {
            auto values = params.deaths_on_cases(tau);
            for (std::size_t e = 0; e < row.size(); ++e, ++c) {
                report.spatial[static_cast<std::size_t>(tau - 1)][1][base + e] = make_stat(
                    values[base + e], blk.se[static_cast<std::size_t>(c)], blk.flagged);
            }
        }
        for (int tau = 1; tau <= p; ++tau) {
            auto values = params.deaths_on_deaths(tau);
            for (std::size_t e = 0; e < row.size(); ++e, ++c) {
                report.spatial[static_cast<std::size_t>(tau - 1)][2][base + e] = make_stat(
                    values[base + e], blk.se[static_cast<std::size_t>(c)], blk.flagged);
            }
        }
    }

    // Pooled covariate blocks: the scalar coefficients see every county-week.
    const Eigen::Index qc = static_cast<Eigen::Index>(K) * p + L;
    report.mobility_cases.assign(static_cast<std::size_t>(K),
                                 std::vector<CoefficientStat>(static_cast<std::size_t>(p)));
    report.mobility_deaths.assign(static_cast<std::size_t>(K),
                                  std::vector<CoefficientStat>(static_cast<std::size_t>(p)));
    report.demo_cases.resize(static_cast<std::size_t>(L));
    report.demo_deaths.resize(static_cast<std::size_t>(L));

    if (qc > 0) {
        const long n_obs = n_weeks * n;
        Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(qc, qc);
        Eigen::VectorXd x(qc);
        for (long wi = 0; wi < n_weeks; ++wi) {
            const int t = weeks[static_cast<std::size_t>(wi)];
            for (int i = 0; i < n; ++i) {
                Eigen::Index c = 0;
                for (int k = 0; k < K; ++k)
                    for (int tau = 1; tau <= p; ++tau)
                        x(c++) = panel.mobility[static_cast<std::size_t>(k)](t - tau, i);
                for (int l = 0; l < L; ++l) x(c++) = panel.demographics(i, l);
                gram.selfadjointView<Eigen::Lower>().rankUpdate(x);
            }
        }
        gram = gram.selfadjointView<Eigen::Lower>();

        const double rss_cases = res_cases.squaredNorm();
        const double rss_deaths = res_deaths.squaredNorm();
        const BlockResult blk_c = block_standard_errors(gram, rss_cases, n_obs);
        const BlockResult blk_d = block_standard_errors(gram, rss_deaths, n_obs);

        Eigen::Index c = 0;
        for (int k = 0; k < K; ++k) {
            for (int tau = 0; tau < p; ++tau, ++c) {
                report.mobility_cases[static_cast<std::size_t>(k)][static_cast<std::size_t>(tau)] =
                    make_stat(params.mobility_cases()(k, tau), blk_c.se[static_cast<std::size_t>(c)],
                              blk_c.flagged);
                report.mobility_deaths[static_cast<std::size_t>(k)][static_cast<std::size_t>(tau)] =
                    make_stat(params.mobility_deaths()(k, tau), blk_d.se[static_cast<std::size_t>(c)],
                              blk_d.flagged);
            }
        }
        for (int l = 0; l < L; ++l, ++c) {
            report.demo_cases[static_cast<std::size_t>(l)] = make_stat(
                params.demo_cases()(l), blk_c.se[static_cast<std::size_t>(c)], blk_c.flagged);
            report.demo_deaths[static_cast<std::size_t>(l)] = make_stat(
                params.demo_deaths()(l), blk_d.se[static_cast<std::size_t>(c)], blk_d.flagged);
        }
    }
    return report;
}

void write_predictions_csv(const PredictionSet& pred, const std::string& path) {
    assert_hygiene(pred);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path);
    out << "fips,week_start,target,predicted,observed,mode\n";
    const int T = static_cast<int>(pred.valid_week.size());
    const int n = static_cast<int>(pred.fips.size());
    for (int t = 0; t < T; ++t) {
        if (!pred.valid_week[static_cast<std::size_t>(t)]) continue;
        const std::string ws = format_date(pred.weeks.week_start(t));
        for (int i = 0; i < n; ++i) {
            for (Target target : {Target::cases, Target::deaths}) {
                out << pred.fips[static_cast<std::size_t>(i)] << ',' << ws << ','
                    << to_string(target) << ','
                    << fmt_double(pred.predicted(target, t, i, pred.clamp)) << ','
                    << fmt_double(pred.observed(target, t, i)) << ',' << to_string(pred.mode)
                    << '\n';
            }
        }
    }
}

void write_mae_csv(const MaeReport& report, const WeekRange& weeks, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path);
    out << "state,week_start,mae\n";
    for (const auto& [key, value] : report.per_state_week) {
        out << key.first << ',' << format_date(weeks.week_start(key.second)) << ','
            << fmt_double(value) << '\n';
    }
}

void write_coefficients_csv(const ModelParams& params, const CountyGraph& graph,
                            const SignificanceReport* sig, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path);
    out << "matrix,lag,row_fips,col_fips,estimate,t_value,p_value\n";
    const SparsityPattern& pat = params.pattern();
    for (int tau = 1; tau <= params.p(); ++tau) {
        const std::array<LagMatrix, 3> families = {LagMatrix::cases_on_cases,
                                                   LagMatrix::deaths_on_cases,
                                                   LagMatrix::deaths_on_deaths};
        for (std::size_t f = 0; f < families.size(); ++f) {
            std::span<const double> values = f == 0   ? params.cases_on_cases(tau)
                                             : f == 1 ? params.deaths_on_cases(tau)
                                                      : params.deaths_on_deaths(tau);
            for (std::size_t e = 0; e < pat.nnz(); ++e) {
                const int i = pat.entry_row(e);
                const int j = pat.col_index()[e];
                out << to_string(families[f]) << ',' << tau << ',' << graph.county(i).fips << ','
                    << graph.county(j).fips << ',' << fmt_double(values[e]);
                if (sig) {
                    const CoefficientStat& st = sig->spatial[static_cast<std::size_t>(tau - 1)][f][e];
                    out << ',' << (st.t_value ? fmt_double(*st.t_value) : "") << ','
                        << (st.p_value ? fmt_double(*st.p_value) : "");
                } else {
                    out << ",,";
                }
                out << '\n';
            }
        }
    }
}

void write_covariate_coefficients_csv(const ModelParams& params, const ObservationPanel& panel,
                                      const SignificanceReport* sig, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path);
    out << "coefficient,covariate,lag,estimate,t_value,p_value\n";
    auto emit = [&](const std::string& coef, const std::string& name, const std::string& lag,
                    double est, const CoefficientStat* st) {
        out << coef << ',' << name << ',' << lag << ',' << fmt_double(est);
        if (st && st->t_value) out << ',' << fmt_double(*st->t_value);
        else out << ',';
        if (st && st->p_value) out << ',' << fmt_double(*st->p_value);
        else out << ',';
        out << '\n';
    };
    for (int k = 0; k < params.n_mobility(); ++k) {
        const std::string& name = panel.mobility_names[static_cast<std::size_t>(k)];
        for (int tau = 1; tau <= params.p(); ++tau) {
            emit("mobility_cases", name, std::to_string(tau), params.mobility_cases()(k, tau - 1),
                 sig ? &sig->mobility_cases[static_cast<std::size_t>(k)][static_cast<std::size_t>(tau - 1)]
                     : nullptr);
            emit("mobility_deaths", name, std::to_string(tau), params.mobility_deaths()(k, tau - 1),
                 sig ? &sig->mobility_deaths[static_cast<std::size_t>(k)][static_cast<std::size_t>(tau - 1)]
                     : nullptr);
        }
    }
    for (int l = 0; l < params.n_demographics(); ++l) {
        const std::string& name = panel.demographic_names[static_cast<std::size_t>(l)];
        emit("demo_cases", name, "", params.demo_cases()(l),
             sig ? &sig->demo_cases[static_cast<std::size_t>(l)] : nullptr);
        emit("demo_deaths", name, "", params.demo_deaths()(l),
             sig ? &sig->demo_deaths[static_cast<std::size_t>(l)] : nullptr);
    }
}

} // namespace stva
