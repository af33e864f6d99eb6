#pragma once

#include "stva/solver.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace stva {

enum class Target { cases, deaths };

Target parse_target(const std::string& s);
std::string to_string(Target t);

/// Predictions aligned with observations. Weeks without a prediction (the
/// first p weeks, or rolling weeks before the start) have valid_week unset.
/// trained_weeks_end[t] records the exclusive end of the training window that
/// produced week t's prediction; for one-week-ahead runs it never exceeds t.
struct PredictionSet {
    enum class Mode { in_sample, one_week_ahead };
    Mode mode = Mode::in_sample;

    std::vector<std::string> fips;
    std::vector<std::string> states;
    WeekRange weeks;

    Eigen::MatrixXd pred_cases;  // T x N, raw model output
    Eigen::MatrixXd pred_deaths; // T x N
    Eigen::MatrixXd true_cases;  // T x N
    Eigen::MatrixXd true_deaths; // T x N

    std::vector<std::uint8_t> valid_week; // T
    std::vector<int> trained_weeks_end;   // T
    bool clamp = true;                    // from config; applied on read-out

    std::vector<std::string> failed_weeks; // rolling refits that did not fit

    double predicted(Target t, int week, int county, bool clamped) const;
    double observed(Target t, int week, int county) const;
};

std::string to_string(PredictionSet::Mode m);

/// Week-range and state filters for MAE scopes; empty means everything.
struct ScopeFilter {
    std::optional<Date> week_from; // first week whose start is >= this date
    std::optional<Date> week_to;   // last week whose start is <= this date
    std::vector<std::string> states;

    bool admits_state(const std::string& st) const;
};

struct MaeReport {
    std::map<std::pair<std::string, int>, double> per_state_week;
    std::map<std::string, double> per_state;
    std::map<int, double> per_week;
    double overall = 0.0;
    Target target = Target::deaths;
    bool clamped = true;
    long cells = 0;
};

/// In-sample predictions for every week with full history, from a model
/// fitted on the whole panel.
PredictionSet in_sample(const ModelParams& params, const ObservationPanel& panel,
                        const CountyGraph& graph, const FitConfig& cfg);

struct RollingOptions {
    int start_week = -1;         // 0-based target week; -1 = first admissible
    int min_train_weeks = 10;    // regression rows required before a target
    AblationKind ablation = AblationKind::full;
};

/// One-week-ahead predictions: for each target week, refit from scratch on
/// strictly earlier weeks, then predict with true lagged inputs. Failed weeks
/// are recorded and skipped. Per-week fit reports ride along.
std::pair<PredictionSet, std::vector<FitReport>>
rolling_predict(const ObservationPanel& panel, const CountyGraph& graph,
                const SpatialCovariance& cov, const FitConfig& cfg,
                const RollingOptions& opts);

/// Mean absolute error over the (county, week) cells in scope. Clamping
/// follows the prediction set unless overridden.
MaeReport mae(const PredictionSet& pred, Target target, const ScopeFilter& scope = {},
              std::optional<bool> clamp_override = std::nullopt);

struct AblationRow {
    AblationKind kind = AblationKind::full;
    double mae = 0.0;
    std::optional<double> pct_increase; // (mae - mae_full) / mae * 100
};

/// Comparison rows with the percentage-increase column; the full row carries
/// no percentage. Throws if the full-model report is missing.
std::vector<AblationRow> ablation_table(const std::map<AblationKind, MaeReport>& reports);

/// External state-level forecasts (`state,week,predicted_deaths`) scored
/// against observed state totals. Rows outside the panel window or naming
/// unknown states are skipped; nothing is refit or reimplemented.
MaeReport benchmark_mae(const ObservationPanel& panel, const CountyGraph& graph,
                        const std::string& csv_path);

enum class LagMatrix { cases_on_cases, deaths_on_cases, deaths_on_deaths };

LagMatrix parse_lag_matrix(const std::string& s); // "B" | "H" | "A"
std::string to_string(LagMatrix m);

struct ExportRow {
    std::string row_fips;
    int row_index = 0;
    double value = 0.0;
};

/// The focus county's column of one lag matrix: a row for every county i with
/// (i, focus) on the pattern; off-pattern counties are omitted.
std::vector<ExportRow> coefficient_export(const ModelParams& params, const CountyGraph& graph,
                                          int focus, LagMatrix matrix, int tau);

void write_export_csv(const std::vector<ExportRow>& rows, const CountyGraph& graph, int focus,
                      LagMatrix matrix, int tau, const std::string& path);
void write_export_geojson(const std::vector<ExportRow>& rows, const CountyGraph& graph,
                          const std::string& path);

struct CoefficientStat {
    double estimate = 0.0;
    std::optional<double> se;
    std::optional<double> t_value;
    std::optional<double> p_value;
    bool flagged = false; // singular or under-determined block
};

/// Wald statistics from the unpenalized whitened least-squares approximation.
/// The normal matrix is approximated block-by-block: one block per county row
/// and equation for the spatial coefficients, one pooled block per equation
/// for the covariate scalars. Cross-county residual correlation is ignored
/// inside blocks (the exponential covariance has a constant diagonal, so
/// within-block whitening is a uniform rescale that cancels in t-values).
struct SignificanceReport {
    // spatial[tau-1][family][entry]; family indexed by LagMatrix order B, H, A
    std::vector<std::array<std::vector<CoefficientStat>, 3>> spatial;
    std::vector<std::vector<CoefficientStat>> mobility_cases;  // K x p
    std::vector<std::vector<CoefficientStat>> mobility_deaths; // K x p
    std::vector<CoefficientStat> demo_cases;  // L
    std::vector<CoefficientStat> demo_deaths; // L
};

SignificanceReport significance(const ModelParams& params, const ObservationPanel& panel,
                                const SpatialCovariance& cov, const FitConfig& cfg);

void write_predictions_csv(const PredictionSet& pred, const std::string& path);
void write_mae_csv(const MaeReport& report, const WeekRange& weeks, const std::string& path);
void write_coefficients_csv(const ModelParams& params, const CountyGraph& graph,
                            const SignificanceReport* sig, const std::string& path);
void write_covariate_coefficients_csv(const ModelParams& params, const ObservationPanel& panel,
                                      const SignificanceReport* sig, const std::string& path);

} // namespace stva
