#pragma once

#include "stva/dates.hpp"
#include "stva/geo.hpp"

#include <Eigen/Dense>

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace stva {

/// Contiguous Sunday-start weeks. Week t covers [start + 7t, start + 7t + 6].
struct WeekRange {
    Date start{std::chrono::year{2020}, std::chrono::month{3}, std::chrono::day{15}};
    int n_weeks = 49;

    Date week_start(int t) const { return add_days(start, 7L * t); }
    /// Week index containing `d`, or nullopt outside the window.
    std::optional<int> week_of(const Date& d) const;
};

inline constexpr std::array<const char*, 6> kMobilityCategories = {
    "retail_and_recreation", "grocery_and_pharmacy", "parks",
    "transit_stations",      "workplaces",           "residential",
};

struct StandardizationStats {
    std::vector<double> mobility_mean, mobility_std; // per category
    std::vector<double> demo_mean, demo_std;         // per factor
    std::vector<std::uint8_t> mobility_degenerate;   // zero-variance flags
    std::vector<std::uint8_t> demo_degenerate;
};

/// The aligned observation panel. Row index is the week, column index is the
/// county position in the CountyGraph order. Counts stay on their raw scale;
/// only covariates are standardized.
struct ObservationPanel {
    std::vector<std::string> fips; // county order, mirrors the graph
    WeekRange weeks;

    Eigen::MatrixXd cases;  // T x N
    Eigen::MatrixXd deaths; // T x N

    std::vector<Eigen::MatrixXd> mobility;    // K matrices, each T x N
    std::vector<std::string> mobility_names;  // K
    Eigen::MatrixXd demographics;             // N x L
    std::vector<std::string> demographic_names;

    std::vector<Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>> mobility_imputed; // K, T x N

    StandardizationStats stats;
    bool standardized = false;

    int n_counties() const { return static_cast<int>(fips.size()); }
    int n_weeks() const { return weeks.n_weeks; }
    int n_mobility() const { return static_cast<int>(mobility.size()); }
    int n_demographics() const { return static_cast<int>(demographics.cols()); }

    /// Stacked observation for week t: cases then deaths, length 2N.
    Eigen::VectorXd observation(int t) const;
};

/// Tallies of everything the loaders had to skip, clamp or fill in.
struct IngestReport {
    long unknown_fips_rows = 0;
    long malformed_rows = 0;
    long duplicate_rows = 0;
    long negative_diffs_clamped = 0;
    std::vector<std::string> zero_filled_counties; // in graph but absent from epi csv
    long imputed_mobility_cells = 0;
    std::vector<std::string> degenerate_covariates;
    bool covariance_jitter = false;

    std::string summary() const;
};

std::pair<Eigen::MatrixXd, Eigen::MatrixXd>
load_epi(const std::string& csv_path, const CountyGraph& graph, const WeekRange& weeks,
         IngestReport& report);

std::vector<Eigen::MatrixXd>
load_mobility(const std::string& csv_path, const CountyGraph& graph, const WeekRange& weeks,
              std::vector<Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>>& imputed,
              IngestReport& report);

Eigen::MatrixXd load_census(const std::string& csv_path, const CountyGraph& graph);

/// Z-scores each mobility category over all (county, week) cells jointly and
/// each demographic factor over counties; counts are untouched. Zero-variance
/// covariates become identically 0 and are flagged. Safe to call repeatedly.
void standardize(ObservationPanel& panel);

/// Full ingest: the three loaders, alignment on the graph order, then
/// standardization.
ObservationPanel assemble_panel(const std::string& epi_csv, const std::string& mobility_csv,
                                const std::string& census_csv, const CountyGraph& graph,
                                const WeekRange& weeks, IngestReport& report);

/// Panel bundle I/O. `dir` receives manifest.json plus one CSV per matrix;
/// values are written with round-trip precision so save/load is lossless and
/// byte-deterministic.
void save_panel(const ObservationPanel& panel, const std::string& dir);
ObservationPanel load_panel(const std::string& dir);

} // namespace stva
