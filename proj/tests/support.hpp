#pragma once

#include "stva/synth.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

namespace stva::test {

/// Unique scratch directory, removed on destruction.
struct TempDir {
    std::filesystem::path path;

    TempDir() {
        static std::atomic<int> counter{0};
        const auto base = std::filesystem::temp_directory_path();
        path = base / ("stva_test_" + std::to_string(::getpid()) + "_" +
                       std::to_string(counter.fetch_add(1)));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    out << content;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Small graph with index-based edges/hubs and FIPS 00001, 00002, ...
inline CountyGraph make_graph(int n, const std::vector<std::pair<int, int>>& edges = {},
                              const std::vector<int>& hubs = {}) {
    std::vector<County> counties;
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (int i = 0; i < n; ++i) {
        County c;
        char fips[16];
        std::snprintf(fips, sizeof(fips), "%05d", i + 1);
        c.fips = fips;
        c.name = "County " + std::to_string(i + 1);
        c.state = (i % 2 == 0) ? "GA" : "TX";
        c.lat = 30.0 + 15.0 * uni(rng);
        c.lon = -110.0 + 30.0 * uni(rng);
        counties.push_back(std::move(c));
    }
    for (int h : hubs) counties[static_cast<std::size_t>(h)].is_hub = true;
    std::vector<std::pair<std::string, std::string>> fips_edges;
    for (const auto& [a, b] : edges)
        fips_edges.emplace_back(counties[static_cast<std::size_t>(a)].fips,
                                counties[static_cast<std::size_t>(b)].fips);
    return CountyGraph::build(std::move(counties), fips_edges);
}

/// Bare panel with given dimensions, zero counts, standardized covariates.
inline ObservationPanel make_panel(int n, int T, int K = 0, int L = 0) {
    ObservationPanel panel;
    panel.weeks.n_weeks = T;
    for (int i = 0; i < n; ++i) {
        char fips[16];
        std::snprintf(fips, sizeof(fips), "%05d", i + 1);
        panel.fips.emplace_back(fips);
    }
    panel.cases = Eigen::MatrixXd::Zero(T, n);
    panel.deaths = Eigen::MatrixXd::Zero(T, n);
    for (int k = 0; k < K; ++k) {
        panel.mobility.push_back(Eigen::MatrixXd::Zero(T, n));
        panel.mobility_imputed.emplace_back(
            Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>::Zero(T, n));
        panel.mobility_names.push_back("m" + std::to_string(k + 1));
    }
    panel.demographics = Eigen::MatrixXd::Zero(n, L);
    for (int l = 0; l < L; ++l) panel.demographic_names.push_back("z" + std::to_string(l + 1));
    panel.standardized = true;
    panel.stats.mobility_mean.assign(static_cast<std::size_t>(K), 0.0);
    panel.stats.mobility_std.assign(static_cast<std::size_t>(K), 1.0);
    panel.stats.mobility_degenerate.assign(static_cast<std::size_t>(K), 0);
    panel.stats.demo_mean.assign(static_cast<std::size_t>(L), 0.0);
    panel.stats.demo_std.assign(static_cast<std::size_t>(L), 1.0);
    panel.stats.demo_degenerate.assign(static_cast<std::size_t>(L), 0);
    return panel;
}

/// Central finite difference of loss + lambda1 * regularizer at coefficient idx.
inline double fd_gradient(ModelParams params, const ObservationPanel& panel,
                          const SpatialCovariance& cov, const FitConfig& cfg,
                          std::span<const int> weeks, std::size_t idx, double step = 1e-6) {
    auto objective = [&](const ModelParams& p) {
        return loss(p, panel, cov, cfg, weeks) + cfg.lambda1 * regularizer(p, cfg.lambda2);
    };
    const double saved = params.get_flat(idx);
    params.set_flat(idx, saved + step);
    const double hi = objective(params);
    params.set_flat(idx, saved - step);
    const double lo = objective(params);
    params.set_flat(idx, saved);
    return (hi - lo) / (2.0 * step);
}

} // namespace stva::test
