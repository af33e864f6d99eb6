#include "stva/synth.hpp"

#include "stva/errors.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

namespace stva {

void SynthSpec::validate() const {
    if (n_counties < 1) throw ValidationError("synth: need at least one county");
    if (edge_probability < 0.0 || edge_probability > 1.0)
        throw ValidationError("synth: edge_probability in [0,1]");
    if (n_hubs < 0 || n_hubs > n_counties) throw ValidationError("synth: n_hubs out of range");
    if (p < 1) throw ValidationError("synth: p must be >= 1");
    if (n_weeks <= p) throw ValidationError("synth: need more weeks than lags");
    if (n_mobility < 0 || n_demographics < 0) throw ValidationError("synth: negative covariate count");
    if (coefficient_scale < 0.0 || coefficient_scale >= 1.0)
        throw ValidationError("synth: coefficient_scale must be in [0,1) (target spectral radius)");
    if (noise_scale < 0.0) throw ValidationError("synth: noise_scale must be >= 0");
    if (eta <= 0.0) throw ValidationError("synth: eta must be positive");
}

namespace {

// Companion-matrix spectral radius of the stacked lag matrices.
double lag_stack_spectral_radius(const ModelParams& params) {
    const int n = params.pattern().n();
    const int p = params.p();
    const int dim = 2 * n * p;
    Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(dim, dim);
    for (int tau = 1; tau <= p; ++tau) {
        Eigen::MatrixXd lam = Eigen::MatrixXd::Zero(2 * n, 2 * n);
        const auto& pat = params.pattern();
        const auto& cols = pat.col_index();
        const auto& rptr = pat.row_ptr();
        auto b = params.cases_on_cases(tau);
        auto h = params.deaths_on_cases(tau);
        auto a = params.deaths_on_deaths(tau);
        for (int i = 0; i < n; ++i) {
            for (std::size_t e = rptr[static_cast<std::size_t>(i)];
                 e < rptr[static_cast<std::size_t>(i) + 1]; ++e) {
                const int j = cols[e];
                lam(i, j) = b[e];
                lam(n + i, j) = h[e];
                lam(n + i, n + j) = a[e];
            }
        }
        companion.block(0, 2 * n * (tau - 1), 2 * n, 2 * n) = lam;
    }
    for (int tau = 1; tau < p; ++tau) {
        companion.block(2 * n * tau, 2 * n * (tau - 1), 2 * n, 2 * n) =
            Eigen::MatrixXd::Identity(2 * n, 2 * n);
    }
    return companion.eigenvalues().cwiseAbs().maxCoeff();
}

void scale_lag_stack(ModelParams& params, double s) {
    for (int tau = 1; tau <= params.p(); ++tau) {
        const double f = std::pow(s, tau);
        for (std::span<double> vals : {params.cases_on_cases(tau), params.deaths_on_cases(tau),
                                       params.deaths_on_deaths(tau)}) {
            for (double& v : vals) v *= f;
        }
    }
}

} // namespace

SynthInstance generate(const SynthSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    // Counties on a CONUS-like box; two-letter synthetic states of up to
    // five counties each so per-state reports have something to group.
    std::vector<County> counties;
    counties.reserve(static_cast<std::size_t>(spec.n_counties));
    for (int i = 0; i < spec.n_counties; ++i) {
        County c;
        char fips[16];
        std::snprintf(fips, sizeof(fips), "%05d", i + 1);
        c.fips = fips;
        c.name = "Synth County " + std::to_string(i + 1);
        const int state_idx = i / 5;
        c.state = {static_cast<char>('A' + state_idx / 26), static_cast<char>('A' + state_idx % 26)};
        c.lat = 30.0 + 18.0 * uni(rng);
        c.lon = -120.0 + 45.0 * uni(rng);
        counties.push_back(std::move(c));
    }

    std::vector<int> order(static_cast<std::size_t>(spec.n_counties));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (int h = 0; h < spec.n_hubs; ++h)
        counties[static_cast<std::size_t>(order[static_cast<std::size_t>(h)])].is_hub = true;

    std::vector<std::pair<std::string, std::string>> edges;
    for (int i = 0; i < spec.n_counties; ++i) {
        for (int j = i + 1; j < spec.n_counties; ++j) {
            if (uni(rng) < spec.edge_probability)
                edges.emplace_back(counties[static_cast<std::size_t>(i)].fips,
                                   counties[static_cast<std::size_t>(j)].fips);
        }
    }

    SynthInstance inst;
    inst.graph = CountyGraph::build(std::move(counties), edges);
    inst.cov = build_covariance(inst.graph, spec.eta, spec.distance_mode);

    auto pattern = std::make_shared<SparsityPattern>(build_pattern(inst.graph));
    inst.params = ModelParams(pattern, spec.p, spec.n_mobility, spec.n_demographics);

    for (int tau = 1; tau <= spec.p; ++tau) {
        for (std::span<double> vals :
             {inst.params.cases_on_cases(tau), inst.params.deaths_on_cases(tau),
              inst.params.deaths_on_deaths(tau)}) {
            for (double& v : vals) v = gauss(rng);
        }
    }
    for (int k = 0; k < spec.n_mobility; ++k) {
        for (int tau = 0; tau < spec.p; ++tau) {
            inst.params.mobility_cases()(k, tau) = spec.covariate_scale * gauss(rng);
            inst.params.mobility_deaths()(k, tau) = spec.covariate_scale * gauss(rng);
        }
    }
    for (int l = 0; l < spec.n_demographics; ++l) {
        inst.params.demo_cases()(l) = spec.covariate_scale * gauss(rng);
        inst.params.demo_deaths()(l) = spec.covariate_scale * gauss(rng);
    }

    // Rescale the lag stack until its companion spectral radius hits the
    // target; scaling lag tau by s^tau scales every root by s.
    if (spec.coefficient_scale == 0.0) {
        scale_lag_stack(inst.params, 0.0);
    } else {
        double rho = lag_stack_spectral_radius(inst.params);
        int attempts = 0;
        while (rho > spec.coefficient_scale * (1.0 + 1e-9)) {
            if (++attempts > 10) throw NumericalError("synth: spectral rescaling did not settle");
            scale_lag_stack(inst.params, spec.coefficient_scale / rho);
            rho = lag_stack_spectral_radius(inst.params);
        }
    }

    const int n = spec.n_counties;
    const int T = spec.n_weeks;
    ObservationPanel& panel = inst.panel;
    panel.weeks.n_weeks = T;
    panel.fips.reserve(static_cast<std::size_t>(n));
    for (const County& c : inst.graph.counties()) panel.fips.push_back(c.fips);
    panel.cases = Eigen::MatrixXd::Zero(T, n);
    panel.deaths = Eigen::MatrixXd::Zero(T, n);
    for (int k = 0; k < spec.n_mobility; ++k) {
        Eigen::MatrixXd m(T, n);
        for (int t = 0; t < T; ++t)
            for (int i = 0; i < n; ++i) m(t, i) = gauss(rng);
        panel.mobility.push_back(std::move(m));
        panel.mobility_imputed.emplace_back(
            Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>::Zero(T, n));
        panel.mobility_names.push_back("mobility_" + std::to_string(k + 1));
    }
    panel.demographics.resize(n, spec.n_demographics);
    for (int l = 0; l < spec.n_demographics; ++l) {
        for (int i = 0; i < n; ++i) panel.demographics(i, l) = gauss(rng);
        panel.demographic_names.push_back("factor_" + std::to_string(l + 1));
    }
    // Covariates are drawn on the standardized scale already.
    panel.standardized = true;
    panel.stats.mobility_mean.assign(static_cast<std::size_t>(spec.n_mobility), 0.0);
    panel.stats.mobility_std.assign(static_cast<std::size_t>(spec.n_mobility), 1.0);
    panel.stats.mobility_degenerate.assign(static_cast<std::size_t>(spec.n_mobility), 0);
    panel.stats.demo_mean.assign(static_cast<std::size_t>(spec.n_demographics), 0.0);
    panel.stats.demo_std.assign(static_cast<std::size_t>(spec.n_demographics), 1.0);
    panel.stats.demo_degenerate.assign(static_cast<std::size_t>(spec.n_demographics), 0);

    std::uniform_real_distribution<double> init(0.0, 10.0);
    for (int t = 0; t < spec.p; ++t) {
        for (int i = 0; i < n; ++i) {
            panel.cases(t, i) = init(rng);
            panel.deaths(t, i) = init(rng);
        }
    }

    const Eigen::MatrixXd noise_chol = inst.cov.chol.matrixL();
    for (int t = spec.p; t < T; ++t) {
        Eigen::VectorXd x = forward(inst.params, panel, t);
        if (spec.noise_scale > 0.0) {
            Eigen::VectorXd xi_c(n), xi_d(n);
            for (int i = 0; i < n; ++i) xi_c(i) = gauss(rng);
            for (int i = 0; i < n; ++i) xi_d(i) = gauss(rng);
            x.head(n) += spec.noise_scale * (noise_chol * xi_c);
            x.tail(n) += spec.noise_scale * (noise_chol * xi_d);
        }
        panel.cases.row(t) = x.head(n).transpose();
        panel.deaths.row(t) = x.tail(n).transpose();
    }
    return inst;
}

double dense_oracle_loss(const ModelParams& params, const ObservationPanel& panel,
                         const SpatialCovariance& cov, const FitConfig& cfg,
                         std::span<const int> weeks) {
    const int n = panel.n_counties();
    if (n > 50) throw ValidationError("dense oracle is for small instances only (N <= 50)");
    if (params.pattern().n() != n || params.n_mobility() != panel.n_mobility() ||
        params.n_demographics() != panel.n_demographics())
        throw ValidationError("dense oracle: model and panel disagree on N, K or L");
    const int p = params.p();

    std::vector<int> all;
    if (weeks.empty()) {
        all = usable_weeks(panel, p);
        weeks = all;
    }

    // Dense reconstruction of the stacked lag matrices.
    std::vector<Eigen::MatrixXd> lambdas;
    const auto& pat = params.pattern();
    for (int tau = 1; tau <= p; ++tau) {
        Eigen::MatrixXd lam = Eigen::MatrixXd::Zero(2 * n, 2 * n);
        auto b = params.cases_on_cases(tau);
        auto h = params.deaths_on_cases(tau);
        auto a = params.deaths_on_deaths(tau);
        for (std::size_t e = 0; e < pat.nnz(); ++e) {
            const int i = pat.entry_row(e);
            const int j = pat.col_index()[e];
            lam(i, j) = b[e];
            lam(n + i, j) = h[e];
            lam(n + i, n + j) = a[e];
        }
        lambdas.push_back(std::move(lam));
    }

    const Eigen::MatrixXd sigma_inv = cov.sigma.inverse();

    double total = 0.0;
    for (int t : weeks) {
        if (t < p) throw ValidationError("dense oracle: week without full history");
        Eigen::VectorXd x(2 * n);
        x.head(n) = panel.cases.row(t).transpose();
        x.tail(n) = panel.deaths.row(t).transpose();

        Eigen::VectorXd xhat = Eigen::VectorXd::Zero(2 * n);
        for (int tau = 1; tau <= p; ++tau) {
            Eigen::VectorXd lag(2 * n);
            lag.head(n) = panel.cases.row(t - tau).transpose();
            lag.tail(n) = panel.deaths.row(t - tau).transpose();
            xhat += lambdas[static_cast<std::size_t>(tau - 1)] * lag;
        }
        for (int k = 0; k < params.n_mobility(); ++k) {
            for (int tau = 1; tau <= p; ++tau) {
                for (int i = 0; i < n; ++i) {
                    const double m = panel.mobility[static_cast<std::size_t>(k)](t - tau, i);
                    xhat(i) += params.mobility_cases()(k, tau - 1) * m;
                    xhat(n + i) += params.mobility_deaths()(k, tau - 1) * m;
                }
            }
        }
        for (int l = 0; l < params.n_demographics(); ++l) {
            for (int i = 0; i < n; ++i) {
                const double z = panel.demographics(i, l);
                xhat(i) += params.demo_cases()(l) * z;
                xhat(n + i) += params.demo_deaths()(l) * z;
            }
        }

        const Eigen::VectorXd err = x - xhat;
        const Eigen::VectorXd ec = err.head(n);
        const Eigen::VectorXd ed = err.tail(n);
        total += cfg.delta * ed.dot(sigma_inv * ed);
        total += (1.0 - cfg.delta) * ec.dot(sigma_inv * ec);
    }
    return total;
}

RecoveryReport recovery_experiment(const SynthSpec& spec, const FitConfig& cfg) {
    if (cfg.p != spec.p)
        throw ValidationError("recovery: cfg.p must match the generator's p");
    SynthInstance inst = generate(spec);

    auto [fitted, report] = fit(inst.panel, inst.graph, inst.cov, cfg);

    RecoveryReport rec;
    rec.fit_report = std::move(report);

    double sq = 0.0;
    std::size_t count = 0;
    for (int tau = 1; tau <= spec.p; ++tau) {
        const std::array<std::pair<std::span<const double>, std::span<const double>>, 3> pairs = {
            std::make_pair(fitted.cases_on_cases(tau), inst.params.cases_on_cases(tau)),
            std::make_pair(fitted.deaths_on_cases(tau), inst.params.deaths_on_cases(tau)),
            std::make_pair(fitted.deaths_on_deaths(tau), inst.params.deaths_on_deaths(tau)),
        };
        for (const auto& [fit_vals, true_vals] : pairs) {
            for (std::size_t e = 0; e < fit_vals.size(); ++e) {
                const double d = fit_vals[e] - true_vals[e];
                sq += d * d;
                ++count;
            }
        }
    }
    rec.coefficient_rmse = count ? std::sqrt(sq / static_cast<double>(count)) : 0.0;

    double csq = 0.0;
    std::size_t ccount = 0;
    auto add = [&](double a, double b) {
        const double d = a - b;
        csq += d * d;
        ++ccount;
    };
    for (int k = 0; k < spec.n_mobility; ++k) {
        for (int tau = 0; tau < spec.p; ++tau) {
            add(fitted.mobility_cases()(k, tau), inst.params.mobility_cases()(k, tau));
            add(fitted.mobility_deaths()(k, tau), inst.params.mobility_deaths()(k, tau));
        }
    }
    for (int l = 0; l < spec.n_demographics; ++l) {
        add(fitted.demo_cases()(l), inst.params.demo_cases()(l));
        add(fitted.demo_deaths()(l), inst.params.demo_deaths()(l));
    }
    rec.covariate_rmse = ccount ? std::sqrt(csq / static_cast<double>(ccount)) : 0.0;

    const int n = inst.panel.n_counties();
    double abs_truth = 0.0, abs_oracle = 0.0;
    long cells = 0;
    for (int t : usable_weeks(inst.panel, spec.p)) {
        const Eigen::VectorXd pred = forward(fitted, inst.panel, t);
        const Eigen::VectorXd truth = inst.panel.observation(t);
        const Eigen::VectorXd oracle = forward(inst.params, inst.panel, t);
        abs_truth += (truth - pred).cwiseAbs().sum();
        abs_oracle += (oracle - pred).cwiseAbs().sum();
        cells += 2 * n;
    }
    rec.in_sample_mae = abs_truth / static_cast<double>(cells);
    rec.one_week_ahead_mae = abs_oracle / static_cast<double>(cells);
    return rec;
}

} // namespace stva
