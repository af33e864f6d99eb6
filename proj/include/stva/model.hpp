#pragma once

#include "stva/geo.hpp"
#include "stva/panel.hpp"

#include <Eigen/Dense>

#include <memory>
#include <span>
#include <string>
#include <vector>

namespace stva {

struct FitConfig {
    int p = 2;             // memory depth (lagged weeks)
    double delta = 0.9;    // death-loss weight
    double eta = 1e3;      // spatial covariance parameter
    double lambda1 = 1e2;  // regularization weight
    double lambda2 = 1e-1; // l1 ratio within the elastic net
    double step_size = 1e-6;
    int max_iters = 2000;
    double tol = 1e-8;     // relative objective-change stop
    bool clamp_output = true;
    bool backtracking = false; // halve the step until an Armijo decrease
    bool proximal = false;     // soft-threshold step for the l1 part

    void validate() const; // throws ValidationError on out-of-range values
};

/// The three lag-matrix families on a shared sparsity pattern plus the scalar
/// covariate coefficients. Off-pattern entries do not exist: they are never
/// stored and never updated. Block layout of the implied 2Nx2N lag matrix is
/// [[cases_on_cases, 0], [deaths_on_cases, deaths_on_deaths]].
class ModelParams {
public:
    ModelParams() = default;
    ModelParams(std::shared_ptr<const SparsityPattern> pattern, int p, int K, int L);

    const SparsityPattern& pattern() const { return *pattern_; }
    std::shared_ptr<const SparsityPattern> pattern_ptr() const { return pattern_; }
    int p() const { return p_; }
    int n_mobility() const { return K_; }
    int n_demographics() const { return L_; }

    // Pattern-aligned values for lag tau (1-based), one value per entry.
    std::span<double> cases_on_cases(int tau) { return lag_span(b_, tau); }
    std::span<double> deaths_on_cases(int tau) { return lag_span(h_, tau); }
    std::span<double> deaths_on_deaths(int tau) { return lag_span(a_, tau); }
    std::span<const double> cases_on_cases(int tau) const { return lag_span(b_, tau); }
    std::span<const double> deaths_on_cases(int tau) const { return lag_span(h_, tau); }
    std::span<const double> deaths_on_deaths(int tau) const { return lag_span(a_, tau); }

    // Covariate coefficients: mobility is (category, lag), demographics per factor.
    Eigen::MatrixXd& mobility_cases() { return mu_; }
    Eigen::MatrixXd& mobility_deaths() { return nu_; }
    Eigen::VectorXd& demo_cases() { return upsilon_; }
    Eigen::VectorXd& demo_deaths() { return zeta_; }
    const Eigen::MatrixXd& mobility_cases() const { return mu_; }
    const Eigen::MatrixXd& mobility_deaths() const { return nu_; }
    const Eigen::VectorXd& demo_cases() const { return upsilon_; }
    const Eigen::VectorXd& demo_deaths() const { return zeta_; }

    void set_zero();

    // Flat view over every coefficient in a fixed documented order:
    // for tau = 1..p: cases_on_cases, deaths_on_cases, deaths_on_deaths entries;
    // then mobility_cases (k major, tau minor), mobility_deaths, demo_cases,
    // demo_deaths. Used by the solver, snapshots and finite-difference tests.
    std::size_t coefficient_count() const;
    double get_flat(std::size_t idx) const;
    void set_flat(std::size_t idx, double v);
    void axpy(double alpha, const ModelParams& other); // this += alpha * other

    bool same_shape(const ModelParams& other) const;

private:
    std::span<double> lag_span(std::vector<double>& v, int tau);
    std::span<const double> lag_span(const std::vector<double>& v, int tau) const;

    std::shared_ptr<const SparsityPattern> pattern_;
    int p_ = 0, K_ = 0, L_ = 0;
    // p * nnz, lag-major
    std::vector<double> b_, h_, a_;
    Eigen::MatrixXd mu_, nu_;      // K x p
    Eigen::VectorXd upsilon_, zeta_; // L
};

/// Conditional-mean prediction for week t (0-based, t >= p): length-2N vector,
/// cases then deaths. Uses true lagged observations from the panel.
Eigen::VectorXd forward(const ModelParams& params, const ObservationPanel& panel, int t);

/// Weighted whitened squared-error over the given weeks:
///   delta * sum_t e_d' Sigma^-1 e_d + (1-delta) * sum_t e_c' Sigma^-1 e_c.
/// Sigma^-1 products go through the stored factorization.
double loss(const ModelParams& params, const ObservationPanel& panel,
            const SpatialCovariance& cov, const FitConfig& cfg, std::span<const int> weeks);

/// Elastic-net penalty over pattern entries of all three families and lags:
///   sum lambda2*|v| + (1-lambda2)*v^2.  Covariate coefficients are exempt.
double regularizer(const ModelParams& params, double lambda2);

/// Analytic gradient of loss + lambda1 * regularizer, with sign() as the l1
/// subgradient (0 at 0). Same shape as the parameters; entries exist only on
/// the pattern and covariate slots.
ModelParams gradient(const ModelParams& params, const ObservationPanel& panel,
                     const SpatialCovariance& cov, const FitConfig& cfg,
                     std::span<const int> weeks);

/// All weeks with a full p-week history: p..T-1 (0-based).
std::vector<int> usable_weeks(const ObservationPanel& panel, int p);

/// Parameter snapshot: a JSON header line (N, p, K, L, pattern hash, config)
/// followed by raw little-endian doubles in flat order. Round-trips bit-exactly.
void save_params(const ModelParams& params, const FitConfig& cfg, const std::string& path);
std::pair<ModelParams, FitConfig> load_params(const std::string& path);

} // namespace stva
