#pragma once

#include "stva/model.hpp"

#include <span>
#include <string>
#include <utility>
#include <vector>

namespace stva {

enum class AblationKind { full, no_spatial, no_census, no_mobility };

AblationKind parse_ablation(const std::string& s);
std::string to_string(AblationKind kind);

struct FitReport {
    std::vector<std::pair<int, double>> loss_trace; // (iteration, objective)
    double final_objective = 0.0; // loss + lambda1 * regularizer
    double final_loss = 0.0;      // data loss alone
    int iterations_used = 0;
    bool converged = false;
    bool diverged = false; // objective went non-finite; last finite iterate kept
    FitConfig config;
    double wall_time_s = 0.0;
    std::string diagnostic;
};

/// Full-batch gradient descent from a zero start. no_spatial restricts the
/// pattern to self-pairs; no_census and no_mobility freeze the corresponding
/// covariate coefficients at zero. On divergence the last finite iterate is
/// returned with converged=false and a diagnostic.
std::pair<ModelParams, FitReport>
fit(const ObservationPanel& panel, const CountyGraph& graph, const SpatialCovariance& cov,
    const FitConfig& cfg, AblationKind ablation = AblationKind::full,
    std::span<const int> train_weeks = {});

struct CvCell {
    double lambda1 = 0.0;
    double lambda2 = 0.0;
    double score = 0.0; // held-out loss summed over folds
};

struct CvResult {
    double best_lambda1 = 0.0;
    double best_lambda2 = 0.0;
    std::vector<CvCell> cells;
};

/// 5-fold blocked cross-validation over contiguous week blocks. Each cell is
/// fit on four blocks and scored by the loss on the held-out block (true
/// lagged observations as inputs). Ties prefer larger lambda1, then larger
/// lambda2. Requires at least 5*(p+1) usable weeks.
CvResult cross_validate(const ObservationPanel& panel, const CountyGraph& graph,
                        const SpatialCovariance& cov, const FitConfig& cfg,
                        std::span<const double> lambda1_grid,
                        std::span<const double> lambda2_grid);

/// Thread cap for embarrassingly parallel stages (CV cells, rolling refits):
/// the STVA_THREADS environment variable, else 1.
int thread_budget();

} // namespace stva
