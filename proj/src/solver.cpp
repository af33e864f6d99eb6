#include "stva/solver.hpp"

#include "stva/errors.hpp"

#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <thread>

namespace stva {

AblationKind parse_ablation(const std::string& s) {
    if (s == "full") return AblationKind::full;
    if (s == "no_spatial") return AblationKind::no_spatial;
    if (s == "no_census") return AblationKind::no_census;
    if (s == "no_mobility") return AblationKind::no_mobility;
    throw ValidationError("unknown ablation kind: " + s);
}

std::string to_string(AblationKind kind) {
    switch (kind) {
        case AblationKind::full: return "full";
        case AblationKind::no_spatial: return "no_spatial";
        case AblationKind::no_census: return "no_census";
        case AblationKind::no_mobility: return "no_mobility";
    }
    return "?";
}

int thread_budget() {
    const char* env = std::getenv("STVA_THREADS");
    if (!env) return 1;
    int v = std::atoi(env);
    return v >= 1 ? v : 1;
}

namespace {

void parallel_for(int n_tasks, int threads, const std::function<void(int)>& task) {
    threads = std::min(threads, n_tasks);
    if (threads <= 1) {
        for (int i = 0; i < n_tasks; ++i) task(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int w = 0; w < threads; ++w) {
        pool.emplace_back([&] {
            for (int i = next.fetch_add(1); i < n_tasks; i = next.fetch_add(1)) task(i);
        });
    }
    for (auto& t : pool) t.join();
}

void soft_threshold_spatial(ModelParams& params, double threshold) {
    for (int tau = 1; tau <= params.p(); ++tau) {
        for (std::span<double> vals : {params.cases_on_cases(tau), params.deaths_on_cases(tau),
                                       params.deaths_on_deaths(tau)}) {
            for (double& v : vals) {
                if (v > threshold) v -= threshold;
                else if (v < -threshold) v += threshold;
                else v = 0.0;
            }
        }
    }
}

double grad_norm_sq(const ModelParams& g) {
    double s = 0.0;
    const std::size_t count = g.coefficient_count();
    for (std::size_t i = 0; i < count; ++i) {
        const double v = g.get_flat(i);
        s += v * v;
    }
    return s;
}

} // namespace

std::pair<ModelParams, FitReport>
fit(const ObservationPanel& panel, const CountyGraph& graph, const SpatialCovariance& cov,
    const FitConfig& cfg, AblationKind ablation, std::span<const int> train_weeks) {
    cfg.validate();
    const auto t_start = std::chrono::steady_clock::now();

    std::vector<int> weeks;
    if (train_weeks.empty()) {
        weeks = usable_weeks(panel, cfg.p);
    } else {
        weeks.assign(train_weeks.begin(), train_weeks.end());
    }
    if (weeks.empty())
        throw ValidationError("fit: no training weeks (panel must have more than p weeks)");

    auto pattern = std::make_shared<SparsityPattern>(
        ablation == AblationKind::no_spatial ? SparsityPattern::diagonal(panel.n_counties())
                                             : build_pattern(graph));
    ModelParams params(pattern, cfg.p, panel.n_mobility(), panel.n_demographics());

    const bool freeze_mobility = ablation == AblationKind::no_mobility;
    const bool freeze_demo = ablation == AblationKind::no_census;

    // In proximal mode only the smooth part (data loss + ridge) is
    // differentiated; the l1 term becomes the shrinkage step.
    FitConfig grad_cfg = cfg;
    if (cfg.proximal) {
        grad_cfg.lambda1 = cfg.lambda1 * (1.0 - cfg.lambda2);
        grad_cfg.lambda2 = 0.0;
    }

    auto objective = [&](const ModelParams& p) {
        return loss(p, panel, cov, cfg, weeks) + cfg.lambda1 * regularizer(p, cfg.lambda2);
    };

    FitReport report;
    report.config = cfg;

    double obj = objective(params);
    report.loss_trace.emplace_back(0, obj);

    double step = cfg.step_size;

    int iter = 1;
    for (; iter <= cfg.max_iters; ++iter) {
        ModelParams grad = gradient(params, panel, cov, grad_cfg, weeks);
        if (freeze_mobility) {
            grad.mobility_cases().setZero();
            grad.mobility_deaths().setZero();
        }
        if (freeze_demo) {
            grad.demo_cases().setZero();
            grad.demo_deaths().setZero();
        }

        const double gsq = grad_norm_sq(grad);
        ModelParams candidate = params;
        double new_obj = 0.0;
        bool accepted = false;

        int halvings = 0;
        const int max_halvings = cfg.backtracking ? 40 : 0;
        while (true) {
            candidate = params;
            candidate.axpy(-step, grad);
            if (cfg.proximal) soft_threshold_spatial(candidate, step * cfg.lambda1 * cfg.lambda2);
            new_obj = objective(candidate);

            if (!std::isfinite(new_obj)) {
                if (halvings >= max_halvings) break;
            } else if (!cfg.backtracking) {
                accepted = true;
                break;
            } else {
                // Armijo decrease for the subgradient step; plain decrease
                // suffices once the shrinkage step is in play.
                const double required =
                    cfg.proximal ? obj : obj - 1e-4 * step * gsq;
                if (new_obj <= required) {
                    accepted = true;
                    break;
                }
                if (halvings >= max_halvings) break;
            }
            step *= 0.5;
            ++halvings;
        }

        if (!accepted) {
            if (!std::isfinite(new_obj)) {
                report.diverged = true;
                report.diagnostic =
                    "objective became non-finite; keeping the last finite iterate "
                    "(try a smaller step_size or enable backtracking)";
            } else {
                // No descent step found: treat the iterate as stationary.
                report.converged = true;
                report.diagnostic = "line search found no further decrease";
            }
            --iter;
            break;
        }

        const double rel_change = std::abs(obj - new_obj) / std::max(1.0, std::abs(obj));
        params = std::move(candidate);
        obj = new_obj;
        report.loss_trace.emplace_back(iter, obj);

        if (rel_change < cfg.tol) {
            report.converged = true;
            break;
        }
        if (cfg.backtracking) step = std::min(step * 1.5, cfg.step_size * 1e9);
    }

    if (report.diverged) report.converged = false;
    report.iterations_used = std::min(iter, cfg.max_iters);
    report.final_objective = obj;
    report.final_loss = loss(params, panel, cov, cfg, weeks);
    report.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return {std::move(params), std::move(report)};
}

CvResult cross_validate(const ObservationPanel& panel, const CountyGraph& graph,
                        const SpatialCovariance& cov, const FitConfig& cfg,
                        std::span<const double> lambda1_grid,
                        std::span<const double> lambda2_grid) {
    cfg.validate();
    if (lambda1_grid.empty() || lambda2_grid.empty())
        throw ValidationError("cross_validate: grids must be nonempty");

    const std::vector<int> usable = usable_weeks(panel, cfg.p);
    constexpr int kFolds = 5;
    if (static_cast<int>(usable.size()) < kFolds * (cfg.p + 1))
        throw ValidationError("cross_validate: need at least 5*(p+1) usable weeks, have " +
                              std::to_string(usable.size()));

    // Contiguous blocks over the usable weeks; remainders go to the leading
    // blocks.
    std::array<std::vector<int>, kFolds> blocks;
    const std::size_t base = usable.size() / kFolds;
    const std::size_t extra = usable.size() % kFolds;
    std::size_t pos = 0;
    for (int f = 0; f < kFolds; ++f) {
        const std::size_t len = base + (static_cast<std::size_t>(f) < extra ? 1 : 0);
        blocks[static_cast<std::size_t>(f)].assign(usable.begin() + static_cast<std::ptrdiff_t>(pos),
                                                   usable.begin() + static_cast<std::ptrdiff_t>(pos + len));
        pos += len;
    }

    CvResult result;
    result.cells.resize(lambda1_grid.size() * lambda2_grid.size());

    parallel_for(static_cast<int>(result.cells.size()), thread_budget(), [&](int idx) {
        const std::size_t i1 = static_cast<std::size_t>(idx) / lambda2_grid.size();
        const std::size_t i2 = static_cast<std::size_t>(idx) % lambda2_grid.size();
        FitConfig cell_cfg = cfg;
        cell_cfg.lambda1 = lambda1_grid[i1];
        cell_cfg.lambda2 = lambda2_grid[i2];

        double score = 0.0;
        for (int f = 0; f < kFolds; ++f) {
            std::vector<int> train;
            for (int g = 0; g < kFolds; ++g) {
                if (g == f) continue;
                const auto& blk = blocks[static_cast<std::size_t>(g)];
                train.insert(train.end(), blk.begin(), blk.end());
            }
            auto [fitted, rep] = fit(panel, graph, cov, cell_cfg, AblationKind::full, train);
            score += loss(fitted, panel, cov, cell_cfg, blocks[static_cast<std::size_t>(f)]);
        }
        result.cells[static_cast<std::size_t>(idx)] = {cell_cfg.lambda1, cell_cfg.lambda2, score};
    });

    const CvCell* best = &result.cells.front();
    for (const CvCell& cell : result.cells) {
        if (cell.score < best->score ||
            (cell.score == best->score &&
             (cell.lambda1 > best->lambda1 ||
              (cell.lambda1 == best->lambda1 && cell.lambda2 > best->lambda2)))) {
            best = &cell;
        }
    }
    result.best_lambda1 = best->lambda1;
    result.best_lambda2 = best->lambda2;
    return result;
}

} // namespace stva
