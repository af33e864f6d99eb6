#include "stva/model.hpp"

#include "stva/digest.hpp"
#include "stva/errors.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>

namespace stva {

using json = nlohmann::ordered_json;

void FitConfig::validate() const {
    if (p < 1) throw ValidationError("config: p must be >= 1");
    if (delta < 0.0 || delta > 1.0) throw ValidationError("config: delta must be in [0,1]");
    if (eta <= 0.0) throw ValidationError("config: eta must be positive");
    if (lambda1 < 0.0) throw ValidationError("config: lambda1 must be >= 0");
    if (lambda2 < 0.0 || lambda2 > 1.0) throw ValidationError("config: lambda2 must be in [0,1]");
    if (step_size <= 0.0) throw ValidationError("config: step_size must be positive");
    if (max_iters < 1) throw ValidationError("config: max_iters must be >= 1");
    if (tol < 0.0) throw ValidationError("config: tol must be >= 0");
}

ModelParams::ModelParams(std::shared_ptr<const SparsityPattern> pattern, int p, int K, int L)
    : pattern_(std::move(pattern)), p_(p), K_(K), L_(L) {
    if (!pattern_) throw ValidationError("model params need a sparsity pattern");
    if (p_ < 1) throw ValidationError("model params: p must be >= 1");
    const std::size_t total = static_cast<std::size_t>(p_) * pattern_->nnz();
    b_.assign(total, 0.0);
    h_.assign(total, 0.0);
    a_.assign(total, 0.0);
    mu_ = Eigen::MatrixXd::Zero(K_, p_);
    nu_ = Eigen::MatrixXd::Zero(K_, p_);
    upsilon_ = Eigen::VectorXd::Zero(L_);
    zeta_ = Eigen::VectorXd::Zero(L_);
}

std::span<double> ModelParams::lag_span(std::vector<double>& v, int tau) {
    const std::size_t nnz = pattern_->nnz();
    return {v.data() + static_cast<std::size_t>(tau - 1) * nnz, nnz};
}

std::span<const double> ModelParams::lag_span(const std::vector<double>& v, int tau) const {
    const std::size_t nnz = pattern_->nnz();
    return {v.data() + static_cast<std::size_t>(tau - 1) * nnz, nnz};
}

void ModelParams::set_zero() {
    std::fill(b_.begin(), b_.end(), 0.0);
    std::fill(h_.begin(), h_.end(), 0.0);
    std::fill(a_.begin(), a_.end(), 0.0);
    mu_.setZero();
    nu_.setZero();
    upsilon_.setZero();
    zeta_.setZero();
}

std::size_t ModelParams::coefficient_count() const {
    return 3 * b_.size() + static_cast<std::size_t>(2 * K_ * p_) + static_cast<std::size_t>(2 * L_);
}

// Flat order: per lag [B,H,A] entries, then mu, nu (k major, tau minor),
// then upsilon, zeta.
double ModelParams::get_flat(std::size_t idx) const {
    const std::size_t nnz = pattern_->nnz();
    const std::size_t spatial = 3 * static_cast<std::size_t>(p_) * nnz;
    if (idx < spatial) {
        const std::size_t lag = idx / (3 * nnz);
        const std::size_t rem = idx % (3 * nnz);
        const std::size_t family = rem / nnz;
        const std::size_t e = rem % nnz;
        const std::vector<double>* v = family == 0 ? &b_ : family == 1 ? &h_ : &a_;
        return (*v)[lag * nnz + e];
    }
    idx -= spatial;
    const std::size_t kp = static_cast<std::size_t>(K_) * static_cast<std::size_t>(p_);
    if (idx < kp) return mu_(static_cast<Eigen::Index>(idx / static_cast<std::size_t>(p_)),
                             static_cast<Eigen::Index>(idx % static_cast<std::size_t>(p_)));
    idx -= kp;
    if (idx < kp) return nu_(static_cast<Eigen::Index>(idx / static_cast<std::size_t>(p_)),
                             static_cast<Eigen::Index>(idx % static_cast<std::size_t>(p_)));
    idx -= kp;
    if (idx < static_cast<std::size_t>(L_)) return upsilon_(static_cast<Eigen::Index>(idx));
    idx -= static_cast<std::size_t>(L_);
    return zeta_(static_cast<Eigen::Index>(idx));
}

void ModelParams::set_flat(std::size_t idx, double value) {
    const std::size_t nnz = pattern_->nnz();
    const std::size_t spatial = 3 * static_cast<std::size_t>(p_) * nnz;
    if (idx < spatial) {
        const std::size_t lag = idx / (3 * nnz);
        const std::size_t rem = idx % (3 * nnz);
        const std::size_t family = rem / nnz;
        const std::size_t e = rem % nnz;
        std::vector<double>* v = family == 0 ? &b_ : family == 1 ? &h_ : &a_;
        (*v)[lag * nnz + e] = value;
        return;
    }
    idx -= spatial;
    const std::size_t kp = static_cast<std::size_t>(K_) * static_cast<std::size_t>(p_);
    if (idx < kp) {
        mu_(static_cast<Eigen::Index>(idx / static_cast<std::size_t>(p_)),
            static_cast<Eigen::Index>(idx % static_cast<std::size_t>(p_))) = value;
        return;
    }
    idx -= kp;
    if (idx < kp) {
        nu_(static_cast<Eigen::Index>(idx / static_cast<std::size_t>(p_)),
            static_cast<Eigen::Index>(idx % static_cast<std::size_t>(p_))) = value;
        return;
    }
    idx -= kp;
    if (idx < static_cast<std::size_t>(L_)) {
        upsilon_(static_cast<Eigen::Index>(idx)) = value;
        return;
    }
    idx -= static_cast<std::size_t>(L_);
    zeta_(static_cast<Eigen::Index>(idx)) = value;
}

bool ModelParams::same_shape(const ModelParams& other) const {
    return pattern_ && other.pattern_ && pattern_->n() == other.pattern_->n() &&
           pattern_->nnz() == other.pattern_->nnz() && p_ == other.p_ && K_ == other.K_ &&
           L_ == other.L_;
}

void ModelParams::axpy(double alpha, const ModelParams& other) {
    if (!same_shape(other)) throw ValidationError("axpy: parameter shapes differ");
    for (std::size_t i = 0; i < b_.size(); ++i) {
        b_[i] += alpha * other.b_[i];
        h_[i] += alpha * other.h_[i];
        a_[i] += alpha * other.a_[i];
    }
    mu_ += alpha * other.mu_;
    nu_ += alpha * other.nu_;
    upsilon_ += alpha * other.upsilon_;
    zeta_ += alpha * other.zeta_;
}

std::vector<int> usable_weeks(const ObservationPanel& panel, int p) {
    std::vector<int> weeks;
    for (int t = p; t < panel.n_weeks(); ++t) weeks.push_back(t);
    return weeks;
}

namespace {

// y += values(row-major over pattern) * x
void pattern_matvec_add(const SparsityPattern& pat, std::span<const double> values,
                        const Eigen::VectorXd& x, Eigen::VectorXd& y) {
    const auto& cols = pat.col_index();
    const auto& rptr = pat.row_ptr();
    for (int i = 0; i < pat.n(); ++i) {
        double acc = 0.0;
        for (std::size_t e = rptr[static_cast<std::size_t>(i)];
             e < rptr[static_cast<std::size_t>(i) + 1]; ++e) {
            acc += values[e] * x(cols[e]);
        }
        y(i) += acc;
    }
}

// grad[e] += scale * u(row(e)) * x(col(e))
void pattern_outer_add(const SparsityPattern& pat, const Eigen::VectorXd& u,
                       const Eigen::VectorXd& x, double scale, std::span<double> grad) {
    const auto& cols = pat.col_index();
    const auto& rptr = pat.row_ptr();
    for (int i = 0; i < pat.n(); ++i) {
        const double ui = scale * u(i);
        if (ui == 0.0) continue;
        for (std::size_t e = rptr[static_cast<std::size_t>(i)];
             e < rptr[static_cast<std::size_t>(i) + 1]; ++e) {
            grad[e] += ui * x(cols[e]);
        }
    }
}

void check_weeks(const ObservationPanel& panel, int p, std::span<const int> weeks) {
    for (int t : weeks) {
        if (t < p || t >= panel.n_weeks())
            throw ValidationError("insufficient history: week " + std::to_string(t) +
                                  " needs " + std::to_string(p) + " lagged weeks");
    }
}

} // namespace

Eigen::VectorXd forward(const ModelParams& params, const ObservationPanel& panel, int t) {
    const int p = params.p();
    if (params.pattern().n() != panel.n_counties() ||
        params.n_mobility() != panel.n_mobility() ||
        params.n_demographics() != panel.n_demographics())
        throw ValidationError("model and panel disagree on N, K or L");
    if (t < p || t >= panel.n_weeks())
        throw ValidationError("insufficient history: week " + std::to_string(t) + " with p = " +
                              std::to_string(p));
    const int n = panel.n_counties();
    const SparsityPattern& pat = params.pattern();

    Eigen::VectorXd pred_cases = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd pred_deaths = Eigen::VectorXd::Zero(n);

    for (int tau = 1; tau <= p; ++tau) {
        const Eigen::VectorXd lag_cases = panel.cases.row(t - tau).transpose();
        const Eigen::VectorXd lag_deaths = panel.deaths.row(t - tau).transpose();
        pattern_matvec_add(pat, params.cases_on_cases(tau), lag_cases, pred_cases);
        pattern_matvec_add(pat, params.deaths_on_cases(tau), lag_cases, pred_deaths);
        pattern_matvec_add(pat, params.deaths_on_deaths(tau), lag_deaths, pred_deaths);
    }

    for (int k = 0; k < params.n_mobility(); ++k) {
        for (int tau = 1; tau <= p; ++tau) {
            const auto m = panel.mobility[static_cast<std::size_t>(k)].row(t - tau).transpose();
            pred_cases += params.mobility_cases()(k, tau - 1) * m;
            pred_deaths += params.mobility_deaths()(k, tau - 1) * m;
        }
    }
    for (int l = 0; l < params.n_demographics(); ++l) {
        const auto z = panel.demographics.col(l);
        pred_cases += params.demo_cases()(l) * z;
        pred_deaths += params.demo_deaths()(l) * z;
    }

    Eigen::VectorXd out(2 * n);
    out.head(n) = pred_cases;
    out.tail(n) = pred_deaths;
    return out;
}

double loss(const ModelParams& params, const ObservationPanel& panel,
            const SpatialCovariance& cov, const FitConfig& cfg, std::span<const int> weeks) {
    check_weeks(panel, params.p(), weeks);
    const int n = panel.n_counties();
    double total = 0.0;
    for (int t : weeks) {
        const Eigen::VectorXd pred = forward(params, panel, t);
        const Eigen::VectorXd res_cases = panel.cases.row(t).transpose() - pred.head(n);
        const Eigen::VectorXd res_deaths = panel.deaths.row(t).transpose() - pred.tail(n);
        total += cfg.delta * res_deaths.dot(cov.solve(res_deaths));
        total += (1.0 - cfg.delta) * res_cases.dot(cov.solve(res_cases));
    }
    return total;
}

double regularizer(const ModelParams& params, double lambda2) {
    if (lambda2 < 0.0 || lambda2 > 1.0) throw ValidationError("regularizer: lambda2 in [0,1]");
    double l1 = 0.0, l2 = 0.0;
    for (int tau = 1; tau <= params.p(); ++tau) {
        for (std::span<const double> vals :
             {params.cases_on_cases(tau), params.deaths_on_cases(tau), params.deaths_on_deaths(tau)}) {
            for (double v : vals) {
                l1 += std::abs(v);
                l2 += v * v;
            }
        }
    }
    return lambda2 * l1 + (1.0 - lambda2) * l2;
}

ModelParams gradient(const ModelParams& params, const ObservationPanel& panel,
                     const SpatialCovariance& cov, const FitConfig& cfg,
                     std::span<const int> weeks) {
    check_weeks(panel, params.p(), weeks);
    const int n = panel.n_counties();
    const int p = params.p();
    const SparsityPattern& pat = params.pattern();

    ModelParams grad(params.pattern_ptr(), p, params.n_mobility(), params.n_demographics());

    for (int t : weeks) {
        const Eigen::VectorXd pred = forward(params, panel, t);
        const Eigen::VectorXd res_cases = panel.cases.row(t).transpose() - pred.head(n);
        const Eigen::VectorXd res_deaths = panel.deaths.row(t).transpose() - pred.tail(n);
        // d loss / d pred = -2 * weight * Sigma^-1 residual
        const Eigen::VectorXd u_cases = -2.0 * (1.0 - cfg.delta) * cov.solve(res_cases);
        const Eigen::VectorXd u_deaths = -2.0 * cfg.delta * cov.solve(res_deaths);

        for (int tau = 1; tau <= p; ++tau) {
            const Eigen::VectorXd lag_cases = panel.cases.row(t - tau).transpose();
            const Eigen::VectorXd lag_deaths = panel.deaths.row(t - tau).transpose();
            pattern_outer_add(pat, u_cases, lag_cases, 1.0, grad.cases_on_cases(tau));
            pattern_outer_add(pat, u_deaths, lag_cases, 1.0, grad.deaths_on_cases(tau));
            pattern_outer_add(pat, u_deaths, lag_deaths, 1.0, grad.deaths_on_deaths(tau));

            for (int k = 0; k < params.n_mobility(); ++k) {
                const auto m = panel.mobility[static_cast<std::size_t>(k)].row(t - tau).transpose();
                grad.mobility_cases()(k, tau - 1) += u_cases.dot(m);
                grad.mobility_deaths()(k, tau - 1) += u_deaths.dot(m);
            }
        }
        for (int l = 0; l < params.n_demographics(); ++l) {
            const auto z = panel.demographics.col(l);
            grad.demo_cases()(l) += u_cases.dot(z);
            grad.demo_deaths()(l) += u_deaths.dot(z);
        }
    }

    if (cfg.lambda1 > 0.0) {
        // Elastic net: lambda1 * (lambda2 * sign(v) + 2 (1-lambda2) v), with
        // the subgradient 0 at v = 0. Covariate coefficients are unpenalized.
        for (int tau = 1; tau <= p; ++tau) {
            auto add_reg = [&](std::span<const double> v, std::span<double> g) {
                for (std::size_t e = 0; e < v.size(); ++e) {
                    const double sign = v[e] > 0.0 ? 1.0 : v[e] < 0.0 ? -1.0 : 0.0;
                    g[e] += cfg.lambda1 * (cfg.lambda2 * sign + 2.0 * (1.0 - cfg.lambda2) * v[e]);
                }
            };
            add_reg(params.cases_on_cases(tau), grad.cases_on_cases(tau));
            add_reg(params.deaths_on_cases(tau), grad.deaths_on_cases(tau));
            add_reg(params.deaths_on_deaths(tau), grad.deaths_on_deaths(tau));
        }
    }
    return grad;
}

void save_params(const ModelParams& params, const FitConfig& cfg, const std::string& path) {
    json header;
    header["format"] = "stva-params-v1";
    header["n_counties"] = params.pattern().n();
    header["p"] = params.p();
    header["n_mobility"] = params.n_mobility();
    header["n_demographics"] = params.n_demographics();
    header["pattern_hash"] = digest_hex(params.pattern().hash());
    header["pattern_row_ptr"] = params.pattern().row_ptr();
    header["pattern_col"] = params.pattern().col_index();
    header["coefficients"] = params.coefficient_count();
    header["config"] = {
        {"p", cfg.p},           {"delta", cfg.delta},
        {"eta", cfg.eta},       {"lambda1", cfg.lambda1},
        {"lambda2", cfg.lambda2}, {"step_size", cfg.step_size},
        {"max_iters", cfg.max_iters}, {"tol", cfg.tol},
        {"clamp_output", cfg.clamp_output}, {"backtracking", cfg.backtracking},
        {"proximal", cfg.proximal},
    };

    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write parameter snapshot: " + path);
    out << header.dump() << '\n';
    const std::size_t count = params.coefficient_count();
    for (std::size_t i = 0; i < count; ++i) {
        const double v = params.get_flat(i);
        out.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
}

std::pair<ModelParams, FitConfig> load_params(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open parameter snapshot: " + path);
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("parameter snapshot: missing header");
    json header = json::parse(line);
    if (header.value("format", std::string()) != "stva-params-v1")
        throw ValidationError("not a parameter snapshot: " + path);

    const int n = header.at("n_counties").get<int>();
    auto row_ptr = header.at("pattern_row_ptr").get<std::vector<std::size_t>>();
    auto col = header.at("pattern_col").get<std::vector<int>>();
    std::vector<std::pair<int, int>> entries;
    entries.reserve(col.size());
    for (int i = 0; i < n; ++i) {
        for (std::size_t e = row_ptr[static_cast<std::size_t>(i)];
             e < row_ptr[static_cast<std::size_t>(i) + 1]; ++e) {
            entries.emplace_back(i, col[e]);
        }
    }
    auto pattern = std::make_shared<SparsityPattern>(SparsityPattern::from_entries(n, entries));
    if (digest_hex(pattern->hash()) != header.at("pattern_hash").get<std::string>())
        throw ValidationError("parameter snapshot: pattern hash mismatch");

    ModelParams params(pattern, header.at("p").get<int>(), header.at("n_mobility").get<int>(),
                       header.at("n_demographics").get<int>());

    FitConfig cfg;
    const auto& jc = header.at("config");
    cfg.p = jc.at("p").get<int>();
    cfg.delta = jc.at("delta").get<double>();
    cfg.eta = jc.at("eta").get<double>();
    cfg.lambda1 = jc.at("lambda1").get<double>();
    cfg.lambda2 = jc.at("lambda2").get<double>();
    cfg.step_size = jc.at("step_size").get<double>();
    cfg.max_iters = jc.at("max_iters").get<int>();
    cfg.tol = jc.at("tol").get<double>();
    cfg.clamp_output = jc.at("clamp_output").get<bool>();
    cfg.backtracking = jc.at("backtracking").get<bool>();
    cfg.proximal = jc.at("proximal").get<bool>();

    const std::size_t count = header.at("coefficients").get<std::size_t>();
    if (count != params.coefficient_count())
        throw ValidationError("parameter snapshot: coefficient count mismatch");
    for (std::size_t i = 0; i < count; ++i) {
        double v = 0.0;
        in.read(reinterpret_cast<char*>(&v), sizeof(v));
        if (!in) throw ValidationError("parameter snapshot: truncated value block");
        params.set_flat(i, v);
    }
    return {std::move(params), cfg};
}

} // namespace stva
