#include "stva/digest.hpp"
#include "stva/errors.hpp"
#include "stva/eval.hpp"
#include "stva/synth.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace stva;

namespace {

struct RunContext {
    std::string command;
    json config;
    json inputs = json::object();
    std::vector<std::string> outputs;
    std::string out_dir;
    std::uint64_t seed = 0;
    std::chrono::system_clock::time_point started = std::chrono::system_clock::now();

    void add_input(const std::string& path) { inputs[path] = digest_hex(digest_file(path)); }
    void add_output(const std::string& path) { outputs.push_back(path); }

    void write_manifest() {
        json m;
        m["command"] = command;
        m["config"] = config;
        m["inputs"] = inputs;
        json outs = json::object();
        for (const auto& path : outputs) outs[path] = digest_hex(digest_file(path));
        m["outputs"] = outs;
        m["seed"] = seed;
        const auto to_secs = [](std::chrono::system_clock::time_point tp) {
            return std::chrono::duration_cast<std::chrono::seconds>(tp.time_since_epoch()).count();
        };
        m["started_unix"] = to_secs(started);
        m["finished_unix"] = to_secs(std::chrono::system_clock::now());
        std::ofstream out(out_dir + "/manifest.json", std::ios::binary);
        if (!out) throw ValidationError("cannot write run manifest in " + out_dir);
        out << m.dump(2) << '\n';
    }
};

struct CommonOptions {
    FitConfig fit;
    std::string ablation = "full";
    std::string distance_mode = "great-circle-normalized";
    std::uint64_t seed = 0;
    std::string config_path;
    CLI::App* cmd = nullptr;
};

// Shared hyperparameter options; long names double as config-file keys.
void add_config_options(CLI::App* cmd, CommonOptions& opt) {
    opt.cmd = cmd;
    cmd->add_option("--config", opt.config_path, "key = value config file");
    cmd->add_option("--p", opt.fit.p, "memory depth (lagged weeks)");
    cmd->add_option("--delta", opt.fit.delta, "death-loss weight in [0,1]");
    cmd->add_option("--eta", opt.fit.eta, "spatial covariance parameter");
    cmd->add_option("--lambda1", opt.fit.lambda1, "regularization weight");
    cmd->add_option("--lambda2", opt.fit.lambda2, "l1 ratio in [0,1]");
    cmd->add_option("--step-size,--step_size", opt.fit.step_size, "gradient step size");
    cmd->add_option("--max-iters,--max_iters", opt.fit.max_iters, "iteration budget");
    cmd->add_option("--tol", opt.fit.tol, "relative objective-change stop");
    cmd->add_flag("--clamp,!--no-clamp", opt.fit.clamp_output, "clamp reported predictions at 0");
    cmd->add_flag("--backtracking,!--no-backtracking", opt.fit.backtracking,
                  "halve the step until an Armijo decrease");
    cmd->add_flag("--proximal,!--no-proximal", opt.fit.proximal,
                  "soft-threshold step for the l1 part");
    cmd->add_option("--ablation", opt.ablation, "full|no_spatial|no_census|no_mobility");
    cmd->add_option("--distance-mode,--distance_mode", opt.distance_mode,
                    "great-circle-normalized|euclidean-degrees");
    cmd->add_option("--seed", opt.seed, "random seed");
}

std::string trimmed(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

// Flat `key = value` config file; a value set on the command line wins over
// the file, which wins over the built-in default.
void apply_config_file(CommonOptions& opt) {
    if (opt.config_path.empty()) return;
    std::ifstream in(opt.config_path);
    if (!in) throw ValidationError("cannot open config file: " + opt.config_path);

    auto flag_given = [&](const std::string& name) { return opt.cmd->count(name) > 0; };
    auto parse_bool = [](const std::string& key, const std::string& v) {
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        throw ValidationError("config: " + key + " wants true/false, got " + v);
    };

    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string stripped = trimmed(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos)
            throw ValidationError("config: line " + std::to_string(line_no) + " is not key = value");
        const std::string key = trimmed(stripped.substr(0, eq));
        const std::string value = trimmed(stripped.substr(eq + 1));
        try {
            if (key == "p") {
                if (!flag_given("--p")) opt.fit.p = std::stoi(value);
            } else if (key == "delta") {
                if (!flag_given("--delta")) opt.fit.delta = std::stod(value);
            } else if (key == "eta") {
                if (!flag_given("--eta")) opt.fit.eta = std::stod(value);
            } else if (key == "lambda1") {
                if (!flag_given("--lambda1")) opt.fit.lambda1 = std::stod(value);
            } else if (key == "lambda2") {
                if (!flag_given("--lambda2")) opt.fit.lambda2 = std::stod(value);
            } else if (key == "step_size") {
                if (!flag_given("--step-size")) opt.fit.step_size = std::stod(value);
            } else if (key == "max_iters") {
                if (!flag_given("--max-iters")) opt.fit.max_iters = std::stoi(value);
            } else if (key == "tol") {
                if (!flag_given("--tol")) opt.fit.tol = std::stod(value);
            } else if (key == "clamp_output") {
                if (!flag_given("--clamp")) opt.fit.clamp_output = parse_bool(key, value);
            } else if (key == "backtracking") {
                if (!flag_given("--backtracking")) opt.fit.backtracking = parse_bool(key, value);
            } else if (key == "proximal") {
                if (!flag_given("--proximal")) opt.fit.proximal = parse_bool(key, value);
            } else if (key == "ablation") {
                if (!flag_given("--ablation")) opt.ablation = value;
            } else if (key == "distance_mode") {
                if (!flag_given("--distance-mode")) opt.distance_mode = value;
            } else if (key == "seed") {
                if (!flag_given("--seed")) opt.seed = std::stoull(value);
            } else {
                throw ValidationError("config: unknown key '" + key + "'");
            }
        } catch (const std::invalid_argument&) {
            throw ValidationError("config: bad value for " + key + ": " + value);
        }
    }
}

json config_snapshot(const CommonOptions& opt) {
    return json{{"p", opt.fit.p},
                {"delta", opt.fit.delta},
                {"eta", opt.fit.eta},
                {"lambda1", opt.fit.lambda1},
                {"lambda2", opt.fit.lambda2},
                {"step_size", opt.fit.step_size},
                {"max_iters", opt.fit.max_iters},
                {"tol", opt.fit.tol},
                {"clamp_output", opt.fit.clamp_output},
                {"backtracking", opt.fit.backtracking},
                {"proximal", opt.fit.proximal},
                {"ablation", opt.ablation},
                {"distance_mode", opt.distance_mode},
                {"seed", opt.seed}};
}

CountyGraph graph_for_panel(const std::string& panel_dir, std::string counties_csv,
                            std::string adjacency_csv, bool mainland_only, RunContext& ctx) {
    if (counties_csv.empty()) {
        counties_csv = panel_dir + "/counties.csv";
        adjacency_csv = panel_dir + "/adjacency.csv";
        if (!fs::exists(counties_csv))
            throw ValidationError("no --counties-csv given and " + counties_csv + " not found");
    } else if (adjacency_csv.empty()) {
        throw ValidationError("--counties-csv requires --adjacency-csv");
    }
    ctx.add_input(counties_csv);
    ctx.add_input(adjacency_csv);
    return load_county_graph(counties_csv, adjacency_csv, mainland_only);
}

void add_panel_inputs(RunContext& ctx, const std::string& dir, const ObservationPanel& panel) {
    ctx.add_input(dir + "/manifest.json");
    ctx.add_input(dir + "/cases.csv");
    ctx.add_input(dir + "/deaths.csv");
    for (const auto& name : panel.mobility_names) ctx.add_input(dir + "/mobility_" + name + ".csv");
    ctx.add_input(dir + "/demographics.csv");
}

void write_graph_csvs(const CountyGraph& graph, const std::string& dir) {
    auto quoted = [](const std::string& field) {
        if (field.find_first_of(",\"") == std::string::npos) return field;
        std::string out = "\"";
        for (char c : field) {
            if (c == '"') out += '"';
            out += c;
        }
        return out + "\"";
    };
    {
        std::ofstream out(dir + "/counties.csv", std::ios::binary);
        out << "fips,name,state,lat,lon,is_hub\n";
        char buf[64];
        for (const County& c : graph.counties()) {
            std::snprintf(buf, sizeof(buf), "%.17g,%.17g", c.lat, c.lon);
            out << c.fips << ',' << quoted(c.name) << ',' << c.state << ',' << buf << ','
                << (c.is_hub ? 1 : 0) << '\n';
        }
    }
    {
        std::ofstream out(dir + "/adjacency.csv", std::ios::binary);
        out << "fips_a,fips_b\n";
        for (const auto& [a, b] : graph.edges())
            out << graph.county(a).fips << ',' << graph.county(b).fips << '\n';
    }
}

// Wall time stays out of the report so reruns digest identically; the run
// manifest carries the timestamps.
void write_fit_report(const FitReport& report, const std::string& path) {
    json j;
    j["final_objective"] = report.final_objective;
    j["final_loss"] = report.final_loss;
    j["iterations_used"] = report.iterations_used;
    j["converged"] = report.converged;
    j["diagnostic"] = report.diagnostic;
    json trace = json::array();
    for (const auto& [it, obj] : report.loss_trace) trace.push_back({it, obj});
    j["loss_trace"] = std::move(trace);
    std::ofstream out(path, std::ios::binary);
    out << j.dump(2) << '\n';
}

int run_cli(int argc, char** argv) {
    CLI::App app{"stva: graph-structured sparse VAR for county-level case/death forecasting"};
    app.require_subcommand(1);

    // ---- synth ----
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic panel from a known model");
    struct {
        int counties = 10;
        int weeks = 60;
        double edge_prob = 0.3;
        int hubs = 1;
        int mobility = 2;
        int demo = 1;
        double coef_scale = 0.5;
        double covariate_scale = 1.0;
        double noise = 0.0;
        std::string out;
    } sy;
    CommonOptions sy_opt;
    sy_opt.fit.eta = 1.0;
    sy_opt.seed = 1;
    synth_cmd->add_option("--counties", sy.counties, "number of counties");
    synth_cmd->add_option("--weeks", sy.weeks, "number of weeks");
    synth_cmd->add_option("--edge-prob", sy.edge_prob, "edge probability");
    synth_cmd->add_option("--hubs", sy.hubs, "number of hubs");
    synth_cmd->add_option("--mobility", sy.mobility, "mobility categories");
    synth_cmd->add_option("--demo", sy.demo, "demographic factors");
    synth_cmd->add_option("--coef-scale", sy.coef_scale, "target spectral radius in (0,1)");
    synth_cmd->add_option("--covariate-scale", sy.covariate_scale, "covariate coefficient scale");
    synth_cmd->add_option("--noise", sy.noise, "noise scale");
    synth_cmd->add_option("--out", sy.out, "output directory")->required();
    add_config_options(synth_cmd, sy_opt);

    // ---- ingest ----
    auto* ingest_cmd = app.add_subcommand("ingest", "build a panel bundle from raw CSVs");
    struct {
        std::string counties_csv, adjacency_csv, epi_csv, mobility_csv, census_csv;
        std::string start = "2020-03-15";
        int weeks = 49;
        bool mainland_only = true;
        std::string out;
    } in;
    CommonOptions in_opt;
    ingest_cmd->add_option("--counties-csv", in.counties_csv)->required();
    ingest_cmd->add_option("--adjacency-csv", in.adjacency_csv)->required();
    ingest_cmd->add_option("--epi-csv", in.epi_csv)->required();
    ingest_cmd->add_option("--mobility-csv", in.mobility_csv)->required();
    ingest_cmd->add_option("--census-csv", in.census_csv)->required();
    ingest_cmd->add_option("--start", in.start, "window start (a Sunday)");
    ingest_cmd->add_option("--weeks", in.weeks, "number of weeks");
    ingest_cmd->add_flag("--mainland-only,!--no-mainland-only", in.mainland_only,
                         "drop AK, HI and territories");
    ingest_cmd->add_option("--out", in.out)->required();
    add_config_options(ingest_cmd, in_opt);

    // ---- fit ----
    auto* fit_cmd = app.add_subcommand("fit", "fit the model on a panel");
    struct {
        std::string panel, counties_csv, adjacency_csv, out;
    } ft;
    CommonOptions ft_opt;
    fit_cmd->add_option("--panel", ft.panel, "panel bundle directory")->required();
    fit_cmd->add_option("--counties-csv", ft.counties_csv);
    fit_cmd->add_option("--adjacency-csv", ft.adjacency_csv);
    fit_cmd->add_option("--out", ft.out)->required();
    add_config_options(fit_cmd, ft_opt);

    // ---- predict ----
    auto* predict_cmd = app.add_subcommand("predict", "in-sample predictions from a snapshot");
    struct {
        std::string panel, params, counties_csv, adjacency_csv, out;
    } pr;
    CommonOptions pr_opt;
    predict_cmd->add_option("--panel", pr.panel)->required();
    predict_cmd->add_option("--params", pr.params, "parameter snapshot")->required();
    predict_cmd->add_option("--counties-csv", pr.counties_csv);
    predict_cmd->add_option("--adjacency-csv", pr.adjacency_csv);
    predict_cmd->add_option("--out", pr.out)->required();
    add_config_options(predict_cmd, pr_opt);

    // ---- evaluate ----
    auto* eval_cmd = app.add_subcommand("evaluate", "in-sample or one-week-ahead evaluation");
    struct {
        std::string panel, counties_csv, adjacency_csv, out;
        std::string mode = "in-sample";
        std::string start;
        std::string target = "deaths";
        std::string states;
        std::string week_from, week_to;
        int min_train = 10;
        std::vector<std::string> benchmarks; // name=path
    } ev;
    CommonOptions ev_opt;
    eval_cmd->add_option("--panel", ev.panel)->required();
    eval_cmd->add_option("--counties-csv", ev.counties_csv);
    eval_cmd->add_option("--adjacency-csv", ev.adjacency_csv);
    eval_cmd->add_option("--mode", ev.mode, "in-sample|one-week-ahead");
    eval_cmd->add_option("--start", ev.start, "first target week (date) for one-week-ahead");
    eval_cmd->add_option("--target", ev.target, "cases|deaths");
    eval_cmd->add_option("--states", ev.states, "comma-separated state filter");
    eval_cmd->add_option("--week-from", ev.week_from, "scope: first week start date");
    eval_cmd->add_option("--week-to", ev.week_to, "scope: last week start date");
    eval_cmd->add_option("--min-train", ev.min_train, "minimum training weeks");
    eval_cmd->add_option("--benchmark", ev.benchmarks,
                         "name=path of a state,week,predicted_deaths overlay (repeatable)");
    eval_cmd->add_option("--out", ev.out)->required();
    add_config_options(eval_cmd, ev_opt);

    // ---- ablate ----
    auto* ablate_cmd = app.add_subcommand("ablate", "fit ablation variants and compare MAE");
    struct {
        std::string panel, counties_csv, adjacency_csv, out;
        std::string kinds = "full,no_spatial,no_census,no_mobility";
        std::string target = "deaths";
    } ab;
    CommonOptions ab_opt;
    ablate_cmd->add_option("--panel", ab.panel)->required();
    ablate_cmd->add_option("--counties-csv", ab.counties_csv);
    ablate_cmd->add_option("--adjacency-csv", ab.adjacency_csv);
    ablate_cmd->add_option("--kinds", ab.kinds, "comma-separated ablation kinds");
    ablate_cmd->add_option("--target", ab.target, "cases|deaths");
    ablate_cmd->add_option("--out", ab.out)->required();
    add_config_options(ablate_cmd, ab_opt);

    // ---- cv ----
    auto* cv_cmd = app.add_subcommand("cv", "5-fold blocked cross-validation over (lambda1, lambda2)");
    struct {
        std::string panel, counties_csv, adjacency_csv, out;
        std::vector<double> l1_grid, l2_grid;
    } cv;
    CommonOptions cv_opt;
    cv_cmd->add_option("--panel", cv.panel)->required();
    cv_cmd->add_option("--counties-csv", cv.counties_csv);
    cv_cmd->add_option("--adjacency-csv", cv.adjacency_csv);
    cv_cmd->add_option("--lambda1-grid", cv.l1_grid, "lambda1 grid")->required()->delimiter(',');
    cv_cmd->add_option("--lambda2-grid", cv.l2_grid, "lambda2 grid")->required()->delimiter(',');
    cv_cmd->add_option("--out", cv.out)->required();
    add_config_options(cv_cmd, cv_opt);

    // ---- coef ----
    auto* coef_cmd = app.add_subcommand("coef", "export coefficients, optionally with significance");
    struct {
        std::string panel, params, counties_csv, adjacency_csv, out;
        std::string focus;      // FIPS; empty = whole table
        std::string matrix = "A";
        int lag = 1;
        bool with_significance = false;
    } co;
    CommonOptions co_opt;
    coef_cmd->add_option("--panel", co.panel)->required();
    coef_cmd->add_option("--params", co.params)->required();
    coef_cmd->add_option("--counties-csv", co.counties_csv);
    coef_cmd->add_option("--adjacency-csv", co.adjacency_csv);
    coef_cmd->add_option("--focus", co.focus, "focus county FIPS for a column export");
    coef_cmd->add_option("--matrix", co.matrix, "A|B|H");
    coef_cmd->add_option("--lag", co.lag, "lag (1..p)");
    coef_cmd->add_flag("--significance", co.with_significance, "compute t- and p-values");
    coef_cmd->add_option("--out", co.out)->required();
    add_config_options(coef_cmd, co_opt);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    auto setup = [&](const std::string& command, const std::string& out, CommonOptions& opt) {
        apply_config_file(opt);
        fs::create_directories(out);
        RunContext ctx;
        ctx.command = command;
        ctx.out_dir = out;
        ctx.config = config_snapshot(opt);
        ctx.seed = opt.seed;
        if (!opt.config_path.empty()) ctx.add_input(opt.config_path);
        return ctx;
    };

    if (*synth_cmd) {
        RunContext ctx = setup("synth", sy.out, sy_opt);
        SynthSpec spec;
        spec.n_counties = sy.counties;
        spec.n_weeks = sy.weeks;
        spec.edge_probability = sy.edge_prob;
        spec.n_hubs = sy.hubs;
        spec.p = sy_opt.fit.p;
        spec.n_mobility = sy.mobility;
        spec.n_demographics = sy.demo;
        spec.coefficient_scale = sy.coef_scale;
        spec.covariate_scale = sy.covariate_scale;
        spec.noise_scale = sy.noise;
        spec.eta = sy_opt.fit.eta;
        spec.distance_mode = parse_distance_mode(sy_opt.distance_mode);
        spec.seed = sy_opt.seed;
        SynthInstance inst = generate(spec);

        const std::string panel_dir = sy.out + "/panel";
        save_panel(inst.panel, panel_dir);
        write_graph_csvs(inst.graph, panel_dir);
        save_params(inst.params, sy_opt.fit, sy.out + "/true_params.stva");
        for (const auto& entry : fs::directory_iterator(panel_dir))
            ctx.add_output(entry.path().string());
        ctx.add_output(sy.out + "/true_params.stva");
        ctx.write_manifest();
        std::cout << "synth: wrote " << panel_dir << " (" << inst.graph.size() << " counties, "
                  << inst.panel.n_weeks() << " weeks)\n";
        return 0;
    }

    if (*ingest_cmd) {
        RunContext ctx = setup("ingest", in.out, in_opt);
        auto start = parse_date(in.start);
        if (!start) throw ValidationError("ingest: bad --start date");
        if (!is_sunday(*start))
            throw ValidationError("ingest: --start must be a Sunday (weeks run Sunday-Saturday)");
        WeekRange weeks{*start, in.weeks};
        for (const auto& path :
             {in.counties_csv, in.adjacency_csv, in.epi_csv, in.mobility_csv, in.census_csv})
            ctx.add_input(path);
        CountyGraph graph = load_county_graph(in.counties_csv, in.adjacency_csv, in.mainland_only);
        IngestReport report;
        ObservationPanel panel =
            assemble_panel(in.epi_csv, in.mobility_csv, in.census_csv, graph, weeks, report);
        const std::string panel_dir = in.out + "/panel";
        save_panel(panel, panel_dir);
        write_graph_csvs(graph, panel_dir);
        {
            json j;
            j["unknown_fips_rows"] = report.unknown_fips_rows;
            j["malformed_rows"] = report.malformed_rows;
            j["duplicate_rows"] = report.duplicate_rows;
            j["negative_diffs_clamped"] = report.negative_diffs_clamped;
            j["zero_filled_counties"] = report.zero_filled_counties;
            j["imputed_mobility_cells"] = report.imputed_mobility_cells;
            j["degenerate_covariates"] = report.degenerate_covariates;
            std::ofstream out(in.out + "/ingest_report.json", std::ios::binary);
            out << j.dump(2) << '\n';
        }
        for (const auto& entry : fs::directory_iterator(panel_dir))
            ctx.add_output(entry.path().string());
        ctx.add_output(in.out + "/ingest_report.json");
        ctx.write_manifest();
        std::cout << report.summary() << '\n';
        return 0;
    }

    // All remaining commands start from a panel bundle.
    auto load_common = [&](const std::string& panel_dir, const std::string& counties_csv,
                           const std::string& adjacency_csv, const CommonOptions& opt,
                           RunContext& ctx) {
        ObservationPanel panel = load_panel(panel_dir);
        add_panel_inputs(ctx, panel_dir, panel);
        CountyGraph graph = graph_for_panel(panel_dir, counties_csv, adjacency_csv, false, ctx);
        if (graph.size() != panel.n_counties())
            throw ValidationError("panel and county graph disagree on N");
        SpatialCovariance cov =
            build_covariance(graph, opt.fit.eta, parse_distance_mode(opt.distance_mode));
        return std::make_tuple(std::move(panel), std::move(graph), std::move(cov));
    };

    if (*fit_cmd) {
        RunContext ctx = setup("fit", ft.out, ft_opt);
        auto [panel, graph, cov] = load_common(ft.panel, ft.counties_csv, ft.adjacency_csv, ft_opt, ctx);
        auto [params, report] =
            fit(panel, graph, cov, ft_opt.fit, parse_ablation(ft_opt.ablation));
        save_params(params, ft_opt.fit, ft.out + "/params.stva");
        write_fit_report(report, ft.out + "/report.json");
        ctx.add_output(ft.out + "/params.stva");
        ctx.add_output(ft.out + "/report.json");
        ctx.write_manifest();
        std::cout << "fit: " << report.iterations_used << " iterations, objective "
                  << report.final_objective << (report.converged ? " (converged)" : "") << '\n';
        if (!report.diagnostic.empty()) std::cerr << "fit: " << report.diagnostic << '\n';
        if (report.diverged) return 2;
        return 0;
    }

    if (*predict_cmd) {
        RunContext ctx = setup("predict", pr.out, pr_opt);
        auto [panel, graph, cov] = load_common(pr.panel, pr.counties_csv, pr.adjacency_csv, pr_opt, ctx);
        ctx.add_input(pr.params);
        auto [params, snap_cfg] = load_params(pr.params);
        snap_cfg.clamp_output = pr_opt.fit.clamp_output;
        PredictionSet pred = in_sample(params, panel, graph, snap_cfg);
        write_predictions_csv(pred, pr.out + "/predictions.csv");
        ctx.add_output(pr.out + "/predictions.csv");
        ctx.write_manifest();
        return 0;
    }

    if (*eval_cmd) {
        RunContext ctx = setup("evaluate", ev.out, ev_opt);
        auto [panel, graph, cov] = load_common(ev.panel, ev.counties_csv, ev.adjacency_csv, ev_opt, ctx);

        PredictionSet pred;
        if (ev.mode == "in-sample") {
            auto [params, report] =
                fit(panel, graph, cov, ev_opt.fit, parse_ablation(ev_opt.ablation));
            write_fit_report(report, ev.out + "/fit_report.json");
            ctx.add_output(ev.out + "/fit_report.json");
            pred = in_sample(params, panel, graph, ev_opt.fit);
        } else if (ev.mode == "one-week-ahead") {
            RollingOptions opts;
            opts.min_train_weeks = ev.min_train;
            opts.ablation = parse_ablation(ev_opt.ablation);
            if (!ev.start.empty()) {
                auto d = parse_date(ev.start);
                if (!d) throw ValidationError("evaluate: bad --start date");
                auto w = panel.weeks.week_of(*d);
                if (!w) throw ValidationError("evaluate: --start outside the panel window");
                opts.start_week = *w;
            }
            auto [rolled, reports] = rolling_predict(panel, graph, cov, ev_opt.fit, opts);
            pred = std::move(rolled);
            for (const auto& msg : pred.failed_weeks) std::cerr << "evaluate: skipped " << msg << '\n';
        } else {
            throw ValidationError("evaluate: --mode must be in-sample or one-week-ahead");
        }

        write_predictions_csv(pred, ev.out + "/predictions.csv");
        ctx.add_output(ev.out + "/predictions.csv");

        ScopeFilter scope;
        if (!ev.states.empty()) {
            std::stringstream ss(ev.states);
            std::string st;
            while (std::getline(ss, st, ',')) scope.states.push_back(st);
        }
        if (!ev.week_from.empty()) {
            auto d = parse_date(ev.week_from);
            if (!d) throw ValidationError("evaluate: bad --week-from");
            scope.week_from = d;
        }
        if (!ev.week_to.empty()) {
            auto d = parse_date(ev.week_to);
            if (!d) throw ValidationError("evaluate: bad --week-to");
            scope.week_to = d;
        }
        MaeReport report = mae(pred, parse_target(ev.target), scope);
        write_mae_csv(report, panel.weeks, ev.out + "/mae_report.csv");
        ctx.add_output(ev.out + "/mae_report.csv");

        json benchmark_summary = json::object();
        for (const auto& spec : ev.benchmarks) {
            const auto eq = spec.find('=');
            if (eq == std::string::npos)
                throw ValidationError("evaluate: --benchmark wants name=path, got " + spec);
            const std::string name = spec.substr(0, eq);
            const std::string path = spec.substr(eq + 1);
            ctx.add_input(path);
            const MaeReport bench = benchmark_mae(panel, graph, path);
            const std::string out_path = ev.out + "/benchmark_" + name + "_mae.csv";
            write_mae_csv(bench, panel.weeks, out_path);
            ctx.add_output(out_path);
            benchmark_summary[name] = bench.overall;
        }
        {
            json j;
            j["target"] = to_string(report.target);
            j["mode"] = to_string(pred.mode);
            j["clamped"] = report.clamped;
            j["overall_mae"] = report.overall;
            j["cells"] = report.cells;
            json per_state = json::object();
            for (const auto& [st, v] : report.per_state) per_state[st] = v;
            j["per_state"] = per_state;
            if (!benchmark_summary.empty()) j["benchmark_overall_mae"] = benchmark_summary;
            std::ofstream out(ev.out + "/mae_summary.json", std::ios::binary);
            out << j.dump(2) << '\n';
        }
        ctx.add_output(ev.out + "/mae_summary.json");
        ctx.write_manifest();
        std::cout << "evaluate: overall " << to_string(report.target) << " MAE "
                  << report.overall << " over " << report.cells << " cells\n";
        return 0;
    }

    if (*ablate_cmd) {
        RunContext ctx = setup("ablate", ab.out, ab_opt);
        auto [panel, graph, cov] = load_common(ab.panel, ab.counties_csv, ab.adjacency_csv, ab_opt, ctx);

        std::vector<AblationKind> kinds;
        {
            std::stringstream ss(ab.kinds);
            std::string k;
            while (std::getline(ss, k, ',')) kinds.push_back(parse_ablation(k));
        }
        std::map<AblationKind, MaeReport> reports;
        for (AblationKind kind : kinds) {
            auto [params, report] = fit(panel, graph, cov, ab_opt.fit, kind);
            PredictionSet pred = in_sample(params, panel, graph, ab_opt.fit);
            reports[kind] = mae(pred, parse_target(ab.target));
        }
        const auto rows = ablation_table(reports);
        {
            std::ofstream out(ab.out + "/ablation.csv", std::ios::binary);
            out << "model,mae,pct_mae_increase\n";
            char buf[64];
            for (const AblationRow& row : rows) {
                out << to_string(row.kind) << ',';
                std::snprintf(buf, sizeof(buf), "%.17g", row.mae);
                out << buf << ',';
                if (row.pct_increase) {
                    std::snprintf(buf, sizeof(buf), "%.2f%%", *row.pct_increase);
                    out << buf;
                }
                out << '\n';
            }
        }
        ctx.add_output(ab.out + "/ablation.csv");
        ctx.write_manifest();
        for (const AblationRow& row : rows) {
            std::cout << to_string(row.kind) << ": MAE " << row.mae;
            if (row.pct_increase) std::cout << " (+" << *row.pct_increase << "%)";
            std::cout << '\n';
        }
        return 0;
    }

    if (*cv_cmd) {
        RunContext ctx = setup("cv", cv.out, cv_opt);
        auto [panel, graph, covar] = load_common(cv.panel, cv.counties_csv, cv.adjacency_csv, cv_opt, ctx);
        CvResult result = cross_validate(panel, graph, covar, cv_opt.fit, cv.l1_grid, cv.l2_grid);
        {
            std::ofstream out(cv.out + "/cv.csv", std::ios::binary);
            out << "lambda1,lambda2,score\n";
            char buf[96];
            for (const CvCell& cell : result.cells) {
                std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g", cell.lambda1, cell.lambda2,
                              cell.score);
                out << buf << '\n';
            }
        }
        ctx.add_output(cv.out + "/cv.csv");
        ctx.config["best_lambda1"] = result.best_lambda1;
        ctx.config["best_lambda2"] = result.best_lambda2;
        ctx.write_manifest();
        std::cout << "cv: best lambda1 " << result.best_lambda1 << ", lambda2 "
                  << result.best_lambda2 << '\n';
        return 0;
    }

    if (*coef_cmd) {
        RunContext ctx = setup("coef", co.out, co_opt);
        auto [panel, graph, cov] = load_common(co.panel, co.counties_csv, co.adjacency_csv, co_opt, ctx);
        ctx.add_input(co.params);
        auto [params, snap_cfg] = load_params(co.params);

        SignificanceReport sig;
        const SignificanceReport* sig_ptr = nullptr;
        if (co.with_significance) {
            sig = significance(params, panel, cov, snap_cfg);
            sig_ptr = &sig;
        }
        write_coefficients_csv(params, graph, sig_ptr, co.out + "/coefficients.csv");
        ctx.add_output(co.out + "/coefficients.csv");
        write_covariate_coefficients_csv(params, panel, sig_ptr,
                                         co.out + "/covariate_coefficients.csv");
        ctx.add_output(co.out + "/covariate_coefficients.csv");

        if (!co.focus.empty()) {
            const int focus = graph.index_of(co.focus);
            if (focus < 0) throw ValidationError("coef: unknown focus FIPS " + co.focus);
            const LagMatrix m = parse_lag_matrix(co.matrix);
            const auto rows = coefficient_export(params, graph, focus, m, co.lag);
            const std::string stem =
                co.out + "/export_" + co.focus + "_" + co.matrix + std::to_string(co.lag);
            write_export_csv(rows, graph, focus, m, co.lag, stem + ".csv");
            write_export_geojson(rows, graph, stem + ".geojson");
            ctx.add_output(stem + ".csv");
            ctx.add_output(stem + ".geojson");
        }
        ctx.write_manifest();
        return 0;
    }

    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run_cli(argc, argv);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
