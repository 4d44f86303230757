// dagfss: command-line front end for filter design, calibration, simulation
// and the reproduction experiments. Exit status: 0 success, 2 a validation
// check failed, 1 error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "dagfss/arma.hpp"
#include "dagfss/calibration.hpp"
#include "dagfss/distributed.hpp"
#include "dagfss/experiment.hpp"
#include "dagfss/gfss.hpp"

namespace fs = std::filesystem;
using namespace dagfss;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_error = 1;
constexpr int exit_check_failed = 2;

/// Command-line overrides of ExperimentConfig; unset fields keep the value
/// from --config or the default.
struct Overrides {
    std::string config_file;
    std::optional<std::string> graph_file;
    std::optional<std::size_t> p;
    std::optional<std::size_t> clusters;
    std::optional<double> p_in;
    std::optional<double> p_out;
    std::optional<std::uint64_t> graph_seed;
    std::optional<double> gamma;
    std::optional<std::size_t> K;
    std::optional<double> beta;
    std::optional<std::size_t> n_grid;
    std::optional<double> max_noise_gain;
    std::optional<double> lambda_slow;
    std::optional<double> lambda_fast;
    std::optional<double> sigma2;
    std::optional<double> alpha;
    std::optional<long> t_r;
    std::optional<double> delta;
    std::optional<int> target_cluster;
    std::optional<long> T;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> detector;
    std::optional<long> window;
    std::optional<long> burn_in;
    std::optional<long> localization_offset;
    std::optional<std::string> output_dir;
};

void add_config_options(CLI::App* app, Overrides& o, bool needs_seed) {
    app->add_option("--config", o.config_file, "JSON experiment config")->check(CLI::ExistingFile);
    app->add_option("--graph", o.graph_file, "JSON graph with cluster labels (default: generate)");
    app->add_option("--p", o.p, "generated graph: vertex count");
    app->add_option("--clusters", o.clusters, "generated graph: cluster count");
    app->add_option("--p-in", o.p_in, "generated graph: edge probability inside a cluster");
    app->add_option("--p-out", o.p_out, "generated graph: edge probability across clusters");
    app->add_option("--graph-seed", o.graph_seed, "generated graph: seed");
    app->add_option("--gamma", o.gamma, "GFSS tuning parameter");
    app->add_option("--K", o.K, "ARMA order");
    app->add_option("--beta", o.beta, "lower bound on the fitted denominator");
    app->add_option("--n-grid", o.n_grid, "design grid size");
    app->add_option("--max-noise-gain", o.max_noise_gain, "bound on the filter's white-noise power gain");
    app->add_option("--lambda-slow", o.lambda_slow, "slow EWMA rate");
    app->add_option("--lambda-fast", o.lambda_fast, "fast EWMA rate");
    app->add_option("--sigma2", o.sigma2, "noise variance");
    app->add_option("--alpha", o.alpha, "global type-1 error");
    app->add_option("--t-r", o.t_r, "change time");
    app->add_option("--delta", o.delta, "change magnitude");
    app->add_option("--target-cluster", o.target_cluster, "changed cluster (-1 rotates across runs)");
    app->add_option("--T", o.T, "horizon");
    auto* seed = app->add_option("--seed", o.seed, "noise seed");
    if (needs_seed) {
        seed->required();
    }
    app->add_option("--detector", o.detector, "coherent | squared-norm | independent | centralized");
    app->add_option("--window", o.window, "detection window length after t_r");
    app->add_option("--burn-in", o.burn_in, "ticks ignored before false alarms are counted");
    app->add_option("--localization-offset", o.localization_offset, "snapshot tick after t_r");
    app->add_option("--out", o.output_dir, "output directory");
}

template <class T>
void apply(const std::optional<T>& v, T& field) {
    if (v) {
        field = *v;
    }
}

ExperimentConfig resolve(const Overrides& o) {
    ExperimentConfig c;
    if (!o.config_file.empty()) {
        std::ifstream in(o.config_file);
        c = nlohmann::json::parse(in).get<ExperimentConfig>();
    }
    apply(o.graph_file, c.graph.file);
    apply(o.p, c.graph.p);
    apply(o.clusters, c.graph.clusters);
    apply(o.p_in, c.graph.p_in);
    apply(o.p_out, c.graph.p_out);
    apply(o.graph_seed, c.graph.seed);
    apply(o.gamma, c.gamma);
    apply(o.K, c.K);
    apply(o.beta, c.beta);
    apply(o.n_grid, c.n_grid);
    apply(o.max_noise_gain, c.max_noise_gain);
    apply(o.lambda_slow, c.lambda_slow);
    apply(o.lambda_fast, c.lambda_fast);
    apply(o.sigma2, c.sigma2);
    apply(o.alpha, c.alpha);
    apply(o.t_r, c.t_r);
    apply(o.delta, c.delta);
    apply(o.target_cluster, c.target_cluster);
    apply(o.T, c.T);
    apply(o.seed, c.seed);
    if (o.detector) {
        c.detector = parse_detector(*o.detector);
    }
    apply(o.window, c.window);
    apply(o.burn_in, c.burn_in);
    apply(o.localization_offset, c.localization_offset);
    apply(o.output_dir, c.output_dir);
    c.validate();
    return c;
}

fs::path output_path(const ExperimentConfig& c, const std::string& name) {
    const fs::path dir(c.output_dir);
    fs::create_directories(dir);
    return dir / name;
}

std::ofstream open_output(const ExperimentConfig& c, const std::string& name) {
    const fs::path path = output_path(c, name);
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    return out;
}

void write_json(const ExperimentConfig& c, const std::string& name, const nlohmann::json& j) {
    open_output(c, name) << j.dump(2) << '\n';
}

void report(const nlohmann::json& summary) {
    std::cout << summary.dump(2) << std::endl;
}

nlohmann::json setup_summary(const ExperimentSetup& s) {
    return {{"p", s.graph.graph.vertex_count()},
            {"m", s.graph.graph.edge_count()},
            {"rho", s.spectrum.spectral_radius},
            {"fit_error", s.design.max_relative_error},
            {"noise_gain", s.design.noise_gain},
            {"stability_margin", s.design.stability.margin}};
}

ClusteredGraph load_graph(const ExperimentConfig& c) {
    if (c.graph.file.empty()) {
        return generate_clustered_graph(c.graph.p, c.graph.clusters, c.graph.p_in, c.graph.p_out, c.graph.seed);
    }
    std::ifstream in(c.graph.file);
    if (!in) {
        throw std::runtime_error("cannot read " + c.graph.file);
    }
    return graph_from_json(nlohmann::json::parse(in));
}

int cmd_graph(const ExperimentConfig& c) {
    const ClusteredGraph g = load_graph(c);
    const LaplacianSpectrum spec = spectrum(normalized_laplacian(g.graph));
    write_json(c, "graph.json", graph_to_json(g.graph, &g.labels));
    {
        auto out = open_output(c, "graph_edges.txt");
        write_edge_list(out, g.graph);
    }
    {
        auto out = open_output(c, "graph_vertices.csv");
        out << "vertex,cluster,degree\n";
        for (Vertex i = 0; i < g.graph.vertex_count(); ++i) {
            out << i << ',' << g.labels[i] << ',' << g.graph.degree(i) << '\n';
        }
    }
    {
        auto out = open_output(c, "spectrum.csv");
        out.precision(17);
        out << "index,eigenvalue\n";
        for (Eigen::Index k = 0; k < spec.eigenvalues.size(); ++k) {
            out << k << ',' << spec.eigenvalues(k) << '\n';
        }
    }
    report({{"p", g.graph.vertex_count()},
            {"m", g.graph.edge_count()},
            {"expected_m", expected_edge_count(c.graph.p, c.graph.clusters, c.graph.p_in, c.graph.p_out)},
            {"attempts", g.attempts},
            {"rho", spec.spectral_radius}});
    return exit_ok;
}

int cmd_design(const ExperimentConfig& c, std::optional<double> rho_override, bool unbounded) {
    double rho = 0.0;
    if (rho_override) {
        rho = *rho_override;
    } else {
        rho = spectrum(normalized_laplacian(load_graph(c).graph)).spectral_radius;
    }
    DesignOptions o;
    if (!unbounded) {
        o.max_noise_gain = c.max_noise_gain;
    }
    const FilterDesign d = design_gfss_arma(c.gamma, c.K, c.beta, c.n_grid, rho, o);
    write_json(c, "filter.json", d);
    {
        auto out = open_output(c, "response.csv");
        out.precision(12);
        out << "mu,h,h_star,noise_gain\n";
        for (int i = 0; i <= 400; ++i) {
            const double mu = 2.0 * i / 400.0;
            double h = std::numeric_limits<double>::quiet_NaN();
            try {
                h = evaluate_response(d.filter, mu);
            } catch (const std::domain_error&) {
            }
            out << mu << ',' << h << ',' << h_star(mu, c.gamma) << ',' << noise_power_gain(d.filter, mu) << '\n';
        }
    }
    report({{"K", d.K},
            {"rho", rho},
            {"max_relative_error", d.max_relative_error},
            {"noise_gain", d.noise_gain},
            {"stability_margin", d.stability.margin},
            {"stable", d.stability.stable}});
    return exit_ok;
}

int cmd_calibrate(const ExperimentConfig& c) {
    const ExperimentSetup s = prepare_experiment(c);
    write_json(c, "filter.json", s.design);
    write_json(c, "calibration.json", s.thresholds(c.detector));
    nlohmann::json summary = setup_summary(s);
    const auto& xi = s.thresholds(c.detector).xi;
    summary["detector"] = to_string(c.detector);
    summary["xi_min"] = *std::min_element(xi.begin(), xi.end());
    summary["xi_max"] = *std::max_element(xi.begin(), xi.end());
    report(summary);
    return exit_ok;
}

int cmd_simulate(const ExperimentConfig& c, const std::string& stream_file, std::size_t run, bool save_stream) {
    const ExperimentSetup s = prepare_experiment(c);
    const ChangeSpec change = change_for_run(s, run);
    std::vector<Eigen::VectorXd> y;
    if (stream_file.empty()) {
        y = synthesize_signal(s.graph.labels, c.sigma2, change, c.T, c.seed, 0x100000000ULL + run);
        if (save_stream) {
            write_stream(output_path(c, "stream.bin"), y);
        }
    } else {
        y = read_stream(stream_file);
    }
    SimulationConfig sc;
    sc.lambda_slow = c.lambda_slow;
    sc.lambda_fast = c.lambda_fast;
    sc.detector = c.detector;
    sc.thresholds = s.thresholds(c.detector).xi;
    const DetectionRun r = run_simulation(s.graph.graph, s.design.filter, y, sc);
    {
        auto out = open_output(c, "run.csv");
        write_run_csv(out, r);
    }
    nlohmann::json summary = run_summary(r);
    summary["t_r"] = change.t_r;
    summary["target_cluster"] = change.target_cluster;
    std::vector<Vertex> changed;
    for (Vertex i = 0; i < s.graph.labels.size(); ++i) {
        if (s.graph.labels[i] == change.target_cluster) {
            changed.push_back(i);
        }
    }
    summary["changed_vertices"] = changed;
    write_json(c, "run_summary.json", summary);
    long first_after_change = -1;
    std::size_t after_burn_in = 0;
    std::size_t before_change = 0;
    for (const Alarm& a : r.alarms) {
        if (a.tick >= change.t_r) {
            if (first_after_change < 0 || a.tick < first_after_change) {
                first_after_change = a.tick;
            }
        } else if (a.tick >= c.burn_in) {
            ++before_change;
        }
        if (a.tick >= c.burn_in) {
            ++after_burn_in;
        }
    }
    report({{"alarms_after_burn_in", after_burn_in},
            {"false_alarms_before_change", before_change},
            {"first_alarm_after_change", first_after_change},
            {"ticks", r.ticks()},
            {"target_cluster", change.target_cluster},
            {"messages", summary["messages"]}});
    return exit_ok;
}

int cmd_agfss(const ExperimentConfig& c, std::size_t run, std::optional<double> threshold) {
    const ExperimentSetup s = prepare_experiment(c);
    const ChangeSpec change = change_for_run(s, run);
    const auto y = synthesize_signal(s.graph.labels, c.sigma2, change, c.T, c.seed, 0x100000000ULL + run);
    GfssConfig g;
    g.gamma = c.gamma;
    g.sigma2 = c.sigma2;
    g.lambda_slow = c.lambda_slow;
    g.lambda_fast = c.lambda_fast;
    if (threshold) {
        g.threshold = *threshold;
    } else {
        // Largest statistic over the window before the change.
        GfssConfig probe = g;
        probe.threshold = std::numeric_limits<double>::max();
        double top = 0.0;
        for (const AgfssRecord& r : run_agfss(y, s.spectrum, probe)) {
            if (r.t >= std::max(c.burn_in, c.t_r - c.window) && r.t < c.t_r) {
                top = std::max(top, r.statistic);
            }
        }
        g.threshold = top;
    }
    const auto records = run_agfss(y, s.spectrum, g);
    long first_after = -1;
    {
        auto out = open_output(c, "agfss.csv");
        out.precision(12);
        out << "t,statistic,flag\n";
        for (const AgfssRecord& r : records) {
            out << r.t << ',' << r.statistic << ',' << (r.flag ? 1 : 0) << '\n';
            if (r.flag && r.t >= c.t_r && first_after < 0) {
                first_after = r.t;
            }
        }
    }
    report({{"threshold", g.threshold}, {"t_r", c.t_r}, {"first_flag_after_change", first_after}});
    return exit_ok;
}

int cmd_roc(const ExperimentConfig& c, std::size_t h0, std::size_t h1) {
    const ExperimentSetup s = prepare_experiment(c);
    const RocResult r = run_roc(s, h0, h1);
    {
        auto out = open_output(c, "roc.csv");
        write_roc_csv(out, r);
    }
    {
        auto out = open_output(c, "roc_scores.csv");
        out.precision(12);
        out << "detector,hypothesis,run,score\n";
        for (const RocCurve& curve : r.curves) {
            for (std::size_t k = 0; k < curve.h0_scores.size(); ++k) {
                out << to_string(curve.detector) << ",H0," << k << ',' << curve.h0_scores[k] << '\n';
            }
            for (std::size_t k = 0; k < curve.h1_scores.size(); ++k) {
                out << to_string(curve.detector) << ",H1," << k << ',' << curve.h1_scores[k] << '\n';
            }
        }
    }
    nlohmann::json summary = setup_summary(s);
    for (const RocCurve& curve : r.curves) {
        summary["pd"][to_string(curve.detector)] = {
            {"pfa_0.05", curve.pd_at(0.05)}, {"pfa_0.1", curve.pd_at(0.1)}, {"pfa_0.2", curve.pd_at(0.2)}};
    }
    write_json(c, "roc_summary.json", summary);
    report(summary);
    return exit_ok;
}

int cmd_delay(const ExperimentConfig& c, std::size_t runs) {
    const ExperimentSetup s = prepare_experiment(c);
    const DelayResult r = run_delay(s, runs);
    {
        auto out = open_output(c, "delay.csv");
        write_delay_csv(out, r);
    }
    nlohmann::json summary = setup_summary(s);
    for (const auto& [det, q] : r.summary) {
        summary["delay"][to_string(det)] = {
            {"detected", q[0]}, {"median", q[1]}, {"q25", q[2]}, {"q75", q[3]}};
    }
    write_json(c, "delay_summary.json", summary);
    report(summary);
    return exit_ok;
}

int cmd_localize(const ExperimentConfig& c, std::size_t runs) {
    const ExperimentSetup s = prepare_experiment(c);
    const LocalizationResult r = run_localization(s, runs);
    {
        auto out = open_output(c, "localization.csv");
        write_localization_csv(out, s, r.runs.front());
    }
    {
        auto out = open_output(c, "localization_runs.csv");
        out << "run,target_cluster,alarms,precision,recall\n";
        for (const LocalizationSnapshot& snap : r.runs) {
            out << snap.run << ',' << snap.target_cluster << ','
                << std::count(snap.alarm.begin(), snap.alarm.end(), true) << ',' << snap.precision << ','
                << snap.recall << '\n';
        }
    }
    nlohmann::json summary = setup_summary(s);
    summary["runs"] = runs;
    summary["tick"] = c.t_r + c.localization_offset;
    summary["mean_precision"] = r.mean_precision;
    summary["mean_recall"] = r.mean_recall;
    summary["runs_with_alarm"] = r.runs_with_alarm;
    summary["detection_rate"] = r.detection_rate;
    write_json(c, "localization_summary.json", summary);
    report(summary);
    return exit_ok;
}

int cmd_validate(const ExperimentConfig& c, const ValidationOptions& vo, bool unbounded) {
    const ClusteredGraph g = load_graph(c);
    if (g.graph.vertex_count() > 50) {
        throw std::invalid_argument("validate: the dense Monte-Carlo check needs p <= 50, got " +
                                    std::to_string(g.graph.vertex_count()));
    }
    const double rho = spectrum(normalized_laplacian(g.graph)).spectral_radius;
    DesignOptions o;
    if (!unbounded) {
        o.max_noise_gain = c.max_noise_gain;
    }
    const FilterDesign d = design_gfss_arma(c.gamma, c.K, c.beta, c.n_grid, rho, o);
    const ValidationResult r = run_validation(g.graph, d.filter, c.sigma2, c.lambda_slow, c.lambda_fast, c.seed, vo);
    nlohmann::json summary = validation_summary(r);
    summary["p"] = g.graph.vertex_count();
    summary["tolerance"] = vo.tolerance;
    summary["fit_error"] = d.max_relative_error;
    summary["noise_gain"] = d.noise_gain;
    write_json(c, "validation.json", summary);
    {
        auto out = open_output(c, "validation_modes.csv");
        out.precision(12);
        out << "mode,mu,q_closed_form,q_sample,r_eta_q,r_exact,r_sample\n";
        const LaplacianSpectrum spec = spectrum(normalized_laplacian(g.graph));
        const Eigen::MatrixXd& u = spec.eigenvectors;
        const auto mode = [&](const Eigen::MatrixXd& m, Eigen::Index k) { return u.col(k).dot(m * u.col(k)); };
        for (Eigen::Index k = 0; k < u.cols(); ++k) {
            out << k << ',' << spec.eigenvalues(k) << ',' << mode(r.q_inf, k) << ',' << mode(r.q_sample, k) << ','
                << mode(r.r_inf, k) << ',' << mode(r.r_colored, k) << ',' << mode(r.r_sample, k) << '\n';
        }
    }
    report(summary);
    return r.q_pass && r.r_pass ? exit_ok : exit_check_failed;
}

int cmd_pfa(const ExperimentConfig& c, std::size_t snapshots, std::size_t chains, long burn, long spacing) {
    const ExperimentSetup s = prepare_experiment(c);
    const FalseAlarmResult r = run_false_alarm(s, snapshots, chains, burn, spacing);
    const double bound = c.alpha + 3.0 * r.binomial_sd;
    nlohmann::json summary = setup_summary(s);
    summary["detector"] = to_string(c.detector);
    summary["snapshots"] = r.snapshots;
    summary["alarms"] = r.alarms;
    summary["rate"] = r.rate;
    summary["bound"] = bound;
    summary["pass"] = r.rate <= bound;
    write_json(c, "pfa.json", summary);
    report(summary);
    return r.rate <= bound ? exit_ok : exit_check_failed;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Distributed adaptive graph-filter change detection"};
    app.require_subcommand(1);

    Overrides o;
    std::optional<double> rho;
    bool unbounded = false;
    std::string stream_file;
    std::size_t run = 0;
    bool save_stream = false;
    std::optional<double> threshold;
    std::size_t h0 = 50;
    std::size_t h1 = 50;
    std::size_t runs = 50;
    ValidationOptions vo;
    std::size_t snapshots = 10000;
    std::size_t chains = 100;
    long burn = 2000;
    long spacing = 100;

    auto* graph = app.add_subcommand("graph", "generate or load the clustered graph and export it");
    add_config_options(graph, o, false);

    auto* design = app.add_subcommand("design", "fit the ARMA filter and export its response");
    add_config_options(design, o, false);
    design->add_option("--rho", rho, "spectral radius (default: from the graph)");
    design->add_flag("--unbounded", unbounded, "ignore the noise-gain bound (most accurate fit)");

    auto* calibrate = app.add_subcommand("calibrate", "thresholds for the configured detector");
    add_config_options(calibrate, o, false);

    auto* simulate = app.add_subcommand("simulate", "one run of the message-passing detector");
    add_config_options(simulate, o, true);
    simulate->add_option("--stream", stream_file, "input stream (.csv or binary); default: synthesized");
    simulate->add_option("--run", run, "run index (selects the noise stream and rotated cluster)");
    simulate->add_flag("--save-stream", save_stream, "also write the synthesized stream");

    auto* agfss = app.add_subcommand("agfss", "centralized adaptive GFSS statistic over one run");
    add_config_options(agfss, o, true);
    agfss->add_option("--run", run, "run index");
    agfss->add_option("--threshold", threshold, "flag threshold (default: largest value in the window before t_r)");

    auto* roc = app.add_subcommand("roc", "ROC curves of the four detectors");
    add_config_options(roc, o, true);
    roc->add_option("--h0", h0, "runs without change")->check(CLI::PositiveNumber);
    roc->add_option("--h1", h1, "runs with change")->check(CLI::PositiveNumber);

    auto* delay = app.add_subcommand("delay", "detection delays of the four detectors");
    add_config_options(delay, o, true);
    delay->add_option("--runs", runs, "runs")->check(CLI::PositiveNumber);

    auto* localize = app.add_subcommand("localize", "statistic snapshot after the change, precision and recall");
    add_config_options(localize, o, true);
    localize->add_option("--runs", runs, "runs")->check(CLI::PositiveNumber);

    auto* validate = app.add_subcommand("validate", "Monte-Carlo check of the closed-form covariances");
    add_config_options(validate, o, true);
    validate->add_option("--samples", vo.samples, "Monte-Carlo samples");
    validate->add_option("--chains", vo.chains, "independent chains");
    validate->add_option("--chain-burn-in", vo.burn_in, "ticks before the first sample");
    validate->add_option("--spacing", vo.spacing, "ticks between samples of one chain");
    validate->add_option("--tolerance", vo.tolerance, "relative Frobenius tolerance");
    validate->add_flag("--unbounded", unbounded, "ignore the noise-gain bound");

    auto* pfa = app.add_subcommand("pfa", "steady-state false-alarm rate of the calibrated thresholds");
    add_config_options(pfa, o, true);
    pfa->add_option("--snapshots", snapshots, "H0 snapshots");
    pfa->add_option("--chains", chains, "independent chains");
    pfa->add_option("--chain-burn-in", burn, "ticks before the first snapshot");
    pfa->add_option("--spacing", spacing, "ticks between snapshots of one chain");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? exit_ok : exit_error;
    }

    try {
        const ExperimentConfig c = resolve(o);
        if (!graph->parsed() && !design->parsed() && !calibrate->parsed()) {
            write_json(c, "config.json", c);
        }
        if (graph->parsed()) return cmd_graph(c);
        if (design->parsed()) return cmd_design(c, rho, unbounded);
        if (calibrate->parsed()) return cmd_calibrate(c);
        if (simulate->parsed()) return cmd_simulate(c, stream_file, run, save_stream);
        if (agfss->parsed()) return cmd_agfss(c, run, threshold);
        if (roc->parsed()) return cmd_roc(c, h0, h1);
        if (delay->parsed()) return cmd_delay(c, runs);
        if (localize->parsed()) return cmd_localize(c, runs);
        if (validate->parsed()) return cmd_validate(c, vo, unbounded);
        if (pfa->parsed()) return cmd_pfa(c, snapshots, chains, burn, spacing);
    } catch (const std::exception& e) {
        std::cerr << "dagfss: " << e.what() << '\n';
        return exit_error;
    }
    return exit_error;
}
