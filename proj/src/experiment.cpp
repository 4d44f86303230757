#include "dagfss/experiment.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <queue>
#include <set>
#include <sstream>
#include <stdexcept>

#include "dagfss/distributed.hpp"
#include "dagfss/rng.hpp"

namespace dagfss {

namespace {

constexpr std::uint64_t h1_streams = 0x100000000ULL;
constexpr std::uint64_t h0_streams = 0x200000000ULL;
constexpr std::uint64_t validation_streams = 0x300000000ULL;
constexpr std::uint64_t false_alarm_streams = 0x400000000ULL;

bool connected(const Graph& g) {
    const std::size_t p = g.vertex_count();
    if (p == 0) {
        return false;
    }
    std::vector<bool> seen(p, false);
    std::queue<Vertex> queue;
    queue.push(0);
    seen[0] = true;
    std::size_t reached = 1;
    while (!queue.empty()) {
        const Vertex v = queue.front();
        queue.pop();
        for (const Neighbor& n : g.neighbors(v)) {
            if (!seen[n.vertex]) {
                seen[n.vertex] = true;
                ++reached;
                queue.push(n.vertex);
            }
        }
    }
    return reached == p;
}

std::vector<std::size_t> cluster_sizes(std::size_t p, std::size_t k) {
    std::vector<std::size_t> sizes(k, p / k);
    for (std::size_t c = 0; c < p % k; ++c) {
        ++sizes[c];
    }
    return sizes;
}

int cluster_count(const std::vector<int>& labels) {
    return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
}

double quantile(std::vector<double> v, double q) {
    if (v.empty()) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

} // namespace

// ---------------------------------------------------------------------------
// Graphs

double expected_edge_count(std::size_t p, std::size_t k, double p_in, double p_out) {
    const auto sizes = cluster_sizes(p, k);
    double inside = 0.0;
    double across = 0.0;
    for (std::size_t a = 0; a < k; ++a) {
        const auto s = static_cast<double>(sizes[a]);
        inside += s * (s - 1.0) / 2.0;
        for (std::size_t b = a + 1; b < k; ++b) {
            across += s * static_cast<double>(sizes[b]);
        }
    }
    return inside * p_in + across * p_out;
}

ClusteredGraph generate_clustered_graph(std::size_t p, std::size_t k, double p_in, double p_out,
                                        std::uint64_t seed) {
    if (k == 0 || k > p) {
        throw std::invalid_argument("generate_clustered_graph: need 1 <= k <= p");
    }
    if (!(0.0 <= p_out && p_out < p_in && p_in <= 1.0)) {
        throw std::invalid_argument("generate_clustered_graph: need 0 <= p_out < p_in <= 1");
    }
    std::vector<int> labels;
    const auto sizes = cluster_sizes(p, k);
    for (std::size_t c = 0; c < k; ++c) {
        labels.insert(labels.end(), sizes[c], static_cast<int>(c));
    }
    constexpr std::size_t max_attempts = 100;
    for (std::size_t attempt = 0; attempt < max_attempts; ++attempt) {
        CounterRng rng(derive_seed(seed, 0x67726170ULL), attempt);
        std::vector<Edge> edges;
        for (Vertex i = 0; i < p; ++i) {
            for (Vertex j = i + 1; j < p; ++j) {
                const double prob = labels[i] == labels[j] ? p_in : p_out;
                if (rng.uniform() < prob) {
                    edges.push_back({i, j, 1.0});
                }
            }
        }
        Graph g(p, edges);
        if (connected(g)) {
            return {std::move(g), labels, attempt + 1};
        }
    }
    throw std::runtime_error("generate_clustered_graph: no connected graph after 100 draws; raise p_out or p_in");
}

nlohmann::json graph_to_json(const Graph& g, const std::vector<int>* labels) {
    nlohmann::json edges = nlohmann::json::array();
    for (const Edge& e : g.edges()) {
        edges.push_back({e.i, e.j, e.w});
    }
    nlohmann::json j{{"p", g.vertex_count()}, {"edges", edges}};
    if (labels != nullptr) {
        j["labels"] = *labels;
    }
    return j;
}

ClusteredGraph graph_from_json(const nlohmann::json& j) {
    const auto p = j.at("p").get<std::size_t>();
    std::vector<Edge> edges;
    for (const auto& e : j.at("edges")) {
        if (!e.is_array() || e.size() != 3) {
            throw GraphError("graph JSON: each edge must be [i, j, w]");
        }
        edges.push_back({e[0].get<Vertex>(), e[1].get<Vertex>(), e[2].get<double>()});
    }
    ClusteredGraph out{Graph(p, edges), {}, 1};
    if (j.contains("labels")) {
        out.labels = j.at("labels").get<std::vector<int>>();
        if (out.labels.size() != p) {
            throw GraphError("graph JSON: " + std::to_string(out.labels.size()) + " labels for " +
                             std::to_string(p) + " vertices");
        }
        for (int l : out.labels) {
            if (l < 0) {
                throw GraphError("graph JSON: negative cluster label");
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Signals

std::vector<Eigen::VectorXd> synthesize_signal(const std::vector<int>& labels, double sigma2,
                                               const ChangeSpec& change, long T, std::uint64_t seed,
                                               std::uint64_t stream) {
    if (labels.empty()) {
        throw std::invalid_argument("synthesize_signal: no cluster labels");
    }
    if (change.target_cluster < 0 || change.target_cluster >= cluster_count(labels)) {
        throw std::invalid_argument("synthesize_signal: invalid target cluster " +
                                    std::to_string(change.target_cluster));
    }
    if (!(sigma2 >= 0.0) || !std::isfinite(change.delta) || T <= 0) {
        throw std::invalid_argument("synthesize_signal: need sigma2 >= 0, finite delta and T > 0");
    }
    const auto p = static_cast<Eigen::Index>(labels.size());
    const double sd = std::sqrt(sigma2);
    std::vector<Eigen::VectorXd> out(static_cast<std::size_t>(T), Eigen::VectorXd(p));
    for (long t = 0; t < T; ++t) {
        Eigen::VectorXd& y = out[static_cast<std::size_t>(t)];
        for (Eigen::Index i = 0; i < p; ++i) {
            const int label = labels[static_cast<std::size_t>(i)];
            double v = label;
            if (sd > 0.0) {
                v += sd * gaussian_at(seed, stream, static_cast<std::uint64_t>(t) * static_cast<std::uint64_t>(p) +
                                                        static_cast<std::uint64_t>(i));
            }
            if (t >= change.t_r && label == change.target_cluster) {
                v += change.delta;
            }
            y(i) = v;
        }
    }
    return out;
}

void write_stream_csv(std::ostream& out, const std::vector<Eigen::VectorXd>& stream) {
    out.precision(17);
    for (const auto& y : stream) {
        for (Eigen::Index i = 0; i < y.size(); ++i) {
            out << (i ? "," : "") << y(i);
        }
        out << '\n';
    }
}

std::vector<Eigen::VectorXd> read_stream_csv(std::istream& in) {
    std::vector<Eigen::VectorXd> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') {
            continue;
        }
        std::vector<double> values;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t used = 0;
                values.push_back(std::stod(cell, &used));
                if (cell.find_first_not_of(" \t\r", used) != std::string::npos) {
                    throw std::invalid_argument(cell);
                }
            } catch (const std::exception&) {
                throw std::runtime_error("stream line " + std::to_string(line_no) + ": bad value '" + cell + "'");
            }
        }
        if (!out.empty() && static_cast<Eigen::Index>(values.size()) != out.front().size()) {
            throw std::runtime_error("stream line " + std::to_string(line_no) + ": " + std::to_string(values.size()) +
                                     " values, expected " + std::to_string(out.front().size()));
        }
        out.emplace_back(Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size())));
    }
    return out;
}

void write_stream_binary(std::ostream& out, const std::vector<Eigen::VectorXd>& stream) {
    static_assert(std::endian::native == std::endian::little, "binary streams assume a little-endian host");
    const std::uint32_t version = 1;
    const std::uint64_t p = stream.empty() ? 0 : static_cast<std::uint64_t>(stream.front().size());
    const std::uint64_t T = stream.size();
    out.write("GSTR", 4);
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&p), sizeof p);
    out.write(reinterpret_cast<const char*>(&T), sizeof T);
    for (const auto& y : stream) {
        if (static_cast<std::uint64_t>(y.size()) != p) {
            throw std::invalid_argument("write_stream_binary: ragged stream");
        }
        out.write(reinterpret_cast<const char*>(y.data()), static_cast<std::streamsize>(p * sizeof(double)));
    }
}

std::vector<Eigen::VectorXd> read_stream_binary(std::istream& in) {
    char magic[4];
    std::uint32_t version = 0;
    std::uint64_t p = 0;
    std::uint64_t T = 0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    in.read(reinterpret_cast<char*>(&p), sizeof p);
    in.read(reinterpret_cast<char*>(&T), sizeof T);
    if (!in || std::memcmp(magic, "GSTR", 4) != 0) {
        throw std::runtime_error("binary stream: bad header");
    }
    if (version != 1) {
        throw std::runtime_error("binary stream: unsupported version " + std::to_string(version));
    }
    if (p > (1ULL << 32) || T > (1ULL << 40)) {
        throw std::runtime_error("binary stream: implausible dimensions");
    }
    std::vector<Eigen::VectorXd> out;
    out.reserve(static_cast<std::size_t>(T));
    for (std::uint64_t t = 0; t < T; ++t) {
        Eigen::VectorXd y(static_cast<Eigen::Index>(p));
        in.read(reinterpret_cast<char*>(y.data()), static_cast<std::streamsize>(p * sizeof(double)));
        if (!in) {
            throw std::runtime_error("binary stream: truncated at tick " + std::to_string(t));
        }
        out.push_back(std::move(y));
    }
    return out;
}

std::vector<Eigen::VectorXd> read_stream(const std::filesystem::path& path) {
    const bool csv = path.extension() == ".csv";
    std::ifstream in(path, csv ? std::ios::in : std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    return csv ? read_stream_csv(in) : read_stream_binary(in);
}

void write_stream(const std::filesystem::path& path, const std::vector<Eigen::VectorXd>& stream) {
    const bool csv = path.extension() == ".csv";
    std::ofstream out(path, csv ? std::ios::out : std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    if (csv) {
        write_stream_csv(out, stream);
    } else {
        write_stream_binary(out, stream);
    }
}

// ---------------------------------------------------------------------------
// Configuration

void ExperimentConfig::validate() const {
    const auto fail = [](const std::string& what) { throw std::invalid_argument("config: " + what); };
    if (!(gamma > 0.0)) fail("gamma must be positive");
    if (K == 0) fail("K must be at least 1");
    if (!(beta > 0.0 && beta < 1.0)) fail("beta must lie in (0, 1)");
    if (n_grid < 2 * K + 1) fail("n_grid must be at least 2K + 1");
    if (!(max_noise_gain > 0.0)) fail("max_noise_gain must be positive");
    if (!(0.0 < lambda_slow && lambda_slow < 1.0 && 0.0 < lambda_fast && lambda_fast < 1.0))
        fail("learning rates must lie in (0, 1)");
    if (!(sigma2 > 0.0)) fail("sigma2 must be positive");
    if (!(alpha > 0.0 && alpha < 1.0)) fail("alpha must lie in (0, 1)");
    if (!(0 < t_r && t_r < T)) fail("need 0 < t_r < T");
    if (!std::isfinite(delta)) fail("delta must be finite");
    if (window <= 0 || t_r + window > T) fail("need window > 0 and t_r + window <= T");
    if (burn_in < 0 || burn_in >= t_r) fail("need 0 <= burn_in < t_r");
    if (localization_offset <= 0 || t_r + localization_offset >= T) fail("need t_r + localization_offset < T");
    if (graph.file.empty()) {
        if (graph.clusters == 0 || graph.clusters > graph.p) fail("need 1 <= graph.clusters <= graph.p");
        if (!(0.0 <= graph.p_out && graph.p_out < graph.p_in && graph.p_in <= 1.0))
            fail("need 0 <= graph.p_out < graph.p_in <= 1");
    }
    if (target_cluster >= 0 && graph.file.empty() && static_cast<std::size_t>(target_cluster) >= graph.clusters)
        fail("target_cluster out of range");
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
    j = nlohmann::json{{"graph",
                        {{"file", c.graph.file},
                         {"p", c.graph.p},
                         {"clusters", c.graph.clusters},
                         {"p_in", c.graph.p_in},
                         {"p_out", c.graph.p_out},
                         {"seed", c.graph.seed}}},
                       {"gamma", c.gamma},
                       {"K", c.K},
                       {"beta", c.beta},
                       {"n_grid", c.n_grid},
                       {"max_noise_gain", c.max_noise_gain},
                       {"lambda_slow", c.lambda_slow},
                       {"lambda_fast", c.lambda_fast},
                       {"sigma2", c.sigma2},
                       {"alpha", c.alpha},
                       {"t_r", c.t_r},
                       {"delta", c.delta},
                       {"target_cluster", c.target_cluster},
                       {"T", c.T},
                       {"seed", c.seed},
                       {"detector", to_string(c.detector)},
                       {"window", c.window},
                       {"burn_in", c.burn_in},
                       {"localization_offset", c.localization_offset},
                       {"output_dir", c.output_dir}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
    static const std::set<std::string> known{"graph",  "gamma",          "K",           "beta",        "n_grid",
                                             "max_noise_gain", "lambda_slow", "lambda_fast", "sigma2",
                                             "alpha",  "t_r",            "delta",       "target_cluster", "T",
                                             "seed",   "detector",       "window",      "burn_in",
                                             "localization_offset",      "output_dir"};
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) {
            throw std::invalid_argument("config: unknown key '" + key + "'");
        }
    }
    if (j.contains("graph")) {
        static const std::set<std::string> graph_keys{"file", "p", "clusters", "p_in", "p_out", "seed"};
        const auto& g = j.at("graph");
        for (const auto& [key, value] : g.items()) {
            if (!graph_keys.contains(key)) {
                throw std::invalid_argument("config: unknown key 'graph." + key + "'");
            }
        }
        c.graph.file = g.value("file", c.graph.file);
        c.graph.p = g.value("p", c.graph.p);
        c.graph.clusters = g.value("clusters", c.graph.clusters);
        c.graph.p_in = g.value("p_in", c.graph.p_in);
        c.graph.p_out = g.value("p_out", c.graph.p_out);
        c.graph.seed = g.value("seed", c.graph.seed);
    }
    c.gamma = j.value("gamma", c.gamma);
    c.K = j.value("K", c.K);
    c.beta = j.value("beta", c.beta);
    c.n_grid = j.value("n_grid", c.n_grid);
    c.max_noise_gain = j.value("max_noise_gain", c.max_noise_gain);
    c.lambda_slow = j.value("lambda_slow", c.lambda_slow);
    c.lambda_fast = j.value("lambda_fast", c.lambda_fast);
    c.sigma2 = j.value("sigma2", c.sigma2);
    c.alpha = j.value("alpha", c.alpha);
    c.t_r = j.value("t_r", c.t_r);
    c.delta = j.value("delta", c.delta);
    c.target_cluster = j.value("target_cluster", c.target_cluster);
    c.T = j.value("T", c.T);
    c.seed = j.value("seed", c.seed);
    if (j.contains("detector")) {
        c.detector = parse_detector(j.at("detector").get<std::string>());
    }
    c.window = j.value("window", c.window);
    c.burn_in = j.value("burn_in", c.burn_in);
    c.localization_offset = j.value("localization_offset", c.localization_offset);
    c.output_dir = j.value("output_dir", c.output_dir);
}

// ---------------------------------------------------------------------------
// Setup

namespace {

ClusteredGraph load_graph(const ExperimentConfig& config) {
    if (config.graph.file.empty()) {
        return generate_clustered_graph(config.graph.p, config.graph.clusters, config.graph.p_in,
                                        config.graph.p_out, config.graph.seed);
    }
    const std::filesystem::path path(config.graph.file);
    if (path.extension() != ".json") {
        throw std::invalid_argument("config: graph file " + path.string() +
                                    " must be a JSON graph with cluster labels");
    }
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    ClusteredGraph g = graph_from_json(nlohmann::json::parse(in));
    if (g.labels.empty()) {
        throw std::invalid_argument("config: graph file " + path.string() + " has no cluster labels");
    }
    if (config.target_cluster >= cluster_count(g.labels)) {
        throw std::invalid_argument("config: target_cluster out of range");
    }
    return g;
}

} // namespace

ExperimentSetup prepare_experiment(const ExperimentConfig& config) {
    config.validate();
    ExperimentSetup s{config, load_graph(config), {}, {}, {}};
    s.spectrum = spectrum(normalized_laplacian(s.graph.graph));
    DesignOptions options;
    options.max_noise_gain = config.max_noise_gain;
    s.design = design_gfss_arma(config.gamma, config.K, config.beta, config.n_grid, s.spectrum.spectral_radius,
                                options);
    for (Detector d : all_detectors) {
        s.calibration.emplace(d, calibrate(s.graph.graph, s.spectrum, s.design.filter, config.sigma2,
                                           config.lambda_slow, config.lambda_fast, config.alpha, d));
    }
    return s;
}

ChangeSpec change_for_run(const ExperimentSetup& setup, std::size_t run, std::optional<double> delta) {
    const ExperimentConfig& c = setup.config;
    const int clusters = cluster_count(setup.graph.labels);
    const int target = c.target_cluster >= 0 ? c.target_cluster : static_cast<int>(run % static_cast<std::size_t>(clusters));
    return {c.t_r, delta.value_or(c.delta), target};
}

std::vector<Eigen::VectorXd> simulate_differences(const ExperimentSetup& setup, const ChangeSpec& change,
                                                  std::uint64_t stream) {
    const ExperimentConfig& c = setup.config;
    const auto y = synthesize_signal(setup.graph.labels, c.sigma2, change, c.T, c.seed, stream);
    SimulationConfig sc;
    sc.lambda_slow = c.lambda_slow;
    sc.lambda_fast = c.lambda_fast;
    sc.detector = Detector::CoherentSum;
    sc.thresholds = setup.thresholds(Detector::CoherentSum).xi;
    Simulator sim(setup.graph.graph, setup.design.filter, sc);
    std::vector<Eigen::VectorXd> d;
    d.reserve(y.size());
    for (const auto& yt : y) {
        sim.step(yt);
        d.push_back(sim.d());
    }
    return d;
}

double window_score(const ExperimentSetup& setup, Detector detector, const std::vector<Eigen::VectorXd>& d,
                    long first, long last) {
    const std::vector<double>& xi = setup.thresholds(detector).xi;
    double best = 0.0;
    for (long t = std::max(first, 0L); t <= last && t < static_cast<long>(d.size()); ++t) {
        const Eigen::VectorXd stat = detector_statistic(d[static_cast<std::size_t>(t)], setup.graph.graph, detector);
        for (Eigen::Index i = 0; i < stat.size(); ++i) {
            best = std::max(best, std::abs(stat(i)) / xi[static_cast<std::size_t>(i)]);
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// ROC

double RocCurve::pd_at(double pfa) const {
    double best = 0.0;
    for (const RocPoint& p : points) {
        if (p.pfa <= pfa + 1e-12) {
            best = std::max(best, p.pd);
        }
    }
    return best;
}

RocResult run_roc(const ExperimentSetup& setup, std::size_t n_h0, std::size_t n_h1,
                  const std::vector<double>& threshold_grid) {
    if (n_h0 == 0 || n_h1 == 0) {
        throw std::invalid_argument("run_roc: need at least one run under each hypothesis");
    }
    const ExperimentConfig& c = setup.config;
    const long first = c.t_r + 1;
    const long last = c.t_r + c.window;
    RocResult result;
    result.h0_runs = n_h0;
    result.h1_runs = n_h1;
    for (Detector det : all_detectors) {
        result.curves.push_back({det, {}, {}, {}});
    }
    for (std::size_t r = 0; r < n_h0 + n_h1; ++r) {
        const bool h1 = r >= n_h0;
        const std::size_t run = h1 ? r - n_h0 : r;
        const auto change = change_for_run(setup, run, h1 ? std::optional<double>{} : std::optional<double>{0.0});
        const auto d = simulate_differences(setup, change, (h1 ? h1_streams : h0_streams) + run);
        for (RocCurve& curve : result.curves) {
            (h1 ? curve.h1_scores : curve.h0_scores).push_back(window_score(setup, curve.detector, d, first, last));
        }
    }
    for (RocCurve& curve : result.curves) {
        std::vector<double> scales = threshold_grid;
        if (scales.empty()) {
            scales = curve.h0_scores;
            scales.insert(scales.end(), curve.h1_scores.begin(), curve.h1_scores.end());
            scales.push_back(0.0);
        }
        const bool degenerate = std::all_of(curve.h0_scores.begin(), curve.h0_scores.end(), [](double s) { return s == 0.0; }) &&
                                std::all_of(curve.h1_scores.begin(), curve.h1_scores.end(), [](double s) { return s == 0.0; });
        if (degenerate) {
            throw std::runtime_error("run_roc: all statistics are zero for detector " + to_string(curve.detector));
        }
        std::sort(scales.begin(), scales.end());
        scales.erase(std::unique(scales.begin(), scales.end()), scales.end());
        const auto exceed = [](const std::vector<double>& scores, double s) {
            return static_cast<double>(std::count_if(scores.begin(), scores.end(), [s](double v) { return v > s; })) /
                   static_cast<double>(scores.size());
        };
        for (auto it = scales.rbegin(); it != scales.rend(); ++it) {
            curve.points.push_back({*it, exceed(curve.h0_scores, *it), exceed(curve.h1_scores, *it)});
        }
    }
    return result;
}

void write_roc_csv(std::ostream& out, const RocResult& r) {
    out.precision(10);
    out << "detector,scale,pfa,pd\n";
    for (const RocCurve& c : r.curves) {
        for (const RocPoint& p : c.points) {
            out << to_string(c.detector) << ',' << p.scale << ',' << p.pfa << ',' << p.pd << '\n';
        }
    }
}

// ---------------------------------------------------------------------------
// Delay

DelayResult run_delay(const ExperimentSetup& setup, std::size_t n_runs) {
    const ExperimentConfig& c = setup.config;
    DelayResult result;
    for (std::size_t run = 0; run < n_runs; ++run) {
        const auto d = simulate_differences(setup, change_for_run(setup, run), h1_streams + run);
        for (Detector det : all_detectors) {
            DelayRecord rec{run, det, c.T - c.t_r, true, 0};
            for (long t = c.burn_in; t < c.T; ++t) {
                if (window_score(setup, det, d, t, t) <= 1.0) {
                    continue;
                }
                if (t < c.t_r) {
                    ++rec.false_alarms_before_change;
                } else {
                    rec.delay = t - c.t_r;
                    rec.censored = false;
                    break;
                }
            }
            result.records.push_back(rec);
        }
    }
    for (Detector det : all_detectors) {
        std::vector<double> delays;
        std::size_t total = 0;
        for (const DelayRecord& rec : result.records) {
            if (rec.detector != det) {
                continue;
            }
            ++total;
            if (!rec.censored) {
                delays.push_back(static_cast<double>(rec.delay));
            }
        }
        const double detected = total ? static_cast<double>(delays.size()) / static_cast<double>(total) : 0.0;
        result.summary[det] = {detected, quantile(delays, 0.5), quantile(delays, 0.25), quantile(delays, 0.75)};
    }
    return result;
}

void write_delay_csv(std::ostream& out, const DelayResult& r) {
    out << "run,detector,delay,censored,false_alarms_before_change\n";
    for (const DelayRecord& rec : r.records) {
        out << rec.run << ',' << to_string(rec.detector) << ',' << rec.delay << ',' << (rec.censored ? 1 : 0) << ','
            << rec.false_alarms_before_change << '\n';
    }
}

// ---------------------------------------------------------------------------
// Localization

LocalizationResult run_localization(const ExperimentSetup& setup, std::size_t n_runs) {
    const ExperimentConfig& c = setup.config;
    const std::vector<double>& xi = setup.thresholds(Detector::CoherentSum).xi;
    const long tick = c.t_r + c.localization_offset;
    LocalizationResult result;
    double precision_sum = 0.0;
    double recall_sum = 0.0;
    std::size_t detected = 0;
    for (std::size_t run = 0; run < n_runs; ++run) {
        const ChangeSpec change = change_for_run(setup, run);
        const auto d = simulate_differences(setup, change, h1_streams + run);
        LocalizationSnapshot s;
        s.run = run;
        s.tick = tick;
        s.target_cluster = change.target_cluster;
        s.statistic = detector_statistic(d[static_cast<std::size_t>(tick)], setup.graph.graph, Detector::CoherentSum);
        std::size_t alarmed = 0;
        std::size_t hits = 0;
        std::size_t cluster_size = 0;
        for (std::size_t i = 0; i < xi.size(); ++i) {
            const bool in_cluster = setup.graph.labels[i] == change.target_cluster;
            const bool alarm = std::abs(s.statistic(static_cast<Eigen::Index>(i))) > xi[i];
            s.alarm.push_back(alarm);
            cluster_size += in_cluster ? 1 : 0;
            alarmed += alarm ? 1 : 0;
            hits += (alarm && in_cluster) ? 1 : 0;
        }
        s.any_alarm = alarmed > 0;
        s.precision = alarmed ? static_cast<double>(hits) / static_cast<double>(alarmed) : 0.0;
        s.recall = cluster_size ? static_cast<double>(hits) / static_cast<double>(cluster_size) : 0.0;
        if (s.any_alarm) {
            precision_sum += s.precision;
            ++result.runs_with_alarm;
        }
        recall_sum += s.recall;
        if (window_score(setup, Detector::CoherentSum, d, c.t_r + 1, c.t_r + c.window) > 1.0) {
            ++detected;
        }
        result.runs.push_back(std::move(s));
    }
    result.mean_precision = result.runs_with_alarm ? precision_sum / static_cast<double>(result.runs_with_alarm) : 0.0;
    result.mean_recall = n_runs ? recall_sum / static_cast<double>(n_runs) : 0.0;
    result.detection_rate = n_runs ? static_cast<double>(detected) / static_cast<double>(n_runs) : 0.0;
    return result;
}

void write_localization_csv(std::ostream& out, const ExperimentSetup& setup, const LocalizationSnapshot& s) {
    const std::vector<double>& xi = setup.thresholds(Detector::CoherentSum).xi;
    out.precision(10);
    out << "vertex,cluster,in_target,statistic,threshold,alarm\n";
    for (std::size_t i = 0; i < xi.size(); ++i) {
        out << i << ',' << setup.graph.labels[i] << ',' << (setup.graph.labels[i] == s.target_cluster ? 1 : 0) << ','
            << s.statistic(static_cast<Eigen::Index>(i)) << ',' << xi[i] << ',' << (s.alarm[i] ? 1 : 0) << '\n';
    }
}

// ---------------------------------------------------------------------------
// Monte-Carlo checks

double relative_frobenius(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    const double denom = b.norm();
    if (denom == 0.0) {
        return a.norm() == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    }
    return (a - b).norm() / denom;
}

ValidationResult run_validation(const Graph& g, const ArmaFilter& filter, double sigma2, double lambda_slow,
                                double lambda_fast, std::uint64_t seed, const ValidationOptions& options) {
    if (options.samples == 0 || options.chains == 0 || options.spacing <= 0 || options.burn_in < 0) {
        throw std::invalid_argument("run_validation: samples, chains and spacing must be positive");
    }
    const LaplacianSpectrum spec = spectrum(normalized_laplacian(g));
    const StabilityCheck check = check_stability(filter, spec.spectral_radius);
    if (!check.stable) {
        throw StabilityError("run_validation: filter is unstable on this graph (max|psi| * rho = " +
                                 std::to_string(check.margin) + ")",
                             check.margin);
    }
    ValidationResult r;
    r.q_inf = q_infinity(spec, filter, sigma2);
    r.r_inf = r_infinity(r.q_inf, lambda_slow, lambda_fast);
    r.r_colored = r_colored(spec, filter, sigma2, lambda_slow, lambda_fast);

    const auto p = static_cast<Eigen::Index>(g.vertex_count());
    const auto chains = static_cast<Eigen::Index>(std::min(options.chains, options.samples));
    const std::size_t rounds = (options.samples + static_cast<std::size_t>(chains) - 1) / static_cast<std::size_t>(chains);
    const long ticks = options.burn_in + static_cast<long>(rounds - 1) * options.spacing + 1;
    ArmaRecursion rec(g, filter, lambda_slow, lambda_fast, chains);
    const double sd = std::sqrt(sigma2);
    Eigen::MatrixXd y(p, chains);
    Eigen::MatrixXd zz = Eigen::MatrixXd::Zero(p, p);
    Eigen::MatrixXd dd = Eigen::MatrixXd::Zero(p, p);
    std::size_t kept = 0;
    for (long t = 0; t < ticks; ++t) {
        for (Eigen::Index c = 0; c < chains; ++c) {
            const std::uint64_t base = static_cast<std::uint64_t>(t) * static_cast<std::uint64_t>(p);
            for (Eigen::Index i = 0; i < p; ++i) {
                y(i, c) = sd * gaussian_at(seed, validation_streams + static_cast<std::uint64_t>(c),
                                           base + static_cast<std::uint64_t>(i));
            }
        }
        rec.step(y);
        if (t >= options.burn_in && (t - options.burn_in) % options.spacing == 0) {
            const Eigen::Index take = std::min<Eigen::Index>(chains, static_cast<Eigen::Index>(options.samples - kept));
            const Eigen::MatrixXd d = rec.d();
            zz.noalias() += rec.z().leftCols(take) * rec.z().leftCols(take).transpose();
            dd.noalias() += d.leftCols(take) * d.leftCols(take).transpose();
            kept += static_cast<std::size_t>(take);
        }
    }
    r.samples = kept;
    r.q_sample = zz / static_cast<double>(kept);
    r.r_sample = dd / static_cast<double>(kept);
    r.q_error = relative_frobenius(r.q_sample, r.q_inf);
    r.r_error = relative_frobenius(r.r_sample, r.r_inf);
    r.r_colored_error = relative_frobenius(r.r_sample, r.r_colored);
    r.q_pass = r.q_error < options.tolerance;
    r.r_pass = r.r_error < options.tolerance;
    return r;
}

nlohmann::json validation_summary(const ValidationResult& r) {
    return {{"samples", r.samples},
            {"q_error", r.q_error},
            {"r_error", r.r_error},
            {"r_colored_error", r.r_colored_error},
            {"q_pass", r.q_pass},
            {"r_pass", r.r_pass}};
}

FalseAlarmResult run_false_alarm(const ExperimentSetup& setup, std::size_t snapshots, std::size_t chains,
                                 long burn_in, long spacing) {
    if (snapshots == 0 || chains == 0 || spacing <= 0 || burn_in < 0) {
        throw std::invalid_argument("run_false_alarm: snapshots, chains and spacing must be positive");
    }
    const ExperimentConfig& c = setup.config;
    const Graph& g = setup.graph.graph;
    const Detector det = c.detector;
    const std::vector<double>& xi = setup.thresholds(det).xi;
    const auto p = static_cast<Eigen::Index>(g.vertex_count());
    const auto n_chains = static_cast<Eigen::Index>(std::min(chains, snapshots));
    const std::size_t rounds = (snapshots + static_cast<std::size_t>(n_chains) - 1) / static_cast<std::size_t>(n_chains);
    const long ticks = burn_in + static_cast<long>(rounds - 1) * spacing + 1;
    ArmaRecursion rec(g, setup.design.filter, c.lambda_slow, c.lambda_fast, n_chains);
    const double sd = std::sqrt(c.sigma2);
    Eigen::MatrixXd y(p, n_chains);
    FalseAlarmResult result;
    for (long t = 0; t < ticks; ++t) {
        for (Eigen::Index ch = 0; ch < n_chains; ++ch) {
            const std::uint64_t base = static_cast<std::uint64_t>(t) * static_cast<std::uint64_t>(p);
            for (Eigen::Index i = 0; i < p; ++i) {
                y(i, ch) = setup.graph.labels[static_cast<std::size_t>(i)] +
                           sd * gaussian_at(c.seed, false_alarm_streams + static_cast<std::uint64_t>(ch),
                                            base + static_cast<std::uint64_t>(i));
            }
        }
        rec.step(y);
        if (t < burn_in || (t - burn_in) % spacing != 0) {
            continue;
        }
        const Eigen::MatrixXd d = rec.d();
        for (Eigen::Index ch = 0; ch < n_chains && result.snapshots < snapshots; ++ch) {
            const Eigen::VectorXd stat = detector_statistic(d.col(ch), g, det);
            bool alarm = false;
            for (Eigen::Index i = 0; i < stat.size() && !alarm; ++i) {
                alarm = std::abs(stat(i)) > xi[static_cast<std::size_t>(i)];
            }
            result.alarms += alarm ? 1 : 0;
            ++result.snapshots;
        }
    }
    result.rate = static_cast<double>(result.alarms) / static_cast<double>(result.snapshots);
    result.binomial_sd = std::sqrt(c.alpha * (1.0 - c.alpha) / static_cast<double>(result.snapshots));
    return result;
}

} // namespace dagfss
