#ifndef DAGFSS_EXPERIMENT_HPP
#define DAGFSS_EXPERIMENT_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dagfss/arma.hpp"
#include "dagfss/calibration.hpp"
#include "dagfss/detector.hpp"
#include "dagfss/graph.hpp"
#include "json.hpp"

namespace dagfss {

struct ClusteredGraph {
    Graph graph;
    std::vector<int> labels;    ///< cluster of each vertex, 0-based
    std::size_t attempts = 0;   ///< draws until a connected graph came out
};

/// Planted partition: k clusters whose sizes differ by at most one, edges
/// drawn independently with probability p_in inside a cluster and p_out
/// across. Redraws until connected, at most 100 times.
ClusteredGraph generate_clustered_graph(std::size_t p, std::size_t k, double p_in, double p_out,
                                        std::uint64_t seed);

/// Expected edge count of the planted partition model.
double expected_edge_count(std::size_t p, std::size_t k, double p_in, double p_out);

/// {p, edges: [[i, j, w], ...], labels?: [...]}
nlohmann::json graph_to_json(const Graph& g, const std::vector<int>* labels = nullptr);
ClusteredGraph graph_from_json(const nlohmann::json& j);

struct ChangeSpec {
    long t_r = 400;
    double delta = 0.5;
    int target_cluster = 0;
};

/// y_t = m + e_t with m(i) = labels[i], e_t ~ N(0, sigma2 I), plus delta on
/// the target cluster from t_r on. Draws come from stream `stream` of `seed`.
std::vector<Eigen::VectorXd> synthesize_signal(const std::vector<int>& labels, double sigma2,
                                               const ChangeSpec& change, long T, std::uint64_t seed,
                                               std::uint64_t stream = 0);

/// Plain text: one tick per line, p comma-separated values.
void write_stream_csv(std::ostream& out, const std::vector<Eigen::VectorXd>& stream);
std::vector<Eigen::VectorXd> read_stream_csv(std::istream& in);
/// Binary: "GSTR", uint32 version 1, uint64 p, uint64 T, then T*p little-endian doubles.
void write_stream_binary(std::ostream& out, const std::vector<Eigen::VectorXd>& stream);
std::vector<Eigen::VectorXd> read_stream_binary(std::istream& in);
/// Picks the format from the extension (".csv" or anything else for binary).
std::vector<Eigen::VectorXd> read_stream(const std::filesystem::path& path);
void write_stream(const std::filesystem::path& path, const std::vector<Eigen::VectorXd>& stream);

struct GraphSource {
    std::string file;           ///< JSON graph with labels; empty to generate
    std::size_t p = 250;
    std::size_t clusters = 8;
    double p_in = 0.55;
    double p_out = 0.0157;
    std::uint64_t seed = 1;
};

struct ExperimentConfig {
    GraphSource graph;
    double gamma = 0.3;
    std::size_t K = 4;
    double beta = 0.1;
    std::size_t n_grid = 200;
    double max_noise_gain = 2.0;
    double lambda_slow = 0.01;
    double lambda_fast = 0.1;
    double sigma2 = 7.0;
    double alpha = 0.05;
    long t_r = 400;
    double delta = 0.5;
    int target_cluster = -1;    ///< -1 rotates the changed cluster across runs
    long T = 512;
    std::uint64_t seed = 0;
    Detector detector = Detector::CoherentSum;
    long window = 50;           ///< detection window (t_r, t_r + window]
    long burn_in = 200;
    long localization_offset = 20;
    std::string output_dir = ".";

    /// Throws std::invalid_argument on inconsistent values.
    void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, ExperimentConfig& c);

/// Graph, spectrum, filter and per-detector calibrations for one config.
struct ExperimentSetup {
    ExperimentConfig config;
    ClusteredGraph graph;
    LaplacianSpectrum spectrum;
    FilterDesign design;
    std::map<Detector, CalibrationReport> calibration;

    const CalibrationReport& thresholds(Detector d) const { return calibration.at(d); }
};

ExperimentSetup prepare_experiment(const ExperimentConfig& config);

/// Change spec used by Monte-Carlo run `run`; delta overridden when given.
ChangeSpec change_for_run(const ExperimentSetup& setup, std::size_t run, std::optional<double> delta = {});

/// Per-tick EWMA differences d_t of one run of the distributed simulator.
std::vector<Eigen::VectorXd> simulate_differences(const ExperimentSetup& setup, const ChangeSpec& change,
                                                  std::uint64_t stream);

/// max over the window ticks and vertices of |statistic(i)| / xi_i.
double window_score(const ExperimentSetup& setup, Detector detector, const std::vector<Eigen::VectorXd>& d,
                    long first, long last);

struct RocPoint {
    double scale;  ///< multiplier applied to the calibrated thresholds
    double pfa;
    double pd;
};

struct RocCurve {
    Detector detector;
    std::vector<double> h0_scores;
    std::vector<double> h1_scores;
    std::vector<RocPoint> points; ///< sorted by increasing pfa

    /// Best detection probability at false-alarm probability <= pfa.
    double pd_at(double pfa) const;
};

struct RocResult {
    std::size_t h0_runs = 0;
    std::size_t h1_runs = 0;
    std::vector<RocCurve> curves;
};

/// H0 runs (delta = 0) and H1 runs share the window (t_r, t_r + window]. The
/// empirical curve uses every observed score as a threshold scale; an
/// explicit grid replaces that when not empty.
RocResult run_roc(const ExperimentSetup& setup, std::size_t n_h0, std::size_t n_h1,
                  const std::vector<double>& threshold_grid = {});

void write_roc_csv(std::ostream& out, const RocResult& r);

struct DelayRecord {
    std::size_t run;
    Detector detector;
    long delay;    ///< first alarm at or after t_r, minus t_r
    bool censored; ///< no alarm before T; delay is then T - t_r
    long false_alarms_before_change;
};

struct DelayResult {
    std::vector<DelayRecord> records;
    /// Per detector: {detected fraction, median, q25, q75} over uncensored runs.
    std::map<Detector, std::vector<double>> summary;
};

DelayResult run_delay(const ExperimentSetup& setup, std::size_t n_runs);
void write_delay_csv(std::ostream& out, const DelayResult& r);

struct LocalizationSnapshot {
    std::size_t run = 0;
    long tick = 0;
    int target_cluster = 0;
    Eigen::VectorXd statistic;
    std::vector<bool> alarm;
    double precision = 0.0; ///< 0 when nothing is alarmed
    double recall = 0.0;
    bool any_alarm = false;
};

struct LocalizationResult {
    std::vector<LocalizationSnapshot> runs;
    double mean_precision = 0.0;     ///< over runs with at least one alarm
    double mean_recall = 0.0;        ///< over all runs
    std::size_t runs_with_alarm = 0;
    double detection_rate = 0.0;     ///< runs alarming somewhere in (t_r, t_r + window]
};

/// Coherent-sum snapshot at t_r + localization_offset for each run.
LocalizationResult run_localization(const ExperimentSetup& setup, std::size_t n_runs);
void write_localization_csv(std::ostream& out, const ExperimentSetup& setup, const LocalizationSnapshot& s);

struct ValidationOptions {
    std::size_t samples = 100000;
    std::size_t chains = 1000;
    long burn_in = 2000;
    long spacing = 100;
    double tolerance = 0.05;
};

struct ValidationResult {
    Eigen::MatrixXd q_inf;
    Eigen::MatrixXd r_inf;
    Eigen::MatrixXd r_colored;  ///< exact steady-state covariance of d_t
    Eigen::MatrixXd q_sample;
    Eigen::MatrixXd r_sample;
    double q_error = 0.0;       ///< relative Frobenius error of q_sample
    double r_error = 0.0;       ///< of r_sample against r_inf
    double r_colored_error = 0.0;
    std::size_t samples = 0;
    bool q_pass = false;
    bool r_pass = false;
};

/// Monte-Carlo check of the closed-form covariances. Zero-mean noise of
/// variance sigma2 drives independent chains of the centralized recursion;
/// after burn_in, one sample per chain is kept every `spacing` ticks.
ValidationResult run_validation(const Graph& g, const ArmaFilter& filter, double sigma2, double lambda_slow,
                                double lambda_fast, std::uint64_t seed, const ValidationOptions& options = {});

nlohmann::json validation_summary(const ValidationResult& r);

struct FalseAlarmResult {
    std::size_t snapshots = 0;
    std::size_t alarms = 0;
    double rate = 0.0;
    double binomial_sd = 0.0; ///< sqrt(alpha (1 - alpha) / snapshots)
};

/// Steady-state H0 snapshots (signal m plus noise, no change) of the
/// configured detector with its calibrated thresholds; counts snapshots with
/// at least one alarm.
FalseAlarmResult run_false_alarm(const ExperimentSetup& setup, std::size_t snapshots, std::size_t chains = 100,
                                 long burn_in = 2000, long spacing = 100);

/// Relative Frobenius error ||a - b||_F / ||b||_F.
double relative_frobenius(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

} // namespace dagfss

#endif // DAGFSS_EXPERIMENT_HPP
