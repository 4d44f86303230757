#ifndef DAGFSS_DISTRIBUTED_HPP
#define DAGFSS_DISTRIBUTED_HPP

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "dagfss/arma.hpp"
#include "dagfss/detector.hpp"
#include "dagfss/graph.hpp"
#include "json.hpp"

namespace dagfss {

/// A node did not receive a message it needs for the current tick.
class ProtocolError : public std::runtime_error {
  public:
    ProtocolError(Vertex receiver, Vertex neighbor, long tick, const std::string& what);
    Vertex receiver() const noexcept { return receiver_; }
    Vertex neighbor() const noexcept { return neighbor_; }
    long tick() const noexcept { return tick_; }

  private:
    Vertex receiver_;
    Vertex neighbor_;
    long tick_;
};

/// An ARMA state left the range a stable filter can produce.
class DivergenceError : public std::runtime_error {
  public:
    DivergenceError(Vertex vertex, long tick);
    Vertex vertex() const noexcept { return vertex_; }
    long tick() const noexcept { return tick_; }

  private:
    Vertex vertex_;
    long tick_;
};

enum class Phase { StateExchange, StatisticExchange };

/// What one vertex last heard from one neighbor.
struct NeighborSlot {
    Vertex vertex = 0;
    double weight = 0.0;          ///< off-diagonal Laplacian entry L(i, vertex)
    std::vector<Complex> x;       ///< x_{l, state_tick}(vertex)
    long state_tick = -2;
    double d = 0.0;               ///< d_{d_tick}(vertex)
    long d_tick = -2;
};

struct NodeState {
    Vertex id = 0;
    double diagonal = 1.0;        ///< L(i, i)
    std::vector<Complex> x;       ///< x_{l, t}(i), one per tap
    double v = 0.0;
    double v_fast = 0.0;
    double d = 0.0;
    double xi = 0.0;
    long tick = -1;               ///< last completed tick
    std::vector<NeighborSlot> cache;
};

/// Node i's row of the normalized Laplacian, with x and the EWMAs at zero.
NodeState make_node(const Graph& g, Vertex i, std::size_t K, double xi);

/// Payload is a view into the sender's published buffer; it stays valid until
/// the sender's next phase.
struct NodeMessage {
    Vertex from = 0;
    Vertex to = 0;
    long tick = 0;
    Phase phase = Phase::StateExchange;
    std::span<const Complex> x;
    double d = 0.0;
};

/// Stores a message in the receiver's cache. Throws ProtocolError when the
/// sender is not a neighbor.
void deliver(NodeState& receiver, const NodeMessage& m);

/// ARMA update at tick t from cached neighbor states of tick t - 1. Returns
/// z_t(i).
double node_tick_phase1(NodeState& s, double y, const ArmaFilter& f, long t);

/// EWMA update with z_t(i); sets d = v_fast - v.
void node_tick_phase2(NodeState& s, double z, double lambda_slow, double lambda_fast);

/// Local statistic at tick t from own d and cached neighbor d of tick t.
double node_statistic(const NodeState& s, Detector detector, long t);

struct Alarm {
    long tick = 0;
    Vertex vertex = 0;
    double statistic = 0.0;
    double threshold = 0.0;
};

struct MessageCounts {
    std::size_t state = 0;
    std::size_t statistic = 0;
};

struct SimulationConfig {
    double lambda_slow = 0.01;
    double lambda_fast = 0.1;
    Detector detector = Detector::CoherentSum;
    /// One threshold per vertex; a single global threshold for the
    /// centralized detector.
    std::vector<double> thresholds;
    /// Optional fault injection: a message is dropped when this returns false.
    std::function<bool(const NodeMessage&)> delivery_filter;
};

/// Synchronous lockstep network running the distributed detector.
class Simulator {
  public:
    Simulator(const Graph& g, ArmaFilter filter, SimulationConfig config);

    /// One tick: state exchange, ARMA and EWMA updates, d exchange, local
    /// statistics. Returns the per-vertex statistics.
    const Eigen::VectorXd& step(const Eigen::VectorXd& y);

    long tick() const noexcept { return tick_; }
    const std::vector<NodeState>& nodes() const noexcept { return nodes_; }
    const Eigen::VectorXd& z() const noexcept { return z_; }
    const Eigen::VectorXd& d() const noexcept { return d_; }
    const Eigen::VectorXd& statistics() const noexcept { return stats_; }
    /// Alarms raised during the last step.
    const std::vector<Alarm>& alarms() const noexcept { return alarms_; }
    const MessageCounts& messages() const noexcept { return counts_; }

  private:
    void exchange(Phase phase);

    const Graph* graph_;
    ArmaFilter filter_;
    SimulationConfig config_;
    std::vector<NodeState> nodes_;
    std::vector<std::vector<Complex>> published_;
    long tick_ = -1;
    Eigen::VectorXd z_;
    Eigen::VectorXd d_;
    Eigen::VectorXd stats_;
    std::vector<Alarm> alarms_;
    MessageCounts counts_;
};

struct DetectionRun {
    std::size_t p = 0;
    Detector detector = Detector::CoherentSum;
    Eigen::MatrixXd statistics; ///< ticks x p (ticks x 1 for the centralized detector)
    std::vector<Alarm> alarms;
    std::vector<long> first_alarm; ///< per vertex, -1 when never raised
    MessageCounts messages;

    long ticks() const noexcept { return static_cast<long>(statistics.rows()); }
};

/// Runs the simulator over a whole stream. Throws StabilityError up front when
/// the filter is unstable for g.
DetectionRun run_simulation(const Graph& g, const ArmaFilter& filter, std::span<const Eigen::VectorXd> stream,
                            const SimulationConfig& config);

/// "tick,vertex,statistic,alarm" rows.
void write_run_csv(std::ostream& out, const DetectionRun& run);
/// {detector, p, ticks, first_alarm, alarm_count, messages}
nlohmann::json run_summary(const DetectionRun& run);

struct DetectorStatistics {
    Eigen::VectorXd coherent;    ///< sum of d over each closed neighborhood
    Eigen::VectorXd squared_norm; ///< 2-norm of d over each closed neighborhood
    Eigen::VectorXd independent; ///< |d(i)|
    double centralized = 0.0;    ///< ||d||_2
};

DetectorStatistics detector_variants(const Eigen::VectorXd& d, const Graph& g);

/// Statistic vector of one detector for a snapshot of d (length 1 for the
/// centralized detector).
Eigen::VectorXd detector_statistic(const Eigen::VectorXd& d, const Graph& g, Detector detector);

/// Centralized ARMA + EWMA recursion over a batch of independent chains (one
/// column each), on a sparse Laplacian. Used for Monte-Carlo work where the
/// message-level simulation is not the object of study.
class ArmaRecursion {
  public:
    ArmaRecursion(const Graph& g, const ArmaFilter& filter, double lambda_slow, double lambda_fast,
                  Eigen::Index chains);

    /// Advances every chain by one tick; y is p x chains.
    void step(const Eigen::MatrixXd& y);

    const Eigen::MatrixXd& z() const noexcept { return z_; }
    Eigen::MatrixXd d() const { return v_fast_ - v_; }
    long tick() const noexcept { return tick_; }

  private:
    Eigen::SparseMatrix<double> laplacian_;
    ArmaFilter filter_;
    double lambda_slow_;
    double lambda_fast_;
    std::vector<Eigen::MatrixXd> re_;
    std::vector<Eigen::MatrixXd> im_;
    Eigen::MatrixXd z_;
    Eigen::MatrixXd v_;
    Eigen::MatrixXd v_fast_;
    long tick_ = -1;
};

} // namespace dagfss

#endif // DAGFSS_DISTRIBUTED_HPP
