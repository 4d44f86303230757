#include "dagfss/distributed.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>

namespace dagfss {

namespace {

constexpr double divergence_bound = 1e12;

std::string phase_name(Phase p) {
    return p == Phase::StateExchange ? "state" : "statistic";
}

NeighborSlot* find_slot(NodeState& s, Vertex v) {
    auto it = std::lower_bound(s.cache.begin(), s.cache.end(), v,
                               [](const NeighborSlot& slot, Vertex key) { return slot.vertex < key; });
    return (it != s.cache.end() && it->vertex == v) ? &*it : nullptr;
}

} // namespace

ProtocolError::ProtocolError(Vertex receiver, Vertex neighbor, long tick, const std::string& what)
    : std::runtime_error("vertex " + std::to_string(receiver) + ": " + what + " (neighbor " +
                         std::to_string(neighbor) + ", tick " + std::to_string(tick) + ")"),
      receiver_(receiver), neighbor_(neighbor), tick_(tick) {}

DivergenceError::DivergenceError(Vertex vertex, long tick)
    : std::runtime_error("ARMA state diverged at vertex " + std::to_string(vertex) + ", tick " +
                         std::to_string(tick) + " (is the filter stable for this graph?)"),
      vertex_(vertex), tick_(tick) {}

NodeState make_node(const Graph& g, Vertex i, std::size_t K, double xi) {
    NodeState s;
    s.id = i;
    s.xi = xi;
    s.x.assign(K, Complex(0.0, 0.0));
    const double di = g.degree(i);
    s.diagonal = di > 0.0 ? 1.0 : 0.0;
    for (const Neighbor& n : g.neighbors(i)) {
        NeighborSlot slot;
        slot.vertex = n.vertex;
        slot.weight = -n.weight / std::sqrt(di * g.degree(n.vertex));
        slot.x.assign(K, Complex(0.0, 0.0));
        s.cache.push_back(std::move(slot));
    }
    return s;
}

void deliver(NodeState& receiver, const NodeMessage& m) {
    if (m.to != receiver.id) {
        throw ProtocolError(receiver.id, m.from, m.tick, "message addressed to vertex " + std::to_string(m.to));
    }
    NeighborSlot* slot = find_slot(receiver, m.from);
    if (slot == nullptr) {
        throw ProtocolError(receiver.id, m.from, m.tick, phase_name(m.phase) + " message from a non-neighbor");
    }
    if (m.phase == Phase::StateExchange) {
        if (m.x.size() != slot->x.size()) {
            throw ProtocolError(receiver.id, m.from, m.tick, "state payload has wrong length");
        }
        if (slot->state_tick == m.tick) {
            throw ProtocolError(receiver.id, m.from, m.tick, "duplicate state message");
        }
        std::copy(m.x.begin(), m.x.end(), slot->x.begin());
        slot->state_tick = m.tick;
    } else {
        if (slot->d_tick == m.tick) {
            throw ProtocolError(receiver.id, m.from, m.tick, "duplicate statistic message");
        }
        slot->d = m.d;
        slot->d_tick = m.tick;
    }
}

double node_tick_phase1(NodeState& s, double y, const ArmaFilter& f, long t) {
    if (s.x.size() != f.order()) {
        throw std::invalid_argument("node_tick_phase1: state has " + std::to_string(s.x.size()) +
                                    " taps, filter has " + std::to_string(f.order()));
    }
    for (const NeighborSlot& slot : s.cache) {
        if (slot.state_tick != t - 1) {
            throw ProtocolError(s.id, slot.vertex, t - 1, "missing state message");
        }
    }
    Complex z = f.c * y;
    for (std::size_t l = 0; l < s.x.size(); ++l) {
        Complex lx = s.diagonal * s.x[l];
        for (const NeighborSlot& slot : s.cache) {
            lx += slot.weight * slot.x[l];
        }
        const Complex next = f.taps[l].psi * lx + f.taps[l].phi * y;
        if (!(std::abs(next) <= divergence_bound)) {
            throw DivergenceError(s.id, t);
        }
        s.x[l] = next;
        z += next;
    }
    if (std::abs(z.imag()) >= 1e-9 * std::max(1.0, std::abs(z.real()))) {
        throw std::logic_error("node_tick_phase1: imaginary residue " + std::to_string(z.imag()) +
                               " at vertex " + std::to_string(s.id) + " (taps not conjugate-closed)");
    }
    s.tick = t;
    return z.real();
}

void node_tick_phase2(NodeState& s, double z, double lambda_slow, double lambda_fast) {
    s.v = (1.0 - lambda_slow) * s.v + lambda_slow * z;
    s.v_fast = (1.0 - lambda_fast) * s.v_fast + lambda_fast * z;
    s.d = s.v_fast - s.v;
}

double node_statistic(const NodeState& s, Detector detector, long t) {
    if (detector == Detector::Independent) {
        return std::abs(s.d);
    }
    if (detector == Detector::Centralized) {
        throw std::invalid_argument("node_statistic: the centralized detector has no local statistic");
    }
    double sum = s.d;
    double squares = s.d * s.d;
    for (const NeighborSlot& slot : s.cache) {
        if (slot.d_tick != t) {
            throw ProtocolError(s.id, slot.vertex, t, "missing statistic message");
        }
        sum += slot.d;
        squares += slot.d * slot.d;
    }
    return detector == Detector::CoherentSum ? sum : std::sqrt(squares);
}

Simulator::Simulator(const Graph& g, ArmaFilter filter, SimulationConfig config)
    : graph_(&g), filter_(std::move(filter)), config_(std::move(config)) {
    const std::size_t p = g.vertex_count();
    const std::size_t n_thresholds = config_.detector == Detector::Centralized ? 1 : p;
    if (config_.thresholds.size() != n_thresholds) {
        throw std::invalid_argument("simulator: expected " + std::to_string(n_thresholds) +
                                    " thresholds, got " + std::to_string(config_.thresholds.size()));
    }
    for (double xi : config_.thresholds) {
        if (!(xi > 0.0)) {
            throw std::invalid_argument("simulator: thresholds must be positive");
        }
    }
    if (!(config_.lambda_slow > 0.0 && config_.lambda_slow < 1.0 && config_.lambda_fast > 0.0 &&
          config_.lambda_fast < 1.0)) {
        throw std::invalid_argument("simulator: learning rates must lie in (0, 1)");
    }
    nodes_.reserve(p);
    for (Vertex i = 0; i < p; ++i) {
        const double xi = config_.detector == Detector::Centralized ? config_.thresholds[0] : config_.thresholds[i];
        nodes_.push_back(make_node(g, i, filter_.order(), xi));
    }
    published_.assign(p, std::vector<Complex>(filter_.order()));
    z_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
    d_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
    stats_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_thresholds));
}

void Simulator::exchange(Phase phase) {
    const long label = phase == Phase::StateExchange ? tick_ - 1 : tick_;
    if (phase == Phase::StateExchange) {
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            published_[i] = nodes_[i].x;
        }
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const NodeState& sender = nodes_[i];
        for (const NeighborSlot& slot : sender.cache) {
            NodeMessage m;
            m.from = sender.id;
            m.to = slot.vertex;
            m.tick = label;
            m.phase = phase;
            if (phase == Phase::StateExchange) {
                m.x = published_[i];
            } else {
                m.d = sender.d;
            }
            if (config_.delivery_filter && !config_.delivery_filter(m)) {
                continue;
            }
            deliver(nodes_[slot.vertex], m);
            ++(phase == Phase::StateExchange ? counts_.state : counts_.statistic);
        }
    }
}

const Eigen::VectorXd& Simulator::step(const Eigen::VectorXd& y) {
    if (static_cast<std::size_t>(y.size()) != nodes_.size()) {
        throw std::invalid_argument("simulator: signal has dimension " + std::to_string(y.size()) +
                                    ", graph has " + std::to_string(nodes_.size()) + " vertices");
    }
    ++tick_;
    exchange(Phase::StateExchange);
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        z_(k) = node_tick_phase1(nodes_[i], y(k), filter_, tick_);
        node_tick_phase2(nodes_[i], z_(k), config_.lambda_slow, config_.lambda_fast);
        d_(k) = nodes_[i].d;
    }
    alarms_.clear();
    if (config_.detector == Detector::Centralized) {
        stats_(0) = d_.norm();
        if (std::abs(stats_(0)) > config_.thresholds[0]) {
            alarms_.push_back({tick_, 0, stats_(0), config_.thresholds[0]});
        }
        return stats_;
    }
    if (config_.detector != Detector::Independent) {
        exchange(Phase::StatisticExchange);
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        stats_(k) = node_statistic(nodes_[i], config_.detector, tick_);
        if (std::abs(stats_(k)) > nodes_[i].xi) {
            alarms_.push_back({tick_, nodes_[i].id, stats_(k), nodes_[i].xi});
        }
    }
    return stats_;
}

DetectionRun run_simulation(const Graph& g, const ArmaFilter& filter, std::span<const Eigen::VectorXd> stream,
                            const SimulationConfig& config) {
    const LaplacianSpectrum spec = spectrum(normalized_laplacian(g));
    const StabilityCheck check = check_stability(filter, spec.spectral_radius);
    if (!check.stable) {
        throw StabilityError("run_simulation: filter is unstable on this graph (max|psi| * rho = " +
                                 std::to_string(check.margin) + ")",
                             check.margin);
    }
    Simulator sim(g, filter, config);
    DetectionRun run;
    run.p = g.vertex_count();
    run.detector = config.detector;
    run.statistics.resize(static_cast<Eigen::Index>(stream.size()), sim.statistics().size());
    run.first_alarm.assign(config.detector == Detector::Centralized ? 1 : run.p, -1);
    for (std::size_t t = 0; t < stream.size(); ++t) {
        run.statistics.row(static_cast<Eigen::Index>(t)) = sim.step(stream[t]).transpose();
        for (const Alarm& a : sim.alarms()) {
            run.alarms.push_back(a);
            if (run.first_alarm[a.vertex] < 0) {
                run.first_alarm[a.vertex] = a.tick;
            }
        }
    }
    run.messages = sim.messages();
    return run;
}

void write_run_csv(std::ostream& out, const DetectionRun& run) {
    out << "tick,vertex,statistic,alarm\n";
    std::size_t next = 0;
    for (Eigen::Index t = 0; t < run.statistics.rows(); ++t) {
        for (Eigen::Index i = 0; i < run.statistics.cols(); ++i) {
            bool alarm = false;
            while (next < run.alarms.size() &&
                   (run.alarms[next].tick < t ||
                    (run.alarms[next].tick == t && static_cast<Eigen::Index>(run.alarms[next].vertex) < i))) {
                ++next;
            }
            if (next < run.alarms.size() && run.alarms[next].tick == t &&
                static_cast<Eigen::Index>(run.alarms[next].vertex) == i) {
                alarm = true;
            }
            out << t << ',' << i << ',' << run.statistics(t, i) << ',' << (alarm ? 1 : 0) << '\n';
        }
    }
}

nlohmann::json run_summary(const DetectionRun& run) {
    return {{"detector", to_string(run.detector)},
            {"p", run.p},
            {"ticks", run.ticks()},
            {"first_alarm", run.first_alarm},
            {"alarm_count", run.alarms.size()},
            {"messages", {{"state", run.messages.state}, {"statistic", run.messages.statistic}}}};
}

DetectorStatistics detector_variants(const Eigen::VectorXd& d, const Graph& g) {
    const std::size_t p = g.vertex_count();
    if (static_cast<std::size_t>(d.size()) != p) {
        throw std::invalid_argument("detector_variants: snapshot has dimension " + std::to_string(d.size()) +
                                    ", graph has " + std::to_string(p) + " vertices");
    }
    DetectorStatistics s;
    s.coherent = d;
    s.squared_norm = d.cwiseAbs2();
    for (Vertex i = 0; i < p; ++i) {
        for (const Neighbor& n : g.neighbors(i)) {
            s.coherent(static_cast<Eigen::Index>(i)) += d(static_cast<Eigen::Index>(n.vertex));
            s.squared_norm(static_cast<Eigen::Index>(i)) += d(static_cast<Eigen::Index>(n.vertex)) *
                                                            d(static_cast<Eigen::Index>(n.vertex));
        }
    }
    s.squared_norm = s.squared_norm.cwiseSqrt();
    s.independent = d.cwiseAbs();
    s.centralized = d.norm();
    return s;
}

Eigen::VectorXd detector_statistic(const Eigen::VectorXd& d, const Graph& g, Detector detector) {
    DetectorStatistics s = detector_variants(d, g);
    switch (detector) {
    case Detector::CoherentSum:
        return s.coherent;
    case Detector::SquaredNorm:
        return s.squared_norm;
    case Detector::Independent:
        return s.independent;
    case Detector::Centralized:
        return Eigen::VectorXd::Constant(1, s.centralized);
    }
    return {};
}

ArmaRecursion::ArmaRecursion(const Graph& g, const ArmaFilter& filter, double lambda_slow, double lambda_fast,
                             Eigen::Index chains)
    : filter_(filter), lambda_slow_(lambda_slow), lambda_fast_(lambda_fast) {
    const auto p = static_cast<Eigen::Index>(g.vertex_count());
    std::vector<Eigen::Triplet<double>> entries;
    for (Vertex i = 0; i < g.vertex_count(); ++i) {
        const double di = g.degree(i);
        if (di <= 0.0) {
            throw GraphError("isolated vertex " + std::to_string(i));
        }
        entries.emplace_back(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i), 1.0);
        for (const Neighbor& n : g.neighbors(i)) {
            entries.emplace_back(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(n.vertex),
                                 -n.weight / std::sqrt(di * g.degree(n.vertex)));
        }
    }
    laplacian_.resize(p, p);
    laplacian_.setFromTriplets(entries.begin(), entries.end());
    re_.assign(filter_.order(), Eigen::MatrixXd::Zero(p, chains));
    im_.assign(filter_.order(), Eigen::MatrixXd::Zero(p, chains));
    z_ = Eigen::MatrixXd::Zero(p, chains);
    v_ = Eigen::MatrixXd::Zero(p, chains);
    v_fast_ = Eigen::MatrixXd::Zero(p, chains);
}

void ArmaRecursion::step(const Eigen::MatrixXd& y) {
    if (y.rows() != z_.rows() || y.cols() != z_.cols()) {
        throw std::invalid_argument("ArmaRecursion: input must be " + std::to_string(z_.rows()) + " x " +
                                    std::to_string(z_.cols()));
    }
    ++tick_;
    z_ = filter_.c * y;
    for (std::size_t l = 0; l < filter_.order(); ++l) {
        const double pr = filter_.taps[l].psi.real();
        const double pi = filter_.taps[l].psi.imag();
        const Eigen::MatrixXd lr = laplacian_ * re_[l];
        const Eigen::MatrixXd li = laplacian_ * im_[l];
        re_[l] = pr * lr - pi * li + filter_.taps[l].phi.real() * y;
        im_[l] = pr * li + pi * lr + filter_.taps[l].phi.imag() * y;
        z_ += re_[l];
    }
    Eigen::Index row = 0;
    Eigen::Index col = 0;
    if (!(z_.cwiseAbs().maxCoeff(&row, &col) <= divergence_bound)) {
        throw DivergenceError(static_cast<Vertex>(row), tick_);
    }
    v_ = (1.0 - lambda_slow_) * v_ + lambda_slow_ * z_;
    v_fast_ = (1.0 - lambda_fast_) * v_fast_ + lambda_fast_ * z_;
}

} // namespace dagfss
