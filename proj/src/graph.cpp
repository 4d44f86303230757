#include "dagfss/graph.hpp"

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>

namespace dagfss {
namespace {

std::string describe(const Edge& e) {
    std::ostringstream os;
    os << "(" << e.i << ", " << e.j << ", " << e.w << ")";
    return os.str();
}

} // namespace

Graph::Graph(std::size_t p, std::span<const Edge> edges) : adjacency_(p) {
    edges_.reserve(edges.size());
    for (const Edge& e : edges) {
        if (e.i >= p || e.j >= p) {
            throw GraphError("edge " + describe(e) + ": vertex index out of range [0, " +
                             std::to_string(p) + ")");
        }
        if (e.i == e.j) {
            throw GraphError("edge " + describe(e) + ": self-loop");
        }
        if (!std::isfinite(e.w) || e.w < 0.0) {
            throw GraphError("edge " + describe(e) + ": negative or non-finite weight");
        }
        if (e.w == 0.0) {
            throw GraphError("edge " + describe(e) + ": zero weight");
        }
        edges_.push_back({std::min(e.i, e.j), std::max(e.i, e.j), e.w});
    }
    std::sort(edges_.begin(), edges_.end(), [](const Edge& a, const Edge& b) {
        return a.i != b.i ? a.i < b.i : a.j < b.j;
    });
    for (std::size_t k = 1; k < edges_.size(); ++k) {
        if (edges_[k].i == edges_[k - 1].i && edges_[k].j == edges_[k - 1].j) {
            throw GraphError("edge " + describe(edges_[k]) + ": duplicate edge");
        }
    }
    for (const Edge& e : edges_) {
        adjacency_[e.i].push_back({e.j, e.w});
        adjacency_[e.j].push_back({e.i, e.w});
    }
    for (auto& row : adjacency_) {
        std::sort(row.begin(), row.end(),
                  [](const Neighbor& a, const Neighbor& b) { return a.vertex < b.vertex; });
    }
}

void Graph::check_vertex(Vertex i) const {
    if (i >= vertex_count()) {
        throw GraphError("vertex " + std::to_string(i) + " out of range [0, " +
                         std::to_string(vertex_count()) + ")");
    }
}

std::span<const Neighbor> Graph::neighbors(Vertex i) const {
    check_vertex(i);
    return adjacency_[i];
}

double Graph::degree(Vertex i) const {
    double d = 0.0;
    for (const Neighbor& n : neighbors(i)) {
        d += n.weight;
    }
    return d;
}

double Graph::weight(Vertex i, Vertex j) const {
    check_vertex(j);
    const auto row = neighbors(i);
    auto it = std::lower_bound(row.begin(), row.end(), j,
                               [](const Neighbor& n, Vertex v) { return n.vertex < v; });
    return (it != row.end() && it->vertex == j) ? it->weight : 0.0;
}

Graph build_graph(std::span<const Edge> edges) {
    std::size_t p = 0;
    for (const Edge& e : edges) {
        p = std::max({p, e.i + 1, e.j + 1});
    }
    return Graph(p, edges);
}

namespace {

std::vector<double> inverse_sqrt_degrees(const Graph& g) {
    const std::size_t p = g.vertex_count();
    if (p == 0) {
        throw GraphError("empty graph");
    }
    std::vector<double> s(p);
    for (Vertex i = 0; i < p; ++i) {
        const double d = g.degree(i);
        if (d <= 0.0) {
            throw GraphError("isolated vertex " + std::to_string(i));
        }
        s[i] = 1.0 / std::sqrt(d);
    }
    return s;
}

} // namespace

Eigen::MatrixXd normalized_laplacian(const Graph& g) {
    const auto s = inverse_sqrt_degrees(g);
    const auto p = static_cast<Eigen::Index>(g.vertex_count());
    Eigen::MatrixXd L = Eigen::MatrixXd::Identity(p, p);
    for (const Edge& e : g.edges()) {
        const double v = -e.w * s[e.i] * s[e.j];
        L(static_cast<Eigen::Index>(e.i), static_cast<Eigen::Index>(e.j)) = v;
        L(static_cast<Eigen::Index>(e.j), static_cast<Eigen::Index>(e.i)) = v;
    }
    return L;
}

std::vector<double> laplacian_row_weights(const Graph& g, Vertex i) {
    const double di = g.degree(i);
    if (di <= 0.0) {
        throw GraphError("isolated vertex " + std::to_string(i));
    }
    std::vector<double> row;
    for (const Neighbor& n : g.neighbors(i)) {
        row.push_back(-n.weight / std::sqrt(di * g.degree(n.vertex)));
    }
    return row;
}

LaplacianSpectrum spectrum(const Eigen::MatrixXd& laplacian) {
    if (laplacian.rows() != laplacian.cols() || laplacian.rows() == 0) {
        throw std::invalid_argument("spectrum: matrix must be square and non-empty");
    }
    const double asym = (laplacian - laplacian.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-12) {
        throw std::invalid_argument("spectrum: matrix is not symmetric (max |L - L^T| = " +
                                    std::to_string(asym) + ")");
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(laplacian);
    if (solver.info() != Eigen::Success) {
        throw std::runtime_error("spectrum: eigendecomposition failed");
    }
    LaplacianSpectrum out;
    out.eigenvalues = solver.eigenvalues();
    out.eigenvectors = solver.eigenvectors();
    for (Eigen::Index k = 0; k < out.eigenvectors.cols(); ++k) {
        auto col = out.eigenvectors.col(k);
        for (Eigen::Index r = 0; r < col.size(); ++r) {
            if (std::abs(col(r)) > 1e-12) {
                if (col(r) < 0.0) {
                    col = -col;
                }
                break;
            }
        }
    }
    out.spectral_radius = out.eigenvalues.cwiseAbs().maxCoeff();
    return out;
}

std::vector<Vertex> closed_neighborhood(const Graph& g, Vertex i) {
    std::vector<Vertex> out{i};
    for (const Neighbor& n : g.neighbors(i)) {
        out.push_back(n.vertex);
    }
    std::sort(out.begin(), out.end());
    return out;
}

Graph read_edge_list(std::istream& in) {
    std::vector<Edge> edges;
    std::string line;
    std::size_t lineno = 0;
    std::optional<std::size_t> declared_p;
    while (std::getline(in, line)) {
        ++lineno;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) {
            continue;
        }
        if (line[first] == '#') {
            unsigned long long p = 0;
            if (!declared_p && std::sscanf(line.c_str() + first, "# p=%llu", &p) == 1) {
                declared_p = static_cast<std::size_t>(p);
            }
            continue;
        }
        std::istringstream ls(line);
        long long i = -1;
        long long j = -1;
        double w = 0.0;
        if (!(ls >> i >> j >> w) || i < 0 || j < 0) {
            throw GraphError("edge list line " + std::to_string(lineno) + ": expected \"i j w\"");
        }
        edges.push_back({static_cast<Vertex>(i), static_cast<Vertex>(j), w});
    }
    return declared_p ? Graph(*declared_p, edges) : build_graph(edges);
}

Graph read_edge_list(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    return read_edge_list(in);
}

void write_edge_list(std::ostream& out, const Graph& g) {
    out << "# p=" << g.vertex_count() << " m=" << g.edge_count() << "\n";
    out.precision(17);
    for (const Edge& e : g.edges()) {
        out << e.i << ' ' << e.j << ' ' << e.w << '\n';
    }
}

} // namespace dagfss
