#ifndef DAGFSS_GRAPH_HPP
#define DAGFSS_GRAPH_HPP

#include <cstddef>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace dagfss {

using Vertex = std::size_t;

/// Thrown for malformed edge lists and degenerate graphs.
class GraphError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

struct Edge {
    Vertex i;
    Vertex j;
    double w;
};

struct Neighbor {
    Vertex vertex;
    double weight;
};

/// Weighted undirected graph without self-loops. Vertices are 0-based.
///
/// Edges are stored once in canonical order (i < j, sorted lexicographically),
/// adjacency is served both ways. Immutable after construction.
class Graph {
  public:
    /// Builds a graph on `p` vertices. Edges may be given in any order and
    /// with either endpoint first; (i, j) and (j, i) count as duplicates.
    Graph(std::size_t p, std::span<const Edge> edges);

    std::size_t vertex_count() const noexcept { return adjacency_.size(); }
    std::size_t edge_count() const noexcept { return edges_.size(); }

    const std::vector<Edge>& edges() const noexcept { return edges_; }

    /// Neighbors of `i` sorted by vertex index.
    std::span<const Neighbor> neighbors(Vertex i) const;

    /// Weighted degree d_i = sum_j W(i, j).
    double degree(Vertex i) const;

    /// W(i, j); zero when (i, j) is not an edge.
    double weight(Vertex i, Vertex j) const;

  private:
    void check_vertex(Vertex i) const;

    std::vector<Edge> edges_;
    std::vector<std::vector<Neighbor>> adjacency_;
};

/// Vertex count inferred as 1 + largest index.
Graph build_graph(std::span<const Edge> edges);

/// L = I - D^{-1/2} W D^{-1/2}. Throws GraphError on an isolated vertex.
Eigen::MatrixXd normalized_laplacian(const Graph& g);

/// Off-diagonal entries of one row of the normalized Laplacian, aligned with
/// `g.neighbors(i)`. The diagonal entry is 1 for every non-isolated vertex.
std::vector<double> laplacian_row_weights(const Graph& g, Vertex i);

struct LaplacianSpectrum {
    Eigen::VectorXd eigenvalues;  // ascending
    Eigen::MatrixXd eigenvectors; // column k pairs with eigenvalues(k)
    double spectral_radius = 0.0;

    std::size_t size() const noexcept { return static_cast<std::size_t>(eigenvalues.size()); }
};

/// Dense symmetric eigendecomposition. Each eigenvector is signed so that its
/// first entry with magnitude above 1e-12 is positive.
LaplacianSpectrum spectrum(const Eigen::MatrixXd& laplacian);

/// Closed neighborhood: `i` together with all of its neighbors, sorted.
std::vector<Vertex> closed_neighborhood(const Graph& g, Vertex i);

// Edge-list text format: "i j w" per line, '#' starts a comment line. A leading
// "# p=N" comment fixes the vertex count; otherwise it is 1 + largest index.
Graph read_edge_list(std::istream& in);
Graph read_edge_list(const std::filesystem::path& path);
void write_edge_list(std::ostream& out, const Graph& g);

} // namespace dagfss

#endif // DAGFSS_GRAPH_HPP
