#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace stva {

struct County {
    std::string fips;  // 5-digit zero-padded identifier
    std::string name;
    std::string state; // 2-letter code
    double lat = 0.0;
    double lon = 0.0;
    bool is_hub = false;
};

/// Counties in a fixed order (ascending FIPS), undirected adjacency edges as
/// index pairs (i < j), and the hub index set. Immutable once built.
class CountyGraph {
public:
    CountyGraph() = default;

    /// Validates counties and FIPS-keyed edges, sorts counties ascending by
    /// FIPS and remaps edges onto the resulting index space. Throws
    /// ValidationError on duplicate FIPS, malformed FIPS, out-of-range
    /// coordinates, unknown edge endpoints, self-edges or duplicate edges.
    static CountyGraph build(std::vector<County> counties,
                             const std::vector<std::pair<std::string, std::string>>& edges_by_fips);

    int size() const { return static_cast<int>(counties_.size()); }
    const std::vector<County>& counties() const { return counties_; }
    const County& county(int i) const { return counties_[static_cast<std::size_t>(i)]; }
    const std::vector<std::pair<int, int>>& edges() const { return edges_; }
    const std::vector<int>& hubs() const { return hubs_; }

    /// Index of a FIPS code, or -1.
    int index_of(const std::string& fips) const;

private:
    std::vector<County> counties_;
    std::vector<std::pair<int, int>> edges_; // i < j, sorted, unique
    std::vector<int> hubs_;                  // sorted indices
};

/// Loads counties.csv (`fips,name,state,lat,lon,is_hub`) and adjacency.csv
/// (`fips_a,fips_b`). With mainland_only, counties outside the contiguous
/// states (AK, HI and territories) are dropped along with their edges.
CountyGraph load_county_graph(const std::string& counties_csv,
                              const std::string& adjacency_csv,
                              bool mainland_only = true);

/// The shared support of the three lag-matrix families: all self-pairs, both
/// orientations of every adjacency edge, and the full row and column of every
/// hub. Stored row-major (CSR) with sorted columns.
class SparsityPattern {
public:
    SparsityPattern() = default;

    int n() const { return n_; }
    std::size_t nnz() const { return col_.size(); }

    std::span<const int> row_cols(int i) const {
        return {col_.data() + row_ptr_[static_cast<std::size_t>(i)],
                row_ptr_[static_cast<std::size_t>(i) + 1] - row_ptr_[static_cast<std::size_t>(i)]};
    }
    std::size_t row_begin(int i) const { return row_ptr_[static_cast<std::size_t>(i)]; }
    std::size_t row_nnz(int i) const {
        return row_ptr_[static_cast<std::size_t>(i) + 1] - row_ptr_[static_cast<std::size_t>(i)];
    }

    /// Entry index of (i, j), or -1 when off-pattern.
    std::ptrdiff_t index_of(int i, int j) const;
    bool contains(int i, int j) const { return index_of(i, j) >= 0; }

    /// Row of the k-th entry (entries are row-major, so this is a search over
    /// row_ptr). Column is col_index()[k].
    int entry_row(std::size_t k) const;

    const std::vector<int>& col_index() const { return col_; }
    const std::vector<std::size_t>& row_ptr() const { return row_ptr_; }

    std::uint64_t hash() const;

    static SparsityPattern from_entries(int n, std::vector<std::pair<int, int>> entries);
    static SparsityPattern diagonal(int n);

private:
    int n_ = 0;
    std::vector<std::size_t> row_ptr_; // n+1
    std::vector<int> col_;             // nnz, sorted within rows
};

SparsityPattern build_pattern(const CountyGraph& graph);

struct ParameterCounts {
    std::uint64_t sparse_total = 0;
    std::uint64_t dense_total = 0;
};

/// sparse = 3*p*nnz + 2*K*p + 2*L; dense = p*(2N)^2 + 2*K*p + 2*L.
ParameterCounts count_parameters(const SparsityPattern& pattern, int p, int K, int L);

enum class DistanceMode {
    great_circle_normalized, // haversine / max pairwise distance, s in [0,1]
    euclidean_degrees,       // plain Euclidean distance in degrees
};

DistanceMode parse_distance_mode(const std::string& s);
std::string to_string(DistanceMode mode);

/// sigma[i][j] = eta * exp(-eta * s_ij) with a Cholesky factor for solves.
struct SpatialCovariance {
    double eta = 0.0;
    Eigen::MatrixXd distances;
    Eigen::MatrixXd sigma;
    Eigen::LLT<Eigen::MatrixXd> chol;
    bool jitter_applied = false;
    double jitter = 0.0;

    Eigen::VectorXd solve(const Eigen::VectorXd& b) const { return chol.solve(b); }

    /// sigma = eta * I; used by tests and as the no-op whitening baseline.
    static SpatialCovariance diagonal(int n, double eta);
};

/// Builds the exponential spatial covariance from county centroids. If the
/// factorization fails on numerically coincident centroids, a diagonal jitter
/// of 1e-8 * eta is added once and recorded on the result.
SpatialCovariance build_covariance(const CountyGraph& graph, double eta, DistanceMode mode);

/// Great-circle distance in kilometers (haversine, mean earth radius).
double great_circle_km(double lat1, double lon1, double lat2, double lon2);

} // namespace stva
