#include "stva/geo.hpp"

#include "stva/csv.hpp"
#include "stva/digest.hpp"
#include "stva/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <unordered_map>
#include <unordered_set>

namespace stva {

namespace {

bool valid_fips(const std::string& fips) {
    if (fips.size() != 5) return false;
    return std::all_of(fips.begin(), fips.end(), [](char c) { return c >= '0' && c <= '9'; });
}

// Contiguous-48 filter: drop Alaska, Hawaii and the territories.
const std::unordered_set<std::string> kNonMainland = {"AK", "HI", "PR", "VI", "GU", "MP", "AS"};

} // namespace

CountyGraph CountyGraph::build(std::vector<County> counties,
                               const std::vector<std::pair<std::string, std::string>>& edges_by_fips) {
    CountyGraph g;
    std::sort(counties.begin(), counties.end(),
              [](const County& a, const County& b) { return a.fips < b.fips; });

    std::unordered_map<std::string, int> index;
    index.reserve(counties.size());
    for (std::size_t i = 0; i < counties.size(); ++i) {
        const County& c = counties[i];
        if (!valid_fips(c.fips))
            throw ValidationError("malformed FIPS (want 5 digits, zero-padded): '" + c.fips + "'");
        if (!std::isfinite(c.lat) || !std::isfinite(c.lon))
            throw ValidationError("non-finite coordinates for FIPS " + c.fips);
        if (c.lat < -90.0 || c.lat > 90.0 || c.lon < -180.0 || c.lon > 180.0)
            throw ValidationError("coordinates out of range for FIPS " + c.fips);
        if (!index.emplace(c.fips, static_cast<int>(i)).second)
            throw ValidationError("duplicate FIPS: " + c.fips);
    }

    std::set<std::pair<int, int>> seen;
    for (const auto& [fa, fb] : edges_by_fips) {
        auto ia = index.find(fa);
        auto ib = index.find(fb);
        if (ia == index.end()) throw ValidationError("adjacency references unknown FIPS: " + fa);
        if (ib == index.end()) throw ValidationError("adjacency references unknown FIPS: " + fb);
        int a = ia->second, b = ib->second;
        if (a == b) throw ValidationError("self-edge for FIPS " + fa);
        if (a > b) std::swap(a, b);
        if (!seen.emplace(a, b).second)
            throw ValidationError("duplicate adjacency edge: " + fa + "," + fb);
    }

    g.counties_ = std::move(counties);
    g.edges_.assign(seen.begin(), seen.end());
    for (std::size_t i = 0; i < g.counties_.size(); ++i) {
        if (g.counties_[i].is_hub) g.hubs_.push_back(static_cast<int>(i));
    }
    return g;
}

int CountyGraph::index_of(const std::string& fips) const {
    auto it = std::lower_bound(counties_.begin(), counties_.end(), fips,
                               [](const County& c, const std::string& f) { return c.fips < f; });
    if (it == counties_.end() || it->fips != fips) return -1;
    return static_cast<int>(it - counties_.begin());
}

CountyGraph load_county_graph(const std::string& counties_csv, const std::string& adjacency_csv,
                              bool mainland_only) {
    CsvTable ct = read_csv(counties_csv);
    const std::vector<std::string> want = {"fips", "name", "state", "lat", "lon", "is_hub"};
    if (ct.header != want)
        throw ValidationError("counties csv header mismatch, want fips,name,state,lat,lon,is_hub");

    std::vector<County> counties;
    std::unordered_set<std::string> kept;
    for (const auto& row : ct.rows) {
        if (row.size() != 6)
            throw ValidationError("counties csv: bad field count in row for '" +
                                  (row.empty() ? std::string() : row[0]) + "'");
        County c;
        c.fips = row[0];
        c.name = row[1];
        c.state = row[2];
        if (mainland_only && kNonMainland.count(c.state)) continue;
        try {
            c.lat = std::stod(row[3]);
            c.lon = std::stod(row[4]);
        } catch (const std::exception&) {
            throw ValidationError("counties csv: unparsable coordinates for FIPS " + c.fips);
        }
        if (row[5] != "0" && row[5] != "1" && row[5] != "true" && row[5] != "false")
            throw ValidationError("counties csv: is_hub must be 0/1/true/false for FIPS " + c.fips);
        c.is_hub = (row[5] == "1" || row[5] == "true");
        kept.insert(c.fips);
        counties.push_back(std::move(c));
    }

    CsvTable at = read_csv(adjacency_csv);
    if (at.header != std::vector<std::string>{"fips_a", "fips_b"})
        throw ValidationError("adjacency csv header mismatch, want fips_a,fips_b");
    std::vector<std::pair<std::string, std::string>> edges;
    for (const auto& row : at.rows) {
        if (row.size() != 2) throw ValidationError("adjacency csv: bad field count");
        // Edges into dropped (non-mainland) counties are dropped with them.
        if (mainland_only && (!kept.count(row[0]) || !kept.count(row[1]))) continue;
        edges.emplace_back(row[0], row[1]);
    }
    return CountyGraph::build(std::move(counties), edges);
}

SparsityPattern SparsityPattern::from_entries(int n, std::vector<std::pair<int, int>> entries) {
    std::sort(entries.begin(), entries.end());
    entries.erase(std::unique(entries.begin(), entries.end()), entries.end());

    SparsityPattern pat;
    pat.n_ = n;
    pat.row_ptr_.assign(static_cast<std::size_t>(n) + 1, 0);
    pat.col_.reserve(entries.size());
    for (const auto& [i, j] : entries) {
        if (i < 0 || i >= n || j < 0 || j >= n)
            throw ValidationError("pattern entry out of range");
        pat.row_ptr_[static_cast<std::size_t>(i) + 1]++;
        pat.col_.push_back(j);
    }
    for (std::size_t i = 1; i < pat.row_ptr_.size(); ++i) pat.row_ptr_[i] += pat.row_ptr_[i - 1];
    return pat;
}

SparsityPattern SparsityPattern::diagonal(int n) {
    std::vector<std::pair<int, int>> entries;
    entries.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) entries.emplace_back(i, i);
    return from_entries(n, std::move(entries));
}

std::ptrdiff_t SparsityPattern::index_of(int i, int j) const {
    if (i < 0 || i >= n_ || j < 0 || j >= n_) return -1;
    auto begin = col_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[static_cast<std::size_t>(i)]);
    auto end = col_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[static_cast<std::size_t>(i) + 1]);
    auto it = std::lower_bound(begin, end, j);
    if (it == end || *it != j) return -1;
    return it - col_.begin();
}

int SparsityPattern::entry_row(std::size_t k) const {
    auto it = std::upper_bound(row_ptr_.begin(), row_ptr_.end(), k);
    return static_cast<int>(it - row_ptr_.begin()) - 1;
}

std::uint64_t SparsityPattern::hash() const {
    std::uint64_t h = fnv1a64(&n_, sizeof(n_));
    h = fnv1a64(col_.data(), col_.size() * sizeof(int), h);
    h = fnv1a64(row_ptr_.data(), row_ptr_.size() * sizeof(std::size_t), h);
    return h;
}

SparsityPattern build_pattern(const CountyGraph& graph) {
    const int n = graph.size();
    std::vector<char> is_hub(static_cast<std::size_t>(n), 0);
    for (int h : graph.hubs()) is_hub[static_cast<std::size_t>(h)] = 1;

    std::vector<std::pair<int, int>> entries;
    entries.reserve(static_cast<std::size_t>(n) * (1 + 2 * graph.hubs().size()) +
                    2 * graph.edges().size());
    for (int i = 0; i < n; ++i) entries.emplace_back(i, i);
    for (const auto& [a, b] : graph.edges()) {
        entries.emplace_back(a, b);
        entries.emplace_back(b, a);
    }
    for (int h : graph.hubs()) {
        for (int j = 0; j < n; ++j) {
            if (j == h) continue;
            entries.emplace_back(h, j);
            entries.emplace_back(j, h);
        }
    }
    return SparsityPattern::from_entries(n, std::move(entries));
}

ParameterCounts count_parameters(const SparsityPattern& pattern, int p, int K, int L) {
    if (p < 1) throw ValidationError("count_parameters: p must be >= 1");
    if (K < 0 || L < 0) throw ValidationError("count_parameters: K and L must be >= 0");
    const auto n = static_cast<std::uint64_t>(pattern.n());
    const auto up = static_cast<std::uint64_t>(p);
    ParameterCounts counts;
    counts.sparse_total = 3 * up * pattern.nnz() + 2 * static_cast<std::uint64_t>(K) * up +
                          2 * static_cast<std::uint64_t>(L);
    counts.dense_total = up * (2 * n) * (2 * n) + 2 * static_cast<std::uint64_t>(K) * up +
                         2 * static_cast<std::uint64_t>(L);
    return counts;
}

DistanceMode parse_distance_mode(const std::string& s) {
    if (s == "great-circle-normalized") return DistanceMode::great_circle_normalized;
    if (s == "euclidean-degrees") return DistanceMode::euclidean_degrees;
    throw ValidationError("unknown distance mode: " + s);
}

std::string to_string(DistanceMode mode) {
    return mode == DistanceMode::great_circle_normalized ? "great-circle-normalized"
                                                         : "euclidean-degrees";
}

double great_circle_km(double lat1, double lon1, double lat2, double lon2) {
    constexpr double kEarthRadiusKm = 6371.0;
    constexpr double kDeg = M_PI / 180.0;
    const double phi1 = lat1 * kDeg, phi2 = lat2 * kDeg;
    const double dphi = (lat2 - lat1) * kDeg, dlam = (lon2 - lon1) * kDeg;
    const double a = std::sin(dphi / 2) * std::sin(dphi / 2) +
                     std::cos(phi1) * std::cos(phi2) * std::sin(dlam / 2) * std::sin(dlam / 2);
    return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(a)));
}

SpatialCovariance SpatialCovariance::diagonal(int n, double eta) {
    SpatialCovariance cov;
    cov.eta = eta;
    cov.distances = Eigen::MatrixXd::Constant(n, n, std::numeric_limits<double>::infinity());
    cov.distances.diagonal().setZero();
    cov.sigma = Eigen::MatrixXd::Identity(n, n) * eta;
    cov.chol.compute(cov.sigma);
    return cov;
}

SpatialCovariance build_covariance(const CountyGraph& graph, double eta, DistanceMode mode) {
    if (eta <= 0.0) throw ValidationError("build_covariance: eta must be positive");
    const int n = graph.size();
    if (n < 1) throw ValidationError("build_covariance: need at least one county");

    for (const County& c : graph.counties()) {
        if (!std::isfinite(c.lat) || !std::isfinite(c.lon))
            throw ValidationError("build_covariance: non-finite coordinates for " + c.fips);
    }

    SpatialCovariance cov;
    cov.eta = eta;
    cov.distances.resize(n, n);
    for (int i = 0; i < n; ++i) {
        cov.distances(i, i) = 0.0;
        const County& ci = graph.county(i);
        for (int j = i + 1; j < n; ++j) {
            const County& cj = graph.county(j);
            double s;
            if (mode == DistanceMode::euclidean_degrees) {
                s = std::hypot(ci.lat - cj.lat, ci.lon - cj.lon);
            } else {
                s = great_circle_km(ci.lat, ci.lon, cj.lat, cj.lon);
            }
            cov.distances(i, j) = s;
            cov.distances(j, i) = s;
        }
    }
    if (mode == DistanceMode::great_circle_normalized && n > 1) {
        const double dmax = cov.distances.maxCoeff();
        if (dmax > 0.0) cov.distances /= dmax;
    }

    cov.sigma = eta * (-eta * cov.distances.array()).exp().matrix();
    cov.sigma.diagonal().setConstant(eta); // exact, s_ii = 0

    // LLT does not flag exactly singular PSD input, so rank-test the pivots:
    // rounding turns a zero pivot into roughly max_pivot * sqrt(eps).
    auto factorization_ok = [&]() {
        if (cov.chol.info() != Eigen::Success) return false;
        const auto diag = cov.chol.matrixLLT().diagonal();
        const double tol =
            diag.maxCoeff() * std::sqrt(static_cast<double>(n)) * 4.0 *
            std::sqrt(std::numeric_limits<double>::epsilon());
        return diag.minCoeff() > tol;
    };
    cov.chol.compute(cov.sigma);
    if (!factorization_ok()) {
        // Coincident centroids make sigma numerically rank-deficient.
        cov.jitter = 1e-8 * eta;
        cov.sigma.diagonal().array() += cov.jitter;
        cov.jitter_applied = true;
        cov.chol.compute(cov.sigma);
        if (!factorization_ok())
            throw NumericalError("spatial covariance factorization failed even with jitter");
    }
    return cov;
}

} // namespace stva
