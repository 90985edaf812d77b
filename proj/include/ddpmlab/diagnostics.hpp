#pragma once

// Monte Carlo and geometric checks on the forward process, all reported in
// forward time u (so the posterior-trace curve must be non-decreasing in u).

#include <cstdint>
#include <string>
#include <vector>

#include "ddpmlab/sample_batch.hpp"
#include "ddpmlab/targets.hpp"

namespace ddpmlab {

struct Estimate {
    double value = 0.0;
    double std_error = 0.0;
    int samples = 0;
};

// E[Tr Sigma_u(X_u)] with X_u ~ q_u: MC over forward samples, inner trace analytic.
Estimate mc_mean_trace(const TargetDistribution& target, double u, int n, std::uint64_t seed, int workers = 1);

struct TraceCurve {
    std::vector<double> u;
    std::vector<double> estimate;
    std::vector<double> std_error;
    std::vector<std::uint64_t> seeds;  // grid point j was estimated from seeds[j]
    int samples = 0;

    // Columns u, estimate, stderr, n, seed.
    void write_csv(const std::string& path) const;
};

// One independent estimate per grid point, seeded with derive_seed(seed, j).
TraceCurve trace_curve(const TargetDistribution& target, const std::vector<double>& grid, int n, std::uint64_t seed,
                       int workers = 1);

struct MonotoneReport {
    TraceCurve curve;
    double slack = 4.0;
    std::vector<int> violations;  // j with e(u_{j+1}) < e(u_j) - slack * combined stderr
    // min_j (e(u_{j+1}) - e(u_j)) / combined stderr; +inf when every stderr is 0 and the curve is non-decreasing.
    double worst_margin = 0.0;
    bool passed() const { return violations.empty(); }
};

MonotoneReport check_trace_monotone(const TargetDistribution& target, const std::vector<double>& grid, int n,
                                    std::uint64_t seed, int workers = 1, double slack = 4.0);

struct PosvarRatio {
    double ratio = 0.0;
    double estimate = 0.0;
    double std_error = 0.0;
    double bound = 0.0;  // min{E||X_0||^2, sigma_u^2 / (1 - sigma_u^2) k log k}
};

// E[Tr Sigma_u] / min{E||X_0||^2, sigma_u^2/(1 - sigma_u^2) k log k}. Needs k >= 2
// (log 1 = 0 makes the second branch vacuous).
PosvarRatio posvar_bound_ratio(const TargetDistribution& target, double u, int k_declared, int n, std::uint64_t seed,
                               int workers = 1);

struct LocalizationResult {
    double frobenius = 0.0;        // E||Sigma_u||_F^2
    double trace_slope = 0.0;      // d/du E Tr Sigma_u by central difference with step h
    double scale = 0.0;            // sigma_u^4 / (2 (1 - sigma_u^2))
    double stat_error = 0.0;       // stderr of the per-sample difference
    double fd_error = 0.0;         // scale * |slope(h) - slope(2h)| / 3
    double residual() const { return frobenius - scale * trace_slope; }
    double relative() const;
    double combined_error() const { return stat_error + fd_error; }
    bool within(double multiple) const;
};

// E||Sigma_u||_F^2 against sigma_u^4/(2(1 - sigma_u^2)) d/du E Tr Sigma_u. All
// evaluations share one draw of (X_0, W), so X_{u +- h} are coupled.
LocalizationResult localization_residual(const TargetDistribution& target, double u, double h, int n,
                                         std::uint64_t seed, int workers = 1);

// Farthest-point greedy cover at scale eps after lexicographic row sort: the
// returned count upper-bounds the eps-covering number and lower-bounds it at eps/2.
int greedy_cover(const RowMatrix& points, double eps);

// Counts for several scales from a single traversal (selection order does not
// depend on eps). counts[i] is the cover size at eps[i].
std::vector<int> cover_sweep(const RowMatrix& points, const std::vector<double>& eps);

// U-statistic 2 E||A - B|| - E||A - A'|| - E||B - B'||.
double energy_distance(const RowMatrix& a, const RowMatrix& b, int workers = 1);
double energy_distance(const SampleBatch& a, const SampleBatch& b, int workers = 1);

struct EnergyTest {
    double statistic = 0.0;  // on the first `per_side` rows of each sample
    double null_quantile = 0.0;
    double p_value = 1.0;
    int permutations = 0;
    int per_side = 0;
    bool rejects() const { return statistic > null_quantile; }
};

// Permutation test on the pooled distance matrix, using at most max_per_side rows of each sample.
EnergyTest energy_test(const RowMatrix& a, const RowMatrix& b, int permutations, double level, std::uint64_t seed,
                       int max_per_side = 1000, int workers = 1);

}  // namespace ddpmlab
