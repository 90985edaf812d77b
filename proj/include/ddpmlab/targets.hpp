#pragma once

// Analytic data laws with known intrinsic dimension, and exact posterior /
// score oracles for their Gaussian-corrupted versions
//   X_t = sqrt(1 - sigma_t^2) X_0 + sigma_t W.

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "ddpmlab/noise.hpp"
#include "ddpmlab/sample_batch.hpp"

namespace ddpmlab {

// Weighted empirical measure. Also used for manifold examples (points sampled
// from the manifold) and for the point mass (a single point at the origin).
struct PointCloud {
    RowMatrix points;     // M x d
    Vector weights;       // M, on the simplex
    int intrinsic_dim = 0;  // metadata for diagnostics; the sampler never reads it
    double radius = 0.0;    // every ||x_i|| <= radius

    // Filled at construction.
    Vector sq_norms;
    Vector log_weights;
    // When the points lie in a linear subspace of dimension r < d (to 1e-12 relative),
    // span holds an orthonormal d x r basis and span_coords the M x r coordinates.
    // Batch posterior evaluation then works in r dimensions. Empty otherwise.
    Eigen::MatrixXd span;
    RowMatrix span_coords;
};

// X_0 = scale * U z with z ~ N(0, I_k) and U (d x k) orthonormal. k = 0 is the point mass.
struct SubspaceGaussian {
    Eigen::MatrixXd basis;
    double scale = 1.0;
};

class TargetDistribution {
public:
    // radius < 0 means "use max ||x_i||". Empty weights means uniform.
    static TargetDistribution point_cloud(RowMatrix points, Vector weights = {}, int intrinsic_dim = 0,
                                          double radius = -1.0);
    static TargetDistribution subspace_gaussian(Eigen::MatrixXd basis, double scale = 1.0);
    // Subspace Gaussian on the first k coordinate axes of R^d.
    static TargetDistribution axis_subspace_gaussian(int dim, int k, double scale = 1.0);
    static TargetDistribution point_mass(int dim);

    int dim() const;
    int intrinsic_dim() const;
    // E||X_0||^2: sum_i w_i ||x_i||^2, or k scale^2.
    double second_moment() const;

    const PointCloud* as_point_cloud() const { return std::get_if<PointCloud>(&law_); }
    const SubspaceGaussian* as_subspace_gaussian() const { return std::get_if<SubspaceGaussian>(&law_); }

    std::string describe() const;

private:
    explicit TargetDistribution(std::variant<PointCloud, SubspaceGaussian> law) : law_(std::move(law)) {}
    std::variant<PointCloud, SubspaceGaussian> law_;
};

// Clean draws X_0 and the matching standard normal noise W, so that
// at(t) = sqrt(1 - sigma_t^2) X_0 + sigma_t W. Sharing one draw across
// several times gives common random numbers for finite differences in t.
struct ForwardDraws {
    RowMatrix clean;
    RowMatrix noise;
    RowMatrix at(double t) const;
};
ForwardDraws draw_clean_and_noise(const TargetDistribution& target, int n, std::uint64_t seed, int workers = 1);

// n iid draws of X_t. Row i uses substream (seed, forward, i), so the batch is a
// pure function of (target, t, n, seed) for any worker count.
SampleBatch forward_sample(const TargetDistribution& target, double t, int n, std::uint64_t seed, int workers = 1);

// Posterior weights of the mixture components given X_t = x (point clouds only),
// normalized with max-subtracted log-sum-exp.
Vector posterior_weights(const PointCloud& cloud, double t, const Vector& x);

// E[X_0 | X_t = x].
Vector posterior_mean(const TargetDistribution& target, double t, const Vector& x);
// Cov[X_0 | X_t = x] (d x d).
Eigen::MatrixXd posterior_covariance(const TargetDistribution& target, double t, const Vector& x);
// Tr Cov[X_0 | X_t = x] >= 0.
double posterior_cov_trace(const TargetDistribution& target, double t, const Vector& x);
// Exact score grad log q_t(x) = (sqrt(1 - sigma_t^2) mu_t(x) - x) / sigma_t^2.
Vector exact_score(const TargetDistribution& target, double t, const Vector& x);

// Per-row posterior statistics for a batch of queries (rows of xs).
struct PosteriorBatchStats {
    Vector trace;         // Tr Sigma_t(x)
    Vector frobenius_sq;  // ||Sigma_t(x)||_F^2, only when requested
};
PosteriorBatchStats posterior_batch_stats(const TargetDistribution& target, double t, const RowMatrix& xs,
                                          bool with_frobenius = false, int workers = 1);

enum class PerturbationDirection {
    radial,        // u(x) = x / ||x|| (e_1 at the origin)
    fixed_random,  // one seeded random unit vector per step
};

// Deterministic score error with per-step magnitudes eps_n.
struct Perturbation {
    std::vector<double> magnitudes;  // eps_n, n = 0..N-1
    std::vector<double> intervals;   // t_{n+1} - t_n of the schedule it was built for
    PerturbationDirection direction = PerturbationDirection::radial;
    RowMatrix fixed_directions;      // N x d for fixed_random
    std::uint64_t seed = 0;

    // sum_n (t_{n+1} - t_n) eps_n^2.
    double declared_budget() const;
};

class ScoreOracle {
public:
    explicit ScoreOracle(TargetDistribution target) : target_(std::move(target)) {}
    ScoreOracle(TargetDistribution target, Perturbation perturbation)
        : target_(std::move(target)), perturbation_(std::move(perturbation)) {}

    const TargetDistribution& target() const { return target_; }
    const std::optional<Perturbation>& perturbation() const { return perturbation_; }
    bool is_exact() const { return !perturbation_.has_value(); }

    // Exact score at forward time t.
    Vector score(double t, const Vector& x) const { return exact_score(target_, t, x); }
    // Score estimate used at reverse step n: s_t(x) + eps_n u(x).
    Vector score(double t, const Vector& x, int step) const;

    Vector posterior_mean(double t, const Vector& x) const { return ddpmlab::posterior_mean(target_, t, x); }
    double posterior_cov_trace(double t, const Vector& x) const {
        return ddpmlab::posterior_cov_trace(target_, t, x);
    }

private:
    TargetDistribution target_;
    std::optional<Perturbation> perturbation_;
};

// Uniform allocation eps_n^2 = budget / (T - delta), so the declared budget is exact.
ScoreOracle perturb(const ScoreOracle& oracle, double budget, const Schedule& schedule,
                    PerturbationDirection direction = PerturbationDirection::radial, std::uint64_t seed = 0);

// Registry of named point-cloud generators: "subspace-ball", "circle",
// "two-points", "cube-skeleton". Analytic laws are available as
// "subspace-gaussian" and "point-mass".
struct GeneratorOptions {
    int dim = 16;
    int intrinsic_dim = 2;
    int count = 4096;
    double radius = 1.0;
    std::uint64_t seed = 0;
};

TargetDistribution make_builtin_target(const std::string& name, const GeneratorOptions& options);
std::vector<std::string> builtin_target_names();

// d x k matrix with orthonormal columns drawn from the seed.
Eigen::MatrixXd random_orthonormal_frame(int dim, int k, std::uint64_t seed);

// One point per row, d columns, plus a trailing weight column when weight_column is set.
TargetDistribution load_point_cloud_csv(const std::string& path, bool weight_column, int intrinsic_dim,
                                        double radius = -1.0);

}  // namespace ddpmlab
