#include "ddpmlab/targets.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include "ddpmlab/error.hpp"
#include "ddpmlab/parallel.hpp"
#include "ddpmlab/rng.hpp"

namespace ddpmlab {

namespace {

constexpr Eigen::Index kForwardBlock = 256;

void require_positive_time(double t, const char* what) {
    if (!std::isfinite(t) || t <= 0.0) {
        std::ostringstream os;
        os << what << ": forward time must be > 0, got " << t;
        throw DomainError(os.str());
    }
}

void require_dim(const TargetDistribution& target, Eigen::Index got, const char* what) {
    if (got != target.dim()) {
        std::ostringstream os;
        os << what << ": query has dimension " << got << ", target has " << target.dim();
        throw ConfigError(os.str());
    }
}

// sqrt(1 - sigma^2), sigma^2 for forward time t.
struct NoiseLevel {
    double signal;
    double var;
};

NoiseLevel noise_level(double t) { return {std::exp(-t), -std::expm1(-2.0 * t)}; }

// Posterior gain for the subspace Gaussian: Cov[X_0 | X_t] = gain_var * P and
// E[X_0 | X_t = x] = mean_gain * P x.
struct SubspaceGains {
    double mean_gain;
    double cov_scale;
    double span_precision;  // 1 / (variance of X_t along span U)
    double perp_precision;  // 1 / sigma_t^2
};

SubspaceGains subspace_gains(const SubspaceGaussian& g, double t) {
    const auto [signal, var] = noise_level(t);
    const double s2 = g.scale * g.scale;
    const double span_var = signal * signal * s2 + var;
    return {signal * s2 / span_var, s2 * var / span_var, 1.0 / span_var, 1.0 / var};
}

Vector standard_normal(Rng& rng, Eigen::Index n) {
    std::normal_distribution<double> normal;
    Vector z(n);
    for (Eigen::Index i = 0; i < n; ++i) z[i] = normal(rng);
    return z;
}

// Fills cloud.span / cloud.span_coords when the points have a low-dimensional linear span.
void find_linear_span(const RowMatrix& points, double max_norm, PointCloud& cloud) {
    const Eigen::Index d = points.cols();
    if (d < 2 || max_norm == 0.0) return;
    const Eigen::MatrixXd gram = points.transpose() * points;
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
    const Vector& values = eig.eigenvalues();  // ascending
    const double top = values[d - 1];
    Eigen::Index r = 0;
    for (Eigen::Index i = 0; i < d; ++i)
        if (values[i] > 1e-14 * top) ++r;
    if (r >= d) return;
    Eigen::MatrixXd basis = eig.eigenvectors().rightCols(r);
    RowMatrix coords = points * basis;
    const double residual = std::sqrt((points - coords * basis.transpose()).rowwise().squaredNorm().maxCoeff());
    if (residual > 1e-12 * max_norm) return;
    cloud.span = std::move(basis);
    cloud.span_coords = std::move(coords);
}

// Posterior weights for many queries at one time t. Logits are
// log w_i - ||x - a x_i||^2 / (2 sigma^2) up to a per-query constant, computed in
// span coordinates when the cloud has a low-dimensional linear span.
class WeightKernel {
public:
    WeightKernel(const PointCloud& cloud, double t) : cloud_(cloud) {
        const auto [signal, var] = noise_level(t);
        scale_ = signal / var;
        bias_ = cloud.log_weights - (0.5 * signal * signal / var) * cloud.sq_norms;
        // One contiguous row per coordinate, so both products below are axpy / dot over M.
        coords_t_ = cloud.span.size() ? RowMatrix(cloud.span_coords.transpose()) : RowMatrix(cloud.points.transpose());
    }

    // Coordinates used by the kernel (r x M).
    const RowMatrix& coords_t() const { return coords_t_; }

    // Query in the kernel's coordinates.
    Vector project(const Eigen::Ref<const Vector>& x) const {
        return cloud_.span.size() ? Vector(cloud_.span.transpose() * x) : Vector(x);
    }

    // Normalized weights for a projected query, written into w (size M).
    void weights(const Vector& q, Vector& w) const {
        w = bias_;
        for (Eigen::Index j = 0; j < q.size(); ++j) w += (scale_ * q[j]) * coords_t_.row(j).transpose();
        const double peak = w.maxCoeff();
        w = (w.array() - peak).exp().matrix();
        w /= w.sum();
    }

    // sum_i w_i c_i in kernel coordinates.
    Vector mean(const Vector& w) const {
        Vector mu(coords_t_.rows());
        for (Eigen::Index j = 0; j < coords_t_.rows(); ++j) mu[j] = coords_t_.row(j).dot(w.transpose());
        return mu;
    }

private:
    const PointCloud& cloud_;
    double scale_;
    Vector bias_;
    RowMatrix coords_t_;
};

}  // namespace

TargetDistribution TargetDistribution::point_cloud(RowMatrix points, Vector weights, int intrinsic_dim,
                                                   double radius) {
    const Eigen::Index m = points.rows();
    if (m < 1 || points.cols() < 1) throw ConfigError("point cloud needs at least one point in d >= 1");
    if (!points.allFinite()) throw ConfigError("point cloud contains non-finite coordinates");
    if (weights.size() == 0) weights = Vector::Constant(m, 1.0 / static_cast<double>(m));
    if (weights.size() != m) throw ConfigError("point cloud weights must have one entry per point");
    if ((weights.array() < 0.0).any() || !weights.allFinite())
        throw ConfigError("point cloud weights must be finite and nonnegative");
    const double total = weights.sum();
    if (!(total > 0.0)) throw ConfigError("point cloud weights must not all be zero");
    if (std::abs(total - 1.0) > 1e-12) weights /= total;
    if (intrinsic_dim < 0) throw ConfigError("intrinsic dimension must be >= 0");

    PointCloud cloud;
    cloud.sq_norms = points.rowwise().squaredNorm();
    const double max_norm = std::sqrt(cloud.sq_norms.maxCoeff());
    if (radius < 0.0) {
        radius = max_norm;
    } else if (max_norm > radius * (1.0 + 1e-12)) {
        std::ostringstream os;
        os << "point cloud has a point of norm " << max_norm << " beyond the declared radius " << radius;
        throw ConfigError(os.str());
    }
    cloud.log_weights = weights.array().log();
    find_linear_span(points, max_norm, cloud);
    cloud.points = std::move(points);
    cloud.weights = std::move(weights);
    cloud.intrinsic_dim = intrinsic_dim;
    cloud.radius = radius;
    return TargetDistribution(std::move(cloud));
}

TargetDistribution TargetDistribution::subspace_gaussian(Eigen::MatrixXd basis, double scale) {
    if (basis.rows() < 1) throw ConfigError("subspace Gaussian needs ambient dimension >= 1");
    if (basis.cols() > basis.rows()) throw ConfigError("subspace dimension k must not exceed d");
    if (!(scale > 0.0) || !std::isfinite(scale)) throw ConfigError("subspace Gaussian scale must be > 0");
    const Eigen::Index k = basis.cols();
    if (k > 0) {
        const double defect = (basis.transpose() * basis - Eigen::MatrixXd::Identity(k, k)).cwiseAbs().maxCoeff();
        if (defect > 1e-10) throw ConfigError("subspace basis columns must be orthonormal (U^T U = I)");
    }
    return TargetDistribution(SubspaceGaussian{std::move(basis), scale});
}

TargetDistribution TargetDistribution::axis_subspace_gaussian(int dim, int k, double scale) {
    if (k < 0 || k > dim) throw ConfigError("need 0 <= k <= d");
    return subspace_gaussian(Eigen::MatrixXd::Identity(dim, k), scale);
}

TargetDistribution TargetDistribution::point_mass(int dim) {
    if (dim < 1) throw ConfigError("point mass needs d >= 1");
    return point_cloud(RowMatrix::Zero(1, dim), Vector::Ones(1), 0, 0.0);
}

int TargetDistribution::dim() const {
    return std::visit(
        [](const auto& law) -> int {
            if constexpr (std::is_same_v<std::decay_t<decltype(law)>, PointCloud>)
                return static_cast<int>(law.points.cols());
            else
                return static_cast<int>(law.basis.rows());
        },
        law_);
}

int TargetDistribution::intrinsic_dim() const {
    if (const auto* c = as_point_cloud()) return c->intrinsic_dim;
    return static_cast<int>(as_subspace_gaussian()->basis.cols());
}

double TargetDistribution::second_moment() const {
    if (const auto* c = as_point_cloud()) return c->weights.dot(c->sq_norms);
    const auto* g = as_subspace_gaussian();
    return static_cast<double>(g->basis.cols()) * g->scale * g->scale;
}

std::string TargetDistribution::describe() const {
    std::ostringstream os;
    if (const auto* c = as_point_cloud())
        os << "point-cloud(M=" << c->points.rows() << ", d=" << dim() << ", k=" << c->intrinsic_dim
           << ", R=" << c->radius << ")";
    else
        os << "subspace-gaussian(d=" << dim() << ", k=" << intrinsic_dim()
           << ", scale=" << as_subspace_gaussian()->scale << ")";
    return os.str();
}

ForwardDraws draw_clean_and_noise(const TargetDistribution& target, int n, std::uint64_t seed, int workers) {
    if (n < 1) throw ConfigError("forward_sample: need n >= 1");
    const int d = target.dim();
    ForwardDraws out{RowMatrix(n, d), RowMatrix(n, d)};

    const PointCloud* cloud = target.as_point_cloud();
    const SubspaceGaussian* gauss = target.as_subspace_gaussian();
    std::vector<double> cumulative;
    if (cloud) {
        cumulative.resize(static_cast<std::size_t>(cloud->weights.size()));
        std::partial_sum(cloud->weights.begin(), cloud->weights.end(), cumulative.begin());
    }

    const Eigen::Index blocks = (n + kForwardBlock - 1) / kForwardBlock;
    parallel_for(static_cast<std::size_t>(blocks), workers, [&](std::size_t b0, std::size_t b1) {
        for (std::size_t b = b0; b < b1; ++b) {
            Rng rng = make_stream(seed, StreamTag::forward, b);
            std::uniform_real_distribution<double> uniform(0.0, 1.0);
            const Eigen::Index first = static_cast<Eigen::Index>(b) * kForwardBlock;
            const Eigen::Index last = std::min<Eigen::Index>(n, first + kForwardBlock);
            for (Eigen::Index i = first; i < last; ++i) {
                if (cloud) {
                    const double u = uniform(rng) * cumulative.back();
                    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
                    const auto idx = std::min<std::ptrdiff_t>(it - cumulative.begin(),
                                                              static_cast<std::ptrdiff_t>(cumulative.size()) - 1);
                    out.clean.row(i) = cloud->points.row(idx);
                } else {
                    out.clean.row(i) = (gauss->scale * (gauss->basis * standard_normal(rng, gauss->basis.cols()))).transpose();
                }
                out.noise.row(i) = standard_normal(rng, d).transpose();
            }
        }
    });
    return out;
}

RowMatrix ForwardDraws::at(double t) const {
    if (!std::isfinite(t) || t < 0.0) throw DomainError("forward_sample: time must be >= 0");
    const auto [signal, var] = noise_level(t);
    return signal * clean + std::sqrt(var) * noise;
}

SampleBatch forward_sample(const TargetDistribution& target, double t, int n, std::uint64_t seed, int workers) {
    if (!std::isfinite(t) || t < 0.0) throw DomainError("forward_sample: time must be >= 0");
    RowMatrix data = draw_clean_and_noise(target, n, seed, workers).at(t);
    return SampleBatch(std::move(data), t, std::nullopt,
                       SeedProvenance{seed, static_cast<std::uint64_t>(StreamTag::forward), "forward"});
}

Vector posterior_weights(const PointCloud& cloud, double t, const Vector& x) {
    require_positive_time(t, "posterior_weights");
    if (x.size() != cloud.points.cols()) throw ConfigError("posterior_weights: dimension mismatch");
    const auto [signal, var] = noise_level(t);
    // Direct ||x - a x_i||^2 for single queries.
    Vector logits(cloud.points.rows());
    for (Eigen::Index i = 0; i < logits.size(); ++i)
        logits[i] = cloud.log_weights[i] - (x.transpose() - signal * cloud.points.row(i)).squaredNorm() / (2.0 * var);
    const double peak = logits.maxCoeff();
    Vector w = (logits.array() - peak).exp();
    return w / w.sum();
}

Vector posterior_mean(const TargetDistribution& target, double t, const Vector& x) {
    require_positive_time(t, "posterior_mean");
    require_dim(target, x.size(), "posterior_mean");
    if (const auto* c = target.as_point_cloud()) {
        const Vector w = posterior_weights(*c, t, x);
        return c->points.transpose() * w;
    }
    const auto* g = target.as_subspace_gaussian();
    const auto gains = subspace_gains(*g, t);
    return gains.mean_gain * (g->basis * (g->basis.transpose() * x));
}

Eigen::MatrixXd posterior_covariance(const TargetDistribution& target, double t, const Vector& x) {
    require_positive_time(t, "posterior_covariance");
    require_dim(target, x.size(), "posterior_covariance");
    if (const auto* c = target.as_point_cloud()) {
        const Vector w = posterior_weights(*c, t, x);
        const Vector mu = c->points.transpose() * w;
        const RowMatrix centered = c->points.rowwise() - mu.transpose();
        return centered.transpose() * w.asDiagonal() * centered;
    }
    const auto* g = target.as_subspace_gaussian();
    return subspace_gains(*g, t).cov_scale * (g->basis * g->basis.transpose());
}

double posterior_cov_trace(const TargetDistribution& target, double t, const Vector& x) {
    require_positive_time(t, "posterior_cov_trace");
    require_dim(target, x.size(), "posterior_cov_trace");
    if (const auto* c = target.as_point_cloud()) {
        const Vector w = posterior_weights(*c, t, x);
        const Vector mu = c->points.transpose() * w;
        return w.dot((c->points.rowwise() - mu.transpose()).rowwise().squaredNorm());
    }
    const auto* g = target.as_subspace_gaussian();
    return static_cast<double>(g->basis.cols()) * subspace_gains(*g, t).cov_scale;
}

Vector exact_score(const TargetDistribution& target, double t, const Vector& x) {
    require_positive_time(t, "score");
    require_dim(target, x.size(), "score");
    if (const auto* c = target.as_point_cloud()) {
        const auto [signal, var] = noise_level(t);
        const Vector w = posterior_weights(*c, t, x);
        return (signal * (c->points.transpose() * w) - x) / var;
    }
    // -C^{-1} x with C = (1 - sigma^2) scale^2 P + sigma^2 I.
    const auto* g = target.as_subspace_gaussian();
    const auto gains = subspace_gains(*g, t);
    const Vector px = g->basis * (g->basis.transpose() * x);
    return -gains.span_precision * px - gains.perp_precision * (x - px);
}

PosteriorBatchStats posterior_batch_stats(const TargetDistribution& target, double t, const RowMatrix& xs,
                                          bool with_frobenius, int workers) {
    require_positive_time(t, "posterior_batch_stats");
    require_dim(target, xs.cols(), "posterior_batch_stats");
    const Eigen::Index n = xs.rows();
    PosteriorBatchStats out;
    out.trace.resize(n);
    if (with_frobenius) out.frobenius_sq.resize(n);

    if (const auto* g = target.as_subspace_gaussian()) {
        const double k = static_cast<double>(g->basis.cols());
        const double c = subspace_gains(*g, t).cov_scale;
        out.trace.setConstant(k * c);
        if (with_frobenius) out.frobenius_sq.setConstant(k * c * c);
        return out;
    }

    const PointCloud& cloud = *target.as_point_cloud();
    const WeightKernel kernel(cloud, t);
    const RowMatrix& ct = kernel.coords_t();
    // Norms and the covariance spectrum are the same in span coordinates.
    parallel_for(static_cast<std::size_t>(n), workers, [&](std::size_t b, std::size_t e) {
        Vector w(cloud.points.rows());
        for (auto r = static_cast<Eigen::Index>(b); r < static_cast<Eigen::Index>(e); ++r) {
            kernel.weights(kernel.project(xs.row(r).transpose()), w);
            const Vector mu = kernel.mean(w);
            out.trace[r] = std::max(0.0, cloud.sq_norms.dot(w) - mu.squaredNorm());
            if (with_frobenius) {
                const Eigen::MatrixXd cov = ct * w.asDiagonal() * ct.transpose() - mu * mu.transpose();
                out.frobenius_sq[r] = cov.squaredNorm();
            }
        }
    });
    return out;
}

double Perturbation::declared_budget() const {
    double total = 0.0;
    for (std::size_t n = 0; n < magnitudes.size(); ++n) total += intervals[n] * magnitudes[n] * magnitudes[n];
    return total;
}

Vector ScoreOracle::score(double t, const Vector& x, int step) const {
    Vector s = exact_score(target_, t, x);
    if (!perturbation_) return s;
    const auto& p = *perturbation_;
    if (step < 0 || step >= static_cast<int>(p.magnitudes.size())) {
        std::ostringstream os;
        os << "perturbed oracle has " << p.magnitudes.size() << " steps, asked for step " << step;
        throw std::out_of_range(os.str());
    }
    const double eps = p.magnitudes[static_cast<std::size_t>(step)];
    if (eps == 0.0) return s;
    if (p.direction == PerturbationDirection::fixed_random) {
        s += eps * p.fixed_directions.row(step).transpose();
    } else {
        const double norm = x.norm();
        if (norm > 0.0) {
            s += (eps / norm) * x;
        } else {
            s[0] += eps;
        }
    }
    return s;
}

ScoreOracle perturb(const ScoreOracle& oracle, double budget, const Schedule& schedule,
                    PerturbationDirection direction, std::uint64_t seed) {
    if (!(budget >= 0.0) || !std::isfinite(budget)) throw ConfigError("score error budget must be >= 0");
    const int steps = schedule.steps();
    Perturbation p;
    p.direction = direction;
    p.seed = seed;
    p.intervals.resize(static_cast<std::size_t>(steps));
    for (int n = 0; n < steps; ++n) p.intervals[n] = schedule.interval(n);
    // Total simulated span is t_N = T - delta.
    const double span = schedule.time(steps);
    p.magnitudes.assign(static_cast<std::size_t>(steps), std::sqrt(budget / span));
    if (direction == PerturbationDirection::fixed_random) {
        const int d = oracle.target().dim();
        p.fixed_directions.resize(steps, d);
        for (int n = 0; n < steps; ++n) {
            Rng rng = make_stream(seed, StreamTag::perturbation, static_cast<std::uint64_t>(n));
            Vector u = standard_normal(rng, d);
            p.fixed_directions.row(n) = (u / u.norm()).transpose();
        }
    }
    return ScoreOracle(oracle.target(), std::move(p));
}

Eigen::MatrixXd random_orthonormal_frame(int dim, int k, std::uint64_t seed) {
    if (k < 0 || k > dim) throw ConfigError("random_orthonormal_frame: need 0 <= k <= d");
    Rng rng = make_stream(seed, StreamTag::generator, 0x0F);
    std::normal_distribution<double> normal;
    Eigen::MatrixXd g(dim, k);
    for (int j = 0; j < k; ++j)
        for (int i = 0; i < dim; ++i) g(i, j) = normal(rng);
    if (k == 0) return g;
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(dim, k);
    // Sign convention: R has a nonnegative diagonal.
    for (int j = 0; j < k; ++j)
        if (qr.matrixQR()(j, j) < 0.0) q.col(j) *= -1.0;
    return q;
}

std::vector<std::string> builtin_target_names() {
    return {"subspace-ball", "circle", "two-points", "cube-skeleton", "subspace-gaussian", "point-mass"};
}

TargetDistribution make_builtin_target(const std::string& name, const GeneratorOptions& o) {
    if (o.dim < 1) throw ConfigError("generator needs d >= 1");
    if (o.count < 1) throw ConfigError("generator needs a positive point count");
    if (!(o.radius > 0.0)) throw ConfigError("generator needs radius > 0");
    Rng rng = make_stream(o.seed, StreamTag::generator, 0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    std::normal_distribution<double> normal;

    if (name == "point-mass") return TargetDistribution::point_mass(o.dim);
    if (name == "subspace-gaussian") {
        return TargetDistribution::subspace_gaussian(random_orthonormal_frame(o.dim, o.intrinsic_dim, o.seed), 1.0);
    }
    if (name == "two-points") {
        RowMatrix pts = RowMatrix::Zero(2, o.dim);
        pts(0, 0) = o.radius;
        pts(1, 0) = -o.radius;
        return TargetDistribution::point_cloud(std::move(pts), {}, 1, o.radius);
    }
    if (name == "subspace-ball") {
        const int k = o.intrinsic_dim;
        if (k < 1 || k > o.dim) throw ConfigError("subspace-ball needs 1 <= k <= d");
        const Eigen::MatrixXd frame = random_orthonormal_frame(o.dim, k, o.seed);
        RowMatrix latent(o.count, k);
        for (int i = 0; i < o.count; ++i) {
            Vector z(k);
            for (int j = 0; j < k; ++j) z[j] = normal(rng);
            const double r = o.radius * std::pow(uniform(rng), 1.0 / k);
            latent.row(i) = (r / z.norm()) * z.transpose();
        }
        return TargetDistribution::point_cloud(latent * frame.transpose(), {}, k, o.radius);
    }
    if (name == "circle") {
        if (o.dim < 2) throw ConfigError("circle needs d >= 2");
        const Eigen::MatrixXd frame = random_orthonormal_frame(o.dim, 2, o.seed);
        RowMatrix latent(o.count, 2);
        for (int i = 0; i < o.count; ++i) {
            const double angle = 2.0 * M_PI * uniform(rng);
            latent(i, 0) = o.radius * std::cos(angle);
            latent(i, 1) = o.radius * std::sin(angle);
        }
        return TargetDistribution::point_cloud(latent * frame.transpose(), {}, 1, o.radius);
    }
    if (name == "cube-skeleton") {
        // Edges of the 3-cube with vertices in {-1,1}^3 scaled to radius R.
        constexpr int m = 3;
        if (o.dim < m) throw ConfigError("cube-skeleton needs d >= 3");
        const Eigen::MatrixXd frame = random_orthonormal_frame(o.dim, m, o.seed);
        const double side = o.radius / std::sqrt(static_cast<double>(m));
        std::uniform_int_distribution<int> axis_pick(0, m - 1);
        std::uniform_int_distribution<int> sign_pick(0, 1);
        RowMatrix latent(o.count, m);
        for (int i = 0; i < o.count; ++i) {
            const int axis = axis_pick(rng);
            for (int j = 0; j < m; ++j) latent(i, j) = sign_pick(rng) ? side : -side;
            latent(i, axis) = side * (2.0 * uniform(rng) - 1.0);
        }
        return TargetDistribution::point_cloud(latent * frame.transpose(), {}, 1, o.radius);
    }
    throw ConfigError("unknown target generator \"" + name + "\"");
}

TargetDistribution load_point_cloud_csv(const std::string& path, bool weight_column, int intrinsic_dim,
                                        double radius) {
    RowMatrix m = read_matrix_csv(path);
    if (!weight_column) return TargetDistribution::point_cloud(std::move(m), {}, intrinsic_dim, radius);
    if (m.cols() < 2) throw ConfigError("weighted point-cloud CSV needs at least one coordinate column");
    Vector w = m.col(m.cols() - 1);
    RowMatrix pts = m.leftCols(m.cols() - 1);
    return TargetDistribution::point_cloud(std::move(pts), std::move(w), intrinsic_dim, radius);
}

}  // namespace ddpmlab
