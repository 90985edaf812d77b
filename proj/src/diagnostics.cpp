#include "ddpmlab/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>

#include "ddpmlab/error.hpp"
#include "ddpmlab/noise.hpp"
#include "ddpmlab/parallel.hpp"
#include "ddpmlab/rng.hpp"

namespace ddpmlab {

namespace {

Estimate mean_and_stderr(const Vector& v) {
    Estimate e;
    e.samples = static_cast<int>(v.size());
    if (v.size() == 0) return e;
    e.value = v.mean();
    if (v.size() > 1) {
        const double var = (v.array() - e.value).square().sum() / static_cast<double>(v.size() - 1);
        e.std_error = std::sqrt(var / static_cast<double>(v.size()));
    }
    return e;
}

void require_forward_time(double u, const char* what) {
    if (!std::isfinite(u) || u <= 0.0) throw DomainError(std::string(what) + ": forward time must be > 0");
}

// Sum over i of sum over j of ||x_i - y_j||, skipping i == j when same is set.
// Row sums are written by index and reduced in order, so the result does not
// depend on the worker count.
double pair_distance_sum(const RowMatrix& x, const RowMatrix& y, bool same, int workers) {
    Vector row_sums(x.rows());
    parallel_for(static_cast<std::size_t>(x.rows()), workers, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            const auto r = static_cast<Eigen::Index>(i);
            double s = 0.0;
            for (Eigen::Index j = 0; j < y.rows(); ++j) {
                if (same && j == r) continue;
                s += (x.row(r) - y.row(j)).norm();
            }
            row_sums[r] = s;
        }
    });
    double total = 0.0;
    for (Eigen::Index i = 0; i < row_sums.size(); ++i) total += row_sums[i];
    return total;
}

// Energy statistic from a pooled distance matrix and a labelling (first na indices of order form sample A).
double energy_from_pooled(const Eigen::MatrixXd& dist, const std::vector<int>& order, int na) {
    const int n = static_cast<int>(order.size());
    const int nb = n - na;
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (int i = 0; i < n; ++i) {
        const bool in_a = i < na;
        const double* col = dist.col(order[i]).data();
        for (int j = i + 1; j < n; ++j) {
            const double v = col[order[j]];
            const bool j_in_a = j < na;
            if (in_a && j_in_a) aa += v;
            else if (!in_a && !j_in_a) bb += v;
            else ab += v;
        }
    }
    return 2.0 * ab / (static_cast<double>(na) * nb) - 2.0 * aa / (static_cast<double>(na) * (na - 1)) -
           2.0 * bb / (static_cast<double>(nb) * (nb - 1));
}

}  // namespace

Estimate mc_mean_trace(const TargetDistribution& target, double u, int n, std::uint64_t seed, int workers) {
    require_forward_time(u, "mc_mean_trace");
    const SampleBatch xs = forward_sample(target, u, n, seed, workers);
    return mean_and_stderr(posterior_batch_stats(target, u, xs.data(), false, workers).trace);
}

void TraceCurve::write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << "u,estimate,stderr,n,seed\n" << std::setprecision(17);
    for (std::size_t j = 0; j < u.size(); ++j)
        out << u[j] << ',' << estimate[j] << ',' << std_error[j] << ',' << samples << ',' << seeds[j] << '\n';
}

TraceCurve trace_curve(const TargetDistribution& target, const std::vector<double>& grid, int n, std::uint64_t seed,
                       int workers) {
    for (std::size_t j = 1; j < grid.size(); ++j)
        if (!(grid[j] > grid[j - 1])) throw ConfigError("trace_curve: grid must be strictly increasing");
    TraceCurve c;
    c.samples = n;
    for (std::size_t j = 0; j < grid.size(); ++j) {
        const std::uint64_t s = derive_seed(seed, j);
        const Estimate e = mc_mean_trace(target, grid[j], n, s, workers);
        c.u.push_back(grid[j]);
        c.estimate.push_back(e.value);
        c.std_error.push_back(e.std_error);
        c.seeds.push_back(s);
    }
    return c;
}

MonotoneReport check_trace_monotone(const TargetDistribution& target, const std::vector<double>& grid, int n,
                                    std::uint64_t seed, int workers, double slack) {
    MonotoneReport r;
    r.slack = slack;
    r.curve = trace_curve(target, grid, n, seed, workers);
    r.worst_margin = std::numeric_limits<double>::infinity();
    const auto& e = r.curve.estimate;
    const auto& se = r.curve.std_error;
    for (std::size_t j = 0; j + 1 < e.size(); ++j) {
        // Independent seeds per grid point, so the errors add in quadrature.
        const double combined = std::hypot(se[j], se[j + 1]);
        const double step = e[j + 1] - e[j];
        if (step < -slack * combined) r.violations.push_back(static_cast<int>(j));
        if (combined > 0.0) {
            r.worst_margin = std::min(r.worst_margin, step / combined);
        } else if (step < 0.0) {
            r.worst_margin = -std::numeric_limits<double>::infinity();
        }
    }
    return r;
}

PosvarRatio posvar_bound_ratio(const TargetDistribution& target, double u, int k_declared, int n, std::uint64_t seed,
                               int workers) {
    require_forward_time(u, "posvar_bound_ratio");
    if (k_declared < 2) throw ConfigError("posvar_bound_ratio: needs k >= 2 (the k log k branch vanishes at k = 1)");
    const double s2 = sigma_sq(u);
    const double k = k_declared;
    PosvarRatio r;
    r.bound = std::min(target.second_moment(), s2 / (1.0 - s2) * k * std::log(k));
    const Estimate e = mc_mean_trace(target, u, n, seed, workers);
    r.estimate = e.value;
    r.std_error = e.std_error;
    r.ratio = r.estimate == 0.0 ? 0.0 : r.estimate / r.bound;
    return r;
}

double LocalizationResult::relative() const {
    const double ref = std::max(std::abs(frobenius), std::abs(scale * trace_slope));
    return ref > 0.0 ? std::abs(residual()) / ref : 0.0;
}

bool LocalizationResult::within(double multiple) const {
    return std::abs(residual()) <= multiple * combined_error();
}

LocalizationResult localization_residual(const TargetDistribution& target, double u, double h, int n,
                                         std::uint64_t seed, int workers) {
    require_forward_time(u, "localization_residual");
    if (!(h > 0.0) || !(u - 2.0 * h > 0.0)) throw ConfigError("localization_residual: need 0 < 2h < u");

    const ForwardDraws draws = draw_clean_and_noise(target, n, seed, workers);
    auto trace_at = [&](double t) { return posterior_batch_stats(target, t, draws.at(t), false, workers).trace; };

    const Vector frob = posterior_batch_stats(target, u, draws.at(u), true, workers).frobenius_sq;
    const Vector slope_h = (trace_at(u + h) - trace_at(u - h)) / (2.0 * h);
    const Vector slope_2h = (trace_at(u + 2.0 * h) - trace_at(u - 2.0 * h)) / (4.0 * h);

    LocalizationResult r;
    const double s2 = sigma_sq(u);
    r.scale = s2 * s2 / (2.0 * (1.0 - s2));
    r.frobenius = frob.mean();
    r.trace_slope = slope_h.mean();
    r.stat_error = mean_and_stderr(frob - r.scale * slope_h).std_error;
    // Central differences have O(h^2) error, so slope(h) - slope(2h) ~ -3 x error(h).
    r.fd_error = r.scale * std::abs(slope_h.mean() - slope_2h.mean()) / 3.0;
    return r;
}

std::vector<int> cover_sweep(const RowMatrix& points, const std::vector<double>& eps) {
    for (double e : eps)
        if (!(e > 0.0)) throw ConfigError("greedy_cover: eps must be > 0");
    const Eigen::Index n = points.rows();
    if (n == 0) return std::vector<int>(eps.size(), 0);

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        for (Eigen::Index c = 0; c < points.cols(); ++c) {
            if (points(a, c) != points(b, c)) return points(a, c) < points(b, c);
        }
        return a < b;
    });
    RowMatrix sorted(n, points.cols());
    for (Eigen::Index i = 0; i < n; ++i) sorted.row(i) = points.row(order[static_cast<std::size_t>(i)]);

    const double smallest = *std::min_element(eps.begin(), eps.end());
    // Insertion radii: distance of each new center to the existing centers when it was picked.
    std::vector<double> radii;
    Vector nearest = (sorted.rowwise() - sorted.row(0)).rowwise().norm();
    while (true) {
        Eigen::Index far = 0;
        const double r = nearest.maxCoeff(&far);
        if (r <= smallest) break;
        radii.push_back(r);
        nearest = nearest.cwiseMin((sorted.rowwise() - sorted.row(far)).rowwise().norm());
    }

    std::vector<int> counts;
    for (double e : eps) {
        const auto beyond = std::count_if(radii.begin(), radii.end(), [e](double r) { return r > e; });
        counts.push_back(1 + static_cast<int>(beyond));
    }
    return counts;
}

int greedy_cover(const RowMatrix& points, double eps) { return cover_sweep(points, {eps}).front(); }

double energy_distance(const RowMatrix& a, const RowMatrix& b, int workers) {
    if (a.cols() != b.cols()) throw ConfigError("energy_distance: dimension mismatch");
    if (a.rows() < 2 || b.rows() < 2) throw ConfigError("energy_distance: need at least 2 samples per side");
    const double na = static_cast<double>(a.rows());
    const double nb = static_cast<double>(b.rows());
    const double ab = pair_distance_sum(a, b, false, workers) / (na * nb);
    const double aa = pair_distance_sum(a, a, true, workers) / (na * (na - 1.0));
    const double bb = pair_distance_sum(b, b, true, workers) / (nb * (nb - 1.0));
    return 2.0 * ab - aa - bb;
}

double energy_distance(const SampleBatch& a, const SampleBatch& b, int workers) {
    return energy_distance(a.data(), b.data(), workers);
}

EnergyTest energy_test(const RowMatrix& a, const RowMatrix& b, int permutations, double level, std::uint64_t seed,
                       int max_per_side, int workers) {
    if (a.cols() != b.cols()) throw ConfigError("energy_test: dimension mismatch");
    if (permutations < 1) throw ConfigError("energy_test: need at least one permutation");
    if (!(level > 0.0 && level < 1.0)) throw ConfigError("energy_test: level must be in (0, 1)");
    const int na = static_cast<int>(std::min<Eigen::Index>(a.rows(), max_per_side));
    const int nb = static_cast<int>(std::min<Eigen::Index>(b.rows(), max_per_side));
    if (na < 2 || nb < 2) throw ConfigError("energy_test: need at least 2 samples per side");

    RowMatrix pooled(na + nb, a.cols());
    pooled.topRows(na) = a.topRows(na);
    pooled.bottomRows(nb) = b.topRows(nb);
    const int n = na + nb;
    Eigen::MatrixXd dist(n, n);
    parallel_for(static_cast<std::size_t>(n), workers, [&](std::size_t s, std::size_t e) {
        for (std::size_t j = s; j < e; ++j) {
            const auto c = static_cast<Eigen::Index>(j);
            dist.col(c) = (pooled.rowwise() - pooled.row(c)).rowwise().norm();
        }
    });

    std::vector<int> identity(static_cast<std::size_t>(n));
    std::iota(identity.begin(), identity.end(), 0);
    EnergyTest t;
    t.permutations = permutations;
    t.per_side = std::min(na, nb);
    t.statistic = energy_from_pooled(dist, identity, na);

    std::vector<double> null(static_cast<std::size_t>(permutations));
    parallel_for(null.size(), workers, [&](std::size_t s, std::size_t e) {
        for (std::size_t p = s; p < e; ++p) {
            Rng rng = make_stream(seed, StreamTag::permutation, p);
            std::vector<int> order = identity;
            std::shuffle(order.begin(), order.end(), rng);
            null[p] = energy_from_pooled(dist, order, na);
        }
    });
    const auto exceed = std::count_if(null.begin(), null.end(), [&](double v) { return v >= t.statistic; });
    t.p_value = (1.0 + static_cast<double>(exceed)) / (1.0 + permutations);
    std::sort(null.begin(), null.end());
    const auto idx = static_cast<std::size_t>(std::ceil(level * permutations)) - 1;
    t.null_quantile = null[std::min(idx, null.size() - 1)];
    return t;
}

}  // namespace ddpmlab
