#include <doctest.h>

#include <cmath>
#include <random>

#include "ddpmlab/diagnostics.hpp"
#include "ddpmlab/error.hpp"
#include "ddpmlab/rng.hpp"
#include "ddpmlab/sampler.hpp"

using namespace ddpmlab;

namespace {

TargetDistribution two_points(int d) {
    GeneratorOptions o;
    o.dim = d;
    return make_builtin_target("two-points", o);
}

// E[1 - tanh^2(a X / s2)] with X = a + sqrt(s2) W: the posterior trace of the {+-1}
// cloud averaged over its forward marginal (symmetric, so one sign suffices).
double two_point_trace_quadrature(double u) {
    const double a = std::exp(-u), s2 = -std::expm1(-2.0 * u), s = std::sqrt(s2);
    const int m = 200000;
    const double lo = -12.0, hi = 12.0, h = (hi - lo) / m;
    double acc = 0.0;
    for (int i = 0; i <= m; ++i) {
        const double w = lo + i * h;
        const double th = std::tanh(a * (a + s * w) / s2);
        const double f = (1.0 - th * th) * std::exp(-0.5 * w * w);
        acc += (i == 0 || i == m) ? 0.5 * f : f;
    }
    return acc * h / std::sqrt(2.0 * M_PI);
}

RowMatrix gaussian_rows(int n, int d, double shift, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z;
    RowMatrix m(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) m(i, j) = z(rng) + (j == 0 ? shift : 0.0);
    return m;
}

}  // namespace

TEST_SUITE("diagnostics") {

TEST_CASE("mean trace examples") {
    RowMatrix single(1, 3);
    single << 1.0, 2.0, 3.0;
    const Estimate zero = mc_mean_trace(TargetDistribution::point_cloud(single), 0.5, 1000, 1);
    CHECK(zero.value == 0.0);
    CHECK(zero.std_error == 0.0);
    CHECK(zero.samples == 1000);

    for (double u : {0.1, 1.0, 3.0}) {
        const Estimate g = mc_mean_trace(TargetDistribution::axis_subspace_gaussian(6, 3), u, 500, 2);
        CHECK(g.value == doctest::Approx(3.0 * sigma_sq(u)).epsilon(1e-13));
        CHECK(g.std_error <= 1e-12);
    }

    const Estimate tp = mc_mean_trace(two_points(2), 1.0, 100000, 3, 4);
    const double ref = two_point_trace_quadrature(1.0);
    CHECK(std::abs(tp.value - ref) <= 3.0 * tp.std_error);
    CHECK_THROWS_AS(mc_mean_trace(two_points(2), 0.0, 10, 1), DomainError);
}

TEST_CASE("trace curves are worker independent") {
    GeneratorOptions o;
    o.dim = 8;
    o.count = 256;
    const auto target = make_builtin_target("circle", o);
    const std::vector<double> grid{0.05, 0.2, 1.0};
    const TraceCurve a = trace_curve(target, grid, 3000, 9, 1);
    const TraceCurve b = trace_curve(target, grid, 3000, 9, 8);
    CHECK(a.estimate == b.estimate);
    CHECK(a.std_error == b.std_error);
    CHECK(a.seeds == b.seeds);
    CHECK(a.seeds[0] == derive_seed(9, 0));
    CHECK(mc_mean_trace(target, 0.2, 3000, a.seeds[1]).value == a.estimate[1]);
}

TEST_CASE("trace monotonicity") {
    const std::vector<double> grid{0.02, 0.05, 0.1, 0.3, 1.0, 3.0};
    CHECK(check_trace_monotone(TargetDistribution::axis_subspace_gaussian(8, 2), grid, 200, 1).passed());
    const MonotoneReport pm = check_trace_monotone(TargetDistribution::point_mass(4), grid, 200, 1);
    CHECK(pm.passed());
    CHECK(std::isinf(pm.worst_margin));

    GeneratorOptions o;
    o.dim = 16;
    o.count = 512;
    const auto circle = make_builtin_target("circle", o);
    const MonotoneReport r = check_trace_monotone(circle, grid, 20000, 2, 4);
    CHECK(r.passed());
    for (double e : r.curve.estimate) CHECK(e >= 0.0);
}

TEST_CASE("posterior variance bound ratio") {
    for (int k : {2, 3, 8})
        for (double u : {0.01, 0.1, 0.5, 2.0, 6.0}) {
            const auto target = TargetDistribution::axis_subspace_gaussian(16, k);
            const PosvarRatio r = posvar_bound_ratio(target, u, k, 100, 1);
            const double s2 = sigma_sq(u);
            const double expected = k * s2 / std::min<double>(k, s2 / (1.0 - s2) * k * std::log(double(k)));
            CHECK(r.ratio == doctest::Approx(expected).epsilon(1e-12));
            // log k >= 1 makes both branches dominate k sigma^2 once k >= 3.
            if (k >= 3) CHECK(r.ratio <= 1.0);
        }
    // With k = 2 the small-u branch is (1 - sigma^2)/log 2, which exceeds 1.
    CHECK(posvar_bound_ratio(TargetDistribution::axis_subspace_gaussian(16, 2), 0.05, 2, 10, 1).ratio > 1.0);
    CHECK(posvar_bound_ratio(TargetDistribution::point_mass(3), 0.5, 2, 100, 1).ratio == 0.0);
    CHECK_THROWS_AS(posvar_bound_ratio(TargetDistribution::point_mass(3), 0.5, 1, 100, 1), ConfigError);
}

TEST_CASE("localization identity") {
    for (double u : {0.1, 1.0, 2.5}) {
        const LocalizationResult r = localization_residual(TargetDistribution::axis_subspace_gaussian(6, 2), u, 1e-4, 100, 1);
        const double s2 = sigma_sq(u);
        CHECK(r.frobenius == doctest::Approx(2.0 * s2 * s2).epsilon(1e-13));
        CHECK(std::abs(r.relative()) <= 1e-6);
    }
    const LocalizationResult pm = localization_residual(TargetDistribution::point_mass(3), 0.5, 1e-3, 100, 1);
    CHECK(pm.frobenius == 0.0);
    CHECK(pm.residual() == 0.0);

    const LocalizationResult tp = localization_residual(two_points(2), 1.0, 1e-3, 100000, 5, 4);
    CHECK(tp.within(4.0));
    CHECK(tp.frobenius > 0.0);
    CHECK_THROWS_AS(localization_residual(two_points(2), 1e-3, 1e-3, 10, 1), ConfigError);
}

TEST_CASE("greedy cover") {
    const RowMatrix same = RowMatrix::Ones(50, 4);
    CHECK(greedy_cover(same, 0.1) == 1);
    RowMatrix pair(2, 2);
    pair << 0, 0, 3, 0;
    CHECK(greedy_cover(pair, 1.0) == 2);
    CHECK(greedy_cover(pair, 3.5) == 1);

    GeneratorOptions o;
    o.dim = 64;
    o.count = 10000;
    o.intrinsic_dim = 2;
    const auto disk = make_builtin_target("subspace-ball", o);
    const RowMatrix& pts = disk.as_point_cloud()->points;
    const std::vector<double> eps{0.4, 0.2, 0.1, 0.05};
    const auto counts = cover_sweep(pts, eps);
    for (std::size_t i = 0; i < eps.size(); ++i) {
        CHECK(counts[i] == greedy_cover(pts, eps[i]));
        CHECK(std::log(static_cast<double>(counts[i])) <= 3.0 * 2.0 * std::log(1.0 / eps[i]));
        if (i > 0) CHECK(counts[i] >= counts[i - 1]);
    }

    // Shrinking the scale to below the minimum pairwise distance isolates every point.
    const RowMatrix small = gaussian_rows(300, 3, 0.0, 4);
    CHECK(greedy_cover(small, 1e-9) == 300);
    CHECK(greedy_cover(small, 100.0) == 1);
}

TEST_CASE("energy distance") {
    const RowMatrix a = gaussian_rows(4000, 2, 0.0, 1);
    const RowMatrix b = gaussian_rows(4000, 2, 0.0, 2);
    const EnergyTest same = energy_test(a, b, 200, 0.99, 3);
    CHECK(same.statistic <= 3.0 * same.null_quantile);

    const RowMatrix big_a = gaussian_rows(10000, 2, 0.0, 5);
    const RowMatrix shifted = gaussian_rows(10000, 2, 3.0, 6);
    const EnergyTest diff = energy_test(big_a, shifted, 200, 0.99, 7, 1000, 4);
    CHECK(diff.statistic > 0.0);
    CHECK(diff.rejects());
    CHECK(diff.per_side == 1000);

    // Same inputs at different worker counts give identical results.
    const EnergyTest again = energy_test(big_a, shifted, 200, 0.99, 7, 1000, 1);
    CHECK(again.statistic == diff.statistic);
    CHECK(again.null_quantile == diff.null_quantile);

    // Two independent N(0, I) vs N((3, 0), I): 2 E|X - Y| - 2 E|X - X'| is large and positive.
    CHECK(energy_distance(big_a, shifted, 4) > 2.0);
}

TEST_CASE("reverse chain matches the forward marginal") {
    const Schedule s = make_two_phase(6.0, 0.01, 512);
    const auto target = two_points(2);
    const auto sampled = run_batch(ScoreOracle(target), s, 2000, 11, 8);
    const auto forward = forward_sample(target, 0.01, 2000, 12);
    const EnergyTest t = energy_test(sampled.data(), forward.data(), 200, 0.999, 13, 1000, 8);
    CHECK_FALSE(t.rejects());

    // And at an intermediate step.
    ChainOptions opt;
    opt.stop_step = 256;
    const auto mid = run_batch(ScoreOracle(target), s, 2000, 14, 8, opt);
    const auto mid_forward = forward_sample(target, s.forward_time(256), 2000, 15);
    CHECK_FALSE(energy_test(mid.data(), mid_forward.data(), 200, 0.999, 16, 1000, 8).rejects());
}

}  // TEST_SUITE
