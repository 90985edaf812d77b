#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <Eigen/Dense>

#include "ddpmlab/error.hpp"
#include "ddpmlab/gaussian_exact.hpp"
#include "ddpmlab/targets.hpp"

using namespace ddpmlab;

namespace {

// KL(N(0, Q) || N(0, S)) from dense matrices.
double dense_gaussian_kl(const Eigen::MatrixXd& Q, const Eigen::MatrixXd& S) {
    const Eigen::LDLT<Eigen::MatrixXd> ls(S);
    const Eigen::MatrixXd m = ls.solve(Q);
    const double logdet_s = ls.vectorD().array().log().sum();
    const double logdet_q = Q.ldlt().vectorD().array().log().sum();
    return 0.5 * (m.trace() - Q.rows() + logdet_s - logdet_q);
}

// Per-interval discretization integral in closed form. With w = e^{-2u} the integrand
// becomes (k/2)(w - w_n)/(1 - w)^2 dw, whose antiderivative is (1 - w_n)/(1 - w) + log(1 - w).
double interval_closed_form(double u, double h, int k) {
    const double wn = std::exp(-2.0 * u), w1 = std::exp(-2.0 * (u - h));
    const double c = 1.0 - wn;
    auto F = [c](double w) { return c / (1.0 - w) + std::log(1.0 - w); };
    return 0.5 * k * (F(w1) - F(wn));
}

}  // namespace

TEST_SUITE("gaussian_exact") {

TEST_CASE("no steps leaves the initialization") {
    const Schedule s = make_two_phase(4.0, 0.05, 8);
    PropagationOptions opt;
    opt.stop_step = 0;
    const SpectralState st = propagate_covariance(s, 2, 5, opt);
    CHECK(st.v_par == 1.0);
    CHECK(st.v_perp == 1.0);
    CHECK(st.k == 2);
    CHECK(st.d == 5);
    opt.init = Initialization::forward_marginal;
    const SpectralState fm = propagate_covariance(s, 2, 5, opt);
    CHECK(fm.v_par == 1.0);
    CHECK(fm.v_perp == doctest::Approx(sigma_sq(4.0)).epsilon(1e-15));
}

TEST_CASE("single-step example") {
    const Schedule s = Schedule::from_times({0.0, 0.1, 1.0});
    const SpectralState st = propagate_covariance(s, 0, 1);
    const double m = std::exp(0.1) * (1.0 - (1.0 - std::exp(-0.2)) / (1.0 - std::exp(-2.0)));
    const double noise = (1.0 - std::exp(-0.2)) * (1.0 - std::exp(-1.8)) / (1.0 - std::exp(-2.0));
    CHECK(m == doctest::Approx(0.873479).epsilon(1e-5));
    CHECK(st.v_perp == doctest::Approx(m * m + noise).epsilon(1e-14));
    CHECK(st.v_perp == doctest::Approx(0.937957).epsilon(1e-6));

    // KL against q_delta with delta = 0.01: sigma^2 = 1 - e^{-0.02}.
    const double s2 = 1.0 - std::exp(-0.02);
    CHECK(s2 == doctest::Approx(0.019801).epsilon(1e-5));
    auto g = [](double r) { return r - 1.0 - std::log(r); };
    CHECK(exact_kl_reverse(st, 0.01) == doctest::Approx(0.5 * g(st.v_perp / s2)).epsilon(1e-13));
    CHECK(exact_kl(st, 0.01) == doctest::Approx(0.5 * g(s2 / st.v_perp)).epsilon(1e-13));
}

TEST_CASE("kl_g and exact_kl examples") {
    CHECK(kl_g(2.0) == doctest::Approx(0.306853).epsilon(1e-6));
    CHECK(kl_g(1.0) == 0.0);
    // Near r = 1, g(r) ~ (r - 1)^2 / 2 - (r - 1)^3 / 3.
    const double e = 1e-7;
    CHECK(kl_g(1.0 + e) == doctest::Approx(e * e / 2.0 - e * e * e / 3.0).epsilon(1e-6));
    CHECK_THROWS_AS(kl_g(0.0), NumericError);

    SpectralState match{1.0, sigma_sq(0.03), 3, 7};
    CHECK(exact_kl(match, 0.03) == 0.0);
    CHECK(exact_kl_reverse(match, 0.03) == 0.0);
}

TEST_CASE("spectral recursion agrees with dense propagation") {
    const int d = 5, k = 2;
    const Schedule s = make_two_phase(4.0, 0.02, 12);
    const Eigen::MatrixXd U = random_orthonormal_frame(d, k, 3);
    const Eigen::MatrixXd P = U * U.transpose();
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(d, d);
    const LinearScoreBias bias = linear_score_bias(s, k, d, 0.01);
    for (SamplerKind kind : {SamplerKind::ddpm, SamplerKind::alt_noise, SamplerKind::alt_drift}) {
        for (bool with_bias : {false, true}) {
            Eigen::MatrixXd cov = I;
            for (int n = 0; n < s.steps(); ++n) {
                const double u = s.forward_time(n);
                const double c = with_bias ? bias.coefficients[n] : 0.0;
                const Eigen::MatrixXd score_map = -P - (I - P) / sigma_sq(u) + c * I;
                const StepCoefficients sc = variant_coefficients(kind, step_coeffs(s, n));
                const Eigen::MatrixXd A = sc.drift_scale * I + sc.score_weight * score_map;
                CHECK((A * P - P * A).norm() <= 1e-12 * A.norm());
                cov = A * cov * A.transpose() + sc.noise_std * sc.noise_std * I;
            }
            PropagationOptions opt;
            opt.kind = kind;
            opt.bias = with_bias ? &bias : nullptr;
            const SpectralState st = propagate_covariance(s, k, d, opt);
            const Eigen::MatrixXd spectral = st.v_par * P + st.v_perp * (I - P);
            CHECK((cov - spectral).norm() <= 1e-12 * cov.norm());

            const double delta = s.early_stop();
            const Eigen::MatrixXd q = P + sigma_sq(delta) * (I - P);
            CHECK(exact_kl(st, delta) == doctest::Approx(dense_gaussian_kl(q, cov)).epsilon(1e-9));
            CHECK(exact_kl_reverse(st, delta) == doctest::Approx(dense_gaussian_kl(cov, q)).epsilon(1e-9));
        }
    }
}

TEST_CASE("subspace direction is integrated exactly") {
    const Schedule s = make_two_phase(6.0, 0.01, 64);
    for (int n = 0; n < s.steps(); ++n) {
        const StepMultipliers m = step_multipliers(s, n, SamplerKind::ddpm);
        CHECK(m.par == doctest::Approx(std::sqrt(s.alpha(n))).epsilon(1e-13));
    }
}

TEST_CASE("fine schedules converge to q_delta") {
    const Schedule s = make_two_phase(6.0, 0.01, 1 << 14);
    const SpectralState st = propagate_covariance(s, 2, 8);
    CHECK(std::abs(st.v_perp / sigma_sq(0.01) - 1.0) <= 1e-3);
    CHECK(std::abs(st.v_par - 1.0) <= 1e-3);
}

TEST_CASE("discretization integral against the closed form") {
    for (const Schedule& s : {make_two_phase(6.0, 0.01, 32), make_two_phase(3.0, 0.2, 8), make_uniform(5.0, 0.05, 20)}) {
        for (int k : {1, 3}) {
            const DiscretizationIntegral di = discretization_integral(s, k);
            REQUIRE(di.per_interval.size() == static_cast<std::size_t>(s.steps()));
            double total = 0.0;
            for (int n = 0; n < s.steps(); ++n) {
                const double ref = interval_closed_form(s.forward_time(n), s.interval(n), k);
                CHECK(di.per_interval[n] == doctest::Approx(ref).epsilon(1e-7));
                CHECK(di.per_interval[n] >= 0.0);
                total += di.per_interval[n];
            }
            CHECK(di.total == doctest::Approx(total).epsilon(1e-14));
        }
        CHECK(discretization_integral(s, 0).total == 0.0);
    }
}

TEST_CASE("discretization integral halves with N") {
    for (int n : {128, 512}) {
        const double a = discretization_integral(make_two_phase(6.0, 0.01, n), 2).total;
        const double b = discretization_integral(make_two_phase(6.0, 0.01, 2 * n), 2).total;
        CHECK(a / b >= 1.8);
        CHECK(a / b <= 2.2);
    }
}

TEST_CASE("initialization terms") {
    CHECK(init_terms(3.0, 4, 4).exact == 0.0);
    // (d - k)/2 g(1 - e^{-2T}) with g(1 - x) = x^2/2 + x^3/3 + ...
    const double x = std::exp(-6.0);
    const InitTerms it = init_terms(3.0, 2, 1);
    CHECK(it.exact == doctest::Approx(0.5 * (x * x / 2.0 + x * x * x / 3.0 + x * x * x * x / 4.0)).epsilon(1e-10));
    CHECK(it.exact == doctest::Approx(1.536e-6).epsilon(1e-3));
    CHECK(it.bound == doctest::Approx(3.0 * x).epsilon(1e-14));
    for (double T : {1.5, 2.0, 4.0, 8.0})
        for (int d : {1, 16, 128})
            for (int k : {0, d / 2, d}) CHECK(init_terms(T, d, k).exact <= init_terms(T, d, k).bound);
}

TEST_CASE("linear bias realizes the declared budget") {
    const Schedule s = make_two_phase(5.0, 0.02, 40);
    for (double budget : {1e-4, 1e-2}) {
        const LinearScoreBias b = linear_score_bias(s, 2, 16, budget);
        REQUIRE(b.coefficients.size() == 40u);
        CHECK(declared_budget(b, s, 2, 16) == doctest::Approx(budget).epsilon(1e-12));
        for (double c : b.coefficients) CHECK(c > 0.0);
    }
}

TEST_CASE("bound report") {
    const Schedule s = make_two_phase(6.0, 0.01, 64);
    const BoundReport r = bound_report(s, 2, 16);
    CHECK(r.chain_holds());
    CHECK(r.exact_kl == doctest::Approx(exact_kl(propagate_covariance(s, 2, 16), 0.01)).epsilon(1e-12));
    CHECK(r.discretization_integral == doctest::Approx(discretization_integral(s, 2).total).epsilon(1e-12));
    CHECK(r.to_json().contains("schedule"));
    const auto path = std::filesystem::temp_directory_path() / "ddpmlab_bound.csv";
    r.write_interval_csv(path.string());
    std::ifstream in(path);
    int lines = 0;
    for (std::string line; std::getline(in, line);) ++lines;
    CHECK(lines == 65);
    std::filesystem::remove(path);
}

TEST_CASE("minimum step search") {
    const MinStepsResult trivial = find_min_steps(2, 8, 8.0, 3.0, 0.1);
    CHECK(trivial.steps == 2);
    CHECK_FALSE(trivial.saturated);

    const double T = 2.0 * std::log(64.0 / 0.1);
    const MinStepsResult r = find_min_steps(2, 64, 0.01, T, 0.01);
    CHECK_FALSE(r.saturated);
    CHECK(r.steps % 2 == 0);
    CHECK(r.objective <= 0.01);
    auto objective = [&](int n) {
        const Schedule s = make_two_phase(T, 0.01, n);
        return exact_kl(propagate_covariance(s, 2, 64), 0.01) + init_terms(T, 64, 2).exact;
    };
    CHECK(objective(r.steps) == doctest::Approx(r.objective).epsilon(1e-12));
    CHECK(objective(r.steps - 2) > 0.01);

    const MinStepsResult finer = find_min_steps(2, 64, 0.0025, T, 0.01);
    CHECK(finer.steps >= r.steps);

    const MinStepsResult sat = find_min_steps(2, 64, 1e-12, T, 0.01, 64);
    CHECK(sat.saturated);
}

}  // TEST_SUITE
