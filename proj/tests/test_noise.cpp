#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>

#include "ddpmlab/error.hpp"
#include "ddpmlab/noise.hpp"

using namespace ddpmlab;

namespace {

double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

// Independent evaluation of the DDPM noise std from raw exponentials.
double noise_std_direct(double u, double h) {
    const double a = std::exp(-2.0 * h);
    const double abar = std::exp(-2.0 * u);
    const double abar_next = std::exp(-2.0 * (u - h));
    return std::sqrt((1.0 - a) * (1.0 - abar_next) / (1.0 - abar));
}

}  // namespace

TEST_SUITE("noise") {

TEST_CASE("sigma closed values") {
    CHECK(sigma(0.0) == 0.0);
    CHECK(sigma(50.0) > 1.0 - 1e-12);
    CHECK(sigma(std::log(2.0)) == doctest::Approx(std::sqrt(3.0) / 2.0).epsilon(1e-15));
    CHECK(sigma_sq(std::log(2.0)) == doctest::Approx(0.75).epsilon(1e-15));
    CHECK_THROWS_AS(sigma(-1e-9), DomainError);
    // Small t keeps full relative precision: sigma^2 ~ 2t.
    CHECK(rel_err(sigma_sq(1e-12), 2e-12) < 1e-11);
}

TEST_CASE("eta closed values") {
    CHECK(eta(std::log(2.0)) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(std::abs(eta(20.0) - std::exp(-20.0)) <= 1e-15);
    CHECK(std::abs(eta(0.01) - 50.0) / 50.0 < 0.01);
    CHECK_THROWS_AS(eta(0.0), DomainError);
    CHECK_THROWS_AS(eta(-1.0), DomainError);
}

TEST_CASE("sigma increasing and eta decreasing on a grid") {
    double prev_s = -1.0, prev_e = INFINITY;
    for (int i = 1; i <= 300; ++i) {
        const double t = 0.001 * std::pow(1.03, i);
        CHECK(sigma(t) > prev_s);
        CHECK(eta(t) < prev_e);
        prev_s = sigma(t);
        prev_e = eta(t);
    }
}

TEST_CASE("two-phase grid example") {
    const Schedule s = make_two_phase(3.0, 0.01, 4);
    const double expected[] = {0.0, 1.0, 2.0, 2.9, 2.99, 3.0};
    REQUIRE(s.times().size() == 6);
    for (int i = 0; i < 6; ++i) CHECK(s.time(i) == doctest::Approx(expected[i]).epsilon(1e-14));
    CHECK(s.steps() == 4);
    CHECK(s.horizon() == 3.0);
    CHECK(s.early_stop() == doctest::Approx(0.01).epsilon(1e-12));
    // Ratios 1/1, 1/1, 0.9/1, 0.09/0.1 on the simulated intervals and 0.01/0.01 on the last.
    CHECK(s.kappa() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s.kappa_with_final_interval() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("two-phase kappa tracks (T + log(1/delta))/N") {
    for (double T : {2.0, 4.0, 8.0})
        for (double delta : {1e-3, 1e-2, 0.3})
            for (int n : {32, 64, 256, 1024, 4096}) {
                const Schedule s = make_two_phase(T, delta, n);
                const double ref = (T + std::log(1.0 / delta)) / n;
                CHECK(s.kappa() <= 3.0 * ref);
                CHECK(s.kappa() >= ref / 3.0);
            }
}

TEST_CASE("two-phase rejects invalid input") {
    CHECK_THROWS_AS(make_two_phase(3.0, 0.01, 5), ConfigError);
    CHECK_THROWS_AS(make_two_phase(3.0, 1.0, 4), ConfigError);
    CHECK_THROWS_AS(make_two_phase(1.0, 0.01, 4), ConfigError);
    CHECK_THROWS_AS(make_two_phase(3.0, 0.0, 4), ConfigError);
    CHECK_THROWS_AS(make_two_phase(3.0, 0.01, 0), ConfigError);
}

TEST_CASE("uniform grid example") {
    const Schedule s = make_uniform(2.0, 0.5, 3);
    const double expected[] = {0.0, 0.5, 1.0, 1.5, 2.0};
    REQUIRE(s.times().size() == 5);
    for (int i = 0; i < 5; ++i) CHECK(s.time(i) == doctest::Approx(expected[i]).epsilon(1e-14));
    // Literal reading including the final interval: 0.5/1, 0.5/1, 0.5/1, 0.5/0.5.
    CHECK(s.kappa_with_final_interval() == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(s.kappa() == doctest::Approx(0.5).epsilon(1e-14));
    for (int n : {10, 100, 1000}) CHECK(make_uniform(2.0, 0.5, n).kappa_with_final_interval() == doctest::Approx(1.0));
    CHECK_THROWS_AS(make_uniform(0.5, 0.5, 3), ConfigError);
    CHECK_THROWS_AS(make_uniform(2.0, 0.5, 0), ConfigError);
}

TEST_CASE("alpha invariants") {
    const Schedule s = make_two_phase(6.0, 0.01, 64);
    for (int n = 0; n <= s.steps(); ++n) {
        CHECK(rel_err(s.alpha(n), std::exp(-2.0 * (s.time(n + 1) - s.time(n)))) < 1e-14);
        CHECK(rel_err(s.alpha_bar(n), std::exp(-2.0 * (s.horizon() - s.time(n)))) < 1e-14);
        CHECK(std::abs(s.alpha_bar(n) - s.alpha(n) * s.alpha_bar(n + 1)) <= 1e-14);
        CHECK(s.alpha(n) > 0.0);
        CHECK(s.alpha(n) < 1.0);
    }
    CHECK(s.alpha_bar(s.steps() + 1) == 1.0);
}

TEST_CASE("step coefficient example") {
    // T - t_n = 1 and t_{n+1} - t_n = 0.1 at n = 0.
    const Schedule s = Schedule::from_times({0.0, 0.1, 1.0});
    const StepCoefficients c = step_coeffs(s, 0);
    CHECK(c.alpha == doctest::Approx(std::exp(-0.2)).epsilon(1e-14));
    CHECK(c.alpha == doctest::Approx(0.818731).epsilon(1e-6));
    CHECK(c.alpha_bar == doctest::Approx(0.135335).epsilon(1e-5));
    CHECK(c.alpha_bar_next == doctest::Approx(0.165299).epsilon(1e-5));
    CHECK(c.noise_std == doctest::Approx(0.418316).epsilon(1e-6));
    CHECK(rel_err(c.noise_std, noise_std_direct(1.0, 0.1)) < 1e-13);
    CHECK(c.drift_scale == doctest::Approx(std::exp(0.1)).epsilon(1e-14));
    CHECK(c.score_weight == doctest::Approx((1.0 - std::exp(-0.2)) * std::exp(0.1)).epsilon(1e-14));
    CHECK(c.forward_time == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(c.sigma_sq == 1.0 - c.alpha_bar);
}

TEST_CASE("zero-length step is the identity") {
    const StepCoefficients c = coefficients_for(1.3, 0.0);
    CHECK(c.alpha == 1.0);
    CHECK(c.noise_std == 0.0);
    CHECK(c.drift_scale == 1.0);
    CHECK(c.score_weight == 0.0);
}

TEST_CASE("step_coeffs rejects out-of-range steps") {
    const Schedule s = make_two_phase(3.0, 0.01, 4);
    CHECK_NOTHROW(step_coeffs(s, 3));
    CHECK_THROWS_AS(step_coeffs(s, 4), std::out_of_range);
    CHECK_THROWS_AS(step_coeffs(s, -1), std::out_of_range);
}

TEST_CASE("noise std dual forms agree on random schedules") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        const double T = 2.0 + 6.0 * unit(rng);
        const double delta = 1e-3 * std::pow(500.0, unit(rng));
        const int n = 2 * (1 + static_cast<int>(unit(rng) * 256));
        const Schedule s = make_two_phase(T, delta, n);
        for (int i = 0; i < s.steps(); ++i) {
            const StepCoefficients c = step_coeffs(s, i);
            const double u = s.forward_time(i), h = s.interval(i);
            // gamma form written out independently, with g1^2 - g0^2 = g1^2 (1 - e^{-2h}).
            const double g0 = std::exp(-u), g1 = std::exp(-(u - h));
            const double gap = g1 * g1 * -std::expm1(-2.0 * h);
            const double gamma_form =
                std::sqrt(gap * -std::expm1(-2.0 * (u - h)) / (-std::expm1(-2.0 * u) * g1 * g1));
            CHECK(g0 < g1);
            CHECK(rel_err(c.noise_std, gamma_form) <= 1e-12);
            CHECK(rel_err(c.noise_std, integrate_interval(u, h).noise_std) <= 1e-12);
            CHECK(rel_err(c.noise_std, noise_std_alpha_form(u, h)) <= 1e-12);
        }
    }
}

TEST_CASE("integrating-factor step equals the DDPM step") {
    // I = int_{t_n}^{t_{n+1}} 2 eta_{T-t}^2 dt by composite Simpson, against the closed form.
    for (double u : {0.05, 0.4, 1.0, 3.0}) {
        for (double h : {1e-3, 0.02, 0.3 * u}) {
            const int m = 20000;
            double acc = 0.0;
            for (int i = 0; i <= m; ++i) {
                const double w = (i == 0 || i == m) ? 1.0 : (i % 2 ? 4.0 : 2.0);
                const double e = eta(u - h * i / m);
                acc += w * 2.0 * e * e;
            }
            const double simpson = acc * h / (3.0 * m);
            const IntegratedStep step = integrate_interval(u, h);
            CHECK(rel_err(step.weight_integral, simpson) < 1e-9);

            // Rearranged with Tweedie, the one-interval solution has the DDPM coefficients.
            const StepCoefficients c = coefficients_for(u, h);
            CHECK(rel_err(step.state_weight, c.drift_scale) < 1e-13);
            CHECK(rel_err(step.score_weight, c.score_weight) < 1e-12);
        }
    }
}

TEST_CASE("eta ratio stays below 25 when kappa <= 0.9") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    int checked = 0;
    for (int trial = 0; trial < 300; ++trial) {
        const double T = 2.0 + 6.0 * unit(rng);
        const double delta = 1e-3 * std::pow(500.0, unit(rng));
        const int n = 2 * (1 + static_cast<int>(unit(rng) * 512));
        const Schedule s = make_two_phase(T, delta, n);
        if (s.kappa() > 0.9) continue;
        ++checked;
        for (int i = 0; i < s.steps(); ++i) {
            const double base = eta(s.forward_time(i));
            for (int j = 0; j < 32; ++j) {
                const double t = s.time(i) + s.interval(i) * j / 32.0;
                CHECK(eta(s.horizon() - t) / base <= 25.0);
            }
        }
    }
    CHECK(checked > 100);
}

TEST_CASE("theorem hypothesis flag") {
    CHECK(make_two_phase(6.0, 0.01, 64).satisfies_theorem_hypotheses());
    CHECK_FALSE(make_two_phase(6.0, 0.01, 2).satisfies_theorem_hypotheses());
    CHECK_FALSE(make_uniform(6.0, 0.01, 16).satisfies_theorem_hypotheses());
}

TEST_CASE("schedule validation") {
    CHECK_THROWS_AS(Schedule::from_times({0.0, 1.0}), ConfigError);
    CHECK_THROWS_AS(Schedule::from_times({0.1, 1.0, 2.0}), ConfigError);
    CHECK_THROWS_AS(Schedule::from_times({0.0, 1.0, 1.0, 2.0}), ConfigError);
    CHECK_THROWS_AS(Schedule::from_times({0.0, NAN, 2.0}), ConfigError);
}

TEST_CASE("json round trip") {
    const Schedule s = make_two_phase(5.0, 0.02, 10);
    const auto j = to_json(s);
    CHECK(j.at("N") == 10);
    const Schedule back = schedule_from_json(j);
    REQUIRE(back.times().size() == s.times().size());
    for (std::size_t i = 0; i < s.times().size(); ++i) CHECK(back.times()[i] == s.times()[i]);
    CHECK(back.kappa() == s.kappa());

    auto bad = j;
    bad["N"] = 11;
    CHECK_THROWS_AS(schedule_from_json(bad), ConfigError);
    bad = j;
    bad["delta"] = 0.5;
    CHECK_THROWS_AS(schedule_from_json(bad), ConfigError);
}

}  // TEST_SUITE
