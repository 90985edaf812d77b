#include "ddpmlab/gaussian_exact.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "ddpmlab/error.hpp"

namespace ddpmlab {

namespace {

void require_dims(int k, int d) {
    if (d < 1 || k < 0 || k > d) throw ConfigError("need d >= 1 and 0 <= k <= d");
}

}  // namespace

LinearScoreBias linear_score_bias(const Schedule& schedule, int k, int d, double budget) {
    require_dims(k, d);
    if (!(budget >= 0.0) || !std::isfinite(budget)) throw ConfigError("score error budget must be >= 0");
    const int steps = schedule.steps();
    const double eps_sq = budget / schedule.time(steps);
    LinearScoreBias bias;
    bias.coefficients.resize(static_cast<std::size_t>(steps));
    for (int n = 0; n < steps; ++n) {
        const double second_moment = k + (d - k) * sigma_sq(schedule.forward_time(n));
        bias.coefficients[n] = std::sqrt(eps_sq / second_moment);
    }
    return bias;
}

double declared_budget(const LinearScoreBias& bias, const Schedule& schedule, int k, int d) {
    double total = 0.0;
    for (int n = 0; n < schedule.steps(); ++n) {
        const double c = bias.coefficients.at(static_cast<std::size_t>(n));
        total += schedule.interval(n) * c * c * (k + (d - k) * sigma_sq(schedule.forward_time(n)));
    }
    return total;
}

StepMultipliers step_multipliers(const Schedule& schedule, int n, SamplerKind kind, double bias) {
    const StepCoefficients c = variant_coefficients(kind, step_coeffs(schedule, n));
    // Score along span U is -x (unit variance is preserved by the forward process); across it is -x / sigma^2.
    return {c.drift_scale + c.score_weight * (-1.0 + bias),
            c.drift_scale + c.score_weight * (-1.0 / c.sigma_sq + bias),
            c.noise_std * c.noise_std};
}

SpectralState propagate_covariance(const Schedule& schedule, int k, int d, const PropagationOptions& options) {
    require_dims(k, d);
    const int steps = options.stop_step.value_or(schedule.steps());
    if (steps < 0 || steps > schedule.steps()) throw ConfigError("propagate_covariance: stop step outside [0, N]");
    if (options.bias && static_cast<int>(options.bias->coefficients.size()) != schedule.steps())
        throw ConfigError("propagate_covariance: bias built for a different schedule");

    SpectralState s{1.0, 1.0, k, d};
    if (options.init == Initialization::forward_marginal) s.v_perp = sigma_sq(schedule.horizon());
    for (int n = 0; n < steps; ++n) {
        const double b = options.bias ? options.bias->coefficients[static_cast<std::size_t>(n)] : 0.0;
        const auto m = step_multipliers(schedule, n, options.kind, b);
        s.v_par = m.par * m.par * s.v_par + m.noise_var;
        s.v_perp = m.perp * m.perp * s.v_perp + m.noise_var;
        if (!(s.v_par > 0.0) || !(s.v_perp > 0.0) || !std::isfinite(s.v_par) || !std::isfinite(s.v_perp)) {
            std::ostringstream os;
            os << "propagate_covariance: variance left (0, inf) at step " << n << " (v_par = " << s.v_par
               << ", v_perp = " << s.v_perp << ")";
            throw NumericError(os.str());
        }
    }
    return s;
}

double kl_g(double r) {
    if (!(r > 0.0)) throw NumericError("kl_g needs a positive variance ratio");
    const double x = r - 1.0;
    return x - std::log1p(x);
}

double exact_kl(const SpectralState& state, double early_stop) {
    if (!(state.v_par > 0.0) || !(state.v_perp > 0.0)) throw NumericError("exact_kl: nonpositive variance");
    const double target_perp = sigma_sq(early_stop);
    return 0.5 * (state.k * kl_g(1.0 / state.v_par) + (state.d - state.k) * kl_g(target_perp / state.v_perp));
}

double exact_kl_reverse(const SpectralState& state, double early_stop) {
    if (!(state.v_par > 0.0) || !(state.v_perp > 0.0)) throw NumericError("exact_kl: nonpositive variance");
    const double target_perp = sigma_sq(early_stop);
    return 0.5 * (state.k * kl_g(state.v_par) + (state.d - state.k) * kl_g(state.v_perp / target_perp));
}

DiscretizationIntegral discretization_integral(const Schedule& schedule, int k, double rel_tol) {
    if (k < 0) throw ConfigError("discretization_integral: k must be >= 0");
    DiscretizationIntegral out;
    const int steps = schedule.steps();
    out.per_interval.assign(static_cast<std::size_t>(steps), 0.0);
    if (k == 0) return out;

    using Quadrature = boost::math::quadrature::gauss_kronrod<double, 15>;
    for (int n = 0; n < steps; ++n) {
        const double u_start = schedule.forward_time(n);
        // Integrate in s = u_start - u over [0, t_{n+1} - t_n]; the variance gap
        // sigma^2_{u_start} - sigma^2_u = -e^{-2u} expm1(-2s) then has no cancellation.
        auto integrand = [&](double s) {
            const double u = u_start - s;
            const double decay = std::exp(-2.0 * u);
            const double var = -std::expm1(-2.0 * u);
            return decay * decay * -std::expm1(-2.0 * s) / (var * var);
        };
        double error = 0.0;
        const double value = Quadrature::integrate(integrand, 0.0, schedule.interval(n), 15, rel_tol, &error);
        if (!std::isfinite(value) || error > rel_tol * std::abs(value) + 1e-14) {
            std::ostringstream os;
            os << "discretization_integral: quadrature did not converge on interval " << n << " [t = "
               << schedule.time(n) << ", " << schedule.time(n + 1) << "], error estimate " << error;
            throw NumericError(os.str());
        }
        out.per_interval[n] = k * value;
        out.total += k * value;
    }
    return out;
}

InitTerms init_terms(double horizon, int d, int k) {
    require_dims(k, d);
    if (!(horizon > 0.0)) throw ConfigError("init_terms: T must be > 0");
    InitTerms t;
    t.exact = 0.5 * (d - k) * kl_g(sigma_sq(horizon));
    t.bound = (d + k) * std::exp(-2.0 * horizon);
    return t;
}

nlohmann::json BoundReport::to_json() const {
    return nlohmann::json{{"k", k},
                          {"d", d},
                          {"kappa", kappa},
                          {"discretization_integral", discretization_integral},
                          {"score_term", score_term},
                          {"init_kl", init_kl},
                          {"init_bound", init_bound},
                          {"exact_kl", exact_kl},
                          {"exact_kl_reverse", exact_kl_reverse},
                          {"chain_holds", chain_holds()},
                          {"t2_split", t2_split},
                          {"schedule", schedule}};
}

void BoundReport::write_interval_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    const auto times = schedule.at("times").get<std::vector<double>>();
    out << "n,t_n,t_next,contribution\n" << std::setprecision(17);
    for (std::size_t n = 0; n < t2_split.size(); ++n)
        out << n << ',' << times[n] << ',' << times[n + 1] << ',' << t2_split[n] << '\n';
}

BoundReport bound_report(const Schedule& schedule, int k, int d, double score_budget, SamplerKind kind) {
    require_dims(k, d);
    BoundReport r;
    r.k = k;
    r.d = d;
    r.kappa = schedule.kappa();
    r.schedule = to_json(schedule);
    const auto integral = discretization_integral(schedule, k);
    r.discretization_integral = integral.total;
    r.t2_split = integral.per_interval;
    r.score_term = score_budget;
    const auto init = init_terms(schedule.horizon(), d, k);
    r.init_kl = init.exact;
    r.init_bound = init.bound;

    PropagationOptions opts;
    opts.kind = kind;
    LinearScoreBias bias;
    if (score_budget > 0.0) {
        bias = linear_score_bias(schedule, k, d, score_budget);
        opts.bias = &bias;
    }
    const auto state = propagate_covariance(schedule, k, d, opts);
    r.exact_kl = exact_kl(state, schedule.early_stop());
    r.exact_kl_reverse = exact_kl_reverse(state, schedule.early_stop());
    return r;
}

MinStepsResult find_min_steps(int k, int d, double eps_sq, double horizon, double early_stop, int max_steps) {
    require_dims(k, d);
    if (!(eps_sq > 0.0)) throw ConfigError("find_min_steps: eps^2 must be > 0");
    const double init = init_terms(horizon, d, k).exact;
    auto objective = [&](int n) {
        const auto sched = make_two_phase(horizon, early_stop, n);
        return exact_kl(propagate_covariance(sched, k, d), sched.early_stop()) + init;
    };

    // Bracket: last failing and first passing candidate on {2^j, 1.5 * 2^j}, rounded to even.
    int lo = 0;  // largest even N known to fail (0 = none)
    int hi = 0;
    double hi_value = 0.0;
    for (int base = 2; base <= max_steps && hi == 0; base *= 2) {
        for (int candidate : {base, (3 * base / 2) & ~1}) {
            if (candidate > max_steps || candidate <= lo) continue;
            const double v = objective(candidate);
            if (v <= eps_sq) {
                hi = candidate;
                hi_value = v;
                break;
            }
            lo = candidate;
        }
    }
    if (hi == 0) return {max_steps, true, objective(max_steps & ~1)};

    // Smallest passing even N in (lo, hi].
    while (hi - lo > 2) {
        const int mid = ((lo + hi) / 2) & ~1;
        const int probe = mid <= lo ? lo + 2 : mid;
        const double v = objective(probe);
        if (v <= eps_sq) {
            hi = probe;
            hi_value = v;
        } else {
            lo = probe;
        }
    }
    return {hi, false, hi_value};
}

}  // namespace ddpmlab
