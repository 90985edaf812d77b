#include "ddpmlab/noise.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ddpmlab/error.hpp"

namespace ddpmlab {

namespace {

void require_time(double t, const char* what) {
    if (!std::isfinite(t) || t < 0.0) {
        std::ostringstream os;
        os << what << ": time must be finite and >= 0, got " << t;
        throw DomainError(os.str());
    }
}

void require_index(int n, int lo, int hi, const char* what) {
    if (n < lo || n > hi) {
        std::ostringstream os;
        os << what << ": index " << n << " outside [" << lo << ", " << hi << "]";
        throw std::out_of_range(os.str());
    }
}

}  // namespace

double sigma(double t) { return std::sqrt(sigma_sq(t)); }

double sigma_sq(double t) {
    require_time(t, "sigma");
    return -std::expm1(-2.0 * t);
}

double eta(double t) {
    if (!std::isfinite(t) || t <= 0.0) {
        std::ostringstream os;
        os << "eta: requires t > 0 (pole at 0), got " << t;
        throw DomainError(os.str());
    }
    return std::exp(-t) / -std::expm1(-2.0 * t);
}

Schedule::Schedule(std::vector<double> times) : times_(std::move(times)) {
    const int n_steps = steps();
    const double T = horizon();
    alphas_.resize(static_cast<std::size_t>(n_steps) + 1);
    alpha_bars_.resize(static_cast<std::size_t>(n_steps) + 2);
    for (int n = 0; n <= n_steps; ++n) alphas_[n] = std::exp(-2.0 * interval(n));
    for (int n = 0; n <= n_steps + 1; ++n) alpha_bars_[n] = std::exp(-2.0 * (T - times_[n]));
    for (int n = 0; n < n_steps; ++n)
        kappa_ = std::max(kappa_, interval(n) / std::min(1.0, forward_time(n)));
}

Schedule Schedule::from_times(std::vector<double> times) {
    if (times.size() < 3)
        throw ConfigError("schedule needs t_0, at least one step and t_{N+1} = T (>= 3 times)");
    if (times.front() != 0.0) throw ConfigError("schedule must start at t_0 = 0");
    for (std::size_t i = 0; i < times.size(); ++i) {
        if (!std::isfinite(times[i])) throw ConfigError("schedule times must be finite");
        if (i > 0 && !(times[i] > times[i - 1])) {
            std::ostringstream os;
            os << "schedule times must be strictly increasing (t_" << i - 1 << " = " << times[i - 1]
               << ", t_" << i << " = " << times[i] << ")";
            throw ConfigError(os.str());
        }
    }
    return Schedule(std::move(times));
}

double Schedule::time(int n) const {
    require_index(n, 0, steps() + 1, "Schedule::time");
    return times_[n];
}

double Schedule::interval(int n) const {
    require_index(n, 0, steps(), "Schedule::interval");
    return times_[n + 1] - times_[n];
}

double Schedule::forward_time(int n) const {
    require_index(n, 0, steps() + 1, "Schedule::forward_time");
    return horizon() - times_[n];
}

double Schedule::alpha(int n) const {
    require_index(n, 0, steps(), "Schedule::alpha");
    return alphas_[n];
}

double Schedule::alpha_bar(int n) const {
    require_index(n, 0, steps() + 1, "Schedule::alpha_bar");
    return alpha_bars_[n];
}

double Schedule::one_minus_alpha(int n) const { return -std::expm1(-2.0 * interval(n)); }

double Schedule::one_minus_alpha_bar(int n) const { return -std::expm1(-2.0 * forward_time(n)); }

double Schedule::gamma(int n) const { return std::exp(-forward_time(n)); }

double Schedule::kappa_with_final_interval() const {
    const int n = steps();
    return std::max(kappa_, interval(n) / std::min(1.0, forward_time(n)));
}

bool Schedule::satisfies_theorem_hypotheses() const {
    const double delta = early_stop();
    return horizon() > 1.0 && kappa_ <= 0.9 && delta > 0.0 && delta < 1.0;
}

Schedule make_two_phase(double horizon, double early_stop, int steps) {
    if (!(horizon > 1.0)) throw ConfigError("two-phase schedule requires T > 1");
    if (!(early_stop > 0.0 && early_stop < 1.0))
        throw ConfigError("two-phase schedule requires 0 < delta < 1");
    if (steps < 2 || steps % 2 != 0) throw ConfigError("two-phase schedule requires an even N >= 2");

    std::vector<double> t(static_cast<std::size_t>(steps) + 2);
    const int half = steps / 2;
    for (int n = 0; n <= half; ++n) t[n] = 2.0 * (horizon - 1.0) * n / steps;
    for (int n = half + 1; n <= steps; ++n)
        t[n] = horizon - std::pow(early_stop, 2.0 * (n - half) / steps);
    t[steps + 1] = horizon;
    return Schedule::from_times(std::move(t));
}

Schedule make_uniform(double horizon, double early_stop, int steps) {
    if (!(early_stop > 0.0 && horizon > early_stop))
        throw ConfigError("uniform schedule requires T > delta > 0");
    if (steps < 1) throw ConfigError("uniform schedule requires N >= 1");

    std::vector<double> t(static_cast<std::size_t>(steps) + 2);
    const double span = horizon - early_stop;
    for (int n = 0; n <= steps; ++n) t[n] = span * n / steps;
    t[steps + 1] = horizon;
    return Schedule::from_times(std::move(t));
}

StepCoefficients coefficients_for(double forward_time, double interval) {
    if (!(forward_time > 0.0) || !std::isfinite(forward_time))
        throw DomainError("step coefficients need forward time T - t_n > 0");
    if (!(interval >= 0.0) || interval > forward_time)
        throw DomainError("step interval must lie in [0, T - t_n]");

    StepCoefficients c;
    c.alpha = std::exp(-2.0 * interval);
    c.alpha_bar = std::exp(-2.0 * forward_time);
    c.alpha_bar_next = std::exp(-2.0 * (forward_time - interval));
    const double one_minus_alpha = -std::expm1(-2.0 * interval);
    const double one_minus_bar = -std::expm1(-2.0 * forward_time);
    const double one_minus_bar_next = -std::expm1(-2.0 * (forward_time - interval));

    const double root_alpha = std::sqrt(c.alpha);
    c.drift_scale = 1.0 / root_alpha;
    c.score_weight = one_minus_alpha / root_alpha;
    c.noise_std = std::sqrt(one_minus_alpha * one_minus_bar_next / one_minus_bar);
    c.forward_time = forward_time;
    c.sigma_sq = one_minus_bar;
    return c;
}

StepCoefficients step_coeffs(const Schedule& schedule, int n) {
    require_index(n, 0, schedule.steps() - 1, "step_coeffs");
    return coefficients_for(schedule.forward_time(n), schedule.interval(n));
}

IntegratedStep integrate_interval(double forward_time, double interval) {
    const double next = forward_time - interval;
    if (!(next > 0.0) || !(interval >= 0.0))
        throw DomainError("integrate_interval requires 0 <= h < T - t_n");

    // gamma_{n+1}^2 - gamma_n^2 = gamma_{n+1}^2 (1 - e^{-2h}) and 1 - gamma^2 via expm1.
    const double g1_sq = std::exp(-2.0 * next);
    const double diff = g1_sq * -std::expm1(-2.0 * interval);
    const double comp0 = -std::expm1(-2.0 * forward_time);
    const double comp1 = -std::expm1(-2.0 * next);
    const double g0 = std::exp(-forward_time);
    const double g1 = std::exp(-next);

    IntegratedStep s;
    s.weight_integral = diff / (comp0 * comp1);
    s.state_weight = g1 / g0;
    s.score_weight = diff / (g0 * g1);
    s.noise_std = std::sqrt(diff * comp1 / (comp0 * g1_sq));
    return s;
}

double noise_std_alpha_form(double forward_time, double interval) {
    if (!(forward_time > 0.0) || !(interval >= 0.0) || interval > forward_time)
        throw DomainError("noise_std_alpha_form requires 0 <= h <= T - t_n, T - t_n > 0");
    const double alpha = std::exp(-2.0 * interval);
    // alpha - alpha_bar_n = (1 - alpha_bar_n) - (1 - alpha)
    const double alpha_minus_bar = std::expm1(-2.0 * interval) - std::expm1(-2.0 * forward_time);
    const double one_minus_alpha = -std::expm1(-2.0 * interval);
    const double one_minus_bar = -std::expm1(-2.0 * forward_time);
    return std::sqrt(one_minus_alpha * alpha_minus_bar / one_minus_bar) / std::sqrt(alpha);
}

nlohmann::json to_json(const Schedule& schedule) {
    const auto t = schedule.times();
    return nlohmann::json{{"T", schedule.horizon()},
                          {"delta", schedule.early_stop()},
                          {"N", schedule.steps()},
                          {"times", std::vector<double>(t.begin(), t.end())}};
}

Schedule schedule_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("times")) throw ConfigError("schedule JSON needs a \"times\" array");
    auto schedule = Schedule::from_times(j.at("times").get<std::vector<double>>());
    const double scale = std::max(1.0, schedule.horizon());
    if (j.contains("T") && std::abs(j.at("T").get<double>() - schedule.horizon()) > 1e-12 * scale)
        throw ConfigError("schedule JSON: T does not match the last time");
    if (j.contains("delta") && std::abs(j.at("delta").get<double>() - schedule.early_stop()) > 1e-12 * scale)
        throw ConfigError("schedule JSON: delta does not match T - t_N");
    if (j.contains("N") && j.at("N").get<int>() != schedule.steps())
        throw ConfigError("schedule JSON: N does not match the number of times");
    if (j.contains("kappa") &&
        std::abs(j.at("kappa").get<double>() - schedule.kappa()) > 1e-12 * std::max(1.0, schedule.kappa()))
        throw ConfigError("schedule JSON: stored kappa disagrees with recomputation");
    return schedule;
}

}  // namespace ddpmlab
