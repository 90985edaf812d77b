#pragma once

// Noise-level algebra of the Ornstein-Uhlenbeck forward process and the
// time grids used to discretize its reversal.
//
// Conventions: "forward time" u runs from 0 (clean data) to T (nearly pure
// noise); the reverse chain walks the grid 0 = t_0 < ... < t_N = T - delta
// < t_{N+1} = T and evaluates the score at forward time T - t_n.

#include <span>
#include <vector>

#include <json.hpp>

namespace ddpmlab {

// sigma_t = sqrt(1 - e^{-2t}).
double sigma(double t);

// sigma_t^2 = 1 - e^{-2t}, evaluated with expm1 so small t keeps full precision.
double sigma_sq(double t);

// eta_t = sqrt(1 - sigma_t^2) / sigma_t^2 = e^{-t} / (1 - e^{-2t}). Pole at t = 0.
double eta(double t);

class Schedule {
public:
    // Validates and takes ownership of t_0..t_{N+1}; derived coefficients are
    // recomputed here and never accepted from the caller.
    static Schedule from_times(std::vector<double> times);

    double horizon() const { return times_.back(); }
    double early_stop() const { return times_.back() - times_[times_.size() - 2]; }
    int steps() const { return static_cast<int>(times_.size()) - 2; }

    std::span<const double> times() const { return times_; }
    double time(int n) const;
    double interval(int n) const;        // t_{n+1} - t_n, n in [0, N]
    double forward_time(int n) const;    // T - t_n, n in [0, N+1]

    double alpha(int n) const;           // e^{-2(t_{n+1} - t_n)}, n in [0, N]
    double alpha_bar(int n) const;       // e^{-2(T - t_n)}, n in [0, N+1]
    double one_minus_alpha(int n) const;
    double one_minus_alpha_bar(int n) const;
    double gamma(int n) const;           // sqrt(alpha_bar_n) = e^{-(T - t_n)}

    // Smallest kappa with t_{n+1} - t_n <= kappa * min{1, T - t_n} over the N
    // simulated intervals n = 0..N-1.
    double kappa() const { return kappa_; }
    // Same ratio maximized over n = 0..N, i.e. including [t_N, T]. That last
    // ratio is delta / delta = 1, so this is always >= 1.
    double kappa_with_final_interval() const;

    // Hypotheses of the KL guarantee: T > 1, kappa <= 0.9, 0 < delta < 1.
    bool satisfies_theorem_hypotheses() const;

private:
    explicit Schedule(std::vector<double> times);

    std::vector<double> times_;
    std::vector<double> alphas_;       // size N+1
    std::vector<double> alpha_bars_;   // size N+2
    double kappa_ = 0.0;
};

// Linear phase on [0, T-1] for n <= N/2, then T - t_n = delta^{2(n - N/2)/N}.
Schedule make_two_phase(double horizon, double early_stop, int steps);

// Equally spaced t_n = n (T - delta) / N.
Schedule make_uniform(double horizon, double early_stop, int steps);

struct StepCoefficients {
    double drift_scale = 1.0;   // 1/sqrt(alpha_n)
    double score_weight = 0.0;  // (1 - alpha_n)/sqrt(alpha_n)
    double noise_std = 0.0;     // sqrt((1 - alpha_n)(1 - alpha_bar_{n+1})/(1 - alpha_bar_n))
    double forward_time = 0.0;  // T - t_n
    double sigma_sq = 0.0;      // 1 - alpha_bar_n
    double alpha = 1.0;
    double alpha_bar = 0.0;
    double alpha_bar_next = 0.0;
};

// Coefficients of one reverse step that starts at forward time u and has length h.
// h = 0 is allowed and yields the identity step.
StepCoefficients coefficients_for(double forward_time, double interval);

StepCoefficients step_coeffs(const Schedule& schedule, int n);

// Closed-form one-interval solution of the adaptively discretized reverse SDE,
// obtained with the integrating factor f(t) = eta_{T-t}:
//   f(t_{n+1}) Y_{n+1} = f(t_n) Y_n + I mu_hat + sqrt(I) Z,  I = int 2 f(t)^2 dt.
// Written in terms of gamma_n = e^{-(T - t_n)} and rearranged with Tweedie's relation.
struct IntegratedStep {
    double state_weight = 1.0;   // gamma_{n+1}/gamma_n
    double score_weight = 0.0;   // (gamma_{n+1}^2 - gamma_n^2)/(gamma_n gamma_{n+1})
    double noise_std = 0.0;      // sqrt((g1^2 - g0^2)(1 - g1^2)/((1 - g0^2) g1^2))
    double weight_integral = 0.0;  // I = (g1^2 - g0^2)/((1 - g0^2)(1 - g1^2))
};

IntegratedStep integrate_interval(double forward_time, double interval);

// Appendix form (1/sqrt(alpha)) sqrt((1 - alpha)(alpha - alpha_bar_n)/(1 - alpha_bar_n)).
double noise_std_alpha_form(double forward_time, double interval);

nlohmann::json to_json(const Schedule& schedule);
// Accepts {"T", "delta", "N", "times"}; checks the header fields against the times.
Schedule schedule_from_json(const nlohmann::json& j);

}  // namespace ddpmlab
