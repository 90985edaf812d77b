#pragma once

// Sampling-free analysis of the DDPM recursion for the subspace Gaussian
// X_0 = U z (z ~ N(0, I_k), scale 1) and for the point mass (k = 0).
//
// The score is linear, s_u(x) = -P x - (I - P) x / sigma_u^2 with P = U U^T,
// so every step maps a zero-mean Gaussian with covariance
// v_par P + v_perp (I - P) to another one of the same form. The whole chain
// then reduces to two scalar variance recursions.

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ddpmlab/noise.hpp"
#include "ddpmlab/sampler.hpp"

namespace ddpmlab {

struct SpectralState {
    double v_par = 1.0;   // variance along span U
    double v_perp = 1.0;  // variance in the orthogonal complement
    int k = 0;
    int d = 1;
};

// Score error that keeps the recursion linear: s_hat_n(x) = s(x) + c_n x.
struct LinearScoreBias {
    std::vector<double> coefficients;  // c_n, n = 0..N-1
};

// c_n > 0 chosen so E_{q_{T-t_n}} ||c_n X||^2 = eps_n^2 with the uniform allocation
// eps_n^2 = budget / (T - delta). The sign matches the default radial direction x/||x||.
LinearScoreBias linear_score_bias(const Schedule& schedule, int k, int d, double budget);

// sum_n (t_{n+1} - t_n) E_{q_{T-t_n}} ||c_n X||^2 for the subspace Gaussian.
double declared_budget(const LinearScoreBias& bias, const Schedule& schedule, int k, int d);

enum class Initialization {
    standard_normal,  // Y_0 ~ N(0, I_d), the sampler's initialization
    forward_marginal  // Y_0 ~ q_T, only available in this closed-form path
};

struct PropagationOptions {
    SamplerKind kind = SamplerKind::ddpm;
    const LinearScoreBias* bias = nullptr;
    Initialization init = Initialization::standard_normal;
    std::optional<int> stop_step;
};

// Per-step multipliers of the linear map along / across the subspace.
struct StepMultipliers {
    double par;
    double perp;
    double noise_var;
};
StepMultipliers step_multipliers(const Schedule& schedule, int n, SamplerKind kind, double bias = 0.0);

// v <- m^2 v + noise_std^2 on both eigenspaces. Throws NumericError if a
// variance turns nonpositive or non-finite.
SpectralState propagate_covariance(const Schedule& schedule, int k, int d, const PropagationOptions& options = {});

// g(r) = r - 1 - log r, accurate near r = 1.
double kl_g(double r);

// KL(q_delta || p_output), q_delta having variance 1 on span U and sigma_delta^2 across.
double exact_kl(const SpectralState& state, double early_stop);
// KL(p_output || q_delta).
double exact_kl_reverse(const SpectralState& state, double early_stop);

struct DiscretizationIntegral {
    double total = 0.0;
    std::vector<double> per_interval;  // n = 0..N-1
};

// sum_n int_{t_n}^{t_{n+1}} (1 - sigma^2_{T-t})/sigma^4_{T-t} * k (sigma^2_{T-t_n} - sigma^2_{T-t}) dt,
// by adaptive Gauss-Kronrod per interval in the variable u = T - t.
DiscretizationIntegral discretization_integral(const Schedule& schedule, int k, double rel_tol = 1e-8);

struct InitTerms {
    double exact = 0.0;  // KL(q_T || pi_d) = (d - k)/2 g(sigma_T^2)
    double bound = 0.0;  // (d + E||X_0||^2) e^{-2T} = (d + k) e^{-2T}
    double slack() const { return bound > 0.0 ? exact / bound : 0.0; }
};
InitTerms init_terms(double horizon, int d, int k);

struct BoundReport {
    int k = 0;
    int d = 1;
    double kappa = 0.0;
    double discretization_integral = 0.0;
    double score_term = 0.0;
    double init_kl = 0.0;
    double init_bound = 0.0;
    double exact_kl = 0.0;
    double exact_kl_reverse = 0.0;
    std::vector<double> t2_split;
    nlohmann::json schedule;

    // exact_kl <= discretization_integral + init_kl (exact scores, no constants).
    bool chain_holds() const { return exact_kl <= discretization_integral + init_kl; }
    nlohmann::json to_json() const;
    // Long format, one row per interval: n, t_n, t_{n+1}, contribution.
    void write_interval_csv(const std::string& path) const;
};

BoundReport bound_report(const Schedule& schedule, int k, int d, double score_budget = 0.0,
                         SamplerKind kind = SamplerKind::ddpm);

struct MinStepsResult {
    int steps = 0;
    bool saturated = false;
    double objective = 0.0;  // exact_kl + init_kl at the returned N
};

// Smallest even N with exact_kl(two-phase(T, delta, N)) + init_kl <= eps_sq.
// Brackets on the grid {2^j, 1.5 * 2^j}, then bisects over even N.
MinStepsResult find_min_steps(int k, int d, double eps_sq, double horizon, double early_stop,
                              int max_steps = 1 << 20);

}  // namespace ddpmlab
