#pragma once

// Reverse-time DDPM sampler
//   Y_{n+1} = (1/sqrt(a_n)) (Y_n + (1 - a_n) s_hat_{T-t_n}(Y_n)) + noise_std_n Z_n,
// which is exactly the one-interval solution of the adaptively discretized
// reverse SDE (see integrate_interval in noise.hpp), plus two first-order-equal
// coefficient perturbations used to show that the parameterization matters.

#include <cstdint>
#include <optional>
#include <string>

#include "ddpmlab/noise.hpp"
#include "ddpmlab/sample_batch.hpp"
#include "ddpmlab/targets.hpp"

namespace ddpmlab {

enum class SamplerKind {
    ddpm,       // coefficients exactly as in the DDPM update
    alt_noise,  // noise_std^2 replaced by 1 - a_n
    alt_drift,  // drift_scale 1/sqrt(a_n) replaced by 2 - sqrt(a_n)
};

std::string to_string(SamplerKind kind);
SamplerKind parse_sampler_kind(const std::string& name);

// Coefficients a variant applies, derived from the DDPM ones.
StepCoefficients variant_coefficients(SamplerKind kind, const StepCoefficients& ddpm);

// drift_scale * y + score_weight * s_hat + noise_std * z. Rejects non-finite input.
Vector ddpm_step(const Vector& y, const Vector& s_hat, const StepCoefficients& coeffs, const Vector& z);

struct ChainOptions {
    SamplerKind kind = SamplerKind::ddpm;
    // Stop after this many steps (default: all N) and return Y_{t_stop}.
    std::optional<int> stop_step;
};

// Y_{t_0} ~ N(0, I_d), then the reverse steps. Randomness comes only from the
// substream (seed, chain).
Vector run_chain(const ScoreOracle& oracle, const Schedule& schedule, std::uint64_t seed, std::uint64_t chain = 0,
                 const ChainOptions& options = {});

// n independent chains 0..n-1; identical output for any worker count.
SampleBatch run_batch(const ScoreOracle& oracle, const Schedule& schedule, int n, std::uint64_t seed, int workers = 1,
                      const ChainOptions& options = {});

// FNV-1a hash of everything that determines the oracle's outputs.
std::uint64_t config_hash(const ScoreOracle& oracle);

// Schedule, variant, batch metadata and oracle description / hash.
nlohmann::json batch_sidecar(const SampleBatch& batch, const Schedule& schedule, SamplerKind kind,
                             const ScoreOracle& oracle);

// Writes <prefix>.csv (one row per sample) and <prefix>.json (schedule, variant,
// seed, oracle description and hash).
void write_batch(const SampleBatch& batch, const std::string& prefix, const Schedule& schedule, SamplerKind kind,
                 const ScoreOracle& oracle);

}  // namespace ddpmlab
