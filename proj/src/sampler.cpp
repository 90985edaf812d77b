#include "ddpmlab/sampler.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "ddpmlab/error.hpp"
#include "ddpmlab/parallel.hpp"
#include "ddpmlab/rng.hpp"

namespace ddpmlab {

namespace {

Vector normal_vector(Rng& rng, std::normal_distribution<double>& normal, Eigen::Index d) {
    Vector z(d);
    for (Eigen::Index i = 0; i < d; ++i) z[i] = normal(rng);
    return z;
}

class Fnv1a {
public:
    void bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            state_ ^= p[i];
            state_ *= 0x100000001b3ull;
        }
    }
    void value(double v) { bytes(&v, sizeof v); }
    void value(std::int64_t v) { bytes(&v, sizeof v); }
    void text(const std::string& s) { bytes(s.data(), s.size()); }
    std::uint64_t digest() const { return state_; }

private:
    std::uint64_t state_ = 0xcbf29ce484222325ull;
};

}  // namespace

std::string to_string(SamplerKind kind) {
    switch (kind) {
        case SamplerKind::ddpm: return "ddpm";
        case SamplerKind::alt_noise: return "alt-noise";
        case SamplerKind::alt_drift: return "alt-drift";
    }
    return "unknown";
}

SamplerKind parse_sampler_kind(const std::string& name) {
    if (name == "ddpm") return SamplerKind::ddpm;
    if (name == "alt-noise") return SamplerKind::alt_noise;
    if (name == "alt-drift") return SamplerKind::alt_drift;
    throw ConfigError("unknown sampler variant \"" + name + "\" (expected ddpm, alt-noise, alt-drift)");
}

StepCoefficients variant_coefficients(SamplerKind kind, const StepCoefficients& ddpm) {
    StepCoefficients c = ddpm;
    switch (kind) {
        case SamplerKind::ddpm: break;
        case SamplerKind::alt_noise: c.noise_std = std::sqrt(-std::expm1(std::log(ddpm.alpha))); break;
        case SamplerKind::alt_drift: c.drift_scale = 2.0 - std::sqrt(ddpm.alpha); break;
    }
    return c;
}

Vector ddpm_step(const Vector& y, const Vector& s_hat, const StepCoefficients& coeffs, const Vector& z) {
    if (y.size() != s_hat.size() || y.size() != z.size())
        throw ConfigError("ddpm_step: y, s_hat and z must have the same dimension");
    if (!y.allFinite() || !s_hat.allFinite() || !z.allFinite())
        throw NumericError("ddpm_step: non-finite input");
    return coeffs.drift_scale * y + coeffs.score_weight * s_hat + coeffs.noise_std * z;
}

Vector run_chain(const ScoreOracle& oracle, const Schedule& schedule, std::uint64_t seed, std::uint64_t chain,
                 const ChainOptions& options) {
    const int steps = options.stop_step.value_or(schedule.steps());
    if (steps < 0 || steps > schedule.steps()) throw ConfigError("run_chain: stop step outside [0, N]");
    if (const auto& p = oracle.perturbation(); p && static_cast<int>(p->magnitudes.size()) != schedule.steps())
        throw ConfigError("run_chain: perturbed oracle was built for a different schedule");

    const Eigen::Index d = oracle.target().dim();
    Rng rng = make_stream(seed, StreamTag::chain, chain);
    std::normal_distribution<double> normal;
    Vector y = normal_vector(rng, normal, d);
    for (int n = 0; n < steps; ++n) {
        const StepCoefficients coeffs = variant_coefficients(options.kind, step_coeffs(schedule, n));
        Vector s_hat;
        try {
            s_hat = oracle.score(coeffs.forward_time, y, n);
        } catch (const std::exception& e) {
            throw ChainError(std::string("score evaluation failed: ") + e.what(), static_cast<long>(chain), n);
        }
        const Vector z = normal_vector(rng, normal, d);
        if (!s_hat.allFinite()) throw ChainError("non-finite score", static_cast<long>(chain), n);
        y = ddpm_step(y, s_hat, coeffs, z);
        if (!y.allFinite()) throw ChainError("non-finite iterate", static_cast<long>(chain), n);
    }
    return y;
}

SampleBatch run_batch(const ScoreOracle& oracle, const Schedule& schedule, int n, std::uint64_t seed, int workers,
                      const ChainOptions& options) {
    if (n < 1) throw ConfigError("run_batch: need n >= 1");
    const int d = oracle.target().dim();
    RowMatrix out(n, d);
    parallel_for(static_cast<std::size_t>(n), workers, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i)
            out.row(static_cast<Eigen::Index>(i)) = run_chain(oracle, schedule, seed, i, options).transpose();
    });
    const int stop = options.stop_step.value_or(schedule.steps());
    return SampleBatch(std::move(out), schedule.forward_time(stop), stop, SeedProvenance{seed, 0, "chain"});
}

std::uint64_t config_hash(const ScoreOracle& oracle) {
    Fnv1a h;
    const auto& target = oracle.target();
    h.text(target.describe());
    if (const auto* c = target.as_point_cloud()) {
        h.bytes(c->points.data(), sizeof(double) * static_cast<std::size_t>(c->points.size()));
        h.bytes(c->weights.data(), sizeof(double) * static_cast<std::size_t>(c->weights.size()));
    } else {
        const auto* g = target.as_subspace_gaussian();
        h.bytes(g->basis.data(), sizeof(double) * static_cast<std::size_t>(g->basis.size()));
        h.value(g->scale);
    }
    if (const auto& p = oracle.perturbation()) {
        h.value(static_cast<std::int64_t>(p->direction));
        for (double m : p->magnitudes) h.value(m);
        h.value(static_cast<std::int64_t>(p->seed));
    }
    return h.digest();
}

nlohmann::json batch_sidecar(const SampleBatch& batch, const Schedule& schedule, SamplerKind kind,
                             const ScoreOracle& oracle) {
    std::ostringstream hash;
    hash << std::hex << std::setw(16) << std::setfill('0') << config_hash(oracle);
    nlohmann::json sidecar{{"batch", batch.metadata()},
                           {"schedule", to_json(schedule)},
                           {"variant", to_string(kind)},
                           {"oracle", {{"target", oracle.target().describe()},
                                       {"exact", oracle.is_exact()},
                                       {"hash", hash.str()}}}};
    if (const auto& p = oracle.perturbation()) sidecar["oracle"]["declared_budget"] = p->declared_budget();
    return sidecar;
}

void write_batch(const SampleBatch& batch, const std::string& prefix, const Schedule& schedule, SamplerKind kind,
                 const ScoreOracle& oracle) {
    batch.write_csv(prefix + ".csv");
    std::ofstream out(prefix + ".json");
    if (!out) throw std::runtime_error("cannot open " + prefix + ".json for writing");
    out << batch_sidecar(batch, schedule, kind, oracle).dump(2) << '\n';
}

}  // namespace ddpmlab
