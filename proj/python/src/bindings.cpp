#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <json.hpp>

#include "ddpmlab/diagnostics.hpp"
#include "ddpmlab/error.hpp"
#include "ddpmlab/gaussian_exact.hpp"
#include "ddpmlab/harness.hpp"
#include "ddpmlab/noise.hpp"
#include "ddpmlab/sampler.hpp"
#include "ddpmlab/targets.hpp"

namespace py = pybind11;
using namespace ddpmlab;
using nlohmann::json;

namespace {

// Round-trips through the json module; the payloads here are small.
py::object to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

json from_py(const py::handle& obj) {
    return json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

py::dict spectral_dict(const SpectralState& s) {
    py::dict out;
    out["v_par"] = s.v_par;
    out["v_perp"] = s.v_perp;
    out["k"] = s.k;
    out["d"] = s.d;
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "DDPM sampler lab with closed-form score oracles";

    auto base = py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
    py::register_exception<ChainError>(m, "ChainError", base.ptr());
    py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<ExperimentError>(m, "ExperimentError", PyExc_RuntimeError);

    // noise
    m.def("sigma", &sigma, py::arg("t"));
    m.def("sigma_sq", &sigma_sq, py::arg("t"));
    m.def("eta", &eta, py::arg("t"));

    py::class_<Schedule>(m, "Schedule")
        .def_static("two_phase", &make_two_phase, py::arg("horizon"), py::arg("early_stop"), py::arg("steps"))
        .def_static("uniform", &make_uniform, py::arg("horizon"), py::arg("early_stop"), py::arg("steps"))
        .def_static("from_times", &Schedule::from_times, py::arg("times"))
        .def_property_readonly("horizon", &Schedule::horizon)
        .def_property_readonly("early_stop", &Schedule::early_stop)
        .def_property_readonly("steps", &Schedule::steps)
        .def_property_readonly("times",
                               [](const Schedule& s) { return std::vector<double>(s.times().begin(), s.times().end()); })
        .def_property_readonly("kappa", &Schedule::kappa)
        .def("kappa_with_final_interval", &Schedule::kappa_with_final_interval)
        .def("satisfies_theorem_hypotheses", &Schedule::satisfies_theorem_hypotheses)
        .def("alpha", &Schedule::alpha, py::arg("n"))
        .def("alpha_bar", &Schedule::alpha_bar, py::arg("n"))
        .def("to_json", [](const Schedule& s) { return to_py(to_json(s)); })
        .def("__repr__", [](const Schedule& s) {
            return "<Schedule N=" + std::to_string(s.steps()) + " T=" + std::to_string(s.horizon()) +
                   " delta=" + std::to_string(s.early_stop()) + ">";
        });

    py::class_<StepCoefficients>(m, "StepCoefficients")
        .def_readonly("drift_scale", &StepCoefficients::drift_scale)
        .def_readonly("score_weight", &StepCoefficients::score_weight)
        .def_readonly("noise_std", &StepCoefficients::noise_std)
        .def_readonly("forward_time", &StepCoefficients::forward_time)
        .def_readonly("sigma_sq", &StepCoefficients::sigma_sq)
        .def_readonly("alpha", &StepCoefficients::alpha)
        .def_readonly("alpha_bar", &StepCoefficients::alpha_bar)
        .def_readonly("alpha_bar_next", &StepCoefficients::alpha_bar_next);
    m.def("step_coeffs", &step_coeffs, py::arg("schedule"), py::arg("n"));
    m.def("coefficients_for", &coefficients_for, py::arg("forward_time"), py::arg("interval"));

    py::class_<IntegratedStep>(m, "IntegratedStep")
        .def_readonly("state_weight", &IntegratedStep::state_weight)
        .def_readonly("score_weight", &IntegratedStep::score_weight)
        .def_readonly("noise_std", &IntegratedStep::noise_std)
        .def_readonly("weight_integral", &IntegratedStep::weight_integral);
    m.def("integrate_interval", &integrate_interval, py::arg("forward_time"), py::arg("interval"));

    // targets
    py::class_<TargetDistribution>(m, "Target")
        .def_static("point_cloud",
                    [](const RowMatrix& points, std::optional<Vector> weights, int intrinsic_dim) {
                        return TargetDistribution::point_cloud(points, weights.value_or(Vector{}), intrinsic_dim);
                    },
                    py::arg("points"), py::arg("weights") = py::none(), py::arg("intrinsic_dim") = 0)
        .def_static("subspace_gaussian", &TargetDistribution::subspace_gaussian, py::arg("basis"),
                    py::arg("scale") = 1.0)
        .def_static("axis_subspace_gaussian", &TargetDistribution::axis_subspace_gaussian, py::arg("dim"),
                    py::arg("k"), py::arg("scale") = 1.0)
        .def_static("point_mass", &TargetDistribution::point_mass, py::arg("dim"))
        .def_static("builtin",
                    [](const std::string& name, int dim, int intrinsic_dim, int count, double radius,
                       std::uint64_t seed) {
                        GeneratorOptions o;
                        o.dim = dim;
                        o.intrinsic_dim = intrinsic_dim;
                        o.count = count;
                        o.radius = radius;
                        o.seed = seed;
                        return make_builtin_target(name, o);
                    },
                    py::arg("name"), py::arg("dim") = 16, py::arg("intrinsic_dim") = 2, py::arg("count") = 4096,
                    py::arg("radius") = 1.0, py::arg("seed") = 0)
        .def_property_readonly("dim", &TargetDistribution::dim)
        .def_property_readonly("intrinsic_dim", &TargetDistribution::intrinsic_dim)
        .def_property_readonly("second_moment", &TargetDistribution::second_moment)
        .def("__repr__", &TargetDistribution::describe);
    m.def("builtin_target_names", &builtin_target_names);

    m.def("exact_score", &exact_score, py::arg("target"), py::arg("t"), py::arg("x"));
    m.def("posterior_mean", py::overload_cast<const TargetDistribution&, double, const Vector&>(&posterior_mean),
          py::arg("target"), py::arg("t"), py::arg("x"));
    m.def("posterior_covariance", &posterior_covariance, py::arg("target"), py::arg("t"), py::arg("x"));
    m.def("posterior_cov_trace",
          py::overload_cast<const TargetDistribution&, double, const Vector&>(&posterior_cov_trace),
          py::arg("target"), py::arg("t"), py::arg("x"));
    m.def("forward_sample",
          [](const TargetDistribution& target, double t, int n, std::uint64_t seed, int workers) {
              return forward_sample(target, t, n, seed, workers).data();
          },
          py::arg("target"), py::arg("t"), py::arg("n"), py::arg("seed"), py::arg("workers") = 1);

    py::enum_<PerturbationDirection>(m, "PerturbationDirection")
        .value("radial", PerturbationDirection::radial)
        .value("fixed_random", PerturbationDirection::fixed_random);

    py::class_<ScoreOracle>(m, "ScoreOracle")
        .def(py::init<TargetDistribution>(), py::arg("target"))
        .def_property_readonly("target", &ScoreOracle::target)
        .def_property_readonly("is_exact", &ScoreOracle::is_exact)
        .def("score", py::overload_cast<double, const Vector&>(&ScoreOracle::score, py::const_), py::arg("t"),
             py::arg("x"))
        .def("score_at_step", py::overload_cast<double, const Vector&, int>(&ScoreOracle::score, py::const_),
             py::arg("t"), py::arg("x"), py::arg("step"))
        .def("declared_budget",
             [](const ScoreOracle& o) { return o.perturbation() ? o.perturbation()->declared_budget() : 0.0; })
        .def("perturbed", &perturb, py::arg("budget"), py::arg("schedule"),
             py::arg("direction") = PerturbationDirection::radial, py::arg("seed") = 0);
    m.def("config_hash", &config_hash, py::arg("oracle"));

    // sampler
    py::enum_<SamplerKind>(m, "SamplerKind")
        .value("ddpm", SamplerKind::ddpm)
        .value("alt_noise", SamplerKind::alt_noise)
        .value("alt_drift", SamplerKind::alt_drift);
    m.def("parse_sampler_kind", &parse_sampler_kind, py::arg("name"));
    m.def("variant_coefficients", &variant_coefficients, py::arg("kind"), py::arg("coeffs"));
    m.def("ddpm_step", &ddpm_step, py::arg("y"), py::arg("s_hat"), py::arg("coeffs"), py::arg("z"));

    m.def("run_chain",
          [](const ScoreOracle& oracle, const Schedule& schedule, std::uint64_t seed, std::uint64_t chain,
             SamplerKind kind, std::optional<int> stop_step) {
              ChainOptions opt;
              opt.kind = kind;
              opt.stop_step = stop_step;
              return run_chain(oracle, schedule, seed, chain, opt);
          },
          py::arg("oracle"), py::arg("schedule"), py::arg("seed"), py::arg("chain") = 0,
          py::arg("kind") = SamplerKind::ddpm, py::arg("stop_step") = py::none());
    m.def("run_batch",
          [](const ScoreOracle& oracle, const Schedule& schedule, int n, std::uint64_t seed, int workers,
             SamplerKind kind, std::optional<int> stop_step) {
              ChainOptions opt;
              opt.kind = kind;
              opt.stop_step = stop_step;
              SampleBatch batch = [&] {
                  py::gil_scoped_release release;
                  return run_batch(oracle, schedule, n, seed, workers, opt);
              }();
              return batch.data();
          },
          py::arg("oracle"), py::arg("schedule"), py::arg("n"), py::arg("seed"), py::arg("workers") = 1,
          py::arg("kind") = SamplerKind::ddpm, py::arg("stop_step") = py::none(),
          "Samples from n independent chains, one per row.");

    // gaussian_exact
    m.def("propagate_covariance",
          [](const Schedule& schedule, int k, int d, SamplerKind kind, double bias_budget, bool forward_marginal,
             std::optional<int> stop_step) {
              LinearScoreBias bias;
              PropagationOptions opt;
              opt.kind = kind;
              opt.stop_step = stop_step;
              opt.init = forward_marginal ? Initialization::forward_marginal : Initialization::standard_normal;
              if (bias_budget > 0.0) {
                  bias = linear_score_bias(schedule, k, d, bias_budget);
                  opt.bias = &bias;
              }
              return spectral_dict(propagate_covariance(schedule, k, d, opt));
          },
          py::arg("schedule"), py::arg("k"), py::arg("d"), py::arg("kind") = SamplerKind::ddpm,
          py::arg("bias_budget") = 0.0, py::arg("forward_marginal") = false, py::arg("stop_step") = py::none());
    m.def("exact_kl",
          [](const Schedule& schedule, int k, int d, SamplerKind kind) {
              const SpectralState s = propagate_covariance(schedule, k, d, {.kind = kind});
              return exact_kl(s, schedule.early_stop());
          },
          py::arg("schedule"), py::arg("k"), py::arg("d"), py::arg("kind") = SamplerKind::ddpm,
          "KL(q_delta || output law) for the subspace Gaussian target.");
    m.def("kl_g", &kl_g, py::arg("r"));
    m.def("discretization_integral",
          [](const Schedule& schedule, int k, double rel_tol) {
              const auto r = discretization_integral(schedule, k, rel_tol);
              return py::make_tuple(r.total, r.per_interval);
          },
          py::arg("schedule"), py::arg("k"), py::arg("rel_tol") = 1e-8);
    m.def("bound_report",
          [](const Schedule& schedule, int k, int d, double score_budget, SamplerKind kind) {
              return to_py(bound_report(schedule, k, d, score_budget, kind).to_json());
          },
          py::arg("schedule"), py::arg("k"), py::arg("d"), py::arg("score_budget") = 0.0,
          py::arg("kind") = SamplerKind::ddpm);
    m.def("find_min_steps",
          [](int k, int d, double eps_sq, double horizon, double early_stop, int max_steps) {
              const auto r = find_min_steps(k, d, eps_sq, horizon, early_stop, max_steps);
              py::dict out;
              out["steps"] = r.steps;
              out["saturated"] = r.saturated;
              out["objective"] = r.objective;
              return out;
          },
          py::arg("k"), py::arg("d"), py::arg("eps_sq"), py::arg("horizon"), py::arg("early_stop"),
          py::arg("max_steps") = 1 << 20);

    // diagnostics
    py::class_<Estimate>(m, "Estimate")
        .def_readonly("value", &Estimate::value)
        .def_readonly("std_error", &Estimate::std_error)
        .def_readonly("samples", &Estimate::samples);
    m.def("mc_mean_trace", &mc_mean_trace, py::arg("target"), py::arg("u"), py::arg("n"), py::arg("seed"),
          py::arg("workers") = 1, py::call_guard<py::gil_scoped_release>());
    m.def("trace_curve",
          [](const TargetDistribution& target, const std::vector<double>& grid, int n, std::uint64_t seed,
             int workers) {
              TraceCurve c;
              {
                  py::gil_scoped_release release;
                  c = trace_curve(target, grid, n, seed, workers);
              }
              py::dict out;
              out["u"] = c.u;
              out["estimate"] = c.estimate;
              out["std_error"] = c.std_error;
              out["seeds"] = c.seeds;
              return out;
          },
          py::arg("target"), py::arg("grid"), py::arg("n"), py::arg("seed"), py::arg("workers") = 1);
    m.def("localization_residual",
          [](const TargetDistribution& target, double u, double h, int n, std::uint64_t seed, int workers) {
              LocalizationResult r;
              {
                  py::gil_scoped_release release;
                  r = localization_residual(target, u, h, n, seed, workers);
              }
              py::dict out;
              out["frobenius"] = r.frobenius;
              out["trace_slope"] = r.trace_slope;
              out["scale"] = r.scale;
              out["residual"] = r.residual();
              out["combined_error"] = r.combined_error();
              return out;
          },
          py::arg("target"), py::arg("u"), py::arg("h"), py::arg("n"), py::arg("seed"), py::arg("workers") = 1);
    m.def("greedy_cover", &greedy_cover, py::arg("points"), py::arg("eps"));
    m.def("cover_sweep", &cover_sweep, py::arg("points"), py::arg("eps"));
    m.def("energy_distance", py::overload_cast<const RowMatrix&, const RowMatrix&, int>(&energy_distance),
          py::arg("a"), py::arg("b"), py::arg("workers") = 1, py::call_guard<py::gil_scoped_release>());

    // harness
    m.def("experiment_names", &experiment_names);
    m.def("run_experiment",
          [](const py::dict& config) {
              const ExperimentSpec spec = ExperimentSpec::from_json(from_py(config));
              ExperimentRecord record;
              {
                  py::gil_scoped_release release;
                  record = run(spec);
              }
              return to_py(record.to_json());
          },
          py::arg("config"), "Runs one experiment; returns its record as a dict.");
    m.def("build_id", &build_id);
}
