#include "ddpmlab/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>

#include "ddpmlab/diagnostics.hpp"
#include "ddpmlab/error.hpp"
#include "ddpmlab/gaussian_exact.hpp"
#include "ddpmlab/parallel.hpp"
#include "ddpmlab/rng.hpp"
#include "ddpmlab/sampler.hpp"

#ifndef DDPMLAB_BUILD_ID
#define DDPMLAB_BUILD_ID "unknown"
#endif

namespace ddpmlab {

namespace {

using json = nlohmann::json;

const std::vector<std::string> kExperiments = {"ksweep",           "nsweep",    "schedule-compare",
                                               "variant-compare",  "score-error-sweep", "bound-check",
                                               "trace-curves",     "covering"};

template <class T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.is_object() || !j.contains(key) || j.at(key).is_null()) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config field \"") + key + "\": " + e.what());
    }
}

std::string format_number(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

std::string format_cell(const Cell& c) {
    if (const auto* d = std::get_if<double>(&c)) return format_number(*d);
    if (const auto* i = std::get_if<long long>(&c)) return std::to_string(*i);
    const std::string& s = std::get<std::string>(c);
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string quoted = "\"";
    for (char ch : s) {
        if (ch == '"') quoted += '"';
        quoted += ch;
    }
    return quoted + "\"";
}

json cell_json(const Cell& c) {
    if (const auto* d = std::get_if<double>(&c)) return std::isfinite(*d) ? json(*d) : json(format_number(*d));
    if (const auto* i = std::get_if<long long>(&c)) return *i;
    return std::get<std::string>(c);
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string hex16(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

// Deduplicated collection of the schedules an experiment used.
class ScheduleBook {
public:
    long long add(const std::string& family, const Schedule& s) {
        std::ostringstream key;
        key << family << '|' << std::setprecision(17) << s.horizon() << '|' << s.early_stop() << '|' << s.steps();
        auto [it, inserted] = ids_.emplace(key.str(), static_cast<long long>(entries_.size()));
        if (inserted) {
            json e = to_json(s);
            e["id"] = it->second;
            e["family"] = family;
            e["kappa"] = s.kappa();
            e["kappa_with_final_interval"] = s.kappa_with_final_interval();
            const bool ok = s.satisfies_theorem_hypotheses();
            e["theorem_hypothesis_violated"] = !ok;
            if (!ok) {
                std::ostringstream w;
                w << "schedule " << it->second << " (" << family << ", T = " << s.horizon()
                  << ", delta = " << s.early_stop() << ", N = " << s.steps() << "): kappa = " << s.kappa()
                  << " outside the theorem hypotheses (T > 1, 0 < delta < 1, kappa <= 0.9)";
                warnings_.push_back(w.str());
            }
            entries_.push_back(std::move(e));
        }
        return it->second;
    }

    void flush_into(ExperimentRecord& r) const {
        r.schedules = json::array();
        for (const auto& e : entries_) r.schedules.push_back(e);
        r.warnings.insert(r.warnings.end(), warnings_.begin(), warnings_.end());
        r.hypothesis_violated = r.hypothesis_violated || !warnings_.empty();
    }

private:
    std::map<std::string, long long> ids_;
    std::vector<json> entries_;
    std::vector<std::string> warnings_;
};

Schedule make_schedule(const std::string& family, double horizon, double early_stop, int steps) {
    if (family == "two-phase") return make_two_phase(horizon, early_stop, steps);
    if (family == "uniform") return make_uniform(horizon, early_stop, steps);
    throw ConfigError("unknown schedule family \"" + family + "\" (expected two-phase or uniform)");
}

// Shared view of the spec while an experiment runs.
struct Context {
    const ExperimentSpec& spec;
    ExperimentRecord& record;
    ScheduleBook book;

    int workers() const { return spec.workers; }
    std::uint64_t seed(std::uint64_t purpose) const { return derive_seed(spec.seed, purpose); }
    template <class T>
    T param(const char* key, T fallback) const { return get_or<T>(spec.params, key, fallback); }
    double horizon(double fallback) const { return get_or<double>(spec.schedule, "T", fallback); }
    double early_stop(double fallback) const { return get_or<double>(spec.schedule, "delta", fallback); }
    std::string family(const std::string& fallback) const {
        return get_or<std::string>(spec.schedule, "family", fallback);
    }
    void verdict(const std::string& name, bool passed, json detail) {
        record.verdicts.push_back({name, passed, std::move(detail)});
    }
};

void require_dims(int k, int d) {
    if (d < 1 || k < 0 || k > d) throw ConfigError("need d >= 1 and 0 <= k <= d");
}

// ---------------------------------------------------------------------------
// Closed-form experiments

void run_ksweep(Context& c) {
    const int d = c.param("d", 64);
    const auto ks = c.param("ks", std::vector<int>{2, 4, 8, 16});
    const double eps_sq = c.param("eps_sq", 0.01);
    const double c_t = get_or<double>(c.spec.schedule, "c_T", 2.0);
    const double horizon = c.horizon(c_t * std::log(d / std::sqrt(eps_sq)));
    const double early_stop = c.early_stop(0.01);
    const int max_steps = c.param("max_steps", 1 << 20);
    const auto range = c.param("slope_range", std::vector<double>{0.7, 1.3});
    for (int k : ks) require_dims(k, d);

    std::vector<MinStepsResult> found(ks.size());
    parallel_for(ks.size(), c.workers(), [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) found[i] = find_min_steps(ks[i], d, eps_sq, horizon, early_stop, max_steps);
    });

    c.record.columns = {"k", "d", "eps_sq", "T", "delta", "N_star", "saturated", "objective", "schedule_id"};
    std::vector<double> xs, ys;
    bool any_saturated = false;
    for (std::size_t i = 0; i < ks.size(); ++i) {
        const long long id = c.book.add("two-phase", make_two_phase(horizon, early_stop, found[i].steps & ~1));
        c.record.rows.push_back({static_cast<long long>(ks[i]), static_cast<long long>(d), eps_sq, horizon,
                                 early_stop, static_cast<long long>(found[i].steps),
                                 static_cast<long long>(found[i].saturated), found[i].objective, id});
        xs.push_back(ks[i]);
        ys.push_back(found[i].steps);
        any_saturated = any_saturated || found[i].saturated;
    }
    if (ks.size() >= 2) {
        const double slope = fit_loglog_slope(xs, ys);
        c.verdict("loglog_slope", !any_saturated && slope >= range.at(0) && slope <= range.at(1),
                  {{"slope", slope}, {"range", range}, {"saturated", any_saturated}});
    }
}

void run_nsweep(Context& c) {
    const int k = c.param("k", 2);
    const int d = c.param("d", 64);
    require_dims(k, d);
    const double horizon = c.horizon(6.0);
    const double early_stop = c.early_stop(0.01);
    const std::string family = c.family("two-phase");
    const auto ns = c.param("Ns", std::vector<int>{32, 64, 128, 256, 512, 1024, 2048, 4096});
    const double init_share_max = c.param("init_share_max", 0.01);
    const auto range = c.param("factor_range", std::vector<double>{1.6, 2.4});

    struct Row {
        double kappa, kl, kl_rev, integral, init;
    };
    std::vector<Row> out(ns.size());
    std::vector<Schedule> schedules;
    for (int n : ns) schedules.push_back(make_schedule(family, horizon, early_stop, n));
    const double init = init_terms(horizon, d, k).exact;
    parallel_for(ns.size(), c.workers(), [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            const auto state = propagate_covariance(schedules[i], k, d);
            out[i] = {schedules[i].kappa(), exact_kl(state, early_stop), exact_kl_reverse(state, early_stop),
                      discretization_integral(schedules[i], k).total, init};
        }
    });

    c.record.columns = {"N",           "kappa",    "exact_kl", "exact_kl_reverse", "discretization_integral",
                        "init_kl",     "init_share", "kl_ratio", "integral_ratio",  "schedule_id"};
    json kl_factors = json::array(), integral_factors = json::array();
    bool kl_ok = true, integral_ok = true;
    int pairs = 0;
    for (std::size_t i = 0; i < ns.size(); ++i) {
        const Row& r = out[i];
        const double share = r.init / (r.kl + r.init);
        Cell kl_ratio = std::string(), integral_ratio = std::string();
        if (i > 0) {
            kl_ratio = out[i - 1].kl / r.kl;
            integral_ratio = out[i - 1].integral / r.integral;
            const double prev_share = out[i - 1].init / (out[i - 1].kl + out[i - 1].init);
            if (ns[i] == 2 * ns[i - 1] && share <= init_share_max && prev_share <= init_share_max) {
                ++pairs;
                const double fk = std::get<double>(kl_ratio), fi = std::get<double>(integral_ratio);
                kl_factors.push_back({{"N", ns[i - 1]}, {"factor", fk}});
                integral_factors.push_back({{"N", ns[i - 1]}, {"factor", fi}});
                kl_ok = kl_ok && fk >= range.at(0) && fk <= range.at(1);
                integral_ok = integral_ok && fi >= range.at(0) && fi <= range.at(1);
            }
        }
        const long long id = c.book.add(family, schedules[i]);
        c.record.rows.push_back({static_cast<long long>(ns[i]), r.kappa, r.kl, r.kl_rev, r.integral, r.init, share,
                                 kl_ratio, integral_ratio, id});
    }
    if (pairs > 0) {
        c.verdict("kl_halving", kl_ok, {{"range", range}, {"factors", kl_factors}});
        c.verdict("integral_halving", integral_ok, {{"range", range}, {"factors", integral_factors}});
    }
}

void run_schedule_compare(Context& c) {
    const int k = c.param("k", 2);
    const int d = c.param("d", 64);
    require_dims(k, d);
    const double horizon = c.horizon(6.0);
    const double early_stop = c.early_stop(0.01);
    const auto ns = c.param("Ns", std::vector<int>{16, 32, 64, 128, 256, 512, 1024});
    const auto families = c.param("families", std::vector<std::string>{"two-phase", "uniform"});

    struct Item {
        int n;
        std::string family;
        std::optional<Schedule> schedule;
        double kl = 0.0, integral = 0.0;
    };
    std::vector<Item> items;
    for (int n : ns)
        for (const auto& f : families) items.push_back({n, f, make_schedule(f, horizon, early_stop, n)});
    parallel_for(items.size(), c.workers(), [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            items[i].kl = exact_kl(propagate_covariance(*items[i].schedule, k, d), early_stop);
            items[i].integral = discretization_integral(*items[i].schedule, k).total;
        }
    });
    c.record.columns = {"N", "schedule_family", "kappa", "exact_kl", "discretization_integral", "schedule_id"};
    for (const auto& it : items) {
        const long long id = c.book.add(it.family, *it.schedule);
        c.record.rows.push_back({static_cast<long long>(it.n), it.family, it.schedule->kappa(), it.kl, it.integral, id});
    }
}

// Mean sample variance over coordinates [first, last) of the batch.
Estimate coordinate_variance(const RowMatrix& data, int first, int last) {
    Estimate e;
    if (last <= first) return e;
    const double n = static_cast<double>(data.rows());
    std::vector<double> per;
    for (int j = first; j < last; ++j) {
        const auto col = data.col(j);
        const double mean = col.mean();
        per.push_back((col.array() - mean).square().sum() / (n - 1.0));
    }
    double sum = 0.0;
    for (double v : per) sum += v;
    e.value = sum / static_cast<double>(per.size());
    // Coordinates are independent Gaussians: var of a sample variance is 2 sigma^4 / (n - 1).
    e.std_error = e.value * std::sqrt(2.0 / ((n - 1.0) * static_cast<double>(per.size())));
    e.samples = static_cast<int>(data.rows());
    return e;
}

void run_variant_compare(Context& c) {
    const int k = c.param("k", 2);
    const int d = c.param("d", 64);
    require_dims(k, d);
    const double horizon = c.horizon(6.0);
    const double early_stop = c.early_stop(0.01);
    const std::string family = c.family("two-phase");
    const auto ns = c.param("Ns", std::vector<int>{32});
    const auto names = c.param("variants", std::vector<std::string>{"ddpm", "alt-noise", "alt-drift"});
    const double min_ratio = c.param("min_ratio", 2.0);
    const int mc_samples = c.param("mc_samples", 0);

    std::vector<SamplerKind> kinds;
    for (const auto& v : names) kinds.push_back(parse_sampler_kind(v));
    const auto oracle = ScoreOracle(TargetDistribution::axis_subspace_gaussian(d, k));

    c.record.columns = {"N", "variant", "exact_kl", "ratio_to_ddpm", "v_par", "v_perp"};
    if (mc_samples > 0)
        c.record.columns.insert(c.record.columns.end(),
                                {"mc_var_par", "mc_var_par_stderr", "mc_var_perp", "mc_var_perp_stderr"});
    c.record.columns.push_back("schedule_id");

    bool degrade = true;
    json ratios = json::array();
    for (int n : ns) {
        const Schedule schedule = make_schedule(family, horizon, early_stop, n);
        const long long id = c.book.add(family, schedule);
        PropagationOptions base_opts;
        const double base = exact_kl(propagate_covariance(schedule, k, d, base_opts), early_stop);
        for (std::size_t v = 0; v < kinds.size(); ++v) {
            PropagationOptions opts;
            opts.kind = kinds[v];
            const auto state = propagate_covariance(schedule, k, d, opts);
            const double kl = exact_kl(state, early_stop);
            const double ratio = kl / base;
            std::vector<Cell> row{static_cast<long long>(n), names[v], kl, ratio, state.v_par, state.v_perp};
            if (mc_samples > 0) {
                ChainOptions chain;
                chain.kind = kinds[v];
                const auto batch = run_batch(oracle, schedule, mc_samples, c.seed(100 + n * 8 + v), c.workers(), chain);
                const auto par = coordinate_variance(batch.data(), 0, k);
                const auto perp = coordinate_variance(batch.data(), k, d);
                row.insert(row.end(), {par.value, par.std_error, perp.value, perp.std_error});
            }
            row.push_back(id);
            c.record.rows.push_back(std::move(row));
            if (kinds[v] != SamplerKind::ddpm) {
                ratios.push_back({{"N", n}, {"variant", names[v]}, {"ratio", ratio}});
                degrade = degrade && ratio >= min_ratio;
            }
        }
    }
    if (!ratios.empty()) c.verdict("alternatives_degrade", degrade, {{"min_ratio", min_ratio}, {"ratios", ratios}});
}

void run_score_error_sweep(Context& c) {
    const auto budgets = c.param("budgets", std::vector<double>{1e-4, 1e-3, 1e-2});
    const auto ds = c.param("ds", std::vector<int>{8, 64});
    const auto ks = c.param("ks", std::vector<int>{1, 2, 4});
    const auto ns = c.param("Ns", std::vector<int>{16, 64, 256, 1024});
    const auto horizons = c.param("Ts", std::vector<double>{4.0, 6.0});
    const auto deltas = c.param("deltas", std::vector<double>{0.01, 0.1});
    const double max_factor = c.param("max_factor", 8.0);
    const std::string family = c.family("two-phase");

    struct Point {
        int d, k, n;
        double horizon, delta, budget;
        std::optional<Schedule> schedule;
        double base = 0.0, perturbed = 0.0;
    };
    std::vector<Point> points;
    for (int d : ds)
        for (int k : ks) {
            if (k > d) continue;
            for (int n : ns)
                for (double t : horizons)
                    for (double delta : deltas)
                        for (double b : budgets) points.push_back({d, k, n, t, delta, b, make_schedule(family, t, delta, n)});
        }
    parallel_for(points.size(), c.workers(), [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            Point& p = points[i];
            p.base = exact_kl(propagate_covariance(*p.schedule, p.k, p.d), p.delta);
            const auto bias = linear_score_bias(*p.schedule, p.k, p.d, p.budget);
            PropagationOptions opts;
            opts.bias = &bias;
            p.perturbed = exact_kl(propagate_covariance(*p.schedule, p.k, p.d, opts), p.delta);
        }
    });

    c.record.columns = {"d",        "k",        "N",         "T",          "delta",   "budget",
                        "exact_kl", "exact_kl_perturbed", "inflation", "inflation_over_budget", "schedule_id"};
    double worst = 0.0;
    for (const auto& p : points) {
        const double inflation = p.perturbed - p.base;
        worst = std::max(worst, inflation / p.budget);
        const long long id = c.book.add(family, *p.schedule);
        c.record.rows.push_back({static_cast<long long>(p.d), static_cast<long long>(p.k), static_cast<long long>(p.n),
                                 p.horizon, p.delta, p.budget, p.base, p.perturbed, inflation, inflation / p.budget, id});
    }
    c.verdict("inflation_bounded", worst <= max_factor, {{"max_factor", max_factor}, {"worst_ratio", worst}});
}

void run_bound_check(Context& c) {
    const int count = c.param("points", 200);
    const auto ds = c.param("ds", std::vector<int>{1, 2, 4, 8, 16, 32, 64, 128});
    const int n_max = c.param("N_max", 4096);
    const auto t_range = c.param("T_range", std::vector<double>{2.0, 8.0});
    const auto delta_range = c.param("delta_range", std::vector<double>{1e-3, 0.5});
    const std::string family = c.family("two-phase");

    struct Point {
        int d, k, n;
        double horizon, delta;
        std::optional<Schedule> schedule;
        BoundReport report;
    };
    std::vector<Point> points;
    Rng rng = make_stream(c.spec.seed, StreamTag::generator, 0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double log_n_max = std::log(static_cast<double>(n_max) / 2.0);
    for (int i = 0; i < count; ++i) {
        const int d = ds.at(static_cast<std::size_t>(std::min<double>(unit(rng) * ds.size(), ds.size() - 1)));
        const int k = std::min(d, static_cast<int>(unit(rng) * (d + 1)));
        // Even N, log-uniform in [2, N_max].
        const int n = 2 * std::max(1, static_cast<int>(std::lround(std::exp(unit(rng) * log_n_max))));
        const double horizon = t_range.at(0) + unit(rng) * (t_range.at(1) - t_range.at(0));
        const double delta = delta_range.at(0) * std::pow(delta_range.at(1) / delta_range.at(0), unit(rng));
        points.push_back({d, k, std::min(n, n_max), horizon, delta, std::nullopt, {}});
    }
    parallel_for(points.size(), c.workers(), [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            Point& p = points[i];
            p.schedule = make_schedule(family, p.horizon, p.delta, p.n);
            p.report = bound_report(*p.schedule, p.k, p.d);
        }
    });

    c.record.columns = {"d",       "k",          "N",          "T",           "delta",      "kappa",
                        "exact_kl", "discretization_integral", "init_kl", "init_bound", "init_slack", "chain_holds",
                        "schedule_id"};
    int chain_violations = 0, init_violations = 0;
    double worst_slack = 0.0;
    for (const auto& p : points) {
        const auto& r = p.report;
        const double slack = r.init_bound > 0.0 ? r.init_kl / r.init_bound : 0.0;
        worst_slack = std::max(worst_slack, slack);
        if (!r.chain_holds()) ++chain_violations;
        if (p.horizon > 1.0 && r.init_kl > r.init_bound) ++init_violations;
        const long long id = c.book.add(family, *p.schedule);
        c.record.rows.push_back({static_cast<long long>(p.d), static_cast<long long>(p.k), static_cast<long long>(p.n),
                                 p.horizon, p.delta, r.kappa, r.exact_kl, r.discretization_integral, r.init_kl,
                                 r.init_bound, slack, static_cast<long long>(r.chain_holds()), id});
    }
    c.verdict("bound_chain", chain_violations == 0, {{"violations", chain_violations}, {"points", count}});
    c.verdict("init_bound", init_violations == 0, {{"violations", init_violations}, {"max_slack_ratio", worst_slack}});
}

// ---------------------------------------------------------------------------
// Monte Carlo experiments

std::vector<double> forward_grid(const Context& c, double lo, double hi, int points) {
    if (c.spec.params.contains("grid")) return c.spec.params.at("grid").get<std::vector<double>>();
    lo = c.param("u_min", lo);
    hi = c.param("u_max", hi);
    points = c.param("grid_points", points);
    if (!(lo > 0.0 && hi > lo) || points < 1) throw ConfigError("grid: need 0 < u_min < u_max and grid_points >= 1");
    std::vector<double> g;
    for (int j = 0; j < points; ++j)
        g.push_back(points == 1 ? lo : lo * std::pow(hi / lo, static_cast<double>(j) / (points - 1)));
    return g;
}

void run_trace_curves(Context& c) {
    const auto names = c.param("targets", std::vector<std::string>{"subspace-ball", "circle", "two-points",
                                                                   "cube-skeleton", "subspace-gaussian", "point-mass"});
    const int n = c.param("n", 100000);
    const double slack = c.param("slack", 4.0);
    const auto grid = forward_grid(c, 0.02, 4.0, 20);
    const auto posvar_range = c.param("posvar_range", std::vector<double>{0.05, 5.0});
    const double posvar_max = c.param("posvar_max", 5.0);
    const json posvar_k = c.spec.params.value("posvar_k", json::object());

    c.record.columns = {"target", "u", "estimate", "stderr", "n", "seed", "posvar_bound", "posvar_ratio"};
    for (std::size_t t = 0; t < names.size(); ++t) {
        json target_cfg = c.spec.target;
        target_cfg["name"] = names[t];
        const TargetDistribution target = target_from_json(target_cfg, c.seed(10));
        const auto report = check_trace_monotone(target, grid, n, c.seed(1000 + t), c.workers(), slack);
        const int k = posvar_k.value(names[t], target.intrinsic_dim());
        double worst_ratio = 0.0;
        for (std::size_t j = 0; j < grid.size(); ++j) {
            const double u = grid[j];
            Cell bound = std::string(), ratio = std::string();
            if (k >= 2) {
                const double s2 = sigma_sq(u);
                const double b = std::min(target.second_moment(), s2 / (1.0 - s2) * k * std::log(double(k)));
                const double r = report.curve.estimate[j] == 0.0 ? 0.0 : report.curve.estimate[j] / b;
                bound = b;
                ratio = r;
                if (u >= posvar_range.at(0) && u <= posvar_range.at(1)) worst_ratio = std::max(worst_ratio, r);
            }
            c.record.rows.push_back({names[t], u, report.curve.estimate[j], report.curve.std_error[j],
                                     static_cast<long long>(n), std::to_string(report.curve.seeds[j]), bound, ratio});
        }
        c.verdict("monotone:" + names[t], report.passed(),
                  {{"slack", slack}, {"violations", report.violations},
                   {"worst_margin", std::isfinite(report.worst_margin) ? json(report.worst_margin)
                                                                       : json(format_number(report.worst_margin))}});
        if (k >= 2) {
            const double limit = target.as_subspace_gaussian() ? 1.0 : posvar_max;
            c.verdict("posvar:" + names[t], worst_ratio <= limit,
                      {{"k", k}, {"max_ratio", worst_ratio}, {"limit", limit}, {"u_range", posvar_range}});
        }
    }
}

void run_covering(Context& c) {
    json target_cfg = c.spec.target;
    if (!target_cfg.contains("name")) target_cfg["name"] = "subspace-ball";
    if (!target_cfg.contains("dim")) target_cfg["dim"] = 64;
    if (!target_cfg.contains("intrinsic_dim")) target_cfg["intrinsic_dim"] = 2;
    if (!target_cfg.contains("count")) target_cfg["count"] = 10000;
    const TargetDistribution target = target_from_json(target_cfg, c.seed(10));
    const auto eps = c.param("eps", std::vector<double>{0.2, 0.1, 0.05});
    const double constant = c.param("C", 3.0);
    const int k = c.param("k", target.intrinsic_dim());

    RowMatrix points;
    if (const auto* cloud = target.as_point_cloud()) {
        points = cloud->points;
    } else {
        points = forward_sample(target, 0.0, c.param("n", 10000), c.seed(20), c.workers()).data();
    }
    const auto counts = cover_sweep(points, eps);

    c.record.columns = {"eps0", "count", "log_count", "bound", "within"};
    bool within_all = true, monotone = true;
    std::vector<std::pair<double, int>> by_eps;
    for (std::size_t i = 0; i < eps.size(); ++i) {
        const double bound = constant * k * std::log(1.0 / eps[i]);
        const double log_count = std::log(static_cast<double>(counts[i]));
        within_all = within_all && log_count <= bound;
        by_eps.emplace_back(eps[i], counts[i]);
        c.record.rows.push_back({eps[i], static_cast<long long>(counts[i]), log_count, bound,
                                 static_cast<long long>(log_count <= bound)});
    }
    std::sort(by_eps.begin(), by_eps.end());
    for (std::size_t i = 1; i < by_eps.size(); ++i) monotone = monotone && by_eps[i].second <= by_eps[i - 1].second;
    c.verdict("covering_shape", within_all, {{"C", constant}, {"k", k}, {"points", points.rows()}});
    c.verdict("monotone_in_eps", monotone, json::object());
}

}  // namespace

std::vector<std::string> experiment_names() { return kExperiments; }

std::string build_id() { return DDPMLAB_BUILD_ID; }

double fit_loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw ConfigError("fit_loglog_slope: need >= 2 paired values");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw NumericError("fit_loglog_slope: values must be positive");
        mx += std::log(x[i]);
        my += std::log(y[i]);
    }
    mx /= x.size();
    my /= y.size();
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = std::log(x[i]) - mx;
        sxy += dx * (std::log(y[i]) - my);
        sxx += dx * dx;
    }
    if (sxx == 0.0) throw NumericError("fit_loglog_slope: x values are all equal");
    return sxy / sxx;
}

TargetDistribution target_from_json(const json& j, std::uint64_t seed) {
    const std::string name = get_or<std::string>(j, "name", "subspace-gaussian");
    GeneratorOptions o;
    o.dim = get_or(j, "dim", o.dim);
    o.intrinsic_dim = get_or(j, "intrinsic_dim", o.intrinsic_dim);
    o.count = get_or(j, "count", o.count);
    o.radius = get_or(j, "radius", o.radius);
    o.seed = get_or<std::uint64_t>(j, "seed", seed);
    if (name == "csv") {
        const auto path = get_or<std::string>(j, "path", "");
        if (path.empty()) throw ConfigError("target \"csv\" needs a \"path\"");
        return load_point_cloud_csv(path, get_or(j, "weight_column", false), o.intrinsic_dim,
                                    get_or(j, "radius", -1.0));
    }
    return make_builtin_target(name, o);
}

Schedule schedule_from_config(const json& j) {
    const std::string family = get_or<std::string>(j, "family", "two-phase");
    return make_schedule(family, get_or(j, "T", 6.0), get_or(j, "delta", 0.01), get_or(j, "N", 64));
}

ExperimentSpec ExperimentSpec::from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
    if (!j.contains("spec_version")) throw ConfigError("experiment config lacks \"spec_version\"");
    if (j.at("spec_version") != kSpecVersion)
        throw ConfigError("unsupported spec_version " + j.at("spec_version").dump() + " (expected 1)");
    ExperimentSpec s;
    s.experiment = get_or<std::string>(j, "experiment", "");
    if (std::find(kExperiments.begin(), kExperiments.end(), s.experiment) == kExperiments.end())
        throw ConfigError("unknown experiment \"" + s.experiment + "\"");
    s.seed = get_or<std::uint64_t>(j, "seed", 0);
    s.workers = get_or(j, "workers", 1);
    s.output_dir = get_or<std::string>(j, "output_dir", "");
    for (const char* key : {"target", "schedule", "params"}) {
        if (j.contains(key) && !j.at(key).is_object())
            throw ConfigError(std::string("config field \"") + key + "\" must be an object");
    }
    s.target = j.value("target", json::object());
    s.schedule = j.value("schedule", json::object());
    s.params = j.value("params", json::object());
    return s;
}

json ExperimentSpec::to_json() const {
    json j{{"spec_version", kSpecVersion}, {"experiment", experiment}, {"seed", seed},     {"workers", workers},
           {"target", target},             {"schedule", schedule},     {"params", params}};
    if (!output_dir.empty()) j["output_dir"] = output_dir;
    return j;
}

std::string ExperimentSpec::hash() const {
    json j = to_json();
    j.erase("workers");
    j.erase("output_dir");
    return hex16(fnv1a(j.dump()));
}

bool ExperimentRecord::passed() const {
    return !error && std::all_of(verdicts.begin(), verdicts.end(), [](const Verdict& v) { return v.passed; });
}

const Verdict* ExperimentRecord::verdict(const std::string& name) const {
    for (const auto& v : verdicts)
        if (v.name == name) return &v;
    return nullptr;
}

std::size_t ExperimentRecord::column(const std::string& name) const {
    const auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) throw std::out_of_range("record has no column \"" + name + "\"");
    return static_cast<std::size_t>(it - columns.begin());
}

double ExperimentRecord::number(std::size_t row, const std::string& name) const {
    const Cell& c = rows.at(row).at(column(name));
    if (const auto* d = std::get_if<double>(&c)) return *d;
    if (const auto* i = std::get_if<long long>(&c)) return static_cast<double>(*i);
    throw std::invalid_argument("column \"" + name + "\" is not numeric in row " + std::to_string(row));
}

void ExperimentRecord::write_csv(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    for (std::size_t i = 0; i < columns.size(); ++i) out << (i ? "," : "") << columns[i];
    out << '\n';
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << format_cell(row[i]);
        out << '\n';
    }
    if (!out) throw std::runtime_error("write to " + path + " failed");
}

json ExperimentRecord::to_json() const {
    json results = json::array();
    for (const auto& row : rows) {
        json r = json::object();
        for (std::size_t i = 0; i < row.size() && i < columns.size(); ++i) r[columns[i]] = cell_json(row[i]);
        results.push_back(std::move(r));
    }
    json vs = json::array();
    for (const auto& v : verdicts) vs.push_back({{"name", v.name}, {"passed", v.passed}, {"detail", v.detail}});
    json j{{"experiment", experiment},
           {"spec", spec},
           {"spec_hash", spec_hash},
           {"build_id", build_id},
           {"wall_seconds", wall_seconds},
           {"columns", columns},
           {"results", results},
           {"verdicts", vs},
           {"passed", passed()},
           {"theorem_hypothesis_violated", hypothesis_violated},
           {"warnings", warnings},
           {"schedules", schedules}};
    if (error) j["error"] = *error;
    return j;
}

ExperimentRecord run(const ExperimentSpec& spec) {
    ExperimentRecord record;
    record.experiment = spec.experiment;
    record.spec = spec.to_json();
    record.spec_hash = spec.hash();
    record.build_id = build_id();
    Context ctx{spec, record, {}};

    const auto start = std::chrono::steady_clock::now();
    try {
        if (spec.experiment == "ksweep") run_ksweep(ctx);
        else if (spec.experiment == "nsweep") run_nsweep(ctx);
        else if (spec.experiment == "schedule-compare") run_schedule_compare(ctx);
        else if (spec.experiment == "variant-compare") run_variant_compare(ctx);
        else if (spec.experiment == "score-error-sweep") run_score_error_sweep(ctx);
        else if (spec.experiment == "bound-check") run_bound_check(ctx);
        else if (spec.experiment == "trace-curves") run_trace_curves(ctx);
        else if (spec.experiment == "covering") run_covering(ctx);
        else throw ConfigError("unknown experiment \"" + spec.experiment + "\"");
    } catch (const std::exception& e) {
        record.error = e.what();
    }
    record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    ctx.book.flush_into(record);

    if (!spec.output_dir.empty()) {
        std::filesystem::create_directories(spec.output_dir);
        const std::filesystem::path dir(spec.output_dir);
        record.write_csv((dir / "results.csv").string());
        std::ofstream out(dir / "record.json");
        if (!out) throw std::runtime_error("cannot open " + (dir / "record.json").string() + " for writing");
        out << record.to_json().dump(2) << '\n';
    }
    if (record.error)
        throw ExperimentError("experiment " + spec.experiment + " failed: " + *record.error +
                              " [spec " + spec.to_json().dump() + "]");
    return record;
}

std::string emit_plot_csv(const ExperimentRecord& record, const std::string& dir) {
    // Per experiment: x column, y column, series column (empty: constant), stderr column (empty: none).
    struct Projection {
        const char* x;
        const char* y;
        const char* series;
        const char* err;
    };
    static const std::map<std::string, Projection> projections = {
        {"ksweep", {"k", "N_star", "", ""}},
        {"nsweep", {"N", "exact_kl", "", ""}},
        {"schedule-compare", {"N", "exact_kl", "schedule_family", ""}},
        {"variant-compare", {"N", "exact_kl", "variant", ""}},
        {"score-error-sweep", {"budget", "inflation", "", ""}},
        {"bound-check", {"discretization_integral", "exact_kl", "", ""}},
        {"trace-curves", {"u", "estimate", "target", "stderr"}},
        {"covering", {"eps0", "count", "", ""}},
    };
    const auto it = projections.find(record.experiment);
    if (it == projections.end()) throw ConfigError("no plot projection for experiment \"" + record.experiment + "\"");
    const Projection& p = it->second;

    std::filesystem::create_directories(dir);
    const std::string path = (std::filesystem::path(dir) / "plot.csv").string();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    const std::string series_name = *p.series ? p.series : "series";
    out << p.x << ',' << p.y << ',' << series_name << ",stderr\n";
    const std::size_t xi = record.column(p.x), yi = record.column(p.y);
    for (const auto& row : record.rows) {
        out << format_cell(row[xi]) << ',' << format_cell(row[yi]) << ',';
        out << (*p.series ? format_cell(row[record.column(p.series)]) : std::string(p.y)) << ',';
        out << (*p.err ? format_cell(row[record.column(p.err)]) : std::string()) << '\n';
    }
    if (!out) throw std::runtime_error("write to " + path + " failed");
    return path;
}

}  // namespace ddpmlab
