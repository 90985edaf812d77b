// ddpmlab: command-line front end for schedules, sampling and the named experiments.
//
//   ddpmlab schedule --config sched.json --out out/
//   ddpmlab ksweep --seed 3 --workers 8 --out runs/ksweep
//
// Every subcommand accepts --config, --seed, --workers and --out and writes
// results.csv and record.json into the --out directory.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "ddpmlab/error.hpp"
#include "ddpmlab/harness.hpp"
#include "ddpmlab/noise.hpp"
#include "ddpmlab/rng.hpp"
#include "ddpmlab/sampler.hpp"
#include "ddpmlab/targets.hpp"

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

struct CommonOptions {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
    std::string out;
    bool plot = false;
};

json load_config(const std::string& path) {
    if (path.empty()) return json{{"spec_version", ddpmlab::kSpecVersion}};
    std::ifstream in(path);
    if (!in) throw ddpmlab::ConfigError("cannot open config " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ddpmlab::ConfigError("config " + path + " is not valid JSON: " + e.what());
    }
    if (!j.contains("spec_version")) throw ddpmlab::ConfigError("config " + path + " lacks \"spec_version\"");
    if (j.at("spec_version") != ddpmlab::kSpecVersion)
        throw ddpmlab::ConfigError("config " + path + ": unsupported spec_version " + j.at("spec_version").dump());
    return j;
}

void add_common(CLI::App* cmd, CommonOptions& o) {
    cmd->add_option("--config", o.config, "JSON config (\"spec_version\": 1) overriding defaults");
    cmd->add_option("--seed", o.seed, "Root seed");
    cmd->add_option("--workers", o.workers, "Worker threads (0 = hardware concurrency)");
    cmd->add_option("--out", o.out, "Output directory for results.csv and record.json")->required();
}

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << j.dump(2) << '\n';
}

int run_schedule(const CommonOptions& o) {
    const json cfg = load_config(o.config);
    const json sched_cfg = cfg.value("schedule", json::object());
    const ddpmlab::Schedule s = ddpmlab::schedule_from_config(sched_cfg);
    fs::create_directories(o.out);

    std::ofstream csv(fs::path(o.out) / "results.csv", std::ios::binary);
    if (!csv) throw std::runtime_error("cannot write results.csv");
    csv << "n,t_n,forward_time,interval,alpha,alpha_bar,drift_scale,score_weight,noise_std,sigma_sq\n"
        << std::setprecision(17);
    for (int n = 0; n < s.steps(); ++n) {
        const auto c = ddpmlab::step_coeffs(s, n);
        csv << n << ',' << s.time(n) << ',' << c.forward_time << ',' << s.interval(n) << ',' << c.alpha << ','
            << c.alpha_bar << ',' << c.drift_scale << ',' << c.score_weight << ',' << c.noise_std << ','
            << c.sigma_sq << '\n';
    }
    json record = ddpmlab::to_json(s);
    record["family"] = sched_cfg.value("family", "two-phase");
    record["kappa"] = s.kappa();
    record["kappa_with_final_interval"] = s.kappa_with_final_interval();
    record["theorem_hypothesis_violated"] = !s.satisfies_theorem_hypotheses();
    record["build_id"] = ddpmlab::build_id();
    write_json(fs::path(o.out) / "record.json", record);
    std::cout << "N = " << s.steps() << ", kappa = " << s.kappa()
              << (s.satisfies_theorem_hypotheses() ? "" : " (theorem hypotheses violated)") << '\n';
    return 0;
}

int run_sample(const CommonOptions& o) {
    const json cfg = load_config(o.config);
    const std::uint64_t seed = o.seed.value_or(cfg.value("seed", std::uint64_t{0}));
    const int workers = o.workers.value_or(cfg.value("workers", 1));
    const json params = cfg.value("params", json::object());

    const ddpmlab::Schedule s = ddpmlab::schedule_from_config(cfg.value("schedule", json::object()));
    const auto target = ddpmlab::target_from_json(cfg.value("target", json::object()), ddpmlab::derive_seed(seed, 10));
    ddpmlab::ScoreOracle oracle(target);
    const double budget = params.value("budget", 0.0);
    if (budget > 0.0) {
        const std::string dir = params.value("direction", "radial");
        if (dir != "radial" && dir != "fixed-random") throw ddpmlab::ConfigError("direction: radial or fixed-random");
        oracle = ddpmlab::perturb(oracle, budget, s,
                                  dir == "radial" ? ddpmlab::PerturbationDirection::radial
                                                  : ddpmlab::PerturbationDirection::fixed_random,
                                  ddpmlab::derive_seed(seed, 11));
    }
    ddpmlab::ChainOptions chain;
    chain.kind = ddpmlab::parse_sampler_kind(params.value("variant", "ddpm"));
    if (params.contains("stop_step")) chain.stop_step = params.at("stop_step").get<int>();
    const int n = params.value("n", 1000);

    const auto batch = ddpmlab::run_batch(oracle, s, n, seed, workers, chain);
    fs::create_directories(o.out);
    batch.write_csv((fs::path(o.out) / "results.csv").string());
    json record = ddpmlab::batch_sidecar(batch, s, chain.kind, oracle);
    record["build_id"] = ddpmlab::build_id();
    write_json(fs::path(o.out) / "record.json", record);
    std::cout << "wrote " << n << " samples in d = " << batch.dim() << '\n';
    return 0;
}

int run_experiment(const std::string& name, const CommonOptions& o) {
    json cfg = load_config(o.config);
    if (cfg.contains("experiment") && cfg.at("experiment") != name)
        throw ddpmlab::ConfigError("config is for experiment " + cfg.at("experiment").dump() + ", not " + name);
    cfg["experiment"] = name;
    if (o.seed) cfg["seed"] = *o.seed;
    if (o.workers) cfg["workers"] = *o.workers;
    cfg["output_dir"] = o.out;

    const auto spec = ddpmlab::ExperimentSpec::from_json(cfg);
    const auto record = ddpmlab::run(spec);
    if (o.plot) ddpmlab::emit_plot_csv(record, o.out);

    for (const auto& w : record.warnings) std::cerr << "warning: " << w << '\n';
    for (const auto& v : record.verdicts)
        std::cout << (v.passed ? "PASS " : "FAIL ") << v.name << ' ' << v.detail.dump() << '\n';
    std::cout << record.rows.size() << " rows, " << std::fixed << std::setprecision(2) << record.wall_seconds
              << " s -> " << o.out << '\n';
    return record.passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Exact-oracle DDPM sampler lab"};
    app.require_subcommand(1);

    CommonOptions opts;
    std::string chosen;
    auto* schedule = app.add_subcommand("schedule", "Build a schedule and dump its per-step coefficients");
    add_common(schedule, opts);
    auto* sample = app.add_subcommand("sample", "Run the reverse sampler and write the batch");
    add_common(sample, opts);
    for (const auto& name : ddpmlab::experiment_names()) {
        auto* cmd = app.add_subcommand(name, "Run the " + name + " experiment");
        add_common(cmd, opts);
        cmd->add_flag("--plot", opts.plot, "Also write the long-format plot.csv");
    }

    CLI11_PARSE(app, argc, argv);
    const std::string name = app.get_subcommands().front()->get_name();
    try {
        if (name == "schedule") return run_schedule(opts);
        if (name == "sample") return run_sample(opts);
        return run_experiment(name, opts);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
