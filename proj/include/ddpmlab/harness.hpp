#pragma once

// Named experiments: configuration, seeding, persistence and plot-ready output.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "ddpmlab/noise.hpp"
#include "ddpmlab/targets.hpp"

namespace ddpmlab {

inline constexpr int kSpecVersion = 1;

std::vector<std::string> experiment_names();

// Parsed experiment configuration. Unset fields in "target", "schedule" and
// "params" fall back to per-experiment defaults when the experiment runs.
struct ExperimentSpec {
    std::string experiment;
    std::uint64_t seed = 0;
    int workers = 1;
    std::string output_dir;     // empty: do not write files
    nlohmann::json target = nlohmann::json::object();
    nlohmann::json schedule = nlohmann::json::object();
    nlohmann::json params = nlohmann::json::object();

    // Requires "spec_version": 1 and a recognized experiment name.
    static ExperimentSpec from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
    // FNV-1a of the canonical JSON without workers and output_dir.
    std::string hash() const;
};

using Cell = std::variant<double, long long, std::string>;

struct Verdict {
    std::string name;
    bool passed = false;
    nlohmann::json detail;
};

struct ExperimentRecord {
    std::string experiment;
    nlohmann::json spec;
    std::string spec_hash;
    std::string build_id;
    double wall_seconds = 0.0;
    std::vector<std::string> columns;
    std::vector<std::vector<Cell>> rows;
    std::vector<Verdict> verdicts;
    nlohmann::json schedules = nlohmann::json::array();  // every schedule used, with its times
    std::vector<std::string> warnings;
    bool hypothesis_violated = false;
    std::optional<std::string> error;

    bool passed() const;
    const Verdict* verdict(const std::string& name) const;
    // Column index, throws std::out_of_range.
    std::size_t column(const std::string& name) const;
    double number(std::size_t row, const std::string& name) const;

    // results.csv: one row per result point; numbers printed with 17 significant digits.
    void write_csv(const std::string& path) const;
    nlohmann::json to_json() const;
};

// Raised when an experiment fails; carries the experiment name and spec.
class ExperimentError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Runs the named experiment. When spec.output_dir is set, writes results.csv
// and record.json there (also partial results on failure).
ExperimentRecord run(const ExperimentSpec& spec);

// Long-format projection of a record for plotting; returns the file written.
std::string emit_plot_csv(const ExperimentRecord& record, const std::string& dir);

// Shared with the CLI.
TargetDistribution target_from_json(const nlohmann::json& j, std::uint64_t seed);
Schedule schedule_from_config(const nlohmann::json& j);
// Log-log least-squares slope.
double fit_loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

std::string build_id();

}  // namespace ddpmlab
