#include "ddpmlab/sample_batch.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <vector>

#include "ddpmlab/error.hpp"

namespace ddpmlab {

SampleBatch::SampleBatch(RowMatrix data, double forward_time, std::optional<int> reverse_step,
                         SeedProvenance provenance)
    : data_(std::move(data)),
      forward_time_(forward_time),
      reverse_step_(reverse_step),
      provenance_(std::move(provenance)) {
    if (data_.rows() < 1 || data_.cols() < 1) throw ConfigError("sample batch must be non-empty");
    if (!(forward_time_ >= 0.0)) throw ConfigError("sample batch forward time must be >= 0");
}

Vector SampleBatch::mean() const { return data_.colwise().mean().transpose(); }

Eigen::MatrixXd SampleBatch::covariance() const {
    if (count() < 2) throw ConfigError("covariance needs at least two samples");
    const RowMatrix centered = data_.rowwise() - data_.colwise().mean();
    return (centered.transpose() * centered) / static_cast<double>(count() - 1);
}

void SampleBatch::write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    for (int j = 0; j < dim(); ++j) out << (j ? "," : "") << 'x' << j;
    out << '\n' << std::setprecision(17);
    for (int i = 0; i < count(); ++i) {
        for (int j = 0; j < dim(); ++j) out << (j ? "," : "") << data_(i, j);
        out << '\n';
    }
    if (!out) throw std::runtime_error("write failed for " + path);
}

nlohmann::json SampleBatch::metadata() const {
    nlohmann::json j{{"count", count()},
                     {"dim", dim()},
                     {"forward_time", forward_time_},
                     {"seed", {{"root", provenance_.root_seed},
                               {"first_stream", provenance_.first_stream},
                               {"kind", provenance_.stream_kind}}}};
    if (reverse_step_) j["reverse_step"] = *reverse_step_;
    return j;
}

RowMatrix read_matrix_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        bool numeric = true;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t used = 0;
                row.push_back(std::stod(cell, &used));
            } catch (const std::exception&) {
                numeric = false;
                break;
            }
        }
        if (!numeric) {
            if (first) {  // header
                first = false;
                continue;
            }
            throw ConfigError("non-numeric cell in " + path + ": " + line);
        }
        first = false;
        if (!rows.empty() && row.size() != rows.front().size())
            throw ConfigError("ragged CSV rows in " + path);
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw ConfigError("no data rows in " + path);
    RowMatrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
    return m;
}

}  // namespace ddpmlab
