#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <Eigen/Core>
#include <json.hpp>

namespace ddpmlab {

using Vector = Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct SeedProvenance {
    std::uint64_t root_seed = 0;
    std::uint64_t first_stream = 0;  // row i was drawn from substream first_stream + i
    std::string stream_kind;         // "chain" or "forward"
};

// n samples in dimension d, one per row, labelled with the forward time they
// represent. Reverse batches also carry the step index n of Y_{t_n}.
class SampleBatch {
public:
    SampleBatch(RowMatrix data, double forward_time, std::optional<int> reverse_step, SeedProvenance provenance);

    int count() const { return static_cast<int>(data_.rows()); }
    int dim() const { return static_cast<int>(data_.cols()); }
    const RowMatrix& data() const { return data_; }
    double forward_time() const { return forward_time_; }
    std::optional<int> reverse_step() const { return reverse_step_; }
    const SeedProvenance& provenance() const { return provenance_; }

    Vector mean() const;
    // Unbiased sample covariance (d x d).
    Eigen::MatrixXd covariance() const;

    // One row per sample, columns x0..x{d-1}, values printed with 17 significant digits.
    void write_csv(const std::string& path) const;
    nlohmann::json metadata() const;

private:
    RowMatrix data_;
    double forward_time_;
    std::optional<int> reverse_step_;
    SeedProvenance provenance_;
};

// Reads a CSV written by SampleBatch::write_csv (header line optional).
RowMatrix read_matrix_csv(const std::string& path);

}  // namespace ddpmlab
