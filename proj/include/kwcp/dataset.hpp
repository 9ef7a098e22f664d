#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "kwcp/geometry.hpp"

namespace kwcp {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Plaque {
    std::string id;
    Point location;
    double outcome = 0.0;
};

/// One tissue section: outcome locations (plaques) and predictor cells.
/// Cells are stored column-wise; `expression` has one row per cell.
struct Sample {
    std::string id;
    int time_index = 0;
    std::vector<Plaque> plaques;
    std::vector<std::string> cell_ids;
    std::vector<Point> cell_locations;
    std::vector<int> cell_types;
    RowMatrix expression;  // N_i x p

    std::size_t num_plaques() const { return plaques.size(); }
    std::size_t num_cells() const { return cell_locations.size(); }
};

struct Dataset {
    std::vector<Sample> samples;
    std::vector<std::string> genes;
    std::vector<std::string> cell_types;  // labels, index = code
    std::vector<double> times;            // raw time values, index = code

    int num_genes() const { return static_cast<int>(genes.size()); }
    int num_cell_types() const { return static_cast<int>(cell_types.size()); }
    int num_times() const { return static_cast<int>(times.size()); }
    int num_samples() const { return static_cast<int>(samples.size()); }

    /// Throws Error(Validation) naming the first broken invariant.
    void validate() const;
};

enum class ExpressionFormat { Wide, Long };

struct LoadOptions {
    ExpressionFormat expression_format = ExpressionFormat::Wide;
    bool zscore_genes = false;
};

Dataset load_dataset(const std::string& cells_path, const std::string& expression_path,
                     const std::string& plaques_path, const std::string& samples_path,
                     const LoadOptions& options = {});

/// Loads samples.csv, plaques.csv, cells.csv and expression.csv from `dir`.
Dataset load_dataset_dir(const std::string& dir, const LoadOptions& options = {});

/// Writes the four CSV files into `dir` (wide expression). Values use 17
/// significant digits so a reload reproduces the dataset exactly.
void write_dataset_dir(const Dataset& dataset, const std::string& dir);

enum class PanelReason : std::uint8_t { DetectionFilter, ForcedInclude };

struct GenePanel {
    std::vector<int> kept_indices;        // ascending
    std::vector<PanelReason> provenance;  // parallel to kept_indices

    int size() const { return static_cast<int>(kept_indices.size()); }
};

enum class StratumRule { All, Any };

struct GeneFilterOptions {
    double min_detect_frac = 0.2;
    double near_radius_um = 150.0;
    std::vector<std::string> forced_includes;
    StratumRule rule = StratumRule::All;
};

GenePanel filter_genes(const Dataset& dataset, const GeneFilterOptions& options);

/// Panel listing every gene, tagged as passing the detection filter.
GenePanel full_panel(const Dataset& dataset);

Dataset subset_to_panel(const Dataset& dataset, const GenePanel& panel);

/// In-place per-gene z-scoring over all cells of all samples.
void zscore_genes(Dataset& dataset);

} // namespace kwcp
