#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kwcp/cp_model.hpp"

namespace kwcp {

/// A fitted model with the labels needed to read it back.
struct SavedModel {
    CPModel model;
    std::vector<std::string> gene_ids;
    std::vector<std::string> cell_type_labels;
    std::vector<double> time_values;
    std::uint64_t seed = 0;
};

/// JSON text with keys rank, w, q1, q2, q3, gene_ids, cell_type_labels,
/// time_values, seed. q1 is stored gene-major (one row of R loadings per
/// gene). Doubles round-trip exactly.
std::string model_to_json(const SavedModel& saved);
SavedModel model_from_json(const std::string& text, const std::string& origin = "model");

void write_model_json(const SavedModel& saved, const std::string& path);
SavedModel read_model_json(const std::string& path);

} // namespace kwcp
