#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kwcp/dataset.hpp"

namespace kwcp {

/// Scaled Epanechnikov kernel K_h(d) = 0.75 (1 - (d/h)^2)_+ / h.
/// Exactly zero for d >= h. Throws Error(Domain) when h <= 0.
double epanechnikov_weight(double d, double h);

struct WeightTriple {
    std::int32_t sample = 0;
    std::int32_t plaque = 0;
    std::int32_t cell = 0;
    double distance = 0.0;
    double weight = 0.0;  // strictly positive
};

/// Positive kernel weights over (sample, plaque, cell), ordered by
/// (sample, plaque, cell).
struct KernelWeightSet {
    std::vector<WeightTriple> triples;
    std::vector<double> bandwidths;  // h_i per sample

    std::int64_t positive_count() const { return static_cast<std::int64_t>(triples.size()); }
};

/// H_i(L) for each sample i and each candidate L.
struct BandwidthTable {
    std::vector<int> neighbor_counts;         // the L grid
    std::vector<std::vector<double>> values;  // values[l_index][sample]

    std::vector<double> bandwidths_for(int L) const;
};

/// Median over plaques of the distance to the L-th nearest cell, for each L.
/// OpenMP over plaques.
BandwidthTable bandwidth_candidates(const Dataset& dataset, const std::vector<int>& neighbor_counts);

/// Single-sample variant returning H(L) for each L in the grid.
std::vector<double> bandwidth_candidates(const Sample& sample, const std::vector<int>& neighbor_counts);

/// Grid-binned pair enumeration, OpenMP over plaques. Bit-identical to
/// compute_weights_serial.
KernelWeightSet compute_weights(const Dataset& dataset, const std::vector<double>& bandwidths);

/// Reference implementation: plain double loop over every (plaque, cell).
KernelWeightSet compute_weights_serial(const Dataset& dataset, const std::vector<double>& bandwidths);

/// Audit dump: sample_id, plaque_id, cell_id, distance_um, weight.
void write_weights_csv(const Dataset& dataset, const KernelWeightSet& weights, const std::string& path);

} // namespace kwcp
