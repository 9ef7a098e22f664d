#pragma once

#include <string>
#include <utility>
#include <vector>

#include "kwcp/dataset.hpp"
#include "kwcp/evaluation.hpp"
#include "kwcp/selection.hpp"
#include "kwcp/simulation.hpp"

namespace kwcp {

/// Everything a command can be told through a config file.
struct RunConfig {
    SelectionConfig selection;
    SimConfig sim;
    LassoConfig lasso;
    LoadOptions load;
    bool gene_filter = false;
    GeneFilterOptions filter;
    std::vector<int> plaques_grid;       // empty: sim.plaques only
    std::vector<double> sigma2_grid;     // empty: sim.sigma2 only
    int replicates = 1;
    int top_k = 5;
    std::uint64_t seed = 20240601;
};

/// Applies one `key = value` setting. Throws Error(Validation) for an
/// unknown key or a malformed value.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);

/// Reads `key = value` lines; '#' starts a comment, blank lines are skipped.
RunConfig load_config(const std::string& path);

/// Every key with its effective value, in documentation order.
std::vector<std::pair<std::string, std::string>> config_snapshot(const RunConfig& config);

} // namespace kwcp
