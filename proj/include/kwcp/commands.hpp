#pragma once

#include <functional>
#include <iosfwd>
#include <string>

#include "kwcp/config.hpp"
#include "kwcp/selection.hpp"

namespace kwcp {

inline constexpr const char* kVersion = "0.1.0";

/// Exit codes shared by every command.
enum ExitCode : int { kExitOk = 0, kExitInput = 2, kExitNumerical = 3 };

/// Runs `body`, mapping kwcp::Error and other exceptions onto exit codes and
/// printing the message to `err`.
int guarded(std::ostream& err, const std::function<void()>& body);

/// Loads the config file, or defaults when `path` is empty.
RunConfig load_run_config(const std::string& path);

/// The dataset as the fit sees it: optional gene filter applied.
Dataset prepare_dataset(const std::string& data_dir, const RunConfig& config, std::ostream& err);

/// Writes model.json, path_report.csv, component_summary.csv and
/// objective_trace.csv into `out_dir`; returns the run for further use.
PathResult write_fit_outputs(const Dataset& dataset, const RunConfig& config, const std::string& out_dir,
                             std::ostream& err);

int cmd_fit(const std::string& data_dir, const std::string& config_path, const std::string& out_dir,
            std::ostream& err);

int cmd_simulate(const std::string& config_path, const std::string& out_dir, std::ostream& err);

/// `estimate` is a model.json path or the literal "paired-lasso"; the latter
/// refits on the dataset stored next to `truth_path`.
int cmd_evaluate(const std::string& estimate, const std::string& truth_path, const std::string& config_path,
                 const std::string& out_dir, std::ostream& err);

/// Walks grid_dir/M*_s2_*/rep*/ and writes table1.csv plus per-replicate
/// metrics. A replicate without fit/model.json is fitted first.
int cmd_evaluate_batch(const std::string& grid_dir, const std::string& config_path, const std::string& out_dir,
                       std::ostream& err);

int cmd_bandwidth_scan(const std::string& data_dir, const std::string& config_path, const std::string& out_dir,
                       std::ostream& err);

} // namespace kwcp
