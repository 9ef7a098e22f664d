#include "kwcp/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "kwcp/csv.hpp"
#include "kwcp/error.hpp"

namespace kwcp {

namespace {

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void bad(const std::string& key, const std::string& value, const char* expected)
{
    throw Error(ErrorKind::Validation, "config key '" + key + "': '" + value + "' is not " + expected);
}

double to_double(const std::string& key, const std::string& v)
{
    double out = 0.0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(out)) bad(key, v, "a finite number");
    return out;
}

long long to_int(const std::string& key, const std::string& v)
{
    long long out = 0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size()) bad(key, v, "an integer");
    return out;
}

int to_small_int(const std::string& key, const std::string& v)
{
    const auto x = to_int(key, v);
    if (x < -1000000000LL || x > 1000000000LL) bad(key, v, "an integer in range");
    return static_cast<int>(x);
}

bool to_bool(const std::string& key, const std::string& v)
{
    if (v == "true" || v == "on" || v == "yes" || v == "1") return true;
    if (v == "false" || v == "off" || v == "no" || v == "0") return false;
    bad(key, v, "a boolean");
}

std::vector<std::string> to_list(const std::string& v)
{
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<int> to_int_list(const std::string& key, const std::string& v)
{
    std::vector<int> out;
    for (const auto& s : to_list(v)) out.push_back(to_small_int(key, s));
    return out;
}

std::vector<double> to_double_list(const std::string& key, const std::string& v)
{
    std::vector<double> out;
    for (const auto& s : to_list(v)) out.push_back(to_double(key, s));
    return out;
}

template <class T>
std::string join(const std::vector<T>& v)
{
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        if constexpr (std::is_same_v<T, double>) out += csv::format_double(v[i]);
        else if constexpr (std::is_same_v<T, std::string>) out += v[i];
        else out += std::to_string(v[i]);
    }
    return out;
}

std::string num(double v) { return csv::format_double(v); }
std::string flag(bool b) { return b ? "true" : "false"; }

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;
using Getter = std::function<std::string(const RunConfig&)>;

struct Key {
    const char* name;
    Setter set;
    Getter get;
};

const std::vector<Key>& keys()
{
    static const std::vector<Key> table = {
        // selection
        {"lambda_max",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             if (v == "auto") c.selection.lambda_max.reset();
             else c.selection.lambda_max = to_double(k, v);
         },
         [](const RunConfig& c) { return c.selection.lambda_max ? num(*c.selection.lambda_max) : std::string("auto"); }},
        {"lambda_decay", [](RunConfig& c, const std::string& k, const std::string& v) { c.selection.decay = to_double(k, v); },
         [](const RunConfig& c) { return num(c.selection.decay); }},
        {"path_max_steps",
         [](RunConfig& c, const std::string& k, const std::string& v) { c.selection.path_max_steps = to_small_int(k, v); },
         [](const RunConfig& c) { return std::to_string(c.selection.path_max_steps); }},
        {"path_patience",
         [](RunConfig& c, const std::string& k, const std::string& v) { c.selection.path_patience = to_small_int(k, v); },
         [](const RunConfig& c) { return std::to_string(c.selection.path_patience); }},
        {"max_doublings",
         [](RunConfig& c, const std::string& k, const std::string& v) { c.selection.max_doublings = to_small_int(k, v); },
         [](const RunConfig& c) { return std::to_string(c.selection.max_doublings); }},
        {"neighbor_counts",
         [](RunConfig& c, const std::string& k, const std::string& v) { c.selection.neighbor_counts = to_int_list(k, v); },
         [](const RunConfig& c) { return join(c.selection.neighbor_counts); }},
        {"r_max",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.selection.r_max = v == "auto" ? 0 : to_small_int(k, v);
         },
         [](const RunConfig& c) { return c.selection.r_max > 0 ? std::to_string(c.selection.r_max) : std::string("auto"); }},
        // solver
        {"max_outer_iters",
         [](RunConfig& c, const std::string& k, const std::string& v) { c.selection.solver.max_outer_iters = to_small_int(k, v); },
         [](const RunConfig& c) { return std::to_string(c.selection.solver.max_outer_iters); }},
        {"rank_drop_window",
         [](RunConfig& c, const std::string& k, const std::string& v) { c.selection.solver.rank_drop_window = to_small_int(k, v); },
         [](const RunConfig& c) { return std::to_string(c.selection.solver.rank_drop_window); }},
        {"tol_beta", [](RunConfig& c, const std::string& k, const std::string& v) { c.selection.solver.tol_beta = to_double(k, v); },
         [](const RunConfig& c) { return num(c.selection.solver.tol_beta); }},
        {"tol_factor",
         [](RunConfig& c, const std::string& k, const std::string& v) { c.selection.solver.tol_factor = to_double(k, v); },
         [](const RunConfig& c) { return num(c.selection.solver.tol_factor); }},
        {"drop_rel_weight",
         [](RunConfig& c, const std::string& k, const std::string& v) { c.selection.solver.drop_rel_weight = to_double(k, v); },
         [](const RunConfig& c) { return num(c.selection.solver.drop_rel_weight); }},
        {"drop_q1_inf",
         [](RunConfig& c, const std::string& k, const std::string& v) { c.selection.solver.drop_q1_inf = to_double(k, v); },
         [](const RunConfig& c) { return num(c.selection.solver.drop_q1_inf); }},
        {"residual_refresh",
         [](RunConfig& c, const std::string& k, const std::string& v) { c.selection.solver.residual_refresh = to_small_int(k, v); },
         [](const RunConfig& c) { return std::to_string(c.selection.solver.residual_refresh); }},
        {"engine",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             if (v == "gram") c.selection.solver.engine = Engine::Gram;
             else if (v == "residual") c.selection.solver.engine = Engine::Residual;
             else bad(k, v, "'gram' or 'residual'");
         },
         [](const RunConfig& c) { return std::string(c.selection.solver.engine == Engine::Gram ? "gram" : "residual"); }},
        {"als_max_iters",
         [](RunConfig& c, const std::string& k, const std::string& v) { c.selection.solver.als.max_iters = to_small_int(k, v); },
         [](const RunConfig& c) { return std::to_string(c.selection.solver.als.max_iters); }},
        {"als_tol", [](RunConfig& c, const std::string& k, const std::string& v) { c.selection.solver.als.tol = to_double(k, v); },
         [](const RunConfig& c) { return num(c.selection.solver.als.tol); }},
        // ridge initialization
        {"ridge_folds",
         [](RunConfig& c, const std::string& k, const std::string& v) { c.selection.ridge.folds = to_small_int(k, v); },
         [](const RunConfig& c) { return std::to_string(c.selection.ridge.folds); }},
        {"ridge_grid",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             if (v == "default") c.selection.ridge.grid.clear();
             else c.selection.ridge.grid = to_double_list(k, v);
         },
         [](const RunConfig& c) { return c.selection.ridge.grid.empty() ? std::string("default") : join(c.selection.ridge.grid); }},
        // input
        {"expression_format",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             if (v == "wide") c.load.expression_format = ExpressionFormat::Wide;
             else if (v == "long") c.load.expression_format = ExpressionFormat::Long;
             else bad(k, v, "'wide' or 'long'");
         },
         [](const RunConfig& c) { return std::string(c.load.expression_format == ExpressionFormat::Wide ? "wide" : "long"); }},
        {"zscore", [](RunConfig& c, const std::string& k, const std::string& v) { c.load.zscore_genes = to_bool(k, v); },
         [](const RunConfig& c) { return flag(c.load.zscore_genes); }},
        {"gene_filter", [](RunConfig& c, const std::string& k, const std::string& v) { c.gene_filter = to_bool(k, v); },
         [](const RunConfig& c) { return flag(c.gene_filter); }},
        {"min_detect_frac",
         [](RunConfig& c, const std::string& k, const std::string& v) { c.filter.min_detect_frac = to_double(k, v); },
         [](const RunConfig& c) { return num(c.filter.min_detect_frac); }},
        {"near_radius_um",
         [](RunConfig& c, const std::string& k, const std::string& v) { c.filter.near_radius_um = to_double(k, v); },
         [](const RunConfig& c) { return num(c.filter.near_radius_um); }},
        {"forced_genes", [](RunConfig& c, const std::string&, const std::string& v) { c.filter.forced_includes = to_list(v); },
         [](const RunConfig& c) { return join(c.filter.forced_includes); }},
        {"filter_rule",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             if (v == "all") c.filter.rule = StratumRule::All;
             else if (v == "any") c.filter.rule = StratumRule::Any;
             else bad(k, v, "'all' or 'any'");
         },
         [](const RunConfig& c) { return std::string(c.filter.rule == StratumRule::All ? "all" : "any"); }},
        // simulation
        {"spots_mean", [](RunConfig& c, const std::string& k, const std::string& v) { c.sim.spots_mean = to_double(k, v); },
         [](const RunConfig& c) { return num(c.sim.spots_mean); }},
        {"section_um", [](RunConfig& c, const std::string& k, const std::string& v) { c.sim.section_um = to_double(k, v); },
         [](const RunConfig& c) { return num(c.sim.section_um); }},
        {"grid_jitter", [](RunConfig& c, const std::string& k, const std::string& v) { c.sim.grid_jitter = to_double(k, v); },
         [](const RunConfig& c) { return num(c.sim.grid_jitter); }},
        {"groups", [](RunConfig& c, const std::string& k, const std::string& v) { c.sim.groups = to_small_int(k, v); },
         [](const RunConfig& c) { return std::to_string(c.sim.groups); }},
        {"times", [](RunConfig& c, const std::string& k, const std::string& v) { c.sim.times = to_small_int(k, v); },
         [](const RunConfig& c) { return std::to_string(c.sim.times); }},
        {"genes", [](RunConfig& c, const std::string& k, const std::string& v) { c.sim.genes = to_small_int(k, v); },
         [](const RunConfig& c) { return std::to_string(c.sim.genes); }},
        {"active_genes", [](RunConfig& c, const std::string& k, const std::string& v) { c.sim.active_genes = to_small_int(k, v); },
         [](const RunConfig& c) { return std::to_string(c.sim.active_genes); }},
        {"true_rank", [](RunConfig& c, const std::string& k, const std::string& v) { c.sim.true_rank = to_small_int(k, v); },
         [](const RunConfig& c) { return std::to_string(c.sim.true_rank); }},
        {"plaques",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.plaques_grid = to_int_list(k, v);
             if (c.plaques_grid.empty()) bad(k, v, "a non-empty list");
             c.sim.plaques = c.plaques_grid.front();
         },
         [](const RunConfig& c) { return c.plaques_grid.empty() ? std::to_string(c.sim.plaques) : join(c.plaques_grid); }},
        {"sigma2",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.sigma2_grid = to_double_list(k, v);
             if (c.sigma2_grid.empty()) bad(k, v, "a non-empty list");
             c.sim.sigma2 = c.sigma2_grid.front();
         },
         [](const RunConfig& c) { return c.sigma2_grid.empty() ? num(c.sim.sigma2) : join(c.sigma2_grid); }},
        {"phi", [](RunConfig& c, const std::string& k, const std::string& v) { c.sim.phi = to_double(k, v); },
         [](const RunConfig& c) { return num(c.sim.phi); }},
        {"shifted_gene_frac",
         [](RunConfig& c, const std::string& k, const std::string& v) { c.sim.shifted_gene_frac = to_double(k, v); },
         [](const RunConfig& c) { return num(c.sim.shifted_gene_frac); }},
        {"group_shift_sd", [](RunConfig& c, const std::string& k, const std::string& v) { c.sim.group_shift_sd = to_double(k, v); },
         [](const RunConfig& c) { return num(c.sim.group_shift_sd); }},
        {"field_sd", [](RunConfig& c, const std::string& k, const std::string& v) { c.sim.field_sd = to_double(k, v); },
         [](const RunConfig& c) { return num(c.sim.field_sd); }},
        {"noise_sd", [](RunConfig& c, const std::string& k, const std::string& v) { c.sim.noise_sd = to_double(k, v); },
         [](const RunConfig& c) { return num(c.sim.noise_sd); }},
        {"field_scale_um", [](RunConfig& c, const std::string& k, const std::string& v) { c.sim.field_scale_um = to_double(k, v); },
         [](const RunConfig& c) { return num(c.sim.field_scale_um); }},
        {"field_features",
         [](RunConfig& c, const std::string& k, const std::string& v) { c.sim.field_features = to_small_int(k, v); },
         [](const RunConfig& c) { return std::to_string(c.sim.field_features); }},
        {"kmeans_iters", [](RunConfig& c, const std::string& k, const std::string& v) { c.sim.kmeans_iters = to_small_int(k, v); },
         [](const RunConfig& c) { return std::to_string(c.sim.kmeans_iters); }},
        {"replicates", [](RunConfig& c, const std::string& k, const std::string& v) { c.replicates = to_small_int(k, v); },
         [](const RunConfig& c) { return std::to_string(c.replicates); }},
        // paired lasso
        {"lasso_folds", [](RunConfig& c, const std::string& k, const std::string& v) { c.lasso.folds = to_small_int(k, v); },
         [](const RunConfig& c) { return std::to_string(c.lasso.folds); }},
        {"lasso_path_length",
         [](RunConfig& c, const std::string& k, const std::string& v) { c.lasso.path_length = to_small_int(k, v); },
         [](const RunConfig& c) { return std::to_string(c.lasso.path_length); }},
        {"lasso_min_ratio",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.lasso.min_ratio = v == "auto" ? 0.0 : to_double(k, v);
         },
         [](const RunConfig& c) { return c.lasso.min_ratio > 0.0 ? num(c.lasso.min_ratio) : std::string("auto"); }},
        {"lasso_rule",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             if (v == "1se") c.lasso.one_se_rule = true;
             else if (v == "min") c.lasso.one_se_rule = false;
             else bad(k, v, "'1se' or 'min'");
         },
         [](const RunConfig& c) { return std::string(c.lasso.one_se_rule ? "1se" : "min"); }},
        {"lasso_stratified",
         [](RunConfig& c, const std::string& k, const std::string& v) { c.lasso.stratified = to_bool(k, v); },
         [](const RunConfig& c) { return flag(c.lasso.stratified); }},
        // reporting and seeding
        {"top_k", [](RunConfig& c, const std::string& k, const std::string& v) { c.top_k = to_small_int(k, v); },
         [](const RunConfig& c) { return std::to_string(c.top_k); }},
        {"seed",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             const auto s = to_int(k, v);
             if (s < 0) bad(k, v, "a non-negative integer");
             c.seed = static_cast<std::uint64_t>(s);
             c.sim.seed = c.seed;
             c.selection.solver.als.seed = c.seed;
             c.selection.ridge.seed = c.seed;
             c.lasso.seed = c.seed;
         },
         [](const RunConfig& c) { return std::to_string(c.seed); }},
    };
    return table;
}

} // namespace

void apply_setting(RunConfig& config, const std::string& key, const std::string& value)
{
    for (const auto& k : keys())
        if (key == k.name) {
            k.set(config, key, value);
            return;
        }
    throw Error(ErrorKind::Validation, "unknown config key '" + key + "'");
}

RunConfig load_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Schema, "cannot open config file " + path);
    RunConfig config;
    apply_setting(config, "seed", std::to_string(config.seed));
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw Error(ErrorKind::Validation, path + ":" + std::to_string(lineno) + ": expected key = value");
        try {
            apply_setting(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const Error& e) {
            throw Error(e.kind(), path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return config;
}

std::vector<std::pair<std::string, std::string>> config_snapshot(const RunConfig& config)
{
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& k : keys()) out.emplace_back(k.name, k.get(config));
    return out;
}

} // namespace kwcp
