#include "kwcp/commands.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "kwcp/csv.hpp"
#include "kwcp/digest.hpp"
#include "kwcp/error.hpp"
#include "kwcp/evaluation.hpp"
#include "kwcp/model_io.hpp"
#include "kwcp/parallel.hpp"
#include "kwcp/simulation.hpp"

namespace kwcp {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

std::string iso_utc(std::chrono::system_clock::time_point tp)
{
    const std::time_t t = std::chrono::system_clock::to_time_t(tp);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Shortest decimal that round-trips; used in directory names and labels.
std::string short_double(double v)
{
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
}

std::string fixed2(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::Schema, "cannot write " + path.string());
    out << text;
    if (!out) throw Error(ErrorKind::Schema, "write failed for " + path.string());
}

void ensure_dir(const fs::path& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorKind::Schema, "cannot create directory " + dir.string() + ": " + ec.message());
}

void report(std::ostream& err, const std::vector<std::string>& warnings)
{
    for (const auto& w : warnings) err << "warning: " << w << '\n';
}

class Manifest {
public:
    Manifest(std::string command, const RunConfig& config)
        : command_(std::move(command)), config_(config), started_(std::chrono::system_clock::now()),
          clock_(std::chrono::steady_clock::now())
    {
    }

    void input(const std::string& path) { inputs_.emplace_back(path, sha256_file(path)); }

    void input_dir(const fs::path& dir)
    {
        for (const char* name : {"samples.csv", "plaques.csv", "cells.csv", "expression.csv"})
            input((dir / name).string());
    }

    void output(const fs::path& path) { outputs_.push_back(path); }

    void warn(const std::vector<std::string>& w) { warnings_.insert(warnings_.end(), w.begin(), w.end()); }

    void write(const fs::path& out_dir) const
    {
        ordered_json j;
        j["command"] = command_;
        ordered_json snapshot = ordered_json::object();
        for (const auto& [k, v] : config_snapshot(config_)) snapshot[k] = v;
        j["config"] = std::move(snapshot);
        j["seed"] = config_.seed;
        ordered_json in = ordered_json::array();
        for (const auto& [path, digest] : inputs_) in.push_back({{"path", path}, {"sha256", digest}});
        j["inputs"] = std::move(in);
        ordered_json out = ordered_json::array();
        for (const auto& path : outputs_) {
            const auto rel = fs::relative(path, out_dir).generic_string();
            out.push_back({{"path", rel}, {"sha256", sha256_file(path.string())}});
        }
        j["outputs"] = std::move(out);
        j["warnings"] = warnings_;
        j["version"] = kVersion;
        const auto seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - clock_).count();
        j["started_at"] = iso_utc(started_);
        j["finished_at"] = iso_utc(std::chrono::system_clock::now());
        j["wall_seconds"] = seconds;
        write_text(out_dir / "manifest.json", j.dump(1) + "\n");
    }

private:
    std::string command_;
    RunConfig config_;
    std::chrono::system_clock::time_point started_;
    std::chrono::steady_clock::time_point clock_;
    std::vector<std::pair<std::string, std::string>> inputs_;
    std::vector<fs::path> outputs_;
    std::vector<std::string> warnings_;
};

SavedModel saved_model(const Dataset& dataset, const CPModel& model, std::uint64_t seed)
{
    SavedModel saved;
    saved.model = model;
    saved.gene_ids = dataset.genes;
    saved.cell_type_labels = dataset.cell_types;
    saved.time_values = dataset.times;
    saved.seed = seed;
    return saved;
}

std::string path_report_csv(const PathResult& result)
{
    std::ostringstream out;
    out << "L,lambda,rank,nu,Nstar,bic,normalized_loss,selected_flag\n";
    for (std::size_t i = 0; i < result.runs.size(); ++i) {
        const auto& run = result.runs[i];
        for (std::size_t k = 0; k < run.path.points.size(); ++k) {
            const auto& pt = run.path.points[k];
            int flag = 0;
            if (static_cast<int>(k) == run.path.selected) flag = static_cast<int>(i) == result.selected_run ? 2 : 1;
            out << run.L << ',' << csv::format_double(pt.lambda) << ',' << pt.fit.final_rank << ',' << pt.bic.nu
                << ',' << run.nstar << ',' << csv::format_double(pt.bic.value) << ','
                << csv::format_double(pt.normalized_loss) << ',' << flag << '\n';
        }
    }
    return out.str();
}

std::string component_summary_csv(const Dataset& dataset, const CPModel& model, int top_k)
{
    std::ostringstream out;
    out << "component,weight,net_direction,mode,position,label,loading\n";
    if (model.rank() == 0) return out.str();
    const auto table = component_table(model, top_k);
    auto emit = [&](int comp, const ComponentRow& row, const char* mode, const std::vector<Loading>& loadings,
                    auto&& label) {
        for (std::size_t k = 0; k < loadings.size(); ++k)
            out << comp << ',' << csv::format_double(row.weight) << ',' << csv::format_double(row.net_direction)
                << ',' << mode << ',' << (k + 1) << ',' << csv::escape(label(loadings[k].index)) << ','
                << csv::format_double(loadings[k].value) << '\n';
    };
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& row = table.rows[i];
        const int comp = static_cast<int>(i) + 1;
        emit(comp, row, "cell_type", row.top_cells,
             [&](int j) { return dataset.cell_types[static_cast<std::size_t>(j)]; });
        emit(comp, row, "time", row.top_times,
             [&](int j) { return short_double(dataset.times[static_cast<std::size_t>(j)]); });
        emit(comp, row, "gene", row.top_genes, [&](int j) { return dataset.genes[static_cast<std::size_t>(j)]; });
    }
    return out.str();
}

std::string trace_csv(const std::vector<TraceRow>& trace)
{
    std::ostringstream out;
    out << "outer_iter,rank,objective,max_beta_change,max_factor_change\n";
    for (const auto& row : trace)
        out << row.outer_iter << ',' << row.rank << ',' << csv::format_double(row.objective) << ','
            << csv::format_double(row.max_beta_change) << ',' << csv::format_double(row.max_factor_change) << '\n';
    return out.str();
}

std::string roc_csv(const RocResult& roc)
{
    std::ostringstream out;
    out << "fpr,tpr\n";
    for (const auto& pt : roc.points) out << csv::format_double(pt.fpr) << ',' << csv::format_double(pt.tpr) << '\n';
    return out.str();
}

/// Truth tensor plus the shape check against an estimate.
void check_shape(const Tensor3& estimate, const Tensor3& truth)
{
    if (!estimate.same_shape(truth))
        throw Error(ErrorKind::Validation,
                    "estimate shape " + std::to_string(estimate.genes()) + "x" + std::to_string(estimate.cell_types()) +
                        "x" + std::to_string(estimate.times()) + " does not match truth " +
                        std::to_string(truth.genes()) + "x" + std::to_string(truth.cell_types()) + "x" +
                        std::to_string(truth.times()));
}

struct Metrics {
    std::string method;
    double mse = 0.0;
    RocResult roc;
    int rank = -1;  // -1 for estimates without a CP form
};

std::string metrics_json(const Metrics& m, const Tensor3& truth, const std::vector<std::string>& warnings)
{
    ordered_json j;
    j["method"] = m.method;
    j["mse"] = m.mse;
    j["auc"] = m.roc.auc;
    j["shape"] = {truth.genes(), truth.cell_types(), truth.times()};
    if (m.rank >= 0) j["rank"] = m.rank;
    j["roc_points"] = m.roc.points.size();
    j["warnings"] = warnings;
    return j.dump(1) + "\n";
}

Metrics score(std::string method, const Tensor3& estimate, const Tensor3& truth, int rank)
{
    check_shape(estimate, truth);
    Metrics m;
    m.method = std::move(method);
    m.mse = coefficient_mse(estimate, truth);
    m.roc = roc_auc(estimate, truth);
    m.rank = rank;
    return m;
}

/// Refits the paired lasso on the dataset stored next to truth.json.
PairedLassoResult lasso_from_truth_dir(const fs::path& truth_path, const RunConfig& config)
{
    const auto dir = truth_path.parent_path().empty() ? fs::path(".") : truth_path.parent_path();
    auto dataset = load_dataset_dir(dir.string(), config.load);
    return paired_lasso(dataset, config.lasso);
}

} // namespace

int guarded(std::ostream& err, const std::function<void()>& body)
{
    try {
        body();
        return kExitOk;
    } catch (const Error& e) {
        err << "error (" << to_string(e.kind()) << "): " << e.what() << '\n';
        return e.is_numerical() ? kExitNumerical : kExitInput;
    } catch (const std::bad_alloc&) {
        err << "error: out of memory\n";
        return kExitNumerical;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitInput;
    }
}

RunConfig load_run_config(const std::string& path)
{
    if (path.empty()) {
        RunConfig config;
        apply_setting(config, "seed", std::to_string(config.seed));
        return config;
    }
    return load_config(path);
}

Dataset prepare_dataset(const std::string& data_dir, const RunConfig& config, std::ostream& err)
{
    auto dataset = load_dataset_dir(data_dir, config.load);
    if (config.gene_filter) {
        const auto panel = filter_genes(dataset, config.filter);
        err << "gene filter kept " << panel.size() << " of " << dataset.num_genes() << " genes\n";
        dataset = subset_to_panel(dataset, panel);
    }
    return dataset;
}

PathResult write_fit_outputs(const Dataset& dataset, const RunConfig& config, const std::string& out_dir,
                             std::ostream& err)
{
    const fs::path out(out_dir);
    ensure_dir(out);
    auto result = run_full(dataset, config.selection);
    report(err, result.warnings);
    const auto& chosen = *result.selected().selected();

    write_model_json(saved_model(dataset, result.final_model, config.seed), (out / "model.json").string());
    write_text(out / "path_report.csv", path_report_csv(result));
    write_text(out / "component_summary.csv", component_summary_csv(dataset, result.final_model, config.top_k));
    write_text(out / "objective_trace.csv", trace_csv(chosen.fit.trace));
    return result;
}

int cmd_fit(const std::string& data_dir, const std::string& config_path, const std::string& out_dir,
            std::ostream& err)
{
    return guarded(err, [&] {
        const auto config = load_run_config(config_path);
        Manifest manifest("fit", config);
        if (!config_path.empty()) manifest.input(config_path);
        const auto dataset = prepare_dataset(data_dir, config, err);
        manifest.input_dir(data_dir);

        const auto result = write_fit_outputs(dataset, config, out_dir, err);
        const fs::path out(out_dir);
        for (const char* name : {"model.json", "path_report.csv", "component_summary.csv", "objective_trace.csv"})
            manifest.output(out / name);
        manifest.warn(result.warnings);
        manifest.write(out);
        err << "selected L = " << result.selected().L << ", lambda = " << result.selected().selected()->lambda
            << ", rank = " << result.final_model.rank() << '\n';
    });
}

int cmd_simulate(const std::string& config_path, const std::string& out_dir, std::ostream& err)
{
    return guarded(err, [&] {
        const auto config = load_run_config(config_path);
        if (config.replicates < 1) throw Error(ErrorKind::Validation, "replicates must be >= 1");
        const auto plaques = config.plaques_grid.empty() ? std::vector<int>{config.sim.plaques} : config.plaques_grid;
        const auto sigma2 = config.sigma2_grid.empty() ? std::vector<double>{config.sim.sigma2} : config.sigma2_grid;

        struct Job {
            SimConfig sim;
            fs::path dir;
        };
        std::vector<Job> jobs;
        const fs::path out(out_dir);
        for (int M : plaques)
            for (double s2 : sigma2) {
                const auto cell = out / ("M" + std::to_string(M) + "_s2_" + short_double(s2));
                for (int r = 0; r < config.replicates; ++r) {
                    Job job{config.sim, {}};
                    job.sim.plaques = M;
                    job.sim.sigma2 = s2;
                    job.sim.seed = config.seed + static_cast<std::uint64_t>(r);
                    job.sim.validate();
                    char name[32];
                    std::snprintf(name, sizeof(name), "rep%03d", r + 1);
                    job.dir = cell / name;
                    jobs.push_back(std::move(job));
                }
            }

        Manifest manifest("simulate", config);
        if (!config_path.empty()) manifest.input(config_path);
        ensure_dir(out);

        std::vector<std::exception_ptr> failures(jobs.size());
        par::parallel_for<par::Schedule::Dynamic>(0, static_cast<std::ptrdiff_t>(jobs.size()), [&](std::ptrdiff_t i) {
            const auto& job = jobs[static_cast<std::size_t>(i)];
            try {
                ensure_dir(job.dir);
                write_replicate(generate_replicate(job.sim), job.dir.string());
            } catch (...) {
                failures[static_cast<std::size_t>(i)] = std::current_exception();
            }
        });
        for (const auto& f : failures)
            if (f) std::rethrow_exception(f);

        for (const auto& job : jobs)
            for (const char* name : {"samples.csv", "plaques.csv", "cells.csv", "expression.csv", "truth.json"})
                manifest.output(job.dir / name);
        manifest.write(out);
        err << "wrote " << jobs.size() << " replicate" << (jobs.size() == 1 ? "" : "s") << " under " << out_dir
            << '\n';
    });
}

int cmd_evaluate(const std::string& estimate, const std::string& truth_path, const std::string& config_path,
                 const std::string& out_dir, std::ostream& err)
{
    return guarded(err, [&] {
        const auto config = load_run_config(config_path);
        Manifest manifest("evaluate", config);
        if (!config_path.empty()) manifest.input(config_path);
        const auto truth = read_truth_tensor(truth_path);
        manifest.input(truth_path);

        Metrics m;
        std::vector<std::string> warnings;
        if (estimate == "paired-lasso") {
            auto fit = lasso_from_truth_dir(truth_path, config);
            warnings = std::move(fit.warnings);
            m = score("paired-lasso", fit.estimate, truth, -1);
        } else {
            const auto saved = read_model_json(estimate);
            manifest.input(estimate);
            m = score("proposed", reconstruct(saved.model), truth, saved.model.rank());
        }
        report(err, warnings);

        const fs::path out(out_dir);
        ensure_dir(out);
        write_text(out / "metrics.json", metrics_json(m, truth, warnings));
        write_text(out / "roc_points.csv", roc_csv(m.roc));
        manifest.output(out / "metrics.json");
        manifest.output(out / "roc_points.csv");
        manifest.warn(warnings);
        manifest.write(out);
        err << m.method << ": mse = " << m.mse << ", auc = " << m.roc.auc << '\n';
    });
}

int cmd_evaluate_batch(const std::string& grid_dir, const std::string& config_path, const std::string& out_dir,
                       std::ostream& err)
{
    return guarded(err, [&] {
        const auto config = load_run_config(config_path);
        Manifest manifest("evaluate-batch", config);
        if (!config_path.empty()) manifest.input(config_path);

        std::vector<fs::path> reps;
        if (!fs::is_directory(grid_dir)) throw Error(ErrorKind::Schema, "not a directory: " + grid_dir);
        for (const auto& cell : fs::directory_iterator(grid_dir)) {
            if (!cell.is_directory()) continue;
            for (const auto& rep : fs::directory_iterator(cell.path()))
                if (rep.is_directory() && fs::exists(rep.path() / "truth.json")) reps.push_back(rep.path());
        }
        if (reps.empty()) throw Error(ErrorKind::Schema, "no replicate directories with truth.json under " + grid_dir);
        std::sort(reps.begin(), reps.end());

        struct Row {
            int M = 0;
            double sigma2 = 0.0;
            std::string rep;
            Metrics proposed, lasso;
        };
        std::vector<Row> rows(reps.size());
        std::vector<std::exception_ptr> failures(reps.size());
        std::vector<std::ostringstream> logs(reps.size());

        // replicates are independent; each writes only inside its own fit/ dir
        par::parallel_for<par::Schedule::Dynamic>(0, static_cast<std::ptrdiff_t>(reps.size()), [&](std::ptrdiff_t i) {
            const auto u = static_cast<std::size_t>(i);
            const auto& dir = reps[u];
            try {
                std::ifstream in(dir / "truth.json");
                const auto j = nlohmann::json::parse(in);
                auto& row = rows[u];
                row.M = j.at("config").at("plaques").get<int>();
                row.sigma2 = j.at("config").at("sigma2").get<double>();
                row.rep = fs::relative(dir, grid_dir).generic_string();
                const auto truth = read_truth_tensor((dir / "truth.json").string());

                const auto model_path = dir / "fit" / "model.json";
                if (!fs::exists(model_path)) {
                    const auto dataset = load_dataset_dir(dir.string(), config.load);
                    write_fit_outputs(dataset, config, (dir / "fit").string(), logs[u]);
                }
                const auto saved = read_model_json(model_path.string());
                row.proposed = score("proposed", reconstruct(saved.model), truth, saved.model.rank());
                auto lasso = lasso_from_truth_dir(dir / "truth.json", config);
                row.lasso = score("paired-lasso", lasso.estimate, truth, -1);
            } catch (...) {
                failures[u] = std::current_exception();
            }
        });
        for (std::size_t i = 0; i < reps.size(); ++i) err << logs[i].str();
        for (const auto& f : failures)
            if (f) std::rethrow_exception(f);

        const fs::path out(out_dir);
        ensure_dir(out);

        std::ostringstream per;
        per << "M,sigma2,replicate,method,mse,auc,rank\n";
        for (const auto& r : rows)
            for (const Metrics* m : {&r.proposed, &r.lasso})
                per << r.M << ',' << short_double(r.sigma2) << ',' << csv::escape(r.rep) << ',' << m->method << ','
                    << csv::format_double(m->mse) << ',' << csv::format_double(m->roc.auc) << ','
                    << (m->rank >= 0 ? std::to_string(m->rank) : std::string()) << '\n';
        write_text(out / "replicate_metrics.csv", per.str());

        // aggregate per (M, sigma2, method) with sample standard deviations
        struct Acc {
            std::vector<double> mse, auc;
        };
        std::map<std::tuple<int, double, int>, Acc> groups;
        for (const auto& r : rows) {
            auto& a = groups[{r.M, r.sigma2, 0}];
            a.mse.push_back(r.proposed.mse);
            a.auc.push_back(r.proposed.roc.auc);
            auto& b = groups[{r.M, r.sigma2, 1}];
            b.mse.push_back(r.lasso.mse);
            b.auc.push_back(r.lasso.roc.auc);
        }
        auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
        auto sd = [&](const std::vector<double>& v) {
            if (v.size() < 2) return 0.0;
            const double mu = mean(v);
            double ss = 0.0;
            for (double x : v) ss += (x - mu) * (x - mu);
            return std::sqrt(ss / static_cast<double>(v.size() - 1));
        };
        std::ostringstream table;
        table << "M,sigma2,method,mse_mean,mse_sd,auc_mean,auc_sd,replicates\n";
        for (const auto& [key, acc] : groups) {
            const auto& [M, s2, method] = key;
            table << M << ',' << short_double(s2) << ',' << (method == 0 ? "proposed" : "paired-lasso") << ','
                  << csv::format_double(mean(acc.mse)) << ',' << csv::format_double(sd(acc.mse)) << ','
                  << csv::format_double(mean(acc.auc)) << ',' << csv::format_double(sd(acc.auc)) << ','
                  << acc.mse.size() << '\n';
        }
        write_text(out / "table1.csv", table.str());
        manifest.output(out / "table1.csv");
        manifest.output(out / "replicate_metrics.csv");
        manifest.write(out);
        err << "evaluated " << rows.size() << " replicates\n";
    });
}

int cmd_bandwidth_scan(const std::string& data_dir, const std::string& config_path, const std::string& out_dir,
                       std::ostream& err)
{
    return guarded(err, [&] {
        const auto config = load_run_config(config_path);
        Manifest manifest("bandwidth-scan", config);
        if (!config_path.empty()) manifest.input(config_path);
        const auto dataset = prepare_dataset(data_dir, config, err);
        manifest.input_dir(data_dir);

        const auto result = run_full(dataset, config.selection);
        report(err, result.warnings);

        std::ostringstream out;
        out << "L";
        for (const auto& s : dataset.samples) out << ',' << csv::escape("H_" + s.id);
        out << ",nstar,normalized_loss,selected_flag\n";
        for (std::size_t i = 0; i < result.runs.size(); ++i) {
            const auto& run = result.runs[i];
            out << run.L;
            for (double h : run.bandwidths) out << ',' << fixed2(h);
            out << ',' << run.nstar << ',';
            if (const auto* pt = run.selected(); pt && !run.excluded) out << csv::format_double(pt->normalized_loss);
            out << ',' << (static_cast<int>(i) == result.selected_run ? 1 : 0) << '\n';
        }
        const fs::path dir(out_dir);
        ensure_dir(dir);
        write_text(dir / "elbow_curve.csv", out.str());
        manifest.output(dir / "elbow_curve.csv");
        manifest.warn(result.warnings);
        manifest.write(dir);
        err << "elbow at L = " << result.selected().L << '\n';
    });
}

} // namespace kwcp
