#include "kwcp/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <unordered_map>

#include "kwcp/csv.hpp"
#include "kwcp/error.hpp"

namespace kwcp {

namespace {

struct CellRef {
    int sample = 0;
    int local = 0;
};

std::string sample_context(const Sample& s) { return "sample '" + s.id + "'"; }

bool finite_point(const Point& p) { return std::isfinite(p.x) && std::isfinite(p.y); }

} // namespace

void Dataset::validate() const
{
    const int p = num_genes();
    if (p < 1) throw Error(ErrorKind::Validation, "dataset has no genes");
    if (num_cell_types() < 1) throw Error(ErrorKind::Validation, "dataset has no cell types");
    if (num_times() < 1) throw Error(ErrorKind::Validation, "dataset has no time points");
    if (samples.empty()) throw Error(ErrorKind::Validation, "dataset has no samples");
    for (const auto& s : samples) {
        if (s.time_index < 0 || s.time_index >= num_times())
            throw Error(ErrorKind::Validation, sample_context(s) + ": time index out of range");
        if (s.plaques.empty()) throw Error(ErrorKind::Validation, sample_context(s) + ": no plaques (M_i = 0)");
        if (s.cell_locations.empty()) throw Error(ErrorKind::Validation, sample_context(s) + ": no cells (N_i = 0)");
        const auto n = s.cell_locations.size();
        if (s.cell_types.size() != n || s.cell_ids.size() != n || static_cast<std::size_t>(s.expression.rows()) != n)
            throw Error(ErrorKind::Validation, sample_context(s) + ": inconsistent cell arrays");
        if (s.expression.cols() != p)
            throw Error(ErrorKind::Validation, sample_context(s) + ": expression width differs from gene count");
        for (const auto& pl : s.plaques) {
            if (!finite_point(pl.location) || !std::isfinite(pl.outcome))
                throw Error(ErrorKind::Validation, sample_context(s) + ": plaque '" + pl.id + "' not finite");
        }
        for (std::size_t k = 0; k < n; ++k) {
            if (!finite_point(s.cell_locations[k]))
                throw Error(ErrorKind::Validation, sample_context(s) + ": cell '" + s.cell_ids[k] + "' not finite");
            if (s.cell_types[k] < 0 || s.cell_types[k] >= num_cell_types())
                throw Error(ErrorKind::Validation, sample_context(s) + ": cell type index out of range");
        }
        if (!s.expression.allFinite())
            throw Error(ErrorKind::Validation, sample_context(s) + ": non-finite expression value");
    }
}

Dataset load_dataset(const std::string& cells_path, const std::string& expression_path,
                     const std::string& plaques_path, const std::string& samples_path, const LoadOptions& options)
{
    Dataset ds;

    // samples.csv
    const auto samples_tab = csv::read(samples_path);
    const auto c_sid = samples_tab.column("sample_id");
    const auto c_time = samples_tab.column("time_value");
    std::unordered_map<std::string, int> sample_index;
    std::vector<double> raw_times;
    for (std::size_t r = 0; r < samples_tab.rows.size(); ++r) {
        const auto& row = samples_tab.rows[r];
        Sample s;
        s.id = row[c_sid];
        if (sample_index.count(s.id))
            throw Error(ErrorKind::Validation, samples_path + ": duplicate sample_id '" + s.id + "'");
        raw_times.push_back(csv::parse_double(row[c_time], samples_tab, r, "time_value"));
        sample_index.emplace(s.id, static_cast<int>(ds.samples.size()));
        ds.samples.push_back(std::move(s));
    }
    std::vector<double> distinct = raw_times;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    ds.times = distinct;
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        ds.samples[i].time_index =
            static_cast<int>(std::lower_bound(distinct.begin(), distinct.end(), raw_times[i]) - distinct.begin());
    }

    auto lookup_sample = [&](const std::string& id, const csv::Table& tab, std::size_t r) -> Sample& {
        auto it = sample_index.find(id);
        if (it == sample_index.end()) {
            throw Error(ErrorKind::ReferentialIntegrity,
                        tab.path + ": row " + std::to_string(r + 2) + " references unknown sample_id '" + id + "'");
        }
        return ds.samples[static_cast<std::size_t>(it->second)];
    };

    // plaques.csv
    const auto plaques_tab = csv::read(plaques_path);
    {
        const auto c_s = plaques_tab.column("sample_id");
        const auto c_id = plaques_tab.column("plaque_id");
        const auto c_x = plaques_tab.column("x_um");
        const auto c_y = plaques_tab.column("y_um");
        const auto c_size = plaques_tab.column("size");
        for (std::size_t r = 0; r < plaques_tab.rows.size(); ++r) {
            const auto& row = plaques_tab.rows[r];
            auto& s = lookup_sample(row[c_s], plaques_tab, r);
            Plaque pl;
            pl.id = row[c_id];
            pl.location = {csv::parse_double(row[c_x], plaques_tab, r, "x_um"),
                           csv::parse_double(row[c_y], plaques_tab, r, "y_um")};
            pl.outcome = csv::parse_double(row[c_size], plaques_tab, r, "size");
            s.plaques.push_back(std::move(pl));
        }
    }

    // cells.csv
    const auto cells_tab = csv::read(cells_path);
    std::unordered_map<std::string, CellRef> cell_index;
    std::vector<std::string> raw_types;
    {
        const auto c_s = cells_tab.column("sample_id");
        const auto c_id = cells_tab.column("cell_id");
        const auto c_x = cells_tab.column("x_um");
        const auto c_y = cells_tab.column("y_um");
        const auto c_type = cells_tab.column("cell_type");
        std::set<std::string> labels;
        for (const auto& row : cells_tab.rows) labels.insert(row[c_type]);
        ds.cell_types.assign(labels.begin(), labels.end());
        std::unordered_map<std::string, int> type_code;
        for (std::size_t i = 0; i < ds.cell_types.size(); ++i) type_code.emplace(ds.cell_types[i], static_cast<int>(i));

        cell_index.reserve(cells_tab.rows.size());
        for (std::size_t r = 0; r < cells_tab.rows.size(); ++r) {
            const auto& row = cells_tab.rows[r];
            auto& s = lookup_sample(row[c_s], cells_tab, r);
            const auto sidx = sample_index.at(row[c_s]);
            const auto& cid = row[c_id];
            if (!cell_index.emplace(cid, CellRef{sidx, static_cast<int>(s.cell_ids.size())}).second)
                throw Error(ErrorKind::Validation, cells_path + ": duplicate cell_id '" + cid + "'");
            s.cell_ids.push_back(cid);
            s.cell_locations.push_back({csv::parse_double(row[c_x], cells_tab, r, "x_um"),
                                        csv::parse_double(row[c_y], cells_tab, r, "y_um")});
            s.cell_types.push_back(type_code.at(row[c_type]));
        }
    }

    // expression
    std::ifstream in(expression_path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Schema, expression_path + ": cannot open file");
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorKind::Schema, expression_path + ": empty file (header required)");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);
    csv::Table header_only;
    header_only.path = expression_path;
    header_only.header = csv::split_line(line);

    std::vector<char> seen;
    auto seen_flag = [&](const CellRef& ref) -> char& {
        std::size_t offset = 0;
        for (int i = 0; i < ref.sample; ++i) offset += ds.samples[static_cast<std::size_t>(i)].cell_ids.size();
        return seen[offset + static_cast<std::size_t>(ref.local)];
    };
    std::size_t total_cells = 0;
    for (const auto& s : ds.samples) total_cells += s.cell_ids.size();
    seen.assign(total_cells, 0);

    auto find_cell = [&](const std::string& cid, std::size_t row) -> CellRef {
        auto it = cell_index.find(cid);
        if (it == cell_index.end()) {
            throw Error(ErrorKind::ReferentialIntegrity, expression_path + ": row " + std::to_string(row + 2) +
                                                             ": cell_id '" + cid + "' not present in " + cells_path);
        }
        return it->second;
    };

    if (options.expression_format == ExpressionFormat::Wide) {
        const auto c_id = header_only.column("cell_id");
        for (std::size_t i = 0; i < header_only.header.size(); ++i)
            if (i != c_id) ds.genes.push_back(header_only.header[i]);
        const auto p = static_cast<Eigen::Index>(ds.genes.size());
        for (auto& s : ds.samples) s.expression = RowMatrix::Zero(static_cast<Eigen::Index>(s.cell_ids.size()), p);
        std::size_t r = 0;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            auto fields = csv::split_line(line);
            if (fields.size() != header_only.header.size()) {
                throw Error(ErrorKind::Schema, expression_path + ": row " + std::to_string(r + 2) +
                                                   " has wrong field count");
            }
            const auto ref = find_cell(fields[c_id], r);
            auto& flag = seen_flag(ref);
            if (flag) throw Error(ErrorKind::Validation, expression_path + ": duplicate cell_id '" + fields[c_id] + "'");
            flag = 1;
            auto& s = ds.samples[static_cast<std::size_t>(ref.sample)];
            Eigen::Index g = 0;
            for (std::size_t i = 0; i < fields.size(); ++i) {
                if (i == c_id) continue;
                s.expression(ref.local, g) = csv::parse_double(fields[i], header_only, r, header_only.header[i]);
                ++g;
            }
            ++r;
        }
    } else {
        const auto c_id = header_only.column("cell_id");
        const auto c_gene = header_only.column("gene");
        const auto c_val = header_only.column("value");
        struct Entry {
            CellRef ref;
            int gene;
            double value;
        };
        std::vector<Entry> entries;
        std::unordered_map<std::string, int> gene_code;
        std::size_t r = 0;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            auto fields = csv::split_line(line);
            if (fields.size() != header_only.header.size()) {
                throw Error(ErrorKind::Schema, expression_path + ": row " + std::to_string(r + 2) +
                                                   " has wrong field count");
            }
            const auto ref = find_cell(fields[c_id], r);
            seen_flag(ref) = 1;
            auto [it, inserted] = gene_code.emplace(fields[c_gene], static_cast<int>(ds.genes.size()));
            if (inserted) ds.genes.push_back(fields[c_gene]);
            entries.push_back({ref, it->second, csv::parse_double(fields[c_val], header_only, r, "value")});
            ++r;
        }
        const auto p = static_cast<Eigen::Index>(ds.genes.size());
        for (auto& s : ds.samples) s.expression = RowMatrix::Zero(static_cast<Eigen::Index>(s.cell_ids.size()), p);
        for (const auto& e : entries)
            ds.samples[static_cast<std::size_t>(e.ref.sample)].expression(e.ref.local, e.gene) = e.value;
    }

    {
        std::size_t offset = 0;
        for (const auto& s : ds.samples) {
            for (std::size_t k = 0; k < s.cell_ids.size(); ++k) {
                if (!seen[offset + k]) {
                    throw Error(ErrorKind::ReferentialIntegrity, cells_path + ": cell_id '" + s.cell_ids[k] +
                                                                     "' has no row in " + expression_path);
                }
            }
            offset += s.cell_ids.size();
        }
    }

    if (options.zscore_genes) zscore_genes(ds);
    ds.validate();
    return ds;
}

Dataset load_dataset_dir(const std::string& dir, const LoadOptions& options)
{
    namespace fs = std::filesystem;
    const fs::path root(dir);
    for (const char* name : {"samples.csv", "plaques.csv", "cells.csv", "expression.csv"}) {
        if (!fs::exists(root / name))
            throw Error(ErrorKind::Schema, "missing input file " + (root / name).string());
    }
    return load_dataset((root / "cells.csv").string(), (root / "expression.csv").string(),
                        (root / "plaques.csv").string(), (root / "samples.csv").string(), options);
}

void write_dataset_dir(const Dataset& dataset, const std::string& dir)
{
    namespace fs = std::filesystem;
    const fs::path root(dir);
    fs::create_directories(root);
    auto open = [&](const char* name) {
        std::ofstream out(root / name, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorKind::Schema, "cannot write " + (root / name).string());
        return out;
    };

    auto samples = open("samples.csv");
    samples << "sample_id,time_value\n";
    for (const auto& s : dataset.samples)
        samples << csv::escape(s.id) << ',' << csv::format_double(dataset.times[static_cast<std::size_t>(s.time_index)])
                << '\n';

    auto plaques = open("plaques.csv");
    plaques << "sample_id,plaque_id,x_um,y_um,size\n";
    for (const auto& s : dataset.samples)
        for (const auto& pl : s.plaques)
            plaques << csv::escape(s.id) << ',' << csv::escape(pl.id) << ',' << csv::format_double(pl.location.x) << ','
                    << csv::format_double(pl.location.y) << ',' << csv::format_double(pl.outcome) << '\n';

    auto cells = open("cells.csv");
    cells << "sample_id,cell_id,x_um,y_um,cell_type\n";
    for (const auto& s : dataset.samples)
        for (std::size_t k = 0; k < s.cell_ids.size(); ++k)
            cells << csv::escape(s.id) << ',' << csv::escape(s.cell_ids[k]) << ','
                  << csv::format_double(s.cell_locations[k].x) << ',' << csv::format_double(s.cell_locations[k].y)
                  << ',' << csv::escape(dataset.cell_types[static_cast<std::size_t>(s.cell_types[k])]) << '\n';

    auto expr = open("expression.csv");
    expr << "cell_id";
    for (const auto& g : dataset.genes) expr << ',' << csv::escape(g);
    expr << '\n';
    for (const auto& s : dataset.samples) {
        for (std::size_t k = 0; k < s.cell_ids.size(); ++k) {
            expr << csv::escape(s.cell_ids[k]);
            for (Eigen::Index l = 0; l < s.expression.cols(); ++l)
                expr << ',' << csv::format_double(s.expression(static_cast<Eigen::Index>(k), l));
            expr << '\n';
        }
    }
}

GenePanel filter_genes(const Dataset& dataset, const GeneFilterOptions& options)
{
    if (!(options.min_detect_frac >= 0.0 && options.min_detect_frac <= 1.0))
        throw Error(ErrorKind::Domain, "min_detect_frac must lie in [0, 1]");
    if (!(options.near_radius_um > 0.0)) throw Error(ErrorKind::Domain, "near_radius_um must be positive");

    const int p = dataset.num_genes();
    std::vector<char> forced(static_cast<std::size_t>(p), 0);
    for (const auto& name : options.forced_includes) {
        auto it = std::find(dataset.genes.begin(), dataset.genes.end(), name);
        if (it == dataset.genes.end()) throw Error(ErrorKind::UnknownGene, "forced gene '" + name + "' not in dataset");
        forced[static_cast<std::size_t>(it - dataset.genes.begin())] = 1;
    }

    // per (sample, cell type) stratum: near-plaque cell count and per-gene
    // nonzero counts
    std::vector<char> passes_all(static_cast<std::size_t>(p), 1);
    std::vector<char> passes_any(static_cast<std::size_t>(p), 0);
    bool any_stratum = false;
    for (const auto& s : dataset.samples) {
        std::vector<Point> plaque_xy;
        for (const auto& pl : s.plaques) plaque_xy.push_back(pl.location);
        SpatialGrid grid(plaque_xy, options.near_radius_um);
        const int C = dataset.num_cell_types();
        std::vector<long> count(static_cast<std::size_t>(C), 0);
        Eigen::MatrixXd detected = Eigen::MatrixXd::Zero(C, p);
        for (std::size_t k = 0; k < s.num_cells(); ++k) {
            const auto nearest = grid.nearest(s.cell_locations[k]);
            if (distance(s.cell_locations[k], plaque_xy[static_cast<std::size_t>(nearest)]) > options.near_radius_um)
                continue;
            const int c = s.cell_types[k];
            ++count[static_cast<std::size_t>(c)];
            for (int l = 0; l < p; ++l)
                if (s.expression(static_cast<Eigen::Index>(k), l) != 0.0) detected(c, l) += 1.0;
        }
        for (int c = 0; c < C; ++c) {
            if (count[static_cast<std::size_t>(c)] == 0) continue;
            any_stratum = true;
            for (int l = 0; l < p; ++l) {
                const double frac = detected(c, l) / static_cast<double>(count[static_cast<std::size_t>(c)]);
                if (frac > options.min_detect_frac) passes_any[static_cast<std::size_t>(l)] = 1;
                else passes_all[static_cast<std::size_t>(l)] = 0;
            }
        }
    }

    GenePanel panel;
    for (int l = 0; l < p; ++l) {
        const bool detect = any_stratum && (options.rule == StratumRule::All ? passes_all[static_cast<std::size_t>(l)]
                                                                             : passes_any[static_cast<std::size_t>(l)]);
        if (detect) {
            panel.kept_indices.push_back(l);
            panel.provenance.push_back(PanelReason::DetectionFilter);
        } else if (forced[static_cast<std::size_t>(l)]) {
            panel.kept_indices.push_back(l);
            panel.provenance.push_back(PanelReason::ForcedInclude);
        }
    }
    return panel;
}

GenePanel full_panel(const Dataset& dataset)
{
    GenePanel panel;
    for (int l = 0; l < dataset.num_genes(); ++l) {
        panel.kept_indices.push_back(l);
        panel.provenance.push_back(PanelReason::DetectionFilter);
    }
    return panel;
}

Dataset subset_to_panel(const Dataset& dataset, const GenePanel& panel)
{
    const int p = dataset.num_genes();
    for (std::size_t i = 0; i < panel.kept_indices.size(); ++i) {
        const int l = panel.kept_indices[i];
        if (l < 0 || l >= p) throw Error(ErrorKind::Validation, "panel index out of range");
        if (i > 0 && panel.kept_indices[i - 1] >= l) throw Error(ErrorKind::Validation, "panel indices not ascending");
    }
    Dataset out;
    out.cell_types = dataset.cell_types;
    out.times = dataset.times;
    for (int l : panel.kept_indices) out.genes.push_back(dataset.genes[static_cast<std::size_t>(l)]);
    const auto q = static_cast<Eigen::Index>(panel.kept_indices.size());
    for (const auto& s : dataset.samples) {
        Sample t;
        t.id = s.id;
        t.time_index = s.time_index;
        t.plaques = s.plaques;
        t.cell_ids = s.cell_ids;
        t.cell_locations = s.cell_locations;
        t.cell_types = s.cell_types;
        t.expression.resize(s.expression.rows(), q);
        for (Eigen::Index j = 0; j < q; ++j)
            t.expression.col(j) = s.expression.col(panel.kept_indices[static_cast<std::size_t>(j)]);
        out.samples.push_back(std::move(t));
    }
    return out;
}

void zscore_genes(Dataset& dataset)
{
    const int p = dataset.num_genes();
    for (int l = 0; l < p; ++l) {
        double n = 0.0, sum = 0.0, sumsq = 0.0;
        for (const auto& s : dataset.samples) {
            n += static_cast<double>(s.expression.rows());
            sum += s.expression.col(l).sum();
        }
        if (n == 0.0) continue;
        const double mean = sum / n;
        for (const auto& s : dataset.samples) sumsq += (s.expression.col(l).array() - mean).square().sum();
        const double sd = std::sqrt(sumsq / n);
        for (auto& s : dataset.samples) {
            s.expression.col(l).array() -= mean;
            if (sd > 0.0) s.expression.col(l).array() /= sd;
        }
    }
}

} // namespace kwcp
