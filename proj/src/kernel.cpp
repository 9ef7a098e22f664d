#include "kwcp/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "kwcp/csv.hpp"
#include "kwcp/error.hpp"
#include "kwcp/parallel.hpp"

namespace kwcp {

double epanechnikov_weight(double d, double h)
{
    if (!(h > 0.0)) throw Error(ErrorKind::Domain, "kernel bandwidth must be positive");
    const double u = d / h;
    if (u >= 1.0) return 0.0;
    return 0.75 * (1.0 - u * u) / h;
}

std::vector<double> BandwidthTable::bandwidths_for(int L) const
{
    for (std::size_t i = 0; i < neighbor_counts.size(); ++i)
        if (neighbor_counts[i] == L) return values[i];
    throw Error(ErrorKind::Validation, "L = " + std::to_string(L) + " not in the bandwidth table");
}

namespace {

double median_of(std::vector<double> v)
{
    const auto n = v.size();
    std::sort(v.begin(), v.end());
    if (n % 2 == 1) return v[n / 2];
    return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace

std::vector<double> bandwidth_candidates(const Sample& sample, const std::vector<int>& neighbor_counts)
{
    const auto N = static_cast<int>(sample.num_cells());
    int max_L = 0;
    for (int L : neighbor_counts) {
        if (L < 1) throw Error(ErrorKind::Validation, "neighbor count L must be >= 1");
        if (L > N) {
            throw Error(ErrorKind::InsufficientCells, "sample '" + sample.id + "' has " + std::to_string(N) +
                                                          " cells, fewer than L = " + std::to_string(L));
        }
        max_L = std::max(max_L, L);
    }
    const auto M = static_cast<std::ptrdiff_t>(sample.num_plaques());
    // kth[j][g] = distance from plaque j to its neighbor_counts[g]-th closest cell
    std::vector<std::vector<double>> kth(static_cast<std::size_t>(M));
    par::parallel_for(0, M, [&](std::ptrdiff_t j) {
        const auto& u = sample.plaques[static_cast<std::size_t>(j)].location;
        std::vector<double> d(static_cast<std::size_t>(N));
        for (int k = 0; k < N; ++k) d[static_cast<std::size_t>(k)] = distance(u, sample.cell_locations[static_cast<std::size_t>(k)]);
        std::partial_sort(d.begin(), d.begin() + max_L, d.end());
        auto& out = kth[static_cast<std::size_t>(j)];
        out.reserve(neighbor_counts.size());
        for (int L : neighbor_counts) out.push_back(d[static_cast<std::size_t>(L - 1)]);
    });
    std::vector<double> H;
    for (std::size_t g = 0; g < neighbor_counts.size(); ++g) {
        std::vector<double> e;
        e.reserve(static_cast<std::size_t>(M));
        for (const auto& row : kth) e.push_back(row[g]);
        H.push_back(median_of(std::move(e)));
    }
    return H;
}

BandwidthTable bandwidth_candidates(const Dataset& dataset, const std::vector<int>& neighbor_counts)
{
    BandwidthTable table;
    table.neighbor_counts = neighbor_counts;
    table.values.assign(neighbor_counts.size(), std::vector<double>(dataset.samples.size(), 0.0));
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
        const auto H = bandwidth_candidates(dataset.samples[i], neighbor_counts);
        for (std::size_t g = 0; g < H.size(); ++g) table.values[g][i] = H[g];
    }
    return table;
}

namespace {

void check_bandwidths(const Dataset& dataset, const std::vector<double>& bandwidths)
{
    if (bandwidths.size() != dataset.samples.size())
        throw Error(ErrorKind::Validation, "one bandwidth per sample required");
    for (double h : bandwidths)
        if (!(h > 0.0) || !std::isfinite(h)) throw Error(ErrorKind::Domain, "kernel bandwidth must be positive");
}

} // namespace

KernelWeightSet compute_weights(const Dataset& dataset, const std::vector<double>& bandwidths)
{
    check_bandwidths(dataset, bandwidths);
    KernelWeightSet out;
    out.bandwidths = bandwidths;
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
        const auto& s = dataset.samples[i];
        const double h = bandwidths[i];
        SpatialGrid grid(s.cell_locations, h);
        const auto M = static_cast<std::ptrdiff_t>(s.num_plaques());
        std::vector<std::vector<WeightTriple>> per_plaque(static_cast<std::size_t>(M));
        par::parallel_for<par::Schedule::Dynamic>(0, M, [&](std::ptrdiff_t j) {
            const auto& u = s.plaques[static_cast<std::size_t>(j)].location;
            auto& bucket = per_plaque[static_cast<std::size_t>(j)];
            for (auto k : grid.candidates(u, h)) {
                const double d = distance(u, s.cell_locations[static_cast<std::size_t>(k)]);
                const double w = epanechnikov_weight(d, h);
                if (w > 0.0)
                    bucket.push_back({static_cast<std::int32_t>(i), static_cast<std::int32_t>(j),
                                      static_cast<std::int32_t>(k), d, w});
            }
        });
        for (auto& bucket : per_plaque) out.triples.insert(out.triples.end(), bucket.begin(), bucket.end());
    }
    return out;
}

KernelWeightSet compute_weights_serial(const Dataset& dataset, const std::vector<double>& bandwidths)
{
    check_bandwidths(dataset, bandwidths);
    KernelWeightSet out;
    out.bandwidths = bandwidths;
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
        const auto& s = dataset.samples[i];
        for (std::size_t j = 0; j < s.num_plaques(); ++j) {
            for (std::size_t k = 0; k < s.num_cells(); ++k) {
                const double d = distance(s.plaques[j].location, s.cell_locations[k]);
                const double w = epanechnikov_weight(d, bandwidths[i]);
                if (w > 0.0)
                    out.triples.push_back({static_cast<std::int32_t>(i), static_cast<std::int32_t>(j),
                                           static_cast<std::int32_t>(k), d, w});
            }
        }
    }
    return out;
}

void write_weights_csv(const Dataset& dataset, const KernelWeightSet& weights, const std::string& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Schema, "cannot write " + path);
    out << "sample_id,plaque_id,cell_id,distance_um,weight\n";
    for (const auto& t : weights.triples) {
        const auto& s = dataset.samples[static_cast<std::size_t>(t.sample)];
        out << csv::escape(s.id) << ',' << csv::escape(s.plaques[static_cast<std::size_t>(t.plaque)].id) << ','
            << csv::escape(s.cell_ids[static_cast<std::size_t>(t.cell)]) << ',' << csv::format_double(t.distance)
            << ',' << csv::format_double(t.weight) << '\n';
    }
}

} // namespace kwcp
