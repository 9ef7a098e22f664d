#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "kwcp/cp_model.hpp"
#include "kwcp/dataset.hpp"
#include "kwcp/design.hpp"
#include "kwcp/kernel.hpp"

namespace fixtures {

/// Uniform random dataset: one sample per time point, cells and plaques in
/// a side x side square, N(0,1) expression, outcomes from a random linear
/// model plus noise.
inline kwcp::Dataset random_dataset(std::uint64_t seed, int p, int C, int T, int plaques = 12, int cells = 60,
                                    double side = 100.0)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> pos(0.0, side);
    std::normal_distribution<double> z(0.0, 1.0);
    kwcp::Dataset ds;
    for (int l = 0; l < p; ++l) ds.genes.push_back("g" + std::to_string(l));
    for (int c = 0; c < C; ++c) ds.cell_types.push_back("type" + std::to_string(c));
    for (int t = 0; t < T; ++t) ds.times.push_back(static_cast<double>(t));
    for (int t = 0; t < T; ++t) {
        kwcp::Sample s;
        s.id = "s" + std::to_string(t);
        s.time_index = t;
        s.expression.resize(cells, p);
        for (int k = 0; k < cells; ++k) {
            s.cell_ids.push_back(s.id + "_c" + std::to_string(k));
            s.cell_locations.push_back({pos(rng), pos(rng)});
            s.cell_types.push_back(k % C);
            for (int l = 0; l < p; ++l) s.expression(k, l) = z(rng);
        }
        for (int j = 0; j < plaques; ++j)
            s.plaques.push_back({s.id + "_p" + std::to_string(j), {pos(rng), pos(rng)}, 2.0 * z(rng)});
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

/// Random CP model with unit-norm factors and positive weights.
inline kwcp::CPModel random_model(std::uint64_t seed, int p, int C, int T, int R)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.5, 3.0);
    kwcp::CPModel m(p, C, T, R);
    for (int r = 0; r < R; ++r) {
        m.w(r) = u(rng);
        for (int l = 0; l < p; ++l) m.q1(l, r) = z(rng);
        for (int c = 0; c < C; ++c) m.q2(c, r) = z(rng);
        for (int t = 0; t < T; ++t) m.q3(t, r) = z(rng);
    }
    return kwcp::renormalize(m);
}

struct Problem {
    kwcp::Dataset dataset;
    kwcp::KernelWeightSet weights;
    kwcp::KernelDesign design;
    kwcp::StratumStats stats;
};

inline Problem make_problem(std::uint64_t seed, int p, int C, int T, double h = 35.0, int plaques = 12,
                            int cells = 60)
{
    Problem pr;
    pr.dataset = random_dataset(seed, p, C, T, plaques, cells);
    pr.weights = kwcp::compute_weights(pr.dataset, std::vector<double>(static_cast<std::size_t>(T), h));
    pr.design = kwcp::build_design(pr.dataset, pr.weights);
    pr.stats = kwcp::stratum_stats(pr.design);
    return pr;
}

struct HandTriple {
    int cell;
    double weight;
    double y;
    int plaque;
};

/// Design assembled by hand. Cells must be listed in stratum order;
/// `strata` gives each cell's stratum c * T + t (all 0 when omitted).
inline kwcp::KernelDesign hand_design(const Eigen::MatrixXd& x, const std::vector<HandTriple>& triples, int plaques,
                                      int C = 1, int T = 1, std::vector<int> strata = {})
{
    kwcp::KernelDesign d;
    d.p = static_cast<int>(x.cols());
    d.C = C;
    d.T = T;
    const auto n = x.rows();
    if (strata.empty()) strata.assign(static_cast<std::size_t>(n), 0);
    d.x = x;
    d.kappa = Eigen::VectorXd::Zero(n);
    d.g = Eigen::VectorXd::Zero(n);
    d.triple_offsets.assign(static_cast<std::size_t>(n) + 1, 0);
    for (Eigen::Index a = 0; a < n; ++a) {
        d.cell_sample.push_back(0);
        d.cell_index.push_back(static_cast<std::int32_t>(a));
        d.cell_stratum.push_back(strata[static_cast<std::size_t>(a)]);
        for (const auto& t : triples)
            if (t.cell == a) {
                d.triple_weight.push_back(t.weight);
                d.triple_outcome.push_back(t.y);
                d.triple_plaque.push_back(t.plaque);
                d.kappa(a) += t.weight;
                d.g(a) += t.weight * t.y;
            }
        d.triple_offsets[static_cast<std::size_t>(a) + 1] = static_cast<std::int64_t>(d.triple_weight.size());
    }
    d.stratum_offsets.assign(static_cast<std::size_t>(C * T) + 1, 0);
    for (int s = 0; s < C * T; ++s) {
        std::int64_t count = 0;
        for (int v : strata) count += v <= s;
        d.stratum_offsets[static_cast<std::size_t>(s) + 1] = count;
    }
    d.plaque_offsets = {0, plaques};
    return d;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name)
{
    auto dir = std::filesystem::temp_directory_path() / ("kwcp_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

/// A small, fast simulation setting shared by the CLI-level tests.
inline const char* small_sim_config()
{
    return "spots_mean = 900\n"
           "section_um = 400\n"
           "genes = 8\n"
           "active_genes = 3\n"
           "true_rank = 2\n"
           "plaques = 24\n"
           "sigma2 = 1\n"
           "neighbor_counts = 5, 10, 15\n"
           "r_max = 3\n"
           "max_outer_iters = 400\n"
           "path_max_steps = 25\n"
           "seed = 7\n";
}

} // namespace fixtures
