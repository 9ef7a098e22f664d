#include "kwcp/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>

#include <json.hpp>

#include "kwcp/error.hpp"

namespace kwcp {

void SimConfig::validate() const
{
    auto require = [](bool ok, const char* what) {
        if (!ok) throw Error(ErrorKind::Validation, std::string("simulation config: ") + what);
    };
    require(spots_mean > 0.0, "spots_mean must be positive");
    require(section_um > 0.0, "section_um must be positive");
    require(grid_jitter >= 0.0 && grid_jitter <= 0.5, "grid_jitter must lie in [0, 0.5]");
    require(groups >= 1, "groups must be >= 1");
    require(times >= 1, "times must be >= 1");
    require(genes >= 1, "genes must be >= 1");
    require(active_genes >= 0 && active_genes <= genes, "active_genes must lie in [0, genes]");
    require(true_rank >= 1, "true_rank must be >= 1");
    require(plaques >= groups, "plaques must be >= groups");
    require(sigma2 >= 0.0 && std::isfinite(sigma2), "sigma2 must be >= 0");
    require(phi > 0.0, "phi must be positive");
    require(shifted_gene_frac >= 0.0 && shifted_gene_frac <= 1.0, "shifted_gene_frac must lie in [0, 1]");
    require(group_shift_sd >= 0.0 && field_sd >= 0.0 && noise_sd >= 0.0, "standard deviations must be >= 0");
    require(field_scale_um > 0.0, "field_scale_um must be positive");
    require(field_features >= 1, "field_features must be >= 1");
    require(kmeans_iters >= 1, "kmeans_iters must be >= 1");
}

namespace {

// Lloyd iterations from a k-means++ start; labels then renumbered by the
// x coordinate of the centroids so that they do not depend on the start.
std::vector<int> kmeans_labels(const std::vector<Point>& pts, int k, int iters, Rng& rng)
{
    const auto n = pts.size();
    std::vector<Point> centers;
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    centers.push_back(pts[pick(rng)]);
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    while (static_cast<int>(centers.size()) < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = distance(pts[i], centers.back());
            d2[i] = std::min(d2[i], d * d);
            total += d2[i];
        }
        std::uniform_real_distribution<double> u(0.0, total);
        double target = u(rng), acc = 0.0;
        std::size_t chosen = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
            acc += d2[i];
            if (acc >= target) {
                chosen = i;
                break;
            }
        }
        centers.push_back(pts[chosen]);
    }

    std::vector<int> label(n, 0);
    for (int it = 0; it < iters; ++it) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            int best = 0;
            double bd = std::numeric_limits<double>::infinity();
            for (int c = 0; c < k; ++c) {
                const double d = distance(pts[i], centers[static_cast<std::size_t>(c)]);
                if (d < bd) {
                    bd = d;
                    best = c;
                }
            }
            changed = changed || label[i] != best;
            label[i] = best;
        }
        std::vector<Point> sum(static_cast<std::size_t>(k), Point{0.0, 0.0});
        std::vector<std::size_t> count(static_cast<std::size_t>(k), 0);
        for (std::size_t i = 0; i < n; ++i) {
            auto& s = sum[static_cast<std::size_t>(label[i])];
            s.x += pts[i].x;
            s.y += pts[i].y;
            ++count[static_cast<std::size_t>(label[i])];
        }
        for (int c = 0; c < k; ++c)
            if (count[static_cast<std::size_t>(c)] > 0) {
                const auto m = static_cast<double>(count[static_cast<std::size_t>(c)]);
                centers[static_cast<std::size_t>(c)] = {sum[static_cast<std::size_t>(c)].x / m,
                                                        sum[static_cast<std::size_t>(c)].y / m};
            }
        if (!changed && it > 0) break;
    }

    std::vector<int> order(static_cast<std::size_t>(k));
    for (int c = 0; c < k; ++c) order[static_cast<std::size_t>(c)] = c;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return centers[static_cast<std::size_t>(a)].x < centers[static_cast<std::size_t>(b)].x;
    });
    std::vector<int> rank(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) rank[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = i;
    for (auto& l : label) l = rank[static_cast<std::size_t>(l)];
    return label;
}

std::string padded(const std::string& prefix, long value, int width)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%0*ld", width, value);
    return prefix + buf;
}

int digits(long n)
{
    int d = 1;
    while (n >= 10) {
        n /= 10;
        ++d;
    }
    return d;
}

} // namespace

SimSpots generate_sample(const SimConfig& config, int sample_index, Rng& rng)
{
    (void)sample_index;
    config.validate();
    std::poisson_distribution<long> poisson(config.spots_mean);
    const long n = std::max<long>(poisson(rng), config.groups);

    // jittered grid: n of the side x side lattice sites, chosen at random
    const auto side = static_cast<long>(std::ceil(std::sqrt(static_cast<double>(n))));
    const double pitch = config.section_um / static_cast<double>(side);
    std::vector<long> sites(static_cast<std::size_t>(side * side));
    for (long i = 0; i < side * side; ++i) sites[static_cast<std::size_t>(i)] = i;
    std::shuffle(sites.begin(), sites.end(), rng);
    sites.resize(static_cast<std::size_t>(n));
    std::sort(sites.begin(), sites.end());

    SimSpots out;
    std::uniform_real_distribution<double> jitter(-config.grid_jitter, config.grid_jitter);
    for (long site : sites) {
        const double gx = (static_cast<double>(site % side) + 0.5 + jitter(rng)) * pitch;
        const double gy = (static_cast<double>(site / side) + 0.5 + jitter(rng)) * pitch;
        out.locations.push_back({gx, gy});
    }
    out.groups = kmeans_labels(out.locations, config.groups, config.kmeans_iters, rng);

    const int p = config.genes;
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);

    // group shifts for a random subset of genes
    Eigen::MatrixXd shift = Eigen::MatrixXd::Zero(p, config.groups);
    std::vector<int> genes(static_cast<std::size_t>(p));
    for (int l = 0; l < p; ++l) genes[static_cast<std::size_t>(l)] = l;
    std::shuffle(genes.begin(), genes.end(), rng);
    const int shifted = static_cast<int>(std::lround(config.shifted_gene_frac * p));
    for (int i = 0; i < shifted; ++i)
        for (int c = 0; c < config.groups; ++c)
            shift(genes[static_cast<std::size_t>(i)], c) = config.group_shift_sd * normal(rng);

    // random Fourier features: f(s) = sqrt(2/F) sum cos(omega . s + b) has unit
    // variance and squared-exponential correlation with length field_scale_um
    const int F = config.field_features;
    const double amp = std::sqrt(2.0 / F);
    out.expression.resize(static_cast<Eigen::Index>(n), p);
    Eigen::MatrixXd omega(F, 2);
    Eigen::VectorXd offset(F);
    for (int l = 0; l < p; ++l) {
        for (int f = 0; f < F; ++f) {
            omega(f, 0) = normal(rng) / config.field_scale_um;
            omega(f, 1) = normal(rng) / config.field_scale_um;
            offset(f) = phase(rng);
        }
        for (long k = 0; k < n; ++k) {
            const auto& s = out.locations[static_cast<std::size_t>(k)];
            double field = 0.0;
            for (int f = 0; f < F; ++f) field += std::cos(omega(f, 0) * s.x + omega(f, 1) * s.y + offset(f));
            const double logx = shift(l, out.groups[static_cast<std::size_t>(k)]) + config.field_sd * amp * field +
                                config.noise_sd * normal(rng);
            out.expression(static_cast<Eigen::Index>(k), l) = std::exp(logx);
        }
    }
    return out;
}

std::vector<int> select_plaques(const SimSpots& spots, int M, int groups, Rng& rng)
{
    if (groups < 1 || M < groups) throw Error(ErrorKind::Validation, "need M >= number of groups");
    if (static_cast<std::size_t>(M) > spots.locations.size())
        throw Error(ErrorKind::Infeasible, "more plaques than spots");
    std::vector<std::vector<int>> members(static_cast<std::size_t>(groups));
    for (std::size_t k = 0; k < spots.groups.size(); ++k) {
        const int g = spots.groups[k];
        if (g < 0 || g >= groups) throw Error(ErrorKind::Validation, "spot group label out of range");
        members[static_cast<std::size_t>(g)].push_back(static_cast<int>(k));
    }

    std::vector<int> quota(static_cast<std::size_t>(groups));
    for (int g = 0; g < groups; ++g) {
        quota[static_cast<std::size_t>(g)] = M / groups + (g < M % groups ? 1 : 0);
        const auto have = members[static_cast<std::size_t>(g)].size();
        if (static_cast<int>(have) < quota[static_cast<std::size_t>(g)])
            throw Error(ErrorKind::Infeasible, "group " + std::to_string(g + 1) + " has " + std::to_string(have) +
                                                   " spots, fewer than its quota of " +
                                                   std::to_string(quota[static_cast<std::size_t>(g)]));
    }

    // Groups take turns; each picks its member farthest from every plaque
    // chosen so far, in any group. Independent per-group runs would crowd
    // plaques along the shared group borders.
    const auto n = spots.locations.size();
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    std::vector<char> taken(n, 0);
    std::vector<int> out;
    auto take = [&](int k) {
        taken[static_cast<std::size_t>(k)] = 1;
        out.push_back(k);
        const auto& loc = spots.locations[static_cast<std::size_t>(k)];
        for (std::size_t i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], distance(loc, spots.locations[i]));
    };
    std::vector<int> left = quota;
    for (bool any = true; any;) {
        any = false;
        for (int g = 0; g < groups; ++g) {
            auto& q = left[static_cast<std::size_t>(g)];
            if (q == 0) continue;
            const auto& pool = members[static_cast<std::size_t>(g)];
            int best = -1;
            if (out.empty()) {
                best = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
            } else {
                double far = -1.0;
                for (int k : pool)
                    if (!taken[static_cast<std::size_t>(k)] && nearest[static_cast<std::size_t>(k)] > far) {
                        far = nearest[static_cast<std::size_t>(k)];
                        best = k;
                    }
            }
            take(best);
            --q;
            any = true;
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

TrueBeta generate_true_beta(const SimConfig& config, Rng& rng)
{
    config.validate();
    const int p = config.genes, C = config.groups, T = config.times, R = config.true_rank;
    TrueBeta out;
    out.model = CPModel(p, C, T, R);
    std::vector<int> genes(static_cast<std::size_t>(p));
    for (int l = 0; l < p; ++l) genes[static_cast<std::size_t>(l)] = l;
    std::shuffle(genes.begin(), genes.end(), rng);
    std::vector<int> active(genes.begin(), genes.begin() + config.active_genes);
    std::sort(active.begin(), active.end());

    std::normal_distribution<double> gene_dist(0.0, 2.0), cell_dist(5.0, 2.0), time_dist(0.0, 0.5);
    for (int r = 0; r < R; ++r) {
        for (int l : active) out.model.q1(l, r) = gene_dist(rng);
        for (int c = 0; c < C; ++c) out.model.q2(c, r) = cell_dist(rng);
        for (int t = 0; t < T; ++t) out.model.q3(t, r) = time_dist(rng);
        out.model.w(r) = 1.0;
    }
    out.tensor = reconstruct(out.model);
    return out;
}

Eigen::VectorXd correlated_noise(const std::vector<Point>& locations, double sigma2, double phi, Rng& rng)
{
    if (!(phi > 0.0)) throw Error(ErrorKind::Domain, "phi must be positive");
    if (!(sigma2 >= 0.0)) throw Error(ErrorKind::Domain, "sigma2 must be >= 0");
    const auto M = static_cast<Eigen::Index>(locations.size());
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd z(M);
    for (Eigen::Index j = 0; j < M; ++j) z(j) = normal(rng);
    if (sigma2 == 0.0 || M == 0) return Eigen::VectorXd::Zero(M);

    Eigen::MatrixXd K(M, M);
    for (Eigen::Index a = 0; a < M; ++a)
        for (Eigen::Index b = 0; b < M; ++b)
            K(a, b) = std::exp(-distance(locations[static_cast<std::size_t>(a)], locations[static_cast<std::size_t>(b)]) / phi);
    for (double jitter = 1e-10; jitter <= 1e-6 * 1.0000001; jitter *= 10.0) {
        Eigen::MatrixXd A = K;
        A.diagonal().array() += jitter;
        Eigen::LLT<Eigen::MatrixXd> llt(A);
        if (llt.info() == Eigen::Success) return std::sqrt(sigma2) * Eigen::VectorXd(llt.matrixL() * z);
    }
    throw Error(ErrorKind::Numerical, "noise covariance is not positive definite even with 1e-6 jitter");
}

Eigen::VectorXd generate_outcomes(const SimSpots& spots, const std::vector<int>& plaques, const Tensor3& beta,
                                  int time_index, double sigma2, double phi, Rng& rng, Eigen::VectorXd* noise_out)
{
    std::vector<Point> where;
    for (int k : plaques) where.push_back(spots.locations[static_cast<std::size_t>(k)]);
    const Eigen::VectorXd e = correlated_noise(where, sigma2, phi, rng);
    Eigen::VectorXd y(static_cast<Eigen::Index>(plaques.size()));
    for (std::size_t j = 0; j < plaques.size(); ++j) {
        const int k = plaques[j];
        const auto b = beta.slice(spots.groups[static_cast<std::size_t>(k)], time_index);
        y(static_cast<Eigen::Index>(j)) = spots.expression.row(k).dot(b) + e(static_cast<Eigen::Index>(j));
    }
    if (noise_out) *noise_out = e;
    return y;
}

SimTruth generate_replicate(const SimConfig& config)
{
    config.validate();
    Rng rng(config.seed);
    SimTruth truth;
    truth.config = config;
    auto tb = generate_true_beta(config, rng);
    truth.true_model = tb.model;
    truth.true_beta = tb.tensor;

    auto& ds = truth.dataset;
    const int gw = std::max(3, digits(config.genes - 1));
    for (int l = 0; l < config.genes; ++l) ds.genes.push_back(padded("g", l, gw));
    const int cw = config.groups < 10 ? 1 : digits(config.groups);
    for (int c = 0; c < config.groups; ++c) ds.cell_types.push_back(padded("group", c + 1, cw));
    for (int t = 0; t < config.times; ++t) ds.times.push_back(static_cast<double>(t));

    for (int t = 0; t < config.times; ++t) {
        const auto spots = generate_sample(config, t, rng);
        const auto chosen = select_plaques(spots, config.plaques, config.groups, rng);
        Eigen::VectorXd noise;
        const auto y = generate_outcomes(spots, chosen, truth.true_beta, t, config.sigma2, config.phi, rng, &noise);

        Sample s;
        s.id = "sample" + std::to_string(t + 1);
        s.time_index = t;
        const int pw = std::max(3, digits(config.plaques));
        for (std::size_t j = 0; j < chosen.size(); ++j)
            s.plaques.push_back({s.id + "_p" + padded("", static_cast<long>(j + 1), pw),
                                 spots.locations[static_cast<std::size_t>(chosen[j])],
                                 y(static_cast<Eigen::Index>(j))});
        std::vector<char> is_plaque(spots.locations.size(), 0);
        for (int k : chosen) is_plaque[static_cast<std::size_t>(k)] = 1;
        std::vector<Eigen::Index> keep;
        const int kw = std::max(5, digits(static_cast<long>(spots.locations.size())));
        for (std::size_t k = 0; k < spots.locations.size(); ++k) {
            if (is_plaque[k]) continue;
            keep.push_back(static_cast<Eigen::Index>(k));
            s.cell_ids.push_back(s.id + "_c" + padded("", static_cast<long>(k + 1), kw));
            s.cell_locations.push_back(spots.locations[k]);
            s.cell_types.push_back(spots.groups[k]);
        }
        s.expression = spots.expression(keep, Eigen::all);
        ds.samples.push_back(std::move(s));
        truth.noise.push_back(noise);
        truth.plaque_spots.push_back(chosen);
    }
    ds.validate();
    return truth;
}

namespace {

using ordered_json = nlohmann::ordered_json;

ordered_json matrix_json(const Eigen::MatrixXd& m)
{
    ordered_json rows = ordered_json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        ordered_json row = ordered_json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

ordered_json config_json(const SimConfig& c)
{
    ordered_json j;
    j["spots_mean"] = c.spots_mean;
    j["section_um"] = c.section_um;
    j["grid_jitter"] = c.grid_jitter;
    j["groups"] = c.groups;
    j["times"] = c.times;
    j["genes"] = c.genes;
    j["active_genes"] = c.active_genes;
    j["true_rank"] = c.true_rank;
    j["plaques"] = c.plaques;
    j["sigma2"] = c.sigma2;
    j["phi"] = c.phi;
    j["shifted_gene_frac"] = c.shifted_gene_frac;
    j["group_shift_sd"] = c.group_shift_sd;
    j["field_sd"] = c.field_sd;
    j["noise_sd"] = c.noise_sd;
    j["field_scale_um"] = c.field_scale_um;
    j["field_features"] = c.field_features;
    j["kmeans_iters"] = c.kmeans_iters;
    j["seed"] = c.seed;
    return j;
}

} // namespace

void write_replicate(const SimTruth& truth, const std::string& dir)
{
    write_dataset_dir(truth.dataset, dir);
    const auto& beta = truth.true_beta;
    ordered_json j;
    j["seed"] = truth.config.seed;
    j["shape"] = {beta.genes(), beta.cell_types(), beta.times()};
    j["genes"] = truth.dataset.genes;
    j["cell_types"] = truth.dataset.cell_types;
    j["times"] = truth.dataset.times;
    // true_beta[t][c][l]
    ordered_json tensor = ordered_json::array();
    for (int t = 0; t < beta.times(); ++t) {
        ordered_json per_c = ordered_json::array();
        for (int c = 0; c < beta.cell_types(); ++c) {
            ordered_json per_l = ordered_json::array();
            for (int l = 0; l < beta.genes(); ++l) per_l.push_back(beta(l, c, t));
            per_c.push_back(std::move(per_l));
        }
        tensor.push_back(std::move(per_c));
    }
    j["true_beta"] = std::move(tensor);
    ordered_json cp;
    cp["rank"] = truth.true_model.rank();
    cp["w"] = std::vector<double>(truth.true_model.w.data(), truth.true_model.w.data() + truth.true_model.w.size());
    cp["q1"] = matrix_json(truth.true_model.q1);
    cp["q2"] = matrix_json(truth.true_model.q2);
    cp["q3"] = matrix_json(truth.true_model.q3);
    j["cp"] = std::move(cp);
    ordered_json noise = ordered_json::array();
    for (const auto& e : truth.noise) noise.push_back(std::vector<double>(e.data(), e.data() + e.size()));
    j["noise"] = std::move(noise);
    j["plaque_spots"] = truth.plaque_spots;
    j["config"] = config_json(truth.config);

    const auto path = std::filesystem::path(dir) / "truth.json";
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Schema, "cannot write " + path.string());
    out << j.dump(1) << '\n';
}

Tensor3 read_truth_tensor(const std::string& truth_path)
{
    std::ifstream in(truth_path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Schema, "cannot open " + truth_path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
        const auto shape = j.at("shape").get<std::vector<int>>();
        if (shape.size() != 3) throw Error(ErrorKind::Schema, truth_path + ": shape must have 3 entries");
        Tensor3 out(shape[0], shape[1], shape[2]);
        const auto& tb = j.at("true_beta");
        if (static_cast<int>(tb.size()) != shape[2]) throw Error(ErrorKind::Schema, truth_path + ": true_beta shape mismatch");
        for (int t = 0; t < shape[2]; ++t) {
            if (static_cast<int>(tb[static_cast<std::size_t>(t)].size()) != shape[1])
                throw Error(ErrorKind::Schema, truth_path + ": true_beta shape mismatch");
            for (int c = 0; c < shape[1]; ++c) {
                const auto& row = tb[static_cast<std::size_t>(t)][static_cast<std::size_t>(c)];
                if (static_cast<int>(row.size()) != shape[0])
                    throw Error(ErrorKind::Schema, truth_path + ": true_beta shape mismatch");
                for (int l = 0; l < shape[0]; ++l) out(l, c, t) = row[static_cast<std::size_t>(l)].get<double>();
            }
        }
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Schema, truth_path + ": " + e.what());
    }
}

} // namespace kwcp
