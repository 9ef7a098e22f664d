#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "kwcp/error.hpp"
#include "kwcp/ridge.hpp"

using namespace kwcp;

namespace {

/// X^T W X and X^T W y for stratum s by direct loops over triples.
std::pair<Eigen::MatrixXd, Eigen::VectorXd> brute_normal(const KernelDesign& d, int s)
{
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(d.p, d.p);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(d.p);
    for (auto a = d.stratum_offsets[s]; a < d.stratum_offsets[s + 1]; ++a)
        for (auto n = d.triple_offsets[a]; n < d.triple_offsets[a + 1]; ++n) {
            const double w = d.triple_weight[n];
            for (int l = 0; l < d.p; ++l) {
                b(l) += w * d.x(a, l) * d.triple_outcome[n];
                for (int m = 0; m < d.p; ++m) H(l, m) += w * d.x(a, l) * d.x(a, m);
            }
        }
    return {H, b};
}

/// Well-separated plaques, each surrounded by cells of a single type whose
/// expression is the plaque's latent profile plus tiny noise; outcomes are
/// exactly linear in that profile.
struct LinearFixture {
    Dataset dataset;
    Tensor3 truth;
};

LinearFixture linear_fixture(std::uint64_t seed, int p, int C, int T)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    LinearFixture f;
    f.truth = Tensor3(p, C, T);
    for (auto& v : f.truth.data()) v = z(rng);
    auto& ds = f.dataset;
    for (int l = 0; l < p; ++l) ds.genes.push_back("g" + std::to_string(l));
    for (int c = 0; c < C; ++c) ds.cell_types.push_back("t" + std::to_string(c));
    for (int t = 0; t < T; ++t) ds.times.push_back(t);
    const int plaques = 30 * C, per = 5;
    for (int t = 0; t < T; ++t) {
        Sample s;
        s.id = "s" + std::to_string(t);
        s.time_index = t;
        s.expression.resize(plaques * per, p);
        for (int j = 0; j < plaques; ++j) {
            const int c = j % C;
            const Point centre{100.0 * j, 0.0};
            Eigen::VectorXd latent(p);
            for (int l = 0; l < p; ++l) latent(l) = z(rng);
            double y = 0.0;
            for (int l = 0; l < p; ++l) y += latent(l) * f.truth(l, c, t);
            s.plaques.push_back({"p" + std::to_string(j), centre, y + 1e-3 * z(rng)});
            for (int k = 0; k < per; ++k) {
                const int row = j * per + k;
                s.cell_ids.push_back(s.id + "c" + std::to_string(row));
                s.cell_locations.push_back({centre.x + 2.0 * (k + 1), centre.y + 1.0 * k});
                s.cell_types.push_back(c);
                for (int l = 0; l < p; ++l) s.expression(row, l) = latent(l) + 1e-3 * z(rng);
            }
        }
        ds.samples.push_back(std::move(s));
    }
    return f;
}

} // namespace

TEST_SUITE("initialization")
{
    TEST_CASE("single unit-weight triple")
    {
        Eigen::MatrixXd x(1, 2);
        x << 1.0, 0.0;
        const auto d = fixtures::hand_design(x, {{0, 1.0, 2.0, 0}}, 1);
        const auto st = stratum_stats_serial(d);
        const double lambda = 1e-8;
        const auto b = ridge_fit_slice(d, st, 0, 0, lambda);
        CHECK(b(0) == doctest::Approx(2.0 / (1.0 + lambda)).epsilon(1e-14));
        CHECK(std::abs(b(1)) < 1e-14);
        CHECK_THROWS_AS(ridge_fit_slice(d, st, 0, 0, 0.0), Error);
    }

    TEST_CASE("normal equations hold on random problems")
    {
        for (std::uint64_t seed = 1; seed <= 10; ++seed) {
            const auto pr = fixtures::make_problem(seed, 6, 2, 2);
            for (int s = 0; s < pr.design.strata(); ++s) {
                if (pr.design.stratum_offsets[s] == pr.design.stratum_offsets[s + 1]) continue;
                const auto [H, b] = brute_normal(pr.design, s);
                for (double lambda : {1e-3, 1.0, 50.0}) {
                    const auto beta = ridge_fit_slice(pr.design, pr.stats, pr.design.stratum_cell_type(s),
                                                      pr.design.stratum_time(s), lambda);
                    const Eigen::VectorXd res =
                        (H + lambda * Eigen::MatrixXd::Identity(H.rows(), H.cols())) * beta - b;
                    CHECK(res.norm() <= 1e-8 * std::max(1.0, b.norm()));
                }
            }
        }
    }

    TEST_CASE("zero response gives a zero slice and tensor")
    {
        auto pr = fixtures::make_problem(4, 5, 2, 1);
        for (auto& s : pr.dataset.samples)
            for (auto& pl : s.plaques) pl.outcome = 0.0;
        const auto d = build_design(pr.dataset, pr.weights);
        const auto st = stratum_stats(d);
        CHECK(ridge_fit_slice(d, st, 0, 0, 0.1).isZero(0.0));
        const auto init = ridge_init(d, st, RidgeConfig{});
        for (double v : init.tensor.data()) CHECK(v == 0.0);
    }

    TEST_CASE("shrinkage is monotone in the penalty")
    {
        const auto pr = fixtures::make_problem(6, 6, 1, 1);
        double previous = INFINITY;
        for (double lambda = 1e-4; lambda < 1e6; lambda *= 3.0) {
            const double norm = ridge_fit_slice(pr.design, pr.stats, 0, 0, lambda).norm();
            CHECK(norm <= previous * (1.0 + 1e-12));
            previous = norm;
        }
        CHECK(previous < 1e-2);
    }

    TEST_CASE("duplicating a triple at half weight leaves the fit unchanged")
    {
        Eigen::MatrixXd x(3, 2);
        x << 1.0, 0.5, -0.3, 2.0, 0.7, 0.7;
        const std::vector<fixtures::HandTriple> base{{0, 1.0, 2.0, 0}, {1, 0.4, -1.0, 1}, {2, 0.8, 0.5, 1}};
        auto split = base;
        split[1].weight = 0.2;
        split.push_back({1, 0.2, -1.0, 1});
        const auto a = fixtures::hand_design(x, base, 2);
        const auto b = fixtures::hand_design(x, split, 2);
        const auto fa = ridge_fit_slice(a, stratum_stats_serial(a), 0, 0, 0.3);
        const auto fb = ridge_fit_slice(b, stratum_stats_serial(b), 0, 0, 0.3);
        CHECK((fa - fb).cwiseAbs().maxCoeff() < 1e-13);
    }

    TEST_CASE("cross-validated ridge recovers a linear truth")
    {
        const int p = 10, C = 2, T = 2;
        const auto f = linear_fixture(12, p, C, T);
        const auto w = compute_weights(f.dataset, std::vector<double>(T, 20.0));
        const auto d = build_design(f.dataset, w);
        const auto st = stratum_stats(d);
        const auto init = ridge_init(d, st, RidgeConfig{});
        for (int c = 0; c < C; ++c)
            for (int t = 0; t < T; ++t) {
                const auto est = init.tensor.slice(c, t);
                const auto tru = f.truth.slice(c, t);
                const auto ec = est.array() - est.mean();
                const auto tc = tru.array() - tru.mean();
                const double corr = (ec * tc).sum() / std::sqrt(ec.square().sum() * tc.square().sum());
                CHECK(corr > 0.9);
            }
    }

    TEST_CASE("single stratum reduces to one ridge problem")
    {
        const auto pr = fixtures::make_problem(8, 4, 1, 1);
        const auto init = ridge_init(pr.design, pr.stats, RidgeConfig{});
        const auto direct = ridge_fit_slice(pr.design, pr.stats, 0, 0, init.chosen_lambda[0]);
        CHECK((init.tensor.slice(0, 0) - direct).cwiseAbs().maxCoeff() == 0.0);
        CHECK(init.chosen_lambda[0] > 0.0);
    }

    TEST_CASE("empty strata and invalid configs")
    {
        // cell type 1 never occurs within bandwidth at time 0
        auto pr = fixtures::make_problem(10, 3, 2, 1);
        for (auto& s : pr.dataset.samples)
            for (auto& c : s.cell_types) c = 0;
        const auto d = build_design(pr.dataset, pr.weights);
        const auto st = stratum_stats(d);
        CHECK_THROWS_AS(ridge_fit_slice(d, st, 1, 0, 1.0), Error);
        const auto init = ridge_init(d, st, RidgeConfig{});
        CHECK(init.tensor.slice(1, 0).isZero(0.0));
        CHECK_FALSE(init.warnings.empty());

        RidgeConfig bad;
        bad.folds = 1;
        CHECK_THROWS_AS(ridge_init(d, st, bad), Error);
        bad.folds = 5;
        bad.grid = {1.0, -2.0};
        CHECK_THROWS_AS(ridge_init(d, st, bad), Error);
        CHECK(RidgeConfig{}.effective_grid().size() == 20);
    }

    TEST_CASE("ridge_init is deterministic")
    {
        const auto pr = fixtures::make_problem(14, 5, 2, 2);
        const auto a = ridge_init(pr.design, pr.stats, RidgeConfig{});
        const auto b = ridge_init(pr.design, pr.stats, RidgeConfig{});
        CHECK(a.tensor.data() == b.tensor.data());
        CHECK(a.chosen_lambda == b.chosen_lambda);
    }
}
