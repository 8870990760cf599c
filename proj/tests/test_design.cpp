#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "causalnet/design.hpp"
#include "causalnet/errors.hpp"
#include "causalnet/network.hpp"
#include "causalnet/rng.hpp"

using namespace causalnet;
using namespace causalnet::design;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

netcore::InfluenceNetwork toy_network() {
    const int a[5][5] = {{0, 1, 2, 0, 0},
                         {1, 0, 2, 0, 0},
                         {2, 3, 0, 1, 1},
                         {0, 0, 2, 0, 0},
                         {0, 0, 1, 0, 0}};
    netcore::InfluenceNetwork net(5);
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 5; ++c)
            if (a[r][c] > 0)
                net.set_count(r, c, a[r][c]);
    return net;
}

netcore::InfluenceNetwork random_network(int n, std::uint64_t seed) {
    auto rng = make_rng(seed, {0xabc});
    netcore::InfluenceNetwork net(n);
    std::bernoulli_distribution edge(0.15);
    std::uniform_int_distribution<int> cnt(1, 3);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (i != j && edge(rng))
                net.set_count(i, j, cnt(rng));
    return net;
}

} // namespace

TEST_CASE("complete randomization treats exactly the cap") {
    auto net = random_network(40, 1);
    auto rng = make_rng(9, {});
    for (int cap : {0, 1, 13, 40}) {
        auto a = draw_assignment(Scheme::CR, net, cap, {}, rng);
        CHECK(a.treated_count() == cap);
        for (int v : a.z)
            CHECK((v == 0 || v == 1));
    }
    CHECK_THROWS_AS(draw_assignment(Scheme::CR, net, 41, {}, rng), ConfigError);
    auto r1 = make_rng(5, {});
    auto r2 = make_rng(5, {});
    CHECK(draw_assignment(Scheme::CR, net, 10, {}, r1).z ==
          draw_assignment(Scheme::CR, net, 10, {}, r2).z);
}

TEST_CASE("preferential targeting favors high out-degree") {
    // star: center 0 points at 10 leaves; weights 11 vs 1 each
    netcore::InfluenceNetwork net(11);
    for (int j = 1; j <= 10; ++j)
        net.set_count(0, j, 1);
    auto rng = make_rng(21, {});
    int center_hits = 0;
    const int m = 20000;
    for (int t = 0; t < m; ++t) {
        auto a = draw_assignment(Scheme::PT, net, 1, {}, rng);
        CHECK(a.treated_count() == 1);
        center_hits += a.z[0];
    }
    CHECK(static_cast<double>(center_hits) / m ==
          doctest::Approx(11.0 / 21.0).epsilon(0.05));
}

TEST_CASE("cluster randomization treats whole clusters within the cap") {
    auto net = random_network(12, 3);
    SchemeConfig config;
    config.cluster_labels = {0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2};
    auto rng = make_rng(4, {});
    for (int t = 0; t < 50; ++t) {
        auto a = draw_assignment(Scheme::RNC, net, 8, config, rng);
        CHECK(a.treated_count() <= 8);
        for (int c = 0; c < 3; ++c) {
            int sum = a.z[4 * c] + a.z[4 * c + 1] + a.z[4 * c + 2] + a.z[4 * c + 3];
            CHECK((sum == 0 || sum == 4)); // all-or-none within a cluster
        }
    }
    config.cluster_labels = {0, 1};
    CHECK_THROWS_AS(draw_assignment(Scheme::RNC, net, 8, config, rng), ConfigError);
}

TEST_CASE("sequential randomization realizes the recorded conditions") {
    auto net = random_network(30, 7);
    SchemeConfig config;
    config.target_k = 1;
    auto rng = make_rng(11, {});
    for (int t = 0; t < 20; ++t) {
        auto a = draw_assignment(Scheme::SR, net, 10, config, rng);
        CHECK(a.treated_count() <= 10);
        CHECK(!a.focal.empty());
        for (const auto& f : a.focal) {
            CHECK(a.z[f.unit] == f.own_z);
            int treated_nbrs = 0;
            for (const auto& [j, c] : net.in_edges(f.unit))
                treated_nbrs += a.z[j];
            CHECK(treated_nbrs == f.treated_neighbors);
        }
    }
}

TEST_CASE("insulated randomization also realizes its conditions") {
    auto net = random_network(30, 8);
    SchemeConfig config;
    config.target_k = 1;
    auto rng = make_rng(13, {});
    auto a = draw_assignment(Scheme::INR, net, 10, config, rng);
    CHECK(a.treated_count() <= 10);
    for (const auto& f : a.focal) {
        CHECK(a.z[f.unit] == f.own_z);
        int treated_nbrs = 0;
        for (const auto& [j, c] : net.in_edges(f.unit))
            treated_nbrs += a.z[j];
        CHECK(treated_nbrs == f.treated_neighbors);
    }
}

TEST_CASE("exposure groups label the toy assignment") {
    auto net = toy_network();
    ExposureGrouping g;
    g.boundaries = {{0.0, 0.0}, {1.0, 2.0}, {3.0, kInf}};
    g.validate();
    std::vector<int> z = {1, 0, 0, 1, 0};
    // exposures (0, 1, 4, 0, 0)
    CHECK(exposure_groups(net, z, g) == std::vector<int>{0, 1, 2, 0, 0});
    CHECK(g.label(2.0) == 1); // boundary inclusive
    CHECK(g.label(3.0) == 2);

    ExposureGrouping bad;
    bad.boundaries = {{0.0, 2.0}, {1.0, kInf}};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad.boundaries = {{1.0, kInf}};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad.boundaries = {{0.0, 4.0}};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("empirical tertiles produce a valid integer grouping") {
    auto net = random_network(40, 2);
    auto g = empirical_tertiles(net, 13, 5);
    g.validate();
    REQUIRE(g.group_count() == 3);
    CHECK(g.boundaries[0].first == 0.0);
    CHECK(g.boundaries[0].second == std::floor(g.boundaries[0].second));
    CHECK(g.boundaries[2].second == kInf);
    // deterministic in the seed
    CHECK(empirical_tertiles(net, 13, 5).boundaries == g.boundaries);
}

TEST_CASE("balance statistic matches hand and matrix oracles") {
    // 1-D: means 0 vs 2, pooled variance 2, so m = 4/2
    std::vector<std::vector<double>> x1 = {{-1}, {1}, {1}, {3}};
    CHECK(mahalanobis_balance(x1, {0, 1}, {2, 3}).m ==
          doctest::Approx(2.0).epsilon(1e-12));
    // identical means give zero
    std::vector<std::vector<double>> x2 = {{1, 0}, {3, 2}, {1, 2}, {3, 0}};
    CHECK(mahalanobis_balance(x2, {0, 1}, {2, 3}).m ==
          doctest::Approx(0.0).epsilon(1e-12));

    // 3-D random instance against a direct Eigen computation
    auto rng = make_rng(31, {});
    std::normal_distribution<double> nd(0.0, 1.0);
    const int na = 6, nb = 7, d = 3;
    std::vector<std::vector<double>> x;
    for (int i = 0; i < na + nb; ++i) {
        std::vector<double> row(d);
        for (auto& v : row)
            v = nd(rng);
        x.push_back(row);
    }
    std::vector<int> ga, gb;
    for (int i = 0; i < na; ++i)
        ga.push_back(i);
    for (int i = na; i < na + nb; ++i)
        gb.push_back(i);
    Eigen::MatrixXd xa(na, d), xb(nb, d);
    for (int i = 0; i < na; ++i)
        for (int c = 0; c < d; ++c)
            xa(i, c) = x[ga[i]][c];
    for (int i = 0; i < nb; ++i)
        for (int c = 0; c < d; ++c)
            xb(i, c) = x[gb[i]][c];
    Eigen::RowVectorXd ma = xa.colwise().mean(), mb = xb.colwise().mean();
    Eigen::MatrixXd ca = xa.rowwise() - ma, cb = xb.rowwise() - mb;
    Eigen::MatrixXd s = (ca.transpose() * ca + cb.transpose() * cb) / (na + nb - 2);
    Eigen::VectorXd diff = (ma - mb).transpose();
    double want = diff.dot(s.inverse() * diff);
    CHECK(mahalanobis_balance(x, ga, gb).m == doctest::Approx(want).epsilon(1e-10));

    CHECK_THROWS_AS(mahalanobis_balance(x1, {0}, {1, 2}), DataError);
    // constant column makes the pooled covariance singular
    std::vector<std::vector<double>> x3 = {{1, 5}, {2, 5}, {3, 5}, {4, 5}};
    auto b = mahalanobis_balance(x3, {0, 1}, {2, 3});
    CHECK(b.ridged);
}

TEST_CASE("rerandomization accepts, relaxes, and checks sizes") {
    auto net = random_network(40, 6);
    std::vector<std::vector<double>> x;
    auto rng0 = make_rng(44, {});
    std::normal_distribution<double> nd(0.0, 1.0);
    for (int i = 0; i < 40; ++i)
        x.push_back({nd(rng0), nd(rng0)});
    auto grouping = empirical_tertiles(net, 13, 5);

    BalanceCriterion crit;
    crit.tiers = {{{0, 1}, 1e9}}; // vacuous threshold
    crit.max_draws = 10;
    auto rng = make_rng(45, {});
    auto a = rerandomize(Scheme::CR, crit, RerandVariant::RC, net, x, grouping,
                         13, {}, rng);
    CHECK(a.attempts == 1);
    CHECK(!a.relaxed);
    REQUIRE(a.balance.has_value());
    CHECK(*a.balance < 1e9);
    CHECK(a.treated_count() == 13);

    crit.tiers[0].threshold = 1e-12; // unattainable
    crit.max_draws = 5;
    auto b = rerandomize(Scheme::CR, crit, RerandVariant::RC, net, x, grouping,
                         13, {}, rng);
    CHECK(b.relaxed);
    CHECK(b.attempts == 5);

    // RG ignores covariates entirely; accepted draw satisfies the size ratio
    crit.tiers.clear();
    crit.max_draws = 2000;
    crit.group_size_ratio_max = 2.0;
    auto c = rerandomize(Scheme::CR, crit, RerandVariant::RG, net, x, grouping,
                         13, {}, rng);
    if (!c.relaxed) {
        auto labels = exposure_groups(net, c.z, grouping);
        std::vector<int> sizes(3, 0);
        for (int l : labels)
            ++sizes[l];
        int lo = std::min({sizes[0], sizes[1], sizes[2]});
        int hi = std::max({sizes[0], sizes[1], sizes[2]});
        CHECK(hi <= 3.0 * lo);
    }

    crit.tiers = {{{0}, 0.0}};
    CHECK_THROWS_AS(rerandomize(Scheme::CR, crit, RerandVariant::RC, net, x,
                                grouping, 13, {}, rng),
                    ConfigError);
}

TEST_CASE("calibrated thresholds make acceptance attainable") {
    auto net = random_network(40, 6);
    std::vector<std::vector<double>> x;
    auto rng0 = make_rng(44, {});
    std::normal_distribution<double> nd(0.0, 1.0);
    for (int i = 0; i < 40; ++i)
        x.push_back({nd(rng0), nd(rng0)});
    auto grouping = empirical_tertiles(net, 13, 5);
    std::vector<BalanceTier> tiers = {{{0, 1}, 0.0}};
    auto rng = make_rng(46, {});
    auto thr = calibrate_thresholds(Scheme::CR, net, x, grouping, 13, tiers, {},
                                    rng, 50.0, 200);
    REQUIRE(thr.size() == 1);
    CHECK(thr[0] > 0.0);
    BalanceCriterion crit;
    crit.tiers = {{{0, 1}, thr[0]}};
    crit.max_draws = 500;
    auto a = rerandomize(Scheme::CR, crit, RerandVariant::RC, net, x, grouping,
                         13, {}, rng);
    // the median threshold accepts roughly half of draws
    CHECK(!a.relaxed);
    REQUIRE(a.balance.has_value());
    CHECK(*a.balance <= thr[0]);
}

TEST_CASE("assignment csv export") {
    Assignment a;
    a.z = {1, 0, 1};
    const std::string path = "assign_test.csv";
    write_assignment_csv(a, {2, 0, 1}, path);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "unit,z,group_label");
    std::getline(in, line);
    CHECK(line == "0,1,2");
    std::remove(path.c_str());
}

TEST_CASE("scheme names round trip") {
    for (auto s : {Scheme::CR, Scheme::SR, Scheme::INR, Scheme::PT, Scheme::RNC})
        CHECK(scheme_from_string(to_string(s)) == s);
    for (auto v : {RerandVariant::RC, RerandVariant::RG, RerandVariant::RCG})
        CHECK(rerand_variant_from_string(to_string(v)) == v);
    CHECK_THROWS_AS(scheme_from_string("XX"), ConfigError);
}
