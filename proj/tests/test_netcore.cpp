#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include "causalnet/errors.hpp"
#include "causalnet/hmmb.hpp"
#include "causalnet/network.hpp"
#include "causalnet/rng.hpp"
#include "causalnet/spectral.hpp"

using namespace causalnet;
using namespace causalnet::netcore;

namespace {

// Five-unit influence matrix used across the suites; entry (r, c) is the
// count from r to c.
InfluenceNetwork toy_network() {
    const int a[5][5] = {{0, 1, 2, 0, 0},
                         {1, 0, 2, 0, 0},
                         {2, 3, 0, 1, 1},
                         {0, 0, 2, 0, 0},
                         {0, 0, 1, 0, 0}};
    InfluenceNetwork net(5);
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 5; ++c)
            if (a[r][c] > 0)
                net.set_count(r, c, a[r][c]);
    return net;
}

} // namespace

TEST_CASE("edge storage and degree bookkeeping") {
    InfluenceNetwork net(4);
    net.set_count(0, 1, 3);
    net.set_count(2, 1, 1);
    CHECK(net.count(0, 1) == 3);
    CHECK(net.count(1, 0) == 0);
    CHECK(net.out_degree(0) == 1);
    CHECK(net.in_degree(1) == 2);
    CHECK(net.in_weight(1) == 4);
    CHECK(net.edge_count() == 2);
    net.set_count(0, 1, 0); // zero deletes
    CHECK(net.count(0, 1) == 0);
    CHECK(net.edge_count() == 1);
    CHECK_THROWS_AS(net.set_count(1, 1, 2), DataError);
    CHECK_THROWS_AS(net.set_count(0, 9, 2), DataError);
    CHECK_THROWS_AS(net.set_count(0, 1, -1), DataError);
}

TEST_CASE("closed in-neighborhoods on the five-unit matrix") {
    auto net = toy_network();
    auto n1 = n_hop_neighborhood(net, 0, {1});
    CHECK(n1 == std::vector<int>{0, 1, 2});
    auto n3 = n_hop_neighborhood(net, 2, {1});
    CHECK(n3 == std::vector<int>{2, 0, 1, 3, 4});
    auto n0 = n_hop_neighborhood(net, 0, {0});
    CHECK(n0 == std::vector<int>{0});
}

TEST_CASE("edge csv round trip") {
    auto net = toy_network();
    const std::string path = "toy_edges_test.csv";
    write_edge_csv(net, path);
    auto back = read_edge_csv(path);
    CHECK(back.size() == net.size());
    CHECK(back.edges() == net.edges());
    std::remove(path.c_str());
}

TEST_CASE("seed derivation is order sensitive and stable") {
    CHECK(derive_seed(1, {2, 3}) == derive_seed(1, {2, 3}));
    CHECK(derive_seed(1, {2, 3}) != derive_seed(1, {3, 2}));
    CHECK(derive_seed(1, {2}) != derive_seed(2, {2}));
}

TEST_CASE("truncated power law matches analytic moments") {
    // E[X] for density prop to x^-alpha on [lo, hi]:
    // ((1-a)/(2-a)) * (hi^(2-a)-lo^(2-a)) / (hi^(1-a)-lo^(1-a)).
    const double alpha = 2.9, lo = 0.5, hi = 50.0;
    double a1 = 1.0 - alpha, a2 = 2.0 - alpha;
    double expect = (a1 / a2) * (std::pow(hi, a2) - std::pow(lo, a2)) /
                    (std::pow(hi, a1) - std::pow(lo, a1));
    auto rng = make_rng(42, {0});
    double sum = 0.0;
    const int m = 200000;
    for (int i = 0; i < m; ++i) {
        double x = sample_truncated_power_law(alpha, lo, hi, rng);
        CHECK(x >= lo);
        CHECK(x <= hi);
        sum += x;
    }
    CHECK(sum / m == doctest::Approx(expect).epsilon(0.01));
}

TEST_CASE("dirichlet draws respect zero pseudocounts") {
    auto rng = make_rng(7, {1});
    auto d = sample_dirichlet({2.0, 0.0, 3.0}, rng);
    CHECK(d[1] == 0.0);
    CHECK(d[0] + d[1] + d[2] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_THROWS_AS(sample_dirichlet({0.0, 0.0}, rng), ConfigError);
}

namespace {

HmmbParams small_params() {
    HmmbParams p;
    p.n = 3;
    p.K = 2;
    p.L = 2;
    p.lambda = {1.5, 2.0, 0.8};
    p.pi = {{1.0, 0.0}, {0.0, 1.0}, {0.5, 0.5}};
    p.block = {{2.3, 0.07}, {0.3, 2.0}};
    p.switches.assign(9, 0);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            if (i != j)
                p.set_switch(i, j, 1);
    p.sparsity = 0.2;
    p.alpha = 2.9;
    p.timespan = 100.0;
    p.pseudocounts = {{5.0, 0.1}, {0.1, 5.0}};
    p.lifestyle_probs = {0.5, 0.5};
    return p;
}

} // namespace

TEST_CASE("pairwise rates follow the block quadratic form") {
    auto p = small_params();
    // one-hot memberships pick out a single block entry
    CHECK(block_quad(p, 0, 1) == doctest::Approx(0.07));
    CHECK(block_quad(p, 1, 0) == doctest::Approx(0.3));
    auto rates = rate_matrix(p);
    CHECK(rates(0, 1) == doctest::Approx(1.5 * 2.0 * 0.07));
    CHECK(rates(0, 0) == 0.0);
    p.set_switch(0, 1, 0);
    CHECK(rate_matrix(p)(0, 1) == 0.0);
}

TEST_CASE("network sampling is deterministic and respects switches") {
    auto p = small_params();
    p.set_switch(2, 0, 0);
    auto a = sample_network(p, 99);
    auto b = sample_network(p, 99);
    CHECK(a.edges() == b.edges());
    CHECK(a.count(2, 0) == 0);
    // rate 1.5*2*0.07*100 = 21, so the (0,1) edge is essentially certain
    CHECK(a.count(0, 1) > 0);
}

TEST_CASE("generator draws valid parameters with expected structure") {
    HmmbGeneratorConfig g;
    g.n = 40;
    g.K = 2;
    g.L = 2;
    g.block = {{2.0, 0.1}, {0.1, 2.0}};
    g.pseudocounts = {{5.0, 0.1}, {0.1, 5.0}};
    g.lifestyle_probs = {0.5, 0.5};
    g.sparsity = 0.3;
    auto p = sample_hmmb_params(g, 5);
    p.validate();
    CHECK(p.n == 40);
    long long on = 0;
    for (int i = 0; i < p.n; ++i)
        for (int j = 0; j < p.n; ++j)
            if (i != j)
                on += p.switch_at(i, j);
    double frac = static_cast<double>(on) / (40 * 39);
    CHECK(frac == doctest::Approx(0.3).epsilon(0.25));
    // same seed, same draw
    auto q = sample_hmmb_params(g, 5);
    CHECK(q.lambda == p.lambda);
    CHECK(q.switches == p.switches);
}

TEST_CASE("params json round trip") {
    auto p = small_params();
    auto q = params_from_json(params_to_json(p));
    CHECK(q.lambda == p.lambda);
    CHECK(q.pi == p.pi);
    CHECK(q.block == p.block);
    CHECK(q.switches == p.switches);
    CHECK(q.timespan == p.timespan);
    CHECK_THROWS_AS(params_from_json("{not json"), DataError);
    CHECK_THROWS_AS(params_from_json("{}"), DataError);
}

TEST_CASE("spectral clustering separates two planted cliques") {
    InfluenceNetwork net(10);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j)
            if (i != j)
                net.set_count(i, j, 2);
    for (int i = 5; i < 10; ++i)
        for (int j = 5; j < 10; ++j)
            if (i != j)
                net.set_count(i, j, 2);
    auto labels = spectral_clusters(net, 2, 11);
    std::set<int> a(labels.begin(), labels.begin() + 5);
    std::set<int> b(labels.begin() + 5, labels.end());
    CHECK(a.size() == 1);
    CHECK(b.size() == 1);
    CHECK(*a.begin() != *b.begin());
    CHECK(spectral_clusters(net, 2, 11) == labels); // deterministic
    CHECK_THROWS_AS(spectral_clusters(net, 0, 1), ConfigError);
    CHECK_THROWS_AS(spectral_clusters(net, 11, 1), ConfigError);
}
