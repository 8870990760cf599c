#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "causalnet/errors.hpp"
#include "causalnet/factory.hpp"
#include "causalnet/rng.hpp"

using namespace causalnet;
using namespace causalnet::factory;

namespace {

const AnovaRow& find_term(const std::vector<AnovaRow>& rows,
                          const std::string& term) {
    for (const auto& r : rows)
        if (r.term == term)
            return r;
    throw std::runtime_error("missing term " + term);
}

std::string serialize(const std::vector<ResultRow>& rows) {
    const std::string path = "factory_serialize_tmp.csv";
    write_result_csv(rows, path);
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    std::remove(path.c_str());
    return ss.str();
}

FactorialPlan tiny_plan() {
    FactorialPlan plan;
    NetworkLevel net;
    net.name = "N16d1";
    net.size = 16;
    net.communities = 2;
    plan.networks = {net};
    OutcomeLevel out;
    out.name = "none-SI";
    plan.outcomes = {out};
    plan.resource_fractions = {0.25};
    plan.schemes = {"CR"};
    plan.estimators = {{"NM"}};
    plan.replications = 3;
    plan.base_seed = 41;
    plan.timespan = 2.0;
    return plan;
}

} // namespace

TEST_CASE("factorial decomposition on the full design skeleton") {
    auto np = full_np_names();
    auto pom = full_pom_names();
    std::vector<std::string> tr = {"TR0.1", "TR0.3"};
    auto rs = full_rs_names();
    auto a = full_a_names();
    REQUIRE(np.size() == 8);
    REQUIRE(pom.size() == 12);
    REQUIRE(rs.size() == 8);
    REQUIRE(a.size() == 12);

    std::vector<std::map<std::string, std::string>> rows;
    std::vector<double> y;
    std::uint64_t h = 0;
    for (const auto& v1 : np)
        for (const auto& v2 : pom)
            for (const auto& v3 : tr)
                for (const auto& v4 : rs)
                    for (const auto& v5 : a) {
                        rows.push_back({{"NP", v1},
                                        {"POM", v2},
                                        {"TR", v3},
                                        {"RS", v4},
                                        {"A", v5}});
                        h = splitmix64(h + 1);
                        y.push_back(static_cast<double>(h % 1000) / 100.0);
                    }

    auto table = anova(rows, y, {"NP", "POM", "TR", "RS", "A"}, 3);
    CHECK(find_term(table, "NP").df == 7);
    CHECK(find_term(table, "POM").df == 11);
    CHECK(find_term(table, "TR").df == 1);
    CHECK(find_term(table, "RS").df == 7);
    CHECK(find_term(table, "A").df == 11);
    CHECK(find_term(table, "RS x A").df == 77);
    CHECK(find_term(table, "POM x A").df == 121);
    CHECK(find_term(table, "POM x RS x A").df == 847);
    CHECK(find_term(table, "NP x RS").df == 49);
    CHECK(find_term(table, "NP x RS x A").df == 539);

    double total = find_term(table, "total").ss;
    double acc = 0.0;
    long long df_acc = 0;
    for (const auto& r : table)
        if (r.term != "total") {
            acc += r.ss;
            df_acc += r.df;
        }
    CHECK(acc == doctest::Approx(total).epsilon(1e-8));
    CHECK(df_acc == static_cast<long long>(y.size()) - 1);
}

TEST_CASE("two by two analysis of variance by hand") {
    std::vector<std::map<std::string, std::string>> rows;
    std::vector<double> y = {1, 3, 2, 4, 5, 7, 10, 12};
    const char* f1[] = {"a", "a", "a", "a", "b", "b", "b", "b"};
    const char* f2[] = {"x", "x", "y", "y", "x", "x", "y", "y"};
    for (int i = 0; i < 8; ++i)
        rows.push_back({{"F1", f1[i]}, {"F2", f2[i]}});
    auto table = anova(rows, y, {"F1", "F2"}, 2);
    CHECK(find_term(table, "F1").ss == doctest::Approx(72.0).epsilon(1e-10));
    CHECK(find_term(table, "F2").ss == doctest::Approx(18.0).epsilon(1e-10));
    CHECK(find_term(table, "F1 x F2").ss == doctest::Approx(8.0).epsilon(1e-10));
    CHECK(find_term(table, "residual").ss == doctest::Approx(8.0).epsilon(1e-10));
    CHECK(find_term(table, "residual").df == 4);
    CHECK(find_term(table, "residual").ms == doctest::Approx(2.0).epsilon(1e-10));
    CHECK(find_term(table, "total").ss == doctest::Approx(106.0).epsilon(1e-10));

    std::vector<double> flat(8, 3.0);
    for (const auto& r : anova(rows, flat, {"F1", "F2"}, 2))
        CHECK(r.ss == doctest::Approx(0.0));
}

TEST_CASE("unbalanced designs are rejected with the missing cell named") {
    std::vector<std::map<std::string, std::string>> rows = {
        {{"F1", "a"}, {"F2", "x"}},
        {{"F1", "a"}, {"F2", "y"}},
        {{"F1", "b"}, {"F2", "x"}},
    };
    std::vector<double> y = {1, 2, 3};
    try {
        anova(rows, y, {"F1", "F2"}, 2);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        std::string what = e.what();
        CHECK(what.find("b x y") != std::string::npos);
    }
    CHECK_THROWS_AS(anova(rows, {1.0, 2.0}, {"F1", "F2"}, 2), DataError);
}

TEST_CASE("coverage summary aggregates per cell and target") {
    std::vector<ResultRow> rows;
    for (int rep = 0; rep < 4; ++rep) {
        ResultRow r;
        r.cell = 3;
        r.a = "BNS";
        r.replication = rep;
        r.target = "primary_avg";
        r.covered = rep < 3 ? 1 : 0;
        r.width = 2.0;
        r.imse = rep;
        rows.push_back(r);
    }
    ResultRow bad;
    bad.cell = 3;
    bad.target = "primary_avg";
    bad.failed = 1;
    rows.push_back(bad); // excluded from the summary
    auto s = coverage_summary(rows);
    REQUIRE(s.size() == 1);
    CHECK(s[0].replications == 4);
    CHECK(s[0].coverage == doctest::Approx(0.75));
    CHECK(s[0].mean_width == doctest::Approx(2.0));
    CHECK(s[0].mean_imse == doctest::Approx(1.5));
}

TEST_CASE("result csv round trip preserves all columns") {
    ResultRow r;
    r.cell = 7;
    r.np = "N64d1K2";
    r.pom = "activity-SI";
    r.tr = "TR0.25";
    r.rs = "RC";
    r.a = "BICS";
    r.replication = 2;
    r.target = "fixed_peer";
    r.truth = 1.2345678901234567;
    r.estimate = -0.5;
    r.lo = -1.25;
    r.hi = 0.25;
    r.width = 1.5;
    r.covered = 1;
    r.imse = 0.125;
    r.failed = 0;
    r.diagnostic = "ridge;log, shift"; // comma gets sanitized
    const std::string path = "factory_roundtrip.csv";
    write_result_csv({r}, path);
    auto back = read_result_csv(path);
    std::remove(path.c_str());
    REQUIRE(back.size() == 1);
    CHECK(back[0].cell == 7);
    CHECK(back[0].np == r.np);
    CHECK(back[0].target == r.target);
    CHECK(back[0].truth == r.truth);
    CHECK(back[0].estimate == r.estimate);
    CHECK(back[0].covered == 1);
    CHECK(back[0].diagnostic == "ridge;log; shift");
}

TEST_CASE("cell indexing runs the analysis factor fastest") {
    FactorialPlan plan = tiny_plan();
    NetworkLevel second = plan.networks[0];
    second.name = "N24d1";
    second.size = 24;
    plan.networks.push_back(second);
    plan.schemes = {"CR", "SR", "PT"};
    plan.estimators = {{"NM"}, {"DM"}};
    REQUIRE(plan.cell_count() == 12);
    CHECK(plan.cell_levels(0) ==
          std::vector<std::string>{"N16d1", "none-SI", "TR0.25", "CR", "NM"});
    CHECK(plan.cell_levels(1) ==
          std::vector<std::string>{"N16d1", "none-SI", "TR0.25", "CR", "DM"});
    CHECK(plan.cell_levels(2) ==
          std::vector<std::string>{"N16d1", "none-SI", "TR0.25", "SR", "NM"});
    CHECK(plan.cell_levels(11) ==
          std::vector<std::string>{"N24d1", "none-SI", "TR0.25", "PT", "DM"});
}

TEST_CASE("plan validation rejects malformed inputs") {
    FactorialPlan plan = tiny_plan();
    plan.resource_fractions = {1.5};
    CHECK_THROWS_AS(plan.validate(), ConfigError);
    plan = tiny_plan();
    plan.estimators.clear();
    CHECK_THROWS_AS(plan.validate(), ConfigError);
    plan = tiny_plan();
    plan.cell_subset = {9};
    CHECK_THROWS_AS(plan.validate(), ConfigError);
    plan = tiny_plan();
    plan.replications = 0;
    CHECK_THROWS_AS(plan.validate(), ConfigError);
}

TEST_CASE("generator settings scale with the topology level") {
    NetworkLevel lvl;
    lvl.size = 100;
    lvl.communities = 3;
    lvl.density_scale = 2.0;
    lvl.structure_scale = 1.5;
    auto g = generator_for(lvl, 4.0);
    CHECK(g.n == 100);
    CHECK(g.K == 3);
    CHECK(g.sparsity ==
          doctest::Approx(2.0 * 3.0 * std::log(100.0) / 100.0).epsilon(1e-12));
    // three-community baseline with off-diagonals scaled by the structure level
    CHECK(g.block[0][0] == doctest::Approx(2.3));
    CHECK(g.block[0][1] == doctest::Approx(0.07 * 1.5));
    CHECK(g.block[1][0] == doctest::Approx(0.3 * 1.5));
    CHECK(g.pseudocounts[1][1] == doctest::Approx(5.0));
    CHECK(g.pseudocounts[0][1] == doctest::Approx(0.1));
    CHECK(g.timespan == 4.0);

    // community counts without a tuned baseline use the generic pattern
    lvl.communities = 5;
    auto g5 = generator_for(lvl, 4.0);
    CHECK(g5.block[0][0] == doctest::Approx(2.5));
    CHECK(g5.block[0][1] == doctest::Approx(0.2 * 1.5));
    CHECK(g5.pseudocounts[2][2] == doctest::Approx(5.0));
}

TEST_CASE("plan json round trip") {
    auto plan = default_plan();
    plan.base_seed = 17;
    plan.cell_subset = {0, 5};
    auto back = plan_from_json(plan_to_json(plan));
    CHECK(back.networks.size() == plan.networks.size());
    CHECK(back.networks[1].name == plan.networks[1].name);
    CHECK(back.outcomes[1].confounder == plan.outcomes[1].confounder);
    CHECK(back.schemes == plan.schemes);
    CHECK(back.estimators.size() == plan.estimators.size());
    CHECK(back.base_seed == 17);
    CHECK(back.cell_subset == plan.cell_subset);
    CHECK(back.targets == plan.targets);
}

TEST_CASE("factorial runs are deterministic") {
    auto plan = tiny_plan();
    auto a = run_factorial(plan);
    auto b = run_factorial(plan);
    REQUIRE(!a.empty());
    CHECK(serialize(a) == serialize(b));
    for (const auto& r : a) {
        CHECK(r.failed == 0);
        CHECK(std::isfinite(r.estimate));
    }
}

TEST_CASE("interrupted ledger runs resume to identical results") {
    auto plan = tiny_plan();
    auto fresh = run_factorial(plan); // no ledger

    const std::string ledger = "factory_ledger_test.csv";
    std::remove(ledger.c_str());
    plan.ledger_path = ledger;
    auto full = run_factorial(plan);
    CHECK(serialize(full) == serialize(fresh));

    // keep only the header and the first complete replication (one row per
    // target), then resume
    std::ifstream in(ledger);
    std::string line, kept;
    int data_rows = 0;
    const int per_rep = static_cast<int>(plan.targets.size());
    while (std::getline(in, line)) {
        bool header = line.rfind("cell,", 0) == 0;
        if (header || data_rows < per_rep) {
            kept += line + "\n";
            if (!header)
                ++data_rows;
        }
    }
    in.close();
    std::ofstream out(ledger, std::ios::trunc);
    out << kept;
    out.close();

    auto resumed = run_factorial(plan);
    CHECK(serialize(resumed) == serialize(fresh));
    std::remove(ledger.c_str());
}
