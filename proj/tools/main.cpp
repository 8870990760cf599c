// Command-line surface: generate, infer, bound, simulate, design, estimate,
// factorial, report. Exit codes: 0 success, 1 usage, 2 data error,
// 3 numeric failure.
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "causalnet/analysis.hpp"
#include "causalnet/design.hpp"
#include "causalnet/errors.hpp"
#include "causalnet/factory.hpp"
#include "causalnet/hmmb.hpp"
#include "causalnet/hmmb_infer.hpp"
#include "causalnet/network.hpp"
#include "causalnet/rng.hpp"
#include "causalnet/science.hpp"

namespace {

using nlohmann::json;

struct Global {
    std::uint64_t seed = 0;
    int threads = 1;
    std::string config;
    std::string out = ".";
};

json load_config(const Global& g) {
    if (g.config.empty())
        return json::object();
    std::ifstream in(g.config);
    if (!in)
        throw causalnet::DataError("cannot open config " + g.config);
    json j;
    in >> j;
    return j;
}

void write_text(const std::string& path, const std::string& text) {
    std::filesystem::create_directories(
        std::filesystem::path(path).parent_path().empty()
            ? "."
            : std::filesystem::path(path).parent_path().string());
    std::ofstream out(path);
    if (!out)
        throw causalnet::DataError("cannot write " + path);
    out << text;
}

causalnet::netcore::HmmbGeneratorConfig generator_config(const json& j) {
    causalnet::netcore::HmmbGeneratorConfig g;
    g.n = j.at("n");
    g.K = j.at("K");
    g.L = j.value("L", g.K);
    g.sparsity = j.value("sparsity", 0.2);
    g.alpha = j.value("alpha", 2.9);
    g.timespan = j.value("timespan", 1.0);
    g.lambda_min = j.value("lambda_min", 0.5);
    g.lambda_max = j.value("lambda_max", 50.0);
    if (j.contains("block"))
        g.block = j.at("block").get<std::vector<std::vector<double>>>();
    else {
        g.block.assign(g.K, std::vector<double>(g.K, 0.2));
        for (int k = 0; k < g.K; ++k)
            g.block[k][k] = 2.5;
    }
    if (j.contains("pseudocounts"))
        g.pseudocounts =
            j.at("pseudocounts").get<std::vector<std::vector<double>>>();
    else {
        g.pseudocounts.assign(g.K, std::vector<double>(g.L, 0.1));
        for (int k = 0; k < g.K && k < g.L; ++k)
            g.pseudocounts[k][k] = 5.0;
    }
    if (j.contains("lifestyle_probs"))
        g.lifestyle_probs = j.at("lifestyle_probs").get<std::vector<double>>();
    else
        g.lifestyle_probs.assign(g.L, 1.0 / g.L);
    return g;
}

causalnet::infer::McmcConfig mcmc_config(const json& j) {
    causalnet::infer::McmcConfig c;
    c.chains = j.value("chains", 3);
    c.iterations = j.value("iterations", 2000);
    c.burn_in = j.value("burn_in", 1000);
    c.step_lambda_rel = j.value("step_lambda_rel", 0.1);
    c.step_block = j.value("step_block", 0.05);
    c.step_pi = j.value("step_pi", 0.25);
    c.step_alpha = j.value("step_alpha", 0.1);
    c.lambda_floor = j.value("lambda_floor", 1e-4);
    c.fix_block_diagonal = j.value("fix_block_diagonal", false);
    if (j.contains("block_diagonal"))
        c.block_diagonal = j.at("block_diagonal").get<std::vector<double>>();
    c.update_alpha = j.value("update_alpha", false);
    c.update_sparsity = j.value("update_sparsity", true);
    c.update_lambda = j.value("update_lambda", true);
    c.update_block = j.value("update_block", true);
    c.update_membership = j.value("update_membership", true);
    c.update_switches = j.value("update_switches", true);
    c.switch_policy = causalnet::infer::switch_policy_from_string(
        j.value("switch_policy", "map_fixed"));
    c.selective_rate_cutoff = j.value("selective_rate_cutoff", 1.0);
    c.adapt_steps = j.value("adapt_steps", true);
    c.include_lambda_prior = j.value("include_lambda_prior", true);
    c.timespan = j.value("timespan", 1.0);
    c.init_alpha = j.value("alpha", 2.9);
    c.init_sparsity = j.value("sparsity", 0.2);
    if (j.contains("reference_diagonal"))
        c.reference_diagonal =
            j.at("reference_diagonal").get<std::vector<double>>();
    return c;
}

int cmd_generate(const Global& g) {
    json j = load_config(g);
    auto gen = generator_config(j);
    auto params = causalnet::netcore::sample_hmmb_params(gen, g.seed);
    auto net = causalnet::netcore::sample_network(
        params, causalnet::derive_seed(g.seed, {1}));
    std::filesystem::create_directories(g.out);
    causalnet::netcore::write_params_json(params, g.out + "/params.json");
    causalnet::netcore::write_edge_csv(net, g.out + "/network.csv");
    std::cout << "wrote " << g.out << "/params.json and " << g.out
              << "/network.csv (" << net.edge_count() << " edges)\n";
    return 0;
}

int cmd_infer(const Global& g) {
    json j = load_config(g);
    auto net = causalnet::netcore::read_edge_csv(j.at("edges"),
                                                 j.value("n", -1));
    int K = j.at("K");
    auto cfg = mcmc_config(j.value("mcmc", json::object()));
    if (j.contains("timespan"))
        cfg.timespan = j.at("timespan");
    auto post = causalnet::infer::run_mcmc(net, K, cfg, g.seed);
    std::filesystem::create_directories(g.out);
    write_text(g.out + "/posterior.json",
               causalnet::infer::posterior_to_json(post));
    if (j.value("trace", false))
        causalnet::infer::write_trace_binary(post, g.out + "/trace.bin");
    std::cout << "selected chain " << post.selected_chain << ", "
              << post.lambda_samples.size() << " samples\n";
    return 0;
}

int cmd_bound(const Global& g) {
    json j = load_config(g);
    auto params = causalnet::netcore::read_params_json(j.at("params"));
    double level = j.value("level", 0.9);
    json out;
    out["level"] = level;
    json nodes = json::array();
    std::vector<int> ids;
    if (j.contains("nodes"))
        ids = j.at("nodes").get<std::vector<int>>();
    else
        for (int i = 0; i < params.n; ++i)
            ids.push_back(i);
    double mean_width = 0.0;
    std::size_t width_count = 0;
    for (int i : ids) {
        auto f = causalnet::infer::fisher_information(i, params);
        auto w = causalnet::infer::cramer_rao_width(f, level);
        json entry;
        entry["node"] = i;
        entry["singular"] = w.singular;
        entry["widths"] = w.widths;
        nodes.push_back(std::move(entry));
        if (!w.singular)
            for (double v : w.widths) {
                mean_width += v;
                ++width_count;
            }
    }
    out["nodes"] = std::move(nodes);
    if (width_count > 0)
        out["mean_width"] = mean_width / width_count;
    std::filesystem::create_directories(g.out);
    write_text(g.out + "/bounds.json", out.dump(2));
    std::cout << "wrote " << g.out << "/bounds.json\n";
    return 0;
}

int cmd_design(const Global& g) {
    json j = load_config(g);
    auto net = causalnet::netcore::read_edge_csv(j.at("edges"),
                                                 j.value("n", -1));
    int cap = j.at("resource_cap");
    causalnet::design::SchemeConfig scfg;
    scfg.target_k = j.value("target_k", 1);
    scfg.insulation_fraction = j.value("insulation_fraction", 0.6);
    scfg.cluster_count = j.value("cluster_count", 0);
    auto rng = causalnet::make_rng(g.seed, {0x646573ULL});
    auto grouping = causalnet::design::empirical_tertiles(
        net, cap, causalnet::derive_seed(g.seed, {1}),
        j.value("tertile_draws", 200));
    std::string scheme = j.value("scheme", "CR");
    causalnet::design::Assignment assignment;
    if (scheme == "RC" || scheme == "RG" || scheme == "RCG") {
        auto cov = j.at("covariates").get<std::vector<std::vector<double>>>();
        causalnet::design::BalanceCriterion crit;
        crit.max_draws = j.value("max_draws", 1000);
        crit.group_size_ratio_max = j.value("group_size_ratio_max", 0.5);
        causalnet::design::BalanceTier tier;
        for (std::size_t c = 0; c < cov.front().size(); ++c)
            tier.covariate_columns.push_back(static_cast<int>(c));
        tier.threshold = 1.0;
        crit.tiers.push_back(tier);
        auto cal = causalnet::make_rng(g.seed, {2});
        crit.tiers[0].threshold = causalnet::design::calibrate_thresholds(
            causalnet::design::Scheme::CR, net, cov, grouping, cap, crit.tiers,
            scfg, cal, j.value("percentile", 10.0),
            j.value("calibration_draws", 1000))[0];
        assignment = causalnet::design::rerandomize(
            causalnet::design::Scheme::CR, crit,
            causalnet::design::rerand_variant_from_string(scheme), net, cov,
            grouping, cap, scfg, rng);
    } else {
        assignment = causalnet::design::draw_assignment(
            causalnet::design::scheme_from_string(scheme), net, cap, scfg, rng);
    }
    auto labels = causalnet::design::exposure_groups(net, assignment.z, grouping);
    std::filesystem::create_directories(g.out);
    causalnet::design::write_assignment_csv(assignment, labels,
                                            g.out + "/assignment.csv");
    json diag;
    diag["scheme"] = scheme;
    diag["treated"] = assignment.treated_count();
    diag["attempts"] = assignment.attempts;
    diag["relaxed"] = assignment.relaxed;
    if (assignment.balance)
        diag["balance"] = *assignment.balance;
    write_text(g.out + "/design.json", diag.dump(2));
    std::cout << "treated " << assignment.treated_count() << " of "
              << net.size() << " after " << assignment.attempts
              << " attempt(s)\n";
    return 0;
}

int cmd_simulate(const Global& g) {
    json j = load_config(g);
    auto gen = generator_config(j.at("network"));
    auto params = causalnet::netcore::sample_hmmb_params(gen, g.seed);
    auto net = causalnet::netcore::sample_network(
        params, causalnet::derive_seed(g.seed, {1}));

    const json& jm = j.at("model");
    causalnet::science::OutcomeModelSpec model;
    model.tau = jm.value("tau", 5.0);
    model.gamma = jm.value("gamma", 0.1);
    model.mu = jm.value("mu", 3.0);
    model.noise_mean = jm.value("noise_mean", 0.0);
    model.noise_sd = jm.value("noise_sd", 1.0);
    if (jm.contains("betas"))
        model.betas = jm.at("betas").get<std::vector<double>>();
    model.exposure_fn = causalnet::science::exposure_fn_from_string(
        jm.value("exposure_fn", "sum"));
    model.covariate_fn = causalnet::science::covariate_fn_from_string(
        jm.value("covariate_fn", "identity"));
    model.confounder = causalnet::science::confounder_from_string(
        jm.value("confounder", "none"));
    causalnet::science::CovariateSource source;
    source.params = &params;
    auto table = causalnet::science::build_science(
        net, model, source, causalnet::derive_seed(g.seed, {2}));

    int cap = j.value("resource_cap", net.size() / 10);
    causalnet::design::SchemeConfig scfg;
    auto rng = causalnet::make_rng(g.seed, {3});
    auto assignment = causalnet::design::draw_assignment(
        causalnet::design::scheme_from_string(j.value("scheme", "CR")), net,
        cap, scfg, rng);
    auto y = causalnet::science::observe(table, assignment.z);

    causalnet::analysis::EstimatorSpec spec;
    spec.sample_count = j.value("posterior_samples", 2000);
    spec.exposure_fn = model.exposure_fn;
    spec.covariate_set = causalnet::analysis::covariate_set_from_string(
        j.value("covariate_set", "none"));
    causalnet::analysis::CovariateData cov;
    cov.activity = params.lambda;
    cov.membership = params.pi;
    if (!table.covariates.empty() &&
        (model.confounder ==
             causalnet::science::ConfounderType::treatment_likelihood ||
         model.confounder == causalnet::science::ConfounderType::independent)) {
        cov.extra.resize(net.size());
        for (int i = 0; i < net.size(); ++i)
            cov.extra[i] = table.covariates[i][0];
    }

    std::vector<causalnet::science::EstimandSpec> targets;
    for (const auto& name :
         j.value("targets", std::vector<std::string>{"primary_avg",
                                                     "fixed_peer"})) {
        causalnet::science::EstimandSpec t;
        t.kind = causalnet::science::estimand_kind_from_string(name);
        t.z = assignment.z;
        targets.push_back(t);
    }
    auto estimates = causalnet::analysis::bayes_impute(
        y, assignment.z, net, cov, spec, targets, j.value("level", 0.9),
        causalnet::derive_seed(g.seed, {4}));

    std::filesystem::create_directories(g.out);
    json out;
    out["n"] = net.size();
    out["edges"] = net.edge_count();
    out["treated"] = assignment.treated_count();
    json ests = json::array();
    for (std::size_t t = 0; t < targets.size(); ++t) {
        auto truth = causalnet::science::compute_estimand(
            table, targets[t], {}, causalnet::derive_seed(g.seed, {5, t}));
        auto& e = estimates[t];
        e.truth = truth.value;
        ests.push_back(json::parse(causalnet::analysis::estimate_to_json(e)));
    }
    out["estimates"] = std::move(ests);
    write_text(g.out + "/simulation.json", out.dump(2));
    std::cout << "wrote " << g.out << "/simulation.json\n";
    return 0;
}

int cmd_estimate(const Global& g) {
    json j = load_config(g);
    auto net = causalnet::netcore::read_edge_csv(j.at("edges"),
                                                 j.value("n", -1));
    auto y = j.at("y").get<std::vector<double>>();
    auto z = j.at("z").get<std::vector<int>>();
    std::string kind = j.value("estimator", "neyman");
    std::filesystem::create_directories(g.out);
    json out;
    if (kind == "neyman") {
        out["estimate"] = causalnet::analysis::neyman(y, z);
    } else if (kind == "diff_means") {
        causalnet::science::EstimandSpec target;
        target.kind = causalnet::science::estimand_kind_from_string(
            j.value("target", "primary_avg"));
        auto grouping = causalnet::design::empirical_tertiles(
            net, j.value("resource_cap",
                         static_cast<int>(std::count(z.begin(), z.end(), 1))),
            causalnet::derive_seed(g.seed, {1}));
        auto r = causalnet::analysis::diff_means(y, z, net, target, grouping);
        out["estimate"] = r.value;
        out["used_fallback"] = r.used_fallback;
        out["degenerate"] = r.degenerate;
    } else if (kind == "bayes") {
        causalnet::analysis::EstimatorSpec spec;
        spec.covariate_set = causalnet::analysis::covariate_set_from_string(
            j.value("covariate_set", "none"));
        spec.exposure_fn = causalnet::science::exposure_fn_from_string(
            j.value("exposure_fn", "sum"));
        spec.covariate_fn = causalnet::science::covariate_fn_from_string(
            j.value("covariate_fn", "identity"));
        spec.sample_count = j.value("posterior_samples", 2000);
        causalnet::analysis::CovariateData cov;
        if (j.contains("activity"))
            cov.activity = j.at("activity").get<std::vector<double>>();
        if (j.contains("membership"))
            cov.membership =
                j.at("membership").get<std::vector<std::vector<double>>>();
        if (j.contains("covariate"))
            cov.extra = j.at("covariate").get<std::vector<double>>();
        std::vector<causalnet::science::EstimandSpec> targets;
        for (const auto& name :
             j.value("targets", std::vector<std::string>{"primary_avg"})) {
            causalnet::science::EstimandSpec t;
            t.kind = causalnet::science::estimand_kind_from_string(name);
            t.z = z;
            targets.push_back(t);
        }
        auto estimates = causalnet::analysis::bayes_impute(
            y, z, net, cov, spec, targets, j.value("level", 0.9), g.seed);
        json arr = json::array();
        for (const auto& e : estimates)
            arr.push_back(
                json::parse(causalnet::analysis::estimate_to_json(e)));
        out["estimates"] = std::move(arr);
    } else {
        throw causalnet::ConfigError("unknown estimator: " + kind);
    }
    write_text(g.out + "/estimate.json", out.dump(2));
    std::cout << "wrote " << g.out << "/estimate.json\n";
    return 0;
}

int cmd_factorial(const Global& g) {
    json j = load_config(g);
    causalnet::factory::FactorialPlan plan =
        j.empty() ? causalnet::factory::default_plan()
                  : causalnet::factory::plan_from_json(j.dump());
    if (plan.base_seed == 0)
        plan.base_seed = g.seed;
    if (plan.ledger_path.empty())
        plan.ledger_path = g.out + "/ledger.csv";
    std::filesystem::create_directories(g.out);
    auto rows = causalnet::factory::run_factorial(plan);
    causalnet::factory::emit_report(rows, g.out);
    std::cout << rows.size() << " result rows -> " << g.out << "/results.csv\n";
    return 0;
}

int cmd_report(const Global& g) {
    json j = load_config(g);
    std::string input = j.value("results", g.out + "/results.csv");
    auto rows = causalnet::factory::read_result_csv(input);
    std::filesystem::create_directories(g.out);
    causalnet::factory::emit_report(rows, g.out);

    // ANOVA of IMSE over the factorial factors when the data are balanced.
    std::vector<std::map<std::string, std::string>> fv;
    std::vector<double> resp;
    for (const auto& r : rows) {
        if (r.failed)
            continue;
        fv.push_back({{"NP", r.np},
                      {"POM", r.pom},
                      {"TR", r.tr},
                      {"RS", r.rs},
                      {"A", r.a}});
        resp.push_back(r.imse);
    }
    json out;
    try {
        auto table = causalnet::factory::anova(
            fv, resp, {"NP", "POM", "TR", "RS", "A"}, 3);
        json arr = json::array();
        for (const auto& row : table)
            arr.push_back({{"term", row.term},
                           {"df", row.df},
                           {"ss", row.ss},
                           {"ms", row.ms}});
        out["anova"] = std::move(arr);
    } catch (const std::exception& e) {
        out["anova_error"] = e.what();
    }
    write_text(g.out + "/anova.json", out.dump(2));
    std::cout << "wrote " << g.out << "/summary.json and " << g.out
              << "/anova.json\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Simulation laboratory for causal inference on influence networks"};
    app.require_subcommand(1);
    Global g;
    app.add_option("--seed", g.seed, "base RNG seed");
    app.add_option("--threads", g.threads, "worker thread count");
    app.add_option("--config", g.config, "JSON configuration path");
    app.add_option("--out", g.out, "output directory");

    auto* c_generate = app.add_subcommand("generate", "sample a network");
    auto* c_infer = app.add_subcommand("infer", "posterior from an edge list");
    auto* c_bound = app.add_subcommand("bound", "Fisher information bounds");
    auto* c_simulate = app.add_subcommand("simulate", "one experiment end-to-end");
    auto* c_design = app.add_subcommand("design", "assignment and balance");
    auto* c_estimate = app.add_subcommand("estimate", "estimators on observed data");
    auto* c_factorial = app.add_subcommand("factorial", "run a factorial plan");
    auto* c_report = app.add_subcommand("report", "aggregate results and ANOVA");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (c_generate->parsed())
            return cmd_generate(g);
        if (c_infer->parsed())
            return cmd_infer(g);
        if (c_bound->parsed())
            return cmd_bound(g);
        if (c_simulate->parsed())
            return cmd_simulate(g);
        if (c_design->parsed())
            return cmd_design(g);
        if (c_estimate->parsed())
            return cmd_estimate(g);
        if (c_factorial->parsed())
            return cmd_factorial(g);
        if (c_report->parsed())
            return cmd_report(g);
    } catch (const causalnet::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const causalnet::DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 2;
    } catch (const causalnet::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return 3;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
    return 1;
}
