#include "causalnet/factory.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "causalnet/errors.hpp"
#include "causalnet/rng.hpp"

namespace causalnet::factory {

namespace {

std::string sanitize(std::string s) {
    for (char& c : s)
        if (c == ',' || c == '\n' || c == '\r')
            c = ';';
    return s;
}

science::OutcomeModelSpec model_for(const OutcomeLevel& level, int communities) {
    science::OutcomeModelSpec model;
    model.tau = 5.0;
    model.gamma = 0.1;
    model.mu = 3.0;
    model.noise_mean = 2.0;
    model.noise_sd = std::sqrt(1.2);
    model.exposure_fn = level.exposure_fn;
    model.covariate_fn = level.covariate_fn;
    model.confounder = level.confounder;
    switch (level.confounder) {
    case science::ConfounderType::none:
        break;
    case science::ConfounderType::membership:
        model.betas.resize(communities);
        for (int k = 0; k < communities; ++k)
            model.betas[k] =
                communities > 1 ? 6.0 * k / (communities - 1) : 6.0;
        break;
    default:
        model.betas = {5.0};
        break;
    }
    return model;
}

// Treatment probability proportional to the per-unit weight, cap units
// without replacement.
std::vector<int> weighted_assignment(const std::vector<double>& weight, int cap,
                                     std::mt19937_64& rng) {
    const int n = static_cast<int>(weight.size());
    std::vector<int> z(n, 0);
    std::vector<int> remaining(n);
    std::iota(remaining.begin(), remaining.end(), 0);
    for (int t = 0; t < cap; ++t) {
        double total = 0.0;
        for (int u : remaining)
            total += weight[u];
        std::uniform_real_distribution<double> unif(0.0, total);
        double target = unif(rng);
        double acc = 0.0;
        std::size_t chosen = remaining.size() - 1;
        for (std::size_t idx = 0; idx < remaining.size(); ++idx) {
            acc += weight[remaining[idx]];
            if (acc >= target) {
                chosen = idx;
                break;
            }
        }
        z[remaining[chosen]] = 1;
        remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(chosen));
    }
    return z;
}

struct ParsedEstimator {
    analysis::EstimatorKind kind;
    analysis::EstimatorSpec spec;
};

ParsedEstimator parse_estimator(const std::string& name,
                                science::ConfounderType truth_confounder) {
    ParsedEstimator out;
    out.spec.kind = analysis::EstimatorKind::bayes;
    if (name == "NM") {
        out.kind = analysis::EstimatorKind::neyman;
        return out;
    }
    if (name == "DM") {
        out.kind = analysis::EstimatorKind::diff_means;
        return out;
    }
    if (name.size() < 3 || name.front() != 'B')
        throw ConfigError("unknown estimator level: " + name);
    out.kind = analysis::EstimatorKind::bayes;
    char expo = name.back();
    out.spec.exposure_fn = expo == 'S' ? science::ExposureFn::sum
                         : expo == 'L' ? science::ExposureFn::log_sum
                                       : throw ConfigError("unknown estimator level: " + name);
    std::string cov = name.substr(1, name.size() - 2);
    if (cov == "N") {
        out.spec.covariate_set = analysis::CovariateSet::none;
        return out;
    }
    if (cov.size() != 2)
        throw ConfigError("unknown estimator level: " + name);
    out.spec.covariate_fn = cov[0] == 'I' ? science::CovariateFn::identity
                          : cov[0] == 'L' ? science::CovariateFn::log
                                          : throw ConfigError("unknown estimator level: " + name);
    if (cov[1] == 'P') {
        out.spec.covariate_set = analysis::CovariateSet::membership;
    } else if (cov[1] == 'C') {
        // Covariate tracks the truth model's confounder.
        switch (truth_confounder) {
        case science::ConfounderType::activity:
            out.spec.covariate_set = analysis::CovariateSet::activity;
            break;
        case science::ConfounderType::membership:
            out.spec.covariate_set = analysis::CovariateSet::membership;
            break;
        case science::ConfounderType::treatment_likelihood:
            out.spec.covariate_set = analysis::CovariateSet::treatment_likelihood;
            break;
        case science::ConfounderType::independent:
            out.spec.covariate_set = analysis::CovariateSet::independent;
            break;
        case science::ConfounderType::none:
            out.spec.covariate_set = analysis::CovariateSet::none;
            break;
        }
    } else {
        throw ConfigError("unknown estimator level: " + name);
    }
    return out;
}

std::string row_key(const ResultRow& r) {
    return std::to_string(r.cell) + ":" + std::to_string(r.replication);
}

bool row_less(const ResultRow& a, const ResultRow& b) {
    if (a.cell != b.cell)
        return a.cell < b.cell;
    if (a.replication != b.replication)
        return a.replication < b.replication;
    return a.target < b.target;
}

} // namespace

std::size_t FactorialPlan::cell_count() const {
    return networks.size() * outcomes.size() * resource_fractions.size() *
           schemes.size() * estimators.size();
}

std::vector<std::string> FactorialPlan::cell_levels(std::size_t cell) const {
    std::size_t a = cell % estimators.size();
    cell /= estimators.size();
    std::size_t rs = cell % schemes.size();
    cell /= schemes.size();
    std::size_t tr = cell % resource_fractions.size();
    cell /= resource_fractions.size();
    std::size_t pom = cell % outcomes.size();
    cell /= outcomes.size();
    std::size_t np = cell;
    std::ostringstream tr_name;
    tr_name << "TR" << resource_fractions[tr];
    return {networks[np].name, outcomes[pom].name, tr_name.str(), schemes[rs],
            estimators[a].name};
}

void FactorialPlan::validate() const {
    if (networks.empty() || outcomes.empty() || resource_fractions.empty() ||
        schemes.empty() || estimators.empty())
        throw ConfigError("every factor needs at least one level");
    if (replications < 1)
        throw ConfigError("replication count must be at least 1");
    if (targets.empty())
        throw ConfigError("at least one estimand target required");
    for (double f : resource_fractions)
        if (f <= 0.0 || f > 1.0)
            throw ConfigError("resource fraction must be in (0, 1]");
    for (std::size_t c : cell_subset)
        if (c >= cell_count())
            throw ConfigError("cell subset index out of range");
}

namespace {

// Baseline block and pseudocount matrices for the community counts with
// hand-tuned values; other counts fall back to a diagonal-dominant pattern.
const std::map<int, std::vector<std::vector<double>>> kBlockBaselines = {
    {3, {{2.3, 0.07, 0.0}, {0.3, 2.0, 0.0}, {0.0, 0.3, 3.0}}},
    {4,
     {{2.3, 0.07, 0.0, 0.0},
      {0.3, 2.0, 0.0, 0.0},
      {0.0, 0.0, 2.5, 0.4},
      {0.0, 0.3, 0.0, 3.0}}},
    {6,
     {{2.3, 0.07, 0.0, 0.0, 0.0, 0.4},
      {0.3, 2.0, 0.0, 0.0, 0.0, 0.0},
      {0.0, 0.0, 2.5, 0.4, 0.2, 0.0},
      {0.0, 0.3, 0.0, 3.0, 0.0, 0.0},
      {0.0, 0.0, 0.25, 0.0, 2.5, 0.0},
      {0.0, 0.3, 0.0, 0.0, 0.0, 2.7}}}};

const std::map<int, std::vector<std::vector<double>>> kPseudocountBaselines = {
    {3, {{5.0, 0.1, 0.0}, {0.0, 5.0, 0.5}, {0.1, 0.2, 2.0}}},
    {4,
     {{5.0, 0.1, 0.0, 0.3},
      {0.0, 5.0, 0.5, 0.1},
      {0.1, 0.2, 2.0, 0.0},
      {0.0, 0.5, 0.3, 3.0}}},
    {6,
     {{5.0, 0.1, 0.0, 0.0, 0.0, 0.5},
      {0.3, 2.0, 0.0, 0.0, 0.2, 0.0},
      {0.0, 0.0, 2.5, 0.4, 0.2, 0.0},
      {0.0, 0.3, 0.0, 3.0, 0.0, 0.0},
      {0.3, 0.0, 0.25, 0.0, 2.5, 0.0},
      {0.0, 0.3, 0.0, 0.5, 0.0, 2.7}}}};

} // namespace

netcore::HmmbGeneratorConfig generator_for(const NetworkLevel& level,
                                           double timespan) {
    netcore::HmmbGeneratorConfig g;
    g.n = level.size;
    g.K = level.communities;
    g.L = level.communities;
    g.sparsity = std::min(
        1.0, level.density_scale * 3.0 * std::log(level.size) / level.size);
    g.alpha = level.degree_exponent;
    g.timespan = timespan;
    auto block_it = kBlockBaselines.find(g.K);
    if (block_it != kBlockBaselines.end()) {
        g.block = block_it->second;
        for (int r = 0; r < g.K; ++r)
            for (int c = 0; c < g.K; ++c)
                if (r != c)
                    g.block[r][c] *= level.structure_scale;
    } else {
        g.block.assign(g.K,
                       std::vector<double>(g.K, 0.2 * level.structure_scale));
        for (int k = 0; k < g.K; ++k)
            g.block[k][k] = 2.5;
    }
    auto pseudo_it = kPseudocountBaselines.find(g.K);
    if (pseudo_it != kPseudocountBaselines.end()) {
        g.pseudocounts = pseudo_it->second;
    } else {
        g.pseudocounts.assign(g.K, std::vector<double>(g.L, 0.1));
        for (int k = 0; k < g.K && k < g.L; ++k)
            g.pseudocounts[k][k] = 5.0;
    }
    g.lifestyle_probs.assign(g.L, 1.0 / g.L);
    return g;
}

namespace {

std::vector<ResultRow> run_replication(const FactorialPlan& plan,
                                       std::size_t cell, int rep) {
    auto levels = plan.cell_levels(cell);
    std::size_t rest = cell;
    std::size_t a_i = rest % plan.estimators.size();
    rest /= plan.estimators.size();
    std::size_t rs_i = rest % plan.schemes.size();
    rest /= plan.schemes.size();
    std::size_t tr_i = rest % plan.resource_fractions.size();
    rest /= plan.resource_fractions.size();
    std::size_t pom_i = rest % plan.outcomes.size();
    std::size_t np_i = rest / plan.outcomes.size();

    const NetworkLevel& np = plan.networks[np_i];
    const OutcomeLevel& pom = plan.outcomes[pom_i];
    const std::string& scheme_name = plan.schemes[rs_i];
    const EstimatorLevel& est = plan.estimators[a_i];

    std::uint64_t seed = derive_seed(plan.base_seed,
                                     {cell, static_cast<std::uint64_t>(rep)});

    auto gen = generator_for(np, plan.timespan);
    auto params = netcore::sample_hmmb_params(gen, derive_seed(seed, {1}));
    auto net = netcore::sample_network(params, derive_seed(seed, {2}));

    auto model = model_for(pom, np.communities);
    science::CovariateSource source;
    source.params = &params;
    auto table = science::build_science(net, model, source, derive_seed(seed, {3}));

    int cap = std::max(1, static_cast<int>(std::lround(
                              plan.resource_fractions[tr_i] * np.size)));
    auto rng = make_rng(seed, {4});
    std::vector<int> z;
    if (pom.confounder == science::ConfounderType::treatment_likelihood) {
        z = weighted_assignment(table.treatment_weight, cap, rng);
    } else if (scheme_name == "RC" || scheme_name == "RG" ||
               scheme_name == "RCG") {
        auto grouping =
            design::empirical_tertiles(net, cap, derive_seed(seed, {5}), 50);
        design::SchemeConfig scfg;
        design::BalanceCriterion crit;
        crit.max_draws = plan.rerandomize_max_draws;
        crit.group_size_ratio_max = 1.0;
        if (!table.covariates.empty() && !table.covariates.front().empty()) {
            design::BalanceTier tier;
            for (std::size_t c = 0; c < table.covariates.front().size(); ++c)
                tier.covariate_columns.push_back(static_cast<int>(c));
            tier.threshold = 1.0;
            crit.tiers.push_back(tier);
            auto cal_rng = make_rng(seed, {6});
            auto thresholds = design::calibrate_thresholds(
                design::Scheme::CR, net, table.covariates, grouping, cap,
                crit.tiers, scfg, cal_rng, 10.0, plan.calibration_draws);
            crit.tiers[0].threshold = thresholds[0];
        }
        std::vector<std::vector<double>> cov =
            table.covariates.empty()
                ? std::vector<std::vector<double>>(np.size,
                                                   std::vector<double>{0.0})
                : table.covariates;
        auto assignment = design::rerandomize(
            design::Scheme::CR, crit,
            design::rerand_variant_from_string(scheme_name), net, cov, grouping,
            cap, scfg, rng);
        z = assignment.z;
    } else {
        design::SchemeConfig scfg;
        scfg.cluster_count = np.communities;
        auto assignment = design::draw_assignment(
            design::scheme_from_string(scheme_name), net, cap, scfg, rng);
        z = assignment.z;
    }
    auto y = science::observe(table, z);

    std::vector<ResultRow> rows;
    ParsedEstimator parsed = parse_estimator(est.name, pom.confounder);

    std::vector<science::EstimandSpec> target_specs;
    for (auto kind : plan.targets) {
        science::EstimandSpec spec;
        spec.kind = kind;
        spec.z = z;
        target_specs.push_back(spec);
    }

    std::vector<analysis::EstimandEstimate> estimates;
    if (parsed.kind == analysis::EstimatorKind::bayes) {
        analysis::CovariateData cov;
        cov.activity = params.lambda;
        cov.membership = params.pi;
        if (pom.confounder == science::ConfounderType::treatment_likelihood ||
            pom.confounder == science::ConfounderType::independent) {
            cov.extra.resize(np.size);
            for (int i = 0; i < np.size; ++i)
                cov.extra[i] = table.covariates[i][0];
        }
        parsed.spec.sample_count = plan.posterior_samples;
        estimates = analysis::bayes_impute(y, z, net, cov, parsed.spec,
                                           target_specs, plan.level,
                                           derive_seed(seed, {7}));
    }

    for (std::size_t t = 0; t < target_specs.size(); ++t) {
        ResultRow row;
        row.cell = cell;
        row.np = levels[0];
        row.pom = levels[1];
        row.tr = levels[2];
        row.rs = levels[3];
        row.a = levels[4];
        row.replication = rep;
        row.target = science::to_string(plan.targets[t]);
        row.truth = science::compute_estimand(table, target_specs[t], {},
                                              derive_seed(seed, {8, t}))
                        .value;
        if (parsed.kind == analysis::EstimatorKind::neyman) {
            row.estimate = analysis::neyman(y, z);
            row.lo = row.hi = row.estimate;
        } else if (parsed.kind == analysis::EstimatorKind::diff_means) {
            auto grouping = design::empirical_tertiles(
                net, cap, derive_seed(seed, {9}), 50);
            auto dm = analysis::diff_means(y, z, net, target_specs[t], grouping);
            row.estimate = dm.value;
            row.lo = row.hi = row.estimate;
            if (dm.used_fallback)
                row.diagnostic = "nearest_fallback";
            if (dm.degenerate)
                row.diagnostic = "degenerate";
            row.imse = (row.estimate - row.truth) * (row.estimate - row.truth);
        } else {
            const auto& e = estimates[t];
            double mean = std::accumulate(e.samples.begin(), e.samples.end(),
                                          0.0) /
                          static_cast<double>(e.samples.size());
            row.estimate = mean;
            row.lo = e.interval.first;
            row.hi = e.interval.second;
            row.width = row.hi - row.lo;
            row.covered = (row.truth >= row.lo && row.truth <= row.hi) ? 1 : 0;
            row.imse = analysis::integrated_mse(e, row.truth);
            if (!e.flags.empty()) {
                std::string d;
                for (const auto& f : e.flags)
                    d += (d.empty() ? "" : ";") + f;
                row.diagnostic = d;
            }
        }
        if (parsed.kind != analysis::EstimatorKind::bayes)
            row.imse = (row.estimate - row.truth) * (row.estimate - row.truth);
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace

std::vector<ResultRow> run_factorial(const FactorialPlan& plan) {
    plan.validate();
    std::vector<std::size_t> cells = plan.cell_subset;
    if (cells.empty()) {
        cells.resize(plan.cell_count());
        std::iota(cells.begin(), cells.end(), 0);
    }

    std::set<std::string> done;
    std::vector<ResultRow> rows;
    bool ledger_exists = !plan.ledger_path.empty() &&
                         std::filesystem::exists(plan.ledger_path);
    if (ledger_exists) {
        rows = read_result_csv(plan.ledger_path);
        for (const auto& r : rows)
            done.insert(row_key(r));
    }
    std::ofstream ledger;
    if (!plan.ledger_path.empty()) {
        bool fresh = !ledger_exists;
        ledger.open(plan.ledger_path, std::ios::app);
        if (!ledger)
            throw DataError("cannot open ledger " + plan.ledger_path);
        ledger.precision(17); // rows must survive a read-back bit for bit
        if (fresh)
            ledger << "cell,np,pom,tr,rs,a,replication,target,truth,estimate,"
                      "lo,hi,width,covered,imse,failed,diagnostic\n";
    }

    for (std::size_t cell : cells) {
        for (int rep = 0; rep < plan.replications; ++rep) {
            ResultRow probe;
            probe.cell = cell;
            probe.replication = rep;
            if (done.count(row_key(probe)))
                continue;
            std::vector<ResultRow> rep_rows;
            try {
                rep_rows = run_replication(plan, cell, rep);
            } catch (const std::exception& e) {
                auto levels = plan.cell_levels(cell);
                ResultRow row;
                row.cell = cell;
                row.np = levels[0];
                row.pom = levels[1];
                row.tr = levels[2];
                row.rs = levels[3];
                row.a = levels[4];
                row.replication = rep;
                row.target = "all";
                row.failed = 1;
                row.diagnostic = sanitize(e.what());
                rep_rows.push_back(std::move(row));
            }
            if (ledger.is_open()) {
                for (const auto& r : rep_rows)
                    ledger << r.cell << ',' << r.np << ',' << r.pom << ','
                           << r.tr << ',' << r.rs << ',' << r.a << ','
                           << r.replication << ',' << r.target << ','
                           << r.truth << ',' << r.estimate << ',' << r.lo
                           << ',' << r.hi << ',' << r.width << ',' << r.covered
                           << ',' << r.imse << ',' << r.failed << ','
                           << sanitize(r.diagnostic) << '\n';
                ledger.flush();
            }
            for (auto& r : rep_rows)
                rows.push_back(std::move(r));
        }
    }
    std::sort(rows.begin(), rows.end(), row_less);
    return rows;
}

std::vector<AnovaRow> anova(
    const std::vector<std::map<std::string, std::string>>& factor_values,
    const std::vector<double>& response,
    const std::vector<std::string>& factor_names, int max_order) {
    if (factor_values.size() != response.size())
        throw DataError("factor rows and responses differ in length");
    if (factor_values.empty())
        throw DataError("no data for analysis of variance");
    const int f = static_cast<int>(factor_names.size());
    const std::size_t n = response.size();

    // Level sets per factor, sorted for determinism.
    std::vector<std::vector<std::string>> levels(f);
    for (int k = 0; k < f; ++k) {
        std::set<std::string> s;
        for (const auto& row : factor_values) {
            auto it = row.find(factor_names[k]);
            if (it == row.end())
                throw DataError("row missing factor " + factor_names[k]);
            s.insert(it->second);
        }
        levels[k].assign(s.begin(), s.end());
    }

    // Balance check over the full cross.
    std::map<std::string, std::size_t> cell_counts;
    auto full_key = [&](const std::map<std::string, std::string>& row) {
        std::string key;
        for (int k = 0; k < f; ++k)
            key += row.at(factor_names[k]) + "|";
        return key;
    };
    for (const auto& row : factor_values)
        ++cell_counts[full_key(row)];
    std::size_t expected_cells = 1;
    for (int k = 0; k < f; ++k)
        expected_cells *= levels[k].size();
    if (cell_counts.size() != expected_cells) {
        std::vector<std::size_t> idx(f, 0);
        for (;;) {
            std::string key;
            std::string name;
            for (int k = 0; k < f; ++k) {
                key += levels[k][idx[k]] + "|";
                name += (k ? " x " : "") + levels[k][idx[k]];
            }
            if (!cell_counts.count(key))
                throw DataError("unbalanced data: missing cell " + name);
            int k = f - 1;
            while (k >= 0 && ++idx[k] == levels[k].size()) {
                idx[k] = 0;
                --k;
            }
            if (k < 0)
                break;
        }
    }
    std::size_t reps = cell_counts.begin()->second;
    for (const auto& [k, c] : cell_counts)
        if (c != reps)
            throw DataError("unbalanced data: unequal replication in cell " + k);

    double grand = std::accumulate(response.begin(), response.end(), 0.0) /
                   static_cast<double>(n);
    double total_ss = 0.0;
    for (double y : response)
        total_ss += (y - grand) * (y - grand);

    // SS per subset via the inclusion-exclusion recursion over the means of
    // marginal cells.
    std::vector<double> subset_ss(1u << f, 0.0);
    std::vector<long long> subset_df(1u << f, 0);
    auto subset_key = [&](const std::map<std::string, std::string>& row,
                          unsigned mask) {
        std::string key;
        for (int k = 0; k < f; ++k)
            if (mask & (1u << k))
                key += row.at(factor_names[k]) + "|";
        return key;
    };
    for (unsigned mask = 1; mask < (1u << f); ++mask) {
        std::map<std::string, std::pair<double, std::size_t>> groups;
        for (std::size_t r = 0; r < n; ++r) {
            auto& g = groups[subset_key(factor_values[r], mask)];
            g.first += response[r];
            ++g.second;
        }
        double raw = 0.0;
        for (const auto& [key, g] : groups) {
            double m = g.first / static_cast<double>(g.second);
            raw += static_cast<double>(g.second) * (m - grand) * (m - grand);
        }
        for (unsigned sub = (mask - 1) & mask; sub; sub = (sub - 1) & mask)
            raw -= subset_ss[sub];
        subset_ss[mask] = raw;
        long long df = 1;
        for (int k = 0; k < f; ++k)
            if (mask & (1u << k))
                df *= static_cast<long long>(levels[k].size()) - 1;
        subset_df[mask] = df;
    }

    std::vector<AnovaRow> out;
    double explained_ss = 0.0;
    long long explained_df = 0;
    for (int order = 1; order <= max_order && order <= f; ++order)
        for (unsigned mask = 1; mask < (1u << f); ++mask) {
            int bits = 0;
            for (int k = 0; k < f; ++k)
                if (mask & (1u << k))
                    ++bits;
            if (bits != order)
                continue;
            AnovaRow row;
            for (int k = 0; k < f; ++k)
                if (mask & (1u << k))
                    row.term += (row.term.empty() ? "" : " x ") + factor_names[k];
            row.df = subset_df[mask];
            row.ss = subset_ss[mask];
            row.ms = row.df > 0 ? row.ss / static_cast<double>(row.df) : 0.0;
            explained_ss += row.ss;
            explained_df += row.df;
            out.push_back(std::move(row));
        }

    AnovaRow residual;
    residual.term = "residual";
    residual.df = static_cast<long long>(n) - 1 - explained_df;
    residual.ss = total_ss - explained_ss;
    residual.ms = residual.df > 0 ? residual.ss / residual.df : 0.0;
    out.push_back(residual);
    AnovaRow total;
    total.term = "total";
    total.df = static_cast<long long>(n) - 1;
    total.ss = total_ss;
    total.ms = 0.0;
    out.push_back(total);
    return out;
}

std::vector<CellSummary> coverage_summary(const std::vector<ResultRow>& rows) {
    std::map<std::pair<std::size_t, std::string>, std::vector<const ResultRow*>>
        groups;
    for (const auto& r : rows) {
        if (r.failed)
            continue;
        groups[{r.cell, r.target}].push_back(&r);
    }
    std::vector<CellSummary> out;
    for (const auto& [key, group] : groups) {
        CellSummary s;
        s.cell = key.first;
        s.target = key.second;
        s.np = group.front()->np;
        s.pom = group.front()->pom;
        s.tr = group.front()->tr;
        s.rs = group.front()->rs;
        s.a = group.front()->a;
        s.replications = static_cast<int>(group.size());
        double cov = 0.0, width = 0.0, imse = 0.0;
        for (const auto* r : group) {
            cov += r->covered;
            width += r->width;
            imse += r->imse;
        }
        s.coverage = cov / s.replications;
        s.mean_width = width / s.replications;
        s.mean_imse = imse / s.replications;
        double var = 0.0;
        for (const auto* r : group)
            var += (r->imse - s.mean_imse) * (r->imse - s.mean_imse);
        s.se_imse = s.replications > 1
                        ? std::sqrt(var / (s.replications - 1.0) / s.replications)
                        : 0.0;
        out.push_back(std::move(s));
    }
    return out;
}

namespace {
constexpr const char* kColumnComment =
    "# columns: cell,np,pom,tr,rs,a,replication,target,truth,estimate,lo,hi,"
    "width,covered,imse,failed,diagnostic\n";
}

void write_result_csv(const std::vector<ResultRow>& rows,
                      const std::string& path) {
    std::ofstream out(path);
    if (!out)
        throw DataError("cannot open " + path + " for writing");
    out << kColumnComment;
    out << "cell,np,pom,tr,rs,a,replication,target,truth,estimate,lo,hi,width,"
           "covered,imse,failed,diagnostic\n";
    out.precision(17);
    for (const auto& r : rows)
        out << r.cell << ',' << r.np << ',' << r.pom << ',' << r.tr << ','
            << r.rs << ',' << r.a << ',' << r.replication << ',' << r.target
            << ',' << r.truth << ',' << r.estimate << ',' << r.lo << ','
            << r.hi << ',' << r.width << ',' << r.covered << ',' << r.imse
            << ',' << r.failed << ',' << sanitize(r.diagnostic) << '\n';
}

std::vector<ResultRow> read_result_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open " + path);
    std::vector<ResultRow> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#')
            continue;
        if (line.rfind("cell,", 0) == 0)
            continue;
        std::vector<std::string> parts;
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ','))
            parts.push_back(tok);
        while (parts.size() < 17)
            parts.push_back("");
        ResultRow r;
        r.cell = std::stoull(parts[0]);
        r.np = parts[1];
        r.pom = parts[2];
        r.tr = parts[3];
        r.rs = parts[4];
        r.a = parts[5];
        r.replication = std::stoi(parts[6]);
        r.target = parts[7];
        r.truth = std::stod(parts[8]);
        r.estimate = std::stod(parts[9]);
        r.lo = std::stod(parts[10]);
        r.hi = std::stod(parts[11]);
        r.width = std::stod(parts[12]);
        r.covered = std::stoi(parts[13]);
        r.imse = std::stod(parts[14]);
        r.failed = std::stoi(parts[15]);
        r.diagnostic = parts[16];
        rows.push_back(std::move(r));
    }
    return rows;
}

void emit_report(const std::vector<ResultRow>& rows, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    std::vector<ResultRow> sorted = rows;
    std::sort(sorted.begin(), sorted.end(), row_less);
    write_result_csv(sorted, out_dir + "/results.csv");

    nlohmann::json j;
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& s : coverage_summary(sorted))
        cells.push_back({{"cell", s.cell},
                         {"np", s.np},
                         {"pom", s.pom},
                         {"tr", s.tr},
                         {"rs", s.rs},
                         {"a", s.a},
                         {"target", s.target},
                         {"replications", s.replications},
                         {"coverage", s.coverage},
                         {"mean_width", s.mean_width},
                         {"mean_imse", s.mean_imse},
                         {"se_imse", s.se_imse}});
    j["cells"] = std::move(cells);
    j["rows"] = sorted.size();
    std::ofstream out(out_dir + "/summary.json");
    if (!out)
        throw DataError("cannot write summary.json in " + out_dir);
    out << j.dump(2) << '\n';
}

std::vector<std::string> full_np_names() {
    std::vector<std::string> out;
    for (int n : {64, 128})
        for (const char* d : {"d1", "d2"})
            for (int k : {2, 4})
                out.push_back("N" + std::to_string(n) + d + "K" +
                              std::to_string(k));
    return out;
}

std::vector<std::string> full_pom_names() {
    std::vector<std::string> out;
    for (const char* c : {"none", "activity", "membership"})
        for (const char* e : {"S", "L"})
            for (const char* h : {"I", "Lg"})
                out.push_back(std::string(c) + "-" + e + h);
    return out;
}

std::vector<std::string> full_rs_names() {
    return {"CR", "SR", "INR", "PT", "RNC", "RC", "RG", "RCG"};
}

std::vector<std::string> full_a_names() {
    return {"NM",   "DM",   "BNS",  "BNL",  "BIPS", "BIPL",
            "BLPS", "BLPL", "BICS", "BICL", "BLCS", "BLCL"};
}

FactorialPlan default_plan() {
    FactorialPlan plan;
    for (int n : {48, 64})
        for (double d : {1.0, 1.5}) {
            NetworkLevel lvl;
            lvl.name = "N" + std::to_string(n) + (d == 1.0 ? "d1" : "d2");
            lvl.size = n;
            lvl.density_scale = d;
            lvl.communities = 2;
            plan.networks.push_back(lvl);
        }
    {
        OutcomeLevel a;
        a.name = "none-SI";
        plan.outcomes.push_back(a);
        OutcomeLevel b;
        b.name = "activity-SI";
        b.confounder = science::ConfounderType::activity;
        plan.outcomes.push_back(b);
    }
    plan.resource_fractions = {0.25};
    plan.schemes = {"CR", "RC"};
    plan.estimators = {{"NM"}, {"BNS"}, {"BICS"}};
    plan.replications = 2;
    plan.posterior_samples = 400;
    return plan;
}

FactorialPlan plan_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    FactorialPlan plan;
    for (const auto& jn : j.at("networks")) {
        NetworkLevel n;
        n.name = jn.at("name");
        n.size = jn.at("size");
        n.density_scale = jn.value("density_scale", 1.0);
        n.communities = jn.value("communities", 4);
        n.structure_scale = jn.value("structure_scale", 1.0);
        n.degree_exponent = jn.value("degree_exponent", 2.9);
        plan.networks.push_back(n);
    }
    for (const auto& jo : j.at("outcomes")) {
        OutcomeLevel o;
        o.name = jo.at("name");
        o.confounder =
            science::confounder_from_string(jo.value("confounder", "none"));
        o.covariate_fn = science::covariate_fn_from_string(
            jo.value("covariate_fn", "identity"));
        o.exposure_fn =
            science::exposure_fn_from_string(jo.value("exposure_fn", "sum"));
        plan.outcomes.push_back(o);
    }
    plan.resource_fractions =
        j.at("resource_fractions").get<std::vector<double>>();
    plan.schemes = j.at("schemes").get<std::vector<std::string>>();
    for (const auto& je : j.at("estimators"))
        plan.estimators.push_back({je.get<std::string>()});
    plan.replications = j.value("replications", 1);
    plan.base_seed = j.value("base_seed", 0ull);
    if (j.contains("targets")) {
        plan.targets.clear();
        for (const auto& jt : j.at("targets"))
            plan.targets.push_back(
                science::estimand_kind_from_string(jt.get<std::string>()));
    }
    plan.level = j.value("level", 0.9);
    plan.timespan = j.value("timespan", 6.0);
    plan.posterior_samples = j.value("posterior_samples", 1000);
    plan.rerandomize_max_draws = j.value("rerandomize_max_draws", 100);
    plan.calibration_draws = j.value("calibration_draws", 100);
    if (j.contains("cell_subset"))
        plan.cell_subset = j.at("cell_subset").get<std::vector<std::size_t>>();
    plan.ledger_path = j.value("ledger_path", std::string());
    return plan;
}

std::string plan_to_json(const FactorialPlan& plan) {
    nlohmann::json j;
    j["networks"] = nlohmann::json::array();
    for (const auto& n : plan.networks)
        j["networks"].push_back({{"name", n.name},
                                 {"size", n.size},
                                 {"density_scale", n.density_scale},
                                 {"communities", n.communities},
                                 {"structure_scale", n.structure_scale},
                                 {"degree_exponent", n.degree_exponent}});
    j["outcomes"] = nlohmann::json::array();
    for (const auto& o : plan.outcomes)
        j["outcomes"].push_back(
            {{"name", o.name},
             {"confounder", science::to_string(o.confounder)},
             {"covariate_fn", science::to_string(o.covariate_fn)},
             {"exposure_fn", science::to_string(o.exposure_fn)}});
    j["resource_fractions"] = plan.resource_fractions;
    j["schemes"] = plan.schemes;
    j["estimators"] = nlohmann::json::array();
    for (const auto& e : plan.estimators)
        j["estimators"].push_back(e.name);
    j["replications"] = plan.replications;
    j["base_seed"] = plan.base_seed;
    j["targets"] = nlohmann::json::array();
    for (auto t : plan.targets)
        j["targets"].push_back(science::to_string(t));
    j["level"] = plan.level;
    j["timespan"] = plan.timespan;
    j["posterior_samples"] = plan.posterior_samples;
    j["rerandomize_max_draws"] = plan.rerandomize_max_draws;
    j["calibration_draws"] = plan.calibration_draws;
    j["cell_subset"] = plan.cell_subset;
    j["ledger_path"] = plan.ledger_path;
    return j.dump(2);
}

} // namespace causalnet::factory
