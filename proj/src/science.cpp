#include "causalnet/science.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "causalnet/errors.hpp"
#include "causalnet/rng.hpp"

namespace causalnet::science {

namespace {

double gfun(double s, ExposureFn fn) {
    if (fn == ExposureFn::sum)
        return s;
    return s > 0.0 ? std::log(s) : 0.0;
}

double log_binom(int n, int k) {
    if (k < 0 || k > n)
        return -std::numeric_limits<double>::infinity();
    return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

// log of sum_{m=lo}^{hi} C(n, m)
double log_binom_tail(int n, int lo, int hi) {
    lo = std::max(lo, 0);
    hi = std::min(hi, n);
    if (lo > hi)
        return -std::numeric_limits<double>::infinity();
    double mx = -std::numeric_limits<double>::infinity();
    for (int m = lo; m <= hi; ++m)
        mx = std::max(mx, log_binom(n, m));
    double acc = 0.0;
    for (int m = lo; m <= hi; ++m)
        acc += std::exp(log_binom(n, m) - mx);
    return mx + std::log(acc);
}

void check_assignment(const std::vector<int>& z, int n) {
    if (static_cast<int>(z.size()) != n)
        throw DataError("assignment length does not match network size");
    for (int v : z)
        if (v != 0 && v != 1)
            throw DataError("assignment entries must be 0 or 1");
}

std::vector<double> column_effects(const OutcomeModelSpec& model,
                                   const std::vector<std::vector<double>>& x) {
    const int n = static_cast<int>(x.size());
    std::vector<double> effect(n, 0.0);
    if (model.betas.empty())
        return effect;
    const int dim = static_cast<int>(model.betas.size());
    for (const auto& row : x)
        if (static_cast<int>(row.size()) != dim)
            throw ConfigError("covariate dimension does not match betas");
    // Log transform guarded per column: non-positive inputs shift the column
    // by (1e-6 - min) so the transform stays defined.
    std::vector<double> shift(dim, 0.0);
    if (model.covariate_fn == CovariateFn::log) {
        for (int m = 0; m < dim; ++m) {
            double mn = std::numeric_limits<double>::infinity();
            for (const auto& row : x)
                mn = std::min(mn, row[m]);
            if (mn <= 0.0)
                shift[m] = 1e-6 - mn;
        }
    }
    for (int i = 0; i < n; ++i)
        for (int m = 0; m < dim; ++m) {
            double h = model.covariate_fn == CovariateFn::identity
                           ? x[i][m]
                           : std::log(x[i][m] + shift[m]);
            effect[i] += model.betas[m] * h;
        }
    return effect;
}

} // namespace

ScienceTable build_science(const netcore::InfluenceNetwork& net,
                           const OutcomeModelSpec& model,
                           const CovariateSource& source, std::uint64_t seed) {
    const int n = net.size();
    ScienceTable table;
    table.net = net;
    table.model = model;

    auto rng = make_rng(seed, {0x736369ULL});
    if (!source.values.empty()) {
        if (static_cast<int>(source.values.size()) != n)
            throw ConfigError("covariate values size does not match network");
        table.covariates = source.values;
    } else {
        switch (model.confounder) {
        case ConfounderType::none:
            table.covariates.assign(n, {});
            break;
        case ConfounderType::independent: {
            std::normal_distribution<double> d(1.0, 1.0);
            for (int i = 0; i < n; ++i)
                table.covariates.push_back({d(rng)});
            break;
        }
        case ConfounderType::treatment_likelihood: {
            std::normal_distribution<double> d(0.0, std::sqrt(2.0));
            for (int i = 0; i < n; ++i)
                table.covariates.push_back({d(rng)});
            break;
        }
        case ConfounderType::activity: {
            if (!source.params)
                throw ConfigError("activity confounder requires network parameters");
            for (int i = 0; i < n; ++i)
                table.covariates.push_back({source.params->lambda[i]});
            break;
        }
        case ConfounderType::membership: {
            if (!source.params)
                throw ConfigError("membership confounder requires network parameters");
            for (int i = 0; i < n; ++i)
                table.covariates.push_back(source.params->pi[i]);
            break;
        }
        }
    }
    if (model.confounder == ConfounderType::treatment_likelihood) {
        table.treatment_weight.resize(n);
        for (int i = 0; i < n; ++i)
            table.treatment_weight[i] = std::exp(-table.covariates[i][0]);
    }
    table.covariate_effect = column_effects(model, table.covariates);

    std::normal_distribution<double> eps(model.noise_mean, model.noise_sd);
    table.noise.resize(n);
    for (int i = 0; i < n; ++i)
        table.noise[i] = model.noise_sd > 0.0 ? eps(rng) : model.noise_mean;

    table.open_neighborhoods.resize(n);
    for (int i = 0; i < n; ++i) {
        auto closed = n_hop_neighborhood(net, i, model.neighborhood);
        table.open_neighborhoods[i].assign(closed.begin() + 1, closed.end());
    }
    return table;
}

double exposure(const netcore::InfluenceNetwork& net, const std::vector<int>& z,
                int i, ExposureFn fn) {
    check_assignment(z, net.size());
    double s = 0.0;
    for (const auto& [j, c] : net.in_edges(i))
        if (z[j])
            s += static_cast<double>(c);
    return gfun(s, fn);
}

double potential_outcome(const ScienceTable& table, int i, int z_self,
                         const std::vector<int>& z_neighbors) {
    if (table.model.neighborhood.hops < 1)
        return table.model.tau * z_self + table.covariate_effect[i] +
               table.model.mu + table.noise[i];
    double g = exposure(table.net, z_neighbors, i, table.model.exposure_fn);
    return table.model.tau * z_self + table.model.gamma * g +
           table.covariate_effect[i] + table.model.mu + table.noise[i];
}

std::vector<double> observe(const ScienceTable& table, const std::vector<int>& z) {
    check_assignment(z, table.net.size());
    std::vector<double> y(table.net.size());
    for (int i = 0; i < table.net.size(); ++i)
        y[i] = potential_outcome(table, i, z[i], z);
    return y;
}

namespace {

struct NeighborWeights {
    std::vector<double> nonzero; // in-edge weights of N_{-i} members
    int zero_members = 0;        // members contributing no direct weight
    int total() const { return static_cast<int>(nonzero.size()) + zero_members; }
};

NeighborWeights neighbor_weights(const ScienceTable& table, int i) {
    NeighborWeights w;
    const auto& in = table.net.in_edges(i);
    for (int j : table.open_neighborhoods[i]) {
        auto it = in.find(j);
        if (it != in.end() && it->second > 0)
            w.nonzero.push_back(static_cast<double>(it->second));
        else
            ++w.zero_members;
    }
    return w;
}

// Mean of gfun over all k-subsets of the neighborhood (exact).
double mean_g_exactly_k(const NeighborWeights& w, int k, ExposureFn fn,
                        const McConfig& mc, int unit) {
    const int d = w.total();
    const int d1 = static_cast<int>(w.nonzero.size());
    const int d0 = w.zero_members;
    if (k > d)
        throw DataError("unit has fewer neighbors than k");
    if (fn == ExposureFn::sum) {
        double total = std::accumulate(w.nonzero.begin(), w.nonzero.end(), 0.0);
        return d > 0 ? total * k / d : 0.0;
    }
    if (d1 > mc.enumeration_cap_log2)
        throw ConfigError("enumeration cap exceeded on unit " + std::to_string(unit) +
                          " (" + std::to_string(d1) + " weighted neighbors)");
    double log_denom = log_binom(d, k);
    double mean = 0.0;
    for (std::uint32_t mask = 0; mask < (1u << d1); ++mask) {
        int t = std::popcount(mask);
        if (t > k || k - t > d0)
            continue;
        double s = 0.0;
        for (int b = 0; b < d1; ++b)
            if (mask & (1u << b))
                s += w.nonzero[b];
        mean += std::exp(log_binom(d0, k - t) - log_denom) * gfun(s, fn);
    }
    return mean;
}

// Mean of gfun over all subsets of size >= k (exact).
double mean_g_at_least_k(const NeighborWeights& w, int k, ExposureFn fn,
                         const McConfig& mc, int unit) {
    const int d = w.total();
    const int d1 = static_cast<int>(w.nonzero.size());
    const int d0 = w.zero_members;
    if (k > d)
        throw DataError("unit has fewer neighbors than k");
    double log_denom = log_binom_tail(d, k, d);
    if (fn == ExposureFn::sum) {
        double total = std::accumulate(w.nonzero.begin(), w.nonzero.end(), 0.0);
        if (d == 0)
            return 0.0;
        double mean_l = 0.0;
        for (int l = std::max(k, 0); l <= d; ++l)
            mean_l += l * std::exp(log_binom(d, l) - log_denom);
        return total * mean_l / d;
    }
    if (d1 > mc.enumeration_cap_log2)
        throw ConfigError("enumeration cap exceeded on unit " + std::to_string(unit) +
                          " (" + std::to_string(d1) + " weighted neighbors)");
    double mean = 0.0;
    for (std::uint32_t mask = 0; mask < (1u << d1); ++mask) {
        int t = std::popcount(mask);
        double log_mult = log_binom_tail(d0, k - t, d0);
        if (!std::isfinite(log_mult))
            continue;
        double s = 0.0;
        for (int b = 0; b < d1; ++b)
            if (mask & (1u << b))
                s += w.nonzero[b];
        mean += std::exp(log_mult - log_denom) * gfun(s, fn);
    }
    return mean;
}

std::vector<int> draw_strategy(const StrategySpec& strat, int n,
                               std::mt19937_64& rng) {
    std::vector<int> z(n, 0);
    if (strat.kind == StrategySpec::Kind::bernoulli) {
        std::bernoulli_distribution coin(strat.p);
        for (int i = 0; i < n; ++i)
            z[i] = coin(rng) ? 1 : 0;
    } else {
        std::vector<int> ids(n);
        std::iota(ids.begin(), ids.end(), 0);
        for (int t = 0; t < strat.cap && t < n; ++t) {
            std::uniform_int_distribution<int> pick(t, n - 1);
            std::swap(ids[t], ids[pick(rng)]);
            z[ids[t]] = 1;
        }
    }
    return z;
}

EstimandValue mc_summary(const std::vector<double>& draws) {
    double mean = std::accumulate(draws.begin(), draws.end(), 0.0) / draws.size();
    double var = 0.0;
    for (double v : draws)
        var += (v - mean) * (v - mean);
    var = draws.size() > 1 ? var / (draws.size() - 1) : 0.0;
    EstimandValue out;
    out.value = mean;
    out.se = std::sqrt(var / draws.size());
    return out;
}

} // namespace

EstimandValue compute_estimand(const ScienceTable& table, const EstimandSpec& spec,
                               const McConfig& mc, std::uint64_t seed) {
    const int n = table.net.size();
    const std::vector<int> zeros(n, 0);
    const ExposureFn fn = table.model.exposure_fn;

    switch (spec.kind) {
    case EstimandKind::primary_avg: {
        // xi_i(z) does not depend on z under the additive model, so the
        // average over neighborhood assignments collapses to one evaluation.
        double acc = 0.0;
        for (int i = 0; i < n; ++i)
            acc += potential_outcome(table, i, 1, zeros) -
                   potential_outcome(table, i, 0, zeros);
        return {acc / n, std::nullopt};
    }
    case EstimandKind::primary_conditional: {
        check_assignment(spec.z, n);
        double acc = 0.0;
        for (int i = 0; i < n; ++i)
            acc += potential_outcome(table, i, 1, spec.z) -
                   potential_outcome(table, i, 0, spec.z);
        return {acc / n, std::nullopt};
    }
    case EstimandKind::k_neighbors: {
        double acc = 0.0;
        int qualified = 0;
        for (int i = 0; i < n; ++i) {
            auto w = neighbor_weights(table, i);
            if (w.total() < spec.k)
                continue;
            ++qualified;
            acc += table.model.gamma *
                   (mean_g_exactly_k(w, spec.k, fn, mc, i) - gfun(0.0, fn));
        }
        if (qualified == 0)
            throw DataError("no unit has at least k neighbors");
        return {acc / qualified, std::nullopt};
    }
    case EstimandKind::k_neighbors_atleast: {
        double acc = 0.0;
        int qualified = 0;
        for (int i = 0; i < n; ++i) {
            auto w = neighbor_weights(table, i);
            if (w.total() < spec.k)
                continue;
            ++qualified;
            acc += table.model.gamma *
                   (mean_g_at_least_k(w, spec.k, fn, mc, i) - gfun(0.0, fn));
        }
        if (qualified == 0)
            throw DataError("no unit has at least k neighbors");
        return {acc / qualified, std::nullopt};
    }
    case EstimandKind::fixed_primary: {
        check_assignment(spec.z, n);
        double acc = 0.0;
        int treated = 0;
        for (int i = 0; i < n; ++i) {
            if (!spec.z[i])
                continue;
            ++treated;
            acc += potential_outcome(table, i, 1, spec.z) -
                   potential_outcome(table, i, 0, spec.z);
        }
        if (treated == 0)
            throw DataError("fixed_primary requires a non-empty treated set");
        return {acc / treated, std::nullopt};
    }
    case EstimandKind::fixed_primary_no_peer: {
        check_assignment(spec.z, n);
        double acc = 0.0;
        int treated = 0;
        for (int i = 0; i < n; ++i) {
            if (!spec.z[i])
                continue;
            ++treated;
            acc += potential_outcome(table, i, 1, zeros) -
                   potential_outcome(table, i, 0, zeros);
        }
        if (treated == 0)
            throw DataError("fixed_primary_no_peer requires a non-empty treated set");
        return {acc / treated, std::nullopt};
    }
    case EstimandKind::fixed_peer: {
        check_assignment(spec.z, n);
        double acc = 0.0;
        for (int i = 0; i < n; ++i)
            acc += potential_outcome(table, i, spec.z[i], spec.z) -
                   potential_outcome(table, i, spec.z[i], zeros);
        return {acc / n, std::nullopt};
    }
    case EstimandKind::fixed_total: {
        check_assignment(spec.z, n);
        double acc = 0.0;
        for (int i = 0; i < n; ++i)
            acc += potential_outcome(table, i, spec.z[i], spec.z) -
                   potential_outcome(table, i, 0, zeros);
        return {acc / n, std::nullopt};
    }
    case EstimandKind::total_by_hop: {
        check_assignment(spec.z, n);
        if (spec.hops < 0)
            throw ConfigError("total_by_hop requires hops >= 0");
        // Forward BFS from the treated set: distance is the minimal number of
        // influence hops from the closest treated unit.
        std::vector<int> dist(n, -1);
        std::vector<int> frontier;
        for (int i = 0; i < n; ++i)
            if (spec.z[i]) {
                dist[i] = 0;
                frontier.push_back(i);
            }
        int level = 0;
        while (!frontier.empty() && level < spec.hops) {
            std::vector<int> next;
            for (int u : frontier)
                for (const auto& [v, c] : table.net.out_edges(u))
                    if (dist[v] < 0) {
                        dist[v] = level + 1;
                        next.push_back(v);
                    }
            frontier = std::move(next);
            ++level;
        }
        double acc = 0.0;
        int count = 0;
        for (int i = 0; i < n; ++i) {
            if (dist[i] != spec.hops)
                continue;
            ++count;
            acc += potential_outcome(table, i, spec.z[i], spec.z) -
                   potential_outcome(table, i, 0, zeros);
        }
        if (count == 0)
            throw DataError("no unit at hop distance " + std::to_string(spec.hops) +
                            " from the treated set");
        return {acc / count, std::nullopt};
    }
    case EstimandKind::strategy_direct: {
        auto rng = make_rng(seed, {0x737464ULL});
        std::vector<double> draws(mc.draws);
        for (int m = 0; m < mc.draws; ++m) {
            auto z = draw_strategy(spec.strategy_a, n, rng);
            double acc = 0.0;
            for (int i = 0; i < n; ++i)
                acc += z[i] ? potential_outcome(table, i, 1, z)
                            : -potential_outcome(table, i, 0, z);
            draws[m] = acc / n;
        }
        return mc_summary(draws);
    }
    case EstimandKind::strategy_indirect: {
        auto rng = make_rng(seed, {0x737469ULL});
        std::vector<double> draws(mc.draws);
        for (int m = 0; m < mc.draws; ++m) {
            auto zd = draw_strategy(spec.strategy_a, n, rng);
            auto zg = draw_strategy(spec.strategy_b, n, rng);
            double acc = 0.0;
            for (int z_own = 0; z_own <= 1; ++z_own)
                for (int i = 0; i < n; ++i) {
                    if (zd[i] == z_own)
                        acc += 0.5 * potential_outcome(table, i, z_own, zd);
                    if (zg[i] == z_own)
                        acc -= 0.5 * potential_outcome(table, i, z_own, zg);
                }
            draws[m] = acc / n;
        }
        return mc_summary(draws);
    }
    case EstimandKind::network_manipulation: {
        check_assignment(spec.z, n);
        if (!spec.alt_net)
            throw ConfigError("network_manipulation requires an alternative network");
        if (spec.alt_net->size() != n)
            throw ConfigError("alternative network size mismatch");
        ScienceTable alt = table;
        alt.net = *spec.alt_net;
        for (int i = 0; i < n; ++i) {
            auto closed = n_hop_neighborhood(alt.net, i, table.model.neighborhood);
            alt.open_neighborhoods[i].assign(closed.begin() + 1, closed.end());
        }
        double acc = 0.0;
        for (int i = 0; i < n; ++i)
            acc += potential_outcome(alt, i, spec.z[i], spec.z) -
                   potential_outcome(table, i, spec.z[i], spec.z);
        return {acc / n, std::nullopt};
    }
    }
    throw ConfigError("unknown estimand kind");
}

namespace {
const std::vector<std::pair<EstimandKind, const char*>> kEstimandNames = {
    {EstimandKind::primary_avg, "primary_avg"},
    {EstimandKind::primary_conditional, "primary_conditional"},
    {EstimandKind::k_neighbors, "k_neighbors"},
    {EstimandKind::k_neighbors_atleast, "k_neighbors_atleast"},
    {EstimandKind::fixed_primary, "fixed_primary"},
    {EstimandKind::fixed_primary_no_peer, "fixed_primary_no_peer"},
    {EstimandKind::fixed_peer, "fixed_peer"},
    {EstimandKind::fixed_total, "fixed_total"},
    {EstimandKind::total_by_hop, "total_by_hop"},
    {EstimandKind::strategy_direct, "strategy_direct"},
    {EstimandKind::strategy_indirect, "strategy_indirect"},
    {EstimandKind::network_manipulation, "network_manipulation"},
};
} // namespace

std::string to_string(EstimandKind kind) {
    for (const auto& [k, name] : kEstimandNames)
        if (k == kind)
            return name;
    throw ConfigError("unknown estimand kind");
}
EstimandKind estimand_kind_from_string(const std::string& s) {
    for (const auto& [k, name] : kEstimandNames)
        if (s == name)
            return k;
    throw ConfigError("unknown estimand kind '" + s + "'");
}

std::string to_string(ExposureFn fn) {
    return fn == ExposureFn::sum ? "sum" : "log_sum";
}
std::string to_string(CovariateFn fn) {
    return fn == CovariateFn::identity ? "identity" : "log";
}
std::string to_string(ConfounderType c) {
    switch (c) {
    case ConfounderType::none: return "none";
    case ConfounderType::treatment_likelihood: return "treatment_likelihood";
    case ConfounderType::activity: return "activity";
    case ConfounderType::membership: return "membership";
    case ConfounderType::independent: return "independent";
    }
    return "none";
}
ExposureFn exposure_fn_from_string(const std::string& s) {
    if (s == "sum") return ExposureFn::sum;
    if (s == "log_sum") return ExposureFn::log_sum;
    throw ConfigError("unknown exposure function '" + s + "'");
}
CovariateFn covariate_fn_from_string(const std::string& s) {
    if (s == "identity") return CovariateFn::identity;
    if (s == "log") return CovariateFn::log;
    throw ConfigError("unknown covariate function '" + s + "'");
}
ConfounderType confounder_from_string(const std::string& s) {
    if (s == "none") return ConfounderType::none;
    if (s == "treatment_likelihood") return ConfounderType::treatment_likelihood;
    if (s == "activity") return ConfounderType::activity;
    if (s == "membership") return ConfounderType::membership;
    if (s == "independent") return ConfounderType::independent;
    throw ConfigError("unknown confounder type '" + s + "'");
}

std::string science_to_json(const ScienceTable& table) {
    nlohmann::json j;
    j["n"] = table.net.size();
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& [a, b, c] : table.net.edges())
        edges.push_back({a, b, c});
    j["edges"] = edges;
    j["model"] = {
        {"tau", table.model.tau},
        {"gamma", table.model.gamma},
        {"betas", table.model.betas},
        {"mu", table.model.mu},
        {"noise_mean", table.model.noise_mean},
        {"noise_sd", table.model.noise_sd},
        {"exposure_fn", to_string(table.model.exposure_fn)},
        {"covariate_fn", to_string(table.model.covariate_fn)},
        {"confounder", to_string(table.model.confounder)},
        {"hops", table.model.neighborhood.hops},
    };
    j["covariates"] = table.covariates;
    j["noise"] = table.noise;
    j["treatment_weight"] = table.treatment_weight;
    // Convention: log_sum exposure is defined as 0 at zero total exposure.
    j["conventions"] = {{"log_sum_at_zero", 0.0}};
    return j.dump(2);
}

ScienceTable science_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("invalid science JSON: ") + e.what());
    }
    ScienceTable table;
    try {
        int n = j.at("n").get<int>();
        table.net = netcore::InfluenceNetwork(n);
        for (const auto& e : j.at("edges"))
            table.net.set_count(e.at(0).get<int>(), e.at(1).get<int>(),
                                e.at(2).get<long long>());
        const auto& m = j.at("model");
        table.model.tau = m.at("tau").get<double>();
        table.model.gamma = m.at("gamma").get<double>();
        table.model.betas = m.at("betas").get<std::vector<double>>();
        table.model.mu = m.at("mu").get<double>();
        table.model.noise_mean = m.at("noise_mean").get<double>();
        table.model.noise_sd = m.at("noise_sd").get<double>();
        table.model.exposure_fn = exposure_fn_from_string(m.at("exposure_fn"));
        table.model.covariate_fn = covariate_fn_from_string(m.at("covariate_fn"));
        table.model.confounder = confounder_from_string(m.at("confounder"));
        table.model.neighborhood.hops = m.at("hops").get<int>();
        table.covariates = j.at("covariates").get<std::vector<std::vector<double>>>();
        table.noise = j.at("noise").get<std::vector<double>>();
        table.treatment_weight = j.at("treatment_weight").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("science JSON missing field: ") + e.what());
    }
    table.covariate_effect = column_effects(table.model, table.covariates);
    table.open_neighborhoods.resize(table.net.size());
    for (int i = 0; i < table.net.size(); ++i) {
        auto closed = n_hop_neighborhood(table.net, i, table.model.neighborhood);
        table.open_neighborhoods[i].assign(closed.begin() + 1, closed.end());
    }
    return table;
}

} // namespace causalnet::science
