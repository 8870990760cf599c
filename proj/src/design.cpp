#include "causalnet/design.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <Eigen/Dense>

#include "causalnet/errors.hpp"
#include "causalnet/spectral.hpp"

namespace causalnet::design {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Type-7 quantile with linear interpolation between order statistics.
double quantile(std::vector<double> v, double p) {
    if (v.empty())
        throw DataError("quantile of empty sample");
    std::sort(v.begin(), v.end());
    double h = (static_cast<double>(v.size()) - 1.0) * p;
    auto lo = static_cast<std::size_t>(std::floor(h));
    auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - std::floor(h)) * (v[hi] - v[lo]);
}

std::vector<int> open_in_neighborhood(const netcore::InfluenceNetwork& net, int i) {
    std::vector<int> out;
    for (const auto& [j, c] : net.in_edges(i))
        out.push_back(j);
    return out;
}

std::vector<int> sample_without_replacement(const std::vector<int>& pool, int m,
                                            std::mt19937_64& rng) {
    std::vector<int> items = pool;
    std::vector<int> out;
    out.reserve(m);
    for (int t = 0; t < m; ++t) {
        std::uniform_int_distribution<std::size_t> pick(0, items.size() - 1);
        std::size_t idx = pick(rng);
        out.push_back(items[idx]);
        items[idx] = items.back();
        items.pop_back();
    }
    std::sort(out.begin(), out.end());
    return out;
}

void draw_cr(Assignment& a, int n, int cap, std::mt19937_64& rng) {
    std::vector<int> pool(n);
    std::iota(pool.begin(), pool.end(), 0);
    for (int u : sample_without_replacement(pool, cap, rng))
        a.z[u] = 1;
}

void draw_pt(Assignment& a, const netcore::InfluenceNetwork& net, int cap,
             std::mt19937_64& rng) {
    const int n = net.size();
    std::vector<double> w(n);
    for (int i = 0; i < n; ++i)
        w[i] = static_cast<double>(net.out_degree(i)) + 1.0;
    std::vector<int> remaining(n);
    std::iota(remaining.begin(), remaining.end(), 0);
    for (int t = 0; t < cap; ++t) {
        double total = 0.0;
        for (int u : remaining)
            total += w[u];
        std::uniform_real_distribution<double> unif(0.0, total);
        double target = unif(rng);
        double acc = 0.0;
        std::size_t chosen = remaining.size() - 1;
        for (std::size_t idx = 0; idx < remaining.size(); ++idx) {
            acc += w[remaining[idx]];
            if (acc >= target) {
                chosen = idx;
                break;
            }
        }
        a.z[remaining[chosen]] = 1;
        remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(chosen));
    }
}

void draw_rnc(Assignment& a, const netcore::InfluenceNetwork& net, int cap,
              const SchemeConfig& config, std::mt19937_64& rng) {
    const int n = net.size();
    std::vector<int> labels = config.cluster_labels;
    int k;
    if (!labels.empty()) {
        if (static_cast<int>(labels.size()) != n)
            throw ConfigError("cluster label count does not match node count");
        k = 1 + *std::max_element(labels.begin(), labels.end());
    } else {
        k = config.cluster_count > 0
                ? config.cluster_count
                : std::max(1, static_cast<int>(std::lround(std::sqrt(n))));
        labels = netcore::spectral_clusters(net, k, rng());
    }
    std::vector<std::vector<int>> clusters(k);
    for (int i = 0; i < n; ++i)
        clusters[labels[i]].push_back(i);
    std::vector<int> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::bernoulli_distribution coin(0.5);
    int treated = 0;
    for (int c : order) {
        if (!coin(rng))
            continue;
        if (treated + static_cast<int>(clusters[c].size()) > cap)
            break; // cap would be exceeded; remaining clusters stay control
        for (int u : clusters[c])
            a.z[u] = 1;
        treated += static_cast<int>(clusters[c].size());
    }
}

// Sequential randomization: focal units are committed, with their full
// open in-neighborhood, to cycling exposure conditions (own z in {0,1} x
// treated neighbors in {0, k}). A unit stays eligible while neither it nor
// any in-neighbor has been committed.
void draw_sr(Assignment& a, const netcore::InfluenceNetwork& net, int cap,
             int target_k, std::vector<char>& committed, std::mt19937_64& rng) {
    const int n = net.size();
    const std::vector<std::pair<int, int>> conditions = {
        {1, target_k}, {0, target_k}, {1, 0}, {0, 0}};
    std::size_t next = 0;
    int treated = 0;
    for (int i = 0; i < n; ++i)
        if (a.z[i] == 1 && committed[i])
            ++treated;

    auto eligible = [&](int i) {
        if (committed[i])
            return false;
        for (const auto& [j, c] : net.in_edges(i))
            if (committed[j])
                return false;
        return true;
    };

    while (true) {
        std::vector<int> pool;
        for (int i = 0; i < n; ++i)
            if (eligible(i))
                pool.push_back(i);
        if (pool.empty())
            break;
        std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
        int focal = pool[pick(rng)];
        std::vector<int> nbrs = open_in_neighborhood(net, focal);

        // First feasible condition starting from the one due next.
        std::size_t used = conditions.size();
        for (std::size_t off = 0; off < conditions.size(); ++off) {
            auto [oz, kk] = conditions[(next + off) % conditions.size()];
            if (kk > static_cast<int>(nbrs.size()))
                continue;
            if (treated + oz + kk > cap)
                continue;
            used = (next + off) % conditions.size();
            break;
        }
        if (used == conditions.size())
            break; // cannot even place a pure-control cell within the cap
        auto [oz, kk] = conditions[used];
        next = (used + 1) % conditions.size();

        a.z[focal] = oz;
        committed[focal] = 1;
        treated += oz;
        std::vector<int> on =
            kk > 0 ? sample_without_replacement(nbrs, kk, rng) : std::vector<int>{};
        for (int j : nbrs) {
            a.z[j] = 0;
            committed[j] = 1;
        }
        for (int j : on) {
            a.z[j] = 1;
            ++treated;
        }
        a.focal.push_back({focal, oz, kk});
    }
}

void draw_inr(Assignment& a, const netcore::InfluenceNetwork& net, int cap,
              const SchemeConfig& config, std::mt19937_64& rng) {
    const int n = net.size();
    std::vector<char> committed(n, 0);
    // Shared neighbors: in-neighbors of at least two distinct units.
    std::vector<int> indeg_as_nbr(n, 0);
    for (int i = 0; i < n; ++i)
        for (const auto& [j, c] : net.in_edges(i))
            ++indeg_as_nbr[j];
    std::vector<int> shared;
    for (int j = 0; j < n; ++j)
        if (indeg_as_nbr[j] >= 2)
            shared.push_back(j);
    int m = static_cast<int>(std::floor(config.insulation_fraction *
                                        static_cast<double>(shared.size())));
    for (int j : sample_without_replacement(shared, m, rng)) {
        a.z[j] = 0;
        committed[j] = 1;
    }
    draw_sr(a, net, cap, config.target_k, committed, rng);
}

double tier_max_mahalanobis(const std::vector<std::vector<double>>& covariates,
                            const BalanceTier& tier,
                            const std::vector<std::vector<int>>& groups) {
    std::vector<std::vector<double>> sub(covariates.size());
    for (std::size_t i = 0; i < covariates.size(); ++i)
        for (int c : tier.covariate_columns)
            sub[i].push_back(covariates[i][static_cast<std::size_t>(c)]);
    double worst = 0.0;
    for (std::size_t a = 0; a < groups.size(); ++a) {
        if (groups[a].size() < 2)
            continue;
        for (std::size_t b = a + 1; b < groups.size(); ++b) {
            if (groups[b].size() < 2)
                continue;
            worst = std::max(worst,
                             mahalanobis_balance(sub, groups[a], groups[b]).m);
        }
    }
    return worst;
}

std::vector<std::vector<int>> split_by_label(const std::vector<int>& labels,
                                             int group_count) {
    std::vector<std::vector<int>> groups(group_count);
    for (std::size_t i = 0; i < labels.size(); ++i)
        groups[labels[i]].push_back(static_cast<int>(i));
    return groups;
}

} // namespace

int Assignment::treated_count() const {
    return static_cast<int>(std::count(z.begin(), z.end(), 1));
}

std::string to_string(Scheme s) {
    switch (s) {
    case Scheme::CR: return "CR";
    case Scheme::SR: return "SR";
    case Scheme::INR: return "INR";
    case Scheme::PT: return "PT";
    case Scheme::RNC: return "RNC";
    }
    throw ConfigError("unknown scheme");
}

std::string to_string(RerandVariant v) {
    switch (v) {
    case RerandVariant::RC: return "RC";
    case RerandVariant::RG: return "RG";
    case RerandVariant::RCG: return "RCG";
    }
    throw ConfigError("unknown rerandomization variant");
}

Scheme scheme_from_string(const std::string& s) {
    if (s == "CR") return Scheme::CR;
    if (s == "SR") return Scheme::SR;
    if (s == "INR") return Scheme::INR;
    if (s == "PT") return Scheme::PT;
    if (s == "RNC") return Scheme::RNC;
    throw ConfigError("unknown scheme: " + s);
}

RerandVariant rerand_variant_from_string(const std::string& s) {
    if (s == "RC") return RerandVariant::RC;
    if (s == "RG") return RerandVariant::RG;
    if (s == "RCG") return RerandVariant::RCG;
    throw ConfigError("unknown rerandomization variant: " + s);
}

void ExposureGrouping::validate() const {
    if (boundaries.empty())
        throw ConfigError("exposure grouping needs at least one interval");
    double prev_hi = -kInf;
    for (const auto& [lo, hi] : boundaries) {
        if (lo > hi)
            throw ConfigError("exposure interval has lo > hi");
        if (lo <= prev_hi)
            throw ConfigError("exposure intervals overlap");
        prev_hi = hi;
    }
    if (boundaries.front().first > 0.0)
        throw ConfigError("exposure intervals must start at 0");
    if (boundaries.back().second != kInf)
        throw ConfigError("exposure intervals must extend to infinity");
}

int ExposureGrouping::label(double exposure) const {
    for (std::size_t g = 0; g < boundaries.size(); ++g)
        if (exposure <= boundaries[g].second)
            return static_cast<int>(g);
    return static_cast<int>(boundaries.size()) - 1;
}

ExposureGrouping empirical_tertiles(const netcore::InfluenceNetwork& net,
                                    int resource_cap, std::uint64_t seed,
                                    int draws) {
    const int n = net.size();
    std::mt19937_64 rng(seed);
    std::vector<double> pooled;
    pooled.reserve(static_cast<std::size_t>(n) * draws);
    SchemeConfig config;
    for (int d = 0; d < draws; ++d) {
        Assignment a = draw_assignment(Scheme::CR, net, resource_cap, config, rng);
        for (int i = 0; i < n; ++i)
            pooled.push_back(sum_exposure(net, a.z, i));
    }
    double t1 = std::floor(quantile(pooled, 1.0 / 3.0));
    double t2 = std::floor(quantile(pooled, 2.0 / 3.0));
    t1 = std::max(t1, 0.0);
    t2 = std::max(t2, t1 + 1.0);
    ExposureGrouping g;
    g.boundaries = {{0.0, t1}, {t1 + 1.0, t2}, {t2 + 1.0, kInf}};
    g.validate();
    return g;
}

Assignment draw_assignment(Scheme scheme, const netcore::InfluenceNetwork& net,
                           int resource_cap, const SchemeConfig& config,
                           std::mt19937_64& rng) {
    const int n = net.size();
    if (resource_cap < 0 || resource_cap > n)
        throw ConfigError("resource cap out of range");
    Assignment a;
    a.z.assign(n, 0);
    a.scheme = scheme;
    a.resource_cap = resource_cap;
    switch (scheme) {
    case Scheme::CR:
        draw_cr(a, n, resource_cap, rng);
        break;
    case Scheme::SR: {
        std::vector<char> committed(n, 0);
        draw_sr(a, net, resource_cap, config.target_k, committed, rng);
        break;
    }
    case Scheme::INR:
        draw_inr(a, net, resource_cap, config, rng);
        break;
    case Scheme::PT:
        draw_pt(a, net, resource_cap, rng);
        break;
    case Scheme::RNC:
        draw_rnc(a, net, resource_cap, config, rng);
        break;
    }
    return a;
}

double sum_exposure(const netcore::InfluenceNetwork& net,
                    const std::vector<int>& z, int i) {
    double total = 0.0;
    for (const auto& [j, c] : net.in_edges(i))
        total += static_cast<double>(c) * z[j];
    return total;
}

std::vector<int> exposure_groups(const netcore::InfluenceNetwork& net,
                                 const std::vector<int>& z,
                                 const ExposureGrouping& grouping) {
    grouping.validate();
    std::vector<int> labels(net.size());
    for (int i = 0; i < net.size(); ++i)
        labels[i] = grouping.label(sum_exposure(net, z, i));
    return labels;
}

BalanceValue mahalanobis_balance(const std::vector<std::vector<double>>& covariates,
                                 const std::vector<int>& group_a,
                                 const std::vector<int>& group_b) {
    if (group_a.size() < 2 || group_b.size() < 2)
        throw DataError("balance undefined for groups with fewer than 2 units");
    const auto d = static_cast<Eigen::Index>(covariates.front().size());
    auto stack = [&](const std::vector<int>& ids) {
        Eigen::MatrixXd m(static_cast<Eigen::Index>(ids.size()), d);
        for (std::size_t r = 0; r < ids.size(); ++r)
            for (Eigen::Index c = 0; c < d; ++c)
                m(static_cast<Eigen::Index>(r), c) =
                    covariates[ids[r]][static_cast<std::size_t>(c)];
        return m;
    };
    Eigen::MatrixXd xa = stack(group_a);
    Eigen::MatrixXd xb = stack(group_b);
    Eigen::RowVectorXd ma = xa.colwise().mean();
    Eigen::RowVectorXd mb = xb.colwise().mean();
    Eigen::MatrixXd ca = xa.rowwise() - ma;
    Eigen::MatrixXd cb = xb.rowwise() - mb;
    double na = static_cast<double>(xa.rows());
    double nb = static_cast<double>(xb.rows());
    Eigen::MatrixXd s =
        (ca.transpose() * ca + cb.transpose() * cb) / (na + nb - 2.0);
    BalanceValue out;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(s);
    if (!lu.isInvertible()) {
        s += 1e-8 * Eigen::MatrixXd::Identity(d, d);
        out.ridged = true;
        lu.compute(s);
    }
    Eigen::VectorXd diff = (ma - mb).transpose();
    out.m = diff.dot(lu.solve(diff));
    if (!std::isfinite(out.m) || out.m < 0.0)
        throw NumericError("balance statistic not finite");
    return out;
}

Assignment rerandomize(Scheme base_scheme, const BalanceCriterion& criterion,
                       RerandVariant variant, const netcore::InfluenceNetwork& net,
                       const std::vector<std::vector<double>>& covariates,
                       const ExposureGrouping& grouping, int resource_cap,
                       const SchemeConfig& config, std::mt19937_64& rng) {
    if (criterion.max_draws < 1)
        throw ConfigError("max_draws must be at least 1");
    const bool check_cov =
        variant == RerandVariant::RC || variant == RerandVariant::RCG;
    const bool check_size =
        variant == RerandVariant::RG || variant == RerandVariant::RCG;
    if (check_cov)
        for (const auto& tier : criterion.tiers)
            if (tier.threshold <= 0.0)
                throw ConfigError("balance thresholds must be positive");

    Assignment best;
    double best_badness = kInf;
    for (int attempt = 1; attempt <= criterion.max_draws; ++attempt) {
        Assignment a =
            draw_assignment(base_scheme, net, resource_cap, config, rng);
        std::vector<int> labels = exposure_groups(net, a.z, grouping);
        auto groups = split_by_label(labels, grouping.group_count());

        double badness = 0.0;
        double worst_balance = 0.0;
        if (check_cov) {
            for (const auto& tier : criterion.tiers) {
                double m = tier_max_mahalanobis(covariates, tier, groups);
                worst_balance = std::max(worst_balance, m);
                badness += std::max(0.0, m / tier.threshold - 1.0);
                if (badness > 0.0)
                    break; // tiers are checked in priority order
            }
        }
        if (check_size && badness == 0.0) {
            std::size_t largest = 0;
            std::size_t smallest = std::numeric_limits<std::size_t>::max();
            for (const auto& g : groups) {
                largest = std::max(largest, g.size());
                smallest = std::min(smallest, g.size());
            }
            double limit =
                (1.0 + criterion.group_size_ratio_max) * static_cast<double>(smallest);
            if (static_cast<double>(largest) > limit)
                badness += smallest == 0
                               ? static_cast<double>(largest)
                               : static_cast<double>(largest) / limit - 1.0;
        }

        a.attempts = attempt;
        a.balance = worst_balance;
        if (badness == 0.0)
            return a;
        if (badness < best_badness) {
            best_badness = badness;
            best = a;
        }
    }
    best.attempts = criterion.max_draws;
    best.relaxed = true;
    return best;
}

std::vector<double> calibrate_thresholds(
    Scheme base_scheme, const netcore::InfluenceNetwork& net,
    const std::vector<std::vector<double>>& covariates,
    const ExposureGrouping& grouping, int resource_cap,
    const std::vector<BalanceTier>& tiers, const SchemeConfig& config,
    std::mt19937_64& rng, double percentile, int draws) {
    std::vector<std::vector<double>> stats(tiers.size());
    for (int d = 0; d < draws; ++d) {
        Assignment a =
            draw_assignment(base_scheme, net, resource_cap, config, rng);
        std::vector<int> labels = exposure_groups(net, a.z, grouping);
        auto groups = split_by_label(labels, grouping.group_count());
        for (std::size_t t = 0; t < tiers.size(); ++t)
            stats[t].push_back(tier_max_mahalanobis(covariates, tiers[t], groups));
    }
    std::vector<double> out(tiers.size());
    for (std::size_t t = 0; t < tiers.size(); ++t) {
        out[t] = quantile(stats[t], percentile / 100.0);
        if (out[t] <= 0.0)
            out[t] = 1e-12;
    }
    return out;
}

void write_assignment_csv(const Assignment& assignment,
                          const std::vector<int>& group_labels,
                          const std::string& path) {
    std::ofstream out(path);
    if (!out)
        throw DataError("cannot open " + path + " for writing");
    out << "unit,z,group_label\n";
    for (std::size_t i = 0; i < assignment.z.size(); ++i) {
        int label = i < group_labels.size() ? group_labels[i] : 0;
        out << i << ',' << assignment.z[i] << ',' << label << '\n';
    }
}

} // namespace causalnet::design
