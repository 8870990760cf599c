#include "causalnet/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "causalnet/errors.hpp"
#include "causalnet/rng.hpp"

namespace causalnet::analysis {

namespace {

double mean_of(const std::vector<double>& y, const std::vector<int>& ids) {
    double acc = 0.0;
    for (int i : ids)
        acc += y[i];
    return acc / static_cast<double>(ids.size());
}

enum class ContrastFamily { primary, peer, total };

ContrastFamily family_of(science::EstimandKind kind) {
    using K = science::EstimandKind;
    switch (kind) {
    case K::k_neighbors:
    case K::k_neighbors_atleast:
    case K::fixed_peer:
    case K::strategy_indirect:
        return ContrastFamily::peer;
    case K::fixed_total:
    case K::total_by_hop:
        return ContrastFamily::total;
    default:
        return ContrastFamily::primary;
    }
}

// Log transform guard: columns with non-positive entries are shifted up.
bool apply_covariate_fn(std::vector<std::vector<double>>& columns,
                        science::CovariateFn fn) {
    if (fn == science::CovariateFn::identity)
        return false;
    bool shifted = false;
    for (auto& col : columns) {
        double lo = *std::min_element(col.begin(), col.end());
        double shift = lo <= 0.0 ? 1e-6 - lo : 0.0;
        if (shift > 0.0)
            shifted = true;
        for (double& v : col)
            v = std::log(v + shift);
    }
    return shifted;
}

std::vector<std::vector<double>> select_covariates(const CovariateData& data,
                                                   CovariateSet set, int n) {
    std::vector<std::vector<double>> cols;
    auto add_membership = [&]() {
        if (data.membership.empty())
            throw DataError("membership covariates unavailable");
        int k = static_cast<int>(data.membership.front().size());
        for (int c = 0; c + 1 < k; ++c) { // drop one column against the intercept
            std::vector<double> col(n);
            for (int i = 0; i < n; ++i)
                col[i] = data.membership[i][c];
            cols.push_back(std::move(col));
        }
    };
    switch (set) {
    case CovariateSet::none:
        break;
    case CovariateSet::activity:
        if (data.activity.empty())
            throw DataError("activity covariate unavailable");
        cols.push_back(data.activity);
        break;
    case CovariateSet::membership:
        add_membership();
        break;
    case CovariateSet::treatment_likelihood:
    case CovariateSet::independent:
        if (data.extra.empty())
            throw DataError("confounder covariate unavailable");
        cols.push_back(data.extra);
        break;
    case CovariateSet::all:
        if (!data.activity.empty())
            cols.push_back(data.activity);
        if (!data.membership.empty())
            add_membership();
        if (!data.extra.empty())
            cols.push_back(data.extra);
        break;
    }
    return cols;
}

} // namespace

std::string to_string(EstimatorKind k) {
    switch (k) {
    case EstimatorKind::neyman: return "neyman";
    case EstimatorKind::diff_means: return "diff_means";
    case EstimatorKind::bayes: return "bayes";
    }
    throw ConfigError("unknown estimator kind");
}

std::string to_string(CovariateSet c) {
    switch (c) {
    case CovariateSet::none: return "none";
    case CovariateSet::activity: return "activity";
    case CovariateSet::membership: return "membership";
    case CovariateSet::all: return "all";
    case CovariateSet::treatment_likelihood: return "treatment_likelihood";
    case CovariateSet::independent: return "independent";
    }
    throw ConfigError("unknown covariate set");
}

EstimatorKind estimator_kind_from_string(const std::string& s) {
    if (s == "neyman") return EstimatorKind::neyman;
    if (s == "diff_means") return EstimatorKind::diff_means;
    if (s == "bayes") return EstimatorKind::bayes;
    throw ConfigError("unknown estimator kind: " + s);
}

CovariateSet covariate_set_from_string(const std::string& s) {
    if (s == "none") return CovariateSet::none;
    if (s == "activity") return CovariateSet::activity;
    if (s == "membership") return CovariateSet::membership;
    if (s == "all") return CovariateSet::all;
    if (s == "treatment_likelihood") return CovariateSet::treatment_likelihood;
    if (s == "independent") return CovariateSet::independent;
    throw ConfigError("unknown covariate set: " + s);
}

double neyman(const std::vector<double>& y_obs, const std::vector<int>& z) {
    if (y_obs.size() != z.size())
        throw DataError("outcome and assignment lengths differ");
    double s1 = 0.0, s0 = 0.0;
    int n1 = 0, n0 = 0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        if (z[i]) {
            s1 += y_obs[i];
            ++n1;
        } else {
            s0 += y_obs[i];
            ++n0;
        }
    }
    if (n1 == 0 || n0 == 0)
        throw DataError("estimator inapplicable: one assignment group is empty");
    return s1 / n1 - s0 / n0;
}

DiffMeansResult diff_means(const std::vector<double>& y_obs,
                           const std::vector<int>& z,
                           const netcore::InfluenceNetwork& net,
                           const science::EstimandSpec& target,
                           const design::ExposureGrouping& grouping,
                           int nearest_m) {
    const int n = net.size();
    if (static_cast<int>(y_obs.size()) != n || static_cast<int>(z.size()) != n)
        throw DataError("outcome, assignment, and network sizes differ");
    grouping.validate();
    std::vector<double> expo(n);
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) {
        expo[i] = design::sum_exposure(net, z, i);
        labels[i] = grouping.label(expo[i]);
    }
    const int top = grouping.group_count() - 1;
    const bool single_group = top == 0;

    // Contrast cells: (own treatment, exposure group or any).
    struct Cell {
        int own_z;
        int group; // -1 means any
    };
    Cell a{}, b{};
    switch (family_of(target.kind)) {
    case ContrastFamily::primary:
        a = {1, single_group ? -1 : 0};
        b = {0, single_group ? -1 : 0};
        break;
    case ContrastFamily::peer:
        a = {1, top};
        b = {1, 0};
        break;
    case ContrastFamily::total:
        a = {1, -1};
        b = {0, 0};
        break;
    }

    DiffMeansResult out;
    auto members = [&](const Cell& c) {
        std::vector<int> ids;
        for (int i = 0; i < n; ++i)
            if (z[i] == c.own_z && (c.group < 0 || labels[i] == c.group))
                ids.push_back(i);
        return ids;
    };
    auto fill = [&](const Cell& c) {
        std::vector<int> ids = members(c);
        if (!ids.empty())
            return ids;
        // Nearest-exposure fallback among same own-treatment units.
        std::vector<int> pool;
        for (int i = 0; i < n; ++i)
            if (z[i] == c.own_z)
                pool.push_back(i);
        if (pool.empty())
            throw DataError("estimator inapplicable: no units with required treatment");
        double target_e = c.group <= 0 ? grouping.boundaries.front().first
                                       : grouping.boundaries[c.group].first;
        std::stable_sort(pool.begin(), pool.end(), [&](int u, int v) {
            return std::abs(expo[u] - target_e) < std::abs(expo[v] - target_e);
        });
        pool.resize(std::min<std::size_t>(pool.size(), nearest_m));
        out.used_fallback = true;
        return pool;
    };

    std::vector<int> ids_a = fill(a);
    std::vector<int> ids_b = fill(b);
    if (ids_a == ids_b) {
        out.degenerate = true;
        out.value = 0.0;
        return out;
    }
    out.value = mean_of(y_obs, ids_a) - mean_of(y_obs, ids_b);
    return out;
}

NigPosterior fit_nig(const std::vector<double>& y_obs, const std::vector<int>& z,
                     const netcore::InfluenceNetwork& net,
                     const CovariateData& covariates, const EstimatorSpec& spec) {
    const int n = net.size();
    if (static_cast<int>(y_obs.size()) != n || static_cast<int>(z.size()) != n)
        throw DataError("outcome, assignment, and network sizes differ");

    std::vector<std::vector<double>> cov_cols =
        select_covariates(covariates, spec.covariate_set, n);
    NigPosterior post;
    post.log_shifted = apply_covariate_fn(cov_cols, spec.covariate_fn);
    post.covariate_count = static_cast<int>(cov_cols.size());

    const int p = 2 + post.covariate_count + 1;
    Eigen::MatrixXd x(n, p);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        x(i, 0) = z[i];
        x(i, 1) = science::exposure(net, z, i, spec.exposure_fn);
        for (int c = 0; c < post.covariate_count; ++c)
            x(i, 2 + c) = cov_cols[c][i];
        x(i, p - 1) = 1.0;
        y(i) = y_obs[i];
    }

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    post.rank_deficient = qr.rank() < p;

    Eigen::MatrixXd precision =
        x.transpose() * x +
        Eigen::MatrixXd::Identity(p, p) / spec.prior.coef_variance;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(precision);
    if (ldlt.info() != Eigen::Success)
        throw NumericError("posterior precision factorization failed");
    Eigen::MatrixXd vn = ldlt.solve(Eigen::MatrixXd::Identity(p, p));
    Eigen::VectorXd mn = ldlt.solve(x.transpose() * y);

    post.mean.assign(mn.data(), mn.data() + p);
    post.covariance_scale.assign(p, std::vector<double>(p));
    for (int r = 0; r < p; ++r)
        for (int c = 0; c < p; ++c)
            post.covariance_scale[r][c] = vn(r, c);
    post.shape = spec.prior.shape + 0.5 * n;
    post.scale =
        spec.prior.scale + 0.5 * (y.dot(y) - mn.dot(precision * mn));
    if (post.scale <= 0.0)
        post.scale = spec.prior.scale;
    return post;
}

std::vector<EstimandEstimate> bayes_impute(
    const std::vector<double>& y_obs, const std::vector<int>& z,
    const netcore::InfluenceNetwork& net, const CovariateData& covariates,
    const EstimatorSpec& spec, const std::vector<science::EstimandSpec>& targets,
    double level, std::uint64_t seed, const science::McConfig& mc) {
    if (spec.sample_count < 100)
        throw ConfigError("posterior sample count below 100");

    NigPosterior post = fit_nig(y_obs, z, net, covariates, spec);
    const int p = static_cast<int>(post.mean.size());

    Eigen::MatrixXd vn(p, p);
    for (int r = 0; r < p; ++r)
        for (int c = 0; c < p; ++c)
            vn(r, c) = post.covariance_scale[r][c];
    Eigen::LLT<Eigen::MatrixXd> llt(vn);
    if (llt.info() != Eigen::Success)
        throw NumericError("posterior covariance not positive definite");
    Eigen::MatrixXd chol = llt.matrixL();
    Eigen::Map<const Eigen::VectorXd> mn(post.mean.data(), p);

    auto rng = make_rng(seed, {0x62617965ULL});
    std::normal_distribution<double> normal(0.0, 1.0);
    std::gamma_distribution<double> gamma(post.shape, 1.0);
    Eigen::MatrixXd draws(spec.sample_count, p);
    for (int d = 0; d < spec.sample_count; ++d) {
        double sigma2 = post.scale / gamma(rng);
        Eigen::VectorXd u(p);
        for (int c = 0; c < p; ++c)
            u(c) = normal(rng);
        draws.row(d) = (mn + std::sqrt(sigma2) * (chol * u)).transpose();
    }

    // Every estimand is a linear functional of the potential outcomes, which
    // are linear in the coefficients, so one evaluation per basis coefficient
    // recovers the full posterior of the estimand.
    science::ScienceTable basis;
    basis.net = net;
    basis.model.exposure_fn = spec.exposure_fn;
    basis.noise.assign(net.size(), 0.0);
    basis.covariate_effect.assign(net.size(), 0.0);
    basis.open_neighborhoods.resize(net.size());
    for (int i = 0; i < net.size(); ++i) {
        auto closed = netcore::n_hop_neighborhood(net, i, basis.model.neighborhood);
        basis.open_neighborhoods[i].assign(closed.begin() + 1, closed.end());
    }

    // Regression covariate columns, transformed exactly as fitted.
    std::vector<std::vector<double>> cov_cols =
        select_covariates(covariates, spec.covariate_set, net.size());
    apply_covariate_fn(cov_cols, spec.covariate_fn);

    std::vector<EstimandEstimate> out;
    for (std::size_t t = 0; t < targets.size(); ++t) {
        science::EstimandSpec target = targets[t];
        if (target.z.empty())
            target.z = z; // fixed-assignment estimands default to the realized draw

        Eigen::VectorXd basis_values = Eigen::VectorXd::Zero(p);
        std::uint64_t eval_seed = derive_seed(seed, {0x696d70ULL, t});
        for (int c = 0; c < p; ++c) {
            basis.model.tau = c == 0 ? 1.0 : 0.0;
            basis.model.gamma = c == 1 ? 1.0 : 0.0;
            basis.model.mu = c == p - 1 ? 1.0 : 0.0;
            if (c >= 2 && c < p - 1)
                basis.covariate_effect = cov_cols[c - 2];
            else
                basis.covariate_effect.assign(net.size(), 0.0);
            basis_values(c) =
                science::compute_estimand(basis, target, mc, eval_seed).value;
        }

        EstimandEstimate est;
        est.estimand = targets[t];
        est.level = level;
        Eigen::VectorXd sample_vec = draws * basis_values;
        est.samples.assign(sample_vec.data(), sample_vec.data() + spec.sample_count);
        est.interval = posterior_interval(est.samples, level);
        if (post.rank_deficient)
            est.flags.push_back("ridge");
        if (post.log_shifted)
            est.flags.push_back("log_shift");
        out.push_back(std::move(est));
    }
    return out;
}

std::pair<double, double> posterior_interval(const std::vector<double>& samples,
                                             double level) {
    if (samples.size() < 100)
        throw DataError("too few samples for a posterior interval");
    if (level <= 0.0 || level >= 1.0)
        throw ConfigError("interval level must be in (0, 1)");
    std::vector<double> s = samples;
    std::sort(s.begin(), s.end());
    auto quantile = [&](double q) {
        double h = (static_cast<double>(s.size()) - 1.0) * q;
        auto lo = static_cast<std::size_t>(std::floor(h));
        auto hi = std::min(lo + 1, s.size() - 1);
        return s[lo] + (h - std::floor(h)) * (s[hi] - s[lo]);
    };
    return {quantile((1.0 - level) / 2.0), quantile((1.0 + level) / 2.0)};
}

double integrated_mse(const EstimandEstimate& estimate, double truth) {
    if (!estimate.samples.empty()) {
        double acc = 0.0;
        for (double v : estimate.samples)
            acc += (v - truth) * (v - truth);
        return acc / static_cast<double>(estimate.samples.size());
    }
    if (estimate.point)
        return (*estimate.point - truth) * (*estimate.point - truth);
    throw DataError("estimate has neither point value nor samples");
}

std::string estimate_to_json(const EstimandEstimate& estimate) {
    nlohmann::json j;
    j["estimand"] = science::to_string(estimate.estimand.kind);
    if (estimate.point)
        j["point"] = *estimate.point;
    if (!estimate.samples.empty()) {
        double m = std::accumulate(estimate.samples.begin(),
                                   estimate.samples.end(), 0.0) /
                   static_cast<double>(estimate.samples.size());
        double v = 0.0;
        for (double s : estimate.samples)
            v += (s - m) * (s - m);
        v /= static_cast<double>(estimate.samples.size());
        j["samples"] = {{"count", estimate.samples.size()},
                        {"mean", m},
                        {"variance", v}};
    }
    j["interval"] = {estimate.interval.first, estimate.interval.second};
    j["level"] = estimate.level;
    if (estimate.truth) {
        j["truth"] = *estimate.truth;
        j["imse"] = integrated_mse(estimate, *estimate.truth);
    }
    j["flags"] = estimate.flags;
    return j.dump(2);
}

} // namespace causalnet::analysis
