#include "causalnet/hmmb_infer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "causalnet/errors.hpp"
#include "causalnet/rng.hpp"
#include "causalnet/spectral.hpp"

namespace causalnet::infer {

using netcore::HmmbParams;
using netcore::InfluenceNetwork;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// On-switch adjacency rebuilt whenever switches change; steps that only
// move continuous parameters keep it valid.
struct OnIndex {
    std::vector<std::vector<std::pair<int, long long>>> out; // j, a_ij
    std::vector<std::vector<std::pair<int, long long>>> in;  // j, a_ji
    std::vector<std::tuple<int, int, long long>> pairs;      // i, j, a_ij

    void rebuild(const HmmbParams& p, const InfluenceNetwork& net) {
        const int n = p.n;
        out.assign(n, {});
        in.assign(n, {});
        pairs.clear();
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                if (i == j || !p.switch_at(i, j))
                    continue;
                long long a = net.count(i, j);
                out[i].push_back({j, a});
                in[j].push_back({i, a});
                pairs.push_back({i, j, a});
            }
    }
};

Eigen::MatrixXd membership_matrix(const HmmbParams& p) {
    Eigen::MatrixXd pi(p.n, p.K);
    for (int i = 0; i < p.n; ++i)
        for (int k = 0; k < p.K; ++k)
            pi(i, k) = p.pi[i][k];
    return pi;
}

Eigen::MatrixXd block_matrix(const HmmbParams& p) {
    Eigen::MatrixXd b(p.K, p.K);
    for (int m = 0; m < p.K; ++m)
        for (int l = 0; l < p.K; ++l)
            b(m, l) = p.block[m][l];
    return b;
}

// Log joint contribution of the on-pairs touching lambda_i that depends on
// lambda_i, collapsed to coefficients of log(lambda_i) and lambda_i.
void lambda_coefficients(const HmmbParams& p, const OnIndex& idx, int i,
                         double& count_coef, double& rate_coef) {
    count_coef = 0.0;
    rate_coef = 0.0;
    for (const auto& [j, a] : idx.out[i]) {
        count_coef += static_cast<double>(a);
        rate_coef += p.lambda[j] * netcore::block_quad(p, i, j) * p.timespan;
    }
    for (const auto& [j, a] : idx.in[i]) {
        count_coef += static_cast<double>(a);
        rate_coef += p.lambda[j] * netcore::block_quad(p, j, i) * p.timespan;
    }
}

StepResult mh_lambda_impl(HmmbParams& state, const OnIndex& idx, int i,
                          double sigma, const McmcConfig& cfg,
                          std::mt19937_64& rng) {
    std::normal_distribution<double> step(0.0, sigma);
    double cur = state.lambda[i];
    double prop = cur + step(rng);
    StepResult r;
    if (prop < cfg.lambda_floor)
        return r; // auto-reject below the floor
    if (cfg.include_lambda_prior &&
        (prop < cfg.lambda_min || prop > cfg.lambda_max))
        return r; // outside the truncated prior support
    double count_coef, rate_coef;
    lambda_coefficients(state, idx, i, count_coef, rate_coef);
    double delta = count_coef * (std::log(prop) - std::log(cur)) -
                   rate_coef * (prop - cur);
    if (cfg.include_lambda_prior)
        delta -= state.alpha * (std::log(prop) - std::log(cur));
    r.acceptance_prob = std::min(1.0, std::exp(delta));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    if (unif(rng) < r.acceptance_prob) {
        state.lambda[i] = prop;
        r.accepted = true;
    }
    return r;
}

StepResult mh_block_impl(HmmbParams& state, const OnIndex& idx, int m, int l,
                         double sigma, std::mt19937_64& rng) {
    std::normal_distribution<double> step(0.0, sigma);
    double cur = state.block[m][l];
    double prop = cur + step(rng);
    StepResult r;
    if (prop < 0.0)
        return r; // non-negativity constraint
    double db = prop - cur;
    double delta = 0.0;
    for (const auto& [i, j, a] : idx.pairs) {
        double q = netcore::block_quad(state, i, j);
        double qn = q + db * state.pi[i][m] * state.pi[j][l];
        if (qn <= 0.0) {
            if (a > 0)
                return r; // zero rate cannot produce counts
            delta += -state.lambda[i] * state.lambda[j] * state.timespan *
                     (qn - q);
            continue;
        }
        if (a > 0) {
            if (q <= 0.0) {
                delta = std::numeric_limits<double>::infinity();
                break;
            }
            delta += static_cast<double>(a) * (std::log(qn) - std::log(q));
        }
        delta -= state.lambda[i] * state.lambda[j] * state.timespan * (qn - q);
    }
    r.acceptance_prob = std::min(1.0, std::exp(delta));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    if (unif(rng) < r.acceptance_prob) {
        state.block[m][l] = prop;
        r.accepted = true;
    }
    return r;
}

std::vector<double> clamp_simplex(const std::vector<double>& pi) {
    std::vector<double> out = pi;
    double total = 0.0;
    for (double& v : out) {
        v = std::max(v, 1e-12);
        total += v;
    }
    for (double& v : out)
        v /= total;
    return out;
}

double membership_local(const HmmbParams& p, const OnIndex& idx, int i) {
    double acc = 0.0;
    for (const auto& [j, a] : idx.out[i]) {
        double q = netcore::block_quad(p, i, j);
        double rate = p.lambda[i] * p.lambda[j] * q;
        if (a > 0) {
            if (rate <= 0.0)
                return kNegInf;
            acc += static_cast<double>(a) * std::log(rate);
        }
        acc -= rate * p.timespan;
    }
    for (const auto& [j, a] : idx.in[i]) {
        double q = netcore::block_quad(p, j, i);
        double rate = p.lambda[j] * p.lambda[i] * q;
        if (a > 0) {
            if (rate <= 0.0)
                return kNegInf;
            acc += static_cast<double>(a) * std::log(rate);
        }
        acc -= rate * p.timespan;
    }
    return acc;
}

StepResult mh_membership_impl(HmmbParams& state, const OnIndex& idx, int i,
                              double sigma, std::mt19937_64& rng) {
    std::vector<double> cur = clamp_simplex(state.pi[i]);
    const int K = state.K;
    std::normal_distribution<double> step(0.0, sigma);
    std::vector<double> y(K - 1);
    for (int k = 0; k < K - 1; ++k)
        y[k] = std::log(cur[k] / cur[K - 1]) + step(rng);
    std::vector<double> prop(K);
    double denom = 1.0;
    for (int k = 0; k < K - 1; ++k)
        denom += std::exp(y[k]);
    prop[K - 1] = 1.0 / denom;
    for (int k = 0; k < K - 1; ++k)
        prop[k] = std::exp(y[k]) / denom;

    double before = membership_local(state, idx, i);
    std::vector<double> saved = state.pi[i];
    state.pi[i] = prop;
    double after = membership_local(state, idx, i);
    double hastings = logistic_normal_log_density(cur, prop, sigma) -
                      logistic_normal_log_density(prop, cur, sigma);
    StepResult r;
    r.acceptance_prob = std::min(1.0, std::exp(after - before + hastings));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    if (unif(rng) < r.acceptance_prob) {
        r.accepted = true;
    } else {
        state.pi[i] = saved;
    }
    return r;
}

void switches_impl(HmmbParams& state, const InfluenceNetwork& net,
                   SwitchPolicy policy, double cutoff, std::mt19937_64& rng) {
    const int n = state.n;
    Eigen::MatrixXd quad =
        membership_matrix(state) * block_matrix(state) *
        membership_matrix(state).transpose();
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (i == j)
                continue;
            if (net.count(i, j) > 0) {
                state.set_switch(i, j, 1);
                continue;
            }
            if (policy == SwitchPolicy::map_fixed) {
                state.set_switch(i, j, 0);
                continue;
            }
            double rate_t =
                state.lambda[i] * state.lambda[j] * quad(i, j) * state.timespan;
            if (policy == SwitchPolicy::selective && rate_t >= cutoff) {
                state.set_switch(i, j, 0);
                continue;
            }
            double on = std::exp(-rate_t) * state.sparsity;
            double p_on = on / (on + (1.0 - state.sparsity));
            state.set_switch(i, j, unif(rng) < p_on ? 1 : 0);
        }
}

struct BlockAccept {
    long long tried = 0;
    long long accepted = 0;
    void add(const StepResult& r) {
        ++tried;
        if (r.accepted)
            ++accepted;
    }
    double rate() const {
        return tried > 0 ? static_cast<double>(accepted) / tried : 0.0;
    }
};

double mean_tail(const std::vector<double>& v, double frac) {
    std::size_t start = v.size() - std::max<std::size_t>(
                                       1, static_cast<std::size_t>(v.size() * frac));
    double acc = 0.0;
    for (std::size_t i = start; i < v.size(); ++i)
        acc += v[i];
    return acc / static_cast<double>(v.size() - start);
}

} // namespace

std::string to_string(SwitchPolicy p) {
    switch (p) {
    case SwitchPolicy::map_fixed: return "map_fixed";
    case SwitchPolicy::full: return "full";
    case SwitchPolicy::selective: return "selective";
    }
    throw ConfigError("unknown switch policy");
}

SwitchPolicy switch_policy_from_string(const std::string& s) {
    if (s == "map_fixed") return SwitchPolicy::map_fixed;
    if (s == "full") return SwitchPolicy::full;
    if (s == "selective") return SwitchPolicy::selective;
    throw ConfigError("unknown switch policy: " + s);
}

void McmcConfig::validate() const {
    if (chains < 1)
        throw ConfigError("need at least one chain");
    if (burn_in >= iterations)
        throw ConfigError("burn-in must be below the iteration count");
    if (step_lambda_rel <= 0.0 || step_block <= 0.0 || step_pi <= 0.0 ||
        step_alpha <= 0.0)
        throw ConfigError("step sizes must be positive");
    if (lambda_floor < 0.0)
        throw ConfigError("lambda floor must be non-negative");
    if (lambda_min <= 0.0 || lambda_max <= lambda_min)
        throw ConfigError("invalid lambda support");
    if (timespan <= 0.0)
        throw ConfigError("timespan must be positive");
}

double log_joint_posterior(const HmmbParams& p, const InfluenceNetwork& net,
                           bool include_lambda_prior, double lambda_min,
                           double lambda_max) {
    const int n = p.n;
    for (int i = 0; i < n; ++i) {
        double l = p.lambda[i];
        if (!std::isfinite(l) || l <= 0.0)
            return kNegInf;
        if (include_lambda_prior && (l < lambda_min || l > lambda_max))
            return kNegInf;
    }
    for (int m = 0; m < p.K; ++m)
        for (int l = 0; l < p.K; ++l)
            if (p.block[m][l] < 0.0)
                return kNegInf;
    if (p.sparsity < 0.0 || p.sparsity > 1.0)
        return kNegInf;

    Eigen::MatrixXd quad =
        membership_matrix(p) * block_matrix(p) * membership_matrix(p).transpose();
    double acc = 0.0;
    long long n_on = 0, n_off = 0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (i == j)
                continue;
            long long a = net.count(i, j);
            if (!p.switch_at(i, j)) {
                if (a > 0)
                    return kNegInf; // positive count on an off switch
                ++n_off;
                continue;
            }
            ++n_on;
            double rate = p.lambda[i] * p.lambda[j] * quad(i, j) * p.timespan;
            if (a > 0) {
                if (rate <= 0.0)
                    return kNegInf;
                acc += static_cast<double>(a) * std::log(rate) - rate -
                       std::lgamma(static_cast<double>(a) + 1.0);
            } else {
                acc -= rate;
            }
        }
    if (n_on > 0) {
        if (p.sparsity <= 0.0)
            return kNegInf;
        acc += static_cast<double>(n_on) * std::log(p.sparsity);
    }
    if (n_off > 0) {
        if (p.sparsity >= 1.0)
            return kNegInf;
        acc += static_cast<double>(n_off) * std::log(1.0 - p.sparsity);
    }
    if (include_lambda_prior)
        for (int i = 0; i < n; ++i)
            acc -= p.alpha * std::log(p.lambda[i]);
    return acc;
}

namespace {

HmmbParams base_init(const InfluenceNetwork& net, int K, const McmcConfig& cfg,
                     std::uint64_t seed, const std::vector<double>& diag) {
    const int n = net.size();
    HmmbParams p;
    p.n = n;
    p.K = K;
    p.L = cfg.lifestyles;
    p.sparsity = cfg.init_sparsity;
    p.alpha = cfg.init_alpha;
    p.timespan = cfg.timespan;
    p.pseudocounts.assign(K, std::vector<double>(p.L, 1.0));
    p.lifestyle_probs.assign(p.L, 1.0 / p.L);

    p.switches.assign(static_cast<std::size_t>(n) * n, 0);
    for (const auto& [i, j, c] : net.edges())
        p.set_switch(i, j, 1);

    std::vector<int> clusters = netcore::spectral_clusters(net, K, seed);
    p.pi.assign(n, std::vector<double>(K, K > 1 ? 0.1 / (K - 1) : 0.0));
    for (int i = 0; i < n; ++i)
        p.pi[i][clusters[i]] = K > 1 ? 0.9 : 1.0;

    p.block.assign(K, std::vector<double>(K, 0.05));
    for (int m = 0; m < K; ++m)
        p.block[m][m] = diag[m];
    double diag_mean =
        std::accumulate(diag.begin(), diag.end(), 0.0) / static_cast<double>(K);

    p.lambda.assign(n, cfg.lambda_floor);
    for (int i = 0; i < n; ++i) {
        long long w = net.out_weight(i) + net.in_weight(i);
        int deg = net.out_degree(i) + net.in_degree(i);
        if (deg == 0) {
            p.lambda[i] = cfg.include_lambda_prior ? cfg.lambda_min
                                                   : cfg.lambda_floor;
            continue;
        }
        double avg = static_cast<double>(w) / deg;
        double lam = std::sqrt(avg / (diag_mean * cfg.timespan));
        if (cfg.include_lambda_prior)
            lam = std::clamp(lam, cfg.lambda_min, cfg.lambda_max);
        p.lambda[i] = std::max(lam, cfg.lambda_floor);
    }
    return p;
}

// Profile estimate of the block diagonal: a short run with B = identity,
// then one batch gradient step with the activity levels set uniform.
std::vector<double> profile_diagonal(const InfluenceNetwork& net, int K,
                                     const McmcConfig& cfg, std::uint64_t seed) {
    std::vector<double> ones(K, 1.0);
    HmmbParams p = base_init(net, K, cfg, seed, ones);
    auto rng = make_rng(seed, {0x70726f66ULL});
    OnIndex idx;
    idx.rebuild(p, net);
    std::vector<double> sigma_lambda(p.n);
    for (int i = 0; i < p.n; ++i)
        sigma_lambda[i] = cfg.step_lambda_rel * p.lambda[i];
    for (int it = 0; it < 200; ++it) {
        for (int i = 0; i < p.n; ++i)
            mh_lambda_impl(p, idx, i, sigma_lambda[i], cfg, rng);
        for (int i = 0; i < p.n; ++i)
            mh_membership_impl(p, idx, i, cfg.step_pi, rng);
        switches_impl(p, net, cfg.switch_policy, cfg.selective_rate_cutoff, rng);
        idx.rebuild(p, net);
    }
    double mean_lambda =
        std::accumulate(p.lambda.begin(), p.lambda.end(), 0.0) / p.n;
    p.lambda.assign(p.n, std::max(mean_lambda, cfg.lambda_floor));
    auto grad = block_gradient(p, net);
    std::vector<double> diag(K);
    for (int m = 0; m < K; ++m)
        diag[m] = std::max(0.1, 1.0 + 0.005 * grad[m][m]);
    return diag;
}

} // namespace

HmmbParams init_chain(const InfluenceNetwork& net, int K,
                      const McmcConfig& config, std::uint64_t seed) {
    if (K < 1)
        throw ConfigError("community count must be at least 1");
    if (config.init_override) {
        HmmbParams p = *config.init_override;
        p.validate();
        return p;
    }
    std::vector<double> diag;
    if (!config.block_diagonal.empty()) {
        if (static_cast<int>(config.block_diagonal.size()) != K)
            throw ConfigError("block diagonal length does not match K");
        diag = config.block_diagonal;
    } else if (config.fix_block_diagonal) {
        diag = profile_diagonal(net, K, config, seed);
    } else {
        diag.assign(K, 1.0);
    }
    return base_init(net, K, config, seed, diag);
}

StepResult mh_step_lambda(HmmbParams& state, const InfluenceNetwork& net, int i,
                          double sigma, const McmcConfig& config,
                          std::mt19937_64& rng) {
    OnIndex idx;
    idx.rebuild(state, net);
    return mh_lambda_impl(state, idx, i, sigma, config, rng);
}

StepResult mh_step_block(HmmbParams& state, const InfluenceNetwork& net, int m,
                         int n, double sigma, const McmcConfig& config,
                         std::mt19937_64& rng) {
    if (config.fix_block_diagonal && m == n)
        return {};
    OnIndex idx;
    idx.rebuild(state, net);
    return mh_block_impl(state, idx, m, n, sigma, rng);
}

StepResult mh_step_membership(HmmbParams& state, const InfluenceNetwork& net,
                              int i, double sigma, const McmcConfig&,
                              std::mt19937_64& rng) {
    OnIndex idx;
    idx.rebuild(state, net);
    return mh_membership_impl(state, idx, i, sigma, rng);
}

void gibbs_step_switches(HmmbParams& state, const InfluenceNetwork& net,
                         SwitchPolicy policy, double selective_cutoff,
                         std::mt19937_64& rng) {
    switches_impl(state, net, policy, selective_cutoff, rng);
}

StepResult gibbs_step_hyper(HmmbParams& state, const InfluenceNetwork& net,
                            const McmcConfig& config, std::mt19937_64& rng) {
    StepResult alpha_result;
    if (config.update_alpha) {
        std::normal_distribution<double> step(0.0, config.step_alpha);
        double prop = state.alpha + step(rng);
        if (prop >= config.alpha_min && prop <= config.alpha_max) {
            double log_sum = 0.0;
            for (double l : state.lambda)
                log_sum += std::log(l);
            double delta = -(prop - state.alpha) * log_sum;
            alpha_result.acceptance_prob = std::min(1.0, std::exp(delta));
            std::uniform_real_distribution<double> unif(0.0, 1.0);
            if (unif(rng) < alpha_result.acceptance_prob) {
                state.alpha = prop;
                alpha_result.accepted = true;
            }
        }
    }
    if (config.update_sparsity) {
        long long n_on = 0;
        const long long total =
            static_cast<long long>(state.n) * state.n - state.n;
        for (int i = 0; i < state.n; ++i)
            for (int j = 0; j < state.n; ++j)
                if (i != j && state.switch_at(i, j))
                    ++n_on;
        std::gamma_distribution<double> ga(static_cast<double>(n_on) + 1.0, 1.0);
        std::gamma_distribution<double> gb(static_cast<double>(total - n_on) + 1.0,
                                           1.0);
        double x = ga(rng), y = gb(rng);
        state.sparsity = x / (x + y);
    }
    return alpha_result;
}

double logistic_normal_log_density(const std::vector<double>& to,
                                   const std::vector<double>& from,
                                   double sigma) {
    std::vector<double> t = clamp_simplex(to);
    std::vector<double> f = clamp_simplex(from);
    const int K = static_cast<int>(t.size());
    double acc = 0.0;
    for (int k = 0; k < K - 1; ++k) {
        double d = std::log(t[k] / t[K - 1]) - std::log(f[k] / f[K - 1]);
        acc += -0.5 * d * d / (sigma * sigma) -
               std::log(sigma * std::sqrt(2.0 * M_PI));
    }
    for (int k = 0; k < K; ++k)
        acc -= std::log(t[k]); // logit-map Jacobian
    return acc;
}

HmmbPosterior run_mcmc(const InfluenceNetwork& net, int K,
                       const McmcConfig& config, std::uint64_t seed) {
    config.validate();
    HmmbPosterior post;
    post.n = net.size();
    post.K = K;
    const int kept = config.iterations - config.burn_in;

    std::vector<std::vector<std::vector<double>>> chain_lambda(config.chains);
    std::vector<std::vector<std::vector<std::vector<double>>>> chain_pi(
        config.chains);
    std::vector<std::vector<std::vector<std::vector<double>>>> chain_block(
        config.chains);
    std::vector<std::vector<double>> chain_alpha(config.chains);
    std::vector<std::vector<double>> chain_sparsity(config.chains);

    for (int c = 0; c < config.chains; ++c) {
        auto rng = make_rng(seed, {0x676962ULL, static_cast<std::uint64_t>(c)});
        HmmbParams state =
            init_chain(net, K, config, derive_seed(seed, {0x696e69ULL,
                                                          static_cast<std::uint64_t>(c)}));
        OnIndex idx;
        idx.rebuild(state, net);

        std::vector<double> sigma_lambda(state.n);
        for (int i = 0; i < state.n; ++i)
            sigma_lambda[i] =
                std::max(config.step_lambda_rel * state.lambda[i], 1e-6);
        double sigma_block = config.step_block;
        double sigma_pi = config.step_pi;

        ChainDiagnostics diag;
        BlockAccept acc_l, acc_b, acc_p, acc_a;
        BlockAccept win_l, win_b, win_p;

        for (int it = 0; it < config.iterations; ++it) {
            if (config.update_lambda)
                for (int i = 0; i < state.n; ++i) {
                    auto r = mh_lambda_impl(state, idx, i, sigma_lambda[i],
                                            config, rng);
                    acc_l.add(r);
                    win_l.add(r);
                }
            if (config.update_block)
                for (int m = 0; m < K; ++m)
                    for (int l = 0; l < K; ++l) {
                        if (config.fix_block_diagonal && m == l)
                            continue;
                        auto r = mh_block_impl(state, idx, m, l, sigma_block, rng);
                        acc_b.add(r);
                        win_b.add(r);
                    }
            if (config.update_membership && K > 1)
                for (int i = 0; i < state.n; ++i) {
                    auto r = mh_membership_impl(state, idx, i, sigma_pi, rng);
                    acc_p.add(r);
                    win_p.add(r);
                }
            if (config.update_switches) {
                switches_impl(state, net, config.switch_policy,
                              config.selective_rate_cutoff, rng);
                idx.rebuild(state, net);
            }
            acc_a.add(gibbs_step_hyper(state, net, config, rng));

            diag.log_joint_trace.push_back(log_joint_posterior(
                state, net, config.include_lambda_prior, config.lambda_min,
                config.lambda_max));

            // Step-size adaptation, burn-in only.
            if (config.adapt_steps && it < config.burn_in && (it + 1) % 50 == 0) {
                auto factor = [](const BlockAccept& w) {
                    if (w.tried == 0)
                        return 1.0;
                    if (w.rate() < 0.2)
                        return 0.8;
                    if (w.rate() > 0.5)
                        return 1.25;
                    return 1.0;
                };
                double fl = factor(win_l);
                for (double& s : sigma_lambda)
                    s *= fl;
                sigma_block *= factor(win_b);
                sigma_pi *= factor(win_p);
                win_l = {};
                win_b = {};
                win_p = {};
            }

            if (it >= config.burn_in) {
                chain_lambda[c].push_back(state.lambda);
                chain_pi[c].push_back(state.pi);
                chain_block[c].push_back(state.block);
                chain_alpha[c].push_back(state.alpha);
                chain_sparsity[c].push_back(state.sparsity);
            }
        }
        diag.accept_lambda = acc_l.rate();
        diag.accept_block = acc_b.rate();
        diag.accept_membership = acc_p.rate();
        diag.accept_alpha = acc_a.rate();
        diag.final_mean_log_joint = mean_tail(diag.log_joint_trace, 0.1);
        post.chains.push_back(std::move(diag));
    }

    post.selected_chain = 0;
    for (int c = 1; c < config.chains; ++c)
        if (post.chains[c].final_mean_log_joint >
            post.chains[post.selected_chain].final_mean_log_joint)
            post.selected_chain = c;
    post.lambda_samples = std::move(chain_lambda[post.selected_chain]);
    post.pi_samples = std::move(chain_pi[post.selected_chain]);
    post.block_samples = std::move(chain_block[post.selected_chain]);
    post.alpha_samples = std::move(chain_alpha[post.selected_chain]);
    post.sparsity_samples = std::move(chain_sparsity[post.selected_chain]);
    if (static_cast<int>(post.lambda_samples.size()) != kept)
        throw NumericError("sample bookkeeping mismatch");

    if (config.reference_diagonal)
        rescale_to_reference(post, *config.reference_diagonal);
    return post;
}

std::vector<double> lambda_gradient(const HmmbParams& p,
                                    const InfluenceNetwork& net,
                                    bool include_prior) {
    OnIndex idx;
    idx.rebuild(p, net);
    std::vector<double> g(p.n, 0.0);
    for (int i = 0; i < p.n; ++i) {
        for (const auto& [j, a] : idx.out[i])
            g[i] += static_cast<double>(a) / p.lambda[i] -
                    p.lambda[j] * p.timespan * netcore::block_quad(p, i, j);
        for (const auto& [j, a] : idx.in[i])
            g[i] += static_cast<double>(a) / p.lambda[i] -
                    p.lambda[j] * p.timespan * netcore::block_quad(p, j, i);
        if (include_prior)
            g[i] -= p.alpha / p.lambda[i];
    }
    return g;
}

std::vector<std::vector<double>> block_gradient(const HmmbParams& p,
                                                const InfluenceNetwork& net) {
    OnIndex idx;
    idx.rebuild(p, net);
    std::vector<std::vector<double>> g(p.K, std::vector<double>(p.K, 0.0));
    for (const auto& [i, j, a] : idx.pairs) {
        double q = netcore::block_quad(p, i, j);
        double coef;
        if (a > 0) {
            if (q <= 0.0)
                throw NumericError("zero block rate on a counted edge");
            coef = static_cast<double>(a) / q -
                   p.lambda[i] * p.lambda[j] * p.timespan;
        } else {
            coef = -p.lambda[i] * p.lambda[j] * p.timespan;
        }
        for (int m = 0; m < p.K; ++m)
            for (int l = 0; l < p.K; ++l)
                g[m][l] += coef * p.pi[i][m] * p.pi[j][l];
    }
    return g;
}

McemResult run_mcem(const InfluenceNetwork& net, int K, const McemConfig& config,
                    std::uint64_t seed) {
    config.mcmc.validate();
    if (config.iterations < 1)
        throw ConfigError("need at least one EM iteration");
    auto rng = make_rng(seed, {0x6d63656dULL});
    HmmbParams state = init_chain(net, K, config.mcmc, seed);
    OnIndex idx;
    idx.rebuild(state, net);

    McemResult result;
    double gl = config.step_lambda;
    double gb = config.step_block;
    double best = kNegInf;
    for (int it = 0; it < config.iterations; ++it) {
        for (int sweep = 0; sweep < config.inner_sweeps; ++sweep) {
            if (K > 1)
                for (int i = 0; i < state.n; ++i)
                    mh_membership_impl(state, idx, i, config.mcmc.step_pi, rng);
            switches_impl(state, net, config.mcmc.switch_policy,
                          config.mcmc.selective_rate_cutoff, rng);
            idx.rebuild(state, net);
            gibbs_step_hyper(state, net, config.mcmc, rng);
        }
        result.pi_samples.push_back(state.pi);

        auto grad_l = lambda_gradient(state, net, config.mcmc.include_lambda_prior);
        auto grad_b = block_gradient(state, net);
        bool stepped = false;
        for (int attempt = 0; attempt <= 10; ++attempt) {
            std::vector<double> lam = state.lambda;
            std::vector<std::vector<double>> blk = state.block;
            bool ok = true;
            for (int i = 0; i < state.n; ++i) {
                lam[i] += gl * grad_l[i];
                if (!std::isfinite(lam[i]) || lam[i] <= 0.0) {
                    ok = false;
                    break;
                }
            }
            if (ok)
                for (int m = 0; m < K && ok; ++m)
                    for (int l = 0; l < K; ++l) {
                        if (config.mcmc.fix_block_diagonal && m == l)
                            continue;
                        blk[m][l] =
                            std::max(0.0, blk[m][l] + gb * grad_b[m][l]);
                        if (!std::isfinite(blk[m][l])) {
                            ok = false;
                            break;
                        }
                    }
            if (ok) {
                if (config.mcmc.include_lambda_prior)
                    for (double& v : lam)
                        v = std::clamp(v, config.mcmc.lambda_min,
                                       config.mcmc.lambda_max);
                state.lambda = std::move(lam);
                state.block = std::move(blk);
                stepped = true;
                break;
            }
            gl *= 0.5;
            gb *= 0.5;
            ++result.step_halvings;
        }
        if (!stepped)
            throw NumericError("gradient ascent diverged after 10 halvings");

        result.lambda_path.push_back(state.lambda);
        result.block_path.push_back(state.block);
        double lj = log_joint_posterior(state, net,
                                        config.mcmc.include_lambda_prior,
                                        config.mcmc.lambda_min,
                                        config.mcmc.lambda_max);
        result.log_joint_path.push_back(lj);
        if (lj > best) {
            best = lj;
            result.mode = state;
            result.iterations_to_mode = it + 1;
        }
    }
    return result;
}

FisherMatrix fisher_information(int i, const HmmbParams& p) {
    if (p.K < 2)
        throw ConfigError("Fisher matrix needs at least two communities");
    const int K = p.K;
    FisherMatrix f;
    f.node = i;
    f.reference = K - 1;
    f.matrix = Eigen::MatrixXd::Zero(K - 1, K - 1);
    Eigen::MatrixXd b = block_matrix(p);

    for (int j = 0; j < p.n; ++j) {
        if (j == i)
            continue;
        if (p.switch_at(i, j)) {
            double q = netcore::block_quad(p, i, j);
            if (q <= 0.0)
                throw NumericError("zero rate on on-edge " + std::to_string(i) +
                                   "->" + std::to_string(j));
            Eigen::VectorXd pj(K);
            for (int k = 0; k < K; ++k)
                pj(k) = p.pi[j][k];
            Eigen::VectorXd row_dot = b * pj; // (B_m . pi_j) per m
            double scale = p.lambda[i] * p.lambda[j] / q;
            for (int m = 0; m < K - 1; ++m)
                for (int l = 0; l < K - 1; ++l)
                    f.matrix(m, l) += scale * (row_dot(m) - row_dot(K - 1)) *
                                      (row_dot(l) - row_dot(K - 1));
        }
        if (p.switch_at(j, i)) {
            double q = netcore::block_quad(p, j, i);
            if (q <= 0.0)
                throw NumericError("zero rate on on-edge " + std::to_string(j) +
                                   "->" + std::to_string(i));
            Eigen::VectorXd pj(K);
            for (int k = 0; k < K; ++k)
                pj(k) = p.pi[j][k];
            Eigen::VectorXd col_dot = b.transpose() * pj; // (pi_j' B_.m) per m
            double scale = p.lambda[i] * p.lambda[j] / q;
            for (int m = 0; m < K - 1; ++m)
                for (int l = 0; l < K - 1; ++l)
                    f.matrix(m, l) += scale * (col_dot(m) - col_dot(K - 1)) *
                                      (col_dot(l) - col_dot(K - 1));
        }
    }
    f.matrix *= p.timespan;
    return f;
}

CramerRaoWidths cramer_rao_width(const FisherMatrix& f, double level) {
    if (level <= 0.0 || level >= 1.0)
        throw ConfigError("interval level must be in (0, 1)");
    CramerRaoWidths out;
    const auto dim = f.matrix.rows();
    Eigen::FullPivLU<Eigen::MatrixXd> lu(f.matrix);
    double z = normal_quantile(0.5 * (1.0 + level));
    if (!lu.isInvertible()) {
        out.singular = true;
        out.widths.assign(dim, std::numeric_limits<double>::infinity());
        return out;
    }
    Eigen::MatrixXd inv = lu.inverse();
    out.widths.resize(dim);
    for (Eigen::Index m = 0; m < dim; ++m)
        out.widths[m] = 2.0 * z * std::sqrt(std::max(0.0, inv(m, m)));
    return out;
}

double rescale_params(HmmbParams& params,
                      const std::vector<double>& reference_diagonal) {
    double num = 0.0, den = 0.0;
    for (int m = 0; m < params.K; ++m) {
        num += reference_diagonal[m] * params.block[m][m];
        den += params.block[m][m] * params.block[m][m];
    }
    if (den <= 0.0)
        return 0.0;
    double w = num / den;
    for (int m = 0; m < params.K; ++m)
        for (int l = 0; l < params.K; ++l)
            params.block[m][l] *= w;
    double root = std::sqrt(w);
    for (double& l : params.lambda)
        l /= root;
    return w;
}

void rescale_to_reference(HmmbPosterior& posterior,
                          const std::vector<double>& reference_diagonal) {
    if (static_cast<int>(reference_diagonal.size()) != posterior.K)
        throw ConfigError("reference diagonal length does not match K");
    for (double v : reference_diagonal)
        if (v <= 0.0)
            throw ConfigError("reference diagonal must be strictly positive");
    for (std::size_t s = 0; s < posterior.block_samples.size(); ++s) {
        auto& blk = posterior.block_samples[s];
        double num = 0.0, den = 0.0;
        for (int m = 0; m < posterior.K; ++m) {
            num += reference_diagonal[m] * blk[m][m];
            den += blk[m][m] * blk[m][m];
        }
        if (den <= 0.0) {
            ++posterior.rescale_skipped;
            continue;
        }
        double w = num / den;
        double root = std::sqrt(w);
        for (auto& row : blk)
            for (double& v : row)
                v *= w;
        for (double& l : posterior.lambda_samples[s])
            l /= root;
    }
}

// Acklam's rational approximation to the standard normal quantile.
double normal_quantile(double p) {
    if (p <= 0.0 || p >= 1.0)
        throw ConfigError("quantile argument must be in (0, 1)");
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    const double plow = 0.02425, phigh = 1.0 - plow;
    double q, r, x;
    if (p < plow) {
        q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= phigh) {
        q = p - 0.5;
        r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) *
            q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    // One Halley refinement for full double precision.
    double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
    double u = e * std::sqrt(2.0 * M_PI) * std::exp(x * x / 2.0);
    x = x - u / (1.0 + x * u / 2.0);
    return x;
}

namespace {

struct Summary {
    double mean = 0.0;
    double sd = 0.0;
    double lo = 0.0;
    double hi = 0.0;
};

Summary summarize(std::vector<double> v, double level = 0.9) {
    Summary s;
    if (v.empty())
        return s;
    double m = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
    double var = 0.0;
    for (double x : v)
        var += (x - m) * (x - m);
    var /= static_cast<double>(v.size());
    std::sort(v.begin(), v.end());
    auto q = [&](double p) {
        double h = (static_cast<double>(v.size()) - 1.0) * p;
        auto lo = static_cast<std::size_t>(std::floor(h));
        auto hi = std::min(lo + 1, v.size() - 1);
        return v[lo] + (h - std::floor(h)) * (v[hi] - v[lo]);
    };
    s.mean = m;
    s.sd = std::sqrt(var);
    s.lo = q((1.0 - level) / 2.0);
    s.hi = q((1.0 + level) / 2.0);
    return s;
}

nlohmann::json summary_json(const Summary& s) {
    return {{"mean", s.mean}, {"sd", s.sd}, {"lo", s.lo}, {"hi", s.hi}};
}

} // namespace

std::string posterior_to_json(const HmmbPosterior& post) {
    nlohmann::json j;
    j["n"] = post.n;
    j["K"] = post.K;
    j["selected_chain"] = post.selected_chain;
    j["samples"] = post.lambda_samples.size();
    const std::size_t s_count = post.lambda_samples.size();

    nlohmann::json lambda = nlohmann::json::array();
    for (int i = 0; i < post.n; ++i) {
        std::vector<double> v(s_count);
        for (std::size_t s = 0; s < s_count; ++s)
            v[s] = post.lambda_samples[s][i];
        lambda.push_back(summary_json(summarize(std::move(v))));
    }
    j["lambda"] = std::move(lambda);

    nlohmann::json pi = nlohmann::json::array();
    for (int i = 0; i < post.n; ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (int k = 0; k < post.K; ++k) {
            std::vector<double> v(s_count);
            for (std::size_t s = 0; s < s_count; ++s)
                v[s] = post.pi_samples[s][i][k];
            row.push_back(summary_json(summarize(std::move(v))));
        }
        pi.push_back(std::move(row));
    }
    j["pi"] = std::move(pi);

    nlohmann::json block = nlohmann::json::array();
    for (int m = 0; m < post.K; ++m) {
        nlohmann::json row = nlohmann::json::array();
        for (int l = 0; l < post.K; ++l) {
            std::vector<double> v(s_count);
            for (std::size_t s = 0; s < s_count; ++s)
                v[s] = post.block_samples[s][m][l];
            row.push_back(summary_json(summarize(std::move(v))));
        }
        block.push_back(std::move(row));
    }
    j["block"] = std::move(block);

    if (!post.alpha_samples.empty())
        j["alpha"] = summary_json(summarize(post.alpha_samples));
    if (!post.sparsity_samples.empty())
        j["sparsity"] = summary_json(summarize(post.sparsity_samples));

    nlohmann::json chains = nlohmann::json::array();
    for (const auto& c : post.chains)
        chains.push_back({{"accept_lambda", c.accept_lambda},
                          {"accept_block", c.accept_block},
                          {"accept_membership", c.accept_membership},
                          {"accept_alpha", c.accept_alpha},
                          {"final_mean_log_joint", c.final_mean_log_joint}});
    j["chains"] = std::move(chains);
    j["rescale_skipped"] = post.rescale_skipped;
    return j.dump(2);
}

void write_trace_binary(const HmmbPosterior& post, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw DataError("cannot open " + path + " for writing");
    auto put_u32 = [&](std::uint32_t v) {
        unsigned char buf[4];
        for (int b = 0; b < 4; ++b)
            buf[b] = static_cast<unsigned char>((v >> (8 * b)) & 0xff);
        out.write(reinterpret_cast<const char*>(buf), 4);
    };
    auto put_f64 = [&](double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof(bits));
        unsigned char buf[8];
        for (int b = 0; b < 8; ++b)
            buf[b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xff);
        out.write(reinterpret_cast<const char*>(buf), 8);
    };
    put_u32(static_cast<std::uint32_t>(post.n));
    put_u32(static_cast<std::uint32_t>(post.K));
    put_u32(static_cast<std::uint32_t>(post.lambda_samples.size()));
    for (std::size_t s = 0; s < post.lambda_samples.size(); ++s) {
        for (double v : post.lambda_samples[s])
            put_f64(v);
        for (const auto& row : post.pi_samples[s])
            for (double v : row)
                put_f64(v);
        for (const auto& row : post.block_samples[s])
            for (double v : row)
                put_f64(v);
    }
}

} // namespace causalnet::infer
