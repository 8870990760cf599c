#include "causalnet/hmmb.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "causalnet/errors.hpp"
#include "causalnet/rng.hpp"

namespace causalnet::netcore {

namespace {

void check_simplex(const std::vector<double>& v, const std::string& what) {
    double sum = 0.0;
    for (double x : v) {
        if (x < 0.0)
            throw ConfigError(what + " has a negative entry");
        sum += x;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw ConfigError(what + " does not sum to 1");
}

} // namespace

void HmmbParams::validate() const {
    if (n <= 0 || K <= 0 || L <= 0)
        throw ConfigError("HmmbParams: n, K, L must be positive");
    if (static_cast<int>(lambda.size()) != n)
        throw ConfigError("HmmbParams: lambda size mismatch");
    if (static_cast<int>(pi.size()) != n)
        throw ConfigError("HmmbParams: pi size mismatch");
    if (static_cast<int>(block.size()) != K)
        throw ConfigError("HmmbParams: block size mismatch");
    if (switches.size() != static_cast<std::size_t>(n) * n)
        throw ConfigError("HmmbParams: switches size mismatch");
    if (static_cast<int>(pseudocounts.size()) != K)
        throw ConfigError("HmmbParams: pseudocounts size mismatch");
    if (static_cast<int>(lifestyle_probs.size()) != L)
        throw ConfigError("HmmbParams: lifestyle_probs size mismatch");
    for (double l : lambda)
        if (!(l > 0.0))
            throw ConfigError("HmmbParams: lambda entries must be positive");
    for (const auto& row : pi) {
        if (static_cast<int>(row.size()) != K)
            throw ConfigError("HmmbParams: pi row length mismatch");
        check_simplex(row, "HmmbParams: pi row");
    }
    for (const auto& row : block) {
        if (static_cast<int>(row.size()) != K)
            throw ConfigError("HmmbParams: block row length mismatch");
        for (double b : row)
            if (b < 0.0)
                throw ConfigError("HmmbParams: block entries must be non-negative");
    }
    for (const auto& row : pseudocounts) {
        if (static_cast<int>(row.size()) != L)
            throw ConfigError("HmmbParams: pseudocounts row length mismatch");
        for (double x : row)
            if (x < 0.0)
                throw ConfigError("HmmbParams: pseudocounts must be non-negative");
    }
    check_simplex(lifestyle_probs, "HmmbParams: lifestyle_probs");
    if (sparsity < 0.0 || sparsity > 1.0)
        throw ConfigError("HmmbParams: sparsity must be in [0, 1]");
    if (!(alpha > 1.0))
        throw ConfigError("HmmbParams: alpha must exceed 1");
    if (!(timespan > 0.0))
        throw ConfigError("HmmbParams: timespan must be positive");
    for (int i = 0; i < n; ++i)
        if (switch_at(i, i) != 0)
            throw ConfigError("HmmbParams: diagonal switches must be 0");
}

double block_quad(const HmmbParams& p, int i, int j) {
    double v = 0.0;
    for (int m = 0; m < p.K; ++m) {
        if (p.pi[i][m] == 0.0)
            continue;
        double inner = 0.0;
        for (int k = 0; k < p.K; ++k)
            inner += p.block[m][k] * p.pi[j][k];
        v += p.pi[i][m] * inner;
    }
    return v;
}

Eigen::MatrixXd rate_matrix(const HmmbParams& params) {
    params.validate();
    Eigen::MatrixXd rates = Eigen::MatrixXd::Zero(params.n, params.n);
    for (int i = 0; i < params.n; ++i)
        for (int j = 0; j < params.n; ++j) {
            if (i == j || params.switch_at(i, j) == 0)
                continue;
            rates(i, j) = params.lambda[i] * params.lambda[j] * block_quad(params, i, j);
        }
    return rates;
}

InfluenceNetwork sample_network(const HmmbParams& params, std::uint64_t seed) {
    params.validate();
    InfluenceNetwork net(params.n);
    auto rng = make_rng(seed, {0x6e6574ULL});
    for (int i = 0; i < params.n; ++i)
        for (int j = 0; j < params.n; ++j) {
            if (i == j || params.switch_at(i, j) == 0)
                continue;
            double mean = params.lambda[i] * params.lambda[j] *
                          block_quad(params, i, j) * params.timespan;
            if (mean <= 0.0)
                continue;
            std::poisson_distribution<long long> pois(mean);
            long long c = pois(rng);
            if (c > 0)
                net.set_count(i, j, c);
        }
    return net;
}

double sample_truncated_power_law(double alpha, double lo, double hi,
                                  std::mt19937_64& rng) {
    if (!(alpha > 1.0) || !(lo > 0.0) || !(hi > lo))
        throw ConfigError("truncated power law requires alpha > 1 and 0 < lo < hi");
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    double u = unif(rng);
    double a1 = 1.0 - alpha;
    double lo_p = std::pow(lo, a1);
    double hi_p = std::pow(hi, a1);
    return std::pow(lo_p + u * (hi_p - lo_p), 1.0 / a1);
}

std::vector<double> sample_dirichlet(const std::vector<double>& a,
                                     std::mt19937_64& rng) {
    double total = std::accumulate(a.begin(), a.end(), 0.0);
    if (total <= 0.0)
        throw ConfigError("Dirichlet pseudocounts are all zero");
    std::vector<double> draw(a.size(), 0.0);
    double sum = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        if (a[k] <= 0.0)
            continue;
        std::gamma_distribution<double> gamma(a[k], 1.0);
        draw[k] = gamma(rng);
        sum += draw[k];
    }
    if (sum <= 0.0) {
        // All gamma draws underflowed; fall back to the mean direction.
        for (std::size_t k = 0; k < a.size(); ++k)
            draw[k] = a[k] / total;
        return draw;
    }
    for (double& x : draw)
        x /= sum;
    return draw;
}

HmmbParams sample_hmmb_params(const HmmbGeneratorConfig& config, std::uint64_t seed) {
    if (config.n <= 0 || config.K <= 0 || config.L <= 0)
        throw ConfigError("generator config: n, K, L must be positive");
    if (static_cast<int>(config.pseudocounts.size()) != config.K)
        throw ConfigError("generator config: pseudocounts must be K x L");
    for (const auto& row : config.pseudocounts)
        if (static_cast<int>(row.size()) != config.L)
            throw ConfigError("generator config: pseudocounts must be K x L");
    check_simplex(config.lifestyle_probs, "generator config: lifestyle_probs");
    if (!(config.alpha > 1.0))
        throw ConfigError("generator config: alpha must exceed 1");
    for (int l = 0; l < config.L; ++l) {
        double col = 0.0;
        for (int k = 0; k < config.K; ++k)
            col += config.pseudocounts[k][l];
        if (col <= 0.0)
            throw ConfigError("generator config: pseudocount column " +
                              std::to_string(l) + " is all zero");
    }

    HmmbParams p;
    p.n = config.n;
    p.K = config.K;
    p.L = config.L;
    p.block = config.block;
    p.sparsity = config.sparsity;
    p.alpha = config.alpha;
    p.timespan = config.timespan;
    p.pseudocounts = config.pseudocounts;
    p.lifestyle_probs = config.lifestyle_probs;
    p.lambda.resize(p.n);
    p.pi.resize(p.n);
    p.switches.assign(static_cast<std::size_t>(p.n) * p.n, 0);

    auto rng_lambda = make_rng(seed, {1});
    auto rng_pi = make_rng(seed, {2});
    auto rng_switch = make_rng(seed, {3});

    for (int i = 0; i < p.n; ++i)
        p.lambda[i] = sample_truncated_power_law(config.alpha, config.lambda_min,
                                                 config.lambda_max, rng_lambda);

    std::discrete_distribution<int> lifestyle(config.lifestyle_probs.begin(),
                                              config.lifestyle_probs.end());
    for (int i = 0; i < p.n; ++i) {
        int l = lifestyle(rng_pi);
        std::vector<double> a(p.K);
        for (int k = 0; k < p.K; ++k)
            a[k] = config.pseudocounts[k][l];
        p.pi[i] = sample_dirichlet(a, rng_pi);
    }

    std::bernoulli_distribution on(config.sparsity);
    for (int i = 0; i < p.n; ++i)
        for (int j = 0; j < p.n; ++j)
            if (i != j && on(rng_switch))
                p.set_switch(i, j, 1);

    p.validate();
    return p;
}

std::string params_to_json(const HmmbParams& params) {
    nlohmann::json j;
    j["n"] = params.n;
    j["K"] = params.K;
    j["L"] = params.L;
    j["lambda"] = params.lambda;
    j["pi"] = params.pi;
    j["block"] = params.block;
    j["switches"] = params.switches;
    j["sparsity"] = params.sparsity;
    j["alpha"] = params.alpha;
    j["timespan"] = params.timespan;
    j["pseudocounts"] = params.pseudocounts;
    j["lifestyle_probs"] = params.lifestyle_probs;
    return j.dump(2);
}

HmmbParams params_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("invalid params JSON: ") + e.what());
    }
    HmmbParams p;
    try {
        p.n = j.at("n").get<int>();
        p.K = j.at("K").get<int>();
        p.L = j.at("L").get<int>();
        p.lambda = j.at("lambda").get<std::vector<double>>();
        p.pi = j.at("pi").get<std::vector<std::vector<double>>>();
        p.block = j.at("block").get<std::vector<std::vector<double>>>();
        p.switches = j.at("switches").get<std::vector<std::uint8_t>>();
        p.sparsity = j.at("sparsity").get<double>();
        p.alpha = j.at("alpha").get<double>();
        p.timespan = j.at("timespan").get<double>();
        p.pseudocounts = j.at("pseudocounts").get<std::vector<std::vector<double>>>();
        p.lifestyle_probs = j.at("lifestyle_probs").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("params JSON missing field: ") + e.what());
    }
    p.validate();
    return p;
}

void write_params_json(const HmmbParams& params, const std::string& path) {
    std::ofstream out(path);
    if (!out)
        throw DataError("cannot open " + path + " for writing");
    out << params_to_json(params) << '\n';
}

HmmbParams read_params_json(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return params_from_json(buf.str());
}

} // namespace causalnet::netcore
