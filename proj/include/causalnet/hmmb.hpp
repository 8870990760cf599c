#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "causalnet/network.hpp"

namespace causalnet::netcore {

// Generative parameters of the hybrid mixed-membership blockmodel. Edge
// counts are Poisson with rate lambda_ij * T where
// lambda_ij = lambda_i * lambda_j * (pi_i' B pi_j) * I_ij and I_ii = 0.
struct HmmbParams {
    int n = 0;
    int K = 0;
    int L = 0;
    std::vector<double> lambda;                 // n, activity levels, > 0
    std::vector<std::vector<double>> pi;        // n x K, each row a simplex
    std::vector<std::vector<double>> block;     // K x K, non-negative
    std::vector<std::uint8_t> switches;         // n*n row-major, diagonal 0
    double sparsity = 0.2;                      // s in [0, 1]
    double alpha = 2.9;                         // power-law exponent > 1
    double timespan = 1.0;                      // T > 0
    std::vector<std::vector<double>> pseudocounts; // K x L, column per lifestyle
    std::vector<double> lifestyle_probs;        // L, simplex

    std::uint8_t switch_at(int i, int j) const { return switches[static_cast<std::size_t>(i) * n + j]; }
    void set_switch(int i, int j, std::uint8_t v) { switches[static_cast<std::size_t>(i) * n + j] = v; }

    // Throws ConfigError on dimension mismatch or invariant violation.
    void validate() const;
};

// Generator settings for drawing HmmbParams from the model's priors.
struct HmmbGeneratorConfig {
    int n = 0;
    int K = 0;
    int L = 0;
    std::vector<std::vector<double>> pseudocounts; // K x L
    std::vector<double> lifestyle_probs;           // L
    std::vector<std::vector<double>> block;        // K x K
    double sparsity = 0.2;
    double alpha = 2.9;
    double timespan = 1.0;
    double lambda_min = 0.5; // truncated power-law support
    double lambda_max = 50.0;
};

// Blockmodel quadratic form pi_i' B pi_j.
double block_quad(const HmmbParams& p, int i, int j);

// Dense matrix of rates lambda_ij (without the timespan factor).
Eigen::MatrixXd rate_matrix(const HmmbParams& params);

InfluenceNetwork sample_network(const HmmbParams& params, std::uint64_t seed);

HmmbParams sample_hmmb_params(const HmmbGeneratorConfig& config, std::uint64_t seed);

// Truncated Pareto draw with density proportional to x^-alpha on [lo, hi].
double sample_truncated_power_law(double alpha, double lo, double hi,
                                  std::mt19937_64& rng);

// Dirichlet draw; zero pseudocounts give exact zero coordinates.
std::vector<double> sample_dirichlet(const std::vector<double>& a,
                                     std::mt19937_64& rng);

// JSON round trip mirroring the HmmbParams field names.
std::string params_to_json(const HmmbParams& params);
HmmbParams params_from_json(const std::string& text);
void write_params_json(const HmmbParams& params, const std::string& path);
HmmbParams read_params_json(const std::string& path);

} // namespace causalnet::netcore
