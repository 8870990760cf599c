#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "causalnet/hmmb.hpp"
#include "causalnet/network.hpp"

namespace causalnet::infer {

enum class SwitchPolicy { map_fixed, full, selective };

std::string to_string(SwitchPolicy p);
SwitchPolicy switch_policy_from_string(const std::string& s);

struct McmcConfig {
    int chains = 3;
    int iterations = 2000;
    int burn_in = 1000;
    double step_lambda_rel = 0.1; // sigma_lambda = rel * initial lambda_i
    double step_block = 0.05;
    double step_pi = 0.25;        // diagonal entry of the proposal covariance
    double step_alpha = 0.1;
    double lambda_floor = 1e-4;   // proposals below this are auto-rejected
    bool fix_block_diagonal = false;
    std::vector<double> block_diagonal; // fixed values; empty = profile precompute
    bool update_alpha = false;
    bool update_sparsity = true;
    bool update_lambda = true;
    bool update_block = true;
    bool update_membership = true;
    bool update_switches = true;
    SwitchPolicy switch_policy = SwitchPolicy::map_fixed;
    double selective_rate_cutoff = 1.0; // experimental; rate*T above it stays off
    bool adapt_steps = true;            // burn-in only, frozen afterward
    bool include_lambda_prior = true;
    double lambda_min = 0.5;
    double lambda_max = 50.0;
    double alpha_min = 1.1;
    double alpha_max = 10.0;
    double init_alpha = 2.9;
    double init_sparsity = 0.2;
    double timespan = 1.0;
    int lifestyles = 1;
    std::optional<netcore::HmmbParams> init_override;
    std::optional<std::vector<double>> reference_diagonal; // rescale target

    void validate() const;
};

struct ChainDiagnostics {
    double accept_lambda = 0.0;
    double accept_block = 0.0;
    double accept_membership = 0.0;
    double accept_alpha = 0.0;
    double final_mean_log_joint = 0.0; // over the last 10% of iterations
    std::vector<double> log_joint_trace;
};

struct HmmbPosterior {
    int n = 0;
    int K = 0;
    // Post burn-in samples of the selected chain.
    std::vector<std::vector<double>> lambda_samples;              // S x n
    std::vector<std::vector<std::vector<double>>> pi_samples;     // S x n x K
    std::vector<std::vector<std::vector<double>>> block_samples;  // S x K x K
    std::vector<double> alpha_samples;
    std::vector<double> sparsity_samples;
    std::vector<ChainDiagnostics> chains;
    int selected_chain = 0;
    int rescale_skipped = 0; // samples with an all-zero block diagonal
};

// Unnormalized log joint posterior of (lambda, Pi, B, I, s) given the
// network; -inf sentinel when a positive count sits on an off switch or a
// parameter leaves its support.
double log_joint_posterior(const netcore::HmmbParams& params,
                           const netcore::InfluenceNetwork& net,
                           bool include_lambda_prior = true,
                           double lambda_min = 0.5, double lambda_max = 50.0);

netcore::HmmbParams init_chain(const netcore::InfluenceNetwork& net, int K,
                               const McmcConfig& config, std::uint64_t seed);

struct StepResult {
    bool accepted = false;
    double acceptance_prob = 0.0;
};

StepResult mh_step_lambda(netcore::HmmbParams& state,
                          const netcore::InfluenceNetwork& net, int i,
                          double sigma, const McmcConfig& config,
                          std::mt19937_64& rng);

StepResult mh_step_block(netcore::HmmbParams& state,
                         const netcore::InfluenceNetwork& net, int m, int n,
                         double sigma, const McmcConfig& config,
                         std::mt19937_64& rng);

StepResult mh_step_membership(netcore::HmmbParams& state,
                              const netcore::InfluenceNetwork& net, int i,
                              double sigma, const McmcConfig& config,
                              std::mt19937_64& rng);

void gibbs_step_switches(netcore::HmmbParams& state,
                         const netcore::InfluenceNetwork& net,
                         SwitchPolicy policy, double selective_cutoff,
                         std::mt19937_64& rng);

StepResult gibbs_step_hyper(netcore::HmmbParams& state,
                            const netcore::InfluenceNetwork& net,
                            const McmcConfig& config, std::mt19937_64& rng);

// Proposal log-density of the logistic-Normal move used for memberships,
// with the simplex-to-logit Jacobian included.
double logistic_normal_log_density(const std::vector<double>& to,
                                   const std::vector<double>& from,
                                   double sigma);

HmmbPosterior run_mcmc(const netcore::InfluenceNetwork& net, int K,
                       const McmcConfig& config, std::uint64_t seed);

struct McemConfig {
    int iterations = 200;
    int inner_sweeps = 5;      // membership/switch refresh per EM step
    double step_lambda = 0.01; // gradient-ascent rates
    double step_block = 0.005;
    McmcConfig mcmc;           // shared priors, floors, policies
};

struct McemResult {
    netcore::HmmbParams mode;
    std::vector<std::vector<double>> lambda_path;             // per iteration
    std::vector<std::vector<std::vector<double>>> block_path;
    std::vector<std::vector<std::vector<double>>> pi_samples; // E-step draws
    std::vector<double> log_joint_path;
    int iterations_to_mode = 0;
    int step_halvings = 0;
};

McemResult run_mcem(const netcore::InfluenceNetwork& net, int K,
                    const McemConfig& config, std::uint64_t seed);

// Gradients of the log joint with respect to lambda and B at fixed (Pi, I).
std::vector<double> lambda_gradient(const netcore::HmmbParams& params,
                                    const netcore::InfluenceNetwork& net,
                                    bool include_prior = true);
std::vector<std::vector<double>> block_gradient(const netcore::HmmbParams& params,
                                                const netcore::InfluenceNetwork& net);

struct FisherMatrix {
    int node = 0;
    int reference = 0; // index of the dropped simplex coordinate
    Eigen::MatrixXd matrix; // (K-1) x (K-1)
};

FisherMatrix fisher_information(int i, const netcore::HmmbParams& params);

struct CramerRaoWidths {
    std::vector<double> widths;
    bool singular = false;
};

CramerRaoWidths cramer_rao_width(const FisherMatrix& f, double level);

// Least-squares scalar match of the block diagonal to a reference, with the
// paired lambda rescaling that leaves every edge rate unchanged. Returns w.
double rescale_params(netcore::HmmbParams& params,
                      const std::vector<double>& reference_diagonal);
void rescale_to_reference(HmmbPosterior& posterior,
                          const std::vector<double>& reference_diagonal);

double normal_quantile(double p);

std::string posterior_to_json(const HmmbPosterior& posterior);
// Little-endian binary trace: uint32 header {n, K, iterations}, then per
// sample the lambda block (n doubles), the Pi block (n*K doubles, row-major),
// and the B block (K*K doubles, row-major).
void write_trace_binary(const HmmbPosterior& posterior, const std::string& path);

} // namespace causalnet::infer
