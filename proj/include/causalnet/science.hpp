#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "causalnet/hmmb.hpp"
#include "causalnet/network.hpp"

namespace causalnet::science {

enum class ExposureFn { sum, log_sum };
enum class CovariateFn { identity, log };
enum class ConfounderType { none, treatment_likelihood, activity, membership, independent };

// Additive outcome model: Y_i = tau z_i + gamma g_i(A, z) + betas . h(x_i) + mu + eps_i.
struct OutcomeModelSpec {
    double tau = 0.0;
    double gamma = 0.0;
    std::vector<double> betas;
    double mu = 0.0;
    double noise_mean = 0.0;
    double noise_sd = 0.0;
    ExposureFn exposure_fn = ExposureFn::sum;
    CovariateFn covariate_fn = CovariateFn::identity;
    ConfounderType confounder = ConfounderType::none;
    netcore::NeighborhoodSpec neighborhood{1};
};

// The full generative truth of one experiment: network, model, covariates,
// and noise frozen per unit across all counterfactual conditions.
struct ScienceTable {
    netcore::InfluenceNetwork net;
    OutcomeModelSpec model;
    std::vector<std::vector<double>> covariates; // raw x_i per unit
    std::vector<double> covariate_effect;        // betas . h(x_i), cached
    std::vector<double> noise;                   // frozen eps_i
    std::vector<double> treatment_weight;        // only for treatment_likelihood
    std::vector<std::vector<int>> open_neighborhoods; // N_{-i} per unit
};

// Covariate input for build_science; network parameters supply the activity
// and membership confounders, explicit values everything else.
struct CovariateSource {
    const netcore::HmmbParams* params = nullptr;
    std::vector<std::vector<double>> values; // overrides random draws if set
};

ScienceTable build_science(const netcore::InfluenceNetwork& net,
                           const OutcomeModelSpec& model,
                           const CovariateSource& source, std::uint64_t seed);

double exposure(const netcore::InfluenceNetwork& net, const std::vector<int>& z,
                int i, ExposureFn fn);

// z must cover the closed neighborhood of i; z_self overrides z[i].
double potential_outcome(const ScienceTable& table, int i, int z_self,
                         const std::vector<int>& z_neighbors);

std::vector<double> observe(const ScienceTable& table, const std::vector<int>& z);

enum class EstimandKind {
    primary_avg,
    primary_conditional,
    k_neighbors,
    k_neighbors_atleast,
    fixed_primary,
    fixed_primary_no_peer,
    fixed_peer,
    fixed_total,
    total_by_hop,
    strategy_direct,
    strategy_indirect,
    network_manipulation,
};

// A distribution over assignment vectors, used by the strategy estimands.
struct StrategySpec {
    enum class Kind { bernoulli, complete } kind = Kind::bernoulli;
    double p = 0.5; // bernoulli per-unit probability
    int cap = 0;    // complete randomization treated count
};

struct EstimandSpec {
    EstimandKind kind = EstimandKind::primary_avg;
    std::vector<int> z;     // fixed assignment argument
    int k = 0;              // treated-neighbor count
    int hops = 0;           // total_by_hop distance
    StrategySpec strategy_a; // daleth for strategy_indirect, gimel otherwise
    StrategySpec strategy_b; // gimel for strategy_indirect
    const netcore::InfluenceNetwork* alt_net = nullptr; // network_manipulation
};

struct McConfig {
    int enumeration_cap_log2 = 12; // per-unit neighborhood assignment cap
    int draws = 10000;             // strategy sampling budget
};

struct EstimandValue {
    double value = 0.0;
    std::optional<double> se; // present for Monte Carlo (strategy) kinds
};

EstimandValue compute_estimand(const ScienceTable& table, const EstimandSpec& spec,
                               const McConfig& mc = {}, std::uint64_t seed = 0);

// JSON round trip so an experiment is exactly replayable.
std::string science_to_json(const ScienceTable& table);
ScienceTable science_from_json(const std::string& text);

std::string to_string(EstimandKind kind);
EstimandKind estimand_kind_from_string(const std::string& s);
std::string to_string(ExposureFn fn);
std::string to_string(CovariateFn fn);
std::string to_string(ConfounderType c);
ExposureFn exposure_fn_from_string(const std::string& s);
CovariateFn covariate_fn_from_string(const std::string& s);
ConfounderType confounder_from_string(const std::string& s);

} // namespace causalnet::science
