#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "causalnet/network.hpp"

namespace causalnet::design {

enum class Scheme { CR, SR, INR, PT, RNC };
enum class RerandVariant { RC, RG, RCG };

std::string to_string(Scheme s);
std::string to_string(RerandVariant v);
Scheme scheme_from_string(const std::string& s);
RerandVariant rerand_variant_from_string(const std::string& s);

// One focal unit placed by the sequential schemes, with the exposure
// condition it was committed to (own treatment, treated in-neighbors).
struct FocalRecord {
    int unit = 0;
    int own_z = 0;
    int treated_neighbors = 0;
};

struct Assignment {
    std::vector<int> z;      // entries in {0,1}
    Scheme scheme = Scheme::CR;
    int resource_cap = 0;
    int attempts = 1;
    std::optional<double> balance; // accepted balance value under rerandomization
    bool relaxed = false;          // best-seen fallback after max_draws
    std::vector<FocalRecord> focal; // SR/INR placements

    int treated_count() const;
};

// Half-open partition of exposure into labeled intervals [L_g, H_g],
// inclusive at both ends; the last H_g may be infinity.
struct ExposureGrouping {
    std::vector<std::pair<double, double>> boundaries;

    void validate() const; // throws ConfigError on overlap or gaps
    int label(double exposure) const;
    int group_count() const { return static_cast<int>(boundaries.size()); }
};

// Three groups split at the empirical tertiles of exposure pooled over
// repeated complete-randomization draws.
ExposureGrouping empirical_tertiles(const netcore::InfluenceNetwork& net,
                                    int resource_cap, std::uint64_t seed,
                                    int draws = 200);

struct BalanceTier {
    std::vector<int> covariate_columns; // indices into the covariate rows
    double threshold = 0.0;             // > 0 once calibrated
};

struct BalanceCriterion {
    std::vector<BalanceTier> tiers; // checked in priority order
    double group_size_ratio_max = 0.5;
    int max_draws = 1000;
};

struct SchemeConfig {
    int target_k = 1;               // SR/INR treated-neighbor condition
    double insulation_fraction = 0.6; // INR pre-control share
    int cluster_count = 0;          // RNC; 0 means sqrt(n)
    std::vector<int> cluster_labels; // RNC override; empty means spectral
};

Assignment draw_assignment(Scheme scheme, const netcore::InfluenceNetwork& net,
                           int resource_cap, const SchemeConfig& config,
                           std::mt19937_64& rng);

// Sum exposure to peer treatments: sum over in-neighbors of a_ji z_j.
double sum_exposure(const netcore::InfluenceNetwork& net,
                    const std::vector<int>& z, int i);

std::vector<int> exposure_groups(const netcore::InfluenceNetwork& net,
                                 const std::vector<int>& z,
                                 const ExposureGrouping& grouping);

struct BalanceValue {
    double m = 0.0;
    bool ridged = false; // covariance stabilized with a 1e-8 ridge
};

// Mahalanobis distance between group mean vectors under the pooled sample
// covariance, without sample-size scaling.
BalanceValue mahalanobis_balance(const std::vector<std::vector<double>>& covariates,
                                 const std::vector<int>& group_a,
                                 const std::vector<int>& group_b);

Assignment rerandomize(Scheme base_scheme, const BalanceCriterion& criterion,
                       RerandVariant variant, const netcore::InfluenceNetwork& net,
                       const std::vector<std::vector<double>>& covariates,
                       const ExposureGrouping& grouping, int resource_cap,
                       const SchemeConfig& config, std::mt19937_64& rng);

// Per-tier thresholds set to the q-th percentile of the max pairwise
// Mahalanobis statistic over base-scheme draws.
std::vector<double> calibrate_thresholds(
    Scheme base_scheme, const netcore::InfluenceNetwork& net,
    const std::vector<std::vector<double>>& covariates,
    const ExposureGrouping& grouping, int resource_cap,
    const std::vector<BalanceTier>& tiers, const SchemeConfig& config,
    std::mt19937_64& rng, double percentile = 10.0, int draws = 1000);

// CSV export with header "unit,z,group_label".
void write_assignment_csv(const Assignment& assignment,
                          const std::vector<int>& group_labels,
                          const std::string& path);

} // namespace causalnet::design
