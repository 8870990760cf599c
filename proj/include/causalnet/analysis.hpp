#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "causalnet/design.hpp"
#include "causalnet/network.hpp"
#include "causalnet/science.hpp"

namespace causalnet::analysis {

enum class EstimatorKind { neyman, diff_means, bayes };
enum class CovariateSet { none, activity, membership, all, treatment_likelihood, independent };

std::string to_string(EstimatorKind k);
std::string to_string(CovariateSet c);
EstimatorKind estimator_kind_from_string(const std::string& s);
CovariateSet covariate_set_from_string(const std::string& s);

// Normal-Inverse-Gamma prior on (coefficients, sigma^2); defaults are flat.
struct NigPrior {
    double coef_variance = 1e6;
    double shape = 0.01;
    double scale = 0.01;
};

struct EstimatorSpec {
    EstimatorKind kind = EstimatorKind::bayes;
    CovariateSet covariate_set = CovariateSet::none;
    science::ExposureFn exposure_fn = science::ExposureFn::sum;
    science::CovariateFn covariate_fn = science::CovariateFn::identity;
    NigPrior prior;
    int sample_count = 4000;
    int nearest_m = 5; // diff_means empty-cell fallback size
};

struct EstimandEstimate {
    science::EstimandSpec estimand;
    std::optional<double> point;
    std::vector<double> samples;
    std::pair<double, double> interval{0.0, 0.0};
    double level = 0.9;
    std::optional<double> truth;
    std::vector<std::string> flags;
};

// Covariate columns available to the Bayesian estimators.
struct CovariateData {
    std::vector<double> activity;               // lambda_i
    std::vector<std::vector<double>> membership; // n x K
    std::vector<double> extra;                  // confounder draw x_i
};

double neyman(const std::vector<double>& y_obs, const std::vector<int>& z);

struct DiffMeansResult {
    double value = 0.0;
    bool used_fallback = false;
    bool degenerate = false;
};

DiffMeansResult diff_means(const std::vector<double>& y_obs,
                           const std::vector<int>& z,
                           const netcore::InfluenceNetwork& net,
                           const science::EstimandSpec& target,
                           const design::ExposureGrouping& grouping,
                           int nearest_m = 5);

// Posterior of the regression coefficients in order
// [z, g, covariate columns..., intercept].
struct NigPosterior {
    std::vector<double> mean;
    std::vector<std::vector<double>> covariance_scale; // V_n
    double shape = 0.0;
    double scale = 0.0;
    bool rank_deficient = false;
    bool log_shifted = false; // log covariate guard applied
    int covariate_count = 0;  // columns between g and the intercept
};

NigPosterior fit_nig(const std::vector<double>& y_obs, const std::vector<int>& z,
                     const netcore::InfluenceNetwork& net,
                     const CovariateData& covariates, const EstimatorSpec& spec);

std::vector<EstimandEstimate> bayes_impute(
    const std::vector<double>& y_obs, const std::vector<int>& z,
    const netcore::InfluenceNetwork& net, const CovariateData& covariates,
    const EstimatorSpec& spec, const std::vector<science::EstimandSpec>& targets,
    double level, std::uint64_t seed, const science::McConfig& mc = {});

std::pair<double, double> posterior_interval(const std::vector<double>& samples,
                                             double level);

double integrated_mse(const EstimandEstimate& estimate, double truth);

std::string estimate_to_json(const EstimandEstimate& estimate);

} // namespace causalnet::analysis
