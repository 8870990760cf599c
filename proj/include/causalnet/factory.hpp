#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "causalnet/analysis.hpp"
#include "causalnet/design.hpp"
#include "causalnet/hmmb.hpp"
#include "causalnet/science.hpp"

namespace causalnet::factory {

// One network-topology factor level (NP).
struct NetworkLevel {
    std::string name;
    int size = 128;
    double density_scale = 1.0;    // s = scale * 3 log(N) / N
    int communities = 4;
    double structure_scale = 1.0;  // off-diagonal block strength multiplier
    double degree_exponent = 2.9;  // power-law alpha
};

// One outcome-model factor level (POM).
struct OutcomeLevel {
    std::string name;
    science::ConfounderType confounder = science::ConfounderType::none;
    science::CovariateFn covariate_fn = science::CovariateFn::identity;
    science::ExposureFn exposure_fn = science::ExposureFn::sum;
};

// One analysis factor level (A).
struct EstimatorLevel {
    std::string name; // NM, DM, or B{N|IP|LP|IC|LC}{S|L}
};

struct FactorialPlan {
    std::vector<NetworkLevel> networks;
    std::vector<OutcomeLevel> outcomes;
    std::vector<double> resource_fractions; // TR levels
    std::vector<std::string> schemes;       // RS levels, incl. RC/RG/RCG
    std::vector<EstimatorLevel> estimators;
    int replications = 1;
    std::uint64_t base_seed = 0;
    std::vector<science::EstimandKind> targets = {
        science::EstimandKind::primary_avg, science::EstimandKind::fixed_peer};
    double level = 0.9;
    double timespan = 6.0;
    int posterior_samples = 1000;
    int rerandomize_max_draws = 100;
    int calibration_draws = 100;
    std::vector<std::size_t> cell_subset; // desk-scale selector; empty = all
    std::string ledger_path;              // resumable on-disk ledger

    std::size_t cell_count() const;
    std::vector<std::string> cell_levels(std::size_t cell) const; // np,pom,tr,rs,a
    void validate() const;
};

struct ResultRow {
    std::size_t cell = 0;
    std::string np, pom, tr, rs, a;
    int replication = 0;
    std::string target;
    double truth = 0.0;
    double estimate = 0.0;
    double lo = 0.0;
    double hi = 0.0;
    double width = 0.0;
    int covered = 0;
    double imse = 0.0;
    int failed = 0;
    std::string diagnostic;
};

std::vector<ResultRow> run_factorial(const FactorialPlan& plan);

struct AnovaRow {
    std::string term; // factor names joined with "x", or "residual"/"total"
    long long df = 0;
    double ss = 0.0;
    double ms = 0.0;
};

// Fixed-effects factorial decomposition of the response over categorical
// factors, interactions up to max_order, higher orders pooled into the
// residual together with replication.
std::vector<AnovaRow> anova(
    const std::vector<std::map<std::string, std::string>>& factor_values,
    const std::vector<double>& response,
    const std::vector<std::string>& factor_names, int max_order = 3);

struct CellSummary {
    std::size_t cell = 0;
    std::string np, pom, tr, rs, a, target;
    int replications = 0;
    double coverage = 0.0;
    double mean_width = 0.0;
    double mean_imse = 0.0;
    double se_imse = 0.0;
};

std::vector<CellSummary> coverage_summary(const std::vector<ResultRow>& rows);

// results.csv (one row per replication) + summary.json in out_dir; column
// order documented in the CSV header comment.
void emit_report(const std::vector<ResultRow>& rows, const std::string& out_dir);

std::vector<ResultRow> read_result_csv(const std::string& path);
void write_result_csv(const std::vector<ResultRow>& rows,
                      const std::string& path);

// Baseline HMMB generator settings for a topology level.
netcore::HmmbGeneratorConfig generator_for(const NetworkLevel& level,
                                           double timespan);

// Shipped desk-scale default plan.
FactorialPlan default_plan();
// The full factor-level name lists of the study design (for structure checks).
std::vector<std::string> full_np_names();
std::vector<std::string> full_pom_names();
std::vector<std::string> full_rs_names();
std::vector<std::string> full_a_names();

FactorialPlan plan_from_json(const std::string& text);
std::string plan_to_json(const FactorialPlan& plan);

} // namespace causalnet::factory
