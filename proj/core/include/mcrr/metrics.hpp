#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mcrr/autodiff.hpp"
#include "mcrr/common.hpp"
#include "mcrr/forcing.hpp"

namespace mcrr {

using ad::value_of;
using std::abs;
using std::sqrt;

inline constexpr double kSqrt2 = 1.4142135623730951;

/// Efficiency score and its decomposition. The correlation component is
/// reported under the name "gamma" in exported tables.
struct KgeComponents {
    double kge = 0.0;
    double kge_ss = 0.0;  // rescaled so the mean-flow benchmark scores 0
    double gamma = 0.0;   // linear correlation
    double alpha = 0.0;   // std_sim / std_obs
    double beta = 0.0;    // mean_sim / mean_obs
    double a_comp = 0.0;  // 1 - |1 - alpha|
    double b_comp = 0.0;  // 1 - |1 - beta|
    double mean_sim = 0.0, mean_obs = 0.0;
    double std_sim = 0.0, std_obs = 0.0;
    std::size_t n = 0;
};

struct AuxMetrics {
    double nse = 0.0;
    double rmse = 0.0;
    double mae = 0.0;
};

inline double kge_to_skill(double kge) { return 1.0 - (1.0 - kge) / kSqrt2; }

std::vector<std::uint32_t> subset_indices(const SubsetMask& mask, SubsetLabel label);

/// Steps of one flow group, optionally restricted to one subset.
std::vector<std::uint32_t> group_indices(const FlowGroupMask& groups, int group,
                                         const SubsetMask* mask = nullptr,
                                         SubsetLabel label = SubsetLabel::Train);

/// All native (non-spin-up) steps with an observed value.
std::vector<std::uint32_t> native_indices(const SubsetMask& mask);

namespace detail {
inline void check_obs_moments(double mean_obs, double var_obs, std::size_t n) {
    if (n < 2) throw DegenerateObserved("KGE needs at least two steps");
    if (var_obs <= 0.0) throw DegenerateObserved("observed series has zero variance");
    if (mean_obs == 0.0) throw DegenerateObserved("observed series has zero mean");
}
}  // namespace detail

/**
 * @brief Efficiency score over the given steps; differentiable in sim.
 *
 * Population moments throughout. A simulated series with zero variance gets
 * correlation 0 by convention, so a constant simulation at the observed mean
 * scores exactly 1 - sqrt(2).
 */
template <typename T>
T kge_on(std::span<const T> sim, std::span<const double> obs,
         std::span<const std::uint32_t> idx) {
    const auto n = idx.size();
    double mean_obs = 0.0;
    for (auto i : idx) mean_obs += obs[i];
    mean_obs /= static_cast<double>(n);
    double var_obs = 0.0;
    for (auto i : idx) {
        const double d = obs[i] - mean_obs;
        var_obs += d * d;
    }
    var_obs /= static_cast<double>(n);
    detail::check_obs_moments(mean_obs, var_obs, n);
    const double std_obs = std::sqrt(var_obs);

    T mean_sim = sim[idx[0]];
    for (std::size_t k = 1; k < n; ++k) mean_sim += sim[idx[k]];
    mean_sim = mean_sim / static_cast<double>(n);

    T var_sim = (sim[idx[0]] - mean_sim) * (sim[idx[0]] - mean_sim);
    T cov = (sim[idx[0]] - mean_sim) * (obs[idx[0]] - mean_obs);
    for (std::size_t k = 1; k < n; ++k) {
        const T ds = sim[idx[k]] - mean_sim;
        var_sim += ds * ds;
        cov += ds * (obs[idx[k]] - mean_obs);
    }
    var_sim = var_sim / static_cast<double>(n);
    cov = cov / static_cast<double>(n);

    const T std_sim = sqrt(var_sim);
    const T alpha = std_sim / std_obs;
    const T beta = mean_sim / mean_obs;
    // Convention: a simulation that is constant to machine precision carries
    // no correlation signal. The threshold (rather than an exact-zero test)
    // keeps the benchmark identity exact under floating-point mean noise.
    const bool flat_sim =
        value_of(std_sim) <= 1e-12 * std::max(1.0, std::abs(value_of(mean_sim)));
    T gamma = cov / (std_sim * std_obs + 1e-300);
    if (flat_sim) gamma = gamma * 0.0;

    const T ed2 = (gamma - 1.0) * (gamma - 1.0) + (beta - 1.0) * (beta - 1.0) +
                  (alpha - 1.0) * (alpha - 1.0);
    return 1.0 - sqrt(ed2);
}

KgeComponents kge_components(std::span<const double> sim, std::span<const double> obs,
                             std::span<const std::uint32_t> idx);

AuxMetrics aux_metrics(std::span<const double> sim, std::span<const double> obs,
                       std::span<const std::uint32_t> idx);

/// Linear-interpolation quantile of a sorted sample (h = (n-1)p).
double percentile_sorted(std::span<const double> sorted, double p);

struct ScorePercentiles {
    double worst = 0.0;  // minimum
    double p5 = 0.0, p25 = 0.0, p50 = 0.0, p75 = 0.0, p95 = 0.0;
};

ScorePercentiles score_percentiles(std::vector<double> values);

struct AnnualScore {
    int water_year = 0;
    KgeComponents k;
    bool degenerate = false;  // observed moments unusable; excluded from percentiles
};

/// Per-water-year scores over the native record.
std::vector<AnnualScore> annual_scores(std::span<const double> sim, const ForcingSeries& forcing);

struct MetricRow {
    std::string name;
    KgeComponents k;
    AuxMetrics aux;
    bool degenerate = false;
};

/// Convenience overload over the full series.
KgeComponents kge_components(std::span<const double> sim, std::span<const double> obs);

struct DiagnosticReport {
    std::string model;
    std::string config_hash;
    std::vector<MetricRow> subsets;      // All + Train/Select/Test where present
    std::vector<MetricRow> flow_groups;  // "<subset>/G<k>" rows
    std::vector<AnnualScore> annual;
    ScorePercentiles annual_skill;
    std::vector<double> group_thresholds;
};

DiagnosticReport diagnose(std::span<const double> sim, const ForcingSeries& forcing,
                          const SubsetMask& mask, const FlowGroupMask& groups);

std::string report_to_json(const DiagnosticReport& report);
std::string report_to_text(const DiagnosticReport& report);
void write_annual_csv(const DiagnosticReport& report, const std::string& path,
                      std::string_view meta = {});

}  // namespace mcrr
