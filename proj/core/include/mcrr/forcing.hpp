#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "mcrr/common.hpp"

namespace mcrr {

// ---------------------------------------------------------------------------
// Calendar helpers. Dates are serial day numbers (days since 1970-01-01),
// which makes gap checking and arithmetic trivial.
// ---------------------------------------------------------------------------

/// Parse "YYYY-MM-DD"; throws MalformedRow on bad syntax or invalid calendar day.
std::int32_t parse_iso_date(std::string_view s);

std::string date_to_iso(std::int32_t serial);

/// Water year per the Oct 1 - Sep 30 convention: Oct-Dec belong to the next year.
int water_year_of(std::int32_t serial);

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

struct ForcingRecord {
    std::int32_t date = 0;  // serial day
    double precip = 0.0;    // mm/day, finite and >= 0
    double pet = 0.0;       // mm/day, finite and >= 0
    double q_obs = std::numeric_limits<double>::quiet_NaN();  // mm/day, NaN = missing

    bool q_missing() const { return !(q_obs == q_obs); }
};

struct ForcingSeries {
    std::vector<ForcingRecord> records;
    std::vector<int> water_year;  // per record; spin-up blocks get synthetic tags
    std::size_t spinup_len = 0;
    bool any_q_missing = false;

    std::size_t size() const { return records.size(); }
    std::size_t native_count() const { return records.size() - spinup_len; }
};

/// Observed streamflow as a dense vector (NaN where missing).
inline std::vector<double> observed_series(const ForcingSeries& f) {
    std::vector<double> q(f.size());
    for (std::size_t t = 0; t < f.size(); ++t) q[t] = f.records[t].q_obs;
    return q;
}

enum class SubsetLabel : std::uint8_t { Train = 0, Select = 1, Test = 2, Spinup = 3 };

const char* subset_label_name(SubsetLabel l);
SubsetLabel subset_label_from_name(std::string_view s);

struct SubsetMask {
    std::vector<SubsetLabel> labels;        // one per series timestep, spin-up included
    std::array<std::size_t, 4> counts{};    // indexed by SubsetLabel
    double max_pairwise_ks = 0.0;           // objective value of the chosen assignment

    std::size_t count(SubsetLabel l) const { return counts[static_cast<std::size_t>(l)]; }
};

struct FlowGroupMask {
    std::vector<int> group;          // 1..n_groups per non-spinup step, 0 on spin-up
    std::vector<double> thresholds;  // n_groups-1 separating flow values (group upper bounds)
    int n_groups = 0;
};

struct ColumnMap {
    std::string date = "date";
    std::string precip = "precip_mm";
    std::string pet = "pet_mm";
    std::string q = "q_mm";
    char delimiter = ',';
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Ingest a delimiter-separated daily file. Missing q_obs values are allowed
/// and flagged; missing or negative precip/pet are errors.
ForcingSeries load_forcing(const std::string& path, const ColumnMap& columns = {});

/// Parse from an in-memory buffer (same contract as load_forcing).
ForcingSeries parse_forcing(std::string_view text, const ColumnMap& columns,
                            const std::string& origin);

/// Prepend `repeats` back-dated copies of the first water year.
ForcingSeries build_spinup(const ForcingSeries& series, int repeats);

/// Assign whole water years to Train/Select/Test in the given ratio, choosing
/// the assignment that minimizes the maximum pairwise two-sample KS distance
/// between subset flow distributions (seeded multi-restart hill climb).
SubsetMask split_timesteps(const ForcingSeries& series, std::array<int, 3> ratio,
                           std::uint64_t seed);

/// Equal-count flow-magnitude groups over non-spinup steps, ordered by q_obs
/// (stable in time on ties).
FlowGroupMask flow_groups(const ForcingSeries& series, const SubsetMask& mask, int n_groups);

/// Exact two-sample Kolmogorov-Smirnov distance; both inputs must be sorted.
double ks_distance(const std::vector<double>& a, const std::vector<double>& b);

/// Distinct water years over the non-spinup records, in chronological order.
std::vector<int> list_water_years(const ForcingSeries& series);

}  // namespace mcrr
