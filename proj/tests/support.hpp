#pragma once

// Seeded synthetic fixtures shared across the test suites.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mcrr/architectures.hpp"
#include "mcrr/common.hpp"
#include "mcrr/forcing.hpp"

namespace testsup {

using namespace mcrr;

/// Daily forcing over whole water years (Oct 1 start, real calendar). PET
/// follows a seasonal cycle, precipitation is bursty, and q_obs (optional)
/// comes from a crude linear reservoir so it correlates with precipitation.
inline ForcingSeries synthetic_series(int first_wy, int n_years, std::uint64_t seed,
                                      bool fill_q = true) {
    ForcingSeries f;
    const std::int32_t start = parse_iso_date(std::to_string(first_wy - 1) + "-10-01");
    const std::int32_t end = parse_iso_date(std::to_string(first_wy + n_years - 1) + "-09-30");
    Rng rng(seed);
    double store = 20.0;
    for (std::int32_t d = start; d <= end; ++d) {
        ForcingRecord r;
        r.date = d;
        const double phase = 6.283185307179586 * static_cast<double>(((d % 365) + 365) % 365) / 365.0;
        r.precip = rng.uniform01() < 0.35 ? -4.0 * std::log(1.0 - rng.uniform01()) : 0.0;
        r.pet = std::max(0.05, 2.6 + 2.0 * std::sin(phase) + 0.3 * rng.uniform_pm1());
        if (fill_q) {
            store += 0.55 * r.precip;
            r.q_obs = 0.06 * store + 0.25 * r.precip;
            store *= 0.94;
        }
        f.records.push_back(r);
        f.water_year.push_back(water_year_of(d));
    }
    return f;
}

/// Calendar-free random forcing for simulation and gradient tests.
inline ForcingSeries random_forcing(std::size_t n, std::uint64_t seed, bool fill_q = true) {
    ForcingSeries f;
    Rng rng(seed);
    for (std::size_t t = 0; t < n; ++t) {
        ForcingRecord r;
        r.date = static_cast<std::int32_t>(t);
        r.precip = rng.uniform01() < 0.4 ? 12.0 * rng.uniform01() : 0.0;
        r.pet = 6.0 * rng.uniform01();
        if (fill_q) r.q_obs = 0.1 + 5.0 * rng.uniform01();
        f.records.push_back(r);
        f.water_year.push_back(water_year_of(r.date));
    }
    return f;
}

inline std::string series_to_csv(const ForcingSeries& f) {
    std::string out = "date,precip_mm,pet_mm,q_mm\n";
    for (const auto& r : f.records) {
        out += date_to_iso(r.date);
        out += ',';
        out += format17(r.precip);
        out += ',';
        out += format17(r.pet);
        out += ',';
        if (!r.q_missing()) out += format17(r.q_obs);
        out += '\n';
    }
    return out;
}

struct Variant {
    ArchId arch{};
    ArchOptions opts{};
};

/// Every legal architecture variant: 6 archs x {none,BP1,BP2} x {MR where a
/// groundwater node exists} x {Sigmoid,Constant} = 54.
inline std::vector<Variant> all_variants() {
    std::vector<Variant> v;
    for (ArchId a : {ArchId::MA1, ArchId::MA2, ArchId::MA3, ArchId::MA4, ArchId::MA5, ArchId::MA6}) {
        const bool has_gw = a == ArchId::MA4 || a == ArchId::MA5 || a == ArchId::MA6;
        for (BypassKind b : {BypassKind::None, BypassKind::BP1, BypassKind::BP2}) {
            for (int mr = 0; mr <= (has_gw ? 1 : 0); ++mr) {
                for (GatingMode gm : {GatingMode::Sigmoid, GatingMode::Constant}) {
                    ArchOptions o;
                    o.bypass = b;
                    o.mass_relax = mr == 1;
                    o.gating = gm;
                    v.push_back({a, o});
                }
            }
        }
    }
    return v;
}

}  // namespace testsup
