#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "mcrr/forcing.hpp"
#include "support.hpp"

using namespace mcrr;
using testsup::synthetic_series;

TEST_CASE("parse_forcing reads the canonical layout") {
    const std::string text =
        "date,precip_mm,pet_mm,q_mm\n"
        "1990-10-01,0,2.5,1.25\n"
        "1990-10-02,12.5,2.25,1.5\n"
        "1990-10-03,0.25,2,\n";
    const auto f = parse_forcing(text, {}, "mem");
    REQUIRE(f.size() == 3);
    CHECK(f.records[0].date == parse_iso_date("1990-10-01"));
    CHECK(f.records[1].precip == 12.5);
    CHECK(f.records[1].q_obs == 1.5);
    CHECK(f.records[2].q_missing());
    CHECK(f.any_q_missing);
    CHECK(f.spinup_len == 0);
    CHECK(f.native_count() == 3);
    CHECK(f.water_year == std::vector<int>{1991, 1991, 1991});
}

TEST_CASE("parse_forcing honors column remapping and delimiters") {
    ColumnMap cm;
    cm.date = "day";
    cm.precip = "P";
    cm.pet = "E";
    cm.q = "Q";
    cm.delimiter = ';';
    const std::string text =
        "station;Q;day;P;E\n"
        "leaf;0.5;2001-03-01;1;2\n"
        "leaf;NA;2001-03-02;0;2.5\n";
    const auto f = parse_forcing(text, cm, "mem");
    REQUIRE(f.size() == 2);
    CHECK(f.records[0].q_obs == 0.5);
    CHECK(f.records[0].precip == 1.0);
    CHECK(f.records[0].pet == 2.0);
    CHECK(f.records[1].q_missing());
}

TEST_CASE("parse_forcing skips comments and blank lines") {
    const std::string text =
        "# produced by an earlier run\n"
        "\n"
        "date,precip_mm,pet_mm,q_mm\n"
        "# midstream comment\n"
        "1990-10-01,1,2,3\n";
    CHECK(parse_forcing(text, {}, "mem").size() == 1);
}

TEST_CASE("parse_forcing accepts every missing-streamflow token") {
    for (const char* tok : {"", "NA", "na", "NaN", "nan", "NULL", "null"}) {
        const std::string text = std::string("date,precip_mm,pet_mm,q_mm\n1990-10-01,1,2,") + tok + "\n";
        const auto f = parse_forcing(text, {}, "mem");
        CHECK(f.records[0].q_missing());
        CHECK(f.any_q_missing);
    }
}

TEST_CASE("parse_forcing rejects structurally broken input") {
    const char* header = "date,precip_mm,pet_mm,q_mm\n";
    CHECK_THROWS_AS(parse_forcing("", {}, "mem"), MalformedRow);
    CHECK_THROWS_AS(parse_forcing("date,rain\n", {}, "mem"), MalformedRow);
    CHECK_THROWS_AS(parse_forcing(std::string(header) + "1990-10-01,1\n", {}, "mem"), MalformedRow);
    CHECK_THROWS_AS(parse_forcing(std::string(header) + "199x-10-01,1,2,3\n", {}, "mem"), MalformedRow);
    CHECK_THROWS_AS(parse_forcing(std::string(header) + "1990-10-01,zero,2,3\n", {}, "mem"), MalformedRow);
    CHECK_THROWS_AS(parse_forcing(std::string(header) + "1990-10-01,1,,3\n", {}, "mem"), MalformedRow);
    CHECK_THROWS_AS(parse_forcing(std::string(header) + "1990-10-01,-1,2,3\n", {}, "mem"),
                    NegativeForcing);
    CHECK_THROWS_AS(parse_forcing(std::string(header) + "1990-10-01,1,2,-3\n", {}, "mem"),
                    NegativeForcing);
    CHECK_THROWS_AS(
        parse_forcing(std::string(header) + "1990-10-01,1,2,3\n1990-10-03,1,2,3\n", {}, "mem"),
        NonConsecutiveDates);
    CHECK_THROWS_AS(
        parse_forcing(std::string(header) + "1990-10-01,1,2,3\n1990-10-01,1,2,3\n", {}, "mem"),
        NonConsecutiveDates);
}

TEST_CASE("parse_forcing diagnostics carry origin and line number") {
    const std::string text = "date,precip_mm,pet_mm,q_mm\n1990-10-01,1,2,3\n1990-10-02,bad,2,3\n";
    try {
        parse_forcing(text, {}, "leaf.csv");
        FAIL("expected MalformedRow");
    } catch (const MalformedRow& e) {
        const std::string msg = e.what();
        CHECK(msg.find("leaf.csv:3") != std::string::npos);
    }
}

TEST_CASE("build_spinup prepends back-dated copies of the first water year") {
    const auto native = synthetic_series(1990, 2, 301);
    REQUIRE(native.size() == 730);  // WY1990-91, no leap days
    const auto spun = build_spinup(native, 3);
    REQUIRE(spun.size() == 730 + 3 * 365);
    CHECK(spun.spinup_len == 1095);
    CHECK(spun.native_count() == 730);

    // Dates stay gap-free and the native block is untouched.
    for (std::size_t t = 1; t < spun.size(); ++t)
        CHECK(spun.records[t].date == spun.records[t - 1].date + 1);
    for (std::size_t t = 0; t < native.size(); ++t) {
        CHECK(spun.records[1095 + t].date == native.records[t].date);
        CHECK(spun.records[1095 + t].q_obs == native.records[t].q_obs);
    }
    // Spin-up blocks copy year one and carry synthetic year tags.
    for (int k = 0; k < 3; ++k) {
        for (std::size_t i = 0; i < 365; ++i) {
            const auto& copy = spun.records[static_cast<std::size_t>(k) * 365 + i];
            CHECK(copy.precip == native.records[i].precip);
            CHECK(copy.pet == native.records[i].pet);
            CHECK(copy.q_obs == native.records[i].q_obs);
            CHECK(spun.water_year[static_cast<std::size_t>(k) * 365 + i] == 1990 - (3 - k));
        }
    }
}

TEST_CASE("build_spinup edge cases") {
    const auto native = synthetic_series(1990, 2, 301);
    CHECK(build_spinup(native, 0).size() == native.size());
    CHECK_THROWS_AS(build_spinup(native, -1), Error);
    CHECK_THROWS_AS(build_spinup(build_spinup(native, 1), 1), Error);

    // A series that does not start on Oct 1 has no complete first water year.
    const std::string text =
        "date,precip_mm,pet_mm,q_mm\n"
        "1990-01-01,1,2,3\n"
        "1990-01-02,1,2,3\n";
    CHECK_THROWS_AS(build_spinup(parse_forcing(text, {}, "mem"), 3), IncompleteFirstYear);
}

TEST_CASE("split_timesteps produces pinned whole-year blocks") {
    const auto series = build_spinup(synthetic_series(1949, 8, 77), 3);
    const auto mask = split_timesteps(series, {2, 1, 1}, 5);

    // WY1949-56 has two leap years; pinning puts both in the train subset.
    CHECK(mask.count(SubsetLabel::Train) == 1462);
    CHECK(mask.count(SubsetLabel::Select) == 730);
    CHECK(mask.count(SubsetLabel::Test) == 730);
    CHECK(mask.count(SubsetLabel::Spinup) == series.spinup_len);
    CHECK(mask.labels.size() == series.size());
    CHECK(mask.max_pairwise_ks > 0.0);
    CHECK(mask.max_pairwise_ks <= 1.0);

    // Year-block property: every step of a water year shares one label.
    for (std::size_t t = series.spinup_len + 1; t < series.size(); ++t)
        if (series.water_year[t] == series.water_year[t - 1])
            CHECK(mask.labels[t] == mask.labels[t - 1]);
    // Spin-up steps are labeled exactly Spinup.
    for (std::size_t t = 0; t < series.spinup_len; ++t)
        CHECK(mask.labels[t] == SubsetLabel::Spinup);
}

TEST_CASE("split_timesteps is deterministic in its seed") {
    const auto series = build_spinup(synthetic_series(1949, 8, 78), 3);
    const auto a = split_timesteps(series, {2, 1, 1}, 5);
    const auto b = split_timesteps(series, {2, 1, 1}, 5);
    CHECK(a.labels == b.labels);
    CHECK(a.max_pairwise_ks == b.max_pairwise_ks);
}

TEST_CASE("split_timesteps rejects unusable input") {
    auto series = build_spinup(synthetic_series(1949, 8, 79), 3);
    series.records[series.spinup_len + 10].q_obs = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(split_timesteps(series, {2, 1, 1}, 5), MissingObserved);

    const auto tiny = synthetic_series(1949, 3, 80);
    CHECK_THROWS_AS(split_timesteps(tiny, {2, 1, 1}, 5), TooFewYears);

    const auto ok = synthetic_series(1949, 8, 81);
    CHECK_THROWS_AS(split_timesteps(ok, {0, 1, 1}, 5), Error);
}

TEST_CASE("split_timesteps allows missing q_obs inside the spin-up block") {
    auto series = build_spinup(synthetic_series(1949, 8, 82), 3);
    series.records[5].q_obs = std::numeric_limits<double>::quiet_NaN();
    series.any_q_missing = true;
    CHECK_NOTHROW(split_timesteps(series, {2, 1, 1}, 5));
}

TEST_CASE("flow_groups partitions non-spinup steps into near-equal monotone groups") {
    const auto series = build_spinup(synthetic_series(1949, 8, 83), 3);
    const auto mask = split_timesteps(series, {2, 1, 1}, 5);
    const auto groups = flow_groups(series, mask, 5);

    REQUIRE(groups.n_groups == 5);
    REQUIRE(groups.group.size() == series.size());
    REQUIRE(groups.thresholds.size() == 4);

    std::vector<std::size_t> counts(6, 0);
    for (std::size_t t = 0; t < series.size(); ++t) {
        if (mask.labels[t] == SubsetLabel::Spinup) {
            CHECK(groups.group[t] == 0);
        } else {
            REQUIRE(groups.group[t] >= 1);
            REQUIRE(groups.group[t] <= 5);
            counts[static_cast<std::size_t>(groups.group[t])]++;
        }
    }
    // 2922 native steps over 5 groups: remainder days land in the low groups.
    CHECK(counts[1] == 585);
    CHECK(counts[2] == 585);
    CHECK(counts[3] == 584);
    CHECK(counts[4] == 584);
    CHECK(counts[5] == 584);

    // Group monotonicity in observed flow.
    for (std::size_t t1 = series.spinup_len; t1 < series.size(); t1 += 7) {
        for (std::size_t t2 = series.spinup_len; t2 < series.size(); t2 += 11) {
            if (series.records[t1].q_obs < series.records[t2].q_obs)
                CHECK(groups.group[t1] <= groups.group[t2]);
        }
    }
    CHECK(std::is_sorted(groups.thresholds.begin(), groups.thresholds.end()));
    // Thresholds are group maxima: no member of group g exceeds threshold g.
    for (std::size_t t = series.spinup_len; t < series.size(); ++t) {
        const int gk = groups.group[t];
        if (gk < 5) CHECK(series.records[t].q_obs <= groups.thresholds[static_cast<std::size_t>(gk - 1)]);
        if (gk > 1) CHECK(series.records[t].q_obs >= groups.thresholds[static_cast<std::size_t>(gk - 2)]);
    }
}

TEST_CASE("flow_groups rejects missing flows and oversized group counts") {
    auto series = build_spinup(synthetic_series(1949, 8, 84), 3);
    const auto mask = split_timesteps(series, {2, 1, 1}, 5);
    series.records[series.spinup_len + 3].q_obs = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(flow_groups(series, mask, 5), MissingObserved);

    const auto ok = build_spinup(synthetic_series(1949, 8, 84), 3);
    const auto m2 = split_timesteps(ok, {2, 1, 1}, 5);
    CHECK_THROWS_AS(flow_groups(ok, m2, 0), Error);
    CHECK_THROWS_AS(flow_groups(ok, m2, 100000), Error);
}

TEST_CASE("ks_distance matches the exact two-sample statistic") {
    const std::vector<double> a{0.1, 0.4, 0.7, 1.2, 1.9};
    const std::vector<double> b{0.2, 0.5, 0.9, 1.0, 2.5, 3.1};
    CHECK(ks_distance(a, b) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(ks_distance(a, a) == 0.0);
    const std::vector<double> lo{1.0, 2.0}, hi{10.0, 11.0};
    CHECK(ks_distance(lo, hi) == 1.0);
    CHECK_THROWS_AS(ks_distance({}, a), Error);
}

TEST_CASE("ks_distance agrees with a brute-force evaluation") {
    Rng rng(55);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<double> a(40), b(60);
        for (auto& v : a) v = rng.uniform(0.0, 3.0);
        for (auto& v : b) v = rng.uniform(0.5, 3.5);
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        double brute = 0.0;
        std::vector<double> grid;
        grid.insert(grid.end(), a.begin(), a.end());
        grid.insert(grid.end(), b.begin(), b.end());
        for (double x : grid) {
            const auto fa = static_cast<double>(std::upper_bound(a.begin(), a.end(), x) - a.begin()) /
                            static_cast<double>(a.size());
            const auto fb = static_cast<double>(std::upper_bound(b.begin(), b.end(), x) - b.begin()) /
                            static_cast<double>(b.size());
            brute = std::max(brute, std::abs(fa - fb));
        }
        CHECK(ks_distance(a, b) == doctest::Approx(brute).epsilon(1e-12));
    }
}

TEST_CASE("list_water_years and observed_series cover the native record") {
    const auto series = build_spinup(synthetic_series(1960, 5, 85), 2);
    const auto years = list_water_years(series);
    CHECK(years == std::vector<int>{1960, 1961, 1962, 1963, 1964});
    const auto q = observed_series(series);
    REQUIRE(q.size() == series.size());
    CHECK(q[series.spinup_len] == series.records[series.spinup_len].q_obs);
}
