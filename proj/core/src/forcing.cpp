#include "mcrr/forcing.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace mcrr {

namespace {

bool all_digits(std::string_view s) {
    if (s.empty()) return false;
    for (char c : s)
        if (c < '0' || c > '9') return false;
    return true;
}

int to_int(std::string_view s) {
    int v = 0;
    std::from_chars(s.data(), s.data() + s.size(), v);
    return v;
}

}  // namespace

std::int32_t parse_iso_date(std::string_view s) {
    if (s.size() != 10 || s[4] != '-' || s[7] != '-' || !all_digits(s.substr(0, 4)) ||
        !all_digits(s.substr(5, 2)) || !all_digits(s.substr(8, 2)))
        throw MalformedRow("bad ISO 8601 date: '" + std::string(s) + "'");
    const int y = to_int(s.substr(0, 4));
    const unsigned m = static_cast<unsigned>(to_int(s.substr(5, 2)));
    const unsigned d = static_cast<unsigned>(to_int(s.substr(8, 2)));
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m},
                                          std::chrono::day{d}};
    if (!ymd.ok()) throw MalformedRow("invalid calendar day: '" + std::string(s) + "'");
    return static_cast<std::int32_t>(
        std::chrono::sys_days(ymd).time_since_epoch().count());
}

std::string date_to_iso(std::int32_t serial) {
    const std::chrono::year_month_day ymd{
        std::chrono::sys_days{std::chrono::days{serial}}};
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
    return buf;
}

int water_year_of(std::int32_t serial) {
    const std::chrono::year_month_day ymd{
        std::chrono::sys_days{std::chrono::days{serial}}};
    const int y = static_cast<int>(ymd.year());
    return static_cast<unsigned>(ymd.month()) >= 10 ? y + 1 : y;
}

const char* subset_label_name(SubsetLabel l) {
    switch (l) {
        case SubsetLabel::Train: return "Train";
        case SubsetLabel::Select: return "Select";
        case SubsetLabel::Test: return "Test";
        case SubsetLabel::Spinup: return "Spinup";
    }
    return "?";
}

SubsetLabel subset_label_from_name(std::string_view s) {
    if (s == "Train") return SubsetLabel::Train;
    if (s == "Select") return SubsetLabel::Select;
    if (s == "Test") return SubsetLabel::Test;
    if (s == "Spinup") return SubsetLabel::Spinup;
    throw Error("unknown subset label: '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string_view> split_fields(std::string_view line, char delim) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
        if (i == line.size() || line[i] == delim) {
            out.push_back(line.substr(start, i - start));
            start = i + 1;
        }
    }
    return out;
}

std::string_view trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
    return s.substr(b, e - b);
}

bool is_missing_token(std::string_view s) {
    return s.empty() || s == "NA" || s == "na" || s == "NaN" || s == "nan" || s == "NULL" ||
           s == "null";
}

}  // namespace

ForcingSeries parse_forcing(std::string_view text, const ColumnMap& columns,
                            const std::string& origin) {
    ForcingSeries series;
    std::size_t pos = 0, line_no = 0;
    int idx_date = -1, idx_precip = -1, idx_pet = -1, idx_q = -1;
    bool header_seen = false;

    while (pos <= text.size()) {
        const std::size_t nl = text.find('\n', pos);
        std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.size() - pos
                                                                              : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        const auto stripped = trim(line);
        if (stripped.empty() || stripped.front() == '#') continue;

        const auto fields = split_fields(line, columns.delimiter);
        if (!header_seen) {
            for (std::size_t i = 0; i < fields.size(); ++i) {
                const auto name = trim(fields[i]);
                if (name == columns.date) idx_date = static_cast<int>(i);
                else if (name == columns.precip) idx_precip = static_cast<int>(i);
                else if (name == columns.pet) idx_pet = static_cast<int>(i);
                else if (name == columns.q) idx_q = static_cast<int>(i);
            }
            if (idx_date < 0 || idx_precip < 0 || idx_pet < 0)
                throw MalformedRow(origin + ":" + std::to_string(line_no) +
                                   ": header lacks required columns '" + columns.date + "', '" +
                                   columns.precip + "', '" + columns.pet + "'");
            header_seen = true;
            continue;
        }

        const int max_needed = std::max({idx_date, idx_precip, idx_pet, idx_q});
        if (static_cast<int>(fields.size()) <= max_needed)
            throw MalformedRow(origin + ":" + std::to_string(line_no) + ": expected at least " +
                               std::to_string(max_needed + 1) + " fields, got " +
                               std::to_string(fields.size()));

        ForcingRecord rec;
        try {
            rec.date = parse_iso_date(trim(fields[static_cast<std::size_t>(idx_date)]));
        } catch (const MalformedRow& e) {
            throw MalformedRow(origin + ":" + std::to_string(line_no) + ": " + e.what());
        }

        const auto parse_required = [&](int idx, const char* what) {
            const auto tok = trim(fields[static_cast<std::size_t>(idx)]);
            double v = 0.0;
            if (is_missing_token(tok) || !parse_double(tok, v) || !std::isfinite(v))
                throw MalformedRow(origin + ":" + std::to_string(line_no) + ": bad " +
                                   std::string(what) + " value '" + std::string(tok) + "'");
            if (v < 0.0)
                throw NegativeForcing(origin + ":" + std::to_string(line_no) + ": negative " +
                                      std::string(what) + " value " + format17(v));
            return v;
        };
        rec.precip = parse_required(idx_precip, "precipitation");
        rec.pet = parse_required(idx_pet, "pet");

        if (idx_q >= 0) {
            const auto tok = trim(fields[static_cast<std::size_t>(idx_q)]);
            if (is_missing_token(tok)) {
                series.any_q_missing = true;
            } else {
                double v = 0.0;
                if (!parse_double(tok, v))
                    throw MalformedRow(origin + ":" + std::to_string(line_no) +
                                       ": bad streamflow value '" + std::string(tok) + "'");
                if (!std::isfinite(v)) {
                    series.any_q_missing = true;
                } else {
                    if (v < 0.0)
                        throw NegativeForcing(origin + ":" + std::to_string(line_no) +
                                              ": negative streamflow value " + format17(v));
                    rec.q_obs = v;
                }
            }
        } else {
            series.any_q_missing = true;
        }

        if (!series.records.empty() && rec.date != series.records.back().date + 1)
            throw NonConsecutiveDates(origin + ":" + std::to_string(line_no) + ": date " +
                                      date_to_iso(rec.date) + " does not follow " +
                                      date_to_iso(series.records.back().date));
        series.records.push_back(rec);
        series.water_year.push_back(water_year_of(rec.date));
    }
    if (!header_seen) throw MalformedRow(origin + ": empty file");
    return series;
}

ForcingSeries load_forcing(const std::string& path, const ColumnMap& columns) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open forcing file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    return parse_forcing(text, columns, path);
}

// ---------------------------------------------------------------------------
// Spin-up construction
// ---------------------------------------------------------------------------

ForcingSeries build_spinup(const ForcingSeries& series, int repeats) {
    if (repeats < 0) throw Error("build_spinup: negative repeat count");
    if (series.spinup_len != 0) throw Error("build_spinup: series already has a spin-up prefix");
    if (repeats == 0) return series;
    if (series.records.empty()) throw IncompleteFirstYear("build_spinup: empty series");

    const int wy_first = series.water_year.front();
    std::size_t len_first = 0;
    while (len_first < series.records.size() && series.water_year[len_first] == wy_first)
        ++len_first;

    // The first water year is complete iff it starts Oct 1 and ends Sep 30;
    // gap-free dates make the day count follow automatically.
    const std::int32_t first_date = series.records.front().date;
    const std::chrono::year_month_day first_ymd{
        std::chrono::sys_days{std::chrono::days{first_date}}};
    const bool starts_oct1 = static_cast<unsigned>(first_ymd.month()) == 10 &&
                             static_cast<unsigned>(first_ymd.day()) == 1;
    if (!starts_oct1)
        throw IncompleteFirstYear("build_spinup: first water year does not begin on Oct 1");
    if (len_first == series.records.size()) {
        // Single-year series: must end Sep 30 to be complete.
        const std::chrono::year_month_day last_ymd{
            std::chrono::sys_days{std::chrono::days{series.records.back().date}}};
        if (!(static_cast<unsigned>(last_ymd.month()) == 9 &&
              static_cast<unsigned>(last_ymd.day()) == 30))
            throw IncompleteFirstYear("build_spinup: first water year is truncated");
    }

    ForcingSeries out;
    out.records.reserve(series.records.size() + static_cast<std::size_t>(repeats) * len_first);
    out.water_year.reserve(out.records.capacity());
    for (int k = 0; k < repeats; ++k) {
        const std::int32_t shift =
            static_cast<std::int32_t>((static_cast<std::size_t>(repeats - k)) * len_first);
        for (std::size_t i = 0; i < len_first; ++i) {
            ForcingRecord rec = series.records[i];
            rec.date -= shift;  // synthetic back-dating, deliberately not leap-adjusted
            out.records.push_back(rec);
            out.water_year.push_back(wy_first - (repeats - k));
        }
    }
    out.records.insert(out.records.end(), series.records.begin(), series.records.end());
    out.water_year.insert(out.water_year.end(), series.water_year.begin(),
                          series.water_year.end());
    out.spinup_len = static_cast<std::size_t>(repeats) * len_first;
    out.any_q_missing = series.any_q_missing;
    return out;
}

// ---------------------------------------------------------------------------
// Train/Select/Test splitting
// ---------------------------------------------------------------------------

double ks_distance(const std::vector<double>& a, const std::vector<double>& b) {
    const std::size_t na = a.size(), nb = b.size();
    if (na == 0 || nb == 0) throw Error("ks_distance: empty sample");
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < na && j < nb) {
        const double v = std::min(a[i], b[j]);
        while (i < na && a[i] == v) ++i;
        while (j < nb && b[j] == v) ++j;
        const double diff = std::abs(static_cast<double>(i) / static_cast<double>(na) -
                                     static_cast<double>(j) / static_cast<double>(nb));
        d = std::max(d, diff);
    }
    return d;
}

std::vector<int> list_water_years(const ForcingSeries& series) {
    std::vector<int> years;
    for (std::size_t t = series.spinup_len; t < series.size(); ++t)
        if (years.empty() || years.back() != series.water_year[t])
            years.push_back(series.water_year[t]);
    return years;
}

namespace {

/// Per-year flow samples plus the machinery to score one year->subset assignment.
struct SplitEvaluator {
    std::vector<std::vector<double>> year_q_sorted;
    std::vector<std::size_t> year_len;

    /// Max pairwise KS distance between the three subsets under `assign`.
    double eval(const std::vector<SubsetLabel>& assign) const {
        std::array<std::vector<double>, 3> subset;
        for (int s = 0; s < 3; ++s) {
            std::size_t total = 0;
            for (std::size_t y = 0; y < assign.size(); ++y)
                if (static_cast<int>(assign[y]) == s) total += year_len[y];
            subset[static_cast<std::size_t>(s)].reserve(total);
        }
        // Concatenate per-year sorted runs, then merge runs bottom-up.
        std::array<std::vector<std::size_t>, 3> bounds;
        for (std::size_t y = 0; y < assign.size(); ++y) {
            auto& dst = subset[static_cast<std::size_t>(assign[y])];
            dst.insert(dst.end(), year_q_sorted[y].begin(), year_q_sorted[y].end());
            bounds[static_cast<std::size_t>(assign[y])].push_back(dst.size());
        }
        for (int s = 0; s < 3; ++s) {
            auto& v = subset[static_cast<std::size_t>(s)];
            auto& bd = bounds[static_cast<std::size_t>(s)];
            while (bd.size() > 1) {
                std::vector<std::size_t> next;
                std::size_t lo = 0;
                for (std::size_t k = 0; k + 1 < bd.size(); k += 2) {
                    std::inplace_merge(v.begin() + static_cast<std::ptrdiff_t>(lo),
                                       v.begin() + static_cast<std::ptrdiff_t>(bd[k]),
                                       v.begin() + static_cast<std::ptrdiff_t>(bd[k + 1]));
                    next.push_back(bd[k + 1]);
                    lo = bd[k + 1];
                }
                if (bd.size() % 2 == 1) next.push_back(bd.back());
                bd = std::move(next);
            }
        }
        double worst = 0.0;
        worst = std::max(worst, ks_distance(subset[0], subset[1]));
        worst = std::max(worst, ks_distance(subset[0], subset[2]));
        worst = std::max(worst, ks_distance(subset[1], subset[2]));
        return worst;
    }
};

}  // namespace

SubsetMask split_timesteps(const ForcingSeries& series, std::array<int, 3> ratio,
                           std::uint64_t seed) {
    for (std::size_t t = series.spinup_len; t < series.size(); ++t)
        if (series.records[t].q_missing())
            throw MissingObserved("split_timesteps: q_obs missing at " +
                                  date_to_iso(series.records[t].date));

    const std::vector<int> years = list_water_years(series);
    const std::size_t n_years = years.size();
    if (n_years < 4) throw TooFewYears("split_timesteps: need at least 4 complete water years");

    // Completeness: gap-free dates mean only the two boundary years can be short.
    {
        const auto first_ymd = std::chrono::year_month_day{
            std::chrono::sys_days{std::chrono::days{series.records[series.spinup_len].date}}};
        const auto last_ymd = std::chrono::year_month_day{
            std::chrono::sys_days{std::chrono::days{series.records.back().date}}};
        if (!(static_cast<unsigned>(first_ymd.month()) == 10 &&
              static_cast<unsigned>(first_ymd.day()) == 1 &&
              static_cast<unsigned>(last_ymd.month()) == 9 &&
              static_cast<unsigned>(last_ymd.day()) == 30))
            throw Error("split_timesteps: series must cover complete water years");
    }

    const int parts = ratio[0] + ratio[1] + ratio[2];
    if (parts <= 0 || ratio[0] <= 0 || ratio[1] <= 0 || ratio[2] <= 0)
        throw Error("split_timesteps: ratio parts must be positive");
    const std::size_t n_select = n_years * static_cast<std::size_t>(ratio[1]) /
                                 static_cast<std::size_t>(parts);
    const std::size_t n_test = n_years * static_cast<std::size_t>(ratio[2]) /
                               static_cast<std::size_t>(parts);
    const std::size_t n_train = n_years - n_select - n_test;
    if (n_select == 0 || n_test == 0 || n_train == 0)
        throw TooFewYears("split_timesteps: ratio leaves an empty subset");

    // Per-year data.
    SplitEvaluator ev;
    ev.year_q_sorted.resize(n_years);
    ev.year_len.resize(n_years);
    std::vector<std::size_t> year_of_step(series.size(), 0);
    {
        std::size_t y = 0;
        for (std::size_t t = series.spinup_len; t < series.size(); ++t) {
            if (series.water_year[t] != years[y]) ++y;
            year_of_step[t] = y;
            ev.year_q_sorted[y].push_back(series.records[t].q_obs);
        }
        for (std::size_t k = 0; k < n_years; ++k) {
            std::sort(ev.year_q_sorted[k].begin(), ev.year_q_sorted[k].end());
            ev.year_len[k] = ev.year_q_sorted[k].size();
        }
    }

    // Timestep-count balancing: with whole-year blocks, subset day counts are
    // determined by how many long (leap) years each subset receives. When the
    // proportional targets are achievable we pin them, which makes the counts
    // deterministic (e.g. a 40-year daily calendar always yields 7306/3652/3652).
    const std::size_t total_days = series.native_count();
    const std::size_t min_len = *std::min_element(ev.year_len.begin(), ev.year_len.end());
    std::vector<std::size_t> long_years, short_years;
    for (std::size_t y = 0; y < n_years; ++y)
        (ev.year_len[y] > min_len ? long_years : short_years).push_back(y);
    auto leap_need = [&](std::size_t n_sub, int part) -> std::ptrdiff_t {
        const std::size_t target = total_days * static_cast<std::size_t>(part) /
                                   static_cast<std::size_t>(parts);
        return static_cast<std::ptrdiff_t>(target) -
               static_cast<std::ptrdiff_t>(n_sub * min_len);
    };
    std::ptrdiff_t need_select = leap_need(n_select, ratio[1]);
    std::ptrdiff_t need_test = leap_need(n_test, ratio[2]);
    bool counts_pinned =
        need_select >= 0 && need_test >= 0 &&
        static_cast<std::size_t>(need_select) <= std::min(n_select, long_years.size()) &&
        static_cast<std::size_t>(need_test) <= std::min(n_test, long_years.size()) &&
        static_cast<std::size_t>(need_select + need_test) <= long_years.size() &&
        long_years.size() - static_cast<std::size_t>(need_select + need_test) <= n_train;
    // Pinning assumes a two-length calendar (365/366 days); bail out otherwise.
    for (std::size_t y = 0; y < n_years && counts_pinned; ++y)
        if (ev.year_len[y] != min_len && ev.year_len[y] != min_len + 1) counts_pinned = false;

    const auto assignment_from_order = [&](const std::vector<std::size_t>& order) {
        std::vector<SubsetLabel> assign(n_years, SubsetLabel::Train);
        std::size_t taken_select = 0, taken_test = 0;
        for (std::size_t y : order) {
            if (taken_select < n_select) {
                assign[y] = SubsetLabel::Select;
                ++taken_select;
            } else if (taken_test < n_test) {
                assign[y] = SubsetLabel::Test;
                ++taken_test;
            }
        }
        return assign;
    };

    const auto random_assignment = [&](Rng& rng) {
        if (!counts_pinned) {
            std::vector<std::size_t> order(n_years);
            for (std::size_t y = 0; y < n_years; ++y) order[y] = y;
            for (std::size_t i = n_years; i > 1; --i)
                std::swap(order[i - 1], order[rng.below(i)]);
            return assignment_from_order(order);
        }
        // Draw the pinned number of long years per subset, then fill with short years.
        std::vector<std::size_t> longs = long_years, shorts = short_years;
        for (std::size_t i = longs.size(); i > 1; --i)
            std::swap(longs[i - 1], longs[rng.below(i)]);
        for (std::size_t i = shorts.size(); i > 1; --i)
            std::swap(shorts[i - 1], shorts[rng.below(i)]);
        std::vector<SubsetLabel> assign(n_years, SubsetLabel::Train);
        std::size_t li = 0, si = 0;
        for (std::ptrdiff_t k = 0; k < need_select; ++k) assign[longs[li++]] = SubsetLabel::Select;
        for (std::ptrdiff_t k = 0; k < need_test; ++k) assign[longs[li++]] = SubsetLabel::Test;
        for (std::size_t k = static_cast<std::size_t>(need_select); k < n_select; ++k)
            assign[shorts[si++]] = SubsetLabel::Select;
        for (std::size_t k = static_cast<std::size_t>(need_test); k < n_test; ++k)
            assign[shorts[si++]] = SubsetLabel::Test;
        return assign;
    };

    // Multi-restart hill climb: best of 32 seeded restarts, then first-improvement
    // swaps of equal-length year pairs (swaps never disturb pinned day counts).
    constexpr int kRestarts = 32;
    constexpr int kMaxPasses = 16;
    std::vector<SubsetLabel> best_assign;
    double best_obj = std::numeric_limits<double>::infinity();
    for (int r = 0; r < kRestarts; ++r) {
        Rng rng(seed * 1000003ull + static_cast<std::uint64_t>(r));
        auto assign = random_assignment(rng);
        const double obj = ev.eval(assign);
        if (obj < best_obj) {
            best_obj = obj;
            best_assign = std::move(assign);
        }
    }
    for (int pass = 0; pass < kMaxPasses; ++pass) {
        bool improved = false;
        for (std::size_t i = 0; i < n_years; ++i) {
            for (std::size_t j = i + 1; j < n_years; ++j) {
                if (best_assign[i] == best_assign[j]) continue;
                if (counts_pinned && ev.year_len[i] != ev.year_len[j]) continue;
                std::swap(best_assign[i], best_assign[j]);
                const double obj = ev.eval(best_assign);
                if (obj < best_obj - 1e-15) {
                    best_obj = obj;
                    improved = true;
                } else {
                    std::swap(best_assign[i], best_assign[j]);
                }
            }
        }
        if (!improved) break;
    }

    SubsetMask mask;
    mask.labels.assign(series.size(), SubsetLabel::Spinup);
    for (std::size_t t = series.spinup_len; t < series.size(); ++t)
        mask.labels[t] = best_assign[year_of_step[t]];
    for (SubsetLabel l : mask.labels) ++mask.counts[static_cast<std::size_t>(l)];
    mask.max_pairwise_ks = best_obj;
    return mask;
}

// ---------------------------------------------------------------------------
// Flow-magnitude groups
// ---------------------------------------------------------------------------

FlowGroupMask flow_groups(const ForcingSeries& series, const SubsetMask& mask, int n_groups) {
    if (n_groups < 1) throw Error("flow_groups: need at least one group");
    if (mask.labels.size() != series.size())
        throw Error("flow_groups: mask does not match series length");

    std::vector<std::size_t> steps;
    steps.reserve(series.native_count());
    for (std::size_t t = 0; t < series.size(); ++t) {
        if (mask.labels[t] == SubsetLabel::Spinup) continue;
        if (series.records[t].q_missing())
            throw MissingObserved("flow_groups: q_obs missing at " +
                                  date_to_iso(series.records[t].date));
        steps.push_back(t);
    }
    if (steps.empty()) throw Error("flow_groups: no non-spinup steps");

    // Stable sort by flow keeps ties in time order, which both makes the group
    // boundaries deterministic and preserves group monotonicity in q_obs.
    std::stable_sort(steps.begin(), steps.end(), [&](std::size_t a, std::size_t b) {
        return series.records[a].q_obs < series.records[b].q_obs;
    });

    const std::size_t n = steps.size();
    const std::size_t base = n / static_cast<std::size_t>(n_groups);
    const std::size_t rem = n % static_cast<std::size_t>(n_groups);
    if (base == 0) throw Error("flow_groups: fewer steps than groups");

    FlowGroupMask out;
    out.n_groups = n_groups;
    out.group.assign(series.size(), 0);
    std::size_t pos = 0;
    for (int g = 1; g <= n_groups; ++g) {
        const std::size_t len = base + (static_cast<std::size_t>(g) <= rem ? 1 : 0);
        for (std::size_t k = 0; k < len; ++k) out.group[steps[pos + k]] = g;
        pos += len;
        if (g < n_groups)
            out.thresholds.push_back(series.records[steps[pos - 1]].q_obs);
    }
    return out;
}

}  // namespace mcrr
