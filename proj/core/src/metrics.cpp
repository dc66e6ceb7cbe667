#include "mcrr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

namespace mcrr {

using nlohmann::json;

std::vector<std::uint32_t> subset_indices(const SubsetMask& mask, SubsetLabel label) {
    std::vector<std::uint32_t> idx;
    idx.reserve(mask.count(label));
    for (std::size_t t = 0; t < mask.labels.size(); ++t) {
        if (mask.labels[t] == label) idx.push_back(static_cast<std::uint32_t>(t));
    }
    return idx;
}

std::vector<std::uint32_t> native_indices(const SubsetMask& mask) {
    std::vector<std::uint32_t> idx;
    for (std::size_t t = 0; t < mask.labels.size(); ++t) {
        if (mask.labels[t] != SubsetLabel::Spinup) idx.push_back(static_cast<std::uint32_t>(t));
    }
    return idx;
}

std::vector<std::uint32_t> group_indices(const FlowGroupMask& groups, int group,
                                         const SubsetMask* mask, SubsetLabel label) {
    std::vector<std::uint32_t> idx;
    for (std::size_t t = 0; t < groups.group.size(); ++t) {
        if (groups.group[t] != group) continue;
        if (mask != nullptr && mask->labels[t] != label) continue;
        idx.push_back(static_cast<std::uint32_t>(t));
    }
    return idx;
}

KgeComponents kge_components(std::span<const double> sim, std::span<const double> obs,
                             std::span<const std::uint32_t> idx) {
    const auto n = idx.size();
    double mean_obs = 0.0, mean_sim = 0.0;
    for (auto i : idx) {
        mean_obs += obs[i];
        mean_sim += sim[i];
    }
    mean_obs /= static_cast<double>(n);
    mean_sim /= static_cast<double>(n);
    double var_obs = 0.0, var_sim = 0.0, cov = 0.0;
    for (auto i : idx) {
        const double ds = sim[i] - mean_sim;
        const double dob = obs[i] - mean_obs;
        var_sim += ds * ds;
        var_obs += dob * dob;
        cov += ds * dob;
    }
    var_obs /= static_cast<double>(n);
    var_sim /= static_cast<double>(n);
    cov /= static_cast<double>(n);
    detail::check_obs_moments(mean_obs, var_obs, n);

    KgeComponents k;
    k.n = n;
    k.mean_obs = mean_obs;
    k.mean_sim = mean_sim;
    k.std_obs = std::sqrt(var_obs);
    k.std_sim = std::sqrt(var_sim);
    k.alpha = k.std_sim / k.std_obs;
    k.beta = k.mean_sim / k.mean_obs;
    const bool flat_sim = k.std_sim <= 1e-12 * std::max(1.0, std::abs(k.mean_sim));
    k.gamma = flat_sim ? 0.0 : cov / (k.std_sim * k.std_obs);
    const double ed2 = (k.gamma - 1.0) * (k.gamma - 1.0) + (k.beta - 1.0) * (k.beta - 1.0) +
                       (k.alpha - 1.0) * (k.alpha - 1.0);
    k.kge = 1.0 - std::sqrt(ed2);
    k.kge_ss = kge_to_skill(k.kge);
    k.a_comp = 1.0 - std::abs(1.0 - k.alpha);
    k.b_comp = 1.0 - std::abs(1.0 - k.beta);
    return k;
}

KgeComponents kge_components(std::span<const double> sim, std::span<const double> obs) {
    std::vector<std::uint32_t> idx(sim.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<std::uint32_t>(i);
    return kge_components(sim, obs, idx);
}

AuxMetrics aux_metrics(std::span<const double> sim, std::span<const double> obs,
                       std::span<const std::uint32_t> idx) {
    const auto n = static_cast<double>(idx.size());
    double mean_obs = 0.0;
    for (auto i : idx) mean_obs += obs[i];
    mean_obs /= n;
    double sse = 0.0, sso = 0.0, sae = 0.0;
    for (auto i : idx) {
        const double e = sim[i] - obs[i];
        const double d = obs[i] - mean_obs;
        sse += e * e;
        sso += d * d;
        sae += std::abs(e);
    }
    AuxMetrics a;
    a.nse = 1.0 - sse / sso;
    a.rmse = std::sqrt(sse / n);
    a.mae = sae / n;
    return a;
}

double percentile_sorted(std::span<const double> sorted, double p) {
    if (sorted.empty()) throw Error("percentile of an empty sample");
    if (sorted.size() == 1) return sorted[0];
    const double h = p * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= sorted.size()) return sorted.back();
    const double w = h - static_cast<double>(lo);
    return sorted[lo] + w * (sorted[lo + 1] - sorted[lo]);
}

ScorePercentiles score_percentiles(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    ScorePercentiles p;
    p.worst = values.front();
    p.p5 = percentile_sorted(values, 0.05);
    p.p25 = percentile_sorted(values, 0.25);
    p.p50 = percentile_sorted(values, 0.50);
    p.p75 = percentile_sorted(values, 0.75);
    p.p95 = percentile_sorted(values, 0.95);
    return p;
}

std::vector<AnnualScore> annual_scores(std::span<const double> sim,
                                       const ForcingSeries& forcing) {
    std::vector<AnnualScore> out;
    std::vector<double> obs(forcing.size());
    for (std::size_t t = 0; t < forcing.size(); ++t) obs[t] = forcing.records[t].q_obs;

    std::size_t t = forcing.spinup_len;
    while (t < forcing.size()) {
        const int wy = forcing.water_year[t];
        std::vector<std::uint32_t> idx;
        while (t < forcing.size() && forcing.water_year[t] == wy) {
            idx.push_back(static_cast<std::uint32_t>(t));
            ++t;
        }
        AnnualScore a;
        a.water_year = wy;
        try {
            a.k = kge_components(sim, obs, idx);
        } catch (const DegenerateObserved&) {
            a.degenerate = true;
            a.k.n = idx.size();
        }
        out.push_back(a);
    }
    return out;
}

DiagnosticReport diagnose(std::span<const double> sim, const ForcingSeries& forcing,
                          const SubsetMask& mask, const FlowGroupMask& groups) {
    std::vector<double> obs(forcing.size());
    for (std::size_t t = 0; t < forcing.size(); ++t) obs[t] = forcing.records[t].q_obs;

    DiagnosticReport rep;
    rep.group_thresholds = groups.thresholds;

    auto add_row = [&](std::vector<MetricRow>& rows, std::string name,
                       const std::vector<std::uint32_t>& idx) {
        if (idx.empty()) return;
        MetricRow row;
        row.name = std::move(name);
        try {
            row.k = kge_components(sim, obs, idx);
            row.aux = aux_metrics(sim, obs, idx);
        } catch (const DegenerateObserved&) {
            row.degenerate = true;
            row.k.n = idx.size();
        }
        rows.push_back(std::move(row));
    };

    add_row(rep.subsets, "All", native_indices(mask));
    for (auto label : {SubsetLabel::Train, SubsetLabel::Select, SubsetLabel::Test}) {
        add_row(rep.subsets, subset_label_name(label), subset_indices(mask, label));
    }

    for (auto label : {SubsetLabel::Train, SubsetLabel::Select, SubsetLabel::Test}) {
        if (mask.count(label) == 0) continue;
        for (int g = 1; g <= groups.n_groups; ++g) {
            add_row(rep.flow_groups,
                    std::string(subset_label_name(label)) + "/G" + std::to_string(g),
                    group_indices(groups, g, &mask, label));
        }
    }

    rep.annual = annual_scores(sim, forcing);
    std::vector<double> skills;
    skills.reserve(rep.annual.size());
    for (const auto& a : rep.annual) {
        if (!a.degenerate) skills.push_back(a.k.kge_ss);
    }
    if (!skills.empty()) rep.annual_skill = score_percentiles(std::move(skills));
    return rep;
}

namespace {

json components_json(const KgeComponents& k) {
    return {{"kge", k.kge},         {"kge_ss", k.kge_ss},   {"gamma", k.gamma},
            {"alpha", k.alpha},     {"beta", k.beta},       {"a", k.a_comp},
            {"b", k.b_comp},        {"mean_sim", k.mean_sim}, {"mean_obs", k.mean_obs},
            {"std_sim", k.std_sim}, {"std_obs", k.std_obs}, {"n", k.n}};
}

json row_json(const MetricRow& row) {
    json j = components_json(row.k);
    j["name"] = row.name;
    j["nse"] = row.aux.nse;
    j["rmse"] = row.aux.rmse;
    j["mae"] = row.aux.mae;
    if (row.degenerate) j["degenerate"] = true;
    return j;
}

void format_cell(std::ostringstream& os, double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%10.4f", v);
    os << buf;
}

}  // namespace

std::string report_to_json(const DiagnosticReport& report) {
    json j;
    j["tool_version"] = kToolVersion;
    j["model"] = report.model;
    j["config_hash"] = report.config_hash;
    j["subsets"] = json::array();
    for (const auto& row : report.subsets) j["subsets"].push_back(row_json(row));
    j["flow_groups"] = json::array();
    for (const auto& row : report.flow_groups) j["flow_groups"].push_back(row_json(row));
    j["group_thresholds"] = report.group_thresholds;
    j["annual"] = json::array();
    for (const auto& a : report.annual) {
        json ja = components_json(a.k);
        ja["water_year"] = a.water_year;
        if (a.degenerate) ja["degenerate"] = true;
        j["annual"].push_back(std::move(ja));
    }
    j["annual_kge_ss_percentiles"] = {{"worst", report.annual_skill.worst},
                                      {"p5", report.annual_skill.p5},
                                      {"p25", report.annual_skill.p25},
                                      {"p50", report.annual_skill.p50},
                                      {"p75", report.annual_skill.p75},
                                      {"p95", report.annual_skill.p95}};
    return j.dump(2);
}

std::string report_to_text(const DiagnosticReport& report) {
    std::ostringstream os;
    os << "model: " << report.model << "\nconfig: " << report.config_hash << "\n\n";
    auto table = [&](const char* title, const std::vector<MetricRow>& rows) {
        if (rows.empty()) return;
        os << title << "\n";
        os << "  subset          n        KGE     KGE_ss      gamma      alpha       beta"
              "        NSE       RMSE        MAE\n";
        for (const auto& row : rows) {
            char head[40];
            std::snprintf(head, sizeof(head), "  %-12s %6zu", row.name.c_str(), row.k.n);
            os << head;
            for (double v : {row.k.kge, row.k.kge_ss, row.k.gamma, row.k.alpha, row.k.beta,
                             row.aux.nse, row.aux.rmse, row.aux.mae}) {
                format_cell(os, v);
            }
            os << "\n";
        }
        os << "\n";
    };
    table("subset scores", report.subsets);
    table("flow-group scores", report.flow_groups);
    if (!report.group_thresholds.empty()) {
        os << "flow-group upper bounds (mm/day):";
        for (double v : report.group_thresholds) os << ' ' << format17(v);
        os << "\n\n";
    }
    if (!report.annual.empty()) {
        os << "annual KGE_ss percentiles\n  worst";
        format_cell(os, report.annual_skill.worst);
        os << "   p5";
        format_cell(os, report.annual_skill.p5);
        os << "   p25";
        format_cell(os, report.annual_skill.p25);
        os << "   p50";
        format_cell(os, report.annual_skill.p50);
        os << "   p75";
        format_cell(os, report.annual_skill.p75);
        os << "   p95";
        format_cell(os, report.annual_skill.p95);
        os << "\n";
    }
    return os.str();
}

void write_annual_csv(const DiagnosticReport& report, const std::string& path,
                      std::string_view meta) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open annual report file: " + path);
    if (!meta.empty()) out << "# " << meta << '\n';
    out << "water_year,kge,kge_ss,gamma,alpha,beta,n\n";
    for (const auto& a : report.annual) {
        out << a.water_year << ',' << format17(a.k.kge) << ',' << format17(a.k.kge_ss) << ','
            << format17(a.k.gamma) << ',' << format17(a.k.alpha) << ',' << format17(a.k.beta)
            << ',' << a.k.n << '\n';
    }
    if (!out) throw Error("failed writing annual report file: " + path);
}

}  // namespace mcrr
