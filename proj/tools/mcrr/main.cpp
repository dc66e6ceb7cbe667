// Command-line front end. Five batch subcommands (ingest, train, evaluate,
// simulate, report) operate on a shared artifact directory:
//
//   <output-dir>/ingest/        forcing.csv, mask.csv, summary.json
//   <output-dir>/preliminary/   cached constant-gating stages (MA1/MA3/MA4)
//   <output-dir>/runs/<model>/  run.json, seed_NN.json, selected.json
//   <output-dir>/eval/<model>/  trace.csv, report.{json,txt}, annual.csv,
//                               hydrograph_{driest,median,wettest}_{linear,log10}.csv
//   <output-dir>/sim/<model>/   trace.csv, summary.json
//
// Every artifact embeds the tool version and a hash of the resolved
// subcommand configuration. Exit status: 0 when all requested outputs were
// written, 2 when the input data itself is unusable, 1 for everything else.

#include <CLI11.hpp>

#include <algorithm>
#include <array>
#include <climits>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mcrr/architectures.hpp"
#include "mcrr/forcing.hpp"
#include "mcrr/graph.hpp"
#include "mcrr/metrics.hpp"
#include "mcrr/simulate.hpp"
#include "mcrr/train.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mcrr;

constexpr double kLogFloor = 1e-8;  // plotting floor for log-space exports

// ---------------------------------------------------------------------------
// Small file and JSON helpers
// ---------------------------------------------------------------------------

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error("cannot open " + p.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_text(const fs::path& p, std::string_view text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error("cannot open " + p.string() + " for writing");
    out << text;
    out.flush();
    if (!out) throw Error("short write: " + p.string());
}

// JSON numbers round-trip through null for non-finite values.
double jnum(const json& v) {
    return v.is_number() ? v.get<double>() : std::numeric_limits<double>::quiet_NaN();
}

std::string meta_line(const std::string& hash) {
    return std::string("mcrr ") + kToolVersion + " config " + hash;
}

/// Hash of the fully resolved option set of one subcommand (defaults
/// included), so identical invocations stamp identical artifacts.
std::string config_hash_for(const CLI::App& sub) {
    std::string text = std::string("mcrr ") + kToolVersion + "\n" + sub.get_name() + "\n";
    text += sub.config_to_str(true, false);
    return hash_hex(fnv1a(text));
}

std::vector<std::string> split_fields(std::string_view line, char delim) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(delim, start);
        if (pos == std::string_view::npos) {
            out.emplace_back(line.substr(start));
            return out;
        }
        out.emplace_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

// ---------------------------------------------------------------------------
// Option structs (one per subcommand)
// ---------------------------------------------------------------------------

struct GlobalOpts {
    std::string output_dir = "mcrr_out";
};

struct IngestOpts {
    std::string forcing;
    std::string date_col = "date";
    std::string precip_col = "precip_mm";
    std::string pet_col = "pet_mm";
    std::string q_col = "q_mm";
    std::string delimiter = ",";
    int spinup_repeats = 3;
    std::vector<int> ratio{2, 1, 1};
    std::uint64_t split_seed = 1;
    int n_groups = 5;
};

struct TrainOpts {
    std::string arch;
    std::string bypass = "none";
    bool mass_relax = false;
    std::string gating = "sigmoid";
    std::vector<std::string> parents;
    std::string label;
    std::string ingest_dir;
    bool campaign = false;
    TrainConfig cfg;
};

struct RunRefOpts {
    std::string run;
    std::string ingest_dir;
};

fs::path ingest_dir_of(const GlobalOpts& g, const std::string& override_dir) {
    return override_dir.empty() ? fs::path(g.output_dir) / "ingest" : fs::path(override_dir);
}

// ---------------------------------------------------------------------------
// Ingest artifacts
// ---------------------------------------------------------------------------

struct IngestArtifacts {
    ForcingSeries series;
    SubsetMask mask;
    FlowGroupMask groups;
    json summary;
};

int cmd_ingest(const GlobalOpts& g, const IngestOpts& o, const std::string& hash) {
    if (o.delimiter.size() != 1) throw InvalidOption("ingest: --delimiter must be one character");
    if (o.ratio.size() != 3) throw InvalidOption("ingest: --ratio takes three integers");
    ColumnMap cm;
    cm.date = o.date_col;
    cm.precip = o.precip_col;
    cm.pet = o.pet_col;
    cm.q = o.q_col;
    cm.delimiter = o.delimiter[0];

    const ForcingSeries native = load_forcing(o.forcing, cm);
    const ForcingSeries series = build_spinup(native, o.spinup_repeats);
    const SubsetMask mask =
        split_timesteps(series, {o.ratio[0], o.ratio[1], o.ratio[2]}, o.split_seed);
    const FlowGroupMask groups = flow_groups(series, mask, o.n_groups);

    const fs::path dir = fs::path(g.output_dir) / "ingest";
    fs::create_directories(dir);

    {
        std::ofstream out(dir / "forcing.csv", std::ios::binary);
        if (!out) throw Error("cannot open forcing.csv for writing");
        out << "# " << meta_line(hash) << '\n';
        out << "date,precip_mm,pet_mm,q_mm\n";
        for (const auto& r : series.records) {
            out << date_to_iso(r.date) << ',' << format17(r.precip) << ',' << format17(r.pet)
                << ',';
            if (!r.q_missing()) out << format17(r.q_obs);
            out << '\n';
        }
        out.flush();
        if (!out) throw Error("short write: forcing.csv");
    }
    {
        std::ofstream out(dir / "mask.csv", std::ios::binary);
        if (!out) throw Error("cannot open mask.csv for writing");
        out << "# " << meta_line(hash) << '\n';
        out << "date,subset,flow_group\n";
        for (std::size_t t = 0; t < series.size(); ++t) {
            out << date_to_iso(series.records[t].date) << ',' << subset_label_name(mask.labels[t])
                << ',' << groups.group[t] << '\n';
        }
        out.flush();
        if (!out) throw Error("short write: mask.csv");
    }

    std::vector<std::size_t> group_counts(static_cast<std::size_t>(groups.n_groups) + 1, 0);
    for (int gk : groups.group) group_counts[static_cast<std::size_t>(gk)]++;
    const auto years = list_water_years(series);

    json s;
    s["tool_version"] = kToolVersion;
    s["config_hash"] = hash;
    s["source"] = o.forcing;
    s["n_steps"] = series.size();
    s["native_steps"] = series.native_count();
    s["spinup_len"] = series.spinup_len;
    s["spinup_repeats"] = o.spinup_repeats;
    s["any_q_missing"] = series.any_q_missing;
    s["water_years"] = {{"first", years.front()}, {"last", years.back()}, {"count", years.size()}};
    s["split"] = {{"ratio", o.ratio},
                  {"seed", o.split_seed},
                  {"counts",
                   {{"train", mask.count(SubsetLabel::Train)},
                    {"select", mask.count(SubsetLabel::Select)},
                    {"test", mask.count(SubsetLabel::Test)},
                    {"spinup", mask.count(SubsetLabel::Spinup)}}},
                  {"max_pairwise_ks", mask.max_pairwise_ks}};
    s["flow_groups"] = {{"n_groups", groups.n_groups},
                        {"thresholds", groups.thresholds},
                        {"counts", std::vector<std::size_t>(group_counts.begin() + 1,
                                                            group_counts.end())}};
    write_text(dir / "summary.json", s.dump(2) + "\n");

    char line[256];
    std::snprintf(line, sizeof(line), "ingest: %zu native steps + %zu spin-up = %zu total",
                  series.native_count(), series.spinup_len, series.size());
    std::cout << line << '\n';
    std::snprintf(line, sizeof(line), "split:  train/select/test = %zu/%zu/%zu (max pairwise KS %.4f)",
                  mask.count(SubsetLabel::Train), mask.count(SubsetLabel::Select),
                  mask.count(SubsetLabel::Test), mask.max_pairwise_ks);
    std::cout << line << '\n';
    std::cout << "groups: " << groups.n_groups << " flow-magnitude groups, sizes";
    for (int k = 1; k <= groups.n_groups; ++k) std::cout << ' ' << group_counts[static_cast<std::size_t>(k)];
    std::cout << '\n';
    std::cout << "wrote " << dir.string() << "/{forcing.csv,mask.csv,summary.json}\n";
    return 0;
}

IngestArtifacts load_ingest(const fs::path& dir) {
    if (!fs::exists(dir / "summary.json"))
        throw Error("no ingest artifacts under " + dir.string() + " (run `mcrr ingest` first)");
    IngestArtifacts a;
    a.summary = json::parse(read_text(dir / "summary.json"));
    a.series = parse_forcing(read_text(dir / "forcing.csv"), ColumnMap{},
                             (dir / "forcing.csv").string());
    a.series.spinup_len = a.summary.at("spinup_len").get<std::size_t>();

    const std::string text = read_text(dir / "mask.csv");
    a.mask.labels.reserve(a.series.size());
    a.groups.group.reserve(a.series.size());
    std::size_t pos = 0, row = 0;
    bool header_seen = false;
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string::npos) eol = text.size();
        std::string_view line(text.data() + pos, eol - pos);
        pos = eol + 1;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty() || line.front() == '#') continue;
        if (!header_seen) {  // column header
            header_seen = true;
            continue;
        }
        const auto f = split_fields(line, ',');
        if (f.size() != 3) throw MalformedRow("mask.csv: expected 3 fields, got row '" + std::string(line) + "'");
        if (row >= a.series.size()) throw MalformedRow("mask.csv: more rows than forcing.csv");
        if (parse_iso_date(f[0]) != a.series.records[row].date)
            throw MalformedRow("mask.csv row " + std::to_string(row + 1) + ": date does not match forcing.csv");
        const SubsetLabel l = subset_label_from_name(f[1]);
        a.mask.labels.push_back(l);
        a.mask.counts[static_cast<std::size_t>(l)]++;
        a.groups.group.push_back(std::stoi(f[2]));
        ++row;
    }
    if (row != a.series.size()) throw MalformedRow("mask.csv: fewer rows than forcing.csv");

    a.mask.max_pairwise_ks = jnum(a.summary.at("split").at("max_pairwise_ks"));
    a.groups.n_groups = a.summary.at("flow_groups").at("n_groups").get<int>();
    a.groups.thresholds = a.summary.at("flow_groups").at("thresholds").get<std::vector<double>>();
    return a;
}

// ---------------------------------------------------------------------------
// Preliminary stages: cached per architecture under <out>/preliminary/
// ---------------------------------------------------------------------------

json protocol_key_json(const TrainConfig& c, const std::string& ingest_hash) {
    // Everything that changes a stage's outcome. Seeds are excluded: the
    // stage always runs single-seeded.
    return json{{"ingest", ingest_hash},
                {"epochs", c.epochs},
                {"lr_initial", c.lr_initial},
                {"lr_late", c.lr_late},
                {"lr_switch_epoch", c.lr_switch_epoch},
                {"seed_base", c.seed_base},
                {"grad_clip_norm", c.grad_clip_norm},
                {"early_stop_patience", c.early_stop_patience},
                {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}}};
}

json scaling_to_json(const ScalingSet& s) {
    json nodes = json::array();
    for (const auto& n : s.nodes) nodes.push_back({{"node", n.node}, {"mean", n.mean}, {"std", n.std}});
    return json{{"nodes", nodes},
                {"precip_max", s.precip_max},
                {"pet_mean", s.pet_mean},
                {"pet_std", s.pet_std}};
}

ScalingSet scaling_from_json(const json& j) {
    ScalingSet s;
    for (const auto& n : j.at("nodes"))
        s.nodes.push_back({n.at("node").get<std::string>(), jnum(n.at("mean")), jnum(n.at("std"))});
    s.precip_max = jnum(j.at("precip_max"));
    s.pet_mean = jnum(j.at("pet_mean"));
    s.pet_std = jnum(j.at("pet_std"));
    return s;
}

/// Load the cached constant-gating stage for `arch`, or train and cache it.
PreliminaryResult ensure_stage(ArchId arch, const IngestArtifacts& ing, const TrainConfig& base,
                               const fs::path& out_root, bool& was_cached) {
    const fs::path file = out_root / "preliminary" / (std::string(arch_name(arch)) + ".json");
    const json key = protocol_key_json(base, ing.summary.value("config_hash", ""));
    if (fs::exists(file)) {
        const json doc = json::parse(read_text(file));
        if (doc.value("key", json()) == key) {
            PreliminaryResult r;
            r.scaling = scaling_from_json(doc.at("scaling"));
            r.init_states = doc.at("init_states").get<std::vector<double>>();
            r.k_gw = jnum(doc.at("k_gw"));
            r.gw_init = jnum(doc.at("gw_init"));
            r.degenerate_nodes = doc.at("degenerate_nodes").get<std::vector<std::string>>();
            was_cached = true;
            return r;
        }
    }
    was_cached = false;
    PreliminaryResult r = preliminary_stage(arch, ing.series, ing.mask, base);
    json doc;
    doc["tool_version"] = kToolVersion;
    doc["stage"] = arch_name(arch);
    doc["key"] = key;
    doc["scaling"] = scaling_to_json(r.scaling);
    doc["init_states"] = r.init_states;
    doc["k_gw"] = r.k_gw;
    doc["gw_init"] = r.gw_init;
    doc["degenerate_nodes"] = r.degenerate_nodes;
    doc["run"] = json::parse(train_run_to_json(r.run));
    write_text(file, doc.dump(2) + "\n");
    return r;
}

struct Prepared {
    GraphSpec spec;
    std::vector<double> init_states;
};

/// Build the graph and dress it with stage-derived scalings: soil statistics
/// come from the one-node stage, routing from the serial two-node stage, and
/// groundwater (plus its initial state) from the parallel two-node stage.
Prepared prepare_model(ArchId arch, const ArchOptions& opts, const IngestArtifacts& ing,
                       const TrainConfig& cfg, const fs::path& out_root) {
    Prepared p;
    p.spec = build_graph(arch, opts);
    ScalingSet s = forcing_scaling(ing.series);
    p.init_states.assign(state_count(p.spec), 0.0);
    for (std::size_t n = 0; n < p.spec.nodes.size(); ++n) {
        const std::string& name = p.spec.nodes[n].name;
        const ArchId stage_arch = name == "soil"      ? ArchId::MA1
                                  : name == "routing" ? ArchId::MA3
                                                      : ArchId::MA4;
        bool cached = false;
        const PreliminaryResult st = ensure_stage(stage_arch, ing, cfg, out_root, cached);
        if (!cached)
            std::cout << "preliminary " << arch_name(stage_arch) << ": trained (constant gating, "
                      << cfg.epochs << " epochs)\n";
        bool found = false;
        for (const auto& ns : st.scaling.nodes) {
            if (ns.node != name) continue;
            s.nodes.push_back(ns);
            found = true;
            break;
        }
        if (!found)
            throw Error("preliminary stage " + std::string(arch_name(stage_arch)) +
                        " carries no statistics for node '" + name + "'");
        for (const auto& dn : st.degenerate_nodes)
            if (dn == name)
                std::cout << "warning: node '" << name << "' had a degenerate state trace; "
                          << "its scale fell back to 1\n";
        if (name == "groundwater") p.init_states[n] = st.gw_init;
    }
    apply_scaling(p.spec, s);
    return p;
}

// ---------------------------------------------------------------------------
// Run resolution and training
// ---------------------------------------------------------------------------

std::optional<fs::path> find_run_file(const fs::path& out_root, const std::string& token) {
    const fs::path direct(token);
    if (fs::exists(direct) && fs::is_regular_file(direct)) return direct;
    const fs::path by_label = out_root / "runs" / token / "run.json";
    if (fs::exists(by_label)) return by_label;
    return std::nullopt;
}

struct LoadedParent {
    std::string label;
    TrainRun run;
    ParamBlock best;
};

struct TrainOutcome {
    std::string label;
    bool skipped = false;
    std::uint64_t selected_seed = 0;
    double train_kge = 0.0;
    double select_kge_ss = 0.0;
    std::size_t n_inherited = 0;
    std::size_t n_fresh = 0;
};

TrainOutcome train_one(const GlobalOpts& g, const IngestArtifacts& ing, ArchId arch,
                       const ArchOptions& opts, const std::vector<std::string>& parent_tokens,
                       const TrainConfig& cfg, const std::string& label_override,
                       const std::string& hash, bool skip_existing) {
    const std::string label = label_override.empty() ? variant_label(arch, opts) : label_override;
    const fs::path dir = fs::path(g.output_dir) / "runs" / label;

    if (skip_existing && fs::exists(dir / "run.json") && fs::exists(dir / "selected.json")) {
        const json sel = json::parse(read_text(dir / "selected.json"));
        std::cout << label << ": cached (runs/" << label << ")\n";
        return {label,
                true,
                sel.value("selected_seed", std::uint64_t{0}),
                jnum(sel.at("train_kge")),
                jnum(sel.at("select_kge_ss")),
                sel.value("inherited_slots", std::size_t{0}),
                sel.value("fresh_slots", std::size_t{0})};
    }

    const Prepared prep = prepare_model(arch, opts, ing, cfg, g.output_dir);

    std::vector<LoadedParent> parents;
    parents.reserve(parent_tokens.size());
    for (const auto& tok : parent_tokens) {
        const auto f = find_run_file(g.output_dir, tok);
        if (!f) throw MissingLineage("train: parent run '" + tok + "' not found");
        LoadedParent lp;
        lp.run = read_train_run(f->string());
        lp.best.values = lp.run.best().params_final;
        lp.label = lp.run.model;
        parents.push_back(std::move(lp));
    }
    std::vector<Lineage> lineage;
    std::vector<std::string> parent_labels;
    for (const auto& p : parents) {  // parents is complete; pointers are stable now
        lineage.push_back({&p.run.graph, &p.best});
        parent_labels.push_back(p.label);
    }

    std::cout << "training " << label << ": " << prep.spec.total_params << " parameters, "
              << cfg.seeds << " seeds x " << cfg.epochs << " epochs\n";
    TrainRun run = train_multi_seed(prep.spec, ing.series, ing.mask, prep.init_states, cfg,
                                    lineage, parent_labels);
    run.model = label;

    const std::size_t n_inh =
        static_cast<std::size_t>(std::count(run.inherited.begin(), run.inherited.end(), 1));
    const std::size_t n_slots =
        run.inherited.empty() ? slot_layout(prep.spec).size() : run.inherited.size();
    const std::size_t n_fresh = n_slots - n_inh;

    fs::create_directories(dir);
    json doc = json::parse(train_run_to_json(run));
    doc["cli_config_hash"] = hash;
    write_text(dir / "run.json", doc.dump(2) + "\n");

    // One file per seed plus a selection marker.
    const json& runs_j = doc.at("runs");
    std::string selected_file;
    for (std::size_t k = 0; k < runs_j.size(); ++k) {
        json sj = runs_j[k];
        sj["model"] = label;
        sj["tool_version"] = kToolVersion;
        sj["cli_config_hash"] = hash;
        char name[24];
        std::snprintf(name, sizeof(name), "seed_%02zu.json", k + 1);
        write_text(dir / name, sj.dump(2) + "\n");
        if (static_cast<int>(k) == run.selected) selected_file = name;
    }

    const SeedRun& best = run.best();
    int seeds_ok = 0;
    for (const auto& sr : run.runs) seeds_ok += sr.ok ? 1 : 0;

    json sel;
    sel["model"] = label;
    sel["tool_version"] = kToolVersion;
    sel["cli_config_hash"] = hash;
    sel["config_hash"] = run.config_hash;
    sel["selected_index"] = run.selected;
    sel["selected_seed"] = best.seed;
    sel["seed_file"] = selected_file;
    sel["train_kge"] = best.train_kge;
    sel["select_kge"] = best.select_kge;
    sel["select_kge_ss"] = best.select_kge_ss;
    sel["inherited_slots"] = n_inh;
    sel["fresh_slots"] = n_fresh;
    sel["parents"] = run.parents;
    sel["seeds_ok"] = seeds_ok;
    sel["seeds_total"] = run.runs.size();
    write_text(dir / "selected.json", sel.dump(2) + "\n");

    char line[256];
    for (const auto& sr : run.runs) {
        if (sr.ok) {
            std::snprintf(line, sizeof(line),
                          "  seed %3llu  train KGE %+.4f  select KGE_ss %+.4f  (%.1fs)",
                          static_cast<unsigned long long>(sr.seed), sr.train_kge,
                          sr.select_kge_ss, sr.wall_seconds);
            std::cout << line << '\n';
        } else {
            std::cout << "  seed " << sr.seed << "  failed: " << sr.failure << '\n';
        }
    }
    std::snprintf(line, sizeof(line),
                  "  selected seed %llu (%zu inherited + %zu fresh slots) -> runs/%s",
                  static_cast<unsigned long long>(best.seed), n_inh, n_fresh, label.c_str());
    std::cout << line << '\n';

    return {label, false, best.seed, best.train_kge, best.select_kge_ss, n_inh, n_fresh};
}

// ---------------------------------------------------------------------------
// Campaign: the full progressive-training manifest
// ---------------------------------------------------------------------------

struct CampaignEntry {
    ArchId arch{};
    ArchOptions opts{};
    std::vector<std::string> parents;
};

/// Lineage order: base chain MA1 -> {MA2, MA3} -> MA4 -> MA5 -> MA6, then the
/// bypass variants off their base, the relaxation variant off MA5, and the
/// constant-gating benchmark (no lineage).
std::vector<CampaignEntry> campaign_manifest() {
    using A = ArchId;
    std::vector<CampaignEntry> m;
    m.push_back({A::MA1, {}, {}});
    m.push_back({A::MA2, {}, {"MA1"}});
    m.push_back({A::MA3, {}, {"MA1"}});
    m.push_back({A::MA4, {}, {"MA2"}});
    m.push_back({A::MA5, {}, {"MA2", "MA3", "MA4"}});
    m.push_back({A::MA6, {}, {"MA5"}});
    for (A a : {A::MA1, A::MA2, A::MA3, A::MA4, A::MA5, A::MA6}) {
        for (BypassKind b : {BypassKind::BP1, BypassKind::BP2}) {
            ArchOptions o;
            o.bypass = b;
            m.push_back({a, o, {arch_name(a)}});
        }
    }
    {
        ArchOptions o;
        o.mass_relax = true;
        m.push_back({A::MA5, o, {"MA5"}});
    }
    {
        ArchOptions o;
        o.gating = GatingMode::Constant;
        m.push_back({A::MA5, o, {}});
    }
    return m;
}

int cmd_campaign(const GlobalOpts& g, const IngestArtifacts& ing, const TrainConfig& cfg,
                 const std::string& hash) {
    const auto manifest = campaign_manifest();
    json entries = json::array();
    for (const auto& e : manifest) {
        const TrainOutcome out = train_one(g, ing, e.arch, e.opts, e.parents, cfg, "", hash, true);
        entries.push_back({{"model", out.label},
                           {"arch", arch_name(e.arch)},
                           {"bypass", bypass_name(e.opts.bypass)},
                           {"mass_relax", e.opts.mass_relax},
                           {"gating", gating_name(e.opts.gating)},
                           {"parents", e.parents},
                           {"status", out.skipped ? "cached" : "trained"},
                           {"run", "runs/" + out.label + "/run.json"},
                           {"selected_seed", out.selected_seed},
                           {"train_kge", out.train_kge},
                           {"select_kge_ss", out.select_kge_ss}});
    }
    json top;
    top["tool_version"] = kToolVersion;
    top["cli_config_hash"] = hash;
    top["entries"] = entries;
    write_text(fs::path(g.output_dir) / "campaign_manifest.json", top.dump(2) + "\n");
    std::cout << "campaign complete: " << manifest.size() << " models -> "
              << (fs::path(g.output_dir) / "campaign_manifest.json").string() << '\n';
    return 0;
}

int cmd_train(const GlobalOpts& g, const TrainOpts& o, const std::string& hash) {
    if (o.campaign && !o.arch.empty())
        throw InvalidOption("train: --campaign trains the full manifest; drop --arch");
    if (!o.campaign && o.arch.empty())
        throw InvalidOption("train: --arch is required without --campaign");

    const IngestArtifacts ing = load_ingest(ingest_dir_of(g, o.ingest_dir));
    if (o.campaign) return cmd_campaign(g, ing, o.cfg, hash);

    ArchOptions opts;
    opts.bypass = bypass_from_name(o.bypass);
    opts.mass_relax = o.mass_relax;
    opts.gating = gating_from_name(o.gating);
    train_one(g, ing, arch_from_name(o.arch), opts, o.parents, o.cfg, o.label, hash, false);
    return 0;
}

// ---------------------------------------------------------------------------
// Evaluate: full diagnostics plus plot-ready hydrograph exports
// ---------------------------------------------------------------------------

struct HydroYears {
    int driest = 0;
    int median = 0;
    int wettest = 0;
};

/// Rank native water years by their peak observed flow. Years with no
/// observed values are not candidates. Median is the lower median.
HydroYears pick_hydrograph_years(const ForcingSeries& f) {
    std::vector<std::pair<double, int>> peaks;
    int cur_wy = INT_MIN;
    double cur_peak = 0.0;
    bool cur_has = false;
    auto flush = [&] {
        if (cur_wy != INT_MIN && cur_has) peaks.emplace_back(cur_peak, cur_wy);
    };
    for (std::size_t t = f.spinup_len; t < f.size(); ++t) {
        if (f.water_year[t] != cur_wy) {
            flush();
            cur_wy = f.water_year[t];
            cur_peak = 0.0;
            cur_has = false;
        }
        const auto& r = f.records[t];
        if (!r.q_missing()) {
            cur_peak = cur_has ? std::max(cur_peak, r.q_obs) : r.q_obs;
            cur_has = true;
        }
    }
    flush();
    if (peaks.empty())
        throw MissingObserved("evaluate: no observed flows to rank hydrograph years");
    HydroYears hy;
    hy.driest = std::min_element(peaks.begin(), peaks.end())->second;
    hy.wettest = std::max_element(peaks.begin(), peaks.end())->second;
    std::vector<std::pair<double, int>> sorted = peaks;
    std::sort(sorted.begin(), sorted.end());
    hy.median = sorted[(sorted.size() - 1) / 2].second;
    return hy;
}

void write_hydrograph_files(const fs::path& dir, std::span<const double> sim,
                            const ForcingSeries& f, const HydroYears& hy,
                            const std::string& hash) {
    const std::array<std::pair<const char*, int>, 3> sel{
        {{"driest", hy.driest}, {"median", hy.median}, {"wettest", hy.wettest}}};
    for (const auto& [tag, wy] : sel) {
        for (const bool logspace : {false, true}) {
            const fs::path p = dir / (std::string("hydrograph_") + tag +
                                      (logspace ? "_log10" : "_linear") + ".csv");
            std::ofstream out(p, std::ios::binary);
            if (!out) throw Error("cannot open " + p.string() + " for writing");
            out << "# " << meta_line(hash) << " water_year " << wy << '\n';
            out << "date,q_obs,q_sim\n";
            for (std::size_t t = f.spinup_len; t < f.size(); ++t) {
                if (f.water_year[t] != wy) continue;
                const auto& r = f.records[t];
                out << date_to_iso(r.date) << ',';
                if (!r.q_missing()) {
                    const double qo =
                        logspace ? std::log10(std::max(r.q_obs, kLogFloor)) : r.q_obs;
                    out << format17(qo);
                }
                const double qs = logspace ? std::log10(std::max(sim[t], kLogFloor)) : sim[t];
                out << ',' << format17(qs) << '\n';
            }
            out.flush();
            if (!out) throw Error("short write: " + p.string());
        }
    }
}

int cmd_evaluate(const GlobalOpts& g, const RunRefOpts& o, const std::string& hash) {
    const auto rf = find_run_file(g.output_dir, o.run);
    if (!rf) throw Error("evaluate: run '" + o.run + "' not found");
    const TrainRun run = read_train_run(rf->string());
    const IngestArtifacts ing = load_ingest(ingest_dir_of(g, o.ingest_dir));

    const SeedRun& best = run.best();
    const SimTrace trace = simulate(run.graph, best.params_final, ing.series, run.init_states);
    DiagnosticReport rep = diagnose(trace.streamflow, ing.series, ing.mask, ing.groups);
    rep.model = run.model;
    rep.config_hash = hash;

    const fs::path dir = fs::path(g.output_dir) / "eval" / run.model;
    fs::create_directories(dir);
    write_trace_csv(trace, (dir / "trace.csv").string(), meta_line(hash));
    write_annual_csv(rep, (dir / "annual.csv").string(), meta_line(hash));

    const HydroYears hy = pick_hydrograph_years(ing.series);
    write_hydrograph_files(dir, trace.streamflow, ing.series, hy, hash);

    const MassBalance mb = mass_balance(trace, ing.series);
    json rj = json::parse(report_to_json(rep));
    rj["run_file"] = rf->string();
    rj["selected_seed"] = best.seed;
    rj["mass_balance"] = {{"inflow", mb.inflow},
                          {"streamflow", mb.streamflow},
                          {"loss", mb.loss},
                          {"exchange", mb.exchange},
                          {"storage_change", mb.storage_change},
                          {"residual", mb.residual}};
    rj["hydrograph_years"] = {{"driest", hy.driest}, {"median", hy.median}, {"wettest", hy.wettest}};
    const auto slots = slot_layout(run.graph);
    const auto con = constrained_params(run.graph, best.params_final);
    json pj = json::array();
    for (std::size_t i = 0; i < slots.size(); ++i)
        pj.push_back({{"slot", slots[i].key},
                      {"raw", best.params_final[i]},
                      {"value", con[i]}});
    rj["parameters"] = pj;
    write_text(dir / "report.json", rj.dump(2) + "\n");

    const std::string txt = report_to_text(rep);
    write_text(dir / "report.txt", txt);
    std::cout << txt;
    std::cout << "wrote " << dir.string() << '\n';
    return 0;
}

// ---------------------------------------------------------------------------
// Simulate: trace export without diagnostics
// ---------------------------------------------------------------------------

int cmd_simulate(const GlobalOpts& g, const RunRefOpts& o, const std::string& hash) {
    const auto rf = find_run_file(g.output_dir, o.run);
    if (!rf) throw Error("simulate: run '" + o.run + "' not found");
    const TrainRun run = read_train_run(rf->string());
    const IngestArtifacts ing = load_ingest(ingest_dir_of(g, o.ingest_dir));

    const SeedRun& best = run.best();
    const SimTrace trace = simulate(run.graph, best.params_final, ing.series, run.init_states);
    const MassBalance mb = mass_balance(trace, ing.series);

    const fs::path dir = fs::path(g.output_dir) / "sim" / run.model;
    fs::create_directories(dir);
    write_trace_csv(trace, (dir / "trace.csv").string(), meta_line(hash));

    json s;
    s["tool_version"] = kToolVersion;
    s["config_hash"] = hash;
    s["model"] = run.model;
    s["run_file"] = rf->string();
    s["selected_seed"] = best.seed;
    s["n_steps"] = trace.n_steps();
    s["sim_config_hash"] = trace.config_hash;
    s["gate_sum_rescales"] = trace.stats.gate_sum_rescales;
    s["mass_balance"] = {{"inflow", mb.inflow},
                         {"streamflow", mb.streamflow},
                         {"loss", mb.loss},
                         {"exchange", mb.exchange},
                         {"storage_change", mb.storage_change},
                         {"residual", mb.residual}};
    write_text(dir / "summary.json", s.dump(2) + "\n");

    char line[256];
    std::snprintf(line, sizeof(line),
                  "simulated %zu steps: inflow %.3f mm, streamflow %.3f mm, residual %.3e mm",
                  trace.n_steps(), mb.inflow, mb.streamflow, mb.residual);
    std::cout << line << '\n';
    std::cout << "wrote " << dir.string() << "/{trace.csv,summary.json}\n";
    return 0;
}

// ---------------------------------------------------------------------------
// Report: cross-model summary table
// ---------------------------------------------------------------------------

int manifest_rank(const std::string& label) {
    static const std::vector<CampaignEntry> manifest = campaign_manifest();
    for (std::size_t i = 0; i < manifest.size(); ++i)
        if (variant_label(manifest[i].arch, manifest[i].opts) == label) return static_cast<int>(i);
    return static_cast<int>(manifest.size());
}

int cmd_report(const GlobalOpts& g, const std::string& hash) {
    const fs::path runs_dir = fs::path(g.output_dir) / "runs";
    if (!fs::exists(runs_dir)) throw Error("report: no runs under " + runs_dir.string());

    struct Row {
        std::string model;
        int params = 0;
        std::size_t inh = 0, fresh = 0;
        int seeds_ok = 0, seeds = 0;
        std::uint64_t selected_seed = 0;
        double train_kge = 0.0, select_kge_ss = 0.0;
        bool has_eval = false;
        double test_kge_ss = 0.0;
        json annual_pct;
        std::vector<std::string> parents;
    };
    std::vector<Row> rows;

    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(runs_dir))
        if (e.is_directory() && fs::exists(e.path() / "run.json")) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());

    for (const auto& d : dirs) {
        const TrainRun run = read_train_run((d / "run.json").string());
        Row r;
        r.model = run.model;
        r.params = run.graph.total_params;
        r.inh = static_cast<std::size_t>(std::count(run.inherited.begin(), run.inherited.end(), 1));
        r.fresh = (run.inherited.empty() ? slot_layout(run.graph).size() : run.inherited.size()) - r.inh;
        r.seeds = static_cast<int>(run.runs.size());
        for (const auto& sr : run.runs) r.seeds_ok += sr.ok ? 1 : 0;
        const SeedRun& best = run.best();
        r.selected_seed = best.seed;
        r.train_kge = best.train_kge;
        r.select_kge_ss = best.select_kge_ss;
        r.parents = run.parents;

        const fs::path er = fs::path(g.output_dir) / "eval" / run.model / "report.json";
        if (fs::exists(er)) {
            const json rep = json::parse(read_text(er));
            for (const auto& row : rep.at("subsets")) {
                if (row.at("name") == "Test") {
                    r.has_eval = true;
                    r.test_kge_ss = jnum(row.at("kge_ss"));
                }
            }
            r.annual_pct = rep.value("annual_kge_ss_percentiles", json());
        }
        rows.push_back(std::move(r));
    }
    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
        const int ra = manifest_rank(a.model), rb = manifest_rank(b.model);
        return ra != rb ? ra < rb : a.model < b.model;
    });

    std::ostringstream txt;
    txt << "model            params  slots(inh+new)  seeds  sel   train KGE  select KGEss"
           "   test KGEss  annual KGEss worst/p50/p95\n";
    char line[320];
    for (const auto& r : rows) {
        char slots[32], annual[48], test[16];
        std::snprintf(slots, sizeof(slots), "%zu+%zu", r.inh, r.fresh);
        if (r.has_eval && r.annual_pct.is_object()) {
            std::snprintf(annual, sizeof(annual), "%.3f/%.3f/%.3f", jnum(r.annual_pct.at("worst")),
                          jnum(r.annual_pct.at("p50")), jnum(r.annual_pct.at("p95")));
        } else {
            std::snprintf(annual, sizeof(annual), "-");
        }
        if (r.has_eval)
            std::snprintf(test, sizeof(test), "%10.4f", r.test_kge_ss);
        else
            std::snprintf(test, sizeof(test), "%10s", "-");
        std::snprintf(line, sizeof(line), "%-16s %6d  %14s  %2d/%-2d  %3llu  %10.4f  %12.4f  %s  %s",
                      r.model.c_str(), r.params, slots, r.seeds_ok, r.seeds,
                      static_cast<unsigned long long>(r.selected_seed), r.train_kge,
                      r.select_kge_ss, test, annual);
        txt << line << '\n';
    }

    json doc;
    doc["tool_version"] = kToolVersion;
    doc["config_hash"] = hash;
    json jrows = json::array();
    for (const auto& r : rows) {
        json j;
        j["model"] = r.model;
        j["params"] = r.params;
        j["inherited_slots"] = r.inh;
        j["fresh_slots"] = r.fresh;
        j["parents"] = r.parents;
        j["seeds_ok"] = r.seeds_ok;
        j["seeds_total"] = r.seeds;
        j["selected_seed"] = r.selected_seed;
        j["train_kge"] = r.train_kge;
        j["select_kge_ss"] = r.select_kge_ss;
        if (r.has_eval) {
            j["test_kge_ss"] = r.test_kge_ss;
            j["annual_kge_ss_percentiles"] = r.annual_pct;
        }
        jrows.push_back(std::move(j));
    }
    doc["models"] = jrows;

    const fs::path dir = fs::path(g.output_dir) / "report";
    write_text(dir / "summary.txt", txt.str());
    write_text(dir / "summary.json", doc.dump(2) + "\n");
    std::cout << txt.str();
    std::cout << "wrote " << dir.string() << "/{summary.txt,summary.json}\n";
    return 0;
}

// ---------------------------------------------------------------------------
// Wiring
// ---------------------------------------------------------------------------

int exit_code_for(const Error& e) {
    // Status 2 marks inputs the tool cannot use; everything else is 1.
    if (dynamic_cast<const MalformedRow*>(&e) != nullptr ||
        dynamic_cast<const NonConsecutiveDates*>(&e) != nullptr ||
        dynamic_cast<const NegativeForcing*>(&e) != nullptr ||
        dynamic_cast<const IncompleteFirstYear*>(&e) != nullptr ||
        dynamic_cast<const TooFewYears*>(&e) != nullptr ||
        dynamic_cast<const MissingObserved*>(&e) != nullptr)
        return 2;
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Gated mass-balance rainfall-runoff modeling"};
    app.set_version_flag("--version", std::string("mcrr ") + kToolVersion);
    app.set_config("--config", "", "Key-value config file; command-line flags override it");
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--output-dir,-o", g.output_dir, "Artifact root directory")
        ->envname("MCRR_OUTPUT_ROOT")
        ->capture_default_str();

    IngestOpts io;
    CLI::App* ing = app.add_subcommand("ingest", "Load a daily forcing file, prepend spin-up, "
                                                 "split water years, write mask artifacts");
    ing->add_option("--forcing", io.forcing, "Delimiter-separated daily forcing file")->required();
    ing->add_option("--date-col", io.date_col, "Date column name")->capture_default_str();
    ing->add_option("--precip-col", io.precip_col, "Precipitation column name")->capture_default_str();
    ing->add_option("--pet-col", io.pet_col, "PET column name")->capture_default_str();
    ing->add_option("--q-col", io.q_col, "Observed streamflow column name")->capture_default_str();
    ing->add_option("--delimiter", io.delimiter, "Field delimiter")->capture_default_str();
    ing->add_option("--spinup-repeats", io.spinup_repeats, "Copies of the first water year to prepend")
        ->capture_default_str();
    ing->add_option("--ratio", io.ratio, "Train/select/test ratio in whole water years")
        ->expected(3)
        ->capture_default_str();
    ing->add_option("--split-seed", io.split_seed, "Seed for the split search")->capture_default_str();
    ing->add_option("--flow-groups", io.n_groups, "Number of flow-magnitude groups")
        ->capture_default_str();

    TrainOpts to;
    CLI::App* tr = app.add_subcommand("train", "Train one model (or the full campaign) on the "
                                               "ingest artifacts");
    tr->add_option("--arch", to.arch, "Architecture: MA1..MA6");
    tr->add_option("--bypass", to.bypass, "Input bypass gate: none, BP1, BP2")->capture_default_str();
    tr->add_flag("--mass-relax", to.mass_relax, "Add the groundwater mass-relaxation gate");
    tr->add_option("--gating", to.gating, "Gating mode: sigmoid or constant")->capture_default_str();
    tr->add_option("--parent", to.parents, "Parent run (label or run.json path); repeatable");
    tr->add_option("--label", to.label, "Output name override (default: the variant label)");
    tr->add_option("--ingest-dir", to.ingest_dir, "Ingest artifact directory (default <output-dir>/ingest)");
    tr->add_flag("--campaign", to.campaign, "Train the full lineage-ordered manifest");
    tr->add_option("--epochs", to.cfg.epochs, "Training epochs per seed")->capture_default_str();
    tr->add_option("--seeds", to.cfg.seeds, "Number of random initializations")->capture_default_str();
    tr->add_option("--seed-base", to.cfg.seed_base, "Seed of the first run")->capture_default_str();
    tr->add_option("--lr-initial", to.cfg.lr_initial, "Learning rate before the switch epoch")
        ->capture_default_str();
    tr->add_option("--lr-late", to.cfg.lr_late, "Learning rate after the switch epoch")
        ->capture_default_str();
    tr->add_option("--lr-switch-epoch", to.cfg.lr_switch_epoch, "Epoch at which the rate drops")
        ->capture_default_str();
    tr->add_option("--grad-clip-norm", to.cfg.grad_clip_norm, "L2 gradient clip (0 disables)")
        ->capture_default_str();
    tr->add_option("--early-stop-patience", to.cfg.early_stop_patience,
                   "Epochs without improvement before stopping (0 disables)")
        ->capture_default_str();

    RunRefOpts eo;
    CLI::App* ev = app.add_subcommand("evaluate", "Simulate a trained run and write diagnostic "
                                                  "reports and hydrograph exports");
    ev->add_option("--run", eo.run, "Run label or run.json path")->required();
    ev->add_option("--ingest-dir", eo.ingest_dir, "Ingest artifact directory (default <output-dir>/ingest)");

    RunRefOpts so;
    CLI::App* si = app.add_subcommand("simulate", "Simulate a trained run and export the state "
                                                  "and flux trace");
    si->add_option("--run", so.run, "Run label or run.json path")->required();
    si->add_option("--ingest-dir", so.ingest_dir, "Ingest artifact directory (default <output-dir>/ingest)");

    CLI::App* re = app.add_subcommand("report", "Summarize every trained run (and its evaluation, "
                                                "when present) in one table");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*ing) return cmd_ingest(g, io, config_hash_for(*ing));
        if (*tr) return cmd_train(g, to, config_hash_for(*tr));
        if (*ev) return cmd_evaluate(g, eo, config_hash_for(*ev));
        if (*si) return cmd_simulate(g, so, config_hash_for(*si));
        if (*re) return cmd_report(g, config_hash_for(*re));
    } catch (const Error& e) {
        std::cerr << "mcrr: " << e.what() << '\n';
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "mcrr: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
