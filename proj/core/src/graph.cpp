#include "mcrr/graph.hpp"

#include <array>
#include <nlohmann/json.hpp>

#include "mcrr/common.hpp"

namespace mcrr {

using nlohmann::json;

const char* gate_kind_name(GateKind k) {
    switch (k) {
        case GateKind::ConstantOut: return "constant_out";
        case GateKind::SigmoidOut3: return "sigmoid_out3";
        case GateKind::SigmoidOut4: return "sigmoid_out4";
        case GateKind::SigmoidLoss4: return "sigmoid_loss4";
        case GateKind::BypassBP1: return "bypass_bp1";
        case GateKind::BypassBP2: return "bypass_bp2";
        case GateKind::MassRelax: return "mass_relax";
    }
    return "?";
}

GateKind gate_kind_from_name(std::string_view s) {
    for (auto k : {GateKind::ConstantOut, GateKind::SigmoidOut3, GateKind::SigmoidOut4,
                   GateKind::SigmoidLoss4, GateKind::BypassBP1, GateKind::BypassBP2,
                   GateKind::MassRelax}) {
        if (s == gate_kind_name(k)) return k;
    }
    throw InvalidOption("unknown gate kind: " + std::string(s));
}

std::span<const std::string_view> gate_slot_names(GateKind k) {
    using sv = std::string_view;
    static constexpr std::array<sv, 1> kConst = {"kappa"};
    static constexpr std::array<sv, 3> kOut3 = {"kappa", "slope", "bias"};
    static constexpr std::array<sv, 4> kOut4 = {"g_lo", "g_hi", "slope", "bias"};
    static constexpr std::array<sv, 4> kLoss4 = {"kappa", "slope_x", "slope_pe", "bias"};
    static constexpr std::array<sv, 1> kBp1 = {"capacity"};
    static constexpr std::array<sv, 2> kBp2 = {"slope", "bias"};
    static constexpr std::array<sv, 3> kMr = {"kappa", "slope", "center"};
    switch (k) {
        case GateKind::ConstantOut: return kConst;
        case GateKind::SigmoidOut3: return kOut3;
        case GateKind::SigmoidOut4: return kOut4;
        case GateKind::SigmoidLoss4: return kLoss4;
        case GateKind::BypassBP1: return kBp1;
        case GateKind::BypassBP2: return kBp2;
        case GateKind::MassRelax: return kMr;
    }
    return {};
}

const char* arch_name(ArchId a) {
    switch (a) {
        case ArchId::MA1: return "MA1";
        case ArchId::MA2: return "MA2";
        case ArchId::MA3: return "MA3";
        case ArchId::MA4: return "MA4";
        case ArchId::MA5: return "MA5";
        case ArchId::MA6: return "MA6";
    }
    return "?";
}

ArchId arch_from_name(std::string_view s) {
    for (auto a : {ArchId::MA1, ArchId::MA2, ArchId::MA3, ArchId::MA4, ArchId::MA5, ArchId::MA6}) {
        if (s == arch_name(a)) return a;
    }
    throw InvalidOption("unknown architecture: " + std::string(s));
}

const char* bypass_name(BypassKind b) {
    switch (b) {
        case BypassKind::None: return "none";
        case BypassKind::BP1: return "bp1";
        case BypassKind::BP2: return "bp2";
    }
    return "?";
}

BypassKind bypass_from_name(std::string_view s) {
    for (auto b : {BypassKind::None, BypassKind::BP1, BypassKind::BP2}) {
        if (s == bypass_name(b)) return b;
    }
    throw InvalidOption("unknown bypass option: " + std::string(s));
}

const char* gating_name(GatingMode g) {
    return g == GatingMode::Sigmoid ? "sigmoid" : "constant";
}

GatingMode gating_from_name(std::string_view s) {
    if (s == "sigmoid") return GatingMode::Sigmoid;
    if (s == "constant") return GatingMode::Constant;
    throw InvalidOption("unknown gating mode: " + std::string(s));
}

std::string variant_label(ArchId arch, const ArchOptions& options) {
    std::string s = arch_name(arch);
    if (options.bypass == BypassKind::BP1) s += "BP1";
    if (options.bypass == BypassKind::BP2) s += "BP2";
    if (options.mass_relax) s += "MR";
    if (options.gating == GatingMode::Constant) s += "-const";
    return s;
}

const char* gate_role_name(GateRole r) {
    switch (r) {
        case GateRole::Output: return "output";
        case GateRole::Recharge: return "recharge";
        case GateRole::Quick: return "quick";
        case GateRole::Loss: return "loss";
        case GateRole::Bypass: return "bypass";
        case GateRole::MassRelax: return "exchange";
    }
    return "?";
}

int GraphSpec::node_index(std::string_view name) const {
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (nodes[i].name == name) return static_cast<int>(i);
    }
    return -1;
}

const NodeSpec* GraphSpec::find_node(std::string_view name) const {
    int i = node_index(name);
    return i < 0 ? nullptr : &nodes[static_cast<std::size_t>(i)];
}

int finalize_layout(GraphSpec& spec) {
    int next = 0;
    for (auto& node : spec.nodes) {
        int primary_out = -1;
        for (auto& gate : node.gates) {
            if (gate.aliased) {
                if (primary_out < 0) throw InvalidOption("aliased gate precedes its primary");
                gate.param_offset = primary_out;
                continue;
            }
            gate.param_offset = next;
            if (gate.role == GateRole::Output && primary_out < 0) primary_out = gate.param_offset;
            next += gate_arity(gate.kind);
        }
    }
    spec.total_params = next;
    return next;
}

int param_count(const GraphSpec& spec) { return spec.total_params; }

std::vector<SlotInfo> slot_layout(const GraphSpec& spec) {
    std::vector<SlotInfo> out;
    out.reserve(static_cast<std::size_t>(spec.total_params));
    for (std::size_t n = 0; n < spec.nodes.size(); ++n) {
        const auto& node = spec.nodes[n];
        for (std::size_t g = 0; g < node.gates.size(); ++g) {
            const auto& gate = node.gates[g];
            if (gate.aliased) continue;
            auto names = gate_slot_names(gate.kind);
            for (int s = 0; s < gate_arity(gate.kind); ++s) {
                SlotInfo info;
                info.node = n;
                info.gate = g;
                info.slot = s;
                info.index = gate.param_offset + s;
                info.key = node.name;
                info.key += '/';
                info.key += gate_role_name(gate.role);
                info.key += '/';
                info.key += names[static_cast<std::size_t>(s)];
                out.push_back(std::move(info));
            }
        }
    }
    return out;
}

void apply_scaling(GraphSpec& spec, const ScalingSet& scaling) {
    for (const auto& ns : scaling.nodes) {
        int i = spec.node_index(ns.node);
        if (i < 0) throw InvalidOption("scaling references unknown node: " + ns.node);
        spec.nodes[static_cast<std::size_t>(i)].state_mean = ns.mean;
        spec.nodes[static_cast<std::size_t>(i)].state_std = ns.std;
    }
    spec.precip_max = scaling.precip_max;
    spec.pet_mean = scaling.pet_mean;
    spec.pet_std = scaling.pet_std;
}

std::string graph_to_json(const GraphSpec& spec) {
    json j;
    j["arch"] = arch_name(spec.arch);
    j["options"] = {{"bypass", bypass_name(spec.options.bypass)},
                    {"mass_relax", spec.options.mass_relax},
                    {"gating", gating_name(spec.options.gating)}};
    j["scaling"]["precip_max"] = spec.precip_max;
    j["scaling"]["pet_mean"] = spec.pet_mean;
    j["scaling"]["pet_std"] = spec.pet_std;
    json jnodes = json::array();
    for (const auto& node : spec.nodes) {
        json jn;
        jn["name"] = node.name;
        jn["state_mean"] = node.state_mean;
        jn["state_std"] = node.state_std;
        // The gate listing is informational; structure is rebuilt from the
        // architecture id on load.
        json jg = json::array();
        for (const auto& gate : node.gates) {
            jg.push_back({{"role", gate_role_name(gate.role)},
                          {"kind", gate_kind_name(gate.kind)},
                          {"target", gate.target},
                          {"param_offset", gate.param_offset},
                          {"aliased", gate.aliased}});
        }
        jn["gates"] = std::move(jg);
        jnodes.push_back(std::move(jn));
    }
    j["nodes"] = std::move(jnodes);
    j["total_params"] = spec.total_params;
    return j.dump(2);
}

// Defined in architectures.cpp; declared here to keep the loader in one place.
GraphSpec build_graph(ArchId arch, const ArchOptions& options);

GraphSpec graph_from_json(const std::string& text) {
    json j = json::parse(text);
    ArchOptions opt;
    opt.bypass = bypass_from_name(j.at("options").at("bypass").get<std::string>());
    opt.mass_relax = j.at("options").at("mass_relax").get<bool>();
    opt.gating = gating_from_name(j.at("options").at("gating").get<std::string>());
    GraphSpec spec = build_graph(arch_from_name(j.at("arch").get<std::string>()), opt);
    spec.precip_max = j.at("scaling").at("precip_max").get<double>();
    spec.pet_mean = j.at("scaling").at("pet_mean").get<double>();
    spec.pet_std = j.at("scaling").at("pet_std").get<double>();
    for (const auto& jn : j.at("nodes")) {
        int i = spec.node_index(jn.at("name").get<std::string>());
        if (i < 0) throw MalformedRow("graph document names unknown node");
        spec.nodes[static_cast<std::size_t>(i)].state_mean = jn.at("state_mean").get<double>();
        spec.nodes[static_cast<std::size_t>(i)].state_std = jn.at("state_std").get<double>();
    }
    return spec;
}

}  // namespace mcrr
