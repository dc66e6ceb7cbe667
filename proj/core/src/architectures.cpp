#include "mcrr/architectures.hpp"

#include <algorithm>
#include <unordered_map>

#include "mcrr/common.hpp"

namespace mcrr {

namespace {

constexpr const char* kSoil = "soil";
constexpr const char* kRouting = "routing";
constexpr const char* kGroundwater = "groundwater";

GateKind soil_release_kind(GatingMode mode) {
    return mode == GatingMode::Constant ? GateKind::ConstantOut : GateKind::SigmoidOut3;
}

GateKind store_release_kind(GatingMode mode) {
    return mode == GatingMode::Constant ? GateKind::ConstantOut : GateKind::SigmoidOut4;
}

NodeSpec make_soil(GatingMode mode, int out_target, int recharge_target, bool quick) {
    NodeSpec node;
    node.name = kSoil;
    node.kind = NodeKind::SoilMoisture;
    node.et_constrained = true;
    const bool constant = mode == GatingMode::Constant;
    node.gates.push_back({GateRole::Output, soil_release_kind(mode), out_target});
    if (recharge_target != kFluxOutOfSystem) {
        // In Constant mode the extra release gates reuse the primary constant,
        // keeping the reduced variant at its reference parameter count.
        node.gates.push_back(
            {GateRole::Recharge, soil_release_kind(mode), recharge_target, -1, constant});
    }
    if (quick) {
        node.gates.push_back(
            {GateRole::Quick, soil_release_kind(mode), kFluxStreamflow, -1, constant});
    }
    node.gates.push_back({GateRole::Loss, GateKind::SigmoidLoss4, kFluxOutOfSystem});
    return node;
}

NodeSpec make_store(const char* name, GatingMode mode) {
    NodeSpec node;
    node.name = name;
    node.kind = NodeKind::Store;
    node.gates.push_back({GateRole::Output, store_release_kind(mode), kFluxStreamflow});
    return node;
}

}  // namespace

GraphSpec build_graph(ArchId arch, const ArchOptions& options) {
    GraphSpec spec;
    spec.arch = arch;
    spec.options = options;
    const GatingMode mode = options.gating;
    switch (arch) {
        case ArchId::MA1:
            spec.nodes.push_back(make_soil(mode, kFluxStreamflow, kFluxOutOfSystem, false));
            break;
        case ArchId::MA2:
            spec.nodes.push_back(make_soil(mode, kFluxStreamflow, kFluxStreamflow, false));
            break;
        case ArchId::MA3:
            spec.nodes.push_back(make_soil(mode, 1, kFluxOutOfSystem, false));
            spec.nodes.push_back(make_store(kRouting, mode));
            break;
        case ArchId::MA4:
            spec.nodes.push_back(make_soil(mode, kFluxStreamflow, 1, false));
            spec.nodes.push_back(make_store(kGroundwater, mode));
            break;
        case ArchId::MA5:
            spec.nodes.push_back(make_soil(mode, 1, 2, false));
            spec.nodes.push_back(make_store(kRouting, mode));
            spec.nodes.push_back(make_store(kGroundwater, mode));
            break;
        case ArchId::MA6:
            spec.nodes.push_back(make_soil(mode, 1, 2, true));
            spec.nodes.push_back(make_store(kRouting, mode));
            spec.nodes.push_back(make_store(kGroundwater, mode));
            break;
    }

    if (options.bypass == BypassKind::BP1) {
        spec.nodes[0].gates.push_back({GateRole::Bypass, GateKind::BypassBP1, kFluxStreamflow});
    } else if (options.bypass == BypassKind::BP2) {
        spec.nodes[0].gates.push_back({GateRole::Bypass, GateKind::BypassBP2, kFluxStreamflow});
    }

    if (options.mass_relax) {
        int gw = spec.node_index(kGroundwater);
        if (gw < 0) {
            throw InvalidOption("mass relaxation requires a groundwater store (" +
                                std::string(arch_name(arch)) + " has none)");
        }
        spec.nodes[static_cast<std::size_t>(gw)].gates.push_back(
            {GateRole::MassRelax, GateKind::MassRelax, kFluxOutOfSystem});
    }

    finalize_layout(spec);
    return spec;
}

std::size_t state_count(const GraphSpec& spec) { return spec.nodes.size(); }

std::size_t terminal_path_count(const GraphSpec& spec) {
    std::size_t paths = 0;
    for (const auto& node : spec.nodes) {
        if (node.kind != NodeKind::SoilMoisture) continue;  // paths originate at soil
        for (const auto& gate : node.gates) {
            if (gate.role != GateRole::Output && gate.role != GateRole::Recharge &&
                gate.role != GateRole::Quick) {
                continue;
            }
            // Walk downstream: store nodes forward their single release.
            int target = gate.target;
            while (target >= 0) {
                const auto& next = spec.nodes[static_cast<std::size_t>(target)];
                target = kFluxOutOfSystem;
                for (const auto& g : next.gates) {
                    if (g.role == GateRole::Output) {
                        target = g.target;
                        break;
                    }
                }
            }
            if (target == kFluxStreamflow) ++paths;
        }
    }
    return paths;
}

ParamBlock init_params(const GraphSpec& spec, std::uint64_t seed) {
    ParamBlock block;
    block.values.resize(static_cast<std::size_t>(spec.total_params));
    Rng rng(seed);
    for (auto& v : block.values) v = rng.uniform_pm1();
    return block;
}

InheritResult inherit_params(const GraphSpec& child, std::span<const Lineage> parents,
                             std::uint64_t seed) {
    auto child_slots = slot_layout(child);
    std::unordered_map<std::string, int> child_index;
    child_index.reserve(child_slots.size());
    for (const auto& s : child_slots) child_index.emplace(s.key, s.index);

    InheritResult out;
    out.params.values.resize(static_cast<std::size_t>(child.total_params));
    out.inherited.assign(static_cast<std::size_t>(child.total_params), 0);

    for (const auto& lineage : parents) {
        if (lineage.graph == nullptr || lineage.params == nullptr)
            throw IncompatibleLineage("lineage entry missing graph or parameters");
        if (static_cast<int>(lineage.params->values.size()) != lineage.graph->total_params)
            throw IncompatibleLineage("parent parameter vector does not match its graph");
        for (const auto& slot : slot_layout(*lineage.graph)) {
            auto it = child_index.find(slot.key);
            if (it == child_index.end()) {
                throw IncompatibleLineage("parent slot " + slot.key +
                                          " has no counterpart in " + child.label());
            }
            auto idx = static_cast<std::size_t>(it->second);
            if (out.inherited[idx]) continue;  // first listed parent wins
            out.params.values[idx] = lineage.params->values[static_cast<std::size_t>(slot.index)];
            out.inherited[idx] = 1;
        }
    }

    Rng rng(seed);
    for (std::size_t i = 0; i < out.inherited.size(); ++i) {
        if (out.inherited[i]) {
            ++out.n_inherited;
        } else {
            out.params.values[i] = rng.uniform_pm1();
            ++out.n_fresh;
        }
    }
    return out;
}

}  // namespace mcrr
