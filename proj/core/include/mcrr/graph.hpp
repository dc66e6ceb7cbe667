#pragma once

#include <string>
#include <vector>

#include "mcrr/gates.hpp"

namespace mcrr {

enum class ArchId : std::uint8_t { MA1, MA2, MA3, MA4, MA5, MA6 };
enum class BypassKind : std::uint8_t { None, BP1, BP2 };
enum class GatingMode : std::uint8_t { Sigmoid, Constant };

struct ArchOptions {
    BypassKind bypass = BypassKind::None;
    bool mass_relax = false;
    GatingMode gating = GatingMode::Sigmoid;
};

const char* arch_name(ArchId a);
ArchId arch_from_name(std::string_view s);
const char* bypass_name(BypassKind b);
BypassKind bypass_from_name(std::string_view s);
const char* gating_name(GatingMode g);
GatingMode gating_from_name(std::string_view s);

/// Compact display label, e.g. "MA5", "MA5BP2", "MA5MR", "MA5BP1MR-const".
std::string variant_label(ArchId arch, const ArchOptions& options);

enum class NodeKind : std::uint8_t { SoilMoisture, Store };
enum class GateRole : std::uint8_t { Output, Recharge, Quick, Loss, Bypass, MassRelax };

const char* gate_role_name(GateRole r);

/// Flux destinations: a node index, the streamflow aggregate, or out of the
/// system entirely (evaporative loss, signed environment exchange).
inline constexpr int kFluxStreamflow = -1;
inline constexpr int kFluxOutOfSystem = -2;

struct GateSpec {
    GateRole role{};
    GateKind kind{};
    int target = kFluxOutOfSystem;
    int param_offset = -1;  // filled by finalize_layout
    bool aliased = false;   // shares the primary output constant (Constant mode)
};

struct NodeSpec {
    std::string name;
    NodeKind kind{};
    bool et_constrained = false;
    std::vector<GateSpec> gates;
    double state_mean = 0.0;  // scaling of the standardized cell state
    double state_std = 1.0;
};

struct GraphSpec {
    ArchId arch{};
    ArchOptions options{};
    std::vector<NodeSpec> nodes;
    double precip_max = 1.0;  // input normalization (native record maximum)
    double pet_mean = 0.0;    // PET standardization
    double pet_std = 1.0;
    int total_params = 0;

    std::string label() const { return variant_label(arch, options); }
    int node_index(std::string_view name) const;      // -1 when absent
    const NodeSpec* find_node(std::string_view name) const;
};

/// Assign parameter offsets in declaration order; aliased gates share their
/// node's primary output offset. Returns the total parameter count.
int finalize_layout(GraphSpec& spec);

int param_count(const GraphSpec& spec);

/// One raw parameter slot, addressable by a stable identity string
/// "<node>/<role>/<slot>" that parameter inheritance matches on.
struct SlotInfo {
    std::size_t node = 0;
    std::size_t gate = 0;
    int slot = 0;
    int index = 0;  // position in the flat parameter vector
    std::string key;
};

std::vector<SlotInfo> slot_layout(const GraphSpec& spec);

struct ParamBlock {
    std::vector<double> values;
};

/// Learned normalization statistics applied to a graph before training.
struct ScalingSet {
    struct NodeScaling {
        std::string node;
        double mean = 0.0;
        double std = 1.0;
    };
    std::vector<NodeScaling> nodes;
    double precip_max = 1.0;
    double pet_mean = 0.0;
    double pet_std = 1.0;
};

void apply_scaling(GraphSpec& spec, const ScalingSet& scaling);

/// Structured-text (JSON) round trip for provenance and run files.
std::string graph_to_json(const GraphSpec& spec);
GraphSpec graph_from_json(const std::string& text);

}  // namespace mcrr
