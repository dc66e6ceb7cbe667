#pragma once

#include <cstdint>
#include <span>
#include <utility>

#include "mcrr/graph.hpp"

namespace mcrr {

/// Construct the node/gate graph for one architecture variant. Throws
/// InvalidOption for combinations the family does not define (mass relaxation
/// without a groundwater store).
GraphSpec build_graph(ArchId arch, const ArchOptions& options = {});

/// Number of model states (one per node).
std::size_t state_count(const GraphSpec& spec);

/// Terminal flow paths: release gates whose flux reaches streamflow, directly
/// or through downstream stores. Bypass edges are not counted.
std::size_t terminal_path_count(const GraphSpec& spec);

/// Fresh parameter vector, every raw slot drawn uniformly from [-1, 1).
ParamBlock init_params(const GraphSpec& spec, std::uint64_t seed);

struct Lineage {
    const GraphSpec* graph = nullptr;
    const ParamBlock* params = nullptr;
};

struct InheritResult {
    ParamBlock params;
    std::vector<std::uint8_t> inherited;  // per slot, 1 = copied from a parent
    std::size_t n_inherited = 0;
    std::size_t n_fresh = 0;
};

/// Seed a child parameter vector from trained parents. Every parent slot must
/// exist in the child (IncompatibleLineage otherwise); child slots no parent
/// provides are drawn fresh from the seeded stream. When several parents carry
/// the same slot the first listed wins.
InheritResult inherit_params(const GraphSpec& child, std::span<const Lineage> parents,
                             std::uint64_t seed);

}  // namespace mcrr
