#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "mcrr/forcing.hpp"
#include "mcrr/gates.hpp"
#include "mcrr/graph.hpp"

namespace mcrr {

struct SimStats {
    std::size_t gate_sum_rescales = 0;  // steps where a node's release gates summed past 1
};

/// Step-indexed record of one simulation, column-oriented for CSV export.
struct SimTrace {
    std::vector<std::int32_t> dates;
    std::vector<std::string> columns;         // names parallel to series
    std::vector<std::vector<double>> series;  // [column][step]
    std::vector<double> streamflow;
    SimStats stats;
    std::string config_hash;

    std::size_t n_steps() const { return streamflow.size(); }
    int column_index(std::string_view name) const;  // -1 when absent
};

namespace detail {

template <typename T>
T lift(double v) {
    if constexpr (std::is_same_v<T, ad::Var>) {
        return ad::make_var(v);
    } else {
        return v;
    }
}

struct NullSink {
    void begin_step(std::size_t) {}
    void state_before(std::size_t, double) {}
    void state_after(std::size_t, double) {}
    void remember(std::size_t, double) {}
    void gate(std::size_t, std::size_t, double) {}
    void flux(std::size_t, std::size_t, double) {}
    void streamflow(double) {}
};

}  // namespace detail

/**
 * @brief Run the gated mass-balance graph over a forcing series.
 *
 * One pass over the record, nodes updated in declaration order (upstream
 * first), fluxes routed the same step they are released. Works on plain
 * doubles and on tape variables; Sink receives every diagnostic as double.
 * Returns per-step streamflow.
 */
template <typename T, typename Sink>
std::vector<T> run_simulation(const GraphSpec& spec, std::span<const T> params,
                              const ForcingSeries& forcing, std::span<const double> init_states,
                              SimStats* stats, Sink&& sink) {
    const std::size_t n_nodes = spec.nodes.size();
    if (init_states.size() != n_nodes)
        throw InvalidOption("initial state vector does not match node count");
    if (static_cast<int>(params.size()) != spec.total_params)
        throw ArityMismatch("parameter vector does not match graph layout");

    std::vector<T> state;
    state.reserve(n_nodes);
    for (double v : init_states) state.push_back(detail::lift<T>(v));

    const std::size_t n_steps = forcing.size();
    std::vector<T> q_out;
    q_out.reserve(n_steps);
    SimStats local;

    for (std::size_t t = 0; t < n_steps; ++t) {
        const double u = forcing.records[t].precip;
        const double pe = forcing.records[t].pet;
        const double u_scaled = u / spec.precip_max;
        const double pe_scaled = (pe - spec.pet_mean) / spec.pet_std;

        sink.begin_step(t);

        std::array<std::optional<T>, 4> inflow;
        std::optional<T> q_step;
        auto route = [&](int target, const T& flux) {
            if (target == kFluxStreamflow) {
                if (q_step) *q_step += flux; else q_step = flux;
            } else if (target >= 0) {
                auto& slot = inflow[static_cast<std::size_t>(target)];
                if (slot) *slot += flux; else slot = flux;
            }
        };

        for (std::size_t n = 0; n < n_nodes; ++n) {
            const NodeSpec& node = spec.nodes[n];
            const T x = state[n];
            const T x_scaled = (x - node.state_mean) / node.state_std;

            // Precipitation reaches the soil node, possibly split by a bypass.
            double plain_in = 0.0;
            std::optional<T> gated_in;
            if (node.kind == NodeKind::SoilMoisture) plain_in = u;

            GateContext<T> ctx;
            ctx.x_scaled = x_scaled;

            std::array<T, 4> release;
            std::array<std::size_t, 4> release_gi{};
            std::size_t n_release = 0;
            std::optional<std::size_t> mr_gi;

            for (std::size_t gi = 0; gi < node.gates.size(); ++gi) {
                const GateSpec& gate = node.gates[gi];
                const auto raw = params.subspan(static_cast<std::size_t>(gate.param_offset),
                                                static_cast<std::size_t>(gate_arity(gate.kind)));
                switch (gate.role) {
                    case GateRole::Output:
                    case GateRole::Recharge:
                    case GateRole::Quick: {
                        release[n_release] = gate_eval(gate.kind, raw, ctx);
                        release_gi[n_release] = gi;
                        ++n_release;
                        break;
                    }
                    case GateRole::Loss: {
                        if (!ctx.pe_scaled) ctx.pe_scaled = detail::lift<T>(pe_scaled);
                        const T unconstrained = gate_eval(gate.kind, raw, ctx);
                        release[n_release] = node.et_constrained
                                                 ? constrain_loss_gate(unconstrained, pe, x)
                                                 : unconstrained;
                        release_gi[n_release] = gi;
                        ++n_release;
                        break;
                    }
                    case GateRole::Bypass: {
                        if (gate.kind == GateKind::BypassBP1) {
                            auto r = bypass_bp1(raw[0], x, u);
                            route(gate.target, r.flux);
                            gated_in = u - r.flux;
                            plain_in = 0.0;
                            sink.gate(n, gi, value_of(r.gate));
                            sink.flux(n, gi, value_of(r.flux));
                        } else {
                            auto r = bypass_bp2(raw[0], raw[1], x_scaled,
                                                detail::lift<T>(u_scaled), u);
                            route(gate.target, r.bypass_flux);
                            gated_in = r.infiltrated;
                            plain_in = 0.0;
                            sink.gate(n, gi, value_of(r.gate));
                            sink.flux(n, gi, value_of(r.bypass_flux));
                        }
                        break;
                    }
                    case GateRole::MassRelax:
                        mr_gi = gi;  // needs the post-rescale remember gate
                        break;
                }
            }

            if (rescale_gate_sum(std::span<T>(release.data(), n_release)))
                ++local.gate_sum_rescales;

            // Every node carries at least one release gate by construction.
            // The loss flux gets a bitwise PET ceiling: the gate-space clamp
            // alone can overshoot by an ulp after rounding.
            auto release_flux = [&](std::size_t k) {
                const T raw_flux = release[k] * x;
                return node.et_constrained && node.gates[release_gi[k]].role == GateRole::Loss
                           ? ad::clamp_max(raw_flux, pe)
                           : raw_flux;
            };
            T out_sum = release_flux(0);
            T gate_sum = release[0];
            route(node.gates[release_gi[0]].target, out_sum);
            sink.gate(n, release_gi[0], value_of(release[0]));
            sink.flux(n, release_gi[0], value_of(out_sum));
            for (std::size_t k = 1; k < n_release; ++k) {
                const GateSpec& gate = node.gates[release_gi[k]];
                const T flux = release_flux(k);
                route(gate.target, flux);
                out_sum += flux;
                gate_sum += release[k];
                sink.gate(n, release_gi[k], value_of(release[k]));
                sink.flux(n, release_gi[k], value_of(flux));
            }

            // Rescaled gates divide by their float sum, which can land an ulp
            // past 1; the ReLU pins the remember gate at exactly 0 there.
            T remember = relu(1.0 - gate_sum);
            if (mr_gi) {
                const GateSpec& gate = node.gates[*mr_gi];
                const auto off = static_cast<std::size_t>(gate.param_offset);
                const T c_mr = node.state_mean + node.state_std * params[off + 2];
                auto r = mass_relax_flux(params[off], params[off + 1], params[off + 2], x,
                                         x_scaled, c_mr, remember);
                out_sum += r.flux;
                remember = remember - r.gate;
                sink.gate(n, *mr_gi, value_of(r.gate));
                sink.flux(n, *mr_gi, value_of(r.flux));
            }

            T drained = x - out_sum;
            if (!std::isfinite(value_of(drained)))
                throw NonFiniteState("state of node " + node.name + " became non-finite at step " +
                                     std::to_string(t));
            // The gate clamps bound every outflow by the water present only in
            // exact arithmetic; flooring here removes the residual ulp of
            // rounding so states are non-negative by construction.
            T next = relu(drained);
            if (plain_in != 0.0) next += plain_in;
            if (gated_in) next += *gated_in;
            if (inflow[n]) next += *inflow[n];

            if (!std::isfinite(value_of(next)))
                throw NonFiniteState("state of node " + node.name + " became non-finite at step " +
                                     std::to_string(t));

            sink.state_before(n, value_of(x));
            sink.state_after(n, value_of(next));
            sink.remember(n, value_of(remember));
            state[n] = next;
        }

        T qt = q_step ? *q_step : detail::lift<T>(0.0);
        if (!std::isfinite(value_of(qt)))
            throw NonFiniteState("streamflow became non-finite at step " + std::to_string(t));
        sink.streamflow(value_of(qt));
        q_out.push_back(qt);
    }

    if (stats) *stats = local;
    return q_out;
}

/// Streamflow-only simulation (no trace), double or tape-variable valued.
template <typename T>
std::vector<T> simulate_streamflow(const GraphSpec& spec, std::span<const T> params,
                                   const ForcingSeries& forcing,
                                   std::span<const double> init_states,
                                   SimStats* stats = nullptr) {
    detail::NullSink sink;
    return run_simulation(spec, params, forcing, init_states, stats, sink);
}

/// Full-diagnostic simulation: every state, gate, and flux per step.
SimTrace simulate(const GraphSpec& spec, std::span<const double> params,
                  const ForcingSeries& forcing, std::span<const double> init_states);

std::vector<double> default_init_states(const GraphSpec& spec);

/// meta, when non-empty, is written first as a "# ..." comment line.
void write_trace_csv(const SimTrace& trace, const std::string& path, std::string_view meta = {});

/// Whole-record water balance computed from a trace.
struct MassBalance {
    double inflow = 0.0;           // cumulative precipitation
    double streamflow = 0.0;       // cumulative simulated streamflow
    double loss = 0.0;             // cumulative evaporative loss
    double exchange = 0.0;         // cumulative signed environment exchange
    double storage_change = 0.0;   // final minus initial storage, all nodes
    double residual = 0.0;         // inflow - outputs - storage_change
};

MassBalance mass_balance(const SimTrace& trace, const ForcingSeries& forcing);

/// Stable fingerprint of (graph, parameters, initial states) for artifacts.
std::string sim_config_hash(const GraphSpec& spec, std::span<const double> params,
                            std::span<const double> init_states);

}  // namespace mcrr
