#pragma once

#include <array>
#include <optional>
#include <span>
#include <string_view>

#include "mcrr/autodiff.hpp"
#include "mcrr/common.hpp"

namespace mcrr {

using ad::relu;
using ad::sigmoid;
using ad::value_of;

// Pull in the double overloads so unqualified calls below resolve for both
// scalar types (the Var overloads are found through argument lookup).
using std::abs;
using std::exp;
using std::sqrt;
using std::tanh;

enum class GateKind : std::uint8_t {
    ConstantOut,  // logistic(raw)
    SigmoidOut3,  // kappa * sigmoid(a*X~ + b)
    SigmoidOut4,  // g_lo + (g_hi - g_lo) * sigmoid(a*X~ + b)
    SigmoidLoss4, // kappa * sigmoid(a_x*X~ + a_pe*PE~ + b)
    BypassBP1,    // capacity-threshold input bypass
    BypassBP2,    // sigmoid input bypass on (X~ + U~)
    MassRelax,    // signed exchange gate on a store node
};

constexpr int gate_arity(GateKind k) {
    switch (k) {
        case GateKind::ConstantOut: return 1;
        case GateKind::SigmoidOut3: return 3;
        case GateKind::SigmoidOut4: return 4;
        case GateKind::SigmoidLoss4: return 4;
        case GateKind::BypassBP1: return 1;
        case GateKind::BypassBP2: return 2;
        case GateKind::MassRelax: return 3;
    }
    return 0;
}

const char* gate_kind_name(GateKind k);
GateKind gate_kind_from_name(std::string_view s);

/// Raw parameter slot names, in storage order.
std::span<const std::string_view> gate_slot_names(GateKind k);

/// Capacity scale constant of the BP1 bypass (fixed hyperparameter).
inline constexpr double kBp1CapacityScale = 500.0;

/// Division guard for the BP1 gate: zero precipitation carries zero bypass mass.
inline constexpr double kBp1PrecipEps = 1e-12;

// ---------------------------------------------------------------------------
// Scaled context signals a gate may read. Absent signals are reported through
// MissingContext so wiring mistakes fail loudly instead of reading garbage.
// ---------------------------------------------------------------------------

template <typename T>
struct GateContext {
    std::optional<T> x_scaled;   // standardized cell state of the owning node
    std::optional<T> pe_scaled;  // standardized potential evapotranspiration
    std::optional<T> u_scaled;   // precipitation normalized by the record maximum
};

namespace detail {
template <typename T>
const T& require(const std::optional<T>& sig, const char* name) {
    if (!sig) throw MissingContext(std::string("gate context lacks signal ") + name);
    return *sig;
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Gate formulas at constrained parameter values. Kept separate from the raw
// constraint transforms so each layer is testable on its own.
// ---------------------------------------------------------------------------

template <typename T>
T gate_formula_out3(T kappa, T a, T b, T x_scaled) {
    return kappa * sigmoid(a * x_scaled + b);
}

template <typename T>
T gate_formula_out4(T g_lo, T g_hi, T a, T b, T x_scaled) {
    return g_lo + (g_hi - g_lo) * sigmoid(a * x_scaled + b);
}

template <typename T>
T gate_formula_loss4(T kappa, T a_x, T a_pe, T b, T x_scaled, T pe_scaled) {
    return kappa * sigmoid(a_x * x_scaled + a_pe * pe_scaled + b);
}

template <typename T>
T gate_formula_bp2(T a, T b, T x_scaled, T u_scaled) {
    return sigmoid(b + a * (x_scaled + u_scaled));
}

// ---------------------------------------------------------------------------
// Constraint transforms raw -> constrained, in slot order.
//   saturations (kappa, g_lo) and ConstantOut values: logistic, so (0,1)
//   floor/ceiling pair: g_hi = g_lo + (1-g_lo)*logistic(raw), so g_lo <= g_hi
//   slopes that must stay positive: exponential
//   biases and the BP2 pair: identity (unconstrained)
// ---------------------------------------------------------------------------

template <typename T>
T gate_eval(GateKind kind, std::span<const T> raw, const GateContext<T>& ctx) {
    if (static_cast<int>(raw.size()) != gate_arity(kind))
        throw ArityMismatch(std::string("gate ") + gate_kind_name(kind) + " expects " +
                            std::to_string(gate_arity(kind)) + " raw parameters, got " +
                            std::to_string(raw.size()));
    switch (kind) {
        case GateKind::ConstantOut:
            return sigmoid(raw[0]);
        case GateKind::SigmoidOut3:
            return gate_formula_out3(sigmoid(raw[0]), exp(raw[1]), raw[2],
                                     detail::require(ctx.x_scaled, "X~"));
        case GateKind::SigmoidOut4: {
            const T g_lo = sigmoid(raw[0]);
            const T g_hi = g_lo + (1.0 - g_lo) * sigmoid(raw[1]);
            return gate_formula_out4(g_lo, g_hi, exp(raw[2]), raw[3],
                                     detail::require(ctx.x_scaled, "X~"));
        }
        case GateKind::SigmoidLoss4:
            return gate_formula_loss4(sigmoid(raw[0]), exp(raw[1]), exp(raw[2]), raw[3],
                                      detail::require(ctx.x_scaled, "X~"),
                                      detail::require(ctx.pe_scaled, "PE~"));
        case GateKind::BypassBP2:
            return gate_formula_bp2(raw[0], raw[1], detail::require(ctx.x_scaled, "X~"),
                                    detail::require(ctx.u_scaled, "U~"));
        case GateKind::BypassBP1:
        case GateKind::MassRelax:
            throw MissingContext(std::string("gate ") + gate_kind_name(kind) +
                                 " needs unscaled node state; use its dedicated operation");
    }
    throw Error("gate_eval: unknown gate kind");
}

/**
 * @brief Physically constrained loss gate: resulting loss flux never exceeds PET.
 *
 * Returns g_loss - ReLU(g_loss - pet/state). Skipped at state <= 0, where the
 * flux is zero regardless and the ratio would be undefined.
 */
template <typename T>
T constrain_loss_gate(T g_loss, double pet, T state) {
    if (value_of(state) <= 0.0) return g_loss;
    return g_loss - relu(g_loss - pet / state);
}

template <typename T>
struct Bp1Result {
    T gate;  // bypassed fraction of precipitation, in [0,1]
    T flux;  // bypass flux, mm/day
};

/**
 * @brief Capacity-threshold input bypass.
 *
 * Capacity = w_s * exp(raw_theta). The bypass flux is capped at the incoming
 * precipitation: mid-training capacity shrinks can leave state above capacity,
 * and without the cap the node would receive negative infiltration.
 */
template <typename T>
Bp1Result<T> bypass_bp1(T raw_theta, T state, double precip,
                        double w_s = kBp1CapacityScale) {
    if (precip <= kBp1PrecipEps) {
        const T zero = state * 0.0;
        return {zero, zero};
    }
    const T capacity = w_s * exp(raw_theta);
    const T excess = relu(state - capacity + precip);
    const T flux = precip - relu(precip - excess);
    return {flux / precip, flux};
}

template <typename T>
struct BypassSplit {
    T gate;          // bypassed fraction
    T bypass_flux;   // gate * precip
    T infiltrated;   // (1 - gate) * precip
};

/// Sigmoid input bypass; bypassed water leaves as direct runoff, the rest infiltrates.
template <typename T>
BypassSplit<T> bypass_bp2(T raw_a, T raw_b, T x_scaled, T u_scaled, double precip) {
    const T gate = gate_formula_bp2(raw_a, raw_b, x_scaled, u_scaled);
    return {gate, gate * precip, (1.0 - gate) * precip};
}

template <typename T>
struct MassRelaxResult {
    T gate;  // signed, in (-1,1); positive values release mass to the environment
    T flux;  // gate * |state - c|, mm/day; negative values are inflows
};

/**
 * @brief Signed exchange flux of a store node around its equilibrium state.
 *
 * The learned gate f = kappa*tanh(a*(X^ - c~)) is clamped against the node's
 * pre-exchange remember gate so an outflow can never exceed the water present;
 * inflows (negative f) are never clamped. c_mr is the equilibrium in state
 * units; it is floored at zero because the clamp argument only bounds the flux
 * by the state when the equilibrium is non-negative.
 */
template <typename T>
MassRelaxResult<T> mass_relax_flux(T raw_kappa, T raw_a, T raw_c, T state, T x_scaled,
                                   T c_mr, T remember_pre) {
    const T kappa = sigmoid(raw_kappa);
    const T a = exp(raw_a);
    const T f = kappa * tanh(a * (x_scaled - raw_c));
    const T gate = f - relu(f - remember_pre);
    const T c_eff = relu(c_mr);
    return {gate, gate * abs(state - c_eff)};
}

/**
 * @brief Proportional rescale of a node's release gates when they sum past 1.
 *
 * Keeps the relative partitioning while restoring mass conservation; the
 * remember gate becomes exactly 0 in that case. Returns true when it fired.
 */
template <typename T>
bool rescale_gate_sum(std::span<T> gates) {
    if (gates.empty()) return false;
    T sum = gates[0];
    for (std::size_t k = 1; k < gates.size(); ++k) sum = sum + gates[k];
    if (value_of(sum) <= 1.0) return false;
    for (auto& g : gates) g = g / sum;
    return true;
}

}  // namespace mcrr
