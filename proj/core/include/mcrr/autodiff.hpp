#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "mcrr/common.hpp"

namespace mcrr::ad {

/**
 * @brief Reverse-mode tape: a topologically ordered list of scalar operations.
 *
 * Every recorded node stores local partials with respect to at most two
 * parents. The backward sweep walks the list once in reverse, so gradient
 * cost is a small constant times forward cost regardless of parameter count.
 * Index order doubles as topological order because nodes are appended as the
 * forward computation runs.
 */
class Tape {
  public:
    struct Node {
        double da, db;
        std::uint32_t pa, pb;
    };

    std::uint32_t leaf() {
        const auto i = static_cast<std::uint32_t>(nodes_.size());
        nodes_.push_back({0.0, 0.0, i, i});
        return i;
    }

    std::uint32_t unary(std::uint32_t a, double da) {
        const auto i = static_cast<std::uint32_t>(nodes_.size());
        nodes_.push_back({da, 0.0, a, a});
        return i;
    }

    std::uint32_t binary(std::uint32_t a, double da, std::uint32_t b, double db) {
        const auto i = static_cast<std::uint32_t>(nodes_.size());
        nodes_.push_back({da, db, a, b});
        return i;
    }

    /// Adjoints of every node given d(output)/d(node[output_index]) = 1.
    /// The returned reference is invalidated by the next backward() call.
    const std::vector<double>& backward(std::uint32_t output_index) {
        adjoints_.assign(nodes_.size(), 0.0);
        adjoints_[output_index] = 1.0;
        for (std::uint32_t i = output_index + 1; i-- > 0;) {
            const double a = adjoints_[i];
            if (a == 0.0) continue;
            const Node& n = nodes_[i];
            adjoints_[n.pa] += n.da * a;
            adjoints_[n.pb] += n.db * a;
        }
        return adjoints_;
    }

    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }  // keeps capacity for the next evaluation
    void reserve(std::size_t n) { nodes_.reserve(n); }

  private:
    std::vector<Node> nodes_;
    std::vector<double> adjoints_;
};

namespace detail {
inline Tape*& tape_slot() {
    thread_local Tape* t = nullptr;
    return t;
}
}  // namespace detail

inline Tape& active_tape() {
    Tape* t = detail::tape_slot();
    if (!t) throw Error("autodiff: no active tape on this thread");
    return *t;
}

/// RAII activation of a tape for the current thread.
class TapeScope {
  public:
    explicit TapeScope(Tape& tape) : prev_(detail::tape_slot()) {
        detail::tape_slot() = &tape;
    }
    ~TapeScope() { detail::tape_slot() = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

  private:
    Tape* prev_;
};

/// A scalar recorded on the active tape. Copy freely; 16 bytes.
struct Var {
    double v = 0.0;
    std::uint32_t i = 0;
};

inline Var make_var(double value) { return Var{value, active_tape().leaf()}; }

// ---- arithmetic -----------------------------------------------------------

inline Var operator+(Var a, Var b) {
    return {a.v + b.v, active_tape().binary(a.i, 1.0, b.i, 1.0)};
}
inline Var operator+(Var a, double b) { return {a.v + b, active_tape().unary(a.i, 1.0)}; }
inline Var operator+(double a, Var b) { return b + a; }

inline Var operator-(Var a, Var b) {
    return {a.v - b.v, active_tape().binary(a.i, 1.0, b.i, -1.0)};
}
inline Var operator-(Var a, double b) { return {a.v - b, active_tape().unary(a.i, 1.0)}; }
inline Var operator-(double a, Var b) { return {a - b.v, active_tape().unary(b.i, -1.0)}; }
inline Var operator-(Var a) { return {-a.v, active_tape().unary(a.i, -1.0)}; }

inline Var operator*(Var a, Var b) {
    return {a.v * b.v, active_tape().binary(a.i, b.v, b.i, a.v)};
}
inline Var operator*(Var a, double b) { return {a.v * b, active_tape().unary(a.i, b)}; }
inline Var operator*(double a, Var b) { return b * a; }

inline Var operator/(Var a, Var b) {
    const double inv = 1.0 / b.v;
    return {a.v * inv, active_tape().binary(a.i, inv, b.i, -a.v * inv * inv)};
}
inline Var operator/(Var a, double b) { return a * (1.0 / b); }
inline Var operator/(double a, Var b) {
    const double inv = 1.0 / b.v;
    return {a * inv, active_tape().unary(b.i, -a * inv * inv)};
}

inline Var& operator+=(Var& a, Var b) { return a = a + b; }
inline Var& operator-=(Var& a, Var b) { return a = a - b; }
inline Var& operator*=(Var& a, Var b) { return a = a * b; }
inline Var& operator+=(Var& a, double b) { return a = a + b; }
inline Var& operator-=(Var& a, double b) { return a = a - b; }
inline Var& operator*=(Var& a, double b) { return a = a * b; }

// ---- elementary functions ---------------------------------------------------

inline Var exp(Var a) {
    const double e = std::exp(a.v);
    return {e, active_tape().unary(a.i, e)};
}

inline Var sqrt(Var a) {
    const double s = std::sqrt(a.v);
    return {s, active_tape().unary(a.i, s > 0.0 ? 0.5 / s : 0.0)};
}

inline Var tanh(Var a) {
    const double t = std::tanh(a.v);
    return {t, active_tape().unary(a.i, 1.0 - t * t)};
}

inline Var sigmoid(Var a) {
    const double s = 1.0 / (1.0 + std::exp(-a.v));
    return {s, active_tape().unary(a.i, s * (1.0 - s))};
}

// Kinked primitives use subgradient 0 at the kink (a measure-zero event that
// keeps clamp semantics: a value pinned at the boundary does not propagate).
inline Var relu(Var a) {
    return a.v > 0.0 ? Var{a.v, active_tape().unary(a.i, 1.0)}
                     : Var{0.0, active_tape().unary(a.i, 0.0)};
}

inline Var abs(Var a) {
    const double d = a.v > 0.0 ? 1.0 : (a.v < 0.0 ? -1.0 : 0.0);
    return {std::abs(a.v), active_tape().unary(a.i, d)};
}

/// min(a, cap) with a bitwise-guaranteed ceiling; gradient 1 while unclamped.
inline Var clamp_max(Var a, double cap) {
    return a.v <= cap ? Var{a.v, active_tape().unary(a.i, 1.0)}
                      : Var{cap, active_tape().unary(a.i, 0.0)};
}

// ---- generic scalar helpers (work for double and Var alike) -----------------

inline double value_of(double x) { return x; }
inline double value_of(Var x) { return x.v; }

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double relu(double x) { return x > 0.0 ? x : 0.0; }
inline double clamp_max(double a, double cap) { return a <= cap ? a : cap; }

/**
 * @brief Evaluate f(params) and its gradient in one forward + one reverse sweep.
 *
 * f receives a span of leaf Vars (one per parameter, in order) and must return
 * the scalar output as a Var. The tape is cleared first and reused, so capacity
 * persists across calls.
 */
template <typename F>
std::pair<double, std::vector<double>> value_and_gradient(Tape& tape,
                                                          std::span<const double> params,
                                                          F&& f) {
    tape.clear();
    TapeScope scope(tape);
    std::vector<Var> leaves(params.size());
    for (std::size_t k = 0; k < params.size(); ++k) leaves[k] = make_var(params[k]);
    const Var out = f(std::span<const Var>(leaves));
    const auto& adj = tape.backward(out.i);
    std::vector<double> grad(params.size());
    for (std::size_t k = 0; k < params.size(); ++k) grad[k] = adj[leaves[k].i];
    return {out.v, std::move(grad)};
}

}  // namespace mcrr::ad
