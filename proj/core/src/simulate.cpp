#include "mcrr/simulate.hpp"

#include <fstream>

#include "mcrr/common.hpp"

namespace mcrr {

int SimTrace::column_index(std::string_view name) const {
    for (std::size_t i = 0; i < columns.size(); ++i) {
        if (columns[i] == name) return static_cast<int>(i);
    }
    return -1;
}

namespace {

/// Records every diagnostic run_simulation emits into a SimTrace.
class TraceSink {
public:
    TraceSink(const GraphSpec& spec, SimTrace& trace, std::size_t n_steps)
        : trace_(trace) {
        const std::size_t n_nodes = spec.nodes.size();
        state_before_col_.resize(n_nodes);
        state_after_col_.resize(n_nodes);
        remember_col_.resize(n_nodes);
        gate_col_.resize(n_nodes);
        flux_col_.resize(n_nodes);
        for (std::size_t n = 0; n < n_nodes; ++n) {
            const NodeSpec& node = spec.nodes[n];
            state_before_col_[n] = add_column(node.name + ".state_before", n_steps);
            state_after_col_[n] = add_column(node.name + ".state_after", n_steps);
            gate_col_[n].resize(node.gates.size());
            flux_col_[n].resize(node.gates.size());
            for (std::size_t g = 0; g < node.gates.size(); ++g) {
                const char* role = gate_role_name(node.gates[g].role);
                gate_col_[n][g] = add_column(node.name + ".gate_" + role, n_steps);
                flux_col_[n][g] = add_column(node.name + ".flux_" + role, n_steps);
            }
            remember_col_[n] = add_column(node.name + ".gate_remember", n_steps);
        }
    }

    void begin_step(std::size_t t) { t_ = t; }
    void state_before(std::size_t n, double v) { trace_.series[state_before_col_[n]][t_] = v; }
    void state_after(std::size_t n, double v) { trace_.series[state_after_col_[n]][t_] = v; }
    void remember(std::size_t n, double v) { trace_.series[remember_col_[n]][t_] = v; }
    void gate(std::size_t n, std::size_t g, double v) { trace_.series[gate_col_[n][g]][t_] = v; }
    void flux(std::size_t n, std::size_t g, double v) { trace_.series[flux_col_[n][g]][t_] = v; }
    void streamflow(double) {}

private:
    std::size_t add_column(std::string name, std::size_t n_steps) {
        trace_.columns.push_back(std::move(name));
        trace_.series.emplace_back(n_steps, 0.0);
        return trace_.series.size() - 1;
    }

    SimTrace& trace_;
    std::size_t t_ = 0;
    std::vector<std::size_t> state_before_col_, state_after_col_, remember_col_;
    std::vector<std::vector<std::size_t>> gate_col_, flux_col_;
};

}  // namespace

SimTrace simulate(const GraphSpec& spec, std::span<const double> params,
                  const ForcingSeries& forcing, std::span<const double> init_states) {
    SimTrace trace;
    trace.dates.reserve(forcing.size());
    for (const auto& rec : forcing.records) trace.dates.push_back(rec.date);
    TraceSink sink(spec, trace, forcing.size());
    trace.streamflow = run_simulation(spec, params, forcing, init_states, &trace.stats, sink);
    trace.config_hash = sim_config_hash(spec, params, init_states);
    return trace;
}

std::vector<double> default_init_states(const GraphSpec& spec) {
    return std::vector<double>(spec.nodes.size(), 0.0);
}

void write_trace_csv(const SimTrace& trace, const std::string& path, std::string_view meta) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open trace file for writing: " + path);
    if (!meta.empty()) out << "# " << meta << '\n';
    out << "date";
    for (const auto& c : trace.columns) out << ',' << c;
    out << ",streamflow\n";
    const std::size_t n = trace.n_steps();
    for (std::size_t t = 0; t < n; ++t) {
        out << date_to_iso(trace.dates[t]);
        for (const auto& col : trace.series) out << ',' << format17(col[t]);
        out << ',' << format17(trace.streamflow[t]) << '\n';
    }
    if (!out) throw Error("failed writing trace file: " + path);
}

MassBalance mass_balance(const SimTrace& trace, const ForcingSeries& forcing) {
    MassBalance mb;
    const std::size_t n = trace.n_steps();
    for (std::size_t t = 0; t < n; ++t) mb.inflow += forcing.records[t].precip;
    for (double q : trace.streamflow) mb.streamflow += q;

    for (std::size_t c = 0; c < trace.columns.size(); ++c) {
        const std::string& name = trace.columns[c];
        const auto& col = trace.series[c];
        const auto tail = name.find('.') == std::string::npos
                              ? std::string_view{}
                              : std::string_view(name).substr(name.find('.') + 1);
        if (tail == "flux_loss") {
            for (double v : col) mb.loss += v;
        } else if (tail == "flux_exchange") {
            for (double v : col) mb.exchange += v;
        } else if (tail == "state_before" && n > 0) {
            mb.storage_change -= col.front();
        }
        if (tail == "state_after" && n > 0) mb.storage_change += col.back();
    }
    mb.residual = mb.inflow - mb.streamflow - mb.loss - mb.exchange - mb.storage_change;
    return mb;
}

std::string sim_config_hash(const GraphSpec& spec, std::span<const double> params,
                            std::span<const double> init_states) {
    std::uint64_t h = fnv1a(graph_to_json(spec));
    for (double p : params) h = fnv1a(format17(p), h);
    for (double s : init_states) h = fnv1a(format17(s), h);
    return hash_hex(h);
}

}  // namespace mcrr
