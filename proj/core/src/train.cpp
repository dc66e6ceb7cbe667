#include "mcrr/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <sstream>

#include "mcrr/metrics.hpp"
#include "mcrr/simulate.hpp"

namespace mcrr {

using nlohmann::json;

void adam_step(AdamState& state, std::span<double> params, std::span<const double> grad,
               double lr, const AdamConfig& cfg) {
    if (state.m.size() != params.size() || grad.size() != params.size())
        throw ArityMismatch("optimizer state does not match parameter vector");
    ++state.t;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grad[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

double loss_eval(const GraphSpec& spec, std::span<const double> params,
                 const ForcingSeries& forcing, std::span<const double> init_states,
                 std::span<const std::uint32_t> train_idx) {
    try {
        const auto obs = observed_series(forcing);
        const auto sim = simulate_streamflow<double>(spec, params, forcing, init_states);
        const double loss = 1.0 - kge_on<double>(sim, obs, train_idx);
        if (!std::isfinite(loss)) throw NonFiniteLoss("loss is not finite");
        return loss;
    } catch (const NonFiniteState& e) {
        throw NonFiniteLoss(e.what());
    }
}

LossGrad loss_gradient(ad::Tape& tape, const GraphSpec& spec, std::span<const double> params,
                       const ForcingSeries& forcing, std::span<const double> init_states,
                       std::span<const std::uint32_t> train_idx) {
    const auto obs = observed_series(forcing);
    LossGrad out;
    try {
        auto [loss, grad] = ad::value_and_gradient(
            tape, params, [&](std::span<const ad::Var> p) {
                auto sim = simulate_streamflow<ad::Var>(spec, p, forcing, init_states);
                return 1.0 - kge_on<ad::Var>(sim, obs, train_idx);
            });
        out.loss = loss;
        out.grad = std::move(grad);
    } catch (const NonFiniteState& e) {
        throw NonFiniteLoss(e.what());
    }
    if (!std::isfinite(out.loss)) throw NonFiniteLoss("loss is not finite");
    for (double g : out.grad) {
        if (!std::isfinite(g)) throw NonFiniteGradient("gradient has a non-finite component");
    }
    return out;
}

const SeedRun& TrainRun::best() const {
    if (selected < 0 || selected >= static_cast<int>(runs.size()))
        throw Error("training run has no selected seed");
    return runs[static_cast<std::size_t>(selected)];
}

namespace {

json config_json(const TrainConfig& c) {
    return {{"epochs", c.epochs},
            {"lr_initial", c.lr_initial},
            {"lr_late", c.lr_late},
            {"lr_switch_epoch", c.lr_switch_epoch},
            {"seeds", c.seeds},
            {"seed_base", c.seed_base},
            {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}},
            {"grad_clip_norm", c.grad_clip_norm},
            {"early_stop_patience", c.early_stop_patience}};
}

TrainConfig config_from_json(const json& j) {
    TrainConfig c;
    c.epochs = j.at("epochs").get<int>();
    c.lr_initial = j.at("lr_initial").get<double>();
    c.lr_late = j.at("lr_late").get<double>();
    c.lr_switch_epoch = j.at("lr_switch_epoch").get<int>();
    c.seeds = j.at("seeds").get<int>();
    c.seed_base = j.at("seed_base").get<std::uint64_t>();
    c.adam.beta1 = j.at("adam").at("beta1").get<double>();
    c.adam.beta2 = j.at("adam").at("beta2").get<double>();
    c.adam.eps = j.at("adam").at("eps").get<double>();
    c.grad_clip_norm = j.value("grad_clip_norm", 0.0);
    c.early_stop_patience = j.value("early_stop_patience", 0);
    return c;
}

double num_or_nan(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::numeric_limits<double>::quiet_NaN();
    return j.at(key).get<double>();
}

}  // namespace

TrainRun train_multi_seed(const GraphSpec& spec, const ForcingSeries& forcing,
                          const SubsetMask& mask, std::span<const double> init_states,
                          const TrainConfig& config, std::span<const Lineage> lineage,
                          std::span<const std::string> parent_labels) {
    if (config.epochs < 1 || config.lr_initial <= 0.0 || config.lr_late <= 0.0)
        throw InvalidOption("training schedule must have positive epochs and learning rates");
    if (config.seeds < 1) throw InvalidOption("at least one seed is required");

    TrainRun out;
    out.model = spec.label();
    out.graph = spec;
    out.config = config;
    out.init_states.assign(init_states.begin(), init_states.end());
    out.parents.assign(parent_labels.begin(), parent_labels.end());

    const auto obs = observed_series(forcing);
    const auto train_idx = subset_indices(mask, SubsetLabel::Train);
    const auto select_idx = subset_indices(mask, SubsetLabel::Select);
    if (train_idx.empty()) throw InvalidOption("training mask selects no steps");

    ad::Tape tape;

    for (int k = 0; k < config.seeds; ++k) {
        SeedRun run;
        run.seed = config.seed_base + static_cast<std::uint64_t>(k);
        run.select_kge = std::numeric_limits<double>::quiet_NaN();
        run.select_kge_ss = std::numeric_limits<double>::quiet_NaN();

        ParamBlock block;
        if (lineage.empty()) {
            block = init_params(spec, run.seed);
        } else {
            auto inh = inherit_params(spec, lineage, run.seed);
            block = std::move(inh.params);
            if (out.inherited.empty()) out.inherited = std::move(inh.inherited);
        }
        run.params_initial = block.values;
        run.loss_history.reserve(static_cast<std::size_t>(config.epochs));

        const auto t0 = std::chrono::steady_clock::now();
        try {
            AdamState adam(block.values.size());
            double best_loss = std::numeric_limits<double>::infinity();
            int stale = 0;
            for (int epoch = 1; epoch <= config.epochs; ++epoch) {
                const double lr =
                    epoch <= config.lr_switch_epoch ? config.lr_initial : config.lr_late;
                auto lg = loss_gradient(tape, spec, block.values, forcing, init_states,
                                        train_idx);
                run.loss_history.push_back(lg.loss);
                if (config.grad_clip_norm > 0.0) {
                    double norm2 = 0.0;
                    for (double g : lg.grad) norm2 += g * g;
                    const double norm = std::sqrt(norm2);
                    if (norm > config.grad_clip_norm) {
                        const double s = config.grad_clip_norm / norm;
                        for (double& g : lg.grad) g *= s;
                    }
                }
                adam_step(adam, block.values, lg.grad, lr, config.adam);
                if (config.early_stop_patience > 0) {
                    if (lg.loss < best_loss) {
                        best_loss = lg.loss;
                        stale = 0;
                    } else if (++stale >= config.early_stop_patience) {
                        break;
                    }
                }
            }
            run.params_final = block.values;
            const auto sim =
                simulate_streamflow<double>(spec, run.params_final, forcing, init_states);
            run.train_kge = kge_on<double>(sim, obs, train_idx);
            if (!select_idx.empty()) {
                run.select_kge = kge_on<double>(sim, obs, select_idx);
                run.select_kge_ss = kge_to_skill(run.select_kge);
            }
            run.ok = true;
        } catch (const Error& e) {
            run.ok = false;
            run.failure = e.what();
        }
        run.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        out.runs.push_back(std::move(run));
    }

    int best = -1;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < out.runs.size(); ++i) {
        const auto& run = out.runs[i];
        if (!run.ok) continue;
        const double score = select_idx.empty() ? run.train_kge : run.select_kge_ss;
        if (best < 0 || score > best_score) {
            best = static_cast<int>(i);
            best_score = score;
        }
    }
    if (best < 0) {
        std::string why = "all seed runs failed";
        for (const auto& run : out.runs) {
            why += "; seed " + std::to_string(run.seed) + ": " + run.failure;
        }
        throw AllRunsFailed(why);
    }
    out.selected = best;

    std::uint64_t h = fnv1a(graph_to_json(spec));
    h = fnv1a(config_json(config).dump(), h);
    for (double v : out.init_states) h = fnv1a(format17(v), h);
    out.config_hash = hash_hex(h);
    return out;
}

ScalingSet forcing_scaling(const ForcingSeries& forcing) {
    ScalingSet s;
    double pmax = 0.0, sum = 0.0;
    std::size_t n = 0;
    for (std::size_t t = forcing.spinup_len; t < forcing.size(); ++t) {
        pmax = std::max(pmax, forcing.records[t].precip);
        sum += forcing.records[t].pet;
        ++n;
    }
    if (n == 0) throw InvalidOption("forcing series has no native steps");
    s.precip_max = pmax > 0.0 ? pmax : 1.0;
    s.pet_mean = sum / static_cast<double>(n);
    double var = 0.0;
    for (std::size_t t = forcing.spinup_len; t < forcing.size(); ++t) {
        const double d = forcing.records[t].pet - s.pet_mean;
        var += d * d;
    }
    const double std = std::sqrt(var / static_cast<double>(n));
    s.pet_std = std > 0.0 ? std : 1.0;
    return s;
}

PreliminaryResult preliminary_stage(ArchId arch, const ForcingSeries& forcing,
                                    const SubsetMask& mask, const TrainConfig& base_config) {
    ArchOptions opt;
    opt.gating = GatingMode::Constant;
    GraphSpec spec = build_graph(arch, opt);
    apply_scaling(spec, forcing_scaling(forcing));  // state scalings stay identity

    TrainConfig cfg = base_config;
    cfg.seeds = 1;

    const std::vector<double> zeros(spec.nodes.size(), 0.0);

    PreliminaryResult res;
    res.run = train_multi_seed(spec, forcing, mask, zeros, cfg);
    const SeedRun& best = res.run.best();

    const SimTrace trace = simulate(spec, best.params_final, forcing, zeros);
    res.scaling = forcing_scaling(forcing);
    for (const auto& node : spec.nodes) {
        const int col = trace.column_index(node.name + ".state_before");
        if (col < 0) throw Error("trace lacks state column for node " + node.name);
        const auto& series = trace.series[static_cast<std::size_t>(col)];
        double mean = 0.0;
        std::size_t n = 0;
        for (std::size_t t = forcing.spinup_len; t < series.size(); ++t) {
            mean += series[t];
            ++n;
        }
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t t = forcing.spinup_len; t < series.size(); ++t) {
            const double d = series[t] - mean;
            var += d * d;
        }
        double std = std::sqrt(var / static_cast<double>(n));
        if (std <= 1e-12 * std::max(1.0, std::abs(mean))) {
            std = 1.0;
            res.degenerate_nodes.push_back(node.name);
        }
        res.scaling.nodes.push_back({node.name, mean, std});
    }

    res.init_states.assign(spec.nodes.size(), 0.0);
    const int gw = spec.node_index("groundwater");
    if (gw >= 0) {
        const NodeSpec& node = spec.nodes[static_cast<std::size_t>(gw)];
        const GateSpec* out_gate = nullptr;
        for (const auto& g : node.gates) {
            if (g.role == GateRole::Output) {
                out_gate = &g;
                break;
            }
        }
        if (out_gate == nullptr) throw Error("groundwater node lacks an output gate");
        res.k_gw = ad::sigmoid(best.params_final[static_cast<std::size_t>(out_gate->param_offset)]);
        const double q0 = forcing.records[0].q_obs;
        if (!std::isfinite(q0))
            throw MissingObserved("groundwater initialization needs the first observed flow");
        res.gw_init = q0 / res.k_gw;
        res.init_states[static_cast<std::size_t>(gw)] = res.gw_init;
    }
    return res;
}

std::vector<double> constrained_params(const GraphSpec& spec, std::span<const double> raw) {
    if (static_cast<int>(raw.size()) != spec.total_params)
        throw ArityMismatch("parameter vector does not match graph layout");
    std::vector<double> out(raw.size());
    for (const auto& node : spec.nodes) {
        for (const auto& gate : node.gates) {
            if (gate.aliased) continue;
            const auto off = static_cast<std::size_t>(gate.param_offset);
            switch (gate.kind) {
                case GateKind::ConstantOut:
                    out[off] = ad::sigmoid(raw[off]);
                    break;
                case GateKind::SigmoidOut3:
                    out[off] = ad::sigmoid(raw[off]);
                    out[off + 1] = std::exp(raw[off + 1]);
                    out[off + 2] = raw[off + 2];
                    break;
                case GateKind::SigmoidOut4: {
                    const double g_lo = ad::sigmoid(raw[off]);
                    out[off] = g_lo;
                    out[off + 1] = g_lo + (1.0 - g_lo) * ad::sigmoid(raw[off + 1]);
                    out[off + 2] = std::exp(raw[off + 2]);
                    out[off + 3] = raw[off + 3];
                    break;
                }
                case GateKind::SigmoidLoss4:
                    out[off] = ad::sigmoid(raw[off]);
                    out[off + 1] = std::exp(raw[off + 1]);
                    out[off + 2] = std::exp(raw[off + 2]);
                    out[off + 3] = raw[off + 3];
                    break;
                case GateKind::BypassBP1:
                    out[off] = kBp1CapacityScale * std::exp(raw[off]);
                    break;
                case GateKind::BypassBP2:
                    out[off] = raw[off];
                    out[off + 1] = raw[off + 1];
                    break;
                case GateKind::MassRelax:
                    out[off] = ad::sigmoid(raw[off]);
                    out[off + 1] = std::exp(raw[off + 1]);
                    out[off + 2] = raw[off + 2];
                    break;
            }
        }
    }
    return out;
}

namespace {

json seed_run_json(const SeedRun& run, const GraphSpec& spec) {
    json j;
    j["seed"] = run.seed;
    j["ok"] = run.ok;
    if (!run.ok) j["failure"] = run.failure;
    j["params_initial"] = run.params_initial;
    j["params_final"] = run.params_final;
    if (run.ok) j["params_final_constrained"] = constrained_params(spec, run.params_final);
    j["loss_history"] = run.loss_history;
    j["train_kge"] = run.train_kge;
    j["select_kge"] = run.select_kge;
    j["select_kge_ss"] = run.select_kge_ss;
    j["wall_seconds"] = run.wall_seconds;
    return j;
}

SeedRun seed_run_from_json(const json& j) {
    SeedRun run;
    run.seed = j.at("seed").get<std::uint64_t>();
    run.ok = j.at("ok").get<bool>();
    run.failure = j.value("failure", "");
    run.params_initial = j.at("params_initial").get<std::vector<double>>();
    run.params_final = j.at("params_final").get<std::vector<double>>();
    run.loss_history = j.at("loss_history").get<std::vector<double>>();
    run.train_kge = num_or_nan(j, "train_kge");
    run.select_kge = num_or_nan(j, "select_kge");
    run.select_kge_ss = num_or_nan(j, "select_kge_ss");
    run.wall_seconds = j.value("wall_seconds", 0.0);
    return run;
}

}  // namespace

std::string train_run_to_json(const TrainRun& run) {
    json j;
    j["tool_version"] = kToolVersion;
    j["model"] = run.model;
    j["graph"] = json::parse(graph_to_json(run.graph));
    j["config"] = config_json(run.config);
    j["init_states"] = run.init_states;
    j["runs"] = json::array();
    for (const auto& r : run.runs) j["runs"].push_back(seed_run_json(r, run.graph));
    j["selected"] = run.selected;
    j["inherited"] = run.inherited;
    j["parents"] = run.parents;
    j["config_hash"] = run.config_hash;
    return j.dump(2);
}

TrainRun train_run_from_json(const std::string& text) {
    json j = json::parse(text);
    TrainRun run;
    run.model = j.at("model").get<std::string>();
    run.graph = graph_from_json(j.at("graph").dump());
    run.config = config_from_json(j.at("config"));
    run.init_states = j.at("init_states").get<std::vector<double>>();
    for (const auto& jr : j.at("runs")) run.runs.push_back(seed_run_from_json(jr));
    run.selected = j.at("selected").get<int>();
    run.inherited = j.at("inherited").get<std::vector<std::uint8_t>>();
    run.parents = j.at("parents").get<std::vector<std::string>>();
    run.config_hash = j.at("config_hash").get<std::string>();
    return run;
}

void write_train_run(const TrainRun& run, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open run file for writing: " + path);
    out << train_run_to_json(run) << '\n';
    if (!out) throw Error("failed writing run file: " + path);
}

TrainRun read_train_run(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open run file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return train_run_from_json(ss.str());
}

}  // namespace mcrr
