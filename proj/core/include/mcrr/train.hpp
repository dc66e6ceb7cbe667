#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mcrr/architectures.hpp"
#include "mcrr/autodiff.hpp"
#include "mcrr/forcing.hpp"
#include "mcrr/graph.hpp"

namespace mcrr {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct TrainConfig {
    int epochs = 2000;
    double lr_initial = 0.25;     // epochs 1..lr_switch_epoch
    double lr_late = 0.125;       // afterwards
    int lr_switch_epoch = 300;
    int seeds = 10;
    std::uint64_t seed_base = 1;  // run k draws from seed_base + k
    AdamConfig adam;
    // Both opt-in and off by default: the reference protocol runs a fixed
    // number of epochs with raw gradients.
    double grad_clip_norm = 0.0;   // 0 disables
    int early_stop_patience = 0;   // 0 disables
};

struct AdamState {
    std::vector<double> m, v;
    std::int64_t t = 0;

    explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

/// One optimizer update in place. Standard bias-corrected moment estimates.
void adam_step(AdamState& state, std::span<double> params, std::span<const double> grad,
               double lr, const AdamConfig& cfg);

/// 1 - KGE over the given steps of one continuous full-period simulation.
double loss_eval(const GraphSpec& spec, std::span<const double> params,
                 const ForcingSeries& forcing, std::span<const double> init_states,
                 std::span<const std::uint32_t> train_idx);

struct LossGrad {
    double loss = 0.0;
    std::vector<double> grad;
};

/// Loss and its exact reverse-mode gradient through the unrolled recurrence.
LossGrad loss_gradient(ad::Tape& tape, const GraphSpec& spec, std::span<const double> params,
                       const ForcingSeries& forcing, std::span<const double> init_states,
                       std::span<const std::uint32_t> train_idx);

struct SeedRun {
    std::uint64_t seed = 0;
    bool ok = false;
    std::string failure;
    std::vector<double> params_initial;
    std::vector<double> params_final;
    std::vector<double> loss_history;  // one entry per completed epoch
    double train_kge = 0.0;
    double select_kge = 0.0;
    double select_kge_ss = 0.0;
    double wall_seconds = 0.0;
};

struct TrainRun {
    std::string model;
    GraphSpec graph;
    TrainConfig config;
    std::vector<double> init_states;
    std::vector<SeedRun> runs;
    int selected = -1;
    std::vector<std::uint8_t> inherited;  // per-slot, 1 = seeded from a parent
    std::vector<std::string> parents;
    std::string config_hash;

    const SeedRun& best() const;
};

/**
 * @brief Full multi-seed training with selection on the Select mask.
 *
 * Seeds run sequentially and independently; a seed whose loss or gradient
 * goes non-finite is recorded as failed without stopping the others. With a
 * lineage, inherited slots are shared across seeds and fresh slots re-drawn
 * per seed. Selection: highest Select KGE_ss among successful runs, ties to
 * the lower seed; without Select steps, highest Train KGE.
 */
TrainRun train_multi_seed(const GraphSpec& spec, const ForcingSeries& forcing,
                          const SubsetMask& mask, std::span<const double> init_states,
                          const TrainConfig& config, std::span<const Lineage> lineage = {},
                          std::span<const std::string> parent_labels = {});

struct PreliminaryResult {
    ScalingSet scaling;                    // state stats + forcing normalization
    std::vector<double> init_states;       // for this architecture's main runs
    double k_gw = 0.0;                     // learned constant groundwater gate
    double gw_init = 0.0;                  // q_obs[0] / k_gw (0 when no groundwater)
    std::vector<std::string> degenerate_nodes;  // std fell back to 1
    TrainRun run;
};

/**
 * @brief Constant-gating calibration stage.
 *
 * Trains a single-seed clone of the architecture with every output gate made
 * time-constant, simulates it, and extracts per-node state statistics plus
 * the groundwater initial state. State scalings are identity during the
 * stage's own training; forcing normalization uses the native record.
 */
PreliminaryResult preliminary_stage(ArchId arch, const ForcingSeries& forcing,
                                    const SubsetMask& mask, const TrainConfig& base_config);

/// Forcing normalization over the native (non-spin-up) record.
ScalingSet forcing_scaling(const ForcingSeries& forcing);

/// Constrained (post-transform) values for every raw slot, for reporting.
std::vector<double> constrained_params(const GraphSpec& spec, std::span<const double> raw);

std::string train_run_to_json(const TrainRun& run);
TrainRun train_run_from_json(const std::string& text);
void write_train_run(const TrainRun& run, const std::string& path);
TrainRun read_train_run(const std::string& path);

}  // namespace mcrr
