#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mcrr/architectures.hpp"
#include "mcrr/simulate.hpp"
#include "support.hpp"

using namespace mcrr;
using testsup::random_forcing;

namespace {

/// Identity scalings so gate inputs equal raw states and PET.
GraphSpec build_identity(ArchId a, ArchOptions o = {}) {
    GraphSpec g = build_graph(a, o);
    return g;  // precip_max=1, pet stats 0/1, node stats 0/1 by default
}

const std::vector<double>& col(const SimTrace& tr, const std::string& name) {
    const int i = tr.column_index(name);
    REQUIRE(i >= 0);
    return tr.series[static_cast<std::size_t>(i)];
}

}  // namespace

TEST_CASE("a single-node step follows the gated balance arithmetic") {
    const auto g = build_identity(ArchId::MA1);
    const std::vector<double> params{0.2, -0.3, 0.1, -0.5, 0.15, 0.25, -0.2};

    ForcingSeries f;
    f.records.push_back({0, 4.0, 2.5, 1.0});
    f.records.push_back({1, 0.0, 3.0, 1.0});
    f.water_year = {1970, 1970};

    const std::vector<double> init{10.0};
    const auto tr = simulate(g, params, f, init);

    // Oracle computed outside this codebase from the gate formulas.
    CHECK(tr.streamflow[0] == doctest::Approx(5.495325361918244).epsilon(1e-13));
    CHECK(tr.streamflow[1] == doctest::Approx(3.2669950186888412).epsilon(1e-13));
    CHECK(col(tr, "soil.gate_output")[0] == doctest::Approx(0.5495325361918244).epsilon(1e-13));
    CHECK(col(tr, "soil.gate_loss")[0] == doctest::Approx(0.25).epsilon(1e-13));
    CHECK(col(tr, "soil.flux_loss")[0] == doctest::Approx(2.5).epsilon(1e-13));
    CHECK(col(tr, "soil.gate_remember")[0] ==
          doctest::Approx(0.2004674638081756).epsilon(1e-13));
    CHECK(col(tr, "soil.state_after")[0] == doctest::Approx(6.004674638081756).epsilon(1e-13));
    CHECK(col(tr, "soil.gate_loss")[1] == doctest::Approx(0.37753152663982725).epsilon(1e-13));
    CHECK(col(tr, "soil.state_after")[1] == doctest::Approx(0.4707256363024577).epsilon(1e-13));
    CHECK(col(tr, "soil.state_before")[1] == col(tr, "soil.state_after")[0]);
}

TEST_CASE("the worked partitioning example: 10% release, 5% loss") {
    ArchOptions constant;
    constant.gating = GatingMode::Constant;
    const auto g = build_identity(ArchId::MA1, constant);
    // ConstantOut release at 0.1; loss gate saturated to its 0.05 ceiling.
    const double logit01 = std::log(0.1 / 0.9);
    const double logit005 = std::log(0.05 / 0.95);
    const std::vector<double> params{logit01, logit005, -40.0, -40.0, 40.0};

    ForcingSeries f;
    f.records.push_back({0, 10.0, 1e6, 0.0});
    f.water_year = {1970};
    const auto tr = simulate(g, params, f, std::vector<double>{100.0});

    CHECK(col(tr, "soil.flux_output")[0] == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(col(tr, "soil.flux_loss")[0] == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(col(tr, "soil.gate_remember")[0] == doctest::Approx(0.85).epsilon(1e-12));
    CHECK(col(tr, "soil.state_after")[0] == doctest::Approx(95.0).epsilon(1e-12));
}

TEST_CASE("the constrained loss flux hits the demand ceiling bitwise") {
    const auto g = build_identity(ArchId::MA1);
    // Loss gate saturated at 1; release gate moderate. pe/state = 4/16 is an
    // exact binary ratio, so the clamp lands exactly on the demand.
    const std::vector<double> params{0.2, -0.3, 0.1, 40.0, -40.0, -40.0, 40.0};
    ForcingSeries f;
    f.records.push_back({0, 0.0, 4.0, 0.0});
    f.water_year = {1970};
    const auto tr = simulate(g, params, f, std::vector<double>{16.0});
    CHECK(col(tr, "soil.flux_loss")[0] == 4.0);
    CHECK(col(tr, "soil.gate_loss")[0] == 0.25);
}

TEST_CASE("pure accumulation when every gate is driven to zero") {
    ArchOptions constant;
    constant.gating = GatingMode::Constant;
    const auto g = build_identity(ArchId::MA1, constant);
    // sigma(-745) underflows to exactly 0.
    const std::vector<double> params{-745.0, -745.0, 0.0, 0.0, 0.0};
    const auto f = random_forcing(50, 7, false);
    const auto tr = simulate(g, params, f, std::vector<double>{3.5});

    double expect = 3.5;
    for (std::size_t t = 0; t < f.size(); ++t) {
        CHECK(tr.streamflow[t] == 0.0);
        CHECK(col(tr, "soil.gate_remember")[t] == 1.0);
        expect += f.records[t].precip;
        CHECK(col(tr, "soil.state_after")[t] == expect);
    }
}

TEST_CASE("a store node with gate one drains fully every step") {
    ArchOptions constant;
    constant.gating = GatingMode::Constant;
    auto g = build_identity(ArchId::MA3, constant);
    // soil release 0.3 constant, loss zeroed, routing gate saturated to 1.
    const double logit03 = std::log(0.3 / 0.7);
    const std::vector<double> params{logit03, -745.0, 0.0, 0.0, 0.0, 40.0};
    const auto f = random_forcing(100, 8, false);
    const auto tr = simulate(g, params, f, std::vector<double>{20.0, 6.0});

    const auto& soil_out = col(tr, "routing.state_after");
    const auto& inflow = col(tr, "soil.flux_output");
    for (std::size_t t = 0; t < f.size(); ++t) {
        CHECK(soil_out[t] == inflow[t]);  // next = inflow exactly
        // The full store drains to streamflow one step later.
        CHECK(col(tr, "routing.flux_output")[t] == col(tr, "routing.state_before")[t]);
    }
}

TEST_CASE("recession under zero precipitation decays strictly toward zero") {
    const auto g = build_identity(ArchId::MA1);
    const std::vector<double> params{0.4, 0.2, -0.5, -0.8, 0.1, 0.1, -0.3};
    ForcingSeries f;
    for (int t = 0; t < 200; ++t) {
        f.records.push_back({t, 0.0, 2.0, 0.0});
        f.water_year.push_back(1970);
    }
    const auto tr = simulate(g, params, f, std::vector<double>{50.0});
    for (std::size_t t = 1; t < tr.n_steps(); ++t) {
        CHECK(tr.streamflow[t] < tr.streamflow[t - 1]);
        CHECK(tr.streamflow[t] > 0.0);
    }
    CHECK(tr.streamflow.back() < 1e-3 * tr.streamflow.front());
}

TEST_CASE("gate-sum overflow is rescaled proportionally with remember pinned to zero") {
    const auto g = build_identity(ArchId::MA2);
    // Both release gates saturate at 1; loss gate driven to 0.
    const std::vector<double> params{40.0, -40.0, 40.0, 40.0, -40.0, 40.0,
                                     -745.0, 0.0, 0.0, 0.0};
    const auto f = random_forcing(50, 9, false);
    const auto tr = simulate(g, params, f, std::vector<double>{30.0});

    CHECK(tr.stats.gate_sum_rescales == f.size());
    for (std::size_t t = 0; t < f.size(); ++t) {
        CHECK(col(tr, "soil.gate_output")[t] == 0.5);
        CHECK(col(tr, "soil.gate_recharge")[t] == 0.5);
        CHECK(col(tr, "soil.gate_remember")[t] == 0.0);
        // The node empties into streamflow and keeps only the new pulse.
        CHECK(tr.streamflow[t] == col(tr, "soil.state_before")[t]);
        CHECK(col(tr, "soil.state_after")[t] == f.records[t].precip);
    }
}

TEST_CASE("every variant conserves mass and keeps gates in range on random forcing") {
    const auto f = random_forcing(1000, 10, false);
    ScalingSet sc;
    sc.nodes = {{"soil", 25.0, 15.0}, {"routing", 8.0, 6.0}, {"groundwater", 40.0, 25.0}};
    double pmax = 0.0, psum = 0.0, psum2 = 0.0;
    for (const auto& r : f.records) {
        pmax = std::max(pmax, r.precip);
        psum += r.pet;
        psum2 += r.pet * r.pet;
    }
    sc.precip_max = pmax;
    sc.pet_mean = psum / static_cast<double>(f.size());
    sc.pet_std = std::sqrt(psum2 / static_cast<double>(f.size()) - sc.pet_mean * sc.pet_mean);

    std::uint64_t seed = 1000;
    for (const auto& v : testsup::all_variants()) {
        auto g = build_graph(v.arch, v.opts);
        ScalingSet local = sc;
        local.nodes.resize(0);
        for (const auto& node : g.nodes)
            for (const auto& cand : sc.nodes)
                if (cand.node == node.name) local.nodes.push_back(cand);
        apply_scaling(g, local);
        const auto params = init_params(g, ++seed);
        std::vector<double> init;
        for (std::size_t n = 0; n < g.nodes.size(); ++n)
            init.push_back(20.0 + 10.0 * static_cast<double>(n));

        const auto tr = simulate(g, params.values, f, init);
        INFO("variant ", g.label());

        // Whole-graph closure from the summary helper.
        const auto mb = mass_balance(tr, f);
        const double tol = 1e-9 * std::max(1.0, mb.inflow);
        CHECK(std::abs(mb.residual) <= tol);

        // Column handles per node for the per-node closure.
        std::size_t bad_gate = 0, bad_state = 0, bad_et = 0, bad_chain = 0, bad_q = 0;
        for (std::size_t n = 0; n < g.nodes.size(); ++n) {
            const auto& node = g.nodes[n];
            const auto& before = col(tr, node.name + ".state_before");
            const auto& after = col(tr, node.name + ".state_after");
            const auto& remember = col(tr, node.name + ".gate_remember");
            bool node_has_mr = false;

            double residual_in = init[n];  // closure denominator: all water offered
            double residual = before[0] - init[n];

            for (std::size_t t = 0; t < f.size(); ++t) {
                if (before[t] < 0.0 || after[t] < 0.0) ++bad_state;
                if (t + 1 < f.size() && before[t + 1] != after[t]) ++bad_chain;
                double in_t = node.kind == NodeKind::SoilMoisture ? f.records[t].precip : 0.0;
                double out_t = 0.0;
                for (const auto& gate : node.gates) {
                    const char* role = gate_role_name(gate.role);
                    const double gv = col(tr, node.name + ".gate_" + role)[t];
                    const double fv = col(tr, node.name + ".flux_" + role)[t];
                    if (gate.role == GateRole::MassRelax) {
                        node_has_mr = true;
                        if (gv <= -1.0 || gv >= 1.0) ++bad_gate;
                        out_t += fv;  // signed exchange
                    } else if (gate.role == GateRole::Bypass) {
                        if (gv < 0.0 || gv > 1.0) ++bad_gate;
                        in_t -= fv;  // bypassed water never enters the node
                    } else {
                        if (gv < 0.0 || gv > 1.0) ++bad_gate;
                        out_t += fv;
                        if (gate.role == GateRole::Loss && node.et_constrained &&
                            fv > f.records[t].pet)
                            ++bad_et;
                    }
                }
                // Inflow routed from upstream releases this step.
                for (std::size_t m = 0; m < g.nodes.size(); ++m) {
                    for (const auto& gate : g.nodes[m].gates) {
                        if (gate.target == static_cast<int>(n))
                            in_t += col(tr, g.nodes[m].name + ".flux_" +
                                                gate_role_name(gate.role))[t];
                    }
                }
                residual += after[t] - before[t] + out_t - in_t;
                residual_in += std::max(in_t, 0.0);
            }
            if (!node_has_mr) {
                for (std::size_t t = 0; t < f.size(); ++t)
                    if (remember[t] < 0.0 || remember[t] > 1.0) ++bad_gate;
            }
            CHECK(std::abs(residual) <= 1e-9 * std::max(1.0, residual_in));
        }
        for (std::size_t t = 0; t < f.size(); ++t)
            if (!(tr.streamflow[t] >= 0.0)) ++bad_q;

        CHECK(bad_gate == 0);
        CHECK(bad_state == 0);
        CHECK(bad_et == 0);
        CHECK(bad_chain == 0);
        CHECK(bad_q == 0);
    }
}

TEST_CASE("two-path wiring: streamflow is the sum of the two store releases") {
    auto g = build_identity(ArchId::MA5);
    const auto params = init_params(g, 77);
    const auto f = random_forcing(300, 11, false);
    const auto tr = simulate(g, params.values, f, std::vector<double>{30.0, 5.0, 40.0});
    const auto& ch = col(tr, "routing.flux_output");
    const auto& gw = col(tr, "groundwater.flux_output");
    for (std::size_t t = 0; t < f.size(); ++t) CHECK(tr.streamflow[t] == ch[t] + gw[t]);
}

TEST_CASE("simulation is deterministic and the lean path matches the traced path") {
    ArchOptions o;
    o.bypass = BypassKind::BP2;
    o.mass_relax = true;
    const auto g = build_identity(ArchId::MA6, o);
    const auto params = init_params(g, 78);
    const auto f = random_forcing(400, 12, false);
    const std::vector<double> init{30.0, 5.0, 40.0};

    const auto tr1 = simulate(g, params.values, f, init);
    const auto tr2 = simulate(g, params.values, f, init);
    CHECK(tr1.streamflow == tr2.streamflow);
    CHECK(tr1.series == tr2.series);
    CHECK(tr1.config_hash == tr2.config_hash);

    const auto lean = simulate_streamflow<double>(g, params.values, f, init);
    CHECK(lean == tr1.streamflow);
}

TEST_CASE("input validation and failure diagnostics") {
    const auto g = build_identity(ArchId::MA4);
    const auto f = random_forcing(10, 13, false);
    const std::vector<double> good(14, 0.1);
    const std::vector<double> short_params(13, 0.1);
    const std::vector<double> init{5.0, 5.0};

    CHECK_THROWS_AS(simulate(g, short_params, f, init), ArityMismatch);
    CHECK_THROWS_AS(simulate(g, good, f, std::vector<double>{5.0}), InvalidOption);

    std::vector<double> poisoned = good;
    poisoned[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(simulate(g, poisoned, f, init), NonFiniteState);

    CHECK(default_init_states(g) == std::vector<double>{0.0, 0.0});
}

TEST_CASE("trace export carries metadata, headers, and hash") {
    const auto g = build_identity(ArchId::MA1);
    const auto params = init_params(g, 79);
    const auto f = random_forcing(5, 14, false);
    const auto tr = simulate(g, params.values, f, std::vector<double>{10.0});

    CHECK(tr.config_hash.size() == 16);
    CHECK(tr.config_hash == sim_config_hash(g, params.values, std::vector<double>{10.0}));
    const auto other = sim_config_hash(g, init_params(g, 80).values, std::vector<double>{10.0});
    CHECK(other != tr.config_hash);

    const std::string path = "trace_export_test.csv";
    write_trace_csv(tr, path, "tool x config y");
    std::ifstream in(path);
    REQUIRE(in.good());
    std::string line;
    std::getline(in, line);
    CHECK(line == "# tool x config y");
    std::getline(in, line);
    CHECK(line.rfind("date,", 0) == 0);
    CHECK(line.find("soil.state_before") != std::string::npos);
    CHECK(line.find(",streamflow") != std::string::npos);
    std::size_t rows = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 5);
    in.close();
    std::remove(path.c_str());

    CHECK(tr.column_index("soil.state_before") >= 0);
    CHECK(tr.column_index("nope") == -1);
}
