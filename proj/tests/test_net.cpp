#include <catch2/catch_amalgamated.hpp>

#include "mdc/bench.hpp"
#include "mdc/runner_net.hpp"

// The socket backend must make the same admission decisions, move the same
// bytes, and produce the same tables as the simulator; only wall times
// differ. Occupancy pacing is generous so release ordering cannot be flipped
// by scheduler jitter.

using namespace mdc;
using namespace mdc::bench;

namespace {

TableMap net_tables() {
    GenConfig cfg;
    cfg.rows = 16000;
    cfg.partitions = 8;
    cfg.dim_rows = 500;
    cfg.dim_partitions = 2;
    cfg.seed = 11;
    TableMap t;
    for (uint32_t pid = 0; pid < cfg.partitions; ++pid)
        t["fact"].push_back(gen_fact_partition(cfg, pid));
    for (uint32_t pid = 0; pid < cfg.dim_partitions; ++pid)
        t["dim"].push_back(gen_dim_partition(cfg, pid));
    return t;
}

void check_equivalent(const TableMap& tables, const std::string& qid, Strategy st,
                      double power, double pace, TemplateConfig tmpl = {}) {
    ScenarioConfig cfg;
    cfg.policy = policy_of(st);
    cfg.power = power;

    StorageEngine sim_eng = engine_of(tables);
    PreparedQuery sim_q = prepare_query(qid, tables, sim_eng.catalog(), tmpl);
    ScenarioResult sim = run_scenario_sim(sim_eng, sim_q.use_cache ? &sim_q.cache : nullptr,
                                          sim_q.jobs, cfg);

    StorageEngine net_eng = engine_of(tables);
    PreparedQuery net_q = prepare_query(qid, tables, net_eng.catalog(), tmpl);
    ScenarioResult net = run_scenario_net(net_eng, net_q.use_cache ? &net_q.cache : nullptr,
                                          net_q.jobs, cfg, NetOptions{pace});

    REQUIRE(sim.jobs.size() == net.jobs.size());
    RefContext ctx;
    ctx.tables = &tables;
    for (size_t i = 0; i < sim.jobs.size(); ++i) {
        INFO(qid << "/" << strategy_name(st) << "/power=" << power << " job "
                 << sim.jobs[i].label);
        CHECK(net.jobs[i].admitted == sim.jobs[i].admitted);
        CHECK(net.jobs[i].pushed_back == sim.jobs[i].pushed_back);
        CHECK(net.jobs[i].hops.s2c == sim.jobs[i].hops.s2c);
        CHECK(net.jobs[i].hops.c2s == sim.jobs[i].hops.c2s);
        CHECK(net.jobs[i].hops.c2c == 0);
        CHECK(net.jobs[i].bytes_scanned == sim.jobs[i].bytes_scanned);
        CHECK(net.jobs[i].cols_accessed == sim.jobs[i].cols_accessed);

        std::string why;
        bool same = blocks_equal_canonical(net.jobs[i].result, sim.jobs[i].result, 1e-12, &why);
        INFO(why);
        CHECK(same);
        Block want = ref_execute(sim_q.oracles[i], ctx);
        bool oracle_ok = blocks_equal_canonical(net.jobs[i].result, want, 1e-9, &why);
        INFO(why);
        CHECK(oracle_ok);
    }
}

} // namespace

TEST_CASE("socket backend replays sim decisions on the aggregate template") {
    TableMap tables = net_tables();
    // power 0.125 leaves one pushdown slot, so the wait queue and both
    // completion-driven dispatch paths get exercised
    check_equivalent(tables, "QT1", Strategy::None, 0.125, 500.0);
    check_equivalent(tables, "QT1", Strategy::Eager, 0.125, 500.0);
    check_equivalent(tables, "QT1", Strategy::Adaptive, 0.125, 500.0);
    check_equivalent(tables, "QT1", Strategy::Adaptive, 1.0, 500.0);
}

TEST_CASE("socket backend carries bitmaps in both directions") {
    TableMap tables = net_tables();
    // half power splits the requests across pushdown (BitmapPayload frames)
    // and pushback (raw predicate columns filtered at compute)
    check_equivalent(tables, "QT3", Strategy::Adaptive, 0.5, 500.0);
}

TEST_CASE("socket backend handles attached request bitmaps") {
    TableMap tables = net_tables();
    check_equivalent(tables, "QT4", Strategy::Adaptive, 0.5, 500.0);
}

TEST_CASE("socket backend attributes stats across concurrent jobs") {
    TableMap tables = net_tables();
    check_equivalent(tables, "QT6", Strategy::Adaptive, 0.5, 800.0);
}

TEST_CASE("socket backend rejects sharded jobs") {
    TableMap tables = net_tables();
    StorageEngine eng = engine_of(tables);
    PreparedQuery q = prepare_query("QT5", tables, eng.catalog(), {});
    ScenarioConfig cfg;
    CHECK_THROWS_AS(run_scenario_net(eng, nullptr, q.jobs, cfg, NetOptions{100.0}), ExecError);
}
