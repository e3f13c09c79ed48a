#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <random>
#include <vector>

#include "mdc/compute_engine.hpp"
#include "mdc/reference.hpp"
#include "mdc/storage_engine.hpp"

using namespace mdc;
using Catch::Matchers::ContainsSubstring;

namespace {

std::map<std::string, std::vector<ColumnarPartition>> make_tables(uint64_t seed,
                                                                  int fact_parts,
                                                                  uint64_t rows_per_part) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int64_t> keys(0, 49);
    std::uniform_int_distribution<int64_t> meas(-100, 100);

    std::map<std::string, std::vector<ColumnarPartition>> tables;
    for (int p = 0; p < fact_parts; ++p) {
        std::vector<double> pred;
        std::vector<int64_t> k, g, m1, m2;
        uint64_t rows = p == 0 ? rows_per_part / 2 : rows_per_part;
        for (uint64_t i = 0; i < rows; ++i) {
            pred.push_back(unit(rng));
            k.push_back(keys(rng));
            g.push_back(k.back() % 8);
            m1.push_back(meas(rng));
            m2.push_back(meas(rng));
        }
        Block b;
        b.add(make_column("pred", std::move(pred)));
        b.add(make_column("k", std::move(k)));
        b.add(make_column("g", std::move(g)));
        b.add(make_column("m1", std::move(m1)));
        b.add(make_column("m2", std::move(m2)));
        tables["fact"].push_back({"fact", static_cast<uint32_t>(p), std::move(b)});
    }

    std::vector<int64_t> k_dim, attr, dg;
    for (int64_t i = 0; i < 50; ++i) {
        k_dim.push_back(i);
        attr.push_back(meas(rng) + 200);
        dg.push_back(i % 4);
    }
    Block d;
    d.add(make_column("k_dim", std::move(k_dim)));
    d.add(make_column("attr", std::move(attr)));
    d.add(make_column("dg", std::move(dg)));
    tables["dim"].push_back({"dim", 0, std::move(d)});
    return tables;
}

StorageEngine engine_of(const std::map<std::string, std::vector<ColumnarPartition>>& tables) {
    StorageEngine eng;
    for (const auto& [name, parts] : tables)
        for (const auto& p : parts) eng.add_partition(p);
    return eng;
}

// Executes every request at storage, binds the outputs, and runs the
// remainder; the full engine path minus the wire.
Block engine_execute(const SplitResult& split, StorageEngine& eng) {
    StubBindings binds;
    for (const auto& req : split.requests) {
        auto res = eng.execute(req);
        if (req.shuffle_params) {
            for (uint32_t t = 0; t < res.shuffle_shards.size(); ++t)
                binds.by_shard[{req.request_id, t}].push_back(res.shuffle_shards[t]);
        } else {
            binds.by_request[req.request_id].push_back(res.out.block);
        }
    }
    return execute_remainder(split.remainder, binds);
}

PlanNode qt1_plan(double s) {
    return PlanNode::final_aggregate(
        PlanNode::partial_aggregate(
            PlanNode::filter(PlanNode::scan("fact", {"pred", "g", "m1", "m2"}),
                             Predicate::cmp("pred", CmpOp::Le, s)),
            {"g"},
            {{AggOp::Sum, "m1", "total"},
             {AggOp::Count, "", "n"},
             {AggOp::Avg, "m2", "mean"}}),
        {"g"},
        {{AggOp::Sum, "m1", "total"},
         {AggOp::Count, "", "n"},
         {AggOp::Avg, "m2", "mean"}});
}

PlanNode join_plan(double s, bool sharded, uint32_t fanout) {
    PlanNode fact = PlanNode::filter(PlanNode::scan("fact", {"pred", "k", "m1"}),
                                     Predicate::cmp("pred", CmpOp::Le, s));
    PlanNode dim = PlanNode::scan("dim", {"k_dim", "dg"});
    if (sharded) {
        fact = PlanNode::shuffle_by(std::move(fact), "k", fanout);
        dim = PlanNode::shuffle_by(std::move(dim), "k_dim", fanout);
    }
    PlanNode join = PlanNode::hash_join(std::move(fact), std::move(dim), {"k"}, {"k_dim"});
    std::vector<AggSpec> aggs{{AggOp::Sum, "m1", "total"}, {AggOp::Count, "", "n"}};
    return PlanNode::final_aggregate(
        PlanNode::partial_aggregate(std::move(join), {"dg"}, aggs), {"dg"}, aggs);
}

} // namespace

TEST_CASE("pushback runs the identical pipeline over raw columns") {
    auto tables = make_tables(501, 3, 120);
    StorageEngine eng = engine_of(tables);
    std::mt19937_64 rng(502);

    for (int round = 0; round < 25; ++round) {
        CAPTURE(round);
        PushdownRequest req;
        req.request_id = 10 + round;
        req.table = "fact";
        req.partition_id = rng() % 3;
        req.fragment.push_back(PlanNode::scan("fact", {"pred", "k", "g", "m1", "m2"}));

        PlanNode filter;
        filter.kind = PlanKind::Filter;
        filter.predicate = Predicate::cmp(
            "pred", static_cast<CmpOp>(rng() % 6),
            std::uniform_real_distribution<double>(0.0, 1.0)(rng));
        req.fragment.push_back(std::move(filter));
        if (round % 2) {
            PlanNode agg;
            agg.kind = PlanKind::PartialAggregate;
            agg.group_by = {"g"};
            agg.aggs = {{AggOp::Sum, "m1", "s"}, {AggOp::Avg, "m2", "a"}};
            req.fragment.push_back(std::move(agg));
        }

        Block raw = eng.raw_fetch(req.table, req.partition_id, req.accessed_columns()).block;
        FragmentOutput via_compute = handle_pushback(req, std::move(raw));
        auto via_storage = eng.execute(req);

        std::string why;
        bool same =
            blocks_equal_canonical(via_compute.block, via_storage.out.block, 0.0, &why);
        INFO(why);
        REQUIRE(same);
    }
}

TEST_CASE("pushback of an empty partition yields empty output") {
    Block b;
    b.add(make_column("x", std::vector<int64_t>{}));
    StorageEngine eng;
    eng.add_partition(ColumnarPartition{"t", 0, std::move(b)});

    PushdownRequest req;
    req.request_id = 1;
    req.table = "t";
    req.partition_id = 0;
    req.fragment.push_back(PlanNode::scan("t", {"x"}));

    Block raw = eng.raw_fetch("t", 0, {"x"}).block;
    CHECK(handle_pushback(req, std::move(raw)).block.rows == 0);
}

TEST_CASE("pinned cache bookkeeping") {
    PinnedCache cache;
    Column a = make_column("a", std::vector<int64_t>{1, 2, 3});
    Column b = make_column("b", std::vector<double>{0.5});

    cache.pin("fact", 0, a);
    cache.pin("fact", 1, b);
    CHECK(cache.size() == 2);
    CHECK(cache.bytes() == 24 + 8);
    CHECK(cache.contains("fact", 0, "a"));
    CHECK_FALSE(cache.contains("fact", 1, "a"));
    CHECK(cache.get("fact", 0, "a").i64s() == std::vector<int64_t>{1, 2, 3});
    CHECK_THROWS_WITH(cache.get("dim", 0, "a"), ContainsSubstring("not pinned at compute"));

    cache.pin("fact", 0, make_column("a", std::vector<int64_t>{7}));
    CHECK(cache.size() == 2);
    CHECK(cache.bytes() == 8 + 8); // re-pin replaces, accounting follows
}

TEST_CASE("cache-built bitmaps match row-at-a-time evaluation") {
    auto tables = make_tables(777, 1, 90);
    const Block& data = tables["fact"][0].data;

    PinnedCache cache;
    cache.pin("fact", 0, data.col("pred"));
    cache.pin("fact", 0, data.col("k"));

    Predicate p = Predicate::conj({Predicate::cmp("pred", CmpOp::Le, 0.6),
                                   Predicate::cmp("k", CmpOp::Ge, int64_t{10})});
    SelectionBitmap bm = bitmap_from_cache(cache, "fact", 0, data.rows, p);
    for (uint64_t r = 0; r < data.rows; ++r)
        REQUIRE(bm.test(r) == ref::eval_predicate_row(p, data, r));

    Predicate missing = Predicate::cmp("m1", CmpOp::Gt, int64_t{0});
    CHECK_THROWS_WITH(bitmap_from_cache(cache, "fact", 0, data.rows, missing),
                      ContainsSubstring("not pinned at compute"));

    PinnedCache stale;
    stale.pin("fact", 0, make_column("pred", std::vector<double>{0.1}));
    CHECK_THROWS_WITH(
        bitmap_from_cache(stale, "fact", 0, data.rows, Predicate::cmp("pred", CmpOp::Le, 0.5)),
        ContainsSubstring("rows, partition has"));
}

TEST_CASE("bitmap halves merge into one aligned block") {
    auto tables = make_tables(888, 1, 150);
    const ColumnarPartition& part = tables["fact"][0];
    StorageEngine eng = engine_of(tables);

    PinnedCache cache;
    cache.pin("fact", 0, part.data.col("m1"));

    // storage filters on pred and ships the bitmap plus its own columns;
    // compute cuts the cached column with the same bitmap
    Predicate p = Predicate::cmp("pred", CmpOp::Le, 0.4);
    auto [bm, remote] = eng.build_bitmap("fact", 0, p);
    Block local;
    local.rows = part.rows();
    local.columns.push_back(cache.get("fact", 0, "m1"));
    local = filter_block(local, bm);

    Block merged = merge_bitmap_results(local, remote);
    CHECK(merged.rows == bm.popcount());
    REQUIRE(merged.columns.size() == 2);

    // equivalent single-site filter over both columns
    Block both;
    both.rows = part.rows();
    both.columns.push_back(part.data.col("m1"));
    both.columns.push_back(part.data.col("pred"));
    Block want = filter_block(both, bm);
    std::string why;
    bool same = blocks_equal_canonical(merged, want, 0.0, &why);
    INFO(why);
    REQUIRE(same);

    SECTION("row mismatch is an integrity error") {
        Block truncated = filter_block(remote, SelectionBitmap::from_mask(std::vector<bool>(
                                                   remote.rows, false)));
        if (local.rows > 0)
            CHECK_THROWS_WITH(merge_bitmap_results(local, truncated),
                              ContainsSubstring("bitmap-filtered sides disagree"));
    }
    SECTION("name collision is rejected") {
        CHECK_THROWS_WITH(merge_bitmap_results(local, local),
                          ContainsSubstring("collision on 'm1'"));
    }
}

TEST_CASE("remainder execution over bound stubs equals the oracle") {
    std::mt19937_64 rng(20260817);
    for (int round = 0; round < 30; ++round) {
        CAPTURE(round);
        auto tables = make_tables(3000 + round, 3, 80 + rng() % 80);
        StorageEngine eng = engine_of(tables);
        RefContext ctx;
        ctx.tables = &tables;

        double s = std::uniform_real_distribution<double>(0.1, 0.9)(rng);
        PlanNode plan;
        switch (round % 3) {
            case 0: plan = qt1_plan(s); break;
            case 1: plan = join_plan(s, false, 0); break;
            default: plan = join_plan(s, true, 2 + rng() % 3); break;
        }

        SplitResult split = split_pushdown(plan, eng.catalog(), SplitOptions{});
        REQUIRE_FALSE(split.requests.empty());
        Block got = engine_execute(split, eng);
        Block want = ref_execute(plan, ctx);

        std::string why;
        bool same = blocks_equal_canonical(got, want, 1e-9, &why);
        INFO(why);
        REQUIRE(same);
    }
}

TEST_CASE("remainder executor rejects what it cannot run") {
    StubBindings empty;
    CHECK_THROWS_WITH(execute_remainder(PlanNode::stub({5}), empty),
                      ContainsSubstring("missing fragment output for request 5"));

    PlanNode sharded = PlanNode::stub({6});
    sharded.stub_fanout = 2;
    sharded.stub_shard = 1;
    CHECK_THROWS_WITH(execute_remainder(sharded, empty),
                      ContainsSubstring("missing shard output for request 6/1"));

    CHECK_THROWS_WITH(execute_remainder(PlanNode::scan("t", {"x"}), empty),
                      ContainsSubstring("cannot scan storage directly"));
}
