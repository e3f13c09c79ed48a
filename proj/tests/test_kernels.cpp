#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <map>
#include <random>
#include <vector>

#include "mdc/columnar.hpp"
#include "mdc/kernels.hpp"
#include "mdc/reference.hpp"

using namespace mdc;
using Catch::Matchers::ContainsSubstring;

namespace {

Block random_block(std::mt19937_64& rng, uint64_t rows) {
    std::uniform_int_distribution<int64_t> small(0, 7);
    std::uniform_int_distribution<int64_t> meas(-50, 50);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const std::vector<std::string> words{"ash", "birch", "cedar", "oak"};

    std::vector<int64_t> g, m;
    std::vector<double> f;
    std::vector<std::string> s;
    std::vector<uint8_t> b;
    for (uint64_t r = 0; r < rows; ++r) {
        g.push_back(small(rng));
        m.push_back(meas(rng));
        f.push_back(unit(rng));
        s.push_back(words[rng() % words.size()]);
        b.push_back(rng() % 2 ? 1 : 0);
    }
    Block block;
    block.add(make_column("g", std::move(g)));
    block.add(make_column("m", std::move(m)));
    block.add(make_column("f", std::move(f)));
    block.add(make_column("s", std::move(s)));
    block.add(make_bool_column("b", std::move(b)));
    return block;
}

Predicate random_predicate(std::mt19937_64& rng) {
    auto leaf = [&]() -> Predicate {
        CmpOp op = static_cast<CmpOp>(rng() % 6);
        switch (rng() % 5) {
            case 0: return Predicate::cmp("g", op, static_cast<int64_t>(rng() % 8));
            case 1: return Predicate::cmp("m", op, static_cast<int64_t>(rng() % 40) - 20);
            case 2:
                return Predicate::cmp(
                    "f", op, std::uniform_real_distribution<double>(0.0, 1.0)(rng));
            case 3: return Predicate::cmp("s", op, std::string("cedar"));
            default: return Predicate::cmp("b", op, rng() % 2 == 0);
        }
    };
    switch (rng() % 4) {
        case 0: return leaf();
        case 1: return Predicate::conj({leaf(), leaf()});
        case 2: return Predicate::disj({leaf(), leaf(), leaf()});
        default: return Predicate::conj({Predicate::disj({leaf(), leaf()}), leaf()});
    }
}

} // namespace

TEST_CASE("vectorized predicates agree with row-at-a-time evaluation") {
    std::mt19937_64 rng(11);
    for (int round = 0; round < 120; ++round) {
        CAPTURE(round);
        Block block = random_block(rng, 1 + rng() % 60);
        Predicate p = random_predicate(rng);
        SelectionBitmap bm = eval_predicate(p, block);
        REQUIRE(bm.length() == block.rows);
        for (uint64_t r = 0; r < block.rows; ++r) {
            CAPTURE(r);
            REQUIRE(bm.test(r) == ref::eval_predicate_row(p, block, r));
        }
    }
}

TEST_CASE("comparisons coerce across the numeric types") {
    Block block;
    block.add(make_column("i", std::vector<int64_t>{1, 2, 3}));
    block.add(make_column("d", std::vector<double>{0.5, 2.0, 3.5}));

    auto via_double = eval_compare(block.col("i"), CmpOp::Le, 2.5);
    CHECK(via_double.popcount() == 2);
    auto via_int = eval_compare(block.col("d"), CmpOp::Ge, int64_t{2});
    CHECK(via_int.popcount() == 2);

    CHECK_THROWS_WITH(eval_compare(block.col("i"), CmpOp::Eq, std::string("x")),
                      ContainsSubstring("non-numeric literal"));

    Block text;
    text.add(make_column("s", std::vector<std::string>{"a"}));
    CHECK_THROWS_WITH(eval_compare(text.col("s"), CmpOp::Eq, int64_t{1}),
                      ContainsSubstring("non-string literal"));

    CHECK_THROWS_AS(eval_predicate(Predicate::conj({}), block), ExecError);
}

TEST_CASE("projection and concatenation") {
    Block block;
    block.add(make_column("a", std::vector<int64_t>{1, 2}));
    block.add(make_column("b", std::vector<double>{0.5, 1.5}));

    Block p = project_block(block, {"b"});
    REQUIRE(p.columns.size() == 1);
    CHECK(p.col("b").f64s() == std::vector<double>{0.5, 1.5});
    CHECK_THROWS_AS(project_block(block, {"zz"}), ExecError);

    Block two = merge_blocks({block, block});
    CHECK(two.rows == 4);
    CHECK(two.col("a").i64s() == std::vector<int64_t>{1, 2, 1, 2});

    Block other;
    other.add(make_column("a", std::vector<int64_t>{9}));
    CHECK_THROWS_WITH(merge_blocks({block, other}), ContainsSubstring("different schemas"));

    Block renamed;
    renamed.add(make_column("a", std::vector<int64_t>{1}));
    renamed.add(make_column("c", std::vector<double>{0.5}));
    CHECK_THROWS_WITH(merge_blocks({block, renamed}), ContainsSubstring("different schemas"));

    CHECK(merge_blocks({}).rows == 0);
}

namespace {

const std::vector<AggSpec> kAllAggs{{AggOp::Sum, "m", "total"},
                                    {AggOp::Count, "", "n"},
                                    {AggOp::Avg, "f", "mean"},
                                    {AggOp::Min, "m", "lo"},
                                    {AggOp::Max, "f", "hi"}};

} // namespace

TEST_CASE("partial aggregation matches the reference and sorts its groups") {
    std::mt19937_64 rng(23);
    const std::vector<std::vector<std::string>> groupings{{}, {"g"}, {"g", "s"}, {"s"}};

    for (int round = 0; round < 60; ++round) {
        CAPTURE(round);
        Block block = random_block(rng, rng() % 80); // sometimes empty
        const auto& group = groupings[round % groupings.size()];

        Block got = partial_aggregate(block, group, kAllAggs);
        Block want = ref::aggregate(block, group, kAllAggs, /*partial=*/true);

        std::string why;
        bool same = blocks_equal_canonical(got, want, 1e-9, &why);
        INFO(why);
        REQUIRE(same);

        // states carry the avg pair and everything else under its own name
        if (block.rows > 0) {
            CHECK_NOTHROW(got.col("mean.sum"));
            CHECK_NOTHROW(got.col("mean.count"));
            CHECK_NOTHROW(got.col("total"));
        }

        // output rows arrive sorted by the group key tuple
        for (uint64_t r = 1; r < got.rows; ++r) {
            std::vector<Value> prev, cur;
            for (const auto& gcol : group) {
                prev.push_back(got.col(gcol).value_at(r - 1));
                cur.push_back(got.col(gcol).value_at(r));
            }
            CHECK_FALSE(ref::ValueLess{}(cur, prev));
        }
    }
}

TEST_CASE("folding chunked partials equals aggregating the whole input") {
    std::mt19937_64 rng(37);
    const std::vector<std::vector<std::string>> groupings{{}, {"g"}, {"g", "s"}};

    for (int round = 0; round < 45; ++round) {
        CAPTURE(round);
        const auto& group = groupings[round % groupings.size()];
        size_t chunks = 1 + rng() % 4;

        std::vector<Block> raw;
        std::vector<Block> partials;
        for (size_t i = 0; i < chunks; ++i) {
            raw.push_back(random_block(rng, rng() % 50));
            partials.push_back(partial_aggregate(raw.back(), group, kAllAggs));
        }
        Block whole = merge_blocks(raw);

        Block folded = final_aggregate(merge_blocks(partials), group, kAllAggs);
        Block direct = ref::aggregate(ref::aggregate(whole, group, kAllAggs, true), group,
                                      kAllAggs, false);

        std::string why;
        bool same = blocks_equal_canonical(folded, direct, 1e-9, &why);
        INFO(why);
        REQUIRE(same);
    }
}

TEST_CASE("empty inputs aggregate to states or zeros by stage") {
    std::mt19937_64 rng(5);
    Block empty = random_block(rng, 0);

    SECTION("partial stays empty even globally") {
        Block p = partial_aggregate(empty, {}, kAllAggs);
        CHECK(p.rows == 0);
        CHECK(p.columns.size() == 6); // sum, count, avg pair, min, max
    }
    SECTION("final global emits one typed zero row") {
        Block p = partial_aggregate(empty, {}, kAllAggs);
        Block f = final_aggregate(p, {}, kAllAggs);
        REQUIRE(f.rows == 1);
        CHECK(std::get<int64_t>(f.col("total").value_at(0)) == 0);
        CHECK(std::get<int64_t>(f.col("n").value_at(0)) == 0);
        CHECK(std::get<double>(f.col("mean").value_at(0)) == 0.0);
        CHECK(std::get<int64_t>(f.col("lo").value_at(0)) == 0);
        CHECK(std::get<double>(f.col("hi").value_at(0)) == 0.0);
    }
    SECTION("final grouped emits nothing") {
        Block p = partial_aggregate(empty, {"g"}, kAllAggs);
        Block f = final_aggregate(p, {"g"}, kAllAggs);
        CHECK(f.rows == 0);
    }
}

TEST_CASE("the shuffle hash is plain 64-bit FNV-1a") {
    using detail::fnv1a64;
    CHECK(fnv1a64(nullptr, 0) == 14695981039346656037ULL);
    const uint8_t a[] = {'a'};
    CHECK(fnv1a64(a, 1) == 0xaf63dc4c8601ec8cULL);
    const uint8_t foobar[] = {'f', 'o', 'o', 'b', 'a', 'r'};
    CHECK(fnv1a64(foobar, 6) == 0x85944171f73967e8ULL);
}

TEST_CASE("shuffle placement is a pure function of the key value") {
    Column key = make_column("k", std::vector<int64_t>{5, -3, 5, 900, -3, 0});

    SECTION("equal values land on equal targets") {
        for (uint32_t fanout : {1u, 2u, 3u, 4u, 7u}) {
            CAPTURE(fanout);
            CHECK(shuffle_target(key, 0, fanout) == shuffle_target(key, 2, fanout));
            CHECK(shuffle_target(key, 1, fanout) == shuffle_target(key, 4, fanout));
            for (uint64_t r = 0; r < key.size(); ++r)
                CHECK(shuffle_target(key, r, fanout) < fanout);
        }
        CHECK_THROWS_AS(shuffle_target(key, 0, 0), ExecError);
    }
    SECTION("the position vector mirrors the per-row targets") {
        PositionVector pv = build_position_vector(key, 4);
        REQUIRE(pv.length() == key.size());
        CHECK(pv.bits_per_entry() == 2);
        for (uint64_t r = 0; r < key.size(); ++r)
            CHECK(pv.get(r) == shuffle_target(key, r, 4));
    }
    SECTION("masks partition the rows exactly") {
        auto masks = shuffle_masks(key, 3);
        REQUIRE(masks.size() == 3);
        uint64_t covered = 0;
        for (const auto& m : masks) covered += m.popcount();
        CHECK(covered == key.size());
        for (size_t i = 0; i < masks.size(); ++i)
            for (size_t j = i + 1; j < masks.size(); ++j)
                CHECK(combine_bitmaps(masks[i], masks[j], BitOp::And).popcount() == 0);
    }
    SECTION("scattering a block preserves the row multiset") {
        std::mt19937_64 rng(61);
        Block block = random_block(rng, 200);
        auto shards = shuffle_block(block, "g", 4);
        REQUIRE(shards.size() == 4);
        for (const auto& s : shards) CHECK(s.rows > 0); // 8 key values spread over 4 targets
        std::string why;
        bool same = blocks_equal_canonical(merge_blocks(shards), block, 0.0, &why);
        INFO(why);
        CHECK(same);
    }
}

TEST_CASE("hash join matches the reference interpreter") {
    std::mt19937_64 rng(73);
    for (int round = 0; round < 40; ++round) {
        CAPTURE(round);
        uint64_t nl = rng() % 60, nr = rng() % 25;
        std::vector<int64_t> lk, lv, rk, rv;
        for (uint64_t i = 0; i < nl; ++i) {
            lk.push_back(static_cast<int64_t>(rng() % 10));
            lv.push_back(static_cast<int64_t>(rng() % 100));
        }
        for (uint64_t i = 0; i < nr; ++i) {
            rk.push_back(static_cast<int64_t>(rng() % 10)); // plenty of duplicate keys
            rv.push_back(static_cast<int64_t>(rng() % 100));
        }
        Block left, right;
        left.add(make_column("k", lk));
        left.add(make_column("lv", lv));
        right.add(make_column("rk", rk));
        right.add(make_column("rv", rv));

        Block got = hash_join(left, right, {"k"}, {"rk"});

        std::map<std::string, std::vector<ColumnarPartition>> tables;
        ColumnarPartition pl{"l", 0, left}, pr{"r", 0, right};
        tables["l"].push_back(pl);
        tables["r"].push_back(pr);
        RefContext ctx;
        ctx.tables = &tables;
        Block want = ref_execute(PlanNode::hash_join(PlanNode::scan("l", {"k", "lv"}),
                                                     PlanNode::scan("r", {"rk", "rv"}), {"k"},
                                                     {"rk"}),
                                 ctx);

        std::string why;
        bool same = blocks_equal_canonical(got, want, 0.0, &why);
        INFO(why);
        REQUIRE(same);
    }
}

TEST_CASE("hash join validates its inputs") {
    Block left, right;
    left.add(make_column("k", std::vector<int64_t>{1}));
    left.add(make_column("v", std::vector<int64_t>{2}));
    right.add(make_column("k2", std::vector<int64_t>{1}));
    right.add(make_column("v", std::vector<int64_t>{3}));

    CHECK_THROWS_WITH(hash_join(left, right, {"k"}, {"k2"}),
                      ContainsSubstring("column collision on 'v'"));
    CHECK_THROWS_WITH(hash_join(left, right, {"k"}, {}),
                      ContainsSubstring("arity mismatch"));

    Block empty_right;
    empty_right.add(make_column("k2", std::vector<int64_t>{}));
    empty_right.add(make_column("w", std::vector<int64_t>{}));
    Block j = hash_join(left, empty_right, {"k"}, {"k2"});
    CHECK(j.rows == 0);
    REQUIRE(j.columns.size() == 3);
}
