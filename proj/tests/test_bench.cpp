#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mdc/bench.hpp"

using namespace mdc;
using namespace mdc::bench;
namespace fs = std::filesystem;

namespace {

GenConfig small_config(uint64_t seed = 7) {
    GenConfig cfg;
    cfg.rows = 8000;
    cfg.partitions = 4;
    cfg.dim_rows = 500;
    cfg.dim_partitions = 2;
    cfg.seed = seed;
    return cfg;
}

std::vector<char> slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

} // namespace

TEST_CASE("dataset generation is deterministic per seed") {
    TempDir a("mdc_bench_gen_a"), b("mdc_bench_gen_b"), c("mdc_bench_gen_c");
    generate_dataset(small_config(7), a.path);
    generate_dataset(small_config(7), b.path);
    generate_dataset(small_config(8), c.path);

    size_t files = 0;
    for (const auto& e : fs::directory_iterator(a.path)) {
        ++files;
        auto name = e.path().filename();
        CHECK(slurp(a.path / name) == slurp(b.path / name));
    }
    CHECK(files == 6); // 4 fact + 2 dim partitions

    bool any_differs = false;
    for (const auto& e : fs::directory_iterator(a.path)) {
        auto name = e.path().filename();
        if (slurp(a.path / name) != slurp(c.path / name)) any_differs = true;
    }
    CHECK(any_differs);
}

TEST_CASE("row counts are conserved across partitions") {
    GenConfig cfg = small_config();
    cfg.rows = 1003; // does not divide evenly
    cfg.partitions = 4;
    uint64_t total = 0;
    for (uint32_t pid = 0; pid < cfg.partitions; ++pid) {
        uint64_t n = fact_rows_in(cfg, pid);
        CHECK(gen_fact_partition(cfg, pid).rows() == n);
        total += n;
    }
    CHECK(total == cfg.rows);
}

TEST_CASE("predicate column hits a threshold at the expected rate") {
    GenConfig cfg;
    cfg.rows = 1'000'000;
    cfg.partitions = 8;
    cfg.seed = 3;
    uint64_t hits = 0;
    for (uint32_t pid = 0; pid < cfg.partitions; ++pid) {
        ColumnarPartition p = gen_fact_partition(cfg, pid);
        for (double v : p.data.col("pred").f64s()) {
            REQUIRE(v >= 0.0);
            REQUIRE(v < 1.0);
            if (v < 0.25) ++hits;
        }
    }
    double frac = static_cast<double>(hits) / cfg.rows;
    CHECK(frac == Catch::Approx(0.25).margin(0.005));
}

TEST_CASE("dimension keys cover the fact join key range exactly once") {
    GenConfig cfg = small_config();
    std::set<int64_t> keys;
    for (uint32_t pid = 0; pid < cfg.dim_partitions; ++pid) {
        ColumnarPartition p = gen_dim_partition(cfg, pid);
        for (int64_t k : p.data.col("k_dim").i64s()) keys.insert(k);
    }
    CHECK(keys.size() == cfg.dim_rows);
    CHECK(*keys.begin() == 0);
    CHECK(*keys.rbegin() == static_cast<int64_t>(cfg.dim_rows) - 1);
}

TEST_CASE("every template and strategy matches the in-memory oracle") {
    TempDir d("mdc_bench_all");
    generate_dataset(small_config(), d.path);
    TableMap tables = load_tables(d.path);

    for (const std::string qid : {"QT1", "QT2", "QT3", "QT4", "QT5", "QT6"}) {
        for (Strategy st :
             {Strategy::None, Strategy::Eager, Strategy::Adaptive, Strategy::AdaptivePa}) {
            RunOptions opt;
            opt.query = qid;
            opt.strategy = st;
            opt.powers = {0.25, 1.0};
            RunOutput out = run_bench(tables, opt);
            INFO(qid << "/" << strategy_name(st));
            for (const auto& m : out.mismatches) UNSCOPED_INFO(m);
            CHECK(out.mismatches.empty());
            CHECK(out.rows.size() == (qid == "QT6" ? 4u : 2u));
        }
    }
}

TEST_CASE("mode flags pick the alternate implementations") {
    TempDir d("mdc_bench_modes");
    generate_dataset(small_config(), d.path);
    TableMap tables = load_tables(d.path);

    SECTION("row shipping instead of bitmaps") {
        for (const std::string qid : {"QT3", "QT4"}) {
            RunOptions opt;
            opt.query = qid;
            opt.tmpl.bitmap = false;
            RunOutput out = run_bench(tables, opt);
            CHECK(out.mismatches.empty());
        }
    }
    SECTION("scatter at compute instead of storage") {
        // Eager keeps every scatter at storage; under the adaptive policies a
        // pushed-back scatter partitions at its home node and relays shards.
        RunOptions opt;
        opt.query = "QT5";
        opt.strategy = Strategy::Eager;
        opt.tmpl.shuffle = false;
        RunOutput base = run_bench(tables, opt);
        CHECK(base.mismatches.empty());
        CHECK(base.rows[0].job.hops.c2c_base_table > 0);

        opt.tmpl.shuffle = true;
        RunOutput push = run_bench(tables, opt);
        CHECK(push.mismatches.empty());
        CHECK(push.rows[0].job.hops.c2c_base_table == 0);
    }
    SECTION("exact stats replace planner hints") {
        RunOptions opt;
        opt.query = "QT2";
        opt.tmpl.exact_stats = true;
        RunOutput out = run_bench(tables, opt);
        CHECK(out.mismatches.empty());
    }
}

TEST_CASE("bitmap handoff sends fewer storage bytes than row shipping") {
    TempDir d("mdc_bench_bitmap_bytes");
    generate_dataset(small_config(), d.path);
    TableMap tables = load_tables(d.path);

    RunOptions opt;
    opt.query = "QT3";
    opt.tmpl.selectivity = 0.9;
    RunOutput with_bitmap = run_bench(tables, opt);
    opt.tmpl.bitmap = false;
    RunOutput shipping = run_bench(tables, opt);
    REQUIRE(with_bitmap.mismatches.empty());
    REQUIRE(shipping.mismatches.empty());
    CHECK(with_bitmap.rows[0].job.hops.s2c < shipping.rows[0].job.hops.s2c / 4);
}

TEST_CASE("attached bitmaps skip the predicate column at storage") {
    TempDir d("mdc_bench_qt4_reads");
    generate_dataset(small_config(), d.path);
    TableMap tables = load_tables(d.path);

    StorageEngine eng = engine_of(tables);
    TemplateConfig t;
    PreparedQuery q = prepare_query("QT4", tables, eng.catalog(), t);
    ScenarioConfig cfg;
    cfg.policy = ArbiterPolicy::AllPushdown;
    ScenarioResult res = run_scenario_sim(eng, nullptr, q.jobs, cfg);
    REQUIRE(res.jobs.size() == 1);
    for (const auto& part : tables.at("fact"))
        CHECK(eng.counters().reads("fact", part.partition_id, "pred") == 0);

    StorageEngine eng2 = engine_of(tables);
    TemplateConfig t2;
    t2.bitmap = false;
    PreparedQuery q2 = prepare_query("QT4", tables, eng2.catalog(), t2);
    ScenarioResult res2 = run_scenario_sim(eng2, nullptr, q2.jobs, cfg);
    CHECK(res2.jobs[0].bytes_scanned > res.jobs[0].bytes_scanned);
    uint64_t pred_reads = 0;
    for (const auto& part : tables.at("fact"))
        pred_reads += eng2.counters().reads("fact", part.partition_id, "pred");
    CHECK(pred_reads == tables.at("fact").size());
}

TEST_CASE("metrics CSV writes the golden header and round-trips") {
    TempDir d("mdc_bench_csv");
    generate_dataset(small_config(), d.path);
    TableMap tables = load_tables(d.path);

    std::vector<CellMetrics> rows;
    for (Strategy st : {Strategy::None, Strategy::Eager, Strategy::Adaptive}) {
        RunOptions opt;
        opt.query = "QT1";
        opt.strategy = st;
        opt.powers = {0.5, 1.0};
        RunOutput out = run_bench(tables, opt);
        REQUIRE(out.mismatches.empty());
        for (auto& r : out.rows) rows.push_back(std::move(r));
    }

    std::ostringstream os;
    write_metrics_csv(rows, os);
    std::string text = os.str();
    CHECK(text.substr(0, text.find('\n')) ==
          "query,strategy,power,wall_time,bytes_s2c,bytes_c2c,bytes_c2s,admitted,pushed_back,"
          "t_pd_path,t_pb_path,t_nonpush,cols_accessed,bytes_scanned");

    std::istringstream is(text);
    auto parsed = read_metrics_csv(is);
    REQUIRE(parsed.size() == rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        CHECK(parsed[i].query == rows[i].query);
        CHECK(parsed[i].strategy == rows[i].strategy);
        CHECK(parsed[i].power == rows[i].power);
        CHECK(parsed[i].job.hops.s2c == rows[i].job.hops.s2c);
        CHECK(parsed[i].job.admitted == rows[i].job.admitted);
        // times print with 9 decimals, so round-trip is absolute to 5e-10
        CHECK(parsed[i].job.wall == Catch::Approx(rows[i].job.wall).margin(5e-10));
    }

    std::istringstream bad("not,the,header\n");
    CHECK_THROWS_AS(read_metrics_csv(bad), ExecError);
    std::istringstream short_row(std::string(kMetricsHeader) + "\nQT1,none,1\n");
    CHECK_THROWS_AS(read_metrics_csv(short_row), ExecError);
}

TEST_CASE("identical runs produce byte-identical CSV output") {
    TempDir d("mdc_bench_repeat");
    generate_dataset(small_config(), d.path);
    TableMap tables = load_tables(d.path);

    auto once = [&] {
        RunOptions opt;
        opt.query = "QT2";
        opt.strategy = Strategy::Adaptive;
        opt.powers = {0.125, 0.5, 1.0};
        RunOutput out = run_bench(tables, opt);
        REQUIRE(out.mismatches.empty());
        std::ostringstream os;
        write_metrics_csv(out.rows, os);
        return os.str();
    };
    CHECK(once() == once());
}

TEST_CASE("theory comparison recovers the split arithmetic") {
    auto cell = [](const std::string& q, double power, const std::string& st, double wall,
                   double nonpush, uint32_t admitted, uint32_t pushed) {
        CellMetrics m;
        m.query = q;
        m.power = power;
        m.strategy = st;
        m.job.wall = wall;
        m.job.t_nonpush = nonpush;
        m.job.admitted = admitted;
        m.job.pushed_back = pushed;
        return m;
    };

    SECTION("k from the two baselines") {
        // pushable: npd 3.0, eager 1.0, so k = 3 and n_opt = 24 of 32
        std::vector<CellMetrics> rows{cell("QT1", 1.0, "none", 3.1, 0.1, 0, 32),
                                      cell("QT1", 1.0, "eager", 1.1, 0.1, 32, 0),
                                      cell("QT1", 1.0, "adaptive", 0.9, 0.1, 24, 8)};
        auto gaps = compare_to_theory(rows);
        REQUIRE(gaps.size() == 1);
        CHECK(gaps[0].k == Catch::Approx(3.0));
        CHECK(gaps[0].n_opt == 24);
        CHECK(gaps[0].n_requests == 32);
        CHECK(gaps[0].n_admitted == 24);
        // t_opt = 3.0 / 4 + 0.1 nonpush
        CHECK(gaps[0].t_opt == Catch::Approx(0.85));
        CHECK(gaps[0].gap == Catch::Approx(0.9 / 0.85));
    }

    SECTION("incomplete strategy sets are skipped") {
        std::vector<CellMetrics> rows{cell("QT1", 1.0, "none", 3.0, 0.0, 0, 32),
                                      cell("QT1", 1.0, "adaptive", 1.0, 0.0, 24, 8)};
        CHECK(compare_to_theory(rows).empty());
    }

    SECTION("adaptive-pa substitutes when adaptive is absent") {
        std::vector<CellMetrics> rows{cell("QT2", 0.5, "none", 2.0, 0.0, 0, 10),
                                      cell("QT2", 0.5, "eager", 2.0, 0.0, 10, 0),
                                      cell("QT2", 0.5, "adaptive-pa", 1.2, 0.0, 5, 5)};
        auto gaps = compare_to_theory(rows);
        REQUIRE(gaps.size() == 1);
        CHECK(gaps[0].k == Catch::Approx(1.0));
        CHECK(gaps[0].n_opt == 5);
        CHECK(gaps[0].t_opt == Catch::Approx(1.0));
    }

    SECTION("override pins k") {
        std::vector<CellMetrics> rows{cell("QT1", 1.0, "none", 4.0, 0.0, 0, 10),
                                      cell("QT1", 1.0, "eager", 2.0, 0.0, 10, 0),
                                      cell("QT1", 1.0, "adaptive", 2.0, 0.0, 7, 3)};
        auto gaps = compare_to_theory(rows, 4.0);
        REQUIRE(gaps.size() == 1);
        CHECK(gaps[0].k == Catch::Approx(4.0));
        CHECK(gaps[0].n_opt == 8);
        CHECK(gaps[0].t_opt == Catch::Approx(0.8));
    }
}

TEST_CASE("strategy names parse both ways") {
    for (Strategy st :
         {Strategy::None, Strategy::Eager, Strategy::Adaptive, Strategy::AdaptivePa})
        CHECK(parse_strategy(strategy_name(st)) == st);
    CHECK_THROWS_AS(parse_strategy("fifo"), ExecError);
}
