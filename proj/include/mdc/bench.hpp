#pragma once

// Bench harness: synthetic datasets, the six query templates, strategy
// sweeps over storage power, CSV metrics, and the measured-vs-theory
// comparison of admitted request counts and wall times.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mdc/columnar.hpp"
#include "mdc/compute_engine.hpp"
#include "mdc/error.hpp"
#include "mdc/estimator.hpp"
#include "mdc/fragment.hpp"
#include "mdc/kernels.hpp"
#include "mdc/plan.hpp"
#include "mdc/reference.hpp"
#include "mdc/runner.hpp"
#include "mdc/runner_net.hpp"
#include "mdc/storage_engine.hpp"

namespace mdc::bench {

// ---------------------------------------------------------------------------
// Strategies map one-to-one onto arbiter policies.

enum class Strategy { None, Eager, Adaptive, AdaptivePa };

inline const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::None: return "none";
        case Strategy::Eager: return "eager";
        case Strategy::Adaptive: return "adaptive";
        case Strategy::AdaptivePa: return "adaptive-pa";
    }
    return "?";
}

inline Strategy parse_strategy(const std::string& s) {
    if (s == "none") return Strategy::None;
    if (s == "eager") return Strategy::Eager;
    if (s == "adaptive") return Strategy::Adaptive;
    if (s == "adaptive-pa") return Strategy::AdaptivePa;
    throw ExecError("unknown strategy '" + s + "'");
}

inline ArbiterPolicy policy_of(Strategy s) {
    switch (s) {
        case Strategy::None: return ArbiterPolicy::AllPushback;
        case Strategy::Eager: return ArbiterPolicy::AllPushdown;
        case Strategy::Adaptive: return ArbiterPolicy::Fifo;
        case Strategy::AdaptivePa: return ArbiterPolicy::PaAware;
    }
    return ArbiterPolicy::Fifo;
}

// ---------------------------------------------------------------------------
// Data generation. The fact table carries a uniform [0,1) predicate column,
// so a threshold t selects a fraction t of the rows in expectation; the
// dimension table has unique join keys covering the fact side's key range.

struct GenConfig {
    uint64_t rows = 1'000'000;
    uint32_t partitions = 32;
    uint64_t seed = 1;
    uint64_t dim_rows = 10'000;
    uint32_t dim_partitions = 2;
    int64_t groups = 64;       // distinct values of fact.g
    int64_t dim_groups = 16;   // distinct values of dim.dg
    int64_t attr_range = 1000; // dim.attr uniform in [0, attr_range)
};

namespace detail {

// One independent stream per (table, partition) so files are byte-stable
// regardless of generation order.
inline std::mt19937_64 part_rng(uint64_t seed, uint32_t table_tag, uint32_t pid) {
    std::seed_seq sq{seed, static_cast<uint64_t>(table_tag), static_cast<uint64_t>(pid)};
    return std::mt19937_64(sq);
}

} // namespace detail

inline uint64_t fact_rows_in(const GenConfig& cfg, uint32_t pid) {
    return cfg.rows / cfg.partitions + (pid < cfg.rows % cfg.partitions ? 1 : 0);
}

inline ColumnarPartition gen_fact_partition(const GenConfig& cfg, uint32_t pid) {
    auto rng = detail::part_rng(cfg.seed, 1, pid);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int64_t> join_key(0, static_cast<int64_t>(cfg.dim_rows) - 1);
    std::uniform_int_distribution<int64_t> shuf_key(0, (1 << 20) - 1);
    std::uniform_int_distribution<int64_t> group(0, cfg.groups - 1);
    std::uniform_int_distribution<int64_t> measure(-1000, 1000);

    uint64_t n = fact_rows_in(cfg, pid);
    std::vector<double> pred(n);
    std::vector<int64_t> kj(n), ks(n), g(n), m1(n), m2(n), m3(n), m4(n);
    for (uint64_t i = 0; i < n; ++i) {
        pred[i] = unit(rng);
        kj[i] = join_key(rng);
        ks[i] = shuf_key(rng);
        g[i] = group(rng);
        m1[i] = measure(rng);
        m2[i] = measure(rng);
        m3[i] = measure(rng);
        m4[i] = measure(rng);
    }
    ColumnarPartition p;
    p.table_name = "fact";
    p.partition_id = pid;
    p.data.rows = n;
    p.data.add(make_column("pred", std::move(pred)));
    p.data.add(make_column("k_join", std::move(kj)));
    p.data.add(make_column("k_shuf", std::move(ks)));
    p.data.add(make_column("g", std::move(g)));
    p.data.add(make_column("m1", std::move(m1)));
    p.data.add(make_column("m2", std::move(m2)));
    p.data.add(make_column("m3", std::move(m3)));
    p.data.add(make_column("m4", std::move(m4)));
    return p;
}

inline ColumnarPartition gen_dim_partition(const GenConfig& cfg, uint32_t pid) {
    auto rng = detail::part_rng(cfg.seed, 2, pid);
    std::uniform_int_distribution<int64_t> dgroup(0, cfg.dim_groups - 1);
    std::uniform_int_distribution<int64_t> attr(0, cfg.attr_range - 1);

    uint64_t per = cfg.dim_rows / cfg.dim_partitions;
    uint64_t first = pid * per;
    uint64_t n = pid + 1 == cfg.dim_partitions ? cfg.dim_rows - first : per;
    std::vector<int64_t> kd(n), dg(n), at(n);
    for (uint64_t i = 0; i < n; ++i) {
        kd[i] = static_cast<int64_t>(first + i); // unique across partitions
        dg[i] = dgroup(rng);
        at[i] = attr(rng);
    }
    ColumnarPartition p;
    p.table_name = "dim";
    p.partition_id = pid;
    p.data.rows = n;
    p.data.add(make_column("k_dim", std::move(kd)));
    p.data.add(make_column("dg", std::move(dg)));
    p.data.add(make_column("attr", std::move(at)));
    return p;
}

inline void generate_dataset(const GenConfig& cfg, const std::filesystem::path& dir) {
    if (cfg.partitions == 0 || cfg.dim_partitions == 0)
        throw ExecError("partition counts must be positive");
    if (cfg.rows < cfg.partitions || cfg.dim_rows < cfg.dim_partitions)
        throw ExecError("fewer rows than partitions");
    std::filesystem::create_directories(dir);
    for (uint32_t pid = 0; pid < cfg.partitions; ++pid)
        write_partition(gen_fact_partition(cfg, pid),
                        dir / ("fact__p" + std::to_string(pid) + ".mdc"));
    for (uint32_t pid = 0; pid < cfg.dim_partitions; ++pid)
        write_partition(gen_dim_partition(cfg, pid),
                        dir / ("dim__p" + std::to_string(pid) + ".mdc"));
}

// ---------------------------------------------------------------------------
// Tables held in memory: the oracle executes over them, templates build
// caches and prefilter bitmaps from them, and each cell gets a fresh engine.

using TableMap = std::map<std::string, std::vector<ColumnarPartition>>;

inline TableMap load_tables(const std::filesystem::path& dir) {
    TableMap out;
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.path().extension() == ".mdc") files.push_back(e.path());
    if (files.empty()) throw ExecError("no .mdc partitions under '" + dir.string() + "'");
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        ColumnarPartition p = read_partition(f);
        out[p.table_name].push_back(std::move(p));
    }
    for (auto& [name, parts] : out)
        std::sort(parts.begin(), parts.end(),
                  [](const auto& a, const auto& b) { return a.partition_id < b.partition_id; });
    return out;
}

inline StorageEngine engine_of(const TableMap& tables) {
    StorageEngine eng;
    for (const auto& [name, parts] : tables)
        for (const auto& p : parts) eng.add_partition(p);
    return eng;
}

inline const ColumnarPartition& table_part(const TableMap& tables, const std::string& name,
                                           uint32_t pid) {
    auto it = tables.find(name);
    if (it == tables.end()) throw ExecError("unknown table '" + name + "'");
    for (const auto& p : it->second)
        if (p.partition_id == pid) return p;
    throw ExecError("unknown partition " + name + "/" + std::to_string(pid));
}

// ---------------------------------------------------------------------------
// Query templates. Group keys and ranges match the generator's defaults; in
// exact-stats mode the hints are replaced by measured output fractions.

struct TemplateConfig {
    double selectivity = -1.0; // negative picks the template default
    bool bitmap = true;        // QT3/QT4: bitmap handoff vs shipping rows
    bool shuffle = true;       // QT5: scatter at storage vs at compute
    bool exact_stats = false;
    uint32_t fanout = 4;
};

struct PreparedQuery {
    std::vector<JobSpec> jobs;
    std::vector<PlanNode> oracles;   // logical plan per job
    std::vector<std::string> labels; // CSV query ids, parallel to jobs
    PinnedCache cache;
    bool use_cache = false;
    double selectivity = 0.0; // what the plans were built with
};

namespace detail {

constexpr int64_t kGroups = 64;      // planner's knowledge of fact.g
constexpr int64_t kAttrRange = 1000; // and of dim.attr's range

inline std::vector<AggSpec> sum_count(const std::string& col) {
    return {{AggOp::Sum, col, "total"}, {AggOp::Count, "", "n"}};
}

// Fragment ops are flat; drop the placeholder child a factory inserts.
inline PlanNode flat(PlanNode op) {
    op.children.clear();
    return op;
}

inline PlanNode agg_query(const std::string& measure, double s) {
    auto aggs = sum_count(measure);
    return PlanNode::final_aggregate(
        PlanNode::partial_aggregate(
            PlanNode::filter(PlanNode::scan("fact", {"pred", "g", measure}),
                             Predicate::cmp("pred", CmpOp::Lt, s)),
            {"g"}, aggs),
        {"g"}, aggs);
}

inline PlanNode join_query(const std::string& measure, double s) {
    PlanNode fact = PlanNode::project(
        PlanNode::filter(PlanNode::scan("fact", {"pred", "k_join", measure}),
                         Predicate::cmp("pred", CmpOp::Lt, s)),
        {"k_join", measure});
    PlanNode dim = PlanNode::project(
        PlanNode::filter(PlanNode::scan("dim", {"k_dim", "dg", "attr"}),
                         Predicate::cmp("attr", CmpOp::Lt, int64_t{200})),
        {"k_dim", "dg"});
    auto aggs = sum_count(measure);
    return PlanNode::final_aggregate(
        PlanNode::partial_aggregate(
            PlanNode::hash_join(std::move(fact), std::move(dim), {"k_join"}, {"k_dim"}),
            {"dg"}, aggs),
        {"dg"}, aggs);
}

inline PlanNode shuffle_query(double s, uint32_t fanout) {
    PlanNode fact = PlanNode::shuffle_by(
        PlanNode::filter(PlanNode::scan("fact", {"pred", "k_join", "m1"}),
                         Predicate::cmp("pred", CmpOp::Lt, s)),
        "k_join", fanout);
    PlanNode join = PlanNode::hash_join(std::move(fact),
                                        PlanNode::scan("dim", {"k_dim", "dg"}),
                                        {"k_join"}, {"k_dim"});
    auto aggs = sum_count("m1");
    return PlanNode::final_aggregate(
        PlanNode::partial_aggregate(std::move(join), {"dg"}, aggs), {"dg"}, aggs);
}

// Measured hint: run the fragment over the real partition and take the
// output row fraction. Aggregating fragments yield their group count.
inline double exact_hint(const PushdownRequest& req, const TableMap& tables) {
    const ColumnarPartition& part = table_part(tables, req.table, req.partition_id);
    Block base;
    base.rows = part.rows();
    for (const auto& name : req.accessed_columns()) base.add(part.data.col(name));
    FragmentOutput out = run_fragment_ops(req, std::move(base));
    uint64_t rows_out = out.bitmap && out.block.columns.empty() ? out.bitmap->popcount()
                                                                : out.block.rows;
    return part.rows() == 0 ? 1.0
                            : static_cast<double>(rows_out) / static_cast<double>(part.rows());
}

// hint(req) gives the planner's guess; exact-stats mode overrides it.
template <typename F>
void set_hints(std::vector<PushdownRequest>& reqs, const TableMap& tables, bool exact,
               F&& hint) {
    for (auto& r : reqs) r.selectivity_hint = exact ? exact_hint(r, tables) : hint(r);
}

inline double agg_hint(const PushdownRequest& req, const Catalog& cat, double s) {
    uint64_t rows = cat.partition(req.table, req.partition_id).rows;
    if (rows == 0) return 1.0;
    double out_rows = std::min<double>(static_cast<double>(kGroups),
                                       s * static_cast<double>(rows));
    return std::min(1.0, out_rows / static_cast<double>(rows));
}

} // namespace detail

inline PreparedQuery prepare_query(const std::string& id, const TableMap& tables,
                                   const Catalog& cat, const TemplateConfig& t) {
    using namespace detail;
    PreparedQuery q;
    auto pick = [&](double dflt) { return t.selectivity < 0.0 ? dflt : t.selectivity; };

    auto split_simple = [&](const PlanNode& plan, uint64_t first_id) {
        SplitOptions opts;
        opts.first_request_id = first_id;
        return split_pushdown(plan, cat, opts);
    };

    if (id == "QT1" || id == "QT2") {
        double s = pick(0.1);
        q.selectivity = s;
        PlanNode plan = id == "QT1" ? agg_query("m1", s) : join_query("m1", s);
        SplitResult split = split_simple(plan, 1);
        set_hints(split.requests, tables, t.exact_stats, [&](const PushdownRequest& r) {
            if (id == "QT1") return agg_hint(r, cat, s);
            return r.table == "fact" ? s
                                     : static_cast<double>(200) / kAttrRange;
        });
        JobSpec job;
        job.label = id;
        job.requests = std::move(split.requests);
        job.remainder = std::move(split.remainder);
        q.jobs.push_back(std::move(job));
        q.oracles.push_back(std::move(plan));
        q.labels.push_back(id);
        return q;
    }

    if (id == "QT3") {
        // Predicate evaluated at storage, grouping columns pinned at compute.
        // With the bitmap handoff only one bit per row crosses the wire; the
        // baseline ships the selected rows instead. Both bind filtered rows,
        // so the remainder aggregates at compute either way.
        double s = pick(0.9);
        q.selectivity = s;
        Predicate pred = Predicate::cmp("pred", CmpOp::Lt, s);
        PlanNode logical = agg_query("m1", s);
        auto aggs = sum_count("m1");

        std::vector<uint64_t> ids;
        JobSpec job;
        job.label = "QT3";
        uint64_t next_id = 1;
        for (const auto& part : cat.partitions("fact")) {
            PushdownRequest req;
            req.request_id = next_id++;
            req.table = "fact";
            req.partition_id = part.id;
            if (t.bitmap) {
                req.fragment = {PlanNode::scan("fact", {"pred"}),
                                flat(PlanNode::filter(PlanNode{}, pred))};
                BitmapDirective d;
                d.mode = BitmapDirective::Mode::SendBitmapToCompute;
                req.bitmap = d;
            } else {
                req.fragment = {PlanNode::scan("fact", {"pred", "g", "m1"}),
                                flat(PlanNode::filter(PlanNode{}, pred)),
                                flat(PlanNode::project(PlanNode{}, {"g", "m1"}))};
                req.selectivity_hint = s;
            }
            ids.push_back(req.request_id);
            job.requests.push_back(std::move(req));
        }
        if (t.exact_stats && !t.bitmap)
            set_hints(job.requests, tables, true, [](const PushdownRequest&) { return 1.0; });
        job.remainder = PlanNode::final_aggregate(
            PlanNode::partial_aggregate(PlanNode::stub(ids), {"g"}, aggs), {"g"}, aggs);
        if (t.bitmap) {
            job.bitmap_apply = BitmapApplySpec{{"g", "m1"}, {}};
            for (const auto& part : tables.at("fact")) {
                q.cache.pin("fact", part.partition_id, part.data.col("g"));
                q.cache.pin("fact", part.partition_id, part.data.col("m1"));
            }
            q.use_cache = true;
        }
        q.jobs.push_back(std::move(job));
        q.oracles.push_back(std::move(logical));
        q.labels.push_back("QT3");
        return q;
    }

    if (id == "QT4") {
        // The predicate's bitmap already sits at compute (built by an earlier
        // query over the same threshold); requests carry it, and storage
        // never reads the predicate column. The baseline re-filters.
        double s = pick(0.01);
        q.selectivity = s;
        Predicate pred = Predicate::cmp("pred", CmpOp::Lt, s);
        PlanNode logical = agg_query("m1", s);
        auto aggs = sum_count("m1");

        if (!t.bitmap) {
            SplitResult split = split_simple(logical, 1);
            set_hints(split.requests, tables, t.exact_stats,
                      [&](const PushdownRequest& r) { return agg_hint(r, cat, s); });
            JobSpec job;
            job.label = "QT4";
            job.requests = std::move(split.requests);
            job.remainder = std::move(split.remainder);
            q.jobs.push_back(std::move(job));
        } else {
            std::vector<uint64_t> ids;
            JobSpec job;
            job.label = "QT4";
            uint64_t next_id = 1;
            for (const auto& part : tables.at("fact")) {
                Block pred_col;
                pred_col.rows = part.rows();
                pred_col.add(part.data.col("pred"));
                SelectionBitmap bm = eval_predicate(pred, pred_col);

                PushdownRequest req;
                req.request_id = next_id++;
                req.table = "fact";
                req.partition_id = part.partition_id;
                req.fragment = {PlanNode::scan("fact", {"g", "m1"}),
                                flat(PlanNode::partial_aggregate(PlanNode{}, {"g"}, aggs))};
                BitmapDirective d;
                d.mode = BitmapDirective::Mode::ApplyAttachedBitmap;
                d.bitmap = std::move(bm);
                req.bitmap = std::move(d);
                ids.push_back(req.request_id);
                job.requests.push_back(std::move(req));
            }
            set_hints(job.requests, tables, t.exact_stats,
                      [&](const PushdownRequest& r) { return agg_hint(r, cat, s); });
            job.remainder = PlanNode::final_aggregate(PlanNode::stub(ids), {"g"}, aggs);
            q.jobs.push_back(std::move(job));
        }
        q.oracles.push_back(std::move(logical));
        q.labels.push_back("QT4");
        return q;
    }

    if (id == "QT5") {
        double s = pick(0.9);
        q.selectivity = s;
        PlanNode plan = shuffle_query(s, t.fanout);
        SplitOptions opts;
        opts.push_shuffle = true;
        opts.first_request_id = 1;
        SplitResult split = split_pushdown(plan, cat, opts);
        set_hints(split.requests, tables, t.exact_stats,
                  [&](const PushdownRequest& r) { return r.table == "fact" ? s : 1.0; });
        JobSpec job;
        job.label = "QT5";
        job.requests = std::move(split.requests);
        job.remainder = std::move(split.remainder);
        job.sharded = detect_sharded(job.remainder);
        if (!job.sharded) throw ExecError("QT5 remainder did not shard");
        for (auto& r : job.requests) {
            if (!r.shuffle_params) continue;
            job.scatter_ids.insert(r.request_id);
            if (!t.shuffle) {
                job.compute_shuffle = r.shuffle_params;
                job.scatter_at_compute = true;
                r.shuffle_params.reset();
            }
        }
        q.jobs.push_back(std::move(job));
        q.oracles.push_back(std::move(plan));
        q.labels.push_back("QT5");
        return q;
    }

    if (id == "QT6") {
        // Concurrent pair. Query a aggregates hard and gains a lot from
        // pushdown; query b joins a barely filtered fact side and gains
        // little. Both read the same fact bytes, so the arbiter's choice is
        // about output size, not input size.
        double s_a = pick(0.1);
        double s_b = 0.9;
        q.selectivity = s_a;
        PlanNode plan_a = agg_query("m1", s_a);
        PlanNode plan_b = join_query("m2", s_b);

        SplitResult sa = split_simple(plan_a, 1);
        set_hints(sa.requests, tables, t.exact_stats,
                  [&](const PushdownRequest& r) { return agg_hint(r, cat, s_a); });
        SplitResult sb = split_simple(plan_b, 1001);
        set_hints(sb.requests, tables, t.exact_stats, [&](const PushdownRequest& r) {
            return r.table == "fact" ? s_b : static_cast<double>(200) / kAttrRange;
        });

        JobSpec a;
        a.label = "QT6a";
        a.requests = std::move(sa.requests);
        a.remainder = std::move(sa.remainder);
        JobSpec b;
        b.label = "QT6b";
        b.requests = std::move(sb.requests);
        b.remainder = std::move(sb.remainder);
        q.jobs.push_back(std::move(a));
        q.jobs.push_back(std::move(b));
        q.oracles.push_back(std::move(plan_a));
        q.oracles.push_back(std::move(plan_b));
        q.labels.push_back("QT6a");
        q.labels.push_back("QT6b");
        return q;
    }

    throw ExecError("unknown query template '" + id + "'");
}

// ---------------------------------------------------------------------------
// Sweep execution and the metrics CSV.

constexpr const char* kMetricsHeader =
    "query,strategy,power,wall_time,bytes_s2c,bytes_c2c,bytes_c2s,admitted,pushed_back,"
    "t_pd_path,t_pb_path,t_nonpush,cols_accessed,bytes_scanned";

struct CellMetrics {
    std::string query;
    std::string strategy;
    double power = 1.0;
    JobResult job;
};

inline std::string format_metrics_row(const CellMetrics& m) {
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "%s,%s,%g,%.9f,%llu,%llu,%llu,%u,%u,%.9f,%.9f,%.9f,%llu,%llu",
                  m.query.c_str(), m.strategy.c_str(), m.power, m.job.wall,
                  static_cast<unsigned long long>(m.job.hops.s2c),
                  static_cast<unsigned long long>(m.job.hops.c2c),
                  static_cast<unsigned long long>(m.job.hops.c2s), m.job.admitted,
                  m.job.pushed_back, m.job.t_pd, m.job.t_pb, m.job.t_nonpush,
                  static_cast<unsigned long long>(m.job.cols_accessed),
                  static_cast<unsigned long long>(m.job.bytes_scanned));
    return buf;
}

inline void write_metrics_csv(const std::vector<CellMetrics>& rows, std::ostream& os) {
    os << kMetricsHeader << '\n';
    for (const auto& r : rows) os << format_metrics_row(r) << '\n';
}

struct RunOptions {
    std::string query = "QT1";
    Strategy strategy = Strategy::Adaptive;
    std::vector<double> powers{1.0};
    TemplateConfig tmpl;
    ResourceEnvelope env;
    uint64_t shuffle_cap = 8ull << 20;
    bool trace = false;
    bool net = false;       // run over loopback TCP instead of virtual time
    double net_pace = 200.0;
};

struct RunOutput {
    std::vector<CellMetrics> rows;
    std::vector<std::string> mismatches; // oracle failures; empty means clean
    std::vector<TraceRecord> trace;
};

// One cell per power level: fresh engine, fresh scenario, oracle re-check.
inline RunOutput run_bench(const TableMap& tables, const RunOptions& opt) {
    RunOutput out;
    for (double power : opt.powers) {
        StorageEngine eng = engine_of(tables);
        PreparedQuery q = prepare_query(opt.query, tables, eng.catalog(), opt.tmpl);
        ScenarioConfig cfg;
        cfg.env = opt.env;
        cfg.power = power;
        cfg.policy = policy_of(opt.strategy);
        cfg.shuffle_cap = opt.shuffle_cap;
        cfg.trace = opt.trace;
        const PinnedCache* cache = q.use_cache ? &q.cache : nullptr;
        ScenarioResult res = opt.net
                                 ? run_scenario_net(eng, cache, q.jobs, cfg,
                                                    NetOptions{opt.net_pace})
                                 : run_scenario_sim(eng, cache, q.jobs, cfg);

        RefContext ctx;
        ctx.tables = &tables;
        for (size_t i = 0; i < res.jobs.size(); ++i) {
            Block want = ref_execute(q.oracles[i], ctx);
            std::string why;
            if (!blocks_equal_canonical(res.jobs[i].result, want, 1e-9, &why)) {
                char head[128];
                std::snprintf(head, sizeof(head), "%s/%s/power=%g: ", q.labels[i].c_str(),
                              strategy_name(opt.strategy), power);
                out.mismatches.push_back(head + why);
            }
            CellMetrics m;
            m.query = q.labels[i];
            m.strategy = strategy_name(opt.strategy);
            m.power = power;
            m.job = std::move(res.jobs[i]);
            out.rows.push_back(std::move(m));
        }
        for (auto& t : res.trace) out.trace.push_back(std::move(t));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Theory comparison: measure k from the two baselines, then hold the
// adaptive run against the optimal split.

struct TheoryRow {
    std::string query;
    double power = 1.0;
    double k = 0.0;
    uint32_t n_requests = 0;
    uint32_t n_opt = 0;
    uint32_t n_admitted = 0;
    double t_npd = 0.0;
    double t_eager = 0.0;
    double t_adaptive = 0.0;
    double t_opt = 0.0; // optimal pushable time plus the fixed tail
    double gap = 0.0;   // t_adaptive / t_opt
};

constexpr const char* kGapsHeader =
    "query,power,k,n_requests,n_opt,n_admitted,t_npd,t_eager,t_adaptive,t_opt,gap";

inline std::string format_gaps_row(const TheoryRow& r) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), "%s,%g,%.6f,%u,%u,%u,%.9f,%.9f,%.9f,%.9f,%.6f",
                  r.query.c_str(), r.power, r.k, r.n_requests, r.n_opt, r.n_admitted,
                  r.t_npd, r.t_eager, r.t_adaptive, r.t_opt, r.gap);
    return buf;
}

inline void write_gaps_csv(const std::vector<TheoryRow>& rows, std::ostream& os) {
    os << kGapsHeader << '\n';
    for (const auto& r : rows) os << format_gaps_row(r) << '\n';
}

// k_override < 0 means measure k from the none/eager rows; the override
// exists for synthetic homogeneous-request experiments.
inline std::vector<TheoryRow> compare_to_theory(const std::vector<CellMetrics>& rows,
                                                double k_override = -1.0) {
    std::map<std::pair<std::string, double>, std::map<std::string, const CellMetrics*>> cells;
    for (const auto& r : rows) cells[{r.query, r.power}][r.strategy] = &r;

    std::vector<TheoryRow> out;
    for (const auto& [key, by_strategy] : cells) {
        auto none = by_strategy.find("none");
        auto eager = by_strategy.find("eager");
        auto adaptive = by_strategy.find("adaptive");
        if (adaptive == by_strategy.end()) adaptive = by_strategy.find("adaptive-pa");
        if (none == by_strategy.end() || eager == by_strategy.end() ||
            adaptive == by_strategy.end())
            continue; // an incomplete cell has nothing to compare

        const JobResult& jn = none->second->job;
        const JobResult& je = eager->second->job;
        const JobResult& ja = adaptive->second->job;

        TheoryRow t;
        t.query = key.first;
        t.power = key.second;
        t.n_requests = ja.admitted + ja.pushed_back;
        t.n_admitted = ja.admitted;
        t.t_npd = jn.wall;
        t.t_eager = je.wall;
        t.t_adaptive = ja.wall;

        double pushable_npd = std::max(0.0, jn.wall - jn.t_nonpush);
        double pushable_e = std::max(0.0, je.wall - je.t_nonpush);
        SplitPoint sp;
        if (k_override >= 0.0) {
            sp.k = k_override;
            double ideal =
                sp.k / (sp.k + 1.0) * static_cast<double>(t.n_requests);
            sp.n_pushdown = static_cast<uint32_t>(
                std::min<double>(std::floor(ideal + 0.5), t.n_requests));
            sp.t_opt = pushable_npd / (sp.k + 1.0);
        } else {
            sp = optimal_split(pushable_npd, pushable_e, t.n_requests);
        }
        t.k = sp.k;
        t.n_opt = sp.n_pushdown;
        t.t_opt = sp.t_opt + ja.t_nonpush;
        t.gap = t.t_opt > 0.0 ? t.t_adaptive / t.t_opt : 0.0;
        out.push_back(std::move(t));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reading metrics back for `bench theory`.

inline std::vector<CellMetrics> read_metrics_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw ExecError("metrics file is empty");
    if (line != kMetricsHeader)
        throw ExecError("metrics header does not match: got '" + line + "'");
    std::vector<CellMetrics> out;
    size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (f.size() != 14)
            throw ExecError("metrics line " + std::to_string(lineno) + " has " +
                            std::to_string(f.size()) + " fields, want 14");
        CellMetrics m;
        m.query = f[0];
        m.strategy = f[1];
        m.power = std::stod(f[2]);
        m.job.wall = std::stod(f[3]);
        m.job.hops.s2c = std::stoull(f[4]);
        m.job.hops.c2c = std::stoull(f[5]);
        m.job.hops.c2s = std::stoull(f[6]);
        m.job.admitted = static_cast<uint32_t>(std::stoul(f[7]));
        m.job.pushed_back = static_cast<uint32_t>(std::stoul(f[8]));
        m.job.t_pd = std::stod(f[9]);
        m.job.t_pb = std::stod(f[10]);
        m.job.t_nonpush = std::stod(f[11]);
        m.job.cols_accessed = std::stoull(f[12]);
        m.job.bytes_scanned = std::stoull(f[13]);
        out.push_back(std::move(m));
    }
    return out;
}

} // namespace mdc::bench
