// bench: data generator, scenario runner and theory comparison CLI.
//
//   bench gen    --rows N --partitions P --seed S --out DIR
//   bench run    --data DIR --query QT1..QT6 --strategy LIST --power LIST
//                --out metrics.csv [--selectivity S] [--mode sim|net]
//                [--exact-stats] [--no-bitmap] [--no-shuffle] [--trace]
//   bench theory --metrics metrics.csv --out gaps.csv [--k K]
//
// Exit code 2 if any cell's result table disagrees with the in-process
// oracle; 1 on usage or I/O errors.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "mdc/bench.hpp"

namespace {

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

int cmd_gen(uint64_t rows, uint32_t partitions, uint64_t seed, const std::string& out_dir,
            uint64_t dim_rows, uint32_t dim_partitions) {
    mdc::bench::GenConfig cfg;
    cfg.rows = rows;
    cfg.partitions = partitions;
    cfg.seed = seed;
    cfg.dim_rows = dim_rows;
    cfg.dim_partitions = dim_partitions;
    mdc::bench::generate_dataset(cfg, out_dir);
    std::cout << "wrote " << partitions << " fact + " << dim_partitions
              << " dim partitions (" << rows << " + " << dim_rows << " rows) to " << out_dir
              << "\n";
    return 0;
}

int cmd_run(const std::string& data_dir, const std::string& query,
            const std::string& strategies, const std::string& powers, double selectivity,
            const std::string& mode, const std::string& out_path, bool exact_stats,
            bool no_bitmap, bool no_shuffle, bool trace, double pace, uint64_t cap) {
    using namespace mdc::bench;

    RunOptions opt;
    opt.query = query;
    opt.tmpl.selectivity = selectivity;
    opt.tmpl.exact_stats = exact_stats;
    opt.tmpl.bitmap = !no_bitmap;
    opt.tmpl.shuffle = !no_shuffle;
    opt.trace = trace;
    opt.shuffle_cap = cap;
    if (mode == "net") {
        opt.net = true;
        opt.net_pace = pace;
    } else if (mode != "sim") {
        std::cerr << "unknown mode '" << mode << "' (sim or net)\n";
        return 1;
    }
    opt.powers.clear();
    for (const auto& p : split_list(powers)) opt.powers.push_back(std::stod(p));
    if (opt.powers.empty()) {
        std::cerr << "at least one power level is required\n";
        return 1;
    }

    TableMap tables = load_tables(data_dir);
    std::vector<CellMetrics> rows;
    bool mismatch = false;
    for (const auto& name : split_list(strategies)) {
        opt.strategy = parse_strategy(name);
        RunOutput out = run_bench(tables, opt);
        for (const auto& m : out.mismatches) {
            std::cerr << "oracle mismatch: " << m << "\n";
            mismatch = true;
        }
        for (auto& r : out.rows) rows.push_back(std::move(r));
        for (const auto& t : out.trace) std::cout << mdc::format_trace_line(t) << "\n";
    }

    std::ofstream os(out_path, std::ios::binary);
    if (!os) {
        std::cerr << "cannot open '" << out_path << "' for writing\n";
        return 1;
    }
    write_metrics_csv(rows, os);
    std::cout << "wrote " << rows.size() << " metric rows to " << out_path << "\n";
    return mismatch ? 2 : 0;
}

int cmd_theory(const std::string& metrics_path, const std::string& out_path, double k) {
    using namespace mdc::bench;
    std::ifstream is(metrics_path, std::ios::binary);
    if (!is) {
        std::cerr << "cannot open '" << metrics_path << "'\n";
        return 1;
    }
    std::vector<CellMetrics> rows = read_metrics_csv(is);
    std::vector<TheoryRow> gaps = compare_to_theory(rows, k);
    if (gaps.empty())
        std::cerr << "warning: no (query, power) group had none, eager, and adaptive rows\n";
    std::ofstream os(out_path, std::ios::binary);
    if (!os) {
        std::cerr << "cannot open '" << out_path << "' for writing\n";
        return 1;
    }
    write_gaps_csv(gaps, os);
    std::cout << "wrote " << gaps.size() << " gap rows to " << out_path << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"storage-pushdown benchmark harness"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
    uint64_t rows = 1'000'000, seed = 1, dim_rows = 10'000;
    uint32_t partitions = 32, dim_partitions = 2;
    std::string out_dir;
    gen->add_option("--rows", rows, "fact table rows");
    gen->add_option("--partitions", partitions, "fact table partitions");
    gen->add_option("--seed", seed, "generator seed");
    gen->add_option("--dim-rows", dim_rows, "dimension table rows");
    gen->add_option("--dim-partitions", dim_partitions, "dimension table partitions");
    gen->add_option("--out", out_dir, "output directory")->required();

    auto* run = app.add_subcommand("run", "run a query template sweep");
    std::string data_dir, query = "QT1", strategies = "adaptive", powers = "1.0";
    std::string mode = "sim", metrics_out = "metrics.csv";
    double selectivity = -1.0, pace = 200.0;
    uint64_t cap = 8ull << 20;
    bool exact_stats = false, no_bitmap = false, no_shuffle = false, trace = false;
    run->add_option("--data", data_dir, "dataset directory from `bench gen`")->required();
    run->add_option("--query", query, "QT1..QT6");
    run->add_option("--strategy", strategies, "comma list of none|eager|adaptive|adaptive-pa");
    run->add_option("--power", powers, "comma list of storage power fractions in (0,1]");
    run->add_option("--selectivity", selectivity, "predicate selectivity (template default if unset)");
    run->add_option("--mode", mode, "sim (virtual time) or net (loopback TCP)");
    run->add_option("--out", metrics_out, "metrics CSV path");
    run->add_flag("--exact-stats", exact_stats, "use measured selectivities instead of hints");
    run->add_flag("--no-bitmap", no_bitmap, "QT3/QT4: ship rows instead of bitmaps");
    run->add_flag("--no-shuffle", no_shuffle, "QT5: scatter at compute instead of storage");
    run->add_flag("--trace", trace, "print the sim event trace to stdout");
    run->add_option("--pace", pace, "net mode: real seconds per model second");
    run->add_option("--cap", cap, "shuffle buffer cap in bytes");

    auto* theory = app.add_subcommand("theory", "compare measured runs with the optimal split");
    std::string metrics_in, gaps_out = "gaps.csv";
    double k_override = -1.0;
    theory->add_option("--metrics", metrics_in, "metrics CSV from `bench run`")->required();
    theory->add_option("--out", gaps_out, "gap report CSV path");
    theory->add_option("--k", k_override, "override the measured speedup factor k");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen(rows, partitions, seed, out_dir, dim_rows, dim_partitions);
        if (run->parsed())
            return cmd_run(data_dir, query, strategies, powers, selectivity, mode, metrics_out,
                           exact_stats, no_bitmap, no_shuffle, trace, pace, cap);
        if (theory->parsed()) return cmd_theory(metrics_in, gaps_out, k_override);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
