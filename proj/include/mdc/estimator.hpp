#pragma once

// Per-request time estimates and the optimal pushdown/pushback split.
//
// Both paths scan the same bytes off disk, so the scan term cancels when the
// two are compared; what separates them is where the reduction runs and what
// crosses the network. Pushdown spends storage CPU and ships the (small)
// result; pushback ships the raw input and spends compute-tier CPU, which is
// provisioned wide enough that it never shows up as the deciding term.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <sstream>
#include <string>

#include "mdc/catalog.hpp"
#include "mdc/error.hpp"
#include "mdc/plan.hpp"

namespace mdc {

// Rates in bytes per second, one concurrent transfer or slot each. Defaults
// describe a small disaggregated pair: an NVMe-backed storage tier with a
// handful of wimpy cores, and a compute tier with far more headroom.
struct ResourceEnvelope {
    double disk_bw = 4e9;
    double storage_core_rate = 152e6;
    double network_bw = 80e6;
    double compute_core_rate = 800e6;
    uint32_t pd_slots = 8;      // concurrent pushdown executions at storage
    uint32_t pb_slots = 4;      // concurrent raw-transfer streams
    uint32_t compute_cores = 16;
    double power = 1.0;         // fraction of storage CPU currently available

    double storage_rate() const { return storage_core_rate * power; }
};

struct CostEstimate {
    double scan_s = 0.0;
    double process_s = 0.0;
    double transfer_s = 0.0;

    double total() const { return scan_s + process_s + transfer_s; }
};

inline CostEstimate estimate_pushdown_time(double in_bytes, double out_bytes,
                                           const ResourceEnvelope& env) {
    CostEstimate c;
    c.scan_s = in_bytes / env.disk_bw;
    c.process_s = in_bytes / env.storage_rate();
    c.transfer_s = out_bytes / env.network_bw;
    return c;
}

inline CostEstimate estimate_pushback_time(double in_bytes, const ResourceEnvelope& env) {
    CostEstimate c;
    c.scan_s = in_bytes / env.disk_bw;
    c.transfer_s = in_bytes / env.network_bw;
    return c;
}

// How much a request gains from pushdown: the time the pushback path would
// take minus the pushdown path. Positive means pushdown wins. The shared
// scan term drops out, so this does not depend on disk bandwidth.
inline double pushdown_amenability(double in_bytes, double out_bytes,
                                   const ResourceEnvelope& env) {
    return estimate_pushback_time(in_bytes, env).total() -
           estimate_pushdown_time(in_bytes, out_bytes, env).total();
}

// ---------------------------------------------------------------------------
// Optimal split of N identical requests across the two paths.
//
// With t_pd the makespan if everything pushes down and t_npd the makespan if
// nothing does, sending n requests down costs max(n/N * t_pd,
// (N-n)/N * t_npd). The paths balance at n = k/(k+1) * N with k = t_npd/t_pd,
// where the makespan is t_npd/(k+1).

struct SplitPoint {
    double k = 0.0;
    uint32_t n_pushdown = 0;
    double t_opt = 0.0;
};

inline SplitPoint optimal_split(double t_npd, double t_pd, uint32_t total) {
    SplitPoint s;
    if (total == 0) return s;
    if (t_npd <= 0.0) {
        // pushback is free: k = 0, everything goes back
        return s;
    }
    if (t_pd <= 0.0) {
        s.k = std::numeric_limits<double>::infinity();
        s.n_pushdown = total;
        return s;
    }
    s.k = t_npd / t_pd;
    double ideal = s.k / (s.k + 1.0) * static_cast<double>(total);
    // round half up
    double n = std::floor(ideal + 0.5);
    s.n_pushdown = static_cast<uint32_t>(std::min<double>(n, total));
    s.t_opt = t_npd / (s.k + 1.0);
    return s;
}

// ---------------------------------------------------------------------------
// Byte footprint of one request, derived from catalog statistics.

struct RequestFootprint {
    uint64_t rows = 0;
    uint64_t input_bytes = 0;  // what storage reads
    double output_bytes = 0.0; // what crosses the network on the pushdown path
};

namespace detail {

inline double avg_column_width(const Catalog& cat, const std::string& table, uint32_t part,
                               const std::string& name, uint64_t rows) {
    if (rows == 0) return 0.0;
    return static_cast<double>(cat.column(table, part, name).payload_bytes) /
           static_cast<double>(rows);
}

} // namespace detail

inline RequestFootprint request_footprint(const PushdownRequest& req, const Catalog& cat) {
    const PartitionInfo& part = cat.partition(req.table, req.partition_id);
    RequestFootprint f;
    f.rows = part.rows;
    for (const auto& c : req.accessed_columns())
        f.input_bytes += cat.column(req.table, req.partition_id, c).payload_bytes;

    const double bitmap_bytes = static_cast<double>((part.rows + 7) / 8);
    if (req.bitmap && req.bitmap->mode == BitmapDirective::Mode::SendBitmapToCompute) {
        // the fragment's whole product is one bit per row
        f.output_bytes = bitmap_bytes;
        return f;
    }

    // Walk the fragment to the output schema and price a row of it.
    std::vector<std::string> cols = req.accessed_columns();
    double width = 0.0;
    bool aggregated = false;
    for (const auto& op : req.fragment) {
        switch (op.kind) {
            case PlanKind::Scan:
            case PlanKind::Filter:
                break;
            case PlanKind::Project:
                cols = op.columns;
                break;
            case PlanKind::PartialAggregate: {
                aggregated = true;
                width = 0.0;
                for (const auto& g : op.group_by)
                    width += detail::avg_column_width(cat, req.table, req.partition_id, g,
                                                      part.rows);
                for (const auto& a : op.aggs) width += a.op == AggOp::Avg ? 16.0 : 8.0;
                break;
            }
            default:
                throw ExecError("op kind not pushable");
        }
    }
    if (!aggregated) {
        width = 0.0;
        for (const auto& c : cols)
            width += detail::avg_column_width(cat, req.table, req.partition_id, c, part.rows);
    }

    f.output_bytes = req.selectivity_hint * width * static_cast<double>(part.rows);
    if (req.bitmap && req.bitmap->return_combined) f.output_bytes += bitmap_bytes;
    return f;
}

// ---------------------------------------------------------------------------
// Measured rates for the network backend, where modeled constants give way
// to microbenchmarks of the actual kernels.

template <class Fn>
double measured_rate(uint64_t bytes, Fn&& fn) {
    auto t0 = std::chrono::steady_clock::now();
    fn();
    double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (dt <= 0.0) return std::numeric_limits<double>::infinity();
    return static_cast<double>(bytes) / dt;
}

struct CalibrationTable {
    std::map<std::string, double> rates; // op name -> bytes per second

    double rate(const std::string& op, double fallback) const {
        auto it = rates.find(op);
        return it == rates.end() ? fallback : it->second;
    }

    std::string to_csv() const {
        std::ostringstream out;
        out << "op,bytes_per_s\n";
        for (const auto& [op, r] : rates) out << op << "," << r << "\n";
        return out.str();
    }

    static CalibrationTable from_csv(const std::string& text) {
        CalibrationTable t;
        std::istringstream in(text);
        std::string line;
        if (!std::getline(in, line) || line != "op,bytes_per_s")
            throw FormatError("bad calibration header");
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            auto comma = line.find(',');
            if (comma == std::string::npos) throw FormatError("bad calibration row: " + line);
            try {
                t.rates[line.substr(0, comma)] = std::stod(line.substr(comma + 1));
            } catch (const std::exception&) {
                throw FormatError("bad calibration rate: " + line);
            }
        }
        return t;
    }
};

} // namespace mdc
