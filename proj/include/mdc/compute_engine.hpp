#pragma once

// Compute-node pieces: the pinned column cache, local execution of pushed-back
// fragments, cache-side bitmap work, and the vectorized executor for the
// non-pushable remainder plan (joins, final aggregation, merges) fed by
// fragment outputs bound to its stubs.

#include <cstdint>
#include <map>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "mdc/columnar.hpp"
#include "mdc/fragment.hpp"
#include "mdc/kernels.hpp"
#include "mdc/plan.hpp"

namespace mdc {

// Columns kept resident at a compute node for one experiment scenario. The
// set is fixed up front by a warm-up pass; queries only ever read it.
class PinnedCache {
  public:
    void pin(const std::string& table, uint32_t pid, const Column& col) {
        auto key = std::make_tuple(table, pid, col.name);
        auto it = cols_.find(key);
        if (it == cols_.end()) {
            bytes_ += col.payload_bytes();
            cols_.emplace(std::move(key), col);
        } else {
            bytes_ += col.payload_bytes() - it->second.payload_bytes();
            it->second = col;
        }
    }

    bool contains(const std::string& table, uint32_t pid, const std::string& name) const {
        return cols_.count({table, pid, name}) > 0;
    }

    const Column& get(const std::string& table, uint32_t pid,
                      const std::string& name) const {
        auto it = cols_.find({table, pid, name});
        if (it == cols_.end())
            throw ExecError("column '" + name + "' of " + table + "/" +
                            std::to_string(pid) + " is not pinned at compute");
        return it->second;
    }

    uint64_t bytes() const { return bytes_; }
    size_t size() const { return cols_.size(); }

  private:
    std::map<std::tuple<std::string, uint32_t, std::string>, Column> cols_;
    uint64_t bytes_ = 0;
};

// A pushed-back fragment runs here over the raw-fetched columns, through the
// very same pipeline the storage side uses, so both paths are one code path.
inline FragmentOutput handle_pushback(const PushdownRequest& req, Block raw,
                                      const SelectionBitmap* attached = nullptr) {
    return run_fragment_ops(req, std::move(raw), attached);
}

// Evaluates a predicate entirely over pinned columns.
inline SelectionBitmap bitmap_from_cache(const PinnedCache& cache, const std::string& table,
                                         uint32_t pid, uint64_t rows,
                                         const Predicate& pred) {
    Block b;
    b.rows = rows;
    for (const auto& name : pred.columns_referenced()) {
        const Column& c = cache.get(table, pid, name);
        if (c.size() != rows)
            throw ExecError("cached column '" + name + "' has " +
                            std::to_string(c.size()) + " rows, partition has " +
                            std::to_string(rows));
        b.columns.push_back(c);
    }
    return eval_predicate(pred, b);
}

// Glues locally filtered (cached) columns to storage-filtered ones. Both
// sides were cut by the same logical bitmap, so unequal row counts mean the
// bitmap protocol broke somewhere.
inline Block merge_bitmap_results(const Block& local, const Block& remote) {
    if (!local.columns.empty() && !remote.columns.empty() && local.rows != remote.rows)
        throw ExecError("bitmap-filtered sides disagree: " + std::to_string(local.rows) +
                        " local rows vs " + std::to_string(remote.rows) + " remote");
    Block out;
    out.rows = local.columns.empty() ? remote.rows : local.rows;
    for (const auto& c : local.columns) out.columns.push_back(c);
    for (const auto& c : remote.columns) {
        if (out.find(c.name)) throw ExecError("merged column collision on '" + c.name + "'");
        out.columns.push_back(c);
    }
    return out;
}

// Fragment outputs addressed to the remainder's stubs. Shuffled fragments
// bind per (request, shard); everything else binds per request. A request
// may contribute several blocks (chunked shuffle pulls), concatenated in
// arrival order.
struct StubBindings {
    std::map<uint64_t, std::vector<Block>> by_request;
    std::map<std::pair<uint64_t, uint32_t>, std::vector<Block>> by_shard;
};

inline Block execute_remainder(const PlanNode& n, const StubBindings& binds) {
    auto child = [&](size_t i) { return execute_remainder(n.children[i], binds); };
    switch (n.kind) {
        case PlanKind::Filter: {
            Block in = child(0);
            return filter_block(in, eval_predicate(n.predicate, in));
        }
        case PlanKind::Project:
            return project_block(child(0), n.columns);
        case PlanKind::PartialAggregate:
            return partial_aggregate(child(0), n.group_by, n.aggs);
        case PlanKind::FinalAggregate:
            return final_aggregate(child(0), n.group_by, n.aggs);
        case PlanKind::HashJoin:
            return hash_join(child(0), child(1), n.left_keys, n.right_keys);
        case PlanKind::Merge: {
            std::vector<Block> parts;
            parts.reserve(n.children.size());
            for (size_t i = 0; i < n.children.size(); ++i) parts.push_back(child(i));
            return merge_blocks(parts);
        }
        case PlanKind::Shuffle:
            // row placement is the runner's concern; the data is unchanged
            return child(0);
        case PlanKind::Stub: {
            std::vector<Block> parts;
            for (uint64_t id : n.stub_ids) {
                if (n.stub_shard >= 0) {
                    auto it = binds.by_shard.find(
                        {id, static_cast<uint32_t>(n.stub_shard)});
                    if (it == binds.by_shard.end())
                        throw ExecError("missing shard output for request " +
                                        std::to_string(id) + "/" +
                                        std::to_string(n.stub_shard));
                    for (const auto& b : it->second) parts.push_back(b);
                } else {
                    auto it = binds.by_request.find(id);
                    if (it == binds.by_request.end())
                        throw ExecError("missing fragment output for request " +
                                        std::to_string(id));
                    for (const auto& b : it->second) parts.push_back(b);
                }
            }
            return merge_blocks(parts);
        }
        case PlanKind::Scan:
            throw ExecError("remainder plan cannot scan storage directly");
        default:
            throw ExecError("op kind not executable at compute");
    }
}

} // namespace mdc
