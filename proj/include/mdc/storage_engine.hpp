#pragma once

// Storage-node executor. Owns the loaded partitions, runs admitted fragments
// over them, builds and applies selection bitmaps, scatters shuffle output
// into a bounded per-target store, and serves raw column fetches for
// pushbacks. Per-column read counters observe every materialization so the
// late-materialization claims are checkable rather than assumed.

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "mdc/catalog.hpp"
#include "mdc/columnar.hpp"
#include "mdc/fragment.hpp"
#include "mdc/kernels.hpp"
#include "mdc/plan.hpp"

namespace mdc {

struct ExecutionReport {
    uint64_t bytes_scanned = 0;
    uint32_t columns_accessed = 0;
    uint64_t rows_in = 0;
    uint64_t rows_out = 0;
};

class ReadCounters {
  public:
    void bump(const std::string& table, uint32_t pid, const std::string& col) {
        std::lock_guard<std::mutex> g(mu_);
        ++counts_[key(table, pid, col)];
    }
    uint64_t reads(const std::string& table, uint32_t pid, const std::string& col) const {
        std::lock_guard<std::mutex> g(mu_);
        auto it = counts_.find(key(table, pid, col));
        return it == counts_.end() ? 0 : it->second;
    }
    void reset() {
        std::lock_guard<std::mutex> g(mu_);
        counts_.clear();
    }

  private:
    static std::string key(const std::string& table, uint32_t pid, const std::string& col) {
        return table + '/' + std::to_string(pid) + '/' + col;
    }
    mutable std::mutex mu_;
    std::map<std::string, uint64_t> counts_;
};

// Bounded buffer for shuffled results awaiting pull by their target nodes.
// The cap applies per (request, target); a producer facing a full slot
// stalls (try_put false, or put() blocking) and never drops data.
class ShuffleStore {
  public:
    explicit ShuffleStore(uint64_t cap_bytes = 8ull << 20) : cap_(cap_bytes) {}

    struct Batch {
        std::vector<std::string> payloads;
        uint64_t rows = 0;
        bool producer_done = false;
    };

    bool try_put(uint64_t request_id, uint32_t target, std::string payload, uint64_t rows) {
        std::lock_guard<std::mutex> g(mu_);
        return put_locked(request_id, target, std::move(payload), rows);
    }

    void put(uint64_t request_id, uint32_t target, std::string payload, uint64_t rows) {
        std::unique_lock<std::mutex> g(mu_);
        cv_.wait(g, [&] {
            return slots_[{request_id, target}].bytes + payload.size() <= cap_;
        });
        put_locked(request_id, target, std::move(payload), rows);
    }

    Batch fetch(uint64_t request_id, uint32_t target) {
        std::lock_guard<std::mutex> g(mu_);
        Batch out;
        auto it = slots_.find({request_id, target});
        if (it != slots_.end()) {
            for (auto& [payload, rows] : it->second.chunks) {
                out.rows += rows;
                out.payloads.push_back(std::move(payload));
            }
            it->second.chunks.clear();
            it->second.bytes = 0;
        }
        out.producer_done = done_.count(request_id) > 0;
        cv_.notify_all();
        return out;
    }

    void mark_done(uint64_t request_id) {
        std::lock_guard<std::mutex> g(mu_);
        done_.insert(request_id);
    }

    uint64_t buffered(uint64_t request_id, uint32_t target) const {
        std::lock_guard<std::mutex> g(mu_);
        auto it = slots_.find({request_id, target});
        return it == slots_.end() ? 0 : it->second.bytes;
    }
    uint64_t high_water(uint64_t request_id, uint32_t target) const {
        std::lock_guard<std::mutex> g(mu_);
        auto it = slots_.find({request_id, target});
        return it == slots_.end() ? 0 : it->second.high_water;
    }
    uint64_t cap() const { return cap_; }

  private:
    struct Slot {
        std::deque<std::pair<std::string, uint64_t>> chunks;
        uint64_t bytes = 0;
        uint64_t high_water = 0;
    };

    bool put_locked(uint64_t request_id, uint32_t target, std::string payload,
                    uint64_t rows) {
        if (payload.size() > cap_)
            throw ExecError("shuffle chunk exceeds the buffer cap");
        Slot& s = slots_[{request_id, target}];
        if (s.bytes + payload.size() > cap_) return false;
        s.bytes += payload.size();
        if (s.bytes > s.high_water) s.high_water = s.bytes;
        s.chunks.emplace_back(std::move(payload), rows);
        return true;
    }

    uint64_t cap_;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::map<std::pair<uint64_t, uint32_t>, Slot> slots_;
    std::set<uint64_t> done_;
};

// Splits a block into row ranges whose encoded payload stays well under the
// shuffle cap, so a stalled producer always makes progress after one drain.
inline std::vector<Block> chunk_block(const Block& in, uint64_t max_rows) {
    if (max_rows == 0) throw ExecError("chunk size must be positive");
    std::vector<Block> out;
    for (uint64_t start = 0; start < in.rows; start += max_rows) {
        uint64_t n = std::min(max_rows, in.rows - start);
        std::vector<bool> mask(in.rows, false);
        for (uint64_t i = 0; i < n; ++i) mask[start + i] = true;
        out.push_back(filter_block(in, SelectionBitmap::from_mask(mask)));
    }
    return out;
}

inline std::string encode_block_bytes(const Block& b) {
    ByteWriter w;
    encode_block(b, w);
    auto v = w.take();
    return std::string(v.begin(), v.end());
}

class StorageEngine {
  public:
    StorageEngine() : counters_(new ReadCounters) {}

    void add_partition(ColumnarPartition p) {
        catalog_.add(p);
        auto key = std::make_pair(p.table_name, p.partition_id);
        parts_[key] = std::move(p);
    }

    void load_dir(const std::filesystem::path& dir) {
        std::vector<std::filesystem::path> files;
        for (const auto& e : std::filesystem::directory_iterator(dir))
            if (e.path().extension() == ".mdc") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) add_partition(read_partition(f));
    }

    const Catalog& catalog() const { return catalog_; }
    ReadCounters& counters() { return *counters_; }

    const ColumnarPartition& partition(const std::string& table, uint32_t pid) const {
        auto it = parts_.find({table, pid});
        if (it == parts_.end())
            throw ExecError("unknown partition " + table + "/" + std::to_string(pid));
        return it->second;
    }

    struct FragmentResult {
        FragmentOutput out;
        std::vector<Block> shuffle_shards; // indexed by hash target when shuffled
        ExecutionReport report;
    };

    FragmentResult execute(const PushdownRequest& req,
                           const SelectionBitmap* attached = nullptr) {
        const ColumnarPartition& part = partition(req.table, req.partition_id);
        FragmentResult res;
        res.report.rows_in = part.rows();
        Block base = materialize(part, req.accessed_columns(), res.report);
        res.out = run_fragment_ops(req, std::move(base), attached);
        if (req.shuffle_params) {
            if (req.bitmap &&
                req.bitmap->mode == BitmapDirective::Mode::SendBitmapToCompute)
                throw ExecError("cannot shuffle a bitmap-only result");
            res.shuffle_shards = shuffle_block(res.out.block, req.shuffle_params->key,
                                               req.shuffle_params->fanout);
            res.report.rows_out = res.out.block.rows;
            res.out.block = Block{};
        } else {
            res.report.rows_out = res.out.block.rows;
        }
        return res;
    }

    // Evaluates the predicate over one partition and returns the bitmap plus
    // the already filtered values of every column the predicate touched.
    std::pair<SelectionBitmap, Block> build_bitmap(const std::string& table, uint32_t pid,
                                                   const Predicate& pred) {
        const ColumnarPartition& part = partition(table, pid);
        std::set<std::string> cols_set = pred.columns_referenced();
        std::vector<std::string> cols(cols_set.begin(), cols_set.end());
        ExecutionReport ignored;
        Block base = materialize(part, cols, ignored);
        SelectionBitmap bm = eval_predicate(pred, base);
        return {bm, filter_block(base, bm)};
    }

    // Filters the listed columns by a compute-built bitmap. Columns outside
    // the list are never touched, which the read counters can prove.
    Block apply_pushed_bitmap(const std::string& table, uint32_t pid,
                              const SelectionBitmap& bm,
                              const std::vector<std::string>& columns) {
        const ColumnarPartition& part = partition(table, pid);
        if (bm.length() != part.rows())
            throw ExecError("bitmap length does not match partition rows");
        ExecutionReport ignored;
        Block base = materialize(part, columns, ignored);
        return filter_block(base, bm);
    }

    struct RawFetch {
        Block block;
        uint64_t payload_bytes = 0; // exactly the S_in the estimator charges
    };

    RawFetch raw_fetch(const std::string& table, uint32_t pid,
                       const std::vector<std::string>& columns) {
        const ColumnarPartition& part = partition(table, pid);
        RawFetch out;
        ExecutionReport rep;
        out.block = materialize(part, columns, rep);
        out.payload_bytes = rep.bytes_scanned;
        return out;
    }

  private:
    Block materialize(const ColumnarPartition& part, const std::vector<std::string>& cols,
                      ExecutionReport& rep) {
        Block out;
        out.rows = part.rows();
        for (const auto& name : cols) {
            const Column& c = part.data.col(name);
            counters_->bump(part.table_name, part.partition_id, name);
            rep.bytes_scanned += c.payload_bytes();
            ++rep.columns_accessed;
            out.columns.push_back(c);
        }
        return out;
    }

    Catalog catalog_;
    std::map<std::pair<std::string, uint32_t>, ColumnarPartition> parts_;
    // behind a pointer so the engine stays movable despite the mutex inside
    std::unique_ptr<ReadCounters> counters_;
};

} // namespace mdc
