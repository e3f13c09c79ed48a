#pragma once

// Virtual-time scenario runner: drives split requests through the storage
// arbitrator and both execution paths, modeling the resources that matter
// (storage CPU slots, raw-transfer streams, compute cores, per-transfer
// network bandwidth) while running the real kernels for every byte that
// crosses the wire. One run produces, per query, the result table plus the
// wall clock, per-hop byte counters and per-path CPU-second breakdown.
//
// The storage computational power knob scales the number of pushdown slots
// (max(1, round(f * base))); per-request execution speed is unaffected.
//
// Requests are issued over one serialized uplink, so arrival order at the
// arbitrator is exactly issue order. Result and raw-data transfers each get
// the full per-request network bandwidth.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "mdc/arbitrator.hpp"
#include "mdc/catalog.hpp"
#include "mdc/columnar.hpp"
#include "mdc/compute_engine.hpp"
#include "mdc/estimator.hpp"
#include "mdc/kernels.hpp"
#include "mdc/plan.hpp"
#include "mdc/storage_engine.hpp"
#include "mdc/transport.hpp"

namespace mdc {

// Per-target-node execution derived from a sharded remainder:
// FinalAggregate(Merge(clone per shard)). Each clone runs on its node; the
// coordinator re-aggregates the shipped partials.
struct ShardedExec {
    uint32_t fanout = 0;
    std::vector<PlanNode> node_plans;
    PlanNode coordinator;
    std::vector<uint64_t> coord_ids;
};

inline std::optional<ShardedExec> detect_sharded(const PlanNode& remainder,
                                                 uint64_t coord_id_base = 1u << 20) {
    if (remainder.kind != PlanKind::FinalAggregate || remainder.children.size() != 1)
        return std::nullopt;
    const PlanNode& merge = remainder.children[0];
    if (merge.kind != PlanKind::Merge || merge.children.empty()) return std::nullopt;
    ShardedExec out;
    out.fanout = static_cast<uint32_t>(merge.children.size());
    out.node_plans = merge.children;
    for (uint32_t s = 0; s < out.fanout; ++s) out.coord_ids.push_back(coord_id_base + s);
    out.coordinator = remainder;
    out.coordinator.children = {PlanNode::stub(out.coord_ids)};
    return out;
}

// Late materialization glue for bitmap-producing requests: the bitmap is
// applied to these pinned columns at compute, then the tail ops run there.
struct BitmapApplySpec {
    std::vector<std::string> cached_columns;
    std::vector<PlanNode> tail_ops; // flat, no Scan
};

struct JobSpec {
    std::string label;
    std::vector<PushdownRequest> requests;
    PlanNode remainder;
    std::optional<ShardedExec> sharded;
    std::optional<BitmapApplySpec> bitmap_apply;
    // Requests that feed the shuffle. With shuffle pushdown on they carry
    // shuffle params and scatter at storage; with scatter_at_compute the
    // home node partitions them instead, using compute_shuffle.
    std::set<uint64_t> scatter_ids;
    bool scatter_at_compute = false;
    std::optional<ShuffleParams> compute_shuffle;
};

struct ScenarioConfig {
    ResourceEnvelope env;
    double power = 1.0; // scales pd slot count only
    ArbiterPolicy policy = ArbiterPolicy::Fifo;
    uint64_t forced_pushdown = 0; // ForcedSplit only
    uint64_t shuffle_cap = 8ull << 20;
    double consumer_delay = 0.0; // extra seconds between shuffle fetch rounds
    bool trace = false;
};

inline uint32_t scaled_pd_slots(const ResourceEnvelope& env, double power) {
    if (power <= 0.0 || power > 1.0) throw ExecError("power must be in (0, 1]");
    auto scaled = static_cast<uint32_t>(std::llround(power * env.pd_slots));
    return std::max<uint32_t>(1, scaled);
}

struct JobResult {
    std::string label;
    Block result;
    double wall = 0.0;
    double t_pd = 0.0;      // storage CPU seconds, admitted requests
    double t_pb = 0.0;      // compute CPU seconds, pushed-back fragments
    double t_nonpush = 0.0; // compute CPU seconds for everything else
    HopCounters hops;
    uint32_t admitted = 0;
    uint32_t pushed_back = 0;
    uint64_t cols_accessed = 0; // column reads performed at storage
    uint64_t bytes_scanned = 0;
    uint64_t shuffle_high_water = 0;
    bool shuffle_stalled = false;
};

struct ScenarioResult {
    std::vector<JobResult> jobs;
    std::vector<TraceRecord> trace;
};

class ScenarioRunner {
  public:
    ScenarioRunner(StorageEngine& storage, const PinnedCache* cache,
                   std::vector<JobSpec> jobs, const ScenarioConfig& cfg)
        : storage_(storage), cache_(cache), cfg_(cfg), link_{cfg.env.network_bw},
          store_(cfg.shuffle_cap),
          arbiter_(cfg.policy, scaled_pd_slots(cfg.env, cfg.power), cfg.env.pb_slots,
                   cfg.forced_pushdown),
          specs_(std::move(jobs)) {
        trace_.enabled = cfg.trace;
        // The runner always models per-request speed at full rate; capacity
        // is the knob, so a scaled envelope here would double-count.
        env_ = cfg.env;
        env_.power = 1.0;
    }

    ScenarioResult run() {
        prepare();
        issue_all();
        q_.run();
        ScenarioResult out;
        for (auto& j : jobs_) {
            if (!j.done)
                throw ExecError("scenario deadlocked: job " + j.res.label +
                                " has no pending events but is incomplete");
            out.jobs.push_back(std::move(j.res));
        }
        out.trace = std::move(trace_.records);
        return out;
    }

  private:
    // ---- static per-request and per-job state ------------------------------

    struct ReqState {
        const PushdownRequest* req = nullptr;
        size_t job = 0;
        RequestFootprint fp;
        bool scatter = false;
        uint32_t home = 0;
        StorageEngine::FragmentResult exec; // filled at dispatch for admitted requests
        // shuffle producer machine
        std::deque<std::tuple<uint32_t, std::string, uint64_t>> chunks; // target, payload, rows
        double chunk_time = 0.0;
        int32_t blocked_target = -1;
        std::vector<Block> shards;
    };

    struct Stream { // one (scatter request, target) delivery
        bool active = false;   // a consumer event is in flight
        bool finished = false;
    };

    struct JobState {
        const JobSpec* spec = nullptr;
        JobResult res;
        StubBindings binds;
        uint32_t nodes = 1;
        std::vector<uint32_t> node_pending;
        std::vector<uint64_t> node_bytes;
        std::vector<bool> node_started;
        uint32_t partials_pending = 0;
        std::set<uint64_t> bound_once; // broadcast results bind a single time
        bool done = false;
    };

    // ---- setup --------------------------------------------------------------

    void prepare() {
        for (size_t ji = 0; ji < specs_.size(); ++ji) {
            const JobSpec& spec = specs_[ji];
            JobState j;
            j.spec = &spec;
            j.res.label = spec.label;
            j.nodes = spec.sharded ? spec.sharded->fanout : 1;
            j.node_pending.assign(j.nodes, 0);
            j.node_bytes.assign(j.nodes, 0);
            j.node_started.assign(j.nodes, false);
            j.partials_pending = spec.sharded ? j.nodes : 0;

            uint32_t n_scatter = 0, n_plain = 0;
            for (const auto& r : spec.requests)
                spec.scatter_ids.count(r.request_id) ? ++n_scatter : ++n_plain;
            for (uint32_t s = 0; s < j.nodes; ++s)
                j.node_pending[s] =
                    spec.sharded ? n_scatter + n_plain : static_cast<uint32_t>(spec.requests.size());
            jobs_.push_back(std::move(j));

            for (const auto& r : specs_[ji].requests) {
                ReqState rs;
                rs.req = &r;
                rs.job = ji;
                rs.fp = request_footprint(r, storage_.catalog());
                rs.scatter = specs_[ji].scatter_ids.count(r.request_id) > 0;
                rs.home = specs_[ji].sharded
                              ? static_cast<uint32_t>(r.request_id % specs_[ji].sharded->fanout)
                              : 0;
                if (!reqs_.emplace(r.request_id, std::move(rs)).second)
                    throw ExecError("duplicate request id " + std::to_string(r.request_id) +
                                    " across jobs");
            }
        }
    }

    // Round-robin across jobs, serialized on the client uplink.
    void issue_all() {
        std::vector<size_t> cursor(specs_.size(), 0);
        double t = 0.0;
        for (bool more = true; more;) {
            more = false;
            for (size_t ji = 0; ji < specs_.size(); ++ji) {
                if (cursor[ji] >= specs_[ji].requests.size()) continue;
                const PushdownRequest& r = specs_[ji].requests[cursor[ji]++];
                more = true;
                Frame f;
                f.type = MsgType::PushdownRequest;
                f.request_id = r.request_id;
                f.payload = encode_request(r);
                uint64_t bytes = f.wire_size();
                count(ji, Hop::ComputeToStorage, bytes);
                t += link_.transfer_time(bytes);
                uint64_t id = r.request_id;
                q_.at(t, [this, id] { arrive(id); });
                trace_.note(t, "issue", id, bytes);
            }
        }
    }

    // ---- arrival and dispatch ----------------------------------------------

    void arrive(uint64_t id) {
        ReqState& rs = reqs_.at(id);
        RequestEntry e;
        e.request_id = id;
        e.t_pd = estimate_pushdown_time(static_cast<double>(rs.fp.input_bytes),
                                        rs.fp.output_bytes, env_)
                     .total();
        e.t_pb = estimate_pushback_time(static_cast<double>(rs.fp.input_bytes), env_).total();
        start_all(arbiter_.on_arrival(e));
    }

    void start_all(const std::vector<Dispatch>& ds) {
        for (const Dispatch& d : ds)
            d.path == Path::Pushdown ? start_pushdown(d.request_id)
                                     : start_pushback(d.request_id);
    }

    double storage_exec_seconds(uint64_t input_bytes) const {
        auto in = static_cast<double>(input_bytes);
        return in / env_.disk_bw + in / env_.storage_rate();
    }

    void start_pushdown(uint64_t id) {
        ReqState& rs = reqs_.at(id);
        JobState& j = jobs_[rs.job];
        j.res.admitted++;
        rs.exec = storage_.execute(*rs.req);
        double dur = storage_exec_seconds(rs.exec.report.bytes_scanned);
        j.res.t_pd += dur;
        j.res.bytes_scanned += rs.exec.report.bytes_scanned;
        j.res.cols_accessed += rs.exec.report.columns_accessed;
        trace_.note(q_.now(), "pd_start", id, rs.exec.report.bytes_scanned);

        if (rs.req->shuffle_params) {
            begin_scatter_at_storage(id, dur);
            return;
        }
        q_.after(dur, [this, id] {
            start_all(arbiter_.on_completion(Path::Pushdown));
            send_result(id);
        });
    }

    void send_result(uint64_t id) {
        ReqState& rs = reqs_.at(id);
        Frame f;
        f.request_id = id;
        const FragmentOutput& out = rs.exec.out;
        if (out.bitmap && out.block.columns.empty()) {
            f.type = MsgType::BitmapPayload;
            f.payload = out.bitmap->bytes();
        } else {
            f.type = MsgType::PushdownResult;
            ByteWriter w;
            encode_block(out.block, w);
            f.payload = w.take();
        }
        uint64_t bytes = f.wire_size();
        trace_.note(q_.now(), "pd_done", id, bytes);
        deliver_to_nodes(id, bytes);
    }

    // Plain results go to the home node; in a sharded job a non-scatter
    // result (the small build-side table) is broadcast to every node.
    void deliver_to_nodes(uint64_t id, uint64_t frame_bytes) {
        ReqState& rs = reqs_.at(id);
        JobState& j = jobs_[rs.job];
        bool broadcast = j.spec->sharded && !rs.scatter;
        uint32_t copies = broadcast ? j.nodes : 1;
        for (uint32_t c = 0; c < copies; ++c)
            count(rs.job, Hop::StorageToCompute, frame_bytes);
        double dt = link_.transfer_time(frame_bytes);
        q_.after(dt, [this, id, broadcast] {
            ReqState& rs = reqs_.at(id);
            trace_.note(q_.now(), "result_arrive", id, 0);
            if (broadcast) {
                for (uint32_t s = 0; s < jobs_[rs.job].nodes; ++s) arrival_at_node(id, s);
            } else {
                arrival_at_node(id, rs.home);
            }
        });
    }

    void start_pushback(uint64_t id) {
        ReqState& rs = reqs_.at(id);
        JobState& j = jobs_[rs.job];
        j.res.pushed_back++;
        StorageEngine::RawFetch raw =
            storage_.raw_fetch(rs.req->table, rs.req->partition_id, rs.req->accessed_columns());
        j.res.bytes_scanned += raw.payload_bytes;
        j.res.cols_accessed += rs.req->accessed_columns().size();

        ByteWriter w;
        encode_block(raw.block, w);
        Frame f;
        f.type = MsgType::RawData;
        f.request_id = id;
        f.payload = w.take();
        uint64_t frame_bytes = f.wire_size();

        // signal + fetch handshake, then disk scan, then the raw stream; the
        // pb slot is a network stream held for the whole round trip
        count(rs.job, Hop::StorageToCompute, kFrameOverhead); // pushback signal
        count(rs.job, Hop::ComputeToStorage, kFrameOverhead); // raw fetch
        double rtt = 2.0 * link_.transfer_time(kFrameOverhead);
        double scan = static_cast<double>(raw.payload_bytes) / env_.disk_bw;
        double dur = rtt + scan + link_.transfer_time(frame_bytes);
        trace_.note(q_.now(), "pb_start", id, frame_bytes);

        rs.exec.out.block = std::move(raw.block); // carried to the compute exec
        count(rs.job, Hop::StorageToCompute, frame_bytes);
        q_.after(dur, [this, id] {
            start_all(arbiter_.on_completion(Path::Pushback));
            pushback_exec(id);
        });
    }

    void pushback_exec(uint64_t id) {
        ReqState& rs = reqs_.at(id);
        Block raw = std::move(rs.exec.out.block);
        auto in_bytes = static_cast<double>(block_bytes(raw));
        double dur = in_bytes / env_.compute_core_rate;
        jobs_[rs.job].res.t_pb += dur;
        submit_core(dur, [this, id, raw = std::move(raw)]() mutable {
            ReqState& rs = reqs_.at(id);
            trace_.note(q_.now(), "pb_exec_done", id, 0);
            FragmentOutput out = handle_pushback(*rs.req, std::move(raw));
            if (out.bitmap && out.block.columns.empty()) {
                bind_via_bitmap(id, *out.bitmap, rs.home, /*relay=*/true);
            } else if (rs.scatter) {
                scatter_at_compute(id, std::move(out.block));
            } else {
                deliver_local(id, std::move(out.block));
            }
        });
    }

    // A block produced at the home node (pushed-back work) still has to reach
    // every node of a sharded job; peers get a copy over the interconnect.
    void deliver_local(uint64_t id, Block block) {
        ReqState& rs = reqs_.at(id);
        JobState& j = jobs_[rs.job];
        if (!j.spec->sharded || j.nodes <= 1) {
            bind_and_progress(id, rs.home, std::move(block));
            return;
        }
        ByteWriter w;
        encode_block(block, w);
        uint64_t frame_bytes = kFrameOverhead + w.take().size();
        for (uint32_t s = 0; s < j.nodes; ++s) {
            if (s == rs.home) continue;
            count(rs.job, Hop::ComputeToCompute, frame_bytes, /*base_table=*/true);
            trace_.note(q_.now(), "relay", id, frame_bytes);
            q_.after(link_.transfer_time(frame_bytes), [this, id, s, copy = block]() mutable {
                bind_and_progress(id, s, std::move(copy));
            });
        }
        bind_and_progress(id, rs.home, std::move(block));
    }

    // ---- arrivals at compute nodes -----------------------------------------

    void arrival_at_node(uint64_t id, uint32_t node) {
        ReqState& rs = reqs_.at(id);
        const FragmentOutput& out = rs.exec.out;
        if (out.bitmap && out.block.columns.empty()) {
            bind_via_bitmap(id, *out.bitmap, node);
        } else if (rs.scatter && !rs.req->shuffle_params) {
            scatter_at_compute(id, out.block);
        } else {
            bind_and_progress(id, node, out.block);
        }
    }

    // Bitmap arrived (or was computed locally from raw): filter the pinned
    // columns by it, run the tail ops, then bind like any fragment output.
    void bind_via_bitmap(uint64_t id, SelectionBitmap bm, uint32_t node, bool relay = false) {
        ReqState& rs = reqs_.at(id);
        JobState& j = jobs_[rs.job];
        if (!j.spec->bitmap_apply)
            throw ExecError("request " + std::to_string(id) +
                            " produced a bitmap but the job has no apply recipe");
        if (!cache_) throw ExecError("bitmap application needs a pinned cache");
        const BitmapApplySpec& ba = *j.spec->bitmap_apply;

        Block pinned;
        uint64_t pinned_bytes = 0;
        for (const auto& col : ba.cached_columns) {
            Column c = cache_->get(rs.req->table, rs.req->partition_id, col);
            pinned_bytes += c.payload_bytes();
            pinned.add(std::move(c));
        }
        double dur =
            (static_cast<double>(pinned_bytes) + static_cast<double>(bm.byte_size())) /
            env_.compute_core_rate;
        j.res.t_nonpush += dur;
        submit_core(dur, [this, id, node, relay, bm = std::move(bm), pinned = std::move(pinned)] {
            ReqState& rs = reqs_.at(id);
            const BitmapApplySpec& ba = *jobs_[rs.job].spec->bitmap_apply;
            PushdownRequest pseudo;
            pseudo.table = rs.req->table;
            pseudo.partition_id = rs.req->partition_id;
            pseudo.fragment.push_back(PlanNode::scan(pseudo.table, ba.cached_columns));
            for (const auto& op : ba.tail_ops) pseudo.fragment.push_back(op);
            BitmapDirective d;
            d.mode = BitmapDirective::Mode::ApplyAttachedBitmap;
            pseudo.bitmap = d;
            FragmentOutput out = run_fragment_ops(pseudo, pinned, &bm);
            if (relay) deliver_local(id, std::move(out.block));
            else bind_and_progress(id, node, std::move(out.block));
        });
    }

    // Home-node shuffle: partition the fragment output and ship each shard
    // to its target node; the home node's own shard never hits the wire.
    void scatter_at_compute(uint64_t id, Block block) {
        ReqState& rs = reqs_.at(id);
        JobState& j = jobs_[rs.job];
        const ShuffleParams* params =
            rs.req->shuffle_params ? &*rs.req->shuffle_params
                                   : (j.spec->compute_shuffle ? &*j.spec->compute_shuffle : nullptr);
        if (!params) throw ExecError("scatter request without shuffle parameters");
        auto bytes = static_cast<double>(block_bytes(block));
        double dur = bytes / env_.compute_core_rate;
        j.res.t_nonpush += dur;
        ShuffleParams p = *params;
        submit_core(dur, [this, id, p, block = std::move(block)] {
            ReqState& rs = reqs_.at(id);
            trace_.note(q_.now(), "compute_scatter", id, 0);
            std::vector<Block> shards = shuffle_block(block, p.key, p.fanout);
            for (uint32_t t = 0; t < p.fanout; ++t) {
                if (t == rs.home) {
                    bind_shard_block(id, t, std::move(shards[t]));
                    continue;
                }
                ByteWriter w;
                encode_block(shards[t], w);
                Frame f;
                f.type = MsgType::ShuffleData;
                f.request_id = id;
                f.payload = w.take();
                uint64_t fb = f.wire_size();
                count(rs.job, Hop::ComputeToCompute, fb, /*base_table=*/true);
                q_.after(link_.transfer_time(fb),
                         [this, id, t, shard = std::move(shards[t])]() mutable {
                             bind_shard_block(id, t, std::move(shard));
                         });
            }
        });
    }

    // ---- storage-side shuffle: producer machine + per-stream consumers ------

    void begin_scatter_at_storage(uint64_t id, double exec_dur) {
        ReqState& rs = reqs_.at(id);
        rs.shards = std::move(rs.exec.shuffle_shards);
        uint32_t fanout = rs.req->shuffle_params->fanout;
        if (rs.shards.size() != fanout)
            throw ExecError("shard count does not match the fanout");

        uint64_t max_chunk = std::max<uint64_t>(1, cfg_.shuffle_cap / 2);
        size_t n_chunks = 0;
        std::vector<std::deque<std::pair<std::string, uint64_t>>> per_target(fanout);
        for (uint32_t t = 0; t < fanout; ++t) {
            const Block& shard = rs.shards[t];
            if (shard.rows == 0) continue;
            uint64_t row_bytes = std::max<uint64_t>(1, block_bytes(shard) / shard.rows);
            uint64_t rows_per_chunk =
                std::max<uint64_t>(1, std::min<uint64_t>(shard.rows, max_chunk / row_bytes));
            for (Block& c : chunk_block(shard, rows_per_chunk)) {
                uint64_t rows = c.rows;
                per_target[t].emplace_back(encode_block_bytes(c), rows);
                ++n_chunks;
            }
        }
        // round-robin across targets, the order a streaming scatter fills them
        for (bool more = true; more;) {
            more = false;
            for (uint32_t t = 0; t < fanout; ++t) {
                if (per_target[t].empty()) continue;
                more = true;
                auto& [payload, rows] = per_target[t].front();
                rs.chunks.emplace_back(t, std::move(payload), rows);
                per_target[t].pop_front();
            }
        }
        rs.chunk_time = exec_dur / static_cast<double>(std::max<size_t>(1, n_chunks));
        for (uint32_t t = 0; t < fanout; ++t) streams_[{id, t}] = Stream{};
        if (rs.chunks.empty()) {
            finish_producer(id);
            return;
        }
        q_.after(rs.chunk_time, [this, id] { producer_put(id); });
    }

    void producer_put(uint64_t id) {
        ReqState& rs = reqs_.at(id);
        while (!rs.chunks.empty()) {
            auto& [target, payload, rows] = rs.chunks.front();
            uint64_t size = payload.size();
            if (!store_.try_put(id, target, payload, rows)) {
                rs.blocked_target = static_cast<int32_t>(target);
                jobs_[rs.job].res.shuffle_stalled = true;
                trace_.note(q_.now(), "shuffle_stall", id, size);
                return; // the consumer's next fetch resumes us
            }
            sample_high_water(id, target);
            trace_.note(q_.now(), "chunk_put", id, size);
            uint32_t t = target;
            rs.chunks.pop_front();
            wake_consumer(id, t);
            if (!rs.chunks.empty()) {
                q_.after(rs.chunk_time, [this, id] { producer_put(id); });
                return;
            }
        }
        finish_producer(id);
    }

    void finish_producer(uint64_t id) {
        ReqState& rs = reqs_.at(id);
        store_.mark_done(id);
        trace_.note(q_.now(), "producer_done", id, 0);
        uint32_t fanout = rs.req->shuffle_params->fanout;
        start_all(arbiter_.on_completion(Path::Pushdown));
        for (uint32_t t = 0; t < fanout; ++t) wake_consumer(id, t);
    }

    void wake_consumer(uint64_t id, uint32_t target) {
        Stream& st = streams_.at({id, target});
        if (st.active || st.finished) return;
        st.active = true;
        q_.after(0.0, [this, id, target] { consumer_fetch(id, target); });
    }

    void consumer_fetch(uint64_t id, uint32_t target) {
        ReqState& rs = reqs_.at(id);
        Stream& st = streams_.at({id, target});
        ShuffleStore::Batch batch = store_.fetch(id, target);
        count(rs.job, Hop::ComputeToStorage, kFrameOverhead); // the fetch itself
        if (rs.blocked_target == static_cast<int32_t>(target)) {
            rs.blocked_target = -1;
            q_.after(0.0, [this, id] { producer_put(id); });
        }
        if (batch.payloads.empty()) {
            st.active = false;
            if (batch.producer_done) {
                st.finished = true;
                trace_.note(q_.now(), "stream_done", id, target);
                bind_shard_block(id, target, std::move(rs.shards[target]));
            }
            return;
        }
        uint64_t bytes = 0;
        for (const auto& p : batch.payloads) bytes += kFrameOverhead + p.size();
        count(rs.job, Hop::StorageToCompute, bytes);
        trace_.note(q_.now(), "chunk_fetch", id, bytes);
        q_.after(link_.transfer_time(bytes) + cfg_.consumer_delay,
                 [this, id, target] { consumer_fetch(id, target); });
    }

    void sample_high_water(uint64_t id, uint32_t target) {
        ReqState& rs = reqs_.at(id);
        uint64_t hw = store_.high_water(id, target);
        JobState& j = jobs_[rs.job];
        if (hw > j.res.shuffle_high_water) j.res.shuffle_high_water = hw;
    }

    // ---- binding, node execution, completion --------------------------------

    void bind_shard_block(uint64_t id, uint32_t target, Block shard) {
        ReqState& rs = reqs_.at(id);
        JobState& j = jobs_[rs.job];
        j.node_bytes[target] += block_bytes(shard);
        j.binds.by_shard[{id, target}] = {std::move(shard)};
        node_arrival(rs.job, target);
    }

    void bind_and_progress(uint64_t id, uint32_t node, Block out) {
        ReqState& rs = reqs_.at(id);
        JobState& j = jobs_[rs.job];
        j.node_bytes[node] += block_bytes(out);
        if (j.bound_once.insert(id).second) j.binds.by_request[id] = {std::move(out)};
        node_arrival(rs.job, node);
    }

    void node_arrival(size_t ji, uint32_t node) {
        JobState& j = jobs_[ji];
        if (j.node_pending.at(node) == 0)
            throw ExecError("extra arrival at node " + std::to_string(node));
        if (--j.node_pending[node] > 0 || j.node_started[node]) return;
        j.node_started[node] = true;
        double dur = static_cast<double>(j.node_bytes[node]) / env_.compute_core_rate;
        j.res.t_nonpush += dur;
        trace_.note(q_.now(), "node_exec", node, j.node_bytes[node]);
        submit_core(dur, [this, ji, node] { node_exec_done(ji, node); });
    }

    void node_exec_done(size_t ji, uint32_t node) {
        JobState& j = jobs_[ji];
        if (!j.spec->sharded) {
            j.res.result = execute_remainder(j.spec->remainder, j.binds);
            finish_job(ji);
            return;
        }
        const ShardedExec& sh = *j.spec->sharded;
        Block partial = execute_remainder(sh.node_plans.at(node), j.binds);
        uint64_t bytes = block_bytes(partial);
        uint64_t coord_id = sh.coord_ids.at(node);
        j.binds.by_request[coord_id] = {std::move(partial)};
        if (node == 0) {
            partial_delivered(ji);
            return;
        }
        uint64_t fb = kFrameOverhead + bytes;
        count(ji, Hop::ComputeToCompute, fb, /*base_table=*/false);
        q_.after(link_.transfer_time(fb), [this, ji] { partial_delivered(ji); });
    }

    void partial_delivered(size_t ji) {
        JobState& j = jobs_[ji];
        if (--j.partials_pending > 0) return;
        uint64_t total = 0;
        for (uint64_t cid : j.spec->sharded->coord_ids)
            for (const Block& b : j.binds.by_request.at(cid)) total += block_bytes(b);
        double dur = static_cast<double>(total) / env_.compute_core_rate;
        j.res.t_nonpush += dur;
        submit_core(dur, [this, ji] {
            JobState& j = jobs_[ji];
            j.res.result = execute_remainder(j.spec->sharded->coordinator, j.binds);
            finish_job(ji);
        });
    }

    void finish_job(size_t ji) {
        JobState& j = jobs_[ji];
        j.res.wall = q_.now();
        j.done = true;
        trace_.note(q_.now(), "job_done", ji, 0);
    }

    // ---- compute core pool ---------------------------------------------------

    void submit_core(double duration, SimQueue::Fn fn) {
        if (cores_busy_ < env_.compute_cores) {
            ++cores_busy_;
            q_.after(duration, [this, fn = std::move(fn)] {
                --cores_busy_;
                fn();
                pump_cores();
            });
        } else {
            core_backlog_.emplace_back(duration, std::move(fn));
        }
    }

    void pump_cores() {
        while (cores_busy_ < env_.compute_cores && !core_backlog_.empty()) {
            auto [dur, fn] = std::move(core_backlog_.front());
            core_backlog_.pop_front();
            ++cores_busy_;
            q_.after(dur, [this, fn = std::move(fn)] {
                --cores_busy_;
                fn();
                pump_cores();
            });
        }
    }

    // ---- misc ----------------------------------------------------------------

    static uint64_t block_bytes(const Block& b) {
        uint64_t total = 0;
        for (const auto& c : b.columns) total += c.payload_bytes();
        return total;
    }

    void count(size_t ji, Hop hop, uint64_t bytes, bool base_table = false) {
        jobs_[ji].res.hops.add(hop, bytes, base_table);
    }

    StorageEngine& storage_;
    const PinnedCache* cache_;
    ScenarioConfig cfg_;
    ResourceEnvelope env_;
    LinkModel link_;
    SimQueue q_;
    ShuffleStore store_;
    Arbiter arbiter_;
    TraceLog trace_;
    std::vector<JobSpec> specs_;
    std::vector<JobState> jobs_;
    std::map<uint64_t, ReqState> reqs_;
    std::map<std::pair<uint64_t, uint32_t>, Stream> streams_;
    uint32_t cores_busy_ = 0;
    std::deque<std::pair<double, SimQueue::Fn>> core_backlog_;
};

inline ScenarioResult run_scenario_sim(StorageEngine& storage, const PinnedCache* cache,
                                       std::vector<JobSpec> jobs, const ScenarioConfig& cfg) {
    ScenarioRunner r(storage, cache, std::move(jobs), cfg);
    return r.run();
}

} // namespace mdc
