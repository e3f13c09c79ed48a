#pragma once

// Socket backend: the same scenarios the simulator runs, carried as real
// length-framed messages over a loopback TCP connection. A storage server
// thread owns the engine and the arbiter; the calling thread acts as the
// compute node. Admission decisions replay the simulator's because requests
// arrive in the same order on one ordered stream and slot releases are paced
// by the model occupancy times. Wall times are real and carry no assertions;
// result tables, decision counts, and hop byte counters match the simulator.
//
// Single compute node only. Sharded shuffle jobs stay on the sim backend,
// where four nodes are cheap to model.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <thread>
#include <utility>
#include <vector>

#include "mdc/arbitrator.hpp"
#include "mdc/compute_engine.hpp"
#include "mdc/error.hpp"
#include "mdc/estimator.hpp"
#include "mdc/plan.hpp"
#include "mdc/runner.hpp"
#include "mdc/storage_engine.hpp"
#include "mdc/transport.hpp"

namespace mdc {

struct NetOptions {
    // Real seconds per model second when pacing slot occupancy. Large enough
    // that release ordering is immune to scheduler jitter at bench scales.
    double pace = 200.0;
};

class NetStorageServer {
  public:
    NetStorageServer(StorageEngine& storage, const ScenarioConfig& cfg, double pace)
        : storage_(storage), link_{cfg.env.network_bw}, pace_(pace),
          arbiter_(cfg.policy, scaled_pd_slots(cfg.env, cfg.power), cfg.env.pb_slots,
                   cfg.forced_pushdown) {
        env_ = cfg.env;
        env_.power = 1.0; // capacity is the knob; see ScenarioRunner
        reader_ = std::thread([this] { serve(); });
        timer_ = std::thread([this] { timer_loop(); });
    }

    NetStorageServer(const NetStorageServer&) = delete;
    NetStorageServer& operator=(const NetStorageServer&) = delete;

    ~NetStorageServer() { stop(); }

    uint16_t port() const { return listener_.port(); }

    void stop() {
        {
            std::lock_guard<std::mutex> lk(timer_mu_);
            if (stopped_) return;
            stopped_ = true;
            releases_.clear();
        }
        timer_cv_.notify_all();
        {
            std::lock_guard<std::mutex> lk(write_mu_);
            if (conn_fd_ >= 0) ::shutdown(conn_fd_, SHUT_RDWR);
        }
        if (reader_.joinable()) reader_.join();
        if (timer_.joinable()) timer_.join();
        {
            std::lock_guard<std::mutex> lk(write_mu_);
            if (conn_fd_ >= 0) {
                ::close(conn_fd_);
                conn_fd_ = -1;
            }
        }
    }

    struct PerRequest {
        uint64_t bytes_scanned = 0;
        uint64_t cols_accessed = 0;
        double exec_seconds = 0.0; // real CPU time in fragment execution
    };

    struct Stats {
        uint32_t admitted = 0;
        uint32_t pushed_back = 0;
        std::map<uint64_t, PerRequest> by_request;
    };

    // Valid once the client is done; the maps are quiet by then.
    Stats stats() const {
        std::lock_guard<std::mutex> lk(mu_);
        return stats_;
    }

  private:
    using Clock = std::chrono::steady_clock;

    void serve() {
        int fd = listener_.accept_one();
        {
            std::lock_guard<std::mutex> lk(write_mu_);
            conn_fd_ = fd;
        }
        for (;;) {
            Frame f;
            try {
                f = recv_frame(fd);
            } catch (const IoError&) {
                break; // client hung up; occupancy timers may still be pending
            }
            switch (f.type) {
                case MsgType::PushdownRequest: on_request(f); break;
                case MsgType::RawFetch: on_raw_fetch(f.request_id); break;
                default:
                    send(Frame{MsgType::Error, f.request_id, {}});
                    return;
            }
        }
    }

    void on_request(const Frame& f) {
        PushdownRequest req = decode_request(f.payload);
        RequestFootprint fp = request_footprint(req, storage_.catalog());
        RequestEntry e;
        e.request_id = req.request_id;
        e.t_pd = estimate_pushdown_time(static_cast<double>(fp.input_bytes), fp.output_bytes,
                                        env_)
                     .total();
        e.t_pb = estimate_pushback_time(static_cast<double>(fp.input_bytes), env_).total();
        std::vector<Dispatch> ds;
        {
            std::lock_guard<std::mutex> lk(mu_);
            reqs_.emplace(req.request_id, std::move(req));
            ds = arbiter_.on_arrival(e);
        }
        run_dispatches(ds);
    }

    void run_dispatches(const std::vector<Dispatch>& ds) {
        for (const Dispatch& d : ds)
            d.path == Path::Pushdown ? do_pushdown(d.request_id) : do_pushback(d.request_id);
    }

    const PushdownRequest& request(uint64_t id) {
        std::lock_guard<std::mutex> lk(mu_);
        return reqs_.at(id); // node-based map; the reference stays valid
    }

    void do_pushdown(uint64_t id) {
        const PushdownRequest& req = request(id);
        auto t0 = Clock::now();
        StorageEngine::FragmentResult r;
        {
            std::lock_guard<std::mutex> lk(engine_mu_);
            r = storage_.execute(req);
        }
        std::chrono::duration<double> spent = Clock::now() - t0;
        double occupancy = static_cast<double>(r.report.bytes_scanned) / env_.disk_bw +
                           static_cast<double>(r.report.bytes_scanned) / env_.storage_rate();
        {
            std::lock_guard<std::mutex> lk(mu_);
            stats_.admitted++;
            PerRequest& pr = stats_.by_request[id];
            pr.bytes_scanned = r.report.bytes_scanned;
            pr.cols_accessed = r.report.columns_accessed;
            pr.exec_seconds = spent.count();
        }
        Frame f;
        f.request_id = id;
        if (r.out.bitmap && r.out.block.columns.empty()) {
            f.type = MsgType::BitmapPayload;
            f.payload = r.out.bitmap->bytes();
        } else {
            f.type = MsgType::PushdownResult;
            ByteWriter w;
            encode_block(r.out.block, w);
            f.payload = w.take();
        }
        send(f);
        schedule_release(Path::Pushdown, occupancy);
    }

    void do_pushback(uint64_t id) {
        const PushdownRequest& req = request(id);
        StorageEngine::RawFetch raw;
        {
            std::lock_guard<std::mutex> lk(engine_mu_);
            raw = storage_.raw_fetch(req.table, req.partition_id, req.accessed_columns());
        }
        ByteWriter w;
        encode_block(raw.block, w);
        Frame data;
        data.type = MsgType::RawData;
        data.request_id = id;
        data.payload = w.take();

        // Slot held for the whole round trip, like the sim's pushback stream.
        double occupancy = 2.0 * link_.transfer_time(kFrameOverhead) +
                           static_cast<double>(raw.payload_bytes) / env_.disk_bw +
                           link_.transfer_time(data.wire_size());
        {
            std::lock_guard<std::mutex> lk(mu_);
            stats_.pushed_back++;
            PerRequest& pr = stats_.by_request[id];
            pr.bytes_scanned = raw.payload_bytes;
            pr.cols_accessed = req.accessed_columns().size();
            staged_raw_.emplace(id, std::move(data));
        }
        send(Frame{MsgType::PushbackSignal, id, {}});
        schedule_release(Path::Pushback, occupancy);
    }

    void on_raw_fetch(uint64_t id) {
        Frame data;
        {
            std::lock_guard<std::mutex> lk(mu_);
            auto it = staged_raw_.find(id);
            if (it == staged_raw_.end())
                throw ExecError("raw fetch for request " + std::to_string(id) +
                                " without a pushback signal");
            data = std::move(it->second);
            staged_raw_.erase(it);
        }
        send(data);
    }

    void send(const Frame& f) {
        std::lock_guard<std::mutex> lk(write_mu_);
        if (conn_fd_ < 0) return; // connection already gone during shutdown
        send_frame(conn_fd_, f);
    }

    void schedule_release(Path p, double model_seconds) {
        auto when = Clock::now() + std::chrono::duration_cast<Clock::duration>(
                                       std::chrono::duration<double>(model_seconds * pace_));
        {
            std::lock_guard<std::mutex> lk(timer_mu_);
            if (stopped_) return;
            releases_.emplace(std::make_pair(when, timer_seq_++), p);
        }
        timer_cv_.notify_all();
    }

    void timer_loop() {
        std::unique_lock<std::mutex> lk(timer_mu_);
        for (;;) {
            if (stopped_) return;
            if (releases_.empty()) {
                timer_cv_.wait(lk);
                continue;
            }
            auto next = releases_.begin()->first.first;
            if (Clock::now() < next) {
                timer_cv_.wait_until(lk, next);
                continue;
            }
            Path p = releases_.begin()->second;
            releases_.erase(releases_.begin());
            lk.unlock();
            std::vector<Dispatch> ds;
            {
                std::lock_guard<std::mutex> g(mu_);
                ds = arbiter_.on_completion(p);
            }
            run_dispatches(ds);
            lk.lock();
        }
    }

    StorageEngine& storage_;
    ResourceEnvelope env_;
    LinkModel link_;
    double pace_;

    TcpListener listener_;
    std::thread reader_;
    std::thread timer_;
    int conn_fd_ = -1;
    std::mutex write_mu_;  // frame writes interleave from reader and timer
    std::mutex engine_mu_; // engine calls are serialized; slots model concurrency

    mutable std::mutex mu_;
    Arbiter arbiter_;
    std::map<uint64_t, PushdownRequest> reqs_;
    std::map<uint64_t, Frame> staged_raw_;
    Stats stats_;

    std::mutex timer_mu_;
    std::condition_variable timer_cv_;
    std::map<std::pair<Clock::time_point, uint64_t>, Path> releases_;
    uint64_t timer_seq_ = 0;
    bool stopped_ = false;
};

// Mirrors the sim's bitmap application: filter the pinned columns by the
// bitmap, then run the recipe's tail ops.
inline Block apply_bitmap_at_compute(const PinnedCache& cache, const BitmapApplySpec& ba,
                                     const std::string& table, uint32_t pid,
                                     const SelectionBitmap& bm) {
    Block pinned;
    for (const auto& col : ba.cached_columns) pinned.add(cache.get(table, pid, col));
    PushdownRequest pseudo;
    pseudo.table = table;
    pseudo.partition_id = pid;
    pseudo.fragment.push_back(PlanNode::scan(table, ba.cached_columns));
    for (const auto& op : ba.tail_ops) pseudo.fragment.push_back(op);
    BitmapDirective d;
    d.mode = BitmapDirective::Mode::ApplyAttachedBitmap;
    pseudo.bitmap = d;
    FragmentOutput out = run_fragment_ops(pseudo, std::move(pinned), &bm);
    return std::move(out.block);
}

inline ScenarioResult run_scenario_net(StorageEngine& storage, const PinnedCache* cache,
                                       std::vector<JobSpec> jobs, const ScenarioConfig& cfg,
                                       const NetOptions& net = {}) {
    for (const auto& j : jobs)
        if (j.sharded || j.scatter_at_compute || !j.scatter_ids.empty())
            throw ExecError("net mode runs single-node jobs only; shuffle scenarios are "
                            "sim-only");

    using Clock = std::chrono::steady_clock;
    auto seconds_since = [](Clock::time_point t0) {
        return std::chrono::duration<double>(Clock::now() - t0).count();
    };

    NetStorageServer server(storage, cfg, net.pace);
    int fd = connect_tcp(server.port());
    auto started = Clock::now();

    struct ReqRef {
        const PushdownRequest* req;
        size_t job;
    };
    std::map<uint64_t, ReqRef> by_id;
    std::vector<JobResult> results(jobs.size());
    std::vector<StubBindings> binds(jobs.size());
    for (size_t ji = 0; ji < jobs.size(); ++ji) {
        results[ji].label = jobs[ji].label;
        for (const auto& r : jobs[ji].requests) {
            if (!by_id.emplace(r.request_id, ReqRef{&r, ji}).second)
                throw ExecError("duplicate request id " + std::to_string(r.request_id) +
                                " across jobs");
        }
    }

    // Same uplink order as the sim: round-robin across jobs.
    std::set<uint64_t> pending;
    {
        std::vector<size_t> cursor(jobs.size(), 0);
        for (bool more = true; more;) {
            more = false;
            for (size_t ji = 0; ji < jobs.size(); ++ji) {
                if (cursor[ji] >= jobs[ji].requests.size()) continue;
                const PushdownRequest& r = jobs[ji].requests[cursor[ji]++];
                more = true;
                Frame f;
                f.type = MsgType::PushdownRequest;
                f.request_id = r.request_id;
                f.payload = encode_request(r);
                results[ji].hops.add(Hop::ComputeToStorage, f.wire_size());
                send_frame(fd, f);
                pending.insert(r.request_id);
            }
        }
    }

    auto bind_block = [&](uint64_t id, Block b) {
        const ReqRef& ref = by_id.at(id);
        binds[ref.job].by_request[id].push_back(std::move(b));
        pending.erase(id);
    };
    auto apply_and_bind = [&](uint64_t id, const SelectionBitmap& bm) {
        const ReqRef& ref = by_id.at(id);
        const JobSpec& spec = jobs[ref.job];
        if (!spec.bitmap_apply)
            throw ExecError("request " + std::to_string(id) +
                            " produced a bitmap but the job has no apply recipe");
        if (!cache) throw ExecError("bitmap application needs a pinned cache");
        auto t0 = Clock::now();
        Block out = apply_bitmap_at_compute(*cache, *spec.bitmap_apply, ref.req->table,
                                            ref.req->partition_id, bm);
        results[ref.job].t_nonpush += seconds_since(t0);
        bind_block(id, std::move(out));
    };

    while (!pending.empty()) {
        Frame f = recv_frame(fd);
        auto it = by_id.find(f.request_id);
        if (it == by_id.end())
            throw ExecError("frame for unknown request " + std::to_string(f.request_id));
        JobResult& res = results[it->second.job];
        const PushdownRequest& req = *it->second.req;
        switch (f.type) {
            case MsgType::PushdownResult: {
                res.hops.add(Hop::StorageToCompute, f.wire_size());
                res.admitted++;
                ByteReader r(f.payload.data(), f.payload.size());
                bind_block(f.request_id, decode_block(r));
                break;
            }
            case MsgType::BitmapPayload: {
                res.hops.add(Hop::StorageToCompute, f.wire_size());
                res.admitted++;
                if (!cache) throw ExecError("bitmap application needs a pinned cache");
                const JobSpec& spec = jobs[it->second.job];
                if (!spec.bitmap_apply)
                    throw ExecError("bitmap payload without an apply recipe");
                uint64_t rows = cache
                                    ->get(req.table, req.partition_id,
                                          spec.bitmap_apply->cached_columns.at(0))
                                    .size();
                apply_and_bind(f.request_id,
                               SelectionBitmap::from_bytes(rows, std::move(f.payload)));
                break;
            }
            case MsgType::PushbackSignal: {
                res.hops.add(Hop::StorageToCompute, f.wire_size());
                res.pushed_back++;
                Frame fetch;
                fetch.type = MsgType::RawFetch;
                fetch.request_id = f.request_id;
                res.hops.add(Hop::ComputeToStorage, fetch.wire_size());
                send_frame(fd, fetch);
                break;
            }
            case MsgType::RawData: {
                res.hops.add(Hop::StorageToCompute, f.wire_size());
                ByteReader r(f.payload.data(), f.payload.size());
                Block raw = decode_block(r);
                auto t0 = Clock::now();
                FragmentOutput out = handle_pushback(req, std::move(raw));
                res.t_pb += seconds_since(t0);
                if (out.bitmap && out.block.columns.empty())
                    apply_and_bind(f.request_id, *out.bitmap);
                else
                    bind_block(f.request_id, std::move(out.block));
                break;
            }
            case MsgType::Error:
                throw ExecError("storage rejected request " + std::to_string(f.request_id));
            default:
                throw ExecError(std::string("unexpected message type: ") +
                                msg_type_name(f.type));
        }
    }

    ScenarioResult out;
    for (size_t ji = 0; ji < jobs.size(); ++ji) {
        auto t0 = Clock::now();
        results[ji].result = execute_remainder(jobs[ji].remainder, binds[ji]);
        results[ji].t_nonpush += seconds_since(t0);
        results[ji].wall = seconds_since(started);
        out.jobs.push_back(std::move(results[ji]));
    }

    NetStorageServer::Stats st = server.stats();
    ::close(fd);
    server.stop();

    // Scan accounting lives at storage; fold it back onto the owning job. The
    // decision counts tallied from the client's frames must agree with the
    // server's log.
    uint32_t admitted = 0, pushed = 0;
    for (const auto& [id, pr] : st.by_request) {
        JobResult& j = out.jobs[by_id.at(id).job];
        j.bytes_scanned += pr.bytes_scanned;
        j.cols_accessed += pr.cols_accessed;
        j.t_pd += pr.exec_seconds;
    }
    for (const auto& j : out.jobs) {
        admitted += j.admitted;
        pushed += j.pushed_back;
    }
    if (admitted != st.admitted || pushed != st.pushed_back)
        throw ExecError("client and server disagree on dispatch counts");
    return out;
}

} // namespace mdc
