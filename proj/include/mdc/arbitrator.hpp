#pragma once

// Storage-side admission control for pushdown work.
//
// Requests wait in one queue in arrival order. Two slot pools bound what runs
// concurrently: pd slots execute fragments on storage CPU, pb slots stream
// raw column data back instead. On every arrival and every completion the
// arbiter drains: pick a waiting request, give it its better path if a slot
// is free, fall back to the other path rather than idle, stop only when both
// pools are full. Which request gets picked is the policy's call.
//
// Not thread safe; the caller serializes (the simulator's event loop and the
// server's reader thread both do).

#include <cstdint>
#include <deque>
#include <vector>

#include "mdc/error.hpp"

namespace mdc {

enum class Path : uint8_t { Pushdown = 0, Pushback = 1 };

inline const char* path_name(Path p) { return p == Path::Pushdown ? "pushdown" : "pushback"; }

struct RequestEntry {
    uint64_t request_id = 0;
    double t_pd = 0.0; // estimated seconds if executed at storage
    double t_pb = 0.0; // estimated seconds if shipped raw

    // pushdown amenability; positive means pushdown is the faster path
    double pa() const { return t_pb - t_pd; }
};

enum class ArbiterPolicy : uint8_t {
    Fifo,         // strict arrival order, each request prefers its faster path
    PaAware,      // pd slots take the highest amenability, pb slots the lowest
    AllPushdown,  // pd slots only; pb pool never used
    AllPushback,  // pb slots only; pd pool never used
    ForcedSplit,  // first n arrivals are pinned to pushdown, the rest to pushback
};

struct Dispatch {
    uint64_t request_id = 0;
    Path path = Path::Pushdown;

    bool operator==(const Dispatch&) const = default;
};

struct DecisionRecord {
    uint64_t request_id = 0;
    Path path = Path::Pushdown;
    double pa = 0.0;
    uint64_t waited_behind = 0; // queue length in front of it when it arrived
    bool fell_back = false;     // ran on the slower path because the faster was full
};

class Arbiter {
public:
    Arbiter(ArbiterPolicy policy, uint32_t pd_slots, uint32_t pb_slots,
            uint64_t forced_pushdown = 0)
        : policy_(policy), pd_slots_(pd_slots), pb_slots_(pb_slots),
          forced_pushdown_(forced_pushdown) {
        if (pd_slots == 0 && pb_slots == 0) throw ExecError("arbiter needs at least one slot");
    }

    std::vector<Dispatch> on_arrival(const RequestEntry& e) {
        queue_.push_back(Waiting{e, arrivals_++, queue_.size()});
        return drain();
    }

    std::vector<Dispatch> on_completion(Path freed) {
        uint32_t& used = freed == Path::Pushdown ? pd_used_ : pb_used_;
        if (used == 0)
            throw ExecError(std::string("completion on idle ") + path_name(freed) + " pool");
        --used;
        return drain();
    }

    size_t waiting() const { return queue_.size(); }
    uint32_t pd_in_flight() const { return pd_used_; }
    uint32_t pb_in_flight() const { return pb_used_; }
    const std::vector<DecisionRecord>& log() const { return log_; }

private:
    struct Waiting {
        RequestEntry e;
        uint64_t arrival_seq;
        uint64_t queued_behind;
    };

    bool pd_free() const { return pd_used_ < pd_slots_; }
    bool pb_free() const { return pb_used_ < pb_slots_; }

    // Earliest arrival wins ties, so decisions are deterministic.
    size_t max_pa_index() const {
        size_t best = 0;
        for (size_t i = 1; i < queue_.size(); ++i)
            if (queue_[i].e.pa() > queue_[best].e.pa()) best = i;
        return best;
    }
    size_t min_pa_index() const {
        size_t best = 0;
        for (size_t i = 1; i < queue_.size(); ++i)
            if (queue_[i].e.pa() < queue_[best].e.pa()) best = i;
        return best;
    }

    void dispatch(size_t index, Path path, bool fell_back, std::vector<Dispatch>& out) {
        const Waiting& w = queue_[index];
        (path == Path::Pushdown ? pd_used_ : pb_used_)++;
        out.push_back(Dispatch{w.e.request_id, path});
        log_.push_back(DecisionRecord{w.e.request_id, path, w.e.pa(), w.queued_behind, fell_back});
        queue_.erase(queue_.begin() + static_cast<std::ptrdiff_t>(index));
    }

    // One drain step; true if something was dispatched.
    bool step(std::vector<Dispatch>& out) {
        if (queue_.empty()) return false;
        switch (policy_) {
            case ArbiterPolicy::AllPushdown:
                if (!pd_free()) return false;
                dispatch(0, Path::Pushdown, false, out);
                return true;
            case ArbiterPolicy::AllPushback:
                if (!pb_free()) return false;
                dispatch(0, Path::Pushback, false, out);
                return true;
            case ArbiterPolicy::Fifo: {
                const RequestEntry& front = queue_.front().e;
                Path preferred = front.pa() >= 0 ? Path::Pushdown : Path::Pushback;
                bool preferred_free =
                    preferred == Path::Pushdown ? pd_free() : pb_free();
                bool other_free = preferred == Path::Pushdown ? pb_free() : pd_free();
                if (preferred_free) {
                    dispatch(0, preferred, false, out);
                    return true;
                }
                if (other_free) {
                    dispatch(0,
                             preferred == Path::Pushdown ? Path::Pushback : Path::Pushdown,
                             true, out);
                    return true;
                }
                return false;
            }
            case ArbiterPolicy::PaAware: {
                if (pd_free() && pb_free()) {
                    size_t hi = max_pa_index();
                    if (queue_[hi].e.pa() >= 0) dispatch(hi, Path::Pushdown, false, out);
                    else dispatch(min_pa_index(), Path::Pushback, false, out);
                    return true;
                }
                if (pd_free()) {
                    size_t hi = max_pa_index();
                    bool fell_back = queue_[hi].e.pa() < 0;
                    dispatch(hi, Path::Pushdown, fell_back, out);
                    return true;
                }
                if (pb_free()) {
                    size_t lo = min_pa_index();
                    bool fell_back = queue_[lo].e.pa() > 0;
                    dispatch(lo, Path::Pushback, fell_back, out);
                    return true;
                }
                return false;
            }
            case ArbiterPolicy::ForcedSplit: {
                // Pinned requests wait for their own pool; later arrivals may
                // overtake a blocked one so both pools stay busy.
                for (size_t i = 0; i < queue_.size(); ++i) {
                    Path pinned = queue_[i].arrival_seq < forced_pushdown_ ? Path::Pushdown
                                                                           : Path::Pushback;
                    bool free = pinned == Path::Pushdown ? pd_free() : pb_free();
                    if (free) {
                        dispatch(i, pinned, false, out);
                        return true;
                    }
                }
                return false;
            }
        }
        return false;
    }

    std::vector<Dispatch> drain() {
        std::vector<Dispatch> out;
        while (step(out)) {
        }
        return out;
    }

    ArbiterPolicy policy_;
    uint32_t pd_slots_;
    uint32_t pb_slots_;
    uint64_t forced_pushdown_;
    uint32_t pd_used_ = 0;
    uint32_t pb_used_ = 0;
    uint64_t arrivals_ = 0;
    std::deque<Waiting> queue_;
    std::vector<DecisionRecord> log_;
};

} // namespace mdc
