#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <deque>
#include <map>
#include <random>
#include <vector>

#include "mdc/arbitrator.hpp"

using namespace mdc;

namespace {

// Fill a 1+1-slot arbiter so later arrivals have to queue.
void occupy_both(Arbiter& a) {
    auto d1 = a.on_arrival({100, 1.0, 2.0});
    REQUIRE(d1 == std::vector<Dispatch>{{100, Path::Pushdown}});
    auto d2 = a.on_arrival({101, 1.0, 2.0});
    REQUIRE(d2 == std::vector<Dispatch>{{101, Path::Pushback}});
}

} // namespace

TEST_CASE("amenability-aware assignment matches the worked two-request example") {
    // r1 gains little from pushdown (4 - 3), r2 gains a lot (4 - 1). With one
    // slot of each kind freeing up, the amenability-aware policy gives the
    // pushdown slot to r2; first-come order gives it to r1.
    RequestEntry r1{1, 3.0, 4.0};
    RequestEntry r2{2, 1.0, 4.0};

    SECTION("amenability-aware") {
        Arbiter a(ArbiterPolicy::PaAware, 1, 1);
        occupy_both(a);
        REQUIRE(a.on_arrival(r1).empty());
        REQUIRE(a.on_arrival(r2).empty());

        auto after_pd = a.on_completion(Path::Pushdown);
        REQUIRE(after_pd == std::vector<Dispatch>{{2, Path::Pushdown}});
        auto after_pb = a.on_completion(Path::Pushback);
        REQUIRE(after_pb == std::vector<Dispatch>{{1, Path::Pushback}});
    }
    SECTION("first-come order") {
        Arbiter a(ArbiterPolicy::Fifo, 1, 1);
        occupy_both(a);
        REQUIRE(a.on_arrival(r1).empty());
        REQUIRE(a.on_arrival(r2).empty());

        auto after_pd = a.on_completion(Path::Pushdown);
        REQUIRE(after_pd == std::vector<Dispatch>{{1, Path::Pushdown}});
        auto after_pb = a.on_completion(Path::Pushback);
        REQUIRE(after_pb == std::vector<Dispatch>{{2, Path::Pushback}});
        // r2 wanted pushdown but the slot was taken
        CHECK(a.log().back().fell_back);
    }
}

TEST_CASE("first-come policy prefers the faster path and falls back") {
    Arbiter a(ArbiterPolicy::Fifo, 2, 2);

    // negative amenability prefers pushback
    auto d1 = a.on_arrival({1, 5.0, 2.0});
    REQUIRE(d1 == std::vector<Dispatch>{{1, Path::Pushback}});
    // a tie counts as pushdown-preferred
    auto d2 = a.on_arrival({2, 3.0, 3.0});
    REQUIRE(d2 == std::vector<Dispatch>{{2, Path::Pushdown}});

    // fill pushback, then a pushback-preferring request must fall back
    auto d3 = a.on_arrival({3, 5.0, 2.0});
    REQUIRE(d3 == std::vector<Dispatch>{{3, Path::Pushback}});
    auto d4 = a.on_arrival({4, 5.0, 2.0});
    REQUIRE(d4 == std::vector<Dispatch>{{4, Path::Pushdown}});
    CHECK(a.log().back().fell_back);

    // both pools full: nothing moves until a completion
    REQUIRE(a.on_arrival({5, 1.0, 2.0}).empty());
    CHECK(a.waiting() == 1);
    auto d5 = a.on_completion(Path::Pushdown);
    REQUIRE(d5 == std::vector<Dispatch>{{5, Path::Pushdown}});
}

TEST_CASE("single-path policies never touch the other pool") {
    SECTION("pushdown only") {
        Arbiter a(ArbiterPolicy::AllPushdown, 1, 4);
        REQUIRE(a.on_arrival({1, 9.0, 1.0}) == std::vector<Dispatch>{{1, Path::Pushdown}});
        REQUIRE(a.on_arrival({2, 9.0, 1.0}).empty()); // pb slots idle but unused
        CHECK(a.pb_in_flight() == 0);
        REQUIRE(a.on_completion(Path::Pushdown) ==
                std::vector<Dispatch>{{2, Path::Pushdown}});
    }
    SECTION("pushback only") {
        Arbiter a(ArbiterPolicy::AllPushback, 4, 1);
        REQUIRE(a.on_arrival({1, 1.0, 9.0}) == std::vector<Dispatch>{{1, Path::Pushback}});
        REQUIRE(a.on_arrival({2, 1.0, 9.0}).empty());
        CHECK(a.pd_in_flight() == 0);
        REQUIRE(a.on_completion(Path::Pushback) ==
                std::vector<Dispatch>{{2, Path::Pushback}});
    }
}

TEST_CASE("forced split pins arrivals and lets later ones overtake") {
    Arbiter a(ArbiterPolicy::ForcedSplit, 1, 1, 2);

    REQUIRE(a.on_arrival({1, 1.0, 1.0}) == std::vector<Dispatch>{{1, Path::Pushdown}});
    REQUIRE(a.on_arrival({2, 1.0, 1.0}).empty()); // pinned to pd, pd busy
    // third arrival is pinned to pushback and passes the blocked one
    REQUIRE(a.on_arrival({3, 1.0, 1.0}) == std::vector<Dispatch>{{3, Path::Pushback}});
    CHECK(a.waiting() == 1);
    REQUIRE(a.on_completion(Path::Pushdown) == std::vector<Dispatch>{{2, Path::Pushdown}});

    // everything after the pin count goes to pushback
    REQUIRE(a.on_arrival({4, 0.1, 9.0}).empty());
    REQUIRE(a.on_completion(Path::Pushback) == std::vector<Dispatch>{{4, Path::Pushback}});
}

TEST_CASE("misuse is rejected") {
    CHECK_THROWS_AS(Arbiter(ArbiterPolicy::Fifo, 0, 0), ExecError);
    Arbiter a(ArbiterPolicy::Fifo, 1, 1);
    CHECK_THROWS_AS(a.on_completion(Path::Pushdown), ExecError);
    a.on_arrival({1, 1.0, 2.0});
    CHECK_THROWS_AS(a.on_completion(Path::Pushback), ExecError);
}

namespace {

struct Shadow {
    std::deque<RequestEntry> fifo;  // arrival order of still-waiting requests
    std::map<uint64_t, uint64_t> arrival_seq;
    uint64_t next_seq = 0;

    void arrive(const RequestEntry& e) {
        arrival_seq[e.request_id] = next_seq++;
        fifo.push_back(e);
    }
    RequestEntry remove(uint64_t id) {
        for (auto it = fifo.begin(); it != fifo.end(); ++it) {
            if (it->request_id == id) {
                RequestEntry e = *it;
                fifo.erase(it);
                return e;
            }
        }
        FAIL("dispatched a request that was not waiting: " + std::to_string(id));
        return {};
    }
    double max_pa() const {
        double m = fifo.front().pa();
        for (const auto& e : fifo) m = std::max(m, e.pa());
        return m;
    }
    double min_pa() const {
        double m = fifo.front().pa();
        for (const auto& e : fifo) m = std::min(m, e.pa());
        return m;
    }
};

// Apply one batch of dispatches against the shadow queue, checking the
// policy's selection invariant for each one, and track in-flight paths.
void absorb(ArbiterPolicy policy, uint64_t forced_n, Shadow& shadow,
            std::vector<std::pair<uint64_t, Path>>& in_flight,
            const std::vector<Dispatch>& batch) {
    for (const auto& d : batch) {
        REQUIRE_FALSE(shadow.fifo.empty());
        switch (policy) {
            case ArbiterPolicy::Fifo:
            case ArbiterPolicy::AllPushdown:
            case ArbiterPolicy::AllPushback:
                CHECK(shadow.fifo.front().request_id == d.request_id);
                break;
            case ArbiterPolicy::PaAware: {
                double pa = 0;
                for (const auto& e : shadow.fifo)
                    if (e.request_id == d.request_id) pa = e.pa();
                if (d.path == Path::Pushdown) CHECK(pa == shadow.max_pa());
                else CHECK(pa == shadow.min_pa());
                break;
            }
            case ArbiterPolicy::ForcedSplit: {
                Path pinned = shadow.arrival_seq.at(d.request_id) < forced_n
                                  ? Path::Pushdown
                                  : Path::Pushback;
                CHECK(d.path == pinned);
                break;
            }
        }
        shadow.remove(d.request_id);
        in_flight.emplace_back(d.request_id, d.path);
    }
}

void check_conservation(ArbiterPolicy policy, uint64_t forced_n, const Arbiter& a,
                        const Shadow& shadow, uint32_t pd_slots, uint32_t pb_slots) {
    CHECK(a.pd_in_flight() <= pd_slots);
    CHECK(a.pb_in_flight() <= pb_slots);
    if (shadow.fifo.empty()) return;
    switch (policy) {
        case ArbiterPolicy::Fifo:
        case ArbiterPolicy::PaAware:
            CHECK(a.pd_in_flight() == pd_slots);
            CHECK(a.pb_in_flight() == pb_slots);
            break;
        case ArbiterPolicy::AllPushdown: CHECK(a.pd_in_flight() == pd_slots); break;
        case ArbiterPolicy::AllPushback: CHECK(a.pb_in_flight() == pb_slots); break;
        case ArbiterPolicy::ForcedSplit:
            for (const auto& e : shadow.fifo) {
                if (shadow.arrival_seq.at(e.request_id) < forced_n)
                    CHECK(a.pd_in_flight() == pd_slots);
                else
                    CHECK(a.pb_in_flight() == pb_slots);
            }
            break;
    }
}

} // namespace

TEST_CASE("random schedules keep every policy work-conserving") {
    std::mt19937_64 rng(7);
    const std::array<ArbiterPolicy, 5> policies{
        ArbiterPolicy::Fifo, ArbiterPolicy::PaAware, ArbiterPolicy::AllPushdown,
        ArbiterPolicy::AllPushback, ArbiterPolicy::ForcedSplit};

    for (int round = 0; round < 150; ++round) {
        ArbiterPolicy policy = policies[static_cast<size_t>(round) % policies.size()];
        uint32_t pd_slots = 1 + static_cast<uint32_t>(rng() % 4);
        uint32_t pb_slots = 1 + static_cast<uint32_t>(rng() % 4);
        uint64_t total = 5 + rng() % 25;
        uint64_t forced_n = rng() % (total + 1);
        CAPTURE(round, static_cast<int>(policy), pd_slots, pb_slots, total, forced_n);

        Arbiter a(policy, pd_slots, pb_slots, forced_n);
        Shadow shadow;
        std::vector<std::pair<uint64_t, Path>> in_flight;
        std::map<uint64_t, int> dispatched;
        uint64_t arrived = 0;

        auto absorb_and_check = [&](const std::vector<Dispatch>& batch) {
            for (const auto& d : batch) dispatched[d.request_id]++;
            absorb(policy, forced_n, shadow, in_flight, batch);
            check_conservation(policy, forced_n, a, shadow, pd_slots, pb_slots);
        };

        while (arrived < total || !in_flight.empty() || !shadow.fifo.empty()) {
            bool can_arrive = arrived < total;
            bool can_complete = !in_flight.empty();
            bool do_arrive = can_arrive && (!can_complete || rng() % 2 == 0);
            if (do_arrive) {
                RequestEntry e;
                e.request_id = ++arrived;
                e.t_pd = std::uniform_real_distribution<double>(0.1, 5.0)(rng);
                e.t_pb = std::uniform_real_distribution<double>(0.1, 5.0)(rng);
                shadow.arrive(e);
                absorb_and_check(a.on_arrival(e));
            } else if (can_complete) {
                size_t pick = rng() % in_flight.size();
                Path p = in_flight[pick].second;
                in_flight.erase(in_flight.begin() + static_cast<std::ptrdiff_t>(pick));
                absorb_and_check(a.on_completion(p));
            } else {
                break; // waiting requests can never run; conservation already checked
            }
        }

        // every policy drains completely once all completions are delivered
        CHECK(shadow.fifo.empty());
        CHECK(dispatched.size() == total);
        for (const auto& [id, n] : dispatched) {
            CAPTURE(id);
            CHECK(n == 1);
        }
    }
}

namespace {

struct DfsState {
    Arbiter arbiter;
    Shadow shadow;
    std::vector<std::pair<uint64_t, Path>> in_flight;
    std::array<int, 4> dispatched{};
    size_t arrived = 0;
};

// Walk every interleaving of arrivals and completions, checking slot bounds,
// exactly-once dispatch and terminal drain in each reachable state.
void explore(ArbiterPolicy policy, uint64_t forced_n, const std::array<RequestEntry, 4>& reqs,
             const DfsState& state, long& visited) {
    ++visited;
    CHECK(state.arbiter.pd_in_flight() <= 1);
    CHECK(state.arbiter.pb_in_flight() <= 1);

    bool terminal = state.arrived == reqs.size() && state.in_flight.empty();
    if (terminal) {
        CHECK(state.shadow.fifo.empty());
        for (int n : state.dispatched) CHECK(n == 1);
        return;
    }

    auto advance = [&](DfsState next, const std::vector<Dispatch>& batch) {
        for (const auto& d : batch) {
            next.dispatched[d.request_id - 1]++;
            CHECK(next.dispatched[d.request_id - 1] == 1);
        }
        absorb(policy, forced_n, next.shadow, next.in_flight, batch);
        explore(policy, forced_n, reqs, next, visited);
    };

    if (state.arrived < reqs.size()) {
        DfsState next = state;
        const RequestEntry& e = reqs[next.arrived++];
        next.shadow.arrive(e);
        auto batch = next.arbiter.on_arrival(e);
        advance(std::move(next), batch);
    }
    for (size_t i = 0; i < state.in_flight.size(); ++i) {
        DfsState next = state;
        Path p = next.in_flight[i].second;
        next.in_flight.erase(next.in_flight.begin() + static_cast<std::ptrdiff_t>(i));
        auto batch = next.arbiter.on_completion(p);
        advance(std::move(next), batch);
    }
}

} // namespace

TEST_CASE("exhaustive interleavings of four requests stay sound") {
    const std::array<RequestEntry, 4> reqs{
        RequestEntry{1, 1.0, 4.0},  // strongly pushdown
        RequestEntry{2, 4.0, 1.0},  // strongly pushback
        RequestEntry{3, 2.0, 2.0},  // indifferent
        RequestEntry{4, 1.5, 2.0},  // mildly pushdown
    };
    const std::array<std::pair<ArbiterPolicy, uint64_t>, 5> cases{
        std::pair{ArbiterPolicy::Fifo, uint64_t{0}},
        std::pair{ArbiterPolicy::PaAware, uint64_t{0}},
        std::pair{ArbiterPolicy::AllPushdown, uint64_t{0}},
        std::pair{ArbiterPolicy::AllPushback, uint64_t{0}},
        std::pair{ArbiterPolicy::ForcedSplit, uint64_t{2}},
    };
    for (const auto& [policy, forced_n] : cases) {
        CAPTURE(static_cast<int>(policy));
        long visited = 0;
        DfsState start{Arbiter(policy, 1, 1, forced_n), {}, {}, {}, 0};
        explore(policy, forced_n, reqs, start, visited);
        CHECK(visited > 10); // the walk actually branched
    }
}
