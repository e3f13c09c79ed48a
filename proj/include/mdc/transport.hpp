#pragma once

// Message transport shared by both backends. The frame layout is bit-exact:
//
//   length u32 LE | msg_type u8 | request_id u64 LE | payload bytes
//
// where length covers msg_type + request_id + payload (so a frame occupies
// length + 4 bytes on the wire). The simulator moves these frames through a
// virtual-time event queue with per-transfer dedicated bandwidth; the socket
// backend moves the same bytes over TCP. Byte counters for the three hops
// (storage->compute, compute<->compute, compute->storage) live here so both
// backends account traffic identically.

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstdint>
#include <cstring>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mdc/error.hpp"
#include "mdc/wire.hpp"

namespace mdc {

enum class MsgType : uint8_t {
    PushdownRequest = 1,
    PushdownResult = 2,
    PushbackSignal = 3,
    RawFetch = 4,
    RawData = 5,
    ShuffleFetch = 6,
    ShuffleData = 7,
    BitmapPayload = 8,
    Error = 9,
};

inline bool known_msg_type(uint8_t t) { return t >= 1 && t <= 9; }

inline const char* msg_type_name(MsgType t) {
    switch (t) {
        case MsgType::PushdownRequest: return "pushdown_request";
        case MsgType::PushdownResult: return "pushdown_result";
        case MsgType::PushbackSignal: return "pushback_signal";
        case MsgType::RawFetch: return "raw_fetch";
        case MsgType::RawData: return "raw_data";
        case MsgType::ShuffleFetch: return "shuffle_fetch";
        case MsgType::ShuffleData: return "shuffle_data";
        case MsgType::BitmapPayload: return "bitmap_payload";
        case MsgType::Error: return "error";
    }
    return "unknown";
}

// length field (4) + what it covers: type (1) + request id (8).
inline constexpr size_t kFrameOverhead = 13;

// Guards recv_frame against allocating on a garbage length field.
inline constexpr uint32_t kMaxFrameLength = 256u << 20;

struct Frame {
    MsgType type = MsgType::Error;
    uint64_t request_id = 0;
    std::vector<uint8_t> payload;

    size_t wire_size() const { return kFrameOverhead + payload.size(); }

    bool operator==(const Frame&) const = default;
};

inline std::vector<uint8_t> encode_frame(const Frame& f) {
    if (f.payload.size() > kMaxFrameLength - 9)
        throw DecodeError("frame payload exceeds the frame length limit");
    ByteWriter w;
    w.u32(static_cast<uint32_t>(9 + f.payload.size()));
    w.u8(static_cast<uint8_t>(f.type));
    w.u64(f.request_id);
    w.bytes(f.payload.data(), f.payload.size());
    return w.take();
}

// Decodes the region after the length prefix: msg_type | request_id | payload.
inline Frame decode_frame_body(const uint8_t* body, size_t len) {
    if (len < 9) throw DecodeError("frame length below the fixed header size");
    ByteReader r(body, len);
    uint8_t t = r.u8("msg type");
    if (!known_msg_type(t))
        throw DecodeError("unknown message type " + std::to_string(t));
    Frame f;
    f.type = static_cast<MsgType>(t);
    f.request_id = r.u64("request id");
    size_t n = r.remaining();
    const uint8_t* p = r.take("payload", n);
    f.payload.assign(p, p + n);
    return f;
}

// Whole-buffer decode; the buffer must hold exactly one frame.
inline Frame decode_frame(const uint8_t* data, size_t size) {
    ByteReader r(data, size);
    uint32_t len = r.u32("frame length");
    if (len != r.remaining())
        throw DecodeError("frame length does not match the buffer");
    return decode_frame_body(data + r.offset(), len);
}

inline Frame decode_frame(const std::vector<uint8_t>& bytes) {
    return decode_frame(bytes.data(), bytes.size());
}

// ---- hop accounting -------------------------------------------------------

enum class Hop : uint8_t { StorageToCompute = 0, ComputeToCompute = 1, ComputeToStorage = 2 };

inline const char* hop_name(Hop h) {
    switch (h) {
        case Hop::StorageToCompute: return "s2c";
        case Hop::ComputeToCompute: return "c2c";
        case Hop::ComputeToStorage: return "c2s";
    }
    return "?";
}

struct HopCounters {
    uint64_t s2c = 0;
    uint64_t c2c = 0;
    uint64_t c2s = 0;
    // Subset of c2c that carries raw base-table columns (shuffled fact rows,
    // as opposed to partial aggregates or bitmaps). Scatter-at-storage keeps
    // this at zero; scatter-at-compute does not.
    uint64_t c2c_base_table = 0;

    void add(Hop hop, uint64_t bytes, bool base_table = false) {
        switch (hop) {
            case Hop::StorageToCompute: s2c += bytes; break;
            case Hop::ComputeToCompute:
                c2c += bytes;
                if (base_table) c2c_base_table += bytes;
                break;
            case Hop::ComputeToStorage: c2s += bytes; break;
        }
    }

    uint64_t total() const { return s2c + c2c + c2s; }
};

// ---- virtual-time simulator core ------------------------------------------

// Event loop keyed by (time, insertion sequence); ties run in insertion
// order, so a run is fully determined by what was scheduled.
class SimQueue {
  public:
    using Fn = std::function<void()>;

    void at(double time, Fn fn) {
        if (time < now_) throw ExecError("event scheduled before the current time");
        events_.emplace(Key{time, seq_++}, std::move(fn));
    }

    void after(double delay, Fn fn) { at(now_ + delay, std::move(fn)); }

    double now() const { return now_; }
    bool empty() const { return events_.empty(); }
    size_t pending() const { return events_.size(); }
    uint64_t processed() const { return processed_; }

    bool step() {
        if (events_.empty()) return false;
        auto it = events_.begin();
        now_ = it->first.first;
        Fn fn = std::move(it->second);
        events_.erase(it);
        ++processed_;
        fn();
        return true;
    }

    void run() {
        while (step()) {
        }
    }

  private:
    using Key = std::pair<double, uint64_t>;

    double now_ = 0.0;
    uint64_t seq_ = 0;
    uint64_t processed_ = 0;
    std::map<Key, Fn> events_;
};

// Each transfer gets the full per-request bandwidth; concurrent transfers
// never slow each other down.
struct LinkModel {
    double bandwidth = 80e6; // bytes per second

    double transfer_time(uint64_t bytes) const {
        if (bandwidth <= 0) throw ExecError("link bandwidth must be positive");
        return static_cast<double>(bytes) / bandwidth;
    }
};

struct TraceRecord {
    double time = 0.0;
    std::string kind;
    uint64_t request_id = 0;
    uint64_t bytes = 0;
};

struct TraceLog {
    bool enabled = false;
    std::vector<TraceRecord> records;

    void note(double time, std::string kind, uint64_t request_id, uint64_t bytes) {
        if (enabled) records.push_back({time, std::move(kind), request_id, bytes});
    }
};

inline std::string format_trace_line(const TraceRecord& t) {
    char head[64];
    std::snprintf(head, sizeof head, "%.9f", t.time);
    return std::string(head) + " " + t.kind + " " + std::to_string(t.request_id) + " " +
           std::to_string(t.bytes);
}

// Counts the frame on its hop now, delivers it one transfer-time later.
inline void sim_send(SimQueue& q, const LinkModel& link, HopCounters& hops, Hop hop,
                     uint64_t frame_bytes, SimQueue::Fn on_delivered,
                     bool base_table = false) {
    hops.add(hop, frame_bytes, base_table);
    q.after(link.transfer_time(frame_bytes), std::move(on_delivered));
}

// ---- socket backend --------------------------------------------------------

inline void write_all(int fd, const void* p, size_t n) {
    const auto* b = static_cast<const uint8_t*>(p);
    while (n > 0) {
        ssize_t w = ::write(fd, b, n);
        if (w < 0) {
            if (errno == EINTR) continue;
            throw IoError(std::string("write failed: ") + std::strerror(errno));
        }
        b += w;
        n -= static_cast<size_t>(w);
    }
}

inline void read_exact(int fd, void* p, size_t n) {
    auto* b = static_cast<uint8_t*>(p);
    while (n > 0) {
        ssize_t r = ::read(fd, b, n);
        if (r < 0) {
            if (errno == EINTR) continue;
            throw IoError(std::string("read failed: ") + std::strerror(errno));
        }
        if (r == 0) throw IoError("connection closed mid-frame");
        b += r;
        n -= static_cast<size_t>(r);
    }
}

inline void send_frame(int fd, const Frame& f) {
    std::vector<uint8_t> bytes = encode_frame(f);
    write_all(fd, bytes.data(), bytes.size());
}

inline Frame recv_frame(int fd) {
    uint8_t head[4];
    read_exact(fd, head, sizeof head);
    uint32_t len = 0;
    for (size_t i = 0; i < 4; ++i) len |= static_cast<uint32_t>(head[i]) << (8 * i);
    if (len < 9) throw DecodeError("frame length below the fixed header size");
    if (len > kMaxFrameLength) throw DecodeError("frame length exceeds the limit");
    std::vector<uint8_t> body(len);
    read_exact(fd, body.data(), body.size());
    return decode_frame_body(body.data(), body.size());
}

// Loopback listener; port 0 lets the kernel pick one.
class TcpListener {
  public:
    explicit TcpListener(uint16_t port = 0) {
        fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd_ < 0) throw IoError(std::string("socket failed: ") + std::strerror(errno));
        int one = 1;
        ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
        addr.sin_port = htons(port);
        if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) {
            int err = errno;
            ::close(fd_);
            throw IoError(std::string("bind failed: ") + std::strerror(err));
        }
        if (::listen(fd_, 16) < 0) {
            int err = errno;
            ::close(fd_);
            throw IoError(std::string("listen failed: ") + std::strerror(err));
        }
        sockaddr_in bound{};
        socklen_t len = sizeof bound;
        if (::getsockname(fd_, reinterpret_cast<sockaddr*>(&bound), &len) < 0) {
            int err = errno;
            ::close(fd_);
            throw IoError(std::string("getsockname failed: ") + std::strerror(err));
        }
        port_ = ntohs(bound.sin_port);
    }

    TcpListener(const TcpListener&) = delete;
    TcpListener& operator=(const TcpListener&) = delete;

    ~TcpListener() {
        if (fd_ >= 0) ::close(fd_);
    }

    uint16_t port() const { return port_; }

    int accept_one() {
        for (;;) {
            int fd = ::accept(fd_, nullptr, nullptr);
            if (fd >= 0) {
                int one = 1;
                ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
                return fd;
            }
            if (errno == EINTR) continue;
            throw IoError(std::string("accept failed: ") + std::strerror(errno));
        }
    }

  private:
    int fd_ = -1;
    uint16_t port_ = 0;
};

inline int connect_tcp(uint16_t port) {
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw IoError(std::string("socket failed: ") + std::strerror(errno));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(port);
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) {
        int err = errno;
        ::close(fd);
        throw IoError(std::string("connect failed: ") + std::strerror(err));
    }
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    return fd;
}

} // namespace mdc
