#pragma once

// Logical plans, pushdown requests and the splitter that carves the
// storage-executable prefix out of a plan.
//
// A pushable fragment is a Scan -> Filter -> Project -> PartialAggregate
// prefix over one table, optionally terminated by a Shuffle. Joins, final
// aggregation and merges stay on the compute side. split_pushdown replaces
// each maximal pushable chain with a Stub node that names the per-partition
// requests whose outputs feed the remainder.

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mdc/catalog.hpp"
#include "mdc/columnar.hpp"
#include "mdc/error.hpp"
#include "mdc/wire.hpp"

namespace mdc {

enum class CmpOp : uint8_t { Lt = 0, Le = 1, Eq = 2, Ge = 3, Gt = 4, Ne = 5 };

struct Predicate {
    enum class Kind : uint8_t { Cmp = 0, And = 1, Or = 2 };

    Kind kind = Kind::Cmp;
    std::string column;            // Cmp
    CmpOp op = CmpOp::Lt;          // Cmp
    Value literal = int64_t{0};    // Cmp
    std::vector<Predicate> children; // And / Or

    static Predicate cmp(std::string col, CmpOp op, Value lit) {
        Predicate p;
        p.kind = Kind::Cmp;
        p.column = std::move(col);
        p.op = op;
        p.literal = std::move(lit);
        return p;
    }
    static Predicate conj(std::vector<Predicate> kids) {
        Predicate p;
        p.kind = Kind::And;
        p.children = std::move(kids);
        return p;
    }
    static Predicate disj(std::vector<Predicate> kids) {
        Predicate p;
        p.kind = Kind::Or;
        p.children = std::move(kids);
        return p;
    }

    void columns_referenced(std::set<std::string>& out) const {
        if (kind == Kind::Cmp) {
            out.insert(column);
        } else {
            for (const auto& c : children) c.columns_referenced(out);
        }
    }
    std::set<std::string> columns_referenced() const {
        std::set<std::string> out;
        columns_referenced(out);
        return out;
    }

    bool operator==(const Predicate&) const = default;
};

enum class AggOp : uint8_t { Sum = 0, Count = 1, Min = 2, Max = 3, Avg = 4 };

struct AggSpec {
    AggOp op = AggOp::Sum;
    std::string column; // ignored for Count
    std::string output;

    bool operator==(const AggSpec&) const = default;
};

enum class PlanKind : uint8_t {
    Scan = 1,
    Filter = 2,
    Project = 3,
    PartialAggregate = 4,
    FinalAggregate = 5,
    BitmapProbe = 6,
    Shuffle = 7,
    HashJoin = 8,
    Merge = 9,
    Stub = 10,
};

struct ShuffleParams {
    std::string key;
    uint32_t fanout = 1;
    std::vector<uint32_t> targets; // compute node ids, usually 0..fanout-1

    bool operator==(const ShuffleParams&) const = default;
};

struct PlanNode {
    PlanKind kind = PlanKind::Scan;
    std::vector<PlanNode> children;

    std::string table;                 // Scan
    std::vector<std::string> columns;  // Scan / Project
    Predicate predicate;               // Filter
    std::vector<std::string> group_by; // PartialAggregate / FinalAggregate
    std::vector<AggSpec> aggs;         // PartialAggregate / FinalAggregate
    ShuffleParams shuffle;             // Shuffle
    std::vector<std::string> left_keys, right_keys; // HashJoin
    std::vector<std::string> probe_columns;         // BitmapProbe: cached columns
    std::vector<uint64_t> stub_ids;    // Stub: request ids feeding this input
    int32_t stub_shard = -1;           // Stub: shuffle target, -1 for whole outputs
    uint32_t stub_fanout = 0;          // Stub: nonzero when outputs are sharded

    static PlanNode scan(std::string table, std::vector<std::string> cols) {
        PlanNode n;
        n.kind = PlanKind::Scan;
        n.table = std::move(table);
        n.columns = std::move(cols);
        return n;
    }
    static PlanNode filter(PlanNode child, Predicate pred) {
        PlanNode n;
        n.kind = PlanKind::Filter;
        n.predicate = std::move(pred);
        n.children.push_back(std::move(child));
        return n;
    }
    static PlanNode project(PlanNode child, std::vector<std::string> cols) {
        PlanNode n;
        n.kind = PlanKind::Project;
        n.columns = std::move(cols);
        n.children.push_back(std::move(child));
        return n;
    }
    static PlanNode partial_aggregate(PlanNode child, std::vector<std::string> group_by,
                                      std::vector<AggSpec> aggs) {
        PlanNode n;
        n.kind = PlanKind::PartialAggregate;
        n.group_by = std::move(group_by);
        n.aggs = std::move(aggs);
        n.children.push_back(std::move(child));
        return n;
    }
    static PlanNode final_aggregate(PlanNode child, std::vector<std::string> group_by,
                                    std::vector<AggSpec> aggs) {
        PlanNode n;
        n.kind = PlanKind::FinalAggregate;
        n.group_by = std::move(group_by);
        n.aggs = std::move(aggs);
        n.children.push_back(std::move(child));
        return n;
    }
    static PlanNode shuffle_by(PlanNode child, std::string key, uint32_t fanout) {
        PlanNode n;
        n.kind = PlanKind::Shuffle;
        n.shuffle.key = std::move(key);
        n.shuffle.fanout = fanout;
        for (uint32_t i = 0; i < fanout; ++i) n.shuffle.targets.push_back(i);
        n.children.push_back(std::move(child));
        return n;
    }
    static PlanNode hash_join(PlanNode left, PlanNode right, std::vector<std::string> lk,
                              std::vector<std::string> rk) {
        PlanNode n;
        n.kind = PlanKind::HashJoin;
        n.left_keys = std::move(lk);
        n.right_keys = std::move(rk);
        n.children.push_back(std::move(left));
        n.children.push_back(std::move(right));
        return n;
    }
    static PlanNode merge(std::vector<PlanNode> kids) {
        PlanNode n;
        n.kind = PlanKind::Merge;
        n.children = std::move(kids);
        return n;
    }
    static PlanNode stub(std::vector<uint64_t> ids) {
        PlanNode n;
        n.kind = PlanKind::Stub;
        n.stub_ids = std::move(ids);
        return n;
    }
    static PlanNode bitmap_probe(PlanNode child, std::vector<std::string> cached_cols) {
        PlanNode n;
        n.kind = PlanKind::BitmapProbe;
        n.probe_columns = std::move(cached_cols);
        n.children.push_back(std::move(child));
        return n;
    }

    bool operator==(const PlanNode&) const = default;
};

// ---------------------------------------------------------------------------
// Pushdown requests

struct BitmapDirective {
    enum class Mode : uint8_t { SendBitmapToCompute = 1, ApplyAttachedBitmap = 2 };

    Mode mode = Mode::SendBitmapToCompute;
    // ApplyAttachedBitmap only:
    SelectionBitmap bitmap;                // evaluated at compute from cache
    std::vector<std::string> skip_columns; // columns storage must not read
    BitOp combine = BitOp::And;            // with the fragment's own filter, if any
    bool return_combined = false;          // ship the final bitmap back too

    bool operator==(const BitmapDirective&) const = default;
};

struct PushdownRequest {
    uint64_t request_id = 0;
    std::string table;
    uint32_t partition_id = 0;
    std::vector<PlanNode> fragment; // flat op list, Scan first, no children
    double selectivity_hint = 1.0;
    std::optional<ShuffleParams> shuffle_params;
    std::optional<BitmapDirective> bitmap;

    // Columns the storage side actually reads: scan list minus skips.
    std::vector<std::string> accessed_columns() const {
        if (fragment.empty() || fragment[0].kind != PlanKind::Scan)
            throw ExecError("fragment does not start with a scan");
        std::vector<std::string> out;
        for (const auto& c : fragment[0].columns) {
            bool skipped = false;
            if (bitmap)
                for (const auto& s : bitmap->skip_columns)
                    if (s == c) skipped = true;
            if (!skipped) out.push_back(c);
        }
        return out;
    }

    bool operator==(const PushdownRequest&) const = default;
};

// ---------------------------------------------------------------------------
// Predicate site assignment for composite predicates over a partial cache.

struct PredicateSplit {
    std::optional<Predicate> compute_side; // references cached columns only
    std::optional<Predicate> storage_side; // references uncached columns only
    BitOp combine = BitOp::And;            // how the two bitmaps meet
};

inline PredicateSplit assign_predicate_sites(const Predicate& p,
                                             const std::set<std::string>& cached) {
    auto all_cached = [&](const Predicate& q) {
        for (const auto& c : q.columns_referenced())
            if (!cached.count(c)) return false;
        return true;
    };
    auto none_cached = [&](const Predicate& q) {
        for (const auto& c : q.columns_referenced())
            if (cached.count(c)) return false;
        return true;
    };

    PredicateSplit out;
    if (all_cached(p)) {
        out.compute_side = p;
        return out;
    }
    if (none_cached(p)) {
        out.storage_side = p;
        return out;
    }
    // Mixed. Split only one level below the root connective: every child must
    // itself be pure; anything deeper goes wholly to storage.
    if (p.kind != Predicate::Kind::Cmp) {
        std::vector<Predicate> compute_kids, storage_kids;
        bool splittable = true;
        for (const auto& child : p.children) {
            if (all_cached(child)) {
                compute_kids.push_back(child);
            } else if (none_cached(child)) {
                storage_kids.push_back(child);
            } else {
                splittable = false;
                break;
            }
        }
        if (splittable && !compute_kids.empty() && !storage_kids.empty()) {
            auto wrap = [&](std::vector<Predicate> kids) {
                if (kids.size() == 1) return kids[0];
                return p.kind == Predicate::Kind::And ? Predicate::conj(std::move(kids))
                                                      : Predicate::disj(std::move(kids));
            };
            out.compute_side = wrap(std::move(compute_kids));
            out.storage_side = wrap(std::move(storage_kids));
            out.combine = p.kind == Predicate::Kind::And ? BitOp::And : BitOp::Or;
            return out;
        }
    }
    out.storage_side = p;
    return out;
}

// ---------------------------------------------------------------------------
// split_pushdown

struct SplitOptions {
    bool push_shuffle = true;       // cut above Shuffle nodes, storage partitions rows
    uint64_t first_request_id = 1;  // ids are assigned sequentially from here
};

struct SplitResult {
    std::vector<PushdownRequest> requests;
    PlanNode remainder;
};

namespace detail {

inline bool pushable_chain(const PlanNode& n, bool shuffle_ok) {
    switch (n.kind) {
        case PlanKind::Scan:
            return true;
        case PlanKind::Filter:
        case PlanKind::Project:
        case PlanKind::PartialAggregate:
            return pushable_chain(n.children.at(0), false);
        case PlanKind::Shuffle:
            // Shuffle is only pushable as the terminal op of a chain.
            return shuffle_ok && pushable_chain(n.children.at(0), false);
        default:
            return false;
    }
}

// Flatten a pushable chain into bottom-up op order; the Shuffle terminal, if
// any, comes back separately.
inline void flatten_chain(const PlanNode& n, std::vector<PlanNode>& ops,
                          std::optional<ShuffleParams>& shuffle) {
    if (n.kind == PlanKind::Shuffle) {
        shuffle = n.shuffle;
        flatten_chain(n.children.at(0), ops, shuffle);
        return;
    }
    if (n.kind != PlanKind::Scan) flatten_chain(n.children.at(0), ops, shuffle);
    PlanNode op = n;
    op.children.clear();
    ops.push_back(std::move(op));
}

struct Splitter {
    const Catalog& catalog;
    const SplitOptions& opts;
    uint64_t next_id;
    std::vector<PushdownRequest> requests;

    PlanNode cut(const PlanNode& chain) {
        std::vector<PlanNode> ops;
        std::optional<ShuffleParams> shuffle;
        flatten_chain(chain, ops, shuffle);
        const std::string& table = ops.at(0).table;

        PlanNode stub;
        stub.kind = PlanKind::Stub;
        if (shuffle) {
            stub.stub_fanout = shuffle->fanout;
        }
        for (const auto& part : catalog.partitions(table)) {
            PushdownRequest req;
            req.request_id = next_id++;
            req.table = table;
            req.partition_id = part.id;
            req.fragment = ops;
            req.shuffle_params = shuffle;
            stub.stub_ids.push_back(req.request_id);
            requests.push_back(std::move(req));
        }
        return stub;
    }

    PlanNode rewrite(const PlanNode& n) {
        if (pushable_chain(n, opts.push_shuffle)) return cut(n);
        PlanNode out = n;
        out.children.clear();
        for (const auto& child : n.children) out.children.push_back(rewrite(child));
        return out;
    }
};

// Only unbound stubs count: once bind_shard has pinned a stub to a target,
// the region around it is already expanded and must not be wrapped again.
inline bool has_sharded_stub(const PlanNode& n, uint32_t& fanout) {
    if (n.kind == PlanKind::Stub && n.stub_fanout > 0 && n.stub_shard < 0) {
        if (fanout == 0) fanout = n.stub_fanout;
        if (fanout != n.stub_fanout) throw ExecError("mixed shuffle fanouts in one plan");
        return true;
    }
    bool found = false;
    for (const auto& c : n.children) found = has_sharded_stub(c, fanout) || found;
    return found;
}

inline void bind_shard(PlanNode& n, uint32_t shard) {
    if (n.kind == PlanKind::Stub && n.stub_fanout > 0) n.stub_shard = static_cast<int32_t>(shard);
    for (auto& c : n.children) bind_shard(c, shard);
}

// Replace the per-shard region with a Merge of per-target clones. The region
// is everything below the lowest FinalAggregate above the sharded stubs;
// without one, the root wrap in split_pushdown takes over. Per-shard
// execution of a HashJoin is sound because both inputs were shuffled by the
// join key with the same fanout; the plan builder owns that guarantee.
inline PlanNode expand_shards(PlanNode n) {
    uint32_t fanout = 0;
    if (!has_sharded_stub(n, fanout) || n.kind == PlanKind::Stub) return n;
    PlanNode out = n;
    out.children.clear();
    for (const auto& c : n.children) out.children.push_back(expand_shards(c));
    uint32_t still = 0;
    if (out.kind == PlanKind::FinalAggregate && has_sharded_stub(out, still)) {
        std::vector<PlanNode> clones;
        for (uint32_t i = 0; i < still; ++i) {
            PlanNode clone = out.children.at(0);
            bind_shard(clone, i);
            clones.push_back(std::move(clone));
        }
        out.children.clear();
        out.children.push_back(PlanNode::merge(std::move(clones)));
    }
    return out;
}

} // namespace detail

inline SplitResult split_pushdown(const PlanNode& plan, const Catalog& catalog,
                                  const SplitOptions& opts = {}) {
    detail::Splitter s{catalog, opts, opts.first_request_id, {}};
    PlanNode remainder = s.rewrite(plan);
    remainder = detail::expand_shards(std::move(remainder));
    // A sharded region with no FinalAggregate above it merges at the root.
    uint32_t fanout = 0;
    if (detail::has_sharded_stub(remainder, fanout)) {
        std::vector<PlanNode> clones;
        for (uint32_t i = 0; i < fanout; ++i) {
            PlanNode clone = remainder;
            detail::bind_shard(clone, i);
            clones.push_back(std::move(clone));
        }
        remainder = PlanNode::merge(std::move(clones));
    }
    return SplitResult{std::move(s.requests), std::move(remainder)};
}

// ---------------------------------------------------------------------------
// Request wire format:
//   request_id u64 | table str16 | partition_id u32
//   op count u8, per op: kind u8 + payload
//   selectivity_hint f64
//   flags u8 (bit0 shuffle, bit1 bitmap directive) + optional sections

namespace detail {

inline void encode_predicate(const Predicate& p, ByteWriter& w) {
    w.u8(static_cast<uint8_t>(p.kind));
    if (p.kind == Predicate::Kind::Cmp) {
        w.str16(p.column);
        w.u8(static_cast<uint8_t>(p.op));
        w.u8(static_cast<uint8_t>(type_of(p.literal)));
        switch (type_of(p.literal)) {
            case ColumnType::Int64: w.i64(std::get<int64_t>(p.literal)); break;
            case ColumnType::Float64: w.f64(std::get<double>(p.literal)); break;
            case ColumnType::Utf8: w.str16(std::get<std::string>(p.literal)); break;
            case ColumnType::Bool: w.u8(std::get<bool>(p.literal) ? 1 : 0); break;
        }
    } else {
        w.u16(static_cast<uint16_t>(p.children.size()));
        for (const auto& c : p.children) encode_predicate(c, w);
    }
}

inline Predicate decode_predicate(ByteReader& r) {
    uint8_t kind = r.u8("predicate kind");
    if (kind > 2) throw DecodeError("bad predicate kind " + std::to_string(kind));
    Predicate p;
    p.kind = static_cast<Predicate::Kind>(kind);
    if (p.kind == Predicate::Kind::Cmp) {
        p.column = r.str16("predicate column");
        uint8_t op = r.u8("predicate op");
        if (op > 5) throw DecodeError("bad comparison op " + std::to_string(op));
        p.op = static_cast<CmpOp>(op);
        uint8_t tag = r.u8("literal type tag");
        switch (tag) {
            case 0: p.literal = r.i64("literal"); break;
            case 1: p.literal = r.f64("literal"); break;
            case 2: p.literal = r.str16("literal"); break;
            case 3: p.literal = r.u8("literal") != 0; break;
            default: throw DecodeError("bad literal type tag " + std::to_string(tag));
        }
    } else {
        uint16_t n = r.u16("predicate child count");
        for (uint16_t i = 0; i < n; ++i) p.children.push_back(decode_predicate(r));
    }
    return p;
}

inline void encode_names(const std::vector<std::string>& names, ByteWriter& w) {
    w.u16(static_cast<uint16_t>(names.size()));
    for (const auto& n : names) w.str16(n);
}

inline std::vector<std::string> decode_names(ByteReader& r, const char* field) {
    uint16_t n = r.u16(field);
    std::vector<std::string> out;
    out.reserve(n);
    for (uint16_t i = 0; i < n; ++i) out.push_back(r.str16(field));
    return out;
}

} // namespace detail

inline std::vector<uint8_t> encode_request(const PushdownRequest& req) {
    if (req.fragment.empty() || req.fragment[0].kind != PlanKind::Scan)
        throw ExecError("fragment must start with a scan");
    ByteWriter w;
    w.u64(req.request_id);
    w.str16(req.table);
    w.u32(req.partition_id);
    w.u8(static_cast<uint8_t>(req.fragment.size()));
    for (const auto& op : req.fragment) {
        w.u8(static_cast<uint8_t>(op.kind));
        switch (op.kind) {
            case PlanKind::Scan:
            case PlanKind::Project:
                detail::encode_names(op.columns, w);
                break;
            case PlanKind::Filter:
                detail::encode_predicate(op.predicate, w);
                break;
            case PlanKind::PartialAggregate:
                detail::encode_names(op.group_by, w);
                w.u16(static_cast<uint16_t>(op.aggs.size()));
                for (const auto& a : op.aggs) {
                    w.u8(static_cast<uint8_t>(a.op));
                    w.str16(a.column);
                    w.str16(a.output);
                }
                break;
            default:
                throw ExecError("op kind not pushable");
        }
    }
    w.f64(req.selectivity_hint);
    uint8_t flags = 0;
    if (req.shuffle_params) flags |= 1;
    if (req.bitmap) flags |= 2;
    w.u8(flags);
    if (req.shuffle_params) {
        w.str16(req.shuffle_params->key);
        w.u32(req.shuffle_params->fanout);
        w.u32(static_cast<uint32_t>(req.shuffle_params->targets.size()));
        for (uint32_t t : req.shuffle_params->targets) w.u32(t);
    }
    if (req.bitmap) {
        w.u8(static_cast<uint8_t>(req.bitmap->mode));
        if (req.bitmap->mode == BitmapDirective::Mode::ApplyAttachedBitmap) {
            w.u8(static_cast<uint8_t>(req.bitmap->combine));
            w.u8(req.bitmap->return_combined ? 1 : 0);
            w.u64(req.bitmap->bitmap.length());
            w.bytes(req.bitmap->bitmap.bytes().data(), req.bitmap->bitmap.byte_size());
            detail::encode_names(req.bitmap->skip_columns, w);
        }
    }
    return w.take();
}

inline PushdownRequest decode_request(const uint8_t* data, size_t size) {
    ByteReader r(data, size);
    PushdownRequest req;
    req.request_id = r.u64("request id");
    req.table = r.str16("table name");
    req.partition_id = r.u32("partition id");
    uint8_t nops = r.u8("op count");
    if (nops == 0) throw DecodeError("empty fragment");
    for (uint8_t i = 0; i < nops; ++i) {
        uint8_t kind = r.u8("fragment op kind");
        PlanNode op;
        switch (kind) {
            case static_cast<uint8_t>(PlanKind::Scan):
            case static_cast<uint8_t>(PlanKind::Project):
                op.kind = static_cast<PlanKind>(kind);
                op.columns = detail::decode_names(r, "op columns");
                // the table rides on the request envelope, not the scan op
                if (op.kind == PlanKind::Scan) op.table = req.table;
                break;
            case static_cast<uint8_t>(PlanKind::Filter):
                op.kind = PlanKind::Filter;
                op.predicate = detail::decode_predicate(r);
                break;
            case static_cast<uint8_t>(PlanKind::PartialAggregate): {
                op.kind = PlanKind::PartialAggregate;
                op.group_by = detail::decode_names(r, "group columns");
                uint16_t naggs = r.u16("agg count");
                for (uint16_t a = 0; a < naggs; ++a) {
                    AggSpec spec;
                    uint8_t aop = r.u8("agg op");
                    if (aop > 4) throw DecodeError("bad agg op " + std::to_string(aop));
                    spec.op = static_cast<AggOp>(aop);
                    spec.column = r.str16("agg column");
                    spec.output = r.str16("agg output");
                    op.aggs.push_back(std::move(spec));
                }
                break;
            }
            default:
                throw DecodeError("bad fragment op kind " + std::to_string(kind) +
                                  " at offset " + std::to_string(r.offset() - 1));
        }
        req.fragment.push_back(std::move(op));
    }
    if (req.fragment[0].kind != PlanKind::Scan)
        throw DecodeError("fragment does not start with a scan");
    req.selectivity_hint = r.f64("selectivity hint");
    uint8_t flags = r.u8("flags");
    if (flags & ~0x03) throw DecodeError("unknown flag bits");
    if (flags & 1) {
        ShuffleParams sp;
        sp.key = r.str16("shuffle key");
        sp.fanout = r.u32("shuffle fanout");
        uint32_t n = r.u32("shuffle target count");
        for (uint32_t i = 0; i < n; ++i) sp.targets.push_back(r.u32("shuffle target"));
        req.shuffle_params = std::move(sp);
    }
    if (flags & 2) {
        BitmapDirective bd;
        uint8_t mode = r.u8("bitmap mode");
        if (mode != 1 && mode != 2) throw DecodeError("bad bitmap mode " + std::to_string(mode));
        bd.mode = static_cast<BitmapDirective::Mode>(mode);
        if (bd.mode == BitmapDirective::Mode::ApplyAttachedBitmap) {
            uint8_t comb = r.u8("bitmap combine op");
            if (comb > 1) throw DecodeError("bad bitmap combine op");
            bd.combine = static_cast<BitOp>(comb);
            bd.return_combined = r.u8("bitmap return flag") != 0;
            uint64_t len = r.u64("bitmap length");
            const uint8_t* p = r.take("bitmap bytes", (len + 7) / 8);
            bd.bitmap = SelectionBitmap::from_bytes(
                len, std::vector<uint8_t>(p, p + (len + 7) / 8));
            bd.skip_columns = detail::decode_names(r, "bitmap skip columns");
        }
        req.bitmap = std::move(bd);
    }
    if (!r.done()) throw DecodeError("trailing bytes after request");
    return req;
}

inline PushdownRequest decode_request(const std::vector<uint8_t>& bytes) {
    return decode_request(bytes.data(), bytes.size());
}

} // namespace mdc
