#pragma once

// Column-at-a-time operator kernels shared by the storage and compute
// engines. Everything here is deterministic: aggregate outputs come back
// sorted by group key, join outputs follow probe order, and shuffle targets
// are a fixed hash of the key bytes. The row-at-a-time interpreter in
// reference.hpp implements the same semantics down a different code path and
// serves as the oracle for all of it.

#include <algorithm>
#include <cstring>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "mdc/columnar.hpp"
#include "mdc/plan.hpp"

namespace mdc {

// ---------------------------------------------------------------------------
// Predicate evaluation to a selection bitmap.

namespace detail {

inline int order_of(double a, double b) { return a < b ? -1 : (a == b ? 0 : 1); }

inline bool passes(int order, CmpOp op) {
    switch (op) {
        case CmpOp::Lt: return order < 0;
        case CmpOp::Le: return order <= 0;
        case CmpOp::Eq: return order == 0;
        case CmpOp::Ge: return order >= 0;
        case CmpOp::Gt: return order > 0;
        case CmpOp::Ne: return order != 0;
    }
    throw ExecError("bad comparison op");
}

} // namespace detail

inline SelectionBitmap eval_compare(const Column& col, CmpOp op, const Value& literal) {
    const uint64_t rows = col.size();
    std::vector<bool> mask(rows, false);
    auto ordered = [&](auto order_fn) {
        for (uint64_t i = 0; i < rows; ++i)
            mask[i] = detail::passes(order_fn(i), op);
    };

    switch (col.type) {
        case ColumnType::Int64: {
            const auto& v = col.i64s();
            if (std::holds_alternative<int64_t>(literal)) {
                int64_t lit = std::get<int64_t>(literal);
                ordered([&](uint64_t i) { return v[i] < lit ? -1 : (v[i] == lit ? 0 : 1); });
            } else if (std::holds_alternative<double>(literal)) {
                double lit = std::get<double>(literal);
                ordered([&](uint64_t i) {
                    return detail::order_of(static_cast<double>(v[i]), lit);
                });
            } else {
                throw ExecError("comparing integer column '" + col.name +
                                "' with a non-numeric literal");
            }
            break;
        }
        case ColumnType::Float64: {
            const auto& v = col.f64s();
            double lit;
            if (std::holds_alternative<double>(literal)) lit = std::get<double>(literal);
            else if (std::holds_alternative<int64_t>(literal))
                lit = static_cast<double>(std::get<int64_t>(literal));
            else
                throw ExecError("comparing float column '" + col.name +
                                "' with a non-numeric literal");
            ordered([&](uint64_t i) { return detail::order_of(v[i], lit); });
            break;
        }
        case ColumnType::Utf8: {
            if (!std::holds_alternative<std::string>(literal))
                throw ExecError("comparing string column '" + col.name +
                                "' with a non-string literal");
            const auto& v = col.strs();
            const auto& lit = std::get<std::string>(literal);
            ordered([&](uint64_t i) { return v[i].compare(lit) < 0 ? -1
                                             : (v[i] == lit ? 0 : 1); });
            break;
        }
        case ColumnType::Bool: {
            if (!std::holds_alternative<bool>(literal))
                throw ExecError("comparing bool column '" + col.name +
                                "' with a non-bool literal");
            int lit = std::get<bool>(literal) ? 1 : 0;
            const auto& v = col.bools();
            ordered([&](uint64_t i) {
                int a = v[i] ? 1 : 0;
                return a < lit ? -1 : (a == lit ? 0 : 1);
            });
            break;
        }
    }
    return SelectionBitmap::from_mask(mask);
}

inline SelectionBitmap eval_predicate(const Predicate& p, const Block& b) {
    switch (p.kind) {
        case Predicate::Kind::Cmp:
            return eval_compare(b.col(p.column), p.op, p.literal);
        case Predicate::Kind::And:
        case Predicate::Kind::Or: {
            if (p.children.empty()) throw ExecError("empty predicate connective");
            SelectionBitmap acc = eval_predicate(p.children[0], b);
            BitOp op = p.kind == Predicate::Kind::And ? BitOp::And : BitOp::Or;
            for (size_t i = 1; i < p.children.size(); ++i)
                acc = combine_bitmaps(acc, eval_predicate(p.children[i], b), op);
            return acc;
        }
    }
    throw ExecError("bad predicate kind");
}

// ---------------------------------------------------------------------------
// Projection and concatenation.

inline Block project_block(const Block& in, const std::vector<std::string>& cols) {
    Block out;
    out.rows = in.rows;
    for (const auto& name : cols) out.columns.push_back(in.col(name));
    return out;
}

inline void append_block(Block& dst, const Block& src) {
    if (dst.columns.empty() && dst.rows == 0) {
        dst = src;
        return;
    }
    if (dst.columns.size() != src.columns.size())
        throw ExecError("appending blocks with different schemas");
    for (size_t i = 0; i < dst.columns.size(); ++i) {
        if (dst.columns[i].name != src.columns[i].name ||
            dst.columns[i].type != src.columns[i].type)
            throw ExecError("appending blocks with different schemas");
        std::visit(
            [&](auto& d) {
                const auto& s = std::get<std::decay_t<decltype(d)>>(src.columns[i].data);
                d.insert(d.end(), s.begin(), s.end());
            },
            dst.columns[i].data);
    }
    dst.rows += src.rows;
}

inline Block merge_blocks(const std::vector<Block>& parts) {
    Block out;
    for (const auto& p : parts) append_block(out, p);
    return out;
}

// ---------------------------------------------------------------------------
// Grouped aggregation over typed accumulator columns. Group slots are found
// through a hash index keyed on the raw key bytes; output rows are emitted in
// ascending key order so results do not depend on hash iteration order.

namespace detail {

inline uint64_t fnv1a64(const uint8_t* p, size_t n, uint64_t seed = 14695981039346656037ULL) {
    uint64_t h = seed;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

inline void append_value_bytes(const Column& c, uint64_t row, std::string& out) {
    switch (c.type) {
        case ColumnType::Int64: {
            int64_t v = c.i64s()[row];
            char buf[8];
            std::memcpy(buf, &v, 8);
            out.append(buf, 8);
            break;
        }
        case ColumnType::Float64: {
            double v = c.f64s()[row];
            char buf[8];
            std::memcpy(buf, &v, 8);
            out.append(buf, 8);
            break;
        }
        case ColumnType::Utf8: {
            const std::string& s = c.strs()[row];
            uint32_t len = static_cast<uint32_t>(s.size());
            char buf[4];
            std::memcpy(buf, &len, 4);
            out.append(buf, 4); // length prefix keeps ("a","bc") distinct from ("ab","c")
            out.append(s);
            break;
        }
        case ColumnType::Bool:
            out.push_back(c.bools()[row] ? '\1' : '\0');
            break;
    }
}

// Typed accumulator state for one AggSpec across all group slots.
struct AggAccumulator {
    AggOp op;
    std::string output;
    ColumnType value_type = ColumnType::Int64; // of the summed/min'd value
    std::vector<int64_t> counts;
    std::vector<int64_t> isums;
    std::vector<double> fsums;
    std::vector<int64_t> imin, imax;
    std::vector<double> fmin, fmax;
    std::vector<std::string> smin, smax;
    std::vector<uint8_t> bmin, bmax;
    std::vector<uint8_t> seen;

    void grow() {
        switch (op) {
            case AggOp::Count: counts.push_back(0); break;
            case AggOp::Sum:
                if (value_type == ColumnType::Int64) isums.push_back(0);
                else fsums.push_back(0.0);
                break;
            case AggOp::Avg:
                counts.push_back(0);
                if (value_type == ColumnType::Int64) isums.push_back(0);
                else fsums.push_back(0.0);
                break;
            case AggOp::Min:
            case AggOp::Max:
                seen.push_back(0);
                switch (value_type) {
                    case ColumnType::Int64: imin.push_back(0); imax.push_back(0); break;
                    case ColumnType::Float64: fmin.push_back(0); fmax.push_back(0); break;
                    case ColumnType::Utf8: smin.emplace_back(); smax.emplace_back(); break;
                    case ColumnType::Bool: bmin.push_back(0); bmax.push_back(0); break;
                }
                break;
        }
    }
};

} // namespace detail

namespace detail {

// Shared grouping machinery: map rows to dense group slots via a byte-keyed
// hash index, fold per-spec accumulators, then emit rows sorted by key.
template <class FoldRow>
inline Block grouped_fold(const Block& in, const std::vector<std::string>& group_by,
                          std::vector<AggAccumulator>& accs, FoldRow&& fold_row,
                          bool zero_row_when_empty) {
    std::vector<const Column*> keys;
    keys.reserve(group_by.size());
    for (const auto& g : group_by) keys.push_back(&in.col(g));

    std::unordered_map<std::string, size_t> index;
    std::vector<uint64_t> slot_example_row; // one input row per slot, for key output
    std::string keybuf;

    for (uint64_t row = 0; row < in.rows; ++row) {
        keybuf.clear();
        for (const Column* k : keys) append_value_bytes(*k, row, keybuf);
        auto [it, inserted] = index.try_emplace(keybuf, slot_example_row.size());
        if (inserted) {
            slot_example_row.push_back(row);
            for (auto& a : accs) a.grow();
        }
        fold_row(it->second, row);
    }

    if (slot_example_row.empty() && group_by.empty() && zero_row_when_empty) {
        slot_example_row.push_back(0); // no real row behind it; keys are empty
        for (auto& a : accs) a.grow();
    }

    // order slots by group key value
    std::vector<size_t> order(slot_example_row.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        for (const Column* k : keys) {
            Value va = k->value_at(slot_example_row[a]);
            Value vb = k->value_at(slot_example_row[b]);
            if (va < vb) return true;
            if (vb < va) return false;
        }
        return false;
    });

    Block out;
    out.rows = order.size();
    for (size_t ki = 0; ki < keys.size(); ++ki) {
        Column kc;
        kc.name = group_by[ki];
        kc.type = keys[ki]->type;
        std::visit(
            [&](const auto& src) {
                std::decay_t<decltype(src)> dst;
                dst.reserve(order.size());
                for (size_t slot : order) dst.push_back(src[slot_example_row[slot]]);
                kc.data = std::move(dst);
            },
            keys[ki]->data);
        out.columns.push_back(std::move(kc));
    }

    for (const auto& a : accs) {
        auto emit_typed = [&](auto pick, const char* suffix) {
            Column c;
            c.name = a.output + suffix;
            using PickT = std::decay_t<decltype(pick(0))>;
            std::vector<PickT> v;
            v.reserve(order.size());
            for (size_t slot : order) v.push_back(pick(slot));
            if constexpr (std::is_same_v<PickT, int64_t>) c.type = ColumnType::Int64;
            else if constexpr (std::is_same_v<PickT, double>) c.type = ColumnType::Float64;
            else if constexpr (std::is_same_v<PickT, std::string>) c.type = ColumnType::Utf8;
            else c.type = ColumnType::Bool;
            c.data = std::move(v);
            out.columns.push_back(std::move(c));
        };

        switch (a.op) {
            case AggOp::Count:
                emit_typed([&](size_t s) { return a.counts[s]; }, "");
                break;
            case AggOp::Sum:
                if (a.value_type == ColumnType::Int64)
                    emit_typed([&](size_t s) { return a.isums[s]; }, "");
                else
                    emit_typed([&](size_t s) { return a.fsums[s]; }, "");
                break;
            case AggOp::Avg:
                if (a.value_type == ColumnType::Int64)
                    emit_typed([&](size_t s) { return a.isums[s]; }, ".sum");
                else
                    emit_typed([&](size_t s) { return a.fsums[s]; }, ".sum");
                emit_typed([&](size_t s) { return a.counts[s]; }, ".count");
                break;
            case AggOp::Min:
            case AggOp::Max: {
                const bool is_min = a.op == AggOp::Min;
                switch (a.value_type) {
                    case ColumnType::Int64:
                        emit_typed([&](size_t s) { return is_min ? a.imin[s] : a.imax[s]; }, "");
                        break;
                    case ColumnType::Float64:
                        emit_typed([&](size_t s) { return is_min ? a.fmin[s] : a.fmax[s]; }, "");
                        break;
                    case ColumnType::Utf8:
                        emit_typed([&](size_t s) { return is_min ? a.smin[s] : a.smax[s]; }, "");
                        break;
                    case ColumnType::Bool:
                        emit_typed([&](size_t s) { return is_min ? a.bmin[s] : a.bmax[s]; }, "");
                        break;
                }
                break;
            }
        }
    }
    return out;
}

template <class T>
inline void fold_minmax(std::vector<T>& mins, std::vector<T>& maxs, std::vector<uint8_t>& seen,
                        size_t slot, const T& v) {
    if (!seen[slot]) {
        mins[slot] = v;
        maxs[slot] = v;
        seen[slot] = 1;
    } else {
        if (v < mins[slot]) mins[slot] = v;
        if (maxs[slot] < v) maxs[slot] = v;
    }
}

} // namespace detail

// First-stage aggregation: raw rows in, mergeable per-group states out.
// Avg states travel as "<out>.sum" and "<out>.count"; everything else keeps
// its output name. An empty input stays empty even for a global aggregate,
// because the states from several partitions are folded downstream.
inline Block partial_aggregate(const Block& in, const std::vector<std::string>& group_by,
                               const std::vector<AggSpec>& aggs) {
    std::vector<detail::AggAccumulator> accs;
    accs.reserve(aggs.size());
    std::vector<const Column*> sources(aggs.size(), nullptr);
    for (size_t i = 0; i < aggs.size(); ++i) {
        detail::AggAccumulator a;
        a.op = aggs[i].op;
        a.output = aggs[i].output;
        if (aggs[i].op != AggOp::Count) {
            sources[i] = &in.col(aggs[i].column);
            a.value_type = sources[i]->type;
        }
        accs.push_back(std::move(a));
    }

    auto fold_row = [&](size_t slot, uint64_t row) {
        for (size_t i = 0; i < accs.size(); ++i) {
            detail::AggAccumulator& a = accs[i];
            switch (a.op) {
                case AggOp::Count:
                    a.counts[slot]++;
                    break;
                case AggOp::Sum:
                case AggOp::Avg: {
                    if (a.value_type == ColumnType::Int64)
                        a.isums[slot] += sources[i]->i64s()[row];
                    else if (a.value_type == ColumnType::Float64)
                        a.fsums[slot] += sources[i]->f64s()[row];
                    else
                        throw ExecError("cannot sum column '" + sources[i]->name + "'");
                    if (a.op == AggOp::Avg) a.counts[slot]++;
                    break;
                }
                case AggOp::Min:
                case AggOp::Max:
                    switch (a.value_type) {
                        case ColumnType::Int64:
                            detail::fold_minmax(a.imin, a.imax, a.seen, slot,
                                                sources[i]->i64s()[row]);
                            break;
                        case ColumnType::Float64:
                            detail::fold_minmax(a.fmin, a.fmax, a.seen, slot,
                                                sources[i]->f64s()[row]);
                            break;
                        case ColumnType::Utf8:
                            detail::fold_minmax(a.smin, a.smax, a.seen, slot,
                                                sources[i]->strs()[row]);
                            break;
                        case ColumnType::Bool: {
                            uint8_t v = sources[i]->bools()[row];
                            detail::fold_minmax(a.bmin, a.bmax, a.seen, slot, v);
                            break;
                        }
                    }
                    break;
            }
        }
    };

    return detail::grouped_fold(in, group_by, accs, fold_row,
                                /*zero_row_when_empty=*/false);
}

// Second-stage aggregation: folds partial states and emits final values.
// Avg becomes a float column named by the spec. A global aggregate over no
// input produces one row of typed zeros.
inline Block final_aggregate(const Block& in, const std::vector<std::string>& group_by,
                             const std::vector<AggSpec>& aggs) {
    std::vector<detail::AggAccumulator> accs;
    accs.reserve(aggs.size());
    struct Src {
        const Column* value = nullptr;
        const Column* count = nullptr;
    };
    std::vector<Src> sources(aggs.size());
    for (size_t i = 0; i < aggs.size(); ++i) {
        detail::AggAccumulator a;
        a.op = aggs[i].op;
        a.output = aggs[i].output;
        switch (aggs[i].op) {
            case AggOp::Count:
                sources[i].value = &in.col(aggs[i].output);
                break;
            case AggOp::Avg:
                sources[i].value = &in.col(aggs[i].output + ".sum");
                sources[i].count = &in.col(aggs[i].output + ".count");
                a.value_type = sources[i].value->type;
                break;
            default:
                sources[i].value = &in.col(aggs[i].output);
                a.value_type = sources[i].value->type;
                break;
        }
        accs.push_back(std::move(a));
    }

    auto fold_row = [&](size_t slot, uint64_t row) {
        for (size_t i = 0; i < accs.size(); ++i) {
            detail::AggAccumulator& a = accs[i];
            switch (a.op) {
                case AggOp::Count:
                    a.counts[slot] += sources[i].value->i64s()[row];
                    break;
                case AggOp::Sum:
                case AggOp::Avg:
                    if (a.value_type == ColumnType::Int64)
                        a.isums[slot] += sources[i].value->i64s()[row];
                    else
                        a.fsums[slot] += sources[i].value->f64s()[row];
                    if (a.op == AggOp::Avg)
                        a.counts[slot] += sources[i].count->i64s()[row];
                    break;
                case AggOp::Min:
                case AggOp::Max:
                    switch (a.value_type) {
                        case ColumnType::Int64:
                            detail::fold_minmax(a.imin, a.imax, a.seen, slot,
                                                sources[i].value->i64s()[row]);
                            break;
                        case ColumnType::Float64:
                            detail::fold_minmax(a.fmin, a.fmax, a.seen, slot,
                                                sources[i].value->f64s()[row]);
                            break;
                        case ColumnType::Utf8:
                            detail::fold_minmax(a.smin, a.smax, a.seen, slot,
                                                sources[i].value->strs()[row]);
                            break;
                        case ColumnType::Bool: {
                            uint8_t v = sources[i].value->bools()[row];
                            detail::fold_minmax(a.bmin, a.bmax, a.seen, slot, v);
                            break;
                        }
                    }
                    break;
            }
        }
    };

    Block folded = detail::grouped_fold(in, group_by, accs, fold_row,
                                        /*zero_row_when_empty=*/true);

    // rewrite avg state columns into the final quotient
    Block out;
    out.rows = folded.rows;
    size_t col_at = group_by.size();
    for (size_t g = 0; g < group_by.size(); ++g) out.columns.push_back(folded.columns[g]);
    for (const auto& spec : aggs) {
        if (spec.op != AggOp::Avg) {
            out.columns.push_back(folded.columns[col_at++]);
            continue;
        }
        const Column& sum = folded.columns[col_at++];
        const Column& count = folded.columns[col_at++];
        std::vector<double> v(out.rows, 0.0);
        for (uint64_t r = 0; r < out.rows; ++r) {
            int64_t n = count.i64s()[r];
            if (n == 0) continue;
            double total = sum.type == ColumnType::Int64
                               ? static_cast<double>(sum.i64s()[r])
                               : sum.f64s()[r];
            v[r] = total / static_cast<double>(n);
        }
        out.columns.push_back(make_column(spec.output, std::move(v)));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Shuffle partitioning: a fixed byte hash of the key picks the target, so
// every node computes the same placement independently.

inline uint64_t hash_value_bytes(const Column& key, uint64_t row) {
    std::string buf;
    detail::append_value_bytes(key, row, buf);
    return detail::fnv1a64(reinterpret_cast<const uint8_t*>(buf.data()), buf.size());
}

inline uint32_t shuffle_target(const Column& key, uint64_t row, uint32_t fanout) {
    if (fanout == 0) throw ExecError("shuffle fanout must be > 0");
    return static_cast<uint32_t>(hash_value_bytes(key, row) % fanout);
}

inline PositionVector build_position_vector(const Column& key, uint32_t fanout) {
    PositionVector pv(key.size(), fanout);
    for (uint64_t i = 0; i < key.size(); ++i) pv.set(i, shuffle_target(key, i, fanout));
    return pv;
}

inline std::vector<SelectionBitmap> shuffle_masks(const Column& key, uint32_t fanout) {
    std::vector<std::vector<bool>> masks(fanout, std::vector<bool>(key.size(), false));
    for (uint64_t i = 0; i < key.size(); ++i) masks[shuffle_target(key, i, fanout)][i] = true;
    std::vector<SelectionBitmap> out;
    out.reserve(fanout);
    for (auto& m : masks) out.push_back(SelectionBitmap::from_mask(m));
    return out;
}

inline std::vector<Block> shuffle_block(const Block& in, const std::string& key,
                                        uint32_t fanout) {
    auto masks = shuffle_masks(in.col(key), fanout);
    std::vector<Block> out;
    out.reserve(fanout);
    for (const auto& m : masks) out.push_back(filter_block(in, m));
    return out;
}

// ---------------------------------------------------------------------------
// Inner equi-join: hash-build on the right input, probe with the left in row
// order. Output carries the left columns, then the right columns minus the
// join keys.

inline Block hash_join(const Block& left, const Block& right,
                       const std::vector<std::string>& left_keys,
                       const std::vector<std::string>& right_keys) {
    if (left_keys.size() != right_keys.size()) throw ExecError("join key arity mismatch");

    std::vector<const Column*> lk, rk;
    for (const auto& k : left_keys) lk.push_back(&left.col(k));
    for (const auto& k : right_keys) rk.push_back(&right.col(k));

    auto key_of = [](const std::vector<const Column*>& cols, uint64_t row) {
        std::string buf;
        for (const Column* c : cols) detail::append_value_bytes(*c, row, buf);
        return buf;
    };

    std::unordered_map<std::string, std::vector<uint64_t>> build;
    build.reserve(right.rows);
    for (uint64_t r = 0; r < right.rows; ++r) build[key_of(rk, r)].push_back(r);

    std::vector<const Column*> right_carry;
    for (const auto& c : right.columns) {
        bool is_key = false;
        for (const auto& k : right_keys)
            if (k == c.name) is_key = true;
        if (is_key) continue;
        for (const auto& lc : left.columns)
            if (lc.name == c.name)
                throw ExecError("join output column collision on '" + c.name + "'");
        right_carry.push_back(&c);
    }

    std::vector<uint64_t> out_left, out_right;
    std::string probe;
    for (uint64_t l = 0; l < left.rows; ++l) {
        probe.clear();
        for (const Column* c : lk) detail::append_value_bytes(*c, l, probe);
        auto it = build.find(probe);
        if (it == build.end()) continue;
        for (uint64_t r : it->second) {
            out_left.push_back(l);
            out_right.push_back(r);
        }
    }

    auto gather = [&](const Column& src, const std::vector<uint64_t>& rows) {
        Column out;
        out.name = src.name;
        out.type = src.type;
        std::visit(
            [&](const auto& v) {
                std::decay_t<decltype(v)> g;
                g.reserve(rows.size());
                for (uint64_t r : rows) g.push_back(v[r]);
                out.data = std::move(g);
            },
            src.data);
        return out;
    };

    Block out;
    out.rows = out_left.size();
    for (const auto& c : left.columns) out.columns.push_back(gather(c, out_left));
    for (const Column* c : right_carry) out.columns.push_back(gather(*c, out_right));
    return out;
}

} // namespace mdc
