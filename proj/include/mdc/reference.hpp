#pragma once

// Row-at-a-time reference executor. This is the oracle: a deliberately
// simple single-process interpreter over whole tables, independent of the
// vectorized kernels and of the distributed runners. Scenario runs and
// equivalence tests compare their result tables against it.
//
// Conventions shared with the engine:
//   - inner equi-join output = left columns, then right columns minus the
//     right key columns
//   - a global aggregate over empty input yields one row of typed zeros
//   - Avg below a FinalAggregate travels as a (sum, count) pair named
//     "<out>.sum" / "<out>.count"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mdc/columnar.hpp"
#include "mdc/plan.hpp"

namespace mdc {

struct RefContext {
    const std::map<std::string, std::vector<ColumnarPartition>>* tables = nullptr;
    // Fragment outputs for Stub nodes, keyed by request id, or by
    // (request id, shard) when the fragment was shuffled.
    const std::map<uint64_t, Block>* stub_outputs = nullptr;
    const std::map<std::pair<uint64_t, uint32_t>, Block>* shard_outputs = nullptr;
};

namespace ref {

inline bool value_less(const Value& a, const Value& b) {
    if (a.index() != b.index()) return a.index() < b.index();
    return a < b;
}

struct ValueLess {
    bool operator()(const std::vector<Value>& a, const std::vector<Value>& b) const {
        for (size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
            if (value_less(a[i], b[i])) return true;
            if (value_less(b[i], a[i])) return false;
        }
        return a.size() < b.size();
    }
};

inline double as_double(const Value& v) {
    if (std::holds_alternative<int64_t>(v)) return static_cast<double>(std::get<int64_t>(v));
    if (std::holds_alternative<double>(v)) return std::get<double>(v);
    throw ExecError("value is not numeric");
}

inline bool compare(const Value& cell, CmpOp op, const Value& lit) {
    int c;
    if (std::holds_alternative<std::string>(cell) || std::holds_alternative<std::string>(lit)) {
        if (!std::holds_alternative<std::string>(cell) ||
            !std::holds_alternative<std::string>(lit))
            throw ExecError("comparing string with non-string");
        const auto& a = std::get<std::string>(cell);
        const auto& b = std::get<std::string>(lit);
        c = a < b ? -1 : (a == b ? 0 : 1);
    } else if (std::holds_alternative<bool>(cell) || std::holds_alternative<bool>(lit)) {
        if (!std::holds_alternative<bool>(cell) || !std::holds_alternative<bool>(lit))
            throw ExecError("comparing bool with non-bool");
        int a = std::get<bool>(cell), b = std::get<bool>(lit);
        c = a < b ? -1 : (a == b ? 0 : 1);
    } else if (std::holds_alternative<int64_t>(cell) && std::holds_alternative<int64_t>(lit)) {
        int64_t a = std::get<int64_t>(cell), b = std::get<int64_t>(lit);
        c = a < b ? -1 : (a == b ? 0 : 1);
    } else {
        // mixed numeric types compare through double
        double a = as_double(cell), b = as_double(lit);
        c = a < b ? -1 : (a == b ? 0 : 1);
    }
    switch (op) {
        case CmpOp::Lt: return c < 0;
        case CmpOp::Le: return c <= 0;
        case CmpOp::Eq: return c == 0;
        case CmpOp::Ge: return c >= 0;
        case CmpOp::Gt: return c > 0;
        case CmpOp::Ne: return c != 0;
    }
    throw ExecError("bad comparison op");
}

inline bool eval_predicate_row(const Predicate& p, const Block& b, uint64_t row) {
    switch (p.kind) {
        case Predicate::Kind::Cmp:
            return compare(b.col(p.column).value_at(row), p.op, p.literal);
        case Predicate::Kind::And:
            for (const auto& c : p.children)
                if (!eval_predicate_row(c, b, row)) return false;
            return true;
        case Predicate::Kind::Or:
            for (const auto& c : p.children)
                if (eval_predicate_row(c, b, row)) return true;
            return false;
    }
    throw ExecError("bad predicate kind");
}

inline Column empty_like(const std::string& name, ColumnType t) {
    Column c;
    c.name = name;
    c.type = t;
    switch (t) {
        case ColumnType::Int64: c.data = std::vector<int64_t>{}; break;
        case ColumnType::Float64: c.data = std::vector<double>{}; break;
        case ColumnType::Utf8: c.data = std::vector<std::string>{}; break;
        case ColumnType::Bool: c.data = std::vector<uint8_t>{}; break;
    }
    return c;
}

inline void push_value(Column& c, const Value& v) {
    switch (c.type) {
        case ColumnType::Int64:
            std::get<std::vector<int64_t>>(c.data).push_back(std::get<int64_t>(v));
            break;
        case ColumnType::Float64:
            std::get<std::vector<double>>(c.data).push_back(std::get<double>(v));
            break;
        case ColumnType::Utf8:
            std::get<std::vector<std::string>>(c.data).push_back(std::get<std::string>(v));
            break;
        case ColumnType::Bool:
            std::get<std::vector<uint8_t>>(c.data).push_back(std::get<bool>(v) ? 1 : 0);
            break;
    }
}

inline Block rows_to_block(const std::vector<std::pair<std::string, ColumnType>>& schema,
                           const std::vector<std::vector<Value>>& rows) {
    Block out;
    out.rows = rows.size();
    for (size_t i = 0; i < schema.size(); ++i) {
        Column c = empty_like(schema[i].first, schema[i].second);
        for (const auto& r : rows) push_value(c, r[i]);
        out.columns.push_back(std::move(c));
    }
    return out;
}

inline Block concat_blocks(const std::vector<const Block*>& parts) {
    Block out;
    bool first = true;
    for (const Block* b : parts) {
        if (first) {
            out = *b;
            first = false;
            continue;
        }
        if (b->columns.size() != out.columns.size())
            throw ExecError("merging blocks with different schemas");
        for (size_t i = 0; i < out.columns.size(); ++i) {
            if (out.columns[i].name != b->columns[i].name ||
                out.columns[i].type != b->columns[i].type)
                throw ExecError("merging blocks with different schemas");
            std::visit(
                [&](auto& dst) {
                    const auto& src = std::get<std::decay_t<decltype(dst)>>(b->columns[i].data);
                    dst.insert(dst.end(), src.begin(), src.end());
                },
                out.columns[i].data);
        }
        out.rows += b->rows;
    }
    return out;
}

// Aggregate state per group, one slot per AggSpec.
struct AggState {
    int64_t count = 0;
    int64_t isum = 0;
    double fsum = 0.0;
    Value min, max;
    bool seen = false;
};

inline ColumnType source_type(const Block& in, const AggSpec& a) {
    if (a.op == AggOp::Count) return ColumnType::Int64;
    return in.col(a.column).type;
}

// Partial aggregation: group and fold raw rows, emitting mergeable state
// columns. Final aggregation folds those states; `final_over_partials` tells
// the two apart.
inline Block aggregate(const Block& in, const std::vector<std::string>& group_by,
                       const std::vector<AggSpec>& aggs, bool partial) {
    std::map<std::vector<Value>, std::vector<AggState>, ValueLess> groups;

    const bool folding_partials = !partial;
    for (uint64_t row = 0; row < in.rows; ++row) {
        std::vector<Value> key;
        key.reserve(group_by.size());
        for (const auto& g : group_by) key.push_back(in.col(g).value_at(row));
        auto& st = groups[key];
        if (st.empty()) st.resize(aggs.size());
        for (size_t i = 0; i < aggs.size(); ++i) {
            const AggSpec& a = aggs[i];
            AggState& s = st[i];
            if (!folding_partials) {
                switch (a.op) {
                    case AggOp::Count: s.count += 1; break;
                    case AggOp::Sum:
                    case AggOp::Avg: {
                        const Value v = in.col(a.column).value_at(row);
                        if (std::holds_alternative<int64_t>(v)) s.isum += std::get<int64_t>(v);
                        else s.fsum += as_double(v);
                        s.count += 1;
                        break;
                    }
                    case AggOp::Min:
                    case AggOp::Max: {
                        const Value v = in.col(a.column).value_at(row);
                        if (!s.seen) {
                            s.min = s.max = v;
                            s.seen = true;
                        } else {
                            if (value_less(v, s.min)) s.min = v;
                            if (value_less(s.max, v)) s.max = v;
                        }
                        break;
                    }
                }
            } else {
                switch (a.op) {
                    case AggOp::Count:
                        s.count += std::get<int64_t>(in.col(a.output).value_at(row));
                        break;
                    case AggOp::Sum: {
                        const Value v = in.col(a.output).value_at(row);
                        if (std::holds_alternative<int64_t>(v)) s.isum += std::get<int64_t>(v);
                        else s.fsum += as_double(v);
                        break;
                    }
                    case AggOp::Avg: {
                        const Value v = in.col(a.output + ".sum").value_at(row);
                        if (std::holds_alternative<int64_t>(v)) s.isum += std::get<int64_t>(v);
                        else s.fsum += as_double(v);
                        s.count += std::get<int64_t>(in.col(a.output + ".count").value_at(row));
                        break;
                    }
                    case AggOp::Min:
                    case AggOp::Max: {
                        const Value v = in.col(a.output).value_at(row);
                        if (!s.seen) {
                            s.min = s.max = v;
                            s.seen = true;
                        } else {
                            if (value_less(v, s.min)) s.min = v;
                            if (value_less(s.max, v)) s.max = v;
                        }
                        break;
                    }
                }
            }
        }
    }

    // A final global aggregate over empty input yields one row of typed
    // zeros. A partial one must stay empty: its rows are mergeable states,
    // and a fabricated zero row would poison min/max folds downstream.
    if (groups.empty() && group_by.empty() && !partial) groups[{}].resize(aggs.size());

    auto agg_value_type = [&](const AggSpec& a) -> ColumnType {
        switch (a.op) {
            case AggOp::Count: return ColumnType::Int64;
            case AggOp::Avg: return ColumnType::Float64; // final form
            default: {
                // after partials the state column already has the source type
                if (folding_partials) return in.col(a.output).type;
                return source_type(in, a);
            }
        }
    };

    std::vector<std::pair<std::string, ColumnType>> schema;
    for (const auto& g : group_by) {
        // group columns keep their input type
        schema.emplace_back(g, in.col(g).type);
    }
    for (const auto& a : aggs) {
        if (partial && a.op == AggOp::Avg) {
            ColumnType t = source_type(in, a);
            schema.emplace_back(a.output + ".sum", t);
            schema.emplace_back(a.output + ".count", ColumnType::Int64);
        } else if (partial) {
            schema.emplace_back(a.output, agg_value_type(a));
        } else {
            schema.emplace_back(a.output, a.op == AggOp::Avg ? ColumnType::Float64
                                                             : agg_value_type(a));
        }
    }

    std::vector<std::vector<Value>> rows;
    for (const auto& [key, st] : groups) {
        std::vector<Value> row = key;
        for (size_t i = 0; i < aggs.size(); ++i) {
            const AggSpec& a = aggs[i];
            const AggState& s = st[i];
            ColumnType t = agg_value_type(a);
            switch (a.op) {
                case AggOp::Count: row.emplace_back(s.count); break;
                case AggOp::Sum:
                    if (t == ColumnType::Int64) row.emplace_back(s.isum);
                    else row.emplace_back(s.fsum);
                    break;
                case AggOp::Avg:
                    if (partial) {
                        ColumnType st_t = source_type(in, a);
                        if (st_t == ColumnType::Int64) row.emplace_back(s.isum);
                        else row.emplace_back(s.fsum);
                        row.emplace_back(s.count);
                    } else {
                        // only one of the two accumulators is ever touched
                        double total = static_cast<double>(s.isum) + s.fsum;
                        row.emplace_back(s.count > 0 ? total / static_cast<double>(s.count)
                                                     : 0.0);
                    }
                    break;
                case AggOp::Min:
                case AggOp::Max: {
                    if (s.seen) {
                        row.push_back(a.op == AggOp::Min ? s.min : s.max);
                        break;
                    }
                    switch (t) {
                        case ColumnType::Int64: row.emplace_back(int64_t{0}); break;
                        case ColumnType::Float64: row.emplace_back(0.0); break;
                        case ColumnType::Utf8: row.emplace_back(std::string{}); break;
                        case ColumnType::Bool: row.emplace_back(false); break;
                    }
                    break;
                }
            }
        }
        rows.push_back(std::move(row));
    }
    return rows_to_block(schema, rows);
}

} // namespace ref

inline Block ref_execute(const PlanNode& n, const RefContext& ctx) {
    using namespace ref;
    switch (n.kind) {
        case PlanKind::Scan: {
            if (!ctx.tables) throw ExecError("reference executor has no tables");
            auto it = ctx.tables->find(n.table);
            if (it == ctx.tables->end()) throw ExecError("unknown table '" + n.table + "'");
            std::vector<Block> projected;
            for (const auto& p : it->second) {
                Block b;
                b.rows = p.rows();
                for (const auto& name : n.columns) b.columns.push_back(p.data.col(name));
                projected.push_back(std::move(b));
            }
            if (projected.empty()) {
                Block b;
                return b;
            }
            std::vector<const Block*> ptrs;
            for (const auto& b : projected) ptrs.push_back(&b);
            return concat_blocks(ptrs);
        }
        case PlanKind::Filter: {
            Block in = ref_execute(n.children.at(0), ctx);
            std::vector<std::pair<std::string, ColumnType>> schema;
            for (const auto& c : in.columns) schema.emplace_back(c.name, c.type);
            std::vector<std::vector<Value>> rows;
            for (uint64_t r = 0; r < in.rows; ++r) {
                if (!eval_predicate_row(n.predicate, in, r)) continue;
                std::vector<Value> row;
                for (const auto& c : in.columns) row.push_back(c.value_at(r));
                rows.push_back(std::move(row));
            }
            return rows_to_block(schema, rows);
        }
        case PlanKind::Project: {
            Block in = ref_execute(n.children.at(0), ctx);
            Block out;
            out.rows = in.rows;
            for (const auto& name : n.columns) out.columns.push_back(in.col(name));
            return out;
        }
        case PlanKind::PartialAggregate: {
            Block in = ref_execute(n.children.at(0), ctx);
            return aggregate(in, n.group_by, n.aggs, /*partial=*/true);
        }
        case PlanKind::FinalAggregate: {
            Block in = ref_execute(n.children.at(0), ctx);
            return aggregate(in, n.group_by, n.aggs, /*partial=*/false);
        }
        case PlanKind::Shuffle:
            // repartitioning does not change the row multiset
            return ref_execute(n.children.at(0), ctx);
        case PlanKind::Merge: {
            std::vector<Block> kids;
            for (const auto& c : n.children) kids.push_back(ref_execute(c, ctx));
            std::vector<const Block*> ptrs;
            for (const auto& b : kids) ptrs.push_back(&b);
            if (ptrs.empty()) return Block{};
            return concat_blocks(ptrs);
        }
        case PlanKind::HashJoin: {
            Block left = ref_execute(n.children.at(0), ctx);
            Block right = ref_execute(n.children.at(1), ctx);
            std::map<std::vector<Value>, std::vector<uint64_t>, ValueLess> right_index;
            for (uint64_t r = 0; r < right.rows; ++r) {
                std::vector<Value> key;
                for (const auto& k : n.right_keys) key.push_back(right.col(k).value_at(r));
                right_index[key].push_back(r);
            }
            std::vector<std::pair<std::string, ColumnType>> schema;
            for (const auto& c : left.columns) schema.emplace_back(c.name, c.type);
            std::vector<const Column*> right_cols;
            for (const auto& c : right.columns) {
                bool is_key = false;
                for (const auto& k : n.right_keys)
                    if (k == c.name) is_key = true;
                if (is_key) continue;
                for (const auto& [name, t] : schema)
                    if (name == c.name)
                        throw ExecError("join output column collision on '" + c.name + "'");
                schema.emplace_back(c.name, c.type);
                right_cols.push_back(&c);
            }
            std::vector<std::vector<Value>> rows;
            for (uint64_t l = 0; l < left.rows; ++l) {
                std::vector<Value> key;
                for (const auto& k : n.left_keys) key.push_back(left.col(k).value_at(l));
                auto it = right_index.find(key);
                if (it == right_index.end()) continue;
                for (uint64_t r : it->second) {
                    std::vector<Value> row;
                    for (const auto& c : left.columns) row.push_back(c.value_at(l));
                    for (const Column* c : right_cols) row.push_back(c->value_at(r));
                    rows.push_back(std::move(row));
                }
            }
            return rows_to_block(schema, rows);
        }
        case PlanKind::Stub: {
            std::vector<const Block*> parts;
            if (n.stub_shard >= 0) {
                if (!ctx.shard_outputs) throw ExecError("no shard outputs bound");
                for (uint64_t id : n.stub_ids) {
                    auto it = ctx.shard_outputs->find({id, static_cast<uint32_t>(n.stub_shard)});
                    if (it == ctx.shard_outputs->end())
                        throw ExecError("missing shard output for request " + std::to_string(id));
                    parts.push_back(&it->second);
                }
            } else {
                if (!ctx.stub_outputs) throw ExecError("no stub outputs bound");
                for (uint64_t id : n.stub_ids) {
                    auto it = ctx.stub_outputs->find(id);
                    if (it == ctx.stub_outputs->end())
                        throw ExecError("missing output for request " + std::to_string(id));
                    parts.push_back(&it->second);
                }
            }
            if (parts.empty()) return Block{};
            return concat_blocks(parts);
        }
        case PlanKind::BitmapProbe:
            throw ExecError("reference executor does not run bitmap plans");
    }
    throw ExecError("bad plan kind");
}

// ---------------------------------------------------------------------------
// Canonical comparison: order-insensitive table equality with a relative
// tolerance on floats (aggregation order differs between executors).

inline Block canonicalize(const Block& b) {
    std::vector<std::vector<Value>> rows;
    rows.reserve(b.rows);
    for (uint64_t r = 0; r < b.rows; ++r) {
        std::vector<Value> row;
        for (const auto& c : b.columns) row.push_back(c.value_at(r));
        rows.push_back(std::move(row));
    }
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& bb) {
        return ref::ValueLess{}(a, bb);
    });
    std::vector<std::pair<std::string, ColumnType>> schema;
    for (const auto& c : b.columns) schema.emplace_back(c.name, c.type);
    return ref::rows_to_block(schema, rows);
}

inline bool values_close(const Value& a, const Value& b, double rel_tol) {
    if (a.index() != b.index()) return false;
    if (std::holds_alternative<double>(a)) {
        double x = std::get<double>(a), y = std::get<double>(b);
        double scale = std::max({1.0, std::fabs(x), std::fabs(y)});
        return std::fabs(x - y) <= rel_tol * scale;
    }
    return a == b;
}

inline bool blocks_equal_canonical(const Block& a, const Block& b, double rel_tol = 1e-9,
                                   std::string* why = nullptr) {
    auto fail = [&](const std::string& msg) {
        if (why) *why = msg;
        return false;
    };
    if (a.rows != b.rows)
        return fail("row count " + std::to_string(a.rows) + " vs " + std::to_string(b.rows));
    if (a.columns.size() != b.columns.size()) return fail("column count differs");
    for (size_t i = 0; i < a.columns.size(); ++i) {
        if (a.columns[i].name != b.columns[i].name)
            return fail("column name '" + a.columns[i].name + "' vs '" + b.columns[i].name + "'");
        if (a.columns[i].type != b.columns[i].type)
            return fail("column type differs on '" + a.columns[i].name + "'");
    }
    Block ca = canonicalize(a), cb = canonicalize(b);
    for (uint64_t r = 0; r < ca.rows; ++r)
        for (size_t c = 0; c < ca.columns.size(); ++c)
            if (!values_close(ca.columns[c].value_at(r), cb.columns[c].value_at(r), rel_tol))
                return fail("cell mismatch at sorted row " + std::to_string(r) + ", column '" +
                            ca.columns[c].name + "'");
    return true;
}

} // namespace mdc
