#pragma once

// Fragment execution shared by both layers. Storage runs it over freshly
// scanned columns for admitted requests; compute runs the exact same code
// over raw-fetched columns after a pushback, which is what makes the two
// paths interchangeable.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mdc/columnar.hpp"
#include "mdc/kernels.hpp"
#include "mdc/plan.hpp"

namespace mdc {

struct FragmentOutput {
    // Value rows or partial aggregate state. Stays empty for bitmap-only
    // requests, where the bitmap is the whole product.
    Block block;
    std::optional<SelectionBitmap> bitmap;
};

// Runs req's op list over the already materialized scan columns. `attached`
// overrides the bitmap baked into req (compute passes its cached-column
// bitmap; storage passes the one that arrived on the wire, which is the
// same thing). Filters all precede projection in encodable fragments, so
// the row set is settled exactly once.
inline FragmentOutput run_fragment_ops(const PushdownRequest& req, Block base,
                                       const SelectionBitmap* attached = nullptr) {
    if (req.fragment.empty() || req.fragment[0].kind != PlanKind::Scan)
        throw ExecError("fragment does not start with a scan");

    const bool send_bitmap =
        req.bitmap && req.bitmap->mode == BitmapDirective::Mode::SendBitmapToCompute;
    const bool apply_bitmap =
        req.bitmap && req.bitmap->mode == BitmapDirective::Mode::ApplyAttachedBitmap;
    if (apply_bitmap && attached == nullptr) attached = &req.bitmap->bitmap;

    // Phase one: fold every filter into a single bitmap over the scan rows.
    std::optional<SelectionBitmap> filters;
    size_t next = 1;
    while (next < req.fragment.size() && req.fragment[next].kind == PlanKind::Filter) {
        SelectionBitmap bm = eval_predicate(req.fragment[next].predicate, base);
        filters = filters ? combine_bitmaps(*filters, bm, BitOp::And) : std::move(bm);
        ++next;
    }

    std::optional<SelectionBitmap> rows;
    if (apply_bitmap) {
        if (attached->length() != base.rows)
            throw ExecError("attached bitmap length does not match partition rows");
        rows = filters ? combine_bitmaps(*attached, *filters, req.bitmap->combine)
                       : *attached;
    } else if (filters) {
        rows = std::move(filters);
    }

    FragmentOutput out;
    if (send_bitmap) {
        if (next != req.fragment.size())
            throw ExecError("bitmap fragment cannot produce value output");
        out.bitmap = rows ? std::move(*rows)
                          : SelectionBitmap::from_mask(std::vector<bool>(base.rows, true));
        return out;
    }

    Block cur = rows ? filter_block(base, *rows) : std::move(base);

    // Phase two: the value-shaping tail.
    for (; next < req.fragment.size(); ++next) {
        const PlanNode& op = req.fragment[next];
        switch (op.kind) {
            case PlanKind::Project:
                cur = project_block(cur, op.columns);
                break;
            case PlanKind::PartialAggregate:
                cur = partial_aggregate(cur, op.group_by, op.aggs);
                break;
            case PlanKind::Filter:
                throw ExecError("filter after projection in fragment");
            default:
                throw ExecError("op kind not pushable");
        }
    }
    out.block = std::move(cur);
    if (apply_bitmap && req.bitmap->return_combined) out.bitmap = *rows;
    return out;
}

} // namespace mdc
