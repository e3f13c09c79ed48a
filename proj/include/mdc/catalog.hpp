#pragma once

// Shared view of what lives where: table schemas, partition ids, and the
// per-column payload sizes the cost model charges for reads. Both layers
// hold a copy; it is built by scanning a data directory or registering
// in-memory partitions.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mdc/columnar.hpp"

namespace mdc {

struct ColumnInfo {
    ColumnType type = ColumnType::Int64;
    uint64_t payload_bytes = 0;
};

struct PartitionInfo {
    uint32_t id = 0;
    uint64_t rows = 0;
    std::map<std::string, ColumnInfo> columns;
};

struct Catalog {
    // table -> partitions ordered by id
    std::map<std::string, std::vector<PartitionInfo>> tables;

    const std::vector<PartitionInfo>& partitions(const std::string& table) const {
        auto it = tables.find(table);
        if (it == tables.end()) throw ExecError("unknown table '" + table + "'");
        return it->second;
    }

    const PartitionInfo& partition(const std::string& table, uint32_t id) const {
        for (const auto& p : partitions(table))
            if (p.id == id) return p;
        throw ExecError("unknown partition " + table + "/" + std::to_string(id));
    }

    const ColumnInfo& column(const std::string& table, uint32_t id,
                             const std::string& col) const {
        const auto& part = partition(table, id);
        auto it = part.columns.find(col);
        if (it == part.columns.end())
            throw ExecError("no stats for column '" + col + "' of " + table + "/" +
                            std::to_string(id));
        return it->second;
    }

    void add(const ColumnarPartition& p) {
        PartitionInfo info;
        info.id = p.partition_id;
        info.rows = p.rows();
        for (const auto& c : p.data.columns)
            info.columns[c.name] = ColumnInfo{c.type, c.payload_bytes()};
        auto& list = tables[p.table_name];
        list.push_back(std::move(info));
        std::sort(list.begin(), list.end(),
                  [](const auto& a, const auto& b) { return a.id < b.id; });
    }
};

} // namespace mdc
