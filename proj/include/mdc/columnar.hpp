#pragma once

// Columnar building blocks: typed columns, blocks (bundles of equal-length
// columns), partitions (a block with a table identity), selection bitmaps,
// position vectors, and the on-disk partition format.
//
// Bitmaps and the packed Bool payload are LSB-first: row i lives in byte
// i/8 at bit i%8. Trailing pad bits in the last byte are always zero.

#include <algorithm>
#include <bit>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "mdc/error.hpp"
#include "mdc/wire.hpp"

namespace mdc {

enum class ColumnType : uint8_t { Int64 = 0, Float64 = 1, Utf8 = 2, Bool = 3 };

inline const char* type_name(ColumnType t) {
    switch (t) {
        case ColumnType::Int64: return "Int64";
        case ColumnType::Float64: return "Float64";
        case ColumnType::Utf8: return "Utf8";
        case ColumnType::Bool: return "Bool";
    }
    return "?";
}

// One scalar cell. Bool rides as its own alternative, not as int.
using Value = std::variant<int64_t, double, std::string, bool>;

inline ColumnType type_of(const Value& v) {
    switch (v.index()) {
        case 0: return ColumnType::Int64;
        case 1: return ColumnType::Float64;
        case 2: return ColumnType::Utf8;
        default: return ColumnType::Bool;
    }
}

// Bool values are stored unpacked in memory (one byte per row, 0 or 1);
// packing only happens in the file / wire payload.
using ColumnData = std::variant<std::vector<int64_t>, std::vector<double>,
                                std::vector<std::string>, std::vector<uint8_t>>;

struct Column {
    std::string name;
    ColumnType type = ColumnType::Int64;
    ColumnData data;

    uint64_t size() const {
        return std::visit([](const auto& v) { return static_cast<uint64_t>(v.size()); }, data);
    }

    const std::vector<int64_t>& i64s() const { return get<std::vector<int64_t>>("Int64"); }
    const std::vector<double>& f64s() const { return get<std::vector<double>>("Float64"); }
    const std::vector<std::string>& strs() const { return get<std::vector<std::string>>("Utf8"); }
    const std::vector<uint8_t>& bools() const { return get<std::vector<uint8_t>>("Bool"); }

    Value value_at(uint64_t row) const {
        switch (type) {
            case ColumnType::Int64: return i64s()[row];
            case ColumnType::Float64: return f64s()[row];
            case ColumnType::Utf8: return strs()[row];
            case ColumnType::Bool: return static_cast<bool>(bools()[row]);
        }
        throw ExecError("bad column type");
    }

    // Payload bytes as written to disk / wire; this is the S_in unit the
    // cost model charges for reading the column.
    uint64_t payload_bytes() const {
        uint64_t rows = size();
        switch (type) {
            case ColumnType::Int64:
            case ColumnType::Float64: return rows * 8;
            case ColumnType::Bool: return (rows + 7) / 8;
            case ColumnType::Utf8: {
                uint64_t n = 4 * (rows + 1);
                for (const auto& s : strs()) n += s.size();
                return n;
            }
        }
        return 0;
    }

    bool operator==(const Column&) const = default;

  private:
    template <typename V>
    const V& get(const char* want) const {
        if (const V* p = std::get_if<V>(&data)) return *p;
        throw ExecError("column '" + name + "' is not " + want);
    }
};

inline Column make_column(std::string name, std::vector<int64_t> v) {
    return Column{std::move(name), ColumnType::Int64, std::move(v)};
}
inline Column make_column(std::string name, std::vector<double> v) {
    return Column{std::move(name), ColumnType::Float64, std::move(v)};
}
inline Column make_column(std::string name, std::vector<std::string> v) {
    return Column{std::move(name), ColumnType::Utf8, std::move(v)};
}
inline Column make_bool_column(std::string name, std::vector<uint8_t> v) {
    return Column{std::move(name), ColumnType::Bool, std::move(v)};
}

// A bundle of equal-length columns; the unit results move around in.
struct Block {
    uint64_t rows = 0;
    std::vector<Column> columns;

    const Column& col(const std::string& name) const {
        for (const auto& c : columns)
            if (c.name == name) return c;
        throw ExecError("unknown column '" + name + "'");
    }

    const Column* find(const std::string& name) const {
        for (const auto& c : columns)
            if (c.name == name) return &c;
        return nullptr;
    }

    void add(Column c) {
        if (!columns.empty() && c.size() != rows)
            throw ExecError("column '" + c.name + "' length mismatch");
        if (columns.empty()) rows = c.size();
        for (const auto& existing : columns)
            if (existing.name == c.name) throw ExecError("duplicate column '" + c.name + "'");
        columns.push_back(std::move(c));
    }

    uint64_t payload_bytes() const {
        uint64_t n = 0;
        for (const auto& c : columns) n += c.payload_bytes();
        return n;
    }

    bool operator==(const Block&) const = default;
};

struct ColumnarPartition {
    std::string table_name;
    uint32_t partition_id = 0;
    Block data;

    uint64_t rows() const { return data.rows; }

    bool operator==(const ColumnarPartition&) const = default;
};

// ---------------------------------------------------------------------------
// Selection bitmap

enum class BitOp : uint8_t { And = 0, Or = 1 };

class SelectionBitmap {
  public:
    SelectionBitmap() = default;

    // All-zeros bitmap of the given length.
    explicit SelectionBitmap(uint64_t length)
        : length_(length), bits_((length + 7) / 8, 0), popcount_(0) {}

    static SelectionBitmap from_mask(const std::vector<bool>& mask) {
        SelectionBitmap bm(mask.size());
        for (uint64_t i = 0; i < mask.size(); ++i)
            if (mask[i]) bm.set(i);
        return bm;
    }

    // Reconstruct from packed bytes (wire/file form). Pad bits must be zero.
    static SelectionBitmap from_bytes(uint64_t length, std::vector<uint8_t> bytes) {
        if (bytes.size() != (length + 7) / 8)
            throw DecodeError("bitmap byte length mismatch");
        if (length % 8 != 0 && !bytes.empty()) {
            uint8_t pad = static_cast<uint8_t>(bytes.back() >> (length % 8));
            if (pad != 0) throw DecodeError("bitmap has nonzero pad bits");
        }
        SelectionBitmap bm;
        bm.length_ = length;
        bm.bits_ = std::move(bytes);
        bm.popcount_ = 0;
        for (uint8_t b : bm.bits_) bm.popcount_ += std::popcount(b);
        return bm;
    }

    void set(uint64_t i) {
        uint8_t& b = bits_[i / 8];
        uint8_t m = static_cast<uint8_t>(1u << (i % 8));
        if (!(b & m)) {
            b |= m;
            ++popcount_;
        }
    }

    bool test(uint64_t i) const { return (bits_[i / 8] >> (i % 8)) & 1u; }

    uint64_t length() const { return length_; }
    uint64_t popcount() const { return popcount_; }
    uint64_t byte_size() const { return bits_.size(); }
    const std::vector<uint8_t>& bytes() const { return bits_; }

    bool operator==(const SelectionBitmap&) const = default;

  private:
    uint64_t length_ = 0;
    std::vector<uint8_t> bits_;
    uint64_t popcount_ = 0;
};

// Lengths must match; pad bits stay zero because both inputs keep theirs zero.
inline SelectionBitmap combine_bitmaps(const SelectionBitmap& a, const SelectionBitmap& b,
                                       BitOp op) {
    if (a.length() != b.length())
        throw ExecError("bitmap length mismatch: " + std::to_string(a.length()) + " vs " +
                        std::to_string(b.length()));
    std::vector<uint8_t> out(a.byte_size());
    const auto& x = a.bytes();
    const auto& y = b.bytes();
    for (size_t i = 0; i < out.size(); ++i)
        out[i] = op == BitOp::And ? static_cast<uint8_t>(x[i] & y[i])
                                  : static_cast<uint8_t>(x[i] | y[i]);
    return SelectionBitmap::from_bytes(a.length(), std::move(out));
}

inline Column filter_column(const Column& c, const SelectionBitmap& bm) {
    if (c.size() != bm.length()) throw ExecError("bitmap length mismatch on '" + c.name + "'");
    Column out;
    out.name = c.name;
    out.type = c.type;
    std::visit(
        [&](const auto& v) {
            std::decay_t<decltype(v)> kept;
            kept.reserve(bm.popcount());
            for (uint64_t i = 0; i < v.size(); ++i)
                if (bm.test(i)) kept.push_back(v[i]);
            out.data = std::move(kept);
        },
        c.data);
    return out;
}

inline Block filter_block(const Block& b, const SelectionBitmap& bm) {
    Block out;
    out.rows = bm.popcount();
    for (const auto& c : b.columns) out.columns.push_back(filter_column(c, bm));
    return out;
}

// ---------------------------------------------------------------------------
// Position vector: per-row shuffle target, packed at the minimum bit width.

class PositionVector {
  public:
    PositionVector() = default;

    PositionVector(uint64_t length, uint32_t fanout)
        : length_(length), fanout_(fanout), bits_per_entry_(entry_bits(fanout)),
          packed_((length * bits_per_entry_ + 7) / 8, 0) {
        if (fanout == 0) throw ExecError("position vector fanout must be > 0");
    }

    static uint32_t entry_bits(uint32_t fanout) {
        uint32_t b = static_cast<uint32_t>(std::bit_width(fanout > 0 ? fanout - 1 : 0u));
        return std::max(1u, b); // fanout 1 still spends one bit per entry
    }

    void set(uint64_t i, uint32_t target) {
        if (target >= fanout_) throw ExecError("position vector target out of range");
        uint64_t bit = i * bits_per_entry_;
        for (uint32_t k = 0; k < bits_per_entry_; ++k, ++bit)
            if ((target >> k) & 1u) packed_[bit / 8] |= static_cast<uint8_t>(1u << (bit % 8));
    }

    uint32_t get(uint64_t i) const {
        uint64_t bit = i * bits_per_entry_;
        uint32_t v = 0;
        for (uint32_t k = 0; k < bits_per_entry_; ++k, ++bit)
            v |= static_cast<uint32_t>((packed_[bit / 8] >> (bit % 8)) & 1u) << k;
        return v;
    }

    uint64_t length() const { return length_; }
    uint32_t fanout() const { return fanout_; }
    uint32_t bits_per_entry() const { return bits_per_entry_; }
    uint64_t byte_size() const { return packed_.size(); }
    const std::vector<uint8_t>& bytes() const { return packed_; }

    static PositionVector from_bytes(uint64_t length, uint32_t fanout,
                                     std::vector<uint8_t> bytes) {
        PositionVector pv(length, fanout);
        if (bytes.size() != pv.packed_.size())
            throw DecodeError("position vector byte length mismatch");
        pv.packed_ = std::move(bytes);
        return pv;
    }

    bool operator==(const PositionVector&) const = default;

  private:
    uint64_t length_ = 0;
    uint32_t fanout_ = 1;
    uint32_t bits_per_entry_ = 1;
    std::vector<uint8_t> packed_;
};

// ---------------------------------------------------------------------------
// Column payload encode/decode. The same bytes serve the partition file,
// raw-fetch responses and block-shaped wire messages.

inline void encode_payload(const Column& c, ByteWriter& w) {
    switch (c.type) {
        case ColumnType::Int64:
            for (int64_t v : c.i64s()) w.i64(v);
            break;
        case ColumnType::Float64:
            for (double v : c.f64s()) w.f64(v);
            break;
        case ColumnType::Bool: {
            const auto& v = c.bools();
            std::vector<uint8_t> packed((v.size() + 7) / 8, 0);
            for (size_t i = 0; i < v.size(); ++i)
                if (v[i]) packed[i / 8] |= static_cast<uint8_t>(1u << (i % 8));
            w.bytes(packed.data(), packed.size());
            break;
        }
        case ColumnType::Utf8: {
            const auto& v = c.strs();
            uint32_t off = 0;
            w.u32(off);
            for (const auto& s : v) {
                off += static_cast<uint32_t>(s.size());
                w.u32(off);
            }
            for (const auto& s : v) w.bytes(s.data(), s.size());
            break;
        }
    }
}

inline ColumnData decode_payload(ByteReader& r, ColumnType type, uint64_t rows) {
    switch (type) {
        case ColumnType::Int64: {
            std::vector<int64_t> v(rows);
            for (auto& x : v) x = r.i64("int64 payload");
            return v;
        }
        case ColumnType::Float64: {
            std::vector<double> v(rows);
            for (auto& x : v) x = r.f64("float64 payload");
            return v;
        }
        case ColumnType::Bool: {
            const uint8_t* p = r.take("bool payload", (rows + 7) / 8);
            std::vector<uint8_t> v(rows);
            for (uint64_t i = 0; i < rows; ++i) v[i] = (p[i / 8] >> (i % 8)) & 1u;
            return v;
        }
        case ColumnType::Utf8: {
            std::vector<uint32_t> offs(rows + 1);
            for (auto& o : offs) o = r.u32("utf8 offsets");
            for (uint64_t i = 0; i < rows; ++i)
                if (offs[i + 1] < offs[i]) throw DecodeError("utf8 offsets not monotonic");
            const uint8_t* p = r.take("utf8 bytes", offs[rows]);
            std::vector<std::string> v(rows);
            for (uint64_t i = 0; i < rows; ++i)
                v[i].assign(reinterpret_cast<const char*>(p) + offs[i], offs[i + 1] - offs[i]);
            return v;
        }
    }
    throw DecodeError("bad type tag");
}

// Block wire form: rows u64 | column count u16 | per column name, tag, payload.
inline void encode_block(const Block& b, ByteWriter& w) {
    w.u64(b.rows);
    w.u16(static_cast<uint16_t>(b.columns.size()));
    for (const auto& c : b.columns) {
        w.str16(c.name);
        w.u8(static_cast<uint8_t>(c.type));
        encode_payload(c, w);
    }
}

inline Block decode_block(ByteReader& r) {
    Block b;
    b.rows = r.u64("block rows");
    uint16_t ncols = r.u16("block column count");
    for (uint16_t i = 0; i < ncols; ++i) {
        Column c;
        c.name = r.str16("column name");
        uint8_t tag = r.u8("type tag");
        if (tag > 3) throw DecodeError("bad type tag");
        c.type = static_cast<ColumnType>(tag);
        c.data = decode_payload(r, c.type, b.rows);
        b.columns.push_back(std::move(c));
    }
    return b;
}

// ---------------------------------------------------------------------------
// Partition file format.
//
//   magic "MDC1" | version u16 | column count u32 | row count u64
//   per column: name len u16 | name bytes | type tag u8 | payload
//
// The file carries no table identity; the filename convention
// `<table>__p<id>.mdc` supplies it on read.

inline constexpr char kPartitionMagic[4] = {'M', 'D', 'C', '1'};
inline constexpr uint16_t kPartitionVersion = 1;

inline std::string partition_file_name(const std::string& table, uint32_t id) {
    return table + "__p" + std::to_string(id) + ".mdc";
}

inline std::vector<uint8_t> serialize_partition(const ColumnarPartition& p) {
    for (const auto& c : p.data.columns)
        if (c.size() != p.rows()) throw FormatError("column '" + c.name + "' length mismatch");
    ByteWriter w;
    w.bytes(kPartitionMagic, 4);
    w.u16(kPartitionVersion);
    w.u32(static_cast<uint32_t>(p.data.columns.size()));
    w.u64(p.rows());
    for (const auto& c : p.data.columns) {
        w.str16(c.name);
        w.u8(static_cast<uint8_t>(c.type));
        encode_payload(c, w);
    }
    return w.take();
}

inline void write_partition(const ColumnarPartition& p, const std::filesystem::path& path) {
    auto bytes = serialize_partition(p);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot open '" + path.string() + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw FormatError("short write to '" + path.string() + "'");
}

// Splits "<table>__p<id>" out of a file stem; returns nullopt when the
// stem does not follow the convention.
inline std::optional<std::pair<std::string, uint32_t>> parse_partition_name(
    const std::string& stem) {
    size_t pos = stem.rfind("__p");
    if (pos == std::string::npos || pos + 3 >= stem.size()) return std::nullopt;
    uint64_t id = 0;
    for (size_t i = pos + 3; i < stem.size(); ++i) {
        if (!std::isdigit(static_cast<unsigned char>(stem[i]))) return std::nullopt;
        id = id * 10 + static_cast<uint64_t>(stem[i] - '0');
        if (id > 0xffffffffull) return std::nullopt;
    }
    return std::make_pair(stem.substr(0, pos), static_cast<uint32_t>(id));
}

inline ColumnarPartition deserialize_partition(const std::vector<uint8_t>& bytes) {
    ByteReader r(bytes);
    const uint8_t* magic = r.take("magic", 4);
    if (std::memcmp(magic, kPartitionMagic, 4) != 0) throw FormatError("bad magic");
    uint16_t version = r.u16("version");
    if (version != kPartitionVersion)
        throw FormatError("unsupported version " + std::to_string(version));
    uint32_t ncols = r.u32("column count");
    uint64_t rows = r.u64("row count");
    ColumnarPartition p;
    p.data.rows = rows;
    for (uint32_t i = 0; i < ncols; ++i) {
        Column c;
        c.name = r.str16("column name");
        for (const auto& existing : p.data.columns)
            if (existing.name == c.name) throw FormatError("duplicate column '" + c.name + "'");
        uint8_t tag = r.u8("type tag");
        if (tag > 3) throw FormatError("bad type tag " + std::to_string(tag));
        c.type = static_cast<ColumnType>(tag);
        c.data = decode_payload(r, c.type, rows);
        p.data.columns.push_back(std::move(c));
    }
    if (!r.done()) throw FormatError("trailing bytes after last column");
    return p;
}

inline ColumnarPartition read_partition(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open '" + path.string() + "'");
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());
    ColumnarPartition p;
    try {
        p = deserialize_partition(bytes);
    } catch (const DecodeError& e) {
        // Reader errors name the offending field; rewrap as a file problem.
        throw FormatError(e.what());
    }
    if (auto id = parse_partition_name(path.stem().string())) {
        p.table_name = id->first;
        p.partition_id = id->second;
    } else {
        p.table_name = path.stem().string();
        p.partition_id = 0;
    }
    return p;
}

// ---------------------------------------------------------------------------
// CSV fixtures: header row, comma separated, no quoting. Column types are
// inferred per column: Int64 if every cell parses as one, else Float64,
// else Bool for true/false, else Utf8.

inline ColumnarPartition load_csv(const std::filesystem::path& path, const std::string& table,
                                  uint32_t partition_id = 0) {
    std::ifstream f(path);
    if (!f) throw FormatError("cannot open '" + path.string() + "'");
    std::string line;
    if (!std::getline(f, line)) throw FormatError("csv missing header row");
    auto split = [](const std::string& s) {
        std::vector<std::string> out;
        std::string cur;
        for (char ch : s) {
            if (ch == ',') {
                out.push_back(cur);
                cur.clear();
            } else if (ch != '\r') {
                cur.push_back(ch);
            }
        }
        out.push_back(cur);
        return out;
    };
    std::vector<std::string> names = split(line);
    std::vector<std::vector<std::string>> cells(names.size());
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto row = split(line);
        if (row.size() != names.size())
            throw FormatError("csv row has " + std::to_string(row.size()) + " cells, expected " +
                              std::to_string(names.size()));
        for (size_t i = 0; i < row.size(); ++i) cells[i].push_back(row[i]);
    }

    auto parses_i64 = [](const std::string& s, int64_t& out) {
        if (s.empty()) return false;
        size_t pos = 0;
        try {
            out = std::stoll(s, &pos);
        } catch (...) {
            return false;
        }
        return pos == s.size();
    };
    auto parses_f64 = [](const std::string& s, double& out) {
        if (s.empty()) return false;
        size_t pos = 0;
        try {
            out = std::stod(s, &pos);
        } catch (...) {
            return false;
        }
        return pos == s.size();
    };

    ColumnarPartition p;
    p.table_name = table;
    p.partition_id = partition_id;
    p.data.rows = cells.empty() ? 0 : cells[0].size();
    for (size_t i = 0; i < names.size(); ++i) {
        int64_t iv;
        double fv;
        bool all_i = true, all_f = true, all_b = true;
        for (const auto& s : cells[i]) {
            if (all_i && !parses_i64(s, iv)) all_i = false;
            if (all_f && !parses_f64(s, fv)) all_f = false;
            if (all_b && s != "true" && s != "false") all_b = false;
        }
        Column c;
        c.name = names[i];
        if (all_i && !cells[i].empty()) {
            std::vector<int64_t> v;
            for (const auto& s : cells[i]) {
                parses_i64(s, iv);
                v.push_back(iv);
            }
            c = make_column(names[i], std::move(v));
        } else if (all_f && !cells[i].empty()) {
            std::vector<double> v;
            for (const auto& s : cells[i]) {
                parses_f64(s, fv);
                v.push_back(fv);
            }
            c = make_column(names[i], std::move(v));
        } else if (all_b && !cells[i].empty()) {
            std::vector<uint8_t> v;
            for (const auto& s : cells[i]) v.push_back(s == "true" ? 1 : 0);
            c = make_bool_column(names[i], std::move(v));
        } else {
            c = make_column(names[i], std::vector<std::string>(cells[i]));
        }
        p.data.add(std::move(c));
    }
    return p;
}

} // namespace mdc
