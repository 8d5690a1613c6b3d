#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace mpu::match {

// Layout of a multidimensional code vector: D dimensions, w_d bits each.
struct SymptomSchema {
    std::vector<std::uint8_t> widths;  // 1..64 bits per dimension

    std::size_t dims() const { return widths.size(); }
    std::uint64_t id() const;  // FNV over the widths, names the layout

    // Largest possible unweighted distance under this schema.
    std::uint64_t max_distance() const;
    std::uint64_t max_distance(const std::vector<std::uint32_t>& weights) const;

    bool fits(std::size_t dim, std::uint64_t code) const {
        std::uint8_t w = widths[dim];
        return w >= 64 || code < (1ull << w);
    }
};

struct SymptomVector {
    std::uint64_t schema_id = 0;
    std::vector<std::uint64_t> dims;

    friend bool operator==(const SymptomVector&, const SymptomVector&) = default;
};

// "0a:3f" style rendering, one lowercase hex code per dimension.
std::string to_hex(const SymptomVector& v);
std::optional<SymptomVector> parse_hex(const SymptomSchema& schema,
                                       const std::string& text);

struct SignatureRecord {
    std::uint32_t record_id;
    SymptomVector vector;
    std::string label;
};

struct SignatureBank {
    std::uint64_t schema_id = 0;
    std::vector<SignatureRecord> entries;
    std::vector<std::uint32_t> weights;  // empty = all 1

    void add(const SignatureRecord& rec);  // throws SchemaMismatch on mix
    bool empty() const { return entries.empty(); }
};

// Weighted per-dimension Hamming distance:
//   sum_d weights[d] * popcount(x.dims[d] ^ y.dims[d])
// Throws SchemaMismatch when the vectors disagree on schema or the weight
// list length is wrong.
std::uint64_t distance(const SymptomVector& x, const SymptomVector& y,
                       const std::vector<std::uint32_t>& weights = {});

struct Neighbor {
    std::uint32_t record_id;
    std::uint64_t distance;

    friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

// k nearest entries sorted by (distance asc, record_id asc); fewer when the
// bank is smaller. Throws EmptyBank, SchemaMismatch.
std::vector<Neighbor> nearest_k(const SignatureBank& bank,
                                const SymptomVector& query, std::size_t k);

// Ascending differing-bit positions, one list per dimension.
std::vector<std::vector<int>> delta_profile(const SymptomVector& x,
                                            const SymptomVector& y);

}  // namespace mpu::match
