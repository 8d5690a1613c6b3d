#include "mpu/symptom_match.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>

#include "mpu/errors.hpp"
#include "mpu/hash.hpp"

namespace mpu::match {

std::uint64_t SymptomSchema::id() const {
    std::uint64_t h = fnv1a64_u32(static_cast<std::uint32_t>(widths.size()),
                                  kFnv64Offset);
    for (std::uint8_t w : widths) h = fnv1a64_u32(w, h);
    return h;
}

std::uint64_t SymptomSchema::max_distance() const {
    std::uint64_t total = 0;
    for (std::uint8_t w : widths) total += w;
    return total;
}

std::uint64_t SymptomSchema::max_distance(
    const std::vector<std::uint32_t>& weights) const {
    if (weights.empty()) return max_distance();
    std::uint64_t total = 0;
    for (std::size_t d = 0; d < widths.size(); ++d)
        total += static_cast<std::uint64_t>(widths[d]) * weights[d];
    return total;
}

std::string to_hex(const SymptomVector& v) {
    std::string out;
    char buf[24];
    for (std::size_t d = 0; d < v.dims.size(); ++d) {
        std::snprintf(buf, sizeof buf, "%llx",
                      static_cast<unsigned long long>(v.dims[d]));
        if (d) out += ':';
        out += buf;
    }
    return out;
}

std::optional<SymptomVector> parse_hex(const SymptomSchema& schema,
                                       const std::string& text) {
    SymptomVector v;
    v.schema_id = schema.id();
    std::size_t pos = 0;
    for (std::size_t d = 0; d < schema.dims(); ++d) {
        std::size_t next = text.find(':', pos);
        std::string part = next == std::string::npos ? text.substr(pos)
                                                     : text.substr(pos, next - pos);
        if (part.empty() || part.size() > 16) return std::nullopt;
        std::uint64_t code = 0;
        for (char c : part) {
            int digit;
            if (c >= '0' && c <= '9') digit = c - '0';
            else if (c >= 'a' && c <= 'f') digit = c - 'a' + 10;
            else if (c >= 'A' && c <= 'F') digit = c - 'A' + 10;
            else return std::nullopt;
            code = (code << 4) | static_cast<std::uint64_t>(digit);
        }
        if (!schema.fits(d, code)) return std::nullopt;
        v.dims.push_back(code);
        if (next == std::string::npos) {
            if (d + 1 != schema.dims()) return std::nullopt;
            pos = text.size();
        } else {
            pos = next + 1;
        }
    }
    if (pos != text.size() && pos != text.size() + 1) return std::nullopt;
    return v;
}

void SignatureBank::add(const SignatureRecord& rec) {
    if (entries.empty() && schema_id == 0) schema_id = rec.vector.schema_id;
    if (rec.vector.schema_id != schema_id)
        throw MpuError(ErrCode::SchemaMismatch,
                       "record " + std::to_string(rec.record_id));
    for (const auto& e : entries)
        if (e.record_id == rec.record_id)
            throw MpuError(ErrCode::SchemaMismatch,
                           "duplicate record id " + std::to_string(rec.record_id));
    entries.push_back(rec);
}

std::uint64_t distance(const SymptomVector& x, const SymptomVector& y,
                       const std::vector<std::uint32_t>& weights) {
    if (x.schema_id != y.schema_id || x.dims.size() != y.dims.size())
        throw MpuError(ErrCode::SchemaMismatch, "distance operands");
    if (!weights.empty() && weights.size() != x.dims.size())
        throw MpuError(ErrCode::SchemaMismatch, "weight vector length");
    std::uint64_t total = 0;
    for (std::size_t d = 0; d < x.dims.size(); ++d) {
        std::uint64_t w = weights.empty() ? 1 : weights[d];
        total += w * static_cast<std::uint64_t>(std::popcount(x.dims[d] ^ y.dims[d]));
    }
    return total;
}

std::vector<Neighbor> nearest_k(const SignatureBank& bank,
                                const SymptomVector& query, std::size_t k) {
    if (bank.empty()) throw MpuError(ErrCode::EmptyBank, "nearest_k");
    if (bank.schema_id != query.schema_id)
        throw MpuError(ErrCode::SchemaMismatch, "query schema");
    std::vector<Neighbor> all;
    all.reserve(bank.entries.size());
    for (const SignatureRecord& rec : bank.entries)
        all.push_back({rec.record_id, distance(rec.vector, query, bank.weights)});
    std::sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) {
        return a.distance != b.distance ? a.distance < b.distance
                                        : a.record_id < b.record_id;
    });
    if (all.size() > k) all.resize(k);
    return all;
}

std::vector<std::vector<int>> delta_profile(const SymptomVector& x,
                                            const SymptomVector& y) {
    if (x.schema_id != y.schema_id || x.dims.size() != y.dims.size())
        throw MpuError(ErrCode::SchemaMismatch, "delta_profile operands");
    std::vector<std::vector<int>> out(x.dims.size());
    for (std::size_t d = 0; d < x.dims.size(); ++d) {
        std::uint64_t diff = x.dims[d] ^ y.dims[d];
        while (diff) {
            int bit = std::countr_zero(diff);
            out[d].push_back(bit);
            diff &= diff - 1;
        }
    }
    return out;
}

}  // namespace mpu::match
