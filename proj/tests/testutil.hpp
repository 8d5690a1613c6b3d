#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mpu/isa.hpp"

namespace testutil {

// Deterministic PRNG so fuzzed expectations are identical on every
// platform and every run.
struct SplitMix64 {
    std::uint64_t state;

    explicit SplitMix64(std::uint64_t seed) : state(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }
    std::uint32_t below(std::uint32_t n) {
        return n == 0 ? 0 : static_cast<std::uint32_t>(next() % n);
    }
    bool chance(std::uint32_t percent) { return below(100) < percent; }
};

inline std::string data_dir() { return MPU_TEST_DATA_DIR; }

// Independent shift-or oracle for the instruction word layout.
inline std::uint32_t oracle_word(std::uint8_t opcode, std::uint8_t mode,
                                 std::uint16_t a, std::uint16_t b) {
    return (static_cast<std::uint32_t>(opcode) << 24) |
           (static_cast<std::uint32_t>(mode & 0xF) << 20) |
           (static_cast<std::uint32_t>(a & 0x3FF) << 10) |
           static_cast<std::uint32_t>(b & 0x3FF);
}

// One random canonical word: defined opcode, allowed mode, operands within
// arity (zero elsewhere), memory form only for addresses >= 1024.
inline std::uint32_t random_canonical_word(SplitMix64& rng) {
    const auto& table = mpu::isa::OpcodeTable::standard();
    const auto& info = table.all()[rng.below(
        static_cast<std::uint32_t>(table.all().size()))];

    std::vector<mpu::isa::ExecMode> modes;
    for (int m = 0; m < 4; ++m)
        if (info.allows(static_cast<mpu::isa::ExecMode>(m)))
            modes.push_back(static_cast<mpu::isa::ExecMode>(m));
    std::uint8_t mode = static_cast<std::uint8_t>(
        modes[rng.below(static_cast<std::uint32_t>(modes.size()))]);

    std::uint16_t a = 0, b = 0;
    auto operand_value = [&](mpu::isa::OperandKind kind) -> std::uint16_t {
        switch (kind) {
            case mpu::isa::OperandKind::REG:
                return static_cast<std::uint16_t>(rng.below(16));
            case mpu::isa::OperandKind::IMM:
                return static_cast<std::uint16_t>(rng.below(1024));
            case mpu::isa::OperandKind::ADDR:
                return static_cast<std::uint16_t>(rng.below(4096));
            case mpu::isa::OperandKind::NONE:
                return 0;
        }
        return 0;
    };
    if (info.arity >= 1) a = operand_value(info.operand_a);
    if (info.arity >= 2) b = operand_value(info.operand_b);

    if (info.takes_address() && b >= 1024) {
        mode |= mpu::isa::kModeMemForm;
        std::uint16_t reg = a;
        a = static_cast<std::uint16_t>((reg << 2) | (b >> 10));
        b = static_cast<std::uint16_t>(b & 0x3FF);
    }
    return oracle_word(info.code, mode, a, b);
}

}  // namespace testutil
