#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace mpu {

// Fixed-point decimal with a per-value scale (digits after the point).
// Attribute numerics use this instead of floating point so matrix
// classification and trace hashes are exact and reproducible.
struct Fixed {
    std::int64_t mantissa = 0;
    std::uint8_t scale = 0;  // 0..9

    static constexpr std::uint8_t kMaxScale = 9;

    static Fixed of(std::int64_t mant, std::uint8_t sc) { return {mant, sc}; }

    std::string str() const;

    friend bool operator==(const Fixed& a, const Fixed& b) {
        return compare(a, b) == 0;
    }
    friend bool operator<(const Fixed& a, const Fixed& b) {
        return compare(a, b) < 0;
    }

    // Three-way compare after rescaling to the larger scale.
    static int compare(const Fixed& a, const Fixed& b);
};

// |a - b| <= tol, all in exact fixed-point arithmetic.
bool fixed_within(const Fixed& a, const Fixed& b, const Fixed& tol);

// Parses "12.5", "-3.04", "7". Rejects anything else (trailing junk, too
// many fraction digits, overflow).
std::optional<Fixed> parse_fixed(std::string_view text);

// --- confidence arithmetic -------------------------------------------------
// Confidences are fixed-point with scale 1e-4, held as integers 0..10000.

using Conf4 = std::uint32_t;
inline constexpr Conf4 kConfOne = 10000;

// Banker's rounding of num/den, num and den non-negative, den > 0.
std::uint64_t div_round_half_even(std::uint64_t num, std::uint64_t den);

// Product of two confidences, round-half-even at 1e-4.
Conf4 conf_mul(Conf4 a, Conf4 b);

// "0.9900" style rendering, always 4 places; 10000 prints "1.0000".
std::string conf_str(Conf4 c);

}  // namespace mpu
