#include "mpu/fixed.hpp"

#include <array>
#include <cctype>
#include <cstdlib>

namespace mpu {
namespace {

constexpr std::array<std::int64_t, 10> kPow10 = {
    1,      10,      100,      1000,      10000,
    100000, 1000000, 10000000, 100000000, 1000000000};

// Mantissas are kept small enough that rescaling to scale 9 cannot overflow.
constexpr std::int64_t kMantissaLimit = 1000000000000000ll;  // 1e15

}  // namespace

int Fixed::compare(const Fixed& a, const Fixed& b) {
    std::uint8_t s = a.scale > b.scale ? a.scale : b.scale;
    std::int64_t am = a.mantissa * kPow10[s - a.scale];
    std::int64_t bm = b.mantissa * kPow10[s - b.scale];
    return am < bm ? -1 : am > bm ? 1 : 0;
}

bool fixed_within(const Fixed& a, const Fixed& b, const Fixed& tol) {
    std::uint8_t s = a.scale;
    if (b.scale > s) s = b.scale;
    if (tol.scale > s) s = tol.scale;
    std::int64_t am = a.mantissa * kPow10[s - a.scale];
    std::int64_t bm = b.mantissa * kPow10[s - b.scale];
    std::int64_t tm = tol.mantissa * kPow10[s - tol.scale];
    std::int64_t d = am > bm ? am - bm : bm - am;
    return d <= tm;
}

std::string Fixed::str() const {
    std::int64_t m = mantissa;
    bool neg = m < 0;
    if (neg) m = -m;
    std::int64_t whole = m / kPow10[scale];
    std::int64_t frac = m % kPow10[scale];
    std::string out = neg ? "-" : "";
    out += std::to_string(whole);
    if (scale > 0) {
        std::string f = std::to_string(frac);
        out += '.';
        out += std::string(scale - f.size(), '0');
        out += f;
    }
    return out;
}

std::optional<Fixed> parse_fixed(std::string_view text) {
    if (text.empty()) return std::nullopt;
    std::size_t i = 0;
    bool neg = false;
    if (text[0] == '-' || text[0] == '+') {
        neg = text[0] == '-';
        i = 1;
    }
    std::int64_t mant = 0;
    std::uint8_t scale = 0;
    bool seen_digit = false, seen_dot = false;
    for (; i < text.size(); ++i) {
        char c = text[i];
        if (c == '.') {
            if (seen_dot || !seen_digit) return std::nullopt;
            seen_dot = true;
            continue;
        }
        if (!std::isdigit(static_cast<unsigned char>(c))) return std::nullopt;
        seen_digit = true;
        if (seen_dot) {
            if (scale == Fixed::kMaxScale) return std::nullopt;
            ++scale;
        }
        mant = mant * 10 + (c - '0');
        if (mant >= kMantissaLimit) return std::nullopt;
    }
    if (!seen_digit || (seen_dot && scale == 0)) return std::nullopt;
    return Fixed{neg ? -mant : mant, scale};
}

std::uint64_t div_round_half_even(std::uint64_t num, std::uint64_t den) {
    std::uint64_t q = num / den;
    std::uint64_t r = num % den;
    if (r * 2 > den) return q + 1;
    if (r * 2 < den) return q;
    return q + (q & 1);
}

Conf4 conf_mul(Conf4 a, Conf4 b) {
    return static_cast<Conf4>(div_round_half_even(
        static_cast<std::uint64_t>(a) * b, kConfOne));
}

std::string conf_str(Conf4 c) {
    std::string frac = std::to_string(c % kConfOne);
    return std::to_string(c / kConfOne) + "." +
           std::string(4 - frac.size(), '0') + frac;
}

}  // namespace mpu
