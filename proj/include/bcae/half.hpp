#pragma once

#include <cstdint>
#include <cstring>

namespace bcae {

// IEEE 754 binary16 conversion. Down-conversion rounds to nearest-even and
// saturates at +-65504 instead of producing infinities: an encoder output
// past the half range is a training-health problem, not a reason to corrupt
// the payload. NaN is preserved as a quiet NaN.
inline std::uint16_t float_to_half(float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    const std::uint16_t sign = static_cast<std::uint16_t>((bits >> 16) & 0x8000u);
    const std::uint32_t mag = bits & 0x7fffffffu;

    if (mag > 0x7f800000u) return static_cast<std::uint16_t>(sign | 0x7e00u);  // NaN
    // >= 65520 would round up to infinity under RNE; saturate to max finite.
    if (mag >= 0x477ff000u) return static_cast<std::uint16_t>(sign | 0x7bffu);

    const std::int32_t exp = static_cast<std::int32_t>((mag >> 23) & 0xff) - 127 + 15;
    std::uint32_t mant = mag & 0x7fffffu;

    if (exp <= 0) {
        if (exp < -10) return sign;  // underflows to signed zero
        mant |= 0x800000u;
        const int shift = 14 - exp;  // 14..24
        std::uint32_t half_ulp = 1u << (shift - 1);
        std::uint32_t rounded = mant >> shift;
        std::uint32_t rem = mant & ((1u << shift) - 1);
        if (rem > half_ulp || (rem == half_ulp && (rounded & 1u))) ++rounded;
        return static_cast<std::uint16_t>(sign | rounded);
    }

    std::uint16_t h = static_cast<std::uint16_t>(sign | (exp << 10) | (mant >> 13));
    const std::uint32_t rem = mant & 0x1fffu;
    if (rem > 0x1000u || (rem == 0x1000u && (h & 1u))) ++h;  // cannot overflow: saturated above
    return h;
}

inline float half_to_float(std::uint16_t h) {
    const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
    const std::uint32_t exp = (h >> 10) & 0x1fu;
    const std::uint32_t mant = h & 0x3ffu;

    std::uint32_t bits;
    if (exp == 0) {
        if (mant == 0) {
            bits = sign;
        } else {
            // renormalize subnormal
            int e = -1;
            std::uint32_t m = mant;
            do {
                m <<= 1;
                ++e;
            } while ((m & 0x400u) == 0);
            bits = sign | ((127 - 15 - e) << 23) | ((m & 0x3ffu) << 13);
        }
    } else if (exp == 31) {
        bits = sign | 0x7f800000u | (mant << 13);
    } else {
        bits = sign | ((exp - 15 + 127) << 23) | (mant << 13);
    }
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

}  // namespace bcae
