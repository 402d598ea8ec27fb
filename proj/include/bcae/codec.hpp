#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "bcae/frames.hpp"
#include "bcae/network.hpp"
#include "bcae/transform.hpp"

namespace bcae {

// Latent tensor stored at half precision; the compressed payload.
struct CodeBlock {
    std::array<std::uint32_t, 4> shape{};  // (channels, d0, d1, d2)
    Dims3 source_shape{};
    std::vector<std::uint16_t> half_values;

    std::size_t element_count() const {
        return static_cast<std::size_t>(shape[0]) * shape[1] * shape[2] * shape[3];
    }
};

// Versioned on-disk container, little-endian:
//   "BCAE" | u16 version=1 | u64 model hash | u8 dtype (1 = f16) |
//   3x u32 original dims | 4x u32 code dims | f32 default threshold |
//   row-major f16 payload.
struct CompressedContainer {
    std::uint16_t version = 1;
    std::uint64_t model_hash = 0;
    Dims3 original_shape{};
    std::array<std::uint32_t, 4> code_shape{};
    float default_threshold = 0.5f;
    std::vector<std::uint16_t> payload;

    bool operator==(const CompressedContainer&) const = default;

    std::size_t payload_bytes() const { return payload.size() * 2; }
    static std::size_t header_bytes() { return 4 + 2 + 8 + 1 + 12 + 16 + 4; }
};

void serialize_container(const CompressedContainer& c, std::ostream& os);
void serialize_container(const CompressedContainer& c, const std::filesystem::path& path);
CompressedContainer parse_container(std::istream& is, const std::string& source = "container");
CompressedContainer parse_container(const std::filesystem::path& path);

// Encode and downcast to half precision (round-to-nearest-even, saturating at
// the half-precision range). Deterministic for a fixed model and input.
CompressedContainer compress(ModelBundle& bundle, const Frame& frame,
                             float default_threshold = 0.5f);

// Upcast, decode, and combine the two heads at threshold h. The ADC-domain
// result rounds to integers and clamps to [0, 1023]; decompress_raw keeps the
// unrounded reconstruction for metric work.
Frame decompress(ModelBundle& bundle, const CompressedContainer& c, Threshold h);
std::vector<float> decompress_raw(ModelBundle& bundle, const CompressedContainer& c, Threshold h);

// Element-count arithmetic only; container header bytes are intentionally
// excluded (reported separately by the CLI).
double compression_ratio(std::span<const std::uint32_t> input_shape, int input_bits_per_element,
                         std::span<const std::uint32_t> code_shape, int code_bits_per_element);

// Ratio for the canonical section and code shapes at 16 bits each: 27.04.
double canonical_compression_ratio();

}  // namespace bcae
