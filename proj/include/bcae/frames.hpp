#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <utility>
#include <vector>

#include "bcae/common.hpp"
#include "bcae/tensor.hpp"

namespace bcae {

// One 3D grid of ADC counts with axes (azimuthal, horizontal, radial),
// row-major. Values are 10-bit counts stored as u16. Two shapes matter:
// the full outer-layer readout frame and the section that is the unit of
// compression.
inline constexpr Dims3 kFullFrameShape{2304, 498, 16};
inline constexpr Dims3 kSectionShape{192, 249, 16};
inline constexpr int kAdcMax = 1023;
inline constexpr int kZeroSuppressionThreshold = 64;
inline constexpr int kAzimuthalSections = 12;
inline constexpr int kHorizontalHalves = 2;

struct Frame {
    Dims3 shape{};
    std::vector<std::uint16_t> values;  // row-major (a, h, r)

    Frame() = default;
    explicit Frame(Dims3 s) : shape(s), values(s.volume(), 0) {}

    std::size_t size() const { return values.size(); }

    std::uint16_t& at(int a, int h, int r) {
        return values[(static_cast<std::size_t>(a) * shape.d1 + h) * shape.d2 + r];
    }
    std::uint16_t at(int a, int h, int r) const {
        return values[(static_cast<std::size_t>(a) * shape.d1 + h) * shape.d2 + r];
    }

    bool operator==(const Frame&) const = default;
};

// Throws shape_error with a dimension report when the frame is not the
// expected shape.
void require_shape(const Frame& f, Dims3 expected, const char* what);

// Splits a full frame into 12 azimuthal blocks of 192 x 2 horizontal halves
// of 249. Canonical section order is azimuth-major, then half:
// index = azimuth_block * 2 + half.
std::vector<Frame> section_frame(const Frame& full);

// Exact inverse of section_frame; the 24 sections must be in canonical order.
Frame assemble_frame(const std::vector<Frame>& sections);

// Values <= threshold become 0 (strict survival above threshold keeps the
// value-transform domain positive). Idempotent.
void zero_suppress(Frame& f, int threshold = kZeroSuppressionThreshold);

// Exact nonzero-voxel fraction, count(v > 0) / M.
double nonzero_fraction(const Frame& f);

struct SyntheticConfig {
    Dims3 shape = kSectionShape;
    int n_tracks = 0;  // 0 = derive from target_occupancy and frame volume
    double amplitude_lo = 65.0;  // ADC units, log-uniform draw range
    double amplitude_hi = 1023.0;
    double deposit_width = 1.1;  // Gaussian sigma per axis, voxels
    double target_occupancy = 0.10;
    std::uint64_t seed = 0;
};

// Deterministic synthetic section: Gaussian charge deposits along random
// straight or gently curved tracks, quantized, zero-suppressed and clamped
// to the 10-bit range. The achieved nonzero fraction lands within +-50%
// (relative) of target_occupancy or the call fails after 10 attempts with
// the achieved occupancy in the message.
Frame generate_synthetic_frame(const SyntheticConfig& config);

// Binary frame file, little-endian:
//   "TPCF" | u16 version=1 | u8 dtype (0 = u16) | u8 ndim=3 | 3x u32 dims |
//   row-major u16 payload.
void write_frame(const Frame& f, std::ostream& os);
void write_frame(const Frame& f, const std::filesystem::path& path);
Frame read_frame(std::istream& is, const std::string& source = "stream");
Frame read_frame(const std::filesystem::path& path);

// Frame <-> network tensor (single channel, raw counts as float; the network
// consumes unnormalized ADC values).
Tensor frame_to_tensor(const Frame& f);
Frame tensor_to_frame(const Tensor& t);  // rounds and clamps to [0, kAdcMax]

}  // namespace bcae
