#include "bcae/frames.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "bcae/rng.hpp"

namespace bcae {

void require_shape(const Frame& f, Dims3 expected, const char* what) {
    if (f.shape != expected || f.values.size() != expected.volume()) {
        throw shape_error(std::string(what) + ": expected shape " + expected.str() + ", got " +
                          f.shape.str() + " with " + std::to_string(f.values.size()) +
                          " values");
    }
}

std::vector<Frame> section_frame(const Frame& full) {
    require_shape(full, kFullFrameShape, "section_frame");
    const int sa = kFullFrameShape.d0 / kAzimuthalSections;  // 192
    const int sh = kFullFrameShape.d1 / kHorizontalHalves;   // 249
    const int r = kFullFrameShape.d2;

    std::vector<Frame> out;
    out.reserve(kAzimuthalSections * kHorizontalHalves);
    for (int block = 0; block < kAzimuthalSections; ++block) {
        for (int half = 0; half < kHorizontalHalves; ++half) {
            Frame s(Dims3{sa, sh, r});
            for (int a = 0; a < sa; ++a) {
                const std::uint16_t* src = &full.values[(static_cast<std::size_t>(block * sa + a) *
                                                             kFullFrameShape.d1 +
                                                         half * sh) *
                                                        r];
                std::copy(src, src + static_cast<std::size_t>(sh) * r,
                          &s.values[static_cast<std::size_t>(a) * sh * r]);
            }
            out.push_back(std::move(s));
        }
    }
    return out;
}

Frame assemble_frame(const std::vector<Frame>& sections) {
    const int expected = kAzimuthalSections * kHorizontalHalves;
    if (static_cast<int>(sections.size()) != expected) {
        throw shape_error("assemble_frame: expected " + std::to_string(expected) +
                          " sections, got " + std::to_string(sections.size()));
    }
    for (const Frame& s : sections) require_shape(s, kSectionShape, "assemble_frame section");

    const int sa = kSectionShape.d0;
    const int sh = kSectionShape.d1;
    const int r = kSectionShape.d2;
    Frame full(kFullFrameShape);
    for (int block = 0; block < kAzimuthalSections; ++block) {
        for (int half = 0; half < kHorizontalHalves; ++half) {
            const Frame& s = sections[static_cast<std::size_t>(block) * kHorizontalHalves + half];
            for (int a = 0; a < sa; ++a) {
                std::uint16_t* dst = &full.values[(static_cast<std::size_t>(block * sa + a) *
                                                       kFullFrameShape.d1 +
                                                   half * sh) *
                                                  r];
                std::copy(&s.values[static_cast<std::size_t>(a) * sh * r],
                          &s.values[static_cast<std::size_t>(a + 1) * sh * r], dst);
            }
        }
    }
    return full;
}

void zero_suppress(Frame& f, int threshold) {
    for (auto& v : f.values) {
        if (v <= threshold) v = 0;
    }
}

double nonzero_fraction(const Frame& f) {
    std::size_t nz = 0;
    for (auto v : f.values) nz += (v > 0);
    return static_cast<double>(nz) / static_cast<double>(f.values.size());
}

namespace {

// Deposits one track into the float accumulation grid. Tracks run mostly in
// the (azimuthal, horizontal) plane with a shallow radial slope, optionally
// curved, which is enough to reproduce the sparsity, the suppression gap and
// the long amplitude tail that this codec family targets.
void deposit_track(std::vector<float>& grid, Dims3 dims, Rng& rng, double amp_lo, double amp_hi,
                   double sigma) {
    const double step = 0.5;
    const double amp = std::exp(rng.uniform(std::log(amp_lo), std::log(amp_hi)));
    // per-step amplitude such that the line-integrated transverse profile
    // peaks near `amp`
    const double step_amp = amp * step / (sigma * std::sqrt(2.0 * std::numbers::pi));

    double pa = rng.uniform(0.0, dims.d0);
    double ph = rng.uniform(0.0, dims.d1);
    double pr = rng.uniform(1.0, dims.d2 - 1.0);

    double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
    double da = std::cos(phi);
    double dh = std::sin(phi);
    double dr = rng.uniform(-0.15, 0.15);
    // half of the tracks curve in the bend plane
    const double curvature = rng.uniform() < 0.5 ? 0.0 : rng.uniform(-0.02, 0.02);

    const double mean_extent = 0.5 * (dims.d0 + dims.d1);
    const int n_steps = static_cast<int>(rng.uniform(0.5, 1.0) * mean_extent / step);
    const int reach = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);

    for (int t = 0; t < n_steps; ++t) {
        const double jitter = 0.8 + 0.4 * rng.uniform();
        const int ca = static_cast<int>(std::floor(pa));
        const int ch = static_cast<int>(std::floor(ph));
        const int cr = static_cast<int>(std::floor(pr));
        if (ca < -reach || ca >= dims.d0 + reach || ch < -reach || ch >= dims.d1 + reach ||
            cr < -reach || cr >= dims.d2 + reach) {
            break;  // left the volume
        }
        for (int a = std::max(0, ca - reach); a <= std::min(dims.d0 - 1, ca + reach); ++a) {
            for (int h = std::max(0, ch - reach); h <= std::min(dims.d1 - 1, ch + reach); ++h) {
                for (int r = std::max(0, cr - reach); r <= std::min(dims.d2 - 1, cr + reach);
                     ++r) {
                    const double d2 = (a - pa) * (a - pa) + (h - ph) * (h - ph) +
                                      (r - pr) * (r - pr);
                    grid[(static_cast<std::size_t>(a) * dims.d1 + h) * dims.d2 + r] +=
                        static_cast<float>(step_amp * jitter * std::exp(-d2 * inv2s2));
                }
            }
        }
        // advance, bending the planar direction
        if (curvature != 0.0) {
            const double rot = curvature * step;
            const double na = da * std::cos(rot) - dh * std::sin(rot);
            const double nh = da * std::sin(rot) + dh * std::cos(rot);
            da = na;
            dh = nh;
        }
        pa += da * step;
        ph += dh * step;
        pr += dr * step;
    }
}

Frame quantize_grid(const std::vector<float>& grid, Dims3 dims) {
    Frame f(dims);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const float v = std::round(grid[i]);
        f.values[i] = static_cast<std::uint16_t>(std::clamp(v, 0.0f, static_cast<float>(kAdcMax)));
    }
    zero_suppress(f);
    return f;
}

}  // namespace

Frame generate_synthetic_frame(const SyntheticConfig& config) {
    if (config.target_occupancy <= 0.0 || config.target_occupancy > 0.5) {
        throw format_error("generate_synthetic_frame: target_occupancy must be in (0, 0.5], got " +
                           std::to_string(config.target_occupancy));
    }
    if (config.shape.volume() == 0) {
        throw shape_error("generate_synthetic_frame: empty frame shape " + config.shape.str());
    }
    if (config.amplitude_lo < kZeroSuppressionThreshold + 1 ||
        config.amplitude_hi < config.amplitude_lo) {
        throw format_error("generate_synthetic_frame: amplitude range must lie in [65, ...]");
    }

    const std::size_t volume = config.shape.volume();
    // rough footprint of one track, used only to pick the starting count
    const double voxels_per_track =
        0.5 * (config.shape.d0 + config.shape.d1) * 3.0 * config.deposit_width * 3.0;
    int tracks = config.n_tracks > 0
                     ? config.n_tracks
                     : std::max(1, static_cast<int>(std::lround(
                                       config.target_occupancy * static_cast<double>(volume) /
                                       voxels_per_track)));
    if (tracks < 1) {
        throw format_error("generate_synthetic_frame: n_tracks must be >= 1");
    }

    double achieved = 0.0;
    for (int attempt = 0; attempt < 10; ++attempt) {
        Rng rng(derive_seed(config.seed, "synthetic-frame", static_cast<std::uint64_t>(attempt)));
        std::vector<float> grid(volume, 0.0f);
        for (int t = 0; t < tracks; ++t) {
            deposit_track(grid, config.shape, rng, config.amplitude_lo, config.amplitude_hi,
                          config.deposit_width);
        }
        Frame f = quantize_grid(grid, config.shape);
        achieved = nonzero_fraction(f);
        if (achieved >= 0.5 * config.target_occupancy && achieved <= 1.5 * config.target_occupancy) {
            return f;
        }
        // rescale the track count toward the target before retrying
        const double correction =
            std::clamp(config.target_occupancy / std::max(achieved, 1e-6), 0.25, 4.0);
        tracks = std::max(1, static_cast<int>(std::lround(tracks * correction)));
    }
    std::ostringstream msg;
    msg << "generate_synthetic_frame: could not reach occupancy " << config.target_occupancy
        << " within 10 attempts (achieved " << achieved << ")";
    throw format_error(msg.str());
}

void write_frame(const Frame& f, std::ostream& os) {
    os.write("TPCF", 4);
    write_u16le(os, 1);
    write_u8(os, 0);  // dtype u16
    write_u8(os, 3);  // ndim
    for (int i = 0; i < 3; ++i) write_u32le(os, static_cast<std::uint32_t>(f.shape[i]));
    for (std::uint16_t v : f.values) write_u16le(os, v);
    if (!os) throw io_error("write_frame: stream write failed");
}

void write_frame(const Frame& f, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("write_frame: cannot open " + path.string());
    write_frame(f, os);
}

Frame read_frame(std::istream& is, const std::string& source) {
    ByteReader r(is, source);
    r.expect_magic("TPCF", "frame file");
    const std::uint16_t version = r.u16("version");
    if (version != 1) {
        throw format_error(source + ": unsupported frame version " + std::to_string(version) +
                           " at byte offset 4");
    }
    const std::uint8_t dtype = r.u8("dtype");
    if (dtype != 0) {
        throw format_error(source + ": unsupported frame dtype code " + std::to_string(dtype) +
                           " at byte offset 6");
    }
    const std::uint8_t ndim = r.u8("ndim");
    if (ndim != 3) {
        throw format_error(source + ": expected 3 dims, got " + std::to_string(ndim) +
                           " at byte offset 7");
    }
    Dims3 dims;
    for (int i = 0; i < 3; ++i) {
        const std::uint32_t d = r.u32("dimension");
        if (d == 0 || d > (1u << 24)) {
            throw format_error(source + ": invalid dimension " + std::to_string(d) +
                               " at byte offset " + std::to_string(r.offset() - 4));
        }
        dims[i] = static_cast<int>(d);
    }
    Frame f(dims);
    for (std::size_t i = 0; i < f.values.size(); ++i) f.values[i] = r.u16("payload");
    return f;
}

Frame read_frame(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("read_frame: cannot open " + path.string());
    return read_frame(is, path.filename().string());
}

Tensor frame_to_tensor(const Frame& f) {
    Tensor t(1, f.shape);
    for (std::size_t i = 0; i < f.values.size(); ++i) {
        t.vec()[i] = static_cast<float>(f.values[i]);
    }
    return t;
}

Frame tensor_to_frame(const Tensor& t) {
    if (t.channels() != 1) {
        throw shape_error("tensor_to_frame: expected 1 channel, got " +
                          std::to_string(t.channels()));
    }
    Frame f(t.spatial());
    for (std::size_t i = 0; i < f.values.size(); ++i) {
        const float v = std::round(t.vec()[i]);
        f.values[i] = static_cast<std::uint16_t>(std::clamp(v, 0.0f, static_cast<float>(kAdcMax)));
    }
    return f;
}

}  // namespace bcae
