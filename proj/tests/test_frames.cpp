#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "bcae/frames.hpp"
#include "bcae/rng.hpp"

using namespace bcae;

namespace {

Frame random_full_frame(std::uint64_t seed) {
    Frame f(kFullFrameShape);
    Rng rng(seed);
    for (auto& v : f.values) v = static_cast<std::uint16_t>(rng.below(1024));
    return f;
}

std::uint64_t frame_checksum(const Frame& f) {
    return fnv1a64(f.values.data(), f.values.size() * sizeof(std::uint16_t));
}

std::filesystem::path temp_path(const char* name) {
    return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("sectioning produces 24 canonical sections") {
    Frame full(kFullFrameShape);
    auto sections = section_frame(full);
    REQUIRE(sections.size() == 24);
    for (const auto& s : sections) CHECK(s.shape == kSectionShape);
}

TEST_CASE("sectioning a zero frame yields zero sections") {
    Frame full(kFullFrameShape);
    for (const auto& s : section_frame(full)) {
        CHECK(nonzero_fraction(s) == 0.0);
    }
}

TEST_CASE("assemble inverts sectioning on random frames") {
    for (std::uint64_t seed : {11ull, 12ull}) {
        Frame full = random_full_frame(seed);
        Frame back = assemble_frame(section_frame(full));
        CHECK(back == full);
    }
}

TEST_CASE("sections tile the full frame: disjoint and covering") {
    // Mark each full-frame voxel with its section index and check every
    // section sees only its own mark; together with the exact round trip this
    // pins the partition property.
    Frame full(kFullFrameShape);
    {
        int idx = 0;
        for (int block = 0; block < kAzimuthalSections; ++block) {
            for (int half = 0; half < kHorizontalHalves; ++half, ++idx) {
                for (int a = block * 192; a < (block + 1) * 192; ++a) {
                    for (int h = half * 249; h < (half + 1) * 249; ++h) {
                        for (int r = 0; r < 16; ++r) full.at(a, h, r) = static_cast<std::uint16_t>(idx);
                    }
                }
            }
        }
    }
    auto sections = section_frame(full);
    for (std::size_t i = 0; i < sections.size(); ++i) {
        for (auto v : sections[i].values) REQUIRE(v == i);
    }
}

TEST_CASE("permuted section order is detectable") {
    Frame full = random_full_frame(99);
    auto sections = section_frame(full);
    std::swap(sections[0], sections[5]);
    Frame back = assemble_frame(sections);
    CHECK(frame_checksum(back) != frame_checksum(full));
}

TEST_CASE("sectioning rejects wrong shapes with a dimension report") {
    Frame bad(Dims3{10, 10, 10});
    CHECK_THROWS_AS(section_frame(bad), shape_error);
    try {
        section_frame(bad);
    } catch (const shape_error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("(2304,498,16)") != std::string::npos);
        CHECK(msg.find("(10,10,10)") != std::string::npos);
    }
    std::vector<Frame> not_enough(3, Frame(kSectionShape));
    CHECK_THROWS_AS(assemble_frame(not_enough), shape_error);
}

TEST_CASE("zero suppression boundary") {
    Frame f(Dims3{1, 1, 4});
    f.values = {63, 64, 65, 1023};
    zero_suppress(f);
    CHECK(f.values[0] == 0);
    CHECK(f.values[1] == 0);  // the transform domain needs v - 64 >= 1
    CHECK(f.values[2] == 65);
    CHECK(f.values[3] == 1023);
}

TEST_CASE("zero suppression is idempotent") {
    Frame f(Dims3{4, 4, 4});
    Rng rng(7);
    for (auto& v : f.values) v = static_cast<std::uint16_t>(rng.below(1024));
    Frame once = f;
    zero_suppress(once);
    Frame twice = once;
    zero_suppress(twice);
    CHECK(once == twice);
}

TEST_CASE("nonzero fraction is an exact count ratio") {
    Frame f(Dims3{2, 2, 2});
    f.values = {0, 100, 0, 200, 0, 0, 300, 0};
    CHECK(nonzero_fraction(f) == doctest::Approx(3.0 / 8.0).epsilon(0));
}

TEST_CASE("synthetic generator is deterministic per seed") {
    SyntheticConfig cfg;
    cfg.shape = {48, 64, 16};
    cfg.seed = 42;
    Frame a = generate_synthetic_frame(cfg);
    Frame b = generate_synthetic_frame(cfg);
    CHECK(a == b);
    cfg.seed = 43;
    Frame c = generate_synthetic_frame(cfg);
    CHECK(a != c);
}

TEST_CASE("synthetic generator hits the occupancy window") {
    // 100 full-size sections at the default 10% target must land in
    // [0.05, 0.15]; the generator enforces the +-50% envelope internally.
    SyntheticConfig cfg;
    cfg.target_occupancy = 0.10;
    for (int i = 0; i < 100; ++i) {
        cfg.seed = 1000 + i;
        Frame f = generate_synthetic_frame(cfg);
        const double occ = nonzero_fraction(f);
        REQUIRE(occ >= 0.05);
        REQUIRE(occ <= 0.15);
    }
}

TEST_CASE("synthetic values are zero or in the retained ADC band") {
    SyntheticConfig cfg;
    cfg.shape = {48, 64, 16};
    cfg.seed = 5;
    Frame f = generate_synthetic_frame(cfg);
    for (auto v : f.values) {
        const bool ok = v == 0 || (v >= 65 && v <= 1023);
        REQUIRE(ok);
    }
}

TEST_CASE("frame file round trip is bit exact") {
    SyntheticConfig cfg;
    cfg.shape = {48, 64, 16};
    cfg.seed = 9;
    Frame f = generate_synthetic_frame(cfg);
    const auto p = temp_path("bcae_test_frame.tpcf");
    write_frame(f, p);
    Frame back = read_frame(p);
    CHECK(back == f);
    std::filesystem::remove(p);
}

TEST_CASE("truncated frame file reports a parse error, not a crash") {
    Frame f(Dims3{4, 4, 4});
    std::ostringstream os(std::ios::binary);
    write_frame(f, os);
    std::string data = os.str();
    data.resize(data.size() / 2);
    std::istringstream is(data, std::ios::binary);
    CHECK_THROWS_AS(read_frame(is, "truncated"), format_error);
}

TEST_CASE("frame header with zero dims is rejected") {
    std::ostringstream os(std::ios::binary);
    os.write("TPCF", 4);
    write_u16le(os, 1);
    write_u8(os, 0);
    write_u8(os, 3);
    for (int i = 0; i < 3; ++i) write_u32le(os, 0);
    std::istringstream is(os.str(), std::ios::binary);
    CHECK_THROWS_AS(read_frame(is, "zero-dims"), format_error);
}

TEST_CASE("bad magic reports the byte offset") {
    std::istringstream is("NOPE....................", std::ios::binary);
    try {
        read_frame(is, "bad-magic");
        FAIL("expected format_error");
    } catch (const format_error& e) {
        CHECK(std::string(e.what()).find("offset 0") != std::string::npos);
    }
}

TEST_CASE("frame/tensor conversion rounds and clamps") {
    Frame f(Dims3{1, 1, 3});
    f.values = {0, 100, 1023};
    Tensor t = frame_to_tensor(f);
    CHECK(t.channels() == 1);
    CHECK(t.vec()[1] == 100.0f);
    t.vec()[0] = -5.2f;
    t.vec()[1] = 99.6f;
    t.vec()[2] = 2000.0f;
    Frame back = tensor_to_frame(t);
    CHECK(back.values[0] == 0);
    CHECK(back.values[1] == 100);
    CHECK(back.values[2] == 1023);
}
