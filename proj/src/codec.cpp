#include "bcae/codec.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "bcae/half.hpp"

namespace bcae {

void serialize_container(const CompressedContainer& c, std::ostream& os) {
    os.write("BCAE", 4);
    write_u16le(os, c.version);
    write_u64le(os, c.model_hash);
    write_u8(os, 1);  // dtype f16
    for (int i = 0; i < 3; ++i) write_u32le(os, static_cast<std::uint32_t>(c.original_shape[i]));
    for (auto d : c.code_shape) write_u32le(os, d);
    write_f32le(os, c.default_threshold);
    for (auto h : c.payload) write_u16le(os, h);
    if (!os) throw io_error("serialize_container: stream write failed");
}

void serialize_container(const CompressedContainer& c, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("serialize_container: cannot open " + path.string());
    serialize_container(c, os);
}

CompressedContainer parse_container(std::istream& is, const std::string& source) {
    ByteReader r(is, source);
    r.expect_magic("BCAE", "compressed container");
    CompressedContainer c;
    c.version = r.u16("version");
    if (c.version != 1) {
        throw format_error(source + ": unsupported container version " +
                           std::to_string(c.version) + " at byte offset 4");
    }
    c.model_hash = r.u64("model hash");
    const std::uint8_t dtype = r.u8("dtype");
    if (dtype != 1) {
        throw format_error(source + ": unsupported code dtype " + std::to_string(dtype) +
                           " at byte offset 14");
    }
    for (int i = 0; i < 3; ++i) {
        const std::uint32_t d = r.u32("original dim");
        if (d == 0) {
            throw format_error(source + ": zero original dimension at byte offset " +
                               std::to_string(r.offset() - 4));
        }
        c.original_shape[i] = static_cast<int>(d);
    }
    std::size_t count = 1;
    for (auto& d : c.code_shape) {
        d = r.u32("code dim");
        if (d == 0) {
            throw format_error(source + ": zero code dimension at byte offset " +
                               std::to_string(r.offset() - 4));
        }
        count *= d;
    }
    c.default_threshold = r.f32("default threshold");
    c.payload.resize(count);
    for (auto& h : c.payload) h = r.u16("payload");
    return c;
}

CompressedContainer parse_container(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("parse_container: cannot open " + path.string());
    return parse_container(is, path.filename().string());
}

CompressedContainer compress(ModelBundle& bundle, const Frame& frame, float default_threshold) {
    const Tensor latent = bundle.encode(frame_to_tensor(frame));
    CompressedContainer c;
    c.model_hash = bundle.model_hash();
    c.original_shape = frame.shape;
    c.code_shape = {static_cast<std::uint32_t>(latent.channels()),
                    static_cast<std::uint32_t>(latent.spatial().d0),
                    static_cast<std::uint32_t>(latent.spatial().d1),
                    static_cast<std::uint32_t>(latent.spatial().d2)};
    c.default_threshold = default_threshold;
    c.payload.resize(latent.size());
    for (std::size_t i = 0; i < latent.size(); ++i) {
        c.payload[i] = float_to_half(latent.vec()[i]);
    }
    return c;
}

namespace {

Tensor upcast_latent(ModelBundle& bundle, const CompressedContainer& c) {
    if (c.model_hash != bundle.model_hash()) {
        throw format_error("decompress: container model hash does not match the loaded model");
    }
    if (static_cast<int>(c.code_shape[0]) != bundle.latent_channels() ||
        static_cast<int>(c.code_shape[1]) != bundle.latent_spatial().d0 ||
        static_cast<int>(c.code_shape[2]) != bundle.latent_spatial().d1 ||
        static_cast<int>(c.code_shape[3]) != bundle.latent_spatial().d2) {
        throw shape_error("decompress: code shape does not match the model's latent shape");
    }
    Tensor latent(bundle.latent_channels(), bundle.latent_spatial());
    for (std::size_t i = 0; i < c.payload.size(); ++i) {
        latent.vec()[i] = half_to_float(c.payload[i]);
    }
    return latent;
}

}  // namespace

std::vector<float> decompress_raw(ModelBundle& bundle, const CompressedContainer& c, Threshold h) {
    Tensor latent = upcast_latent(bundle, c);
    DecodeResult d = bundle.decode(latent);
    std::vector<float> out(d.reg.size());
    if (bundle.variant == VariantKind::cae) {
        out.assign(d.reg.vec().begin(), d.reg.vec().end());  // head is already nonnegative
        return out;
    }
    std::span<const float> reg(d.reg.vec());
    std::span<const float> seg(d.seg.vec());
    if (bundle.variant == VariantKind::bcae) {
        combine_output<float>(reg, seg, h, out);
    } else {
        combine_output_without_transform<float>(reg, seg, h, out);
    }
    return out;
}

Frame decompress(ModelBundle& bundle, const CompressedContainer& c, Threshold h) {
    const std::vector<float> raw = decompress_raw(bundle, c, h);
    Frame f(c.original_shape);
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const float v = std::round(raw[i]);
        f.values[i] = static_cast<std::uint16_t>(std::clamp(v, 0.0f, static_cast<float>(kAdcMax)));
    }
    return f;
}

double compression_ratio(std::span<const std::uint32_t> input_shape, int input_bits_per_element,
                         std::span<const std::uint32_t> code_shape, int code_bits_per_element) {
    double in_bits = static_cast<double>(input_bits_per_element);
    for (auto d : input_shape) {
        if (d == 0) throw shape_error("compression_ratio: zero input dimension");
        in_bits *= static_cast<double>(d);
    }
    double code_bits = static_cast<double>(code_bits_per_element);
    for (auto d : code_shape) {
        if (d == 0) throw shape_error("compression_ratio: zero code dimension");
        code_bits *= static_cast<double>(d);
    }
    return in_bits / code_bits;
}

double canonical_compression_ratio() {
    const std::uint32_t in[] = {1, 192, 249, 16};
    const std::uint32_t code[] = {8, 13, 17, 16};
    return compression_ratio(in, 16, code, 16);
}

}  // namespace bcae
