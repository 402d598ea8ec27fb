#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "bcae/network.hpp"
#include "bcae/rng.hpp"

using namespace bcae;

namespace {

void randomize(Tensor& t, Rng& rng, double lo = -1.0, double hi = 1.0) {
    for (auto& v : t.vec()) v = static_cast<float>(rng.uniform(lo, hi));
}

double dot(const Tensor& a, const Tensor& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += static_cast<double>(a.vec()[i]) * b.vec()[i];
    }
    return acc;
}

double dot(const std::vector<float>& a, const std::vector<float>& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
    return acc;
}

}  // namespace

TEST_CASE("conv shape oracle anchors") {
    LayerSpec sp;
    sp.kernel = {4, 1, 1};
    sp.stride = {2, 1, 1};
    sp.padding = {2, 0, 0};
    CHECK(conv_output_shape({192, 1, 1}, sp).d0 == 97);

    LayerSpec keep;
    keep.kernel = {3, 3, 3};
    keep.stride = {1, 1, 1};
    keep.padding = {1, 1, 1};
    CHECK(conv_output_shape({16, 16, 16}, keep) == Dims3{16, 16, 16});

    LayerSpec big;
    big.kernel = {9, 9, 9};
    CHECK_THROWS_AS(conv_output_shape({4, 4, 4}, big), shape_error);
    try {
        conv_output_shape({4, 4, 4}, big);
    } catch (const shape_error& e) {
        CHECK(std::string(e.what()).find("azimuthal") != std::string::npos);
    }
}

TEST_CASE("deconv shape oracle anchors") {
    LayerSpec sp;
    sp.kind = LayerKind::deconv;
    sp.kernel = {3, 3, 3};
    sp.stride = {2, 2, 1};
    sp.padding = {1, 1, 1};
    CHECK(deconv_output_shape({13, 13, 16}, sp).d0 == 25);

    LayerSpec keep;
    keep.kind = LayerKind::deconv;
    keep.kernel = {3, 3, 3};
    keep.stride = {1, 1, 1};
    keep.padding = {1, 1, 1};
    CHECK(deconv_output_shape({16, 16, 16}, keep) == Dims3{16, 16, 16});
}

TEST_CASE("canonical encoder/decoder trace closes on the section shape") {
    ModelBundle m = build_model(NetworkConfig::canonical(), {192, 249, 16}, VariantKind::bcae, 1);

    CHECK(m.encoder.blocks[0].out_shape() == Dims3{97, 125, 16});
    CHECK(m.encoder.blocks[1].out_shape() == Dims3{49, 63, 16});
    CHECK(m.encoder.blocks[2].out_shape() == Dims3{25, 32, 16});
    CHECK(m.encoder.blocks[3].out_shape() == Dims3{13, 17, 16});
    CHECK(m.latent_spatial() == Dims3{13, 17, 16});
    CHECK(m.latent_channels() == 8);

    CHECK(m.decoder_r.blocks[0].out_shape() == Dims3{25, 32, 16});
    CHECK(m.decoder_r.blocks[1].out_shape() == Dims3{49, 63, 16});
    CHECK(m.decoder_r.blocks[2].out_shape() == Dims3{97, 125, 16});
    CHECK(m.decoder_r.head.out_shape() == Dims3{192, 249, 16});

    // at the canonical shape every derived deconv output padding is zero
    for (const auto& block : m.decoder_r.blocks) {
        CHECK(block.main1.spec.output_padding == Dims3{0, 0, 0});
    }
    CHECK(m.decoder_r.head.spec.output_padding == Dims3{0, 0, 0});
}

TEST_CASE("desk-scale build closes via derived output padding") {
    ModelBundle m = build_model(NetworkConfig::canonical(), {48, 64, 16}, VariantKind::bcae, 1);
    CHECK(m.decoder_s.head.out_shape() == Dims3{48, 64, 16});
    CHECK(m.decoder_r.head.out_shape() == Dims3{48, 64, 16});
    bool any_nonzero = false;
    for (const auto& block : m.decoder_r.blocks) {
        any_nonzero |= !(block.main1.spec.output_padding == Dims3{0, 0, 0});
    }
    any_nonzero |= !(m.decoder_r.head.spec.output_padding == Dims3{0, 0, 0});
    CHECK(any_nonzero);  // 64 columns cannot close with all-zero output padding
}

TEST_CASE("builds are deterministic in the seed") {
    const NetworkConfig cfg = NetworkConfig::canonical();
    ModelBundle a = build_model(cfg, {48, 64, 16}, VariantKind::bcae, 7);
    ModelBundle b = build_model(cfg, {48, 64, 16}, VariantKind::bcae, 7);
    ModelBundle c = build_model(cfg, {48, 64, 16}, VariantKind::bcae, 8);
    CHECK(a.param_count() == b.param_count());
    CHECK(a.model_hash() == b.model_hash());
    CHECK(a.model_hash() != c.model_hash());
}

TEST_CASE("activation anchors") {
    Tensor x(1, {1, 1, 2});
    x.vec() = {-1.0f, 2.0f};
    Tensor y = leaky_forward(x, 0.1);
    CHECK(y.vec()[0] == doctest::Approx(-0.1f));
    CHECK(y.vec()[1] == 2.0f);

    Tensor r = relu_forward(x);
    CHECK(r.vec()[0] == 0.0f);
    CHECK(r.vec()[1] == 2.0f);
}

TEST_CASE("instance normalization standardizes each channel") {
    Rng rng(21);
    Tensor x(3, {8, 9, 10});
    randomize(x, rng, -3.0, 7.0);
    InstanceNorm norm;
    norm.init(3, 1e-5);
    Tensor y = norm.forward(x, false);
    const std::size_t n = y.channel_stride();
    for (int c = 0; c < 3; ++c) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += y.vec()[c * n + i];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = y.vec()[c * n + i] - mean;
            var += d * d;
        }
        var /= static_cast<double>(n);
        CHECK(std::abs(mean) < 1e-5);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
    }
}

TEST_CASE("conv layer satisfies the adjoint identity and weight-grad identity") {
    Rng rng(22);
    for (LayerKind kind : {LayerKind::conv, LayerKind::deconv}) {
        ConvLayer layer;
        layer.spec.kind = kind;
        layer.spec.kernel = {4, 5, 3};
        layer.spec.stride = {2, 2, 1};
        layer.spec.padding = symmetric_padding(layer.spec.kernel);
        layer.spec.in_channels = 3;
        layer.spec.out_channels = 2;
        layer.bind({10, 11, 6});
        layer.init_params(rng);
        for (auto& v : layer.b) v = 0.0f;  // adjoint identity is for the linear part

        Tensor x(3, {10, 11, 6});
        randomize(x, rng);
        Tensor y = layer.forward(x, true);
        Tensor gy = Tensor::zeros_like(y);
        randomize(gy, rng);

        layer.zero_grad();
        Tensor gx = layer.backward(gy);

        // <gy, A x> == <A^T gy, x>
        const double lhs = dot(gy, y);
        const double rhs = dot(gx, x);
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-3));

        // bilinearity in the weights: <gy, y> == <gw, w> when bias is zero
        const double wside = dot(layer.gw, layer.w);
        CHECK(lhs == doctest::Approx(wside).epsilon(1e-3));

        // bias gradient is the plain sum of gy per output channel
        double gb0 = 0.0;
        for (std::size_t i = 0; i < gy.channel_stride(); ++i) gb0 += gy.vec()[i];
        CHECK(layer.gb[0] == doctest::Approx(gb0).epsilon(1e-3));
    }
}

TEST_CASE("instance norm backward matches a directional derivative") {
    Rng rng(23);
    Tensor x(2, {4, 5, 3});
    randomize(x, rng, -2.0, 2.0);
    Tensor dir = Tensor::zeros_like(x);
    randomize(dir, rng);
    Tensor probe = Tensor::zeros_like(x);
    randomize(probe, rng);

    InstanceNorm norm;
    norm.init(2, 1e-5);
    auto loss_at = [&](double t) {
        Tensor xt = x;
        for (std::size_t i = 0; i < xt.size(); ++i) {
            xt.vec()[i] += static_cast<float>(t * dir.vec()[i]);
        }
        InstanceNorm n2;
        n2.init(2, 1e-5);
        Tensor y = n2.forward(xt, false);
        return dot(y, probe);
    };

    norm.forward(x, true);
    Tensor gx = norm.backward(probe);
    const double analytic = dot(gx, dir);
    const double eps = 1e-3;
    const double fd = (loss_at(eps) - loss_at(-eps)) / (2 * eps);
    CHECK(analytic == doctest::Approx(fd).epsilon(2e-2));
}

TEST_CASE("resblock with zero parameters maps to zero") {
    ResBlockSpec spec{LayerKind::conv, {3, 3, 3}, {2, 2, 1}, 2, 4};
    ResBlock block;
    block.build(spec, {8, 9, 6}, 0.1, 1e-5);
    Rng rng(24);
    block.init_params(rng);
    for (auto* layer : {&block.main1, &block.main2, &block.side1}) {
        std::fill(layer->w.begin(), layer->w.end(), 0.0f);
        std::fill(layer->b.begin(), layer->b.end(), 0.0f);
    }
    Tensor x(2, {8, 9, 6});
    randomize(x, rng);
    Tensor y = block.forward(x, false);
    for (float v : y.vec()) REQUIRE(v == 0.0f);
}

TEST_CASE("resblock halves the strided axes per the conv oracle") {
    ResBlockSpec spec{LayerKind::conv, {3, 3, 3}, {2, 2, 1}, 1, 4};
    ResBlock block;
    block.build(spec, {17, 33, 16}, 0.1, 1e-5);
    LayerSpec first;
    first.kernel = spec.kernel;
    first.stride = spec.stride;
    first.padding = symmetric_padding(spec.kernel);
    first.in_channels = 1;
    first.out_channels = 4;
    CHECK(block.out_shape() == conv_output_shape({17, 33, 16}, first));
    CHECK(block.main1.out_shape() == block.side1.out_shape());
}

TEST_CASE("encode and decode honor the contracted shapes and ranges") {
    ModelBundle m = build_model(NetworkConfig::canonical(), {48, 64, 16},
                                VariantKind::bcae_wo_transform, 3);
    Tensor x(1, {48, 64, 16});
    Rng rng(25);
    randomize(x, rng, 0.0, 1023.0);

    Tensor latent = m.encode(x);
    CHECK(latent.channels() == 8);
    DecodeResult out = m.decode(latent);
    CHECK(out.seg.spatial() == Dims3{48, 64, 16});
    CHECK(out.reg.spatial() == Dims3{48, 64, 16});
    for (float v : out.seg.vec()) {
        REQUIRE(v > 0.0f);
        REQUIRE(v < 1.0f);
    }
    for (float v : out.reg.vec()) REQUIRE(v >= 0.0f);  // clamped head

    // purity: repeated encode agrees bitwise
    Tensor latent2 = m.encode(x);
    CHECK(latent.vec() == latent2.vec());

    // zero input stays finite through a freshly built model
    Tensor zero(1, {48, 64, 16});
    CHECK(all_finite(m.encode(zero)));
}

TEST_CASE("gradients exist and are finite on a downscaled build") {
    ModelBundle m = build_model(NetworkConfig::canonical(), {16, 17, 16}, VariantKind::bcae, 5);
    Tensor x(1, {16, 17, 16});
    Rng rng(26);
    randomize(x, rng, 0.0, 1023.0);

    Tensor latent = m.encode(x, true);
    DecodeResult out = m.decode(latent, true);

    Tensor g_seg = Tensor::zeros_like(out.seg);
    Tensor g_reg = Tensor::zeros_like(out.reg);
    randomize(g_seg, rng, -1e-3, 1e-3);
    randomize(g_reg, rng, -1e-3, 1e-3);

    m.zero_grad();
    Tensor gl = m.decoder_s.backward(g_seg);
    Tensor gl2 = m.decoder_r.backward(g_reg);
    for (std::size_t i = 0; i < gl.size(); ++i) gl.vec()[i] += gl2.vec()[i];
    m.encoder.backward(gl);

    for (auto& p : m.named_params()) {
        for (float v : *p.grad) REQUIRE(std::isfinite(v));
    }
}

TEST_CASE("weight container round trips bitwise") {
    ModelBundle m = build_model(NetworkConfig::canonical(), {48, 64, 16}, VariantKind::cae, 9);
    std::ostringstream os(std::ios::binary);
    m.save_weights(os);
    std::istringstream is(os.str(), std::ios::binary);
    ModelBundle back = ModelBundle::load_weights(is, "roundtrip");
    CHECK(back.model_hash() == m.model_hash());
    CHECK(back.variant == VariantKind::cae);
    CHECK(back.param_count() == m.param_count());
}

TEST_CASE("config json round trips") {
    const NetworkConfig cfg = NetworkConfig::canonical();
    const NetworkConfig back = NetworkConfig::from_json(cfg.to_json());
    CHECK(back.to_json() == cfg.to_json());
    CHECK(back.hash() == cfg.hash());
}

TEST_CASE("variant names round trip") {
    for (VariantKind v :
         {VariantKind::bcae, VariantKind::bcae_wo_transform, VariantKind::cae}) {
        CHECK(variant_from_name(variant_name(v)) == v);
    }
    CHECK_THROWS_AS(variant_from_name("nope"), format_error);
}
