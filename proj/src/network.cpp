#include "bcae/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace bcae {

namespace {

constexpr int ceil_div(int a, int b) { return a >= 0 ? (a + b - 1) / b : -(-a / b); }
constexpr int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

const char* axis_name(int i) { return i == 0 ? "azimuthal" : (i == 1 ? "horizontal" : "radial"); }

void check_geometry(const LayerSpec& sp) {
    for (int i = 0; i < 3; ++i) {
        if (sp.kernel[i] < 1 || sp.stride[i] < 1) {
            throw shape_error("layer geometry: kernel and stride must be >= 1 on axis " +
                              std::string(axis_name(i)));
        }
        if (sp.padding[i] < 0) throw shape_error("layer geometry: negative padding");
        if (sp.kind == LayerKind::deconv &&
            (sp.output_padding[i] < 0 || sp.output_padding[i] >= sp.stride[i])) {
            throw shape_error("layer geometry: output_padding must be in [0, stride) on axis " +
                              std::string(axis_name(i)));
        }
    }
    if (sp.in_channels < 1 || sp.out_channels < 1) {
        throw shape_error("layer geometry: channel counts must be >= 1");
    }
}

// Tap table for gather-style transposed access: for every index j on the
// dense (large) side, the (kernel offset, strided-side index) pairs that
// reference it.
struct AxisTaps {
    std::vector<int> offset;            // size large + 1
    std::vector<std::pair<int, int>> taps;  // (k, q)
};

AxisTaps make_adjoint_taps(int large, int strided, int K, int S, int P) {
    AxisTaps t;
    t.offset.resize(static_cast<std::size_t>(large) + 1, 0);
    for (int j = 0; j < large; ++j) {
        t.offset[j] = static_cast<int>(t.taps.size());
        for (int k = 0; k < K; ++k) {
            const int num = j + P - k;
            if (num < 0 || num % S != 0) continue;
            const int q = num / S;
            if (q >= 0 && q < strided) t.taps.emplace_back(k, q);
        }
    }
    t.offset[large] = static_cast<int>(t.taps.size());
    return t;
}

}  // namespace

Dims3 conv_output_shape(Dims3 in, const LayerSpec& layer) {
    check_geometry(layer);
    Dims3 out;
    for (int i = 0; i < 3; ++i) {
        const int n = (in[i] + 2 * layer.padding[i] - layer.kernel[i]) / layer.stride[i] + 1;
        if (in[i] < 1 || n < 1) {
            throw shape_error("conv_output_shape: non-positive extent on " +
                              std::string(axis_name(i)) + " axis: input " + in.str() +
                              ", kernel " + layer.kernel.str());
        }
        out[i] = n;
    }
    return out;
}

Dims3 deconv_output_shape(Dims3 in, const LayerSpec& layer) {
    check_geometry(layer);
    Dims3 out;
    for (int i = 0; i < 3; ++i) {
        const int n = (in[i] - 1) * layer.stride[i] - 2 * layer.padding[i] + layer.kernel[i] +
                      layer.output_padding[i];
        if (in[i] < 1 || n < 1) {
            throw shape_error("deconv_output_shape: non-positive extent on " +
                              std::string(axis_name(i)) + " axis: input " + in.str() +
                              ", kernel " + layer.kernel.str());
        }
        out[i] = n;
    }
    return out;
}

Dims3 symmetric_padding(Dims3 kernel) {
    return Dims3{kernel.d0 / 2, kernel.d1 / 2, kernel.d2 / 2};
}

const char* variant_name(VariantKind v) {
    switch (v) {
        case VariantKind::bcae: return "bcae";
        case VariantKind::bcae_wo_transform: return "bcaewot";
        case VariantKind::cae: return "cae";
    }
    return "?";
}

VariantKind variant_from_name(const std::string& name) {
    if (name == "bcae") return VariantKind::bcae;
    if (name == "bcaewot") return VariantKind::bcae_wo_transform;
    if (name == "cae") return VariantKind::cae;
    throw format_error("unknown model variant '" + name + "' (expected bcae|bcaewot|cae)");
}

// --- configuration ----------------------------------------------------------

NetworkConfig NetworkConfig::canonical() {
    NetworkConfig c;
    c.encoder_blocks = {
        {LayerKind::conv, {4, 5, 3}, {2, 2, 1}, 1, 8},
        {LayerKind::conv, {3, 3, 3}, {2, 2, 1}, 8, 16},
        {LayerKind::conv, {3, 3, 3}, {2, 2, 1}, 16, 32},
        {LayerKind::conv, {3, 4, 3}, {2, 2, 1}, 32, 32},
    };
    c.latent_channels = 8;
    c.decoder_blocks = {
        {LayerKind::deconv, {3, 4, 3}, {2, 2, 1}, 8, 8},
        {LayerKind::deconv, {3, 3, 3}, {2, 2, 1}, 8, 4},
        {LayerKind::deconv, {3, 3, 3}, {2, 2, 1}, 4, 2},
    };
    c.decoder_head_kernel = {4, 5, 3};
    c.decoder_head_stride = {2, 2, 1};
    return c;
}

void NetworkConfig::validate() const {
    if (encoder_blocks.empty() || decoder_blocks.empty()) {
        throw format_error("network config: encoder and decoder block tables must be nonempty");
    }
    for (std::size_t i = 1; i < encoder_blocks.size(); ++i) {
        if (encoder_blocks[i].in_channels != encoder_blocks[i - 1].out_channels) {
            throw format_error("network config: encoder channel chain broken at block " +
                               std::to_string(i + 1));
        }
    }
    if (decoder_blocks.front().in_channels != latent_channels) {
        throw format_error("network config: decoder input channels must equal latent channels");
    }
    for (std::size_t i = 1; i < decoder_blocks.size(); ++i) {
        if (decoder_blocks[i].in_channels != decoder_blocks[i - 1].out_channels) {
            throw format_error("network config: decoder channel chain broken at block " +
                               std::to_string(i + 1));
        }
    }
    if (latent_channels < 1) throw format_error("network config: latent_channels must be >= 1");
    if (leaky_slope <= 0.0 || leaky_slope >= 1.0) {
        throw format_error("network config: leaky slope must be in (0, 1)");
    }
    if (norm_eps <= 0.0) throw format_error("network config: norm eps must be positive");
}

namespace {

nlohmann::json dims_to_json(Dims3 d) { return nlohmann::json::array({d.d0, d.d1, d.d2}); }

Dims3 dims_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 3) throw format_error("config json: expected 3-element dims");
    return Dims3{j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
}

nlohmann::json block_to_json(const ResBlockSpec& b) {
    return nlohmann::json{{"kind", b.kind == LayerKind::conv ? "conv" : "deconv"},
                          {"kernel", dims_to_json(b.kernel)},
                          {"stride", dims_to_json(b.stride)},
                          {"in", b.in_channels},
                          {"out", b.out_channels}};
}

ResBlockSpec block_from_json(const nlohmann::json& j) {
    ResBlockSpec b;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "conv") {
        b.kind = LayerKind::conv;
    } else if (kind == "deconv") {
        b.kind = LayerKind::deconv;
    } else {
        throw format_error("config json: unknown layer kind '" + kind + "'");
    }
    b.kernel = dims_from_json(j.at("kernel"));
    b.stride = dims_from_json(j.at("stride"));
    b.in_channels = j.at("in").get<int>();
    b.out_channels = j.at("out").get<int>();
    return b;
}

}  // namespace

std::string NetworkConfig::to_json() const {
    nlohmann::json j;
    j["encoder_blocks"] = nlohmann::json::array();
    for (const auto& b : encoder_blocks) j["encoder_blocks"].push_back(block_to_json(b));
    j["latent_channels"] = latent_channels;
    j["decoder_blocks"] = nlohmann::json::array();
    for (const auto& b : decoder_blocks) j["decoder_blocks"].push_back(block_to_json(b));
    j["decoder_head_kernel"] = dims_to_json(decoder_head_kernel);
    j["decoder_head_stride"] = dims_to_json(decoder_head_stride);
    j["leaky_slope"] = leaky_slope;
    j["norm_eps"] = norm_eps;
    return j.dump();
}

NetworkConfig NetworkConfig::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw format_error(std::string("config json parse error: ") + e.what());
    }
    NetworkConfig c;
    c.encoder_blocks.clear();
    for (const auto& b : j.at("encoder_blocks")) c.encoder_blocks.push_back(block_from_json(b));
    c.latent_channels = j.at("latent_channels").get<int>();
    c.decoder_blocks.clear();
    for (const auto& b : j.at("decoder_blocks")) c.decoder_blocks.push_back(block_from_json(b));
    c.decoder_head_kernel = dims_from_json(j.at("decoder_head_kernel"));
    c.decoder_head_stride = dims_from_json(j.at("decoder_head_stride"));
    c.leaky_slope = j.at("leaky_slope").get<double>();
    c.norm_eps = j.at("norm_eps").get<double>();
    c.validate();
    return c;
}

std::uint64_t NetworkConfig::hash() const { return fnv1a64(to_json()); }

// --- convolution kernels -----------------------------------------------------

namespace {

// y[oc][o] = bias[oc] + sum_ic sum_k w[oc][ic][k] x[ic][o*s - p + k]
void conv_forward_kernel(const Tensor& x, const std::vector<float>& w,
                         const std::vector<float>& bias, const LayerSpec& sp, Tensor& y) {
    const int IC = sp.in_channels, OC = sp.out_channels;
    const Dims3 id = x.spatial(), od = y.spatial();
    const Dims3 K = sp.kernel, S = sp.stride, P = sp.padding;
    const std::size_t xcs = x.channel_stride(), ycs = y.channel_stride();
    const std::size_t kvol = K.volume();
    const float* xd = x.data();
    const float* wd = w.data();
    float* yd = y.data();

#pragma omp parallel for collapse(2) schedule(static)
    for (int oc = 0; oc < OC; ++oc) {
        for (int o0 = 0; o0 < od.d0; ++o0) {
            const int i0base = o0 * S.d0 - P.d0;
            const int k0lo = std::max(0, -i0base);
            const int k0hi = std::min(K.d0, id.d0 - i0base);
            for (int o1 = 0; o1 < od.d1; ++o1) {
                const int i1base = o1 * S.d1 - P.d1;
                const int k1lo = std::max(0, -i1base);
                const int k1hi = std::min(K.d1, id.d1 - i1base);
                float* yrow = yd + oc * ycs + (static_cast<std::size_t>(o0) * od.d1 + o1) * od.d2;
                for (int o2 = 0; o2 < od.d2; ++o2) yrow[o2] = bias[oc];
                for (int ic = 0; ic < IC; ++ic) {
                    const float* xch = xd + ic * xcs;
                    const float* wch = wd + (static_cast<std::size_t>(oc) * IC + ic) * kvol;
                    for (int k0 = k0lo; k0 < k0hi; ++k0) {
                        const float* xp0 =
                            xch + static_cast<std::size_t>(i0base + k0) * id.d1 * id.d2;
                        const float* wp0 = wch + static_cast<std::size_t>(k0) * K.d1 * K.d2;
                        for (int k1 = k1lo; k1 < k1hi; ++k1) {
                            const float* xrow = xp0 + static_cast<std::size_t>(i1base + k1) * id.d2;
                            const float* wrow = wp0 + static_cast<std::size_t>(k1) * K.d2;
                            for (int o2 = 0; o2 < od.d2; ++o2) {
                                const int i2base = o2 * S.d2 - P.d2;
                                const int k2lo = std::max(0, -i2base);
                                const int k2hi = std::min(K.d2, id.d2 - i2base);
                                float acc = 0.0f;
                                for (int k2 = k2lo; k2 < k2hi; ++k2) {
                                    acc += wrow[k2] * xrow[i2base + k2];
                                }
                                yrow[o2] += acc;
                            }
                        }
                    }
                }
            }
        }
    }
}

// r[c_dense][j] (+= bias) = sum_cs sum_(k,q) w[widx(cs, c_dense, k)] g[cs][q]
// Shared by the conv input-gradient (w indexed [cs][c_dense][k], no bias) and
// the deconv forward (w indexed [c_dense major? no: [cs][c_dense]...]) paths;
// the weight indexing difference is captured by strides.
void gather_adjoint_kernel(const Tensor& g, const std::vector<float>& w, const float* bias,
                           int dense_channels, int strided_channels, Dims3 dense_sp,
                           Dims3 strided_sp, Dims3 K, Dims3 S, Dims3 P,
                           std::size_t w_stride_dense, std::size_t w_stride_strided, Tensor& r) {
    const AxisTaps t0 = make_adjoint_taps(dense_sp.d0, strided_sp.d0, K.d0, S.d0, P.d0);
    const AxisTaps t1 = make_adjoint_taps(dense_sp.d1, strided_sp.d1, K.d1, S.d1, P.d1);
    const AxisTaps t2 = make_adjoint_taps(dense_sp.d2, strided_sp.d2, K.d2, S.d2, P.d2);
    const std::size_t gcs = g.channel_stride(), rcs = r.channel_stride();
    const float* gd = g.data();
    const float* wd = w.data();
    float* rd = r.data();

#pragma omp parallel for collapse(2) schedule(static)
    for (int dc = 0; dc < dense_channels; ++dc) {
        for (int j0 = 0; j0 < dense_sp.d0; ++j0) {
            for (int j1 = 0; j1 < dense_sp.d1; ++j1) {
                float* rrow =
                    rd + dc * rcs + (static_cast<std::size_t>(j0) * dense_sp.d1 + j1) * dense_sp.d2;
                for (int j2 = 0; j2 < dense_sp.d2; ++j2) rrow[j2] = bias ? bias[dc] : 0.0f;
                for (int sc = 0; sc < strided_channels; ++sc) {
                    const float* gch = gd + sc * gcs;
                    const float* wch = wd + w_stride_dense * dc + w_stride_strided * sc;
                    for (int a0 = t0.offset[j0]; a0 < t0.offset[j0 + 1]; ++a0) {
                        const auto [k0, q0] = t0.taps[a0];
                        for (int a1 = t1.offset[j1]; a1 < t1.offset[j1 + 1]; ++a1) {
                            const auto [k1, q1] = t1.taps[a1];
                            const float* grow =
                                gch + (static_cast<std::size_t>(q0) * strided_sp.d1 + q1) *
                                          strided_sp.d2;
                            const float* wrow =
                                wch + (static_cast<std::size_t>(k0) * K.d1 + k1) * K.d2;
                            for (int j2 = 0; j2 < dense_sp.d2; ++j2) {
                                float acc = 0.0f;
                                for (int a2 = t2.offset[j2]; a2 < t2.offset[j2 + 1]; ++a2) {
                                    const auto [k2, q2] = t2.taps[a2];
                                    acc += wrow[k2] * grow[q2];
                                }
                                rrow[j2] += acc;
                            }
                        }
                    }
                }
            }
        }
    }
}

// Valid strided-side index range [o_lo, o_hi) for a kernel offset k:
// dense index = o*s - p + k must land in [0, dense_extent).
inline std::pair<int, int> strided_range(int dense_extent, int strided_extent, int k, int s,
                                         int p) {
    int lo = std::max(0, ceil_div(p - k, s));
    int hi = std::min(strided_extent - 1, floor_div(dense_extent - 1 + p - k, s));
    return {lo, hi + 1};
}

// gw[oc][ic][k] += sum_o gy[oc][o] x[ic][o*s - p + k]; gb[oc] += sum gy[oc].
void conv_grad_params_kernel(const Tensor& x, const Tensor& gy, const LayerSpec& sp,
                             std::vector<float>& gw, std::vector<float>& gb) {
    const int IC = sp.in_channels, OC = sp.out_channels;
    const Dims3 id = x.spatial(), od = gy.spatial();
    const Dims3 K = sp.kernel, S = sp.stride, P = sp.padding;
    const std::size_t xcs = x.channel_stride(), ycs = gy.channel_stride();
    const std::size_t kvol = K.volume();
    const float* xd = x.data();
    const float* gd = gy.data();

#pragma omp parallel for schedule(static)
    for (int oc = 0; oc < OC; ++oc) {
        const float* gch = gd + oc * ycs;
        double bacc = 0.0;
        for (std::size_t i = 0; i < ycs; ++i) bacc += gch[i];
        gb[oc] += static_cast<float>(bacc);
        for (int ic = 0; ic < IC; ++ic) {
            const float* xch = xd + ic * xcs;
            float* gwch = gw.data() + (static_cast<std::size_t>(oc) * IC + ic) * kvol;
            for (int k0 = 0; k0 < K.d0; ++k0) {
                const auto [o0lo, o0hi] = strided_range(id.d0, od.d0, k0, S.d0, P.d0);
                for (int k1 = 0; k1 < K.d1; ++k1) {
                    const auto [o1lo, o1hi] = strided_range(id.d1, od.d1, k1, S.d1, P.d1);
                    for (int k2 = 0; k2 < K.d2; ++k2) {
                        const auto [o2lo, o2hi] = strided_range(id.d2, od.d2, k2, S.d2, P.d2);
                        double acc = 0.0;
                        for (int o0 = o0lo; o0 < o0hi; ++o0) {
                            const int i0 = o0 * S.d0 - P.d0 + k0;
                            const float* xp0 =
                                xch + static_cast<std::size_t>(i0) * id.d1 * id.d2;
                            const float* gp0 =
                                gch + static_cast<std::size_t>(o0) * od.d1 * od.d2;
                            for (int o1 = o1lo; o1 < o1hi; ++o1) {
                                const int i1 = o1 * S.d1 - P.d1 + k1;
                                const float* xrow = xp0 + static_cast<std::size_t>(i1) * id.d2;
                                const float* grow = gp0 + static_cast<std::size_t>(o1) * od.d2;
                                for (int o2 = o2lo; o2 < o2hi; ++o2) {
                                    acc += static_cast<double>(grow[o2]) *
                                           xrow[o2 * S.d2 - P.d2 + k2];
                                }
                            }
                        }
                        gwch[(static_cast<std::size_t>(k0) * K.d1 + k1) * K.d2 + k2] +=
                            static_cast<float>(acc);
                    }
                }
            }
        }
    }
}

// gw[ic][oc][k] += sum_i x[ic][i] gy[oc][i*s - p + k]; gb[oc] += sum gy[oc].
// (x on the strided side, gy on the dense side.)
void deconv_grad_params_kernel(const Tensor& x, const Tensor& gy, const LayerSpec& sp,
                               std::vector<float>& gw, std::vector<float>& gb) {
    const int IC = sp.in_channels, OC = sp.out_channels;
    const Dims3 id = x.spatial(), od = gy.spatial();
    const Dims3 K = sp.kernel, S = sp.stride, P = sp.padding;
    const std::size_t xcs = x.channel_stride(), ycs = gy.channel_stride();
    const std::size_t kvol = K.volume();
    const float* xd = x.data();
    const float* gd = gy.data();

#pragma omp parallel for schedule(static)
    for (int oc = 0; oc < OC; ++oc) {
        const float* gch = gd + oc * ycs;
        double bacc = 0.0;
        for (std::size_t i = 0; i < ycs; ++i) bacc += gch[i];
        gb[oc] += static_cast<float>(bacc);
        for (int ic = 0; ic < IC; ++ic) {
            const float* xch = xd + ic * xcs;
            float* gwch = gw.data() + (static_cast<std::size_t>(ic) * OC + oc) * kvol;
            for (int k0 = 0; k0 < K.d0; ++k0) {
                const auto [i0lo, i0hi] = strided_range(od.d0, id.d0, k0, S.d0, P.d0);
                for (int k1 = 0; k1 < K.d1; ++k1) {
                    const auto [i1lo, i1hi] = strided_range(od.d1, id.d1, k1, S.d1, P.d1);
                    for (int k2 = 0; k2 < K.d2; ++k2) {
                        const auto [i2lo, i2hi] = strided_range(od.d2, id.d2, k2, S.d2, P.d2);
                        double acc = 0.0;
                        for (int i0 = i0lo; i0 < i0hi; ++i0) {
                            const int j0 = i0 * S.d0 - P.d0 + k0;
                            const float* xp0 =
                                xch + static_cast<std::size_t>(i0) * id.d1 * id.d2;
                            const float* gp0 =
                                gch + static_cast<std::size_t>(j0) * od.d1 * od.d2;
                            for (int i1 = i1lo; i1 < i1hi; ++i1) {
                                const int j1 = i1 * S.d1 - P.d1 + k1;
                                const float* xrow = xp0 + static_cast<std::size_t>(i1) * id.d2;
                                const float* grow = gp0 + static_cast<std::size_t>(j1) * od.d2;
                                for (int i2 = i2lo; i2 < i2hi; ++i2) {
                                    acc += static_cast<double>(xrow[i2]) *
                                           grow[i2 * S.d2 - P.d2 + k2];
                                }
                            }
                        }
                        gwch[(static_cast<std::size_t>(k0) * K.d1 + k1) * K.d2 + k2] +=
                            static_cast<float>(acc);
                    }
                }
            }
        }
    }
}

// gx[ic][i] = sum_oc sum_k w[ic][oc][k] gy[oc][i*s - p + k]: the deconv input
// lives on the strided side, so its gradient gathers like a plain convolution.
void deconv_grad_input_kernel(const Tensor& gy, const std::vector<float>& w, const LayerSpec& sp,
                              Tensor& gx) {
    const int IC = sp.in_channels, OC = sp.out_channels;
    const Dims3 id = gx.spatial(), od = gy.spatial();
    const Dims3 K = sp.kernel, S = sp.stride, P = sp.padding;
    const std::size_t gycs = gy.channel_stride(), gxcs = gx.channel_stride();
    const std::size_t kvol = K.volume();
    const float* gd = gy.data();
    const float* wd = w.data();
    float* rd = gx.data();

#pragma omp parallel for collapse(2) schedule(static)
    for (int ic = 0; ic < IC; ++ic) {
        for (int i0 = 0; i0 < id.d0; ++i0) {
            const int j0base = i0 * S.d0 - P.d0;
            const int k0lo = std::max(0, -j0base);
            const int k0hi = std::min(K.d0, od.d0 - j0base);
            for (int i1 = 0; i1 < id.d1; ++i1) {
                const int j1base = i1 * S.d1 - P.d1;
                const int k1lo = std::max(0, -j1base);
                const int k1hi = std::min(K.d1, od.d1 - j1base);
                float* rrow =
                    rd + ic * gxcs + (static_cast<std::size_t>(i0) * id.d1 + i1) * id.d2;
                for (int i2 = 0; i2 < id.d2; ++i2) rrow[i2] = 0.0f;
                for (int oc = 0; oc < OC; ++oc) {
                    const float* gch = gd + oc * gycs;
                    const float* wch = wd + (static_cast<std::size_t>(ic) * OC + oc) * kvol;
                    for (int k0 = k0lo; k0 < k0hi; ++k0) {
                        const float* gp0 =
                            gch + static_cast<std::size_t>(j0base + k0) * od.d1 * od.d2;
                        const float* wp0 = wch + static_cast<std::size_t>(k0) * K.d1 * K.d2;
                        for (int k1 = k1lo; k1 < k1hi; ++k1) {
                            const float* grow = gp0 + static_cast<std::size_t>(j1base + k1) * od.d2;
                            const float* wrow = wp0 + static_cast<std::size_t>(k1) * K.d2;
                            for (int i2 = 0; i2 < id.d2; ++i2) {
                                const int j2base = i2 * S.d2 - P.d2;
                                const int k2lo = std::max(0, -j2base);
                                const int k2hi = std::min(K.d2, od.d2 - j2base);
                                float acc = 0.0f;
                                for (int k2 = k2lo; k2 < k2hi; ++k2) {
                                    acc += wrow[k2] * grow[j2base + k2];
                                }
                                rrow[i2] += acc;
                            }
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

// --- ConvLayer ----------------------------------------------------------------

void ConvLayer::bind(Dims3 in) {
    in_sp_ = in;
    out_sp_ = spec.kind == LayerKind::conv ? conv_output_shape(in, spec)
                                           : deconv_output_shape(in, spec);
    w.assign(spec.weight_count(), 0.0f);
    b.assign(static_cast<std::size_t>(spec.out_channels), 0.0f);
    gw.assign(w.size(), 0.0f);
    gb.assign(b.size(), 0.0f);
}

void ConvLayer::init_params(Rng& rng) {
    const double fan_in = static_cast<double>(spec.in_channels) * spec.kernel_volume();
    const double bound = 1.0 / std::sqrt(fan_in);
    for (auto& v : w) v = static_cast<float>(rng.uniform(-bound, bound));
    for (auto& v : b) v = static_cast<float>(rng.uniform(-bound, bound));
}

void ConvLayer::zero_grad() {
    std::fill(gw.begin(), gw.end(), 0.0f);
    std::fill(gb.begin(), gb.end(), 0.0f);
}

Tensor ConvLayer::forward(const Tensor& x, bool cache) {
    if (x.channels() != spec.in_channels || x.spatial() != in_sp_) {
        throw shape_error("conv layer: input shape mismatch, expected " + in_sp_.str() + " x" +
                          std::to_string(spec.in_channels) + " channels, got " +
                          x.spatial().str() + " x" + std::to_string(x.channels()));
    }
    Tensor y(spec.out_channels, out_sp_);
    if (spec.kind == LayerKind::conv) {
        conv_forward_kernel(x, w, b, spec, y);
    } else {
        // dense side = output, strided side = input; weights are [in][out][k]
        gather_adjoint_kernel(x, w, b.data(), spec.out_channels, spec.in_channels, out_sp_,
                              in_sp_, spec.kernel, spec.stride, spec.padding,
                              /*w_stride_dense=*/spec.kernel_volume(),
                              /*w_stride_strided=*/static_cast<std::size_t>(spec.out_channels) *
                                  spec.kernel_volume(),
                              y);
    }
    if (cache) x_cache_ = x;
    return y;
}

Tensor ConvLayer::backward(const Tensor& gy) {
    if (x_cache_.empty()) throw divergence_error("conv layer: backward without cached forward");
    Tensor gx(spec.in_channels, in_sp_);
    if (spec.kind == LayerKind::conv) {
        conv_grad_params_kernel(x_cache_, gy, spec, gw, gb);
        // dense side = input, strided side = output; weights are [out][in][k]
        gather_adjoint_kernel(gy, w, nullptr, spec.in_channels, spec.out_channels, in_sp_,
                              out_sp_, spec.kernel, spec.stride, spec.padding,
                              /*w_stride_dense=*/spec.kernel_volume(),
                              /*w_stride_strided=*/static_cast<std::size_t>(spec.in_channels) *
                                  spec.kernel_volume(),
                              gx);
    } else {
        deconv_grad_params_kernel(x_cache_, gy, spec, gw, gb);
        deconv_grad_input_kernel(gy, w, spec, gx);
    }
    return gx;
}

// --- InstanceNorm ---------------------------------------------------------------

void InstanceNorm::init(int ch, double e) {
    channels = ch;
    eps = e;
    gamma.assign(static_cast<std::size_t>(ch), 1.0f);
    beta.assign(static_cast<std::size_t>(ch), 0.0f);
    ggamma.assign(static_cast<std::size_t>(ch), 0.0f);
    gbeta.assign(static_cast<std::size_t>(ch), 0.0f);
}

void InstanceNorm::zero_grad() {
    std::fill(ggamma.begin(), ggamma.end(), 0.0f);
    std::fill(gbeta.begin(), gbeta.end(), 0.0f);
}

Tensor InstanceNorm::forward(const Tensor& x, bool cache) {
    if (x.channels() != channels) {
        throw shape_error("instance norm: channel mismatch");
    }
    const std::size_t n = x.channel_stride();
    if (n == 0) throw shape_error("instance norm: empty spatial extent");
    Tensor y = Tensor::zeros_like(x);
    if (cache) {
        xhat_ = Tensor::zeros_like(x);
        inv_std_.assign(static_cast<std::size_t>(channels), 0.0);
    }
#pragma omp parallel for schedule(static)
    for (int c = 0; c < channels; ++c) {
        const float* xc = x.data() + c * n;
        float* yc = y.data() + c * n;
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += xc[i];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = xc[i] - mean;
            var += d * d;
        }
        var /= static_cast<double>(n);
        const double inv_std = 1.0 / std::sqrt(var + eps);
        const float g = gamma[c], bt = beta[c];
        if (cache) {
            float* xh = xhat_.data() + c * n;
            inv_std_[c] = inv_std;
            for (std::size_t i = 0; i < n; ++i) {
                const float h = static_cast<float>((xc[i] - mean) * inv_std);
                xh[i] = h;
                yc[i] = g * h + bt;
            }
        } else {
            for (std::size_t i = 0; i < n; ++i) {
                yc[i] = static_cast<float>(g * (xc[i] - mean) * inv_std + bt);
            }
        }
    }
    return y;
}

Tensor InstanceNorm::backward(const Tensor& gy) {
    if (xhat_.empty()) throw divergence_error("instance norm: backward without cached forward");
    const std::size_t n = gy.channel_stride();
    Tensor gx = Tensor::zeros_like(gy);
#pragma omp parallel for schedule(static)
    for (int c = 0; c < channels; ++c) {
        const float* g = gy.data() + c * n;
        const float* xh = xhat_.data() + c * n;
        float* out = gx.data() + c * n;
        double sum_g = 0.0, sum_gx = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            sum_g += g[i];
            sum_gx += static_cast<double>(g[i]) * xh[i];
        }
        gbeta[c] += static_cast<float>(sum_g);
        ggamma[c] += static_cast<float>(sum_gx);
        const double mean_g = sum_g / static_cast<double>(n);
        const double mean_gx = sum_gx / static_cast<double>(n);
        const double scale = gamma[c] * inv_std_[c];
        for (std::size_t i = 0; i < n; ++i) {
            out[i] = static_cast<float>(scale * (g[i] - mean_g - xh[i] * mean_gx));
        }
    }
    return gx;
}

// --- activations -----------------------------------------------------------------

Tensor leaky_forward(const Tensor& x, double slope) {
    Tensor y = Tensor::zeros_like(x);
    const float s = static_cast<float>(slope);
    const float* xd = x.data();
    float* yd = y.data();
    const std::size_t n = x.size();
    for (std::size_t i = 0; i < n; ++i) yd[i] = xd[i] >= 0.0f ? xd[i] : s * xd[i];
    return y;
}

Tensor leaky_backward(const Tensor& y, const Tensor& gy, double slope) {
    Tensor gx = Tensor::zeros_like(gy);
    const float s = static_cast<float>(slope);
    const float* yd = y.data();
    const float* gd = gy.data();
    float* od = gx.data();
    const std::size_t n = gy.size();
    for (std::size_t i = 0; i < n; ++i) od[i] = yd[i] >= 0.0f ? gd[i] : s * gd[i];
    return gx;
}

Tensor sigmoid_forward(const Tensor& x) {
    Tensor y = Tensor::zeros_like(x);
    const float* xd = x.data();
    float* yd = y.data();
    const std::size_t n = x.size();
    for (std::size_t i = 0; i < n; ++i) {
        yd[i] = static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(xd[i]))));
    }
    return y;
}

Tensor sigmoid_backward(const Tensor& y, const Tensor& gy) {
    Tensor gx = Tensor::zeros_like(gy);
    const float* yd = y.data();
    const float* gd = gy.data();
    float* od = gx.data();
    const std::size_t n = gy.size();
    for (std::size_t i = 0; i < n; ++i) od[i] = gd[i] * yd[i] * (1.0f - yd[i]);
    return gx;
}

Tensor relu_forward(const Tensor& x) {
    Tensor y = Tensor::zeros_like(x);
    const float* xd = x.data();
    float* yd = y.data();
    const std::size_t n = x.size();
    for (std::size_t i = 0; i < n; ++i) yd[i] = xd[i] > 0.0f ? xd[i] : 0.0f;
    return y;
}

Tensor relu_backward(const Tensor& y, const Tensor& gy) {
    Tensor gx = Tensor::zeros_like(gy);
    const float* yd = y.data();
    const float* gd = gy.data();
    float* od = gx.data();
    const std::size_t n = gy.size();
    for (std::size_t i = 0; i < n; ++i) od[i] = yd[i] > 0.0f ? gd[i] : 0.0f;
    return gx;
}

// --- ResBlock ---------------------------------------------------------------------

void ResBlock::build(const ResBlockSpec& spec, Dims3 in, double leaky_slope, double norm_eps,
                     Dims3 deconv_output_padding) {
    slope = leaky_slope;
    LayerSpec first;
    first.kind = spec.kind;
    first.kernel = spec.kernel;
    first.stride = spec.stride;
    first.padding = symmetric_padding(spec.kernel);
    first.output_padding = spec.kind == LayerKind::deconv ? deconv_output_padding : Dims3{0, 0, 0};
    first.in_channels = spec.in_channels;
    first.out_channels = spec.out_channels;

    main1.spec = first;
    main1.bind(in);
    side1.spec = first;
    side1.bind(in);

    LayerSpec second;
    second.kind = spec.kind;
    second.kernel = {3, 3, 3};
    second.stride = {1, 1, 1};
    second.padding = {1, 1, 1};
    second.in_channels = spec.out_channels;
    second.out_channels = spec.out_channels;
    main2.spec = second;
    main2.bind(main1.out_shape());

    if (main2.out_shape() != main1.out_shape()) {
        throw shape_error("resblock: second main-path layer must preserve shape");
    }

    main_norm.init(spec.out_channels, norm_eps);
    side_norm.init(spec.out_channels, norm_eps);
}

void ResBlock::init_params(Rng& rng) {
    main1.init_params(rng);
    main2.init_params(rng);
    side1.init_params(rng);
}

void ResBlock::zero_grad() {
    main1.zero_grad();
    main2.zero_grad();
    side1.zero_grad();
    main_norm.zero_grad();
    side_norm.zero_grad();
}

std::size_t ResBlock::param_count() const {
    return main1.param_count() + main2.param_count() + side1.param_count() +
           main_norm.param_count() + side_norm.param_count();
}

Tensor ResBlock::forward(const Tensor& x, bool cache) {
    Tensor m = main1.forward(x, cache);
    m = main_norm.forward(m, cache);
    m = leaky_forward(m, slope);
    if (cache) main_act_y_ = m;
    m = main2.forward(m, cache);

    Tensor s = side1.forward(x, cache);
    s = side_norm.forward(s, cache);
    s = leaky_forward(s, slope);
    if (cache) side_act_y_ = s;

    float* md = m.data();
    const float* sd = s.data();
    for (std::size_t i = 0; i < m.size(); ++i) md[i] += sd[i];
    return m;
}

Tensor ResBlock::backward(const Tensor& gy) {
    Tensor gm = main2.backward(gy);
    gm = leaky_backward(main_act_y_, gm, slope);
    gm = main_norm.backward(gm);
    gm = main1.backward(gm);

    Tensor gs = leaky_backward(side_act_y_, gy, slope);
    gs = side_norm.backward(gs);
    gs = side1.backward(gs);

    float* a = gm.data();
    const float* b2 = gs.data();
    for (std::size_t i = 0; i < gm.size(); ++i) a[i] += b2[i];
    return gm;
}

void ResBlock::drop_cache() {
    main1.drop_cache();
    main2.drop_cache();
    side1.drop_cache();
    main_norm.drop_cache();
    side_norm.drop_cache();
    main_act_y_ = Tensor();
    side_act_y_ = Tensor();
}

// --- Coder -----------------------------------------------------------------------

void Coder::init_params(Rng& rng) {
    for (auto& b : blocks) b.init_params(rng);
    head.init_params(rng);
}

void Coder::zero_grad() {
    for (auto& b : blocks) b.zero_grad();
    head.zero_grad();
}

std::size_t Coder::param_count() const {
    std::size_t n = head.param_count();
    for (const auto& b : blocks) n += b.param_count();
    return n;
}

Tensor Coder::forward(const Tensor& x, bool cache) {
    Tensor t = x;
    for (auto& b : blocks) t = b.forward(t, cache);
    t = head.forward(t, cache);
    if (squash == OutputSquash::sigmoid) {
        t = sigmoid_forward(t);
        if (cache) squash_y_ = t;
    } else if (squash == OutputSquash::relu) {
        t = relu_forward(t);
        if (cache) squash_y_ = t;
    }
    return t;
}

Tensor Coder::backward(const Tensor& gy) {
    Tensor g = gy;
    if (squash == OutputSquash::sigmoid) {
        g = sigmoid_backward(squash_y_, g);
    } else if (squash == OutputSquash::relu) {
        g = relu_backward(squash_y_, g);
    }
    g = head.backward(g);
    for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) g = it->backward(g);
    return g;
}

void Coder::drop_cache() {
    for (auto& b : blocks) b.drop_cache();
    head.drop_cache();
    squash_y_ = Tensor();
}

// --- ModelBundle --------------------------------------------------------------------

bool all_finite(const Tensor& t) {
    for (float v : t.vec()) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Tensor ModelBundle::encode(const Tensor& frame, bool cache) {
    if (frame.channels() != 1 || frame.spatial() != input_shape) {
        throw shape_error("encode: expected single-channel input of shape " + input_shape.str() +
                          ", got " + frame.spatial().str());
    }
    Tensor latent = encoder.forward(frame, cache);
    if (!all_finite(latent)) throw divergence_error("encode: non-finite latent");
    return latent;
}

DecodeResult ModelBundle::decode(const Tensor& latent, bool cache) {
    if (latent.channels() != config.latent_channels || latent.spatial() != latent_spatial()) {
        throw shape_error("decode: latent shape mismatch, expected " + latent_spatial().str() +
                          " x" + std::to_string(config.latent_channels) + " channels, got " +
                          latent.spatial().str() + " x" + std::to_string(latent.channels()));
    }
    DecodeResult out;
    if (has_segmentation_head()) {
        out.seg = decoder_s.forward(latent, cache);
        if (!all_finite(out.seg)) throw divergence_error("decode: non-finite segmentation output");
    }
    out.reg = decoder_r.forward(latent, cache);
    if (!all_finite(out.reg)) throw divergence_error("decode: non-finite regression output");
    return out;
}

void ModelBundle::zero_grad() {
    encoder.zero_grad();
    if (has_segmentation_head()) decoder_s.zero_grad();
    decoder_r.zero_grad();
}

void ModelBundle::drop_caches() {
    encoder.drop_cache();
    if (has_segmentation_head()) decoder_s.drop_cache();
    decoder_r.drop_cache();
}

std::size_t ModelBundle::param_count() const {
    std::size_t n = encoder.param_count() + decoder_r.param_count();
    if (has_segmentation_head()) n += decoder_s.param_count();
    return n;
}

namespace {

std::vector<std::uint32_t> conv_dims(const ConvLayer& l) {
    const auto& sp = l.spec;
    if (sp.kind == LayerKind::conv) {
        return {static_cast<std::uint32_t>(sp.out_channels),
                static_cast<std::uint32_t>(sp.in_channels),
                static_cast<std::uint32_t>(sp.kernel.d0), static_cast<std::uint32_t>(sp.kernel.d1),
                static_cast<std::uint32_t>(sp.kernel.d2)};
    }
    return {static_cast<std::uint32_t>(sp.in_channels),
            static_cast<std::uint32_t>(sp.out_channels),
            static_cast<std::uint32_t>(sp.kernel.d0), static_cast<std::uint32_t>(sp.kernel.d1),
            static_cast<std::uint32_t>(sp.kernel.d2)};
}

void collect_conv(std::vector<NamedParam>& out, ConvLayer& l, const std::string& prefix) {
    out.push_back({prefix + ".weight", &l.w, &l.gw, conv_dims(l)});
    out.push_back({prefix + ".bias", &l.b, &l.gb,
                   {static_cast<std::uint32_t>(l.spec.out_channels)}});
}

void collect_norm(std::vector<NamedParam>& out, InstanceNorm& n, const std::string& prefix) {
    out.push_back({prefix + ".weight", &n.gamma, &n.ggamma,
                   {static_cast<std::uint32_t>(n.channels)}});
    out.push_back({prefix + ".bias", &n.beta, &n.gbeta,
                   {static_cast<std::uint32_t>(n.channels)}});
}

void collect_coder(std::vector<NamedParam>& out, Coder& c, const std::string& prefix) {
    for (std::size_t i = 0; i < c.blocks.size(); ++i) {
        const std::string bp = prefix + ".block" + std::to_string(i + 1);
        collect_conv(out, c.blocks[i].main1, bp + ".main.conv1");
        collect_norm(out, c.blocks[i].main_norm, bp + ".main.norm");
        collect_conv(out, c.blocks[i].main2, bp + ".main.conv2");
        collect_conv(out, c.blocks[i].side1, bp + ".side.conv1");
        collect_norm(out, c.blocks[i].side_norm, bp + ".side.norm");
    }
    collect_conv(out, c.head, prefix + ".head");
}

}  // namespace

std::vector<NamedParam> ModelBundle::named_params() {
    std::vector<NamedParam> out;
    collect_coder(out, encoder, "encoder");
    if (has_segmentation_head()) collect_coder(out, decoder_s, "decoder_s");
    collect_coder(out, decoder_r, "decoder_r");
    return out;
}

std::string ModelBundle::describe_json() const {
    nlohmann::json j;
    j["format"] = "bcae-model";
    j["config"] = nlohmann::json::parse(config.to_json());
    j["variant"] = variant_name(variant);
    j["input_shape"] = nlohmann::json::array({input_shape.d0, input_shape.d1, input_shape.d2});
    j["seed"] = seed;
    return j.dump();
}

std::uint64_t ModelBundle::model_hash() const {
    std::uint64_t h = fnv1a64(describe_json());
    auto params = const_cast<ModelBundle*>(this)->named_params();
    for (const auto& p : params) {
        h = fnv1a64(p.name, h);
        h = fnv1a64(p.value->data(), p.value->size() * sizeof(float), h);
    }
    return h;
}

void ModelBundle::save_weights(std::ostream& os) const {
    const std::string json = describe_json();
    os.write("BCWT", 4);
    write_u16le(os, 1);
    write_u64le(os, fnv1a64(json));
    write_u32le(os, static_cast<std::uint32_t>(json.size()));
    os.write(json.data(), static_cast<std::streamsize>(json.size()));
    auto params = const_cast<ModelBundle*>(this)->named_params();
    write_u32le(os, static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        write_u16le(os, static_cast<std::uint16_t>(p.name.size()));
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        write_u8(os, static_cast<std::uint8_t>(p.dims.size()));
        std::size_t count = 1;
        for (auto d : p.dims) {
            write_u32le(os, d);
            count *= d;
        }
        if (count != p.value->size()) {
            throw format_error("save_weights: dims/value mismatch for " + p.name);
        }
        for (float v : *p.value) write_f32le(os, v);
    }
    if (!os) throw io_error("save_weights: stream write failed");
}

void ModelBundle::save_weights(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("save_weights: cannot open " + path.string());
    save_weights(os);
}

ModelBundle ModelBundle::load_weights(std::istream& is, const std::string& source) {
    ByteReader r(is, source);
    r.expect_magic("BCWT", "weight container");
    const std::uint16_t version = r.u16("version");
    if (version != 1) {
        throw format_error(source + ": unsupported weight container version " +
                           std::to_string(version));
    }
    const std::uint64_t json_hash = r.u64("description hash");
    const std::uint32_t json_len = r.u32("description length");
    std::string json(json_len, '\0');
    r.read_exact(json.data(), json_len, "description");
    if (fnv1a64(json) != json_hash) {
        throw format_error(source + ": model description hash mismatch");
    }

    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json);
    } catch (const nlohmann::json::exception& e) {
        throw format_error(source + ": bad model description: " + e.what());
    }
    const NetworkConfig config = NetworkConfig::from_json(j.at("config").dump());
    const VariantKind variant = variant_from_name(j.at("variant").get<std::string>());
    const auto& shp = j.at("input_shape");
    const Dims3 input_shape{shp.at(0).get<int>(), shp.at(1).get<int>(), shp.at(2).get<int>()};
    const std::uint64_t seed = j.at("seed").get<std::uint64_t>();

    ModelBundle bundle = build_model(config, input_shape, variant, seed);
    auto params = bundle.named_params();

    const std::uint32_t n_tensors = r.u32("tensor count");
    if (n_tensors != params.size()) {
        throw format_error(source + ": expected " + std::to_string(params.size()) +
                           " tensors, found " + std::to_string(n_tensors));
    }
    for (std::uint32_t t = 0; t < n_tensors; ++t) {
        const std::uint16_t name_len = r.u16("tensor name length");
        std::string name(name_len, '\0');
        r.read_exact(name.data(), name_len, "tensor name");
        if (name != params[t].name) {
            throw format_error(source + ": tensor order mismatch, expected " + params[t].name +
                               ", found " + name);
        }
        const std::uint8_t ndim = r.u8("tensor ndim");
        if (ndim != params[t].dims.size()) {
            throw format_error(source + ": tensor rank mismatch for " + name);
        }
        std::size_t count = 1;
        for (std::uint8_t d = 0; d < ndim; ++d) {
            const std::uint32_t dim = r.u32("tensor dim");
            if (dim != params[t].dims[d]) {
                throw format_error(source + ": tensor shape mismatch for " + name);
            }
            count *= dim;
        }
        for (std::size_t i = 0; i < count; ++i) (*params[t].value)[i] = r.f32("tensor data");
    }
    return bundle;
}

ModelBundle ModelBundle::load_weights(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("load_weights: cannot open " + path.string());
    return load_weights(is, path.filename().string());
}

ModelBundle build_model(const NetworkConfig& config, Dims3 input_shape, VariantKind variant,
                        std::uint64_t seed) {
    config.validate();
    if (config.encoder_blocks.front().in_channels != 1) {
        throw format_error("build_model: encoder must take a single input channel");
    }

    ModelBundle m;
    m.config = config;
    m.variant = variant;
    m.seed = seed;
    m.input_shape = input_shape;

    // encoder: ResBlocks, then a 1x1x1 convolution to the latent channels
    std::vector<Dims3> trace{input_shape};
    m.encoder.blocks.resize(config.encoder_blocks.size());
    Dims3 cur = input_shape;
    for (std::size_t i = 0; i < config.encoder_blocks.size(); ++i) {
        m.encoder.blocks[i].build(config.encoder_blocks[i], cur, config.leaky_slope,
                                  config.norm_eps);
        cur = m.encoder.blocks[i].out_shape();
        trace.push_back(cur);
    }
    LayerSpec enc_head;
    enc_head.kind = LayerKind::conv;
    enc_head.kernel = {1, 1, 1};
    enc_head.stride = {1, 1, 1};
    enc_head.padding = {0, 0, 0};
    enc_head.in_channels = config.encoder_blocks.back().out_channels;
    enc_head.out_channels = config.latent_channels;
    m.encoder.head.spec = enc_head;
    m.encoder.head.bind(cur);
    m.encoder.squash = OutputSquash::none;

    // one decoder block per encoder block except the last, which the terminal
    // deconvolution mirrors
    if (config.decoder_blocks.size() + 2 != trace.size()) {
        throw format_error("build_model: decoder table does not mirror the encoder blocks");
    }

    // decoders mirror the encoder trace; output paddings are whatever makes
    // each stage land exactly on its mirror shape (all zero at the canonical
    // section shape)
    auto build_decoder = [&](Coder& dec, OutputSquash squash) {
        dec.blocks.resize(config.decoder_blocks.size());
        Dims3 dcur = cur;
        for (std::size_t i = 0; i < config.decoder_blocks.size(); ++i) {
            const Dims3 target = trace[trace.size() - 2 - i];
            const ResBlockSpec& bs = config.decoder_blocks[i];
            LayerSpec probe;
            probe.kind = LayerKind::deconv;
            probe.kernel = bs.kernel;
            probe.stride = bs.stride;
            probe.padding = symmetric_padding(bs.kernel);
            probe.in_channels = bs.in_channels;
            probe.out_channels = bs.out_channels;
            const Dims3 base = deconv_output_shape(dcur, probe);
            Dims3 op;
            for (int a = 0; a < 3; ++a) {
                op[a] = target[a] - base[a];
                if (op[a] < 0 || op[a] >= bs.stride[a]) {
                    throw shape_error("build_model: decoder block " + std::to_string(i + 1) +
                                      " cannot reach shape " + target.str() + " from " +
                                      dcur.str());
                }
            }
            dec.blocks[i].build(bs, dcur, config.leaky_slope, config.norm_eps, op);
            dcur = dec.blocks[i].out_shape();
        }
        LayerSpec head;
        head.kind = LayerKind::deconv;
        head.kernel = config.decoder_head_kernel;
        head.stride = config.decoder_head_stride;
        head.padding = symmetric_padding(config.decoder_head_kernel);
        head.in_channels = config.decoder_blocks.back().out_channels;
        head.out_channels = 1;
        const Dims3 base = deconv_output_shape(dcur, head);
        for (int a = 0; a < 3; ++a) {
            head.output_padding[a] = input_shape[a] - base[a];
            if (head.output_padding[a] < 0 || head.output_padding[a] >= head.stride[a]) {
                throw shape_error("build_model: decoder head cannot reach input shape " +
                                  input_shape.str() + " from " + dcur.str());
            }
        }
        dec.head.spec = head;
        dec.head.bind(dcur);
        dec.squash = squash;
        if (dec.head.out_shape() != input_shape) {
            throw shape_error("build_model: decoder output " + dec.head.out_shape().str() +
                              " does not close on input " + input_shape.str());
        }
    };

    if (variant != VariantKind::cae) {
        build_decoder(m.decoder_s, OutputSquash::sigmoid);
    }
    build_decoder(m.decoder_r, variant == VariantKind::bcae ? OutputSquash::none
                                                            : OutputSquash::relu);

    // deterministic per-layer initialization, independent of build order
    std::uint64_t ordinal = 0;
    auto init_coder = [&](Coder& c) {
        for (auto& b : c.blocks) {
            Rng r1(derive_seed(seed, "param-init", ordinal++));
            b.init_params(r1);
        }
        Rng rh(derive_seed(seed, "param-init", ordinal++));
        c.head.init_params(rh);
    };
    init_coder(m.encoder);
    if (variant != VariantKind::cae) init_coder(m.decoder_s);
    init_coder(m.decoder_r);

    return m;
}

}  // namespace bcae
