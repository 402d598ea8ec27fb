#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "bcae/common.hpp"
#include "bcae/rng.hpp"
#include "bcae/tensor.hpp"

namespace bcae {

enum class LayerKind { conv, deconv };

struct LayerSpec {
    LayerKind kind = LayerKind::conv;
    Dims3 kernel{1, 1, 1};
    Dims3 stride{1, 1, 1};
    Dims3 padding{0, 0, 0};
    Dims3 output_padding{0, 0, 0};  // deconv only
    int in_channels = 1;
    int out_channels = 1;

    std::size_t kernel_volume() const { return kernel.volume(); }
    std::size_t weight_count() const {
        return static_cast<std::size_t>(in_channels) * out_channels * kernel_volume();
    }
};

// Strided-convolution arithmetic, per axis: floor((n + 2p - f) / s) + 1.
// Throws shape_error naming the axis when the result is not positive.
Dims3 conv_output_shape(Dims3 in, const LayerSpec& layer);

// Transposed-convolution arithmetic, per axis: (n - 1) s - 2p + f + op.
Dims3 deconv_output_shape(Dims3 in, const LayerSpec& layer);

// The symmetric padding rule used throughout: floor(kernel / 2) per axis.
Dims3 symmetric_padding(Dims3 kernel);

// Geometry of one resampling ResBlock. The first (de)convolution resamples
// and changes channels; the implicit second main-path convolution is kernel 3,
// stride 1, padding 1 with channels preserved. The side path duplicates the
// first layer's geometry.
struct ResBlockSpec {
    LayerKind kind = LayerKind::conv;
    Dims3 kernel{3, 3, 3};
    Dims3 stride{2, 2, 1};
    int in_channels = 1;
    int out_channels = 1;
};

enum class VariantKind { bcae, bcae_wo_transform, cae };

const char* variant_name(VariantKind v);
VariantKind variant_from_name(const std::string& name);

// Layer tables for the encoder and the two (structurally identical) decoders.
struct NetworkConfig {
    std::vector<ResBlockSpec> encoder_blocks;
    int latent_channels = 8;  // encoder ends with a 1x1x1 convolution to this many channels
    std::vector<ResBlockSpec> decoder_blocks;
    Dims3 decoder_head_kernel{4, 5, 3};
    Dims3 decoder_head_stride{2, 2, 1};
    double leaky_slope = 0.1;
    double norm_eps = 1e-5;

    static NetworkConfig canonical();

    std::string to_json() const;
    static NetworkConfig from_json(const std::string& text);
    std::uint64_t hash() const;

    void validate() const;  // throws format_error on broken invariants
};

// --- differentiable layers -------------------------------------------------
// Each layer caches what its backward pass needs when `cache` is set.
// backward() accumulates parameter gradients and returns the input gradient.

class ConvLayer {
public:
    LayerSpec spec;
    std::vector<float> w, b, gw, gb;

    void bind(Dims3 in);  // fixes the input/output geometry
    Dims3 out_shape() const { return out_sp_; }
    Dims3 in_shape() const { return in_sp_; }
    void init_params(Rng& rng);
    void zero_grad();
    std::size_t param_count() const { return w.size() + b.size(); }

    Tensor forward(const Tensor& x, bool cache);
    Tensor backward(const Tensor& gy);
    void drop_cache() { x_cache_ = Tensor(); }

private:
    Dims3 in_sp_{}, out_sp_{};
    Tensor x_cache_;
};

class InstanceNorm {
public:
    int channels = 0;
    double eps = 1e-5;
    std::vector<float> gamma, beta, ggamma, gbeta;

    void init(int ch, double e);
    void zero_grad();
    std::size_t param_count() const { return gamma.size() + beta.size(); }

    Tensor forward(const Tensor& x, bool cache);
    Tensor backward(const Tensor& gy);
    void drop_cache() { xhat_ = Tensor(); }

private:
    Tensor xhat_;
    std::vector<double> inv_std_;
};

// y = x for x >= 0, slope * x otherwise. slope > 0 lets backward recover the
// branch from the cached output sign.
Tensor leaky_forward(const Tensor& x, double slope);
Tensor leaky_backward(const Tensor& y, const Tensor& gy, double slope);

Tensor sigmoid_forward(const Tensor& x);
Tensor sigmoid_backward(const Tensor& y, const Tensor& gy);

Tensor relu_forward(const Tensor& x);
Tensor relu_backward(const Tensor& y, const Tensor& gy);

// One resampling residual block: main = first (de)conv, norm, activation,
// shape-preserving conv; side = first (de)conv, norm, activation; output is
// the elementwise sum of the two paths.
class ResBlock {
public:
    ConvLayer main1, main2, side1;
    InstanceNorm main_norm, side_norm;
    double slope = 0.1;

    void build(const ResBlockSpec& spec, Dims3 in, double leaky_slope, double norm_eps,
               Dims3 deconv_output_padding = {0, 0, 0});
    Dims3 out_shape() const { return main1.out_shape(); }
    void init_params(Rng& rng);
    void zero_grad();
    std::size_t param_count() const;

    Tensor forward(const Tensor& x, bool cache);
    Tensor backward(const Tensor& gy);
    void drop_cache();

private:
    Tensor main_act_y_, side_act_y_;
};

enum class OutputSquash { none, sigmoid, relu };

// Encoder or decoder: a stack of ResBlocks, a head layer, and an optional
// output squash.
class Coder {
public:
    std::vector<ResBlock> blocks;
    ConvLayer head;
    OutputSquash squash = OutputSquash::none;

    Dims3 out_shape() const { return head.out_shape(); }
    void init_params(Rng& rng);
    void zero_grad();
    std::size_t param_count() const;

    Tensor forward(const Tensor& x, bool cache);
    Tensor backward(const Tensor& gy);
    void drop_cache();

private:
    Tensor squash_y_;
};

// Named view of one parameter tensor, used for optimizer state, weight files
// and alternate-language loaders.
struct NamedParam {
    std::string name;
    std::vector<float>* value;
    std::vector<float>* grad;
    std::vector<std::uint32_t> dims;
};

struct DecodeResult {
    Tensor seg;  // empty for the regression-only variant
    Tensor reg;
};

// A built model: encoder plus decoders, bound to one input shape.
class ModelBundle {
public:
    NetworkConfig config;
    VariantKind variant = VariantKind::bcae;
    std::uint64_t seed = 0;
    Dims3 input_shape{};

    Coder encoder;
    Coder decoder_s;  // unused for the cae variant
    Coder decoder_r;

    bool has_segmentation_head() const { return variant != VariantKind::cae; }
    Dims3 latent_spatial() const { return encoder.out_shape(); }
    int latent_channels() const { return config.latent_channels; }

    // Raw ADC counts in, latent out. Throws divergence_error on non-finite
    // output.
    Tensor encode(const Tensor& frame, bool cache = false);
    DecodeResult decode(const Tensor& latent, bool cache = false);

    void zero_grad();
    void drop_caches();
    std::size_t param_count() const;
    std::vector<NamedParam> named_params();

    // Hash over the architecture description and every parameter byte;
    // identifies a specific trained model.
    std::uint64_t model_hash() const;

    std::string describe_json() const;  // config + variant + input shape + seed

    // Weight container: magic "BCWT", version, describe_json, then named
    // f32 tensors (little-endian, row-major).
    void save_weights(std::ostream& os) const;
    void save_weights(const std::filesystem::path& path) const;
    static ModelBundle load_weights(std::istream& is, const std::string& source = "weights");
    static ModelBundle load_weights(const std::filesystem::path& path);
};

// Builds the model for the given input shape. Deconvolution output paddings
// are derived from the encoder's shape trace so the decoders reproduce the
// input shape exactly; for the canonical section shape every derived output
// padding is zero.
ModelBundle build_model(const NetworkConfig& config, Dims3 input_shape, VariantKind variant,
                        std::uint64_t seed);

// True when every value is finite.
bool all_finite(const Tensor& t);

}  // namespace bcae
