#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bcae/codec.hpp"
#include "bcae/frames.hpp"
#include "bcae/network.hpp"

namespace bcae {

// --- metrics ----------------------------------------------------------------
// All metrics run on raw ADC values over every voxel, zeros included, with
// row-major 64-bit accumulation.

double mse_metric(std::span<const float> recon, const Frame& truth);

// Mean |log2(recon + 1) - log2(truth + 1)|; reconstruction must be
// nonnegative.
double log_mae_metric(std::span<const float> recon, const Frame& truth);

// 10 log10(peak^2 / mse) in dB; +infinity when mse is zero.
double psnr_metric(double mse, double peak = static_cast<double>(kAdcMax));

double zero_fraction(std::span<const float> values);

struct MetricsReport {
    std::string codec;
    bool available = true;
    double compression_ratio = 0.0;
    double mse = 0.0;
    double log_mae = 0.0;
    double psnr_db = 0.0;
    double psnr_paper_scale = 0.0;  // psnr_db / 10
    double zero_fraction_true = 0.0;
    double zero_fraction_recon = 0.0;
    std::size_t n_voxels = 0;
    std::string value_domain = "raw";  // raw | rounded reconstruction values
    double threshold = 0.0;            // gate or post-processing threshold used
    double bound = 0.0;                // error bound used (baselines)
};

// Full-scale reference targets for this compressor family, measured on the
// real detector dataset with 2000-epoch training. Kept for context in reports;
// desk-scale synthetic runs are not expected to reproduce them.
struct ReferenceTarget {
    const char* codec;
    double compression_ratio;
    double mse;
    double log_mae;
    double psnr_paper_scale;
};
inline constexpr ReferenceTarget kFullScaleReferenceTargets[] = {
    {"MGARD", 27.0, 626.28, 1.213, 3.223},  {"SZ", 24.0, 369.69, 0.302, 3.452},
    {"ZFP", 19.0, 219.48, 0.267, 3.678},    {"CAE", 27.0, 227.61, 0.349, 3.703},
    {"BCAEwoT", 27.0, 230.59, 0.193, 3.706}, {"BCAE", 27.0, 218.44, 0.185, 3.724},
};

// --- threshold sweep ----------------------------------------------------------

struct SweepResult {
    double h_best = 0.5;
    std::vector<std::pair<double, double>> curve;  // (h, mean mse)
};

// Evaluates mean reconstruction MSE over the frames for every gate threshold
// in the grid (through the half-precision codec path), returning the argmin;
// ties break toward the smaller threshold.
SweepResult threshold_sweep(ModelBundle& bundle, const std::vector<Frame>& frames,
                            std::span<const double> h_grid);

// --- baseline codecs ------------------------------------------------------------

// Maps every reconstructed value < h to zero (including negatives), leaving
// values >= h unchanged. h is in ADC units here.
void baseline_postprocess(std::span<float> recon, double h);

// Picks the post-processing threshold minimizing pooled MSE over the frames;
// the grid should include 0 so the result can never be worse than identity.
double baseline_postprocess_sweep(const std::vector<std::vector<float>>& recons,
                                  const std::vector<Frame>& truths,
                                  std::span<const double> h_grid);

struct RealFrame {
    Dims3 shape{};
    std::vector<float> values;
};

// Error-bounded compressor plugged into the benchmark. decompress must honor
// the l-infinity bound used at compress time when the implementation supports
// that mode.
class BaselineCodec {
public:
    virtual ~BaselineCodec() = default;
    virtual std::string name() const = 0;
    virtual std::vector<std::uint8_t> compress(const Frame& frame, double linf_bound) = 0;
    virtual RealFrame decompress(const std::vector<std::uint8_t>& blob) = 0;
};

// Built-in reference: uniform scalar quantization at step 2*bound (lossless
// below bound 0.5 on integer frames) followed by a deflate pass. Exists so
// the harness is exercisable without external compressors.
class ReferenceCodec final : public BaselineCodec {
public:
    std::string name() const override { return "reference"; }
    std::vector<std::uint8_t> compress(const Frame& frame, double linf_bound) override;
    RealFrame decompress(const std::vector<std::uint8_t>& blob) override;
};

// External compressor driven over a subprocess protocol:
//   <exe> compress --bound B < frame.bin > code.bin
//   <exe> decompress < code.bin > frame.bin
// with frame.bin in the frame file format.
class PluginCodec final : public BaselineCodec {
public:
    explicit PluginCodec(std::filesystem::path executable);
    std::string name() const override;
    std::vector<std::uint8_t> compress(const Frame& frame, double linf_bound) override;
    RealFrame decompress(const std::vector<std::uint8_t>& blob) override;

private:
    std::filesystem::path exe_;
};

struct BoundSurveyRow {
    double bound = 0.0;
    double mean_ratio = 0.0;  // input bytes at 16 bits per element / compressed bytes
    double mean_mse = 0.0;    // before any post-processing
    int failures = 0;         // frames the codec failed on (excluded from means)
};

// Fig.-style rate/distortion survey: one row per bound, ratios and MSEs
// averaged over the frames the codec handled.
std::vector<BoundSurveyRow> survey_error_bounds(BaselineCodec& codec,
                                                const std::vector<Frame>& frames,
                                                std::span<const double> bounds);

// --- histograms --------------------------------------------------------------------

// 1D histograms of log2(v + 1) for truth and reconstruction over deterministic
// uniformly sampled voxels, plus the joint truth-vs-recon histogram.
struct HistogramReport {
    int n_bins = 0;
    double lo = 0.0, hi = 10.0;
    std::vector<std::uint64_t> truth_counts;
    std::vector<std::uint64_t> recon_counts;
    std::vector<std::uint64_t> joint;  // n_bins x n_bins, truth-major
    std::uint64_t sample_count = 0;

    double bin_lo(int i) const { return lo + (hi - lo) * i / n_bins; }
    double bin_hi(int i) const { return lo + (hi - lo) * (i + 1) / n_bins; }
};

HistogramReport histogram_report(const std::vector<Frame>& frames,
                                 const std::vector<std::vector<float>>& recons, int n_bins,
                                 std::uint64_t seed, std::uint64_t samples = 1000000);

void write_histogram_csv(const HistogramReport& h, const std::filesystem::path& path);

// --- benchmark ------------------------------------------------------------------------

struct BenchmarkOptions {
    std::vector<double> bounds{1, 2, 4, 8, 16, 32};         // baseline survey grid
    std::vector<double> h_grid;                             // gate sweep grid; default 0..1/0.02
    std::vector<double> postprocess_grid{0,  2,  4,  6,  8, 11, 16,
                                         22, 32, 40, 48, 56, 64};  // ADC units
    bool round_adc = false;  // metrics on rounded ADC output instead of raw
};

// One row per codec. The gated dual-head codec row uses its swept threshold;
// each baseline is evaluated at the surveyed bound whose ratio lands closest
// to the dual-head ratio, after its own post-processing sweep. A codec
// failure marks the row unavailable and the run continues.
std::vector<MetricsReport> run_benchmark(ModelBundle* bundle,
                                         const std::vector<BaselineCodec*>& codecs,
                                         const std::vector<Frame>& frames,
                                         const BenchmarkOptions& options);

void write_metrics_csv(const std::vector<MetricsReport>& rows,
                       const std::filesystem::path& path);
std::vector<MetricsReport> read_metrics_csv(const std::filesystem::path& path);

}  // namespace bcae
