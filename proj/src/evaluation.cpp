#include "bcae/evaluation.hpp"

#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include "bcae/half.hpp"
#include "bcae/rng.hpp"
#include "bcae/transform.hpp"

namespace bcae {

// --- metrics ----------------------------------------------------------------

double mse_metric(std::span<const float> recon, const Frame& truth) {
    detail::require_same_size(recon.size(), truth.values.size(), "mse_metric");
    double acc = 0.0;
    for (std::size_t i = 0; i < recon.size(); ++i) {
        const double d = static_cast<double>(recon[i]) - static_cast<double>(truth.values[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(recon.size());
}

double log_mae_metric(std::span<const float> recon, const Frame& truth) {
    detail::require_same_size(recon.size(), truth.values.size(), "log_mae_metric");
    const double inv_ln2 = 1.0 / std::log(2.0);
    double acc = 0.0;
    for (std::size_t i = 0; i < recon.size(); ++i) {
        if (recon[i] < 0.0f) {
            throw format_error("log_mae_metric: negative reconstruction value at voxel " +
                               std::to_string(i));
        }
        const double lr = std::log1p(static_cast<double>(recon[i])) * inv_ln2;
        const double lt = std::log1p(static_cast<double>(truth.values[i])) * inv_ln2;
        acc += std::abs(lr - lt);
    }
    return acc / static_cast<double>(recon.size());
}

double psnr_metric(double mse, double peak) {
    if (mse < 0.0) throw format_error("psnr_metric: negative mse");
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

double zero_fraction(std::span<const float> values) {
    std::size_t z = 0;
    for (float v : values) z += (v == 0.0f);
    return static_cast<double>(z) / static_cast<double>(values.size());
}

// --- threshold sweep -----------------------------------------------------------

SweepResult threshold_sweep(ModelBundle& bundle, const std::vector<Frame>& frames,
                            std::span<const double> h_grid) {
    if (h_grid.empty()) throw format_error("threshold_sweep: empty threshold grid");
    if (frames.empty()) throw format_error("threshold_sweep: no frames");

    std::vector<double> mse_sums(h_grid.size(), 0.0);
    std::vector<float> combined;
    for (const Frame& f : frames) {
        // go through the half-precision pipeline the deployed decoder sees
        Tensor latent = bundle.encode(frame_to_tensor(f));
        for (auto& v : latent.vec()) v = half_to_float(float_to_half(v));
        DecodeResult out = bundle.decode(latent);
        combined.resize(out.reg.size());
        for (std::size_t hi = 0; hi < h_grid.size(); ++hi) {
            const Threshold h(h_grid[hi]);
            if (bundle.variant == VariantKind::cae || !bundle.has_segmentation_head()) {
                combined.assign(out.reg.vec().begin(), out.reg.vec().end());
            } else if (bundle.variant == VariantKind::bcae) {
                combine_output<float>(out.reg.vec(), out.seg.vec(), h, combined);
            } else {
                combine_output_without_transform<float>(out.reg.vec(), out.seg.vec(), h,
                                                        combined);
            }
            mse_sums[hi] += mse_metric(combined, f);
        }
    }

    SweepResult r;
    r.curve.reserve(h_grid.size());
    for (std::size_t i = 0; i < h_grid.size(); ++i) {
        r.curve.emplace_back(h_grid[i], mse_sums[i] / static_cast<double>(frames.size()));
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < r.curve.size(); ++i) {
        const bool better = r.curve[i].second < r.curve[best].second ||
                            (r.curve[i].second == r.curve[best].second &&
                             r.curve[i].first < r.curve[best].first);
        if (better) best = i;
    }
    r.h_best = r.curve[best].first;
    return r;
}

// --- baseline post-processing -----------------------------------------------------

void baseline_postprocess(std::span<float> recon, double h) {
    for (auto& v : recon) {
        if (static_cast<double>(v) < h) v = 0.0f;
    }
}

double baseline_postprocess_sweep(const std::vector<std::vector<float>>& recons,
                                  const std::vector<Frame>& truths,
                                  std::span<const double> h_grid) {
    if (h_grid.empty()) throw format_error("baseline_postprocess_sweep: empty grid");
    detail::require_same_size(recons.size(), truths.size(), "baseline_postprocess_sweep");
    double best_h = h_grid[0];
    double best_mse = std::numeric_limits<double>::infinity();
    std::vector<float> tmp;
    for (double h : h_grid) {
        double acc = 0.0;
        for (std::size_t i = 0; i < recons.size(); ++i) {
            tmp = recons[i];
            baseline_postprocess(tmp, h);
            acc += mse_metric(tmp, truths[i]);
        }
        acc /= static_cast<double>(recons.size());
        if (acc < best_mse || (acc == best_mse && h < best_h)) {
            best_mse = acc;
            best_h = h;
        }
    }
    return best_h;
}

// --- reference codec -----------------------------------------------------------------
// Blob: "RQZ1" | 3x u32 dims | f64 step | u64 compressed size | deflate of
// little-endian u16 quantization indices.

std::vector<std::uint8_t> ReferenceCodec::compress(const Frame& frame, double linf_bound) {
    if (linf_bound < 0.0) throw format_error("reference codec: negative error bound");
    const double step = std::max(2.0 * linf_bound, 1.0);

    std::vector<std::uint8_t> raw(frame.values.size() * 2);
    for (std::size_t i = 0; i < frame.values.size(); ++i) {
        const auto q = static_cast<std::uint16_t>(
            std::lround(static_cast<double>(frame.values[i]) / step));
        raw[2 * i] = static_cast<std::uint8_t>(q & 0xff);
        raw[2 * i + 1] = static_cast<std::uint8_t>(q >> 8);
    }

    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> packed(bound);
    if (compress2(packed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
        throw format_error("reference codec: deflate failed");
    }
    packed.resize(bound);

    std::ostringstream os(std::ios::binary);
    os.write("RQZ1", 4);
    for (int i = 0; i < 3; ++i) write_u32le(os, static_cast<std::uint32_t>(frame.shape[i]));
    write_f64le(os, step);
    write_u64le(os, packed.size());
    os.write(reinterpret_cast<const char*>(packed.data()),
             static_cast<std::streamsize>(packed.size()));
    const std::string s = os.str();
    return {s.begin(), s.end()};
}

RealFrame ReferenceCodec::decompress(const std::vector<std::uint8_t>& blob) {
    std::istringstream is(std::string(blob.begin(), blob.end()), std::ios::binary);
    ByteReader r(is, "reference blob");
    r.expect_magic("RQZ1", "reference codec blob");
    Dims3 dims;
    for (int i = 0; i < 3; ++i) dims[i] = static_cast<int>(r.u32("dim"));
    const double step = r.f64("step");
    const std::uint64_t packed_size = r.u64("compressed size");
    std::vector<std::uint8_t> packed(packed_size);
    r.read_exact(packed.data(), packed_size, "compressed payload");

    const std::size_t n = dims.volume();
    std::vector<std::uint8_t> raw(n * 2);
    uLongf raw_size = static_cast<uLongf>(raw.size());
    if (uncompress(raw.data(), &raw_size, packed.data(), static_cast<uLong>(packed.size())) !=
            Z_OK ||
        raw_size != raw.size()) {
        throw format_error("reference codec: inflate failed");
    }

    RealFrame out;
    out.shape = dims;
    out.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint16_t q = static_cast<std::uint16_t>(raw[2 * i] | (raw[2 * i + 1] << 8));
        out.values[i] = static_cast<float>(q * step);
    }
    return out;
}

// --- plugin codec -----------------------------------------------------------------------

namespace {

class TempFile {
public:
    explicit TempFile(const char* tag) {
        static std::uint64_t counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("bcae-" + std::string(tag) + "-" + std::to_string(::getpid()) + "-" +
                 std::to_string(counter++));
    }
    ~TempFile() {
        std::error_code ec;
        std::filesystem::remove(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

void run_command(const std::string& cmd) {
    const int rc = std::system(cmd.c_str());
    if (rc != 0) {
        throw plugin_error("plugin command failed (status " + std::to_string(rc) + "): " + cmd);
    }
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw plugin_error("plugin produced no output file " + p.string());
    std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
    return data;
}

std::string quoted(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

}  // namespace

PluginCodec::PluginCodec(std::filesystem::path executable) : exe_(std::move(executable)) {
    if (!std::filesystem::exists(exe_)) {
        throw plugin_error("plugin executable not found: " + exe_.string());
    }
}

std::string PluginCodec::name() const { return "plugin:" + exe_.filename().string(); }

std::vector<std::uint8_t> PluginCodec::compress(const Frame& frame, double linf_bound) {
    TempFile in("in"), out("out");
    write_frame(frame, in.path());
    char bound[64];
    std::snprintf(bound, sizeof bound, "%.17g", linf_bound);
    run_command(quoted(exe_) + " compress --bound " + bound + " < " + quoted(in.path()) + " > " +
                quoted(out.path()));
    return slurp(out.path());
}

RealFrame PluginCodec::decompress(const std::vector<std::uint8_t>& blob) {
    TempFile in("code"), out("frame");
    {
        std::ofstream os(in.path(), std::ios::binary);
        os.write(reinterpret_cast<const char*>(blob.data()),
                 static_cast<std::streamsize>(blob.size()));
        if (!os) throw io_error("plugin: cannot stage compressed payload");
    }
    run_command(quoted(exe_) + " decompress < " + quoted(in.path()) + " > " + quoted(out.path()));
    Frame f = read_frame(out.path());
    RealFrame rf;
    rf.shape = f.shape;
    rf.values.assign(f.values.begin(), f.values.end());
    return rf;
}

// --- error-bound survey ---------------------------------------------------------------------

std::vector<BoundSurveyRow> survey_error_bounds(BaselineCodec& codec,
                                                const std::vector<Frame>& frames,
                                                std::span<const double> bounds) {
    if (frames.empty()) throw format_error("survey_error_bounds: no frames");
    std::vector<BoundSurveyRow> rows;
    rows.reserve(bounds.size());
    for (double b : bounds) {
        BoundSurveyRow row;
        row.bound = b;
        double ratio_sum = 0.0, mse_sum = 0.0;
        int ok = 0;
        for (const Frame& f : frames) {
            try {
                const auto blob = codec.compress(f, b);
                const RealFrame rec = codec.decompress(blob);
                if (rec.shape != f.shape) {
                    throw format_error("survey_error_bounds: codec returned wrong shape");
                }
                ratio_sum += static_cast<double>(f.values.size() * 2) /
                             static_cast<double>(blob.size());
                mse_sum += mse_metric(rec.values, f);
                ++ok;
            } catch (const std::exception&) {
                ++row.failures;
            }
        }
        if (ok > 0) {
            row.mean_ratio = ratio_sum / ok;
            row.mean_mse = mse_sum / ok;
        }
        rows.push_back(row);
    }
    return rows;
}

// --- histograms ---------------------------------------------------------------------------------

HistogramReport histogram_report(const std::vector<Frame>& frames,
                                 const std::vector<std::vector<float>>& recons, int n_bins,
                                 std::uint64_t seed, std::uint64_t samples) {
    detail::require_same_size(frames.size(), recons.size(), "histogram_report");
    if (frames.empty()) throw format_error("histogram_report: no frames");
    if (n_bins < 1) throw format_error("histogram_report: n_bins must be >= 1");
    for (std::size_t i = 0; i < frames.size(); ++i) {
        detail::require_same_size(frames[i].values.size(), recons[i].size(),
                                  "histogram_report frame");
    }

    HistogramReport h;
    h.n_bins = n_bins;
    h.truth_counts.assign(static_cast<std::size_t>(n_bins), 0);
    h.recon_counts.assign(static_cast<std::size_t>(n_bins), 0);
    h.joint.assign(static_cast<std::size_t>(n_bins) * n_bins, 0);
    h.sample_count = samples;

    const double inv_ln2 = 1.0 / std::log(2.0);
    auto bin_of = [&](double v) {
        const double lv = std::log1p(std::max(v, 0.0)) * inv_ln2;
        int b = static_cast<int>((lv - h.lo) / (h.hi - h.lo) * n_bins);
        return std::clamp(b, 0, n_bins - 1);
    };

    Rng rng(derive_seed(seed, "histogram-sampling"));
    for (std::uint64_t s = 0; s < samples; ++s) {
        const std::size_t fi = static_cast<std::size_t>(rng.below(frames.size()));
        const std::size_t vi = static_cast<std::size_t>(rng.below(frames[fi].values.size()));
        const int bt = bin_of(static_cast<double>(frames[fi].values[vi]));
        const int br = bin_of(static_cast<double>(recons[fi][vi]));
        ++h.truth_counts[bt];
        ++h.recon_counts[br];
        ++h.joint[static_cast<std::size_t>(bt) * n_bins + br];
    }
    return h;
}

void write_histogram_csv(const HistogramReport& h, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw io_error("write_histogram_csv: cannot open " + path.string());
    os << "bin_lo,bin_hi,count_truth,count_recon\n";
    os.precision(17);
    for (int i = 0; i < h.n_bins; ++i) {
        os << h.bin_lo(i) << ',' << h.bin_hi(i) << ',' << h.truth_counts[i] << ','
           << h.recon_counts[i] << '\n';
    }
    if (!os) throw io_error("write_histogram_csv: write failed");
}

// --- benchmark ------------------------------------------------------------------------------------

namespace {

std::vector<double> default_h_grid() {
    std::vector<double> g;
    for (int i = 0; i <= 50; ++i) g.push_back(i * 0.02);
    return g;
}

MetricsReport pooled_metrics(const std::vector<std::vector<float>>& recons,
                             const std::vector<Frame>& truths) {
    MetricsReport m;
    double mse_acc = 0.0, lmae_acc = 0.0;
    std::size_t voxels = 0, zero_t = 0, zero_r = 0;
    for (std::size_t i = 0; i < recons.size(); ++i) {
        const std::size_t n = truths[i].values.size();
        mse_acc += mse_metric(recons[i], truths[i]) * static_cast<double>(n);
        lmae_acc += log_mae_metric(recons[i], truths[i]) * static_cast<double>(n);
        voxels += n;
        for (auto v : truths[i].values) zero_t += (v == 0);
        for (auto v : recons[i]) zero_r += (v == 0.0f);
    }
    m.n_voxels = voxels;
    m.mse = mse_acc / static_cast<double>(voxels);
    m.log_mae = lmae_acc / static_cast<double>(voxels);
    m.psnr_db = psnr_metric(m.mse);
    m.psnr_paper_scale = m.psnr_db / 10.0;
    m.zero_fraction_true = static_cast<double>(zero_t) / static_cast<double>(voxels);
    m.zero_fraction_recon = static_cast<double>(zero_r) / static_cast<double>(voxels);
    return m;
}

}  // namespace

std::vector<MetricsReport> run_benchmark(ModelBundle* bundle,
                                         const std::vector<BaselineCodec*>& codecs,
                                         const std::vector<Frame>& frames,
                                         const BenchmarkOptions& options) {
    if (frames.empty()) throw format_error("run_benchmark: no frames");
    std::vector<MetricsReport> rows;
    double anchor_ratio = canonical_compression_ratio();

    if (bundle != nullptr) {
        const std::vector<double> grid =
            options.h_grid.empty() ? default_h_grid() : options.h_grid;
        const SweepResult sweep = threshold_sweep(*bundle, frames, grid);
        std::vector<std::vector<float>> recons;
        recons.reserve(frames.size());
        for (const Frame& f : frames) {
            CompressedContainer c = compress(*bundle, f,
                                             static_cast<float>(sweep.h_best));
            if (options.round_adc) {
                Frame rec = decompress(*bundle, c, Threshold(sweep.h_best));
                std::vector<float> rv(rec.values.begin(), rec.values.end());
                recons.push_back(std::move(rv));
            } else {
                recons.push_back(decompress_raw(*bundle, c, Threshold(sweep.h_best)));
            }
        }
        MetricsReport m = pooled_metrics(recons, frames);
        m.codec = variant_name(bundle->variant);
        const std::uint32_t in_shape[] = {1, static_cast<std::uint32_t>(bundle->input_shape.d0),
                                          static_cast<std::uint32_t>(bundle->input_shape.d1),
                                          static_cast<std::uint32_t>(bundle->input_shape.d2)};
        const std::uint32_t code_shape[] = {
            static_cast<std::uint32_t>(bundle->latent_channels()),
            static_cast<std::uint32_t>(bundle->latent_spatial().d0),
            static_cast<std::uint32_t>(bundle->latent_spatial().d1),
            static_cast<std::uint32_t>(bundle->latent_spatial().d2)};
        m.compression_ratio = compression_ratio(in_shape, 16, code_shape, 16);
        anchor_ratio = m.compression_ratio;
        m.value_domain = options.round_adc ? "rounded" : "raw";
        m.threshold = sweep.h_best;
        rows.push_back(std::move(m));
    }

    for (BaselineCodec* codec : codecs) {
        MetricsReport m;
        m.codec = codec->name();
        try {
            const auto survey = survey_error_bounds(*codec, frames, options.bounds);
            // evaluate at the surveyed bound with ratio closest to the anchor
            const BoundSurveyRow* pick = nullptr;
            for (const auto& row : survey) {
                if (row.failures == static_cast<int>(frames.size())) continue;
                if (pick == nullptr || std::abs(row.mean_ratio - anchor_ratio) <
                                           std::abs(pick->mean_ratio - anchor_ratio)) {
                    pick = &row;
                }
            }
            if (pick == nullptr) throw plugin_error(codec->name() + ": no usable bound");

            std::vector<std::vector<float>> recons;
            recons.reserve(frames.size());
            double ratio_sum = 0.0;
            for (const Frame& f : frames) {
                const auto blob = codec->compress(f, pick->bound);
                ratio_sum +=
                    static_cast<double>(f.values.size() * 2) / static_cast<double>(blob.size());
                recons.push_back(codec->decompress(blob).values);
            }
            const double h = baseline_postprocess_sweep(recons, frames,
                                                        options.postprocess_grid);
            for (auto& r : recons) baseline_postprocess(r, h);
            MetricsReport pm = pooled_metrics(recons, frames);
            pm.codec = m.codec;
            pm.compression_ratio = ratio_sum / static_cast<double>(frames.size());
            pm.value_domain = "raw";
            pm.threshold = h;
            pm.bound = pick->bound;
            m = std::move(pm);
        } catch (const std::exception&) {
            m.available = false;
        }
        rows.push_back(std::move(m));
    }
    return rows;
}

void write_metrics_csv(const std::vector<MetricsReport>& rows,
                       const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw io_error("write_metrics_csv: cannot open " + path.string());
    os << "codec,available,compression_ratio,mse,log_mae,psnr_db,psnr_paper_scale,"
          "zero_fraction_true,zero_fraction_recon,n_voxels,value_domain,threshold,bound\n";
    os.precision(17);
    for (const auto& m : rows) {
        os << m.codec << ',' << (m.available ? 1 : 0) << ',' << m.compression_ratio << ','
           << m.mse << ',' << m.log_mae << ',' << m.psnr_db << ',' << m.psnr_paper_scale << ','
           << m.zero_fraction_true << ',' << m.zero_fraction_recon << ',' << m.n_voxels << ','
           << m.value_domain << ',' << m.threshold << ',' << m.bound << '\n';
    }
    if (!os) throw io_error("write_metrics_csv: write failed");
}

std::vector<MetricsReport> read_metrics_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw io_error("read_metrics_csv: cannot open " + path.string());
    std::string line;
    if (!std::getline(is, line)) throw format_error("read_metrics_csv: empty file");
    std::vector<MetricsReport> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> parts;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) parts.push_back(cell);
        if (parts.size() != 13) {
            throw format_error("read_metrics_csv: expected 13 columns, got " +
                               std::to_string(parts.size()));
        }
        MetricsReport m;
        m.codec = parts[0];
        m.available = parts[1] == "1";
        m.compression_ratio = std::stod(parts[2]);
        m.mse = std::stod(parts[3]);
        m.log_mae = std::stod(parts[4]);
        m.psnr_db = std::stod(parts[5]);
        m.psnr_paper_scale = std::stod(parts[6]);
        m.zero_fraction_true = std::stod(parts[7]);
        m.zero_fraction_recon = std::stod(parts[8]);
        m.n_voxels = static_cast<std::size_t>(std::stoull(parts[9]));
        m.value_domain = parts[10];
        m.threshold = std::stod(parts[11]);
        m.bound = std::stod(parts[12]);
        rows.push_back(std::move(m));
    }
    return rows;
}

}  // namespace bcae
