// Command-line front end: generate / train / compress / decompress /
// evaluate / sweep / benchmark / defaults. Every run writes a manifest
// (resolved options + code version + config hash) next to its outputs so any
// artifact can be regenerated from the manifest plus the input data.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "bcae/codec.hpp"
#include "bcae/evaluation.hpp"
#include "bcae/frames.hpp"
#include "bcae/training.hpp"
#include "bcae/transform.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kCodeVersion = "0.1.0";

std::string log_level = "info";

void log_event(const std::string& level, const std::string& event,
               const std::map<std::string, std::string>& kv = {}) {
    if (log_level == "quiet") return;
    if (log_level == "warn" && level == "info") return;
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char ts[32];
    std::strftime(ts, sizeof ts, "%FT%TZ", std::gmtime(&t));
    std::cerr << "ts=" << ts << " level=" << level << " event=" << event;
    for (const auto& [k, v] : kv) std::cerr << ' ' << k << '=' << v;
    std::cerr << '\n';
}

void write_manifest(const fs::path& next_to, const std::string& command, const json& options) {
    json m;
    m["command"] = command;
    m["code_version"] = kCodeVersion;
    m["options"] = options;
    m["config_hash"] = bcae::fnv1a64(options.dump());
    fs::path p = next_to;
    if (fs::is_directory(next_to)) {
        p = next_to / "manifest.json";
    } else {
        p += ".manifest.json";
    }
    std::ofstream os(p);
    if (!os) throw bcae::io_error("cannot write manifest " + p.string());
    os << m.dump(2) << '\n';
}

bcae::Dims3 parse_shape(const std::string& s) {
    bcae::Dims3 d;
    if (std::sscanf(s.c_str(), "%d,%d,%d", &d.d0, &d.d1, &d.d2) != 3 || d.volume() == 0) {
        throw bcae::format_error("bad shape '" + s + "', expected A,H,R");
    }
    return d;
}

std::vector<double> parse_grid(const std::string& s) {
    double lo = 0, hi = 0, step = 0;
    if (std::sscanf(s.c_str(), "%lf:%lf:%lf", &lo, &hi, &step) != 3 || step <= 0 || hi < lo) {
        throw bcae::format_error("bad grid '" + s + "', expected lo:hi:step");
    }
    std::vector<double> g;
    for (double v = lo; v <= hi + 1e-12; v += step) g.push_back(std::min(v, hi));
    return g;
}

std::vector<double> parse_list(const std::string& s) {
    std::vector<double> out;
    std::string cur;
    for (char c : s + ",") {
        if (c == ',') {
            if (!cur.empty()) out.push_back(std::stod(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (out.empty()) throw bcae::format_error("empty list '" + s + "'");
    return out;
}

std::vector<bcae::Frame> load_frames_dir(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw bcae::io_error("data directory not found: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.path().extension() == ".tpcf") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw bcae::io_error("no .tpcf frames in " + dir.string());
    std::vector<bcae::Frame> frames;
    frames.reserve(files.size());
    for (const auto& f : files) frames.push_back(bcae::read_frame(f));
    return frames;
}

// --- subcommands ---------------------------------------------------------------

int cmd_generate(int n_frames, double occupancy, std::uint64_t seed, const std::string& out_dir,
                 const std::string& shape_str, int n_tracks, double width) {
    const bcae::Dims3 shape = parse_shape(shape_str);
    fs::create_directories(out_dir);
    bcae::SyntheticConfig cfg;
    cfg.shape = shape;
    cfg.target_occupancy = occupancy;
    cfg.n_tracks = n_tracks;
    cfg.deposit_width = width;
    for (int i = 0; i < n_frames; ++i) {
        cfg.seed = bcae::derive_seed(seed, "frame", static_cast<std::uint64_t>(i));
        bcae::Frame f = bcae::generate_synthetic_frame(cfg);
        char name[32];
        std::snprintf(name, sizeof name, "frame_%04d.tpcf", i);
        bcae::write_frame(f, fs::path(out_dir) / name);
        log_event("info", "frame_generated",
                  {{"index", std::to_string(i)},
                   {"occupancy", std::to_string(bcae::nonzero_fraction(f))}});
    }
    json opts{{"n_frames", n_frames}, {"occupancy", occupancy},   {"seed", seed},
              {"out", out_dir},       {"shape", shape_str},       {"n_tracks", n_tracks},
              {"width", width}};
    write_manifest(out_dir, "generate", opts);
    return bcae::exit_ok;
}

int cmd_train(const std::string& variant, const std::string& data_dir, int epochs,
              int batch_size, std::uint64_t seed, const std::string& out,
              const std::string& resume, bool downscale, const std::string& input_shape_str,
              double lr, int split_train, int split_test, double threshold,
              const std::string& log_csv, int checkpoint_every) {
    auto frames = load_frames_dir(data_dir);
    const bcae::Dims3 shape = frames.front().shape;
    for (const auto& f : frames) {
        if (f.shape != shape) {
            throw bcae::shape_error("training frames disagree on shape: " + shape.str() +
                                    " vs " + f.shape.str());
        }
    }
    if (downscale && shape != bcae::Dims3{48, 64, 16}) {
        throw bcae::shape_error("--downscale expects (48,64,16) frames, data is " + shape.str());
    }

    bcae::TrainConfig tc;
    tc.variant = bcae::variant_from_name(variant);
    tc.epochs = epochs;
    tc.batch_size = batch_size;
    tc.seed = seed;
    tc.lr_initial = lr;
    tc.split_train = split_train;
    tc.split_test = split_test;
    tc.train_threshold = threshold;
    tc.validate();

    if (static_cast<int>(frames.size()) < split_train) {
        throw bcae::format_error("data has " + std::to_string(frames.size()) +
                                 " frames but --split-train=" + std::to_string(split_train) +
                                 "; pass explicit split sizes");
    }
    std::vector<bcae::Frame> train_set(frames.begin(), frames.begin() + split_train);

    bcae::Trainer trainer =
        resume.empty() ? bcae::Trainer(bcae::NetworkConfig::canonical(), tc, shape)
                       : bcae::Trainer::load_checkpoint(resume, tc);

    while (trainer.completed_epochs() < tc.epochs) {
        const bcae::EpochStats st = trainer.train_epoch(train_set);
        log_event("info", "epoch",
                  {{"epoch", std::to_string(st.epoch)},
                   {"lr", std::to_string(st.lr)},
                   {"rho_s", std::to_string(st.rho_s)},
                   {"rho_r", std::to_string(st.rho_r)},
                   {"seg_weight", std::to_string(st.seg_weight)},
                   {"total", std::to_string(st.total)}});
        if (checkpoint_every > 0 && st.epoch % checkpoint_every == 0) {
            trainer.save_checkpoint(out);
        }
    }
    trainer.save_checkpoint(out);
    const fs::path csv = log_csv.empty() ? fs::path(out + ".log.csv") : fs::path(log_csv);
    bcae::write_training_log(trainer.history(), csv);

    json opts{{"variant", variant},         {"data", data_dir},
              {"epochs", epochs},           {"batch_size", batch_size},
              {"seed", seed},               {"out", out},
              {"downscale", downscale},     {"input_shape", input_shape_str},
              {"lr", lr},                   {"split_train", split_train},
              {"split_test", split_test},   {"threshold", threshold},
              {"train_config", json::parse(tc.to_json())}};
    write_manifest(out, "train", opts);
    log_event("info", "training_done", {{"checkpoint", out}});
    return bcae::exit_ok;
}

int cmd_compress(const std::string& model, const std::string& in, const std::string& out,
                 double threshold) {
    bcae::ModelBundle bundle = bcae::Trainer::load_model(model);
    bcae::Frame frame = bcae::read_frame(fs::path(in));
    bcae::CompressedContainer c =
        bcae::compress(bundle, frame, static_cast<float>(threshold));
    bcae::serialize_container(c, fs::path(out));
    const double ratio =
        static_cast<double>(frame.values.size() * 2) / static_cast<double>(c.payload_bytes());
    log_event("info", "compressed",
              {{"payload_bytes", std::to_string(c.payload_bytes())},
               {"header_bytes", std::to_string(bcae::CompressedContainer::header_bytes())},
               {"element_ratio", std::to_string(ratio)}});
    json opts{{"model", model}, {"in", in}, {"out", out}, {"threshold", threshold}};
    write_manifest(out, "compress", opts);
    return bcae::exit_ok;
}

int cmd_decompress(const std::string& model, const std::string& in, const std::string& out,
                   double threshold, bool use_container_threshold) {
    bcae::ModelBundle bundle = bcae::Trainer::load_model(model);
    bcae::CompressedContainer c = bcae::parse_container(fs::path(in));
    const double h = use_container_threshold ? c.default_threshold : threshold;
    bcae::Frame f = bcae::decompress(bundle, c, bcae::Threshold(h));
    bcae::write_frame(f, fs::path(out));
    json opts{{"model", model}, {"in", in}, {"out", out}, {"threshold", h}};
    write_manifest(out, "decompress", opts);
    return bcae::exit_ok;
}

int cmd_evaluate(const std::string& model, const std::string& data_dir, const std::string& sweep,
                 const std::string& out, const std::string& hist_out, std::uint64_t seed,
                 bool round_adc) {
    bcae::ModelBundle bundle = bcae::Trainer::load_model(model);
    auto frames = load_frames_dir(data_dir);
    const std::vector<double> grid = parse_grid(sweep);
    const bcae::SweepResult sw = bcae::threshold_sweep(bundle, frames, grid);

    auto metrics_at = [&](double h) {
        std::vector<std::vector<float>> recons;
        recons.reserve(frames.size());
        for (const auto& f : frames) {
            bcae::CompressedContainer c = bcae::compress(bundle, f, static_cast<float>(h));
            if (round_adc) {
                bcae::Frame r = bcae::decompress(bundle, c, bcae::Threshold(h));
                recons.emplace_back(r.values.begin(), r.values.end());
            } else {
                recons.push_back(bcae::decompress_raw(bundle, c, bcae::Threshold(h)));
            }
        }
        double mse = 0, lmae = 0;
        std::size_t vox = 0, zt = 0, zr = 0;
        for (std::size_t i = 0; i < frames.size(); ++i) {
            mse += bcae::mse_metric(recons[i], frames[i]) *
                   static_cast<double>(frames[i].values.size());
            lmae += bcae::log_mae_metric(recons[i], frames[i]) *
                    static_cast<double>(frames[i].values.size());
            vox += frames[i].values.size();
            for (auto v : frames[i].values) zt += (v == 0);
            for (auto v : recons[i]) zr += (v == 0.0f);
        }
        bcae::MetricsReport m;
        m.codec = bcae::variant_name(bundle.variant);
        m.mse = mse / static_cast<double>(vox);
        m.log_mae = lmae / static_cast<double>(vox);
        m.psnr_db = bcae::psnr_metric(m.mse);
        m.psnr_paper_scale = m.psnr_db / 10.0;
        m.zero_fraction_true = static_cast<double>(zt) / static_cast<double>(vox);
        m.zero_fraction_recon = static_cast<double>(zr) / static_cast<double>(vox);
        m.n_voxels = vox;
        m.value_domain = round_adc ? "rounded" : "raw";
        m.threshold = h;
        const std::uint32_t in_shape[] = {1, static_cast<std::uint32_t>(bundle.input_shape.d0),
                                          static_cast<std::uint32_t>(bundle.input_shape.d1),
                                          static_cast<std::uint32_t>(bundle.input_shape.d2)};
        const std::uint32_t code_shape[] = {
            static_cast<std::uint32_t>(bundle.latent_channels()),
            static_cast<std::uint32_t>(bundle.latent_spatial().d0),
            static_cast<std::uint32_t>(bundle.latent_spatial().d1),
            static_cast<std::uint32_t>(bundle.latent_spatial().d2)};
        m.compression_ratio = bcae::compression_ratio(in_shape, 16, code_shape, 16);
        return std::pair<bcae::MetricsReport, std::vector<std::vector<float>>>(
            std::move(m), std::move(recons));
    };

    auto [best, best_recons] = metrics_at(sw.h_best);
    auto [at_half, half_recons] = metrics_at(0.5);
    (void)half_recons;
    bcae::write_metrics_csv({best, at_half}, fs::path(out));

    fs::path curve_path(out);
    curve_path.replace_extension(".curve.csv");
    {
        std::ofstream os(curve_path);
        os << "h,mean_mse\n";
        os.precision(17);
        for (auto [h, mse] : sw.curve) os << h << ',' << mse << '\n';
    }
    if (!hist_out.empty()) {
        bcae::HistogramReport hr = bcae::histogram_report(frames, best_recons, 50, seed);
        bcae::write_histogram_csv(hr, fs::path(hist_out));
    }
    log_event("info", "evaluated",
              {{"h_best", std::to_string(sw.h_best)},
               {"mse", std::to_string(best.mse)},
               {"log_mae", std::to_string(best.log_mae)}});
    json opts{{"model", model},   {"data", data_dir}, {"sweep", sweep},
              {"out", out},       {"hist", hist_out}, {"seed", seed},
              {"round", round_adc}};
    write_manifest(out, "evaluate", opts);
    return bcae::exit_ok;
}

int cmd_sweep(const std::string& model, const std::string& data_dir, const std::string& grid_str,
              const std::string& out) {
    bcae::ModelBundle bundle = bcae::Trainer::load_model(model);
    auto frames = load_frames_dir(data_dir);
    const std::vector<double> grid = parse_grid(grid_str);
    const bcae::SweepResult sw = bcae::threshold_sweep(bundle, frames, grid);
    std::ofstream os(out);
    if (!os) throw bcae::io_error("cannot open " + out);
    os << "h,mean_mse\n";
    os.precision(17);
    for (auto [h, mse] : sw.curve) os << h << ',' << mse << '\n';
    log_event("info", "sweep_done", {{"h_best", std::to_string(sw.h_best)}});
    json opts{{"model", model}, {"data", data_dir}, {"grid", grid_str}, {"out", out}};
    write_manifest(out, "sweep", opts);
    return bcae::exit_ok;
}

int cmd_benchmark(const std::string& codecs_str, const std::string& data_dir,
                  const std::string& bounds_str, const std::string& model,
                  const std::string& out) {
    auto frames = load_frames_dir(data_dir);
    bcae::BenchmarkOptions opts;
    if (!bounds_str.empty()) opts.bounds = parse_list(bounds_str);

    std::vector<std::unique_ptr<bcae::BaselineCodec>> owned;
    std::vector<bcae::BaselineCodec*> baselines;
    bcae::ModelBundle bundle;
    bool with_bundle = false;

    std::string cur;
    for (char c : codecs_str + ",") {
        if (c != ',') {
            cur += c;
            continue;
        }
        if (cur.empty()) continue;
        if (cur == "bcae") {
            if (model.empty()) {
                throw bcae::format_error("benchmarking 'bcae' requires --model");
            }
            bundle = bcae::Trainer::load_model(model);
            with_bundle = true;
        } else if (cur == "reference") {
            owned.push_back(std::make_unique<bcae::ReferenceCodec>());
            baselines.push_back(owned.back().get());
        } else if (cur.rfind("plugin:", 0) == 0) {
            owned.push_back(std::make_unique<bcae::PluginCodec>(cur.substr(7)));
            baselines.push_back(owned.back().get());
        } else {
            throw bcae::format_error("unknown codec '" + cur +
                                     "' (expected bcae|reference|plugin:PATH)");
        }
        cur.clear();
    }

    auto rows = bcae::run_benchmark(with_bundle ? &bundle : nullptr, baselines, frames, opts);
    bcae::write_metrics_csv(rows, fs::path(out));

    std::printf("%-18s %10s %12s %10s %10s\n", "codec", "ratio", "mse", "log_mae", "psnr/10");
    for (const auto& r : rows) {
        if (!r.available) {
            std::printf("%-18s %10s\n", r.codec.c_str(), "unavailable");
            continue;
        }
        std::printf("%-18s %10.3f %12.4f %10.4f %10.4f\n", r.codec.c_str(), r.compression_ratio,
                     r.mse, r.log_mae, r.psnr_paper_scale);
    }
    std::printf("full-scale reference targets (context, not asserted):\n");
    for (const auto& t : bcae::kFullScaleReferenceTargets) {
        std::printf("%-18s %10.2f %12.2f %10.3f %10.3f\n", t.codec, t.compression_ratio, t.mse,
                     t.log_mae, t.psnr_paper_scale);
    }

    json jopts{{"codecs", codecs_str},
               {"data", data_dir},
               {"bounds", bounds_str},
               {"model", model},
               {"out", out}};
    write_manifest(out, "benchmark", jopts);
    return bcae::exit_ok;
}

int cmd_defaults() {
    json j;
    j["batch_size"] = bcae::TrainConfig{}.batch_size;
    j["epochs"] = bcae::TrainConfig{}.epochs;
    j["lr_initial"] = bcae::TrainConfig{}.lr_initial;
    j["lr_decay_factor"] = bcae::TrainConfig{}.lr_decay_factor;
    j["lr_decay_period"] = bcae::TrainConfig{}.lr_decay_period;
    j["weight_decay"] = bcae::TrainConfig{}.weight_decay;
    j["beta1"] = bcae::TrainConfig{}.beta1;
    j["beta2"] = bcae::TrainConfig{}.beta2;
    j["focal_gamma"] = bcae::FocalParams{}.gamma;
    j["soft_label_mu"] = bcae::SoftLabelParams{}.mu;
    j["soft_label_alpha"] = bcae::SoftLabelParams{}.alpha;
    j["train_threshold"] = bcae::TrainConfig{}.train_threshold;
    j["transform_shift"] = bcae::TransformParams{}.shift;
    j["transform_scale"] = bcae::TransformParams{}.scale;
    std::cout << j.dump(2) << '\n';
    return bcae::exit_ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dual-head autoencoder compression toolkit for sparse detector frames"};
    app.require_subcommand(1);
    app.set_config("--config");
    app.add_option("--log-level", log_level, "quiet|warn|info")->capture_default_str();

    // generate
    auto* gen = app.add_subcommand("generate", "Write synthetic frames");
    int n_frames = 1;
    double occupancy = 0.10;
    std::uint64_t seed = 0;
    std::string out_dir = "frames";
    std::string shape_str = "192,249,16";
    int n_tracks = 0;
    double width = 1.1;
    gen->add_option("--n-frames", n_frames)->check(CLI::PositiveNumber);
    gen->add_option("--occupancy", occupancy);
    gen->add_option("--seed", seed);
    gen->add_option("--out", out_dir)->required();
    gen->add_option("--shape", shape_str, "frame shape A,H,R");
    gen->add_option("--n-tracks", n_tracks, "0 = derive from occupancy");
    gen->add_option("--width", width, "deposit sigma in voxels");

    // train
    auto* tr = app.add_subcommand("train", "Train a model variant");
    std::string variant = "bcae", data_dir, ckpt_out = "model.bcck", resume, input_shape_str,
                log_csv;
    int epochs = 2000, batch_size = 32, split_train = 960, split_test = 320,
        checkpoint_every = 0;
    double lr = 0.01, train_threshold = 0.5;
    std::uint64_t train_seed = 0;
    bool downscale = false;
    tr->add_option("--variant", variant, "bcae|bcaewot|cae")->capture_default_str();
    tr->add_option("--data", data_dir)->required();
    tr->add_option("--epochs", epochs)->capture_default_str();
    tr->add_option("--batch-size", batch_size)->capture_default_str();
    tr->add_option("--seed", train_seed);
    tr->add_option("--out", ckpt_out)->capture_default_str();
    tr->add_option("--resume", resume, "checkpoint to continue from");
    tr->add_flag("--downscale", downscale, "expect (48,64,16) desk-scale frames");
    tr->add_option("--input-shape", input_shape_str, "explicit frame shape A,H,R");
    tr->add_option("--lr", lr)->capture_default_str();
    tr->add_option("--split-train", split_train)->capture_default_str();
    tr->add_option("--split-test", split_test)->capture_default_str();
    tr->add_option("--threshold", train_threshold)->capture_default_str();
    tr->add_option("--log", log_csv, "per-epoch CSV path");
    tr->add_option("--checkpoint-every", checkpoint_every);

    // compress / decompress
    auto* co = app.add_subcommand("compress", "Frame -> compressed container");
    std::string c_model, c_in, c_out;
    double c_threshold = 0.5;
    co->add_option("--model", c_model)->required();
    co->add_option("--in", c_in)->required();
    co->add_option("--out", c_out)->required();
    co->add_option("--threshold", c_threshold, "default decode threshold stored in the header");

    auto* de = app.add_subcommand("decompress", "Compressed container -> frame");
    std::string d_model, d_in, d_out;
    double d_threshold = 0.5;
    bool d_use_default = false;
    de->add_option("--model", d_model)->required();
    de->add_option("--in", d_in)->required();
    de->add_option("--out", d_out)->required();
    auto* th = de->add_option("--threshold", d_threshold);
    de->add_flag("--container-threshold", d_use_default,
                 "use the threshold stored in the container header");
    th->excludes("--container-threshold");

    // evaluate / sweep
    auto* ev = app.add_subcommand("evaluate", "Threshold sweep plus metric report");
    std::string e_model, e_data, e_sweep = "0:1:0.02", e_out = "report.csv", e_hist;
    std::uint64_t e_seed = 0;
    bool e_round = false;
    ev->add_option("--model", e_model)->required();
    ev->add_option("--data", e_data)->required();
    ev->add_option("--sweep", e_sweep)->capture_default_str();
    ev->add_option("--out", e_out)->capture_default_str();
    ev->add_option("--hist", e_hist, "histogram CSV path");
    ev->add_option("--seed", e_seed);
    ev->add_flag("--round", e_round, "metrics on rounded ADC output");

    auto* sw = app.add_subcommand("sweep", "Gate threshold sweep only");
    std::string s_model, s_data, s_grid = "0:1:0.02", s_out = "curve.csv";
    sw->add_option("--model", s_model)->required();
    sw->add_option("--data", s_data)->required();
    sw->add_option("--grid", s_grid)->capture_default_str();
    sw->add_option("--out", s_out)->capture_default_str();

    // benchmark
    auto* be = app.add_subcommand("benchmark", "Multi-codec comparison");
    std::string b_codecs = "reference", b_data, b_bounds, b_model, b_out = "benchmark.csv";
    be->add_option("--codecs", b_codecs, "comma list: bcae,reference,plugin:PATH")
        ->capture_default_str();
    be->add_option("--data", b_data)->required();
    be->add_option("--bounds", b_bounds, "error-bound survey grid, comma list");
    be->add_option("--model", b_model, "checkpoint for the bcae codec");
    be->add_option("--out", b_out)->capture_default_str();

    app.add_subcommand("defaults", "Print the hyperparameter defaults registry");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_exit_code() == 0 ? bcae::exit_ok : bcae::exit_usage;
    }

    try {
        if (gen->parsed()) {
            return cmd_generate(n_frames, occupancy, seed, out_dir, shape_str, n_tracks, width);
        }
        if (tr->parsed()) {
            if (downscale && !input_shape_str.empty() && input_shape_str != "48,64,16") {
                throw bcae::format_error(
                    "--downscale conflicts with an explicit full-scale --input-shape");
            }
            return cmd_train(variant, data_dir, epochs, batch_size, train_seed, ckpt_out, resume,
                             downscale, input_shape_str, lr, split_train, split_test,
                             train_threshold, log_csv, checkpoint_every);
        }
        if (co->parsed()) return cmd_compress(c_model, c_in, c_out, c_threshold);
        if (de->parsed()) {
            return cmd_decompress(d_model, d_in, d_out, d_threshold, d_use_default);
        }
        if (ev->parsed()) {
            return cmd_evaluate(e_model, e_data, e_sweep, e_out, e_hist, e_seed, e_round);
        }
        if (sw->parsed()) return cmd_sweep(s_model, s_data, s_grid, s_out);
        if (be->parsed()) return cmd_benchmark(b_codecs, b_data, b_bounds, b_model, b_out);
        return cmd_defaults();
    } catch (const bcae::plugin_error& e) {
        log_event("error", "plugin_failure", {{"what", e.what()}});
        return bcae::exit_plugin;
    } catch (const bcae::divergence_error& e) {
        log_event("error", "numeric_divergence", {{"what", e.what()}});
        return bcae::exit_divergence;
    } catch (const bcae::format_error& e) {
        log_event("error", "format_error", {{"what", e.what()}});
        return bcae::exit_format;
    } catch (const bcae::io_error& e) {
        log_event("error", "io_error", {{"what", e.what()}});
        return bcae::exit_io;
    } catch (const std::exception& e) {
        log_event("error", "unexpected", {{"what", e.what()}});
        return 1;
    }
}
