#include "bcae/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace bcae {

void TrainConfig::validate() const {
    if (batch_size < 1) throw format_error("train config: batch_size must be >= 1");
    if (epochs < 1) throw format_error("train config: epochs must be >= 1");
    if (lr_initial <= 0.0) throw format_error("train config: lr_initial must be positive");
    if (lr_decay_factor <= 0.0 || lr_decay_factor > 1.0) {
        throw format_error("train config: lr_decay_factor must be in (0, 1]");
    }
    if (lr_decay_period < 1) throw format_error("train config: lr_decay_period must be >= 1");
    if (split_train < 1 || split_test < 0) {
        throw format_error("train config: split sizes must be positive");
    }
    if (train_threshold < 0.0 || train_threshold > 1.0) {
        throw format_error("train config: train_threshold must be in [0, 1]");
    }
}

std::string TrainConfig::to_json() const {
    nlohmann::json j;
    j["batch_size"] = batch_size;
    j["epochs"] = epochs;
    j["lr_initial"] = lr_initial;
    j["lr_decay_factor"] = lr_decay_factor;
    j["lr_decay_period"] = lr_decay_period;
    j["beta1"] = beta1;
    j["beta2"] = beta2;
    j["weight_decay"] = weight_decay;
    j["adam_eps"] = adam_eps;
    j["split_train"] = split_train;
    j["split_test"] = split_test;
    j["variant"] = variant_name(variant);
    j["train_threshold"] = train_threshold;
    j["seed"] = seed;
    return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw format_error(std::string("train config parse error: ") + e.what());
    }
    TrainConfig c;
    c.batch_size = j.at("batch_size").get<int>();
    c.epochs = j.at("epochs").get<int>();
    c.lr_initial = j.at("lr_initial").get<double>();
    c.lr_decay_factor = j.at("lr_decay_factor").get<double>();
    c.lr_decay_period = j.at("lr_decay_period").get<int>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.adam_eps = j.at("adam_eps").get<double>();
    c.split_train = j.at("split_train").get<int>();
    c.split_test = j.at("split_test").get<int>();
    c.variant = variant_from_name(j.at("variant").get<std::string>());
    c.train_threshold = j.at("train_threshold").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.validate();
    return c;
}

std::uint64_t TrainConfig::hash() const { return fnv1a64(to_json()); }

double lr_at_epoch(int epoch, const TrainConfig& config) {
    if (epoch < 0) throw format_error("lr_at_epoch: epoch must be >= 0");
    const int steps = epoch / config.lr_decay_period;
    return config.lr_initial * std::pow(config.lr_decay_factor, steps);
}

ModelBundle make_variant(VariantKind kind, const NetworkConfig& config, Dims3 input_shape,
                         std::uint64_t seed) {
    return build_model(config, input_shape, kind, seed);
}

// --- AdamW -------------------------------------------------------------------

void AdamW::init(std::size_t n_params) {
    t = 0;
    m.assign(n_params, 0.0f);
    v.assign(n_params, 0.0f);
}

void AdamW::step(std::vector<NamedParam>& params, double lr, double grad_scale,
                 const TrainConfig& cfg) {
    ++t;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    std::size_t at = 0;
    for (auto& p : params) {
        float* w = p.value->data();
        const float* g = p.grad->data();
        const std::size_t n = p.value->size();
        if (at + n > m.size()) throw format_error("adamw: optimizer state size mismatch");
        float* mi = m.data() + at;
        float* vi = v.data() + at;
        for (std::size_t i = 0; i < n; ++i) {
            const double gi = static_cast<double>(g[i]) * grad_scale;
            const double mn = cfg.beta1 * mi[i] + (1.0 - cfg.beta1) * gi;
            const double vn = cfg.beta2 * vi[i] + (1.0 - cfg.beta2) * gi * gi;
            mi[i] = static_cast<float>(mn);
            vi[i] = static_cast<float>(vn);
            const double mhat = mn / bc1;
            const double vhat = vn / bc2;
            const double update = mhat / (std::sqrt(vhat) + cfg.adam_eps) +
                                  cfg.weight_decay * static_cast<double>(w[i]);
            w[i] = static_cast<float>(w[i] - lr * update);
        }
        at += n;
    }
    if (at != m.size()) throw format_error("adamw: parameter list does not cover state");
}

// --- Trainer -----------------------------------------------------------------

Trainer::Trainer(const NetworkConfig& net_config, const TrainConfig& train_config,
                 Dims3 input_shape)
    : tcfg_(train_config) {
    tcfg_.validate();
    model_ = make_variant(tcfg_.variant, net_config, input_shape,
                          derive_seed(tcfg_.seed, "model-init"));
    opt_.init(model_.param_count());
    shuffle_rng_ = Rng(derive_seed(tcfg_.seed, "shuffle"));
    state_ = LossState{};
}

EpochStats Trainer::train_epoch(const std::vector<Frame>& data) {
    if (data.empty()) throw format_error("train_epoch: empty dataset");
    const auto t_start = std::chrono::steady_clock::now();

    const double lr = lr_at_epoch(epoch_, tcfg_);
    const double seg_weight = state_.seg_weight;
    const Threshold gate(tcfg_.train_threshold);
    auto params = model_.named_params();

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    shuffle_rng_.shuffle(order);

    double sum_ls = 0.0, sum_lr = 0.0;
    const std::size_t n = data.size();
    std::vector<float> labels, grad_reg, grad_seg;

    for (std::size_t start = 0; start < n; start += tcfg_.batch_size) {
        const std::size_t stop = std::min(n, start + tcfg_.batch_size);
        const double grad_scale = 1.0 / static_cast<double>(stop - start);
        model_.zero_grad();

        for (std::size_t bi = start; bi < stop; ++bi) {
            const Frame& frame = data[order[bi]];
            const Tensor x = frame_to_tensor(frame);
            Tensor latent = model_.encode(x, /*cache=*/true);
            DecodeResult out = model_.decode(latent, /*cache=*/true);

            const std::size_t voxels = frame.size();
            double loss_s = 0.0, loss_r = 0.0;
            Tensor g_latent;

            if (model_.variant == VariantKind::cae) {
                // plain MSE against raw counts; the head clamp handles sign
                grad_reg.resize(voxels);
                const float* y = out.reg.data();
                const double inv_m = 1.0 / static_cast<double>(voxels);
                double acc = 0.0;
                for (std::size_t i = 0; i < voxels; ++i) {
                    const double d = static_cast<double>(y[i]) -
                                     static_cast<double>(frame.values[i]);
                    acc += d * d;
                    grad_reg[i] = static_cast<float>(2.0 * d * inv_m);
                }
                loss_r = acc * inv_m;
                Tensor g_reg(1, out.reg.spatial());
                g_reg.vec().assign(grad_reg.begin(), grad_reg.end());
                g_latent = model_.decoder_r.backward(g_reg);
            } else {
                labels.resize(voxels);
                for (std::size_t i = 0; i < voxels; ++i) {
                    labels[i] = static_cast<float>(
                        soft_label(static_cast<double>(frame.values[i])));
                }
                std::span<const float> seg(out.seg.vec());
                std::span<const float> reg(out.reg.vec());
                std::span<const float> lab(labels);

                loss_s = focal_loss(seg, lab);
                grad_seg.resize(voxels);
                focal_loss_grad(seg, lab, std::span<float>(grad_seg));

                grad_reg.resize(voxels);
                loss_r = regression_loss_and_grad(
                    reg, seg, std::span<const std::uint16_t>(frame.values), gate,
                    model_.variant == VariantKind::bcae, std::span<float>(grad_reg));

                Tensor g_seg(1, out.seg.spatial());
                for (std::size_t i = 0; i < voxels; ++i) {
                    g_seg.vec()[i] = static_cast<float>(seg_weight * grad_seg[i]);
                }
                Tensor g_reg(1, out.reg.spatial());
                g_reg.vec().assign(grad_reg.begin(), grad_reg.end());

                g_latent = model_.decoder_s.backward(g_seg);
                Tensor g_latent_r = model_.decoder_r.backward(g_reg);
                float* a = g_latent.data();
                const float* b = g_latent_r.data();
                for (std::size_t i = 0; i < g_latent.size(); ++i) a[i] += b[i];
            }

            if (!std::isfinite(loss_s) || !std::isfinite(loss_r)) {
                throw divergence_error("train_epoch: non-finite loss at epoch " +
                                       std::to_string(epoch_ + 1));
            }
            sum_ls += loss_s;
            sum_lr += loss_r;
            model_.encoder.backward(g_latent);
        }
        opt_.step(params, lr, grad_scale, tcfg_);
    }
    model_.drop_caches();

    const double rho_s = sum_ls / static_cast<double>(n);
    const double rho_r = sum_lr / static_cast<double>(n);

    EpochStats st;
    st.epoch = epoch_ + 1;
    st.lr = lr;
    st.rho_s = rho_s;
    st.rho_r = rho_r;
    st.seg_weight = seg_weight;
    st.total = seg_weight * rho_s + rho_r;
    st.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

    state_.rho_s = rho_s;
    state_.rho_r = rho_r;
    state_.has_history = true;
    state_ = update_loss_weight(state_);
    ++epoch_;
    history_.push_back(st);
    return st;
}

// --- checkpointing -------------------------------------------------------------

void Trainer::save_checkpoint(std::ostream& os) const {
    os.write("BCCK", 4);
    write_u16le(os, 1);
    write_u64le(os, tcfg_.hash());
    write_u32le(os, static_cast<std::uint32_t>(epoch_));

    write_f64le(os, state_.rho_s);
    write_f64le(os, state_.rho_r);
    write_f64le(os, state_.seg_weight);
    write_u32le(os, static_cast<std::uint32_t>(state_.epoch));
    write_u8(os, state_.has_history ? 1 : 0);
    write_u8(os, state_.weight_frozen ? 1 : 0);

    for (auto wrd : shuffle_rng_.state()) write_u64le(os, wrd);

    const std::string tjson = tcfg_.to_json();
    write_u32le(os, static_cast<std::uint32_t>(tjson.size()));
    os.write(tjson.data(), static_cast<std::streamsize>(tjson.size()));

    std::ostringstream weights;
    model_.save_weights(weights);
    const std::string wblob = weights.str();
    write_u64le(os, wblob.size());
    os.write(wblob.data(), static_cast<std::streamsize>(wblob.size()));

    write_u64le(os, opt_.t);
    write_u64le(os, opt_.m.size());
    for (float x : opt_.m) write_f32le(os, x);
    for (float x : opt_.v) write_f32le(os, x);

    write_u32le(os, static_cast<std::uint32_t>(history_.size()));
    for (const auto& h : history_) {
        write_u32le(os, static_cast<std::uint32_t>(h.epoch));
        write_f64le(os, h.lr);
        write_f64le(os, h.rho_s);
        write_f64le(os, h.rho_r);
        write_f64le(os, h.seg_weight);
        write_f64le(os, h.total);
        write_f64le(os, h.wall_seconds);
    }
    if (!os) throw io_error("save_checkpoint: stream write failed");
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("save_checkpoint: cannot open " + path.string());
    save_checkpoint(os);
}

Trainer Trainer::load_checkpoint(std::istream& is, const TrainConfig& expected,
                                 const std::string& source) {
    ByteReader r(is, source);
    r.expect_magic("BCCK", "checkpoint");
    const std::uint16_t version = r.u16("version");
    if (version != 1) {
        throw format_error(source + ": unsupported checkpoint version " +
                           std::to_string(version));
    }
    const std::uint64_t cfg_hash = r.u64("train config hash");
    if (cfg_hash != expected.hash()) {
        throw format_error(source +
                           ": refused, checkpoint train config hash does not match the "
                           "requested configuration");
    }
    Trainer t;
    t.epoch_ = static_cast<int>(r.u32("epoch"));

    t.state_.rho_s = r.f64("rho_s");
    t.state_.rho_r = r.f64("rho_r");
    t.state_.seg_weight = r.f64("seg_weight");
    t.state_.epoch = static_cast<int>(r.u32("loss state epoch"));
    t.state_.has_history = r.u8("has_history") != 0;
    t.state_.weight_frozen = r.u8("weight_frozen") != 0;

    Rng::State rs;
    for (auto& wrd : rs) wrd = r.u64("rng state");
    t.shuffle_rng_ = Rng::from_state(rs);

    const std::uint32_t tlen = r.u32("train config length");
    std::string tjson(tlen, '\0');
    r.read_exact(tjson.data(), tlen, "train config");
    t.tcfg_ = TrainConfig::from_json(tjson);

    const std::uint64_t wsize = r.u64("weight blob size");
    std::string wblob(wsize, '\0');
    r.read_exact(wblob.data(), wsize, "weight blob");
    std::istringstream ws(wblob);
    t.model_ = ModelBundle::load_weights(ws, source + " weights");

    t.opt_.t = r.u64("optimizer step");
    const std::uint64_t n = r.u64("optimizer size");
    if (n != t.model_.param_count()) {
        throw format_error(source + ": optimizer state does not match parameter count");
    }
    t.opt_.m.resize(n);
    t.opt_.v.resize(n);
    for (auto& x : t.opt_.m) x = r.f32("optimizer m");
    for (auto& x : t.opt_.v) x = r.f32("optimizer v");

    const std::uint32_t hist = r.u32("history count");
    t.history_.resize(hist);
    for (auto& h : t.history_) {
        h.epoch = static_cast<int>(r.u32("history epoch"));
        h.lr = r.f64("history lr");
        h.rho_s = r.f64("history rho_s");
        h.rho_r = r.f64("history rho_r");
        h.seg_weight = r.f64("history seg_weight");
        h.total = r.f64("history total");
        h.wall_seconds = r.f64("history wall");
    }
    return t;
}

Trainer Trainer::load_checkpoint(const std::filesystem::path& path, const TrainConfig& expected) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("load_checkpoint: cannot open " + path.string());
    return load_checkpoint(is, expected, path.filename().string());
}

ModelBundle Trainer::load_model(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("load_model: cannot open " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (is.gcount() != 4) throw format_error(path.string() + ": truncated model file");
    is.seekg(0);
    if (__builtin_memcmp(magic, "BCWT", 4) == 0) {
        return ModelBundle::load_weights(is, path.filename().string());
    }
    if (__builtin_memcmp(magic, "BCCK", 4) != 0) {
        throw format_error(path.string() + ": not a checkpoint or weight container");
    }
    // skip the checkpoint header up to the weight blob
    ByteReader r(is, path.filename().string());
    r.expect_magic("BCCK", "checkpoint");
    r.u16("version");
    r.u64("train config hash");
    r.u32("epoch");
    r.f64("rho_s");
    r.f64("rho_r");
    r.f64("seg_weight");
    r.u32("loss state epoch");
    r.u8("has_history");
    r.u8("weight_frozen");
    for (int i = 0; i < 4; ++i) r.u64("rng state");
    const std::uint32_t tlen = r.u32("train config length");
    std::string skip(tlen, '\0');
    r.read_exact(skip.data(), tlen, "train config");
    const std::uint64_t wsize = r.u64("weight blob size");
    std::string wblob(wsize, '\0');
    r.read_exact(wblob.data(), wsize, "weight blob");
    std::istringstream ws(wblob);
    return ModelBundle::load_weights(ws, path.filename().string() + " weights");
}

void write_training_log(const std::vector<EpochStats>& history,
                        const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw io_error("write_training_log: cannot open " + path.string());
    os << "epoch,lr,rho_s,rho_r,seg_weight,wall_time\n";
    os.precision(17);
    for (const auto& h : history) {
        os << h.epoch << ',' << h.lr << ',' << h.rho_s << ',' << h.rho_r << ',' << h.seg_weight
           << ',' << h.wall_seconds << '\n';
    }
    if (!os) throw io_error("write_training_log: write failed");
}

}  // namespace bcae
