#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "bcae/frames.hpp"
#include "bcae/network.hpp"
#include "bcae/rng.hpp"
#include "bcae/transform.hpp"

namespace bcae {

struct TrainConfig {
    int batch_size = 32;
    int epochs = 2000;
    double lr_initial = 0.01;
    double lr_decay_factor = 0.95;
    int lr_decay_period = 20;  // epochs per decay step
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 0.01;
    double adam_eps = 1e-8;
    int split_train = 960;
    int split_test = 320;
    VariantKind variant = VariantKind::bcae;
    double train_threshold = 0.5;
    std::uint64_t seed = 0;

    void validate() const;
    std::string to_json() const;
    static TrainConfig from_json(const std::string& text);
    std::uint64_t hash() const;  // covers the training recipe, not the network
};

// Stepped exponential decay: lr_initial * factor^floor(epoch / period).
double lr_at_epoch(int epoch, const TrainConfig& config);

// Builds the requested ablation variant. All variants share the encoder
// architecture; they differ in the regression head squash, the combine rule
// and whether a segmentation decoder exists at all.
ModelBundle make_variant(VariantKind kind, const NetworkConfig& config, Dims3 input_shape,
                         std::uint64_t seed);

// Decoupled-weight-decay Adam over the flattened parameter list.
class AdamW {
public:
    void init(std::size_t n_params);
    void step(std::vector<NamedParam>& params, double lr, double grad_scale,
              const TrainConfig& cfg);

    std::uint64_t t = 0;
    std::vector<float> m, v;
};

struct EpochStats {
    int epoch = 0;
    double lr = 0.0;
    double rho_s = 0.0;       // epoch-mean segmentation loss
    double rho_r = 0.0;       // epoch-mean regression loss
    double seg_weight = 1.0;  // weight that was applied to L_s this epoch
    double total = 0.0;       // seg_weight * rho_s + rho_r
    double wall_seconds = 0.0;
};

// Owns the model, optimizer state, loss bookkeeping and the shuffle stream.
// Given equal seeds, configs and data, training trajectories are bitwise
// reproducible, and a checkpoint round-trip resumes them exactly.
class Trainer {
public:
    Trainer(const NetworkConfig& net_config, const TrainConfig& train_config, Dims3 input_shape);

    // Runs one epoch over the data (already split by the caller); returns the
    // per-epoch statistics entry that was also appended to history().
    EpochStats train_epoch(const std::vector<Frame>& data);

    int completed_epochs() const { return epoch_; }
    const LossState& loss_state() const { return state_; }
    const std::vector<EpochStats>& history() const { return history_; }
    ModelBundle& model() { return model_; }
    const TrainConfig& train_config() const { return tcfg_; }

    // Checkpoint container, little-endian: "BCCK" | u16 version | u64 train
    // config hash | u32 completed epochs | loss state | rng state | sized
    // weight blob | sized optimizer blob. The header is readable without
    // touching the tensor blobs.
    void save_checkpoint(std::ostream& os) const;
    void save_checkpoint(const std::filesystem::path& path) const;
    static Trainer load_checkpoint(std::istream& is, const TrainConfig& expected,
                                   const std::string& source = "checkpoint");
    static Trainer load_checkpoint(const std::filesystem::path& path, const TrainConfig& expected);

    // Model-only load for inference tools (ignores optimizer state; no train
    // config check).
    static ModelBundle load_model(const std::filesystem::path& path);

private:
    Trainer() = default;

    ModelBundle model_;
    AdamW opt_;
    LossState state_;
    Rng shuffle_rng_{0};
    TrainConfig tcfg_;
    int epoch_ = 0;
    std::vector<EpochStats> history_;
};

// Writes the per-epoch CSV log: epoch, lr, rho_s, rho_r, seg_weight, wall_time.
void write_training_log(const std::vector<EpochStats>& history,
                        const std::filesystem::path& path);

}  // namespace bcae
