#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dae/checkpoint.hpp"
#include "dae/disruption.hpp"
#include "dae/model.hpp"
#include "dae/volume.hpp"

namespace dae {

struct TrainConfig {
    double lr = 4e-4;
    double weight_decay = 1e-5;
    double beta1 = 0.9; // "momentum" in optimizer terms
    double beta2 = 0.999;
    long warmup_iters = 500;
    long total_iters = 2000;
    std::size_t batch_size = 2;
    std::array<std::size_t, 3> crop{32, 32, 32};
    std::uint64_t seed = 42;
    double grad_clip_norm = 0.0; // 0 = off
    long ckpt_every = 500;
    long eval_every = 25;

    void validate() const;
};

struct LossParams {
    float cmcl_alpha = 0.05f;
    float cmcl_temperature = 0.07f;
    float dice_smooth = 1e-5f;
};

// Linear warm-up from 0 over warmup_iters, then cosine decay to 0 at
// total_iters. Continuous at the boundary.
double lr_schedule(long step, const TrainConfig& cfg);

// Per-parameter AdamW moments plus the shared step counter.
struct OptState {
    struct Slot {
        std::vector<float> m, v;
    };
    std::vector<Slot> slots;
    long step = 0;

    static OptState for_params(const std::vector<Param>& params);
};

// One decoupled-weight-decay Adam update over every parameter, reading the
// gradients accumulated on the tensors. Throws NumericError naming the
// parameter on any non-finite gradient.
void adamw_step(std::vector<Param>& params, OptState& state, const TrainConfig& cfg,
                double lr_t);

// ---------------------------------------------------------------------------
// datasets
// ---------------------------------------------------------------------------

struct Dataset {
    struct Item {
        Volume volume;
        std::optional<LabelVolume> labels;
        Split split = Split::train;
        std::string path;
    };
    std::vector<Item> items;

    // Loads every manifest entry; relative paths resolve against base_dir.
    // with_labels additionally loads the "<stem>.labels.<ext>" companions.
    static Dataset load(const Manifest& manifest, const std::string& base_dir,
                        bool with_labels);

    std::vector<const Item*> split_items(Split s) const;
    std::vector<std::string> train_modalities() const; // distinct keys, first-seen order
};

// ---------------------------------------------------------------------------
// checkpointing (model + optimizer + RNG under the "opt." prefix)
// ---------------------------------------------------------------------------

void save_train_checkpoint(const std::string& path, const DaeModel& model,
                           const OptState* opt, const Rng* rng, double best_metric);

struct TrainStateRestore {
    long step = 0;
    double best_metric = 0.0;
    bool has_opt = false;
    std::array<std::uint64_t, 4> rng_state{};
    bool has_rng = false;
};

// Copies matching parameters into the model. strict requires every model
// parameter to be present; encoder_only skips the head parameters
// (dec./lat./seg.) so pre-trained encoders load into segmentation models.
TrainStateRestore load_train_checkpoint(const std::string& path, DaeModel& model,
                                        OptState* opt, bool strict,
                                        bool encoder_only = false);

// ---------------------------------------------------------------------------
// training loops
// ---------------------------------------------------------------------------

struct PretrainResult {
    std::string checkpoint_path; // final
    std::string metrics_path;
    long steps_run = 0;
    std::vector<double> l1_history;   // per step
    std::vector<double> cmcl_history; // per step
};

// Per step: sample batch_size crops (modalities drawn uniformly), disrupt,
// forward, L1 + CMCL, backward, AdamW. Writes metrics.csv
// (step,lr,loss_total,loss_l1,loss_cmcl) and periodic checkpoints under
// out_dir. resume_from restarts bit-exactly after the checkpointed step.
PretrainResult pretrain(const Dataset& data, const ModelConfig& mcfg,
                        const DisruptionConfig& dcfg, const TrainConfig& tcfg,
                        const LossParams& lp, const std::string& out_dir,
                        const std::string& resume_from = "");

struct FinetuneResult {
    std::string checkpoint_path;
    std::string metrics_path;
    double final_val_dice = 0.0;
    std::uint64_t arch_hash = 0;
};

// Swaps the reconstruction head for a K-class per-voxel head and trains with
// the Dice loss on clean crops. init_checkpoint (optional) provides encoder
// weights; metrics.csv rows are step,lr,loss_dice,val_dice.
FinetuneResult finetune(const Dataset& data, const ModelConfig& mcfg,
                        const TrainConfig& tcfg, const LossParams& lp,
                        std::size_t num_classes, const std::string& init_checkpoint,
                        const std::string& out_dir);

// Formats a float the way every CSV in this project does.
std::string csv_num(double v);

} // namespace dae
