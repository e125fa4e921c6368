#pragma once

#include <cstdint>
#include <vector>

#include "dae/rng.hpp"
#include "dae/token_grid.hpp"
#include "dae/volume.hpp"

namespace dae {

struct DisruptionConfig {
    float noise_mu = 0.0f;
    float noise_sigma = 0.1f;
    double downsample_ratio = 4.0;   // epsilon >= 1
    double mask_ratio = 0.6;         // r in [0, 1]
    std::uint64_t seed = 0;
    bool mask_shared_channels = false;

    void validate() const;

    static DisruptionConfig identity() {
        DisruptionConfig c;
        c.noise_sigma = 0.0f;
        c.downsample_ratio = 1.0;
        c.mask_ratio = 0.0;
        return c;
    }
};

// The exact (token, channel) positions zeroed by local masking.
struct MaskPlan {
    std::size_t token_count = 0;
    std::size_t channel_count = 0;
    std::vector<std::vector<std::uint16_t>> masked; // per token, sorted channel indices
    std::uint64_t seed = 0;
};

// x + iid Gaussian(mu, sigma^2) per voxel; output is not re-normalized or
// clipped, so it may leave [0, 1].
Volume add_noise(const Volume& x, float mu, float sigma, Rng& rng);

// Trilinear downsample by epsilon, then trilinear upsample back to the input
// grid (pre-upsampling layout: output dims always equal input dims).
Volume down_up(const Volume& x, double epsilon);

// For each token an independent uniform subset of exactly floor(r*C)
// channels (or one shared subset when shared_channels is set).
MaskPlan make_mask_plan(std::size_t token_count, std::size_t channel_count, double ratio,
                        std::uint64_t seed, bool shared_channels = false);

std::size_t mask_count_per_token(double ratio, std::size_t channel_count);

// 0/1 multiplier built from a plan ([N x C], no gradient).
DiffTensor mask_tensor(const MaskPlan& plan);

// Zeroes the planned positions; everything else passes through bit-equal and
// gradients flow through unmasked positions only.
TokenGrid apply_local_mask(const TokenGrid& tokens, const MaskPlan& plan);

// down_up(add_noise(x)) -- noise first, then resampling. Local masking is
// applied separately after tokenization.
Volume disrupt(const Volume& x, const DisruptionConfig& cfg, Rng& rng);

} // namespace dae
