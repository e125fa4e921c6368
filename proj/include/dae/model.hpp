#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "dae/disruption.hpp"
#include "dae/nn.hpp"
#include "dae/token_grid.hpp"
#include "dae/volume.hpp"

namespace dae {

struct ModelConfig {
    std::array<std::size_t, 3> patch{4, 4, 4};
    std::size_t embed_dim = 96;
    std::size_t depth = 4;
    std::size_t heads = 4;
    std::size_t mlp_ratio = 4;
    std::size_t latent_dim = 64;

    void validate() const;
};

struct Param {
    std::string name;
    DiffTensor tensor;
};

struct ForwardResult {
    DiffTensor recon;   // reconstructed crop, shape {D, H, W}
    DiffTensor latent;  // [1 x latent_dim], unit norm
    MaskPlan plan;
    Volume disrupted;   // the network input actually used
};

// Patch-embedding transformer with either a per-token linear reconstruction
// decoder plus a pooled latent head (pre-training) or a per-voxel K-class
// segmentation head (fine-tuning). The encoder is shared between the two, so
// pre-trained encoder weights load directly into a segmentation model.
class DaeModel {
public:
    static DaeModel pretraining(const ModelConfig& cfg, std::array<std::size_t, 3> crop_dims,
                                std::uint64_t init_seed);
    static DaeModel segmentation(const ModelConfig& cfg, std::array<std::size_t, 3> crop_dims,
                                 std::size_t num_classes, std::uint64_t init_seed);

    const ModelConfig& config() const { return cfg_; }
    std::array<std::size_t, 3> crop_dims() const { return crop_dims_; }
    std::array<std::size_t, 3> grid() const { return grid_; }
    std::size_t token_count() const { return n_tokens_; }
    std::size_t num_classes() const { return num_classes_; }
    bool is_segmentation() const { return num_classes_ > 0; }

    // Non-overlapping patch partition, linear projection, plus positional
    // embedding. The crop extents must match the dims this model was built for.
    TokenGrid tokenize(const Volume& crop) const;
    TokenGrid tokenize(const DiffTensor& flat_crop) const;

    TokenGrid encode(const TokenGrid& tg) const;
    DiffTensor decode(const TokenGrid& tg) const;   // {D, H, W}
    DiffTensor latent(const TokenGrid& tg) const;   // [1 x latent_dim]
    DiffTensor segment(const TokenGrid& tg) const;  // [K x D*H*W] class probabilities

    // disrupt -> tokenize -> local mask -> encode -> (decode, latent).
    // Noise and the mask seed are drawn from rng; the L1 target stays the
    // clean crop passed in.
    ForwardResult forward(const Volume& clean_crop, const DisruptionConfig& cfg,
                          Rng& rng) const;

    // Token-mean-pooled features after the patch embedding and after every
    // block: depth+1 stages of C values each. Forward-only.
    std::vector<std::vector<float>> stage_features(const Volume& crop) const;

    std::vector<Param>& params() { return params_; }
    const std::vector<Param>& params() const { return params_; }
    Param* find_param(const std::string& name);
    std::size_t scalar_parameter_count() const;
    std::uint64_t arch_hash() const; // over parameter names and shapes
    void zero_grads();

private:
    DaeModel(const ModelConfig& cfg, std::array<std::size_t, 3> crop_dims,
             std::size_t num_classes, std::uint64_t init_seed);

    DiffTensor& add_param(const std::string& name, DiffTensor t);
    DiffTensor encode_tokens(const DiffTensor& tokens,
                             std::vector<DiffTensor>* stages) const;

    ModelConfig cfg_;
    std::array<std::size_t, 3> crop_dims_{};
    std::array<std::size_t, 3> grid_{};
    std::size_t n_tokens_ = 0;
    std::size_t patch_voxels_ = 0;
    std::size_t num_classes_ = 0; // 0 = reconstruction head

    std::vector<Param> params_;
    DiffTensor embed_w_, embed_b_, pos_;
    std::vector<nn::BlockParamsT<float>> blocks_;
    DiffTensor dec_w_, dec_b_;
    DiffTensor lat_w_, lat_b_;
    DiffTensor seg_w_, seg_b_;

    // gather maps: token/patch layout <-> flat crop voxels
    std::shared_ptr<std::vector<std::uint32_t>> patchify_map_;   // [N*P] -> voxel
    std::shared_ptr<std::vector<std::uint32_t>> unpatchify_map_; // voxel -> [N*P]
    std::shared_ptr<std::vector<std::uint32_t>> seg_map_;        // [K*V] -> [N*P*K]
};

} // namespace dae
