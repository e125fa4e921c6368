#include "dae/model.hpp"

#include <cmath>

#include "dae/errors.hpp"

namespace dae {

namespace {
constexpr float kInitStd = 0.02f;
constexpr float kLnEps = 1e-5f;
} // namespace

void ModelConfig::validate() const {
    if (embed_dim == 0 || heads == 0 || mlp_ratio == 0 || latent_dim == 0)
        throw ParamError("model config: dims must be nonzero");
    if (embed_dim % heads != 0)
        throw ParamError("model config: embed_dim " + std::to_string(embed_dim) +
                         " must be divisible by heads " + std::to_string(heads));
    for (auto p : patch)
        if (p == 0) throw ParamError("model config: patch extents must be nonzero");
}

DaeModel DaeModel::pretraining(const ModelConfig& cfg, std::array<std::size_t, 3> crop_dims,
                               std::uint64_t init_seed) {
    return DaeModel(cfg, crop_dims, 0, init_seed);
}

DaeModel DaeModel::segmentation(const ModelConfig& cfg, std::array<std::size_t, 3> crop_dims,
                                std::size_t num_classes, std::uint64_t init_seed) {
    if (num_classes < 2)
        throw ParamError("segmentation head needs at least 2 classes");
    return DaeModel(cfg, crop_dims, num_classes, init_seed);
}

DaeModel::DaeModel(const ModelConfig& cfg, std::array<std::size_t, 3> crop_dims,
                   std::size_t num_classes, std::uint64_t init_seed)
    : cfg_(cfg), crop_dims_(crop_dims), num_classes_(num_classes) {
    cfg_.validate();
    for (std::size_t i = 0; i < 3; ++i) {
        if (crop_dims_[i] == 0 || crop_dims_[i] % cfg_.patch[i] != 0)
            throw ParamError("crop extent " + std::to_string(crop_dims_[i]) +
                             " is not divisible by patch extent " +
                             std::to_string(cfg_.patch[i]));
        grid_[i] = crop_dims_[i] / cfg_.patch[i];
    }
    n_tokens_ = grid_[0] * grid_[1] * grid_[2];
    patch_voxels_ = cfg_.patch[0] * cfg_.patch[1] * cfg_.patch[2];

    const std::size_t c = cfg_.embed_dim;
    Rng rng(init_seed);
    embed_w_ = add_param("embed.w", trunc_normal<float>({patch_voxels_, c}, rng, kInitStd, true));
    embed_b_ = add_param("embed.b", DiffTensor::zeros({c}, true));
    pos_ = add_param("pos", DiffTensor::zeros({n_tokens_, c}, true));

    blocks_.reserve(cfg_.depth);
    for (std::size_t b = 0; b < cfg_.depth; ++b) {
        const std::string prefix = "block" + std::to_string(b) + ".";
        nn::BlockParamsT<float> blk =
            nn::init_block<float>(c, cfg_.heads, cfg_.mlp_ratio, rng, kInitStd);
        add_param(prefix + "ln1.g", blk.ln1_gamma);
        add_param(prefix + "ln1.b", blk.ln1_beta);
        add_param(prefix + "attn.wq", blk.attn.wq);
        add_param(prefix + "attn.bq", blk.attn.bq);
        add_param(prefix + "attn.wk", blk.attn.wk);
        add_param(prefix + "attn.bk", blk.attn.bk);
        add_param(prefix + "attn.wv", blk.attn.wv);
        add_param(prefix + "attn.bv", blk.attn.bv);
        add_param(prefix + "attn.wo", blk.attn.wo);
        add_param(prefix + "attn.bo", blk.attn.bo);
        add_param(prefix + "ln2.g", blk.ln2_gamma);
        add_param(prefix + "ln2.b", blk.ln2_beta);
        add_param(prefix + "mlp.w1", blk.mlp_w1);
        add_param(prefix + "mlp.b1", blk.mlp_b1);
        add_param(prefix + "mlp.w2", blk.mlp_w2);
        add_param(prefix + "mlp.b2", blk.mlp_b2);
        blocks_.push_back(std::move(blk));
    }

    if (num_classes_ == 0) {
        dec_w_ = add_param("dec.w", trunc_normal<float>({c, patch_voxels_}, rng, kInitStd, true));
        dec_b_ = add_param("dec.b", DiffTensor::zeros({patch_voxels_}, true));
        lat_w_ = add_param("lat.w", trunc_normal<float>({c, cfg_.latent_dim}, rng, kInitStd, true));
        lat_b_ = add_param("lat.b", DiffTensor::zeros({cfg_.latent_dim}, true));
    } else {
        seg_w_ = add_param(
            "seg.w", trunc_normal<float>({c, patch_voxels_ * num_classes_}, rng, kInitStd, true));
        seg_b_ = add_param("seg.b", DiffTensor::zeros({patch_voxels_ * num_classes_}, true));
    }

    // token/patch index <-> flat voxel index
    const std::size_t volume_voxels = crop_dims_[0] * crop_dims_[1] * crop_dims_[2];
    patchify_map_ = std::make_shared<std::vector<std::uint32_t>>(n_tokens_ * patch_voxels_);
    unpatchify_map_ = std::make_shared<std::vector<std::uint32_t>>(volume_voxels);
    for (std::size_t gd = 0; gd < grid_[0]; ++gd)
        for (std::size_t gh = 0; gh < grid_[1]; ++gh)
            for (std::size_t gw = 0; gw < grid_[2]; ++gw) {
                const std::size_t tok = (gd * grid_[1] + gh) * grid_[2] + gw;
                for (std::size_t pd = 0; pd < cfg_.patch[0]; ++pd)
                    for (std::size_t ph = 0; ph < cfg_.patch[1]; ++ph)
                        for (std::size_t pw = 0; pw < cfg_.patch[2]; ++pw) {
                            const std::size_t pidx =
                                (pd * cfg_.patch[1] + ph) * cfg_.patch[2] + pw;
                            const std::size_t vox =
                                ((gd * cfg_.patch[0] + pd) * crop_dims_[1] +
                                 gh * cfg_.patch[1] + ph) *
                                    crop_dims_[2] +
                                gw * cfg_.patch[2] + pw;
                            (*patchify_map_)[tok * patch_voxels_ + pidx] =
                                static_cast<std::uint32_t>(vox);
                            (*unpatchify_map_)[vox] =
                                static_cast<std::uint32_t>(tok * patch_voxels_ + pidx);
                        }
            }

    if (num_classes_ > 0) {
        // [K x V] <- [N x P*K] with k fastest in the head output
        seg_map_ = std::make_shared<std::vector<std::uint32_t>>(num_classes_ * volume_voxels);
        for (std::size_t k = 0; k < num_classes_; ++k)
            for (std::size_t vox = 0; vox < volume_voxels; ++vox)
                (*seg_map_)[k * volume_voxels + vox] = static_cast<std::uint32_t>(
                    (*unpatchify_map_)[vox] * num_classes_ + k);
    }
}

DiffTensor& DaeModel::add_param(const std::string& name, DiffTensor t) {
    t.set_requires_grad(true);
    params_.push_back({name, t});
    return params_.back().tensor;
}

Param* DaeModel::find_param(const std::string& name) {
    for (auto& p : params_)
        if (p.name == name) return &p;
    return nullptr;
}

std::size_t DaeModel::scalar_parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
}

std::uint64_t DaeModel::arch_hash() const {
    std::uint64_t h = 1469598103934665603ull;
    const auto mix = [&h](const std::string& s) {
        for (unsigned char ch : s) {
            h ^= ch;
            h *= 1099511628211ull;
        }
        h ^= 0xff;
        h *= 1099511628211ull;
    };
    for (const auto& p : params_) {
        mix(p.name);
        mix(shape_str(p.tensor.shape()));
    }
    return h;
}

void DaeModel::zero_grads() {
    for (auto& p : params_) p.tensor.zero_grad();
}

TokenGrid DaeModel::tokenize(const Volume& crop) const {
    if (crop.dims != crop_dims_)
        throw ContractError("tokenize: crop dims do not match the model's crop size");
    return tokenize(DiffTensor::from({crop.dims[0], crop.dims[1], crop.dims[2]}, crop.voxels));
}

TokenGrid DaeModel::tokenize(const DiffTensor& flat_crop) const {
    const std::size_t volume_voxels = crop_dims_[0] * crop_dims_[1] * crop_dims_[2];
    if (flat_crop.numel() != volume_voxels)
        throw ContractError("tokenize: expected " + std::to_string(volume_voxels) +
                            " voxels, got " + shape_str(flat_crop.shape()));
    const DiffTensor patches = gather(flat_crop, patchify_map_, {n_tokens_, patch_voxels_});
    TokenGrid tg;
    tg.grid = grid_;
    tg.patch = cfg_.patch;
    tg.tokens = add(nn::linear(patches, embed_w_, embed_b_), pos_);
    return tg;
}

DiffTensor DaeModel::encode_tokens(const DiffTensor& tokens,
                                   std::vector<DiffTensor>* stages) const {
    DiffTensor x = tokens;
    if (stages) stages->push_back(x);
    for (const auto& blk : blocks_) {
        x = nn::encoder_block(x, blk, kLnEps);
        if (stages) stages->push_back(x);
    }
    return x;
}

TokenGrid DaeModel::encode(const TokenGrid& tg) const {
    if (tg.tokens.dim(0) != n_tokens_ || tg.tokens.dim(1) != cfg_.embed_dim)
        throw ContractError("encode: token grid is " + shape_str(tg.tokens.shape()) +
                            " but the model expects [" + std::to_string(n_tokens_) + "x" +
                            std::to_string(cfg_.embed_dim) + "]");
    TokenGrid out = tg;
    out.tokens = encode_tokens(tg.tokens, nullptr);
    return out;
}

DiffTensor DaeModel::decode(const TokenGrid& tg) const {
    if (num_classes_ > 0)
        throw ContractError("decode: this model carries a segmentation head");
    const DiffTensor patches = nn::linear(tg.tokens, dec_w_, dec_b_); // [N x P]
    return gather(reshape(patches, {n_tokens_ * patch_voxels_}), unpatchify_map_,
                  {crop_dims_[0], crop_dims_[1], crop_dims_[2]});
}

DiffTensor DaeModel::latent(const TokenGrid& tg) const {
    if (num_classes_ > 0)
        throw ContractError("latent: this model carries a segmentation head");
    const DiffTensor pooled = reshape(mean_axis(tg.tokens, 0), {1, cfg_.embed_dim});
    const DiffTensor z = nn::linear(pooled, lat_w_, lat_b_);
    const DiffTensor norm_sq = add_scalar(sum(mul(z, z)), 1e-12f);
    return mul_by_scalar(z, pow_scalar(norm_sq, -0.5f));
}

DiffTensor DaeModel::segment(const TokenGrid& tg) const {
    if (num_classes_ == 0)
        throw ContractError("segment: this model carries a reconstruction head");
    const std::size_t volume_voxels = crop_dims_[0] * crop_dims_[1] * crop_dims_[2];
    const DiffTensor logits = nn::linear(tg.tokens, seg_w_, seg_b_); // [N x P*K]
    const DiffTensor per_class = gather(reshape(logits, {n_tokens_ * patch_voxels_ * num_classes_}),
                                        seg_map_, {num_classes_, volume_voxels});
    return softmax(per_class, 0);
}

ForwardResult DaeModel::forward(const Volume& clean_crop, const DisruptionConfig& cfg,
                                Rng& rng) const {
    cfg.validate();
    ForwardResult r;
    r.disrupted = disrupt(clean_crop, cfg, rng);
    TokenGrid tg = tokenize(r.disrupted);
    r.plan = make_mask_plan(n_tokens_, cfg_.embed_dim, cfg.mask_ratio, rng.next_u64(),
                            cfg.mask_shared_channels);
    const TokenGrid encoded = encode(apply_local_mask(tg, r.plan));
    r.recon = decode(encoded);
    r.latent = latent(encoded);
    return r;
}

std::vector<std::vector<float>> DaeModel::stage_features(const Volume& crop) const {
    TokenGrid tg = tokenize(crop); // no tape active in callers; forward-only
    std::vector<DiffTensor> stages;
    encode_tokens(tg.tokens, &stages);
    std::vector<std::vector<float>> pooled;
    pooled.reserve(stages.size());
    for (const auto& s : stages) {
        std::vector<float> mean_c(cfg_.embed_dim, 0.0f);
        for (std::size_t t = 0; t < n_tokens_; ++t)
            for (std::size_t j = 0; j < cfg_.embed_dim; ++j)
                mean_c[j] += s.data()[t * cfg_.embed_dim + j];
        for (auto& v : mean_c) v /= static_cast<float>(n_tokens_);
        pooled.push_back(std::move(mean_c));
    }
    return pooled;
}

} // namespace dae
