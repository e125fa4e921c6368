#include "dae/disruption.hpp"

#include <algorithm>
#include <cmath>

#include "dae/errors.hpp"

namespace dae {

void DisruptionConfig::validate() const {
    if (noise_sigma < 0.0f) throw ParamError("noise_sigma must be >= 0");
    if (downsample_ratio < 1.0) throw ParamError("downsample_ratio must be >= 1");
    if (mask_ratio < 0.0 || mask_ratio > 1.0)
        throw ParamError("mask_ratio must lie in [0, 1]");
}

Volume add_noise(const Volume& x, float mu, float sigma, Rng& rng) {
    if (sigma < 0.0f) throw ParamError("add_noise: sigma must be >= 0");
    Volume out = x;
    if (sigma == 0.0f && mu == 0.0f) return out;
    for (auto& v : out.voxels)
        v += static_cast<float>(rng.normal(static_cast<double>(mu), static_cast<double>(sigma)));
    return out;
}

namespace {

// Align-corners trilinear resample; reproduces affine fields exactly and is
// the identity when the grids coincide.
std::vector<float> resample(const std::vector<float>& src, std::array<std::size_t, 3> from,
                            std::array<std::size_t, 3> to) {
    std::vector<float> dst(to[0] * to[1] * to[2]);
    const auto coord = [](std::size_t i, std::size_t t, std::size_t s) {
        if (t <= 1) return (static_cast<double>(s) - 1.0) / 2.0;
        return static_cast<double>(i) * (static_cast<double>(s) - 1.0) /
               (static_cast<double>(t) - 1.0);
    };
    for (std::size_t d = 0; d < to[0]; ++d) {
        const double fz = coord(d, to[0], from[0]);
        const std::size_t z0 = static_cast<std::size_t>(fz);
        const std::size_t z1 = std::min(z0 + 1, from[0] - 1);
        const double wz = fz - static_cast<double>(z0);
        for (std::size_t h = 0; h < to[1]; ++h) {
            const double fy = coord(h, to[1], from[1]);
            const std::size_t y0 = static_cast<std::size_t>(fy);
            const std::size_t y1 = std::min(y0 + 1, from[1] - 1);
            const double wy = fy - static_cast<double>(y0);
            for (std::size_t w = 0; w < to[2]; ++w) {
                const double fx = coord(w, to[2], from[2]);
                const std::size_t x0 = static_cast<std::size_t>(fx);
                const std::size_t x1 = std::min(x0 + 1, from[2] - 1);
                const double wx = fx - static_cast<double>(x0);
                const auto at = [&](std::size_t z, std::size_t y, std::size_t x) {
                    return static_cast<double>(src[(z * from[1] + y) * from[2] + x]);
                };
                const double c00 = at(z0, y0, x0) * (1 - wx) + at(z0, y0, x1) * wx;
                const double c01 = at(z0, y1, x0) * (1 - wx) + at(z0, y1, x1) * wx;
                const double c10 = at(z1, y0, x0) * (1 - wx) + at(z1, y0, x1) * wx;
                const double c11 = at(z1, y1, x0) * (1 - wx) + at(z1, y1, x1) * wx;
                const double c0 = c00 * (1 - wy) + c01 * wy;
                const double c1 = c10 * (1 - wy) + c11 * wy;
                dst[(d * to[1] + h) * to[2] + w] =
                    static_cast<float>(c0 * (1 - wz) + c1 * wz);
            }
        }
    }
    return dst;
}

} // namespace

Volume down_up(const Volume& x, double epsilon) {
    if (epsilon < 1.0) throw ParamError("down_up: epsilon must be >= 1");
    std::array<std::size_t, 3> low{};
    for (std::size_t i = 0; i < 3; ++i) {
        if (static_cast<double>(x.dims[i]) < epsilon)
            throw ParamError("down_up: dim " + std::to_string(x.dims[i]) +
                             " smaller than epsilon " + std::to_string(epsilon));
        low[i] = static_cast<std::size_t>(static_cast<double>(x.dims[i]) / epsilon);
    }
    Volume out = x;
    if (low == x.dims) return out; // epsilon == 1 (or rounds to the same grid)
    const std::vector<float> lr = resample(x.voxels, x.dims, low);
    out.voxels = resample(lr, low, x.dims);
    return out;
}

std::size_t mask_count_per_token(double ratio, std::size_t channel_count) {
    return static_cast<std::size_t>(
        std::floor(ratio * static_cast<double>(channel_count)));
}

MaskPlan make_mask_plan(std::size_t token_count, std::size_t channel_count, double ratio,
                        std::uint64_t seed, bool shared_channels) {
    if (ratio < 0.0 || ratio > 1.0) throw ParamError("mask ratio must lie in [0, 1]");
    MaskPlan plan;
    plan.token_count = token_count;
    plan.channel_count = channel_count;
    plan.seed = seed;
    plan.masked.resize(token_count);
    const std::size_t k = mask_count_per_token(ratio, channel_count);
    Rng rng(seed);
    std::vector<std::uint16_t> pool(channel_count);

    const auto draw = [&](std::vector<std::uint16_t>& out) {
        for (std::size_t c = 0; c < channel_count; ++c)
            pool[c] = static_cast<std::uint16_t>(c);
        // partial Fisher-Yates: first k entries are a uniform subset
        for (std::size_t i = 0; i < k; ++i)
            std::swap(pool[i], pool[i + rng.below(channel_count - i)]);
        out.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
        std::sort(out.begin(), out.end());
    };

    if (shared_channels) {
        std::vector<std::uint16_t> shared;
        draw(shared);
        for (auto& m : plan.masked) m = shared;
    } else {
        for (auto& m : plan.masked) draw(m);
    }
    return plan;
}

DiffTensor mask_tensor(const MaskPlan& plan) {
    DiffTensor m = DiffTensor::full({plan.token_count, plan.channel_count}, 1.0f);
    for (std::size_t t = 0; t < plan.token_count; ++t)
        for (const std::uint16_t c : plan.masked[t])
            m.data()[t * plan.channel_count + c] = 0.0f;
    return m;
}

TokenGrid apply_local_mask(const TokenGrid& tokens, const MaskPlan& plan) {
    if (tokens.token_count() != plan.token_count || tokens.channels() != plan.channel_count)
        throw ContractError("apply_local_mask: plan is " + std::to_string(plan.token_count) +
                            "x" + std::to_string(plan.channel_count) + " but tokens are " +
                            shape_str(tokens.tokens.shape()));
    TokenGrid out = tokens;
    out.tokens = mul(tokens.tokens, mask_tensor(plan));
    return out;
}

Volume disrupt(const Volume& x, const DisruptionConfig& cfg, Rng& rng) {
    cfg.validate();
    Volume noisy = add_noise(x, cfg.noise_mu, cfg.noise_sigma, rng);
    return down_up(noisy, cfg.downsample_ratio);
}

} // namespace dae
