#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "dae/tensor.hpp"
#include "dae/volume.hpp"

namespace dae {

inline constexpr double kCmclTemperature = 0.07;
inline constexpr double kCmclAlpha = 0.05;
inline constexpr double kDiceSmooth = 1e-5;

template <typename T>
struct SimilarityMatrixT {
    TensorT<T> values; // [B x B] scaled cosine similarities
    T temperature;
};
using SimilarityMatrix = SimilarityMatrixT<float>;

// 0/1 modality-equality matrix: entry (i, j) = 1 iff tags i and j match
// case-insensitively. Diagonal all ones, symmetric.
struct LabelMatrix {
    std::size_t batch = 0;
    std::vector<std::uint8_t> values; // row-major [B x B]
};

LabelMatrix label_matrix(const std::vector<ModalityTag>& modalities);

// values = (z z^T) * exp(t). Rows of z must already be unit norm (within
// 1e-5); cosine similarity needs normalized vectors.
template <typename T>
SimilarityMatrixT<T> similarity(const TensorT<T>& z, T temperature = T(kCmclTemperature)) {
    if (z.rank() != 2)
        throw ContractError("similarity: expected [B x latent] features, got " +
                            shape_str(z.shape()));
    const std::size_t b = z.dim(0), l = z.dim(1);
    for (std::size_t i = 0; i < b; ++i) {
        T ss = T(0);
        for (std::size_t j = 0; j < l; ++j) ss += z.data()[i * l + j] * z.data()[i * l + j];
        if (std::abs(std::sqrt(ss) - T(1)) > T(1e-5))
            throw ContractError("similarity: row " + std::to_string(i) +
                                " is not unit norm (|z| = " + std::to_string(std::sqrt(ss)) +
                                ")");
    }
    SimilarityMatrixT<T> sim;
    sim.temperature = temperature;
    sim.values = scale(matmul(z, transpose(z)), std::exp(temperature));
    return sim;
}

// alpha * 1/2 * (BCE across rows + BCE across columns), where BCE applies an
// elementwise sigmoid to the scaled similarities and mean-reduces. Both
// reductions coincide on a symmetric batch-vs-itself matrix but are computed
// separately.
template <typename T>
TensorT<T> cmcl_loss(const SimilarityMatrixT<T>& sim, const LabelMatrix& labels,
                     T alpha = T(kCmclAlpha)) {
    const std::size_t b = labels.batch;
    if (sim.values.rank() != 2 || sim.values.dim(0) != b || sim.values.dim(1) != b)
        throw ContractError("cmcl_loss: similarity is " + shape_str(sim.values.shape()) +
                            " but labels are " + std::to_string(b) + "x" + std::to_string(b));
    std::vector<T> targets(b * b), targets_t(b * b);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < b; ++j) {
            targets[i * b + j] = static_cast<T>(labels.values[i * b + j]);
            targets_t[j * b + i] = static_cast<T>(labels.values[i * b + j]);
        }
    const TensorT<T> bce_rows = bce_with_logits_mean(sim.values, targets);
    const TensorT<T> bce_cols = bce_with_logits_mean(transpose(sim.values), targets_t);
    return scale(add(bce_rows, bce_cols), alpha * T(0.5));
}

template <typename T>
struct PretrainLossT {
    TensorT<T> total, l1_part, cmcl_part;
};
using PretrainLoss = PretrainLossT<float>;

// total = L1(recon, target) + CMCL, reported separately for logging.
// total is formed by adding the two scalar parts, so total == l1 + cmcl
// holds bit-exactly.
template <typename T>
PretrainLossT<T> pretrain_loss(const TensorT<T>& recon, const TensorT<T>& target,
                               const TensorT<T>& z, const std::vector<ModalityTag>& modalities,
                               T alpha = T(kCmclAlpha), T temperature = T(kCmclTemperature)) {
    if (z.rank() != 2 || z.dim(0) != modalities.size())
        throw ContractError("pretrain_loss: " + std::to_string(modalities.size()) +
                            " modality tags for features " + shape_str(z.shape()));
    PretrainLossT<T> out;
    out.l1_part = l1(recon, target);
    out.cmcl_part = cmcl_loss(similarity(z, temperature), label_matrix(modalities), alpha);
    out.total = add(out.l1_part, out.cmcl_part);
    return out;
}

// Soft Dice loss: 1 - mean over classes of
// (2 sum(p*g) + s) / (sum(p) + sum(g) + s).
// pred holds per-class probabilities with the class axis first ([K x V] or
// [K x D x H x W]); every voxel's class column must sum to 1 within 1e-5.
template <typename T>
TensorT<T> dice_loss(const TensorT<T>& pred, const std::vector<std::uint8_t>& gt,
                     T smooth = T(kDiceSmooth)) {
    if (pred.rank() < 2) throw ContractError("dice_loss: pred must have a class axis");
    const std::size_t k = pred.dim(0);
    const std::size_t v = pred.numel() / k;
    if (gt.size() != v)
        throw ContractError("dice_loss: " + std::to_string(gt.size()) +
                            " ground-truth voxels for prediction " + shape_str(pred.shape()));
    for (const std::uint8_t g : gt)
        if (g >= k)
            throw ContractError("dice_loss: label " + std::to_string(g) +
                                " outside the " + std::to_string(k) + "-class prediction");
    for (std::size_t i = 0; i < v; ++i) {
        T col = T(0);
        for (std::size_t c = 0; c < k; ++c) col += pred.data()[c * v + i];
        if (std::abs(col - T(1)) > T(1e-5))
            throw ContractError("dice_loss: class probabilities at voxel " +
                                std::to_string(i) + " sum to " + std::to_string(col));
    }

    const TensorT<T> flat = reshape(pred, {k, v});
    TensorT<T> acc = TensorT<T>::scalar(T(0));
    for (std::size_t c = 0; c < k; ++c) {
        std::vector<T> onehot(v, T(0));
        T gsum = T(0);
        for (std::size_t i = 0; i < v; ++i)
            if (gt[i] == c) {
                onehot[i] = T(1);
                gsum += T(1);
            }
        const TensorT<T> pk = slice(flat, 0, c, 1);
        const TensorT<T> inter = sum(mul(pk, TensorT<T>::from({1, v}, std::move(onehot))));
        const TensorT<T> psum = sum(pk);
        const TensorT<T> numer = add_scalar(scale(inter, T(2)), smooth);
        const TensorT<T> denom = add_scalar(psum, gsum + smooth);
        acc = add(acc, divide(numer, denom));
    }
    return add_scalar(scale(acc, T(-1) / static_cast<T>(k)), T(1));
}

// Evaluation metric: hard Dice of the argmax prediction, averaged over the
// classes present in either the prediction or the ground truth.
double mean_hard_dice(const TensorT<float>& probs, const std::vector<std::uint8_t>& gt);

} // namespace dae
