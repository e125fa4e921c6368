#pragma once

// Transformer building blocks expressed in tape ops. Templated on the scalar
// so the gradient-check harness can drive them in f64.

#include <cmath>
#include <vector>

#include "dae/tensor.hpp"

namespace dae::nn {

template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
    return add(matmul(x, w), b);
}

template <typename T>
struct AttentionParamsT {
    TensorT<T> wq, bq, wk, bk, wv, bv, wo, bo;
    std::size_t heads = 1;
};

// Full (non-windowed) multi-head self-attention over an [N x C] token matrix.
template <typename T>
AttentionParamsT<T> init_attention(std::size_t dim, std::size_t heads, Rng& rng, T init_std) {
    if (heads == 0 || dim % heads != 0)
        throw ContractError("attention: embed dim " + std::to_string(dim) +
                            " must be divisible by heads " + std::to_string(heads));
    AttentionParamsT<T> p;
    p.heads = heads;
    p.wq = trunc_normal<T>({dim, dim}, rng, init_std, true);
    p.wk = trunc_normal<T>({dim, dim}, rng, init_std, true);
    p.wv = trunc_normal<T>({dim, dim}, rng, init_std, true);
    p.wo = trunc_normal<T>({dim, dim}, rng, init_std, true);
    p.bq = TensorT<T>::zeros({dim}, true);
    p.bk = TensorT<T>::zeros({dim}, true);
    p.bv = TensorT<T>::zeros({dim}, true);
    p.bo = TensorT<T>::zeros({dim}, true);
    return p;
}

template <typename T>
TensorT<T> multi_head_attention(const TensorT<T>& x, const AttentionParamsT<T>& p) {
    const std::size_t c = x.dim(1);
    const std::size_t dh = c / p.heads;
    const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(dh));
    const TensorT<T> q = linear(x, p.wq, p.bq);
    const TensorT<T> k = linear(x, p.wk, p.bk);
    const TensorT<T> v = linear(x, p.wv, p.bv);
    std::vector<TensorT<T>> context;
    context.reserve(p.heads);
    for (std::size_t h = 0; h < p.heads; ++h) {
        const TensorT<T> qh = slice(q, 1, h * dh, dh);
        const TensorT<T> kh = slice(k, 1, h * dh, dh);
        const TensorT<T> vh = slice(v, 1, h * dh, dh);
        const TensorT<T> scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dh);
        context.push_back(matmul(softmax(scores, 1), vh));
    }
    return linear(concat(context, 1), p.wo, p.bo);
}

template <typename T>
struct BlockParamsT {
    TensorT<T> ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
    AttentionParamsT<T> attn;
    TensorT<T> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

template <typename T>
BlockParamsT<T> init_block(std::size_t dim, std::size_t heads, std::size_t mlp_ratio,
                           Rng& rng, T init_std) {
    BlockParamsT<T> p;
    p.ln1_gamma = TensorT<T>::full({dim}, T(1), true);
    p.ln1_beta = TensorT<T>::zeros({dim}, true);
    p.ln2_gamma = TensorT<T>::full({dim}, T(1), true);
    p.ln2_beta = TensorT<T>::zeros({dim}, true);
    p.attn = init_attention<T>(dim, heads, rng, init_std);
    p.mlp_w1 = trunc_normal<T>({dim, dim * mlp_ratio}, rng, init_std, true);
    p.mlp_b1 = TensorT<T>::zeros({dim * mlp_ratio}, true);
    p.mlp_w2 = trunc_normal<T>({dim * mlp_ratio, dim}, rng, init_std, true);
    p.mlp_b2 = TensorT<T>::zeros({dim}, true);
    return p;
}

// pre-LN: x + MHSA(LN(x)), then + MLP(LN(.)) with gelu.
template <typename T>
TensorT<T> encoder_block(const TensorT<T>& x, const BlockParamsT<T>& p, T ln_eps = T(1e-5)) {
    const TensorT<T> h =
        add(x, multi_head_attention(layer_norm(x, p.ln1_gamma, p.ln1_beta, ln_eps), p.attn));
    const TensorT<T> m = linear(
        gelu(linear(layer_norm(h, p.ln2_gamma, p.ln2_beta, ln_eps), p.mlp_w1, p.mlp_b1)),
        p.mlp_w2, p.mlp_b2);
    return add(h, m);
}

} // namespace dae::nn
