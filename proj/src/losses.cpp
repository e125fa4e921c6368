#include "dae/losses.hpp"

namespace dae {

LabelMatrix label_matrix(const std::vector<ModalityTag>& modalities) {
    LabelMatrix m;
    m.batch = modalities.size();
    m.values.assign(m.batch * m.batch, 0);
    std::vector<std::string> keys(m.batch);
    for (std::size_t i = 0; i < m.batch; ++i) keys[i] = modality_key(modalities[i]);
    for (std::size_t i = 0; i < m.batch; ++i)
        for (std::size_t j = 0; j < m.batch; ++j)
            m.values[i * m.batch + j] = keys[i] == keys[j] ? 1 : 0;
    return m;
}

double mean_hard_dice(const TensorT<float>& probs, const std::vector<std::uint8_t>& gt) {
    const std::size_t k = probs.dim(0);
    const std::size_t v = probs.numel() / k;
    if (gt.size() != v)
        throw ContractError("mean_hard_dice: voxel count mismatch");
    std::vector<std::size_t> inter(k, 0), pred_n(k, 0), gt_n(k, 0);
    for (std::size_t i = 0; i < v; ++i) {
        std::size_t best = 0;
        float best_p = probs.data()[i];
        for (std::size_t c = 1; c < k; ++c) {
            const float p = probs.data()[c * v + i];
            if (p > best_p) {
                best_p = p;
                best = c;
            }
        }
        ++pred_n[best];
        ++gt_n[gt[i]];
        if (best == gt[i]) ++inter[best];
    }
    double total = 0.0;
    std::size_t counted = 0;
    for (std::size_t c = 0; c < k; ++c) {
        if (pred_n[c] + gt_n[c] == 0) continue; // absent everywhere: skip
        total += 2.0 * static_cast<double>(inter[c]) /
                 static_cast<double>(pred_n[c] + gt_n[c]);
        ++counted;
    }
    return counted == 0 ? 1.0 : total / static_cast<double>(counted);
}

} // namespace dae
