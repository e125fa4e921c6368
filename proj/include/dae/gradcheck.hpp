#pragma once

// Central finite-difference oracle for tape gradients. The oracle only ever
// calls the forward path (no tape active), so it stays independent of the
// backward implementation it is checking.

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "dae/rng.hpp"
#include "dae/tensor.hpp"

namespace dae {

// Error metric: |tape - fd| / max(|tape|, |fd|, 1). The unit floor turns the
// comparison into an absolute one where the true gradient is tiny, which is
// the only regime where central differences themselves lose accuracy.
inline double grad_rel_err(double tape_g, double fd_g) {
    return std::abs(tape_g - fd_g) /
           std::max({std::abs(tape_g), std::abs(fd_g), 1.0});
}

// make_loss must rebuild the scalar loss from the current contents of the
// wrt tensors on every call (recording on the active tape if there is one).
// Returns the worst rel err over all checked coordinates. When a tensor has
// more than max_coords_per_tensor elements, a random subset is checked.
template <typename T, typename MakeLoss>
double max_rel_err_fd(MakeLoss&& make_loss, const std::vector<TensorT<T>*>& wrt, T h,
                      std::size_t max_coords_per_tensor = static_cast<std::size_t>(-1),
                      Rng* coord_rng = nullptr) {
    for (auto* t : wrt) {
        t->set_requires_grad(true);
        t->zero_grad();
    }
    std::vector<std::vector<T>> tape_grads;
    {
        TapeT<T> tape;
        typename TapeT<T>::Scope scope(tape);
        TensorT<T> loss = make_loss();
        tape.backward(loss);
    }
    for (auto* t : wrt)
        tape_grads.push_back(t->has_grad() ? t->grad()
                                           : std::vector<T>(t->numel(), T(0)));

    double worst = 0.0;
    for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
        TensorT<T>& t = *wrt[ti];
        std::vector<std::size_t> coords;
        if (t.numel() <= max_coords_per_tensor || coord_rng == nullptr) {
            coords.resize(t.numel());
            for (std::size_t i = 0; i < t.numel(); ++i) coords[i] = i;
        } else {
            coords.resize(max_coords_per_tensor);
            for (auto& c : coords) c = coord_rng->below(t.numel());
        }
        for (const std::size_t idx : coords) {
            const T saved = t.data()[idx];
            t.data()[idx] = saved + h;
            const double f_plus = static_cast<double>(make_loss().item());
            t.data()[idx] = saved - h;
            const double f_minus = static_cast<double>(make_loss().item());
            t.data()[idx] = saved;
            const double fd = (f_plus - f_minus) / (2.0 * static_cast<double>(h));
            worst = std::max(worst,
                             grad_rel_err(static_cast<double>(tape_grads[ti][idx]), fd));
        }
    }
    return worst;
}

// One row of the standard gradient-check battery (also surfaced by the CLI).
struct GradCheckRow {
    std::string op;
    double max_rel_err;
    double threshold;
    bool pass;
};

// Runs every differentiable operation through the finite-difference oracle:
// elementwise and matrix ops plus the composite losses in f64 (h = 1e-3,
// threshold 1e-5) and the full model forward in f32 (threshold 1e-3),
// each over `seeds` random seeds.
std::vector<GradCheckRow> run_gradcheck_battery(int seeds = 20);

} // namespace dae
