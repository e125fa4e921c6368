#pragma once

#include <array>
#include <cstddef>

#include "dae/tensor.hpp"

namespace dae {

// Patch-embedding output: one C-dim token per non-overlapping 3D patch,
// plus the grid geometry needed to invert the tokenization.
struct TokenGrid {
    DiffTensor tokens;                 // [N x C]
    std::array<std::size_t, 3> grid{}; // (gd, gh, gw), N = gd*gh*gw
    std::array<std::size_t, 3> patch{};

    std::size_t token_count() const { return grid[0] * grid[1] * grid[2]; }
    std::size_t channels() const { return tokens.dim(1); }
};

} // namespace dae
