#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dae {

struct NamedTensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<float> data;
};

// DAEC container (little-endian): magic "DAEC", u32 version, u32 tensor
// count; per tensor: u16 name length, name bytes, u8 rank, u32 dims[rank],
// f32 payload. Optimizer state rides along under names prefixed "opt.".
void save_daec(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_daec(const std::string& path);

const NamedTensor* find_tensor(const std::vector<NamedTensor>& tensors,
                               const std::string& name);

} // namespace dae
