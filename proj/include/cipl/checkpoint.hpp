#pragma once

#include <string>
#include <vector>

namespace cipl {

struct NamedTensor {
    std::string name;
    std::vector<int> dims;
    std::vector<float> data;
};

// Layout: magic "CIPL", version u32 LE, then per tensor: name length (u32),
// name bytes, rank (u32), dims (u32 each), raw 32-bit little-endian reals;
// trailing CRC32 over everything before it.
void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::string& path);

}  // namespace cipl
