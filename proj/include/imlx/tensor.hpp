#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace imlx {

// Dense row-major tensor of 32-bit floats. Reductions that feed losses or
// gradients accumulate in double; storage stays single precision.
struct Tensor {
    std::vector<int> dims;
    std::vector<float> data;

    Tensor() = default;

    explicit Tensor(std::vector<int> d) : dims(std::move(d)), data(checked_size(dims), 0.0f) {}

    Tensor(std::vector<int> d, std::vector<float> values) : dims(std::move(d)), data(std::move(values)) {
        if (data.size() != checked_size(dims))
            throw std::invalid_argument("Tensor: dims product does not match data length");
    }

    std::size_t size() const { return data.size(); }

    int dim(std::size_t i) const { return i < dims.size() ? dims[i] : 1; }

    float* ptr() { return data.data(); }
    const float* ptr() const { return data.data(); }

    float& operator[](std::size_t i) { return data[i]; }
    float operator[](std::size_t i) const { return data[i]; }

    bool same_shape(const Tensor& other) const { return dims == other.dims; }

    static std::size_t checked_size(const std::vector<int>& dims) {
        std::size_t n = 1;
        for (int d : dims) {
            if (d < 0) throw std::invalid_argument("Tensor: negative extent");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }
};

inline std::string shape_string(const std::vector<int>& dims) {
    std::string s = "[";
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(dims[i]);
    }
    return s + "]";
}

} // namespace imlx
