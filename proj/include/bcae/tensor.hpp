#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "bcae/common.hpp"

namespace bcae {

// Spatial extent triple (azimuthal, horizontal, radial).
struct Dims3 {
    int d0 = 0, d1 = 0, d2 = 0;

    int operator[](int i) const { return i == 0 ? d0 : (i == 1 ? d1 : d2); }
    int& operator[](int i) { return i == 0 ? d0 : (i == 1 ? d1 : d2); }
    bool operator==(const Dims3&) const = default;
    std::size_t volume() const {
        return static_cast<std::size_t>(d0) * static_cast<std::size_t>(d1) *
               static_cast<std::size_t>(d2);
    }
    std::string str() const {
        return "(" + std::to_string(d0) + "," + std::to_string(d1) + "," + std::to_string(d2) +
               ")";
    }
};

// Dense float32 tensor, layout (channel, d0, d1, d2) row-major.
class Tensor {
public:
    Tensor() = default;
    Tensor(int channels, Dims3 sp)
        : c_(channels), sp_(sp), v_(static_cast<std::size_t>(channels) * sp.volume(), 0.0f) {}

    int channels() const { return c_; }
    const Dims3& spatial() const { return sp_; }
    std::size_t size() const { return v_.size(); }
    bool empty() const { return v_.empty(); }

    float* data() { return v_.data(); }
    const float* data() const { return v_.data(); }
    std::vector<float>& vec() { return v_; }
    const std::vector<float>& vec() const { return v_; }

    std::size_t channel_stride() const { return sp_.volume(); }

    float& at(int c, int i, int j, int k) {
        return v_[((static_cast<std::size_t>(c) * sp_.d0 + i) * sp_.d1 + j) * sp_.d2 + k];
    }
    float at(int c, int i, int j, int k) const {
        return v_[((static_cast<std::size_t>(c) * sp_.d0 + i) * sp_.d1 + j) * sp_.d2 + k];
    }

    void fill(float x) { v_.assign(v_.size(), x); }

    static Tensor zeros_like(const Tensor& t) { return Tensor(t.c_, t.sp_); }

    bool same_shape(const Tensor& o) const { return c_ == o.c_ && sp_ == o.sp_; }

private:
    int c_ = 0;
    Dims3 sp_{};
    std::vector<float> v_;
};

}  // namespace bcae
