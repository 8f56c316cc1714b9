#pragma once

#include <cstdint>
#include <initializer_list>
#include <new>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace gpsgen {

/// Allocator with a fixed over-alignment. Tensor buffers use it so that SIMD
/// kernels (Eigen's vectorized reductions in particular) take the same code
/// path every run; with malloc's default alignment the head/tail peeling, and
/// hence the float accumulation order, would depend on heap addresses and
/// bit-for-bit reproducibility would be lost.
template <typename T, std::size_t Align>
struct AlignedAllocator {
    using value_type = T;

    AlignedAllocator() noexcept = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U, Align>&) noexcept {}

    T* allocate(std::size_t n) {
        return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{Align}));
    }
    void deallocate(T* p, std::size_t n) noexcept {
        ::operator delete(p, n * sizeof(T), std::align_val_t{Align});
    }

    template <typename U>
    struct rebind {
        using other = AlignedAllocator<U, Align>;
    };
    friend bool operator==(const AlignedAllocator&, const AlignedAllocator&) { return true; }
    friend bool operator!=(const AlignedAllocator&, const AlignedAllocator&) { return false; }
};

using FloatBuffer = std::vector<float, AlignedAllocator<float, 64>>;

/// Dense row-major float tensor. Rank is dynamic; most ops in this codebase
/// treat the tensor as a 2D matrix of (rows = product of leading dims, cols =
/// last dim) and reshape freely, since reshape never moves data.
struct Tensor {
    std::vector<int> shape;
    FloatBuffer data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(numel(shape), 0.0f) {}
    Tensor(std::vector<int> s, FloatBuffer d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<int64_t>(data.size()) != numel(shape))
            throw std::invalid_argument("Tensor: data size does not match shape");
    }

    static int64_t numel(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) {
            if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
            n *= d;
        }
        return n;
    }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<int> s, float v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }
    static Tensor scalar(float v) { return Tensor({1}, {v}); }

    int64_t size() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape.at(static_cast<size_t>(i)); }

    /// Rows/cols of the implicit 2D view (leading dims flattened).
    int64_t rows2d() const { return shape.empty() ? 1 : size() / shape.back(); }
    int cols2d() const { return shape.empty() ? 1 : shape.back(); }

    Tensor reshaped(std::vector<int> s) const {
        if (numel(s) != size()) throw std::invalid_argument("reshape: element count mismatch");
        return Tensor(std::move(s), data);
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    float& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    float operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    std::string shape_str() const;
};

}  // namespace gpsgen
