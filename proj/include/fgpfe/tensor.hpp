#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace fgpfe::nd {

using Shape = std::vector<std::size_t>;

namespace detail {
void* allocate_bytes(std::size_t bytes);
void release_bytes(void* p, std::size_t bytes) noexcept;
}  // namespace detail

// Large blocks go to 2 MiB aligned memory flagged for transparent huge pages;
// a full-range BEV map is half a gigabyte and otherwise spends most of its
// time in page faults.
template <class T>
struct PageAllocator {
    using value_type = T;
    PageAllocator() = default;
    template <class U>
    PageAllocator(const PageAllocator<U>&) noexcept {}  // NOLINT(google-explicit-constructor)
    T* allocate(std::size_t n) { return static_cast<T*>(detail::allocate_bytes(n * sizeof(T))); }
    void deallocate(T* p, std::size_t n) noexcept { detail::release_bytes(p, n * sizeof(T)); }
    template <class U>
    friend bool operator==(const PageAllocator&, const PageAllocator<U>&) noexcept { return true; }
};

using Storage = std::vector<double, PageAllocator<double>>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major float64 array. Value type; copies are deep.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::vector<double> to_vector() const { return {data_.begin(), data_.end()}; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // Multi-index access; the index count must equal rank().
    double& at(std::initializer_list<std::size_t> idx);
    double at(std::initializer_list<std::size_t> idx) const;

    double item() const;

    Tensor reshaped(Shape shape) const;
    void fill(double v);
    bool all_finite() const;

    // Bit-equal shape and payload.
    friend bool operator==(const Tensor& a, const Tensor& b);

private:
    std::size_t offset(std::initializer_list<std::size_t> idx) const;

    Shape shape_;
    Storage data_;
};

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace fgpfe::nd
