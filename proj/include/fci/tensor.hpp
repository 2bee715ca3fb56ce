#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fci/errors.hpp"

namespace fci {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct TensorStorage {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until the first accumulation
    bool requires_grad = false;
};

/// Dense row-major array with an optional gradient buffer.
///
/// Copies are shallow: two Tensor handles may refer to the same storage, which
/// is how parameters are shared between a model and the graphs built from it.
/// Use clone() for a deep copy.
template <typename T>
class Tensor {
  public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, bool requires_grad = false);
    Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

    static Tensor scalar(T value, bool requires_grad = false);
    static Tensor full(Shape shape, T value, bool requires_grad = false);

    bool defined() const noexcept { return static_cast<bool>(impl_); }

    const Shape& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
    std::size_t numel() const { return impl_ ? impl_->data.size() : 0; }
    /// Rows/cols of a rank-2 tensor; a rank-1 tensor reads as a single row.
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<T> data() { return impl_->data; }
    std::span<const T> data() const { return impl_->data; }
    T* ptr() { return impl_->data.data(); }
    const T* ptr() const { return impl_->data.data(); }

    T& operator[](std::size_t i) { return impl_->data[i]; }
    T operator[](std::size_t i) const { return impl_->data[i]; }
    T& at(std::size_t r, std::size_t c) { return impl_->data[r * cols() + c]; }
    T at(std::size_t r, std::size_t c) const { return impl_->data[r * cols() + c]; }
    T item() const;

    bool requires_grad() const { return impl_ && impl_->requires_grad; }
    void set_requires_grad(bool on) { impl_->requires_grad = on; }

    bool has_grad() const { return impl_ && !impl_->grad.empty(); }
    /// Gradient buffer, allocated (zero-filled) on first access. Constness of
    /// the handle does not extend to the shared storage.
    std::span<T> grad() const;
    void zero_grad();

    /// True when every stored value is finite.
    bool all_finite() const;

    Tensor clone() const;
    /// Same values, fresh storage, no gradient tracking.
    Tensor detach() const;

    bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }
    const void* id() const noexcept { return impl_.get(); }

  private:
    std::shared_ptr<TensorStorage<T>> impl_;
};

/// Ordered tape of differentiable operations.
///
/// Each record names its op, the ids of its inputs, the id of the output and a
/// closure that pushes the output gradient into the inputs. Records are
/// appended as ops execute, so the tape is topologically ordered.
template <typename T>
class Graph {
  public:
    struct Record {
        std::string_view op;
        std::vector<const void*> inputs;
        Tensor<T> output;
        std::function<void(const Tensor<T>&)> backward;
    };

    Graph() = default;
    /// A graph with recording disabled evaluates ops without building a tape.
    explicit Graph(bool enabled) : enabled_(enabled) {}

    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;
    Graph(Graph&&) = default;
    Graph& operator=(Graph&&) = default;

    bool enabled() const noexcept { return enabled_; }

    /// Whether an op over these inputs must be recorded.
    template <typename... Ts>
    bool tracks(const Ts&... inputs) const {
        return enabled_ && (inputs.requires_grad() || ...);
    }
    bool tracks_any(std::span<const Tensor<T>> inputs) const;

    void record(std::string_view op, std::vector<const void*> inputs, Tensor<T> output,
                std::function<void(const Tensor<T>&)> backward);

    std::size_t size() const noexcept { return records_.size(); }
    const Record& operator[](std::size_t i) const { return records_[i]; }
    void clear() { records_.clear(); }

  private:
    std::vector<Record> records_;
    bool enabled_ = true;
};

/// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate across
/// calls; intermediate gradients are reset at the start of every sweep.
template <typename T>
void backward(Graph<T>& graph, const Tensor<T>& loss);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace fci
