#include "fci/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace fci {

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, bool requires_grad)
    : impl_(std::make_shared<TensorStorage<T>>()) {
    impl_->data.assign(fci::numel(shape), T{0});
    impl_->shape = std::move(shape);
    impl_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad)
    : impl_(std::make_shared<TensorStorage<T>>()) {
    if (fci::numel(shape) != values.size()) {
        throw DimensionError("tensor: shape " + shape_str(shape) + " does not hold " +
                             std::to_string(values.size()) + " values");
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
    impl_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
    return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
    Tensor t(std::move(shape), requires_grad);
    std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
    return t;
}

template <typename T>
std::size_t Tensor<T>::rows() const {
    const auto& s = impl_->shape;
    if (s.size() == 1) return 1;
    if (s.size() == 2) return s[0];
    throw DimensionError("rows(): expected rank 1 or 2, got " + shape_str(s));
}

template <typename T>
std::size_t Tensor<T>::cols() const {
    const auto& s = impl_->shape;
    if (s.size() == 1) return s[0];
    if (s.size() == 2) return s[1];
    throw DimensionError("cols(): expected rank 1 or 2, got " + shape_str(s));
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) throw ContractError("item(): tensor has " + std::to_string(numel()) + " elements");
    return impl_->data[0];
}

template <typename T>
std::span<T> Tensor<T>::grad() const {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T{0});
    return impl_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
    std::fill(impl_->grad.begin(), impl_->grad.end(), T{0});
}

template <typename T>
bool Tensor<T>::all_finite() const {
    return std::all_of(impl_->data.begin(), impl_->data.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
    Tensor out(impl_->shape, impl_->data, impl_->requires_grad);
    out.impl_->grad = impl_->grad;
    return out;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
    return Tensor(impl_->shape, impl_->data, false);
}

template <typename T>
bool Graph<T>::tracks_any(std::span<const Tensor<T>> inputs) const {
    if (!enabled_) return false;
    return std::any_of(inputs.begin(), inputs.end(), [](const Tensor<T>& t) { return t.requires_grad(); });
}

template <typename T>
void Graph<T>::record(std::string_view op, std::vector<const void*> inputs, Tensor<T> output,
                      std::function<void(const Tensor<T>&)> backward) {
    output.set_requires_grad(true);
    records_.push_back(Record{op, std::move(inputs), std::move(output), std::move(backward)});
}

template <typename T>
void backward(Graph<T>& graph, const Tensor<T>& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ContractError("backward: loss must be a scalar tensor");
    }
    if (!loss.requires_grad()) {
        throw ContractError("backward: loss does not depend on any tensor requiring grad");
    }
    for (std::size_t i = 0; i < graph.size(); ++i) {
        auto out = graph[i].output;
        out.zero_grad();
    }
    auto seed = loss;
    seed.grad()[0] += T{1};
    for (std::size_t i = graph.size(); i-- > 0;) {
        const auto& rec = graph[i];
        if (!rec.output.has_grad()) continue;  // not reachable from the loss
        rec.backward(rec.output);
    }
}

template class Tensor<float>;
template class Tensor<double>;
template class Graph<float>;
template class Graph<double>;
template void backward(Graph<float>&, const Tensor<float>&);
template void backward(Graph<double>&, const Tensor<double>&);

}  // namespace fci
