#pragma once

#include <Eigen/Core>

#include "fci/tensor.hpp"

namespace fci {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
Eigen::Map<const RowMatrix<T>> view(const Tensor<T>& t) {
    return {t.ptr(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

template <typename T>
Eigen::Map<RowMatrix<T>> view(Tensor<T>& t) {
    return {t.ptr(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

/// Gradient buffer of a tensor handle, allocated on first use.
template <typename T>
Eigen::Map<RowMatrix<T>> grad_view(Tensor<T> t) {
    auto g = t.grad();
    return {g.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

}  // namespace fci
