#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "fci/tensor.hpp"

namespace fci {

using Rng = std::mt19937_64;

/// Independent stream for item `index` of a run seeded with `seed`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

template <typename T>
void fill_normal(Tensor<T>& t, double stddev, Rng& rng);

template <typename T>
Tensor<T> normal_tensor(Shape shape, double stddev, Rng& rng, bool requires_grad = true);

/// Named, ordered collection of trainable tensors.
template <typename T>
class ParamSet {
  public:
    struct Entry {
        std::string name;
        Tensor<T> tensor;
        bool decay = true;  // weight decay applies (off for norms and biases)
    };

    void add(std::string name, Tensor<T> tensor, bool decay = true);
    std::size_t size() const noexcept { return entries_.size(); }
    std::size_t scalar_count() const;
    Entry& operator[](std::size_t i) { return entries_[i]; }
    const Entry& operator[](std::size_t i) const { return entries_[i]; }
    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    void zero_grad();
    /// Stop gradient accumulation for every tensor whose name starts with `prefix`.
    void freeze(const std::string& prefix);

    /// Binary checkpoint: name, shape and little-endian values of each entry.
    void save(const std::filesystem::path& path) const;
    /// Loads values into the existing tensors; names and shapes must match.
    void load(const std::filesystem::path& path);

  private:
    std::vector<Entry> entries_;
};

extern template class ParamSet<float>;
extern template class ParamSet<double>;

}  // namespace fci
