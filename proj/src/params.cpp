#include "fci/params.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace fci {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    // splitmix64 finaliser over a combined key
    std::uint64_t z = seed * 0x9E3779B97F4A7C15ULL + index + 0x632BE59BD9B4E019ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

template <typename T>
void fill_normal(Tensor<T>& t, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : t.data()) v = static_cast<T>(dist(rng));
}

template <typename T>
Tensor<T> normal_tensor(Shape shape, double stddev, Rng& rng, bool requires_grad) {
    Tensor<T> t(std::move(shape), requires_grad);
    fill_normal(t, stddev, rng);
    return t;
}

template <typename T>
void ParamSet<T>::add(std::string name, Tensor<T> tensor, bool decay) {
    for (const auto& e : entries_) {
        if (e.name == name) throw ContractError("ParamSet: duplicate parameter name " + name);
    }
    entries_.push_back(Entry{std::move(name), std::move(tensor), decay});
}

template <typename T>
std::size_t ParamSet<T>::scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
}

template <typename T>
void ParamSet<T>::zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
}

template <typename T>
void ParamSet<T>::freeze(const std::string& prefix) {
    for (auto& e : entries_) {
        if (e.name.rfind(prefix, 0) == 0) e.tensor.set_requires_grad(false);
    }
}

namespace {

constexpr char kCheckpointMagic[8] = {'F', 'C', 'I', 'C', 'K', 'P', 'T', '1'};

void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64(std::istream& is) {
    unsigned char buf[8];
    if (!is.read(reinterpret_cast<char*>(buf), 8)) throw ParseError("checkpoint: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

}  // namespace

template <typename T>
void ParamSet<T>::save(const std::filesystem::path& path) const {
    static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes little-endian");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot write " + path.string());
    os.write(kCheckpointMagic, 8);
    write_u64(os, sizeof(T));
    write_u64(os, entries_.size());
    for (const auto& e : entries_) {
        write_u64(os, e.name.size());
        os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        write_u64(os, e.tensor.rank());
        for (auto d : e.tensor.shape()) write_u64(os, d);
        os.write(reinterpret_cast<const char*>(e.tensor.ptr()),
                 static_cast<std::streamsize>(e.tensor.numel() * sizeof(T)));
    }
}

template <typename T>
void ParamSet<T>::load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
        throw ParseError("checkpoint: bad magic in " + path.string());
    }
    if (read_u64(is) != sizeof(T)) throw ParseError("checkpoint: scalar width mismatch");
    if (read_u64(is) != entries_.size()) throw ParseError("checkpoint: parameter count mismatch");
    for (auto& e : entries_) {
        std::string name(read_u64(is), '\0');
        is.read(name.data(), static_cast<std::streamsize>(name.size()));
        if (name != e.name) throw ParseError("checkpoint: expected " + e.name + ", found " + name);
        Shape shape(read_u64(is));
        for (auto& d : shape) d = read_u64(is);
        if (shape != e.tensor.shape()) throw ParseError("checkpoint: shape mismatch for " + name);
        if (!is.read(reinterpret_cast<char*>(e.tensor.ptr()), static_cast<std::streamsize>(e.tensor.numel() * sizeof(T)))) {
            throw ParseError("checkpoint: truncated values for " + name);
        }
    }
}

template class ParamSet<float>;
template class ParamSet<double>;
template void fill_normal(Tensor<float>&, double, Rng&);
template void fill_normal(Tensor<double>&, double, Rng&);
template Tensor<float> normal_tensor(Shape, double, Rng&, bool);
template Tensor<double> normal_tensor(Shape, double, Rng&, bool);

}  // namespace fci
