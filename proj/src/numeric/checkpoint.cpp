#include "tsd/numeric/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include "tsd/numeric/binary_io.hpp"
#include "tsd/numeric/errors.hpp"

namespace tsd {

using binary::get_le;
using binary::put_le;

namespace {

constexpr std::array<char, 8> kMagic{'T', 'S', 'D', 'T', 'E', 'N', 'S', '\0'};

}  // namespace

void ParameterSet::add(std::string name, Tensor tensor) {
    if (find(name)) throw ContractError("duplicate parameter name " + name);
    entries_.push_back({std::move(name), std::move(tensor)});
}

void ParameterSet::append(const ParameterSet& other, const std::string& prefix) {
    for (const NamedTensor& e : other.entries_) add(prefix + e.name, e.tensor);
}

std::vector<Tensor> ParameterSet::tensors() const {
    std::vector<Tensor> out;
    out.reserve(entries_.size());
    for (const NamedTensor& e : entries_) out.push_back(e.tensor);
    return out;
}

const Tensor* ParameterSet::find(const std::string& name) const {
    for (const NamedTensor& e : entries_) {
        if (e.name == name) return &e.tensor;
    }
    return nullptr;
}

std::size_t ParameterSet::scalar_count() const {
    std::size_t n = 0;
    for (const NamedTensor& e : entries_) n += e.tensor.numel();
    return n;
}

void write_tensors(std::ostream& out, const std::vector<NamedTensor>& tensors) {
    out.write(kMagic.data(), kMagic.size());
    put_le<std::uint32_t>(out, kTensorFileVersion);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const NamedTensor& t : tensors) {
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
        out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        const Shape& shape = t.tensor.shape();
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
        for (std::size_t d : shape) put_le<std::uint64_t>(out, d);
        for (double v : t.tensor.values()) binary::put_f64(out, v);
    }
    if (!out) throw IoError("failed writing tensor file");
}

std::vector<NamedTensor> read_tensors(std::istream& in) {
    std::array<char, 8> magic{};
    if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
        throw IoError("not a tensor file (bad magic)");
    }
    const auto version = get_le<std::uint32_t>(in);
    if (version != kTensorFileVersion) {
        throw IoError("unsupported tensor file version " + std::to_string(version));
    }
    const auto count = get_le<std::uint32_t>(in);
    std::vector<NamedTensor> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = get_le<std::uint32_t>(in);
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len)) throw IoError("truncated tensor name");
        const auto rank = get_le<std::uint32_t>(in);
        Shape shape(rank);
        for (auto& d : shape) d = static_cast<std::size_t>(get_le<std::uint64_t>(in));
        std::vector<double> values(shape_numel(shape));
        for (double& v : values) v = binary::get_f64(in);
        out.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
    }
    return out;
}

void save_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    write_tensors(out, tensors);
}

std::vector<NamedTensor> load_tensors(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return read_tensors(in);
}

void assign_tensors(const ParameterSet& target, const std::vector<NamedTensor>& source) {
    std::unordered_map<std::string, const Tensor*> by_name;
    for (const NamedTensor& s : source) by_name.emplace(s.name, &s.tensor);
    for (const NamedTensor& t : target.entries()) {
        auto it = by_name.find(t.name);
        if (it == by_name.end()) throw ValidationError("checkpoint lacks tensor " + t.name);
        if (it->second->shape() != t.tensor.shape()) {
            throw DimensionError("checkpoint tensor " + t.name + " has shape " +
                                 shape_string(it->second->shape()) + ", expected " +
                                 shape_string(t.tensor.shape()));
        }
        Tensor dst = t.tensor;
        std::ranges::copy(it->second->values(), dst.mutable_values().begin());
    }
}

}  // namespace tsd
