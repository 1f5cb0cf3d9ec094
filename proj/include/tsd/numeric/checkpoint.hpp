#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "tsd/numeric/tensor.hpp"

namespace tsd {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

/// Ordered collection of named tensors. Holds handles, so loading into a
/// ParameterSet writes through to the model that produced it.
class ParameterSet {
public:
    void add(std::string name, Tensor tensor);
    void append(const ParameterSet& other, const std::string& prefix = "");

    const std::vector<NamedTensor>& entries() const noexcept { return entries_; }
    std::vector<Tensor> tensors() const;
    const Tensor* find(const std::string& name) const;
    std::size_t size() const noexcept { return entries_.size(); }
    std::size_t scalar_count() const;

private:
    std::vector<NamedTensor> entries_;
};

// Container layout, all integers little-endian:
//   magic "TSDTENS\0" | u32 version | u32 count
//   per tensor: u32 name_len | name bytes | u32 rank | u64 dims[rank] | f64 values[numel]
inline constexpr std::uint32_t kTensorFileVersion = 1;

void write_tensors(std::ostream& out, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_tensors(std::istream& in);

void save_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_tensors(const std::filesystem::path& path);

/// Copies values from `source` into same-named, same-shaped tensors of
/// `target`. Every target entry must be present.
void assign_tensors(const ParameterSet& target, const std::vector<NamedTensor>& source);

}  // namespace tsd
