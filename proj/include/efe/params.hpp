#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "efe/tensor.hpp"

namespace efe {

struct Parameter {
    std::string name;
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool trainable = true;
};

/// Ordered, named collection of parameters. Insertion order is the
/// checkpoint order. Addresses are stable for the store's lifetime.
class ParameterStore {
public:
    Parameter& add(std::string name, Shape shape, std::vector<double> value, bool trainable = true);

    Parameter& get(const std::string& name);
    const Parameter& get(const std::string& name) const;
    bool contains(const std::string& name) const;

    std::size_t size() const { return params_.size(); }
    Parameter& operator[](std::size_t i) { return *params_[i]; }
    const Parameter& operator[](std::size_t i) const { return *params_[i]; }

    /// Scalar count over trainable parameters.
    std::size_t trainable_count() const;
    void zero_grad();

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

private:
    std::vector<std::unique_ptr<Parameter>> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Resolves parameters to tensors for one forward pass: tape leaves when a
/// tape is given, detached constants otherwise. Each parameter is bound at
/// most once per pass.
class Binding {
public:
    explicit Binding(Tape* tape) : tape_(tape) {}

    Tensor operator()(Parameter& param);
    Tape* tape() const { return tape_; }

private:
    Tape* tape_;
    std::unordered_map<const Parameter*, Tensor> cache_;
};

// Checkpoint file layout (all integers little-endian):
//   magic    8 bytes  "EFECKPT\0"
//   version  u32      (= 1)
//   count    u32      number of entries
//   per entry:
//     name_len u32, name bytes (UTF-8, no terminator)
//     flags    u32      bit 0 = trainable
//     rank     u32, dims u64 x rank
//     data     f64 x product(dims), IEEE-754 little-endian
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const ParameterStore& store, const std::filesystem::path& path);

/// Loads values into an existing store. Names, order and shapes must match
/// exactly; any mismatch throws naming the first offending entry.
void load_checkpoint(ParameterStore& store, const std::filesystem::path& path);

}  // namespace efe
