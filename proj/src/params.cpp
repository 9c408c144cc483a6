#include "efe/params.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "efe/binary_io.hpp"

namespace efe {

Parameter& ParameterStore::add(std::string name, Shape shape, std::vector<double> value, bool trainable) {
    if (index_.count(name)) throw std::invalid_argument("parameter '" + name + "' registered twice");
    if (shape_numel(shape) != value.size()) {
        throw ShapeError("parameter '" + name + "': shape " + shape_str(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(value.size()));
    }
    auto p = std::make_unique<Parameter>();
    p->name = name;
    p->shape = std::move(shape);
    p->grad.assign(value.size(), 0.0);
    p->value = std::move(value);
    p->trainable = trainable;
    index_.emplace(std::move(name), params_.size());
    params_.push_back(std::move(p));
    return *params_.back();
}

Parameter& ParameterStore::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
    return *params_[it->second];
}

const Parameter& ParameterStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
    return *params_[it->second];
}

bool ParameterStore::contains(const std::string& name) const { return index_.count(name) != 0; }

std::size_t ParameterStore::trainable_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) {
        if (p->trainable) n += p->value.size();
    }
    return n;
}

void ParameterStore::zero_grad() {
    for (auto& p : params_) std::fill(p->grad.begin(), p->grad.end(), 0.0);
}

Tensor Binding::operator()(Parameter& param) {
    if (auto it = cache_.find(&param); it != cache_.end()) return it->second;
    Tensor t = (tape_ && param.trainable) ? tape_->leaf(param) : Tensor(param.shape, param.value);
    cache_.emplace(&param, t);
    return t;
}

namespace {
constexpr std::array<char, 8> kMagic{'E', 'F', 'E', 'C', 'K', 'P', 'T', '\0'};
}

void save_checkpoint(const ParameterStore& store, const std::filesystem::path& path) {
    io::Writer w;
    w.bytes(kMagic.data(), kMagic.size());
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(store.size()));
    for (const auto& p : store) {
        w.u32(static_cast<std::uint32_t>(p->name.size()));
        w.bytes(p->name.data(), p->name.size());
        w.u32(p->trainable ? 1u : 0u);
        w.u32(static_cast<std::uint32_t>(p->shape.size()));
        for (auto d : p->shape) w.u64(d);
        for (double v : p->value) w.f64(v);
    }
    w.save(path);
}

void load_checkpoint(ParameterStore& store, const std::filesystem::path& path) {
    io::Reader r(path);
    std::array<char, 8> magic{};
    r.bytes(magic.data(), magic.size());
    if (magic != kMagic) throw std::runtime_error(path.string() + ": not a checkpoint file");
    const auto version = r.u32();
    if (version != kCheckpointVersion) {
        throw std::runtime_error(path.string() + ": unsupported checkpoint version " +
                                 std::to_string(version));
    }
    const auto count = r.u32();
    if (count != store.size()) {
        throw std::runtime_error(path.string() + ": checkpoint has " + std::to_string(count) +
                                 " entries, model expects " + std::to_string(store.size()));
    }
    for (std::size_t i = 0; i < count; ++i) {
        std::string name(r.u32(), '\0');
        r.bytes(name.data(), name.size());
        r.u32();  // flags
        Shape shape(r.u32());
        for (auto& d : shape) d = r.u64();
        auto& p = store[i];
        if (p.name != name || p.shape != shape) {
            throw std::runtime_error(path.string() + ": entry " + std::to_string(i) + " is '" + name +
                                     "' " + shape_str(shape) + ", model expects '" + p.name + "' " +
                                     shape_str(p.shape));
        }
        for (auto& v : p.value) v = r.f64();
    }
}

}  // namespace efe
