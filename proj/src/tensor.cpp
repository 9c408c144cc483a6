#include "efe/tensor.hpp"

#include <sstream>

#include "efe/params.hpp"

namespace efe {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)) {
    if (shape_numel(shape_) != data.size()) {
        throw ShapeError("tensor: shape " + shape_str(shape_) + " holds " +
                         std::to_string(shape_numel(shape_)) + " values, got " +
                         std::to_string(data.size()));
    }
    data_ = std::make_shared<const std::vector<double>>(std::move(data));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
        throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(shape_));
    }
    return shape_[axis];
}

std::span<const double> Tensor::data() const {
    if (!data_) return {};
    return {data_->data(), data_->size()};
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item: expected one element, shape " + shape_str(shape_));
    return (*data_)[0];
}

Tensor Tensor::detach() const {
    Tensor t = *this;
    t.tape_ = nullptr;
    t.node_ = 0;
    return t;
}

// ---------------------------------------------------------------------------

Tensor Tape::leaf(Parameter& param) {
    Tensor t(param.shape, param.value);
    Node node;
    node.numel = t.numel();
    node.param = &param;
    nodes_.push_back(std::move(node));
    t.tape_ = this;
    t.node_ = nodes_.size() - 1;
    return t;
}

Tensor Tape::variable(Shape shape, std::vector<double> data) {
    Tensor t(std::move(shape), std::move(data));
    Node node;
    node.numel = t.numel();
    nodes_.push_back(std::move(node));
    t.tape_ = this;
    t.node_ = nodes_.size() - 1;
    return t;
}

Tensor Tape::record(Shape shape, std::vector<double> data, std::span<const Tensor* const> parents,
                    BackwardFn backward) {
    Tensor t(std::move(shape), std::move(data));
    Node node;
    node.numel = t.numel();
    for (const Tensor* p : parents) {
        if (p->tape_ == this) node.parents.push_back(p->node_);
    }
    node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    t.tape_ = this;
    t.node_ = nodes_.size() - 1;
    return t;
}

std::span<double> Tape::grad_of(const Tensor& t) {
    if (t.tape_ != this || t.node_ >= nodes_.size()) return {};
    auto& node = nodes_[t.node_];
    if (node.grad.empty()) node.grad.assign(node.numel, 0.0);
    return {node.grad.data(), node.grad.size()};
}

void Tape::backward(const Tensor& loss) {
    if (nodes_.empty()) throw std::logic_error("backward: tape is empty");
    if (loss.tape_ != this) throw std::logic_error("backward: loss is not recorded on this tape");
    if (loss.numel() != 1) {
        throw ShapeError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
    }
    auto& root = nodes_[loss.node_];
    root.grad.assign(1, 1.0);
    for (std::size_t i = loss.node_ + 1; i-- > 0;) {
        auto& node = nodes_[i];
        if (node.grad.empty()) continue;
        if (node.param) {
            auto& g = node.param->grad;
            if (g.size() != node.grad.size()) g.assign(node.grad.size(), 0.0);
            for (std::size_t k = 0; k < g.size(); ++k) g[k] += node.grad[k];
        }
        if (node.backward) {
            node.backward(std::span<const double>(node.grad.data(), node.grad.size()), *this);
            node.backward = nullptr;
            node.grad.clear();
            node.grad.shrink_to_fit();
        }
    }
}

std::vector<double> Tape::gradient(const Tensor& t) const {
    if (t.tape_ != this) throw std::logic_error("gradient: tensor is not on this tape");
    const auto& node = nodes_.at(t.node_);
    if (node.grad.empty()) return std::vector<double>(node.numel, 0.0);
    return node.grad;
}

void Tape::reset() { nodes_.clear(); }

// ---------------------------------------------------------------------------

namespace {
thread_local KinkRecorder* g_recorder = nullptr;
}

KinkRecorder::KinkRecorder() : previous_(g_recorder) { g_recorder = this; }

KinkRecorder::~KinkRecorder() { g_recorder = previous_; }

bool KinkRecorder::active() { return g_recorder != nullptr; }

void KinkRecorder::note(std::uint8_t branch) {
    if (g_recorder) g_recorder->bits_.push_back(branch);
}

}  // namespace efe
