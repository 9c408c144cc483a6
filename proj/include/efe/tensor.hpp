#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace efe {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;
struct Parameter;

/// Raised when operand shapes do not conform for an op. The message names
/// the op and every offending shape.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Dense row-major f64 array. Values are immutable once constructed; an
/// optional (tape, node) pair records where the value sits on a gradient
/// tape.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const { return data_ ? data_->size() : 0; }
    bool empty() const { return !data_; }

    std::span<const double> data() const;
    double operator[](std::size_t i) const { return (*data_)[i]; }
    double item() const;

    Tape* tape() const { return tape_; }
    std::size_t node() const { return node_; }
    bool tracked() const { return tape_ != nullptr; }

    /// Same values, detached from any tape.
    Tensor detach() const;

private:
    friend class Tape;

    Shape shape_;
    std::shared_ptr<const std::vector<double>> data_;
    Tape* tape_ = nullptr;
    std::size_t node_ = 0;
};

/// Append-only record of differentiable operations (define-by-run).
///
/// Every op whose operands are tracked appends one node whose parents all
/// precede it, so reverse iteration is a valid topological order. A tape is
/// single-writer; independent tapes may be used from different threads.
class Tape {
public:
    /// Called once during backward with the node's accumulated output
    /// gradient. It must add into the parents' gradients via grad_of().
    using BackwardFn = std::function<void(std::span<const double> grad_out, Tape& tape)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Trainable leaf: backward() adds the gradient into param.grad.
    Tensor leaf(Parameter& param);

    /// Leaf holding a value whose gradient is kept on the tape (read with
    /// gradient()). Used by gradient checks on free inputs.
    Tensor variable(Shape shape, std::vector<double> data);

    /// Records the result of an op. Parents that are untracked are ignored.
    Tensor record(Shape shape, std::vector<double> data, std::span<const Tensor* const> parents,
                  BackwardFn backward);

    /// Gradient buffer of a tracked tensor, allocated on first use. Empty
    /// span for untracked tensors or tensors on another tape.
    std::span<double> grad_of(const Tensor& t);

    /// Runs reverse-mode accumulation from a scalar loss. Parameter leaves
    /// receive their gradients; the tape keeps gradients of variables until
    /// reset().
    void backward(const Tensor& loss);

    /// Gradient of a variable after backward().
    std::vector<double> gradient(const Tensor& t) const;

    std::size_t size() const { return nodes_.size(); }
    void reset();

private:
    struct Node {
        std::size_t numel = 0;
        std::vector<std::size_t> parents;
        BackwardFn backward;
        Parameter* param = nullptr;
        std::vector<double> grad;
    };

    std::vector<Node> nodes_;
};

/// Collects the branch taken by every non-smooth op (leaky-relu, abs,
/// clamp) while alive. Gradient checks compare signatures of perturbed
/// evaluations to detect finite-difference stencils that straddle a kink.
class KinkRecorder {
public:
    KinkRecorder();
    ~KinkRecorder();
    KinkRecorder(const KinkRecorder&) = delete;
    KinkRecorder& operator=(const KinkRecorder&) = delete;

    const std::vector<std::uint8_t>& signature() const { return bits_; }

    static void note(std::uint8_t branch);
    static bool active();

private:
    std::vector<std::uint8_t> bits_;
    KinkRecorder* previous_;
};

// ---------------------------------------------------------------------------
// Ops. Binary elementwise ops broadcast numpy-style (trailing dimensions
// aligned, size-1 or missing dimensions repeat).

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

Tensor square(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor sin(const Tensor& a);
Tensor cos(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope = 0.01);
Tensor clamp(const Tensor& a, double lo, double hi);

/// arccos with its input clamped to [-1+1e-7, 1-1e-7].
Tensor acos(const Tensor& a);

/// (m x k) * (k x n).
Tensor matmul(const Tensor& a, const Tensor& b);

/// input N x C x H x W, weight O x C x K x K, bias O (may be empty).
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);

/// Nearest-neighbour resize of the last two dims of N x C x H x W.
Tensor upsample_nearest(const Tensor& input, std::size_t out_h, std::size_t out_w);

/// Concatenation along dim 1 of rank-4 tensors.
Tensor concat_channels(std::span<const Tensor> parts);

/// Softmax over the last two dims, independently for every leading index.
Tensor spatial_softmax(const Tensor& logits, double temperature = 1.0);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Sum / mean over the trailing `count` dims.
Tensor sum_last(const Tensor& a, std::size_t count);
Tensor mean_last(const Tensor& a, std::size_t count);

/// Dot product along the last dim: (..., k) x (..., k) -> (...).
Tensor dot_last(const Tensor& a, const Tensor& b);
/// Sum of |x| over all elements.
Tensor l1_norm(const Tensor& a);
/// Sum of x^2 over all elements.
Tensor squared_l2(const Tensor& a);

Tensor reshape(const Tensor& a, Shape shape);
/// Picks component `index` of the last dim: (..., k) -> (...).
Tensor select_last(const Tensor& a, std::size_t index);
/// Stacks equally shaped tensors into a new trailing dim.
Tensor stack_last(std::span<const Tensor> parts);
/// Rows [begin, end) of the leading dim.
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);

}  // namespace efe
