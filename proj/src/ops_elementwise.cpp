#include <algorithm>
#include <cmath>

#include "efe/tensor.hpp"
#include "tensor_detail.hpp"

namespace efe {

namespace detail {

Tape* common_tape(const char* op, std::initializer_list<const Tensor*> operands) {
    Tape* tape = nullptr;
    for (const Tensor* t : operands) {
        if (!t->tracked()) continue;
        if (tape && tape != t->tape()) {
            throw std::logic_error(std::string(op) + ": operands are recorded on different tapes");
        }
        tape = t->tape();
    }
    return tape;
}

Tensor emit(const char* op, Shape shape, std::vector<double> data,
            std::initializer_list<const Tensor*> parents, Tape::BackwardFn backward) {
    Tape* tape = common_tape(op, parents);
    if (!tape) return Tensor(std::move(shape), std::move(data));
    std::vector<const Tensor*> ps(parents);
    return tape->record(std::move(shape), std::move(data), ps, std::move(backward));
}

void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

}  // namespace detail

namespace {

using detail::emit;

// Flat index maps from the broadcast output into each operand.
struct Broadcast {
    Shape out;
    std::vector<std::size_t> ia;
    std::vector<std::size_t> ib;
    bool same = false;
};

Broadcast broadcast(const char* op, const Shape& a, const Shape& b) {
    Broadcast bc;
    if (a == b) {
        bc.out = a;
        bc.same = true;
        return bc;
    }
    const std::size_t rank = std::max(a.size(), b.size());
    Shape pa(rank, 1), pb(rank, 1);
    std::copy(a.begin(), a.end(), pa.begin() + static_cast<long>(rank - a.size()));
    std::copy(b.begin(), b.end(), pb.begin() + static_cast<long>(rank - b.size()));
    bc.out.resize(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        if (pa[i] == pb[i] || pb[i] == 1) {
            bc.out[i] = pa[i];
        } else if (pa[i] == 1) {
            bc.out[i] = pb[i];
        } else {
            detail::shape_mismatch(op, a, b);
        }
    }
    const std::size_t n = shape_numel(bc.out);
    std::vector<std::size_t> sa(rank), sb(rank);
    std::size_t ka = 1, kb = 1;
    for (std::size_t i = rank; i-- > 0;) {
        sa[i] = pa[i] == 1 ? 0 : ka;
        sb[i] = pb[i] == 1 ? 0 : kb;
        ka *= pa[i];
        kb *= pb[i];
    }
    bc.ia.resize(n);
    bc.ib.resize(n);
    std::vector<std::size_t> idx(rank, 0);
    std::size_t oa = 0, ob = 0;
    for (std::size_t f = 0; f < n; ++f) {
        bc.ia[f] = oa;
        bc.ib[f] = ob;
        for (std::size_t d = rank; d-- > 0;) {
            if (++idx[d] < bc.out[d]) {
                oa += sa[d];
                ob += sb[d];
                break;
            }
            oa -= sa[d] * (bc.out[d] - 1);
            ob -= sb[d] * (bc.out[d] - 1);
            idx[d] = 0;
        }
    }
    return bc;
}

// f(x, y) with partials dfx(x, y), dfy(x, y).
template <class F, class DX, class DY>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F f, DX dfx, DY dfy) {
    auto bc = std::make_shared<Broadcast>(broadcast(op, a.shape(), b.shape()));
    const auto n = shape_numel(bc->out);
    std::vector<double> out(n);
    const auto da = a.data();
    const auto db = b.data();
    if (bc->same) {
        for (std::size_t i = 0; i < n; ++i) out[i] = f(da[i], db[i]);
    } else {
        for (std::size_t i = 0; i < n; ++i) out[i] = f(da[bc->ia[i]], db[bc->ib[i]]);
    }
    auto backward = [a, b, bc, dfx, dfy](std::span<const double> g, Tape& tape) {
        const auto ga = tape.grad_of(a);
        const auto gb = tape.grad_of(b);
        const auto xa = a.data();
        const auto xb = b.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const std::size_t ia = bc->same ? i : bc->ia[i];
            const std::size_t ib = bc->same ? i : bc->ib[i];
            if (!ga.empty()) ga[ia] += g[i] * dfx(xa[ia], xb[ib]);
            if (!gb.empty()) gb[ib] += g[i] * dfy(xa[ia], xb[ib]);
        }
    };
    return emit(op, bc->out, std::move(out), {&a, &b}, std::move(backward));
}

// f(x) with derivative df(x, y). The output copy y is kept for the
// backward pass only when the derivative needs it.
template <bool kNeedsOutput, class F, class DF>
Tensor unary(const char* op, const Tensor& a, F f, DF df) {
    const auto x = a.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
    std::shared_ptr<std::vector<double>> y;
    if (kNeedsOutput && a.tracked()) y = std::make_shared<std::vector<double>>(out);
    auto backward = [a, y, df](std::span<const double> g, Tape& tape) {
        const auto ga = tape.grad_of(a);
        if (ga.empty()) return;
        const auto xs = a.data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(xs[i], y ? (*y)[i] : 0.0);
    };
    return emit(op, a.shape(), std::move(out), {&a}, std::move(backward));
}

template <class F, class DF>
Tensor unary(const char* op, const Tensor& a, F f, DF df) {
    return unary<false>(op, a, f, df);
}

template <class Branch>
void note_kinks(const Tensor& a, Branch branch) {
    if (!KinkRecorder::active()) return;
    for (double x : a.data()) KinkRecorder::note(branch(x));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary(
        "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary(
        "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary(
        "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary(
        "div", a, b, [](double x, double y) { return x / y; },
        [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor scale(const Tensor& a, double factor) {
    return unary(
        "scale", a, [factor](double x) { return factor * x; },
        [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
    return unary(
        "add_scalar", a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor square(const Tensor& a) {
    return unary(
        "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor sqrt(const Tensor& a) {
    for (double x : a.data()) {
        if (!(x >= 0.0)) throw std::domain_error("sqrt: negative or non-finite input");
    }
    return unary<true>(
        "sqrt", a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Tensor abs(const Tensor& a) {
    note_kinks(a, [](double x) -> std::uint8_t { return x >= 0.0; });
    return unary(
        "abs", a, [](double x) { return std::abs(x); },
        [](double x, double) { return x >= 0.0 ? 1.0 : -1.0; });
}

Tensor sin(const Tensor& a) {
    return unary(
        "sin", a, [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); });
}

Tensor cos(const Tensor& a) {
    return unary(
        "cos", a, [](double x) { return std::cos(x); },
        [](double x, double) { return -std::sin(x); });
}

Tensor tanh(const Tensor& a) {
    return unary<true>(
        "tanh", a, [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor leaky_relu(const Tensor& a, double slope) {
    note_kinks(a, [](double x) -> std::uint8_t { return x > 0.0; });
    return unary(
        "leaky_relu", a, [slope](double x) { return x > 0.0 ? x : slope * x; },
        [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    if (!(lo <= hi)) throw std::invalid_argument("clamp: lo > hi");
    note_kinks(a, [lo, hi](double x) -> std::uint8_t { return x < lo ? 0 : (x > hi ? 2 : 1); });
    return unary(
        "clamp", a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
        [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Tensor acos(const Tensor& a) {
    constexpr double kEdge = 1.0 - 1e-7;
    const Tensor c = clamp(a, -kEdge, kEdge);
    return unary(
        "acos", c, [](double x) { return std::acos(x); },
        [](double x, double) { return -1.0 / std::sqrt(1.0 - x * x); });
}

// ---------------------------------------------------------------------------
// Reductions and shape ops.

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double x : a.data()) s += x;
    auto backward = [a](std::span<const double> g, Tape& tape) {
        const auto ga = tape.grad_of(a);
        for (auto& v : ga) v += g[0];
    };
    return emit("sum", {}, {s}, {&a}, std::move(backward));
}

Tensor mean(const Tensor& a) {
    if (a.numel() == 0) throw ShapeError("mean: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor sum_last(const Tensor& a, std::size_t count) {
    if (count > a.rank()) {
        throw ShapeError("sum_last: cannot reduce " + std::to_string(count) + " dims of shape " +
                         shape_str(a.shape()));
    }
    Shape out_shape(a.shape().begin(), a.shape().end() - static_cast<long>(count));
    std::size_t inner = 1;
    for (std::size_t i = a.rank() - count; i < a.rank(); ++i) inner *= a.shape()[i];
    const std::size_t outer = shape_numel(out_shape);
    const auto x = a.data();
    std::vector<double> out(outer, 0.0);
    for (std::size_t o = 0; o < outer; ++o) {
        double s = 0.0;
        for (std::size_t k = 0; k < inner; ++k) s += x[o * inner + k];
        out[o] = s;
    }
    auto backward = [a, inner](std::span<const double> g, Tape& tape) {
        const auto ga = tape.grad_of(a);
        if (ga.empty()) return;
        for (std::size_t o = 0; o < g.size(); ++o) {
            for (std::size_t k = 0; k < inner; ++k) ga[o * inner + k] += g[o];
        }
    };
    return emit("sum_last", std::move(out_shape), std::move(out), {&a}, std::move(backward));
}

Tensor mean_last(const Tensor& a, std::size_t count) {
    std::size_t inner = 1;
    for (std::size_t i = a.rank() - std::min(count, a.rank()); i < a.rank(); ++i) {
        inner *= a.shape()[i];
    }
    return scale(sum_last(a, count), 1.0 / static_cast<double>(inner));
}

Tensor dot_last(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) detail::shape_mismatch("dot_last", a.shape(), b.shape());
    return sum_last(mul(a, b), 1);
}

Tensor l1_norm(const Tensor& a) { return sum(abs(a)); }

Tensor squared_l2(const Tensor& a) { return sum(square(a)); }

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    }
    std::vector<double> out(a.data().begin(), a.data().end());
    auto backward = [a](std::span<const double> g, Tape& tape) {
        const auto ga = tape.grad_of(a);
        if (ga.empty()) return;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    };
    return emit("reshape", std::move(shape), std::move(out), {&a}, std::move(backward));
}

Tensor select_last(const Tensor& a, std::size_t index) {
    if (a.rank() == 0 || index >= a.shape().back()) {
        throw ShapeError("select_last: index " + std::to_string(index) + " out of range for shape " +
                         shape_str(a.shape()));
    }
    const std::size_t k = a.shape().back();
    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    const std::size_t n = shape_numel(out_shape);
    const auto x = a.data();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i * k + index];
    auto backward = [a, k, index](std::span<const double> g, Tape& tape) {
        const auto ga = tape.grad_of(a);
        if (ga.empty()) return;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i * k + index] += g[i];
    };
    return emit("select_last", std::move(out_shape), std::move(out), {&a}, std::move(backward));
}

Tensor stack_last(std::span<const Tensor> parts) {
    if (parts.empty()) throw ShapeError("stack_last: no inputs");
    const Shape& base = parts[0].shape();
    for (const auto& p : parts) {
        if (p.shape() != base) detail::shape_mismatch("stack_last", base, p.shape());
    }
    const std::size_t k = parts.size();
    const std::size_t n = shape_numel(base);
    Shape out_shape = base;
    out_shape.push_back(k);
    std::vector<double> out(n * k);
    for (std::size_t j = 0; j < k; ++j) {
        const auto x = parts[j].data();
        for (std::size_t i = 0; i < n; ++i) out[i * k + j] = x[i];
    }
    std::vector<Tensor> held(parts.begin(), parts.end());
    auto backward = [held, k, n](std::span<const double> g, Tape& tape) {
        for (std::size_t j = 0; j < k; ++j) {
            const auto gp = tape.grad_of(held[j]);
            if (gp.empty()) continue;
            for (std::size_t i = 0; i < n; ++i) gp[i] += g[i * k + j];
        }
    };
    Tape* tape = nullptr;
    for (const auto& p : parts) {
        if (!p.tracked()) continue;
        if (tape && tape != p.tape()) {
            throw std::logic_error("stack_last: operands are recorded on different tapes");
        }
        tape = p.tape();
    }
    if (!tape) return Tensor(std::move(out_shape), std::move(out));
    std::vector<const Tensor*> ps;
    for (const auto& p : parts) ps.push_back(&p);
    return tape->record(std::move(out_shape), std::move(out), ps, std::move(backward));
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
    if (a.rank() == 0 || begin > end || end > a.shape()[0]) {
        throw ShapeError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for shape " + shape_str(a.shape()));
    }
    const std::size_t row = a.numel() / a.shape()[0];
    Shape out_shape = a.shape();
    out_shape[0] = end - begin;
    const auto x = a.data();
    std::vector<double> out(x.begin() + static_cast<long>(begin * row),
                            x.begin() + static_cast<long>(end * row));
    auto backward = [a, begin, row](std::span<const double> g, Tape& tape) {
        const auto ga = tape.grad_of(a);
        if (ga.empty()) return;
        for (std::size_t i = 0; i < g.size(); ++i) ga[begin * row + i] += g[i];
    };
    return emit("slice_rows", std::move(out_shape), std::move(out), {&a}, std::move(backward));
}

}  // namespace efe
