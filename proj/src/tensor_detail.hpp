#pragma once

#include <initializer_list>
#include <string>
#include <vector>

#include "efe/tensor.hpp"

namespace efe::detail {

/// Tape shared by all tracked operands, or nullptr when none are tracked.
Tape* common_tape(const char* op, std::initializer_list<const Tensor*> operands);

/// Wraps an op result: a plain tensor when no operand is tracked, a tape
/// node otherwise.
Tensor emit(const char* op, Shape shape, std::vector<double> data,
            std::initializer_list<const Tensor*> parents, Tape::BackwardFn backward);

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b);

}  // namespace efe::detail
