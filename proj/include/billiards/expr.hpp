#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "billiards/common.hpp"
#include "billiards/linalg.hpp"

namespace billiards {

/// Value, gradient and Hessian of a scalar expression at a point.
struct Jet2 {
    double value = 0;
    Vec gradient;
    Mat hessian;
};

namespace detail {

enum class Op : std::uint8_t {
    kConst,
    kVar,
    kNeg,
    kAdd,
    kSub,
    kMul,
    kDiv,
    kPowInt,
    kSin,
    kCos,
    kExp,
    kSqrt,
    kSabs,  // sabs(u, eps)   = sqrt(u^2 + eps^2), smoothed |u|
    kSmin,  // smin(a, b, eps) = (a + b - sqrt((a-b)^2 + eps^2)) / 2
};

struct Instr {
    Op op;
    int a = -1, b = -1, c = -1;  // operand register ids
    double imm = 0;              // constant value or integer exponent
    int src_begin = 0, src_end = 0;
};

}  // namespace detail

/// A parsed scalar expression F(x_1..x_n), evaluable together with its first
/// and second derivatives via forward-mode differentiation over a flat
/// instruction tape. Immutable after parse; evaluation is pure and reentrant.
class Expression {
  public:
    int dimension() const { return dim_; }

    double value(const Vec& point) const;
    Vec gradient(const Vec& point) const;
    Jet2 eval_jet(const Vec& point) const;

    /// Canonical text form; parse(text()) reproduces the same tree.
    const std::string& text() const { return text_; }

  private:
    friend Expression parse_expression(const std::string& source, int dimension);

    template <typename Scalar>
    Scalar run(const Vec& point) const;
    std::string subexpression(const detail::Instr& ins) const;

    int dim_ = 0;
    std::vector<detail::Instr> tape_;
    std::string source_;
    std::string text_;
};

/// Parses `source` over variables x_1..x_n (aliases x, y, z, w and x1..x8).
/// Throws ParseError on malformed input, unknown identifiers, or variable
/// indices above `dimension`. dimension must be >= 2.
Expression parse_expression(const std::string& source, int dimension);

}  // namespace billiards
