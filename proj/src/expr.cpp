#include "billiards/expr.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>

namespace billiards {
namespace {

constexpr int kMaxDim = Vec::kMaxDim;
constexpr int kMaxHess = kMaxDim * (kMaxDim + 1) / 2;

// Forward-mode scalar carrying value + gradient.
struct Jet1 {
    int n = 0;
    double v = 0;
    double g[kMaxDim];
};

// Forward-mode scalar carrying value + gradient + packed lower-triangular
// Hessian, idx(i,j) = i*(i+1)/2 + j for j <= i.
struct JetH {
    int n = 0;
    double v = 0;
    double g[kMaxDim];
    double h[kMaxHess];
};

inline int packed_size(int n) { return n * (n + 1) / 2; }

// --- scalar kernels -------------------------------------------------------

inline double make_const(double c, int, const double&) { return c; }
inline Jet1 make_const(double c, int n, const Jet1&) {
    Jet1 r;
    r.n = n;
    r.v = c;
    for (int i = 0; i < n; ++i) r.g[i] = 0;
    return r;
}
inline JetH make_const(double c, int n, const JetH&) {
    JetH r;
    r.n = n;
    r.v = c;
    for (int i = 0; i < n; ++i) r.g[i] = 0;
    for (int i = 0; i < packed_size(n); ++i) r.h[i] = 0;
    return r;
}

inline double make_var(double x, int, int, const double&) { return x; }
inline Jet1 make_var(double x, int idx, int n, const Jet1&) {
    Jet1 r = make_const(x, n, Jet1{});
    r.g[idx] = 1;
    return r;
}
inline JetH make_var(double x, int idx, int n, const JetH&) {
    JetH r = make_const(x, n, JetH{});
    r.g[idx] = 1;
    return r;
}

inline double neg(const double& a) { return -a; }
inline Jet1 neg(const Jet1& a) {
    Jet1 r = a;
    r.v = -r.v;
    for (int i = 0; i < a.n; ++i) r.g[i] = -r.g[i];
    return r;
}
inline JetH neg(const JetH& a) {
    JetH r = a;
    r.v = -r.v;
    for (int i = 0; i < a.n; ++i) r.g[i] = -r.g[i];
    for (int i = 0; i < packed_size(a.n); ++i) r.h[i] = -r.h[i];
    return r;
}

inline double add(const double& a, const double& b) { return a + b; }
inline Jet1 add(const Jet1& a, const Jet1& b) {
    Jet1 r;
    r.n = a.n;
    r.v = a.v + b.v;
    for (int i = 0; i < a.n; ++i) r.g[i] = a.g[i] + b.g[i];
    return r;
}
inline JetH add(const JetH& a, const JetH& b) {
    JetH r;
    r.n = a.n;
    r.v = a.v + b.v;
    for (int i = 0; i < a.n; ++i) r.g[i] = a.g[i] + b.g[i];
    for (int i = 0; i < packed_size(a.n); ++i) r.h[i] = a.h[i] + b.h[i];
    return r;
}

inline double sub(const double& a, const double& b) { return a - b; }
inline Jet1 sub(const Jet1& a, const Jet1& b) { return add(a, neg(b)); }
inline JetH sub(const JetH& a, const JetH& b) { return add(a, neg(b)); }

inline double mul(const double& a, const double& b) { return a * b; }
inline Jet1 mul(const Jet1& a, const Jet1& b) {
    Jet1 r;
    r.n = a.n;
    r.v = a.v * b.v;
    for (int i = 0; i < a.n; ++i) r.g[i] = a.g[i] * b.v + b.g[i] * a.v;
    return r;
}
inline JetH mul(const JetH& a, const JetH& b) {
    JetH r;
    r.n = a.n;
    r.v = a.v * b.v;
    for (int i = 0; i < a.n; ++i) r.g[i] = a.g[i] * b.v + b.g[i] * a.v;
    int k = 0;
    for (int i = 0; i < a.n; ++i)
        for (int j = 0; j <= i; ++j, ++k)
            r.h[k] = a.h[k] * b.v + b.h[k] * a.v + a.g[i] * b.g[j] + a.g[j] * b.g[i];
    return r;
}

// Chain rule for a smooth unary f applied to jet a.
inline double chain(const double&, double fv, double, double) { return fv; }
inline Jet1 chain(const Jet1& a, double fv, double d1, double) {
    Jet1 r;
    r.n = a.n;
    r.v = fv;
    for (int i = 0; i < a.n; ++i) r.g[i] = d1 * a.g[i];
    return r;
}
inline JetH chain(const JetH& a, double fv, double d1, double d2) {
    JetH r;
    r.n = a.n;
    r.v = fv;
    for (int i = 0; i < a.n; ++i) r.g[i] = d1 * a.g[i];
    int k = 0;
    for (int i = 0; i < a.n; ++i)
        for (int j = 0; j <= i; ++j, ++k) r.h[k] = d1 * a.h[k] + d2 * a.g[i] * a.g[j];
    return r;
}

inline double value_of(const double& a) { return a; }
inline double value_of(const Jet1& a) { return a.v; }
inline double value_of(const JetH& a) { return a.v; }

inline bool all_finite(const double& a) { return std::isfinite(a); }
inline bool all_finite(const Jet1& a) {
    if (!std::isfinite(a.v)) return false;
    for (int i = 0; i < a.n; ++i)
        if (!std::isfinite(a.g[i])) return false;
    return true;
}
inline bool all_finite(const JetH& a) {
    if (!std::isfinite(a.v)) return false;
    for (int i = 0; i < a.n; ++i)
        if (!std::isfinite(a.g[i])) return false;
    for (int i = 0; i < packed_size(a.n); ++i)
        if (!std::isfinite(a.h[i])) return false;
    return true;
}

template <typename S>
S recip(const S& b) {
    double bv = value_of(b);
    return chain(b, 1.0 / bv, -1.0 / (bv * bv), 2.0 / (bv * bv * bv));
}
template <typename S>
S sqrt_jet(const S& a) {
    double s = std::sqrt(value_of(a));
    return chain(a, s, 0.5 / s, -0.25 / (s * s * s));
}
template <typename S>
S pow_int(const S& base, int k, int n) {
    S acc = make_const(1.0, n, S{});
    S b = base;
    int e = k;
    while (e > 0) {
        if (e & 1) acc = mul(acc, b);
        e >>= 1;
        if (e) b = mul(b, b);
    }
    return acc;
}

// --- tokenizer ------------------------------------------------------------

enum class Tok { kNumber, kIdent, kPlus, kMinus, kStar, kSlash, kCaret, kLParen, kRParen, kComma, kEnd };

struct Token {
    Tok kind;
    int begin, end;
    double number = 0;
    std::string ident;
};

std::vector<Token> tokenize(const std::string& s) {
    std::vector<Token> out;
    int i = 0, n = static_cast<int>(s.size());
    while (i < n) {
        char c = s[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
            continue;
        }
        int begin = i;
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
            char* endp = nullptr;
            double v = std::strtod(s.c_str() + i, &endp);
            int len = static_cast<int>(endp - (s.c_str() + i));
            if (len <= 0) throw ParseError("malformed number", begin);
            i += len;
            out.push_back({Tok::kNumber, begin, i, v, {}});
        } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            int j = i;
            while (j < n && (std::isalnum(static_cast<unsigned char>(s[j])) || s[j] == '_')) ++j;
            out.push_back({Tok::kIdent, begin, j, 0, s.substr(i, j - i)});
            i = j;
        } else {
            Tok k;
            switch (c) {
                case '+': k = Tok::kPlus; break;
                case '-': k = Tok::kMinus; break;
                case '*': k = Tok::kStar; break;
                case '/': k = Tok::kSlash; break;
                case '^': k = Tok::kCaret; break;
                case '(': k = Tok::kLParen; break;
                case ')': k = Tok::kRParen; break;
                case ',': k = Tok::kComma; break;
                default:
                    throw ParseError(std::string("unexpected character '") + c + "'", begin);
            }
            out.push_back({k, begin, begin + 1, 0, {}});
            ++i;
        }
    }
    out.push_back({Tok::kEnd, n, n, 0, {}});
    return out;
}

// Maps an identifier to a zero-based variable index, or -1 if not a variable.
int variable_index(const std::string& name) {
    if (name.size() == 1) {
        switch (name[0]) {
            case 'x': return 0;
            case 'y': return 1;
            case 'z': return 2;
            case 'w': return 3;
        }
        return -1;
    }
    if (name[0] == 'x') {
        std::string digits = name.substr(name[1] == '_' ? 2 : 1);
        if (!digits.empty() && digits.find_first_not_of("0123456789") == std::string::npos) {
            int idx = std::stoi(digits);
            if (idx >= 1) return idx - 1;
        }
    }
    return -1;
}

}  // namespace

// --- parser ---------------------------------------------------------------

namespace {

// Precedence levels used for canonical printing.
enum { kPrecAdd = 1, kPrecMul = 2, kPrecUnary = 3, kPrecPow = 4, kPrecAtom = 5 };

struct Parser {
    const std::string& src;
    std::vector<Token> toks;
    size_t pos = 0;
    int dim;
    std::vector<detail::Instr>* tape;
    std::vector<std::string> text;
    std::vector<int> prec;

    const Token& peek() const { return toks[pos]; }
    Token eat() { return toks[pos++]; }
    void expect(Tok k, const char* what) {
        if (peek().kind != k) throw ParseError(std::string("expected ") + what, peek().begin);
        ++pos;
    }

    int emit(detail::Instr ins, std::string t, int p) {
        tape->push_back(ins);
        text.push_back(std::move(t));
        prec.push_back(p);
        return static_cast<int>(tape->size()) - 1;
    }
    std::string wrap(int reg, int need) const {
        return prec[reg] < need ? "(" + text[reg] + ")" : text[reg];
    }

    int parse_expr() {
        int lhs = parse_term();
        while (peek().kind == Tok::kPlus || peek().kind == Tok::kMinus) {
            Token t = eat();
            int rhs = parse_term();
            bool plus = t.kind == Tok::kPlus;
            std::string s = wrap(lhs, kPrecAdd) + (plus ? " + " : " - ") + wrap(rhs, kPrecAdd + 1);
            lhs = emit({plus ? detail::Op::kAdd : detail::Op::kSub, lhs, rhs, -1, 0,
                        tape->at(lhs).src_begin, tape->at(rhs).src_end},
                       std::move(s), kPrecAdd);
        }
        return lhs;
    }

    int parse_term() {
        int lhs = parse_unary();
        while (peek().kind == Tok::kStar || peek().kind == Tok::kSlash) {
            Token t = eat();
            int rhs = parse_unary();
            bool star = t.kind == Tok::kStar;
            std::string s = wrap(lhs, kPrecMul) + (star ? "*" : "/") + wrap(rhs, kPrecMul + 1);
            lhs = emit({star ? detail::Op::kMul : detail::Op::kDiv, lhs, rhs, -1, 0,
                        tape->at(lhs).src_begin, tape->at(rhs).src_end},
                       std::move(s), kPrecMul);
        }
        return lhs;
    }

    int parse_unary() {
        if (peek().kind == Tok::kMinus) {
            Token t = eat();
            int a = parse_unary();
            return emit({detail::Op::kNeg, a, -1, -1, 0, t.begin, tape->at(a).src_end},
                        "-" + wrap(a, kPrecUnary), kPrecUnary);
        }
        if (peek().kind == Tok::kPlus) {
            eat();
            return parse_unary();
        }
        return parse_power();
    }

    int parse_power() {
        int base = parse_atom();
        if (peek().kind != Tok::kCaret) return base;
        eat();
        const Token& e = peek();
        if (e.kind != Tok::kNumber || e.number < 0 || e.number != std::floor(e.number) ||
            e.number > 64)
            throw ParseError("exponent must be a nonnegative integer literal", e.begin);
        eat();
        int k = static_cast<int>(e.number);
        return emit({detail::Op::kPowInt, base, -1, -1, static_cast<double>(k),
                     tape->at(base).src_begin, e.end},
                    wrap(base, kPrecAtom) + "^" + std::to_string(k), kPrecPow);
    }

    int parse_atom() {
        const Token t = peek();
        if (t.kind == Tok::kNumber) {
            eat();
            char buf[40];
            std::snprintf(buf, sizeof(buf), "%.17g", t.number);
            return emit({detail::Op::kConst, -1, -1, -1, t.number, t.begin, t.end}, buf,
                        kPrecAtom);
        }
        if (t.kind == Tok::kLParen) {
            eat();
            int inner = parse_expr();
            expect(Tok::kRParen, "')'");
            return inner;
        }
        if (t.kind == Tok::kIdent) {
            eat();
            if (peek().kind == Tok::kLParen) return parse_call(t);
            int idx = variable_index(t.ident);
            if (idx < 0)
                throw ParseError("unknown identifier '" + t.ident + "'", t.begin);
            if (idx >= dim)
                throw ParseError("variable '" + t.ident + "' exceeds dimension " +
                                     std::to_string(dim),
                                 t.begin);
            return emit({detail::Op::kVar, -1, -1, -1, static_cast<double>(idx), t.begin,
                         t.end},
                        t.ident, kPrecAtom);
        }
        throw ParseError("expected a value", t.begin);
    }

    int parse_call(const Token& name) {
        expect(Tok::kLParen, "'('");
        std::vector<int> args;
        if (peek().kind != Tok::kRParen) {
            args.push_back(parse_expr());
            while (peek().kind == Tok::kComma) {
                eat();
                args.push_back(parse_expr());
            }
        }
        const Token close = peek();
        expect(Tok::kRParen, "')'");

        struct Fn {
            const char* name;
            detail::Op op;
            int arity;
        };
        static const Fn fns[] = {{"sin", detail::Op::kSin, 1},
                                 {"cos", detail::Op::kCos, 1},
                                 {"exp", detail::Op::kExp, 1},
                                 {"sqrt", detail::Op::kSqrt, 1},
                                 {"sabs", detail::Op::kSabs, 2},
                                 {"smin", detail::Op::kSmin, 3}};
        for (const Fn& fn : fns) {
            if (name.ident != fn.name) continue;
            if (static_cast<int>(args.size()) != fn.arity)
                throw ParseError(std::string(fn.name) + " expects " + std::to_string(fn.arity) +
                                     " argument(s)",
                                 name.begin);
            std::string s = std::string(fn.name) + "(";
            for (size_t i = 0; i < args.size(); ++i)
                s += (i ? ", " : "") + text[args[i]];
            s += ")";
            return emit({fn.op, args[0], args.size() > 1 ? args[1] : -1,
                         args.size() > 2 ? args[2] : -1, 0, name.begin, close.end},
                        std::move(s), kPrecAtom);
        }
        throw ParseError("unknown function '" + name.ident + "'", name.begin);
    }
};

}  // namespace

Expression parse_expression(const std::string& source, int dimension) {
    if (source.empty()) throw ParseError("empty expression", 0);
    if (dimension < 2) throw ParseError("dimension must be >= 2", 0);
    if (dimension > Vec::kMaxDim)
        throw ParseError("dimension must be <= " + std::to_string(Vec::kMaxDim), 0);
    Expression e;
    e.dim_ = dimension;
    e.source_ = source;
    Parser p{source, tokenize(source), 0, dimension, &e.tape_, {}, {}};
    int root = p.parse_expr();
    if (p.peek().kind != Tok::kEnd)
        throw ParseError("unexpected trailing input", p.peek().begin);
    e.text_ = p.text[root];
    return e;
}

std::string Expression::subexpression(const detail::Instr& ins) const {
    return source_.substr(ins.src_begin, ins.src_end - ins.src_begin);
}

template <typename Scalar>
Scalar Expression::run(const Vec& point) const {
    if (point.size() != dim_)
        throw Error("point dimension " + std::to_string(point.size()) +
                    " does not match expression dimension " + std::to_string(dim_));
    if (!point.finite()) throw Error("evaluation point is not finite");
    thread_local std::vector<Scalar> regs;
    regs.resize(tape_.size());
    const int n = dim_;
    for (size_t i = 0; i < tape_.size(); ++i) {
        const detail::Instr& ins = tape_[i];
        Scalar& out = regs[i];
        switch (ins.op) {
            case detail::Op::kConst: out = make_const(ins.imm, n, Scalar{}); break;
            case detail::Op::kVar:
                out = make_var(point[static_cast<int>(ins.imm)], static_cast<int>(ins.imm), n,
                               Scalar{});
                break;
            case detail::Op::kNeg: out = neg(regs[ins.a]); break;
            case detail::Op::kAdd: out = add(regs[ins.a], regs[ins.b]); break;
            case detail::Op::kSub: out = sub(regs[ins.a], regs[ins.b]); break;
            case detail::Op::kMul: out = mul(regs[ins.a], regs[ins.b]); break;
            case detail::Op::kDiv: {
                if (value_of(regs[ins.b]) == 0)
                    throw EvalError("division by zero", subexpression(ins));
                out = mul(regs[ins.a], recip(regs[ins.b]));
                break;
            }
            case detail::Op::kPowInt: out = pow_int(regs[ins.a], static_cast<int>(ins.imm), n); break;
            case detail::Op::kSin: {
                double v = value_of(regs[ins.a]);
                out = chain(regs[ins.a], std::sin(v), std::cos(v), -std::sin(v));
                break;
            }
            case detail::Op::kCos: {
                double v = value_of(regs[ins.a]);
                out = chain(regs[ins.a], std::cos(v), -std::sin(v), -std::cos(v));
                break;
            }
            case detail::Op::kExp: {
                double v = std::exp(value_of(regs[ins.a]));
                out = chain(regs[ins.a], v, v, v);
                break;
            }
            case detail::Op::kSqrt: {
                if (value_of(regs[ins.a]) < 0)
                    throw EvalError("sqrt of a negative value", subexpression(ins));
                out = sqrt_jet(regs[ins.a]);
                break;
            }
            case detail::Op::kSabs: {
                // sqrt(u^2 + eps^2); eps = 0 with u = 0 hits the sqrt cusp
                Scalar s = add(mul(regs[ins.a], regs[ins.a]), mul(regs[ins.b], regs[ins.b]));
                out = sqrt_jet(s);
                break;
            }
            case detail::Op::kSmin: {
                Scalar d = sub(regs[ins.a], regs[ins.b]);
                Scalar s = add(mul(d, d), mul(regs[ins.c], regs[ins.c]));
                Scalar half = make_const(0.5, n, Scalar{});
                out = mul(half, sub(add(regs[ins.a], regs[ins.b]), sqrt_jet(s)));
                break;
            }
        }
        if (!all_finite(out))
            throw EvalError("non-finite value or derivative", subexpression(ins));
    }
    return regs.back();
}

double Expression::value(const Vec& point) const { return run<double>(point); }

Vec Expression::gradient(const Vec& point) const {
    Jet1 j = run<Jet1>(point);
    Vec g(dim_);
    for (int i = 0; i < dim_; ++i) g[i] = j.g[i];
    return g;
}

Jet2 Expression::eval_jet(const Vec& point) const {
    JetH j = run<JetH>(point);
    Jet2 out;
    out.value = j.v;
    out.gradient = Vec(dim_);
    out.hessian = Mat(dim_, dim_);
    for (int i = 0; i < dim_; ++i) out.gradient[i] = j.g[i];
    int k = 0;
    for (int i = 0; i < dim_; ++i)
        for (int jj = 0; jj <= i; ++jj, ++k) {
            out.hessian(i, jj) = j.h[k];
            out.hessian(jj, i) = j.h[k];
        }
    return out;
}

}  // namespace billiards
