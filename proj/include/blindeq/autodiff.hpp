#pragma once

// Minimal reverse-mode automatic differentiation over real vectors.
//
// A Tape records vector-valued nodes in creation order, so inputs always
// precede outputs and the reverse sweep is a single pass over the node list.
// Each node stores a closure that maps its output gradient onto its inputs.
// Parameters live in a ParamStore and enter the tape as tracked leaves; the
// tape is meant to be rebuilt for every training step.

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"

namespace blindeq::ad {

using Vec = std::vector<double>;
using GradMap = std::map<std::string, Vec>;

class Tape;

/// Handle to a tape node. Cheap to copy; only valid while its tape lives.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape() const { return tape_; }
    std::size_t id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

    const Vec& value() const;
    std::size_t size() const { return value().size(); }
    double scalar() const;
    double operator[](std::size_t i) const { return value()[i]; }

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Real parameter vectors plus their AMSGrad optimizer state.
class ParamStore {
public:
    struct Entry {
        Vec value;
        Vec m;          // first moment
        Vec v;          // second moment
        Vec v_hat_max;  // running max of the bias-corrected second moment
        std::size_t steps = 0;
    };

    void add(const std::string& name, Vec init)
    {
        require(!entries_.count(name), "ParamStore: duplicate parameter '" + name + "'");
        Entry e;
        const auto n = init.size();
        e.value = std::move(init);
        e.m.assign(n, 0.0);
        e.v.assign(n, 0.0);
        e.v_hat_max.assign(n, 0.0);
        entries_.emplace(name, std::move(e));
    }

    bool contains(const std::string& name) const { return entries_.count(name) != 0; }

    Vec& value(const std::string& name) { return at(name).value; }
    const Vec& value(const std::string& name) const { return at(name).value; }

    Entry& at(const std::string& name)
    {
        auto it = entries_.find(name);
        require(it != entries_.end(), "ParamStore: unknown parameter '" + name + "'");
        return it->second;
    }
    const Entry& at(const std::string& name) const
    {
        auto it = entries_.find(name);
        require(it != entries_.end(), "ParamStore: unknown parameter '" + name + "'");
        return it->second;
    }

    std::vector<std::string> names() const
    {
        std::vector<std::string> out;
        out.reserve(entries_.size());
        for (const auto& [k, _] : entries_) out.push_back(k);
        return out;
    }

    std::size_t total_size() const
    {
        std::size_t n = 0;
        for (const auto& [_, e] : entries_) n += e.value.size();
        return n;
    }

private:
    std::map<std::string, Entry> entries_;
};

struct AmsGradConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One AMSGrad update for every parameter named in `grads`.
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
///   v_hat_max <- max(v_hat_max, v / (1-b2^t))
///   p <- p - lr * (m / (1-b1^t)) / (sqrt(v_hat_max) + eps)
inline void amsgrad_step(ParamStore& params, const GradMap& grads, double lr,
                         const AmsGradConfig& cfg = {})
{
    for (const auto& [name, g] : grads) {
        for (double gi : g)
            if (!std::isfinite(gi)) throw NumericError("non-finite gradient for parameter '" + name + "'");
    }
    for (const auto& [name, g] : grads) {
        auto& e = params.at(name);
        require(g.size() == e.value.size(), "amsgrad_step: gradient size mismatch for '" + name + "'");
        ++e.steps;
        const double t = static_cast<double>(e.steps);
        const double c1 = 1.0 - std::pow(cfg.beta1, t);
        const double c2 = 1.0 - std::pow(cfg.beta2, t);
        for (std::size_t i = 0; i < g.size(); ++i) {
            e.m[i] = cfg.beta1 * e.m[i] + (1.0 - cfg.beta1) * g[i];
            e.v[i] = cfg.beta2 * e.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            e.v_hat_max[i] = std::max(e.v_hat_max[i], e.v[i] / c2);
            e.value[i] -= lr * (e.m[i] / c1) / (std::sqrt(e.v_hat_max[i]) + cfg.eps);
        }
    }
}

class Tape {
public:
    /// Receives the gradient of the loss w.r.t. the node output.
    using Backward = std::function<void(Tape&, const Vec&)>;

    Tape() { nodes_.reserve(256); }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Vec v)
    {
        nodes_.push_back(Node{std::move(v), {}, false});
        return Var(this, nodes_.size() - 1);
    }
    Var constant(double v) { return constant(Vec{v}); }

    /// Tracked leaf bound to `store[name]`.
    Var param(const ParamStore& store, const std::string& name)
    {
        nodes_.push_back(Node{store.value(name), {}, true});
        const auto id = nodes_.size() - 1;
        leaves_.emplace_back(id, name);
        return Var(this, id);
    }

    /// Records a derived node. The closure runs only if some input is tracked.
    Var record(Vec value, std::initializer_list<Var> inputs, Backward bw)
    {
        bool tracked = false;
        for (const auto& in : inputs) {
            require(in.tape() == this, "Tape: input belongs to a different tape");
            tracked = tracked || nodes_[in.id()].tracked;
        }
        nodes_.push_back(Node{std::move(value), tracked ? std::move(bw) : Backward{}, tracked});
        return Var(this, nodes_.size() - 1);
    }

    /// Value copy that blocks gradient flow.
    Var detach(Var v) { return constant(v.value()); }

    const Vec& value(std::size_t id) const { return nodes_[id].value; }
    bool tracked(std::size_t id) const { return nodes_[id].tracked; }
    std::size_t size() const { return nodes_.size(); }

    void accumulate(std::size_t id, const Vec& g)
    {
        if (!nodes_[id].tracked) return;
        auto& dst = grad_slot(id);
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }
    void accumulate(std::size_t id, std::size_t i, double g)
    {
        if (!nodes_[id].tracked) return;
        grad_slot(id)[i] += g;
    }

    /// Reverse sweep from a scalar loss. The map covers every parameter of
    /// `store`; parameters absent from the forward pass get zero gradients.
    GradMap backward(Var loss, const ParamStore& store)
    {
        require(loss.tape() == this, "backward: loss belongs to a different tape");
        require(loss.size() == 1, "backward: loss must be a scalar node");
        grads_.assign(nodes_.size(), Vec{});
        grads_[loss.id()] = Vec{1.0};
        for (std::size_t k = loss.id() + 1; k-- > 0;) {
            auto& node = nodes_[k];
            if (!node.backward || grads_[k].empty()) continue;
            const Vec g = grads_[k];
            node.backward(*this, g);
        }
        GradMap out;
        for (const auto& name : store.names()) out[name].assign(store.value(name).size(), 0.0);
        for (const auto& [id, name] : leaves_) {
            if (grads_[id].empty()) continue;
            auto& dst = out[name];
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += grads_[id][i];
        }
        grads_.clear();
        return out;
    }

private:
    struct Node {
        Vec value;
        Backward backward;
        bool tracked = false;
    };

    Vec& grad_slot(std::size_t id)
    {
        auto& g = grads_[id];
        if (g.empty()) g.assign(nodes_[id].value.size(), 0.0);
        return g;
    }

    std::vector<Node> nodes_;
    std::vector<Vec> grads_;
    std::vector<std::pair<std::size_t, std::string>> leaves_;
};

inline const Vec& Var::value() const { return tape_->value(id_); }

inline double Var::scalar() const
{
    require(size() == 1, "Var::scalar on a non-scalar node");
    return value()[0];
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic. Operands must have equal sizes; there is no
// broadcasting, only explicit scalar-variable helpers.

namespace detail {

inline void same_size(Var a, Var b, const char* op)
{
    require(a.size() == b.size(), std::string(op) + ": size mismatch");
}

template <class F, class D>
Var unary(Var a, F f, D df)
{
    const Vec& x = a.value();
    Vec y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
    const auto ia = a.id();
    return a.tape()->record(std::move(y), {a}, [ia, df](Tape& t, const Vec& g) {
        const Vec& x = t.value(ia);
        Vec d(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) d[i] = g[i] * df(x[i]);
        t.accumulate(ia, d);
    });
}

} // namespace detail

inline Var operator+(Var a, Var b)
{
    detail::same_size(a, b, "add");
    Vec y = a.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += b[i];
    const auto ia = a.id(), ib = b.id();
    return a.tape()->record(std::move(y), {a, b}, [ia, ib](Tape& t, const Vec& g) {
        t.accumulate(ia, g);
        t.accumulate(ib, g);
    });
}

inline Var operator-(Var a, Var b)
{
    detail::same_size(a, b, "sub");
    Vec y = a.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b[i];
    const auto ia = a.id(), ib = b.id();
    return a.tape()->record(std::move(y), {a, b}, [ia, ib](Tape& t, const Vec& g) {
        t.accumulate(ia, g);
        Vec n(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) n[i] = -g[i];
        t.accumulate(ib, n);
    });
}

inline Var operator*(Var a, Var b)
{
    detail::same_size(a, b, "mul");
    Vec y = a.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b[i];
    const auto ia = a.id(), ib = b.id();
    return a.tape()->record(std::move(y), {a, b}, [ia, ib](Tape& t, const Vec& g) {
        const Vec& x = t.value(ia);
        const Vec& z = t.value(ib);
        Vec da(g.size()), db(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) {
            da[i] = g[i] * z[i];
            db[i] = g[i] * x[i];
        }
        t.accumulate(ia, da);
        t.accumulate(ib, db);
    });
}

/// a / b for scalar nodes.
inline Var operator/(Var a, Var b)
{
    require(a.size() == 1 && b.size() == 1, "div: scalar operands only");
    const double x = a.scalar(), z = b.scalar();
    const auto ia = a.id(), ib = b.id();
    return a.tape()->record(Vec{x / z}, {a, b}, [ia, ib, x, z](Tape& t, const Vec& g) {
        t.accumulate(ia, 0, g[0] / z);
        t.accumulate(ib, 0, -g[0] * x / (z * z));
    });
}

inline Var operator*(Var a, double c)
{
    return detail::unary(a, [c](double x) { return c * x; }, [c](double) { return c; });
}
inline Var operator*(double c, Var a) { return a * c; }
inline Var operator+(Var a, double c)
{
    return detail::unary(a, [c](double x) { return x + c; }, [](double) { return 1.0; });
}
inline Var operator+(double c, Var a) { return a + c; }
inline Var operator-(Var a, double c) { return a + (-c); }
inline Var operator-(double c, Var a) { return (-1.0 * a) + c; }
inline Var operator-(Var a) { return -1.0 * a; }

/// Elementwise product with a constant vector (masks, fixed weights).
inline Var mul_const(Var a, const Vec& c)
{
    require(a.size() == c.size(), "mul_const: size mismatch");
    Vec y = a.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= c[i];
    const auto ia = a.id();
    return a.tape()->record(std::move(y), {a}, [ia, c](Tape& t, const Vec& g) {
        Vec d(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] * c[i];
        t.accumulate(ia, d);
    });
}

/// v * s where s is a scalar node.
inline Var scale(Var v, Var s)
{
    require(s.size() == 1, "scale: expects a scalar factor");
    const double c = s.scalar();
    Vec y = v.value();
    for (auto& e : y) e *= c;
    const auto iv = v.id(), is = s.id();
    return v.tape()->record(std::move(y), {v, s}, [iv, is](Tape& t, const Vec& g) {
        const Vec& x = t.value(iv);
        const double c = t.value(is)[0];
        Vec d(g.size());
        double ds = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            d[i] = g[i] * c;
            ds += g[i] * x[i];
        }
        t.accumulate(iv, d);
        t.accumulate(is, 0, ds);
    });
}

/// v + s where s is a scalar node.
inline Var add_scalar(Var v, Var s)
{
    require(s.size() == 1, "add_scalar: expects a scalar addend");
    const double c = s.scalar();
    Vec y = v.value();
    for (auto& e : y) e += c;
    const auto iv = v.id(), is = s.id();
    return v.tape()->record(std::move(y), {v, s}, [iv, is](Tape& t, const Vec& g) {
        t.accumulate(iv, g);
        double ds = 0.0;
        for (double gi : g) ds += gi;
        t.accumulate(is, 0, ds);
    });
}

inline Var square(Var a)
{
    return detail::unary(a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

inline Var log(Var a)
{
    return detail::unary(a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

inline Var exp(Var a)
{
    return detail::unary(a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

/// log(max(x, floor)); zero gradient where the floor is active.
inline Var log_floor(Var a, double floor)
{
    return detail::unary(
        a, [floor](double x) { return std::log(std::max(x, floor)); },
        [floor](double x) { return x > floor ? 1.0 / x : 0.0; });
}

/// Clamp to [lo, hi]; zero gradient outside the interval.
inline Var clamp(Var a, double lo, double hi)
{
    return detail::unary(
        a, [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
        [lo, hi](double x) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

inline double sigmoid_value(double x)
{
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double softsign_value(double x) { return x / (std::abs(x) + 1.0); }

enum class Activation { softsign, tanh, sigmoid, relu };

inline Var sigmoid(Var a)
{
    return detail::unary(a, sigmoid_value, [](double x) {
        const double s = sigmoid_value(x);
        return s * (1.0 - s);
    });
}

inline Var tanh(Var a)
{
    return detail::unary(a, [](double x) { return std::tanh(x); }, [](double x) {
        const double th = std::tanh(x);
        return 1.0 - th * th;
    });
}

inline Var softsign(Var a)
{
    return detail::unary(a, softsign_value, [](double x) {
        const double d = std::abs(x) + 1.0;
        return 1.0 / (d * d);
    });
}

// ReLU subgradient at 0 is 0.
inline Var relu(Var a)
{
    return detail::unary(a, [](double x) { return x > 0 ? x : 0.0; },
                         [](double x) { return x > 0 ? 1.0 : 0.0; });
}

inline Var activation(Var a, Activation kind)
{
    switch (kind) {
    case Activation::softsign: return softsign(a);
    case Activation::tanh: return tanh(a);
    case Activation::sigmoid: return sigmoid(a);
    case Activation::relu: return relu(a);
    }
    return a;
}

// ---------------------------------------------------------------------------
// Reductions and indexing.

inline Var sum(Var a)
{
    double s = 0.0;
    for (double x : a.value()) s += x;
    const auto ia = a.id();
    const auto n = a.size();
    return a.tape()->record(Vec{s}, {a}, [ia, n](Tape& t, const Vec& g) {
        t.accumulate(ia, Vec(n, g[0]));
    });
}

inline Var dot(Var a, Var b) { return sum(a * b); }

inline Var dot_const(Var a, const Vec& c)
{
    require(a.size() == c.size(), "dot_const: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) s += a[i] * c[i];
    const auto ia = a.id();
    return a.tape()->record(Vec{s}, {a}, [ia, c](Tape& t, const Vec& g) {
        Vec d(c.size());
        for (std::size_t i = 0; i < c.size(); ++i) d[i] = g[0] * c[i];
        t.accumulate(ia, d);
    });
}

/// Scalar node holding a[i].
inline Var element(Var a, std::size_t i)
{
    require(i < a.size(), "element: index out of range");
    const auto ia = a.id();
    return a.tape()->record(Vec{a[i]}, {a}, [ia, i](Tape& t, const Vec& g) {
        t.accumulate(ia, i, g[0]);
    });
}

/// Contiguous sub-vector a[begin, begin+len).
inline Var slice(Var a, std::size_t begin, std::size_t len)
{
    require(begin + len <= a.size(), "slice: range out of bounds");
    const Vec& x = a.value();
    Vec y(x.begin() + static_cast<std::ptrdiff_t>(begin),
          x.begin() + static_cast<std::ptrdiff_t>(begin + len));
    const auto ia = a.id();
    return a.tape()->record(std::move(y), {a}, [ia, begin](Tape& t, const Vec& g) {
        for (std::size_t i = 0; i < g.size(); ++i) t.accumulate(ia, begin + i, g[i]);
    });
}

// ---------------------------------------------------------------------------
// Convolutions.

enum class ConvMode {
    centered,  // kernel indexed h_{-(M-1)/2} .. h_{(M-1)/2}, odd M only
    causal,    // kernel indexed h_0 .. h_{M-1}
};

/// y_n = sum_t k_t x_{n - t + offset}, zero outside [0, N). Plain values.
inline Vec conv1d_values(const Vec& x, const Vec& k, std::ptrdiff_t offset)
{
    const auto n = static_cast<std::ptrdiff_t>(x.size());
    const auto m = static_cast<std::ptrdiff_t>(k.size());
    Vec y(x.size(), 0.0);
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::ptrdiff_t t = 0; t < m; ++t) {
            const auto j = i - t + offset;
            if (j >= 0 && j < n) acc += k[static_cast<std::size_t>(t)] * x[static_cast<std::size_t>(j)];
        }
        y[static_cast<std::size_t>(i)] = acc;
    }
    return y;
}

inline std::ptrdiff_t conv_offset(std::size_t kernel_len, ConvMode mode)
{
    require(kernel_len >= 1, "conv1d: empty kernel");
    if (mode == ConvMode::causal) return 0;
    require(kernel_len % 2 == 1, "conv1d: centered mode requires an odd kernel length");
    return static_cast<std::ptrdiff_t>((kernel_len - 1) / 2);
}

/// Same-length convolution with an explicit alignment offset, differentiable
/// in both the signal and the kernel.
inline Var conv1d(Var x, Var k, std::ptrdiff_t offset)
{
    require(x.size() >= 1 && k.size() >= 1, "conv1d: empty operand");
    Vec y = conv1d_values(x.value(), k.value(), offset);
    const auto ix = x.id(), ik = k.id();
    return x.tape()->record(std::move(y), {x, k}, [ix, ik, offset](Tape& t, const Vec& g) {
        const Vec& xv = t.value(ix);
        const Vec& kv = t.value(ik);
        const auto n = static_cast<std::ptrdiff_t>(xv.size());
        const auto m = static_cast<std::ptrdiff_t>(kv.size());
        Vec dx(xv.size(), 0.0), dk(kv.size(), 0.0);
        for (std::ptrdiff_t i = 0; i < n; ++i) {
            const double gi = g[static_cast<std::size_t>(i)];
            if (gi == 0.0) continue;
            for (std::ptrdiff_t s = 0; s < m; ++s) {
                const auto j = i - s + offset;
                if (j < 0 || j >= n) continue;
                dx[static_cast<std::size_t>(j)] += gi * kv[static_cast<std::size_t>(s)];
                dk[static_cast<std::size_t>(s)] += gi * xv[static_cast<std::size_t>(j)];
            }
        }
        t.accumulate(ix, dx);
        t.accumulate(ik, dk);
    });
}

inline Var conv1d_same(Var x, Var k, ConvMode mode) { return conv1d(x, k, conv_offset(k.size(), mode)); }

/// Complex sequence as a pair of real tape nodes.
struct CVar {
    Var re;
    Var im;
};

/// (x_re + j x_im) * (k_re + j k_im) via four real convolutions.
inline CVar complex_conv1d(CVar x, CVar k, std::ptrdiff_t offset)
{
    require(x.re.size() == x.im.size(), "complex_conv1d: signal I/Q length mismatch");
    require(k.re.size() == k.im.size(), "complex_conv1d: kernel I/Q length mismatch");
    Var rr = conv1d(x.re, k.re, offset);
    Var ii = conv1d(x.im, k.im, offset);
    Var ri = conv1d(x.re, k.im, offset);
    Var ir = conv1d(x.im, k.re, offset);
    return CVar{rr - ii, ri + ir};
}

inline CVar complex_conv1d_same(CVar x, CVar k, ConvMode mode)
{
    return complex_conv1d(x, k, conv_offset(k.re.size(), mode));
}

} // namespace blindeq::ad
