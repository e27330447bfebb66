#ifndef LEMOL_AUTODIFF_HPP
#define LEMOL_AUTODIFF_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "lemol/params.hpp"
#include "lemol/tensor.hpp"

namespace lemol {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
};

/// Define-by-run record of primitive operations.
///
/// Every op appends one node; backward() walks the nodes in exact reverse
/// order of creation. Nodes whose inputs carry no gradient are recorded
/// without a backward closure. Parameter leaves reference the store's tensors
/// directly, so a store must not be mutated while a tape bound to it is live.
class Tape {
  public:
    using BackwardFn = std::function<void(Tape&, std::size_t)>;

    Tape() { nodes_.reserve(256); }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor t) { return push(std::move(t), false, nullptr); }

    /// A leaf that accumulates a gradient (inputs under a gradient check, etc).
    Var variable(Tensor t) { return push(std::move(t), true, nullptr); }

    Var param(const ParamStore& store, const std::string& name, bool trainable) {
        Node n;
        n.ext = &store.value(name);
        n.needs_grad = trainable;
        nodes_.push_back(std::move(n));
        const std::size_t id = nodes_.size() - 1;
        if (trainable) {
            for (const auto& p : params_)
                if (p.first == name) throw std::logic_error("parameter '" + name + "' bound twice as trainable");
            params_.emplace_back(name, id);
        }
        return Var{this, id};
    }

    Var push(Tensor value, bool needs_grad, BackwardFn fn) {
        Node n;
        n.owned = std::move(value);
        n.needs_grad = needs_grad;
        if (needs_grad) n.backward = std::move(fn);
        nodes_.push_back(std::move(n));
        return Var{this, nodes_.size() - 1};
    }

    const Tensor& value(std::size_t id) const {
        const Node& n = nodes_[id];
        return n.ext ? *n.ext : n.owned;
    }
    bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

    /// Gradient accumulator for a node, allocated on first touch.
    Tensor& grad_acc(std::size_t id) {
        Node& n = nodes_[id];
        if (!n.has_grad) {
            n.grad = Tensor::zeros_like(value(id));
            n.has_grad = true;
        }
        return n.grad;
    }

    Tensor grad(Var v) const {
        const Node& n = nodes_[v.id];
        if (n.has_grad) return n.grad;
        return Tensor::zeros_like(value(v.id));
    }

    void backward(Var root) {
        if (value(root.id).size() != 1) throw ShapeError("backward() needs a scalar root");
        if (!nodes_[root.id].needs_grad) return;
        grad_acc(root.id)[0] = 1.0;
        for (std::size_t i = root.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.has_grad || !n.backward) continue;
            n.backward(*this, i);
        }
    }

    /// Gradients of every trainable parameter bound on this tape. Parameters
    /// that did not influence the root get exact zeros.
    NamedTensors param_grads() const {
        NamedTensors out;
        for (const auto& [name, id] : params_) out.emplace(name, grad(Var{const_cast<Tape*>(this), id}));
        return out;
    }

    std::size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        Tensor owned;
        const Tensor* ext = nullptr;
        Tensor grad;
        bool has_grad = false;
        bool needs_grad = false;
        BackwardFn backward;
    };
    std::vector<Node> nodes_;
    std::vector<std::pair<std::string, std::size_t>> params_;
};

inline const Tensor& Var::value() const { return tape->value(id); }

/// Lazily binds parameters of one store onto a tape.
class Bound {
  public:
    Bound(Tape& tape, const ParamStore& store, bool trainable) : tape_(&tape), store_(&store), trainable_(trainable) {}

    Var operator()(const std::string& name) {
        auto it = cache_.find(name);
        if (it != cache_.end()) return it->second;
        Var v = tape_->param(*store_, name, trainable_);
        cache_.emplace(name, v);
        return v;
    }

    Tape& tape() { return *tape_; }
    const ParamStore& store() const { return *store_; }
    bool trainable() const { return trainable_; }

  private:
    Tape* tape_;
    const ParamStore* store_;
    bool trainable_;
    std::map<std::string, Var> cache_;
};

namespace ops {

namespace detail {
inline Tape& tape_of(Var a) { return *a.tape; }
inline bool any_grad(Tape& t, std::initializer_list<Var> vs) {
    for (Var v : vs)
        if (t.needs_grad(v.id)) return true;
    return false;
}
inline void require(bool ok, const std::string& op, const Shape& a, const Shape& b) {
    if (!ok) throw ShapeError(op + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}
}  // namespace detail

/// [B x I] * [I x O]
inline Var matmul(Var a, Var w) {
    Tape& t = detail::tape_of(a);
    const Tensor& A = a.value();
    const Tensor& W = w.value();
    detail::require(W.rank() == 2 && A.cols() == W.rows(), "matmul", A.shape(), W.shape());
    const std::size_t B = A.rows(), I = A.cols(), O = W.cols();
    Tensor C(Shape{B, O});
    double* c = C.ptr();
    const double* ap = A.ptr();
    const double* wp = W.ptr();
    for (std::size_t b = 0; b < B; ++b) {
        double* crow = c + b * O;
        for (std::size_t i = 0; i < I; ++i) {
            const double x = ap[b * I + i];
            if (x == 0.0) continue;
            const double* wrow = wp + i * O;
            for (std::size_t o = 0; o < O; ++o) crow[o] += x * wrow[o];
        }
    }
    return t.push(std::move(C), detail::any_grad(t, {a, w}), [a, w, B, I, O](Tape& tp, std::size_t self) {
        const double* g = tp.grad_acc(self).ptr();
        if (tp.needs_grad(a.id)) {
            double* ga = tp.grad_acc(a.id).ptr();
            const double* wp = tp.value(w.id).ptr();
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t i = 0; i < I; ++i) {
                    const double* wrow = wp + i * O;
                    const double* grow = g + b * O;
                    double s = 0.0;
                    for (std::size_t o = 0; o < O; ++o) s += grow[o] * wrow[o];
                    ga[b * I + i] += s;
                }
        }
        if (tp.needs_grad(w.id)) {
            double* gw = tp.grad_acc(w.id).ptr();
            const double* ap = tp.value(a.id).ptr();
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t i = 0; i < I; ++i) {
                    const double x = ap[b * I + i];
                    if (x == 0.0) continue;
                    double* gwrow = gw + i * O;
                    const double* grow = g + b * O;
                    for (std::size_t o = 0; o < O; ++o) gwrow[o] += x * grow[o];
                }
        }
    });
}

/// Adds a bias row to every row of x.
inline Var add_bias(Var x, Var bias) {
    Tape& t = detail::tape_of(x);
    const Tensor& X = x.value();
    const Tensor& b = bias.value();
    detail::require(b.size() == X.cols(), "add_bias", X.shape(), b.shape());
    const std::size_t R = X.rows(), C = X.cols();
    Tensor Y(Shape{R, C});
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) Y[r * C + c] = X[r * C + c] + b[c];
    return t.push(std::move(Y), detail::any_grad(t, {x, bias}), [x, bias, R, C](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad_acc(self);
        if (tp.needs_grad(x.id)) {
            Tensor& gx = tp.grad_acc(x.id);
            for (std::size_t i = 0; i < R * C; ++i) gx[i] += g[i];
        }
        if (tp.needs_grad(bias.id)) {
            Tensor& gb = tp.grad_acc(bias.id);
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t c = 0; c < C; ++c) gb[c] += g[r * C + c];
        }
    });
}

namespace detail {
template <class Fwd, class Da, class Db>
Var binary_same(const char* name, Var a, Var b, Fwd fwd, Da da, Db db) {
    Tape& t = tape_of(a);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    require(A.shape() == B.shape(), name, A.shape(), B.shape());
    Tensor Y(A.shape());
    for (std::size_t i = 0; i < A.size(); ++i) Y[i] = fwd(A[i], B[i]);
    return t.push(std::move(Y), any_grad(t, {a, b}), [a, b, da, db](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad_acc(self);
        const Tensor& A = tp.value(a.id);
        const Tensor& B = tp.value(b.id);
        if (tp.needs_grad(a.id)) {
            Tensor& ga = tp.grad_acc(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * da(A[i], B[i]);
        }
        if (tp.needs_grad(b.id)) {
            Tensor& gb = tp.grad_acc(b.id);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * db(A[i], B[i]);
        }
    });
}

// Elementwise op whose derivative is expressed through input x and output y.
template <class Fwd, class D>
Var unary(Var a, Fwd fwd, D deriv) {
    Tape& t = tape_of(a);
    const Tensor& A = a.value();
    Tensor Y(A.shape());
    for (std::size_t i = 0; i < A.size(); ++i) Y[i] = fwd(A[i]);
    return t.push(std::move(Y), t.needs_grad(a.id), [a, deriv](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad_acc(self);
        const Tensor& A = tp.value(a.id);
        const Tensor& Y = tp.value(self);
        Tensor& ga = tp.grad_acc(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(A[i], Y[i]);
    });
}
}  // namespace detail

inline Var add(Var a, Var b) {
    return detail::binary_same(
        "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}
inline Var sub(Var a, Var b) {
    return detail::binary_same(
        "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}
inline Var mul(Var a, Var b) {
    return detail::binary_same(
        "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

inline Var scale(Var a, double s) {
    return detail::unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}
inline Var square(Var a) {
    return detail::unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}
inline Var relu(Var a) {
    return detail::unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                         [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}
inline Var tanh(Var a) {
    return detail::unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}
inline Var sigmoid(Var a) {
    return detail::unary(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                         [](double, double y) { return y * (1.0 - y); });
}

/// log(max(x, floor)); the gradient is zero where the clamp is active.
inline Var log_clamped(Var a, double floor) {
    return detail::unary(a, [floor](double x) { return std::log(std::max(x, floor)); },
                         [floor](double x, double) { return x > floor ? 1.0 / x : 0.0; });
}

inline Tensor softmax_rows(const Tensor& logits) {
    const std::size_t R = logits.rows(), C = logits.cols();
    Tensor Y(Shape{R, C});
    for (std::size_t r = 0; r < R; ++r) {
        const double* x = logits.ptr() + r * C;
        double* y = Y.ptr() + r * C;
        double mx = x[0];
        for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, x[c]);
        double z = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
            y[c] = std::exp(x[c] - mx);
            z += y[c];
        }
        for (std::size_t c = 0; c < C; ++c) y[c] /= z;
    }
    return Y;
}

/// Row-wise softmax with max subtraction.
inline Var softmax(Var a) {
    Tape& t = detail::tape_of(a);
    Tensor Y = softmax_rows(a.value());
    const std::size_t R = Y.rows(), C = Y.cols();
    return t.push(std::move(Y), t.needs_grad(a.id), [a, R, C](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad_acc(self);
        const Tensor& y = tp.value(self);
        Tensor& ga = tp.grad_acc(a.id);
        for (std::size_t r = 0; r < R; ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < C; ++c) dot += g[r * C + c] * y[r * C + c];
            for (std::size_t c = 0; c < C; ++c) ga[r * C + c] += y[r * C + c] * (g[r * C + c] - dot);
        }
    });
}

inline Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    Tape& t = detail::tape_of(parts.front());
    const std::size_t R = parts.front().rows();
    std::size_t C = 0;
    bool grad = false;
    for (Var p : parts) {
        detail::require(p.rows() == R, "concat_cols", parts.front().value().shape(), p.value().shape());
        C += p.cols();
        grad = grad || t.needs_grad(p.id);
    }
    Tensor Y(Shape{R, C});
    std::size_t off = 0;
    for (Var p : parts) {
        const Tensor& P = p.value();
        const std::size_t pc = P.cols();
        for (std::size_t r = 0; r < R; ++r) std::copy(P.ptr() + r * pc, P.ptr() + (r + 1) * pc, Y.ptr() + r * C + off);
        off += pc;
    }
    return t.push(std::move(Y), grad, [parts, R, C](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad_acc(self);
        std::size_t off = 0;
        for (Var p : parts) {
            const std::size_t pc = tp.value(p.id).cols();
            if (tp.needs_grad(p.id)) {
                Tensor& gp = tp.grad_acc(p.id);
                for (std::size_t r = 0; r < R; ++r)
                    for (std::size_t c = 0; c < pc; ++c) gp[r * pc + c] += g[r * C + off + c];
            }
            off += pc;
        }
    });
}

inline Var slice_cols(Var a, std::size_t start, std::size_t len) {
    Tape& t = detail::tape_of(a);
    const Tensor& A = a.value();
    const std::size_t R = A.rows(), C = A.cols();
    if (start + len > C) throw ShapeError("slice_cols: range exceeds " + shape_str(A.shape()));
    Tensor Y(Shape{R, len});
    for (std::size_t r = 0; r < R; ++r) std::copy(A.ptr() + r * C + start, A.ptr() + r * C + start + len, Y.ptr() + r * len);
    return t.push(std::move(Y), t.needs_grad(a.id), [a, R, C, start, len](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad_acc(self);
        Tensor& ga = tp.grad_acc(a.id);
        for (std::size_t r = 0; r < R; ++r)
            for (std::size_t c = 0; c < len; ++c) ga[r * C + start + c] += g[r * len + c];
    });
}

inline Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    Tape& t = detail::tape_of(parts.front());
    const std::size_t C = parts.front().cols();
    std::size_t R = 0;
    bool grad = false;
    for (Var p : parts) {
        detail::require(p.cols() == C, "concat_rows", parts.front().value().shape(), p.value().shape());
        R += p.rows();
        grad = grad || t.needs_grad(p.id);
    }
    Tensor Y(Shape{R, C});
    std::size_t off = 0;
    for (Var p : parts) {
        const Tensor& P = p.value();
        std::copy(P.ptr(), P.ptr() + P.size(), Y.ptr() + off);
        off += P.size();
    }
    return t.push(std::move(Y), grad, [parts](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad_acc(self);
        std::size_t off = 0;
        for (Var p : parts) {
            const std::size_t n = tp.value(p.id).size();
            if (tp.needs_grad(p.id)) {
                Tensor& gp = tp.grad_acc(p.id);
                for (std::size_t i = 0; i < n; ++i) gp[i] += g[off + i];
            }
            off += n;
        }
    });
}

inline Var slice_rows(Var a, std::size_t start, std::size_t len) {
    Tape& t = detail::tape_of(a);
    const Tensor& A = a.value();
    const std::size_t R = A.rows(), C = A.cols();
    if (start + len > R) throw ShapeError("slice_rows: range exceeds " + shape_str(A.shape()));
    Tensor Y(Shape{len, C});
    std::copy(A.ptr() + start * C, A.ptr() + (start + len) * C, Y.ptr());
    return t.push(std::move(Y), t.needs_grad(a.id), [a, C, start, len](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad_acc(self);
        Tensor& ga = tp.grad_acc(a.id);
        for (std::size_t i = 0; i < len * C; ++i) ga[start * C + i] += g[i];
    });
}

inline Var sum(Var a) {
    Tape& t = detail::tape_of(a);
    const Tensor& A = a.value();
    double s = 0.0;
    for (double x : A.data()) s += x;
    return t.push(Tensor(Shape{}, s), t.needs_grad(a.id), [a](Tape& tp, std::size_t self) {
        const double g = tp.grad_acc(self)[0];
        Tensor& ga = tp.grad_acc(a.id);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
}

inline Var mean(Var a) {
    const auto n = static_cast<double>(a.value().size());
    return scale(sum(a), 1.0 / n);
}

/// Fused LSTM cell. `z` holds the pre-activations of the input, forget,
/// candidate and output gates side by side ([B x 4H]); `c` is the previous
/// cell state. Returns [B x 2H] = [h' | c'].
inline Var lstm_cell(Var z, Var c) {
    Tape& t = detail::tape_of(z);
    const Tensor& Z = z.value();
    const Tensor& Cp = c.value();
    const std::size_t B = Cp.rows(), H = Cp.cols();
    detail::require(Z.rows() == B && Z.cols() == 4 * H, "lstm_cell", Z.shape(), Cp.shape());
    // gates: i, f, g, o after activation, plus tanh(c')
    Tensor act(Shape{B, 5 * H});
    Tensor Y(Shape{B, 2 * H});
    auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
    for (std::size_t b = 0; b < B; ++b) {
        const double* zr = Z.ptr() + b * 4 * H;
        double* ar = act.ptr() + b * 5 * H;
        double* yr = Y.ptr() + b * 2 * H;
        for (std::size_t j = 0; j < H; ++j) {
            const double ig = sig(zr[j]);
            const double fg = sig(zr[H + j]);
            const double gg = std::tanh(zr[2 * H + j]);
            const double og = sig(zr[3 * H + j]);
            const double cn = fg * Cp[b * H + j] + ig * gg;
            const double tc = std::tanh(cn);
            ar[j] = ig;
            ar[H + j] = fg;
            ar[2 * H + j] = gg;
            ar[3 * H + j] = og;
            ar[4 * H + j] = tc;
            yr[j] = og * tc;
            yr[H + j] = cn;
        }
    }
    return t.push(std::move(Y), detail::any_grad(t, {z, c}),
                  [z, c, B, H, act = std::move(act)](Tape& tp, std::size_t self) {
                      const Tensor& g = tp.grad_acc(self);
                      const Tensor& Cp = tp.value(c.id);
                      const bool gz = tp.needs_grad(z.id);
                      const bool gc = tp.needs_grad(c.id);
                      double* dz = gz ? tp.grad_acc(z.id).ptr() : nullptr;
                      double* dc = gc ? tp.grad_acc(c.id).ptr() : nullptr;
                      for (std::size_t b = 0; b < B; ++b) {
                          const double* ar = act.ptr() + b * 5 * H;
                          const double* gr = g.ptr() + b * 2 * H;
                          for (std::size_t j = 0; j < H; ++j) {
                              const double ig = ar[j], fg = ar[H + j], gg = ar[2 * H + j], og = ar[3 * H + j],
                                           tc = ar[4 * H + j];
                              const double dh = gr[j];
                              const double dcn = gr[H + j] + dh * og * (1.0 - tc * tc);
                              if (dz) {
                                  double* dzr = dz + b * 4 * H;
                                  dzr[j] += dcn * gg * ig * (1.0 - ig);
                                  dzr[H + j] += dcn * Cp[b * H + j] * fg * (1.0 - fg);
                                  dzr[2 * H + j] += dcn * ig * (1.0 - gg * gg);
                                  dzr[3 * H + j] += dh * tc * og * (1.0 - og);
                              }
                              if (dc) dc[b * H + j] += dcn * fg;
                          }
                      }
                  });
}

}  // namespace ops
}  // namespace lemol

#endif
