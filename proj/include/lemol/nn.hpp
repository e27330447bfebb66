#ifndef LEMOL_NN_HPP
#define LEMOL_NN_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "lemol/autodiff.hpp"

namespace lemol {

using Rng = std::mt19937_64;

enum class Activation { relu, tanh, linear };

inline Tensor uniform_init(Shape shape, double limit, Rng& rng) {
    std::uniform_real_distribution<double> dist(-limit, limit);
    Tensor t(std::move(shape));
    for (double& x : t.data()) x = dist(rng);
    return t;
}

inline double glorot_limit(std::size_t fan_in, std::size_t fan_out) {
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

/// activation(x W + b)
inline Var dense_forward(Var x, Var w, Var b, Activation act) {
    const Tensor& X = x.value();
    const Tensor& W = w.value();
    const Tensor& B = b.value();
    if (W.rank() != 2 || X.cols() != W.rows() || B.size() != W.cols())
        throw ShapeError("dense_forward: x " + shape_str(X.shape()) + ", W " + shape_str(W.shape()) + ", b " +
                         shape_str(B.shape()));
    Var y = ops::add_bias(ops::matmul(x, w), b);
    switch (act) {
        case Activation::relu: return ops::relu(y);
        case Activation::tanh: return ops::tanh(y);
        case Activation::linear: return y;
    }
    return y;
}

/// Fully connected stack: relu on hidden layers, linear output.
struct MlpSpec {
    std::string prefix;
    std::vector<std::size_t> sizes;  // input, hidden..., output

    std::size_t input_dim() const { return sizes.front(); }
    std::size_t output_dim() const { return sizes.back(); }
    std::size_t layers() const { return sizes.size() - 1; }
    std::string weight(std::size_t l) const { return prefix + ".l" + std::to_string(l) + ".w"; }
    std::string bias(std::size_t l) const { return prefix + ".l" + std::to_string(l) + ".b"; }

    void init(ParamStore& store, Rng& rng) const {
        for (std::size_t l = 0; l < layers(); ++l) {
            store.add(weight(l), uniform_init({sizes[l], sizes[l + 1]}, glorot_limit(sizes[l], sizes[l + 1]), rng));
            store.add(bias(l), Tensor::zeros({sizes[l + 1]}));
        }
    }

    Var forward(Bound& p, Var x) const {
        if (x.cols() != input_dim())
            throw ShapeError(prefix + ": input has " + std::to_string(x.cols()) + " columns, expected " +
                             std::to_string(input_dim()));
        for (std::size_t l = 0; l < layers(); ++l) {
            const Activation a = l + 1 == layers() ? Activation::linear : Activation::relu;
            x = dense_forward(x, p(weight(l)), p(bias(l)), a);
        }
        return x;
    }
};

struct LstmVars {
    Var h;
    Var c;
};

/// Value-level LSTM state (hidden and cell, each [B x H]).
struct LstmState {
    Tensor h;
    Tensor c;

    static LstmState zeros(std::size_t batch, std::size_t hidden) {
        return {Tensor::zeros({batch, hidden}), Tensor::zeros({batch, hidden})};
    }
    friend bool operator==(const LstmState&, const LstmState&) = default;
};

/// Standard LSTM without peepholes. Gate order in the packed weights is
/// input, forget, candidate, output.
struct LstmSpec {
    std::string prefix;
    std::size_t input = 0;
    std::size_t hidden = 0;

    std::string wx() const { return prefix + ".wx"; }
    std::string wh() const { return prefix + ".wh"; }
    std::string b() const { return prefix + ".b"; }

    void init(ParamStore& store, Rng& rng, double forget_bias = 1.0) const {
        // each gate block gets its own fan_out = hidden
        const double lx = glorot_limit(input, hidden);
        const double lh = glorot_limit(hidden, hidden);
        store.add(wx(), uniform_init({input, 4 * hidden}, lx, rng));
        store.add(wh(), uniform_init({hidden, 4 * hidden}, lh, rng));
        Tensor bias = Tensor::zeros({4 * hidden});
        for (std::size_t j = 0; j < hidden; ++j) bias[hidden + j] = forget_bias;
        store.add(b(), std::move(bias));
    }

    LstmVars step(Bound& p, Var x, LstmVars s) const {
        if (x.cols() != input) throw ShapeError(prefix + ": input width " + std::to_string(x.cols()) +
                                                ", expected " + std::to_string(input));
        if (s.h.cols() != hidden || s.c.cols() != hidden || s.h.rows() != x.rows() || s.c.rows() != x.rows())
            throw ShapeError(prefix + ": state " + shape_str(s.h.value().shape()) + "/" +
                             shape_str(s.c.value().shape()) + " does not fit batch " + std::to_string(x.rows()) +
                             " hidden " + std::to_string(hidden));
        Var z = ops::add_bias(ops::add(ops::matmul(x, p(wx())), ops::matmul(s.h, p(wh()))), p(b()));
        Var hc = ops::lstm_cell(z, s.c);
        return {ops::slice_cols(hc, 0, hidden), ops::slice_cols(hc, hidden, hidden)};
    }
};

/// One LSTM transition on plain values; the input state is left untouched.
inline LstmState lstm_step(const Tensor& x, const LstmState& state, const ParamStore& params, const LstmSpec& spec) {
    Tape tape;
    Bound p(tape, params, false);
    LstmVars s{tape.constant(state.h), tape.constant(state.c)};
    Var xin = tape.constant(x.rank() == 1 ? Tensor(Shape{1, x.size()}, x.data()) : x);
    LstmVars out = spec.step(p, xin, s);
    return {out.h.value(), out.c.value()};
}

/// Bidirectional LSTM summary: final forward and final backward hidden
/// states concatenated, then projected linearly to `embed` dimensions.
struct BiLstmSpec {
    std::string prefix;
    std::size_t input = 0;
    std::size_t hidden = 0;
    std::size_t embed = 0;

    LstmSpec forward_lstm() const { return {prefix + ".fwd", input, hidden}; }
    LstmSpec backward_lstm() const { return {prefix + ".bwd", input, hidden}; }
    MlpSpec projection() const { return {prefix + ".proj", {2 * hidden, embed}}; }

    void init(ParamStore& store, Rng& rng) const {
        forward_lstm().init(store, rng);
        backward_lstm().init(store, rng);
        projection().init(store, rng);
    }

    /// [B x 2H] before projection.
    Var features(Bound& p, const std::vector<Var>& seq) const {
        if (seq.empty()) throw std::invalid_argument(prefix + ": cannot encode an empty sequence");
        Tape& t = p.tape();
        const std::size_t B = seq.front().rows();
        const LstmSpec f = forward_lstm(), b = backward_lstm();
        LstmVars sf{t.constant(Tensor::zeros({B, hidden})), t.constant(Tensor::zeros({B, hidden}))};
        LstmVars sb = sf;
        for (std::size_t i = 0; i < seq.size(); ++i) sf = f.step(p, seq[i], sf);
        for (std::size_t i = seq.size(); i-- > 0;) sb = b.step(p, seq[i], sb);
        return ops::concat_cols({sf.h, sb.h});
    }

    Var encode(Bound& p, const std::vector<Var>& seq) const { return projection().forward(p, features(p, seq)); }
};

inline Tensor bilstm_encode(const std::vector<Tensor>& seq, const ParamStore& params, const BiLstmSpec& spec) {
    Tape tape;
    Bound p(tape, params, false);
    std::vector<Var> xs;
    xs.reserve(seq.size());
    for (const auto& x : seq) xs.push_back(tape.constant(x.rank() == 1 ? Tensor(Shape{1, x.size()}, x.data()) : x));
    return spec.encode(p, xs).value();
}

inline Tensor softmax(const Tensor& logits) { return ops::softmax_rows(logits); }

/// A differentiable scalar built from parameters bound on the given tape.
using ScalarFn = std::function<Var(Tape&, Bound&)>;

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t checked = 0;
};

/// Compares tape gradients with central finite differences. Stores with more
/// than `max_entries` scalars are checked on a seeded random subsample.
inline GradCheckResult grad_check_report(const ScalarFn& f, ParamStore& store, double step = 1e-5,
                                         std::size_t max_entries = 10000, std::uint64_t seed = 0) {
    NamedTensors analytic;
    double f0 = 0.0;
    {
        Tape tape;
        Bound p(tape, store, true);
        Var y = f(tape, p);
        f0 = y.value().item();
        tape.backward(y);
        analytic = tape.param_grads();
    }
    auto eval = [&]() {
        Tape tape;
        Bound p(tape, store, false);
        return f(tape, p).value().item();
    };

    std::vector<std::pair<std::string, std::size_t>> coords;
    for (const auto& [name, e] : store)
        for (std::size_t i = 0; i < e.value.size(); ++i) coords.emplace_back(name, i);
    if (coords.size() > max_entries) {
        Rng rng(seed);
        std::shuffle(coords.begin(), coords.end(), rng);
        coords.resize(max_entries);
    }

    const double floor = 1e-6 * std::max(1.0, std::abs(f0));
    GradCheckResult res;
    for (const auto& [name, i] : coords) {
        double& x = store.value(name)[i];
        const double orig = x;
        x = orig + step;
        const double fp = eval();
        x = orig - step;
        const double fm = eval();
        x = orig;
        const double numeric = (fp - fm) / (2.0 * step);
        auto it = analytic.find(name);
        const double a = it == analytic.end() ? 0.0 : it->second[i];
        const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
        if (rel > res.max_rel_error) {
            res.max_rel_error = rel;
            res.worst_param = name + "[" + std::to_string(i) + "]";
        }
        ++res.checked;
    }
    return res;
}

inline double grad_check(const ScalarFn& f, ParamStore& store, double step = 1e-5) {
    return grad_check_report(f, store, step).max_rel_error;
}

}  // namespace lemol

#endif
