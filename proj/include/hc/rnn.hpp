#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hc/errors.hpp"
#include "hc/numerics.hpp"
#include "hc/rng.hpp"

namespace hc {

enum class Activation { tanh, sigmoid };

inline const char* activation_name(Activation a) {
    return a == Activation::tanh ? "tanh" : "sigmoid";
}

inline Activation activation_from_name(const std::string& s) {
    if (s == "tanh") return Activation::tanh;
    if (s == "sigmoid") return Activation::sigmoid;
    throw ConfigError("unknown activation: " + s);
}

struct RnnDims {
    std::size_t input = 0;
    std::size_t hidden = 0;
    std::size_t output = 0;
};

// Simple Elman net: h' = act(W_in x + W_rec h + b_h), logits = W_out h' + b_o.
struct RnnParams {
    Matrix w_in;   // hidden x input
    Matrix w_rec;  // hidden x hidden
    Vec b_h;       // hidden
    Matrix w_out;  // output x hidden
    Vec b_o;       // output
    Activation act = Activation::tanh;

    RnnDims dims() const { return {w_in.cols, w_in.rows, w_out.rows}; }

    std::size_t param_count() const {
        return w_in.size() + w_rec.size() + b_h.size() + w_out.size() + b_o.size();
    }

    bool finite() const {
        return w_in.finite() && w_rec.finite() && all_finite(b_h) && w_out.finite() &&
               all_finite(b_o);
    }

    bool operator==(const RnnParams& o) const {
        return w_in == o.w_in && w_rec == o.w_rec && b_h == o.b_h && w_out == o.w_out &&
               b_o == o.b_o && act == o.act;
    }
};

// Weights uniform in [-r, r] with r = scale / sqrt(fan-in) per matrix, biases zero.
// scale = 1 is the standard init; diagnostics overrides it to provoke
// vanishing/exploding regimes.
struct InitScales {
    double in = 1.0;
    double rec = 1.0;
    double out = 1.0;
    bool absolute = false;  // if set, scales are the uniform ranges themselves
};

inline RnnParams init_params(const RnnDims& d, Activation act, Rng& rng,
                             const InitScales& s = {}) {
    if (d.input == 0 || d.hidden == 0 || d.output == 0)
        throw std::invalid_argument("init_params: zero dimension");
    const double r_in = s.absolute ? s.in : s.in / std::sqrt(static_cast<double>(d.input));
    const double r_rec = s.absolute ? s.rec : s.rec / std::sqrt(static_cast<double>(d.hidden));
    const double r_out = s.absolute ? s.out : s.out / std::sqrt(static_cast<double>(d.hidden));
    RnnParams p;
    p.w_in = random_uniform(d.hidden, d.input, r_in, rng);
    p.w_rec = random_uniform(d.hidden, d.hidden, r_rec, rng);
    p.b_h.assign(d.hidden, 0.0);
    p.w_out = random_uniform(d.output, d.hidden, r_out, rng);
    p.b_o.assign(d.output, 0.0);
    p.act = act;
    return p;
}

struct RnnState {
    Vec h;
    long t = 0;
};

inline RnnState initial_state(const RnnParams& p) {
    return {Vec(p.w_rec.rows, 0.0), 0};
}

inline void apply_activation(Activation act, const Vec& a, Vec& h) {
    h = act == Activation::tanh ? tanh_vec(a) : sigmoid_vec(a);
}

// act'(a) expressed through the post-activation value.
inline double activation_deriv(Activation act, double h) {
    return act == Activation::tanh ? 1.0 - h * h : h * (1.0 - h);
}

struct StepResult {
    RnnState state;
    Vec a;  // pre-activation
    Vec logits;
};

inline StepResult forward_step(const RnnParams& p, const RnnState& state, const Vec& x) {
    if (x.size() != p.w_in.cols)
        throw std::invalid_argument("forward_step: input length " + std::to_string(x.size()) +
                                    " does not match w_in cols " + std::to_string(p.w_in.cols));
    if (state.h.size() != p.w_rec.cols)
        throw std::invalid_argument("forward_step: state length does not match w_rec cols");
    require_finite(x, "forward_step");

    StepResult r;
    r.a = p.b_h;
    matvec_acc(p.w_in, x, r.a);
    matvec_acc(p.w_rec, state.h, r.a);
    if (!all_finite(r.a))
        throw DivergenceError("forward pass produced non-finite pre-activations");
    apply_activation(p.act, r.a, r.state.h);
    r.state.t = state.t + 1;
    r.logits = p.b_o;
    matvec_acc(p.w_out, r.state.h, r.logits);
    if (!all_finite(r.logits))
        throw DivergenceError("forward pass produced non-finite outputs");
    return r;
}

// Per-step bookkeeping for reverse mode: replaying forward from the tape
// reproduces the exact same outputs.
struct StepRecord {
    Vec x;
    Vec a;       // pre-activation
    Vec h;       // post-activation hidden state
    Vec logits;
};

struct UnrollTape {
    Vec h0;
    std::vector<StepRecord> steps;

    std::size_t length() const { return steps.size(); }
};

inline UnrollTape unroll(const RnnParams& p, const std::vector<Vec>& xs, const Vec& h0) {
    if (xs.empty()) throw std::invalid_argument("unroll: empty sequence");
    if (h0.size() != p.w_rec.rows)
        throw std::invalid_argument("unroll: h0 length does not match hidden size");
    UnrollTape tape;
    tape.h0 = h0;
    tape.steps.reserve(xs.size());
    RnnState state{h0, 0};
    for (const Vec& x : xs) {
        StepResult r = forward_step(p, state, x);
        tape.steps.push_back({x, std::move(r.a), r.state.h, std::move(r.logits)});
        state = std::move(r.state);
    }
    return tape;
}

inline UnrollTape unroll(const RnnParams& p, const std::vector<Vec>& xs) {
    return unroll(p, xs, Vec(p.w_rec.rows, 0.0));
}

// Recompute logits from the tape's stored inputs; used to assert tape fidelity.
inline std::vector<Vec> replay_logits(const RnnParams& p, const UnrollTape& tape) {
    std::vector<Vec> out;
    out.reserve(tape.length());
    RnnState state{tape.h0, 0};
    for (const StepRecord& s : tape.steps) {
        StepResult r = forward_step(p, state, s.x);
        out.push_back(r.logits);
        state = std::move(r.state);
    }
    return out;
}

struct RnnGrads {
    Matrix w_in, w_rec;
    Vec b_h;
    Matrix w_out;
    Vec b_o;

    static RnnGrads zeros_like(const RnnParams& p) {
        RnnGrads g;
        g.w_in = Matrix(p.w_in.rows, p.w_in.cols);
        g.w_rec = Matrix(p.w_rec.rows, p.w_rec.cols);
        g.b_h.assign(p.b_h.size(), 0.0);
        g.w_out = Matrix(p.w_out.rows, p.w_out.cols);
        g.b_o.assign(p.b_o.size(), 0.0);
        return g;
    }

    void add_scaled(const RnnGrads& o, double c) {
        for (std::size_t i = 0; i < w_in.size(); ++i) w_in.data[i] += c * o.w_in.data[i];
        for (std::size_t i = 0; i < w_rec.size(); ++i) w_rec.data[i] += c * o.w_rec.data[i];
        for (std::size_t i = 0; i < b_h.size(); ++i) b_h[i] += c * o.b_h[i];
        for (std::size_t i = 0; i < w_out.size(); ++i) w_out.data[i] += c * o.w_out.data[i];
        for (std::size_t i = 0; i < b_o.size(); ++i) b_o[i] += c * o.b_o[i];
    }

    bool finite() const {
        return w_in.finite() && w_rec.finite() && all_finite(b_h) && w_out.finite() &&
               all_finite(b_o);
    }
};

inline double grad_sq_norm(const RnnGrads& g) {
    double s = 0.0;
    for (double x : g.w_in.data) s += x * x;
    for (double x : g.w_rec.data) s += x * x;
    for (double x : g.b_h) s += x * x;
    for (double x : g.w_out.data) s += x * x;
    for (double x : g.b_o) s += x * x;
    return s;
}

inline double grad_norm(const RnnGrads& g) { return std::sqrt(grad_sq_norm(g)); }

// Optional per-step norms captured during the backward pass; this is what the
// vanishing-gradient diagnostics read out.
struct BackpropTrace {
    std::vector<double> dh_norm;  // ||dL/dh_t||_2, one per step
    std::vector<double> dx_norm;  // ||dL/dx_t||_2, one per step
};

// Reverse sweep driven by per-step output gradients dL/dlogits. Loss adapters
// (cross-entropy, imitation MSE) only have to fill in dlogits. dh_last, when
// given, is an extra gradient flowing into the final hidden state; that is
// how a classifier head sitting on the final state trains the net below it.
inline RnnGrads backprop_through_time(const RnnParams& p, const UnrollTape& tape,
                                      const std::vector<Vec>& dlogits,
                                      BackpropTrace* trace = nullptr,
                                      const Vec* dh_last = nullptr) {
    const std::size_t n = tape.length();
    if (dlogits.size() != n)
        throw std::invalid_argument("backprop_through_time: dlogits length mismatch");
    if (dh_last && dh_last->size() != p.w_rec.rows)
        throw std::invalid_argument("backprop_through_time: dh_last length mismatch");

    RnnGrads g = RnnGrads::zeros_like(p);
    if (trace) {
        trace->dh_norm.assign(n, 0.0);
        trace->dx_norm.assign(n, 0.0);
    }

    Vec dh_future(p.w_rec.rows, 0.0);  // W_rec^T da_{t+1}
    Vec dh, da(p.w_rec.rows), dx;
    for (std::size_t ti = n; ti-- > 0;) {
        const StepRecord& st = tape.steps[ti];
        // dL/dh_t = W_out^T dz_t + (future recurrent term)
        matvec_t(p.w_out, dlogits[ti], dh);
        for (std::size_t i = 0; i < dh.size(); ++i) dh[i] += dh_future[i];
        if (dh_last && ti == n - 1)
            for (std::size_t i = 0; i < dh.size(); ++i) dh[i] += (*dh_last)[i];

        outer_acc(g.w_out, dlogits[ti], st.h);
        for (std::size_t i = 0; i < g.b_o.size(); ++i) g.b_o[i] += dlogits[ti][i];

        for (std::size_t i = 0; i < da.size(); ++i)
            da[i] = dh[i] * activation_deriv(p.act, st.h[i]);

        const Vec& h_prev = ti == 0 ? tape.h0 : tape.steps[ti - 1].h;
        outer_acc(g.w_in, da, st.x);
        outer_acc(g.w_rec, da, h_prev);
        for (std::size_t i = 0; i < g.b_h.size(); ++i) g.b_h[i] += da[i];

        matvec_t(p.w_rec, da, dh_future);
        if (trace) {
            trace->dh_norm[ti] = norm2(dh);
            matvec_t(p.w_in, da, dx);
            trace->dx_norm[ti] = norm2(dx);
        }
    }
    return g;
}

inline double cross_entropy(const Vec& logits, std::size_t target) {
    if (target >= logits.size())
        throw std::invalid_argument("cross_entropy: target " + std::to_string(target) +
                                    " out of range for " + std::to_string(logits.size()) +
                                    " classes");
    const double m = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double z : logits) sum += std::exp(z - m);
    return std::log(sum) - (logits[target] - m);
}

constexpr int kNoTarget = -1;

// Gradients of summed cross-entropy over the steps that carry a target
// (kNoTarget elsewhere). Full unroll, no truncation.
inline RnnGrads bptt(const RnnParams& p, const UnrollTape& tape, const std::vector<int>& targets,
                     double* loss_out = nullptr, BackpropTrace* trace = nullptr) {
    const std::size_t n = tape.length();
    if (targets.size() != n)
        throw std::invalid_argument("bptt: targets length does not match tape length");

    double loss = 0.0;
    std::vector<Vec> dlogits(n);
    for (std::size_t t = 0; t < n; ++t) {
        const Vec& z = tape.steps[t].logits;
        if (targets[t] == kNoTarget) {
            dlogits[t].assign(z.size(), 0.0);
            continue;
        }
        if (targets[t] < 0 || static_cast<std::size_t>(targets[t]) >= z.size())
            throw std::invalid_argument("bptt: target index " + std::to_string(targets[t]) +
                                        " out of alphabet range");
        loss += cross_entropy(z, static_cast<std::size_t>(targets[t]));
        dlogits[t] = softmax(z);
        dlogits[t][static_cast<std::size_t>(targets[t])] -= 1.0;
    }
    if (loss_out) *loss_out = loss;
    return backprop_through_time(p, tape, dlogits, trace);
}

// params - lr * grads, after optional global-norm clipping. Returns the clip
// factor actually applied (1.0 when no clipping happened).
inline double sgd_step_inplace(RnnParams& p, const RnnGrads& g, double lr,
                               std::optional<double> clip) {
    if (lr <= 0.0) throw std::invalid_argument("sgd_step: lr must be positive");
    if (!g.finite()) throw DivergenceError("sgd_step: non-finite gradient");
    double factor = 1.0;
    if (clip) {
        const double n = grad_norm(g);
        if (n > *clip) factor = *clip / n;
    }
    const double c = -lr * factor;
    for (std::size_t i = 0; i < p.w_in.size(); ++i) p.w_in.data[i] += c * g.w_in.data[i];
    for (std::size_t i = 0; i < p.w_rec.size(); ++i) p.w_rec.data[i] += c * g.w_rec.data[i];
    for (std::size_t i = 0; i < p.b_h.size(); ++i) p.b_h[i] += c * g.b_h[i];
    for (std::size_t i = 0; i < p.w_out.size(); ++i) p.w_out.data[i] += c * g.w_out.data[i];
    for (std::size_t i = 0; i < p.b_o.size(); ++i) p.b_o[i] += c * g.b_o[i];
    return factor;
}

inline RnnParams sgd_step(RnnParams p, const RnnGrads& g, double lr, std::optional<double> clip,
                          double* clip_factor = nullptr) {
    const double f = sgd_step_inplace(p, g, lr, clip);
    if (clip_factor) *clip_factor = f;
    return p;
}

// Flat views used by finite-difference checks. Order: w_in, w_rec, b_h, w_out, b_o.
inline Vec flatten(const RnnParams& p) {
    Vec v;
    v.reserve(p.param_count());
    v.insert(v.end(), p.w_in.data.begin(), p.w_in.data.end());
    v.insert(v.end(), p.w_rec.data.begin(), p.w_rec.data.end());
    v.insert(v.end(), p.b_h.begin(), p.b_h.end());
    v.insert(v.end(), p.w_out.data.begin(), p.w_out.data.end());
    v.insert(v.end(), p.b_o.begin(), p.b_o.end());
    return v;
}

inline Vec flatten(const RnnGrads& g) {
    Vec v;
    v.insert(v.end(), g.w_in.data.begin(), g.w_in.data.end());
    v.insert(v.end(), g.w_rec.data.begin(), g.w_rec.data.end());
    v.insert(v.end(), g.b_h.begin(), g.b_h.end());
    v.insert(v.end(), g.w_out.data.begin(), g.w_out.data.end());
    v.insert(v.end(), g.b_o.begin(), g.b_o.end());
    return v;
}

inline RnnParams unflatten(const Vec& v, const RnnDims& d, Activation act) {
    RnnParams p;
    p.w_in = Matrix(d.hidden, d.input);
    p.w_rec = Matrix(d.hidden, d.hidden);
    p.b_h.assign(d.hidden, 0.0);
    p.w_out = Matrix(d.output, d.hidden);
    p.b_o.assign(d.output, 0.0);
    p.act = act;
    if (v.size() != p.param_count()) throw std::invalid_argument("unflatten: size mismatch");
    std::size_t k = 0;
    for (double& x : p.w_in.data) x = v[k++];
    for (double& x : p.w_rec.data) x = v[k++];
    for (double& x : p.b_h) x = v[k++];
    for (double& x : p.w_out.data) x = v[k++];
    for (double& x : p.b_o) x = v[k++];
    return p;
}

}  // namespace hc
