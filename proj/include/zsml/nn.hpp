#pragma once

// Dense-network substrate: weight-normalized layers, inverted dropout, losses,
// exact backprop for fixed MLP topologies, flat parameter vectors and optimizers.
// Everything is templated on the scalar type; the library instantiates double.

#include "zsml/errors.hpp"
#include "zsml/types.hpp"

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace zsml {

enum class Activation { relu, tanh, identity };
enum class Mode { train, eval };
enum class LossKind { mse, binary_cross_entropy };

class DegenerateLayerError : public NumericError {
public:
    using NumericError::NumericError;
};

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
    return m.derived().array().isFinite().all();
}

template <typename Scalar>
MatrixX<Scalar> activate(const MatrixX<Scalar>& pre, Activation act) {
    switch (act) {
    case Activation::relu: return pre.cwiseMax(Scalar(0));
    case Activation::tanh: return pre.array().tanh().matrix();
    case Activation::identity: return pre;
    }
    return pre;
}

// d activation / d pre, expressed through the cached pre- and post-activation values.
template <typename Scalar>
MatrixX<Scalar> activation_slope(const MatrixX<Scalar>& pre, const MatrixX<Scalar>& out,
                                 Activation act) {
    switch (act) {
    case Activation::relu: return (pre.array() > Scalar(0)).template cast<Scalar>().matrix();
    case Activation::tanh: return (Scalar(1) - out.array().square()).matrix();
    case Activation::identity: return MatrixX<Scalar>::Ones(pre.rows(), pre.cols());
    }
    return MatrixX<Scalar>::Ones(pre.rows(), pre.cols());
}

/// Weight-normalized dense layer. Column j of the effective weight matrix is
/// gain[j] * direction.col(j) / ||direction.col(j)||.
template <typename Scalar>
struct DenseLayer {
    MatrixX<Scalar> direction; // in x out
    VectorX<Scalar> gain;      // out
    VectorX<Scalar> bias;      // out
    Activation activation = Activation::identity;

    Index in_dim() const { return direction.rows(); }
    Index out_dim() const { return direction.cols(); }

    /// He-style uniform init in [-sqrt(6/fan_in), sqrt(6/fan_in)], zero bias,
    /// gains set to the initial column norms so W_eff equals the raw init.
    static DenseLayer init(Index in, Index out, Activation act, Rng& rng) {
        if (in <= 0 || out <= 0) throw ShapeError("dense layer dimensions must be positive");
        DenseLayer layer;
        const double bound = std::sqrt(6.0 / static_cast<double>(in));
        std::uniform_real_distribution<double> u(-bound, bound);
        layer.direction.resize(in, out);
        for (Index r = 0; r < in; ++r)
            for (Index c = 0; c < out; ++c) layer.direction(r, c) = Scalar(u(rng));
        layer.gain = layer.direction.colwise().norm().transpose();
        layer.bias = VectorX<Scalar>::Zero(out);
        layer.activation = act;
        return layer;
    }

    VectorX<Scalar> column_norms() const {
        VectorX<Scalar> norms = direction.colwise().norm().transpose();
        for (Index j = 0; j < norms.size(); ++j)
            if (!(norms(j) > Scalar(0)))
                throw DegenerateLayerError("weight-norm direction column " + std::to_string(j) +
                                           " has zero norm");
        return norms;
    }

    MatrixX<Scalar> effective_weight() const {
        const VectorX<Scalar> scale = gain.cwiseQuotient(column_norms());
        return direction * scale.asDiagonal();
    }
};

template <typename Scalar>
void check_layer_shape(const DenseLayer<Scalar>& layer) {
    if (layer.gain.size() != layer.out_dim() || layer.bias.size() != layer.out_dim())
        throw ShapeError("dense layer gain/bias length does not match output dimension");
}

/// activation(x * W_eff + b)
template <typename Scalar>
MatrixX<Scalar> dense_forward(const MatrixX<Scalar>& x, const DenseLayer<Scalar>& layer) {
    check_layer_shape(layer);
    if (x.cols() != layer.in_dim())
        throw ShapeError("dense_forward: input has " + std::to_string(x.cols()) +
                         " columns, layer expects " + std::to_string(layer.in_dim()));
    MatrixX<Scalar> pre = x * layer.effective_weight();
    pre.rowwise() += layer.bias.transpose();
    return activate(pre, layer.activation);
}

template <typename Scalar>
struct DenseCache {
    MatrixX<Scalar> input;
    MatrixX<Scalar> pre;
    MatrixX<Scalar> out;
};

template <typename Scalar>
DenseCache<Scalar> dense_forward_cached(const MatrixX<Scalar>& x, const DenseLayer<Scalar>& layer) {
    check_layer_shape(layer);
    if (x.cols() != layer.in_dim())
        throw ShapeError("dense_forward: input has " + std::to_string(x.cols()) +
                         " columns, layer expects " + std::to_string(layer.in_dim()));
    DenseCache<Scalar> cache;
    cache.input = x;
    cache.pre = x * layer.effective_weight();
    cache.pre.rowwise() += layer.bias.transpose();
    cache.out = activate(cache.pre, layer.activation);
    return cache;
}

template <typename Scalar>
struct DenseGrad {
    MatrixX<Scalar> direction;
    VectorX<Scalar> gain;
    VectorX<Scalar> bias;
};

/// Back-propagates d loss / d out through one layer. Returns the parameter
/// gradients and d loss / d input.
template <typename Scalar>
std::pair<DenseGrad<Scalar>, MatrixX<Scalar>> dense_backward(const DenseLayer<Scalar>& layer,
                                                             const DenseCache<Scalar>& cache,
                                                             const MatrixX<Scalar>& d_out) {
    const MatrixX<Scalar> d_pre =
        d_out.cwiseProduct(activation_slope(cache.pre, cache.out, layer.activation));
    const VectorX<Scalar> norms = layer.column_norms();
    const MatrixX<Scalar> weight = layer.effective_weight();
    const MatrixX<Scalar> d_weight = cache.input.transpose() * d_pre;

    DenseGrad<Scalar> grad;
    grad.bias = d_pre.colwise().sum().transpose();
    grad.gain.resize(layer.out_dim());
    grad.direction.resize(layer.in_dim(), layer.out_dim());
    for (Index j = 0; j < layer.out_dim(); ++j) {
        const auto v = layer.direction.col(j);
        const Scalar dg = d_weight.col(j).dot(v) / norms(j);
        grad.gain(j) = dg;
        grad.direction.col(j) = (layer.gain(j) / norms(j)) * (d_weight.col(j) - (dg / norms(j)) * v);
    }
    MatrixX<Scalar> d_input = d_pre * weight.transpose();
    return {std::move(grad), std::move(d_input)};
}

struct DropoutSpec {
    double rate = 0.0;
    Mode mode = Mode::eval;
};

inline void check_dropout_rate(double rate) {
    if (!(rate >= 0.0 && rate < 1.0))
        throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
}

/// Inverted-dropout multiplier: 0 with probability rate, else 1/(1-rate).
template <typename Scalar>
MatrixX<Scalar> dropout_mask(Index rows, Index cols, double rate, Rng& rng) {
    check_dropout_rate(rate);
    MatrixX<Scalar> mask(rows, cols);
    if (rate == 0.0) {
        mask.setOnes();
        return mask;
    }
    std::bernoulli_distribution keep(1.0 - rate);
    const Scalar scale = Scalar(1.0 / (1.0 - rate));
    for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < cols; ++c) mask(r, c) = keep(rng) ? scale : Scalar(0);
    return mask;
}

template <typename Scalar>
MatrixX<Scalar> dropout_apply(const MatrixX<Scalar>& x, const DropoutSpec& spec, Rng& rng) {
    check_dropout_rate(spec.rate);
    if (spec.mode == Mode::eval || spec.rate == 0.0) return x;
    return x.cwiseProduct(dropout_mask<Scalar>(x.rows(), x.cols(), spec.rate, rng));
}

template <typename Scalar>
Scalar sigmoid(Scalar z) {
    using std::exp;
    if (z >= Scalar(0)) return Scalar(1) / (Scalar(1) + exp(-z));
    const Scalar e = exp(z);
    return e / (Scalar(1) + e);
}

/// Mean loss over all entries plus d loss / d output. For binary cross-entropy
/// the output is a logit and targets are {0,1}.
template <typename Scalar>
std::pair<Scalar, MatrixX<Scalar>> loss_and_slope(const MatrixX<Scalar>& out,
                                                  const MatrixX<Scalar>& target, LossKind kind) {
    if (out.rows() != target.rows() || out.cols() != target.cols())
        throw ShapeError("loss: prediction and target shapes differ");
    if (out.size() == 0) throw ShapeError("loss: empty batch");
    const Scalar n = Scalar(out.size());
    MatrixX<Scalar> slope(out.rows(), out.cols());
    Scalar total(0);
    if (kind == LossKind::mse) {
        const MatrixX<Scalar> diff = out - target;
        total = diff.squaredNorm();
        slope = (Scalar(2) / n) * diff;
    } else {
        using std::abs;
        using std::exp;
        using std::log1p;
        for (Index i = 0; i < out.size(); ++i) {
            const Scalar z = out.data()[i];
            const Scalar y = target.data()[i];
            // softplus(z) - y z, computed stably
            total += (z > Scalar(0) ? z : Scalar(0)) + log1p(exp(-abs(z))) - y * z;
            slope.data()[i] = (sigmoid(z) - y) / n;
        }
    }
    return {total / n, std::move(slope)};
}

struct Regularization {
    double l1 = 0.0;
    double l2 = 0.0;
};

template <typename Derived>
typename Derived::Scalar penalty(const Eigen::MatrixBase<Derived>& w, const Regularization& reg) {
    using Scalar = typename Derived::Scalar;
    Scalar p(0);
    if (reg.l1 != 0.0) p += Scalar(reg.l1) * w.cwiseAbs().sum();
    if (reg.l2 != 0.0) p += Scalar(reg.l2) * w.squaredNorm();
    return p;
}

template <typename Derived>
auto penalty_slope(const Eigen::MatrixBase<Derived>& w, const Regularization& reg) {
    using Scalar = typename Derived::Scalar;
    return (Scalar(reg.l1) * w.array().sign() + Scalar(2.0 * reg.l2) * w.array()).matrix();
}

// ---------------------------------------------------------------------------
// Flat parameter vectors
// ---------------------------------------------------------------------------

struct ParamBlock {
    std::string name;
    Index rows = 0;
    Index cols = 0;

    Index size() const { return rows * cols; }
    bool operator==(const ParamBlock&) const = default;
};

struct ParamLayout {
    std::vector<ParamBlock> blocks;

    Index size() const {
        Index n = 0;
        for (const auto& b : blocks) n += b.size();
        return n;
    }
    bool operator==(const ParamLayout&) const = default;
};

template <typename Scalar>
struct FlatParams {
    VectorX<Scalar> values;
    ParamLayout layout;
};

inline void require_same_layout(const ParamLayout& a, const ParamLayout& b, const char* what) {
    if (!(a == b)) throw ShapeError(std::string(what) + ": parameter layouts differ");
}

/// Returns a + scale * (b - a).
template <typename Scalar>
FlatParams<Scalar> param_axpy(const FlatParams<Scalar>& a, const FlatParams<Scalar>& b,
                              Scalar scale) {
    require_same_layout(a.layout, b.layout, "param_axpy");
    if (a.values.size() != b.values.size()) throw ShapeError("param_axpy: length mismatch");
    if (scale == Scalar(1)) return b;
    if (scale == Scalar(0)) return a;
    return {a.values + scale * (b.values - a.values), a.layout};
}

// Sequential writer/reader over a flat vector. The same visiting order is used
// for layout, flatten, unflatten and gradient packing.
template <typename Scalar>
class FlatWriter {
public:
    explicit FlatWriter(Index total) : values_(total) {}

    template <typename Derived>
    void put(const std::string& name, const Eigen::MatrixBase<Derived>& block) {
        const Index n = block.size();
        if (offset_ + n > values_.size()) throw ShapeError("flat writer overflow at " + name);
        for (Index r = 0; r < block.rows(); ++r)
            for (Index c = 0; c < block.cols(); ++c) values_(offset_++) = block(r, c);
        layout_.blocks.push_back({name, block.rows(), block.cols()});
    }

    FlatParams<Scalar> finish() && {
        if (offset_ != values_.size()) throw ShapeError("flat writer: size mismatch");
        return {std::move(values_), std::move(layout_)};
    }

private:
    VectorX<Scalar> values_;
    ParamLayout layout_;
    Index offset_ = 0;
};

template <typename Scalar>
class FlatReader {
public:
    explicit FlatReader(const FlatParams<Scalar>& flat) : flat_(flat) {}

    template <typename Derived>
    void get(const std::string& name, Eigen::MatrixBase<Derived>& block) {
        if (block_ >= flat_.layout.blocks.size()) throw ShapeError("flat reader: too few blocks");
        const ParamBlock& b = flat_.layout.blocks[block_++];
        if (b.name != name || b.rows != block.rows() || b.cols != block.cols())
            throw ShapeError("flat reader: block '" + b.name + "' does not match '" + name + "'");
        for (Index r = 0; r < block.rows(); ++r)
            for (Index c = 0; c < block.cols(); ++c) block(r, c) = flat_.values(offset_++);
    }

    void finish() const {
        if (block_ != flat_.layout.blocks.size() || offset_ != flat_.values.size())
            throw ShapeError("flat reader: trailing parameters");
    }

private:
    const FlatParams<Scalar>& flat_;
    std::size_t block_ = 0;
    Index offset_ = 0;
};

template <typename Scalar>
Index param_count(const DenseLayer<Scalar>& l) {
    return l.direction.size() + l.gain.size() + l.bias.size();
}

template <typename Scalar>
void put_layer(FlatWriter<Scalar>& w, const std::string& prefix, const DenseLayer<Scalar>& l) {
    w.put(prefix + ".direction", l.direction);
    w.put(prefix + ".gain", l.gain);
    w.put(prefix + ".bias", l.bias);
}

template <typename Scalar>
void put_grad(FlatWriter<Scalar>& w, const std::string& prefix, const DenseGrad<Scalar>& g) {
    w.put(prefix + ".direction", g.direction);
    w.put(prefix + ".gain", g.gain);
    w.put(prefix + ".bias", g.bias);
}

template <typename Scalar>
void get_layer(FlatReader<Scalar>& r, const std::string& prefix, DenseLayer<Scalar>& l) {
    r.get(prefix + ".direction", l.direction);
    r.get(prefix + ".gain", l.gain);
    r.get(prefix + ".bias", l.bias);
}

// ---------------------------------------------------------------------------
// Multi-layer perceptron
// ---------------------------------------------------------------------------

/// Stack of dense layers. dropout[i] is applied to the output of layers[i];
/// the last layer is never followed by dropout.
template <typename Scalar>
struct Mlp {
    std::vector<DenseLayer<Scalar>> layers;
    std::vector<double> dropout;

    static Mlp init(Index in, const std::vector<Index>& widths, Activation hidden,
                    Activation output, double dropout_rate, Rng& rng) {
        Mlp net;
        Index prev = in;
        for (std::size_t i = 0; i < widths.size(); ++i) {
            const bool last = i + 1 == widths.size();
            net.layers.push_back(DenseLayer<Scalar>::init(prev, widths[i], last ? output : hidden, rng));
            net.dropout.push_back(last ? 0.0 : dropout_rate);
            prev = widths[i];
        }
        return net;
    }

    double dropout_after(std::size_t i) const {
        return i + 1 < layers.size() && i < dropout.size() ? dropout[i] : 0.0;
    }
};

template <typename Scalar>
FlatParams<Scalar> flatten(const Mlp<Scalar>& net) {
    Index total = 0;
    for (const auto& l : net.layers) total += param_count(l);
    FlatWriter<Scalar> w(total);
    for (std::size_t i = 0; i < net.layers.size(); ++i)
        put_layer(w, "layer" + std::to_string(i), net.layers[i]);
    return std::move(w).finish();
}

/// Writes flat values into a network of matching topology.
template <typename Scalar>
void unflatten(const FlatParams<Scalar>& flat, Mlp<Scalar>& net) {
    FlatReader<Scalar> r(flat);
    for (std::size_t i = 0; i < net.layers.size(); ++i)
        get_layer(r, "layer" + std::to_string(i), net.layers[i]);
    r.finish();
}

template <typename Scalar>
MatrixX<Scalar> predict(const Mlp<Scalar>& net, const MatrixX<Scalar>& x) {
    MatrixX<Scalar> h = x;
    for (const auto& l : net.layers) h = dense_forward(h, l);
    return h;
}

template <typename Scalar>
struct BackpropResult {
    Scalar loss;
    FlatParams<Scalar> grads;
};

/// Mean loss plus regularization, and its exact gradient with respect to every
/// trainable scalar. Regularization covers direction matrices only.
template <typename Scalar>
BackpropResult<Scalar> backprop(const Mlp<Scalar>& net, const MatrixX<Scalar>& x,
                                const MatrixX<Scalar>& y, LossKind loss_kind,
                                const Regularization& reg, Mode mode, Rng& rng) {
    if (x.rows() == 0) throw ShapeError("backprop: empty batch");
    if (net.layers.empty()) throw ShapeError("backprop: network has no layers");

    std::vector<DenseCache<Scalar>> caches;
    std::vector<MatrixX<Scalar>> masks;
    caches.reserve(net.layers.size());
    MatrixX<Scalar> h = x;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        caches.push_back(dense_forward_cached(h, net.layers[i]));
        if (!all_finite(caches.back().out))
            throw NumericError("non-finite activation in layer " + std::to_string(i));
        h = caches.back().out;
        const double rate = net.dropout_after(i);
        if (mode == Mode::train && rate > 0.0) {
            masks.push_back(dropout_mask<Scalar>(h.rows(), h.cols(), rate, rng));
            h = h.cwiseProduct(masks.back());
        } else {
            masks.emplace_back();
        }
    }

    auto [loss, d_h] = loss_and_slope(h, y, loss_kind);
    std::vector<DenseGrad<Scalar>> grads(net.layers.size());
    for (std::size_t k = net.layers.size(); k-- > 0;) {
        if (masks[k].size() != 0) d_h = d_h.cwiseProduct(masks[k]);
        auto [g, d_in] = dense_backward(net.layers[k], caches[k], d_h);
        loss += penalty(net.layers[k].direction, reg);
        g.direction += penalty_slope(net.layers[k].direction, reg);
        grads[k] = std::move(g);
        d_h = std::move(d_in);
    }

    Index total = 0;
    for (const auto& l : net.layers) total += param_count(l);
    FlatWriter<Scalar> w(total);
    for (std::size_t i = 0; i < grads.size(); ++i)
        put_grad(w, "layer" + std::to_string(i), grads[i]);
    return {loss, std::move(w).finish()};
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

enum class OptimizerKind { sgd, adam };

std::string to_string(OptimizerKind k);
OptimizerKind optimizer_from_string(const std::string& s);

template <typename Scalar>
struct OptimizerState {
    OptimizerKind kind = OptimizerKind::sgd;
    double learning_rate = 0.01;
    double momentum = 0.0; // sgd only
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    VectorX<Scalar> m; // sgd velocity, or adam first moment
    VectorX<Scalar> v; // adam second moment
    long step = 0;
};

template <typename Scalar>
FlatParams<Scalar> optimizer_step(const FlatParams<Scalar>& params, const FlatParams<Scalar>& grads,
                                  OptimizerState<Scalar>& state) {
    require_same_layout(params.layout, grads.layout, "optimizer_step");
    if (params.values.size() != grads.values.size())
        throw ShapeError("optimizer_step: length mismatch");
    if (!(state.learning_rate >= 0.0)) throw ConfigError("learning rate must be non-negative");
    const Index n = params.values.size();
    if (state.m.size() == 0) state.m = VectorX<Scalar>::Zero(n);
    if (state.kind == OptimizerKind::adam && state.v.size() == 0) state.v = VectorX<Scalar>::Zero(n);
    if (state.m.size() != n || (state.kind == OptimizerKind::adam && state.v.size() != n))
        throw ShapeError("optimizer_step: moment buffers do not match parameters");

    ++state.step;
    FlatParams<Scalar> out{params.values, params.layout};
    const Scalar lr = Scalar(state.learning_rate);
    if (state.kind == OptimizerKind::sgd) {
        if (state.momentum == 0.0) {
            out.values -= lr * grads.values;
        } else {
            state.m = Scalar(state.momentum) * state.m + grads.values;
            out.values -= lr * state.m;
        }
        return out;
    }
    const Scalar b1 = Scalar(state.beta1), b2 = Scalar(state.beta2);
    state.m = b1 * state.m + (Scalar(1) - b1) * grads.values;
    state.v = b2 * state.v + (Scalar(1) - b2) * grads.values.cwiseAbs2();
    const Scalar c1 = Scalar(1) - Scalar(std::pow(state.beta1, static_cast<double>(state.step)));
    const Scalar c2 = Scalar(1) - Scalar(std::pow(state.beta2, static_cast<double>(state.step)));
    out.values.array() -= lr * (state.m.array() / c1) /
                          ((state.v.array() / c2).sqrt() + Scalar(state.epsilon));
    return out;
}

} // namespace zsml
