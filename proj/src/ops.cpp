#include "pgfwi/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

namespace pgfwi::ops {

namespace {

using std::ptrdiff_t;
using std::size_t;


// Wraps computed values into a tensor, attaching the node only when a
// gradient can flow.
Tensor finish(Shape shape, std::vector<double> data, std::shared_ptr<Node> node) {
    Tensor out = Tensor::from(std::move(shape), std::move(data));
    bool grad = false;
    for (const auto& in : node->inputs) grad = grad || (in.defined() && in.requires_grad());
    if (grad) {
        out.set_requires_grad(true);
        out.impl()->node = std::move(node);
    }
    return out;
}

std::vector<double>* grad_if(const Tensor& t) {
    if (!t.defined() || !t.requires_grad()) return nullptr;
    return &grad_buffer(*t.impl());
}

void require_same_shape(std::string_view op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

struct Dims4 {
    size_t n, c, h, w;
};

Dims4 image_dims(std::string_view op, const Tensor& x) {
    if (x.ndim() == 3) return {1, x.dim(0), x.dim(1), x.dim(2)};
    if (x.ndim() == 4) return {x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
    throw ShapeError(std::string(op) + ": expected (C,H,W) or (N,C,H,W), got " + shape_str(x.shape()));
}

Shape image_shape(const Tensor& like, size_t n, size_t c, size_t h, size_t w) {
    if (like.ndim() == 3) return {c, h, w};
    return {n, c, h, w};
}

// ---------------------------------------------------------------- elementwise

struct AddNode : Node {
    AddNode() : Node("add") {}
    void backward(const TensorImpl& out) override {
        for (auto& in : inputs) {
            if (auto* g = grad_if(in)) {
                for (size_t i = 0; i < g->size(); ++i) (*g)[i] += out.grad[i];
            }
        }
    }
    std::vector<Tensor> backward_graph(const Tensor&, const Tensor& gout,
                                       const std::vector<bool>&) const override {
        return {gout, gout};
    }
};

struct SubNode : Node {
    SubNode() : Node("sub") {}
    void backward(const TensorImpl& out) override {
        if (auto* g = grad_if(inputs[0])) {
            for (size_t i = 0; i < g->size(); ++i) (*g)[i] += out.grad[i];
        }
        if (auto* g = grad_if(inputs[1])) {
            for (size_t i = 0; i < g->size(); ++i) (*g)[i] -= out.grad[i];
        }
    }
    std::vector<Tensor> backward_graph(const Tensor&, const Tensor& gout,
                                       const std::vector<bool>& on_path) const override {
        return {gout, on_path[1] ? scale(gout, -1.0) : Tensor{}};
    }
};

struct MulNode : Node {
    MulNode() : Node("mul") {}
    void backward(const TensorImpl& out) override {
        const auto& a = inputs[0].data();
        const auto& b = inputs[1].data();
        if (auto* g = grad_if(inputs[0])) {
            for (size_t i = 0; i < g->size(); ++i) (*g)[i] += out.grad[i] * b[i];
        }
        if (auto* g = grad_if(inputs[1])) {
            for (size_t i = 0; i < g->size(); ++i) (*g)[i] += out.grad[i] * a[i];
        }
    }
    std::vector<Tensor> backward_graph(const Tensor&, const Tensor& gout,
                                       const std::vector<bool>& on_path) const override {
        return {on_path[0] ? mul(gout, inputs[1]) : Tensor{},
                on_path[1] ? mul(gout, inputs[0]) : Tensor{}};
    }
};

struct ScaleNode : Node {
    double s;
    explicit ScaleNode(double s_) : Node("scalar-mul"), s(s_) {}
    void backward(const TensorImpl& out) override {
        if (auto* g = grad_if(inputs[0])) {
            for (size_t i = 0; i < g->size(); ++i) (*g)[i] += s * out.grad[i];
        }
    }
    std::vector<Tensor> backward_graph(const Tensor&, const Tensor& gout,
                                       const std::vector<bool>&) const override {
        return {scale(gout, s)};
    }
};

struct AddScalarNode : Node {
    AddScalarNode() : Node("add-scalar") {}
    void backward(const TensorImpl& out) override {
        if (auto* g = grad_if(inputs[0])) {
            for (size_t i = 0; i < g->size(); ++i) (*g)[i] += out.grad[i];
        }
    }
    std::vector<Tensor> backward_graph(const Tensor&, const Tensor& gout,
                                       const std::vector<bool>&) const override {
        return {gout};
    }
};

// Unary op whose local derivative is a function of (x, y).
template <class Deriv>
struct UnaryNode : Node {
    Deriv deriv;
    UnaryNode(std::string k, Deriv d) : Node(std::move(k)), deriv(d) {}
    void backward(const TensorImpl& out) override {
        if (auto* g = grad_if(inputs[0])) {
            const auto& x = inputs[0].data();
            for (size_t i = 0; i < g->size(); ++i) (*g)[i] += out.grad[i] * deriv(x[i], out.data[i]);
        }
    }
};

template <class Fn, class Deriv>
Tensor unary(const Tensor& x, std::string kind, Fn fn, Deriv deriv) {
    std::vector<double> y(x.numel());
    auto xd = x.data();
    for (size_t i = 0; i < y.size(); ++i) y[i] = fn(xd[i]);
    auto node = std::make_shared<UnaryNode<Deriv>>(std::move(kind), deriv);
    node->inputs = {x};
    return finish(x.shape(), std::move(y), node);
}

// Piecewise-linear activations keep their slope pattern so that the
// double-backward can reuse it as a constant mask.
struct MaskNode : Node {
    std::vector<double> slope;
    explicit MaskNode(std::string k) : Node(std::move(k)) {}
    void backward(const TensorImpl& out) override {
        if (auto* g = grad_if(inputs[0])) {
            for (size_t i = 0; i < g->size(); ++i) (*g)[i] += out.grad[i] * slope[i];
        }
    }
    std::vector<Tensor> backward_graph(const Tensor&, const Tensor& gout,
                                       const std::vector<bool>&) const override {
        return {mul(gout, Tensor::from(inputs[0].shape(), slope))};
    }
};

Tensor masked_activation(const Tensor& x, std::string kind, double negative_slope) {
    auto node = std::make_shared<MaskNode>(std::move(kind));
    node->inputs = {x};
    auto xd = x.data();
    std::vector<double> y(xd.size());
    node->slope.resize(xd.size());
    for (size_t i = 0; i < xd.size(); ++i) {
        double s = xd[i] > 0.0 ? 1.0 : negative_slope;
        node->slope[i] = s;
        y[i] = s * xd[i];
    }
    return finish(x.shape(), std::move(y), node);
}

struct SquareNode : Node {
    SquareNode() : Node("square") {}
    void backward(const TensorImpl& out) override {
        if (auto* g = grad_if(inputs[0])) {
            const auto& x = inputs[0].data();
            for (size_t i = 0; i < g->size(); ++i) (*g)[i] += 2.0 * x[i] * out.grad[i];
        }
    }
    std::vector<Tensor> backward_graph(const Tensor&, const Tensor& gout,
                                       const std::vector<bool>&) const override {
        return {mul(gout, scale(inputs[0], 2.0))};
    }
};

// ---------------------------------------------------------------- reductions

struct BroadcastNode : Node {
    BroadcastNode() : Node("broadcast") {}
    void backward(const TensorImpl& out) override {
        if (auto* g = grad_if(inputs[0])) {
            double s = 0.0;
            for (double v : out.grad) s += v;
            (*g)[0] += s;
        }
    }
};

Tensor broadcast_scalar(const Tensor& s, const Shape& shape) {
    auto node = std::make_shared<BroadcastNode>();
    node->inputs = {s};
    return finish(shape, std::vector<double>(numel(shape), s.item()), node);
}

Tensor broadcast_grad(const Tensor& gout, const Shape& shape, double factor) {
    if (!gout.requires_grad()) return Tensor::full(shape, gout.item() * factor);
    return scale(broadcast_scalar(gout, shape), factor);
}

struct SumNode : Node {
    double factor;
    SumNode(std::string k, double f) : Node(std::move(k)), factor(f) {}
    void backward(const TensorImpl& out) override {
        if (auto* g = grad_if(inputs[0])) {
            double v = out.grad[0] * factor;
            for (auto& gi : *g) gi += v;
        }
    }
    std::vector<Tensor> backward_graph(const Tensor&, const Tensor& gout,
                                       const std::vector<bool>&) const override {
        return {broadcast_grad(gout, inputs[0].shape(), factor)};
    }
};

// ---------------------------------------------------------------- matmul

struct TransposeNode : Node {
    size_t rows, cols; // of the input
    TransposeNode(size_t r, size_t c) : Node("transpose"), rows(r), cols(c) {}
    void backward(const TensorImpl& out) override {
        if (auto* g = grad_if(inputs[0])) {
            for (size_t i = 0; i < rows; ++i)
                for (size_t j = 0; j < cols; ++j) (*g)[i * cols + j] += out.grad[j * rows + i];
        }
    }
};

Tensor transpose2d(const Tensor& a) {
    size_t r = a.dim(0), c = a.dim(1);
    std::vector<double> y(r * c);
    auto ad = a.data();
    for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < c; ++j) y[j * r + i] = ad[i * c + j];
    auto node = std::make_shared<TransposeNode>(r, c);
    node->inputs = {a};
    return finish({c, r}, std::move(y), node);
}

// c (m,n) += a (m,k) * b (k,n)
void gemm_nn(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        for (size_t p = 0; p < k; ++p) {
            double av = a[i * k + p];
            if (av == 0.0) continue;
            const double* bp = b + p * n;
            for (size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

struct MatmulNode : Node {
    size_t m, k, n;
    MatmulNode(size_t m_, size_t k_, size_t n_) : Node("matmul"), m(m_), k(k_), n(n_) {}
    void backward(const TensorImpl& out) override {
        const double* a = inputs[0].data().data();
        const double* b = inputs[1].data().data();
        const double* g = out.grad.data();
        if (auto* ga = grad_if(inputs[0])) {
            for (size_t i = 0; i < m; ++i)
                for (size_t p = 0; p < k; ++p) {
                    double s = 0.0;
                    for (size_t j = 0; j < n; ++j) s += g[i * n + j] * b[p * n + j];
                    (*ga)[i * k + p] += s;
                }
        }
        if (auto* gb = grad_if(inputs[1])) {
            for (size_t i = 0; i < m; ++i)
                for (size_t p = 0; p < k; ++p) {
                    double av = a[i * k + p];
                    for (size_t j = 0; j < n; ++j) (*gb)[p * n + j] += av * g[i * n + j];
                }
        }
    }
    std::vector<Tensor> backward_graph(const Tensor&, const Tensor& gout,
                                       const std::vector<bool>& on_path) const override {
        return {on_path[0] ? matmul(gout, transpose2d(inputs[1])) : Tensor{},
                on_path[1] ? matmul(transpose2d(inputs[0]), gout) : Tensor{}};
    }
};

// ---------------------------------------------------------------- conv

struct ConvGeom {
    Dims4 in;
    size_t cout, kh, kw, oh, ow, stride, pad;
};

// Range of output columns whose tap kw lands inside [0, w).
inline void valid_range(ptrdiff_t k, ptrdiff_t pad, ptrdiff_t stride, ptrdiff_t in, ptrdiff_t out,
                        ptrdiff_t& lo, ptrdiff_t& hi) {
    // o*stride + k - pad in [0, in)
    ptrdiff_t a = pad - k;
    lo = a <= 0 ? 0 : (a + stride - 1) / stride;
    ptrdiff_t b = in - 1 + pad - k;
    hi = b < 0 ? -1 : std::min<ptrdiff_t>(out - 1, b / stride);
}

struct Conv2dNode : Node {
    ConvGeom geo;
    explicit Conv2dNode(ConvGeom g) : Node("conv2d"), geo(g) {}

    void backward(const TensorImpl& out) override {
        const auto& [in, cout, kh, kw, oh, ow, stride, pad] = geo;
        const double* x = inputs[0].data().data();
        const double* w = inputs[1].data().data();
        const double* g = out.grad.data();
        auto* gx = grad_if(inputs[0]);
        auto* gw = grad_if(inputs[1]);
        auto* gb = inputs.size() > 2 ? grad_if(inputs[2]) : nullptr;
        const ptrdiff_t s = stride, p = pad;
        for (size_t n = 0; n < in.n; ++n) {
            for (size_t co = 0; co < cout; ++co) {
                const double* gplane = g + (n * cout + co) * oh * ow;
                if (gb) {
                    double acc = 0.0;
                    for (size_t i = 0; i < oh * ow; ++i) acc += gplane[i];
                    (*gb)[co] += acc;
                }
                for (size_t ci = 0; ci < in.c; ++ci) {
                    const double* xplane = x + (n * in.c + ci) * in.h * in.w;
                    double* gxplane = gx ? gx->data() + (n * in.c + ci) * in.h * in.w : nullptr;
                    for (size_t a = 0; a < kh; ++a) {
                        ptrdiff_t rlo, rhi;
                        valid_range(a, p, s, in.h, oh, rlo, rhi);
                        for (size_t b = 0; b < kw; ++b) {
                            ptrdiff_t clo, chi;
                            valid_range(b, p, s, in.w, ow, clo, chi);
                            size_t widx = ((co * in.c + ci) * kh + a) * kw + b;
                            double wv = w[widx];
                            double acc = 0.0;
                            for (ptrdiff_t r = rlo; r <= rhi; ++r) {
                                ptrdiff_t ir = r * s + a - p;
                                const double* grow = gplane + r * ow;
                                const double* xrow = xplane + ir * in.w + b - p;
                                double* gxrow = gxplane ? gxplane + ir * in.w + b - p : nullptr;
                                if (s == 1) {
                                    for (ptrdiff_t c = clo; c <= chi; ++c) acc += grow[c] * xrow[c];
                                    if (gxrow)
                                        for (ptrdiff_t c = clo; c <= chi; ++c) gxrow[c] += wv * grow[c];
                                } else {
                                    for (ptrdiff_t c = clo; c <= chi; ++c) acc += grow[c] * xrow[c * s];
                                    if (gxrow)
                                        for (ptrdiff_t c = clo; c <= chi; ++c) gxrow[c * s] += wv * grow[c];
                                }
                            }
                            if (gw) (*gw)[widx] += acc;
                        }
                    }
                }
            }
        }
    }

    std::vector<Tensor> backward_graph(const Tensor& out, const Tensor& gout,
                                       const std::vector<bool>& on_path) const override {
        for (size_t i = 1; i < on_path.size(); ++i) {
            if (on_path[i]) return Node::backward_graph(out, gout, on_path);
        }
        Tensor gx = conv_transpose2d(gout, inputs[1], Tensor{}, geo.stride, geo.pad);
        if (gx.shape() != inputs[0].shape()) return Node::backward_graph(out, gout, on_path);
        std::vector<Tensor> res(on_path.size());
        res[0] = gx;
        return res;
    }
};

struct ConvTransposeNode : Node {
    ConvGeom geo; // in = x dims, cout/oh/ow = output
    explicit ConvTransposeNode(ConvGeom g) : Node("conv-transpose2d"), geo(g) {}

    void backward(const TensorImpl& out) override {
        const auto& [in, cout, kh, kw, oh, ow, stride, pad] = geo;
        const double* x = inputs[0].data().data();
        const double* w = inputs[1].data().data();
        const double* g = out.grad.data();
        auto* gx = grad_if(inputs[0]);
        auto* gw = grad_if(inputs[1]);
        auto* gb = inputs.size() > 2 ? grad_if(inputs[2]) : nullptr;
        const ptrdiff_t s = stride, p = pad;
        for (size_t n = 0; n < in.n; ++n) {
            if (gb) {
                for (size_t co = 0; co < cout; ++co) {
                    const double* gplane = g + (n * cout + co) * oh * ow;
                    double acc = 0.0;
                    for (size_t i = 0; i < oh * ow; ++i) acc += gplane[i];
                    (*gb)[co] += acc;
                }
            }
            for (size_t ci = 0; ci < in.c; ++ci) {
                const double* xplane = x + (n * in.c + ci) * in.h * in.w;
                double* gxplane = gx ? gx->data() + (n * in.c + ci) * in.h * in.w : nullptr;
                for (size_t co = 0; co < cout; ++co) {
                    const double* gplane = g + (n * cout + co) * oh * ow;
                    for (size_t a = 0; a < kh; ++a) {
                        // output row = r*s + a - p for input row r
                        ptrdiff_t rlo, rhi;
                        valid_range(a, p, s, oh, in.h, rlo, rhi);
                        for (size_t b = 0; b < kw; ++b) {
                            ptrdiff_t clo, chi;
                            valid_range(b, p, s, ow, in.w, clo, chi);
                            size_t widx = ((ci * cout + co) * kh + a) * kw + b;
                            double wv = w[widx];
                            double acc = 0.0;
                            for (ptrdiff_t r = rlo; r <= rhi; ++r) {
                                ptrdiff_t orow = r * s + a - p;
                                const double* grow = gplane + orow * ow + b - p;
                                const double* xrow = xplane + r * in.w;
                                double* gxrow = gxplane ? gxplane + r * in.w : nullptr;
                                for (ptrdiff_t c = clo; c <= chi; ++c) {
                                    double gv = grow[c * s];
                                    acc += gv * xrow[c];
                                    if (gxrow) gxrow[c] += wv * gv;
                                }
                            }
                            if (gw) (*gw)[widx] += acc;
                        }
                    }
                }
            }
        }
    }
};

// ---------------------------------------------------------------- pooling

struct MaxUnpoolNode : Node {
    std::vector<size_t> idx;
    MaxUnpoolNode() : Node("max-unpool") {}
    void backward(const TensorImpl& out) override {
        if (auto* g = grad_if(inputs[0])) {
            for (size_t o = 0; o < idx.size(); ++o) (*g)[o] += out.grad[idx[o]];
        }
    }
};

struct MaxPoolNode : Node {
    std::vector<size_t> idx; // flat input index of each output's max
    MaxPoolNode() : Node("maxpool2d") {}
    void backward(const TensorImpl& out) override {
        if (auto* g = grad_if(inputs[0])) {
            for (size_t o = 0; o < idx.size(); ++o) (*g)[idx[o]] += out.grad[o];
        }
    }
    std::vector<Tensor> backward_graph(const Tensor&, const Tensor& gout,
                                       const std::vector<bool>&) const override {
        auto node = std::make_shared<MaxUnpoolNode>();
        node->idx = idx;
        node->inputs = {gout};
        std::vector<double> y(inputs[0].numel(), 0.0);
        auto gd = gout.data();
        for (size_t o = 0; o < idx.size(); ++o) y[idx[o]] += gd[o];
        return {finish(inputs[0].shape(), std::move(y), node)};
    }
};

// ---------------------------------------------------------------- shape ops

struct ReshapeNode : Node {
    ReshapeNode() : Node("reshape") {}
    void backward(const TensorImpl& out) override {
        if (auto* g = grad_if(inputs[0])) {
            for (size_t i = 0; i < g->size(); ++i) (*g)[i] += out.grad[i];
        }
    }
    std::vector<Tensor> backward_graph(const Tensor&, const Tensor& gout,
                                       const std::vector<bool>&) const override {
        return {reshape(gout, inputs[0].shape())};
    }
};

struct ConcatNode : Node {
    size_t n, h, w;
    ConcatNode(size_t n_, size_t h_, size_t w_) : Node("concat"), n(n_), h(h_), w(w_) {}
    void backward(const TensorImpl& out) override {
        size_t plane = h * w;
        size_t ctot = 0;
        for (auto& in : inputs) ctot += in.ndim() == 3 ? in.dim(0) : in.dim(1);
        size_t offset = 0;
        for (auto& in : inputs) {
            size_t c = in.ndim() == 3 ? in.dim(0) : in.dim(1);
            if (auto* g = grad_if(in)) {
                for (size_t b = 0; b < n; ++b) {
                    const double* src = out.grad.data() + (b * ctot + offset) * plane;
                    double* dst = g->data() + b * c * plane;
                    for (size_t i = 0; i < c * plane; ++i) dst[i] += src[i];
                }
            }
            offset += c;
        }
    }
};

struct AxisInterp {
    std::vector<size_t> i0, i1;
    std::vector<double> w1;
};

AxisInterp axis_interp(size_t in, size_t out) {
    AxisInterp a;
    a.i0.resize(out);
    a.i1.resize(out);
    a.w1.resize(out);
    for (size_t o = 0; o < out; ++o) {
        double src = out > 1 ? static_cast<double>(o) * static_cast<double>(in - 1) /
                                   static_cast<double>(out - 1)
                             : 0.0;
        size_t lo = std::min(static_cast<size_t>(std::floor(src)), in - 1);
        a.i0[o] = lo;
        a.i1[o] = std::min(lo + 1, in - 1);
        a.w1[o] = src - static_cast<double>(lo);
    }
    return a;
}

struct BilinearNode : Node {
    size_t planes, ih, iw, oh, ow;
    AxisInterp ry, rx;
    BilinearNode() : Node("bilinear-resize") {}
    void backward(const TensorImpl& out) override {
        auto* g = grad_if(inputs[0]);
        if (!g) return;
        for (size_t p = 0; p < planes; ++p) {
            const double* go = out.grad.data() + p * oh * ow;
            double* gi = g->data() + p * ih * iw;
            for (size_t y = 0; y < oh; ++y) {
                double wy = ry.w1[y];
                double* r0 = gi + ry.i0[y] * iw;
                double* r1 = gi + ry.i1[y] * iw;
                for (size_t x = 0; x < ow; ++x) {
                    double v = go[y * ow + x];
                    double wx = rx.w1[x];
                    r0[rx.i0[x]] += v * (1 - wy) * (1 - wx);
                    r0[rx.i1[x]] += v * (1 - wy) * wx;
                    r1[rx.i0[x]] += v * wy * (1 - wx);
                    r1[rx.i1[x]] += v * wy * wx;
                }
            }
        }
    }
};

struct SelectRowsNode : Node {
    std::vector<size_t> rows;
    size_t planes, h, w;
    SelectRowsNode() : Node("select-rows") {}
    void backward(const TensorImpl& out) override {
        auto* g = grad_if(inputs[0]);
        if (!g) return;
        size_t k = rows.size();
        for (size_t p = 0; p < planes; ++p)
            for (size_t r = 0; r < k; ++r) {
                const double* src = out.grad.data() + (p * k + r) * w;
                double* dst = g->data() + (p * h + rows[r]) * w;
                for (size_t c = 0; c < w; ++c) dst[c] += src[c];
            }
    }
};

struct LinearNode : Node {
    size_t batch, in, outn;
    LinearNode(size_t b, size_t i, size_t o) : Node("linear"), batch(b), in(i), outn(o) {}
    void backward(const TensorImpl& out) override {
        const double* x = inputs[0].data().data();
        const double* w = inputs[1].data().data();
        const double* g = out.grad.data();
        auto* gx = grad_if(inputs[0]);
        auto* gw = grad_if(inputs[1]);
        auto* gb = inputs.size() > 2 ? grad_if(inputs[2]) : nullptr;
        for (size_t b = 0; b < batch; ++b) {
            for (size_t o = 0; o < outn; ++o) {
                double gv = g[b * outn + o];
                if (gv == 0.0) continue;
                if (gb) (*gb)[o] += gv;
                if (gx) {
                    double* gxr = gx->data() + b * in;
                    const double* wr = w + o * in;
                    for (size_t i = 0; i < in; ++i) gxr[i] += gv * wr[i];
                }
                if (gw) {
                    double* gwr = gw->data() + o * in;
                    const double* xr = x + b * in;
                    for (size_t i = 0; i < in; ++i) gwr[i] += gv * xr[i];
                }
            }
        }
    }
    std::vector<Tensor> backward_graph(const Tensor& out, const Tensor& gout,
                                       const std::vector<bool>& on_path) const override {
        for (size_t i = 1; i < on_path.size(); ++i) {
            if (on_path[i]) return Node::backward_graph(out, gout, on_path);
        }
        std::vector<Tensor> res(on_path.size());
        res[0] = matmul(gout, inputs[1]);
        return res;
    }
};

} // namespace

// ==================================================================== API

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    std::vector<double> y(a.numel());
    auto ad = a.data(), bd = b.data();
    for (size_t i = 0; i < y.size(); ++i) y[i] = ad[i] + bd[i];
    auto node = std::make_shared<AddNode>();
    node->inputs = {a, b};
    return finish(a.shape(), std::move(y), node);
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    std::vector<double> y(a.numel());
    auto ad = a.data(), bd = b.data();
    for (size_t i = 0; i < y.size(); ++i) y[i] = ad[i] - bd[i];
    auto node = std::make_shared<SubNode>();
    node->inputs = {a, b};
    return finish(a.shape(), std::move(y), node);
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    std::vector<double> y(a.numel());
    auto ad = a.data(), bd = b.data();
    for (size_t i = 0; i < y.size(); ++i) y[i] = ad[i] * bd[i];
    auto node = std::make_shared<MulNode>();
    node->inputs = {a, b};
    return finish(a.shape(), std::move(y), node);
}

Tensor scale(const Tensor& a, double s) {
    std::vector<double> y(a.numel());
    auto ad = a.data();
    for (size_t i = 0; i < y.size(); ++i) y[i] = s * ad[i];
    auto node = std::make_shared<ScaleNode>(s);
    node->inputs = {a};
    return finish(a.shape(), std::move(y), node);
}

Tensor add_scalar(const Tensor& a, double s) {
    std::vector<double> y(a.numel());
    auto ad = a.data();
    for (size_t i = 0; i < y.size(); ++i) y[i] = ad[i] + s;
    auto node = std::make_shared<AddScalarNode>();
    node->inputs = {a};
    return finish(a.shape(), std::move(y), node);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> y(m * n, 0.0);
    gemm_nn(a.data().data(), b.data().data(), y.data(), m, k, n);
    auto node = std::make_shared<MatmulNode>(m, k, n);
    node->inputs = {a, b};
    return finish({m, n}, std::move(y), node);
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, size_t stride, size_t pad) {
    Dims4 in = image_dims("conv2d", x);
    if (weight.ndim() != 4 || weight.dim(1) != in.c) {
        throw ShapeError("conv2d: kernel " + shape_str(weight.shape()) + " incompatible with input " +
                         shape_str(x.shape()));
    }
    if (stride == 0) throw ShapeError("conv2d: stride must be positive");
    size_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != cout)) {
        throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match " +
                         std::to_string(cout) + " output channels");
    }
    if (in.h + 2 * pad < kh || in.w + 2 * pad < kw) {
        throw ShapeError("conv2d: kernel " + shape_str(weight.shape()) + " larger than padded input " +
                         shape_str(x.shape()));
    }
    size_t oh = (in.h + 2 * pad - kh) / stride + 1;
    size_t ow = (in.w + 2 * pad - kw) / stride + 1;
    std::vector<double> y(in.n * cout * oh * ow, 0.0);
    const double* xd = x.data().data();
    const double* wd = weight.data().data();
    const ptrdiff_t s = stride, p = pad;
    for (size_t n = 0; n < in.n; ++n) {
        for (size_t co = 0; co < cout; ++co) {
            double* yplane = y.data() + (n * cout + co) * oh * ow;
            if (bias.defined()) std::fill(yplane, yplane + oh * ow, bias.data()[co]);
            for (size_t ci = 0; ci < in.c; ++ci) {
                const double* xplane = xd + (n * in.c + ci) * in.h * in.w;
                for (size_t a = 0; a < kh; ++a) {
                    ptrdiff_t rlo, rhi;
                    valid_range(a, p, s, in.h, oh, rlo, rhi);
                    for (size_t b = 0; b < kw; ++b) {
                        ptrdiff_t clo, chi;
                        valid_range(b, p, s, in.w, ow, clo, chi);
                        double wv = wd[((co * in.c + ci) * kh + a) * kw + b];
                        for (ptrdiff_t r = rlo; r <= rhi; ++r) {
                            double* yrow = yplane + r * ow;
                            const double* xrow = xplane + (r * s + a - p) * in.w + b - p;
                            if (s == 1) {
                                for (ptrdiff_t c = clo; c <= chi; ++c) yrow[c] += wv * xrow[c];
                            } else {
                                for (ptrdiff_t c = clo; c <= chi; ++c) yrow[c] += wv * xrow[c * s];
                            }
                        }
                    }
                }
            }
        }
    }
    auto node = std::make_shared<Conv2dNode>(ConvGeom{in, cout, kh, kw, oh, ow, stride, pad});
    node->inputs = {x, weight};
    if (bias.defined()) node->inputs.push_back(bias);
    return finish(image_shape(x, in.n, cout, oh, ow), std::move(y), node);
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor& bias, size_t stride,
                        size_t pad) {
    Dims4 in = image_dims("conv-transpose2d", x);
    if (weight.ndim() != 4 || weight.dim(0) != in.c) {
        throw ShapeError("conv-transpose2d: kernel " + shape_str(weight.shape()) +
                         " incompatible with input " + shape_str(x.shape()));
    }
    if (stride == 0) throw ShapeError("conv-transpose2d: stride must be positive");
    size_t cout = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
    if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != cout)) {
        throw ShapeError("conv-transpose2d: bias " + shape_str(bias.shape()) + " does not match " +
                         std::to_string(cout) + " output channels");
    }
    if (stride * (in.h - 1) + kh <= 2 * pad || stride * (in.w - 1) + kw <= 2 * pad) {
        throw ShapeError("conv-transpose2d: padding " + std::to_string(pad) + " leaves empty output");
    }
    size_t oh = stride * (in.h - 1) + kh - 2 * pad;
    size_t ow = stride * (in.w - 1) + kw - 2 * pad;
    std::vector<double> y(in.n * cout * oh * ow, 0.0);
    const double* xd = x.data().data();
    const double* wd = weight.data().data();
    const ptrdiff_t s = stride, p = pad;
    for (size_t n = 0; n < in.n; ++n) {
        if (bias.defined()) {
            for (size_t co = 0; co < cout; ++co) {
                double* yplane = y.data() + (n * cout + co) * oh * ow;
                std::fill(yplane, yplane + oh * ow, bias.data()[co]);
            }
        }
        for (size_t ci = 0; ci < in.c; ++ci) {
            const double* xplane = xd + (n * in.c + ci) * in.h * in.w;
            for (size_t co = 0; co < cout; ++co) {
                double* yplane = y.data() + (n * cout + co) * oh * ow;
                for (size_t a = 0; a < kh; ++a) {
                    ptrdiff_t rlo, rhi;
                    valid_range(a, p, s, oh, in.h, rlo, rhi);
                    for (size_t b = 0; b < kw; ++b) {
                        ptrdiff_t clo, chi;
                        valid_range(b, p, s, ow, in.w, clo, chi);
                        double wv = wd[((ci * cout + co) * kh + a) * kw + b];
                        for (ptrdiff_t r = rlo; r <= rhi; ++r) {
                            double* yrow = yplane + (r * s + a - p) * ow + b - p;
                            const double* xrow = xplane + r * in.w;
                            if (s == 1) {
                                for (ptrdiff_t c = clo; c <= chi; ++c) yrow[c] += wv * xrow[c];
                            } else {
                                for (ptrdiff_t c = clo; c <= chi; ++c) yrow[c * s] += wv * xrow[c];
                            }
                        }
                    }
                }
            }
        }
    }
    auto node = std::make_shared<ConvTransposeNode>(ConvGeom{in, cout, kh, kw, oh, ow, stride, pad});
    node->inputs = {x, weight};
    if (bias.defined()) node->inputs.push_back(bias);
    return finish(image_shape(x, in.n, cout, oh, ow), std::move(y), node);
}

Tensor maxpool2d(const Tensor& x, size_t k) {
    Dims4 in = image_dims("maxpool2d", x);
    if (k == 0 || in.h < k || in.w < k) {
        throw ShapeError("maxpool2d: window " + std::to_string(k) + " does not fit input " +
                         shape_str(x.shape()));
    }
    size_t oh = in.h / k, ow = in.w / k;
    auto node = std::make_shared<MaxPoolNode>();
    node->inputs = {x};
    std::vector<double> y(in.n * in.c * oh * ow);
    node->idx.resize(y.size());
    auto xd = x.data();
    size_t o = 0;
    for (size_t pl = 0; pl < in.n * in.c; ++pl) {
        size_t base = pl * in.h * in.w;
        for (size_t r = 0; r < oh; ++r)
            for (size_t c = 0; c < ow; ++c, ++o) {
                size_t best = base + r * k * in.w + c * k;
                for (size_t a = 0; a < k; ++a)
                    for (size_t b = 0; b < k; ++b) {
                        size_t i = base + (r * k + a) * in.w + c * k + b;
                        if (xd[i] > xd[best]) best = i;
                    }
                y[o] = xd[best];
                node->idx[o] = best;
            }
    }
    return finish(image_shape(x, in.n, in.c, oh, ow), std::move(y), node);
}

Tensor relu(const Tensor& x) { return masked_activation(x, "relu", 0.0); }

Tensor leaky_relu(const Tensor& x, double slope) {
    return masked_activation(x, "leaky-relu", slope);
}

Tensor sigmoid(const Tensor& x) {
    return unary(
        x, "sigmoid",
        [](double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor square(const Tensor& x) {
    std::vector<double> y(x.numel());
    auto xd = x.data();
    for (size_t i = 0; i < y.size(); ++i) y[i] = xd[i] * xd[i];
    auto node = std::make_shared<SquareNode>();
    node->inputs = {x};
    return finish(x.shape(), std::move(y), node);
}

Tensor log(const Tensor& x) {
    return unary(x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor abs(const Tensor& x) {
    return unary(
        x, "abs", [](double v) { return std::abs(v); },
        [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
    return unary(
        x, "clamp", [lo, hi](double v) { return std::clamp(v, lo, hi); },
        [lo, hi](double v, double) { return v > lo && v < hi ? 1.0 : 0.0; });
}

Tensor sqrt(const Tensor& x) {
    return unary(x, "sqrt", [](double v) { return std::sqrt(v); },
                 [](double, double y) { return 0.5 / y; });
}

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    auto node = std::make_shared<SumNode>("sum", 1.0);
    node->inputs = {x};
    return finish({}, {s}, node);
}

Tensor mean(const Tensor& x) {
    if (x.numel() == 0) throw ShapeError("mean: empty tensor");
    double s = 0.0;
    for (double v : x.data()) s += v;
    double f = 1.0 / static_cast<double>(x.numel());
    auto node = std::make_shared<SumNode>("mean", f);
    node->inputs = {x};
    return finish({}, {s * f}, node);
}

Tensor concat_channels(std::span<const Tensor> xs) {
    if (xs.empty()) throw ShapeError("concat: no inputs");
    Dims4 first = image_dims("concat", xs[0]);
    size_t ctot = 0;
    for (const auto& t : xs) {
        Dims4 d = image_dims("concat", t);
        if (t.ndim() != xs[0].ndim() || d.n != first.n || d.h != first.h || d.w != first.w) {
            throw ShapeError("concat: " + shape_str(t.shape()) + " incompatible with " +
                             shape_str(xs[0].shape()));
        }
        ctot += d.c;
    }
    size_t plane = first.h * first.w;
    std::vector<double> y(first.n * ctot * plane);
    size_t offset = 0;
    for (const auto& t : xs) {
        size_t c = image_dims("concat", t).c;
        for (size_t b = 0; b < first.n; ++b) {
            const double* src = t.data().data() + b * c * plane;
            std::copy(src, src + c * plane, y.data() + (b * ctot + offset) * plane);
        }
        offset += c;
    }
    auto node = std::make_shared<ConcatNode>(first.n, first.h, first.w);
    node->inputs.assign(xs.begin(), xs.end());
    return finish(image_shape(xs[0], first.n, ctot, first.h, first.w), std::move(y), node);
}

Tensor bilinear_resize(const Tensor& x, size_t out_h, size_t out_w) {
    if (x.ndim() < 2 || out_h == 0 || out_w == 0) {
        throw ShapeError("bilinear-resize: cannot resize " + shape_str(x.shape()) + " to " +
                         std::to_string(out_h) + "x" + std::to_string(out_w));
    }
    size_t ih = x.dim(x.ndim() - 2), iw = x.dim(x.ndim() - 1);
    auto node = std::make_shared<BilinearNode>();
    node->inputs = {x};
    node->planes = x.numel() / (ih * iw);
    node->ih = ih;
    node->iw = iw;
    node->oh = out_h;
    node->ow = out_w;
    node->ry = axis_interp(ih, out_h);
    node->rx = axis_interp(iw, out_w);
    const auto& ry = node->ry;
    const auto& rx = node->rx;
    std::vector<double> y(node->planes * out_h * out_w);
    auto xd = x.data();
    for (size_t p = 0; p < node->planes; ++p) {
        const double* xi = xd.data() + p * ih * iw;
        double* yo = y.data() + p * out_h * out_w;
        for (size_t r = 0; r < out_h; ++r) {
            double wy = ry.w1[r];
            const double* r0 = xi + ry.i0[r] * iw;
            const double* r1 = xi + ry.i1[r] * iw;
            for (size_t c = 0; c < out_w; ++c) {
                double wx = rx.w1[c];
                yo[r * out_w + c] = (1 - wy) * ((1 - wx) * r0[rx.i0[c]] + wx * r0[rx.i1[c]]) +
                                    wy * ((1 - wx) * r1[rx.i0[c]] + wx * r1[rx.i1[c]]);
            }
        }
    }
    Shape shape = x.shape();
    shape[shape.size() - 2] = out_h;
    shape[shape.size() - 1] = out_w;
    return finish(std::move(shape), std::move(y), node);
}

Tensor select_rows(const Tensor& x, std::span<const size_t> rows) {
    if (x.ndim() < 2 || rows.empty()) {
        throw ShapeError("select-rows: bad input " + shape_str(x.shape()));
    }
    size_t h = x.dim(x.ndim() - 2), w = x.dim(x.ndim() - 1);
    for (size_t r : rows) {
        if (r >= h) throw ShapeError("select-rows: row " + std::to_string(r) + " out of range " +
                                     std::to_string(h));
    }
    auto node = std::make_shared<SelectRowsNode>();
    node->inputs = {x};
    node->rows.assign(rows.begin(), rows.end());
    node->planes = x.numel() / (h * w);
    node->h = h;
    node->w = w;
    std::vector<double> y(node->planes * rows.size() * w);
    auto xd = x.data();
    for (size_t p = 0; p < node->planes; ++p)
        for (size_t r = 0; r < rows.size(); ++r) {
            const double* src = xd.data() + (p * h + rows[r]) * w;
            std::copy(src, src + w, y.data() + (p * rows.size() + r) * w);
        }
    Shape shape = x.shape();
    shape[shape.size() - 2] = rows.size();
    return finish(std::move(shape), std::move(y), node);
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (numel(shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    auto node = std::make_shared<ReshapeNode>();
    node->inputs = {x};
    return finish(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()), node);
}

Tensor flatten(const Tensor& x, size_t start_dim) {
    if (start_dim >= x.ndim()) {
        throw ShapeError("flatten: start_dim " + std::to_string(start_dim) + " out of range for " +
                         shape_str(x.shape()));
    }
    Shape shape(x.shape().begin(), x.shape().begin() + static_cast<ptrdiff_t>(start_dim));
    size_t rest = 1;
    for (size_t i = start_dim; i < x.ndim(); ++i) rest *= x.dim(i);
    shape.push_back(rest);
    return reshape(x, std::move(shape));
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (x.ndim() != 2 || weight.ndim() != 2 || weight.dim(1) != x.dim(1)) {
        throw ShapeError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
    }
    size_t batch = x.dim(0), in = x.dim(1), out = weight.dim(0);
    if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != out)) {
        throw ShapeError("linear: bias " + shape_str(bias.shape()) + " does not match " +
                         std::to_string(out) + " outputs");
    }
    std::vector<double> y(batch * out);
    const double* xd = x.data().data();
    const double* wd = weight.data().data();
    for (size_t b = 0; b < batch; ++b)
        for (size_t o = 0; o < out; ++o) {
            double s = bias.defined() ? bias.data()[o] : 0.0;
            const double* xr = xd + b * in;
            const double* wr = wd + o * in;
            for (size_t i = 0; i < in; ++i) s += xr[i] * wr[i];
            y[b * out + o] = s;
        }
    auto node = std::make_shared<LinearNode>(batch, in, out);
    node->inputs = {x, weight};
    if (bias.defined()) node->inputs.push_back(bias);
    return finish({batch, out}, std::move(y), node);
}

std::string_view op_name(OpKind kind) {
    switch (kind) {
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::ScalarMul: return "scalar-mul";
    case OpKind::Matmul: return "matmul";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::ConvTranspose2d: return "conv-transpose2d";
    case OpKind::MaxPool2d: return "maxpool2d";
    case OpKind::Relu: return "relu";
    case OpKind::LeakyRelu: return "leaky-relu";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Mean: return "mean";
    case OpKind::Sum: return "sum";
    case OpKind::Square: return "square";
    case OpKind::Log: return "log";
    case OpKind::Abs: return "abs";
    case OpKind::Concat: return "concat";
    case OpKind::BilinearResize: return "bilinear-resize";
    case OpKind::Flatten: return "flatten";
    case OpKind::Linear: return "linear";
    }
    return "unknown";
}

Tensor op_forward(OpKind kind, std::span<const Tensor> in, const OpAttrs& attrs) {
    auto need = [&](size_t lo, size_t hi) {
        if (in.size() < lo || in.size() > hi) {
            throw ShapeError(std::string(op_name(kind)) + ": expected " + std::to_string(lo) +
                             (lo == hi ? "" : "-" + std::to_string(hi)) + " inputs, got " +
                             std::to_string(in.size()));
        }
    };
    auto opt = [&](size_t i) { return i < in.size() ? in[i] : Tensor{}; };
    switch (kind) {
    case OpKind::Add: need(2, 2); return add(in[0], in[1]);
    case OpKind::Sub: need(2, 2); return sub(in[0], in[1]);
    case OpKind::Mul: need(2, 2); return mul(in[0], in[1]);
    case OpKind::ScalarMul: need(1, 1); return scale(in[0], attrs.scalar);
    case OpKind::Matmul: need(2, 2); return matmul(in[0], in[1]);
    case OpKind::Conv2d: need(2, 3); return conv2d(in[0], in[1], opt(2), attrs.stride, attrs.pad);
    case OpKind::ConvTranspose2d:
        need(2, 3);
        return conv_transpose2d(in[0], in[1], opt(2), attrs.stride, attrs.pad);
    case OpKind::MaxPool2d: need(1, 1); return maxpool2d(in[0], attrs.kernel);
    case OpKind::Relu: need(1, 1); return relu(in[0]);
    case OpKind::LeakyRelu: need(1, 1); return leaky_relu(in[0], attrs.scalar);
    case OpKind::Sigmoid: need(1, 1); return sigmoid(in[0]);
    case OpKind::Mean: need(1, 1); return mean(in[0]);
    case OpKind::Sum: need(1, 1); return sum(in[0]);
    case OpKind::Square: need(1, 1); return square(in[0]);
    case OpKind::Log: need(1, 1); return log(in[0]);
    case OpKind::Abs: need(1, 1); return abs(in[0]);
    case OpKind::Concat: need(1, SIZE_MAX); return concat_channels(in);
    case OpKind::BilinearResize: need(1, 1); return bilinear_resize(in[0], attrs.out_h, attrs.out_w);
    case OpKind::Flatten: need(1, 1); return flatten(in[0], attrs.start_dim);
    case OpKind::Linear: need(2, 3); return linear(in[0], in[1], opt(2));
    }
    throw ShapeError("op_forward: unknown kind");
}

} // namespace pgfwi::ops
