#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pgfwi {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class AutodiffError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Node;

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad; // empty until a gradient reaches this tensor
    bool requires_grad = false;
    std::shared_ptr<Node> node;
};

// Reference-semantics handle onto a node of the computation graph. Copies
// share storage, like a torch::Tensor; use detach() for an independent copy.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(impl_); }
    const Shape& shape() const { return impl_->shape; }
    std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
    std::size_t ndim() const { return impl_->shape.size(); }
    std::size_t numel() const { return impl_->data.size(); }

    std::span<double> data() { return impl_->data; }
    std::span<const double> data() const { return impl_->data; }
    std::vector<double>& storage() { return impl_->data; }
    double item() const;

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool on) { impl_->requires_grad = on; }
    bool has_grad() const { return !impl_->grad.empty(); }
    std::span<const double> grad() const { return impl_->grad; }
    std::span<double> mutable_grad();
    void zero_grad() { impl_->grad.clear(); }

    // Leaf copy of the current values, cut from the graph.
    Tensor detach() const;

    const std::shared_ptr<Node>& node() const { return impl_->node; }
    TensorImpl* impl() const { return impl_.get(); }

private:
    std::shared_ptr<TensorImpl> impl_;
};

// Graph node recording how a tensor was produced.
struct Node {
    std::string kind;
    std::vector<Tensor> inputs;

    explicit Node(std::string k) : kind(std::move(k)) {}
    virtual ~Node() = default;

    // Adds d(loss)/d(input) into each requiring input's grad buffer, given
    // the output tensor whose grad is already complete.
    virtual void backward(const TensorImpl& out) = 0;

    // Differentiable counterpart of backward(): returns, for every input with
    // on_path[i] set, a tensor holding d(loss)/d(input_i) built from graph ops.
    // Only piecewise-linear ops (plus square) implement it.
    virtual std::vector<Tensor> backward_graph(const Tensor& out, const Tensor& gout,
                                               const std::vector<bool>& on_path) const;
};

// Reverse sweep from a scalar loss. Gradients accumulate into every reachable
// tensor that requires grad.
void backward(const Tensor& loss);

// d(output)/d(wrt) as a tensor that itself belongs to the graph, so a loss
// built from it can be backpropagated into the parameters (gradient penalty).
Tensor grad_of_grad(const Tensor& output, const Tensor& wrt);

// Allocates (zeroed) and returns the grad buffer of an impl.
std::vector<double>& grad_buffer(TensorImpl& t);

} // namespace pgfwi
