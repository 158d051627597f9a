#include "pgfwi/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "pgfwi/ops.hpp"

namespace pgfwi {

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ')';
    return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    auto impl = std::make_shared<TensorImpl>();
    impl->data.assign(pgfwi::numel(shape), value);
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
    if (pgfwi::numel(shape) != data.size()) {
        throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
    }
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from({}, {value}, requires_grad);
}

double Tensor::item() const {
    if (numel() != 1) {
        throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
    }
    return impl_->data[0];
}

std::span<double> Tensor::mutable_grad() { return grad_buffer(*impl_); }

Tensor Tensor::detach() const {
    return from(impl_->shape, impl_->data, false);
}

std::vector<double>& grad_buffer(TensorImpl& t) {
    if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0);
    return t.grad;
}

std::vector<Tensor> Node::backward_graph(const Tensor&, const Tensor&,
                                         const std::vector<bool>&) const {
    throw AutodiffError("grad_of_grad: unsupported op '" + kind +
                        "' on the path to the differentiated input");
}

namespace {

// Post-order DFS: inputs precede the tensors computed from them.
std::vector<TensorImpl*> topo_order(const Tensor& root) {
    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> visited;
    struct Frame {
        TensorImpl* t;
        std::size_t next;
    };
    std::vector<Frame> stack{{root.impl(), 0}};
    visited.insert(root.impl());
    while (!stack.empty()) {
        auto& top = stack.back();
        const auto& node = top.t->node;
        if (node && top.next < node->inputs.size()) {
            TensorImpl* child = node->inputs[top.next++].impl();
            if (child->requires_grad && visited.insert(child).second) {
                stack.push_back({child, 0});
            }
            continue;
        }
        order.push_back(top.t);
        stack.pop_back();
    }
    return order;
}

} // namespace

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw AutodiffError("backward: loss must be a scalar, got shape " +
                            (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    }
    if (!loss.requires_grad()) return;

    auto order = topo_order(loss);
    for (TensorImpl* t : order) {
        if (t->node) t->grad.clear();
    }
    grad_buffer(*loss.impl())[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl* t = *it;
        if (t->node && !t->grad.empty()) t->node->backward(*t);
    }
}

Tensor grad_of_grad(const Tensor& output, const Tensor& wrt) {
    if (!output.defined() || output.numel() != 1) {
        throw AutodiffError("grad_of_grad: output must be a scalar");
    }
    if (!wrt.requires_grad()) {
        throw AutodiffError("grad_of_grad: differentiated input does not require grad");
    }
    auto order = topo_order(output);

    std::unordered_set<TensorImpl*> on_path{wrt.impl()};
    for (TensorImpl* t : order) {
        if (!t->node) continue;
        for (const auto& in : t->node->inputs) {
            if (on_path.count(in.impl())) {
                on_path.insert(t);
                break;
            }
        }
    }
    if (!on_path.count(output.impl())) return Tensor::zeros(wrt.shape());

    std::unordered_map<TensorImpl*, Tensor> grads;
    grads[output.impl()] = Tensor::full(output.shape(), 1.0);

    // The output tensor is re-wrapped so nodes can read its data and shape.
    std::unordered_map<TensorImpl*, Tensor> handles;
    for (TensorImpl* t : order) {
        if (!t->node) continue;
        for (const auto& in : t->node->inputs) handles.emplace(in.impl(), in);
    }
    handles.emplace(output.impl(), output);

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl* t = *it;
        if (!t->node || !on_path.count(t)) continue;
        auto g = grads.find(t);
        if (g == grads.end()) continue;
        const auto& inputs = t->node->inputs;
        std::vector<bool> need(inputs.size());
        for (std::size_t i = 0; i < inputs.size(); ++i) need[i] = on_path.count(inputs[i].impl()) > 0;
        auto parts = t->node->backward_graph(handles.at(t), g->second, need);
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            if (!need[i]) continue;
            auto [slot, fresh] = grads.try_emplace(inputs[i].impl(), parts[i]);
            if (!fresh) slot->second = ops::add(slot->second, parts[i]);
        }
    }
    auto found = grads.find(wrt.impl());
    return found == grads.end() ? Tensor::zeros(wrt.shape()) : found->second;
}

} // namespace pgfwi
