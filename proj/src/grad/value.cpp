// SPDX-License-Identifier: Apache-2.0
#include "mssm/grad/value.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

namespace mssm::grad {

namespace {

std::atomic<std::uint64_t> g_next_id{1};

std::shared_ptr<Node> new_node(Shape shape, std::vector<double> data, bool requires_grad) {
    auto node = std::make_shared<Node>();
    node->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->grad.assign(node->data.size(), 0.0);
    node->requires_grad = requires_grad;
    return node;
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

std::string shape_error_message(const std::string& op, const std::vector<Shape>& shapes, const std::string& detail) {
    std::ostringstream os;
    os << "shape mismatch in '" << op << "':";
    for (const auto& s : shapes) os << ' ' << shape_to_string(s);
    if (!detail.empty()) os << " (" << detail << ')';
    return os.str();
}

}  // namespace

ShapeError::ShapeError(const std::string& op, const std::vector<Shape>& shapes, const std::string& detail)
    : GradError(shape_error_message(op, shapes, detail)) {}

UnknownOpError::UnknownOpError(const std::string& tag) : GradError("unknown op tag '" + tag + "'") {}

Value Value::zeros(Shape shape, bool requires_grad) {
    auto n = shape_size(shape);
    return Value(new_node(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Value Value::full(Shape shape, double fill, bool requires_grad) {
    auto n = shape_size(shape);
    return Value(new_node(std::move(shape), std::vector<double>(n, fill), requires_grad));
}

Value Value::from(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_size(shape) != data.size()) {
        throw ShapeError("from", {shape}, "payload length " + std::to_string(data.size()));
    }
    return Value(new_node(std::move(shape), std::move(data), requires_grad));
}

Value Value::scalar(double v, bool requires_grad) { return from({1}, {v}, requires_grad); }

Value Value::vector(std::vector<double> data, bool requires_grad) {
    Shape s{data.size()};
    return from(std::move(s), std::move(data), requires_grad);
}

double Value::item() const {
    if (size() != 1) throw ShapeError("item", {shape()}, "not a scalar");
    return node_->data[0];
}

void Value::zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

Value Value::detach() const { return Value(new_node(node_->shape, node_->data, false)); }

Value make_result(const char* op, Shape shape, std::vector<double> data, std::vector<Value> parents,
                  std::function<void(Node&)> backward_fn) {
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    auto node = new_node(std::move(shape), std::move(data), any);
    node->op = op;
    if (any) {
        node->parents.reserve(parents.size());
        for (auto& p : parents) node->parents.push_back(p.node_ptr());
        node->backward_fn = std::move(backward_fn);
    }
    return Value(std::move(node));
}

void backward(const Value& root) {
    if (root.size() != 1) throw ShapeError("backward", {root.shape()}, "root must be scalar");
    if (!root.requires_grad()) return;

    // Iterative post-order DFS restricted to nodes that require grad.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    seen.insert(root.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* n : order) {
        if (n->backward_fn) std::fill(n->grad.begin(), n->grad.end(), 0.0);
    }
    root.node()->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
}

}  // namespace mssm::grad
