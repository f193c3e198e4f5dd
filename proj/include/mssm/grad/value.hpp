// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mssm::grad {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

class GradError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when operand shapes are incompatible for an op; the message names
/// the op tag and every offending shape.
class ShapeError : public GradError {
public:
    ShapeError(const std::string& op, const std::vector<Shape>& shapes, const std::string& detail = "");
};

class UnknownOpError : public GradError {
public:
    explicit UnknownOpError(const std::string& tag);
};

struct Node {
    std::uint64_t id = 0;
    const char* op = "leaf";
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void(Node&)> backward_fn;
};

/// Handle to a node of the differentiation graph. Copies share the node.
class Value {
public:
    Value() = default;
    explicit Value(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Value zeros(Shape shape, bool requires_grad = false);
    static Value full(Shape shape, double fill, bool requires_grad = false);
    static Value from(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Value scalar(double v, bool requires_grad = false);
    static Value vector(std::vector<double> data, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    std::uint64_t id() const { return node_->id; }
    const char* op() const { return node_->op; }
    const Shape& shape() const { return node_->shape; }
    std::size_t size() const { return node_->data.size(); }
    std::size_t rank() const { return node_->shape.size(); }

    std::span<const double> data() const { return node_->data; }
    std::span<double> mutable_data() { return node_->data; }
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> mutable_grad() { return node_->grad; }
    double item() const;
    double operator[](std::size_t i) const { return node_->data[i]; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    bool is_leaf() const { return !node_->backward_fn; }
    void zero_grad();

    /// Detached copy of the payload (new leaf, requires-grad off).
    Value detach() const;

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& node_ptr() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

/// Creates a graph node; `parents` that do not require grad are kept only for
/// bookkeeping and never receive gradient.
Value make_result(const char* op, Shape shape, std::vector<double> data,
                  std::vector<Value> parents, std::function<void(Node&)> backward_fn);

/// Accumulates d(root)/d(value) into every reachable value with requires-grad.
/// Intermediate gradients are recomputed from scratch on every call; leaf
/// gradients accumulate across calls until zero_grad().
void backward(const Value& root);

}  // namespace mssm::grad
