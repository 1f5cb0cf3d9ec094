#include "tsd/numeric/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

#include "tsd/numeric/errors.hpp"

namespace tsd {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

void check_values(std::span<const double> values, const char* context) {
    for (double v : values) {
        if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
            throw NumericError(std::string("non-finite value produced by ") + context);
        }
    }
}

std::vector<double>& detail::Node::grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
}

Tensor::Tensor(Shape shape, double fill, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
    node_->data.assign(shape_numel(shape), fill);
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
    check_values(node_->data, "tensor construction");
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
    if (shape_numel(shape) != values.size()) {
        throw DimensionError("tensor of shape " + shape_string(shape) + " given " +
                             std::to_string(values.size()) + " values");
    }
    check_values(values, "tensor construction");
    node_->shape = std::move(shape);
    node_->data = std::move(values);
    node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Tensor(Shape{}, std::vector<double>{value}, requires_grad);
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
    Shape shape{values.size()};
    return Tensor(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows,
                      bool requires_grad) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> values;
    values.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("ragged matrix literal");
        values.insert(values.end(), row.begin(), row.end());
    }
    return Tensor(Shape{r, c}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const {
    if (!node_) throw ContractError("use of an undefined tensor");
    return node_->shape;
}

std::size_t Tensor::dim(std::ptrdiff_t axis) const {
    const auto r = static_cast<std::ptrdiff_t>(rank());
    const std::ptrdiff_t a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                             shape_string(shape()));
    }
    return shape()[static_cast<std::size_t>(a)];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::values() const {
    if (!node_) throw ContractError("use of an undefined tensor");
    return node_->data;
}

std::span<double> Tensor::mutable_values() {
    if (!node_) throw ContractError("use of an undefined tensor");
    return node_->data;
}

double Tensor::item() const {
    if (numel() != 1) {
        throw DimensionError("item() on tensor of shape " + shape_string(shape()));
    }
    return node_->data[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
    if (!node_) throw ContractError("use of an undefined tensor");
    node_->requires_grad = on;
    return *this;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
    if (!has_grad()) throw ContractError("tensor has no gradient");
    return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
    if (!node_) throw ContractError("use of an undefined tensor");
    return node_->grad_buffer();
}

void Tensor::zero_grad() {
    if (node_) node_->grad.clear();
}

Tensor Tensor::detach() const {
    auto n = std::make_shared<detail::Node>();
    n->shape = shape();
    n->data = node_->data;
    n->op = "detach";
    return Tensor(std::move(n));
}

Tensor Tensor::clone() const {
    Tensor t = detach();
    t.node_->requires_grad = node_->requires_grad;
    t.node_->op = "leaf";
    return t;
}

const char* Tensor::op_name() const { return node_ ? node_->op : "undefined"; }

Tensor Tensor::from_op(Shape shape, std::vector<double> values, const char* op,
                       std::vector<Tensor> inputs, BackwardFn backward) {
    check_values(values, op);
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->data = std::move(values);
    n->op = op;
    if (g_grad_enabled) {
        bool any = false;
        for (const Tensor& in : inputs) any = any || in.requires_grad();
        if (any) {
            n->requires_grad = true;
            n->parents.reserve(inputs.size());
            for (Tensor& in : inputs) n->parents.push_back(std::move(in.node_));
            n->backward_fn = std::move(backward);
        }
    }
    return Tensor(std::move(n));
}

void Tensor::backward() const {
    if (!node_ || node_->data.size() != 1) {
        throw ContractError("backward() requires a scalar loss, got shape " +
                            (node_ ? shape_string(node_->shape) : std::string("undefined")));
    }
    if (!node_->requires_grad) return;

    // Iterative post-order DFS gives a topological order of the record.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [cur, next] = stack.back();
        if (next < cur->parents.size()) {
            detail::Node* p = cur->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(cur);
            stack.pop_back();
        }
    }

    for (detail::Node* n : order) {
        if (n->backward_fn) n->grad.clear();
    }
    node_->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() noexcept { return g_grad_enabled; }

}  // namespace tsd
