#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace tsd {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

// One entry of the computation record. Parents are the saved inputs; the
// backward function reads this node's grad and accumulates into theirs.
struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    std::vector<double>& grad_buffer();
};

}  // namespace detail

/// Dense row-major float64 tensor with an optional reverse-mode record.
///
/// Copies are shallow: two Tensor handles may refer to the same storage,
/// which is how model parameters are shared between the teacher and the
/// student branches. Stored values must be finite, with one exception:
/// -inf is accepted as the masked-logit sentinel consumed by softmax.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor vector(std::vector<double> values, bool requires_grad = false);
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                         bool requires_grad = false);

    bool defined() const noexcept { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    /// Size of `axis`; negative values count from the end.
    std::size_t dim(std::ptrdiff_t axis) const;
    std::size_t numel() const;

    std::span<const double> values() const;
    /// Direct write access, for parameter updates and test setup only.
    std::span<double> mutable_values();
    double item() const;
    double operator[](std::size_t flat_index) const { return values()[flat_index]; }

    bool requires_grad() const;
    Tensor& set_requires_grad(bool on);
    bool has_grad() const;
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    /// Same values, no history.
    Tensor detach() const;
    Tensor clone() const;

    /// Reverse pass from a scalar. Accumulates into leaf gradients.
    void backward() const;

    const char* op_name() const;
    bool shares_storage(const Tensor& other) const noexcept { return node_ == other.node_; }

    // Used by operation implementations to attach a record entry.
    using BackwardFn = std::function<void(detail::Node&)>;
    static Tensor from_op(Shape shape, std::vector<double> values, const char* op,
                          std::vector<Tensor> inputs, BackwardFn backward);
    detail::Node* node() const noexcept { return node_.get(); }

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;
};

/// Disables recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled() noexcept;

/// Throws NumericError if any value is NaN or +inf.
void check_values(std::span<const double> values, const char* context);

}  // namespace tsd
