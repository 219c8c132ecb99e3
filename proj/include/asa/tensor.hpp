#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace asa {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised when operands do not conform; the message names the op and both shapes.
class ShapeError : public std::invalid_argument {
public:
    ShapeError(std::string_view op, const Shape& expected, const Shape& actual);
    explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until a gradient reaches this node
    bool requires_grad = false;
    std::int64_t node_id = -1;  // tape entry that produced this value, -1 for leaves

    void accumulate_grad(std::size_t i, double g) {
        if (grad.empty()) {
            grad.assign(data.size(), 0.0);
        }
        grad[i] += g;
    }
    std::span<double> grad_buffer() {
        if (grad.empty()) {
            grad.assign(data.size(), 0.0);
        }
        return grad;
    }
};

/// Dense row-major f64 array with an optional gradient.
///
/// Copies are handles onto the same storage (parameters keep their identity
/// across the model and optimizer); `clone()` makes an independent copy.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    /// Extent of axis `axis`; negative values count from the back.
    std::size_t dim(int axis) const;
    std::size_t numel() const { return impl_->data.size(); }

    std::span<const double> data() const { return impl_->data; }
    std::span<double> mutable_data() { return impl_->data; }
    double operator[](std::size_t i) const { return impl_->data[i]; }
    double item() const;

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool flag) { impl_->requires_grad = flag; }
    bool has_grad() const { return !impl_->grad.empty(); }
    /// Gradient after backward; all zeros if none arrived.
    std::vector<double> grad() const;
    void zero_grad() { impl_->grad.clear(); }

    /// Same values, no gradient, not attached to any tape.
    Tensor detach() const;
    Tensor clone() const;

    const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

private:
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
    friend class Tape;
    friend Tensor make_result(std::string_view, Shape, std::vector<double>, const std::vector<const Tensor*>&,
                              std::function<void(TensorImpl&)>);

    std::shared_ptr<TensorImpl> impl_;
};

/// Ordered record of differentiable operations. Entries are appended in
/// execution order, so every input precedes its consumer.
class Tape {
public:
    using BackwardFn = std::function<void(TensorImpl& out)>;

    struct Entry {
        std::string op;
        std::vector<std::shared_ptr<TensorImpl>> inputs;
        std::shared_ptr<TensorImpl> output;
        BackwardFn backward;
    };

    std::int64_t record(std::string_view op, std::vector<std::shared_ptr<TensorImpl>> inputs,
                        std::shared_ptr<TensorImpl> output, BackwardFn backward);

    /// Seeds d(root)/d(root) = 1 and replays entries in reverse, accumulating
    /// gradients into every requires_grad tensor. Root must be a scalar.
    void backward(const Tensor& root);

    std::size_t size() const { return entries_.size(); }
    const std::vector<Entry>& entries() const { return entries_; }
    /// Entries whose backward ran during the last `backward` call, in visit order.
    const std::vector<std::int64_t>& last_visit_order() const { return visits_; }
    void clear();

private:
    std::vector<Entry> entries_;
    std::vector<std::int64_t> visits_;
};

/// Makes `tape` the recording target on this thread for the scope lifetime.
/// Without an active scope operations evaluate but record nothing.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

Tape* active_tape();

/// Suspends recording for the scope lifetime.
class NoGradScope {
public:
    NoGradScope();
    ~NoGradScope();
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

private:
    Tape* previous_;
};

/// Builds an op result. When a tape is active and any input requires a
/// gradient, the result requires one too and `backward` is recorded.
Tensor make_result(std::string_view op, Shape shape, std::vector<double> data,
                   const std::vector<const Tensor*>& inputs, std::function<void(TensorImpl&)> backward);

}  // namespace asa
