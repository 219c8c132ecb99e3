#include "asa/tensor.hpp"

#include <numeric>
#include <sstream>

namespace asa {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? ", " : "") << shape[i];
    }
    os << ']';
    return os.str();
}

ShapeError::ShapeError(std::string_view op, const Shape& expected, const Shape& actual)
    : std::invalid_argument(std::string(op) + ": shape mismatch, expected " + shape_str(expected) + ", got " +
                            shape_str(actual)) {}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != data.size()) {
        throw ShapeError("Tensor: " + shape_str(shape) + " holds " + std::to_string(shape_numel(shape)) +
                         " values, got " + std::to_string(data.size()));
    }
    impl_ = std::make_shared<TensorImpl>();
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

std::size_t Tensor::dim(int axis) const {
    const int r = static_cast<int>(rank());
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) {
        throw std::out_of_range("Tensor::dim: axis " + std::to_string(axis) + " out of range for rank " +
                                std::to_string(r));
    }
    return impl_->shape[static_cast<std::size_t>(a)];
}

double Tensor::item() const {
    if (numel() != 1) {
        throw ShapeError("item", {}, shape());
    }
    return impl_->data[0];
}

std::vector<double> Tensor::grad() const {
    if (impl_->grad.empty()) {
        return std::vector<double>(impl_->data.size(), 0.0);
    }
    return impl_->grad;
}

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->data, false); }

Tensor Tensor::clone() const {
    Tensor t(impl_->shape, impl_->data, impl_->requires_grad);
    return t;
}

std::int64_t Tape::record(std::string_view op, std::vector<std::shared_ptr<TensorImpl>> inputs,
                          std::shared_ptr<TensorImpl> output, BackwardFn backward) {
    const auto id = static_cast<std::int64_t>(entries_.size());
    output->node_id = id;
    entries_.push_back(Entry{std::string(op), std::move(inputs), std::move(output), std::move(backward)});
    return id;
}

void Tape::backward(const Tensor& root) {
    if (!root.defined() || root.numel() != 1 || !root.shape().empty()) {
        throw ShapeError("backward", {}, root.defined() ? root.shape() : Shape{});
    }
    visits_.clear();
    TensorImpl& r = *root.impl();
    if (!r.requires_grad) {
        return;
    }
    r.accumulate_grad(0, 1.0);
    const std::int64_t start = r.node_id;
    if (start < 0 || start >= static_cast<std::int64_t>(entries_.size()) ||
        entries_[static_cast<std::size_t>(start)].output.get() != &r) {
        return;  // root is a leaf
    }
    for (std::int64_t i = start; i >= 0; --i) {
        Entry& e = entries_[static_cast<std::size_t>(i)];
        if (e.output->grad.empty()) {
            continue;
        }
        visits_.push_back(i);
        e.backward(*e.output);
    }
}

void Tape::clear() {
    for (auto& e : entries_) {
        e.output->node_id = -1;
    }
    entries_.clear();
    visits_.clear();
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

Tensor make_result(std::string_view op, Shape shape, std::vector<double> data,
                   const std::vector<const Tensor*>& inputs, std::function<void(TensorImpl&)> backward) {
    Tensor out(std::move(shape), std::move(data), false);
    Tape* tape = active_tape();
    if (tape == nullptr) {
        return out;
    }
    bool any = false;
    for (const Tensor* in : inputs) {
        any = any || in->requires_grad();
    }
    if (!any) {
        return out;
    }
    out.impl_->requires_grad = true;
    std::vector<std::shared_ptr<TensorImpl>> in_impls;
    in_impls.reserve(inputs.size());
    for (const Tensor* in : inputs) {
        in_impls.push_back(in->impl());
    }
    tape->record(op, std::move(in_impls), out.impl_, std::move(backward));
    return out;
}

}  // namespace asa
