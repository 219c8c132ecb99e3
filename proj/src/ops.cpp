#include "asa/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace asa {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

using ImplPtr = std::shared_ptr<TensorImpl>;

bool is_scalar(const Tensor& t) { return t.rank() == 0; }

void require_rank_at_least(std::string_view op, const Tensor& t, std::size_t r) {
    if (t.rank() < r) {
        throw ShapeError(std::string(op) + ": expected rank >= " + std::to_string(r) + ", got shape " +
                         shape_str(t.shape()));
    }
}

std::size_t last_dim(const Tensor& t) { return t.shape().back(); }

// Shared shape logic for elementwise binary ops with scalar broadcast.
Shape binary_shape(std::string_view op, const Tensor& a, const Tensor& b) {
    if (a.shape() == b.shape()) {
        return a.shape();
    }
    if (is_scalar(a)) {
        return b.shape();
    }
    if (is_scalar(b)) {
        return a.shape();
    }
    throw ShapeError(op, a.shape(), b.shape());
}

template <class Fwd, class DA, class DB>
Tensor elementwise_binary(std::string_view op, const Tensor& a, const Tensor& b, Fwd fwd, DA da, DB db) {
    Shape shape = binary_shape(op, a, b);
    const std::size_t n = shape_numel(shape);
    const bool sa = is_scalar(a) && !is_scalar(b);
    const bool sb = is_scalar(b) && !is_scalar(a);
    std::vector<double> out(n);
    const auto ad = a.data();
    const auto bd = b.data();
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = fwd(ad[sa ? 0 : i], bd[sb ? 0 : i]);
    }
    ImplPtr ai = a.impl();
    ImplPtr bi = b.impl();
    return make_result(op, std::move(shape), std::move(out), {&a, &b}, [ai, bi, sa, sb, da, db](TensorImpl& o) {
        const std::size_t m = o.data.size();
        if (ai->requires_grad) {
            auto g = ai->grad_buffer();
            for (std::size_t i = 0; i < m; ++i) {
                g[sa ? 0 : i] += o.grad[i] * da(ai->data[sa ? 0 : i], bi->data[sb ? 0 : i]);
            }
        }
        if (bi->requires_grad) {
            auto g = bi->grad_buffer();
            for (std::size_t i = 0; i < m; ++i) {
                g[sb ? 0 : i] += o.grad[i] * db(ai->data[sa ? 0 : i], bi->data[sb ? 0 : i]);
            }
        }
    });
}

template <class Fwd, class Deriv>
Tensor elementwise_unary(std::string_view op, const Tensor& x, Fwd fwd, Deriv deriv) {
    const auto xd = x.data();
    std::vector<double> out(xd.size());
    for (std::size_t i = 0; i < xd.size(); ++i) {
        out[i] = fwd(xd[i]);
    }
    ImplPtr xi = x.impl();
    return make_result(op, x.shape(), std::move(out), {&x}, [xi, deriv](TensorImpl& o) {
        if (!xi->requires_grad) {
            return;
        }
        auto g = xi->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += o.grad[i] * deriv(xi->data[i], o.data[i]);
        }
    });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return elementwise_binary(
        "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return elementwise_binary(
        "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return elementwise_binary(
        "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double factor) {
    return elementwise_unary(
        "scale", a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
    return elementwise_unary(
        "add_scalar", a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor sigmoid(const Tensor& x) {
    return elementwise_unary(
        "sigmoid", x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor log(const Tensor& x) {
    return elementwise_unary(
        "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor gelu(const Tensor& x) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    return elementwise_unary(
        "gelu", x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
        [inv_sqrt_2pi](double v, double) {
            return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
        });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank_at_least("matmul", a, 2);
    require_rank_at_least("matmul", b, 2);
    const std::size_t m = a.dim(-2);
    const std::size_t k = a.dim(-1);
    if (b.dim(-2) != k) {
        Shape expected = b.shape();
        expected[expected.size() - 2] = k;
        throw ShapeError("matmul", expected, b.shape());
    }
    const std::size_t n = b.dim(-1);
    const bool shared_rhs = b.rank() == 2;
    if (!shared_rhs) {
        if (a.rank() != b.rank() || !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
            Shape expected(a.shape().begin(), a.shape().end() - 2);
            expected.push_back(k);
            expected.push_back(n);
            throw ShapeError("matmul", expected, b.shape());
        }
    }
    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    out_shape.push_back(n);
    std::vector<double> out(shape_numel(out_shape));
    const std::size_t batch = shared_rhs ? 1 : a.numel() / (m * k);
    const std::size_t rows = shared_rhs ? a.numel() / k : m;
    const auto ad = a.data();
    const auto bd = b.data();
    for (std::size_t s = 0; s < batch; ++s) {
        ConstMap A(ad.data() + s * rows * k, rows, k);
        ConstMap B(bd.data() + s * k * n, k, n);
        MutMap C(out.data() + s * rows * n, rows, n);
        C.noalias() = A * B;
    }
    ImplPtr ai = a.impl();
    ImplPtr bi = b.impl();
    return make_result("matmul", std::move(out_shape), std::move(out), {&a, &b},
                       [ai, bi, batch, rows, k, n](TensorImpl& o) {
                           for (std::size_t s = 0; s < batch; ++s) {
                               ConstMap G(o.grad.data() + s * rows * n, rows, n);
                               if (ai->requires_grad) {
                                   MutMap GA(ai->grad_buffer().data() + s * rows * k, rows, k);
                                   ConstMap B(bi->data.data() + s * k * n, k, n);
                                   GA.noalias() += G * B.transpose();
                               }
                               if (bi->requires_grad) {
                                   MutMap GB(bi->grad_buffer().data() + s * k * n, k, n);
                                   ConstMap A(ai->data.data() + s * rows * k, rows, k);
                                   GB.noalias() += A.transpose() * G;
                               }
                           }
                       });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    require_rank_at_least("add_bias", x, 1);
    if (bias.rank() != 1 || bias.dim(0) != last_dim(x)) {
        throw ShapeError("add_bias", Shape{last_dim(x)}, bias.shape());
    }
    const std::size_t n = last_dim(x);
    const auto xd = x.data();
    const auto bd = bias.data();
    std::vector<double> out(xd.size());
    for (std::size_t i = 0; i < xd.size(); ++i) {
        out[i] = xd[i] + bd[i % n];
    }
    ImplPtr xi = x.impl();
    ImplPtr bi = bias.impl();
    return make_result("add_bias", x.shape(), std::move(out), {&x, &bias}, [xi, bi, n](TensorImpl& o) {
        if (xi->requires_grad) {
            auto g = xi->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += o.grad[i];
            }
        }
        if (bi->requires_grad) {
            auto g = bi->grad_buffer();
            for (std::size_t i = 0; i < o.grad.size(); ++i) {
                g[i % n] += o.grad[i];
            }
        }
    });
}

Tensor transpose_last_two(const Tensor& x) {
    require_rank_at_least("transpose_last_two", x, 2);
    std::vector<std::size_t> axes(x.rank());
    for (std::size_t i = 0; i < axes.size(); ++i) {
        axes[i] = i;
    }
    std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
    return permute(x, axes);
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape", x.shape(), shape);
    }
    std::vector<double> out(x.data().begin(), x.data().end());
    ImplPtr xi = x.impl();
    return make_result("reshape", std::move(shape), std::move(out), {&x}, [xi](TensorImpl& o) {
        if (!xi->requires_grad) {
            return;
        }
        auto g = xi->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += o.grad[i];
        }
    });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
    const std::size_t r = x.rank();
    std::vector<bool> seen(r, false);
    if (axes.size() != r) {
        throw ShapeError("permute: " + std::to_string(axes.size()) + " axes for shape " + shape_str(x.shape()));
    }
    for (std::size_t a : axes) {
        if (a >= r || seen[a]) {
            throw ShapeError("permute: invalid axis list for shape " + shape_str(x.shape()));
        }
        seen[a] = true;
    }
    Shape out_shape(r);
    for (std::size_t i = 0; i < r; ++i) {
        out_shape[i] = x.shape()[axes[i]];
    }
    // in_stride[axes[i]] is the source stride for output axis i.
    std::vector<std::size_t> in_stride(r, 1);
    for (std::size_t i = r; i-- > 1;) {
        in_stride[i - 1] = in_stride[i] * x.shape()[i];
    }
    const std::size_t n = x.numel();
    std::vector<std::size_t> src(n);
    std::vector<std::size_t> idx(r, 0);
    for (std::size_t flat = 0; flat < n; ++flat) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < r; ++i) {
            off += idx[i] * in_stride[axes[i]];
        }
        src[flat] = off;
        for (std::size_t i = r; i-- > 0;) {
            if (++idx[i] < out_shape[i]) {
                break;
            }
            idx[i] = 0;
        }
    }
    std::vector<double> out(n);
    const auto xd = x.data();
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = xd[src[i]];
    }
    ImplPtr xi = x.impl();
    return make_result("permute", std::move(out_shape), std::move(out), {&x},
                       [xi, src = std::move(src)](TensorImpl& o) {
                           if (!xi->requires_grad) {
                               return;
                           }
                           auto g = xi->grad_buffer();
                           for (std::size_t i = 0; i < src.size(); ++i) {
                               g[src[i]] += o.grad[i];
                           }
                       });
}

namespace {
// exp(x) rounds to exactly 0 below about -745.13; skipping the call avoids the
// libm underflow path, which masked attention entries hit constantly.
inline double exp_nonpositive(double x) { return x < -746.0 ? 0.0 : std::exp(x); }
}  // namespace

Tensor softmax(const Tensor& x) {
    require_rank_at_least("softmax", x, 1);
    const std::size_t c = last_dim(x);
    if (c == 0) {
        throw ShapeError("softmax: empty last axis in shape " + shape_str(x.shape()));
    }
    const std::size_t rows = x.numel() / c;
    const auto xd = x.data();
    std::vector<double> out(xd.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xd.data() + r * c;
        double* y = out.data() + r * c;
        const double mx = *std::max_element(in, in + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            y[j] = exp_nonpositive(in[j] - mx);
            z += y[j];
        }
        for (std::size_t j = 0; j < c; ++j) {
            y[j] /= z;
        }
    }
    ImplPtr xi = x.impl();
    return make_result("softmax", x.shape(), std::move(out), {&x}, [xi, rows, c](TensorImpl& o) {
        if (!xi->requires_grad) {
            return;
        }
        auto g = xi->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = o.data.data() + r * c;
            const double* gy = o.grad.data() + r * c;
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                dot += y[j] * gy[j];
            }
            for (std::size_t j = 0; j < c; ++j) {
                g[r * c + j] += y[j] * (gy[j] - dot);
            }
        }
    });
}

Tensor log_softmax(const Tensor& x) {
    require_rank_at_least("log_softmax", x, 1);
    const std::size_t c = last_dim(x);
    if (c == 0) {
        throw ShapeError("log_softmax: empty last axis in shape " + shape_str(x.shape()));
    }
    const std::size_t rows = x.numel() / c;
    const auto xd = x.data();
    std::vector<double> out(xd.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xd.data() + r * c;
        const double mx = *std::max_element(in, in + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            z += exp_nonpositive(in[j] - mx);
        }
        const double lse = mx + std::log(z);
        for (std::size_t j = 0; j < c; ++j) {
            out[r * c + j] = in[j] - lse;
        }
    }
    ImplPtr xi = x.impl();
    return make_result("log_softmax", x.shape(), std::move(out), {&x}, [xi, rows, c](TensorImpl& o) {
        if (!xi->requires_grad) {
            return;
        }
        auto g = xi->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = o.data.data() + r * c;
            const double* gy = o.grad.data() + r * c;
            double total = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                total += gy[j];
            }
            for (std::size_t j = 0; j < c; ++j) {
                g[r * c + j] += gy[j] - exp_nonpositive(y[j]) * total;
            }
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    require_rank_at_least("layer_norm", x, 1);
    const std::size_t c = last_dim(x);
    if (gamma.shape() != Shape{c}) {
        throw ShapeError("layer_norm(gamma)", Shape{c}, gamma.shape());
    }
    if (beta.shape() != Shape{c}) {
        throw ShapeError("layer_norm(beta)", Shape{c}, beta.shape());
    }
    const std::size_t rows = x.numel() / c;
    const auto xd = x.data();
    const auto gd = gamma.data();
    const auto bd = beta.data();
    std::vector<double> out(xd.size());
    std::vector<double> xhat(xd.size());
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xd.data() + r * c;
        double mu = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            mu += in[j];
        }
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            var += (in[j] - mu) * (in[j] - mu);
        }
        var /= static_cast<double>(c);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t j = 0; j < c; ++j) {
            const double h = (in[j] - mu) * is;
            xhat[r * c + j] = h;
            out[r * c + j] = h * gd[j] + bd[j];
        }
    }
    ImplPtr xi = x.impl();
    ImplPtr gi = gamma.impl();
    ImplPtr bi = beta.impl();
    return make_result("layer_norm", x.shape(), std::move(out), {&x, &gamma, &beta},
                       [xi, gi, bi, rows, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](TensorImpl& o) {
                           const double inv_c = 1.0 / static_cast<double>(c);
                           for (std::size_t r = 0; r < rows; ++r) {
                               const double* gy = o.grad.data() + r * c;
                               const double* h = xhat.data() + r * c;
                               if (gi->requires_grad) {
                                   auto gg = gi->grad_buffer();
                                   for (std::size_t j = 0; j < c; ++j) {
                                       gg[j] += gy[j] * h[j];
                                   }
                               }
                               if (bi->requires_grad) {
                                   auto gb = bi->grad_buffer();
                                   for (std::size_t j = 0; j < c; ++j) {
                                       gb[j] += gy[j];
                                   }
                               }
                               if (xi->requires_grad) {
                                   auto gx = xi->grad_buffer();
                                   double s1 = 0.0;
                                   double s2 = 0.0;
                                   for (std::size_t j = 0; j < c; ++j) {
                                       const double dh = gy[j] * gi->data[j];
                                       s1 += dh;
                                       s2 += dh * h[j];
                                   }
                                   for (std::size_t j = 0; j < c; ++j) {
                                       const double dh = gy[j] * gi->data[j];
                                       gx[r * c + j] += inv_std[r] * (dh - inv_c * s1 - h[j] * inv_c * s2);
                                   }
                               }
                           }
                       });
}

Tensor embedding(const Tensor& table, const std::vector<int>& ids, const Shape& ids_shape) {
    if (table.rank() != 2) {
        throw ShapeError("embedding: table must be rank 2, got " + shape_str(table.shape()));
    }
    if (shape_numel(ids_shape) != ids.size()) {
        throw ShapeError("embedding(ids)", ids_shape, Shape{ids.size()});
    }
    const std::size_t v = table.dim(0);
    const std::size_t d = table.dim(1);
    std::vector<double> out(ids.size() * d);
    const auto td = table.data();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
            throw std::out_of_range("embedding: id " + std::to_string(ids[i]) + " outside vocabulary of " +
                                    std::to_string(v));
        }
        std::copy_n(td.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
    }
    Shape out_shape = ids_shape;
    out_shape.push_back(d);
    ImplPtr ti = table.impl();
    return make_result("embedding", std::move(out_shape), std::move(out), {&table}, [ti, ids, d](TensorImpl& o) {
        if (!ti->requires_grad) {
            return;
        }
        auto g = ti->grad_buffer();
        for (std::size_t i = 0; i < ids.size(); ++i) {
            const std::size_t row = static_cast<std::size_t>(ids[i]) * d;
            for (std::size_t j = 0; j < d; ++j) {
                g[row + j] += o.grad[i * d + j];
            }
        }
    });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) {
        throw ShapeError("concat: no inputs");
    }
    const Tensor& first = parts.front();
    const int r = static_cast<int>(first.rank());
    const int ax = axis < 0 ? axis + r : axis;
    if (ax < 0 || ax >= r) {
        throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " + shape_str(first.shape()));
    }
    const auto a = static_cast<std::size_t>(ax);
    Shape out_shape = first.shape();
    out_shape[a] = 0;
    for (const Tensor& p : parts) {
        Shape expected = first.shape();
        expected[a] = p.shape().size() == first.shape().size() ? p.shape()[a] : 0;
        if (p.shape() != expected) {
            throw ShapeError("concat", expected, p.shape());
        }
        out_shape[a] += p.shape()[a];
    }
    std::size_t outer = 1;
    for (std::size_t i = 0; i < a; ++i) {
        outer *= out_shape[i];
    }
    std::size_t inner = 1;
    for (std::size_t i = a + 1; i < out_shape.size(); ++i) {
        inner *= out_shape[i];
    }
    std::vector<double> out(shape_numel(out_shape));
    std::vector<std::size_t> widths;
    std::size_t total_w = out_shape[a] * inner;
    std::size_t col = 0;
    for (const Tensor& p : parts) {
        const std::size_t w = p.shape()[a] * inner;
        widths.push_back(w);
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(p.data().data() + o * w, w, out.data() + o * total_w + col);
        }
        col += w;
    }
    std::vector<ImplPtr> impls;
    std::vector<const Tensor*> ptrs;
    for (const Tensor& p : parts) {
        impls.push_back(p.impl());
        ptrs.push_back(&p);
    }
    return make_result("concat", std::move(out_shape), std::move(out), ptrs,
                       [impls, widths, outer, total_w](TensorImpl& o) {
                           std::size_t col = 0;
                           for (std::size_t k = 0; k < impls.size(); ++k) {
                               const std::size_t w = widths[k];
                               if (impls[k]->requires_grad) {
                                   auto g = impls[k]->grad_buffer();
                                   for (std::size_t r = 0; r < outer; ++r) {
                                       for (std::size_t j = 0; j < w; ++j) {
                                           g[r * w + j] += o.grad[r * total_w + col + j];
                                       }
                                   }
                               }
                               col += w;
                           }
                       });
}

Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end) {
    const int r = static_cast<int>(x.rank());
    const int ax = axis < 0 ? axis + r : axis;
    if (ax < 0 || ax >= r) {
        throw ShapeError("slice: axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
    }
    const auto a = static_cast<std::size_t>(ax);
    if (begin > end || end > x.shape()[a]) {
        throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for axis extent " + std::to_string(x.shape()[a]));
    }
    Shape out_shape = x.shape();
    out_shape[a] = end - begin;
    std::size_t outer = 1;
    for (std::size_t i = 0; i < a; ++i) {
        outer *= out_shape[i];
    }
    std::size_t inner = 1;
    for (std::size_t i = a + 1; i < out_shape.size(); ++i) {
        inner *= out_shape[i];
    }
    const std::size_t in_w = x.shape()[a] * inner;
    const std::size_t out_w = (end - begin) * inner;
    const std::size_t off = begin * inner;
    std::vector<double> out(outer * out_w);
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(x.data().data() + o * in_w + off, out_w, out.data() + o * out_w);
    }
    ImplPtr xi = x.impl();
    return make_result("slice", std::move(out_shape), std::move(out), {&x},
                       [xi, outer, in_w, out_w, off](TensorImpl& o) {
                           if (!xi->requires_grad) {
                               return;
                           }
                           auto g = xi->grad_buffer();
                           for (std::size_t r = 0; r < outer; ++r) {
                               for (std::size_t j = 0; j < out_w; ++j) {
                                   g[r * in_w + off + j] += o.grad[r * out_w + j];
                               }
                           }
                       });
}

Tensor take_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
    require_rank_at_least("take_rows", x, 1);
    const std::size_t n = x.dim(0);
    const std::size_t w = x.numel() / std::max<std::size_t>(n, 1);
    Shape out_shape = x.shape();
    out_shape[0] = rows.size();
    std::vector<double> out(rows.size() * w);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= n) {
            throw std::out_of_range("take_rows: row " + std::to_string(rows[i]) + " of " + std::to_string(n));
        }
        std::copy_n(x.data().data() + rows[i] * w, w, out.data() + i * w);
    }
    ImplPtr xi = x.impl();
    return make_result("take_rows", std::move(out_shape), std::move(out), {&x}, [xi, rows, w](TensorImpl& o) {
        if (!xi->requires_grad) {
            return;
        }
        auto g = xi->grad_buffer();
        for (std::size_t i = 0; i < rows.size(); ++i) {
            for (std::size_t j = 0; j < w; ++j) {
                g[rows[i] * w + j] += o.grad[i * w + j];
            }
        }
    });
}

Tensor gather_last(const Tensor& x, const std::vector<int>& index) {
    require_rank_at_least("gather_last", x, 1);
    const std::size_t c = last_dim(x);
    const std::size_t rows = x.numel() / std::max<std::size_t>(c, 1);
    if (index.size() != rows) {
        throw ShapeError("gather_last(index)", Shape{rows}, Shape{index.size()});
    }
    std::vector<double> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        if (index[r] < 0 || static_cast<std::size_t>(index[r]) >= c) {
            throw std::out_of_range("gather_last: index " + std::to_string(index[r]) + " outside [0, " +
                                    std::to_string(c) + ")");
        }
        out[r] = x.data()[r * c + static_cast<std::size_t>(index[r])];
    }
    Shape out_shape(x.shape().begin(), x.shape().end() - 1);
    ImplPtr xi = x.impl();
    return make_result("gather_last", std::move(out_shape), std::move(out), {&x}, [xi, index, c](TensorImpl& o) {
        if (!xi->requires_grad) {
            return;
        }
        auto g = xi->grad_buffer();
        for (std::size_t r = 0; r < index.size(); ++r) {
            g[r * c + static_cast<std::size_t>(index[r])] += o.grad[r];
        }
    });
}

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) {
        s += v;
    }
    ImplPtr xi = x.impl();
    return make_result("sum", {}, {s}, {&x}, [xi](TensorImpl& o) {
        if (!xi->requires_grad) {
            return;
        }
        auto g = xi->grad_buffer();
        for (double& v : g) {
            v += o.grad[0];
        }
    });
}

Tensor mean(const Tensor& x) {
    if (x.numel() == 0) {
        throw ShapeError("mean: empty tensor " + shape_str(x.shape()));
    }
    return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum_last(const Tensor& x) {
    require_rank_at_least("sum_last", x, 1);
    const std::size_t c = last_dim(x);
    const std::size_t rows = c == 0 ? 0 : x.numel() / c;
    std::vector<double> out(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < c; ++j) {
            out[r] += x.data()[r * c + j];
        }
    }
    Shape out_shape(x.shape().begin(), x.shape().end() - 1);
    ImplPtr xi = x.impl();
    return make_result("sum_last", std::move(out_shape), std::move(out), {&x}, [xi, c](TensorImpl& o) {
        if (!xi->requires_grad) {
            return;
        }
        auto g = xi->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += o.grad[i / c];
        }
    });
}

Tensor add_head_bias(const Tensor& scores, const Tensor& bias) {
    if (scores.rank() != 4) {
        throw ShapeError("add_head_bias: scores must be [B, H, L, L], got " + shape_str(scores.shape()));
    }
    const std::size_t b = scores.dim(0);
    const std::size_t h = scores.dim(1);
    const std::size_t lq = scores.dim(2);
    const std::size_t lk = scores.dim(3);
    if (bias.shape() != Shape{b, lq, lk}) {
        throw ShapeError("add_head_bias", Shape{b, lq, lk}, bias.shape());
    }
    const std::size_t plane = lq * lk;
    std::vector<double> out(scores.numel());
    const auto sd = scores.data();
    const auto bd = bias.data();
    for (std::size_t bi = 0; bi < b; ++bi) {
        for (std::size_t hi = 0; hi < h; ++hi) {
            const std::size_t base = (bi * h + hi) * plane;
            for (std::size_t j = 0; j < plane; ++j) {
                out[base + j] = sd[base + j] + bd[bi * plane + j];
            }
        }
    }
    ImplPtr si = scores.impl();
    ImplPtr bi_ = bias.impl();
    return make_result("add_head_bias", scores.shape(), std::move(out), {&scores, &bias},
                       [si, bi_, b, h, plane](TensorImpl& o) {
                           if (si->requires_grad) {
                               auto g = si->grad_buffer();
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                   g[i] += o.grad[i];
                               }
                           }
                           if (bi_->requires_grad) {
                               auto g = bi_->grad_buffer();
                               for (std::size_t x = 0; x < b; ++x) {
                                   for (std::size_t y = 0; y < h; ++y) {
                                       const std::size_t base = (x * h + y) * plane;
                                       for (std::size_t j = 0; j < plane; ++j) {
                                           g[x * plane + j] += o.grad[base + j];
                                       }
                                   }
                               }
                           }
                       });
}

Tensor grad_reverse(const Tensor& x, double lambda) {
    std::vector<double> out(x.data().begin(), x.data().end());
    ImplPtr xi = x.impl();
    return make_result("grad_reverse", x.shape(), std::move(out), {&x}, [xi, lambda](TensorImpl& o) {
        if (!xi->requires_grad) {
            return;
        }
        auto g = xi->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += -lambda * o.grad[i];
        }
    });
}

Tensor binary_concrete(const Tensor& logits, double temp, Rng& rng, bool hard) {
    if (!(temp > 0.0)) {
        throw std::invalid_argument("binary_concrete: temperature must be positive, got " + std::to_string(temp));
    }
    const auto ld = logits.data();
    std::vector<double> soft(ld.size());
    std::vector<double> out(ld.size());
    for (std::size_t i = 0; i < ld.size(); ++i) {
        const double u = rng.uniform();
        const double noise = std::log(u / (1.0 - u));
        soft[i] = 1.0 / (1.0 + std::exp(-(ld[i] + noise) / temp));
        out[i] = hard ? (soft[i] > 0.5 ? 1.0 : 0.0) : soft[i];
    }
    ImplPtr li = logits.impl();
    return make_result(hard ? "binary_concrete_hard" : "binary_concrete", logits.shape(), std::move(out), {&logits},
                       [li, temp, soft = std::move(soft)](TensorImpl& o) {
                           if (!li->requires_grad) {
                               return;
                           }
                           auto g = li->grad_buffer();
                           for (std::size_t i = 0; i < g.size(); ++i) {
                               g[i] += o.grad[i] * soft[i] * (1.0 - soft[i]) / temp;
                           }
                       });
}

Tensor dropout(const Tensor& x, double p, Rng& rng) {
    if (p <= 0.0) {
        return x;
    }
    if (p >= 1.0) {
        throw std::invalid_argument("dropout: probability must be < 1");
    }
    std::vector<double> keep(x.numel());
    for (double& k : keep) {
        k = rng.uniform() < p ? 0.0 : 1.0 / (1.0 - p);
    }
    return mul(x, Tensor(x.shape(), std::move(keep)));
}

}  // namespace asa
