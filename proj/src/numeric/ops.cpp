#include "tsd/numeric/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "tsd/numeric/errors.hpp"

namespace tsd {

namespace {

using detail::Node;

std::size_t normalize_axis(std::ptrdiff_t axis, std::size_t rank) {
    const auto r = static_cast<std::ptrdiff_t>(rank);
    const std::ptrdiff_t a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " +
                             std::to_string(rank));
    }
    return static_cast<std::size_t>(a);
}

// Calls `fn(grad_buffer)` for parent `k` when it is being differentiated.
template <class Fn>
void with_parent_grad(Node& self, std::size_t k, Fn&& fn) {
    Node& p = *self.parents[k];
    if (p.requires_grad) fn(p.grad_buffer());
}

// C[m×n] += A[m×k] · B[k×n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        const double* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m×n] += A[m×k] · B[n×k]ᵀ
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
            c[i * n + j] += s;
        }
    }
}

// C[m×n] += A[k×m]ᵀ · B[k×n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t k, std::size_t m,
             std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = a + p * m;
        const double* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

struct MatmulPlan {
    std::size_t batch = 1, m = 0, k = 0, n = 0;
    bool b_batched = false;
    Shape out_shape;
};

MatmulPlan plan_matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
    MatmulPlan plan;
    if (a.rank() < 2) {
        throw DimensionError("matmul: left operand must have rank >= 2, got " +
                             shape_string(a.shape()));
    }
    if (b.rank() == 2) {
        plan.k = a.dim(-1);
        const std::size_t bk = transpose_b ? b.dim(1) : b.dim(0);
        plan.n = transpose_b ? b.dim(0) : b.dim(1);
        if (bk != plan.k) {
            throw DimensionError("matmul: inner dimensions disagree, " + shape_string(a.shape()) +
                                 " vs " + shape_string(b.shape()));
        }
        plan.m = a.numel() / plan.k;
        plan.out_shape = a.shape();
        plan.out_shape.back() = plan.n;
    } else if (b.rank() == 3 && a.rank() == 3) {
        plan.batch = a.dim(0);
        plan.m = a.dim(1);
        plan.k = a.dim(2);
        const std::size_t bk = transpose_b ? b.dim(2) : b.dim(1);
        plan.n = transpose_b ? b.dim(1) : b.dim(2);
        if (b.dim(0) != plan.batch || bk != plan.k) {
            throw DimensionError("matmul: batched operands disagree, " + shape_string(a.shape()) +
                                 " vs " + shape_string(b.shape()));
        }
        plan.b_batched = true;
        plan.out_shape = {plan.batch, plan.m, plan.n};
    } else {
        throw DimensionError("matmul: unsupported operand ranks " + shape_string(a.shape()) +
                             " and " + shape_string(b.shape()));
    }
    return plan;
}

Tensor matmul_impl(const Tensor& a, const Tensor& b, bool transpose_b) {
    const MatmulPlan plan = plan_matmul(a, b, transpose_b);
    const std::size_t a_step = plan.m * plan.k;
    const std::size_t b_step = plan.b_batched ? plan.k * plan.n : 0;
    const std::size_t c_step = plan.m * plan.n;
    std::vector<double> out(plan.batch * c_step, 0.0);
    const double* ad = a.values().data();
    const double* bd = b.values().data();
    for (std::size_t s = 0; s < plan.batch; ++s) {
        if (transpose_b) {
            gemm_nt(ad + s * a_step, bd + s * b_step, out.data() + s * c_step, plan.m, plan.k,
                    plan.n);
        } else {
            gemm_nn(ad + s * a_step, bd + s * b_step, out.data() + s * c_step, plan.m, plan.k,
                    plan.n);
        }
    }
    return Tensor::from_op(
        plan.out_shape, std::move(out), transpose_b ? "matmul_transposed" : "matmul", {a, b},
        [plan, a_step, b_step, c_step, transpose_b](Node& self) {
            const Node& na = *self.parents[0];
            const Node& nb = *self.parents[1];
            const double* dc = self.grad.data();
            with_parent_grad(self, 0, [&](std::vector<double>& ga) {
                for (std::size_t s = 0; s < plan.batch; ++s) {
                    if (transpose_b) {
                        gemm_nn(dc + s * c_step, nb.data.data() + s * b_step,
                                ga.data() + s * a_step, plan.m, plan.n, plan.k);
                    } else {
                        gemm_nt(dc + s * c_step, nb.data.data() + s * b_step,
                                ga.data() + s * a_step, plan.m, plan.n, plan.k);
                    }
                }
            });
            with_parent_grad(self, 1, [&](std::vector<double>& gb) {
                for (std::size_t s = 0; s < plan.batch; ++s) {
                    if (transpose_b) {
                        gemm_tn(dc + s * c_step, na.data.data() + s * a_step,
                                gb.data() + s * b_step, plan.m, plan.n, plan.k);
                    } else {
                        gemm_tn(na.data.data() + s * a_step, dc + s * c_step,
                                gb.data() + s * b_step, plan.m, plan.k, plan.n);
                    }
                }
            });
        });
}

// Inner size for trailing broadcast of b over a.
std::size_t broadcast_inner(const Tensor& a, const Tensor& b, const char* op) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    if (bs.size() > as.size() || !std::equal(bs.rbegin(), bs.rend(), as.rbegin())) {
        throw DimensionError(std::string(op) + ": cannot broadcast " + shape_string(bs) +
                             " onto " + shape_string(as));
    }
    return b.numel();
}

enum class BinaryKind { Add, Sub, Mul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, const char* op) {
    const std::size_t inner = broadcast_inner(a, b, op);
    const std::size_t total = a.numel();
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<double> out(total);
    for (std::size_t i = 0; i < total; ++i) {
        const double x = av[i];
        const double y = bv[inner ? i % inner : 0];
        switch (kind) {
            case BinaryKind::Add: out[i] = x + y; break;
            case BinaryKind::Sub: out[i] = x - y; break;
            case BinaryKind::Mul: out[i] = x * y; break;
        }
    }
    return Tensor::from_op(a.shape(), std::move(out), op, {a, b},
                           [inner, total, kind](Node& self) {
                               const auto& g = self.grad;
                               const auto& ad = self.parents[0]->data;
                               const auto& bd = self.parents[1]->data;
                               with_parent_grad(self, 0, [&](std::vector<double>& ga) {
                                   for (std::size_t i = 0; i < total; ++i) {
                                       ga[i] += kind == BinaryKind::Mul ? g[i] * bd[i % inner]
                                                                        : g[i];
                                   }
                               });
                               with_parent_grad(self, 1, [&](std::vector<double>& gb) {
                                   for (std::size_t i = 0; i < total; ++i) {
                                       double d = g[i];
                                       if (kind == BinaryKind::Sub) d = -d;
                                       if (kind == BinaryKind::Mul) d *= ad[i];
                                       gb[i % inner] += d;
                                   }
                               });
                           });
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, const char* op, Fwd fwd, Deriv deriv) {
    const auto xv = x.values();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
    return Tensor::from_op(x.shape(), std::move(out), op, {x}, [deriv](Node& self) {
        with_parent_grad(self, 0, [&](std::vector<double>& gx) {
            const auto& xd = self.parents[0]->data;
            for (std::size_t i = 0; i < gx.size(); ++i) {
                gx[i] += self.grad[i] * deriv(xd[i], self.data[i]);
            }
        });
    });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) { return matmul_impl(a, b, false); }
Tensor matmul_transposed(const Tensor& a, const Tensor& b) { return matmul_impl(a, b, true); }

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::Mul, "mul"); }

Tensor scale(const Tensor& x, double factor) {
    return unary(
        x, "scale", [factor](double v) { return v * factor; },
        [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
    return unary(
        x, "add_scalar", [value](double v) { return v + value; },
        [](double, double) { return 1.0; });
}

Tensor gelu(const Tensor& x) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    return unary(
        x, "gelu", [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
        [inv_sqrt_2pi](double v, double) {
            return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) +
                   v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
        });
}

Tensor sigmoid(const Tensor& x) {
    return unary(
        x, "sigmoid",
        [](double v) {
            if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor softmax(const Tensor& x, std::ptrdiff_t axis) {
    const std::size_t ax = normalize_axis(axis, x.rank());
    const Shape& s = x.shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
    for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t n = s[ax];
    const auto xv = x.values();
    std::vector<double> out(xv.size());
    constexpr double neg_inf = -std::numeric_limits<double>::infinity();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t j = 0; j < inner; ++j) {
            const std::size_t base = o * n * inner + j;
            double mx = neg_inf;
            for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, xv[base + i * inner]);
            if (mx == neg_inf) {
                throw DegenerateSliceError("softmax over a slice with every entry -inf");
            }
            double total = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double e = std::exp(xv[base + i * inner] - mx);
                out[base + i * inner] = e;
                total += e;
            }
            for (std::size_t i = 0; i < n; ++i) out[base + i * inner] /= total;
        }
    }
    return Tensor::from_op(s, std::move(out), "softmax", {x}, [outer, inner, n](Node& self) {
        with_parent_grad(self, 0, [&](std::vector<double>& gx) {
            const auto& y = self.data;
            const auto& g = self.grad;
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t j = 0; j < inner; ++j) {
                    const std::size_t base = o * n * inner + j;
                    double dot = 0.0;
                    for (std::size_t i = 0; i < n; ++i) {
                        dot += y[base + i * inner] * g[base + i * inner];
                    }
                    for (std::size_t i = 0; i < n; ++i) {
                        const std::size_t idx = base + i * inner;
                        gx[idx] += y[idx] * (g[idx] - dot);
                    }
                }
            }
        });
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (x.rank() == 0) throw DimensionError("layer_norm: scalar input");
    const std::size_t d = x.dim(-1);
    if (gain.numel() != d || bias.numel() != d) {
        throw DimensionError("layer_norm: affine parameters must have " + std::to_string(d) +
                             " entries");
    }
    if (!(eps > 0)) throw ContractError("layer_norm: eps must be positive");
    const std::size_t rows = x.numel() / d;
    const auto xv = x.values();
    const auto gv = gain.values();
    const auto bv = bias.values();
    std::vector<double> out(xv.size()), xhat(xv.size()), rstd(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xv.data() + r * d;
        double mu = 0.0;
        for (std::size_t i = 0; i < d; ++i) mu += row[i];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t i = 0; i < d; ++i) var += (row[i] - mu) * (row[i] - mu);
        var /= static_cast<double>(d);
        rstd[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t i = 0; i < d; ++i) {
            const double h = (row[i] - mu) * rstd[r];
            xhat[r * d + i] = h;
            out[r * d + i] = h * gv[i] + bv[i];
        }
    }
    return Tensor::from_op(
        x.shape(), std::move(out), "layer_norm", {x, gain, bias},
        [d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
            const auto& g = self.grad;
            const auto& gv = self.parents[1]->data;
            with_parent_grad(self, 0, [&](std::vector<double>& gx) {
                for (std::size_t r = 0; r < rows; ++r) {
                    double m1 = 0.0, m2 = 0.0;
                    for (std::size_t i = 0; i < d; ++i) {
                        const double dh = g[r * d + i] * gv[i];
                        m1 += dh;
                        m2 += dh * xhat[r * d + i];
                    }
                    m1 /= static_cast<double>(d);
                    m2 /= static_cast<double>(d);
                    for (std::size_t i = 0; i < d; ++i) {
                        const double dh = g[r * d + i] * gv[i];
                        gx[r * d + i] += rstd[r] * (dh - m1 - xhat[r * d + i] * m2);
                    }
                }
            });
            with_parent_grad(self, 1, [&](std::vector<double>& gg) {
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t i = 0; i < d; ++i) gg[i] += g[r * d + i] * xhat[r * d + i];
            });
            with_parent_grad(self, 2, [&](std::vector<double>& gb) {
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t i = 0; i < d; ++i) gb[i] += g[r * d + i];
            });
        });
}

BatchNormResult batch_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (x.rank() != 2) throw DimensionError("batch_norm expects [B, F]");
    const std::size_t b = x.dim(0), f = x.dim(1);
    if (b < 2) throw ContractError("batch_norm needs at least two samples");
    if (gain.numel() != f || bias.numel() != f) {
        throw DimensionError("batch_norm: affine parameters must have " + std::to_string(f) +
                             " entries");
    }
    const auto xv = x.values();
    const auto gv = gain.values();
    const auto bv = bias.values();
    BatchNormResult result;
    result.batch_mean.assign(f, 0.0);
    result.batch_var.assign(f, 0.0);
    std::vector<double> out(xv.size()), xhat(xv.size()), rstd(f);
    for (std::size_t j = 0; j < f; ++j) {
        double mu = 0.0;
        for (std::size_t i = 0; i < b; ++i) mu += xv[i * f + j];
        mu /= static_cast<double>(b);
        double var = 0.0;
        for (std::size_t i = 0; i < b; ++i) var += (xv[i * f + j] - mu) * (xv[i * f + j] - mu);
        var /= static_cast<double>(b);
        result.batch_mean[j] = mu;
        result.batch_var[j] = var;
        rstd[j] = 1.0 / std::sqrt(var + eps);
        for (std::size_t i = 0; i < b; ++i) {
            const double h = (xv[i * f + j] - mu) * rstd[j];
            xhat[i * f + j] = h;
            out[i * f + j] = h * gv[j] + bv[j];
        }
    }
    result.output = Tensor::from_op(
        x.shape(), std::move(out), "batch_norm", {x, gain, bias},
        [b, f, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
            const auto& g = self.grad;
            const auto& gv = self.parents[1]->data;
            with_parent_grad(self, 0, [&](std::vector<double>& gx) {
                for (std::size_t j = 0; j < f; ++j) {
                    double m1 = 0.0, m2 = 0.0;
                    for (std::size_t i = 0; i < b; ++i) {
                        const double dh = g[i * f + j] * gv[j];
                        m1 += dh;
                        m2 += dh * xhat[i * f + j];
                    }
                    m1 /= static_cast<double>(b);
                    m2 /= static_cast<double>(b);
                    for (std::size_t i = 0; i < b; ++i) {
                        const double dh = g[i * f + j] * gv[j];
                        gx[i * f + j] += rstd[j] * (dh - m1 - xhat[i * f + j] * m2);
                    }
                }
            });
            with_parent_grad(self, 1, [&](std::vector<double>& gg) {
                for (std::size_t i = 0; i < b; ++i)
                    for (std::size_t j = 0; j < f; ++j) gg[j] += g[i * f + j] * xhat[i * f + j];
            });
            with_parent_grad(self, 2, [&](std::vector<double>& gb) {
                for (std::size_t i = 0; i < b; ++i)
                    for (std::size_t j = 0; j < f; ++j) gb[j] += g[i * f + j];
            });
        });
    return result;
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape " + shape_string(x.shape()) + " -> " + shape_string(shape));
    }
    std::vector<double> out(x.values().begin(), x.values().end());
    return Tensor::from_op(std::move(shape), std::move(out), "reshape", {x}, [](Node& self) {
        with_parent_grad(self, 0, [&](std::vector<double>& gx) {
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
        });
    });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
    const Shape& in = x.shape();
    const std::size_t r = in.size();
    if (order.size() != r) throw DimensionError("permute: order length differs from rank");
    std::vector<bool> used(r, false);
    for (std::size_t a : order) {
        if (a >= r || used[a]) throw DimensionError("permute: invalid axis order");
        used[a] = true;
    }
    Shape out_shape(r);
    for (std::size_t i = 0; i < r; ++i) out_shape[i] = in[order[i]];
    std::vector<std::size_t> in_strides(r, 1);
    for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * in[i];

    const std::size_t total = x.numel();
    std::vector<std::size_t> source(total);
    std::vector<std::size_t> idx(r, 0);
    for (std::size_t flat = 0; flat < total; ++flat) {
        std::size_t src = 0;
        for (std::size_t i = 0; i < r; ++i) src += idx[i] * in_strides[order[i]];
        source[flat] = src;
        for (std::size_t i = r; i-- > 0;) {
            if (++idx[i] < out_shape[i]) break;
            idx[i] = 0;
        }
    }
    const auto xv = x.values();
    std::vector<double> out(total);
    for (std::size_t i = 0; i < total; ++i) out[i] = xv[source[i]];
    return Tensor::from_op(std::move(out_shape), std::move(out), "permute", {x},
                           [source = std::move(source)](Node& self) {
                               with_parent_grad(self, 0, [&](std::vector<double>& gx) {
                                   for (std::size_t i = 0; i < source.size(); ++i) {
                                       gx[source[i]] += self.grad[i];
                                   }
                               });
                           });
}

Tensor concat(const std::vector<Tensor>& parts, std::ptrdiff_t axis) {
    if (parts.empty()) throw ContractError("concat of zero tensors");
    const Shape& first = parts.front().shape();
    const std::size_t ax = normalize_axis(axis, first.size());
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < ax; ++i) outer *= first[i];
    for (std::size_t i = ax + 1; i < first.size(); ++i) inner *= first[i];
    std::vector<std::size_t> chunk(parts.size());
    std::size_t axis_total = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Shape& s = parts[k].shape();
        if (s.size() != first.size()) throw DimensionError("concat: rank mismatch");
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i != ax && s[i] != first[i]) {
                throw DimensionError("concat: " + shape_string(s) + " vs " + shape_string(first));
            }
        }
        chunk[k] = s[ax] * inner;
        axis_total += s[ax];
    }
    Shape out_shape = first;
    out_shape[ax] = axis_total;
    const std::size_t row = axis_total * inner;
    std::vector<double> out(outer * row);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto pv = parts[k].values();
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(pv.data() + o * chunk[k], chunk[k], out.data() + o * row + offset);
        }
        offset += chunk[k];
    }
    return Tensor::from_op(std::move(out_shape), std::move(out), "concat", parts,
                           [outer, row, chunk](Node& self) {
                               std::size_t off = 0;
                               for (std::size_t k = 0; k < chunk.size(); ++k) {
                                   with_parent_grad(self, k, [&](std::vector<double>& gp) {
                                       for (std::size_t o = 0; o < outer; ++o)
                                           for (std::size_t i = 0; i < chunk[k]; ++i)
                                               gp[o * chunk[k] + i] +=
                                                   self.grad[o * row + off + i];
                                   });
                                   off += chunk[k];
                               }
                           });
}

Tensor slice(const Tensor& x, std::ptrdiff_t axis, std::size_t begin, std::size_t end) {
    const Shape& s = x.shape();
    const std::size_t ax = normalize_axis(axis, s.size());
    if (begin > end || end > s[ax]) {
        throw DimensionError("slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                             ") out of range for " + shape_string(s));
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
    for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t in_row = s[ax] * inner;
    const std::size_t out_row = (end - begin) * inner;
    const std::size_t offset = begin * inner;
    Shape out_shape = s;
    out_shape[ax] = end - begin;
    const auto xv = x.values();
    std::vector<double> out(outer * out_row);
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(xv.data() + o * in_row + offset, out_row, out.data() + o * out_row);
    }
    return Tensor::from_op(std::move(out_shape), std::move(out), "slice", {x},
                           [outer, in_row, out_row, offset](Node& self) {
                               with_parent_grad(self, 0, [&](std::vector<double>& gx) {
                                   for (std::size_t o = 0; o < outer; ++o)
                                       for (std::size_t i = 0; i < out_row; ++i)
                                           gx[o * in_row + offset + i] +=
                                               self.grad[o * out_row + i];
                               });
                           });
}

Tensor expand(const Tensor& x, std::size_t count) {
    Shape out_shape{count};
    out_shape.insert(out_shape.end(), x.shape().begin(), x.shape().end());
    const auto xv = x.values();
    const std::size_t n = xv.size();
    std::vector<double> out(count * n);
    for (std::size_t c = 0; c < count; ++c) std::copy(xv.begin(), xv.end(), out.begin() + c * n);
    return Tensor::from_op(std::move(out_shape), std::move(out), "expand", {x},
                           [count, n](Node& self) {
                               with_parent_grad(self, 0, [&](std::vector<double>& gx) {
                                   for (std::size_t c = 0; c < count; ++c)
                                       for (std::size_t i = 0; i < n; ++i)
                                           gx[i] += self.grad[c * n + i];
                               });
                           });
}

Tensor sum(const Tensor& x) {
    double total = 0.0;
    for (double v : x.values()) total += v;
    return Tensor::from_op(Shape{}, {total}, "sum", {x}, [](Node& self) {
        with_parent_grad(self, 0, [&](std::vector<double>& gx) {
            for (double& g : gx) g += self.grad[0];
        });
    });
}

Tensor mean(const Tensor& x) {
    const auto n = static_cast<double>(x.numel());
    if (n == 0) throw ContractError("mean of an empty tensor");
    return scale(sum(x), 1.0 / n);
}

Tensor sum(const Tensor& x, std::ptrdiff_t axis) {
    const Shape& s = x.shape();
    const std::size_t ax = normalize_axis(axis, s.size());
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
    for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t n = s[ax];
    Shape out_shape = s;
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
    const auto xv = x.values();
    std::vector<double> out(outer * inner, 0.0);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < inner; ++j)
                out[o * inner + j] += xv[(o * n + i) * inner + j];
    return Tensor::from_op(std::move(out_shape), std::move(out), "sum_axis", {x},
                           [outer, inner, n](Node& self) {
                               with_parent_grad(self, 0, [&](std::vector<double>& gx) {
                                   for (std::size_t o = 0; o < outer; ++o)
                                       for (std::size_t i = 0; i < n; ++i)
                                           for (std::size_t j = 0; j < inner; ++j)
                                               gx[(o * n + i) * inner + j] +=
                                                   self.grad[o * inner + j];
                               });
                           });
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("cosine_similarity: " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
    }
    if (a.rank() == 0) throw DimensionError("cosine_similarity: scalar inputs");
    const std::size_t d = a.dim(-1);
    const std::size_t rows = a.numel() / d;
    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<double> out(rows), dots(rows), na(rows), nb(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0, sa = 0.0, sb = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            dot += av[r * d + i] * bv[r * d + i];
            sa += av[r * d + i] * av[r * d + i];
            sb += bv[r * d + i] * bv[r * d + i];
        }
        dots[r] = dot;
        na[r] = std::sqrt(sa);
        nb[r] = std::sqrt(sb);
        out[r] = dot / (na[r] * nb[r] + kCosineEps);
    }
    return Tensor::from_op(
        std::move(out_shape), std::move(out), "cosine_similarity", {a, b},
        [d, rows, dots = std::move(dots), na = std::move(na), nb = std::move(nb)](Node& self) {
            const auto& ad = self.parents[0]->data;
            const auto& bd = self.parents[1]->data;
            // d/dx [x·y / (|x||y| + e)] = y/s - (x·y)|y| x / (|x| s²)
            auto accumulate = [&](std::vector<double>& gx, const std::vector<double>& xd,
                                  const std::vector<double>& yd, const std::vector<double>& nx,
                                  const std::vector<double>& ny) {
                for (std::size_t r = 0; r < rows; ++r) {
                    const double s = nx[r] * ny[r] + kCosineEps;
                    const double g = self.grad[r];
                    const double radial = nx[r] > 0 ? dots[r] * ny[r] / (nx[r] * s * s) : 0.0;
                    for (std::size_t i = 0; i < d; ++i) {
                        gx[r * d + i] += g * (yd[r * d + i] / s - radial * xd[r * d + i]);
                    }
                }
            };
            with_parent_grad(self, 0,
                             [&](std::vector<double>& ga) { accumulate(ga, ad, bd, na, nb); });
            with_parent_grad(self, 1,
                             [&](std::vector<double>& gb) { accumulate(gb, bd, ad, nb, na); });
        });
}

Tensor pairwise_cosine(const Tensor& x) {
    if (x.rank() < 2) throw DimensionError("pairwise_cosine expects [..., P, D]");
    const std::size_t d = x.dim(-1);
    const std::size_t p = x.dim(-2);
    const std::size_t groups = x.numel() / (p * d);
    Shape out_shape = x.shape();
    out_shape.back() = p;
    const auto xv = x.values();
    std::vector<double> norms(groups * p), out(groups * p * p);
    for (std::size_t r = 0; r < groups * p; ++r) {
        double s = 0.0;
        for (std::size_t i = 0; i < d; ++i) s += xv[r * d + i] * xv[r * d + i];
        norms[r] = std::sqrt(s);
    }
    for (std::size_t gidx = 0; gidx < groups; ++gidx) {
        for (std::size_t i = 0; i < p; ++i) {
            for (std::size_t j = 0; j < p; ++j) {
                const double* xi = xv.data() + (gidx * p + i) * d;
                const double* xj = xv.data() + (gidx * p + j) * d;
                double dot = 0.0;
                for (std::size_t k = 0; k < d; ++k) dot += xi[k] * xj[k];
                out[(gidx * p + i) * p + j] =
                    dot / (norms[gidx * p + i] * norms[gidx * p + j] + kCosineEps);
            }
        }
    }
    return Tensor::from_op(
        std::move(out_shape), std::move(out), "pairwise_cosine", {x},
        [d, p, groups, norms = std::move(norms)](Node& self) {
            with_parent_grad(self, 0, [&](std::vector<double>& gx) {
                const auto& xd = self.parents[0]->data;
                for (std::size_t gidx = 0; gidx < groups; ++gidx) {
                    for (std::size_t i = 0; i < p; ++i) {
                        for (std::size_t j = 0; j < p; ++j) {
                            const double g = self.grad[(gidx * p + i) * p + j];
                            if (g == 0.0) continue;
                            const std::size_t ri = gidx * p + i, rj = gidx * p + j;
                            const double* xi = xd.data() + ri * d;
                            const double* xj = xd.data() + rj * d;
                            double dot = 0.0;
                            for (std::size_t k = 0; k < d; ++k) dot += xi[k] * xj[k];
                            const double s = norms[ri] * norms[rj] + kCosineEps;
                            const double ci =
                                norms[ri] > 0 ? dot * norms[rj] / (norms[ri] * s * s) : 0.0;
                            const double cj =
                                norms[rj] > 0 ? dot * norms[ri] / (norms[rj] * s * s) : 0.0;
                            for (std::size_t k = 0; k < d; ++k) {
                                gx[ri * d + k] += g * (xj[k] / s - ci * xi[k]);
                                gx[rj * d + k] += g * (xi[k] / s - cj * xj[k]);
                            }
                        }
                    }
                }
            });
        });
}

namespace {

constexpr double kDistanceEps = 1e-12;

// dist[i,j] over `count` rows of width d starting at `rows`.
void distance_block(const double* rows, std::size_t count, std::size_t d, double* out,
                    std::size_t out_stride) {
    for (std::size_t i = 0; i < count; ++i) {
        for (std::size_t j = 0; j < count; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = rows[i * out_stride + k] - rows[j * out_stride + k];
                s += diff * diff;
            }
            out[i * count + j] = std::sqrt(s + kDistanceEps);
        }
    }
}

void distance_block_backward(const double* rows, std::size_t count, std::size_t d,
                             std::size_t row_stride, const double* dist, const double* grad,
                             double* grad_rows) {
    for (std::size_t i = 0; i < count; ++i) {
        for (std::size_t j = 0; j < count; ++j) {
            const double g = grad[i * count + j];
            if (g == 0.0 || i == j) continue;
            const double f = g / dist[i * count + j];
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = rows[i * row_stride + k] - rows[j * row_stride + k];
                grad_rows[i * row_stride + k] += f * diff;
                grad_rows[j * row_stride + k] -= f * diff;
            }
        }
    }
}

}  // namespace

Tensor euclidean_distances(const Tensor& x) {
    if (x.rank() != 2) throw DimensionError("euclidean_distances expects [B, D]");
    const std::size_t b = x.dim(0), d = x.dim(1);
    std::vector<double> out(b * b);
    distance_block(x.values().data(), b, d, out.data(), d);
    return Tensor::from_op(Shape{b, b}, std::move(out), "euclidean_distances", {x},
                           [b, d](Node& self) {
                               with_parent_grad(self, 0, [&](std::vector<double>& gx) {
                                   distance_block_backward(self.parents[0]->data.data(), b, d, d,
                                                           self.data.data(), self.grad.data(),
                                                           gx.data());
                               });
                           });
}

Tensor part_euclidean_distances(const Tensor& x) {
    if (x.rank() != 3) throw DimensionError("part_euclidean_distances expects [B, P, D]");
    const std::size_t b = x.dim(0), p = x.dim(1), d = x.dim(2);
    std::vector<double> out(p * b * b);
    const double* xv = x.values().data();
    for (std::size_t part = 0; part < p; ++part) {
        distance_block(xv + part * d, b, d, out.data() + part * b * b, p * d);
    }
    return Tensor::from_op(Shape{p, b, b}, std::move(out), "part_euclidean_distances", {x},
                           [b, p, d](Node& self) {
                               with_parent_grad(self, 0, [&](std::vector<double>& gx) {
                                   const double* xd = self.parents[0]->data.data();
                                   for (std::size_t part = 0; part < p; ++part) {
                                       distance_block_backward(
                                           xd + part * d, b, d, p * d,
                                           self.data.data() + part * b * b,
                                           self.grad.data() + part * b * b, gx.data() + part * d);
                                   }
                               });
                           });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels,
                     double smoothing) {
    if (logits.rank() != 2) throw DimensionError("cross_entropy expects [B, K] logits");
    const std::size_t b = logits.dim(0), k = logits.dim(1);
    if (labels.size() != b) throw DimensionError("cross_entropy: label count differs from batch");
    if (!(smoothing >= 0.0 && smoothing < 1.0)) {
        throw ContractError("cross_entropy: smoothing must lie in [0, 1)");
    }
    for (std::size_t y : labels) {
        if (y >= k) {
            throw ContractError("cross_entropy: label " + std::to_string(y) + " out of range for " +
                                std::to_string(k) + " classes");
        }
    }
    const auto lv = logits.values();
    std::vector<double> probs(b * k);
    double total = 0.0;
    const double off = smoothing / static_cast<double>(k);
    for (std::size_t i = 0; i < b; ++i) {
        const double* row = lv.data() + i * k;
        const double mx = *std::max_element(row, row + k);
        double z = 0.0;
        for (std::size_t c = 0; c < k; ++c) z += std::exp(row[c] - mx);
        const double log_z = mx + std::log(z);
        for (std::size_t c = 0; c < k; ++c) {
            const double log_p = row[c] - log_z;
            probs[i * k + c] = std::exp(log_p);
            const double target = off + (c == labels[i] ? 1.0 - smoothing : 0.0);
            if (target > 0) total -= target * log_p;
        }
    }
    total /= static_cast<double>(b);
    std::vector<std::size_t> saved(labels.begin(), labels.end());
    return Tensor::from_op(
        Shape{}, {total}, "cross_entropy", {logits},
        [b, k, off, smoothing, probs = std::move(probs), saved = std::move(saved)](Node& self) {
            with_parent_grad(self, 0, [&](std::vector<double>& gl) {
                const double g = self.grad[0] / static_cast<double>(b);
                for (std::size_t i = 0; i < b; ++i)
                    for (std::size_t c = 0; c < k; ++c) {
                        const double target = off + (c == saved[i] ? 1.0 - smoothing : 0.0);
                        gl[i * k + c] += g * (probs[i * k + c] - target);
                    }
            });
        });
}

Tensor batch_hard_triplet(const Tensor& distances, std::span<const std::int64_t> ids,
                          double margin) {
    if (distances.rank() != 2 || distances.dim(0) != distances.dim(1)) {
        throw DimensionError("batch_hard_triplet expects a square distance matrix");
    }
    const std::size_t b = distances.dim(0);
    if (ids.size() != b) throw DimensionError("batch_hard_triplet: id count differs from batch");
    const auto dv = distances.values();
    std::vector<std::size_t> pos(b), neg(b);
    std::vector<bool> active(b);
    double total = 0.0;
    for (std::size_t a = 0; a < b; ++a) {
        std::ptrdiff_t hp = -1, hn = -1;
        for (std::size_t j = 0; j < b; ++j) {
            const double dist = dv[a * b + j];
            if (ids[j] == ids[a]) {
                if (j != a && (hp < 0 || dist > dv[a * b + static_cast<std::size_t>(hp)])) {
                    hp = static_cast<std::ptrdiff_t>(j);
                }
            } else if (hn < 0 || dist < dv[a * b + static_cast<std::size_t>(hn)]) {
                hn = static_cast<std::ptrdiff_t>(j);
            }
        }
        if (hp < 0 || hn < 0) {
            throw ContractError("batch_hard_triplet: every anchor needs a positive and a negative");
        }
        pos[a] = static_cast<std::size_t>(hp);
        neg[a] = static_cast<std::size_t>(hn);
        const double hinge = dv[a * b + pos[a]] - dv[a * b + neg[a]] + margin;
        active[a] = hinge > 0;
        if (active[a]) total += hinge;
    }
    total /= static_cast<double>(b);
    return Tensor::from_op(Shape{}, {total}, "batch_hard_triplet", {distances},
                           [b, pos = std::move(pos), neg = std::move(neg),
                            active = std::move(active)](Node& self) {
                               with_parent_grad(self, 0, [&](std::vector<double>& gd) {
                                   const double g = self.grad[0] / static_cast<double>(b);
                                   for (std::size_t a = 0; a < b; ++a) {
                                       if (!active[a]) continue;
                                       gd[a * b + pos[a]] += g;
                                       gd[a * b + neg[a]] -= g;
                                   }
                               });
                           });
}

Tensor focal_loss(const Tensor& probabilities, std::span<const std::uint8_t> targets, double alpha,
                  double gamma) {
    const std::size_t n = probabilities.numel();
    if (targets.size() != n) throw DimensionError("focal_loss: target count differs from inputs");
    if (n == 0) throw ContractError("focal_loss on an empty tensor");
    constexpr double lo = 1e-7, hi = 1.0 - 1e-7;
    const auto pv = probabilities.values();
    double total = 0.0;
    std::vector<double> deriv(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double raw = pv[i];
        const double v = std::clamp(raw, lo, hi);
        const bool clamped = raw < lo || raw > hi;
        if (targets[i]) {
            total += -alpha * std::pow(1.0 - v, gamma) * std::log(v);
            if (!clamped) {
                deriv[i] = alpha * (gamma * std::pow(1.0 - v, gamma - 1.0) * std::log(v) -
                                    std::pow(1.0 - v, gamma) / v);
            }
        } else {
            total += -(1.0 - alpha) * std::pow(v, gamma) * std::log(1.0 - v);
            if (!clamped) {
                deriv[i] = -(1.0 - alpha) * (gamma * std::pow(v, gamma - 1.0) * std::log(1.0 - v) -
                                             std::pow(v, gamma) / (1.0 - v));
            }
        }
    }
    total /= static_cast<double>(n);
    return Tensor::from_op(Shape{}, {total}, "focal_loss", {probabilities},
                           [n, deriv = std::move(deriv)](Node& self) {
                               with_parent_grad(self, 0, [&](std::vector<double>& gp) {
                                   const double g = self.grad[0] / static_cast<double>(n);
                                   for (std::size_t i = 0; i < n; ++i) gp[i] += g * deriv[i];
                               });
                           });
}

Tensor part_pool(const Tensor& features, const Tensor& heatmaps) {
    if (features.rank() != 3 || heatmaps.rank() != 3) {
        throw DimensionError("part_pool expects features [B, N, D] and heatmaps [B, N, P+1]");
    }
    const std::size_t b = features.dim(0), n = features.dim(1), d = features.dim(2);
    const std::size_t c = heatmaps.dim(2);
    if (heatmaps.dim(0) != b || heatmaps.dim(1) != n || c < 2) {
        throw DimensionError("part_pool: heatmaps " + shape_string(heatmaps.shape()) +
                             " do not match features " + shape_string(features.shape()));
    }
    const std::size_t p = c - 1;
    const auto fv = features.values();
    const auto hv = heatmaps.values();
    std::vector<double> out(b * p * d, 0.0), totals(b * p, kCosineEps);
    for (std::size_t s = 0; s < b; ++s) {
        for (std::size_t l = 0; l < n; ++l) {
            const double* frow = fv.data() + (s * n + l) * d;
            for (std::size_t part = 0; part < p; ++part) {
                const double w = hv[(s * n + l) * c + part + 1];
                totals[s * p + part] += w;
                double* orow = out.data() + (s * p + part) * d;
                for (std::size_t k = 0; k < d; ++k) orow[k] += w * frow[k];
            }
        }
        for (std::size_t part = 0; part < p; ++part) {
            double* orow = out.data() + (s * p + part) * d;
            for (std::size_t k = 0; k < d; ++k) orow[k] /= totals[s * p + part];
        }
    }
    return Tensor::from_op(
        Shape{b, p, d}, std::move(out), "part_pool", {features, heatmaps},
        [b, n, d, c, p, totals = std::move(totals)](Node& self) {
            const auto& fd = self.parents[0]->data;
            const auto& hd = self.parents[1]->data;
            const auto& g = self.grad;
            with_parent_grad(self, 0, [&](std::vector<double>& gf) {
                for (std::size_t s = 0; s < b; ++s)
                    for (std::size_t l = 0; l < n; ++l)
                        for (std::size_t part = 0; part < p; ++part) {
                            const double w =
                                hd[(s * n + l) * c + part + 1] / totals[s * p + part];
                            const double* grow = g.data() + (s * p + part) * d;
                            for (std::size_t k = 0; k < d; ++k)
                                gf[(s * n + l) * d + k] += w * grow[k];
                        }
            });
            with_parent_grad(self, 1, [&](std::vector<double>& gh) {
                for (std::size_t s = 0; s < b; ++s)
                    for (std::size_t l = 0; l < n; ++l)
                        for (std::size_t part = 0; part < p; ++part) {
                            const double* grow = g.data() + (s * p + part) * d;
                            const double* orow = self.data.data() + (s * p + part) * d;
                            const double* frow = fd.data() + (s * n + l) * d;
                            double acc = 0.0;
                            for (std::size_t k = 0; k < d; ++k) acc += grow[k] * (frow[k] - orow[k]);
                            gh[(s * n + l) * c + part + 1] += acc / totals[s * p + part];
                        }
            });
        });
}

}  // namespace tsd
