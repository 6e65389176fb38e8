#pragma once

// Differentiable operations over Tensor. Every op computes its forward value
// eagerly and, when a Tape is active and an input requires gradients, records
// a backward rule.
//
// Broadcasting is deliberately narrow: the second operand of a binary op may
// be a scalar or have a shape equal to the trailing dimensions of the first
// (bias-style broadcast over leading batch dimensions).

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "epigraph/core/errors.hpp"
#include "epigraph/core/rng.hpp"
#include "epigraph/core/tensor.hpp"

namespace epigraph {

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using MatrixMap = Eigen::Map<RowMatrix>;

inline bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

inline bool broadcastable(const Tensor& small, const Tensor& big) {
    return small.size() == 1 || is_suffix(small.shape(), big.shape());
}

// Splits `shape` around `axis` into (outer, length, inner) extents.
struct AxisSplit {
    std::size_t outer = 1, length = 1, inner = 1;
};

inline AxisSplit split_at(const Shape& shape, std::size_t axis) {
    if (axis >= shape.size())
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + to_string(shape));
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    s.length = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

inline std::size_t resolve_axis(const Tensor& x, int axis) {
    const int r = static_cast<int>(x.rank());
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r)
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + to_string(x.shape()));
    return static_cast<std::size_t>(a);
}

enum class BinaryKind { add, sub, mul };

inline Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, const char* name) {
    const bool a_big = a.size() >= b.size();
    const Tensor& big = a_big ? a : b;
    const Tensor& small = a_big ? b : a;
    if (a.shape() != b.shape() && !broadcastable(small, big))
        throw DimensionError(std::string(name) + ": shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                             " are not broadcast-compatible");
    const std::size_t n = big.size(), na = a.size(), nb = b.size();
    const auto& av = a.vec();
    const auto& bv = b.vec();
    std::vector<double> out(n);
    switch (kind) {
        case BinaryKind::add:
            for (std::size_t i = 0; i < n; ++i) out[i] = av[i % na] + bv[i % nb];
            break;
        case BinaryKind::sub:
            for (std::size_t i = 0; i < n; ++i) out[i] = av[i % na] - bv[i % nb];
            break;
        case BinaryKind::mul:
            for (std::size_t i = 0; i < n; ++i) out[i] = av[i % na] * bv[i % nb];
            break;
    }
    Tensor result(big.shape(), std::move(out));
    if (should_record({&a, &b})) {
        attach(result, [ai = a.impl(), bi = b.impl(), kind, n, na, nb](std::span<const double> g) {
            if (ai->requires_grad) {
                auto& ga = grad_buffer(*ai);
                if (kind == BinaryKind::mul)
                    for (std::size_t i = 0; i < n; ++i) ga[i % na] += g[i] * bi->data[i % nb];
                else
                    for (std::size_t i = 0; i < n; ++i) ga[i % na] += g[i];
            }
            if (bi->requires_grad) {
                auto& gb = grad_buffer(*bi);
                switch (kind) {
                    case BinaryKind::add:
                        for (std::size_t i = 0; i < n; ++i) gb[i % nb] += g[i];
                        break;
                    case BinaryKind::sub:
                        for (std::size_t i = 0; i < n; ++i) gb[i % nb] -= g[i];
                        break;
                    case BinaryKind::mul:
                        for (std::size_t i = 0; i < n; ++i) gb[i % nb] += g[i] * ai->data[i % na];
                        break;
                }
            }
        });
    }
    return result;
}

// Elementwise map y = f(x) with dy/dx expressed through (x, y).
template <class F, class DF>
Tensor unary(const Tensor& x, F f, DF df) {
    const auto& xv = x.vec();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
    Tensor result(x.shape(), std::move(out));
    if (should_record({&x})) {
        attach(result, [xi = x.impl(), yi = result.impl().get(), df](std::span<const double> g) {
            if (!xi->requires_grad) return;
            auto& gx = grad_buffer(*xi);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xi->data[i], yi->data[i]);
        });
    }
    return result;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinaryKind::add, "add"); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinaryKind::sub, "sub"); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinaryKind::mul, "mul"); }

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

inline Tensor scale(const Tensor& x, double factor) {
    return detail::unary(
        x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

inline Tensor sigmoid(const Tensor& x) {
    return detail::unary(
        x,
        [](double v) {
            if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

inline Tensor relu(const Tensor& x) {
    return detail::unary(
        x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor leaky_relu(const Tensor& x, double slope) {
    return detail::unary(
        x, [slope](double v) { return v > 0.0 ? v : slope * v; },
        [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

// Matrix product over the last two axes.
//   a: [..., m, k]
//   b: [k, n]            shared across the leading dims of a, or
//      [..., k, n]       batched, leading dims equal to a's.
// With transpose_b, b is given as [n, k] / [..., n, k].
inline Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false) {
    using detail::ConstMatrixMap;
    using detail::MatrixMap;
    auto mismatch = [&] {
        return DimensionError("matmul: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                              (transpose_b ? " (b transposed)" : ""));
    };
    if (a.rank() < 2 || b.rank() < 2) throw mismatch();
    const std::size_t m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
    const std::size_t bk = transpose_b ? b.dim(b.rank() - 1) : b.dim(b.rank() - 2);
    const std::size_t n = transpose_b ? b.dim(b.rank() - 2) : b.dim(b.rank() - 1);
    if (bk != k) throw mismatch();
    const bool shared = b.rank() == 2;
    if (!shared && (b.rank() != a.rank() || !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())))
        throw mismatch();
    const std::size_t batch = a.size() / (m * k);

    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    out_shape.push_back(n);
    std::vector<double> out(batch * m * n);
    const double* ap = a.vec().data();
    const double* bp = b.vec().data();
    const std::size_t b_rows = transpose_b ? n : k, b_cols = transpose_b ? k : n;

    if (shared) {
        ConstMatrixMap A(ap, batch * m, k);
        ConstMatrixMap B(bp, b_rows, b_cols);
        MatrixMap C(out.data(), batch * m, n);
        if (transpose_b)
            C.noalias() = A * B.transpose();
        else
            C.noalias() = A * B;
    } else {
        for (std::size_t p = 0; p < batch; ++p) {
            ConstMatrixMap A(ap + p * m * k, m, k);
            ConstMatrixMap B(bp + p * k * n, b_rows, b_cols);
            MatrixMap C(out.data() + p * m * n, m, n);
            if (transpose_b)
                C.noalias() = A * B.transpose();
            else
                C.noalias() = A * B;
        }
    }
    Tensor result(std::move(out_shape), std::move(out));
    if (detail::should_record({&a, &b})) {
        detail::attach(result, [ai = a.impl(), bi = b.impl(), shared, transpose_b, batch, m, k, n, b_rows,
                                b_cols](std::span<const double> g) {
            const std::size_t rows = shared ? batch * m : m;
            const std::size_t reps = shared ? 1 : batch;
            for (std::size_t p = 0; p < reps; ++p) {
                ConstMatrixMap G(g.data() + p * m * n, rows, n);
                ConstMatrixMap A(ai->data.data() + p * m * k, rows, k);
                ConstMatrixMap B(bi->data.data() + (shared ? 0 : p * k * n), b_rows, b_cols);
                if (ai->requires_grad) {
                    MatrixMap GA(detail::grad_buffer(*ai).data() + p * m * k, rows, k);
                    if (transpose_b)
                        GA.noalias() += G * B;
                    else
                        GA.noalias() += G * B.transpose();
                }
                if (bi->requires_grad) {
                    MatrixMap GB(detail::grad_buffer(*bi).data() + (shared ? 0 : p * k * n), b_rows, b_cols);
                    if (transpose_b)
                        GB.noalias() += G.transpose() * A;
                    else
                        GB.noalias() += A.transpose() * G;
                }
            }
        });
    }
    return result;
}

// Softmax along `axis`, stabilized by subtracting the running maximum.
inline Tensor softmax(const Tensor& x, int axis = -1) {
    const auto ax = detail::resolve_axis(x, axis);
    const auto s = detail::split_at(x.shape(), ax);
    const auto& xv = x.vec();
    std::vector<double> y(xv.size());
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t in = 0; in < s.inner; ++in) {
            const std::size_t base = o * s.length * s.inner + in;
            double mx = -INFINITY;
            for (std::size_t l = 0; l < s.length; ++l) {
                const double v = xv[base + l * s.inner];
                if (!std::isfinite(v)) throw NumericError("softmax: non-finite input");
                mx = std::max(mx, v);
            }
            double total = 0.0;
            for (std::size_t l = 0; l < s.length; ++l) {
                const double e = std::exp(xv[base + l * s.inner] - mx);
                y[base + l * s.inner] = e;
                total += e;
            }
            for (std::size_t l = 0; l < s.length; ++l) y[base + l * s.inner] /= total;
        }
    Tensor result(x.shape(), std::move(y));
    if (detail::should_record({&x})) {
        detail::attach(result, [xi = x.impl(), yi = result.impl().get(), s](std::span<const double> g) {
            if (!xi->requires_grad) return;
            auto& gx = detail::grad_buffer(*xi);
            const auto& yv = yi->data;
            for (std::size_t o = 0; o < s.outer; ++o)
                for (std::size_t in = 0; in < s.inner; ++in) {
                    const std::size_t base = o * s.length * s.inner + in;
                    double dot = 0.0;
                    for (std::size_t l = 0; l < s.length; ++l) dot += g[base + l * s.inner] * yv[base + l * s.inner];
                    for (std::size_t l = 0; l < s.length; ++l) {
                        const std::size_t i = base + l * s.inner;
                        gx[i] += yv[i] * (g[i] - dot);
                    }
                }
        });
    }
    return result;
}

// Row-wise mask over the last two axes of a [..., m, n] tensor; true = allowed.
struct AttentionMask {
    std::size_t rows = 0, cols = 0;
    std::vector<char> allowed;

    bool operator()(std::size_t i, std::size_t j) const { return allowed[i * cols + j] != 0; }

    static AttentionMask full(std::size_t rows, std::size_t cols) {
        return {rows, cols, std::vector<char>(rows * cols, 1)};
    }
    // Position i may attend to j only when j <= i.
    static AttentionMask causal(std::size_t n) {
        AttentionMask mask{n, n, std::vector<char>(n * n, 0)};
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j <= i; ++j) mask.allowed[i * n + j] = 1;
        return mask;
    }
};

// Softmax over the last axis restricted to allowed entries; masked entries
// are exactly zero. Every row must allow at least one entry.
inline Tensor masked_softmax(const Tensor& x, const AttentionMask& mask) {
    if (x.rank() < 2 || x.dim(x.rank() - 2) != mask.rows || x.dim(x.rank() - 1) != mask.cols)
        throw DimensionError("masked_softmax: mask " + std::to_string(mask.rows) + "x" + std::to_string(mask.cols) +
                             " does not match " + to_string(x.shape()));
    const std::size_t n = mask.cols, m = mask.rows;
    const std::size_t rows = x.size() / n;
    const auto& xv = x.vec();
    std::vector<double> y(xv.size(), 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t i = r % m;
        const double* xr = xv.data() + r * n;
        double* yr = y.data() + r * n;
        double mx = -INFINITY;
        for (std::size_t j = 0; j < n; ++j)
            if (mask(i, j)) {
                if (!std::isfinite(xr[j])) throw NumericError("masked_softmax: non-finite input");
                mx = std::max(mx, xr[j]);
            }
        if (mx == -INFINITY) throw ContractError("masked_softmax: row " + std::to_string(i) + " has no allowed entry");
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j)
            if (mask(i, j)) {
                yr[j] = std::exp(xr[j] - mx);
                total += yr[j];
            }
        for (std::size_t j = 0; j < n; ++j) yr[j] /= total;
    }
    Tensor result(x.shape(), std::move(y));
    if (detail::should_record({&x})) {
        detail::attach(result, [xi = x.impl(), yi = result.impl().get(), rows, n](std::span<const double> g) {
            if (!xi->requires_grad) return;
            auto& gx = detail::grad_buffer(*xi);
            const auto& yv = yi->data;
            for (std::size_t r = 0; r < rows; ++r) {
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * yv[r * n + j];
                for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += yv[r * n + j] * (g[r * n + j] - dot);
            }
        });
    }
    return result;
}

inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ContractError("concat of zero tensors");
    const auto ax = detail::resolve_axis(parts.front(), axis);
    Shape out_shape = parts.front().shape();
    out_shape[ax] = 0;
    for (const auto& p : parts) {
        Shape probe = p.shape();
        if (probe.size() != out_shape.size()) throw DimensionError("concat: rank mismatch " + to_string(p.shape()));
        out_shape[ax] += probe[ax];
        probe[ax] = 0;
        Shape ref = out_shape;
        ref[ax] = 0;
        if (probe != ref) throw DimensionError("concat: shape " + to_string(p.shape()) + " incompatible");
    }
    const auto s = detail::split_at(out_shape, ax);
    std::vector<double> out(element_count(out_shape));
    std::vector<std::size_t> offsets;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        offsets.push_back(offset);
        const std::size_t len = p.dim(ax);
        for (std::size_t o = 0; o < s.outer; ++o)
            std::copy_n(p.vec().data() + o * len * s.inner, len * s.inner,
                        out.data() + (o * s.length + offset) * s.inner);
        offset += len;
    }
    Tensor result(std::move(out_shape), std::move(out));
    if (detail::should_record(std::span<const Tensor>(parts))) {
        std::vector<std::shared_ptr<detail::TensorImpl>> impls;
        for (const auto& p : parts) impls.push_back(p.impl());
        detail::attach(result, [impls, offsets, s, ax](std::span<const double> g) {
            for (std::size_t k = 0; k < impls.size(); ++k) {
                auto& pi = *impls[k];
                if (!pi.requires_grad) continue;
                auto& gp = detail::grad_buffer(pi);
                const std::size_t len = pi.shape[ax];
                for (std::size_t o = 0; o < s.outer; ++o)
                    for (std::size_t q = 0; q < len * s.inner; ++q)
                        gp[o * len * s.inner + q] += g[(o * s.length + offsets[k]) * s.inner + q];
            }
        });
    }
    return result;
}

// Mean over `axis`, which is removed from the shape.
inline Tensor mean(const Tensor& x, int axis) {
    const auto ax = detail::resolve_axis(x, axis);
    const auto s = detail::split_at(x.shape(), ax);
    Shape out_shape = x.shape();
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
    std::vector<double> out(s.outer * s.inner, 0.0);
    const auto& xv = x.vec();
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t l = 0; l < s.length; ++l)
            for (std::size_t in = 0; in < s.inner; ++in)
                out[o * s.inner + in] += xv[(o * s.length + l) * s.inner + in];
    const double inv = 1.0 / static_cast<double>(s.length);
    for (auto& v : out) v *= inv;
    Tensor result(std::move(out_shape), std::move(out));
    if (detail::should_record({&x})) {
        detail::attach(result, [xi = x.impl(), s, inv](std::span<const double> g) {
            if (!xi->requires_grad) return;
            auto& gx = detail::grad_buffer(*xi);
            for (std::size_t o = 0; o < s.outer; ++o)
                for (std::size_t l = 0; l < s.length; ++l)
                    for (std::size_t in = 0; in < s.inner; ++in)
                        gx[(o * s.length + l) * s.inner + in] += g[o * s.inner + in] * inv;
        });
    }
    return result;
}

inline Tensor sum(const Tensor& x) {
    double total = 0.0;
    for (double v : x.vec()) total += v;
    Tensor result = Tensor::scalar(total);
    if (detail::should_record({&x})) {
        detail::attach(result, [xi = x.impl()](std::span<const double> g) {
            if (!xi->requires_grad) return;
            auto& gx = detail::grad_buffer(*xi);
            for (auto& v : gx) v += g[0];
        });
    }
    return result;
}

inline Tensor mean_all(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

// Normalizes over the last axis. Variance is floored by `eps`, so a constant
// row maps to `bias`.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
    const std::size_t n = x.dim(x.rank() - 1);
    if (gain.shape() != Shape{n} || bias.shape() != Shape{n})
        throw DimensionError("layer_norm: gain " + to_string(gain.shape()) + " / bias " + to_string(bias.shape()) +
                             " do not match last axis of " + to_string(x.shape()));
    const std::size_t rows = x.size() / n;
    const auto& xv = x.vec();
    std::vector<double> xhat(xv.size()), inv_std(rows), y(xv.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xv.data() + r * n;
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += xr[j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<double>(n);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            xhat[r * n + j] = (xr[j] - mu) * inv_std[r];
            y[r * n + j] = xhat[r * n + j] * gain[j] + bias[j];
        }
    }
    Tensor result(x.shape(), std::move(y));
    if (detail::should_record({&x, &gain, &bias})) {
        detail::attach(result, [xi = x.impl(), gi = gain.impl(), bi = bias.impl(), xhat = std::move(xhat),
                                inv_std = std::move(inv_std), rows, n](std::span<const double> g) {
            if (gi->requires_grad) {
                auto& gg = detail::grad_buffer(*gi);
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < n; ++j) gg[j] += g[r * n + j] * xhat[r * n + j];
            }
            if (bi->requires_grad) {
                auto& gb = detail::grad_buffer(*bi);
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < n; ++j) gb[j] += g[r * n + j];
            }
            if (xi->requires_grad) {
                auto& gx = detail::grad_buffer(*xi);
                const double dn = static_cast<double>(n);
                for (std::size_t r = 0; r < rows; ++r) {
                    double s1 = 0.0, s2 = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        const double d = g[r * n + j] * gi->data[j];
                        s1 += d;
                        s2 += d * xhat[r * n + j];
                    }
                    for (std::size_t j = 0; j < n; ++j) {
                        const double d = g[r * n + j] * gi->data[j];
                        gx[r * n + j] += inv_std[r] / dn * (dn * d - s1 - xhat[r * n + j] * s2);
                    }
                }
            }
        });
    }
    return result;
}

// Inverted dropout. In evaluation mode (or rate 0) the input is returned as is.
inline Tensor dropout(const Tensor& x, double rate, Rng* rng, bool training) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
    if (!training || rate == 0.0) return x;
    if (rng == nullptr) throw ContractError("dropout in training mode needs an Rng");
    const double keep_scale = 1.0 / (1.0 - rate);
    std::vector<double> factor(x.size());
    for (auto& f : factor) f = rng->uniform() < rate ? 0.0 : keep_scale;
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor[i];
    Tensor result(x.shape(), std::move(out));
    if (detail::should_record({&x})) {
        detail::attach(result, [xi = x.impl(), factor = std::move(factor)](std::span<const double> g) {
            if (!xi->requires_grad) return;
            auto& gx = detail::grad_buffer(*xi);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor[i];
        });
    }
    return result;
}

inline Tensor reshape(const Tensor& x, Shape shape) {
    if (element_count(shape) != x.size())
        throw DimensionError("reshape: " + to_string(x.shape()) + " cannot become " + to_string(shape));
    Tensor result(std::move(shape), x.vec());
    if (detail::should_record({&x})) {
        detail::attach(result, [xi = x.impl()](std::span<const double> g) {
            if (!xi->requires_grad) return;
            auto& gx = detail::grad_buffer(*xi);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        });
    }
    return result;
}

// Reorders axes: output axis i is input axis `axes[i]`.
inline Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
    const std::size_t r = x.rank();
    if (axes.size() != r) throw DimensionError("permute: axis list does not match rank of " + to_string(x.shape()));
    std::vector<char> seen(r, 0);
    for (auto a : axes) {
        if (a >= r || seen[a]) throw DimensionError("permute: invalid axis list");
        seen[a] = 1;
    }
    std::vector<std::size_t> in_strides(r, 1);
    for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.dim(i);
    Shape out_shape(r);
    for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.dim(axes[i]);
    // source offset of each output element
    std::vector<std::size_t> source(x.size());
    std::vector<std::size_t> idx(r, 0);
    for (std::size_t flat = 0; flat < source.size(); ++flat) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < r; ++i) off += idx[i] * in_strides[axes[i]];
        source[flat] = off;
        for (std::size_t i = r; i-- > 0;) {
            if (++idx[i] < out_shape[i]) break;
            idx[i] = 0;
        }
    }
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[source[i]];
    Tensor result(std::move(out_shape), std::move(out));
    if (detail::should_record({&x})) {
        detail::attach(result, [xi = x.impl(), source = std::move(source)](std::span<const double> g) {
            if (!xi->requires_grad) return;
            auto& gx = detail::grad_buffer(*xi);
            for (std::size_t i = 0; i < g.size(); ++i) gx[source[i]] += g[i];
        });
    }
    return result;
}

// Contiguous range [start, start + length) of `axis`.
inline Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length) {
    const auto ax = detail::resolve_axis(x, axis);
    const auto s = detail::split_at(x.shape(), ax);
    if (length == 0 || start + length > s.length)
        throw DimensionError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                             ") out of range for axis of length " + std::to_string(s.length));
    Shape out_shape = x.shape();
    out_shape[ax] = length;
    std::vector<double> out(s.outer * length * s.inner);
    for (std::size_t o = 0; o < s.outer; ++o)
        std::copy_n(x.vec().data() + (o * s.length + start) * s.inner, length * s.inner,
                    out.data() + o * length * s.inner);
    Tensor result(std::move(out_shape), std::move(out));
    if (detail::should_record({&x})) {
        detail::attach(result, [xi = x.impl(), s, start, length](std::span<const double> g) {
            if (!xi->requires_grad) return;
            auto& gx = detail::grad_buffer(*xi);
            for (std::size_t o = 0; o < s.outer; ++o)
                for (std::size_t q = 0; q < length * s.inner; ++q)
                    gx[(o * s.length + start) * s.inner + q] += g[o * length * s.inner + q];
        });
    }
    return result;
}

// Gathers the listed positions of `axis` (repeats allowed).
inline Tensor index_select(const Tensor& x, int axis, const std::vector<std::size_t>& indices) {
    const auto ax = detail::resolve_axis(x, axis);
    const auto s = detail::split_at(x.shape(), ax);
    if (indices.empty()) throw DimensionError("index_select: empty index list");
    for (auto i : indices)
        if (i >= s.length) throw DimensionError("index_select: index " + std::to_string(i) + " out of range");
    Shape out_shape = x.shape();
    out_shape[ax] = indices.size();
    const std::size_t k = indices.size();
    std::vector<double> out(s.outer * k * s.inner);
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t q = 0; q < k; ++q)
            std::copy_n(x.vec().data() + (o * s.length + indices[q]) * s.inner, s.inner,
                        out.data() + (o * k + q) * s.inner);
    Tensor result(std::move(out_shape), std::move(out));
    if (detail::should_record({&x})) {
        detail::attach(result, [xi = x.impl(), s, indices, k](std::span<const double> g) {
            if (!xi->requires_grad) return;
            auto& gx = detail::grad_buffer(*xi);
            for (std::size_t o = 0; o < s.outer; ++o)
                for (std::size_t q = 0; q < k; ++q)
                    for (std::size_t in = 0; in < s.inner; ++in)
                        gx[(o * s.length + indices[q]) * s.inner + in] += g[(o * k + q) * s.inner + in];
        });
    }
    return result;
}

// Inverse layout of index_select: slice q of x goes to position indices[q] of
// a zero tensor whose `axis` has length `size`. Indices must be distinct.
inline Tensor index_place(const Tensor& x, int axis, const std::vector<std::size_t>& indices, std::size_t size) {
    const auto ax = detail::resolve_axis(x, axis);
    const auto s = detail::split_at(x.shape(), ax);
    if (indices.size() != s.length)
        throw DimensionError("index_place: " + std::to_string(indices.size()) + " indices for axis of length " +
                             std::to_string(s.length));
    std::vector<char> used(size, 0);
    for (auto i : indices) {
        if (i >= size || used[i]) throw DimensionError("index_place: index out of range or repeated");
        used[i] = 1;
    }
    Shape out_shape = x.shape();
    out_shape[ax] = size;
    const std::size_t k = s.length;
    std::vector<double> out(s.outer * size * s.inner, 0.0);
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t q = 0; q < k; ++q)
            std::copy_n(x.vec().data() + (o * k + q) * s.inner, s.inner,
                        out.data() + (o * size + indices[q]) * s.inner);
    Tensor result(std::move(out_shape), std::move(out));
    if (detail::should_record({&x})) {
        detail::attach(result, [xi = x.impl(), s, indices, k, size](std::span<const double> g) {
            if (!xi->requires_grad) return;
            auto& gx = detail::grad_buffer(*xi);
            for (std::size_t o = 0; o < s.outer; ++o)
                for (std::size_t q = 0; q < k; ++q)
                    for (std::size_t in = 0; in < s.inner; ++in)
                        gx[(o * k + q) * s.inner + in] += g[(o * size + indices[q]) * s.inner + in];
        });
    }
    return result;
}

// Multiplies every slice along `axis` by the matching entry of the vector `s`.
inline Tensor scale_along(const Tensor& x, const Tensor& factors, int axis) {
    const auto ax = detail::resolve_axis(x, axis);
    const auto sp = detail::split_at(x.shape(), ax);
    if (factors.shape() != Shape{sp.length})
        throw DimensionError("scale_along: factors " + to_string(factors.shape()) + " do not match axis of " +
                             to_string(x.shape()));
    std::vector<double> out(x.size());
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t l = 0; l < sp.length; ++l)
            for (std::size_t in = 0; in < sp.inner; ++in) {
                const std::size_t i = (o * sp.length + l) * sp.inner + in;
                out[i] = x[i] * factors[l];
            }
    Tensor result(x.shape(), std::move(out));
    if (detail::should_record({&x, &factors})) {
        detail::attach(result, [xi = x.impl(), fi = factors.impl(), sp](std::span<const double> g) {
            auto* gx = xi->requires_grad ? &detail::grad_buffer(*xi) : nullptr;
            auto* gf = fi->requires_grad ? &detail::grad_buffer(*fi) : nullptr;
            for (std::size_t o = 0; o < sp.outer; ++o)
                for (std::size_t l = 0; l < sp.length; ++l)
                    for (std::size_t in = 0; in < sp.inner; ++in) {
                        const std::size_t i = (o * sp.length + l) * sp.inner + in;
                        if (gx) (*gx)[i] += g[i] * fi->data[l];
                        if (gf) (*gf)[l] += g[i] * xi->data[i];
                    }
        });
    }
    return result;
}

// out[n, i, j, :] = a[n, i, :] + b[n, j, :] for a, b of shape [N, k, d].
inline Tensor pairwise_sum(const Tensor& a, const Tensor& b) {
    if (a.rank() != 3 || a.shape() != b.shape())
        throw DimensionError("pairwise_sum: expected equal [N, k, d] shapes, got " + to_string(a.shape()) + " and " +
                             to_string(b.shape()));
    const std::size_t N = a.dim(0), k = a.dim(1), d = a.dim(2);
    std::vector<double> out(N * k * k * d);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < k; ++j)
                for (std::size_t c = 0; c < d; ++c)
                    out[((n * k + i) * k + j) * d + c] = a[(n * k + i) * d + c] + b[(n * k + j) * d + c];
    Tensor result({N, k, k, d}, std::move(out));
    if (detail::should_record({&a, &b})) {
        detail::attach(result, [ai = a.impl(), bi = b.impl(), N, k, d](std::span<const double> g) {
            auto* ga = ai->requires_grad ? &detail::grad_buffer(*ai) : nullptr;
            auto* gb = bi->requires_grad ? &detail::grad_buffer(*bi) : nullptr;
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t i = 0; i < k; ++i)
                    for (std::size_t j = 0; j < k; ++j)
                        for (std::size_t c = 0; c < d; ++c) {
                            const double v = g[((n * k + i) * k + j) * d + c];
                            if (ga) (*ga)[(n * k + i) * d + c] += v;
                            if (gb) (*gb)[(n * k + j) * d + c] += v;
                        }
        });
    }
    return result;
}

// Mean squared error over all elements.
inline Tensor mse_loss(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape())
        throw ContractError("mse_loss: prediction " + to_string(pred.shape()) + " vs target " +
                            to_string(target.shape()));
    const auto diff = sub(pred, target);
    return mean_all(mul(diff, diff));
}

}  // namespace epigraph
