#include "fgpfe/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <thread>

#include "fgpfe/error.hpp"

namespace fgpfe::nd {

namespace {

// Splits [0, rows) into contiguous blocks, one per worker. Each row is computed
// by exactly one worker, so the result does not depend on the split.
template <class F>
void parallel_rows(std::size_t rows, std::size_t work_per_row, F&& body) {
    const auto threads = static_cast<std::size_t>(num_threads());
    if (threads <= 1 || rows * work_per_row < (1u << 16) || rows < threads) {
        body(std::size_t{0}, rows);
        return;
    }
    std::vector<std::jthread> workers;
    const std::size_t block = (rows + threads - 1) / threads;
    for (std::size_t t = 1; t < threads; ++t) {
        const std::size_t lo = t * block;
        const std::size_t hi = std::min(rows, lo + block);
        if (lo >= hi) break;
        workers.emplace_back([&body, lo, hi] { body(lo, hi); });
    }
    body(std::size_t{0}, std::min(rows, block));
}

void require(bool ok, const std::string& what) {
    if (!ok) throw ShapeError(what);
}

// Strides for broadcasting `from` against `to` (same rank): extent-1 axes get stride 0.
std::vector<std::size_t> broadcast_strides(const Shape& from, const Shape& to) {
    std::vector<std::size_t> strides(to.size(), 0);
    std::size_t s = 1;
    for (std::size_t k = to.size(); k-- > 0;) {
        strides[k] = from[k] == 1 && to[k] != 1 ? 0 : s;
        s *= from[k];
    }
    return strides;
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    require(a.size() == b.size(), std::string(op) + ": rank mismatch " + shape_str(a) + " vs " + shape_str(b));
    Shape out(a.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
        if (a[k] == b[k] || b[k] == 1) {
            out[k] = a[k];
        } else if (a[k] == 1) {
            out[k] = b[k];
        } else {
            throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        }
    }
    return out;
}

// Visits every output element with the flat offsets into a and b.
template <class F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa, const std::vector<std::size_t>& sb,
                        F&& f) {
    const std::size_t n = shape_numel(out);
    if (n == 0) return;
    if (out.empty()) {
        f(std::size_t{0}, std::size_t{0}, std::size_t{0});
        return;
    }
    const std::size_t rank = out.size();
    const std::size_t last = out.back(), la = sa.back(), lb = sb.back();
    std::vector<std::size_t> idx(rank, 0);
    std::size_t oa = 0, ob = 0;
    for (std::size_t i = 0; i < n; i += last) {
        for (std::size_t j = 0; j < last; ++j) f(i + j, oa + j * la, ob + j * lb);
        for (std::size_t k = rank - 1; k-- > 0;) {
            ++idx[k];
            oa += sa[k];
            ob += sb[k];
            if (idx[k] < out[k]) break;
            oa -= sa[k] * idx[k];
            ob -= sb[k] * idx[k];
            idx[k] = 0;
        }
    }
}

enum class BinaryKind { mul, add };

Var binary(const Var& a, const Var& b, BinaryKind kind) {
    const char* name = kind == BinaryKind::mul ? "ewmul" : "add";
    const Shape out_shape = broadcast_shape(a.shape(), b.shape(), name);
    Tensor out(out_shape);
    const auto& av = a.value();
    const auto& bv = b.value();
    const bool same = a.shape() == b.shape();
    if (same) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = kind == BinaryKind::mul ? av[i] * bv[i] : av[i] + bv[i];
    } else {
        const auto sa = broadcast_strides(a.shape(), out_shape);
        const auto sb = broadcast_strides(b.shape(), out_shape);
        for_each_broadcast(out_shape, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
            out[i] = kind == BinaryKind::mul ? av[ia] * bv[ib] : av[ia] + bv[ib];
        });
    }
    return make_op(std::move(out), {a, b}, [kind, same, out_shape](Node& self) {
        Node& na = *self.inputs[0];
        Node& nb = *self.inputs[1];
        const auto& g = self.grad;
        const auto sa = broadcast_strides(na.value.shape(), out_shape);
        const auto sb = broadcast_strides(nb.value.shape(), out_shape);
        if (na.requires_grad) {
            auto& ga = na.grad_buffer();
            if (same) {
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += kind == BinaryKind::mul ? g[i] * nb.value[i] : g[i];
            } else {
                for_each_broadcast(out_shape, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
                    ga[ia] += kind == BinaryKind::mul ? g[i] * nb.value[ib] : g[i];
                });
            }
        }
        if (nb.requires_grad) {
            auto& gb = nb.grad_buffer();
            if (same) {
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += kind == BinaryKind::mul ? g[i] * na.value[i] : g[i];
            } else {
                for_each_broadcast(out_shape, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
                    gb[ib] += kind == BinaryKind::mul ? g[i] * na.value[ia] : g[i];
                });
            }
        }
    });
}

struct AxisSplit {
    std::size_t outer, extent, inner;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
    AxisSplit s{1, shape[axis], 1};
    for (std::size_t k = 0; k < axis; ++k) s.outer *= shape[k];
    for (std::size_t k = axis + 1; k < shape.size(); ++k) s.inner *= shape[k];
    return s;
}

}  // namespace

double logistic(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
    require(weight.shape().size() == 2, "linear: weight must be [C_out, C_in], got " + shape_str(weight.shape()));
    const std::size_t c_out = weight.dim(0);
    const std::size_t c_in = weight.dim(1);
    require(x.shape().size() >= 1 && x.shape().back() == c_in,
            "linear: input " + shape_str(x.shape()) + " does not end in C_in=" + std::to_string(c_in));
    if (bias.defined()) {
        require(bias.shape() == Shape{c_out}, "linear: bias must be [" + std::to_string(c_out) + "], got " +
                                                  shape_str(bias.shape()));
    }
    const std::size_t rows = x.value().size() / c_in;
    Shape out_shape = x.shape();
    out_shape.back() = c_out;
    Tensor out(out_shape);

    // Transposed weight keeps the inner loop contiguous over outputs; each
    // output still accumulates bias + w0 x0 + w1 x1 + ... in ascending i.
    // Zero inputs are skipped, which is most of them after a ReLU or on
    // sparse bins.
    std::vector<double> wt(c_in * c_out);
    const auto& w = weight.value();
    for (std::size_t j = 0; j < c_out; ++j)
        for (std::size_t i = 0; i < c_in; ++i) wt[i * c_out + j] = w[j * c_in + i];
    const double* xv = x.value().data().data();
    const double* bv = bias.defined() ? bias.value().data().data() : nullptr;
    double* yv = out.data().data();
    parallel_rows(rows, c_in * c_out, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t m = lo; m < hi; ++m) {
            double* y = yv + m * c_out;
            const double* xr = xv + m * c_in;
            for (std::size_t j = 0; j < c_out; ++j) y[j] = bv ? bv[j] : 0.0;
            for (std::size_t i = 0; i < c_in; ++i) {
                const double xi = xr[i];
                if (xi == 0.0) continue;
                const double* wr = wt.data() + i * c_out;
                for (std::size_t j = 0; j < c_out; ++j) y[j] += xi * wr[j];
            }
        }
    });

    std::vector<Var> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    return make_op(std::move(out), std::move(inputs), [rows, c_in, c_out](Node& self) {
        Node& nx = *self.inputs[0];
        Node& nw = *self.inputs[1];
        const double* g = self.grad.data().data();
        if (nx.requires_grad) {
            double* gx = nx.grad_buffer().data().data();
            const double* w = nw.value.data().data();
            parallel_rows(rows, c_in * c_out, [&](std::size_t lo, std::size_t hi) {
                for (std::size_t m = lo; m < hi; ++m) {
                    double* gr = gx + m * c_in;
                    for (std::size_t j = 0; j < c_out; ++j) {
                        const double gj = g[m * c_out + j];
                        const double* wr = w + j * c_in;
                        for (std::size_t i = 0; i < c_in; ++i) gr[i] += gj * wr[i];
                    }
                }
            });
        }
        if (nw.requires_grad) {
            double* gw = nw.grad_buffer().data().data();
            const double* xv = nx.value.data().data();
            for (std::size_t m = 0; m < rows; ++m) {
                const double* xr = xv + m * c_in;
                for (std::size_t j = 0; j < c_out; ++j) {
                    const double gj = g[m * c_out + j];
                    double* gr = gw + j * c_in;
                    for (std::size_t i = 0; i < c_in; ++i) gr[i] += gj * xr[i];
                }
            }
        }
        if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
            double* gb = self.inputs[2]->grad_buffer().data().data();
            for (std::size_t m = 0; m < rows; ++m)
                for (std::size_t j = 0; j < c_out; ++j) gb[j] += g[m * c_out + j];
        }
    });
}

Var conv1d(const Var& x, const Var& kernel) {
    require(kernel.shape().size() == 3, "conv1d: kernel must be [C_out, C_in, K], got " + shape_str(kernel.shape()));
    const std::size_t c_out = kernel.dim(0);
    const std::size_t c_in = kernel.dim(1);
    const std::size_t k = kernel.dim(2);
    if (k % 2 == 0) throw ShapeError("conv1d: kernel size must be odd, got " + std::to_string(k));
    require(x.shape().size() >= 2 && x.shape().back() == c_in,
            "conv1d: input " + shape_str(x.shape()) + " must be [..., L, " + std::to_string(c_in) + "]");
    const std::size_t len = x.shape()[x.shape().size() - 2];
    const std::size_t batch = len == 0 ? 0 : x.value().size() / (len * c_in);
    const auto pad = static_cast<std::ptrdiff_t>((k - 1) / 2);
    Shape out_shape = x.shape();
    out_shape.back() = c_out;
    Tensor out(out_shape);
    const auto& xv = x.value();
    const auto& kv = kernel.value();
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t l = 0; l < len; ++l) {
            for (std::size_t o = 0; o < c_out; ++o) {
                double acc = 0.0;
                for (std::size_t c = 0; c < c_in; ++c) {
                    for (std::size_t t = 0; t < k; ++t) {
                        const auto src = static_cast<std::ptrdiff_t>(l) + static_cast<std::ptrdiff_t>(t) - pad;
                        if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
                        acc += kv[(o * c_in + c) * k + t] * xv[(b * len + static_cast<std::size_t>(src)) * c_in + c];
                    }
                }
                out[(b * len + l) * c_out + o] = acc;
            }
        }
    }
    return make_op(std::move(out), {x, kernel}, [batch, len, c_in, c_out, k, pad](Node& self) {
        Node& nx = *self.inputs[0];
        Node& nk = *self.inputs[1];
        const auto& g = self.grad;
        Tensor* gx = nx.requires_grad ? &nx.grad_buffer() : nullptr;
        Tensor* gk = nk.requires_grad ? &nk.grad_buffer() : nullptr;
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t l = 0; l < len; ++l) {
                for (std::size_t o = 0; o < c_out; ++o) {
                    const double go = g[(b * len + l) * c_out + o];
                    for (std::size_t c = 0; c < c_in; ++c) {
                        for (std::size_t t = 0; t < k; ++t) {
                            const auto src = static_cast<std::ptrdiff_t>(l) + static_cast<std::ptrdiff_t>(t) - pad;
                            if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
                            const std::size_t xi = (b * len + static_cast<std::size_t>(src)) * c_in + c;
                            const std::size_t ki = (o * c_in + c) * k + t;
                            if (gx) (*gx)[xi] += go * nk.value[ki];
                            if (gk) (*gk)[ki] += go * nx.value[xi];
                        }
                    }
                }
            }
        }
    });
}

Var reduce(const Var& x, std::size_t axis, ReduceMode mode, bool keepdim) {
    require(axis < x.shape().size(), "reduce: axis " + std::to_string(axis) + " invalid for " + shape_str(x.shape()));
    const auto sp = split_at(x.shape(), axis);
    if (sp.extent == 0) throw ShapeError("reduce: empty axis " + std::to_string(axis));
    Shape out_shape = x.shape();
    if (keepdim) {
        out_shape[axis] = 1;
    } else {
        out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
    }
    Tensor out(out_shape);
    const auto& xv = x.value();
    std::vector<std::size_t> argmax;
    if (mode == ReduceMode::max) argmax.resize(sp.outer * sp.inner);
    const bool record = mode == ReduceMode::max && BranchSignature::active();
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t i = 0; i < sp.inner; ++i) {
            const std::size_t base = o * sp.extent * sp.inner + i;
            if (mode == ReduceMode::mean) {
                double acc = 0.0;
                for (std::size_t e = 0; e < sp.extent; ++e) acc += xv[base + e * sp.inner];
                out[o * sp.inner + i] = acc / static_cast<double>(sp.extent);
            } else {
                std::size_t best = 0;
                double bv = xv[base];
                for (std::size_t e = 1; e < sp.extent; ++e) {
                    if (xv[base + e * sp.inner] > bv) {
                        bv = xv[base + e * sp.inner];
                        best = e;
                    }
                }
                out[o * sp.inner + i] = bv;
                argmax[o * sp.inner + i] = best;
                if (record) BranchSignature::record(best);
            }
        }
    }
    return make_op(std::move(out), {x}, [sp, mode, argmax = std::move(argmax)](Node& self) {
        Node& nx = *self.inputs[0];
        auto& gx = nx.grad_buffer();
        const auto& g = self.grad;
        for (std::size_t o = 0; o < sp.outer; ++o) {
            for (std::size_t i = 0; i < sp.inner; ++i) {
                const std::size_t base = o * sp.extent * sp.inner + i;
                const double go = g[o * sp.inner + i];
                if (mode == ReduceMode::mean) {
                    const double share = go / static_cast<double>(sp.extent);
                    for (std::size_t e = 0; e < sp.extent; ++e) gx[base + e * sp.inner] += share;
                } else {
                    gx[base + argmax[o * sp.inner + i] * sp.inner] += go;
                }
            }
        }
    });
}

Var sigmoid(const Var& x) {
    Tensor out(x.shape());
    const auto& xv = x.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = logistic(xv[i]);
    return make_op(out, {x}, [](Node& self) {
        auto& gx = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i) {
            const double s = self.value[i];
            gx[i] += self.grad[i] * s * (1.0 - s);
        }
    });
}

Var relu(const Var& x) {
    Tensor out(x.shape());
    const auto& xv = x.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    if (BranchSignature::active()) {
        for (std::size_t i = 0; i < out.size(); ++i) BranchSignature::record(xv[i] > 0.0 ? i : ~i);
    }
    return make_op(std::move(out), {x}, [](Node& self) {
        Node& nx = *self.inputs[0];
        auto& gx = nx.grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i)
            if (nx.value[i] > 0.0) gx[i] += self.grad[i];
    });
}

Var ewmul(const Var& a, const Var& b) { return binary(a, b, BinaryKind::mul); }
Var add(const Var& a, const Var& b) { return binary(a, b, BinaryKind::add); }

Var scale(const Var& x, double factor) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * factor;
    return make_op(std::move(out), {x}, [factor](Node& self) {
        auto& gx = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * factor;
    });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
    require(!parts.empty(), "concat: no inputs");
    const Shape& first = parts[0].shape();
    require(axis < first.size(), "concat: axis " + std::to_string(axis) + " invalid for " + shape_str(first));
    Shape out_shape = first;
    out_shape[axis] = 0;
    std::vector<std::size_t> extents;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        require(s.size() == first.size(), "concat: rank mismatch " + shape_str(first) + " vs " + shape_str(s));
        for (std::size_t k = 0; k < s.size(); ++k)
            if (k != axis) require(s[k] == first[k], "concat: extent mismatch " + shape_str(first) + " vs " + shape_str(s));
        extents.push_back(s[axis]);
        out_shape[axis] += s[axis];
    }
    const auto sp = split_at(out_shape, axis);
    Tensor out(out_shape);
    for (std::size_t o = 0; o < sp.outer; ++o) {
        std::size_t at = o * sp.extent * sp.inner;
        for (std::size_t p = 0; p < parts.size(); ++p) {
            const std::size_t block = extents[p] * sp.inner;
            const auto src = parts[p].value().data().subspan(o * block, block);
            std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(at));
            at += block;
        }
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    return make_op(std::move(out), std::move(inputs), [sp, extents](Node& self) {
        for (std::size_t o = 0; o < sp.outer; ++o) {
            std::size_t at = o * sp.extent * sp.inner;
            for (std::size_t p = 0; p < extents.size(); ++p) {
                const std::size_t block = extents[p] * sp.inner;
                Node& np = *self.inputs[p];
                if (np.requires_grad) {
                    auto& gp = np.grad_buffer();
                    for (std::size_t e = 0; e < block; ++e) gp[o * block + e] += self.grad[at + e];
                }
                at += block;
            }
        }
    });
}

Var slice(const Var& x, std::size_t axis, std::size_t begin, std::size_t end) {
    require(axis < x.shape().size(), "slice: axis " + std::to_string(axis) + " invalid for " + shape_str(x.shape()));
    require(begin <= end && end <= x.shape()[axis], "slice: range [" + std::to_string(begin) + ", " +
                                                        std::to_string(end) + ") outside " + shape_str(x.shape()));
    const auto sp = split_at(x.shape(), axis);
    Shape out_shape = x.shape();
    out_shape[axis] = end - begin;
    Tensor out(out_shape);
    const std::size_t block = (end - begin) * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o) {
        const std::size_t from = (o * sp.extent + begin) * sp.inner;
        for (std::size_t e = 0; e < block; ++e) out[o * block + e] = x.value()[from + e];
    }
    return make_op(std::move(out), {x}, [sp, begin, block](Node& self) {
        auto& gx = self.inputs[0]->grad_buffer();
        for (std::size_t o = 0; o < sp.outer; ++o) {
            const std::size_t from = (o * sp.extent + begin) * sp.inner;
            for (std::size_t e = 0; e < block; ++e) gx[from + e] += self.grad[o * block + e];
        }
    });
}

Var reshape(const Var& x, Shape shape) {
    Tensor out = x.value().reshaped(std::move(shape));
    return make_op(std::move(out), {x}, [](Node& self) {
        auto& gx = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
    });
}

Var gather_rows(const Var& x, std::span<const std::size_t> rows) {
    require(!x.shape().empty(), "gather_rows: scalar input");
    const std::size_t n = x.dim(0);
    const std::size_t width = n == 0 ? shape_numel(Shape(x.shape().begin() + 1, x.shape().end())) : x.value().size() / n;
    Shape out_shape = x.shape();
    out_shape[0] = rows.size();
    Tensor out(out_shape);
    for (std::size_t m = 0; m < rows.size(); ++m) {
        if (rows[m] >= n) throw ShapeError("gather_rows: row " + std::to_string(rows[m]) + " >= " + std::to_string(n));
        std::copy_n(x.value().data().begin() + static_cast<std::ptrdiff_t>(rows[m] * width), width,
                    out.data().begin() + static_cast<std::ptrdiff_t>(m * width));
    }
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    return make_op(std::move(out), {x}, [idx = std::move(idx), width](Node& self) {
        auto& gx = self.inputs[0]->grad_buffer();
        for (std::size_t m = 0; m < idx.size(); ++m)
            for (std::size_t c = 0; c < width; ++c) gx[idx[m] * width + c] += self.grad[m * width + c];
    });
}

Var scatter_rows(const Var& x, std::span<const std::size_t> rows, std::size_t n_out) {
    require(!x.shape().empty() && x.dim(0) == rows.size(),
            "scatter_rows: " + std::to_string(rows.size()) + " targets for input " + shape_str(x.shape()));
    Shape out_shape = x.shape();
    out_shape[0] = n_out;
    const std::size_t width = shape_numel(Shape(x.shape().begin() + 1, x.shape().end()));
    Tensor out(out_shape);
    std::vector<char> taken(n_out, 0);
    for (std::size_t m = 0; m < rows.size(); ++m) {
        if (rows[m] >= n_out) throw ShapeError("scatter_rows: row " + std::to_string(rows[m]) + " >= " + std::to_string(n_out));
        if (taken[rows[m]]) throw ShapeError("scatter_rows: duplicate target row " + std::to_string(rows[m]));
        taken[rows[m]] = 1;
        std::copy_n(x.value().data().begin() + static_cast<std::ptrdiff_t>(m * width), width,
                    out.data().begin() + static_cast<std::ptrdiff_t>(rows[m] * width));
    }
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    return make_op(std::move(out), {x}, [idx = std::move(idx), width](Node& self) {
        auto& gx = self.inputs[0]->grad_buffer();
        for (std::size_t m = 0; m < idx.size(); ++m)
            for (std::size_t c = 0; c < width; ++c) gx[m * width + c] += self.grad[idx[m] * width + c];
    });
}

Var segment_reduce(const Var& x, std::span<const std::size_t> segment, std::size_t n_segments, ReduceMode mode) {
    require(!x.shape().empty() && x.dim(0) == segment.size(),
            "segment_reduce: " + std::to_string(segment.size()) + " segment ids for input " + shape_str(x.shape()));
    const std::size_t rows = segment.size();
    const std::size_t width = shape_numel(Shape(x.shape().begin() + 1, x.shape().end()));
    Shape out_shape = x.shape();
    out_shape[0] = n_segments;
    Tensor out(out_shape);
    const double* xv = x.value().data().data();
    double* ov = out.data().data();

    std::vector<std::size_t> counts(n_segments, 0);
    for (auto s : segment) {
        if (s >= n_segments) throw ShapeError("segment_reduce: id " + std::to_string(s) + " >= " + std::to_string(n_segments));
        ++counts[s];
    }
    constexpr std::size_t kNone = static_cast<std::size_t>(-1);
    std::vector<std::size_t> argmax;
    if (mode == ReduceMode::mean) {
        for (std::size_t m = 0; m < rows; ++m) {
            double* o = ov + segment[m] * width;
            const double* r = xv + m * width;
            for (std::size_t c = 0; c < width; ++c) o[c] += r[c];
        }
        for (std::size_t s = 0; s < n_segments; ++s) {
            if (counts[s] == 0) continue;
            const double n = static_cast<double>(counts[s]);
            for (std::size_t c = 0; c < width; ++c) ov[s * width + c] /= n;
        }
    } else {
        argmax.assign(n_segments * width, kNone);
        for (std::size_t m = 0; m < rows; ++m) {
            const std::size_t s = segment[m];
            double* o = ov + s * width;
            std::size_t* a = argmax.data() + s * width;
            const double* r = xv + m * width;
            for (std::size_t c = 0; c < width; ++c) {
                if (a[c] == kNone || r[c] > o[c]) {
                    o[c] = r[c];
                    a[c] = m;
                }
            }
        }
        if (BranchSignature::active())
            for (auto a : argmax) BranchSignature::record(a);
    }
    std::vector<std::size_t> seg(segment.begin(), segment.end());
    return make_op(std::move(out), {x},
                   [mode, width, seg = std::move(seg), counts = std::move(counts), argmax = std::move(argmax)](Node& self) {
                       auto& gx = self.inputs[0]->grad_buffer();
                       const auto& g = self.grad;
                       if (mode == ReduceMode::mean) {
                           for (std::size_t m = 0; m < seg.size(); ++m) {
                               const double n = static_cast<double>(counts[seg[m]]);
                               for (std::size_t c = 0; c < width; ++c) gx[m * width + c] += g[seg[m] * width + c] / n;
                           }
                       } else {
                           for (std::size_t i = 0; i < argmax.size(); ++i) {
                               if (argmax[i] == kNone) continue;
                               gx[argmax[i] * width + i % width] += g[i];
                           }
                       }
                   });
}

Var sum(const Var& x) {
    double acc = 0.0;
    for (double v : x.value().data()) acc += v;
    return make_op(Tensor::scalar(acc), {x}, [](Node& self) {
        auto& gx = self.inputs[0]->grad_buffer();
        const double g = self.grad[0];
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
}

Var weighted_sum(const Var& x, const Tensor& weights) {
    require(weights.size() == x.value().size(), "weighted_sum: " + std::to_string(weights.size()) + " weights for " +
                                                    shape_str(x.shape()));
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) acc += x.value()[i] * weights[i];
    return make_op(Tensor::scalar(acc), {x}, [weights](Node& self) {
        auto& gx = self.inputs[0]->grad_buffer();
        const double g = self.grad[0];
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * weights[i];
    });
}

double focal_term(double p, double y, const FocalParams& params) {
    const double pc = std::clamp(p, params.eps, 1.0 - params.eps);
    const bool pos = y > 0.5;
    const double pt = pos ? pc : 1.0 - pc;
    const double at = pos ? params.alpha : 1.0 - params.alpha;
    return -at * std::pow(1.0 - pt, params.gamma) * std::log(pt);
}

Var focal_loss(const Var& prob, const Tensor& target, const FocalParams& params) {
    if (prob.shape() != target.shape()) {
        throw ShapeError("focal_loss: prediction " + shape_str(prob.shape()) + " vs target " + shape_str(target.shape()));
    }
    const std::size_t n = target.size();
    const auto& pv = prob.value();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += focal_term(pv[i], target[i], params);
    if (BranchSignature::active()) {
        for (std::size_t i = 0; i < n; ++i)
            BranchSignature::record((pv[i] < params.eps ? 1u : 0u) | (pv[i] > 1.0 - params.eps ? 2u : 0u));
    }
    const double loss = n ? acc / static_cast<double>(n) : 0.0;
    return make_op(Tensor::scalar(loss), {prob}, [target, params, n](Node& self) {
        Node& np = *self.inputs[0];
        auto& gp = np.grad_buffer();
        const double g = self.grad[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double p = np.value[i];
            if (p < params.eps || p > 1.0 - params.eps) continue;  // clamped: flat
            const bool pos = target[i] > 0.5;
            const double pt = pos ? p : 1.0 - p;
            const double at = pos ? params.alpha : 1.0 - params.alpha;
            const double q = 1.0 - pt;
            // d/dpt of -at q^gamma log(pt)
            const double dpt =
                at * (params.gamma * std::pow(q, params.gamma - 1.0) * std::log(pt) - std::pow(q, params.gamma) / pt);
            gp[i] += g * (pos ? dpt : -dpt);
        }
    });
}

}  // namespace fgpfe::nd
