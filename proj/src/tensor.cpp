#include "seglat/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "seglat/errors.hpp"

namespace seglat {

namespace {

thread_local std::uint64_t g_flops = 0;

void check_finite(const std::vector<double>& v, const char* op) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw numeric_error(std::string(op) + ": non-finite value produced");
        }
    }
}

std::shared_ptr<detail::TensorImpl> make_node(Shape shape, std::vector<double> data) {
    auto n = std::make_shared<detail::TensorImpl>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    return n;
}

// Wires an op output: requires_grad if any parent does, records parents and
// the adjoint closure only in that case.
Tensor finish(std::shared_ptr<detail::TensorImpl> out,
              std::vector<std::shared_ptr<detail::TensorImpl>> parents,
              std::function<void(const detail::TensorImpl&)> backward_fn,
              const char* op) {
    check_finite(out->data, op);
    bool needs = false;
    for (const auto& p : parents) {
        if (p->requires_grad) needs = true;
    }
    if (needs) {
        out->requires_grad = true;
        out->parents = std::move(parents);
        out->backward_fn = std::move(backward_fn);
    }
    return wrap(std::move(out));
}

void require_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2) {
        throw shape_error(std::string(op) + ": expected rank-2 tensor, got shape " + shape_str(t.shape()));
    }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ")";
    return os.str();
}

std::uint64_t flop_count() { return g_flops; }
void reset_flop_count() { g_flops = 0; }
void add_flops(std::uint64_t n) { g_flops += n; }

namespace detail {

void TensorImpl::ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
}

void TensorImpl::accumulate(const std::vector<double>& g) {
    ensure_grad();
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
}

}  // namespace detail

Tensor wrap(std::shared_ptr<detail::TensorImpl> impl) { return Tensor(std::move(impl)); }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    auto n = make_node(shape, std::vector<double>(shape_numel(shape), value));
    n->requires_grad = requires_grad;
    return wrap(std::move(n));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape_numel(shape) != values.size()) {
        throw shape_error("from_data: shape " + shape_str(shape) + " does not match " +
                          std::to_string(values.size()) + " values");
    }
    check_finite(values, "from_data");
    auto n = make_node(std::move(shape), std::move(values));
    n->requires_grad = requires_grad;
    return wrap(std::move(n));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({}, {value}, requires_grad);
}

Tensor Tensor::identity(std::size_t n) {
    std::vector<double> d(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) d[i * n + i] = 1.0;
    return from_data({n, n}, std::move(d));
}

double Tensor::item() const {
    if (numel() != 1) {
        throw usage_error("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
    }
    return impl_->data[0];
}

const std::vector<double>& Tensor::grad() const {
    impl_->ensure_grad();
    return impl_->grad;
}

void Tensor::zero_grad() {
    impl_->grad.assign(impl_->data.size(), 0.0);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    const std::size_t m = a.extent(0), k = a.extent(1), k2 = b.extent(0), n = b.extent(1);
    if (k != k2) {
        throw shape_error("matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                          shape_str(b.shape()));
    }
    std::vector<double> c(m * n, 0.0);
    const double* pa = a.values().data();
    const double* pb = b.values().data();
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c.data() + i * n;
        const double* arow = pa + i * k;
        for (std::size_t t = 0; t < k; ++t) {
            const double av = arow[t];
            const double* brow = pb + t * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    add_flops(2ull * m * k * n);
    auto pa_node = a.ptr();
    auto pb_node = b.ptr();
    return finish(
        make_node({m, n}, std::move(c)), {pa_node, pb_node},
        [pa_node, pb_node, m, k, n](const detail::TensorImpl& out) {
            const double* g = out.grad.data();
            if (pa_node->requires_grad) {
                pa_node->ensure_grad();
                // dA = dC * B^T
                for (std::size_t i = 0; i < m; ++i) {
                    double* ga = pa_node->grad.data() + i * k;
                    const double* grow = g + i * n;
                    for (std::size_t t = 0; t < k; ++t) {
                        const double* brow = pb_node->data.data() + t * n;
                        double acc = 0.0;
                        for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        ga[t] += acc;
                    }
                }
            }
            if (pb_node->requires_grad) {
                pb_node->ensure_grad();
                // dB = A^T * dC
                for (std::size_t t = 0; t < k; ++t) {
                    double* gb = pb_node->grad.data() + t * n;
                    for (std::size_t i = 0; i < m; ++i) {
                        const double av = pa_node->data[i * k + t];
                        const double* grow = g + i * n;
                        for (std::size_t j = 0; j < n; ++j) gb[j] += av * grow[j];
                    }
                }
            }
        },
        "matmul");
}

Tensor transpose(const Tensor& a) {
    require_rank2(a, "transpose");
    const std::size_t m = a.extent(0), n = a.extent(1);
    std::vector<double> t(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) t[j * m + i] = a.values()[i * n + j];
    auto pa = a.ptr();
    return finish(make_node({n, m}, std::move(t)), {pa},
                  [pa, m, n](const detail::TensorImpl& out) {
                      if (!pa->requires_grad) return;
                      pa->ensure_grad();
                      for (std::size_t i = 0; i < m; ++i)
                          for (std::size_t j = 0; j < n; ++j)
                              pa->grad[i * n + j] += out.grad[j * m + i];
                  },
                  "transpose");
}

namespace {

Tensor binary_elementwise(const Tensor& a, const Tensor& b, const char* op,
                          double (*fwd)(double, double),
                          void (*bwd)(double ga_in, double av, double bv, double& ga, double& gb)) {
    if (a.shape() != b.shape()) {
        throw shape_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
    }
    const std::size_t n = a.numel();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(a.values()[i], b.values()[i]);
    add_flops(n);
    auto pa = a.ptr();
    auto pb = b.ptr();
    return finish(make_node(a.shape(), std::move(out)), {pa, pb},
                  [pa, pb, n, bwd](const detail::TensorImpl& o) {
                      if (pa->requires_grad) pa->ensure_grad();
                      if (pb->requires_grad) pb->ensure_grad();
                      for (std::size_t i = 0; i < n; ++i) {
                          double ga = 0.0, gb = 0.0;
                          bwd(o.grad[i], pa->data[i], pb->data[i], ga, gb);
                          if (pa->requires_grad) pa->grad[i] += ga;
                          if (pb->requires_grad) pb->grad[i] += gb;
                      }
                  },
                  op);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        a, b, "add", [](double x, double y) { return x + y; },
        [](double g, double, double, double& ga, double& gb) {
            ga = g;
            gb = g;
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        a, b, "sub", [](double x, double y) { return x - y; },
        [](double g, double, double, double& ga, double& gb) {
            ga = g;
            gb = -g;
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        a, b, "mul", [](double x, double y) { return x * y; },
        [](double g, double av, double bv, double& ga, double& gb) {
            ga = g * bv;
            gb = g * av;
        });
}

Tensor scale(const Tensor& a, double c) {
    const std::size_t n = a.numel();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = a.values()[i] * c;
    add_flops(n);
    auto pa = a.ptr();
    return finish(make_node(a.shape(), std::move(out)), {pa},
                  [pa, n, c](const detail::TensorImpl& o) {
                      if (!pa->requires_grad) return;
                      pa->ensure_grad();
                      for (std::size_t i = 0; i < n; ++i) pa->grad[i] += o.grad[i] * c;
                  },
                  "scale");
}

Tensor add_rowwise(const Tensor& a, const Tensor& bias) {
    require_rank2(a, "add_rowwise");
    const std::size_t rows = a.extent(0), cols = a.extent(1);
    if (bias.rank() != 1 || bias.extent(0) != cols) {
        throw shape_error("add_rowwise: bias shape " + shape_str(bias.shape()) +
                          " does not match columns of " + shape_str(a.shape()));
    }
    std::vector<double> out(a.values());
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] += bias.values()[j];
    add_flops(rows * cols);
    auto pa = a.ptr();
    auto pbias = bias.ptr();
    return finish(make_node(a.shape(), std::move(out)), {pa, pbias},
                  [pa, pbias, rows, cols](const detail::TensorImpl& o) {
                      if (pa->requires_grad) pa->accumulate(o.grad);
                      if (pbias->requires_grad) {
                          pbias->ensure_grad();
                          for (std::size_t i = 0; i < rows; ++i)
                              for (std::size_t j = 0; j < cols; ++j)
                                  pbias->grad[j] += o.grad[i * cols + j];
                      }
                  },
                  "add_rowwise");
}

Tensor softmax(const Tensor& x, std::size_t axis) {
    if (axis >= x.rank()) {
        throw shape_error("softmax: axis " + std::to_string(axis) + " out of range for shape " +
                          shape_str(x.shape()));
    }
    // Iterate over all slices along `axis`: outer x inner layout.
    std::size_t outer = 1, inner = 1;
    const std::size_t len = x.extent(axis);
    for (std::size_t i = 0; i < axis; ++i) outer *= x.extent(i);
    for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.extent(i);
    std::vector<double> out(x.numel());
    const double* in = x.values().data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t r = 0; r < inner; ++r) {
            const std::size_t base = o * len * inner + r;
            double mx = in[base];
            for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, in[base + i * inner]);
            double z = 0.0;
            for (std::size_t i = 0; i < len; ++i) {
                double e = std::exp(in[base + i * inner] - mx);
                out[base + i * inner] = e;
                z += e;
            }
            for (std::size_t i = 0; i < len; ++i) out[base + i * inner] /= z;
        }
    }
    add_flops(5ull * x.numel());
    auto px = x.ptr();
    auto out_node = make_node(x.shape(), std::move(out));
    return finish(out_node, {px},
                  [px, outer, inner, len](const detail::TensorImpl& o) {
                      if (!px->requires_grad) return;
                      px->ensure_grad();
                      for (std::size_t ou = 0; ou < outer; ++ou) {
                          for (std::size_t r = 0; r < inner; ++r) {
                              const std::size_t base = ou * len * inner + r;
                              double dot = 0.0;
                              for (std::size_t i = 0; i < len; ++i)
                                  dot += o.grad[base + i * inner] * o.data[base + i * inner];
                              for (std::size_t i = 0; i < len; ++i) {
                                  const std::size_t idx = base + i * inner;
                                  px->grad[idx] += o.data[idx] * (o.grad[idx] - dot);
                              }
                          }
                      }
                  },
                  "softmax");
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (eps <= 0.0) throw config_error("layer_norm: eps must be positive");
    if (x.rank() < 1) throw shape_error("layer_norm: scalar input");
    const std::size_t d = x.extent(x.rank() - 1);
    if (gain.numel() != d || bias.numel() != d) {
        throw shape_error("layer_norm: gain/bias length must equal last extent " + std::to_string(d));
    }
    const std::size_t rows = x.numel() / d;
    std::vector<double> out(x.numel());
    std::vector<double> norm(x.numel());   // saved for backward
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.values().data() + r * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += xr[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            double c = xr[j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t j = 0; j < d; ++j) {
            const double nv = (xr[j] - mean) * is;
            norm[r * d + j] = nv;
            out[r * d + j] = nv * gain.values()[j] + bias.values()[j];
        }
    }
    add_flops(5ull * x.numel());
    auto px = x.ptr();
    auto pg = gain.ptr();
    auto pb = bias.ptr();
    return finish(
        make_node(x.shape(), std::move(out)), {px, pg, pb},
        [px, pg, pb, rows, d, norm = std::move(norm), inv_std = std::move(inv_std)](
            const detail::TensorImpl& o) {
            if (pg->requires_grad) pg->ensure_grad();
            if (pb->requires_grad) pb->ensure_grad();
            if (px->requires_grad) px->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const double* g = o.grad.data() + r * d;
                const double* nr = norm.data() + r * d;
                if (pg->requires_grad || pb->requires_grad) {
                    for (std::size_t j = 0; j < d; ++j) {
                        if (pg->requires_grad) pg->grad[j] += g[j] * nr[j];
                        if (pb->requires_grad) pb->grad[j] += g[j];
                    }
                }
                if (px->requires_grad) {
                    // dx = is * (gy - mean(gy) - norm * mean(gy*norm)), gy = g*gain
                    double m1 = 0.0, m2 = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double gy = g[j] * pg->data[j];
                        m1 += gy;
                        m2 += gy * nr[j];
                    }
                    m1 /= static_cast<double>(d);
                    m2 /= static_cast<double>(d);
                    for (std::size_t j = 0; j < d; ++j) {
                        const double gy = g[j] * pg->data[j];
                        px->grad[r * d + j] += inv_std[r] * (gy - m1 - nr[j] * m2);
                    }
                }
            }
        },
        "layer_norm");
}

Tensor gelu(const Tensor& x) {
    const std::size_t n = x.numel();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double v = x.values()[i];
        out[i] = 0.5 * v * (1.0 + std::erf(v / M_SQRT2));
    }
    add_flops(8ull * n);
    auto px = x.ptr();
    return finish(make_node(x.shape(), std::move(out)), {px},
                  [px, n](const detail::TensorImpl& o) {
                      if (!px->requires_grad) return;
                      px->ensure_grad();
                      constexpr double inv_sqrt_2pi = 0.3989422804014327;
                      for (std::size_t i = 0; i < n; ++i) {
                          const double v = px->data[i];
                          const double cdf = 0.5 * (1.0 + std::erf(v / M_SQRT2));
                          const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
                          px->grad[i] += o.grad[i] * (cdf + v * pdf);
                      }
                  },
                  "gelu");
}

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.values()) s += v;
    add_flops(x.numel());
    auto px = x.ptr();
    return finish(make_node({}, {s}), {px},
                  [px](const detail::TensorImpl& o) {
                      if (!px->requires_grad) return;
                      px->ensure_grad();
                      for (double& g : px->grad) g += o.grad[0];
                  },
                  "sum");
}

Tensor mean_rows(const Tensor& x) {
    require_rank2(x, "mean_rows");
    const std::size_t rows = x.extent(0), cols = x.extent(1);
    std::vector<double> out(cols, 0.0);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) out[j] += x.values()[i * cols + j];
    for (std::size_t j = 0; j < cols; ++j) out[j] /= static_cast<double>(rows);
    add_flops(rows * cols + cols);
    auto px = x.ptr();
    return finish(make_node({1, cols}, std::move(out)), {px},
                  [px, rows, cols](const detail::TensorImpl& o) {
                      if (!px->requires_grad) return;
                      px->ensure_grad();
                      const double inv = 1.0 / static_cast<double>(rows);
                      for (std::size_t i = 0; i < rows; ++i)
                          for (std::size_t j = 0; j < cols; ++j)
                              px->grad[i * cols + j] += o.grad[j] * inv;
                  },
                  "mean_rows");
}

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count) {
    require_rank2(x, "slice_rows");
    const std::size_t rows = x.extent(0), cols = x.extent(1);
    if (start + count > rows) throw shape_error("slice_rows: range out of bounds");
    std::vector<double> out(x.values().begin() + start * cols,
                            x.values().begin() + (start + count) * cols);
    auto px = x.ptr();
    return finish(make_node({count, cols}, std::move(out)), {px},
                  [px, start, cols, count](const detail::TensorImpl& o) {
                      if (!px->requires_grad) return;
                      px->ensure_grad();
                      for (std::size_t i = 0; i < count * cols; ++i)
                          px->grad[start * cols + i] += o.grad[i];
                  },
                  "slice_rows");
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
    require_rank2(x, "slice_cols");
    const std::size_t rows = x.extent(0), cols = x.extent(1);
    if (start + count > cols) throw shape_error("slice_cols: range out of bounds");
    std::vector<double> out(rows * count);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < count; ++j) out[i * count + j] = x.values()[i * cols + start + j];
    auto px = x.ptr();
    return finish(make_node({rows, count}, std::move(out)), {px},
                  [px, rows, cols, start, count](const detail::TensorImpl& o) {
                      if (!px->requires_grad) return;
                      px->ensure_grad();
                      for (std::size_t i = 0; i < rows; ++i)
                          for (std::size_t j = 0; j < count; ++j)
                              px->grad[i * cols + start + j] += o.grad[i * count + j];
                  },
                  "slice_cols");
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw usage_error("concat_rows: no inputs");
    const std::size_t cols = parts[0].extent(1);
    std::size_t rows = 0;
    for (const auto& p : parts) {
        require_rank2(p, "concat_rows");
        if (p.extent(1) != cols) throw shape_error("concat_rows: column mismatch");
        rows += p.extent(0);
    }
    std::vector<double> out;
    out.reserve(rows * cols);
    std::vector<std::shared_ptr<detail::TensorImpl>> parents;
    for (const auto& p : parts) {
        out.insert(out.end(), p.values().begin(), p.values().end());
        parents.push_back(p.ptr());
    }
    auto parents_copy = parents;
    return finish(make_node({rows, cols}, std::move(out)), std::move(parents),
                  [parents_copy](const detail::TensorImpl& o) {
                      std::size_t offset = 0;
                      for (const auto& p : parents_copy) {
                          const std::size_t n = p->data.size();
                          if (p->requires_grad) {
                              p->ensure_grad();
                              for (std::size_t i = 0; i < n; ++i) p->grad[i] += o.grad[offset + i];
                          }
                          offset += n;
                      }
                  },
                  "concat_rows");
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw usage_error("concat_cols: no inputs");
    const std::size_t rows = parts[0].extent(0);
    std::size_t cols = 0;
    for (const auto& p : parts) {
        require_rank2(p, "concat_cols");
        if (p.extent(0) != rows) throw shape_error("concat_cols: row mismatch");
        cols += p.extent(1);
    }
    std::vector<double> out(rows * cols);
    std::vector<std::shared_ptr<detail::TensorImpl>> parents;
    std::size_t col0 = 0;
    for (const auto& p : parts) {
        const std::size_t pc = p.extent(1);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < pc; ++j) out[i * cols + col0 + j] = p.values()[i * pc + j];
        col0 += pc;
        parents.push_back(p.ptr());
    }
    auto parents_copy = parents;
    return finish(make_node({rows, cols}, std::move(out)), std::move(parents),
                  [parents_copy, rows, cols](const detail::TensorImpl& o) {
                      std::size_t col0 = 0;
                      for (const auto& p : parents_copy) {
                          const std::size_t pc = p->shape[1];
                          if (p->requires_grad) {
                              p->ensure_grad();
                              for (std::size_t i = 0; i < rows; ++i)
                                  for (std::size_t j = 0; j < pc; ++j)
                                      p->grad[i * pc + j] += o.grad[i * cols + col0 + j];
                          }
                          col0 += pc;
                      }
                  },
                  "concat_cols");
}

Tensor repeat_rows(const Tensor& x, std::size_t n) {
    require_rank2(x, "repeat_rows");
    if (x.extent(0) != 1) throw shape_error("repeat_rows: input must have one row");
    const std::size_t cols = x.extent(1);
    std::vector<double> out(n * cols);
    for (std::size_t i = 0; i < n; ++i)
        std::copy(x.values().begin(), x.values().end(), out.begin() + i * cols);
    auto px = x.ptr();
    return finish(make_node({n, cols}, std::move(out)), {px},
                  [px, n, cols](const detail::TensorImpl& o) {
                      if (!px->requires_grad) return;
                      px->ensure_grad();
                      for (std::size_t i = 0; i < n; ++i)
                          for (std::size_t j = 0; j < cols; ++j) px->grad[j] += o.grad[i * cols + j];
                  },
                  "repeat_rows");
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw shape_error("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    auto px = x.ptr();
    return finish(make_node(std::move(shape), x.values()), {px},
                  [px](const detail::TensorImpl& o) {
                      if (px->requires_grad) px->accumulate(o.grad);
                  },
                  "reshape");
}

Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels) {
    require_rank2(logits, "cross_entropy");
    const std::size_t batch = logits.extent(0), classes = logits.extent(1);
    if (labels.size() != batch) {
        throw shape_error("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                          std::to_string(batch));
    }
    for (std::size_t i = 0; i < batch; ++i) {
        if (labels[i] >= classes) {
            throw data_error("cross_entropy: label " + std::to_string(labels[i]) + " at index " +
                             std::to_string(i) + " out of range [0," + std::to_string(classes) + ")");
        }
    }
    // Row-stable log-softmax; probabilities saved for the adjoint.
    std::vector<double> probs(batch * classes);
    double loss = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
        const double* row = logits.values().data() + i * classes;
        double mx = row[0];
        for (std::size_t j = 1; j < classes; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < classes; ++j) z += std::exp(row[j] - mx);
        const double logz = std::log(z) + mx;
        for (std::size_t j = 0; j < classes; ++j) probs[i * classes + j] = std::exp(row[j] - logz);
        loss -= row[labels[i]] - logz;
    }
    loss /= static_cast<double>(batch);
    add_flops(7ull * batch * classes);
    auto pl = logits.ptr();
    return finish(make_node({}, {loss}), {pl},
                  [pl, labels, batch, classes, probs = std::move(probs)](const detail::TensorImpl& o) {
                      if (!pl->requires_grad) return;
                      pl->ensure_grad();
                      const double g = o.grad[0] / static_cast<double>(batch);
                      for (std::size_t i = 0; i < batch; ++i) {
                          for (std::size_t j = 0; j < classes; ++j) {
                              double p = probs[i * classes + j];
                              if (j == labels[i]) p -= 1.0;
                              pl->grad[i * classes + j] += g * p;
                          }
                      }
                  },
                  "cross_entropy");
}

void backward(const Tensor& loss) {
    if (loss.numel() != 1) {
        throw usage_error("backward: loss has shape " + shape_str(loss.shape()) + ", expected scalar");
    }
    // Topological order via iterative post-order DFS over parents.
    std::vector<detail::TensorImpl*> order;
    std::unordered_set<detail::TensorImpl*> seen;
    std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
    stack.emplace_back(loss.node(), 0);
    seen.insert(loss.node());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            detail::TensorImpl* p = node->parents[idx++].get();
            if (!seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    loss.node()->ensure_grad();
    loss.node()->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::TensorImpl* node = *it;
        if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
    // Free the graph; leaves keep their accumulated gradients.
    for (detail::TensorImpl* node : order) {
        if (node->backward_fn) {
            node->backward_fn = nullptr;
            node->parents.clear();
            if (node != loss.node()) node->grad.clear();
        }
    }
}

double grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params, double step) {
    if (step <= 0.0) throw usage_error("grad_check: step must be positive");
    Tensor l0 = f();
    const double v0 = l0.item();
    {
        Tensor l1 = f();
        if (l1.item() != v0) {
            throw numeric_error("grad_check: function is not deterministic");
        }
    }
    for (const Tensor& p : params) const_cast<Tensor&>(p).zero_grad();
    Tensor loss = f();
    backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const Tensor& p : params) analytic.push_back(p.grad());

    double max_rel = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor p = params[pi];
        for (std::size_t i = 0; i < p.numel(); ++i) {
            const double orig = p.values()[i];
            p.mutable_values()[i] = orig + step;
            const double fp = f().item();
            p.mutable_values()[i] = orig - step;
            const double fm = f().item();
            p.mutable_values()[i] = orig;
            const double numeric = (fp - fm) / (2.0 * step);
            const double a = analytic[pi][i];
            const double rel = std::abs(a - numeric) /
                               std::max({std::abs(a), std::abs(numeric), 1e-8});
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace seglat
