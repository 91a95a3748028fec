#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace seglat {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Running tally of arithmetic work, used by the profiler's instrumented
// oracle. Conventions: a multiply-accumulate is 2 FLOPs, softmax costs 5
// FLOPs/element, GELU 8, layer norm 5, elementwise ops 1.
std::uint64_t flop_count();
void reset_flop_count();
void add_flops(std::uint64_t n);

namespace detail {

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty unless requires_grad
    bool requires_grad = false;

    // Graph wiring; populated only on op outputs, cleared by backward().
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void(const TensorImpl&)> backward_fn;

    std::size_t numel() const { return data.size(); }
    void ensure_grad();
    void accumulate(const std::vector<double>& g);
};

}  // namespace detail

// Dense row-major 64-bit tensor with reverse-mode autodiff. Value-semantics
// handle over a shared node; copying shares the buffer.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor identity(std::size_t n);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t numel() const { return impl_->data.size(); }
    std::size_t extent(std::size_t axis) const { return impl_->shape[axis]; }

    const std::vector<double>& values() const { return impl_->data; }
    std::vector<double>& mutable_values() { return impl_->data; }
    double value_at(std::size_t flat_index) const { return impl_->data[flat_index]; }
    double item() const;  // scalar only

    bool requires_grad() const { return impl_->requires_grad; }
    const std::vector<double>& grad() const;
    void zero_grad();

    detail::TensorImpl* node() const { return impl_.get(); }
    const std::shared_ptr<detail::TensorImpl>& ptr() const { return impl_; }

private:
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<detail::TensorImpl> impl_;

    friend Tensor wrap(std::shared_ptr<detail::TensorImpl> impl);
};

Tensor wrap(std::shared_ptr<detail::TensorImpl> impl);

// --- Operations (all validate shapes and reject non-finite results) ---

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
// rows(n x d) + bias(d), broadcast over rows
Tensor add_rowwise(const Tensor& a, const Tensor& bias);
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);
Tensor gelu(const Tensor& x);
Tensor sum(const Tensor& x);
// (n x d) -> (1 x d), mean over rows
Tensor mean_rows(const Tensor& x);
Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
// (1 x d) -> (n x d)
Tensor repeat_rows(const Tensor& x, std::size_t n);
Tensor reshape(const Tensor& x, Shape shape);
Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels);

// Reverse-mode sweep from a scalar loss; accumulates into the grad buffer of
// every requires_grad leaf and frees the graph.
void backward(const Tensor& loss);

// Max relative error between analytic gradients and central finite
// differences, over every element of every tensor in params. f must be a
// deterministic scalar-valued function of params.
double grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params, double step);

}  // namespace seglat
