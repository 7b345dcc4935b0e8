#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace unke {

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

// Dense row-major float32 tensor with an optional gradient buffer.
// Copies are shallow; clone() makes a deep copy.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor from_data(std::vector<int> shape, std::vector<float> data,
                            bool requires_grad = false);
    static Tensor scalar(float value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const std::vector<int>& shape() const { return impl_->shape; }
    int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }
    int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(impl_->shape.size()); }

    std::span<float> data() { return impl_->data; }
    std::span<const float> data() const { return impl_->data; }
    float& at(int64_t i) { return impl_->data[static_cast<size_t>(i)]; }
    float at(int64_t i) const { return impl_->data[static_cast<size_t>(i)]; }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool v) { impl_->requires_grad = v; }

    bool has_grad() const { return !impl_->grad.empty(); }
    std::span<float> grad();              // allocates zeros on first use
    std::span<const float> grad() const;  // throws if absent
    void zero_grad();
    void drop_grad();

    float item() const;  // scalar tensors only
    Tensor clone() const;

    // Identity of the underlying buffer; used for parameter bookkeeping.
    const void* id() const { return impl_.get(); }
    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

private:
    struct Impl {
        std::vector<int> shape;
        std::vector<float> data;
        std::vector<float> grad;
        bool requires_grad = false;
    };
    std::shared_ptr<Impl> impl_;
};

// Records forward primitives in execution order (topological by construction)
// and replays their adjoints in reverse on backward().
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* current();

    void record(const char* op, Tensor output, std::function<void()> backward_fn);
    void backward(const Tensor& loss);
    size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

private:
    struct Node {
        const char* op;
        Tensor output;
        std::function<void()> backward_fn;
    };
    std::vector<Node> nodes_;
    Tape* previous_ = nullptr;
};

int64_t shape_numel(const std::vector<int>& shape);

namespace ops {

// All primitives validate shapes, check outputs for non-finite values and
// record adjoints on the active tape when any input requires grad.

Tensor matmul(Tensor a, Tensor b);     // [m,k]x[k,n] -> [m,n]
Tensor matmul_nt(Tensor a, Tensor b);  // [m,k]x[n,k]^T -> [m,n]
Tensor add(Tensor a, Tensor b);        // same shape
Tensor mul(Tensor a, Tensor b);        // elementwise
Tensor scale(Tensor a, float c);
Tensor add_bias(Tensor x, Tensor b);   // [t,d] + [d]
Tensor gelu(Tensor x);
Tensor layer_norm(Tensor x, Tensor gain, Tensor bias,
                  float eps = 1e-5f);
Tensor softmax_rows(Tensor x);
// Row i is a softmax over columns 0..i; columns > i are exact zeros.
Tensor causal_softmax(Tensor scores);
Tensor embedding(Tensor table, std::span<const int> ids);
// Mean of -log softmax(logits[t])[targets[t]] over positions with target >= 0.
Tensor cross_entropy_mean(Tensor logits, std::span<const int> targets);
Tensor replace_row_add(Tensor x, int row, Tensor delta);
Tensor slice_rows(Tensor x, int start, int count);
Tensor slice_cols(Tensor x, int start, int count);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor sum(Tensor x);
Tensor sum_squared_diff(Tensor a, Tensor b);

}  // namespace ops

}  // namespace unke
