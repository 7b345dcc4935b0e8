#include "unke/tensor.hpp"

#include <cmath>
#include <cstring>
#include <numeric>

namespace unke {

int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeError("non-positive dimension in shape");
        n *= d;
    }
    return n;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    int64_t n = shape_numel(shape);
    t.impl_->shape = std::move(shape);
    t.impl_->data.assign(static_cast<size_t>(n), 0.0f);
    t.impl_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<float> data,
                         bool requires_grad) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
        throw ShapeError("data length does not match shape");
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(data);
    t.impl_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::scalar(float value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

std::span<float> Tensor::grad() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0f);
    return impl_->grad;
}

std::span<const float> Tensor::grad() const {
    if (impl_->grad.empty()) throw ContractError("tensor has no gradient");
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (!impl_->grad.empty())
        std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
}

void Tensor::drop_grad() { impl_->grad.clear(); }

float Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on non-scalar tensor");
    return impl_->data[0];
}

Tensor Tensor::clone() const {
    Tensor t;
    t.impl_ = std::make_shared<Impl>(*impl_);
    return t;
}

namespace {
thread_local Tape* g_current_tape = nullptr;
}

Tape::Tape() {
    previous_ = g_current_tape;
    g_current_tape = this;
}

Tape::~Tape() { g_current_tape = previous_; }

Tape* Tape::current() { return g_current_tape; }

void Tape::record(const char* op, Tensor output, std::function<void()> backward_fn) {
    nodes_.push_back({op, std::move(output), std::move(backward_fn)});
}

void Tape::backward(const Tensor& loss) {
    if (loss.numel() != 1) throw ContractError("backward requires a scalar loss");
    const_cast<Tensor&>(loss).grad()[0] += 1.0f;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (!it->output.has_grad()) continue;  // not on the path to the loss
        it->backward_fn();
    }
}

namespace ops {
namespace {

void check_finite(const Tensor& t, const char* op) {
    for (float v : t.data()) {
        if (!std::isfinite(v))
            throw NumericError(std::string("non-finite output in op '") + op + "'");
    }
}

bool track(std::initializer_list<const Tensor*> inputs) {
    if (!Tape::current()) return false;
    for (const Tensor* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

void finish(const char* op, Tensor& out, bool tracked,
            std::function<void()> backward_fn) {
    check_finite(out, op);
    if (tracked) {
        out.set_requires_grad(true);
        Tape::current()->record(op, out, std::move(backward_fn));
    }
}

void require_2d(const Tensor& t, const char* op) {
    if (t.ndim() != 2) throw ShapeError(std::string(op) + ": expected rank-2 tensor");
}

// Row-stable matmul: output row i is accumulated in a fixed k-order that does
// not depend on the number of rows, so prefix rows are bitwise reproducible.
void matmul_accum(const float* a, const float* b, float* c, int m, int k, int n,
                  bool b_transposed) {
    if (!b_transposed) {
        for (int i = 0; i < m; ++i) {
            float* ci = c + static_cast<int64_t>(i) * n;
            const float* ai = a + static_cast<int64_t>(i) * k;
            for (int p = 0; p < k; ++p) {
                const float av = ai[p];
                const float* bp = b + static_cast<int64_t>(p) * n;
                for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
            }
        }
    } else {  // b is [n,k]; dot products with 16 fixed-order partial sums so the
        // reduction vectorizes while staying deterministic and row-stable.
        for (int i = 0; i < m; ++i) {
            float* ci = c + static_cast<int64_t>(i) * n;
            const float* ai = a + static_cast<int64_t>(i) * k;
            for (int j = 0; j < n; ++j) {
                const float* bj = b + static_cast<int64_t>(j) * k;
                float lanes[16] = {};
                int p = 0;
                for (; p + 16 <= k; p += 16)
                    for (int l = 0; l < 16; ++l) lanes[l] += ai[p + l] * bj[p + l];
                float acc = 0.0f;
                for (int l = 0; l < 16; ++l) acc += lanes[l];
                for (; p < k; ++p) acc += ai[p] * bj[p];
                ci[j] += acc;
            }
        }
    }
}

// c[k,n] += a[m,k]^T * b[m,n]
void matmul_tn_accum(const float* a, const float* b, float* c, int m, int k, int n) {
    for (int p = 0; p < k; ++p) {
        float* cp = c + static_cast<int64_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const float av = a[static_cast<int64_t>(i) * k + p];
            const float* bi = b + static_cast<int64_t>(i) * n;
            for (int j = 0; j < n; ++j) cp[j] += av * bi[j];
        }
    }
}

}  // namespace

Tensor matmul(Tensor a, Tensor b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) throw ShapeError("matmul: inner dimensions differ");
    Tensor out = Tensor::zeros({m, n});
    matmul_accum(a.data().data(), b.data().data(), out.data().data(), m, k, n, false);
    bool tracked = track({&a, &b});
    finish("matmul", out, tracked, [a, b, out, m, k, n]() mutable {
        const float* go = out.grad().data();
        if (a.requires_grad())  // dA += dC * B^T
            matmul_accum(go, b.data().data(), a.grad().data(), m, n, k, true);
        if (b.requires_grad())  // dB += A^T * dC
            matmul_tn_accum(a.data().data(), go, b.grad().data(), m, k, n);
    });
    return out;
}

Tensor matmul_nt(Tensor a, Tensor b) {
    require_2d(a, "matmul_nt");
    require_2d(b, "matmul_nt");
    const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (b.dim(1) != k) throw ShapeError("matmul_nt: inner dimensions differ");
    Tensor out = Tensor::zeros({m, n});
    matmul_accum(a.data().data(), b.data().data(), out.data().data(), m, k, n, true);
    bool tracked = track({&a, &b});
    finish("matmul_nt", out, tracked, [a, b, out, m, k, n]() mutable {
        const float* go = out.grad().data();
        if (a.requires_grad())  // dA += dC * B
            matmul_accum(go, b.data().data(), a.grad().data(), m, n, k, false);
        if (b.requires_grad())  // dB += dC^T * A
            matmul_tn_accum(go, a.data().data(), b.grad().data(), m, n, k);
    });
    return out;
}

Tensor add(Tensor a, Tensor b) {
    if (a.shape() != b.shape()) throw ShapeError("add: shape mismatch");
    Tensor out = Tensor::zeros(a.shape());
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) out.at(i) = a.at(i) + b.at(i);
    bool tracked = track({&a, &b});
    finish("add", out, tracked, [a, b, out, n]() mutable {
        const float* go = out.grad().data();
        if (a.requires_grad()) {
            float* ga = a.grad().data();
            for (int64_t i = 0; i < n; ++i) ga[i] += go[i];
        }
        if (b.requires_grad()) {
            float* gb = b.grad().data();
            for (int64_t i = 0; i < n; ++i) gb[i] += go[i];
        }
    });
    return out;
}

Tensor mul(Tensor a, Tensor b) {
    if (a.shape() != b.shape()) throw ShapeError("mul: shape mismatch");
    Tensor out = Tensor::zeros(a.shape());
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) out.at(i) = a.at(i) * b.at(i);
    bool tracked = track({&a, &b});
    finish("mul", out, tracked, [a, b, out, n]() mutable {
        const float* go = out.grad().data();
        if (a.requires_grad()) {
            float* ga = a.grad().data();
            for (int64_t i = 0; i < n; ++i) ga[i] += go[i] * b.at(i);
        }
        if (b.requires_grad()) {
            float* gb = b.grad().data();
            for (int64_t i = 0; i < n; ++i) gb[i] += go[i] * a.at(i);
        }
    });
    return out;
}

Tensor scale(Tensor a, float c) {
    Tensor out = Tensor::zeros(a.shape());
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) out.at(i) = a.at(i) * c;
    bool tracked = track({&a});
    finish("scale", out, tracked, [a, out, c, n]() mutable {
        const float* go = out.grad().data();
        float* ga = a.grad().data();
        for (int64_t i = 0; i < n; ++i) ga[i] += go[i] * c;
    });
    return out;
}

Tensor add_bias(Tensor x, Tensor b) {
    require_2d(x, "add_bias");
    if (b.ndim() != 1 || b.dim(0) != x.dim(1))
        throw ShapeError("add_bias: bias must match column count");
    const int t = x.dim(0), d = x.dim(1);
    Tensor out = Tensor::zeros({t, d});
    for (int i = 0; i < t; ++i)
        for (int j = 0; j < d; ++j)
            out.at(static_cast<int64_t>(i) * d + j) =
                x.at(static_cast<int64_t>(i) * d + j) + b.at(j);
    bool tracked = track({&x, &b});
    finish("add_bias", out, tracked, [x, b, out, t, d]() mutable {
        const float* go = out.grad().data();
        if (x.requires_grad()) {
            float* gx = x.grad().data();
            for (int64_t i = 0; i < static_cast<int64_t>(t) * d; ++i) gx[i] += go[i];
        }
        if (b.requires_grad()) {
            float* gb = b.grad().data();
            for (int i = 0; i < t; ++i)
                for (int j = 0; j < d; ++j) gb[j] += go[static_cast<int64_t>(i) * d + j];
        }
    });
    return out;
}

Tensor gelu(Tensor x) {
    Tensor out = Tensor::zeros(x.shape());
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) {
        const float v = x.at(i);
        out.at(i) = 0.5f * v * (1.0f + std::erf(v * 0.70710678f));
    }
    bool tracked = track({&x});
    finish("gelu", out, tracked, [x, out, n]() mutable {
        const float* go = out.grad().data();
        float* gx = x.grad().data();
        for (int64_t i = 0; i < n; ++i) {
            const float v = x.at(i);
            const float phi = 0.5f * (1.0f + std::erf(v * 0.70710678f));
            const float pdf = 0.39894228f * std::exp(-0.5f * v * v);
            gx[i] += go[i] * (phi + v * pdf);
        }
    });
    return out;
}

Tensor layer_norm(Tensor x, Tensor gain, Tensor bias, float eps) {
    require_2d(x, "layer_norm");
    const int t = x.dim(0), d = x.dim(1);
    if (gain.ndim() != 1 || gain.dim(0) != d || bias.ndim() != 1 || bias.dim(0) != d)
        throw ShapeError("layer_norm: gain/bias must have d columns");
    Tensor out = Tensor::zeros({t, d});
    // Saved normalized values and 1/sigma per row for the backward pass.
    auto xhat = std::make_shared<std::vector<float>>(static_cast<size_t>(t) * d);
    auto inv_sigma = std::make_shared<std::vector<float>>(static_cast<size_t>(t));
    for (int i = 0; i < t; ++i) {
        const float* xi = x.data().data() + static_cast<int64_t>(i) * d;
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += xi[j];
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            const double c = xi[j] - mean;
            var += c * c;
        }
        var /= d;
        const float is = static_cast<float>(1.0 / std::sqrt(var + eps));
        (*inv_sigma)[static_cast<size_t>(i)] = is;
        for (int j = 0; j < d; ++j) {
            const float xh = (xi[j] - static_cast<float>(mean)) * is;
            (*xhat)[static_cast<size_t>(i) * d + j] = xh;
            out.at(static_cast<int64_t>(i) * d + j) = gain.at(j) * xh + bias.at(j);
        }
    }
    bool tracked = track({&x, &gain, &bias});
    finish("layer_norm", out, tracked, [x, gain, bias, out, xhat, inv_sigma, t, d]() mutable {
        const float* go = out.grad().data();
        for (int i = 0; i < t; ++i) {
            const float* goi = go + static_cast<int64_t>(i) * d;
            const float* xh = xhat->data() + static_cast<int64_t>(i) * d;
            if (gain.requires_grad()) {
                float* gg = gain.grad().data();
                for (int j = 0; j < d; ++j) gg[j] += goi[j] * xh[j];
            }
            if (bias.requires_grad()) {
                float* gb = bias.grad().data();
                for (int j = 0; j < d; ++j) gb[j] += goi[j];
            }
            if (x.requires_grad()) {
                double mean_w = 0.0, mean_wx = 0.0;
                for (int j = 0; j < d; ++j) {
                    const double w = static_cast<double>(goi[j]) * gain.at(j);
                    mean_w += w;
                    mean_wx += w * xh[j];
                }
                mean_w /= d;
                mean_wx /= d;
                const float is = (*inv_sigma)[static_cast<size_t>(i)];
                float* gx = x.grad().data() + static_cast<int64_t>(i) * d;
                for (int j = 0; j < d; ++j) {
                    const double w = static_cast<double>(goi[j]) * gain.at(j);
                    gx[j] += static_cast<float>((w - mean_w - xh[j] * mean_wx) * is);
                }
            }
        }
    });
    return out;
}

namespace {

Tensor softmax_impl(Tensor x, bool causal, const char* op) {
    require_2d(x, op);
    const int t = x.dim(0), n = x.dim(1);
    if (causal && t != n) throw ShapeError("causal_softmax: matrix must be square");
    Tensor out = Tensor::zeros({t, n});
    for (int i = 0; i < t; ++i) {
        const int limit = causal ? i + 1 : n;
        const float* xi = x.data().data() + static_cast<int64_t>(i) * n;
        float* oi = out.data().data() + static_cast<int64_t>(i) * n;
        float mx = xi[0];
        for (int j = 1; j < limit; ++j) mx = std::max(mx, xi[j]);
        double z = 0.0;
        for (int j = 0; j < limit; ++j) z += std::exp(static_cast<double>(xi[j] - mx));
        for (int j = 0; j < limit; ++j)
            oi[j] = static_cast<float>(std::exp(static_cast<double>(xi[j] - mx)) / z);
    }
    Tensor xt = x;
    bool tracked = track({&x});
    finish(op, out, tracked, [xt, out, t, n, causal]() mutable {
        const float* go = out.grad().data();
        float* gx = xt.grad().data();
        for (int i = 0; i < t; ++i) {
            const int limit = causal ? i + 1 : n;
            const float* yi = out.data().data() + static_cast<int64_t>(i) * n;
            const float* goi = go + static_cast<int64_t>(i) * n;
            double dot = 0.0;
            for (int j = 0; j < limit; ++j) dot += static_cast<double>(goi[j]) * yi[j];
            float* gxi = gx + static_cast<int64_t>(i) * n;
            for (int j = 0; j < limit; ++j)
                gxi[j] += static_cast<float>(yi[j] * (goi[j] - dot));
        }
    });
    return out;
}

}  // namespace

Tensor softmax_rows(Tensor x) { return softmax_impl(x, false, "softmax_rows"); }

Tensor causal_softmax(Tensor scores) {
    return softmax_impl(scores, true, "causal_softmax");
}

Tensor embedding(Tensor table, std::span<const int> ids) {
    require_2d(table, "embedding");
    const int v = table.dim(0), d = table.dim(1);
    const int t = static_cast<int>(ids.size());
    if (t == 0) throw ShapeError("embedding: empty id list");
    for (int id : ids)
        if (id < 0 || id >= v) throw ShapeError("embedding: id out of range");
    Tensor out = Tensor::zeros({t, d});
    for (int i = 0; i < t; ++i)
        std::memcpy(out.data().data() + static_cast<int64_t>(i) * d,
                    table.data().data() + static_cast<int64_t>(ids[i]) * d,
                    sizeof(float) * static_cast<size_t>(d));
    auto ids_copy = std::make_shared<std::vector<int>>(ids.begin(), ids.end());
    bool tracked = track({&table});
    finish("embedding", out, tracked, [table, out, ids_copy, d]() mutable {
        const float* go = out.grad().data();
        float* gt = table.grad().data();
        for (size_t i = 0; i < ids_copy->size(); ++i) {
            float* row = gt + static_cast<int64_t>((*ids_copy)[i]) * d;
            const float* g = go + static_cast<int64_t>(i) * d;
            for (int j = 0; j < d; ++j) row[j] += g[j];
        }
    });
    return out;
}

Tensor cross_entropy_mean(Tensor logits, std::span<const int> targets) {
    require_2d(logits, "cross_entropy_mean");
    const int t = logits.dim(0), v = logits.dim(1);
    if (static_cast<int>(targets.size()) != t)
        throw ShapeError("cross_entropy_mean: one target per row required");
    int count = 0;
    for (int tgt : targets) {
        if (tgt >= v) throw ShapeError("cross_entropy_mean: target out of range");
        if (tgt >= 0) ++count;
    }
    if (count == 0) throw ContractError("cross_entropy_mean: no selected positions");
    // 64-bit log-sum-exp keeps small per-token NLLs stable.
    auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(t) * v, 0.0);
    double total = 0.0;
    for (int i = 0; i < t; ++i) {
        if (targets[static_cast<size_t>(i)] < 0) continue;
        const float* li = logits.data().data() + static_cast<int64_t>(i) * v;
        double mx = li[0];
        for (int j = 1; j < v; ++j) mx = std::max(mx, static_cast<double>(li[j]));
        double z = 0.0;
        for (int j = 0; j < v; ++j) z += std::exp(li[j] - mx);
        for (int j = 0; j < v; ++j)
            (*probs)[static_cast<size_t>(i) * v + j] = std::exp(li[j] - mx) / z;
        total += mx + std::log(z) - li[targets[static_cast<size_t>(i)]];
    }
    Tensor out = Tensor::scalar(static_cast<float>(total / count));
    auto tgt_copy = std::make_shared<std::vector<int>>(targets.begin(), targets.end());
    bool tracked = track({&logits});
    finish("cross_entropy_mean", out, tracked,
           [logits, out, probs, tgt_copy, t, v, count]() mutable {
               const float g = out.grad()[0] / static_cast<float>(count);
               float* gl = logits.grad().data();
               for (int i = 0; i < t; ++i) {
                   const int tgt = (*tgt_copy)[static_cast<size_t>(i)];
                   if (tgt < 0) continue;
                   for (int j = 0; j < v; ++j) {
                       double p = (*probs)[static_cast<size_t>(i) * v + j];
                       gl[static_cast<int64_t>(i) * v + j] +=
                           g * static_cast<float>(p - (j == tgt ? 1.0 : 0.0));
                   }
               }
           });
    return out;
}

Tensor replace_row_add(Tensor x, int row, Tensor delta) {
    require_2d(x, "replace_row_add");
    const int t = x.dim(0), d = x.dim(1);
    if (row < 0 || row >= t) throw ShapeError("replace_row_add: row out of range");
    if (delta.numel() != d) throw ShapeError("replace_row_add: delta length mismatch");
    Tensor out = Tensor::zeros({t, d});
    std::memcpy(out.data().data(), x.data().data(),
                sizeof(float) * static_cast<size_t>(x.numel()));
    for (int j = 0; j < d; ++j)
        out.at(static_cast<int64_t>(row) * d + j) += delta.at(j);
    bool tracked = track({&x, &delta});
    finish("replace_row_add", out, tracked, [x, delta, out, row, d]() mutable {
        const float* go = out.grad().data();
        if (x.requires_grad()) {
            float* gx = x.grad().data();
            for (int64_t i = 0; i < x.numel(); ++i) gx[i] += go[i];
        }
        if (delta.requires_grad()) {
            float* gd = delta.grad().data();
            for (int j = 0; j < d; ++j) gd[j] += go[static_cast<int64_t>(row) * d + j];
        }
    });
    return out;
}

Tensor slice_rows(Tensor x, int start, int count) {
    require_2d(x, "slice_rows");
    const int t = x.dim(0), d = x.dim(1);
    if (start < 0 || count <= 0 || start + count > t)
        throw ShapeError("slice_rows: range out of bounds");
    Tensor out = Tensor::zeros({count, d});
    std::memcpy(out.data().data(), x.data().data() + static_cast<int64_t>(start) * d,
                sizeof(float) * static_cast<size_t>(count) * d);
    bool tracked = track({&x});
    finish("slice_rows", out, tracked, [x, out, start, count, d]() mutable {
        const float* go = out.grad().data();
        float* gx = x.grad().data() + static_cast<int64_t>(start) * d;
        for (int64_t i = 0; i < static_cast<int64_t>(count) * d; ++i) gx[i] += go[i];
    });
    return out;
}

Tensor slice_cols(Tensor x, int start, int count) {
    require_2d(x, "slice_cols");
    const int t = x.dim(0), d = x.dim(1);
    if (start < 0 || count <= 0 || start + count > d)
        throw ShapeError("slice_cols: range out of bounds");
    Tensor out = Tensor::zeros({t, count});
    for (int i = 0; i < t; ++i)
        std::memcpy(out.data().data() + static_cast<int64_t>(i) * count,
                    x.data().data() + static_cast<int64_t>(i) * d + start,
                    sizeof(float) * static_cast<size_t>(count));
    bool tracked = track({&x});
    finish("slice_cols", out, tracked, [x, out, start, count, t, d]() mutable {
        const float* go = out.grad().data();
        float* gx = x.grad().data();
        for (int i = 0; i < t; ++i)
            for (int j = 0; j < count; ++j)
                gx[static_cast<int64_t>(i) * d + start + j] +=
                    go[static_cast<int64_t>(i) * count + j];
    });
    return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no parts");
    const int t = parts[0].dim(0);
    int d = 0;
    for (const Tensor& p : parts) {
        require_2d(p, "concat_cols");
        if (p.dim(0) != t) throw ShapeError("concat_cols: row counts differ");
        d += p.dim(1);
    }
    Tensor out = Tensor::zeros({t, d});
    int off = 0;
    for (const Tensor& p : parts) {
        const int w = p.dim(1);
        for (int i = 0; i < t; ++i)
            std::memcpy(out.data().data() + static_cast<int64_t>(i) * d + off,
                        p.data().data() + static_cast<int64_t>(i) * w,
                        sizeof(float) * static_cast<size_t>(w));
        off += w;
    }
    bool any = false;
    for (const Tensor& p : parts)
        if (p.requires_grad()) any = true;
    bool tracked = Tape::current() && any;
    auto parts_copy = parts;
    finish("concat_cols", out, tracked, [parts_copy, out, t, d]() mutable {
        const float* go = out.grad().data();
        int off = 0;
        for (Tensor& p : parts_copy) {
            const int w = p.dim(1);
            if (p.requires_grad()) {
                float* gp = p.grad().data();
                for (int i = 0; i < t; ++i)
                    for (int j = 0; j < w; ++j)
                        gp[static_cast<int64_t>(i) * w + j] +=
                            go[static_cast<int64_t>(i) * d + off + j];
            }
            off += w;
        }
    });
    return out;
}

Tensor sum(Tensor x) {
    double acc = 0.0;
    for (float v : x.data()) acc += v;
    Tensor out = Tensor::scalar(static_cast<float>(acc));
    bool tracked = track({&x});
    finish("sum", out, tracked, [x, out]() mutable {
        const float g = out.grad()[0];
        float* gx = x.grad().data();
        for (int64_t i = 0; i < x.numel(); ++i) gx[i] += g;
    });
    return out;
}

Tensor sum_squared_diff(Tensor a, Tensor b) {
    if (a.shape() != b.shape()) throw ShapeError("sum_squared_diff: shape mismatch");
    double acc = 0.0;
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) {
        const double c = static_cast<double>(a.at(i)) - b.at(i);
        acc += c * c;
    }
    Tensor out = Tensor::scalar(static_cast<float>(acc));
    bool tracked = track({&a, &b});
    finish("sum_squared_diff", out, tracked, [a, b, out, n]() mutable {
        const float g = out.grad()[0];
        if (a.requires_grad()) {
            float* ga = a.grad().data();
            for (int64_t i = 0; i < n; ++i) ga[i] += g * 2.0f * (a.at(i) - b.at(i));
        }
        if (b.requires_grad()) {
            float* gb = b.grad().data();
            for (int64_t i = 0; i < n; ++i) gb[i] -= g * 2.0f * (a.at(i) - b.at(i));
        }
    });
    return out;
}

}  // namespace ops
}  // namespace unke
