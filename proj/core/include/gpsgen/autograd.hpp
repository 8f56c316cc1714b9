#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "gpsgen/tensor.hpp"

namespace gpsgen::ag {

struct Node;
using Var = std::shared_ptr<Node>;

/// One node of the dynamic compute graph. `grad` is allocated lazily on the
/// first accumulation during backward().
struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backfn;

    Tensor& ensure_grad() {
        if (grad.size() == 0) grad = Tensor::zeros(value.shape);
        return grad;
    }
};

/// While grad is disabled, ops produce detached nodes (no parents, no tape).
bool grad_enabled();
void set_grad_enabled(bool on);

struct NoGradGuard {
    NoGradGuard() : prev_(grad_enabled()) { set_grad_enabled(false); }
    ~NoGradGuard() { set_grad_enabled(prev_); }

  private:
    bool prev_;
};

Var constant(Tensor t);
Var param(Tensor t);  // leaf with requires_grad
Var detach(const Var& v);

/// Reverse-mode sweep from a scalar root (shape [1]); seeds d(root)=1.
void backward(const Var& root);
void zero_grad(const std::vector<Var>& params);

// ---- elementwise / scalar ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, float c);
Var add_scalar(const Var& a, float c);
Var neg(const Var& a);
Var relu(const Var& a);
Var silu(const Var& a);
Var gelu(const Var& a);
Var sigmoid(const Var& a);
Var softplus(const Var& a);
Var exp_v(const Var& a);
Var log_v(const Var& a);       // caller guarantees positivity
Var square(const Var& a);
Var sqrt_v(const Var& a);
Var clamp(const Var& a, float lo, float hi);  // zero grad outside [lo, hi]

// ---- reductions ----
Var sum_all(const Var& a);   // -> [1]
Var mean_all(const Var& a);  // -> [1]
Var sum_rows(const Var& a);  // [r,c] -> [r,1]
Var sum_cols(const Var& a);  // [r,c] -> [1,c]

// ---- matrix / shape ----
Var matmul(const Var& a, const Var& b);    // [m,k]x[k,n]
Var transpose(const Var& a);               // [m,n] -> [n,m]
Var reshape(const Var& a, std::vector<int> shape);
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(const Var& a, int64_t start, int64_t count);
Var add_rowvec(const Var& m, const Var& v);    // [r,c] + [c]/[1,c]
Var mul_rowvec(const Var& m, const Var& v);    // [r,c] * [c]/[1,c]
Var scale_rows(const Var& m, const Var& s);    // [r,c] * [r]/[r,1]
Var gather_rows(const Var& table, const std::vector<int>& idx);
Var repeat_rows(const Var& a, int k);          // row i -> rows i*k..i*k+k-1
Var segment_sum_rows(const Var& a, int k);     // inverse reduction of repeat_rows
Var cumsum_excl_rows(const Var& a);            // exclusive prefix sum per row

// ---- softmax / losses ----
Var softmax_rows(const Var& a);
Var cross_entropy_rows(const Var& logits, const std::vector<int>& labels);  // mean NLL

// ---- image ops (NHWC layout) ----
Var conv2d(const Var& x, const Var& w, const Var& b, int kh, int kw, int stride, int pad);
// x: [N,H,W,Ci], w: [kh*kw*Ci, Co], b: [Co]
Var upsample2x(const Var& x);  // nearest, [N,H,W,C] -> [N,2H,2W,C]
Var avgpool2x(const Var& x);   // 2x2 mean, [N,H,W,C] -> [N,H/2,W/2,C]
Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, float eps = 1e-5f);
Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, float eps = 1e-5f);

// convenience
Var mse(const Var& a, const Var& b);  // mean over all elements

}  // namespace gpsgen::ag
