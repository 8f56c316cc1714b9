#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "gpsgen/autograd.hpp"
#include "gpsgen/rng.hpp"

namespace gpsgen::nn {

using ag::Var;

/// Named parameter registry shared by all trainable models. Names are stable
/// across runs, so checkpoints address parameters by name.
class ParamStore {
  public:
    Var add(const std::string& name, Tensor init) {
        if (by_name_.count(name)) throw std::invalid_argument("ParamStore: duplicate name " + name);
        Var v = ag::param(std::move(init));
        by_name_[name] = v;
        ordered_.push_back({name, v});
        return v;
    }

    const std::vector<std::pair<std::string, Var>>& entries() const { return ordered_; }
    std::vector<Var> vars() const {
        std::vector<Var> out;
        out.reserve(ordered_.size());
        for (const auto& [n, v] : ordered_) out.push_back(v);
        return out;
    }
    Var get(const std::string& name) const {
        auto it = by_name_.find(name);
        if (it == by_name_.end()) throw std::out_of_range("ParamStore: unknown parameter " + name);
        return it->second;
    }
    bool has(const std::string& name) const { return by_name_.count(name) > 0; }
    int64_t total_size() const {
        int64_t n = 0;
        for (const auto& [k, v] : ordered_) n += v->value.size();
        return n;
    }

  private:
    std::map<std::string, Var> by_name_;
    std::vector<std::pair<std::string, Var>> ordered_;
};

inline Tensor init_uniform(std::vector<int> shape, float bound, Rng& rng) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i)
        t[i] = static_cast<float>(rng.uniform(-bound, bound));
    return t;
}

inline Tensor init_normal(std::vector<int> shape, float std, Rng& rng) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.normal() * std);
    return t;
}

/// y = x W + b, x: [n, in]
struct Linear {
    Var W, b;
    Linear() = default;
    Linear(ParamStore& ps, const std::string& name, int in, int out, Rng& rng, bool zero_init = false) {
        float bound = zero_init ? 0.0f : 1.0f / std::sqrt(static_cast<float>(in));
        W = ps.add(name + ".W", init_uniform({in, out}, bound, rng));
        b = ps.add(name + ".b", Tensor::zeros({out}));
    }
    Var operator()(const Var& x) const {
        return ag::add_rowvec(ag::matmul(x, W), ag::reshape(b, {1, b->value.dim(0)}));
    }
};

/// 3x3-style conv in NHWC, weight stored [kh*kw*ci, co].
struct Conv2d {
    Var W, b;
    int kh = 3, kw = 3, stride = 1, pad = 1;
    Conv2d() = default;
    Conv2d(ParamStore& ps, const std::string& name, int ci, int co, int k, int stride_, int pad_,
           Rng& rng, bool zero_init = false) {
        kh = kw = k;
        stride = stride_;
        pad = pad_;
        float bound = zero_init ? 0.0f : 1.0f / std::sqrt(static_cast<float>(k * k * ci));
        W = ps.add(name + ".W", init_uniform({k * k * ci, co}, bound, rng));
        b = ps.add(name + ".b", Tensor::zeros({co}));
    }
    Var operator()(const Var& x) const { return ag::conv2d(x, W, b, kh, kw, stride, pad); }
};

struct GroupNorm {
    Var gamma, beta;
    int groups = 1;
    GroupNorm() = default;
    GroupNorm(ParamStore& ps, const std::string& name, int c, int groups_) : groups(groups_) {
        gamma = ps.add(name + ".gamma", Tensor::full({c}, 1.0f));
        beta = ps.add(name + ".beta", Tensor::zeros({c}));
    }
    Var operator()(const Var& x) const { return ag::group_norm(x, gamma, beta, groups); }
};

struct LayerNorm {
    Var gamma, beta;
    LayerNorm() = default;
    LayerNorm(ParamStore& ps, const std::string& name, int c) {
        gamma = ps.add(name + ".gamma", Tensor::full({c}, 1.0f));
        beta = ps.add(name + ".beta", Tensor::zeros({c}));
    }
    Var operator()(const Var& x) const { return ag::layer_norm_rows(x, gamma, beta); }
};

struct Embedding {
    Var table;
    Embedding() = default;
    Embedding(ParamStore& ps, const std::string& name, int vocab, int dim, Rng& rng) {
        table = ps.add(name + ".table", init_normal({vocab, dim}, 0.02f, rng));
    }
    Var operator()(const std::vector<int>& idx) const { return ag::gather_rows(table, idx); }
};

/// AdamW with decoupled weight decay.
class AdamW {
  public:
    AdamW(std::vector<Var> params, float lr, float beta1 = 0.9f, float beta2 = 0.999f,
          float eps = 1e-8f, float weight_decay = 0.0f)
        : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), wd_(weight_decay) {
        for (const auto& p : params_) {
            m_.push_back(Tensor::zeros(p->value.shape));
            v_.push_back(Tensor::zeros(p->value.shape));
        }
    }

    void set_lr(float lr) { lr_ = lr; }
    float lr() const { return lr_; }
    int64_t step_count() const { return t_; }

    void step() {
        ++t_;
        float bc1 = 1.0f - std::pow(b1_, static_cast<float>(t_));
        float bc2 = 1.0f - std::pow(b2_, static_cast<float>(t_));
        for (size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            if (p->grad.size() == 0) continue;
            for (int64_t j = 0; j < p->value.size(); ++j) {
                float g = p->grad[j];
                m_[i][j] = b1_ * m_[i][j] + (1.0f - b1_) * g;
                v_[i][j] = b2_ * v_[i][j] + (1.0f - b2_) * g * g;
                float mh = m_[i][j] / bc1;
                float vh = v_[i][j] / bc2;
                p->value[j] -= lr_ * (mh / (std::sqrt(vh) + eps_) + wd_ * p->value[j]);
            }
        }
    }

    void zero_grad() { ag::zero_grad(params_); }

    // moments exposed for checkpoint resume
    std::vector<Tensor>& m() { return m_; }
    std::vector<Tensor>& v() { return v_; }
    void set_step_count(int64_t t) { t_ = t; }

  private:
    std::vector<Var> params_;
    float lr_, b1_, b2_, eps_, wd_;
    int64_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

}  // namespace gpsgen::nn
