#include "gpsgen/autograd.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace gpsgen::ag {

using EMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<EMat>;
using MapC = Eigen::Map<const EMat>;

namespace {

thread_local bool g_grad_enabled = true;

MapC cmap(const Tensor& t) { return MapC(t.data.data(), t.rows2d(), t.cols2d()); }
MapM mmap(Tensor& t) { return MapM(t.data.data(), t.rows2d(), t.cols2d()); }

bool any_requires(const std::vector<Var>& parents) {
    for (const auto& p : parents)
        if (p->requires_grad) return true;
    return false;
}

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backfn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    if (g_grad_enabled && any_requires(parents)) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backfn = std::move(backfn);
    }
    return n;
}

void accum(Var& p, const Tensor& g) {
    if (!p->requires_grad) return;
    Tensor& pg = p->ensure_grad();
    for (int64_t i = 0; i < g.size(); ++i) pg[i] += g[i];
}

// elementwise unary with f(x) and df(x, y)
template <typename F, typename DF>
Var unary(const Var& a, F f, DF df) {
    Tensor out(a->value.shape);
    for (int64_t i = 0; i < out.size(); ++i) out[i] = f(a->value[i]);
    return make_node(std::move(out), {a}, [a, df](Node& self) {
        if (!a->requires_grad) return;
        Tensor& ga = a->ensure_grad();
        for (int64_t i = 0; i < self.grad.size(); ++i)
            ga[i] += self.grad[i] * df(a->value[i], self.value[i]);
    });
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a->value.same_shape(b->value))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a->value.shape_str() +
                                    " vs " + b->value.shape_str());
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }

Var constant(Tensor t) {
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    return n;
}

Var param(Tensor t) {
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    n->requires_grad = true;
    return n;
}

Var detach(const Var& v) { return constant(v->value); }

void backward(const Var& root) {
    if (root->value.size() != 1)
        throw std::invalid_argument("backward: root must be a scalar");
    // iterative post-order topo sort; state: absent=unvisited, 1=open, 2=done
    std::vector<Node*> order;
    std::unordered_map<Node*, int> state;
    std::vector<std::pair<Node*, size_t>> stack{{root.get(), 0}};
    state[root.get()] = 1;
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->parents.size()) {
            Node* p = n->parents[i++].get();
            if (p->requires_grad && p->backfn && state.find(p) == state.end()) {
                state[p] = 1;
                stack.push_back({p, 0});
            }
        } else {
            state[n] = 2;
            order.push_back(n);
            stack.pop_back();
        }
    }
    root->ensure_grad();
    root->grad[0] = 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backfn && n->grad.size() != 0) n->backfn(*n);
    }
}

void zero_grad(const std::vector<Var>& params) {
    for (const auto& p : params) p->grad = Tensor();
}

// ---- elementwise ----

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    Tensor out(a->value.shape);
    for (int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + b->value[i];
    return make_node(std::move(out), {a, b}, [a, b](Node& self) {
        Var pa = a, pb = b;
        accum(pa, self.grad);
        accum(pb, self.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    Tensor out(a->value.shape);
    for (int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] - b->value[i];
    return make_node(std::move(out), {a, b}, [a, b](Node& self) {
        if (a->requires_grad) {
            Var pa = a;
            accum(pa, self.grad);
        }
        if (b->requires_grad) {
            Tensor& gb = b->ensure_grad();
            for (int64_t i = 0; i < self.grad.size(); ++i) gb[i] -= self.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    Tensor out(a->value.shape);
    for (int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * b->value[i];
    return make_node(std::move(out), {a, b}, [a, b](Node& self) {
        if (a->requires_grad) {
            Tensor& ga = a->ensure_grad();
            for (int64_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * b->value[i];
        }
        if (b->requires_grad) {
            Tensor& gb = b->ensure_grad();
            for (int64_t i = 0; i < self.grad.size(); ++i) gb[i] += self.grad[i] * a->value[i];
        }
    });
}

Var scale(const Var& a, float c) {
    Tensor out(a->value.shape);
    for (int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * c;
    return make_node(std::move(out), {a}, [a, c](Node& self) {
        if (!a->requires_grad) return;
        Tensor& ga = a->ensure_grad();
        for (int64_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * c;
    });
}

Var add_scalar(const Var& a, float c) {
    Tensor out(a->value.shape);
    for (int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + c;
    return make_node(std::move(out), {a}, [a](Node& self) {
        Var pa = a;
        accum(pa, self.grad);
    });
}

Var neg(const Var& a) { return scale(a, -1.0f); }

Var relu(const Var& a) {
    return unary(a, [](float x) { return x > 0 ? x : 0.0f; },
                 [](float x, float) { return x > 0 ? 1.0f : 0.0f; });
}

Var silu(const Var& a) {
    return unary(a, [](float x) { return x / (1.0f + std::exp(-x)); },
                 [](float x, float) {
                     float s = 1.0f / (1.0f + std::exp(-x));
                     return s * (1.0f + x * (1.0f - s));
                 });
}

Var gelu(const Var& a) {
    // tanh approximation
    constexpr float k = 0.7978845608028654f;  // sqrt(2/pi)
    return unary(a,
                 [](float x) {
                     float inner = k * (x + 0.044715f * x * x * x);
                     return 0.5f * x * (1.0f + std::tanh(inner));
                 },
                 [](float x, float) {
                     float x3 = x * x * x;
                     float inner = k * (x + 0.044715f * x3);
                     float th = std::tanh(inner);
                     float sech2 = 1.0f - th * th;
                     return 0.5f * (1.0f + th) + 0.5f * x * sech2 * k * (1.0f + 3.0f * 0.044715f * x * x);
                 });
}

Var sigmoid(const Var& a) {
    return unary(a, [](float x) { return 1.0f / (1.0f + std::exp(-x)); },
                 [](float, float y) { return y * (1.0f - y); });
}

Var softplus(const Var& a) {
    return unary(a,
                 [](float x) { return x > 20.0f ? x : std::log1p(std::exp(x)); },
                 [](float x, float) { return 1.0f / (1.0f + std::exp(-x)); });
}

Var exp_v(const Var& a) {
    return unary(a, [](float x) { return std::exp(x); }, [](float, float y) { return y; });
}

Var log_v(const Var& a) {
    return unary(a, [](float x) { return std::log(x); }, [](float x, float) { return 1.0f / x; });
}

Var square(const Var& a) {
    return unary(a, [](float x) { return x * x; }, [](float x, float) { return 2.0f * x; });
}

Var sqrt_v(const Var& a) {
    return unary(a, [](float x) { return std::sqrt(x); },
                 [](float, float y) { return 0.5f / (y > 1e-12f ? y : 1e-12f); });
}

Var clamp(const Var& a, float lo, float hi) {
    return unary(a, [lo, hi](float x) { return std::min(hi, std::max(lo, x)); },
                 [lo, hi](float x, float) { return (x >= lo && x <= hi) ? 1.0f : 0.0f; });
}

// ---- reductions ----

Var sum_all(const Var& a) {
    float s = 0.0f;
    for (int64_t i = 0; i < a->value.size(); ++i) s += a->value[i];
    return make_node(Tensor::scalar(s), {a}, [a](Node& self) {
        if (!a->requires_grad) return;
        Tensor& ga = a->ensure_grad();
        float g = self.grad[0];
        for (int64_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
}

Var mean_all(const Var& a) { return scale(sum_all(a), 1.0f / static_cast<float>(a->value.size())); }

Var sum_rows(const Var& a) {
    int64_t r = a->value.rows2d();
    int c = a->value.cols2d();
    Tensor out({static_cast<int>(r), 1});
    for (int64_t i = 0; i < r; ++i) {
        float s = 0.0f;
        for (int j = 0; j < c; ++j) s += a->value[i * c + j];
        out[i] = s;
    }
    return make_node(std::move(out), {a}, [a, r, c](Node& self) {
        if (!a->requires_grad) return;
        Tensor& ga = a->ensure_grad();
        for (int64_t i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) ga[i * c + j] += self.grad[i];
    });
}

Var sum_cols(const Var& a) {
    int64_t r = a->value.rows2d();
    int c = a->value.cols2d();
    Tensor out({1, c});
    for (int64_t i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out[j] += a->value[i * c + j];
    return make_node(std::move(out), {a}, [a, r, c](Node& self) {
        if (!a->requires_grad) return;
        Tensor& ga = a->ensure_grad();
        for (int64_t i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) ga[i * c + j] += self.grad[j];
    });
}

// ---- matrix / shape ----

Var matmul(const Var& a, const Var& b) {
    if (a->value.rank() != 2 || b->value.rank() != 2 || a->value.dim(1) != b->value.dim(0))
        throw std::invalid_argument("matmul: incompatible shapes " + a->value.shape_str() + " x " +
                                    b->value.shape_str());
    int m = a->value.dim(0), n = b->value.dim(1);
    Tensor out({m, n});
    mmap(out).noalias() = cmap(a->value) * cmap(b->value);
    return make_node(std::move(out), {a, b}, [a, b](Node& self) {
        MapC gy(self.grad.data.data(), self.grad.rows2d(), self.grad.cols2d());
        if (a->requires_grad) {
            Tensor& ga = a->ensure_grad();
            mmap(ga).noalias() += gy * cmap(b->value).transpose();
        }
        if (b->requires_grad) {
            Tensor& gb = b->ensure_grad();
            mmap(gb).noalias() += cmap(a->value).transpose() * gy;
        }
    });
}

Var transpose(const Var& a) {
    if (a->value.rank() != 2) throw std::invalid_argument("transpose: rank-2 only");
    int m = a->value.dim(0), n = a->value.dim(1);
    Tensor out({n, m});
    mmap(out) = cmap(a->value).transpose();
    return make_node(std::move(out), {a}, [a](Node& self) {
        if (!a->requires_grad) return;
        Tensor& ga = a->ensure_grad();
        mmap(ga) += MapC(self.grad.data.data(), self.grad.rows2d(), self.grad.cols2d()).transpose();
    });
}

Var reshape(const Var& a, std::vector<int> shape) {
    Tensor out = a->value.reshaped(std::move(shape));
    return make_node(std::move(out), {a}, [a](Node& self) {
        if (!a->requires_grad) return;
        Tensor& ga = a->ensure_grad();
        for (int64_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
    int c = parts[0]->value.cols2d();
    int64_t rows = 0;
    for (const auto& p : parts) {
        if (p->value.cols2d() != c) throw std::invalid_argument("concat_rows: column mismatch");
        rows += p->value.rows2d();
    }
    Tensor out({static_cast<int>(rows), c});
    int64_t off = 0;
    for (const auto& p : parts) {
        std::copy(p->value.data.begin(), p->value.data.end(), out.data.begin() + off);
        off += p->value.size();
    }
    return make_node(std::move(out), parts, [parts](Node& self) {
        int64_t off = 0;
        for (auto p : parts) {
            int64_t n = p->value.size();
            if (p->requires_grad) {
                Tensor& g = p->ensure_grad();
                for (int64_t i = 0; i < n; ++i) g[i] += self.grad[off + i];
            }
            off += n;
        }
    });
}

Var slice_rows(const Var& a, int64_t start, int64_t count) {
    int c = a->value.cols2d();
    if (start < 0 || start + count > a->value.rows2d())
        throw std::invalid_argument("slice_rows: out of range");
    Tensor out({static_cast<int>(count), c});
    std::copy(a->value.data.begin() + start * c, a->value.data.begin() + (start + count) * c,
              out.data.begin());
    return make_node(std::move(out), {a}, [a, start, c](Node& self) {
        if (!a->requires_grad) return;
        Tensor& ga = a->ensure_grad();
        for (int64_t i = 0; i < self.grad.size(); ++i) ga[start * c + i] += self.grad[i];
    });
}

Var add_rowvec(const Var& m, const Var& v) {
    int c = m->value.cols2d();
    if (v->value.size() != c) throw std::invalid_argument("add_rowvec: width mismatch");
    int64_t r = m->value.rows2d();
    Tensor out(m->value.shape);
    for (int64_t i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out[i * c + j] = m->value[i * c + j] + v->value[j];
    return make_node(std::move(out), {m, v}, [m, v, r, c](Node& self) {
        if (m->requires_grad) {
            Var pm = m;
            accum(pm, self.grad);
        }
        if (v->requires_grad) {
            Tensor& gv = v->ensure_grad();
            for (int64_t i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) gv[j] += self.grad[i * c + j];
        }
    });
}

Var mul_rowvec(const Var& m, const Var& v) {
    int c = m->value.cols2d();
    if (v->value.size() != c) throw std::invalid_argument("mul_rowvec: width mismatch");
    int64_t r = m->value.rows2d();
    Tensor out(m->value.shape);
    for (int64_t i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out[i * c + j] = m->value[i * c + j] * v->value[j];
    return make_node(std::move(out), {m, v}, [m, v, r, c](Node& self) {
        if (m->requires_grad) {
            Tensor& gm = m->ensure_grad();
            for (int64_t i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) gm[i * c + j] += self.grad[i * c + j] * v->value[j];
        }
        if (v->requires_grad) {
            Tensor& gv = v->ensure_grad();
            for (int64_t i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) gv[j] += self.grad[i * c + j] * m->value[i * c + j];
        }
    });
}

Var scale_rows(const Var& m, const Var& s) {
    int64_t r = m->value.rows2d();
    int c = m->value.cols2d();
    if (s->value.size() != r) throw std::invalid_argument("scale_rows: row count mismatch");
    Tensor out(m->value.shape);
    for (int64_t i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out[i * c + j] = m->value[i * c + j] * s->value[i];
    return make_node(std::move(out), {m, s}, [m, s, r, c](Node& self) {
        if (m->requires_grad) {
            Tensor& gm = m->ensure_grad();
            for (int64_t i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) gm[i * c + j] += self.grad[i * c + j] * s->value[i];
        }
        if (s->requires_grad) {
            Tensor& gs = s->ensure_grad();
            for (int64_t i = 0; i < r; ++i) {
                float acc = 0.0f;
                for (int j = 0; j < c; ++j) acc += self.grad[i * c + j] * m->value[i * c + j];
                gs[i] += acc;
            }
        }
    });
}

Var gather_rows(const Var& table, const std::vector<int>& idx) {
    int c = table->value.cols2d();
    int64_t v = table->value.rows2d();
    Tensor out({static_cast<int>(idx.size()), c});
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= v) throw std::out_of_range("gather_rows: index out of range");
        std::copy(table->value.data.begin() + static_cast<int64_t>(idx[i]) * c,
                  table->value.data.begin() + static_cast<int64_t>(idx[i] + 1) * c,
                  out.data.begin() + static_cast<int64_t>(i) * c);
    }
    return make_node(std::move(out), {table}, [table, idx, c](Node& self) {
        if (!table->requires_grad) return;
        Tensor& g = table->ensure_grad();
        for (size_t i = 0; i < idx.size(); ++i)
            for (int j = 0; j < c; ++j)
                g[static_cast<int64_t>(idx[i]) * c + j] += self.grad[static_cast<int64_t>(i) * c + j];
    });
}

Var repeat_rows(const Var& a, int k) {
    int64_t r = a->value.rows2d();
    int c = a->value.cols2d();
    Tensor out({static_cast<int>(r * k), c});
    for (int64_t i = 0; i < r; ++i)
        for (int t = 0; t < k; ++t)
            std::copy(a->value.data.begin() + i * c, a->value.data.begin() + (i + 1) * c,
                      out.data.begin() + (i * k + t) * c);
    return make_node(std::move(out), {a}, [a, k, r, c](Node& self) {
        if (!a->requires_grad) return;
        Tensor& g = a->ensure_grad();
        for (int64_t i = 0; i < r; ++i)
            for (int t = 0; t < k; ++t)
                for (int j = 0; j < c; ++j) g[i * c + j] += self.grad[(i * k + t) * c + j];
    });
}

Var segment_sum_rows(const Var& a, int k) {
    int64_t r = a->value.rows2d();
    int c = a->value.cols2d();
    if (r % k != 0) throw std::invalid_argument("segment_sum_rows: rows not divisible by k");
    int64_t m = r / k;
    Tensor out({static_cast<int>(m), c});
    for (int64_t i = 0; i < m; ++i)
        for (int t = 0; t < k; ++t)
            for (int j = 0; j < c; ++j) out[i * c + j] += a->value[(i * k + t) * c + j];
    return make_node(std::move(out), {a}, [a, k, m, c](Node& self) {
        if (!a->requires_grad) return;
        Tensor& g = a->ensure_grad();
        for (int64_t i = 0; i < m; ++i)
            for (int t = 0; t < k; ++t)
                for (int j = 0; j < c; ++j) g[(i * k + t) * c + j] += self.grad[i * c + j];
    });
}

Var cumsum_excl_rows(const Var& a) {
    int64_t r = a->value.rows2d();
    int c = a->value.cols2d();
    Tensor out(a->value.shape);
    for (int64_t i = 0; i < r; ++i) {
        float acc = 0.0f;
        for (int j = 0; j < c; ++j) {
            out[i * c + j] = acc;
            acc += a->value[i * c + j];
        }
    }
    // d/da[j] of out[j'] is 1 for j' > j, so grad_a = reverse exclusive suffix sum
    return make_node(std::move(out), {a}, [a, r, c](Node& self) {
        if (!a->requires_grad) return;
        Tensor& g = a->ensure_grad();
        for (int64_t i = 0; i < r; ++i) {
            float acc = 0.0f;
            for (int j = c - 1; j >= 0; --j) {
                g[i * c + j] += acc;
                acc += self.grad[i * c + j];
            }
        }
    });
}

// ---- softmax / losses ----

Var softmax_rows(const Var& a) {
    int64_t r = a->value.rows2d();
    int c = a->value.cols2d();
    Tensor out(a->value.shape);
    for (int64_t i = 0; i < r; ++i) {
        float mx = a->value[i * c];
        for (int j = 1; j < c; ++j) mx = std::max(mx, a->value[i * c + j]);
        float s = 0.0f;
        for (int j = 0; j < c; ++j) {
            out[i * c + j] = std::exp(a->value[i * c + j] - mx);
            s += out[i * c + j];
        }
        for (int j = 0; j < c; ++j) out[i * c + j] /= s;
    }
    return make_node(std::move(out), {a}, [a, r, c](Node& self) {
        if (!a->requires_grad) return;
        Tensor& g = a->ensure_grad();
        for (int64_t i = 0; i < r; ++i) {
            float dot = 0.0f;
            for (int j = 0; j < c; ++j) dot += self.grad[i * c + j] * self.value[i * c + j];
            for (int j = 0; j < c; ++j)
                g[i * c + j] += self.value[i * c + j] * (self.grad[i * c + j] - dot);
        }
    });
}

Var cross_entropy_rows(const Var& logits, const std::vector<int>& labels) {
    int64_t n = logits->value.rows2d();
    int c = logits->value.cols2d();
    if (static_cast<int64_t>(labels.size()) != n)
        throw std::invalid_argument("cross_entropy_rows: label count mismatch");
    // stable log-softmax; store softmax for backward
    Tensor probs(logits->value.shape);
    double loss = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        float mx = logits->value[i * c];
        for (int j = 1; j < c; ++j) mx = std::max(mx, logits->value[i * c + j]);
        double s = 0.0;
        for (int j = 0; j < c; ++j) s += std::exp(static_cast<double>(logits->value[i * c + j] - mx));
        double logz = std::log(s) + mx;
        loss += logz - logits->value[i * c + labels[i]];
        for (int j = 0; j < c; ++j)
            probs[i * c + j] =
                static_cast<float>(std::exp(static_cast<double>(logits->value[i * c + j]) - logz));
    }
    Tensor out = Tensor::scalar(static_cast<float>(loss / static_cast<double>(n)));
    return make_node(std::move(out), {logits},
                     [logits, labels, probs = std::move(probs), n, c](Node& self) {
                         if (!logits->requires_grad) return;
                         Tensor& g = logits->ensure_grad();
                         float gy = self.grad[0] / static_cast<float>(n);
                         for (int64_t i = 0; i < n; ++i) {
                             for (int j = 0; j < c; ++j) g[i * c + j] += gy * probs[i * c + j];
                             g[i * c + labels[i]] -= gy;
                         }
                     });
}

// ---- image ops (NHWC) ----

namespace {

struct ConvDims {
    int n, h, w, ci, kh, kw, co, stride, pad, ho, wo;
};

ConvDims conv_dims(const Var& x, const Var& w, const Var& b, int kh, int kw, int stride, int pad) {
    if (x->value.rank() != 4) throw std::invalid_argument("conv2d: x must be NHWC rank 4");
    ConvDims d;
    d.n = x->value.dim(0);
    d.h = x->value.dim(1);
    d.w = x->value.dim(2);
    d.ci = x->value.dim(3);
    d.kh = kh;
    d.kw = kw;
    d.stride = stride;
    d.pad = pad;
    if (w->value.rank() != 2 || w->value.dim(0) != kh * kw * d.ci)
        throw std::invalid_argument("conv2d: weight shape mismatch");
    d.co = w->value.dim(1);
    if (b->value.size() != d.co) throw std::invalid_argument("conv2d: bias shape mismatch");
    d.ho = (d.h + 2 * pad - kh) / stride + 1;
    d.wo = (d.w + 2 * pad - kw) / stride + 1;
    return d;
}

// im2col: [N*Ho*Wo, kh*kw*Ci]
Tensor im2col(const Tensor& x, const ConvDims& d) {
    Tensor col({d.n * d.ho * d.wo, d.kh * d.kw * d.ci});
    const float* src = x.data.data();
    float* dst = col.data.data();
    for (int n = 0; n < d.n; ++n) {
        const float* xs = src + static_cast<int64_t>(n) * d.h * d.w * d.ci;
        for (int oy = 0; oy < d.ho; ++oy) {
            for (int ox = 0; ox < d.wo; ++ox) {
                for (int ky = 0; ky < d.kh; ++ky) {
                    int iy = oy * d.stride - d.pad + ky;
                    for (int kx = 0; kx < d.kw; ++kx) {
                        int ix = ox * d.stride - d.pad + kx;
                        if (iy >= 0 && iy < d.h && ix >= 0 && ix < d.w) {
                            const float* p = xs + (static_cast<int64_t>(iy) * d.w + ix) * d.ci;
                            std::copy(p, p + d.ci, dst);
                        } else {
                            std::fill(dst, dst + d.ci, 0.0f);
                        }
                        dst += d.ci;
                    }
                }
            }
        }
    }
    return col;
}

// scatter-add of col gradient back into x gradient
void col2im_accum(const Tensor& colg, const ConvDims& d, Tensor& gx) {
    const float* src = colg.data.data();
    for (int n = 0; n < d.n; ++n) {
        float* xs = gx.data.data() + static_cast<int64_t>(n) * d.h * d.w * d.ci;
        for (int oy = 0; oy < d.ho; ++oy) {
            for (int ox = 0; ox < d.wo; ++ox) {
                for (int ky = 0; ky < d.kh; ++ky) {
                    int iy = oy * d.stride - d.pad + ky;
                    for (int kx = 0; kx < d.kw; ++kx) {
                        int ix = ox * d.stride - d.pad + kx;
                        if (iy >= 0 && iy < d.h && ix >= 0 && ix < d.w) {
                            float* p = xs + (static_cast<int64_t>(iy) * d.w + ix) * d.ci;
                            for (int c = 0; c < d.ci; ++c) p[c] += src[c];
                        }
                        src += d.ci;
                    }
                }
            }
        }
    }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int kh, int kw, int stride, int pad) {
    ConvDims d = conv_dims(x, w, b, kh, kw, stride, pad);
    Tensor col = im2col(x->value, d);
    Tensor out({d.n, d.ho, d.wo, d.co});
    {
        MapM y(out.data.data(), static_cast<int64_t>(d.n) * d.ho * d.wo, d.co);
        y.noalias() = MapC(col.data.data(), col.rows2d(), col.cols2d()) * cmap(w->value);
        y.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(b->value.data.data(), d.co);
    }
    bool keep_col = x->requires_grad || w->requires_grad;
    auto colp = keep_col ? std::make_shared<Tensor>(std::move(col)) : nullptr;
    return make_node(std::move(out), {x, w, b}, [x, w, b, d, colp](Node& self) {
        MapC gy(self.grad.data.data(), static_cast<int64_t>(d.n) * d.ho * d.wo, d.co);
        if (b->requires_grad) {
            Tensor& gb = b->ensure_grad();
            Eigen::Map<Eigen::RowVectorXf>(gb.data.data(), d.co) += gy.colwise().sum();
        }
        if (w->requires_grad) {
            Tensor& gw = w->ensure_grad();
            mmap(gw).noalias() += MapC(colp->data.data(), colp->rows2d(), colp->cols2d()).transpose() * gy;
        }
        if (x->requires_grad) {
            Tensor colg({d.n * d.ho * d.wo, d.kh * d.kw * d.ci});
            mmap(colg).noalias() = gy * cmap(w->value).transpose();
            Tensor& gx = x->ensure_grad();
            col2im_accum(colg, d, gx);
        }
    });
}

Var upsample2x(const Var& x) {
    if (x->value.rank() != 4) throw std::invalid_argument("upsample2x: x must be NHWC rank 4");
    int n = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2), c = x->value.dim(3);
    Tensor out({n, 2 * h, 2 * w, c});
    for (int b = 0; b < n; ++b)
        for (int y = 0; y < 2 * h; ++y)
            for (int xx = 0; xx < 2 * w; ++xx) {
                const float* s =
                    x->value.data.data() +
                    ((static_cast<int64_t>(b) * h + y / 2) * w + xx / 2) * c;
                float* dgt = out.data.data() +
                             ((static_cast<int64_t>(b) * 2 * h + y) * 2 * w + xx) * c;
                std::copy(s, s + c, dgt);
            }
    return make_node(std::move(out), {x}, [x, n, h, w, c](Node& self) {
        if (!x->requires_grad) return;
        Tensor& g = x->ensure_grad();
        for (int b = 0; b < n; ++b)
            for (int y = 0; y < 2 * h; ++y)
                for (int xx = 0; xx < 2 * w; ++xx) {
                    const float* s = self.grad.data.data() +
                                     ((static_cast<int64_t>(b) * 2 * h + y) * 2 * w + xx) * c;
                    float* dgt =
                        g.data.data() + ((static_cast<int64_t>(b) * h + y / 2) * w + xx / 2) * c;
                    for (int k = 0; k < c; ++k) dgt[k] += s[k];
                }
    });
}

Var avgpool2x(const Var& x) {
    if (x->value.rank() != 4) throw std::invalid_argument("avgpool2x: x must be NHWC rank 4");
    int n = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2), c = x->value.dim(3);
    if (h % 2 != 0 || w % 2 != 0) throw std::invalid_argument("avgpool2x: H and W must be even");
    int ho = h / 2, wo = w / 2;
    Tensor out = Tensor::zeros({n, ho, wo, c});
    for (int b = 0; b < n; ++b)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
                const float* s =
                    x->value.data.data() + ((static_cast<int64_t>(b) * h + y) * w + xx) * c;
                float* dgt = out.data.data() +
                             ((static_cast<int64_t>(b) * ho + y / 2) * wo + xx / 2) * c;
                for (int k = 0; k < c; ++k) dgt[k] += 0.25f * s[k];
            }
    return make_node(std::move(out), {x}, [x, n, h, w, c, ho, wo](Node& self) {
        if (!x->requires_grad) return;
        Tensor& g = x->ensure_grad();
        for (int b = 0; b < n; ++b)
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) {
                    const float* s = self.grad.data.data() +
                                     ((static_cast<int64_t>(b) * ho + y / 2) * wo + xx / 2) * c;
                    float* dgt =
                        g.data.data() + ((static_cast<int64_t>(b) * h + y) * w + xx) * c;
                    for (int k = 0; k < c; ++k) dgt[k] += 0.25f * s[k];
                }
    });
}

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, float eps) {
    if (x->value.rank() != 4) throw std::invalid_argument("group_norm: x must be NHWC rank 4");
    int n = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2), c = x->value.dim(3);
    if (c % groups != 0) throw std::invalid_argument("group_norm: channels not divisible by groups");
    if (gamma->value.size() != c || beta->value.size() != c)
        throw std::invalid_argument("group_norm: affine parameter size mismatch");
    int cg = c / groups;
    int64_t gsz = static_cast<int64_t>(h) * w * cg;  // elements per (sample, group)

    Tensor out(x->value.shape);
    Tensor xhat(x->value.shape);
    std::vector<float> inv_std(static_cast<size_t>(n) * groups);
    for (int b = 0; b < n; ++b) {
        for (int g = 0; g < groups; ++g) {
            double mean = 0.0, var = 0.0;
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx)
                    for (int k = 0; k < cg; ++k) {
                        int64_t i = ((static_cast<int64_t>(b) * h + y) * w + xx) * c + g * cg + k;
                        mean += x->value[i];
                    }
            mean /= static_cast<double>(gsz);
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx)
                    for (int k = 0; k < cg; ++k) {
                        int64_t i = ((static_cast<int64_t>(b) * h + y) * w + xx) * c + g * cg + k;
                        double d = x->value[i] - mean;
                        var += d * d;
                    }
            var /= static_cast<double>(gsz);
            float is = static_cast<float>(1.0 / std::sqrt(var + eps));
            inv_std[static_cast<size_t>(b) * groups + g] = is;
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx)
                    for (int k = 0; k < cg; ++k) {
                        int64_t i = ((static_cast<int64_t>(b) * h + y) * w + xx) * c + g * cg + k;
                        float xh = (x->value[i] - static_cast<float>(mean)) * is;
                        xhat[i] = xh;
                        out[i] = xh * gamma->value[g * cg + k] + beta->value[g * cg + k];
                    }
        }
    }
    auto xhatp = std::make_shared<Tensor>(std::move(xhat));
    auto isp = std::make_shared<std::vector<float>>(std::move(inv_std));
    return make_node(std::move(out), {x, gamma, beta},
                     [x, gamma, beta, xhatp, isp, n, h, w, c, cg, groups, gsz](Node& self) {
                         const Tensor& xh = *xhatp;
                         if (gamma->requires_grad || beta->requires_grad) {
                             Tensor* gg = gamma->requires_grad ? &gamma->ensure_grad() : nullptr;
                             Tensor* gb = beta->requires_grad ? &beta->ensure_grad() : nullptr;
                             for (int64_t i = 0; i < self.grad.size(); ++i) {
                                 int ch = static_cast<int>(i % c);
                                 if (gg) (*gg)[ch] += self.grad[i] * xh[i];
                                 if (gb) (*gb)[ch] += self.grad[i];
                             }
                         }
                         if (!x->requires_grad) return;
                         Tensor& gx = x->ensure_grad();
                         for (int b = 0; b < n; ++b) {
                             for (int g = 0; g < groups; ++g) {
                                 // dxhat = dy * gamma; dx = is*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
                                 double s1 = 0.0, s2 = 0.0;
                                 for (int y = 0; y < h; ++y)
                                     for (int xx = 0; xx < w; ++xx)
                                         for (int k = 0; k < cg; ++k) {
                                             int64_t i = ((static_cast<int64_t>(b) * h + y) * w + xx) * c +
                                                         g * cg + k;
                                             float dxh = self.grad[i] * gamma->value[g * cg + k];
                                             s1 += dxh;
                                             s2 += dxh * xh[i];
                                         }
                                 s1 /= static_cast<double>(gsz);
                                 s2 /= static_cast<double>(gsz);
                                 float is = (*isp)[static_cast<size_t>(b) * groups + g];
                                 for (int y = 0; y < h; ++y)
                                     for (int xx = 0; xx < w; ++xx)
                                         for (int k = 0; k < cg; ++k) {
                                             int64_t i = ((static_cast<int64_t>(b) * h + y) * w + xx) * c +
                                                         g * cg + k;
                                             float dxh = self.grad[i] * gamma->value[g * cg + k];
                                             gx[i] += is * (dxh - static_cast<float>(s1) -
                                                            xh[i] * static_cast<float>(s2));
                                         }
                             }
                         }
                     });
}

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, float eps) {
    int64_t r = x->value.rows2d();
    int c = x->value.cols2d();
    if (gamma->value.size() != c || beta->value.size() != c)
        throw std::invalid_argument("layer_norm_rows: affine parameter size mismatch");
    Tensor out(x->value.shape);
    Tensor xhat(x->value.shape);
    std::vector<float> inv_std(static_cast<size_t>(r));
    for (int64_t i = 0; i < r; ++i) {
        double mean = 0.0;
        for (int j = 0; j < c; ++j) mean += x->value[i * c + j];
        mean /= c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) {
            double d = x->value[i * c + j] - mean;
            var += d * d;
        }
        var /= c;
        float is = static_cast<float>(1.0 / std::sqrt(var + eps));
        inv_std[static_cast<size_t>(i)] = is;
        for (int j = 0; j < c; ++j) {
            float xh = (x->value[i * c + j] - static_cast<float>(mean)) * is;
            xhat[i * c + j] = xh;
            out[i * c + j] = xh * gamma->value[j] + beta->value[j];
        }
    }
    auto xhatp = std::make_shared<Tensor>(std::move(xhat));
    auto isp = std::make_shared<std::vector<float>>(std::move(inv_std));
    return make_node(std::move(out), {x, gamma, beta}, [x, gamma, beta, xhatp, isp, r, c](Node& self) {
        const Tensor& xh = *xhatp;
        if (gamma->requires_grad || beta->requires_grad) {
            Tensor* gg = gamma->requires_grad ? &gamma->ensure_grad() : nullptr;
            Tensor* gb = beta->requires_grad ? &beta->ensure_grad() : nullptr;
            for (int64_t i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) {
                    if (gg) (*gg)[j] += self.grad[i * c + j] * xh[i * c + j];
                    if (gb) (*gb)[j] += self.grad[i * c + j];
                }
        }
        if (!x->requires_grad) return;
        Tensor& gx = x->ensure_grad();
        for (int64_t i = 0; i < r; ++i) {
            double s1 = 0.0, s2 = 0.0;
            for (int j = 0; j < c; ++j) {
                float dxh = self.grad[i * c + j] * gamma->value[j];
                s1 += dxh;
                s2 += dxh * xh[i * c + j];
            }
            s1 /= c;
            s2 /= c;
            float is = (*isp)[static_cast<size_t>(i)];
            for (int j = 0; j < c; ++j) {
                float dxh = self.grad[i * c + j] * gamma->value[j];
                gx[i * c + j] +=
                    is * (dxh - static_cast<float>(s1) - xh[i * c + j] * static_cast<float>(s2));
            }
        }
    });
}

Var mse(const Var& a, const Var& b) { return mean_all(square(sub(a, b))); }

}  // namespace gpsgen::ag
