#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "clfa/error.hpp"

// Minimal dense 2-D tensor engine with reverse-mode gradients over the fixed
// op vocabulary the adapter graph needs. 64-bit floats throughout: desk-scale
// problems are small enough that reliable finite-difference verification is
// worth more than raw speed. Nodes form an immutable DAG; backward walks it
// in reverse topological order exactly once.

namespace clfa::tc {

struct Node {
    int rows = 0;
    int cols = 0;
    std::vector<double> val;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    std::size_t size() const { return val.size(); }
    void ensure_grad() {
        if (grad.size() != val.size()) grad.assign(val.size(), 0.0);
    }
};

using NodePtr = std::shared_ptr<Node>;

/// Value-semantic handle to a graph node.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(int rows, int cols, bool requires_grad = false) {
        return full(rows, cols, 0.0, requires_grad);
    }

    static Tensor full(int rows, int cols, double v, bool requires_grad = false) {
        if (rows <= 0 || cols <= 0) raise(ErrorCode::ShapeMismatch, "tensor extents must be positive");
        auto n = std::make_shared<Node>();
        n->rows = rows;
        n->cols = cols;
        n->val.assign(static_cast<std::size_t>(rows) * cols, v);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor from(int rows, int cols, std::vector<double> data, bool requires_grad = false) {
        if (rows <= 0 || cols <= 0 || data.size() != static_cast<std::size_t>(rows) * cols)
            raise(ErrorCode::ShapeMismatch, "data length does not match extents");
        auto n = std::make_shared<Node>();
        n->rows = rows;
        n->cols = cols;
        n->val = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor scalar(double v, bool requires_grad = false) { return full(1, 1, v, requires_grad); }

    bool defined() const { return node_ != nullptr; }
    int rows() const { return node_->rows; }
    int cols() const { return node_->cols; }
    std::size_t size() const { return node_->val.size(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }

    std::span<const double> values() const { return node_->val; }
    /// Mutable access for leaf parameters (optimizer updates, perturbations).
    std::span<double> values_mut() { return node_->val; }

    /// Gradient accumulated by the last backward(); zeros if disconnected.
    std::vector<double> grad() const {
        if (!node_ || node_->grad.size() != node_->val.size()) return std::vector<double>(node_ ? node_->size() : 0, 0.0);
        return node_->grad;
    }

    double at(int r, int c) const { return node_->val[static_cast<std::size_t>(r) * node_->cols + c]; }
    double item() const {
        if (size() != 1) raise(ErrorCode::ShapeMismatch, "item() on non-scalar tensor");
        return node_->val[0];
    }

    NodePtr node() const { return node_; }

private:
    explicit Tensor(NodePtr n) : node_(std::move(n)) {}
    friend Tensor make_op(int rows, int cols, std::vector<NodePtr> parents, std::function<void(Node&)> backward_fn);

    NodePtr node_;
};

/// Builds an op output node. Parent links and the backward closure are kept
/// only when some input needs gradients, so frozen forward passes allocate
/// plain values and the graph frees itself as handles go out of scope.
inline Tensor make_op(int rows, int cols, std::vector<NodePtr> parents, std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->rows = rows;
    n->cols = cols;
    n->val.assign(static_cast<std::size_t>(rows) * cols, 0.0);
    bool needs = false;
    for (const auto& p : parents)
        if (p->requires_grad) needs = true;
    if (needs) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(n));
}

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        raise(ErrorCode::ShapeMismatch, std::string(op) + ": shapes differ");
}

// C[m x n] += A[m x k] * B[k x n]
inline void mm_acc(const double* A, const double* B, double* C, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        double* crow = C + static_cast<std::size_t>(i) * n;
        const double* arow = A + static_cast<std::size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const double a = arow[p];
            if (a == 0.0) continue;
            const double* brow = B + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

// C[m x k] += A[m x n] * B^T where B is [k x n]
inline void mm_nt_acc(const double* A, const double* B, double* C, int m, int n, int k) {
    for (int i = 0; i < m; ++i) {
        const double* arow = A + static_cast<std::size_t>(i) * n;
        double* crow = C + static_cast<std::size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const double* brow = B + static_cast<std::size_t>(p) * n;
            double acc = 0.0;
            for (int j = 0; j < n; ++j) acc += arow[j] * brow[j];
            crow[p] += acc;
        }
    }
}

// C[k x n] += A^T * B where A is [m x k], B is [m x n]
inline void mm_tn_acc(const double* A, const double* B, double* C, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = A + static_cast<std::size_t>(i) * k;
        const double* brow = B + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double a = arow[p];
            if (a == 0.0) continue;
            double* crow = C + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows())
        raise(ErrorCode::ShapeMismatch, "matmul: inner extents differ (" + std::to_string(a.cols()) + " vs " +
                                            std::to_string(b.rows()) + ")");
    const int m = a.rows(), k = a.cols(), n = b.cols();
    auto an = a.node(), bn = b.node();
    Tensor out = make_op(m, n, {an, bn}, [an, bn, m, k, n](Node& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            detail::mm_nt_acc(self.grad.data(), bn->val.data(), an->grad.data(), m, n, k);
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            detail::mm_tn_acc(an->val.data(), self.grad.data(), bn->grad.data(), m, k, n);
        }
    });
    detail::mm_acc(an->val.data(), bn->val.data(), out.node()->val.data(), m, k, n);
    return out;
}

inline Tensor transpose(const Tensor& a) {
    const int m = a.rows(), n = a.cols();
    auto an = a.node();
    Tensor out = make_op(n, m, {an}, [an, m, n](Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j) an->grad[static_cast<std::size_t>(j) * n + i] += self.grad[static_cast<std::size_t>(i) * m + j];
    });
    auto& v = out.node()->val;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) v[static_cast<std::size_t>(j) * m + i] = an->val[static_cast<std::size_t>(i) * n + j];
    return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    auto an = a.node(), bn = b.node();
    Tensor out = make_op(a.rows(), a.cols(), {an, bn}, [an, bn](Node& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < self.size(); ++i) an->grad[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < self.size(); ++i) bn->grad[i] += self.grad[i];
        }
    });
    auto& v = out.node()->val;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = an->val[i] + bn->val[i];
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    auto an = a.node(), bn = b.node();
    Tensor out = make_op(a.rows(), a.cols(), {an, bn}, [an, bn](Node& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < self.size(); ++i) an->grad[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < self.size(); ++i) bn->grad[i] -= self.grad[i];
        }
    });
    auto& v = out.node()->val;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = an->val[i] - bn->val[i];
    return out;
}

inline Tensor scale(const Tensor& a, double c) {
    auto an = a.node();
    Tensor out = make_op(a.rows(), a.cols(), {an}, [an, c](Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < self.size(); ++i) an->grad[i] += c * self.grad[i];
    });
    auto& v = out.node()->val;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = c * an->val[i];
    return out;
}

/// Adds a 1 x C row vector to every row of A (bias broadcast).
inline Tensor add_rowvec(const Tensor& a, const Tensor& row) {
    if (row.rows() != 1 || row.cols() != a.cols()) raise(ErrorCode::ShapeMismatch, "add_rowvec: row must be 1 x cols(A)");
    auto an = a.node(), rn = row.node();
    const int m = a.rows(), n = a.cols();
    Tensor out = make_op(m, n, {an, rn}, [an, rn, m, n](Node& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < self.size(); ++i) an->grad[i] += self.grad[i];
        }
        if (rn->requires_grad) {
            rn->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) rn->grad[j] += self.grad[static_cast<std::size_t>(i) * n + j];
        }
    });
    auto& v = out.node()->val;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) v[static_cast<std::size_t>(i) * n + j] = an->val[static_cast<std::size_t>(i) * n + j] + rn->val[j];
    return out;
}

/// Elementwise max(x, slope*x). Subgradient at 0 takes the slope branch.
inline Tensor leaky_relu(const Tensor& a, double slope = 0.01) {
    auto an = a.node();
    Tensor out = make_op(a.rows(), a.cols(), {an}, [an, slope](Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < self.size(); ++i)
            an->grad[i] += (an->val[i] > 0.0 ? 1.0 : slope) * self.grad[i];
    });
    auto& v = out.node()->val;
    for (std::size_t i = 0; i < v.size(); ++i) {
        double x = an->val[i];
        v[i] = x > 0.0 ? x : slope * x;
    }
    return out;
}

/// Depthwise 1-D convolution along the row (token) axis with zero "same"
/// padding, stride 1. x is N x T, kernels is T x k, one kernel row per
/// channel; k must be odd.
inline Tensor depthwise_conv1d(const Tensor& x, const Tensor& kernels) {
    if (kernels.rows() != x.cols())
        raise(ErrorCode::ShapeMismatch, "depthwise_conv1d: kernel rows must equal channel count");
    const int k = kernels.cols();
    if (k % 2 == 0) raise(ErrorCode::EvenKernel, "kernel width must be odd, got " + std::to_string(k));
    const int n = x.rows(), t = x.cols(), half = k / 2;
    auto xn = x.node(), kn = kernels.node();
    Tensor out = make_op(n, t, {xn, kn}, [xn, kn, n, t, k, half](Node& self) {
        if (xn->requires_grad) {
            xn->ensure_grad();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < k; ++j) {
                    int src = i + j - half;
                    if (src < 0 || src >= n) continue;
                    for (int c = 0; c < t; ++c)
                        xn->grad[static_cast<std::size_t>(src) * t + c] +=
                            self.grad[static_cast<std::size_t>(i) * t + c] * kn->val[static_cast<std::size_t>(c) * k + j];
                }
        }
        if (kn->requires_grad) {
            kn->ensure_grad();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < k; ++j) {
                    int src = i + j - half;
                    if (src < 0 || src >= n) continue;
                    for (int c = 0; c < t; ++c)
                        kn->grad[static_cast<std::size_t>(c) * k + j] +=
                            self.grad[static_cast<std::size_t>(i) * t + c] * xn->val[static_cast<std::size_t>(src) * t + c];
                }
        }
    });
    auto& v = out.node()->val;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j) {
            int src = i + j - half;
            if (src < 0 || src >= n) continue;
            for (int c = 0; c < t; ++c)
                v[static_cast<std::size_t>(i) * t + c] +=
                    xn->val[static_cast<std::size_t>(src) * t + c] * kn->val[static_cast<std::size_t>(c) * k + j];
        }
    return out;
}

/// Row-wise softmax with max subtraction for stability.
inline Tensor softmax_rows(const Tensor& a) {
    auto an = a.node();
    const int m = a.rows(), n = a.cols();
    Tensor out = make_op(m, n, {an}, [an, m, n](Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (int i = 0; i < m; ++i) {
            const double* y = self.val.data() + static_cast<std::size_t>(i) * n;
            const double* dy = self.grad.data() + static_cast<std::size_t>(i) * n;
            double dot = 0.0;
            for (int j = 0; j < n; ++j) dot += dy[j] * y[j];
            double* dx = an->grad.data() + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) dx[j] += (dy[j] - dot) * y[j];
        }
    });
    auto& v = out.node()->val;
    for (int i = 0; i < m; ++i) {
        const double* x = an->val.data() + static_cast<std::size_t>(i) * n;
        double* y = v.data() + static_cast<std::size_t>(i) * n;
        double mx = x[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
        double sum = 0.0;
        for (int j = 0; j < n; ++j) {
            y[j] = std::exp(x[j] - mx);
            sum += y[j];
        }
        for (int j = 0; j < n; ++j) y[j] /= sum;
    }
    return out;
}

/// Row-wise l2 normalization; rows shorter than eps are divided by eps, so
/// the zero vector maps to itself.
inline Tensor l2_normalize_rows(const Tensor& a, double eps = 1e-8) {
    auto an = a.node();
    const int m = a.rows(), n = a.cols();
    auto norms = std::make_shared<std::vector<double>>(static_cast<std::size_t>(m), 0.0);
    Tensor out = make_op(m, n, {an}, [an, norms, m, n, eps](Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (int i = 0; i < m; ++i) {
            const double* x = an->val.data() + static_cast<std::size_t>(i) * n;
            const double* dy = self.grad.data() + static_cast<std::size_t>(i) * n;
            double* dx = an->grad.data() + static_cast<std::size_t>(i) * n;
            double nm = (*norms)[static_cast<std::size_t>(i)];
            double used = std::max(nm, eps);
            if (nm > eps) {
                double dot = 0.0;
                for (int j = 0; j < n; ++j) dot += x[j] * dy[j];
                double inv = 1.0 / used, inv3 = inv * inv * inv;
                for (int j = 0; j < n; ++j) dx[j] += dy[j] * inv - x[j] * dot * inv3;
            } else {
                for (int j = 0; j < n; ++j) dx[j] += dy[j] / used;
            }
        }
    });
    auto& v = out.node()->val;
    for (int i = 0; i < m; ++i) {
        const double* x = an->val.data() + static_cast<std::size_t>(i) * n;
        double* y = v.data() + static_cast<std::size_t>(i) * n;
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += x[j] * x[j];
        double nm = std::sqrt(s);
        (*norms)[static_cast<std::size_t>(i)] = nm;
        double inv = 1.0 / std::max(nm, eps);
        for (int j = 0; j < n; ++j) y[j] = x[j] * inv;
    }
    return out;
}

/// Row-wise layer normalization with affine parameters (1 x C each).
inline Tensor layer_norm_rows(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
    if (gamma.rows() != 1 || gamma.cols() != a.cols() || beta.rows() != 1 || beta.cols() != a.cols())
        raise(ErrorCode::ShapeMismatch, "layer_norm_rows: affine params must be 1 x cols(A)");
    auto an = a.node(), gn = gamma.node(), bn = beta.node();
    const int m = a.rows(), n = a.cols();
    auto stats = std::make_shared<std::vector<double>>(static_cast<std::size_t>(m) * 2, 0.0);  // mean, inv_std per row
    Tensor out = make_op(m, n, {an, gn, bn}, [an, gn, bn, stats, m, n](Node& self) {
        for (int i = 0; i < m; ++i) {
            const double mean = (*stats)[static_cast<std::size_t>(i) * 2];
            const double inv_std = (*stats)[static_cast<std::size_t>(i) * 2 + 1];
            const double* x = an->val.data() + static_cast<std::size_t>(i) * n;
            const double* dy = self.grad.data() + static_cast<std::size_t>(i) * n;
            if (gn->requires_grad) {
                gn->ensure_grad();
                for (int j = 0; j < n; ++j) gn->grad[j] += dy[j] * (x[j] - mean) * inv_std;
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int j = 0; j < n; ++j) bn->grad[j] += dy[j];
            }
            if (an->requires_grad) {
                an->ensure_grad();
                double sum_g = 0.0, sum_gx = 0.0;
                for (int j = 0; j < n; ++j) {
                    double g = dy[j] * gn->val[j];
                    double xh = (x[j] - mean) * inv_std;
                    sum_g += g;
                    sum_gx += g * xh;
                }
                double* dx = an->grad.data() + static_cast<std::size_t>(i) * n;
                for (int j = 0; j < n; ++j) {
                    double g = dy[j] * gn->val[j];
                    double xh = (x[j] - mean) * inv_std;
                    dx[j] += inv_std * (g - sum_g / n - xh * sum_gx / n);
                }
            }
        }
    });
    auto& v = out.node()->val;
    for (int i = 0; i < m; ++i) {
        const double* x = an->val.data() + static_cast<std::size_t>(i) * n;
        double* y = v.data() + static_cast<std::size_t>(i) * n;
        double mean = 0.0;
        for (int j = 0; j < n; ++j) mean += x[j];
        mean /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) var += (x[j] - mean) * (x[j] - mean);
        var /= n;
        double inv_std = 1.0 / std::sqrt(var + eps);
        (*stats)[static_cast<std::size_t>(i) * 2] = mean;
        (*stats)[static_cast<std::size_t>(i) * 2 + 1] = inv_std;
        for (int j = 0; j < n; ++j) y[j] = gn->val[j] * (x[j] - mean) * inv_std + bn->val[j];
    }
    return out;
}

inline Tensor slice_rows(const Tensor& a, int r0, int r1) {
    if (r0 < 0 || r1 > a.rows() || r0 >= r1) raise(ErrorCode::ShapeMismatch, "slice_rows: bad range");
    auto an = a.node();
    const int n = a.cols(), m = r1 - r0;
    Tensor out = make_op(m, n, {an}, [an, r0, m, n](Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                an->grad[static_cast<std::size_t>(i + r0) * n + j] += self.grad[static_cast<std::size_t>(i) * n + j];
    });
    auto& v = out.node()->val;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) v[static_cast<std::size_t>(i) * n + j] = an->val[static_cast<std::size_t>(i + r0) * n + j];
    return out;
}

inline Tensor slice_cols(const Tensor& a, int c0, int c1) {
    if (c0 < 0 || c1 > a.cols() || c0 >= c1) raise(ErrorCode::ShapeMismatch, "slice_cols: bad range");
    auto an = a.node();
    const int m = a.rows(), nin = a.cols(), n = c1 - c0;
    Tensor out = make_op(m, n, {an}, [an, c0, m, nin, n](Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                an->grad[static_cast<std::size_t>(i) * nin + c0 + j] += self.grad[static_cast<std::size_t>(i) * n + j];
    });
    auto& v = out.node()->val;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) v[static_cast<std::size_t>(i) * n + j] = an->val[static_cast<std::size_t>(i) * nin + c0 + j];
    return out;
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) raise(ErrorCode::ShapeMismatch, "concat_cols: empty input");
    const int m = parts[0].rows();
    int n = 0;
    std::vector<NodePtr> parents;
    parents.reserve(parts.size());
    for (const auto& p : parts) {
        if (p.rows() != m) raise(ErrorCode::ShapeMismatch, "concat_cols: row counts differ");
        n += p.cols();
        parents.push_back(p.node());
    }
    auto parents_copy = parents;
    Tensor out = make_op(m, n, std::move(parents), [parents_copy, m, n](Node& self) {
        int off = 0;
        for (const auto& p : parents_copy) {
            const int pc = p->cols;
            if (p->requires_grad) {
                p->ensure_grad();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < pc; ++j)
                        p->grad[static_cast<std::size_t>(i) * pc + j] += self.grad[static_cast<std::size_t>(i) * n + off + j];
            }
            off += pc;
        }
    });
    auto& v = out.node()->val;
    int off = 0;
    for (const auto& p : parents_copy) {
        const int pc = p->cols;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < pc; ++j) v[static_cast<std::size_t>(i) * n + off + j] = p->val[static_cast<std::size_t>(i) * pc + j];
        off += pc;
    }
    return out;
}

inline Tensor sum_all(const Tensor& a) {
    auto an = a.node();
    Tensor out = make_op(1, 1, {an}, [an](Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += self.grad[0];
    });
    double s = 0.0;
    for (double x : an->val) s += x;
    out.node()->val[0] = s;
    return out;
}

inline Tensor mean_all(const Tensor& a) {
    auto an = a.node();
    const double inv = 1.0 / static_cast<double>(a.size());
    Tensor out = make_op(1, 1, {an}, [an, inv](Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += self.grad[0] * inv;
    });
    double s = 0.0;
    for (double x : an->val) s += x;
    out.node()->val[0] = s * inv;
    return out;
}

/// Max over all entries; gradient routes to the first maximizer.
inline Tensor max_all(const Tensor& a) {
    auto an = a.node();
    auto argmax = std::make_shared<std::size_t>(0);
    Tensor out = make_op(1, 1, {an}, [an, argmax](Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        an->grad[*argmax] += self.grad[0];
    });
    std::size_t best = 0;
    for (std::size_t i = 1; i < an->val.size(); ++i)
        if (an->val[i] > an->val[best]) best = i;
    *argmax = best;
    out.node()->val[0] = an->val[best];
    return out;
}

/// Binary cross-entropy of a scalar probability against label y in {0,1}.
/// The probability is clamped to [eps, 1-eps]; the gradient is exact on the
/// clamp interior and zero outside it.
inline Tensor bce(const Tensor& p, int y, double eps = 1e-7) {
    if (p.size() != 1) raise(ErrorCode::ShapeMismatch, "bce: probability must be scalar");
    if (y != 0 && y != 1) raise(ErrorCode::InvalidArgument, "bce: label must be 0 or 1");
    auto pn = p.node();
    Tensor out = make_op(1, 1, {pn}, [pn, y, eps](Node& self) {
        if (!pn->requires_grad) return;
        pn->ensure_grad();
        double raw = pn->val[0];
        if (raw <= eps || raw >= 1.0 - eps) return;  // clamped: flat
        double d = (y == 1) ? -1.0 / raw : 1.0 / (1.0 - raw);
        pn->grad[0] += d * self.grad[0];
    });
    double ph = std::min(std::max(pn->val[0], eps), 1.0 - eps);
    out.node()->val[0] = -(y == 1 ? std::log(ph) : std::log(1.0 - ph));
    return out;
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

/// Reverse-mode accumulation from a scalar loss. Grad buffers of every node
/// reachable from the loss are zeroed first, then each node's backward runs
/// exactly once in reverse topological order.
inline void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) raise(ErrorCode::NonScalarLoss, "backward requires a defined scalar loss");
    NodePtr root = loss.node();
    if (!root->requires_grad) return;  // nothing trainable feeds the loss

    std::vector<Node*> topo;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;  // node, next-parent index
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* parent = node->parents[idx].get();
            ++idx;
            if (parent->requires_grad && !seen.count(parent)) {
                seen.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }
    for (Node* n : topo) n->grad.assign(n->val.size(), 0.0);
    root->grad[0] = 1.0;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it)
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

/// Compares reverse-mode gradients of `forward()` (rebuilt from the current
/// values of `params` on every call) against central differences for every
/// coordinate of every parameter. Returns the max relative error, with
/// |a - b| / max(1, |a|, |b|) as the metric so near-zero gradients are judged
/// absolutely.
inline double grad_check(const std::function<Tensor()>& forward, std::vector<Tensor> params, double step = 1e-5) {
    Tensor loss = forward();
    backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (auto& p : params) analytic.push_back(p.grad());

    double worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto vals = params[pi].values_mut();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double keep = vals[i];
            vals[i] = keep + step;
            double up = forward().item();
            vals[i] = keep - step;
            double down = forward().item();
            vals[i] = keep;
            double fd = (up - down) / (2.0 * step);
            double ad = analytic[pi][i];
            double rel = std::fabs(ad - fd) / std::max({1.0, std::fabs(ad), std::fabs(fd)});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

}  // namespace clfa::tc
