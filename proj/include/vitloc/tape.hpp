#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "vitloc/tensor.hpp"

namespace vitloc {

/// Reverse-mode autodiff over Tensor<T>. Operations append nodes; ids are
/// creation-ordered, so one reverse sweep over ids is a topological backward
/// pass that visits each node exactly once.
template <typename T>
class Tape {
public:
    using Id = std::size_t;

    Id leaf(Tensor<T> value, bool requires_grad = true) {
        return push(std::move(value), requires_grad);
    }

    const Tensor<T>& value(Id id) const { return nodes_[id].value; }

    /// Gradient of the last backward()'s loss w.r.t. node `id`. Nodes not on
    /// the path to the loss report all-zero gradients.
    const Tensor<T>& grad(Id id) {
        Node& n = nodes_[id];
        if (n.grad.numel() == 0) n.grad = Tensor<T>::zeros(n.value.shape());
        return n.grad;
    }

    std::size_t size() const { return nodes_.size(); }

    void reset() { nodes_.clear(); }

    // ---- operations -------------------------------------------------------

    Id matmul(Id a, Id b) {
        const Tensor<T>& A = nodes_[a].value;
        const Tensor<T>& B = nodes_[b].value;
        require_matrix(A, "matmul lhs");
        require_matrix(B, "matmul rhs");
        const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
        if (B.rows() != k) {
            throw ShapeError("matmul inner extents differ: " + A.shape_str() + " vs " + B.shape_str());
        }
        Tensor<T> C({m, n});
        matmul_accumulate(A.data(), B.data(), C.data(), m, k, n);
        Id out = push(std::move(C), needs(a) || needs(b));
        nodes_[out].backward = [this, a, b, m, k, n](const Tensor<T>& dC) {
            // both products run through the vectorized kernel via an explicit
            // transpose; the copies are cheap next to the multiplies
            if (needs(a)) {
                // dA += dC * B^T
                const Tensor<T>& B = nodes_[b].value;
                std::vector<T> bt(n * k);
                for (std::size_t kk = 0; kk < k; ++kk)
                    for (std::size_t j = 0; j < n; ++j) bt[j * k + kk] = B.data()[kk * n + j];
                matmul_accumulate(dC.data(), bt.data(), grad_buf(a).data(), m, n, k);
            }
            if (needs(b)) {
                // dB += A^T * dC
                const Tensor<T>& A = nodes_[a].value;
                std::vector<T> at(k * m);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t kk = 0; kk < k; ++kk) at[kk * m + i] = A.data()[i * k + kk];
                matmul_accumulate(at.data(), dC.data(), grad_buf(b).data(), k, m, n);
            }
        };
        return out;
    }

    Id transpose(Id a) {
        const Tensor<T>& A = nodes_[a].value;
        require_matrix(A, "transpose");
        const std::size_t m = A.rows(), n = A.cols();
        Tensor<T> C({n, m});
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) C.data()[j * m + i] = A.data()[i * n + j];
        Id out = push(std::move(C), needs(a));
        nodes_[out].backward = [this, a, m, n](const Tensor<T>& dC) {
            if (!needs(a)) return;
            Tensor<T>& dA = grad_buf(a);
            for (std::size_t j = 0; j < n; ++j)
                for (std::size_t i = 0; i < m; ++i) dA.data()[i * n + j] += dC.data()[j * m + i];
        };
        return out;
    }

    Id add(Id a, Id b) {
        const Tensor<T>& A = nodes_[a].value;
        const Tensor<T>& B = nodes_[b].value;
        if (!A.same_shape(B)) {
            throw ShapeError("add shape mismatch: " + A.shape_str() + " vs " + B.shape_str());
        }
        Tensor<T> C = A;
        for (std::size_t i = 0; i < C.numel(); ++i) C[i] += B[i];
        Id out = push(std::move(C), needs(a) || needs(b));
        nodes_[out].backward = [this, a, b](const Tensor<T>& dC) {
            for (Id in : {a, b}) {
                if (!needs(in)) continue;
                Tensor<T>& d = grad_buf(in);
                for (std::size_t i = 0; i < dC.numel(); ++i) d[i] += dC[i];
            }
        };
        return out;
    }

    /// Row-broadcast bias add: x (m x n) + v (n).
    Id add_rowvec(Id a, Id v) {
        const Tensor<T>& A = nodes_[a].value;
        const Tensor<T>& V = nodes_[v].value;
        require_matrix(A, "add_rowvec lhs");
        const std::size_t m = A.rows(), n = A.cols();
        if (V.numel() != n) {
            throw ShapeError("bias length " + std::to_string(V.numel()) + " vs row width " + std::to_string(n));
        }
        Tensor<T> C = A;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) C.data()[i * n + j] += V[j];
        Id out = push(std::move(C), needs(a) || needs(v));
        nodes_[out].backward = [this, a, v, m, n](const Tensor<T>& dC) {
            if (needs(a)) {
                Tensor<T>& dA = grad_buf(a);
                for (std::size_t i = 0; i < dC.numel(); ++i) dA[i] += dC[i];
            }
            if (needs(v)) {
                Tensor<T>& dV = grad_buf(v);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) dV[j] += dC.data()[i * n + j];
            }
        };
        return out;
    }

    Id scale(Id a, T c) {
        const Tensor<T>& A = nodes_[a].value;
        Tensor<T> C = A;
        for (std::size_t i = 0; i < C.numel(); ++i) C[i] *= c;
        Id out = push(std::move(C), needs(a));
        nodes_[out].backward = [this, a, c](const Tensor<T>& dC) {
            if (!needs(a)) return;
            Tensor<T>& dA = grad_buf(a);
            for (std::size_t i = 0; i < dC.numel(); ++i) dA[i] += c * dC[i];
        };
        return out;
    }

    /// Softmax along `axis`. Subtract-max stabilized; each slice sums to 1.
    Id softmax(Id a, std::size_t axis) {
        const Tensor<T>& A = nodes_[a].value;
        if (axis >= A.rank()) throw ShapeError("softmax axis out of range");
        Tensor<T> C = A;
        for_each_line(A.shape(), axis, [&](std::size_t base, std::size_t stride, std::size_t len) {
            T mx = A[base];
            for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, A[base + i * stride]);
            T sum = T(0);
            for (std::size_t i = 0; i < len; ++i) {
                T e = std::exp(A[base + i * stride] - mx);
                C[base + i * stride] = e;
                sum += e;
            }
            for (std::size_t i = 0; i < len; ++i) C[base + i * stride] /= sum;
        });
        Id out = push(std::move(C), needs(a));
        nodes_[out].backward = [this, a, out, axis](const Tensor<T>& dC) {
            if (!needs(a)) return;
            const Tensor<T>& Y = nodes_[out].value;
            Tensor<T>& dA = grad_buf(a);
            for_each_line(Y.shape(), axis, [&](std::size_t base, std::size_t stride, std::size_t len) {
                T dot = T(0);
                for (std::size_t i = 0; i < len; ++i) dot += dC[base + i * stride] * Y[base + i * stride];
                for (std::size_t i = 0; i < len; ++i) {
                    const std::size_t p = base + i * stride;
                    dA[p] += Y[p] * (dC[p] - dot);
                }
            });
        };
        return out;
    }

    /// Layer normalization over the last axis, then per-feature affine.
    Id layernorm(Id x, Id gamma, Id beta, T eps) {
        const Tensor<T>& X = nodes_[x].value;
        const std::size_t n = X.shape().back();
        const std::size_t rows = X.numel() / n;
        if (nodes_[gamma].value.numel() != n || nodes_[beta].value.numel() != n) {
            throw ShapeError("layernorm gamma/beta must match last-axis extent " + std::to_string(n));
        }
        const Tensor<T>& G = nodes_[gamma].value;
        const Tensor<T>& B = nodes_[beta].value;
        Tensor<T> C(X.shape());
        // cache per-row inv std and normalized values for backward
        auto xhat = std::make_shared<std::vector<T>>(X.numel());
        auto istd = std::make_shared<std::vector<T>>(rows);
        for (std::size_t r = 0; r < rows; ++r) {
            const T* xr = X.data() + r * n;
            T mean = T(0);
            for (std::size_t j = 0; j < n; ++j) mean += xr[j];
            mean /= static_cast<T>(n);
            T var = T(0);
            for (std::size_t j = 0; j < n; ++j) {
                const T d = xr[j] - mean;
                var += d * d;
            }
            var /= static_cast<T>(n);
            const T is = T(1) / std::sqrt(var + eps);
            (*istd)[r] = is;
            for (std::size_t j = 0; j < n; ++j) {
                const T h = (xr[j] - mean) * is;
                (*xhat)[r * n + j] = h;
                C.data()[r * n + j] = G[j] * h + B[j];
            }
        }
        Id out = push(std::move(C), needs(x) || needs(gamma) || needs(beta));
        nodes_[out].backward = [this, x, gamma, beta, rows, n, xhat, istd](const Tensor<T>& dC) {
            const Tensor<T>& G = nodes_[gamma].value;
            if (needs(gamma)) {
                Tensor<T>& dG = grad_buf(gamma);
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < n; ++j) dG[j] += dC[r * n + j] * (*xhat)[r * n + j];
            }
            if (needs(beta)) {
                Tensor<T>& dB = grad_buf(beta);
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < n; ++j) dB[j] += dC[r * n + j];
            }
            if (needs(x)) {
                Tensor<T>& dX = grad_buf(x);
                for (std::size_t r = 0; r < rows; ++r) {
                    T mean_g = T(0), mean_gh = T(0);
                    for (std::size_t j = 0; j < n; ++j) {
                        const T gy = G[j] * dC[r * n + j];
                        mean_g += gy;
                        mean_gh += gy * (*xhat)[r * n + j];
                    }
                    mean_g /= static_cast<T>(n);
                    mean_gh /= static_cast<T>(n);
                    for (std::size_t j = 0; j < n; ++j) {
                        const T gy = G[j] * dC[r * n + j];
                        dX[r * n + j] += (gy - mean_g - (*xhat)[r * n + j] * mean_gh) * (*istd)[r];
                    }
                }
            }
        };
        return out;
    }

    /// Exact erf-form GELU: x * Phi(x).
    Id gelu(Id a) {
        const Tensor<T>& A = nodes_[a].value;
        Tensor<T> C(A.shape());
        // The Gaussian CDF is the expensive part (erf); keep it for the backward
        // pass, which only needs one extra exp on top of it.
        auto cdf = std::make_shared<std::vector<T>>(A.numel());
        for (std::size_t i = 0; i < A.numel(); ++i) {
            const T phi = static_cast<T>(
                0.5 * (1.0 + std::erf(static_cast<double>(A[i]) / 1.4142135623730950488)));
            (*cdf)[i] = phi;
            C[i] = A[i] * phi;
        }
        Id out = push(std::move(C), needs(a));
        nodes_[out].backward = [this, a, cdf](const Tensor<T>& dC) {
            if (!needs(a)) return;
            const Tensor<T>& A = nodes_[a].value;
            Tensor<T>& dA = grad_buf(a);
            for (std::size_t i = 0; i < A.numel(); ++i) {
                const double xd = static_cast<double>(A[i]);
                const double pdf = std::exp(-0.5 * xd * xd) / 2.5066282746310005024;
                dA[i] += dC[i] * (static_cast<T>((*cdf)[i]) + static_cast<T>(xd * pdf));
            }
        };
        return out;
    }

    /// x (.. x din) * W (din x dout) + b (dout).
    Id dense(Id x, Id w, Id b) { return add_rowvec(matmul(x, w), b); }

    /// -log softmax(logits)[label]; logits is a length-C vector (or 1 x C).
    Id cross_entropy(Id logits, std::size_t label) {
        const Tensor<T>& L = nodes_[logits].value;
        const std::size_t c = L.numel();
        if (L.rank() > 2 || (L.rank() == 2 && L.rows() != 1)) {
            throw ShapeError("cross_entropy expects a single logit row, got " + L.shape_str());
        }
        if (label >= c) {
            throw ValueError("cross_entropy label " + std::to_string(label) + " out of range [0," +
                             std::to_string(c) + ")");
        }
        T mx = L[0];
        for (std::size_t i = 1; i < c; ++i) mx = std::max(mx, L[i]);
        T sum = T(0);
        for (std::size_t i = 0; i < c; ++i) sum += std::exp(L[i] - mx);
        const T lse = mx + std::log(sum);
        Tensor<T> out_t({std::size_t(1)}, std::vector<T>{lse - L[label]});
        Id out = push(std::move(out_t), needs(logits));
        nodes_[out].backward = [this, logits, label, mx, sum](const Tensor<T>& dC) {
            if (!needs(logits)) return;
            const Tensor<T>& L = nodes_[logits].value;
            Tensor<T>& dL = grad_buf(logits);
            const T g = dC[0];
            for (std::size_t i = 0; i < L.numel(); ++i) {
                T p = std::exp(L[i] - mx) / sum;
                dL[i] += g * (p - (i == label ? T(1) : T(0)));
            }
        };
        return out;
    }

    Id sum(Id a) {
        const Tensor<T>& A = nodes_[a].value;
        T s = T(0);
        for (std::size_t i = 0; i < A.numel(); ++i) s += A[i];
        Id out = push(Tensor<T>({std::size_t(1)}, std::vector<T>{s}), needs(a));
        nodes_[out].backward = [this, a](const Tensor<T>& dC) {
            if (!needs(a)) return;
            Tensor<T>& dA = grad_buf(a);
            for (std::size_t i = 0; i < dA.numel(); ++i) dA[i] += dC[0];
        };
        return out;
    }

    /// Column-wise mean over rows: (m x n) -> (1 x n).
    Id mean_rows(Id a) {
        const Tensor<T>& A = nodes_[a].value;
        require_matrix(A, "mean_rows");
        const std::size_t m = A.rows(), n = A.cols();
        Tensor<T> C({std::size_t(1), n});
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) C[j] += A.data()[i * n + j];
        for (std::size_t j = 0; j < n; ++j) C[j] /= static_cast<T>(m);
        Id out = push(std::move(C), needs(a));
        nodes_[out].backward = [this, a, m, n](const Tensor<T>& dC) {
            if (!needs(a)) return;
            Tensor<T>& dA = grad_buf(a);
            const T inv = T(1) / static_cast<T>(m);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) dA.data()[i * n + j] += dC[j] * inv;
        };
        return out;
    }

    /// Row r of a matrix as (1 x n).
    Id select_row(Id a, std::size_t r) {
        const Tensor<T>& A = nodes_[a].value;
        require_matrix(A, "select_row");
        const std::size_t n = A.cols();
        if (r >= A.rows()) throw ShapeError("select_row index out of range");
        Tensor<T> C({std::size_t(1), n});
        for (std::size_t j = 0; j < n; ++j) C[j] = A.data()[r * n + j];
        Id out = push(std::move(C), needs(a));
        nodes_[out].backward = [this, a, r, n](const Tensor<T>& dC) {
            if (!needs(a)) return;
            Tensor<T>& dA = grad_buf(a);
            for (std::size_t j = 0; j < n; ++j) dA.data()[r * n + j] += dC[j];
        };
        return out;
    }

    /// Concatenate matrices with equal row counts along the column axis.
    Id concat_cols(const std::vector<Id>& parts) {
        if (parts.empty()) throw ShapeError("concat_cols of nothing");
        const std::size_t m = nodes_[parts[0]].value.rows();
        std::size_t total = 0;
        bool rg = false;
        for (Id p : parts) {
            const Tensor<T>& P = nodes_[p].value;
            require_matrix(P, "concat_cols part");
            if (P.rows() != m) throw ShapeError("concat_cols row mismatch");
            total += P.cols();
            rg = rg || needs(p);
        }
        Tensor<T> C({m, total});
        std::size_t off = 0;
        for (Id p : parts) {
            const Tensor<T>& P = nodes_[p].value;
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < P.cols(); ++j) C.data()[i * total + off + j] = P.data()[i * P.cols() + j];
            off += P.cols();
        }
        Id out = push(std::move(C), rg);
        nodes_[out].backward = [this, parts, m, total](const Tensor<T>& dC) {
            std::size_t off = 0;
            for (Id p : parts) {
                const std::size_t w = nodes_[p].value.cols();
                if (needs(p)) {
                    Tensor<T>& dP = grad_buf(p);
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < w; ++j) dP.data()[i * w + j] += dC.data()[i * total + off + j];
                }
                off += w;
            }
        };
        return out;
    }

    /// Stack two matrices with equal column counts along the row axis.
    Id concat_rows(Id a, Id b) {
        const Tensor<T>& A = nodes_[a].value;
        const Tensor<T>& B = nodes_[b].value;
        require_matrix(A, "concat_rows lhs");
        require_matrix(B, "concat_rows rhs");
        if (A.cols() != B.cols()) throw ShapeError("concat_rows column mismatch");
        const std::size_t n = A.cols();
        Tensor<T> C({A.rows() + B.rows(), n});
        std::copy(A.data(), A.data() + A.numel(), C.data());
        std::copy(B.data(), B.data() + B.numel(), C.data() + A.numel());
        Id out = push(std::move(C), needs(a) || needs(b));
        const std::size_t asz = A.numel();
        nodes_[out].backward = [this, a, b, asz](const Tensor<T>& dC) {
            if (needs(a)) {
                Tensor<T>& dA = grad_buf(a);
                for (std::size_t i = 0; i < asz; ++i) dA[i] += dC[i];
            }
            if (needs(b)) {
                Tensor<T>& dB = grad_buf(b);
                for (std::size_t i = 0; i < dB.numel(); ++i) dB[i] += dC[asz + i];
            }
        };
        return out;
    }

    /// out[i] = a.flat[indices[i]], reshaped to out_shape. Backward is
    /// scatter-add. Index tables are shared; callers precompute them once.
    Id gather(Id a, std::shared_ptr<const std::vector<std::size_t>> indices,
              std::vector<std::size_t> out_shape) {
        const Tensor<T>& A = nodes_[a].value;
        Tensor<T> C(std::move(out_shape));
        if (C.numel() != indices->size()) throw ShapeError("gather index count does not match output");
        for (std::size_t i = 0; i < indices->size(); ++i) {
            const std::size_t src = (*indices)[i];
            if (src >= A.numel()) throw ShapeError("gather index out of range");
            C[i] = A[src];
        }
        Id out = push(std::move(C), needs(a));
        nodes_[out].backward = [this, a, indices](const Tensor<T>& dC) {
            if (!needs(a)) return;
            Tensor<T>& dA = grad_buf(a);
            for (std::size_t i = 0; i < indices->size(); ++i) dA[(*indices)[i]] += dC[i];
        };
        return out;
    }

    // ---- backward ----------------------------------------------------------

    void backward(Id loss) {
        if (nodes_[loss].value.numel() != 1) {
            throw ShapeError("backward requires a scalar loss, got " + nodes_[loss].value.shape_str());
        }
        for (Node& n : nodes_) n.grad = Tensor<T>();
        nodes_[loss].grad = Tensor<T>({std::size_t(1)}, std::vector<T>{T(1)});
        for (std::size_t i = loss + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.requires_grad || !n.backward || n.grad.numel() == 0) continue;
            n.backward(n.grad);
        }
    }

    static T gelu_scalar(T x) {
        return static_cast<T>(0.5) * x * (T(1) + static_cast<T>(std::erf(static_cast<double>(x) / 1.4142135623730950488)));
    }

    static T gelu_grad_scalar(T x) {
        const double xd = static_cast<double>(x);
        const double phi_big = 0.5 * (1.0 + std::erf(xd / 1.4142135623730950488));
        const double phi_small = std::exp(-0.5 * xd * xd) / 2.5066282746310005024;
        return static_cast<T>(phi_big + xd * phi_small);
    }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        std::function<void(const Tensor<T>&)> backward;
        bool requires_grad = false;
    };

    Id push(Tensor<T> value, bool requires_grad) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        nodes_.push_back(std::move(n));
        return nodes_.size() - 1;
    }

    bool needs(Id id) const { return nodes_[id].requires_grad; }

    Tensor<T>& grad_buf(Id id) {
        Node& n = nodes_[id];
        if (n.grad.numel() == 0) n.grad = Tensor<T>::zeros(n.value.shape());
        return n.grad;
    }

    static void require_matrix(const Tensor<T>& t, const char* what) {
        if (t.rank() != 2) throw ShapeError(std::string(what) + " expects a matrix, got " + t.shape_str());
    }

    // Visit every 1-d line along `axis` of a tensor with the given shape.
    template <typename F>
    static void for_each_line(const std::vector<std::size_t>& shape, std::size_t axis, F&& fn) {
        std::size_t stride = 1;
        for (std::size_t d = axis + 1; d < shape.size(); ++d) stride *= shape[d];
        const std::size_t len = shape[axis];
        std::size_t outer = 1;
        for (std::size_t d = 0; d < axis; ++d) outer *= shape[d];
        const std::size_t inner = stride;
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t in = 0; in < inner; ++in) fn(o * len * stride + in, stride, len);
    }

    std::vector<Node> nodes_;
};

}  // namespace vitloc
