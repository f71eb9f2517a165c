#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "xmodal/common.hpp"

namespace xmodal {

template <typename Real>
using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// A trainable tensor: value plus gradient accumulator of the same shape.
template <typename Real>
struct TensorSlot {
    std::string name;
    Matrix<Real> value;
    Matrix<Real> grad;

    void init_zero(Eigen::Index rows, Eigen::Index cols) {
        value = Matrix<Real>::Zero(rows, cols);
        grad = Matrix<Real>::Zero(rows, cols);
    }
    void zero_grad() { grad.setZero(); }
};

// Per-row attention window [begin_i, end_i) into the key/value rows. Shared
// between the heads of a layer.
struct AttentionRanges {
    std::vector<int> begin;
    std::vector<int> end;
};

// Reverse-mode tape over dense matrices. A graph is built once per loss
// evaluation; backward() accumulates parameter gradients into the bound
// TensorSlots. All ops validate shapes and throw input_error on misuse.
template <typename Real>
class Graph {
public:
    using Mat = Matrix<Real>;

    int input(Mat v) {
        return push(std::move(v), {}, nullptr);
    }

    // Leaf bound to external parameter storage. Bind each slot at most once
    // per graph; gradients accumulate into slot.grad during backward().
    int param(TensorSlot<Real>& slot) {
        const int id = push(slot.value, {}, nullptr);
        nodes_[id].bound = &slot;
        return id;
    }

    const Mat& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
    Real scalar(int id) const {
        const Mat& v = value(id);
        if (v.rows() != 1 || v.cols() != 1) throw input_error("node is not a scalar");
        return v(0, 0);
    }
    bool all_finite(int id) const { return value(id).allFinite(); }
    size_t node_count() const { return nodes_.size(); }

    // ---- elementwise / linear ops ----

    int add(int a, int b) {
        require_same_shape(a, b, "add");
        return push(value(a) + value(b), {a, b}, [](Graph& g, Node& n) {
            g.grad(n.in[0]) += n.grad;
            g.grad(n.in[1]) += n.grad;
        });
    }

    int sub(int a, int b) {
        require_same_shape(a, b, "sub");
        return push(value(a) - value(b), {a, b}, [](Graph& g, Node& n) {
            g.grad(n.in[0]) += n.grad;
            g.grad(n.in[1]) -= n.grad;
        });
    }

    int hadamard(int a, int b) {
        require_same_shape(a, b, "hadamard");
        return push(value(a).cwiseProduct(value(b)), {a, b}, [](Graph& g, Node& n) {
            g.grad(n.in[0]) += n.grad.cwiseProduct(g.value(n.in[1]));
            g.grad(n.in[1]) += n.grad.cwiseProduct(g.value(n.in[0]));
        });
    }

    int scale(int a, Real c) {
        return push(value(a) * c, {a}, [c](Graph& g, Node& n) {
            g.grad(n.in[0]) += n.grad * c;
        });
    }

    int matmul(int a, int b) {
        if (value(a).cols() != value(b).rows()) throw input_error("matmul shape mismatch");
        return push(value(a) * value(b), {a, b}, [](Graph& g, Node& n) {
            g.grad(n.in[0]) += n.grad * g.value(n.in[1]).transpose();
            g.grad(n.in[1]) += g.value(n.in[0]).transpose() * n.grad;
        });
    }

    // a * b^T
    int matmul_nt(int a, int b) {
        if (value(a).cols() != value(b).cols()) throw input_error("matmul_nt shape mismatch");
        return push(value(a) * value(b).transpose(), {a, b}, [](Graph& g, Node& n) {
            g.grad(n.in[0]) += n.grad * g.value(n.in[1]);
            g.grad(n.in[1]) += n.grad.transpose() * g.value(n.in[0]);
        });
    }

    // Adds a 1 x n row vector to every row of a.
    int add_row_broadcast(int a, int row) {
        if (value(row).rows() != 1 || value(row).cols() != value(a).cols())
            throw input_error("add_row_broadcast shape mismatch");
        Mat out = value(a);
        out.rowwise() += value(row).row(0);
        return push(std::move(out), {a, row}, [](Graph& g, Node& n) {
            g.grad(n.in[0]) += n.grad;
            g.grad(n.in[1]).row(0) += n.grad.colwise().sum();
        });
    }

    int gelu(int a) {
        const Mat& x = value(a);
        Mat out = x.unaryExpr([](Real v) { return gelu_fwd(v); });
        return push(std::move(out), {a}, [](Graph& g, Node& n) {
            const Mat& x = g.value(n.in[0]);
            g.grad(n.in[0]) += n.grad.cwiseProduct(
                x.unaryExpr([](Real v) { return gelu_grad(v); }));
        });
    }

    // Row-wise layer norm with learned gain/bias (1 x d each).
    int layer_norm(int x, int gamma, int beta, Real eps) {
        const Mat& xv = value(x);
        const Eigen::Index d = xv.cols();
        if (value(gamma).cols() != d || value(beta).cols() != d)
            throw input_error("layer_norm parameter shape mismatch");
        auto ctx = std::make_shared<LnCtx>();
        ctx->xhat.resize(xv.rows(), d);
        ctx->inv_std.resize(static_cast<size_t>(xv.rows()));
        Mat out(xv.rows(), d);
        for (Eigen::Index i = 0; i < xv.rows(); ++i) {
            const Real mu = xv.row(i).mean();
            const Real var = (xv.row(i).array() - mu).square().mean();
            const Real inv = Real(1) / std::sqrt(var + eps);
            ctx->inv_std[static_cast<size_t>(i)] = inv;
            ctx->xhat.row(i) = (xv.row(i).array() - mu) * inv;
            out.row(i) = ctx->xhat.row(i).cwiseProduct(value(gamma).row(0)) + value(beta).row(0);
        }
        return push(std::move(out), {x, gamma, beta}, [ctx](Graph& g, Node& n) {
            const Mat& gam = g.value(n.in[1]);
            Mat& dx = g.grad(n.in[0]);
            Mat& dgam = g.grad(n.in[1]);
            Mat& dbet = g.grad(n.in[2]);
            const Eigen::Index d = dx.cols();
            for (Eigen::Index i = 0; i < dx.rows(); ++i) {
                const auto dy = n.grad.row(i);
                const auto xh = ctx->xhat.row(i);
                dbet.row(0) += dy;
                dgam.row(0) += dy.cwiseProduct(xh);
                const Mat gdy = dy.cwiseProduct(gam.row(0));
                const Real m1 = gdy.mean();
                const Real m2 = gdy.cwiseProduct(xh).mean();
                dx.row(i) += (gdy.array() - m1 - xh.array() * m2).matrix() *
                             ctx->inv_std[static_cast<size_t>(i)];
                (void)d;
            }
        });
    }

    // ---- row/column rearrangement ----

    int gather_rows(int a, std::vector<int> rows) {
        const Mat& v = value(a);
        Mat out(static_cast<Eigen::Index>(rows.size()), v.cols());
        for (size_t i = 0; i < rows.size(); ++i) {
            if (rows[i] < 0 || rows[i] >= v.rows()) throw input_error("gather_rows out of range");
            out.row(static_cast<Eigen::Index>(i)) = v.row(rows[i]);
        }
        auto idx = std::make_shared<std::vector<int>>(std::move(rows));
        return push(std::move(out), {a}, [idx](Graph& g, Node& n) {
            Mat& da = g.grad(n.in[0]);
            for (size_t i = 0; i < idx->size(); ++i)
                da.row((*idx)[i]) += n.grad.row(static_cast<Eigen::Index>(i));
        });
    }

    // Places src rows at the given row positions of a zero total_rows x d matrix.
    int scatter_rows(int src, std::vector<int> positions, int total_rows) {
        const Mat& v = value(src);
        if (static_cast<Eigen::Index>(positions.size()) != v.rows())
            throw input_error("scatter_rows position count mismatch");
        Mat out = Mat::Zero(total_rows, v.cols());
        for (size_t i = 0; i < positions.size(); ++i) {
            if (positions[i] < 0 || positions[i] >= total_rows)
                throw input_error("scatter_rows out of range");
            out.row(positions[i]) = v.row(static_cast<Eigen::Index>(i));
        }
        auto idx = std::make_shared<std::vector<int>>(std::move(positions));
        return push(std::move(out), {src}, [idx](Graph& g, Node& n) {
            Mat& ds = g.grad(n.in[0]);
            for (size_t i = 0; i < idx->size(); ++i)
                ds.row(static_cast<Eigen::Index>(i)) += n.grad.row((*idx)[i]);
        });
    }

    int slice_cols(int a, int first, int count) {
        const Mat& v = value(a);
        if (first < 0 || first + count > v.cols()) throw input_error("slice_cols out of range");
        return push(v.middleCols(first, count), {a}, [first, count](Graph& g, Node& n) {
            g.grad(n.in[0]).middleCols(first, count) += n.grad;
        });
    }

    int concat_cols(const std::vector<int>& parts) {
        if (parts.empty()) throw input_error("concat_cols of nothing");
        Eigen::Index rows = value(parts[0]).rows();
        Eigen::Index cols = 0;
        for (int p : parts) {
            if (value(p).rows() != rows) throw input_error("concat_cols row mismatch");
            cols += value(p).cols();
        }
        Mat out(rows, cols);
        Eigen::Index at = 0;
        for (int p : parts) {
            out.middleCols(at, value(p).cols()) = value(p);
            at += value(p).cols();
        }
        auto ps = std::make_shared<std::vector<int>>(parts);
        return push(std::move(out), parts, [ps](Graph& g, Node& n) {
            Eigen::Index at = 0;
            for (int p : *ps) {
                const Eigen::Index w = g.value(p).cols();
                g.grad(p) += n.grad.middleCols(at, w);
                at += w;
            }
        });
    }

    // Row r of the output is the mean of a's rows in [spans[r].first, spans[r].second).
    int segment_mean_rows(int a, std::vector<std::pair<int, int>> spans) {
        const Mat& v = value(a);
        Mat out(static_cast<Eigen::Index>(spans.size()), v.cols());
        for (size_t r = 0; r < spans.size(); ++r) {
            const auto [b, e] = spans[r];
            if (b < 0 || e > v.rows() || e <= b) throw input_error("segment_mean_rows bad span");
            out.row(static_cast<Eigen::Index>(r)) =
                v.middleRows(b, e - b).colwise().sum() / Real(e - b);
        }
        auto sp = std::make_shared<std::vector<std::pair<int, int>>>(std::move(spans));
        return push(std::move(out), {a}, [sp](Graph& g, Node& n) {
            Mat& da = g.grad(n.in[0]);
            for (size_t r = 0; r < sp->size(); ++r) {
                const auto [b, e] = (*sp)[r];
                const Mat share = n.grad.row(static_cast<Eigen::Index>(r)) / Real(e - b);
                for (int i = b; i < e; ++i) da.row(i) += share;
            }
        });
    }

    // ---- reductions ----

    int row_sum(int a) {
        return push(value(a).rowwise().sum(), {a}, [](Graph& g, Node& n) {
            g.grad(n.in[0]).colwise() += n.grad.col(0);
        });
    }

    int mean_all(int a) {
        const Mat& v = value(a);
        Mat out(1, 1);
        out(0, 0) = v.sum() / Real(v.size());
        return push(std::move(out), {a}, [](Graph& g, Node& n) {
            const Mat& v = g.value(n.in[0]);
            g.grad(n.in[0]).array() += n.grad(0, 0) / Real(v.size());
        });
    }

    int sum_all(int a) {
        Mat out(1, 1);
        out(0, 0) = value(a).sum();
        return push(std::move(out), {a}, [](Graph& g, Node& n) {
            g.grad(n.in[0]).array() += n.grad(0, 0);
        });
    }

    // weights is a constant; a must be n x 1. Returns sum_i weights[i] * a[i].
    int weighted_sum(int a, std::vector<Real> weights) {
        const Mat& v = value(a);
        if (v.cols() != 1 || static_cast<Eigen::Index>(weights.size()) != v.rows())
            throw input_error("weighted_sum shape mismatch");
        Mat out(1, 1);
        Real s = 0;
        for (Eigen::Index i = 0; i < v.rows(); ++i) s += weights[static_cast<size_t>(i)] * v(i, 0);
        out(0, 0) = s;
        auto w = std::make_shared<std::vector<Real>>(std::move(weights));
        return push(std::move(out), {a}, [w](Graph& g, Node& n) {
            Mat& da = g.grad(n.in[0]);
            for (Eigen::Index i = 0; i < da.rows(); ++i)
                da(i, 0) += n.grad(0, 0) * (*w)[static_cast<size_t>(i)];
        });
    }

    // ---- fused task-specific ops ----

    // Scaled dot-product attention for one head; q, k, v are rows x d_head.
    // Row i attends to key rows in [ranges.begin[i], ranges.end[i]). Softmax
    // and the value reduction run over exactly that window, in index order.
    int attention(int q, int k, int v, std::shared_ptr<const AttentionRanges> ranges) {
        const Mat& Q = value(q);
        const Mat& K = value(k);
        const Mat& V = value(v);
        const Eigen::Index rows = Q.rows();
        const Eigen::Index dh = Q.cols();
        if (K.cols() != dh || V.cols() != dh || K.rows() != rows || V.rows() != rows)
            throw input_error("attention shape mismatch");
        if (static_cast<Eigen::Index>(ranges->begin.size()) != rows)
            throw input_error("attention range count mismatch");
        const Real scl = Real(1) / std::sqrt(Real(dh));

        auto ctx = std::make_shared<AttnCtx>();
        ctx->ranges = ranges;
        ctx->offset.resize(static_cast<size_t>(rows) + 1, 0);
        for (Eigen::Index i = 0; i < rows; ++i) {
            const int len = ranges->end[static_cast<size_t>(i)] - ranges->begin[static_cast<size_t>(i)];
            if (len <= 0 || ranges->begin[static_cast<size_t>(i)] < 0 ||
                ranges->end[static_cast<size_t>(i)] > rows)
                throw input_error("attention bad range");
            ctx->offset[static_cast<size_t>(i) + 1] = ctx->offset[static_cast<size_t>(i)] + len;
        }
        ctx->probs.resize(static_cast<size_t>(ctx->offset.back()));

        Mat out = Mat::Zero(rows, dh);
        std::vector<Real> s;
        for (Eigen::Index i = 0; i < rows; ++i) {
            const int b = ranges->begin[static_cast<size_t>(i)];
            const int e = ranges->end[static_cast<size_t>(i)];
            const int len = e - b;
            s.assign(static_cast<size_t>(len), Real(0));
            Real mx = -std::numeric_limits<Real>::infinity();
            for (int j = 0; j < len; ++j) {
                s[static_cast<size_t>(j)] = Q.row(i).dot(K.row(b + j)) * scl;
                mx = std::max(mx, s[static_cast<size_t>(j)]);
            }
            Real z = 0;
            for (int j = 0; j < len; ++j) {
                const Real p = std::exp(s[static_cast<size_t>(j)] - mx);
                ctx->probs[ctx->offset[static_cast<size_t>(i)] + static_cast<size_t>(j)] = p;
                z += p;
            }
            const Real inv_z = Real(1) / z;
            for (int j = 0; j < len; ++j) {
                Real& p = ctx->probs[ctx->offset[static_cast<size_t>(i)] + static_cast<size_t>(j)];
                p *= inv_z;
                out.row(i) += p * V.row(b + j);
            }
        }
        return push(std::move(out), {q, k, v}, [ctx, scl](Graph& g, Node& n) {
            const Mat& Q = g.value(n.in[0]);
            const Mat& K = g.value(n.in[1]);
            const Mat& V = g.value(n.in[2]);
            Mat& dQ = g.grad(n.in[0]);
            Mat& dK = g.grad(n.in[1]);
            Mat& dV = g.grad(n.in[2]);
            const Eigen::Index rows = Q.rows();
            std::vector<Real> da;
            for (Eigen::Index i = 0; i < rows; ++i) {
                const int b = ctx->ranges->begin[static_cast<size_t>(i)];
                const int e = ctx->ranges->end[static_cast<size_t>(i)];
                const int len = e - b;
                const Real* p = ctx->probs.data() + ctx->offset[static_cast<size_t>(i)];
                da.assign(static_cast<size_t>(len), Real(0));
                Real common = 0;
                for (int j = 0; j < len; ++j) {
                    da[static_cast<size_t>(j)] = n.grad.row(i).dot(V.row(b + j));
                    common += p[j] * da[static_cast<size_t>(j)];
                }
                for (int j = 0; j < len; ++j) {
                    const Real ds = p[j] * (da[static_cast<size_t>(j)] - common) * scl;
                    dQ.row(i) += ds * K.row(b + j);
                    dK.row(b + j) += ds * Q.row(i);
                    dV.row(b + j) += p[j] * n.grad.row(i);
                }
            }
        });
    }

    // Per-row softmax cross entropy against integer targets; returns n x 1
    // losses computed as logsumexp(row) - row[target].
    int cross_entropy_rows(int logits, std::vector<int> targets) {
        const Mat& L = value(logits);
        if (static_cast<Eigen::Index>(targets.size()) != L.rows())
            throw input_error("cross_entropy_rows target count mismatch");
        Mat out(L.rows(), 1);
        for (Eigen::Index i = 0; i < L.rows(); ++i) {
            const int t = targets[static_cast<size_t>(i)];
            if (t < 0 || t >= L.cols()) throw input_error("cross_entropy target out of range");
            const Real mx = L.row(i).maxCoeff();
            Real z = 0;
            for (Eigen::Index j = 0; j < L.cols(); ++j) z += std::exp(L(i, j) - mx);
            out(i, 0) = mx + std::log(z) - L(i, t);
        }
        auto tg = std::make_shared<std::vector<int>>(std::move(targets));
        return push(std::move(out), {logits}, [tg](Graph& g, Node& n) {
            const Mat& L = g.value(n.in[0]);
            Mat& dL = g.grad(n.in[0]);
            for (Eigen::Index i = 0; i < L.rows(); ++i) {
                const Real mx = L.row(i).maxCoeff();
                Real z = 0;
                for (Eigen::Index j = 0; j < L.cols(); ++j) z += std::exp(L(i, j) - mx);
                const Real gi = n.grad(i, 0);
                for (Eigen::Index j = 0; j < L.cols(); ++j)
                    dL(i, j) += gi * std::exp(L(i, j) - mx) / z;
                dL(i, (*tg)[static_cast<size_t>(i)]) -= gi;
            }
        });
    }

    // Pairwise cosine similarities between the rows of a (n x d) and the rows
    // of b (m x d); returns n x m. Throws on zero-norm rows.
    int cosine_matrix(int a, int b) {
        const Mat& A = value(a);
        const Mat& B = value(b);
        if (A.cols() != B.cols()) throw input_error("cosine_matrix dimension mismatch");
        auto ctx = std::make_shared<CosCtx>();
        ctx->na.resize(static_cast<size_t>(A.rows()));
        ctx->nb.resize(static_cast<size_t>(B.rows()));
        for (Eigen::Index i = 0; i < A.rows(); ++i) {
            ctx->na[static_cast<size_t>(i)] = A.row(i).norm();
            if (!(ctx->na[static_cast<size_t>(i)] > Real(0)))
                throw input_error("cosine of a zero-norm vector");
        }
        for (Eigen::Index j = 0; j < B.rows(); ++j) {
            ctx->nb[static_cast<size_t>(j)] = B.row(j).norm();
            if (!(ctx->nb[static_cast<size_t>(j)] > Real(0)))
                throw input_error("cosine of a zero-norm vector");
        }
        Mat out = A * B.transpose();
        for (Eigen::Index i = 0; i < out.rows(); ++i)
            for (Eigen::Index j = 0; j < out.cols(); ++j)
                out(i, j) /= ctx->na[static_cast<size_t>(i)] * ctx->nb[static_cast<size_t>(j)];
        return push(std::move(out), {a, b}, [ctx](Graph& g, Node& n) {
            const Mat& A = g.value(n.in[0]);
            const Mat& B = g.value(n.in[1]);
            Mat& dA = g.grad(n.in[0]);
            Mat& dB = g.grad(n.in[1]);
            for (Eigen::Index i = 0; i < A.rows(); ++i) {
                for (Eigen::Index j = 0; j < B.rows(); ++j) {
                    const Real gij = n.grad(i, j);
                    if (gij == Real(0)) continue;
                    const Real na = ctx->na[static_cast<size_t>(i)];
                    const Real nb = ctx->nb[static_cast<size_t>(j)];
                    const Real c = n.value(i, j);
                    dA.row(i) += gij * (B.row(j) / (na * nb) - (c / (na * na)) * A.row(i));
                    dB.row(j) += gij * (A.row(i) / (na * nb) - (c / (nb * nb)) * B.row(j));
                }
            }
        });
    }

    // Row-wise log-sum-exp over a per-row subset of columns; returns n x 1.
    int masked_lse_rows(int a, std::vector<std::vector<int>> cols) {
        const Mat& S = value(a);
        if (static_cast<Eigen::Index>(cols.size()) != S.rows())
            throw input_error("masked_lse_rows row count mismatch");
        Mat out(S.rows(), 1);
        for (Eigen::Index i = 0; i < S.rows(); ++i) {
            const auto& cs = cols[static_cast<size_t>(i)];
            if (cs.empty()) throw input_error("masked_lse_rows empty column set");
            Real mx = -std::numeric_limits<Real>::infinity();
            for (int c : cs) mx = std::max(mx, S(i, c));
            Real z = 0;
            for (int c : cs) z += std::exp(S(i, c) - mx);
            out(i, 0) = mx + std::log(z);
        }
        auto cc = std::make_shared<std::vector<std::vector<int>>>(std::move(cols));
        return push(std::move(out), {a}, [cc](Graph& g, Node& n) {
            const Mat& S = g.value(n.in[0]);
            Mat& dS = g.grad(n.in[0]);
            for (Eigen::Index i = 0; i < S.rows(); ++i) {
                const Real lse = n.value(i, 0);
                const Real gi = n.grad(i, 0);
                for (int c : (*cc)[static_cast<size_t>(i)])
                    dS(i, c) += gi * std::exp(S(i, c) - lse);
            }
        });
    }

    // Picks entries (r, c) from a; returns k x 1.
    int gather_entries(int a, std::vector<std::pair<int, int>> entries) {
        const Mat& S = value(a);
        Mat out(static_cast<Eigen::Index>(entries.size()), 1);
        for (size_t i = 0; i < entries.size(); ++i) {
            const auto [r, c] = entries[i];
            if (r < 0 || r >= S.rows() || c < 0 || c >= S.cols())
                throw input_error("gather_entries out of range");
            out(static_cast<Eigen::Index>(i), 0) = S(r, c);
        }
        auto es = std::make_shared<std::vector<std::pair<int, int>>>(std::move(entries));
        return push(std::move(out), {a}, [es](Graph& g, Node& n) {
            Mat& dS = g.grad(n.in[0]);
            for (size_t i = 0; i < es->size(); ++i)
                dS((*es)[i].first, (*es)[i].second) += n.grad(static_cast<Eigen::Index>(i), 0);
        });
    }

    // ---- backward ----

    // Root must be scalar. Accumulates into every bound TensorSlot's grad.
    void backward(int root) {
        if (value(root).rows() != 1 || value(root).cols() != 1)
            throw input_error("backward root must be a scalar");
        for (auto& n : nodes_) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
        nodes_[static_cast<size_t>(root)].grad(0, 0) = Real(1);
        for (size_t i = nodes_.size(); i-- > 0;) {
            Node& n = nodes_[i];
            if (n.back) n.back(*this, n);
            if (n.bound) n.bound->grad += n.grad;
        }
    }

private:
    struct Node;
    using BackFn = std::function<void(Graph&, Node&)>;

    struct Node {
        Mat value;
        Mat grad;
        std::vector<int> in;
        BackFn back;
        TensorSlot<Real>* bound = nullptr;
    };

    struct LnCtx {
        Mat xhat;
        std::vector<Real> inv_std;
    };
    struct AttnCtx {
        std::shared_ptr<const AttentionRanges> ranges;
        std::vector<size_t> offset;
        std::vector<Real> probs;
    };
    struct CosCtx {
        std::vector<Real> na, nb;
    };

    Mat& grad(int id) { return nodes_[static_cast<size_t>(id)].grad; }

    void require_same_shape(int a, int b, const char* what) {
        if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
            throw input_error(std::string(what) + " shape mismatch");
    }

    int push(Mat v, std::vector<int> in, BackFn back) {
        Node n;
        n.value = std::move(v);
        n.in = std::move(in);
        n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    static Real gelu_fwd(Real x) {
        const Real c = Real(0.7978845608028654);
        const Real x3 = x * x * x;
        return Real(0.5) * x * (Real(1) + std::tanh(c * (x + Real(0.044715) * x3)));
    }
    static Real gelu_grad(Real x) {
        const Real c = Real(0.7978845608028654);
        const Real u = c * (x + Real(0.044715) * x * x * x);
        const Real t = std::tanh(u);
        const Real du = c * (Real(1) + Real(3) * Real(0.044715) * x * x);
        return Real(0.5) * (Real(1) + t) + Real(0.5) * x * (Real(1) - t * t) * du;
    }

    std::vector<Node> nodes_;
};

}  // namespace xmodal
