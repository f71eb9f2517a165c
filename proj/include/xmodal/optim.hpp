#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "xmodal/autograd.hpp"

namespace xmodal {

// Adam with bias correction, beta = (0.9, 0.999), eps = 1e-8, no weight
// decay. Moments are keyed by position in the parameter registry, so the
// registry order must be stable across calls.
template <typename Real>
class AdamOptimizer {
public:
    explicit AdamOptimizer(double learning_rate = 1e-3) : lr_(learning_rate) {}

    double learning_rate() const { return lr_; }
    void set_learning_rate(double lr) { lr_ = lr; }
    int64_t step_count() const { return t_; }

    void step(const std::vector<TensorSlot<Real>*>& params) {
        if (m_.empty()) {
            for (auto* p : params) {
                m_.push_back(Matrix<Real>::Zero(p->value.rows(), p->value.cols()));
                v_.push_back(Matrix<Real>::Zero(p->value.rows(), p->value.cols()));
            }
        }
        if (m_.size() != params.size()) throw input_error("optimizer registry size changed");
        ++t_;
        const Real b1 = Real(0.9), b2 = Real(0.999), eps = Real(1e-8);
        const Real bc1 = Real(1) - std::pow(b1, Real(t_));
        const Real bc2 = Real(1) - std::pow(b2, Real(t_));
        const Real lr = static_cast<Real>(lr_);
        for (size_t i = 0; i < params.size(); ++i) {
            const Matrix<Real>& g = params[i]->grad;
            m_[i] = b1 * m_[i] + (Real(1) - b1) * g;
            v_[i] = b2 * v_[i] + (Real(1) - b2) * g.cwiseProduct(g);
            params[i]->value.array() -=
                lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + eps);
        }
    }

private:
    double lr_;
    int64_t t_ = 0;
    std::vector<Matrix<Real>> m_, v_;
};

// Evaluates a scalar loss built by `build_loss` and returns the gradient of
// every registered parameter, in registry order. Throws numeric_error on
// non-finite gradients.
template <typename Real>
std::vector<Matrix<Real>> parameter_gradients(
    const std::function<int(Graph<Real>&)>& build_loss,
    const std::vector<TensorSlot<Real>*>& params) {
    for (auto* p : params) p->zero_grad();
    Graph<Real> g;
    const int root = build_loss(g);
    g.backward(root);
    std::vector<Matrix<Real>> out;
    out.reserve(params.size());
    for (auto* p : params) {
        if (!p->grad.allFinite())
            throw numeric_error("non-finite gradient in " + p->name);
        out.push_back(p->grad);
    }
    return out;
}

template <typename Real>
double gradient_norm(const std::vector<TensorSlot<Real>*>& params) {
    double s = 0;
    for (const auto* p : params) s += static_cast<double>(p->grad.template cast<double>().squaredNorm());
    return std::sqrt(s);
}

template <typename Real>
void zero_gradients(const std::vector<TensorSlot<Real>*>& params) {
    for (auto* p : params) p->zero_grad();
}

}  // namespace xmodal
