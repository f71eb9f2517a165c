#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "testutil.hpp"
#include "xmodal/autograd.hpp"
#include "xmodal/optim.hpp"

using namespace xmodal;
using test::rel_err;

namespace {

template <typename Real>
Matrix<Real> random_matrix(int rows, int cols, Rng& rng, double scale = 1.0) {
    Matrix<Real> m(rows, cols);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            m(i, j) = static_cast<Real>(rng.gaussian() * scale);
    return m;
}

// FD-checks a scalar-valued graph builder against its backward pass.
template <typename Real>
void fd_check_graph(const std::function<int(Graph<Real>&, std::vector<TensorSlot<Real>*>&)>& build,
                    double tol, uint64_t seed = 7) {
    std::vector<TensorSlot<Real>*> params;
    Graph<Real> g0;
    const int root0 = build(g0, params);
    for (auto* p : params) p->zero_grad();
    g0.backward(root0);
    const auto analytic = test::snapshot_grads(params);

    auto loss_fn = [&]() {
        std::vector<TensorSlot<Real>*> scratch;
        Graph<Real> g;
        return static_cast<double>(g.scalar(build(g, scratch)));
    };
    Rng rng(seed);
    const auto rep = test::check_gradients_fd<Real>(loss_fn, params, analytic, rng, 4, tol);
    CHECK(rep.failures == 0);
    CHECK(rep.probes > 0);
}

}  // namespace

TEST_CASE("quadratic loss gradient equals the parameter") {
    Rng rng(1);
    TensorSlot<double> p;
    p.name = "p";
    p.value = random_matrix<double>(3, 4, rng);
    p.grad = Matrix<double>::Zero(3, 4);

    Graph<double> g;
    const int pn = g.param(p);
    const int loss = g.scale(g.sum_all(g.hadamard(pn, pn)), 0.5);
    g.backward(loss);
    CHECK((p.grad - p.value).norm() < 1e-14);
}

TEST_CASE("constant loss has zero gradient") {
    Rng rng(2);
    TensorSlot<double> p;
    p.value = random_matrix<double>(2, 2, rng);
    p.grad = Matrix<double>::Zero(2, 2);

    Graph<double> g;
    (void)g.param(p);
    const int c = g.input(Matrix<double>::Constant(1, 1, 3.5));
    g.backward(c);
    CHECK(p.grad.norm() == 0.0);
}

TEST_CASE("parameter_gradients evaluates a loss closure over a registry") {
    Rng rng(21);
    TensorSlot<double> p{"p", random_matrix<double>(3, 3, rng), Matrix<double>::Zero(3, 3)};

    const auto grads = parameter_gradients<double>(
        [&](Graph<double>& g) {
            const int pn = g.param(p);
            return g.scale(g.sum_all(g.hadamard(pn, pn)), 0.5);
        },
        {&p});
    REQUIRE(grads.size() == 1);
    CHECK((grads[0] - p.value).norm() < 1e-14);

    // constant in p -> zero gradient
    const auto zeros = parameter_gradients<double>(
        [&](Graph<double>& g) {
            (void)g.param(p);
            return g.input(Matrix<double>::Constant(1, 1, 2.0));
        },
        {&p});
    CHECK(zeros[0].norm() == 0.0);

    // non-finite gradients are a numeric error
    p.value(0, 0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(parameter_gradients<double>(
                        [&](Graph<double>& g) {
                            const int pn = g.param(p);
                            return g.sum_all(g.hadamard(pn, pn));
                        },
                        {&p}),
                    numeric_error);
}

TEST_CASE("linear and elementwise ops pass finite differences") {
    static Rng rng(3);
    static TensorSlot<double> a{"a", random_matrix<double>(3, 4, rng), Matrix<double>::Zero(3, 4)};
    static TensorSlot<double> b{"b", random_matrix<double>(4, 5, rng), Matrix<double>::Zero(4, 5)};
    static TensorSlot<double> bias{"bias", random_matrix<double>(1, 5, rng),
                                   Matrix<double>::Zero(1, 5)};
    fd_check_graph<double>(
        [&](Graph<double>& g, std::vector<TensorSlot<double>*>& params) {
            params = {&a, &b, &bias};
            const int x = g.matmul(g.param(a), g.param(b));
            const int y = g.gelu(g.add_row_broadcast(x, g.param(bias)));
            const int z = g.hadamard(y, g.scale(y, 0.5));
            return g.mean_all(g.sub(z, g.scale(y, 2.0)));
        },
        1e-6);
}

TEST_CASE("matmul_nt passes finite differences") {
    static Rng rng(4);
    static TensorSlot<double> a{"a", random_matrix<double>(3, 4, rng), Matrix<double>::Zero(3, 4)};
    static TensorSlot<double> b{"b", random_matrix<double>(5, 4, rng), Matrix<double>::Zero(5, 4)};
    fd_check_graph<double>(
        [&](Graph<double>& g, std::vector<TensorSlot<double>*>& params) {
            params = {&a, &b};
            return g.mean_all(g.gelu(g.matmul_nt(g.param(a), g.param(b))));
        },
        1e-6);
}

TEST_CASE("layer_norm passes finite differences") {
    static Rng rng(5);
    static TensorSlot<double> x{"x", random_matrix<double>(4, 6, rng, 2.0),
                                Matrix<double>::Zero(4, 6)};
    static TensorSlot<double> gam{"g", random_matrix<double>(1, 6, rng), Matrix<double>::Zero(1, 6)};
    static TensorSlot<double> bet{"b", random_matrix<double>(1, 6, rng), Matrix<double>::Zero(1, 6)};
    fd_check_graph<double>(
        [&](Graph<double>& g, std::vector<TensorSlot<double>*>& params) {
            params = {&x, &gam, &bet};
            const int y = g.layer_norm(g.param(x), g.param(gam), g.param(bet), 1e-5);
            return g.mean_all(g.hadamard(y, y));
        },
        1e-6);
}

TEST_CASE("gather/scatter/slice/concat pass finite differences") {
    static Rng rng(6);
    static TensorSlot<double> t{"t", random_matrix<double>(6, 4, rng), Matrix<double>::Zero(6, 4)};
    fd_check_graph<double>(
        [&](Graph<double>& g, std::vector<TensorSlot<double>*>& params) {
            params = {&t};
            const int tp = g.param(t);
            const int gathered = g.gather_rows(tp, {0, 2, 2, 5});
            const int scattered = g.scatter_rows(gathered, {1, 3, 4, 0}, 5);
            const int left = g.slice_cols(scattered, 0, 2);
            const int right = g.slice_cols(scattered, 2, 2);
            const int swapped = g.concat_cols({right, left});
            return g.mean_all(g.hadamard(swapped, swapped));
        },
        1e-6);
}

TEST_CASE("attention passes finite differences in both range shapes") {
    static Rng rng(7);
    static TensorSlot<double> q{"q", random_matrix<double>(5, 3, rng), Matrix<double>::Zero(5, 3)};
    static TensorSlot<double> k{"k", random_matrix<double>(5, 3, rng), Matrix<double>::Zero(5, 3)};
    static TensorSlot<double> v{"v", random_matrix<double>(5, 3, rng), Matrix<double>::Zero(5, 3)};

    for (bool causal : {true, false}) {
        auto ranges = std::make_shared<AttentionRanges>();
        // two "sequences": rows [0,3) and [3,5)
        for (int i = 0; i < 5; ++i) {
            const int s = i < 3 ? 0 : 3;
            const int e = i < 3 ? 3 : 5;
            ranges->begin.push_back(s);
            ranges->end.push_back(causal ? i + 1 : e);
        }
        fd_check_graph<double>(
            [&](Graph<double>& g, std::vector<TensorSlot<double>*>& params) {
                params = {&q, &k, &v};
                const int a = g.attention(g.param(q), g.param(k), g.param(v), ranges);
                return g.mean_all(g.hadamard(a, a));
            },
            1e-6);
    }
}

TEST_CASE("cross entropy passes finite differences and matches log-softmax") {
    static Rng rng(8);
    static TensorSlot<double> logits{"l", random_matrix<double>(4, 7, rng, 2.0),
                                     Matrix<double>::Zero(4, 7)};
    static const std::vector<int> targets{1, 0, 6, 3};
    fd_check_graph<double>(
        [&](Graph<double>& g, std::vector<TensorSlot<double>*>& params) {
            params = {&logits};
            const int ce = g.cross_entropy_rows(g.param(logits), targets);
            return g.mean_all(ce);
        },
        1e-6);

    Graph<double> g;
    const int ce = g.cross_entropy_rows(g.input(logits.value), targets);
    for (int i = 0; i < 4; ++i) {
        double z = 0;
        for (int j = 0; j < 7; ++j) z += std::exp(logits.value(i, j));
        const double expect = std::log(z) - logits.value(i, targets[static_cast<size_t>(i)]);
        CHECK(rel_err(g.value(ce)(i, 0), expect) < 1e-12);
    }
}

TEST_CASE("cosine matrix, masked LSE and entry gather pass finite differences") {
    static Rng rng(9);
    static TensorSlot<double> a{"a", random_matrix<double>(3, 6, rng), Matrix<double>::Zero(3, 6)};
    static TensorSlot<double> b{"b", random_matrix<double>(4, 6, rng), Matrix<double>::Zero(4, 6)};
    static const std::vector<std::vector<int>> cols{{0, 1, 2}, {1, 3}, {0, 2, 3}};
    static const std::vector<std::pair<int, int>> entries{{0, 0}, {1, 1}, {2, 3}};
    fd_check_graph<double>(
        [&](Graph<double>& g, std::vector<TensorSlot<double>*>& params) {
            params = {&a, &b};
            const int cos = g.cosine_matrix(g.param(a), g.param(b));
            const int s = g.scale(cos, 4.0);
            const int lse = g.masked_lse_rows(s, cols);
            const int pos = g.gather_entries(s, entries);
            return g.mean_all(g.sub(lse, pos));
        },
        1e-6);
}

TEST_CASE("cosine of zero-norm rows is rejected") {
    Graph<double> g;
    const int a = g.input(Matrix<double>::Zero(1, 3));
    const int b = g.input(Matrix<double>::Ones(1, 3));
    CHECK_THROWS_AS(g.cosine_matrix(a, b), input_error);
}

TEST_CASE("segment mean, row sum and weighted sum pass finite differences") {
    static Rng rng(10);
    static TensorSlot<double> x{"x", random_matrix<double>(6, 3, rng), Matrix<double>::Zero(6, 3)};
    fd_check_graph<double>(
        [&](Graph<double>& g, std::vector<TensorSlot<double>*>& params) {
            params = {&x};
            const int seg = g.segment_mean_rows(g.param(x), {{0, 2}, {2, 3}, {3, 6}});
            const int rs = g.row_sum(g.hadamard(seg, seg));
            return g.weighted_sum(rs, {0.2, 0.5, 0.3});
        },
        1e-6);
}

TEST_CASE("float32 graphs pass finite differences at the coarser tolerance") {
    static Rng rng(11);
    static TensorSlot<float> a{"a", random_matrix<float>(3, 4, rng), Matrix<float>::Zero(3, 4)};
    static TensorSlot<float> b{"b", random_matrix<float>(4, 4, rng), Matrix<float>::Zero(4, 4)};
    fd_check_graph<float>(
        [&](Graph<float>& g, std::vector<TensorSlot<float>*>& params) {
            params = {&a, &b};
            const int y = g.gelu(g.matmul(g.param(a), g.param(b)));
            return g.mean_all(g.hadamard(y, y));
        },
        1e-3);
}

TEST_CASE("graph evaluation is deterministic") {
    Rng rng(12);
    const auto m1 = random_matrix<double>(5, 5, rng);
    const auto m2 = random_matrix<double>(5, 5, rng);
    auto run = [&]() {
        Graph<double> g;
        const int y = g.gelu(g.matmul(g.input(m1), g.input(m2)));
        return Matrix<double>(g.value(g.layer_norm(y, g.input(Matrix<double>::Ones(1, 5)),
                                                   g.input(Matrix<double>::Zero(1, 5)), 1e-5)));
    };
    const auto r1 = run();
    const auto r2 = run();
    CHECK((r1.array() == r2.array()).all());
}

TEST_CASE("shape mismatches are rejected") {
    Graph<double> g;
    const int a = g.input(Matrix<double>::Ones(2, 3));
    const int b = g.input(Matrix<double>::Ones(2, 4));
    CHECK_THROWS_AS(g.add(a, b), input_error);
    CHECK_THROWS_AS(g.matmul(a, b), input_error);
    CHECK_THROWS_AS(g.backward(a), input_error);
    CHECK_THROWS_AS(g.gather_rows(a, {5}), input_error);
    CHECK_THROWS_AS(g.slice_cols(a, 2, 3), input_error);
}
