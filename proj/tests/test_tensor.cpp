#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include <grace/optim.hpp>
#include <grace/tensor.hpp>

#include "grad_suite.hpp"
#include "oracles.hpp"

using namespace grace;

TEST_CASE("tensor construction validates shape and finiteness") {
    CHECK_THROWS_AS(Tensor::make({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
    CHECK_THROWS_AS(Tensor::make({1}, {std::numeric_limits<double>::infinity()}), NumericError);
    CHECK_THROWS_AS(Tensor::make({1}, {std::nan("")}), NumericError);
    Var t = Tensor::make({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t->size() == 6);
    CHECK(t->at(1, 2) == 6.0);
    CHECK_THROWS_AS(t->at(2, 0), RangeError);
}

TEST_CASE("matmul matches hand results") {
    Var I = Tensor::make({2, 2}, {1, 0, 0, 1});
    Var a = Tensor::make({2, 2}, {3, 1, 4, 1});
    Var prod = matmul(I, a);
    for (std::size_t i = 0; i < 4; ++i) CHECK(prod->data[i] == a->data[i]);

    Var row = Tensor::make({1, 2}, {1, 2});
    Var col = Tensor::make({2, 1}, {3, 4});
    Var r = matmul(row, col);
    CHECK(r->shape == std::vector<std::size_t>{1, 1});
    CHECK(r->data[0] == 11.0);

    // 1-D operands promote and squeeze back.
    Var v = Tensor::vector({1, 2});
    Var m = Tensor::make({2, 3}, {1, 2, 3, 4, 5, 6});
    Var vm = matmul(v, m);
    CHECK(vm->shape == std::vector<std::size_t>{3});
    CHECK(vm->data == std::vector<double>{9, 12, 15});

    Var mv = matmul(m, Tensor::vector({1, 1, 1}));
    CHECK(mv->shape == std::vector<std::size_t>{2});
    CHECK(mv->data == std::vector<double>{6, 15});

    Var dot = matmul(Tensor::vector({1, 2, 3}), Tensor::vector({4, 5, 6}));
    CHECK(dot->shape == std::vector<std::size_t>{1});
    CHECK(dot->data[0] == 32.0);

    CHECK_THROWS_AS(matmul(m, Tensor::vector({1, 1})), DimensionError);
}

TEST_CASE("add supports bias broadcast only") {
    Var m = Tensor::make({2, 2}, {1, 2, 3, 4});
    Var b = Tensor::vector({10, 20});
    Var s = add(m, b);
    CHECK(s->data == std::vector<double>{11, 22, 13, 24});
    CHECK_THROWS_AS(add(m, Tensor::vector({1, 2, 3})), DimensionError);
    CHECK_THROWS_AS(add(b, m), DimensionError);
}

TEST_CASE("elementwise ops compute expected values") {
    Var a = Tensor::vector({1, -2, 3});
    Var b = Tensor::vector({2, 5, -1});
    CHECK(sub(a, b)->data == std::vector<double>{-1, -7, 4});
    CHECK(mul(a, b)->data == std::vector<double>{2, -10, -3});
    CHECK(smul(Tensor::scalar(2.0), a)->data == std::vector<double>{2, -4, 6});
    CHECK(scale(a, -1.0)->data == std::vector<double>{-1, 2, -3});
    CHECK(add_const(a, 1.5)->data == std::vector<double>{2.5, -0.5, 4.5});
    CHECK(relu(a)->data == std::vector<double>{1, 0, 3});
    CHECK(sum(a)->data[0] == 2.0);
    CHECK_THROWS_AS(smul(a, b), DimensionError);
}

TEST_CASE("sigmoid saturates exactly at extreme inputs") {
    Var s = sigmoid(Tensor::vector({800.0, -800.0, 0.0}));
    CHECK(s->data[0] == 1.0);
    CHECK(s->data[1] == 0.0);
    CHECK(s->data[2] == 0.5);
}

TEST_CASE("softmax is stable and normalized") {
    Var p = softmax(Tensor::vector({1000.0, 0.0, -1000.0}));
    CHECK(p->data[0] == 1.0);
    CHECK(p->data[1] == 0.0);
    CHECK(p->data[2] == 0.0);

    Var q = softmax(Tensor::vector({0.3, -1.2, 2.0}));
    double total = 0.0;
    for (double v : q->data) total += v;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));

    // Shifting the logits leaves the distribution unchanged.
    Var q2 = softmax(Tensor::vector({0.3 + 7.0, -1.2 + 7.0, 2.0 + 7.0}));
    for (std::size_t i = 0; i < 3; ++i) CHECK(q->data[i] == doctest::Approx(q2->data[i]).epsilon(1e-12));
}

TEST_CASE("cross entropy handles flat and extreme logits") {
    Var flat = softmax_cross_entropy(Tensor::vector({0.0, 0.0}), 0);
    CHECK(flat->data[0] == doctest::Approx(std::log(2.0)).epsilon(1e-15));

    Var confident = softmax_cross_entropy(Tensor::vector({1000.0, 0.0}), 0);
    CHECK(confident->data[0] >= 0.0);
    CHECK(confident->data[0] < 1e-12);

    CHECK_THROWS_AS(softmax_cross_entropy(Tensor::vector({0.0, 0.0}), 2), RangeError);

    // The batched mean equals the average of the per-row losses.
    Var logits = Tensor::make({2, 3}, {0.5, -1.0, 2.0, 3.0, 0.0, -0.5});
    Var batch = softmax_cross_entropy_batch(logits, {2, 0});
    double mean = (softmax_cross_entropy(Tensor::vector({0.5, -1.0, 2.0}), 2)->data[0] +
                   softmax_cross_entropy(Tensor::vector({3.0, 0.0, -0.5}), 0)->data[0]) /
                  2.0;
    CHECK(batch->data[0] == doctest::Approx(mean).epsilon(1e-15));
}

TEST_CASE("slice and concat round-trip") {
    Var x = Tensor::vector({1, 2, 3, 4, 5});
    Var mid = slice(x, 1, 3);
    CHECK(mid->data == std::vector<double>{2, 3, 4});
    CHECK_THROWS_AS(slice(x, 3, 3), RangeError);

    Var joined = concat({slice(x, 0, 2), slice(x, 2, 3)});
    CHECK(joined->data == x->data);
    CHECK_THROWS_AS(concat({}), ArgumentError);
}

TEST_CASE("backward accumulates through shared nodes") {
    Var x = Tensor::vector({1.0, 2.0});
    x->requires_grad = true;
    x->grad.assign(2, 0.0);
    Var y = sum(add(x, x));
    backward(y);
    CHECK(x->grad == std::vector<double>{2.0, 2.0});

    CHECK_THROWS_AS(backward(Tensor::vector({1.0, 2.0})), StateError);
    Var two = add(x, x);
    CHECK_THROWS_AS(backward(two), StateError);  // non-scalar root
}

TEST_CASE("no-grad scope suppresses tape recording") {
    Var w = Tensor::make({2}, {1.0, 2.0}, true);
    {
        NoGradGuard guard;
        Var y = scale(w, 2.0);
        CHECK_FALSE(y->requires_grad);
        CHECK(y->parents.empty());
    }
    Var z = scale(w, 2.0);
    CHECK(z->requires_grad);
}

TEST_CASE("ops reject non-finite results") {
    Var big = Tensor::vector({1e308});
    CHECK_THROWS_AS(mul(big, big), NumericError);
}

TEST_CASE("sgd_step applies the plain rule") {
    Var w = Tensor::make({1}, {1.0}, true);
    w->grad[0] = 2.0;
    sgd_step({w}, 0.1);
    CHECK(w->data[0] == doctest::Approx(0.8).epsilon(1e-15));

    Var nograd = Tensor::make({1}, {1.0});
    CHECK_THROWS_AS(sgd_step({nograd}, 0.1), StateError);
}

TEST_CASE("gradient descent drives a quadratic to zero") {
    Var w = Tensor::make({1}, {1.0}, true);
    for (int i = 0; i < 100; ++i) {
        w->zero_grad();
        Var loss = mul(w, w);
        backward(loss);
        sgd_step({w}, 0.1);
    }
    CHECK(std::fabs(w->data[0]) < 1e-9);
}

TEST_CASE("adam also minimizes a quadratic") {
    Var w = Tensor::make({1}, {1.0}, true);
    Optimizer opt(OptimizerKind::adam, 0.1);
    for (int i = 0; i < 200; ++i) {
        w->zero_grad();
        Var loss = mul(w, w);
        backward(loss);
        opt.step({w});
    }
    CHECK(std::fabs(w->data[0]) < 1e-3);
    CHECK_THROWS_AS(optimizer_kind_from_string("sgdm"), ConfigError);
}

TEST_CASE("argmax breaks ties toward the lowest index") {
    std::vector<double> v{1.0, 3.0, 3.0};
    CHECK(argmax(std::span<const double>(v)) == 1);
    std::vector<double> flat{2.0, 2.0};
    CHECK(argmax(std::span<const double>(flat)) == 0);
    std::vector<double> empty;
    CHECK_THROWS_AS(argmax(std::span<const double>(empty)), ArgumentError);
}

TEST_CASE("every op's gradient matches finite differences") {
    for (const auto& r : grad_suite::run_all(10, 42)) {
        INFO("op: " << r.op);
        CHECK(r.max_rel_err < 1e-4);
    }
}
