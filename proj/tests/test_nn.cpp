#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "fedmp/errors.hpp"
#include "fedmp/nn.hpp"
#include "support.hpp"

using namespace fedmp;

TEST_CASE("arch layout and validation") {
    ArchSpec a{{4, 8, 3}};
    CHECK(a.param_count() == 4 * 8 + 8 + 8 * 3 + 3);
    const auto l1 = a.layer(1);
    CHECK(l1.weight_offset == 40);
    CHECK(l1.bias_offset == 64);
    CHECK(l1.end == 67);
    CHECK(a.locate(0) == ParamLocation{0, ParamKind::weight, 0});
    CHECK(a.locate(33) == ParamLocation{0, ParamKind::bias, 1});
    CHECK(a.layer_of(66) == 1);
    CHECK_THROWS_AS(a.locate(67), ArgumentError);
    CHECK_THROWS_AS((ArchSpec{{4}}.validate()), ConfigError);
    CHECK_THROWS_AS((ArchSpec{{4, 0, 2}}.validate()), ConfigError);
    CHECK_THROWS_AS(init_model(ArchSpec{{2, 0}}, 1), ConfigError);
}

TEST_CASE("init_model bounds and determinism") {
    const auto m = init_model(ArchSpec{{2, 1}}, 5);
    for (double w : m.weights(0)) CHECK(std::abs(w) <= std::sqrt(3.0));
    CHECK(init_model(ArchSpec{{2, 1}}, 5) == m);

    const auto m2 = init_model(ArchSpec{{4, 8, 3}}, 7);
    const auto w = m2.weights(0);
    CHECK(w.size() == 32);
    double mean = 0, mx = 0;
    for (double x : w) {
        mean += x;
        mx = std::max(mx, std::abs(x));
    }
    mean /= 32.0;
    const double bound = std::sqrt(6.0 / 4.0);
    CHECK(mx <= bound);
    // uniform(-b, b) has sd b/sqrt(3); the mean of 32 draws has sd b/sqrt(96)
    CHECK(std::abs(mean) <= 3 * bound / std::sqrt(96.0));
}

TEST_CASE("forward_logits") {
    Matrix x(1, 2);
    x(0, 0) = 3;
    x(0, 1) = -1;
    const auto zero = testutil::model_with({2, 3, 2}, std::vector<double>(9 + 8, 0.0));
    const auto z = forward_logits(zero, x);
    CHECK(z.data == std::vector<double>{0, 0});

    const auto ident = testutil::model_with({2, 2}, {1, 0, 0, 1, 0, 0});
    CHECK(forward_logits(ident, x).data == std::vector<double>{3, -1});

    // W1 (2x3), b1, W2 (3x2), b2
    const std::vector<double> w1{0.5, -1, 0.25, 0.1, 0.2, -0.3}, b1{0.1, 0.2, -0.4};
    const std::vector<double> w2{1, -1, 0.5, 2, -0.5, 0.3}, b2{0.05, -0.05};
    std::vector<double> v = w1;
    v.insert(v.end(), b1.begin(), b1.end());
    v.insert(v.end(), w2.begin(), w2.end());
    v.insert(v.end(), b2.begin(), b2.end());
    const auto m = testutil::model_with({2, 3, 2}, v);
    double h[3];
    for (int j = 0; j < 3; ++j) h[j] = std::max(0.0, 3 * w1[0 * 3 + j] + -1 * w1[1 * 3 + j] + b1[j]);
    const auto out = forward_logits(m, x);
    for (int k = 0; k < 2; ++k) {
        double s = b2[k];
        for (int j = 0; j < 3; ++j) s += h[j] * w2[j * 2 + k];
        CHECK(out(0, k) == doctest::Approx(s).epsilon(1e-14));
    }

    Matrix bad(1, 3);
    CHECK_THROWS_AS(forward_logits(m, bad), ShapeError);
}

TEST_CASE("loss of uniform logits is ln C") {
    const auto zero = testutil::model_with({3, 5}, std::vector<double>(20, 0.0));
    const auto b = testutil::random_batch(4, 3, 5, 1);
    CHECK(mean_loss(zero, b) == doctest::Approx(std::log(5.0)).epsilon(1e-14));
    CHECK_THROWS_AS(loss_and_grad(zero, Batch{Matrix(0, 3), {}}), ArgumentError);
}

TEST_CASE("analytic gradient matches central differences") {
    const std::vector<std::vector<std::size_t>> archs{{3, 4, 2}, {5, 6, 4, 3}, {2, 7, 7, 7, 4}};
    for (std::size_t k = 0; k < archs.size(); ++k) {
        const auto m = init_model(ArchSpec{archs[k]}, 10 + k);
        const auto b = testutil::random_batch(6, archs[k].front(), archs[k].back(), 20 + k);
        const auto lg = loss_and_grad(m, b);
        const auto fd = testutil::fd_grad(m, b);
        CAPTURE(k);
        CHECK(testutil::l2(lg.grad, fd) / std::max(testutil::norm(fd), 1e-12) <= 1e-4);
        CHECK(lg.loss == doctest::Approx(mean_loss(m, b)).epsilon(1e-14));
    }
}

TEST_CASE("duplicating a batch leaves loss and gradient unchanged") {
    const auto m = init_model(ArchSpec{{3, 5, 2}}, 2);
    const auto b = testutil::random_batch(5, 3, 2, 3);
    Batch dup;
    dup.features = Matrix(10, 3);
    for (std::size_t r = 0; r < 10; ++r) {
        for (std::size_t c = 0; c < 3; ++c) dup.features(r, c) = b.features(r % 5, c);
        dup.labels.push_back(b.labels[r % 5]);
    }
    const auto a = loss_and_grad(m, b), d = loss_and_grad(m, dup);
    CHECK(a.loss == doctest::Approx(d.loss).epsilon(1e-13));
    for (std::size_t i = 0; i < a.grad.size(); ++i) CHECK(a.grad[i] == doctest::Approx(d.grad[i]).epsilon(1e-12));
}

TEST_CASE("predict breaks ties to the lowest class") {
    const auto zero = testutil::model_with({2, 3}, std::vector<double>(9, 0.0));
    const auto b = testutil::random_batch(3, 2, 3, 4);
    CHECK(predict(zero, b.features) == std::vector<int>{0, 0, 0});
    CHECK(accuracy(zero, Batch{Matrix(0, 2), {}}) == 0.0);
}

TEST_CASE("sgd and adam steps") {
    auto m = testutil::model_with({1, 1}, {1.0, 0.0});
    auto sgd = OptState::make(OptKind::sgd, 0.1, 2);
    opt_step(m, sgd, std::vector<double>{2.0, 0.0});
    CHECK(m.values[0] == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(m.values[1] == 0.0);

    auto m2 = testutil::model_with({1, 1}, {1.0, 0.0});
    auto adam = OptState::make(OptKind::adam, 1e-3, 2);
    opt_step(m2, adam, std::vector<double>{1.0, 0.0});
    // m_hat = 1, v_hat = 1, step = lr / (1 + eps)
    CHECK(m2.values[0] == doctest::Approx(1.0 - 1e-3 / (1.0 + 1e-8)).epsilon(1e-15));
    CHECK(m2.values[1] == 0.0);

    CHECK_THROWS_AS(opt_step(m2, adam, std::vector<double>{NAN, 0.0}), NumericError);
    CHECK_THROWS_AS(opt_step(m2, adam, std::vector<double>{1.0}), ShapeError);
}

TEST_CASE("reinit_params") {
    const ArchSpec arch{{2, 2}};
    const auto m = init_model(arch, 1);
    CHECK(reinit_params(m, std::vector<std::size_t>{}, 9) == m);

    const auto r = reinit_params(m, std::vector<std::size_t>{0}, 9);
    CHECK(std::equal(r.values.begin() + 1, r.values.end(), m.values.begin() + 1));
    CHECK(r.values[0] != m.values[0]);
    CHECK(std::abs(r.values[0]) <= init_bound(arch, arch.locate(0)));

    const ArchSpec big{{6, 10, 4}};
    const auto mb = init_model(big, 2);
    std::vector<std::size_t> all(big.param_count());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const auto rb = reinit_params(mb, all, 3);
    for (std::size_t i = 0; i < all.size(); ++i) {
        CHECK(std::abs(rb.values[i]) <= init_bound(big, big.locate(i)));
        CHECK(rb.values[i] != mb.values[i]);
    }
    CHECK_THROWS_AS(reinit_params(m, std::vector<std::size_t>{6}, 1), ArgumentError);
}
