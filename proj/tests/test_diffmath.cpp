#include <doctest.h>

#include <cmath>
#include <random>

#include "fvg/diffmath.hpp"
#include "fvg/errors.hpp"
#include "oracle.hpp"

using namespace fvg;
using doctest::Approx;

TEST_SUITE("diffmath") {

TEST_CASE("softmax_temp closed forms") {
    const Vec u = softmax_temp(Vec{0, 0, 0, 0}, 2.0);
    for (double p : u) CHECK(p == Approx(0.25).epsilon(1e-12));

    for (double c : {-1000.0, 0.0, 3.5, 1e4}) {
        const Vec p = softmax_temp(Vec{c + 1, c + 1}, 1.0);
        CHECK(p[0] == Approx(0.5).epsilon(1e-12));
        CHECK(p[1] == Approx(0.5).epsilon(1e-12));
    }

    const Vec p = softmax_temp(Vec{2, 0}, 2.0);
    const auto o = oracle::softmax({2, 0}, 2.0);
    CHECK(std::abs(p[0] - static_cast<double>(o[0])) < 1e-12);
    CHECK(std::abs(p[1] - static_cast<double>(o[1])) < 1e-12);
    CHECK(p[0] == Approx(0.731059).epsilon(1e-6));
}

TEST_CASE("softmax_temp sums to one on random inputs") {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> dim(2, 512);
    std::normal_distribution<double> g(0.0, 30.0);
    std::uniform_real_distribution<double> tau(0.05, 10.0);
    for (int t = 0; t < 1000; ++t) {
        Vec z(static_cast<std::size_t>(dim(rng)));
        for (double& x : z) x = g(rng);
        const Vec p = softmax_temp(z, tau(rng));
        double s = 0;
        for (double x : p) {
            CHECK(x >= 0.0);
            s += x;
        }
        CHECK(std::abs(s - 1.0) <= 1e-9);
    }
}

TEST_CASE("softmax_temp is stable on huge logits and rejects bad tau") {
    const Vec p = softmax_temp(Vec{1e300, 0}, 1.0);
    CHECK(all_finite(p));
    CHECK(p[0] == 1.0);
    CHECK_THROWS_AS(softmax_temp(Vec{1, 2}, 0.0), ConfigError);
}

TEST_CASE("entropy closed forms") {
    CHECK(entropy(Vec{0.25, 0.25, 0.25, 0.25}) == Approx(std::log(4.0)).epsilon(1e-12));
    CHECK(entropy(Vec{1, 0, 0}) == Approx(0.0));
    CHECK(entropy(Vec{0.9, 0.1}) == Approx(static_cast<double>(oracle::entropy({0.9L, 0.1L}))).epsilon(1e-9));
    CHECK(std::abs(entropy(Vec{0.9, 0.1}) - 0.325083) < 1e-6);
    CHECK_THROWS_AS(entropy(Vec{0.5, 0.6}), DomainError);
}

TEST_CASE("entropy sharpens as temperature drops") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g(0.0, 2.0);
    for (int t = 0; t < 200; ++t) {
        Vec z(6);
        for (double& x : z) x = g(rng);
        double prev = entropy(softmax_temp(z, 8.0));
        for (double tau : {4.0, 2.0, 1.0, 0.5, 0.25}) {
            const double h = entropy(softmax_temp(z, tau));
            CHECK(h <= prev + 1e-12);
            prev = h;
        }
    }
}

TEST_CASE("kl_div closed forms and properties") {
    CHECK(kl_div(Vec{0.5, 0.5}, Vec{0.5, 0.5}) == Approx(0.0));
    CHECK(kl_div(Vec{1, 0}, Vec{0.5, 0.5}) == Approx(std::log(2.0)).epsilon(1e-9));
    const double o = static_cast<double>(oracle::kl({0.9L, 0.1L}, {0.6L, 0.4L}));
    CHECK(std::abs(kl_div(Vec{0.9, 0.1}, Vec{0.6, 0.4}) - o) < 1e-9);
    CHECK(std::abs(o - 0.226289) < 1e-6);

    std::mt19937_64 rng(9);
    std::normal_distribution<double> g(0.0, 3.0);
    for (int t = 0; t < 500; ++t) {
        Vec a(5), b(5);
        for (double& x : a) x = g(rng);
        for (double& x : b) x = g(rng);
        const Vec p = softmax_temp(a, 1.0);
        const Vec q = softmax_temp(b, 1.0);
        CHECK(kl_div(p, q) >= 0.0);
        CHECK(kl_div(p, p) == Approx(0.0).epsilon(1e-12));
    }
}

TEST_CASE("cross_entropy closed forms") {
    CHECK(cross_entropy(Vec{0, 0}, 0, 1.0) == Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(cross_entropy(Vec{20, 0}, 0, 1.0) < 1e-8);
    double prev = cross_entropy(Vec{0, 0}, 0, 1.0);
    for (double m : {1.0, 2.0, 5.0, 10.0, 20.0}) {
        const double ce = cross_entropy(Vec{m, 0}, 0, 1.0);
        CHECK(ce < prev);
        prev = ce;
    }
    const auto o = oracle::softmax({2, 0}, 2.0);
    CHECK(std::abs(cross_entropy(Vec{2, 0}, 1, 2.0) - static_cast<double>(-std::log(o[1]))) < 1e-9);
    CHECK(std::abs(cross_entropy(Vec{2, 0}, 1, 2.0) - 1.313262) < 1e-6);
    CHECK_THROWS_AS(cross_entropy(Vec{0, 0}, 2, 1.0), DomainError);
}

TEST_CASE("cross_entropy equals KL from the one-hot label") {
    std::mt19937_64 rng(13);
    std::normal_distribution<double> g(0.0, 4.0);
    for (int t = 0; t < 300; ++t) {
        Vec z(7);
        for (double& x : z) x = g(rng);
        const std::size_t y = static_cast<std::size_t>(t % 7);
        const double ce = cross_entropy(z, y, 2.0);
        const double kl = kl_div(onehot(7, y), softmax_temp(z, 2.0));
        // The KL clamp only matters when p_y < 1e-7.
        if (softmax_temp(z, 2.0)[y] > 1e-6) CHECK(std::abs(ce - kl) <= 1e-9);
    }
}

TEST_CASE("bce closed forms") {
    CHECK(bce(0.5, 1) == Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(bce(0.5, 0) == Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(std::abs(bce(0.9, 1) - 0.105361) < 1e-6);
    CHECK(std::abs(bce(0.9, 1) + std::log(0.9)) < 1e-12);
    CHECK(std::isfinite(bce(0.0, 1)));
    CHECK_THROWS_AS(bce(0.5, 2), DomainError);
}

TEST_CASE("l2_normalize and cosine closed forms") {
    const Vec a = l2_normalize(Vec{3, 4});
    CHECK(a[0] == Approx(0.6).epsilon(1e-12));
    CHECK(a[1] == Approx(0.8).epsilon(1e-12));
    const Vec b = l2_normalize(Vec{1, 1, 1, 1});
    for (double x : b) CHECK(x == Approx(0.5).epsilon(1e-12));
    const Vec again = l2_normalize(a);
    CHECK(std::abs(again[0] - a[0]) < 1e-15);
    CHECK_THROWS_AS(l2_normalize(Vec{0, 0, 0}), DegenerateInputError);
    CHECK_THROWS_AS(cosine(Vec{0, 0}, Vec{1, 0}), DegenerateInputError);

    CHECK(cosine(Vec{0.3, 0.7}, Vec{0.3, 0.7}) == Approx(1.0).epsilon(1e-12));
    CHECK(cosine(Vec{1, 0}, Vec{0, 1}) == Approx(0.0));
    const double o = static_cast<double>(oracle::cosine({0.9L, 0.1L}, {0.6L, 0.4L}));
    CHECK(std::abs(cosine(Vec{0.9, 0.1}, Vec{0.6, 0.4}) - o) < 1e-9);
}

TEST_CASE("argmax breaks ties toward the lowest index") {
    CHECK(argmax(Vec{1, 3, 3, 2}) == 1);
    CHECK(argmax(Vec{5, 5}) == 0);
}

TEST_CASE("sgd_step arithmetic") {
    Parameter p("p", 1, 1);
    ParamSet set;
    set.add(p);
    p.value(0, 0) = 1.0;
    p.grad(0, 0) = 2.0;
    sgd_step(set, 0.5);
    CHECK(p.value(0, 0) == 0.0);
    CHECK(p.grad(0, 0) == 0.0);

    p.value(0, 0) = 0.25;
    sgd_step(set, 0.5);
    CHECK(p.value(0, 0) == 0.25);

    Parameter q("q", 1, 2);
    ParamSet qs;
    qs.add(q);
    q.value.fill(1.0);
    q.grad(0, 0) = 0.1;
    q.grad(0, 1) = -0.1;
    sgd_step(qs, 0.0035);
    CHECK(std::abs(q.value(0, 0) - 0.99965) < 1e-12);
    CHECK(std::abs(q.value(0, 1) - 1.00035) < 1e-12);
}

TEST_CASE("sgd_step decreases a convex quadratic and rejects NaN gradients") {
    // f(w) = 0.5 * sum a_i w_i^2 with curvature max a = 4; lr < 2/4.
    const double a[3] = {1.0, 2.0, 4.0};
    Parameter w("w", 1, 3);
    ParamSet set;
    set.add(w);
    w.value(0, 0) = 1.0;
    w.value(0, 1) = -2.0;
    w.value(0, 2) = 0.5;
    auto f = [&] {
        double s = 0;
        for (int i = 0; i < 3; ++i) s += 0.5 * a[i] * w.value(0, i) * w.value(0, i);
        return s;
    };
    double prev = f();
    for (int step = 0; step < 50; ++step) {
        for (int i = 0; i < 3; ++i) w.grad(0, i) = a[i] * w.value(0, i);
        sgd_step(set, 0.4);
        const double cur = f();
        CHECK(cur < prev);
        prev = cur;
    }

    w.grad(0, 1) = std::nan("");
    const Mat before = w.value;
    CHECK_THROWS_AS(sgd_step(set, 0.1), DivergedError);
    CHECK(w.value == before);
}

TEST_CASE("ParamSet rejects duplicate names") {
    Parameter a("x", 1, 1), b("x", 1, 1);
    ParamSet set;
    set.add(a);
    CHECK_THROWS_AS(set.add(b), ConfigError);
}

TEST_CASE("grad_check on a quadratic and bad steps") {
    Parameter w("w", 1, 1);
    ParamSet set;
    set.add(w);
    w.value(0, 0) = 3.0;
    const Objective f = [&](bool acc) {
        if (acc) w.grad(0, 0) += 2.0 * w.value(0, 0);
        return w.value(0, 0) * w.value(0, 0);
    };
    CHECK(w.grad(0, 0) == 0.0);
    const GradCheckResult r = grad_check(f, set);
    CHECK(r.max_rel_error < 1e-9);
    CHECK(w.grad(0, 0) == Approx(6.0));
    CHECK_THROWS_AS(grad_check(f, set, 1e-1), ConfigError);
    CHECK_THROWS_AS(grad_check(f, set, 1e-7), ConfigError);
}

TEST_CASE("op gradients match finite differences") {
    std::mt19937_64 rng(21);
    std::normal_distribution<double> g(0.0, 1.0);
    auto rand_vec = [&](std::size_t n) {
        Vec v(n);
        for (double& x : v) x = g(rng);
        return v;
    };
    const double h = 1e-6;
    auto numeric = [&](auto fn, Vec x) {
        Vec d(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double o = x[i];
            x[i] = o + h;
            const double up = fn(x);
            x[i] = o - h;
            const double dn = fn(x);
            x[i] = o;
            d[i] = (up - dn) / (2 * h);
        }
        return d;
    };
    auto close = [](const Vec& a, const Vec& b) {
        double worst = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(1.0, std::abs(b[i])));
        }
        return worst;
    };

    for (int t = 0; t < 20; ++t) {
        const Vec z = rand_vec(5);
        const Vec w = rand_vec(5);
        const std::size_t y = static_cast<std::size_t>(t % 5);

        // d/dz of w . softmax(z / tau)
        const Vec p = softmax_temp(z, 2.0);
        const Vec a1 = softmax_temp_backward(p, w, 2.0);
        CHECK(close(a1, numeric([&](const Vec& x) { return dot(w, softmax_temp(x, 2.0)); }, z)) < 1e-6);

        CHECK(close(cross_entropy_backward(z, y, 2.0),
                    numeric([&](const Vec& x) { return cross_entropy(x, y, 2.0); }, z)) < 1e-6);

        // KL(p || softmax(z)) through q
        const Vec target = softmax_temp(rand_vec(5), 1.0);
        const Vec q = softmax_temp(z, 1.0);
        const Vec a2 = softmax_temp_backward(q, kl_div_backward_q(target, q), 1.0);
        CHECK(close(a2, numeric([&](const Vec& x) { return kl_div(target, softmax_temp(x, 1.0)); }, z)) < 1e-6);

        // entropy(softmax(z))
        const Vec a3 = softmax_temp_backward(q, entropy_backward(q), 1.0);
        CHECK(close(a3, numeric([&](const Vec& x) { return entropy(softmax_temp(x, 1.0)); }, z)) < 1e-6);

        // w . l2_normalize(v)
        const Vec v = rand_vec(5);
        CHECK(close(l2_normalize_backward(v, w), numeric([&](const Vec& x) { return dot(w, l2_normalize(x)); }, v)) <
              1e-6);

        // cosine(v, w) in both arguments
        const auto [dv, dw] = cosine_backward(v, w);
        CHECK(close(dv, numeric([&](const Vec& x) { return cosine(x, w); }, v)) < 1e-6);
        CHECK(close(dw, numeric([&](const Vec& x) { return cosine(v, x); }, w)) < 1e-6);

        // bce through sigmoid
        const double qv = g(rng);
        const int rs = t % 2;
        const double r = sigmoid(qv);
        const double an = bce_backward(r, rs) * r * (1 - r);
        const double nu = (bce(sigmoid(qv + h), rs) - bce(sigmoid(qv - h), rs)) / (2 * h);
        CHECK(std::abs(an - nu) < 1e-6);
    }
}

TEST_CASE("round_to_float lands on the float32 grid") {
    Vec v{0.1, 1.0 / 3.0, -2.5};
    round_to_float(v);
    for (double x : v) CHECK(static_cast<double>(static_cast<float>(x)) == x);
}

}
