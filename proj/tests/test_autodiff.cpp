#include <cmath>
#include <random>

#include "doctest.h"
#include "fedsa/autodiff.hpp"
#include "oracles.hpp"

using namespace fedsa::ad;
using oracle::Vec;

namespace {

// Evaluates `build` on the tensors given by `xs`, returns the loss and fills
// every tensor's grad.
double run(std::vector<Tensor>& xs, const std::function<Var(Graph&, std::vector<Var>&)>& build)
{
    Graph g;
    std::vector<Var> vars;
    for (auto& t : xs) {
        t.zero_grad();
        vars.push_back(g.parameter(t));
    }
    const Var loss = build(g, vars);
    g.backward(loss);
    return g.scalar_value(loss);
}

// Checks the gradient w.r.t. xs[which] against central differences.
double grad_error(std::vector<Tensor> xs, std::size_t which, const std::function<Var(Graph&, std::vector<Var>&)>& build)
{
    for (auto& t : xs) t.requires_grad = true;
    run(xs, build);
    const Vec analytic = xs[which].grad;
    auto f = [&](const Vec& v) {
        auto copy = xs;
        copy[which].values = v;
        Graph g;
        std::vector<Var> vars;
        for (auto& t : copy) vars.push_back(g.constant(t.values, t.shape));
        return g.scalar_value(build(g, vars));
    };
    return oracle::max_rel_err(analytic, oracle::numeric_grad(f, xs[which].values));
}

Tensor rand_tensor(std::mt19937_64& rng, Shape shape)
{
    const auto n = numel(shape);
    return Tensor::from(oracle::random_vec(rng, n), std::move(shape));
}

}  // namespace

TEST_CASE("matvec examples")
{
    Graph g;
    auto w = g.constant({1, 0, 0, 1}, {2, 2});
    auto x = g.constant({3, 4}, {2});
    auto y = g.matvec(w, x);
    CHECK(g.value(y)[0] == 3.0);
    CHECK(g.value(y)[1] == 4.0);
    auto w2 = g.constant({2, 0, 0, 2}, {2, 2});
    auto y2 = g.matvec(w2, g.constant({1, 1}, {2}));
    CHECK(g.value(y2)[0] == 2.0);
    CHECK(g.value(y2)[1] == 2.0);
}

TEST_CASE("matvec rejects mismatched shapes")
{
    Graph g;
    auto w = g.constant({1, 0, 0, 1, 0, 0}, {2, 3});
    auto x = g.constant({3, 4}, {2});
    CHECK_THROWS(g.matvec(w, x));
}

TEST_CASE("relu values and zero subgradient")
{
    Tensor x = Tensor::from({-1, 2}, {2}, true);
    Graph g;
    auto r = g.relu(g.parameter(x));
    CHECK(g.value(r)[0] == 0.0);
    CHECK(g.value(r)[1] == 2.0);

    Tensor z = Tensor::from({0, 0}, {2}, true);
    Graph g2;
    auto rz = g2.relu(g2.parameter(z));
    g2.backward(g2.squared_norm(rz));
    CHECK(g2.value(rz)[0] == 0.0);
    CHECK(z.grad[0] == 0.0);
    CHECK(z.grad[1] == 0.0);

    // d/dx sum(relu(x)) is exactly 0 at 0
    Tensor z2 = Tensor::from({0, 0}, {2}, true);
    Graph g3;
    auto u = g3.constant({1, 1}, {1, 2});
    g3.backward(g3.matvec(u, g3.relu(g3.parameter(z2))));
    CHECK(z2.grad == Vec{0.0, 0.0});
}

TEST_CASE("softmax cross-entropy examples")
{
    Graph g;
    CHECK(g.scalar_value(g.softmax_cross_entropy(g.constant({0, 0}, {2}), 0)) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    const double big = g.scalar_value(g.softmax_cross_entropy(g.constant({1000, 0}, {2}), 0));
    CHECK(std::isfinite(big));
    CHECK(big == doctest::Approx(0.0).epsilon(1e-12));
    CHECK_THROWS_AS(g.softmax_cross_entropy(g.constant({0, 0}, {2}), 2), std::out_of_range);
}

TEST_CASE("softmax cross-entropy gradient is softmax minus one-hot")
{
    std::mt19937_64 rng(11);
    for (int t = 0; t < 20; ++t) {
        Tensor z = rand_tensor(rng, {5});
        z.requires_grad = true;
        const std::size_t label = static_cast<std::size_t>(t) % 5;
        Graph g;
        g.backward(g.softmax_cross_entropy(g.parameter(z), label));
        double mx = *std::max_element(z.values.begin(), z.values.end());
        double s = 0.0;
        for (double v : z.values) s += std::exp(v - mx);
        for (std::size_t k = 0; k < 5; ++k) {
            const double expected = std::exp(z.values[k] - mx) / s - (k == label ? 1.0 : 0.0);
            CHECK(z.grad[k] == doctest::Approx(expected).epsilon(1e-12));
        }
    }
}

TEST_CASE("euclidean distance examples")
{
    Tensor a = Tensor::from({0, 0}, {2}, true);
    Tensor b = Tensor::from({3, 4}, {2}, true);
    Graph g;
    CHECK(g.scalar_value(g.euclidean_distance(g.parameter(a), g.parameter(b))) == 5.0);

    Tensor c = Tensor::from({1.5, -2}, {2}, true);
    Tensor d = Tensor::from({1.5, -2}, {2}, true);
    Graph g2;
    auto dist = g2.euclidean_distance(g2.parameter(c), g2.parameter(d));
    g2.backward(dist);
    CHECK(g2.scalar_value(dist) == 0.0);
    CHECK(c.grad == Vec{0.0, 0.0});
    CHECK(d.grad == Vec{0.0, 0.0});
}

TEST_CASE("finite_diff_check on x^2")
{
    Tensor x = Tensor::from({3.0}, {1}, true);
    std::vector<Tensor*> ps{&x};
    auto r = finite_diff_check([&](Graph& g) { return g.squared_norm(g.parameter(x)); }, ps);
    CHECK(r.finite);
    CHECK(r.coordinates == 1);
    CHECK(r.max_relative_error < 1e-8);
}

TEST_CASE("finite_diff_check flags a gradient scaled by 1.1")
{
    Tensor x = Tensor::from({3.0, -2.0}, {2}, true);
    std::vector<Tensor*> ps{&x};
    GradCheckOptions opts;
    opts.analytic_scale = 1.1;
    auto r = finite_diff_check([&](Graph& g) { return g.squared_norm(g.parameter(x)); }, ps, opts);
    CHECK(r.max_relative_error >= 0.05);
    CHECK_FALSE(r.passed(1e-4));
}

TEST_CASE("primitive gradients match central differences on 100 instances")
{
    std::mt19937_64 rng(2024);
    double worst_matvec_w = 0, worst_matvec_x = 0, worst_relu = 0, worst_ce = 0, worst_dist = 0;
    double worst_add = 0, worst_sq = 0, worst_mean = 0, worst_scale = 0;
    for (int t = 0; t < 100; ++t) {
        const std::size_t out = 2 + t % 3, in = 3 + t % 4;
        std::vector<Tensor> mv{rand_tensor(rng, {out, in}), rand_tensor(rng, {in}), rand_tensor(rng, {1, out})};
        auto mvb = [](Graph& g, std::vector<Var>& v) { return g.matvec(v[2], g.matvec(v[0], v[1])); };
        worst_matvec_w = std::max(worst_matvec_w, grad_error(mv, 0, mvb));
        worst_matvec_x = std::max(worst_matvec_x, grad_error(mv, 1, mvb));

        // Keep relu inputs away from the kink so central differences are valid.
        Tensor rx = rand_tensor(rng, {in});
        for (auto& v : rx.values) v += (v >= 0 ? 0.1 : -0.1);
        std::vector<Tensor> rl{rx, rand_tensor(rng, {1, in})};
        worst_relu = std::max(worst_relu, grad_error(rl, 0, [](Graph& g, std::vector<Var>& v) {
            return g.matvec(v[1], g.relu(v[0]));
        }));

        std::vector<Tensor> ce{rand_tensor(rng, {out})};
        const std::size_t label = static_cast<std::size_t>(t) % out;
        worst_ce = std::max(worst_ce, grad_error(ce, 0, [label](Graph& g, std::vector<Var>& v) {
            return g.softmax_cross_entropy(v[0], label);
        }));

        std::vector<Tensor> ds{rand_tensor(rng, {in}), rand_tensor(rng, {in})};
        auto dsb = [](Graph& g, std::vector<Var>& v) { return g.euclidean_distance(v[0], v[1]); };
        worst_dist = std::max({worst_dist, grad_error(ds, 0, dsb), grad_error(ds, 1, dsb)});

        std::vector<Tensor> ad{rand_tensor(rng, {in}), rand_tensor(rng, {in}), rand_tensor(rng, {1, in})};
        worst_add = std::max(worst_add, grad_error(ad, 1, [](Graph& g, std::vector<Var>& v) {
            return g.matvec(v[2], g.sub(g.add(v[0], v[1]), g.scale(v[1], 0.3)));
        }));
        worst_sq = std::max(worst_sq, grad_error(ad, 0, [](Graph& g, std::vector<Var>& v) {
            return g.add_scalar(g.squared_norm(v[0]), 2.0);
        }));
        worst_mean = std::max(worst_mean, grad_error(ad, 0, [](Graph& g, std::vector<Var>& v) {
            std::vector<Var> xs{v[0], v[1], v[0]};
            return g.matvec(v[2], g.mean(xs));
        }));
        worst_scale = std::max(worst_scale, grad_error(ad, 0, [](Graph& g, std::vector<Var>& v) {
            std::vector<Var> s{g.squared_norm(v[0]), g.euclidean_distance(v[0], v[1])};
            return g.softmax_cross_entropy(g.stack(s), 1);
        }));
    }
    CHECK(worst_matvec_w <= 1e-6);
    CHECK(worst_matvec_x <= 1e-6);
    CHECK(worst_relu <= 1e-6);
    CHECK(worst_ce <= 1e-6);
    CHECK(worst_dist <= 1e-6);
    CHECK(worst_add <= 1e-6);
    CHECK(worst_sq <= 1e-6);
    CHECK(worst_mean <= 1e-6);
    CHECK(worst_scale <= 1e-6);
}

TEST_CASE("backward is linear in the loss")
{
    std::mt19937_64 rng(5);
    for (int t = 0; t < 20; ++t) {
        std::vector<Tensor> xs{rand_tensor(rng, {4}), rand_tensor(rng, {4})};
        for (auto& x : xs) x.requires_grad = true;
        auto l1 = [](Graph& g, std::vector<Var>& v) { return g.euclidean_distance(v[0], v[1]); };
        auto l2 = [](Graph& g, std::vector<Var>& v) { return g.softmax_cross_entropy(g.relu(v[0]), 2); };
        const double a = 0.7, b = -1.9;
        run(xs, l1);
        const Vec g1 = xs[0].grad;
        run(xs, l2);
        const Vec g2 = xs[0].grad;
        run(xs, [&](Graph& g, std::vector<Var>& v) {
            std::vector<Var> parts{g.scale(l1(g, v), a), g.scale(l2(g, v), b)};
            return g.sum(parts);
        });
        for (std::size_t k = 0; k < 4; ++k) CHECK(xs[0].grad[k] == doctest::Approx(a * g1[k] + b * g2[k]).epsilon(1e-12));
    }
}

TEST_CASE("repeated forward and backward passes give bitwise identical grads")
{
    std::mt19937_64 rng(9);
    std::vector<Tensor> xs{rand_tensor(rng, {3, 5}), rand_tensor(rng, {5})};
    for (auto& x : xs) x.requires_grad = true;
    auto build = [](Graph& g, std::vector<Var>& v) { return g.softmax_cross_entropy(g.relu(g.matvec(v[0], v[1])), 1); };
    run(xs, build);
    const Vec first = xs[0].grad;
    run(xs, build);
    CHECK(xs[0].grad == first);
}

TEST_CASE("parameter grads accumulate and clear() zeroes them")
{
    Tensor x = Tensor::from({1.0, 2.0}, {2}, true);
    Graph g;
    auto v = g.parameter(x);
    g.backward(g.squared_norm(v));
    g.backward(g.squared_norm(v));
    CHECK(x.grad == Vec{4.0, 8.0});
    g.clear();
    CHECK(x.grad == Vec{0.0, 0.0});
    CHECK(g.size() == 0);
}
