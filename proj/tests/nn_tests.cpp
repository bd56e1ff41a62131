#include <doctest.h>

#include "helpers.hpp"
#include "semd/adam.hpp"
#include "semd/nn.hpp"

#include <cmath>
#include <vector>

using namespace semd;
using semd::testing::gradcheck;
using semd::testing::rand_tensor;

TEST_SUITE("nn") {

TEST_CASE("conv2d all-ones center value is 9") {
    Tensor x = Tensor::full({1, 1, 4, 4}, 1.0);
    Tensor w = Tensor::full({1, 1, 3, 3}, 1.0);
    Tensor b = Tensor::zeros({1});
    Tensor y = conv2d(x, w, b, 1);
    CHECK(y.shape() == Shape{1, 1, 4, 4});
    CHECK(y.at({0, 0, 1, 1}) == 9.0);
    CHECK(y.at({0, 0, 1, 2}) == 9.0);
    CHECK(y.at({0, 0, 0, 0}) == 4.0); // corner sees a 2x2 support
    CHECK(y.at({0, 0, 0, 1}) == 6.0); // edge sees a 2x3 support
}

TEST_CASE("conv2d stride 2 halves spatial dims") {
    Rng rng(3);
    Tensor x = rand_tensor({1, 1, 8, 8}, rng, -1, 1, false);
    Tensor w = rand_tensor({2, 1, 3, 3}, rng, -1, 1, false);
    Tensor b = rand_tensor({2}, rng, -1, 1, false);
    CHECK(conv2d(x, w, b, 2).shape() == Shape{1, 2, 4, 4});
    CHECK(conv2d(x, w, b, 1).shape() == Shape{1, 2, 8, 8});
}

TEST_CASE("conv2d shape errors") {
    Rng rng(4);
    Tensor x = rand_tensor({1, 3, 4, 4}, rng, -1, 1, false);
    Tensor w = rand_tensor({2, 2, 3, 3}, rng, -1, 1, false); // C mismatch
    Tensor b = Tensor::zeros({2});
    CHECK_THROWS_AS(conv2d(x, w, b, 1), DimensionError);
    Tensor w5 = rand_tensor({2, 3, 5, 5}, rng, -1, 1, false);
    CHECK_THROWS_AS(conv2d(x, w5, Tensor::zeros({2}), 1), DimensionError);
    Tensor odd = rand_tensor({1, 3, 5, 5}, rng, -1, 1, false);
    Tensor w3 = rand_tensor({2, 3, 3, 3}, rng, -1, 1, false);
    CHECK_THROWS_AS(conv2d(odd, w3, b, 2), DimensionError);
}

TEST_CASE("conv2d matches brute-force reference") {
    Rng rng(5);
    Tensor x = rand_tensor({2, 3, 6, 6}, rng, -1, 1, false);
    Tensor w = rand_tensor({4, 3, 3, 3}, rng, -1, 1, false);
    Tensor b = rand_tensor({4}, rng, -1, 1, false);
    for (int stride : {1, 2}) {
        Tensor y = conv2d(x, w, b, stride);
        const std::int64_t Ho = 6 / stride;
        for (std::int64_t n = 0; n < 2; ++n)
            for (std::int64_t f = 0; f < 4; ++f)
                for (std::int64_t r = 0; r < Ho; ++r)
                    for (std::int64_t c = 0; c < Ho; ++c) {
                        double acc = b.at({f});
                        for (std::int64_t ch = 0; ch < 3; ++ch)
                            for (std::int64_t kr = 0; kr < 3; ++kr)
                                for (std::int64_t kc = 0; kc < 3; ++kc) {
                                    const std::int64_t ir = r * stride + kr - 1;
                                    const std::int64_t ic = c * stride + kc - 1;
                                    if (ir < 0 || ir >= 6 || ic < 0 || ic >= 6) continue;
                                    acc += x.at({n, ch, ir, ic}) * w.at({f, ch, kr, kc});
                                }
                        CHECK(y.at({n, f, r, c}) == doctest::Approx(acc).epsilon(1e-12));
                    }
    }
}

TEST_CASE("conv2d gradcheck") {
    Rng rng(6);
    for (int stride : {1, 2}) {
        const double err = gradcheck(
            [&](const std::vector<Tensor>& in) {
                return sum(mul(conv2d(in[0], in[1], in[2], stride),
                               conv2d(in[0], in[1], in[2], stride)));
            },
            {rand_tensor({2, 3, 6, 6}, rng), rand_tensor({2, 3, 3, 3}, rng),
             rand_tensor({2}, rng)});
        CHECK(err < 1e-5);
    }
}

TEST_CASE("deconv2d doubles spatial dims and broadcasts bias on zero input") {
    Rng rng(7);
    Tensor x = Tensor::zeros({1, 1, 2, 2});
    Tensor w = rand_tensor({1, 3, 3, 3}, rng, -1, 1, false);
    Tensor b = Tensor::from_data({3}, {0.25, -0.5, 1.5});
    Tensor y = deconv2d(x, w, b);
    CHECK(y.shape() == Shape{1, 3, 4, 4});
    for (std::int64_t f = 0; f < 3; ++f)
        for (std::int64_t r = 0; r < 4; ++r)
            for (std::int64_t c = 0; c < 4; ++c) CHECK(y.at({0, f, r, c}) == b.at({f}));

    Tensor wc = rand_tensor({2, 3, 3, 3}, rng, -1, 1, false); // C mismatch
    CHECK_THROWS_AS(deconv2d(x, wc, b), DimensionError);
}

TEST_CASE("deconv2d is the adjoint of conv2d stride 2") {
    // <conv(x), y> == <x, deconv(y)> when both use the same kernel and
    // zero bias; this pins the layout of the transposed convolution.
    Rng rng(8);
    Tensor x = rand_tensor({1, 2, 8, 8}, rng, -1, 1, false);
    Tensor w = rand_tensor({3, 2, 3, 3}, rng, -1, 1, false); // conv: 2 -> 3 at stride 2
    Tensor y = rand_tensor({1, 3, 4, 4}, rng, -1, 1, false);
    Tensor cx = conv2d(x, w, Tensor::zeros({3}), 2); // [1,3,4,4]

    // deconv weight layout is [C,F,3,3] with C the input channels of the
    // deconv (= conv's output channels).
    Tensor dy = deconv2d(y, w, Tensor::zeros({2})); // [1,2,8,8]
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < cx.data().size(); ++i) lhs += cx.data()[i] * y.data()[i];
    for (std::size_t i = 0; i < dy.data().size(); ++i) rhs += dy.data()[i] * x.data()[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
}

TEST_CASE("conv after deconv preserves shape") {
    Rng rng(9);
    Tensor x = rand_tensor({2, 3, 4, 4}, rng, -1, 1, false);
    Tensor wd = rand_tensor({3, 5, 3, 3}, rng, -1, 1, false);
    Tensor wc = rand_tensor({3, 5, 3, 3}, rng, -1, 1, false);
    Tensor up = deconv2d(x, wd, Tensor::zeros({5}));
    CHECK(up.shape() == Shape{2, 5, 8, 8});
    Tensor down = conv2d(up, wc, Tensor::zeros({3}), 2);
    CHECK(down.shape() == x.shape());
}

TEST_CASE("deconv2d gradcheck") {
    Rng rng(10);
    const double err = gradcheck(
        [&](const std::vector<Tensor>& in) {
            Tensor y = deconv2d(in[0], in[1], in[2]);
            return sum(mul(y, y));
        },
        {rand_tensor({1, 2, 3, 3}, rng), rand_tensor({2, 3, 3, 3}, rng), rand_tensor({3}, rng)});
    CHECK(err < 1e-5);
}

TEST_CASE("conv1x1 is a per-pixel linear map") {
    Rng rng(11);
    Tensor x = rand_tensor({2, 3, 4, 4}, rng, -1, 1, false);
    Tensor w = rand_tensor({2, 3}, rng, -1, 1, false);
    Tensor b = rand_tensor({2}, rng, -1, 1, false);
    Tensor y = conv1x1(x, w, b);
    CHECK(y.shape() == Shape{2, 2, 4, 4});
    for (std::int64_t n = 0; n < 2; ++n)
        for (std::int64_t f = 0; f < 2; ++f)
            for (std::int64_t r = 0; r < 4; ++r)
                for (std::int64_t c = 0; c < 4; ++c) {
                    double acc = b.at({f});
                    for (std::int64_t ch = 0; ch < 3; ++ch)
                        acc += w.at({f, ch}) * x.at({n, ch, r, c});
                    CHECK(y.at({n, f, r, c}) == doctest::Approx(acc).epsilon(1e-12));
                }

    const double err = gradcheck(
        [&](const std::vector<Tensor>& in) {
            return mean(mul(conv1x1(in[0], in[1], in[2]), conv1x1(in[0], in[1], in[2])));
        },
        {rand_tensor({1, 3, 3, 3}, rng), rand_tensor({2, 3}, rng), rand_tensor({2}, rng)});
    CHECK(err < 1e-5);
}

TEST_CASE("linear identity and zero-weight cases") {
    Tensor x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor eye = Tensor::zeros({3, 3});
    for (std::int64_t i = 0; i < 3; ++i) eye.at_mut({i, i}) = 1.0;
    Tensor y = linear(x, eye, Tensor::zeros({3}));
    for (std::int64_t i = 0; i < 2; ++i)
        for (std::int64_t j = 0; j < 3; ++j) CHECK(y.at({i, j}) == x.at({i, j}));

    Tensor b = Tensor::from_data({4}, {1, 2, 3, 4});
    Tensor z = linear(x, Tensor::zeros({4, 3}), b);
    for (std::int64_t i = 0; i < 2; ++i)
        for (std::int64_t j = 0; j < 4; ++j) CHECK(z.at({i, j}) == b.at({j}));

    CHECK_THROWS_AS(linear(x, Tensor::zeros({4, 2}), Tensor::zeros({4})), DimensionError);
}

TEST_CASE("linear gradcheck") {
    Rng rng(12);
    const double err = gradcheck(
        [&](const std::vector<Tensor>& in) {
            Tensor y = linear(in[0], in[1], in[2]);
            return sum(mul(y, y));
        },
        {rand_tensor({2, 3}, rng), rand_tensor({4, 3}, rng), rand_tensor({4}, rng)});
    CHECK(err < 1e-6);
}

TEST_CASE("batchnorm constant channel yields beta") {
    Tensor x = Tensor::full({4, 2, 3, 3}, 5.0);
    Tensor gamma = Tensor::full({2}, 3.0);
    Tensor beta = Tensor::from_data({2}, {0.7, -0.2});
    RunningStats stats = RunningStats::create(2);
    Tensor y = batchnorm(x, gamma, beta, stats, true);
    for (std::int64_t n = 0; n < 4; ++n)
        for (std::int64_t c = 0; c < 2; ++c)
            CHECK(y.at({n, c, 1, 1}) == doctest::Approx(beta.at({c})).epsilon(1e-9));
}

TEST_CASE("batchnorm normalizes channel statistics in training mode") {
    Rng rng(13);
    Tensor x = rand_tensor({4, 2, 4, 4}, rng, -2, 3, false);
    Tensor gamma = Tensor::full({2}, 1.0);
    Tensor beta = Tensor::zeros({2});
    RunningStats stats = RunningStats::create(2);
    Tensor y = batchnorm(x, gamma, beta, stats, true);
    for (std::int64_t c = 0; c < 2; ++c) {
        double m = 0.0, v = 0.0;
        const std::int64_t count = 4 * 4 * 4;
        for (std::int64_t n = 0; n < 4; ++n)
            for (std::int64_t r = 0; r < 4; ++r)
                for (std::int64_t col = 0; col < 4; ++col) m += y.at({n, c, r, col});
        m /= static_cast<double>(count);
        for (std::int64_t n = 0; n < 4; ++n)
            for (std::int64_t r = 0; r < 4; ++r)
                for (std::int64_t col = 0; col < 4; ++col) {
                    const double d = y.at({n, c, r, col}) - m;
                    v += d * d;
                }
        v /= static_cast<double>(count);
        CHECK(std::abs(m) < 1e-6);
        CHECK(v == doctest::Approx(1.0).epsilon(1e-3)); // epsilon in the denominator
    }
}

TEST_CASE("batchnorm running stats update and eval mode") {
    Rng rng(14);
    Tensor x = rand_tensor({8, 3}, rng, -1, 5, false);
    Tensor gamma = Tensor::full({3}, 1.0);
    Tensor beta = Tensor::zeros({3});
    RunningStats stats = RunningStats::create(3);
    batchnorm(x, gamma, beta, stats, true);
    // one update: running = 0.9*init + 0.1*batch
    for (std::int64_t c = 0; c < 3; ++c) {
        double m = 0.0;
        for (std::int64_t n = 0; n < 8; ++n) m += x.at({n, c});
        m /= 8.0;
        CHECK(stats.mean[static_cast<std::size_t>(c)] == doctest::Approx(0.1 * m).epsilon(1e-9));
    }

    // eval mode: y = gamma * (x - running_mean)/sqrt(running_var + eps) + beta
    Tensor y = batchnorm(x, gamma, beta, stats, false);
    const double expect =
        (x.at({0, 0}) - stats.mean[0]) / std::sqrt(stats.var[0] + stats.epsilon);
    CHECK(y.at({0, 0}) == doctest::Approx(expect).epsilon(1e-12));

    Tensor single = rand_tensor({1, 3}, rng, -1, 1, false);
    CHECK_THROWS_AS(batchnorm(single, gamma, beta, stats, true), DegenerateBatchError);
    CHECK_NOTHROW(batchnorm(single, gamma, beta, stats, false));
}

TEST_CASE("batchnorm gradcheck over input gamma beta") {
    Rng rng(15);
    for (bool training : {true, false}) {
        RunningStats stats = RunningStats::create(2);
        stats.mean = {0.1, -0.3};
        stats.var = {0.8, 1.4};
        const double err = gradcheck(
            [&](const std::vector<Tensor>& in) {
                RunningStats local = stats; // keep numeric passes independent
                Tensor y = batchnorm(in[0], in[1], in[2], local, training);
                return sum(mul(y, y));
            },
            {rand_tensor({4, 2, 3, 3}, rng), rand_tensor({2}, rng, 0.5, 1.5),
             rand_tensor({2}, rng)});
        CHECK(err < 1e-4); // batch statistics raise the curvature; h=1e-5
                           // truncation lands near 3e-5 with exact gradients
    }
}

TEST_CASE("adam first step moves by about lr in the gradient direction") {
    Tensor p = Tensor::from_data({1}, {1.0}, true);
    std::vector<Tensor> params{p};
    AdamState st = AdamState::create(params, 0.05);
    p.zero_grad();
    p.mutable_grad()[0] = 3.7; // any positive gradient
    adam_step(st, params);
    // bias correction makes mhat/sqrt(vhat) == sign(g) exactly on step 1
    CHECK(p.data()[0] == doctest::Approx(1.0 - 0.05).epsilon(1e-6));
    CHECK(st.step == 1);
}

TEST_CASE("adam zero gradient leaves parameter unchanged") {
    Tensor p = Tensor::from_data({2}, {0.4, -0.4}, true);
    std::vector<Tensor> params{p};
    AdamState st = AdamState::create(params, 0.1);
    p.zero_grad();
    adam_step(st, params);
    CHECK(p.data()[0] == 0.4);
    CHECK(p.data()[1] == -0.4);
}

TEST_CASE("adam converges on a quadratic") {
    Tensor p = Tensor::from_data({1}, {0.0}, true);
    std::vector<Tensor> params{p};
    AdamState st = AdamState::create(params, 0.1);
    double first_loss = 0.0, last_loss = 0.0;
    for (int i = 0; i < 100; ++i) {
        p.zero_grad();
        Tensor d = add_scalar(p, -3.0);
        Tensor loss = sum(mul(d, d));
        if (i == 0) first_loss = loss.item();
        last_loss = loss.item();
        backward(loss);
        adam_step(st, params);
    }
    CHECK(std::abs(p.data()[0] - 3.0) < 0.05);
    CHECK(last_loss < first_loss * 1e-3);
}

TEST_CASE("adam error cases") {
    Tensor p = Tensor::from_data({2}, {1.0, 2.0}, true);
    std::vector<Tensor> params{p};
    AdamState st = AdamState::create(params, 0.1);
    CHECK_THROWS_AS(adam_step(st, params), UninitializedGradientError);

    p.zero_grad();
    AdamState other = AdamState::create({}, 0.1);
    CHECK_THROWS_AS(adam_step(other, params), ConfigError);
}

TEST_CASE("clip_grad_norm scales only above the threshold") {
    Tensor a = Tensor::from_data({2}, {0.0, 0.0}, true);
    Tensor b = Tensor::from_data({1}, {0.0}, true);
    std::vector<Tensor> params{a, b};
    a.zero_grad();
    b.zero_grad();
    a.mutable_grad()[0] = 3.0;
    a.mutable_grad()[1] = 0.0;
    b.mutable_grad()[0] = 4.0; // norm 5
    const double pre = clip_grad_norm(params, 2.5);
    CHECK(pre == doctest::Approx(5.0));
    CHECK(a.grad()[0] == doctest::Approx(1.5));
    CHECK(b.grad()[0] == doctest::Approx(2.0));

    const double pre2 = clip_grad_norm(params, 10.0);
    CHECK(pre2 == doctest::Approx(2.5));
    CHECK(a.grad()[0] == doctest::Approx(1.5)); // unchanged below the cap
}

} // TEST_SUITE
