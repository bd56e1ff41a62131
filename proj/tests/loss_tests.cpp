#include <doctest.h>

#include "helpers.hpp"
#include "semd/loss.hpp"

#include <cmath>
#include <fstream>

using namespace semd;
using semd::testing::gradcheck;
using semd::testing::rand_tensor;

namespace {

RenderPair random_gt(std::int64_t size, Rng& rng, double fg_prob = 0.5) {
    RenderPair rp = RenderPair::background(size, kFarDepth);
    for (std::size_t i = 0; i < rp.mask.size(); ++i) {
        if (rng.uniform() < fg_prob) {
            rp.mask[i] = 1.0;
            rp.depth[i] = rng.uniform(1.0, 3.0);
        }
    }
    return rp;
}

Tensor constant_plane(std::int64_t size, double value) {
    return Tensor::full({1, size, size}, value);
}

} // namespace

TEST_SUITE("loss") {

TEST_CASE("uninformative masks cost ln 2 per view") {
    Rng rng(41);
    const std::int64_t S = 8;
    for (int k : {1, 3, 5}) {
        std::vector<Tensor> preds;
        std::vector<RenderPair> gts;
        for (int i = 0; i < k; ++i) {
            preds.push_back(constant_plane(S, 0.5));
            gts.push_back(random_gt(S, rng));
        }
        CHECK(mask_loss(preds, gts).item() ==
              doctest::Approx(double(k) * std::log(2.0)).epsilon(1e-12));
    }
}

TEST_CASE("confident correct mask costs -ln(p)") {
    const std::int64_t S = 8;
    RenderPair gt = RenderPair::background(S, kFarDepth);
    for (double& m : gt.mask) m = 1.0;
    CHECK(mask_loss({constant_plane(S, 0.9)}, {gt}).item() ==
          doctest::Approx(-std::log(0.9)).epsilon(1e-12));
    // saturated predictions are clamped, not infinite
    const double worst = mask_loss({constant_plane(S, 0.0)}, {gt}).item();
    CHECK(std::isfinite(worst));
    CHECK(worst == doctest::Approx(-std::log(kProbClamp)).epsilon(1e-9));
}

TEST_CASE("exact depths cost zero and a constant offset costs the offset per view") {
    Rng rng(42);
    const std::int64_t S = 8;
    const int K = 4;
    std::vector<Tensor> exact, offset;
    std::vector<RenderPair> gts;
    for (int k = 0; k < K; ++k) {
        RenderPair gt = random_gt(S, rng);
        Tensor pred = Tensor::zeros({1, S, S});
        Tensor shifted = Tensor::zeros({1, S, S});
        for (std::int64_t i = 0; i < S * S; ++i) {
            pred.mutable_data()[i] = gt.depth[std::size_t(i)];
            shifted.mutable_data()[i] = gt.depth[std::size_t(i)] + 0.3;
        }
        gts.push_back(std::move(gt));
        exact.push_back(pred);
        offset.push_back(shifted);
    }
    CHECK(depth_loss(exact, gts).item() == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(depth_loss(offset, gts).item() == doctest::Approx(0.3 * K).epsilon(1e-12));
}

TEST_CASE("background pixels never contribute to the depth term") {
    const std::int64_t S = 8;
    RenderPair gt = RenderPair::background(S, kFarDepth);
    gt.mask[10] = 1.0;
    gt.depth[10] = 2.0;
    Tensor pred = Tensor::full({1, S, S}, 123.0); // wild values everywhere
    pred.mutable_data()[10] = 2.5;
    CHECK(depth_loss({pred}, {gt}).item() == doctest::Approx(0.5).epsilon(1e-12));

    RenderPair empty = RenderPair::background(S, kFarDepth);
    CHECK(depth_loss({pred}, {empty}).item() == 0.0);
}

TEST_CASE("losses match a direct brute-force evaluation") {
    Rng rng(43);
    const std::int64_t S = 8;
    const int K = 3;
    std::vector<Tensor> views;
    std::vector<RenderPair> gts;
    double want_mask = 0.0, want_depth = 0.0;
    for (int k = 0; k < K; ++k) {
        RenderPair gt = random_gt(S, rng, 0.4);
        Tensor pv = Tensor::zeros({2, S, S});
        for (std::int64_t i = 0; i < S * S; ++i) {
            pv.mutable_data()[i] = rng.uniform(0.5, 3.5);          // depth plane
            pv.mutable_data()[S * S + i] = rng.uniform(0.05, 0.95); // mask plane
        }
        double bce = 0.0, l1 = 0.0;
        std::int64_t fg = 0;
        for (std::int64_t i = 0; i < S * S; ++i) {
            const double p = pv.data()[S * S + i];
            const double m = gt.mask[std::size_t(i)];
            bce += -(m * std::log(p) + (1.0 - m) * std::log(1.0 - p));
            if (m >= 0.5) {
                l1 += std::abs(pv.data()[i] - gt.depth[std::size_t(i)]);
                fg += 1;
            }
        }
        want_mask += bce / double(S * S);
        if (fg > 0) want_depth += l1 / double(fg);
        views.push_back(pv);
        gts.push_back(std::move(gt));
    }
    const double lambda = 0.7;
    LossBreakdown bd;
    Tensor total = joint_loss(views, gts, lambda, &bd);
    CHECK(bd.mask_loss == doctest::Approx(want_mask).epsilon(1e-12));
    CHECK(bd.depth_loss == doctest::Approx(want_depth).epsilon(1e-12));
    CHECK(total.item() == doctest::Approx(want_mask + lambda * want_depth).epsilon(1e-12));
    CHECK(bd.per_view.size() == std::size_t(K));
    double mk = 0, dk = 0;
    for (auto [m, d] : bd.per_view) {
        mk += m;
        dk += d;
    }
    CHECK(mk == doctest::Approx(bd.mask_loss).epsilon(1e-12));
    CHECK(dk == doctest::Approx(bd.depth_loss).epsilon(1e-12));

    // lambda 0 removes the depth term from the total
    LossBreakdown bd0;
    CHECK(joint_loss(views, gts, 0.0, &bd0).item() ==
          doctest::Approx(bd.mask_loss).epsilon(1e-12));
    CHECK(bd0.depth_loss == doctest::Approx(bd.depth_loss).epsilon(1e-12)); // still reported
}

TEST_CASE("empty-foreground views are tallied") {
    const std::int64_t S = 8;
    std::vector<Tensor> views{Tensor::full({2, S, S}, 0.5), Tensor::full({2, S, S}, 0.5)};
    std::vector<RenderPair> gts{RenderPair::background(S, kFarDepth),
                                RenderPair::background(S, kFarDepth)};
    gts[1].mask[0] = 1.0;
    gts[1].depth[0] = 2.0;
    LossBreakdown bd;
    joint_loss(views, gts, 1.0, &bd);
    CHECK(bd.empty_foreground_views == 1);
}

TEST_CASE("moving a foreground prediction away from its target increases the loss") {
    Rng rng(44);
    const std::int64_t S = 8;
    RenderPair gt = random_gt(S, rng, 0.6);
    Tensor pred = Tensor::zeros({1, S, S});
    for (std::int64_t i = 0; i < S * S; ++i) pred.mutable_data()[i] = gt.depth[std::size_t(i)] + 0.2;
    const double base = depth_loss({pred}, {gt}).item();
    std::int64_t fg_idx = -1;
    for (std::int64_t i = 0; i < S * S; ++i)
        if (gt.mask[std::size_t(i)] >= 0.5) {
            fg_idx = i;
            break;
        }
    REQUIRE(fg_idx >= 0);
    for (double delta : {0.1, 0.5, 2.0}) {
        Tensor worse = Tensor::from_data({1, S, S},
                                         {pred.data().begin(), pred.data().end()});
        worse.mutable_data()[fg_idx] += delta;
        CHECK(depth_loss({worse}, {gt}).item() > base);
    }
}

TEST_CASE("validation rejects mismatched inputs") {
    const std::int64_t S = 8;
    std::vector<Tensor> views{Tensor::full({2, S, S}, 0.5)};
    std::vector<RenderPair> gts{RenderPair::background(S, kFarDepth),
                                RenderPair::background(S, kFarDepth)};
    CHECK_THROWS_AS(joint_loss(views, gts, 1.0), DimensionError);
    CHECK_THROWS_AS(mask_loss({constant_plane(4, 0.5)}, {RenderPair::background(8, 25.0)}),
                    DimensionError);
    CHECK_THROWS_AS(joint_loss({Tensor::zeros({3, S, S})},
                               {RenderPair::background(S, kFarDepth)}, 1.0),
                    DimensionError);
    CHECK_THROWS_AS(joint_loss({Tensor::full({2, S, S}, 0.5)},
                               {RenderPair::background(S, kFarDepth)}, -0.5),
                    ConfigError);
}

TEST_CASE("joint loss gradients match finite differences") {
    Rng rng(45);
    const std::int64_t S = 8;
    const int K = 2;
    std::vector<RenderPair> gts;
    std::vector<Tensor> seeds;
    for (int k = 0; k < K; ++k) {
        RenderPair gt = random_gt(S, rng);
        Tensor pv = Tensor::zeros({2, S, S});
        for (std::int64_t i = 0; i < S * S; ++i) {
            // keep depths away from the L1 kink and masks away from the clamp
            double d = gt.depth[std::size_t(i)] + (rng.uniform() < 0.5 ? -1.0 : 1.0) *
                                                      rng.uniform(0.1, 0.6);
            pv.mutable_data()[i] = d;
            pv.mutable_data()[S * S + i] = rng.uniform(0.2, 0.8);
        }
        gts.push_back(std::move(gt));
        seeds.push_back(pv);
    }
    const double err = gradcheck(
        [&](const std::vector<Tensor>& in) { return joint_loss(in, gts, 0.7); }, seeds);
    CHECK(err < 1e-6);

    // saturated mask pixels sit on the clamp plateau: zero gradient there
    Tensor flat = Tensor::full({2, S, S}, 2.0);
    for (std::int64_t i = 0; i < S * S; ++i) flat.mutable_data()[S * S + i] = 1.0;
    flat.set_requires_grad(true);
    backward(joint_loss({flat}, {gts[0]}, 1.0));
    for (std::int64_t i = 0; i < S * S; ++i) CHECK(flat.grad()[S * S + i] == 0.0);
}

TEST_CASE("loss log appends and reads back") {
    semd::testing::TempDir tmp;
    const std::string path = tmp.file("loss.csv");
    append_loss_log(path, {{0, 3.5, 3.0, 0.5}, {1, 3.25, 2.75, 0.5}});
    append_loss_log(path, {{2, 3.0, 2.5, 0.5}});
    const auto rows = read_loss_log(path);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].iter == 0);
    CHECK(rows[2].iter == 2);
    CHECK(rows[1].total == doctest::Approx(3.25).epsilon(1e-12));
    CHECK(rows[2].mask == doctest::Approx(2.5).epsilon(1e-12));

    {
        std::ofstream os(tmp.file("bad.csv"));
        os << "0,1.0,0.5\n";
    }
    CHECK_THROWS_AS(read_loss_log(tmp.file("bad.csv")), CorruptContainerError);
    CHECK_THROWS_AS(read_loss_log(tmp.file("nope.csv")), IoError);
}

} // TEST_SUITE
