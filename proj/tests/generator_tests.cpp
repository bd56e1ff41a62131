#include <doctest.h>

#include "helpers.hpp"
#include "semd/generator.hpp"

#include <algorithm>
#include <set>

using namespace semd;
using semd::testing::rand_tensor;

namespace {

bool same_data(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

} // namespace

TEST_SUITE("generator") {

TEST_CASE("published configurations produce the documented shapes") {
    Rng rng(51);
    {
        SEMDNetwork net = init_network(GeneratorConfig::table_64(8), 1);
        CHECK(net.config.reshape_grid() == 4);
        CHECK(net.config.reshape_channels() == 256);
        Tensor img = rand_tensor({2, 3, 64, 64}, rng, 0.0, 1.0);
        Tensor latent = encode(img, net, false);
        CHECK(latent.shape() == Shape{2, 512});
        Tensor branch = decode_branch_raw(latent, 0, net, false);
        CHECK(branch.shape() == Shape{2, 4, 128, 128});
    }
    {
        SEMDNetwork net = init_network(GeneratorConfig::table_128(4), 1);
        CHECK(net.config.reshape_grid() == 4);
        CHECK(net.config.reshape_channels() == 800);
        Tensor img = rand_tensor({1, 3, 128, 128}, rng, 0.0, 1.0);
        Tensor latent = encode(img, net, false);
        CHECK(latent.shape() == Shape{1, 1024});
        Tensor branch = decode_branch_raw(latent, 3, net, false);
        CHECK(branch.shape() == Shape{1, 8, 128, 128});
    }
    CHECK(GeneratorConfig::test_scale(8).reshape_grid() == 2);
    CHECK(GeneratorConfig::test_scale(8).reshape_channels() == 128);
}

TEST_CASE("identical images in one eval batch produce identical latents") {
    Rng rng(52);
    SEMDNetwork net = init_network(GeneratorConfig::test_scale(8), 2);
    Tensor one = rand_tensor({1, 3, 32, 32}, rng, 0.0, 1.0);
    Tensor img = concat({one, one}, 0);
    Tensor latent = encode(img, net, false);
    REQUIRE(latent.shape() == Shape{2, 64});
    for (std::int64_t d = 0; d < 64; ++d) CHECK(latent.at({0, d}) == latent.at({1, d}));
}

TEST_CASE("view partition is a bijection onto 0..7 for every decoder count") {
    Rng rng(53);
    Tensor img = rand_tensor({3, 32, 32}, rng, 0.0, 1.0);
    for (int n : {1, 2, 4, 8}) {
        SEMDNetwork net = init_network(GeneratorConfig::test_scale(n), 3);
        CHECK(net.config.views_per_decoder() == 8 / n);
        CHECK(net.decoders.size() == std::size_t(n));
        std::vector<CoordImage> views = forward(img, net);
        REQUIRE(views.size() == 8); // always 8, independent of n
        std::set<int> seen;
        for (std::size_t k = 0; k < views.size(); ++k) {
            CHECK(views[k].view_index == int(k)); // branch-major order
            CHECK(views[k].grid.shape() == Shape{4, 64, 64});
            seen.insert(views[k].view_index);
        }
        CHECK(seen.size() == 8);

        // eval forward agrees with the raw training-path slicing
        Tensor img4 = reshape(img, {1, 3, 32, 32});
        std::vector<Tensor> raw = forward_raw(img4, net, false);
        REQUIRE(raw.size() == std::size_t(n));
        for (int j = 0; j < n; ++j)
            for (int v = 0; v < net.config.views_per_decoder(); ++v) {
                Tensor grid = view_grid(raw[std::size_t(j)], 0, v);
                const CoordImage& ci = views[std::size_t(j * (8 / n) + v)];
                CHECK(same_data(grid, ci.grid));
            }
    }
}

TEST_CASE("mask channel is a probability, coordinates stay linear") {
    Rng rng(54);
    SEMDNetwork net = init_network(GeneratorConfig::test_scale(4), 7);
    Tensor img = rand_tensor({3, 32, 32}, rng, 0.0, 1.0);
    for (const CoordImage& ci : forward(img, net)) {
        const std::int64_t plane = 64 * 64;
        bool coord_outside_unit = false;
        for (std::int64_t i = 0; i < plane; ++i) {
            const double m = ci.grid.data()[3 * plane + i];
            CHECK(m > 0.0);
            CHECK(m < 1.0);
            for (int c = 0; c < 3; ++c)
                if (std::abs(ci.grid.data()[c * plane + i]) > 1.0) coord_outside_unit = true;
        }
        CHECK(coord_outside_unit); // linear channels are not squashed
    }
}

TEST_CASE("zeroed parameters give zero coordinates and 0.5 masks") {
    SEMDNetwork net = init_network(GeneratorConfig::test_scale(8), 11);
    for (Tensor& p : net.parameters())
        std::fill(p.mutable_data().begin(), p.mutable_data().end(), 0.0);
    Tensor img = Tensor::full({3, 32, 32}, 0.7);
    for (const CoordImage& ci : forward(img, net)) {
        const std::int64_t plane = 64 * 64;
        for (std::int64_t i = 0; i < plane; ++i) {
            CHECK(ci.grid.data()[0 * plane + i] == 0.0);
            CHECK(ci.grid.data()[1 * plane + i] == 0.0);
            CHECK(ci.grid.data()[2 * plane + i] == 0.0);
            CHECK(ci.grid.data()[3 * plane + i] == 0.5);
        }
    }
}

TEST_CASE("perturbing one decoder changes only its own views") {
    Rng rng(55);
    Tensor img = rand_tensor({3, 32, 32}, rng, 0.0, 1.0);
    SEMDNetwork a = init_network(GeneratorConfig::test_scale(4), 13);
    SEMDNetwork b = init_network(GeneratorConfig::test_scale(4), 13);
    for (double& x : b.decoders[3].head_b.mutable_data()) x += 0.25;

    const auto va = forward(img, a);
    const auto vb = forward(img, b);
    REQUIRE(va.size() == 8);
    for (std::size_t k = 0; k < 8; ++k) {
        const bool owned_by_3 = k >= 6; // branch 3 of 4 owns views 6 and 7
        if (owned_by_3)
            CHECK(!same_data(va[k].grid, vb[k].grid));
        else
            CHECK(same_data(va[k].grid, vb[k].grid));
    }
}

TEST_CASE("initialization is seed-deterministic and decoder seeds are branch-local") {
    SEMDNetwork a = init_network(GeneratorConfig::test_scale(2), 17);
    SEMDNetwork b = init_network(GeneratorConfig::test_scale(2), 17);
    SEMDNetwork c = init_network(GeneratorConfig::test_scale(2), 18);
    const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
    REQUIRE(pa.size() == pb.size());
    bool any_diff_c = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(same_data(pa[i], pb[i]));
        if (!same_data(pa[i], pc[i])) any_diff_c = true;
    }
    CHECK(any_diff_c);

    // a branch's weights depend on (seed, branch) but not on the decoder count
    SEMDNetwork n8 = init_network(GeneratorConfig::test_scale(8), 17);
    CHECK(same_data(a.decoders[1].lin_w[0], n8.decoders[1].lin_w[0]));
    CHECK(same_data(a.decoders[1].deconv_w[2], n8.decoders[1].deconv_w[2]));
    // distinct branches draw from distinct streams
    CHECK(!same_data(n8.decoders[0].lin_w[0], n8.decoders[1].lin_w[0]));

    CHECK_THROWS_AS(init_network(GeneratorConfig::test_scale(3), 1), ConfigError);
    GeneratorConfig bad = GeneratorConfig::test_scale(8);
    bad.encoder_linear_dims.back() = 63; // != latent_dim
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = GeneratorConfig::test_scale(8);
    bad.decoder_linear_dims.back() = 510; // not divisible by grid^2
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("input validation") {
    SEMDNetwork net = init_network(GeneratorConfig::test_scale(8), 19);
    Rng rng(56);
    CHECK_THROWS_AS(encode(rand_tensor({1, 3, 16, 16}, rng), net, false), DimensionError);
    CHECK_THROWS_AS(encode(rand_tensor({1, 1, 32, 32}, rng), net, false), DimensionError);
    Tensor latent = rand_tensor({1, 64}, rng);
    CHECK_THROWS_AS(decode_branch_raw(latent, 8, net, false), IndexError);
    CHECK_THROWS_AS(decode_branch_raw(latent, -1, net, false), IndexError);
    CHECK_THROWS_AS(decode_branch_raw(rand_tensor({1, 63}, rng), 0, net, false), DimensionError);
}

TEST_CASE("a per-branch loss leaves other decoders' gradients at zero") {
    Rng rng(57);
    SEMDNetwork net = init_network(GeneratorConfig::test_scale(4), 23);
    for (Tensor& p : net.parameters()) p.zero_grad();
    Tensor img = rand_tensor({2, 3, 32, 32}, rng, 0.0, 1.0, true);
    std::vector<Tensor> raw = forward_raw(img, net, true);
    backward(sum(raw[1]));

    auto grad_norm = [](const std::vector<Tensor>& params) {
        double acc = 0.0;
        for (const Tensor& p : params)
            for (double g : p.grad()) acc += g * g;
        return acc;
    };
    auto decoder_params = [&](int j) {
        std::vector<Tensor> out;
        DecoderParams& d = net.decoders[std::size_t(j)];
        for (auto& t : d.lin_w) out.push_back(t);
        for (auto& t : d.lin_b) out.push_back(t);
        for (auto& t : d.deconv_w) out.push_back(t);
        for (auto& bn : d.lin_bn) out.push_back(bn.gamma);
        out.push_back(d.head_w);
        out.push_back(d.head_b);
        return out;
    };
    CHECK(grad_norm(decoder_params(1)) > 0.0);
    CHECK(grad_norm(decoder_params(0)) == 0.0);
    CHECK(grad_norm(decoder_params(2)) == 0.0);
    CHECK(grad_norm(decoder_params(3)) == 0.0);
    // the shared encoder does receive gradient
    CHECK(grad_norm({net.encoder.conv_w[0]}) > 0.0);
}

TEST_CASE("save and load round-trip the full network state") {
    semd::testing::TempDir tmp;
    Rng rng(58);
    SEMDNetwork net = init_network(GeneratorConfig::test_scale(2), 29);
    // make running stats non-trivial so the round-trip covers them
    Tensor img = rand_tensor({2, 3, 32, 32}, rng, 0.0, 1.0);
    (void)forward_raw(img, net, true);

    const std::string path = tmp.file("net.ckpt");
    save_network(path, net);
    SEMDNetwork loaded = load_network(path);

    CHECK(loaded.config.n_decoders == 2);
    CHECK(loaded.config.input_size == 32);
    CHECK(loaded.config.output_size == 64);
    CHECK(loaded.config.latent_dim == 64);

    const auto a = net.state_arrays();
    const auto b = loaded.state_arrays();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].name == b[i].name);
        CHECK(a[i].shape == b[i].shape);
        CHECK(a[i].data == b[i].data);
    }

    // behavioral equality in eval mode
    Tensor probe = rand_tensor({3, 32, 32}, rng, 0.0, 1.0);
    const auto va = forward(probe, net);
    const auto vb = forward(probe, loaded);
    for (std::size_t k = 0; k < va.size(); ++k) CHECK(same_data(va[k].grid, vb[k].grid));

    CHECK_THROWS_AS(load_network(tmp.file("missing.ckpt")), IoError);
}

} // TEST_SUITE
