#include "semd/generator.hpp"

#include "semd/errors.hpp"
#include "semd/rng.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace semd {

namespace {

bool halves_to(std::int64_t size, std::size_t steps, std::int64_t* final_grid) {
    for (std::size_t i = 0; i < steps; ++i) {
        if (size % 2 != 0) return false;
        size /= 2;
    }
    if (final_grid) *final_grid = size;
    return size >= 1;
}

Tensor init_weight(Shape shape, double fan_in, Rng& rng) {
    const double std_dev = std::sqrt(2.0 / fan_in);
    std::int64_t n = 1;
    for (std::int64_t d : shape) n *= d;
    std::vector<double> data(static_cast<std::size_t>(n));
    for (double& v : data) v = rng.normal(0.0, std_dev);
    Tensor t = make_tensor(std::move(shape), std::move(data));
    t.set_requires_grad(true);
    return t;
}

Tensor init_zeros(Shape shape) {
    Tensor t = Tensor::zeros(std::move(shape));
    t.set_requires_grad(true);
    return t;
}

BatchNormLayer init_bn(std::int64_t channels) {
    BatchNormLayer bn;
    bn.gamma = Tensor::full({channels}, 1.0);
    bn.gamma.set_requires_grad(true);
    bn.beta = init_zeros({channels});
    bn.stats = RunningStats::create(channels);
    return bn;
}

void collect_bn(std::vector<Tensor>& out, std::vector<BatchNormLayer>& bns, std::size_t i) {
    out.push_back(bns[i].gamma);
    out.push_back(bns[i].beta);
}

void push_array(std::vector<NamedArray>& out, const std::string& name, const Tensor& t) {
    out.push_back(NamedArray{name, t.shape(), {t.data().begin(), t.data().end()}});
}

void push_bn(std::vector<NamedArray>& out, const std::string& prefix, const BatchNormLayer& bn) {
    push_array(out, prefix + ".gamma", bn.gamma);
    push_array(out, prefix + ".beta", bn.beta);
    const std::int64_t c = static_cast<std::int64_t>(bn.stats.mean.size());
    out.push_back(NamedArray{prefix + ".running_mean", {c}, bn.stats.mean});
    out.push_back(NamedArray{prefix + ".running_var", {c}, bn.stats.var});
}

} // namespace

std::int64_t GeneratorConfig::reshape_grid() const {
    std::int64_t g = output_size;
    for (std::size_t i = 0; i < decoder_deconv_filters.size(); ++i) g /= 2;
    return g;
}

std::int64_t GeneratorConfig::reshape_channels() const {
    const std::int64_t g = reshape_grid();
    return decoder_linear_dims.back() / (g * g);
}

void GeneratorConfig::validate() const {
    if (n_decoders < 1 || 8 % n_decoders != 0)
        throw ConfigError("generator: n_decoders must divide 8, got " + std::to_string(n_decoders));
    if (encoder_conv_filters.empty() || encoder_linear_dims.empty() ||
        decoder_linear_dims.empty() || decoder_deconv_filters.empty())
        throw ConfigError("generator: all layer lists must be nonempty");
    for (const auto* lst : {&encoder_conv_filters, &encoder_linear_dims, &decoder_linear_dims,
                            &decoder_deconv_filters})
        for (std::int64_t v : *lst)
            if (v < 1) throw ConfigError("generator: layer sizes must be positive");
    if (input_size < 8 || output_size < 8)
        throw ConfigError("generator: image sizes must be at least 8");

    std::int64_t enc_grid = 0;
    if (!halves_to(input_size, encoder_conv_filters.size(), &enc_grid))
        throw ConfigError("generator: input_size " + std::to_string(input_size) + " cannot halve " +
                          std::to_string(encoder_conv_filters.size()) + " times");
    if (encoder_linear_dims.back() != latent_dim)
        throw ConfigError("generator: last encoder linear dim must equal latent_dim");

    std::int64_t dec_grid = 0;
    if (!halves_to(output_size, decoder_deconv_filters.size(), &dec_grid))
        throw ConfigError("generator: output_size " + std::to_string(output_size) +
                          " cannot halve " + std::to_string(decoder_deconv_filters.size()) + " times");
    if (decoder_linear_dims.back() % (dec_grid * dec_grid) != 0)
        throw ConfigError("generator: last decoder linear dim " +
                          std::to_string(decoder_linear_dims.back()) +
                          " is not divisible by the seed grid area " +
                          std::to_string(dec_grid * dec_grid));
}

GeneratorConfig GeneratorConfig::table_64(int n_decoders) {
    GeneratorConfig c;
    c.n_decoders = n_decoders;
    c.input_size = 64;
    c.output_size = 128;
    c.latent_dim = 512;
    c.encoder_conv_filters = {96, 128, 192, 256};
    c.encoder_linear_dims = {2048, 1024, 512};
    c.decoder_linear_dims = {1024, 2048, 4096};
    c.decoder_deconv_filters = {192, 128, 96, 64, 48};
    c.validate();
    return c;
}

GeneratorConfig GeneratorConfig::table_128(int n_decoders) {
    GeneratorConfig c;
    c.n_decoders = n_decoders;
    c.input_size = 128;
    c.output_size = 128;
    c.latent_dim = 1024;
    c.encoder_conv_filters = {128, 192, 256, 384, 512};
    c.encoder_linear_dims = {4096, 2048, 1024};
    c.decoder_linear_dims = {2048, 4096, 12800};
    c.decoder_deconv_filters = {384, 256, 192, 128, 96};
    c.validate();
    return c;
}

GeneratorConfig GeneratorConfig::test_scale(int n_decoders) {
    GeneratorConfig c;
    c.n_decoders = n_decoders;
    c.input_size = 32;
    c.output_size = 64;
    c.latent_dim = 64;
    c.encoder_conv_filters = {12, 16, 24, 32};
    c.encoder_linear_dims = {256, 128, 64};
    c.decoder_linear_dims = {128, 256, 512};
    c.decoder_deconv_filters = {24, 16, 12, 8, 6};
    c.validate();
    return c;
}

SEMDNetwork init_network(const GeneratorConfig& config, std::uint64_t seed) {
    config.validate();
    SEMDNetwork net;
    net.config = config;

    {
        Rng rng(seed);
        std::int64_t in_ch = 3;
        for (std::int64_t f : config.encoder_conv_filters) {
            net.encoder.conv_w.push_back(
                init_weight({f, in_ch, 3, 3}, static_cast<double>(in_ch * 9), rng));
            net.encoder.conv_b.push_back(init_zeros({f}));
            net.encoder.conv_bn.push_back(init_bn(f));
            in_ch = f;
        }
        std::int64_t grid = 0;
        halves_to(config.input_size, config.encoder_conv_filters.size(), &grid);
        std::int64_t in_dim = in_ch * grid * grid;
        for (std::size_t i = 0; i < config.encoder_linear_dims.size(); ++i) {
            const std::int64_t out_dim = config.encoder_linear_dims[i];
            net.encoder.lin_w.push_back(
                init_weight({out_dim, in_dim}, static_cast<double>(in_dim), rng));
            net.encoder.lin_b.push_back(init_zeros({out_dim}));
            if (i + 1 < config.encoder_linear_dims.size())
                net.encoder.lin_bn.push_back(init_bn(out_dim)); // latent layer stays raw
            in_dim = out_dim;
        }
    }

    const std::int64_t head_ch = static_cast<std::int64_t>(config.views_per_decoder()) * 4;
    for (int j = 0; j < config.n_decoders; ++j) {
        Rng rng(seed + static_cast<std::uint64_t>(j));
        DecoderParams dec;
        std::int64_t in_dim = config.latent_dim;
        for (std::int64_t out_dim : config.decoder_linear_dims) {
            dec.lin_w.push_back(init_weight({out_dim, in_dim}, static_cast<double>(in_dim), rng));
            dec.lin_b.push_back(init_zeros({out_dim}));
            dec.lin_bn.push_back(init_bn(out_dim));
            in_dim = out_dim;
        }
        std::int64_t in_ch = config.reshape_channels();
        for (std::int64_t f : config.decoder_deconv_filters) {
            // Stride-2 transposed conv: ~9/4 taps reach each output pixel.
            dec.deconv_w.push_back(
                init_weight({in_ch, f, 3, 3}, static_cast<double>(in_ch) * 9.0 / 4.0, rng));
            dec.deconv_b.push_back(init_zeros({f}));
            dec.deconv_bn.push_back(init_bn(f));
            in_ch = f;
        }
        dec.head_w = init_weight({head_ch, in_ch}, static_cast<double>(in_ch), rng);
        dec.head_b = init_zeros({head_ch});
        net.decoders.push_back(std::move(dec));
    }
    return net;
}

std::vector<Tensor> SEMDNetwork::parameters() {
    std::vector<Tensor> out;
    for (std::size_t i = 0; i < encoder.conv_w.size(); ++i) {
        out.push_back(encoder.conv_w[i]);
        out.push_back(encoder.conv_b[i]);
        collect_bn(out, encoder.conv_bn, i);
    }
    for (std::size_t i = 0; i < encoder.lin_w.size(); ++i) {
        out.push_back(encoder.lin_w[i]);
        out.push_back(encoder.lin_b[i]);
        if (i < encoder.lin_bn.size()) collect_bn(out, encoder.lin_bn, i);
    }
    for (DecoderParams& dec : decoders) {
        for (std::size_t i = 0; i < dec.lin_w.size(); ++i) {
            out.push_back(dec.lin_w[i]);
            out.push_back(dec.lin_b[i]);
            collect_bn(out, dec.lin_bn, i);
        }
        for (std::size_t i = 0; i < dec.deconv_w.size(); ++i) {
            out.push_back(dec.deconv_w[i]);
            out.push_back(dec.deconv_b[i]);
            collect_bn(out, dec.deconv_bn, i);
        }
        out.push_back(dec.head_w);
        out.push_back(dec.head_b);
    }
    return out;
}

std::vector<NamedArray> SEMDNetwork::state_arrays() const {
    std::vector<NamedArray> out;
    auto cfg_scalar = [&](const std::string& name, std::int64_t v) {
        out.push_back(NamedArray{name, {1}, {static_cast<double>(v)}});
    };
    auto cfg_list = [&](const std::string& name, const std::vector<std::int64_t>& v) {
        NamedArray a{name, {static_cast<std::int64_t>(v.size())}, {}};
        for (std::int64_t x : v) a.data.push_back(static_cast<double>(x));
        out.push_back(std::move(a));
    };
    cfg_scalar("config.n_decoders", config.n_decoders);
    cfg_scalar("config.input_size", config.input_size);
    cfg_scalar("config.output_size", config.output_size);
    cfg_scalar("config.latent_dim", config.latent_dim);
    cfg_list("config.encoder_conv_filters", config.encoder_conv_filters);
    cfg_list("config.encoder_linear_dims", config.encoder_linear_dims);
    cfg_list("config.decoder_linear_dims", config.decoder_linear_dims);
    cfg_list("config.decoder_deconv_filters", config.decoder_deconv_filters);

    for (std::size_t i = 0; i < encoder.conv_w.size(); ++i) {
        const std::string p = "encoder.conv" + std::to_string(i);
        push_array(out, p + ".weight", encoder.conv_w[i]);
        push_array(out, p + ".bias", encoder.conv_b[i]);
        push_bn(out, p + ".bn", encoder.conv_bn[i]);
    }
    for (std::size_t i = 0; i < encoder.lin_w.size(); ++i) {
        const std::string p = "encoder.linear" + std::to_string(i);
        push_array(out, p + ".weight", encoder.lin_w[i]);
        push_array(out, p + ".bias", encoder.lin_b[i]);
        if (i < encoder.lin_bn.size()) push_bn(out, p + ".bn", encoder.lin_bn[i]);
    }
    for (std::size_t j = 0; j < decoders.size(); ++j) {
        const DecoderParams& dec = decoders[j];
        const std::string dp = "decoder." + std::to_string(j);
        for (std::size_t i = 0; i < dec.lin_w.size(); ++i) {
            const std::string p = dp + ".linear" + std::to_string(i);
            push_array(out, p + ".weight", dec.lin_w[i]);
            push_array(out, p + ".bias", dec.lin_b[i]);
            push_bn(out, p + ".bn", dec.lin_bn[i]);
        }
        for (std::size_t i = 0; i < dec.deconv_w.size(); ++i) {
            const std::string p = dp + ".deconv" + std::to_string(i);
            push_array(out, p + ".weight", dec.deconv_w[i]);
            push_array(out, p + ".bias", dec.deconv_b[i]);
            push_bn(out, p + ".bn", dec.deconv_bn[i]);
        }
        push_array(out, dp + ".head.weight", dec.head_w);
        push_array(out, dp + ".head.bias", dec.head_b);
    }
    return out;
}

Tensor encode(const Tensor& image, SEMDNetwork& net, bool training) {
    const GeneratorConfig& cfg = net.config;
    if (image.rank() != 4 || image.dim(1) != 3 || image.dim(2) != cfg.input_size ||
        image.dim(3) != cfg.input_size)
        throw DimensionError("encode: expected [B,3," + std::to_string(cfg.input_size) + "," +
                             std::to_string(cfg.input_size) + "] input");
    Tensor x = image;
    for (std::size_t i = 0; i < net.encoder.conv_w.size(); ++i) {
        x = conv2d(x, net.encoder.conv_w[i], net.encoder.conv_b[i], 2);
        x = batchnorm(x, net.encoder.conv_bn[i].gamma, net.encoder.conv_bn[i].beta,
                      net.encoder.conv_bn[i].stats, training);
        x = relu(x);
    }
    x = reshape(x, {x.dim(0), x.dim(1) * x.dim(2) * x.dim(3)});
    for (std::size_t i = 0; i < net.encoder.lin_w.size(); ++i) {
        x = linear(x, net.encoder.lin_w[i], net.encoder.lin_b[i]);
        if (i < net.encoder.lin_bn.size()) {
            x = batchnorm(x, net.encoder.lin_bn[i].gamma, net.encoder.lin_bn[i].beta,
                          net.encoder.lin_bn[i].stats, training);
            x = relu(x);
        }
    }
    return x;
}

Tensor decode_branch_raw(const Tensor& latent, int branch, SEMDNetwork& net, bool training) {
    const GeneratorConfig& cfg = net.config;
    if (branch < 0 || branch >= cfg.n_decoders)
        throw IndexError("decode_branch: branch " + std::to_string(branch) + " out of range [0," +
                         std::to_string(cfg.n_decoders) + ")");
    if (latent.rank() != 2 || latent.dim(1) != cfg.latent_dim)
        throw DimensionError("decode_branch: latent must be [B," + std::to_string(cfg.latent_dim) +
                             "]");
    DecoderParams& dec = net.decoders[static_cast<std::size_t>(branch)];
    Tensor x = latent;
    for (std::size_t i = 0; i < dec.lin_w.size(); ++i) {
        x = linear(x, dec.lin_w[i], dec.lin_b[i]);
        x = batchnorm(x, dec.lin_bn[i].gamma, dec.lin_bn[i].beta, dec.lin_bn[i].stats, training);
        x = relu(x);
    }
    const std::int64_t g = cfg.reshape_grid();
    x = reshape(x, {x.dim(0), cfg.reshape_channels(), g, g});
    for (std::size_t i = 0; i < dec.deconv_w.size(); ++i) {
        x = deconv2d(x, dec.deconv_w[i], dec.deconv_b[i]);
        x = batchnorm(x, dec.deconv_bn[i].gamma, dec.deconv_bn[i].beta, dec.deconv_bn[i].stats,
                      training);
        x = relu(x);
    }
    x = conv1x1(x, dec.head_w, dec.head_b);

    // Mask channels (every 4th) pass through sigmoid; coordinates stay linear.
    std::vector<Tensor> parts;
    for (int v = 0; v < cfg.views_per_decoder(); ++v) {
        parts.push_back(narrow(x, 1, v * 4, 3));
        parts.push_back(sigmoid(narrow(x, 1, v * 4 + 3, 1)));
    }
    return concat(parts, 1);
}

std::vector<Tensor> forward_raw(const Tensor& image, SEMDNetwork& net, bool training) {
    Tensor latent = encode(image, net, training);
    std::vector<Tensor> out;
    out.reserve(static_cast<std::size_t>(net.config.n_decoders));
    for (int j = 0; j < net.config.n_decoders; ++j)
        out.push_back(decode_branch_raw(latent, j, net, training));
    return out;
}

Tensor view_grid(const Tensor& branch_out, std::int64_t batch_item, int view_in_branch) {
    Tensor item = narrow(branch_out, 0, batch_item, 1);
    Tensor grid = narrow(item, 1, view_in_branch * 4, 4);
    return reshape(grid, {4, branch_out.dim(2), branch_out.dim(3)});
}

std::vector<CoordImage> decode_branch(const Tensor& latent, int branch, SEMDNetwork& net) {
    NoGradGuard ng;
    Tensor l = latent;
    if (l.rank() == 1) l = reshape(l, {1, l.dim(0)});
    Tensor raw = decode_branch_raw(l, branch, net, false);
    std::vector<CoordImage> views;
    for (int v = 0; v < net.config.views_per_decoder(); ++v) {
        CoordImage ci;
        ci.grid = view_grid(raw, 0, v);
        ci.view_index = branch * net.config.views_per_decoder() + v;
        views.push_back(std::move(ci));
    }
    return views;
}

std::vector<CoordImage> forward(const Tensor& image, SEMDNetwork& net) {
    NoGradGuard ng;
    Tensor img = image;
    if (img.rank() == 3) img = reshape(img, {1, img.dim(0), img.dim(1), img.dim(2)});
    Tensor latent = encode(img, net, false);
    std::vector<CoordImage> views;
    views.reserve(8);
    for (int j = 0; j < net.config.n_decoders; ++j) {
        std::vector<CoordImage> branch = decode_branch(latent, j, net);
        for (CoordImage& ci : branch) views.push_back(std::move(ci));
    }
    return views;
}

void save_network(const std::string& path, const SEMDNetwork& net) {
    write_checkpoint(path, net.state_arrays());
}

SEMDNetwork load_network(const std::string& path) {
    const std::vector<NamedArray> arrays = read_checkpoint(path);
    std::map<std::string, const NamedArray*> by_name;
    for (const NamedArray& a : arrays) by_name[a.name] = &a;

    auto want = [&](const std::string& name) -> const NamedArray& {
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw CorruptContainerError("'" + path + "': missing array '" + name + "'");
        return *it->second;
    };
    auto want_scalar = [&](const std::string& name) {
        const NamedArray& a = want(name);
        if (a.data.size() != 1)
            throw CorruptContainerError("'" + path + "': '" + name + "' is not a scalar");
        return static_cast<std::int64_t>(a.data[0]);
    };
    auto want_list = [&](const std::string& name) {
        const NamedArray& a = want(name);
        std::vector<std::int64_t> v;
        for (double d : a.data) v.push_back(static_cast<std::int64_t>(d));
        return v;
    };

    GeneratorConfig cfg;
    cfg.n_decoders = static_cast<int>(want_scalar("config.n_decoders"));
    cfg.input_size = want_scalar("config.input_size");
    cfg.output_size = want_scalar("config.output_size");
    cfg.latent_dim = want_scalar("config.latent_dim");
    cfg.encoder_conv_filters = want_list("config.encoder_conv_filters");
    cfg.encoder_linear_dims = want_list("config.encoder_linear_dims");
    cfg.decoder_linear_dims = want_list("config.decoder_linear_dims");
    cfg.decoder_deconv_filters = want_list("config.decoder_deconv_filters");

    SEMDNetwork net = init_network(cfg, 0);

    auto fill_tensor = [&](Tensor& t, const std::string& name) {
        const NamedArray& a = want(name);
        if (a.shape != t.shape())
            throw DimensionError("'" + path + "': array '" + name + "' has unexpected shape");
        std::copy(a.data.begin(), a.data.end(), t.mutable_data().begin());
    };
    auto fill_bn = [&](BatchNormLayer& bn, const std::string& prefix) {
        fill_tensor(bn.gamma, prefix + ".gamma");
        fill_tensor(bn.beta, prefix + ".beta");
        const NamedArray& rm = want(prefix + ".running_mean");
        const NamedArray& rv = want(prefix + ".running_var");
        if (rm.data.size() != bn.stats.mean.size() || rv.data.size() != bn.stats.var.size())
            throw DimensionError("'" + path + "': running stats under '" + prefix +
                                 "' have unexpected shape");
        bn.stats.mean = rm.data;
        bn.stats.var = rv.data;
    };

    for (std::size_t i = 0; i < net.encoder.conv_w.size(); ++i) {
        const std::string p = "encoder.conv" + std::to_string(i);
        fill_tensor(net.encoder.conv_w[i], p + ".weight");
        fill_tensor(net.encoder.conv_b[i], p + ".bias");
        fill_bn(net.encoder.conv_bn[i], p + ".bn");
    }
    for (std::size_t i = 0; i < net.encoder.lin_w.size(); ++i) {
        const std::string p = "encoder.linear" + std::to_string(i);
        fill_tensor(net.encoder.lin_w[i], p + ".weight");
        fill_tensor(net.encoder.lin_b[i], p + ".bias");
        if (i < net.encoder.lin_bn.size()) fill_bn(net.encoder.lin_bn[i], p + ".bn");
    }
    for (std::size_t j = 0; j < net.decoders.size(); ++j) {
        DecoderParams& dec = net.decoders[j];
        const std::string dp = "decoder." + std::to_string(j);
        for (std::size_t i = 0; i < dec.lin_w.size(); ++i) {
            const std::string p = dp + ".linear" + std::to_string(i);
            fill_tensor(dec.lin_w[i], p + ".weight");
            fill_tensor(dec.lin_b[i], p + ".bias");
            fill_bn(dec.lin_bn[i], p + ".bn");
        }
        for (std::size_t i = 0; i < dec.deconv_w.size(); ++i) {
            const std::string p = dp + ".deconv" + std::to_string(i);
            fill_tensor(dec.deconv_w[i], p + ".weight");
            fill_tensor(dec.deconv_b[i], p + ".bias");
            fill_bn(dec.deconv_bn[i], p + ".bn");
        }
        fill_tensor(dec.head_w, dp + ".head.weight");
        fill_tensor(dec.head_b, dp + ".head.bias");
    }
    return net;
}

} // namespace semd
