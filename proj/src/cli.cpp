#include "semd/pipeline.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

namespace semd {

namespace {

GeneratorConfig config_for_sizes(std::int64_t input_size, std::int64_t output_size,
                                 int n_decoders) {
    if (input_size == 64 && output_size == 128) return GeneratorConfig::table_64(n_decoders);
    if (input_size == 128 && output_size == 256) return GeneratorConfig::table_128(n_decoders);
    if (input_size == 32 && output_size == 64) return GeneratorConfig::test_scale(n_decoders);
    std::ostringstream os;
    os << "no published architecture for input " << input_size << " / output " << output_size
       << " (supported: 64/128, 128/256, 32/64)";
    throw ConfigError(os.str());
}

struct GenDataOpts {
    std::vector<std::string> kinds{"cube", "sphere", "cylinder", "torus", "composite"};
    std::int64_t count = 5;
    std::uint64_t seed = 0;
    std::int64_t input_size = 64;
    std::int64_t output_size = 128;
    int inputs = 24;
    int supervision = 100;
    std::int64_t surface = 2000;
    std::int64_t dense = 300000;
    double elevation = 20.0;
    std::string out;
};

void run_gen_data(const GenDataOpts& o) {
    if (o.kinds.empty()) throw ConfigError("--kinds must list at least one shape kind");
    if (o.count < 1) throw ConfigError("--count must be positive");
    std::vector<DatasetEntry> entries;
    entries.reserve(static_cast<std::size_t>(o.count));
    const Intrinsics intr = Intrinsics::for_image(o.output_size);
    for (std::int64_t i = 0; i < o.count; ++i) {
        const std::string& kind_name = o.kinds[static_cast<std::size_t>(i) % o.kinds.size()];
        const ShapeKind kind = shape_kind_from_name(kind_name);
        GroundTruthShape shape = generate_shape(kind, o.seed + static_cast<std::uint64_t>(i),
                                                o.surface, o.dense);
        DatasetConfig dc;
        dc.input_size = o.input_size;
        dc.output_size = o.output_size;
        dc.input_count = o.inputs;
        dc.supervision_count = o.supervision;
        dc.input_elevation_deg = o.elevation;
        dc.pose_seed = o.seed + 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(i);
        entries.push_back(build_entry(shape, intr, dc, kind_name + "-" + std::to_string(i)));
        std::cerr << "generated " << entries.back().model_id << " (" << (i + 1) << "/" << o.count
                  << ")\n";
    }
    write_dataset(o.out, entries);
    std::cout << "wrote " << entries.size() << " entries to " << o.out << "\n";
}

struct TrainOpts {
    std::string dataset;
    std::string checkpoint; // input net (finetune, or pretrain --resume)
    std::string out;
    std::string log;
    std::int64_t iters = -1;
    double lr = -1.0;
    double lambda = 1.0;
    int k = 5;
    std::int64_t batch = 4;
    int decoders = 8;
    std::uint64_t seed = 0;
    double threshold = kDefaultMaskThreshold;
};

SEMDNetwork load_or_init(const TrainOpts& o, const std::vector<DatasetEntry>& data) {
    if (!o.checkpoint.empty()) return load_network(o.checkpoint);
    GeneratorConfig cfg = config_for_sizes(data.front().input_size, data.front().output_size,
                                           o.decoders);
    return init_network(cfg, o.seed);
}

void run_train(const TrainOpts& o, bool fine) {
    auto data = read_dataset(o.dataset);
    if (data.empty()) throw ConfigError("dataset '" + o.dataset + "' holds no entries");
    SEMDNetwork net = fine ? load_network(o.checkpoint) : load_or_init(o, data);

    TrainConfig tc;
    tc.n_decoders = net.config.n_decoders;
    tc.lambda = o.lambda;
    tc.supervision_view_count = o.k;
    tc.batch_size = o.batch;
    tc.seed = o.seed;
    tc.mask_threshold = o.threshold;
    tc.diagnostics_path = o.out.empty() ? std::string{} : o.out + ".diverged";
    if (fine) {
        tc.finetune_iters = o.iters >= 0 ? o.iters : 1000;
        if (o.lr > 0) tc.finetune_lr = o.lr;
    } else {
        tc.pretrain_iters = o.iters >= 0 ? o.iters : 2000;
        if (o.lr > 0) tc.pretrain_lr = o.lr;
    }

    auto log = fine ? finetune(net, data, tc) : pretrain(net, data, tc);
    if (!o.out.empty()) save_network(o.out, net);
    if (!o.log.empty()) append_loss_log(o.log, log);
    std::cout << (fine ? "finetune" : "pretrain") << ": " << log.size() << " logged iterations";
    if (!log.empty()) std::cout << ", final loss " << log.back().total;
    if (!o.out.empty()) std::cout << ", checkpoint " << o.out;
    std::cout << "\n";
}

struct InferOpts {
    std::string checkpoint;
    std::string image;
    std::string dataset;
    std::int64_t entry = 0;
    std::int64_t azimuth = 0;
    double threshold = kDefaultMaskThreshold;
    std::string out;
};

Tensor load_image(const InferOpts& o) {
    if (!o.image.empty()) {
        auto arrays = read_checkpoint(o.image);
        for (const auto& a : arrays) {
            if (a.name != "image") continue;
            if (a.shape.size() != 3 || a.shape[0] != 3 || a.shape[1] != a.shape[2])
                throw DimensionError("'image' array in " + o.image + " is not [3,S,S]");
            return make_image_tensor(a.data, a.shape[1]);
        }
        throw CorruptContainerError("no 'image' array in " + o.image);
    }
    auto data = read_dataset(o.dataset);
    if (o.entry < 0 || o.entry >= static_cast<std::int64_t>(data.size()))
        throw IndexError("--entry out of range for " + o.dataset);
    const auto& e = data[static_cast<std::size_t>(o.entry)];
    if (o.azimuth < 0 || o.azimuth >= static_cast<std::int64_t>(e.input_renders.size()))
        throw IndexError("--azimuth out of range for entry " + e.model_id);
    return make_image_tensor(e.input_renders[static_cast<std::size_t>(o.azimuth)], e.input_size);
}

void run_infer(const InferOpts& o) {
    SEMDNetwork net = load_network(o.checkpoint);
    Tensor img = load_image(o);
    bool empty = false;
    PointCloud cloud = infer(net, img, o.threshold, &empty);
    if (empty) std::cerr << "warning: fused cloud is empty (no mask above threshold)\n";
    write_ply(o.out, cloud);
    std::cout << "wrote " << cloud.size() << " points to " << o.out << "\n";
}

struct EvalOpts {
    std::string checkpoint;
    std::string dataset;
    std::string out;
    std::int64_t points = 1024;
    std::uint64_t seed = 0;
};

void run_eval(const EvalOpts& o) {
    SEMDNetwork net = load_network(o.checkpoint);
    auto data = read_dataset(o.dataset);
    EvalResult res = evaluate(net, data, o.points, o.seed);
    if (!o.out.empty()) write_metric_csv(o.out, res.rows);
    std::cout << "evaluated " << res.rows.size() << "/" << data.size() << " entries";
    if (res.failures > 0) std::cout << " (" << res.failures << " failed)";
    std::cout << "\n";
    if (!res.rows.empty()) {
        std::printf("mean euclid pred->gt %.6f, gt->pred %.6f, chamfer %.6f, emd %.6f\n",
                    res.mean.euclid_pred_to_gt, res.mean.euclid_gt_to_pred, res.mean.chamfer,
                    res.mean.emd);
    }
}

struct ExportOpts {
    std::string dataset;
    std::int64_t entry = 0;
    std::string out;
};

void run_export_ply(const ExportOpts& o) {
    auto data = read_dataset(o.dataset);
    if (o.entry < 0 || o.entry >= static_cast<std::int64_t>(data.size()))
        throw IndexError("--entry out of range for " + o.dataset);
    const auto& e = data[static_cast<std::size_t>(o.entry)];
    write_ply(o.out, e.shape.surface_samples);
    std::cout << "wrote " << e.shape.surface_samples.size() << " points of " << e.model_id
              << " to " << o.out << "\n";
}

struct LossCurveOpts {
    std::string log;
    std::string out;
    std::int64_t window = 50;
};

void run_losscurve(const LossCurveOpts& o) {
    if (o.window < 1) throw ConfigError("--window must be positive");
    auto records = read_loss_log(o.log);
    std::FILE* f = std::fopen(o.out.c_str(), "wb");
    if (!f) throw IoError("cannot open " + o.out + " for writing");
    std::fprintf(f, "iter,total,mask,depth,total_ma\n");
    double acc = 0.0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        acc += records[i].total;
        if (i >= static_cast<std::size_t>(o.window))
            acc -= records[i - static_cast<std::size_t>(o.window)].total;
        const double ma =
            acc / static_cast<double>(std::min<std::size_t>(i + 1, static_cast<std::size_t>(o.window)));
        std::fprintf(f, "%lld,%.12g,%.12g,%.12g,%.12g\n",
                     static_cast<long long>(records[i].iter), records[i].total, records[i].mask,
                     records[i].depth, ma);
    }
    if (std::fclose(f) != 0) throw IoError("failed to finalize " + o.out);
    std::cout << "wrote " << records.size() << " rows to " << o.out << "\n";
}

// Expands `--config FILE` (given after a subcommand name) into option
// tokens read from FILE's `key = value` lines. Config-derived tokens are
// only added for options absent from the command line, so flags win.
void expand_config(std::vector<std::string>& args, const std::vector<std::string>& subcommands) {
    std::size_t sub = args.size();
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (std::find(subcommands.begin(), subcommands.end(), args[i]) != subcommands.end()) {
            sub = i;
            break;
        }
    }
    if (sub == args.size()) return;

    std::string path;
    bool found = false;
    for (std::size_t i = sub + 1; i < args.size();) {
        if (args[i] == "--config") {
            if (i + 1 >= args.size()) return; // let the parser report the missing value
            path = args[i + 1];
            found = true;
            args.erase(args.begin() + static_cast<std::ptrdiff_t>(i),
                       args.begin() + static_cast<std::ptrdiff_t>(i + 2));
        } else if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
            found = true;
            args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
        } else {
            ++i;
        }
    }
    if (!found) return;

    std::set<std::string> given;
    for (std::size_t i = sub + 1; i < args.size(); ++i) {
        if (args[i].rfind("--", 0) == 0)
            given.insert(args[i].substr(0, args[i].find('=')));
    }

    std::ifstream is(path);
    if (!is) throw CLI::FileError::Missing(path);
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    std::vector<std::string> extra;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw CLI::FileError(path + ":" + std::to_string(lineno) +
                                 ": expected a `key = value` line");
        const std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw CLI::FileError(path + ":" + std::to_string(lineno) + ": empty key");
        if (value.size() >= 2 && (value.front() == '"' || value.front() == '\'') &&
            value.back() == value.front())
            value = value.substr(1, value.size() - 2);
        if (given.count("--" + key)) continue;
        extra.push_back("--" + key);
        extra.push_back(value);
    }
    args.insert(args.begin() + static_cast<std::ptrdiff_t>(sub + 1), extra.begin(), extra.end());
}

} // namespace

int cli(int argc, char** argv) {
    CLI::App app{"single-image point cloud reconstruction (single encoder, multiple decoders)"};
    app.require_subcommand(1);
    std::string config_file; // set via expand_config; registered for help and arg checking
    auto add_config = [&config_file](CLI::App* c) {
        c->add_option("--config", config_file,
                      "plain-text `key = value` config file; command-line flags take precedence");
    };

    GenDataOpts gd;
    CLI::App* gen = app.add_subcommand("gen-data", "render a synthetic shape dataset");
    add_config(gen);
    gen->add_option("--kinds", gd.kinds, "comma-separated shape kinds, cycled over entries")
        ->delimiter(',');
    gen->add_option("--count", gd.count, "number of entries");
    gen->add_option("--seed", gd.seed, "base seed (entry i uses seed+i)");
    gen->add_option("--input-size", gd.input_size, "RGB input resolution");
    gen->add_option("--output-size", gd.output_size, "coordinate-image resolution");
    gen->add_option("--inputs", gd.inputs, "azimuth-ring input renders per entry");
    gen->add_option("--supervision", gd.supervision, "randomized supervision views per entry");
    gen->add_option("--surface", gd.surface, "GT surface sample count");
    gen->add_option("--dense", gd.dense, "dense render sample count");
    gen->add_option("--elevation", gd.elevation, "input ring elevation in degrees");
    gen->add_option("--out", gd.out, "dataset path")->required();
    gen->callback([&gd] { run_gen_data(gd); });

    auto add_train = [&app, &add_config](const char* name, const char* desc, TrainOpts& t, bool fine) {
        CLI::App* c = app.add_subcommand(name, desc);
        add_config(c);
        c->add_option("--dataset", t.dataset, "training dataset")->required();
        auto* ck = c->add_option("--checkpoint", t.checkpoint,
                                 fine ? "network to fine-tune" : "resume from this network");
        if (fine) ck->required();
        c->add_option("--out", t.out, "checkpoint written after training");
        c->add_option("--log", t.log, "loss log appended per iteration");
        c->add_option("--iters", t.iters, "iteration count");
        c->add_option("--lr", t.lr, fine ? "learning rate (default 5e-6)" : "learning rate (default 5e-3)");
        c->add_option("--batch", t.batch, "batch size");
        c->add_option("--seed", t.seed, "training seed");
        if (fine) {
            c->add_option("--lambda", t.lambda, "depth-loss weight");
            c->add_option("--k", t.k, "supervision views per iteration");
            c->add_option("--threshold", t.threshold, "fusion mask threshold");
        } else {
            c->add_option("--decoders", t.decoders, "decoder count (fresh networks)");
        }
        c->callback([&t, fine] { run_train(t, fine); });
        return c;
    };
    TrainOpts pre_opts, fine_opts;
    add_train("pretrain", "stage 1: regress the fixed-view coordinate images", pre_opts, false);
    add_train("finetune", "stage 2: joint 2D-projection optimization", fine_opts, true);

    InferOpts io;
    CLI::App* inf = app.add_subcommand("infer", "reconstruct a point cloud from one image");
    add_config(inf);
    inf->add_option("--checkpoint", io.checkpoint, "trained network")->required();
    auto* img_opt = inf->add_option("--image", io.image, "image container (array 'image' [3,S,S])");
    auto* ds_opt = inf->add_option("--dataset", io.dataset, "take the input from a dataset entry");
    img_opt->excludes(ds_opt);
    inf->add_option("--entry", io.entry, "dataset entry index");
    inf->add_option("--azimuth", io.azimuth, "input render index within the entry");
    inf->add_option("--threshold", io.threshold, "fusion mask threshold");
    inf->add_option("--out", io.out, "output PLY path")->required();
    inf->callback([&io, img_opt, ds_opt] {
        if (img_opt->count() == 0 && ds_opt->count() == 0)
            throw CLI::RequiredError("--image or --dataset");
        run_infer(io);
    });

    EvalOpts eo;
    CLI::App* ev = app.add_subcommand("eval", "score a network against dataset ground truth");
    add_config(ev);
    ev->add_option("--checkpoint", eo.checkpoint, "trained network")->required();
    ev->add_option("--dataset", eo.dataset, "evaluation dataset")->required();
    ev->add_option("--out", eo.out, "per-entry metric CSV");
    ev->add_option("--points", eo.points, "resample size for Chamfer/EMD");
    ev->add_option("--seed", eo.seed, "resampling seed");
    ev->callback([&eo] { run_eval(eo); });

    ExportOpts xo;
    CLI::App* xp = app.add_subcommand("export-ply", "write an entry's GT surface samples as PLY");
    add_config(xp);
    xp->add_option("--dataset", xo.dataset, "dataset path")->required();
    xp->add_option("--entry", xo.entry, "entry index");
    xp->add_option("--out", xo.out, "output PLY path")->required();
    xp->callback([&xo] { run_export_ply(xo); });

    LossCurveOpts lo;
    CLI::App* lc = app.add_subcommand("losscurve", "turn a loss log into curve CSV data");
    add_config(lc);
    lc->add_option("--log", lo.log, "loss log path")->required();
    lc->add_option("--out", lo.out, "output CSV path")->required();
    lc->add_option("--window", lo.window, "moving-average window");
    lc->callback([&lo] { run_losscurve(lo); });

    try {
        std::vector<std::string> args(argv + 1, argv + argc);
        expand_config(args, {"gen-data", "pretrain", "finetune", "infer", "eval", "export-ply",
                             "losscurve"});
        std::reverse(args.begin(), args.end()); // the vector overload consumes back-to-front
        app.parse(args);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

} // namespace semd
