#include "semd/synthdata.hpp"

#include "semd/checkpoint.hpp"
#include "semd/errors.hpp"
#include "semd/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>

namespace semd {

namespace {

constexpr std::int64_t kThinningCandidateFactor = 20;
constexpr int kMaxPoseRetries = 100;

struct SurfaceSample {
    Eigen::Vector3d p;
    Eigen::Vector3d n;
};

// --- primitive samplers (pre-normalization coordinates) ---

SurfaceSample sample_cube(double h, const Eigen::Vector3d& center, Rng& rng) {
    const std::uint64_t face = rng.uniform_index(6);
    const int axis = static_cast<int>(face / 2);
    const double sign = (face % 2 == 0) ? -1.0 : 1.0;
    Eigen::Vector3d p;
    p[axis] = sign * h;
    p[(axis + 1) % 3] = rng.uniform(-h, h);
    p[(axis + 2) % 3] = rng.uniform(-h, h);
    Eigen::Vector3d n = Eigen::Vector3d::Zero();
    n[axis] = sign;
    return {p + center, n};
}

SurfaceSample sample_sphere(double r, const Eigen::Vector3d& center, Rng& rng) {
    Eigen::Vector3d n;
    do {
        n = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
    } while (n.squaredNorm() < 1e-12);
    n.normalize();
    return {center + r * n, n};
}

SurfaceSample sample_cylinder(double r, double hh, Rng& rng) {
    const double side_area = 2.0 * std::numbers::pi * r * 2.0 * hh;
    const double cap_area = std::numbers::pi * r * r;
    const double pick = rng.uniform(0.0, side_area + 2.0 * cap_area);
    const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
    if (pick < side_area) {
        const double y = rng.uniform(-hh, hh);
        return {Eigen::Vector3d(r * std::cos(theta), y, r * std::sin(theta)),
                Eigen::Vector3d(std::cos(theta), 0.0, std::sin(theta))};
    }
    const double sign = pick < side_area + cap_area ? -1.0 : 1.0;
    const double rho = r * std::sqrt(rng.uniform());
    return {Eigen::Vector3d(rho * std::cos(theta), sign * hh, rho * std::sin(theta)),
            Eigen::Vector3d(0.0, sign, 0.0)};
}

SurfaceSample sample_torus(double R, double r, Rng& rng) {
    // Area element scales with (R + r cos(phi)); rejection keeps it uniform.
    double phi;
    for (;;) {
        phi = rng.uniform(-std::numbers::pi, std::numbers::pi);
        if (rng.uniform() * (R + r) <= R + r * std::cos(phi)) break;
    }
    const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double ring = R + r * std::cos(phi);
    return {Eigen::Vector3d(ring * std::cos(theta), r * std::sin(phi), ring * std::sin(theta)),
            Eigen::Vector3d(std::cos(phi) * std::cos(theta), std::sin(phi),
                            std::cos(phi) * std::sin(theta))};
}

// Two-part union: a cube on -x and a sphere on +x, sample counts split in
// proportion to the parts' analytic surface areas.
const Eigen::Vector3d kCompositeCubeCenter(-0.45, 0.0, 0.0);
const Eigen::Vector3d kCompositeSphereCenter(0.45, 0.0, 0.0);

std::vector<SurfaceSample> draw_samples(ShapeKind kind, const std::vector<double>& params,
                                        std::int64_t count, Rng& rng) {
    std::vector<SurfaceSample> out;
    out.reserve(static_cast<std::size_t>(count));
    switch (kind) {
    case ShapeKind::cube:
        for (std::int64_t i = 0; i < count; ++i)
            out.push_back(sample_cube(params[0], Eigen::Vector3d::Zero(), rng));
        break;
    case ShapeKind::sphere:
        for (std::int64_t i = 0; i < count; ++i)
            out.push_back(sample_sphere(params[0], Eigen::Vector3d::Zero(), rng));
        break;
    case ShapeKind::cylinder:
        for (std::int64_t i = 0; i < count; ++i)
            out.push_back(sample_cylinder(params[0], params[1], rng));
        break;
    case ShapeKind::torus:
        for (std::int64_t i = 0; i < count; ++i)
            out.push_back(sample_torus(params[0], params[1], rng));
        break;
    case ShapeKind::composite: {
        const double h = params[0], r = params[1];
        const double cube_area = 24.0 * h * h;
        const double sphere_area = 4.0 * std::numbers::pi * r * r;
        const std::int64_t n_cube = static_cast<std::int64_t>(
            std::llround(static_cast<double>(count) * cube_area / (cube_area + sphere_area)));
        for (std::int64_t i = 0; i < n_cube; ++i)
            out.push_back(sample_cube(h, kCompositeCubeCenter, rng));
        for (std::int64_t i = n_cube; i < count; ++i)
            out.push_back(sample_sphere(r, kCompositeSphereCenter, rng));
        break;
    }
    }
    return out;
}

double bounding_radius(ShapeKind kind, const std::vector<double>& params) {
    switch (kind) {
    case ShapeKind::cube:
        return std::sqrt(3.0) * params[0];
    case ShapeKind::sphere:
        return params[0];
    case ShapeKind::cylinder:
        return std::sqrt(params[0] * params[0] + params[1] * params[1]);
    case ShapeKind::torus:
        return params[0] + params[1];
    case ShapeKind::composite:
        return std::max(kCompositeCubeCenter.norm() + std::sqrt(3.0) * params[0],
                        kCompositeSphereCenter.norm() + params[1]);
    }
    throw ConfigError("unknown shape kind");
}

std::vector<double> draw_params(ShapeKind kind, Rng& rng) {
    switch (kind) {
    case ShapeKind::cube:
        return {rng.uniform(0.5, 1.0)};
    case ShapeKind::sphere:
        return {rng.uniform(0.5, 1.0)};
    case ShapeKind::cylinder:
        return {rng.uniform(0.3, 0.8), rng.uniform(0.5, 1.0)};
    case ShapeKind::torus: {
        const double R = rng.uniform(0.6, 0.9);
        return {R, rng.uniform(0.15, 0.4 * R)};
    }
    case ShapeKind::composite:
        return {rng.uniform(0.35, 0.55), rng.uniform(0.3, 0.5)};
    }
    throw ConfigError("unknown shape kind");
}

// Farthest-point thinning of an area-uniform candidate pool: keeps the
// samples spread evenly so nearest-sample distances stay bounded.
std::vector<std::size_t> farthest_point_subset(const std::vector<SurfaceSample>& cand,
                                               std::int64_t n) {
    const std::size_t C = cand.size();
    std::vector<double> dist(C, std::numeric_limits<double>::infinity());
    std::vector<std::size_t> picked;
    picked.reserve(static_cast<std::size_t>(n));
    std::size_t next = 0;
    for (std::int64_t k = 0; k < n; ++k) {
        picked.push_back(next);
        const Eigen::Vector3d& p = cand[next].p;
        double best = -1.0;
        std::size_t arg = 0;
        for (std::size_t i = 0; i < C; ++i) {
            const double d = (cand[i].p - p).squaredNorm();
            if (d < dist[i]) dist[i] = d;
            if (dist[i] > best) {
                best = dist[i];
                arg = i;
            }
        }
        next = arg;
    }
    return picked;
}

std::vector<double> viewpoint_to_row(const Viewpoint& vp) {
    std::vector<double> row(12);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) row[static_cast<std::size_t>(3 * r + c)] = vp.R(r, c);
    row[9] = vp.t.x();
    row[10] = vp.t.y();
    row[11] = vp.t.z();
    return row;
}

Viewpoint viewpoint_from_row(const std::vector<double>& row, const std::string& label) {
    if (row.size() != 12) throw CorruptContainerError("viewpoint array must hold 12 values");
    Viewpoint vp;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) vp.R(r, c) = row[static_cast<std::size_t>(3 * r + c)];
    vp.t = Eigen::Vector3d(row[9], row[10], row[11]);
    vp.label = label;
    return vp;
}

constexpr char kDatasetMagic[4] = {'S', 'M', 'D', 'D'};
constexpr std::uint32_t kDatasetVersion = 1;

} // namespace

const char* shape_kind_name(ShapeKind kind) {
    switch (kind) {
    case ShapeKind::cube: return "cube";
    case ShapeKind::sphere: return "sphere";
    case ShapeKind::cylinder: return "cylinder";
    case ShapeKind::torus: return "torus";
    case ShapeKind::composite: return "composite";
    }
    return "unknown";
}

ShapeKind shape_kind_from_name(const std::string& name) {
    if (name == "cube") return ShapeKind::cube;
    if (name == "sphere") return ShapeKind::sphere;
    if (name == "cylinder") return ShapeKind::cylinder;
    if (name == "torus") return ShapeKind::torus;
    if (name == "composite") return ShapeKind::composite;
    throw ConfigError("unknown shape kind '" + name + "'");
}

GroundTruthShape generate_shape(ShapeKind kind, std::uint64_t seed, std::int64_t surface_count,
                                std::int64_t dense_count) {
    if (surface_count < 1000)
        throw ConfigError("generate_shape: surface_count must be >= 1000");
    if (dense_count < surface_count)
        throw ConfigError("generate_shape: dense_count must be >= surface_count");

    Rng rng(seed);
    GroundTruthShape shape;
    shape.kind = kind;
    shape.params = draw_params(kind, rng);
    const double scale = 1.0 / bounding_radius(kind, shape.params);

    const std::int64_t n_candidates = kThinningCandidateFactor * surface_count;
    std::vector<SurfaceSample> candidates = draw_samples(kind, shape.params, n_candidates, rng);
    const std::vector<std::size_t> keep = farthest_point_subset(candidates, surface_count);
    shape.surface_samples.points.reserve(keep.size());
    for (std::size_t i : keep) shape.surface_samples.points.push_back(candidates[i].p * scale);

    std::vector<SurfaceSample> dense = draw_samples(kind, shape.params, dense_count, rng);
    shape.render_samples.points.reserve(dense.size());
    shape.render_normals.reserve(dense.size());
    for (const SurfaceSample& s : dense) {
        shape.render_samples.points.push_back(s.p * scale);
        shape.render_normals.push_back(s.n);
    }
    return shape;
}

const std::vector<RenderPair>& DatasetEntry::supervision() const {
    ++supervision_reads;
    return supervision_pairs;
}

const std::vector<RenderPair>& DatasetEntry::fixed_views() const {
    ++fixed_reads;
    return fixed_pairs;
}

void DatasetEntry::reset_access_counters() const {
    supervision_reads = 0;
    fixed_reads = 0;
}

std::vector<double> render_input_rgb(const GroundTruthShape& shape, const Viewpoint& vp,
                                     const Intrinsics& intr, std::int64_t size,
                                     const std::array<double, 3>& base_color) {
    const DenseRender dr = render_dense_cloud_winners(shape.render_samples, vp, intr,
                                                      static_cast<int>(size));
    const Eigen::Vector3d light = Eigen::Vector3d(0.6, 1.0, 0.8).normalized();
    const std::int64_t plane = size * size;
    std::vector<double> rgb(static_cast<std::size_t>(3 * plane), 0.0);
    for (std::int64_t i = 0; i < plane; ++i) {
        const std::int64_t w = dr.winners[static_cast<std::size_t>(i)];
        if (w < 0) continue;
        const double lambert =
            std::max(0.0, shape.render_normals[static_cast<std::size_t>(w)].dot(light));
        const double intensity = 0.25 + 0.75 * lambert;
        for (int c = 0; c < 3; ++c)
            rgb[static_cast<std::size_t>(c * plane + i)] = base_color[static_cast<std::size_t>(c)] * intensity;
    }
    return rgb;
}

DatasetEntry build_entry(const GroundTruthShape& shape, const Intrinsics& output_intr,
                         const DatasetConfig& config, std::string model_id) {
    if (shape.render_samples.empty())
        throw ConfigError("build_entry: shape lacks dense render samples");
    DatasetEntry e;
    e.model_id = model_id.empty() ? shape_kind_name(shape.kind) : std::move(model_id);
    e.input_size = config.input_size;
    e.output_size = config.output_size;
    e.input_elevation_deg = config.input_elevation_deg;
    e.shape = shape;

    Rng rng(config.pose_seed);
    const std::array<double, 3> base_color{rng.uniform(0.35, 0.9), rng.uniform(0.35, 0.9),
                                           rng.uniform(0.35, 0.9)};

    const Intrinsics input_intr = output_intr.resized(
        static_cast<double>(config.input_size) / static_cast<double>(config.output_size));
    const std::vector<Viewpoint> ring = azimuth_ring_viewpoints(
        config.input_count, config.input_elevation_deg, config.camera_radius);
    for (const Viewpoint& vp : ring)
        e.input_renders.push_back(
            render_input_rgb(shape, vp, input_intr, config.input_size, base_color));

    for (int k = 0; k < config.supervision_count; ++k) {
        bool placed = false;
        for (int attempt = 0; attempt < kMaxPoseRetries; ++attempt) {
            const double az = rng.uniform(0.0, 360.0);
            const double el = rng.uniform(-30.0, 60.0);
            const double el_rad = el * std::numbers::pi / 180.0;
            const double az_rad = az * std::numbers::pi / 180.0;
            const Eigen::Vector3d center(
                config.camera_radius * std::cos(el_rad) * std::cos(az_rad),
                config.camera_radius * std::sin(el_rad),
                config.camera_radius * std::cos(el_rad) * std::sin(az_rad));
            Viewpoint vp = look_at(center, Eigen::Vector3d::Zero(), "sup" + std::to_string(k));
            RenderPair pair = render_ground_truth(shape, vp, output_intr,
                                                  static_cast<int>(config.output_size));
            double mask_sum = 0.0;
            for (double m : pair.mask) mask_sum += m;
            if (mask_sum > 0.0) {
                e.supervision_viewpoints.push_back(std::move(vp));
                e.supervision_pairs.push_back(std::move(pair));
                placed = true;
                break;
            }
        }
        if (!placed)
            throw ConfigError("build_entry: no nonempty supervision pose found after " +
                              std::to_string(kMaxPoseRetries) + " attempts");
    }

    e.fixed_viewpoints = cube_corner_viewpoints(config.camera_radius);
    for (const Viewpoint& vp : e.fixed_viewpoints)
        e.fixed_pairs.push_back(
            render_ground_truth(shape, vp, output_intr, static_cast<int>(config.output_size)));
    return e;
}

void write_dataset(const std::string& path, const std::vector<DatasetEntry>& entries) {
    // Serialize every entry block first so the index can carry offsets.
    std::vector<std::string> blocks;
    blocks.reserve(entries.size());
    for (const DatasetEntry& e : entries) {
        std::vector<NamedArray> arrays;
        arrays.push_back(NamedArray{"meta",
                                    {8},
                                    {static_cast<double>(e.input_size),
                                     static_cast<double>(e.output_size),
                                     static_cast<double>(e.input_renders.size()),
                                     static_cast<double>(e.supervision_pairs.size()),
                                     static_cast<double>(e.fixed_pairs.size()),
                                     static_cast<double>(static_cast<int>(e.shape.kind)),
                                     e.fixed_pairs.empty() ? kFarDepth : e.fixed_pairs[0].far_value,
                                     e.input_elevation_deg}});
        arrays.push_back(NamedArray{"shape.params",
                                    {static_cast<std::int64_t>(e.shape.params.size())},
                                    e.shape.params});
        {
            NamedArray surf{"shape.surface",
                            {static_cast<std::int64_t>(e.shape.surface_samples.size()), 3},
                            {}};
            surf.data.reserve(e.shape.surface_samples.size() * 3);
            for (const Eigen::Vector3d& p : e.shape.surface_samples.points) {
                surf.data.push_back(p.x());
                surf.data.push_back(p.y());
                surf.data.push_back(p.z());
            }
            arrays.push_back(std::move(surf));
        }
        for (std::size_t i = 0; i < e.input_renders.size(); ++i)
            arrays.push_back(NamedArray{"input." + std::to_string(i),
                                        {3, e.input_size, e.input_size},
                                        e.input_renders[i]});
        auto push_pairs = [&](const char* prefix, const std::vector<RenderPair>& pairs,
                              const std::vector<Viewpoint>& views) {
            for (std::size_t k = 0; k < pairs.size(); ++k) {
                const std::string p = std::string(prefix) + "." + std::to_string(k);
                arrays.push_back(
                    NamedArray{p + ".depth", {pairs[k].size, pairs[k].size}, pairs[k].depth});
                arrays.push_back(
                    NamedArray{p + ".mask", {pairs[k].size, pairs[k].size}, pairs[k].mask});
                arrays.push_back(NamedArray{p + ".view", {12}, viewpoint_to_row(views[k])});
            }
        };
        push_pairs("sup", e.supervision_pairs, e.supervision_viewpoints);
        push_pairs("fixed", e.fixed_pairs, e.fixed_viewpoints);

        std::ostringstream block(std::ios::binary);
        wire::put_arrays(block, arrays);
        blocks.push_back(std::move(block).str());
    }

    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os.write(kDatasetMagic, 4);
    wire::put_u32(os, kDatasetVersion);
    wire::put_u64(os, entries.size());
    std::uint64_t offset = 4 + 4 + 8;
    for (const DatasetEntry& e : entries) offset += 4 + e.model_id.size() + 8 + 8;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        wire::put_string(os, entries[i].model_id);
        wire::put_u64(os, offset);
        wire::put_u64(os, blocks[i].size());
        offset += blocks[i].size();
    }
    for (const std::string& b : blocks) os.write(b.data(), static_cast<std::streamsize>(b.size()));
    os.flush();
    if (!os) throw IoError("failed writing '" + path + "'");
}

std::vector<DatasetEntry> read_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "' for reading");
    char magic[4];
    if (!is.read(magic, 4)) throw CorruptContainerError("'" + path + "': truncated header");
    if (std::memcmp(magic, kDatasetMagic, 4) != 0)
        throw CorruptContainerError("'" + path + "': bad magic, not a dataset");
    const std::uint32_t version = wire::get_u32(is);
    if (version != kDatasetVersion)
        throw VersionError("'" + path + "': file has dataset version " + std::to_string(version) +
                           ", this build reads version " + std::to_string(kDatasetVersion));
    const std::uint64_t count = wire::get_u64(is);
    if (count > (1u << 20)) throw CorruptContainerError("'" + path + "': entry count out of range");

    struct IndexRow {
        std::string id;
        std::uint64_t offset, size;
    };
    std::vector<IndexRow> index;
    index.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        IndexRow row;
        row.id = wire::get_string(is);
        row.offset = wire::get_u64(is);
        row.size = wire::get_u64(is);
        index.push_back(std::move(row));
    }

    std::vector<DatasetEntry> entries;
    entries.reserve(count);
    for (const IndexRow& row : index) {
        is.seekg(static_cast<std::streamoff>(row.offset));
        if (!is) throw CorruptContainerError("'" + path + "': bad entry offset for '" + row.id + "'");
        std::vector<NamedArray> arrays = wire::get_arrays(is);
        std::map<std::string, NamedArray*> by_name;
        for (NamedArray& a : arrays) by_name[a.name] = &a;
        auto want = [&](const std::string& name) -> NamedArray& {
            auto it = by_name.find(name);
            if (it == by_name.end())
                throw CorruptContainerError("'" + path + "': entry '" + row.id +
                                            "' missing array '" + name + "'");
            return *it->second;
        };

        const NamedArray& meta = want("meta");
        if (meta.data.size() != 8)
            throw CorruptContainerError("'" + path + "': entry '" + row.id + "' has bad meta");
        DatasetEntry e;
        e.model_id = row.id;
        e.input_size = static_cast<std::int64_t>(meta.data[0]);
        e.output_size = static_cast<std::int64_t>(meta.data[1]);
        const std::int64_t n_input = static_cast<std::int64_t>(meta.data[2]);
        const std::int64_t n_sup = static_cast<std::int64_t>(meta.data[3]);
        const std::int64_t n_fixed = static_cast<std::int64_t>(meta.data[4]);
        e.shape.kind = static_cast<ShapeKind>(static_cast<int>(meta.data[5]));
        const double far_value = meta.data[6];
        e.input_elevation_deg = meta.data[7];

        e.shape.params = want("shape.params").data;
        {
            const NamedArray& surf = want("shape.surface");
            if (surf.shape.size() != 2 || surf.shape[1] != 3)
                throw CorruptContainerError("'" + path + "': entry '" + row.id +
                                            "' has malformed surface samples");
            for (std::int64_t i = 0; i < surf.shape[0]; ++i)
                e.shape.surface_samples.points.emplace_back(
                    surf.data[i * 3 + 0], surf.data[i * 3 + 1], surf.data[i * 3 + 2]);
        }
        for (std::int64_t i = 0; i < n_input; ++i)
            e.input_renders.push_back(std::move(want("input." + std::to_string(i)).data));

        auto read_pairs = [&](const char* prefix, std::int64_t n,
                              std::vector<RenderPair>& pairs, std::vector<Viewpoint>& views) {
            for (std::int64_t k = 0; k < n; ++k) {
                const std::string p = std::string(prefix) + "." + std::to_string(k);
                NamedArray& d = want(p + ".depth");
                NamedArray& m = want(p + ".mask");
                if (d.shape.size() != 2 || d.shape[0] != d.shape[1] || m.shape != d.shape)
                    throw CorruptContainerError("'" + path + "': entry '" + row.id +
                                                "' has malformed render pair " + p);
                RenderPair rp;
                rp.size = d.shape[0];
                rp.depth = std::move(d.data);
                rp.mask = std::move(m.data);
                rp.far_value = far_value;
                pairs.push_back(std::move(rp));
                views.push_back(viewpoint_from_row(want(p + ".view").data, p));
            }
        };
        read_pairs("sup", n_sup, e.supervision_pairs, e.supervision_viewpoints);
        read_pairs("fixed", n_fixed, e.fixed_pairs, e.fixed_viewpoints);
        entries.push_back(std::move(e));
    }
    return entries;
}

} // namespace semd
