#pragma once

#include "semd/camera.hpp"
#include "semd/pseudorender.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace semd {

enum class ShapeKind { cube, sphere, cylinder, torus, composite };

const char* shape_kind_name(ShapeKind kind);
ShapeKind shape_kind_from_name(const std::string& name);

// A parametric primitive normalized to fit the unit sphere.
// surface_samples is the sparse metric ground truth (blue-noise thinned,
// area-uniform); render_samples is the dense set that feeds the z-buffer
// renders, with matching outward normals for shading. Dense data is not
// persisted: entries loaded from disk carry only the sparse samples.
struct GroundTruthShape {
    ShapeKind kind = ShapeKind::cube;
    std::vector<double> params;
    PointCloud surface_samples;
    PointCloud render_samples;
    std::vector<Eigen::Vector3d> render_normals;
};

GroundTruthShape generate_shape(ShapeKind kind, std::uint64_t seed,
                                std::int64_t surface_count = 2000,
                                std::int64_t dense_count = 300000);

struct DatasetConfig {
    std::int64_t input_size = 64;
    std::int64_t output_size = 128;
    int input_count = 24;          // azimuth ring renders feeding the encoder
    int supervision_count = 100;   // randomized depth/mask pairs
    double input_elevation_deg = 20.0;
    double camera_radius = kDefaultCameraRadius;
    std::uint64_t pose_seed = 0;   // randomizes the supervision poses
};

struct DatasetEntry {
    std::string model_id;
    std::int64_t input_size = 0;
    std::int64_t output_size = 0;
    double input_elevation_deg = 20.0;
    GroundTruthShape shape;
    std::vector<std::vector<double>> input_renders; // [3,S,S] each, row-major CHW
    std::vector<Viewpoint> supervision_viewpoints;
    std::vector<Viewpoint> fixed_viewpoints; // the 8 cube corners

    // Supervision/fixed render access goes through counting accessors so
    // tests can verify which training stage touched which pool.
    const std::vector<RenderPair>& supervision() const;
    const std::vector<RenderPair>& fixed_views() const;
    void reset_access_counters() const;

    std::vector<RenderPair> supervision_pairs;
    std::vector<RenderPair> fixed_pairs;
    mutable std::int64_t supervision_reads = 0;
    mutable std::int64_t fixed_reads = 0;
};

// Renders the full entry: input_count shaded RGB views on the azimuth ring,
// supervision_count randomized-pose depth/mask pairs (poses retried if a
// mask comes out empty), and the 8 fixed cube-corner pairs.
DatasetEntry build_entry(const GroundTruthShape& shape, const Intrinsics& output_intr,
                         const DatasetConfig& config, std::string model_id = {});

// Dataset container: "SMDD" magic, u32 version, u64 entry count, index
// table (id, absolute offset, byte size), then per-entry array blocks in
// the checkpoint wire encoding.
void write_dataset(const std::string& path, const std::vector<DatasetEntry>& entries);
std::vector<DatasetEntry> read_dataset(const std::string& path);

// Shaded render used for the encoder inputs, exposed for single images.
std::vector<double> render_input_rgb(const GroundTruthShape& shape, const Viewpoint& vp,
                                     const Intrinsics& intr, std::int64_t size,
                                     const std::array<double, 3>& base_color);

} // namespace semd
