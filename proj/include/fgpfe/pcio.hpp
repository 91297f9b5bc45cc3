#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace fgpfe {

/// One LiDAR return. Stored as float32 to match the on-disk record.
struct Point {
    float x = 0, y = 0, z = 0;
    float r = 0;   // reflectance, >= 0
    float dt = 0;  // time lag to the keyframe, seconds in [0, 0.5)

    friend bool operator==(const Point&, const Point&) = default;
};

constexpr double kSweepWindow = 0.5;

// Finite fields, r >= 0 and dt in [0, 0.5).
bool is_valid(const Point& p);

struct Box3D {
    double cx = 0, cy = 0, cz = 0;
    double l = 1, w = 1, h = 1;
    double yaw = 0;  // radians in [-pi, pi)
    int class_id = 0;
};

double normalize_yaw(double yaw);

// Throws fgpfe::Error when l, w or h is not strictly positive or a field is non-finite.
void validate_box(const Box3D& box);

struct SceneMeta {
    std::uint64_t seed = 0;
    std::size_t n_boxes = 0;
    std::size_t points_per_box = 0;
    std::size_t background_points = 0;
    std::size_t sweeps = 1;
};

struct Scene {
    std::vector<Point> points;
    std::vector<Box3D> boxes;
    SceneMeta meta;
};

enum class PointFormat { bin5, csv };

// "csv" for *.csv, bin5 otherwise.
PointFormat format_for_path(const std::string& path);

struct LoadResult {
    Scene scene;
    std::size_t dropped = 0;  // records that failed is_valid
};

// bin5: packed little-endian float32 records (x, y, z, r, dt).
// csv: header line "x,y,z,r,dt", one record per line.
LoadResult load_points(const std::string& path, PointFormat format);
void save_points(const Scene& scene, const std::string& path, PointFormat format);

// Axis-aligned extent used for synthetic placement.
struct SceneRange {
    double x_min = -54.0, x_max = 54.0;
    double y_min = -54.0, y_max = 54.0;
    double z_min = -5.0, z_max = 3.0;
};

struct SceneParams {
    std::uint64_t seed = 1;
    std::size_t n_boxes = 5;
    std::size_t points_per_box = 200;
    std::size_t background_points = 2000;
    std::size_t sweeps = 3;
};

// Deterministic synthetic scene: boxes fully inside the range with random
// yaw, foreground points uniform inside each box (box i owns points
// [i * points_per_box, (i + 1) * points_per_box)), then background points
// uniform over the range. A point from sweep k gets dt = k * 0.5 / sweeps plus
// jitter below half the sweep spacing; a single sweep has no jitter.
Scene gen_scene(const SceneParams& params, const SceneRange& range = {});

// JSON sidecar holding generator parameters and the box list.
std::string meta_path_for(const std::string& points_path);
void save_scene_meta(const Scene& scene, const std::string& path);
void load_scene_meta(const std::string& path, Scene& scene);

// Points plus the sidecar when one exists next to the file.
LoadResult load_scene(const std::string& path);
void save_scene(const Scene& scene, const std::string& path);

}  // namespace fgpfe
