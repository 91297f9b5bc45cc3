#include "fgpfe/pcio.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "fgpfe/binio.hpp"
#include "fgpfe/error.hpp"
#include "fgpfe/random.hpp"

namespace fgpfe {

namespace {

constexpr std::size_t kRecordBytes = 5 * sizeof(float);

bool parse_float(const std::string& field, float& out) {
    const char* begin = field.c_str();
    char* end = nullptr;
    out = std::strtof(begin, &end);
    if (end == begin) return false;
    while (*end == ' ' || *end == '\t' || *end == '\r') ++end;
    return *end == '\0';
}

}  // namespace

bool is_valid(const Point& p) {
    return std::isfinite(p.x) && std::isfinite(p.y) && std::isfinite(p.z) && std::isfinite(p.r) &&
           std::isfinite(p.dt) && p.r >= 0.0f && p.dt >= 0.0f && p.dt < kSweepWindow;
}

double normalize_yaw(double yaw) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    double y = std::fmod(yaw + std::numbers::pi, two_pi);
    if (y < 0) y += two_pi;
    y -= std::numbers::pi;
    return y >= std::numbers::pi ? -std::numbers::pi : y;
}

void validate_box(const Box3D& b) {
    for (double v : {b.cx, b.cy, b.cz, b.l, b.w, b.h, b.yaw})
        if (!std::isfinite(v)) throw Error("box has a non-finite field");
    if (!(b.l > 0 && b.w > 0 && b.h > 0)) throw Error("box size must be strictly positive");
}

PointFormat format_for_path(const std::string& path) {
    return std::filesystem::path(path).extension() == ".csv" ? PointFormat::csv : PointFormat::bin5;
}

LoadResult load_points(const std::string& path, PointFormat format) {
    LoadResult result;
    auto keep = [&](const Point& p) {
        if (is_valid(p)) {
            result.scene.points.push_back(p);
        } else {
            ++result.dropped;
        }
    };

    if (format == PointFormat::bin5) {
        std::ifstream in(path, std::ios::binary | std::ios::ate);
        if (!in) throw IoError("cannot read " + path);
        const auto bytes = static_cast<std::size_t>(in.tellg());
        if (bytes % kRecordBytes != 0) {
            throw FormatError(path + ": truncated record (" + std::to_string(bytes) + " bytes is not a multiple of " +
                              std::to_string(kRecordBytes) + ")");
        }
        in.seekg(0);
        const std::size_t n = bytes / kRecordBytes;
        result.scene.points.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            Point p;
            p.x = binio::get<float>(in, "record");
            p.y = binio::get<float>(in, "record");
            p.z = binio::get<float>(in, "record");
            p.r = binio::get<float>(in, "record");
            p.dt = binio::get<float>(in, "record");
            keep(p);
        }
        return result;
    }

    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path);
    std::string line;
    std::size_t line_no = 0;
    bool header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (!header) {
            if (line != "x,y,z,r,dt") throw FormatError(path + ":" + std::to_string(line_no) + ": expected header x,y,z,r,dt");
            header = true;
            continue;
        }
        std::stringstream ss(line);
        std::string field;
        float v[5];
        int k = 0;
        while (std::getline(ss, field, ',')) {
            if (k >= 5 || !parse_float(field, v[k])) {
                throw FormatError(path + ":" + std::to_string(line_no) + ": cannot parse record");
            }
            ++k;
        }
        if (k != 5) throw FormatError(path + ":" + std::to_string(line_no) + ": expected 5 fields, got " + std::to_string(k));
        keep(Point{v[0], v[1], v[2], v[3], v[4]});
    }
    if (!header && line_no > 0) throw FormatError(path + ": missing header");
    return result;
}

void save_points(const Scene& scene, const std::string& path, PointFormat format) {
    if (format == PointFormat::bin5) {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + path);
        for (const auto& p : scene.points) {
            for (float v : {p.x, p.y, p.z, p.r, p.dt}) binio::put<float>(out, v);
        }
        if (!out) throw IoError("failed writing " + path);
        return;
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << "x,y,z,r,dt\n";
    char buf[160];
    for (const auto& p : scene.points) {
        // %.9g round-trips every float32.
        std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g,%.9g,%.9g\n", p.x, p.y, p.z, p.r, p.dt);
        out << buf;
    }
    if (!out) throw IoError("failed writing " + path);
}

Scene gen_scene(const SceneParams& params, const SceneRange& range) {
    if (params.sweeps < 1) throw Error("gen_scene: sweeps must be >= 1");
    Rng rng(params.seed);
    Scene scene;
    scene.meta = {params.seed, params.n_boxes, params.points_per_box, params.background_points, params.sweeps};

    const double spacing = kSweepWindow / static_cast<double>(params.sweeps);
    auto sample_dt = [&] {
        const auto k = static_cast<double>(rng.below(params.sweeps));
        const double jitter = params.sweeps > 1 ? rng.uniform(0.0, 0.5 * spacing) : 0.0;
        return static_cast<float>(k * spacing + jitter);
    };
    const double ground = range.z_min + 0.4 * (range.z_max - range.z_min);

    for (std::size_t b = 0; b < params.n_boxes; ++b) {
        Box3D box;
        box.l = rng.uniform(3.5, 5.0);
        box.w = rng.uniform(1.6, 2.1);
        box.h = rng.uniform(1.4, 1.9);
        box.yaw = normalize_yaw(rng.uniform(-std::numbers::pi, std::numbers::pi));
        const double reach = 0.5 * std::hypot(box.l, box.w);
        box.cx = rng.uniform(range.x_min + reach, range.x_max - reach);
        box.cy = rng.uniform(range.y_min + reach, range.y_max - reach);
        box.cz = std::min(ground + 0.5 * box.h, range.z_max - 0.5 * box.h);
        scene.boxes.push_back(box);
    }

    // Foreground points keep a 1 mm margin from the faces so float32 rounding
    // cannot carry them outside their box.
    constexpr double margin = 1e-3;
    for (const auto& box : scene.boxes) {
        const double c = std::cos(box.yaw), s = std::sin(box.yaw);
        for (std::size_t i = 0; i < params.points_per_box; ++i) {
            const double u = rng.uniform(-0.5 * box.l + margin, 0.5 * box.l - margin);
            const double v = rng.uniform(-0.5 * box.w + margin, 0.5 * box.w - margin);
            const double dz = rng.uniform(-0.5 * box.h + margin, 0.5 * box.h - margin);
            Point p;
            p.x = static_cast<float>(box.cx + c * u - s * v);
            p.y = static_cast<float>(box.cy + s * u + c * v);
            p.z = static_cast<float>(box.cz + dz);
            p.r = static_cast<float>(rng.unit());
            p.dt = sample_dt();
            scene.points.push_back(p);
        }
    }
    for (std::size_t i = 0; i < params.background_points; ++i) {
        Point p;
        p.x = static_cast<float>(rng.uniform(range.x_min, range.x_max));
        p.y = static_cast<float>(rng.uniform(range.y_min, range.y_max));
        p.z = static_cast<float>(rng.uniform(range.z_min, range.z_max));
        p.r = static_cast<float>(rng.unit());
        p.dt = sample_dt();
        scene.points.push_back(p);
    }
    return scene;
}

std::string meta_path_for(const std::string& points_path) { return points_path + ".json"; }

void save_scene_meta(const Scene& scene, const std::string& path) {
    nlohmann::json j;
    j["seed"] = scene.meta.seed;
    j["n_boxes"] = scene.meta.n_boxes;
    j["points_per_box"] = scene.meta.points_per_box;
    j["background_points"] = scene.meta.background_points;
    j["sweeps"] = scene.meta.sweeps;
    j["n_points"] = scene.points.size();
    auto& boxes = j["boxes"] = nlohmann::json::array();
    for (const auto& b : scene.boxes) {
        boxes.push_back({{"center", {b.cx, b.cy, b.cz}},
                         {"size", {b.l, b.w, b.h}},
                         {"yaw", b.yaw},
                         {"class_id", b.class_id}});
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << j.dump(2) << '\n';
}

void load_scene_meta(const std::string& path, Scene& scene) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path);
    try {
        const auto j = nlohmann::json::parse(in);
        scene.meta.seed = j.value("seed", std::uint64_t{0});
        scene.meta.n_boxes = j.value("n_boxes", std::size_t{0});
        scene.meta.points_per_box = j.value("points_per_box", std::size_t{0});
        scene.meta.background_points = j.value("background_points", std::size_t{0});
        scene.meta.sweeps = j.value("sweeps", std::size_t{1});
        scene.boxes.clear();
        for (const auto& b : j.at("boxes")) {
            Box3D box;
            const auto& c = b.at("center");
            const auto& s = b.at("size");
            box.cx = c.at(0);
            box.cy = c.at(1);
            box.cz = c.at(2);
            box.l = s.at(0);
            box.w = s.at(1);
            box.h = s.at(2);
            box.yaw = normalize_yaw(b.at("yaw").get<double>());
            box.class_id = b.value("class_id", 0);
            validate_box(box);
            scene.boxes.push_back(box);
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": " + e.what());
    }
}

LoadResult load_scene(const std::string& path) {
    LoadResult result = load_points(path, format_for_path(path));
    const auto meta = meta_path_for(path);
    if (std::filesystem::exists(meta)) load_scene_meta(meta, result.scene);
    return result;
}

void save_scene(const Scene& scene, const std::string& path) {
    save_points(scene, path, format_for_path(path));
    save_scene_meta(scene, meta_path_for(path));
}

}  // namespace fgpfe
