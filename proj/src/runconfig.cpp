#include "fgpfe/runconfig.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "fgpfe/error.hpp"

namespace fgpfe {

namespace {

using nlohmann::json;

class Section {
public:
    Section(const json& root, std::string name, std::set<std::string> known)
        : name_(std::move(name)), node_(nullptr) {
        if (!root.contains(name_)) return;
        node_ = &root.at(name_);
        if (!node_->is_object()) throw ConfigError(name_, "expected an object");
        for (const auto& [k, v] : node_->items()) {
            if (!known.count(k)) throw ConfigError(name_ + "." + k, "unknown key");
        }
    }

    template <class T>
    void read(const std::string& key, T& out) const {
        if (!node_ || !node_->contains(key)) return;
        const auto& v = node_->at(key);
        const std::string path = name_ + "." + key;
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError(path, "expected a boolean");
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) throw ConfigError(path, "expected an integer");
            if constexpr (std::is_unsigned_v<T>) {
                if (v.get<std::int64_t>() < 0 && !v.is_number_unsigned()) throw ConfigError(path, "must be >= 0");
            }
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw ConfigError(path, "expected a number");
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw ConfigError(path, "expected a string");
        }
        out = v.get<T>();
    }

    void read_pair(const std::string& key, std::array<double, 2>& out) const {
        if (!node_ || !node_->contains(key)) return;
        const auto& v = node_->at(key);
        if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
            throw ConfigError(name_ + "." + key, "expected [number, number]");
        }
        out = {v[0].get<double>(), v[1].get<double>()};
    }

private:
    std::string name_;
    const json* node_;
};

}  // namespace

void validate(const RunConfig& cfg) {
    validate(cfg.grid);
    validate(cfg.stv);
    validate(cfg.enc);
    validate(cfg.apa, cfg.enc.c_p);
    if (!(cfg.focal.alpha >= 0.0 && cfg.focal.alpha <= 1.0)) throw ConfigError("model.alpha", "must be in [0, 1]");
    if (!(cfg.focal.gamma >= 0.0)) throw ConfigError("model.gamma", "must be >= 0");
    if (!(cfg.lambda_gl >= 0.0)) throw ConfigError("model.lambda_gl", "must be >= 0");
    if (!(cfg.training.lr >= 0.0)) throw ConfigError("training.lr", "must be >= 0");
    if (cfg.scene.sweeps < 1) throw ConfigError("scene.sweeps", "must be >= 1");
    if (cfg.threads < 1) throw ConfigError("threads", "must be >= 1");
}

std::string to_text(const RunConfig& c) {
    json j;
    j["grid"] = {{"x_range", {c.grid.x_min, c.grid.x_max}},
                 {"y_range", {c.grid.y_min, c.grid.y_max}},
                 {"z_range", {c.grid.z_min, c.grid.z_max}},
                 {"cell", {c.grid.dx, c.grid.dy}}};
    j["stv"] = {{"h_p", c.stv.h_p}, {"t_p", c.stv.t_p}};
    j["model"] = {{"c_p", c.enc.c_p},         {"c_f", c.apa.c_f},          {"r", c.enc.reduction},
                  {"r_a", c.apa.reduction},   {"conv_k", c.enc.conv_k},    {"psi_relu", c.enc.psi_relu},
                  {"alpha", c.focal.alpha},   {"gamma", c.focal.gamma},    {"lambda_gl", c.lambda_gl}};
    j["training"] = {{"lr", c.training.lr}, {"steps", c.training.steps}, {"seed", c.training.seed}};
    j["scene"] = {{"seed", c.scene.seed},
                  {"n_boxes", c.scene.n_boxes},
                  {"points_per_box", c.scene.points_per_box},
                  {"background_points", c.scene.background_points},
                  {"sweeps", c.scene.sweeps}};
    j["paths"] = {{"scene", c.paths.scene}, {"params", c.paths.params}, {"out", c.paths.out}};
    j["threads"] = c.threads;
    return j.dump(2) + "\n";
}

RunConfig parse_config(std::string_view text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("<config>", e.what());
    }
    if (!root.is_object()) throw ConfigError("<config>", "expected a JSON object");
    static const std::set<std::string> top = {"grid", "stv", "model", "training", "scene", "paths", "threads"};
    for (const auto& [k, v] : root.items())
        if (!top.count(k)) throw ConfigError(k, "unknown key");

    RunConfig c;
    {
        const Section s(root, "grid", {"x_range", "y_range", "z_range", "cell"});
        std::array<double, 2> x{c.grid.x_min, c.grid.x_max}, y{c.grid.y_min, c.grid.y_max},
            z{c.grid.z_min, c.grid.z_max}, cell{c.grid.dx, c.grid.dy};
        s.read_pair("x_range", x);
        s.read_pair("y_range", y);
        s.read_pair("z_range", z);
        s.read_pair("cell", cell);
        c.grid = GridSpec::from_ranges(x, y, z, cell);
    }
    {
        const Section s(root, "stv", {"h_p", "t_p"});
        s.read("h_p", c.stv.h_p);
        s.read("t_p", c.stv.t_p);
    }
    {
        const Section s(root, "model", {"c_p", "c_f", "r", "r_a", "conv_k", "psi_relu", "alpha", "gamma", "lambda_gl"});
        const bool c_f_given = root.contains("model") && root["model"].contains("c_f");
        s.read("c_p", c.enc.c_p);
        c.apa.c_f = c_f_given ? c.apa.c_f : std::max<std::size_t>(1, c.enc.c_p / 2);
        s.read("c_f", c.apa.c_f);
        s.read("r", c.enc.reduction);
        s.read("r_a", c.apa.reduction);
        s.read("conv_k", c.enc.conv_k);
        s.read("psi_relu", c.enc.psi_relu);
        s.read("alpha", c.focal.alpha);
        s.read("gamma", c.focal.gamma);
        s.read("lambda_gl", c.lambda_gl);
    }
    {
        const Section s(root, "training", {"lr", "steps", "seed"});
        s.read("lr", c.training.lr);
        s.read("steps", c.training.steps);
        s.read("seed", c.training.seed);
    }
    {
        const Section s(root, "scene", {"seed", "n_boxes", "points_per_box", "background_points", "sweeps"});
        s.read("seed", c.scene.seed);
        s.read("n_boxes", c.scene.n_boxes);
        s.read("points_per_box", c.scene.points_per_box);
        s.read("background_points", c.scene.background_points);
        s.read("sweeps", c.scene.sweeps);
    }
    {
        const Section s(root, "paths", {"scene", "params", "out"});
        s.read("scene", c.paths.scene);
        s.read("params", c.paths.params);
        s.read("out", c.paths.out);
    }
    if (root.contains("threads")) {
        if (!root["threads"].is_number_integer()) throw ConfigError("threads", "expected an integer");
        c.threads = root["threads"].get<int>();
    }
    validate(c);
    return c;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

}  // namespace fgpfe
