#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "fgpfe/encoders.hpp"
#include "fgpfe/fusion.hpp"
#include "fgpfe/gridding.hpp"
#include "fgpfe/ops.hpp"
#include "fgpfe/pcio.hpp"

namespace fgpfe {

struct TrainingConfig {
    double lr = 0.01;
    std::size_t steps = 500;
    std::uint64_t seed = 1;
};

struct PathConfig {
    std::string scene;
    std::string params;
    std::string out;
};

/// Full run configuration. Defaults: 108 m x 108 m range at 0.075 m pillars,
/// z in [-5, 3) m, lambda_gl = 1.
struct RunConfig {
    GridSpec grid;
    StvSpec stv;
    EncoderConfig enc;
    ApaConfig apa;
    nd::FocalParams focal;
    double lambda_gl = 1.0;
    TrainingConfig training;
    SceneParams scene;
    PathConfig paths;
    int threads = 1;
};

// Throws ConfigError naming the first offending key.
void validate(const RunConfig& cfg);

// JSON text with every key present.
std::string to_text(const RunConfig& cfg);

// Keys absent from the text keep their defaults; unknown keys and wrongly
// typed values are rejected with the dotted key path.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::string& path);

}  // namespace fgpfe
