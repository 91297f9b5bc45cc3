#include "fgpfe/optim.hpp"

#include <cmath>
#include <fstream>
#include <map>

#include "fgpfe/binio.hpp"
#include "fgpfe/error.hpp"
#include "fgpfe/random.hpp"

namespace fgpfe::nd {

namespace {
constexpr char kMagic[4] = {'F', 'G', 'P', 'C'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void sgd_step(std::span<Parameter> params, double lr) {
    for (auto& p : params) {
        auto value = p.value().data();
        auto& grad = p.grad();
        for (std::size_t i = 0; i < value.size(); ++i) value[i] -= lr * grad[i];
        grad.fill(0.0);
    }
}

void zero_grads(std::span<Parameter> params) {
    for (auto& p : params) p.zero_grad();
}

Tensor uniform_init(Shape shape, std::size_t fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    for (auto& v : t.data()) v = rng.uniform(-bound, bound);
    return t;
}

void save_checkpoint(const std::string& path, std::span<const Parameter> params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    out.write(kMagic, 4);
    binio::put<std::uint32_t>(out, kVersion);
    binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name().size()));
        out.write(p.name().data(), static_cast<std::streamsize>(p.name().size()));
        binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(p.shape().size()));
        for (auto d : p.shape()) binio::put<std::uint64_t>(out, d);
        for (double v : p.value().data()) binio::put<double>(out, v);
    }
    if (!out) throw IoError("failed writing checkpoint: " + path);
}

std::vector<NamedTensor> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw FormatError("not a checkpoint file: " + path);
    if (binio::get<std::uint32_t>(in, "checkpoint version") != kVersion) throw FormatError("unsupported checkpoint version");
    const auto count = binio::get<std::uint32_t>(in, "checkpoint count");
    std::vector<NamedTensor> entries;
    for (std::uint32_t e = 0; e < count; ++e) {
        const auto len = binio::get<std::uint32_t>(in, "name length");
        std::string name(len, '\0');
        if (!in.read(name.data(), len)) throw FormatError("truncated checkpoint name");
        const auto rank = binio::get<std::uint32_t>(in, "rank");
        Shape shape(rank);
        for (auto& d : shape) d = binio::get<std::uint64_t>(in, "extent");
        Tensor t(shape);
        for (auto& v : t.data()) v = binio::get<double>(in, "payload of " + name);
        entries.push_back({std::move(name), std::move(t)});
    }
    return entries;
}

void assign_checkpoint(std::span<Parameter> params, const std::vector<NamedTensor>& entries) {
    std::map<std::string, const Tensor*> by_name;
    for (const auto& e : entries) by_name[e.name] = &e.value;
    for (auto& p : params) {
        auto it = by_name.find(p.name());
        if (it == by_name.end()) throw FormatError("checkpoint lacks parameter " + p.name());
        if (it->second->shape() != p.shape()) {
            throw FormatError("checkpoint shape " + shape_str(it->second->shape()) + " for " + p.name() + ", expected " +
                              shape_str(p.shape()));
        }
        p.value() = *it->second;
    }
}

}  // namespace fgpfe::nd
