#include "iism/config.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "iism/image_io.hpp"

namespace iism {

using nlohmann::json;

namespace {

DataSection data_from_json(const json& j) {
    DataSection d;
    for (const auto& [key, value] : j.items()) {
        if (key == "image_size") d.image_size = value.get<std::size_t>();
        else if (key == "lesion_weight") d.weights.lesion_weight = value.get<double>();
        else if (key == "base_weight") d.weights.base_weight = value.get<double>();
        else if (key == "split") {
            auto v = value.get<std::vector<double>>();
            if (v.size() != 3)
                throw_error(ErrorKind::validation, "split must list 3 ratios");
            std::copy(v.begin(), v.end(), d.split.begin());
        } else
            throw_error(ErrorKind::validation, fmt::format("unknown data config key '{}'", key));
    }
    return d;
}

EvalSection eval_from_json(const json& j) {
    EvalSection e;
    for (const auto& [key, value] : j.items()) {
        if (key == "n_samples") e.n_samples = value.get<std::size_t>();
        else
            throw_error(ErrorKind::validation, fmt::format("unknown eval config key '{}'", key));
    }
    return e;
}

} // namespace

void RunConfig::validate() const {
    data.weights.validate();
    vae.validate();
    diffusion.validate();
    if (vae.height != data.image_size || vae.width != data.image_size)
        throw_error(ErrorKind::validation,
                    fmt::format("vae input {}x{} does not match data.image_size {}", vae.height,
                                vae.width, data.image_size));
    if (vae.in_channels != default_catalog().size())
        throw_error(ErrorKind::validation,
                    fmt::format("vae.in_channels {} does not match the {}-class catalog",
                                vae.in_channels, default_catalog().size()));
    if (eval.n_samples == 0)
        throw_error(ErrorKind::validation, "eval.n_samples must be >= 1");
}

RunConfig RunConfig::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw_error(ErrorKind::validation, fmt::format("bad run config JSON: {}", e.what()));
    }
    RunConfig cfg;
    bool have_seed = false;
    for (const auto& [key, value] : j.items()) {
        if (key == "seed") {
            cfg.seed = value.get<std::uint64_t>();
            have_seed = true;
        } else if (key == "data") cfg.data = data_from_json(value);
        else if (key == "vae") cfg.vae = vae_config_from_json(value);
        else if (key == "diffusion") cfg.diffusion = diffusion_config_from_json(value);
        else if (key == "eval") cfg.eval = eval_from_json(value);
        else
            throw_error(ErrorKind::validation, fmt::format("unknown config section '{}'", key));
    }
    if (!have_seed)
        throw_error(ErrorKind::validation, "run config must set a seed");
    // Section seeds default to the run seed; trainers fork per-purpose streams.
    if (!j.contains("vae") || !j.at("vae").contains("seed")) cfg.vae.seed = cfg.seed;
    if (!j.contains("diffusion") || !j.at("diffusion").contains("seed"))
        cfg.diffusion.seed = cfg.seed;
    // The VAE input size follows data.image_size unless set explicitly.
    if (!j.contains("vae") || !j.at("vae").contains("height")) cfg.vae.height = cfg.data.image_size;
    if (!j.contains("vae") || !j.at("vae").contains("width")) cfg.vae.width = cfg.data.image_size;
    cfg.validate();
    return cfg;
}

RunConfig RunConfig::from_json_file(const std::filesystem::path& path) {
    auto bytes = read_file_bytes(path);
    return from_json_text(std::string(bytes.begin(), bytes.end()));
}

} // namespace iism
