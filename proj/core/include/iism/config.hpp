#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include "iism/dataset.hpp"
#include "iism/latentdiff.hpp"
#include "iism/maskvae.hpp"

namespace iism {

struct DataSection {
    std::size_t image_size = 64;
    SamplerWeights weights;                    // lesion-aware weighting (VAE training)
    std::array<double, 3> split{0.8, 0.1, 0.1};
};

struct EvalSection {
    std::size_t n_samples = 400;
};

// Whole-run configuration: one JSON document with {data, vae, diffusion, eval}
// sections. Every field has a default; the seed is mandatory. Unknown keys are
// rejected and cross-section consistency is checked before any work starts.
struct RunConfig {
    std::uint64_t seed = 0;
    DataSection data;
    VaeConfig vae;
    DiffusionConfig diffusion;
    EvalSection eval;

    void validate() const;

    static RunConfig from_json_text(const std::string& text);
    static RunConfig from_json_file(const std::filesystem::path& path);
};

} // namespace iism
