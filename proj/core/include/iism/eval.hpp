#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iism/label.hpp"
#include "iism/latentdiff.hpp"

namespace iism {

// Pixel-wise class fractions over a corpus; sums to 1.
struct ClassDistribution {
    std::vector<double> fractions;
};

// fraction_c = (pixels labeled c) / (total pixels). The corpus must be
// non-empty and share one resolution.
ClassDistribution class_distribution(std::span<const LabelMap> masks, std::size_t class_count);

struct DistributionReport {
    std::vector<double> real;
    std::vector<double> synth;
    std::vector<double> delta; // synth - real, per class
    double total_variation = 0.0;

    nlohmann::json to_json(const ClassCatalog& catalog) const;
};

// Per-class deltas plus TV = 0.5 * sum |real_c - synth_c|.
DistributionReport distribution_report(const ClassDistribution& real,
                                       const ClassDistribution& synth);

// Deterministic geometric embedding standing in for a perceptual feature
// network: per class, [area fraction, centroid row, centroid col, row
// variance, col variance], coordinates normalized by the image extent. Absent
// classes report the grid-center centroid and zero variance. F = 5C.
std::vector<double> extract_features(const LabelMap& m, std::size_t class_count);

inline std::size_t feature_dim(std::size_t class_count) { return 5 * class_count; }

// Gaussian summary of a feature cloud: mean, unbiased covariance, count.
struct FeatureStats {
    Eigen::VectorXd mean;
    Eigen::MatrixXd covariance;
    std::size_t count = 0;
};

FeatureStats feature_stats(std::span<const LabelMap> masks, std::size_t class_count);

// ||mu_a - mu_b||^2 + tr(Sa + Sb - 2 (Sa Sb)^{1/2}); the matrix square root is
// taken on the symmetrized product, eigenvalues in (-1e-8, 0) clamp to zero
// and anything more negative is a numerics error.
double frechet_distance(const FeatureStats& a, const FeatureStats& b);

// Frechet distance between per-corpus feature statistics. Both corpora need
// at least F+1 samples; estimated covariances get 1e-6 diagonal jitter.
double fid(std::span<const LabelMap> real, std::span<const LabelMap> synth,
           std::size_t class_count);

struct FidTableRow {
    std::size_t epoch = 0;
    std::filesystem::path checkpoint;
    double fid = 0.0;
    bool best = false;
};

struct CheckpointSelection {
    std::vector<FidTableRow> table; // sorted by epoch, argmin flagged
    std::filesystem::path best_checkpoint;

    nlohmann::json to_json() const;
};

// Samples n masks per diffusion checkpoint with a fixed seed and prompt,
// scores each against the real corpus, and returns the argmin plus the table.
CheckpointSelection checkpoint_selection(const std::vector<std::filesystem::path>& checkpoints,
                                         const Vae& vae, std::span<const LabelMap> real,
                                         std::size_t n_samples, std::uint64_t seed, int y = 0);

} // namespace iism
