#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "iism/dataset.hpp"
#include "iism/label.hpp"
#include "iism/rng.hpp"

namespace iism {

// Synthetic "brain-like" slice generator: concentric ellipses of scalp, bone,
// CSF, gray matter, and a white-matter core, with an optional elliptical
// infarct blob confined to the parenchyma. Deterministic in
// (seed, patient id, slice index).
struct PhantomConfig {
    std::size_t image_size = 64;
    double lesion_probability = 0.3;
    std::pair<double, double> lesion_radius_range{0.0, 0.0}; // pixels; (0,0) = auto
    // Outer fractional radii, outside-in: soft tissue, bone, CSF, gray matter,
    // white matter. Must be strictly decreasing.
    std::vector<double> tissue_ring_radii{0.95, 0.88, 0.78, 0.70, 0.45};
    // Angular band the lesion center is drawn from, mimicking a vascular
    // territory: blobs cluster around sector_center within sector_width
    // radians (2*pi = uniform placement).
    double lesion_sector_center = 0.7854; // pi/4
    double lesion_sector_width = 2.0944;  // 2*pi/3
    std::uint64_t seed = 0;
    std::size_t slices_per_volume = 40;
    double second_lesion_probability = 0.15;

    void validate() const;
    std::pair<double, double> effective_lesion_radius() const;

    static PhantomConfig from_json_file(const std::filesystem::path& path);
    static PhantomConfig from_json_text(const std::string& text);
};

struct PhantomSlice {
    LabelMap map;
    int has_lesion = 0;
};

struct PhantomVolume {
    std::string patient_id;
    std::vector<PhantomSlice> slices;

    std::size_t cranial_height() const { return slices.size(); }
};

// One slice at the given anatomy scale (1.0 = mid-volume head size). The RNG
// carries all stochasticity; infarct pixels overwrite gray/white tissue and
// never escape the parenchyma. If no lesion of the configured radius fits, the
// lesion is skipped and the flag stays 0.
PhantomSlice generate_slice(const PhantomConfig& cfg, Rng& rng, double scale = 1.0);

// A full volume; head size follows a smooth profile, small at the cranial
// extremes and largest mid-volume.
PhantomVolume generate_volume(const PhantomConfig& cfg, const std::string& patient_id);

// Write IISM1 files as <patient>/<slice>.iism under out_dir plus a
// manifest.jsonl with patient-level splits.
Manifest generate_corpus(const PhantomConfig& cfg, std::size_t n_patients,
                         const std::filesystem::path& out_dir,
                         const SplitSpec& split = SplitSpec{});

} // namespace iism
