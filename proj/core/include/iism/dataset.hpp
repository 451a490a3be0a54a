#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "iism/label.hpp"
#include "iism/rng.hpp"

namespace iism {

enum class Split { train, val, test };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

// One stored slice: where it lives, whether it contains lesion pixels, and
// which patient-level split it belongs to.
struct SliceRecord {
    std::string patient_id;
    int slice_index = 0;
    std::string path; // relative to the manifest root
    int lesion = 0;   // prompt bit y
    Split split = Split::train;
};

// Sampling weights for the lesion-aware weighted sampler: lesion-bearing
// slices draw with lesion_weight, the rest with base_weight.
struct SamplerWeights {
    double lesion_weight = 5.0;
    double base_weight = 1.0;

    void validate() const;
};

struct Manifest {
    std::vector<SliceRecord> records;
    ClassCatalog catalog;
    std::size_t height = 0;
    std::size_t width = 0;
    std::filesystem::path root; // directory that record paths are relative to

    std::vector<std::size_t> split_indices(Split s) const;
    std::filesystem::path resolve(const SliceRecord& r) const { return root / r.path; }

    // Checks patient/slice uniqueness and that no patient straddles splits.
    void validate() const;
};

void save_manifest(const Manifest& m, const std::filesystem::path& path);
Manifest load_manifest(const std::filesystem::path& path);

// Contiguous retained slice-index interval [lo, hi).
struct IndexRange {
    std::size_t lo = 0;
    std::size_t hi = 0;

    bool contains(std::size_t i) const { return i >= lo && i < hi; }
    std::size_t count() const { return hi - lo; }
};

// Cranial-band selection: keep indices i with floor(lo*n) <= i < ceil(hi*n).
IndexRange select_slices(std::size_t n_slices, double lo = 0.20, double hi = 0.95);

// Overlay an infarct mask (values 0/1) onto a tissue map; infarct pixels take
// the catalog's lesion class.
LabelMap fuse_masks(const LabelMap& tissue, const LabelMap& infarct,
                    const ClassCatalog& catalog);

// Deterministic patient-level partition. Ratios must be positive and sum to 1;
// counts are floor(ratio*n) with the remainder handed out in the order the
// ratios are given, then adjusted so every split receives at least one patient.
std::map<std::string, Split> split_patients(std::vector<std::string> patient_ids,
                                            const std::array<double, 3>& ratios,
                                            std::uint64_t seed);

struct SplitSpec {
    std::array<double, 3> ratios{0.8, 0.1, 0.1};
    std::uint64_t seed = 0;
};

// Scan a directory of <patient>/<slice>.iism|.png files, compute lesion flags,
// assign patient-level splits, and (optionally) keep only the cranial band
// given as (lo, hi) fractions of each patient's slice count.
Manifest build_manifest(const std::filesystem::path& root, const ClassCatalog& catalog,
                        const SplitSpec& spec,
                        std::optional<std::pair<double, double>> band = std::nullopt);

// Endless stream of record indices drawn i.i.d. with replacement, each index i
// with probability w_i / sum(w). Restricted to one split (training by default).
class WeightedStream {
  public:
    WeightedStream(const Manifest& manifest, SamplerWeights weights, std::uint64_t seed,
                   Split split = Split::train);

    std::size_t next();
    std::size_t candidate_count() const { return indices_.size(); }

  private:
    std::vector<std::size_t> indices_; // global record indices
    std::vector<double> cumulative_;
    Rng rng_;
};

struct MaskBatch {
    std::vector<OneHotMask> masks;
    std::vector<int> labels; // prompt bits, aligned with masks
};

// Load records, resize to the manifest resolution, one-hot encode.
MaskBatch load_batch(const Manifest& manifest, std::span<const std::size_t> indices);

} // namespace iism
