#include "iism/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "iism/image_io.hpp"

namespace iism {

using nlohmann::json;

void PhantomConfig::validate() const {
    if (image_size < 8)
        throw_error(ErrorKind::validation, "phantom image size must be >= 8");
    if (!(lesion_probability >= 0.0 && lesion_probability <= 1.0))
        throw_error(ErrorKind::validation,
                    fmt::format("lesion probability {} outside [0, 1]", lesion_probability));
    if (!(second_lesion_probability >= 0.0 && second_lesion_probability <= 1.0))
        throw_error(ErrorKind::validation, "second lesion probability outside [0, 1]");
    if (tissue_ring_radii.size() != 5)
        throw_error(ErrorKind::validation, "expected 5 tissue ring radii (outside-in)");
    for (std::size_t i = 0; i < tissue_ring_radii.size(); ++i) {
        if (!(tissue_ring_radii[i] > 0.0 && tissue_ring_radii[i] <= 1.0))
            throw_error(ErrorKind::validation, "ring radii must lie in (0, 1]");
        if (i > 0 && !(tissue_ring_radii[i] < tissue_ring_radii[i - 1]))
            throw_error(ErrorKind::validation,
                        "ring radii must strictly decrease from the scalp inward");
    }
    auto [lo, hi] = effective_lesion_radius();
    if (!(lo > 0.0 && lo <= hi))
        throw_error(ErrorKind::validation,
                    fmt::format("invalid lesion radius range [{}, {}]", lo, hi));
    if (!(lesion_sector_width > 0.0 && lesion_sector_width <= 2.0 * std::numbers::pi + 1e-12))
        throw_error(ErrorKind::validation, "lesion sector width must lie in (0, 2*pi]");
    if (slices_per_volume < 1)
        throw_error(ErrorKind::validation, "slices per volume must be >= 1");
}

std::pair<double, double> PhantomConfig::effective_lesion_radius() const {
    if (lesion_radius_range.first <= 0.0 && lesion_radius_range.second <= 0.0)
        return {0.055 * double(image_size), 0.115 * double(image_size)};
    return lesion_radius_range;
}

PhantomConfig PhantomConfig::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw_error(ErrorKind::validation, fmt::format("bad phantom config JSON: {}", e.what()));
    }
    PhantomConfig cfg;
    for (const auto& [key, value] : j.items()) {
        if (key == "image_size") cfg.image_size = value.get<std::size_t>();
        else if (key == "lesion_probability") cfg.lesion_probability = value.get<double>();
        else if (key == "lesion_radius_range") {
            cfg.lesion_radius_range = {value.at(0).get<double>(), value.at(1).get<double>()};
        } else if (key == "tissue_ring_radii") cfg.tissue_ring_radii = value.get<std::vector<double>>();
        else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
        else if (key == "slices_per_volume") cfg.slices_per_volume = value.get<std::size_t>();
        else if (key == "second_lesion_probability") cfg.second_lesion_probability = value.get<double>();
        else throw_error(ErrorKind::validation, fmt::format("unknown phantom config key '{}'", key));
    }
    cfg.validate();
    return cfg;
}

PhantomConfig PhantomConfig::from_json_file(const std::filesystem::path& path) {
    auto bytes = read_file_bytes(path);
    return from_json_text(std::string(bytes.begin(), bytes.end()));
}

namespace {

// Per-patient head geometry, kept coherent across a volume.
struct HeadShape {
    double axis_ratio;   // minor/major semi-axis
    double base_scale;   // overall head size factor
    double rotation;     // radians
    double center_dx;    // center jitter, fraction of image size
    double center_dy;
    std::vector<double> rings; // per-patient jittered fractional radii
};

HeadShape draw_head_shape(const PhantomConfig& cfg, Rng& rng) {
    HeadShape s;
    s.axis_ratio = rng.uniform(0.78, 0.92);
    s.base_scale = rng.uniform(0.88, 1.0);
    s.rotation = rng.uniform(-0.12, 0.12);
    s.center_dx = rng.uniform(-0.02, 0.02);
    s.center_dy = rng.uniform(-0.02, 0.02);

    // Jitter ring gaps rather than radii so the outside-in ordering survives.
    const auto& base = cfg.tissue_ring_radii;
    s.rings.resize(base.size());
    s.rings[0] = base[0] * rng.uniform(0.97, 1.0);
    double acc = s.rings[0];
    for (std::size_t i = 1; i < base.size(); ++i) {
        const double gap = (base[i - 1] - base[i]) * rng.uniform(0.85, 1.15);
        acc -= gap;
        s.rings[i] = acc;
    }
    return s;
}

struct Ellipse {
    double cx, cy;   // center, pixels
    double a, b;     // semi-axes, pixels
    double rotation; // radians

    // Normalized elliptical radius of a point (<= 1 means inside).
    double radius(double x, double y) const {
        const double dx = x - cx;
        const double dy = y - cy;
        const double c = std::cos(rotation);
        const double s = std::sin(rotation);
        const double u = (c * dx + s * dy) / a;
        const double v = (-s * dx + c * dy) / b;
        return std::sqrt(u * u + v * v);
    }
};

constexpr ClassId kBackground = 0;
constexpr ClassId kSoftTissue = 1;
constexpr ClassId kBone = 2;
constexpr ClassId kCsf = 3;
constexpr ClassId kGrayMatter = 4;
constexpr ClassId kWhiteMatter = 5;
constexpr ClassId kInfarct = 6;

} // namespace

PhantomSlice generate_slice(const PhantomConfig& cfg, Rng& rng, double scale) {
    cfg.validate();
    const std::size_t n = cfg.image_size;
    const HeadShape shape = draw_head_shape(cfg, rng);

    Ellipse head;
    head.cx = (0.5 + shape.center_dx) * double(n);
    head.cy = (0.5 + shape.center_dy) * double(n);
    head.a = 0.5 * double(n) * shape.base_scale * scale;
    head.b = head.a * shape.axis_ratio;
    head.rotation = shape.rotation;

    const double r_soft = shape.rings[0];
    const double r_bone = shape.rings[1];
    const double r_csf = shape.rings[2];
    const double r_gray = shape.rings[3];
    const double r_white = shape.rings[4];

    LabelMap map(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double rho = head.radius(double(j) + 0.5, double(i) + 0.5);
            ClassId label = kBackground;
            if (rho <= r_white) label = kWhiteMatter;
            else if (rho <= r_gray) label = kGrayMatter;
            else if (rho <= r_csf) label = kCsf;
            else if (rho <= r_bone) label = kBone;
            else if (rho <= r_soft) label = kSoftTissue;
            map.at(i, j) = label;
        }
    }

    // Lesion placement. Containment in the gray-matter outer ellipse is
    // enforced analytically, then clipped to parenchyma pixels so infarct
    // never overwrites CSF/bone even at raster boundaries.
    int has_lesion = 0;
    auto place_lesion = [&](Rng& r) {
        auto [lo, hi] = cfg.effective_lesion_radius();
        const double min_axis = std::min(head.a, head.b);
        const double la_max = 0.85 * r_gray * min_axis;
        if (lo > la_max) return; // cannot fit: skip, flag stays 0
        const double la = r.uniform(lo, std::min(hi, la_max));
        const double lb = la * r.uniform(0.6, 1.0);
        const double phi = r.uniform(0.0, std::numbers::pi);
        // Center inside the gray ellipse with margin for the blob extent.
        const double extent = la / min_axis; // normalized radius bound of the blob
        const double rho_max = std::max(0.0, r_gray - extent - 0.01);
        const double theta = cfg.lesion_sector_center +
                             cfg.lesion_sector_width * (r.uniform(0.0, 1.0) - 0.5);
        const double rho_c = rho_max * std::sqrt(r.uniform(0.0, 1.0));
        // Map the normalized (rho, theta) back through the head ellipse frame.
        const double c = std::cos(head.rotation);
        const double s = std::sin(head.rotation);
        const double u = rho_c * std::cos(theta) * head.a;
        const double v = rho_c * std::sin(theta) * head.b;
        Ellipse blob{head.cx + c * u - s * v, head.cy + s * u + c * v, la, lb, phi};
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                if (blob.radius(double(j) + 0.5, double(i) + 0.5) > 1.0) continue;
                ClassId& px = map.at(i, j);
                if (px == kGrayMatter || px == kWhiteMatter) {
                    px = kInfarct;
                    has_lesion = 1;
                }
            }
        }
    };

    if (rng.uniform() < cfg.lesion_probability) {
        place_lesion(rng);
        if (has_lesion && rng.uniform() < cfg.second_lesion_probability) place_lesion(rng);
    }

    return PhantomSlice{std::move(map), has_lesion};
}

PhantomVolume generate_volume(const PhantomConfig& cfg, const std::string& patient_id) {
    cfg.validate();
    PhantomVolume vol;
    vol.patient_id = patient_id;
    vol.slices.reserve(cfg.slices_per_volume);
    const std::size_t count = cfg.slices_per_volume;
    const Rng patient_rng = Rng(cfg.seed).fork(hash64(patient_id));
    for (std::size_t k = 0; k < count; ++k) {
        // Small at the cranial extremes, largest mid-volume.
        const double pos = (double(k) + 0.5) / double(count);
        const double scale = 0.55 + 0.45 * std::sqrt(std::sin(std::numbers::pi * pos));
        Rng slice_rng = patient_rng.fork(k);
        vol.slices.push_back(generate_slice(cfg, slice_rng, scale));
    }
    return vol;
}

Manifest generate_corpus(const PhantomConfig& cfg, std::size_t n_patients,
                         const std::filesystem::path& out_dir, const SplitSpec& split) {
    cfg.validate();
    std::filesystem::create_directories(out_dir);

    const ClassCatalog catalog = default_catalog();
    Manifest manifest{{}, catalog, cfg.image_size, cfg.image_size, out_dir};

    std::vector<std::string> patients;
    for (std::size_t p = 0; p < n_patients; ++p)
        patients.push_back(fmt::format("p{:04}", p));

    std::map<std::string, Split> assignment;
    if (!patients.empty()) assignment = split_patients(patients, split.ratios, split.seed);

    for (const auto& patient : patients) {
        PhantomVolume vol = generate_volume(cfg, patient);
        for (std::size_t k = 0; k < vol.slices.size(); ++k) {
            const auto rel = std::filesystem::path(patient) / fmt::format("{}.iism", k);
            write_iism(vol.slices[k].map, std::uint8_t(catalog.size()), out_dir / rel);
            SliceRecord r;
            r.patient_id = patient;
            r.slice_index = int(k);
            r.path = rel.generic_string();
            r.lesion = vol.slices[k].has_lesion;
            r.split = assignment.at(patient);
            manifest.records.push_back(std::move(r));
        }
    }
    manifest.validate();
    save_manifest(manifest, out_dir / "manifest.jsonl");
    return manifest;
}

} // namespace iism
