#include "iism/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "iism/image_io.hpp"

namespace iism {

using nlohmann::json;

std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    throw_error(ErrorKind::validation, "invalid split value");
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw_error(ErrorKind::validation, fmt::format("unknown split '{}'", s));
}

void SamplerWeights::validate() const {
    if (!(lesion_weight > 0.0) || !(base_weight > 0.0))
        throw_error(ErrorKind::validation, "sampler weights must be positive");
}

std::vector<std::size_t> Manifest::split_indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < records.size(); ++i)
        if (records[i].split == s) out.push_back(i);
    return out;
}

void Manifest::validate() const {
    std::set<std::pair<std::string, int>> keys;
    std::map<std::string, Split> patient_split;
    for (const auto& r : records) {
        if (!keys.insert({r.patient_id, r.slice_index}).second)
            throw_error(ErrorKind::validation,
                        fmt::format("duplicate record ({}, {})", r.patient_id, r.slice_index));
        auto [it, inserted] = patient_split.insert({r.patient_id, r.split});
        if (!inserted && it->second != r.split)
            throw_error(ErrorKind::validation,
                        fmt::format("patient {} appears in more than one split", r.patient_id));
        if (r.lesion != 0 && r.lesion != 1)
            throw_error(ErrorKind::validation, "lesion flag must be 0 or 1");
    }
}

namespace {

json catalog_to_json(const ClassCatalog& catalog) {
    json classes = json::array();
    for (const auto& e : catalog.entries())
        classes.push_back({{"id", e.id},
                           {"name", e.name},
                           {"color", {e.color[0], e.color[1], e.color[2]}}});
    return json{{"classes", classes}, {"lesion", catalog.lesion_class()}};
}

ClassCatalog catalog_from_json(const json& j) {
    std::vector<ClassEntry> entries;
    for (const auto& c : j.at("classes")) {
        ClassEntry e;
        e.id = ClassId(c.at("id").get<int>());
        e.name = c.at("name").get<std::string>();
        auto color = c.at("color");
        e.color = {std::uint8_t(color.at(0).get<int>()), std::uint8_t(color.at(1).get<int>()),
                   std::uint8_t(color.at(2).get<int>())};
        entries.push_back(std::move(e));
    }
    return ClassCatalog(std::move(entries), ClassId(j.at("lesion").get<int>()));
}

} // namespace

void save_manifest(const Manifest& m, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw_error(ErrorKind::io, fmt::format("cannot open {} for writing", path.string()));
    json header{{"type", "iism-manifest"},
                {"version", 1},
                {"height", m.height},
                {"width", m.width},
                {"catalog", catalog_to_json(m.catalog)}};
    out << header.dump() << "\n";
    for (const auto& r : m.records) {
        json rec{{"patient_id", r.patient_id},
                 {"slice_index", r.slice_index},
                 {"path", r.path},
                 {"lesion", r.lesion},
                 {"split", to_string(r.split)}};
        out << rec.dump() << "\n";
    }
    if (!out)
        throw_error(ErrorKind::io, fmt::format("write failed for {}", path.string()));
}

Manifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw_error(ErrorKind::io, fmt::format("cannot open manifest {}", path.string()));
    std::string line;
    if (!std::getline(in, line))
        throw_error(ErrorKind::io, fmt::format("manifest {} is empty", path.string()));
    json header;
    try {
        header = json::parse(line);
    } catch (const json::exception& e) {
        throw_error(ErrorKind::io, fmt::format("bad manifest header: {}", e.what()));
    }
    if (header.value("type", "") != "iism-manifest")
        throw_error(ErrorKind::io, "missing iism-manifest header line");
    Manifest m{{},
               catalog_from_json(header.at("catalog")),
               header.at("height").get<std::size_t>(),
               header.at("width").get<std::size_t>(),
               path.parent_path()};
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw_error(ErrorKind::io, fmt::format("bad manifest record: {}", e.what()));
        }
        SliceRecord r;
        r.patient_id = rec.at("patient_id").get<std::string>();
        r.slice_index = rec.at("slice_index").get<int>();
        r.path = rec.at("path").get<std::string>();
        r.lesion = rec.at("lesion").get<int>();
        r.split = split_from_string(rec.at("split").get<std::string>());
        m.records.push_back(std::move(r));
    }
    m.validate();
    return m;
}

namespace {

// Snap values like 19.000000000000004 (from 0.95 * 20) back onto the integer
// the exact rational arithmetic would give, then apply floor/ceil.
double snap(double v) {
    const double r = std::round(v);
    if (std::abs(v - r) < 1e-9 * std::max(1.0, std::abs(v))) return r;
    return v;
}

} // namespace

IndexRange select_slices(std::size_t n_slices, double lo, double hi) {
    if (n_slices < 1)
        throw_error(ErrorKind::validation, "slice selection needs at least one slice");
    if (!(0.0 <= lo && lo < hi && hi <= 1.0))
        throw_error(ErrorKind::validation,
                    fmt::format("invalid slice band [{}, {}]", lo, hi));
    const auto lo_idx = std::size_t(std::floor(snap(lo * double(n_slices))));
    const auto hi_idx = std::size_t(std::ceil(snap(hi * double(n_slices))));
    if (lo_idx >= hi_idx)
        throw_error(ErrorKind::validation,
                    fmt::format("slice band [{}, {}] retains no slice of {}", lo, hi, n_slices));
    return IndexRange{lo_idx, std::min(hi_idx, n_slices)};
}

LabelMap fuse_masks(const LabelMap& tissue, const LabelMap& infarct,
                    const ClassCatalog& catalog) {
    if (tissue.height() != infarct.height() || tissue.width() != infarct.width())
        throw_error(ErrorKind::validation,
                    fmt::format("fusion shape mismatch: {}x{} vs {}x{}", tissue.height(),
                                tissue.width(), infarct.height(), infarct.width()));
    validate_labels(tissue, catalog);
    LabelMap out = tissue;
    const ClassId lesion = catalog.lesion_class();
    for (std::size_t p = 0; p < out.data().size(); ++p) {
        const ClassId v = infarct.data()[p];
        if (v > 1)
            throw_error(ErrorKind::validation,
                        fmt::format("infarct mask must be binary, found {}", v));
        if (v == 1) out.data()[p] = lesion;
    }
    return out;
}

std::map<std::string, Split> split_patients(std::vector<std::string> patient_ids,
                                            const std::array<double, 3>& ratios,
                                            std::uint64_t seed) {
    for (double r : ratios)
        if (!(r > 0.0))
            throw_error(ErrorKind::validation, "split ratios must be positive");
    const double sum = ratios[0] + ratios[1] + ratios[2];
    if (std::abs(sum - 1.0) > 1e-9)
        throw_error(ErrorKind::validation,
                    fmt::format("split ratios sum to {}, expected 1", sum));

    std::sort(patient_ids.begin(), patient_ids.end());
    patient_ids.erase(std::unique(patient_ids.begin(), patient_ids.end()), patient_ids.end());
    const std::size_t n = patient_ids.size();
    if (n < 3)
        throw_error(ErrorKind::validation,
                    fmt::format("{} patients cannot fill 3 splits with >= 1 patient each", n));

    // Fisher-Yates on the sorted ids; the assignment depends only on the id
    // set and the seed, not on caller ordering.
    Rng rng(seed);
    for (std::size_t i = n - 1; i > 0; --i) {
        const std::size_t j = std::size_t(rng.below(i + 1));
        std::swap(patient_ids[i], patient_ids[j]);
    }

    std::array<std::size_t, 3> counts{};
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < 3; ++k) {
        counts[k] = std::size_t(std::floor(snap(ratios[k] * double(n))));
        assigned += counts[k];
    }
    // Remainder goes to splits in the order the ratios are given.
    for (std::size_t k = 0; assigned < n; k = (k + 1) % 3) {
        ++counts[k];
        ++assigned;
    }
    // Every split gets at least one patient; borrow from the largest.
    for (std::size_t k = 0; k < 3; ++k) {
        while (counts[k] == 0) {
            auto big = std::size_t(std::max_element(counts.begin(), counts.end()) -
                                   counts.begin());
            --counts[big];
            ++counts[k];
        }
    }

    std::map<std::string, Split> out;
    std::size_t pos = 0;
    const std::array<Split, 3> splits{Split::train, Split::val, Split::test};
    for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t i = 0; i < counts[k]; ++i) out[patient_ids[pos++]] = splits[k];
    return out;
}

namespace {

// Cheap dimension probe: IISM header or PNG header, no pixel decode.
std::pair<std::size_t, std::size_t> label_map_dims(const std::filesystem::path& path) {
    if (path.extension() == ".iism") {
        auto bytes = read_file_bytes(path);
        auto file = parse_iism(bytes);
        return {file.map.height(), file.map.width()};
    }
    auto m = read_label_png(path);
    return {m.height(), m.width()};
}

} // namespace

Manifest build_manifest(const std::filesystem::path& root, const ClassCatalog& catalog,
                        const SplitSpec& spec,
                        std::optional<std::pair<double, double>> band) {
    if (!std::filesystem::is_directory(root))
        throw_error(ErrorKind::io, fmt::format("{} is not a directory", root.string()));

    struct Found {
        std::string patient;
        int slice = 0;
        std::filesystem::path rel;
    };
    std::vector<Found> found;
    for (const auto& patient_dir : std::filesystem::directory_iterator(root)) {
        if (!patient_dir.is_directory()) continue;
        const std::string patient = patient_dir.path().filename().string();
        for (const auto& entry : std::filesystem::directory_iterator(patient_dir.path())) {
            const auto ext = entry.path().extension();
            if (ext != ".iism" && ext != ".png") continue;
            int slice = 0;
            try {
                slice = std::stoi(entry.path().stem().string());
            } catch (const std::exception&) {
                throw_error(ErrorKind::io,
                            fmt::format("cannot parse slice index from {}",
                                        entry.path().string()));
            }
            found.push_back({patient, slice, std::filesystem::path(patient) /
                                                  entry.path().filename()});
        }
    }
    std::sort(found.begin(), found.end(), [](const Found& a, const Found& b) {
        return std::tie(a.patient, a.slice) < std::tie(b.patient, b.slice);
    });

    Manifest m{{}, catalog, 0, 0, root};
    if (found.empty()) return m;

    // Patient-level split over every patient present, then per-patient band.
    std::vector<std::string> patients;
    std::map<std::string, std::size_t> slices_per_patient;
    for (const auto& f : found) {
        if (patients.empty() || patients.back() != f.patient) patients.push_back(f.patient);
        ++slices_per_patient[f.patient];
    }
    const auto assignment = split_patients(patients, spec.ratios, spec.seed);

    std::map<std::string, IndexRange> bands;
    if (band) {
        for (const auto& [patient, count] : slices_per_patient)
            bands[patient] = select_slices(count, band->first, band->second);
    }

    std::map<std::string, std::size_t> position_in_patient;
    for (const auto& f : found) {
        const std::size_t pos = position_in_patient[f.patient]++;
        if (band && !bands.at(f.patient).contains(pos)) continue;

        const auto full = root / f.rel;
        LabelMap map = [&] {
            try {
                return read_label_map(full);
            } catch (const Error& e) {
                throw_error(ErrorKind::io,
                            fmt::format("ingesting {}: {}", full.string(), e.what()));
            }
        }();
        if (m.height == 0) {
            m.height = map.height();
            m.width = map.width();
        } else if (map.height() != m.height || map.width() != m.width) {
            throw_error(ErrorKind::io,
                        fmt::format("{} is {}x{}, expected {}x{}", full.string(), map.height(),
                                    map.width(), m.height, m.width));
        }
        if (map.max_label() >= catalog.size())
            throw_error(ErrorKind::io,
                        fmt::format("ingesting {}: label {} outside the catalog", full.string(),
                                    map.max_label()));

        SliceRecord r;
        r.patient_id = f.patient;
        r.slice_index = f.slice;
        r.path = f.rel.generic_string();
        r.lesion = lesion_flag(map, catalog);
        r.split = assignment.at(f.patient);
        m.records.push_back(std::move(r));
    }
    m.validate();
    return m;
}

WeightedStream::WeightedStream(const Manifest& manifest, SamplerWeights weights,
                               std::uint64_t seed, Split split)
    : rng_(seed) {
    weights.validate();
    double total = 0.0;
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        if (manifest.records[i].split != split) continue;
        indices_.push_back(i);
        total += manifest.records[i].lesion ? weights.lesion_weight : weights.base_weight;
        cumulative_.push_back(total);
    }
    if (indices_.empty())
        throw_error(ErrorKind::validation,
                    fmt::format("no records in split '{}'", to_string(split)));
}

std::size_t WeightedStream::next() {
    const double u = rng_.uniform() * cumulative_.back();
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    const auto k = std::min<std::size_t>(std::size_t(it - cumulative_.begin()),
                                         indices_.size() - 1);
    return indices_[k];
}

MaskBatch load_batch(const Manifest& manifest, std::span<const std::size_t> indices) {
    MaskBatch batch;
    batch.masks.reserve(indices.size());
    batch.labels.reserve(indices.size());
    for (std::size_t idx : indices) {
        if (idx >= manifest.records.size())
            throw_error(ErrorKind::validation,
                        fmt::format("record index {} >= record count {}", idx,
                                    manifest.records.size()));
        const auto& r = manifest.records[idx];
        LabelMap m = read_label_map(manifest.resolve(r));
        m = resize_nearest(m, manifest.height, manifest.width);
        batch.masks.push_back(onehot(m, manifest.catalog.size()));
        batch.labels.push_back(r.lesion);
    }
    return batch;
}

} // namespace iism
