#include <doctest.h>

#include <map>
#include <set>

#include "iism/dataset.hpp"
#include "iism/image_io.hpp"
#include "iism/phantom.hpp"
#include "test_helpers.hpp"

using namespace iism;

TEST_CASE("select_slices applies the floor/ceil band rule") {
    const IndexRange r = select_slices(100, 0.20, 0.95);
    CHECK(r.lo == 20);
    CHECK(r.hi == 95); // indices 20..94 inclusive
    CHECK(r.count() == 75);

    const IndexRange full = select_slices(42, 0.0, 1.0);
    CHECK(full.lo == 0);
    CHECK(full.hi == 42);

    const IndexRange ten = select_slices(10, 0.20, 0.95);
    CHECK(ten.lo == 2);
    CHECK(ten.hi == 10); // floor(2.0) = 2, ceil(9.5) = 10 exclusive
}

TEST_CASE("select_slices is robust to floating-point products landing on integers") {
    // 0.95 * 20 evaluates to 19.000000000000004 in doubles; the exact rule
    // gives ceil(19) = 19.
    const IndexRange r = select_slices(20, 0.20, 0.95);
    CHECK(r.lo == 4);
    CHECK(r.hi == 19);
}

TEST_CASE("select_slices rejects bad fractions and never returns empty ranges") {
    CHECK_THROWS_AS(select_slices(0, 0.2, 0.95), Error);
    CHECK_THROWS_AS(select_slices(10, 0.9, 0.2), Error);
    CHECK_THROWS_AS(select_slices(10, -0.1, 0.5), Error);
    CHECK_THROWS_AS(select_slices(10, 0.2, 1.5), Error);

    // With the floor/ceil rule any valid (lo, hi) retains at least one slice,
    // and the result is a contiguous interval inside [0, n).
    Rng rng(12);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng.below(50);
        double lo = rng.uniform(0.0, 0.99);
        double hi = rng.uniform(lo + 1e-6, 1.0);
        const IndexRange r = select_slices(n, lo, hi);
        CHECK(r.lo < r.hi);
        CHECK(r.hi <= n);
    }
}

TEST_CASE("fuse_masks overlays infarct with precedence") {
    const ClassCatalog catalog = default_catalog();
    LabelMap tissue(2, 2, {1, 2, 4, 5});
    LabelMap none(2, 2, {0, 0, 0, 0});
    CHECK(fuse_masks(tissue, none, catalog) == tissue);

    LabelMap all(2, 2, {1, 1, 1, 1});
    const LabelMap saturated = fuse_masks(tissue, all, catalog);
    for (ClassId v : saturated.data()) CHECK(v == catalog.lesion_class());

    LabelMap wrong_shape(3, 2);
    CHECK_THROWS_AS(fuse_masks(tissue, wrong_shape, catalog), Error);
    LabelMap not_binary(2, 2, {0, 2, 0, 0});
    CHECK_THROWS_AS(fuse_masks(tissue, not_binary, catalog), Error);
}

TEST_CASE("fuse_masks equals pixelwise select on random pairs") {
    const ClassCatalog catalog = default_catalog();
    Rng rng(77);
    for (int trial = 0; trial < 25; ++trial) {
        LabelMap tissue = testutil::random_map(rng, 7, 9, 6); // no lesion labels
        LabelMap infarct = testutil::random_map(rng, 7, 9, 2);
        const LabelMap fused = fuse_masks(tissue, infarct, catalog);
        std::size_t lesion_pixels = 0;
        for (std::size_t p = 0; p < fused.data().size(); ++p) {
            const ClassId expected =
                infarct.data()[p] ? catalog.lesion_class() : tissue.data()[p];
            REQUIRE(fused.data()[p] == expected);
            lesion_pixels += fused.data()[p] == catalog.lesion_class();
        }
        // Output lesion support equals the infarct input support exactly.
        std::size_t input_support = 0;
        for (ClassId v : infarct.data()) input_support += v;
        CHECK(lesion_pixels == input_support);
    }
}

TEST_CASE("split_patients reproduces the 61/8/7 partition") {
    std::vector<std::string> ids;
    for (int i = 0; i < 76; ++i) ids.push_back("p" + std::to_string(i));
    const auto split =
        split_patients(ids, {61.0 / 76.0, 8.0 / 76.0, 7.0 / 76.0}, 5);
    std::map<Split, int> counts;
    for (const auto& [id, s] : split) ++counts[s];
    CHECK(counts[Split::train] == 61);
    CHECK(counts[Split::val] == 8);
    CHECK(counts[Split::test] == 7);
}

TEST_CASE("split_patients gives one each for three patients at equal ratios") {
    const auto split = split_patients({"a", "b", "c"}, {1.0 / 3, 1.0 / 3, 1.0 / 3}, 9);
    std::set<Split> seen;
    for (const auto& [id, s] : split) seen.insert(s);
    CHECK(seen.size() == 3);
}

TEST_CASE("split_patients is deterministic and validates its inputs") {
    std::vector<std::string> ids;
    for (int i = 0; i < 24; ++i) ids.push_back("q" + std::to_string(i));
    const auto a = split_patients(ids, {0.6, 0.2, 0.2}, 1234);
    const auto b = split_patients(ids, {0.6, 0.2, 0.2}, 1234);
    CHECK(a == b);

    CHECK_THROWS_AS(split_patients({"a", "b"}, {0.5, 0.3, 0.2}, 0), Error);
    CHECK_THROWS_AS(split_patients(ids, {0.5, 0.5, 0.5}, 0), Error);   // sums to 1.5
    CHECK_THROWS_AS(split_patients(ids, {1.0, 0.0, 0.0}, 0), Error);   // zero ratio
}

TEST_CASE("every split receives at least one patient even when floors collapse") {
    std::vector<std::string> ids{"a", "b", "c", "d"};
    const auto split = split_patients(ids, {0.90, 0.05, 0.05}, 3);
    std::map<Split, int> counts;
    for (const auto& [id, s] : split) ++counts[s];
    CHECK(counts[Split::train] >= 1);
    CHECK(counts[Split::val] >= 1);
    CHECK(counts[Split::test] >= 1);
}

namespace {

Manifest synthetic_manifest(std::size_t lesion_count, std::size_t clean_count) {
    Manifest m{{}, default_catalog(), 8, 8, {}};
    for (std::size_t i = 0; i < lesion_count + clean_count; ++i) {
        SliceRecord r;
        r.patient_id = "p" + std::to_string(i);
        r.slice_index = 0;
        r.path = "unused";
        r.lesion = i < lesion_count ? 1 : 0;
        r.split = Split::train;
        m.records.push_back(r);
    }
    return m;
}

} // namespace

TEST_CASE("weighted stream matches the analytic draw probability") {
    const Manifest manifest = synthetic_manifest(10, 90);
    WeightedStream stream(manifest, SamplerWeights{5.0, 1.0}, 99);
    const std::size_t draws = 100000;
    std::size_t lesion = 0;
    for (std::size_t i = 0; i < draws; ++i)
        lesion += std::size_t(manifest.records[stream.next()].lesion);
    const double freq = double(lesion) / double(draws);
    CHECK(std::abs(freq - 50.0 / 140.0) < 0.01);
}

TEST_CASE("weighted stream with equal weights is uniform over records") {
    const Manifest manifest = synthetic_manifest(0, 20);
    WeightedStream stream(manifest, SamplerWeights{1.0, 1.0}, 7);
    std::vector<std::size_t> counts(20, 0);
    const std::size_t draws = 100000;
    for (std::size_t i = 0; i < draws; ++i) ++counts[stream.next()];
    for (std::size_t c : counts) {
        CHECK(double(c) > 0.8 * draws / 20.0);
        CHECK(double(c) < 1.2 * draws / 20.0);
    }
}

TEST_CASE("weighted stream is deterministic per seed and validates weights") {
    const Manifest manifest = synthetic_manifest(5, 5);
    WeightedStream a(manifest, SamplerWeights{}, 42);
    WeightedStream b(manifest, SamplerWeights{}, 42);
    for (int i = 0; i < 100; ++i) REQUIRE(a.next() == b.next());
    CHECK_THROWS_AS(WeightedStream(manifest, SamplerWeights{0.0, 1.0}, 0), Error);
    const Manifest empty{{}, default_catalog(), 8, 8, {}};
    CHECK_THROWS_AS(WeightedStream(empty, SamplerWeights{}, 0), Error);
}

TEST_CASE("build_manifest ingests a phantom corpus and recomputes lesion flags") {
    testutil::TempDir dir("build_manifest");
    PhantomConfig cfg;
    cfg.image_size = 32;
    cfg.lesion_probability = 0.5;
    cfg.seed = 8;
    cfg.slices_per_volume = 10;
    generate_corpus(cfg, 6, dir.path() / "c");

    const Manifest rebuilt =
        build_manifest(dir.path() / "c", default_catalog(), SplitSpec{{0.5, 0.25, 0.25}, 3});
    CHECK(rebuilt.records.size() == 60);
    rebuilt.validate();
    for (const auto& r : rebuilt.records) {
        const LabelMap m = read_iism(rebuilt.resolve(r)).map;
        REQUIRE(lesion_flag(m, rebuilt.catalog) == r.lesion);
    }

    // No patient straddles splits.
    std::map<std::string, std::set<Split>> by_patient;
    for (const auto& r : rebuilt.records) by_patient[r.patient_id].insert(r.split);
    for (const auto& [id, splits] : by_patient) CHECK(splits.size() == 1);
}

TEST_CASE("build_manifest applies the cranial band per patient") {
    testutil::TempDir dir("band_manifest");
    PhantomConfig cfg;
    cfg.image_size = 32;
    cfg.lesion_probability = 0.0;
    cfg.seed = 2;
    cfg.slices_per_volume = 10;
    generate_corpus(cfg, 4, dir.path() / "c");
    const Manifest banded = build_manifest(dir.path() / "c", default_catalog(),
                                           SplitSpec{{0.5, 0.25, 0.25}, 1},
                                           std::pair<double, double>{0.20, 0.95});
    // Band [2, 10) of each 10-slice volume.
    CHECK(banded.records.size() == 4 * 8);
    for (const auto& r : banded.records) CHECK(r.slice_index >= 2);
}

TEST_CASE("build_manifest surfaces unreadable and mis-labelled files") {
    testutil::TempDir dir("bad_manifest");
    const auto root = dir.path() / "c";
    std::filesystem::create_directories(root / "p0");
    LabelMap bad(4, 4, std::vector<ClassId>(16, 3));
    write_iism(bad, 7, root / "p0" / "0.iism");
    ClassCatalog tiny({{0, "bg", {0, 0, 0}}, {1, "fg", {9, 9, 9}}}, 1);
    CHECK_THROWS_AS(build_manifest(root, tiny, SplitSpec{}), Error);

    const Manifest empty = build_manifest(dir.path(), default_catalog(), SplitSpec{});
    CHECK(empty.records.empty()); // no patient directories with masks
}

TEST_CASE("manifest save/load round-trips and rejects leakage") {
    testutil::TempDir dir("manifest_io");
    Manifest m = synthetic_manifest(2, 3);
    m.records[1].split = Split::val;
    save_manifest(m, dir.path() / "m.jsonl");
    const Manifest loaded = load_manifest(dir.path() / "m.jsonl");
    CHECK(loaded.records.size() == m.records.size());
    CHECK(loaded.height == 8);
    CHECK(loaded.catalog.size() == 7);
    CHECK(loaded.records[1].split == Split::val);

    Manifest leaky = synthetic_manifest(0, 2);
    leaky.records[1].patient_id = leaky.records[0].patient_id;
    leaky.records[1].slice_index = 1;
    leaky.records[1].split = Split::test;
    CHECK_THROWS_AS(leaky.validate(), Error);
}

TEST_CASE("load_batch resizes, one-hot encodes, and carries the prompt bit") {
    testutil::TempDir dir("load_batch");
    PhantomConfig cfg;
    cfg.image_size = 32;
    cfg.lesion_probability = 1.0;
    cfg.seed = 31;
    cfg.slices_per_volume = 4;
    const Manifest manifest = generate_corpus(cfg, 3, dir.path() / "c");

    const std::vector<std::size_t> indices{0};
    const MaskBatch one = load_batch(manifest, indices);
    REQUIRE(one.masks.size() == 1);
    CHECK(one.labels.size() == 1);
    CHECK(one.masks[0].channels == 7);
    CHECK(one.masks[0].height == 32);
    CHECK(one.masks[0].width == 32);

    std::vector<std::size_t> all(manifest.records.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const MaskBatch batch = load_batch(manifest, all);
    const ClassCatalog catalog = default_catalog();
    for (std::size_t i = 0; i < batch.masks.size(); ++i) {
        const LabelMap decoded = argmax_decode(as_logits(batch.masks[i]));
        CHECK(lesion_flag(decoded, catalog) == batch.labels[i]);
    }

    const std::vector<std::size_t> oob{manifest.records.size()};
    CHECK_THROWS_AS(load_batch(manifest, oob), Error);
}
