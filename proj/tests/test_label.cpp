#include <doctest.h>

#include <algorithm>
#include <set>

#include "iism/label.hpp"
#include "test_helpers.hpp"

using namespace iism;

TEST_CASE("onehot places ones exactly where the map carries each class") {
    LabelMap m(2, 2, {0, 6, 2, 0});
    OneHotMask x = onehot(m, 7);
    CHECK(x.at(0, 0, 0) == 1);
    CHECK(x.at(0, 0, 1) == 0);
    CHECK(x.at(0, 1, 0) == 0);
    CHECK(x.at(0, 1, 1) == 1);
    CHECK(x.at(6, 0, 1) == 1);
    CHECK(x.at(6, 0, 0) == 0);
    CHECK(x.at(2, 1, 0) == 1);
    for (std::size_t c : {1u, 3u, 4u, 5u}) {
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t j = 0; j < 2; ++j) CHECK(x.at(c, i, j) == 0);
    }
}

TEST_CASE("onehot of an all-zero map fills channel 0 only") {
    LabelMap m(4, 4);
    OneHotMask x = onehot(m, 7);
    for (std::size_t c = 0; c < 7; ++c)
        for (std::size_t p = 0; p < 16; ++p)
            CHECK(x.data[c * 16 + p] == (c == 0 ? 1 : 0));
}

TEST_CASE("onehot rejects labels outside the class count, naming the pixel") {
    LabelMap m(2, 3, {0, 0, 0, 0, 5, 0});
    CHECK_THROWS_WITH_AS(onehot(m, 5), doctest::Contains("(1, 1)"), Error);
}

TEST_CASE("onehot then argmax is the identity and channels sum to one") {
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        LabelMap m = testutil::random_map(rng, 16, 16, 7);
        OneHotMask x = onehot(m, 7);
        for (std::size_t p = 0; p < m.pixels(); ++p) {
            int sum = 0;
            for (std::size_t c = 0; c < 7; ++c) sum += x.data[c * m.pixels() + p];
            REQUIRE(sum == 1);
        }
        CHECK(argmax_decode(as_logits(x)) == m);
    }
}

TEST_CASE("argmax decode picks the maximum and breaks ties low") {
    LogitField f;
    f.channels = 7;
    f.height = 1;
    f.width = 1;
    f.data = {0.1f, 2.0f, -1.0f, 0.0f, 0.0f, 0.0f, 0.0f};
    CHECK(argmax_decode(f).at(0, 0) == 1);

    std::fill(f.data.begin(), f.data.end(), 3.25f);
    CHECK(argmax_decode(f).at(0, 0) == 0); // all-equal ties go to class 0
}

TEST_CASE("argmax decode recovers the map from scaled one-hot logits") {
    Rng rng(3);
    LabelMap m = testutil::random_map(rng, 8, 8, 7);
    LogitField f = as_logits(onehot(m, 7));
    for (auto& v : f.data) v *= 10.0f;
    CHECK(argmax_decode(f) == m);
}

TEST_CASE("argmax decode rejects NaN logits") {
    LogitField f;
    f.channels = 2;
    f.height = 1;
    f.width = 1;
    f.data = {0.0f, std::nanf("")};
    CHECK_THROWS_AS(argmax_decode(f), Error);
}

TEST_CASE("argmax is invariant to per-pixel shifts and positive scaling") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        LabelMap m = testutil::random_map(rng, 6, 6, 7);
        LogitField f = as_logits(onehot(m, 7));
        for (auto& v : f.data) v = v * 10.0f + float(rng.uniform(-0.4, 0.4));
        const LabelMap base = argmax_decode(f);

        LogitField shifted = f;
        for (std::size_t p = 0; p < m.pixels(); ++p) {
            const float offset = float(rng.uniform(-5.0, 5.0));
            for (std::size_t c = 0; c < 7; ++c) shifted.data[c * m.pixels() + p] += offset;
        }
        CHECK(argmax_decode(shifted) == base);

        LogitField scaled = f;
        const float gain = float(rng.uniform(0.1, 4.0));
        for (auto& v : scaled.data) v *= gain;
        CHECK(argmax_decode(scaled) == base);
    }
}

TEST_CASE("resize_nearest block-replicates on exact upscale") {
    LabelMap m(2, 2, {0, 1, 2, 3});
    LabelMap big = resize_nearest(m, 4, 4);
    const std::vector<ClassId> expected{0, 0, 1, 1, 0, 0, 1, 1, 2, 2, 3, 3, 2, 2, 3, 3};
    CHECK(big.data() == expected);
}

TEST_CASE("resize_nearest to the same size is the identity") {
    Rng rng(5);
    LabelMap m = testutil::random_map(rng, 9, 13, 7);
    CHECK(resize_nearest(m, 9, 13) == m);
}

TEST_CASE("resize_nearest matches a brute-force center-sampling oracle") {
    Rng rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t h = 1 + rng.below(12), w = 1 + rng.below(12);
        const std::size_t nh = 1 + rng.below(20), nw = 1 + rng.below(20);
        LabelMap m = testutil::random_map(rng, h, w, 7);
        LabelMap out = resize_nearest(m, nh, nw);
        for (std::size_t i = 0; i < nh; ++i)
            for (std::size_t j = 0; j < nw; ++j) {
                const auto si = std::size_t((double(i) + 0.5) * double(h) / double(nh));
                const auto sj = std::size_t((double(j) + 0.5) * double(w) / double(nw));
                REQUIRE(out.at(i, j) == m.at(si, sj));
            }
    }
}

TEST_CASE("resize_nearest never introduces absent classes") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        LabelMap m = testutil::random_map(rng, 5, 7, 4);
        std::set<ClassId> source(m.data().begin(), m.data().end());
        LabelMap out = resize_nearest(m, 1 + rng.below(30), 1 + rng.below(30));
        for (ClassId v : out.data()) CHECK(source.count(v) == 1);
    }
    LabelMap constant(3, 3, std::vector<ClassId>(9, 4));
    LabelMap out = resize_nearest(constant, 10, 2);
    CHECK(std::all_of(out.data().begin(), out.data().end(),
                      [](ClassId v) { return v == 4; }));
}

TEST_CASE("lesion_flag detects any lesion pixel") {
    const ClassCatalog catalog = default_catalog();
    LabelMap quiet(4, 4);
    CHECK(lesion_flag(quiet, catalog) == 0);
    LabelMap one(4, 4);
    one.at(2, 3) = catalog.lesion_class();
    CHECK(lesion_flag(one, catalog) == 1);
}

TEST_CASE("lesion_flag equals a brute-force count oracle on random maps") {
    const ClassCatalog catalog = default_catalog();
    Rng rng(41);
    for (int trial = 0; trial < 100; ++trial) {
        LabelMap m = testutil::random_map(rng, 8, 8, 7);
        std::size_t count = 0;
        for (ClassId v : m.data())
            if (v == catalog.lesion_class()) ++count;
        CHECK(lesion_flag(m, catalog) == (count > 0 ? 1 : 0));
    }
}

TEST_CASE("label maps reject zero-sized construction") {
    CHECK_THROWS_AS(LabelMap(0, 4), Error);
    CHECK_THROWS_AS(LabelMap(4, 0), Error);
}

TEST_CASE("catalog construction enforces its invariants") {
    CHECK_THROWS_AS(ClassCatalog({{0, "a", {}}, {2, "b", {}}}, 0), Error); // gap in ids
    CHECK_THROWS_AS(ClassCatalog({{0, "a", {}}, {1, "a", {}}}, 0), Error); // duplicate name
    CHECK_THROWS_AS(ClassCatalog({{0, "a", {}}}, 3), Error);               // lesion outside
    const ClassCatalog catalog = default_catalog();
    CHECK(catalog.size() == 7);
    CHECK(catalog.lesion_class() == 6);
    CHECK(catalog.entry(6).name == "infarct");
}
