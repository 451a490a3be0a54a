#include <doctest.h>

#include <cmath>

#include "iism/eval.hpp"
#include "iism/figures.hpp"
#include "iism/phantom.hpp"
#include "test_helpers.hpp"

using namespace iism;

namespace {

std::vector<LabelMap> phantom_corpus(double lesion_prob, std::uint64_t seed, std::size_t n,
                                     std::size_t size = 32) {
    PhantomConfig cfg;
    cfg.image_size = size;
    cfg.lesion_probability = lesion_prob;
    cfg.seed = seed;
    std::vector<LabelMap> masks;
    for (std::size_t k = 0; k < n; ++k) {
        Rng rng = Rng(seed).fork(k);
        masks.push_back(generate_slice(cfg, rng).map);
    }
    return masks;
}

} // namespace

TEST_CASE("class distribution basics") {
    std::vector<LabelMap> single{LabelMap(4, 4)};
    const ClassDistribution d = class_distribution(single, 7);
    CHECK(d.fractions[0] == doctest::Approx(1.0));
    for (std::size_t c = 1; c < 7; ++c) CHECK(d.fractions[c] == doctest::Approx(0.0));

    LabelMap half(2, 2, {0, 0, 4, 4});
    std::vector<LabelMap> pair{half};
    const ClassDistribution h = class_distribution(pair, 7);
    CHECK(h.fractions[0] == doctest::Approx(0.5));
    CHECK(h.fractions[4] == doctest::Approx(0.5));

    CHECK_THROWS_AS(class_distribution({}, 7), Error);
}

TEST_CASE("class distribution equals an independent counting pass") {
    const auto corpus = phantom_corpus(0.5, 77, 12);
    const ClassDistribution d = class_distribution(corpus, 7);
    std::vector<double> counts(7, 0.0);
    double total = 0.0;
    for (const auto& m : corpus)
        for (ClassId v : m.data()) {
            counts[v] += 1.0;
            total += 1.0;
        }
    double sum = 0.0;
    for (std::size_t c = 0; c < 7; ++c) {
        CHECK(d.fractions[c] == doctest::Approx(counts[c] / total).epsilon(1e-12));
        sum += d.fractions[c];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("distribution report deltas and total variation") {
    ClassDistribution a{{1, 0, 0, 0, 0, 0, 0}};
    ClassDistribution b{{0, 1, 0, 0, 0, 0, 0}};
    CHECK(distribution_report(a, a).total_variation == doctest::Approx(0.0));
    CHECK(distribution_report(a, b).total_variation == doctest::Approx(1.0));

    Rng rng(3);
    std::vector<double> u(7), v(7);
    double su = 0.0, sv = 0.0;
    for (int c = 0; c < 7; ++c) {
        u[c] = rng.uniform(0.01, 1.0);
        v[c] = rng.uniform(0.01, 1.0);
        su += u[c];
        sv += v[c];
    }
    for (int c = 0; c < 7; ++c) {
        u[c] /= su;
        v[c] /= sv;
    }
    double manual = 0.0;
    for (int c = 0; c < 7; ++c) manual += std::abs(u[c] - v[c]);
    manual *= 0.5;
    const DistributionReport r = distribution_report({u}, {v});
    CHECK(r.total_variation == doctest::Approx(manual).epsilon(1e-12));
    CHECK(r.total_variation >= 0.0);
    CHECK(r.total_variation <= 1.0);
    for (int c = 0; c < 7; ++c)
        CHECK(r.delta[c] == doctest::Approx(v[c] - u[c]).epsilon(1e-12));
}

TEST_CASE("feature extraction: all-background mask") {
    LabelMap m(8, 8);
    const auto f = extract_features(m, 7);
    REQUIRE(f.size() == 35); // 5C for C = 7
    CHECK(f[0] == doctest::Approx(1.0));                     // background area
    CHECK(f[1] == doctest::Approx(7.0 / 16.0));              // (H-1)/(2H), grid mean
    CHECK(f[2] == doctest::Approx(7.0 / 16.0));
    // Absent classes report the grid-center centroid and zero variance.
    for (std::size_t c = 1; c < 7; ++c) {
        CHECK(f[5 * c + 0] == doctest::Approx(0.0));
        CHECK(f[5 * c + 1] == doctest::Approx(7.0 / 16.0));
        CHECK(f[5 * c + 3] == doctest::Approx(0.0));
    }
}

TEST_CASE("feature extraction matches a direct loop oracle") {
    Rng rng(101);
    const LabelMap m = testutil::random_map(rng, 10, 6, 7);
    const auto f = extract_features(m, 7);
    for (std::size_t c = 0; c < 7; ++c) {
        double count = 0, sr = 0, sc = 0, srr = 0, scc = 0;
        for (std::size_t i = 0; i < 10; ++i)
            for (std::size_t j = 0; j < 6; ++j)
                if (m.at(i, j) == c) {
                    count += 1;
                    sr += double(i) / 10.0;
                    sc += double(j) / 6.0;
                    srr += (double(i) / 10.0) * (double(i) / 10.0);
                    scc += (double(j) / 6.0) * (double(j) / 6.0);
                }
        CHECK(f[5 * c + 0] == doctest::Approx(count / 60.0).epsilon(1e-12));
        if (count > 0) {
            CHECK(f[5 * c + 1] == doctest::Approx(sr / count).epsilon(1e-12));
            CHECK(f[5 * c + 2] == doctest::Approx(sc / count).epsilon(1e-12));
            CHECK(f[5 * c + 3] ==
                  doctest::Approx(srr / count - (sr / count) * (sr / count)).epsilon(1e-9));
            CHECK(f[5 * c + 4] ==
                  doctest::Approx(scc / count - (sc / count) * (sc / count)).epsilon(1e-9));
        }
    }
}

TEST_CASE("area features are invariant under horizontal mirroring") {
    Rng rng(7);
    const LabelMap m = testutil::random_map(rng, 8, 8, 7);
    LabelMap mirrored(8, 8);
    for (std::size_t i = 0; i < 8; ++i)
        for (std::size_t j = 0; j < 8; ++j) mirrored.at(i, j) = m.at(i, 7 - j);
    const auto fa = extract_features(m, 7);
    const auto fb = extract_features(mirrored, 7);
    for (std::size_t c = 0; c < 7; ++c)
        CHECK(fa[5 * c] == doctest::Approx(fb[5 * c]).epsilon(1e-12));
}

TEST_CASE("frechet distance closed forms in one dimension") {
    auto stats = [](double mean, double var) {
        FeatureStats s;
        s.mean = Eigen::VectorXd::Constant(1, mean);
        s.covariance = Eigen::MatrixXd::Constant(1, 1, var);
        s.count = 10;
        return s;
    };
    CHECK(frechet_distance(stats(0.3, 1.7), stats(0.3, 1.7)) ==
          doctest::Approx(0.0).epsilon(1e-12));
    const double delta = 1.37;
    CHECK(frechet_distance(stats(0.0, 1.0), stats(delta, 1.0)) ==
          doctest::Approx(delta * delta).epsilon(1e-9));
    // std 1 vs 3: (sigma1 - sigma2)^2 = 4.
    CHECK(frechet_distance(stats(0.0, 1.0), stats(0.0, 9.0)) ==
          doctest::Approx(4.0).epsilon(1e-9));
}

TEST_CASE("frechet distance is symmetric and monotone in mean separation") {
    Rng rng(9);
    const std::size_t f = 5;
    Eigen::MatrixXd base = Eigen::MatrixXd::Random(f, f);
    Eigen::MatrixXd cov = base * base.transpose() + Eigen::MatrixXd::Identity(f, f);
    FeatureStats a, b;
    a.mean = Eigen::VectorXd::Random(f);
    a.covariance = cov;
    a.count = 20;
    b = a;
    b.mean = a.mean + Eigen::VectorXd::Constant(f, 0.5);
    const double dab = frechet_distance(a, b);
    const double dba = frechet_distance(b, a);
    CHECK(dab == doctest::Approx(dba).epsilon(1e-9));
    CHECK(dab >= -1e-8);

    double previous = 0.0;
    for (double step : {0.1, 0.5, 1.0, 2.0}) {
        FeatureStats c = a;
        c.mean = a.mean + Eigen::VectorXd::Constant(f, step);
        const double d = frechet_distance(a, c);
        CHECK(d > previous);
        previous = d;
    }
}

TEST_CASE("frechet distance validates inputs") {
    FeatureStats a, b;
    a.mean = Eigen::VectorXd::Zero(2);
    a.covariance = Eigen::MatrixXd::Identity(2, 2);
    b.mean = Eigen::VectorXd::Zero(3);
    b.covariance = Eigen::MatrixXd::Identity(3, 3);
    CHECK_THROWS_AS(frechet_distance(a, b), Error);

    FeatureStats skew = a;
    skew.covariance(0, 1) = 0.5; // asymmetric
    FeatureStats a2 = a;
    CHECK_THROWS_AS(frechet_distance(skew, a2), Error);
}

TEST_CASE("fid identities and orderings on phantom corpora") {
    const auto corpus = phantom_corpus(0.5, 31, 80);
    CHECK(fid(corpus, corpus, 7) <= 1e-6);

    const auto lesion_free = phantom_corpus(0.0, 32, 60);
    const auto lesion_full = phantom_corpus(1.0, 33, 60);
    const double cross = fid(lesion_free, lesion_full, 7);
    CHECK(cross > 0.0);

    // Two halves of one corpus are closer than lesion-free vs lesion-only.
    const auto big = phantom_corpus(0.5, 40, 160);
    const std::vector<LabelMap> first(big.begin(), big.begin() + 80);
    const std::vector<LabelMap> second(big.begin() + 80, big.end());
    const double self_distance = fid(first, second, 7);
    CHECK(self_distance < cross);

    std::vector<LabelMap> tiny(big.begin(), big.begin() + 10);
    CHECK_THROWS_WITH_AS(fid(tiny, big, 7), doctest::Contains("36"), Error);
}

TEST_CASE("chart and grid rendering produce sane rasters") {
    ClassDistribution a{{0.5, 0.1, 0.1, 0.1, 0.1, 0.05, 0.05}};
    ClassDistribution b{{0.45, 0.15, 0.1, 0.1, 0.1, 0.05, 0.05}};
    const RgbImage chart =
        render_class_distribution_chart(distribution_report(a, b), default_catalog());
    CHECK(chart.height > 0);
    CHECK(chart.pixels.size() == 3 * chart.height * chart.width);

    const auto masks = phantom_corpus(1.0, 3, 4);
    const RgbImage grid = render_mask_grid({masks, masks}, default_catalog(), 48);
    CHECK(grid.height == 2 * (48 + 4) + 4);
    CHECK(grid.width == 4 * (48 + 4) + 4);
}
