#include <doctest.h>

#include <cmath>

#include "iism/image_io.hpp"
#include "iism/maskvae.hpp"
#include "iism/phantom.hpp"
#include "iism/store.hpp"
#include "test_helpers.hpp"

using namespace iism;

TEST_CASE("kl divergence closed forms") {
    Gaussian<double> q{Tensor<double>({1, 1}), Tensor<double>({1, 1})};
    q.mu[0] = 0.0;
    q.logvar[0] = 0.0;
    CHECK(kl_divergence(q) == 0.0); // prior equals posterior, exactly

    q.mu[0] = 1.0;
    CHECK(kl_divergence(q) == doctest::Approx(0.5).epsilon(1e-12));

    q.mu[0] = 0.0;
    q.logvar[0] = std::log(4.0);
    CHECK(kl_divergence(q) ==
          doctest::Approx(0.5 * (4.0 - 1.0 - std::log(4.0))).epsilon(1e-12));
}

TEST_CASE("kl divergence is non-negative and zero only at the prior") {
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        Gaussian<double> q{Tensor<double>({1, 5}), Tensor<double>({1, 5})};
        for (std::size_t i = 0; i < 5; ++i) {
            q.mu[i] = rng.normal(0.0, 2.0);
            q.logvar[i] = rng.uniform(-3.0, 3.0);
        }
        CHECK(kl_divergence(q) >= 0.0);
    }
}

TEST_CASE("kl gradients match finite differences") {
    Rng rng(15);
    Gaussian<double> q{Tensor<double>({2, 3}), Tensor<double>({2, 3})};
    for (std::size_t i = 0; i < q.mu.size(); ++i) {
        q.mu[i] = rng.normal(0.0, 1.5);
        q.logvar[i] = rng.uniform(-2.0, 2.0);
    }
    auto [dmu, dlogvar] = kl_backward(q);
    auto loss = [&] { return kl_divergence(q); };
    testutil::check_gradient({q.mu.data(), q.mu.size()}, {dmu.data(), dmu.size()}, loss);
    testutil::check_gradient({q.logvar.data(), q.logvar.size()},
                             {dlogvar.data(), dlogvar.size()}, loss);
}

TEST_CASE("cross entropy of uniform logits is ln C") {
    Tensor<double> logits({1, 7, 2, 2});
    logits.fill(0.7);
    std::vector<ClassId> labels{0, 3, 6, 1};
    CHECK(softmax_cross_entropy(logits, labels) ==
          doctest::Approx(std::log(7.0)).epsilon(1e-12));
}

TEST_CASE("cross entropy vanishes on confident one-hot logits") {
    LabelMap m(4, 4, {0, 1, 2, 3, 4, 5, 6, 0, 1, 2, 3, 4, 5, 6, 0, 1});
    OneHotMask x = onehot(m, 7);
    Tensor<double> logits({1, 7, 4, 4});
    for (std::size_t i = 0; i < x.data.size(); ++i) logits[i] = 20.0 * double(x.data[i]);
    const double loss = softmax_cross_entropy(logits, m.data());
    CHECK(loss < 1e-3);
}

TEST_CASE("cross entropy single-pixel closed form") {
    Tensor<double> logits({1, 7, 1, 1});
    logits[0] = 2.0; // remaining channels zero
    std::vector<ClassId> labels{0};
    // -ln(e^2 / (e^2 + 6))
    const double expected = std::log1p(6.0 * std::exp(-2.0));
    CHECK(softmax_cross_entropy(logits, labels) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("cross entropy is invariant to per-pixel constant shifts") {
    Rng rng(32);
    Tensor<double> logits({2, 7, 3, 3});
    for (auto& v : logits.storage()) v = rng.normal(0.0, 2.0);
    std::vector<ClassId> labels(2 * 9);
    for (auto& y : labels) y = ClassId(rng.below(7));
    const double base = softmax_cross_entropy(logits, labels);

    Tensor<double> shifted = logits;
    const std::size_t pixels = 9;
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t p = 0; p < pixels; ++p) {
            const double offset = rng.uniform(-10.0, 10.0);
            for (std::size_t c = 0; c < 7; ++c)
                shifted[(n * 7 + c) * pixels + p] += offset;
        }
    CHECK(softmax_cross_entropy(shifted, labels) == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("cross entropy gradient matches finite differences") {
    Rng rng(33);
    Tensor<double> logits({1, 7, 1, 1});
    for (auto& v : logits.storage()) v = rng.normal(0.0, 1.0);
    std::vector<ClassId> labels{4};
    Tensor<double> dlogits;
    softmax_cross_entropy(logits, labels, &dlogits);
    auto loss = [&] { return softmax_cross_entropy(logits, labels); };
    testutil::check_gradient({logits.data(), logits.size()},
                             {dlogits.data(), dlogits.size()}, loss);
}

TEST_CASE("cross entropy rejects out-of-range labels") {
    Tensor<double> logits({1, 3, 1, 1});
    std::vector<ClassId> labels{3};
    CHECK_THROWS_AS(softmax_cross_entropy(logits, labels), Error);
}

TEST_CASE("reparameterization hand cases") {
    Gaussian<double> q{Tensor<double>({1, 2}), Tensor<double>({1, 2})};
    q.mu.storage() = {1.0, 1.0};
    q.logvar.storage() = {std::log(4.0), std::log(4.0)};
    Tensor<double> eps({1, 2});

    eps.storage() = {0.0, 0.0};
    Tensor<double> z = reparameterize(q, eps);
    CHECK(z[0] == doctest::Approx(1.0));
    CHECK(z[1] == doctest::Approx(1.0)); // eps = 0 -> z = mu

    eps.storage() = {1.0, -1.0};
    z = reparameterize(q, eps);
    CHECK(z[0] == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(z[1] == doctest::Approx(-1.0).epsilon(1e-12));

    q.mu.storage() = {0.0, 0.0};
    q.logvar.storage() = {0.0, 0.0};
    eps.storage() = {0.25, -1.75};
    z = reparameterize(q, eps);
    CHECK(z[0] == doctest::Approx(0.25));
    CHECK(z[1] == doctest::Approx(-1.75)); // standard-normal identity
}

TEST_CASE("reparameterization is linear in eps with slope exp(logvar/2)") {
    Rng rng(44);
    Gaussian<double> q{Tensor<double>({1, 4}), Tensor<double>({1, 4})};
    for (std::size_t i = 0; i < 4; ++i) {
        q.mu[i] = rng.normal(0.0, 1.0);
        q.logvar[i] = rng.uniform(-2.0, 2.0);
    }
    Tensor<double> zero({1, 4});
    Tensor<double> eps({1, 4});
    for (auto& v : eps.storage()) v = rng.normal(0.0, 1.0);
    const Tensor<double> base = reparameterize(q, zero);
    const Tensor<double> moved = reparameterize(q, eps);
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(moved[i] - base[i] ==
              doctest::Approx(std::exp(q.logvar[i] / 2.0) * eps[i]).epsilon(1e-12));
}

TEST_CASE("vae_loss composes rec + beta * kl") {
    Rng rng(51);
    Tensor<double> logits({1, 7, 2, 2});
    for (auto& v : logits.storage()) v = rng.normal(0.0, 1.0);
    std::vector<ClassId> labels{1, 2, 3, 4};
    Gaussian<double> q{Tensor<double>({1, 3}), Tensor<double>({1, 3})};
    for (std::size_t i = 0; i < 3; ++i) q.mu[i] = rng.normal(0.0, 1.0);

    const VaeLossValue a = vae_loss(logits, labels, q, 0.0);
    CHECK(a.total == a.reconstruction); // beta = 0 adds exactly nothing

    const VaeLossValue b = vae_loss(logits, labels, q, 0.01);
    CHECK(b.total == doctest::Approx(b.reconstruction + 0.01 * b.kl).epsilon(1e-15));

    // Constructed case: kl = 10 (D=1, logvar=0, mu = sqrt(20)).
    Gaussian<double> q10{Tensor<double>({1, 1}), Tensor<double>({1, 1})};
    q10.mu[0] = std::sqrt(20.0);
    Tensor<double> uniform({1, 7, 1, 1});
    std::vector<ClassId> one{0};
    const VaeLossValue c = vae_loss(uniform, one, q10, 0.01);
    CHECK(c.kl == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(c.total == doctest::Approx(c.reconstruction + 0.1).epsilon(1e-12));

    // Non-decreasing in beta for kl >= 0.
    CHECK(vae_loss(logits, labels, q, 0.5).total >= vae_loss(logits, labels, q, 0.1).total);
}

TEST_CASE("encoder feature-grid shape contracts") {
    VaeConfig paper;
    paper.height = 256;
    paper.width = 256;
    paper.latent_dim = 256;
    CHECK(paper.feature_height() == 16);
    CHECK(paper.feature_width() == 16);
    CHECK(paper.flat_features() == 256 * 16 * 16);

    VaeConfig desk;
    desk.height = 64;
    desk.width = 64;
    desk.latent_dim = 64;
    desk.seed = 5;
    Vae model(desk);
    Rng rng(5);
    model.init(rng);

    Rng mrng(6);
    const LabelMap m = testutil::random_map(mrng, 64, 64, 7);
    const OneHotMask x = onehot(m, 7);
    Tensor<float> xt({1, 7, 64, 64});
    for (std::size_t i = 0; i < x.data.size(); ++i) xt[i] = float(x.data[i]);

    typename Vae::EncCache cache;
    const Gaussian<float> q = model.encode(xt, &cache);
    CHECK(cache.r4.shape() == std::vector<std::size_t>{1, 256, 4, 4}); // 4 halvings of 64
    CHECK(q.mu.shape() == std::vector<std::size_t>{1, 64});

    const Gaussian<float> q2 = model.encode(xt);
    CHECK(q.mu.storage() == q2.mu.storage()); // deterministic
    CHECK(q.logvar.storage() == q2.logvar.storage());

    const Tensor<float> logits = model.decode(q.mu);
    CHECK(logits.shape() == std::vector<std::size_t>{1, 7, 64, 64});
    const Tensor<float> logits2 = model.decode(q.mu);
    CHECK(logits.storage() == logits2.storage());

    Tensor<float> wrong({1, 7, 32, 32});
    CHECK_THROWS_AS(model.encode(wrong), Error);
}

TEST_CASE("config validation rejects sizes the four stages cannot halve") {
    VaeConfig cfg;
    cfg.height = 40;
    cfg.width = 40;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = VaeConfig{};
    cfg.latent_dim = 0;
    CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("whole-VAE analytic gradients match finite differences on a toy instance") {
    VaeConfig cfg;
    cfg.latent_dim = 2;
    cfg.encoder_channels = {2, 3, 4, 5};
    cfg.in_channels = 3;
    cfg.height = 16;
    cfg.width = 16;
    cfg.beta = 0.01;
    VaeModel<double> model(cfg);
    Rng rng(123);
    model.init(rng);
    // Zero-initialized biases leave dead ReLU positions exactly on the kink,
    // where central differences and the subgradient legitimately disagree;
    // nudge every parameter off zero.
    for (auto& p : model.params())
        for (auto& v : p.value->storage()) v += rng.normal(0.0, 0.05);

    Rng mrng(9);
    const LabelMap m = testutil::random_map(mrng, 16, 16, 3);
    Tensor<double> x({1, 3, 16, 16});
    for (std::size_t p = 0; p < 256; ++p) x[std::size_t(m.data()[p]) * 256 + p] = 1.0;
    Tensor<double> eps({1, 2});
    eps.storage() = {0.37, -1.21};

    auto loss = [&] {
        const Gaussian<double> q = model.encode(x);
        const Tensor<double> z = reparameterize(q, eps);
        const Tensor<double> logits = model.decode(z);
        return vae_loss(logits, m.data(), q, cfg.beta).total;
    };

    // One analytic backward pass over the whole objective.
    typename VaeModel<double>::EncCache ec;
    const Gaussian<double> q = model.encode(x, &ec);
    const Tensor<double> z = reparameterize(q, eps);
    typename VaeModel<double>::DecCache dc;
    const Tensor<double> logits = model.decode(z, &dc);
    Tensor<double> dlogits;
    vae_loss(logits, m.data(), q, cfg.beta, &dlogits);
    for (auto& p : model.params()) p.grad->set_zero();
    const Tensor<double> dz = model.decode_backward(dc, dlogits);
    auto [dmu, dlogvar] = reparameterize_backward(q, eps, dz);
    auto [dmu_kl, dlv_kl] = kl_backward(q);
    for (std::size_t i = 0; i < dmu.size(); ++i) {
        dmu[i] += cfg.beta * dmu_kl[i];
        dlogvar[i] += cfg.beta * dlv_kl[i];
    }
    model.encode_backward(ec, dmu, dlogvar);

    for (auto& p : model.params()) {
        INFO("parameter tensor ", p.name);
        testutil::check_gradient({p.value->data(), p.value->size()},
                                 {p.grad->data(), p.grad->size()}, loss, 1e-5, 1e-3, 1e-10);
    }
}

TEST_CASE("one-epoch training round-trips through its checkpoint") {
    testutil::TempDir dir("vae_smoke");
    PhantomConfig pcfg;
    pcfg.image_size = 32;
    pcfg.lesion_probability = 0.5;
    pcfg.seed = 77;
    pcfg.slices_per_volume = 2;
    const Manifest manifest = generate_corpus(pcfg, 4, dir.path() / "corpus");
    REQUIRE(manifest.records.size() == 8);

    VaeConfig cfg;
    cfg.latent_dim = 8;
    cfg.encoder_channels = {4, 8, 8, 16};
    cfg.height = 32;
    cfg.width = 32;
    cfg.epochs = 1;
    cfg.batch_size = 4;
    cfg.seed = 3;
    const VaeTrainResult result =
        train_vae(cfg, manifest, SamplerWeights{}, dir.path() / "ckpt");
    REQUIRE(result.curve.size() == 1);
    CHECK(result.best_epoch == 1);
    CHECK(std::filesystem::exists(result.best_checkpoint / "meta.json"));
    CHECK(std::filesystem::exists(dir.path() / "ckpt" / "training_curve.csv"));

    // Reload and recompute the validation loss; it must match the curve.
    const Vae reloaded = vae_from_checkpoint(load_checkpoint(result.best_checkpoint));
    const auto val_idx = manifest.split_indices(Split::val);
    REQUIRE(!val_idx.empty());
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < val_idx.size(); start += cfg.batch_size) {
        const std::size_t stop = std::min(val_idx.size(), start + cfg.batch_size);
        std::vector<LabelMap> maps;
        std::vector<const LabelMap*> ptrs;
        for (std::size_t i = start; i < stop; ++i)
            maps.push_back(resize_nearest(
                read_label_map(manifest.resolve(manifest.records[val_idx[i]])), 32, 32));
        for (const auto& mp : maps) ptrs.push_back(&mp);
        const TrainingBatch batch = make_training_batch(ptrs, 7);
        const Gaussian<float> q = reloaded.encode(batch.x);
        const Tensor<float> logits = reloaded.decode(q.mu);
        total += vae_loss(logits, std::span<const ClassId>(batch.labels), q, cfg.beta).total;
        ++batches;
    }
    CHECK(total / double(batches) ==
          doctest::Approx(result.curve.back().val_total).epsilon(1e-6));
}

TEST_CASE("reconstruct_mask runs the encode-decode path end to end") {
    VaeConfig cfg;
    cfg.latent_dim = 4;
    cfg.encoder_channels = {2, 2, 4, 4};
    cfg.height = 32;
    cfg.width = 32;
    Vae model(cfg);
    Rng rng(1);
    model.init(rng);
    Rng mrng(2);
    const LabelMap input = testutil::random_map(mrng, 16, 16, 7);
    const LabelMap recon = reconstruct_mask(model, input);
    CHECK(recon.height() == 32);
    CHECK(recon.width() == 32);
}
