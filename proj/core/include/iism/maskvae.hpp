#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "iism/dataset.hpp"
#include "iism/label.hpp"
#include "iism/nn.hpp"
#include "iism/rng.hpp"
#include "iism/tensor.hpp"

namespace iism {

inline constexpr double kLogVarMin = -30.0;
inline constexpr double kLogVarMax = 20.0;

struct VaeConfig {
    std::size_t latent_dim = 64;
    std::array<std::size_t, 4> encoder_channels{32, 64, 128, 256};
    std::size_t in_channels = 7;
    std::size_t height = 64;
    std::size_t width = 64;
    double beta = 0.01;
    // Initial bias of the logvar head. Starting the posteriors tight
    // (sigma^2 = e^-3) lets short training runs keep information in the
    // latent instead of drowning it in sampling noise; dims the model does
    // not use drift back to the prior under the KL term.
    double logvar_bias_init = -3.0;
    double learning_rate = 1e-3;
    std::size_t batch_size = 32;
    std::size_t epochs = 20;
    std::uint64_t seed = 0;

    // Four stride-2 stages must divide the spatial extent by 16 exactly.
    void validate() const;
    std::size_t feature_height() const { return height / 16; }
    std::size_t feature_width() const { return width / 16; }
    std::size_t flat_features() const {
        return encoder_channels[3] * feature_height() * feature_width();
    }
};

// Diagonal Gaussian posterior parameters, one row per batch item. logvar is
// clamped to [-30, 20] before anything exponentiates it.
template <typename T>
struct Gaussian {
    Tensor<T> mu;     // (N, D)
    Tensor<T> logvar; // (N, D)
};

// Encoder: four k4/s2/p1 convolutions with ReLU, flattened and projected to
// (mu, logvar). Decoder mirrors it: linear to the deepest feature grid, four
// k4/s2/p1 transposed convolutions with ReLU, then a 1x1 head to C logits.
template <typename T>
struct VaeModel {
    VaeConfig cfg;
    nn::Conv2d<T> enc1, enc2, enc3, enc4;
    nn::Linear<T> fc_mu, fc_logvar;
    nn::Linear<T> dec_fc;
    nn::ConvTranspose2d<T> up1, up2, up3, up4;
    nn::Conv2d<T> head;

    explicit VaeModel(const VaeConfig& config) : cfg(config) {
        cfg.validate();
        const auto& ch = cfg.encoder_channels;
        enc1 = nn::Conv2d<T>(cfg.in_channels, ch[0], 4, 2, 1);
        enc2 = nn::Conv2d<T>(ch[0], ch[1], 4, 2, 1);
        enc3 = nn::Conv2d<T>(ch[1], ch[2], 4, 2, 1);
        enc4 = nn::Conv2d<T>(ch[2], ch[3], 4, 2, 1);
        fc_mu = nn::Linear<T>(cfg.flat_features(), cfg.latent_dim);
        fc_logvar = nn::Linear<T>(cfg.flat_features(), cfg.latent_dim);
        dec_fc = nn::Linear<T>(cfg.latent_dim, cfg.flat_features());
        up1 = nn::ConvTranspose2d<T>(ch[3], ch[2], 4, 2, 1);
        up2 = nn::ConvTranspose2d<T>(ch[2], ch[1], 4, 2, 1);
        up3 = nn::ConvTranspose2d<T>(ch[1], ch[0], 4, 2, 1);
        up4 = nn::ConvTranspose2d<T>(ch[0], ch[0], 4, 2, 1);
        head = nn::Conv2d<T>(ch[0], cfg.in_channels, 1, 1, 0);
    }

    void init(Rng& rng) {
        enc1.init_he(rng);
        enc2.init_he(rng);
        enc3.init_he(rng);
        enc4.init_he(rng);
        fc_mu.init_he(rng);
        fc_logvar.init_he(rng);
        fc_logvar.bias.fill(T(cfg.logvar_bias_init));
        dec_fc.init_he(rng);
        up1.init_he(rng);
        up2.init_he(rng);
        up3.init_he(rng);
        up4.init_he(rng);
        head.init_he(rng);
    }

    std::vector<nn::ParamRef<T>> params() {
        std::vector<nn::ParamRef<T>> out;
        auto add = [&](std::vector<nn::ParamRef<T>> p) {
            out.insert(out.end(), p.begin(), p.end());
        };
        add(enc1.params("enc.conv1"));
        add(enc2.params("enc.conv2"));
        add(enc3.params("enc.conv3"));
        add(enc4.params("enc.conv4"));
        add(fc_mu.params("enc.fc_mu"));
        add(fc_logvar.params("enc.fc_logvar"));
        add(dec_fc.params("dec.fc"));
        add(up1.params("dec.up1"));
        add(up2.params("dec.up2"));
        add(up3.params("dec.up3"));
        add(up4.params("dec.up4"));
        add(head.params("dec.head"));
        return out;
    }

    struct EncCache {
        Tensor<T> x, cols1, a1, r1, cols2, a2, r2, cols3, a3, r3, cols4, a4, r4;
        Tensor<T> logvar_raw;
    };

    Gaussian<T> encode(const Tensor<T>& x, EncCache* cache = nullptr) const {
        if (x.rank() != 4 || x.dim(1) != cfg.in_channels || x.dim(2) != cfg.height ||
            x.dim(3) != cfg.width)
            throw_error(ErrorKind::validation, "encoder input does not match configured size");
        EncCache local;
        EncCache& c = cache ? *cache : local;
        c.x = x;
        c.a1 = enc1.forward(x, &c.cols1);
        c.r1 = nn::relu(c.a1);
        c.a2 = enc2.forward(c.r1, &c.cols2);
        c.r2 = nn::relu(c.a2);
        c.a3 = enc3.forward(c.r2, &c.cols3);
        c.r3 = nn::relu(c.a3);
        c.a4 = enc4.forward(c.r3, &c.cols4);
        c.r4 = nn::relu(c.a4);
        const std::size_t n = x.dim(0);
        Tensor<T> flat = c.r4;
        flat.reshape({n, cfg.flat_features()});
        Gaussian<T> q;
        q.mu = fc_mu.forward(flat);
        c.logvar_raw = fc_logvar.forward(flat);
        q.logvar = c.logvar_raw;
        for (auto& v : q.logvar.storage())
            v = std::min(T(kLogVarMax), std::max(T(kLogVarMin), v));
        return q;
    }

    // Accumulates parameter gradients; returns nothing because the input is
    // data, not a differentiable quantity.
    void encode_backward(const EncCache& c, const Tensor<T>& dmu, const Tensor<T>& dlogvar) {
        const std::size_t n = c.x.dim(0);
        Tensor<T> dlogvar_raw = dlogvar;
        for (std::size_t i = 0; i < dlogvar_raw.size(); ++i) {
            const T raw = c.logvar_raw[i];
            if (raw < T(kLogVarMin) || raw > T(kLogVarMax)) dlogvar_raw[i] = T(0);
        }
        Tensor<T> flat = c.r4;
        flat.reshape({n, cfg.flat_features()});
        Tensor<T> dflat = fc_mu.backward(flat, dmu);
        Tensor<T> dflat2 = fc_logvar.backward(flat, dlogvar_raw);
        dflat.vec() += dflat2.vec();
        dflat.reshape(c.r4.shape());
        Tensor<T> da4 = nn::relu_backward(c.a4, dflat);
        Tensor<T> dr3 = enc4.backward(c.r3, c.cols4, da4);
        Tensor<T> da3 = nn::relu_backward(c.a3, dr3);
        Tensor<T> dr2 = enc3.backward(c.r2, c.cols3, da3);
        Tensor<T> da2 = nn::relu_backward(c.a2, dr2);
        Tensor<T> dr1 = enc2.backward(c.r1, c.cols2, da2);
        Tensor<T> da1 = nn::relu_backward(c.a1, dr1);
        enc1.backward(c.x, c.cols1, da1);
    }

    struct DecCache {
        Tensor<T> z, f, fgrid, b1, s1, b2, s2, b3, s3, b4, s4, cols_head;
    };

    // z (N, D) -> logits (N, C, H, W)
    Tensor<T> decode(const Tensor<T>& z, DecCache* cache = nullptr) const {
        if (z.rank() != 2 || z.dim(1) != cfg.latent_dim)
            throw_error(ErrorKind::validation, "latent input does not match configured D");
        DecCache local;
        DecCache& c = cache ? *cache : local;
        const std::size_t n = z.dim(0);
        c.z = z;
        c.f = dec_fc.forward(z);
        c.fgrid = c.f;
        c.fgrid.reshape({n, cfg.encoder_channels[3], cfg.feature_height(), cfg.feature_width()});
        c.b1 = up1.forward(c.fgrid);
        c.s1 = nn::relu(c.b1);
        c.b2 = up2.forward(c.s1);
        c.s2 = nn::relu(c.b2);
        c.b3 = up3.forward(c.s2);
        c.s3 = nn::relu(c.b3);
        c.b4 = up4.forward(c.s3);
        c.s4 = nn::relu(c.b4);
        return head.forward(c.s4, &c.cols_head);
    }

    // dlogits -> dz; accumulates parameter gradients.
    Tensor<T> decode_backward(const DecCache& c, const Tensor<T>& dlogits) {
        const std::size_t n = c.z.dim(0);
        Tensor<T> ds4 = head.backward(c.s4, c.cols_head, dlogits);
        Tensor<T> db4 = nn::relu_backward(c.b4, ds4);
        Tensor<T> ds3 = up4.backward(c.s3, db4);
        Tensor<T> db3 = nn::relu_backward(c.b3, ds3);
        Tensor<T> ds2 = up3.backward(c.s2, db3);
        Tensor<T> db2 = nn::relu_backward(c.b2, ds2);
        Tensor<T> ds1 = up2.backward(c.s1, db2);
        Tensor<T> db1 = nn::relu_backward(c.b1, ds1);
        Tensor<T> dfgrid = up1.backward(c.fgrid, db1);
        dfgrid.reshape({n, cfg.flat_features()});
        return dec_fc.backward(c.z, dfgrid);
    }
};

// z = mu + exp(logvar / 2) * eps, elementwise.
template <typename T>
Tensor<T> reparameterize(const Gaussian<T>& q, const Tensor<T>& eps) {
    if (eps.size() != q.mu.size())
        throw_error(ErrorKind::validation, "reparameterization noise size mismatch");
    Tensor<T> z = q.mu;
    for (std::size_t i = 0; i < z.size(); ++i)
        z[i] += std::exp(q.logvar[i] / T(2)) * eps[i];
    return z;
}

// dz -> (dmu, dlogvar) contribution of the reparameterization path.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> reparameterize_backward(const Gaussian<T>& q,
                                                        const Tensor<T>& eps,
                                                        const Tensor<T>& dz) {
    Tensor<T> dmu = dz;
    Tensor<T> dlogvar(dz.shape());
    for (std::size_t i = 0; i < dz.size(); ++i)
        dlogvar[i] = dz[i] * eps[i] * T(0.5) * std::exp(q.logvar[i] / T(2));
    return {std::move(dmu), std::move(dlogvar)};
}

// KL(q || N(0, I)) = 0.5 * sum_d (mu^2 + exp(logvar) - 1 - logvar), summed
// over dimensions and averaged over the batch.
template <typename T>
double kl_divergence(const Gaussian<T>& q) {
    const std::size_t n = q.mu.dim(0);
    double total = 0.0;
    for (std::size_t i = 0; i < q.mu.size(); ++i) {
        const double mu = double(q.mu[i]);
        const double lv = double(q.logvar[i]);
        total += 0.5 * (mu * mu + std::exp(lv) - 1.0 - lv);
    }
    return total / double(n);
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> kl_backward(const Gaussian<T>& q) {
    const auto n = T(q.mu.dim(0));
    Tensor<T> dmu = q.mu;
    Tensor<T> dlogvar(q.logvar.shape());
    for (std::size_t i = 0; i < dmu.size(); ++i) {
        dmu[i] = q.mu[i] / n;
        dlogvar[i] = T(0.5) * (std::exp(q.logvar[i]) - T(1)) / n;
    }
    return {std::move(dmu), std::move(dlogvar)};
}

// Mean categorical cross-entropy between softmax(logits) and labels over all
// pixels of the batch. logits are (N, C, H, W); labels are row-major (N*H*W).
template <typename T>
double softmax_cross_entropy(const Tensor<T>& logits, std::span<const ClassId> labels,
                             Tensor<T>* dlogits = nullptr) {
    const std::size_t n = logits.dim(0), channels = logits.dim(1);
    const std::size_t pixels = logits.dim(2) * logits.dim(3);
    if (labels.size() != n * pixels)
        throw_error(ErrorKind::validation, "label count does not match logits");
    if (dlogits) *dlogits = Tensor<T>(logits.shape());
    const double denom = double(n * pixels);
    double loss = 0.0;
    std::vector<double> prob(channels);
    for (std::size_t i = 0; i < n; ++i) {
        const T* base = logits.data() + i * channels * pixels;
        T* dbase = dlogits ? dlogits->data() + i * channels * pixels : nullptr;
        for (std::size_t p = 0; p < pixels; ++p) {
            const ClassId y = labels[i * pixels + p];
            if (y >= channels)
                throw_error(ErrorKind::validation, "label outside logit channels");
            double mx = double(base[p]);
            for (std::size_t c = 1; c < channels; ++c)
                mx = std::max(mx, double(base[c * pixels + p]));
            double sum = 0.0;
            for (std::size_t c = 0; c < channels; ++c) {
                prob[c] = std::exp(double(base[c * pixels + p]) - mx);
                sum += prob[c];
            }
            loss += -(double(base[y * pixels + p]) - mx - std::log(sum));
            if (dbase) {
                for (std::size_t c = 0; c < channels; ++c) {
                    double g = prob[c] / sum;
                    if (c == y) g -= 1.0;
                    dbase[c * pixels + p] = T(g / denom);
                }
            }
        }
    }
    return loss / denom;
}

struct VaeLossValue {
    double total = 0.0;
    double reconstruction = 0.0;
    double kl = 0.0;
};

// total = reconstruction + beta * kl.
template <typename T>
VaeLossValue vae_loss(const Tensor<T>& logits, std::span<const ClassId> labels,
                      const Gaussian<T>& q, double beta, Tensor<T>* dlogits = nullptr) {
    VaeLossValue v;
    v.reconstruction = softmax_cross_entropy(logits, labels, dlogits);
    v.kl = kl_divergence(q);
    v.total = v.reconstruction + beta * v.kl;
    return v;
}

// ---- spec-level single-mask helpers -------------------------------------

using Vae = VaeModel<float>;

Gaussian<float> encode_mask(const Vae& model, const OneHotMask& mask);
LogitField decode_latent(const Vae& model, std::span<const float> z);
LabelMap reconstruct_mask(const Vae& model, const LabelMap& input);

// (N, C, H, W) one-hot tensor plus flattened labels for a batch of maps.
struct TrainingBatch {
    Tensor<float> x;
    std::vector<ClassId> labels;
};
TrainingBatch make_training_batch(const std::vector<const LabelMap*>& maps,
                                  std::size_t class_count);

// ---- checkpoint conversion ------------------------------------------------

struct Checkpoint;

Checkpoint vae_to_checkpoint(Vae& model, nlohmann::json metadata);
Vae vae_from_checkpoint(const Checkpoint& ckpt);

nlohmann::json vae_config_to_json(const VaeConfig& cfg);
VaeConfig vae_config_from_json(const nlohmann::json& j);

// ---- training -------------------------------------------------------------

struct EpochStats {
    std::size_t epoch = 0;
    double train_total = 0.0;
    double train_rec = 0.0;
    double train_kl = 0.0;
    double val_total = 0.0;
    double val_rec = 0.0;
    double val_kl = 0.0;
    double val_accuracy = 0.0;
};

struct VaeTrainResult {
    std::vector<EpochStats> curve;
    std::filesystem::path best_checkpoint;
    std::size_t best_epoch = 0;
};

using LogFn = std::function<void(const std::string&)>;

// Weighted-batch gradient descent on the VAE objective. Writes one checkpoint
// per epoch (epoch<N>/ under out_dir), a copy of the best-validation epoch
// under best/, and a loss CSV with one row per epoch. Aborts with a numerics
// error if the loss goes non-finite.
VaeTrainResult train_vae(const VaeConfig& cfg, const Manifest& manifest,
                         const SamplerWeights& weights, const std::filesystem::path& out_dir,
                         const LogFn& log = nullptr);

} // namespace iism
