#include "iism/maskvae.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include <fmt/format.h>

#include "iism/image_io.hpp"
#include "iism/store.hpp"

namespace iism {

using nlohmann::json;

void VaeConfig::validate() const {
    if (latent_dim < 1)
        throw_error(ErrorKind::validation, "latent dimension must be >= 1");
    if (in_channels < 2)
        throw_error(ErrorKind::validation, "need at least two classes");
    if (height % 16 != 0 || width % 16 != 0 || height == 0 || width == 0)
        throw_error(ErrorKind::validation,
                    fmt::format("input size {}x{} is not divisible by 16 (four stride-2 stages)",
                                height, width));
    for (auto ch : encoder_channels)
        if (ch == 0)
            throw_error(ErrorKind::validation, "encoder channels must be positive");
    if (beta < 0.0)
        throw_error(ErrorKind::validation, "beta must be non-negative");
    if (!(learning_rate > 0.0))
        throw_error(ErrorKind::validation, "learning rate must be positive");
    if (batch_size < 1 || epochs < 1)
        throw_error(ErrorKind::validation, "batch size and epochs must be >= 1");
}

json vae_config_to_json(const VaeConfig& cfg) {
    return json{{"latent_dim", cfg.latent_dim},
                {"encoder_channels", cfg.encoder_channels},
                {"in_channels", cfg.in_channels},
                {"height", cfg.height},
                {"width", cfg.width},
                {"beta", cfg.beta},
                {"logvar_bias_init", cfg.logvar_bias_init},
                {"learning_rate", cfg.learning_rate},
                {"batch_size", cfg.batch_size},
                {"epochs", cfg.epochs},
                {"seed", cfg.seed}};
}

VaeConfig vae_config_from_json(const json& j) {
    VaeConfig cfg;
    for (const auto& [key, value] : j.items()) {
        if (key == "latent_dim") cfg.latent_dim = value.get<std::size_t>();
        else if (key == "encoder_channels") {
            auto v = value.get<std::vector<std::size_t>>();
            if (v.size() != 4)
                throw_error(ErrorKind::validation, "encoder_channels must list 4 widths");
            std::copy(v.begin(), v.end(), cfg.encoder_channels.begin());
        } else if (key == "in_channels") cfg.in_channels = value.get<std::size_t>();
        else if (key == "height") cfg.height = value.get<std::size_t>();
        else if (key == "width") cfg.width = value.get<std::size_t>();
        else if (key == "beta") cfg.beta = value.get<double>();
        else if (key == "logvar_bias_init") cfg.logvar_bias_init = value.get<double>();
        else if (key == "learning_rate") cfg.learning_rate = value.get<double>();
        else if (key == "batch_size") cfg.batch_size = value.get<std::size_t>();
        else if (key == "epochs") cfg.epochs = value.get<std::size_t>();
        else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
        else throw_error(ErrorKind::validation, fmt::format("unknown vae config key '{}'", key));
    }
    cfg.validate();
    return cfg;
}

TrainingBatch make_training_batch(const std::vector<const LabelMap*>& maps,
                                  std::size_t class_count) {
    if (maps.empty())
        throw_error(ErrorKind::validation, "empty batch");
    const std::size_t h = maps.front()->height();
    const std::size_t w = maps.front()->width();
    TrainingBatch batch;
    batch.x = Tensor<float>({maps.size(), class_count, h, w});
    batch.labels.reserve(maps.size() * h * w);
    const std::size_t pixels = h * w;
    for (std::size_t i = 0; i < maps.size(); ++i) {
        const LabelMap& m = *maps[i];
        if (m.height() != h || m.width() != w)
            throw_error(ErrorKind::validation, "batch masks must share one resolution");
        float* base = batch.x.data() + i * class_count * pixels;
        for (std::size_t p = 0; p < pixels; ++p) {
            const ClassId y = m.data()[p];
            if (y >= class_count)
                throw_error(ErrorKind::validation,
                            fmt::format("label {} outside class count {}", y, class_count));
            base[y * pixels + p] = 1.0f;
            batch.labels.push_back(y);
        }
    }
    return batch;
}

Gaussian<float> encode_mask(const Vae& model, const OneHotMask& mask) {
    if (mask.channels != model.cfg.in_channels || mask.height != model.cfg.height ||
        mask.width != model.cfg.width)
        throw_error(ErrorKind::validation,
                    fmt::format("mask is {}x{}x{}, model expects {}x{}x{}", mask.channels,
                                mask.height, mask.width, model.cfg.in_channels,
                                model.cfg.height, model.cfg.width));
    Tensor<float> x({1, mask.channels, mask.height, mask.width});
    for (std::size_t i = 0; i < mask.data.size(); ++i) x[i] = float(mask.data[i]);
    return model.encode(x);
}

LogitField decode_latent(const Vae& model, std::span<const float> z) {
    if (z.size() != model.cfg.latent_dim)
        throw_error(ErrorKind::validation,
                    fmt::format("latent has {} dims, model expects {}", z.size(),
                                model.cfg.latent_dim));
    Tensor<float> zt({1, model.cfg.latent_dim});
    std::copy(z.begin(), z.end(), zt.data());
    Tensor<float> logits = model.decode(zt);
    LogitField out;
    out.channels = model.cfg.in_channels;
    out.height = model.cfg.height;
    out.width = model.cfg.width;
    out.data.assign(logits.data(), logits.data() + logits.size());
    return out;
}

LabelMap reconstruct_mask(const Vae& model, const LabelMap& input) {
    const LabelMap resized = resize_nearest(input, model.cfg.height, model.cfg.width);
    const auto q = encode_mask(model, onehot(resized, model.cfg.in_channels));
    return argmax_decode(decode_latent(
        model, std::span<const float>(q.mu.data(), q.mu.size())));
}

Checkpoint vae_to_checkpoint(Vae& model, json metadata) {
    Checkpoint ckpt;
    ckpt.kind = "vae";
    metadata["config"] = vae_config_to_json(model.cfg);
    ckpt.metadata = std::move(metadata);
    for (const auto& p : model.params()) {
        TensorBlob blob;
        blob.name = p.name;
        blob.shape = p.value->shape();
        blob.data.assign(p.value->data(), p.value->data() + p.value->size());
        ckpt.tensors.push_back(std::move(blob));
    }
    return ckpt;
}

Vae vae_from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.kind != "vae")
        throw_error(ErrorKind::validation,
                    fmt::format("expected a vae checkpoint, got '{}'", ckpt.kind));
    Vae model(vae_config_from_json(ckpt.metadata.at("config")));
    for (const auto& p : model.params()) {
        const TensorBlob& blob = ckpt.tensor(p.name);
        if (blob.shape != p.value->shape())
            throw_error(ErrorKind::validation,
                        fmt::format("tensor '{}' shape does not match the config", p.name));
        std::copy(blob.data.begin(), blob.data.end(), p.value->data());
    }
    return model;
}

namespace {

struct PreloadedSplit {
    std::vector<LabelMap> maps;                  // by local position
    std::vector<std::size_t> local_of_global;    // global record idx -> local
    std::vector<int> lesion;
};

PreloadedSplit preload(const Manifest& manifest, const std::vector<std::size_t>& indices) {
    PreloadedSplit out;
    out.local_of_global.assign(manifest.records.size(), SIZE_MAX);
    for (std::size_t idx : indices) {
        LabelMap m = read_label_map(manifest.resolve(manifest.records[idx]));
        m = resize_nearest(m, manifest.height, manifest.width);
        out.local_of_global[idx] = out.maps.size();
        out.maps.push_back(std::move(m));
        out.lesion.push_back(manifest.records[idx].lesion);
    }
    return out;
}

std::string timestamp_now() {
    const auto now = std::chrono::system_clock::now();
    const auto t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

} // namespace

VaeTrainResult train_vae(const VaeConfig& cfg, const Manifest& manifest,
                         const SamplerWeights& weights, const std::filesystem::path& out_dir,
                         const LogFn& log) {
    cfg.validate();
    weights.validate();
    if (manifest.height != cfg.height || manifest.width != cfg.width)
        throw_error(ErrorKind::validation,
                    fmt::format("manifest resolution {}x{} does not match config {}x{}",
                                manifest.height, manifest.width, cfg.height, cfg.width));
    if (manifest.catalog.size() != cfg.in_channels)
        throw_error(ErrorKind::validation,
                    fmt::format("catalog has {} classes, config expects {}",
                                manifest.catalog.size(), cfg.in_channels));

    const auto train_idx = manifest.split_indices(Split::train);
    if (train_idx.empty())
        throw_error(ErrorKind::validation, "manifest train split is empty");
    auto val_idx = manifest.split_indices(Split::val);
    if (val_idx.empty()) val_idx = train_idx; // tiny corpora: monitor on train

    const PreloadedSplit train_data = preload(manifest, train_idx);
    const PreloadedSplit val_data = preload(manifest, val_idx);

    Vae model(cfg);
    Rng init_rng = Rng(cfg.seed).fork(hash64("vae-init"));
    model.init(init_rng);
    nn::Adam<float> opt(model.params(), cfg.learning_rate);
    WeightedStream stream(manifest, weights, Rng(cfg.seed).fork(hash64("vae-sampler")).next_u64());
    Rng eps_rng = Rng(cfg.seed).fork(hash64("vae-eps"));

    const std::size_t steps = (train_idx.size() + cfg.batch_size - 1) / cfg.batch_size;
    std::filesystem::create_directories(out_dir);

    VaeTrainResult result;
    double best_val = std::numeric_limits<double>::infinity();

    auto evaluate = [&](const PreloadedSplit& data) {
        double total = 0.0, rec = 0.0, kl = 0.0;
        std::size_t correct = 0, pixels = 0, batches = 0;
        for (std::size_t start = 0; start < data.maps.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(data.maps.size(), start + cfg.batch_size);
            std::vector<const LabelMap*> maps;
            for (std::size_t i = start; i < stop; ++i) maps.push_back(&data.maps[i]);
            TrainingBatch batch = make_training_batch(maps, cfg.in_channels);
            const Gaussian<float> q = model.encode(batch.x);
            const Tensor<float> logits = model.decode(q.mu); // posterior mean for validation
            const VaeLossValue v =
                vae_loss(logits, std::span<const ClassId>(batch.labels), q, cfg.beta);
            total += v.total;
            rec += v.reconstruction;
            kl += v.kl;
            ++batches;
            const std::size_t px = cfg.height * cfg.width;
            for (std::size_t i = 0; i < maps.size(); ++i) {
                LabelMap decoded = argmax_decode_span(cfg.in_channels, cfg.height, cfg.width,
                                                      logits.data() + i * cfg.in_channels * px);
                for (std::size_t p = 0; p < px; ++p)
                    if (decoded.data()[p] == maps[i]->data()[p]) ++correct;
                pixels += px;
            }
        }
        EpochStats s;
        s.val_total = total / double(batches);
        s.val_rec = rec / double(batches);
        s.val_kl = kl / double(batches);
        s.val_accuracy = double(correct) / double(pixels);
        return s;
    };

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        double train_total = 0.0, train_rec = 0.0, train_kl = 0.0;
        for (std::size_t step = 0; step < steps; ++step) {
            std::vector<const LabelMap*> maps;
            maps.reserve(cfg.batch_size);
            for (std::size_t b = 0; b < cfg.batch_size; ++b) {
                const std::size_t global = stream.next();
                maps.push_back(&train_data.maps[train_data.local_of_global[global]]);
            }
            TrainingBatch batch = make_training_batch(maps, cfg.in_channels);

            typename Vae::EncCache ec;
            const Gaussian<float> q = model.encode(batch.x, &ec);
            Tensor<float> eps({maps.size(), cfg.latent_dim});
            for (auto& v : eps.storage()) v = float(eps_rng.normal());
            const Tensor<float> z = reparameterize(q, eps);
            typename Vae::DecCache dc;
            const Tensor<float> logits = model.decode(z, &dc);

            Tensor<float> dlogits;
            const VaeLossValue v = vae_loss(logits, std::span<const ClassId>(batch.labels), q,
                                            cfg.beta, &dlogits);
            if (!std::isfinite(v.total))
                throw_error(ErrorKind::numerics,
                            fmt::format("training diverged (loss {}) at epoch {} step {}",
                                        v.total, epoch, step));
            train_total += v.total;
            train_rec += v.reconstruction;
            train_kl += v.kl;

            opt.zero_grad();
            const Tensor<float> dz = model.decode_backward(dc, dlogits);
            auto [dmu, dlogvar] = reparameterize_backward(q, eps, dz);
            auto [dmu_kl, dlogvar_kl] = kl_backward(q);
            dmu.vec() += float(cfg.beta) * dmu_kl.vec();
            dlogvar.vec() += float(cfg.beta) * dlogvar_kl.vec();
            model.encode_backward(ec, dmu, dlogvar);
            opt.step();
        }

        EpochStats stats = evaluate(val_data);
        stats.epoch = epoch;
        stats.train_total = train_total / double(steps);
        stats.train_rec = train_rec / double(steps);
        stats.train_kl = train_kl / double(steps);
        result.curve.push_back(stats);

        json meta{{"epoch", epoch},
                  {"seed", cfg.seed},
                  {"created", timestamp_now()},
                  {"val_total", stats.val_total},
                  {"val_accuracy", stats.val_accuracy}};
        Checkpoint ckpt = vae_to_checkpoint(model, meta);
        save_checkpoint(ckpt, out_dir / fmt::format("epoch{}", epoch));

        if (stats.val_total < best_val) {
            best_val = stats.val_total;
            result.best_epoch = epoch;
            ckpt.metadata["best"] = true;
            save_checkpoint(ckpt, out_dir / "best");
        }
        if (log)
            log(fmt::format("vae epoch {:3}  train {:.4f} (rec {:.4f} kl {:.2f})  "
                            "val {:.4f}  acc {:.4f}",
                            epoch, stats.train_total, stats.train_rec, stats.train_kl,
                            stats.val_total, stats.val_accuracy));
    }

    result.best_checkpoint = out_dir / "best";

    std::ofstream csv(out_dir / "training_curve.csv", std::ios::trunc);
    csv << "epoch,train_total,train_rec,train_kl,val_total,val_rec,val_kl,val_accuracy\n";
    for (const auto& s : result.curve)
        csv << fmt::format("{},{},{},{},{},{},{},{}\n", s.epoch, s.train_total, s.train_rec,
                           s.train_kl, s.val_total, s.val_rec, s.val_kl, s.val_accuracy);
    return result;
}

} // namespace iism
