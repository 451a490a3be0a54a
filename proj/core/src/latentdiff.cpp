#include "iism/latentdiff.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

#include <fmt/format.h>

#include "iism/image_io.hpp"
#include "iism/store.hpp"

namespace iism {

using nlohmann::json;

void NoiseSchedule::check_index(std::size_t t) const {
    if (t >= steps)
        throw_error(ErrorKind::validation,
                    fmt::format("timestep {} outside schedule of {} steps", t, steps));
}

NoiseSchedule make_schedule(std::size_t steps, double beta_start, double beta_end) {
    if (steps < 1)
        throw_error(ErrorKind::validation, "schedule needs at least one step");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw_error(ErrorKind::validation,
                    fmt::format("invalid schedule endpoints [{}, {}]", beta_start, beta_end));
    NoiseSchedule s;
    s.steps = steps;
    s.betas.resize(steps);
    s.alphas.resize(steps);
    s.alpha_bars.resize(steps);
    double bar = 1.0;
    for (std::size_t t = 0; t < steps; ++t) {
        s.betas[t] = steps == 1 ? beta_start
                                : beta_start + double(t) * (beta_end - beta_start) /
                                                   double(steps - 1);
        s.alphas[t] = 1.0 - s.betas[t];
        bar *= s.alphas[t];
        s.alpha_bars[t] = bar;
    }
    return s;
}

void DiffusionConfig::validate() const {
    if (steps < 1)
        throw_error(ErrorKind::validation, "T must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw_error(ErrorKind::validation,
                    fmt::format("invalid schedule endpoints [{}, {}]", beta_start, beta_end));
    if (prompt_dim < 1 || hidden_width < 1)
        throw_error(ErrorKind::validation, "prompt dim and hidden width must be >= 1");
    if (!(prompt_init_std > 0.0))
        throw_error(ErrorKind::validation, "prompt init stddev must be positive");
    if (!(learning_rate > 0.0))
        throw_error(ErrorKind::validation, "learning rate must be positive");
    if (batch_size < 1 || epochs < 1)
        throw_error(ErrorKind::validation, "batch size and epochs must be >= 1");
}

json diffusion_config_to_json(const DiffusionConfig& cfg) {
    return json{{"steps", cfg.steps},
                {"beta_start", cfg.beta_start},
                {"beta_end", cfg.beta_end},
                {"prompt_dim", cfg.prompt_dim},
                {"hidden_width", cfg.hidden_width},
                {"prompt_init_std", cfg.prompt_init_std},
                {"learning_rate", cfg.learning_rate},
                {"batch_size", cfg.batch_size},
                {"epochs", cfg.epochs},
                {"seed", cfg.seed},
                {"final_step_noise", cfg.final_step_noise},
                {"use_posterior_mean", cfg.use_posterior_mean},
                {"cache_posteriors", cfg.cache_posteriors},
                {"use_weighted_sampler", cfg.use_weighted_sampler},
                {"normalize_latents", cfg.normalize_latents}};
}

DiffusionConfig diffusion_config_from_json(const json& j) {
    DiffusionConfig cfg;
    for (const auto& [key, value] : j.items()) {
        if (key == "steps") cfg.steps = value.get<std::size_t>();
        else if (key == "beta_start") cfg.beta_start = value.get<double>();
        else if (key == "beta_end") cfg.beta_end = value.get<double>();
        else if (key == "prompt_dim") cfg.prompt_dim = value.get<std::size_t>();
        else if (key == "hidden_width") cfg.hidden_width = value.get<std::size_t>();
        else if (key == "prompt_init_std") cfg.prompt_init_std = value.get<double>();
        else if (key == "learning_rate") cfg.learning_rate = value.get<double>();
        else if (key == "batch_size") cfg.batch_size = value.get<std::size_t>();
        else if (key == "epochs") cfg.epochs = value.get<std::size_t>();
        else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
        else if (key == "final_step_noise") cfg.final_step_noise = value.get<bool>();
        else if (key == "use_posterior_mean") cfg.use_posterior_mean = value.get<bool>();
        else if (key == "cache_posteriors") cfg.cache_posteriors = value.get<bool>();
        else if (key == "use_weighted_sampler") cfg.use_weighted_sampler = value.get<bool>();
        else if (key == "normalize_latents") cfg.normalize_latents = value.get<bool>();
        else
            throw_error(ErrorKind::validation,
                        fmt::format("unknown diffusion config key '{}'", key));
    }
    cfg.validate();
    return cfg;
}

Checkpoint diffusion_to_checkpoint(Diffusion& model, json metadata) {
    Checkpoint ckpt;
    ckpt.kind = "diffusion";
    metadata["config"] = diffusion_config_to_json(model.cfg);
    metadata["latent_dim"] = model.latent_dim;
    ckpt.metadata = std::move(metadata);
    auto push = [&](const std::string& name, const Tensor<float>& t) {
        TensorBlob blob;
        blob.name = name;
        blob.shape = t.shape();
        blob.data.assign(t.data(), t.data() + t.size());
        ckpt.tensors.push_back(std::move(blob));
    };
    for (const auto& p : model.trainable_params()) push(p.name, *p.value);
    push("latent_mean", model.latent_mean);
    push("latent_std", model.latent_std);
    return ckpt;
}

Diffusion diffusion_from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.kind != "diffusion")
        throw_error(ErrorKind::validation,
                    fmt::format("expected a diffusion checkpoint, got '{}'", ckpt.kind));
    const DiffusionConfig cfg = diffusion_config_from_json(ckpt.metadata.at("config"));
    const auto latent = ckpt.metadata.at("latent_dim").get<std::size_t>();
    Diffusion model(cfg, latent);
    auto pull = [&](const std::string& name, Tensor<float>& t) {
        const TensorBlob& blob = ckpt.tensor(name);
        if (blob.shape != t.shape())
            throw_error(ErrorKind::validation,
                        fmt::format("tensor '{}' shape does not match the config", name));
        std::copy(blob.data.begin(), blob.data.end(), t.data());
    };
    for (const auto& p : model.trainable_params()) pull(p.name, *p.value);
    pull("latent_mean", model.latent_mean);
    pull("latent_std", model.latent_std);
    return model;
}

namespace {

std::string timestamp_now() {
    const auto now = std::chrono::system_clock::now();
    const auto t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

struct EncodedSplit {
    Tensor<float> mu;     // (N, D)
    Tensor<float> logvar; // (N, D)
    std::vector<int> prompt;
};

// One pass of the frozen encoder over the given records.
EncodedSplit encode_records(const Vae& vae, const Manifest& manifest,
                            const std::vector<std::size_t>& indices, std::size_t batch_size) {
    const std::size_t d = vae.cfg.latent_dim;
    EncodedSplit out;
    out.mu = Tensor<float>({indices.size(), d});
    out.logvar = Tensor<float>({indices.size(), d});
    out.prompt.reserve(indices.size());
    for (std::size_t idx : indices) out.prompt.push_back(manifest.records[idx].lesion);

    std::vector<LabelMap> maps;
    for (std::size_t start = 0; start < indices.size(); start += batch_size) {
        const std::size_t stop = std::min(indices.size(), start + batch_size);
        maps.clear();
        std::vector<const LabelMap*> ptrs;
        for (std::size_t i = start; i < stop; ++i) {
            LabelMap m = read_label_map(manifest.resolve(manifest.records[indices[i]]));
            maps.push_back(resize_nearest(m, manifest.height, manifest.width));
        }
        for (const auto& m : maps) ptrs.push_back(&m);
        TrainingBatch batch = make_training_batch(ptrs, vae.cfg.in_channels);
        const Gaussian<float> q = vae.encode(batch.x);
        std::copy(q.mu.data(), q.mu.data() + q.mu.size(), out.mu.data() + start * d);
        std::copy(q.logvar.data(), q.logvar.data() + q.logvar.size(),
                  out.logvar.data() + start * d);
    }
    return out;
}

} // namespace

DiffusionTrainResult train_diffusion(const Vae& vae, const Manifest& manifest,
                                     const DiffusionConfig& cfg,
                                     const std::filesystem::path& out_dir, const LogFn& log) {
    cfg.validate();
    if (manifest.height != vae.cfg.height || manifest.width != vae.cfg.width ||
        manifest.catalog.size() != vae.cfg.in_channels)
        throw_error(ErrorKind::validation,
                    "manifest resolution/catalog does not match the VAE checkpoint");

    const std::size_t d = vae.cfg.latent_dim;
    const auto train_idx = manifest.split_indices(Split::train);
    if (train_idx.empty())
        throw_error(ErrorKind::validation, "manifest train split is empty");
    auto val_idx = manifest.split_indices(Split::val);
    if (val_idx.empty()) val_idx = train_idx;

    // The VAE is frozen: posteriors are a pure function of each mask, so they
    // are computed in one pass up front. z0 is still re-sampled per visit.
    const EncodedSplit train_enc = encode_records(vae, manifest, train_idx, cfg.batch_size);
    const EncodedSplit val_enc = encode_records(vae, manifest, val_idx, cfg.batch_size);

    Diffusion model(cfg, d);
    Rng init_rng = Rng(cfg.seed).fork(hash64("diff-init"));
    model.denoiser.init(init_rng);
    model.prompts.init(init_rng, cfg.prompt_init_std);

    if (cfg.normalize_latents) {
        // Standardize z0 per dimension so the diffusion prior N(0, I) matches
        // the latents it must generate. The variance matches the z0 mode:
        // Var(mu) + E[exp(logvar)] when z0 is sampled from the posterior,
        // Var(mu) alone when z0 = mu.
        const std::size_t n = train_idx.size();
        std::vector<double> vars(d, 0.0);
        for (std::size_t j = 0; j < d; ++j) {
            double mean = 0.0;
            for (std::size_t i = 0; i < n; ++i) mean += double(train_enc.mu[i * d + j]);
            mean /= double(n);
            double var = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double dm = double(train_enc.mu[i * d + j]) - mean;
                var += dm * dm;
                if (!cfg.use_posterior_mean)
                    var += std::exp(double(train_enc.logvar[i * d + j]));
            }
            vars[j] = var / double(n);
            model.latent_mean[j] = float(mean);
        }
        // Floor the variance relative to the most active dimension so inert
        // dims are not amplified into unit-scale noise.
        const double var_floor =
            1e-3 * std::max(1e-12, *std::max_element(vars.begin(), vars.end()));
        for (std::size_t j = 0; j < d; ++j)
            model.latent_std[j] = float(std::sqrt(std::max(vars[j], var_floor)));
    }

    nn::Adam<float> opt(model.trainable_params(), cfg.learning_rate);
    SamplerWeights stream_weights = cfg.use_weighted_sampler ? SamplerWeights{}
                                                             : SamplerWeights{1.0, 1.0};
    WeightedStream stream(manifest, stream_weights,
                          Rng(cfg.seed).fork(hash64("diff-sampler")).next_u64());
    std::vector<std::size_t> train_pos(manifest.records.size(), SIZE_MAX);
    for (std::size_t i = 0; i < train_idx.size(); ++i) train_pos[train_idx[i]] = i;

    Rng noise_rng = Rng(cfg.seed).fork(hash64("diff-noise"));

    // Fixed validation batch: z0, t, and eps drawn once so the epoch curve is
    // comparable across epochs.
    Tensor<float> val_z0({val_idx.size(), d});
    std::vector<std::size_t> val_t(val_idx.size());
    Tensor<float> val_eps({val_idx.size(), d});
    {
        Rng val_rng = Rng(cfg.seed).fork(hash64("diff-val"));
        for (std::size_t i = 0; i < val_idx.size(); ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                const double mu = double(val_enc.mu[i * d + j]);
                const double sd = std::exp(0.5 * double(val_enc.logvar[i * d + j]));
                const double z0 = cfg.use_posterior_mean ? mu : mu + sd * val_rng.normal();
                val_z0[i * d + j] =
                    float((z0 - double(model.latent_mean[j])) / double(model.latent_std[j]));
            }
            val_t[i] = std::size_t(val_rng.below(cfg.steps));
            for (std::size_t j = 0; j < d; ++j) val_eps[i * d + j] = float(val_rng.normal());
        }
    }

    auto assemble_inputs = [&](const Tensor<float>& z0, std::span<const std::size_t> ts,
                               std::span<const int> ys, const Tensor<float>& eps) {
        const std::size_t n = z0.dim(0);
        Tensor<float> input({n, model.denoiser.input_width()});
        for (std::size_t i = 0; i < n; ++i) {
            const std::span<const float> zrow(z0.data() + i * d, d);
            const std::span<const float> erow(eps.data() + i * d, d);
            auto zt = forward_noise(zrow, ts[i], erow, model.schedule);
            auto in = denoiser_input(std::span<const float>(zt), ts[i], cfg.steps,
                                     model.prompts.row(ys[i]));
            std::copy(in.begin(), in.end(), input.data() + i * input.dim(1));
        }
        return input;
    };

    auto validation_mse = [&]() {
        Tensor<float> input = assemble_inputs(val_z0, val_t, val_enc.prompt, val_eps);
        Tensor<float> pred = model.denoiser.forward(input);
        return diffusion_loss(pred, val_eps);
    };

    const std::size_t steps_per_epoch =
        (train_idx.size() + cfg.batch_size - 1) / cfg.batch_size;
    std::filesystem::create_directories(out_dir);

    DiffusionTrainResult result;
    double best_val = std::numeric_limits<double>::infinity();

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        double train_mse = 0.0;
        for (std::size_t step = 0; step < steps_per_epoch; ++step) {
            const std::size_t b = cfg.batch_size;
            Tensor<float> z0({b, d});
            Tensor<float> eps({b, d});
            std::vector<std::size_t> ts(b);
            std::vector<int> ys(b);
            for (std::size_t i = 0; i < b; ++i) {
                const std::size_t global = stream.next();
                const std::size_t local = train_pos[global];
                ys[i] = train_enc.prompt[local];
                for (std::size_t j = 0; j < d; ++j) {
                    const double mu = double(train_enc.mu[local * d + j]);
                    const double sd = std::exp(0.5 * double(train_enc.logvar[local * d + j]));
                    const double v = cfg.use_posterior_mean ? mu : mu + sd * noise_rng.normal();
                    z0[i * d + j] = float((v - double(model.latent_mean[j])) /
                                          double(model.latent_std[j]));
                }
                ts[i] = std::size_t(noise_rng.below(cfg.steps));
                for (std::size_t j = 0; j < d; ++j) eps[i * d + j] = float(noise_rng.normal());
            }

            Tensor<float> input = assemble_inputs(z0, ts, ys, eps);
            typename Denoiser<float>::Cache cache;
            Tensor<float> pred = model.denoiser.forward(input, &cache);
            Tensor<float> dpred;
            const double loss = diffusion_loss(pred, eps, &dpred);
            if (!std::isfinite(loss))
                throw_error(ErrorKind::numerics,
                            fmt::format("diffusion training diverged at epoch {} step {}",
                                        epoch, step));
            train_mse += loss;

            opt.zero_grad();
            Tensor<float> dinput = model.denoiser.backward(cache, dpred);
            // Route the prompt slice of the input gradient into the table row
            // used by each item; z_t and t/T are frozen inputs.
            const std::size_t width = model.denoiser.input_width();
            for (std::size_t i = 0; i < b; ++i) {
                float* grow = model.prompts.grad.data() + std::size_t(ys[i]) * cfg.prompt_dim;
                const float* gin = dinput.data() + i * width + d + 1;
                for (std::size_t j = 0; j < cfg.prompt_dim; ++j) grow[j] += gin[j];
            }
            opt.step();
        }

        DiffusionEpochStats stats;
        stats.epoch = epoch;
        stats.train_mse = train_mse / double(steps_per_epoch);
        stats.val_mse = validation_mse();
        result.curve.push_back(stats);

        json meta{{"epoch", epoch},
                  {"seed", cfg.seed},
                  {"created", timestamp_now()},
                  {"val_mse", stats.val_mse}};
        Checkpoint ckpt = diffusion_to_checkpoint(model, meta);
        save_checkpoint(ckpt, out_dir / fmt::format("epoch{}", epoch));
        if (stats.val_mse < best_val) {
            best_val = stats.val_mse;
            result.best_epoch = epoch;
            ckpt.metadata["best"] = true;
            save_checkpoint(ckpt, out_dir / "best");
        }
        if (log)
            log(fmt::format("diff epoch {:3}  train mse {:.5f}  val mse {:.5f}", epoch,
                            stats.train_mse, stats.val_mse));
    }

    result.best_checkpoint = out_dir / "best";

    std::ofstream csv(out_dir / "training_curve.csv", std::ios::trunc);
    csv << "epoch,train_mse,val_mse\n";
    for (const auto& s : result.curve)
        csv << fmt::format("{},{},{}\n", s.epoch, s.train_mse, s.val_mse);
    return result;
}

std::vector<LabelMap> sample_masks(const Vae& vae, const Diffusion& diffusion, int y,
                                   std::size_t n, std::uint64_t seed) {
    if (y != 0 && y != 1)
        throw_error(ErrorKind::validation, fmt::format("prompt must be 0 or 1, got {}", y));
    if (vae.cfg.latent_dim != diffusion.latent_dim)
        throw_error(ErrorKind::validation,
                    fmt::format("VAE latent dim {} does not match diffusion latent dim {}",
                                vae.cfg.latent_dim, diffusion.latent_dim));

    const std::size_t d = diffusion.latent_dim;
    const std::size_t total = diffusion.schedule.steps;
    const auto prompt = diffusion.prompts.row(y);
    constexpr std::size_t kChunk = 64; // fixed so chunking never depends on n

    std::vector<LabelMap> out;
    out.reserve(n);
    for (std::size_t start = 0; start < n; start += kChunk) {
        const std::size_t count = std::min(kChunk, n - start);
        std::vector<Rng> rngs;
        rngs.reserve(count);
        for (std::size_t i = 0; i < count; ++i)
            rngs.push_back(Rng(seed).fork(hash64("sample")).fork(start + i));

        Tensor<float> z({count, d});
        for (std::size_t i = 0; i < count; ++i)
            for (std::size_t j = 0; j < d; ++j) z[i * d + j] = float(rngs[i].normal());

        std::vector<float> xi(d, 0.0f);
        for (std::size_t t = total; t-- > 0;) {
            Tensor<float> input({count, diffusion.denoiser.input_width()});
            for (std::size_t i = 0; i < count; ++i) {
                auto in = denoiser_input(std::span<const float>(z.data() + i * d, d), t, total,
                                         prompt);
                std::copy(in.begin(), in.end(), input.data() + i * input.dim(1));
            }
            Tensor<float> eps_hat = diffusion.denoiser.forward(input);
            for (std::size_t i = 0; i < count; ++i) {
                const bool noisy = t >= 1 || diffusion.cfg.final_step_noise;
                if (noisy)
                    for (std::size_t j = 0; j < d; ++j) xi[j] = float(rngs[i].normal());
                else
                    std::fill(xi.begin(), xi.end(), 0.0f);
                auto next = reverse_step(std::span<const float>(z.data() + i * d, d), t,
                                         std::span<const float>(eps_hat.data() + i * d, d),
                                         diffusion.schedule, std::span<const float>(xi),
                                         diffusion.cfg.final_step_noise);
                std::copy(next.begin(), next.end(), z.data() + i * d);
            }
        }

        // Undo latent standardization, then decode with the frozen VAE.
        for (std::size_t i = 0; i < count; ++i)
            for (std::size_t j = 0; j < d; ++j)
                z[i * d + j] = z[i * d + j] * diffusion.latent_std[j] + diffusion.latent_mean[j];
        Tensor<float> logits = vae.decode(z);
        const std::size_t px = vae.cfg.height * vae.cfg.width;
        for (std::size_t i = 0; i < count; ++i)
            out.push_back(argmax_decode_span(vae.cfg.in_channels, vae.cfg.height, vae.cfg.width,
                                             logits.data() + i * vae.cfg.in_channels * px));
    }
    return out;
}

} // namespace iism
