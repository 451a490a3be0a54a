#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "iism/dataset.hpp"
#include "iism/maskvae.hpp"
#include "iism/nn.hpp"
#include "iism/rng.hpp"
#include "iism/tensor.hpp"

namespace iism {

// beta_t, alpha_t = 1 - beta_t, and alpha_bar_t = prod_{i<=t} alpha_i for a
// T-step forward process. alpha_bar is strictly decreasing in (0, 1).
struct NoiseSchedule {
    std::size_t steps = 0;
    std::vector<double> betas;
    std::vector<double> alphas;
    std::vector<double> alpha_bars;

    void check_index(std::size_t t) const;
};

// Linear beta schedule: beta_t = start + t * (end - start) / (T - 1); a single
// step yields just {start}.
NoiseSchedule make_schedule(std::size_t steps, double beta_start, double beta_end);

// z_t = sqrt(alpha_bar_t) * z0 + sqrt(1 - alpha_bar_t) * eps.
template <typename T>
std::vector<T> forward_noise(std::span<const T> z0, std::size_t t, std::span<const T> eps,
                             const NoiseSchedule& schedule) {
    schedule.check_index(t);
    if (eps.size() != z0.size())
        throw_error(ErrorKind::validation, "noise length does not match latent length");
    const double ab = schedule.alpha_bars[t];
    const double signal = std::sqrt(ab);
    const double noise = std::sqrt(1.0 - ab);
    std::vector<T> out(z0.size());
    for (std::size_t i = 0; i < z0.size(); ++i)
        out[i] = T(signal * double(z0[i]) + noise * double(eps[i]));
    return out;
}

// Ancestral reverse update:
//   z_{t-1} = (z_t - beta_t / sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_t)
//             + sigma_t * xi
// with sigma_t = sqrt(beta_t) for t >= 1 and sigma_0 = 0 (the final update is
// noiseless unless final_step_noise is set).
template <typename T>
std::vector<T> reverse_step(std::span<const T> z_t, std::size_t t, std::span<const T> eps_hat,
                            const NoiseSchedule& schedule, std::span<const T> xi,
                            bool final_step_noise = false) {
    schedule.check_index(t);
    if (eps_hat.size() != z_t.size() || xi.size() != z_t.size())
        throw_error(ErrorKind::validation, "reverse step operand length mismatch");
    const double beta = schedule.betas[t];
    const double inv_sqrt_alpha = 1.0 / std::sqrt(schedule.alphas[t]);
    const double coef = beta / std::sqrt(1.0 - schedule.alpha_bars[t]);
    const double sigma = (t >= 1 || final_step_noise) ? std::sqrt(beta) : 0.0;
    std::vector<T> out(z_t.size());
    for (std::size_t i = 0; i < z_t.size(); ++i)
        out[i] = T(inv_sqrt_alpha * (double(z_t[i]) - coef * double(eps_hat[i])) +
                   sigma * double(xi[i]));
    return out;
}

// Learnable two-row embedding table for the binary lesion prompt.
template <typename T>
struct PromptTable {
    Tensor<T> embeddings; // (2, d_p)
    Tensor<T> grad;

    PromptTable() = default;
    explicit PromptTable(std::size_t prompt_dim)
        : embeddings({2, prompt_dim}), grad({2, prompt_dim}) {}

    std::size_t prompt_dim() const { return embeddings.dim(1); }

    // Zero-mean normal rows. The scale sets how loudly the prompt speaks at
    // the first layer before any training.
    void init(Rng& rng, double stddev = 0.5) {
        for (auto& v : embeddings.storage()) v = T(rng.normal(0.0, stddev));
    }

    std::span<const T> row(int y) const {
        if (y != 0 && y != 1)
            throw_error(ErrorKind::validation,
                        fmt::format("prompt must be 0 or 1, got {}", y));
        return {embeddings.data() + std::size_t(y) * prompt_dim(), prompt_dim()};
    }

    std::vector<nn::ParamRef<T>> params(const std::string& prefix) {
        return {{prefix + ".embeddings", &embeddings, &grad}};
    }
};

// Row y of the table.
template <typename T>
std::vector<T> embed_prompt(const PromptTable<T>& table, int y) {
    auto r = table.row(y);
    return std::vector<T>(r.begin(), r.end());
}

// Concatenation [z_t ; t/T ; p], the denoiser input layout.
template <typename T>
std::vector<T> denoiser_input(std::span<const T> z_t, std::size_t t, std::size_t total_steps,
                              std::span<const T> prompt) {
    std::vector<T> out;
    out.reserve(z_t.size() + 1 + prompt.size());
    out.insert(out.end(), z_t.begin(), z_t.end());
    out.push_back(T(double(t) / double(total_steps)));
    out.insert(out.end(), prompt.begin(), prompt.end());
    return out;
}

// MLP noise predictor: (D + 1 + d_p) -> hidden -> hidden -> D with SiLU.
template <typename T>
struct Denoiser {
    std::size_t latent_dim = 0, prompt_dim = 0, hidden_width = 0;
    nn::Linear<T> fc1, fc2, fc3;

    Denoiser() = default;
    Denoiser(std::size_t latent, std::size_t prompt, std::size_t hidden)
        : latent_dim(latent), prompt_dim(prompt), hidden_width(hidden),
          fc1(latent + 1 + prompt, hidden), fc2(hidden, hidden), fc3(hidden, latent) {}

    std::size_t input_width() const { return latent_dim + 1 + prompt_dim; }

    void init(Rng& rng) {
        fc1.init_he(rng);
        fc2.init_he(rng);
        fc3.init_he(rng);
    }

    struct Cache {
        Tensor<T> in, h1, s1, h2, s2;
    };

    // input (N, D+1+d_p) -> eps_hat (N, D)
    Tensor<T> forward(const Tensor<T>& input, Cache* cache = nullptr) const {
        if (input.rank() != 2 || input.dim(1) != input_width())
            throw_error(ErrorKind::validation, "denoiser input width mismatch");
        Cache local;
        Cache& c = cache ? *cache : local;
        c.in = input;
        c.h1 = fc1.forward(input);
        c.s1 = nn::silu(c.h1);
        c.h2 = fc2.forward(c.s1);
        c.s2 = nn::silu(c.h2);
        return fc3.forward(c.s2);
    }

    // dout -> dinput; accumulates parameter gradients.
    Tensor<T> backward(const Cache& c, const Tensor<T>& dout) {
        Tensor<T> ds2 = fc3.backward(c.s2, dout);
        Tensor<T> dh2 = nn::silu_backward(c.h2, ds2);
        Tensor<T> ds1 = fc2.backward(c.s1, dh2);
        Tensor<T> dh1 = nn::silu_backward(c.h1, ds1);
        return fc1.backward(c.in, dh1);
    }

    std::vector<nn::ParamRef<T>> params(const std::string& prefix) {
        std::vector<nn::ParamRef<T>> out;
        auto add = [&](std::vector<nn::ParamRef<T>> p) {
            out.insert(out.end(), p.begin(), p.end());
        };
        add(fc1.params(prefix + ".fc1"));
        add(fc2.params(prefix + ".fc2"));
        add(fc3.params(prefix + ".fc3"));
        return out;
    }
};

// eps_hat = network([z_t ; t/T ; p]) for a single latent.
template <typename T>
std::vector<T> predict_noise(const Denoiser<T>& net, std::span<const T> z_t, std::size_t t,
                             std::size_t total_steps, std::span<const T> prompt) {
    auto in = denoiser_input(z_t, t, total_steps, prompt);
    Tensor<T> input({1, in.size()});
    std::copy(in.begin(), in.end(), input.data());
    Tensor<T> out = net.forward(input);
    return std::vector<T>(out.data(), out.data() + out.size());
}

// Mean squared error over batch and dimensions; optional gradient w.r.t. the
// prediction.
template <typename T>
double diffusion_loss(const Tensor<T>& eps_hat, const Tensor<T>& eps,
                      Tensor<T>* dpred = nullptr) {
    if (eps_hat.shape() != eps.shape())
        throw_error(ErrorKind::validation, "diffusion loss operand shape mismatch");
    const double denom = double(eps_hat.size());
    double total = 0.0;
    if (dpred) *dpred = Tensor<T>(eps_hat.shape());
    for (std::size_t i = 0; i < eps_hat.size(); ++i) {
        const double d = double(eps_hat[i]) - double(eps[i]);
        total += d * d;
        if (dpred) (*dpred)[i] = T(2.0 * d / denom);
    }
    return total / denom;
}

struct DiffusionConfig {
    std::size_t steps = 100; // T
    double beta_start = 1e-4;
    double beta_end = 0.02;
    std::size_t prompt_dim = 16;
    std::size_t hidden_width = 1024;
    double prompt_init_std = 0.5;
    double learning_rate = 1e-3;
    std::size_t batch_size = 32;
    std::size_t epochs = 60;
    std::uint64_t seed = 0;
    bool final_step_noise = false;     // sigma_0 = sqrt(beta_0) instead of 0
    bool use_posterior_mean = false;   // train on z0 = mu instead of a sample
    bool cache_posteriors = false;     // one encoder pass; z0 still resampled
    bool use_weighted_sampler = false; // lesion-aware weighting for batches
    bool normalize_latents = true;     // per-dim standardization of z0

    void validate() const;
};

nlohmann::json diffusion_config_to_json(const DiffusionConfig& cfg);
DiffusionConfig diffusion_config_from_json(const nlohmann::json& j);

// Trained Stage-II bundle. latent_mean/latent_std standardize VAE latents
// before diffusion (identity when normalization is disabled); they are part of
// the checkpoint so sampling undoes the transform exactly.
template <typename T>
struct DiffusionModel {
    DiffusionConfig cfg;
    std::size_t latent_dim = 0;
    Denoiser<T> denoiser;
    PromptTable<T> prompts;
    Tensor<T> latent_mean; // (D)
    Tensor<T> latent_std;  // (D)
    NoiseSchedule schedule;

    DiffusionModel() = default;
    DiffusionModel(const DiffusionConfig& config, std::size_t latent)
        : cfg(config), latent_dim(latent),
          denoiser(latent, config.prompt_dim, config.hidden_width),
          prompts(config.prompt_dim), latent_mean({latent}), latent_std({latent}),
          schedule(make_schedule(config.steps, config.beta_start, config.beta_end)) {
        cfg.validate();
        latent_std.fill(T(1));
    }

    std::vector<nn::ParamRef<T>> trainable_params() {
        auto out = denoiser.params("denoiser");
        auto p = prompts.params("prompt");
        out.insert(out.end(), p.begin(), p.end());
        return out;
    }
};

using Diffusion = DiffusionModel<float>;

struct Checkpoint;

Checkpoint diffusion_to_checkpoint(Diffusion& model, nlohmann::json metadata);
Diffusion diffusion_from_checkpoint(const Checkpoint& ckpt);

struct DiffusionEpochStats {
    std::size_t epoch = 0;
    double train_mse = 0.0;
    double val_mse = 0.0;
};

struct DiffusionTrainResult {
    std::vector<DiffusionEpochStats> curve;
    std::filesystem::path best_checkpoint;
    std::size_t best_epoch = 0;
};

// Stage-II training against a frozen VAE. Per step: encode to posteriors,
// sample z0, draw per-item t and eps, form z_t, regress eps. Writes per-epoch
// checkpoints, a best/ copy (lowest validation MSE on a fixed batch), and a
// loss CSV.
DiffusionTrainResult train_diffusion(const Vae& vae, const Manifest& manifest,
                                     const DiffusionConfig& cfg,
                                     const std::filesystem::path& out_dir,
                                     const LogFn& log = nullptr);

// Ancestral sampling: z_T ~ N(0, I), T reverse steps, frozen decode, argmax.
// Deterministic in (models, y, n, seed); each item uses an independent
// seed-derived stream.
std::vector<LabelMap> sample_masks(const Vae& vae, const Diffusion& diffusion, int y,
                                   std::size_t n, std::uint64_t seed);

} // namespace iism
