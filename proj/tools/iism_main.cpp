// iism: phantom corpora, manifests, two-stage training, sampling, and
// distribution/FID evaluation for discrete brain segmentation masks.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "iism/config.hpp"
#include "iism/dataset.hpp"
#include "iism/eval.hpp"
#include "iism/figures.hpp"
#include "iism/image_io.hpp"
#include "iism/latentdiff.hpp"
#include "iism/maskvae.hpp"
#include "iism/phantom.hpp"
#include "iism/store.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct GlobalOpts {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool verbose = false;
};

std::array<double, 3> parse_ratios(const std::string& text) {
    std::array<double, 3> ratios{};
    std::stringstream ss(text);
    std::string item;
    std::size_t i = 0;
    while (std::getline(ss, item, ',')) {
        if (i >= 3) iism::throw_error(iism::ErrorKind::validation, "expected 3 split ratios");
        ratios[i++] = std::stod(item);
    }
    if (i != 3) iism::throw_error(iism::ErrorKind::validation, "expected 3 split ratios");
    double sum = ratios[0] + ratios[1] + ratios[2];
    if (!(sum > 0.0))
        iism::throw_error(iism::ErrorKind::validation, "split ratios must be positive");
    for (auto& r : ratios) r /= sum; // flags may be given unnormalized
    return ratios;
}

std::pair<double, double> parse_band(const std::string& text) {
    const auto comma = text.find(',');
    if (comma == std::string::npos)
        iism::throw_error(iism::ErrorKind::validation, "band must be lo,hi");
    return {std::stod(text.substr(0, comma)), std::stod(text.substr(comma + 1))};
}

iism::LogFn make_logger() {
    return [](const std::string& line) { std::cout << line << std::endl; };
}

iism::RunConfig resolve_run_config(const GlobalOpts& g, const std::string& local_config,
                                   std::optional<std::uint64_t> local_seed,
                                   std::size_t image_size) {
    const std::string config_path = !local_config.empty() ? local_config : g.config;
    if (!config_path.empty()) return iism::RunConfig::from_json_file(config_path);
    iism::RunConfig cfg;
    if (local_seed) cfg.seed = *local_seed;
    else if (g.seed) cfg.seed = *g.seed;
    else
        iism::throw_error(iism::ErrorKind::validation,
                          "either --config or --seed must be given");
    cfg.vae.seed = cfg.seed;
    cfg.diffusion.seed = cfg.seed;
    cfg.data.image_size = image_size;
    cfg.vae.height = image_size;
    cfg.vae.width = image_size;
    cfg.validate();
    return cfg;
}

std::vector<iism::LabelMap> load_masks_from_dir(const fs::path& dir) {
    std::vector<fs::path> files;
    if (!fs::is_directory(dir))
        iism::throw_error(iism::ErrorKind::io,
                          fmt::format("{} is not a directory", dir.string()));
    for (const auto& entry : fs::recursive_directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".iism")
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    std::vector<iism::LabelMap> masks;
    masks.reserve(files.size());
    for (const auto& f : files) masks.push_back(iism::read_iism(f).map);
    return masks;
}

std::vector<iism::LabelMap> load_masks_from_manifest(const iism::Manifest& manifest,
                                                     const std::string& split) {
    std::vector<iism::LabelMap> masks;
    for (const auto& r : manifest.records) {
        if (split != "all" && iism::to_string(r.split) != split) continue;
        masks.push_back(iism::read_label_map(manifest.resolve(r)));
    }
    return masks;
}

void write_json(const json& j, const std::string& out) {
    if (out.empty() || out == "-") {
        std::cout << j.dump(2) << std::endl;
        return;
    }
    const fs::path path(out);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::trunc);
    if (!f)
        iism::throw_error(iism::ErrorKind::io, fmt::format("cannot write {}", out));
    f << j.dump(2) << "\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"anatomy-preserving brain mask synthesis (MaskVAE + latent diffusion)"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--config", g.config, "run configuration JSON")->expected(1);
    app.add_option("--seed", g.seed, "global seed");
    app.add_option("--out", g.out, "output directory");
    app.add_flag("--verbose", g.verbose, "chattier logging");

    // ---- phantom ----------------------------------------------------------
    auto* cmd_phantom = app.add_subcommand("phantom", "generate a synthetic phantom corpus");
    struct {
        std::string out, config, split = "0.8,0.1,0.1";
        std::size_t patients = 20, slices = 40, size = 64;
        double lesion_prob = 0.3, second_lesion_prob = 0.15;
        std::optional<std::uint64_t> seed;
    } ph;
    cmd_phantom->add_option("--out", ph.out, "corpus directory");
    cmd_phantom->add_option("--patients", ph.patients, "number of phantom patients");
    cmd_phantom->add_option("--slices", ph.slices, "slices per volume");
    cmd_phantom->add_option("--lesion-prob", ph.lesion_prob, "per-slice lesion probability");
    cmd_phantom->add_option("--second-lesion-prob", ph.second_lesion_prob,
                            "second focus probability");
    cmd_phantom->add_option("--size", ph.size, "image size in pixels");
    cmd_phantom->add_option("--seed", ph.seed, "corpus seed");
    cmd_phantom->add_option("--split", ph.split, "train,val,test ratios");
    cmd_phantom->add_option("--phantom-config", ph.config, "phantom config JSON file");
    cmd_phantom->callback([&] {
        iism::PhantomConfig cfg;
        if (!ph.config.empty()) cfg = iism::PhantomConfig::from_json_file(ph.config);
        else {
            cfg.image_size = ph.size;
            cfg.lesion_probability = ph.lesion_prob;
            cfg.second_lesion_probability = ph.second_lesion_prob;
            cfg.slices_per_volume = ph.slices;
        }
        if (ph.seed) cfg.seed = *ph.seed;
        else if (g.seed) cfg.seed = *g.seed;
        cfg.validate();
        const std::string out = !ph.out.empty() ? ph.out : g.out;
        if (out.empty())
            iism::throw_error(iism::ErrorKind::validation, "--out is required");
        iism::SplitSpec split{parse_ratios(ph.split), cfg.seed};
        const auto manifest = iism::generate_corpus(cfg, ph.patients, out, split);
        std::cout << fmt::format("wrote {} slices for {} patients under {}\n",
                                 manifest.records.size(), ph.patients, out);
    });

    // ---- manifest ---------------------------------------------------------
    auto* cmd_manifest = app.add_subcommand("manifest", "scan a mask directory into a manifest");
    struct {
        std::string root, out, split = "0.8,0.1,0.1", band;
        std::optional<std::uint64_t> seed;
    } mf;
    cmd_manifest->add_option("--root", mf.root, "directory of <patient>/<slice>.iism|.png")
        ->required();
    cmd_manifest->add_option("--split", mf.split, "train,val,test ratios");
    cmd_manifest->add_option("--seed", mf.seed, "split seed");
    cmd_manifest->add_option("--band", mf.band, "cranial band lo,hi (e.g. 0.20,0.95)");
    cmd_manifest->add_option("--out", mf.out, "manifest path (default <root>/manifest.jsonl)");
    cmd_manifest->callback([&] {
        iism::SplitSpec split{parse_ratios(mf.split), mf.seed ? *mf.seed
                                                              : (g.seed ? *g.seed : 0)};
        std::optional<std::pair<double, double>> band;
        if (!mf.band.empty()) band = parse_band(mf.band);
        const auto manifest =
            iism::build_manifest(mf.root, iism::default_catalog(), split, band);
        const fs::path out = !mf.out.empty() ? fs::path(mf.out)
                                             : fs::path(mf.root) / "manifest.jsonl";
        iism::save_manifest(manifest, out);
        std::cout << fmt::format("manifest with {} records -> {}\n", manifest.records.size(),
                                 out.string());
    });

    // ---- train vae / vae train ---------------------------------------------
    struct VaeTrainArgs {
        std::string manifest, out, config;
        std::optional<std::uint64_t> seed;
    };
    auto add_vae_train = [&](CLI::App* cmd, VaeTrainArgs& args) {
        cmd->add_option("--manifest", args.manifest, "training manifest")->required();
        cmd->add_option("--out", args.out, "checkpoint directory");
        cmd->add_option("--config", args.config, "run configuration JSON");
        cmd->add_option("--seed", args.seed, "seed (when no config is given)");
        cmd->callback([&] {
            const auto manifest = iism::load_manifest(args.manifest);
            auto cfg = resolve_run_config(g, args.config, args.seed, manifest.height);
            const std::string out = !args.out.empty() ? args.out : g.out;
            if (out.empty())
                iism::throw_error(iism::ErrorKind::validation, "--out is required");
            const auto result =
                iism::train_vae(cfg.vae, manifest, cfg.data.weights, out, make_logger());
            std::cout << fmt::format("best epoch {} -> {}\n", result.best_epoch,
                                     result.best_checkpoint.string());
        });
    };

    // ---- train diff / diff train -------------------------------------------
    struct DiffTrainArgs {
        std::string vae, manifest, out, config;
        std::optional<std::uint64_t> seed;
    };
    auto add_diff_train = [&](CLI::App* cmd, DiffTrainArgs& args) {
        cmd->add_option("--vae", args.vae, "frozen VAE checkpoint")->required();
        cmd->add_option("--manifest", args.manifest, "training manifest")->required();
        cmd->add_option("--out", args.out, "checkpoint directory");
        cmd->add_option("--config", args.config, "run configuration JSON");
        cmd->add_option("--seed", args.seed, "seed (when no config is given)");
        cmd->callback([&] {
            const auto manifest = iism::load_manifest(args.manifest);
            auto cfg = resolve_run_config(g, args.config, args.seed, manifest.height);
            const std::string out = !args.out.empty() ? args.out : g.out;
            if (out.empty())
                iism::throw_error(iism::ErrorKind::validation, "--out is required");
            const auto vae = iism::vae_from_checkpoint(iism::load_checkpoint(args.vae));
            const auto result =
                iism::train_diffusion(vae, manifest, cfg.diffusion, out, make_logger());
            std::cout << fmt::format("best epoch {} -> {}\n", result.best_epoch,
                                     result.best_checkpoint.string());
        });
    };

    auto* cmd_train = app.add_subcommand("train", "train a pipeline stage");
    cmd_train->require_subcommand(1);
    VaeTrainArgs tv_args;
    add_vae_train(cmd_train->add_subcommand("vae", "train the mask VAE (stage I)"), tv_args);
    DiffTrainArgs td_args;
    add_diff_train(cmd_train->add_subcommand("diff", "train latent diffusion (stage II)"),
                   td_args);

    auto* cmd_vae = app.add_subcommand("vae", "mask VAE utilities");
    cmd_vae->require_subcommand(1);
    VaeTrainArgs vt_args;
    add_vae_train(cmd_vae->add_subcommand("train", "train the mask VAE"), vt_args);
    {
        auto* rec = cmd_vae->add_subcommand("reconstruct", "encode + decode one mask");
        static struct {
            std::string vae, in, out;
        } ra;
        rec->add_option("--vae", ra.vae, "VAE checkpoint")->required();
        rec->add_option("--in", ra.in, "input mask (.iism or .png)")->required();
        rec->add_option("--out", ra.out, "output .iism path")->required();
        rec->callback([&] {
            const auto vae = iism::vae_from_checkpoint(iism::load_checkpoint(ra.vae));
            const auto input = iism::read_label_map(ra.in);
            const auto recon = iism::reconstruct_mask(vae, input);
            iism::write_iism(recon, std::uint8_t(vae.cfg.in_channels), ra.out);
            std::cout << fmt::format("reconstruction -> {}\n", ra.out);
        });
    }

    auto* cmd_diff = app.add_subcommand("diff", "latent diffusion utilities");
    cmd_diff->require_subcommand(1);
    DiffTrainArgs dt_args;
    add_diff_train(cmd_diff->add_subcommand("train", "train latent diffusion"), dt_args);

    // ---- sample -------------------------------------------------------------
    auto* cmd_sample = app.add_subcommand("sample", "draw masks from the trained pipeline");
    struct {
        std::string vae, diff, out, grid, real;
        int y = 0;
        std::size_t n = 1;
        std::optional<std::uint64_t> seed;
        bool png = false;
    } sa;
    cmd_sample->add_option("--vae", sa.vae, "VAE checkpoint")->required();
    cmd_sample->add_option("--diff", sa.diff, "diffusion checkpoint")->required();
    cmd_sample->add_option("--y", sa.y, "lesion prompt (0 or 1)");
    cmd_sample->add_option("--n", sa.n, "number of masks");
    cmd_sample->add_option("--seed", sa.seed, "sampling seed");
    cmd_sample->add_option("--out", sa.out, "output directory");
    cmd_sample->add_flag("--png", sa.png, "also write rendered PNGs");
    cmd_sample->add_option("--grid", sa.grid, "write a real-vs-synthetic grid figure");
    cmd_sample->add_option("--real", sa.real, "manifest of real masks for --grid");
    cmd_sample->callback([&] {
        const std::string out = !sa.out.empty() ? sa.out : g.out;
        if (out.empty())
            iism::throw_error(iism::ErrorKind::validation, "--out is required");
        const std::uint64_t seed = sa.seed ? *sa.seed : (g.seed ? *g.seed : 0);
        const auto vae = iism::vae_from_checkpoint(iism::load_checkpoint(sa.vae));
        const auto diffusion =
            iism::diffusion_from_checkpoint(iism::load_checkpoint(sa.diff));
        const auto masks = iism::sample_masks(vae, diffusion, sa.y, sa.n, seed);
        const auto catalog = iism::default_catalog();
        fs::create_directories(out);
        for (std::size_t i = 0; i < masks.size(); ++i) {
            const auto stem = fmt::format("sample_{:05}", i);
            iism::write_iism(masks[i], std::uint8_t(vae.cfg.in_channels),
                             fs::path(out) / (stem + ".iism"));
            if (sa.png)
                iism::render_png_file(masks[i], catalog, fs::path(out) / (stem + ".png"));
        }
        if (!sa.grid.empty()) {
            if (sa.real.empty())
                iism::throw_error(iism::ErrorKind::validation,
                                  "--grid needs --real <manifest>");
            const auto manifest = iism::load_manifest(sa.real);
            auto real = load_masks_from_manifest(manifest, "test");
            if (real.empty()) real = load_masks_from_manifest(manifest, "all");
            const std::size_t cols = std::min<std::size_t>({8, masks.size(), real.size()});
            if (cols == 0)
                iism::throw_error(iism::ErrorKind::validation, "nothing to draw in the grid");
            std::vector<std::vector<iism::LabelMap>> rows(2);
            for (std::size_t i = 0; i < cols; ++i) {
                rows[0].push_back(real[i]);
                rows[1].push_back(masks[i]);
            }
            iism::write_png_file(iism::render_mask_grid(rows, catalog), sa.grid);
        }
        std::cout << fmt::format("wrote {} masks (y={}) under {}\n", masks.size(), sa.y, out);
    });

    // ---- eval ---------------------------------------------------------------
    auto* cmd_eval = app.add_subcommand("eval", "compare real and synthetic corpora");
    cmd_eval->require_subcommand(1);
    {
        auto* cd = cmd_eval->add_subcommand("classdist", "pixel-wise class distributions");
        static struct {
            std::string real, synth, out, png, split = "all";
        } ca;
        cd->add_option("--real", ca.real, "real manifest")->required();
        cd->add_option("--synth", ca.synth, "directory of synthetic .iism masks")->required();
        cd->add_option("--out", ca.out, "report JSON path (default stdout)");
        cd->add_option("--png", ca.png, "bar chart path prefix");
        cd->add_option("--split", ca.split, "real split to use (all|train|val|test)");
        cd->callback([&] {
            const auto manifest = iism::load_manifest(ca.real);
            const auto catalog = manifest.catalog;
            const auto real = load_masks_from_manifest(manifest, ca.split);
            const auto synth = load_masks_from_dir(ca.synth);
            auto cohort = [&](const std::vector<iism::LabelMap>& masks, int y) {
                std::vector<iism::LabelMap> sel;
                for (const auto& m : masks)
                    if (iism::lesion_flag(m, catalog) == y) sel.push_back(m);
                return sel;
            };
            json out;
            for (int y : {0, 1}) {
                const auto r = cohort(real, y);
                const auto s = cohort(synth, y);
                const std::string key = fmt::format("y{}", y);
                if (r.empty() || s.empty()) {
                    out[key] = {{"skipped", "empty cohort"},
                                {"real_count", r.size()},
                                {"synth_count", s.size()}};
                    continue;
                }
                const auto report = iism::distribution_report(
                    iism::class_distribution(r, catalog.size()),
                    iism::class_distribution(s, catalog.size()));
                json section = report.to_json(catalog);
                section["real_count"] = r.size();
                section["synth_count"] = s.size();
                out[key] = section;
                if (!ca.png.empty())
                    iism::write_png_file(
                        iism::render_class_distribution_chart(report, catalog),
                        fmt::format("{}_y{}.png", ca.png, y));
            }
            write_json(out, ca.out);
        });
    }
    {
        auto* fi = cmd_eval->add_subcommand("fid", "FID table across checkpoints");
        static struct {
            std::string real, vae, ckpts, out, split = "all";
            std::size_t n = 400;
            int y = 0;
            std::optional<std::uint64_t> seed;
        } fa;
        fi->add_option("--real", fa.real, "real manifest")->required();
        fi->add_option("--vae", fa.vae, "VAE checkpoint")->required();
        fi->add_option("--ckpts", fa.ckpts, "comma-separated diffusion checkpoints")
            ->required();
        fi->add_option("--n", fa.n, "samples per checkpoint");
        fi->add_option("--seed", fa.seed, "sampling seed");
        fi->add_option("--y", fa.y, "prompt used for sampling");
        fi->add_option("--split", fa.split, "real split to use (all|train|val|test)");
        fi->add_option("--out", fa.out, "table JSON path (default stdout)");
        fi->callback([&] {
            const auto manifest = iism::load_manifest(fa.real);
            const auto real = load_masks_from_manifest(manifest, fa.split);
            std::vector<fs::path> ckpts;
            std::stringstream ss(fa.ckpts);
            std::string item;
            while (std::getline(ss, item, ',')) ckpts.emplace_back(item);
            const auto vae = iism::vae_from_checkpoint(iism::load_checkpoint(fa.vae));
            const std::uint64_t seed = fa.seed ? *fa.seed : (g.seed ? *g.seed : 0);
            const auto selection =
                iism::checkpoint_selection(ckpts, vae, real, fa.n, seed, fa.y);
            write_json(selection.to_json(), fa.out);
        });
    }

    // ---- export -------------------------------------------------------------
    auto* cmd_export = app.add_subcommand("export", "package masks for release");
    struct {
        std::string in, out;
    } ex;
    cmd_export->add_option("--in", ex.in, "directory of .iism masks")->required();
    cmd_export->add_option("--out", ex.out, "release directory");
    cmd_export->callback([&] {
        const std::string out = !ex.out.empty() ? ex.out : g.out;
        if (out.empty())
            iism::throw_error(iism::ErrorKind::validation, "--out is required");
        const auto masks = load_masks_from_dir(ex.in);
        const auto manifest = iism::export_corpus(masks, out, iism::default_catalog());
        std::cout << fmt::format("exported {} masks -> {}\n", manifest.records.size(), out);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const iism::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.kind() == iism::ErrorKind::validation ? 3 : 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
    return 0;
}
