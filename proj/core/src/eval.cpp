#include "iism/eval.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "iism/store.hpp"

namespace iism {

using nlohmann::json;

ClassDistribution class_distribution(std::span<const LabelMap> masks,
                                     std::size_t class_count) {
    if (masks.empty())
        throw_error(ErrorKind::validation, "class distribution of an empty corpus");
    const std::size_t h = masks.front().height(), w = masks.front().width();
    std::vector<double> counts(class_count, 0.0);
    double total = 0.0;
    for (const auto& m : masks) {
        if (m.height() != h || m.width() != w)
            throw_error(ErrorKind::validation, "corpus masks must share one resolution");
        for (ClassId v : m.data()) {
            if (v >= class_count)
                throw_error(ErrorKind::validation,
                            fmt::format("label {} outside class count {}", v, class_count));
            counts[v] += 1.0;
        }
        total += double(m.pixels());
    }
    ClassDistribution d;
    d.fractions.resize(class_count);
    for (std::size_t c = 0; c < class_count; ++c) d.fractions[c] = counts[c] / total;
    return d;
}

DistributionReport distribution_report(const ClassDistribution& real,
                                       const ClassDistribution& synth) {
    if (real.fractions.size() != synth.fractions.size())
        throw_error(ErrorKind::validation, "distributions have different class counts");
    DistributionReport r;
    r.real = real.fractions;
    r.synth = synth.fractions;
    r.delta.resize(real.fractions.size());
    double tv = 0.0;
    for (std::size_t c = 0; c < real.fractions.size(); ++c) {
        r.delta[c] = synth.fractions[c] - real.fractions[c];
        tv += std::abs(real.fractions[c] - synth.fractions[c]);
    }
    r.total_variation = 0.5 * tv;
    return r;
}

json DistributionReport::to_json(const ClassCatalog& catalog) const {
    json classes = json::array();
    for (std::size_t c = 0; c < real.size(); ++c)
        classes.push_back({{"class", catalog.entry(ClassId(c)).name},
                           {"real", real[c]},
                           {"synth", synth[c]},
                           {"delta", delta[c]}});
    return json{{"classes", classes}, {"total_variation", total_variation}};
}

std::vector<double> extract_features(const LabelMap& m, std::size_t class_count) {
    if (m.max_label() >= class_count)
        throw_error(ErrorKind::validation,
                    fmt::format("label {} outside class count {}", m.max_label(), class_count));
    const std::size_t h = m.height(), w = m.width();
    const double cr = double(h - 1) / (2.0 * double(h)); // discrete grid mean
    const double cc = double(w - 1) / (2.0 * double(w));

    std::vector<double> count(class_count, 0.0);
    std::vector<double> sr(class_count, 0.0), sc(class_count, 0.0);
    std::vector<double> srr(class_count, 0.0), scc(class_count, 0.0);
    for (std::size_t i = 0; i < h; ++i) {
        const double r = double(i) / double(h);
        for (std::size_t j = 0; j < w; ++j) {
            const double c = double(j) / double(w);
            const ClassId v = m.at(i, j);
            count[v] += 1.0;
            sr[v] += r;
            sc[v] += c;
            srr[v] += r * r;
            scc[v] += c * c;
        }
    }

    std::vector<double> f;
    f.reserve(feature_dim(class_count));
    const double pixels = double(m.pixels());
    for (std::size_t v = 0; v < class_count; ++v) {
        const double area = count[v] / pixels;
        double mr = cr, mc = cc, vr = 0.0, vc = 0.0;
        if (count[v] > 0.0) {
            mr = sr[v] / count[v];
            mc = sc[v] / count[v];
            vr = srr[v] / count[v] - mr * mr;
            vc = scc[v] / count[v] - mc * mc;
        }
        f.insert(f.end(), {area, mr, mc, std::max(vr, 0.0), std::max(vc, 0.0)});
    }
    return f;
}

FeatureStats feature_stats(std::span<const LabelMap> masks, std::size_t class_count) {
    if (masks.size() < 2)
        throw_error(ErrorKind::validation, "feature statistics need at least 2 samples");
    const std::size_t f = feature_dim(class_count);
    Eigen::MatrixXd features(masks.size(), f);
    for (std::size_t i = 0; i < masks.size(); ++i) {
        const auto row = extract_features(masks[i], class_count);
        for (std::size_t j = 0; j < f; ++j) features(Eigen::Index(i), Eigen::Index(j)) = row[j];
    }
    FeatureStats s;
    s.count = masks.size();
    s.mean = features.colwise().mean();
    Eigen::MatrixXd centered = features.rowwise() - s.mean.transpose();
    s.covariance = centered.transpose() * centered / double(masks.size() - 1);
    return s;
}

double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
    if (a.mean.size() != b.mean.size())
        throw_error(ErrorKind::validation, "feature dimensions differ");
    const Eigen::Index f = a.mean.size();
    for (const auto* s : {&a, &b}) {
        if (s->covariance.rows() != f || s->covariance.cols() != f)
            throw_error(ErrorKind::validation, "covariance shape does not match the mean");
        if ((s->covariance - s->covariance.transpose()).cwiseAbs().maxCoeff() > 1e-9)
            throw_error(ErrorKind::validation, "covariance is not symmetric");
    }

    const double mean_term = (a.mean - b.mean).squaredNorm();
    const Eigen::MatrixXd product = a.covariance * b.covariance;
    const Eigen::MatrixXd sym = 0.5 * (product + product.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    if (es.info() != Eigen::Success)
        throw_error(ErrorKind::numerics, "eigendecomposition failed");
    // Small negative eigenvalues of the symmetrized product are expected for
    // distinct, ill-conditioned covariances; clamp them and only reject
    // spectra that are negative beyond a scale-relative tolerance.
    const double lambda_max = std::max(0.0, es.eigenvalues().maxCoeff());
    const double tolerance = 1e-6 * std::max(1.0, lambda_max);
    double sqrt_trace = 0.0;
    for (Eigen::Index i = 0; i < f; ++i) {
        double lambda = es.eigenvalues()[i];
        if (lambda < -tolerance)
            throw_error(ErrorKind::numerics,
                        fmt::format("covariance product eigenvalue {} below tolerance {}",
                                    lambda, -tolerance));
        lambda = std::max(lambda, 0.0);
        sqrt_trace += std::sqrt(lambda);
    }
    return mean_term + a.covariance.trace() + b.covariance.trace() - 2.0 * sqrt_trace;
}

double fid(std::span<const LabelMap> real, std::span<const LabelMap> synth,
           std::size_t class_count) {
    const std::size_t f = feature_dim(class_count);
    if (real.size() < f + 1 || synth.size() < f + 1)
        throw_error(ErrorKind::validation,
                    fmt::format("fid needs at least {} samples per corpus (got {} and {})",
                                f + 1, real.size(), synth.size()));
    FeatureStats a = feature_stats(real, class_count);
    FeatureStats b = feature_stats(synth, class_count);
    a.covariance.diagonal().array() += 1e-6;
    b.covariance.diagonal().array() += 1e-6;
    return frechet_distance(a, b);
}

json CheckpointSelection::to_json() const {
    json rows = json::array();
    for (const auto& r : table)
        rows.push_back({{"epoch", r.epoch},
                        {"checkpoint", r.checkpoint.string()},
                        {"fid", r.fid},
                        {"best", r.best}});
    return json{{"table", rows}, {"best_checkpoint", best_checkpoint.string()}};
}

CheckpointSelection checkpoint_selection(const std::vector<std::filesystem::path>& checkpoints,
                                         const Vae& vae, std::span<const LabelMap> real,
                                         std::size_t n_samples, std::uint64_t seed, int y) {
    if (checkpoints.empty())
        throw_error(ErrorKind::validation, "checkpoint selection needs at least one checkpoint");
    CheckpointSelection sel;
    for (const auto& path : checkpoints) {
        const Checkpoint ckpt = load_checkpoint(path);
        const Diffusion model = diffusion_from_checkpoint(ckpt);
        const auto masks = sample_masks(vae, model, y, n_samples, seed);
        FidTableRow row;
        row.epoch = ckpt.metadata.value("epoch", std::size_t(0));
        row.checkpoint = path;
        row.fid = fid(real, masks, vae.cfg.in_channels);
        sel.table.push_back(std::move(row));
    }
    std::sort(sel.table.begin(), sel.table.end(),
              [](const FidTableRow& a, const FidTableRow& b) { return a.epoch < b.epoch; });
    auto best = std::min_element(sel.table.begin(), sel.table.end(),
                                 [](const FidTableRow& a, const FidTableRow& b) {
                                     return a.fid < b.fid;
                                 });
    best->best = true;
    sel.best_checkpoint = best->checkpoint;
    return sel;
}

} // namespace iism
