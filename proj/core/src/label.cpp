#include "iism/label.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>

namespace iism {

ClassCatalog::ClassCatalog(std::vector<ClassEntry> entries, ClassId lesion_class)
    : entries_(std::move(entries)), lesion_class_(lesion_class) {
    if (entries_.empty())
        throw_error(ErrorKind::validation, "catalog must contain at least one class");
    std::set<std::string> names;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].id != static_cast<ClassId>(i))
            throw_error(ErrorKind::validation,
                        fmt::format("catalog ids must be contiguous from 0; entry {} has id {}",
                                    i, entries_[i].id));
        if (!names.insert(entries_[i].name).second)
            throw_error(ErrorKind::validation,
                        fmt::format("duplicate class name '{}'", entries_[i].name));
    }
    if (lesion_class_ >= entries_.size())
        throw_error(ErrorKind::validation, "lesion class id outside catalog");
}

const ClassEntry& ClassCatalog::entry(ClassId id) const {
    if (id >= entries_.size())
        throw_error(ErrorKind::validation, fmt::format("class id {} outside catalog", id));
    return entries_[id];
}

ClassCatalog default_catalog() {
    return ClassCatalog(
        {
            {0, "background", {0, 0, 0}},
            {1, "soft_tissue", {255, 204, 153}},
            {2, "bone", {255, 255, 255}},
            {3, "csf", {0, 102, 204}},
            {4, "gray_matter", {128, 128, 128}},
            {5, "white_matter", {220, 220, 220}},
            {6, "infarct", {220, 20, 20}},
        },
        /*lesion_class=*/6);
}

LabelMap::LabelMap(std::size_t height, std::size_t width)
    : height_(height), width_(width), data_(height * width, 0) {
    if (height_ == 0 || width_ == 0)
        throw_error(ErrorKind::validation, "label map dimensions must be >= 1");
}

LabelMap::LabelMap(std::size_t height, std::size_t width, std::vector<ClassId> data)
    : height_(height), width_(width), data_(std::move(data)) {
    if (height_ == 0 || width_ == 0)
        throw_error(ErrorKind::validation, "label map dimensions must be >= 1");
    if (data_.size() != height_ * width_)
        throw_error(ErrorKind::validation,
                    fmt::format("label map data size {} does not match {}x{}", data_.size(),
                                height_, width_));
}

ClassId LabelMap::max_label() const {
    return *std::max_element(data_.begin(), data_.end());
}

OneHotMask onehot(const LabelMap& m, std::size_t class_count) {
    OneHotMask out;
    out.channels = class_count;
    out.height = m.height();
    out.width = m.width();
    out.data.assign(class_count * m.pixels(), 0);
    const auto& src = m.data();
    for (std::size_t p = 0; p < src.size(); ++p) {
        if (src[p] >= class_count)
            throw_error(ErrorKind::validation,
                        fmt::format("label {} at pixel ({}, {}) is outside class count {}",
                                    src[p], p / m.width(), p % m.width(), class_count));
        out.data[src[p] * src.size() + p] = 1;
    }
    return out;
}

LogitField as_logits(const OneHotMask& x) {
    LogitField out;
    out.channels = x.channels;
    out.height = x.height;
    out.width = x.width;
    out.data.assign(x.data.begin(), x.data.end());
    return out;
}

template <typename T>
LabelMap argmax_decode_span(std::size_t channels, std::size_t height, std::size_t width,
                            const T* data) {
    if (channels == 0)
        throw_error(ErrorKind::validation, "argmax over zero channels");
    const std::size_t pixels = height * width;
    std::vector<ClassId> labels(pixels, 0);
    for (std::size_t p = 0; p < pixels; ++p) {
        T best = data[p];
        if (std::isnan(double(best)))
            throw_error(ErrorKind::numerics, "NaN logit");
        std::size_t best_c = 0;
        for (std::size_t c = 1; c < channels; ++c) {
            T v = data[c * pixels + p];
            if (std::isnan(double(v)))
                throw_error(ErrorKind::numerics, "NaN logit");
            if (v > best) { // strict: ties keep the lowest channel index
                best = v;
                best_c = c;
            }
        }
        labels[p] = static_cast<ClassId>(best_c);
    }
    return LabelMap(height, width, std::move(labels));
}

template LabelMap argmax_decode_span<float>(std::size_t, std::size_t, std::size_t, const float*);
template LabelMap argmax_decode_span<double>(std::size_t, std::size_t, std::size_t,
                                             const double*);

LabelMap argmax_decode(const LogitField& logits) {
    return argmax_decode_span(logits.channels, logits.height, logits.width, logits.data.data());
}

LabelMap resize_nearest(const LabelMap& m, std::size_t height, std::size_t width) {
    if (height == 0 || width == 0)
        throw_error(ErrorKind::validation, "resize target dimensions must be >= 1");
    if (height == m.height() && width == m.width()) return m;
    LabelMap out(height, width);
    for (std::size_t i = 0; i < height; ++i) {
        auto si = static_cast<std::size_t>(std::floor((double(i) + 0.5) * double(m.height()) /
                                                      double(height)));
        si = std::min(si, m.height() - 1);
        for (std::size_t j = 0; j < width; ++j) {
            auto sj = static_cast<std::size_t>(std::floor((double(j) + 0.5) * double(m.width()) /
                                                          double(width)));
            sj = std::min(sj, m.width() - 1);
            out.at(i, j) = m.at(si, sj);
        }
    }
    return out;
}

int lesion_flag(const LabelMap& m, const ClassCatalog& catalog) {
    validate_labels(m, catalog);
    const ClassId lesion = catalog.lesion_class();
    for (ClassId v : m.data())
        if (v == lesion) return 1;
    return 0;
}

void validate_labels(const LabelMap& m, const ClassCatalog& catalog) {
    for (std::size_t p = 0; p < m.data().size(); ++p) {
        if (m.data()[p] >= catalog.size())
            throw_error(ErrorKind::validation,
                        fmt::format("label {} at pixel ({}, {}) is outside the catalog ({} classes)",
                                    m.data()[p], p / m.width(), p % m.width(), catalog.size()));
    }
}

} // namespace iism
