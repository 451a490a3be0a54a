#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "iism/error.hpp"

namespace iism {

// Class identifier inside a label map. Values live in [0, class_count) of the
// catalog in use; the default catalog has 7 classes.
using ClassId = std::uint8_t;

struct ClassEntry {
    ClassId id = 0;
    std::string name;
    std::array<std::uint8_t, 3> color{0, 0, 0}; // display RGB, visualization only
};

// Ordered roster of tissue classes. Ids are contiguous from 0, names unique,
// and exactly one entry is flagged as the lesion class.
class ClassCatalog {
  public:
    ClassCatalog(std::vector<ClassEntry> entries, ClassId lesion_class);

    std::size_t size() const { return entries_.size(); }
    const ClassEntry& entry(ClassId id) const;
    const std::vector<ClassEntry>& entries() const { return entries_; }
    ClassId lesion_class() const { return lesion_class_; }

  private:
    std::vector<ClassEntry> entries_;
    ClassId lesion_class_;
};

// background, soft tissue, bone, CSF, gray matter, white matter, infarct.
// The numeric ordering is a project convention.
ClassCatalog default_catalog();

// H x W grid of class ids, row-major.
class LabelMap {
  public:
    LabelMap(std::size_t height, std::size_t width);
    LabelMap(std::size_t height, std::size_t width, std::vector<ClassId> data);

    std::size_t height() const { return height_; }
    std::size_t width() const { return width_; }
    std::size_t pixels() const { return height_ * width_; }

    ClassId at(std::size_t row, std::size_t col) const { return data_[row * width_ + col]; }
    ClassId& at(std::size_t row, std::size_t col) { return data_[row * width_ + col]; }

    const std::vector<ClassId>& data() const { return data_; }
    std::vector<ClassId>& data() { return data_; }

    ClassId max_label() const;

    bool operator==(const LabelMap& other) const = default;

  private:
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::vector<ClassId> data_;
};

// C x H x W binary tensor; exactly one active channel per pixel.
struct OneHotMask {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> data; // channel-major

    std::uint8_t at(std::size_t c, std::size_t row, std::size_t col) const {
        return data[(c * height + row) * width + col];
    }
};

// C x H x W real tensor of per-class scores.
struct LogitField {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> data; // channel-major

    float at(std::size_t c, std::size_t row, std::size_t col) const {
        return data[(c * height + row) * width + col];
    }
};

// Categorical encoding: output channel k is 1 exactly where m equals k.
// Labels >= class_count raise a validation error naming the offending pixel.
OneHotMask onehot(const LabelMap& m, std::size_t class_count);

// Reinterpret a one-hot mask as 0/1 logits.
LogitField as_logits(const OneHotMask& x);

// Pixel-wise argmax over channels; ties break to the lowest channel index.
// NaN anywhere raises a numerics error.
LabelMap argmax_decode(const LogitField& logits);

// Same decode rule over a raw channel-major buffer (used on decoder outputs of
// either precision without copying into a LogitField first).
template <typename T>
LabelMap argmax_decode_span(std::size_t channels, std::size_t height, std::size_t width,
                            const T* data);

// Nearest-neighbor resize with pixel-center sampling: output pixel (i, j)
// copies source pixel (floor((i + 0.5) * H / h), floor((j + 0.5) * W / w)).
// Never introduces a class absent from the input.
LabelMap resize_nearest(const LabelMap& m, std::size_t height, std::size_t width);

// 1 iff at least one pixel carries the catalog's lesion class.
int lesion_flag(const LabelMap& m, const ClassCatalog& catalog);

// Throws if any pixel's label falls outside the catalog.
void validate_labels(const LabelMap& m, const ClassCatalog& catalog);

} // namespace iism
