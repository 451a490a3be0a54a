#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "iism/label.hpp"

namespace iism {

// IISM1 label-map container: magic "IISM", version u8 = 1, H u32 LE, W u32 LE,
// C u8, then H*W class-id bytes row-major.
inline constexpr std::uint8_t kIismFormatVersion = 1;

struct IismFile {
    LabelMap map;
    std::uint8_t class_count = 0;
};

std::vector<std::uint8_t> iism_bytes(const LabelMap& m, std::uint8_t class_count);
IismFile parse_iism(const std::vector<std::uint8_t>& bytes);

void write_iism(const LabelMap& m, std::uint8_t class_count, const std::filesystem::path& path);
IismFile read_iism(const std::filesystem::path& path);

// 8-bit single-channel PNG with pixel value = class id. Other PNG layouts are
// converted to 8-bit gray on read.
void write_label_png(const LabelMap& m, const std::filesystem::path& path);
LabelMap read_label_png(const std::filesystem::path& path);

// Dispatch on extension: ".iism" or ".png".
LabelMap read_label_map(const std::filesystem::path& path);

// Interleaved 8-bit RGB raster.
struct RgbImage {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> pixels; // 3 * height * width

    std::uint8_t* at(std::size_t row, std::size_t col) {
        return pixels.data() + 3 * (row * width + col);
    }
    const std::uint8_t* at(std::size_t row, std::size_t col) const {
        return pixels.data() + 3 * (row * width + col);
    }
};

// Paint each class with its catalog color. Labels outside the catalog raise a
// validation error.
RgbImage render_rgb(const LabelMap& m, const ClassCatalog& catalog);

std::vector<std::uint8_t> encode_png(const RgbImage& image);
RgbImage decode_png_rgb(const std::vector<std::uint8_t>& bytes);

// RGB PNG bytes of the rendered map.
std::vector<std::uint8_t> render_png(const LabelMap& m, const ClassCatalog& catalog);
void render_png_file(const LabelMap& m, const ClassCatalog& catalog,
                     const std::filesystem::path& path);

void write_png_file(const RgbImage& image, const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

} // namespace iism
