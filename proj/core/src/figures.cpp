#include "iism/figures.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace iism {

namespace {

void fill_rect(RgbImage& img, std::size_t top, std::size_t left, std::size_t height,
               std::size_t width, std::array<std::uint8_t, 3> color) {
    const std::size_t bottom = std::min(img.height, top + height);
    const std::size_t right = std::min(img.width, left + width);
    for (std::size_t i = top; i < bottom; ++i)
        for (std::size_t j = left; j < right; ++j) {
            auto* px = img.at(i, j);
            px[0] = color[0];
            px[1] = color[1];
            px[2] = color[2];
        }
}

// 5x7 bitmap glyphs, one row per byte (low 5 bits), just enough for numeric
// annotations.
const std::uint8_t* glyph(char c) {
    static const std::uint8_t digits[10][7] = {
        {0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e}, // 0
        {0x04, 0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e}, // 1
        {0x0e, 0x11, 0x01, 0x06, 0x08, 0x10, 0x1f}, // 2
        {0x0e, 0x11, 0x01, 0x06, 0x01, 0x11, 0x0e}, // 3
        {0x02, 0x06, 0x0a, 0x12, 0x1f, 0x02, 0x02}, // 4
        {0x1f, 0x10, 0x1e, 0x01, 0x01, 0x11, 0x0e}, // 5
        {0x06, 0x08, 0x10, 0x1e, 0x11, 0x11, 0x0e}, // 6
        {0x1f, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}, // 7
        {0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e}, // 8
        {0x0e, 0x11, 0x11, 0x0f, 0x01, 0x02, 0x0c}, // 9
    };
    static const std::uint8_t dot[7] = {0x00, 0x00, 0x00, 0x00, 0x00, 0x0c, 0x0c};
    static const std::uint8_t dash[7] = {0x00, 0x00, 0x00, 0x1f, 0x00, 0x00, 0x00};
    static const std::uint8_t eq[7] = {0x00, 0x00, 0x1f, 0x00, 0x1f, 0x00, 0x00};
    static const std::uint8_t tee[7] = {0x1f, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04};
    static const std::uint8_t vee[7] = {0x11, 0x11, 0x11, 0x11, 0x0a, 0x0a, 0x04};
    if (c >= '0' && c <= '9') return digits[c - '0'];
    switch (c) {
        case '.': return dot;
        case '-': return dash;
        case '=': return eq;
        case 'T': return tee;
        case 'V': return vee;
        default: return nullptr;
    }
}

void draw_text(RgbImage& img, std::size_t top, std::size_t left, const std::string& text,
               std::array<std::uint8_t, 3> color) {
    std::size_t x = left;
    for (char c : text) {
        if (const std::uint8_t* g = glyph(c)) {
            for (std::size_t row = 0; row < 7; ++row)
                for (std::size_t col = 0; col < 5; ++col)
                    if (g[row] & (1u << (4 - col)))
                        fill_rect(img, top + row, x + col, 1, 1, color);
        }
        x += 6;
    }
}

} // namespace

RgbImage render_class_distribution_chart(const DistributionReport& report,
                                         const ClassCatalog& catalog) {
    const std::size_t classes = report.real.size();
    const std::size_t bar_w = 22, gap = 14, margin = 30;
    const std::size_t plot_h = 220;
    RgbImage img;
    img.height = plot_h + 2 * margin;
    img.width = margin * 2 + classes * (2 * bar_w + gap);
    img.pixels.assign(3 * img.height * img.width, 255);

    const double peak = std::max(
        1e-9, std::max(*std::max_element(report.real.begin(), report.real.end()),
                       *std::max_element(report.synth.begin(), report.synth.end())));
    const std::size_t base = margin + plot_h;
    for (std::size_t c = 0; c < classes; ++c) {
        auto color = catalog.entry(ClassId(c)).color;
        std::array<std::uint8_t, 3> tint{std::uint8_t((color[0] + 2 * 255) / 3),
                                         std::uint8_t((color[1] + 2 * 255) / 3),
                                         std::uint8_t((color[2] + 2 * 255) / 3)};
        const std::size_t x = margin + c * (2 * bar_w + gap);
        const auto hr = std::size_t(std::lround(report.real[c] / peak * double(plot_h)));
        const auto hs = std::size_t(std::lround(report.synth[c] / peak * double(plot_h)));
        fill_rect(img, base - hr, x, hr, bar_w, color);
        fill_rect(img, base - hs, x + bar_w + 2, hs, bar_w, tint);
        draw_text(img, base + 6, x + bar_w - 2, fmt::format("{}", c), {0, 0, 0});
    }
    // Baseline and the TV annotation.
    fill_rect(img, base, margin / 2, 1, img.width - margin, {0, 0, 0});
    draw_text(img, margin / 2, margin, fmt::format("TV={:.4f}", report.total_variation),
              {0, 0, 0});
    return img;
}

RgbImage render_mask_grid(const std::vector<std::vector<LabelMap>>& rows,
                          const ClassCatalog& catalog, std::size_t tile) {
    std::size_t cols = 0;
    for (const auto& row : rows) cols = std::max(cols, row.size());
    if (cols == 0 || rows.empty())
        throw_error(ErrorKind::validation, "empty mask grid");
    const std::size_t pad = 4;
    RgbImage img;
    img.height = rows.size() * (tile + pad) + pad;
    img.width = cols * (tile + pad) + pad;
    img.pixels.assign(3 * img.height * img.width, 32);

    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < rows[r].size(); ++c) {
            const LabelMap scaled = resize_nearest(rows[r][c], tile, tile);
            const RgbImage patch = render_rgb(scaled, catalog);
            const std::size_t top = pad + r * (tile + pad);
            const std::size_t left = pad + c * (tile + pad);
            for (std::size_t i = 0; i < tile; ++i)
                for (std::size_t j = 0; j < tile; ++j) {
                    auto* dst = img.at(top + i, left + j);
                    const auto* src = patch.at(i, j);
                    dst[0] = src[0];
                    dst[1] = src[1];
                    dst[2] = src[2];
                }
        }
    }
    return img;
}

} // namespace iism
