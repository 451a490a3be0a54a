#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "iism/eval.hpp"
#include "iism/image_io.hpp"
#include "iism/label.hpp"

namespace iism {

// Grouped bar chart of real vs synthetic class fractions. Real bars use the
// catalog colors, synthetic bars a lighter tint; the TV value is printed in
// the corner.
RgbImage render_class_distribution_chart(const DistributionReport& report,
                                         const ClassCatalog& catalog);

// Tile rendered masks into labelled rows (e.g. real on top, synthetic below).
RgbImage render_mask_grid(const std::vector<std::vector<LabelMap>>& rows,
                          const ClassCatalog& catalog, std::size_t tile = 96);

} // namespace iism
