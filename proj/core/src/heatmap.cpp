#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>

#include "longctx/attention.hpp"
#include "text_format.hpp"

namespace longctx {

namespace {

constexpr std::size_t kMaxSvgCells = 256;
constexpr int kCellPixels = 3;
// Log-scale colors span at most this many decades below the maximum.
constexpr double kLogDecades = 12.0;

std::string hex_color(double t) {
  // Light yellow (low) to dark red (high).
  t = std::clamp(t, 0.0, 1.0);
  const int r = static_cast<int>(std::lround(255.0 - 80.0 * t));
  const int g = static_cast<int>(std::lround(250.0 - 240.0 * t));
  const int b = static_cast<int>(std::lround(205.0 - 185.0 * t));
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", r, g, b);
  return buf;
}

void write_svg(const AttentionSlice& slice, const std::filesystem::path& path,
               HeatmapScale scale) {
  const std::size_t rows = slice.positions.size();
  const std::size_t cols = slice.length();
  const std::size_t row_bin = (rows + kMaxSvgCells - 1) / kMaxSvgCells;
  const std::size_t col_bin = (cols + kMaxSvgCells - 1) / kMaxSvgCells;
  const std::size_t grid_rows = (rows + row_bin - 1) / row_bin;
  const std::size_t grid_cols = (cols + col_bin - 1) / col_bin;

  // Max |alpha| per bin; NaN marks bins entirely above the diagonal.
  const double kEmpty = std::numeric_limits<double>::quiet_NaN();
  Matrix<double> bins(grid_rows, grid_cols, kEmpty);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j <= slice.positions[r] && j < cols; ++j) {
      double& cell = bins(r / row_bin, j / col_bin);
      const double v = std::abs(slice.alpha(r, j));
      cell = std::isnan(cell) ? v : std::max(cell, v);
    }
  }

  double hi = -std::numeric_limits<double>::infinity();
  double lo = std::numeric_limits<double>::infinity();
  for (double v : bins.flat()) {
    if (std::isnan(v)) continue;
    const double rv = render_value(v, scale);
    if (!std::isfinite(rv)) continue;
    hi = std::max(hi, rv);
    lo = std::min(lo, rv);
  }
  if (scale == HeatmapScale::kLog) lo = std::max(lo, hi - kLogDecades);
  const double range = hi > lo ? hi - lo : 1.0;

  auto out = detail::open_for_write(path);
  const std::size_t width = grid_cols * kCellPixels;
  const std::size_t height = grid_rows * kCellPixels;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << ' '
      << height << "\">\n";
  out << "<title>layer " << slice.layer << " channel " << slice.channel
      << (scale == HeatmapScale::kLog ? " log10|alpha|" : " alpha")
      << "</title>\n";
  out << "<rect width=\"" << width << "\" height=\"" << height
      << "\" fill=\"#ffffff\"/>\n";
  for (std::size_t gr = 0; gr < grid_rows; ++gr) {
    for (std::size_t gc = 0; gc < grid_cols; ++gc) {
      const double v = bins(gr, gc);
      if (std::isnan(v)) continue;
      const double rv = render_value(v, scale);
      const double t = std::isfinite(rv) ? (rv - lo) / range : 0.0;
      out << "<rect x=\"" << gc * kCellPixels << "\" y=\"" << gr * kCellPixels
          << "\" width=\"" << kCellPixels << "\" height=\"" << kCellPixels
          << "\" fill=\"" << hex_color(t) << "\"/>\n";
    }
  }
  out << "</svg>\n";
}

}  // namespace

double render_value(double alpha, HeatmapScale scale) noexcept {
  if (scale == HeatmapScale::kLinear) return alpha;
  const double mag = std::abs(alpha);
  return mag > 0.0 ? std::log10(mag) : -std::numeric_limits<double>::infinity();
}

void export_heatmap(const AttentionSlice& slice,
                    const std::filesystem::path& csv_path, HeatmapScale scale,
                    bool write_svg_file) {
  {
    auto out = detail::open_for_write(csv_path);
    out << "i,j,alpha\n";
    for (std::size_t r = 0; r < slice.positions.size(); ++r) {
      const std::size_t i = slice.positions[r];
      for (std::size_t j = 0; j <= i && j < slice.length(); ++j) {
        out << i << ',' << j << ',' << detail::format_real(slice.alpha(r, j))
            << '\n';
      }
    }
    if (!out) throw DataError("failed writing " + csv_path.string());
  }
  if (write_svg_file) {
    auto svg_path = csv_path;
    svg_path.replace_extension(".svg");
    write_svg(slice, svg_path, scale);
  }
}

}  // namespace longctx
