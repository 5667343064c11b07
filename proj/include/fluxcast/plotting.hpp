#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fluxcast/common.hpp"
#include "fluxcast/tensor.hpp"

namespace fluxcast {

// ============================================================================
// Raster canvas
// ============================================================================

/// Plain RGB raster. Charts render here first so tests can assert on pixels
/// without decoding files; writing the PNG is a separate step.
struct Image {
  int w = 0, h = 0;
  std::vector<std::uint8_t> rgb;  // 3 bytes per pixel, row-major

  Image() = default;
  Image(int w_, int h_, std::uint8_t r = 255, std::uint8_t g = 255, std::uint8_t b = 255);

  /// Out-of-bounds writes are dropped, so callers can draw near edges freely.
  void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b);
  std::array<std::uint8_t, 3> get(int x, int y) const;
};

void write_png(const std::string& path, const Image& img);

// ============================================================================
// Text
// ============================================================================

/// 5x7 bitmap glyphs: lowercase, digits, and the punctuation that shows up in
/// numbers and identifiers. Uppercase folds to lowercase; anything else draws
/// as a hollow box.
void draw_text(Image& img, int x, int y, const std::string& s, std::uint8_t r = 0,
               std::uint8_t g = 0, std::uint8_t b = 0);
int text_width(const std::string& s);

// ============================================================================
// Charts
// ============================================================================

/// One (H,W) field as colored cells, low-to-high through a fixed dark-to-
/// bright ramp (brightness is monotone in the value, so the brightest cell is
/// the field's argmax). A caption strip below prints the value range.
Image field_map(const Tensor& field, int cell_px = 12, const std::string& title = "");

/// Polylines over a shared x index. Series may differ in length; non-finite
/// entries break the line. log_y drops nonpositive values. Throws when
/// nothing at all is plottable.
Image line_chart(const std::vector<std::vector<double>>& series,
                 const std::vector<std::string>& labels, const std::string& title,
                 bool log_y = false, int w = 640, int h = 360);

/// Labeled vertical bars with the value printed above each bar.
Image bar_chart(const std::vector<std::string>& labels, const std::vector<double>& values,
                const std::string& title, int w = 640, int h = 360);

}  // namespace fluxcast
