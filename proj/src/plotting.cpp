#include "fluxcast/plotting.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>

namespace fluxcast {

// ============================================================================
// Canvas
// ============================================================================

Image::Image(int w_, int h_, std::uint8_t r, std::uint8_t g, std::uint8_t b) : w(w_), h(h_) {
  require_config(w > 0 && h > 0, "image: dimensions must be positive");
  rgb.resize(static_cast<size_t>(w) * h * 3);
  for (size_t i = 0; i < rgb.size(); i += 3) {
    rgb[i] = r;
    rgb[i + 1] = g;
    rgb[i + 2] = b;
  }
}

void Image::set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  if (x < 0 || y < 0 || x >= w || y >= h) return;
  size_t i = (static_cast<size_t>(y) * w + x) * 3;
  rgb[i] = r;
  rgb[i + 1] = g;
  rgb[i + 2] = b;
}

std::array<std::uint8_t, 3> Image::get(int x, int y) const {
  require_config(x >= 0 && y >= 0 && x < w && y < h, "image: pixel out of bounds");
  size_t i = (static_cast<size_t>(y) * w + x) * 3;
  return {rgb[i], rgb[i + 1], rgb[i + 2]};
}

void write_png(const std::string& path, const Image& img) {
  require_data(img.w > 0 && img.h > 0, "plot: refusing to write an empty image");
  std::FILE* fp = std::fopen(path.c_str(), "wb");
  require_data(fp != nullptr, "plot: cannot open " + path);
  std::vector<png_bytep> rows(static_cast<size_t>(img.h));
  for (int y = 0; y < img.h; ++y)
    rows[static_cast<size_t>(y)] =
        const_cast<png_bytep>(img.rgb.data() + static_cast<size_t>(y) * img.w * 3);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw DataError("plot: png write failed for " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

// ============================================================================
// Text
// ============================================================================

namespace {

struct Glyph {
  char c;
  std::uint8_t rows[7];  // 5 bits per row, MSB on the left
};

const Glyph kFont[] = {
    {' ', {0, 0, 0, 0, 0, 0, 0}},
    {'0', {0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110}},
    {'1', {0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110}},
    {'2', {0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111}},
    {'3', {0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110}},
    {'4', {0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010}},
    {'5', {0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110}},
    {'6', {0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110}},
    {'7', {0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000}},
    {'8', {0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110}},
    {'9', {0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100}},
    {'a', {0b00000, 0b00000, 0b01110, 0b00001, 0b01111, 0b10001, 0b01111}},
    {'b', {0b10000, 0b10000, 0b10110, 0b11001, 0b10001, 0b10001, 0b11110}},
    {'c', {0b00000, 0b00000, 0b01110, 0b10000, 0b10000, 0b10001, 0b01110}},
    {'d', {0b00001, 0b00001, 0b01101, 0b10011, 0b10001, 0b10001, 0b01111}},
    {'e', {0b00000, 0b00000, 0b01110, 0b10001, 0b11111, 0b10000, 0b01110}},
    {'f', {0b00110, 0b01001, 0b01000, 0b11100, 0b01000, 0b01000, 0b01000}},
    {'g', {0b00000, 0b00000, 0b01111, 0b10001, 0b01111, 0b00001, 0b01110}},
    {'h', {0b10000, 0b10000, 0b10110, 0b11001, 0b10001, 0b10001, 0b10001}},
    {'i', {0b00100, 0b00000, 0b01100, 0b00100, 0b00100, 0b00100, 0b01110}},
    {'j', {0b00010, 0b00000, 0b00110, 0b00010, 0b00010, 0b10010, 0b01100}},
    {'k', {0b10000, 0b10000, 0b10010, 0b10100, 0b11000, 0b10100, 0b10010}},
    {'l', {0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110}},
    {'m', {0b00000, 0b00000, 0b11010, 0b10101, 0b10101, 0b10101, 0b10101}},
    {'n', {0b00000, 0b00000, 0b10110, 0b11001, 0b10001, 0b10001, 0b10001}},
    {'o', {0b00000, 0b00000, 0b01110, 0b10001, 0b10001, 0b10001, 0b01110}},
    {'p', {0b00000, 0b00000, 0b11110, 0b10001, 0b11110, 0b10000, 0b10000}},
    {'q', {0b00000, 0b00000, 0b01101, 0b10011, 0b01111, 0b00001, 0b00001}},
    {'r', {0b00000, 0b00000, 0b10110, 0b11001, 0b10000, 0b10000, 0b10000}},
    {'s', {0b00000, 0b00000, 0b01111, 0b10000, 0b01110, 0b00001, 0b11110}},
    {'t', {0b01000, 0b01000, 0b11100, 0b01000, 0b01000, 0b01001, 0b00110}},
    {'u', {0b00000, 0b00000, 0b10001, 0b10001, 0b10001, 0b10011, 0b01101}},
    {'v', {0b00000, 0b00000, 0b10001, 0b10001, 0b10001, 0b01010, 0b00100}},
    {'w', {0b00000, 0b00000, 0b10001, 0b10101, 0b10101, 0b10101, 0b01010}},
    {'x', {0b00000, 0b00000, 0b10001, 0b01010, 0b00100, 0b01010, 0b10001}},
    {'y', {0b00000, 0b00000, 0b10001, 0b10001, 0b01111, 0b00001, 0b01110}},
    {'z', {0b00000, 0b00000, 0b11111, 0b00010, 0b00100, 0b01000, 0b11111}},
    {'.', {0b00000, 0b00000, 0b00000, 0b00000, 0b00000, 0b01100, 0b01100}},
    {',', {0b00000, 0b00000, 0b00000, 0b00000, 0b01100, 0b00100, 0b01000}},
    {'-', {0b00000, 0b00000, 0b00000, 0b11111, 0b00000, 0b00000, 0b00000}},
    {'_', {0b00000, 0b00000, 0b00000, 0b00000, 0b00000, 0b00000, 0b11111}},
    {':', {0b00000, 0b01100, 0b01100, 0b00000, 0b01100, 0b01100, 0b00000}},
    {'/', {0b00001, 0b00010, 0b00010, 0b00100, 0b01000, 0b01000, 0b10000}},
    {'=', {0b00000, 0b00000, 0b11111, 0b00000, 0b11111, 0b00000, 0b00000}},
    {'+', {0b00000, 0b00100, 0b00100, 0b11111, 0b00100, 0b00100, 0b00000}},
    {'%', {0b11001, 0b11001, 0b00010, 0b00100, 0b01000, 0b10011, 0b10011}},
    {'(', {0b00010, 0b00100, 0b01000, 0b01000, 0b01000, 0b00100, 0b00010}},
    {')', {0b01000, 0b00100, 0b00010, 0b00010, 0b00010, 0b00100, 0b01000}},
};

const std::uint8_t kBox[7] = {0b11111, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b11111};

const std::uint8_t* glyph_rows(char c) {
  if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  for (const auto& g : kFont)
    if (g.c == c) return g.rows;
  return kBox;
}

constexpr int kGlyphW = 6;  // 5 pixels plus 1 of spacing
constexpr int kGlyphH = 7;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

void draw_line(Image& img, int x0, int y0, int x1, int y1, std::uint8_t r, std::uint8_t g,
               std::uint8_t b) {
  int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
  int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    img.set(x0, y0, r, g, b);
    if (x0 == x1 && y0 == y1) break;
    int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

void fill_rect(Image& img, int x0, int y0, int x1, int y1, std::uint8_t r, std::uint8_t g,
               std::uint8_t b) {
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) img.set(x, y, r, g, b);
}

// Dark-to-bright ramp with strictly increasing brightness, so a field map's
// brightest cell is its largest value.
std::array<std::uint8_t, 3> colormap(double t) {
  static const double anchors[5][3] = {
      {15, 15, 70}, {40, 80, 160}, {40, 150, 120}, {140, 210, 80}, {250, 235, 85}};
  t = std::clamp(t, 0.0, 1.0) * 4.0;
  int seg = std::min(3, static_cast<int>(t));
  double f = t - seg;
  std::array<std::uint8_t, 3> c;
  for (int i = 0; i < 3; ++i)
    c[static_cast<size_t>(i)] = static_cast<std::uint8_t>(
        std::lround(anchors[seg][i] + f * (anchors[seg + 1][i] - anchors[seg][i])));
  return c;
}

struct Series {
  std::uint8_t r, g, b;
};
const Series kPalette[] = {
    {31, 119, 180}, {255, 127, 14}, {44, 160, 44}, {214, 39, 40}, {148, 103, 189}, {90, 90, 90}};

}  // namespace

void draw_text(Image& img, int x, int y, const std::string& s, std::uint8_t r, std::uint8_t g,
               std::uint8_t b) {
  for (size_t i = 0; i < s.size(); ++i) {
    const std::uint8_t* rows = glyph_rows(s[i]);
    int gx = x + static_cast<int>(i) * kGlyphW;
    for (int ry = 0; ry < kGlyphH; ++ry)
      for (int rx = 0; rx < 5; ++rx)
        if (rows[ry] & (1 << (4 - rx))) img.set(gx + rx, y + ry, r, g, b);
  }
}

int text_width(const std::string& s) { return static_cast<int>(s.size()) * kGlyphW; }

// ============================================================================
// Charts
// ============================================================================

Image field_map(const Tensor& field, int cell_px, const std::string& title) {
  require_data(field.rank() == 2, "field map: expected an (H,W) field, got " + field.shape_str());
  require_config(cell_px >= 1, "field map: cell size must be positive");
  int fh = field.dim(0), fw = field.dim(1);
  double lo = field[0], hi = field[0];
  for (long i = 0; i < field.size(); ++i) {
    require_data(std::isfinite(field[i]), "field map: non-finite value in the field");
    lo = std::min(lo, field[i]);
    hi = std::max(hi, field[i]);
  }

  int top = title.empty() ? 0 : kGlyphH + 4;
  std::string caption = "min=" + fmt(lo) + " max=" + fmt(hi);
  int w = std::max(fw * cell_px, text_width(caption) + 4);
  int h = top + fh * cell_px + kGlyphH + 4;
  Image img(w, h);
  if (!title.empty()) draw_text(img, 2, 2, title);
  for (int i = 0; i < fh; ++i)
    for (int j = 0; j < fw; ++j) {
      double t = hi > lo ? (field.at(i, j) - lo) / (hi - lo) : 0.5;
      auto c = colormap(t);
      fill_rect(img, j * cell_px, top + i * cell_px, (j + 1) * cell_px - 1,
                top + (i + 1) * cell_px - 1, c[0], c[1], c[2]);
    }
  draw_text(img, 2, top + fh * cell_px + 2, caption);
  return img;
}

Image line_chart(const std::vector<std::vector<double>>& series,
                 const std::vector<std::string>& labels, const std::string& title, bool log_y,
                 int w, int h) {
  require_data(!series.empty(), "line chart: no series");
  require_config(labels.empty() || labels.size() == series.size(),
                 "line chart: labels do not match the series");

  auto usable = [&](double v) { return std::isfinite(v) && (!log_y || v > 0.0); };
  double lo = 0.0, hi = 0.0;
  size_t longest = 0;
  bool any = false;
  for (const auto& s : series) {
    longest = std::max(longest, s.size());
    for (double v : s) {
      if (!usable(v)) continue;
      double y = log_y ? std::log10(v) : v;
      lo = any ? std::min(lo, y) : y;
      hi = any ? std::max(hi, y) : y;
      any = true;
    }
  }
  require_data(any, "line chart: nothing to plot");
  if (hi == lo) {
    lo -= 1.0;
    hi += 1.0;
  }

  Image img(w, h);
  int left = 50, right = w - 14, top = 22, bottom = h - 26;
  draw_text(img, 2, 4, title);
  draw_line(img, left, top, left, bottom, 0, 0, 0);
  draw_line(img, left, bottom, right, bottom, 0, 0, 0);
  std::string hi_lab = log_y ? "1e" + fmt(hi) : fmt(hi);
  std::string lo_lab = log_y ? "1e" + fmt(lo) : fmt(lo);
  draw_text(img, 2, top, hi_lab);
  draw_text(img, 2, bottom - kGlyphH, lo_lab);
  draw_text(img, left, bottom + 4, "0");
  std::string xmax = fmt(static_cast<double>(longest > 0 ? longest - 1 : 0));
  draw_text(img, right - text_width(xmax), bottom + 4, xmax);

  auto map_x = [&](size_t i) {
    double f = longest > 1 ? static_cast<double>(i) / static_cast<double>(longest - 1) : 0.5;
    return left + 1 + static_cast<int>(std::lround(f * (right - left - 2)));
  };
  auto map_y = [&](double v) {
    double y = log_y ? std::log10(v) : v;
    double f = (y - lo) / (hi - lo);
    return bottom - 1 - static_cast<int>(std::lround(f * (bottom - top - 2)));
  };

  for (size_t si = 0; si < series.size(); ++si) {
    const Series& col = kPalette[si % (sizeof(kPalette) / sizeof(kPalette[0]))];
    bool have_prev = false;
    int px = 0, py = 0;
    for (size_t i = 0; i < series[si].size(); ++i) {
      double v = series[si][i];
      if (!usable(v)) {
        have_prev = false;
        continue;
      }
      int x = map_x(i), y = map_y(v);
      if (have_prev) draw_line(img, px, py, x, y, col.r, col.g, col.b);
      img.set(x, y, col.r, col.g, col.b);
      px = x;
      py = y;
      have_prev = true;
    }
    if (!labels.empty() && !labels[si].empty()) {
      int ly = top + 2 + static_cast<int>(si) * (kGlyphH + 3);
      int lx = right - 14 - text_width(labels[si]);
      fill_rect(img, lx - 14, ly + 2, lx - 5, ly + 5, col.r, col.g, col.b);
      draw_text(img, lx, ly, labels[si]);
    }
  }
  return img;
}

Image bar_chart(const std::vector<std::string>& labels, const std::vector<double>& values,
                const std::string& title, int w, int h) {
  require_data(!values.empty(), "bar chart: no values");
  require_config(labels.size() == values.size(), "bar chart: labels do not match the values");
  double lo = 0.0, hi = 0.0;
  for (double v : values) {
    require_data(std::isfinite(v), "bar chart: non-finite value");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi == lo) hi = lo + 1.0;

  Image img(w, h);
  int left = 50, right = w - 14, top = 22, bottom = h - 26;
  draw_text(img, 2, 4, title);
  draw_line(img, left, top, left, bottom, 0, 0, 0);
  auto map_y = [&](double v) {
    double f = (v - lo) / (hi - lo);
    return bottom - static_cast<int>(std::lround(f * (bottom - top)));
  };
  int base = map_y(0.0);
  draw_line(img, left, base, right, base, 0, 0, 0);
  draw_text(img, 2, top, fmt(hi));
  draw_text(img, 2, bottom - kGlyphH, fmt(lo));

  int n = static_cast<int>(values.size());
  double slot = static_cast<double>(right - left) / n;
  const Series& col = kPalette[0];
  for (int i = 0; i < n; ++i) {
    int x0 = left + static_cast<int>(std::lround(i * slot + 0.2 * slot));
    int x1 = left + static_cast<int>(std::lround(i * slot + 0.8 * slot));
    int y = map_y(values[static_cast<size_t>(i)]);
    if (y <= base)
      fill_rect(img, x0, y, x1, base - 1, col.r, col.g, col.b);
    else
      fill_rect(img, x0, base + 1, x1, y, col.r, col.g, col.b);
    std::string val = fmt(values[static_cast<size_t>(i)]);
    int cx = (x0 + x1) / 2;
    draw_text(img, cx - text_width(val) / 2, std::min(y, base) - kGlyphH - 2, val);
    int max_chars = std::max(1, static_cast<int>(slot / kGlyphW) - 1);
    std::string lab = labels[static_cast<size_t>(i)].substr(0, static_cast<size_t>(max_chars));
    draw_text(img, cx - text_width(lab) / 2, bottom + 4, lab);
  }
  return img;
}

}  // namespace fluxcast
