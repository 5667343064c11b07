#include "fluxcast/conv.hpp"

#include <Eigen/Dense>

#include <cstring>

namespace fluxcast::ad {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

// ============================================================================
// 2D
// ============================================================================

// col is (H*W) x (C*kh*kw); zero padding is written explicitly.
static void im2col2d(const double* x, int c, int h, int w, int kh, int kw, double* col) {
  int ph = kh / 2, pw = kw / 2;
  long patch = static_cast<long>(c) * kh * kw;
  for (int oy = 0; oy < h; ++oy)
    for (int ox = 0; ox < w; ++ox) {
      double* row = col + (static_cast<long>(oy) * w + ox) * patch;
      long idx = 0;
      for (int ci = 0; ci < c; ++ci)
        for (int i = 0; i < kh; ++i) {
          int iy = oy + i - ph;
          if (iy < 0 || iy >= h) {
            for (int j = 0; j < kw; ++j) row[idx++] = 0.0;
            continue;
          }
          const double* src = x + (static_cast<long>(ci) * h + iy) * w;
          for (int j = 0; j < kw; ++j) {
            int ix = ox + j - pw;
            row[idx++] = (ix < 0 || ix >= w) ? 0.0 : src[ix];
          }
        }
    }
}

static void col2im2d(const double* col, int c, int h, int w, int kh, int kw, double* dx) {
  int ph = kh / 2, pw = kw / 2;
  long patch = static_cast<long>(c) * kh * kw;
  for (int oy = 0; oy < h; ++oy)
    for (int ox = 0; ox < w; ++ox) {
      const double* row = col + (static_cast<long>(oy) * w + ox) * patch;
      long idx = 0;
      for (int ci = 0; ci < c; ++ci)
        for (int i = 0; i < kh; ++i) {
          int iy = oy + i - ph;
          if (iy < 0 || iy >= h) {
            idx += kw;
            continue;
          }
          double* dst = dx + (static_cast<long>(ci) * h + iy) * w;
          for (int j = 0; j < kw; ++j) {
            int ix = ox + j - pw;
            if (ix >= 0 && ix < w) dst[ix] += row[idx];
            ++idx;
          }
        }
    }
}

Var conv2d(Graph& g, Var x, Var w, Var b) {
  const Tensor& xv = g.val(x);
  const Tensor& wv = g.val(w);
  const Tensor& bv = g.val(b);
  if (xv.rank() != 3 || wv.rank() != 4 || bv.rank() != 1)
    throw ShapeError("conv2d: x " + xv.shape_str() + " w " + wv.shape_str());
  int c = xv.dim(0), h = xv.dim(1), wd = xv.dim(2);
  int o = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
  if (wv.dim(1) != c || bv.dim(0) != o)
    throw ShapeError("conv2d: channel mismatch, x " + xv.shape_str() + " w " + wv.shape_str());
  if (kh % 2 == 0 || kw % 2 == 0) throw ConfigError("conv2d kernels must be odd");

  long pixels = static_cast<long>(h) * wd;
  long patch = static_cast<long>(c) * kh * kw;
  Tensor col({static_cast<int>(pixels), static_cast<int>(patch)});
  im2col2d(xv.data(), c, h, wd, kh, kw, col.data());

  // out_pix (pixels x o) = col (pixels x patch) * W^T (patch x o)
  Tensor out_pix({static_cast<int>(pixels), o});
  MapMat(out_pix.data(), pixels, o).noalias() =
      CMapMat(col.data(), pixels, patch) * CMapMat(wv.data(), o, patch).transpose();

  Tensor out({o, h, wd});
  for (int oc = 0; oc < o; ++oc) {
    double bias = bv[oc];
    double* dst = out.data() + static_cast<long>(oc) * pixels;
    const double* src = out_pix.data();
    for (long p = 0; p < pixels; ++p) dst[p] = src[p * o + oc] + bias;
  }

  return g.make(std::move(out), {x, w, b},
                [x, w, b, c, h, wd, o, kh, kw, pixels, patch](Graph& gg, int self) {
    const Tensor& gy = gg.grad_at(self);
    Tensor gy_pix({static_cast<int>(pixels), o});
    for (int oc = 0; oc < o; ++oc) {
      const double* src = gy.data() + static_cast<long>(oc) * pixels;
      double* dst = gy_pix.data();
      for (long p = 0; p < pixels; ++p) dst[p * o + oc] = src[p];
    }
    CMapMat gym(gy_pix.data(), pixels, o);
    if (Tensor* gw = gg.grad_buffer(w)) {
      Tensor col({static_cast<int>(pixels), static_cast<int>(patch)});
      im2col2d(gg.val(x).data(), c, h, wd, kh, kw, col.data());
      MapMat(gw->data(), o, patch).noalias() +=
          gym.transpose() * CMapMat(col.data(), pixels, patch);
    }
    if (Tensor* gb = gg.grad_buffer(b))
      Eigen::Map<Eigen::RowVectorXd>(gb->data(), o) += gym.colwise().sum();
    if (Tensor* gx = gg.grad_buffer(x)) {
      Tensor dcol({static_cast<int>(pixels), static_cast<int>(patch)});
      MapMat(dcol.data(), pixels, patch).noalias() =
          gym * CMapMat(gg.val(w).data(), o, patch);
      col2im2d(dcol.data(), c, h, wd, kh, kw, gx->data());
    }
  });
}

// ============================================================================
// 3D
// ============================================================================

static void im2col3d(const double* x, int c, int d, int h, int w, int kd, int kh, int kw,
                     double* col) {
  int pd = kd / 2, ph = kh / 2, pw = kw / 2;
  long patch = static_cast<long>(c) * kd * kh * kw;
  long voxels = static_cast<long>(d) * h * w;
  for (long v = 0; v < voxels; ++v) {
    int oz = static_cast<int>(v / (static_cast<long>(h) * w));
    int oy = static_cast<int>((v / w) % h);
    int ox = static_cast<int>(v % w);
    double* row = col + v * patch;
    long idx = 0;
    for (int ci = 0; ci < c; ++ci)
      for (int zi = 0; zi < kd; ++zi) {
        int iz = oz + zi - pd;
        if (iz < 0 || iz >= d) {
          for (long k = 0; k < static_cast<long>(kh) * kw; ++k) row[idx++] = 0.0;
          continue;
        }
        for (int i = 0; i < kh; ++i) {
          int iy = oy + i - ph;
          if (iy < 0 || iy >= h) {
            for (int j = 0; j < kw; ++j) row[idx++] = 0.0;
            continue;
          }
          const double* src = x + ((static_cast<long>(ci) * d + iz) * h + iy) * w;
          for (int j = 0; j < kw; ++j) {
            int ix = ox + j - pw;
            row[idx++] = (ix < 0 || ix >= w) ? 0.0 : src[ix];
          }
        }
      }
  }
}

static void col2im3d(const double* col, int c, int d, int h, int w, int kd, int kh, int kw,
                     double* dx) {
  int pd = kd / 2, ph = kh / 2, pw = kw / 2;
  long patch = static_cast<long>(c) * kd * kh * kw;
  long voxels = static_cast<long>(d) * h * w;
  for (long v = 0; v < voxels; ++v) {
    int oz = static_cast<int>(v / (static_cast<long>(h) * w));
    int oy = static_cast<int>((v / w) % h);
    int ox = static_cast<int>(v % w);
    const double* row = col + v * patch;
    long idx = 0;
    for (int ci = 0; ci < c; ++ci)
      for (int zi = 0; zi < kd; ++zi) {
        int iz = oz + zi - pd;
        if (iz < 0 || iz >= d) {
          idx += static_cast<long>(kh) * kw;
          continue;
        }
        for (int i = 0; i < kh; ++i) {
          int iy = oy + i - ph;
          if (iy < 0 || iy >= h) {
            idx += kw;
            continue;
          }
          double* dst = dx + ((static_cast<long>(ci) * d + iz) * h + iy) * w;
          for (int j = 0; j < kw; ++j) {
            int ix = ox + j - pw;
            if (ix >= 0 && ix < w) dst[ix] += row[idx];
            ++idx;
          }
        }
      }
  }
}

Var conv3d(Graph& g, Var x, Var w, Var b) {
  const Tensor& xv = g.val(x);
  const Tensor& wv = g.val(w);
  const Tensor& bv = g.val(b);
  if (xv.rank() != 4 || wv.rank() != 5 || bv.rank() != 1)
    throw ShapeError("conv3d: x " + xv.shape_str() + " w " + wv.shape_str());
  int c = xv.dim(0), d = xv.dim(1), h = xv.dim(2), wd = xv.dim(3);
  int o = wv.dim(0), kd = wv.dim(2), kh = wv.dim(3), kw = wv.dim(4);
  if (wv.dim(1) != c || bv.dim(0) != o)
    throw ShapeError("conv3d: channel mismatch, x " + xv.shape_str() + " w " + wv.shape_str());
  if (kd % 2 == 0 || kh % 2 == 0 || kw % 2 == 0) throw ConfigError("conv3d kernels must be odd");

  long voxels = static_cast<long>(d) * h * wd;
  long patch = static_cast<long>(c) * kd * kh * kw;
  Tensor col({static_cast<int>(voxels), static_cast<int>(patch)});
  im2col3d(xv.data(), c, d, h, wd, kd, kh, kw, col.data());

  Tensor out_vox({static_cast<int>(voxels), o});
  MapMat(out_vox.data(), voxels, o).noalias() =
      CMapMat(col.data(), voxels, patch) * CMapMat(wv.data(), o, patch).transpose();

  Tensor out({o, d, h, wd});
  for (int oc = 0; oc < o; ++oc) {
    double bias = bv[oc];
    double* dst = out.data() + static_cast<long>(oc) * voxels;
    const double* src = out_vox.data();
    for (long p = 0; p < voxels; ++p) dst[p] = src[p * o + oc] + bias;
  }

  return g.make(std::move(out), {x, w, b},
                [x, w, b, c, d, h, wd, o, kd, kh, kw, voxels, patch](Graph& gg, int self) {
    const Tensor& gy = gg.grad_at(self);
    Tensor gy_vox({static_cast<int>(voxels), o});
    for (int oc = 0; oc < o; ++oc) {
      const double* src = gy.data() + static_cast<long>(oc) * voxels;
      double* dst = gy_vox.data();
      for (long p = 0; p < voxels; ++p) dst[p * o + oc] = src[p];
    }
    CMapMat gym(gy_vox.data(), voxels, o);
    if (Tensor* gw = gg.grad_buffer(w)) {
      Tensor col({static_cast<int>(voxels), static_cast<int>(patch)});
      im2col3d(gg.val(x).data(), c, d, h, wd, kd, kh, kw, col.data());
      MapMat(gw->data(), o, patch).noalias() +=
          gym.transpose() * CMapMat(col.data(), voxels, patch);
    }
    if (Tensor* gb = gg.grad_buffer(b))
      Eigen::Map<Eigen::RowVectorXd>(gb->data(), o) += gym.colwise().sum();
    if (Tensor* gx = gg.grad_buffer(x)) {
      Tensor dcol({static_cast<int>(voxels), static_cast<int>(patch)});
      MapMat(dcol.data(), voxels, patch).noalias() =
          gym * CMapMat(gg.val(w).data(), o, patch);
      col2im3d(dcol.data(), c, d, h, wd, kd, kh, kw, gx->data());
    }
  });
}

}  // namespace fluxcast::ad
