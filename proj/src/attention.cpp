#include "fluxcast/attention.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace fluxcast::ad {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using StrideT = Eigen::Stride<Eigen::Dynamic, 1>;
using BlockMap = Eigen::Map<RowMat, 0, StrideT>;
using CBlockMap = Eigen::Map<const RowMat, 0, StrideT>;

Var layernorm(Graph& g, Var x, Var gain, Var bias, double eps) {
  const Tensor& xv = g.val(x);
  const Tensor& gv = g.val(gain);
  const Tensor& bv = g.val(bias);
  if (xv.rank() != 2 || gv.rank() != 1 || bv.rank() != 1 || gv.dim(0) != xv.dim(1) ||
      bv.dim(0) != xv.dim(1))
    throw ShapeError("layernorm: x " + xv.shape_str() + " gain " + gv.shape_str());
  int t = xv.dim(0), d = xv.dim(1);

  Tensor xhat({t, d});
  Tensor inv_std({t});
  Tensor out({t, d});
  for (int r = 0; r < t; ++r) {
    const double* row = xv.data() + static_cast<long>(r) * d;
    double mu = 0.0;
    for (int c = 0; c < d; ++c) mu += row[c];
    mu /= d;
    double var = 0.0;
    for (int c = 0; c < d; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= d;
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (int c = 0; c < d; ++c) {
      double xh = (row[c] - mu) * is;
      xhat.at(r, c) = xh;
      out.at(r, c) = gv[c] * xh + bv[c];
    }
  }

  return g.make(std::move(out), {x, gain, bias},
                [x, gain, bias, t, d, xhat, inv_std](Graph& gg, int self) {
    const Tensor& gy = gg.grad_at(self);
    const Tensor& gv = gg.val(gain);
    Tensor* gx = gg.grad_buffer(x);
    Tensor* ggain = gg.grad_buffer(gain);
    Tensor* gbias = gg.grad_buffer(bias);
    for (int r = 0; r < t; ++r) {
      const double* gyr = gy.data() + static_cast<long>(r) * d;
      const double* xhr = xhat.data() + static_cast<long>(r) * d;
      if (ggain)
        for (int c = 0; c < d; ++c) (*ggain)[c] += gyr[c] * xhr[c];
      if (gbias)
        for (int c = 0; c < d; ++c) (*gbias)[c] += gyr[c];
      if (gx) {
        double m1 = 0.0, m2 = 0.0;  // mean(dxhat), mean(dxhat*xhat)
        for (int c = 0; c < d; ++c) {
          double dxh = gyr[c] * gv[c];
          m1 += dxh;
          m2 += dxh * xhr[c];
        }
        m1 /= d;
        m2 /= d;
        double* gxr = gx->data() + static_cast<long>(r) * d;
        for (int c = 0; c < d; ++c) {
          double dxh = gyr[c] * gv[c];
          gxr[c] += inv_std[r] * (dxh - m1 - xhr[c] * m2);
        }
      }
    }
  });
}

Var mhsa(Graph& g, Var x, Var wqkv, Var bqkv, Var wproj, Var bproj, int heads) {
  const Tensor& xv = g.val(x);
  if (xv.rank() != 2) throw ShapeError("mhsa: x must be (T,D), got " + xv.shape_str());
  int t = xv.dim(0), d = xv.dim(1);
  if (heads <= 0 || d % heads != 0)
    throw ConfigError("mhsa: dim " + std::to_string(d) + " not divisible by " +
                      std::to_string(heads) + " heads");
  const Tensor& wq = g.val(wqkv);
  const Tensor& bq = g.val(bqkv);
  const Tensor& wp = g.val(wproj);
  const Tensor& bp = g.val(bproj);
  if (wq.rank() != 2 || wq.dim(0) != d || wq.dim(1) != 3 * d || bq.dim(0) != 3 * d ||
      wp.dim(0) != d || wp.dim(1) != d || bp.dim(0) != d)
    throw ShapeError("mhsa: parameter shapes inconsistent with dim " + std::to_string(d));
  int hd = d / heads;
  double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  Tensor qkv({t, 3 * d});
  MapMat qm(qkv.data(), t, 3 * d);
  qm.noalias() = CMapMat(xv.data(), t, d) * CMapMat(wq.data(), d, 3 * d);
  qm.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bq.data(), 3 * d);

  Tensor probs({heads, t, t});
  Tensor ctx({t, d});
  for (int h = 0; h < heads; ++h) {
    CBlockMap Q(qkv.data() + h * hd, t, hd, StrideT(3 * d, 1));
    CBlockMap K(qkv.data() + d + h * hd, t, hd, StrideT(3 * d, 1));
    CBlockMap V(qkv.data() + 2 * d + h * hd, t, hd, StrideT(3 * d, 1));
    MapMat P(probs.data() + static_cast<long>(h) * t * t, t, t);
    P.noalias() = Q * K.transpose() * scale;
    for (int r = 0; r < t; ++r) {
      double mx = P.row(r).maxCoeff();
      double sum = 0.0;
      for (int c2 = 0; c2 < t; ++c2) {
        double e = std::exp(P(r, c2) - mx);
        P(r, c2) = e;
        sum += e;
      }
      P.row(r) /= sum;
    }
    BlockMap C(ctx.data() + h * hd, t, hd, StrideT(d, 1));
    C.noalias() = P * V;
  }

  Tensor out({t, d});
  MapMat om(out.data(), t, d);
  om.noalias() = CMapMat(ctx.data(), t, d) * CMapMat(wp.data(), d, d);
  om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bp.data(), d);

  return g.make(std::move(out), {x, wqkv, bqkv, wproj, bproj},
                [x, wqkv, bqkv, wproj, bproj, heads, t, d, hd, scale, qkv, probs,
                 ctx](Graph& gg, int self) {
    const Tensor& gy = gg.grad_at(self);
    CMapMat gym(gy.data(), t, d);

    if (Tensor* gwp = gg.grad_buffer(wproj))
      MapMat(gwp->data(), d, d).noalias() += CMapMat(ctx.data(), t, d).transpose() * gym;
    if (Tensor* gbp = gg.grad_buffer(bproj))
      Eigen::Map<Eigen::RowVectorXd>(gbp->data(), d) += gym.colwise().sum();

    RowMat dctx = gym * CMapMat(gg.val(wproj).data(), d, d).transpose();

    Tensor dqkv({t, 3 * d});
    for (int h = 0; h < heads; ++h) {
      CBlockMap Q(qkv.data() + h * hd, t, hd, StrideT(3 * d, 1));
      CBlockMap K(qkv.data() + d + h * hd, t, hd, StrideT(3 * d, 1));
      CBlockMap V(qkv.data() + 2 * d + h * hd, t, hd, StrideT(3 * d, 1));
      CMapMat P(probs.data() + static_cast<long>(h) * t * t, t, t);
      RowMat dC = dctx.block(0, h * hd, t, hd);
      RowMat dP = dC * V.transpose();
      RowMat dV = P.transpose() * dC;
      // softmax backward, rowwise
      RowMat dS(t, t);
      for (int r = 0; r < t; ++r) {
        double dot = P.row(r).dot(dP.row(r));
        dS.row(r) = P.row(r).cwiseProduct(dP.row(r).array().matrix() -
                                          Eigen::RowVectorXd::Constant(t, dot));
      }
      RowMat dQ = dS * K * scale;
      RowMat dK = dS.transpose() * Q * scale;
      BlockMap(dqkv.data() + h * hd, t, hd, StrideT(3 * d, 1)) = dQ;
      BlockMap(dqkv.data() + d + h * hd, t, hd, StrideT(3 * d, 1)) = dK;
      BlockMap(dqkv.data() + 2 * d + h * hd, t, hd, StrideT(3 * d, 1)) = dV;
    }

    CMapMat dqm(dqkv.data(), t, 3 * d);
    if (Tensor* gx = gg.grad_buffer(x))
      MapMat(gx->data(), t, d).noalias() +=
          dqm * CMapMat(gg.val(wqkv).data(), d, 3 * d).transpose();
    if (Tensor* gw = gg.grad_buffer(wqkv))
      MapMat(gw->data(), d, 3 * d).noalias() +=
          CMapMat(gg.val(x).data(), t, d).transpose() * dqm;
    if (Tensor* gb = gg.grad_buffer(bqkv))
      Eigen::Map<Eigen::RowVectorXd>(gb->data(), 3 * d) += dqm.colwise().sum();
  });
}

Var patchify(Graph& g, Var x, int p) {
  const Tensor& xv = g.val(x);
  if (xv.rank() != 3) throw ShapeError("patchify: x must be (C,H,W), got " + xv.shape_str());
  int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  if (p <= 0 || h % p != 0 || w % p != 0)
    throw ConfigError("patchify: grid " + std::to_string(h) + "x" + std::to_string(w) +
                      " not divisible by patch " + std::to_string(p));
  int gh = h / p, gw = w / p, tokens = gh * gw, feat = c * p * p;
  Tensor out({tokens, feat});
  for (int i = 0; i < gh; ++i)
    for (int j = 0; j < gw; ++j) {
      double* row = out.data() + (static_cast<long>(i) * gw + j) * feat;
      long idx = 0;
      for (int ci = 0; ci < c; ++ci)
        for (int pi = 0; pi < p; ++pi)
          for (int pj = 0; pj < p; ++pj)
            row[idx++] = xv.at(ci, i * p + pi, j * p + pj);
    }
  return g.make(std::move(out), {x}, [x, c, p, gh, gw, feat](Graph& gg, int self) {
    const Tensor& gy = gg.grad_at(self);
    if (Tensor* gx = gg.grad_buffer(x))
      for (int i = 0; i < gh; ++i)
        for (int j = 0; j < gw; ++j) {
          const double* row = gy.data() + (static_cast<long>(i) * gw + j) * feat;
          long idx = 0;
          for (int ci = 0; ci < c; ++ci)
            for (int pi = 0; pi < p; ++pi)
              for (int pj = 0; pj < p; ++pj)
                gx->at(ci, i * p + pi, j * p + pj) += row[idx++];
        }
  });
}

Var unpatchify(Graph& g, Var tokens, int c, int h, int w, int p) {
  const Tensor& tv = g.val(tokens);
  if (p <= 0 || h % p != 0 || w % p != 0)
    throw ConfigError("unpatchify: grid not divisible by patch");
  int gh = h / p, gw = w / p, feat = c * p * p;
  if (tv.rank() != 2 || tv.dim(0) != gh * gw || tv.dim(1) != feat)
    throw ShapeError("unpatchify: tokens " + tv.shape_str() + " for " + std::to_string(c) + "x" +
                     std::to_string(h) + "x" + std::to_string(w) + " patch " + std::to_string(p));
  Tensor out({c, h, w});
  for (int i = 0; i < gh; ++i)
    for (int j = 0; j < gw; ++j) {
      const double* row = tv.data() + (static_cast<long>(i) * gw + j) * feat;
      long idx = 0;
      for (int ci = 0; ci < c; ++ci)
        for (int pi = 0; pi < p; ++pi)
          for (int pj = 0; pj < p; ++pj)
            out.at(ci, i * p + pi, j * p + pj) = row[idx++];
    }
  return g.make(std::move(out), {tokens}, [tokens, c, p, gh, gw, feat](Graph& gg, int self) {
    const Tensor& gy = gg.grad_at(self);
    if (Tensor* gt = gg.grad_buffer(tokens))
      for (int i = 0; i < gh; ++i)
        for (int j = 0; j < gw; ++j) {
          double* row = gt->data() + (static_cast<long>(i) * gw + j) * feat;
          long idx = 0;
          for (int ci = 0; ci < c; ++ci)
            for (int pi = 0; pi < p; ++pi)
              for (int pj = 0; pj < p; ++pj)
                row[idx++] += gy.at(ci, i * p + pi, j * p + pj);
        }
  });
}

}  // namespace fluxcast::ad
