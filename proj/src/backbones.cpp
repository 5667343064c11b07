#include "fluxcast/backbones.hpp"

#include "fluxcast/attention.hpp"
#include "fluxcast/conv.hpp"

#include <cmath>

namespace fluxcast {

Tensor he_init(std::vector<int> shape, long fan_in, double leaky_slope, Rng& rng) {
  Tensor t(std::move(shape));
  double std = std::sqrt(2.0 / ((1.0 + leaky_slope * leaky_slope) * static_cast<double>(fan_in)));
  for (long i = 0; i < t.size(); ++i) t[i] = std * rng.next_normal();
  return t;
}

static Tensor normal_init(std::vector<int> shape, double std, Rng& rng) {
  Tensor t(std::move(shape));
  for (long i = 0; i < t.size(); ++i) t[i] = std * rng.next_normal();
  return t;
}

// ============================================================================
// ResNet2D
// ============================================================================

ResNet2D::ResNet2D(ad::ParamStore& store, const std::string& prefix, int in_ch, int out_ch,
                   const ResNetConfig& cfg, Rng& init, int group)
    : cfg_(cfg), in_ch_(in_ch), out_ch_(out_ch) {
  if (cfg.ladder.empty()) throw ConfigError(prefix + ": resnet ladder must not be empty");
  if (cfg.kernel % 2 == 0) throw ConfigError(prefix + ": resnet kernel must be odd");
  int k = cfg.kernel;
  auto conv = [&](const std::string& name, int ci, int co, int kk) {
    Conv c;
    c.w = &store.create(name + ".w", he_init({co, ci, kk, kk}, static_cast<long>(ci) * kk * kk,
                                             cfg.leaky_slope, init),
                        false, group);
    c.b = &store.create(name + ".b", Tensor({co}), false, group);
    return c;
  };
  int w0 = cfg.ladder.front().second;
  stem_ = conv(prefix + ".stem", in_ch, w0, k);
  for (size_t s = 0; s < cfg.ladder.size(); ++s) {
    auto [nblocks, width] = cfg.ladder[s];
    if (nblocks < 0 || width <= 0) throw ConfigError(prefix + ": bad ladder entry");
    blocks_per_stage_.push_back(nblocks);
    for (int b = 0; b < nblocks; ++b) {
      std::string base = prefix + ".s" + std::to_string(s) + ".b" + std::to_string(b);
      convs_.push_back(conv(base + ".c1", width, width, k));
      convs_.push_back(conv(base + ".c2", width, width, k));
    }
    if (s + 1 < cfg.ladder.size())
      transitions_.push_back(
          conv(prefix + ".t" + std::to_string(s), width, cfg.ladder[s + 1].second, k));
  }
  head_ = conv(prefix + ".head", cfg.ladder.back().second, out_ch, 1);
}

ad::Var ResNet2D::forward(ad::Graph& g, ad::Var x) const {
  if (g.val(x).dim(0) != in_ch_)
    throw ShapeError("resnet2d expects " + std::to_string(in_ch_) + " channels, got " +
                     g.val(x).shape_str());
  ad::Var h = ad::leaky_relu(g, ad::conv2d(g, x, g.leaf(*stem_.w), g.leaf(*stem_.b)),
                             cfg_.leaky_slope);
  size_t ci = 0;
  for (size_t s = 0; s < blocks_per_stage_.size(); ++s) {
    for (int b = 0; b < blocks_per_stage_[s]; ++b) {
      const Conv& c1 = convs_[ci++];
      const Conv& c2 = convs_[ci++];
      ad::Var r = ad::conv2d(g, h, g.leaf(*c1.w), g.leaf(*c1.b));
      r = ad::leaky_relu(g, r, cfg_.leaky_slope);
      r = ad::conv2d(g, r, g.leaf(*c2.w), g.leaf(*c2.b));
      r = ad::dropout(g, r, cfg_.dropout);
      h = ad::add(g, h, r);
    }
    if (s < transitions_.size())
      h = ad::leaky_relu(
          g, ad::conv2d(g, h, g.leaf(*transitions_[s].w), g.leaf(*transitions_[s].b)),
          cfg_.leaky_slope);
  }
  return ad::conv2d(g, h, g.leaf(*head_.w), g.leaf(*head_.b));
}

// ============================================================================
// ResNet3D
// ============================================================================

ResNet3D::ResNet3D(ad::ParamStore& store, const std::string& prefix, int in_ch, int out_ch,
                   const ResNetConfig& cfg, Rng& init, int group)
    : cfg_(cfg), in_ch_(in_ch), out_ch_(out_ch) {
  if (cfg.ladder.empty()) throw ConfigError(prefix + ": resnet ladder must not be empty");
  if (cfg.kernel % 2 == 0) throw ConfigError(prefix + ": resnet kernel must be odd");
  int k = cfg.kernel;
  auto conv = [&](const std::string& name, int ci, int co, int kk) {
    Conv c;
    c.w = &store.create(name + ".w",
                        he_init({co, ci, kk, kk, kk},
                                static_cast<long>(ci) * kk * kk * kk, cfg.leaky_slope, init),
                        false, group);
    c.b = &store.create(name + ".b", Tensor({co}), false, group);
    return c;
  };
  int w0 = cfg.ladder.front().second;
  stem_ = conv(prefix + ".stem", in_ch, w0, k);
  for (size_t s = 0; s < cfg.ladder.size(); ++s) {
    auto [nblocks, width] = cfg.ladder[s];
    if (nblocks < 0 || width <= 0) throw ConfigError(prefix + ": bad ladder entry");
    blocks_per_stage_.push_back(nblocks);
    for (int b = 0; b < nblocks; ++b) {
      std::string base = prefix + ".s" + std::to_string(s) + ".b" + std::to_string(b);
      convs_.push_back(conv(base + ".c1", width, width, k));
      convs_.push_back(conv(base + ".c2", width, width, k));
    }
    if (s + 1 < cfg.ladder.size())
      transitions_.push_back(
          conv(prefix + ".t" + std::to_string(s), width, cfg.ladder[s + 1].second, k));
  }
  head_ = conv(prefix + ".head", cfg.ladder.back().second, out_ch, 1);
}

ad::Var ResNet3D::forward(ad::Graph& g, ad::Var x) const {
  if (g.val(x).rank() != 4 || g.val(x).dim(0) != in_ch_)
    throw ShapeError("resnet3d expects (" + std::to_string(in_ch_) + ",N,H,W), got " +
                     g.val(x).shape_str());
  ad::Var h = ad::leaky_relu(g, ad::conv3d(g, x, g.leaf(*stem_.w), g.leaf(*stem_.b)),
                             cfg_.leaky_slope);
  size_t ci = 0;
  for (size_t s = 0; s < blocks_per_stage_.size(); ++s) {
    for (int b = 0; b < blocks_per_stage_[s]; ++b) {
      const Conv& c1 = convs_[ci++];
      const Conv& c2 = convs_[ci++];
      ad::Var r = ad::conv3d(g, h, g.leaf(*c1.w), g.leaf(*c1.b));
      r = ad::leaky_relu(g, r, cfg_.leaky_slope);
      r = ad::conv3d(g, r, g.leaf(*c2.w), g.leaf(*c2.b));
      r = ad::dropout(g, r, cfg_.dropout);
      h = ad::add(g, h, r);
    }
    if (s < transitions_.size())
      h = ad::leaky_relu(
          g, ad::conv3d(g, h, g.leaf(*transitions_[s].w), g.leaf(*transitions_[s].b)),
          cfg_.leaky_slope);
  }
  return ad::conv3d(g, h, g.leaf(*head_.w), g.leaf(*head_.b));
}

// ============================================================================
// ViT
// ============================================================================

ViT::ViT(ad::ParamStore& store, const std::string& prefix, int in_ch, int out_ch, int h, int w,
         const ViTConfig& cfg, Rng& init, int group)
    : cfg_(cfg), in_ch_(in_ch), out_ch_(out_ch), h_(h), w_(w) {
  if (cfg.patch <= 0 || h % cfg.patch != 0 || w % cfg.patch != 0)
    throw ConfigError(prefix + ": grid " + std::to_string(h) + "x" + std::to_string(w) +
                      " not divisible by patch " + std::to_string(cfg.patch));
  if (cfg.dim % cfg.heads != 0)
    throw ConfigError(prefix + ": dim must divide by heads");
  tokens_ = (h / cfg.patch) * (w / cfg.patch);
  int pf = in_ch * cfg.patch * cfg.patch;
  int d = cfg.dim;
  int mlp = static_cast<int>(d * cfg.mlp_ratio);

  auto lin = [&](const std::string& name, int ci, int co) {
    auto* wp = &store.create(name + ".w", he_init({ci, co}, ci, 0.0, init), false, group);
    auto* bp = &store.create(name + ".b", Tensor({co}), false, group);
    return std::make_pair(wp, bp);
  };

  std::tie(embed_w_, embed_b_) = lin(prefix + ".embed", pf, d);
  pos_ = &store.create(prefix + ".pos", normal_init({tokens_, d}, 0.02, init), true, group);

  for (int i = 0; i < cfg.depth; ++i) {
    std::string base = prefix + ".blk" + std::to_string(i);
    Block b;
    b.ln1_g = &store.create(base + ".ln1.g", Tensor::full({d}, 1.0), false, group);
    b.ln1_b = &store.create(base + ".ln1.b", Tensor({d}), false, group);
    std::tie(b.wqkv, b.bqkv) = lin(base + ".qkv", d, 3 * d);
    std::tie(b.wproj, b.bproj) = lin(base + ".proj", d, d);
    b.ln2_g = &store.create(base + ".ln2.g", Tensor::full({d}, 1.0), false, group);
    b.ln2_b = &store.create(base + ".ln2.b", Tensor({d}), false, group);
    std::tie(b.w1, b.b1) = lin(base + ".mlp1", d, mlp);
    std::tie(b.w2, b.b2) = lin(base + ".mlp2", mlp, d);
    blocks_.push_back(b);
  }
  ln_f_g_ = &store.create(prefix + ".lnf.g", Tensor::full({d}, 1.0), false, group);
  ln_f_b_ = &store.create(prefix + ".lnf.b", Tensor({d}), false, group);
  for (int i = 0; i < cfg.decoder_depth; ++i)
    decoder_.push_back(lin(prefix + ".dec" + std::to_string(i), d, d));
  std::tie(head_w_, head_b_) = lin(prefix + ".head", d, out_ch * cfg.patch * cfg.patch);
}

ad::Var ViT::encode(ad::Graph& g, ad::Var x) const {
  if (g.val(x).dim(0) != in_ch_ || g.val(x).dim(1) != h_ || g.val(x).dim(2) != w_)
    throw ShapeError("vit expects (" + std::to_string(in_ch_) + "," + std::to_string(h_) + "," +
                     std::to_string(w_) + "), got " + g.val(x).shape_str());
  ad::Var tok = ad::patchify(g, x, cfg_.patch);
  tok = ad::linear(g, tok, g.leaf(*embed_w_), g.leaf(*embed_b_));
  tok = ad::add(g, tok, g.leaf(*pos_));
  return ad::dropout(g, tok, cfg_.dropout);
}

ad::Var ViT::decode(ad::Graph& g, ad::Var tokens) const {
  ad::Var t = tokens;
  for (auto& [w, b] : decoder_) t = ad::gelu(g, ad::linear(g, t, g.leaf(*w), g.leaf(*b)));
  t = ad::linear(g, t, g.leaf(*head_w_), g.leaf(*head_b_));
  return ad::unpatchify(g, t, out_ch_, h_, w_, cfg_.patch);
}

ad::Var ViT::forward(ad::Graph& g, ad::Var x) const {
  ad::Var t = encode(g, x);
  for (const Block& b : blocks_) {
    ad::Var h = ad::layernorm(g, t, g.leaf(*b.ln1_g), g.leaf(*b.ln1_b));
    h = ad::mhsa(g, h, g.leaf(*b.wqkv), g.leaf(*b.bqkv), g.leaf(*b.wproj), g.leaf(*b.bproj),
                 cfg_.heads);
    h = ad::dropout(g, h, cfg_.dropout);
    t = ad::add(g, t, ad::drop_path(g, h, cfg_.drop_path));
    ad::Var m = ad::layernorm(g, t, g.leaf(*b.ln2_g), g.leaf(*b.ln2_b));
    m = ad::gelu(g, ad::linear(g, m, g.leaf(*b.w1), g.leaf(*b.b1)));
    m = ad::dropout(g, m, cfg_.dropout);
    m = ad::linear(g, m, g.leaf(*b.w2), g.leaf(*b.b2));
    m = ad::dropout(g, m, cfg_.dropout);
    t = ad::add(g, t, ad::drop_path(g, m, cfg_.drop_path));
  }
  t = ad::layernorm(g, t, g.leaf(*ln_f_g_), g.leaf(*ln_f_b_));
  return decode(g, t);
}

// ============================================================================
// DiT
// ============================================================================

DiT::DiT(ad::ParamStore& store, const std::string& prefix, int in_ch, int out_ch, int h, int w,
         const DiTConfig& cfg, Rng& init, int group)
    : cfg_(cfg), trunk_(store, prefix + ".trunk", in_ch, out_ch, h, w, cfg.vit, init, group) {
  int d = cfg.vit.dim;
  cond_w1_ = &store.create(prefix + ".cond1.w", he_init({cfg.cond_dim, d}, cfg.cond_dim, 0.0, init),
                           false, group);
  cond_b1_ = &store.create(prefix + ".cond1.b", Tensor({d}), false, group);
  cond_w2_ = &store.create(prefix + ".cond2.w", he_init({d, d}, d, 0.0, init), false, group);
  cond_b2_ = &store.create(prefix + ".cond2.b", Tensor({d}), false, group);
  // Zero-led modulation: a fresh model ignores its conditioning entirely.
  for (int i = 0; i < cfg.vit.depth; ++i) {
    std::string base = prefix + ".mod" + std::to_string(i);
    auto* mw = &store.create(base + ".w", Tensor({d, 6 * d}), false, group);
    auto* mb = &store.create(base + ".b", Tensor({6 * d}), false, group);
    modulation_.emplace_back(mw, mb);
  }
}

ad::Var DiT::forward(ad::Graph& g, ad::Var x, ad::Var cond) const {
  const ViTConfig& vc = cfg_.vit;
  int d = vc.dim;
  if (g.val(cond).size() != cfg_.cond_dim)
    throw ShapeError("dit conditioning must have " + std::to_string(cfg_.cond_dim) +
                     " values, got " + g.val(cond).shape_str());
  ad::Var c = ad::reshape(g, cond, {1, cfg_.cond_dim});
  c = ad::gelu(g, ad::linear(g, c, g.leaf(*cond_w1_), g.leaf(*cond_b1_)));
  c = ad::gelu(g, ad::linear(g, c, g.leaf(*cond_w2_), g.leaf(*cond_b2_)));

  ad::Var t = trunk_.encode(g, x);
  for (int i = 0; i < vc.depth; ++i) {
    const ViT::Block& b = trunk_.blocks_[i];
    auto [mw, mb] = modulation_[i];
    ad::Var m6 = ad::reshape(g, ad::linear(g, c, g.leaf(*mw), g.leaf(*mb)), {6 * d});
    ad::Var shift_a = ad::slice0(g, m6, 0, d);
    ad::Var scale_a = ad::slice0(g, m6, d, d);
    ad::Var gate_a = ad::slice0(g, m6, 2 * d, d);
    ad::Var shift_m = ad::slice0(g, m6, 3 * d, d);
    ad::Var scale_m = ad::slice0(g, m6, 4 * d, d);
    ad::Var gate_m = ad::slice0(g, m6, 5 * d, d);

    ad::Var h = ad::layernorm(g, t, g.leaf(*b.ln1_g), g.leaf(*b.ln1_b));
    h = ad::add_rowvec(g, ad::mul_rowvec(g, h, ad::add_scalar(g, scale_a, 1.0)), shift_a);
    h = ad::mhsa(g, h, g.leaf(*b.wqkv), g.leaf(*b.bqkv), g.leaf(*b.wproj), g.leaf(*b.bproj),
                 vc.heads);
    h = ad::dropout(g, h, vc.dropout);
    h = ad::mul_rowvec(g, h, gate_a);
    t = ad::add(g, t, ad::drop_path(g, h, vc.drop_path));

    ad::Var m = ad::layernorm(g, t, g.leaf(*b.ln2_g), g.leaf(*b.ln2_b));
    m = ad::add_rowvec(g, ad::mul_rowvec(g, m, ad::add_scalar(g, scale_m, 1.0)), shift_m);
    m = ad::gelu(g, ad::linear(g, m, g.leaf(*b.w1), g.leaf(*b.b1)));
    m = ad::dropout(g, m, vc.dropout);
    m = ad::linear(g, m, g.leaf(*b.w2), g.leaf(*b.b2));
    m = ad::dropout(g, m, vc.dropout);
    m = ad::mul_rowvec(g, m, gate_m);
    t = ad::add(g, t, ad::drop_path(g, m, vc.drop_path));
  }
  t = ad::layernorm(g, t, g.leaf(*trunk_.ln_f_g_), g.leaf(*trunk_.ln_f_b_));
  return trunk_.decode(g, t);
}

}  // namespace fluxcast
