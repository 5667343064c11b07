#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fluxcast/rng.hpp"
#include "fluxcast/tape.hpp"

namespace fluxcast {

// Trunk networks shared by the velocity, advection, and source components.
// All run on single samples, channels first, and register their parameters
// into a caller-owned store under a name prefix. Desk-scale defaults are an
// eighth of the reference widths, which keeps a full training run tractable
// on one workstation core.

/// Residual CNN: stem conv, then a ladder of (blocks, width) stages joined by
/// transition convs, then a 1x1 head.
struct ResNetConfig {
  std::vector<std::pair<int, int>> ladder = {{5, 64}, {5, 16}, {3, 8}, {2, 6}};
  int kernel = 3;
  double dropout = 0.1;
  double leaky_slope = 0.3;

  static ResNetConfig desk_default() { return {}; }
};

/// Encoder/decoder vision transformer: patch embedding with learned position
/// table, pre-norm attention blocks, linear+gelu decoder stack.
struct ViTConfig {
  int patch = 2;
  int dim = 128;
  int depth = 2;
  int heads = 4;
  double mlp_ratio = 4.0;
  int decoder_depth = 1;
  double dropout = 0.1;
  double drop_path = 0.0;

  static ViTConfig desk_default() { return {}; }
};

/// Transformer with adaptive layernorm conditioning: block modulation
/// (shift/scale/gate) is produced from a conditioning vector by zero-led
/// linears, so a fresh model starts as its unconditioned decoder.
struct DiTConfig {
  ViTConfig vit;
  int cond_dim = 4;  // conditioning input width (the time encoding)

  static DiTConfig desk_default() { return {}; }
};

class ResNet2D {
 public:
  ResNet2D(ad::ParamStore& store, const std::string& prefix, int in_ch, int out_ch,
           const ResNetConfig& cfg, Rng& init, int group);
  ad::Var forward(ad::Graph& g, ad::Var x) const;  // (in,H,W) -> (out,H,W)
  int in_channels() const { return in_ch_; }

 private:
  struct Conv {
    ad::Param* w;
    ad::Param* b;
  };
  ResNetConfig cfg_;
  int in_ch_, out_ch_;
  Conv stem_;
  std::vector<Conv> convs_;          // residual-block convs, two per block
  std::vector<int> stage_of_block_;  // unused widths kept implicit in shapes
  std::vector<Conv> transitions_;
  std::vector<int> blocks_per_stage_;
  Conv head_;
};

class ResNet3D {
 public:
  ResNet3D(ad::ParamStore& store, const std::string& prefix, int in_ch, int out_ch,
           const ResNetConfig& cfg, Rng& init, int group);
  ad::Var forward(ad::Graph& g, ad::Var x) const;  // (in,N,H,W) -> (out,N,H,W)
  int in_channels() const { return in_ch_; }

 private:
  struct Conv {
    ad::Param* w;
    ad::Param* b;
  };
  ResNetConfig cfg_;
  int in_ch_, out_ch_;
  Conv stem_;
  std::vector<Conv> convs_;
  std::vector<Conv> transitions_;
  std::vector<int> blocks_per_stage_;
  Conv head_;
};

class ViT {
 public:
  ViT(ad::ParamStore& store, const std::string& prefix, int in_ch, int out_ch, int h, int w,
      const ViTConfig& cfg, Rng& init, int group);
  ad::Var forward(ad::Graph& g, ad::Var x) const;  // (in,H,W) -> (out,H,W)
  int in_channels() const { return in_ch_; }

 private:
  friend class DiT;
  struct Block {
    ad::Param *ln1_g, *ln1_b, *wqkv, *bqkv, *wproj, *bproj;
    ad::Param *ln2_g, *ln2_b, *w1, *b1, *w2, *b2;
  };
  ad::Var encode(ad::Graph& g, ad::Var x) const;           // tokens after embed+pos
  ad::Var decode(ad::Graph& g, ad::Var tokens) const;      // tokens -> field
  ViTConfig cfg_;
  int in_ch_, out_ch_, h_, w_, tokens_;
  ad::Param *embed_w_, *embed_b_, *pos_;
  std::vector<Block> blocks_;
  ad::Param *ln_f_g_, *ln_f_b_;
  std::vector<std::pair<ad::Param*, ad::Param*>> decoder_;  // hidden linears
  ad::Param *head_w_, *head_b_;
};

class DiT {
 public:
  DiT(ad::ParamStore& store, const std::string& prefix, int in_ch, int out_ch, int h, int w,
      const DiTConfig& cfg, Rng& init, int group);
  // cond is the (cond_dim) conditioning vector for this evaluation.
  ad::Var forward(ad::Graph& g, ad::Var x, ad::Var cond) const;
  int in_channels() const { return trunk_.in_channels(); }

 private:
  DiTConfig cfg_;
  ViT trunk_;  // supplies embed/pos/decoder and the block parameter layout
  ad::Param *cond_w1_, *cond_b1_, *cond_w2_, *cond_b2_;
  std::vector<std::pair<ad::Param*, ad::Param*>> modulation_;  // zero-led, 6*dim out
};

// He fan-in initialization adjusted for the leaky slope; biases start at zero.
Tensor he_init(std::vector<int> shape, long fan_in, double leaky_slope, Rng& rng);

}  // namespace fluxcast
