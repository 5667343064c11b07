#pragma once

#include "fluxcast/tape.hpp"

namespace fluxcast::ad {

// Layer normalization over the last axis of x (T,D) with per-feature
// gain/bias g (D), b (D).
Var layernorm(Graph& g, Var x, Var gain, Var bias, double eps = 1e-6);

// Multi-head self-attention, fused into one tape node.
//   x (T,D), wqkv (D,3D), bqkv (3D), wproj (D,D), bproj (D); D % heads == 0.
Var mhsa(Graph& g, Var x, Var wqkv, Var bqkv, Var wproj, Var bproj, int heads);

// (C,H,W) -> (T, C*p*p) with T = (H/p)*(W/p); token order row-major over the
// patch grid, features ordered [channel][py][px]. H and W must divide by p.
Var patchify(Graph& g, Var x, int p);

// Inverse of patchify: (T, C*p*p) -> (C,H,W).
Var unpatchify(Graph& g, Var tokens, int c, int h, int w, int p);

}  // namespace fluxcast::ad
