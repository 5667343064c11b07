#pragma once

#include "fluxcast/tape.hpp"

namespace fluxcast::ad {

// "Same" convolutions, stride 1, zero padding, lowered to dense matrix
// products via im2col. Odd kernels keep the spatial shape; the pad is k/2.
//
//   conv2d: x (C,H,W)   * w (O,C,kh,kw)   + b (O) -> (O,H,W)
//   conv3d: x (C,D,H,W) * w (O,C,kd,kh,kw) + b (O) -> (O,D,H,W)
Var conv2d(Graph& g, Var x, Var w, Var b);
Var conv3d(Graph& g, Var x, Var w, Var b);

}  // namespace fluxcast::ad
