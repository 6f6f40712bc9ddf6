#pragma once

#include <array>
#include <vector>

#include "epi/nn/graph.h"

namespace epi::nn {

// x [Cin, H, W], w [Cout, Cin, k, k] -> [Cout, Ho, Wo]; zero padding.
template <typename T>
Var conv2d(Graph<T>& g, Var x, Var w, int stride, int pad);

// Per-channel y = gamma[c] * x + beta[c]; batch normalization with frozen
// unit statistics. Works on [C, ...] tensors.
template <typename T>
Var channel_affine(Graph<T>& g, Var x, Var gamma, Var beta);

template <typename T>
Var relu(Graph<T>& g, Var x);
template <typename T>
Var leaky_relu(Graph<T>& g, Var x, T slope);
template <typename T>
Var softplus(Graph<T>& g, Var x);
template <typename T>
Var scale(Graph<T>& g, Var x, T s);
template <typename T>
Var add(Graph<T>& g, Var a, Var b);
// Elementwise max; the gradient goes to a where a >= b.
template <typename T>
Var maximum(Graph<T>& g, Var a, Var b);

// [Ca, ...] and [Cb, ...] with equal trailing extents -> [Ca + Cb, ...].
template <typename T>
Var concat_channels(Graph<T>& g, Var a, Var b);

// Bilinear x2 upsampling of [C, H, W] (half-pixel centres, edge clamped).
template <typename T>
Var upsample2x(Graph<T>& g, Var x);

// Spatial mean of [C, H, W] -> [C, 1].
template <typename T>
Var avg_pool(Graph<T>& g, Var x);

// x [Cin, N] (a feature map is viewed as N = H * W tokens), w [Cout, Cin],
// optional bias [Cout] -> [Cout, N].
template <typename T>
Var linear(Graph<T>& g, Var x, Var w);
template <typename T>
Var linear(Graph<T>& g, Var x, Var w, Var b);

// Kernelized attention with phi(x) = elu(x) + 1, evaluated in the
// associativity-reordered form phi(Q) (phi(K)^T V) so the cost is linear in
// the token counts. q [C, N], k and v [C, M] -> [C, N]; C split into heads.
template <typename T>
Var linear_attention(Graph<T>& g, Var q, Var k, Var v, int heads);

// Bilinear sampling plan: for each of Q * D output columns up to four
// (flat index, weight) taps into an [C, H, W] map. Columns with no taps read
// zeros.
struct SamplePlan {
  int map_size = 0;  // H * W of the sampled map
  int columns = 0;
  std::vector<int> offsets;  // columns + 1 entries into taps
  std::vector<std::pair<int, double>> taps;
};

template <typename T>
Var gather_samples(Graph<T>& g, Var map, const SamplePlan& plan);

// Softmax attention of each query column over its own D candidate columns.
// q [C, Q], k and v [C, Q * D] -> [C, Q].
template <typename T>
Var candidate_attention(Graph<T>& g, Var q, Var k, Var v, int heads, int d);

}  // namespace epi::nn
