#pragma once

#include <string>

#include "aman/autodiff.hpp"
#include "aman/model_config.hpp"

namespace aman {

/// Channel and spatial attention over one attribute feature map, conditioned
/// on the decoder's previous hidden state.
///
/// Channel weights: the map is mean-pooled per channel to v[C]; each channel
/// is lifted to the attention space as v[c] * w_c + b_c, the projected hidden
/// state w_hc h is added to every row, tanh, then scored by wn_c/bn_c and
/// softmax-normalized over channels.
///
/// Spatial weights: each location's C-vector is projected by w_s (+ b_s), the
/// projected hidden state w_hs h is added, tanh, scored by wn_s/bn_s and
/// softmax-normalized over locations.
struct CsanWeights {
  Var w_c;   // [d]
  Var b_c;   // [d]
  Var w_hc;  // [d x H]
  Var w_s;   // [C x d]
  Var b_s;   // [d]
  Var w_hs;  // [d x H]
  Var wn_c;  // [d]
  Var bn_c;  // [1]
  Var wn_s;  // [d]
  Var bn_s;  // [1]

  static CsanWeights bind(Graph& g, const ModelParams& params, const std::string& prefix);
};

void init_csan(ModelParams& params, const std::string& prefix, std::size_t channels,
               std::size_t attention_dim, std::size_t hidden, Rng& rng);

/// Maps are [C x L] with L = h*w locations. In channel-first order M_chan is
/// the channel-weighted map; in spatial-first order it holds the spatially
/// weighted intermediate.
struct AttendedFeature {
  Var M_prev;
  Var M_chan;
  Var M_out;
  Var beta;   // [C], sums to 1
  Var alpha;  // [L], sums to 1
};

struct CsanResult {
  Var context;  // [C], sum over locations of M_out
  AttendedFeature feature;
};

Var channel_attention(Var M_prev, Var h_prev, const CsanWeights& w);
Var apply_channel(Var M_prev, Var beta);
Var spatial_attention(Var M_chan, Var h_prev, const CsanWeights& w);

CsanResult csan_forward(Var M_prev, Var h_prev, const CsanWeights& w,
                        AttentionOrder order = AttentionOrder::kChannelFirst);

AttentionOrder parse_attention_order(const std::string& s);

}  // namespace aman
