#include "aman/csan.hpp"

namespace aman {

CsanWeights CsanWeights::bind(Graph& g, const ModelParams& params, const std::string& prefix) {
  auto p = [&](const char* n) { return g.param(params, prefix + n); };
  return CsanWeights{p("w_c"), p("b_c"), p("w_hc"), p("w_s"), p("b_s"),
                     p("w_hs"), p("wn_c"), p("bn_c"), p("wn_s"), p("bn_s")};
}

void init_csan(ModelParams& params, const std::string& prefix, std::size_t channels,
               std::size_t attention_dim, std::size_t hidden, Rng& rng) {
  const auto d = attention_dim;
  params.add(prefix + "w_c", uniform_init({d}, 1, rng));
  params.add(prefix + "b_c", uniform_init({d}, 1, rng));
  params.add(prefix + "w_hc", uniform_init({d, hidden}, hidden, rng));
  params.add(prefix + "w_s", uniform_init({channels, d}, channels, rng));
  params.add(prefix + "b_s", uniform_init({d}, channels, rng));
  params.add(prefix + "w_hs", uniform_init({d, hidden}, hidden, rng));
  params.add(prefix + "wn_c", uniform_init({d}, d, rng));
  params.add(prefix + "bn_c", uniform_init({1}, d, rng));
  params.add(prefix + "wn_s", uniform_init({d}, d, rng));
  params.add(prefix + "bn_s", uniform_init({1}, d, rng));
}

namespace {

void check_inputs(Var M, Var h, const CsanWeights& w, const char* op) {
  const Tensor& m = M.value();
  const Tensor& hv = h.value();
  const Tensor& ws = w.w_s.value();
  const Tensor& whc = w.w_hc.value();
  if (m.rank() != 2 || hv.rank() != 1 || ws.dim(0) != m.dim(0) || whc.dim(1) != hv.size()) {
    throw ContractError(std::string(op) + ": inconsistent shapes map " + shape_str(m.shape()) + ", hidden " +
                        shape_str(hv.shape()) + ", w_s " + shape_str(ws.shape()) + ", w_hc " +
                        shape_str(whc.shape()));
  }
}

// Columns of M scaled by alpha: out[c, l] = M[c, l] * alpha[l].
Var scale_cols(Var M, Var alpha) { return transpose(scale_rows(transpose(M), alpha)); }

}  // namespace

Var channel_attention(Var M_prev, Var h_prev, const CsanWeights& w) {
  check_inputs(M_prev, h_prev, w, "channel_attention");
  const std::size_t C = M_prev.value().dim(0);
  Var pooled = row_mean(M_prev);
  Var lifted = outer(pooled, w.w_c);
  Var shift = tile_rows(add(w.b_c, matvec(w.w_hc, h_prev)), C);
  Var f_c = tanh(add(lifted, shift));
  Var scores = add(matvec(f_c, w.wn_c), w.bn_c);
  return softmax(scores, 0);
}

Var apply_channel(Var M_prev, Var beta) { return scale_rows(M_prev, beta); }

Var spatial_attention(Var M_chan, Var h_prev, const CsanWeights& w) {
  check_inputs(M_chan, h_prev, w, "spatial_attention");
  const std::size_t L = M_chan.value().dim(1);
  Var projected = matmul(transpose(M_chan), w.w_s);
  Var shift = tile_rows(add(w.b_s, matvec(w.w_hs, h_prev)), L);
  Var f_s = tanh(add(projected, shift));
  Var scores = add(matvec(f_s, w.wn_s), w.bn_s);
  return softmax(scores, 0);
}

CsanResult csan_forward(Var M_prev, Var h_prev, const CsanWeights& w, AttentionOrder order) {
  CsanResult r;
  r.feature.M_prev = M_prev;
  if (order == AttentionOrder::kChannelFirst) {
    r.feature.beta = channel_attention(M_prev, h_prev, w);
    r.feature.M_chan = apply_channel(M_prev, r.feature.beta);
    r.feature.alpha = spatial_attention(r.feature.M_chan, h_prev, w);
    r.feature.M_out = scale_cols(r.feature.M_chan, r.feature.alpha);
    r.context = matvec(r.feature.M_chan, r.feature.alpha);
  } else {
    r.feature.alpha = spatial_attention(M_prev, h_prev, w);
    r.feature.M_chan = scale_cols(M_prev, r.feature.alpha);
    r.feature.beta = channel_attention(r.feature.M_chan, h_prev, w);
    r.feature.M_out = apply_channel(r.feature.M_chan, r.feature.beta);
    r.context = mul(r.feature.beta, matvec(M_prev, r.feature.alpha));
  }
  return r;
}

AttentionOrder parse_attention_order(const std::string& s) {
  if (s == "channel_first") return AttentionOrder::kChannelFirst;
  if (s == "spatial_first") return AttentionOrder::kSpatialFirst;
  throw ContractError("unknown attention order '" + s + "'");
}

}  // namespace aman
