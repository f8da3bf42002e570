#include "trackssm/train.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

namespace trackssm {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

// ---------------------------------------------------------------------------
// Pseudo-labels.
// ---------------------------------------------------------------------------

S2LTargets s2l_targets(const BBox& box_i, const BBox& box_next, int n_layers) {
  if (n_layers < 1) throw DomainError("s2l_targets: n_layers must be >= 1");
  S2LTargets out;
  out.targets.resize(n_layers);
  for (int k = 1; k <= n_layers; ++k) {
    const double a = static_cast<double>(k) / n_layers;
    BBox& t = out.targets[k - 1];
    t.cx = box_i.cx + a * (box_next.cx - box_i.cx);
    t.cy = box_i.cy + a * (box_next.cy - box_i.cy);
    t.w = box_i.w + a * (box_next.w - box_i.w);
    t.h = box_i.h + a * (box_next.h - box_i.h);
  }
  // the endpoint is the ground truth exactly, independent of rounding
  out.targets[n_layers - 1] = box_next;
  return out;
}

S2LTargets layer_targets(const TrainingSegment& seg, int n_layers, bool s2l_on) {
  if (s2l_on) return s2l_targets(seg.history.last_box(), seg.target, n_layers);
  S2LTargets out;
  out.targets.assign(n_layers, seg.target);
  return out;
}

// ---------------------------------------------------------------------------
// Losses.
// ---------------------------------------------------------------------------

double smooth_l1_loss(const BBox& pred, const BBox& target) {
  const double d[4] = {pred.cx - target.cx, pred.cy - target.cy, pred.w - target.w,
                       pred.h - target.h};
  double acc = 0.0;
  for (double di : d) {
    const double ad = std::fabs(di);
    acc += ad < 1.0 ? 0.5 * di * di : ad - 0.5;
  }
  return acc / 4.0;
}

std::array<double, 4> smooth_l1_grad(const BBox& pred, const BBox& target) {
  const double d[4] = {pred.cx - target.cx, pred.cy - target.cy, pred.w - target.w,
                       pred.h - target.h};
  std::array<double, 4> g;
  for (int i = 0; i < 4; ++i)
    g[i] = (std::fabs(d[i]) < 1.0 ? d[i] : (d[i] > 0.0 ? 1.0 : -1.0)) / 4.0;
  return g;
}

namespace {

struct GiouParts {
  double loss;
  // d(loss)/d(pred corner) in the order x1, y1, x2, y2, plus area terms
  double d_px1, d_py1, d_px2, d_py2;
};

GiouParts giou_eval(const BBox& pred, const BBox& target) {
  if (!(pred.w > 0.0) || !(pred.h > 0.0) || !(target.w > 0.0) || !(target.h > 0.0))
    throw DomainError("giou_loss: boxes must have positive extents");
  const Corners p = to_corners(pred), t = to_corners(target);

  const double ix1 = std::max(p.x1, t.x1), iy1 = std::max(p.y1, t.y1);
  const double ix2 = std::min(p.x2, t.x2), iy2 = std::min(p.y2, t.y2);
  const double iw = std::max(0.0, ix2 - ix1), ih = std::max(0.0, iy2 - iy1);
  const double inter = iw * ih;

  const double ap = pred.w * pred.h, at = target.w * target.h;
  const double uni = ap + at - inter;

  const double ex1 = std::min(p.x1, t.x1), ey1 = std::min(p.y1, t.y1);
  const double ex2 = std::max(p.x2, t.x2), ey2 = std::max(p.y2, t.y2);
  const double ew = ex2 - ex1, eh = ey2 - ey1;
  const double ae = ew * eh;

  const double giou = inter / uni - (ae - uni) / ae;

  GiouParts out{};
  out.loss = 1.0 - giou;

  // d(loss) = -d(giou); giou as a function of (inter, ap, ae) with
  // uni = ap + at - inter
  const double dg_dinter = (uni + inter) / (uni * uni) - 1.0 / ae;
  const double dg_dap = -inter / (uni * uni) + 1.0 / ae;
  const double dg_dae = -uni / (ae * ae);
  const double dl_dinter = -dg_dinter;
  const double dl_dap = -dg_dap;
  const double dl_dae = -dg_dae;

  // intersection corners (branch-following subgradients)
  if (iw > 0.0 && ih > 0.0) {
    const double d_iw = dl_dinter * ih, d_ih = dl_dinter * iw;
    if (p.x2 <= t.x2) out.d_px2 += d_iw;
    if (p.x1 >= t.x1) out.d_px1 -= d_iw;
    if (p.y2 <= t.y2) out.d_py2 += d_ih;
    if (p.y1 >= t.y1) out.d_py1 -= d_ih;
  }
  // own area in corner terms: ap = (x2-x1)(y2-y1)
  out.d_px2 += dl_dap * pred.h;
  out.d_px1 -= dl_dap * pred.h;
  out.d_py2 += dl_dap * pred.w;
  out.d_py1 -= dl_dap * pred.w;
  // enclosing box
  const double d_ew = dl_dae * eh, d_eh = dl_dae * ew;
  if (p.x2 >= t.x2) out.d_px2 += d_ew;
  if (p.x1 <= t.x1) out.d_px1 -= d_ew;
  if (p.y2 >= t.y2) out.d_py2 += d_eh;
  if (p.y1 <= t.y1) out.d_py1 -= d_eh;
  return out;
}

}  // namespace

double giou_loss(const BBox& pred, const BBox& target) {
  return giou_eval(pred, target).loss;
}

std::array<double, 4> giou_loss_grad(const BBox& pred, const BBox& target) {
  const GiouParts g = giou_eval(pred, target);
  // corners to center format: x1 = cx - w/2, x2 = cx + w/2
  return {g.d_px1 + g.d_px2, g.d_py1 + g.d_py2, 0.5 * (g.d_px2 - g.d_px1),
          0.5 * (g.d_py2 - g.d_py1)};
}

double total_loss(const std::vector<BBox>& per_layer, const S2LTargets& s2l,
                  const LossWeights& w) {
  if (per_layer.size() != s2l.targets.size())
    throw DimensionError("total_loss: layer count != target count");
  if (per_layer.empty()) throw DimensionError("total_loss: no layers");
  double acc = 0.0;
  for (size_t k = 0; k < per_layer.size(); ++k) {
    acc += w.lambda1 * smooth_l1_loss(per_layer[k], s2l.targets[k]);
    if (w.use_giou) acc += w.lambda2 * giou_loss(per_layer[k], s2l.targets[k]);
  }
  return acc / per_layer.size();
}

// ---------------------------------------------------------------------------
// Backward pass.
// ---------------------------------------------------------------------------

namespace {

// d(cosine encoding)/d(coordinate), applied transposed: folds d_enc into the
// 4 box coordinates.
void cosenc_backward(const BBox& box, int dim, const Vec& d_enc,
                     std::array<double, 4>& d_box) {
  const double coords[4] = {box.cx, box.cy, box.w, box.h};
  size_t k = 0;
  for (int c = 0; c < 4; ++c) {
    double acc = 0.0;
    for (int j = 0; j < dim / 2; ++j) {
      const double freq = std::pow(10000.0, -2.0 * j / dim);
      const double arg = coords[c] * freq;
      acc += d_enc[k++] * freq * std::cos(arg);
      acc -= d_enc[k++] * freq * std::sin(arg);
    }
    d_box[c] += acc;
  }
}

// One decoder layer. dh carries the hidden-state gradient: on entry it is
// d(loss)/d(h_out), on exit d(loss)/d(h_in). d_box_in is written only in
// end-to-end mode.
void decoder_layer_backward(const DecoderLayerTrace& tr, const DecoderLayerWeights& w,
                            const Vec& flow, int pos_dim, bool end_to_end,
                            const std::array<double, 4>& d_box_out, Mat& dh,
                            Vec& d_flow, std::array<double, 4>& d_box_in,
                            DecoderLayerWeights& gw) {
  const int dp = w.flow.ssm.dim_d();
  const int ns = w.flow.ssm.dim_n();

  // residual box update with clamp gating on the extents
  std::array<double, 4> d_delta = d_box_out;
  if (tr.clamped[0]) d_delta[2] = 0.0;
  if (tr.clamped[1]) d_delta[3] = 0.0;
  if (end_to_end) {
    d_box_in[0] += d_delta[0];
    d_box_in[1] += d_delta[1];
    d_box_in[2] += d_delta[2];
    d_box_in[3] += d_delta[3];
  }

  // FFN
  Vec d_delta_v(d_delta.begin(), d_delta.end());
  add_outer(gw.W_f2, d_delta_v, tr.f1);
  for (int i = 0; i < 4; ++i) gw.b_f2[i] += d_delta[i];
  Vec d_f1(tr.f1.size(), 0.0);
  matvec_t_add(w.W_f2, d_delta_v, d_f1);
  Vec d_f1_pre(d_f1.size());
  for (size_t i = 0; i < d_f1.size(); ++i) d_f1_pre[i] = d_f1[i] * silu_grad(tr.f1_pre[i]);
  add_outer(gw.W_f1, d_f1_pre, tr.gated);
  for (size_t i = 0; i < d_f1_pre.size(); ++i) gw.b_f1[i] += d_f1_pre[i];
  Vec d_gated(dp, 0.0);
  matvec_t_add(w.W_f1, d_f1_pre, d_gated);

  // gate: gated = e_out * silu(r_gate)
  Vec d_e_out(dp), d_r(dp);
  for (int d = 0; d < dp; ++d) {
    d_e_out[d] = d_gated[d] * silu(tr.state.r_gate[d]);
    d_r[d] = d_gated[d] * tr.e_out[d] * silu_grad(tr.state.r_gate[d]);
  }

  // flow-SSM step: e_out[d] = sum_n C[n] h[d,n] + D[d] e_sig[d],
  // h[d,n] = A_bar h_in + delta B e_sig
  const Mat& h_out = tr.state.hidden.h;
  const Mat& h_in = tr.h_in.h;
  const Mat& a_bar = tr.flow.disc.A_bar;
  const Vec& delta = tr.flow.proj.delta;
  const Vec& b_in = tr.flow.proj.B_in;
  const Vec& c_out = tr.flow.proj.C_out;

  Vec d_c(ns, 0.0), d_b(ns, 0.0), d_delta_flow(dp, 0.0), d_e_sig(dp, 0.0);
  for (int d = 0; d < dp; ++d) {
    const double deo = d_e_out[d];
    gw.flow.ssm.D_skip[d] += deo * tr.state.e_signal[d];
    d_e_sig[d] += w.flow.ssm.D_skip[d] * deo;
    double d_delta_acc = 0.0, d_e_acc = 0.0;
    for (int n = 0; n < ns; ++n) {
      d_c[n] += deo * h_out(d, n);
      const double dhn = dh(d, n) + c_out[n] * deo;
      d_delta_acc += dhn * (a_bar(d, n) * w.flow.ssm.A(d, n) * h_in(d, n) +
                            b_in[n] * tr.state.e_signal[d]);
      gw.flow.ssm.A(d, n) += dhn * a_bar(d, n) * delta[d] * h_in(d, n);
      d_b[n] += dhn * delta[d] * tr.state.e_signal[d];
      d_e_acc += dhn * delta[d] * b_in[n];
      dh(d, n) = dhn * a_bar(d, n);  // flows to the previous layer
    }
    d_delta_flow[d] = d_delta_acc;
    d_e_sig[d] += d_e_acc;
  }

  // flow projections (softplus on delta)
  Vec d_draw(dp);
  for (int d = 0; d < dp; ++d) d_draw[d] = d_delta_flow[d] * sigmoid(tr.flow.delta_raw[d]);
  add_outer(gw.flow.W_delta, d_draw, flow);
  for (int d = 0; d < dp; ++d) gw.flow.b_delta[d] += d_draw[d];
  matvec_t_add(w.flow.W_delta, d_draw, d_flow);
  add_outer(gw.flow.W_B, d_b, flow);
  for (int n = 0; n < ns; ++n) gw.flow.b_B[n] += d_b[n];
  matvec_t_add(w.flow.W_B, d_b, d_flow);
  add_outer(gw.flow.W_C, d_c, flow);
  for (int n = 0; n < ns; ++n) gw.flow.b_C[n] += d_c[n];
  matvec_t_add(w.flow.W_C, d_c, d_flow);

  // split linear
  Vec d_u(2 * dp);
  for (int d = 0; d < dp; ++d) {
    d_u[d] = d_e_sig[d];
    d_u[dp + d] = d_r[d];
  }
  add_outer(gw.W_split, d_u, tr.enc_pos);
  for (int i = 0; i < 2 * dp; ++i) gw.b_split[i] += d_u[i];
  if (end_to_end) {
    Vec d_enc(tr.enc_pos.size(), 0.0);
    matvec_t_add(w.W_split, d_u, d_enc);
    cosenc_backward(tr.box_in, pos_dim, d_enc, d_box_in);
  }
}

// Backward through one mamba block; returns the gradient w.r.t. the block
// input sequence.
Mat mamba_block_backward(const Mat& x_seq, const MambaTrace& tr,
                         const MambaBlockWeights& w, const Mat& d_out,
                         MambaBlockWeights& gw) {
  const int len = x_seq.rows;
  const int dm = w.d_model, di = w.d_inner, ns = w.d_state, dtr = w.dt_rank,
            kk = w.kernel;

  Mat d_in = d_out;         // residual path
  Mat d_p(len, 2 * di);     // gradient at the in_proj output
  Mat d_y(len, di);

  // out_proj and gate
  Vec d_out_t(dm), d_o(di), o_t(di);
  for (int t = 0; t < len; ++t) {
    for (int c = 0; c < dm; ++c) d_out_t[c] = d_out(t, c);
    for (int d = 0; d < di; ++d) o_t[d] = tr.y(t, d) * silu(tr.in_proj(t, di + d));
    add_outer(gw.W_out, d_out_t, o_t);
    for (int c = 0; c < dm; ++c) gw.b_out[c] += d_out_t[c];
    d_o.assign(di, 0.0);
    matvec_t_add(w.W_out, d_out_t, d_o);
    for (int d = 0; d < di; ++d) {
      const double z = tr.in_proj(t, di + d);
      d_y(t, d) = d_o[d] * silu(z);
      d_p(t, di + d) = d_o[d] * tr.y(t, d) * silu_grad(z);
    }
  }

  // scan backward (BPTT)
  Mat d_v(len, di, 0.0), d_delta(len, di, 0.0), d_bseq(len, ns, 0.0),
      d_cseq(len, ns, 0.0);
  Mat dh(di, ns, 0.0);
  for (int t = len - 1; t >= 0; --t) {
    const Mat& h_t = tr.h[t];
    const Mat* h_prev = t > 0 ? &tr.h[t - 1] : nullptr;
    const Mat& a_bar = tr.a_bar[t];
    for (int d = 0; d < di; ++d) {
      const double dy = d_y(t, d);
      const double xv = tr.v(t, d);
      gw.ssm.D_skip[d] += dy * xv;
      d_v(t, d) += w.ssm.D_skip[d] * dy;
      const double dt = tr.delta(t, d);
      double d_dt_acc = 0.0, d_v_acc = 0.0;
      for (int j = 0; j < ns; ++j) {
        d_cseq(t, j) += dy * h_t(d, j);
        const double dhn = dh(d, j) + tr.c_seq(t, j) * dy;
        const double hp = h_prev ? (*h_prev)(d, j) : 0.0;
        d_dt_acc += dhn * (a_bar(d, j) * w.ssm.A(d, j) * hp + tr.b_seq(t, j) * xv);
        gw.ssm.A(d, j) += dhn * a_bar(d, j) * dt * hp;
        d_bseq(t, j) += dhn * dt * xv;
        d_v_acc += dhn * dt * tr.b_seq(t, j);
        dh(d, j) = dhn * a_bar(d, j);
      }
      d_delta(t, d) = d_dt_acc;
      d_v(t, d) += d_v_acc;
    }
  }

  // delta / B / C projections back into the scan input
  Vec d_draw(di), r_t(dtr), d_r(dtr), d_q(dtr + 2 * ns), v_t(di);
  for (int t = 0; t < len; ++t) {
    for (int d = 0; d < di; ++d)
      d_draw[d] = d_delta(t, d) * sigmoid(tr.delta_raw(t, d));
    for (int j = 0; j < dtr; ++j) r_t[j] = tr.dt_low(t, j);
    add_outer(gw.W_dt, d_draw, r_t);
    for (int d = 0; d < di; ++d) gw.b_dt[d] += d_draw[d];
    d_r.assign(dtr, 0.0);
    matvec_t_add(w.W_dt, d_draw, d_r);

    for (int j = 0; j < dtr; ++j) d_q[j] = d_r[j];
    for (int j = 0; j < ns; ++j) {
      d_q[dtr + j] = d_bseq(t, j);
      d_q[dtr + ns + j] = d_cseq(t, j);
    }
    for (int d = 0; d < di; ++d) v_t[d] = tr.v(t, d);
    add_outer(gw.W_x, d_q, v_t);
    for (size_t i = 0; i < d_q.size(); ++i) gw.b_x[i] += d_q[i];
    Vec d_v_t(di, 0.0);
    matvec_t_add(w.W_x, d_q, d_v_t);
    for (int d = 0; d < di; ++d) d_v(t, d) += d_v_t[d];
  }

  // silu + causal depthwise conv back into the signal half of in_proj
  for (int t = 0; t < len; ++t) {
    for (int ch = 0; ch < di; ++ch) {
      const double dc = d_v(t, ch) * silu_grad(tr.conv_pre(t, ch));
      gw.conv_b[ch] += dc;
      for (int j = 0; j < kk; ++j) {
        const int src = t - (kk - 1) + j;
        if (src < 0) continue;
        gw.conv_w(ch, j) += dc * tr.in_proj(src, ch);
        d_p(src, ch) += dc * w.conv_w(ch, j);
      }
    }
  }

  // in_proj
  Vec d_p_t(2 * di), x_t(dm);
  for (int t = 0; t < len; ++t) {
    for (int c = 0; c < 2 * di; ++c) d_p_t[c] = d_p(t, c);
    for (int c = 0; c < dm; ++c) x_t[c] = x_seq(t, c);
    add_outer(gw.W_in, d_p_t, x_t);
    for (int c = 0; c < 2 * di; ++c) gw.b_in[c] += d_p_t[c];
    Vec d_x(dm, 0.0);
    matvec_t_add(w.W_in, d_p_t, d_x);
    for (int c = 0; c < dm; ++c) d_in(t, c) += d_x[c];
  }
  return d_in;
}

void embed_backward(const TrajectoryHistory& hist, const EmbedTrace& tr,
                    const ModelParams& p, const Mat& d_emb, ModelParams& g) {
  const int n = hist.length(), m = p.cfg.m;
  Vec d_e(m), d_uhat(m), d_u(m), d_a(m), x(8);
  for (int t = 0; t < n; ++t) {
    for (int c = 0; c < m; ++c) d_e[c] = d_emb(t, c);
    double mean_duhat = 0.0, mean_duhat_norm = 0.0;
    for (int c = 0; c < m; ++c) {
      g.embed.ln_g[c] += d_e[c] * tr.norm(t, c);
      g.embed.ln_b[c] += d_e[c];
      d_uhat[c] = d_e[c] * p.embed.ln_g[c];
      mean_duhat += d_uhat[c];
      mean_duhat_norm += d_uhat[c] * tr.norm(t, c);
    }
    mean_duhat /= m;
    mean_duhat_norm /= m;
    const double rstd = tr.rstd[t];
    for (int c = 0; c < m; ++c) {
      d_u[c] = rstd * (d_uhat[c] - mean_duhat - tr.norm(t, c) * mean_duhat_norm);
      d_a[c] = d_u[c] * silu_grad(tr.lin(t, c));
    }
    for (int c = 0; c < 8; ++c) x[c] = hist.steps[t][c];
    add_outer(g.embed.W, d_a, x);
    for (int c = 0; c < m; ++c) g.embed.b[c] += d_a[c];
  }
}

// Gradient of one segment's loss, accumulated (unscaled) into g.
double backward_segment(const TrainingSegment& seg, const ModelParams& p,
                        const LossWeights& lw, bool s2l_on, bool end_to_end,
                        ModelParams& g) {
  ForwardTrace trace;
  std::vector<BBox> per_layer = forward_model(seg.history, p, trace);
  const int n_layers = static_cast<int>(per_layer.size());
  const S2LTargets targets = layer_targets(seg, n_layers, s2l_on);
  const double loss = total_loss(per_layer, targets, lw);

  // per-layer box gradients from the loss
  std::vector<std::array<double, 4>> d_boxes(n_layers);
  for (int k = 0; k < n_layers; ++k) {
    std::array<double, 4> d = smooth_l1_grad(per_layer[k], targets.targets[k]);
    for (auto& v : d) v *= lw.lambda1;
    if (lw.use_giou) {
      const auto dg = giou_loss_grad(per_layer[k], targets.targets[k]);
      for (int i = 0; i < 4; ++i) d[i] += lw.lambda2 * dg[i];
    }
    for (auto& v : d) v /= n_layers;
    d_boxes[k] = d;
  }

  // decoder, last layer first; dh threads backward through the cascade
  Mat dh(p.cfg.dec_width, p.cfg.n_state, 0.0);
  Vec d_flow(p.cfg.m, 0.0);
  std::array<double, 4> d_box_carry{0, 0, 0, 0};
  for (int k = n_layers - 1; k >= 0; --k) {
    std::array<double, 4> d_box_out = d_boxes[k];
    if (end_to_end)
      for (int i = 0; i < 4; ++i) d_box_out[i] += d_box_carry[i];
    d_box_carry = {0, 0, 0, 0};
    decoder_layer_backward(trace.dec[k], p.dec[k], trace.flow, p.cfg.pos_dim,
                           end_to_end, d_box_out, dh, d_flow, d_box_carry, g.dec[k]);
  }

  // encoder: the flow feature is the last row of the final block output
  const int n = seg.history.length();
  Mat d_seq(n, p.cfg.m, 0.0);
  for (int c = 0; c < p.cfg.m; ++c) d_seq(n - 1, c) = d_flow[c];
  for (int b = static_cast<int>(p.enc.size()) - 1; b >= 0; --b)
    d_seq = mamba_block_backward(trace.enc.block_in[b], trace.enc.blocks[b], p.enc[b],
                                 d_seq, g.enc[b]);

  embed_backward(seg.history, trace.embed, p, d_seq, g);
  return loss;
}

}  // namespace

double backward(const std::vector<TrainingSegment>& batch, const ModelParams& params,
                const LossWeights& lw, bool s2l_on, const BackwardOptions& opts,
                ModelParams& grads) {
  if (batch.empty()) throw DomainError("backward: empty batch");
  zero_params(grads);
  double loss_sum = 0.0;
  for (size_t i = 0; i < batch.size(); ++i) {
    const double l =
        backward_segment(batch[i], params, lw, s2l_on, opts.end_to_end, grads);
    if (!std::isfinite(l))
      throw TrainingError("backward: non-finite loss at batch segment " +
                          std::to_string(i));
    loss_sum += l;
  }
  const double scale = 1.0 / batch.size();
  for (auto& t : collect_tensors(grads))
    for (size_t i = 0; i < t.len; ++i) t.data[i] *= scale;
  return loss_sum * scale;
}

double segment_loss(const TrainingSegment& seg, const ModelParams& params,
                    const LossWeights& lw, bool s2l_on) {
  ForwardTrace trace;
  std::vector<BBox> per_layer = forward_model(seg.history, params, trace);
  return total_loss(per_layer, layer_targets(seg, (int)per_layer.size(), s2l_on), lw);
}

double segment_loss_frozen_boxes(const TrainingSegment& seg, const ModelParams& params,
                                 const LossWeights& lw, bool s2l_on,
                                 const std::vector<BBox>& frozen_inputs) {
  if (frozen_inputs.size() != params.dec.size())
    throw DimensionError("segment_loss_frozen_boxes: need one box per layer");
  EmbeddingSequence emb = embed_history(seg.history, params);
  FlowFeature flow = encode_flow(emb, params);
  HiddenState h(params.cfg.dec_width, params.cfg.n_state);
  std::vector<BBox> per_layer;
  per_layer.reserve(params.dec.size());
  for (size_t k = 0; k < params.dec.size(); ++k) {
    auto [box, h_next] = decoder_layer(frozen_inputs[k], flow, h, params.dec[k],
                                       params.cfg.pos_dim, params.cfg.eps_box);
    h = std::move(h_next);
    per_layer.push_back(box);
  }
  return total_loss(per_layer, layer_targets(seg, (int)per_layer.size(), s2l_on), lw);
}

// ---------------------------------------------------------------------------
// Adam.
// ---------------------------------------------------------------------------

AdamState make_adam(const ModelParams& params, double lr) {
  AdamState s;
  s.lr = lr;
  const size_t n = param_count(params);
  s.m.assign(n, 0.0);
  s.v.assign(n, 0.0);
  return s;
}

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& opt) {
  auto pt = collect_tensors(params);
  auto gt = collect_tensors(const_cast<ModelParams&>(grads));
  if (pt.size() != gt.size()) throw DimensionError("adam_step: tensor count mismatch");
  size_t total = 0;
  for (const auto& t : pt) total += t.len;
  if (opt.m.size() != total || opt.v.size() != total)
    throw DimensionError("adam_step: optimizer state size mismatch");

  opt.t += 1;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.t));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.t));
  size_t off = 0;
  for (size_t ti = 0; ti < pt.size(); ++ti) {
    if (pt[ti].len != gt[ti].len)
      throw DimensionError("adam_step: shape mismatch for " + pt[ti].name);
    double* p = pt[ti].data;
    const double* g = gt[ti].data;
    for (size_t i = 0; i < pt[ti].len; ++i, ++off) {
      opt.m[off] = opt.beta1 * opt.m[off] + (1.0 - opt.beta1) * g[i];
      opt.v[off] = opt.beta2 * opt.v[off] + (1.0 - opt.beta2) * g[i] * g[i];
      const double mhat = opt.m[off] / bc1;
      const double vhat = opt.v[off] / bc2;
      p[i] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Training loop.
// ---------------------------------------------------------------------------

TrainResult train(const std::vector<TrainingSegment>& dataset, const TrainConfig& cfg) {
  if (dataset.empty()) throw DomainError("train: empty dataset");
  cfg.model.validate();
  if (cfg.batch_size < 1 || cfg.epochs < 1)
    throw ConfigError("train: batch_size and epochs must be >= 1");

  TrainResult res;
  res.params = init_model_params(cfg.model, cfg.seed);
  res.opt = make_adam(res.params, cfg.lr);

  const int n_workers = std::max(1, cfg.threads);
  ModelParams grads = zeros_like(res.params);
  std::vector<ModelParams> worker_grads;
  for (int w = 1; w < n_workers; ++w) worker_grads.push_back(zeros_like(res.params));

  Rng shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  std::vector<size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), size_t{0});

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_sum = 0.0;
    int epoch_batches = 0;
    for (size_t start = 0, step = 1; start < order.size();
         start += cfg.batch_size, ++step) {
      const size_t end = std::min(order.size(), start + cfg.batch_size);
      const size_t bsz = end - start;
      zero_params(grads);

      double loss_sum = 0.0;
      if (n_workers == 1 || bsz < 2) {
        for (size_t i = start; i < end; ++i)
          loss_sum += backward_segment(dataset[order[i]], res.params, cfg.loss, cfg.s2l,
                                       cfg.end_to_end_grad, grads);
      } else {
        // contiguous chunks per worker; chunk sums reduced in fixed order so
        // the result depends only on the thread count
        const size_t workers = std::min<size_t>(n_workers, bsz);
        std::vector<double> chunk_loss(workers, 0.0);
        std::vector<std::exception_ptr> errs(workers);
        std::vector<std::thread> pool;
        for (size_t w = 0; w < workers; ++w) {
          ModelParams* gbuf = w == 0 ? &grads : &worker_grads[w - 1];
          if (w > 0) zero_params(*gbuf);
          pool.emplace_back([&, w, gbuf]() {
            try {
              const size_t lo = start + w * bsz / workers;
              const size_t hi = start + (w + 1) * bsz / workers;
              double acc = 0.0;
              for (size_t i = lo; i < hi; ++i)
                acc += backward_segment(dataset[order[i]], res.params, cfg.loss,
                                        cfg.s2l, cfg.end_to_end_grad, *gbuf);
              chunk_loss[w] = acc;
            } catch (...) {
              errs[w] = std::current_exception();
            }
          });
        }
        for (auto& t : pool) t.join();
        for (auto& e : errs)
          if (e) std::rethrow_exception(e);
        for (size_t w = 0; w < workers; ++w) loss_sum += chunk_loss[w];
        auto main_refs = collect_tensors(grads);
        for (size_t w = 1; w < workers; ++w) {
          auto refs = collect_tensors(worker_grads[w - 1]);
          for (size_t ti = 0; ti < refs.size(); ++ti)
            for (size_t i = 0; i < refs[ti].len; ++i)
              main_refs[ti].data[i] += refs[ti].data[i];
        }
      }

      const double batch_loss = loss_sum / bsz;
      if (!std::isfinite(batch_loss))
        throw TrainingError("train: non-finite batch loss at epoch " +
                            std::to_string(epoch) + " step " + std::to_string(step));
      for (auto& t : collect_tensors(grads))
        for (size_t i = 0; i < t.len; ++i) t.data[i] /= bsz;

      adam_step(res.params, grads, res.opt);
      res.log.push_back({epoch, static_cast<int>(step), batch_loss});
      epoch_sum += batch_loss;
      ++epoch_batches;
    }
    res.epoch_mean.push_back(epoch_sum / epoch_batches);
  }
  return res;
}

void write_loss_csv(const std::vector<LossLogRow>& log, const std::string& path) {
  std::ostringstream out;
  out << "epoch,step,loss\n";
  out.precision(17);
  for (const auto& r : log) out << r.epoch << "," << r.step << "," << r.loss << "\n";
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp);
    f << out.str();
  }
  std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// Checkpoint I/O.
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'T', 'R', 'A', 'C', 'K', 'S', 'S', 'M'};
constexpr uint32_t kVersion = 1;

struct ByteWriter {
  std::string buf;
  void raw(const void* p, size_t n) { buf.append(static_cast<const char*>(p), n); }
  void u32(uint32_t v) { raw(&v, 4); }
  void i64(int64_t v) { raw(&v, 8); }
  void f64(double v) { raw(&v, 8); }
  void str8(const std::string& s) {
    const uint8_t n = static_cast<uint8_t>(s.size());
    raw(&n, 1);
    raw(s.data(), s.size());
  }
  void str32(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
};

struct ByteReader {
  const std::vector<char>& b;
  size_t off = 0;
  void need(size_t n) const {
    if (off + n > b.size())
      throw ParseError("checkpoint: unexpected end of file at byte offset " +
                       std::to_string(off));
  }
  void raw(void* p, size_t n) {
    need(n);
    std::memcpy(p, b.data() + off, n);
    off += n;
  }
  uint32_t u32() {
    uint32_t v;
    raw(&v, 4);
    return v;
  }
  int64_t i64() {
    int64_t v;
    raw(&v, 8);
    return v;
  }
  double f64() {
    double v;
    raw(&v, 8);
    return v;
  }
  std::string str8() {
    uint8_t n;
    raw(&n, 1);
    need(n);
    std::string s(b.data() + off, n);
    off += n;
    return s;
  }
  std::string str32() {
    const uint32_t n = u32();
    need(n);
    std::string s(b.data() + off, n);
    off += n;
    return s;
  }
};

enum class FieldType : uint8_t { i64 = 0, f64 = 1 };

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params,
                     const AdamState& opt, int history, bool normalize) {
  ByteWriter w;
  w.raw(kMagic, 8);
  w.u32(kVersion);

  const ModelConfig& c = params.cfg;
  struct IField {
    const char* name;
    int64_t v;
  };
  const IField ifields[] = {
      {"m", c.m},
      {"n_state", c.n_state},
      {"dec_width", c.dec_width},
      {"n_dec_layers", c.n_dec_layers},
      {"pos_dim", c.pos_dim},
      {"n_enc_blocks", c.n_enc_blocks},
      {"expand", c.expand},
      {"conv_kernel", c.conv_kernel},
      {"history", history},
      {"normalize", normalize ? 1 : 0},
      {"adam_t", opt.t},
  };
  struct FField {
    const char* name;
    double v;
  };
  const FField ffields[] = {
      {"eps_box", c.eps_box},   {"adam_lr", opt.lr},   {"adam_beta1", opt.beta1},
      {"adam_beta2", opt.beta2}, {"adam_eps", opt.eps},
  };
  w.u32(static_cast<uint32_t>(std::size(ifields) + std::size(ffields)));
  for (const auto& f : ifields) {
    w.str8(f.name);
    const uint8_t t = static_cast<uint8_t>(FieldType::i64);
    w.raw(&t, 1);
    w.i64(f.v);
  }
  for (const auto& f : ffields) {
    w.str8(f.name);
    const uint8_t t = static_cast<uint8_t>(FieldType::f64);
    w.raw(&t, 1);
    w.f64(f.v);
  }

  auto refs = collect_tensors(const_cast<ModelParams&>(params));
  w.u32(static_cast<uint32_t>(refs.size()) * 3);
  size_t off = 0;
  auto write_tensor = [&w](const std::string& name, const double* data, size_t len,
                           const std::vector<int>& dims) {
    w.str32(name);
    w.u32(static_cast<uint32_t>(dims.size()));
    for (int d : dims) w.u32(static_cast<uint32_t>(d));
    w.raw(data, len * sizeof(double));
  };
  for (const auto& t : refs) {
    write_tensor(t.name, t.data, t.len, t.dims);
    write_tensor("adam.m." + t.name, opt.m.data() + off, t.len,
                 {static_cast<int>(t.len)});
    write_tensor("adam.v." + t.name, opt.v.data() + off, t.len,
                 {static_cast<int>(t.len)});
    off += t.len;
  }

  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp);
    f.write(w.buf.data(), static_cast<std::streamsize>(w.buf.size()));
    if (!f) throw IoError("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path, const ModelConfig& expect_cfg,
                           int expect_history, bool expect_normalize) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(f)),
                          std::istreambuf_iterator<char>());
  ByteReader r{bytes};

  char magic[8];
  r.raw(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw ParseError("checkpoint: bad magic at byte offset 0");
  const uint32_t version = r.u32();
  if (version != kVersion)
    throw IncompatError("checkpoint: unsupported format version " +
                        std::to_string(version));

  std::vector<std::pair<std::string, int64_t>> ifields;
  std::vector<std::pair<std::string, double>> ffields;
  const uint32_t n_fields = r.u32();
  for (uint32_t i = 0; i < n_fields; ++i) {
    const std::string name = r.str8();
    uint8_t type;
    r.raw(&type, 1);
    if (type == static_cast<uint8_t>(FieldType::i64))
      ifields.emplace_back(name, r.i64());
    else if (type == static_cast<uint8_t>(FieldType::f64))
      ffields.emplace_back(name, r.f64());
    else
      throw ParseError("checkpoint: unknown config field type at byte offset " +
                       std::to_string(r.off));
  }
  auto geti = [&ifields](const std::string& name) -> int64_t {
    for (const auto& [n, v] : ifields)
      if (n == name) return v;
    throw ParseError("checkpoint: missing config field " + name);
  };
  auto getf = [&ffields](const std::string& name) -> double {
    for (const auto& [n, v] : ffields)
      if (n == name) return v;
    throw ParseError("checkpoint: missing config field " + name);
  };

  auto check_i = [&](const std::string& name, int64_t expect) {
    const int64_t got = geti(name);
    if (got != expect)
      throw IncompatError("checkpoint: config mismatch on field '" + name +
                          "': file has " + std::to_string(got) + ", expected " +
                          std::to_string(expect));
  };
  check_i("m", expect_cfg.m);
  check_i("n_state", expect_cfg.n_state);
  check_i("dec_width", expect_cfg.dec_width);
  check_i("n_dec_layers", expect_cfg.n_dec_layers);
  check_i("pos_dim", expect_cfg.pos_dim);
  check_i("n_enc_blocks", expect_cfg.n_enc_blocks);
  check_i("expand", expect_cfg.expand);
  check_i("conv_kernel", expect_cfg.conv_kernel);
  check_i("history", expect_history);
  check_i("normalize", expect_normalize ? 1 : 0);
  const double file_eps = getf("eps_box");
  if (file_eps != expect_cfg.eps_box)
    throw IncompatError("checkpoint: config mismatch on field 'eps_box'");

  Checkpoint out;
  out.history = expect_history;
  out.normalize = expect_normalize;
  out.params = init_model_params(expect_cfg, 0);
  zero_params(out.params);
  out.opt = make_adam(out.params, getf("adam_lr"));
  out.opt.beta1 = getf("adam_beta1");
  out.opt.beta2 = getf("adam_beta2");
  out.opt.eps = getf("adam_eps");
  out.opt.t = geti("adam_t");

  auto refs = collect_tensors(out.params);
  std::vector<std::pair<std::string, std::pair<double*, size_t>>> slots;
  size_t off = 0;
  for (auto& t : refs) {
    slots.emplace_back(t.name, std::make_pair(t.data, t.len));
    slots.emplace_back("adam.m." + t.name, std::make_pair(out.opt.m.data() + off, t.len));
    slots.emplace_back("adam.v." + t.name, std::make_pair(out.opt.v.data() + off, t.len));
    off += t.len;
  }

  const uint32_t n_tensors = r.u32();
  if (n_tensors != slots.size())
    throw IncompatError("checkpoint: tensor count " + std::to_string(n_tensors) +
                        " does not match expected " + std::to_string(slots.size()));
  std::vector<bool> seen(slots.size(), false);
  for (uint32_t i = 0; i < n_tensors; ++i) {
    const std::string name = r.str32();
    const uint32_t rank = r.u32();
    size_t len = 1;
    for (uint32_t d = 0; d < rank; ++d) len *= r.u32();
    size_t slot = slots.size();
    for (size_t s = 0; s < slots.size(); ++s)
      if (!seen[s] && slots[s].first == name) {
        slot = s;
        break;
      }
    if (slot == slots.size())
      throw IncompatError("checkpoint: unexpected tensor '" + name + "'");
    if (len != slots[slot].second.second)
      throw IncompatError("checkpoint: size mismatch for tensor '" + name + "'");
    r.raw(slots[slot].second.first, len * sizeof(double));
    seen[slot] = true;
  }
  if (r.off != bytes.size())
    throw ParseError("checkpoint: trailing bytes at offset " + std::to_string(r.off));
  return out;
}

}  // namespace trackssm
