#include "trackssm/ssm.hpp"

#include <cmath>
#include <string>

namespace trackssm {

SSMParams make_ssm_params(int d, int n) {
  if (d < 1 || n < 1) throw DimensionError("make_ssm_params: D and N must be >= 1");
  SSMParams p;
  p.A = Mat(d, n);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < n; ++j) p.A(i, j) = -static_cast<double>(j + 1);
  p.D_skip.assign(d, 1.0);
  return p;
}

static void check_proj_shapes(const SSMParams& params, const FlowProjection& proj) {
  if (static_cast<int>(proj.delta.size()) != params.dim_d())
    throw DimensionError("discretize: delta length " + std::to_string(proj.delta.size()) +
                         " != D " + std::to_string(params.dim_d()));
  if (static_cast<int>(proj.B_in.size()) != params.dim_n())
    throw DimensionError("discretize: B length " + std::to_string(proj.B_in.size()) +
                         " != N " + std::to_string(params.dim_n()));
}

DiscretizedParams zoh_discretize_unchecked(const SSMParams& params,
                                           const FlowProjection& proj) {
  check_proj_shapes(params, proj);
  const int d = params.dim_d(), n = params.dim_n();
  DiscretizedParams out;
  out.A_bar = Mat(d, n);
  out.B_bar = Mat(d, n);
  for (int i = 0; i < d; ++i) {
    const double dt = proj.delta[i];
    for (int j = 0; j < n; ++j) {
      out.A_bar(i, j) = std::exp(dt * params.A(i, j));
      out.B_bar(i, j) = dt * proj.B_in[j];
    }
  }
  return out;
}

DiscretizedParams zoh_discretize(const SSMParams& params, const FlowProjection& proj) {
  check_proj_shapes(params, proj);
  for (double dt : proj.delta)
    if (!(dt > 0.0)) throw DomainError("zoh_discretize: delta must be > 0 elementwise");
  return zoh_discretize_unchecked(params, proj);
}

std::pair<Vec, HiddenState> ssm_step(const DiscretizedParams& disc,
                                     const SSMParams& params, const Vec& c_out,
                                     const HiddenState& h, const Vec& x) {
  const int d = params.dim_d(), n = params.dim_n();
  if (disc.A_bar.rows != d || disc.A_bar.cols != n || disc.B_bar.rows != d ||
      disc.B_bar.cols != n)
    throw DimensionError("ssm_step: discretized parameter shape mismatch");
  if (h.h.rows != d || h.h.cols != n)
    throw DimensionError("ssm_step: hidden state shape mismatch");
  if (static_cast<int>(x.size()) != d)
    throw DimensionError("ssm_step: input length != D");
  if (static_cast<int>(c_out.size()) != n)
    throw DimensionError("ssm_step: C length != N");

  HiddenState h_next(d, n);
  Vec y(d, 0.0);
  for (int i = 0; i < d; ++i) {
    double acc = 0.0;
    for (int j = 0; j < n; ++j) {
      const double hn = disc.A_bar(i, j) * h.h(i, j) + disc.B_bar(i, j) * x[i];
      h_next.h(i, j) = hn;
      acc += c_out[j] * hn;
    }
    y[i] = acc + params.D_skip[i] * x[i];
  }
  return {std::move(y), std::move(h_next)};
}

std::pair<Vec, HiddenState> flow_ssm(const Vec& flow, const Vec& e_in,
                                     const HiddenState& h, const FlowSSMWeights& w,
                                     FlowSSMTrace* trace) {
  const int d = w.ssm.dim_d();
  if (static_cast<int>(e_in.size()) != d)
    throw DimensionError("flow_ssm: input length != D");
  if (static_cast<int>(flow.size()) != w.W_delta.cols)
    throw DimensionError("flow_ssm: flow length != projection width");

  FlowProjection proj;
  Vec delta_raw = affine(w.W_delta, flow, w.b_delta);
  proj.delta.resize(delta_raw.size());
  for (size_t i = 0; i < delta_raw.size(); ++i) proj.delta[i] = softplus(delta_raw[i]);
  proj.B_in = affine(w.W_B, flow, w.b_B);
  proj.C_out = affine(w.W_C, flow, w.b_C);

  DiscretizedParams disc = zoh_discretize(w.ssm, proj);
  auto out = ssm_step(disc, w.ssm, proj.C_out, h, e_in);

  if (trace) {
    trace->delta_raw = std::move(delta_raw);
    trace->proj = std::move(proj);
    trace->disc = std::move(disc);
  }
  return out;
}

Mat selective_scan(const Mat& x_seq, const std::vector<FlowProjection>& per_step,
                   const SSMParams& params) {
  const int len = x_seq.rows;
  if (len < 1) throw DomainError("selective_scan: empty sequence");
  if (static_cast<int>(per_step.size()) != len)
    throw DimensionError("selective_scan: projection count != sequence length");
  if (x_seq.cols != params.dim_d())
    throw DimensionError("selective_scan: input width != D");

  Mat y(len, x_seq.cols);
  HiddenState h(params.dim_d(), params.dim_n());
  Vec x_t(x_seq.cols);
  for (int t = 0; t < len; ++t) {
    for (int c = 0; c < x_seq.cols; ++c) x_t[c] = x_seq(t, c);
    DiscretizedParams disc = zoh_discretize(params, per_step[t]);
    auto [y_t, h_next] = ssm_step(disc, params, per_step[t].C_out, h, x_t);
    h = std::move(h_next);
    for (int c = 0; c < x_seq.cols; ++c) y(t, c) = y_t[c];
  }
  return y;
}

MambaBlockWeights make_mamba_block_weights(int d_model, int d_state, int dt_rank,
                                           int kernel, Rng& rng) {
  MambaBlockWeights w;
  w.d_model = d_model;
  w.d_inner = 2 * d_model;
  w.d_state = d_state;
  w.dt_rank = dt_rank;
  w.kernel = kernel;

  auto init_mat = [&rng](Mat& m, int rows, int cols) {
    m = Mat(rows, cols);
    const double k = 1.0 / std::sqrt(static_cast<double>(cols));
    for (double& v : m.a) v = rng.uniform(-k, k);
  };

  init_mat(w.W_in, 2 * w.d_inner, d_model);
  w.b_in.assign(2 * w.d_inner, 0.0);
  init_mat(w.conv_w, w.d_inner, kernel);
  w.conv_b.assign(w.d_inner, 0.0);
  init_mat(w.W_x, dt_rank + 2 * d_state, w.d_inner);
  w.b_x.assign(dt_rank + 2 * d_state, 0.0);
  init_mat(w.W_dt, w.d_inner, dt_rank);
  // bias so softplus lands in the 0.01 .. 0.1 time-scale band
  w.b_dt.resize(w.d_inner);
  for (double& b : w.b_dt) {
    const double dt = std::exp(rng.uniform(std::log(0.01), std::log(0.1)));
    b = softplus_inv(dt);
  }
  w.ssm = make_ssm_params(w.d_inner, d_state);
  init_mat(w.W_out, d_model, w.d_inner);
  w.b_out.assign(d_model, 0.0);
  return w;
}

Mat mamba_block(const Mat& seq, const MambaBlockWeights& w, MambaTrace* trace) {
  const int len = seq.rows;
  if (len < 1) throw DomainError("mamba_block: empty sequence");
  if (seq.cols != w.d_model)
    throw DimensionError("mamba_block: sequence width " + std::to_string(seq.cols) +
                         " != d_model " + std::to_string(w.d_model));

  const int di = w.d_inner, ns = w.d_state, dtr = w.dt_rank, kk = w.kernel;

  Mat in_proj(len, 2 * di);
  Vec x_t(w.d_model), p_t;
  for (int t = 0; t < len; ++t) {
    for (int c = 0; c < w.d_model; ++c) x_t[c] = seq(t, c);
    p_t = affine(w.W_in, x_t, w.b_in);
    for (int c = 0; c < 2 * di; ++c) in_proj(t, c) = p_t[c];
  }

  // causal depthwise conv over the signal half, left zero padding
  Mat conv_pre(len, di), v(len, di);
  for (int t = 0; t < len; ++t) {
    for (int ch = 0; ch < di; ++ch) {
      double acc = w.conv_b[ch];
      for (int j = 0; j < kk; ++j) {
        const int src = t - (kk - 1) + j;
        if (src >= 0) acc += w.conv_w(ch, j) * in_proj(src, ch);
      }
      conv_pre(t, ch) = acc;
      v(t, ch) = silu(acc);
    }
  }

  // input-dependent delta / B / C
  Mat delta_raw(len, di), delta(len, di), b_seq(len, ns), c_seq(len, ns), dt_low(len, dtr);
  Vec v_t(di), q_t, r_t(dtr), draw_t;
  for (int t = 0; t < len; ++t) {
    for (int c = 0; c < di; ++c) v_t[c] = v(t, c);
    q_t = affine(w.W_x, v_t, w.b_x);
    for (int j = 0; j < dtr; ++j) {
      r_t[j] = q_t[j];
      dt_low(t, j) = q_t[j];
    }
    for (int j = 0; j < ns; ++j) {
      b_seq(t, j) = q_t[dtr + j];
      c_seq(t, j) = q_t[dtr + ns + j];
    }
    draw_t = affine(w.W_dt, r_t, w.b_dt);
    for (int c = 0; c < di; ++c) {
      delta_raw(t, c) = draw_t[c];
      delta(t, c) = softplus(draw_t[c]);
    }
  }

  // recurrent scan
  Mat y(len, di);
  Mat h(di, ns, 0.0);
  Mat a_bar_t(di, ns);
  std::vector<Mat> h_hist, a_hist;
  if (trace) {
    h_hist.reserve(len);
    a_hist.reserve(len);
  }
  for (int t = 0; t < len; ++t) {
    for (int d = 0; d < di; ++d) {
      const double dt = delta(t, d);
      const double xv = v(t, d);
      double acc = 0.0;
      for (int j = 0; j < ns; ++j) {
        const double a_bar = std::exp(dt * w.ssm.A(d, j));
        a_bar_t(d, j) = a_bar;
        const double hn = a_bar * h(d, j) + dt * b_seq(t, j) * xv;
        h(d, j) = hn;
        acc += c_seq(t, j) * hn;
      }
      y(t, d) = acc + w.ssm.D_skip[d] * xv;
    }
    if (trace) {
      h_hist.push_back(h);
      a_hist.push_back(a_bar_t);
    }
  }

  // gate with the z branch, project back, add residual
  Mat out(len, w.d_model);
  Vec o_t(di), y_out;
  for (int t = 0; t < len; ++t) {
    for (int d = 0; d < di; ++d) o_t[d] = y(t, d) * silu(in_proj(t, di + d));
    y_out = affine(w.W_out, o_t, w.b_out);
    for (int c = 0; c < w.d_model; ++c) out(t, c) = y_out[c] + seq(t, c);
  }

  if (trace) {
    trace->in_proj = std::move(in_proj);
    trace->conv_pre = std::move(conv_pre);
    trace->v = std::move(v);
    trace->delta_raw = std::move(delta_raw);
    trace->delta = std::move(delta);
    trace->b_seq = std::move(b_seq);
    trace->c_seq = std::move(c_seq);
    trace->dt_low = std::move(dt_low);
    trace->h = std::move(h_hist);
    trace->a_bar = std::move(a_hist);
    trace->y = std::move(y);
  }
  return out;
}

}  // namespace trackssm
