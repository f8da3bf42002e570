#include "trackssm/model.hpp"

#include <cmath>

namespace trackssm {

static constexpr double kLnEps = 1e-5;
static constexpr double kPosTau = 10000.0;

TrajectoryHistory make_history(const std::vector<BBox>& boxes) {
  if (boxes.empty()) throw DomainError("make_history: empty box sequence");
  TrajectoryHistory hist;
  hist.steps.resize(boxes.size());
  for (size_t i = 0; i < boxes.size(); ++i) {
    const BBox& b = boxes[i];
    if (!b.valid()) throw DomainError("make_history: invalid box at step " + std::to_string(i));
    auto& s = hist.steps[i];
    s[0] = b.cx;
    s[1] = b.cy;
    s[2] = b.w;
    s[3] = b.h;
    if (i == 0) {
      s[4] = s[5] = s[6] = s[7] = 0.0;
    } else {
      const BBox& prev = boxes[i - 1];
      s[4] = b.cx - prev.cx;
      s[5] = b.cy - prev.cy;
      s[6] = b.w - prev.w;
      s[7] = b.h - prev.h;
    }
  }
  return hist;
}

void ModelConfig::validate() const {
  if (m < 1 || n_state < 1 || dec_width < 1 || n_dec_layers < 1 || pos_dim < 2 ||
      n_enc_blocks < 1 || expand < 1 || conv_kernel < 1)
    throw ConfigError("model config: all widths and depths must be positive");
  if (pos_dim % 2 != 0) throw ConfigError("model config: pos_dim must be even");
  if (!(eps_box > 0.0)) throw ConfigError("model config: eps_box must be > 0");
}

static void init_linear(Mat& W, Vec& b, int rows, int cols, Rng& rng) {
  W = Mat(rows, cols);
  const double k = 1.0 / std::sqrt(static_cast<double>(cols));
  for (double& v : W.a) v = rng.uniform(-k, k);
  b.assign(rows, 0.0);
}

ModelParams init_model_params(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ModelParams p;
  p.cfg = cfg;

  init_linear(p.embed.W, p.embed.b, cfg.m, 8, rng);
  p.embed.ln_g.assign(cfg.m, 1.0);
  p.embed.ln_b.assign(cfg.m, 0.0);

  p.enc.reserve(cfg.n_enc_blocks);
  for (int i = 0; i < cfg.n_enc_blocks; ++i)
    p.enc.push_back(
        make_mamba_block_weights(cfg.m, cfg.n_state, cfg.dt_rank(), cfg.conv_kernel, rng));

  p.dec.reserve(cfg.n_dec_layers);
  for (int i = 0; i < cfg.n_dec_layers; ++i) {
    DecoderLayerWeights d;
    init_linear(d.W_split, d.b_split, 2 * cfg.dec_width, 4 * cfg.pos_dim, rng);
    d.flow.ssm = make_ssm_params(cfg.dec_width, cfg.n_state);
    init_linear(d.flow.W_delta, d.flow.b_delta, cfg.dec_width, cfg.m, rng);
    for (double& b : d.flow.b_delta)
      b = softplus_inv(std::exp(rng.uniform(std::log(0.01), std::log(0.1))));
    init_linear(d.flow.W_B, d.flow.b_B, cfg.n_state, cfg.m, rng);
    init_linear(d.flow.W_C, d.flow.b_C, cfg.n_state, cfg.m, rng);
    init_linear(d.W_f1, d.b_f1, 2 * cfg.dec_width, cfg.dec_width, rng);
    init_linear(d.W_f2, d.b_f2, 4, 2 * cfg.dec_width, rng);
    // zero the delta head: the untrained model starts as the identity
    // predictor, which keeps early training well-conditioned
    d.W_f2.fill(0.0);
    p.dec.push_back(std::move(d));
  }
  return p;
}

void zero_params(ModelParams& p) {
  for (auto& t : collect_tensors(p)) std::fill(t.data, t.data + t.len, 0.0);
}

ModelParams zeros_like(const ModelParams& p) {
  ModelParams z = p;
  zero_params(z);
  return z;
}

std::vector<TensorRef> collect_tensors(ModelParams& p) {
  std::vector<TensorRef> out;
  auto add_mat = [&out](const std::string& name, Mat& m) {
    out.push_back({name, m.a.data(), m.a.size(), {m.rows, m.cols}});
  };
  auto add_vec = [&out](const std::string& name, Vec& v) {
    out.push_back({name, v.data(), v.size(), {static_cast<int>(v.size())}});
  };

  add_mat("embed.W", p.embed.W);
  add_vec("embed.b", p.embed.b);
  add_vec("embed.ln_g", p.embed.ln_g);
  add_vec("embed.ln_b", p.embed.ln_b);

  for (size_t i = 0; i < p.enc.size(); ++i) {
    const std::string pre = "enc." + std::to_string(i) + ".";
    MambaBlockWeights& b = p.enc[i];
    add_mat(pre + "W_in", b.W_in);
    add_vec(pre + "b_in", b.b_in);
    add_mat(pre + "conv_w", b.conv_w);
    add_vec(pre + "conv_b", b.conv_b);
    add_mat(pre + "W_x", b.W_x);
    add_vec(pre + "b_x", b.b_x);
    add_mat(pre + "W_dt", b.W_dt);
    add_vec(pre + "b_dt", b.b_dt);
    add_mat(pre + "A", b.ssm.A);
    add_vec(pre + "D_skip", b.ssm.D_skip);
    add_mat(pre + "W_out", b.W_out);
    add_vec(pre + "b_out", b.b_out);
  }

  for (size_t i = 0; i < p.dec.size(); ++i) {
    const std::string pre = "dec." + std::to_string(i) + ".";
    DecoderLayerWeights& d = p.dec[i];
    add_mat(pre + "W_split", d.W_split);
    add_vec(pre + "b_split", d.b_split);
    add_mat(pre + "flow.W_delta", d.flow.W_delta);
    add_vec(pre + "flow.b_delta", d.flow.b_delta);
    add_mat(pre + "flow.W_B", d.flow.W_B);
    add_vec(pre + "flow.b_B", d.flow.b_B);
    add_mat(pre + "flow.W_C", d.flow.W_C);
    add_vec(pre + "flow.b_C", d.flow.b_C);
    add_mat(pre + "flow.A", d.flow.ssm.A);
    add_vec(pre + "flow.D_skip", d.flow.ssm.D_skip);
    add_mat(pre + "ffn.W1", d.W_f1);
    add_vec(pre + "ffn.b1", d.b_f1);
    add_mat(pre + "ffn.W2", d.W_f2);
    add_vec(pre + "ffn.b2", d.b_f2);
  }
  return out;
}

size_t param_count(const ModelParams& p) {
  size_t n = 0;
  for (const auto& t : collect_tensors(const_cast<ModelParams&>(p))) n += t.len;
  return n;
}

EmbeddingSequence embed_history(const TrajectoryHistory& hist, const ModelParams& p,
                                EmbedTrace* trace) {
  const int n = hist.length();
  if (n < 1) throw DomainError("embed_history: empty history");
  const int m = p.cfg.m;

  EmbeddingSequence emb;
  emb.rows = Mat(n, m);
  if (trace) {
    trace->lin = Mat(n, m);
    trace->act = Mat(n, m);
    trace->norm = Mat(n, m);
    trace->rstd.assign(n, 0.0);
  }

  Vec x(8), a;
  for (int t = 0; t < n; ++t) {
    for (int c = 0; c < 8; ++c) x[c] = hist.steps[t][c];
    a = affine(p.embed.W, x, p.embed.b);

    double mean = 0.0;
    Vec u(m);
    for (int c = 0; c < m; ++c) {
      u[c] = silu(a[c]);
      mean += u[c];
    }
    mean /= m;
    double var = 0.0;
    for (int c = 0; c < m; ++c) var += (u[c] - mean) * (u[c] - mean);
    var /= m;
    const double rstd = 1.0 / std::sqrt(var + kLnEps);

    for (int c = 0; c < m; ++c) {
      const double norm = (u[c] - mean) * rstd;
      emb.rows(t, c) = p.embed.ln_g[c] * norm + p.embed.ln_b[c];
      if (trace) {
        trace->lin(t, c) = a[c];
        trace->act(t, c) = u[c];
        trace->norm(t, c) = norm;
      }
    }
    if (trace) trace->rstd[t] = rstd;
  }
  return emb;
}

FlowFeature encode_flow(const EmbeddingSequence& emb, const ModelParams& p,
                        EncoderTrace* trace) {
  if (emb.rows.rows < 1) throw DomainError("encode_flow: empty embedding sequence");
  Mat x = emb.rows;
  if (trace) {
    trace->block_in.clear();
    trace->blocks.assign(p.enc.size(), MambaTrace{});
  }
  for (size_t b = 0; b < p.enc.size(); ++b) {
    if (trace) trace->block_in.push_back(x);
    x = mamba_block(x, p.enc[b], trace ? &trace->blocks[b] : nullptr);
  }
  FlowFeature flow;
  flow.f.resize(x.cols);
  for (int c = 0; c < x.cols; ++c) flow.f[c] = x(x.rows - 1, c);
  return flow;
}

Vec cosine_pos_encode(const BBox& box, int dim) {
  if (dim < 2 || dim % 2 != 0)
    throw ConfigError("cosine_pos_encode: dim must be even and >= 2");
  const double coords[4] = {box.cx, box.cy, box.w, box.h};
  Vec out(static_cast<size_t>(4) * dim);
  size_t k = 0;
  for (double c : coords) {
    for (int j = 0; j < dim / 2; ++j) {
      const double freq = std::pow(kPosTau, -2.0 * j / dim);
      out[k++] = std::sin(c * freq);
      out[k++] = std::cos(c * freq);
    }
  }
  return out;
}

std::pair<BBox, HiddenState> decoder_layer(const BBox& box_in, const FlowFeature& flow,
                                           const HiddenState& h,
                                           const DecoderLayerWeights& w, int pos_dim,
                                           double eps_box, DecoderLayerTrace* trace,
                                           ClampStats* clamps) {
  const int dp = w.flow.ssm.dim_d();
  Vec enc_pos = cosine_pos_encode(box_in, pos_dim);
  Vec u = affine(w.W_split, enc_pos, w.b_split);
  if (static_cast<int>(u.size()) != 2 * dp)
    throw DimensionError("decoder_layer: split width mismatch");

  Vec e_sig(u.begin(), u.begin() + dp);
  Vec r_gate(u.begin() + dp, u.end());

  auto [e_out, h_next] =
      flow_ssm(flow.f, e_sig, h, w.flow, trace ? &trace->flow : nullptr);

  Vec gated(dp);
  for (int d = 0; d < dp; ++d) gated[d] = e_out[d] * silu(r_gate[d]);

  Vec f1_pre = affine(w.W_f1, gated, w.b_f1);
  Vec f1(f1_pre.size());
  for (size_t i = 0; i < f1.size(); ++i) f1[i] = silu(f1_pre[i]);
  Vec delta = affine(w.W_f2, f1, w.b_f2);

  BBox out;
  out.cx = box_in.cx + delta[0];
  out.cy = box_in.cy + delta[1];
  out.w = box_in.w + delta[2];
  out.h = box_in.h + delta[3];
  bool cw = false, ch = false;
  if (out.w < eps_box) {
    out.w = eps_box;
    cw = true;
  }
  if (out.h < eps_box) {
    out.h = eps_box;
    ch = true;
  }
  if (clamps) clamps->count += (cw ? 1 : 0) + (ch ? 1 : 0);

  if (trace) {
    trace->box_in = box_in;
    trace->enc_pos = std::move(enc_pos);
    trace->split_pre = std::move(u);
    trace->state.e_signal = std::move(e_sig);
    trace->state.r_gate = std::move(r_gate);
    trace->h_in = h;
    trace->state.hidden = h_next;
    trace->e_out = std::move(e_out);
    trace->gated = std::move(gated);
    trace->f1_pre = std::move(f1_pre);
    trace->f1 = std::move(f1);
    for (int i = 0; i < 4; ++i) trace->delta[i] = delta[i];
    trace->clamped = {cw, ch};
    trace->box_out = out;
  }
  return {out, std::move(h_next)};
}

DecodeResult flow_decoder(const BBox& box_i, const FlowFeature& flow,
                          const ModelParams& p,
                          std::vector<DecoderLayerTrace>* traces, ClampStats* clamps) {
  if (p.dec.empty()) throw ConfigError("flow_decoder: no decoder layers");
  DecodeResult res;
  res.per_layer.reserve(p.dec.size());
  if (traces) traces->assign(p.dec.size(), DecoderLayerTrace{});

  HiddenState h(p.cfg.dec_width, p.cfg.n_state);
  BBox box = box_i;
  for (size_t k = 0; k < p.dec.size(); ++k) {
    auto [next_box, h_next] =
        decoder_layer(box, flow, h, p.dec[k], p.cfg.pos_dim, p.cfg.eps_box,
                      traces ? &(*traces)[k] : nullptr, clamps);
    box = next_box;
    h = std::move(h_next);
    res.per_layer.push_back(box);
  }
  res.box_final = box;
  return res;
}

BBox predict_next(const TrajectoryHistory& hist, const ModelParams& p,
                  ClampStats* clamps) {
  EmbeddingSequence emb = embed_history(hist, p);
  FlowFeature flow = encode_flow(emb, p);
  return flow_decoder(hist.last_box(), flow, p, nullptr, clamps).box_final;
}

std::vector<BBox> forward_model(const TrajectoryHistory& hist, const ModelParams& p,
                                ForwardTrace& trace, ClampStats* clamps) {
  EmbeddingSequence emb = embed_history(hist, p, &trace.embed);
  FlowFeature flow = encode_flow(emb, p, &trace.enc);
  trace.flow = flow.f;
  DecodeResult res = flow_decoder(hist.last_box(), flow, p, &trace.dec, clamps);
  trace.per_layer = res.per_layer;
  return res.per_layer;
}

}  // namespace trackssm
