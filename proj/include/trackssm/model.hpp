#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "trackssm/common.hpp"
#include "trackssm/ssm.hpp"

namespace trackssm {

// Center-format box.
struct BBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  bool valid() const {
    return std::isfinite(cx) && std::isfinite(cy) && std::isfinite(w) &&
           std::isfinite(h) && w > 0.0 && h > 0.0;
  }
};

struct Corners {
  double x1, y1, x2, y2;
};

inline Corners to_corners(const BBox& b) {
  return {b.cx - 0.5 * b.w, b.cy - 0.5 * b.h, b.cx + 0.5 * b.w, b.cy + 0.5 * b.h};
}

// Per-track input sequence: each step is (cx, cy, w, h, dcx, dcy, dw, dh).
// The delta of the earliest step is zero; later deltas are finite differences
// of the positions.
struct TrajectoryHistory {
  std::vector<std::array<double, 8>> steps;

  int length() const { return static_cast<int>(steps.size()); }
  BBox last_box() const {
    const auto& s = steps.back();
    return {s[0], s[1], s[2], s[3]};
  }
};

// Builds a history from a box sequence, computing the delta features.
// Throws DomainError on empty input or non-positive extents.
TrajectoryHistory make_history(const std::vector<BBox>& boxes);

struct EmbeddingSequence {
  Mat rows;  // n x m
};

struct FlowFeature {
  Vec f;  // m
};

// ---------------------------------------------------------------------------
// Model configuration and parameters.
// ---------------------------------------------------------------------------

struct ModelConfig {
  int m = 128;           // embedding / flow width
  int n_state = 16;      // SSM state size per channel
  int dec_width = 128;   // decoder split width D'
  int n_dec_layers = 6;
  int pos_dim = 32;      // cosine encoding size per box coordinate
  int n_enc_blocks = 2;
  int expand = 2;        // encoder inner expansion
  int conv_kernel = 4;
  double eps_box = 1e-4;  // minimum extent after the per-layer box update

  int d_inner() const { return expand * m; }
  int dt_rank() const { return std::max(1, (m + 15) / 16); }

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct EmbedWeights {
  Mat W;     // m x 8
  Vec b;     // m
  Vec ln_g;  // m
  Vec ln_b;  // m
};

struct DecoderLayerWeights {
  Mat W_split;  // 2*D' x 4*pos_dim
  Vec b_split;
  FlowSSMWeights flow;  // ssm: D' x N, projections from m
  Mat W_f1;  // 2*D' x D'
  Vec b_f1;
  Mat W_f2;  // 4 x 2*D'
  Vec b_f2;
};

struct ModelParams {
  ModelConfig cfg;
  EmbedWeights embed;
  std::vector<MambaBlockWeights> enc;
  std::vector<DecoderLayerWeights> dec;
};

ModelParams init_model_params(const ModelConfig& cfg, uint64_t seed);
// Same shapes, all values zero (gradient buffers).
ModelParams zeros_like(const ModelParams& p);
void zero_params(ModelParams& p);

struct TensorRef {
  std::string name;
  double* data;
  size_t len;
  std::vector<int> dims;
};

// Stable enumeration of every learnable tensor; the order defines the
// optimizer-state and checkpoint layout.
std::vector<TensorRef> collect_tensors(ModelParams& p);
size_t param_count(const ModelParams& p);

// ---------------------------------------------------------------------------
// Forward traces (filled only when a trace pointer is supplied).
// ---------------------------------------------------------------------------

struct EmbedTrace {
  Mat lin;   // n x m, pre-activation
  Mat act;   // n x m, silu output (layer-norm input)
  Mat norm;  // n x m, normalized rows before gamma/beta
  Vec rstd;  // n
};

struct EncoderTrace {
  std::vector<Mat> block_in;  // input sequence of each block
  std::vector<MambaTrace> blocks;
};

// The split features and threaded hidden state of one decoder layer.
struct DecoderLayerState {
  Vec e_signal;
  Vec r_gate;
  HiddenState hidden;
};

struct DecoderLayerTrace {
  BBox box_in;
  Vec enc_pos;    // cosine encoding of box_in
  Vec split_pre;  // 2*D'
  DecoderLayerState state;  // e_signal, r_gate, hidden after the step
  FlowSSMTrace flow;
  HiddenState h_in;
  Vec e_out;      // flow-SSM output
  Vec gated;      // e_out * silu(r_gate)
  Vec f1_pre;     // FFN hidden pre-activation
  Vec f1;         // FFN hidden post-activation
  std::array<double, 4> delta;
  std::array<bool, 2> clamped;  // w, h clamp hits
  BBox box_out;
};

struct ForwardTrace {
  EmbedTrace embed;
  EncoderTrace enc;
  Vec flow;
  std::vector<DecoderLayerTrace> dec;
  std::vector<BBox> per_layer;
};

struct ClampStats {
  long long count = 0;
};

// ---------------------------------------------------------------------------
// Operations.
// ---------------------------------------------------------------------------

// Per-step embedding stem: linear 8 -> m, silu, layer norm. Row t depends
// only on step t.
EmbeddingSequence embed_history(const TrajectoryHistory& hist, const ModelParams& p,
                                EmbedTrace* trace = nullptr);

// Runs the encoder blocks and returns the last-step representation.
FlowFeature encode_flow(const EmbeddingSequence& emb, const ModelParams& p,
                        EncoderTrace* trace = nullptr);

// Interleaved (sin, cos) features per coordinate, dim entries each, in the
// order cx, cy, w, h; tau = 10000. dim must be even.
Vec cosine_pos_encode(const BBox& box, int dim);

// One decoder layer: encode box, split, flow-SSM on the signal half, silu
// gate with the residual half, FFN to a 4-vector delta, residual box update
// with the extents clamped to eps_box.
std::pair<BBox, HiddenState> decoder_layer(const BBox& box_in, const FlowFeature& flow,
                                           const HiddenState& h,
                                           const DecoderLayerWeights& w, int pos_dim,
                                           double eps_box,
                                           DecoderLayerTrace* trace = nullptr,
                                           ClampStats* clamps = nullptr);

struct DecodeResult {
  BBox box_final;
  std::vector<BBox> per_layer;
};

// Cascades the decoder layers from a zero hidden state; every layer reads the
// same flow feature, and the hidden state threads through the cascade.
DecodeResult flow_decoder(const BBox& box_i, const FlowFeature& flow,
                          const ModelParams& p,
                          std::vector<DecoderLayerTrace>* traces = nullptr,
                          ClampStats* clamps = nullptr);

// Full next-box prediction from a history.
BBox predict_next(const TrajectoryHistory& hist, const ModelParams& p,
                  ClampStats* clamps = nullptr);

// Trace-collecting variant used by training; returns the per-layer boxes.
std::vector<BBox> forward_model(const TrajectoryHistory& hist, const ModelParams& p,
                                ForwardTrace& trace, ClampStats* clamps = nullptr);

}  // namespace trackssm
