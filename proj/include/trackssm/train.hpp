#pragma once

#include <array>
#include <string>
#include <vector>

#include "trackssm/model.hpp"

namespace trackssm {

struct TrainingSegment {
  TrajectoryHistory history;
  BBox target;
};

// ---------------------------------------------------------------------------
// Step-by-step linear supervision: per-layer pseudo-labels interpolated
// between the current box and the ground-truth next box.
// ---------------------------------------------------------------------------

struct S2LTargets {
  std::vector<BBox> targets;  // length n_layers; last equals the endpoint
};

// targets[k-1] = box_i + (k / n_layers) * (box_next - box_i), k = 1..n_layers.
S2LTargets s2l_targets(const BBox& box_i, const BBox& box_next, int n_layers);

// Per-layer targets for a segment: interpolated when s2l is on, the final
// target repeated otherwise.
S2LTargets layer_targets(const TrainingSegment& seg, int n_layers, bool s2l_on);

// ---------------------------------------------------------------------------
// Losses.
// ---------------------------------------------------------------------------

// Mean over the 4 coordinates of 0.5 d^2 (|d| < 1) / |d| - 0.5 (otherwise).
double smooth_l1_loss(const BBox& pred, const BBox& target);
// d(smooth_l1)/d(pred) as (cx, cy, w, h).
std::array<double, 4> smooth_l1_grad(const BBox& pred, const BBox& target);

// 1 - GIoU, in [0, 2).
double giou_loss(const BBox& pred, const BBox& target);
std::array<double, 4> giou_loss_grad(const BBox& pred, const BBox& target);

struct LossWeights {
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  bool use_giou = false;
};

// Mean over layers of lambda1 * smooth_l1 + (use_giou ? lambda2 * giou : 0)
// against each layer's pseudo-label.
double total_loss(const std::vector<BBox>& per_layer, const S2LTargets& s2l,
                  const LossWeights& w);

// ---------------------------------------------------------------------------
// Gradients.
// ---------------------------------------------------------------------------

struct BackwardOptions {
  // When false (default) the box fed into each decoder layer is treated as a
  // constant: gradients reach earlier layers only through the hidden state
  // and the shared flow feature. When true they also flow through the box
  // residual chain and its positional re-encoding.
  bool end_to_end = false;
};

// Reverse-mode gradients of the batch-mean loss; grads is zeroed first.
// Returns the batch-mean loss. Throws TrainingError (naming the segment
// index) if any segment loss is non-finite.
double backward(const std::vector<TrainingSegment>& batch, const ModelParams& params,
                const LossWeights& lw, bool s2l_on, const BackwardOptions& opts,
                ModelParams& grads);

// Forward-only loss of one segment (finite-difference oracle support).
double segment_loss(const TrainingSegment& seg, const ModelParams& params,
                    const LossWeights& lw, bool s2l_on);

// Loss with every decoder layer's input box pinned to a given constant; the
// default backward differentiates exactly this function.
double segment_loss_frozen_boxes(const TrainingSegment& seg, const ModelParams& params,
                                 const LossWeights& lw, bool s2l_on,
                                 const std::vector<BBox>& frozen_inputs);

// ---------------------------------------------------------------------------
// Optimizer.
// ---------------------------------------------------------------------------

struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long long t = 0;
  Vec m;  // flat, concatenated over collect_tensors order
  Vec v;
};

AdamState make_adam(const ModelParams& params, double lr);
void adam_step(ModelParams& params, const ModelParams& grads, AdamState& opt);

// ---------------------------------------------------------------------------
// Training loop.
// ---------------------------------------------------------------------------

struct TrainConfig {
  ModelConfig model;
  int history = 5;
  int batch_size = 256;
  int epochs = 30;
  double lr = 1e-4;
  LossWeights loss;
  bool s2l = true;
  bool end_to_end_grad = false;
  uint64_t seed = 1;
  int threads = 1;
  bool normalize = true;
};

struct LossLogRow {
  int epoch;
  int step;
  double loss;
};

struct TrainResult {
  ModelParams params;
  AdamState opt;
  std::vector<LossLogRow> log;
  std::vector<double> epoch_mean;
};

TrainResult train(const std::vector<TrainingSegment>& dataset, const TrainConfig& cfg);

void write_loss_csv(const std::vector<LossLogRow>& log, const std::string& path);

// ---------------------------------------------------------------------------
// Checkpoint I/O. Binary format: magic "TRACKSSM", u32 version, named config
// fields, then each tensor as (name, rank, dims, little-endian f64 data).
// Save -> load round trips bit-exactly.
// ---------------------------------------------------------------------------

struct Checkpoint {
  ModelParams params;
  AdamState opt;
  int history = 5;
  bool normalize = true;
};

void save_checkpoint(const std::string& path, const ModelParams& params,
                     const AdamState& opt, int history, bool normalize);

// Rejects version or config mismatches (IncompatError naming the field);
// truncated or corrupt files raise ParseError with the byte offset.
Checkpoint load_checkpoint(const std::string& path, const ModelConfig& expect_cfg,
                           int expect_history, bool expect_normalize);

}  // namespace trackssm
