#pragma once

#include <memory>
#include <utility>
#include <vector>

#include "trackssm/model.hpp"

namespace trackssm {

struct Detection {
  BBox box;
  double score = 0.0;
  int frame = 0;
};

// ---------------------------------------------------------------------------
// Constant-velocity Kalman baseline over (cx, cy, w, h) and their velocities.
// Noise scales follow the ByteTrack convention: process and measurement
// standard deviations proportional to the box height.
// ---------------------------------------------------------------------------

struct KalmanState {
  std::array<double, 8> mean{};  // cx, cy, w, h, vx, vy, vw, vh
  Mat cov;                       // 8 x 8, symmetric PSD
};

KalmanState kf_initiate(const BBox& box);
KalmanState kf_predict(const KalmanState& s);
KalmanState kf_update(const KalmanState& s, const Detection& det);

inline BBox kf_box(const KalmanState& s) {
  return {s.mean[0], s.mean[1], s.mean[2], s.mean[3]};
}

// Runs the filter over a box sequence (update per step, two-point velocity
// initialization on the second step) and returns the one-step-ahead box.
BBox kf_predict_from_boxes(const std::vector<BBox>& boxes);

// ---------------------------------------------------------------------------
// Geometry.
// ---------------------------------------------------------------------------

double iou(const BBox& a, const BBox& b);
Mat iou_matrix(const std::vector<BBox>& rows, const std::vector<BBox>& cols);

// ---------------------------------------------------------------------------
// Assignment. Minimum-cost matching where entries above max_cost are
// forbidden; rows/cols without an affordable partner end up unmatched.
// Deterministic: cost ties resolve toward lower (row, col) indices.
// ---------------------------------------------------------------------------

struct Assignment {
  std::vector<std::pair<int, int>> matches;  // (row, col), sorted by row
  std::vector<int> unmatched_rows;
  std::vector<int> unmatched_cols;
};

Assignment hungarian_assign(const Mat& cost, double max_cost);

// ---------------------------------------------------------------------------
// Tracks and association.
// ---------------------------------------------------------------------------

enum class TrackStatus { tentative, active, lost, removed };

struct TrackStep {
  BBox box;
  bool virtual_step = false;  // filled from a prediction while the track was lost
};

struct Track {
  int id = 0;
  TrackStatus status = TrackStatus::tentative;
  double score = 0.0;
  std::vector<TrackStep> hist;  // ring of the most recent steps, capacity = history length
  BBox last_prediction;
  int age_since_update = 0;
  int consecutive_hits = 0;
  int consecutive_misses = 0;
  // Kalman-mode state
  KalmanState kf;
  int kf_updates = 0;

  BBox current_box() const { return hist.back().box; }
};

struct AssociationConfig {
  double tau_high = 0.6;
  double tau_low = 0.1;
  double iou_gate_stage1 = 0.2;
  double iou_gate_stage2 = 0.5;
  int max_lost_age = 30;
  int tentative_promote_hits = 2;  // consecutive matches before activation
  int tentative_max_misses = 1;
  int history_capacity = 5;
};

// Per-track motion strategy. The tracker owns history upkeep; predictors own
// their own per-track state (the Kalman filter's mean and covariance).
class MotionPredictor {
 public:
  virtual ~MotionPredictor() = default;
  virtual void on_spawn(Track& t) = 0;
  // one-step-ahead box for association; called once per frame per live track
  virtual BBox predict(Track& t) = 0;
  virtual void on_match(Track& t, const BBox& observed) = 0;
};

class KalmanMotion : public MotionPredictor {
 public:
  void on_spawn(Track& t) override;
  BBox predict(Track& t) override;
  void on_match(Track& t, const BBox& observed) override;
};

class SsmMotion : public MotionPredictor {
 public:
  SsmMotion(const ModelParams& params, int history_n)
      : params_(&params), history_n_(history_n) {}
  void on_spawn(Track&) override {}
  BBox predict(Track& t) override;
  void on_match(Track&, const BBox&) override {}

 private:
  const ModelParams* params_;
  int history_n_;
};

struct FrameResult {
  std::vector<std::pair<int, int>> matched;  // (track id, detection index)
  std::vector<int> spawned;                  // new track ids
  std::vector<int> lost;                     // ids that became or stayed lost
  std::vector<int> removed;                  // ids retired this frame
};

struct TrackRecord {
  int frame;
  int id;
  BBox box;
};

struct TrackingResult {
  std::vector<TrackRecord> records;  // sorted by (frame, id)
};

// Online tracker: two-stage score-split association (high-score detections
// against all live tracks, low-score against remaining active ones), IoU
// cost, Hungarian matching.
class Tracker {
 public:
  Tracker(const AssociationConfig& cfg, MotionPredictor& motion)
      : cfg_(cfg), motion_(&motion) {}

  FrameResult associate(int frame, const std::vector<Detection>& detections);

  const std::vector<Track>& tracks() const { return tracks_; }
  // (frame, id, box) rows emitted for the last associated frame
  const std::vector<TrackRecord>& frame_records() const { return frame_records_; }

 private:
  AssociationConfig cfg_;
  MotionPredictor* motion_;
  std::vector<Track> tracks_;
  std::vector<TrackRecord> frame_records_;
  int next_id_ = 1;
  bool first_frame_done_ = false;
  int last_frame_ = 0;
};

// Folds the association over frames (ascending, or InputError) starting from
// an empty track set.
TrackingResult track_sequence(
    const std::vector<std::pair<int, std::vector<Detection>>>& frames,
    MotionPredictor& motion, const AssociationConfig& cfg);

}  // namespace trackssm
