#pragma once

#include <string>
#include <vector>

#include "trackssm/tracker.hpp"
#include "trackssm/train.hpp"

namespace trackssm {

// ---------------------------------------------------------------------------
// Synthetic scenes. Three motion regimes: linear (constant velocity with
// reflective walls), sinusoidal (linear drift plus per-object vertical
// oscillation), bounce (piecewise linear with random elastic direction
// changes). Detections are ground truth plus Gaussian noise, with dropout and
// a small rate of low-score duplicates landing in the second association
// band.
// ---------------------------------------------------------------------------

enum class SceneKind { linear, sinusoidal, bounce };

struct SceneSpec {
  SceneKind kind = SceneKind::linear;
  int n_objects = 10;
  int n_frames = 100;
  double img_w = 1000.0;
  double img_h = 1000.0;
  double noise_pos = 1.0;   // detection center noise std, pixels
  double noise_size = 0.5;  // detection extent noise std, pixels
  double dropout = 0.05;    // probability a ground-truth box has no detection
  double dup_rate = 0.05;   // probability of an extra low-score duplicate
  uint64_t seed = 1;
  double speed_min = 4.0, speed_max = 12.0;  // pixels per frame
  double size_min = 30.0, size_max = 80.0;
  double amp_min = 20.0, amp_max = 60.0;     // sinusoidal amplitude
  double omega_min = 0.25, omega_max = 0.6;  // sinusoidal angular frequency
  double turn_prob = 0.05;                   // bounce: per-frame redirection

  void validate() const;
};

struct GtTrack {
  int id = 0;
  int first_frame = 1;  // 1-based
  std::vector<BBox> boxes;
};

struct GroundTruth {
  std::vector<GtTrack> tracks;
  int n_frames = 0;
};

struct Scene {
  GroundTruth gt;
  std::vector<std::vector<Detection>> det_frames;  // index 0 is frame 1
};

Scene gen_scene(const SceneSpec& spec);

SceneSpec parse_scene_spec(const std::string& path);

// ---------------------------------------------------------------------------
// MOTChallenge text format: `frame,id,x,y,w,h,conf,...` with 1-based frames
// and top-left pixel coordinates. Rows with id = -1 are detections. Rows with
// non-positive extents are rejected and counted.
// ---------------------------------------------------------------------------

struct MotDiagnostics {
  int rejected_rows = 0;
};

struct ParsedMot {
  std::vector<std::vector<Detection>> det_frames;  // id < 0 rows, index 0 = frame 1
  TrackingResult tracks;                           // id >= 0 rows
  MotDiagnostics diag;
  int max_frame = 0;
};

// scale = 1/img size when normalizing, 1 otherwise.
ParsedMot parse_mot(const std::string& path, double scale_x = 1.0,
                    double scale_y = 1.0);

// Groups per-id records into tracks; frame ranges must be contiguous.
GroundTruth tracks_to_ground_truth(const TrackingResult& result);

// Writes sorted `frame,id,x,y,w,h,conf,-1,-1,-1` rows (conf fixed at 1);
// coordinates are multiplied back by the given scales.
void write_mot(const TrackingResult& result, const std::string& path,
               double scale_x = 1.0, double scale_y = 1.0);
void write_mot_detections(const std::vector<std::vector<Detection>>& det_frames,
                          const std::string& path, double scale_x = 1.0,
                          double scale_y = 1.0);

GroundTruth scale_ground_truth(const GroundTruth& gt, double sx, double sy);
std::vector<std::vector<Detection>> scale_detections(
    const std::vector<std::vector<Detection>>& frames, double sx, double sy);

// ---------------------------------------------------------------------------
// Training segments: for every frame with a successor, the window of up to n
// boxes ending there (left-padded by repeating the earliest box) plus the
// next box as target.
// ---------------------------------------------------------------------------

std::vector<TrainingSegment> build_segments(const GroundTruth& gt, int n);

}  // namespace trackssm
