#pragma once

#include <functional>
#include <optional>
#include <string>

#include "trackssm/data.hpp"

namespace trackssm {

struct EvalReport {
  std::optional<double> mean_pred_iou;  // present only when a predictor was given
  double idf1 = 0.0;
  double mota_lite = 0.0;
  long long id_switches = 0;
  long long fp = 0;
  long long fn = 0;
};

using BoxPredictor = std::function<BBox(const TrajectoryHistory&)>;

// Mean IoU between one-step-ahead predictions and the ground-truth next box.
// Throws DomainError on an empty segment set.
double mean_prediction_iou(const BoxPredictor& predictor,
                           const std::vector<TrainingSegment>& segments);

// Identity F1: optimal global matching of ground-truth ids to predicted ids
// over per-frame IoU-gated overlap counts.
double idf1_score(const GroundTruth& gt, const TrackingResult& result,
                  double iou_thresh = 0.5);

struct MotaResult {
  double mota = 0.0;
  long long id_switches = 0;
  long long fp = 0;
  long long fn = 0;
};

// Simplified CLEAR MOTA: per-frame Hungarian matching with an IoU gate;
// switches counted on consecutive-frame match-identity changes.
MotaResult mota_lite(const GroundTruth& gt, const TrackingResult& result,
                     double iou_thresh = 0.5);

EvalReport evaluate(const GroundTruth& gt, const TrackingResult& result,
                    double iou_thresh = 0.5);

std::string report_csv_header();
std::string report_csv_row(const EvalReport& r);
std::string report_table(const EvalReport& r);

}  // namespace trackssm
