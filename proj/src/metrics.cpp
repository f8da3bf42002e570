#include "trackssm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "trackssm/model.hpp"
#include "trackssm/tracker.hpp"

namespace trackssm {

double mean_prediction_iou(const BoxPredictor& predictor,
                           const std::vector<TrainingSegment>& segments) {
  if (segments.empty())
    throw DomainError("mean_prediction_iou: empty segment set (mean undefined)");
  double acc = 0.0;
  for (const auto& seg : segments) acc += iou(predictor(seg.history), seg.target);
  return acc / segments.size();
}

namespace {

// per-frame (id -> box) lookups for a set of track records
using FrameMap = std::map<int, std::vector<std::pair<int, BBox>>>;

FrameMap frames_of_gt(const GroundTruth& gt) {
  FrameMap out;
  for (const auto& t : gt.tracks)
    for (size_t i = 0; i < t.boxes.size(); ++i)
      out[t.first_frame + static_cast<int>(i)].emplace_back(t.id, t.boxes[i]);
  return out;
}

FrameMap frames_of_result(const TrackingResult& r) {
  FrameMap out;
  for (const auto& rec : r.records) out[rec.frame].emplace_back(rec.id, rec.box);
  return out;
}

std::vector<int> sorted_ids(const FrameMap& frames) {
  std::vector<int> ids;
  for (const auto& [frame, rows] : frames)
    for (const auto& [id, box] : rows) ids.push_back(id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

}  // namespace

double idf1_score(const GroundTruth& gt, const TrackingResult& result,
                  double iou_thresh) {
  const FrameMap gt_frames = frames_of_gt(gt);
  const FrameMap pr_frames = frames_of_result(result);

  long long total_gt = 0, total_pred = 0;
  for (const auto& [f, rows] : gt_frames) total_gt += static_cast<long long>(rows.size());
  for (const auto& [f, rows] : pr_frames)
    total_pred += static_cast<long long>(rows.size());
  if (total_gt == 0 && total_pred == 0) return 1.0;
  if (total_gt == 0 || total_pred == 0) return 0.0;

  const std::vector<int> gt_ids = sorted_ids(gt_frames);
  const std::vector<int> pr_ids = sorted_ids(pr_frames);
  std::map<int, int> gt_index, pr_index;
  for (size_t i = 0; i < gt_ids.size(); ++i) gt_index[gt_ids[i]] = static_cast<int>(i);
  for (size_t i = 0; i < pr_ids.size(); ++i) pr_index[pr_ids[i]] = static_cast<int>(i);

  // overlap[g][p] = frames where gt id g and pred id p coexist with IoU >= gate
  Mat overlap(static_cast<int>(gt_ids.size()), static_cast<int>(pr_ids.size()), 0.0);
  for (const auto& [frame, gt_rows] : gt_frames) {
    const auto it = pr_frames.find(frame);
    if (it == pr_frames.end()) continue;
    for (const auto& [gid, gbox] : gt_rows)
      for (const auto& [pid, pbox] : it->second)
        if (iou(gbox, pbox) >= iou_thresh)
          overlap(gt_index[gid], pr_index[pid]) += 1.0;
  }

  Mat cost(overlap.rows, overlap.cols);
  for (size_t i = 0; i < overlap.size(); ++i) cost.a[i] = -overlap.a[i];
  const Assignment a =
      hungarian_assign(cost, std::numeric_limits<double>::infinity());

  double idtp = 0.0;
  for (const auto& [g, p] : a.matches) idtp += overlap(g, p);
  const double idfp = static_cast<double>(total_pred) - idtp;
  const double idfn = static_cast<double>(total_gt) - idtp;
  return 2.0 * idtp / (2.0 * idtp + idfp + idfn);
}

MotaResult mota_lite(const GroundTruth& gt, const TrackingResult& result,
                     double iou_thresh) {
  const FrameMap gt_frames = frames_of_gt(gt);
  const FrameMap pr_frames = frames_of_result(result);

  long long total_gt = 0;
  for (const auto& [f, rows] : gt_frames) total_gt += static_cast<long long>(rows.size());
  if (total_gt == 0) throw DomainError("mota_lite: empty ground truth");

  MotaResult res;
  // last matched (frame, pred id) per gt id, for consecutive-frame switches
  std::map<int, std::pair<int, int>> last_match;

  int max_frame = 0;
  if (!gt_frames.empty()) max_frame = gt_frames.rbegin()->first;
  if (!pr_frames.empty()) max_frame = std::max(max_frame, pr_frames.rbegin()->first);

  for (int frame = 1; frame <= max_frame; ++frame) {
    const auto git = gt_frames.find(frame);
    const auto pit = pr_frames.find(frame);
    const size_t n_gt = git == gt_frames.end() ? 0 : git->second.size();
    const size_t n_pr = pit == pr_frames.end() ? 0 : pit->second.size();
    if (n_gt == 0 && n_pr == 0) continue;

    Mat cost(static_cast<int>(n_gt), static_cast<int>(n_pr));
    for (size_t g = 0; g < n_gt; ++g)
      for (size_t p = 0; p < n_pr; ++p)
        cost(static_cast<int>(g), static_cast<int>(p)) =
            1.0 - iou(git->second[g].second, pit->second[p].second);
    const Assignment a = hungarian_assign(cost, 1.0 - iou_thresh);

    res.fn += static_cast<long long>(n_gt) - static_cast<long long>(a.matches.size());
    res.fp += static_cast<long long>(n_pr) - static_cast<long long>(a.matches.size());
    for (const auto& [g, p] : a.matches) {
      const int gid = git->second[g].first;
      const int pid = pit->second[p].first;
      const auto it = last_match.find(gid);
      if (it != last_match.end() && it->second.first == frame - 1 &&
          it->second.second != pid)
        res.id_switches += 1;
      last_match[gid] = {frame, pid};
    }
  }
  res.mota = 1.0 - static_cast<double>(res.fp + res.fn + res.id_switches) /
                       static_cast<double>(total_gt);
  return res;
}

EvalReport evaluate(const GroundTruth& gt, const TrackingResult& result,
                    double iou_thresh) {
  EvalReport r;
  r.idf1 = idf1_score(gt, result, iou_thresh);
  const MotaResult m = mota_lite(gt, result, iou_thresh);
  r.mota_lite = m.mota;
  r.id_switches = m.id_switches;
  r.fp = m.fp;
  r.fn = m.fn;
  return r;
}

std::string report_csv_header() {
  return "mean_pred_iou,idf1,mota_lite,id_switches,fp,fn";
}

std::string report_csv_row(const EvalReport& r) {
  std::ostringstream out;
  out.precision(6);
  out << std::fixed;
  if (r.mean_pred_iou) out << *r.mean_pred_iou;
  out << "," << r.idf1 << "," << r.mota_lite << "," << r.id_switches << "," << r.fp
      << "," << r.fn;
  return out.str();
}

std::string report_table(const EvalReport& r) {
  std::ostringstream out;
  out.precision(4);
  out << std::fixed;
  out << "metric          value\n";
  out << "--------------  ----------\n";
  if (r.mean_pred_iou) out << "mean_pred_iou   " << *r.mean_pred_iou << "\n";
  out << "idf1            " << r.idf1 << "\n";
  out << "mota_lite       " << r.mota_lite << "\n";
  out << "id_switches     " << r.id_switches << "\n";
  out << "fp              " << r.fp << "\n";
  out << "fn              " << r.fn << "\n";
  return out.str();
}

}  // namespace trackssm
