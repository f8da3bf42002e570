#include "trackssm/tracker.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace trackssm {

// ---------------------------------------------------------------------------
// Kalman filter.
// ---------------------------------------------------------------------------

namespace {

constexpr double kStdPos = 1.0 / 20.0;   // per ByteTrack: std proportional to height
constexpr double kStdVel = 1.0 / 160.0;
constexpr double kMinExtent = 1e-4;

BBox clamp_extents(BBox b) {
  b.w = std::max(b.w, kMinExtent);
  b.h = std::max(b.h, kMinExtent);
  return b;
}

// Cholesky solve of S x = b for symmetric positive definite 4x4 S.
struct Chol4 {
  double l[4][4] = {};

  explicit Chol4(const double s[4][4]) {
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j <= i; ++j) {
        double acc = s[i][j];
        for (int k = 0; k < j; ++k) acc -= l[i][k] * l[j][k];
        if (i == j) {
          if (acc <= 0.0)
            throw DomainError("kf_update: innovation covariance not positive definite");
          l[i][i] = std::sqrt(acc);
        } else {
          l[i][j] = acc / l[j][j];
        }
      }
    }
  }

  void solve(const double b[4], double x[4]) const {
    double y[4];
    for (int i = 0; i < 4; ++i) {
      double acc = b[i];
      for (int k = 0; k < i; ++k) acc -= l[i][k] * y[k];
      y[i] = acc / l[i][i];
    }
    for (int i = 3; i >= 0; --i) {
      double acc = y[i];
      for (int k = i + 1; k < 4; ++k) acc -= l[k][i] * x[k];
      x[i] = acc / l[i][i];
    }
  }
};

}  // namespace

KalmanState kf_initiate(const BBox& box) {
  KalmanState s;
  s.mean = {box.cx, box.cy, box.w, box.h, 0.0, 0.0, 0.0, 0.0};
  s.cov = Mat(8, 8, 0.0);
  const double h = box.h;
  const double stds[8] = {2 * kStdPos * h, 2 * kStdPos * h, 2 * kStdPos * h,
                          2 * kStdPos * h, 10 * kStdVel * h, 10 * kStdVel * h,
                          10 * kStdVel * h, 10 * kStdVel * h};
  for (int i = 0; i < 8; ++i) s.cov(i, i) = stds[i] * stds[i];
  return s;
}

KalmanState kf_predict(const KalmanState& s) {
  KalmanState out;
  // x' = F x with F = [[I, I], [0, I]]
  for (int i = 0; i < 4; ++i) out.mean[i] = s.mean[i] + s.mean[i + 4];
  for (int i = 4; i < 8; ++i) out.mean[i] = s.mean[i];

  // P' = F P F^T + Q
  Mat fp(8, 8);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j)
      fp(i, j) = s.cov(i, j) + (i < 4 ? s.cov(i + 4, j) : 0.0);
  out.cov = Mat(8, 8);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j)
      out.cov(i, j) = fp(i, j) + (j < 4 ? fp(i, j + 4) : 0.0);

  const double h = s.mean[3];
  const double q[8] = {kStdPos * h, kStdPos * h, kStdPos * h, kStdPos * h,
                       kStdVel * h, kStdVel * h, kStdVel * h, kStdVel * h};
  for (int i = 0; i < 8; ++i) out.cov(i, i) += q[i] * q[i];
  return out;
}

KalmanState kf_update(const KalmanState& s, const Detection& det) {
  if (!det.box.valid()) throw DomainError("kf_update: invalid detection box");
  const double h = s.mean[3];
  const double r = kStdPos * h;

  // S = H P H^T + R over the 4 observed coordinates, with jitter
  double sm[4][4];
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) sm[i][j] = s.cov(i, j);
  for (int i = 0; i < 4; ++i) sm[i][i] += r * r + 1e-9;

  const Chol4 chol(sm);

  // K = P H^T S^-1, built column by column: K[:,c] solves S^T k = (P H^T)[:,c]
  // row-wise; since S is symmetric we solve S x = e for each row of P H^T.
  double gain[8][4];
  for (int i = 0; i < 8; ++i) {
    double b[4], x[4];
    for (int j = 0; j < 4; ++j) b[j] = s.cov(i, j);
    chol.solve(b, x);
    for (int j = 0; j < 4; ++j) gain[i][j] = x[j];
  }

  const double z[4] = {det.box.cx, det.box.cy, det.box.w, det.box.h};
  double innov[4];
  for (int j = 0; j < 4; ++j) innov[j] = z[j] - s.mean[j];

  KalmanState out;
  for (int i = 0; i < 8; ++i) {
    double acc = s.mean[i];
    for (int j = 0; j < 4; ++j) acc += gain[i][j] * innov[j];
    out.mean[i] = acc;
  }

  // P' = (I - K H) P, then symmetrize
  out.cov = Mat(8, 8);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      double acc = s.cov(i, j);
      for (int k = 0; k < 4; ++k) acc -= gain[i][k] * s.cov(k, j);
      out.cov(i, j) = acc;
    }
  for (int i = 0; i < 8; ++i)
    for (int j = i + 1; j < 8; ++j) {
      const double v = 0.5 * (out.cov(i, j) + out.cov(j, i));
      out.cov(i, j) = v;
      out.cov(j, i) = v;
    }
  return out;
}

BBox kf_predict_from_boxes(const std::vector<BBox>& boxes) {
  if (boxes.empty()) throw DomainError("kf_predict_from_boxes: empty sequence");
  KalmanState s = kf_initiate(boxes[0]);
  for (size_t i = 1; i < boxes.size(); ++i) {
    s = kf_predict(s);
    if (i == 1) {
      // two-point initialization: the first pair fixes the velocity
      const BBox prev = boxes[0];
      s = kf_initiate(boxes[1]);
      s.mean[4] = boxes[1].cx - prev.cx;
      s.mean[5] = boxes[1].cy - prev.cy;
      s.mean[6] = boxes[1].w - prev.w;
      s.mean[7] = boxes[1].h - prev.h;
    } else {
      s = kf_update(s, Detection{boxes[i], 1.0, 0});
    }
  }
  return clamp_extents(kf_box(kf_predict(s)));
}

// ---------------------------------------------------------------------------
// Geometry.
// ---------------------------------------------------------------------------

double iou(const BBox& a, const BBox& b) {
  const Corners ca = to_corners(a), cb = to_corners(b);
  const double iw = std::min(ca.x2, cb.x2) - std::max(ca.x1, cb.x1);
  const double ih = std::min(ca.y2, cb.y2) - std::max(ca.y1, cb.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

Mat iou_matrix(const std::vector<BBox>& rows, const std::vector<BBox>& cols) {
  Mat m(static_cast<int>(rows.size()), static_cast<int>(cols.size()));
  for (size_t r = 0; r < rows.size(); ++r)
    for (size_t c = 0; c < cols.size(); ++c)
      m(static_cast<int>(r), static_cast<int>(c)) = iou(rows[r], cols[c]);
  return m;
}

// ---------------------------------------------------------------------------
// Assignment. The R x C problem is embedded in an (R+C)-sized square where each
// row and column owns a rejection slot; rejection costs more than any
// affordable pairing, so cardinality is maximized first and total cost
// minimized second. Gated entries cost more than two rejections and are never
// chosen.
// ---------------------------------------------------------------------------

Assignment hungarian_assign(const Mat& cost, double max_cost) {
  const int R = cost.rows, C = cost.cols;
  Assignment out;
  if (R == 0 || C == 0) {
    for (int r = 0; r < R; ++r) out.unmatched_rows.push_back(r);
    for (int c = 0; c < C; ++c) out.unmatched_cols.push_back(c);
    return out;
  }

  double max_valid = 0.0;
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) {
      if (!std::isfinite(cost(r, c)))
        throw DomainError("hungarian_assign: non-finite cost");
      if (cost(r, c) <= max_cost) max_valid = std::max(max_valid, cost(r, c));
    }
  const double k_pad = 0.5 * max_valid + 1.0;
  const double k_forbid = 4.0 * k_pad + 1.0;

  const int n = R + C;
  Mat full(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      double v;
      if (r < R && c < C)
        v = cost(r, c) <= max_cost ? cost(r, c) : k_forbid;
      else if (r < R)
        v = (c - C == r) ? k_pad : k_forbid;
      else if (c < C)
        v = (r - R == c) ? k_pad : k_forbid;
      else
        v = 0.0;
      full(r, c) = v;
    }

  // shortest augmenting path assignment (Jonker-Volgenant style), 1-based
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, std::numeric_limits<double>::infinity());
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = 0;
      double delta = std::numeric_limits<double>::infinity();
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = full(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }

  std::vector<int> row_to_col(R, -1);
  for (int j = 1; j <= n; ++j) {
    const int r = p[j] - 1;
    if (r >= 0 && r < R && j - 1 < C) row_to_col[r] = j - 1;
  }
  std::vector<char> col_matched(C, 0);
  for (int r = 0; r < R; ++r) {
    const int c = row_to_col[r];
    if (c >= 0 && cost(r, c) <= max_cost) {
      out.matches.emplace_back(r, c);
      col_matched[c] = 1;
    } else {
      out.unmatched_rows.push_back(r);
    }
  }
  for (int c = 0; c < C; ++c)
    if (!col_matched[c]) out.unmatched_cols.push_back(c);
  return out;
}

// ---------------------------------------------------------------------------
// Motion predictors.
// ---------------------------------------------------------------------------

void KalmanMotion::on_spawn(Track& t) {
  t.kf = kf_initiate(t.current_box());
  t.kf_updates = 1;
}

BBox KalmanMotion::predict(Track& t) {
  t.kf = kf_predict(t.kf);
  const BBox pred = clamp_extents(kf_box(t.kf));
  if (!pred.valid()) return t.current_box();
  return pred;
}

void KalmanMotion::on_match(Track& t, const BBox& observed) {
  if (t.kf_updates == 1) {
    // second observation: two-point velocity initialization
    const int elapsed = t.age_since_update + 1;
    const std::array<double, 4> prev = {t.kf.mean[0], t.kf.mean[1], t.kf.mean[2],
                                        t.kf.mean[3]};
    t.kf = kf_initiate(observed);
    t.kf.mean[4] = (observed.cx - prev[0]) / elapsed;
    t.kf.mean[5] = (observed.cy - prev[1]) / elapsed;
    t.kf.mean[6] = (observed.w - prev[2]) / elapsed;
    t.kf.mean[7] = (observed.h - prev[3]) / elapsed;
  } else {
    t.kf = kf_update(t.kf, Detection{observed, 1.0, 0});
  }
  t.kf_updates += 1;
}

BBox SsmMotion::predict(Track& t) {
  std::vector<BBox> boxes;
  const int have = static_cast<int>(t.hist.size());
  const int take = std::min(have, history_n_);
  boxes.reserve(history_n_);
  // left-pad with the earliest kept step, matching training-time windows
  for (int i = 0; i < history_n_ - take; ++i) boxes.push_back(t.hist[have - take].box);
  for (int i = have - take; i < have; ++i) boxes.push_back(t.hist[i].box);
  const BBox pred = predict_next(make_history(boxes), *params_);
  // a degenerate model output must not poison the track history
  if (!pred.valid()) return t.current_box();
  return pred;
}

// ---------------------------------------------------------------------------
// Two-stage association.
// ---------------------------------------------------------------------------

namespace {

BBox lerp_box(const BBox& a, const BBox& b, double t) {
  return {a.cx + t * (b.cx - a.cx), a.cy + t * (b.cy - a.cy),
          a.w + t * (b.w - a.w), a.h + t * (b.h - a.h)};
}

}  // namespace

FrameResult Tracker::associate(int frame, const std::vector<Detection>& detections) {
  if (first_frame_done_ && frame <= last_frame_)
    throw InputError("associate: frames must be strictly ascending (got " +
                     std::to_string(frame) + " after " + std::to_string(last_frame_) +
                     ")");
  for (const auto& d : detections)
    if (d.frame != frame)
      throw InputError("associate: detection frame " + std::to_string(d.frame) +
                       " does not match " + std::to_string(frame));

  FrameResult result;
  frame_records_.clear();

  // 1) motion prediction for every live track
  for (auto& t : tracks_) t.last_prediction = motion_->predict(t);

  std::vector<int> dets_high, dets_low;
  for (size_t i = 0; i < detections.size(); ++i) {
    const double s = detections[i].score;
    if (s >= cfg_.tau_high)
      dets_high.push_back(static_cast<int>(i));
    else if (s >= cfg_.tau_low)
      dets_low.push_back(static_cast<int>(i));
    // below tau_low: discarded
  }

  std::vector<char> track_matched(tracks_.size(), 0);
  std::vector<char> det_used(detections.size(), 0);

  auto push_step = [this](Track& t, const BBox& box, bool virt) {
    t.hist.push_back({box, virt});
    if (static_cast<int>(t.hist.size()) > cfg_.history_capacity)
      t.hist.erase(t.hist.begin());
  };

  auto apply_match = [&](size_t ti, int di) {
    Track& t = tracks_[ti];
    const Detection& d = detections[di];
    // interpolate over any virtual (coasted) steps toward the observation;
    // if every kept step is virtual, the oldest one serves as the anchor
    int g = 0;
    while (g < static_cast<int>(t.hist.size()) &&
           t.hist[t.hist.size() - 1 - g].virtual_step)
      ++g;
    g = std::min(g, static_cast<int>(t.hist.size()) - 1);
    if (g > 0) {
      const BBox anchor = t.hist[t.hist.size() - 1 - g].box;
      for (int j = 1; j <= g; ++j) {
        auto& step = t.hist[t.hist.size() - 1 - g + j];
        step.box = lerp_box(anchor, d.box, static_cast<double>(j) / (g + 1));
        step.virtual_step = false;
      }
    }
    push_step(t, d.box, false);
    motion_->on_match(t, d.box);  // consumes age_since_update for elapsed time
    t.consecutive_hits += 1;
    t.consecutive_misses = 0;
    t.age_since_update = 0;
    t.score = d.score;
    if (t.status == TrackStatus::tentative) {
      if (t.consecutive_hits >= cfg_.tentative_promote_hits)
        t.status = TrackStatus::active;
    } else {
      t.status = TrackStatus::active;  // active stays active, lost re-activates
    }
    track_matched[ti] = 1;
    det_used[di] = 1;
    result.matched.emplace_back(t.id, di);
  };

  // 2) stage one: high-score detections against every live track
  {
    std::vector<BBox> preds, boxes;
    preds.reserve(tracks_.size());
    for (const auto& t : tracks_) preds.push_back(t.last_prediction);
    boxes.reserve(dets_high.size());
    for (int di : dets_high) boxes.push_back(detections[di].box);
    Mat cost(static_cast<int>(preds.size()), static_cast<int>(boxes.size()));
    for (int r = 0; r < cost.rows; ++r)
      for (int c = 0; c < cost.cols; ++c) cost(r, c) = 1.0 - iou(preds[r], boxes[c]);
    const Assignment a = hungarian_assign(cost, 1.0 - cfg_.iou_gate_stage1);
    for (const auto& [r, c] : a.matches) apply_match(r, dets_high[c]);
  }

  // 3) stage two: low-score detections against the remaining active tracks
  {
    std::vector<size_t> rows;
    for (size_t ti = 0; ti < tracks_.size(); ++ti)
      if (!track_matched[ti] && tracks_[ti].status == TrackStatus::active)
        rows.push_back(ti);
    Mat cost(static_cast<int>(rows.size()), static_cast<int>(dets_low.size()));
    for (size_t r = 0; r < rows.size(); ++r)
      for (size_t c = 0; c < dets_low.size(); ++c)
        cost(static_cast<int>(r), static_cast<int>(c)) =
            1.0 - iou(tracks_[rows[r]].last_prediction, detections[dets_low[c]].box);
    const Assignment a = hungarian_assign(cost, 1.0 - cfg_.iou_gate_stage2);
    for (const auto& [r, c] : a.matches) apply_match(rows[r], dets_low[c]);
  }

  // 4) unmatched high-score detections spawn tracks
  for (int di : dets_high) {
    if (det_used[di]) continue;
    Track t;
    t.id = next_id_++;
    t.status = first_frame_done_ ? TrackStatus::tentative : TrackStatus::active;
    t.score = detections[di].score;
    t.consecutive_hits = 1;
    t.hist.push_back({detections[di].box, false});
    t.last_prediction = detections[di].box;
    motion_->on_spawn(t);
    result.spawned.push_back(t.id);
    tracks_.push_back(std::move(t));
    track_matched.push_back(1);
  }

  // 5) unmatched tracks coast or retire
  for (size_t ti = 0; ti < tracks_.size(); ++ti) {
    if (track_matched[ti]) continue;
    Track& t = tracks_[ti];
    t.consecutive_hits = 0;
    t.consecutive_misses += 1;
    t.age_since_update += 1;
    switch (t.status) {
      case TrackStatus::tentative:
        if (t.consecutive_misses > cfg_.tentative_max_misses)
          t.status = TrackStatus::removed;
        break;
      case TrackStatus::active:
        t.status = TrackStatus::lost;
        break;
      case TrackStatus::lost:
        if (t.age_since_update > cfg_.max_lost_age) t.status = TrackStatus::removed;
        break;
      case TrackStatus::removed:
        break;
    }
    if (t.status == TrackStatus::lost) {
      result.lost.push_back(t.id);
      push_step(t, t.last_prediction, true);
    } else if (t.status == TrackStatus::tentative) {
      push_step(t, t.last_prediction, true);
    } else if (t.status == TrackStatus::removed) {
      result.removed.push_back(t.id);
    }
  }

  // 6) emit records for confirmed tracks updated this frame
  for (const auto& t : tracks_)
    if (t.status == TrackStatus::active && t.age_since_update == 0)
      frame_records_.push_back({frame, t.id, t.current_box()});
  std::sort(frame_records_.begin(), frame_records_.end(),
            [](const TrackRecord& a, const TrackRecord& b) { return a.id < b.id; });

  tracks_.erase(std::remove_if(tracks_.begin(), tracks_.end(),
                               [](const Track& t) {
                                 return t.status == TrackStatus::removed;
                               }),
                tracks_.end());

  first_frame_done_ = true;
  last_frame_ = frame;
  return result;
}

TrackingResult track_sequence(
    const std::vector<std::pair<int, std::vector<Detection>>>& frames,
    MotionPredictor& motion, const AssociationConfig& cfg) {
  TrackingResult out;
  Tracker tracker(cfg, motion);
  int prev_frame = std::numeric_limits<int>::min();
  for (const auto& [frame, dets] : frames) {
    if (frame <= prev_frame)
      throw InputError("track_sequence: frames out of order at " +
                       std::to_string(frame));
    prev_frame = frame;
    tracker.associate(frame, dets);
    const auto& recs = tracker.frame_records();
    out.records.insert(out.records.end(), recs.begin(), recs.end());
  }
  std::sort(out.records.begin(), out.records.end(),
            [](const TrackRecord& a, const TrackRecord& b) {
              return a.frame != b.frame ? a.frame < b.frame : a.id < b.id;
            });
  return out;
}

}  // namespace trackssm
