#include "trackssm/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "trackssm/config.hpp"

namespace trackssm {

void SceneSpec::validate() const {
  if (n_objects < 1) throw ConfigError("scene: n_objects must be >= 1");
  if (n_frames < 2) throw ConfigError("scene: n_frames must be >= 2");
  if (img_w <= 0 || img_h <= 0) throw ConfigError("scene: image size must be positive");
  if (noise_pos < 0 || noise_size < 0) throw ConfigError("scene: noise std must be >= 0");
  if (dropout < 0 || dropout >= 1) throw ConfigError("scene: dropout must be in [0, 1)");
  if (dup_rate < 0 || dup_rate >= 1) throw ConfigError("scene: dup_rate must be in [0, 1)");
  if (speed_min < 0 || speed_max < speed_min) throw ConfigError("scene: bad speed range");
  if (size_min <= 0 || size_max < size_min) throw ConfigError("scene: bad size range");
  if (amp_min < 0 || amp_max < amp_min) throw ConfigError("scene: bad amplitude range");
  if (omega_min < 0 || omega_max < omega_min) throw ConfigError("scene: bad omega range");
  if (turn_prob < 0 || turn_prob >= 1) throw ConfigError("scene: bad turn_prob");
}

namespace {

// reflect a center coordinate into [lo, hi], flipping the velocity
void reflect(double& pos, double& vel, double lo, double hi) {
  if (hi <= lo) {  // object larger than the field; park it in the middle
    pos = 0.5 * (lo + hi);
    vel = 0.0;
    return;
  }
  while (pos < lo || pos > hi) {
    if (pos < lo) {
      pos = 2 * lo - pos;
      vel = -vel;
    } else {
      pos = 2 * hi - pos;
      vel = -vel;
    }
  }
}

struct ObjectInit {
  double w, h, x0, y0, vx, vy;
  double amp, omega, phase;  // sinusoidal
};

}  // namespace

Scene gen_scene(const SceneSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);

  std::vector<ObjectInit> objs(spec.n_objects);
  for (auto& o : objs) {
    o.w = rng.uniform(spec.size_min, spec.size_max);
    o.h = rng.uniform(spec.size_min, spec.size_max);
    const double speed = rng.uniform(spec.speed_min, spec.speed_max);
    const double angle = rng.uniform(0.0, 2.0 * M_PI);
    o.vx = speed * std::cos(angle);
    o.vy = speed * std::sin(angle);
    o.amp = rng.uniform(spec.amp_min, spec.amp_max);
    o.omega = rng.uniform(spec.omega_min, spec.omega_max);
    o.phase = rng.uniform(0.0, 2.0 * M_PI);

    const double mx = 0.5 * o.w, my = 0.5 * o.h;
    o.x0 = rng.uniform(mx, std::max(mx, spec.img_w - mx));
    if (spec.kind == SceneKind::sinusoidal) {
      const double lo = my + o.amp, hi = spec.img_h - my - o.amp;
      o.y0 = hi > lo ? rng.uniform(lo, hi) : 0.5 * spec.img_h;
    } else {
      o.y0 = rng.uniform(my, std::max(my, spec.img_h - my));
    }
  }

  Scene scene;
  scene.gt.n_frames = spec.n_frames;
  scene.gt.tracks.resize(spec.n_objects);

  for (int i = 0; i < spec.n_objects; ++i) {
    ObjectInit o = objs[i];
    GtTrack& track = scene.gt.tracks[i];
    track.id = i + 1;
    track.first_frame = 1;
    track.boxes.reserve(spec.n_frames);

    double x = o.x0, y = o.y0, vx = o.vx, vy = o.vy;
    const double mx = 0.5 * o.w, my = 0.5 * o.h;
    for (int f = 0; f < spec.n_frames; ++f) {
      double cx = x, cy = y;
      switch (spec.kind) {
        case SceneKind::linear:
          cx = x;
          cy = y;
          x += vx;
          y += vy;
          reflect(x, vx, mx, spec.img_w - mx);
          reflect(y, vy, my, spec.img_h - my);
          break;
        case SceneKind::sinusoidal:
          cx = x;
          cy = o.y0 + o.amp * std::sin(o.omega * f + o.phase);
          x += vx;
          reflect(x, vx, mx, spec.img_w - mx);
          break;
        case SceneKind::bounce:
          cx = x;
          cy = y;
          if (rng.uniform() < spec.turn_prob) {
            const double speed = std::hypot(vx, vy);
            const double angle = rng.uniform(0.0, 2.0 * M_PI);
            vx = speed * std::cos(angle);
            vy = speed * std::sin(angle);
          }
          x += vx;
          y += vy;
          reflect(x, vx, mx, spec.img_w - mx);
          reflect(y, vy, my, spec.img_h - my);
          break;
      }
      track.boxes.push_back({cx, cy, o.w, o.h});
    }
  }

  scene.det_frames.assign(spec.n_frames, {});
  for (int f = 0; f < spec.n_frames; ++f) {
    for (int i = 0; i < spec.n_objects; ++i) {
      const BBox& gt = scene.gt.tracks[i].boxes[f];
      if (rng.uniform() >= spec.dropout) {
        BBox det = gt;
        det.cx += spec.noise_pos * rng.normal();
        det.cy += spec.noise_pos * rng.normal();
        det.w = std::max(2.0, det.w + spec.noise_size * rng.normal());
        det.h = std::max(2.0, det.h + spec.noise_size * rng.normal());
        scene.det_frames[f].push_back({det, rng.uniform(0.5, 1.0), f + 1});
      }
      if (rng.uniform() < spec.dup_rate) {
        // low-score duplicate landing in the second association band
        BBox dup = gt;
        dup.cx += 3.0 * spec.noise_pos * rng.normal();
        dup.cy += 3.0 * spec.noise_pos * rng.normal();
        dup.w = std::max(2.0, dup.w + 2.0 * spec.noise_size * rng.normal());
        dup.h = std::max(2.0, dup.h + 2.0 * spec.noise_size * rng.normal());
        scene.det_frames[f].push_back({dup, rng.uniform(0.1, 0.6), f + 1});
      }
    }
  }
  return scene;
}

SceneSpec parse_scene_spec(const std::string& path) {
  SceneSpec spec;
  bool seen_kind = false;
  for (const auto& kv : parse_kv_file(path)) {
    const std::string& k = kv.key;
    auto num = [&kv]() {
      try {
        return std::stod(kv.value);
      } catch (...) {
        throw ConfigError("scene spec line " + std::to_string(kv.line) +
                          ": bad numeric value for " + kv.key);
      }
    };
    if (k == "kind") {
      if (kv.value == "linear")
        spec.kind = SceneKind::linear;
      else if (kv.value == "sinusoidal")
        spec.kind = SceneKind::sinusoidal;
      else if (kv.value == "bounce")
        spec.kind = SceneKind::bounce;
      else
        throw ConfigError("scene spec line " + std::to_string(kv.line) +
                          ": unknown kind '" + kv.value + "'");
      seen_kind = true;
    } else if (k == "n_objects")
      spec.n_objects = static_cast<int>(num());
    else if (k == "n_frames")
      spec.n_frames = static_cast<int>(num());
    else if (k == "img_w")
      spec.img_w = num();
    else if (k == "img_h")
      spec.img_h = num();
    else if (k == "noise_pos")
      spec.noise_pos = num();
    else if (k == "noise_size")
      spec.noise_size = num();
    else if (k == "dropout")
      spec.dropout = num();
    else if (k == "dup_rate")
      spec.dup_rate = num();
    else if (k == "seed")
      spec.seed = static_cast<uint64_t>(num());
    else if (k == "speed_min")
      spec.speed_min = num();
    else if (k == "speed_max")
      spec.speed_max = num();
    else if (k == "size_min")
      spec.size_min = num();
    else if (k == "size_max")
      spec.size_max = num();
    else if (k == "amp_min")
      spec.amp_min = num();
    else if (k == "amp_max")
      spec.amp_max = num();
    else if (k == "omega_min")
      spec.omega_min = num();
    else if (k == "omega_max")
      spec.omega_max = num();
    else if (k == "turn_prob")
      spec.turn_prob = num();
    else
      throw ConfigError("scene spec line " + std::to_string(kv.line) +
                        ": unknown key '" + k + "'");
  }
  if (!seen_kind) throw ConfigError("scene spec: missing required key 'kind'");
  spec.validate();
  return spec;
}

// ---------------------------------------------------------------------------
// MOT text format.
// ---------------------------------------------------------------------------

ParsedMot parse_mot(const std::string& path, double scale_x, double scale_y) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);

  ParsedMot out;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    // tolerate trailing carriage returns and blank lines
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty()) continue;

    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() < 7)
      throw ParseError(path + ": line " + std::to_string(line_no) + ": expected >= 7 fields, got " +
                       std::to_string(fields.size()));

    long frame_raw;
    long id_raw;
    double x, y, w, h, conf;
    try {
      frame_raw = std::stol(fields[0]);
      id_raw = std::stol(fields[1]);
      x = std::stod(fields[2]);
      y = std::stod(fields[3]);
      w = std::stod(fields[4]);
      h = std::stod(fields[5]);
      conf = std::stod(fields[6]);
    } catch (...) {
      throw ParseError(path + ": line " + std::to_string(line_no) + ": malformed numeric field");
    }
    if (frame_raw < 1)
      throw ParseError(path + ": line " + std::to_string(line_no) + ": frame must be >= 1");
    if (w <= 0.0 || h <= 0.0) {
      out.diag.rejected_rows += 1;
      continue;
    }

    const int frame = static_cast<int>(frame_raw);
    out.max_frame = std::max(out.max_frame, frame);
    BBox box{(x + 0.5 * w) * scale_x, (y + 0.5 * h) * scale_y, w * scale_x,
             h * scale_y};
    if (id_raw < 0) {
      if (static_cast<int>(out.det_frames.size()) < frame) out.det_frames.resize(frame);
      out.det_frames[frame - 1].push_back({box, conf, frame});
    } else {
      out.tracks.records.push_back({frame, static_cast<int>(id_raw), box});
    }
  }
  if (static_cast<int>(out.det_frames.size()) < out.max_frame)
    out.det_frames.resize(out.max_frame);
  std::sort(out.tracks.records.begin(), out.tracks.records.end(),
            [](const TrackRecord& a, const TrackRecord& b) {
              return a.frame != b.frame ? a.frame < b.frame : a.id < b.id;
            });
  return out;
}

GroundTruth tracks_to_ground_truth(const TrackingResult& result) {
  std::map<int, std::vector<std::pair<int, BBox>>> by_id;
  int n_frames = 0;
  for (const auto& r : result.records) {
    by_id[r.id].emplace_back(r.frame, r.box);
    n_frames = std::max(n_frames, r.frame);
  }
  GroundTruth gt;
  gt.n_frames = n_frames;
  for (auto& [id, rows] : by_id) {
    std::sort(rows.begin(), rows.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    GtTrack t;
    t.id = id;
    t.first_frame = rows.front().first;
    for (size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].first != t.first_frame + static_cast<int>(i))
        throw DomainError("ground truth track " + std::to_string(id) +
                          " has a non-contiguous frame range at frame " +
                          std::to_string(rows[i].first));
      t.boxes.push_back(rows[i].second);
    }
    gt.tracks.push_back(std::move(t));
  }
  return gt;
}

namespace {

void write_lines_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp);
    f << content;
    if (!f) throw IoError("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

void append_mot_line(std::string& out, int frame, int id, const BBox& box, double conf,
                     double sx, double sy) {
  const double w = box.w * sx, h = box.h * sy;
  const double x = box.cx * sx - 0.5 * w, y = box.cy * sy - 0.5 * h;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%d,%d,%.4f,%.4f,%.4f,%.4f,%.4f,-1,-1,-1\n", frame,
                id, x, y, w, h, conf);
  out += buf;
}

}  // namespace

void write_mot(const TrackingResult& result, const std::string& path, double scale_x,
               double scale_y) {
  std::vector<TrackRecord> recs = result.records;
  std::sort(recs.begin(), recs.end(), [](const TrackRecord& a, const TrackRecord& b) {
    return a.frame != b.frame ? a.frame < b.frame : a.id < b.id;
  });
  std::string out;
  for (const auto& r : recs)
    append_mot_line(out, r.frame, r.id, r.box, 1.0, scale_x, scale_y);
  write_lines_atomic(path, out);
}

void write_mot_detections(const std::vector<std::vector<Detection>>& det_frames,
                          const std::string& path, double scale_x, double scale_y) {
  std::string out;
  for (size_t f = 0; f < det_frames.size(); ++f)
    for (const auto& d : det_frames[f])
      append_mot_line(out, static_cast<int>(f) + 1, -1, d.box, d.score, scale_x,
                      scale_y);
  write_lines_atomic(path, out);
}

GroundTruth scale_ground_truth(const GroundTruth& gt, double sx, double sy) {
  GroundTruth out = gt;
  for (auto& t : out.tracks)
    for (auto& b : t.boxes) {
      b.cx *= sx;
      b.w *= sx;
      b.cy *= sy;
      b.h *= sy;
    }
  return out;
}

std::vector<std::vector<Detection>> scale_detections(
    const std::vector<std::vector<Detection>>& frames, double sx, double sy) {
  auto out = frames;
  for (auto& frame : out)
    for (auto& d : frame) {
      d.box.cx *= sx;
      d.box.w *= sx;
      d.box.cy *= sy;
      d.box.h *= sy;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Training segments.
// ---------------------------------------------------------------------------

std::vector<TrainingSegment> build_segments(const GroundTruth& gt, int n) {
  if (n < 1) throw DomainError("build_segments: n must be >= 1");
  std::vector<TrainingSegment> out;
  std::vector<BBox> window;
  for (const auto& track : gt.tracks) {
    const int len = static_cast<int>(track.boxes.size());
    for (int i = 0; i + 1 < len; ++i) {
      window.clear();
      const int lo = std::max(0, i - n + 1);
      for (int pad = 0; pad < n - (i - lo + 1); ++pad) window.push_back(track.boxes[lo]);
      for (int j = lo; j <= i; ++j) window.push_back(track.boxes[j]);
      out.push_back({make_history(window), track.boxes[i + 1]});
    }
  }
  return out;
}

}  // namespace trackssm
