#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "trackssm/data.hpp"

using namespace trackssm;
namespace fs = std::filesystem;

namespace {

std::string temp_file(const std::string& name) {
  return (fs::temp_directory_path() / name).string();
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::trunc);
  f << content;
}

}  // namespace

TEST_CASE("linear scenes move with constant velocity away from walls") {
  SceneSpec spec;
  spec.kind = SceneKind::linear;
  spec.n_objects = 4;
  spec.n_frames = 20;
  spec.img_w = 100000.0;  // no reflections at this scale
  spec.img_h = 100000.0;
  spec.noise_pos = 0.0;
  spec.noise_size = 0.0;
  spec.dropout = 0.0;
  spec.dup_rate = 0.0;
  spec.speed_min = 3.0;
  spec.speed_max = 3.0;
  spec.seed = 2;
  const Scene s = gen_scene(spec);
  for (const auto& t : s.gt.tracks) {
    for (size_t f = 1; f < t.boxes.size(); ++f) {
      const double dx = t.boxes[f].cx - t.boxes[f - 1].cx;
      const double dy = t.boxes[f].cy - t.boxes[f - 1].cy;
      CHECK(std::hypot(dx, dy) == doctest::Approx(3.0).epsilon(1e-9));
      if (f >= 2) {
        CHECK(dx == doctest::Approx(t.boxes[f - 1].cx - t.boxes[f - 2].cx).epsilon(1e-9));
      }
    }
    // sizes are constant along the track
    for (const auto& b : t.boxes) {
      CHECK(b.w == t.boxes[0].w);
      CHECK(b.h == t.boxes[0].h);
    }
  }
}

TEST_CASE("zero-amplitude sinusoidal degenerates to linear") {
  SceneSpec spec;
  spec.kind = SceneKind::sinusoidal;
  spec.n_objects = 3;
  spec.n_frames = 30;
  spec.img_w = 100000.0;
  spec.img_h = 100000.0;
  spec.amp_min = 0.0;
  spec.amp_max = 0.0;
  spec.noise_pos = 0.0;
  spec.dropout = 0.0;
  spec.dup_rate = 0.0;
  spec.seed = 5;
  const Scene s = gen_scene(spec);
  for (const auto& t : s.gt.tracks) {
    for (size_t f = 1; f < t.boxes.size(); ++f) {
      CHECK(t.boxes[f].cy == doctest::Approx(t.boxes[0].cy).epsilon(1e-12));
      if (f >= 2)
        CHECK(t.boxes[f].cx - t.boxes[f - 1].cx ==
              doctest::Approx(t.boxes[f - 1].cx - t.boxes[f - 2].cx).epsilon(1e-9));
    }
  }
}

TEST_CASE("same seed gives bitwise-identical scenes") {
  SceneSpec spec;
  spec.kind = SceneKind::bounce;
  spec.n_objects = 6;
  spec.n_frames = 40;
  spec.seed = 99;
  const Scene a = gen_scene(spec);
  const Scene b = gen_scene(spec);
  REQUIRE(a.gt.tracks.size() == b.gt.tracks.size());
  for (size_t i = 0; i < a.gt.tracks.size(); ++i)
    for (size_t f = 0; f < a.gt.tracks[i].boxes.size(); ++f) {
      CHECK(a.gt.tracks[i].boxes[f].cx == b.gt.tracks[i].boxes[f].cx);
      CHECK(a.gt.tracks[i].boxes[f].cy == b.gt.tracks[i].boxes[f].cy);
    }
  REQUIRE(a.det_frames.size() == b.det_frames.size());
  for (size_t f = 0; f < a.det_frames.size(); ++f) {
    REQUIRE(a.det_frames[f].size() == b.det_frames[f].size());
    for (size_t d = 0; d < a.det_frames[f].size(); ++d) {
      CHECK(a.det_frames[f][d].box.cx == b.det_frames[f][d].box.cx);
      CHECK(a.det_frames[f][d].score == b.det_frames[f][d].score);
    }
  }
}

TEST_CASE("scene statistics track the spec over long runs") {
  SceneSpec spec;
  spec.kind = SceneKind::linear;
  spec.n_objects = 200;
  spec.n_frames = 1000;
  spec.img_w = 100000.0;
  spec.img_h = 100000.0;
  spec.noise_pos = 0.0;
  spec.dropout = 0.0;
  spec.dup_rate = 0.0;
  spec.speed_min = 4.0;
  spec.speed_max = 12.0;
  spec.seed = 31;
  const Scene s = gen_scene(spec);
  double mean_speed = 0.0;
  long count = 0;
  for (const auto& t : s.gt.tracks)
    for (size_t f = 1; f < t.boxes.size(); ++f) {
      mean_speed += std::hypot(t.boxes[f].cx - t.boxes[f - 1].cx,
                               t.boxes[f].cy - t.boxes[f - 1].cy);
      ++count;
    }
  mean_speed /= count;
  const double expected = 0.5 * (4.0 + 12.0);
  CHECK(std::fabs(mean_speed - expected) / expected < 0.05);

  // sinusoidal amplitudes within 5% of the configured band
  SceneSpec sine = spec;
  sine.kind = SceneKind::sinusoidal;
  sine.n_objects = 200;
  sine.amp_min = 30.0;
  sine.amp_max = 50.0;
  sine.omega_min = 0.3;
  sine.omega_max = 0.5;
  const Scene s2 = gen_scene(sine);
  double mean_amp = 0.0;
  for (const auto& t : s2.gt.tracks) {
    double lo = 1e18, hi = -1e18;
    for (const auto& b : t.boxes) {
      lo = std::min(lo, b.cy);
      hi = std::max(hi, b.cy);
    }
    mean_amp += 0.5 * (hi - lo);
  }
  mean_amp /= s2.gt.tracks.size();
  const double expected_amp = 0.5 * (30.0 + 50.0);
  CHECK(std::fabs(mean_amp - expected_amp) / expected_amp < 0.05);
}

TEST_CASE("detection scores land in the configured bands") {
  SceneSpec spec;
  spec.n_objects = 20;
  spec.n_frames = 100;
  spec.dropout = 0.1;
  spec.dup_rate = 0.1;
  spec.seed = 8;
  const Scene s = gen_scene(spec);
  int primaries = 0, dups = 0;
  for (const auto& frame : s.det_frames)
    for (const auto& d : frame) {
      CHECK(d.score >= 0.1);
      CHECK(d.score <= 1.0);
      if (d.score >= 0.5)
        ++primaries;
      else
        ++dups;
    }
  CHECK(primaries > 0);
  CHECK(dups > 0);  // the low-score band is exercised
}

TEST_CASE("parse_mot decodes the documented line format") {
  const std::string path = temp_file("trackssm_mot1.txt");
  write_text(path, "1,2,100,200,50,80,0.9,-1,-1,-1\n");
  const ParsedMot parsed = parse_mot(path);
  REQUIRE(parsed.tracks.records.size() == 1);
  const TrackRecord& r = parsed.tracks.records[0];
  CHECK(r.frame == 1);
  CHECK(r.id == 2);
  CHECK(r.box.cx == doctest::Approx(125.0));
  CHECK(r.box.cy == doctest::Approx(240.0));
  CHECK(r.box.w == 50.0);
  CHECK(r.box.h == 80.0);
  fs::remove(path);
}

TEST_CASE("parse_mot handles empty files, bad rows, and detections") {
  const std::string path = temp_file("trackssm_mot2.txt");
  write_text(path, "");
  const ParsedMot empty = parse_mot(path);
  CHECK(empty.det_frames.empty());
  CHECK(empty.tracks.records.empty());

  write_text(path, "1,2,3,4,5\n");
  CHECK_THROWS_AS(parse_mot(path), ParseError);
  try {
    parse_mot(path);
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 1") != std::string::npos);
  }

  // negative extent rows are rejected and counted, not fatal
  write_text(path, "1,-1,10,10,-5,8,0.9\n2,-1,10,10,5,8,0.9\n");
  const ParsedMot diag = parse_mot(path);
  CHECK(diag.diag.rejected_rows == 1);
  REQUIRE(diag.det_frames.size() == 2);
  CHECK(diag.det_frames[0].empty());
  CHECK(diag.det_frames[1].size() == 1);
  fs::remove(path);
}

TEST_CASE("parse_mot never crashes on arbitrary bytes") {
  const std::string path = temp_file("trackssm_mot_fuzz.txt");
  Rng rng(6);
  for (int trial = 0; trial < 60; ++trial) {
    std::string junk;
    const int len = rng.uniform_int(0, 120);
    for (int i = 0; i < len; ++i)
      junk += static_cast<char>(rng.uniform_int(32, 126));
    junk += "\n1,1,10,10,5,5,1.0\n";
    write_text(path, junk);
    try {
      parse_mot(path);
    } catch (const ParseError&) {
      // structured failure is acceptable; crashes are not
    }
  }
  fs::remove(path);
}

TEST_CASE("write_mot round trips within hundredth-pixel tolerance") {
  const std::string path = temp_file("trackssm_mot3.txt");
  TrackingResult r;
  r.records.push_back({3, 7, {125.1234, 240.5678, 50.25, 80.125}});
  r.records.push_back({1, 2, {10.5, 20.5, 5.5, 8.25}});
  write_mot(r, path);

  const ParsedMot back = parse_mot(path);
  REQUIRE(back.tracks.records.size() == 2);
  // output is sorted by (frame, id)
  CHECK(back.tracks.records[0].frame == 1);
  CHECK(back.tracks.records[1].frame == 3);
  for (const auto& rec : back.tracks.records) {
    const TrackRecord& orig = rec.frame == 1 ? r.records[1] : r.records[0];
    CHECK(std::fabs(rec.box.cx - orig.box.cx) <= 1e-2);
    CHECK(std::fabs(rec.box.cy - orig.box.cy) <= 1e-2);
    CHECK(std::fabs(rec.box.w - orig.box.w) <= 1e-2);
    CHECK(std::fabs(rec.box.h - orig.box.h) <= 1e-2);
  }

  write_mot(TrackingResult{}, path);
  std::ifstream f(path);
  std::string contents((std::istreambuf_iterator<char>(f)),
                       std::istreambuf_iterator<char>());
  CHECK(contents.empty());
  fs::remove(path);
}

TEST_CASE("tracks_to_ground_truth rejects frame gaps") {
  TrackingResult r;
  r.records.push_back({1, 1, {10, 10, 5, 5}});
  r.records.push_back({3, 1, {12, 10, 5, 5}});
  CHECK_THROWS_AS(tracks_to_ground_truth(r), DomainError);
}

TEST_CASE("build_segments windows, padding, and deltas") {
  GroundTruth gt;
  GtTrack t;
  t.id = 1;
  t.first_frame = 1;
  for (int f = 0; f < 6; ++f)
    t.boxes.push_back({10.0 + 2.0 * f, 5.0, 4.0, 4.0});
  gt.tracks.push_back(t);
  gt.n_frames = 6;

  const auto segs = build_segments(gt, 5);
  REQUIRE(segs.size() == 5);  // targets at frames 2..6
  for (const auto& s : segs) CHECK(s.history.length() == 5);

  // the first segment is fully padded: four repeats of the earliest box
  const auto& first = segs[0];
  for (int i = 0; i < 4; ++i) CHECK(first.history.steps[i][0] == 10.0);
  CHECK(first.target.cx == 12.0);

  // the last segment holds the real 5-step window with target at frame 6
  const auto& last = segs[4];
  CHECK(last.history.steps[0][0] == 10.0);
  CHECK(last.history.steps[4][0] == 18.0);
  CHECK(last.target.cx == 20.0);

  // deltas equal finite differences of the (padded) positions
  for (const auto& s : segs) {
    CHECK(s.history.steps[0][4] == 0.0);
    for (int i = 1; i < s.history.length(); ++i)
      CHECK(s.history.steps[i][4] ==
            doctest::Approx(s.history.steps[i][0] - s.history.steps[i - 1][0]));
  }

  // shorter histories share the targets
  const auto segs3 = build_segments(gt, 3);
  REQUIRE(segs3.size() == 5);
  for (size_t i = 0; i < segs3.size(); ++i) {
    CHECK(segs3[i].target.cx == segs[i].target.cx);
    CHECK(segs3[i].history.length() == 3);
  }

  // single-frame tracks contribute nothing
  GroundTruth lone;
  lone.tracks.push_back({2, 1, {{1, 1, 1, 1}}});
  CHECK(build_segments(lone, 5).empty());
}

TEST_CASE("scene spec files parse with strict keys") {
  const std::string path = temp_file("trackssm_scene.txt");
  write_text(path,
             "# comment\nkind = sinusoidal\nn_objects = 7\nn_frames = 50\n"
             "amp_min = 10\namp_max = 20\nseed = 4\n");
  const SceneSpec spec = parse_scene_spec(path);
  CHECK(spec.kind == SceneKind::sinusoidal);
  CHECK(spec.n_objects == 7);
  CHECK(spec.amp_max == 20.0);

  write_text(path, "kind = linear\nbogus_key = 3\n");
  CHECK_THROWS_AS(parse_scene_spec(path), ConfigError);
  write_text(path, "n_objects = 3\n");
  CHECK_THROWS_AS(parse_scene_spec(path), ConfigError);  // kind is required
  fs::remove(path);
}
