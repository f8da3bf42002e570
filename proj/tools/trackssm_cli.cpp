// Command-line front end: synth | train | track | eval | ablate over plain
// MOT-format text files.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "trackssm/config.hpp"
#include "trackssm/data.hpp"
#include "trackssm/metrics.hpp"

namespace ts = trackssm;
namespace fs = std::filesystem;

namespace {

struct CommonFlags {
  std::string config_path;
  bool no_s2l = false;
  bool no_normalize = false;
  bool end_to_end = false;
  int layers = 0;   // 0 = keep config value
  int history = 0;  // 0 = keep config value
  long long seed = -1;
  int threads = 0;
};

ts::RunConfig load_config(const CommonFlags& f) {
  ts::RunConfig cfg;
  if (!f.config_path.empty()) cfg = ts::parse_run_config(f.config_path);
  if (f.no_s2l) cfg.s2l = false;
  if (f.no_normalize) cfg.normalize = false;
  if (f.end_to_end) cfg.end_to_end_grad = true;
  if (f.layers > 0) cfg.model.n_dec_layers = f.layers;
  if (f.history > 0) cfg.history = f.history;
  if (f.seed >= 0) cfg.seed = static_cast<uint64_t>(f.seed);
  if (f.threads > 0) cfg.threads = f.threads;
  cfg.assoc.history_capacity = cfg.history;
  cfg.validate();
  return cfg;
}

double scale_x(const ts::RunConfig& c) { return c.normalize ? 1.0 / c.img_w : 1.0; }
double scale_y(const ts::RunConfig& c) { return c.normalize ? 1.0 / c.img_h : 1.0; }

ts::GroundTruth load_gt(const std::string& path, const ts::RunConfig& cfg) {
  const ts::ParsedMot parsed = ts::parse_mot(path, scale_x(cfg), scale_y(cfg));
  if (parsed.diag.rejected_rows > 0)
    std::cerr << "note: " << parsed.diag.rejected_rows
              << " rows with non-positive extents rejected in " << path << "\n";
  return ts::tracks_to_ground_truth(parsed.tracks);
}

std::vector<std::pair<int, std::vector<ts::Detection>>> detection_frames(
    const ts::ParsedMot& parsed) {
  std::vector<std::pair<int, std::vector<ts::Detection>>> frames;
  frames.reserve(parsed.det_frames.size());
  for (size_t f = 0; f < parsed.det_frames.size(); ++f)
    frames.emplace_back(static_cast<int>(f) + 1, parsed.det_frames[f]);
  return frames;
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir,
              long long seed_override) {
  ts::SceneSpec spec = ts::parse_scene_spec(spec_path);
  if (seed_override >= 0) spec.seed = static_cast<uint64_t>(seed_override);
  const ts::Scene scene = ts::gen_scene(spec);

  fs::create_directories(out_dir);
  ts::TrackingResult gt_records;
  for (const auto& t : scene.gt.tracks)
    for (size_t i = 0; i < t.boxes.size(); ++i)
      gt_records.records.push_back(
          {t.first_frame + static_cast<int>(i), t.id, t.boxes[i]});
  ts::write_mot(gt_records, out_dir + "/gt.txt");
  ts::write_mot_detections(scene.det_frames, out_dir + "/det.txt");
  std::cout << "wrote " << out_dir << "/gt.txt and " << out_dir << "/det.txt ("
            << spec.n_objects << " objects, " << spec.n_frames << " frames)\n";
  return 0;
}

int cmd_train(const CommonFlags& flags, const std::string& gt_path,
              const std::string& out_path, const std::string& loss_csv) {
  const ts::RunConfig cfg = load_config(flags);
  const ts::GroundTruth gt = load_gt(gt_path, cfg);
  const auto segments = ts::build_segments(gt, cfg.history);
  if (segments.empty()) throw ts::DomainError("train: ground truth yields no segments");

  const ts::TrainResult result = ts::train(segments, cfg.train_config());
  ts::save_checkpoint(out_path, result.params, result.opt, cfg.history, cfg.normalize);
  if (!loss_csv.empty()) ts::write_loss_csv(result.log, loss_csv);

  std::printf("trained %zu segments, %d epochs: epoch-1 loss %.6g, final loss %.6g\n",
              segments.size(), cfg.epochs, result.epoch_mean.front(),
              result.epoch_mean.back());
  std::printf("checkpoint: %s (%zu parameters)\n", out_path.c_str(),
              ts::param_count(result.params));
  return 0;
}

int cmd_track(const CommonFlags& flags, const std::string& motion_kind,
              const std::string& ckpt_path, const std::string& dets_path,
              const std::string& out_path) {
  const ts::RunConfig cfg = load_config(flags);
  const ts::ParsedMot parsed = ts::parse_mot(dets_path, scale_x(cfg), scale_y(cfg));
  const auto frames = detection_frames(parsed);

  ts::TrackingResult result;
  if (motion_kind == "kf") {
    ts::KalmanMotion motion;
    result = ts::track_sequence(frames, motion, cfg.assoc);
  } else if (motion_kind == "ssm") {
    if (ckpt_path.empty())
      throw ts::ConfigError("track: --motion ssm requires --ckpt");
    const ts::Checkpoint ckpt =
        ts::load_checkpoint(ckpt_path, cfg.model, cfg.history, cfg.normalize);
    ts::SsmMotion motion(ckpt.params, cfg.history);
    result = ts::track_sequence(frames, motion, cfg.assoc);
  } else {
    throw ts::ConfigError("track: --motion must be ssm or kf");
  }

  ts::write_mot(result, out_path, 1.0 / scale_x(cfg), 1.0 / scale_y(cfg));
  std::cout << "wrote " << result.records.size() << " records to " << out_path << "\n";
  return 0;
}

int cmd_eval(const CommonFlags& flags, const std::string& gt_path,
             const std::string& result_path, const std::string& motion_kind,
             const std::string& ckpt_path, bool csv) {
  // association metrics are scale-invariant; evaluate in pixel coordinates
  const ts::ParsedMot gt_parsed = ts::parse_mot(gt_path);
  const ts::GroundTruth gt = ts::tracks_to_ground_truth(gt_parsed.tracks);
  const ts::ParsedMot res_parsed = ts::parse_mot(result_path);

  ts::EvalReport report = ts::evaluate(gt, res_parsed.tracks);

  if (!ckpt_path.empty()) {
    const ts::RunConfig cfg = load_config(flags);
    const ts::Checkpoint ckpt =
        ts::load_checkpoint(ckpt_path, cfg.model, cfg.history, cfg.normalize);
    const ts::GroundTruth gt_model =
        ts::scale_ground_truth(gt, scale_x(cfg), scale_y(cfg));
    const auto segments = ts::build_segments(gt_model, cfg.history);
    report.mean_pred_iou = ts::mean_prediction_iou(
        [&ckpt](const ts::TrajectoryHistory& h) {
          return ts::predict_next(h, ckpt.params);
        },
        segments);
  } else if (motion_kind == "kf") {
    const ts::RunConfig cfg = load_config(flags);
    const auto segments = ts::build_segments(gt, cfg.history);
    report.mean_pred_iou = ts::mean_prediction_iou(
        [](const ts::TrajectoryHistory& h) {
          std::vector<ts::BBox> boxes;
          for (const auto& s : h.steps) boxes.push_back({s[0], s[1], s[2], s[3]});
          return ts::kf_predict_from_boxes(boxes);
        },
        segments);
  }

  if (csv)
    std::cout << ts::report_csv_header() << "\n" << ts::report_csv_row(report) << "\n";
  else
    std::cout << ts::report_table(report);
  return 0;
}

int cmd_ablate(const CommonFlags& flags, const std::string& gt_path,
               const std::string& dets_path, const std::string& axis, bool csv) {
  const ts::RunConfig base_cfg = load_config(flags);
  const ts::GroundTruth gt = load_gt(gt_path, base_cfg);
  const ts::ParsedMot dets = ts::parse_mot(dets_path, scale_x(base_cfg), scale_y(base_cfg));
  const auto frames = detection_frames(dets);

  const std::vector<int> history_grid = {3, 5, 10, 20, 40};
  const std::vector<int> layer_grid = {1, 2, 3, 6, 12};

  struct Row {
    std::string axis;
    int value;
    double idf1, mota, pred_iou, final_loss;
  };
  std::vector<Row> rows;

  auto run_setting = [&](const std::string& axis_name, int value) {
    ts::RunConfig cfg = base_cfg;
    if (axis_name == "history") {
      cfg.history = value;
      cfg.assoc.history_capacity = value;
    } else {
      cfg.model.n_dec_layers = value;
    }
    const auto segments = ts::build_segments(gt, cfg.history);
    const ts::TrainResult trained = ts::train(segments, cfg.train_config());

    ts::SsmMotion motion(trained.params, cfg.history);
    const ts::TrackingResult result = ts::track_sequence(frames, motion, cfg.assoc);
    const ts::EvalReport rep = ts::evaluate(gt, result);
    const double pred_iou = ts::mean_prediction_iou(
        [&trained](const ts::TrajectoryHistory& h) {
          return ts::predict_next(h, trained.params);
        },
        segments);
    rows.push_back({axis_name, value, rep.idf1, rep.mota_lite, pred_iou,
                    trained.epoch_mean.back()});
  };

  if (axis == "history" || axis == "both")
    for (int v : history_grid) run_setting("history", v);
  if (axis == "layers" || axis == "both")
    for (int v : layer_grid) run_setting("layers", v);

  if (csv) {
    std::cout << "axis,value,idf1,mota_lite,mean_pred_iou,final_epoch_loss\n";
    for (const auto& r : rows)
      std::printf("%s,%d,%.6f,%.6f,%.6f,%.8g\n", r.axis.c_str(), r.value, r.idf1,
                  r.mota, r.pred_iou, r.final_loss);
  } else {
    std::printf("%-8s %6s %8s %10s %14s %16s\n", "axis", "value", "idf1", "mota_lite",
                "mean_pred_iou", "final_loss");
    for (const auto& r : rows)
      std::printf("%-8s %6d %8.4f %10.4f %14.4f %16.8g\n", r.axis.c_str(), r.value,
                  r.idf1, r.mota, r.pred_iou, r.final_loss);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"state-space motion predictor and tracking harness"};
  app.require_subcommand(1);

  CommonFlags flags;

  // synth
  std::string spec_path, out_dir;
  auto* synth = app.add_subcommand("synth", "generate a synthetic scene");
  synth->add_option("spec", spec_path, "scene spec file")->required();
  synth->add_option("outdir", out_dir, "output directory")->required();
  synth->add_option("--seed", flags.seed, "override the scene seed");

  auto add_common = [&flags](CLI::App* cmd, bool train_flags) {
    cmd->add_option("--config", flags.config_path, "run config file");
    cmd->add_option("--seed", flags.seed, "override the config seed");
    cmd->add_option("--history,--history-len", flags.history, "history length override");
    cmd->add_flag("--no-normalize", flags.no_normalize,
                  "work in pixel coordinates");
    if (train_flags) {
      cmd->add_flag("--no-s2l", flags.no_s2l,
                    "supervise every layer with the final target");
      cmd->add_option("--layers", flags.layers, "decoder layer count override");
      cmd->add_flag("--end-to-end-grad", flags.end_to_end,
                    "backpropagate through the box chain");
      cmd->add_option("--threads", flags.threads, "training worker threads");
    } else {
      cmd->add_option("--layers", flags.layers, "decoder layer count override");
    }
  };

  // train
  std::string gt_path, ckpt_out, loss_csv;
  auto* train = app.add_subcommand("train", "train the motion model on MOT ground truth");
  train->add_option("--gt", gt_path, "ground-truth MOT file")->required();
  train->add_option("--out", ckpt_out, "output checkpoint path")->required();
  train->add_option("--loss-csv", loss_csv, "write the per-batch loss log");
  add_common(train, true);

  // track
  std::string dets_path, track_out, ckpt_path;
  std::string motion_kind = "ssm";
  auto* track = app.add_subcommand("track", "run the tracker over detections");
  track->add_option("--dets", dets_path, "detections MOT file")->required();
  track->add_option("--out", track_out, "output result file")->required();
  track->add_option("--ckpt", ckpt_path, "model checkpoint");
  track->add_option("--motion", motion_kind, "motion model: ssm or kf")
      ->check(CLI::IsMember({"ssm", "kf"}));
  add_common(track, false);

  // eval
  std::string eval_gt, eval_result;
  std::string eval_motion;
  bool csv = false;
  auto* eval = app.add_subcommand("eval", "score a tracking result against ground truth");
  eval->add_option("--gt", eval_gt, "ground-truth MOT file")->required();
  eval->add_option("--result", eval_result, "tracking result MOT file")->required();
  eval->add_option("--ckpt", ckpt_path, "also report the model's prediction IoU");
  eval->add_option("--motion", eval_motion,
                   "report the baseline predictor's IoU instead (kf)")
      ->check(CLI::IsMember({"kf"}));
  eval->add_flag("--csv", csv, "machine-readable output");
  add_common(eval, false);

  // ablate
  std::string ablate_gt, ablate_dets, axis = "both";
  auto* ablate = app.add_subcommand(
      "ablate", "history-length and decoder-depth sweeps, trained end to end");
  ablate->add_option("--gt", ablate_gt, "ground-truth MOT file")->required();
  ablate->add_option("--dets", ablate_dets, "detections MOT file")->required();
  ablate->add_option("--axis", axis, "history, layers, or both")
      ->check(CLI::IsMember({"history", "layers", "both"}));
  ablate->add_flag("--csv", csv, "machine-readable output");
  add_common(ablate, true);

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(spec_path, out_dir, flags.seed);
    if (train->parsed()) return cmd_train(flags, gt_path, ckpt_out, loss_csv);
    if (track->parsed())
      return cmd_track(flags, motion_kind, ckpt_path, dets_path, track_out);
    if (eval->parsed())
      return cmd_eval(flags, eval_gt, eval_result, eval_motion, ckpt_path, csv);
    if (ablate->parsed()) return cmd_ablate(flags, ablate_gt, ablate_dets, axis, csv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
