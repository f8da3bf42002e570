#pragma once

#include <string>
#include <vector>

#include "trackssm/model.hpp"
#include "trackssm/tracker.hpp"
#include "trackssm/train.hpp"

namespace trackssm {

struct KvEntry {
  std::string key;
  std::string value;
  int line;
};

// `key = value` lines, '#' comments; malformed lines raise ConfigError with
// the line number.
std::vector<KvEntry> parse_kv_file(const std::string& path);

// Full run configuration: model widths, training recipe, association
// thresholds, and the coordinate frame. Unknown keys are rejected.
struct RunConfig {
  ModelConfig model;
  int history = 5;
  int batch_size = 256;
  int epochs = 30;
  double lr = 1e-4;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  bool use_giou = false;
  bool s2l = true;
  bool end_to_end_grad = false;
  uint64_t seed = 1;
  int threads = 1;
  AssociationConfig assoc;
  double img_w = 1000.0;
  double img_h = 1000.0;
  bool normalize = true;

  void validate() const;
  TrainConfig train_config() const;
};

RunConfig parse_run_config(const std::string& path);

}  // namespace trackssm
