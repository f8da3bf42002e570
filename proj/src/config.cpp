#include "trackssm/config.hpp"

#include <fstream>

namespace trackssm {

std::vector<KvEntry> parse_kv_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config " + path);
  std::vector<KvEntry> out;
  std::string line;
  int line_no = 0;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return std::string();
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  };
  while (std::getline(f, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ": line " + std::to_string(line_no) +
                        ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ConfigError(path + ": line " + std::to_string(line_no) +
                        ": empty key or value");
    out.push_back({key, value, line_no});
  }
  return out;
}

void RunConfig::validate() const {
  model.validate();
  if (history < 1) throw ConfigError("config: history must be >= 1");
  if (batch_size < 1 || epochs < 1)
    throw ConfigError("config: batch_size and epochs must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("config: lr must be > 0");
  if (lambda1 < 0.0 || lambda2 < 0.0)
    throw ConfigError("config: loss weights must be >= 0");
  if (lambda1 + lambda2 <= 0.0)
    throw ConfigError("config: at least one loss weight must be positive");
  if (threads < 1) throw ConfigError("config: threads must be >= 1");
  if (!(assoc.tau_low >= 0.0 && assoc.tau_low < assoc.tau_high && assoc.tau_high <= 1.0))
    throw ConfigError("config: need 0 <= tau_low < tau_high <= 1");
  if (!(assoc.iou_gate_stage1 > 0.0 && assoc.iou_gate_stage1 < 1.0) ||
      !(assoc.iou_gate_stage2 > 0.0 && assoc.iou_gate_stage2 < 1.0))
    throw ConfigError("config: iou gates must be in (0, 1)");
  if (assoc.max_lost_age < 0) throw ConfigError("config: max_lost_age must be >= 0");
  if (img_w <= 0.0 || img_h <= 0.0) throw ConfigError("config: image size must be positive");
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.model = model;
  t.history = history;
  t.batch_size = batch_size;
  t.epochs = epochs;
  t.lr = lr;
  t.loss = {lambda1, lambda2, use_giou};
  t.s2l = s2l;
  t.end_to_end_grad = end_to_end_grad;
  t.seed = seed;
  t.threads = threads;
  t.normalize = normalize;
  return t;
}

RunConfig parse_run_config(const std::string& path) {
  RunConfig c;
  for (const auto& kv : parse_kv_file(path)) {
    const std::string& k = kv.key;
    auto num = [&kv]() {
      try {
        return std::stod(kv.value);
      } catch (...) {
        throw ConfigError("config line " + std::to_string(kv.line) +
                          ": bad numeric value for " + kv.key);
      }
    };
    auto flag = [&kv]() {
      if (kv.value == "true" || kv.value == "1") return true;
      if (kv.value == "false" || kv.value == "0") return false;
      throw ConfigError("config line " + std::to_string(kv.line) + ": key " + kv.key +
                        " expects true/false");
    };
    if (k == "m")
      c.model.m = static_cast<int>(num());
    else if (k == "n_state")
      c.model.n_state = static_cast<int>(num());
    else if (k == "dec_width")
      c.model.dec_width = static_cast<int>(num());
    else if (k == "n_dec_layers")
      c.model.n_dec_layers = static_cast<int>(num());
    else if (k == "pos_dim")
      c.model.pos_dim = static_cast<int>(num());
    else if (k == "n_enc_blocks")
      c.model.n_enc_blocks = static_cast<int>(num());
    else if (k == "expand")
      c.model.expand = static_cast<int>(num());
    else if (k == "conv_kernel")
      c.model.conv_kernel = static_cast<int>(num());
    else if (k == "eps_box")
      c.model.eps_box = num();
    else if (k == "history")
      c.history = static_cast<int>(num());
    else if (k == "batch_size")
      c.batch_size = static_cast<int>(num());
    else if (k == "epochs")
      c.epochs = static_cast<int>(num());
    else if (k == "lr")
      c.lr = num();
    else if (k == "lambda1")
      c.lambda1 = num();
    else if (k == "lambda2")
      c.lambda2 = num();
    else if (k == "use_giou")
      c.use_giou = flag();
    else if (k == "s2l")
      c.s2l = flag();
    else if (k == "end_to_end_grad")
      c.end_to_end_grad = flag();
    else if (k == "seed")
      c.seed = static_cast<uint64_t>(num());
    else if (k == "threads")
      c.threads = static_cast<int>(num());
    else if (k == "tau_high")
      c.assoc.tau_high = num();
    else if (k == "tau_low")
      c.assoc.tau_low = num();
    else if (k == "iou_gate_stage1")
      c.assoc.iou_gate_stage1 = num();
    else if (k == "iou_gate_stage2")
      c.assoc.iou_gate_stage2 = num();
    else if (k == "max_lost_age")
      c.assoc.max_lost_age = static_cast<int>(num());
    else if (k == "tentative_promote_hits")
      c.assoc.tentative_promote_hits = static_cast<int>(num());
    else if (k == "tentative_max_misses")
      c.assoc.tentative_max_misses = static_cast<int>(num());
    else if (k == "img_w")
      c.img_w = num();
    else if (k == "img_h")
      c.img_h = num();
    else if (k == "normalize")
      c.normalize = flag();
    else
      throw ConfigError("config line " + std::to_string(kv.line) + ": unknown key '" +
                        k + "'");
  }
  c.assoc.history_capacity = c.history;
  c.validate();
  return c;
}

}  // namespace trackssm
