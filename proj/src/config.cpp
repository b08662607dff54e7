#include "formlink/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace formlink {

double scheduled_lr(const TrainConfig& cfg, int epoch) {
  int steps = epoch / cfg.lr_step_epochs;
  if (cfg.decay_mode == TrainConfig::DecayMode::exp)
    return cfg.lr * std::pow(cfg.lr_power, steps);
  double progressed =
      std::min(static_cast<double>(steps * cfg.lr_step_epochs), double(cfg.lr_horizon_epochs));
  return cfg.lr * std::pow(1.0 - progressed / cfg.lr_horizon_epochs, cfg.lr_power);
}

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

KeyValueConfig KeyValueConfig::from_string(const std::string& text) {
  KeyValueConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config line " + std::to_string(lineno) + ": expected key = value");
    cfg.values[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_string(ss.str());
}

void KeyValueConfig::set(const std::string& key, const std::string& value) {
  values[key] = value;
}

void KeyValueConfig::apply_override(const std::string& kv) {
  auto eq = kv.find('=');
  if (eq == std::string::npos) throw std::runtime_error("override must be key=value: " + kv);
  set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
}

std::string KeyValueConfig::get_str(const std::string& key, const std::string& fallback) const {
  auto it = values.find(key);
  return it == values.end() ? fallback : it->second;
}

int KeyValueConfig::get_int(const std::string& key, int fallback) const {
  auto it = values.find(key);
  return it == values.end() ? fallback : std::stoi(it->second);
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  auto it = values.find(key);
  return it == values.end() ? fallback : std::stod(it->second);
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  auto it = values.find(key);
  if (it == values.end()) return fallback;
  const std::string& v = it->second;
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw std::runtime_error("config key " + key + ": not a boolean: " + v);
}

uint64_t KeyValueConfig::get_u64(const std::string& key, uint64_t fallback) const {
  auto it = values.find(key);
  return it == values.end() ? fallback : std::stoull(it->second);
}

NetConfig KeyValueConfig::net(int vocab_size) const {
  NetConfig c;
  c.n_blocks = get_int("net.n_blocks", c.n_blocks);
  c.res_depth = get_int("net.res_depth", c.res_depth);
  c.n_downsampling = get_int("net.n_downsampling", c.n_downsampling);
  c.base_channels = get_int("net.base_channels", c.base_channels);
  c.channel_cap_mult = get_int("net.channel_cap_mult", c.channel_cap_mult);
  c.n_classes = get_int("net.n_classes", c.n_classes);
  c.n_keypoint_classes = get_int("net.n_keypoint_classes", c.n_keypoint_classes);
  c.n_link_types = get_int("net.n_link_types", c.n_link_types);
  c.field_stride = get_int("net.field_stride", c.field_stride);
  c.field_channels = get_int("net.field_channels", c.field_channels);
  c.paf_stages = get_int("net.paf_stages", c.paf_stages);
  c.use_coordconv = get_bool("net.use_coordconv", c.use_coordconv);
  c.use_corner_pool = get_bool("net.use_corner_pool", c.use_corner_pool);
  c.vocab_size = vocab_size > 0 ? vocab_size : get_int("net.vocab_size", c.vocab_size);
  c.validate();
  return c;
}

LossWeights KeyValueConfig::loss() const {
  LossWeights w;
  w.lambda1 = get_double("loss.lambda1", w.lambda1);
  w.lambda2 = get_double("loss.lambda2", w.lambda2);
  w.lambda3 = get_double("loss.lambda3", w.lambda3);
  w.b_min = get_double("loss.b_min", w.b_min);
  return w;
}

DecodeConfig KeyValueConfig::decode() const {
  DecodeConfig c;
  c.keypoint_threshold = get_double("decode.keypoint_threshold", c.keypoint_threshold);
  c.link_threshold = get_double("decode.link_threshold", c.link_threshold);
  c.conf_floor = get_double("decode.conf_floor", c.conf_floor);
  c.hires_factor = get_int("decode.hires_factor", c.hires_factor);
  c.min_component_area = get_int("decode.min_component_area", c.min_component_area);
  c.endpoint_radius_min = get_double("decode.endpoint_radius_min", c.endpoint_radius_min);
  c.text_height_cells = get_double("decode.text_height_cells", c.text_height_cells);
  c.assign_radius_scale = get_double("decode.assign_radius_scale", c.assign_radius_scale);
  return c;
}

TrainConfig KeyValueConfig::train() const {
  TrainConfig c;
  c.lr = get_double("train.lr", c.lr);
  c.rms_decay = get_double("train.rms_decay", c.rms_decay);
  c.rms_eps = get_double("train.rms_eps", c.rms_eps);
  c.batch_size = get_int("train.batch_size", c.batch_size);
  c.epochs = get_int("train.epochs", c.epochs);
  c.lr_step_epochs = get_int("train.lr_step_epochs", c.lr_step_epochs);
  c.lr_horizon_epochs = get_int("train.lr_horizon_epochs", c.lr_horizon_epochs);
  c.lr_power = get_double("train.lr_power", c.lr_power);
  std::string mode = get_str("train.lr_decay_mode", "poly");
  if (mode == "poly")
    c.decay_mode = TrainConfig::DecayMode::poly;
  else if (mode == "exp")
    c.decay_mode = TrainConfig::DecayMode::exp;
  else
    throw std::runtime_error("train.lr_decay_mode must be poly or exp");
  c.seed = get_u64("train.seed", c.seed);
  c.checkpoint_every = get_int("train.checkpoint_every", c.checkpoint_every);
  c.target_median_height = get_double("train.target_median_height", c.target_median_height);
  c.target_radius = get_double("train.target_radius", c.target_radius);
  c.augment_enabled = get_bool("train.augment", c.augment_enabled);
  return c;
}

SynthSpec KeyValueConfig::synth() const {
  SynthSpec s;
  s.n_forms = get_int("synth.n_forms", s.n_forms);
  s.page_width = get_int("synth.page_width", s.page_width);
  s.page_height = get_int("synth.page_height", s.page_height);
  s.rows = get_int("synth.rows", s.rows);
  s.columns = get_int("synth.columns", s.columns);
  s.fan_out = get_double("synth.fan_out", s.fan_out);
  s.distractor_rate = get_double("synth.distractor_rate", s.distractor_rate);
  std::string mode = get_str("synth.mode", "easy");
  if (mode == "easy")
    s.mode = SynthSpec::Mode::easy;
  else if (mode == "hard")
    s.mode = SynthSpec::Mode::hard;
  else
    throw std::runtime_error("synth.mode must be easy or hard");
  s.seed = get_u64("synth.seed", s.seed);
  return s;
}

AugmentConfig KeyValueConfig::augment() const {
  AugmentConfig a;
  a.p_char_replace = get_double("augment.p_char_replace", a.p_char_replace);
  a.max_shift = get_int("augment.max_shift", a.max_shift);
  a.max_rotate_deg = get_double("augment.max_rotate_deg", a.max_rotate_deg);
  a.max_shear = get_double("augment.max_shear", a.max_shear);
  a.scale_lo = get_double("augment.scale_lo", a.scale_lo);
  a.scale_hi = get_double("augment.scale_hi", a.scale_hi);
  a.max_pad = get_int("augment.max_pad", a.max_pad);
  a.target_median_height = get_double("train.target_median_height", a.target_median_height);
  return a;
}

EvalOptions KeyValueConfig::eval() const {
  EvalOptions o;
  o.iou_threshold = get_double("eval.iou_threshold", o.iou_threshold);
  o.require_class_match = get_bool("eval.require_class_match", o.require_class_match);
  return o;
}

std::string KeyValueConfig::dump() const {
  std::ostringstream out;
  for (const auto& [k, v] : values) out << k << " = " << v << "\n";
  return out.str();
}

KeyValueConfig net_to_config(const NetConfig& cfg) {
  KeyValueConfig kv;
  kv.set("net.n_blocks", std::to_string(cfg.n_blocks));
  kv.set("net.res_depth", std::to_string(cfg.res_depth));
  kv.set("net.n_downsampling", std::to_string(cfg.n_downsampling));
  kv.set("net.base_channels", std::to_string(cfg.base_channels));
  kv.set("net.channel_cap_mult", std::to_string(cfg.channel_cap_mult));
  kv.set("net.n_classes", std::to_string(cfg.n_classes));
  kv.set("net.n_keypoint_classes", std::to_string(cfg.n_keypoint_classes));
  kv.set("net.n_link_types", std::to_string(cfg.n_link_types));
  kv.set("net.field_stride", std::to_string(cfg.field_stride));
  kv.set("net.field_channels", std::to_string(cfg.field_channels));
  kv.set("net.paf_stages", std::to_string(cfg.paf_stages));
  kv.set("net.use_coordconv", cfg.use_coordconv ? "1" : "0");
  kv.set("net.use_corner_pool", cfg.use_corner_pool ? "1" : "0");
  kv.set("net.vocab_size", std::to_string(cfg.vocab_size));
  return kv;
}

}  // namespace formlink
