#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "formlink/chargrid.hpp"
#include "formlink/decoder.hpp"
#include "formlink/eval.hpp"
#include "formlink/losses.hpp"
#include "formlink/net.hpp"
#include "formlink/synthgen.hpp"

namespace formlink {

struct TrainConfig {
  double lr = 1e-3;
  double rms_decay = 0.9;
  double rms_eps = 1e-8;
  int batch_size = 4;
  int epochs = 200;
  int lr_step_epochs = 10;
  int lr_horizon_epochs = 200;
  double lr_power = 0.9;
  enum class DecayMode { poly, exp } decay_mode = DecayMode::poly;
  uint64_t seed = 0;
  int checkpoint_every = 10;
  double target_median_height = 3.0;
  double target_radius = 1.0;  // field cells
  bool augment_enabled = false;
};

/// Step size at a given epoch. Default: the base rate decays by a power-0.9
/// polynomial over the horizon, stepped every lr_step_epochs. The alternative
/// multiplies by lr_power at every step.
double scheduled_lr(const TrainConfig& cfg, int epoch);

/// Plain-text `key = value` configuration with '#' comments.
struct KeyValueConfig {
  std::map<std::string, std::string> values;

  static KeyValueConfig load(const std::string& path);
  static KeyValueConfig from_string(const std::string& text);
  void set(const std::string& key, const std::string& value);
  void apply_override(const std::string& key_equals_value);

  bool has(const std::string& key) const { return values.count(key) > 0; }
  std::string get_str(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  uint64_t get_u64(const std::string& key, uint64_t fallback) const;

  NetConfig net(int vocab_size) const;
  LossWeights loss() const;
  DecodeConfig decode() const;
  TrainConfig train() const;
  SynthSpec synth() const;
  AugmentConfig augment() const;
  EvalOptions eval() const;

  std::string dump() const;
};

/// net.* entries so a trained model's architecture travels with its weights.
KeyValueConfig net_to_config(const NetConfig& cfg);

}  // namespace formlink
