#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "formlink/autodiff.hpp"
#include "formlink/conv_ops.hpp"
#include "formlink/net_ops.hpp"
#include "formlink/rng.hpp"

namespace formlink {

struct NetConfig {
  int n_blocks = 2;
  int res_depth = 2;
  int n_downsampling = 4;
  int base_channels = 8;
  int channel_cap_mult = 8;
  int n_classes = 5;           // 4 entity classes + background
  int n_keypoint_classes = 4;  // K
  int n_link_types = 1;        // L
  int field_stride = 4;        // grid cells per field cell (power of two)
  int field_channels = 32;
  int paf_stages = 1;
  bool use_coordconv = true;
  bool use_corner_pool = true;
  int vocab_size = 90;  // input channels = vocab_size + 1

  int pad_multiple() const { return 1 << n_downsampling; }

  int stage_channels(int s) const {
    long long c = static_cast<long long>(base_channels) << s;
    return static_cast<int>(std::min<long long>(c, static_cast<long long>(base_channels) *
                                                       channel_cap_mult));
  }

  int field_upsamples() const {
    int ups = 0, r = field_stride;
    while (r < pad_multiple()) {
      r *= 2;
      ++ups;
    }
    return ups;
  }

  void validate() const;
};

template <typename T>
struct ParamStore {
  struct Entry {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    Tensor<T> opt_state;
  };
  std::vector<Entry> entries;
  std::unordered_map<std::string, int> by_name;

  int add(const std::string& name, Tensor<T> init) {
    if (by_name.count(name)) throw std::logic_error("duplicate parameter " + name);
    Entry e;
    e.name = name;
    e.grad = Tensor<T>::zeros(init.shape);
    e.opt_state = Tensor<T>::zeros(init.shape);
    e.value = std::move(init);
    entries.push_back(std::move(e));
    int id = static_cast<int>(entries.size()) - 1;
    by_name[name] = id;
    return id;
  }

  int find(const std::string& name) const {
    auto it = by_name.find(name);
    return it == by_name.end() ? -1 : it->second;
  }

  void zero_grad() {
    for (auto& e : entries) e.grad.fill(T(0));
  }

  int64_t parameter_count() const {
    int64_t n = 0;
    for (const auto& e : entries) n += e.value.numel();
    return n;
  }
};

/// Everything the heads produce for one input, still attached to the graph.
template <typename T>
struct NetOutput {
  Var<T> seg_key;   // (1, H, W) logits from the first block
  Var<T> seg_full;  // (n_classes, H, W) logits from the last block
  Var<T> pif;       // (K*5, fh, fw)
  Var<T> paf;       // (L*7, fh, fw)
  int input_h = 0, input_w = 0;
  int padded_h = 0, padded_w = 0;
  int field_h = 0, field_w = 0;
  std::vector<int> param_nodes;  // graph node per ParamStore entry
};

/// Two chained U-Net blocks with attention bottlenecks; the concatenated
/// bottleneck features feed a corner-pooled trunk with keypoint (PIF) and
/// association (PAF) heads.
template <typename T>
class FormNet {
 public:
  FormNet(NetConfig cfg, uint64_t seed);

  NetOutput<T> forward(Graph<T>& g, const Tensor<T>& grid_onehot) const;

  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  const NetConfig& config() const { return cfg_; }

  /// Adds each graph gradient into the store's accumulators.
  void accumulate_grads(Graph<T>& g, const NetOutput<T>& out);

 private:
  int register_conv(const std::string& name, int c_in, int c_out, int k, bool bias, Rng& rng);
  void stabilize_init();

  NetConfig cfg_;
  ParamStore<T> params_;
};

extern template class FormNet<float>;
extern template class FormNet<double>;

}  // namespace formlink
