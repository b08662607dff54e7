#include "formlink/net.hpp"

#include <stdexcept>

namespace formlink {

void NetConfig::validate() const {
  if (n_blocks < 1) throw std::invalid_argument("NetConfig: n_blocks must be >= 1");
  if (res_depth < 1) throw std::invalid_argument("NetConfig: res_depth must be >= 1");
  if (n_downsampling < 1) throw std::invalid_argument("NetConfig: n_downsampling must be >= 1");
  if (base_channels < 1) throw std::invalid_argument("NetConfig: base_channels must be >= 1");
  if ((field_stride & (field_stride - 1)) != 0 || field_stride < 1 ||
      field_stride > pad_multiple())
    throw std::invalid_argument("NetConfig: field_stride must be a power of two <= 2^n_downsampling");
  if (paf_stages < 1) throw std::invalid_argument("NetConfig: paf_stages must be >= 1");
  if (vocab_size < 1) throw std::invalid_argument("NetConfig: vocab_size must be >= 1");
}

template <typename T>
int FormNet<T>::register_conv(const std::string& name, int c_in, int c_out, int k, bool bias,
                              Rng& rng) {
  Tensor<T> w({c_out, c_in, k, k});
  T std = static_cast<T>(std::sqrt(2.0 / (static_cast<double>(c_in) * k * k)));
  for (auto& v : w.data) v = static_cast<T>(rng.normal()) * std;
  int id = params_.add(name + ".w", std::move(w));
  if (bias) params_.add(name + ".b", Tensor<T>::zeros({c_out}));
  return id;
}

// The net has no normalization layers, so activations would grow with depth
// under plain fan-in init. Residual bodies and the attention mix start at
// zero (the blocks open as identities), and the composite heads start from
// a low-confidence prior with unit spread.
template <typename T>
void FormNet<T>::stabilize_init() {
  const std::string closing = ".c" + std::to_string(cfg_.res_depth - 1) + ".w";
  for (auto& e : params_.entries) {
    bool res_closing =
        e.name.size() > closing.size() &&
        e.name.compare(e.name.size() - closing.size(), closing.size(), closing) == 0 &&
        (e.name.find(".enc") != std::string::npos || e.name.find(".dec") != std::string::npos ||
         e.name.find(".bott") != std::string::npos);
    if (res_closing || e.name.find("attn.o") != std::string::npos) e.value.fill(T(0));
  }
  const T conf_prior = T(-2);              // sigmoid ~ 0.12
  const T spread_prior = T(0.5413248546);  // softplus ~ 1
  for (int st = 0; st < cfg_.paf_stages; ++st) {
    int pif_b = params_.find("pif" + std::to_string(st) + ".out.b");
    if (pif_b >= 0) {
      auto& b = params_.entries[static_cast<size_t>(pif_b)].value;
      for (int k = 0; k < cfg_.n_keypoint_classes; ++k) {
        b.data[static_cast<size_t>(k * 5 + 0)] = conf_prior;
        b.data[static_cast<size_t>(k * 5 + 3)] = spread_prior;
        b.data[static_cast<size_t>(k * 5 + 4)] = spread_prior;
      }
    }
    int paf_b = params_.find("paf" + std::to_string(st) + ".out.b");
    if (paf_b >= 0) {
      auto& b = params_.entries[static_cast<size_t>(paf_b)].value;
      for (int l = 0; l < cfg_.n_link_types; ++l) {
        b.data[static_cast<size_t>(l * 7 + 0)] = conf_prior;
        b.data[static_cast<size_t>(l * 7 + 3)] = spread_prior;
        b.data[static_cast<size_t>(l * 7 + 6)] = spread_prior;
      }
    }
  }
}

template <typename T>
FormNet<T>::FormNet(NetConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(Rng::mix(seed, 0x6e657477ULL));
  const int nd = cfg_.n_downsampling;
  const int base = cfg_.stage_channels(0);
  const int coord = cfg_.use_coordconv ? 2 : 0;

  for (int b = 0; b < cfg_.n_blocks; ++b) {
    const std::string bp = "b" + std::to_string(b) + ".";
    int in_ch = (b == 0 ? cfg_.vocab_size + 1 : base) + coord;
    register_conv(bp + "entry", in_ch, base, 1, true, rng);

    int ch = base;
    for (int s = 0; s < nd; ++s) {
      int out_ch = cfg_.stage_channels(s);
      const std::string sp = bp + "enc" + std::to_string(s);
      for (int j = 0; j < cfg_.res_depth; ++j)
        register_conv(sp + ".c" + std::to_string(j), j == 0 ? ch : out_ch, out_ch, 3, true, rng);
      if (ch != out_ch) register_conv(sp + ".skip", ch, out_ch, 1, true, rng);
      ch = out_ch;
    }

    int bott_ch = cfg_.stage_channels(nd);
    for (int j = 0; j < cfg_.res_depth; ++j)
      register_conv(bp + "bott.c" + std::to_string(j), j == 0 ? ch : bott_ch, bott_ch, 3, true,
                    rng);
    if (ch != bott_ch) register_conv(bp + "bott.skip", ch, bott_ch, 1, true, rng);

    int attn_ch = std::max(bott_ch / 2, 1);
    register_conv(bp + "attn.q", bott_ch, attn_ch, 1, false, rng);
    register_conv(bp + "attn.k", bott_ch, attn_ch, 1, false, rng);
    register_conv(bp + "attn.v", bott_ch, attn_ch, 1, false, rng);
    register_conv(bp + "attn.o", attn_ch, bott_ch, 1, false, rng);

    ch = bott_ch;
    for (int s = nd - 1; s >= 0; --s) {
      int out_ch = cfg_.stage_channels(s);
      int in_c = ch + out_ch;  // upsampled deeper features plus the skip
      const std::string sp = bp + "dec" + std::to_string(s);
      for (int j = 0; j < cfg_.res_depth; ++j)
        register_conv(sp + ".c" + std::to_string(j), j == 0 ? in_c : out_ch, out_ch, 3, true, rng);
      register_conv(sp + ".skip", in_c, out_ch, 1, true, rng);
      ch = out_ch;
    }
  }

  register_conv("seg_key", base, 1, 1, true, rng);

  register_conv("seg_full", base, cfg_.n_classes, 1, true, rng);

  const int fc = cfg_.field_channels;
  register_conv("field.proj", cfg_.n_blocks * cfg_.stage_channels(nd), fc, 1, true, rng);
  for (int u = 0; u < cfg_.field_upsamples(); ++u)
    register_conv("field.up" + std::to_string(u), fc, fc, 3, true, rng);
  for (int st = 0; st < cfg_.paf_stages; ++st) {
    const std::string sp = std::to_string(st);
    if (st > 0)
      register_conv("field.stage" + sp + ".proj",
                    fc + 5 * cfg_.n_keypoint_classes + 7 * cfg_.n_link_types, fc, 1, true, rng);
    register_conv("pif" + sp + ".h", fc, fc, 3, true, rng);
    register_conv("pif" + sp + ".out", fc, 5 * cfg_.n_keypoint_classes, 1, true, rng);
    register_conv("paf" + sp + ".h", fc, fc, 3, true, rng);
    register_conv("paf" + sp + ".out", fc, 7 * cfg_.n_link_types, 1, true, rng);
  }
  stabilize_init();
}

template <typename T>
NetOutput<T> FormNet<T>::forward(Graph<T>& g, const Tensor<T>& grid_onehot) const {
  if (grid_onehot.rank() != 3 || grid_onehot.dim(0) != cfg_.vocab_size + 1)
    throw std::invalid_argument("forward: expected a (vocab_size+1, H, W) one-hot stack");

  NetOutput<T> out;
  out.input_h = grid_onehot.dim(1);
  out.input_w = grid_onehot.dim(2);
  const int m = cfg_.pad_multiple();
  out.padded_h = (out.input_h + m - 1) / m * m;
  out.padded_w = (out.input_w + m - 1) / m * m;
  out.field_h = (out.input_h + cfg_.field_stride - 1) / cfg_.field_stride;
  out.field_w = (out.input_w + cfg_.field_stride - 1) / cfg_.field_stride;

  // bind every parameter as a leaf (graph nodes hold copies)
  out.param_nodes.reserve(params_.entries.size());
  std::vector<Var<T>> pv;
  pv.reserve(params_.entries.size());
  for (const auto& e : params_.entries) {
    Var<T> v = ops::leaf_param(g, e.value);
    pv.push_back(v);
    out.param_nodes.push_back(v.id);
  }
  auto conv = [&](Var<T> x, const std::string& name, bool act) {
    int wi = params_.find(name + ".w");
    if (wi < 0) throw std::logic_error("missing parameter " + name);
    int bi = params_.find(name + ".b");
    if (bi >= 0)
      return ops::conv_bias_act(x, pv[static_cast<size_t>(wi)], pv[static_cast<size_t>(bi)], act);
    Var<T> y = ops::conv2d(x, pv[static_cast<size_t>(wi)]);
    return act ? ops::relu(y) : y;
  };
  auto resblock = [&](Var<T> x, const std::string& prefix) {
    Var<T> h = x;
    for (int j = 0; j < cfg_.res_depth; ++j)
      h = conv(h, prefix + ".c" + std::to_string(j), j + 1 < cfg_.res_depth);
    Var<T> s = params_.find(prefix + ".skip.w") >= 0 ? conv(x, prefix + ".skip", false) : x;
    return ops::add_relu(h, s);
  };
  auto attention = [&](Var<T> x, const std::string& prefix) {
    const auto& shape = g.value(x.id).shape;
    int C = shape[0], Hb = shape[1], Wb = shape[2];
    int S = Hb * Wb;
    int Ca = std::max(C / 2, 1);
    auto q = ops::transpose2(ops::reshape(conv(x, prefix + ".q", false), {Ca, S}));
    auto k = ops::reshape(conv(x, prefix + ".k", false), {Ca, S});
    auto v = ops::transpose2(ops::reshape(conv(x, prefix + ".v", false), {Ca, S}));
    auto aff = ops::scalar_mul(ops::matmul(q, k), static_cast<T>(1.0 / std::sqrt(double(Ca))));
    auto attn = ops::softmax_rows(aff);
    auto mixed = ops::reshape(ops::transpose2(ops::matmul(attn, v)), {Ca, Hb, Wb});
    return ops::add(x, conv(mixed, prefix + ".o", false));
  };

  Var<T> x = ops::input(g, grid_onehot);
  x = ops::pad_spatial(x, out.padded_h, out.padded_w);
  Var<T> coords{nullptr, -1};
  if (cfg_.use_coordconv)
    coords = ops::input(g, ops::coordconv_channels<T>(out.padded_h, out.padded_w));

  const int nd = cfg_.n_downsampling;
  std::vector<Var<T>> bottlenecks;
  Var<T> feat = x;
  Var<T> first_block_feat{nullptr, -1};
  for (int b = 0; b < cfg_.n_blocks; ++b) {
    const std::string bp = "b" + std::to_string(b) + ".";
    Var<T> h = feat;
    if (cfg_.use_coordconv) h = ops::channel_concat<T>({h, coords});
    h = conv(h, bp + "entry", true);
    std::vector<Var<T>> skips;
    for (int s = 0; s < nd; ++s) {
      h = resblock(h, bp + "enc" + std::to_string(s));
      skips.push_back(h);
      h = ops::max_pool2(h);
    }
    h = resblock(h, bp + "bott");
    h = attention(h, bp + "attn");
    bottlenecks.push_back(h);
    for (int s = nd - 1; s >= 0; --s) {
      h = ops::nearest_upsample2(h);
      h = ops::channel_concat<T>({h, skips[static_cast<size_t>(s)]});
      h = resblock(h, bp + "dec" + std::to_string(s));
    }
    feat = h;
    if (b == 0) first_block_feat = h;
  }

  out.seg_key = ops::crop_spatial(conv(first_block_feat, "seg_key", false), out.input_h, out.input_w);
  out.seg_full = ops::crop_spatial(conv(feat, "seg_full", false), out.input_h, out.input_w);

  Var<T> trunk = cfg_.n_blocks > 1 ? ops::channel_concat<T>(bottlenecks) : bottlenecks[0];
  trunk = conv(trunk, "field.proj", true);
  for (int u = 0; u < cfg_.field_upsamples(); ++u)
    trunk = conv(ops::nearest_upsample2(trunk), "field.up" + std::to_string(u), true);
  if (cfg_.use_corner_pool) trunk = ops::corner_pool(trunk);

  Var<T> pif{nullptr, -1}, paf{nullptr, -1};
  Var<T> stage_in = trunk;
  for (int st = 0; st < cfg_.paf_stages; ++st) {
    const std::string sp = std::to_string(st);
    if (st > 0)
      stage_in = conv(ops::channel_concat<T>({trunk, pif, paf}), "field.stage" + sp + ".proj", true);
    pif = conv(conv(stage_in, "pif" + sp + ".h", true), "pif" + sp + ".out", false);
    paf = conv(conv(stage_in, "paf" + sp + ".h", true), "paf" + sp + ".out", false);
  }
  out.pif = ops::crop_spatial(pif, out.field_h, out.field_w);
  out.paf = ops::crop_spatial(paf, out.field_h, out.field_w);
  return out;
}

template <typename T>
void FormNet<T>::accumulate_grads(Graph<T>& g, const NetOutput<T>& out) {
  for (size_t i = 0; i < params_.entries.size(); ++i) {
    const Tensor<T>& ng = g.grad(out.param_nodes[i]);
    if (ng.data.empty()) continue;
    auto& acc = params_.entries[i].grad;
    for (size_t j = 0; j < acc.data.size(); ++j) acc.data[j] += ng.data[j];
  }
}

template class FormNet<float>;
template class FormNet<double>;

}  // namespace formlink
