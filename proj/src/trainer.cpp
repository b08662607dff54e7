#include "formlink/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "formlink/checkpoint.hpp"
#include "formlink/rng.hpp"

namespace formlink {

namespace {

struct Sample {
  Tensor<float> onehot;
  TargetFields<float> targets;
};

Sample make_sample(const FormDocument& form, const CharVocab& vocab, const NetConfig& net_cfg,
                   double target_median_height, double target_radius) {
  CharGrid grid = rasterize(form, vocab, target_median_height);
  Sample s;
  s.onehot = one_hot<float>(grid);
  FieldGeometry geom = make_field_geometry(grid, net_cfg.field_stride);
  s.targets = encode_targets<float>(form, geom, net_cfg.n_keypoint_classes,
                                    net_cfg.n_link_types, target_radius);
  return s;
}

void rmsprop_step(ParamStore<float>& store, double lr, double decay, double eps, int batch) {
  const float inv_batch = 1.0f / static_cast<float>(batch);
  const float d = static_cast<float>(decay);
  const float lrf = static_cast<float>(lr);
  const float epsf = static_cast<float>(eps);
  for (auto& e : store.entries) {
    for (size_t i = 0; i < e.value.data.size(); ++i) {
      float g = e.grad.data[i] * inv_batch;
      float v = d * e.opt_state.data[i] + (1.0f - d) * g * g;
      e.opt_state.data[i] = v;
      e.value.data[i] -= lrf * g / (std::sqrt(v) + epsf);
    }
    e.grad.fill(0.0f);
  }
}

}  // namespace

std::unique_ptr<FormNet<float>> train_net(const std::vector<FormDocument>& forms,
                                          const CharVocab& vocab, const TrainOptions& opts,
                                          std::ostream* log,
                                          const std::function<void(const EpochStats&)>& on_epoch) {
  if (forms.empty()) throw std::invalid_argument("train_net: no training forms");
  NetConfig net_cfg = opts.net;
  net_cfg.vocab_size = vocab.size();
  auto net = std::make_unique<FormNet<float>>(net_cfg, opts.train.seed);

  namespace fs = std::filesystem;
  const bool keep_ckpt = !opts.checkpoint_dir.empty();
  if (keep_ckpt) fs::create_directories(opts.checkpoint_dir);
  auto ckpt_path = [&](const std::string& name) {
    return (fs::path(opts.checkpoint_dir) / name).string();
  };
  if (keep_ckpt) save_params(net->params(), ckpt_path("ckpt_initial.mspw"));

  // base samples; augmented epochs rebuild them per form
  std::vector<Sample> base;
  base.reserve(forms.size());
  for (const auto& f : forms)
    base.push_back(make_sample(f, vocab, net_cfg, opts.train.target_median_height,
                               opts.train.target_radius));

  AugmentConfig aug = opts.augment;
  aug.replacement_chars.clear();
  for (unsigned char c : vocab.chars) aug.replacement_chars += static_cast<char>(c);

  std::vector<int> order(forms.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < opts.train.epochs; ++epoch) {
    Rng shuffle_rng(Rng::mix(opts.train.seed, 0x45500000ULL + static_cast<uint64_t>(epoch)));
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
      std::swap(order[static_cast<size_t>(i)],
                order[static_cast<size_t>(shuffle_rng.uniform_int(0, i))]);

    const double lr = scheduled_lr(opts.train, epoch);
    LossBreakdown<double> sum;
    int n_batches = 0;

    for (size_t pos = 0; pos < order.size(); pos += static_cast<size_t>(opts.train.batch_size)) {
      size_t end = std::min(order.size(), pos + static_cast<size_t>(opts.train.batch_size));
      int batch = static_cast<int>(end - pos);
      net->params().zero_grad();
      for (size_t i = pos; i < end; ++i) {
        int idx = order[i];
        Sample scratch;
        const Sample* sample = &base[static_cast<size_t>(idx)];
        if (opts.train.augment_enabled) {
          AugmentConfig a = aug;
          a.seed = Rng::mix(Rng::mix(opts.train.seed, static_cast<uint64_t>(epoch)),
                            static_cast<uint64_t>(idx));
          scratch = make_sample(augment(forms[static_cast<size_t>(idx)], a), vocab, net_cfg,
                                opts.train.target_median_height, opts.train.target_radius);
          sample = &scratch;
        }
        Graph<float> g;
        auto out = net->forward(g, sample->onehot);
        LossBreakdown<float> bd;
        Var<float> loss;
        try {
          loss = total_loss<float>(out.seg_key, out.seg_full, out.pif, out.paf, sample->targets,
                                   opts.loss, &bd);
        } catch (const std::runtime_error& e) {
          throw TrainAborted(std::string(e.what()) + " at epoch " + std::to_string(epoch));
        }
        g.backward(loss.id);
        net->accumulate_grads(g, out);
        sum.total += bd.total;
        sum.seg_ce += bd.seg_ce;
        sum.seg_key_bce += bd.seg_key_bce;
        sum.pif_conf += bd.pif_conf;
        sum.pif_loc += bd.pif_loc;
        sum.pif_sigma += bd.pif_sigma;
        sum.paf_conf += bd.paf_conf;
        sum.paf_loc += bd.paf_loc;
      }
      rmsprop_step(net->params(), lr, opts.train.rms_decay, opts.train.rms_eps, batch);
      ++n_batches;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = lr;
    const double n = static_cast<double>(forms.size());
    stats.mean.total = static_cast<float>(sum.total / n);
    stats.mean.seg_ce = static_cast<float>(sum.seg_ce / n);
    stats.mean.seg_key_bce = static_cast<float>(sum.seg_key_bce / n);
    stats.mean.pif_conf = static_cast<float>(sum.pif_conf / n);
    stats.mean.pif_loc = static_cast<float>(sum.pif_loc / n);
    stats.mean.pif_sigma = static_cast<float>(sum.pif_sigma / n);
    stats.mean.paf_conf = static_cast<float>(sum.paf_conf / n);
    stats.mean.paf_loc = static_cast<float>(sum.paf_loc / n);
    if (log)
      (*log) << "epoch=" << epoch << " lr=" << lr << " total=" << stats.mean.total
             << " seg_ce=" << stats.mean.seg_ce << " seg_key_bce=" << stats.mean.seg_key_bce
             << " pif_conf=" << stats.mean.pif_conf << " pif_loc=" << stats.mean.pif_loc
             << " pif_sigma=" << stats.mean.pif_sigma << " paf_conf=" << stats.mean.paf_conf
             << " paf_loc=" << stats.mean.paf_loc << "\n";
    if (on_epoch) on_epoch(stats);
    if (keep_ckpt) {
      save_params(net->params(), ckpt_path("ckpt_last.mspw"));
      if (opts.train.checkpoint_every > 0 && (epoch + 1) % opts.train.checkpoint_every == 0)
        save_params(net->params(),
                    ckpt_path("ckpt_epoch" + std::to_string(epoch + 1) + ".mspw"));
    }
    (void)n_batches;
  }
  if (keep_ckpt) save_params(net->params(), ckpt_path("ckpt_final.mspw"));
  return net;
}

FieldMaps run_inference(const FormNet<float>& net, const FormDocument& form,
                        const CharVocab& vocab, double target_median_height) {
  CharGrid grid = rasterize(form, vocab, target_median_height);
  Tensor<float> onehot = one_hot<float>(grid);
  Graph<float> g;
  auto out = net.forward(g, onehot);
  FieldMaps f;
  f.seg_key = g.value(out.seg_key.id);
  f.seg_full = g.value(out.seg_full.id);
  f.pif = g.value(out.pif.id);
  f.paf = g.value(out.paf.id);
  f.geom = make_field_geometry(grid, net.config().field_stride);
  f.n_keypoint_classes = net.config().n_keypoint_classes;
  f.n_link_types = net.config().n_link_types;
  return f;
}

EvalReport evaluate_net(const FormNet<float>& net, const std::vector<FormDocument>& forms,
                        const CharVocab& vocab, const DecodeConfig& decode_cfg,
                        const EvalOptions& eval_opts, double target_median_height) {
  EvalReport report;
  for (const auto& form : forms) {
    FieldMaps fields = run_inference(net, form, vocab, target_median_height);
    DecodedForm pred = decode(fields, decode_cfg);
    report += evaluate_form(pred, form, eval_opts);
  }
  return report;
}

}  // namespace formlink
