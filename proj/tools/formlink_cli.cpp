#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include <CLI11.hpp>

#include "formlink/baselines.hpp"
#include "formlink/checkpoint.hpp"
#include "formlink/config.hpp"
#include "formlink/decoder.hpp"
#include "formlink/eval.hpp"
#include "formlink/render.hpp"
#include "formlink/synthgen.hpp"
#include "formlink/trainer.hpp"

namespace fs = std::filesystem;
using namespace formlink;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;

  KeyValueConfig load() const {
    KeyValueConfig cfg = config_path.empty() ? KeyValueConfig{} : KeyValueConfig::load(config_path);
    for (const auto& kv : overrides) cfg.apply_override(kv);
    return cfg;
  }
};

void add_common(CLI::App* cmd, Common& common) {
  cmd->add_option("--config", common.config_path, "key = value configuration file");
  cmd->add_option("--set", common.overrides, "override a config key, e.g. --set train.lr=0.002");
}

std::vector<std::string> split_files(const std::string& dir) {
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  return files;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

DecodedForm form_to_decoded(const FormDocument& doc) {
  DecodedForm out;
  std::map<int, int> index_of;
  for (const auto& e : doc.entities) {
    index_of[e.id] = static_cast<int>(out.entities.size());
    out.entities.push_back({e.label, e.box, 1.0});
  }
  for (auto [q, a] : doc.links) out.links.push_back({index_of.at(q), index_of.at(a), 1.0});
  return out;
}

int run_stats(const std::string& dir) {
  ParseReport report;
  auto forms = load_split(dir, &report);
  CorpusStats stats = dataset_stats(forms);
  std::cout << stats_table(stats);
  std::cout << stats_machine_lines(stats);
  std::cout << "stats.words_dropped=" << report.n_words_dropped << "\n"
            << "stats.links_invalid=" << report.invalid_links.size() << "\n"
            << "stats.boxes_clamped=" << report.n_boxes_clamped << "\n";
  for (const auto& bad : report.invalid_links)
    std::cout << "# excluded pair (" << bad.id1 << "," << bad.id2 << "): " << bad.reason << "\n";
  return 0;
}

int run_synth(const KeyValueConfig& cfg, const std::string& out_dir) {
  SynthSpec spec = cfg.synth();
  fs::create_directories(out_dir);
  auto forms = generate(spec);
  char name[32];
  for (size_t i = 0; i < forms.size(); ++i) {
    std::snprintf(name, sizeof(name), "form_%04zu.json", i);
    save_form(forms[i], (fs::path(out_dir) / name).string());
  }
  std::cout << "wrote " << forms.size() << " forms to " << out_dir << "\n";
  return 0;
}

int run_train(const KeyValueConfig& cfg, const std::string& data_dir, const std::string& out_dir) {
  auto forms = load_split(data_dir);
  if (forms.empty()) throw ValidationError("no training forms in " + data_dir);
  int vocab_n = cfg.get_int("chargrid.vocab_n", 90);
  CharVocab vocab = build_vocab(forms, vocab_n);

  TrainOptions opts;
  opts.net = cfg.net(vocab.size());
  opts.loss = cfg.loss();
  opts.train = cfg.train();
  opts.augment = cfg.augment();
  opts.checkpoint_dir = out_dir;
  fs::create_directories(out_dir);
  save_vocab(vocab, (fs::path(out_dir) / "vocab.hex").string());
  KeyValueConfig model_cfg = net_to_config(opts.net);
  write_text((fs::path(out_dir) / "model.cfg").string(), model_cfg.dump());

  std::ofstream log((fs::path(out_dir) / "train.log").string());
  log << "# lr(e) = " << opts.train.lr << " * (1 - floor(e/" << opts.train.lr_step_epochs << ")*"
      << opts.train.lr_step_epochs << "/" << opts.train.lr_horizon_epochs << ")^"
      << opts.train.lr_power << (opts.train.decay_mode == TrainConfig::DecayMode::exp
                                     ? "  [mode: exp, lr * power^floor(e/step)]"
                                     : "  [mode: poly]")
      << "\n";
  log << "# parameters and batches are seeded with train.seed = " << opts.train.seed << "\n";

  auto echo = [&](const EpochStats& s) {
    std::cout << "epoch " << s.epoch << " lr " << s.lr << " loss " << s.mean.total << std::endl;
  };
  auto net = train_net(forms, vocab, opts, &log, echo);
  std::cout << "final checkpoint: " << (fs::path(out_dir) / "ckpt_final.mspw").string() << "\n";
  return 0;
}

std::unique_ptr<FormNet<float>> load_model(const std::string& model_dir,
                                           const std::string& checkpoint, CharVocab& vocab) {
  if (!fs::exists(fs::path(model_dir) / "vocab.hex") ||
      !fs::exists(fs::path(model_dir) / "model.cfg"))
    throw ValidationError("not a model directory (missing vocab.hex or model.cfg): " + model_dir);
  vocab = load_vocab((fs::path(model_dir) / "vocab.hex").string());
  KeyValueConfig model_cfg = KeyValueConfig::load((fs::path(model_dir) / "model.cfg").string());
  NetConfig net_cfg = model_cfg.net(0);
  if (net_cfg.vocab_size != vocab.size())
    throw ValidationError("model.cfg vocab_size does not match vocab.hex");
  auto net = std::make_unique<FormNet<float>>(net_cfg, 0);
  std::string ckpt = checkpoint.empty()
                         ? (fs::path(model_dir) / "ckpt_final.mspw").string()
                         : checkpoint;
  if (!fs::exists(ckpt)) throw ValidationError("missing checkpoint " + ckpt);
  load_params(net->params(), ckpt);
  return net;
}

int run_decode(const KeyValueConfig& cfg, const std::string& model_dir,
               const std::string& checkpoint, const std::string& data_dir,
               const std::string& out_dir) {
  CharVocab vocab;
  auto net = load_model(model_dir, checkpoint, vocab);
  DecodeConfig decode_cfg = cfg.decode();
  double target_h = cfg.train().target_median_height;
  fs::create_directories(out_dir);
  for (const auto& file : split_files(data_dir)) {
    FormDocument form = load_form(file);
    FieldMaps fields = run_inference(*net, form, vocab, target_h);
    DecodedForm pred = decode(fields, decode_cfg);
    std::string name = fs::path(file).filename().string();
    write_text((fs::path(out_dir) / name).string(),
               serialize_decoded(pred, form.page_width, form.page_height));
  }
  std::cout << "decoded " << split_files(data_dir).size() << " forms into " << out_dir << "\n";
  return 0;
}

int run_eval(const KeyValueConfig& cfg, const std::string& pred_dir, const std::string& gt_dir) {
  EvalOptions opts = cfg.eval();
  EvalReport report;
  for (const auto& gt_file : split_files(gt_dir)) {
    std::string name = fs::path(gt_file).filename().string();
    fs::path pred_file = fs::path(pred_dir) / name;
    if (!fs::exists(pred_file)) throw ValidationError("missing prediction for " + name);
    FormDocument gt = load_form(gt_file);
    FormDocument pred = load_form(pred_file.string());
    report += evaluate_form(form_to_decoded(pred), gt, opts);
  }
  std::cout << report_table(report);
  std::cout << report_machine_lines(report);
  return 0;
}

int run_link_heuristic(const std::string& input_dir, DistanceMode mode,
                       const std::string& out_dir) {
  PrCounts counts;
  if (!out_dir.empty()) fs::create_directories(out_dir);
  for (const auto& file : split_files(input_dir)) {
    FormDocument doc = load_form(file);
    auto pairs = heuristic_link(doc.entities, mode);
    std::set<std::pair<int, int>> gt(doc.links.begin(), doc.links.end());
    for (const auto& p : pairs) {
      if (gt.count(p))
        ++counts.tp;
      else
        ++counts.fp;
    }
    std::set<std::pair<int, int>> predicted(pairs.begin(), pairs.end());
    for (const auto& p : gt)
      if (!predicted.count(p)) ++counts.fn;
    if (!out_dir.empty()) {
      FormDocument out = doc;
      out.links.assign(pairs.begin(), pairs.end());
      for (auto& e : out.entities) e.links.clear();
      for (auto [q, a] : out.links) {
        for (auto& e : out.entities)
          if (e.id == q || e.id == a) e.links.emplace_back(q, a);
      }
      save_form(out, (fs::path(out_dir) / fs::path(file).filename()).string());
    }
  }
  std::cout << "heuristic.linking.precision=" << counts.precision() << "\n"
            << "heuristic.linking.recall=" << counts.recall() << "\n"
            << "heuristic.linking.f1=" << counts.f1() << "\n";
  return 0;
}

int run_render(const KeyValueConfig& cfg, const std::string& data_dir,
               const std::string& model_dir, const std::string& checkpoint,
               const std::string& out_dir) {
  DecodeConfig decode_cfg = cfg.decode();
  TrainConfig train_cfg = cfg.train();
  fs::create_directories(out_dir);
  CharVocab vocab;
  std::unique_ptr<FormNet<float>> net;
  std::vector<FormDocument> forms;
  for (const auto& file : split_files(data_dir)) forms.push_back(load_form(file));
  if (!model_dir.empty())
    net = load_model(model_dir, checkpoint, vocab);
  else
    vocab = build_vocab(forms, cfg.get_int("chargrid.vocab_n", 90));

  auto files = split_files(data_dir);
  for (size_t i = 0; i < forms.size(); ++i) {
    const FormDocument& form = forms[i];
    CharGrid grid = rasterize(form, vocab, train_cfg.target_median_height);
    FieldMaps fields;
    if (net) {
      fields = run_inference(*net, form, vocab, train_cfg.target_median_height);
    } else {
      FieldGeometry geom = make_field_geometry(grid, cfg.get_int("net.field_stride", 4));
      auto targets = encode_targets<float>(form, geom, 4, 1, train_cfg.target_radius);
      fields = fields_from_targets(targets, geom);
    }
    DecodedForm decoded = decode(fields, decode_cfg);
    std::string name = fs::path(files[i]).stem().string() + ".svg";
    write_text((fs::path(out_dir) / name).string(), render_svg(grid, fields, decoded));
  }
  std::cout << "rendered " << forms.size() << " forms into " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"char-grid form understanding: entity labeling and linking"};
  app.require_subcommand(1);

  Common common;

  auto* stats = app.add_subcommand("stats", "corpus statistics for a split directory");
  std::string stats_dir;
  stats->add_option("--split", stats_dir, "directory of annotation json files")->required();

  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  std::string synth_out, synth_mode = "easy";
  uint64_t synth_seed = 0;
  int synth_forms = -1;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--mode", synth_mode, "easy|hard")->check(CLI::IsMember({"easy", "hard"}));
  synth->add_option("--forms", synth_forms, "number of forms");
  add_common(synth, common);

  auto* train = app.add_subcommand("train", "train on a split directory");
  std::string train_data, train_out;
  int train_epochs = -1;
  int64_t train_seed = -1;
  train->add_option("--data", train_data, "training annotation directory")->required();
  train->add_option("--out", train_out, "output directory for checkpoints and logs")->required();
  train->add_option("--epochs", train_epochs, "override train.epochs");
  train->add_option("--seed", train_seed, "override train.seed");
  add_common(train, common);

  auto* decode_cmd = app.add_subcommand("decode", "run a checkpoint over a split");
  std::string dec_model, dec_ckpt, dec_data, dec_out;
  decode_cmd->add_option("--model", dec_model, "model directory from `train`")->required();
  decode_cmd->add_option("--checkpoint", dec_ckpt, "checkpoint file (default ckpt_final.mspw)");
  decode_cmd->add_option("--data", dec_data, "annotation directory")->required();
  decode_cmd->add_option("--out", dec_out, "prediction output directory")->required();
  add_common(decode_cmd, common);

  auto* eval_cmd = app.add_subcommand("eval", "score predictions against ground truth");
  std::string eval_pred, eval_gt;
  double eval_iou = -1;
  eval_cmd->add_option("--pred", eval_pred, "prediction directory")->required();
  eval_cmd->add_option("--gt", eval_gt, "ground-truth directory")->required();
  eval_cmd->add_option("--iou", eval_iou, "IoU threshold (default 0.8)");
  add_common(eval_cmd, common);

  auto* heur = app.add_subcommand("link-heuristic", "nearest-question baseline linker");
  std::string heur_input, heur_distance = "center", heur_out;
  heur->add_option("--input", heur_input, "annotation directory (gt or decoded labels)")
      ->required();
  heur->add_option("--distance", heur_distance, "center|edge")
      ->check(CLI::IsMember({"center", "edge"}));
  heur->add_option("--out", heur_out, "write linked forms here");

  auto* render = app.add_subcommand("render", "render forms as SVG overlays");
  std::string render_data, render_model, render_ckpt, render_out;
  render->add_option("--data", render_data, "annotation directory")->required();
  render->add_option("--out", render_out, "output directory")->required();
  render->add_option("--model", render_model, "model directory; omitted: render targets");
  render->add_option("--checkpoint", render_ckpt, "checkpoint file");
  add_common(render, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    KeyValueConfig cfg = common.load();
    if (*stats) return run_stats(stats_dir);
    if (*synth) {
      cfg.set("synth.seed", std::to_string(synth_seed));
      cfg.set("synth.mode", synth_mode);
      if (synth_forms > 0) cfg.set("synth.n_forms", std::to_string(synth_forms));
      return run_synth(cfg, synth_out);
    }
    if (*train) {
      if (train_epochs >= 0) cfg.set("train.epochs", std::to_string(train_epochs));
      if (train_seed >= 0) cfg.set("train.seed", std::to_string(train_seed));
      return run_train(cfg, train_data, train_out);
    }
    if (*decode_cmd) return run_decode(cfg, dec_model, dec_ckpt, dec_data, dec_out);
    if (*eval_cmd) {
      if (eval_iou > 0) cfg.set("eval.iou_threshold", std::to_string(eval_iou));
      return run_eval(cfg, eval_pred, eval_gt);
    }
    if (*heur)
      return run_link_heuristic(
          heur_input, heur_distance == "edge" ? DistanceMode::nearest_edge : DistanceMode::center,
          heur_out);
    if (*render) return run_render(cfg, render_data, render_model, render_ckpt, render_out);
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << " (byte " << e.byte_offset << ")\n";
    return 1;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
