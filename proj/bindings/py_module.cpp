#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "formlink/baselines.hpp"
#include "formlink/checkpoint.hpp"
#include "formlink/config.hpp"
#include "formlink/decoder.hpp"
#include "formlink/eval.hpp"
#include "formlink/net_ops.hpp"
#include "formlink/render.hpp"
#include "formlink/synthgen.hpp"
#include "formlink/trainer.hpp"

namespace py = pybind11;
using namespace formlink;

namespace {

py::array_t<float> to_numpy(const Tensor<float>& t) {
  std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
  py::array_t<float> out(shape);
  std::copy(t.data.begin(), t.data.end(), out.mutable_data());
  return out;
}

Tensor<float> from_numpy(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
  std::vector<int> shape;
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape.push_back(static_cast<int>(a.shape(i)));
  Tensor<float> t(shape);
  std::copy(a.data(), a.data() + a.size(), t.data.begin());
  return t;
}

KeyValueConfig config_from_dict(const py::dict& d) {
  KeyValueConfig cfg;
  for (auto item : d) cfg.set(py::str(item.first), py::str(item.second));
  return cfg;
}

struct PyModel {
  std::unique_ptr<FormNet<float>> net;
  CharVocab vocab;
  double target_median_height = 3.0;

  FieldMaps infer(const FormDocument& form) const {
    return run_inference(*net, form, vocab, target_median_height);
  }
};

}  // namespace

PYBIND11_MODULE(_formlink, m) {
  m.doc() = "char-grid form understanding: joint entity labeling and linking";

  py::class_<Box>(m, "Box")
      .def(py::init<int, int, int, int>(), py::arg("x1"), py::arg("y1"), py::arg("x2"),
           py::arg("y2"))
      .def_readwrite("x1", &Box::x1)
      .def_readwrite("y1", &Box::y1)
      .def_readwrite("x2", &Box::x2)
      .def_readwrite("y2", &Box::y2)
      .def("__repr__", [](const Box& b) {
        std::ostringstream s;
        s << "Box(" << b.x1 << ", " << b.y1 << ", " << b.x2 << ", " << b.y2 << ")";
        return s.str();
      });

  py::enum_<Label>(m, "Label")
      .value("header", Label::header)
      .value("question", Label::question)
      .value("answer", Label::answer)
      .value("other", Label::other);

  py::class_<WordBox>(m, "WordBox")
      .def_readwrite("text", &WordBox::text)
      .def_readwrite("box", &WordBox::box);

  py::class_<Entity>(m, "Entity")
      .def_readwrite("id", &Entity::id)
      .def_readwrite("label", &Entity::label)
      .def_readwrite("box", &Entity::box)
      .def_readwrite("text", &Entity::text)
      .def_readwrite("words", &Entity::words)
      .def_readwrite("links", &Entity::links);

  py::class_<FormDocument>(m, "FormDocument")
      .def(py::init<>())
      .def_readwrite("page_width", &FormDocument::page_width)
      .def_readwrite("page_height", &FormDocument::page_height)
      .def_readwrite("entities", &FormDocument::entities)
      .def_readwrite("links", &FormDocument::links)
      .def("__repr__", [](const FormDocument& d) {
        std::ostringstream s;
        s << "FormDocument(" << d.entities.size() << " entities, " << d.links.size()
          << " links, " << d.page_width << "x" << d.page_height << ")";
        return s.str();
      });

  m.def("parse_form", [](const std::string& text) { return parse_form(text); },
        py::arg("json_text"));
  m.def("serialize_form", &serialize_form, py::arg("form"));
  m.def("load_form", [](const std::string& path) { return load_form(path); }, py::arg("path"));
  m.def("validate_form", &validate_form, py::arg("form"));

  py::class_<CorpusStats>(m, "CorpusStats")
      .def_readonly("n_forms", &CorpusStats::n_forms)
      .def_readonly("n_words", &CorpusStats::n_words)
      .def_readonly("n_entities", &CorpusStats::n_entities)
      .def_readonly("n_relations", &CorpusStats::n_relations)
      .def_readonly("n_relations_annotated", &CorpusStats::n_relations_annotated)
      .def_readonly("per_class", &CorpusStats::per_class);
  m.def("dataset_stats", &dataset_stats, py::arg("forms"));

  py::class_<CharVocab>(m, "CharVocab")
      .def_property_readonly("chars",
                             [](const CharVocab& v) {
                               return py::bytes(std::string(v.chars.begin(), v.chars.end()));
                             })
      .def("size", &CharVocab::size)
      .def("index_of",
           [](const CharVocab& v, const std::string& c) {
             return c.empty() ? 0 : v.index_of(static_cast<unsigned char>(c[0]));
           });
  m.def("build_vocab", &build_vocab, py::arg("corpus"), py::arg("n") = 90);

  py::class_<CharGrid>(m, "CharGrid")
      .def_readonly("height", &CharGrid::height)
      .def_readonly("width", &CharGrid::width)
      .def_readonly("n_char", &CharGrid::n_char)
      .def_readonly("scale", &CharGrid::scale)
      .def_property_readonly("cells", [](const CharGrid& g) {
        py::array_t<uint16_t> out({g.height, g.width});
        std::copy(g.cells.begin(), g.cells.end(), out.mutable_data());
        return out;
      });
  m.def("rasterize", &rasterize, py::arg("form"), py::arg("vocab"),
        py::arg("target_median_height") = 3.0);
  m.def("one_hot", [](const CharGrid& g) { return to_numpy(one_hot<float>(g)); },
        py::arg("grid"));
  m.def("grid_to_bytes", [](const CharGrid& g) {
    auto b = grid_to_bytes(g);
    return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
  });

  m.def("coordconv_channels",
        [](int h, int w) { return to_numpy(ops::coordconv_channels<float>(h, w)); },
        py::arg("height"), py::arg("width"));

  m.def("corner_pool",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
          Tensor<float> in = from_numpy(a);
          if (in.rank() != 3) throw std::invalid_argument("corner_pool: expected (C, H, W)");
          Tensor<float> out(in.shape);
          std::vector<int> ad(in.data.size()), ar(in.data.size());
          ops::detail::corner_pool_forward(in, out, ad, ar);
          return to_numpy(out);
        },
        py::arg("features"));

  py::class_<FieldGeometry>(m, "FieldGeometry")
      .def_readonly("cell_px", &FieldGeometry::cell_px)
      .def_readonly("grid_h", &FieldGeometry::grid_h)
      .def_readonly("grid_w", &FieldGeometry::grid_w)
      .def_readonly("stride", &FieldGeometry::stride)
      .def_readonly("field_h", &FieldGeometry::field_h)
      .def_readonly("field_w", &FieldGeometry::field_w);
  m.def("make_field_geometry", &make_field_geometry, py::arg("grid"), py::arg("stride") = 4);

  py::class_<FieldMaps>(m, "FieldMaps")
      .def_property_readonly("seg_key", [](const FieldMaps& f) { return to_numpy(f.seg_key); })
      .def_property_readonly("seg_full", [](const FieldMaps& f) { return to_numpy(f.seg_full); })
      .def_property_readonly("pif", [](const FieldMaps& f) { return to_numpy(f.pif); })
      .def_property_readonly("paf", [](const FieldMaps& f) { return to_numpy(f.paf); })
      .def_readonly("geom", &FieldMaps::geom);

  m.def("encode_target_fields",
        [](const FormDocument& form, const FieldGeometry& geom, int n_keypoint_classes,
           int n_link_types, double radius) {
          auto t = encode_targets<float>(form, geom, n_keypoint_classes, n_link_types, radius);
          py::dict d;
          py::array_t<int> seg({t.seg_class.dim(0), t.seg_class.dim(1)});
          std::copy(t.seg_class.data.begin(), t.seg_class.data.end(), seg.mutable_data());
          d["seg_class"] = seg;
          d["seg_key"] = to_numpy(t.seg_key);
          d["pif_conf"] = to_numpy(t.pif_conf);
          d["pif_x"] = to_numpy(t.pif_x);
          d["pif_y"] = to_numpy(t.pif_y);
          d["pif_sigma"] = to_numpy(t.pif_sigma);
          d["pif_mask"] = to_numpy(t.pif_mask);
          d["paf_conf"] = to_numpy(t.paf_conf);
          d["paf_x1"] = to_numpy(t.paf_x1);
          d["paf_y1"] = to_numpy(t.paf_y1);
          d["paf_x2"] = to_numpy(t.paf_x2);
          d["paf_y2"] = to_numpy(t.paf_y2);
          d["paf_mask"] = to_numpy(t.paf_mask);
          return d;
        },
        py::arg("form"), py::arg("geom"), py::arg("n_keypoint_classes") = 4,
        py::arg("n_link_types") = 1, py::arg("radius") = 1.0);

  m.def("target_field_maps",
        [](const FormDocument& form, const FieldGeometry& geom, double radius) {
          auto t = encode_targets<float>(form, geom, 4, 1, radius);
          return fields_from_targets(t, geom);
        },
        py::arg("form"), py::arg("geom"), py::arg("radius") = 1.0,
        "Field maps that decode back to the encoded ground truth");

  py::class_<DecodedEntity>(m, "DecodedEntity")
      .def_readonly("label", &DecodedEntity::label)
      .def_readonly("box", &DecodedEntity::box)
      .def_readonly("score", &DecodedEntity::score);
  py::class_<DecodedLink>(m, "DecodedLink")
      .def_readonly("question", &DecodedLink::question)
      .def_readonly("answer", &DecodedLink::answer)
      .def_readonly("score", &DecodedLink::score);
  py::class_<DecodedForm>(m, "DecodedForm")
      .def_readonly("entities", &DecodedForm::entities)
      .def_readonly("links", &DecodedForm::links)
      .def_readonly("n_dropped_links", &DecodedForm::n_dropped_links);

  m.def("decode_fields",
        [](const FieldMaps& fields, const py::dict& cfg) {
          KeyValueConfig kv = config_from_dict(cfg);
          return decode(fields, kv.decode());
        },
        py::arg("fields"), py::arg("config") = py::dict());
  m.def("serialize_decoded", &serialize_decoded, py::arg("decoded"), py::arg("page_width"),
        py::arg("page_height"));

  m.def("evaluate",
        [](const DecodedForm& pred, const FormDocument& gt, double iou_threshold,
           bool require_class_match) {
          EvalOptions opts;
          opts.iou_threshold = iou_threshold;
          opts.require_class_match = require_class_match;
          auto ev = evaluate_form(pred, gt, opts);
          py::dict d;
          d["labeling_precision"] = ev.labeling.precision();
          d["labeling_recall"] = ev.labeling.recall();
          d["labeling_f1"] = ev.labeling.f1();
          d["linking_precision"] = ev.linking.precision();
          d["linking_recall"] = ev.linking.recall();
          d["linking_f1"] = ev.linking.f1();
          return d;
        },
        py::arg("pred"), py::arg("gt"), py::arg("iou_threshold") = 0.8,
        py::arg("require_class_match") = true);
  m.def("box_iou", &iou, py::arg("a"), py::arg("b"));

  m.def("generate_forms",
        [](const py::dict& cfg) {
          KeyValueConfig kv = config_from_dict(cfg);
          return generate(kv.synth());
        },
        py::arg("config") = py::dict());

  m.def("heuristic_link",
        [](const FormDocument& form, const std::string& distance) {
          return heuristic_link(form.entities, distance == "edge" ? DistanceMode::nearest_edge
                                                                  : DistanceMode::center);
        },
        py::arg("form"), py::arg("distance") = "center");

  py::class_<PyModel>(m, "Model")
      .def(py::init([](const CharVocab& vocab, const py::dict& cfg, uint64_t seed) {
             auto model = std::make_unique<PyModel>();
             KeyValueConfig kv = config_from_dict(cfg);
             model->vocab = vocab;
             model->net = std::make_unique<FormNet<float>>(kv.net(vocab.size()), seed);
             model->target_median_height = kv.train().target_median_height;
             return model;
           }),
           py::arg("vocab"), py::arg("config") = py::dict(), py::arg("seed") = 0)
      .def("parameter_count",
           [](const PyModel& m_) { return m_.net->params().parameter_count(); })
      .def("parameters",
           [](const PyModel& m_) {
             py::dict d;
             for (const auto& e : m_.net->params().entries) d[e.name.c_str()] = to_numpy(e.value);
             return d;
           })
      .def("forward",
           [](const PyModel& m_,
              const py::array_t<float, py::array::c_style | py::array::forcecast>& onehot) {
             Graph<float> g;
             auto out = m_.net->forward(g, from_numpy(onehot));
             py::dict d;
             d["seg_key"] = to_numpy(g.value(out.seg_key.id));
             d["seg_full"] = to_numpy(g.value(out.seg_full.id));
             d["pif"] = to_numpy(g.value(out.pif.id));
             d["paf"] = to_numpy(g.value(out.paf.id));
             return d;
           },
           py::arg("grid_onehot"))
      .def("infer", [](const PyModel& m_, const FormDocument& form) { return m_.infer(form); },
           py::arg("form"))
      .def("save", [](const PyModel& m_, const std::string& path) {
        save_params(m_.net->params(), path);
      })
      .def("load", [](PyModel& m_, const std::string& path) {
        load_params(m_.net->params(), path);
      });

  m.def("train",
        [](const std::vector<FormDocument>& forms, const CharVocab& vocab, const py::dict& cfg) {
          KeyValueConfig kv = config_from_dict(cfg);
          TrainOptions opts;
          opts.net = kv.net(vocab.size());
          opts.loss = kv.loss();
          opts.train = kv.train();
          opts.augment = kv.augment();
          auto model = std::make_unique<PyModel>();
          model->vocab = vocab;
          model->target_median_height = opts.train.target_median_height;
          model->net = train_net(forms, vocab, opts);
          return model;
        },
        py::arg("forms"), py::arg("vocab"), py::arg("config") = py::dict());

  m.def("render_svg", &render_svg, py::arg("grid"), py::arg("fields"), py::arg("decoded"));
}
