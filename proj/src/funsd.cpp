#include "formlink/funsd.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

namespace formlink {

using nlohmann::json;

const char* label_name(Label l) {
  switch (l) {
    case Label::header: return "header";
    case Label::question: return "question";
    case Label::answer: return "answer";
    case Label::other: return "other";
  }
  return "other";
}

std::optional<Label> label_from_name(std::string_view name) {
  if (name == "header") return Label::header;
  if (name == "question") return Label::question;
  if (name == "answer") return Label::answer;
  if (name == "other") return Label::other;
  return std::nullopt;
}

const Entity* FormDocument::find(int id) const {
  for (const auto& e : entities)
    if (e.id == id) return &e;
  return nullptr;
}

namespace {

std::string trimmed(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

Box box_from_json(const json& j, const char* where) {
  if (!j.is_array() || j.size() != 4)
    throw ParseError(std::string("expected a 4-element box array in ") + where, 0);
  Box b{j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
  // noisy annotations occasionally reverse a coordinate pair
  if (b.x1 > b.x2) std::swap(b.x1, b.x2);
  if (b.y1 > b.y2) std::swap(b.y1, b.y2);
  return b;
}

Box clamp_box(const Box& b, int w, int h, bool* changed) {
  Box c = b;
  c.x1 = std::clamp(c.x1, 0, w);
  c.x2 = std::clamp(c.x2, 0, w);
  c.y1 = std::clamp(c.y1, 0, h);
  c.y2 = std::clamp(c.y2, 0, h);
  if (changed && !(c == b)) *changed = true;
  return c;
}

Box union_box(const Box& a, const Box& b) {
  return {std::min(a.x1, b.x1), std::min(a.y1, b.y1), std::max(a.x2, b.x2),
          std::max(a.y2, b.y2)};
}

}  // namespace

FormDocument parse_form(std::string_view json_text, ParseReport* report) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed annotation: ") + e.what(), e.byte);
  }
  if (!root.is_object() || !root.contains("form") || !root["form"].is_array())
    throw ParseError("annotation must be an object with a top-level \"form\" array", 0);

  ParseReport local;
  ParseReport& rep = report ? *report : local;

  FormDocument doc;
  if (root.contains("page_width")) doc.page_width = root["page_width"].get<int>();
  if (root.contains("page_height")) doc.page_height = root["page_height"].get<int>();

  struct RawEntity {
    Entity entity;
    std::vector<std::pair<int, int>> linking;
  };
  std::vector<RawEntity> raw;

  for (const auto& je : root["form"]) {
    RawEntity re;
    Entity& e = re.entity;
    if (!je.contains("id")) throw ParseError("entity missing \"id\"", 0);
    e.id = je["id"].get<int>();
    if (e.id < 0) throw ParseError("entity id must be non-negative", 0);
    std::string lbl = je.value("label", "other");
    auto parsed = label_from_name(lbl);
    if (!parsed) throw ParseError("unknown label \"" + lbl + "\"", 0);
    e.label = *parsed;
    e.box = box_from_json(je.at("box"), "entity box");
    e.text = je.value("text", "");
    if (je.contains("words")) {
      for (const auto& jw : je["words"]) {
        ++doc.n_word_annotations;
        WordBox w;
        w.text = trimmed(jw.value("text", ""));
        w.box = box_from_json(jw.at("box"), "word box");
        if (w.text.empty()) {
          ++rep.n_words_dropped;
          continue;
        }
        e.words.push_back(std::move(w));
      }
    }
    if (je.contains("linking")) {
      for (const auto& jl : je["linking"]) {
        if (!jl.is_array() || jl.size() != 2)
          throw ParseError("linking entries must be [id, id] pairs", 0);
        re.linking.emplace_back(jl[0].get<int>(), jl[1].get<int>());
      }
    }
    raw.push_back(std::move(re));
  }

  // page extent: stated, or derived from the annotation boxes
  if (doc.page_width <= 0 || doc.page_height <= 0) {
    int w = 1, h = 1;
    for (const auto& re : raw) {
      w = std::max(w, re.entity.box.x2);
      h = std::max(h, re.entity.box.y2);
      for (const auto& wd : re.entity.words) {
        w = std::max(w, wd.box.x2);
        h = std::max(h, wd.box.y2);
      }
    }
    doc.page_width = w;
    doc.page_height = h;
  }

  std::unordered_map<int, Label> label_of;
  for (auto& re : raw) {
    Entity& e = re.entity;
    bool clamped = false;
    std::vector<WordBox> kept;
    for (auto& w : e.words) {
      w.box = clamp_box(w.box, doc.page_width, doc.page_height, &clamped);
      if (w.box.width() <= 0 || w.box.height() <= 0) {
        ++rep.n_words_dropped;
        continue;
      }
      kept.push_back(std::move(w));
    }
    e.words = std::move(kept);
    e.box = clamp_box(e.box, doc.page_width, doc.page_height, &clamped);
    for (const auto& w : e.words) e.box = union_box(e.box, w.box);
    if (clamped) ++rep.n_boxes_clamped;
    if (label_of.count(e.id))
      throw ValidationError("duplicate entity id " + std::to_string(e.id));
    label_of[e.id] = e.label;
  }

  // collect annotated pairs, deduplicated regardless of direction
  std::set<std::pair<int, int>> seen_undirected;
  std::vector<std::pair<int, int>> pairs;
  std::vector<std::pair<int, int>> dangling;
  for (const auto& re : raw)
    for (auto [a, b] : re.linking) {
      if (!label_of.count(a) || !label_of.count(b)) {
        dangling.emplace_back(a, b);
        continue;
      }
      auto key = std::minmax(a, b);
      if (seen_undirected.insert(key).second) pairs.emplace_back(a, b);
    }
  if (!dangling.empty()) {
    std::ostringstream msg;
    msg << "linking references missing entity ids:";
    for (auto [a, b] : dangling) msg << " (" << a << "," << b << ")";
    throw ValidationError(msg.str());
  }

  for (auto& re : raw) doc.entities.push_back(std::move(re.entity));
  doc.n_link_annotations = static_cast<int>(pairs.size());

  // normalize to directed question -> answer
  std::set<std::pair<int, int>> stored;
  for (auto [a, b] : pairs) {
    Label la = label_of[a], lb = label_of[b];
    std::pair<int, int> directed;
    if (la == Label::question && lb == Label::answer)
      directed = {a, b};
    else if (lb == Label::question && la == Label::answer)
      directed = {b, a};
    else {
      rep.invalid_links.push_back(
          {a, b,
           std::string(label_name(la)) + "->" + label_name(lb) +
               " is not a question->answer pair"});
      continue;
    }
    if (stored.insert(directed).second) doc.links.push_back(directed);
  }

  // participant lists mirror the stored directed pairs
  std::unordered_map<int, Entity*> by_id;
  for (auto& e : doc.entities) by_id[e.id] = &e;
  for (auto [q, a] : doc.links) {
    by_id[q]->links.emplace_back(q, a);
    by_id[a]->links.emplace_back(q, a);
  }
  return doc;
}

FormDocument load_form(const std::string& path, ParseReport* report) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_form(ss.str(), report);
}

std::string serialize_form(const FormDocument& doc) {
  json root;
  root["page_width"] = doc.page_width;
  root["page_height"] = doc.page_height;
  json form = json::array();
  // every entity lists each stored pair it participates in, as annotated data does
  for (const auto& e : doc.entities) {
    json je;
    je["id"] = e.id;
    je["label"] = label_name(e.label);
    je["box"] = {e.box.x1, e.box.y1, e.box.x2, e.box.y2};
    je["text"] = e.text;
    json words = json::array();
    for (const auto& w : e.words)
      words.push_back({{"text", w.text}, {"box", {w.box.x1, w.box.y1, w.box.x2, w.box.y2}}});
    je["words"] = std::move(words);
    json linking = json::array();
    for (auto [q, a] : doc.links)
      if (q == e.id || a == e.id) linking.push_back({q, a});
    je["linking"] = std::move(linking);
    form.push_back(std::move(je));
  }
  root["form"] = std::move(form);
  return root.dump(1);
}

void save_form(const FormDocument& doc, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << serialize_form(doc);
}

std::vector<std::string> validate_form(const FormDocument& doc) {
  std::vector<std::string> issues;
  std::unordered_map<int, const Entity*> by_id;
  for (const auto& e : doc.entities) {
    if (e.id < 0) issues.push_back("entity id " + std::to_string(e.id) + " is negative");
    if (by_id.count(e.id)) issues.push_back("duplicate entity id " + std::to_string(e.id));
    by_id[e.id] = &e;
    for (const auto& w : e.words) {
      if (w.text.empty()) issues.push_back("empty word text in entity " + std::to_string(e.id));
      if (w.box.x1 > w.box.x2 || w.box.y1 > w.box.y2)
        issues.push_back("reversed word box in entity " + std::to_string(e.id));
      if (w.box.x1 < e.box.x1 || w.box.y1 < e.box.y1 || w.box.x2 > e.box.x2 ||
          w.box.y2 > e.box.y2)
        issues.push_back("word box outside entity box in entity " + std::to_string(e.id));
    }
  }
  for (auto [q, a] : doc.links) {
    auto qi = by_id.find(q), ai = by_id.find(a);
    if (qi == by_id.end() || ai == by_id.end()) {
      issues.push_back("link (" + std::to_string(q) + "," + std::to_string(a) +
                       ") references a missing entity");
      continue;
    }
    if (qi->second->label != Label::question || ai->second->label != Label::answer)
      issues.push_back("link (" + std::to_string(q) + "," + std::to_string(a) +
                       ") is not question->answer");
  }
  return issues;
}

CorpusStats dataset_stats(const std::vector<FormDocument>& forms) {
  CorpusStats s;
  s.n_forms = static_cast<int>(forms.size());
  for (const auto& f : forms) {
    s.n_words += f.n_word_annotations;
    s.n_entities += static_cast<long long>(f.entities.size());
    s.n_relations += static_cast<long long>(f.links.size());
    s.n_relations_annotated += f.n_link_annotations;
    for (const auto& e : f.entities) s.per_class[static_cast<size_t>(e.label)] += 1;
  }
  return s;
}

std::vector<FormDocument> load_split(const std::string& dir, ParseReport* report) {
  namespace fs = std::filesystem;
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".json")
      files.push_back(entry.path().string());
  std::sort(files.begin(), files.end());
  std::vector<FormDocument> forms;
  forms.reserve(files.size());
  for (const auto& f : files) forms.push_back(load_form(f, report));
  return forms;
}

std::string stats_table(const CorpusStats& s) {
  std::ostringstream out;
  out << "forms      " << s.n_forms << "\n"
      << "words      " << s.n_words << "\n"
      << "entities   " << s.n_entities << "\n"
      << "relations  " << s.n_relations;
  if (s.n_relations_annotated != s.n_relations)
    out << "  (annotated pairs of any label: " << s.n_relations_annotated << ")";
  out << "\n";
  for (int i = 0; i < kNumLabels; ++i)
    out << "  " << label_name(static_cast<Label>(i)) << ": " << s.per_class[static_cast<size_t>(i)]
        << "\n";
  return out.str();
}

std::string stats_machine_lines(const CorpusStats& s) {
  std::ostringstream out;
  out << "stats.forms=" << s.n_forms << "\n"
      << "stats.words=" << s.n_words << "\n"
      << "stats.entities=" << s.n_entities << "\n"
      << "stats.relations=" << s.n_relations << "\n"
      << "stats.relations_annotated=" << s.n_relations_annotated << "\n";
  for (int i = 0; i < kNumLabels; ++i)
    out << "stats.class." << label_name(static_cast<Label>(i)) << "="
        << s.per_class[static_cast<size_t>(i)] << "\n";
  return out.str();
}

}  // namespace formlink
