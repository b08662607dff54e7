#include "formlink/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>

#include "formlink/rng.hpp"

namespace formlink {

namespace {

// all coordinates stay multiples of 4 so that rasterization at median text
// height 3 (scale 4) is cell-exact
constexpr int kCharW = 8;
constexpr int kTextH = 12;
constexpr int kRowPitch = 40;
constexpr int kFirstRowY = 48;
constexpr int kMargin = 16;
constexpr int kBandH = 64;  // bottom band reserved for distractor lines

// questions of one form share a length so their centers form a straight
// column; otherwise a wider question in a neighbouring row could sit closer
// to an answer than its own key and break the easy-mode guarantee
const char* kQuestions5[] = {"NAME:", "DATE:", "CITY:", "CODE:", "ZONE:", "DEPT:"};
const char* kQuestions6[] = {"TOTAL:", "PHONE:", "EMAIL:", "STATE:", "OWNER:", "BATCH:"};
const char* kAnswers[] = {"JOHN", "SMITH", "ACME", "12.50", "2021", "YES",
                          "NO",   "BLUE",  "RED",  "10290", "OPEN", "SEVEN"};
const char* kHeaders[] = {"INVOICE", "REPORT", "SUMMARY", "RECEIPT", "ORDER"};
const char* kOthers[] = {"PAGE", "COPY", "DRAFT", "VOID", "MEMO", "NOTE", "FILE", "FAX"};

template <size_t N>
std::string pick(const char* (&list)[N], Rng& rng, size_t max_len = 64) {
  // rejection-free: walk forward from a uniform start until a short-enough word
  size_t start = static_cast<size_t>(rng.uniform_int(0, static_cast<int>(N) - 1));
  for (size_t i = 0; i < N; ++i) {
    const char* w = list[(start + i) % N];
    if (std::string(w).size() <= max_len) return w;
  }
  return list[start];
}

int text_w(const std::string& s) { return static_cast<int>(s.size()) * kCharW; }

Entity make_entity(int id, Label label, const std::string& text, int x, int y) {
  Entity e;
  e.id = id;
  e.label = label;
  e.text = text;
  e.box = {x, y, x + text_w(text), y + kTextH};
  e.words = {{text, e.box}};
  return e;
}

}  // namespace

FormDocument generate_form(const SynthSpec& spec, int index) {
  if (spec.page_width < 128 || spec.page_height < 160 || spec.rows < 1 || spec.columns < 1)
    throw std::invalid_argument("generate_form: spec values too small");
  Rng rng(Rng::mix(spec.seed, static_cast<uint64_t>(index) + 0x73796eULL));

  FormDocument doc;
  doc.page_width = spec.page_width;
  doc.page_height = spec.page_height;

  int max_rows = (spec.page_height - kBandH - kFirstRowY) / kRowPitch + 1;
  int rows = spec.rows;
  if (rows > max_rows) {
    std::fprintf(stderr, "synthgen: layout overflow, clamping rows %d -> %d\n", rows, max_rows);
    rows = max_rows;
  }
  const int colw = (spec.page_width - 2 * kMargin) / spec.columns;
  const size_t max_a_len = spec.columns > 1 ? 5 : 6;
  const bool short_questions = Rng(Rng::mix(spec.seed, static_cast<uint64_t>(index))).uniform() < 0.5;

  int next_id = 0;

  std::string header = pick(kHeaders, rng);
  int hx = (spec.page_width - text_w(header)) / 2 / 4 * 4;
  doc.entities.push_back(make_entity(next_id++, Label::header, header, hx, 8));

  // decoy plan for hard mode, drawn up-front; at least one per form
  std::vector<bool> decoy(static_cast<size_t>(rows * spec.columns), false);
  if (spec.mode == SynthSpec::Mode::hard) {
    bool any = false;
    for (auto&& d : decoy) {
      bool v = rng.uniform() < 0.5;
      d = v;
      any = any || v;
    }
    if (!any) decoy[0] = true;
  }

  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < spec.columns; ++c) {
      int x0 = kMargin + c * colw;
      int y = kFirstRowY + r * kRowPitch;
      std::string qt = short_questions ? pick(kQuestions5, rng) : pick(kQuestions6, rng);
      Entity q = make_entity(next_id++, Label::question, qt, x0, y);
      doc.entities.push_back(q);

      int gap = 4 * rng.uniform_int(4, 8);  // 16..32 px
      std::string at = pick(kAnswers, rng, max_a_len);
      int ax = q.box.x2 + gap;
      Entity a = make_entity(next_id++, Label::answer, at, ax, y);
      if (a.box.x2 > x0 + colw - kMargin) continue;  // slot too tight, drop the pair
      doc.entities.push_back(a);
      doc.links.emplace_back(q.id, a.id);

      if (spec.fan_out > 0 && rng.uniform() < spec.fan_out) {
        std::string at2 = pick(kAnswers, rng, max_a_len);
        int a2x = a.box.x2 + 16;
        Entity a2 = make_entity(next_id, Label::answer, at2, a2x, y);
        if (a2.box.x2 <= x0 + colw - kMargin) {
          ++next_id;
          doc.entities.push_back(a2);
          doc.links.emplace_back(q.id, a2.id);
        }
      }

      if (decoy[static_cast<size_t>(r * spec.columns + c)]) {
        // a question the answer sits closer to than its real key
        std::string dt = short_questions ? pick(kQuestions5, rng) : pick(kQuestions6, rng);
        Entity d = make_entity(next_id++, Label::question, dt, a.box.x1, y - 16);
        doc.entities.push_back(d);
      }
    }

  int band_y = spec.page_height - 40;
  int slots = 4;
  for (int s = 0; s < slots; ++s) {
    if (rng.uniform() >= spec.distractor_rate) continue;
    std::string ot = pick(kOthers, rng);
    int x = kMargin + s * ((spec.page_width - 2 * kMargin) / slots);
    doc.entities.push_back(make_entity(next_id++, Label::other, ot, x, band_y));
  }

  for (auto [qid, aid] : doc.links) {
    for (auto& e : doc.entities)
      if (e.id == qid || e.id == aid) e.links.emplace_back(qid, aid);
  }
  doc.n_word_annotations = 0;
  for (const auto& e : doc.entities) doc.n_word_annotations += static_cast<int>(e.words.size());
  doc.n_link_annotations = static_cast<int>(doc.links.size());

  if (spec.mode == SynthSpec::Mode::easy) {
    // generator invariant: the nearest question of every answer is its key
    for (auto [qid, aid] : doc.links) {
      const Entity* a = doc.find(aid);
      const Entity* best = nullptr;
      double best_d = 0;
      for (const auto& e : doc.entities) {
        if (e.label != Label::question) continue;
        double d = std::hypot(e.box.cx() - a->box.cx(), e.box.cy() - a->box.cy());
        if (!best || d < best_d) {
          best = &e;
          best_d = d;
        }
      }
      if (best && best->id != qid)
        throw std::logic_error("generate_form: easy-mode nearest-question invariant violated");
    }
  }
  return doc;
}

std::vector<FormDocument> generate(const SynthSpec& spec) {
  std::vector<FormDocument> out;
  out.reserve(static_cast<size_t>(spec.n_forms));
  for (int i = 0; i < spec.n_forms; ++i) out.push_back(generate_form(spec, i));
  return out;
}

}  // namespace formlink
