#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace formlink {

struct ParseError : std::runtime_error {
  size_t byte_offset;
  ParseError(const std::string& msg, size_t offset)
      : std::runtime_error(msg), byte_offset(offset) {}
};

struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Axis-aligned pixel rectangle, upper-left (x1, y1) to lower-right (x2, y2).
struct Box {
  int x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  int width() const { return x2 - x1; }
  int height() const { return y2 - y1; }
  long long area() const {
    return static_cast<long long>(width()) * static_cast<long long>(height());
  }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  bool operator==(const Box&) const = default;
};

enum class Label : uint8_t { header = 0, question = 1, answer = 2, other = 3 };
constexpr int kNumLabels = 4;

const char* label_name(Label l);
std::optional<Label> label_from_name(std::string_view name);

struct WordBox {
  std::string text;
  Box box;
  bool operator==(const WordBox&) const = default;
};

struct Entity {
  int id = 0;
  Label label = Label::other;
  Box box;
  std::string text;
  std::vector<WordBox> words;
  std::vector<std::pair<int, int>> links;  // pairs this entity participates in
  bool operator==(const Entity&) const = default;
};

struct FormDocument {
  int page_width = 0;
  int page_height = 0;
  std::vector<Entity> entities;
  std::vector<std::pair<int, int>> links;  // directed (question_id, answer_id)

  // raw annotation tallies, kept for corpus statistics
  int n_word_annotations = 0;
  int n_link_annotations = 0;

  const Entity* find(int id) const;
  bool operator==(const FormDocument&) const = default;
};

/// Per-document irregularities found while parsing; the document itself is
/// always returned satisfying the model invariants.
struct ParseReport {
  struct BadLink {
    int id1, id2;
    std::string reason;
  };
  std::vector<BadLink> invalid_links;  // annotated pairs that are not question->answer
  int n_words_dropped = 0;
  int n_boxes_clamped = 0;
};

FormDocument parse_form(std::string_view json_text, ParseReport* report = nullptr);
FormDocument load_form(const std::string& path, ParseReport* report = nullptr);
std::string serialize_form(const FormDocument& doc);
void save_form(const FormDocument& doc, const std::string& path);

/// Checks the model invariants; returns human-readable violations (empty
/// means valid).
std::vector<std::string> validate_form(const FormDocument& doc);

struct CorpusStats {
  int n_forms = 0;
  long long n_words = 0;     // word annotations, including ones dropped as empty
  long long n_entities = 0;
  long long n_relations = 0;            // stored directed question->answer pairs
  long long n_relations_annotated = 0;  // unique annotated pairs of any label
  std::array<long long, kNumLabels> per_class{};

  bool operator==(const CorpusStats&) const = default;
};

CorpusStats dataset_stats(const std::vector<FormDocument>& forms);

/// Loads every *.json file in a directory, sorted by filename.
std::vector<FormDocument> load_split(const std::string& dir, ParseReport* report = nullptr);

std::string stats_table(const CorpusStats& s);
std::string stats_machine_lines(const CorpusStats& s);

}  // namespace formlink
