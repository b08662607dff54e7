#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "formlink/funsd.hpp"
#include "formlink/nd_array.hpp"

namespace formlink {

/// Character vocabulary. Index 0 is reserved for background / out-of-vocabulary;
/// characters map to 1..size(). Characters are case-folded to uppercase bytes.
struct CharVocab {
  std::vector<unsigned char> chars;  // ordered by frequency desc, code point asc

  int size() const { return static_cast<int>(chars.size()); }
  /// 1-based index, or 0 when the character is out of vocabulary.
  int index_of(unsigned char c) const { return lookup_[c]; }
  void rebuild_lookup();

 private:
  std::array<int, 256> lookup_{};
};

CharVocab build_vocab(const std::vector<FormDocument>& corpus, int n);

// one two-digit hex byte per line, in vocabulary order
void save_vocab(const CharVocab& vocab, const std::string& path);
CharVocab load_vocab(const std::string& path);

/// H x W map of character indices in {0..n_char}; `scale` is page pixels per
/// grid cell.
struct CharGrid {
  int height = 0;
  int width = 0;
  int n_char = 0;
  double scale = 1.0;
  std::vector<uint16_t> cells;  // row-major

  uint16_t at(int y, int x) const { return cells[static_cast<size_t>(y) * width + x]; }
  uint16_t& at(int y, int x) { return cells[static_cast<size_t>(y) * width + x]; }
};

/// Median word-box height in page pixels (average of the two middles for even
/// counts). Throws if the form has no words.
double median_word_height(const FormDocument& form);

CharGrid rasterize(const FormDocument& form, const CharVocab& vocab,
                   double target_median_height = 3.0);

template <typename T>
Tensor<T> one_hot(const CharGrid& grid) {
  Tensor<T> out({grid.n_char + 1, grid.height, grid.width});
  size_t plane = static_cast<size_t>(grid.height) * grid.width;
  for (size_t i = 0; i < plane; ++i) out.data[static_cast<size_t>(grid.cells[i]) * plane + i] = T(1);
  return out;
}

struct AugmentConfig {
  double p_char_replace = 0.0;
  int max_shift = 0;             // grid cells
  double max_rotate_deg = 0.0;
  double max_shear = 0.0;
  double scale_lo = 1.0, scale_hi = 1.0;
  int max_pad = 0;               // grid cells of background margin per side
  double target_median_height = 3.0;  // converts cell-based ranges to pixels
  std::string replacement_chars;      // usually the vocabulary characters
  uint64_t seed = 0;
};

/// Applies, in order: character replacement, per-entity box shift, global
/// affine of all boxes, background padding. Labels and links pass through
/// unchanged. Deterministic given cfg.seed.
FormDocument augment(const FormDocument& form, const AugmentConfig& cfg);

// binary char-grid interchange: "CGRD", H, W, n_char (u32 LE), cells (u16 LE)
std::vector<unsigned char> grid_to_bytes(const CharGrid& grid);
CharGrid grid_from_bytes(const std::vector<unsigned char>& bytes);
void save_grid(const CharGrid& grid, const std::string& path);
CharGrid load_grid(const std::string& path);

}  // namespace formlink
