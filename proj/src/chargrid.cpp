#include "formlink/chargrid.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "formlink/rng.hpp"

namespace formlink {

namespace {

unsigned char fold_upper(unsigned char c) {
  return (c >= 'a' && c <= 'z') ? static_cast<unsigned char>(c - 'a' + 'A') : c;
}

}  // namespace

void CharVocab::rebuild_lookup() {
  lookup_.fill(0);
  for (size_t i = 0; i < chars.size(); ++i) lookup_[chars[i]] = static_cast<int>(i) + 1;
}

CharVocab build_vocab(const std::vector<FormDocument>& corpus, int n) {
  if (corpus.empty()) throw std::invalid_argument("build_vocab: empty corpus");
  if (n < 1) throw std::invalid_argument("build_vocab: n must be >= 1");
  std::array<long long, 256> freq{};
  long long total = 0;
  for (const auto& form : corpus)
    for (const auto& e : form.entities)
      for (const auto& w : e.words)
        for (unsigned char c : w.text) {
          ++freq[fold_upper(c)];
          ++total;
        }
  if (total == 0) throw std::invalid_argument("build_vocab: corpus contains no characters");

  std::vector<int> order;
  for (int c = 0; c < 256; ++c)
    if (freq[static_cast<size_t>(c)] > 0) order.push_back(c);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (freq[static_cast<size_t>(a)] != freq[static_cast<size_t>(b)])
      return freq[static_cast<size_t>(a)] > freq[static_cast<size_t>(b)];
    return a < b;  // ties by ascending code point
  });
  if (static_cast<int>(order.size()) > n) order.resize(static_cast<size_t>(n));

  CharVocab vocab;
  for (int c : order) vocab.chars.push_back(static_cast<unsigned char>(c));
  vocab.rebuild_lookup();
  return vocab;
}

void save_vocab(const CharVocab& vocab, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  char buf[4];
  for (unsigned char c : vocab.chars) {
    std::snprintf(buf, sizeof(buf), "%02x", c);
    out << buf << "\n";
  }
}

CharVocab load_vocab(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  CharVocab vocab;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    vocab.chars.push_back(static_cast<unsigned char>(std::stoi(line, nullptr, 16)));
  }
  vocab.rebuild_lookup();
  return vocab;
}

double median_word_height(const FormDocument& form) {
  std::vector<int> heights;
  for (const auto& e : form.entities)
    for (const auto& w : e.words) heights.push_back(w.box.height());
  if (heights.empty()) throw std::invalid_argument("form has no words");
  std::sort(heights.begin(), heights.end());
  size_t n = heights.size();
  if (n % 2 == 1) return heights[n / 2];
  return 0.5 * (heights[n / 2 - 1] + heights[n / 2]);
}

CharGrid rasterize(const FormDocument& form, const CharVocab& vocab,
                   double target_median_height) {
  if (target_median_height < 1.0)
    throw std::invalid_argument("rasterize: target median height must be >= 1");
  double med = median_word_height(form);
  double scale = med / target_median_height;
  if (!(scale > 0))
    throw std::invalid_argument("rasterize: degenerate scale from median height " +
                                std::to_string(med));

  CharGrid grid;
  grid.scale = scale;
  grid.n_char = vocab.size();
  grid.height = static_cast<int>(std::ceil(form.page_height / scale));
  grid.width = static_cast<int>(std::ceil(form.page_width / scale));
  if (grid.height < 1 || grid.width < 1)
    throw std::invalid_argument("rasterize: degenerate grid dimensions");
  grid.cells.assign(static_cast<size_t>(grid.height) * grid.width, 0);

  for (const auto& e : form.entities)
    for (const auto& w : e.words) {
      if (w.text.empty() || w.box.width() <= 0 || w.box.height() <= 0) continue;
      int c0 = std::max(0, static_cast<int>(std::floor(w.box.x1 / scale)));
      int c1 = std::min(grid.width, static_cast<int>(std::ceil(w.box.x2 / scale)));
      int r0 = std::max(0, static_cast<int>(std::floor(w.box.y1 / scale)));
      int r1 = std::min(grid.height, static_cast<int>(std::ceil(w.box.y2 / scale)));
      int n = static_cast<int>(w.text.size());
      for (int c = c0; c < c1; ++c) {
        double center = (c + 0.5) * scale;
        double t = (center - w.box.x1) / w.box.width();
        int slot = std::clamp(static_cast<int>(std::floor(t * n)), 0, n - 1);
        int idx = vocab.index_of(fold_upper(static_cast<unsigned char>(w.text[slot])));
        for (int r = r0; r < r1; ++r)
          grid.at(r, c) = static_cast<uint16_t>(idx);  // later words overwrite
      }
    }
  return grid;
}

FormDocument augment(const FormDocument& form, const AugmentConfig& cfg) {
  if (cfg.p_char_replace < 0 || cfg.p_char_replace > 1)
    throw std::invalid_argument("augment: p_char_replace outside [0,1]");
  Rng rng(Rng::mix(cfg.seed, 0x617567ULL));
  FormDocument out = form;

  // 1. character replacement, one draw per character
  if (cfg.p_char_replace > 0 && !cfg.replacement_chars.empty()) {
    for (auto& e : out.entities)
      for (auto& w : e.words)
        for (auto& ch : w.text)
          if (rng.uniform() < cfg.p_char_replace) {
            int pick = rng.uniform_int(0, static_cast<int>(cfg.replacement_chars.size()) - 1);
            ch = cfg.replacement_chars[static_cast<size_t>(pick)];
          }
  }

  double cell_px = 1.0;
  if (cfg.max_shift > 0 || cfg.max_pad > 0) {
    cell_px = median_word_height(out) / cfg.target_median_height;
    if (!(cell_px > 0)) cell_px = 1.0;
  }

  // 2. per-entity shift in whole cells
  if (cfg.max_shift > 0) {
    for (auto& e : out.entities) {
      int dx = static_cast<int>(std::lround(rng.uniform_int(-cfg.max_shift, cfg.max_shift) * cell_px));
      int dy = static_cast<int>(std::lround(rng.uniform_int(-cfg.max_shift, cfg.max_shift) * cell_px));
      auto shift = [&](Box& b) {
        b.x1 += dx;
        b.x2 += dx;
        b.y1 += dy;
        b.y2 += dy;
      };
      shift(e.box);
      for (auto& w : e.words) shift(w.box);
    }
  }

  // 3. global affine about the page center
  if (cfg.max_rotate_deg != 0 || cfg.max_shear != 0 || cfg.scale_lo != 1 || cfg.scale_hi != 1) {
    double theta = rng.uniform(-cfg.max_rotate_deg, cfg.max_rotate_deg) * 3.14159265358979323846 / 180.0;
    double shear = rng.uniform(-cfg.max_shear, cfg.max_shear);
    double k = rng.uniform(cfg.scale_lo, cfg.scale_hi);
    double cx = 0.5 * out.page_width, cy = 0.5 * out.page_height;
    double ct = std::cos(theta), st = std::sin(theta);
    auto map = [&](double x, double y, double& ox, double& oy) {
      x -= cx;
      y -= cy;
      double xs = x + shear * y;
      ox = k * (ct * xs - st * y) + cx;
      oy = k * (st * xs + ct * y) + cy;
    };
    auto warp = [&](Box& b) {
      double xs[4], ys[4];
      map(b.x1, b.y1, xs[0], ys[0]);
      map(b.x2, b.y1, xs[1], ys[1]);
      map(b.x1, b.y2, xs[2], ys[2]);
      map(b.x2, b.y2, xs[3], ys[3]);
      b.x1 = static_cast<int>(std::lround(*std::min_element(xs, xs + 4)));
      b.x2 = static_cast<int>(std::lround(*std::max_element(xs, xs + 4)));
      b.y1 = static_cast<int>(std::lround(*std::min_element(ys, ys + 4)));
      b.y2 = static_cast<int>(std::lround(*std::max_element(ys, ys + 4)));
    };
    for (auto& e : out.entities) {
      warp(e.box);
      for (auto& w : e.words) warp(w.box);
    }
  }

  // 4. background padding
  if (cfg.max_pad > 0) {
    int pl = static_cast<int>(std::lround(rng.uniform_int(0, cfg.max_pad) * cell_px));
    int pt = static_cast<int>(std::lround(rng.uniform_int(0, cfg.max_pad) * cell_px));
    int pr = static_cast<int>(std::lround(rng.uniform_int(0, cfg.max_pad) * cell_px));
    int pb = static_cast<int>(std::lround(rng.uniform_int(0, cfg.max_pad) * cell_px));
    for (auto& e : out.entities) {
      auto shift = [&](Box& b) {
        b.x1 += pl;
        b.x2 += pl;
        b.y1 += pt;
        b.y2 += pt;
      };
      shift(e.box);
      for (auto& w : e.words) shift(w.box);
    }
    out.page_width += pl + pr;
    out.page_height += pt + pb;
  }

  // clamp to the page; the transform must leave something on it
  bool any_on_page = out.entities.empty();
  for (auto& e : out.entities) {
    auto clamp_to_page = [&](Box& b) {
      b.x1 = std::clamp(b.x1, 0, out.page_width);
      b.x2 = std::clamp(b.x2, 0, out.page_width);
      b.y1 = std::clamp(b.y1, 0, out.page_height);
      b.y2 = std::clamp(b.y2, 0, out.page_height);
    };
    clamp_to_page(e.box);
    for (auto& w : e.words) clamp_to_page(w.box);
    if (e.box.width() > 0 && e.box.height() > 0) any_on_page = true;
  }
  if (!any_on_page)
    throw std::runtime_error("augment: transform pushed every entity off the page");
  return out;
}

namespace {

void put_u32le(std::vector<unsigned char>& out, uint32_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 24) & 0xff));
}

uint32_t get_u32le(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

}  // namespace

std::vector<unsigned char> grid_to_bytes(const CharGrid& grid) {
  std::vector<unsigned char> out;
  out.reserve(16 + grid.cells.size() * 2);
  out.push_back('C');
  out.push_back('G');
  out.push_back('R');
  out.push_back('D');
  put_u32le(out, static_cast<uint32_t>(grid.height));
  put_u32le(out, static_cast<uint32_t>(grid.width));
  put_u32le(out, static_cast<uint32_t>(grid.n_char));
  for (uint16_t c : grid.cells) {
    out.push_back(static_cast<unsigned char>(c & 0xff));
    out.push_back(static_cast<unsigned char>((c >> 8) & 0xff));
  }
  return out;
}

CharGrid grid_from_bytes(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 16 || bytes[0] != 'C' || bytes[1] != 'G' || bytes[2] != 'R' ||
      bytes[3] != 'D')
    throw std::runtime_error("grid_from_bytes: bad magic");
  CharGrid grid;
  grid.height = static_cast<int>(get_u32le(bytes.data() + 4));
  grid.width = static_cast<int>(get_u32le(bytes.data() + 8));
  grid.n_char = static_cast<int>(get_u32le(bytes.data() + 12));
  size_t n = static_cast<size_t>(grid.height) * grid.width;
  if (bytes.size() != 16 + 2 * n) throw std::runtime_error("grid_from_bytes: truncated payload");
  grid.cells.resize(n);
  for (size_t i = 0; i < n; ++i) {
    uint16_t v = static_cast<uint16_t>(bytes[16 + 2 * i] | (bytes[16 + 2 * i + 1] << 8));
    if (v > grid.n_char) throw std::runtime_error("grid_from_bytes: cell index out of range");
    grid.cells[i] = v;
  }
  return grid;
}

void save_grid(const CharGrid& grid, const std::string& path) {
  auto bytes = grid_to_bytes(grid);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

CharGrid load_grid(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return grid_from_bytes(bytes);
}

}  // namespace formlink
