#include "defletter/font.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace defletter {
namespace {

constexpr int kMaxCompositeDepth = 8;

[[noreturn]] void bad_font(const std::string& why) { throw Error(ErrorCode::UnparseableFont, why); }

/// Bounds-checked big-endian reader.
class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint8_t u8(size_t at) const {
    check(at, 1);
    return data_[at];
  }
  std::uint16_t u16(size_t at) const {
    check(at, 2);
    return static_cast<std::uint16_t>((data_[at] << 8) | data_[at + 1]);
  }
  std::int16_t i16(size_t at) const { return static_cast<std::int16_t>(u16(at)); }
  std::uint32_t u32(size_t at) const {
    check(at, 4);
    return (std::uint32_t{data_[at]} << 24) | (std::uint32_t{data_[at + 1]} << 16) |
           (std::uint32_t{data_[at + 2]} << 8) | std::uint32_t{data_[at + 3]};
  }
  size_t size() const { return data_.size(); }

 private:
  void check(size_t at, size_t n) const {
    if (at > data_.size() || n > data_.size() - at) bad_font("read past end of font data");
  }
  std::span<const std::uint8_t> data_;
};

Point midpoint(Point a, Point b) { return {(a.x + b.x) / 2, (a.y + b.y) / 2}; }

struct RawPoint {
  Point p;
  bool on_curve;
};

/// Converts TrueType on/off-curve point sequences into explicit segments.
Contour build_contour(const std::vector<RawPoint>& pts) {
  Contour contour;
  const size_t n = pts.size();
  if (n < 2) return contour;

  size_t start = n;
  for (size_t i = 0; i < n; ++i) {
    if (pts[i].on_curve) {
      start = i;
      break;
    }
  }
  Point first;
  size_t begin;
  if (start == n) {
    // all off-curve: the contour starts at an implied midpoint
    first = midpoint(pts[0].p, pts[1].p);
    begin = 1;
  } else {
    first = pts[start].p;
    begin = start + 1;
  }

  Point cursor = first;
  std::optional<Point> pending;
  for (size_t step = 0; step < n; ++step) {
    const RawPoint& rp = pts[(begin + step) % n];
    if (rp.on_curve) {
      if (pending) {
        contour.push_back({cursor, *pending, rp.p, true});
        pending.reset();
      } else {
        contour.push_back({cursor, {}, rp.p, false});
      }
      cursor = rp.p;
    } else {
      if (pending) {
        Point mid = midpoint(*pending, rp.p);
        contour.push_back({cursor, *pending, mid, true});
        cursor = mid;
      }
      pending = rp.p;
    }
  }
  if (pending) {
    contour.push_back({cursor, *pending, first, true});
  } else if (cursor.x != first.x || cursor.y != first.y) {
    contour.push_back({cursor, {}, first, false});
  }
  return contour;
}

}  // namespace

std::vector<Polyline> Outline::flatten(double tolerance) const {
  std::vector<Polyline> out;
  for (const auto& contour : contours) {
    Polyline line;
    for (const auto& seg : contour) {
      if (line.empty()) line.push_back(seg.from);
      if (!seg.quadratic) {
        line.push_back(seg.to);
        continue;
      }
      // deviation of a quadratic from its chord is bounded by |p0 - 2c + p2| / 4
      double ddx = seg.from.x - 2 * seg.control.x + seg.to.x;
      double ddy = seg.from.y - 2 * seg.control.y + seg.to.y;
      double dev = std::sqrt(ddx * ddx + ddy * ddy) / 4;
      int steps = std::max(1, static_cast<int>(std::ceil(std::sqrt(dev / tolerance))));
      for (int i = 1; i <= steps; ++i) {
        double t = static_cast<double>(i) / steps;
        double u = 1 - t;
        line.push_back({u * u * seg.from.x + 2 * u * t * seg.control.x + t * t * seg.to.x,
                        u * u * seg.from.y + 2 * u * t * seg.control.y + t * t * seg.to.y});
      }
    }
    if (line.size() >= 3) out.push_back(std::move(line));
  }
  return out;
}

Font Font::from_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::UnparseableFont, "cannot open font file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_bytes(std::move(bytes));
}

Font Font::from_bytes(std::vector<std::uint8_t> bytes) {
  Font font;
  font.data_ = std::move(bytes);
  font.parse();
  return font;
}

std::optional<Font::Table> Font::find_table(const char tag[4]) const {
  Reader r(data_);
  std::uint16_t num_tables = r.u16(font_offset_ + 4);
  for (std::uint16_t i = 0; i < num_tables; ++i) {
    size_t rec = font_offset_ + 12 + 16u * i;
    r.u32(rec + 12);  // bounds check the whole record
    if (std::memcmp(&data_[rec], tag, 4) == 0) {
      Table t{r.u32(rec + 8), r.u32(rec + 12)};
      if (t.offset > data_.size() || t.length > data_.size() - t.offset) bad_font("table extends past end of file");
      return t;
    }
  }
  return std::nullopt;
}

void Font::parse() {
  Reader r(data_);
  std::uint32_t tag = r.u32(0);
  if (tag == 0x74746366) {  // 'ttcf': use the first face of a collection
    font_offset_ = r.u32(12);
    tag = r.u32(font_offset_);
  }
  if (tag == 0x4F54544F) bad_font("CFF-flavoured OpenType outlines are not supported");
  if (tag != 0x00010000 && tag != 0x74727565) bad_font("not a TrueType font");

  auto head = find_table("head");
  auto maxp = find_table("maxp");
  auto loca = find_table("loca");
  auto glyf = find_table("glyf");
  auto cmap = find_table("cmap");
  if (!head || !maxp || !loca || !glyf || !cmap) bad_font("missing one of head/maxp/loca/glyf/cmap");

  units_per_em_ = r.u16(head->offset + 18);
  if (units_per_em_ == 0) bad_font("unitsPerEm is zero");
  long_loca_ = r.i16(head->offset + 50) != 0;
  num_glyphs_ = r.u16(maxp->offset + 4);
  glyf_ = *glyf;
  loca_ = *loca;

  // Prefer full-repertoire Unicode (format 12), then BMP (format 4), then anything usable.
  std::uint16_t n = r.u16(cmap->offset + 2);
  int best_rank = -1;
  for (std::uint16_t i = 0; i < n; ++i) {
    size_t rec = cmap->offset + 4 + 8u * i;
    std::uint16_t platform = r.u16(rec);
    std::uint16_t encoding = r.u16(rec + 2);
    std::uint32_t sub = cmap->offset + r.u32(rec + 4);
    std::uint16_t format = r.u16(sub);
    bool unicode = platform == 0 || (platform == 3 && (encoding == 1 || encoding == 10));
    int rank = -1;
    if (format == 12 && unicode) rank = 5;
    else if (format == 4 && unicode) rank = 4;
    else if (format == 6 && unicode) rank = 3;
    else if (format == 4 && platform == 3 && encoding == 0) rank = 2;  // symbol fonts
    else if (format == 0 || format == 6) rank = 1;
    if (rank > best_rank) {
      best_rank = rank;
      cmap_subtable_ = sub;
      cmap_format_ = format;
    }
  }
  if (best_rank < 0) bad_font("no supported cmap subtable");
}

std::optional<std::uint16_t> Font::glyph_index(char32_t cp) const {
  Reader r(data_);
  const size_t s = cmap_subtable_;
  std::uint32_t glyph = 0;
  switch (cmap_format_) {
    case 0:
      if (cp < 256) glyph = r.u8(s + 6 + cp);
      break;
    case 4: {
      std::uint16_t segx2 = r.u16(s + 6);
      size_t ends = s + 14;
      size_t starts = ends + segx2 + 2;
      size_t deltas = starts + segx2;
      size_t ranges = deltas + segx2;
      if (cp > 0xFFFF) break;
      for (std::uint16_t i = 0; i < segx2; i += 2) {
        std::uint16_t end = r.u16(ends + i);
        if (cp > end) continue;
        std::uint16_t start = r.u16(starts + i);
        if (cp < start) break;
        std::uint16_t delta = r.u16(deltas + i);
        std::uint16_t range = r.u16(ranges + i);
        if (range == 0) {
          glyph = static_cast<std::uint16_t>(cp + delta);
        } else {
          size_t at = ranges + i + range + 2 * (cp - start);
          std::uint16_t g = r.u16(at);
          if (g != 0) glyph = static_cast<std::uint16_t>(g + delta);
        }
        break;
      }
      break;
    }
    case 6: {
      std::uint16_t first = r.u16(s + 6);
      std::uint16_t count = r.u16(s + 8);
      if (cp >= first && cp < static_cast<char32_t>(first) + count) glyph = r.u16(s + 10 + 2 * (cp - first));
      break;
    }
    case 12: {
      std::uint32_t groups = r.u32(s + 12);
      for (std::uint32_t i = 0; i < groups; ++i) {
        size_t g = s + 16 + 12u * i;
        std::uint32_t start = r.u32(g);
        std::uint32_t end = r.u32(g + 4);
        if (cp >= start && cp <= end) {
          glyph = r.u32(g + 8) + (cp - start);
          break;
        }
      }
      break;
    }
    default:
      break;
  }
  if (glyph == 0 || glyph >= num_glyphs_) return std::nullopt;
  return static_cast<std::uint16_t>(glyph);
}

std::pair<std::uint32_t, std::uint32_t> Font::glyph_range(std::uint16_t glyph) const {
  Reader r(data_);
  std::uint32_t begin, end;
  if (long_loca_) {
    begin = r.u32(loca_.offset + 4u * glyph);
    end = r.u32(loca_.offset + 4u * glyph + 4);
  } else {
    begin = 2u * r.u16(loca_.offset + 2u * glyph);
    end = 2u * r.u16(loca_.offset + 2u * glyph + 2);
  }
  if (end < begin || end > glyf_.length) bad_font("corrupt loca entry");
  return {glyf_.offset + begin, glyf_.offset + end};
}

Outline Font::outline(char32_t codepoint) const {
  auto glyph = glyph_index(codepoint);
  if (!glyph) throw Error(ErrorCode::MissingGlyph, "font has no glyph for U+" + std::to_string(codepoint));
  return outline_for_glyph(*glyph);
}

Outline Font::outline_for_glyph(std::uint16_t glyph) const {
  Outline out;
  append_glyph(glyph, 1, 0, 0, 1, 0, 0, 0, out);
  return out;
}

void Font::append_glyph(std::uint16_t glyph, double xx, double xy, double yx, double yy, double dx, double dy,
                        int depth, Outline& out) const {
  if (depth > kMaxCompositeDepth) bad_font("composite glyph nesting too deep");
  if (glyph >= num_glyphs_) bad_font("glyph index out of range");
  auto [begin, end] = glyph_range(glyph);
  if (begin == end) return;  // no outline

  Reader r(data_);
  std::int16_t contours = r.i16(begin);
  auto transform = [&](double x, double y) { return Point{xx * x + yx * y + dx, xy * x + yy * y + dy}; };

  if (contours >= 0) {
    std::vector<std::uint16_t> end_points(static_cast<size_t>(contours));
    size_t at = begin + 10;
    for (auto& e : end_points) {
      e = r.u16(at);
      at += 2;
    }
    if (contours == 0) return;
    size_t num_points = static_cast<size_t>(end_points.back()) + 1;
    std::uint16_t instr_len = r.u16(at);
    at += 2 + instr_len;

    std::vector<std::uint8_t> flags;
    flags.reserve(num_points);
    while (flags.size() < num_points) {
      std::uint8_t f = r.u8(at++);
      flags.push_back(f);
      if (f & 0x08) {
        std::uint8_t repeat = r.u8(at++);
        for (int k = 0; k < repeat && flags.size() < num_points; ++k) flags.push_back(f);
      }
    }

    std::vector<RawPoint> pts(num_points);
    int coord = 0;
    for (size_t i = 0; i < num_points; ++i) {
      std::uint8_t f = flags[i];
      if (f & 0x02) {
        int v = r.u8(at++);
        coord += (f & 0x10) ? v : -v;
      } else if (!(f & 0x10)) {
        coord += r.i16(at);
        at += 2;
      }
      pts[i].p.x = coord;
      pts[i].on_curve = (f & 0x01) != 0;
    }
    coord = 0;
    for (size_t i = 0; i < num_points; ++i) {
      std::uint8_t f = flags[i];
      if (f & 0x04) {
        int v = r.u8(at++);
        coord += (f & 0x20) ? v : -v;
      } else if (!(f & 0x20)) {
        coord += r.i16(at);
        at += 2;
      }
      pts[i].p.y = coord;
    }
    for (auto& p : pts) p.p = transform(p.p.x, p.p.y);

    size_t first = 0;
    for (auto last : end_points) {
      if (last < first || last >= num_points) bad_font("bad contour end point");
      std::vector<RawPoint> contour(pts.begin() + static_cast<std::ptrdiff_t>(first),
                                    pts.begin() + static_cast<std::ptrdiff_t>(last) + 1);
      Contour c = build_contour(contour);
      if (!c.empty()) out.contours.push_back(std::move(c));
      first = static_cast<size_t>(last) + 1;
    }
    return;
  }

  // composite glyph
  size_t at = begin + 10;
  constexpr std::uint16_t kArgsAreWords = 0x0001, kArgsAreXY = 0x0002, kScale = 0x0008, kMore = 0x0020,
                          kXYScale = 0x0040, kTwoByTwo = 0x0080;
  auto f2dot14 = [&](size_t pos) { return r.i16(pos) / 16384.0; };
  std::uint16_t flags;
  do {
    flags = r.u16(at);
    std::uint16_t component = r.u16(at + 2);
    at += 4;
    double ox = 0, oy = 0;
    if (flags & kArgsAreWords) {
      if (flags & kArgsAreXY) {
        ox = r.i16(at);
        oy = r.i16(at + 2);
      }
      at += 4;
    } else {
      if (flags & kArgsAreXY) {
        ox = static_cast<std::int8_t>(r.u8(at));
        oy = static_cast<std::int8_t>(r.u8(at + 1));
      }
      at += 2;
    }
    // point-matching anchors (args not XY) are treated as a zero offset
    double a = 1, b = 0, c = 0, d = 1;
    if (flags & kScale) {
      a = d = f2dot14(at);
      at += 2;
    } else if (flags & kXYScale) {
      a = f2dot14(at);
      d = f2dot14(at + 2);
      at += 4;
    } else if (flags & kTwoByTwo) {
      a = f2dot14(at);
      b = f2dot14(at + 2);
      c = f2dot14(at + 4);
      d = f2dot14(at + 6);
      at += 8;
    }
    // compose child transform (a b; c d; ox oy) with the parent's
    double nxx = a * xx + b * yx, nxy = a * xy + b * yy;
    double nyx = c * xx + d * yx, nyy = c * xy + d * yy;
    Point o = transform(ox, oy);
    append_glyph(component, nxx, nxy, nyx, nyy, o.x, o.y, depth + 1, out);
  } while (flags & kMore);
}

}  // namespace defletter
