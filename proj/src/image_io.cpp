#include "dsm/image_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "dsm/common.hpp"

namespace dsm {

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArgumentError("cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return buf;
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; }

// Header token reader; PNM-style '#' comments optional.
struct Cursor {
  const std::string& buf;
  std::size_t pos = 0;
  bool comments = false;

  void skip_separators() {
    while (pos < buf.size()) {
      if (is_space(buf[pos])) {
        ++pos;
      } else if (comments && buf[pos] == '#') {
        while (pos < buf.size() && buf[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
  }

  std::string token(const char* what) {
    skip_separators();
    const std::size_t start = pos;
    while (pos < buf.size() && !is_space(buf[pos])) ++pos;
    if (pos == start) throw FormatError(std::string("missing ") + what, start);
    return buf.substr(start, pos - start);
  }

  int int_token(const char* what) {
    const std::size_t at = pos;
    const std::string t = token(what);
    try {
      std::size_t used = 0;
      const int v = std::stoi(t, &used);
      if (used != t.size()) throw std::invalid_argument(t);
      return v;
    } catch (const std::exception&) {
      throw FormatError(std::string("bad ") + what + " '" + t + "'", at);
    }
  }

  double double_token(const char* what) {
    const std::size_t at = pos;
    const std::string t = token(what);
    try {
      std::size_t used = 0;
      const double v = std::stod(t, &used);
      if (used != t.size()) throw std::invalid_argument(t);
      return v;
    } catch (const std::exception&) {
      throw FormatError(std::string("bad ") + what + " '" + t + "'", at);
    }
  }

  // The single whitespace byte that separates the header from the payload.
  void raster_separator() {
    if (pos >= buf.size() || !is_space(buf[pos]))
      throw FormatError("missing raster separator", pos);
    ++pos;
  }
};

float load_float(const unsigned char* p, bool little) {
  std::uint32_t u;
  if (little)
    u = std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
        std::uint32_t(p[3]) << 24;
  else
    u = std::uint32_t(p[3]) | std::uint32_t(p[2]) << 8 | std::uint32_t(p[1]) << 16 |
        std::uint32_t(p[0]) << 24;
  return std::bit_cast<float>(u);
}

ScalarMap read_pfm_buffer(const std::string& buf, MapRole role) {
  if (buf.size() < 2) throw FormatError("missing magic", 0);
  const std::string magic = buf.substr(0, 2);
  if (magic == "PF") throw FormatError("color PFM not supported", 0);
  if (magic != "Pf") throw FormatError("not a PFM file", 0);

  Cursor cur{buf, 2};
  const int w = cur.int_token("width");
  const int h = cur.int_token("height");
  if (w < 1 || h < 1) throw FormatError("bad dimensions", 2);
  const std::size_t scale_at = cur.pos;
  const double scale = cur.double_token("scale");
  if (scale == 0.0 || !std::isfinite(scale)) throw FormatError("bad scale", scale_at);
  cur.raster_separator();

  const std::size_t need = std::size_t(w) * h * 4;
  if (buf.size() - cur.pos < need) throw FormatError("truncated pixel data", buf.size());

  const bool little = scale < 0.0;
  const auto* bytes = reinterpret_cast<const unsigned char*>(buf.data()) + cur.pos;
  ScalarMap map(h, w, role);
  for (int r = 0; r < h; ++r) {
    const int y = h - 1 - r;  // file rows run bottom-up
    for (int x = 0; x < w; ++x)
      map.at(y, x) = load_float(bytes + (std::size_t(r) * w + x) * 4, little);
  }
  return map;
}

}  // namespace

ScalarMap read_pfm(const std::string& path, MapRole role) {
  return read_pfm_buffer(slurp(path), role);
}

void write_pfm(const std::string& path, const ScalarMap& map) {
  if (map.empty()) throw ArgumentError("write_pfm: empty map");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArgumentError("cannot open " + path);
  out << "Pf\n" << map.w << " " << map.h << "\n-1\n";
  std::string row(std::size_t(map.w) * 4, '\0');
  for (int r = 0; r < map.h; ++r) {
    const int y = map.h - 1 - r;
    for (int x = 0; x < map.w; ++x) {
      const auto u = std::bit_cast<std::uint32_t>(float(map.at(y, x)));
      unsigned char* p = reinterpret_cast<unsigned char*>(row.data()) + std::size_t(x) * 4;
      p[0] = u & 0xff;
      p[1] = (u >> 8) & 0xff;
      p[2] = (u >> 16) & 0xff;
      p[3] = (u >> 24) & 0xff;
    }
    out.write(row.data(), std::streamsize(row.size()));
  }
  if (!out) throw ArgumentError("write failed: " + path);
}

ScalarMap read_image(const std::string& path) {
  const std::string buf = slurp(path);
  if (buf.size() < 2) throw FormatError("missing magic", 0);
  const std::string magic = buf.substr(0, 2);
  if (magic == "Pf" || magic == "PF") return read_pfm_buffer(buf, MapRole::Luminance);
  if (magic != "P5" && magic != "P6") throw FormatError("unsupported image format", 0);

  Cursor cur{buf, 2, /*comments=*/true};
  const int w = cur.int_token("width");
  const int h = cur.int_token("height");
  if (w < 1 || h < 1) throw FormatError("bad dimensions", 2);
  const std::size_t maxval_at = cur.pos;
  const int maxval = cur.int_token("maxval");
  if (maxval < 1 || maxval > 255) throw FormatError("unsupported maxval", maxval_at);
  cur.raster_separator();

  const int ch = magic == "P6" ? 3 : 1;
  const std::size_t need = std::size_t(w) * h * ch;
  if (buf.size() - cur.pos < need) throw FormatError("truncated pixel data", buf.size());

  const auto* bytes = reinterpret_cast<const unsigned char*>(buf.data()) + cur.pos;
  ScalarMap map(h, w, MapRole::Luminance);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const unsigned char* p = bytes + (std::size_t(y) * w + x) * ch;
      const double v =
          ch == 1 ? double(p[0]) : 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
      map.at(y, x) = v / double(maxval);
    }
  return map;
}

void write_pgm_heatmap(const std::string& path, const ScalarMap& map, double lo, double hi) {
  if (map.empty()) throw ArgumentError("write_pgm_heatmap: empty map");
  if (!(hi >= lo)) throw ArgumentError("write_pgm_heatmap: hi must be >= lo");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArgumentError("cannot open " + path);
  out << "P5\n" << map.w << " " << map.h << "\n255\n";
  std::string row(std::size_t(map.w), '\0');
  for (int y = 0; y < map.h; ++y) {
    for (int x = 0; x < map.w; ++x) {
      const double v = map.at(y, x);
      double t = 128.0;
      if (hi > lo && std::isfinite(v))
        t = std::clamp((v - lo) / (hi - lo) * 255.0, 0.0, 255.0);
      else if (!std::isfinite(v))
        t = 0.0;
      row[x] = char(static_cast<unsigned char>(std::lround(t)));
    }
    out.write(row.data(), std::streamsize(row.size()));
  }
  if (!out) throw ArgumentError("write failed: " + path);
}

}  // namespace dsm
