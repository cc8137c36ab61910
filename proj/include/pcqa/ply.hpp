#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pcqa/point_cloud.hpp"

namespace pcqa {

enum class PlyEncoding { ascii, binary_little_endian };

struct PlyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace ply_detail {

enum class ScalarType { i8, u8, i16, u16, i32, u32, f32, f64 };

inline bool scalar_type_from_name(std::string_view s, ScalarType& out) {
  if (s == "char" || s == "int8") out = ScalarType::i8;
  else if (s == "uchar" || s == "uint8") out = ScalarType::u8;
  else if (s == "short" || s == "int16") out = ScalarType::i16;
  else if (s == "ushort" || s == "uint16") out = ScalarType::u16;
  else if (s == "int" || s == "int32") out = ScalarType::i32;
  else if (s == "uint" || s == "uint32") out = ScalarType::u32;
  else if (s == "float" || s == "float32") out = ScalarType::f32;
  else if (s == "double" || s == "float64") out = ScalarType::f64;
  else return false;
  return true;
}

inline std::size_t scalar_size(ScalarType t) {
  switch (t) {
    case ScalarType::i8:
    case ScalarType::u8: return 1;
    case ScalarType::i16:
    case ScalarType::u16: return 2;
    case ScalarType::i32:
    case ScalarType::u32:
    case ScalarType::f32: return 4;
    case ScalarType::f64: return 8;
  }
  return 0;
}

struct Property {
  std::string name;
  ScalarType type = ScalarType::f32;
  bool is_list = false;
  ScalarType count_type = ScalarType::u8;
};

struct Element {
  std::string name;
  std::size_t count = 0;
  std::vector<Property> properties;
};

struct Header {
  PlyEncoding encoding = PlyEncoding::ascii;
  std::vector<Element> elements;
  std::size_t body_offset = 0;  // byte offset of the first body byte
  std::size_t line_count = 0;   // number of header lines including end_header
};

[[noreturn]] inline void fail(const std::string& path, std::size_t line, const std::string& msg) {
  throw PlyError(path + ":" + std::to_string(line) + ": " + msg);
}

[[noreturn]] inline void fail_at_byte(const std::string& path, std::size_t offset, const std::string& msg) {
  throw PlyError(path + ": byte " + std::to_string(offset) + ": " + msg);
}

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline Header parse_header(const std::string& path, std::string_view data) {
  Header h;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  bool saw_end = false;
  bool saw_format = false;
  while (pos < data.size()) {
    std::size_t eol = data.find('\n', pos);
    if (eol == std::string_view::npos) eol = data.size();
    std::string_view line = data.substr(pos, eol - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    ++line_no;
    pos = eol == data.size() ? eol : eol + 1;

    if (line_no == 1) {
      if (line != "ply") fail(path, 1, "not a PLY file (missing 'ply' magic)");
      continue;
    }
    const auto tok = split_ws(line);
    if (tok.empty()) continue;
    if (tok[0] == "comment" || tok[0] == "obj_info") continue;
    if (tok[0] == "format") {
      if (tok.size() != 3) fail(path, line_no, "malformed format line");
      if (tok[2] != "1.0") fail(path, line_no, "unsupported PLY version '" + std::string(tok[2]) + "'");
      if (tok[1] == "ascii") h.encoding = PlyEncoding::ascii;
      else if (tok[1] == "binary_little_endian") h.encoding = PlyEncoding::binary_little_endian;
      else fail(path, line_no, "unsupported format '" + std::string(tok[1]) + "' (expected ascii or binary_little_endian)");
      saw_format = true;
      continue;
    }
    if (tok[0] == "element") {
      if (tok.size() != 3) fail(path, line_no, "malformed element line");
      Element e;
      e.name = std::string(tok[1]);
      std::size_t count = 0;
      const auto* first = tok[2].data();
      const auto res = std::from_chars(first, first + tok[2].size(), count);
      if (res.ec != std::errc{} || res.ptr != first + tok[2].size())
        fail(path, line_no, "invalid element count '" + std::string(tok[2]) + "'");
      e.count = count;
      h.elements.push_back(std::move(e));
      continue;
    }
    if (tok[0] == "property") {
      if (h.elements.empty()) fail(path, line_no, "property before any element");
      Property p;
      if (tok.size() == 5 && tok[1] == "list") {
        p.is_list = true;
        if (!scalar_type_from_name(tok[2], p.count_type) || !scalar_type_from_name(tok[3], p.type))
          fail(path, line_no, "unknown property type in list");
        p.name = std::string(tok[4]);
      } else if (tok.size() == 3) {
        if (!scalar_type_from_name(tok[1], p.type))
          fail(path, line_no, "unknown property type '" + std::string(tok[1]) + "'");
        p.name = std::string(tok[2]);
      } else {
        fail(path, line_no, "malformed property line");
      }
      h.elements.back().properties.push_back(std::move(p));
      continue;
    }
    if (tok[0] == "end_header") {
      saw_end = true;
      h.body_offset = pos;
      h.line_count = line_no;
      break;
    }
    fail(path, line_no, "unrecognized header keyword '" + std::string(tok[0]) + "'");
  }
  if (!saw_end) fail(path, line_no, "malformed header: missing end_header");
  if (!saw_format) fail(path, h.line_count, "malformed header: missing format line");
  return h;
}

// Per-vertex slots of the six required properties inside the property list.
struct VertexLayout {
  int ix = -1, iy = -1, iz = -1, ir = -1, ig = -1, ib = -1;
};

inline VertexLayout vertex_layout(const std::string& path, const Header& h, const Element& vertex) {
  VertexLayout lay;
  for (std::size_t p = 0; p < vertex.properties.size(); ++p) {
    const Property& prop = vertex.properties[p];
    if (prop.is_list) continue;
    const auto idx = static_cast<int>(p);
    if (prop.name == "x") lay.ix = idx;
    else if (prop.name == "y") lay.iy = idx;
    else if (prop.name == "z") lay.iz = idx;
    else if (prop.name == "red") lay.ir = idx;
    else if (prop.name == "green") lay.ig = idx;
    else if (prop.name == "blue") lay.ib = idx;
  }
  const auto missing = [&](const char* name) {
    fail(path, h.line_count, std::string("vertex element is missing required property '") + name + "'");
  };
  if (lay.ix < 0) missing("x");
  if (lay.iy < 0) missing("y");
  if (lay.iz < 0) missing("z");
  if (lay.ir < 0) missing("red");
  if (lay.ig < 0) missing("green");
  if (lay.ib < 0) missing("blue");
  for (int idx : {lay.ix, lay.iy, lay.iz}) {
    const Property& p = vertex.properties[static_cast<std::size_t>(idx)];
    if (p.type != ScalarType::f32 && p.type != ScalarType::f64)
      fail(path, h.line_count, "property '" + p.name + "' must be float or double");
  }
  for (int idx : {lay.ir, lay.ig, lay.ib}) {
    const Property& p = vertex.properties[static_cast<std::size_t>(idx)];
    if (p.type != ScalarType::u8)
      fail(path, h.line_count, "property '" + p.name + "' must be uchar");
  }
  return lay;
}

inline double parse_ascii_number(const std::string& path, std::size_t line_no, std::string_view tok,
                                 ScalarType type) {
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  if (type == ScalarType::f32) {
    // parse at declared precision so ascii and binary files of the same data
    // load bit-identically
    float v = 0.f;
    const auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc{} || res.ptr != last)
      fail(path, line_no, "invalid number '" + std::string(tok) + "'");
    return static_cast<double>(v);
  }
  if (type == ScalarType::f64) {
    double v = 0.0;
    const auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc{} || res.ptr != last)
      fail(path, line_no, "invalid number '" + std::string(tok) + "'");
    return v;
  }
  long long v = 0;
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc{} || res.ptr != last)
    fail(path, line_no, "invalid integer '" + std::string(tok) + "'");
  return static_cast<double>(v);
}

inline double read_binary_scalar(const char* p, ScalarType t) {
  switch (t) {
    case ScalarType::i8: return static_cast<double>(*reinterpret_cast<const std::int8_t*>(p));
    case ScalarType::u8: return static_cast<double>(*reinterpret_cast<const std::uint8_t*>(p));
    case ScalarType::i16: { std::int16_t v; std::memcpy(&v, p, 2); return v; }
    case ScalarType::u16: { std::uint16_t v; std::memcpy(&v, p, 2); return v; }
    case ScalarType::i32: { std::int32_t v; std::memcpy(&v, p, 4); return v; }
    case ScalarType::u32: { std::uint32_t v; std::memcpy(&v, p, 4); return v; }
    case ScalarType::f32: { float v; std::memcpy(&v, p, 4); return v; }
    case ScalarType::f64: { double v; std::memcpy(&v, p, 8); return v; }
  }
  return 0.0;
}

}  // namespace ply_detail

/// Loads a colored point cloud from an ascii or binary_little_endian PLY file.
/// The vertex element must declare float/double x,y,z and uchar red,green,blue;
/// any other properties are skipped. Lightness and normals are left unset.
inline PointCloud load_ply(const std::string& path) {
  using namespace ply_detail;

  std::ifstream in(path, std::ios::binary);
  if (!in) throw PlyError(path + ": cannot open file");
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();

  const Header h = parse_header(path, data);

  std::size_t vertex_elem = h.elements.size();
  for (std::size_t e = 0; e < h.elements.size(); ++e)
    if (h.elements[e].name == "vertex") { vertex_elem = e; break; }
  if (vertex_elem == h.elements.size())
    fail(path, h.line_count, "no vertex element declared");
  const Element& vertex = h.elements[vertex_elem];
  if (vertex.count == 0) fail(path, h.line_count, "vertex element declares zero vertices");
  const VertexLayout lay = vertex_layout(path, h, vertex);

  PointCloud pc;
  pc.positions.resize(vertex.count);
  pc.colors.resize(vertex.count);

  if (h.encoding == PlyEncoding::ascii) {
    std::size_t pos = h.body_offset;
    std::size_t line_no = h.line_count;
    const auto next_line = [&](std::string_view& line) {
      while (pos < data.size()) {
        std::size_t eol = data.find('\n', pos);
        if (eol == std::string_view::npos) eol = data.size();
        line = std::string_view(data).substr(pos, eol - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        pos = eol == data.size() ? eol : eol + 1;
        ++line_no;
        if (!line.empty()) return true;
      }
      return false;
    };
    for (std::size_t e = 0; e < h.elements.size(); ++e) {
      const Element& elem = h.elements[e];
      if (e != vertex_elem) {
        if (e > vertex_elem) break;  // trailing elements are not needed
        for (std::size_t r = 0; r < elem.count; ++r) {
          std::string_view line;
          if (!next_line(line)) fail(path, line_no, "unexpected end of file in element '" + elem.name + "'");
        }
        continue;
      }
      for (std::size_t r = 0; r < vertex.count; ++r) {
        std::string_view line;
        if (!next_line(line))
          fail(path, line_no, "vertex count mismatch: header declares " + std::to_string(vertex.count) +
                                  " vertices, body ends after " + std::to_string(r));
        const auto tok = split_ws(line);
        double vals[6] = {0, 0, 0, 0, 0, 0};
        std::size_t t = 0;
        for (std::size_t p = 0; p < elem.properties.size(); ++p) {
          const Property& prop = elem.properties[p];
          if (prop.is_list) {
            if (t >= tok.size()) fail(path, line_no, "truncated vertex row");
            const auto n = static_cast<std::size_t>(parse_ascii_number(path, line_no, tok[t++], prop.count_type));
            t += n;
            if (t > tok.size()) fail(path, line_no, "truncated list property");
            continue;
          }
          if (t >= tok.size()) fail(path, line_no, "truncated vertex row");
          const std::string_view field = tok[t++];
          const int pi = static_cast<int>(p);
          if (pi == lay.ix) vals[0] = parse_ascii_number(path, line_no, field, prop.type);
          else if (pi == lay.iy) vals[1] = parse_ascii_number(path, line_no, field, prop.type);
          else if (pi == lay.iz) vals[2] = parse_ascii_number(path, line_no, field, prop.type);
          else if (pi == lay.ir) vals[3] = parse_ascii_number(path, line_no, field, prop.type);
          else if (pi == lay.ig) vals[4] = parse_ascii_number(path, line_no, field, prop.type);
          else if (pi == lay.ib) vals[5] = parse_ascii_number(path, line_no, field, prop.type);
        }
        pc.positions[r] = {vals[0], vals[1], vals[2]};
        for (int c = 0; c < 3; ++c) {
          const double v = vals[3 + c];
          if (v < 0.0 || v > 255.0) fail(path, line_no, "color component outside [0,255]");
          pc.colors[r][static_cast<std::size_t>(c)] = static_cast<std::uint8_t>(v);
        }
      }
    }
  } else {
    std::size_t off = h.body_offset;
    const auto need = [&](std::size_t bytes, const char* what) {
      if (off + bytes > data.size())
        fail_at_byte(path, off,
                     std::string("vertex count mismatch: unexpected end of file while reading ") + what);
    };
    for (std::size_t e = 0; e < h.elements.size(); ++e) {
      const Element& elem = h.elements[e];
      if (e > vertex_elem) break;
      if (e != vertex_elem) {
        // skip a leading element; only possible when its rows have fixed size
        std::size_t row = 0;
        for (const Property& p : elem.properties) {
          if (p.is_list)
            fail_at_byte(path, off, "cannot skip list property in element '" + elem.name + "' before vertex data");
          row += scalar_size(p.type);
        }
        need(row * elem.count, elem.name.c_str());
        off += row * elem.count;
        continue;
      }
      bool fixed_row = true;
      std::size_t row_size = 0;
      for (const Property& p : vertex.properties) {
        if (p.is_list) { fixed_row = false; break; }
        row_size += scalar_size(p.type);
      }
      if (fixed_row) need(row_size * vertex.count, "vertex data");
      for (std::size_t r = 0; r < vertex.count; ++r) {
        double vals[6] = {0, 0, 0, 0, 0, 0};
        for (std::size_t p = 0; p < vertex.properties.size(); ++p) {
          const Property& prop = vertex.properties[p];
          if (prop.is_list) {
            need(scalar_size(prop.count_type), "list count");
            const auto n = static_cast<std::size_t>(read_binary_scalar(data.data() + off, prop.count_type));
            off += scalar_size(prop.count_type);
            need(n * scalar_size(prop.type), "list data");
            off += n * scalar_size(prop.type);
            continue;
          }
          const std::size_t sz = scalar_size(prop.type);
          need(sz, "vertex data");
          const double v = read_binary_scalar(data.data() + off, prop.type);
          off += sz;
          const int pi = static_cast<int>(p);
          if (pi == lay.ix) vals[0] = v;
          else if (pi == lay.iy) vals[1] = v;
          else if (pi == lay.iz) vals[2] = v;
          else if (pi == lay.ir) vals[3] = v;
          else if (pi == lay.ig) vals[4] = v;
          else if (pi == lay.ib) vals[5] = v;
        }
        pc.positions[r] = {vals[0], vals[1], vals[2]};
        for (int c = 0; c < 3; ++c)
          pc.colors[r][static_cast<std::size_t>(c)] = static_cast<std::uint8_t>(vals[3 + c]);
      }
    }
  }
  return pc;
}

/// Writes positions (as float32) and colors. Round-trip through load_ply
/// reproduces colors exactly and positions to float32 precision.
inline void save_ply(const PointCloud& cloud, const std::string& path, PlyEncoding encoding) {
  check_valid(cloud);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PlyError(path + ": cannot open file for writing");

  out << "ply\n";
  out << (encoding == PlyEncoding::ascii ? "format ascii 1.0\n" : "format binary_little_endian 1.0\n");
  out << "element vertex " << cloud.size() << "\n";
  out << "property float x\nproperty float y\nproperty float z\n";
  out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out << "end_header\n";

  if (encoding == PlyEncoding::ascii) {
    char buf[128];
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      const Vec3& g = cloud.positions[i];
      const Rgb& c = cloud.colors[i];
      const int len = std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g %u %u %u\n",
                                    static_cast<double>(static_cast<float>(g.x)),
                                    static_cast<double>(static_cast<float>(g.y)),
                                    static_cast<double>(static_cast<float>(g.z)), c[0], c[1], c[2]);
      out.write(buf, len);
    }
  } else {
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      const float xyz[3] = {static_cast<float>(cloud.positions[i].x),
                            static_cast<float>(cloud.positions[i].y),
                            static_cast<float>(cloud.positions[i].z)};
      out.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
      out.write(reinterpret_cast<const char*>(cloud.colors[i].data()), 3);
    }
  }
  out.flush();
  if (!out) throw PlyError(path + ": write failed");
}

}  // namespace pcqa
