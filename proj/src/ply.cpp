#include "facepipe/ply.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <json.hpp>
#include <optional>
#include <sstream>

#include "facepipe/error.hpp"

namespace facepipe {

namespace {

enum class Scalar { Int8, UInt8, Int16, UInt16, Int32, UInt32, Float32, Float64 };

std::optional<Scalar> parse_scalar(const std::string& s) {
  if (s == "char" || s == "int8") return Scalar::Int8;
  if (s == "uchar" || s == "uint8") return Scalar::UInt8;
  if (s == "short" || s == "int16") return Scalar::Int16;
  if (s == "ushort" || s == "uint16") return Scalar::UInt16;
  if (s == "int" || s == "int32") return Scalar::Int32;
  if (s == "uint" || s == "uint32") return Scalar::UInt32;
  if (s == "float" || s == "float32") return Scalar::Float32;
  if (s == "double" || s == "float64") return Scalar::Float64;
  return std::nullopt;
}

std::size_t scalar_size(Scalar s) {
  switch (s) {
    case Scalar::Int8:
    case Scalar::UInt8: return 1;
    case Scalar::Int16:
    case Scalar::UInt16: return 2;
    case Scalar::Int32:
    case Scalar::UInt32:
    case Scalar::Float32: return 4;
    case Scalar::Float64: return 8;
  }
  return 0;
}

struct Property {
  std::string name;
  Scalar type;
  bool is_list = false;
  Scalar count_type = Scalar::UInt8;
};

struct Element {
  std::string name;
  std::size_t count = 0;
  std::vector<Property> properties;
};

enum class Format { Ascii, BinaryLE };

struct Header {
  Format format = Format::Ascii;
  std::vector<Element> elements;
  std::size_t body_offset = 0;
};

[[noreturn]] void header_error(std::size_t offset, const std::string& msg) {
  throw PlyError(PlyError::Kind::MalformedHeader, offset,
                 "PLY header malformed at byte " + std::to_string(offset) + ": " + msg);
}

Header parse_header(const std::string& data) {
  Header header;
  std::size_t pos = 0;
  bool saw_format = false;
  bool first = true;
  for (;;) {
    if (pos >= data.size()) header_error(pos, "missing end_header");
    const std::size_t line_start = pos;
    std::size_t eol = data.find('\n', pos);
    if (eol == std::string::npos) header_error(pos, "missing end_header");
    std::string line = data.substr(pos, eol - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    pos = eol + 1;

    std::istringstream in(line);
    std::string keyword;
    in >> keyword;
    if (first) {
      if (keyword != "ply") header_error(line_start, "file does not start with 'ply'");
      first = false;
      continue;
    }
    if (keyword.empty() || keyword == "comment" || keyword == "obj_info") continue;
    if (keyword == "end_header") break;
    if (keyword == "format") {
      std::string fmt, version;
      in >> fmt >> version;
      if (fmt == "ascii") header.format = Format::Ascii;
      else if (fmt == "binary_little_endian") header.format = Format::BinaryLE;
      else header_error(line_start, "unsupported format '" + fmt + "'");
      saw_format = true;
    } else if (keyword == "element") {
      Element e;
      long long count = -1;
      in >> e.name >> count;
      if (e.name.empty() || !in || count < 0) header_error(line_start, "bad element line");
      e.count = static_cast<std::size_t>(count);
      header.elements.push_back(std::move(e));
    } else if (keyword == "property") {
      if (header.elements.empty()) header_error(line_start, "property before any element");
      std::string type;
      in >> type;
      Property p;
      if (type == "list") {
        std::string count_type, item_type;
        in >> count_type >> item_type >> p.name;
        auto ct = parse_scalar(count_type);
        auto it = parse_scalar(item_type);
        if (!ct || !it || p.name.empty()) header_error(line_start, "bad list property");
        p.is_list = true;
        p.count_type = *ct;
        p.type = *it;
      } else {
        in >> p.name;
        auto t = parse_scalar(type);
        if (!t || p.name.empty()) header_error(line_start, "bad property '" + line + "'");
        p.type = *t;
      }
      header.elements.back().properties.push_back(std::move(p));
    } else {
      header_error(line_start, "unknown keyword '" + keyword + "'");
    }
  }
  if (!saw_format) header_error(0, "missing format line");
  header.body_offset = pos;
  return header;
}

struct VertexLayout {
  std::size_t element = 0;
  std::array<int, 3> xyz{-1, -1, -1};
};

VertexLayout find_vertex_layout(const Header& header) {
  VertexLayout layout;
  bool found = false;
  for (std::size_t e = 0; e < header.elements.size(); ++e) {
    if (header.elements[e].name != "vertex") continue;
    found = true;
    layout.element = e;
    const auto& props = header.elements[e].properties;
    for (std::size_t p = 0; p < props.size(); ++p) {
      const int axis = props[p].name == "x" ? 0 : props[p].name == "y" ? 1 : props[p].name == "z" ? 2 : -1;
      if (axis >= 0 && !props[p].is_list) layout.xyz[axis] = static_cast<int>(p);
    }
    break;
  }
  if (!found) header_error(0, "no vertex element");
  for (int a : layout.xyz)
    if (a < 0) header_error(0, "vertex element lacks x, y or z");
  return layout;
}

double narrow(double v, Scalar type) {
  return type == Scalar::Float32 ? static_cast<double>(static_cast<float>(v)) : v;
}

double read_le(const char* p, Scalar type) {
  auto load = [p](auto tag) {
    decltype(tag) v;
    std::memcpy(&v, p, sizeof v);
    return static_cast<double>(v);
  };
  switch (type) {
    case Scalar::Int8: return load(std::int8_t{});
    case Scalar::UInt8: return load(std::uint8_t{});
    case Scalar::Int16: return load(std::int16_t{});
    case Scalar::UInt16: return load(std::uint16_t{});
    case Scalar::Int32: return load(std::int32_t{});
    case Scalar::UInt32: return load(std::uint32_t{});
    case Scalar::Float32: return load(float{});
    case Scalar::Float64: return load(double{});
  }
  return 0.0;
}

std::vector<Vec3> read_ascii(const std::string& data, const Header& header, const VertexLayout& layout) {
  std::vector<Vec3> points;
  std::size_t pos = header.body_offset;
  std::size_t line_no = static_cast<std::size_t>(std::count(data.begin(), data.begin() + pos, '\n'));
  std::vector<double> values;

  for (std::size_t e = 0; e <= layout.element; ++e) {
    const Element& el = header.elements[e];
    const bool is_vertex = e == layout.element;
    if (is_vertex) points.reserve(el.count);
    for (std::size_t i = 0; i < el.count; ++i) {
      // Skip blank lines between records.
      std::string_view line;
      for (;;) {
        if (pos >= data.size()) {
          throw PlyError(PlyError::Kind::TruncatedBody, line_no + 1,
                         "PLY body truncated at line " + std::to_string(line_no + 1) + ": expected " +
                             std::to_string(el.count) + " " + el.name + " records, got " + std::to_string(i));
        }
        std::size_t eol = data.find('\n', pos);
        if (eol == std::string::npos) eol = data.size();
        line = std::string_view(data).substr(pos, eol - pos);
        pos = eol + 1;
        ++line_no;
        if (line.find_first_not_of(" \t\r") != std::string_view::npos) break;
      }
      if (!is_vertex) continue;

      values.clear();
      const char* p = line.data();
      const char* end = line.data() + line.size();
      auto next_number = [&](double& out) {
        while (p < end && (*p == ' ' || *p == '\t' || *p == '\r')) ++p;
        if (p >= end) return false;
        auto res = std::from_chars(p, end, out);
        if (res.ec != std::errc()) return false;
        p = res.ptr;
        return true;
      };
      for (const Property& prop : el.properties) {
        double v = 0.0;
        if (!next_number(v)) {
          throw PlyError(PlyError::Kind::TruncatedBody, line_no,
                         "PLY body truncated or unparsable at line " + std::to_string(line_no));
        }
        if (prop.is_list) {
          const auto n = static_cast<long long>(v);
          for (long long k = 0; k < n; ++k) {
            double skip;
            if (!next_number(skip))
              throw PlyError(PlyError::Kind::TruncatedBody, line_no,
                             "PLY list truncated at line " + std::to_string(line_no));
          }
          values.push_back(0.0);
        } else {
          values.push_back(narrow(v, prop.type));
        }
      }
      points.emplace_back(values[layout.xyz[0]], values[layout.xyz[1]], values[layout.xyz[2]]);
    }
  }
  return points;
}

std::vector<Vec3> read_binary(const std::string& data, const Header& header, const VertexLayout& layout) {
  std::vector<Vec3> points;
  std::size_t pos = header.body_offset;
  auto need = [&](std::size_t n) {
    if (pos + n > data.size()) {
      throw PlyError(PlyError::Kind::TruncatedBody, pos,
                     "PLY body truncated at byte " + std::to_string(pos) + ": need " + std::to_string(n) +
                         " more bytes, file has " + std::to_string(data.size() - pos));
    }
  };
  for (std::size_t e = 0; e <= layout.element; ++e) {
    const Element& el = header.elements[e];
    const bool is_vertex = e == layout.element;
    if (is_vertex) points.reserve(el.count);
    std::array<double, 3> xyz{};
    for (std::size_t i = 0; i < el.count; ++i) {
      for (std::size_t p = 0; p < el.properties.size(); ++p) {
        const Property& prop = el.properties[p];
        if (prop.is_list) {
          need(scalar_size(prop.count_type));
          const auto n = static_cast<std::size_t>(read_le(data.data() + pos, prop.count_type));
          pos += scalar_size(prop.count_type);
          need(n * scalar_size(prop.type));
          pos += n * scalar_size(prop.type);
          continue;
        }
        const std::size_t sz = scalar_size(prop.type);
        need(sz);
        if (is_vertex) {
          for (int a = 0; a < 3; ++a)
            if (layout.xyz[a] == static_cast<int>(p)) xyz[a] = read_le(data.data() + pos, prop.type);
        }
        pos += sz;
      }
      if (is_vertex) points.emplace_back(xyz[0], xyz[1], xyz[2]);
    }
  }
  return points;
}

PointCloud::Landmarks load_landmarks(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open landmark file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("landmark file " + path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw FormatError("landmark file " + path.string() + " must hold a JSON object");
  PointCloud::Landmarks marks;
  for (const auto& [name, value] : j.items()) {
    if (!value.is_array() || value.size() != 3)
      throw FormatError("landmark '" + name + "' in " + path.string() + " must be [x, y, z]");
    marks.emplace(name, Vec3(value[0].get<double>(), value[1].get<double>(), value[2].get<double>()));
  }
  return marks;
}

}  // namespace

std::filesystem::path landmark_sidecar_path(const std::filesystem::path& ply_path) {
  auto p = ply_path;
  p.replace_extension(".landmarks.json");
  return p;
}

PointCloud load_ply(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  const Header header = parse_header(data);
  const VertexLayout layout = find_vertex_layout(header);
  if (header.elements[layout.element].count == 0)
    throw PlyError(PlyError::Kind::ZeroVertices, header.body_offset,
                   "PLY " + path.string() + " declares zero vertices");

  std::vector<Vec3> points =
      header.format == Format::Ascii ? read_ascii(data, header, layout) : read_binary(data, header, layout);

  PointCloud::Landmarks marks;
  const auto sidecar = landmark_sidecar_path(path);
  if (std::filesystem::exists(sidecar)) marks = load_landmarks(sidecar);
  return PointCloud(std::move(points), std::move(marks));
}

void save_ply(const PointCloud& cloud, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size()
      << "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
  char buf[128];
  for (const Vec3& p : cloud.points()) {
    // %.9g round-trips every float32 exactly.
    const int n = std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g\n", static_cast<double>(static_cast<float>(p.x())),
                                static_cast<double>(static_cast<float>(p.y())),
                                static_cast<double>(static_cast<float>(p.z())));
    out.write(buf, n);
  }
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());

  const auto sidecar = landmark_sidecar_path(path);
  if (!cloud.landmarks().empty()) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [name, p] : cloud.landmarks()) j[name] = {p.x(), p.y(), p.z()};
    std::ofstream side(sidecar, std::ios::trunc);
    if (!side) throw IoError("cannot write " + sidecar.string());
    side << j.dump(2) << '\n';
  } else {
    // A stale sidecar would attach old landmarks to the new file.
    std::error_code ec;
    std::filesystem::remove(sidecar, ec);
  }
}

}  // namespace facepipe
