#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

#include "gnf/sdf.hpp"

namespace gnf {

double TriMesh::face_area(std::size_t f) const {
  const auto& t = faces[f];
  return 0.5 * (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]).norm();
}

Vec3 TriMesh::face_normal(std::size_t f) const {
  const auto& t = faces[f];
  const Vec3 n = (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]);
  const double len = n.norm();
  return len > 0 ? Vec3(n / len) : Vec3::Zero();
}

double TriMesh::area() const {
  double a = 0.0;
  for (std::size_t f = 0; f < faces.size(); ++f) a += face_area(f);
  return a;
}

std::size_t TriMesh::remove_degenerate_faces() {
  const std::size_t before = faces.size();
  const auto nv = vertices.size();
  std::erase_if(faces, [&](const std::array<std::uint32_t, 3>& t) {
    if (t[0] >= nv || t[1] >= nv || t[2] >= nv) return true;
    if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) return true;
    const Vec3 n = (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]);
    return !(n.norm() > 0.0);
  });
  return before - faces.size();
}

bool is_watertight(const TriMesh& mesh) {
  if (mesh.faces.empty()) return false;
  std::unordered_map<std::uint64_t, int> edges;
  edges.reserve(mesh.faces.size() * 3);
  for (const auto& t : mesh.faces) {
    for (int k = 0; k < 3; ++k) {
      std::uint64_t a = t[k], b = t[(k + 1) % 3];
      if (a > b) std::swap(a, b);
      edges[(a << 32) | b] += 1;
    }
  }
  return std::all_of(edges.begin(), edges.end(), [](const auto& e) { return e.second == 2; });
}

namespace {

std::string lower_ext(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e;
}

TriMesh load_obj(std::istream& in, const std::string& name) {
  TriMesh mesh;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag)) continue;
    if (tag == "v") {
      Vec3 v;
      if (!(ss >> v.x() >> v.y() >> v.z())) {
        throw ContractError(name + ":" + std::to_string(line_no) + ": malformed vertex");
      }
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::vector<std::int64_t> idx;
      std::string tok;
      while (ss >> tok) {
        const auto slash = tok.find('/');
        const std::int64_t i = std::stoll(tok.substr(0, slash));
        idx.push_back(i > 0 ? i - 1 : static_cast<std::int64_t>(mesh.vertices.size()) + i);
      }
      if (idx.size() < 3) throw ContractError(name + ":" + std::to_string(line_no) + ": face needs 3 vertices");
      for (std::size_t k = 1; k + 1 < idx.size(); ++k) {
        if (idx[0] < 0 || idx[k] < 0 || idx[k + 1] < 0) {
          throw ContractError(name + ":" + std::to_string(line_no) + ": vertex index out of range");
        }
        mesh.faces.push_back({static_cast<std::uint32_t>(idx[0]), static_cast<std::uint32_t>(idx[k]),
                              static_cast<std::uint32_t>(idx[k + 1])});
      }
    }
  }
  return mesh;
}

struct PlyProperty {
  std::string type;
  std::string name;
  bool is_list = false;
  std::string count_type;
};

int ply_type_size(const std::string& t) {
  static const std::map<std::string, int> sizes = {
      {"char", 1},  {"uchar", 1},  {"int8", 1},   {"uint8", 1},   {"short", 2},   {"ushort", 2},
      {"int16", 2}, {"uint16", 2}, {"int", 4},    {"uint", 4},    {"int32", 4},   {"uint32", 4},
      {"float", 4}, {"float32", 4}, {"double", 8}, {"float64", 8}};
  const auto it = sizes.find(t);
  if (it == sizes.end()) throw ContractError("ply: unsupported property type " + t);
  return it->second;
}

double ply_read_value(const std::string& t, const unsigned char* p) {
  auto get = [p]<typename T>(T) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    return static_cast<double>(v);
  };
  if (t == "char" || t == "int8") return get(std::int8_t{});
  if (t == "uchar" || t == "uint8") return get(std::uint8_t{});
  if (t == "short" || t == "int16") return get(std::int16_t{});
  if (t == "ushort" || t == "uint16") return get(std::uint16_t{});
  if (t == "int" || t == "int32") return get(std::int32_t{});
  if (t == "uint" || t == "uint32") return get(std::uint32_t{});
  if (t == "float" || t == "float32") return get(float{});
  return get(double{});
}

TriMesh load_ply(std::istream& in, const std::string& name) {
  static_assert(std::endian::native == std::endian::little, "PLY reader assumes a little-endian host");
  std::string line;
  std::getline(in, line);
  if (line.rfind("ply", 0) != 0) throw ContractError(name + ": not a PLY file");
  struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<PlyProperty> props;
  };
  std::vector<Element> elements;
  bool binary_le = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "format") {
      std::string fmt;
      ss >> fmt;
      binary_le = fmt == "binary_little_endian";
    } else if (tag == "element") {
      Element e;
      ss >> e.name >> e.count;
      elements.push_back(e);
    } else if (tag == "property") {
      if (elements.empty()) throw ContractError(name + ": property before element");
      PlyProperty p;
      ss >> p.type;
      if (p.type == "list") {
        p.is_list = true;
        ss >> p.count_type >> p.type;
      }
      ss >> p.name;
      elements.back().props.push_back(p);
    } else if (tag == "end_header") {
      break;
    }
  }
  if (!binary_le) throw ContractError(name + ": only binary_little_endian PLY is supported");
  TriMesh mesh;
  std::vector<unsigned char> buf(8);
  auto read = [&](int bytes) {
    if (!in.read(reinterpret_cast<char*>(buf.data()), bytes)) throw ContractError(name + ": truncated PLY");
    return buf.data();
  };
  for (const auto& e : elements) {
    for (std::size_t i = 0; i < e.count; ++i) {
      Vec3 v = Vec3::Zero();
      for (const auto& p : e.props) {
        if (p.is_list) {
          const auto n = static_cast<std::size_t>(ply_read_value(p.count_type, read(ply_type_size(p.count_type))));
          std::vector<std::uint32_t> idx(n);
          for (auto& x : idx) x = static_cast<std::uint32_t>(ply_read_value(p.type, read(ply_type_size(p.type))));
          if (e.name == "face" && (p.name == "vertex_indices" || p.name == "vertex_index")) {
            for (std::size_t k = 1; k + 1 < n; ++k) mesh.faces.push_back({idx[0], idx[k], idx[k + 1]});
          }
        } else {
          const double val = ply_read_value(p.type, read(ply_type_size(p.type)));
          if (e.name == "vertex") {
            if (p.name == "x") v.x() = val;
            if (p.name == "y") v.y() = val;
            if (p.name == "z") v.z() = val;
          }
        }
      }
      if (e.name == "vertex") mesh.vertices.push_back(v);
    }
  }
  return mesh;
}

}  // namespace

TriMesh load_mesh(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ContractError("cannot open mesh " + path.string());
  const std::string ext = lower_ext(path);
  TriMesh mesh;
  if (ext == ".obj") {
    mesh = load_obj(in, path.string());
  } else if (ext == ".ply") {
    mesh = load_ply(in, path.string());
  } else {
    throw ContractError("unsupported mesh format: " + path.string());
  }
  mesh.remove_degenerate_faces();
  return mesh;
}

void save_mesh(const std::filesystem::path& path, const TriMesh& mesh) {
  const std::string ext = lower_ext(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ContractError("cannot write mesh " + path.string());
  if (ext == ".ply") {
    out << "ply\nformat binary_little_endian 1.0\n"
        << "element vertex " << mesh.vertices.size() << "\n"
        << "property float x\nproperty float y\nproperty float z\n"
        << "element face " << mesh.faces.size() << "\n"
        << "property list uchar int vertex_indices\nend_header\n";
    for (const auto& v : mesh.vertices) {
      const float xyz[3] = {static_cast<float>(v.x()), static_cast<float>(v.y()), static_cast<float>(v.z())};
      out.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
    }
    for (const auto& f : mesh.faces) {
      const unsigned char n = 3;
      out.write(reinterpret_cast<const char*>(&n), 1);
      const std::int32_t idx[3] = {static_cast<std::int32_t>(f[0]), static_cast<std::int32_t>(f[1]),
                                   static_cast<std::int32_t>(f[2])};
      out.write(reinterpret_cast<const char*>(idx), sizeof(idx));
    }
  } else {
    out.precision(9);
    for (const auto& v : mesh.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
    for (const auto& f : mesh.faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  }
  if (!out) throw ContractError("failed writing mesh " + path.string());
}

}  // namespace gnf
