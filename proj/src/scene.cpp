#include "igs/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "igs/png_io.hpp"

namespace igs {

namespace fs = std::filesystem;

std::vector<std::uint8_t> read_binary_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Data, "cannot open " + path.string());
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_binary_file(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::Data, "cannot write " + path.string());
}

std::vector<SceneView> read_camera_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Data, "cannot open camera manifest " + path.string());
  std::vector<SceneView> views;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ss(line);
    double v[19];
    for (double& x : v) {
      if (!(ss >> x)) {
        throw Error(ErrorKind::Data, path.string() + ":" + std::to_string(lineno) + ": expected 19 numeric fields");
      }
    }
    SceneView view;
    Camera& c = view.camera;
    for (int i = 0; i < 9; ++i) c.rotation(i / 3, i % 3) = v[i];
    c.translation = Vec3(v[9], v[10], v[11]);
    c.fx = v[12];
    c.fy = v[13];
    c.cx = v[14];
    c.cy = v[15];
    c.width = static_cast<int>(v[16]);
    c.height = static_cast<int>(v[17]);
    c.near_plane = v[18];
    ss >> c.far_plane;
    if (!ss) throw Error(ErrorKind::Data, path.string() + ":" + std::to_string(lineno) + ": missing far plane");
    if (!(ss >> view.image_name)) {
      std::ostringstream name;
      name << std::setw(4) << std::setfill('0') << views.size() << ".png";
      view.image_name = name.str();
    }
    try {
      c.validate();
    } catch (const Error& e) {
      throw Error(ErrorKind::Data, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    views.push_back(std::move(view));
  }
  return views;
}

void write_camera_manifest(const fs::path& path, const std::vector<SceneView>& views) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << "# R (row-major, world->camera) | t | fx fy cx cy W H near far | image\n";
  out << std::setprecision(17);
  for (const SceneView& v : views) {
    const Camera& c = v.camera;
    for (int i = 0; i < 9; ++i) out << c.rotation(i / 3, i % 3) << ' ';
    out << c.translation.x() << ' ' << c.translation.y() << ' ' << c.translation.z() << ' ';
    out << c.fx << ' ' << c.fy << ' ' << c.cx << ' ' << c.cy << ' ' << c.width << ' ' << c.height << ' '
        << c.near_plane << ' ' << c.far_plane << ' ' << v.image_name << '\n';
  }
  if (!out) throw Error(ErrorKind::Data, "cannot write " + path.string());
}

ImageBuffer read_image(const fs::path& path) {
  const PngImage png = decode_png(read_binary_file(path));
  ImageBuffer img(png.width, png.height);
  const double scale = png.bit_depth == 16 ? 65535.0 : 255.0;
  for (int y = 0; y < png.height; ++y) {
    for (int x = 0; x < png.width; ++x) {
      const std::size_t base = (static_cast<std::size_t>(y) * png.width + x) * png.channels;
      for (int c = 0; c < 3; ++c) {
        const int src = png.channels >= 3 ? c : 0;
        img.at(x, y, c) = png.samples[base + src] / scale;
      }
    }
  }
  return img;
}

void write_image(const fs::path& path, const ImageBuffer& image) {
  PngImage png;
  png.width = image.width;
  png.height = image.height;
  png.channels = 3;
  png.bit_depth = 8;
  png.samples.resize(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    png.samples[i] = static_cast<std::uint16_t>(std::lround(std::clamp(image.pixels[i], 0.0, 1.0) * 255.0));
  }
  write_binary_file(path, encode_png(png));
}

BoundingBox read_bbox_file(const fs::path& path) {
  std::ifstream in(path);
  BoundingBox b;
  if (!(in >> b.center.x() >> b.center.y() >> b.center.z() >> b.half_extent) || !(b.half_extent > 0.0)) {
    throw Error(ErrorKind::Data, path.string() + ": expected 'cx cy cz half_extent' with half_extent > 0");
  }
  return b;
}

void write_bbox_file(const fs::path& path, const BoundingBox& bbox) {
  std::ofstream out(path);
  out << std::setprecision(17) << bbox.center.x() << ' ' << bbox.center.y() << ' ' << bbox.center.z() << ' '
      << bbox.half_extent << '\n';
  if (!out) throw Error(ErrorKind::Data, "cannot write " + path.string());
}

Scene load_scene(const fs::path& dir, bool require_images) {
  if (!fs::is_directory(dir)) throw Error(ErrorKind::Data, "scene directory not found: " + dir.string());
  Scene s;
  s.views = read_camera_manifest(dir / "cameras.txt");
  if (s.views.empty()) throw Error(ErrorKind::Data, "scene has no cameras");
  for (SceneView& v : s.views) {
    const fs::path p = dir / "images" / v.image_name;
    if (fs::exists(p)) {
      v.image = read_image(p);
      if (v.image.width != v.camera.width || v.image.height != v.camera.height) {
        throw Error(ErrorKind::Data, "image " + p.string() + " does not match its camera resolution");
      }
    } else if (require_images) {
      throw Error(ErrorKind::Data, "missing image " + p.string());
    }
  }
  if (fs::exists(dir / "bbox.txt")) s.bbox = read_bbox_file(dir / "bbox.txt");
  if (fs::exists(dir / "points.ply")) {
    for (const Gaussian& g : read_gaussian_ply(dir / "points.ply")) s.points.push_back(g.position);
  }
  return s;
}

// ---- PLY ----

namespace {

int coeffs_per_channel(int sh_degree) { return (sh_degree + 1) * (sh_degree + 1); }

struct PlyProperty {
  std::string name;
  std::string type;
};

std::size_t type_size(const std::string& t) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "float" || t == "int32" || t == "uint32" || t == "float32") return 4;
  if (t == "double" || t == "float64") return 8;
  throw Error(ErrorKind::Data, "unsupported PLY property type " + t);
}

double read_typed(const std::uint8_t* p, const std::string& t) {
  if (t == "float" || t == "float32") {
    float v;
    std::memcpy(&v, p, 4);
    return v;
  }
  if (t == "double" || t == "float64") {
    double v;
    std::memcpy(&v, p, 8);
    return v;
  }
  if (t == "uchar" || t == "uint8") return *p;
  if (t == "char" || t == "int8") return static_cast<std::int8_t>(*p);
  if (t == "short" || t == "int16") {
    std::int16_t v;
    std::memcpy(&v, p, 2);
    return v;
  }
  if (t == "ushort" || t == "uint16") {
    std::uint16_t v;
    std::memcpy(&v, p, 2);
    return v;
  }
  if (t == "int" || t == "int32") {
    std::int32_t v;
    std::memcpy(&v, p, 4);
    return v;
  }
  std::uint32_t v;
  std::memcpy(&v, p, 4);
  return v;
}

}  // namespace

void write_gaussian_ply(const fs::path& path, const std::vector<Gaussian>& gaussians) {
  if (gaussians.empty()) throw Error(ErrorKind::Data, "no Gaussians to write");
  const int k = static_cast<int>(gaussians[0].attrs.sh.size()) / 3;
  std::ostringstream h;
  h << "ply\nformat binary_little_endian 1.0\nelement vertex " << gaussians.size() << "\n";
  for (const char* n : {"x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"}) h << "property float " << n << "\n";
  for (int i = 0; i < 3 * (k - 1); ++i) h << "property float f_rest_" << i << "\n";
  h << "property float opacity\n";
  for (int i = 0; i < 3; ++i) h << "property float scale_" << i << "\n";
  for (int i = 0; i < 4; ++i) h << "property float rot_" << i << "\n";
  h << "end_header\n";
  const std::string header = h.str();
  std::vector<std::uint8_t> out(header.begin(), header.end());
  auto put = [&](double v) {
    const float f = static_cast<float>(v);
    std::uint8_t b[4];
    std::memcpy(b, &f, 4);
    out.insert(out.end(), b, b + 4);
  };
  for (const Gaussian& g : gaussians) {
    if (static_cast<int>(g.attrs.sh.size()) != 3 * k) throw Error(ErrorKind::Data, "mixed SH sizes in PLY export");
    for (int a = 0; a < 3; ++a) put(g.position[a]);
    for (int a = 0; a < 3; ++a) put(0.0);
    for (int c = 0; c < 3; ++c) put(g.attrs.sh[c]);
    for (int c = 0; c < 3; ++c)
      for (int j = 1; j < k; ++j) put(g.attrs.sh[3 * j + c]);
    put(logit(std::clamp(g.attrs.opacity, 1e-7, 1.0 - 1e-7)));
    for (int a = 0; a < 3; ++a) put(g.attrs.scale_exp[a]);
    for (int a = 0; a < 4; ++a) put(g.attrs.rotation[a]);
  }
  write_binary_file(path, out);
}

std::vector<Gaussian> read_gaussian_ply(const fs::path& path, int* sh_degree) {
  const std::vector<std::uint8_t> bytes = read_binary_file(path);
  const std::string marker = "end_header";
  const auto it = std::search(bytes.begin(), bytes.end(), marker.begin(), marker.end());
  if (it == bytes.end()) throw Error(ErrorKind::Data, path.string() + ": missing PLY header");
  std::size_t body = static_cast<std::size_t>(it - bytes.begin()) + marker.size();
  if (body < bytes.size() && bytes[body] == '\r') ++body;
  if (body < bytes.size() && bytes[body] == '\n') ++body;
  std::istringstream header(std::string(bytes.begin(), it));

  std::string line, format;
  std::size_t count = 0;
  bool in_vertex = false, seen_vertex = false;
  std::vector<PlyProperty> props;
  std::getline(header, line);
  if (line.rfind("ply", 0) != 0) throw Error(ErrorKind::Data, path.string() + ": not a PLY file");
  while (std::getline(header, line)) {
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "format") {
      ls >> format;
    } else if (word == "element") {
      std::string name;
      ls >> name;
      in_vertex = name == "vertex" && !seen_vertex;
      if (in_vertex) {
        ls >> count;
        seen_vertex = true;
      } else if (!seen_vertex) {
        throw Error(ErrorKind::Data, path.string() + ": vertex must be the first PLY element");
      }
    } else if (word == "property" && in_vertex) {
      PlyProperty p;
      ls >> p.type;
      if (p.type == "list") throw Error(ErrorKind::Data, path.string() + ": list properties on vertices unsupported");
      ls >> p.name;
      props.push_back(p);
    }
  }
  if (format != "binary_little_endian" && format != "ascii") {
    throw Error(ErrorKind::Data, path.string() + ": unsupported PLY format '" + format + "'");
  }
  if (count == 0) throw Error(ErrorKind::Data, path.string() + ": no vertices");

  std::map<std::string, std::size_t> idx;
  for (std::size_t i = 0; i < props.size(); ++i) idx[props[i].name] = i;
  for (const char* n : {"x", "y", "z"}) {
    if (!idx.count(n)) throw Error(ErrorKind::Data, path.string() + ": missing vertex property " + n);
  }
  int rest = 0;
  while (idx.count("f_rest_" + std::to_string(rest))) ++rest;
  int degree = 0;
  while (degree < 3 && 3 * (coeffs_per_channel(degree) - 1) < rest) ++degree;
  if (3 * (coeffs_per_channel(degree) - 1) != rest) {
    throw Error(ErrorKind::Data, path.string() + ": f_rest count does not match an SH degree");
  }
  if (sh_degree) *sh_degree = degree;
  const int k = coeffs_per_channel(degree);

  std::vector<std::vector<double>> rows(count, std::vector<double>(props.size()));
  if (format == "ascii") {
    std::istringstream ss(std::string(bytes.begin() + static_cast<long>(body), bytes.end()));
    for (auto& row : rows)
      for (double& v : row)
        if (!(ss >> v)) throw Error(ErrorKind::Data, path.string() + ": truncated ASCII vertex data");
  } else {
    std::size_t stride = 0;
    for (const PlyProperty& p : props) stride += type_size(p.type);
    if (bytes.size() < body + stride * count) throw Error(ErrorKind::Data, path.string() + ": truncated vertex data");
    const std::uint8_t* p = bytes.data() + body;
    for (auto& row : rows) {
      for (std::size_t j = 0; j < props.size(); ++j) {
        row[j] = read_typed(p, props[j].type);
        p += type_size(props[j].type);
      }
    }
  }

  auto get = [&](const std::vector<double>& row, const std::string& name, double fallback) {
    const auto f = idx.find(name);
    return f == idx.end() ? fallback : row[f->second];
  };
  std::vector<Gaussian> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto& row = rows[i];
    Gaussian& g = out[i];
    g.position = Vec3(get(row, "x", 0), get(row, "y", 0), get(row, "z", 0));
    if (!g.position.allFinite()) throw Error(ErrorKind::Data, path.string() + ": non-finite vertex position");
    g.attrs.opacity = std::clamp(sigmoid(get(row, "opacity", logit(0.1))), 1e-7, 1.0 - 1e-7);
    for (int a = 0; a < 3; ++a) {
      g.attrs.scale_exp[a] = std::clamp(get(row, "scale_" + std::to_string(a), -5.0), kScaleExpMin, kScaleExpMax);
    }
    Vec4 q(get(row, "rot_0", 1), get(row, "rot_1", 0), get(row, "rot_2", 0), get(row, "rot_3", 0));
    g.attrs.rotation = q.norm() < 1e-8 ? Vec4(1, 0, 0, 0) : Vec4(q.normalized());
    g.attrs.sh = VecX::Zero(3 * k);
    for (int c = 0; c < 3; ++c) {
      g.attrs.sh[c] = get(row, "f_dc_" + std::to_string(c), 0.0);
      for (int j = 1; j < k; ++j) g.attrs.sh[3 * j + c] = get(row, "f_rest_" + std::to_string(c * (k - 1) + j - 1), 0.0);
    }
  }
  return out;
}

bool ply_has_gaussian_attributes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Data, "cannot open " + path.string());
  std::set<std::string> names;
  std::string line;
  while (std::getline(in, line) && line.rfind("end_header", 0) != 0) {
    std::istringstream ls(line);
    std::string word, type, name;
    if (ls >> word >> type >> name && word == "property") names.insert(name);
  }
  for (const char* n : {"opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"})
    if (!names.count(n)) return false;
  return true;
}

}  // namespace igs
