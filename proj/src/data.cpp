#include "dedgan/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "dedgan/errors.hpp"

namespace dedgan {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// PPM

namespace {

/// Next whitespace-delimited header token, skipping '#' comments.
std::string ppm_token(std::istream& in, const fs::path& path) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  if (tok.empty()) throw IngestionError(path.string() + ": truncated PPM header");
  return tok;
}

Index ppm_int(std::istream& in, const fs::path& path, const char* what) {
  const std::string tok = ppm_token(in, path);
  try {
    std::size_t used = 0;
    const long v = std::stol(tok, &used);
    if (used != tok.size() || v <= 0) throw std::invalid_argument(tok);
    return static_cast<Index>(v);
  } catch (const std::exception&) {
    throw IngestionError(path.string() + ": invalid PPM " + what + " '" + tok + "'");
  }
}

}  // namespace

Image8 read_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open image '" + path.string() + "'");
  if (ppm_token(in, path) != "P6") throw IngestionError(path.string() + ": not a binary PPM (P6) file");
  Image8 img;
  img.width = ppm_int(in, path, "width");
  img.height = ppm_int(in, path, "height");
  if (ppm_int(in, path, "maxval") != 255) throw IngestionError(path.string() + ": only 8-bit PPM is supported");
  img.rgb.resize(static_cast<std::size_t>(img.width * img.height * 3));
  in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.rgb.size()))
    throw IngestionError(path.string() + ": truncated pixel data");
  return img;
}

void write_ppm(const Image8& image, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IngestionError("cannot write image '" + path.string() + "'");
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.rgb.data()), static_cast<std::streamsize>(image.rgb.size()));
  if (!out) throw IngestionError("write failed for '" + path.string() + "'");
}

TensorF preprocess(const Image8& image) {
  TensorF t(Shape{3, image.height, image.width});
  for (Index c = 0; c < 3; ++c)
    for (Index y = 0; y < image.height; ++y)
      for (Index x = 0; x < image.width; ++x)
        t[(c * image.height + y) * image.width + x] = static_cast<float>(image.at(y, x, c)) / 127.5f - 1.0f;
  return t;
}

Image8 to_image(const TensorF& chw) {
  if (chw.rank() != 3 || chw.dim(0) != 3) throw DimensionError("to_image: expected [3,H,W], got " + shape_str(chw.shape()));
  Image8 img;
  img.height = chw.dim(1);
  img.width = chw.dim(2);
  img.rgb.resize(static_cast<std::size_t>(img.width * img.height * 3));
  for (Index c = 0; c < 3; ++c)
    for (Index y = 0; y < img.height; ++y)
      for (Index x = 0; x < img.width; ++x) {
        const float v = (chw[(c * img.height + y) * img.width + x] + 1.0f) * 127.5f;
        img.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
  return img;
}

// ---------------------------------------------------------------------------
// Crops

namespace {

TensorF crop_at(const TensorF& chw, Index target, Index oy, Index ox) {
  const Index c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  TensorF out(Shape{c, target, target});
  for (Index k = 0; k < c; ++k)
    for (Index y = 0; y < target; ++y)
      out.vec().segment((k * target + y) * target, target) = chw.vec().segment((k * h + y + oy) * w + ox, target);
  return out;
}

void check_crop(const TensorF& chw, Index target) {
  if (chw.rank() != 3) throw DimensionError("crop: expected [C,H,W], got " + shape_str(chw.shape()));
  if (target < 1) throw DimensionError("crop: target size must be positive");
  if (target > chw.dim(1)) throw DimensionError("crop: target " + std::to_string(target) + " exceeds height " + std::to_string(chw.dim(1)));
  if (target > chw.dim(2)) throw DimensionError("crop: target " + std::to_string(target) + " exceeds width " + std::to_string(chw.dim(2)));
}

}  // namespace

TensorF random_crop(const TensorF& chw, Index target, RngStream& rng) {
  check_crop(chw, target);
  const auto oy = static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(chw.dim(1) - target + 1)));
  const auto ox = static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(chw.dim(2) - target + 1)));
  return crop_at(chw, target, oy, ox);
}

TensorF center_crop(const TensorF& chw, Index target) {
  check_crop(chw, target);
  return crop_at(chw, target, (chw.dim(1) - target) / 2, (chw.dim(2) - target) / 2);
}

TensorF augment_crop(const TensorF& chw, Index target, RngStream* rng) {
  return rng ? random_crop(chw, target, *rng) : center_crop(chw, target);
}

TensorF mirror(const TensorF& images) {
  if (images.rank() != 3 && images.rank() != 4) throw DimensionError("mirror: expected rank 3 or 4");
  const Index w = images.dim(images.rank() - 1);
  TensorF out(images.shape());
  const Index rows = images.size() / w;
  for (Index r = 0; r < rows; ++r) out.vec().segment(r * w, w) = images.vec().segment(r * w, w).reverse();
  return out;
}

// ---------------------------------------------------------------------------
// Dataset

const std::vector<std::size_t>& Dataset::split(const std::string& name) const {
  auto it = splits.find(name);
  if (it == splits.end()) throw ConfigError("dataset has no '" + name + "' split");
  return it->second;
}

void Dataset::validate() const {
  if (samples.empty()) throw IngestionError("dataset is empty");
  if (identities < 1 || static_cast<int>(identity_names.size()) != identities)
    throw IngestionError("dataset identity table is inconsistent");
  const Shape& shape = samples.front().image.shape();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (s.image.shape() != shape || s.image.rank() != 3 || s.image.dim(0) != 3)
      throw IngestionError("sample " + std::to_string(i) + ": image shape " + shape_str(s.image.shape()) +
                           " differs from " + shape_str(shape));
    if (!s.image.all_finite() || s.image.vec().maxCoeff() > 1.0f || s.image.vec().minCoeff() < -1.0f)
      throw IngestionError("sample " + std::to_string(i) + ": image values outside [-1,1]");
    if (s.identity < 0 || s.identity >= identities)
      throw IngestionError("sample " + std::to_string(i) + ": identity label out of range");
    if (!s.landmarks.allFinite() || !std::isfinite(s.pose_code))
      throw IngestionError("sample " + std::to_string(i) + ": non-finite landmarks or pose code");
  }
  for (const auto& [name, idx] : splits) {
    std::set<std::size_t> local;
    for (std::size_t i : idx) {
      if (i >= samples.size()) throw IngestionError("split '" + name + "' references sample " + std::to_string(i));
      if (!local.insert(i).second) throw IngestionError("split '" + name + "' repeats sample " + std::to_string(i));
    }
  }
  if (splits.count("gallery") && splits.count("probe")) {
    std::set<std::size_t> g(splits.at("gallery").begin(), splits.at("gallery").end());
    for (std::size_t i : splits.at("probe"))
      if (g.count(i)) throw IngestionError("gallery and probe splits share sample " + std::to_string(i));
    std::vector<int> per(static_cast<std::size_t>(identities), 0);
    for (std::size_t i : splits.at("gallery")) ++per[static_cast<std::size_t>(samples[i].identity)];
    for (int id = 0; id < identities; ++id)
      if (per[static_cast<std::size_t>(id)] > 1)
        throw IngestionError("gallery holds more than one image of identity " + identity_names[static_cast<std::size_t>(id)]);
  }
  if (splits.count("train")) {
    std::set<std::size_t> t(splits.at("train").begin(), splits.at("train").end());
    for (const char* other : {"gallery", "probe"})
      if (splits.count(other))
        for (std::size_t i : splits.at(other))
          if (t.count(i)) throw IngestionError(std::string("train and ") + other + " splits share sample " + std::to_string(i));
  }
}

std::pair<double, double> Dataset::code_range(const std::string& split_name) const {
  const auto& idx = split(split_name);
  if (idx.empty()) throw ConfigError("split '" + split_name + "' is empty");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t i : idx) {
    lo = std::min(lo, samples[i].pose_code);
    hi = std::max(hi, samples[i].pose_code);
  }
  return {lo, hi};
}

namespace {

/// Per identity, the held-out sample with the smallest |code| (lowest index on
/// ties) goes to the gallery and the rest to the probes.
void assign_gallery(Dataset& d, const std::vector<std::size_t>& heldout) {
  std::vector<std::size_t> best(static_cast<std::size_t>(d.identities), SIZE_MAX);
  for (std::size_t i : heldout) {
    auto& b = best[static_cast<std::size_t>(d.samples[i].identity)];
    if (b == SIZE_MAX || std::abs(d.samples[i].pose_code) < std::abs(d.samples[b].pose_code)) b = i;
  }
  std::vector<std::size_t> gallery, probe;
  for (std::size_t b : best)
    if (b != SIZE_MAX) gallery.push_back(b);
  std::set<std::size_t> g(gallery.begin(), gallery.end());
  for (std::size_t i : heldout)
    if (!g.count(i)) probe.push_back(i);
  std::sort(gallery.begin(), gallery.end());
  d.splits["gallery"] = gallery;
  d.splits["probe"] = probe;
}

}  // namespace

// ---------------------------------------------------------------------------
// Synthetic renderer

void SyntheticFaceConfig::validate() const {
  if (identities < 2) throw ConfigError("synthetic data: need at least 2 identities");
  if (image_size < 16) throw ConfigError("synthetic data: image size must be at least 16");
  if (source_size < image_size) throw ConfigError("synthetic data: source size smaller than image size");
  if (!(max_yaw_degrees >= 0 && max_yaw_degrees < 90)) throw ConfigError("synthetic data: yaw range must lie in [0,90)");
  if (!(noise_std >= 0)) throw ConfigError("synthetic data: noise level must be non-negative");
  if (train_per_identity < 1 || heldout_per_identity < 2)
    throw ConfigError("synthetic data: need >= 1 training and >= 2 held-out samples per identity");
}

FaceGeometry identity_geometry(int identity, std::uint64_t seed) {
  RngStream r = RngStream(seed).fork(0x1D00 + static_cast<std::uint64_t>(identity));
  FaceGeometry g{};
  g.radius_x = r.uniform(0.50, 0.62);
  g.radius_y = r.uniform(0.68, 0.80);
  g.radius_z = r.uniform(0.50, 0.60);
  g.eye_x = r.uniform(0.19, 0.29);
  g.eye_y = r.uniform(0.06, 0.16);
  g.eye_rx = r.uniform(0.07, 0.11);
  g.eye_ry = r.uniform(0.035, 0.07);
  g.brow_y = g.eye_y + r.uniform(0.10, 0.16);
  g.brow_thickness = r.uniform(0.015, 0.045);
  g.nose_y = r.uniform(-0.14, -0.04);
  g.nose_length = r.uniform(0.12, 0.22);
  g.nose_width = r.uniform(0.05, 0.09);
  g.mouth_y = r.uniform(-0.42, -0.30);
  g.mouth_half_width = r.uniform(0.12, 0.22);
  g.mouth_ry = r.uniform(0.03, 0.06);
  g.hair_line = r.uniform(0.36, 0.56);
  const double skin_r = r.uniform(120, 240);
  g.skin[0] = skin_r;
  g.skin[1] = skin_r * r.uniform(0.60, 0.90);
  g.skin[2] = skin_r * r.uniform(0.45, 0.80);
  for (double& v : g.hair) v = r.uniform(10, 200);
  for (double& v : g.eyes) v = r.uniform(10, 120);
  g.lips[0] = r.uniform(120, 220);
  g.lips[1] = r.uniform(40, 110);
  g.lips[2] = r.uniform(40, 120);
  return g;
}

namespace {

constexpr double kBackground[3] = {40, 40, 48};

struct Hit {
  double t = -std::numeric_limits<double>::infinity();
  double albedo[3] = {0, 0, 0};
  double shade = 0;
};

/// Nearest-to-viewer intersection of the ray (u, v, t) with an axis-aligned
/// ellipsoid in the face frame. World from face: x = X c + Z s, z = -X s + Z c.
bool intersect(double u, double v, double c, double s, double cx, double cy, double cz, double ax, double ay,
               double az, double& t, double& nx, double& ny, double& nz) {
  // Face-frame point along the ray: X = u c - t s, Y = v, Z = u s + t c.
  const double x0 = u * c - cx, dx = -s;
  const double y0 = v - cy;
  const double z0 = u * s - cz, dz = c;
  const double A = dx * dx / (ax * ax) + dz * dz / (az * az);
  const double B = 2 * (x0 * dx / (ax * ax) + z0 * dz / (az * az));
  const double C = x0 * x0 / (ax * ax) + y0 * y0 / (ay * ay) + z0 * z0 / (az * az) - 1;
  const double disc = B * B - 4 * A * C;
  if (disc < 0) return false;
  t = (-B + std::sqrt(disc)) / (2 * A);
  const double X = x0 + t * dx, Z = z0 + t * dz;
  nx = X / (ax * ax);
  ny = y0 / (ay * ay);
  nz = Z / (az * az);
  return true;
}

double surface_z(const FaceGeometry& g, double X, double Y) {
  const double q = 1 - X * X / (g.radius_x * g.radius_x) - Y * Y / (g.radius_y * g.radius_y);
  return g.radius_z * std::sqrt(std::max(0.0, q));
}

void face_albedo(const FaceGeometry& g, double X, double Y, double Z, double* out) {
  auto set = [&](const double* col, double k = 1.0) {
    for (int i = 0; i < 3; ++i) out[i] = col[i] * k;
  };
  const double ax = std::abs(X);
  if (Z < 0 || Y > g.hair_line) return set(g.hair);
  if (std::abs(Y - g.brow_y) < g.brow_thickness && std::abs(ax - g.eye_x) < 1.3 * g.eye_rx) return set(g.hair, 0.7);
  const double ex = (ax - g.eye_x) / g.eye_rx, ey = (Y - g.eye_y) / g.eye_ry;
  if (ex * ex + ey * ey < 1) return set(g.eyes);
  const double mx = X / g.mouth_half_width, my = (Y - g.mouth_y) / g.mouth_ry;
  if (mx * mx + my * my < 1) return set(g.lips);
  set(g.skin);
}

Hit trace(const FaceGeometry& g, double u, double v, double c, double s) {
  Hit best;
  double t, nx, ny, nz;
  // World-space z of a face-frame normal is -nx s + nz c; light comes from the viewer.
  auto lambert = [&](double nxf, double nyf, double nzf) {
    const double len = std::sqrt(nxf * nxf + nyf * nyf + nzf * nzf);
    return 0.35 + 0.65 * std::max(0.0, (-nxf * s + nzf * c) / len);
  };
  if (intersect(u, v, c, s, 0, 0, 0, g.radius_x, g.radius_y, g.radius_z, t, nx, ny, nz)) {
    best.t = t;
    const double X = u * c - t * s, Z = u * s + t * c;
    face_albedo(g, X, v, Z, best.albedo);
    best.shade = lambert(nx, ny, nz);
  }
  const double base = surface_z(g, 0, g.nose_y);
  if (intersect(u, v, c, s, 0, g.nose_y, base, g.nose_width, 0.10, g.nose_length, t, nx, ny, nz) && t > best.t) {
    best.t = t;
    for (int i = 0; i < 3; ++i) best.albedo[i] = g.skin[i] * 0.92;
    best.shade = lambert(nx, ny, nz);
  }
  return best;
}

}  // namespace

RenderedFace render_face(const FaceGeometry& g, double yaw_degrees, Index size, double noise_std, RngStream* noise_rng) {
  const double th = yaw_degrees * std::numbers::pi / 180.0;
  const double c = std::cos(th), s = std::sin(th);
  RenderedFace out;
  out.image.width = out.image.height = size;
  out.image.rgb.resize(static_cast<std::size_t>(size * size * 3));
  const double S = static_cast<double>(size);
  for (Index py = 0; py < size; ++py)
    for (Index px = 0; px < size; ++px) {
      double acc[3] = {0, 0, 0};
      for (int sy = 0; sy < 2; ++sy)
        for (int sx = 0; sx < 2; ++sx) {
          const double u = (static_cast<double>(px) + 0.25 + 0.5 * sx) / S * 2 - 1;
          const double v = 1 - (static_cast<double>(py) + 0.25 + 0.5 * sy) / S * 2;
          Hit h = trace(g, u, v, c, s);
          for (int k = 0; k < 3; ++k)
            acc[k] += std::isfinite(h.t) ? h.albedo[k] * h.shade : kBackground[k];
        }
      for (int k = 0; k < 3; ++k) {
        double val = acc[k] / 4;
        if (noise_rng && noise_std > 0) val += noise_rng->normal(0.0, noise_std);
        out.image.at(py, px, k) = static_cast<std::uint8_t>(std::clamp(std::lround(val), 0L, 255L));
      }
    }

  auto project = [&](double X, double Y, double Z, int row) {
    const double x = X * c + Z * s;
    out.landmarks(row, 0) = (x + 1) / 2 * S;
    out.landmarks(row, 1) = (1 - Y) / 2 * S;
  };
  project(-g.eye_x, g.eye_y, surface_z(g, -g.eye_x, g.eye_y), 0);
  project(g.eye_x, g.eye_y, surface_z(g, g.eye_x, g.eye_y), 1);
  project(0, g.nose_y, surface_z(g, 0, g.nose_y) + g.nose_length, 2);
  project(-g.mouth_half_width, g.mouth_y, surface_z(g, -g.mouth_half_width, g.mouth_y), 3);
  project(g.mouth_half_width, g.mouth_y, surface_z(g, g.mouth_half_width, g.mouth_y), 4);
  return out;
}

Dataset generate_synthetic(const SyntheticFaceConfig& config, std::uint64_t seed) {
  config.validate();
  Dataset d;
  d.identities = config.identities;
  std::vector<std::size_t> train, heldout;
  std::vector<Landmarks> train_shapes;
  const int per = config.train_per_identity + config.heldout_per_identity;
  for (int id = 0; id < config.identities; ++id) {
    char name[16];
    std::snprintf(name, sizeof(name), "id%03d", id);
    d.identity_names.emplace_back(name);
    const FaceGeometry g = identity_geometry(id, seed);
    for (int j = 0; j < per; ++j) {
      RngStream r = RngStream(seed).fork(0x5A00000 + static_cast<std::uint64_t>(id) * 100003u + static_cast<std::uint64_t>(j));
      const bool frontal = j == config.train_per_identity;
      const double yaw = frontal ? 0.0 : r.uniform(-config.max_yaw_degrees, config.max_yaw_degrees);
      RenderedFace f = render_face(g, yaw, config.source_size, config.noise_std, &r);
      FaceSample s;
      s.image = preprocess(f.image);
      s.identity = id;
      s.landmarks = f.landmarks;
      s.yaw_degrees = yaw;
      (j < config.train_per_identity ? train : heldout).push_back(d.samples.size());
      if (j < config.train_per_identity) train_shapes.push_back(f.landmarks);
      d.samples.push_back(std::move(s));
    }
  }
  d.shape_model = fit(train_shapes, ShapeFitOptions{static_cast<double>(config.source_size)});
  for (auto& s : d.samples) s.pose_code = pose_code(d.shape_model, s.landmarks);
  d.splits["train"] = train;
  assign_gallery(d, heldout);
  d.validate();
  return d;
}

// ---------------------------------------------------------------------------
// Splits and directory ingestion

std::map<std::string, std::vector<std::size_t>> read_splits(const fs::path& path) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw IngestionError("splits file: " + std::string(e.what()));
  }
  auto section = tree.get_child_optional("splits");
  if (!section) throw IngestionError(path.string() + ": missing [splits] section");
  std::map<std::string, std::vector<std::size_t>> out;
  for (const auto& [key, node] : *section) {
    std::vector<std::size_t> idx;
    std::stringstream ss(node.get_value<std::string>());
    std::string item;
    while (std::getline(ss, item, ',')) {
      item.erase(0, item.find_first_not_of(" \t"));
      item.erase(item.find_last_not_of(" \t") + 1);
      if (item.empty()) continue;
      try {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(item, &used);
        if (used != item.size()) throw std::invalid_argument(item);
        idx.push_back(static_cast<std::size_t>(v));
      } catch (const std::exception&) {
        throw IngestionError(path.string() + ": split '" + key + "' has invalid index '" + item + "'");
      }
    }
    out[key] = std::move(idx);
  }
  return out;
}

void write_splits(const std::map<std::string, std::vector<std::size_t>>& splits, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IngestionError("cannot write '" + path.string() + "'");
  out << "[splits]\n";
  for (const auto& [name, idx] : splits) {
    out << name << " = ";
    for (std::size_t i = 0; i < idx.size(); ++i) out << (i ? "," : "") << idx[i];
    out << "\n";
  }
}

void write_dataset(const Dataset& dataset, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream manifest(dir / "manifest.csv", std::ios::trunc);
  if (!manifest) throw IngestionError("cannot write manifest in '" + dir.string() + "'");
  char buf[64];
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const auto& s = dataset.samples[i];
    std::snprintf(buf, sizeof(buf), "%05zu.ppm", i);
    const fs::path rel = fs::path(dataset.identity_names[static_cast<std::size_t>(s.identity)]) / buf;
    write_ppm(to_image(s.image), dir / rel);
    manifest << rel.generic_string();
    for (int k = 0; k < 5; ++k)
      for (int a = 0; a < 2; ++a) {
        std::snprintf(buf, sizeof(buf), ",%.17g", s.landmarks(k, a));
        manifest << buf;
      }
    manifest << "\n";
  }
  write_splits(dataset.splits, dir / "splits.ini");
}

Dataset load_directory(const fs::path& manifest, const LoadOptions& options) {
  std::ifstream in(manifest);
  if (!in) throw IngestionError("cannot open manifest '" + manifest.string() + "'");
  const fs::path root = manifest.parent_path();

  struct Record {
    fs::path path;
    std::string identity;
    Landmarks landmarks;
  };
  std::vector<Record> records;
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() != 11)
      throw IngestionError(manifest.string() + ": line " + std::to_string(lineno) + ": expected 11 fields, found " +
                           std::to_string(fields.size()));
    Record r;
    r.path = root / fields[0];
    r.identity = fs::path(fields[0]).parent_path().filename().string();
    if (r.identity.empty())
      throw IngestionError(manifest.string() + ": line " + std::to_string(lineno) + ": image has no parent directory to name its identity");
    for (int k = 0; k < 10; ++k) {
      try {
        std::size_t used = 0;
        const std::string& tok = fields[static_cast<std::size_t>(k + 1)];
        r.landmarks(k / 2, k % 2) = std::stod(tok, &used);
        if (tok.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw IngestionError(manifest.string() + ": line " + std::to_string(lineno) + ": invalid landmark value '" +
                             fields[static_cast<std::size_t>(k + 1)] + "'");
      }
    }
    if (!r.landmarks.allFinite())
      throw IngestionError(manifest.string() + ": line " + std::to_string(lineno) + ": non-finite landmark");
    records.push_back(std::move(r));
  }
  if (records.empty()) throw IngestionError(manifest.string() + ": empty dataset (no manifest records)");

  Dataset d;
  std::set<std::string> names;
  for (const auto& r : records) names.insert(r.identity);
  d.identity_names.assign(names.begin(), names.end());
  d.identities = static_cast<int>(names.size());
  std::vector<Landmarks> shapes;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    Image8 img;
    try {
      img = read_ppm(r.path);
    } catch (const IngestionError& e) {
      throw IngestionError(manifest.string() + ": line record " + std::to_string(i + 1) + ": " + e.what());
    }
    FaceSample s;
    s.image = preprocess(img);
    s.identity = static_cast<int>(std::distance(d.identity_names.begin(),
                                                std::lower_bound(d.identity_names.begin(), d.identity_names.end(), r.identity)));
    s.landmarks = r.landmarks;
    s.yaw_degrees = std::numeric_limits<double>::quiet_NaN();
    shapes.push_back(r.landmarks);
    d.samples.push_back(std::move(s));
  }
  d.shape_model = options.shape_model
                      ? *options.shape_model
                      : fit(shapes, ShapeFitOptions{static_cast<double>(d.samples.front().image.dim(2))});
  for (auto& s : d.samples) s.pose_code = pose_code(d.shape_model, s.landmarks);

  const fs::path splits_path = root / "splits.ini";
  if (fs::exists(splits_path)) {
    d.splits = read_splits(splits_path);
  } else {
    std::vector<std::size_t> all(d.samples.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    d.splits["train"] = std::move(all);
  }
  d.validate();
  return d;
}

// ---------------------------------------------------------------------------
// Batching

BatchIterator::BatchIterator(std::vector<std::size_t> indices, Index batch_size, std::uint64_t seed)
    : indices_(std::move(indices)), batch_size_(batch_size), per_epoch_(0), seed_(seed) {
  if (batch_size < 2) throw ConfigError("batch size must be at least 2 (batch normalization)");
  if (batch_size > static_cast<Index>(indices_.size()))
    throw ConfigError("batch size " + std::to_string(batch_size) + " exceeds dataset size " +
                      std::to_string(indices_.size()));
  per_epoch_ = static_cast<Index>(indices_.size()) / batch_size;
}

std::vector<std::size_t> BatchIterator::batch(std::uint64_t step) {
  const std::uint64_t epoch = step / static_cast<std::uint64_t>(per_epoch_);
  if (epoch != cached_epoch_) {
    order_ = indices_;
    RngStream(seed_).fork(0xBA7C0000 + epoch).shuffle(order_);
    cached_epoch_ = epoch;
  }
  const auto start = static_cast<std::ptrdiff_t>((step % static_cast<std::uint64_t>(per_epoch_)) *
                                                 static_cast<std::uint64_t>(batch_size_));
  return {order_.begin() + start, order_.begin() + start + batch_size_};
}

Batch make_batch(const Dataset& dataset, const std::vector<std::size_t>& indices, Index target, RngStream* crop_rng) {
  if (indices.empty()) throw ConfigError("make_batch: empty index list");
  const Index n = static_cast<Index>(indices.size());
  const Index c = dataset.samples.front().image.dim(0);
  Batch b;
  b.images = TensorF(Shape{n, c, target, target});
  b.codes = TensorF(Shape{n, 1});
  const Index plane = c * target * target;
  for (Index i = 0; i < n; ++i) {
    const auto& s = dataset.samples.at(indices[static_cast<std::size_t>(i)]);
    b.images.vec().segment(i * plane, plane) = augment_crop(s.image, target, crop_rng).vec();
    b.codes[i] = static_cast<float>(s.pose_code);
    b.identities.push_back(s.identity);
    b.yaw_degrees.push_back(s.yaw_degrees);
  }
  return b;
}

}  // namespace dedgan
