#include "dedgan/shapemodel.hpp"

#include <cmath>
#include <string>

#include "dedgan/archive.hpp"
#include "dedgan/errors.hpp"

namespace dedgan {

namespace {

using Points = Eigen::Matrix<double, 5, 2, Eigen::RowMajor>;

Points as_points(const ShapeVector& v) { return Eigen::Map<const Points>(v.data()); }
ShapeVector as_vector(const Points& p) { return Eigen::Map<const ShapeVector>(p.data()); }

ShapeVector normalized(const Landmarks& s) {
  Points p = s;
  p.rowwise() -= p.colwise().mean();
  const double norm = p.norm();
  if (!(norm > 1e-12)) throw FitError("shape alignment: landmark set has zero scale");
  return as_vector(p / norm);
}

Points rotated(const Points& p, double theta) {
  const double c = std::cos(theta), s = std::sin(theta);
  Points out;
  out.col(0) = c * p.col(0) - s * p.col(1);
  out.col(1) = s * p.col(0) + c * p.col(1);
  return out;
}

/// Rotation (no reflection) of x maximizing <R x, r>.
ShapeVector rotate_onto(const ShapeVector& x, const ShapeVector& r) {
  const Points px = as_points(x), pr = as_points(r);
  const double a = (px.array() * pr.array()).sum();
  const double b = (px.col(0).array() * pr.col(1).array() - px.col(1).array() * pr.col(0).array()).sum();
  return as_vector(rotated(px, std::atan2(b, a)));
}

ShapeVector tangent(const ShapeVector& x, const ShapeVector& r) {
  const double d = x.dot(r);
  if (!(d > 1e-12)) throw FitError("shape alignment: shape is orthogonal to the reference");
  return x / d;
}

void fix_sign(Eigen::Ref<Eigen::VectorXd> v, int preferred) {
  Eigen::Index arg = preferred;
  if (preferred < 0 || std::abs(v[preferred]) < 1e-9) v.cwiseAbs().maxCoeff(&arg);
  if (v[arg] < 0) v = -v;
}

}  // namespace

ShapeVector flatten(const Landmarks& s) { return as_vector(s); }
Landmarks unflatten(const ShapeVector& v) { return as_points(v); }

void validate_landmarks(const Landmarks& s) {
  if (!s.allFinite()) throw IngestionError("landmarks: non-finite coordinate");
}

ShapeModel fit(const std::vector<Landmarks>& shapes, const ShapeFitOptions& options) {
  if (shapes.size() < 11)
    throw FitError("shape model: need at least 11 shapes, got " + std::to_string(shapes.size()));
  for (const auto& s : shapes)
    if (!s.allFinite()) throw FitError("shape model: non-finite landmark coordinate");
  bool identical = true;
  for (const auto& s : shapes) identical = identical && s == shapes.front();
  if (identical) throw FitError("shape model: zero covariance (all shapes identical)");
  if (!(options.frame_width > 0)) throw FitError("shape model: frame width must be positive");

  std::vector<ShapeVector> unit;
  unit.reserve(shapes.size());
  for (const auto& s : shapes) unit.push_back(normalized(s));

  // Initial reference: first shape with the eye line horizontal.
  const Points first = as_points(unit.front());
  const Eigen::RowVector2d eye = first.row(1) - first.row(0);
  ShapeVector ref = as_vector(rotated(first, -std::atan2(eye.y(), eye.x())));

  const double n = static_cast<double>(unit.size());
  std::vector<ShapeVector> aligned(unit.size());
  auto align_all = [&](const ShapeVector& r) {
    ShapeVector m = ShapeVector::Zero();
    for (std::size_t i = 0; i < unit.size(); ++i) {
      aligned[i] = tangent(rotate_onto(unit[i], r), r);
      m += aligned[i];
    }
    return ShapeVector(m / n);
  };
  for (int it = 0; it < options.max_iterations; ++it) {
    ShapeVector m = align_all(ref);
    ShapeVector next = rotate_onto(m / m.norm(), ref);
    const double change = (next - ref).norm();
    ref = next;
    if (change < options.tolerance) break;
  }
  align_all(ref);

  ShapeModel model;
  model.mean = ref;

  // Similarity directions at s0: the shape itself, its 90-degree rotation and
  // the two translations. PCA runs on their orthogonal complement.
  Eigen::Matrix<double, 10, 4> sim;
  const Points p0 = as_points(ref);
  Points perp;
  perp.col(0) = -p0.col(1);
  perp.col(1) = p0.col(0);
  sim.col(0) = ref;
  sim.col(1) = as_vector(perp);
  for (int k = 0; k < 5; ++k) {
    sim.col(2).segment<2>(2 * k) << 1.0, 0.0;
    sim.col(3).segment<2>(2 * k) << 0.0, 1.0;
  }
  Eigen::HouseholderQR<Eigen::Matrix<double, 10, 4>> qr(sim);
  const Eigen::Matrix<double, 10, 10> q = qr.householderQ();
  const Eigen::Matrix<double, 10, 6> comp = q.rightCols<6>();

  Eigen::MatrixXd resid(static_cast<Eigen::Index>(aligned.size()), 10);
  for (std::size_t i = 0; i < aligned.size(); ++i) resid.row(static_cast<Eigen::Index>(i)) = (aligned[i] - ref).transpose();
  const Eigen::MatrixXd cov = resid.transpose() * resid / (n - 1.0);
  const Eigen::Matrix<double, 6, 6> reduced = comp.transpose() * cov * comp;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 6, 6>> eig(reduced);
  if (eig.info() != Eigen::Success) throw FitError("shape model: eigen-decomposition failed");

  model.basis.resize(10, 6);
  model.eigenvalues.resize(6);
  for (int k = 0; k < 6; ++k) {
    model.eigenvalues[k] = std::max(0.0, eig.eigenvalues()[5 - k]);
    model.basis.col(k) = comp * eig.eigenvectors().col(5 - k);
  }
  for (int k = 0; k < 6; ++k) {
    Eigen::VectorXd col = model.basis.col(k);
    fix_sign(col, k == 0 ? kNoseX : -1);
    model.basis.col(k) = col;
  }

  double size = 0;
  for (const auto& s : shapes) {
    Points p = s;
    p.rowwise() -= p.colwise().mean();
    size += p.norm();
  }
  model.code_scale = size / n * 100.0 / options.frame_width;
  return model;
}

ShapeVector align(const ShapeModel& model, const Landmarks& shape) {
  if (!shape.allFinite()) throw FitError("shape alignment: non-finite landmark coordinate");
  return tangent(rotate_onto(normalized(shape), model.mean), model.mean);
}

Eigen::VectorXd project(const ShapeModel& model, const Landmarks& shape) {
  return model.code_scale * (model.basis.transpose() * (align(model, shape) - model.mean));
}

double pose_code(const ShapeModel& model, const Landmarks& shape) {
  if (model.components() < 1) throw FitError("pose_code: model is not fitted");
  return model.code_scale * model.basis.col(0).dot(align(model, shape) - model.mean);
}

Landmarks reconstruct(const ShapeModel& model, const Eigen::VectorXd& coefficients) {
  if (coefficients.size() > model.components())
    throw DimensionError("reconstruct: " + std::to_string(coefficients.size()) + " coefficients but the model has " +
                         std::to_string(model.components()) + " components");
  ShapeVector v = model.mean;
  if (coefficients.size() > 0) v += model.basis.leftCols(coefficients.size()) * (coefficients / model.code_scale);
  return unflatten(v);
}

void save_shape_model(const ShapeModel& model, const std::filesystem::path& path) {
  Archive a;
  a.put_u64("shape/components", {static_cast<std::uint64_t>(model.components())});
  a.put_f64("shape/mean", std::vector<double>(model.mean.data(), model.mean.data() + 10));
  a.put_f64("shape/basis", std::vector<double>(model.basis.data(), model.basis.data() + model.basis.size()));
  a.put_f64("shape/eigenvalues",
            std::vector<double>(model.eigenvalues.data(), model.eigenvalues.data() + model.eigenvalues.size()));
  a.put_f64("shape/code_scale", {model.code_scale});
  a.save(path);
}

ShapeModel load_shape_model(const std::filesystem::path& path) {
  Archive a = Archive::load(path);
  ShapeModel m;
  const auto k = static_cast<Eigen::Index>(a.get_u64_scalar("shape/components"));
  auto mean = a.get_f64("shape/mean");
  auto basis = a.get_f64("shape/basis");
  auto ev = a.get_f64("shape/eigenvalues");
  if (mean.size() != 10 || basis.size() != static_cast<std::size_t>(10 * k) || ev.size() != static_cast<std::size_t>(k))
    throw CheckpointError(path.string() + ": inconsistent shape model dimensions");
  m.mean = Eigen::Map<ShapeVector>(mean.data());
  m.basis = Eigen::Map<Eigen::Matrix<double, 10, Eigen::Dynamic>>(basis.data(), 10, k);
  m.eigenvalues = Eigen::Map<Eigen::VectorXd>(ev.data(), k);
  m.code_scale = a.get_f64_scalar("shape/code_scale");
  return m;
}

}  // namespace dedgan
