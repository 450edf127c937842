#pragma once

#include <filesystem>
#include <vector>

#include <Eigen/Dense>

namespace dedgan {

/// Five (x, y) points in image pixels: left eye, right eye, nose tip, left
/// mouth corner, right mouth corner. Row-major, so the flat view is
/// (x1, y1, ..., x5, y5).
using Landmarks = Eigen::Matrix<double, 5, 2, Eigen::RowMajor>;
using ShapeVector = Eigen::Matrix<double, 10, 1>;

inline constexpr int kNoseX = 4;  // flat index of the nose-tip x-coordinate

ShapeVector flatten(const Landmarks& s);
Landmarks unflatten(const ShapeVector& v);

/// Throws IngestionError unless every coordinate is finite.
void validate_landmarks(const Landmarks& s);

/// Statistical shape model s = s0 + sum_i c_i s_i over Procrustes-aligned
/// landmark shapes.
struct ShapeModel {
  ShapeVector mean = ShapeVector::Zero();  // s0: centred, unit norm
  Eigen::Matrix<double, 10, Eigen::Dynamic> basis;  // s1..sn as columns
  Eigen::VectorXd eigenvalues;                       // non-increasing
  /// Converts aligned-frame units to reported codes: mean centroid size of
  /// the training shapes rescaled to a 100-pixel frame.
  double code_scale = 1.0;

  int components() const { return static_cast<int>(basis.cols()); }

  bool operator==(const ShapeModel& o) const {
    return mean == o.mean && basis == o.basis && eigenvalues == o.eigenvalues && code_scale == o.code_scale;
  }
};

struct ShapeFitOptions {
  /// Image width the landmarks were measured in.
  double frame_width = 100.0;
  int max_iterations = 1000;
  double tolerance = 1e-15;
};

/// Generalized Procrustes alignment in tangent space, then PCA restricted to
/// the six-dimensional complement of the similarity directions.
ShapeModel fit(const std::vector<Landmarks>& shapes, const ShapeFitOptions& options = {});

/// Centre, unit-scale, rotate onto s0 and project into the tangent plane
/// <x, s0> = 1. Throws FitError for a zero-scale shape.
ShapeVector align(const ShapeModel& model, const Landmarks& shape);

/// All coefficients in code units.
Eigen::VectorXd project(const ShapeModel& model, const Landmarks& shape);

/// c1, the scalar pose code.
double pose_code(const ShapeModel& model, const Landmarks& shape);

/// s0 + sum_i c_i s_i in the aligned frame. Throws DimensionError for more
/// than n coefficients.
Landmarks reconstruct(const ShapeModel& model, const Eigen::VectorXd& coefficients);

void save_shape_model(const ShapeModel& model, const std::filesystem::path& path);
ShapeModel load_shape_model(const std::filesystem::path& path);

}  // namespace dedgan
