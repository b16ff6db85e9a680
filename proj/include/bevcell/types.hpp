#pragma once

#include <Eigen/Core>
#include <Eigen/Dense>

namespace bevcell {

// f64 throughout: this engine exists for verification, not throughput.
using Scalar = double;

// Row-major so flat storage matches the on-disk and tape conventions.
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using Index = Eigen::Index;

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

}  // namespace bevcell
