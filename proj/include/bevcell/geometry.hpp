#pragma once

#include "bevcell/point_cloud.hpp"
#include "bevcell/types.hpp"

namespace bevcell::geom {

/// SE(3) pose or relative transform: p -> R * p + t.
struct RigidTransform {
    Mat3 R = Mat3::Identity();
    Vec3 t = Vec3::Zero();

    static constexpr Scalar kOrthoTol = 1e-6;

    Vec3 apply(const Vec3& p) const { return R * p + t; }
    RigidTransform inverse() const;
    Mat4 matrix() const;
    static RigidTransform from_matrix(const Mat4& m);

    bool is_valid() const;
    /// Throws DataError when the rotation part is not orthonormal with
    /// positive unit determinant (tolerance kOrthoTol).
    void validate(const char* context = "RigidTransform") const;
};

/// 2D affine map q -> A * q + b, the planar truncation of an SE(3)
/// transform. Kept in metric units; grid-unit conversion is the warp's job.
struct Affine2D {
    Mat2 A = Mat2::Identity();
    Vec2 b = Vec2::Zero();

    Vec2 apply(const Vec2& q) const { return A * q + b; }
};

/// T = pose_a^-1 * pose_b: maps coordinates in frame b into frame a.
RigidTransform relative_transform(const RigidTransform& pose_a,
                                  const RigidTransform& pose_b);

/// Apply rel to every point; intensity and point order preserved.
PointCloud register_3d(const PointCloud& cloud, const RigidTransform& rel);

/// Drop the z row and column: A = upper-left 2x2 of R, b = (t1, t2).
/// Applied verbatim even when R tilts out of plane; approximation quality
/// is the caller's concern.
Affine2D affine2d_from_se3(const RigidTransform& rel);

/// Inverse affine; throws SingularityError when |det A| <= 1e-9.
Affine2D affine2d_invert(const Affine2D& a);

}  // namespace bevcell::geom
