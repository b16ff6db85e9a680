#include "bevcell/geometry.hpp"

#include <cmath>
#include <sstream>

#include "bevcell/errors.hpp"

namespace bevcell::geom {

RigidTransform RigidTransform::inverse() const {
    RigidTransform out;
    out.R = R.transpose();
    out.t = -(R.transpose() * t);
    return out;
}

Mat4 RigidTransform::matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = R;
    m.topRightCorner<3, 1>() = t;
    return m;
}

RigidTransform RigidTransform::from_matrix(const Mat4& m) {
    RigidTransform out;
    out.R = m.topLeftCorner<3, 3>();
    out.t = m.topRightCorner<3, 1>();
    return out;
}

bool RigidTransform::is_valid() const {
    if (!R.allFinite() || !t.allFinite()) return false;
    const Mat3 err = R.transpose() * R - Mat3::Identity();
    if (err.cwiseAbs().maxCoeff() >= kOrthoTol) return false;
    return std::abs(R.determinant() - 1.0) < kOrthoTol;
}

void RigidTransform::validate(const char* context) const {
    if (!is_valid()) {
        std::ostringstream msg;
        msg << context << ": rotation part is not a proper rotation "
            << "(||R^T R - I||_inf = "
            << (R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff()
            << ", det = " << R.determinant() << ")";
        throw DataError(msg.str());
    }
}

RigidTransform relative_transform(const RigidTransform& pose_a,
                                  const RigidTransform& pose_b) {
    RigidTransform rel;
    rel.R = pose_a.R.transpose() * pose_b.R;
    rel.t = pose_a.R.transpose() * (pose_b.t - pose_a.t);
    return rel;
}

PointCloud register_3d(const PointCloud& cloud, const RigidTransform& rel) {
    PointCloud out = cloud;
    for (auto& p : out.points) {
        const Vec3 q = rel.apply(Vec3(p.x, p.y, p.z));
        p.x = q.x();
        p.y = q.y();
        p.z = q.z();
    }
    return out;
}

Affine2D affine2d_from_se3(const RigidTransform& rel) {
    Affine2D a;
    a.A << rel.R(0, 0), rel.R(0, 1), rel.R(1, 0), rel.R(1, 1);
    a.b = Vec2(rel.t.x(), rel.t.y());
    return a;
}

Affine2D affine2d_invert(const Affine2D& a) {
    const Scalar det = a.A(0, 0) * a.A(1, 1) - a.A(0, 1) * a.A(1, 0);
    if (std::abs(det) <= 1e-9) {
        std::ostringstream msg;
        msg << "affine2d_invert: |det| = " << std::abs(det) << " <= 1e-9";
        throw SingularityError(msg.str());
    }
    Affine2D inv;
    inv.A << a.A(1, 1) / det, -a.A(0, 1) / det, -a.A(1, 0) / det, a.A(0, 0) / det;
    inv.b = -(inv.A * a.b);
    return inv;
}

}  // namespace bevcell::geom
