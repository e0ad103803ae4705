#pragma once

#include <epirefine/diffcore/tensor.hpp>
#include <epirefine/epigeo/camera.hpp>

namespace epirefine::epigeo {

// SE(3) exponential map. xi = (omega, v): rotation part first.
Pose se3_exp(const Eigen::Matrix<double, 6, 1>& xi);

// Rotation by angle (radians) about a (not necessarily unit) axis.
Mat3 axis_angle(const Vec3& axis, double angle_rad);

struct PoseTensors {
  diffcore::Tensor rot;    // {3,3}
  diffcore::Tensor trans;  // {3,1}
};

// Differentiable SE(3) exponential on the tape. xi is {6} or {6,1}.
// Near theta = 0 the trig coefficients are frozen at their Taylor values,
// which keeps values and first-order gradients of R and t correct.
PoseTensors se3_exp_tensors(diffcore::Tape& tape, const diffcore::Tensor& xi);

// exp(xi) composed with a constant base pose: R = R_xi * base.R,
// t = R_xi * base.t + t_xi.
PoseTensors perturbed_pose_tensors(diffcore::Tape& tape, const diffcore::Tensor& xi,
                                   const Pose& base);

Pose pose_from_tensors(const PoseTensors& pt);

}  // namespace epirefine::epigeo
