#pragma once

#include <Eigen/Dense>
#include <complex>

namespace beamsel {

using Complex = std::complex<double>;
using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;
using RMat = Eigen::MatrixXd;
using RVec = Eigen::VectorXd;

inline constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double deg) { return deg * kPi / 180.0; }

// Ratio of the largest to the smallest singular value (inf when singular).
inline double condition_number(const CMat& a) {
  Eigen::JacobiSVD<CMat> svd(a);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0) return 0.0;
  const double smin = sv(sv.size() - 1);
  if (smin <= 0.0) return std::numeric_limits<double>::infinity();
  return sv(0) / smin;
}

inline CMat pseudo_inverse(const CMat& a) {
  return a.completeOrthogonalDecomposition().pseudoInverse();
}

}  // namespace beamsel
