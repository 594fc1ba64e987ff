#pragma once

#include <cstdint>
#include <vector>

#include "beamsel/linalg.hpp"

namespace beamsel {

struct SystemDims {
  int n_t = 16;    // transmit antennas
  int n_r = 8;     // receive antennas
  int n_rs = 4;    // selected receive antennas
  int n_s = 1;     // data streams
  int n_rf_t = 2;  // transmit RF chains
  int n_rf_r = 2;  // receive RF chains
  double rho = 1.0;       // average received power, linear
  double sigma_n2 = 1.0;  // noise variance, linear

  void validate() const;

  // Label vector length for these dims.
  int label_length() const {
    return n_t * n_rf_t + n_rs * n_rf_r + 2 * n_s * (n_rf_t + n_rf_r);
  }
};

struct UnconstrainedBeamformers {
  CMat f_opt;  // n_t x n_s, orthonormal columns
  CMat w_opt;  // n_rs x n_s
};

struct HybridBeamformers {
  CMat f_rf;  // n_t x n_rf_t, entries of modulus 1/sqrt(n_t)
  CMat f_bb;  // n_rf_t x n_s
  CMat w_rf;  // n_rs x n_rf_r, entries of modulus 1/sqrt(n_rs)
  CMat w_bb;  // n_rf_r x n_s

  CMat precoder() const { return f_rf * f_bb; }
  CMat combiner() const { return w_rf * w_bb; }
};

struct LineSearchParams {
  double shrink = 0.5;
  double sufficient_decrease = 1e-4;
};

struct MoSettings {
  int max_alternations = 50;
  int max_manifold_iters = 100;
  double rel_obj_tol = 1e-6;
  LineSearchParams line_search;
  int restarts = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

// SVD-based precoder (first n_s right singular vectors, phase-normalized so
// each column's largest-magnitude entry is real-positive) and the MMSE
// combiner built from it. Throws RankDeficient when the n_s-th singular
// value is below 1e-10 times the largest.
UnconstrainedBeamformers unconstrained_beamformers(const CMat& h_sub,
                                                   const SystemDims& dims);

// Rate of the effective channel through precoder f and combiner w:
// log2 |I + rho/(n_s sigma^2) (w^H w)^{-1} (w^H H f)(w^H H f)^H|.
double rate_for(const CMat& h_sub, const CMat& f, const CMat& w,
                const SystemDims& dims);

double spectral_efficiency(const CMat& h_sub, const HybridBeamformers& bf,
                           const SystemDims& dims);

// Rate achieved by the unconstrained beamformers themselves.
double rate_with_unconstrained(const CMat& h_sub, const SystemDims& dims);

struct PrecoderDesign {
  CMat f_rf;
  CMat f_bb;
  std::vector<double> objective_trace;  // one entry per alternation
};

// Alternating least squares on F_BB and Riemannian gradient descent on F_RF
// over the per-entry circle of radius 1/sqrt(n_t), minimizing
// ||F_opt - F_RF F_BB||_F^2. F_BB is rescaled at the end so that
// ||F_RF F_BB||_F^2 = n_s.
PrecoderDesign design_precoder(const CMat& f_opt, const SystemDims& dims,
                               const MoSettings& settings);

struct CombinerDesign {
  CMat w_rf;
  CMat w_bb;
  std::vector<double> objective_trace;
};

// Same alternating scheme for the combiner, with W_BB refreshed by the
// closed form (W_RF^H L W_RF)^{-1} W_RF^H L W_opt where L is the covariance
// of the selected-array output under the designed precoder.
CombinerDesign design_combiner(const CMat& w_opt, const CMat& h_sub,
                               const CMat& f_rf, const CMat& f_bb,
                               const SystemDims& dims,
                               const MoSettings& settings);

// Convenience: SVD/MMSE targets, precoder design, then combiner design.
HybridBeamformers design_hybrid(const CMat& h_sub, const SystemDims& dims,
                                const MoSettings& settings);

struct GammaMetrics {
  double gamma_f = 0.0;
  double gamma_w = 0.0;
};

// Normalized Frobenius distances between unconstrained and hybrid
// beamformers: ||F_opt - F_RF F_BB||_F / (n_t n_s) and the combiner analogue.
GammaMetrics gamma_metrics(const CMat& f_opt, const CMat& w_opt,
                           const HybridBeamformers& bf, const SystemDims& dims);

// Riemannian gradient of ||target - x_mat * coef||_F^2 with respect to the
// analog factor x_mat, on the product of per-entry circles. Exposed for the
// finite-difference gradient check.
CMat riemannian_gradient(const CMat& target, const CMat& x_mat,
                         const CMat& coef);

// Random analog beamformer with per-entry modulus `radius`.
CMat random_phase_matrix(int rows, int cols, double radius, std::uint64_t seed);

}  // namespace beamsel
