#include "beamsel/beamformer.hpp"

#include <cmath>
#include <limits>

#include "beamsel/errors.hpp"
#include "beamsel/rng.hpp"

namespace beamsel {

namespace {

constexpr double kCondLimit = 1e12;
constexpr double kRankTol = 1e-10;

double factor_objective(const CMat& target, const CMat& x, const CMat& coef) {
  return (target - x * coef).squaredNorm();
}

CMat retract_to_circles(CMat x, double radius) {
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double m = std::abs(x(i, j));
      x(i, j) = m > 0.0 ? Complex(radius / m) * x(i, j) : Complex(radius, 0.0);
    }
  }
  return x;
}

// Riemannian gradient descent with backtracking line search on the product
// of per-entry circles of the given radius; `coef` stays fixed. Returns the
// final objective, updating x in place.
double rgd_minimize(const CMat& target, CMat& x, const CMat& coef,
                    double radius, const MoSettings& settings) {
  double obj = factor_objective(target, x, coef);
  const double lipschitz = 2.0 * coef.squaredNorm();
  double step = lipschitz > 0.0 ? 1.0 / lipschitz : 1.0;

  for (int iter = 0; iter < settings.max_manifold_iters; ++iter) {
    const CMat grad = riemannian_gradient(target, x, coef);
    const double gn2 = grad.squaredNorm();
    if (gn2 < 1e-18) break;

    step *= 2.0;  // tentative growth, backtracking trims it
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      const CMat cand = retract_to_circles(x - step * grad, radius);
      const double cand_obj = factor_objective(target, cand, coef);
      if (cand_obj <=
          obj - settings.line_search.sufficient_decrease * step * gn2) {
        const double prev = obj;
        x = cand;
        obj = cand_obj;
        accepted = true;
        if (prev - obj <= settings.rel_obj_tol * std::max(prev, 1e-300))
          iter = settings.max_manifold_iters;  // converged
        break;
      }
      step *= settings.line_search.shrink;
    }
    if (!accepted) break;
    if (!std::isfinite(obj)) throw NonFiniteObjective("manifold objective");
  }
  return obj;
}

}  // namespace

void SystemDims::validate() const {
  if (n_t <= 0 || n_r <= 0 || n_rs <= 0 || n_s <= 0 || n_rf_t <= 0 ||
      n_rf_r <= 0)
    throw ConfigError("system dimensions must be positive");
  if (!(n_s <= n_rf_t && n_rf_t <= n_t))
    throw ConfigError("need n_s <= n_rf_t <= n_t");
  if (!(n_s <= n_rf_r && n_rf_r <= n_rs && n_rs <= n_r))
    throw ConfigError("need n_s <= n_rf_r <= n_rs <= n_r");
  if (!(rho > 0.0) || !(sigma_n2 > 0.0))
    throw ConfigError("rho and sigma_n2 must be positive");
}

void MoSettings::validate() const {
  if (max_alternations <= 0 || max_manifold_iters <= 0 || restarts <= 0)
    throw ConfigError("MO iteration counts must be positive");
  if (!(rel_obj_tol > 0.0)) throw ConfigError("rel_obj_tol must be positive");
  if (!(line_search.shrink > 0.0 && line_search.shrink < 1.0))
    throw ConfigError("line search shrink must be in (0, 1)");
  if (!(line_search.sufficient_decrease > 0.0))
    throw ConfigError("sufficient decrease must be positive");
}

UnconstrainedBeamformers unconstrained_beamformers(const CMat& h_sub,
                                                   const SystemDims& dims) {
  dims.validate();
  if (h_sub.rows() != dims.n_rs || h_sub.cols() != dims.n_t)
    throw ShapeMismatch("h_sub must be n_rs x n_t");

  Eigen::JacobiSVD<CMat> svd(h_sub, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  if (sv.size() < dims.n_s || sv(dims.n_s - 1) <= kRankTol * sv(0))
    throw RankDeficient("channel rank below n_s");

  CMat f_opt = svd.matrixV().leftCols(dims.n_s);
  // Phase-normalize each column so its largest-magnitude entry is
  // real-positive; makes the SVD output deterministic.
  for (Eigen::Index c = 0; c < f_opt.cols(); ++c) {
    Eigen::Index imax = 0;
    f_opt.col(c).cwiseAbs().maxCoeff(&imax);
    const Complex v = f_opt(imax, c);
    if (std::abs(v) > 0.0) f_opt.col(c) *= std::conj(v) / std::abs(v);
  }

  const CMat hf = h_sub * f_opt;  // n_rs x n_s
  const CMat gram = hf.adjoint() * hf +
                    (dims.n_s * dims.sigma_n2 / dims.rho) *
                        CMat::Identity(dims.n_s, dims.n_s);
  const CMat w_opt =
      ((1.0 / dims.rho) * gram.inverse() * hf.adjoint()).adjoint();

  return {std::move(f_opt), w_opt};
}

double rate_for(const CMat& h_sub, const CMat& f, const CMat& w,
                const SystemDims& dims) {
  if (f.rows() != h_sub.cols() || w.rows() != h_sub.rows())
    throw ShapeMismatch("beamformer rows must match channel dims");
  if (f.cols() != dims.n_s || w.cols() != dims.n_s)
    throw ShapeMismatch("beamformer columns must equal n_s");

  const CMat gram = w.adjoint() * w;  // Lambda_n / sigma_n2
  if (condition_number(gram) > kCondLimit)
    throw SingularCombiner("combiner Gram matrix is numerically singular");

  // log2 |I + c gram^{-1} t t^H| via the Hermitian form L^{-1} t t^H L^{-H}.
  const Eigen::LLT<CMat> llt(gram);
  const CMat t = w.adjoint() * h_sub * f;  // n_s x n_s
  const CMat x = llt.matrixL().solve(t);
  Eigen::SelfAdjointEigenSolver<CMat> eig(x * x.adjoint());
  const double c = dims.rho / (dims.n_s * dims.sigma_n2);
  double rate = 0.0;
  for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i)
    rate += std::log2(1.0 + c * std::max(0.0, eig.eigenvalues()(i)));
  return rate;
}

double spectral_efficiency(const CMat& h_sub, const HybridBeamformers& bf,
                           const SystemDims& dims) {
  return rate_for(h_sub, bf.precoder(), bf.combiner(), dims);
}

double rate_with_unconstrained(const CMat& h_sub, const SystemDims& dims) {
  const auto ub = unconstrained_beamformers(h_sub, dims);
  return rate_for(h_sub, ub.f_opt, ub.w_opt, dims);
}

CMat riemannian_gradient(const CMat& target, const CMat& x_mat,
                         const CMat& coef) {
  const CMat egrad = -2.0 * (target - x_mat * coef) * coef.adjoint();
  CMat rgrad(x_mat.rows(), x_mat.cols());
  for (Eigen::Index i = 0; i < x_mat.rows(); ++i) {
    for (Eigen::Index j = 0; j < x_mat.cols(); ++j) {
      const double inner =
          (egrad(i, j) * std::conj(x_mat(i, j))).real() / std::norm(x_mat(i, j));
      rgrad(i, j) = egrad(i, j) - inner * x_mat(i, j);
    }
  }
  return rgrad;
}

CMat random_phase_matrix(int rows, int cols, double radius,
                         std::uint64_t seed) {
  Rng rng(seed);
  CMat m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      const double phase = rng.uniform(0.0, 2.0 * kPi);
      m(i, j) = radius * Complex(std::cos(phase), std::sin(phase));
    }
  }
  return m;
}

PrecoderDesign design_precoder(const CMat& f_opt, const SystemDims& dims,
                               const MoSettings& settings) {
  dims.validate();
  settings.validate();
  if (f_opt.rows() != dims.n_t || f_opt.cols() != dims.n_s)
    throw ShapeMismatch("f_opt must be n_t x n_s");
  const double radius = 1.0 / std::sqrt(static_cast<double>(dims.n_t));

  PrecoderDesign best;
  double best_obj = std::numeric_limits<double>::infinity();
  for (int r = 0; r < settings.restarts; ++r) {
    CMat f_rf = random_phase_matrix(dims.n_t, dims.n_rf_t, radius,
                                    derive_seed(settings.seed, r));
    CMat f_bb;
    std::vector<double> trace;
    double prev = std::numeric_limits<double>::infinity();
    for (int alt = 0; alt < settings.max_alternations; ++alt) {
      f_bb = pseudo_inverse(f_rf) * f_opt;  // exact least-squares step
      const double obj = rgd_minimize(f_opt, f_rf, f_bb, radius, settings);
      if (!std::isfinite(obj)) throw NonFiniteObjective("precoder objective");
      trace.push_back(obj);
      if (std::isfinite(prev) &&
          prev - obj <= settings.rel_obj_tol * std::max(prev, 1e-300))
        break;
      prev = obj;
    }
    if (trace.back() < best_obj) {
      best_obj = trace.back();
      best.f_rf = f_rf;
      best.f_bb = pseudo_inverse(f_rf) * f_opt;
      best.objective_trace = std::move(trace);
    }
  }

  // Restore the transmit power constraint ||F_RF F_BB||_F^2 = n_s.
  const double pn = (best.f_rf * best.f_bb).norm();
  if (pn <= 0.0) throw ZeroProduct("F_RF F_BB vanishes");
  best.f_bb *= std::sqrt(static_cast<double>(dims.n_s)) / pn;
  return best;
}

CombinerDesign design_combiner(const CMat& w_opt, const CMat& h_sub,
                               const CMat& f_rf, const CMat& f_bb,
                               const SystemDims& dims,
                               const MoSettings& settings) {
  dims.validate();
  settings.validate();
  if (w_opt.rows() != dims.n_rs || w_opt.cols() != dims.n_s)
    throw ShapeMismatch("w_opt must be n_rs x n_s");
  if (h_sub.rows() != dims.n_rs || h_sub.cols() != dims.n_t)
    throw ShapeMismatch("h_sub must be n_rs x n_t");

  const double radius = 1.0 / std::sqrt(static_cast<double>(dims.n_rs));
  const CMat hf = h_sub * f_rf * f_bb;  // n_rs x n_s
  const CMat lambda = (dims.rho / dims.n_s) * hf * hf.adjoint() +
                      dims.sigma_n2 * CMat::Identity(dims.n_rs, dims.n_rs);

  CombinerDesign best;
  double best_obj = std::numeric_limits<double>::infinity();
  for (int r = 0; r < settings.restarts; ++r) {
    CMat w_rf = random_phase_matrix(dims.n_rs, dims.n_rf_r, radius,
                                    derive_seed(settings.seed, 1000 + r));
    CMat w_bb;
    std::vector<double> trace;
    double prev = std::numeric_limits<double>::infinity();
    for (int alt = 0; alt < settings.max_alternations; ++alt) {
      const CMat gram = w_rf.adjoint() * lambda * w_rf;
      if (condition_number(gram) > kCondLimit)
        throw SingularGram("W_RF^H Lambda W_RF is numerically singular");
      const CMat w_bb_cand = gram.llt().solve(w_rf.adjoint() * lambda * w_opt);
      // The closed form minimizes the Lambda-weighted residual; keep the
      // previous W_BB when it would increase the Euclidean objective.
      if (alt == 0 ||
          factor_objective(w_opt, w_rf, w_bb_cand) <= prev)
        w_bb = w_bb_cand;

      const double obj = rgd_minimize(w_opt, w_rf, w_bb, radius, settings);
      if (!std::isfinite(obj)) throw NonFiniteObjective("combiner objective");
      trace.push_back(obj);
      if (std::isfinite(prev) &&
          prev - obj <= settings.rel_obj_tol * std::max(prev, 1e-300))
        break;
      prev = obj;
    }
    if (trace.back() < best_obj) {
      best_obj = trace.back();
      best.w_rf = w_rf;
      best.w_bb = w_bb;
      best.objective_trace = std::move(trace);
    }
  }
  return best;
}

HybridBeamformers design_hybrid(const CMat& h_sub, const SystemDims& dims,
                                const MoSettings& settings) {
  const auto ub = unconstrained_beamformers(h_sub, dims);
  auto pre = design_precoder(ub.f_opt, dims, settings);
  auto comb =
      design_combiner(ub.w_opt, h_sub, pre.f_rf, pre.f_bb, dims, settings);
  return {std::move(pre.f_rf), std::move(pre.f_bb), std::move(comb.w_rf),
          std::move(comb.w_bb)};
}

GammaMetrics gamma_metrics(const CMat& f_opt, const CMat& w_opt,
                           const HybridBeamformers& bf,
                           const SystemDims& dims) {
  GammaMetrics g;
  g.gamma_f = (f_opt - bf.precoder()).norm() /
              (static_cast<double>(dims.n_t) * dims.n_s);
  g.gamma_w = (w_opt - bf.combiner()).norm() /
              (static_cast<double>(dims.n_rs) * dims.n_s);
  return g;
}

}  // namespace beamsel
